use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codec::LatentBlock;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Variance schedule indexed by `t = 1..=T`; vectors are stored 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub posterior_var: Vec<f64>,
    /// Step of the base schedule each entry corresponds to (identity unless respaced).
    pub timesteps: Vec<usize>,
}

/// Schedule with the given cumulative `ᾱ` values, with `ᾱ_0 = 1`.
pub fn from_alpha_bar(kind: ScheduleKind, alpha_bar: Vec<f64>, timesteps: Vec<usize>) -> NoiseSchedule {
    let mut beta = Vec::with_capacity(alpha_bar.len());
    let mut posterior_var = Vec::with_capacity(alpha_bar.len());
    let mut prev = 1.0;
    for &ab in &alpha_bar {
        let b = 1.0 - ab / prev;
        beta.push(b);
        posterior_var.push(b * (1.0 - prev) / (1.0 - ab));
        prev = ab;
    }
    NoiseSchedule { kind, beta, alpha_bar, posterior_var, timesteps }
}

/// Builds a `t_diff`-step schedule with `ᾱ_t = ∏(1−β_s)`.
///
/// Linear spaces β evenly over `[beta_min, beta_max]`; cosine derives β from a
/// squared-cosine `ᾱ` curve and clips it to the same bounds.
pub fn make_schedule(t_diff: usize, kind: ScheduleKind, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if t_diff < 1 || !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::Config(format!(
            "schedule needs T >= 1 and 0 < beta_min <= beta_max < 1, got T={t_diff}, [{beta_min}, {beta_max}]"
        )));
    }
    let beta: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..t_diff)
            .map(|i| if t_diff == 1 { beta_min } else { beta_min + (beta_max - beta_min) * i as f64 / (t_diff - 1) as f64 })
            .collect(),
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |t: f64| ((t / t_diff as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            (1..=t_diff).map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).clamp(beta_min, beta_max)).collect()
        }
    };
    let mut alpha_bar = Vec::with_capacity(t_diff);
    let mut acc = 1.0;
    for b in &beta {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    let mut s = from_alpha_bar(kind, alpha_bar, (1..=t_diff).collect());
    s.beta = beta;
    Ok(s)
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::Step { step: t, max: self.len() });
        }
        Ok(())
    }

    /// `steps` evenly strided entries ending at the final step, with β and
    /// posterior variance recomputed from the retained `ᾱ`.
    pub fn respace(&self, steps: usize) -> Result<NoiseSchedule> {
        let n = self.len();
        if steps == 0 || steps > n {
            return Err(Error::Config(format!("cannot respace {n} steps to {steps}")));
        }
        let idx: Vec<usize> = (1..=steps).map(|i| (i * n).div_ceil(steps) - 1).collect();
        let alpha_bar = idx.iter().map(|&i| self.alpha_bar[i]).collect();
        let timesteps = idx.iter().map(|&i| self.timesteps[i]).collect();
        Ok(from_alpha_bar(self.kind, alpha_bar, timesteps))
    }
}

fn check_same(a: &[usize; 4], b: &[usize; 4]) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("latent shapes differ: {a:?} vs {b:?}")));
    }
    Ok(())
}

fn dims<F: Real>(z: &LatentBlock<F>) -> [usize; 4] {
    let (a, b, c, d) = z.shape();
    [a, b, c, d]
}

/// `√ᾱ_t·x0 + √(1−ᾱ_t)·eps`.
pub fn forward_sample<F: Real>(x0: &LatentBlock<F>, t: usize, eps: &LatentBlock<F>, s: &NoiseSchedule) -> Result<LatentBlock<F>> {
    s.check_step(t)?;
    check_same(&dims(x0), &dims(eps))?;
    let ab = s.alpha_bar[t - 1];
    let (a, b) = (F::lit(ab.sqrt()), F::lit((1.0 - ab).sqrt()));
    let values = x0.as_slice().iter().zip(eps.as_slice()).map(|(&x, &e)| a * x + b * e).collect();
    Ok(x0.with_data(values))
}

/// One ancestral step `x_t → x_{t−1}`; no noise is added at `t = 1`.
pub fn reverse_step<F: Real, R: Rng + ?Sized>(
    x_t: &LatentBlock<F>,
    t: usize,
    eps_hat: &LatentBlock<F>,
    s: &NoiseSchedule,
    rng: &mut R,
) -> Result<LatentBlock<F>> {
    s.check_step(t)?;
    check_same(&dims(x_t), &dims(eps_hat))?;
    if eps_hat.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: t, what: "predicted noise".into() });
    }
    let beta = s.beta[t - 1];
    let ab = s.alpha_bar[t - 1];
    let inv_sqrt_alpha = 1.0 / (1.0 - beta).sqrt();
    let coef = F::lit(beta / (1.0 - ab).sqrt());
    let sigma = s.posterior_var[t - 1].max(0.0).sqrt();
    let values = x_t
        .as_slice()
        .iter()
        .zip(eps_hat.as_slice())
        .map(|(&x, &e)| {
            let mu = F::lit(inv_sqrt_alpha) * (x - coef * e);
            if t > 1 {
                let xi: f64 = StandardNormal.sample(rng);
                mu + F::lit(sigma * xi)
            } else {
                mu
            }
        })
        .collect();
    Ok(x_t.with_data(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, ScheduleKind::Linear, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar, vec![0.5]);
        assert_eq!(s.posterior_var, vec![0.0]);
    }

    #[test]
    fn invalid_bounds_are_config_errors() {
        for (t, lo, hi) in [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.3, 0.2), (10, 1e-4, 1.0)] {
            assert!(matches!(make_schedule(t, ScheduleKind::Linear, lo, hi), Err(Error::Config(_))));
        }
    }

    #[test]
    fn cosine_schedule_is_valid() {
        let s = make_schedule(1000, ScheduleKind::Cosine, 1e-4, 0.999).unwrap();
        assert!(s.alpha_bar[0] > 0.99);
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        assert!(s.beta.iter().all(|&b| b > 0.0 && b < 1.0));
    }

    #[test]
    fn respacing_keeps_endpoint_and_recomputes_beta() {
        let base = make_schedule(1000, ScheduleKind::Linear, 1e-4, 0.02).unwrap();
        let r = base.respace(50).unwrap();
        assert_eq!(r.len(), 50);
        assert_eq!(*r.timesteps.last().unwrap(), 1000);
        assert_eq!(r.timesteps[0], 20);
        assert_eq!(r.alpha_bar[49], base.alpha_bar[999]);
        let mut acc = 1.0;
        for (b, ab) in r.beta.iter().zip(&r.alpha_bar) {
            acc *= 1.0 - b;
            assert!((acc - ab).abs() < 1e-12);
        }
        assert!(base.respace(0).is_err());
    }

    #[test]
    fn steps_outside_range_are_rejected() {
        let s = make_schedule(10, ScheduleKind::Linear, 1e-4, 0.02).unwrap();
        let z = LatentBlock::new(Array4::<f64>::zeros((1, 1, 1, 2)), 4).unwrap();
        assert!(matches!(forward_sample(&z, 0, &z, &s), Err(Error::Step { .. })));
        assert!(matches!(forward_sample(&z, 11, &z, &s), Err(Error::Step { .. })));
    }

    #[test]
    fn non_finite_prediction_aborts_with_step() {
        let s = make_schedule(10, ScheduleKind::Linear, 1e-4, 0.02).unwrap();
        let z = LatentBlock::new(Array4::<f64>::zeros((1, 1, 1, 2)), 4).unwrap();
        let bad = z.map(|_| f64::NAN);
        let mut rng = rand::rng();
        assert!(matches!(reverse_step(&z, 7, &bad, &s, &mut rng), Err(Error::NonFinite { step: 7, .. })));
    }
}
