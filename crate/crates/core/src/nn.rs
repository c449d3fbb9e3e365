//! Parameter storage, layers, and the optimizer used by every trainable model.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, Matrix, Var};
use crate::scalar::Real;

/// Named, ordered collection of parameter matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    names: Vec<String>,
    values: Vec<Matrix<F>>,
}

/// Index of a parameter inside [`Params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

impl<F: Real> Default for Params<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Params<F> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix<F>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<F> {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<F>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Matrix<F>> {
        self.values.iter_mut()
    }

    /// Replaces all values, checking names and shapes match.
    pub fn load(&mut self, entries: Vec<(String, Matrix<F>)>) -> crate::Result<()> {
        if entries.len() != self.values.len() {
            return Err(crate::Error::Checkpoint(format!("expected {} tensors, found {}", self.values.len(), entries.len())));
        }
        for (i, (name, m)) in entries.into_iter().enumerate() {
            if name != self.names[i] || (m.rows, m.cols) != (self.values[i].rows, self.values[i].cols) {
                return Err(crate::Error::Checkpoint(format!(
                    "tensor {i} mismatch: `{name}` {}x{} vs `{}` {}x{}",
                    m.rows, m.cols, self.names[i], self.values[i].rows, self.values[i].cols
                )));
            }
            self.values[i] = m;
        }
        Ok(())
    }

    /// Records every parameter as a tracked leaf of `g`.
    pub fn bind(&self, g: &mut Graph<F>) -> Bound {
        Bound { vars: self.values.iter().map(|m| g.param(m.clone())).collect() }
    }

    /// Records every parameter as an untracked constant (inference).
    pub fn bind_frozen(&self, g: &mut Graph<F>) -> Bound {
        Bound { vars: self.values.iter().map(|m| g.constant(m.clone())).collect() }
    }

    /// Flat gradient per parameter, zero where the loss does not reach.
    pub fn collect_grads(&self, bound: &Bound, grads: &Gradients<F>) -> Vec<Vec<F>> {
        self.values.iter().zip(&bound.vars).map(|(m, &v)| grads.get(v).map_or_else(|| vec![F::zero(); m.len()], <[F]>::to_vec)).collect()
    }
}

/// Parameters bound into one graph.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

pub fn normal_matrix<F: Real, R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Matrix<F> {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            F::lit(z * std)
        })
        .collect();
    Matrix::new(rows, cols, data)
}

/// Fully connected layer `y = x·W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    /// Fan-in scaled normal init, zero bias.
    pub fn new<F: Real, R: Rng + ?Sized>(p: &mut Params<F>, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let w = p.add(format!("{name}.w"), normal_matrix(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt(), rng));
        let b = p.add(format!("{name}.b"), Matrix::zeros(1, fan_out));
        Self { w, b }
    }

    pub fn zeros<F: Real>(p: &mut Params<F>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = p.add(format!("{name}.w"), Matrix::zeros(fan_in, fan_out));
        let b = p.add(format!("{name}.b"), Matrix::zeros(1, fan_out));
        Self { w, b }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, b: &Bound, x: Var) -> Var {
        let y = g.matmul(x, b.var(self.w));
        g.add_row(y, b.var(self.b))
    }
}

/// Row normalization with learned gain and bias.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<F: Real>(p: &mut Params<F>, name: &str, dim: usize) -> Self {
        let gain = p.add(format!("{name}.gain"), Matrix::new(1, dim, vec![F::one(); dim]));
        let bias = p.add(format!("{name}.bias"), Matrix::zeros(1, dim));
        Self { gain, bias }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, b: &Bound, x: Var) -> Var {
        let n = g.layer_norm(x, F::lit(1e-5));
        let n = g.mul_row(n, b.var(self.gain));
        g.add_row(n, b.var(self.bias))
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &Params<F>, lr: f64) -> Self {
        let zeros: Vec<Vec<F>> = params.values.iter().map(|m| vec![F::zero(); m.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment buffers, one per parameter.
    pub fn moments(&self) -> (&[Vec<F>], &[Vec<F>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Vec<F>>, v: Vec<Vec<F>>) -> crate::Result<()> {
        let fits = |b: &[Vec<F>]| b.len() == self.m.len() && b.iter().zip(&self.m).all(|(x, y)| x.len() == y.len());
        if !fits(&m) || !fits(&v) {
            return Err(crate::Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    pub fn update(&mut self, params: &mut Params<F>, grads: &[Vec<F>]) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (F::lit(self.beta1), F::lit(self.beta2));
        let c1 = F::lit(1.0 - self.beta1.powi(t));
        let c2 = F::lit(1.0 - self.beta2.powi(t));
        let lr = F::lit(self.lr);
        let eps = F::lit(self.eps);
        for (((value, g), m), v) in params.values.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (F::one() - b1) * g[i];
                v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                value.data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Sinusoidal embedding of a scalar position, `dim` values.
pub fn sinusoidal<F: Real>(pos: f64, dim: usize) -> Vec<F> {
    let half = dim / 2;
    let mut out = vec![F::zero(); dim];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half.max(1) as f64).exp();
        out[i] = F::lit((pos * freq).sin());
        out[half + i] = F::lit((pos * freq).cos());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Params::<f64>::new();
        let id = p.add("x", normal_matrix(1, 3, 1.0, &mut rng));
        let mut opt = Adam::new(&p, 0.05);
        for _ in 0..500 {
            let mut g = Graph::new();
            let b = p.bind(&mut g);
            let x = g.add_const(b.var(id), -2.0);
            let s = g.square(x);
            let l = g.sum(s);
            let grads = g.backward(l);
            let flat = p.collect_grads(&b, &grads);
            opt.update(&mut p, &flat);
        }
        for &v in &p.get(id).data {
            assert!((v - 2.0).abs() < 1e-2, "{v}");
        }
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let mut p = Params::<f32>::new();
        p.add("a", Matrix::zeros(2, 2));
        let err = p.load(vec![("a".into(), Matrix::zeros(1, 4))]);
        assert!(err.is_err());
    }
}
