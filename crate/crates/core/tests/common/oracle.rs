//! Direct scalar reference computations for the metrics.

use std::collections::VecDeque;

use ndarray::Array2;
use vrmatte::seq::AlphaSequence;

fn frames(a: &AlphaSequence<f64>) -> Vec<Array2<f64>> {
    (0..a.dims().0).map(|t| a.frame(t).to_owned()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pixel_mean(p: &AlphaSequence<f64>, g: &AlphaSequence<f64>, f: fn(f64) -> f64) -> f64 {
    let per: Vec<f64> = frames(p)
        .iter()
        .zip(frames(g))
        .map(|(a, b)| {
            let mut s = 0.0;
            for (x, y) in a.iter().zip(b.iter()) {
                s += f(x - y);
            }
            s / a.len() as f64
        })
        .collect();
    mean(&per)
}

pub fn mad(p: &AlphaSequence<f64>, g: &AlphaSequence<f64>) -> f64 {
    pixel_mean(p, g, f64::abs)
}

pub fn mse(p: &AlphaSequence<f64>, g: &AlphaSequence<f64>) -> f64 {
    pixel_mean(p, g, |d| d * d)
}

/// Gaussian-derivative magnitude by full 2-D convolution with clamped reads.
fn magnitude(f: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let half = (sigma * (-2.0 * (two_pi.sqrt() * sigma * 0.01).ln()).sqrt()).ceil() as i64;
    let gauss = |u: i64| (-((u * u) as f64) / (2.0 * sigma * sigma)).exp() / (sigma * two_pi.sqrt());
    let deriv = |u: i64| -(u as f64) / (sigma * sigma) * gauss(u);
    let (mut ng, mut nd) = (0.0, 0.0);
    for u in -half..=half {
        ng += gauss(u).powi(2);
        nd += deriv(u).powi(2);
    }
    let norm = (ng * nd).sqrt();
    let (h, w) = f.dim();
    let at = |y: i64, x: i64| f[[y.clamp(0, h as i64 - 1) as usize, x.clamp(0, w as i64 - 1) as usize]];
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (mut gx, mut gy) = (0.0, 0.0);
        for u in -half..=half {
            for v in -half..=half {
                let s = at(y as i64 - u, x as i64 - v);
                gx += gauss(u) * deriv(v) * s;
                gy += deriv(u) * gauss(v) * s;
            }
        }
        (gx * gx + gy * gy).sqrt() / norm
    })
}

pub fn grad(p: &AlphaSequence<f64>, g: &AlphaSequence<f64>, sigma: f64) -> f64 {
    let per: Vec<f64> = frames(p)
        .iter()
        .zip(frames(g))
        .map(|(a, b)| {
            let (ma, mb) = (magnitude(a, sigma), magnitude(&b, sigma));
            ma.iter().zip(mb.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / ma.len() as f64
        })
        .collect();
    mean(&per)
}

/// Largest 4-connected region by breadth-first flood fill; the earliest
/// region in raster order wins ties.
pub fn largest_component(mask: &Array2<bool>) -> Array2<bool> {
    let (h, w) = mask.dim();
    let mut label = Array2::from_elem((h, w), usize::MAX);
    let mut best: Option<(usize, usize)> = None;
    let mut next = 0;
    for sy in 0..h {
        for sx in 0..w {
            if !mask[[sy, sx]] || label[[sy, sx]] != usize::MAX {
                continue;
            }
            let mut size = 0;
            let mut queue = VecDeque::from([(sy, sx)]);
            label[[sy, sx]] = next;
            while let Some((y, x)) = queue.pop_front() {
                size += 1;
                let near = [(y.wrapping_sub(1), x), (y + 1, x), (y, x.wrapping_sub(1)), (y, x + 1)];
                for (ny, nx) in near {
                    if ny < h && nx < w && mask[[ny, nx]] && label[[ny, nx]] == usize::MAX {
                        label[[ny, nx]] = next;
                        queue.push_back((ny, nx));
                    }
                }
            }
            if best.is_none_or(|(_, s)| size > s) {
                best = Some((next, size));
            }
            next += 1;
        }
    }
    label.mapv(|l| best.is_some_and(|(b, _)| b == l))
}

pub fn conn(p: &AlphaSequence<f64>, g: &AlphaSequence<f64>, step: f64) -> f64 {
    let per: Vec<f64> = frames(p)
        .iter()
        .zip(frames(g))
        .map(|(a, b)| {
            let (h, w) = a.dim();
            let levels = (1.0 / step + 1e-9).floor() as usize;
            let mut l = Array2::from_elem((h, w), 1.0);
            let mut settled = Array2::from_elem((h, w), false);
            for k in 1..=levels {
                let th = k as f64 * step;
                let both = Array2::from_shape_fn((h, w), |(y, x)| a[[y, x]] >= th && b[[y, x]] >= th);
                let keep = largest_component(&both);
                for y in 0..h {
                    for x in 0..w {
                        if !settled[[y, x]] && !keep[[y, x]] {
                            settled[[y, x]] = true;
                            l[[y, x]] = (k - 1) as f64 * step;
                        }
                    }
                }
            }
            let phi = |v: f64, l: f64| if v - l >= 0.15 { 1.0 - (v - l) } else { 1.0 };
            let mut err = 0.0;
            for y in 0..h {
                for x in 0..w {
                    err += (phi(a[[y, x]], l[[y, x]]) - phi(b[[y, x]], l[[y, x]])).abs();
                }
            }
            1.0 - err / (h * w) as f64
        })
        .collect();
    mean(&per)
}

fn permutations(n: usize, k: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if prefix.len() == k {
        out.push(prefix.clone());
        return;
    }
    for i in 0..n {
        if !prefix.contains(&i) {
            prefix.push(i);
            permutations(n, k, prefix, out);
            prefix.pop();
        }
    }
}

/// Exhaustive maximum-weight matching of size `min(rows, cols)`.
pub fn best_assignment(table: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let (rows, cols) = (table.len(), table[0].len());
    let mut all = Vec::new();
    if rows <= cols {
        permutations(cols, rows, &mut Vec::new(), &mut all);
        let score = |p: &Vec<usize>| p.iter().enumerate().map(|(i, &j)| table[i][j]).sum::<f64>();
        let best = all.iter().max_by(|a, b| score(a).total_cmp(&score(b))).unwrap();
        best.iter().enumerate().map(|(i, &j)| (i, j)).collect()
    } else {
        permutations(rows, cols, &mut Vec::new(), &mut all);
        let score = |p: &Vec<usize>| p.iter().enumerate().map(|(j, &i)| table[i][j]).sum::<f64>();
        let best = all.iter().max_by(|a, b| score(a).total_cmp(&score(b))).unwrap();
        best.iter().enumerate().map(|(j, &i)| (i, j)).collect()
    }
}
