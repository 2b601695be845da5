//! L2-regularized logistic regression fitted by Newton iterations over
//! log-compressed, standardized features.

use serde::{Deserialize, Serialize};

/// Signed `ln(1 + |x|)`, applied before standardization.
pub fn compress(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeClassifier {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl SurgeClassifier {
    /// All-zero weights: probability one half everywhere.
    pub fn zero(n_features: usize) -> Self {
        SurgeClassifier {
            center: vec![0.0; n_features],
            scale: vec![1.0; n_features],
            weights: vec![0.0; n_features],
            bias: 0.0,
        }
    }

    fn transform(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (compress(x[j]) - self.center[j]) / self.scale[j];
        }
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        let mut z = self.bias;
        for (j, w) in self.weights.iter().enumerate() {
            z += w * (compress(x[j]) - self.center[j]) / self.scale[j];
        }
        // keep strictly inside (0,1)
        sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
    }

    /// Fits labels `y` with ridge penalty `l2` on the weights (not the bias).
    pub fn fit(rows: &[&[f64]], y: &[bool], l2: f64) -> Self {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        let mut m = SurgeClassifier::zero(d);
        if n == 0 {
            return m;
        }
        for j in 0..d {
            let vals: Vec<f64> = rows.iter().map(|r| compress(r[j])).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            m.center[j] = mean;
            m.scale[j] = if var > 1e-18 { var.sqrt() } else { 1.0 };
        }
        let pos = y.iter().filter(|&&b| b).count();
        if pos == 0 || pos == n {
            // separable by the bias alone: saturate toward the observed rate
            let rate = (pos as f64 + 0.5) / (n as f64 + 1.0);
            m.bias = (rate / (1.0 - rate)).ln();
            return m;
        }
        let xs: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut t = vec![0.0; d + 1];
                m.transform(r, &mut t[..d]);
                t[d] = 1.0;
                t
            })
            .collect();
        let k = d + 1;
        let mut beta = vec![0.0; k];
        beta[d] = (pos as f64 / (n - pos) as f64).ln();
        for _ in 0..50 {
            let mut grad = vec![0.0; k];
            let mut hess = vec![0.0; k * k];
            for (x, &t) in xs.iter().zip(y) {
                let z: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
                let p = sigmoid(z);
                let r = p - if t { 1.0 } else { 0.0 };
                let w = (p * (1.0 - p)).max(1e-12);
                for a in 0..k {
                    grad[a] += r * x[a];
                    let wa = w * x[a];
                    for b in a..k {
                        hess[a * k + b] += wa * x[b];
                    }
                }
            }
            for a in 0..k {
                for b in 0..a {
                    hess[a * k + b] = hess[b * k + a];
                }
            }
            for j in 0..d {
                grad[j] += l2 * beta[j];
                hess[j * k + j] += l2;
            }
            hess[d * k + d] += 1e-9;
            let Some(step) = solve(&mut hess, &mut grad, k) else {
                break;
            };
            let before = objective(&xs, y, &beta, l2, d);
            let mut t = 1.0;
            let mut next = beta.clone();
            let mut improved = false;
            for _ in 0..40 {
                for (j, b) in next.iter_mut().enumerate() {
                    *b = beta[j] - t * step[j];
                }
                if objective(&xs, y, &next, l2, d) <= before {
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
            let size = step.iter().fold(0.0f64, |a, s| a.max((t * s).abs()));
            beta = next;
            if size < 1e-10 {
                break;
            }
        }
        m.weights.copy_from_slice(&beta[..d]);
        m.bias = beta[d];
        m
    }
}

fn log1pexp(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn objective(xs: &[Vec<f64>], y: &[bool], beta: &[f64], l2: f64, d: usize) -> f64 {
    let mut s = 0.0;
    for (x, &t) in xs.iter().zip(y) {
        let z: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        s += log1pexp(z) - if t { z } else { 0.0 };
    }
    s + 0.5 * l2 * beta[..d].iter().map(|b| b * b).sum::<f64>()
}

/// Gaussian elimination with partial pivoting; consumes `a` and `b`.
fn solve(a: &mut [f64], b: &mut [f64], k: usize) -> Option<Vec<f64>> {
    for c in 0..k {
        let piv = (c..k).max_by(|&i, &j| a[i * k + c].abs().total_cmp(&a[j * k + c].abs()))?;
        if a[piv * k + c].abs() < 1e-300 {
            return None;
        }
        if piv != c {
            for j in 0..k {
                a.swap(piv * k + j, c * k + j);
            }
            b.swap(piv, c);
        }
        for r in c + 1..k {
            let f = a[r * k + c] / a[c * k + c];
            if f != 0.0 {
                for j in c..k {
                    a[r * k + j] -= f * a[c * k + j];
                }
                b[r] -= f * b[c];
            }
        }
    }
    let mut x = vec![0.0; k];
    for c in (0..k).rev() {
        let s: f64 = (c + 1..k).map(|j| a[c * k + j] * x[j]).sum();
        x[c] = (b[c] - s) / a[c * k + c];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
