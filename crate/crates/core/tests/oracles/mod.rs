//! Independent reference implementations used as test oracles. Nothing here
//! calls into the code paths it checks.
#![allow(dead_code)]

use rand::Rng;

/// Straight-line MLP evaluation: explicit per-layer weight tables built from
/// the flat layout `[W (out×in) row-major | b]`.
pub fn mlp_forward(widths: &[usize], relu: bool, params: &[f64], x: &[f64]) -> Vec<f64> {
    let mut offset = 0;
    let mut act = x.to_vec();
    let n_layers = widths.len() - 1;
    for l in 0..n_layers {
        let (fi, fo) = (widths[l], widths[l + 1]);
        let mut w = vec![vec![0.0; fi]; fo];
        for (j, row) in w.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = params[offset + j * fi + i];
            }
        }
        let b = &params[offset + fi * fo..offset + fi * fo + fo];
        offset += fi * fo + fo;
        let mut next = Vec::with_capacity(fo);
        for j in 0..fo {
            let mut s = 0.0;
            for i in 0..fi {
                s += w[j][i] * act[i];
            }
            s += b[j];
            if l + 1 < n_layers {
                s = if relu { s.max(0.0) } else { s.tanh() };
            }
            next.push(s);
        }
        act = next;
    }
    act
}

/// Softmax materialized term by term in f64.
pub fn softmax_direct(z: &[f64], tau: f64) -> Vec<f64> {
    let m = z.iter().map(|v| v / tau).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v / tau - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `-τ² Σ p_j log q_j` summed term by term.
pub fn kd_loss_direct(z_s: &[f64], z_t: &[f64], tau: f64) -> f64 {
    let p = softmax_direct(z_t, tau);
    let q = softmax_direct(z_s, tau);
    let mut acc = 0.0;
    for j in 0..p.len() {
        acc += p[j] * q[j].ln();
    }
    -tau * tau * acc
}

pub fn entropy_direct(z: &[f64], tau: f64) -> f64 {
    softmax_direct(z, tau).iter().map(|p| -p * p.ln()).sum()
}

pub fn hard_label_direct(z: &[f64], label: usize) -> f64 {
    -softmax_direct(z, 1.0)[label].ln()
}

/// Central differences of `f` at `x`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Max over components of `|a − n| / max(|a|, |n|, floor)`.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Textbook Adam in f64 from the original algorithm box.
pub struct TextbookAdam {
    pub lr: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: i32,
}

impl TextbookAdam {
    pub fn new(lr: f64, n: usize) -> Self {
        TextbookAdam { lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        self.t += 1;
        for i in 0..theta.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - b1.powi(self.t));
            let vh = self.v[i] / (1.0 - b2.powi(self.t));
            theta[i] -= self.lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// SWAD boundaries by exhaustive window scans.
pub fn swad_brute(l: &[f64], n_s: usize, n_e: usize, r: f64) -> (usize, usize) {
    let m = l.len();
    let mut s = m - 1;
    for k in 0..m {
        let hi = (k + n_s).min(m);
        let min = l[k..hi].iter().copied().fold(f64::INFINITY, f64::min);
        if l[k] == min {
            s = k;
            break;
        }
    }
    let theta = r * l[s];
    let mut e = m - 1;
    for b in s + 1..m {
        if b + n_e > m {
            break;
        }
        if l[b..b + n_e].iter().all(|&v| v > theta) {
            e = b - 1;
            break;
        }
    }
    (s, e)
}

/// Linear-scan argmax, first maximum wins.
pub fn erm_brute(iters: &[u64], accs: &[f64]) -> u64 {
    let mut best = 0;
    for i in 0..accs.len() {
        if accs[i] > accs[best] {
            best = i;
        }
    }
    iters[best]
}

/// Offline mean: sum all vectors in f64 then divide.
pub fn offline_mean(vectors: &[Vec<f32>]) -> Vec<f64> {
    let n = vectors[0].len();
    let mut sum = vec![0.0f64; n];
    for v in vectors {
        for i in 0..n {
            sum[i] += v[i] as f64;
        }
    }
    sum.iter().map(|s| s / vectors.len() as f64).collect()
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}
