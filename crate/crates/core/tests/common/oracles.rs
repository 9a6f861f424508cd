//! Independent numerical oracles: finite differences, quadrature, dense eigendecomposition.

#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};

/// `|a - b| / max(|a|, |b|)`; two exact zeros agree.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        return 0.0;
    }
    (analytic - numeric).abs() / scale
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

fn normal_logpdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// KL(N(mq, sq²) ‖ N(mp, sp²)) by composite Simpson quadrature of ∫ q ln(q/p).
pub fn kl_quadrature(mq: f64, sq: f64, mp: f64, sp: f64) -> f64 {
    let (lo, hi) = (mq - 14.0 * sq, mq + 14.0 * sq);
    let intervals = 40_000;
    let h = (hi - lo) / intervals as f64;
    let f = |x: f64| {
        let lq = normal_logpdf(x, mq, sq);
        lq.exp() * (lq - normal_logpdf(x, mp, sp))
    };
    let mut sum = f(lo) + f(hi);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(lo + i as f64 * h);
    }
    sum * h / 3.0
}

/// Top-k eigenpairs of the dense `(1/n) G Gᵀ`, descending.
pub fn dense_top_eigs(g: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, Vec<f64>) {
    let n = g.ncols() as f64;
    let c = (g * g.transpose()) / n;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut v = DMatrix::zeros(g.nrows(), k);
    let mut l = Vec::with_capacity(k);
    for (c, &i) in order.iter().take(k).enumerate() {
        v.set_column(c, &eig.eigenvectors.column(i));
        l.push(eig.eigenvalues[i]);
    }
    (v, l)
}

/// Max-abs distance between two vectors allowing a global sign flip.
pub fn sign_free_distance(a: &[f64], b: &[f64]) -> f64 {
    let plus = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let minus = a.iter().zip(b).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
    plus.min(minus)
}

/// Max-abs deviation of `PᵀP` from the identity.
pub fn orthonormality_defect(p: &DMatrix<f64>) -> f64 {
    let ptp = p.tr_mul(p);
    let mut worst = 0.0f64;
    for i in 0..ptp.nrows() {
        for j in 0..ptp.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((ptp[(i, j)] - target).abs());
        }
    }
    worst
}
