//! Aggregates and rank correlation.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Mean and sample standard deviation (`n - 1`; 0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Average ranks starting at 1, ties sharing the mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, _) = mean_std(x);
    let (my, _) = mean_std(y);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Spearman's rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Trend {
    pub rho: f64,
    /// One-sided p-value for a negative association.
    pub p_negative: f64,
}

/// Up to this many points the p-value enumerates all permutations.
const EXACT_LIMIT: usize = 8;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Spearman trend test: exact permutation p-value for small samples,
/// Student-t approximation otherwise.
pub fn spearman_trend(x: &[f64], y: &[f64]) -> Trend {
    let rho = spearman(x, y);
    let n = x.len();
    let p_negative = if n < 3 {
        1.0
    } else if n <= EXACT_LIMIT {
        let perms = permutations(n);
        let hits = perms
            .iter()
            .filter(|p| {
                let yp: Vec<f64> = p.iter().map(|&i| y[i]).collect();
                spearman(x, &yp) <= rho + 1e-12
            })
            .count();
        hits as f64 / perms.len() as f64
    } else if rho.abs() >= 1.0 {
        if rho < 0.0 { 0.0 } else { 1.0 }
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        StudentsT::new(0.0, 1.0, df).expect("valid t distribution").cdf(t)
    };
    Trend { rho, p_negative }
}
