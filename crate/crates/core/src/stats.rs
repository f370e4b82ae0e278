//! Small statistical helpers shared by the estimators.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (ddof = 1).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the sample mean.
pub fn stderr_of_mean(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (variance(xs) / xs.len() as f64).sqrt()
}

pub fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Kolmogorov–Smirnov distance between the empirical law of `sample` and the
/// standard normal distribution function.
pub fn ks_distance_to_std_normal(sample: &[f64]) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite sample"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let phi = std_normal_cdf(*x);
        d = d.max(phi - i as f64 / n).max((i + 1) as f64 / n - phi);
    }
    d
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|x, y| x.partial_cmp(y).expect("finite sample"));
    xb.sort_by(|x, y| x.partial_cmp(y).expect("finite sample"));
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Least-squares polynomial fit; returns the coefficients (constant first)
/// and the root-mean-square residual.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> (Vec<f64>, f64) {
    assert!(xs.len() == ys.len() && xs.len() > degree);
    let n = xs.len();
    let m = degree + 1;
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, m);
    for (i, &x) in xs.iter().enumerate() {
        let mut pow = 1.0;
        for j in 0..m {
            a[(i, j)] = pow;
            pow *= x;
        }
    }
    let b = nalgebra::DVector::from_column_slice(ys);
    let svd = a.clone().svd(true, true);
    let coeffs = svd.solve(&b, 1e-12).expect("least squares");
    let resid = &a * &coeffs - &b;
    let rms = (resid.norm_squared() / n as f64).sqrt();
    (coeffs.iter().copied().collect(), rms)
}
