//! Rank statistics and empirical distributions.

use crate::error::{Error, Result};

/// 1-based ranks with ties assigned their average rank.
pub fn mid_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput);
    }
    let r = if sxx == syy {
        sxy / sxx
    } else {
        sxy / (sxx * syy).sqrt()
    };
    Ok(r.clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of mid-ranks.
pub fn srcc(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} values", xs.len()),
            got: format!("{} values", ys.len()),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidParameter("srcc needs at least 2 pairs".into()));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN in srcc input".into()));
    }
    pearson(&mid_ranks(xs), &mid_ranks(ys))
}

/// Right-continuous empirical CDF as `(value, fraction ≤ value)` steps over
/// the distinct sorted values.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => out.push((x, frac)),
        }
    }
    out
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spearman_d2(xs: &[f64], ys: &[f64]) -> f64 {
        // tie-free closed form 1 − 6Σd²/(n(n²−1))
        let (rx, ry) = (mid_ranks(xs), mid_ranks(ys));
        let n = xs.len() as f64;
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    #[test]
    fn srcc_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(srcc(&a, &a).unwrap(), 1.0);
        assert_eq!(srcc(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        let b = [1.0, 3.0, 2.0, 4.0];
        assert!((spearman_d2(&a, &b) - 0.8).abs() < 1e-15);
        assert!((srcc(&a, &b).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(srcc(&a, &[1.0; 4]), Err(Error::ConstantInput)));
        assert!(srcc(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn mid_ranks_average_ties() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn ecdf_steps() {
        let e = ecdf(&[0.8, 0.5, 0.7, 0.6]);
        assert_eq!(e, vec![(0.5, 0.25), (0.6, 0.5), (0.7, 0.75), (0.8, 1.0)]);
        assert_eq!(ecdf(&[0.7, 0.7, 0.7]), vec![(0.7, 1.0)]);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
