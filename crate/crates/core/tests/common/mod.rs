//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Sub};

use atlas_core::matrix::Matrix;
use atlas_core::nn::MlpModel;

pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
    fn c(v: f64) -> Self;
    fn sqrt(self) -> Self;
    fn re(self) -> f64;

    fn relu(self) -> Self {
        if self.re() > 0.0 {
            self
        } else {
            Self::c(0.0)
        }
    }
}

impl Scalar for f64 {
    fn c(v: f64) -> Self {
        v
    }

    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    fn re(self) -> f64 {
        self
    }
}

/// Forward-mode dual number `v + d·ε`.
#[derive(Debug, Clone, Copy)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, d: self.d + o.d }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, d: self.d - o.d }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, d: self.d * o.v + self.v * o.d }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual { v: self.v / o.v, d: (self.d * o.v - self.v * o.d) / (o.v * o.v) }
    }
}

impl Scalar for Dual {
    fn c(v: f64) -> Self {
        Dual { v, d: 0.0 }
    }

    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Dual { v: s, d: self.d / (2.0 * s) }
    }

    fn re(self) -> f64 {
        self.v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefBn {
    BatchStats,
    Bypass,
}

/// Output logits of `m`'s architecture with flat parameters `theta`
/// (per hidden layer `W, b, γ, β`, then the head's `W, b`).
pub fn reference_outputs<T: Scalar>(m: &MlpModel, theta: &[T], x: &Matrix, bn: RefBn) -> Vec<T> {
    let sizes = &m.layer_sizes;
    let depth = sizes.len() - 2;
    let rows = x.rows();
    let mut h: Vec<Vec<T>> = (0..rows)
        .map(|i| x.row(i).iter().map(|&v| T::c(v)).collect())
        .collect();
    let mut pos = 0;
    let mut take = |n: usize| {
        let s = &theta[pos..pos + n];
        pos += n;
        s.to_vec()
    };
    for l in 0..=depth {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let w = take(fan_in * fan_out);
        let b = take(fan_out);
        let mut z: Vec<Vec<T>> = h
            .iter()
            .map(|row| {
                (0..fan_out)
                    .map(|o| {
                        let mut acc = b[o];
                        for k in 0..fan_in {
                            acc = acc + w[o * fan_in + k] * row[k];
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        if l == depth {
            return z.into_iter().map(|r| r[0]).collect();
        }
        let gamma = take(fan_out);
        let beta = take(fan_out);
        if bn == RefBn::BatchStats {
            let n = T::c(rows as f64);
            for o in 0..fan_out {
                let mut mean = T::c(0.0);
                for r in &z {
                    mean = mean + r[o];
                }
                mean = mean / n;
                let mut var = T::c(0.0);
                for r in &z {
                    let c = r[o] - mean;
                    var = var + c * c;
                }
                var = var / n;
                let denom = (var + T::c(m.bn_eps)).sqrt();
                for r in z.iter_mut() {
                    r[o] = (r[o] - mean) / denom * gamma[o] + beta[o];
                }
            }
        }
        h = z
            .into_iter()
            .map(|r| r.into_iter().map(Scalar::relu).collect())
            .collect();
    }
    unreachable!("the head returns")
}

/// Jacobian `J[i][p] = ∂f(x_i)/∂θ_p` by forward-mode differentiation, one
/// tangent per parameter.
pub fn reference_jacobian(m: &MlpModel, x: &Matrix, bn: RefBn) -> Vec<Vec<f64>> {
    let theta = m.params_flat();
    let mut j = vec![vec![0.0; theta.len()]; x.rows()];
    for p in 0..theta.len() {
        let duals: Vec<Dual> = theta
            .iter()
            .enumerate()
            .map(|(q, &v)| Dual { v, d: if q == p { 1.0 } else { 0.0 } })
            .collect();
        for (i, out) in reference_outputs(m, &duals, x, bn).iter().enumerate() {
            j[i][p] = out.d;
        }
    }
    j
}

/// Deterministic standard-normal-ish matrix from a seed.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(&mut r)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Random net with 1..=`max_depth` hidden layers of width 1..=`max_width`
/// over 2..=5 inputs, every parameter (including `b`, `γ`, `β`) redrawn from
/// a normal distribution.
pub fn random_model(seed: u64, max_depth: usize, max_width: usize) -> MlpModel {
    use atlas_core::nn::Init;
    use rand::{Rng, SeedableRng};
    let mut r = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
    let depth = r.random_range(1..=max_depth);
    let d = r.random_range(2..=5);
    let hidden: Vec<usize> = (0..depth).map(|_| r.random_range(1..=max_width)).collect();
    let mut m = MlpModel::build(&hidden, d, Init::he(seed)).unwrap();
    let n = m.params_flat().len();
    let theta = gaussian_matrix(1, n, seed ^ 0x9e37_79b9).into_vec();
    m.set_params_flat(&theta.iter().map(|v| 0.8 * v).collect::<Vec<_>>());
    m
}

/// `b` standard-normal rows over `d` features with alternating labels.
pub fn random_batch(b: usize, d: usize, seed: u64) -> atlas_core::data::DataBatch {
    let x = gaussian_matrix(b, d, seed);
    let y = (0..b).map(|i| (i % 2) as u8).collect();
    atlas_core::data::DataBatch::new(x, y).unwrap()
}
