//! Problem generators and independent oracles shared by the integration
//! tests and the acceptance target.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use shadowprice::model::{Dataset, LeastSquares, Loss};
use shadowprice::restriction::{RestrictionSystem, SigmaSpec};
use shadowprice::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Gaussian design with a leading intercept column.
pub fn design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    let mut x = DMatrix::from_fn(n, p, |_, _| normal(rng));
    x.column_mut(0).fill(1.0);
    x
}

pub fn linear_data(
    rng: &mut ChaCha8Rng,
    x: DMatrix<f64>,
    theta: &DVector<f64>,
    noise_sd: f64,
) -> Dataset {
    let n = x.nrows();
    let y = &x * theta + DVector::from_fn(n, |_, _| noise_sd * normal(rng));
    Dataset::from_matrix(y, x, true).unwrap()
}

/// Least squares with the closed form hidden, so the solver takes the
/// general Newton path.
pub struct Opaque(pub LeastSquares);

impl Loss for Opaque {
    fn value(&self, data: &Dataset, theta: &DVector<f64>) -> Result<f64> {
        self.0.value(data, theta)
    }
    fn gradient(&self, data: &Dataset, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.0.gradient(data, theta)
    }
    fn hessian(&self, data: &Dataset, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.0.hessian(data, theta)
    }
    fn score_rows(&self, data: &Dataset, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.0.score_rows(data, theta)
    }
}

pub fn zero_slopes(p: usize) -> Vec<String> {
    (1..p).map(|j| format!("theta[{j}] = 0")).collect()
}

pub fn identity_system(texts: &[String], p: usize) -> RestrictionSystem {
    RestrictionSystem::parse(texts, p, &SigmaSpec::Identity).unwrap()
}

/// Ridge oracle for `kappa/(2n)||y - X theta||^2` subject to
/// `sum_{j in S} theta_j^2 <= c`. Solves the normal equations
/// `(kappa G + 2 lambda W) theta = kappa b` directly and bisects on lambda.
pub fn ridge_oracle(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kappa: f64,
    penalized: &[bool],
    c: f64,
) -> (DVector<f64>, f64) {
    let n = x.nrows() as f64;
    let g = x.transpose() * x / n;
    let b = x.transpose() * y / n;
    let w = DMatrix::from_diagonal(&DVector::from_iterator(
        penalized.len(),
        penalized.iter().map(|&s| if s { 1.0 } else { 0.0 }),
    ));
    let theta_at = |lambda: f64| -> DVector<f64> {
        let a = &g * kappa + &w * (2.0 * lambda);
        a.lu().solve(&(&b * kappa)).unwrap()
    };
    let h_at = |theta: &DVector<f64>| -> f64 {
        theta
            .iter()
            .zip(penalized)
            .filter(|(_, &s)| s)
            .map(|(v, _)| v * v)
            .sum()
    };
    let free = theta_at(0.0);
    if h_at(&free) <= c {
        return (free, 0.0);
    }
    let mut hi = 1.0;
    while h_at(&theta_at(hi)) > c {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h_at(&theta_at(mid)) > c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    (theta_at(lambda), lambda)
}

/// Brute force for `p = 2` with the restriction `theta_1 - a theta_0^k - b`:
/// a grid over `theta_0` and, per column, the exact minimiser over the
/// feasible `theta_1` interval.
pub fn column_grid_oracle(
    data: &Dataset,
    kappa: f64,
    a: f64,
    k: i32,
    b: f64,
    c: f64,
    center: f64,
    half_width: f64,
    step: f64,
) -> DVector<f64> {
    let n = data.n() as f64;
    let x = data.x();
    let y = &data.y;
    let g = x.transpose() * x / n;
    let xb = x.transpose() * y / n;
    let yy = y.norm_squared() / n;
    let loss = |t0: f64, t1: f64| {
        kappa
            * 0.5
            * (g[(0, 0)] * t0 * t0 + 2.0 * g[(0, 1)] * t0 * t1 + g[(1, 1)] * t1 * t1
                - 2.0 * (xb[0] * t0 + xb[1] * t1)
                + yy)
    };
    let r = c.sqrt();
    let steps = (2.0 * half_width / step).round() as i64;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=steps {
        let t0 = center - half_width + i as f64 * step;
        let mid = a * t0.powi(k) + b;
        let free = (xb[1] - g[(0, 1)] * t0) / g[(1, 1)];
        let t1 = free.clamp(mid - r, mid + r);
        let v = loss(t0, t1);
        if v < best.0 {
            best = (v, t0, t1);
        }
    }
    DVector::from_vec(vec![best.1, best.2])
}

/// Random polynomial expression over `theta[0..p)` in the restriction
/// grammar. Depth bounds keep magnitudes moderate.
pub fn random_expr(rng: &mut ChaCha8Rng, p: usize, depth: u32) -> String {
    if depth == 0 || rng.random::<f64>() < 0.25 {
        return if rng.random::<f64>() < 0.3 {
            format!("{:.3}", rng.random_range(0.1..2.0))
        } else {
            format!("theta[{}]", rng.random_range(0..p))
        };
    }
    let a = random_expr(rng, p, depth - 1);
    match rng.random_range(0..6) {
        0 => format!("{a} + {}", random_expr(rng, p, depth - 1)),
        1 => format!("{a} - ({})", random_expr(rng, p, depth - 1)),
        2 => format!("({a}) * ({})", random_expr(rng, p, depth - 1)),
        3 => format!("-({a})"),
        4 => format!("({a})^{}", rng.random_range(0..=3)),
        _ => format!(
            "{:.3} * theta[{}]^{}",
            rng.random_range(-2.0..2.0),
            rng.random_range(0..p),
            rng.random_range(1..=3)
        ),
    }
}

/// Richardson-extrapolated central difference of a scalar function.
pub fn fd_gradient(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |j, _| {
        let h = 1e-3 * (1.0 + x[j].abs());
        let d = |h: f64| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        };
        (4.0 * d(h / 2.0) - d(h)) / 3.0
    })
}

/// Columns are finite-difference derivatives of `f` along each coordinate.
pub fn fd_jacobian(f: &dyn Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
    let m = f(x).len();
    let mut out = DMatrix::zeros(m, x.len());
    for i in 0..m {
        let col = fd_gradient(&|t: &DVector<f64>| f(t)[i], x);
        out.row_mut(i).copy_from(&col.transpose());
    }
    out
}

/// `||a - b||_inf / max(1, ||a||_inf)`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(1.0)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / a.amax().max(1.0)
}

/// Kolmogorov-Smirnov distance of a sample from the standard normal.
pub fn ks_normal(mut sample: Vec<f64>) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = shadowprice::distributions::normal_cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}
