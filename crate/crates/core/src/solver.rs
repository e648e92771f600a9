//! Elastic-net temporal response functions fitted with ADMM.
//!
//! The objective is taken without any `1/T` or `1/2` factor:
//!
//! ```text
//! ‖y − Xw‖² + α [ (1 − λ) ‖w‖² + λ ‖w‖₁ ]
//! ```
//!
//! so `α` is on the scale of the summed squared error. The smooth part is
//! handled by the `w`-update, the L1 part by soft-thresholding in the
//! `z`-update. Several response channels that share one design matrix are
//! solved together; each channel stops at its own convergence iteration.

use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iterations between objective checkpoints used to keep the best iterate
/// of a run that does not converge.
const CHECKPOINT_EVERY: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticNetConfig {
    pub alpha: f64,
    /// L1 share of the penalty, in `[0, 1]`.
    pub lambda: f64,
    pub rho: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ElasticNetConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-2,
            lambda: 0.1,
            rho: 0.1,
            max_iter: 10_000,
            tol: 1e-9,
        }
    }
}

impl ElasticNetConfig {
    pub fn with_penalty(&self, alpha: f64, lambda: f64) -> Self {
        Self {
            alpha,
            lambda,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) || !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("rho, tol and max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted weights for one response channel.
#[derive(Clone, Debug, PartialEq)]
pub struct TrfWeights {
    pub w: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
}

/// Elementwise `sign(v)·max(|v| − t, 0)`.
pub fn soft_threshold(v: &DVector<f64>, t: f64) -> DVector<f64> {
    v.map(|x| shrink(x, t))
}

#[inline]
fn shrink(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Elastic-net objective with the same scaling the solver minimizes.
pub fn objective(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, alpha: f64, lambda: f64) -> f64 {
    let resid = y - x * w;
    resid.norm_squared() + alpha * ((1.0 - lambda) * w.norm_squared() + lambda * w.lp_norm(1))
}

/// Minimizer of `‖y − Xw‖² + alpha_ridge·‖w‖²` by a direct solve.
pub fn ridge_closed_form(x: &DMatrix<f64>, y: &DVector<f64>, alpha_ridge: f64) -> Result<DVector<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.nrows(),
            right: y.len(),
        });
    }
    let mut a = x.tr_mul(x);
    for i in 0..a.nrows() {
        a[(i, i)] += alpha_ridge;
    }
    let chol = a.cholesky().ok_or(Error::Singular)?;
    let w = chol.solve(&x.tr_mul(y));
    // a numerically singular Gram can still factor; reject what it produces
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(w)
}

/// Inverse of `M = 2XᵀX + cI`, held either explicitly (p×p) or through the
/// `T×T` system of the matrix-inversion identity when `T < p`.
enum Operator {
    Primal(DMatrix<f64>),
    Dual { kinv: DMatrix<f64>, c: f64 },
}

/// One design matrix and the responses that share it.
pub struct AdmmProblem {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    /// `2Xᵀy`, one column per response.
    b: DMatrix<f64>,
    gram: Option<DMatrix<f64>>,
    ops: Mutex<Vec<(u64, Arc<Operator>)>>,
}

impl AdmmProblem {
    /// `x` is `T × p`, `y` is `T × C`.
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::LengthMismatch {
                left: x.nrows(),
                right: y.nrows(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression inputs"));
        }
        let b = x.tr_mul(&y) * 2.0;
        let gram = (x.nrows() >= x.ncols()).then(|| x.tr_mul(&x));
        Ok(Self {
            x,
            y,
            b,
            gram,
            ops: Mutex::new(Vec::new()),
        })
    }

    pub fn n_columns(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_responses(&self) -> usize {
        self.y.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    fn operator(&self, c: f64) -> Result<Arc<Operator>> {
        let key = c.to_bits();
        if let Some((_, op)) = self.ops.lock().unwrap().iter().find(|(k, _)| *k == key) {
            return Ok(op.clone());
        }
        let op = match &self.gram {
            Some(g) => {
                let mut m = g * 2.0;
                for i in 0..m.nrows() {
                    m[(i, i)] += c;
                }
                Operator::Primal(m.cholesky().ok_or(Error::Singular)?.inverse())
            }
            None => {
                let mut k = &self.x * self.x.transpose();
                for i in 0..k.nrows() {
                    k[(i, i)] += c / 2.0;
                }
                Operator::Dual {
                    kinv: k.cholesky().ok_or(Error::Singular)?.inverse(),
                    c,
                }
            }
        };
        let op = Arc::new(op);
        self.ops.lock().unwrap().push((key, op.clone()));
        Ok(op)
    }

    fn apply(&self, op: &Operator, r: &DMatrix<f64>) -> DMatrix<f64> {
        match op {
            Operator::Primal(minv) => minv * r,
            Operator::Dual { kinv, c } => {
                let xr = &self.x * r;
                let back = self.x.tr_mul(&(kinv * xr));
                (r - back) / *c
            }
        }
    }

    fn objective_of(&self, col: usize, w: &DVector<f64>, cfg: &ElasticNetConfig) -> f64 {
        let y = self.y.column(col).into_owned();
        objective(&self.x, &y, w, cfg.alpha, cfg.lambda)
    }

    /// Fits every response column. `warm` optionally seeds the sparse
    /// iterate (`p × C`).
    pub fn solve(&self, cfg: &ElasticNetConfig, warm: Option<&DMatrix<f64>>) -> Result<Vec<TrfWeights>> {
        let all: Vec<usize> = (0..self.n_responses()).collect();
        self.solve_columns(cfg, &all, warm)
    }

    /// Fits the listed response columns, in the order given. `warm` has one
    /// column per entry of `cols`.
    pub fn solve_columns(
        &self,
        cfg: &ElasticNetConfig,
        cols: &[usize],
        warm: Option<&DMatrix<f64>>,
    ) -> Result<Vec<TrfWeights>> {
        cfg.validate()?;
        let p = self.n_columns();
        let n = cols.len();
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.n_responses()) {
            return Err(Error::LengthMismatch {
                left: bad,
                right: self.n_responses(),
            });
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let c = 2.0 * cfg.alpha * (1.0 - cfg.lambda) + cfg.rho;
        let kappa = cfg.alpha * cfg.lambda / cfg.rho;
        let op = self.operator(c)?;

        // positions into `cols` still iterating
        let mut active: Vec<usize> = (0..n).collect();
        let mut z = match warm {
            Some(w0) if w0.shape() == (p, n) => w0.clone(),
            Some(w0) => {
                return Err(Error::LengthMismatch {
                    left: w0.nrows() * w0.ncols(),
                    right: p * n,
                })
            }
            None => DMatrix::zeros(p, n),
        };
        let mut u = DMatrix::<f64>::zeros(p, n);
        let mut base = self.apply(&op, &self.b.select_columns(cols));
        let mut done: Vec<Option<TrfWeights>> = vec![None; n];
        let mut best: Vec<(f64, DVector<f64>)> = vec![(f64::INFINITY, DVector::zeros(p)); n];

        for iter in 1..=cfg.max_iter {
            let mut w = self.apply(&op, &(&z - &u)) * cfg.rho;
            w += &base;
            let z_prev = std::mem::replace(&mut z, (&w + &u).map(|v| shrink(v, kappa)));
            u += &w;
            u -= &z;

            let mut finished = Vec::new();
            for (pos, &slot) in active.iter().enumerate() {
                let primal = (w.column(pos) - z.column(pos)).norm();
                let dual = cfg.rho * (z.column(pos) - z_prev.column(pos)).norm();
                if !primal.is_finite() || !dual.is_finite() {
                    return Err(Error::NonFinite("ADMM iterate"));
                }
                if primal.max(dual) < cfg.tol {
                    let zc = z.column(pos).into_owned();
                    let obj = self.objective_of(cols[slot], &zc, cfg);
                    done[slot] = Some(TrfWeights {
                        w: zc,
                        converged: true,
                        iterations: iter,
                        objective: obj,
                    });
                    finished.push(pos);
                } else if iter % CHECKPOINT_EVERY == 0 || iter == cfg.max_iter {
                    let zc = z.column(pos).into_owned();
                    let obj = self.objective_of(cols[slot], &zc, cfg);
                    if obj < best[slot].0 {
                        best[slot] = (obj, zc);
                    }
                }
            }
            if !finished.is_empty() {
                let keep: Vec<usize> = (0..active.len()).filter(|i| !finished.contains(i)).collect();
                active = keep.iter().map(|&i| active[i]).collect();
                if active.is_empty() {
                    break;
                }
                z = z.select_columns(&keep);
                u = u.select_columns(&keep);
                base = base.select_columns(&keep);
            }
        }

        Ok(done
            .into_iter()
            .enumerate()
            .map(|(slot, fit)| {
                fit.unwrap_or_else(|| {
                    let (obj, w) = std::mem::take(&mut best[slot]);
                    TrfWeights {
                        w,
                        converged: false,
                        iterations: cfg.max_iter,
                        objective: obj,
                    }
                })
            })
            .collect())
    }
}

/// Single-response convenience wrapper around [`AdmmProblem`].
pub fn elastic_net_admm(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &ElasticNetConfig) -> Result<TrfWeights> {
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.nrows(),
            right: y.len(),
        });
    }
    let problem = AdmmProblem::new(x.clone(), DMatrix::from_column_slice(y.len(), 1, y.as_slice()))?;
    Ok(problem.solve(cfg, None)?.remove(0))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_problem(seed: u64, t: usize, p: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(t, p, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(t, |_, _| rng.random_range(-1.0..1.0));
        (x, y)
    }

    #[test]
    fn soft_threshold_examples() {
        let v = DVector::from_vec(vec![3.0, -2.0, 0.5]);
        assert_eq!(soft_threshold(&v, 1.0).as_slice(), &[2.0, -1.0, 0.0]);
        assert_eq!(soft_threshold(&v, 0.0), v);
        assert!(soft_threshold(&v, 3.0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ridge_diagonal_case() {
        let x = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![2.0, 4.0]);
        let w = ridge_closed_form(&x, &y, 1.0).unwrap();
        assert!((w - DVector::from_vec(vec![1.0, 2.0])).amax() < 1e-12);
    }

    #[test]
    fn ridge_first_order_condition() {
        let (x, y) = random_problem(3, 20, 5);
        let alpha = 0.7;
        let w = ridge_closed_form(&x, &y, alpha).unwrap();
        let grad = x.tr_mul(&(&x * &w - &y)) * 2.0 + &w * (2.0 * alpha);
        assert!(grad.norm() < 1e-8);
        let ols = ridge_closed_form(&x, &y, 0.0).unwrap();
        assert!(x.tr_mul(&(&x * &ols - &y)).norm() < 1e-10);
    }

    #[test]
    fn ridge_singular_without_penalty() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(ridge_closed_form(&x, &y, 0.0), Err(Error::Singular)));
    }

    #[test]
    fn zero_alpha_is_least_squares() {
        let (x, y) = random_problem(5, 60, 6);
        let cfg = ElasticNetConfig {
            alpha: 0.0,
            ..ElasticNetConfig::default()
        };
        let fit = elastic_net_admm(&x, &y, &cfg).unwrap();
        assert!(fit.converged);
        let ols = ridge_closed_form(&x, &y, 0.0).unwrap();
        assert!((&fit.w - ols).amax() < 1e-6);
    }

    #[test]
    fn pure_ridge_matches_closed_form() {
        let (x, y) = random_problem(7, 40, 8);
        let cfg = ElasticNetConfig {
            alpha: 0.5,
            lambda: 0.0,
            ..ElasticNetConfig::default()
        };
        let fit = elastic_net_admm(&x, &y, &cfg).unwrap();
        // penalty α‖w‖² corresponds to alpha_ridge = α
        let ridge = ridge_closed_form(&x, &y, 0.5).unwrap();
        assert!((&fit.w - &ridge).norm() / ridge.norm() < 1e-6);
    }

    #[test]
    fn dual_path_matches_primal() {
        let (x, y) = random_problem(11, 15, 30);
        let cfg = ElasticNetConfig {
            alpha: 0.3,
            lambda: 0.0,
            ..ElasticNetConfig::default()
        };
        let fit = elastic_net_admm(&x, &y, &cfg).unwrap();
        let ridge = ridge_closed_form(&x, &y, 0.3).unwrap();
        assert!((&fit.w - &ridge).norm() / ridge.norm() < 1e-6);
    }

    #[test]
    fn zero_response_gives_zero_weights() {
        let (x, _) = random_problem(2, 30, 4);
        let fit = elastic_net_admm(&x, &DVector::zeros(30), &ElasticNetConfig::default()).unwrap();
        assert!(fit.w.iter().all(|&v| v == 0.0));
        assert!(fit.converged);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let (mut x, y) = random_problem(2, 10, 3);
        x[(0, 0)] = f64::NAN;
        assert!(matches!(
            elastic_net_admm(&x, &y, &ElasticNetConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let (x, y) = random_problem(4, 50, 10);
        let cfg = ElasticNetConfig {
            alpha: 1.0,
            lambda: 0.5,
            max_iter: 3,
            ..ElasticNetConfig::default()
        };
        let fit = elastic_net_admm(&x, &y, &cfg).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 3);
        assert!(fit.objective.is_finite());
    }

    #[test]
    fn multi_response_matches_single() {
        let (x, y1) = random_problem(8, 80, 12);
        let (_, y2) = random_problem(9, 80, 12);
        let mut y = DMatrix::zeros(80, 2);
        y.set_column(0, &y1);
        y.set_column(1, &y2);
        let cfg = ElasticNetConfig {
            alpha: 2.0,
            lambda: 0.5,
            ..ElasticNetConfig::default()
        };
        let joint = AdmmProblem::new(x.clone(), y).unwrap().solve(&cfg, None).unwrap();
        let a = elastic_net_admm(&x, &y1, &cfg).unwrap();
        let b = elastic_net_admm(&x, &y2, &cfg).unwrap();
        assert!((&joint[0].w - &a.w).amax() < 1e-10);
        assert!((&joint[1].w - &b.w).amax() < 1e-10);
        assert_eq!(joint[0].iterations, a.iterations);
    }

    #[test]
    fn invalid_config() {
        let (x, y) = random_problem(1, 10, 2);
        let cfg = ElasticNetConfig {
            lambda: 1.5,
            ..ElasticNetConfig::default()
        };
        assert!(matches!(elastic_net_admm(&x, &y, &cfg), Err(Error::Config(_))));
    }

    fn sparse_problem(seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(80, 20, |_, _| rng.random_range(-1.0..1.0));
        let mut w = DVector::zeros(20);
        w[2] = 1.5;
        w[7] = -2.0;
        w[11] = 0.5;
        let y = &x * &w + DVector::from_fn(80, |_, _| 0.01 * rng.random_range(-1.0..1.0));
        (x, y)
    }

    #[test]
    fn no_small_perturbation_improves_the_objective() {
        let (x, y) = random_problem(21, 50, 8);
        let cfg = ElasticNetConfig::default();
        let fit = elastic_net_admm(&x, &y, &cfg).unwrap();
        assert!(fit.converged);
        let base = objective(&x, &y, &fit.w, cfg.alpha, cfg.lambda);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let d = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0)).normalize() * 1e-3;
            for w in [&fit.w + &d, &fit.w - &d] {
                assert!(objective(&x, &y, &w, cfg.alpha, cfg.lambda) >= base - cfg.tol);
            }
        }
    }

    #[test]
    fn zero_count_grows_with_alpha() {
        let (x, y) = sparse_problem(8);
        let zeros: Vec<usize> = [1e-3, 1e-2, 1e-1]
            .iter()
            .map(|&a| {
                let fit = elastic_net_admm(&x, &y, &ElasticNetConfig::default().with_penalty(a, 0.9)).unwrap();
                fit.w.iter().filter(|v| **v == 0.0).count()
            })
            .collect();
        assert!(zeros.windows(2).all(|z| z[0] <= z[1]), "{zeros:?}");
        assert!(zeros[2] > 0, "{zeros:?}");
    }

    #[test]
    fn warm_start_reaches_the_cold_solution() {
        let (x, y) = random_problem(13, 40, 10);
        let problem = AdmmProblem::new(x, DMatrix::from_column_slice(40, 1, y.as_slice())).unwrap();
        let cfg = ElasticNetConfig::default();
        let first = problem.solve(&cfg.with_penalty(1e-3, 0.3), None).unwrap();
        let start = DMatrix::from_column_slice(10, 1, first[0].w.as_slice());
        let next = cfg.with_penalty(1e-2, 0.3);
        let warm = problem.solve(&next, Some(&start)).unwrap();
        let cold = problem.solve(&next, None).unwrap();
        assert!(warm[0].converged && cold[0].converged);
        assert!((&warm[0].w - &cold[0].w).norm() <= 10.0 * cfg.tol);
    }
}
