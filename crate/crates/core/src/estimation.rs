//! Remote state estimation cost model.
//!
//! Each device runs a local Kalman filter over a linear time-invariant
//! process and ships its estimate to the remote estimator. When the last
//! delivered estimate is `tau` steps old, the remote error covariance is the
//! steady-state local covariance pushed `tau` times through the open-loop
//! Lyapunov map `X -> A X A^T + W`, and the cost of the device is its trace.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance (max-abs elementwise change) for the Riccati fixed point.
pub const RICCATI_TOL: f64 = 1e-9;
/// Default iteration budget for the Riccati fixed point.
pub const RICCATI_MAX_ITER: usize = 100_000;
/// Default spectral radius range for generated system matrices.
pub const DEFAULT_SPECTRAL_RANGE: (f64, f64) = (1.0, 1.3);

const MAX_GENERATION_ATTEMPTS: usize = 100;

/// One device's process dynamics `e+ = A e + w`, `z = C e + v` with
/// `w ~ N(0, W)` and `v ~ N(0, V)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProcessRecord", into = "ProcessRecord")]
pub struct LtiProcess {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    w: DMatrix<f64>,
    v: DMatrix<f64>,
}

/// Plain nested-array form used in config and system snapshot files.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProcessRecord {
    state_dim: usize,
    meas_dim: usize,
    a: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(name: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::invalid(format!(
            "matrix {name} must be {nrows}x{ncols}"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl TryFrom<ProcessRecord> for LtiProcess {
    type Error = Error;

    fn try_from(r: ProcessRecord) -> Result<Self> {
        let (l, c) = (r.state_dim, r.meas_dim);
        LtiProcess::new(
            from_rows("a", &r.a, l, l)?,
            from_rows("c", &r.c, c, l)?,
            from_rows("w", &r.w, l, l)?,
            from_rows("v", &r.v, c, c)?,
        )
    }
}

impl From<LtiProcess> for ProcessRecord {
    fn from(p: LtiProcess) -> Self {
        ProcessRecord {
            state_dim: p.state_dim(),
            meas_dim: p.meas_dim(),
            a: to_rows(&p.a),
            c: to_rows(&p.c),
            w: to_rows(&p.w),
            v: to_rows(&p.v),
        }
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

impl LtiProcess {
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>, w: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        let l = a.nrows();
        if l == 0 || a.ncols() != l {
            return Err(Error::invalid("A must be a non-empty square matrix"));
        }
        let m = c.nrows();
        if m == 0 || c.ncols() != l {
            return Err(Error::invalid(format!("C must be c x {l} with c >= 1")));
        }
        if w.shape() != (l, l) || v.shape() != (m, m) {
            return Err(Error::invalid("W must be l x l and V must be c x c"));
        }
        if !is_symmetric(&w) || min_symmetric_eigenvalue(&w) < -1e-12 {
            return Err(Error::invalid("W must be symmetric positive semidefinite"));
        }
        if !is_symmetric(&v) || min_symmetric_eigenvalue(&v) <= 0.0 {
            return Err(Error::invalid("V must be symmetric positive definite"));
        }
        Ok(Self { a, c, w, v })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn meas_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Largest eigenvalue magnitude of `A`.
    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    /// Open-loop covariance propagation `A X A^T + W`.
    pub fn propagate_cov(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let l = self.state_dim();
        if x.shape() != (l, l) {
            return Err(Error::invalid(format!(
                "covariance is {}x{}, expected {l}x{l}",
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(symmetrize(&self.a * x * self.a.transpose() + &self.w))
    }

    /// One predict-then-update step of the Kalman error covariance.
    pub fn riccati_update(&self, posterior: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let prior = self.propagate_cov(posterior)?;
        let ct = self.c.transpose();
        let innovation = &self.c * &prior * &ct + &self.v;
        let inv = innovation
            .try_inverse()
            .ok_or_else(|| Error::invalid("innovation covariance is singular"))?;
        let gain = &prior * ct * inv;
        let eye = DMatrix::<f64>::identity(self.state_dim(), self.state_dim());
        Ok(symmetrize((eye - gain * &self.c) * prior))
    }

    /// Steady-state posterior error covariance of the local Kalman filter,
    /// iterated from `W` until the max-abs elementwise change drops below `tol`.
    pub fn steady_state_error_cov(&self, tol: f64, max_iter: usize) -> Result<DMatrix<f64>> {
        if !(tol > 0.0) || max_iter == 0 {
            return Err(Error::invalid("tol must be > 0 and max_iter >= 1"));
        }
        let mut p = self.w.clone();
        let mut change = f64::INFINITY;
        for _ in 0..max_iter {
            let next = self.riccati_update(&p)?;
            change = (&next - &p).amax();
            p = next;
            if !change.is_finite() {
                break;
            }
            if change < tol {
                return Ok(p);
            }
        }
        Err(Error::Convergence {
            what: "Riccati recursion",
            iterations: max_iter,
            last_change: change,
        })
    }

    /// `f^tau(pbar)`, computed by direct iteration.
    pub fn error_cov_after(&self, pbar: &DMatrix<f64>, tau: u32) -> Result<DMatrix<f64>> {
        let mut x = pbar.clone();
        for _ in 0..tau {
            x = self.propagate_cov(&x)?;
        }
        Ok(x)
    }
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Tabulated AoI cost `g(tau) = trace(f^tau(pbar))` for `tau` in `1..=tau_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pbar: DMatrix<f64>,
    tau_max: u32,
    table: Vec<f64>,
}

impl CostModel {
    pub fn new(proc: &LtiProcess, tau_max: u32) -> Result<Self> {
        let pbar = proc.steady_state_error_cov(RICCATI_TOL, RICCATI_MAX_ITER)?;
        Self::from_pbar(proc, pbar, tau_max)
    }

    pub fn from_pbar(proc: &LtiProcess, pbar: DMatrix<f64>, tau_max: u32) -> Result<Self> {
        if tau_max == 0 {
            return Err(Error::invalid("tau_max must be >= 1"));
        }
        let mut table = Vec::with_capacity(tau_max as usize);
        let mut x = pbar.clone();
        for _ in 0..tau_max {
            x = proc.propagate_cov(&x)?;
            table.push(x.trace());
        }
        Ok(Self {
            pbar,
            tau_max,
            table,
        })
    }

    /// Builds a model from an explicit cost table, e.g. for hand-made instances.
    pub fn from_table(table: Vec<f64>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::invalid("cost table must be non-empty"));
        }
        if table.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::invalid("costs must be positive and finite"));
        }
        if table.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("costs must be non-decreasing in tau"));
        }
        Ok(Self {
            pbar: DMatrix::zeros(0, 0),
            tau_max: table.len() as u32,
            table,
        })
    }

    pub fn pbar(&self) -> &DMatrix<f64> {
        &self.pbar
    }

    pub fn tau_max(&self) -> u32 {
        self.tau_max
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// `g(tau)`; `tau` is clamped into `1..=tau_max`, so the cost saturates
    /// at `g(tau_max)`.
    pub fn aoi_cost(&self, tau: u32) -> f64 {
        let idx = tau.clamp(1, self.tau_max) - 1;
        self.table[idx as usize]
    }
}

/// Draws a process whose `A` has spectral radius uniform in `spectral_range`,
/// `C` entries uniform in (0, 1), and `W = I`, `V = I`. Draws are repeated
/// until the Riccati recursion converges.
pub fn sample_process<R: Rng + ?Sized>(
    rng: &mut R,
    state_dim: usize,
    meas_dim: usize,
    spectral_range: (f64, f64),
) -> Result<LtiProcess> {
    let (lo, hi) = spectral_range;
    if state_dim == 0 || meas_dim == 0 {
        return Err(Error::invalid("process dimensions must be positive"));
    }
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::invalid(format!(
            "spectral range ({lo}, {hi}) must satisfy 0 < lo < hi"
        )));
    }
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let target = loop {
            let r = rng.random_range(lo..hi);
            if r > lo {
                break r;
            }
        };
        let raw = DMatrix::<f64>::from_fn(state_dim, state_dim, |_, _| rng.sample(StandardNormal));
        let radius = spectral_radius(&raw);
        let c = DMatrix::<f64>::from_fn(meas_dim, state_dim, |_, _| loop {
            let x: f64 = rng.random();
            if x > 0.0 {
                break x;
            }
        });
        if radius < 1e-6 {
            continue;
        }
        let a = raw * (target / radius);
        let proc = LtiProcess::new(
            a,
            c,
            DMatrix::identity(state_dim, state_dim),
            DMatrix::identity(meas_dim, meas_dim),
        )?;
        if proc.steady_state_error_cov(RICCATI_TOL, RICCATI_MAX_ITER).is_ok() {
            return Ok(proc);
        }
    }
    Err(Error::Generation {
        what: "LTI process",
        attempts: MAX_GENERATION_ATTEMPTS,
    })
}
