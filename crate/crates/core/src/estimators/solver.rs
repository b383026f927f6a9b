use std::borrow::Cow;

use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};

use super::projection::project_simplex;
use crate::error::{Error, Result};
use crate::record::{DesignMatrix, MeasurementRecord};
use crate::spin::{from_spectrum, hermitian_eigen, DensityMatrix, HermitianBasis};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Converged once the objective has changed by less than this relative
    /// amount for `STALL_WINDOW` consecutive accepted steps.
    pub rel_tolerance: f64,
    /// Also converged when the gradient mapping falls below this fraction
    /// of `2 |A^T M|`.
    pub kkt_tolerance: f64,
    pub power_iterations: usize,
    /// Function-value restart of the momentum.
    pub restart: bool,
    /// Accepted relative mismatch |Delta - epsilon| / epsilon in the CS
    /// multiplier search.
    pub cs_residual_tolerance: f64,
    pub cs_max_bisections: usize,
    /// Stall tolerance of the inner solves along the CS multiplier path,
    /// which only need the residual to `cs_residual_tolerance`.
    pub cs_rel_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 20_000,
            rel_tolerance: 1e-9,
            kkt_tolerance: 1e-7,
            power_iterations: 50,
            restart: true,
            cs_residual_tolerance: 0.01,
            cs_max_bisections: 80,
            cs_rel_tolerance: 1e-7,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidArgument(
                "max_iterations must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("rel_tolerance", self.rel_tolerance),
            ("kkt_tolerance", self.kkt_tolerance),
            ("cs_residual_tolerance", self.cs_residual_tolerance),
            ("cs_rel_tolerance", self.cs_rel_tolerance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.power_iterations < 1 || self.cs_max_bisections < 1 {
            return Err(Error::InvalidArgument(
                "power_iterations and cs_max_bisections must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

const STALL_WINDOW: usize = 50;
/// Safety factor on the power-iteration estimate of the largest eigenvalue.
const LIPSCHITZ_MARGIN: f64 = 1.02;

/// `A^T A` and the gradient Lipschitz constant of `|M - A r|^2`. Depends
/// only on the design, so one instance serves every record and estimator.
#[derive(Clone, Debug)]
pub struct NormalEquations {
    gram: DMatrix<f64>,
    lipschitz: f64,
}

impl NormalEquations {
    pub fn from_design(design: DMatrixView<'_, f64>, power_iterations: usize) -> Self {
        Self::from_gram(design.tr_mul(&design), power_iterations)
    }

    pub fn from_gram(gram: DMatrix<f64>, power_iterations: usize) -> Self {
        let top = largest_eigenvalue(&gram, power_iterations);
        NormalEquations {
            lipschitz: 2.0 * top * LIPSCHITZ_MARGIN,
            gram,
        }
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// Power iteration with a Rayleigh-quotient readout.
fn largest_eigenvalue(gram: &DMatrix<f64>, iterations: usize) -> f64 {
    let n = gram.nrows();
    if n == 0 {
        return 0.0;
    }
    // Fixed, slightly non-uniform start so runs are reproducible.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    v.normalize_mut();
    let mut w = DVector::zeros(n);
    let mut estimate = 0.0;
    for _ in 0..iterations {
        w.gemv(1.0, gram, &v, 0.0);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = v.dot(&w);
        v.copy_from(&w);
        v.unscale_mut(norm);
    }
    w.gemv(1.0, gram, &v, 0.0);
    estimate.max(v.dot(&w))
}

/// Data of one reconstruction: design rows, record samples and the shared
/// normal equations.
#[derive(Debug)]
pub struct Problem<'a> {
    design: DMatrixView<'a, f64>,
    values: &'a [f64],
    normal: Cow<'a, NormalEquations>,
    atm: DVector<f64>,
    norm_sq: f64,
    basis: HermitianBasis,
}

impl<'a> Problem<'a> {
    pub fn new(
        design: &'a DesignMatrix,
        record: &'a MeasurementRecord,
        config: &SolverConfig,
    ) -> Result<Self> {
        config.validate()?;
        if record.is_empty() {
            return Err(Error::EmptyRecord);
        }
        if design.rows() != record.len() {
            return Err(Error::DimensionMismatch {
                expected: design.rows(),
                found: record.len(),
            });
        }
        let view = design.matrix().rows(0, design.rows());
        let normal = NormalEquations::from_design(view, config.power_iterations);
        Self::assemble(view, &record.values, Cow::Owned(normal))
    }

    /// Reuses precomputed normal equations for the given design rows.
    pub fn with_normal(
        design: DMatrixView<'a, f64>,
        values: &'a [f64],
        normal: &'a NormalEquations,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyRecord);
        }
        if design.nrows() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: design.nrows(),
                found: values.len(),
            });
        }
        if normal.gram.nrows() != design.ncols() {
            return Err(Error::DimensionMismatch {
                expected: design.ncols(),
                found: normal.gram.nrows(),
            });
        }
        Self::assemble(design, values, Cow::Borrowed(normal))
    }

    fn assemble(
        design: DMatrixView<'a, f64>,
        values: &'a [f64],
        normal: Cow<'a, NormalEquations>,
    ) -> Result<Self> {
        let p = design.ncols();
        let d = (p as f64).sqrt().round() as usize;
        if d * d != p {
            return Err(Error::InvalidArgument(format!(
                "design has {p} columns, which is not a square dimension"
            )));
        }
        let m = DVector::from_column_slice(values);
        let atm = design.tr_mul(&m);
        Ok(Problem {
            design,
            values,
            normal,
            atm,
            norm_sq: m.norm_squared(),
            basis: HermitianBasis::new(d)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn basis(&self) -> &HermitianBasis {
        &self.basis
    }

    pub fn record_norm_sq(&self) -> f64 {
        self.norm_sq
    }

    pub fn samples(&self) -> usize {
        self.values.len()
    }

    /// `|M - A r|^2`, evaluated from the design rows directly.
    pub fn residual(&self, r: &DVector<f64>) -> f64 {
        let pred = self.design * r;
        pred.iter()
            .zip(self.values)
            .map(|(p, m)| (m - p) * (m - p))
            .sum()
    }

    /// `|M|^2 - 2 b.r + r.G r`, from the normal equations.
    fn quadratic(&self, r: &DVector<f64>, gr: &DVector<f64>) -> f64 {
        (self.norm_sq - 2.0 * self.atm.dot(r) + r.dot(gr)).max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Feasible {
    /// `{rho >= 0, Tr rho = 1}`
    Density,
    /// `{rho >= 0}`
    Psd,
}

fn project_coefficients(basis: &HermitianBasis, z: &DVector<f64>, set: Feasible) -> DVector<f64> {
    let m = basis.reconstruct_from(z.as_slice());
    let (w, v) = hermitian_eigen(&m);
    let w = match set {
        Feasible::Density => DVector::from_vec(project_simplex(w.as_slice())),
        Feasible::Psd => w.map(|x| x.max(0.0)),
    };
    let mut out = DVector::zeros(z.len());
    basis.expand_into(&from_spectrum(&w, &v), out.as_mut_slice());
    out
}

#[derive(Clone, Debug)]
struct Descent {
    x: DVector<f64>,
    iterations: usize,
    converged: bool,
    /// Best objective after each iteration.
    trace: Vec<f64>,
}

/// Accelerated projected gradient on `Delta(r) + mu sqrt(d) r_0` over the
/// chosen feasible set, with function-value restart.
fn accelerated_descent(
    problem: &Problem<'_>,
    set: Feasible,
    mu: f64,
    start: &DVector<f64>,
    config: &SolverConfig,
    keep_trace: bool,
) -> Descent {
    let gram = problem.normal.gram();
    let mut lipschitz = problem.normal.lipschitz();
    let n = start.len();
    let sqrt_d = (problem.dim() as f64).sqrt();
    let objective = |x: &DVector<f64>, gx: &DVector<f64>| -> f64 {
        problem.quadratic(x, gx) + mu * sqrt_d * x[0]
    };

    let mut x = project_coefficients(&problem.basis, start, set);
    let mut gx = DVector::zeros(n);
    gx.gemv(1.0, gram, &x, 0.0);
    let mut f = objective(&x, &gx);
    let mut x_prev = x.clone();
    let mut gx_prev = gx.clone();
    let mut theta = 1.0f64;

    let scale = 2.0 * problem.atm.norm();
    let mut y = DVector::zeros(n);
    let mut gy = DVector::zeros(n);
    let mut gx_new = DVector::zeros(n);
    let mut stall = 0usize;
    let mut converged = false;
    let mut iterations = 0;
    let mut trace = Vec::new();

    if lipschitz <= 0.0 {
        // Zero design: every feasible point is optimal for Delta alone.
        lipschitz = 1.0;
    }

    for k in 1..=config.max_iterations {
        iterations = k;
        let theta_next = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
        let beta = (theta - 1.0) / theta_next;

        y.copy_from(&x);
        y.axpy(beta, &x, 1.0);
        y.axpy(-beta, &x_prev, 1.0);
        gy.copy_from(&gx);
        gy.axpy(beta, &gx, 1.0);
        gy.axpy(-beta, &gx_prev, 1.0);

        // z = y - grad/L with grad = 2(Gy - b) + mu sqrt(d) e_0
        let mut z = y.clone();
        z.axpy(-2.0 / lipschitz, &gy, 1.0);
        z.axpy(2.0 / lipschitz, &problem.atm, 1.0);
        z[0] -= mu * sqrt_d / lipschitz;

        let x_new = project_coefficients(&problem.basis, &z, set);
        gx_new.gemv(1.0, gram, &x_new, 0.0);
        let f_new = objective(&x_new, &gx_new);
        let mapping = lipschitz * (&x_new - &y).norm();

        if config.restart && f_new > f {
            if beta == 0.0 {
                // A plain gradient step went uphill: the curvature bound was
                // too optimistic.
                lipschitz *= 2.0;
            }
            theta = 1.0;
            x_prev.copy_from(&x);
            gx_prev.copy_from(&gx);
            if keep_trace {
                trace.push(f);
            }
            continue;
        }

        let change = (f - f_new).abs();
        x_prev = std::mem::replace(&mut x, x_new);
        std::mem::swap(&mut gx_prev, &mut gx);
        gx.copy_from(&gx_new);
        f = f_new;
        theta = theta_next;
        if keep_trace {
            trace.push(f);
        }

        let floor = 1e-12 * lipschitz * x.norm();
        if mapping <= config.kkt_tolerance * scale + floor {
            converged = true;
            break;
        }
        if change <= config.rel_tolerance * f.abs() {
            stall += 1;
            if stall >= STALL_WINDOW {
                converged = true;
                break;
            }
        } else {
            stall = 0;
        }
    }

    Descent {
        x,
        iterations,
        converged,
        trace,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsDiagnostics {
    pub epsilon: f64,
    /// Trace multiplier at which the residual constraint is active.
    pub multiplier: f64,
    /// Residual of the unnormalized solution.
    pub constrained_residual: f64,
    pub trace_before_normalization: f64,
}

#[derive(Clone, Debug)]
pub struct Estimate {
    pub rho: DensityMatrix,
    /// `Delta` of the returned (normalized) estimate.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub cs: Option<CsDiagnostics>,
}

/// `Delta = |M - A expand(rho)|^2`.
pub fn residual_delta(
    rho: &DensityMatrix,
    record: &MeasurementRecord,
    design: &DesignMatrix,
) -> Result<f64> {
    if design.rows() != record.len() {
        return Err(Error::DimensionMismatch {
            expected: design.rows(),
            found: record.len(),
        });
    }
    let d = (design.cols() as f64).sqrt().round() as usize;
    if rho.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: rho.dim(),
        });
    }
    let basis = HermitianBasis::new(d)?;
    let pred = design.predict(&basis.expand(rho.matrix())?)?;
    Ok(pred
        .iter()
        .zip(&record.values)
        .map(|(p, m)| (m - p) * (m - p))
        .sum())
}

/// Least squares over density matrices, started from the maximally mixed
/// state.
pub fn solve_ls(
    record: &MeasurementRecord,
    design: &DesignMatrix,
    config: &SolverConfig,
) -> Result<Estimate> {
    let problem = Problem::new(design, record, config)?;
    solve_ls_problem(&problem, config)
}

pub fn solve_ls_problem(problem: &Problem<'_>, config: &SolverConfig) -> Result<Estimate> {
    config.validate()?;
    let d = problem.dim();
    let start = problem
        .basis
        .expand(DensityMatrix::maximally_mixed(d).matrix())?;
    let run = accelerated_descent(problem, Feasible::Density, 0.0, &start, config, false);
    Ok(Estimate {
        rho: DensityMatrix::from_trusted(problem.basis.reconstruct_from(run.x.as_slice())),
        residual: problem.residual(&run.x),
        iterations: run.iterations,
        converged: run.converged,
        cs: None,
    })
}

/// Best-so-far objective per iteration of the LS descent; used to check
/// monotonicity.
pub fn ls_objective_trace(problem: &Problem<'_>, config: &SolverConfig) -> Result<Vec<f64>> {
    let d = problem.dim();
    let start = problem
        .basis
        .expand(DensityMatrix::maximally_mixed(d).matrix())?;
    Ok(accelerated_descent(problem, Feasible::Density, 0.0, &start, config, true).trace)
}

/// Trace minimization under a residual bound:
/// `min Tr rho  s.t.  Delta(rho) <= epsilon, rho >= 0`, then renormalized.
pub fn solve_cs(
    record: &MeasurementRecord,
    design: &DesignMatrix,
    epsilon: f64,
    config: &SolverConfig,
) -> Result<Estimate> {
    let problem = Problem::new(design, record, config)?;
    CsPath::new(&problem, config)?.solve(epsilon)
}

#[derive(Clone, Debug)]
struct PathPoint {
    mu: f64,
    x: DVector<f64>,
    delta: f64,
    iterations: usize,
    converged: bool,
}

/// Solutions of the penalized problem `min_{rho >= 0} Delta + mu Tr rho` for
/// one data set. `Delta(mu)` is non-decreasing, so a residual target is met
/// by bisection on `log mu`; solved points are cached and reused as brackets
/// and warm starts for later targets.
#[derive(Debug)]
pub struct CsPath<'p, 'a> {
    problem: &'p Problem<'a>,
    config: SolverConfig,
    /// Smallest multiplier for which rho = 0 is optimal.
    mu_zero: f64,
    points: Vec<PathPoint>,
}

impl<'p, 'a> CsPath<'p, 'a> {
    /// Solves the unpenalized PSD least-squares problem to find the smallest
    /// attainable residual.
    pub fn new(problem: &'p Problem<'a>, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        let config = &SolverConfig {
            rel_tolerance: config.cs_rel_tolerance,
            ..config.clone()
        };
        // rho = 0 is optimal iff mu I - 2 mat(A^T M) >= 0.
        let b = problem.basis.reconstruct_from(problem.atm.as_slice());
        let (w, _) = hermitian_eigen(&b);
        let mu_zero = 2.0 * w.iter().copied().fold(0.0f64, f64::max);

        let n = problem.basis.len();
        let start = DVector::zeros(n);
        let floor = accelerated_descent(problem, Feasible::Psd, 0.0, &start, config, false);
        let floor_point = PathPoint {
            mu: 0.0,
            delta: problem.residual(&floor.x),
            x: floor.x,
            iterations: floor.iterations,
            converged: floor.converged,
        };
        let zero_point = PathPoint {
            mu: mu_zero,
            x: DVector::zeros(n),
            delta: problem.norm_sq,
            iterations: 0,
            converged: true,
        };
        Ok(CsPath {
            problem,
            config: config.clone(),
            mu_zero,
            points: vec![floor_point, zero_point],
        })
    }

    /// Smallest residual over the PSD cone, as far as the solves so far
    /// have found it.
    pub fn min_residual(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.delta)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn record_norm_sq(&self) -> f64 {
        self.problem.norm_sq
    }

    /// Residual of the penalized solution at multiplier `mu`.
    pub fn residual_at(&mut self, mu: f64) -> f64 {
        self.point_at(mu).delta
    }

    fn point_at(&mut self, mu: f64) -> PathPoint {
        if let Some(p) = self.points.iter().find(|p| p.mu == mu) {
            return p.clone();
        }
        if mu >= self.mu_zero {
            let mut p = self.points.last().expect("zero point").clone();
            p.mu = mu;
            return p;
        }
        // Warm start from the cached solution nearest in log(mu).
        let warm = self
            .points
            .iter()
            .filter(|p| p.mu > 0.0 && p.mu < self.mu_zero)
            .min_by(|a, b| {
                let da = (a.mu.ln() - mu.ln()).abs();
                let db = (b.mu.ln() - mu.ln()).abs();
                da.total_cmp(&db)
            })
            .map(|p| p.x.clone())
            .unwrap_or_else(|| self.points[0].x.clone());
        let run = accelerated_descent(self.problem, Feasible::Psd, mu, &warm, &self.config, false);
        let point = PathPoint {
            mu,
            delta: self.problem.residual(&run.x),
            x: run.x,
            iterations: run.iterations,
            converged: run.converged,
        };
        let pos = self.points.partition_point(|p| p.mu < mu);
        self.points.insert(pos, point.clone());
        point
    }

    pub fn solve(&mut self, epsilon: f64) -> Result<Estimate> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        let norm_sq = self.problem.norm_sq;
        // rho = 0 already meets the bound, up to summation round-off in |M|^2.
        if epsilon >= norm_sq * (1.0 - 1e-12) {
            return Err(Error::ZeroState {
                epsilon,
                record_norm_sq: norm_sq,
            });
        }
        let tol = self.config.cs_residual_tolerance;
        let floor = self.min_residual();
        if floor > epsilon * (1.0 + tol) {
            return Err(Error::InfeasibleEpsilon {
                epsilon,
                min_residual: floor,
            });
        }
        let accept = |delta: f64| (delta - epsilon).abs() <= tol * epsilon;
        let mut total_iterations = self.points[0].iterations;

        let mut found = if floor >= epsilon * (1.0 - tol) {
            // Only the least-residual point meets epsilon.
            self.points
                .iter()
                .min_by(|a, b| a.delta.total_cmp(&b.delta))
                .cloned()
        } else {
            self.points
                .iter()
                .filter(|p| p.mu < self.mu_zero && accept(p.delta))
                .min_by(|a, b| {
                    (a.delta - epsilon)
                        .abs()
                        .total_cmp(&(b.delta - epsilon).abs())
                })
                .cloned()
        };

        // Bracket from cached points, consistent even if inexact solves make
        // Delta(mu) slightly non-monotone.
        let mut hi = self
            .points
            .iter()
            .filter(|p| p.delta > epsilon)
            .map(|p| p.mu)
            .fold(self.mu_zero, f64::min);
        let mut lo = self
            .points
            .iter()
            .filter(|p| p.delta < epsilon && p.mu < hi)
            .map(|p| p.mu)
            .fold(0.0, f64::max);
        let mut bisections = 0;
        while found.is_none() && bisections < self.config.cs_max_bisections {
            bisections += 1;
            let mid = if lo > 0.0 {
                (lo * hi).sqrt()
            } else {
                // Walk down in large steps until bracketed.
                hi * 1e-2
            };
            if mid < self.mu_zero * 1e-14 || (lo > 0.0 && hi / lo < 1.0 + 1e-9) {
                break;
            }
            let point = self.point_at(mid);
            total_iterations += point.iterations;
            if accept(point.delta) {
                found = Some(point);
            } else if point.delta < epsilon {
                lo = mid;
            } else {
                hi = mid;
            }
        }

        let (point, on_target) = match found {
            Some(p) => (p, true),
            None => {
                // Closest solved point; reported as not converged.
                let p = self
                    .points
                    .iter()
                    .filter(|p| p.mu < self.mu_zero)
                    .min_by(|a, b| {
                        (a.delta - epsilon)
                            .abs()
                            .total_cmp(&(b.delta - epsilon).abs())
                    })
                    .cloned()
                    .expect("floor point exists");
                (p, false)
            }
        };

        let trace = (self.problem.dim() as f64).sqrt() * point.x[0];
        if !(trace > 1e-12 * self.problem.basis.dim() as f64) {
            return Err(Error::ZeroState {
                epsilon,
                record_norm_sq: norm_sq,
            });
        }
        let normalized = &point.x / trace;
        Ok(Estimate {
            rho: DensityMatrix::from_trusted(
                self.problem.basis.reconstruct_from(normalized.as_slice()),
            ),
            residual: self.problem.residual(&normalized),
            iterations: total_iterations,
            converged: point.converged && on_target,
            cs: Some(CsDiagnostics {
                epsilon,
                multiplier: point.mu,
                constrained_residual: point.delta,
                trace_before_normalization: trace,
            }),
        })
    }
}
