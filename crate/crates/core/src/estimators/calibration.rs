use nalgebra::DMatrixView;
use serde::{Deserialize, Serialize};

use super::solver::{CsPath, NormalEquations, Problem, SolverConfig};
use crate::dynamics::ObservableSeries;
use crate::error::{Error, Result};
use crate::record::{design_matrix, synthesize_record, DesignMatrix, MeasurementRecord};
use crate::spin::{fidelity, HermitianBasis, PureState};

/// Normal equations of the leading rows of one design matrix, one entry per
/// truncation time. Built incrementally, so the whole grid costs about as
/// much as the longest prefix.
#[derive(Clone, Debug)]
pub struct PrefixNormals {
    entries: Vec<PrefixEntry>,
}

#[derive(Clone, Debug)]
struct PrefixEntry {
    t_us: f64,
    rows: usize,
    normal: NormalEquations,
}

impl PrefixNormals {
    pub fn build(
        design: &DesignMatrix,
        t_grid_us: &[f64],
        power_iterations: usize,
    ) -> Result<Self> {
        let mut grid = t_grid_us.to_vec();
        if grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidArgument(
                "truncation times must be positive".into(),
            ));
        }
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let a = design.matrix();
        let mut gram = nalgebra::DMatrix::zeros(a.ncols(), a.ncols());
        let mut done = 0;
        let mut entries = Vec::with_capacity(grid.len());
        for t in grid {
            let rows = crate::dynamics::samples_until(design.times_us(), t);
            if rows > done {
                let block = a.rows(done, rows - done);
                gram.gemm_tr(1.0, &block, &block, 1.0);
                done = rows;
            }
            entries.push(PrefixEntry {
                t_us: t,
                rows,
                normal: NormalEquations::from_gram(gram.clone(), power_iterations),
            });
        }
        Ok(PrefixNormals { entries })
    }

    /// Rows and normal equations for truncation time `t_us`.
    pub fn get(&self, t_us: f64) -> Result<(usize, &NormalEquations)> {
        self.entries
            .iter()
            .find(|e| e.t_us == t_us)
            .map(|e| (e.rows, &e.normal))
            .ok_or(Error::GridMismatch)
    }

    pub fn times_us(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.t_us).collect()
    }
}

/// Problem on the first `rows` samples of a record.
pub fn prefix_problem<'a>(
    design: &'a DesignMatrix,
    record: &'a MeasurementRecord,
    rows: usize,
    normal: &'a NormalEquations,
) -> Result<Problem<'a>> {
    if rows > design.rows() || rows > record.len() {
        return Err(Error::DimensionMismatch {
            expected: rows,
            found: design.rows().min(record.len()),
        });
    }
    let view: DMatrixView<'a, f64> = design.matrix().rows(0, rows);
    Problem::with_normal(view, &record.values[..rows], normal)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMetadata {
    pub t_grid_us: Vec<f64>,
    pub samples: Vec<usize>,
    /// Fidelity-maximizing epsilon per grid time; `None` where no epsilon
    /// in the bracket gave a valid estimate.
    pub optimal_epsilon: Vec<Option<f64>>,
    pub optimal_fidelity: Vec<Option<f64>>,
    pub gain_k: f64,
    pub sigma: f64,
    pub noise_seed: u64,
    /// RMS deviation of the optima from the rule, over their mean.
    pub relative_fit_residual: f64,
}

/// `epsilon(N) = slope N + intercept` for a record of N samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRule {
    pub slope: f64,
    pub intercept: f64,
    pub metadata: Option<CalibrationMetadata>,
}

impl EpsilonRule {
    pub fn new(slope: f64, intercept: f64) -> Result<Self> {
        let rule = EpsilonRule {
            slope,
            intercept,
            metadata: None,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slope.is_finite() && self.slope > 0.0) || !self.intercept.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon rule needs a positive slope, got {} (intercept {})",
                self.slope, self.intercept
            )));
        }
        Ok(())
    }

    pub fn epsilon(&self, samples: usize) -> f64 {
        (self.slope * samples as f64 + self.intercept).max(f64::MIN_POSITIVE)
    }
}

const SCAN_POINTS: usize = 13;
const GOLDEN_STEPS: usize = 14;

/// Calibrates the CS threshold on one known state; the record is simulated
/// and reconstructed with the same series.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_epsilon(
    state: &PureState,
    series: &ObservableSeries,
    gain_k: f64,
    sigma: f64,
    t_grid_us: &[f64],
    seed: u64,
    config: &SolverConfig,
) -> Result<EpsilonRule> {
    calibrate_epsilon_with_model(
        state, series, series, gain_k, sigma, t_grid_us, seed, config,
    )
}

/// As [`calibrate_epsilon`], with the record simulated from `truth` and the
/// estimates built from `model`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_epsilon_with_model(
    state: &PureState,
    truth: &ObservableSeries,
    model: &ObservableSeries,
    gain_k: f64,
    sigma: f64,
    t_grid_us: &[f64],
    seed: u64,
    config: &SolverConfig,
) -> Result<EpsilonRule> {
    if t_grid_us.is_empty() {
        return Err(Error::InvalidArgument("calibration grid is empty".into()));
    }
    if truth.times_us != model.times_us {
        return Err(Error::GridMismatch);
    }
    let record = synthesize_record(&state.density(), truth, gain_k, sigma, seed)?;
    let basis = HermitianBasis::new(model.dim())?;
    let design = design_matrix(model, &basis, gain_k)?;
    let normals = PrefixNormals::build(&design, t_grid_us, config.power_iterations)?;
    calibrate_on_record(state, &record, &design, &normals, t_grid_us, config)
}

/// Calibration against an existing record and design.
pub fn calibrate_on_record(
    state: &PureState,
    record: &MeasurementRecord,
    design: &DesignMatrix,
    normals: &PrefixNormals,
    t_grid_us: &[f64],
    config: &SolverConfig,
) -> Result<EpsilonRule> {
    let mut samples = Vec::with_capacity(t_grid_us.len());
    let mut optimal_epsilon = Vec::with_capacity(t_grid_us.len());
    let mut optimal_fidelity = Vec::with_capacity(t_grid_us.len());
    for &t in t_grid_us {
        let (rows, normal) = normals.get(t)?;
        samples.push(rows);
        let best = if rows == 0 {
            None
        } else {
            let problem = prefix_problem(design, record, rows, normal)?;
            best_epsilon(state, &problem, config)?
        };
        optimal_epsilon.push(best.map(|b| b.0));
        optimal_fidelity.push(best.map(|b| b.1));
    }

    let points: Vec<(f64, f64)> = samples
        .iter()
        .zip(&optimal_epsilon)
        .filter_map(|(&n, e)| e.map(|e| (n as f64, e)))
        .collect();
    if points.is_empty() {
        return Err(Error::CalibrationFailed(
            "no epsilon in the bracket produced a valid estimate at any grid time".into(),
        ));
    }
    let (slope, intercept, rms) = fit_rule(&points);
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let rule = EpsilonRule {
        slope,
        intercept,
        metadata: Some(CalibrationMetadata {
            t_grid_us: t_grid_us.to_vec(),
            samples,
            optimal_epsilon,
            optimal_fidelity,
            gain_k: record.gain_k,
            sigma: record.sigma,
            noise_seed: record.noise_seed,
            relative_fit_residual: rms / mean,
        }),
    };
    rule.validate()
        .map_err(|e| Error::CalibrationFailed(e.to_string()))?;
    Ok(rule)
}

/// Line through the origin, unless adding an intercept shrinks the residual
/// by more than a factor of two. Returns slope, intercept and RMS residual.
fn fit_rule(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let slope0 = sxy / sxx;
    let rms = |a: f64, b: f64| {
        (points
            .iter()
            .map(|p| (p.1 - a * p.0 - b).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    };
    let rms0 = rms(slope0, 0.0);
    if points.len() < 3 {
        return (slope0, 0.0, rms0);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let cxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if cxx == 0.0 {
        return (slope0, 0.0, rms0);
    }
    let slope1 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / cxx;
    let intercept1 = my - slope1 * mx;
    let rms1 = rms(slope1, intercept1);
    if slope1 > 0.0 && rms0 > 2.0 * rms1 {
        (slope1, intercept1, rms1)
    } else {
        (slope0, 0.0, rms0)
    }
}

/// Log-spaced scan of the feasible epsilon range followed by golden-section
/// refinement around the best scan point.
fn best_epsilon(
    state: &PureState,
    problem: &Problem<'_>,
    config: &SolverConfig,
) -> Result<Option<(f64, f64)>> {
    let mut path = CsPath::new(problem, config)?;
    let norm_sq = path.record_norm_sq();
    let lo =
        (path.min_residual() * (1.0 + 2.0 * config.cs_residual_tolerance)).max(1e-12 * norm_sq);
    let hi = norm_sq * (1.0 - 2.0 * config.cs_residual_tolerance);
    if !(lo > 0.0 && lo < hi) {
        return Ok(None);
    }

    let mut best: Option<(f64, f64)> = None;
    let mut score = |log_eps: f64, path: &mut CsPath<'_, '_>| -> Result<f64> {
        let eps = log_eps.exp();
        let f = match path.solve(eps) {
            Ok(est) => fidelity(state, &est.rho)?,
            // Any failed solve scores below every valid estimate.
            Err(_) => -1.0,
        };
        if f >= 0.0 && best.is_none_or(|b| f > b.1) {
            best = Some((eps, f));
        }
        Ok(f)
    };

    let (a, b) = (lo.ln(), hi.ln());
    let nodes: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| a + (b - a) * i as f64 / (SCAN_POINTS - 1) as f64)
        .collect();
    let mut values = Vec::with_capacity(SCAN_POINTS);
    for &x in &nodes {
        values.push(score(x, &mut path)?);
    }
    let i = (0..SCAN_POINTS)
        .max_by(|&p, &q| values[p].total_cmp(&values[q]).then(q.cmp(&p)))
        .expect("scan is nonempty");
    if values[i] < 0.0 {
        return Ok(None);
    }

    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut left = nodes[i.saturating_sub(1)];
    let mut right = nodes[(i + 1).min(SCAN_POINTS - 1)];
    let mut x1 = right - ratio * (right - left);
    let mut x2 = left + ratio * (right - left);
    let mut f1 = score(x1, &mut path)?;
    let mut f2 = score(x2, &mut path)?;
    for _ in 0..GOLDEN_STEPS {
        if f1 >= f2 {
            right = x2;
            x2 = x1;
            f2 = f1;
            x1 = right - ratio * (right - left);
            f1 = score(x1, &mut path)?;
        } else {
            left = x1;
            x1 = x2;
            f1 = f2;
            x2 = left + ratio * (right - left);
            f2 = score(x2, &mut path)?;
        }
    }
    Ok(best)
}
