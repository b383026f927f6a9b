//! Random-state suites: fidelity against record length for both estimators,
//! exponential-rise fits, model-mismatch penalties and the pure-versus-mixed
//! comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest;
use crate::dynamics::{
    ensemble_observables, random_waveforms, ControlParams, ControlWaveforms, InhomogeneityModel,
    ObservableSeries, DEFAULT_SAMPLE_DT_US,
};
use crate::error::{Error, Result};
use crate::estimators::{
    calibrate_on_record, prefix_problem, solve_ls_problem, CsPath, EpsilonRule, Estimate,
    PrefixNormals, SolverConfig,
};
use crate::record::{design_matrix, synthesize_record, DesignMatrix, MeasurementRecord};
use crate::rng::child_seed;
use crate::spin::{
    fidelity, haar_random_pure_state, hermitian_eigen, DensityMatrix, HermitianBasis, PureState,
};

/// Dynamics used either to simulate records or to reconstruct from them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub params: ControlParams,
    pub inhomogeneity: InhomogeneityModel,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.inhomogeneity.validate()
    }

    /// The same control parameters without the ensemble average.
    pub fn nominal(&self) -> ModelSpec {
        ModelSpec {
            params: self.params.clone(),
            inhomogeneity: InhomogeneityModel::homogeneous(),
        }
    }

    pub fn series(
        &self,
        waveforms: &ControlWaveforms,
        sample_dt_us: f64,
        t_us: f64,
    ) -> Result<ObservableSeries> {
        ensemble_observables(
            waveforms,
            &self.params,
            &self.inhomogeneity,
            sample_dt_us,
            t_us,
        )
    }

    /// Two specs with the same physics give the same series.
    fn same_dynamics(&self, other: &ModelSpec) -> bool {
        self.params == other.params
            && (self.inhomogeneity == other.inhomogeneity
                || (self.inhomogeneity.is_trivial() && other.inhomogeneity.is_trivial()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSeeds {
    pub waveforms: u64,
    pub states: u64,
    pub noise: u64,
}

impl Default for SuiteSeeds {
    fn default() -> Self {
        SuiteSeeds {
            waveforms: 7,
            states: 11,
            noise: 13,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    /// Total number of Haar states; the first calibrates epsilon and is
    /// excluded from the curves.
    pub n_states: usize,
    pub t_total_us: f64,
    pub t_grid_us: Vec<f64>,
    pub calibration_grid_us: Vec<f64>,
    pub fit_window_us: f64,
    pub gain_k: f64,
    pub sigma: f64,
    pub sample_dt_us: f64,
    pub seeds: SuiteSeeds,
    pub truth: ModelSpec,
    pub reconstruction: ModelSpec,
    pub solver: SolverConfig,
    /// Skip the CS estimator and its calibration.
    pub ls_only: bool,
}

pub const DEFAULT_SIGMA: f64 = 0.05;

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            n_states: 49,
            t_total_us: 3000.0,
            t_grid_us: (1..=30).map(|i| 100.0 * i as f64).collect(),
            calibration_grid_us: (1..=10).map(|i| 300.0 * i as f64).collect(),
            fit_window_us: 1000.0,
            gain_k: 1.0,
            sigma: DEFAULT_SIGMA,
            sample_dt_us: DEFAULT_SAMPLE_DT_US,
            seeds: SuiteSeeds::default(),
            truth: ModelSpec::default(),
            reconstruction: ModelSpec::default(),
            solver: SolverConfig::default(),
            ls_only: false,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_states < 2 {
            return Err(Error::InvalidArgument(
                "a suite needs at least two states (one is used for calibration)".into(),
            ));
        }
        if !(self.t_total_us.is_finite() && self.t_total_us > 0.0) {
            return Err(Error::InvalidArgument("T_total must be positive".into()));
        }
        if self.t_grid_us.is_empty() {
            return Err(Error::InvalidArgument("T grid is empty".into()));
        }
        let calibration: &[f64] = if self.ls_only {
            &[]
        } else {
            &self.calibration_grid_us
        };
        for &t in self.t_grid_us.iter().chain(calibration) {
            if !(t > 0.0 && t <= self.t_total_us + 1e-9) {
                return Err(Error::InvalidArgument(format!(
                    "grid time {t} us lies outside (0, {}]",
                    self.t_total_us
                )));
            }
        }
        if self.t_grid_us.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "T grid must be strictly increasing".into(),
            ));
        }
        if !self.ls_only && self.calibration_grid_us.is_empty() {
            return Err(Error::InvalidArgument("calibration grid is empty".into()));
        }
        if !(self.gain_k.is_finite() && self.gain_k > 0.0) {
            return Err(Error::InvalidArgument("K must be positive".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidArgument("sigma must be non-negative".into()));
        }
        if !(self.fit_window_us > 0.0) {
            return Err(Error::InvalidArgument("fit window must be positive".into()));
        }
        self.truth.validate()?;
        self.reconstruction.validate()?;
        self.solver.validate()
    }

    pub fn digest(&self) -> String {
        digest::of(self)
    }

    /// Seed of the Haar state with the given index.
    pub fn state_seed(&self, index: usize) -> u64 {
        child_seed(self.seeds.states, index as u64)
    }

    pub fn noise_seed(&self, index: usize) -> u64 {
        child_seed(self.seeds.noise, index as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Ls,
    Cs,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Ls => "LS",
            Estimator::Cs => "CS",
        }
    }
}

/// One reconstruction, or the error that prevented it.
#[derive(Clone, Debug)]
pub enum Outcome {
    Solved {
        fidelity: f64,
        estimate: Estimate,
    },
    Failed {
        class: &'static str,
        message: String,
    },
}

impl Outcome {
    fn from_result(r: Result<(f64, Estimate)>) -> Outcome {
        match r {
            Ok((fidelity, estimate)) => Outcome::Solved { fidelity, estimate },
            Err(e) => Outcome::Failed {
                class: e.class(),
                message: e.to_string(),
            },
        }
    }

    pub fn fidelity(&self) -> Option<f64> {
        match self {
            Outcome::Solved { fidelity, .. } => Some(*fidelity),
            Outcome::Failed { .. } => None,
        }
    }

    pub fn estimate(&self) -> Option<&Estimate> {
        match self {
            Outcome::Solved { estimate, .. } => Some(estimate),
            Outcome::Failed { .. } => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PointResult {
    pub t_us: f64,
    pub samples: usize,
    pub ls: Outcome,
    pub cs: Option<Outcome>,
}

#[derive(Clone, Debug)]
pub struct StateResult {
    /// Index into the suite's state list; 0 is the calibration state.
    pub index: usize,
    pub seed: u64,
    pub points: Vec<PointResult>,
}

/// Fidelity of one estimator per (state, T) and its statistics over states.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    /// `per_state[s][k]`: state `s`, grid time `k`; `None` where the solve
    /// failed.
    pub per_state: Vec<Vec<Option<f64>>>,
    pub mean: Vec<Option<f64>>,
    /// Sample standard deviation over states.
    pub sd: Vec<Option<f64>>,
    pub count: Vec<usize>,
}

impl Curve {
    pub fn from_per_state(per_state: Vec<Vec<Option<f64>>>, points: usize) -> Curve {
        let mut mean = Vec::with_capacity(points);
        let mut sd = Vec::with_capacity(points);
        let mut count = Vec::with_capacity(points);
        for k in 0..points {
            let vals: Vec<f64> = per_state.iter().filter_map(|s| s[k]).collect();
            let n = vals.len();
            count.push(n);
            if n == 0 {
                mean.push(None);
                sd.push(None);
                continue;
            }
            let m = vals.iter().sum::<f64>() / n as f64;
            mean.push(Some(m));
            sd.push(if n > 1 {
                Some((vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt())
            } else {
                None
            });
        }
        Curve {
            per_state,
            mean,
            sd,
            count,
        }
    }

    /// Standard error of the mean at grid point `k`.
    pub fn standard_error(&self, k: usize) -> Option<f64> {
        self.sd[k].map(|s| s / (self.count[k] as f64).sqrt())
    }

    /// Grid points where the mean drops below its predecessor by more than
    /// the combined standard error of the two means.
    pub fn monotonicity_violations(&self) -> Vec<usize> {
        (1..self.mean.len())
            .filter(|&k| match (self.mean[k - 1], self.mean[k]) {
                (Some(a), Some(b)) => {
                    let se = (self.standard_error(k - 1).unwrap_or(0.0).powi(2)
                        + self.standard_error(k).unwrap_or(0.0).powi(2))
                    .sqrt();
                    b < a - se
                }
                _ => false,
            })
            .collect()
    }

    /// Index of the largest mean.
    pub fn peak(&self) -> Option<usize> {
        argmax(&self.mean)
    }
}

fn argmax(values: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|b| v > b.1) {
                best = Some((k, v));
            }
        }
    }
    best.map(|b| b.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FidelityCurves {
    pub t_us: Vec<f64>,
    /// Suite indices of the evaluation states, in `per_state` order.
    pub states: Vec<usize>,
    pub ls: Curve,
    pub cs: Option<Curve>,
}

impl FidelityCurves {
    pub fn curve(&self, estimator: Estimator) -> Option<&Curve> {
        match estimator {
            Estimator::Ls => Some(&self.ls),
            Estimator::Cs => self.cs.as_ref(),
        }
    }

    /// Grid index maximizing the average of the available estimator means.
    pub fn peak(&self) -> Option<usize> {
        let combined: Vec<Option<f64>> = (0..self.t_us.len())
            .map(|k| {
                let ls = self.ls.mean[k]?;
                match &self.cs {
                    Some(cs) => Some((ls + cs.mean[k]?) / 2.0),
                    None => Some(ls),
                }
            })
            .collect();
        argmax(&combined)
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOutput {
    pub curves: FidelityCurves,
    pub states: Vec<StateResult>,
    pub rule: Option<EpsilonRule>,
    pub config_digest: String,
    pub waveforms: ControlWaveforms,
}

/// Waveforms, truth dynamics, states and records: everything shared between
/// suites that differ only in the reconstruction model.
#[derive(Clone, Debug)]
pub struct SuiteData {
    pub waveforms: ControlWaveforms,
    pub truth_series: ObservableSeries,
    pub states: Vec<PureState>,
    pub records: Vec<MeasurementRecord>,
}

impl SuiteData {
    pub fn generate(config: &SuiteConfig) -> Result<Self> {
        config.validate()?;
        let waveforms = random_waveforms(config.t_total_us, config.seeds.waveforms)?;
        let truth_series =
            config
                .truth
                .series(&waveforms, config.sample_dt_us, config.t_total_us)?;
        let dim = truth_series.dim();
        let states = (0..config.n_states)
            .map(|j| haar_random_pure_state(dim, config.state_seed(j)))
            .collect::<Result<Vec<_>>>()?;
        let records = states
            .iter()
            .enumerate()
            .map(|(j, psi)| {
                synthesize_record(
                    &psi.density(),
                    &truth_series,
                    config.gain_k,
                    config.sigma,
                    config.noise_seed(j),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SuiteData {
            waveforms,
            truth_series,
            states,
            records,
        })
    }
}

pub fn run_suite(config: &SuiteConfig) -> Result<SuiteOutput> {
    let data = SuiteData::generate(config)?;
    run_suite_on(config, &data, &config.reconstruction)
}

/// Calibrates on state 0 and reconstructs every other state at every grid
/// time using `reconstruction` dynamics.
pub fn run_suite_on(
    config: &SuiteConfig,
    data: &SuiteData,
    reconstruction: &ModelSpec,
) -> Result<SuiteOutput> {
    config.validate()?;
    reconstruction.validate()?;
    let model_series = if reconstruction.same_dynamics(&config.truth) {
        data.truth_series.clone()
    } else {
        reconstruction.series(&data.waveforms, config.sample_dt_us, config.t_total_us)?
    };
    let basis = HermitianBasis::new(model_series.dim())?;
    let design = design_matrix(&model_series, &basis, config.gain_k)?;
    let mut grid: Vec<f64> = config.t_grid_us.clone();
    if !config.ls_only {
        grid.extend_from_slice(&config.calibration_grid_us);
    }
    let normals = PrefixNormals::build(&design, &grid, config.solver.power_iterations)?;

    let rule = if config.ls_only {
        None
    } else {
        Some(calibrate_on_record(
            &data.states[0],
            &data.records[0],
            &design,
            &normals,
            &config.calibration_grid_us,
            &config.solver,
        )?)
    };

    let tasks: Vec<(usize, usize)> = (1..config.n_states)
        .flat_map(|j| (0..config.t_grid_us.len()).map(move |k| (j, k)))
        .collect();
    let points: Vec<PointResult> = tasks
        .par_iter()
        .map(|&(j, k)| {
            reconstruct_point(
                &data.records[j],
                &design,
                &normals,
                config.t_grid_us[k],
                &config.solver,
                rule.as_ref(),
                |rho| fidelity(&data.states[j], rho),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let per_grid = config.t_grid_us.len();
    let mut states = Vec::with_capacity(config.n_states - 1);
    let mut chunks = points.into_iter();
    for j in 1..config.n_states {
        states.push(StateResult {
            index: j,
            seed: config.state_seed(j),
            points: chunks.by_ref().take(per_grid).collect(),
        });
    }
    let curves = curves_from(&config.t_grid_us, &states, !config.ls_only);
    Ok(SuiteOutput {
        curves,
        states,
        rule,
        config_digest: config.digest(),
        waveforms: data.waveforms.clone(),
    })
}

fn reconstruct_point(
    record: &MeasurementRecord,
    design: &DesignMatrix,
    normals: &PrefixNormals,
    t_us: f64,
    solver: &SolverConfig,
    rule: Option<&EpsilonRule>,
    score: impl Fn(&DensityMatrix) -> Result<f64>,
) -> Result<PointResult> {
    let (rows, normal) = normals.get(t_us)?;
    let scored = |r: Result<Estimate>| -> Outcome {
        Outcome::from_result(r.and_then(|e| Ok((score(&e.rho)?, e))))
    };
    let ls = scored(
        prefix_problem(design, record, rows, normal).and_then(|p| solve_ls_problem(&p, solver)),
    );
    let cs = rule.map(|rule| {
        scored(
            prefix_problem(design, record, rows, normal)
                .and_then(|p| CsPath::new(&p, solver)?.solve(rule.epsilon(rows))),
        )
    });
    Ok(PointResult {
        t_us,
        samples: rows,
        ls,
        cs,
    })
}

fn curves_from(t_grid_us: &[f64], states: &[StateResult], with_cs: bool) -> FidelityCurves {
    let n = t_grid_us.len();
    let ls = states
        .iter()
        .map(|s| s.points.iter().map(|p| p.ls.fidelity()).collect())
        .collect();
    let cs = with_cs.then(|| {
        Curve::from_per_state(
            states
                .iter()
                .map(|s| {
                    s.points
                        .iter()
                        .map(|p| p.cs.as_ref().and_then(Outcome::fidelity))
                        .collect()
                })
                .collect(),
            n,
        )
    });
    FidelityCurves {
        t_us: t_grid_us.to_vec(),
        states: states.iter().map(|s| s.index).collect(),
        ls: Curve::from_per_state(ls, n),
        cs,
    }
}

/// `(d-1)/d (1 - exp(-T/tau)) + 1/d`, the rise from the random-guess
/// fidelity 1/d to 1.
pub fn rise_model(t_ms: f64, tau_ms: f64, dim: usize) -> f64 {
    let floor = 1.0 / dim as f64;
    (1.0 - floor) * (1.0 - (-t_ms / tau_ms).exp()) + floor
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub tau_ms: f64,
    /// Points with T strictly below this were used.
    pub window_ms: f64,
    pub points: usize,
    /// `|F - fit|_2` over the window.
    pub residual_norm: f64,
    /// `|F - fit|_2 / |F|_2` over the window.
    pub relative_residual: f64,
}

const TAU_MIN_MS: f64 = 1e-4;
const TAU_MAX_MS: f64 = 1e4;

/// One-parameter least-squares fit of `rise_model` to the points with
/// `T < window_ms` (d = 16).
pub fn fit_exponential(
    t_ms: &[f64],
    fidelity: &[Option<f64>],
    window_ms: f64,
) -> Result<FitResult> {
    if t_ms.len() != fidelity.len() {
        return Err(Error::GridMismatch);
    }
    let pts: Vec<(f64, f64)> = t_ms
        .iter()
        .zip(fidelity)
        .filter_map(|(&t, f)| f.filter(|_| t < window_ms).map(|f| (t, f)))
        .collect();
    if pts.len() < 3 {
        return Err(Error::FitFailure(format!(
            "need at least 3 points below T = {window_ms} ms, found {}",
            pts.len()
        )));
    }
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.1), b.max(p.1))
        });
    if hi - lo < 1e-12 {
        return Err(Error::FitFailure(
            "curve is constant over the window".into(),
        ));
    }
    let sse = |log_tau: f64| -> f64 {
        let tau = log_tau.exp();
        pts.iter()
            .map(|&(t, f)| (f - rise_model(t, tau, 16)).powi(2))
            .sum()
    };

    let (a, b) = (TAU_MIN_MS.ln(), TAU_MAX_MS.ln());
    let n = 400;
    let node = |i: usize| a + (b - a) * i as f64 / n as f64;
    let best = (0..=n)
        .min_by(|&i, &j| sse(node(i)).total_cmp(&sse(node(j))))
        .expect("nonempty scan");
    if best == 0 || best == n {
        return Err(Error::FitFailure(format!(
            "best time constant lies at the edge of [{TAU_MIN_MS}, {TAU_MAX_MS}] ms"
        )));
    }
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut left, mut right) = (node(best - 1), node(best + 1));
    let mut x1 = right - ratio * (right - left);
    let mut x2 = left + ratio * (right - left);
    let (mut f1, mut f2) = (sse(x1), sse(x2));
    while right - left > 1e-13 {
        if f1 <= f2 {
            right = x2;
            x2 = x1;
            f2 = f1;
            x1 = right - ratio * (right - left);
            f1 = sse(x1);
        } else {
            left = x1;
            x1 = x2;
            f1 = f2;
            x2 = left + ratio * (right - left);
            f2 = sse(x2);
        }
    }
    let log_tau = (left + right) / 2.0;
    let residual_norm = sse(log_tau).sqrt();
    let norm = pts.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
    Ok(FitResult {
        tau_ms: log_tau.exp(),
        window_ms,
        points: pts.len(),
        residual_norm,
        relative_residual: residual_norm / norm,
    })
}

/// Fit of one estimator's mean curve with the suite's window.
pub fn fit_curve(
    curves: &FidelityCurves,
    estimator: Estimator,
    window_us: f64,
) -> Result<FitResult> {
    let curve = curves.curve(estimator).ok_or_else(|| {
        Error::FitFailure(format!("no {} curve in this suite", estimator.label()))
    })?;
    let t_ms: Vec<f64> = curves.t_us.iter().map(|t| t / 1000.0).collect();
    fit_exponential(&t_ms, &curve.mean, window_us / 1000.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorPenalty {
    pub t_us: Vec<f64>,
    pub ls: Vec<Option<f64>>,
    pub cs: Option<Vec<Option<f64>>>,
}

/// `eta(T) = F_a(T) - F_b(T)` for each estimator present in both.
pub fn error_penalty(a: &FidelityCurves, b: &FidelityCurves) -> Result<ErrorPenalty> {
    if a.t_us != b.t_us {
        return Err(Error::GridMismatch);
    }
    let diff = |x: &Curve, y: &Curve| -> Vec<Option<f64>> {
        x.mean
            .iter()
            .zip(&y.mean)
            .map(|(p, q)| Some((*p)? - (*q)?))
            .collect()
    };
    Ok(ErrorPenalty {
        t_us: a.t_us.clone(),
        ls: diff(&a.ls, &b.ls),
        cs: match (&a.cs, &b.cs) {
            (Some(x), Some(y)) => Some(diff(x, y)),
            _ => None,
        },
    })
}

#[derive(Clone, Debug)]
pub struct MismatchOutput {
    pub well_modeled: SuiteOutput,
    pub mismatched: SuiteOutput,
    pub penalty: ErrorPenalty,
    /// Grid index of the peak of the well-modeled curves.
    pub peak_index: Option<usize>,
}

/// Reconstructs the same records with the full truth model (a) and with its
/// nominal, homogeneous version (b).
pub fn mismatch_experiment(config: &SuiteConfig) -> Result<MismatchOutput> {
    if !config.truth.inhomogeneity.enabled {
        return Err(Error::InvalidArgument(
            "the mismatch experiment needs an inhomogeneous truth model".into(),
        ));
    }
    let data = SuiteData::generate(config)?;
    let well_modeled = run_suite_on(config, &data, &config.truth)?;
    let mismatched = run_suite_on(config, &data, &config.truth.nominal())?;
    let penalty = error_penalty(&well_modeled.curves, &mismatched.curves)?;
    let peak_index = well_modeled.curves.peak();
    Ok(MismatchOutput {
        well_modeled,
        mismatched,
        penalty,
        peak_index,
    })
}

/// Uhlmann fidelity between `rho` and the maximally mixed state,
/// `(sum_i sqrt(lambda_i))^2 / d`.
pub fn fidelity_to_mixed(rho: &DensityMatrix) -> f64 {
    let (w, _) = hermitian_eigen(rho.matrix());
    let s: f64 = w.iter().map(|&l| l.max(0.0).sqrt()).sum();
    (s * s / rho.dim() as f64).min(1.0)
}

#[derive(Clone, Debug)]
pub struct MixedComparison {
    pub pure: FidelityCurves,
    pub mixed: FidelityCurves,
    pub tau_pure: FitResult,
    pub tau_mixed: FitResult,
}

impl MixedComparison {
    pub fn ratio(&self) -> f64 {
        self.tau_mixed.tau_ms / self.tau_pure.tau_ms
    }
}

/// LS fidelity curves for Haar states and for the maximally mixed state
/// under independent noise draws, and their fitted time constants.
pub fn mixed_state_comparison(config: &SuiteConfig) -> Result<MixedComparison> {
    let mut config = config.clone();
    config.ls_only = true;
    config.validate()?;
    if config.sigma <= 0.0 {
        return Err(Error::InvalidArgument(
            "the mixed-state comparison needs sigma > 0".into(),
        ));
    }
    let data = SuiteData::generate(&config)?;
    let pure = run_suite_on(&config, &data, &config.reconstruction)?;

    let model_series = if config.reconstruction.same_dynamics(&config.truth) {
        data.truth_series.clone()
    } else {
        config
            .reconstruction
            .series(&data.waveforms, config.sample_dt_us, config.t_total_us)?
    };
    let basis = HermitianBasis::new(model_series.dim())?;
    let design = design_matrix(&model_series, &basis, config.gain_k)?;
    let normals = PrefixNormals::build(&design, &config.t_grid_us, config.solver.power_iterations)?;
    let mixed_state = DensityMatrix::maximally_mixed(basis.dim());
    let records = (1..config.n_states)
        .map(|j| {
            synthesize_record(
                &mixed_state,
                &data.truth_series,
                config.gain_k,
                config.sigma,
                config.noise_seed(j),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> = (0..records.len())
        .flat_map(|j| (0..config.t_grid_us.len()).map(move |k| (j, k)))
        .collect();
    let points = tasks
        .par_iter()
        .map(|&(j, k)| {
            reconstruct_point(
                &records[j],
                &design,
                &normals,
                config.t_grid_us[k],
                &config.solver,
                None,
                |rho| Ok(fidelity_to_mixed(rho)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let per_grid = config.t_grid_us.len();
    let mut chunks = points.into_iter();
    let states: Vec<StateResult> = (1..config.n_states)
        .map(|j| StateResult {
            index: j,
            seed: config.noise_seed(j),
            points: chunks.by_ref().take(per_grid).collect(),
        })
        .collect();
    let mixed = curves_from(&config.t_grid_us, &states, false);

    let tau_pure = fit_curve(&pure.curves, Estimator::Ls, config.fit_window_us)?;
    let tau_mixed = fit_curve(&mixed, Estimator::Ls, config.fit_window_us)?;
    Ok(MixedComparison {
        pure: pure.curves,
        mixed,
        tau_pure,
        tau_mixed,
    })
}
