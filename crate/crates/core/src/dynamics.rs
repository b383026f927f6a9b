//! Control Hamiltonian, piecewise-exact propagation and the Heisenberg-picture
//! observable series.
//!
//! The model lives in the frame rotating with the rf and microwave carriers,
//! so the controls are three phase waveforms: one per rf coil (15 us steps)
//! and one for the microwave (10 us steps). Within each step the Hamiltonian
//! is constant and the propagator is an exact matrix exponential.
//!
//! Internally Hamiltonians are expressed in rad/us and times in us.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest;
use crate::error::{Error, Result};
use crate::record::design_matrix;
use crate::rng;
use crate::spin::{
    embed_block, ensure_hermitian, hermitian_eigen, hermitian_part, identity, probe_observable,
    spin_operators, trace, HermitianBasis, HilbertSpace, Operator, Spin,
};

/// Duration of one rf phase step.
pub const RF_STEP_US: f64 = 15.0;
/// Duration of one microwave phase step.
pub const UW_STEP_US: f64 = 10.0;
/// Default sampling interval of the observable series and record.
pub const DEFAULT_SAMPLE_DT_US: f64 = 1.0;

/// Accumulated propagators are re-orthonormalized this often.
const REUNITARIZE_EVERY: usize = 500;
/// Slack used when comparing times on the step grid.
const GRID_SLACK_US: f64 = 1e-9;

const RAD_PER_S_TO_RAD_PER_US: f64 = 1e-6;

fn step_count(t_us: f64, step_us: f64) -> usize {
    ((t_us / step_us) - GRID_SLACK_US).ceil().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlWaveforms {
    #[serde(rename = "T_us")]
    pub t_us: f64,
    pub seed: u64,
    pub phi_x: Vec<f64>,
    pub phi_y: Vec<f64>,
    pub phi_uw: Vec<f64>,
}

impl ControlWaveforms {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_us.is_finite() && self.t_us > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "waveform duration must be positive, got {} us",
                self.t_us
            )));
        }
        let rf = step_count(self.t_us, RF_STEP_US);
        let uw = step_count(self.t_us, UW_STEP_US);
        for (name, list, want) in [
            ("phi_x", &self.phi_x, rf),
            ("phi_y", &self.phi_y, rf),
            ("phi_uw", &self.phi_uw, uw),
        ] {
            if list.len() != want {
                return Err(Error::InvalidArgument(format!(
                    "{name} has {} steps, expected {want}",
                    list.len()
                )));
            }
            if let Some(bad) = list
                .iter()
                .find(|p| !(0.0..std::f64::consts::TAU).contains(*p))
            {
                return Err(Error::InvalidArgument(format!(
                    "{name} contains phase {bad} outside [0, 2pi)"
                )));
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest::of(self)
    }

    fn step_indices(&self, t_us: f64) -> (usize, usize) {
        let rf = ((t_us + GRID_SLACK_US) / RF_STEP_US).floor() as usize;
        let uw = ((t_us + GRID_SLACK_US) / UW_STEP_US).floor() as usize;
        (rf.min(self.phi_x.len() - 1), uw.min(self.phi_uw.len() - 1))
    }
}

/// Independent uniform phases on [0, 2pi) for each of the three waveforms.
pub fn random_waveforms(t_us: f64, seed: u64) -> Result<ControlWaveforms> {
    if !(t_us.is_finite() && t_us > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "waveform duration must be positive, got {t_us} us"
        )));
    }
    let draw = |stream: u64, n: usize| -> Vec<f64> {
        let mut rng = rng::stream(seed, stream);
        (0..n)
            .map(|_| {
                let p = rng.random::<f64>() * std::f64::consts::TAU;
                if p < std::f64::consts::TAU {
                    p
                } else {
                    0.0
                }
            })
            .collect()
    };
    let rf = step_count(t_us, RF_STEP_US);
    let uw = step_count(t_us, UW_STEP_US);
    Ok(ControlWaveforms {
        t_us,
        seed,
        phi_x: draw(0, rf),
        phi_y: draw(1, rf),
        phi_uw: draw(2, uw),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlParams {
    pub omega_rf_rad_per_s: f64,
    pub omega_uw_rad_per_s: f64,
    pub detuning_rf_rad_per_s: f64,
    pub detuning_uw_rad_per_s: f64,
    /// Larmor response of the f = 3 manifold relative to f = 4.
    pub g_ratio: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        ControlParams {
            omega_rf_rad_per_s: std::f64::consts::TAU * 25.0e3,
            omega_uw_rad_per_s: std::f64::consts::TAU * 27.5e3,
            detuning_rf_rad_per_s: 0.0,
            detuning_uw_rad_per_s: 0.0,
            g_ratio: -1.0,
        }
    }
}

impl ControlParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.omega_rf_rad_per_s,
            self.omega_uw_rad_per_s,
            self.detuning_rf_rad_per_s,
            self.detuning_uw_rad_per_s,
            self.g_ratio,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "control parameters must be finite".into(),
            ));
        }
        if self.omega_rf_rad_per_s <= 0.0 || self.omega_uw_rad_per_s <= 0.0 {
            return Err(Error::InvalidArgument(
                "rf and microwave Rabi frequencies must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest::of(self)
    }
}

/// Gaussian spread of the rf Rabi frequency across the atomic ensemble,
/// averaged with Gauss-Hermite quadrature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InhomogeneityModel {
    pub enabled: bool,
    /// Fractional standard deviation of the rf amplitude.
    pub spread: f64,
    pub n_samples: usize,
}

impl Default for InhomogeneityModel {
    fn default() -> Self {
        InhomogeneityModel {
            enabled: false,
            spread: 0.02,
            n_samples: 5,
        }
    }
}

impl InhomogeneityModel {
    pub fn homogeneous() -> Self {
        Self::default()
    }

    pub fn gaussian(spread: f64, n_samples: usize) -> Self {
        InhomogeneityModel {
            enabled: true,
            spread,
            n_samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(Error::InvalidArgument(
                "inhomogeneity average needs at least one sample".into(),
            ));
        }
        if !(self.spread.is_finite() && self.spread >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "inhomogeneity spread must be non-negative, got {}",
                self.spread
            )));
        }
        Ok(())
    }

    /// True when the average reduces to the nominal dynamics.
    pub fn is_trivial(&self) -> bool {
        !self.enabled || self.spread == 0.0
    }

    /// (rf amplitude scale, weight) pairs. A disabled model is the single
    /// point (1, 1).
    pub fn samples(&self) -> Result<Vec<(f64, f64)>> {
        self.validate()?;
        if !self.enabled {
            return Ok(vec![(1.0, 1.0)]);
        }
        Ok(gauss_hermite(self.n_samples)
            .into_iter()
            .map(|(x, w)| (1.0 + self.spread * x, w))
            .collect())
    }

    pub fn digest(&self) -> String {
        digest::of(self)
    }
}

/// Nodes and weights for expectations over a standard normal variable
/// (Golub-Welsch on the probabilists' Hermite recurrence). Weights sum to 1.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    if n == 1 {
        return vec![(0.0, 1.0)];
    }
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.row(0).iter())
        .map(|(&x, &v)| (x, v * v))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Enforce the exact symmetry of the rule.
    let sym: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let (a, wa) = pairs[k];
            let (b, wb) = pairs[n - 1 - k];
            ((a - b) / 2.0, (wa + wb) / 2.0)
        })
        .collect();
    let total: f64 = sym.iter().map(|p| p.1).sum();
    sym.into_iter().map(|(x, w)| (x, w / total)).collect()
}

/// Embedded spin operators for the cesium ground manifold, built once.
#[derive(Clone, Debug)]
pub struct ControlSystem {
    space: HilbertSpace,
    fx3: Operator,
    fy3: Operator,
    fz3: Operator,
    fx4: Operator,
    fy4: Operator,
    fz4: Operator,
    /// |4,4><3,3|
    uw_raise: Operator,
    probe: Operator,
}

impl Default for ControlSystem {
    fn default() -> Self {
        Self::cesium()
    }
}

impl ControlSystem {
    pub fn cesium() -> Self {
        let space = HilbertSpace::cesium_ground();
        let f3 = Spin::from_twice(6);
        let f4 = Spin::from_twice(8);
        let o3 = spin_operators(f3);
        let o4 = spin_operators(f4);
        let e = |op: &Operator, s: Spin| embed_block(op, &space, s).expect("static layout");
        let mut uw_raise = Operator::zeros(space.dim(), space.dim());
        let i33 = space.index_of(f3, 3.0).expect("static layout");
        let i44 = space.index_of(f4, 4.0).expect("static layout");
        uw_raise[(i44, i33)] = Complex64::new(1.0, 0.0);
        ControlSystem {
            fx3: e(&o3.fx, f3),
            fy3: e(&o3.fy, f3),
            fz3: e(&o3.fz, f3),
            fx4: e(&o4.fx, f4),
            fy4: e(&o4.fy, f4),
            fz4: e(&o4.fz, f4),
            uw_raise,
            probe: probe_observable(&space).expect("static layout"),
            space,
        }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn probe(&self) -> &Operator {
        &self.probe
    }

    /// Rotating-frame Hamiltonian in rad/us for one set of phases, with the
    /// rf amplitude multiplied by `rf_scale`.
    pub fn hamiltonian(
        &self,
        params: &ControlParams,
        phi_x: f64,
        phi_y: f64,
        phi_uw: f64,
        rf_scale: f64,
    ) -> Operator {
        let rf = params.omega_rf_rad_per_s * RAD_PER_S_TO_RAD_PER_US * rf_scale;
        let uw = params.omega_uw_rad_per_s * RAD_PER_S_TO_RAD_PER_US;
        let g = params.g_ratio;
        let (sx, cx) = phi_x.sin_cos();
        let (sy, cy) = phi_y.sin_cos();
        let r = |v: f64| Complex64::new(v, 0.0);

        // x coil: the f = 4 manifold sees the field along angle phi_x, the
        // counter-rotating f = 3 manifold along -phi_x.
        let mut h = &self.fx4 * r(rf * cx) + &self.fy4 * r(rf * sx);
        h += &self.fx3 * r(g * rf * cx) - &self.fy3 * r(g * rf * sx);
        // y coil: same structure with x and y exchanged.
        h += &self.fy4 * r(rf * cy) + &self.fx4 * r(rf * sy);
        h += &self.fy3 * r(g * rf * cy) - &self.fx3 * r(g * rf * sy);

        let coupling = Complex64::from_polar(uw / 2.0, phi_uw);
        h += &self.uw_raise * coupling + self.uw_raise.adjoint() * coupling.conj();

        let drf = params.detuning_rf_rad_per_s * RAD_PER_S_TO_RAD_PER_US;
        if drf != 0.0 {
            h += &self.fz4 * r(drf) + &self.fz3 * r(g * drf);
        }
        let duw = params.detuning_uw_rad_per_s * RAD_PER_S_TO_RAD_PER_US;
        if duw != 0.0 {
            let up = &self.uw_raise * self.uw_raise.adjoint();
            let down = self.uw_raise.adjoint() * &self.uw_raise;
            h += (up - down) * r(duw / 2.0);
        }
        hermitian_part(&h)
    }
}

/// H(t) in rad/us.
pub fn hamiltonian_at(
    waveforms: &ControlWaveforms,
    params: &ControlParams,
    t_us: f64,
) -> Result<Operator> {
    waveforms.validate()?;
    params.validate()?;
    if !(0.0..waveforms.t_us).contains(&t_us) {
        return Err(Error::InvalidArgument(format!(
            "t = {t_us} us outside [0, {}) us",
            waveforms.t_us
        )));
    }
    let (rf, uw) = waveforms.step_indices(t_us);
    Ok(ControlSystem::cesium().hamiltonian(
        params,
        waveforms.phi_x[rf],
        waveforms.phi_y[rf],
        waveforms.phi_uw[uw],
        1.0,
    ))
}

/// exp(-i H dt) by eigendecomposition. `h` in rad/us, `dt_us` in us.
pub fn propagator_step(h: &Operator, dt_us: f64) -> Result<Operator> {
    ensure_hermitian(h, 1e-12)?;
    let (w, v) = hermitian_eigen(h);
    let mut scaled = v.clone();
    for (k, &lambda) in w.iter().enumerate() {
        let mut col = scaled.column_mut(k);
        col *= Complex64::from_polar(1.0, -lambda * dt_us);
    }
    Ok(scaled * v.adjoint())
}

/// max |U^dagger U - I|.
pub fn unitarity_defect(u: &Operator) -> f64 {
    let n = u.nrows();
    let p = u.adjoint() * u - identity(n);
    p.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// One Newton-Schulz step towards the polar factor: U (3I - U^dagger U)/2.
fn reunitarize(u: &Operator) -> Operator {
    let n = u.nrows();
    let correction = (identity(n) * Complex64::new(3.0, 0.0) - u.adjoint() * u).scale(0.5);
    u * correction
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesProvenance {
    pub waveforms: String,
    pub params: String,
    pub inhomogeneity: String,
}

impl SeriesProvenance {
    pub fn digest(&self) -> String {
        digest::combine(&[&self.waveforms, &self.params, &self.inhomogeneity])
    }
}

/// Heisenberg-picture observables `O_i = U(t_i)^dagger O_0 U(t_i)` sampled
/// on a uniform grid starting at t = 0.
#[derive(Clone, Debug)]
pub struct ObservableSeries {
    pub times_us: Vec<f64>,
    pub observables: Vec<Operator>,
    pub sample_dt_us: f64,
    pub provenance: SeriesProvenance,
}

impl ObservableSeries {
    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.observables.first().map_or(0, |o| o.nrows())
    }

    /// Number of samples with t_i <= t_us.
    pub fn count_until(&self, t_us: f64) -> usize {
        samples_until(&self.times_us, t_us)
    }

    /// Keeps the samples with t_i <= t_us.
    pub fn truncate(&self, t_us: f64) -> Result<ObservableSeries> {
        if !(t_us.is_finite() && t_us > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "truncation time must be positive, got {t_us} us"
            )));
        }
        let n = self.count_until(t_us);
        Ok(ObservableSeries {
            times_us: self.times_us[..n].to_vec(),
            observables: self.observables[..n].to_vec(),
            sample_dt_us: self.sample_dt_us,
            provenance: self.provenance.clone(),
        })
    }
}

pub fn samples_until(times: &[f64], t_us: f64) -> usize {
    times.partition_point(|&t| t <= t_us + GRID_SLACK_US)
}

fn sample_times(sample_dt_us: f64, t_us: f64) -> Result<Vec<f64>> {
    if !(t_us.is_finite() && t_us > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {t_us} us"
        )));
    }
    if !(sample_dt_us.is_finite() && sample_dt_us > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sample interval must be positive, got {sample_dt_us} us"
        )));
    }
    let n = (t_us / sample_dt_us + GRID_SLACK_US).floor() as usize + 1;
    Ok((0..n).map(|i| i as f64 * sample_dt_us).collect())
}

/// Propagate through the phase grid and return `U(t)` at every sample time.
///
/// Segments break at every rf step, microwave step and sample boundary, so
/// each propagator factor is an exact exponential of a constant Hamiltonian.
fn propagators(
    system: &ControlSystem,
    waveforms: &ControlWaveforms,
    params: &ControlParams,
    rf_scale: f64,
    times: &[f64],
) -> Vec<Operator> {
    let dim = system.dim();
    let mut u = identity(dim);
    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0f64;
    let mut steps = 0usize;
    let mut cache: Option<((usize, usize, u64), Operator)> = None;

    for &target in times {
        while target - t > GRID_SLACK_US {
            let (rf, uw) = waveforms.step_indices(t);
            let rf_end = (rf + 1) as f64 * RF_STEP_US;
            let uw_end = (uw + 1) as f64 * UW_STEP_US;
            let end = target.min(rf_end).min(uw_end);
            let dt = end - t;
            let key = (rf, uw, dt.to_bits());
            let step = match &cache {
                Some((k, op)) if *k == key => op.clone(),
                _ => {
                    let h = system.hamiltonian(
                        params,
                        waveforms.phi_x[rf],
                        waveforms.phi_y[rf],
                        waveforms.phi_uw[uw],
                        rf_scale,
                    );
                    let op = propagator_step(&h, dt).expect("Hamiltonian is Hermitian");
                    cache = Some((key, op.clone()));
                    op
                }
            };
            u = step * u;
            steps += 1;
            if steps.is_multiple_of(REUNITARIZE_EVERY) {
                u = reunitarize(&u);
            }
            t = end;
        }
        out.push(u.clone());
    }
    out
}

fn heisenberg(probe: &Operator, unitaries: &[Operator]) -> Vec<Operator> {
    unitaries
        .iter()
        .map(|u| traceless_part(&hermitian_part(&(u.adjoint() * probe * u))))
        .collect()
}

/// Removes the round-off trace that conjugation leaves on a traceless
/// operator.
fn traceless_part(op: &Operator) -> Operator {
    let n = op.nrows();
    let shift = trace(op) / Complex64::new(n as f64, 0.0);
    let mut out = op.clone();
    for j in 0..n {
        out[(j, j)] -= shift;
    }
    out
}

/// Homogeneous Heisenberg series over [0, t_us] at `sample_dt_us` spacing.
pub fn evolve_observables(
    waveforms: &ControlWaveforms,
    params: &ControlParams,
    sample_dt_us: f64,
    t_us: f64,
) -> Result<ObservableSeries> {
    ensemble_observables(
        waveforms,
        params,
        &InhomogeneityModel::homogeneous(),
        sample_dt_us,
        t_us,
    )
}

/// Series averaged over the rf-amplitude distribution of `inhomogeneity`.
/// A disabled or zero-spread model returns the homogeneous series exactly.
pub fn ensemble_observables(
    waveforms: &ControlWaveforms,
    params: &ControlParams,
    inhomogeneity: &InhomogeneityModel,
    sample_dt_us: f64,
    t_us: f64,
) -> Result<ObservableSeries> {
    waveforms.validate()?;
    params.validate()?;
    inhomogeneity.validate()?;
    let times = sample_times(sample_dt_us, t_us)?;
    if t_us > waveforms.t_us + GRID_SLACK_US {
        return Err(Error::InvalidArgument(format!(
            "series duration {t_us} us exceeds waveform duration {} us",
            waveforms.t_us
        )));
    }
    let system = ControlSystem::cesium();
    let samples = if inhomogeneity.is_trivial() {
        vec![(1.0, 1.0)]
    } else {
        inhomogeneity.samples()?
    };

    let per_sample: Vec<Vec<Operator>> = samples
        .par_iter()
        .map(|&(scale, _)| {
            let us = propagators(&system, waveforms, params, scale, &times);
            heisenberg(system.probe(), &us)
        })
        .collect();

    let observables = if per_sample.len() == 1 {
        per_sample.into_iter().next().expect("one sample")
    } else {
        (0..times.len())
            .map(|i| {
                let mut acc = Operator::zeros(system.dim(), system.dim());
                for (series, &(_, w)) in per_sample.iter().zip(&samples) {
                    acc += &series[i] * Complex64::new(w, 0.0);
                }
                traceless_part(&hermitian_part(&acc))
            })
            .collect()
    };

    Ok(ObservableSeries {
        times_us: times,
        observables,
        sample_dt_us,
        provenance: SeriesProvenance {
            waveforms: waveforms.digest(),
            params: params.digest(),
            inhomogeneity: if inhomogeneity.is_trivial() {
                InhomogeneityModel::homogeneous().digest()
            } else {
                inhomogeneity.digest()
            },
        },
    })
}

#[derive(Clone, Debug)]
pub struct Completeness {
    /// Singular values above 1e-9 of the largest, over the traceless columns.
    pub rank: usize,
    /// Largest over smallest singular value of the traceless columns.
    pub condition: f64,
    /// Descending.
    pub singular_values: Vec<f64>,
}

/// Rank and conditioning of the map from traceless state coefficients to
/// record samples.
pub fn informational_completeness(
    series: &ObservableSeries,
    basis: &HermitianBasis,
    gain_k: f64,
) -> Result<Completeness> {
    if series.is_empty() {
        return Err(Error::EmptyRecord);
    }
    let design = design_matrix(series, basis, gain_k)?;
    let a = design.matrix();
    let traceless = a.columns(1, a.ncols() - 1).into_owned();
    let mut s: Vec<f64> = traceless
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|x, y| y.total_cmp(x));
    let top = s.first().copied().unwrap_or(0.0);
    let rank = s.iter().filter(|&&v| v > 1e-9 * top).count();
    let bottom = s.last().copied().unwrap_or(0.0);
    let condition = if bottom > 0.0 {
        top / bottom
    } else {
        f64::INFINITY
    };
    Ok(Completeness {
        rank,
        condition,
        singular_values: s,
    })
}

/// Sorted real spectrum of a Hermitian operator.
pub fn sorted_spectrum(op: &Operator) -> Vec<f64> {
    let (w, _): (DVector<f64>, _) = hermitian_eigen(op);
    let mut w: Vec<f64> = w.iter().copied().collect();
    w.sort_by(f64::total_cmp);
    w
}

pub fn real_trace(op: &Operator) -> f64 {
    trace(op).re
}
