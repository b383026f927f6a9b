//! Continuous measurement records and the linear map from state coefficients
//! to predicted record samples.
//!
//! The probe signal is `M(t) = K <f_z(t)> + sigma W(t)`. Backaction is
//! neglected, so the ensemble signal is the single-atom expectation value and
//! each digitized sample is `M_i = K Tr(rho_0 O_i) + sigma w_i`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{samples_until, ObservableSeries, SeriesProvenance};
use crate::error::{Error, Result};
use crate::rng;
use crate::spin::{DensityMatrix, HermitianBasis};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub times_us: Vec<f64>,
    pub values: Vec<f64>,
    /// Exact signal without shot noise, kept for diagnostics on synthetic
    /// records. Estimators never read it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noiseless: Option<Vec<f64>>,
    pub gain_k: f64,
    pub sigma: f64,
    pub noise_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<SeriesProvenance>,
}

impl MeasurementRecord {
    /// Record from raw samples. Times must be strictly increasing and values
    /// finite.
    pub fn new(times_us: Vec<f64>, values: Vec<f64>, gain_k: f64, sigma: f64) -> Result<Self> {
        let record = MeasurementRecord {
            times_us,
            values,
            noiseless: None,
            gain_k,
            sigma,
            noise_seed: 0,
            provenance: None,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times_us.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.times_us.len(),
                found: self.values.len(),
            });
        }
        if self.times_us.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "record times must be strictly increasing".into(),
            ));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "record contains non-finite values".into(),
            ));
        }
        if !(self.gain_k.is_finite() && self.gain_k > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gain K must be positive, got {}",
                self.gain_k
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Keeps the samples with t_i <= t_us.
    pub fn truncate(&self, t_us: f64) -> Result<MeasurementRecord> {
        if !(t_us.is_finite() && t_us > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "truncation time must be positive, got {t_us} us"
            )));
        }
        let n = samples_until(&self.times_us, t_us);
        Ok(MeasurementRecord {
            times_us: self.times_us[..n].to_vec(),
            values: self.values[..n].to_vec(),
            noiseless: self.noiseless.as_ref().map(|v| v[..n].to_vec()),
            ..self.clone()
        })
    }
}

/// `M_i = K Tr(rho_0 O_i) + sigma w_i` with `w_i` standard normal drawn from
/// `seed`.
pub fn synthesize_record(
    rho0: &DensityMatrix,
    series: &ObservableSeries,
    gain_k: f64,
    sigma: f64,
    seed: u64,
) -> Result<MeasurementRecord> {
    if series.dim() != rho0.dim() {
        return Err(Error::DimensionMismatch {
            expected: series.dim(),
            found: rho0.dim(),
        });
    }
    if !(gain_k.is_finite() && gain_k > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gain K must be positive, got {gain_k}"
        )));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    let rho = rho0.matrix();
    // Tr(rho O) = <rho, O>_F for Hermitian rho.
    let clean: Vec<f64> = series
        .observables
        .iter()
        .map(|o| gain_k * rho.dotc(o).re)
        .collect();
    let mut rng = rng::seeded(seed);
    let values = clean
        .iter()
        .map(|&m| {
            let w: f64 = StandardNormal.sample(&mut rng);
            m + sigma * w
        })
        .collect();
    Ok(MeasurementRecord {
        times_us: series.times_us.clone(),
        values,
        noiseless: Some(clean),
        gain_k,
        sigma,
        noise_seed: seed,
        provenance: Some(series.provenance.clone()),
    })
}

/// `A_{i alpha} = K Tr(O_i E_alpha)`, one row per record sample.
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    gain_k: f64,
    times_us: Vec<f64>,
    provenance: SeriesProvenance,
}

impl DesignMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn gain_k(&self) -> f64 {
        self.gain_k
    }

    pub fn times_us(&self) -> &[f64] {
        &self.times_us
    }

    pub fn provenance(&self) -> &SeriesProvenance {
        &self.provenance
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of basis coefficients, d^2.
    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Leading rows with t_i <= t_us.
    pub fn truncate(&self, t_us: f64) -> Result<DesignMatrix> {
        if !(t_us.is_finite() && t_us > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "truncation time must be positive, got {t_us} us"
            )));
        }
        let n = samples_until(&self.times_us, t_us);
        Ok(DesignMatrix {
            matrix: self.matrix.rows(0, n).into_owned(),
            gain_k: self.gain_k,
            times_us: self.times_us[..n].to_vec(),
            provenance: self.provenance.clone(),
        })
    }

    /// Predicted noiseless record `A r`.
    pub fn predict(&self, coefficients: &DVector<f64>) -> Result<DVector<f64>> {
        if coefficients.len() != self.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.cols(),
                found: coefficients.len(),
            });
        }
        Ok(&self.matrix * coefficients)
    }
}

pub fn design_matrix(
    series: &ObservableSeries,
    basis: &HermitianBasis,
    gain_k: f64,
) -> Result<DesignMatrix> {
    if series.dim() != basis.dim() && !series.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            found: series.dim(),
        });
    }
    let n = series.len();
    let p = basis.len();
    // Fill row-major then transpose into nalgebra's column-major layout.
    let mut rows = vec![0.0; n * p];
    for (row, o) in rows.chunks_mut(p).zip(&series.observables) {
        basis.expand_into(o, row);
        row.iter_mut().for_each(|v| *v *= gain_k);
    }
    Ok(DesignMatrix {
        matrix: DMatrix::from_row_slice(n, p, &rows),
        gain_k,
        times_us: series.times_us.clone(),
        provenance: series.provenance.clone(),
    })
}
