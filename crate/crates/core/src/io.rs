//! File formats: JSON documents for states, estimates, waveforms, model
//! parameters, epsilon rules and manifests; CSV for records and curves.
//!
//! JSON floats use the shortest decimal that parses back to the same `f64`.
//! CSV floats use 17 significant digits. Records carry a JSON sidecar at
//! `<record>.meta.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{ControlWaveforms, SeriesProvenance};
use crate::error::{Error, Result};
use crate::estimators::{EpsilonRule, Estimate};
use crate::pipeline::{
    Curve, ErrorPenalty, Estimator, FidelityCurves, FitResult, ModelSpec, Outcome, StateResult,
};
use crate::record::MeasurementRecord;
use crate::spin::{DensityMatrix, HilbertSpace, Operator};

/// 17 significant digits, enough for a bit-exact round trip.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDocument {
    pub dim: usize,
    /// Row-major real parts.
    pub re: Vec<Vec<f64>>,
    /// Row-major imaginary parts.
    pub im: Vec<Vec<f64>>,
    pub basis_order: String,
}

impl StateDocument {
    pub fn from_operator(op: &Operator) -> Self {
        let n = op.nrows();
        let basis_order = if n == 16 {
            HilbertSpace::cesium_ground().order_note()
        } else {
            format!("computational basis |0>...|{}>", n.saturating_sub(1))
        };
        StateDocument {
            dim: n,
            re: (0..n)
                .map(|i| (0..n).map(|j| op[(i, j)].re).collect())
                .collect(),
            im: (0..n)
                .map(|i| (0..n).map(|j| op[(i, j)].im).collect())
                .collect(),
            basis_order,
        }
    }

    pub fn to_operator(&self) -> Result<Operator> {
        let n = self.dim;
        let square = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
        if !square(&self.re) || !square(&self.im) {
            return Err(Error::Format(format!("state entries are not {n} x {n}")));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| {
            Complex64::new(self.re[i][j], self.im[i][j])
        }))
    }

    pub fn to_density(&self) -> Result<DensityMatrix> {
        DensityMatrix::new(self.to_operator()?)
    }
}

pub fn write_density(path: &Path, rho: &DensityMatrix) -> Result<()> {
    write_json(path, &StateDocument::from_operator(rho.matrix()))
}

pub fn read_density(path: &Path) -> Result<DensityMatrix> {
    read_json::<StateDocument>(path)?.to_density()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateDiagnostics {
    pub estimator: Estimator,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub epsilon: Option<f64>,
    pub multiplier: Option<f64>,
    pub trace_before_normalization: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateDocument {
    pub state: StateDocument,
    pub diagnostics: EstimateDiagnostics,
    pub config_digest: String,
}

impl EstimateDocument {
    pub fn new(estimator: Estimator, estimate: &Estimate, config_digest: &str) -> Self {
        let cs = estimate.cs.as_ref();
        EstimateDocument {
            state: StateDocument::from_operator(estimate.rho.matrix()),
            diagnostics: EstimateDiagnostics {
                estimator,
                residual: estimate.residual,
                iterations: estimate.iterations,
                converged: estimate.converged,
                epsilon: cs.map(|c| c.epsilon),
                multiplier: cs.map(|c| c.multiplier),
                trace_before_normalization: cs.map(|c| c.trace_before_normalization),
            },
            config_digest: config_digest.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveformDocument {
    #[serde(flatten)]
    pub waveforms: ControlWaveforms,
    #[serde(default)]
    pub config_digest: String,
}

pub fn write_waveforms(path: &Path, w: &ControlWaveforms, config_digest: &str) -> Result<()> {
    write_json(
        path,
        &WaveformDocument {
            waveforms: w.clone(),
            config_digest: config_digest.to_string(),
        },
    )
}

pub fn read_waveforms(path: &Path) -> Result<ControlWaveforms> {
    let doc: WaveformDocument = read_json(path)?;
    doc.waveforms.validate()?;
    Ok(doc.waveforms)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(flatten)]
    pub model: ModelSpec,
    #[serde(default)]
    pub config_digest: String,
}

pub fn write_model(path: &Path, model: &ModelSpec, config_digest: &str) -> Result<()> {
    write_json(
        path,
        &ModelDocument {
            model: model.clone(),
            config_digest: config_digest.to_string(),
        },
    )
}

pub fn read_model(path: &Path) -> Result<ModelSpec> {
    let doc: ModelDocument = read_json(path)?;
    doc.model.validate()?;
    Ok(doc.model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleDocument {
    #[serde(flatten)]
    pub rule: EpsilonRule,
    #[serde(default)]
    pub config_digest: String,
}

pub fn write_rule(path: &Path, rule: &EpsilonRule, config_digest: &str) -> Result<()> {
    write_json(
        path,
        &RuleDocument {
            rule: rule.clone(),
            config_digest: config_digest.to_string(),
        },
    )
}

pub fn read_rule(path: &Path) -> Result<EpsilonRule> {
    let doc: RuleDocument = read_json(path)?;
    doc.rule.validate()?;
    Ok(doc.rule)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordSidecar {
    pub gain_k: f64,
    pub sigma: f64,
    pub noise_seed: u64,
    pub samples: usize,
    pub provenance: Option<SeriesProvenance>,
    /// SHA-256 of the CSV file.
    pub csv_digest: String,
    pub config_digest: String,
}

pub fn sidecar_path(record_path: &Path) -> PathBuf {
    let mut name = record_path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes `t_us,M` rows and the metadata sidecar.
pub fn write_record(path: &Path, record: &MeasurementRecord, config_digest: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["t_us", "M"]).map_err(csv_error)?;
    for (t, m) in record.times_us.iter().zip(&record.values) {
        w.write_record([format_float(*t), format_float(*m)])
            .map_err(csv_error)?;
    }
    w.flush()?;
    drop(w);
    write_json(
        &sidecar_path(path),
        &RecordSidecar {
            gain_k: record.gain_k,
            sigma: record.sigma,
            noise_seed: record.noise_seed,
            samples: record.len(),
            provenance: record.provenance.clone(),
            csv_digest: file_digest(path)?,
            config_digest: config_digest.to_string(),
        },
    )
}

/// Reads a record and its sidecar. The noiseless component is not stored.
pub fn read_record(path: &Path) -> Result<MeasurementRecord> {
    let sidecar: RecordSidecar = read_json(&sidecar_path(path))?;
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let headers = r.headers().map_err(csv_error)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t_us", "M"] {
        return Err(Error::Format(format!(
            "{}: expected header t_us,M",
            path.display()
        )));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for row in r.deserialize::<(f64, f64)>() {
        let (t, m) = row.map_err(csv_error)?;
        times.push(t);
        values.push(m);
    }
    if times.len() != sidecar.samples {
        return Err(Error::Format(format!(
            "{}: {} rows but the sidecar lists {}",
            path.display(),
            times.len(),
            sidecar.samples
        )));
    }
    let mut record = MeasurementRecord::new(times, values, sidecar.gain_k, sidecar.sigma)?;
    record.noise_seed = sidecar.noise_seed;
    record.provenance = sidecar.provenance;
    Ok(record)
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("{other:?}")),
        }
    } else {
        Error::Format(e.to_string())
    }
}

fn write_rows(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// `T_ms, F_CS, sd_CS, F_LS, sd_LS, n_states`; empty cells where no state
/// produced a value. `n_states` counts LS values.
pub fn write_curves(path: &Path, curves: &FidelityCurves) -> Result<()> {
    let empty = Curve::from_per_state(vec![], curves.t_us.len());
    let cs = curves.cs.as_ref().unwrap_or(&empty);
    let rows = (0..curves.t_us.len())
        .map(|k| {
            vec![
                format_float(curves.t_us[k] / 1000.0),
                format_opt(cs.mean[k]),
                format_opt(cs.sd[k]),
                format_opt(curves.ls.mean[k]),
                format_opt(curves.ls.sd[k]),
                curves.ls.count[k].to_string(),
            ]
        })
        .collect();
    write_rows(
        path,
        &["T_ms", "F_CS", "sd_CS", "F_LS", "sd_LS", "n_states"],
        rows,
    )
}

/// One row per (state, T, estimator).
pub fn write_per_state(path: &Path, states: &[StateResult]) -> Result<()> {
    let mut rows = Vec::new();
    for s in states {
        for p in &s.points {
            let mut push = |estimator: Estimator, outcome: &Outcome| {
                let base = vec![
                    s.index.to_string(),
                    s.seed.to_string(),
                    format_float(p.t_us / 1000.0),
                    p.samples.to_string(),
                    estimator.label().to_string(),
                ];
                let tail = match outcome {
                    Outcome::Solved { fidelity, estimate } => {
                        let cs = estimate.cs.as_ref();
                        vec![
                            format_float(*fidelity),
                            format_float(estimate.residual),
                            estimate.iterations.to_string(),
                            estimate.converged.to_string(),
                            format_opt(cs.map(|c| c.epsilon)),
                            format_opt(cs.map(|c| c.multiplier)),
                            format_opt(cs.map(|c| c.trace_before_normalization)),
                            String::new(),
                        ]
                    }
                    Outcome::Failed { class, .. } => {
                        let mut v = vec![String::new(); 7];
                        v.push(class.to_string());
                        v
                    }
                };
                rows.push([base, tail].concat());
            };
            push(Estimator::Ls, &p.ls);
            if let Some(cs) = &p.cs {
                push(Estimator::Cs, cs);
            }
        }
    }
    write_rows(
        path,
        &[
            "state",
            "seed",
            "T_ms",
            "samples",
            "estimator",
            "fidelity",
            "residual",
            "iterations",
            "converged",
            "epsilon",
            "multiplier",
            "trace_before_normalization",
            "error",
        ],
        rows,
    )
}

/// `T_ms, eta_CS, eta_LS`.
pub fn write_eta(path: &Path, eta: &ErrorPenalty) -> Result<()> {
    let rows = (0..eta.t_us.len())
        .map(|k| {
            vec![
                format_float(eta.t_us[k] / 1000.0),
                format_opt(eta.cs.as_ref().and_then(|c| c[k])),
                format_opt(eta.ls[k]),
            ]
        })
        .collect();
    write_rows(path, &["T_ms", "eta_CS", "eta_LS"], rows)
}

/// `estimator, tau_ms, residual, ...`; `residual` is relative to |F|.
pub fn write_fits(path: &Path, fits: &[(String, FitResult)]) -> Result<()> {
    let rows = fits
        .iter()
        .map(|(label, f)| {
            vec![
                label.clone(),
                format_float(f.tau_ms),
                format_float(f.relative_residual),
                format_float(f.residual_norm),
                format_float(f.window_ms),
                f.points.to_string(),
            ]
        })
        .collect();
    write_rows(
        path,
        &[
            "estimator",
            "tau_ms",
            "residual",
            "residual_norm",
            "window_ms",
            "points",
        ],
        rows,
    )
}

/// Reads `T_ms` and one named column of a curves file.
pub fn read_curve_column(path: &Path, column: &str) -> Result<(Vec<f64>, Vec<Option<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let headers = r.headers().map_err(csv_error)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{}: no column {name}", path.display())))
    };
    let (ti, ci) = (find("T_ms")?, find(column)?);
    let mut t = Vec::new();
    let mut f = Vec::new();
    for row in r.records() {
        let row = row.map_err(csv_error)?;
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Format(format!("{}: bad number {s:?}", path.display())))
        };
        t.push(parse(&row[ti])?);
        f.push(if row[ci].is_empty() {
            None
        } else {
            Some(parse(&row[ci])?)
        });
    }
    Ok((t, f))
}

/// Run description written next to the outputs: the full configuration,
/// its digest and the digest of every file produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_digest: String,
    pub config: serde_json::Value,
    pub files: BTreeMap<String, String>,
    #[serde(default)]
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, config: &C) -> Result<Self> {
        Ok(Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: crate::digest::of(config),
            config: serde_json::to_value(config)?,
            files: BTreeMap::new(),
            notes: BTreeMap::new(),
        })
    }

    /// Records the digest of an output file, keyed by its file name.
    pub fn add_file(&mut self, path: &Path) -> Result<()> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.files.insert(name, file_digest(path)?);
        Ok(())
    }

    pub fn note<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.notes
            .insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}
