use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use cmtomo::digest;
use cmtomo::dynamics::{random_waveforms, ControlWaveforms, ObservableSeries};
use cmtomo::error::Error;
use cmtomo::estimators::{calibrate_epsilon_with_model, solve_cs, solve_ls, Estimate};
use cmtomo::io::{self, EstimateDocument, Manifest};
use cmtomo::pipeline::{
    fit_curve, fit_exponential, mismatch_experiment, mixed_state_comparison, run_suite, Estimator,
    FidelityCurves, FitResult, ModelSpec, StateResult, SuiteConfig,
};
use cmtomo::record::{design_matrix, synthesize_record};
use cmtomo::spin::{
    fidelity, haar_random_pure_state, hermitian_eigen, DensityMatrix, HermitianBasis, HilbertSpace,
    PureState, Spin,
};
use serde::Serialize;

use crate::config::{self, Overrides};
use crate::EstimatorArg;

/// Bad command-line input, reported with exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(String);

pub fn usage(msg: &str) -> anyhow::Error {
    Usage(msg.to_string()).into()
}

/// Prints `{"error": <class>, "message": ...}` on stderr.
pub fn report(e: &anyhow::Error) -> ExitCode {
    let (class, code) = if e.downcast_ref::<Usage>().is_some() {
        ("usage", 2)
    } else if let Some(err) = e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        (err.class(), 1)
    } else if e.chain().any(|c| c.is::<std::io::Error>()) {
        ("io", 1)
    } else {
        ("internal", 1)
    };
    let line = serde_json::json!({ "error": class, "message": format!("{e:#}") });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn gen_waveforms(t_ms: f64, seed: u64, out: &Path) -> Result<()> {
    if !(t_ms.is_finite() && t_ms > 0.0) {
        return Err(usage("--T-ms must be positive"));
    }
    let w = random_waveforms(t_ms * 1000.0, seed)?;
    io::write_waveforms(out, &w, &digest::of(&(t_ms, seed)))?;
    println!(
        "wrote {} ({} rf steps per axis, {} microwave steps)",
        out.display(),
        w.phi_x.len(),
        w.phi_uw.len()
    );
    Ok(())
}

/// `mixed`, `haar:<seed>`, `basis:<f>,<m>` or a state file.
fn parse_state(spec: &str) -> Result<DensityMatrix> {
    let space = HilbertSpace::cesium_ground();
    if spec == "mixed" {
        return Ok(DensityMatrix::maximally_mixed(space.dim()));
    }
    if let Some(seed) = spec.strip_prefix("haar:") {
        let seed: u64 = seed
            .parse()
            .map_err(|_| usage(&format!("bad Haar seed {seed:?}")))?;
        return Ok(haar_random_pure_state(space.dim(), seed)?.density());
    }
    if let Some(fm) = spec.strip_prefix("basis:") {
        let (f, m) = fm
            .split_once(',')
            .ok_or_else(|| usage("basis states are written basis:<f>,<m>"))?;
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| usage(&format!("bad quantum number {s:?}")))
        };
        let index = space.index_of(Spin::new(parse(f)?)?, parse(m)?)?;
        return Ok(PureState::basis(space.dim(), index)?.density());
    }
    Ok(io::read_density(Path::new(spec))?)
}

/// The dominant eigenvector of a density matrix that is pure to 1e-9.
fn as_pure(rho: &DensityMatrix) -> Result<PureState> {
    if (rho.purity() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "truth state must be pure (purity {})",
            rho.purity()
        ))
        .into());
    }
    let (w, v) = hermitian_eigen(rho.matrix());
    let top = w.imax();
    Ok(PureState::new(v.column(top).into_owned())?)
}

fn model_or(path: Option<&Path>, default: &ModelSpec) -> Result<ModelSpec> {
    Ok(match path {
        Some(p) => io::read_model(p)?,
        None => default.clone(),
    })
}

fn series_for(
    model: &ModelSpec,
    waveforms: &ControlWaveforms,
    config: &SuiteConfig,
) -> Result<ObservableSeries> {
    Ok(model.series(waveforms, config.sample_dt_us, waveforms.t_us)?)
}

pub fn simulate(
    config_path: Option<&Path>,
    overrides: &Overrides,
    waveforms: &Path,
    state: &str,
    state_out: Option<&Path>,
    params: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let config = config::load(config_path, overrides)?;
    let w = io::read_waveforms(waveforms)?;
    let model = model_or(params, &config.truth)?;
    let rho = parse_state(state)?;
    let series = series_for(&model, &w, &config)?;
    let record = synthesize_record(
        &rho,
        &series,
        config.gain_k,
        config.sigma,
        config.seeds.noise,
    )?;
    let run_digest = digest::of(&(
        &model,
        w.digest(),
        config.gain_k,
        config.sigma,
        config.seeds.noise,
        config.sample_dt_us,
        digest::of(&io::StateDocument::from_operator(rho.matrix())),
    ));
    io::write_record(out, &record, &run_digest)?;
    if let Some(p) = state_out {
        io::write_density(p, &rho)?;
    }
    println!("wrote {} ({} samples)", out.display(), record.len());
    Ok(())
}

pub struct ReconstructArgs<'a> {
    pub record: &'a Path,
    pub waveforms: &'a Path,
    pub params: Option<&'a Path>,
    pub estimator: EstimatorArg,
    pub epsilon: Option<f64>,
    pub rule: Option<&'a Path>,
    pub t_ms: Option<f64>,
    pub truth: Option<&'a Path>,
    pub out: &'a Path,
}

pub fn reconstruct(
    config_path: Option<&Path>,
    overrides: &Overrides,
    args: ReconstructArgs<'_>,
) -> Result<()> {
    let config = config::load(config_path, overrides)?;
    let epsilon_source = match (args.estimator, args.epsilon, args.rule) {
        (EstimatorArg::Cs, None, None) => {
            return Err(usage("--estimator cs needs --epsilon or --rule"));
        }
        (_, Some(e), _) => Some(Ok(e)),
        (_, None, Some(p)) => Some(Err(io::read_rule(p)?)),
        (_, None, None) => None,
    };
    let mut record = io::read_record(args.record)?;
    if let Some(t) = args.t_ms {
        if !(t > 0.0) {
            return Err(usage("--T-ms must be positive"));
        }
        record = record.truncate(t * 1000.0)?;
    }
    let last = *record.times_us.last().ok_or(Error::EmptyRecord)?;
    let w = io::read_waveforms(args.waveforms)?;
    let model = model_or(args.params, &config.reconstruction)?;
    let series = series_for(&model, &w, &config)?.truncate(last)?;
    let aligned = series.times_us.len() == record.times_us.len()
        && series
            .times_us
            .iter()
            .zip(&record.times_us)
            .all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0));
    if !aligned {
        return Err(Error::InvalidArgument(
            "record sample times do not match the model's sample grid".into(),
        )
        .into());
    }
    let basis = HermitianBasis::new(series.dim())?;
    let design = design_matrix(&series, &basis, record.gain_k)?;
    let (estimator, estimate): (Estimator, Estimate) = match args.estimator {
        EstimatorArg::Ls => (Estimator::Ls, solve_ls(&record, &design, &config.solver)?),
        EstimatorArg::Cs => {
            let epsilon = match epsilon_source.expect("checked above") {
                Ok(e) => e,
                Err(rule) => rule.epsilon(record.len()),
            };
            (
                Estimator::Cs,
                solve_cs(&record, &design, epsilon, &config.solver)?,
            )
        }
    };
    let run_digest = digest::of(&(
        &model,
        &config.solver,
        estimator,
        estimate.cs.as_ref().map(|c| c.epsilon),
        io::file_digest(args.record)?,
        w.digest(),
        last,
    ));
    io::write_json(
        args.out,
        &EstimateDocument::new(estimator, &estimate, &run_digest),
    )?;
    println!(
        "{} estimate: residual {:e}, {} iterations, converged {}",
        estimator.label(),
        estimate.residual,
        estimate.iterations,
        estimate.converged
    );
    if let Some(p) = args.truth {
        let psi = as_pure(&io::read_density(p)?)?;
        println!("fidelity {:.6}", fidelity(&psi, &estimate.rho)?);
    }
    Ok(())
}

pub fn calibrate(
    config_path: Option<&Path>,
    overrides: &Overrides,
    waveforms: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let config = config::load(config_path, overrides)?;
    let w = match waveforms {
        Some(p) => io::read_waveforms(p)?,
        None => random_waveforms(config.t_total_us, config.seeds.waveforms)?,
    };
    let truth = series_for(&config.truth, &w, &config)?;
    let model = if config.reconstruction == config.truth {
        truth.clone()
    } else {
        series_for(&config.reconstruction, &w, &config)?
    };
    let state = haar_random_pure_state(truth.dim(), config.state_seed(0))?;
    let rule = calibrate_epsilon_with_model(
        &state,
        &truth,
        &model,
        config.gain_k,
        config.sigma,
        &config.calibration_grid_us,
        config.noise_seed(0),
        &config.solver,
    )?;
    io::write_rule(out, &rule, &digest::of(&(&config, w.digest())))?;
    println!("epsilon(N) = {:e} N + {:e}", rule.slope, rule.intercept);
    Ok(())
}

fn fits_for(curves: &FidelityCurves, window_us: f64, label: &str) -> Vec<(String, FitResult)> {
    [Estimator::Cs, Estimator::Ls]
        .into_iter()
        .filter_map(|e| {
            let fit = fit_curve(curves, e, window_us).ok()?;
            Some((format!("{}{label}", e.label()), fit))
        })
        .collect()
}

fn write_curve_set(
    dir: &Path,
    suffix: &str,
    curves: &FidelityCurves,
    states: &[StateResult],
    manifest: &mut Manifest,
) -> Result<()> {
    let c = dir.join(format!("curves{suffix}.csv"));
    io::write_curves(&c, curves)?;
    manifest.add_file(&c)?;
    let p = dir.join(format!("per_state{suffix}.csv"));
    io::write_per_state(&p, states)?;
    manifest.add_file(&p)?;
    Ok(())
}

#[derive(Serialize)]
struct CurveSummary {
    peak_t_ms: Option<f64>,
    monotonicity_violations_ls_t_ms: Vec<f64>,
    monotonicity_violations_cs_t_ms: Vec<f64>,
}

fn summary(curves: &FidelityCurves) -> CurveSummary {
    let at = |ks: Vec<usize>| ks.into_iter().map(|k| curves.t_us[k] / 1000.0).collect();
    CurveSummary {
        peak_t_ms: curves.peak().map(|k| curves.t_us[k] / 1000.0),
        monotonicity_violations_ls_t_ms: at(curves.ls.monotonicity_violations()),
        monotonicity_violations_cs_t_ms: curves
            .cs
            .as_ref()
            .map(|c| at(c.monotonicity_violations()))
            .unwrap_or_default(),
    }
}

fn print_fits(fits: &[(String, FitResult)]) {
    for (label, f) in fits {
        println!(
            "{label}: tau = {:.4} ms, relative residual {:.4}",
            f.tau_ms, f.relative_residual
        );
    }
}

pub fn suite(config_path: Option<&Path>, overrides: &Overrides, out: &Path) -> Result<()> {
    let config = config::load(config_path, overrides)?;
    ensure_dir(out)?;
    let output = run_suite(&config)?;
    let mut manifest = Manifest::new("suite", &config)?;

    let w = out.join("waveforms.json");
    io::write_waveforms(&w, &output.waveforms, &output.config_digest)?;
    manifest.add_file(&w)?;
    if let Some(rule) = &output.rule {
        let p = out.join("rule.json");
        io::write_rule(&p, rule, &output.config_digest)?;
        manifest.add_file(&p)?;
    }
    write_curve_set(out, "", &output.curves, &output.states, &mut manifest)?;
    let fits = fits_for(&output.curves, config.fit_window_us, "");
    let f = out.join("fits.csv");
    io::write_fits(&f, &fits)?;
    manifest.add_file(&f)?;
    manifest.note("summary", &summary(&output.curves))?;
    manifest.write(&out.join("manifest.json"))?;
    print_fits(&fits);
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct MismatchSummary {
    peak_t_ms: Option<f64>,
    eta_ls_at_peak: Option<f64>,
    eta_cs_at_peak: Option<f64>,
    eta_ratio_ls_over_cs: Option<f64>,
    mismatched_ls_peak_t_ms: Option<f64>,
    mismatched_ls_drop_after_peak: Option<f64>,
}

pub fn mismatch(config_path: Option<&Path>, overrides: &Overrides, out: &Path) -> Result<()> {
    let mut config = config::load(config_path, overrides)?;
    // The experiment is defined by an averaged truth model.
    config.truth.inhomogeneity.enabled = true;
    ensure_dir(out)?;
    let output = mismatch_experiment(&config)?;
    let mut manifest = Manifest::new("mismatch", &config)?;
    let a = &output.well_modeled;
    let b = &output.mismatched;
    write_curve_set(out, "_well_modeled", &a.curves, &a.states, &mut manifest)?;
    write_curve_set(out, "_mismatched", &b.curves, &b.states, &mut manifest)?;
    let e = out.join("eta.csv");
    io::write_eta(&e, &output.penalty)?;
    manifest.add_file(&e)?;
    let mut fits = fits_for(&a.curves, config.fit_window_us, "_well_modeled");
    fits.extend(fits_for(&b.curves, config.fit_window_us, "_mismatched"));
    let f = out.join("fits.csv");
    io::write_fits(&f, &fits)?;
    manifest.add_file(&f)?;

    let k = output.peak_index;
    let eta_ls = k.and_then(|k| output.penalty.ls[k]);
    let eta_cs = k.and_then(|k| output.penalty.cs.as_ref()?[k]);
    let ls_b = &b.curves.ls;
    let b_peak = ls_b.peak();
    let last = ls_b.mean.iter().rev().flatten().next().copied();
    let s = MismatchSummary {
        peak_t_ms: k.map(|k| a.curves.t_us[k] / 1000.0),
        eta_ls_at_peak: eta_ls,
        eta_cs_at_peak: eta_cs,
        eta_ratio_ls_over_cs: eta_ls.zip(eta_cs).map(|(l, c)| l / c),
        mismatched_ls_peak_t_ms: b_peak.map(|k| b.curves.t_us[k] / 1000.0),
        mismatched_ls_drop_after_peak: b_peak
            .and_then(|k| ls_b.mean[k])
            .zip(last)
            .map(|(p, l)| p - l),
    };
    println!(
        "eta at peak: LS {:?}, CS {:?}, ratio {:?}",
        s.eta_ls_at_peak, s.eta_cs_at_peak, s.eta_ratio_ls_over_cs
    );
    manifest.note("summary", &s)?;
    manifest.write(&out.join("manifest.json"))?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn fit(
    config_path: Option<&Path>,
    overrides: &Overrides,
    curves: Option<&Path>,
    mixed: bool,
    out: &Path,
) -> Result<()> {
    let config = config::load(config_path, overrides)?;
    if mixed {
        ensure_dir(out)?;
        let cmp = mixed_state_comparison(&config)?;
        let mut manifest = Manifest::new("fit --mixed", &config)?;
        for (name, c) in [
            ("curves_pure.csv", &cmp.pure),
            ("curves_mixed.csv", &cmp.mixed),
        ] {
            let p = out.join(name);
            io::write_curves(&p, c)?;
            manifest.add_file(&p)?;
        }
        let fits = vec![
            ("LS_pure".to_string(), cmp.tau_pure.clone()),
            ("LS_mixed".to_string(), cmp.tau_mixed.clone()),
        ];
        let f = out.join("fits.csv");
        io::write_fits(&f, &fits)?;
        manifest.add_file(&f)?;
        manifest.note("tau_ratio_mixed_over_pure", &cmp.ratio())?;
        manifest.note(
            "mixed_metric",
            &"Uhlmann fidelity to the maximally mixed state",
        )?;
        manifest.write(&out.join("manifest.json"))?;
        print_fits(&fits);
        println!("tau ratio mixed/pure {:.3}", cmp.ratio());
        return Ok(());
    }
    let path = curves.ok_or_else(|| usage("--curves is required without --mixed"))?;
    let mut fits = Vec::new();
    for (column, label) in [("F_CS", "CS"), ("F_LS", "LS")] {
        let (t_ms, f) = io::read_curve_column(path, column)?;
        if f.iter().all(Option::is_none) {
            continue;
        }
        fits.push((
            label.to_string(),
            fit_exponential(&t_ms, &f, config.fit_window_us / 1000.0)?,
        ));
    }
    io::write_fits(out, &fits)?;
    print_fits(&fits);
    Ok(())
}
