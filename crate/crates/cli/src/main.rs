use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::Overrides;

#[derive(Parser, Debug)]
#[command(
    name = "cmtomo",
    version,
    about = "Continuous-measurement tomography on the cesium ground manifold"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Ls,
    Cs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Random piecewise-constant control phases.
    GenWaveforms {
        #[arg(long = "T-ms")]
        t_ms: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic measurement record for a given initial state.
    Simulate {
        #[arg(long)]
        waveforms: PathBuf,
        /// A state JSON file, `mixed`, `haar:<seed>` or `basis:<f>,<m>`.
        #[arg(long)]
        state: String,
        /// Write the initial state here.
        #[arg(long)]
        state_out: Option<PathBuf>,
        /// Model JSON for the dynamics (defaults to the config's truth model).
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Least-squares or compressed-sensing estimate from a record.
    Reconstruct {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        waveforms: PathBuf,
        /// Model JSON (defaults to the config's reconstruction model).
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_enum)]
        estimator: EstimatorArg,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Epsilon rule JSON, used when `--epsilon` is absent.
        #[arg(long)]
        rule: Option<PathBuf>,
        /// Only use samples with t <= this.
        #[arg(long = "T-ms")]
        t_ms: Option<f64>,
        /// Pure truth state JSON; the fidelity is printed.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fits the epsilon rule on one Haar state.
    CalibrateEpsilon {
        #[arg(long)]
        waveforms: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fidelity-versus-time curves over a set of Haar states.
    Suite {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Well-modeled versus homogeneous-model reconstruction of the same
    /// records.
    Mismatch {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Exponential-rise fits of a curves file, or the pure-versus-mixed
    /// comparison with `--mixed`.
    Fit {
        #[arg(long, required_unless_present = "mixed")]
        curves: Option<PathBuf>,
        #[arg(long)]
        mixed: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            return commands::report(&commands::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::GenWaveforms { t_ms, seed, out } => commands::gen_waveforms(t_ms, seed, &out),
        Command::Simulate {
            waveforms,
            state,
            state_out,
            params,
            out,
            overrides,
        } => commands::simulate(
            config,
            &overrides,
            &waveforms,
            &state,
            state_out.as_deref(),
            params.as_deref(),
            &out,
        ),
        Command::Reconstruct {
            record,
            waveforms,
            params,
            estimator,
            epsilon,
            rule,
            t_ms,
            truth,
            out,
            overrides,
        } => commands::reconstruct(
            config,
            &overrides,
            commands::ReconstructArgs {
                record: &record,
                waveforms: &waveforms,
                params: params.as_deref(),
                estimator,
                epsilon,
                rule: rule.as_deref(),
                t_ms,
                truth: truth.as_deref(),
                out: &out,
            },
        ),
        Command::CalibrateEpsilon {
            waveforms,
            out,
            overrides,
        } => commands::calibrate(config, &overrides, waveforms.as_deref(), &out),
        Command::Suite { out, overrides } => commands::suite(config, &overrides, &out),
        Command::Mismatch { out, overrides } => commands::mismatch(config, &overrides, &out),
        Command::Fit {
            curves,
            mixed,
            out,
            overrides,
        } => commands::fit(config, &overrides, curves.as_deref(), mixed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => commands::report(&e),
    }
}
