//! Run configuration: a TOML file holding a `SuiteConfig`, with flags
//! applied on top.

use std::path::Path;

use anyhow::{Context, Result};
use clap::Args;
use cmtomo::dynamics::InhomogeneityModel;
use cmtomo::pipeline::SuiteConfig;

#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// Number of Haar states, including the calibration state.
    #[arg(long)]
    pub n_states: Option<usize>,
    #[arg(long = "T-total-ms")]
    pub t_total_ms: Option<f64>,
    /// Curve grid in ms, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub grid_ms: Option<Vec<f64>>,
    /// Epsilon calibration grid in ms, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub calibration_grid_ms: Option<Vec<f64>>,
    #[arg(long)]
    pub fit_window_ms: Option<f64>,
    /// Polarimeter gain K.
    #[arg(long = "K")]
    pub gain_k: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub sample_dt_us: Option<f64>,
    #[arg(long)]
    pub waveform_seed: Option<u64>,
    #[arg(long)]
    pub state_seed: Option<u64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Fractional rf-amplitude spread of the truth model; enables the
    /// ensemble average.
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub ls_only: bool,
}

pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<SuiteConfig> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text)
                .map_err(|e| cmtomo::error::Error::Format(format!("{}: {e}", p.display())))?
        }
        None => SuiteConfig::default(),
    };
    let o = overrides;
    if let Some(v) = o.n_states {
        config.n_states = v;
    }
    if let Some(v) = o.t_total_ms {
        config.t_total_us = v * 1000.0;
    }
    if let Some(v) = &o.grid_ms {
        config.t_grid_us = v.iter().map(|t| t * 1000.0).collect();
    }
    if let Some(v) = &o.calibration_grid_ms {
        config.calibration_grid_us = v.iter().map(|t| t * 1000.0).collect();
    }
    if let Some(v) = o.fit_window_ms {
        config.fit_window_us = v * 1000.0;
    }
    if let Some(v) = o.gain_k {
        config.gain_k = v;
    }
    if let Some(v) = o.sigma {
        config.sigma = v;
    }
    if let Some(v) = o.sample_dt_us {
        config.sample_dt_us = v;
    }
    if let Some(v) = o.waveform_seed {
        config.seeds.waveforms = v;
    }
    if let Some(v) = o.state_seed {
        config.seeds.states = v;
    }
    if let Some(v) = o.noise_seed {
        config.seeds.noise = v;
    }
    if let Some(v) = o.spread {
        config.truth.inhomogeneity = InhomogeneityModel {
            enabled: true,
            spread: v,
            ..config.truth.inhomogeneity.clone()
        };
    }
    if o.ls_only {
        config.ls_only = true;
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "n_states = 5\nsigma = 0.3\n[seeds]\nnoise = 99\n").unwrap();
        let o = Overrides {
            sigma: Some(0.1),
            grid_ms: Some(vec![0.1, 0.2]),
            ..Overrides::default()
        };
        let c = load(Some(&p), &o).unwrap();
        assert_eq!(c.n_states, 5);
        assert_eq!(c.sigma, 0.1);
        assert_eq!(c.seeds.noise, 99);
        assert_eq!(c.seeds.states, 11);
        assert_eq!(c.t_grid_us, vec![100.0, 200.0]);
    }

    #[test]
    fn unknown_or_invalid_settings_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "n_states = \"many\"\n").unwrap();
        assert!(load(Some(&p), &Overrides::default()).is_err());
        let o = Overrides {
            n_states: Some(1),
            ..Overrides::default()
        };
        assert!(load(None, &o).is_err());
    }
}
