use std::path::{Path, PathBuf};

use clap::Args;
use cvtomo::fock::{Parity, StateSpec, C64};
use cvtomo::measurement::Scheme;
use cvtomo::sampler::StepSize;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Run parameters shared by all subcommands. Values come from the config
/// file first and are then overridden by command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nc: Option<usize>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<StepSize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chains: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_resolution: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_halfwidth: Option<f64>,
    /// Input dataset CSV.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Infer from the x quadrature of heterodyne data only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_only: Option<bool>,
    /// Reference state file for fidelities.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// Compare against the lossy truth (`rho_lossy` in a truth file).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lossy_truth: Option<bool>,
    /// Ensembles to analyze.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ensembles: Vec<PathBuf>,
    /// Density-matrix file to analyze.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wigner: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wigner_halfwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wigner_spacing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity_curve: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cat: Option<Parity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_max: Option<f64>,
    /// Vacuum (signal-blocked) traces, one per LO power.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vacuum: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub electronics: Option<PathBuf>,
    /// Signal trace to convert into a dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ramp_frequency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_spacing: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_group: Option<usize>,
    /// Ground-truth state; a table in the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<StateSpec>,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML (or JSON) run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// hom or het.
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Photon-number cutoff.
    #[arg(long)]
    pub nc: Option<usize>,
    /// Number of records.
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Retained samples.
    #[arg(long = "R")]
    pub r: Option<usize>,
    /// Thinning stride.
    #[arg(long = "T")]
    pub t: Option<usize>,
    /// Step parameter, a number in (0, 1] or "adaptive".
    #[arg(long)]
    pub beta: Option<StepSize>,
    #[arg(long)]
    pub burn_in: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub grid_resolution: Option<f64>,
    #[arg(long)]
    pub grid_halfwidth: Option<f64>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Keep only the x quadrature of heterodyne data.
    #[arg(long)]
    pub x_only: bool,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Use the state after loss from the truth file.
    #[arg(long)]
    pub lossy_truth: bool,
    /// Ensemble JSONL file; repeat for several.
    #[arg(long = "ensemble")]
    pub ensembles: Vec<PathBuf>,
    #[arg(long)]
    pub rho: Option<PathBuf>,
    /// Write the Wigner function of the analyzed state.
    #[arg(long)]
    pub wigner: bool,
    /// Write fidelity against the truth for each ensemble.
    #[arg(long)]
    pub fidelity_curve: bool,
    /// Nearest-cat analysis with the given parity.
    #[arg(long)]
    pub cat: Option<Parity>,
    #[arg(long)]
    pub alpha_max: Option<f64>,
    /// Vacuum trace header; repeat for several LO powers.
    #[arg(long)]
    pub vacuum: Vec<PathBuf>,
    #[arg(long)]
    pub electronics: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub ramp_frequency: Option<f64>,
    /// Ground-truth state, e.g. coherent:1.2,-0.4 thermal:1.5 squeezed:0.3 fock:2 cat:1.64,0:odd.
    #[arg(long, value_parser = parse_state)]
    pub state: Option<StateSpec>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop (with a checkpoint) once this many chain steps are done.
    #[arg(long, hide = true)]
    pub stop_after: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))
    }

    /// Config file (if any) with flags applied on top.
    pub fn resolve(flags: &Flags) -> Result<Self, CliError> {
        let mut c = match &flags.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        macro_rules! over {
            ($($f:ident),*) => {
                $(if flags.$f.is_some() { c.$f = flags.$f.clone(); })*
            };
        }
        over!(
            seed, out, scheme, eta, nc, k, r, t, beta, burn_in, chains, checkpoint_every, grid_resolution,
            grid_halfwidth, data, truth, rho, cat, alpha_max, electronics, trace, ramp_frequency, state
        );
        if flags.wigner {
            c.wigner = Some(true);
        }
        if flags.lossy_truth {
            c.lossy_truth = Some(true);
        }
        if flags.x_only {
            c.x_only = Some(true);
        }
        if flags.fidelity_curve {
            c.fidelity_curve = Some(true);
        }
        if !flags.ensembles.is_empty() {
            c.ensembles = flags.ensembles.clone();
        }
        if !flags.vacuum.is_empty() {
            c.vacuum = flags.vacuum.clone();
        }
        Ok(c)
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        self.out.clone().ok_or_else(|| CliError::Config("no output directory (--out)".into()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Runtime(e.into()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

/// Parses `family:params[:parity]`.
pub fn parse_state(s: &str) -> Result<StateSpec, String> {
    let mut parts = s.split(':');
    let family = parts.next().unwrap_or_default();
    let args = parts.next().unwrap_or_default();
    let extra = parts.next();
    let nums = || -> Result<Vec<f64>, String> {
        args.split(',')
            .filter(|a| !a.is_empty())
            .map(|a| a.trim().parse::<f64>().map_err(|e| format!("bad number {a:?} in state: {e}")))
            .collect()
    };
    let complex = |v: &[f64]| -> Result<C64, String> {
        match v {
            [re] => Ok(C64::new(*re, 0.0)),
            [re, im] => Ok(C64::new(*re, *im)),
            _ => Err(format!("expected re[,im] in {s:?}")),
        }
    };
    let single = |v: &[f64]| -> Result<f64, String> {
        match v {
            [x] => Ok(*x),
            _ => Err(format!("expected one number in {s:?}")),
        }
    };
    let v = nums()?;
    Ok(match family {
        "vacuum" => StateSpec::vacuum(),
        "coherent" => StateSpec::Coherent { alpha: complex(&v)? },
        "thermal" => StateSpec::Thermal { mu: single(&v)? },
        "squeezed" => StateSpec::SqueezedVacuum { r: single(&v)? },
        "fock" => {
            let n = single(&v)?;
            if n < 0.0 || n.fract() != 0.0 {
                return Err(format!("Fock number must be a non-negative integer in {s:?}"));
            }
            StateSpec::Fock { n: n as usize }
        }
        "cat" => {
            let parity = extra.unwrap_or("even").parse::<Parity>().map_err(|e| e.to_string())?;
            StateSpec::Cat { alpha: complex(&v)?, parity }
        }
        other => return Err(format!("unknown state family {other:?}")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_strings() {
        assert_eq!(parse_state("coherent:1.2,-0.4").unwrap(), StateSpec::Coherent { alpha: C64::new(1.2, -0.4) });
        assert_eq!(parse_state("thermal:1.5").unwrap(), StateSpec::Thermal { mu: 1.5 });
        assert_eq!(
            parse_state("cat:1.64:odd").unwrap(),
            StateSpec::Cat { alpha: C64::new(1.64, 0.0), parity: Parity::Odd }
        );
        assert_eq!(parse_state("vacuum").unwrap(), StateSpec::vacuum());
        assert!(parse_state("fock:1.5").is_err());
        assert!(parse_state("laser:1").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig {
            seed: Some(3),
            scheme: Some(Scheme::Heterodyne),
            beta: Some(StepSize::adaptive()),
            state: Some(StateSpec::Cat { alpha: C64::new(1.0, 0.5), parity: Parity::Odd }),
            ensembles: vec!["a.jsonl".into()],
            ..Default::default()
        };
        let text = c.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        let fixed: RunConfig = toml::from_str("beta = 0.3\nscheme = \"hom\"\nK = 5").unwrap();
        assert_eq!(fixed.beta, Some(StepSize::Fixed(0.3)));
        assert_eq!(fixed.k, Some(5));
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }
}
