//! Run configuration: optional TOML file merged under command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every knob a pipeline file may set. Keys mirror the long flag names with
/// `-` replaced by `_`.
#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub sequential: Option<bool>,

    pub nv: Option<usize>,
    pub np: Option<usize>,
    pub nb: Option<usize>,
    pub nc: Option<usize>,
    pub unstable: Option<usize>,
    pub shift: Option<f64>,
    pub seed: Option<u64>,
    pub grid: Option<usize>,
    pub viscosity: Option<f64>,
    pub convection: Option<f64>,

    pub m: Option<usize>,
    pub form: Option<String>,
    pub omega_lo: Option<f64>,
    pub omega_hi: Option<f64>,
    pub points: Option<usize>,

    pub tol: Option<f64>,
    pub dtol: Option<f64>,
    pub m_max: Option<usize>,
    pub check_every: Option<usize>,

    pub gain: Option<PathBuf>,
    pub input: Option<String>,
    pub h: Option<f64>,
    pub horizon: Option<f64>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident, $($field:ident),* $(,)?) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `flags` replace the ones from the file.
    pub fn overlay(mut self, flags: &RunConfig) -> Self {
        overlay!(
            self,
            flags,
            system,
            out,
            sequential,
            nv,
            np,
            nb,
            nc,
            unstable,
            shift,
            seed,
            grid,
            viscosity,
            convection,
            m,
            form,
            omega_lo,
            omega_hi,
            points,
            tol,
            dtol,
            m_max,
            check_every,
            gain,
            input,
            h,
            horizon,
        );
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(msg.into()));
        if self.tol.is_some_and(|t| !(t > 0.0)) {
            return bad("tol must be positive");
        }
        if self.dtol.is_some_and(|t| !(t > 0.0)) {
            return bad("dtol must be positive");
        }
        if self.m_max == Some(0) {
            return bad("m_max must be at least 1");
        }
        if self.m == Some(0) {
            return bad("m must be at least 1");
        }
        if self.check_every == Some(0) {
            return bad("check_every must be at least 1");
        }
        if !(self.omega_lo() > 0.0 && self.omega_lo() < self.omega_hi()) {
            return bad("need 0 < omega_lo < omega_hi");
        }
        if self.points == Some(0) {
            return bad("points must be at least 1");
        }
        if self.h.is_some_and(|h| !(h > 0.0)) || self.horizon.is_some_and(|t| !(t > 0.0)) {
            return bad("h and horizon must be positive");
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn omega_lo(&self) -> f64 {
        self.omega_lo.unwrap_or(1e-5)
    }

    pub fn omega_hi(&self) -> f64 {
        self.omega_hi.unwrap_or(1e5)
    }

    pub fn points(&self) -> usize {
        self.points.unwrap_or(200)
    }

    pub fn require_system(&self) -> Result<&Path, CliError> {
        self.system
            .as_deref()
            .ok_or_else(|| CliError::Config("no system bundle given (--system)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let file: RunConfig = toml::from_str("tol = 1e-6\nm = 4\nseed = 3\n").unwrap();
        let flags = RunConfig {
            tol: Some(1e-9),
            ..RunConfig::default()
        };
        let merged = file.overlay(&flags);
        assert_eq!(merged.tol, Some(1e-9));
        assert_eq!(merged.m, Some(4));
        assert_eq!(merged.seed, Some(3));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("tolerance = 1e-6\n").is_err());
    }

    #[test]
    fn invalid_knobs_fail_validation() {
        let cfg = RunConfig {
            omega_lo: Some(10.0),
            omega_hi: Some(1.0),
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
