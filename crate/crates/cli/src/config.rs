//! Run configuration: a flat TOML table whose keys mirror the command-line
//! flags. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use dwpe::danse::DanseParams;
use dwpe::netsim::Mode;
use dwpe::room::RoomScenario;
use dwpe::wpe::{PsdFloor, WpeParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Room scenario file. The built-in twelve-node scenario when absent.
    pub scenario: Option<PathBuf>,
    /// Dry source WAV. A synthetic speech-like signal when absent.
    pub clean: Option<PathBuf>,
    /// Length of the synthetic source in seconds.
    pub duration: f64,
    pub seed: u64,
    pub mode: String,
    pub delay: usize,
    pub filter_order: usize,
    pub psd_floor: f64,
    /// Interpret `psd_floor` as an absolute power instead of a fraction of
    /// the reference channel's mean power.
    pub psd_floor_absolute: bool,
    pub ridge: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Rounds between broadcasts. Required in distributed mode.
    pub collab_period: Option<usize>,
    /// Nodes reported in single and centralized mode and evaluated.
    pub nodes: Vec<usize>,
    /// Largest synchronization lag in samples; 0 disables synchronization.
    pub max_sync_lag: usize,
    /// Network sizes tabulated by `report`.
    pub network_sizes: Vec<usize>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let wpe = WpeParams::default();
        let (psd_floor, psd_floor_absolute) = match wpe.psd_floor {
            PsdFloor::Relative(v) => (v, false),
            PsdFloor::Absolute(v) => (v, true),
        };
        Self {
            scenario: None,
            clean: None,
            duration: 10.0,
            seed: 1,
            mode: "single".into(),
            delay: wpe.delay,
            filter_order: wpe.filter_order,
            psd_floor,
            psd_floor_absolute,
            ridge: wpe.ridge,
            max_iters: wpe.max_iters,
            tol: wpe.convergence_tol,
            collab_period: None,
            nodes: vec![0, 3, 6],
            max_sync_lag: 2000,
            network_sizes: vec![6, 9, 12],
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parses a config file. Relative `scenario` and `clean` paths are
    /// resolved against the file's directory.
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: Self = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.scenario, &mut config.clean].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn mode(&self) -> CliResult<Mode> {
        self.mode
            .parse()
            .map_err(|_| CliError::Config(format!("unknown mode '{}'", self.mode)))
    }

    pub fn wpe_params(&self) -> WpeParams {
        WpeParams {
            delay: self.delay,
            filter_order: self.filter_order,
            psd_floor: if self.psd_floor_absolute {
                PsdFloor::Absolute(self.psd_floor)
            } else {
                PsdFloor::Relative(self.psd_floor)
            },
            max_iters: self.max_iters,
            convergence_tol: self.tol,
            ridge: self.ridge,
        }
    }

    pub fn danse_params(&self) -> CliResult<DanseParams> {
        let a = match (self.mode()?, self.collab_period) {
            (_, Some(a)) => a,
            (Mode::Distributed, None) => {
                return Err(CliError::Config(
                    "distributed mode requires collab_period".into(),
                ))
            }
            (_, None) => 1,
        };
        Ok(DanseParams::new(self.wpe_params(), a))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.mode()?;
        self.danse_params()?.validate()?;
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(CliError::Config(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if self.nodes.is_empty() {
            return Err(CliError::Config("at least one report node is required".into()));
        }
        Ok(())
    }

    pub fn load_scenario(&self) -> CliResult<RoomScenario> {
        match &self.scenario {
            None => Ok(RoomScenario::default_simulated()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                RoomScenario::from_toml_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
            }
        }
    }

    /// Short hash of every setting that influences numerical output.
    pub fn fingerprint(&self, scenario_id: &str) -> String {
        let text = format!(
            "{scenario_id}|{:?}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{:?}|{}",
            self.clean,
            self.duration,
            self.seed,
            self.delay,
            self.filter_order,
            self.psd_floor,
            self.psd_floor_absolute,
            self.ridge,
            self.max_iters,
            self.tol,
            self.collab_period,
            self.max_sync_lag,
        );
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("mode = \"single\"\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c: RunConfig = toml::from_str("mode = \"single\"\ndelay = 3\n").unwrap();
        assert_eq!(c.delay, 3);
        assert_eq!(c.filter_order, RunConfig::default().filter_order);
        c.validate().unwrap();
    }

    #[test]
    fn distributed_requires_collab_period() {
        let mut c = RunConfig {
            mode: "distributed".into(),
            ..RunConfig::default()
        };
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        c.mode = "single".into();
        c.validate().unwrap();
    }

    #[test]
    fn fingerprint_tracks_parameters() {
        let a = RunConfig::default();
        let b = RunConfig {
            filter_order: 20,
            ..a.clone()
        };
        assert_eq!(a.fingerprint("x"), a.fingerprint("x"));
        assert_ne!(a.fingerprint("x"), b.fingerprint("x"));
        assert_ne!(a.fingerprint("x"), a.fingerprint("y"));
    }
}
