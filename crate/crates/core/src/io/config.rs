//! The run configuration: one TOML file per run, parsed strictly.
//!
//! Every problem found is reported at once, not only the first one.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{RatesStudyConfig, SmbStudyConfig};
use crate::matern::PcPrior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SmbStudy,
    RatesStudy,
    Fit,
    Simulate,
    Transport,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::SmbStudy, Mode::RatesStudy, Mode::Fit, Mode::Simulate, Mode::Transport];

    pub fn name(self) -> &'static str {
        match self {
            Mode::SmbStudy => "smb-study",
            Mode::RatesStudy => "rates-study",
            Mode::Fit => "fit",
            Mode::Simulate => "simulate",
            Mode::Transport => "transport",
        }
    }

    /// The mode-specific section this mode reads.
    fn section(self) -> &'static str {
        match self {
            Mode::SmbStudy => "smb",
            Mode::RatesStudy => "rates",
            Mode::Fit => "fit",
            Mode::Simulate => "simulate",
            Mode::Transport => "transport",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mode '{s}'")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polygon: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observations: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub thin: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iter: 2000,
            burn_in: 1000,
            chains: 4,
            thin: 1,
        }
    }
}

/// Single Matérn field plus intercept and covariate fixed effects, fitted
/// to a point-observation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Initial (or fixed) field SD and range.
    pub sigma: f64,
    pub rho: f64,
    pub prior: PcPrior,
    pub estimate_hyperparameters: bool,
    /// Used when no mesh file is given.
    pub mesh_edge: f64,
    pub mesh_margin: f64,
    /// Cell side of the output map; 0 disables it.
    pub grid_resolution: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            rho: 0.3,
            prior: PcPrior {
                rho0: 0.1,
                alpha_rho: 0.05,
                sigma0: 2.0,
                alpha_sigma: 0.05,
            },
            estimate_hyperparameters: true,
            mesh_edge: 0.05,
            mesh_margin: 0.2,
            grid_resolution: 0.02,
        }
    }
}

/// Synthetic point data: intercept plus a Matérn field drawn on a mesh of
/// the polygon (unit square when none is given).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub sigma: f64,
    pub rho: f64,
    pub intercept: f64,
    pub n_obs: usize,
    pub noise_sd: f64,
    pub mesh_edge: f64,
    pub mesh_margin: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            rho: 0.3,
            intercept: 0.0,
            n_obs: 200,
            noise_sd: 0.1,
            mesh_edge: 0.05,
            mesh_margin: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryKind {
    Periodic,
    FreeFlux,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum VelocityConfig {
    Uniform { u: f64, v: f64 },
    Spreading { speed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaternAr1 {
    pub sigma: f64,
    pub rho: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaternOnly {
    pub sigma: f64,
    pub rho: f64,
}

/// Synthetic elevation-change truth from the transport solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub n_epochs: usize,
    pub epoch_length: f64,
    pub steps_per_epoch: usize,
    pub boundary: BoundaryKind,
    pub velocity: VelocityConfig,
    pub dome_height: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smb: Option<MaternAr1>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub firn: Option<MaternAr1>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gia: Option<MaternOnly>,
    pub mesh_edge: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            nx: 40,
            ny: 40,
            dx: 0.025,
            n_epochs: 7,
            epoch_length: 1.0,
            steps_per_epoch: 20,
            boundary: BoundaryKind::FreeFlux,
            velocity: VelocityConfig::Spreading { speed: 0.2 },
            dome_height: 1.0,
            smb: Some(MaternAr1 {
                sigma: 0.15,
                rho: 0.3,
                a: 0.3,
            }),
            firn: Some(MaternAr1 {
                sigma: 0.03,
                rho: 0.8,
                a: 0.5,
            }),
            gia: Some(MaternOnly { sigma: 0.05, rho: 0.8 }),
            mesh_edge: 0.1,
        }
    }
}

/// A fully validated run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub paths: Paths,
    pub sampler: SamplerConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smb: Option<SmbStudyConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rates: Option<RatesStudyConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportConfig>,
}

const TOP_KEYS: [&str; 9] = [
    "mode", "seed", "paths", "sampler", "smb", "rates", "fit", "simulate", "transport",
];

fn section<T: DeserializeOwned + Default>(table: &toml::Table, key: &str, errors: &mut Vec<String>) -> T {
    match table.get(key) {
        None => T::default(),
        Some(v) => v.clone().try_into().unwrap_or_else(|e: toml::de::Error| {
            errors.push(format!("[{key}]: {}", e.message().trim()));
            T::default()
        }),
    }
}

fn flatten(e: Error, prefix: &str, errors: &mut Vec<String>) {
    match e {
        Error::Config(list) => errors.extend(list.into_iter().map(|m| format!("[{prefix}]: {m}"))),
        other => errors.push(format!("[{prefix}]: {other}")),
    }
}

fn positive(errors: &mut Vec<String>, name: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        errors.push(format!("{name} must be positive and finite (got {v})"));
    }
}

fn check_file(errors: &mut Vec<String>, base: &Path, name: &str, p: &Option<PathBuf>, required: bool) {
    match p {
        Some(p) if !base.join(p).is_file() => errors.push(format!("paths.{name}: file '{}' does not exist", p.display())),
        None if required => errors.push(format!("paths.{name} is required by this mode")),
        _ => {}
    }
}

impl RunConfig {
    /// Reads and validates a config file. Relative paths inside it are
    /// resolved against the file's directory. `seed` overrides the file.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, seed, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses config text; relative paths are resolved against `base`.
    pub fn parse(text: &str, seed: Option<u64>, base: &Path) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(vec![e.message().trim().to_string()]))?;
        let mut errors = Vec::new();
        for key in table.keys() {
            if !TOP_KEYS.contains(&key.as_str()) {
                errors.push(format!("unknown key '{key}'"));
            }
        }
        let mode = match table.get("mode") {
            None => {
                errors.push("missing field 'mode'".into());
                None
            }
            Some(toml::Value::String(s)) => s.parse::<Mode>().map_err(|e| errors.push(e.to_string())).ok(),
            Some(_) => {
                errors.push("'mode' must be a string".into());
                None
            }
        };
        let file_seed = match table.get("seed") {
            None => None,
            Some(toml::Value::Integer(s)) if *s >= 0 => Some(*s as u64),
            Some(_) => {
                errors.push("'seed' must be a non-negative integer".into());
                None
            }
        };
        let seed = seed.or(file_seed);
        if seed.is_none() {
            errors.push("missing field 'seed' (set it in the file or pass --seed)".into());
        }
        let paths: Paths = section(&table, "paths", &mut errors);
        let sampler: SamplerConfig = section(&table, "sampler", &mut errors);
        if let Some(mode) = mode {
            for m in Mode::ALL {
                if m != mode && table.contains_key(m.section()) {
                    errors.push(format!("section [{}] is not used by mode {mode}", m.section()));
                }
            }
        }
        let mut cfg = RunConfig {
            mode: mode.unwrap_or(Mode::Fit),
            seed: seed.unwrap_or(0),
            paths,
            sampler,
            smb: None,
            rates: None,
            fit: None,
            simulate: None,
            transport: None,
        };
        match mode {
            Some(Mode::SmbStudy) => {
                let s: SmbStudyConfig = section(&table, "smb", &mut errors);
                if let Err(e) = s.validate() {
                    flatten(e, "smb", &mut errors);
                }
                cfg.smb = Some(s);
            }
            Some(Mode::RatesStudy) => {
                let s: RatesStudyConfig = section(&table, "rates", &mut errors);
                if let Err(e) = s.validate() {
                    flatten(e, "rates", &mut errors);
                }
                cfg.rates = Some(s);
            }
            Some(Mode::Fit) => {
                let s: FitConfig = section(&table, "fit", &mut errors);
                positive(&mut errors, "fit.sigma", s.sigma);
                positive(&mut errors, "fit.rho", s.rho);
                if s.grid_resolution < 0.0 {
                    errors.push("fit.grid_resolution must not be negative".into());
                }
                if let Err(e) = s.prior.validate() {
                    flatten(e, "fit.prior", &mut errors);
                }
                check_file(&mut errors, base, "observations", &cfg.paths.observations, true);
                check_file(&mut errors, base, "mesh", &cfg.paths.mesh, false);
                check_file(&mut errors, base, "polygon", &cfg.paths.polygon, false);
                if cfg.paths.mesh.is_none() {
                    positive(&mut errors, "fit.mesh_edge", s.mesh_edge);
                }
                cfg.fit = Some(s);
            }
            Some(Mode::Simulate) => {
                let s: SimulateConfig = section(&table, "simulate", &mut errors);
                positive(&mut errors, "simulate.sigma", s.sigma);
                positive(&mut errors, "simulate.rho", s.rho);
                positive(&mut errors, "simulate.noise_sd", s.noise_sd);
                positive(&mut errors, "simulate.mesh_edge", s.mesh_edge);
                if s.n_obs == 0 {
                    errors.push("simulate.n_obs must be at least 1".into());
                }
                check_file(&mut errors, base, "polygon", &cfg.paths.polygon, false);
                cfg.simulate = Some(s);
            }
            Some(Mode::Transport) => {
                let s: TransportConfig = section(&table, "transport", &mut errors);
                if s.nx == 0 || s.ny == 0 || s.n_epochs == 0 || s.steps_per_epoch == 0 {
                    errors.push("transport: nx, ny, n_epochs and steps_per_epoch must be at least 1".into());
                }
                positive(&mut errors, "transport.dx", s.dx);
                positive(&mut errors, "transport.epoch_length", s.epoch_length);
                positive(&mut errors, "transport.mesh_edge", s.mesh_edge);
                cfg.transport = Some(s);
            }
            None => {}
        }
        if matches!(mode, Some(Mode::Fit) | Some(Mode::SmbStudy)) {
            let s = &cfg.sampler;
            if s.n_iter == 0 || s.chains == 0 || s.thin == 0 {
                errors.push("sampler: n_iter, chains and thin must be at least 1".into());
            }
        }
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let p = &mut cfg.paths;
        for p in [&mut p.mesh, &mut p.polygon, &mut p.observations, &mut p.output].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// The resolved config with every default filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, None, Path::new("."))
    }

    #[test]
    fn minimal_smb_config_gets_defaults() {
        let cfg = parse("mode = \"smb-study\"\nseed = 3\n").unwrap();
        assert_eq!(cfg.smb, Some(SmbStudyConfig::default()));
        let dumped = cfg.to_toml();
        let again = parse(&dumped).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn missing_seed_names_the_field() {
        let e = parse("mode = \"transport\"\n").unwrap_err();
        assert!(e.to_string().contains("'seed'"), "{e}");
        assert!(parse("mode = \"transport\"\n").is_err());
        assert!(RunConfig::parse("mode = \"transport\"\n", Some(4), Path::new(".")).is_ok());
    }

    #[test]
    fn every_error_is_reported() {
        let text = "mode = \"rates-study\"\nseed = 1\ncolour = 3\n[rates]\nn_epochs = 0\nbogus = 1\n[fit]\n";
        let Err(Error::Config(list)) = parse(text) else {
            panic!("expected config errors");
        };
        assert!(list.iter().any(|m| m.contains("colour")), "{list:?}");
        assert!(list.iter().any(|m| m.contains("bogus")), "{list:?}");
        assert!(list.iter().any(|m| m.contains("[fit]")), "{list:?}");
        assert!(list.len() >= 3);
    }

    #[test]
    fn fit_requires_existing_observation_file() {
        let e = parse("mode = \"fit\"\nseed = 1\n[paths]\nobservations = \"nope.csv\"\n").unwrap_err();
        assert!(e.to_string().contains("nope.csv"));
        assert_eq!(e.exit_code(), 2);
    }
}
