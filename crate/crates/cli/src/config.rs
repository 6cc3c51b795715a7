//! Run configuration, presets and hashing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use symsde::eval::{Method, Selection};
use symsde::evolution::GpConfig;
use symsde::kmsr::KmGrid;
use symsde::simulate::{make_environment, EnvOverrides, EnvironmentSpec, Scheme};
use symsde::{Error, Result};

/// Code version embedded in every output file.
pub const VERSION: &str = concat!("symsde ", env!("CARGO_PKG_VERSION"));

/// Which hyperparameter table to start from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// The published settings.
    #[default]
    Paper,
    /// Roughly 4× smaller populations and generations, 5 seeds.
    Desk,
}

impl Scale {
    pub fn parse(text: &str) -> Option<Scale> {
        match text {
            "paper" => Some(Scale::Paper),
            "desk" => Some(Scale::Desk),
            _ => None,
        }
    }

    pub fn default_seeds(self) -> usize {
        match self {
            Scale::Paper => 10,
            Scale::Desk => 5,
        }
    }
}

fn default_seed() -> u64 {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn default_multistep() -> usize {
    5
}

fn default_true() -> bool {
    true
}

/// A run as written by the user. Preset values fill everything not given;
/// `gp` and `km` entries override single preset fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub environment: String,
    pub method: Method,
    /// First seed; seed `k` of the run is `seed + k`.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Number of seeds; defaults to the scale's count.
    #[serde(default)]
    pub seeds: Option<usize>,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Directory written by `generate-data`; data is generated in memory when absent.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub scheme: Scheme,
    /// Drift sub-steps per observation for the multistep methods.
    #[serde(default = "default_multistep")]
    pub multistep: usize,
    #[serde(default)]
    pub selection: Selection,
    /// Save the evolution state after every generation and resume from it.
    #[serde(default = "default_true")]
    pub checkpoint: bool,
    #[serde(default)]
    pub env: EnvOverrides,
    #[serde(default)]
    pub gp: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub km: BTreeMap<String, serde_json::Value>,
}

impl RunConfig {
    pub fn new(environment: &str, method: Method) -> Self {
        RunConfig {
            environment: environment.to_string(),
            method,
            seed: default_seed(),
            seeds: None,
            scale: Scale::default(),
            output: default_output(),
            data: None,
            threads: 0,
            scheme: Scheme::default(),
            multistep: default_multistep(),
            selection: Selection::default(),
            checkpoint: true,
            env: EnvOverrides::default(),
            gp: BTreeMap::new(),
            km: BTreeMap::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fills in presets and checks consistency.
    pub fn resolve(&self) -> Result<Resolved> {
        let env = make_environment(&self.environment, &self.env)?;
        let seeds = self.seeds.unwrap_or_else(|| self.scale.default_seeds());
        if seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        if self.seed.checked_add(seeds as u64).is_none() {
            return Err(Error::Config("seed range overflows".into()));
        }
        if self.multistep == 0 {
            return Err(Error::Config("multistep must be at least 1".into()));
        }
        let (gp, km) = if self.method == Method::KmSr {
            if !self.gp.is_empty() {
                return Err(Error::Config("`gp` settings given for method km-sr".into()));
            }
            if env.is_spde() {
                return Err(Error::Config("km-sr does not apply to SPDE environments".into()));
            }
            let grid: KmGrid = overlay(&KmGrid::for_environment(&self.environment)?, &self.km, "km")?;
            grid.validate()?;
            (None, Some(grid))
        } else {
            if !self.km.is_empty() {
                return Err(Error::Config(format!("`km` settings given for method {}", self.method.key())));
            }
            let preset = gp_preset(&self.environment, self.method, env.tau, self.scale)?;
            let gp: GpConfig = overlay(&preset, &self.gp, "gp")?;
            gp.validate()?;
            (Some(gp), None)
        };
        let hash = config_hash(self)?;
        Ok(Resolved { config: self.clone(), env, seeds: (0..seeds as u64).map(|k| self.seed + k).collect(), gp, km, hash })
    }
}

/// Applies field overrides to a serializable preset; unknown fields fail.
fn overlay<T: Serialize + for<'de> Deserialize<'de>>(
    preset: &T,
    fields: &BTreeMap<String, serde_json::Value>,
    section: &str,
) -> Result<T> {
    let mut value = serde_json::to_value(preset)?;
    let obj = value.as_object_mut().expect("presets serialize to objects");
    for (k, v) in fields {
        if !obj.contains_key(k) {
            return Err(Error::Config(format!("unknown `{section}` setting `{k}`")));
        }
        obj.insert(k.clone(), v.clone());
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("`{section}` settings: {e}")))
}

/// Hash of everything that influences results (output path and thread
/// count excluded), as 16 hex digits.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.output = PathBuf::new();
    c.threads = 0;
    let bytes = serde_json::to_vec(&c)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

/// A configuration with presets applied.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub env: EnvironmentSpec,
    pub seeds: Vec<u64>,
    pub gp: Option<GpConfig>,
    pub km: Option<KmGrid>,
    pub hash: String,
}

/// Genetic-programming preset for an environment and method.
pub fn gp_preset(environment: &str, method: Method, tau: f64, scale: Scale) -> Result<GpConfig> {
    let lv_ms = environment == "lotka_volterra" && method.is_multistep();
    let row = |p, g, m, s, ps, gs| GpConfig::from_row(p, g, m, s, ps, gs, 0.1);
    let paper = match environment {
        "double_well_additive" | "double_well_linear" | "double_well_nonlinear" | "van_der_pol" | "rossler" => {
            row(500, 50, 5, 15, 100, 15)
        }
        "lotka_volterra" if lv_ms && tau >= 0.5 - 1e-9 => row(3000, 100, 5, 15, 500, 50),
        "lotka_volterra" if lv_ms && tau >= 0.2 - 1e-9 => row(2000, 100, 5, 15, 500, 50),
        "lotka_volterra" => row(500, 50, 5, 15, 100, 15),
        "lorenz96_5" => row(1000, 100, 5, 20, 200, 15),
        "lorenz96_10" | "lorenz96_20" => row(2000, 200, 5, 20, 200, 15),
        "fisher_kpp" | "heat_2d" => row(1000, 50, 5, 15, 200, 15),
        other => return Err(Error::Config(format!("no GP preset for environment `{other}`"))),
    };
    Ok(match scale {
        Scale::Paper => paper,
        Scale::Desk => match environment {
            "lotka_volterra" if lv_ms && tau >= 0.5 - 1e-9 => row(750, 25, 5, 15, 150, 25),
            "lotka_volterra" if lv_ms && tau >= 0.2 - 1e-9 => row(500, 25, 5, 15, 125, 25),
            "lorenz96_5" => row(250, 25, 5, 20, 50, 15),
            "lorenz96_10" | "lorenz96_20" => row(500, 50, 5, 20, 50, 15),
            "fisher_kpp" | "heat_2d" => row(400, 30, 5, 15, 80, 15),
            _ => row(200, 30, 5, 15, 40, 15),
        },
    })
}
