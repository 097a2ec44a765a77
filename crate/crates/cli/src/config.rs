//! Run configuration: one TOML file with sections mirroring the library types.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use endemic::data::IsoWeek;
use endemic::eval::ResidualScale;
use endemic::forecast::ForecastConfig;
use endemic::inference::FitOptions;
use endemic::model::ModelSpec;

use crate::ConfigError;

fn default_seed() -> u64 {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed, copied into every section that draws random numbers.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub select: Option<SelectConfig>,
    #[serde(default)]
    pub forecast: ForecastConfig,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub compare: Option<CompareConfig>,
    #[serde(default)]
    pub residuals: ResidualsConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub counts: Option<PathBuf>,
    pub neighbourhood: Option<PathBuf>,
    pub populations: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    /// First week used (inclusive); defaults to the first week on file.
    pub start: Option<IsoWeek>,
    /// Last week used (inclusive); defaults to the last week on file.
    pub end: Option<IsoWeek>,
    /// First forecast target week; fitting uses the weeks before it.
    pub test_start: Option<IsoWeek>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    pub p_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_weeks: usize,
    #[serde(default = "default_sim_start")]
    pub start: IsoWeek,
    /// Unit names; taken from the populations or neighbourhood order when empty.
    #[serde(default)]
    pub units: Vec<String>,
    /// Inner coefficients on the estimation scale, by name. The
    /// serial-interval parameter comes from the model section.
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
    /// Fit report whose coefficients (and model) are used instead.
    #[serde(default)]
    pub from_fit: Option<PathBuf>,
}

fn default_sim_start() -> IsoWeek {
    IsoWeek::new(2000, 1).expect("valid week")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreFile {
    pub label: String,
    pub path: PathBuf,
}

fn default_n_perm() -> usize {
    9999
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub baseline: String,
    #[serde(default = "default_n_perm")]
    pub n_perm: usize,
    #[serde(default)]
    pub horizons: Option<Vec<usize>>,
    #[serde(default)]
    pub scores: Vec<ScoreFile>,
}

fn default_max_lag() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualsConfig {
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
    #[serde(default)]
    pub scale: ResidualScale,
}

impl Default for ResidualsConfig {
    fn default() -> Self {
        ResidualsConfig {
            max_lag: default_max_lag(),
            scale: ResidualScale::StdDev,
        }
    }
}

/// Drops `.` and resolves `..` lexically.
pub fn normalize(path: &Path) -> PathBuf {
    use std::path::Component;
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: default_seed(),
            out_dir: default_out(),
            data: DataConfig::default(),
            model: None,
            fit: FitOptions::default(),
            select: None,
            forecast: ForecastConfig::default(),
            simulate: None,
            compare: None,
            residuals: ResidualsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        toml::from_str(text)
            .map_err(|e| ConfigError(format!("{}: {e}", source.display())))
            .map_err(anyhow::Error::from)
    }

    /// Reads a config file and makes its relative paths absolute with
    /// respect to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = std::fs::canonicalize(if base.as_os_str().is_empty() {
            Path::new(".")
        } else {
            &base
        })
        .with_context(|| format!("resolving {}", base.display()))?;
        cfg.rebase(&base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = normalize(&base.join(&*p));
            }
        };
        let d = &mut self.data;
        for p in [
            &mut d.counts,
            &mut d.neighbourhood,
            &mut d.populations,
            &mut d.covariates,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.out_dir);
        if let Some(s) = &mut self.simulate {
            if let Some(p) = &mut s.from_fit {
                fix(p);
            }
        }
        if let Some(c) = &mut self.compare {
            for s in &mut c.scores {
                fix(&mut s.path);
            }
        }
    }

    /// Applies command-line overrides and spreads the master seed.
    pub fn resolve(&mut self, seed: Option<u64>, out_dir: Option<PathBuf>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out_dir {
            self.out_dir = o;
        }
        self.fit.seed = self.seed;
        self.forecast.seed = self.seed;
    }

    pub fn model(&self) -> Result<&ModelSpec> {
        match &self.model {
            Some(m) => Ok(m),
            None => bail!(ConfigError("missing [model] section".into())),
        }
    }

    pub fn counts_path(&self) -> Result<&Path> {
        match &self.data.counts {
            Some(p) => Ok(p),
            None => bail!(ConfigError("missing data.counts".into())),
        }
    }

    /// Checks that every referenced input file exists.
    pub fn check_inputs(&self) -> Result<()> {
        let d = &self.data;
        let mut files: Vec<&PathBuf> = [&d.counts, &d.neighbourhood, &d.populations, &d.covariates]
            .into_iter()
            .flatten()
            .collect();
        if let Some(s) = &self.simulate {
            files.extend(s.from_fit.iter());
        }
        if let Some(c) = &self.compare {
            files.extend(c.scores.iter().map(|s| &s.path));
        }
        for f in files {
            if !f.is_file() {
                bail!(ConfigError(format!(
                    "input file {} does not exist",
                    f.display()
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing resolved config")
    }
}
