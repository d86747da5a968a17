//! Key-value run configuration.
//!
//! Files are TOML tables of flat keys:
//!
//! ```toml
//! family = "robust"
//! i = 2
//! trials = 20
//! seed = 7
//! tol = 1e-6
//! init = "pseudoinverse"
//! rng = "chacha20"
//! ```
//!
//! Sources are merged left to right, later values winning. `key=value`
//! overrides use the same key names.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fractional::SolverConfig;
use crate::harness::{BatchConfig, InitStrategy, ModelOverrides};
use crate::problem_gen::{Family, RNG_NAME};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `robust`, `cauchy` or `dct`.
    pub family: Option<String>,
    pub i: Option<u32>,
    #[serde(alias = "K")]
    pub k: Option<usize>,
    #[serde(alias = "F")]
    pub f: Option<f64>,
    #[serde(alias = "D")]
    pub d: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub outliers: Option<usize>,
    pub tol: Option<f64>,
    pub sigma: Option<f64>,
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
    pub shrink: Option<f64>,
    pub max_iters: Option<usize>,
    pub alpha_floor: Option<f64>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    /// `pseudoinverse` or `ridge`.
    pub init: Option<String>,
    /// Ridge parameter for `init = "ridge"`.
    pub mu: Option<f64>,
    pub jobs: Option<usize>,
    pub out_dir: Option<PathBuf>,
    /// Instance file read by `solve`.
    pub instance: Option<PathBuf>,
    /// Instance file written by `gen`.
    pub out: Option<PathBuf>,
    /// Whitespace-separated starting point for `init = "user"`.
    pub x0: Option<PathBuf>,
    /// Where `solve` writes the solution vector.
    pub x_out: Option<PathBuf>,
    pub trace: Option<bool>,
    pub rng: Option<String>,
}

macro_rules! merge_fields {
    ($dst:ident, $src:ident; $($field:ident),*) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field; } )*
    };
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Parses `key=value`. The value is read as a TOML literal and, failing
    /// that, as a bare string.
    pub fn from_override(spec: &str) -> Result<Self> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::Config(format!("invalid override key `{key}`")));
        }
        Self::from_toml_str(&format!("{key} = {value}"))
            .or_else(|_| Self::from_toml_str(&format!("{key} = {}", toml::Value::String(value.to_string()))))
    }

    /// Values set in `other` replace those in `self`.
    pub fn merge(mut self, other: RunConfig) -> Self {
        merge_fields!(self, other;
            family, i, k, f, d, lambda, gamma, outliers, tol, sigma, alpha_min, alpha_max, shrink,
            max_iters, alpha_floor, trials, seed, init, mu, jobs, out_dir, instance, out, x0, x_out, trace, rng);
        self
    }

    pub fn family(&self) -> Result<Family> {
        let name = self
            .family
            .as_deref()
            .ok_or_else(|| Error::Config("no family given".into()))?;
        let family = match name {
            "robust" => Family::RobustCs { scale: self.i.unwrap_or(2) },
            "cauchy" => Family::Cauchy { scale: self.i.unwrap_or(2) },
            "dct" => Family::GaussianDct {
                sparsity: self.k.unwrap_or(8),
                coherence: self.f.unwrap_or(5.0),
                dynamic_range: self.d.unwrap_or(2.0),
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown family `{other}` (expected robust, cauchy or dct)"
                )))
            }
        };
        family.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(family)
    }

    /// Solver settings on top of `base`.
    pub fn solver(&self, base: SolverConfig) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            alpha_min: self.alpha_min.unwrap_or(base.alpha_min),
            alpha_max: self.alpha_max.unwrap_or(base.alpha_max),
            sigma: self.sigma.unwrap_or(base.sigma),
            shrink_factor: self.shrink.unwrap_or(base.shrink_factor),
            rel_step_tol: self.tol.unwrap_or(base.rel_step_tol),
            max_outer_iters: self.max_iters.unwrap_or(base.max_outer_iters),
            alpha_floor: self.alpha_floor.unwrap_or(base.alpha_floor),
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// `init = "user"` reads the vector named by `x0`.
    pub fn init_strategy(&self) -> Result<InitStrategy> {
        match self.init.as_deref().unwrap_or("pseudoinverse") {
            "pseudoinverse" => Ok(InitStrategy::Pseudoinverse),
            "ridge" => Ok(InitStrategy::RegularizedLeastSquares {
                mu: self.mu.unwrap_or(1e-6),
            }),
            "user" => {
                let path = self
                    .x0
                    .as_deref()
                    .ok_or_else(|| Error::Config("init = \"user\" needs x0".into()))?;
                Ok(InitStrategy::UserSupplied(read_vector(path)?))
            }
            other => Err(Error::Config(format!(
                "unknown init strategy `{other}` (expected pseudoinverse, ridge or user)"
            ))),
        }
    }

    pub fn overrides(&self) -> ModelOverrides {
        ModelOverrides {
            lambda: self.lambda,
            gamma: self.gamma,
            outliers: self.outliers,
        }
    }

    pub fn check_rng(&self) -> Result<()> {
        match self.rng.as_deref() {
            None => Ok(()),
            Some(name) if name == RNG_NAME => Ok(()),
            Some(name) => Err(Error::Config(format!("unsupported rng `{name}`, only {RNG_NAME} is available"))),
        }
    }

    pub fn batch(&self) -> Result<BatchConfig> {
        self.check_rng()?;
        let family = self.family()?;
        let mut batch = BatchConfig::protocol(family);
        batch.solver = self.solver(batch.solver)?;
        batch.init = self.init_strategy()?;
        batch.overrides = self.overrides();
        if let Some(trials) = self.trials {
            batch.trials = trials;
        }
        if let Some(seed) = self.seed {
            batch.root_seed = seed;
        }
        if let Some(jobs) = self.jobs {
            if jobs == 0 {
                return Err(Error::Config("jobs must be at least 1".into()));
            }
            batch.jobs = jobs;
        }
        if batch.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        Ok(batch)
    }
}

/// Reads whitespace-separated floats.
pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let text = std::fs::read_to_string(path)?;
    let values = text
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("{}: `{tok}` is not a number", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(values))
}

/// Writes one float per line in shortest round-trip form.
pub fn write_vector(path: &Path, x: &DVector<f64>) -> Result<()> {
    let mut text = String::with_capacity(24 * x.len());
    for v in x.iter() {
        text.push_str(&format!("{v:e}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_keys() {
        let cfg = RunConfig::from_toml_str(
            "family = \"dct\"\nK = 12\nF = 15\nD = 3.0\ntol = 1e-8\ntrials = 3\nrng = \"chacha20\"\n",
        )
        .unwrap();
        assert_eq!(cfg.k, Some(12));
        assert_eq!(cfg.f, Some(15.0));
        let batch = cfg.batch().unwrap();
        assert_eq!(
            batch.family,
            Family::GaussianDct {
                sparsity: 12,
                coherence: 15.0,
                dynamic_range: 3.0
            }
        );
        assert_eq!(batch.trials, 3);
        assert_eq!(batch.solver.rel_step_tol, 1e-8);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(RunConfig::from_toml_str("famly = \"robust\""), Err(Error::Config(_))));
        assert!(RunConfig::from_override("nope=1").is_err());
    }

    #[test]
    fn overrides_parse_literals_and_bare_strings() {
        assert_eq!(RunConfig::from_override("lambda=0.5").unwrap().lambda, Some(0.5));
        assert_eq!(RunConfig::from_override("family=cauchy").unwrap().family.as_deref(), Some("cauchy"));
        assert_eq!(RunConfig::from_override("family=\"dct\"").unwrap().family.as_deref(), Some("dct"));
        assert_eq!(RunConfig::from_override("trace=true").unwrap().trace, Some(true));
        assert!(RunConfig::from_override("lambda").is_err());
        assert!(RunConfig::from_override("trials=many").is_err());
    }

    #[test]
    fn later_sources_win() {
        let file = RunConfig::from_toml_str("family = \"robust\"\ni = 4\nseed = 1").unwrap();
        let merged = file
            .merge(RunConfig::from_override("seed=9").unwrap())
            .merge(RunConfig::from_override("i=2").unwrap());
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.i, Some(2));
        assert_eq!(merged.family.as_deref(), Some("robust"));
    }

    #[test]
    fn protocol_defaults_per_family() {
        let robust = RunConfig::from_override("family=robust").unwrap().batch().unwrap();
        assert_eq!(robust.trials, 20);
        assert_eq!(robust.solver.rel_step_tol, 1e-6);
        assert_eq!(robust.init, InitStrategy::Pseudoinverse);
        let dct = RunConfig::from_override("family=dct").unwrap().batch().unwrap();
        assert_eq!(dct.solver.rel_step_tol, 1e-8);
    }

    #[test]
    fn vector_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        let x = DVector::from_vec(vec![0.1, -2.5e-300, 0.0, 1.0 / 3.0]);
        write_vector(&path, &x).unwrap();
        assert_eq!(read_vector(&path).unwrap(), x);
        let cfg = RunConfig {
            init: Some("user".into()),
            x0: Some(path),
            ..RunConfig::default()
        };
        assert_eq!(cfg.init_strategy().unwrap(), InitStrategy::UserSupplied(x));
        std::fs::write(dir.path().join("bad.txt"), "1 two 3").unwrap();
        assert!(read_vector(&dir.path().join("bad.txt")).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let base = RunConfig::from_override("family=robust").unwrap();
        for bad in ["family=lasso", "shrink=1.5", "jobs=0", "init=spgl", "rng=\"pcg64\"", "trials=0"] {
            let cfg = base.clone().merge(RunConfig::from_override(bad).unwrap());
            assert!(matches!(cfg.batch(), Err(Error::Config(_))), "{bad}");
        }
        assert!(RunConfig::default().batch().is_err());
    }
}
