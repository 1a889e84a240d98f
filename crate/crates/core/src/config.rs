//! TOML experiment configuration.
//!
//! ```toml
//! [market]
//! k = 2
//! r = [0.05, 0.05]
//! sigma = [0.2, 0.4]
//! mu = [0.08, 0.10]
//! hazards = [
//!   [{ family = "none" }, { family = "constant", rate = 1.0 }],
//!   [{ family = "weibull", scale = 1.0, shape = 2.0 }, { family = "none" }],
//! ]
//!
//! [contract]
//! K = 100.0
//! T = 1.0
//!
//! [solver]   # optional, defaults shown by `SolverConfig::default`
//! n_t = 101
//!
//! [mc]       # optional
//! n_paths = 200000
//! seed = 42
//! rebalance_dt = 0.004
//!
//! [output]   # optional
//! dir = "out"
//! formats = ["csv", "jsonl"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::regime_model::{HazardFn, RegimeModel, ValidationReport};
use crate::volterra::{ContractSpec, SolverConfig};

/// One entry of the hazard matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum HazardEntry {
    None,
    Constant { rate: f64 },
    Weibull { scale: f64, shape: f64 },
}

impl From<HazardEntry> for Option<HazardFn> {
    fn from(entry: HazardEntry) -> Self {
        match entry {
            HazardEntry::None => None,
            HazardEntry::Constant { rate } => Some(HazardFn::Constant { rate }),
            HazardEntry::Weibull { scale, shape } => Some(HazardFn::Weibull { scale, shape }),
        }
    }
}

impl From<Option<HazardFn>> for HazardEntry {
    fn from(h: Option<HazardFn>) -> Self {
        match h {
            None => HazardEntry::None,
            Some(HazardFn::Constant { rate }) => HazardEntry::Constant { rate },
            Some(HazardFn::Weibull { scale, shape }) => HazardEntry::Weibull { scale, shape },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketBlock {
    /// Number of regimes; inferred from `r` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub r: Vec<f64>,
    pub sigma: Vec<f64>,
    pub mu: Vec<f64>,
    pub hazards: Vec<Vec<HazardEntry>>,
}

impl MarketBlock {
    pub fn from_model(model: &RegimeModel) -> Self {
        MarketBlock {
            k: Some(model.regime_count()),
            r: model.r.clone(),
            sigma: model.sigma.clone(),
            mu: model.mu.clone(),
            hazards: model
                .hazards
                .iter()
                .map(|row| row.iter().map(|&h| h.into()).collect())
                .collect(),
        }
    }

    pub fn model(&self) -> RegimeModel {
        RegimeModel::new(
            self.r.clone(),
            self.sigma.clone(),
            self.mu.clone(),
            self.hazards
                .iter()
                .map(|row| row.iter().map(|&h| h.into()).collect())
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractBlock {
    #[serde(rename = "K", alias = "strike")]
    pub strike: f64,
    #[serde(rename = "T", alias = "maturity")]
    pub maturity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McBlock {
    pub n_paths: usize,
    pub seed: u64,
    pub rebalance_dt: f64,
}

impl Default for McBlock {
    fn default() -> Self {
        McBlock {
            n_paths: 200_000,
            seed: 42,
            rebalance_dt: 0.004,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    /// Directory for default output files.
    pub dir: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: PathBuf::from("."),
            formats: vec![OutputFormat::Csv],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub market: MarketBlock,
    pub contract: ContractBlock,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub mc: McBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

impl ExperimentConfig {
    pub fn new(model: &RegimeModel, contract: ContractSpec) -> Self {
        ExperimentConfig {
            market: MarketBlock::from_model(model),
            contract: ContractBlock {
                strike: contract.strike,
                maturity: contract.maturity,
            },
            solver: SolverConfig::default(),
            mc: McBlock::default(),
            output: OutputBlock::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model(&self) -> RegimeModel {
        self.market.model()
    }

    pub fn contract(&self) -> ContractSpec {
        ContractSpec {
            strike: self.contract.strike,
            maturity: self.contract.maturity,
        }
    }

    /// Every problem with the configuration, keyed by its TOML path.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let k = self.market.r.len();
        if let Some(declared) = self.market.k {
            if declared != k {
                report.push("market.k", format!("declares {declared} regimes but market.r has {k}"));
            }
        }
        for (key, len) in [
            ("market.sigma", self.market.sigma.len()),
            ("market.mu", self.market.mu.len()),
            ("market.hazards", self.market.hazards.len()),
        ] {
            if len != k {
                report.push(key, format!("has {len} entries, expected {k}"));
            }
        }
        report.extend(self.model().validate());
        if let Err(e) = self.contract().validate() {
            report.push("contract", e.to_string());
        }
        if let Err(e) = self.solver.validate() {
            report.push("solver", e.to_string());
        }
        if self.mc.n_paths < crate::mc::MIN_PATHS {
            report.push("mc.n_paths", format!("must be at least {}", crate::mc::MIN_PATHS));
        }
        if !(self.mc.rebalance_dt > 0.0 && self.mc.rebalance_dt <= self.contract.maturity) {
            report.push("mc.rebalance_dt", "must lie in (0, T]");
        }
        report
    }

    /// Content hash of the blocks that determine a solve.
    pub fn solve_key(&self) -> String {
        let payload = serde_json::to_vec(&(&self.market, &self.contract, &self.solver))
            .expect("configuration blocks serialize to JSON");
        Sha256::digest(payload).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[market]
k = 2
r = [0.05, 0.05]
sigma = [0.2, 0.4]
mu = [0.08, 0.1]
hazards = [
  [{ family = "none" }, { family = "constant", rate = 1.0 }],
  [{ family = "weibull", scale = 1.0, shape = 2.0 }, { family = "none" }],
]

[contract]
K = 100.0
T = 1.0

[solver]
n_t = 51

[mc]
seed = 7
"#;

    #[test]
    fn parses_and_validates() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        assert!(cfg.validate().is_empty(), "{:?}", cfg.validate());
        assert_eq!(cfg.solver.n_t, 51);
        assert_eq!(cfg.solver.n_s, 201);
        assert_eq!(cfg.mc.seed, 7);
        assert_eq!(cfg.model().hazards[1][0], Some(HazardFn::weibull(1.0, 2.0)));
        assert_eq!(cfg.contract().strike, 100.0);
    }

    #[test]
    fn round_trip_preserves_model() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again.model(), cfg.model());
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = SAMPLE.replace("n_t = 51", "n_t = 51\nspeed = 3");
        let err = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("speed"), "{err}");
        let bad = SAMPLE.replace("rate = 1.0", "rate = 1.0, extra = 2");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn negative_sigma_names_the_key() {
        let bad = SAMPLE.replace("sigma = [0.2, 0.4]", "sigma = [0.2, -0.2]");
        let report = ExperimentConfig::parse(&bad).unwrap().validate();
        assert!(report.violations.iter().any(|v| v.key == "market.sigma[2]"), "{report:?}");
    }

    #[test]
    fn missing_hazard_row_is_reported() {
        let bad = SAMPLE.replace(
            "  [{ family = \"weibull\", scale = 1.0, shape = 2.0 }, { family = \"none\" }],\n",
            "",
        );
        let report = ExperimentConfig::parse(&bad).unwrap().validate();
        assert!(report.violations.iter().any(|v| v.key.starts_with("market.hazards")));
    }

    #[test]
    fn solve_key_tracks_solver_inputs_only() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        let mut other = cfg.clone();
        other.mc.seed = 99;
        assert_eq!(cfg.solve_key(), other.solve_key());
        other.solver.tol = 1e-6;
        assert_ne!(cfg.solve_key(), other.solve_key());
    }
}
