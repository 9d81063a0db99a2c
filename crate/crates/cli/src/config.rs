//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trialoffer::dataset::{self, Setting};
use trialoffer::model::{MarketSpec, Ranking};
use trialoffer::sim::{Initialization, RankingPolicy, TimeConvention};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Convergence,
    ShareBars,
    Predictability,
    UnpredictabilityTable,
    Efficiency,
    EquilibriumReport,
    RankingSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSource {
    /// Name from the builtin catalogue.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    /// Directory holding `products.csv` and `visibility.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<Setting>,
}

impl MarketSource {
    pub fn builtin(name: &str) -> Self {
        Self {
            builtin: Some(name.to_string()),
            dataset: None,
            setting: None,
        }
    }

    /// Parses a CLI `--market` value: a builtin name or a dataset directory.
    pub fn from_arg(arg: &str, setting: Option<Setting>) -> Self {
        if dataset::builtin_market(arg).is_some() {
            Self::builtin(arg)
        } else {
            Self {
                builtin: None,
                dataset: Some(PathBuf::from(arg)),
                setting,
            }
        }
    }

    pub fn resolve(&self) -> Result<MarketSpec, String> {
        match (&self.builtin, &self.dataset) {
            (Some(name), None) => dataset::builtin_market(name)
                .ok_or_else(|| format!("market.builtin: unknown market '{name}'")),
            (None, Some(dir)) => {
                dataset::load_dataset(dir, self.setting.unwrap_or(Setting::Independent))
                    .map(|b| b.market)
                    .map_err(|e| format!("market.dataset: {e}"))
            }
            (Some(_), Some(_)) => Err("market: give either builtin or dataset, not both".into()),
            (None, None) => Err("market: missing builtin or dataset".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingChoice {
    Quality,
    Popularity,
    Given,
}

fn default_worlds() -> u64 {
    1
}
fn default_iterations() -> u64 {
    100_000
}
fn default_time() -> TimeConvention {
    TimeConvention::ArrivalPeriod
}
fn default_init() -> Initialization {
    Initialization::AppealSeeded
}
fn default_rankings() -> Vec<RankingChoice> {
    vec![RankingChoice::Quality]
}
fn default_one() -> u64 {
    1
}
fn default_stride() -> u64 {
    1000
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub market: MarketSource,
    /// Signal exponents to sweep.
    pub r: Vec<f64>,
    #[serde(default = "default_rankings")]
    pub rankings: Vec<RankingChoice>,
    /// 1-based positions, used when `rankings` contains `given`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub given_ranking: Option<Vec<usize>>,
    #[serde(default = "default_one")]
    pub rerank_every: u64,
    #[serde(default = "default_worlds")]
    pub worlds: u64,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default = "default_time")]
    pub time: TimeConvention,
    #[serde(default = "default_init")]
    pub init: Initialization,
    #[serde(default = "default_stride")]
    pub sample_stride: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker threads for ensembles; 0 lets the runtime decide. Results do
    /// not depend on it.
    #[serde(default)]
    pub threads: usize,
}

/// Fields that determine results; output location and thread count excluded.
#[derive(Serialize)]
struct HashedView<'a> {
    kind: ExperimentKind,
    market: &'a MarketSource,
    r: &'a [f64],
    rankings: &'a [RankingChoice],
    given_ranking: &'a Option<Vec<usize>>,
    rerank_every: u64,
    worlds: u64,
    iterations: u64,
    time: TimeConvention,
    init: Initialization,
    sample_stride: u64,
    seed: u64,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, market: MarketSource, r: Vec<f64>) -> Self {
        Self {
            kind,
            market,
            r,
            rankings: default_rankings(),
            given_ranking: None,
            rerank_every: 1,
            worlds: 1,
            iterations: default_iterations(),
            time: default_time(),
            init: default_init(),
            sample_stride: default_stride(),
            seed: 0,
            output_dir: default_output(),
            threads: 0,
        }
    }

    pub fn parse(text: &str) -> Result<Self, Vec<String>> {
        let cfg: Self = toml::from_str(text).map_err(|e| vec![e.to_string()])?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Collects every problem rather than stopping at the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if self.r.is_empty() {
            errors.push("r: at least one signal exponent is required".to_string());
        }
        for &r in &self.r {
            if !(r > 0.0 && r.is_finite()) {
                errors.push(format!("r: signal exponent must be positive (got {r})"));
            }
        }
        if self.worlds == 0 {
            errors.push("worlds: must be at least 1".into());
        }
        if self.iterations == 0 {
            errors.push("iterations: must be at least 1".into());
        }
        if self.sample_stride == 0 {
            errors.push("sample_stride: must be at least 1".into());
        }
        if self.rerank_every == 0 {
            errors.push("rerank_every: must be at least 1".into());
        }
        if self.rankings.is_empty() {
            errors.push("rankings: at least one ranking policy is required".into());
        }
        let market = match self.market.resolve() {
            Ok(m) => Some(m),
            Err(e) => {
                errors.push(e);
                None
            }
        };
        if self.rankings.contains(&RankingChoice::Given) {
            match (&self.given_ranking, &market) {
                (None, _) => {
                    errors.push("given_ranking: required when rankings contains 'given'".into())
                }
                (Some(pos), Some(m)) => {
                    if let Err(e) = given_to_ranking(pos, m.n()) {
                        errors.push(format!("given_ranking: {e}"));
                    }
                }
                _ => {}
            }
        }
        match self.kind {
            ExperimentKind::UnpredictabilityTable if self.worlds < 2 => {
                errors.push("worlds: unpredictability needs at least 2 worlds".into());
            }
            ExperimentKind::Efficiency if self.time != TimeConvention::ArrivalPeriod => {
                errors.push("time: efficiency curves need arrival_period".into());
            }
            ExperimentKind::RankingSearch => {
                for &r in &self.r {
                    if r >= 1.0 {
                        errors.push(format!("r: ranking search needs r < 1 (got {r})"));
                    }
                }
            }
            _ => {}
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    pub fn market_spec(&self) -> anyhow::Result<MarketSpec> {
        self.market.resolve().map_err(anyhow::Error::msg)
    }

    pub fn policy(&self, choice: RankingChoice, n: usize) -> anyhow::Result<RankingPolicy> {
        Ok(match choice {
            RankingChoice::Quality => RankingPolicy::StaticQuality,
            RankingChoice::Popularity => RankingPolicy::Popularity {
                rerank_every: self.rerank_every,
            },
            RankingChoice::Given => {
                let pos = self
                    .given_ranking
                    .as_ref()
                    .ok_or_else(|| anyhow::anyhow!("given_ranking missing"))?;
                RankingPolicy::StaticGiven {
                    ranking: given_to_ranking(pos, n).map_err(anyhow::Error::msg)?,
                }
            }
        })
    }

    /// Static ranking used for closed-form reports.
    pub fn static_ranking(&self, spec: &MarketSpec) -> Ranking {
        match (&self.given_ranking, self.rankings.first()) {
            (Some(pos), Some(RankingChoice::Given)) => {
                given_to_ranking(pos, spec.n()).unwrap_or_else(|_| Ranking::by_quality(spec))
            }
            _ => Ranking::by_quality(spec),
        }
    }

    /// SHA-256 over the result-determining fields.
    pub fn hash(&self) -> String {
        let view = HashedView {
            kind: self.kind,
            market: &self.market,
            r: &self.r,
            rankings: &self.rankings,
            given_ranking: &self.given_ranking,
            rerank_every: self.rerank_every,
            worlds: self.worlds,
            iterations: self.iterations,
            time: self.time,
            init: self.init,
            sample_stride: self.sample_stride,
            seed: self.seed,
        };
        let bytes = serde_json::to_vec(&view).expect("config view serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn given_to_ranking(one_based: &[usize], n: usize) -> Result<Ranking, String> {
    if one_based.len() != n {
        return Err(format!("expected {n} positions, got {}", one_based.len()));
    }
    if one_based.contains(&0) {
        return Err("positions are 1-based".into());
    }
    Ranking::new(one_based.iter().map(|p| p - 1).collect()).map_err(|e| e.to_string())
}

pub fn validate_config(path: &Path) -> Result<ExperimentConfig, Vec<String>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| vec![format!("{}: {e}", path.display())])?;
    ExperimentConfig::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"
kind = "convergence"
r = [0.1, 0.25]
worlds = 3
iterations = 1000
seed = 7

[market]
builtin = "five_song"
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::parse(VALID).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Convergence);
        assert_eq!(cfg.worlds, 3);
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn collects_all_errors() {
        let text = r#"
kind = "unpredictability_table"
r = [0.0, 0.5]
worlds = 0
sample_stride = 0

[market]
builtin = "no_such_market"
"#;
        let errs = ExperimentConfig::parse(text).unwrap_err();
        assert!(errs
            .iter()
            .any(|e| e.contains("signal exponent must be positive")));
        assert!(errs.iter().any(|e| e.starts_with("worlds")));
        assert!(errs.iter().any(|e| e.starts_with("sample_stride")));
        assert!(errs.iter().any(|e| e.contains("unknown market")));
        assert!(errs.len() >= 5, "{errs:?}");
    }

    #[test]
    fn syntax_errors_are_reported() {
        assert!(ExperimentConfig::parse("kind = ").is_err());
        assert!(ExperimentConfig::parse(
            "kind = \"convergence\"\nr=[0.5]\nbogus=1\n[market]\nbuiltin=\"five_song\""
        )
        .is_err());
    }

    #[test]
    fn given_ranking_checked() {
        let mut cfg = ExperimentConfig::new(
            ExperimentKind::Convergence,
            MarketSource::builtin("example_7_2"),
            vec![0.3],
        );
        cfg.rankings = vec![RankingChoice::Given];
        assert!(cfg.validate().is_err());
        cfg.given_ranking = Some(vec![1, 1, 2]);
        assert!(cfg.validate().is_err());
        cfg.given_ranking = Some(vec![1, 3, 2]);
        assert!(cfg.validate().is_ok());
        let spec = cfg.market_spec().unwrap();
        assert_eq!(cfg.static_ranking(&spec).positions(), &[0, 2, 1]);
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = ExperimentConfig::parse(VALID).unwrap();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        b.threads = 4;
        assert_eq!(a.hash(), b.hash());
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
    }
}
