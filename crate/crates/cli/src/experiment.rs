//! Experiment runners. Each returns named output files; nothing touches disk
//! until [`write_outputs`].

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use itertools::Itertools;
use serde_json::{json, Value};
use trialoffer::equilibrium::{self, SearchMethod, MAX_EXHAUSTIVE_ITEMS};
use trialoffer::metrics::{self, Alternative};
use trialoffer::model::{MarketSpec, Ranking, SignalSpec};
use trialoffer::sim::{self, RunConfig, RunRecord};

use crate::config::{ExperimentConfig, ExperimentKind, RankingChoice};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

struct Header {
    kind: ExperimentKind,
    hash: String,
    seed: u64,
}

impl Header {
    fn kind_name(&self) -> String {
        serde_json::to_value(self.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }

    fn csv(&self, body: &str) -> String {
        format!(
            "# experiment={} config_hash={} seed={}\n{body}",
            self.kind_name(),
            self.hash,
            self.seed
        )
    }

    fn json(&self, mut body: Value) -> String {
        if let Value::Object(map) = &mut body {
            map.insert(
                "header".into(),
                json!({"experiment": self.kind_name(), "config_hash": self.hash, "seed": self.seed}),
            );
        }
        let mut text = serde_json::to_string_pretty(&body).expect("json serializes");
        text.push('\n');
        text
    }
}

fn ranking_label(choice: RankingChoice) -> &'static str {
    match choice {
        RankingChoice::Quality => "quality",
        RankingChoice::Popularity => "popularity",
        RankingChoice::Given => "given",
    }
}

fn one_based(items: &[usize]) -> Vec<usize> {
    items.iter().map(|i| i + 1).collect()
}

/// Runs the experiment, honouring `threads` without letting it change results.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<OutputFile>> {
    cfg.validate()
        .map_err(|errs| anyhow::anyhow!(errs.join("\n")))?;
    if cfg.threads == 0 {
        return dispatch(cfg);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .context("building thread pool")?;
    pool.install(|| dispatch(cfg))
}

fn dispatch(cfg: &ExperimentConfig) -> Result<Vec<OutputFile>> {
    let spec = cfg.market_spec()?;
    let header = Header {
        kind: cfg.kind,
        hash: cfg.hash(),
        seed: cfg.seed,
    };
    match cfg.kind {
        ExperimentKind::Convergence => convergence(cfg, &spec, &header),
        ExperimentKind::ShareBars => share_bars(cfg, &spec, &header),
        ExperimentKind::Predictability => predictability(cfg, &spec, &header),
        ExperimentKind::UnpredictabilityTable => unpredictability_table(cfg, &spec, &header),
        ExperimentKind::Efficiency => efficiency(cfg, &spec, &header),
        ExperimentKind::EquilibriumReport => equilibrium_report(cfg, &spec, &header),
        ExperimentKind::RankingSearch => ranking_search(cfg, &spec, &header),
    }
}

pub fn write_outputs(dir: &Path, files: &[OutputFile]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    files
        .iter()
        .map(|f| {
            let path = dir.join(&f.name);
            fs::write(&path, &f.contents).with_context(|| format!("writing {}", path.display()))?;
            Ok(path)
        })
        .collect()
}

fn ensemble(
    cfg: &ExperimentConfig,
    spec: &MarketSpec,
    r: f64,
    choice: RankingChoice,
) -> Result<Vec<RunRecord>> {
    let run = RunConfig::new(SignalSpec::power(r)?, cfg.iterations, cfg.seed)
        .with_time(cfg.time)
        .with_init(cfg.init)
        .with_policy(cfg.policy(choice, spec.n())?)
        .with_stride(cfg.sample_stride);
    Ok(sim::run_ensemble(spec, &run, cfg.worlds)?)
}

fn mean_shares(records: &[RunRecord]) -> Vec<f64> {
    let n = records[0].final_shares.len();
    let w = records.len() as f64;
    (0..n)
        .map(|i| records.iter().map(|r| r.final_shares[i]).sum::<f64>() / w)
        .collect()
}

/// `φ*` under the configured static ranking, when it has a closed form.
fn closed_form(cfg: &ExperimentConfig, spec: &MarketSpec, r: f64) -> Option<Vec<f64>> {
    if r == 1.0 {
        return None;
    }
    equilibrium::inner_equilibrium(spec, &cfg.static_ranking(spec), r)
        .ok()
        .map(|eq| eq.shares)
}

fn convergence(
    cfg: &ExperimentConfig,
    spec: &MarketSpec,
    header: &Header,
) -> Result<Vec<OutputFile>> {
    let choice = cfg.rankings[0];
    let mut files = Vec::new();
    let mut entries = Vec::new();
    for &r in &cfg.r {
        let records = ensemble(cfg, spec, r, choice)?;
        files.push(OutputFile {
            name: format!("trajectory_r{r}.csv"),
            contents: header.csv(&records[0].to_csv()),
        });
        let mean = mean_shares(&records);
        let target = closed_form(cfg, spec, r);
        let deviation: Option<Vec<f64>> = target.as_ref().map(|t| {
            records
                .iter()
                .map(|rec| {
                    rec.final_shares
                        .iter()
                        .zip(t)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .collect()
        });
        entries.push(json!({
            "r": r,
            "ranking": ranking_label(choice),
            "equilibrium": target,
            "mean_final_shares": mean,
            "max_deviation_per_world": deviation,
        }));
    }
    files.push(OutputFile {
        name: "equilibria.json".into(),
        contents: header.json(json!({"runs": entries})),
    });
    Ok(files)
}

fn share_bars(
    cfg: &ExperimentConfig,
    spec: &MarketSpec,
    header: &Header,
) -> Result<Vec<OutputFile>> {
    let mut body = String::from("r,item,quality,equilibrium_share,simulated_share\n");
    for &r in &cfg.r {
        let records = ensemble(cfg, spec, r, cfg.rankings[0])?;
        let mean = mean_shares(&records);
        let target = closed_form(cfg, spec, r);
        for (i, sim_share) in mean.iter().enumerate() {
            let eq = target
                .as_ref()
                .map(|t| t[i].to_string())
                .unwrap_or_default();
            body.push_str(&format!(
                "{r},{},{},{eq},{sim_share}\n",
                i + 1,
                spec.quality()[i]
            ));
        }
    }
    Ok(vec![OutputFile {
        name: "share_bars.csv".into(),
        contents: header.csv(&body),
    }])
}

fn predictability(
    cfg: &ExperimentConfig,
    spec: &MarketSpec,
    header: &Header,
) -> Result<Vec<OutputFile>> {
    let mut body = String::from("ranking,r,world,item,quality,downloads,final_share\n");
    for &choice in &cfg.rankings {
        for &r in &cfg.r {
            for rec in ensemble(cfg, spec, r, choice)? {
                for i in 0..spec.n() {
                    body.push_str(&format!(
                        "{},{r},{},{},{},{},{}\n",
                        ranking_label(choice),
                        rec.world,
                        i + 1,
                        spec.quality()[i],
                        rec.downloads[i],
                        rec.final_shares[i]
                    ));
                }
            }
        }
    }
    Ok(vec![OutputFile {
        name: "predictability.csv".into(),
        contents: header.csv(&body),
    }])
}

fn unpredictability_table(
    cfg: &ExperimentConfig,
    spec: &MarketSpec,
    header: &Header,
) -> Result<Vec<OutputFile>> {
    let mut table = String::from("ranking,r,unpredictability,per_world_sd\n");
    let mut tests = String::from("ranking,r_a,r_b,u_statistic,p_value,exact\n");
    for &choice in &cfg.rankings {
        let mut per_world = Vec::new();
        for &r in &cfg.r {
            let records = ensemble(cfg, spec, r, choice)?;
            let finals: Vec<Vec<f64>> = records.into_iter().map(|r| r.final_shares).collect();
            let stats = metrics::unpredictability(&finals)?;
            let m = stats.per_world.len() as f64;
            let sd = (stats
                .per_world
                .iter()
                .map(|u| (u - stats.overall).powi(2))
                .sum::<f64>()
                / (m - 1.0))
                .sqrt();
            table.push_str(&format!(
                "{},{r},{},{sd}\n",
                ranking_label(choice),
                stats.overall
            ));
            per_world.push(stats.per_world);
        }
        // one-sided: is unpredictability at the smaller exponent lower?
        for (a, b) in (0..cfg.r.len()).tuple_combinations() {
            let mw = metrics::mann_whitney_u(&per_world[a], &per_world[b], Alternative::Less)?;
            tests.push_str(&format!(
                "{},{},{},{},{},{}\n",
                ranking_label(choice),
                cfg.r[a],
                cfg.r[b],
                mw.u,
                mw.p_value,
                mw.exact
            ));
        }
    }
    Ok(vec![
        OutputFile {
            name: "unpredictability.csv".into(),
            contents: header.csv(&table),
        },
        OutputFile {
            name: "mann_whitney.csv".into(),
            contents: header.csv(&tests),
        },
    ])
}

fn efficiency(
    cfg: &ExperimentConfig,
    spec: &MarketSpec,
    header: &Header,
) -> Result<Vec<OutputFile>> {
    let mut files = Vec::new();
    for &choice in &cfg.rankings {
        for &r in &cfg.r {
            let curve = metrics::efficiency_curve(&ensemble(cfg, spec, r, choice)?)?;
            files.push(OutputFile {
                name: format!("efficiency_{}_r{r}.csv", ranking_label(choice)),
                contents: header.csv(&metrics::efficiency_csv(&curve)),
            });
        }
    }
    Ok(files)
}

/// Lists every support's equilibrium up to this many items.
const MAX_LISTED_ITEMS: usize = 12;

fn equilibrium_json(eq: &equilibrium::Equilibrium) -> Value {
    json!({
        "support": one_based(&eq.support),
        "shares": eq.shares,
        "trace": eq.trace,
        "classification": eq.classification,
    })
}

fn equilibrium_report(
    cfg: &ExperimentConfig,
    spec: &MarketSpec,
    header: &Header,
) -> Result<Vec<OutputFile>> {
    let rank = cfg.static_ranking(spec);
    let mut entries = Vec::new();
    for &r in &cfg.r {
        if r == 1.0 {
            entries
                .push(json!({"r": r, "note": "no interior equilibrium in closed form at r = 1"}));
            continue;
        }
        let inner = equilibrium::inner_equilibrium(spec, &rank, r)?;
        let with_signal =
            equilibrium::expected_purchases_at(spec, &rank, &SignalSpec::power(r)?, &inner.shares)?;
        let mut entry = json!({
            "r": r,
            "inner": equilibrium_json(&inner),
            "efficiency_with_signal": with_signal,
        });
        if spec.n() <= MAX_LISTED_ITEMS {
            let all = equilibrium::all_equilibria(spec, &rank, r)?;
            entry["all"] = Value::Array(all.iter().map(equilibrium_json).collect());
        }
        entries.push(entry);
    }
    let body = json!({
        "ranking": one_based(rank.positions()),
        "efficiency_without_signal": equilibrium::no_signal_efficiency(spec, &rank)?,
        "exponents": entries,
    });
    Ok(vec![OutputFile {
        name: "equilibrium_report.json".into(),
        contents: header.json(body),
    }])
}

pub fn search_method_for(n: usize) -> SearchMethod {
    if n <= MAX_EXHAUSTIVE_ITEMS {
        SearchMethod::Exhaustive
    } else {
        SearchMethod::LocalSearchSwap
    }
}

pub fn search_json(spec: &MarketSpec, r: f64, method: SearchMethod) -> Result<Value> {
    let (best, value) = equilibrium::optimal_static_ranking(spec, r, method)?;
    let by_quality = equilibrium::equilibrium_efficiency(spec, &Ranking::by_quality(spec), r)?;
    Ok(json!({
        "r": r,
        "method": method,
        "best_ranking": one_based(best.positions()),
        "best_efficiency": value,
        "quality_ranking_efficiency": by_quality,
    }))
}

fn ranking_search(
    cfg: &ExperimentConfig,
    spec: &MarketSpec,
    header: &Header,
) -> Result<Vec<OutputFile>> {
    let method = search_method_for(spec.n());
    let entries = cfg
        .r
        .iter()
        .map(|&r| search_json(spec, r, method))
        .collect::<Result<Vec<_>>>()?;
    Ok(vec![OutputFile {
        name: "ranking_search.json".into(),
        contents: header.json(json!({"searches": entries})),
    }])
}
