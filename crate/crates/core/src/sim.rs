//! Discrete stochastic simulation of a trial-offer market.
//!
//! A world is driven by a ChaCha8 stream: the experiment seed is the key and
//! the world index selects the stream, so ensembles are reproducible bit for
//! bit no matter how worlds are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, MarketSpec, MarketState, Ranking, SignalSpec};
use crate::signals;

/// What one simulated period stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeConvention {
    /// A period ends with a purchase; draws come straight from `p(φ)`.
    PurchasePeriod,
    /// A period is one consumer arrival, who may leave without buying.
    ArrivalPeriod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    /// `d⁰ = a`: appeals act as the initial balls of the urn.
    AppealSeeded,
    /// `d⁰ = 0`; choices use `μ_i = (a_i + d_i) / (Σa + Σd)`.
    MuProcess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankingPolicy {
    StaticQuality,
    StaticGiven {
        ranking: Ranking,
    },
    /// Re-sort by purchases every `rerank_every` periods.
    Popularity {
        rerank_every: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub iterations: u64,
    pub time: TimeConvention,
    pub init: Initialization,
    pub policy: RankingPolicy,
    pub signal: SignalSpec,
    pub sample_stride: u64,
    pub seed: u64,
}

impl RunConfig {
    /// Appeal-seeded, quality-ranked run over consumer arrivals.
    pub fn new(signal: SignalSpec, iterations: u64, seed: u64) -> Self {
        Self {
            iterations,
            time: TimeConvention::ArrivalPeriod,
            init: Initialization::AppealSeeded,
            policy: RankingPolicy::StaticQuality,
            signal,
            sample_stride: 1000,
            seed,
        }
    }

    pub fn with_time(mut self, time: TimeConvention) -> Self {
        self.time = time;
        self
    }

    pub fn with_init(mut self, init: Initialization) -> Self {
        self.init = init;
        self
    }

    pub fn with_policy(mut self, policy: RankingPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_stride(mut self, stride: u64) -> Self {
        self.sample_stride = stride;
        self
    }

    pub fn validate(&self, spec: &MarketSpec) -> Result<()> {
        self.signal.validate()?;
        if self.sample_stride == 0 {
            return Err(Error::Domain("sample_stride must be at least 1".into()));
        }
        match &self.policy {
            RankingPolicy::Popularity { rerank_every: 0 } => {
                Err(Error::Domain("rerank_every must be at least 1".into()))
            }
            RankingPolicy::StaticGiven { ranking } if ranking.len() != spec.n() => {
                Err(Error::InvalidRanking(format!(
                    "ranking covers {} items, market has {}",
                    ranking.len(),
                    spec.n()
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Snapshot of a world at the end of a period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub period: u64,
    pub shares: Vec<f64>,
    /// Cumulative purchases made by simulated consumers (seed counts excluded).
    pub downloads: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub world: u64,
    pub seed: u64,
    pub config: RunConfig,
    pub samples: Vec<Sample>,
    /// Final `d`: includes the appeal seed under `AppealSeeded`.
    pub final_counts: Vec<f64>,
    pub final_shares: Vec<f64>,
    /// Purchases per item made during the run.
    pub downloads: Vec<u64>,
    pub arrivals: u64,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    world: u64,
    seed: u64,
    final_shares: &'a [f64],
    downloads: &'a [u64],
    final_counts: &'a [f64],
    arrivals: u64,
    config: &'a RunConfig,
}

impl RunRecord {
    pub fn total_downloads(&self) -> u64 {
        self.downloads.iter().sum()
    }

    /// `(period, cumulative downloads)` at each sample point.
    pub fn downloads_over_time(&self) -> Vec<(u64, u64)> {
        self.samples
            .iter()
            .map(|s| (s.period, s.downloads))
            .collect()
    }

    /// Index of the item with the largest final share (lowest index on ties).
    pub fn winner(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.final_shares.iter().enumerate() {
            if s > self.final_shares[best] {
                best = i;
            }
        }
        best
    }

    /// One row per sample and item: `period,item,share` (items 1-based).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("period,item,share\n");
        for s in &self.samples {
            for (i, x) in s.shares.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", s.period, i + 1, x));
            }
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::to_value(RunSummary {
            world: self.world,
            seed: self.seed,
            final_shares: &self.final_shares,
            downloads: &self.downloads,
            final_counts: &self.final_counts,
            arrivals: self.arrivals,
            config: &self.config,
        })
        .expect("summary serializes")
    }
}

/// Random stream for world `world` of an experiment keyed by `seed`.
pub fn world_rng(seed: u64, world: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(world);
    rng
}

/// Inverse-CDF draw from unnormalized nonnegative weights with sum `total`.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    // rounding left u at or beyond the accumulated total
    last
}

/// One purchase period: draw the purchased item from `p` and record it.
pub fn step_purchase<R: Rng + ?Sized>(state: &mut MarketState, p: &[f64], rng: &mut R) -> usize {
    let total: f64 = p.iter().sum();
    let item = sample_index(p, total, rng);
    state.record_purchase(item);
    item
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arrival {
    pub item: usize,
    pub purchased: bool,
}

/// One consumer arrival: try an item, then buy it with probability `q_i`.
pub fn step_arrival<R: Rng + ?Sized>(
    spec: &MarketSpec,
    rank: &Ranking,
    sig: &SignalSpec,
    state: &mut MarketState,
    rng: &mut R,
) -> Result<Arrival> {
    let p = model::try_probabilities(spec, rank, sig, state.shares())?;
    let item = sample_index(&p, 1.0, rng);
    state.record_arrival();
    let purchased = rng.random::<f64>() < spec.quality()[item];
    if purchased {
        state.record_purchase(item);
    }
    Ok(Arrival { item, purchased })
}

struct World<'a> {
    spec: &'a MarketSpec,
    cfg: &'a RunConfig,
    /// Counts the signal sees: appeal offset plus purchases.
    effective: Vec<f64>,
    purchases: Vec<u64>,
    /// Signal term per item; cached for power signals.
    kernel: Vec<f64>,
    /// `v_{σ(i)}` under the current ranking.
    visibility: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a> World<'a> {
    fn new(spec: &'a MarketSpec, cfg: &'a RunConfig) -> Self {
        let n = spec.n();
        let effective = spec.appeal().to_vec();
        let mut world = Self {
            spec,
            cfg,
            effective,
            purchases: vec![0; n],
            kernel: vec![0.0; n],
            visibility: vec![0.0; n],
            weights: vec![0.0; n],
        };
        if let SignalSpec::Power { r } = cfg.signal {
            for i in 0..n {
                world.kernel[i] = signals::power(world.effective[i], r);
            }
        }
        let initial = match &cfg.policy {
            RankingPolicy::StaticQuality => Ranking::by_quality(spec),
            RankingPolicy::StaticGiven { ranking } => ranking.clone(),
            RankingPolicy::Popularity { .. } => world.popularity_ranking(),
        };
        world.apply_ranking(&initial);
        world
    }

    fn apply_ranking(&mut self, rank: &Ranking) {
        for i in 0..self.spec.n() {
            self.visibility[i] = self.spec.visibility()[rank.position_of(i)];
        }
    }

    /// Popularity is the purchase vector `d`, which includes the seed under
    /// appeal seeding.
    fn popularity_ranking(&self) -> Ranking {
        let d = self.counts();
        Ranking::by_popularity(&d, self.spec.visibility())
    }

    fn counts(&self) -> Vec<f64> {
        match self.cfg.init {
            Initialization::AppealSeeded => self.effective.clone(),
            Initialization::MuProcess => self.purchases.iter().map(|&d| d as f64).collect(),
        }
    }

    fn shares(&self) -> Vec<f64> {
        model::normalize(&self.effective)
    }

    fn refresh_affine_kernel(&mut self) {
        if let SignalSpec::Affine { alpha, beta } = self.cfg.signal {
            let total: f64 = self.effective.iter().sum();
            for i in 0..self.spec.n() {
                self.kernel[i] = beta * (self.effective[i] / total) + alpha * self.spec.appeal()[i];
            }
        }
    }

    fn purchase(&mut self, item: usize) {
        self.purchases[item] += 1;
        self.effective[item] += 1.0;
        if let SignalSpec::Power { r } = self.cfg.signal {
            self.kernel[item] = signals::power(self.effective[item], r);
        }
    }

    /// Runs one period and returns whether a purchase happened.
    fn period<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        self.refresh_affine_kernel();
        let with_quality = self.cfg.time == TimeConvention::PurchasePeriod;
        let mut total = 0.0;
        for i in 0..self.spec.n() {
            let mut w = self.visibility[i] * self.kernel[i];
            if with_quality {
                w *= self.spec.quality()[i];
            }
            self.weights[i] = w;
            total += w;
        }
        let item = sample_index(&self.weights, total, rng);
        let bought = match self.cfg.time {
            TimeConvention::PurchasePeriod => true,
            TimeConvention::ArrivalPeriod => rng.random::<f64>() < self.spec.quality()[item],
        };
        if bought {
            self.purchase(item);
        }
        bought
    }

    fn sample(&self, period: u64) -> Sample {
        Sample {
            period,
            shares: self.shares(),
            downloads: self.purchases.iter().sum(),
        }
    }
}

/// Runs world `world` of the ensemble keyed by `config.seed`.
pub fn run_world_indexed(spec: &MarketSpec, config: &RunConfig, world: u64) -> Result<RunRecord> {
    config.validate(spec)?;
    let mut rng = world_rng(config.seed, world);
    let mut w = World::new(spec, config);
    let rerank_every = match config.policy {
        RankingPolicy::Popularity { rerank_every } => Some(rerank_every),
        _ => None,
    };
    let mut samples = vec![w.sample(0)];
    for t in 1..=config.iterations {
        w.period(&mut rng);
        if let Some(k) = rerank_every {
            if t % k == 0 {
                let rank = w.popularity_ranking();
                w.apply_ranking(&rank);
            }
        }
        if t % config.sample_stride == 0 || t == config.iterations {
            samples.push(w.sample(t));
        }
    }
    let arrivals = match config.time {
        TimeConvention::ArrivalPeriod => config.iterations,
        TimeConvention::PurchasePeriod => 0,
    };
    Ok(RunRecord {
        world,
        seed: config.seed,
        config: config.clone(),
        samples,
        final_counts: w.counts(),
        final_shares: w.shares(),
        downloads: w.purchases.clone(),
        arrivals,
    })
}

pub fn run_world(spec: &MarketSpec, config: &RunConfig) -> Result<RunRecord> {
    run_world_indexed(spec, config, 0)
}

/// Runs `worlds` independent worlds in parallel; output order is world order.
pub fn run_ensemble(spec: &MarketSpec, config: &RunConfig, worlds: u64) -> Result<Vec<RunRecord>> {
    if worlds == 0 {
        return Err(Error::Size("ensemble needs at least one world".into()));
    }
    config.validate(spec)?;
    (0..worlds)
        .into_par_iter()
        .map(|w| run_world_indexed(spec, config, w))
        .collect()
}
