//! Market description and the two-stage (try, then buy) choice probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals;

/// Tolerance used when checking that an input vector lies on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Items with their quality and appeal, plus the visibility of each list position.
///
/// `quality[i]` is the probability that item `i` is bought once tried,
/// `appeal[i]` its inherent attractiveness, and `visibility[j]` the
/// propensity of trying whatever sits in position `j`. All indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMarket", into = "RawMarket")]
pub struct MarketSpec {
    quality: Vec<f64>,
    appeal: Vec<f64>,
    visibility: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMarket {
    quality: Vec<f64>,
    appeal: Vec<f64>,
    visibility: Vec<f64>,
}

impl TryFrom<RawMarket> for MarketSpec {
    type Error = Error;
    fn try_from(raw: RawMarket) -> Result<Self> {
        MarketSpec::new(raw.quality, raw.appeal, raw.visibility)
    }
}

impl From<MarketSpec> for RawMarket {
    fn from(m: MarketSpec) -> Self {
        RawMarket {
            quality: m.quality,
            appeal: m.appeal,
            visibility: m.visibility,
        }
    }
}

impl MarketSpec {
    pub fn new(quality: Vec<f64>, appeal: Vec<f64>, visibility: Vec<f64>) -> Result<Self> {
        let n = quality.len();
        if n == 0 {
            return Err(Error::InvalidMarket(
                "market needs at least one item".into(),
            ));
        }
        if appeal.len() != n || visibility.len() != n {
            return Err(Error::InvalidMarket(format!(
                "length mismatch: {} qualities, {} appeals, {} visibilities",
                n,
                appeal.len(),
                visibility.len()
            )));
        }
        for (i, &q) in quality.iter().enumerate() {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::InvalidMarket(format!(
                    "quality of item {} must lie in (0, 1], got {q}",
                    i + 1
                )));
            }
        }
        for (i, &a) in appeal.iter().enumerate() {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidMarket(format!(
                    "appeal of item {} must be positive, got {a}",
                    i + 1
                )));
            }
        }
        for (j, &v) in visibility.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidMarket(format!(
                    "visibility of position {} must be positive, got {v}",
                    j + 1
                )));
            }
        }
        Ok(Self {
            quality,
            appeal,
            visibility,
        })
    }

    pub fn n(&self) -> usize {
        self.quality.len()
    }

    pub fn quality(&self) -> &[f64] {
        &self.quality
    }

    pub fn appeal(&self) -> &[f64] {
        &self.appeal
    }

    pub fn visibility(&self) -> &[f64] {
        &self.visibility
    }

    /// Same market with the appeals replaced.
    pub fn with_appeal(&self, appeal: Vec<f64>) -> Result<Self> {
        Self::new(self.quality.clone(), appeal, self.visibility.clone())
    }

    /// Visibility-weighted quality `q̄_i = v_{σ(i)} q_i`.
    pub fn effective_quality(&self, rank: &Ranking) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.visibility[rank.position_of(i)] * self.quality[i])
            .collect()
    }

    fn check_ranking(&self, rank: &Ranking) -> Result<()> {
        if rank.len() != self.n() {
            return Err(Error::InvalidRanking(format!(
                "ranking covers {} items, market has {}",
                rank.len(),
                self.n()
            )));
        }
        Ok(())
    }
}

/// Assignment of items to list positions: `position_of(i)` is where item `i` sits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Ranking {
    positions: Vec<usize>,
}

impl TryFrom<Vec<usize>> for Ranking {
    type Error = Error;
    fn try_from(positions: Vec<usize>) -> Result<Self> {
        Ranking::new(positions)
    }
}

impl From<Ranking> for Vec<usize> {
    fn from(r: Ranking) -> Self {
        r.positions
    }
}

impl Ranking {
    pub fn new(positions: Vec<usize>) -> Result<Self> {
        let n = positions.len();
        let mut seen = vec![false; n];
        for &p in &positions {
            if p >= n || seen[p] {
                return Err(Error::InvalidRanking(format!(
                    "{positions:?} is not a permutation of 0..{n}"
                )));
            }
            seen[p] = true;
        }
        Ok(Self { positions })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            positions: (0..n).collect(),
        }
    }

    /// Highest-scoring item to the most visible position, and so on down.
    /// Ties among scores go to the lower item index, ties among visibilities
    /// to the lower position index.
    pub fn by_score(scores: &[f64], visibility: &[f64]) -> Self {
        let n = scores.len();
        let mut items: Vec<usize> = (0..n).collect();
        items.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let slots = positions_by_visibility(visibility);
        let mut positions = vec![0; n];
        for (item, slot) in items.into_iter().zip(slots) {
            positions[item] = slot;
        }
        Self { positions }
    }

    /// Quality ranking: decreasing quality onto decreasing visibility.
    pub fn by_quality(spec: &MarketSpec) -> Self {
        Self::by_score(spec.quality(), spec.visibility())
    }

    /// Popularity ranking: decreasing purchase count onto decreasing visibility.
    pub fn by_popularity(counts: &[f64], visibility: &[f64]) -> Self {
        Self::by_score(counts, visibility)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position_of(&self, item: usize) -> usize {
        self.positions[item]
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Item sitting at each position (the inverse permutation).
    pub fn items_by_position(&self) -> Vec<usize> {
        let mut items = vec![0; self.len()];
        for (item, &p) in self.positions.iter().enumerate() {
            items[p] = item;
        }
        items
    }

    /// Exchanges the positions of two items.
    pub fn swap_items(&mut self, a: usize, b: usize) {
        self.positions.swap(a, b);
    }
}

/// Position indices ordered by visibility, most visible first.
pub fn positions_by_visibility(visibility: &[f64]) -> Vec<usize> {
    let mut slots: Vec<usize> = (0..visibility.len()).collect();
    slots.sort_by(|&a, &b| visibility[b].total_cmp(&visibility[a]).then(a.cmp(&b)));
    slots
}

/// Social signal family.
///
/// `Power { r }` is `f(x) = x^r`. `Affine { alpha, beta }` is
/// `f_i(x) = beta·x + alpha·a_i`, which recovers the calibrated linear model
/// (`beta = Σd`) and the no-influence model (`beta = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    Power { r: f64 },
    Affine { alpha: f64, beta: f64 },
}

impl SignalSpec {
    pub fn power(r: f64) -> Result<Self> {
        let s = SignalSpec::Power { r };
        s.validate()?;
        Ok(s)
    }

    pub fn affine(alpha: f64, beta: f64) -> Result<Self> {
        let s = SignalSpec::Affine { alpha, beta };
        s.validate()?;
        Ok(s)
    }

    /// Trying probability proportional to appeal and visibility only.
    pub fn no_social_influence() -> Self {
        SignalSpec::Affine {
            alpha: 1.0,
            beta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SignalSpec::Power { r } => {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::InvalidSignal(format!(
                        "signal exponent must be positive, got {r}"
                    )));
                }
            }
            SignalSpec::Affine { alpha, beta } => {
                if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
                    return Err(Error::InvalidSignal(format!(
                        "affine coefficients must be nonnegative, got alpha={alpha}, beta={beta}"
                    )));
                }
                if alpha == 0.0 && beta == 0.0 {
                    return Err(Error::InvalidSignal(
                        "affine signal needs alpha or beta positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn exponent(&self) -> Option<f64> {
        match *self {
            SignalSpec::Power { r } => Some(r),
            SignalSpec::Affine { .. } => None,
        }
    }
}

/// Cumulative purchase counts and the market shares derived from them.
///
/// Counts are real-valued so that the appeal-seeded start `d⁰ = a` is
/// representable. Shares are recomputed from the counts on every update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    counts: Vec<f64>,
    shares: Vec<f64>,
    arrivals: u64,
    purchases: u64,
}

impl MarketState {
    pub fn from_counts(counts: Vec<f64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Domain("empty count vector".into()));
        }
        if counts.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
            return Err(Error::Domain(format!(
                "counts must be nonnegative: {counts:?}"
            )));
        }
        if !counts.iter().any(|&d| d > 0.0) {
            return Err(Error::Domain("at least one count must be positive".into()));
        }
        let shares = normalize(&counts);
        Ok(Self {
            counts,
            shares,
            arrivals: 0,
            purchases: 0,
        })
    }

    /// Start with `d⁰ = a`.
    pub fn appeal_seeded(spec: &MarketSpec) -> Self {
        Self::from_counts(spec.appeal().to_vec()).expect("appeals are positive")
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn shares(&self) -> &[f64] {
        &self.shares
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn arrivals(&self) -> u64 {
        self.arrivals
    }

    pub fn purchases(&self) -> u64 {
        self.purchases
    }

    pub fn record_arrival(&mut self) {
        self.arrivals += 1;
    }

    pub fn record_purchase(&mut self, item: usize) {
        self.counts[item] += 1.0;
        self.purchases += 1;
        self.shares = normalize(&self.counts);
    }
}

pub(crate) fn normalize(xs: &[f64]) -> Vec<f64> {
    let total: f64 = xs.iter().sum();
    xs.iter().map(|x| x / total).collect()
}

pub(crate) fn check_simplex(shares: &[f64], n: usize) -> Result<()> {
    if shares.len() != n {
        return Err(Error::Domain(format!(
            "share vector has length {}, expected {n}",
            shares.len()
        )));
    }
    if let Some(x) = shares
        .iter()
        .find(|&&x| !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&x))
    {
        return Err(Error::Domain(format!("share {x} outside [0, 1]")));
    }
    let total: f64 = shares.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Domain(format!("shares sum to {total}, not 1")));
    }
    Ok(())
}

/// Per-item weights `v_{σ(i)} f(φ_i)`, multiplied by `q_i` when `with_quality`.
fn weights(
    spec: &MarketSpec,
    rank: &Ranking,
    sig: &SignalSpec,
    shares: &[f64],
    with_quality: bool,
) -> Result<Vec<f64>> {
    spec.check_ranking(rank)?;
    sig.validate()?;
    let w = (0..spec.n())
        .map(|i| {
            let x = shares[i].clamp(0.0, 1.0);
            let base = spec.visibility()[rank.position_of(i)]
                * signals::signal_value(sig, spec.appeal()[i], x);
            if with_quality {
                base * spec.quality()[i]
            } else {
                base
            }
        })
        .collect();
    Ok(w)
}

fn normalized_or_err(w: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidSignal(format!(
            "choice weights sum to {total}; no item can be tried"
        )));
    }
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Probability that an arriving consumer tries each item:
/// `P_i = v_{σ(i)} f(φ_i) / Σ_j v_{σ(j)} f(φ_j)`.
pub fn try_probabilities(
    spec: &MarketSpec,
    rank: &Ranking,
    sig: &SignalSpec,
    shares: &[f64],
) -> Result<Vec<f64>> {
    check_simplex(shares, spec.n())?;
    normalized_or_err(weights(spec, rank, sig, shares, false)?)
}

/// Probability that the next purchase is each item:
/// `p_i = v_{σ(i)} q_i f(φ_i) / Σ_j v_{σ(j)} q_j f(φ_j)`.
///
/// This is the closed form of summing, over any number of failed trials,
/// the chance that the first successful trial lands on item `i`.
pub fn purchase_probabilities(
    spec: &MarketSpec,
    rank: &Ranking,
    sig: &SignalSpec,
    shares: &[f64],
) -> Result<Vec<f64>> {
    check_simplex(shares, spec.n())?;
    normalized_or_err(weights(spec, rank, sig, shares, true)?)
}

/// Purchase probabilities evaluated directly on raw counts. Only valid for
/// power signals, where `x^r` makes the normalization cancel.
pub fn purchase_probabilities_from_counts(
    spec: &MarketSpec,
    rank: &Ranking,
    sig: &SignalSpec,
    counts: &[f64],
) -> Result<Vec<f64>> {
    let r = match *sig {
        SignalSpec::Power { r } => r,
        SignalSpec::Affine { .. } => {
            return Err(Error::Unsupported(
                "count-based purchase probabilities need a power signal".into(),
            ))
        }
    };
    sig.validate()?;
    spec.check_ranking(rank)?;
    if counts.len() != spec.n() {
        return Err(Error::Domain(format!(
            "count vector has length {}, expected {}",
            counts.len(),
            spec.n()
        )));
    }
    if counts.iter().any(|&d| !(d >= 0.0 && d.is_finite())) || !counts.iter().any(|&d| d > 0.0) {
        return Err(Error::Domain(format!(
            "counts must be nonnegative with a positive entry: {counts:?}"
        )));
    }
    let w = (0..spec.n())
        .map(|i| {
            spec.visibility()[rank.position_of(i)]
                * spec.quality()[i]
                * signals::power(counts[i], r)
        })
        .collect();
    normalized_or_err(w)
}
