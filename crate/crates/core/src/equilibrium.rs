//! Closed-form equilibria of the mean-field dynamics under `f(x) = x^r`,
//! their trace-based stability verdicts, and ranking search.
//!
//! For a support set `Q` the equilibrium shares are
//! `φ_i = q̄_i^{1/(1-r)} / Σ_{j∈Q} q̄_j^{1/(1-r)}` on `Q` and zero elsewhere,
//! with `q̄_i = v_{σ(i)} q_i`. Powers are taken in log space because the
//! exponent `1/(1-r)` blows up as `r → 1`.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, MarketSpec, Ranking, SignalSpec};
use crate::signals::{self, Derivative};

/// Tolerance for `p(φ) = φ` when an input is required to be an equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    /// `r < 1` and full support: the unique limit of the market.
    InnerUnique,
    /// Positive Jacobian trace, so some eigenvalue has positive real part.
    UnstableByTrace,
    MonopolyVertex,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    /// Items with positive share, ascending (0-based).
    pub support: Vec<usize>,
    pub shares: Vec<f64>,
    pub r: f64,
    pub trace: f64,
    pub classification: Stability,
}

fn check_exponent(r: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidSignal(format!(
            "signal exponent must be positive, got {r}"
        )));
    }
    if r == 1.0 {
        return Err(Error::Unsupported(
            "r = 1 has no closed-form equilibrium set (monopoly asymptotics)".into(),
        ));
    }
    Ok(())
}

/// Share vector proportional to `q̄_i^{1/(1-r)}` over `support`.
fn support_shares(qbar: &[f64], r: f64, support: &[usize]) -> Vec<f64> {
    let logs: Vec<f64> = support.iter().map(|&i| qbar[i].ln() / (1.0 - r)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut shares = vec![0.0; qbar.len()];
    for (&i, w) in support.iter().zip(weights) {
        shares[i] = w / total;
    }
    shares
}

/// `tr JF = 2r(|Q|-1) - n` and the verdict it supports.
pub fn trace_and_classify(r: f64, support_size: usize, n: usize) -> (f64, Stability) {
    let trace = 2.0 * r * (support_size as f64 - 1.0) - n as f64;
    let class = if support_size == 1 {
        Stability::MonopolyVertex
    } else if trace > 0.0 {
        Stability::UnstableByTrace
    } else if r < 1.0 && support_size == n {
        Stability::InnerUnique
    } else {
        Stability::Indeterminate
    };
    (trace, class)
}

impl Equilibrium {
    /// Recomputes trace and classification for a market of `n` items.
    pub fn classified(mut self, n: usize) -> Self {
        let (trace, class) = trace_and_classify(self.r, self.support.len(), n);
        self.trace = trace;
        self.classification = class;
        self
    }
}

pub fn equilibrium_for_support(
    spec: &MarketSpec,
    rank: &Ranking,
    r: f64,
    support: &[usize],
) -> Result<Equilibrium> {
    check_exponent(r)?;
    let n = spec.n();
    if rank.len() != n {
        return Err(Error::InvalidRanking(format!(
            "ranking covers {} items, market has {n}",
            rank.len()
        )));
    }
    if support.is_empty() {
        return Err(Error::Domain("support must be nonempty".into()));
    }
    let mut support = support.to_vec();
    support.sort_unstable();
    support.dedup();
    if let Some(&bad) = support.iter().find(|&&i| i >= n) {
        return Err(Error::Domain(format!("support item {bad} outside 0..{n}")));
    }
    let shares = support_shares(&spec.effective_quality(rank), r, &support);
    let (trace, classification) = trace_and_classify(r, support.len(), n);
    Ok(Equilibrium {
        support,
        shares,
        r,
        trace,
        classification,
    })
}

/// The full-support equilibrium `φ*`.
pub fn inner_equilibrium(spec: &MarketSpec, rank: &Ranking, r: f64) -> Result<Equilibrium> {
    let all: Vec<usize> = (0..spec.n()).collect();
    equilibrium_for_support(spec, rank, r, &all)
}

/// Every equilibrium, one per nonempty support set. Exponential in `n`.
pub fn all_equilibria(spec: &MarketSpec, rank: &Ranking, r: f64) -> Result<Vec<Equilibrium>> {
    let n = spec.n();
    if n > 16 {
        return Err(Error::Size(format!(
            "enumerating 2^{n} supports is not supported"
        )));
    }
    (1u32..(1 << n))
        .map(|mask| {
            let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            equilibrium_for_support(spec, rank, r, &support)
        })
        .collect()
}

/// `max_i |p_i(φ) - φ_i|`.
pub fn fixed_point_residual(
    spec: &MarketSpec,
    rank: &Ranking,
    sig: &SignalSpec,
    shares: &[f64],
) -> Result<f64> {
    let p = model::purchase_probabilities(spec, rank, sig, shares)?;
    Ok(p.iter()
        .zip(shares)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Diagonal of the Jacobian of `F(φ) = p(φ) - φ` at an equilibrium.
///
/// For `i ∈ Q` this evaluates
/// `[(1-φ_i) q̄_i f'(φ_i) + φ_i Σ_{k∈Q, k≠i} q̄_k f'(φ_k)] / Σ_k q̄_k f(φ_k) - 1`,
/// where the other coordinates move against `φ_i` one for one. Items
/// outside `Q` get `-1`.
pub fn jacobian_diagonal(
    spec: &MarketSpec,
    rank: &Ranking,
    sig: &SignalSpec,
    shares: &[f64],
    support: &[usize],
) -> Result<Vec<f64>> {
    let r = sig
        .exponent()
        .ok_or_else(|| Error::Unsupported("Jacobian needs a power signal".into()))?;
    let n = spec.n();
    let mut in_support = vec![false; n];
    for &i in support {
        if i >= n {
            return Err(Error::Domain(format!("support item {i} outside 0..{n}")));
        }
        in_support[i] = true;
    }
    for (i, &inside) in in_support.iter().enumerate() {
        if inside && shares.get(i).copied() == Some(0.0) && r < 1.0 {
            return Err(Error::Singular { item: i });
        }
        if !inside && shares.get(i).copied().unwrap_or(0.0) != 0.0 {
            return Err(Error::Domain(format!(
                "item {i} has positive share but is not in the support"
            )));
        }
    }
    let residual = fixed_point_residual(spec, rank, sig, shares)?;
    if residual > EQUILIBRIUM_TOL {
        return Err(Error::NotEquilibrium {
            residual,
            tolerance: EQUILIBRIUM_TOL,
        });
    }
    let qbar = spec.effective_quality(rank);
    let mut value = vec![0.0; n];
    let mut slope = vec![0.0; n];
    for &i in support {
        let e = signals::eval_signal(sig, spec.appeal()[i], shares[i])?;
        value[i] = e.value;
        slope[i] = match e.derivative {
            Derivative::Finite(d) => d,
            Derivative::Singular => return Err(Error::Singular { item: i }),
        };
    }
    let norm: f64 = support.iter().map(|&k| qbar[k] * value[k]).sum();
    let slope_sum: f64 = support.iter().map(|&k| qbar[k] * slope[k]).sum();
    Ok((0..n)
        .map(|i| {
            if !in_support[i] {
                return -1.0;
            }
            let own = qbar[i] * slope[i];
            let others = slope_sum - own;
            ((1.0 - shares[i]) * own + shares[i] * others) / norm - 1.0
        })
        .collect())
}

/// Expected purchases per arrival at the given shares: `Σ_i P_i(φ) q_i`.
pub fn expected_purchases_at(
    spec: &MarketSpec,
    rank: &Ranking,
    sig: &SignalSpec,
    shares: &[f64],
) -> Result<f64> {
    let p = model::try_probabilities(spec, rank, sig, shares)?;
    Ok(p.iter().zip(spec.quality()).map(|(p, q)| p * q).sum())
}

/// Expected purchases per arrival at `φ*` for `r ∈ (0, 1)`.
pub fn equilibrium_efficiency(spec: &MarketSpec, rank: &Ranking, r: f64) -> Result<f64> {
    let eq = inner_equilibrium(spec, rank, r)?;
    expected_purchases_at(spec, rank, &SignalSpec::Power { r }, &eq.shares)
}

/// Expected purchases per arrival when no social signal is shown.
pub fn no_signal_efficiency(spec: &MarketSpec, rank: &Ranking) -> Result<f64> {
    let n = spec.n();
    let uniform = vec![1.0 / n as f64; n];
    expected_purchases_at(spec, rank, &SignalSpec::no_social_influence(), &uniform)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Exhaustive,
    LocalSearchSwap,
}

pub const MAX_EXHAUSTIVE_ITEMS: usize = 10;

/// Allocation-free efficiency at `φ*` for a position vector.
fn fast_efficiency(spec: &MarketSpec, positions: &[usize], r: f64) -> f64 {
    let v = spec.visibility();
    let q = spec.quality();
    let scale = 1.0 / (1.0 - r);
    let max_log = (0..spec.n())
        .map(|i| (v[positions[i]] * q[i]).ln() * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..spec.n() {
        let vi = v[positions[i]];
        // φ_i ∝ exp(ln q̄_i / (1-r)); P_i ∝ v_i φ_i^r
        let log_share = (vi * q[i]).ln() * scale - max_log;
        let tried = vi * (r * log_share).exp();
        num += tried * q[i];
        den += tried;
    }
    num / den
}

/// Searches static rankings for the one with the highest efficiency at `φ*`.
pub fn optimal_static_ranking(
    spec: &MarketSpec,
    r: f64,
    method: SearchMethod,
) -> Result<(Ranking, f64)> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Domain(format!(
            "ranking search needs r in (0, 1), got {r}"
        )));
    }
    let n = spec.n();
    match method {
        SearchMethod::Exhaustive => {
            if n > MAX_EXHAUSTIVE_ITEMS {
                return Err(Error::Size(format!(
                    "exhaustive search is limited to {MAX_EXHAUSTIVE_ITEMS} items, market has {n}"
                )));
            }
            let mut best: Option<(Vec<usize>, f64)> = None;
            for perm in (0..n).permutations(n) {
                let value = fast_efficiency(spec, &perm, r);
                if best.as_ref().is_none_or(|(_, b)| value > *b) {
                    best = Some((perm, value));
                }
            }
            let (perm, _) = best.expect("at least one permutation");
            let rank = Ranking::new(perm)?;
            let value = equilibrium_efficiency(spec, &rank, r)?;
            Ok((rank, value))
        }
        SearchMethod::LocalSearchSwap => {
            let mut rank = Ranking::by_quality(spec);
            let mut current = fast_efficiency(spec, rank.positions(), r);
            loop {
                let mut best_swap = None;
                let mut best_value = current;
                for (a, b) in (0..n).tuple_combinations() {
                    rank.swap_items(a, b);
                    let value = fast_efficiency(spec, rank.positions(), r);
                    rank.swap_items(a, b);
                    if value > best_value {
                        best_value = value;
                        best_swap = Some((a, b));
                    }
                }
                match best_swap {
                    Some((a, b)) => {
                        rank.swap_items(a, b);
                        current = best_value;
                    }
                    None => break,
                }
            }
            let value = equilibrium_efficiency(spec, &rank, r)?;
            Ok((rank, value))
        }
    }
}
