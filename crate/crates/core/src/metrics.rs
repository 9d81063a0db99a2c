//! Ensemble metrics: unpredictability, Mann-Whitney U tests and efficiency curves.

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::sim::{RunRecord, TimeConvention};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    /// `u_i`: mean absolute pairwise difference of item `i`'s final share.
    pub per_item: Vec<f64>,
    /// `U = Σu_i / n`.
    pub overall: f64,
    /// `U_w`: the same quantity restricted to pairs that involve world `w`.
    /// Averages to `overall`.
    pub per_world: Vec<f64>,
    pub final_shares: Vec<Vec<f64>>,
}

/// Unpredictability of a `W × n` matrix of final shares.
pub fn unpredictability(final_shares: &[Vec<f64>]) -> Result<EnsembleStats> {
    let worlds = final_shares.len();
    if worlds < 2 {
        return Err(Error::Size(format!(
            "unpredictability needs at least 2 worlds, got {worlds}"
        )));
    }
    let n = final_shares[0].len();
    if n == 0 || final_shares.iter().any(|row| row.len() != n) {
        return Err(Error::Size(
            "all worlds must report the same nonzero item count".into(),
        ));
    }
    let pairs = (worlds * (worlds - 1) / 2) as f64;
    let mut per_item = vec![0.0; n];
    // per_world_item[w][i] accumulates |φ_iw - φ_iw'| over w' ≠ w
    let mut per_world_item = vec![vec![0.0; n]; worlds];
    for (a, b) in (0..worlds).tuple_combinations() {
        for i in 0..n {
            let d = (final_shares[a][i] - final_shares[b][i]).abs();
            per_item[i] += d;
            per_world_item[a][i] += d;
            per_world_item[b][i] += d;
        }
    }
    for u in per_item.iter_mut() {
        *u /= pairs;
    }
    let overall = per_item.iter().sum::<f64>() / n as f64;
    let per_world = per_world_item
        .iter()
        .map(|row| row.iter().sum::<f64>() / ((worlds - 1) * n) as f64)
        .collect();
    Ok(EnsembleStats {
        per_item,
        overall,
        per_world,
        final_shares: final_shares.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// Values in the first sample tend to be smaller.
    Less,
    Greater,
    TwoSided,
}

impl Alternative {
    pub fn mirrored(self) -> Self {
        match self {
            Alternative::Less => Alternative::Greater,
            Alternative::Greater => Alternative::Less,
            Alternative::TwoSided => Alternative::TwoSided,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `U` of the first sample: rank sum minus `n_a(n_a+1)/2`.
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Both samples at most this large → exact permutation p-value.
pub const EXACT_LIMIT: usize = 8;

/// Midranks (1-based) of the pooled values.
fn midranks(values: &[f64]) -> Vec<f64> {
    let order: Vec<usize> = (0..values.len())
        .sorted_by(|&a, &b| values[a].total_cmp(&values[b]))
        .collect();
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn mann_whitney_u(a: &[f64], b: &[f64], alternative: Alternative) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Size(
            "Mann-Whitney needs two nonempty samples".into(),
        ));
    }
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let offset = (na * (na + 1)) as f64 / 2.0;
    let u = ranks[..na].iter().sum::<f64>() - offset;
    let mean = (na * nb) as f64 / 2.0;

    if na <= EXACT_LIMIT && nb <= EXACT_LIMIT {
        // every way of assigning na of the pooled midranks to the first sample
        let eps = 1e-9;
        let mut hits = 0u64;
        let mut total = 0u64;
        for combo in (0..na + nb).combinations(na) {
            let uc = combo.iter().map(|&k| ranks[k]).sum::<f64>() - offset;
            total += 1;
            let hit = match alternative {
                Alternative::Less => uc <= u + eps,
                Alternative::Greater => uc >= u - eps,
                Alternative::TwoSided => (uc - mean).abs() >= (u - mean).abs() - eps,
            };
            if hit {
                hits += 1;
            }
        }
        return Ok(MannWhitney {
            u,
            p_value: hits as f64 / total as f64,
            exact: true,
        });
    }

    Ok(normal_approximation(&pooled, na, u, alternative))
}

/// Mann-Whitney p-value from the normal approximation alone, whatever the
/// sample sizes.
pub fn mann_whitney_normal(a: &[f64], b: &[f64], alternative: Alternative) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Size(
            "Mann-Whitney needs two nonempty samples".into(),
        ));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let na = a.len();
    let u = ranks[..na].iter().sum::<f64>() - (na * (na + 1)) as f64 / 2.0;
    Ok(normal_approximation(&pooled, na, u, alternative))
}

/// Continuity- and tie-corrected normal approximation.
fn normal_approximation(
    pooled: &[f64],
    na: usize,
    u: f64,
    alternative: Alternative,
) -> MannWhitney {
    let nb = pooled.len() - na;
    let mean = (na * nb) as f64 / 2.0;
    let n = pooled.len() as f64;
    let ties: f64 = pooled
        .iter()
        .sorted_by(|x, y| x.total_cmp(y))
        .chunk_by(|&&x| x.to_bits())
        .into_iter()
        .map(|(_, g)| {
            let t = g.count() as f64;
            t * t * t - t
        })
        .sum();
    let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if var <= 0.0 {
        // every value tied
        return MannWhitney {
            u,
            p_value: 1.0,
            exact: false,
        };
    }
    let sd = var.sqrt();
    let dev = u - mean;
    let p_value = match alternative {
        Alternative::Less => normal_cdf((dev + 0.5) / sd),
        Alternative::Greater => normal_cdf(-(dev - 0.5) / sd),
        Alternative::TwoSided => {
            let z = ((dev.abs() - 0.5).max(0.0)) / sd;
            (2.0 * normal_cdf(-z)).min(1.0)
        }
    };
    MannWhitney {
        u,
        p_value,
        exact: false,
    }
}

/// Pointwise mean of cumulative downloads across worlds: `(period, mean)`.
pub fn efficiency_curve(records: &[RunRecord]) -> Result<Vec<(u64, f64)>> {
    let first = records
        .first()
        .ok_or_else(|| Error::Size("efficiency curve needs at least one world".into()))?;
    for rec in records {
        if rec.config.time != TimeConvention::ArrivalPeriod {
            return Err(Error::ConfigMismatch(
                "efficiency curves are defined over arrival periods".into(),
            ));
        }
        if rec.config.iterations != first.config.iterations
            || rec.config.sample_stride != first.config.sample_stride
        {
            return Err(Error::ConfigMismatch(
                "worlds differ in horizon or sampling stride".into(),
            ));
        }
    }
    let w = records.len() as f64;
    Ok(first
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let total: u64 = records.iter().map(|r| r.samples[k].downloads).sum();
            (s.period, total as f64 / w)
        })
        .collect())
}

/// `period,mean_downloads` rows.
pub fn efficiency_csv(curve: &[(u64, f64)]) -> String {
    let mut out = String::from("period,mean_downloads\n");
    for (t, d) in curve {
        out.push_str(&format!("{t},{d}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MarketSpec, SignalSpec};
    use crate::sim::{self, RunConfig};
    use approx::assert_relative_eq;

    #[test]
    fn unpredictability_examples() {
        let s = unpredictability(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(s.per_item, vec![1.0, 1.0]);
        assert_eq!(s.overall, 1.0);

        let same = vec![vec![0.3, 0.7]; 5];
        assert_eq!(unpredictability(&same).unwrap().overall, 0.0);

        let s = unpredictability(&[vec![0.2, 0.8], vec![0.5, 0.5], vec![0.8, 0.2]]).unwrap();
        assert_relative_eq!(s.per_item[0], 0.4, epsilon = 1e-15);
        let mean_world: f64 = s.per_world.iter().sum::<f64>() / 3.0;
        assert_relative_eq!(mean_world, s.overall, epsilon = 1e-15);

        assert!(matches!(
            unpredictability(&[vec![1.0]]),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn exact_mann_whitney_small() {
        // 6 equally likely rank assignments; only {1,2} gives U = 0
        let m = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0], Alternative::Less).unwrap();
        assert_eq!(m.u, 0.0);
        assert!(m.exact);
        assert_relative_eq!(m.p_value, 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn identical_samples_are_not_separated() {
        let a = [0.3, 0.1, 0.7, 0.2];
        let m = mann_whitney_u(&a, &a, Alternative::TwoSided).unwrap();
        assert!(m.p_value >= 0.99);
        let big: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let m = mann_whitney_u(&big, &big, Alternative::TwoSided).unwrap();
        assert!(m.p_value >= 0.99);
        assert!(!m.exact);
    }

    #[test]
    fn ties_use_midranks() {
        assert_eq!(midranks(&[2.0, 1.0, 2.0, 3.0]), vec![2.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn empty_sample_rejected() {
        assert!(mann_whitney_u(&[], &[1.0], Alternative::Less).is_err());
    }

    #[test]
    fn efficiency_curve_checks() {
        let spec = MarketSpec::new(vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 0.5]).unwrap();
        let cfg = RunConfig::new(SignalSpec::Power { r: 0.5 }, 1000, 3).with_stride(100);
        let recs = sim::run_ensemble(&spec, &cfg, 3).unwrap();
        // quality 1 everywhere: every arrival buys
        for (t, d) in efficiency_curve(&recs).unwrap() {
            assert_eq!(d, t as f64);
        }
        let one = efficiency_curve(&recs[..1]).unwrap();
        let own: Vec<(u64, f64)> = recs[0]
            .downloads_over_time()
            .into_iter()
            .map(|(t, d)| (t, d as f64))
            .collect();
        assert_eq!(one, own);

        let other = sim::run_world(&spec, &cfg.clone().with_stride(50)).unwrap();
        let mixed = vec![recs[0].clone(), other];
        assert!(matches!(
            efficiency_curve(&mixed),
            Err(Error::ConfigMismatch(_))
        ));
        let purchase = sim::run_world(
            &spec,
            &cfg.clone()
                .with_time(crate::sim::TimeConvention::PurchasePeriod),
        )
        .unwrap();
        assert!(efficiency_curve(&[purchase]).is_err());
        assert!(efficiency_csv(&[(0, 0.0), (10, 4.5)]).ends_with("10,4.5\n"));
    }
}
