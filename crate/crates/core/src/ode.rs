//! Mean-field dynamics `dφ/dt = p(φ) - φ` on the simplex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, MarketSpec, Ranking, SignalSpec};
use crate::signals;

/// Floor applied to shares under sublinear signals, where `x^r` has an
/// unbounded slope at zero. A numerical device only.
pub const INTERIOR_FLOOR: f64 = 1e-14;

/// How far outside `[0, 1]` a component may drift in one step.
pub const BOX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub step: f64,
    /// Largest `|Σφ - 1|` seen after a step, before renormalization.
    pub max_mass_error: f64,
}

impl OdeTrajectory {
    pub fn last(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }

    /// `t,phi_1,...,phi_n` rows.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",phi_{i}"));
        }
        out.push('\n');
        for (t, s) in self.times.iter().zip(&self.states) {
            out.push_str(&t.to_string());
            for x in s {
                out.push(',');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// `F(φ) = p(φ) - φ`.
pub fn vector_field(
    spec: &MarketSpec,
    rank: &Ranking,
    sig: &SignalSpec,
    shares: &[f64],
) -> Result<Vec<f64>> {
    let p = model::purchase_probabilities(spec, rank, sig, shares)?;
    Ok(p.iter().zip(shares).map(|(p, x)| p - x).collect())
}

struct Field<'a> {
    spec: &'a MarketSpec,
    sig: &'a SignalSpec,
    /// `v_{σ(i)} q_i`
    qbar: Vec<f64>,
    floor: f64,
}

impl Field<'_> {
    fn eval(&self, phi: &[f64], out: &mut [f64]) {
        let mut total = 0.0;
        for i in 0..phi.len() {
            let x = phi[i].clamp(self.floor, 1.0);
            let w = self.qbar[i] * signals::signal_value(self.sig, self.spec.appeal()[i], x);
            out[i] = w;
            total += w;
        }
        for i in 0..phi.len() {
            out[i] = out[i] / total - phi[i];
        }
    }
}

/// Classical RK4 with renormalization onto the simplex after every step.
pub fn integrate(
    spec: &MarketSpec,
    rank: &Ranking,
    sig: &SignalSpec,
    phi0: &[f64],
    t_end: f64,
    h: f64,
) -> Result<OdeTrajectory> {
    sig.validate()?;
    model::check_simplex(phi0, spec.n())?;
    if rank.len() != spec.n() {
        return Err(Error::InvalidRanking(
            "ranking size does not match market".into(),
        ));
    }
    if phi0.iter().any(|&x| x <= 0.0) {
        return Err(Error::Domain(
            "initial state must be strictly interior".into(),
        ));
    }
    if !(h > 0.0 && h.is_finite()) || !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::Domain(format!(
            "need h > 0 and t_end >= 0, got h={h}, t_end={t_end}"
        )));
    }
    let floor = match *sig {
        SignalSpec::Power { r } if r < 1.0 => INTERIOR_FLOOR,
        _ => 0.0,
    };
    let field = Field {
        spec,
        sig,
        qbar: spec.effective_quality(rank),
        floor,
    };
    let n = spec.n();
    let steps = (t_end / h).round() as usize;
    let mut phi = model::normalize(phi0);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(phi.clone());

    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut stage = vec![0.0; n];
    let mut max_mass_error: f64 = 0.0;
    for step in 1..=steps {
        field.eval(&phi, &mut k1);
        for i in 0..n {
            stage[i] = phi[i] + 0.5 * h * k1[i];
        }
        field.eval(&stage, &mut k2);
        for i in 0..n {
            stage[i] = phi[i] + 0.5 * h * k2[i];
        }
        field.eval(&stage, &mut k3);
        for i in 0..n {
            stage[i] = phi[i] + h * k3[i];
        }
        field.eval(&stage, &mut k4);
        for i in 0..n {
            phi[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t = step as f64 * h;
        if let Some(x) = phi
            .iter()
            .find(|&&x| !(-BOX_TOL..=1.0 + BOX_TOL).contains(&x))
        {
            return Err(Error::StepSize {
                time: t,
                detail: format!("component {x} with h={h}"),
            });
        }
        let mass: f64 = phi.iter().sum();
        max_mass_error = max_mass_error.max((mass - 1.0).abs());
        for x in phi.iter_mut() {
            *x = x.max(floor);
        }
        let total: f64 = phi.iter().sum();
        for x in phi.iter_mut() {
            *x /= total;
        }
        times.push(t);
        states.push(phi.clone());
    }
    Ok(OdeTrajectory {
        times,
        states,
        step: h,
        max_mass_error,
    })
}

/// `H_ij(φ) = φ_i^{1-r}/q̄_i - φ_j^{1-r}/q̄_j`, which decays like `e^{(r-1)t}`
/// along exact solutions.
pub fn decay_statistic(qbar: &[f64], r: f64, phi: &[f64], i: usize, j: usize) -> Result<f64> {
    for k in [i, j] {
        if phi[k] <= 0.0 {
            return Err(Error::Singular { item: k });
        }
    }
    Ok(phi[i].powf(1.0 - r) / qbar[i] - phi[j].powf(1.0 - r) / qbar[j])
}

/// `max_t |H_ij(t) - e^{(r-1)t} H_ij(0)|` over the trajectory's grid.
pub fn decay_residual(
    trajectory: &OdeTrajectory,
    spec: &MarketSpec,
    rank: &Ranking,
    r: f64,
    i: usize,
    j: usize,
) -> Result<f64> {
    let n = spec.n();
    if i >= n || j >= n {
        return Err(Error::Domain(format!("items {i}, {j} outside 0..{n}")));
    }
    let qbar = spec.effective_quality(rank);
    let h0 = decay_statistic(&qbar, r, &trajectory.states[0], i, j)?;
    let mut worst: f64 = 0.0;
    for (t, phi) in trajectory.times.iter().zip(&trajectory.states) {
        let h = decay_statistic(&qbar, r, phi, i, j)?;
        worst = worst.max((h - ((r - 1.0) * t).exp() * h0).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium;
    use approx::assert_relative_eq;

    fn five_song() -> MarketSpec {
        MarketSpec::new(
            vec![0.80, 0.72, 0.68, 0.65, 0.60],
            vec![0.38, 0.35, 0.46, 0.27, 0.62],
            vec![0.80, 0.75, 0.69, 0.62, 0.58],
        )
        .unwrap()
    }

    #[test]
    fn field_vanishes_at_equilibria() {
        let spec = five_song();
        let id = Ranking::identity(5);
        for r in [0.25, 0.5, 2.0] {
            for eq in equilibrium::all_equilibria(&spec, &id, r).unwrap() {
                let f = vector_field(&spec, &id, &SignalSpec::Power { r }, &eq.shares).unwrap();
                assert!(f.iter().all(|x| x.abs() < 1e-12), "{f:?}");
            }
        }
    }

    #[test]
    fn flow_toward_uniform_in_symmetric_market() {
        let spec = MarketSpec::new(vec![0.6, 0.6], vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let f = vector_field(
            &spec,
            &Ranking::identity(2),
            &SignalSpec::Power { r: 0.5 },
            &[0.9, 0.1],
        )
        .unwrap();
        // p_1 = 0.9^0.5 / (0.9^0.5 + 0.1^0.5) = 0.75
        assert_relative_eq!(f[0], 0.75 - 0.9, epsilon = 1e-12);
        assert!(f[0] < 0.0);
    }

    #[test]
    fn equilibrium_start_stays_put() {
        let spec = five_song();
        let id = Ranking::identity(5);
        let eq = equilibrium::inner_equilibrium(&spec, &id, 0.5).unwrap();
        let traj = integrate(
            &spec,
            &id,
            &SignalSpec::Power { r: 0.5 },
            &eq.shares,
            5.0,
            0.01,
        )
        .unwrap();
        for (a, b) in traj.last().iter().zip(&eq.shares) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn converges_to_inner_equilibrium() {
        let spec = five_song();
        let id = Ranking::identity(5);
        let eq = equilibrium::inner_equilibrium(&spec, &id, 0.5).unwrap();
        let phi0 = model::normalize(spec.appeal());
        let sig = SignalSpec::Power { r: 0.5 };
        let gap = |t_end: f64| {
            let traj = integrate(&spec, &id, &sig, &phi0, t_end, 0.01).unwrap();
            assert_eq!(traj.states.len(), (t_end / 0.01).round() as usize + 1);
            traj.last()
                .iter()
                .zip(&eq.shares)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        // the gap shrinks like e^{(r-1)t}: about 7e-6 at t=20, below 1e-6 by t=30
        let g20 = gap(20.0);
        let g30 = gap(30.0);
        assert!(g20 < 1e-5, "{g20}");
        assert!(g30 < 1e-6, "{g30}");
        let rate = (g30 / g20).ln() / 10.0;
        assert!((rate + 0.5).abs() < 0.05, "{rate}");
    }

    #[test]
    fn superlinear_symmetric_market_heads_to_leader() {
        let spec = MarketSpec::new(vec![0.5, 0.5], vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let traj = integrate(
            &spec,
            &Ranking::identity(2),
            &SignalSpec::Power { r: 2.0 },
            &[0.8, 0.2],
            30.0,
            0.01,
        )
        .unwrap();
        assert!(traj.last()[0] > 0.999);
    }

    #[test]
    fn decay_law_examples() {
        // e^{-0.5 ln 4} = 0.5
        assert_relative_eq!(0.1 * ((0.5 - 1.0) * 4f64.ln()).exp(), 0.05, epsilon = 1e-15);

        // H_ij(0) = 0 stays 0: start on the curve φ_i^{1-r}/q̄_i = φ_j^{1-r}/q̄_j
        let spec = MarketSpec::new(vec![0.9, 0.4, 0.6], vec![1.0; 3], vec![1.0; 3]).unwrap();
        let id = Ranking::identity(3);
        let r = 0.5;
        // φ_0/φ_1 = (q̄_0/q̄_1)^{1/(1-r)} = (0.9/0.4)^2
        let ratio = (0.9f64 / 0.4).powi(2);
        let phi1 = 0.1;
        let phi0 = vec![ratio * phi1, phi1, 1.0 - (1.0 + ratio) * phi1];
        assert!(phi0[2] > 0.0);
        let traj = integrate(&spec, &id, &SignalSpec::Power { r }, &phi0, 10.0, 0.005).unwrap();
        let qbar = spec.effective_quality(&id);
        for phi in &traj.states {
            assert!(decay_statistic(&qbar, r, phi, 0, 1).unwrap().abs() < 1e-9);
        }
        assert!(decay_residual(&traj, &spec, &id, r, 0, 1).unwrap() < 1e-9);
    }

    #[test]
    fn rejects_boundary_starts_and_bad_steps() {
        let spec = five_song();
        let id = Ranking::identity(5);
        let sig = SignalSpec::Power { r: 0.5 };
        assert!(integrate(&spec, &id, &sig, &[1.0, 0.0, 0.0, 0.0, 0.0], 1.0, 0.01).is_err());
        assert!(integrate(&spec, &id, &sig, &[0.2; 5], 1.0, 0.0).is_err());
    }

    #[test]
    fn huge_steps_are_reported() {
        let spec = MarketSpec::new(vec![0.9, 0.1], vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let res = integrate(
            &spec,
            &Ranking::identity(2),
            &SignalSpec::Power { r: 3.0 },
            &[0.5, 0.5],
            50.0,
            5.0,
        );
        assert!(matches!(res, Err(Error::StepSize { .. })));
    }

    #[test]
    fn csv_layout() {
        let spec = five_song();
        let id = Ranking::identity(5);
        let traj = integrate(
            &spec,
            &id,
            &SignalSpec::Power { r: 0.5 },
            &[0.2; 5],
            0.1,
            0.05,
        )
        .unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,phi_1,phi_2,phi_3,phi_4,phi_5");
        assert_eq!(lines.count(), 3);
    }
}
