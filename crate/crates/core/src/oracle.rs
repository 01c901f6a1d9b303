//! Finite-population micro-simulator: attacker/defender trajectories under
//! given controls, per-pair survival ODEs and the HVU survival probability.
//!
//! The per-pair survival solves `dQ_ik/dt = -Q_ik d_att(|s_i - x_k|^2)`
//! with product aggregation `Q_i = prod_k Q_ik`, and the HVU satisfies
//! `dP/dt = -P sum_i d_h(|s_i - s_hvu|^2) Q_i`. All integrals use the
//! trapezoidal rule on the step grid; survival values are accumulated in
//! the log domain so the product structure holds to round-off.
//!
//! With `noise > 0` the trajectories follow Euler-Maruyama increments
//! (`noise = sqrt(2 eps)` mirrors the population model's diffusion);
//! the deterministic model uses plain Euler steps. A fixed seed makes
//! runs bit-reproducible.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attrition::{survival_q, AttritionParams};
use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid, ScalarField};
use crate::ot::{w2_debiased_scratch, SinkhornParams, W2Scratch};
use crate::scalar::Scalar;

/// Control law for one side's agents.
#[derive(Clone)]
pub enum ControlLaw<T> {
    Stationary,
    /// Linear homing drift `gain * (target - x)`.
    Homing { target: (T, T), gain: T },
    /// User-supplied callable of time and position.
    Custom(Arc<dyn Fn(T, (T, T)) -> (T, T) + Send + Sync>),
}

impl<T: Scalar> ControlLaw<T> {
    pub fn eval(&self, t: T, pos: (T, T)) -> (T, T) {
        match self {
            ControlLaw::Stationary => (T::zero(), T::zero()),
            ControlLaw::Homing { target, gain } => {
                (*gain * (target.0 - pos.0), *gain * (target.1 - pos.1))
            }
            ControlLaw::Custom(f) => f(t, pos),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for ControlLaw<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlLaw::Stationary => write!(f, "Stationary"),
            ControlLaw::Homing { target, gain } => {
                write!(f, "Homing {{ target: {target:?}, gain: {gain:?} }}")
            }
            ControlLaw::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Finite-population scenario description.
#[derive(Clone, Debug)]
pub struct AgentScenario<T> {
    pub attackers0: Vec<(T, T)>,
    pub defenders0: Vec<(T, T)>,
    pub hvu: (T, T),
    pub attacker_law: ControlLaw<T>,
    pub defender_law: ControlLaw<T>,
    /// Defender weapon against attackers (shared across pairs).
    pub att_params: AttritionParams<T>,
    /// Attacker weapon against the HVU (shared across attackers).
    pub hvu_params: AttritionParams<T>,
    pub dt: T,
    pub t_final: T,
    /// Diffusion amplitude; 0 recovers the deterministic model.
    pub noise: T,
    pub seed: u64,
}

impl<T: Scalar> AgentScenario<T> {
    fn validate(&self) -> Result<()> {
        if self.attackers0.is_empty() || self.defenders0.is_empty() {
            return Err(Error::Config("need at least one attacker and one defender".into()));
        }
        if !(self.dt > T::zero()) || !(self.t_final > T::zero()) {
            return Err(Error::Config("dt and t_final must be positive".into()));
        }
        if !(self.noise >= T::zero()) {
            return Err(Error::Config("noise must be >= 0".into()));
        }
        Ok(())
    }

    /// Number of Euler steps; the step is shrunk slightly if needed so an
    /// integer count lands exactly on `t_final`.
    fn n_steps(&self) -> usize {
        let ratio = (self.t_final / self.dt).to_f64().unwrap_or(1.0);
        (ratio - 1e-9).ceil().max(1.0) as usize
    }
}

/// Trajectories and survival series of one simulated engagement.
#[derive(Clone, Debug)]
pub struct AgentTrace<T> {
    pub times: Vec<T>,
    /// `attackers[j][i]` = position of attacker `i` at step `j`.
    pub attackers: Vec<Vec<(T, T)>>,
    pub defenders: Vec<Vec<(T, T)>>,
    /// `q_pair[j][i * n_defenders + k]` = survival of attacker `i`
    /// against defender `k`.
    pub q_pair: Vec<Vec<T>>,
    /// Overall attacker survival `Q_i = prod_k Q_ik`.
    pub q: Vec<Vec<T>>,
    pub p: Vec<T>,
}

impl<T: Scalar> AgentTrace<T> {
    pub fn n_attackers(&self) -> usize {
        self.attackers.first().map_or(0, Vec::len)
    }

    pub fn n_defenders(&self) -> usize {
        self.defenders.first().map_or(0, Vec::len)
    }
}

fn dist2<T: Scalar>(a: (T, T), b: (T, T)) -> T {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}

/// Integrate the agent model and its survival ODEs.
pub fn simulate_agents<T: Scalar>(scn: &AgentScenario<T>) -> Result<AgentTrace<T>> {
    scn.validate()?;
    let n = scn.attackers0.len();
    let m = scn.defenders0.len();
    let steps = scn.n_steps();
    let dt = scn.t_final / T::from_count(steps);
    let half_dt = dt * T::from_f(0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    let noisy = scn.noise > T::zero();
    let noise_amp = scn.noise * dt.sqrt();

    let mut s = scn.attackers0.clone();
    let mut x = scn.defenders0.clone();

    // Trapezoid accumulators in the log domain.
    let mut pair_integral = vec![T::zero(); n * m];
    let mut hvu_integral = T::zero();

    let rates_at = |s: &[(T, T)],
                    x: &[(T, T)],
                    pair_integral: &[T]|
     -> Result<(Vec<T>, T)> {
        let mut pair_rates = vec![T::zero(); n * m];
        for (i, &si) in s.iter().enumerate() {
            for (k, &xk) in x.iter().enumerate() {
                pair_rates[i * m + k] = scn.att_params.rate(dist2(si, xk))?;
            }
        }
        // Sum_i d_h(|s_i - hvu|^2) Q_i with Q_i = exp(-sum_k L_ik).
        let mut hvu_rate = T::zero();
        for (i, &si) in s.iter().enumerate() {
            let mut log_qi = T::zero();
            for k in 0..m {
                log_qi -= pair_integral[i * m + k];
            }
            hvu_rate += scn.hvu_params.rate(dist2(si, scn.hvu))? * log_qi.exp();
        }
        Ok((pair_rates, hvu_rate))
    };

    let record = |times: &mut Vec<T>,
                  attackers: &mut Vec<Vec<(T, T)>>,
                  defenders: &mut Vec<Vec<(T, T)>>,
                  q_pair: &mut Vec<Vec<T>>,
                  q: &mut Vec<Vec<T>>,
                  p: &mut Vec<T>,
                  t: T,
                  s: &[(T, T)],
                  x: &[(T, T)],
                  pair_integral: &[T],
                  hvu_integral: T| {
        times.push(t);
        attackers.push(s.to_vec());
        defenders.push(x.to_vec());
        q_pair.push(pair_integral.iter().map(|&l| (-l).exp()).collect());
        let mut qi = Vec::with_capacity(n);
        for i in 0..n {
            let mut log_qi = T::zero();
            for k in 0..m {
                log_qi -= pair_integral[i * m + k];
            }
            qi.push(log_qi.exp());
        }
        q.push(qi);
        p.push((-hvu_integral).exp());
    };

    let mut times = Vec::with_capacity(steps + 1);
    let mut attackers = Vec::with_capacity(steps + 1);
    let mut defenders = Vec::with_capacity(steps + 1);
    let mut q_pair = Vec::with_capacity(steps + 1);
    let mut q = Vec::with_capacity(steps + 1);
    let mut p = Vec::with_capacity(steps + 1);

    let (mut pair_rate_prev, mut hvu_rate_prev) = rates_at(&s, &x, &pair_integral)?;
    record(
        &mut times,
        &mut attackers,
        &mut defenders,
        &mut q_pair,
        &mut q,
        &mut p,
        T::zero(),
        &s,
        &x,
        &pair_integral,
        hvu_integral,
    );

    for j in 0..steps {
        let t = dt * T::from_count(j);
        for si in s.iter_mut() {
            let v = scn.attacker_law.eval(t, *si);
            si.0 += dt * v.0;
            si.1 += dt * v.1;
            if noisy {
                let gx: f64 = StandardNormal.sample(&mut rng);
                let gy: f64 = StandardNormal.sample(&mut rng);
                si.0 += noise_amp * T::from_f(gx);
                si.1 += noise_amp * T::from_f(gy);
            }
        }
        for xk in x.iter_mut() {
            let v = scn.defender_law.eval(t, *xk);
            xk.0 += dt * v.0;
            xk.1 += dt * v.1;
            if noisy {
                let gx: f64 = StandardNormal.sample(&mut rng);
                let gy: f64 = StandardNormal.sample(&mut rng);
                xk.0 += noise_amp * T::from_f(gx);
                xk.1 += noise_amp * T::from_f(gy);
            }
        }

        let (pair_rates, _) = rates_at(&s, &x, &pair_integral)?;
        for (acc, (&prev, &cur)) in pair_integral
            .iter_mut()
            .zip(pair_rate_prev.iter().zip(&pair_rates))
        {
            *acc += half_dt * (prev + cur);
        }
        pair_rate_prev.copy_from_slice(&pair_rates);
        // The HVU integrand uses the freshly updated pair integrals.
        let (_, hvu_rate) = rates_at(&s, &x, &pair_integral)?;
        hvu_integral += half_dt * (hvu_rate_prev + hvu_rate);
        hvu_rate_prev = hvu_rate;

        record(
            &mut times,
            &mut attackers,
            &mut defenders,
            &mut q_pair,
            &mut q,
            &mut p,
            dt * T::from_count(j + 1),
            &s,
            &x,
            &pair_integral,
            hvu_integral,
        );
    }

    Ok(AgentTrace { times, attackers, defenders, q_pair, q, p })
}

/// Outcome of the micro/macro consistency check at Dirac populations.
#[derive(Clone, Debug)]
pub struct DiracReport<T> {
    pub times: Vec<T>,
    pub q_agent: Vec<T>,
    pub q_pop: Vec<T>,
    pub max_rel_dev: T,
}

/// Compare the agent-wise survival of a single attacker/defender pair with
/// the population-wise pipeline driven by single-cell densities following
/// the same trajectories. The W2 distance between snapped Diracs reduces
/// to the cell-center Euclidean distance, so the two agree up to Sinkhorn
/// bias and grid snapping.
pub fn dirac_consistency_check<T: Scalar>(
    params: &AttritionParams<T>,
    att_pos: &[(T, T)],
    def_pos: &[(T, T)],
    times: &[T],
    grid: Grid<T>,
    sinkhorn: &SinkhornParams<T>,
) -> Result<DiracReport<T>> {
    if att_pos.len() != times.len() || def_pos.len() != times.len() {
        return Err(Error::Input("trajectory and time series lengths differ".into()));
    }
    let single_cell = |pos: (T, T)| -> Result<DensityField<T>> {
        let (ix, iy) = grid.nearest_cell(pos.0, pos.1);
        let mut f = ScalarField::zeros(grid);
        f.set(ix, iy, T::one() / grid.cell_area());
        DensityField::from_scalar(f)
    };

    let mut scratch = W2Scratch::new();
    let mut d_agent = Vec::with_capacity(times.len());
    let mut d_pop = Vec::with_capacity(times.len());
    for (sa, sd) in att_pos.iter().zip(def_pos) {
        d_agent.push(params.rate(dist2(*sa, *sd))?);
        let mu = single_cell(*sa)?;
        let m = single_cell(*sd)?;
        let est = w2_debiased_scratch(&mu, &m, sinkhorn, &mut scratch)?;
        if !est.converged {
            return Err(Error::Diagnostic("sinkhorn non-convergence on Dirac pair".into()));
        }
        d_pop.push(params.rate(est.value)?);
    }
    let q_agent = survival_q(&d_agent, times)?;
    let q_pop = survival_q(&d_pop, times)?;
    let mut max_rel_dev = T::zero();
    for (&a, &p) in q_agent.iter().zip(&q_pop) {
        max_rel_dev = max_rel_dev.max((a - p).abs() / a);
    }
    Ok(DiracReport { times: times.to_vec(), q_agent, q_pop, max_rel_dev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn pair_scenario(att: (f64, f64), def: (f64, f64)) -> AgentScenario<f64> {
        AgentScenario {
            attackers0: vec![att],
            defenders0: vec![def],
            hvu: (4.0, 0.0),
            attacker_law: ControlLaw::Stationary,
            defender_law: ControlLaw::Stationary,
            att_params: AttritionParams::new(2.0, 5.0).unwrap(),
            hvu_params: AttritionParams::new(1.0, 5.0).unwrap(),
            dt: 0.01,
            t_final: 3.0,
            noise: 0.0,
            seed: 7,
        }
    }

    #[test]
    fn stationary_pair_matches_constant_rate_closed_form() {
        let scn = pair_scenario((0.0, 0.0), (2.0, 0.0));
        let trace = simulate_agents(&scn).unwrap();
        let rate = 2.0 * (-4.0f64 / 5.0).exp();
        for (&t, q) in trace.times.iter().zip(&trace.q) {
            assert_relative_eq!(q[0], (-rate * t).exp(), max_relative = 1e-12);
        }
        // P follows the two-level exponential with Q(t) inside.
        assert!(trace.p.last().unwrap() < &1.0);
    }

    #[test]
    fn zero_defender_weapon_keeps_attackers_alive() {
        let mut scn = pair_scenario((0.0, 0.0), (2.0, 0.0));
        scn.att_params = AttritionParams::new(0.0, 5.0).unwrap();
        let trace = simulate_agents(&scn).unwrap();
        assert!(trace.q.iter().all(|qi| qi[0] == 1.0));
        // P reduces to the attacker-only exponential with Q = 1.
        let d_h = 1.0 * (-(16.0f64) / 5.0).exp();
        let p_exact = (-d_h * 3.0f64).exp();
        assert_relative_eq!(*trace.p.last().unwrap(), p_exact, max_relative = 1e-12);
    }

    #[test]
    fn two_attackers_piecewise_constant_hand_computed() {
        // Stationary agents: rates are constant, so every integral is exact
        // and P is a product of exponentials computable by hand.
        let scn = AgentScenario {
            attackers0: vec![(0.0, 0.0), (1.0, 1.0)],
            defenders0: vec![(2.0, 0.0)],
            hvu: (3.0, 0.0),
            attacker_law: ControlLaw::Stationary,
            defender_law: ControlLaw::Stationary,
            att_params: AttritionParams::new(1.5, 4.0).unwrap(),
            hvu_params: AttritionParams::new(0.8, 6.0).unwrap(),
            dt: 0.004,
            t_final: 2.0,
            noise: 0.0,
            seed: 0,
        };
        let trace = simulate_agents(&scn).unwrap();
        let d1 = 1.5 * (-4.0f64 / 4.0).exp();
        let d2 = 1.5 * (-2.0f64 / 4.0).exp();
        let h1 = 0.8 * (-9.0f64 / 6.0).exp();
        let h2 = 0.8 * (-5.0f64 / 6.0).exp();
        let t = 2.0;
        assert_relative_eq!(trace.q.last().unwrap()[0], (-d1 * t).exp(), max_relative = 1e-9);
        assert_relative_eq!(trace.q.last().unwrap()[1], (-d2 * t).exp(), max_relative = 1e-9);
        // dP/dt = -P (h1 e^{-d1 t} + h2 e^{-d2 t}) integrates in closed form.
        let integral = h1 * (1.0 - (-d1 * t).exp()) / d1 + h2 * (1.0 - (-d2 * t).exp()) / d2;
        assert_relative_eq!(*trace.p.last().unwrap(), (-integral).exp(), max_relative = 1e-6);
    }

    #[test]
    fn product_structure_holds_to_roundoff() {
        let scn = AgentScenario {
            attackers0: vec![(0.0, 0.0), (-1.0, 2.0)],
            defenders0: vec![(2.0, 0.0), (1.0, -1.0), (0.0, 3.0)],
            hvu: (4.0, 0.0),
            attacker_law: ControlLaw::Homing { target: (4.0, 0.0), gain: 0.3 },
            defender_law: ControlLaw::Homing { target: (0.0, 0.0), gain: 0.2 },
            att_params: AttritionParams::new(2.0, 3.0).unwrap(),
            hvu_params: AttritionParams::new(1.0, 3.0).unwrap(),
            dt: 0.05,
            t_final: 2.0,
            noise: 0.0,
            seed: 0,
        };
        let trace = simulate_agents(&scn).unwrap();
        let m = trace.n_defenders();
        for (qp, qi) in trace.q_pair.iter().zip(&trace.q) {
            for i in 0..trace.n_attackers() {
                let prod: f64 = (0..m).map(|k| qp[i * m + k]).product();
                assert_relative_eq!(qi[i], prod, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn adding_a_defender_never_raises_survival() {
        let base = AgentScenario {
            attackers0: vec![(0.0, 0.0), (1.0, -1.0)],
            defenders0: vec![(2.0, 0.0)],
            hvu: (4.0, 0.0),
            attacker_law: ControlLaw::Homing { target: (4.0, 0.0), gain: 0.25 },
            defender_law: ControlLaw::Stationary,
            att_params: AttritionParams::new(1.0, 4.0).unwrap(),
            hvu_params: AttritionParams::new(1.0, 4.0).unwrap(),
            dt: 0.05,
            t_final: 3.0,
            noise: 0.0,
            seed: 1,
        };
        let mut extra = base.clone();
        extra.defenders0.push((-1.0, 1.0));
        let t0 = simulate_agents(&base).unwrap();
        let t1 = simulate_agents(&extra).unwrap();
        for (q0, q1) in t0.q.iter().zip(&t1.q) {
            for (a, b) in q0.iter().zip(q1) {
                assert!(b <= a);
            }
        }
        // And the HVU can only fare better.
        for (p0, p1) in t0.p.iter().zip(&t1.p) {
            assert!(p1 >= p0);
        }
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let mut scn = pair_scenario((0.0, 0.0), (2.0, 0.0));
        scn.noise = (2.0 * 0.001f64).sqrt();
        scn.attacker_law = ControlLaw::Homing { target: (4.0, 0.0), gain: 0.4 };
        let a = simulate_agents(&scn).unwrap();
        let b = simulate_agents(&scn).unwrap();
        for (pa, pb) in a.attackers.iter().zip(&b.attackers) {
            for (u, v) in pa.iter().zip(pb) {
                assert_eq!(u.0.to_bits(), v.0.to_bits());
                assert_eq!(u.1.to_bits(), v.1.to_bits());
            }
        }
        assert_eq!(a.p.last().unwrap().to_bits(), b.p.last().unwrap().to_bits());
        // A different seed produces a different path.
        scn.seed = 8;
        let c = simulate_agents(&scn).unwrap();
        assert_ne!(
            a.attackers.last().unwrap()[0].0.to_bits(),
            c.attackers.last().unwrap()[0].0.to_bits()
        );
    }

    #[test]
    fn survival_series_are_monotone_and_bounded() {
        let mut scn = pair_scenario((-1.0, 0.5), (1.5, -0.5));
        scn.noise = 0.05;
        let trace = simulate_agents(&scn).unwrap();
        for series in trace.q_pair.iter() {
            assert!(series.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
        for w in trace.p.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert_abs_diff_eq!(trace.p[0], 1.0);
        assert_abs_diff_eq!(trace.q[0][0], 1.0);
    }

    #[test]
    fn custom_control_law_is_used() {
        let mut scn = pair_scenario((0.0, 0.0), (2.0, 0.0));
        scn.attacker_law = ControlLaw::Custom(Arc::new(|_t, _p| (1.0, 0.0)));
        let trace = simulate_agents(&scn).unwrap();
        let last = trace.attackers.last().unwrap()[0];
        assert_relative_eq!(last.0, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn dirac_check_stationary_pair_within_tolerance() {
        let grid = Grid::new(-5.0, 5.0, -5.0, 5.0, 60, 60).unwrap();
        // Cell centers exactly 2 apart: (2i - 59)/12 for i = 24 and 36.
        let a = (13.0 / 12.0, -11.0 / 12.0);
        let d = (-11.0 / 12.0, -11.0 / 12.0);
        let times: Vec<f64> = (0..21).map(|k| k as f64 * 0.25).collect();
        let att: Vec<(f64, f64)> = times.iter().map(|_| a).collect();
        let def: Vec<(f64, f64)> = times.iter().map(|_| d).collect();
        let params = AttritionParams::new(2.0, 5.0).unwrap();
        let report = dirac_consistency_check(
            &params,
            &att,
            &def,
            &times,
            grid,
            &SinkhornParams::default(),
        )
        .unwrap();
        assert!(report.max_rel_dev <= 0.03, "deviation {}", report.max_rel_dev);
    }
}
