//! Attrition-rate functions and the survival probability functionals.
//!
//! The attrition rate maps the squared statistical distance between shooter
//! and target populations to an instantaneous destruction rate,
//! `λ exp(-r²/σ)`. Survival probabilities follow by exponentiating the
//! time integral of the rate:
//!
//! ```text
//! Q(t) = exp(-∫₀ᵗ d_att dτ)          (attacker survival)
//! P(t) = exp(-∫₀ᵗ d_h · Q dτ)        (HVU survival)
//! ```
//!
//! The integrals are evaluated by the trapezoidal rule on the caller's
//! sample instants; for piecewise-linear rate series that is exact.
//! Non-exponential rate shapes can be plugged in by computing the rate
//! series with any callable and feeding it to `survival_q` / `survival_p`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Parameters of the exponential attrition rate `λ exp(-r²/σ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttritionParams<T> {
    /// Peak rate at zero distance (1/time).
    pub lambda: T,
    /// Squared-distance scale (length²).
    pub sigma: T,
}

impl<T: Scalar> AttritionParams<T> {
    pub fn new(lambda: T, sigma: T) -> Result<Self> {
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(sigma > T::zero()) {
            return Err(Error::Config(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(Self { lambda, sigma })
    }

    /// Rate at squared distance `r2`: `λ exp(-r2/σ)`.
    pub fn rate(&self, r2: T) -> Result<T> {
        if r2 < T::zero() {
            return Err(Error::Domain(format!("squared distance must be >= 0, got {r2}")));
        }
        Ok(self.lambda * (-r2 / self.sigma).exp())
    }

    /// Derivative of `rate` with respect to the squared distance:
    /// `-(λ/σ) exp(-r2/σ) = -rate(r2)/σ`.
    pub fn rate_derivative(&self, r2: T) -> Result<T> {
        Ok(-self.rate(r2)? / self.sigma)
    }
}

fn check_times<T: Scalar>(times: &[T]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Input("empty time series".into()));
    }
    if times[0] != T::zero() {
        return Err(Error::Input(format!("times must start at 0, got {}", times[0])));
    }
    if times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Input("times must be strictly increasing".into()));
    }
    Ok(())
}

/// Cumulative trapezoidal integral of `f` over `times`, starting at zero.
fn cumulative_trapezoid<T: Scalar>(f: &[T], times: &[T]) -> Vec<T> {
    let half = T::from_f(0.5);
    let mut out = Vec::with_capacity(f.len());
    let mut acc = T::zero();
    out.push(acc);
    for k in 1..f.len() {
        acc += half * (f[k] + f[k - 1]) * (times[k] - times[k - 1]);
        out.push(acc);
    }
    out
}

/// Attacker survival probability series `Q(t_k) = exp(-∫ d_att)`.
pub fn survival_q<T: Scalar>(d_att: &[T], times: &[T]) -> Result<Vec<T>> {
    check_times(times)?;
    if d_att.len() != times.len() {
        return Err(Error::Input(format!(
            "rate series length {} does not match {} times",
            d_att.len(),
            times.len()
        )));
    }
    if d_att.iter().any(|&d| d < T::zero() || !d.is_finite()) {
        return Err(Error::Input("attrition rates must be finite and >= 0".into()));
    }
    Ok(cumulative_trapezoid(d_att, times)
        .into_iter()
        .map(|i| (-i).exp())
        .collect())
}

/// HVU survival probability series `P(t_k) = exp(-∫ d_h · Q)`.
pub fn survival_p<T: Scalar>(d_h: &[T], q: &[T], times: &[T]) -> Result<Vec<T>> {
    check_times(times)?;
    if d_h.len() != times.len() || q.len() != times.len() {
        return Err(Error::Input(format!(
            "series lengths ({}, {}) do not match {} times",
            d_h.len(),
            q.len(),
            times.len()
        )));
    }
    if d_h.iter().any(|&d| d < T::zero() || !d.is_finite()) {
        return Err(Error::Input("attrition rates must be finite and >= 0".into()));
    }
    let weighted: Vec<T> = d_h.iter().zip(q).map(|(&d, &qk)| d * qk).collect();
    Ok(cumulative_trapezoid(&weighted, times)
        .into_iter()
        .map(|i| (-i).exp())
        .collect())
}

/// Time series of attrition rates, squared distances and survival
/// probabilities along a solved flow.
#[derive(Clone, Debug, Default)]
pub struct SurvivalTrace<T> {
    pub times: Vec<T>,
    /// Squared W2 distance between defender and attacker populations.
    pub w2_def_att: Vec<T>,
    /// Squared W2 distance between attacker population and the HVU.
    pub w2_att_hvu: Vec<T>,
    pub d_att: Vec<T>,
    pub d_h: Vec<T>,
    pub q: Vec<T>,
    pub p: Vec<T>,
}

impl<T: Scalar> SurvivalTrace<T> {
    /// Assemble a trace from squared-distance series.
    pub fn from_distances(
        times: Vec<T>,
        w2_def_att: Vec<T>,
        w2_att_hvu: Vec<T>,
        att_params: &AttritionParams<T>,
        hvu_params: &AttritionParams<T>,
    ) -> Result<Self> {
        let d_att = w2_def_att
            .iter()
            .map(|&r2| att_params.rate(r2.max(T::zero())))
            .collect::<Result<Vec<_>>>()?;
        let d_h = w2_att_hvu
            .iter()
            .map(|&r2| hvu_params.rate(r2.max(T::zero())))
            .collect::<Result<Vec<_>>>()?;
        let q = survival_q(&d_att, &times)?;
        let p = survival_p(&d_h, &q, &times)?;
        Ok(Self { times, w2_def_att, w2_att_hvu, d_att, d_h, q, p })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Check the structural invariants: unit start, monotone decay, (0,1] range.
    pub fn validate(&self) -> Result<()> {
        for series in [&self.q, &self.p] {
            if series.len() != self.times.len() {
                return Err(Error::Input("trace series length mismatch".into()));
            }
            if series[0] != T::one() {
                return Err(Error::Input("survival series must start at 1".into()));
            }
            if series.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::Input("survival series must be nonincreasing".into()));
            }
            if series.iter().any(|&v| !(v > T::zero() && v <= T::one())) {
                return Err(Error::Input("survival values must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn linspace(t1: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| t1 * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn rate_peaks_at_zero_distance() {
        let p = AttritionParams::new(14.0, 5.0).unwrap();
        assert_abs_diff_eq!(p.rate(0.0).unwrap(), 14.0);
        assert_relative_eq!(p.rate(5.0).unwrap(), 14.0 * (-1.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn rate_decreases_monotonically_to_zero() {
        let p = AttritionParams::new(10.0, 2.0).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..60 {
            let r2 = k as f64 * 2.0;
            let d = p.rate(r2).unwrap();
            assert!(d < prev && d > 0.0 && d <= 10.0);
            prev = d;
        }
        assert!(p.rate(1e6).unwrap() < 1e-100);
    }

    #[test]
    fn rate_rejects_negative_distance() {
        let p = AttritionParams::new(1.0, 1.0).unwrap();
        assert!(p.rate(-0.1).is_err());
    }

    #[test]
    fn derivative_matches_closed_form_and_finite_difference() {
        let p = AttritionParams::new(14.0, 5.0).unwrap();
        assert_abs_diff_eq!(p.rate_derivative(0.0).unwrap(), -2.8, epsilon = 1e-12);
        for &r2 in &[0.0f64, 0.3, 1.0, 4.0, 20.0] {
            let h = 1e-6 * (1.0 + r2);
            let fd = (p.rate(r2 + h).unwrap() - p.rate((r2 - h).max(0.0)).unwrap())
                / (r2 + h - (r2 - h).max(0.0));
            assert_relative_eq!(p.rate_derivative(r2).unwrap(), fd, max_relative = 1e-6);
            // Algebraic identity d' = -d/sigma.
            assert_relative_eq!(
                p.rate_derivative(r2).unwrap(),
                -p.rate(r2).unwrap() / 5.0,
                max_relative = 1e-15
            );
        }
    }

    #[test]
    fn survival_q_constant_rate_closed_form() {
        let times = linspace(2.0, 50);
        let d = vec![0.5; 50];
        let q = survival_q(&d, &times).unwrap();
        assert_abs_diff_eq!(q[0], 1.0);
        assert_relative_eq!(*q.last().unwrap(), (-1.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn survival_q_zero_rate_is_one() {
        let times = linspace(3.0, 20);
        let q = survival_q(&vec![0.0; 20], &times).unwrap();
        assert!(q.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn survival_q_linear_rate_quadrature_oracle() {
        // d(t) = t on [0,2]: exact integral 2, Q(2) = e^{-2}.
        let times = linspace(2.0, 50);
        let d: Vec<f64> = times.clone();
        let q = survival_q(&d, &times).unwrap();
        assert_relative_eq!(*q.last().unwrap(), (-2.0f64).exp(), max_relative = 1e-3);
    }

    #[test]
    fn survival_q_rejects_bad_times() {
        assert!(survival_q(&[0.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(survival_q(&[0.0, 0.0], &[0.5, 1.0]).is_err());
        assert!(survival_q(&[0.0, 0.0, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn survival_p_constant_inputs_closed_form() {
        let times = linspace(1.0, 40);
        let d_h = vec![1.0; 40];
        let q = vec![1.0; 40];
        let p = survival_p(&d_h, &q, &times).unwrap();
        assert_relative_eq!(*p.last().unwrap(), (-1.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn survival_p_zero_rate_is_one() {
        let times = linspace(1.0, 10);
        let p = survival_p(&vec![0.0; 10], &vec![1.0; 10], &times).unwrap();
        assert!(p.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn survival_p_two_stage_quadrature_oracle() {
        // d_h = 1, Q(t) = e^{-t}: P(2) = exp(-(1 - e^{-2})).
        let times = linspace(2.0, 50);
        let q: Vec<f64> = times.iter().map(|&t| (-t).exp()).collect();
        let p = survival_p(&vec![1.0; 50], &q, &times).unwrap();
        let exact = (-(1.0 - (-2.0f64).exp())).exp();
        assert_relative_eq!(*p.last().unwrap(), exact, max_relative = 1e-3);
    }

    #[test]
    fn survival_p_rejects_length_mismatch() {
        let times = linspace(1.0, 5);
        assert!(survival_p(&vec![1.0; 4], &vec![1.0; 5], &times).is_err());
        assert!(survival_p(&vec![1.0; 5], &vec![1.0; 3], &times).is_err());
    }

    #[test]
    fn trace_from_distances_validates() {
        let times = linspace(10.0, 50);
        let att = AttritionParams::new(14.0, 5.0).unwrap();
        let hvu = AttritionParams::new(1.0, 5.0).unwrap();
        let w2_da: Vec<f64> = times.iter().map(|&t| 50.0 - 4.0 * t).collect();
        let w2_ah: Vec<f64> = times.iter().map(|&t| 34.0 * (1.0 - t / 10.0).powi(2)).collect();
        let trace = SurvivalTrace::from_distances(times, w2_da, w2_ah, &att, &hvu).unwrap();
        trace.validate().unwrap();
        assert!(*trace.q.last().unwrap() < 1.0);
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        // Piecewise-linear rates: the trapezoid rule is exact, so Q matches
        // the closed-form exponential of the exact integral.
        #[test]
        fn trapezoid_is_exact_on_piecewise_linear(
            nodes in proptest::collection::vec(0.0f64..4.0, 3..12),
        ) {
            let n = nodes.len();
            let times: Vec<f64> = (0..n).map(|k| k as f64 * 0.5).collect();
            let q = survival_q(&nodes, &times).unwrap();
            let mut integral = 0.0;
            for k in 1..n {
                integral += 0.25 * (nodes[k] + nodes[k - 1]);
                let exact = (-integral).exp();
                prop_assert!((q[k] - exact).abs() <= 1e-14 * exact.max(1e-300));
            }
        }

        // Pointwise-larger rates give pointwise-smaller survival.
        #[test]
        fn survival_is_antitone_in_rates(
            base in proptest::collection::vec(0.0f64..3.0, 5..20),
            bump in 0.0f64..2.0,
            at in 0usize..19,
        ) {
            let n = base.len();
            let times: Vec<f64> = (0..n).map(|k| k as f64 * 0.3).collect();
            let mut larger = base.clone();
            let i = at % n;
            larger[i] += bump;
            let q0 = survival_q(&base, &times).unwrap();
            let q1 = survival_q(&larger, &times).unwrap();
            for (a, b) in q0.iter().zip(&q1) {
                prop_assert!(b <= a);
            }
            // Survival stays nonincreasing in time.
            for w in q1.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }
    }
}
