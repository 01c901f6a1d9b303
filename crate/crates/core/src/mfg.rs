//! Coupled backward-HJB / forward-Fokker-Planck solver for the
//! attacker-defender game, and the two-sided density-bound verifier.
//!
//! Given the prescribed attacker flow `mu(t)` and the static HVU density
//! `nu_H`, the defender value function `w` and density `m` satisfy
//!
//! ```text
//! -w_t - eps Δw + |Dw|^2/(4 alpha) = F(t, x)
//!  m_t - eps Δm - div(b m)         = 0,     b = -Dw/(2 alpha)
//! ```
//!
//! with `w(T) = 0`, `m(0) = m_0`. The coupling field `F` is assembled from
//! the survival functional and the first variation of the squared W2
//! distance between `mu(t)` and `m(t)`. The system is solved by damped
//! Picard iteration: lag the survival weighting on the previous defender
//! flow, sweep the HJB backward, the FP forward, and relax the density
//! update until the time-summed L1 change falls below tolerance.
//!
//! Both PDE sweeps substep internally (advective CFL at most 0.45,
//! diffusion implicit via Peaceman-Rachford ADI); densities are advanced
//! in conservative upwind flux form, which preserves mass to round-off
//! and nonnegativity without clipping.

use crate::attrition::{survival_q, AttritionParams, SurvivalTrace};
use crate::error::{Error, Result};
use crate::grid::{
    gaussian_density, gaussian_mixture_density, Boundary, DensityField, GaussianSpec, Grid,
    ScalarField,
};
use crate::ot::{w2_debiased_scratch, SinkhornParams, W2Estimate, W2Scratch};
use crate::pde::{advect_upwind, adi_diffuse, hamiltonian_quadratic, FaceVelocities, PdeWorkspace};
use crate::scalar::Scalar;

/// Damped fixed-point iteration parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardParams<T> {
    /// Damping factor in (0, 1]; the new flow is `(1-theta) old + theta new`.
    pub theta: T,
    pub max_outer: usize,
    /// Stop when the time-summed L1 change of the defender flow drops below this.
    pub residual_tol: T,
}

impl<T: Scalar> Default for PicardParams<T> {
    fn default() -> Self {
        Self { theta: T::from_f(0.5), max_outer: 100, residual_tol: T::from_f(1e-4) }
    }
}

/// Full problem description for one solve.
#[derive(Clone, Debug)]
pub struct MfgConfig<T> {
    pub grid: Grid<T>,
    pub t_final: T,
    /// Number of output sample instants, including t = 0 and t = T.
    pub nt: usize,
    /// Diffusion coefficient.
    pub epsilon: T,
    /// Control-penalty weight in (0, 1).
    pub alpha: T,
    /// Defender weapon against attackers.
    pub att_params: AttritionParams<T>,
    /// Attacker weapon against the HVU.
    pub hvu_params: AttritionParams<T>,
    pub m0: GaussianSpec<T>,
    pub mu0: GaussianSpec<T>,
    /// HVU density components (a single Gaussian in every studied scenario).
    pub nu_h: Vec<GaussianSpec<T>>,
    pub attacker_target: (T, T),
    pub attacker_gain: T,
    pub sinkhorn: SinkhornParams<T>,
    pub picard: PicardParams<T>,
    /// Use the Hamiltonian-consistent FP drift `-Dw/(2 alpha)` (default);
    /// when off, the literal `-Dw` form.
    pub drift_scaling: bool,
    pub boundary: Boundary,
}

impl<T: Scalar> MfgConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > T::zero()) {
            return Err(Error::Config(format!("t_final must be > 0, got {}", self.t_final)));
        }
        if self.nt < 2 {
            return Err(Error::Config(format!("nt must be >= 2, got {}", self.nt)));
        }
        if !(self.epsilon > T::zero()) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.alpha > T::zero() && self.alpha < T::one()) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        let th = self.picard.theta;
        if !(th > T::zero() && th <= T::one()) {
            return Err(Error::Config(format!("theta must lie in (0,1], got {th}")));
        }
        if self.picard.max_outer == 0 {
            return Err(Error::Config("max_outer must be >= 1".into()));
        }
        if !(self.picard.residual_tol > T::zero()) {
            return Err(Error::Config("residual_tol must be > 0".into()));
        }
        if !(self.attacker_gain >= T::zero()) || !self.attacker_gain.is_finite() {
            return Err(Error::Config(format!(
                "attacker_gain must be finite and >= 0, got {}",
                self.attacker_gain
            )));
        }
        if self.nu_h.is_empty() {
            return Err(Error::Config("nu_h needs at least one component".into()));
        }
        Ok(())
    }

    /// Uniform output sample instants `0 = t_0 < ... < t_{nt-1} = T`.
    pub fn times(&self) -> Vec<T> {
        let dn = T::from_count(self.nt - 1);
        (0..self.nt)
            .map(|k| self.t_final * T::from_count(k) / dn)
            .collect()
    }

    pub fn m0_density(&self) -> Result<DensityField<T>> {
        gaussian_density(self.grid, self.m0.center, self.m0.variance)
    }

    pub fn mu0_density(&self) -> Result<DensityField<T>> {
        gaussian_density(self.grid, self.mu0.center, self.mu0.variance)
    }

    pub fn nu_h_density(&self) -> Result<DensityField<T>> {
        gaussian_mixture_density(self.grid, &self.nu_h)
    }

    fn drift_scale(&self) -> T {
        if self.drift_scaling {
            -T::one() / (T::from_f(2.0) * self.alpha)
        } else {
            -T::one()
        }
    }
}

/// Solved flows, survival trace and convergence history.
#[derive(Clone, Debug)]
pub struct MfgSolution<T> {
    pub times: Vec<T>,
    pub m_flow: Vec<DensityField<T>>,
    pub mu_flow: Vec<DensityField<T>>,
    pub w_flow: Vec<ScalarField<T>>,
    pub trace: SurvivalTrace<T>,
    /// Time-summed L1 change of the defender flow per outer iteration.
    pub residuals: Vec<T>,
    pub converged: bool,
    /// Objective value `1 - P(T)`.
    pub objective: T,
    /// Number of genuinely negative density cells that had to be clamped.
    pub clip_events: usize,
}

impl<T: Scalar> MfgSolution<T> {
    /// True when the residual history is nonincreasing from iteration
    /// `skip` (0-based) onward.
    pub fn residuals_monotone_after(&self, skip: usize) -> bool {
        self.residuals.windows(2).skip(skip).all(|w| w[1] <= w[0])
    }
}

/// Verdict of the two-sided density-bound check.
#[derive(Clone, Debug)]
pub struct BoundsReport<T> {
    /// Sup norm over the trajectory of the discrete Laplacian of the
    /// effective drift potential (`w/(2 alpha)` under drift scaling).
    pub k_drift: T,
    /// Same norm for the raw value function `w`.
    pub k_w: T,
    /// K actually used for the envelopes.
    pub k_used: T,
    pub min_m0: T,
    pub max_m0: T,
    pub slack: T,
    pub times: Vec<T>,
    pub min_m: Vec<T>,
    pub max_m: Vec<T>,
    pub lower_envelope: Vec<T>,
    pub upper_envelope: Vec<T>,
    /// Violating cell count per sample.
    pub violations: Vec<usize>,
    pub violation_count: usize,
    /// Largest of `m/upper` and `lower/m` over all cells and samples
    /// (> 1 means a violation).
    pub max_violation_ratio: T,
}

// ---------------------------------------------------------------------------
// density transport

enum VelocitySource<'a, T> {
    Analytic(&'a dyn Fn(T, T) -> (T, T)),
    PotentialLerp { w_lo: &'a [T], w_hi: &'a [T], t_lo: T, t_hi: T, scale: T },
}

impl<'a, T: Scalar> VelocitySource<'a, T> {
    fn velocities(
        &self,
        grid: &Grid<T>,
        bc: Boundary,
        t: T,
        buf: &mut Vec<T>,
    ) -> FaceVelocities<T> {
        match self {
            VelocitySource::Analytic(f) => FaceVelocities::from_field(grid, bc, f),
            VelocitySource::PotentialLerp { w_lo, w_hi, t_lo, t_hi, scale } => {
                let span = *t_hi - *t_lo;
                let s = if span > T::zero() { (t - *t_lo) / span } else { T::zero() };
                let s = s.max(T::zero()).min(T::one());
                buf.clear();
                buf.extend(w_lo.iter().zip(w_hi.iter()).map(|(&a, &b)| a + s * (b - a)));
                FaceVelocities::from_potential(buf, grid, bc, *scale)
            }
        }
    }
}

/// Advance a density from `t_lo` to `t_hi` with internal substepping.
/// Returns the number of genuine clip events.
fn advance_density<T: Scalar>(
    m: &mut Vec<T>,
    grid: &Grid<T>,
    bc: Boundary,
    eps: T,
    t_lo: T,
    t_hi: T,
    source: &VelocitySource<'_, T>,
    ws: &mut PdeWorkspace<T>,
) -> Result<usize> {
    let interval = t_hi - t_lo;
    let tiny = interval * T::from_f(1e-12);
    let cfl = T::from_f(0.45);
    let diff_cap = T::from_f(0.9) * (grid.dx * grid.dx).min(grid.dy * grid.dy) / eps;
    let half = T::from_f(0.5);
    let mut clips = 0usize;
    let mut lerp_buf: Vec<T> = Vec::new();
    let mut t = t_lo;
    while t_hi - t > tiny {
        let remaining = t_hi - t;
        let vel_probe = source.velocities(grid, bc, t, &mut lerp_buf);
        let (mx, my) = vel_probe.max_speeds();
        let speed_sum = mx / grid.dx + my / grid.dy;
        let mut dt = remaining.min(diff_cap);
        if speed_sum > T::zero() {
            dt = dt.min(cfl / speed_sum);
        }
        let vel = if dt == remaining {
            vel_probe
        } else {
            source.velocities(grid, bc, t + half * dt, &mut lerp_buf)
        };
        advect_upwind(m, &vel, grid, bc, dt, ws);
        adi_diffuse(m, grid, bc, eps, dt, ws);

        let maxv = m.iter().fold(T::zero(), |a, &v| a.max(v));
        let roundoff = -maxv * T::from_f(1e-14);
        for v in m.iter_mut() {
            if *v < T::zero() {
                if *v < roundoff {
                    clips += 1;
                }
                *v = T::zero();
            }
        }
        t += dt;
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diagnostic(format!(
            "density transport produced non-finite values in [{t_lo}, {t_hi}]"
        )));
    }
    Ok(clips)
}

fn density_sample<T: Scalar>(grid: Grid<T>, values: Vec<T>) -> Result<DensityField<T>> {
    let field = ScalarField::from_values(grid, values)?;
    let mass = field.integrate();
    if (mass - T::one()).abs() > T::from_f(1e-8) {
        return Err(Error::Diagnostic(format!(
            "density mass drifted to {mass}; conservation violated"
        )));
    }
    if field.min_value() < T::zero() {
        return Err(Error::Diagnostic("negative density after transport".into()));
    }
    DensityField::from_scalar(field)
}

/// Forward Fokker-Planck flow of the attacker population under the homing
/// drift `u_att(x) = gain (target - x)`, sampled at the output instants.
pub fn attacker_flow<T: Scalar>(config: &MfgConfig<T>) -> Result<Vec<DensityField<T>>> {
    config.validate()?;
    let grid = config.grid;
    let bc = config.boundary;
    let times = config.times();
    let mu0 = config.mu0_density()?;
    let gain = config.attacker_gain;
    let target = config.attacker_target;
    let drift = move |x: T, y: T| (gain * (target.0 - x), gain * (target.1 - y));
    let source = VelocitySource::Analytic(&drift);

    let mut ws = PdeWorkspace::default();
    let mut values = mu0.values().to_vec();
    let mut flow = Vec::with_capacity(config.nt);
    flow.push(mu0);
    for k in 0..config.nt - 1 {
        advance_density(
            &mut values,
            &grid,
            bc,
            config.epsilon,
            times[k],
            times[k + 1],
            &source,
            &mut ws,
        )?;
        flow.push(density_sample(grid, values.clone())?);
    }
    Ok(flow)
}

/// Forward Fokker-Planck flow of the defender population under the drift
/// derived from `w_flow`. Returns the sampled flow and the clip count.
pub fn fp_forward<T: Scalar>(
    w_flow: &[ScalarField<T>],
    m0: &DensityField<T>,
    config: &MfgConfig<T>,
) -> Result<(Vec<DensityField<T>>, usize)> {
    config.validate()?;
    if w_flow.len() != config.nt {
        return Err(Error::Input(format!(
            "w_flow has {} samples, expected {}",
            w_flow.len(),
            config.nt
        )));
    }
    let grid = config.grid;
    let bc = config.boundary;
    let times = config.times();
    let scale = config.drift_scale();

    let mut ws = PdeWorkspace::default();
    let mut values = m0.values().to_vec();
    let mut flow = Vec::with_capacity(config.nt);
    let mut clips = 0usize;
    flow.push(m0.clone());
    for k in 0..config.nt - 1 {
        let source = VelocitySource::PotentialLerp {
            w_lo: w_flow[k].values(),
            w_hi: w_flow[k + 1].values(),
            t_lo: times[k],
            t_hi: times[k + 1],
            scale,
        };
        clips += advance_density(
            &mut values,
            &grid,
            bc,
            config.epsilon,
            times[k],
            times[k + 1],
            &source,
            &mut ws,
        )?;
        flow.push(density_sample(grid, values.clone())?);
    }
    Ok((flow, clips))
}

// ---------------------------------------------------------------------------
// backward HJB sweep

/// SSP-RK2 step of `dw/ds = -H(w) + F(t(s))` over `h`, marching backward
/// in physical time from `t`.
#[allow(clippy::too_many_arguments)]
fn source_half_step<T: Scalar>(
    w: &mut Vec<T>,
    grid: &Grid<T>,
    bc: Boundary,
    alpha: T,
    h: T,
    t: T,
    f_at: &impl Fn(T, &mut Vec<T>),
    ham: &mut Vec<T>,
    stage: &mut Vec<T>,
    fbuf: &mut Vec<T>,
) {
    let half = T::from_f(0.5);
    // stage 1 at time t
    hamiltonian_quadratic(w, grid, bc, alpha, ham);
    f_at(t, fbuf);
    stage.clear();
    stage.extend(
        w.iter()
            .zip(ham.iter())
            .zip(fbuf.iter())
            .map(|((&wi, &hi), &fi)| wi + h * (fi - hi)),
    );
    // stage 2 at time t - h
    hamiltonian_quadratic(stage, grid, bc, alpha, ham);
    f_at(t - h, fbuf);
    for (((wi, &si), &hi), &fi) in
        w.iter_mut().zip(stage.iter()).zip(ham.iter()).zip(fbuf.iter())
    {
        *wi = half * *wi + half * (si + h * (fi - hi));
    }
}

/// Integrate the HJB equation backward from `w(T) = 0` given the coupling
/// field at the sample instants; returns `w` at those instants.
pub fn hjb_backward<T: Scalar>(
    f_flow: &[ScalarField<T>],
    config: &MfgConfig<T>,
) -> Result<Vec<ScalarField<T>>> {
    config.validate()?;
    if f_flow.len() != config.nt {
        return Err(Error::Input(format!(
            "f_flow has {} samples, expected {}",
            f_flow.len(),
            config.nt
        )));
    }
    let grid = config.grid;
    let bc = config.boundary;
    let alpha = config.alpha;
    let times = config.times();
    let diff_cap = T::from_f(0.9) * (grid.dx * grid.dx).min(grid.dy * grid.dy) / config.epsilon;
    let cfl = T::from_f(0.45);
    let two_alpha = T::from_f(2.0) * alpha;
    let half = T::from_f(0.5);

    let mut ws = PdeWorkspace::default();
    let mut ham: Vec<T> = Vec::new();
    let mut stage: Vec<T> = Vec::new();
    let mut fbuf: Vec<T> = Vec::new();

    let mut w_flow: Vec<ScalarField<T>> = vec![ScalarField::zeros(grid); config.nt];
    let mut w = vec![T::zero(); grid.n_cells()];

    for k in (0..config.nt - 1).rev() {
        let (t_lo, t_hi) = (times[k], times[k + 1]);
        let f_lo = f_flow[k].values();
        let f_hi = f_flow[k + 1].values();
        let span = t_hi - t_lo;
        let f_at = |t: T, out: &mut Vec<T>| {
            let s = ((t - t_lo) / span).max(T::zero()).min(T::one());
            out.clear();
            out.extend(f_lo.iter().zip(f_hi).map(|(&lo, &hi)| lo + s * (hi - lo)));
        };

        let tiny = span * T::from_f(1e-12);
        let mut t = t_hi;
        while t - t_lo > tiny {
            let remaining = t - t_lo;
            let (px, py) = hamiltonian_quadratic(&w, &grid, bc, alpha, &mut ham);
            let speed_sum = px / (two_alpha * grid.dx) + py / (two_alpha * grid.dy);
            let mut dt = remaining.min(diff_cap);
            if speed_sum > T::zero() {
                dt = dt.min(cfl / speed_sum);
            }
            // Strang: source half, full ADI diffusion, source half.
            source_half_step(
                &mut w, &grid, bc, alpha, half * dt, t, &f_at, &mut ham, &mut stage, &mut fbuf,
            );
            adi_diffuse(&mut w, &grid, bc, config.epsilon, dt, &mut ws);
            source_half_step(
                &mut w,
                &grid,
                bc,
                alpha,
                half * dt,
                t - half * dt,
                &f_at,
                &mut ham,
                &mut stage,
                &mut fbuf,
            );
            t -= dt;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diagnostic(format!(
                "HJB sweep produced non-finite values in [{t_lo}, {t_hi}]"
            )));
        }
        w_flow[k] = ScalarField::from_values(grid, w.clone())?;
    }
    Ok(w_flow)
}

// ---------------------------------------------------------------------------
// coupling

fn coupling_multiplier<T: Scalar>(config: &MfgConfig<T>, d_h_k: T, q_k: T, r_k: T) -> Result<T> {
    let deriv = config.att_params.rate_derivative(r_k.max(T::zero()))?;
    Ok(-(T::one() - config.alpha) * d_h_k * q_k * deriv)
}

fn scaled_field<T: Scalar>(phi: &ScalarField<T>, c: T) -> ScalarField<T> {
    let values = phi.values().iter().map(|&v| c * v).collect();
    ScalarField::from_values(*phi.grid(), values).expect("same grid")
}

/// Coupling field `F(t_k, .)` from the chain rule of the survival cost:
/// `-D(t_k) E(t_k) (d_att)'(r_k) phi_k`, where `r_k` is read from `history`
/// and `phi_k` is the first variation of the squared W2 distance.
pub fn coupling_field<T: Scalar>(
    k: usize,
    m_flow: &[DensityField<T>],
    mu_flow: &[DensityField<T>],
    nu_h: &DensityField<T>,
    config: &MfgConfig<T>,
    history: &SurvivalTrace<T>,
) -> Result<ScalarField<T>> {
    config.validate()?;
    if k >= m_flow.len() || k >= mu_flow.len() {
        return Err(Error::Input(format!("sample index {k} out of range")));
    }
    if history.w2_def_att.len() <= k || history.times.len() <= k {
        return Err(Error::Input(format!(
            "history covers {} samples, need at least {}",
            history.w2_def_att.len(),
            k + 1
        )));
    }
    let d_att: Vec<T> = history.w2_def_att[..=k]
        .iter()
        .map(|&r2| config.att_params.rate(r2.max(T::zero())))
        .collect::<Result<_>>()?;
    let q = survival_q(&d_att, &history.times[..=k])?;

    let mut scratch = W2Scratch::new();
    let w2_nu = w2_debiased_scratch(nu_h, &mu_flow[k], &config.sinkhorn, &mut scratch)?;
    if !w2_nu.converged {
        return Err(Error::Diagnostic("sinkhorn non-convergence in D(t) term".into()));
    }
    let d_h_k = config.hvu_params.rate(w2_nu.value)?;

    let est = w2_debiased_scratch(&mu_flow[k], &m_flow[k], &config.sinkhorn, &mut scratch)?;
    if !est.converged {
        return Err(Error::Diagnostic("sinkhorn non-convergence in coupling term".into()));
    }
    let mult = coupling_multiplier(config, d_h_k, q[k], history.w2_def_att[k])?;
    Ok(scaled_field(&est.potential, mult))
}

// ---------------------------------------------------------------------------
// Picard fixed point

fn cross_estimate<T: Scalar>(
    mu: &DensityField<T>,
    m: &DensityField<T>,
    params: &SinkhornParams<T>,
    scratch: &mut W2Scratch<T>,
    context: &str,
) -> Result<W2Estimate<T>> {
    let est = w2_debiased_scratch(mu, m, params, scratch)?;
    if est.converged {
        return Ok(est);
    }
    // One cold retry with the annealed schedule before giving up.
    *scratch = W2Scratch::new();
    let est = w2_debiased_scratch(mu, m, params, scratch)?;
    if est.converged {
        return Ok(est);
    }
    Err(Error::Diagnostic(format!(
        "sinkhorn failed to converge ({context}); marginal error {}",
        est.marginal_error
    )))
}

/// Solve the coupled system by damped forward-backward iteration.
pub fn picard_solve<T: Scalar>(config: &MfgConfig<T>) -> Result<MfgSolution<T>> {
    config.validate()?;
    let grid = config.grid;
    let nt = config.nt;
    let times = config.times();
    let theta = config.picard.theta;
    let area = grid.cell_area();

    let m0 = config.m0_density()?;
    let nu_h = config.nu_h_density()?;
    let mu_flow = attacker_flow(config)?;

    // W2^2(nu_H, mu(t)) depends only on the prescribed attacker flow.
    let mut w2_nu_mu = Vec::with_capacity(nt);
    {
        let mut scratch = W2Scratch::new();
        for (k, mu_k) in mu_flow.iter().enumerate() {
            let est = cross_estimate(
                &nu_h,
                mu_k,
                &config.sinkhorn,
                &mut scratch,
                &format!("nu_H vs mu at sample {k}"),
            )?;
            w2_nu_mu.push(est.value);
        }
    }
    let d_h: Vec<T> = w2_nu_mu
        .iter()
        .map(|&r2| config.hvu_params.rate(r2))
        .collect::<Result<_>>()?;

    // Initial defender flow: drift-free heat evolution of m0.
    let zero_w: Vec<ScalarField<T>> = vec![ScalarField::zeros(grid); nt];
    let (mut m_flow, mut clip_events) = fp_forward(&zero_w, &m0, config)?;

    let mut scratches: Vec<W2Scratch<T>> = vec![W2Scratch::new(); nt];
    let mut seeded = vec![false; nt];
    let mut r = vec![T::zero(); nt];
    let mut residuals: Vec<T> = Vec::new();
    let mut converged = false;
    let mut w_flow = zero_w;

    for outer in 0..config.picard.max_outer {
        // Distances and potentials along the lagged flow.
        let mut potentials: Vec<ScalarField<T>> = Vec::with_capacity(nt);
        for k in 0..nt {
            if !seeded[k] {
                if k > 0 {
                    scratches[k] = scratches[k - 1].clone();
                }
                seeded[k] = true;
            }
            let est = cross_estimate(
                &mu_flow[k],
                &m_flow[k],
                &config.sinkhorn,
                &mut scratches[k],
                &format!("mu vs m at sample {k}, outer {outer}"),
            )?;
            r[k] = est.value;
            potentials.push(est.potential);
        }
        let d_att: Vec<T> = r
            .iter()
            .map(|&r2| config.att_params.rate(r2))
            .collect::<Result<_>>()?;
        let q = survival_q(&d_att, &times)?;

        let mut f_flow = Vec::with_capacity(nt);
        for k in 0..nt {
            let mult = coupling_multiplier(config, d_h[k], q[k], r[k])?;
            f_flow.push(scaled_field(&potentials[k], mult));
        }

        w_flow = hjb_backward(&f_flow, config)?;
        let (m_new, clips) = fp_forward(&w_flow, &m0, config)?;
        clip_events += clips;

        // Damped update and its time-summed L1 magnitude.
        let mut residual = T::zero();
        let mut updated = Vec::with_capacity(nt);
        for (old, new) in m_flow.iter().zip(&m_new) {
            let mut change = T::zero();
            let values: Vec<T> = old
                .values()
                .iter()
                .zip(new.values())
                .map(|(&o, &n)| {
                    let delta = theta * (n - o);
                    change += delta.abs();
                    o + delta
                })
                .collect();
            residual += change * area;
            updated.push(density_sample(grid, values)?);
        }
        m_flow = updated;
        residuals.push(residual);
        if residual <= config.picard.residual_tol {
            converged = true;
            break;
        }
    }

    // Final survival trace along the converged flow.
    for k in 0..nt {
        let est = cross_estimate(
            &mu_flow[k],
            &m_flow[k],
            &config.sinkhorn,
            &mut scratches[k],
            &format!("final trace at sample {k}"),
        )?;
        r[k] = est.value;
    }
    let trace = SurvivalTrace::from_distances(
        times.clone(),
        r.clone(),
        w2_nu_mu,
        &config.att_params,
        &config.hvu_params,
    )?;
    let objective = T::one() - *trace.p.last().expect("nt >= 2");

    Ok(MfgSolution {
        times,
        m_flow,
        mu_flow,
        w_flow,
        trace,
        residuals,
        converged,
        objective,
        clip_events,
    })
}

// ---------------------------------------------------------------------------
// Theorem-style density bounds

/// Check the two-sided envelopes `e^{-Kt} min m0 <= m <= e^{Kt} max m0`
/// with multiplicative slack, computing K from the solved value function.
pub fn verify_bounds<T: Scalar>(
    solution: &MfgSolution<T>,
    config: &MfgConfig<T>,
) -> Result<BoundsReport<T>> {
    verify_bounds_with_k(solution, config, None)
}

/// `verify_bounds` with an explicit K override (detector tests shrink it).
pub fn verify_bounds_with_k<T: Scalar>(
    solution: &MfgSolution<T>,
    config: &MfgConfig<T>,
    k_override: Option<T>,
) -> Result<BoundsReport<T>> {
    if solution.m_flow.len() != solution.times.len()
        || solution.w_flow.len() != solution.times.len()
    {
        return Err(Error::Input("solution flows and times disagree in length".into()));
    }
    let bc = config.boundary;
    let mut k_w = T::zero();
    for w in &solution.w_flow {
        let lap = w.laplacian(bc);
        let linf = lap.values().iter().fold(T::zero(), |a, &v| a.max(v.abs()));
        k_w = k_w.max(linf);
    }
    let scale = if config.drift_scaling {
        T::one() / (T::from_f(2.0) * config.alpha)
    } else {
        T::one()
    };
    let k_drift = k_w * scale;
    let k_used = k_override.unwrap_or(k_drift);

    let m0 = &solution.m_flow[0];
    let min_m0 = m0.min_value();
    let max_m0 = m0.max_value();
    let slack = T::from_f(1.05);

    let nt = solution.times.len();
    let mut min_m = Vec::with_capacity(nt);
    let mut max_m = Vec::with_capacity(nt);
    let mut lower_envelope = Vec::with_capacity(nt);
    let mut upper_envelope = Vec::with_capacity(nt);
    let mut violations = Vec::with_capacity(nt);
    let mut violation_count = 0usize;
    let mut max_ratio = T::zero();

    for (k, m) in solution.m_flow.iter().enumerate() {
        let t = solution.times[k];
        let lower = min_m0 * (-k_used * t).exp() / slack;
        let upper = max_m0 * (k_used * t).exp() * slack;
        let mut count = 0usize;
        for &v in m.values() {
            let ratio_hi = v / upper;
            let ratio_lo = if v > T::zero() {
                lower / v
            } else if lower > T::zero() {
                T::infinity()
            } else {
                T::zero()
            };
            let ratio = ratio_hi.max(ratio_lo);
            max_ratio = max_ratio.max(ratio);
            if ratio > T::one() {
                count += 1;
            }
        }
        violation_count += count;
        violations.push(count);
        min_m.push(m.min_value());
        max_m.push(m.max_value());
        lower_envelope.push(lower);
        upper_envelope.push(upper);
    }

    Ok(BoundsReport {
        k_drift,
        k_w,
        k_used,
        min_m0,
        max_m0,
        slack,
        times: solution.times.clone(),
        min_m,
        max_m,
        lower_envelope,
        upper_envelope,
        violations,
        violation_count,
        max_violation_ratio: max_ratio,
    })
}
