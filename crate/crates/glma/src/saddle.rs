//! The six-parameter replica-symmetric saddle: energy evaluation, damped
//! fixed-point solver for the stationary equations, replicon stability,
//! norm-shell landscapes and the spectral-method system.
//!
//! Conventions: the Moreau expectation terms enter the energy with positive
//! sign; the fixed-point sweep updates the conjugate triple `(ν, κ, η)` from
//! the output-side integrals, then reads `(q, m, τ)` from the input side.
//! When a shell bound is active, `η` plays the role of the shell multiplier
//! and is recovered from the norm equation instead of the `∂q` relation.

use crate::expect::{overlap_gap_sd, ChannelSpec, ExpectError, Quadrature, TeacherPrior};
use crate::prox::{
    self, denoiser_f_deriv, LossSpec, PreprocessSpec, ProxCfg, ProxError, RegKind, RegSpec,
    FD_STEP,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("no restart converged within {restarts} attempts")]
    NoConvergence { restarts: usize },
    #[error("degenerate conjugate branch (kappa = 0), no data side")]
    Degenerate,
    #[error("updated parameters left the feasible set: {0}")]
    Feasibility(String),
    #[error("grid too coarse: derivative minimum not interior")]
    GridTooCoarse,
    #[error("spectral proximal ill-posed: 1 + 2 tau T(y) <= 0 encountered")]
    ProxIllPosed,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Prox(#[from] ProxError),
    #[error(transparent)]
    Quadrature(#[from] ExpectError),
}

/// The six replica-symmetric scalars.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OrderParameters {
    /// Teacher overlap `⟨ŵ, w̃⟩/d`.
    pub m: f64,
    /// Self overlap `‖ŵ‖²/d`.
    pub q: f64,
    pub tau: f64,
    pub kappa: f64,
    pub nu: f64,
    pub eta: f64,
}

impl OrderParameters {
    pub fn as_array(&self) -> [f64; 6] {
        [self.m, self.q, self.tau, self.kappa, self.nu, self.eta]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        OrderParameters {
            m: a[0],
            q: a[1],
            tau: a[2],
            kappa: a[3],
            nu: a[4],
            eta: a[5],
        }
    }

    pub fn max_abs_diff(&self, other: &OrderParameters) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Norm shell `a <= ‖w‖²/d <= b`; `b` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Shell {
    pub a: f64,
    pub b: f64,
}

impl Shell {
    pub fn free() -> Self {
        Shell {
            a: 0.0,
            b: f64::INFINITY,
        }
    }

    pub fn pinned(q: f64) -> Self {
        Shell { a: q, b: q }
    }
}

/// Full problem instance.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    /// Sample complexity `n/d`.
    pub alpha: f64,
    /// Teacher second moment.
    pub rho: f64,
    pub shell: Shell,
    pub loss: LossSpec,
    pub reg: RegSpec,
    pub channel: ChannelSpec,
    pub prior: TeacherPrior,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.alpha > 0.0) {
            return Err(SolveError::InvalidModel("alpha must be > 0".into()));
        }
        if !(self.rho > 0.0) {
            return Err(SolveError::InvalidModel("rho must be > 0".into()));
        }
        if !(self.shell.a >= 0.0 && self.shell.a <= self.shell.b) {
            return Err(SolveError::InvalidModel(
                "shell must satisfy 0 <= a <= b".into(),
            ));
        }
        if (self.prior.second_moment() - self.rho).abs() > 1e-12 * (1.0 + self.rho) {
            return Err(SolveError::InvalidModel(
                "prior second moment must equal rho".into(),
            ));
        }
        if self.shell.b.is_infinite() && self.reg.quadratic_growth.is_none() {
            return Err(SolveError::InvalidModel(
                "unbounded shell requires quadratic growth of the regularizer".into(),
            ));
        }
        self.channel.validate()?;
        Ok(())
    }
}

/// Output of [`solve`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SaddleSolution {
    pub params: OrderParameters,
    pub energy: f64,
    /// Loss-plus-regularizer value at the proximal points; equals `energy` at
    /// a stationary point.
    pub simplified_energy: f64,
    /// Absolute residuals of the six stationary relations; the `∂q` entry is
    /// zero when a shell bound is active.
    pub residuals: [f64; 6],
    pub replicon_lhs: f64,
    pub stable: bool,
    pub iterations: u64,
    pub converged: bool,
    pub shell_active: bool,
    /// Number of times the square-root clamp on `q − m²/ρ` fired.
    pub clamp_count: u64,
}

/// Solver settings for the damped fixed-point iteration.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SolveCfg {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: u64,
    pub restarts: usize,
    pub seed: u64,
    /// Optional warm start used as the first restart.
    #[serde(skip)]
    pub init: Option<OrderParameters>,
}

impl Default for SolveCfg {
    fn default() -> Self {
        SolveCfg {
            damping: 0.7,
            tol: 1e-5,
            max_iter: 5000,
            restarts: 8,
            seed: 0,
            init: None,
        }
    }
}

/// Output-side integrals shared by the stationary equations and the energy.
pub(crate) struct OutputIntegrals {
    /// `E[(s/√ρ − (m/ρ)h/sd)·P(ω)]`
    pub(crate) i_nu: f64,
    /// `E[(ω − P(ω))²]`
    pub(crate) i_res_sq: f64,
    /// `E[h·P(ω)]`
    pub(crate) i_q: f64,
    /// `E[M_{Vℒ(y,·)}(ω)]`
    pub(crate) moreau: f64,
    /// `E[ℒ(y, P(ω))]`
    pub(crate) loss_at_prox: f64,
    pub(crate) sd: f64,
    pub(crate) sd_clamped: bool,
}

pub(crate) fn output_sweep(
    model: &ModelSpec,
    params: &OrderParameters,
    quad: &Quadrature,
) -> Result<OutputIntegrals, SolveError> {
    let v = params.tau / params.kappa;
    let v0 = model.loss.weak_convexity_modulus;
    if !(v > 0.0) || !(v < v0) {
        return Err(SolveError::Prox(ProxError::ModulusViolation { v, v0 }));
    }
    let (sd, sd_clamped) = overlap_gap_sd(params.m, params.q, model.rho);
    let sr = model.rho.sqrt();
    let m_over_rho = params.m / model.rho;
    let rule = quad.hermite().clone();
    let mut i_nu = 0.0;
    let mut i_res_sq = 0.0;
    let mut i_q = 0.0;
    let mut moreau = 0.0;
    let mut loss_at_prox = 0.0;
    let mut err: Option<ProxError> = None;
    quad.for_each_sy(&model.channel, model.rho, |s, y, w| {
        if err.is_some() {
            return;
        }
        let mean = m_over_rho * sr * s;
        let pref_s = s / sr;
        let mut warm = mean;
        for (h, wh) in rule.nodes.iter().zip(&rule.weights) {
            let omega = mean + sd * h;
            let z = match prox::loss_prox_warm(&model.loss, v, y, omega, warm) {
                Ok(z) => z,
                Err(e) => {
                    err = Some(e);
                    return;
                }
            };
            warm = z;
            let weight = w * wh;
            let resid = omega - z;
            i_nu += weight * (pref_s - m_over_rho * h / sd) * z;
            i_res_sq += weight * resid * resid;
            i_q += weight * h * z;
            moreau += weight * (v * model.loss.eval(y, z) + 0.5 * resid * resid);
            loss_at_prox += weight * model.loss.eval(y, z);
        }
    });
    if let Some(e) = err {
        return Err(SolveError::Prox(e));
    }
    Ok(OutputIntegrals {
        i_nu,
        i_res_sq,
        i_q,
        moreau,
        loss_at_prox,
        sd,
        sd_clamped,
    })
}

/// Input-side integrals; closed forms for the quadratic regularizer.
pub(crate) struct InputIntegrals {
    pub(crate) q: f64,
    pub(crate) m: f64,
    pub(crate) tau: f64,
    /// `E[η·M_{(1/η)R}((νw̃+κg)/η)]`
    pub(crate) moreau: f64,
    /// `E[R(P)]`
    pub(crate) reg_at_prox: f64,
}

pub(crate) fn input_sweep(
    model: &ModelSpec,
    nu: f64,
    kappa: f64,
    eta: f64,
) -> Result<InputIntegrals, SolveError> {
    let rho = model.rho;
    match model.reg.kind {
        RegKind::L2 { lambda } => {
            let denom = eta + lambda;
            if !(denom > 0.0) {
                return Err(SolveError::Prox(ProxError::ModulusViolation {
                    v: 1.0 / eta,
                    v0: model.reg.weak_convexity_modulus,
                }));
            }
            let s2 = nu * nu * rho + kappa * kappa;
            let q = s2 / (denom * denom);
            Ok(InputIntegrals {
                q,
                m: nu * rho / denom,
                tau: kappa / denom,
                moreau: lambda * s2 / (2.0 * eta * denom),
                reg_at_prox: lambda * q / 2.0,
            })
        }
    }
}

/// Solves the norm equation `E[P_{(1/η)R}((νw̃+κg)/η)²] = q` for `η` when a
/// shell bound is active.
fn eta_for_pinned_q(model: &ModelSpec, nu: f64, kappa: f64, q: f64) -> Result<f64, SolveError> {
    match model.reg.kind {
        RegKind::L2 { lambda } => {
            if !(q > 0.0) {
                return Err(SolveError::Feasibility("pinned q must be positive".into()));
            }
            let s2 = nu * nu * model.rho + kappa * kappa;
            Ok((s2 / q).sqrt() - lambda)
        }
    }
}

/// Low-dimensional energy at the given parameters (positive Moreau sign).
pub fn energy(
    params: &OrderParameters,
    model: &ModelSpec,
    quad: &Quadrature,
) -> Result<f64, SolveError> {
    let out = output_sweep(model, params, quad)?;
    let inp = input_sweep(model, params.nu, params.kappa, params.eta)?;
    let v = params.tau / params.kappa;
    let s2 = params.nu * params.nu * model.rho + params.kappa * params.kappa;
    Ok(params.kappa * params.tau / 2.0 - s2 / (2.0 * params.eta) + params.nu * params.m
        - params.eta * params.q / 2.0
        + model.alpha * out.moreau / v
        + inp.moreau)
}

/// Loss-plus-regularizer value evaluated at the proximal points.
pub fn simplified_energy(
    params: &OrderParameters,
    model: &ModelSpec,
    quad: &Quadrature,
) -> Result<f64, SolveError> {
    let out = output_sweep(model, params, quad)?;
    let inp = input_sweep(model, params.nu, params.kappa, params.eta)?;
    Ok(model.alpha * out.loss_at_prox + inp.reg_at_prox)
}

#[derive(Debug, Clone, Copy)]
pub struct UpdateFlags {
    pub shell_active: bool,
    pub sd_clamped: bool,
    pub feasibility_clamped: bool,
}

/// One synchronous sweep of the six stationary relations: the conjugate
/// variables from the output side, then `(q, m, τ)` from the input side with
/// the shell constraint enforced on `q`.
pub fn stationary_update(
    params: &OrderParameters,
    model: &ModelSpec,
    quad: &Quadrature,
) -> Result<OrderParameters, SolveError> {
    stationary_update_flagged(params, model, quad).map(|r| r.0)
}

pub fn stationary_update_flagged(
    params: &OrderParameters,
    model: &ModelSpec,
    quad: &Quadrature,
) -> Result<(OrderParameters, UpdateFlags), SolveError> {
    let out = output_sweep(model, params, quad)?;
    let kt = params.kappa / params.tau;
    let nu_new = model.alpha * kt * out.i_nu;
    let kappa_new = kt * (model.alpha * out.i_res_sq).sqrt();
    if !(kappa_new > 0.0) || !kappa_new.is_finite() {
        return Err(SolveError::Degenerate);
    }
    let eta_unc = model.alpha * kt * (1.0 - out.i_q / out.sd);

    let eta_floor = reg_eta_floor(&model.reg);
    let mut shell_active = false;
    let mut eta_new;
    let mut q_new;
    if eta_unc > eta_floor {
        eta_new = eta_unc;
        let inp = input_sweep(model, nu_new, kappa_new, eta_new)?;
        q_new = inp.q;
        if q_new < model.shell.a || q_new > model.shell.b {
            shell_active = true;
            q_new = q_new.clamp(model.shell.a, model.shell.b);
        }
    } else {
        // weak norm penalty pushes q toward the upper bound
        shell_active = true;
        if model.shell.b.is_finite() {
            q_new = model.shell.b;
        } else {
            return Err(SolveError::Feasibility(
                "eta update left the positive cone with an unbounded shell".into(),
            ));
        }
        eta_new = eta_floor;
    }
    if shell_active {
        if q_new <= 0.0 {
            q_new = 1e-12;
        }
        eta_new = eta_for_pinned_q(model, nu_new, kappa_new, q_new)?.max(eta_floor);
    }
    let inp = input_sweep(model, nu_new, kappa_new, eta_new)?;
    let m_new = inp.m;
    let tau_new = inp.tau;
    let q_final = if shell_active { q_new } else { inp.q };

    let mut feasibility_clamped = false;
    let mut q_checked = q_final;
    if q_checked < m_new * m_new / model.rho - 1e-10 {
        q_checked = m_new * m_new / model.rho;
        feasibility_clamped = true;
    }
    Ok((
        OrderParameters {
            m: m_new,
            q: q_checked,
            tau: tau_new,
            kappa: kappa_new,
            nu: nu_new,
            eta: eta_new,
        },
        UpdateFlags {
            shell_active,
            sd_clamped: out.sd_clamped,
            feasibility_clamped,
        },
    ))
}

/// Smallest admissible `η` for the regularizer's proximal (`1/η < V_R`).
fn reg_eta_floor(reg: &RegSpec) -> f64 {
    let v0 = reg.weak_convexity_modulus;
    let floor = if v0.is_infinite() { 0.0 } else { 1.0 / v0 };
    floor + 1e-10
}

/// Estimation error and overlaps implied by the order parameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Observables {
    pub error: f64,
    pub m: f64,
    pub q: f64,
}

pub fn observables(params: &OrderParameters, rho: f64) -> Observables {
    Observables {
        error: rho - 2.0 * params.m + params.q,
        m: params.m,
        q: params.q,
    }
}

/// Replicon stability report.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct RepliconReport {
    pub lhs: f64,
    pub stable: bool,
}

/// Evaluates `α·E[(∂f*)²]·E[(∂g*)²]`, derivatives by central finite
/// differences of the proximal selections.
pub fn replicon(
    params: &OrderParameters,
    model: &ModelSpec,
    quad: &Quadrature,
) -> Result<RepliconReport, SolveError> {
    let v = params.tau / params.kappa;
    let v0 = model.loss.weak_convexity_modulus;
    if !(v > 0.0 && v < v0) {
        return Err(SolveError::Prox(ProxError::ModulusViolation { v, v0 }));
    }
    let e_f_sq = match model.reg.kind {
        RegKind::L2 { lambda } => {
            let d = params.eta / (params.eta + lambda);
            d * d
        }
    };
    let (sd, _) = overlap_gap_sd(params.m, params.q, model.rho);
    let sr = model.rho.sqrt();
    let m_over_rho = params.m / model.rho;
    let rule = quad.hermite().clone();
    let mut e_g_sq = 0.0;
    let mut err: Option<ProxError> = None;
    quad.for_each_sy(&model.channel, model.rho, |s, y, w| {
        if err.is_some() {
            return;
        }
        let mean = m_over_rho * sr * s;
        let mut warm = mean;
        for (h, wh) in rule.nodes.iter().zip(&rule.weights) {
            let omega = mean + sd * h;
            let zp = prox::loss_prox_warm(&model.loss, v, y, omega + FD_STEP, warm);
            let zm = prox::loss_prox_warm(&model.loss, v, y, omega - FD_STEP, warm);
            match (zp, zm) {
                (Ok(zp), Ok(zm)) => {
                    warm = 0.5 * (zp + zm);
                    let gp = (zp - (omega + FD_STEP)) / v;
                    let gm = (zm - (omega - FD_STEP)) / v;
                    let dg = (gp - gm) / (2.0 * FD_STEP);
                    e_g_sq += w * wh * dg * dg;
                }
                (Err(e), _) | (_, Err(e)) => {
                    err = Some(e);
                    return;
                }
            }
        }
    });
    if let Some(e) = err {
        return Err(SolveError::Prox(e));
    }
    let lhs = model.alpha * e_f_sq * e_g_sq;
    Ok(RepliconReport {
        lhs,
        stable: lhs < 1.0 - 1e-8,
    })
}

/// Replicon input-side factor `E[(∂f*)²]` by finite differences; cross-checks
/// the closed form used in [`replicon`].
pub fn replicon_input_fd(params: &OrderParameters, model: &ModelSpec, quad: &Quadrature) -> f64 {
    let cfg = ProxCfg::default();
    quad.expect_wg(&model.prior, |wt, g| {
        let x = (params.nu * wt + params.kappa * g) / params.eta;
        denoiser_f_deriv(x, params.eta, &model.reg, &cfg)
            .map(|d| d * d)
            .unwrap_or(f64::NAN)
    })
}

fn sanitize(params: &mut OrderParameters, model: &ModelSpec, clamps: &mut u64) {
    if !(params.kappa > 1e-10) {
        params.kappa = 1e-10;
        *clamps += 1;
    }
    if !(params.tau > 1e-10) {
        params.tau = 1e-10;
        *clamps += 1;
    }
    let v0 = model.loss.weak_convexity_modulus;
    if v0.is_finite() && params.tau / params.kappa >= 0.999 * v0 {
        params.tau = 0.995 * v0 * params.kappa;
        *clamps += 1;
    }
    let floor = reg_eta_floor(&model.reg);
    if !(params.eta > floor) {
        params.eta = floor + 1e-6;
        *clamps += 1;
    }
    if model.shell.a > 0.0 || model.shell.b.is_finite() {
        params.q = params.q.clamp(model.shell.a.max(1e-12), model.shell.b);
    }
    if params.q < params.m * params.m / model.rho {
        params.q = params.m * params.m / model.rho + 1e-12;
        *clamps += 1;
    }
}

fn default_init(model: &ModelSpec) -> OrderParameters {
    let q0 = model.rho.clamp(model.shell.a.max(1e-3), model.shell.b.min(1e2));
    let v0 = model.loss.weak_convexity_modulus;
    let kappa = 1.0;
    let tau = if v0.is_finite() { 0.45 * v0 } else { 0.5 };
    OrderParameters {
        m: 0.5 * (model.rho * q0).sqrt(),
        q: q0,
        tau,
        kappa,
        nu: 0.5,
        eta: reg_eta_floor(&model.reg) + 1.0,
    }
}

fn random_init<R: Rng>(model: &ModelSpec, rng: &mut R) -> OrderParameters {
    let log_uniform = |lo: f64, hi: f64, rng: &mut R| -> f64 {
        let u: f64 = rng.gen();
        (lo.ln() + u * (hi.ln() - lo.ln())).exp()
    };
    let q = log_uniform(model.shell.a.max(1e-3), model.shell.b.min(1e2), rng);
    let m_bound = (model.rho * q).sqrt();
    let m = rng.gen_range(-m_bound..m_bound);
    let kappa = log_uniform(1e-2, 1e2, rng);
    let eta = log_uniform(1e-2, 1e2, rng).max(reg_eta_floor(&model.reg) * 1.01 + 1e-6);
    let v0 = model.loss.weak_convexity_modulus;
    let v_max = if v0.is_finite() { 0.9 * v0 } else { 5.0 };
    let v = rng.gen_range(0.05 * v_max..0.95 * v_max);
    OrderParameters {
        m,
        q,
        tau: v * kappa,
        kappa,
        nu: rng.gen_range(-2.0..2.0),
        eta,
    }
}

fn iterate_from(
    init: OrderParameters,
    model: &ModelSpec,
    cfg: &SolveCfg,
    quad: &Quadrature,
) -> Result<(OrderParameters, u64, u64, bool), SolveError> {
    let mut x = init;
    let mut clamps = 0u64;
    sanitize(&mut x, model, &mut clamps);
    let mut shell_active;
    for it in 1..=cfg.max_iter {
        let (update, flags) = stationary_update_flagged(&x, model, quad)?;
        if flags.sd_clamped {
            clamps += 1;
        }
        shell_active = flags.shell_active;
        let mixed: Vec<f64> = x
            .as_array()
            .iter()
            .zip(update.as_array().iter())
            .map(|(old, new)| cfg.damping * new + (1.0 - cfg.damping) * old)
            .collect();
        let mut next = OrderParameters::from_array(mixed.try_into().unwrap());
        sanitize(&mut next, model, &mut clamps);
        let delta = next.max_abs_diff(&x);
        x = next;
        if delta < cfg.tol {
            return Ok((x, it, clamps, shell_active));
        }
        if !x.as_array().iter().all(|v| v.is_finite()) {
            return Err(SolveError::Feasibility("iterate diverged".into()));
        }
    }
    Err(SolveError::NoConvergence { restarts: 1 })
}

fn residuals_at(
    params: &OrderParameters,
    model: &ModelSpec,
    quad: &Quadrature,
    shell_active: bool,
) -> Result<[f64; 6], SolveError> {
    let out = output_sweep(model, params, quad)?;
    let inp = input_sweep(model, params.nu, params.kappa, params.eta)?;
    let kt = params.kappa / params.tau;
    let r_eta = (params.q - inp.q).abs();
    let r_nu = (params.m - inp.m).abs();
    let r_kappa = (params.tau - inp.tau).abs();
    let r_m = (params.nu - model.alpha * kt * out.i_nu).abs();
    let r_tau = (params.tau - (model.alpha * out.i_res_sq).sqrt()).abs();
    let r_q = if shell_active {
        0.0
    } else {
        (params.eta - model.alpha * kt * (1.0 - out.i_q / out.sd)).abs()
    };
    Ok([r_eta, r_nu, r_kappa, r_m, r_tau, r_q])
}

fn assess(
    params: OrderParameters,
    model: &ModelSpec,
    quad: &Quadrature,
    iterations: u64,
    clamps: u64,
    shell_active: bool,
) -> Result<SaddleSolution, SolveError> {
    let residuals = residuals_at(&params, model, quad, shell_active)?;
    let energy_val = energy(&params, model, quad)?;
    let simplified = simplified_energy(&params, model, quad)?;
    let rep = replicon(&params, model, quad)?;
    Ok(SaddleSolution {
        params,
        energy: energy_val,
        simplified_energy: simplified,
        residuals,
        replicon_lhs: rep.lhs,
        stable: rep.stable,
        iterations,
        converged: true,
        shell_active,
        clamp_count: clamps,
    })
}

/// Damped multi-restart fixed-point solve. Among converged fixed points the
/// replicon-stable one with minimal energy is returned; if none is stable the
/// minimal-energy point is returned with `stable = false`.
pub fn solve(
    model: &ModelSpec,
    cfg: &SolveCfg,
    quad: &Quadrature,
) -> Result<SaddleSolution, SolveError> {
    model.validate()?;
    let mut candidates: Vec<SaddleSolution> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.restarts.max(1);
    for restart in 0..total {
        let init = if restart == 0 {
            cfg.init.unwrap_or_else(|| default_init(model))
        } else if restart == 1 && cfg.init.is_some() {
            default_init(model)
        } else {
            random_init(model, &mut rng)
        };
        let run = iterate_from(init, model, cfg, quad);
        let (params, iterations, clamps, shell_active) = match run {
            Ok(r) => r,
            Err(_) => continue,
        };
        let is_new = candidates
            .iter()
            .all(|c| c.params.max_abs_diff(&params) > 100.0 * cfg.tol);
        if !is_new {
            continue;
        }
        if let Ok(solution) = assess(params, model, quad, iterations, clamps, shell_active) {
            let early = restart == 0
                && solution.stable
                && model.loss.weak_convexity_modulus.is_infinite()
                && model.reg.weak_convexity_modulus.is_infinite();
            candidates.push(solution);
            // convex losses have a unique stable branch; skip extra restarts
            if early {
                break;
            }
        }
    }
    if candidates.is_empty() {
        return Err(SolveError::NoConvergence { restarts: total });
    }
    let pick_min_energy = |cands: Vec<&SaddleSolution>| -> SaddleSolution {
        cands
            .into_iter()
            .min_by(|a, b| {
                a.energy
                    .partial_cmp(&b.energy)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .cloned()
            .unwrap()
    };
    let stable: Vec<&SaddleSolution> = candidates.iter().filter(|c| c.stable).collect();
    if !stable.is_empty() {
        Ok(pick_min_energy(stable))
    } else {
        Ok(pick_min_energy(candidates.iter().collect()))
    }
}

/// One row of a norm-shell landscape.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LandscapeRow {
    pub q: f64,
    /// Shell-constrained loss value `h(q)`.
    pub h: f64,
    /// `h(q) + λq/2`
    pub total: f64,
    pub stable: bool,
    pub converged: bool,
}

/// Shell-sliced training landscape: for each `q` the regularizer-free problem
/// is solved on the shell `a = b = q` and the quadratic penalty added
/// afterwards. Per-point failures are recorded in the row, not fatal.
pub fn landscape(
    model: &ModelSpec,
    lambda: f64,
    q_grid: &[f64],
    cfg: &SolveCfg,
    quad: &Quadrature,
) -> Vec<LandscapeRow> {
    let mut rows = Vec::with_capacity(q_grid.len());
    let mut warm: Option<OrderParameters> = None;
    for &q in q_grid {
        let shell_model = ModelSpec {
            shell: Shell::pinned(q),
            reg: RegSpec::zero(),
            ..model.clone()
        };
        let mut local = *cfg;
        local.init = warm.map(|mut p| {
            p.q = q;
            p
        });
        match solve(&shell_model, &local, quad) {
            Ok(sol) => {
                warm = Some(sol.params);
                rows.push(LandscapeRow {
                    q,
                    h: sol.simplified_energy,
                    total: sol.simplified_energy + lambda * q / 2.0,
                    stable: sol.stable,
                    converged: true,
                });
            }
            Err(_) => {
                rows.push(LandscapeRow {
                    q,
                    h: f64::NAN,
                    total: f64::NAN,
                    stable: false,
                    converged: false,
                });
            }
        }
    }
    rows
}

/// Result of [`critical_lambda`].
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CriticalLambda {
    pub lambda_c: f64,
    pub bracket: (f64, f64),
    pub q_at_min: f64,
}

/// Settings for the critical regularization search.
#[derive(Debug, Clone, Copy)]
pub struct CriticalLambdaCfg {
    pub q_min: f64,
    pub q_max: f64,
    pub grid_points: usize,
    /// Target width of the bracket on `λ_c`.
    pub bracket_width: f64,
}

impl Default for CriticalLambdaCfg {
    fn default() -> Self {
        CriticalLambdaCfg {
            q_min: 1e-2,
            q_max: 1e3,
            grid_points: 200,
            bracket_width: 1e-3,
        }
    }
}

/// Critical negative regularization `λ_c = 2·min_q ∂h(q)`: below it the
/// penalized landscape has no finite-norm stationary point.
pub fn critical_lambda(
    model: &ModelSpec,
    ccfg: &CriticalLambdaCfg,
    cfg: &SolveCfg,
    quad: &Quadrature,
) -> Result<CriticalLambda, SolveError> {
    let n = ccfg.grid_points.max(8);
    let grid: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            (ccfg.q_min.ln() + t * (ccfg.q_max.ln() - ccfg.q_min.ln())).exp()
        })
        .collect();
    let rows = landscape(model, 0.0, &grid, cfg, quad);
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    if h.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::Feasibility(
            "landscape solve failed on the derivative grid".into(),
        ));
    }
    let mut best_i = 0usize;
    let mut best_dh = f64::INFINITY;
    for i in 1..n - 1 {
        let dh = (h[i + 1] - h[i - 1]) / (grid[i + 1] - grid[i - 1]);
        if dh < best_dh {
            best_dh = dh;
            best_i = i;
        }
    }
    if best_i <= 1 || best_i >= n - 2 {
        return Err(SolveError::GridTooCoarse);
    }

    let mut warm = SolveCfg { init: None, ..*cfg };
    let h_at = |q: f64, warm: &mut SolveCfg| -> Result<f64, SolveError> {
        let shell_model = ModelSpec {
            shell: Shell::pinned(q),
            reg: RegSpec::zero(),
            ..model.clone()
        };
        let sol = solve(&shell_model, warm, quad)?;
        warm.init = Some(sol.params);
        Ok(sol.simplified_energy)
    };
    let dh_at = |q: f64, warm: &mut SolveCfg| -> Result<f64, SolveError> {
        let dq = 1e-3 * q;
        Ok((h_at(q + dq, warm)? - h_at(q - dq, warm)?) / (2.0 * dq))
    };
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut a = grid[best_i - 1];
    let mut b = grid[best_i + 1];
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = dh_at(c, &mut warm)?;
    let mut fd = dh_at(d, &mut warm)?;
    for _ in 0..60 {
        if 2.0 * (fc - fd).abs() < ccfg.bracket_width && (b - a) < 0.05 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = dh_at(c, &mut warm)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = dh_at(d, &mut warm)?;
        }
    }
    let (q_star, dh_star) = if fc < fd { (c, fc) } else { (d, fd) };
    Ok(CriticalLambda {
        lambda_c: 2.0 * dh_star,
        bracket: (
            2.0 * dh_star - ccfg.bracket_width / 2.0,
            2.0 * dh_star + ccfg.bracket_width / 2.0,
        ),
        q_at_min: q_star,
    })
}

/// Converged state of the spectral-method fixed point.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SpectralSolution {
    pub m: f64,
    pub tau: f64,
    pub a_val: f64,
    pub b_val: f64,
    pub converged: bool,
    pub iterations: u64,
}

/// Settings for [`spectral_solve`].
#[derive(Debug, Clone, Copy)]
pub struct SpectralCfg {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: u64,
}

impl Default for SpectralCfg {
    fn default() -> Self {
        SpectralCfg {
            damping: 0.5,
            tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

/// Fixed point of the spectral-method system at `ρ = 1` on the unit shell:
/// `m = a/√(αa² + b)`, `τ = 1/(α√(αa² + b))` with `a = E[u·P]`,
/// `b = E[(u−P)²]/τ²`, `u = s − mh/√(1−m²)` and `P` the proximal of
/// `τ·T(y)·z²` at `u`.
pub fn spectral_solve(
    channel: &ChannelSpec,
    t: &PreprocessSpec,
    alpha: f64,
    cfg: &SpectralCfg,
    quad: &Quadrature,
) -> Result<SpectralSolution, SolveError> {
    if !(alpha > 0.0) {
        return Err(SolveError::InvalidModel("alpha must be > 0".into()));
    }
    let t_min = t.lower_bound();
    let tau_max = if t_min < 0.0 {
        1.0 / (2.0 * t_min.abs())
    } else {
        f64::INFINITY
    };
    let mut m: f64 = 0.5;
    let mut tau: f64 = if tau_max.is_finite() {
        0.5 * tau_max
    } else {
        0.1
    };
    let mut a_val = 0.0;
    let mut b_val = 0.0;
    for it in 1..=cfg.max_iter {
        let mm = m.clamp(-1.0 + 1e-9, 1.0 - 1e-9);
        // E_h[u² | s] = s² + m²/(1−m²); h integrates out analytically
        let var_h = mm * mm / (1.0 - mm * mm);
        let mut a = 0.0;
        let mut b = 0.0;
        let mut ill = false;
        quad.for_each_sy(channel, 1.0, |s, y, w| {
            let ty = t.eval(y);
            let denom = 1.0 + 2.0 * tau * ty;
            if denom <= 0.0 {
                ill = true;
                return;
            }
            let u2 = s * s + var_h;
            a += w * u2 / denom;
            b += w * 4.0 * ty * ty * u2 / (denom * denom);
        });
        if ill {
            return Err(SolveError::ProxIllPosed);
        }
        a_val = a;
        b_val = b;
        let root = (alpha * a * a + b).sqrt();
        if !(root > 0.0) || !root.is_finite() {
            return Err(SolveError::Feasibility("spectral root degenerate".into()));
        }
        let m_new = a / root;
        let mut tau_new = 1.0 / (alpha * root);
        if tau_new >= 0.999 * tau_max {
            tau_new = 0.999 * tau_max;
        }
        let m_next = cfg.damping * m_new + (1.0 - cfg.damping) * m;
        let tau_next = cfg.damping * tau_new + (1.0 - cfg.damping) * tau;
        let delta = (m_next - m).abs().max((tau_next - tau).abs());
        m = m_next;
        tau = tau_next;
        if delta < cfg.tol {
            return Ok(SpectralSolution {
                m,
                tau,
                a_val,
                b_val,
                converged: true,
                iterations: it,
            });
        }
    }
    Ok(SpectralSolution {
        m,
        tau,
        a_val,
        b_val,
        converged: false,
        iterations: cfg.max_iter,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::expect::{PhiSpec, QuadSpec};
    use approx::assert_abs_diff_eq;

    fn quad(order: usize) -> Quadrature {
        Quadrature::new(QuadSpec::with_order(order)).unwrap()
    }

    fn ridge_model(alpha: f64, lambda: f64, delta: f64, rho: f64) -> ModelSpec {
        ModelSpec {
            alpha,
            rho,
            shell: Shell::free(),
            loss: LossSpec::l2(),
            reg: RegSpec::l2(lambda),
            channel: ChannelSpec::GaussianAdditive { delta },
            prior: TeacherPrior::Gaussian { rho },
        }
    }

    /// Scalar self-consistent ridge fixed point in closed form, independent
    /// of the quadrature path.
    pub(crate) fn ridge_closed_form(
        alpha: f64,
        lambda: f64,
        delta: f64,
        rho: f64,
    ) -> OrderParameters {
        // V solves lambda V^2 + (lambda - 1 + alpha) V - 1 = 0, positive root
        let v = if lambda.abs() < 1e-14 {
            1.0 / (alpha - 1.0)
        } else {
            let b = lambda - 1.0 + alpha;
            let disc = (b * b + 4.0 * lambda).sqrt();
            let r1 = (-b + disc) / (2.0 * lambda);
            let r2 = (-b - disc) / (2.0 * lambda);
            match (r1 > 0.0, r2 > 0.0) {
                (true, true) => r1.min(r2),
                (true, false) => r1,
                (false, true) => r2,
                (false, false) => panic!("no positive root"),
            }
        };
        let eta = 1.0 / v - lambda;
        let nu = alpha / (1.0 + v);
        let m = nu * rho * v;
        let c1 = v * v * nu * nu * rho;
        let c2 = v * v * alpha / ((1.0 + v) * (1.0 + v));
        let q = (c1 + c2 * (delta + rho - 2.0 * m)) / (1.0 - c2);
        let e2 = q - 2.0 * m + rho + delta;
        let kappa = (alpha * e2).sqrt() / (1.0 + v);
        let tau = kappa * v;
        OrderParameters {
            m,
            q,
            tau,
            kappa,
            nu,
            eta,
        }
    }

    #[test]
    fn energy_with_zero_loss_and_reg() {
        let model = ModelSpec {
            alpha: 1.0,
            rho: 1.0,
            shell: Shell::pinned(1.0),
            loss: LossSpec::spectral_quadratic(PreprocessSpec::Zero),
            reg: RegSpec::zero(),
            channel: ChannelSpec::Deterministic {
                phi: PhiSpec::Identity,
            },
            prior: TeacherPrior::Gaussian { rho: 1.0 },
        };
        let params = OrderParameters {
            m: 0.0,
            q: 1.0,
            tau: 1.0,
            kappa: 2.0,
            nu: 0.0,
            eta: 1.0,
        };
        let q = quad(31);
        let e = energy(&params, &model, &q).unwrap();
        assert_abs_diff_eq!(e, -1.5, epsilon = 1e-10);
    }

    #[test]
    fn ridge_update_matches_hand_derived_maps() {
        let model = ridge_model(2.0, 1.0, 1.0, 1.0);
        let q = quad(61);
        let p = OrderParameters {
            m: 0.5,
            q: 1.0,
            tau: 0.5,
            kappa: 1.0,
            nu: 0.5,
            eta: 1.0,
        };
        let up = stationary_update(&p, &model, &q).unwrap();
        let v = p.tau / p.kappa;
        let alpha = model.alpha;
        let nu_expect = alpha / (1.0 + v);
        let e2 = p.q - 2.0 * p.m + model.rho + 1.0;
        let kappa_expect = (alpha * e2).sqrt() / (1.0 + v);
        let eta_expect = alpha / (1.0 + v);
        let denom = eta_expect + 1.0;
        assert_abs_diff_eq!(up.nu, nu_expect, epsilon = 1e-8);
        assert_abs_diff_eq!(up.kappa, kappa_expect, epsilon = 1e-8);
        assert_abs_diff_eq!(up.eta, eta_expect, epsilon = 1e-8);
        assert_abs_diff_eq!(up.m, nu_expect * model.rho / denom, epsilon = 1e-8);
        assert_abs_diff_eq!(up.tau, kappa_expect / denom, epsilon = 1e-8);
        assert_abs_diff_eq!(
            up.q,
            (nu_expect * nu_expect * model.rho + kappa_expect * kappa_expect) / (denom * denom),
            epsilon = 1e-8
        );
    }

    #[test]
    fn ridge_solve_matches_symbolic_fixed_point() {
        let model = ridge_model(2.0, 0.1, 1.0, 1.0);
        let q = quad(61);
        let sol = solve(&model, &SolveCfg::default(), &q).unwrap();
        let expect = ridge_closed_form(2.0, 0.1, 1.0, 1.0);
        for (a, b) in sol.params.as_array().iter().zip(expect.as_array().iter()) {
            assert!((a - b).abs() < 2e-4, "{a} vs {b}");
        }
        assert!(sol.stable);
        assert!(
            (sol.energy - sol.simplified_energy).abs() < 1e-4,
            "energy {} vs simplified {}",
            sol.energy,
            sol.simplified_energy
        );
    }

    #[test]
    fn interpolation_limit_recovers_teacher() {
        let model = ModelSpec {
            alpha: 2.0,
            rho: 1.0,
            shell: Shell::free(),
            loss: LossSpec::l2(),
            reg: RegSpec::l2(1e-6),
            channel: ChannelSpec::Deterministic {
                phi: PhiSpec::Identity,
            },
            prior: TeacherPrior::Gaussian { rho: 1.0 },
        };
        let q = quad(61);
        let sol = solve(&model, &SolveCfg::default(), &q).unwrap();
        let obs = observables(&sol.params, model.rho);
        assert!(obs.error.abs() < 1e-3, "error {}", obs.error);
        assert!((obs.m - 1.0).abs() < 1e-3);
        assert!((obs.q - 1.0).abs() < 1e-3);
    }

    #[test]
    fn observables_arithmetic() {
        let p = OrderParameters {
            m: 1.0,
            q: 1.0,
            tau: 1.0,
            kappa: 1.0,
            nu: 1.0,
            eta: 1.0,
        };
        assert_abs_diff_eq!(observables(&p, 1.0).error, 0.0, epsilon = 0.0);
        let p0 = OrderParameters { m: 0.0, ..p };
        assert_abs_diff_eq!(observables(&p0, 1.0).error, 2.0, epsilon = 0.0);
    }

    #[test]
    fn replicon_ridge_closed_form() {
        let model = ridge_model(2.0, 0.1, 1.0, 1.0);
        let q = quad(61);
        let sol = solve(&model, &SolveCfg::default(), &q).unwrap();
        let p = &sol.params;
        let v = p.tau / p.kappa;
        let lhs_closed = model.alpha * (p.eta / (p.eta + 0.1)).powi(2) / ((1.0 + v) * (1.0 + v));
        assert_abs_diff_eq!(sol.replicon_lhs, lhs_closed, epsilon = 1e-6);
        assert!(sol.replicon_lhs < 1.0);
    }

    #[test]
    fn zero_preprocessing_identity_algebra() {
        let q = quad(61);
        let sol = spectral_solve(
            &ChannelSpec::SquareLaw,
            &PreprocessSpec::Zero,
            3.0,
            &SpectralCfg::default(),
            &q,
        )
        .unwrap();
        assert!(sol.converged);
        assert_abs_diff_eq!(sol.b_val, 0.0, epsilon = 1e-12);
        let expect_a = 1.0 / (1.0 - sol.m * sol.m);
        assert_abs_diff_eq!(sol.a_val, expect_a, epsilon = 1e-6);
    }

    #[test]
    fn invalid_alpha_is_rejected() {
        let mut model = ridge_model(2.0, 0.1, 1.0, 1.0);
        model.alpha = 0.0;
        assert!(matches!(
            solve(&model, &SolveCfg::default(), &quad(31)),
            Err(SolveError::InvalidModel(_))
        ));
    }
}
