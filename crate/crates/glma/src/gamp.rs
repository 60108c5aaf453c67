//! The message passing algorithm built from the saddle-derived denoisers,
//! its scalar state evolution, and the objective values along the iterates.
//!
//! Iteration (crossed Onsager corrections):
//! `p^t = X f(w^t)/√d − c^t·g(p^{t−1}, y)` with `c^t` the mean input-side
//! derivative, and `w^{t+1} = Xᵀ g(p^t, y)/√d − b^t·f(w^t)` with `b^t` the
//! mean output-side derivative scaled by `n/d`. At `t = 0` the input denoiser
//! is the identity so that the initialization moments feed the first product
//! unchanged, and `g(p^{−1}, ·)` is the zero vector.

use crate::empirics::{dot, Dataset};
use crate::expect::Quadrature;
use crate::prox::{self, LossSpec, ProxError, RegKind, RegSpec, FD_STEP};
use crate::saddle::{
    input_sweep, output_sweep, ModelSpec, OrderParameters, SaddleSolution, SolveError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GampError {
    #[error("iterates diverged at t={t} (diag {diag})")]
    Diverged { t: u64, diag: f64 },
    #[error("initialization infeasible: q < m^2/rho")]
    Feasibility,
    #[error(transparent)]
    Prox(#[from] ProxError),
    #[error(transparent)]
    Saddle(#[from] SolveError),
}

/// Frozen denoiser pair taken from a solved saddle point.
#[derive(Debug, Clone)]
pub struct Denoisers {
    pub loss: LossSpec,
    pub reg: RegSpec,
    /// Proximal scale `τ*/κ*` of the output denoiser.
    pub v: f64,
    /// Input proximal scale is `1/η*`.
    pub eta: f64,
}

impl Denoisers {
    pub fn from_solution(model: &ModelSpec, sol: &SaddleSolution) -> Self {
        Denoisers {
            loss: model.loss,
            reg: model.reg.clone(),
            v: sol.params.tau / sol.params.kappa,
            eta: sol.params.eta,
        }
    }

    /// `g*(ω, y) = (prox_{Vℒ(y,·)}(ω) − ω)/V`
    pub fn g(&self, omega: f64, y: f64) -> Result<f64, ProxError> {
        let z = prox::loss_prox_warm(&self.loss, self.v, y, omega, omega)?;
        Ok((z - omega) / self.v)
    }

    pub fn g_deriv(&self, omega: f64, y: f64) -> Result<f64, ProxError> {
        let zp = prox::loss_prox_warm(&self.loss, self.v, y, omega + FD_STEP, omega)?;
        let zm = prox::loss_prox_warm(&self.loss, self.v, y, omega - FD_STEP, omega)?;
        let gp = (zp - (omega + FD_STEP)) / self.v;
        let gm = (zm - (omega - FD_STEP)) / self.v;
        Ok((gp - gm) / (2.0 * FD_STEP))
    }

    /// The output denoiser as the algorithm applies it: `g*/η`. This
    /// normalization makes the fixed point solve the empirical optimality
    /// conditions and puts the input iterate on the `(ν/η, κ/η)` law.
    pub fn g_amp(&self, omega: f64, y: f64) -> Result<f64, ProxError> {
        self.g(omega, y).map(|v| v / self.eta)
    }

    pub fn g_amp_deriv(&self, omega: f64, y: f64) -> Result<f64, ProxError> {
        self.g_deriv(omega, y).map(|v| v / self.eta)
    }

    /// `f*(w) = prox_{(1/η)R}(w)`
    pub fn f(&self, w: f64) -> f64 {
        match self.reg.kind {
            RegKind::L2 { lambda } => self.eta * w / (self.eta + lambda),
        }
    }

    pub fn f_deriv(&self, _w: f64) -> f64 {
        match self.reg.kind {
            RegKind::L2 { lambda } => self.eta / (self.eta + lambda),
        }
    }
}

/// High-dimensional iterate pair with the Onsager scalars.
#[derive(Debug, Clone)]
pub struct GampState {
    pub w: Vec<f64>,
    pub p: Vec<f64>,
    pub w_hat: Vec<f64>,
    pub onsager_b: f64,
    pub onsager_c: f64,
    pub t: u64,
    /// `‖w^{t+1} − w^t‖₂/√d`
    pub diag_w: f64,
    /// `‖p^{t+1} − p^t‖₂/√n`
    pub diag_p: f64,
}

/// Per-iteration summary recorded by [`run`].
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct IterStats {
    pub t: u64,
    pub diag_w: f64,
    pub diag_p: f64,
    /// `⟨ŵ, w̃⟩/d`
    pub m_t: f64,
    /// `‖ŵ‖²/d`
    pub q_t: f64,
    /// Empirical objective at `ŵ^t`.
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GampStatus {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct GampRun {
    pub trajectory: Vec<IterStats>,
    pub status: GampStatus,
    pub w_hat: Vec<f64>,
    pub iterations: u64,
}

/// Settings for [`run`].
#[derive(Debug, Clone, Copy)]
pub struct GampCfg {
    pub max_t: u64,
    pub eps_stop: f64,
    /// Rescale the estimate to squared norm `c·d` each iteration.
    pub projected: bool,
    /// Projection constant; defaults to the solved `q*`.
    pub norm_const: Option<f64>,
    /// Disabling the correction terms breaks the Gaussian decomposition;
    /// exists for the regression test of that fact.
    pub onsager: bool,
    pub seed: u64,
}

impl Default for GampCfg {
    fn default() -> Self {
        GampCfg {
            max_t: 200,
            eps_stop: 1e-6,
            projected: false,
            norm_const: None,
            onsager: true,
            seed: 0,
        }
    }
}

/// Draws `w⁰ = (m*/ρ)·w̃ + √(q* − m*²/ρ)·ξ`.
pub fn init_w0(
    sol: &SaddleSolution,
    rho: f64,
    teacher: &[f64],
    seed: u64,
) -> Result<Vec<f64>, GampError> {
    let m = sol.params.m;
    let q = sol.params.q;
    let gap = q - m * m / rho;
    if gap < -1e-10 {
        return Err(GampError::Feasibility);
    }
    let sd = gap.max(0.0).sqrt();
    let coef = m / rho;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(teacher
        .iter()
        .map(|&wt| {
            let xi: f64 = StandardNormal.sample(&mut rng);
            coef * wt + sd * xi
        })
        .collect())
}

fn apply_f(den: &Denoisers, w: &[f64], identity: bool) -> Vec<f64> {
    if identity {
        w.to_vec()
    } else {
        w.iter().map(|&wi| den.f(wi)).collect()
    }
}

fn project(w_hat: &mut [f64], c: f64) {
    let d = w_hat.len() as f64;
    let norm_sq: f64 = w_hat.iter().map(|v| v * v).sum();
    if norm_sq > 0.0 {
        let scale = (c * d / norm_sq).sqrt();
        for v in w_hat.iter_mut() {
            *v *= scale;
        }
    }
}

/// One synchronous iteration. `g_prev` holds `g(p^{t−1}, y)`; at `t = 0` it
/// is the zero vector and the input denoiser is the identity.
pub fn gamp_step(
    state: &GampState,
    dataset: &Dataset,
    den: &Denoisers,
    cfg: &GampCfg,
    norm_const: f64,
) -> Result<(GampState, f64), GampError> {
    let d = dataset.d as f64;
    let n = dataset.n as f64;
    let t = state.t;
    let identity_f = t == 0;

    let mut w_hat = apply_f(den, &state.w, identity_f);
    let mut c_scale = 1.0;
    if cfg.projected {
        let norm_sq: f64 = w_hat.iter().map(|v| v * v).sum();
        if norm_sq > 0.0 {
            c_scale = (norm_const * d / norm_sq).sqrt();
        }
        project(&mut w_hat, norm_const);
    }
    // c^t: mean derivative of the input denoiser
    let c_t = if !cfg.onsager {
        0.0
    } else if identity_f {
        c_scale
    } else {
        c_scale * state.w.iter().map(|&wi| den.f_deriv(wi)).sum::<f64>() / d
    };

    let z = dataset.forward(&w_hat);
    let g_prev: Vec<f64> = if t == 0 {
        vec![0.0; dataset.n]
    } else {
        state
            .p
            .iter()
            .zip(&dataset.y)
            .map(|(&p, &y)| den.g_amp(p, y))
            .collect::<Result<_, _>>()?
    };
    let p_new: Vec<f64> = z
        .iter()
        .zip(&g_prev)
        .map(|(&zi, &gi)| zi - c_t * gi)
        .collect();

    // b^t: mean derivative of the output denoiser at the new p (n/d scaled)
    let g_new: Vec<f64> = p_new
        .iter()
        .zip(&dataset.y)
        .map(|(&p, &y)| den.g_amp(p, y))
        .collect::<Result<_, _>>()?;
    let b_t = if cfg.onsager {
        let mut s = 0.0;
        for (&p, &y) in p_new.iter().zip(&dataset.y) {
            s += den.g_amp_deriv(p, y)?;
        }
        s / d
    } else {
        0.0
    };
    let back = dataset.backward(&g_new);
    let w_new: Vec<f64> = back
        .iter()
        .zip(&w_hat)
        .map(|(&bi, &wi)| bi - b_t * wi)
        .collect();

    let diag_w = l2_diff(&w_new, &state.w) / d.sqrt();
    let diag_p = if t == 0 {
        f64::INFINITY
    } else {
        l2_diff(&p_new, &state.p) / n.sqrt()
    };
    // empirical objective of the current estimate, using its preactivations
    let loss_sum: f64 = dataset
        .y
        .iter()
        .zip(&z)
        .map(|(&y, &zz)| den.loss.eval(y, zz))
        .sum();
    let reg_sum: f64 = w_hat.iter().map(|&v| den.reg.eval(v)).sum();
    let energy = (loss_sum + reg_sum) / d;

    Ok((
        GampState {
            w: w_new,
            p: p_new,
            w_hat,
            onsager_b: b_t,
            onsager_c: c_t,
            t: t + 1,
            diag_w,
            diag_p,
        },
        energy,
    ))
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Runs the algorithm from the saddle-derived initialization until the
/// iterate differences fall below `eps_stop`.
pub fn run(
    dataset: &Dataset,
    model: &ModelSpec,
    sol: &SaddleSolution,
    cfg: &GampCfg,
) -> Result<GampRun, GampError> {
    let den = Denoisers::from_solution(model, sol);
    let norm_const = cfg.norm_const.unwrap_or(sol.params.q);
    let w0 = init_w0(sol, model.rho, &dataset.teacher, cfg.seed)?;
    let mut state = GampState {
        w: w0,
        p: vec![0.0; dataset.n],
        w_hat: vec![0.0; dataset.d],
        onsager_b: 0.0,
        onsager_c: 0.0,
        t: 0,
        diag_w: f64::INFINITY,
        diag_p: f64::INFINITY,
    };
    let mut trajectory = Vec::new();
    let mut status = GampStatus::MaxIterations;
    for _ in 0..cfg.max_t {
        let (next, energy) = gamp_step(&state, dataset, &den, cfg, norm_const)?;
        let m_t = dot(&next.w_hat, &dataset.teacher) / dataset.d as f64;
        let q_t = dot(&next.w_hat, &next.w_hat) / dataset.d as f64;
        trajectory.push(IterStats {
            t: next.t,
            diag_w: next.diag_w,
            diag_p: next.diag_p,
            m_t,
            q_t,
            energy,
        });
        let diag = next.diag_w.max(if next.diag_p.is_finite() {
            next.diag_p
        } else {
            0.0
        });
        if diag > 1e6 {
            return Err(GampError::Diverged { t: next.t, diag });
        }
        let done = next.t > 1 && diag < cfg.eps_stop;
        state = next;
        if done {
            status = GampStatus::Converged;
            break;
        }
    }
    let iterations = state.t;
    let w_hat = apply_f(&den, &state.w, false);
    let mut w_hat = w_hat;
    if cfg.projected {
        project(&mut w_hat, norm_const);
    }
    Ok(GampRun {
        trajectory,
        status,
        w_hat,
        iterations,
    })
}

/// Empirical objective along a sequence of estimates.
pub fn energy_along(
    dataset: &Dataset,
    estimates: &[Vec<f64>],
    loss: &LossSpec,
    reg: &RegSpec,
) -> Vec<f64> {
    estimates
        .iter()
        .map(|w| crate::empirics::objective(dataset, loss, reg, w))
        .collect()
}

/// One record of the scalar state evolution: the output-side iterate is
/// `β·z* + N(0, Ω)` (`Ω` a variance), the input-side iterate is
/// `μ·w̃ + N(0, Σ²)` (`Σ` a standard deviation).
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SeRecord {
    pub t: u64,
    pub beta: f64,
    pub omega: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// The fixed-point mapping of the solved saddle onto the state-evolution
/// scalars.
pub fn se_fixed_point(sol: &SaddleSolution, rho: f64) -> SeRecord {
    let p = &sol.params;
    SeRecord {
        t: 0,
        beta: p.m / rho,
        omega: p.q - p.m * p.m / rho,
        mu: p.nu / p.eta,
        sigma: p.kappa / p.eta,
    }
}

/// Scalar state evolution with the frozen denoisers. Starts from `init`
/// (defaults to the solved fixed point) and iterates `T` times.
pub fn state_evolution_run(
    model: &ModelSpec,
    sol: &SaddleSolution,
    t_max: u64,
    init: Option<SeRecord>,
    quad: &Quadrature,
) -> Result<Vec<SeRecord>, GampError> {
    let star = &sol.params;
    let v_star_kt = star.kappa / star.tau;
    let mut rec = init.unwrap_or_else(|| se_fixed_point(sol, model.rho));
    rec.t = 0;
    let mut out = vec![rec];
    for t in 1..=t_max {
        // output half-map: (beta, omega) -> (mu, sigma)
        let params = OrderParameters {
            m: rec.beta * model.rho,
            q: rec.omega + rec.beta * rec.beta * model.rho,
            tau: star.tau,
            kappa: star.kappa,
            nu: star.nu,
            eta: star.eta,
        };
        let sweep = output_sweep(model, &params, quad)?;
        let nu_t = model.alpha * v_star_kt * sweep.i_nu;
        let kappa_t = v_star_kt * (model.alpha * sweep.i_res_sq).sqrt();
        let mu = nu_t / star.eta;
        let sigma = kappa_t / star.eta;
        // input half-map: (mu, sigma) -> (beta, omega)
        let inp = input_sweep(model, mu * star.eta, sigma * star.eta, star.eta)?;
        let (m_t, q_t) = (inp.m, inp.q);
        rec = SeRecord {
            t,
            beta: m_t / model.rho,
            omega: q_t - m_t * m_t / model.rho,
            mu,
            sigma,
        };
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirics::generate;
    use crate::expect::{ChannelSpec, QuadSpec, TeacherPrior};
    use crate::saddle::{solve, Shell, SolveCfg};
    use approx::assert_abs_diff_eq;

    fn ridge_model(alpha: f64, lambda: f64, delta: f64) -> ModelSpec {
        ModelSpec {
            alpha,
            rho: 1.0,
            shell: Shell::free(),
            loss: LossSpec::l2(),
            reg: RegSpec::l2(lambda),
            channel: ChannelSpec::GaussianAdditive { delta },
            prior: TeacherPrior::Gaussian { rho: 1.0 },
        }
    }

    #[test]
    fn init_moments_match_solution() {
        let model = ridge_model(2.0, 0.1, 1.0);
        let quad = Quadrature::new(QuadSpec::with_order(61)).unwrap();
        let sol = solve(&model, &SolveCfg::default(), &quad).unwrap();
        let d = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let teacher: Vec<f64> = (0..d).map(|_| model.prior.sample(&mut rng)).collect();
        let w0 = init_w0(&sol, model.rho, &teacher, 3).unwrap();
        let m0 = dot(&w0, &teacher) / d as f64;
        let q0 = dot(&w0, &w0) / d as f64;
        assert!((m0 - sol.params.m).abs() < 0.01, "m0 {m0}");
        assert!((q0 - sol.params.q).abs() < 0.01, "q0 {q0}");
    }

    #[test]
    fn degenerate_init_is_deterministic() {
        let sol_params = OrderParameters {
            m: 0.0,
            q: 0.0,
            tau: 1.0,
            kappa: 1.0,
            nu: 0.0,
            eta: 1.0,
        };
        let sol = SaddleSolution {
            params: sol_params,
            energy: 0.0,
            simplified_energy: 0.0,
            residuals: [0.0; 6],
            replicon_lhs: 0.0,
            stable: true,
            iterations: 0,
            converged: true,
            shell_active: false,
            clamp_count: 0,
        };
        let teacher = vec![1.0; 32];
        let w0 = init_w0(&sol, 1.0, &teacher, 5).unwrap();
        assert!(w0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn null_denoisers_freeze_at_zero() {
        // Zero overlap, zero norm solution makes f*(w) = eta w/(eta+lambda)
        // act on w = 0 only after t = 0; with zero data the iterates stay 0.
        let model = ridge_model(1.0, 0.5, 0.1);
        let quad = Quadrature::new(QuadSpec::with_order(31)).unwrap();
        let sol = solve(&model, &SolveCfg::default(), &quad).unwrap();
        let mut data = generate(&model, 16, 1);
        for v in data.x.iter_mut() {
            *v = 0.0;
        }
        for v in data.y.iter_mut() {
            *v = 0.0;
        }
        let mut zero_sol = sol.clone();
        zero_sol.params.m = 0.0;
        zero_sol.params.q = 0.0;
        let run_out = run(&data, &model, &zero_sol, &GampCfg::default()).unwrap();
        let last = run_out.trajectory.last().unwrap();
        assert_abs_diff_eq!(last.q_t, 0.0, epsilon = 1e-30);
    }

    #[test]
    fn hand_computed_two_by_two_iteration() {
        // d = n = 2 with a fixed design, ridge denoisers; one full step by hand
        let model = ridge_model(1.0, 1.0, 1.0);
        let quad = Quadrature::new(QuadSpec::with_order(31)).unwrap();
        let sol = solve(&model, &SolveCfg::default(), &quad).unwrap();
        let den = Denoisers::from_solution(&model, &sol);
        let sqrt_d = (2.0f64).sqrt();
        let data = Dataset {
            x: vec![1.0, 2.0, -1.0, 0.5],
            y: vec![1.0, -1.0],
            teacher: vec![1.0, -1.0],
            n: 2,
            d: 2,
            seed: 0,
            teacher_rescaled: false,
        };
        let w0 = vec![0.3, -0.2];
        let state = GampState {
            w: w0.clone(),
            p: vec![0.0; 2],
            w_hat: vec![0.0; 2],
            onsager_b: 0.0,
            onsager_c: 0.0,
            t: 0,
            diag_w: f64::INFINITY,
            diag_p: f64::INFINITY,
        };
        let (next, _) = gamp_step(&state, &data, &den, &GampCfg::default(), sol.params.q).unwrap();
        // t = 0: identity input denoiser, no g feedback
        let p_expect = [
            (1.0 * 0.3 + 2.0 * -0.2) / sqrt_d,
            (-1.0 * 0.3 + 0.5 * -0.2) / sqrt_d,
        ];
        assert_abs_diff_eq!(next.p[0], p_expect[0], epsilon = 1e-12);
        assert_abs_diff_eq!(next.p[1], p_expect[1], epsilon = 1e-12);
        let v = den.v;
        let eta = den.eta;
        let g = |p: f64, y: f64| (y - p) / ((1.0 + v) * eta);
        let g0 = g(p_expect[0], 1.0);
        let g1 = g(p_expect[1], -1.0);
        let b = (-1.0 / ((1.0 + v) * eta)) * 2.0 / 2.0;
        let w_expect = [
            (1.0 * g0 + -1.0 * g1) / sqrt_d - b * 0.3,
            (2.0 * g0 + 0.5 * g1) / sqrt_d - b * -0.2,
        ];
        assert_abs_diff_eq!(next.w[0], w_expect[0], epsilon = 1e-10);
        assert_abs_diff_eq!(next.w[1], w_expect[1], epsilon = 1e-10);
    }

    #[test]
    fn se_fixed_point_is_stationary() {
        let model = ridge_model(2.0, 0.1, 1.0);
        let quad = Quadrature::new(QuadSpec::with_order(61)).unwrap();
        let mut cfg = SolveCfg::default();
        cfg.tol = 1e-10;
        let sol = solve(&model, &cfg, &quad).unwrap();
        let recs = state_evolution_run(&model, &sol, 50, None, &quad).unwrap();
        let first = recs.first().unwrap();
        let last = recs.last().unwrap();
        assert_abs_diff_eq!(first.beta, last.beta, epsilon = 1e-6);
        assert_abs_diff_eq!(first.omega, last.omega, epsilon = 1e-6);
        assert_abs_diff_eq!(first.mu, last.mu, epsilon = 1e-6);
        assert_abs_diff_eq!(first.sigma, last.sigma, epsilon = 1e-6);
    }

    #[test]
    fn perturbed_se_contracts_back() {
        let model = ridge_model(2.0, 0.1, 1.0);
        let quad = Quadrature::new(QuadSpec::with_order(61)).unwrap();
        let mut cfg = SolveCfg::default();
        cfg.tol = 1e-10;
        let sol = solve(&model, &cfg, &quad).unwrap();
        let mut init = se_fixed_point(&sol, model.rho);
        init.omega *= 1.01;
        let recs = state_evolution_run(&model, &sol, 60, Some(init), &quad).unwrap();
        let fp = se_fixed_point(&sol, model.rho);
        let last = recs.last().unwrap();
        assert!((last.omega - fp.omega).abs() < 1e-8, "omega {}", last.omega);
        assert!((last.mu - fp.mu).abs() < 1e-8);
    }

    #[test]
    fn ridge_gamp_contracts_and_matches_theory() {
        let model = ridge_model(2.0, 0.1, 1.0);
        let quad = Quadrature::new(QuadSpec::with_order(61)).unwrap();
        let sol = solve(&model, &SolveCfg::default(), &quad).unwrap();
        let data = generate(&model, 2000, 11);
        let out = run(&data, &model, &sol, &GampCfg::default()).unwrap();
        assert_eq!(out.status, GampStatus::Converged);
        let last = out.trajectory.last().unwrap();
        assert!(
            (last.m_t - sol.params.m).abs() < 0.05,
            "m_t {} vs {}",
            last.m_t,
            sol.params.m
        );
        assert!((last.q_t - sol.params.q).abs() < 0.08);
        // geometric contraction of the diagnostics
        let mid = &out.trajectory[out.trajectory.len() / 2];
        assert!(last.diag_w < mid.diag_w);
    }
}
