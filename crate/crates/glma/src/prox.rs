//! Scalar proximal calculus: Moreau envelopes, proximal selections and the
//! catalog of weakly convex losses and regularizers.
//!
//! A function `f` is `V0`-weakly convex when `z ↦ V0·f(z) + z²/2` is convex.
//! For a scale `V < V0` the objective `V·f(z) + (ω−z)²/2` is strictly convex,
//! its minimizer is unique and the proximal selection `ω ↦ prox(ω)` is
//! Lipschitz with constant `V0/(V0−V)`. All solvers in this crate stay inside
//! that regime.

use thiserror::Error;

/// Finite-difference step for value-level derivatives (envelope and denoiser
/// derivatives).
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ProxError {
    /// Scale `V` reached or exceeded the weak-convexity modulus `V0`; the
    /// proximal selection may be set-valued there.
    #[error("modulus violation: scale {v} >= weak convexity modulus {v0}")]
    ModulusViolation { v: f64, v0: f64 },
    /// No finite bracket containing the minimizer could be established.
    #[error("bracket failure at omega={omega}")]
    BracketFailure { omega: f64 },
}

/// A scalar function usable as a proximal target.
///
/// `modulus` is the largest `V0` such that `V0·f + z²/2` is convex
/// (`f64::INFINITY` for convex `f`). `closed_prox` may provide an exact
/// minimizer of `V·f(z) + (ω−z)²/2`; `deriv` an analytic derivative used by
/// the Newton path.
pub trait ScalarTarget {
    fn eval(&self, z: f64) -> f64;
    fn modulus(&self) -> f64;
    fn closed_prox(&self, _v: f64, _omega: f64) -> Option<f64> {
        None
    }
    fn deriv(&self, _z: f64) -> Option<f64> {
        None
    }
}

/// Preprocessing function for the spectral quadratic loss `T(y)·z²`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PreprocessSpec {
    /// `T(y) = 0`: no signal, the loss vanishes identically.
    Zero,
    /// `T(y) = max(floor, 1 - 1/y)`, the bounded preprocessing used for
    /// square-law observations.
    OneMinusInverse { floor: f64 },
}

impl PreprocessSpec {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            PreprocessSpec::Zero => 0.0,
            PreprocessSpec::OneMinusInverse { floor } => {
                let v = 1.0 - 1.0 / y;
                if v.is_nan() {
                    *floor
                } else {
                    v.max(*floor)
                }
            }
        }
    }

    /// Greatest lower bound of `T` over the channel outputs.
    pub fn lower_bound(&self) -> f64 {
        match self {
            PreprocessSpec::Zero => 0.0,
            PreprocessSpec::OneMinusInverse { floor } => *floor,
        }
    }
}

/// Loss function catalog. All losses act on the residual `u = y - z` except
/// the spectral quadratic which is `T(y)·z²`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// `(y-z)²/2`
    L2,
    /// `ξ² ∫_0^{|u|/ξ} min(1,x) dx`: quadratic core, linear tails.
    Huber { xi: f64 },
    /// Tukey biweight with a cubic coercive tail of strength `tail`.
    Tukey { xi: f64, tail: f64 },
    /// `(ξ²/2)·log(1 + u²/ξ²)`
    Cauchy { xi: f64 },
    /// `T(y)·z²` for a preprocessing function `T`.
    SpectralQuadratic { t: PreprocessSpec },
}

/// A loss together with its weak-convexity modulus, pseudo-Lipschitz order and
/// lower bound.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Largest `V0` with `V0·L(y,·) + z²/2` convex, uniformly in `y`.
    pub weak_convexity_modulus: f64,
    pub pseudo_lipschitz_order: u32,
    /// Uniform lower bound of the loss.
    pub lower_bound: f64,
}

/// Default cubic-tail strength for the Tukey loss. Small enough to leave the
/// estimator essentially unchanged while keeping the objective coercive.
pub const TUKEY_DEFAULT_TAIL: f64 = 1e-2;

impl LossSpec {
    pub fn l2() -> Self {
        LossSpec {
            kind: LossKind::L2,
            weak_convexity_modulus: f64::INFINITY,
            pseudo_lipschitz_order: 2,
            lower_bound: 0.0,
        }
    }

    pub fn huber(xi: f64) -> Self {
        assert!(xi > 0.0, "huber scale must be positive");
        LossSpec {
            kind: LossKind::Huber { xi },
            weak_convexity_modulus: f64::INFINITY,
            pseudo_lipschitz_order: 2,
            lower_bound: 0.0,
        }
    }

    pub fn tukey(xi: f64, tail: f64) -> Self {
        assert!(xi > 0.0, "tukey scale must be positive");
        assert!(tail > 0.0, "tukey requires a positive coercive tail");
        LossSpec {
            kind: LossKind::Tukey { xi, tail },
            // min of the core second derivative is -4/5, independent of xi
            weak_convexity_modulus: 1.25,
            pseudo_lipschitz_order: 3,
            lower_bound: 0.0,
        }
    }

    pub fn cauchy(xi: f64) -> Self {
        assert!(xi > 0.0, "cauchy scale must be positive");
        LossSpec {
            kind: LossKind::Cauchy { xi },
            // min of the second derivative is -1/8, independent of xi
            weak_convexity_modulus: 8.0,
            pseudo_lipschitz_order: 2,
            lower_bound: 0.0,
        }
    }

    pub fn spectral_quadratic(t: PreprocessSpec) -> Self {
        let t_min = t.lower_bound();
        let modulus = if t_min >= 0.0 {
            f64::INFINITY
        } else {
            1.0 / (2.0 * t_min.abs())
        };
        LossSpec {
            kind: LossKind::SpectralQuadratic { t },
            weak_convexity_modulus: modulus,
            pseudo_lipschitz_order: 2,
            lower_bound: if t_min >= 0.0 { 0.0 } else { f64::NEG_INFINITY },
        }
    }

    /// Loss value at prediction `z` with observation `y`.
    pub fn eval(&self, y: f64, z: f64) -> f64 {
        let u = y - z;
        match self.kind {
            LossKind::L2 => 0.5 * u * u,
            LossKind::Huber { xi } => {
                if u.abs() <= xi {
                    0.5 * u * u
                } else {
                    xi * u.abs() - 0.5 * xi * xi
                }
            }
            LossKind::Tukey { xi, tail } => {
                if u.abs() <= xi {
                    let r = 1.0 - (u / xi) * (u / xi);
                    xi * xi / 6.0 * (1.0 - r * r * r)
                } else {
                    xi * xi / 6.0 + tail * (u.abs() - xi).powi(3)
                }
            }
            LossKind::Cauchy { xi } => 0.5 * xi * xi * (1.0 + (u / xi) * (u / xi)).ln(),
            LossKind::SpectralQuadratic { t } => t.eval(y) * z * z,
        }
    }

    /// Derivative of the loss with respect to `z`.
    pub fn deriv(&self, y: f64, z: f64) -> f64 {
        let u = y - z;
        match self.kind {
            LossKind::L2 => -u,
            LossKind::Huber { xi } => {
                if u.abs() <= xi {
                    -u
                } else {
                    -xi * u.signum()
                }
            }
            LossKind::Tukey { xi, tail } => {
                if u.abs() <= xi {
                    let r = 1.0 - (u / xi) * (u / xi);
                    -u * r * r
                } else {
                    -3.0 * tail * (u.abs() - xi).powi(2) * u.signum()
                }
            }
            LossKind::Cauchy { xi } => -u * xi * xi / (xi * xi + u * u),
            LossKind::SpectralQuadratic { t } => 2.0 * t.eval(y) * z,
        }
    }

    /// Second derivative with respect to `z` (defined a.e.).
    pub fn second_deriv(&self, y: f64, z: f64) -> f64 {
        let u = y - z;
        match self.kind {
            LossKind::L2 => 1.0,
            LossKind::Huber { xi } => {
                if u.abs() <= xi {
                    1.0
                } else {
                    0.0
                }
            }
            LossKind::Tukey { xi, tail } => {
                if u.abs() <= xi {
                    let s = (u / xi) * (u / xi);
                    (1.0 - s) * (1.0 - 5.0 * s)
                } else {
                    6.0 * tail * (u.abs() - xi)
                }
            }
            LossKind::Cauchy { xi } => {
                let s = (u / xi) * (u / xi);
                (1.0 - s) / ((1.0 + s) * (1.0 + s))
            }
            LossKind::SpectralQuadratic { t } => 2.0 * t.eval(y),
        }
    }

    /// The loss viewed as a scalar proximal target at fixed `y`.
    pub fn at(&self, y: f64) -> LossAt<'_> {
        LossAt { spec: self, y }
    }
}

/// View of a loss at a fixed observation.
#[derive(Clone, Copy)]
pub struct LossAt<'a> {
    pub spec: &'a LossSpec,
    pub y: f64,
}

impl ScalarTarget for LossAt<'_> {
    fn eval(&self, z: f64) -> f64 {
        self.spec.eval(self.y, z)
    }

    fn modulus(&self) -> f64 {
        self.spec.weak_convexity_modulus
    }

    fn closed_prox(&self, v: f64, omega: f64) -> Option<f64> {
        match self.spec.kind {
            LossKind::L2 => Some((omega + v * self.y) / (1.0 + v)),
            LossKind::Huber { xi } => {
                let r = self.y - omega;
                if r.abs() <= xi * (1.0 + v) {
                    Some((omega + v * self.y) / (1.0 + v))
                } else {
                    Some(omega - v * xi * (omega - self.y).signum())
                }
            }
            LossKind::SpectralQuadratic { t } => Some(omega / (1.0 + 2.0 * v * t.eval(self.y))),
            _ => None,
        }
    }

    fn deriv(&self, z: f64) -> Option<f64> {
        Some(self.spec.deriv(self.y, z))
    }
}

/// Regularizer catalog.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegKind {
    /// `λ·w²/2`; `λ` may be negative (then only weakly convex).
    L2 { lambda: f64 },
}

/// Regularizer with its weak-convexity modulus and optional quadratic growth
/// certificate `(c, w0)`: `R(w) >= c·w²` for `|w| >= w0`, required when the
/// norm shell is unbounded above.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RegSpec {
    pub kind: RegKind,
    pub weak_convexity_modulus: f64,
    pub quadratic_growth: Option<(f64, f64)>,
}

impl RegSpec {
    pub fn l2(lambda: f64) -> Self {
        let modulus = if lambda >= 0.0 {
            f64::INFINITY
        } else {
            1.0 / lambda.abs()
        };
        let growth = if lambda > 0.0 {
            Some((lambda / 2.0, 0.0))
        } else {
            None
        };
        RegSpec {
            kind: RegKind::L2 { lambda },
            weak_convexity_modulus: modulus,
            quadratic_growth: growth,
        }
    }

    /// The zero regularizer (`λ = 0`).
    pub fn zero() -> Self {
        Self::l2(0.0)
    }

    pub fn lambda(&self) -> f64 {
        match self.kind {
            RegKind::L2 { lambda } => lambda,
        }
    }

    pub fn eval(&self, w: f64) -> f64 {
        match self.kind {
            RegKind::L2 { lambda } => 0.5 * lambda * w * w,
        }
    }

    pub fn deriv(&self, w: f64) -> f64 {
        match self.kind {
            RegKind::L2 { lambda } => lambda * w,
        }
    }

    pub fn as_target(&self) -> RegTarget<'_> {
        RegTarget { spec: self }
    }
}

#[derive(Clone, Copy)]
pub struct RegTarget<'a> {
    pub spec: &'a RegSpec,
}

impl ScalarTarget for RegTarget<'_> {
    fn eval(&self, z: f64) -> f64 {
        self.spec.eval(z)
    }

    fn modulus(&self) -> f64 {
        self.spec.weak_convexity_modulus
    }

    fn closed_prox(&self, v: f64, omega: f64) -> Option<f64> {
        match self.spec.kind {
            RegKind::L2 { lambda } => Some(omega / (1.0 + v * lambda)),
        }
    }

    fn deriv(&self, z: f64) -> Option<f64> {
        Some(self.spec.deriv(z))
    }
}

/// Result of a scalar proximal evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxResult {
    /// Global minimizer of `V·f(z) + (ω−z)²/2`.
    pub minimizer: f64,
    /// Moreau envelope value `V·f(z*) + (ω−z*)²/2`.
    pub envelope_value: f64,
    /// Set when the bracketing scan detected two global minimizers within
    /// tolerance of each other; the smaller one is returned.
    pub multiplicity_flag: bool,
}

/// Settings for the scalar minimizer behind [`prox_scalar`].
#[derive(Debug, Clone, Copy)]
pub struct ProxCfg {
    /// Argument tolerance of the refinement stage.
    pub tol: f64,
    /// Number of points in the bracketing scan used for non-differentiable or
    /// user-supplied targets.
    pub scan_points: usize,
    /// Maximum geometric bracket expansions before giving up.
    pub max_expand: u32,
}

impl Default for ProxCfg {
    fn default() -> Self {
        ProxCfg {
            tol: 1e-12,
            scan_points: 2001,
            max_expand: 200,
        }
    }
}

/// Lipschitz constant of the proximal selection of `V·f` when `f` is
/// `V0`-weakly convex: `L = V0/(V0−V)`.
pub fn lipschitz_constant(v: f64, v0: f64) -> Result<f64, ProxError> {
    if !(v < v0) || v < 0.0 {
        return Err(ProxError::ModulusViolation { v, v0 });
    }
    if v0.is_infinite() {
        return Ok(1.0);
    }
    Ok(v0 / (v0 - v))
}

/// Global minimizer and envelope of `z ↦ V·f(z) + (ω−z)²/2`.
///
/// Uses closed forms where the catalog provides them, a safeguarded Newton
/// iteration when an analytic derivative is available, and a multi-start
/// bracketed scan otherwise.
pub fn prox_scalar<T: ScalarTarget>(
    f: &T,
    v: f64,
    omega: f64,
    cfg: &ProxCfg,
) -> Result<ProxResult, ProxError> {
    let v0 = f.modulus();
    if !(v < v0) || v < 0.0 {
        return Err(ProxError::ModulusViolation { v, v0 });
    }
    if v == 0.0 {
        return Ok(ProxResult {
            minimizer: omega,
            envelope_value: 0.0,
            multiplicity_flag: false,
        });
    }
    if let Some(z) = f.closed_prox(v, omega) {
        return Ok(ProxResult {
            minimizer: z,
            envelope_value: v * f.eval(z) + 0.5 * (omega - z) * (omega - z),
            multiplicity_flag: false,
        });
    }
    if f.deriv(omega).is_some() {
        if let Some(z) = newton_prox(f, v, omega, cfg) {
            return Ok(ProxResult {
                minimizer: z,
                envelope_value: v * f.eval(z) + 0.5 * (omega - z) * (omega - z),
                multiplicity_flag: false,
            });
        }
    }
    scan_prox(f, v, omega, cfg)
}

/// Moreau envelope `min_z V·f(z) + (ω−z)²/2`.
pub fn moreau_envelope<T: ScalarTarget>(
    f: &T,
    v: f64,
    omega: f64,
    cfg: &ProxCfg,
) -> Result<f64, ProxError> {
    prox_scalar(f, v, omega, cfg).map(|r| r.envelope_value)
}

/// Safeguarded Newton iteration on the strictly increasing stationarity map
/// `φ'(z) = V·f'(z) + z − ω`. Returns `None` when bracketing fails so the
/// caller can fall back to the scan.
fn newton_prox<T: ScalarTarget>(f: &T, v: f64, omega: f64, cfg: &ProxCfg) -> Option<f64> {
    let phi = |z: f64| v * f.deriv(z).unwrap() + (z - omega);
    let g0 = phi(omega);
    if g0 == 0.0 {
        return Some(omega);
    }
    // phi is strictly increasing; bracket the root on the side g0 indicates
    let mut step = 0.5 * (1.0 + omega.abs());
    let mut lo = omega;
    let mut hi = omega;
    let mut found = false;
    for _ in 0..cfg.max_expand {
        if g0 > 0.0 {
            lo = hi - step;
            if phi(lo) <= 0.0 {
                found = true;
                break;
            }
            hi = lo;
        } else {
            hi = lo + step;
            if phi(hi) >= 0.0 {
                found = true;
                break;
            }
            lo = hi;
        }
        step *= 2.0;
    }
    if !found {
        return None;
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..100 {
        let g = phi(z);
        if g > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        // curvature of the scaled objective, bounded below by 1 - V/V0
        let h = 1e-7f64.max(1.0 + v * second_deriv_fd(f, z));
        let mut z_next = z - g / h;
        if !(z_next > lo && z_next < hi) {
            z_next = 0.5 * (lo + hi);
        }
        if (z_next - z).abs() <= cfg.tol * (1.0 + z.abs()) {
            return Some(z_next);
        }
        z = z_next;
    }
    Some(z)
}

fn second_deriv_fd<T: ScalarTarget>(f: &T, z: f64) -> f64 {
    let h = FD_STEP;
    match (f.deriv(z + h), f.deriv(z - h)) {
        (Some(a), Some(b)) => (a - b) / (2.0 * h),
        _ => 0.0,
    }
}

/// Multi-start bracketed scan. Starts at `ω` and 0, expands a bracket until
/// the objective exceeds its value at `ω`, then scans and refines the best
/// bucket by golden section. Detects near-ties of the global minimum.
fn scan_prox<T: ScalarTarget>(
    f: &T,
    v: f64,
    omega: f64,
    cfg: &ProxCfg,
) -> Result<ProxResult, ProxError> {
    let obj = |z: f64| v * f.eval(z) + 0.5 * (omega - z) * (omega - z);
    let ref_val = obj(omega);
    let mut radius = 1.0 + omega.abs();
    let mut ok = false;
    for _ in 0..cfg.max_expand {
        if obj(omega - radius) > ref_val && obj(omega + radius) > ref_val {
            ok = true;
            break;
        }
        radius *= 2.0;
        if !radius.is_finite() {
            break;
        }
    }
    if !ok {
        return Err(ProxError::BracketFailure { omega });
    }
    let lo = omega - radius;
    let hi = omega + radius;
    let n = cfg.scan_points.max(3);
    let step = (hi - lo) / (n - 1) as f64;
    let mut best_val = f64::INFINITY;
    let mut best_idx = 0usize;
    let mut vals = Vec::with_capacity(n);
    for i in 0..n {
        let val = obj(lo + step * i as f64);
        vals.push(val);
        if val < best_val {
            best_val = val;
            best_idx = i;
        }
    }
    // look for a second local basin whose refined value ties the global one
    let mut candidates = vec![best_idx];
    for i in 1..n - 1 {
        if vals[i] <= vals[i - 1]
            && vals[i] <= vals[i + 1]
            && i.abs_diff(best_idx) > 1
            && vals[i] - best_val < step
        {
            candidates.push(i);
        }
    }
    let mut refined: Vec<(f64, f64)> = candidates
        .iter()
        .map(|&i| {
            let a = lo + step * i.saturating_sub(1) as f64;
            let b = lo + step * (i + 1).min(n - 1) as f64;
            golden_min(&obj, a, b, cfg.tol)
        })
        .collect();
    refined.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let global = refined
        .iter()
        .cloned()
        .fold((f64::NAN, f64::INFINITY), |acc, r| {
            if r.1 < acc.1 {
                r
            } else {
                acc
            }
        });
    let tie_tol = 1e-9 * (1.0 + global.1.abs());
    let mut winners: Vec<(f64, f64)> = refined
        .into_iter()
        .filter(|r| r.1 - global.1 <= tie_tol)
        .collect();
    winners.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let multiple = winners
        .windows(2)
        .any(|w| (w[1].0 - w[0].0).abs() > 1e-6 * (1.0 + w[0].0.abs()));
    let (z, val) = winners[0];
    Ok(ProxResult {
        minimizer: z,
        envelope_value: val,
        multiplicity_flag: multiple,
    })
}

fn golden_min(obj: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = obj(c);
    let mut fd = obj(d);
    while (b - a).abs() > tol * (1.0 + a.abs().max(b.abs())) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = obj(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = obj(d);
        }
    }
    let z = 0.5 * (a + b);
    (z, obj(z))
}

/// Warm-started proximal evaluation for catalog losses, used in the solver
/// sweeps where millions of evaluations share smoothly varying arguments.
/// Agrees with [`prox_scalar`] on its domain; falls back to the bracketed
/// Newton when the warm iteration stalls.
pub(crate) fn loss_prox_warm(
    spec: &LossSpec,
    v: f64,
    y: f64,
    omega: f64,
    warm: f64,
) -> Result<f64, ProxError> {
    let v0 = spec.weak_convexity_modulus;
    if !(v < v0) || v < 0.0 {
        return Err(ProxError::ModulusViolation { v, v0 });
    }
    let at = spec.at(y);
    if let Some(z) = at.closed_prox(v, omega) {
        return Ok(z);
    }
    let mut z = if warm.is_finite() { warm } else { omega };
    let mut prev_abs = f64::INFINITY;
    for _ in 0..30 {
        let g = v * spec.deriv(y, z) + (z - omega);
        let ga = g.abs();
        if ga <= 1e-13 * (1.0 + z.abs()) {
            return Ok(z);
        }
        if ga > prev_abs * 4.0 {
            break;
        }
        prev_abs = ga;
        let h = (1.0 + v * spec.second_deriv(y, z)).max(1e-3);
        let step = g / h;
        z -= step;
        if step.abs() <= 1e-12 * (1.0 + z.abs()) {
            return Ok(z);
        }
    }
    let cfg = ProxCfg::default();
    newton_prox(&at, v, omega, &cfg).ok_or(ProxError::BracketFailure { omega })
}

/// Curvature report of [`verify_weak_convexity`].
#[derive(Debug, Clone, Copy)]
pub struct CurvatureReport {
    /// Minimum over the grid of `V0·f''(z) + 1`, second derivative by central
    /// finite differences.
    pub min_curvature: f64,
    pub pass: bool,
}

/// Checks `V0`-weak convexity of `f` on a grid by finite differences.
pub fn verify_weak_convexity<T: ScalarTarget>(f: &T, v0: f64, grid: &[f64]) -> CurvatureReport {
    let h = FD_STEP;
    let mut min_curv = f64::INFINITY;
    for &z in grid {
        let f2 = (f.eval(z + h) - 2.0 * f.eval(z) + f.eval(z - h)) / (h * h);
        let c = v0 * f2 + 1.0;
        if c < min_curv {
            min_curv = c;
        }
    }
    CurvatureReport {
        min_curvature: min_curv,
        pass: min_curv >= -1e-6,
    }
}

/// The standard verification grid `z ∈ [−10ξ, 10ξ]`, 4001 points.
pub fn standard_grid(xi: f64) -> Vec<f64> {
    let n = 4001;
    let lo = -10.0 * xi;
    let hi = 10.0 * xi;
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Output-side denoiser `g*(ω,y) = (κ/τ)·(prox_{(τ/κ)L(y,·)}(ω) − ω)`.
pub fn denoiser_g(
    omega: f64,
    y: f64,
    tau: f64,
    kappa: f64,
    loss: &LossSpec,
    cfg: &ProxCfg,
) -> Result<f64, ProxError> {
    let v = tau / kappa;
    let p = prox_scalar(&loss.at(y), v, omega, cfg)?;
    Ok((p.minimizer - omega) / v)
}

/// Input-side denoiser `f*(w) = prox_{(1/η)R}(w)`.
pub fn denoiser_f(w: f64, eta: f64, reg: &RegSpec, cfg: &ProxCfg) -> Result<f64, ProxError> {
    let p = prox_scalar(&reg.as_target(), 1.0 / eta, w, cfg)?;
    Ok(p.minimizer)
}

/// Central finite difference of `g*` in its first argument.
pub fn denoiser_g_deriv(
    omega: f64,
    y: f64,
    tau: f64,
    kappa: f64,
    loss: &LossSpec,
    cfg: &ProxCfg,
) -> Result<f64, ProxError> {
    let h = FD_STEP;
    let a = denoiser_g(omega + h, y, tau, kappa, loss, cfg)?;
    let b = denoiser_g(omega - h, y, tau, kappa, loss, cfg)?;
    Ok((a - b) / (2.0 * h))
}

/// Central finite difference of `f*`.
pub fn denoiser_f_deriv(w: f64, eta: f64, reg: &RegSpec, cfg: &ProxCfg) -> Result<f64, ProxError> {
    let h = FD_STEP;
    let a = denoiser_f(w + h, eta, reg, cfg)?;
    let b = denoiser_f(w - h, eta, reg, cfg)?;
    Ok((a - b) / (2.0 * h))
}
