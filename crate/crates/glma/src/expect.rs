//! Gaussian expectation engine over the scalar variables of the channel model.
//!
//! All integrands are functions of a standardized signal coordinate
//! `s ~ N(0,1)`, an independent `h ~ N(0,1)` and the output `y` drawn from the
//! channel at the physical signal `√ρ·s`. Teacher-side expectations run over
//! `w̃ ~ P_w̃` and an independent `g ~ N(0,1)`. Expectations are nested
//! Gauss-Hermite sums; the contaminated channel is handled as an exact
//! two-component mixture.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExpectError {
    #[error("invalid quadrature spec: {0}")]
    InvalidSpec(String),
    #[error("adaptive quadrature exceeded node budget {budget}")]
    QuadratureDivergence { budget: usize },
}

/// Deterministic link applied to the signal in noiseless channels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhiSpec {
    Identity,
}

impl PhiSpec {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            PhiSpec::Identity => s,
        }
    }
}

/// Output channel `y ~ P_out(· | signal)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    /// `y = signal + √Δ·z`
    GaussianAdditive { delta: f64 },
    /// `y = signal + √Δ·z₁` with probability `1−ε`, else `y = √Σ·z₂`.
    EpsilonContaminated { eps: f64, delta: f64, sigma: f64 },
    /// `y = φ(signal)`
    Deterministic { phi: PhiSpec },
    /// `y = signal²`
    SquareLaw,
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<(), ExpectError> {
        match *self {
            ChannelSpec::GaussianAdditive { delta } => {
                if delta < 0.0 {
                    return Err(ExpectError::InvalidSpec("delta must be >= 0".into()));
                }
            }
            ChannelSpec::EpsilonContaminated { eps, delta, sigma } => {
                if !(0.0..=1.0).contains(&eps) {
                    return Err(ExpectError::InvalidSpec("eps must be in [0,1]".into()));
                }
                if delta < 0.0 || sigma < 0.0 {
                    return Err(ExpectError::InvalidSpec("delta, sigma must be >= 0".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Whether outputs are almost surely bounded given a bounded signal. The
    /// Gaussian channels are accepted as the experimentally relevant
    /// relaxation; runs record which regime they are in.
    pub fn bounded_outputs(&self) -> bool {
        matches!(
            self,
            ChannelSpec::Deterministic { .. } | ChannelSpec::SquareLaw
        )
    }

    /// One draw from `P_out(· | s)` at the physical signal value `s`.
    pub fn sample<R: Rng + ?Sized>(&self, s: f64, rng: &mut R) -> f64 {
        match *self {
            ChannelSpec::GaussianAdditive { delta } => {
                s + delta.sqrt() * standard_normal(rng)
            }
            ChannelSpec::EpsilonContaminated { eps, delta, sigma } => {
                if rng.gen::<f64>() < eps {
                    sigma.sqrt() * standard_normal(rng)
                } else {
                    s + delta.sqrt() * standard_normal(rng)
                }
            }
            ChannelSpec::Deterministic { phi } => phi.eval(s),
            ChannelSpec::SquareLaw => s * s,
        }
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller; two uniforms per normal keeps the stream layout simple.
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// One draw from `P_out(· | s)`.
pub fn sample_channel<R: Rng + ?Sized>(channel: &ChannelSpec, s: f64, rng: &mut R) -> f64 {
    channel.sample(s, rng)
}

/// Law of the teacher coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherPrior {
    Gaussian { rho: f64 },
    /// `±√ρ` with equal probability.
    Rademacher { rho: f64 },
}

impl TeacherPrior {
    pub fn second_moment(&self) -> f64 {
        match *self {
            TeacherPrior::Gaussian { rho } | TeacherPrior::Rademacher { rho } => rho,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            TeacherPrior::Gaussian { rho } => rho.sqrt() * standard_normal(rng),
            TeacherPrior::Rademacher { rho } => {
                if rng.gen::<bool>() {
                    rho.sqrt()
                } else {
                    -rho.sqrt()
                }
            }
        }
    }
}

/// Quadrature settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuadSpec {
    /// Gauss-Hermite order for the Gaussian layers; odd, at least 3.
    pub hermite_order: usize,
    /// Order for the channel-noise layer; defaults to `hermite_order`.
    pub channel_nodes: Option<usize>,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec {
            hermite_order: 101,
            channel_nodes: None,
            abs_tol: 1e-9,
            rel_tol: 1e-7,
        }
    }
}

impl QuadSpec {
    pub fn with_order(order: usize) -> Self {
        QuadSpec {
            hermite_order: order,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExpectError> {
        if self.hermite_order < 3 || self.hermite_order % 2 == 0 {
            return Err(ExpectError::InvalidSpec(format!(
                "hermite_order must be odd and >= 3, got {}",
                self.hermite_order
            )));
        }
        if let Some(c) = self.channel_nodes {
            if c < 3 {
                return Err(ExpectError::InvalidSpec(
                    "channel_nodes must be >= 3".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Nodes and weights for `E[f(Z)]`, `Z ~ N(0,1)`; weights sum to one.
#[derive(Debug, Clone)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl HermiteRule {
    /// Golub-Welsch on the Jacobi matrix of the probabilists' Hermite
    /// recurrence: eigenvalues by Sturm bisection, weights from the
    /// Christoffel function of the orthonormal family.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        // off-diagonal entries b_k = sqrt(k), k = 1..n-1
        let offdiag: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
        let nodes = tridiag_eigenvalues(&offdiag, n);
        let weights: Vec<f64> = nodes.iter().map(|&x| christoffel_weight(x, n)).collect();
        let total: f64 = weights.iter().sum();
        let weights = weights.iter().map(|w| w / total).collect();
        HermiteRule { nodes, weights }
    }
}

/// Eigenvalues of the symmetric tridiagonal matrix with zero diagonal and the
/// given off-diagonal, by bisection on the Sturm count.
fn tridiag_eigenvalues(offdiag: &[f64], n: usize) -> Vec<f64> {
    // Gershgorin bound
    let mut radius: f64 = 0.0;
    for i in 0..n {
        let left = if i > 0 { offdiag[i - 1].abs() } else { 0.0 };
        let right = if i < n - 1 { offdiag[i].abs() } else { 0.0 };
        radius = radius.max(left + right);
    }
    let count_below = |x: f64| -> usize {
        // number of eigenvalues < x via the Sturm sequence of the shifted
        // characteristic recursion
        let mut count = 0usize;
        let mut d = -x;
        if d < 0.0 {
            count += 1;
        }
        for i in 1..n {
            let b2 = offdiag[i - 1] * offdiag[i - 1];
            let denom = if d.abs() < 1e-300 {
                1e-300f64.copysign(if d < 0.0 { -1.0 } else { 1.0 })
            } else {
                d
            };
            d = -x - b2 / denom;
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    let mut eigs = Vec::with_capacity(n);
    for k in 0..n {
        let mut lo = -radius - 1.0;
        let mut hi = radius + 1.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count_below(mid) <= k {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 * (1.0 + mid.abs()) {
                break;
            }
        }
        eigs.push(0.5 * (lo + hi));
    }
    eigs
}

/// `1 / Σ_{k<n} p_k(x)²` with `p_k` orthonormal for `N(0,1)`.
fn christoffel_weight(x: f64, n: usize) -> f64 {
    let mut p_prev = 0.0f64;
    let mut p = 1.0f64;
    let mut sum = p * p;
    for k in 0..n - 1 {
        let kf = k as f64;
        let p_next = (x * p - kf.sqrt() * p_prev) / (kf + 1.0).sqrt();
        p_prev = p;
        p = p_next;
        sum += p * p;
    }
    1.0 / sum
}

/// Shared quadrature context holding the node tables.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub spec: QuadSpec,
    gauss: HermiteRule,
    channel: HermiteRule,
}

impl Quadrature {
    pub fn new(spec: QuadSpec) -> Result<Self, ExpectError> {
        spec.validate()?;
        let gauss = HermiteRule::new(spec.hermite_order);
        let channel = match spec.channel_nodes {
            Some(c) => HermiteRule::new(c),
            None => gauss.clone(),
        };
        Ok(Quadrature {
            spec,
            gauss,
            channel,
        })
    }

    pub fn hermite(&self) -> &HermiteRule {
        &self.gauss
    }

    /// Visits the `(s, y)` layer: standardized `s`-nodes combined with the
    /// channel decomposition, weights summing to one. The contaminated
    /// channel contributes both mixture components exactly.
    pub fn for_each_sy<F>(&self, channel: &ChannelSpec, rho: f64, mut f: F)
    where
        F: FnMut(f64, f64, f64),
    {
        let sr = rho.sqrt();
        let g = &self.gauss;
        let c = &self.channel;
        match *channel {
            ChannelSpec::GaussianAdditive { delta } => {
                let sd = delta.sqrt();
                for (s, ws) in g.nodes.iter().zip(&g.weights) {
                    for (z, wz) in c.nodes.iter().zip(&c.weights) {
                        f(*s, sr * s + sd * z, ws * wz);
                    }
                }
            }
            ChannelSpec::EpsilonContaminated { eps, delta, sigma } => {
                let sd = delta.sqrt();
                let ss = sigma.sqrt();
                for (s, ws) in g.nodes.iter().zip(&g.weights) {
                    for (z, wz) in c.nodes.iter().zip(&c.weights) {
                        let w = ws * wz;
                        if eps < 1.0 {
                            f(*s, sr * s + sd * z, (1.0 - eps) * w);
                        }
                        if eps > 0.0 {
                            f(*s, ss * z, eps * w);
                        }
                    }
                }
            }
            ChannelSpec::Deterministic { phi } => {
                for (s, ws) in g.nodes.iter().zip(&g.weights) {
                    f(*s, phi.eval(sr * s), *ws);
                }
            }
            ChannelSpec::SquareLaw => {
                for (s, ws) in g.nodes.iter().zip(&g.weights) {
                    f(*s, rho * s * s, *ws);
                }
            }
        }
    }

    /// `E[f(s, h, y)]` with `s,h ~ N(0,1)` independent and
    /// `y ~ P_out(· | √ρ·s)`.
    pub fn expect_sh_y<F>(&self, channel: &ChannelSpec, rho: f64, mut f: F) -> f64
    where
        F: FnMut(f64, f64, f64) -> f64,
    {
        let g = self.gauss.clone();
        let mut total = 0.0;
        self.for_each_sy(channel, rho, |s, y, w| {
            for (h, wh) in g.nodes.iter().zip(&g.weights) {
                total += w * wh * f(s, *h, y);
            }
        });
        total
    }

    /// `E[f(w̃, g)]` with `w̃ ~ P_w̃` and independent `g ~ N(0,1)`.
    pub fn expect_wg<F>(&self, prior: &TeacherPrior, mut f: F) -> f64
    where
        F: FnMut(f64, f64) -> f64,
    {
        let g = &self.gauss;
        match *prior {
            TeacherPrior::Gaussian { rho } => {
                let sr = rho.sqrt();
                let mut total = 0.0;
                for (w, ww) in g.nodes.iter().zip(&g.weights) {
                    let wt = sr * w;
                    for (z, wz) in g.nodes.iter().zip(&g.weights) {
                        total += ww * wz * f(wt, *z);
                    }
                }
                total
            }
            TeacherPrior::Rademacher { rho } => {
                let sr = rho.sqrt();
                let mut total = 0.0;
                for (z, wz) in g.nodes.iter().zip(&g.weights) {
                    total += 0.5 * wz * (f(sr, *z) + f(-sr, *z));
                }
                total
            }
        }
    }
}

/// Builds the Moreau-envelope argument `m/√ρ·s + √(q − m²/ρ)·h`, clamping the
/// variance at `1e-12`. Returns the value and whether the clamp fired.
pub fn overlap_gap_sd(m: f64, q: f64, rho: f64) -> (f64, bool) {
    let gap = q - m * m / rho;
    if gap < 1e-12 {
        (1e-12f64.sqrt(), true)
    } else {
        (gap.sqrt(), false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn quad(order: usize) -> Quadrature {
        Quadrature::new(QuadSpec::with_order(order)).unwrap()
    }

    #[test]
    fn hermite_rule_moments() {
        let rule = HermiteRule::new(31);
        let m0: f64 = rule.weights.iter().sum();
        let m2: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * x * x)
            .sum();
        let m4: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * x.powi(4))
            .sum();
        assert_abs_diff_eq!(m0, 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(m2, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m4, 3.0, epsilon = 1e-11);
    }

    #[test]
    fn second_moment_of_h() {
        let q = quad(61);
        for channel in [
            ChannelSpec::GaussianAdditive { delta: 1.0 },
            ChannelSpec::SquareLaw,
        ] {
            let v = q.expect_sh_y(&channel, 1.0, |_s, h, _y| h * h);
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn signal_output_correlation() {
        let q = quad(61);
        let v = q.expect_sh_y(
            &ChannelSpec::GaussianAdditive { delta: 1.0 },
            1.0,
            |s, _h, y| s * y,
        );
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn contaminated_second_moment() {
        let q = quad(61);
        let channel = ChannelSpec::EpsilonContaminated {
            eps: 0.1,
            delta: 1.0,
            sigma: 1.0,
        };
        let v = q.expect_sh_y(&channel, 1.0, |_s, _h, y| y * y);
        assert_abs_diff_eq!(v, 0.9 * 2.0 + 0.1, epsilon = 1e-9);
    }

    #[test]
    fn teacher_moments() {
        let q = quad(61);
        let prior = TeacherPrior::Gaussian { rho: 2.0 };
        assert_abs_diff_eq!(q.expect_wg(&prior, |w, _| w * w), 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(q.expect_wg(&prior, |w, g| w * g), 0.0, epsilon = 1e-10);
        let v = q.expect_wg(&prior, |w, g| {
            let x = w + 2.0 * g;
            x * x
        });
        assert_abs_diff_eq!(v, 2.0 + 4.0, epsilon = 1e-8);

        let rad = TeacherPrior::Rademacher { rho: 1.5 };
        assert_abs_diff_eq!(q.expect_wg(&rad, |w, _| w * w), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn normalization_is_exact() {
        let q = quad(101);
        for channel in [
            ChannelSpec::GaussianAdditive { delta: 0.5 },
            ChannelSpec::EpsilonContaminated {
                eps: 0.3,
                delta: 1.0,
                sigma: 5.0,
            },
            ChannelSpec::Deterministic {
                phi: PhiSpec::Identity,
            },
            ChannelSpec::SquareLaw,
        ] {
            let v = q.expect_sh_y(&channel, 1.7, |_, _, _| 1.0);
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_mixture_sampling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let channel = ChannelSpec::EpsilonContaminated {
            eps: 1.0,
            delta: 1.0,
            sigma: 0.0,
        };
        for _ in 0..32 {
            assert_eq!(sample_channel(&channel, 3.0, &mut rng), 0.0);
        }
        let det = ChannelSpec::Deterministic {
            phi: PhiSpec::Identity,
        };
        assert_eq!(sample_channel(&det, 0.7, &mut rng), 0.7);
        assert_eq!(sample_channel(&ChannelSpec::SquareLaw, -2.0, &mut rng), 4.0);
    }

    #[test]
    fn quadrature_matches_monte_carlo() {
        let q = quad(61);
        let channel = ChannelSpec::EpsilonContaminated {
            eps: 0.2,
            delta: 0.5,
            sigma: 2.0,
        };
        let rho = 1.3;
        let integrand = |s: f64, h: f64, y: f64| (0.3 * s + 0.2 * h - 0.5 * y).tanh() + 0.1 * y * y;
        let quad_val = q.expect_sh_y(&channel, rho, integrand);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 2_000_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let s = super::standard_normal(&mut rng);
            let h = super::standard_normal(&mut rng);
            let y = channel.sample(rho.sqrt() * s, &mut rng);
            let v = integrand(s, h, y);
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (quad_val - mean).abs() <= 4.0 * se,
            "quad {quad_val} vs mc {mean} +- {se}"
        );
    }
}
