//! Synthetic teacher-student data, finite-dimensional ERM by gradient
//! descent, and empirical overlap measurement.

use crate::expect::sample_channel;
use crate::prox::{LossSpec, RegSpec};
use crate::saddle::ModelSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmpiricsError {
    #[error("length mismatch: {lhs} vs {rhs}")]
    LengthMismatch { lhs: usize, rhs: usize },
}

/// A synthetic dataset drawn from the model's channel.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Row-major `n x d` design of i.i.d. standard Gaussians.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub teacher: Vec<f64>,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// Whether the teacher was rescaled to `‖w̃‖²/d = ρ` exactly.
    pub teacher_rescaled: bool,
}

impl Dataset {
    pub fn row(&self, mu: usize) -> &[f64] {
        &self.x[mu * self.d..(mu + 1) * self.d]
    }

    /// `X v / √d`
    pub fn forward(&self, v: &[f64]) -> Vec<f64> {
        let inv = 1.0 / (self.d as f64).sqrt();
        (0..self.n)
            .map(|mu| dot(self.row(mu), v) * inv)
            .collect()
    }

    /// `Xᵀ u / √d`
    pub fn backward(&self, u: &[f64]) -> Vec<f64> {
        let inv = 1.0 / (self.d as f64).sqrt();
        let mut out = vec![0.0; self.d];
        for mu in 0..self.n {
            let c = u[mu] * inv;
            if c == 0.0 {
                continue;
            }
            for (o, &xi) in out.iter_mut().zip(self.row(mu)) {
                *o += c * xi;
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws a dataset of dimension `d` (so `n = round(α d)`) from the model.
/// Deterministic given the seed; the teacher is rescaled to exact squared
/// norm `ρ·d` by default so finite-size runs share the theory's `ρ`.
pub fn generate(model: &ModelSpec, d: usize, seed: u64) -> Dataset {
    generate_with(model, d, seed, true)
}

pub fn generate_with(model: &ModelSpec, d: usize, seed: u64, rescale_teacher: bool) -> Dataset {
    let n = (model.alpha * d as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut teacher: Vec<f64> = (0..d).map(|_| model.prior.sample(&mut rng)).collect();
    if rescale_teacher {
        let norm_sq: f64 = teacher.iter().map(|v| v * v).sum();
        if norm_sq > 0.0 {
            let scale = (model.rho * d as f64 / norm_sq).sqrt();
            for t in teacher.iter_mut() {
                *t *= scale;
            }
        }
    }
    let mut x = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        let v: f64 = normal.sample(&mut rng);
        x.push(v);
    }
    let inv = 1.0 / (d as f64).sqrt();
    let mut y = Vec::with_capacity(n);
    for mu in 0..n {
        let s = dot(&x[mu * d..(mu + 1) * d], &teacher) * inv;
        y.push(sample_channel(&model.channel, s, &mut rng));
    }
    Dataset {
        x,
        y,
        teacher,
        n,
        d,
        seed,
        teacher_rescaled: rescale_teacher,
    }
}

/// Empirical objective `A_d(w) = (1/d)[Σ L(y, (Xw)_μ/√d) + Σ R(w_i)]`.
pub fn objective(dataset: &Dataset, loss: &LossSpec, reg: &RegSpec, w: &[f64]) -> f64 {
    let z = dataset.forward(w);
    objective_with_preactivations(dataset, loss, reg, w, &z)
}

fn objective_with_preactivations(
    dataset: &Dataset,
    loss: &LossSpec,
    reg: &RegSpec,
    w: &[f64],
    z: &[f64],
) -> f64 {
    let loss_sum: f64 = dataset
        .y
        .iter()
        .zip(z)
        .map(|(&y, &zz)| loss.eval(y, zz))
        .sum();
    let reg_sum: f64 = w.iter().map(|&wi| reg.eval(wi)).sum();
    (loss_sum + reg_sum) / dataset.d as f64
}

/// Per-step record of a gradient-descent trajectory.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GdStep {
    pub step: u64,
    /// `‖w‖²/d`
    pub q: f64,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GdStatus {
    Converged,
    Diverged,
    MaxSteps,
}

#[derive(Debug, Clone)]
pub struct GdTrajectory {
    pub steps: Vec<GdStep>,
    pub status: GdStatus,
    pub w: Vec<f64>,
    pub iterations: u64,
}

/// Gradient-descent settings. The step acts on the unnormalized objective
/// `d·A_d`, so the default rate `0.05/α` is dimension-free.
#[derive(Debug, Clone, Copy)]
pub struct GdCfg {
    pub lr: Option<f64>,
    pub max_steps: u64,
    /// Stop when `‖∇(d·A_d)‖₂` falls below this; defaults to `1e-7·d`.
    pub grad_tol: Option<f64>,
    pub record_every: u64,
    pub seed: u64,
}

impl Default for GdCfg {
    fn default() -> Self {
        GdCfg {
            lr: None,
            max_steps: 20_000,
            grad_tol: None,
            record_every: 1,
            seed: 0,
        }
    }
}

/// Plain gradient descent on the empirical objective from a uniform random
/// point on the sphere of squared norm `init_norm·d`. Backtracking halves the
/// rate whenever a step would increase the objective.
pub fn erm_gd(
    dataset: &Dataset,
    loss: &LossSpec,
    reg: &RegSpec,
    init_norm: f64,
    cfg: &GdCfg,
) -> GdTrajectory {
    let d = dataset.d;
    let alpha = dataset.n as f64 / d as f64;
    let base_lr = cfg.lr.unwrap_or(0.05 / alpha);
    let grad_tol = cfg.grad_tol.unwrap_or(1e-7 * d as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = StandardNormal;
    let mut w: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
    let norm: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let target = (init_norm * d as f64).sqrt();
    for v in w.iter_mut() {
        *v *= target / norm;
    }

    let mut z = dataset.forward(&w);
    let mut obj = objective_with_preactivations(dataset, loss, reg, &w, &z);
    let mut steps = Vec::new();
    let inv_d = 1.0 / d as f64;
    for step in 0..cfg.max_steps {
        // gradient of d·A_d
        let lgrad: Vec<f64> = dataset
            .y
            .iter()
            .zip(&z)
            .map(|(&y, &zz)| loss.deriv(y, zz))
            .collect();
        let mut grad = dataset.backward(&lgrad);
        for (g, &wi) in grad.iter_mut().zip(&w) {
            *g += reg.deriv(wi);
        }
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let q = w.iter().map(|v| v * v).sum::<f64>() * inv_d;
        if step % cfg.record_every == 0 {
            steps.push(GdStep {
                step,
                q,
                objective: obj,
                grad_norm,
            });
        }
        if grad_norm < grad_tol {
            return GdTrajectory {
                steps,
                status: GdStatus::Converged,
                w,
                iterations: step,
            };
        }
        if obj < -1e8 || q > 1e6 {
            return GdTrajectory {
                steps,
                status: GdStatus::Diverged,
                w,
                iterations: step,
            };
        }
        // u = X·grad/√d lets any trial rate be evaluated in O(n)
        let u = dataset.forward(&grad);
        let mut accepted = false;
        let mut lr = base_lr;
        for _ in 0..60 {
            let w_try: Vec<f64> = w.iter().zip(&grad).map(|(&wi, &g)| wi - lr * g).collect();
            let z_try: Vec<f64> = z.iter().zip(&u).map(|(&zi, &ui)| zi - lr * ui).collect();
            let obj_try = objective_with_preactivations(dataset, loss, reg, &w_try, &z_try);
            if obj_try.is_finite() && obj_try < obj {
                w = w_try;
                z = z_try;
                obj = obj_try;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            // objective can no longer decrease in floating point
            return GdTrajectory {
                steps,
                status: GdStatus::Converged,
                w,
                iterations: step,
            };
        }
    }
    GdTrajectory {
        steps,
        status: GdStatus::MaxSteps,
        iterations: cfg.max_steps,
        w,
    }
}

/// Empirical overlaps of an estimate against the teacher.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Overlaps {
    pub m_d: f64,
    pub q_d: f64,
    pub rho_d: f64,
    /// `ρ_d − 2m_d + q_d`
    pub err_d: f64,
}

pub fn overlaps(w_hat: &[f64], teacher: &[f64]) -> Result<Overlaps, EmpiricsError> {
    if w_hat.len() != teacher.len() {
        return Err(EmpiricsError::LengthMismatch {
            lhs: w_hat.len(),
            rhs: teacher.len(),
        });
    }
    let d = w_hat.len() as f64;
    let m_d = dot(w_hat, teacher) / d;
    let q_d = dot(w_hat, w_hat) / d;
    let rho_d = dot(teacher, teacher) / d;
    Ok(Overlaps {
        m_d,
        q_d,
        rho_d,
        err_d: rho_d - 2.0 * m_d + q_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expect::{ChannelSpec, PhiSpec, TeacherPrior};
    use crate::saddle::Shell;
    use approx::assert_abs_diff_eq;

    fn small_model(alpha: f64) -> ModelSpec {
        ModelSpec {
            alpha,
            rho: 1.0,
            shell: Shell::free(),
            loss: LossSpec::l2(),
            reg: RegSpec::l2(0.1),
            channel: ChannelSpec::GaussianAdditive { delta: 0.5 },
            prior: TeacherPrior::Gaussian { rho: 1.0 },
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let model = ModelSpec {
            channel: ChannelSpec::Deterministic {
                phi: PhiSpec::Identity,
            },
            ..small_model(1.0)
        };
        let a = generate(&model, 4, 42);
        let b = generate(&model, 4, 42);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.teacher, b.teacher);
        assert_eq!(a.n, 4);
    }

    #[test]
    fn teacher_norm_is_exact_when_rescaled() {
        let model = small_model(0.5);
        let data = generate(&model, 300, 1);
        let rho_d: f64 = data.teacher.iter().map(|v| v * v).sum::<f64>() / 300.0;
        assert_abs_diff_eq!(rho_d, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_channel_yields_zero_labels() {
        let model = ModelSpec {
            channel: ChannelSpec::EpsilonContaminated {
                eps: 1.0,
                delta: 1.0,
                sigma: 0.0,
            },
            ..small_model(1.0)
        };
        let data = generate(&model, 16, 3);
        assert!(data.y.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn overlap_identities() {
        let model = small_model(1.0);
        let data = generate(&model, 64, 9);
        let t = &data.teacher;
        let o = overlaps(t, t).unwrap();
        assert_abs_diff_eq!(o.err_d, 0.0, epsilon = 1e-12);
        let zeros = vec![0.0; 64];
        let o = overlaps(&zeros, t).unwrap();
        assert_abs_diff_eq!(o.err_d, o.rho_d, epsilon = 1e-15);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        let o = overlaps(&neg, t).unwrap();
        assert_abs_diff_eq!(o.err_d, 4.0 * o.rho_d, epsilon = 1e-12);
        assert!(overlaps(&zeros[..10], t).is_err());
    }

    #[test]
    fn error_identity_matches_norm_difference() {
        let model = small_model(1.0);
        let data = generate(&model, 128, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w: Vec<f64> = (0..128)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let o = overlaps(&w, &data.teacher).unwrap();
        let diff: f64 = w
            .iter()
            .zip(&data.teacher)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 128.0;
        assert_abs_diff_eq!(o.err_d, diff, epsilon = 1e-12);
    }

    #[test]
    fn ridge_gd_reaches_normal_equations_solution() {
        let model = small_model(2.0);
        let data = generate(&model, 80, 11);
        let traj = erm_gd(
            &data,
            &model.loss,
            &model.reg,
            1.0,
            &GdCfg {
                max_steps: 50_000,
                ..Default::default()
            },
        );
        assert_eq!(traj.status, GdStatus::Converged);
        // residual of the ridge normal equations at the GD endpoint
        let z = data.forward(&traj.w);
        let r: Vec<f64> = data.y.iter().zip(&z).map(|(&y, &z)| z - y).collect();
        let mut g = data.backward(&r);
        for (gi, &wi) in g.iter_mut().zip(&traj.w) {
            *gi += 0.1 * wi;
        }
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(gn < 1e-5, "normal equation residual {gn}");
    }

    #[test]
    fn gd_multistart_agrees_for_convex_losses() {
        let model = small_model(2.0);
        let data = generate(&model, 60, 21);
        let mut objs = Vec::new();
        for seed in 0..4 {
            let traj = erm_gd(
                &data,
                &model.loss,
                &model.reg,
                0.5 + seed as f64 * 0.5,
                &GdCfg {
                    seed,
                    max_steps: 50_000,
                    grad_tol: Some(1e-9 * 60.0),
                    ..Default::default()
                },
            );
            objs.push(objective(&data, &model.loss, &model.reg, &traj.w));
        }
        for w in objs.windows(2) {
            assert!((w[0] - w[1]).abs() < 1e-4, "{objs:?}");
        }
    }
}
