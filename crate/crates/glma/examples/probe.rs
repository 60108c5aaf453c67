use glma::expect::{ChannelSpec, QuadSpec, Quadrature, TeacherPrior};
use glma::prox::{LossSpec, RegSpec};
use glma::saddle::*;
use std::time::Instant;

fn main() {
    let model = ModelSpec {
        alpha: 10.0,
        rho: 1.0,
        shell: Shell::free(),
        loss: LossSpec::huber(1.0),
        reg: RegSpec::zero(),
        channel: ChannelSpec::EpsilonContaminated { eps: 0.3, delta: 1.0, sigma: 5.0 },
        prior: TeacherPrior::Gaussian { rho: 1.0 },
    };
    for order in [61usize, 101, 201] {
        let quad = Quadrature::new(QuadSpec::with_order(order)).unwrap();
        let t0 = Instant::now();
        let mut cfg = SolveCfg::default();
        cfg.tol = 1e-9;
        let mut warm: Option<OrderParameters> = None;
        let mut best = (0.0, -1e9);
        for i in 0..25 {
            let q = 2.0 + 4.0 * i as f64 / 24.0;
            let dq = 1e-4 * q;
            let mut h_at = |qq: f64| -> f64 {
                let m2 = ModelSpec { shell: Shell::pinned(qq), ..model.clone() };
                let mut c2 = cfg;
                c2.init = warm;
                let sol = solve(&m2, &c2, &quad).unwrap();
                warm = Some(sol.params);
                sol.simplified_energy
            };
            let dh = (h_at(q + dq) - h_at(q - dq)) / (2.0 * dq);
            if dh > best.1 { best = (q, dh); }
            if order == 101 { println!("q {:6.3} dh {:9.6}", q, dh); }
        }
        println!("order {order}: peak dh {:.6} at q {:.3} ({:?})", best.1, best.0, t0.elapsed());
    }
}
