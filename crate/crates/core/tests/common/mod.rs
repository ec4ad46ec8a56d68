//! Reference implementations used as test oracles. They share no code with
//! the library beyond its public data types.
#![allow(dead_code)]

use tradyn::sim::{Action, RobotParams, SimState};

/// Fixed-step explicit Euler over one 0.01 s control period with `dt = 1e-5`.
///
/// Velocity is integrated exactly within a substep (the acceleration is
/// piecewise constant); when it would cross zero while decelerating the robot
/// stops there, and it stays at rest while throttle cannot beat friction.
pub fn euler_step(s: &SimState, u: Action, p: &RobotParams, mu: f64) -> SimState {
    let u = Action::new(u.throttle.clamp(-1.0, 1.0), u.steer.clamp(-1.0, 1.0));
    let heading = (s.heading + u.steer * p.steer_gain).rem_euclid(std::f64::consts::TAU);
    let (c, sn) = (heading.cos(), heading.sin());
    let force = u.throttle * p.throttle_gain;
    let friction = mu * p.mass * 9.81;
    let (mut x, mut y, mut v) = (s.px, s.py, s.v);
    let n = 1000;
    let dt = 0.01 / n as f64;
    for _ in 0..n {
        // A zero crossing splits the substep; the remainder continues with
        // the post-stop force balance.
        let mut remaining = dt;
        while remaining > 0.0 {
            let dir = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else if force.abs() > friction {
                force.signum()
            } else {
                0.0
            };
            if dir == 0.0 {
                break;
            }
            let a = (force - dir * friction) / p.mass;
            let mut h = remaining;
            let mut v_new = v + a * h;
            if v != 0.0 && v_new * v <= 0.0 {
                h = -v / a;
                v_new = 0.0;
            }
            x += c * v * h;
            y += sn * v * h;
            v = v_new;
            remaining -= h;
        }
    }
    SimState::new(x.clamp(0.0, 1.0), y.clamp(0.0, 1.0), v.clamp(-5.0, 5.0), heading)
}

/// Two-sided exact signed-rank p-value by enumerating all sign assignments.
pub fn wilcoxon_enumeration(d: &[f64]) -> f64 {
    let d: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    // Average ranks of |d| by counting (O(n²), independent of any sort).
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|a| {
            let less = abs.iter().filter(|b| *b < a).count() as f64;
            let equal = abs.iter().filter(|b| *b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total: f64 = ranks.iter().sum();
    let observed = w_plus.min(total - w_plus);
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= observed + 1e-9 {
            hits += 1;
        }
    }
    (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0)
}

/// Periodogram slope by a direct O(n²) DFT on a log-spaced subset of bins
/// in the central decade.
pub fn dft_slope(x: &[f64]) -> f64 {
    let n = x.len();
    let half = n / 2;
    let center = (half as f64).sqrt();
    let lo = (center / 10f64.sqrt()).ceil() as usize;
    let hi = (center * 10f64.sqrt()).floor() as usize;
    let mut pts = Vec::new();
    for k in lo..=hi {
        let w = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            re += v * (w * t as f64).cos();
            im += v * (w * t as f64).sin();
        }
        pts.push(((k as f64).ln(), (re * re + im * im).ln()));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Relative error `‖a − b‖ / max(‖b‖, 1)` over (px, py, v).
pub fn state_rel_error(a: &SimState, b: &SimState) -> f64 {
    let d = ((a.px - b.px).powi(2) + (a.py - b.py).powi(2) + (a.v - b.v).powi(2)).sqrt();
    let r = (b.px.powi(2) + b.py.powi(2) + b.v.powi(2)).sqrt();
    d / r.max(1.0)
}

/// Largest per-tensor relative L2 error between analytic ELBO gradients and
/// central finite differences (h = 1e-4) on a 5-unit model.
pub fn elbo_gradient_error(mode: tradyn::model::TerrainMode) -> f64 {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tradyn::model::{DynamicsModel, ModelConfig, TrainingSample};
    use tradyn::noise::sample_actions;
    use tradyn::sim::{observe, rollout, sample_initial_state, sample_robot_params, InitRange};

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layout = tradyn::terrain::generate_terrain(5);
    let batch: Vec<TrainingSample> = (0..3)
        .map(|i| {
            let params = sample_robot_params(&mut rng);
            let s0 = sample_initial_state(&mut rng, InitRange::Training);
            let acts = sample_actions(0.5, 4, &mut rng);
            let d = rollout(&s0, &acts, &params, &layout).unwrap();
            let s1 = sample_initial_state(&mut rng, InitRange::Training);
            let acts = sample_actions(0.5, 6, &mut rng);
            let c = rollout(&s1, &acts, &params, &layout).unwrap();
            TrainingSample {
                observations: d.states.iter().map(observe).collect(),
                features: d.features.clone(),
                actions: d.actions.clone(),
                context: c.transitions().take(i % 4).collect(),
            }
        })
        .collect();
    let cfg = ModelConfig {
        embed_dim: 5,
        gru_hidden: 5,
        ..ModelConfig::full(mode)
    };
    let mut model = DynamicsModel::new(cfg, 11).unwrap();
    let eps_rng = || ChaCha8Rng::seed_from_u64(99);
    let analytic = model.elbo_loss(&batch, 5.0, &mut eps_rng(), true).unwrap().grads;
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for spec in model.params.specs.clone() {
        let mut fd = Vec::with_capacity(spec.len());
        for i in spec.offset..spec.offset + spec.len() {
            let orig = model.params.values[i];
            model.params.values[i] = orig + h;
            let up = model.elbo_loss(&batch, 5.0, &mut eps_rng(), false).unwrap().loss;
            model.params.values[i] = orig - h;
            let down = model.elbo_loss(&batch, 5.0, &mut eps_rng(), false).unwrap().loss;
            model.params.values[i] = orig;
            fd.push((up - down) / (2.0 * h));
        }
        let an = &analytic[spec.offset..spec.offset + spec.len()];
        let diff: f64 = fd.iter().zip(an).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1e-8));
    }
    worst
}
