//! Receding-horizon navigation with cross-entropy trajectory optimisation.
//!
//! The planning cost of a candidate control sequence is
//! `½ Σ u_throttle² + ‖p̂_H − p*‖²`, where the distance term is standardised
//! across the candidates of each CEM iteration so that energy and distance
//! trade off independently of how strongly the terrain damps motion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{DynamicsModel, LatentBelief, TerrainMode};
use crate::noise::{colored_sequence_ensemble, sample_actions};
use crate::sim::{observe, rollout, step, wrap_angle, Action, Observation, RobotParams, SimState, Transition};
use crate::terrain::{TerrainLayout, TerrainQuery};
use crate::{Error, Result};

/// Final goal distance (metres) up to which a navigation task succeeds.
pub const SUCCESS_RADIUS: f64 = 0.05;
/// Number of calibration transitions collected before planning.
pub const CALIBRATION_TRANSITIONS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CemConfig {
    pub horizon: usize,
    pub n_candidates: usize,
    pub n_elites: usize,
    pub n_iterations: usize,
    pub noise_omega: f64,
    pub init_std: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            horizon: 25,
            n_candidates: 200,
            n_elites: 20,
            n_iterations: 8,
            noise_omega: 0.5,
            init_std: 0.6,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.n_iterations == 0 {
            return Err(Error::Config("CEM horizon and iterations must be positive".into()));
        }
        if self.n_elites == 0 || self.n_elites >= self.n_candidates {
            return Err(Error::Config("CEM needs 0 < n_elites < n_candidates".into()));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) || !(self.noise_omega >= 0.0) {
            return Err(Error::Config("CEM init_std must be positive and noise_omega >= 0".into()));
        }
        Ok(())
    }
}

/// Energy `½ Σ u_throttle²` and squared terminal goal distance of one candidate.
pub fn plan_cost(actions: &[Action], terminal: [f64; 2], goal: [f64; 2]) -> (f64, f64) {
    let energy = 0.5 * actions.iter().map(|a| a.throttle * a.throttle).sum::<f64>();
    let distance = (terminal[0] - goal[0]).powi(2) + (terminal[1] - goal[1]).powi(2);
    (energy, distance)
}

/// Standardises distances to zero mean and unit (population) variance;
/// returns them unchanged when their spread is degenerate.
pub fn standardize_distances(d: &[f64]) -> Vec<f64> {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < 1e-12 || !std.is_finite() {
        return d.to_vec();
    }
    d.iter().map(|v| (v - mean) / std).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CemOutcome {
    /// Final sampling mean, clipped to `[−1, 1]²`.
    pub mean: Vec<Action>,
    /// Lowest-cost candidate seen in any iteration.
    pub best: Vec<Action>,
    /// Running minimum of candidate cost after each iteration.
    pub best_cost_history: Vec<f64>,
}

/// Generic CEM over `horizon × 2` control sequences. `cost` scores a whole
/// population at once (population-level normalisation needs all of it).
pub fn cem_optimize(
    cfg: &CemConfig,
    init_mean: &[Action],
    mut cost: impl FnMut(&[Vec<Action>]) -> Result<Vec<f64>>,
    rng: &mut impl Rng,
) -> Result<CemOutcome> {
    cfg.validate()?;
    let h = cfg.horizon;
    if init_mean.len() != h {
        return Err(Error::InvalidInput(format!("initial mean has {} steps, horizon is {h}", init_mean.len())));
    }
    let mut mean: Vec<[f64; 2]> = init_mean.iter().map(|a| [a.throttle, a.steer]).collect();
    let mut std = vec![[cfg.init_std; 2]; h];
    let mut best: Option<(f64, Vec<Action>)> = None;
    let mut history = Vec::with_capacity(cfg.n_iterations);
    for _ in 0..cfg.n_iterations {
        let candidates: Vec<Vec<Action>> = (0..cfg.n_candidates)
            .map(|_| {
                let e0 = colored_sequence_ensemble(cfg.noise_omega, h, rng);
                let e1 = colored_sequence_ensemble(cfg.noise_omega, h, rng);
                (0..h)
                    .map(|t| Action::new(mean[t][0] + std[t][0] * e0[t], mean[t][1] + std[t][1] * e1[t]).clipped())
                    .collect()
            })
            .collect();
        let costs = cost(&candidates)?;
        if costs.len() != candidates.len() || costs.iter().any(|c| c.is_nan()) {
            return Err(Error::Numeric {
                step: history.len(),
                detail: "CEM cost function returned invalid costs".into(),
            });
        }
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));
        let top = order[0];
        if best.as_ref().is_none_or(|(c, _)| costs[top] < *c) {
            best = Some((costs[top], candidates[top].clone()));
        }
        history.push(best.as_ref().expect("set above").0);
        let elites = &order[..cfg.n_elites];
        let k = elites.len() as f64;
        for t in 0..h {
            for d in 0..2 {
                let val = |i: usize| {
                    let a = candidates[i][t];
                    if d == 0 {
                        a.throttle
                    } else {
                        a.steer
                    }
                };
                let m = elites.iter().map(|&i| val(i)).sum::<f64>() / k;
                let v = elites.iter().map(|&i| (val(i) - m).powi(2)).sum::<f64>() / k;
                mean[t][d] = m;
                std[t][d] = v.sqrt();
            }
        }
    }
    Ok(CemOutcome {
        mean: mean.iter().map(|m| Action::new(m[0], m[1]).clipped()).collect(),
        best: best.expect("at least one iteration").1,
        best_cost_history: history,
    })
}

/// One CEM solve with the learned model, `β` fixed to the belief mean.
#[allow(clippy::too_many_arguments)]
pub fn cem_plan(
    model: &DynamicsModel,
    belief: &LatentBelief,
    x0: &Observation,
    tau0: [f64; 3],
    terrain: Option<&dyn TerrainQuery>,
    goal: [f64; 2],
    cfg: &CemConfig,
    warm_start: &[Action],
    rng: &mut impl Rng,
) -> Result<CemOutcome> {
    let cost = |cands: &[Vec<Action>]| -> Result<Vec<f64>> {
        let terminal = model.predict_terminal_batch(x0, tau0, cands, &belief.mean, terrain)?;
        let (energy, dist): (Vec<f64>, Vec<f64>) = cands
            .iter()
            .zip(&terminal)
            .map(|(c, x)| plan_cost(c, x.position(), goal))
            .unzip();
        let dist = standardize_distances(&dist);
        Ok(energy.iter().zip(&dist).map(|(e, d)| e + d).collect())
    };
    cem_optimize(cfg, warm_start, cost, rng)
}

/// Simulates `n` coloured-noise actions from `s0` on the target instance and
/// packages the transitions as a context set.
pub fn calibrate(
    layout: &TerrainLayout,
    params: &RobotParams,
    s0: &SimState,
    n: usize,
    omega: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Transition>> {
    let actions = sample_actions(omega, n, rng);
    Ok(rollout(s0, &actions, params, layout)?.transitions().collect())
}

/// The four evaluated model variants: ±terrain lookup × ±calibration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Variant {
    pub terrain_lookup: bool,
    pub calibrated: bool,
}

impl Variant {
    /// In table order: (−T,−C), (−T,+C), (+T,−C), (+T,+C).
    pub const ALL: [Variant; 4] = [
        Variant {
            terrain_lookup: false,
            calibrated: false,
        },
        Variant {
            terrain_lookup: false,
            calibrated: true,
        },
        Variant {
            terrain_lookup: true,
            calibrated: false,
        },
        Variant {
            terrain_lookup: true,
            calibrated: true,
        },
    ];

    pub fn label(self) -> &'static str {
        match (self.terrain_lookup, self.calibrated) {
            (false, false) => "-T,-C",
            (false, true) => "-T,+C",
            (true, false) => "+T,-C",
            (true, true) => "+T,+C",
        }
    }

    pub fn terrain_mode(self) -> TerrainMode {
        if self.terrain_lookup {
            TerrainMode::Lookup
        } else {
            TerrainMode::ObservedConcat
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant {s:?} (expected one of -T,-C / -T,+C / +T,-C / +T,+C)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavTask {
    pub start: SimState,
    pub goal: [f64; 2],
    pub step_limit: usize,
    pub terrain_id: u32,
    pub robot_params: RobotParams,
}

impl NavTask {
    pub fn validate(&self) -> Result<()> {
        self.robot_params.validate()?;
        if self.goal.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::InvalidInput("goal must lie in the unit square".into()));
        }
        if self.step_limit == 0 {
            return Err(Error::InvalidInput("step_limit must be positive".into()));
        }
        let s = &self.start;
        if ![s.px, s.py].iter().all(|v| (0.0..=1.0).contains(v)) || !s.v.is_finite() || !s.heading.is_finite() {
            return Err(Error::InvalidInput("start state outside the unit square".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub variant: Variant,
    pub actions: Vec<Action>,
    pub states: Vec<SimState>,
    /// `Σ u_throttle²` over the executed actions.
    pub throttle_energy: f64,
    pub final_goal_distance: f64,
    pub success: bool,
    /// Diagonal variance of the belief used for planning.
    pub belief_var: Vec<f64>,
}

/// Sum of squared throttle commands, accumulated in action order.
pub fn throttle_energy(actions: &[Action]) -> f64 {
    let mut e = 0.0;
    for a in actions {
        e += a.throttle * a.throttle;
    }
    e
}

/// Runs receding-horizon control for `task.step_limit` steps.
///
/// `rng` drives calibration actions and CEM sampling; using the same seed for
/// all variants of a task keeps comparisons paired.
pub fn mpc_navigate(
    task: &NavTask,
    layout: &TerrainLayout,
    model: &DynamicsModel,
    variant: Variant,
    cfg: &CemConfig,
    seed: u64,
) -> Result<PlanResult> {
    task.validate()?;
    cfg.validate()?;
    if model.terrain_mode() != variant.terrain_mode() {
        return Err(Error::InvalidInput(format!(
            "variant {} needs a {} model, got {}",
            variant.label(),
            variant.terrain_mode().label(),
            model.terrain_mode().label()
        )));
    }
    let mut cal_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan_rng = ChaCha8Rng::seed_from_u64(seed);
    plan_rng.set_stream(1);
    let context = if variant.calibrated {
        calibrate(layout, &task.robot_params, &task.start, CALIBRATION_TRANSITIONS, cfg.noise_omega, &mut cal_rng)?
    } else {
        Vec::new()
    };
    let belief = model.encode_context(&context);
    let terrain: Option<&dyn TerrainQuery> = variant.terrain_lookup.then_some(layout as &dyn TerrainQuery);

    let mut s = task.start;
    let mut states = vec![s];
    let mut actions = Vec::with_capacity(task.step_limit);
    let mut plan = vec![Action::default(); cfg.horizon];
    for n in 0..task.step_limit {
        let x = observe(&s);
        let tau = layout.feature_at(s.position());
        let out = cem_plan(model, &belief, &x, tau, terrain, task.goal, cfg, &plan, &mut plan_rng).map_err(|e| match e {
            Error::Numeric { detail, .. } => Error::Numeric {
                step: n,
                detail: format!("planning: {detail}"),
            },
            other => other,
        })?;
        let u = out.mean[0];
        s = step(&s, u, &task.robot_params, layout).map_err(|e| match e {
            Error::Numeric { detail, .. } => Error::Numeric { step: n, detail },
            other => other,
        })?;
        actions.push(u);
        states.push(s);
        plan = out.mean[1..].to_vec();
        plan.push(Action::default());
    }
    let p = s.position();
    let final_goal_distance = ((p[0] - task.goal[0]).powi(2) + (p[1] - task.goal[1]).powi(2)).sqrt();
    Ok(PlanResult {
        variant,
        throttle_energy: throttle_energy(&actions),
        actions,
        states,
        final_goal_distance,
        success: final_goal_distance <= SUCCESS_RADIUS,
        belief_var: belief.var,
    })
}

/// Absolute heading difference wrapped to `[0, π]`.
pub fn angle_error(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(std::f64::consts::TAU - d)
}
