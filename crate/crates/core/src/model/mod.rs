//! Context-conditional latent dynamics model.
//!
//! The initial observation is embedded as the hidden state of a GRU. Each
//! recurrence step consumes embeddings of the action, of the context variable
//! `β` and, in [`TerrainMode::Lookup`], of the terrain feature at the current
//! (predicted) position. Hidden states decode to diagonal Gaussians over
//! observations.
//!
//! The context encoder embeds each transition independently, aggregates with
//! an element-wise max (seeded with a learned sentinel vector, so the empty
//! set is well defined) and maps the aggregate to a diagonal Gaussian over
//! `β`. The variance head is non-increasing in every aggregate component,
//! which makes the predicted variance shrink monotonically as transitions
//! are added.

mod checkpoint;
mod elbo;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use elbo::{gaussian_kl, ElboOutput, TrainingSample};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Gru, Linear, Mat, Mlp, ParamStore, TensorId};
use crate::sim::{Action, Observation, Transition, ACTION_DIM, OBS_DIM, TERRAIN_DIM, TRANSITION_DIM};
use crate::terrain::TerrainQuery;
use crate::{Error, Result};

/// Lower bound added to decoded observation variances.
pub const DECODER_VAR_FLOOR: f64 = 1e-6;
/// Lower bound of the context variance head.
pub const CONTEXT_VAR_FLOOR: f64 = 1e-6;
/// Upper bound of the context variance head (prior-maximum variance).
pub const CONTEXT_VAR_MAX: f64 = 1.0;
const SENTINEL_INIT: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainMode {
    /// Terrain features are queried at predicted positions during rollouts.
    Lookup,
    /// Ablation: the terrain feature at the start is concatenated to the
    /// initial observation; no lookups afterwards.
    ObservedConcat,
}

impl TerrainMode {
    pub fn label(self) -> &'static str {
        match self {
            TerrainMode::Lookup => "lookup",
            TerrainMode::ObservedConcat => "concat",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub beta_dim: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub terrain_dim: usize,
    /// Width of every encoder's hidden and output layer.
    pub embed_dim: usize,
    pub gru_hidden: usize,
    pub terrain_mode: TerrainMode,
}

impl ModelConfig {
    /// Full-size architecture: 16-dim context, 200-unit embeddings and GRU.
    pub fn full(terrain_mode: TerrainMode) -> Self {
        Self {
            beta_dim: 16,
            obs_dim: OBS_DIM,
            action_dim: ACTION_DIM,
            terrain_dim: TERRAIN_DIM,
            embed_dim: 200,
            gru_hidden: 200,
            terrain_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim != OBS_DIM || self.action_dim != ACTION_DIM || self.terrain_dim != TERRAIN_DIM {
            return Err(Error::Config(format!(
                "model io dims must be obs={OBS_DIM}, action={ACTION_DIM}, terrain={TERRAIN_DIM}"
            )));
        }
        if self.beta_dim == 0 || self.embed_dim == 0 || self.gru_hidden == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.beta_dim > 4096 || self.embed_dim > 4096 || self.gru_hidden > 4096 {
            return Err(Error::Config("model widths must not exceed 4096".into()));
        }
        Ok(())
    }

    fn state_encoder_input(&self) -> usize {
        match self.terrain_mode {
            TerrainMode::Lookup => OBS_DIM,
            TerrainMode::ObservedConcat => OBS_DIM + TERRAIN_DIM,
        }
    }

    fn gru_input(&self) -> usize {
        match self.terrain_mode {
            TerrainMode::Lookup => 3 * self.embed_dim,
            TerrainMode::ObservedConcat => 2 * self.embed_dim,
        }
    }
}

/// Gaussian belief over the context variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentBelief {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Per-step Gaussians over observations for an open-loop prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedRollout {
    pub recon_mean: Observation,
    pub recon_var: [f64; OBS_DIM],
    /// Predictions for steps `1..=H`.
    pub means: Vec<Observation>,
    pub vars: Vec<[f64; OBS_DIM]>,
}

#[derive(Clone, Debug)]
pub(crate) struct Layers {
    pub e_x: Mlp,
    pub e_u: Mlp,
    pub e_tau: Option<Mlp>,
    pub e_beta: Mlp,
    pub gru: Gru,
    pub d_x: Mlp,
    pub e_trans: Mlp,
    pub sentinel: TensorId,
    pub d_beta_mu: Mlp,
    pub d_beta_var: Linear,
}

impl Layers {
    fn build(cfg: &ModelConfig, rng: &mut impl Rng) -> (ParamStore, Self) {
        let e = cfg.embed_dim;
        let h = cfg.gru_hidden;
        let mut s = ParamStore::default();
        let e_x = Mlp::new(&mut s, "e_x", cfg.state_encoder_input(), e, h, rng);
        let e_u = Mlp::new(&mut s, "e_u", ACTION_DIM, e, e, rng);
        let e_tau = (cfg.terrain_mode == TerrainMode::Lookup).then(|| Mlp::new(&mut s, "e_tau", TERRAIN_DIM, e, e, rng));
        let e_beta = Mlp::new(&mut s, "e_beta", cfg.beta_dim, e, e, rng);
        let gru = Gru::new(&mut s, "gru", cfg.gru_input(), h, rng);
        let d_x = Mlp::new(&mut s, "d_x", h, e, 2 * OBS_DIM, rng);
        let e_trans = Mlp::new(&mut s, "e_trans", TRANSITION_DIM, e, e, rng);
        let sentinel = s.add_constant("ctx_sentinel", e, SENTINEL_INIT);
        let d_beta_mu = Mlp::new(&mut s, "d_beta_mu", e, e, cfg.beta_dim, rng);
        // Raw weights pass through softplus, so the effective weights are >= 0.
        let d_beta_var = Linear::new(&mut s, "d_beta_var", e, cfg.beta_dim, rng);
        (
            s,
            Self {
                e_x,
                e_u,
                e_tau,
                e_beta,
                gru,
                d_x,
                e_trans,
                sentinel,
                d_beta_mu,
                d_beta_var,
            },
        )
    }

    /// Column offsets of the (terrain, action, context) blocks in the GRU input.
    fn gru_blocks(&self, embed: usize) -> (Option<usize>, usize, usize) {
        match self.e_tau {
            Some(_) => (Some(0), embed, 2 * embed),
            None => (None, 0, embed),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DynamicsModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub(crate) layers: Layers,
}

/// Decoded Gaussian from a raw decoder row.
fn decode_row(raw: &[f64]) -> ([f64; OBS_DIM], [f64; OBS_DIM]) {
    let mut mean = [0.0; OBS_DIM];
    let mut var = [0.0; OBS_DIM];
    for i in 0..OBS_DIM {
        mean[i] = raw[i];
        var[i] = crate::nn::softplus(raw[OBS_DIM + i]) + DECODER_VAR_FLOOR;
    }
    (mean, var)
}

impl DynamicsModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, layers) = Layers::build(&config, &mut rng);
        Ok(Self { config, params, layers })
    }

    pub fn terrain_mode(&self) -> TerrainMode {
        self.config.terrain_mode
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Aggregated context embedding: element-wise max over the sentinel and
    /// every transition encoding.
    pub fn aggregate_context(&self, ctx: &[Transition]) -> Vec<f64> {
        let p = &self.params.values;
        let mut z = self.layers.sentinel.slice(p).to_vec();
        if ctx.is_empty() {
            return z;
        }
        let x = transitions_matrix(ctx.iter());
        let enc = self.layers.e_trans.forward(p, &x);
        for r in 0..enc.rows {
            for (zj, &ej) in z.iter_mut().zip(enc.row(r)) {
                if ej > *zj {
                    *zj = ej;
                }
            }
        }
        z
    }

    /// Belief over `β` from an aggregated context embedding.
    pub fn belief_from_aggregate(&self, z: &[f64]) -> LatentBelief {
        let p = &self.params.values;
        let zm = Mat::from_vec(1, z.len(), z.to_vec());
        let mean = self.layers.d_beta_mu.forward(p, &zm).data;
        let pre = context_var_preactivation(p, &self.layers.d_beta_var, &zm);
        let var = pre.data.iter().map(|&a| context_var(a)).collect();
        LatentBelief { mean, var }
    }

    pub fn encode_context(&self, ctx: &[Transition]) -> LatentBelief {
        self.belief_from_aggregate(&self.aggregate_context(ctx))
    }

    /// Belief for the empty context set.
    pub fn prior_belief(&self) -> LatentBelief {
        self.encode_context(&[])
    }

    fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.config.beta_dim {
            return Err(Error::InvalidInput(format!(
                "context variable has {} dims, model expects {}",
                beta.len(),
                self.config.beta_dim
            )));
        }
        Ok(())
    }

    /// Open-loop prediction from `x0` under `actions`.
    ///
    /// In lookup mode `terrain` must be supplied; features at `n >= 1` are
    /// queried at the decoded mean position of the previous prediction.
    pub fn predict_rollout(
        &self,
        x0: &Observation,
        tau0: [f64; TERRAIN_DIM],
        actions: &[Action],
        beta: &[f64],
        terrain: Option<&dyn TerrainQuery>,
    ) -> Result<PredictedRollout> {
        let source = match (self.config.terrain_mode, terrain) {
            (TerrainMode::Lookup, None) => {
                return Err(Error::InvalidInput("lookup model requires a terrain map".into()))
            }
            (TerrainMode::Lookup, Some(t)) => FeatureSource::Lookup(t),
            (TerrainMode::ObservedConcat, _) => FeatureSource::None,
        };
        let actions = [actions.to_vec()];
        let mut out = self.rollout_batch(x0, tau0, &actions, beta, source, true)?;
        Ok(out.pop().expect("one rollout"))
    }

    /// Open-loop prediction with explicitly supplied features `τ_0..τ_{H−1}`
    /// (lookup models only).
    pub fn predict_with_features(
        &self,
        x0: &Observation,
        features: &[[f64; TERRAIN_DIM]],
        actions: &[Action],
        beta: &[f64],
    ) -> Result<PredictedRollout> {
        if self.config.terrain_mode != TerrainMode::Lookup {
            return Err(Error::InvalidInput("explicit feature sequences need a lookup model".into()));
        }
        if features.len() < actions.len().max(1) {
            return Err(Error::InvalidInput("feature sequence shorter than the action sequence".into()));
        }
        let actions = [actions.to_vec()];
        let mut out = self.rollout_batch(x0, features[0], &actions, beta, FeatureSource::Sequence(features), true)?;
        Ok(out.pop().expect("one rollout"))
    }

    /// Terminal mean observations for a batch of candidate action sequences of
    /// equal length, all starting from `x0`.
    pub fn predict_terminal_batch(
        &self,
        x0: &Observation,
        tau0: [f64; TERRAIN_DIM],
        candidates: &[Vec<Action>],
        beta: &[f64],
        terrain: Option<&dyn TerrainQuery>,
    ) -> Result<Vec<Observation>> {
        let source = match (self.config.terrain_mode, terrain) {
            (TerrainMode::Lookup, None) => {
                return Err(Error::InvalidInput("lookup model requires a terrain map".into()))
            }
            (TerrainMode::Lookup, Some(t)) => FeatureSource::Lookup(t),
            (TerrainMode::ObservedConcat, _) => FeatureSource::None,
        };
        let rollouts = self.rollout_batch(x0, tau0, candidates, beta, source, false)?;
        Ok(rollouts
            .into_iter()
            .map(|r| r.means.last().copied().unwrap_or(r.recon_mean))
            .collect())
    }

    fn rollout_batch(
        &self,
        x0: &Observation,
        tau0: [f64; TERRAIN_DIM],
        candidates: &[Vec<Action>],
        beta: &[f64],
        source: FeatureSource<'_>,
        record_all: bool,
    ) -> Result<Vec<PredictedRollout>> {
        self.check_beta(beta)?;
        let p = &self.params.values;
        let l = &self.layers;
        let rows = candidates.len();
        let horizon = candidates.first().map_or(0, Vec::len);
        if candidates.iter().any(|c| c.len() != horizon) {
            return Err(Error::InvalidInput("candidate sequences differ in length".into()));
        }
        if rows == 0 {
            return Ok(Vec::new());
        }
        if x0.0.iter().chain(&tau0).chain(beta).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite model input".into()));
        }
        let embed = self.config.embed_dim;
        let (tau_col, u_col, beta_col) = l.gru_blocks(embed);

        let x_in = match self.config.terrain_mode {
            TerrainMode::Lookup => Mat::from_vec(1, OBS_DIM, x0.0.to_vec()),
            TerrainMode::ObservedConcat => {
                let mut v = x0.0.to_vec();
                v.extend_from_slice(&tau0);
                Mat::from_vec(1, OBS_DIM + TERRAIN_DIM, v)
            }
        };
        let z0 = l.e_x.forward(p, &x_in);
        let mut h = Mat::zeros(rows, self.config.gru_hidden);
        for r in 0..rows {
            h.row_mut(r).copy_from_slice(z0.row(0));
        }
        let recon = decode_row(l.d_x.forward(p, &z0).row(0));

        let e_beta = l.e_beta.forward(p, &Mat::from_vec(1, beta.len(), beta.to_vec()));
        let g_beta = l.gru.input_gates_block(p, &e_beta, beta_col, true);

        // Action embeddings for all steps at once, step-major.
        let mut u_flat = Vec::with_capacity(horizon * rows * ACTION_DIM);
        for n in 0..horizon {
            for c in candidates {
                let a = c[n].clipped();
                u_flat.push(a.throttle);
                u_flat.push(a.steer);
            }
        }
        let e_u = l.e_u.forward(p, &Mat::from_vec(horizon * rows, ACTION_DIM, u_flat));
        let g_u = l.gru.input_gates_block(p, &e_u, u_col, false);

        let mut tau = vec![tau0; rows];
        let mut means: Vec<Vec<Observation>> = vec![Vec::with_capacity(horizon); rows];
        let mut vars: Vec<Vec<[f64; OBS_DIM]>> = vec![Vec::with_capacity(horizon); rows];
        let g3 = 3 * self.config.gru_hidden;
        let needs_decode = |n: usize| record_all || n + 1 == horizon || matches!(source, FeatureSource::Lookup(_));
        for n in 0..horizon {
            let mut gi = g_u.rows_slice(n * rows, rows);
            for r in 0..rows {
                gi.row_mut(r).iter_mut().zip(g_beta.row(0)).for_each(|(a, b)| *a += b);
            }
            if let (Some(col), Some(e_tau)) = (tau_col, &l.e_tau) {
                if let FeatureSource::Sequence(seq) = source {
                    tau.iter_mut().for_each(|t| *t = seq[n]);
                }
                let t_in = Mat::from_vec(rows, TERRAIN_DIM, tau.iter().flatten().copied().collect());
                let e_t = e_tau.forward(p, &t_in);
                gi.add_assign(&l.gru.input_gates_block(p, &e_t, col, false));
            }
            debug_assert_eq!(gi.cols, g3);
            let cache = l.gru.step(p, &gi.data, &h);
            h = Gru::output(&cache);
            if needs_decode(n) {
                let raw = l.d_x.forward(p, &h);
                for r in 0..rows {
                    let (m, v) = decode_row(raw.row(r));
                    if let FeatureSource::Lookup(map) = source {
                        tau[r] = map.feature([m[0], m[1]]);
                    }
                    if record_all || n + 1 == horizon {
                        means[r].push(Observation(m));
                        vars[r].push(v);
                    }
                }
            }
        }
        let out: Vec<PredictedRollout> = means
            .into_iter()
            .zip(vars)
            .map(|(means, vars)| PredictedRollout {
                recon_mean: Observation(recon.0),
                recon_var: recon.1,
                means,
                vars,
            })
            .collect();
        if out.iter().any(|r| r.means.iter().flat_map(|m| m.0).any(|v| !v.is_finite())) {
            return Err(Error::Numeric {
                step: 0,
                detail: "non-finite predicted mean".into(),
            });
        }
        Ok(out)
    }
}

#[derive(Clone, Copy)]
enum FeatureSource<'a> {
    Lookup(&'a dyn TerrainQuery),
    Sequence(&'a [[f64; TERRAIN_DIM]]),
    None,
}

pub(crate) fn transitions_matrix<'a>(ctx: impl Iterator<Item = &'a Transition>) -> Mat {
    let mut data = Vec::new();
    for t in ctx {
        data.extend_from_slice(&t.flatten());
    }
    Mat::from_vec(data.len() / TRANSITION_DIM, TRANSITION_DIM, data)
}

/// `z · softplus(W_raw) + b`, evaluated with a fixed summation order so the
/// result is monotone in every component of `z` under rounding.
pub(crate) fn context_var_preactivation(p: &[f64], head: &Linear, z: &Mat) -> Mat {
    let (e, d) = (head.fan_in(), head.fan_out());
    let w = head.w.slice(p);
    let b = head.b.slice(p);
    let mut out = Mat::zeros(z.rows, d);
    for r in 0..z.rows {
        let zr = z.row(r);
        for j in 0..d {
            let mut acc = b[j];
            for i in 0..e {
                acc += zr[i] * crate::nn::softplus(w[i * d + j]);
            }
            out.data[r * d + j] = acc;
        }
    }
    out
}

/// Context variance for a pre-activation; non-increasing, in `[floor, max]`.
pub(crate) fn context_var(pre: f64) -> f64 {
    CONTEXT_VAR_FLOOR + (CONTEXT_VAR_MAX - CONTEXT_VAR_FLOOR) / (1.0 + pre.exp())
}
