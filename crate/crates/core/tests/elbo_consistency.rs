//! The training objective recomputed from the public prediction API.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tradyn::model::{gaussian_kl, DynamicsModel, ModelConfig, PredictedRollout, TerrainMode, TrainingSample};
use tradyn::noise::sample_actions;
use tradyn::sim::{observe, rollout, sample_initial_state, sample_robot_params, InitRange, Observation, OBS_DIM};

fn nll(mean: &Observation, var: &[f64; OBS_DIM], target: &Observation) -> f64 {
    (0..OBS_DIM)
        .map(|i| {
            let d = target.0[i] - mean.0[i];
            0.5 * ((2.0 * std::f64::consts::PI).ln() + var[i].ln() + d * d / var[i])
        })
        .sum()
}

fn sample(seed: u64, horizon: usize, n_ctx: usize) -> TrainingSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = tradyn::terrain::generate_terrain(seed);
    let params = sample_robot_params(&mut rng);
    let s0 = sample_initial_state(&mut rng, InitRange::Training);
    let d = rollout(&s0, &sample_actions(0.5, horizon, &mut rng), &params, &layout).unwrap();
    let s1 = sample_initial_state(&mut rng, InitRange::Training);
    let c = rollout(&s1, &sample_actions(0.5, n_ctx, &mut rng), &params, &layout).unwrap();
    TrainingSample {
        observations: d.states.iter().map(observe).collect(),
        features: d.features.clone(),
        actions: d.actions.clone(),
        context: c.transitions().collect(),
    }
}

fn step(model: &DynamicsModel, s: &TrainingSample, n: usize, len: usize, beta: &[f64]) -> PredictedRollout {
    let x = &s.observations[n];
    let u = &s.actions[n..n + len];
    match model.config.terrain_mode {
        TerrainMode::Lookup => model.predict_with_features(x, &s.features[n..n + len], u, beta).unwrap(),
        TerrainMode::ObservedConcat => model.predict_rollout(x, s.features[n], u, beta, None).unwrap(),
    }
}

fn oracle_loss(model: &DynamicsModel, s: &TrainingSample, lambda: f64, rng_seed: u64) -> f64 {
    let horizon = s.actions.len();
    let prior = model.encode_context(&s.context);
    let mut all = s.context.clone();
    all.extend(s.target_transitions());
    let post = model.encode_context(&all);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let beta: Vec<f64> = (0..post.mean.len())
        .map(|j| post.mean[j] + post.var[j].sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let open = step(model, s, 0, horizon, &beta);
    let mut total = nll(&open.recon_mean, &open.recon_var, &s.observations[0]);
    for n in 0..horizon {
        total += nll(&open.means[n], &open.vars[n], &s.observations[n + 1]);
        let one = step(model, s, n, 1, &beta);
        total += nll(&one.means[0], &one.vars[0], &s.observations[n + 1]);
    }
    total + lambda * gaussian_kl(&post.mean, &post.var, &prior.mean, &prior.var)
}

#[test]
fn elbo_matches_prediction_api() {
    for mode in [TerrainMode::Lookup, TerrainMode::ObservedConcat] {
        for seed in 0..4 {
            let cfg = ModelConfig {
                embed_dim: 16,
                gru_hidden: 16,
                ..ModelConfig::full(mode)
            };
            let model = DynamicsModel::new(cfg, seed).unwrap();
            let s = sample(seed + 40, 12, 8);
            let got = model.elbo_loss(std::slice::from_ref(&s), 5.0, &mut ChaCha8Rng::seed_from_u64(seed), false).unwrap().loss;
            let want = oracle_loss(&model, &s, 5.0, seed);
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{mode:?} seed {seed}: {got} vs {want}");
        }
    }
}
