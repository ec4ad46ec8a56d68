use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tradyn::model::*;
use tradyn::sim::*;
use tradyn::terrain::{TerrainLayout, TerrainQuery};

fn small(mode: TerrainMode) -> ModelConfig {
    ModelConfig {
        embed_dim: 24,
        gru_hidden: 24,
        ..ModelConfig::full(mode)
    }
}

fn random_transition(rng: &mut ChaCha8Rng) -> Transition {
    let mut obs = || {
        let s = sample_initial_state(rng, InitRange::Training);
        observe(&s)
    };
    let (x, x_next) = (obs(), obs());
    let mut feat = || [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
    let (tau, tau_next) = (feat(), feat());
    Transition {
        x,
        tau,
        u: Action::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        x_next,
        tau_next,
    }
}

fn context(seed: u64, n: usize) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_transition(&mut rng)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn context_belief_is_permutation_invariant(seed in any::<u64>(), n in 0usize..40, model_seed in 0u64..4) {
        let model = DynamicsModel::new(small(TerrainMode::Lookup), model_seed).unwrap();
        let ctx = context(seed, n);
        let mut shuffled = ctx.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        prop_assert_eq!(model.encode_context(&ctx), model.encode_context(&shuffled));
    }

    #[test]
    fn variance_shrinks_under_context_supersets(seed in any::<u64>(), n in 1usize..40, model_seed in 0u64..4) {
        let model = DynamicsModel::new(small(TerrainMode::ObservedConcat), model_seed).unwrap();
        let ctx = context(seed, n);
        let k = (seed % (n as u64 + 1)) as usize;
        let sub = model.encode_context(&ctx[..k]);
        let sup = model.encode_context(&ctx);
        for (a, b) in sup.var.iter().zip(&sub.var) {
            prop_assert!(a <= b, "{a} > {b}");
        }
        prop_assert!(sup.var.iter().all(|v| *v >= CONTEXT_VAR_FLOOR && *v <= CONTEXT_VAR_MAX));
    }

    #[test]
    fn decoder_variances_are_positive(seed in any::<u64>(), len in 1usize..20) {
        let model = DynamicsModel::new(small(TerrainMode::ObservedConcat), seed % 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = observe(&sample_initial_state(&mut rng, InitRange::Training));
        let actions = tradyn::noise::sample_actions(0.5, len, &mut rng);
        let beta: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
        let out = model.predict_rollout(&x0, [0.2, 0.4, 0.6], &actions, &beta, None).unwrap();
        prop_assert_eq!(out.means.len(), len);
        for v in out.vars.iter().flatten().chain(&out.recon_var) {
            prop_assert!(*v >= DECODER_VAR_FLOOR && v.is_finite());
        }
    }
}

#[test]
fn monotonicity_over_a_thousand_nested_pairs() {
    let model = DynamicsModel::new(small(TerrainMode::Lookup), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..1000 {
        let n = rng.random_range(1..=50);
        let ctx = context(i, n);
        let k = rng.random_range(0..n);
        let sub = model.encode_context(&ctx[..k]).var;
        let sup = model.encode_context(&ctx).var;
        assert!(sup.iter().zip(&sub).all(|(a, b)| a <= b), "pair {i}");
    }
}

#[test]
fn uniform_terrain_lookup_equals_constant_feature_sequence() {
    let model = DynamicsModel::new(small(TerrainMode::Lookup), 5).unwrap();
    let layout = TerrainLayout::uniform([40, 200, 90]);
    let tau = layout.feature_at([0.5, 0.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x0 = observe(&sample_initial_state(&mut rng, InitRange::Evaluation));
    let actions = tradyn::noise::sample_actions(0.5, 30, &mut rng);
    let beta = model.prior_belief().mean;
    let a = model.predict_rollout(&x0, tau, &actions, &beta, Some(&layout as &dyn TerrainQuery)).unwrap();
    let b = model.predict_with_features(&x0, &vec![tau; 30], &actions, &beta).unwrap();
    assert_eq!(a.means, b.means);
    assert_eq!(a.vars, b.vars);
}

#[test]
fn terminal_batch_matches_individual_rollouts() {
    let model = DynamicsModel::new(small(TerrainMode::Lookup), 8).unwrap();
    let layout = tradyn::terrain::generate_terrain(4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s0 = sample_initial_state(&mut rng, InitRange::Evaluation);
    let x0 = observe(&s0);
    let tau0 = layout.feature_at(s0.position());
    let cands: Vec<Vec<Action>> = (0..5).map(|_| tradyn::noise::sample_actions(0.5, 12, &mut rng)).collect();
    let beta = model.prior_belief().mean;
    let batch = model.predict_terminal_batch(&x0, tau0, &cands, &beta, Some(&layout)).unwrap();
    for (c, t) in cands.iter().zip(&batch) {
        let single = model.predict_rollout(&x0, tau0, c, &beta, Some(&layout)).unwrap();
        let last = single.means.last().unwrap();
        for (p, q) in last.0.iter().zip(&t.0) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let model = DynamicsModel::new(small(TerrainMode::ObservedConcat), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&Checkpoint { model: model.clone(), step: 17 }, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.step, 17);
    let ctx = context(1, 10);
    assert_eq!(back.model.encode_context(&ctx), model.encode_context(&ctx));
    assert_eq!(back.model.params.values, model.params.values);
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let model = DynamicsModel::new(small(TerrainMode::Lookup), 2).unwrap();
    let bytes = encode_checkpoint(&Checkpoint { model, step: 0 });
    assert!(decode_checkpoint(&bytes[..bytes.len() - 4]).is_err());
    assert!(decode_checkpoint(b"TRDYNCKP").is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_checkpoint(&bad).is_err());
    let mut nan = bytes.clone();
    let n = nan.len();
    nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(decode_checkpoint(&nan).is_err());
}
