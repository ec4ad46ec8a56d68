//! Artifact-producing stages of the experiment, each writing a manifest.
//!
//! A full run directory looks like
//!
//! ```text
//! terrains/      terrain_XXX.png + terrain_XXX.json
//! data/          dataset.jsonl
//! models/        seed_N/{lookup,concat}/final.ckpt, training.csv, validation.csv
//! eval_predict/  prediction.csv, prediction.png
//! eval_plan/     planning_table.csv, pairwise.csv, plan_records.csv, pairwise.png
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::dataset::{generate_dataset, load_dataset, save_dataset, Dataset};
use crate::eval::{
    eval_planning, eval_prediction, make_nav_tasks, make_prediction_cases, pairwise_csv, pairwise_plot, plan_records_csv,
    planning_table, planning_table_csv, prediction_csv, prediction_plot, PlanningTable, PredictionMetrics, SeedModels,
};
use crate::manifest::RunManifest;
use crate::model::{load_checkpoint, DynamicsModel, TerrainMode};
use crate::planner::{mpc_navigate, NavTask, PlanResult, Variant};
use crate::render::{render_overlay, VARIANT_COLORS};
use crate::terrain::{load_terrain, load_terrain_sets, make_terrain_sets, save_terrain_sets, TerrainLayout, TerrainSets};
use crate::train::train;
use crate::{Error, Result};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

fn config_json(cfg: &PipelineConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serialises")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn gen_terrains(master_seed: u64, out: &Path) -> Result<TerrainSets> {
    create_dir(out)?;
    let manifest = RunManifest::new("gen-terrains", serde_json::json!({ "master_seed": master_seed }), vec![master_seed]);
    let sets = make_terrain_sets(master_seed);
    save_terrain_sets(&sets, out)?;
    manifest.finish(out)?;
    Ok(sets)
}

pub fn gen_data(cfg: &PipelineConfig, terrains_dir: &Path, out: &Path) -> Result<Dataset> {
    let sets = load_terrain_sets(terrains_dir)?;
    create_dir(out)?;
    let mut manifest = RunManifest::new("gen-data", config_json(cfg), vec![cfg.data.seed]);
    manifest.add_input(terrains_dir)?;
    let ds = generate_dataset(&cfg.data, &sets)?;
    save_dataset(&ds, &out.join(DATASET_FILE))?;
    manifest.finish(out)?;
    Ok(ds)
}

/// Checkpoint directory of one trained model.
pub fn model_dir(models: &Path, seed_index: usize, mode: TerrainMode) -> PathBuf {
    models.join(format!("seed_{seed_index}")).join(mode.label())
}

/// Trains `n_model_seeds` × {lookup, concat} models.
pub fn train_models(cfg: &PipelineConfig, data_path: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(data_path)?;
    create_dir(out)?;
    let seeds: Vec<u64> = (0..cfg.n_model_seeds).map(|i| cfg.model_seed(i)).collect();
    let mut manifest = RunManifest::new("train", config_json(cfg), seeds);
    manifest.add_input(data_path)?;
    let jobs: Vec<(usize, TerrainMode)> = (0..cfg.n_model_seeds)
        .flat_map(|i| [TerrainMode::Lookup, TerrainMode::ObservedConcat].map(|m| (i, m)))
        .collect();
    jobs.par_iter()
        .map(|&(i, mode)| {
            let dir = model_dir(out, i, mode);
            let mut tc = cfg.train.clone();
            tc.seed = cfg.model_seed(i);
            log::info!("training seed {i} ({})", mode.label());
            let outcome = train(&cfg.model.model_config(mode), &tc, &ds, Some(&dir))?;
            let mut curve = String::from("step,loss\n");
            for (k, l) in outcome.losses.iter().enumerate() {
                let _ = writeln!(curve, "{},{l}", k + 1);
            }
            write(&dir.join("training.csv"), curve)?;
            let mut val = String::from("step,loss,one_step_rmse\n");
            for r in &outcome.validation {
                let _ = writeln!(val, "{},{},{}", r.step, r.loss, r.one_step_rmse);
            }
            write(&dir.join("validation.csv"), val)
        })
        .collect::<Result<Vec<()>>>()?;
    manifest.finish(out)?;
    Ok(())
}

fn load_model(path: &Path, mode: TerrainMode) -> Result<DynamicsModel> {
    let model = load_checkpoint(path)?.model;
    if model.terrain_mode() != mode {
        return Err(Error::Incompatible {
            expected: format!("{} model at {}", mode.label(), path.display()),
            found: format!("{} model", model.terrain_mode().label()),
        });
    }
    Ok(model)
}

/// Loads `seed_0, seed_1, …` until the first missing seed directory.
pub fn load_models(models: &Path) -> Result<Vec<SeedModels>> {
    let mut out = Vec::new();
    while models.join(format!("seed_{}", out.len())).is_dir() {
        let i = out.len();
        out.push(SeedModels {
            lookup: load_model(&model_dir(models, i, TerrainMode::Lookup).join(FINAL_CHECKPOINT), TerrainMode::Lookup)?,
            concat: load_model(
                &model_dir(models, i, TerrainMode::ObservedConcat).join(FINAL_CHECKPOINT),
                TerrainMode::ObservedConcat,
            )?,
        });
    }
    if out.is_empty() {
        return Err(Error::Format(format!("no seed_N model directories under {}", models.display())));
    }
    Ok(out)
}

pub fn eval_predict(cfg: &PipelineConfig, models_dir: &Path, terrains_dir: &Path, out: &Path) -> Result<Vec<PredictionMetrics>> {
    let models = load_models(models_dir)?;
    let sets = load_terrain_sets(terrains_dir)?;
    create_dir(out)?;
    let mut manifest = RunManifest::new("eval-predict", config_json(cfg), vec![cfg.eval.seed]);
    manifest.add_input(models_dir)?;
    manifest.add_input(terrains_dir)?;
    let e = &cfg.eval;
    let cases = make_prediction_cases(&sets.test, e.n_prediction_rollouts, e.prediction_len, e.omega, e.seed)?;
    let metrics = eval_prediction(&models, &cases, &sets.test)?;
    write(&out.join("prediction.csv"), prediction_csv(&metrics))?;
    prediction_plot(&metrics).save(&out.join("prediction.png"))?;
    manifest.finish(out)?;
    Ok(metrics)
}

pub fn eval_plan(cfg: &PipelineConfig, models_dir: &Path, terrains_dir: &Path, out: &Path) -> Result<PlanningTable> {
    let models = load_models(models_dir)?;
    let sets = load_terrain_sets(terrains_dir)?;
    create_dir(out)?;
    let mut manifest = RunManifest::new("eval-plan", config_json(cfg), vec![cfg.eval.seed]);
    manifest.add_input(models_dir)?;
    manifest.add_input(terrains_dir)?;
    let e = &cfg.eval;
    let tasks = make_nav_tasks(&sets.test, e.n_tasks, e.step_limit, e.seed)?;
    let records = eval_planning(&models, &tasks, &sets.test, &cfg.cem, e.seed)?;
    let table = planning_table(&records)?;
    write(&out.join("plan_records.csv"), plan_records_csv(&records))?;
    write(&out.join("planning_table.csv"), planning_table_csv(&table))?;
    write(&out.join("pairwise.csv"), pairwise_csv(&table))?;
    pairwise_plot(&table).save(&out.join("pairwise.png"))?;
    manifest.finish(out)?;
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub prediction: Vec<PredictionMetrics>,
    pub planning: PlanningTable,
    /// Relative CSV path → content hash, over the whole run directory.
    pub csv_hashes: std::collections::BTreeMap<String, String>,
}

pub fn csv_hashes(run_dir: &Path) -> Result<std::collections::BTreeMap<String, String>> {
    Ok(crate::manifest::tree_hashes(run_dir)?
        .into_iter()
        .filter(|(k, _)| k.ends_with(".csv"))
        .collect())
}

/// Every stage in sequence.
pub fn run_all(cfg: &PipelineConfig, out: &Path) -> Result<RunSummary> {
    let terrains = out.join("terrains");
    let data = out.join("data");
    let models = out.join("models");
    gen_terrains(cfg.master_seed, &terrains)?;
    gen_data(cfg, &terrains, &data)?;
    train_models(cfg, &data.join(DATASET_FILE), &models)?;
    let prediction = eval_predict(cfg, &models, &terrains, &out.join("eval_predict"))?;
    let planning = eval_plan(cfg, &models, &terrains, &out.join("eval_plan"))?;
    write(&out.join("config.toml"), cfg.to_toml())?;
    Ok(RunSummary {
        prediction,
        planning,
        csv_hashes: csv_hashes(out)?,
    })
}

/// A single navigation episode with an overlay rendering.
pub struct DemoOutcome {
    pub result: PlanResult,
    pub overlay_png: Vec<u8>,
}

pub fn demo_nav(
    checkpoint: &Path,
    terrain_png: &Path,
    task: &NavTask,
    variant: Variant,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<DemoOutcome> {
    let model = load_model(checkpoint, variant.terrain_mode())?;
    let (layout, _) = load_terrain(terrain_png)?;
    demo_nav_with(&model, &layout, task, variant, cfg, seed)
}

pub fn demo_nav_with(
    model: &DynamicsModel,
    layout: &TerrainLayout,
    task: &NavTask,
    variant: Variant,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<DemoOutcome> {
    let result = mpc_navigate(task, layout, model, variant, &cfg.cem, seed)?;
    let idx = Variant::ALL.iter().position(|&v| v == variant).expect("known variant");
    let path: Vec<[f64; 2]> = result.states.iter().map(|s| s.position()).collect();
    let overlay_png = render_overlay(layout, &[(path, VARIANT_COLORS[idx])], task.start.position(), task.goal).to_png()?;
    Ok(DemoOutcome { result, overlay_png })
}
