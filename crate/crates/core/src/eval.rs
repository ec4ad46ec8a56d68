//! Prediction and planning studies over the four model variants.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::DynamicsModel;
use crate::noise::sample_actions;
use crate::planner::{angle_error, calibrate, mpc_navigate, CemConfig, NavTask, PlanResult, Variant, CALIBRATION_TRANSITIONS, SUCCESS_RADIUS};
use crate::render::{render_curves, render_matrix, Canvas, VARIANT_COLORS};
use crate::sim::{rollout, sample_initial_state, sample_robot_params, InitRange, Observation, Rollout, RobotParams, V_MAX};
use crate::stats::{percentile_sorted, wilcoxon_signed_rank};
use crate::terrain::TerrainLayout;
use crate::{Error, Result};

/// An open-loop prediction problem with its simulated ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionCase {
    pub terrain_index: usize,
    pub robot_params: RobotParams,
    pub truth: Rollout,
    /// Calibration transitions from the same initial state.
    pub context: Vec<crate::sim::Transition>,
}

fn case_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Samples `n` cases of length `len` on the given (test) terrains.
pub fn make_prediction_cases(terrains: &[TerrainLayout], n: usize, len: usize, omega: f64, seed: u64) -> Result<Vec<PredictionCase>> {
    if terrains.is_empty() {
        return Err(Error::InvalidInput("no evaluation terrains".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = case_rng(seed, i);
            let terrain_index = rng.random_range(0..terrains.len());
            let layout = &terrains[terrain_index];
            let robot_params = sample_robot_params(&mut rng);
            let s0 = sample_initial_state(&mut rng, InitRange::Evaluation);
            let actions = sample_actions(omega, len, &mut rng);
            let truth = rollout(&s0, &actions, &robot_params, layout)?;
            let context = calibrate(layout, &robot_params, &s0, CALIBRATION_TRANSITIONS, omega, &mut rng)?;
            Ok(PredictionCase {
                terrain_index,
                robot_params,
                truth,
                context,
            })
        })
        .collect()
}

/// Position, velocity and angle errors of predicted means against the truth
/// for steps `1..=H`.
pub fn prediction_errors(pred: &[Observation], truth: &[Observation]) -> [Vec<f64>; 3] {
    let mut pos = Vec::with_capacity(pred.len());
    let mut vel = Vec::with_capacity(pred.len());
    let mut ang = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(&truth[1..]) {
        let (pp, tp) = (p.position(), t.position());
        pos.push(((pp[0] - tp[0]).powi(2) + (pp[1] - tp[1]).powi(2)).sqrt());
        vel.push((V_MAX * (p.0[2] - t.0[2])).abs());
        ang.push(angle_error(p.0[4].atan2(p.0[3]), t.0[4].atan2(t.0[3])));
    }
    [pos, vel, ang]
}

/// Open-loop prediction of a case with a learned model under a variant.
pub fn model_prediction(model: &DynamicsModel, variant: Variant, case: &PredictionCase, layout: &TerrainLayout) -> Result<Vec<Observation>> {
    let ctx: &[crate::sim::Transition] = if variant.calibrated { &case.context } else { &[] };
    let beta = model.encode_context(ctx).mean;
    let terrain = variant.terrain_lookup.then_some(layout as &dyn crate::terrain::TerrainQuery);
    let t = &case.truth;
    Ok(model
        .predict_rollout(&t.observations[0], t.features[0], &t.actions, &beta, terrain)?
        .means)
}

/// Mean and 20 %/80 % percentiles per horizon step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBands {
    pub mean: Vec<f64>,
    pub p20: Vec<f64>,
    pub p80: Vec<f64>,
}

impl ErrorBands {
    fn from_runs(runs: &[Vec<f64>]) -> Self {
        let h = runs.first().map_or(0, Vec::len);
        let mut out = ErrorBands {
            mean: Vec::with_capacity(h),
            p20: Vec::with_capacity(h),
            p80: Vec::with_capacity(h),
        };
        for n in 0..h {
            let mut col: Vec<f64> = runs.iter().map(|r| r[n]).collect();
            col.sort_by(f64::total_cmp);
            out.mean.push(col.iter().sum::<f64>() / col.len() as f64);
            out.p20.push(percentile_sorted(&col, 0.2));
            out.p80.push(percentile_sorted(&col, 0.8));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub variant: Variant,
    pub n_rollouts: usize,
    pub position: ErrorBands,
    pub velocity: ErrorBands,
    pub angle: ErrorBands,
}

/// Aggregates per-rollout predictions (in any order) into error bands.
pub fn aggregate_prediction(variant: Variant, runs: &[(Vec<Observation>, &[Observation])]) -> Result<PredictionMetrics> {
    if runs.is_empty() {
        return Err(Error::InvalidInput("no prediction runs".into()));
    }
    let mut pos = Vec::with_capacity(runs.len());
    let mut vel = Vec::with_capacity(runs.len());
    let mut ang = Vec::with_capacity(runs.len());
    for (pred, truth) in runs {
        if pred.len() + 1 != truth.len() {
            return Err(Error::InvalidInput("prediction length does not match the ground truth".into()));
        }
        let [p, v, a] = prediction_errors(pred, truth);
        pos.push(p);
        vel.push(v);
        ang.push(a);
    }
    Ok(PredictionMetrics {
        variant,
        n_rollouts: runs.len(),
        position: ErrorBands::from_runs(&pos),
        velocity: ErrorBands::from_runs(&vel),
        angle: ErrorBands::from_runs(&ang),
    })
}

/// Trained models of one seed: a lookup model and an observed-concat model.
#[derive(Clone, Debug)]
pub struct SeedModels {
    pub lookup: DynamicsModel,
    pub concat: DynamicsModel,
}

impl SeedModels {
    pub fn for_variant(&self, v: Variant) -> &DynamicsModel {
        if v.terrain_lookup {
            &self.lookup
        } else {
            &self.concat
        }
    }
}

/// Prediction study: every variant of every seed on every case.
pub fn eval_prediction(models: &[SeedModels], cases: &[PredictionCase], terrains: &[TerrainLayout]) -> Result<Vec<PredictionMetrics>> {
    Variant::ALL
        .iter()
        .map(|&v| {
            let jobs: Vec<(usize, usize)> = (0..models.len()).flat_map(|s| (0..cases.len()).map(move |c| (s, c))).collect();
            let preds = jobs
                .par_iter()
                .map(|&(s, c)| model_prediction(models[s].for_variant(v), v, &cases[c], &terrains[cases[c].terrain_index]))
                .collect::<Result<Vec<_>>>()?;
            let runs: Vec<(Vec<Observation>, &[Observation])> = preds
                .into_iter()
                .zip(&jobs)
                .map(|(p, &(_, c))| (p, cases[c].truth.observations.as_slice()))
                .collect();
            aggregate_prediction(v, &runs)
        })
        .collect()
}

/// Samples navigation tasks on the given (test) terrains.
pub fn make_nav_tasks(terrains: &[TerrainLayout], n: usize, step_limit: usize, seed: u64) -> Result<Vec<(usize, NavTask)>> {
    if terrains.is_empty() {
        return Err(Error::InvalidInput("no evaluation terrains".into()));
    }
    Ok((0..n)
        .map(|i| {
            let mut rng = case_rng(seed ^ 0x6e61_7674_6173_6b73, i);
            let idx = rng.random_range(0..terrains.len());
            let robot_params = sample_robot_params(&mut rng);
            let start = sample_initial_state(&mut rng, InitRange::Evaluation);
            let goal = [rng.random_range(0.1..=0.9), rng.random_range(0.1..=0.9)];
            (
                idx,
                NavTask {
                    start,
                    goal,
                    step_limit,
                    terrain_id: terrains[idx].id,
                    robot_params,
                },
            )
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub seed_index: usize,
    pub task_index: usize,
    pub result: PlanResult,
}

/// Runs every (seed, task, variant) combination. The CEM/calibration seed
/// depends only on the task, so variants are paired.
pub fn eval_planning(
    models: &[SeedModels],
    tasks: &[(usize, NavTask)],
    terrains: &[TerrainLayout],
    cem: &CemConfig,
    seed: u64,
) -> Result<Vec<PlanRecord>> {
    let mut jobs = Vec::new();
    for s in 0..models.len() {
        for k in 0..tasks.len() {
            for v in Variant::ALL {
                jobs.push((s, k, v));
            }
        }
    }
    jobs.par_iter()
        .map(|&(s, k, v)| {
            let (idx, task) = &tasks[k];
            let task_seed = seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
            let result = mpc_navigate(task, &terrains[*idx], models[s].for_variant(v), v, cem, task_seed)?;
            log::debug!("seed {s} task {k} {}: E = {:.4}, d = {:.1} mm", v.label(), result.throttle_energy, 1e3 * result.final_goal_distance);
            Ok(PlanRecord {
                seed_index: s,
                task_index: k,
                result,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningRow {
    pub variant: Variant,
    pub n: usize,
    pub distance_p20_mm: f64,
    pub distance_median_mm: f64,
    pub distance_p80_mm: f64,
    pub failures: usize,
    pub energy_median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseCell {
    pub row: Variant,
    pub col: Variant,
    pub p20: f64,
    pub median: f64,
    pub p80: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningTable {
    pub rows: Vec<PlanningRow>,
    /// Row-major over [`Variant::ALL`] × [`Variant::ALL`].
    pub pairwise: Vec<PairwiseCell>,
}

impl PlanningTable {
    pub fn row(&self, v: Variant) -> &PlanningRow {
        self.rows.iter().find(|r| r.variant == v).expect("all variants present")
    }

    pub fn cell(&self, row: Variant, col: Variant) -> &PairwiseCell {
        self.pairwise
            .iter()
            .find(|c| c.row == row && c.col == col)
            .expect("all pairs present")
    }
}

/// Significance level for the pairwise energy comparisons.
pub const SIGNIFICANCE: f64 = 0.05;

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Summary statistics and the pairwise energy-difference matrix
/// `{E^row_{k,i₁} − E^col_{k,i₂}}` over tasks `k` and all seed pairs.
pub fn planning_table(records: &[PlanRecord]) -> Result<PlanningTable> {
    let n_seeds = records.iter().map(|r| r.seed_index + 1).max().unwrap_or(0);
    let n_tasks = records.iter().map(|r| r.task_index + 1).max().unwrap_or(0);
    if n_seeds == 0 || n_tasks == 0 {
        return Err(Error::InvalidInput("no planning records".into()));
    }
    let vi = |v: Variant| Variant::ALL.iter().position(|&w| w == v).expect("known variant");
    let mut energy = vec![vec![vec![f64::NAN; n_tasks]; n_seeds]; 4];
    let mut dist = vec![Vec::new(); 4];
    for r in records {
        let v = vi(r.result.variant);
        energy[v][r.seed_index][r.task_index] = r.result.throttle_energy;
        dist[v].push(r.result.final_goal_distance);
    }
    if energy.iter().flatten().flatten().any(|e| e.is_nan()) {
        return Err(Error::InvalidInput("planning records do not cover every (variant, seed, task)".into()));
    }
    let rows = Variant::ALL
        .iter()
        .map(|&v| {
            let d = sorted(dist[vi(v)].clone());
            let e = sorted(energy[vi(v)].iter().flatten().copied().collect());
            PlanningRow {
                variant: v,
                n: d.len(),
                distance_p20_mm: 1e3 * percentile_sorted(&d, 0.2),
                distance_median_mm: 1e3 * percentile_sorted(&d, 0.5),
                distance_p80_mm: 1e3 * percentile_sorted(&d, 0.8),
                failures: d.iter().filter(|&&x| x > SUCCESS_RADIUS).count(),
                energy_median: percentile_sorted(&e, 0.5),
            }
        })
        .collect();
    let mut pairwise = Vec::with_capacity(16);
    for &row in &Variant::ALL {
        for &col in &Variant::ALL {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for k in 0..n_tasks {
                for e1 in &energy[vi(row)] {
                    for e2 in &energy[vi(col)] {
                        a.push(e1[k]);
                        b.push(e2[k]);
                    }
                }
            }
            let diffs = sorted(a.iter().zip(&b).map(|(x, y)| x - y).collect());
            let p_value = if a.len() >= 5 {
                wilcoxon_signed_rank(&a, &b)?.p_value
            } else {
                1.0
            };
            pairwise.push(PairwiseCell {
                row,
                col,
                p20: percentile_sorted(&diffs, 0.2),
                median: percentile_sorted(&diffs, 0.5),
                p80: percentile_sorted(&diffs, 0.8),
                p_value,
                significant: p_value < SIGNIFICANCE,
            });
        }
    }
    Ok(PlanningTable { rows, pairwise })
}

// Variant labels contain commas, so they are always quoted.
pub fn prediction_csv(metrics: &[PredictionMetrics]) -> String {
    let mut s = String::from(
        "variant,step,pos_mean,pos_p20,pos_p80,vel_mean,vel_p20,vel_p80,angle_mean,angle_p20,angle_p80\n",
    );
    for m in metrics {
        for n in 0..m.position.mean.len() {
            let _ = writeln!(
                s,
                "\"{}\",{},{},{},{},{},{},{},{},{},{}",
                m.variant.label(),
                n + 1,
                m.position.mean[n],
                m.position.p20[n],
                m.position.p80[n],
                m.velocity.mean[n],
                m.velocity.p20[n],
                m.velocity.p80[n],
                m.angle.mean[n],
                m.angle.p20[n],
                m.angle.p80[n]
            );
        }
    }
    s
}

pub fn planning_table_csv(t: &PlanningTable) -> String {
    let mut s = String::from("variant,n,distance_p20_mm,distance_median_mm,distance_p80_mm,failures,energy_median\n");
    for r in &t.rows {
        let _ = writeln!(
            s,
            "\"{}\",{},{},{},{},{},{}",
            r.variant.label(),
            r.n,
            r.distance_p20_mm,
            r.distance_median_mm,
            r.distance_p80_mm,
            r.failures,
            r.energy_median
        );
    }
    s
}

pub fn pairwise_csv(t: &PlanningTable) -> String {
    let mut s = String::from("row,col,p20,median,p80,p_value,significant\n");
    for c in &t.pairwise {
        let _ = writeln!(
            s,
            "\"{}\",\"{}\",{},{},{},{},{}",
            c.row.label(),
            c.col.label(),
            c.p20,
            c.median,
            c.p80,
            c.p_value,
            c.significant
        );
    }
    s
}

pub fn plan_records_csv(records: &[PlanRecord]) -> String {
    let mut s = String::from("seed,task,variant,throttle_energy,final_goal_distance,success\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},\"{}\",{},{},{}",
            r.seed_index,
            r.task_index,
            r.result.variant.label(),
            r.result.throttle_energy,
            r.result.final_goal_distance,
            r.result.success
        );
    }
    s
}

/// Three panels (position, velocity, angle) of mean error over the horizon.
pub fn prediction_plot(metrics: &[PredictionMetrics]) -> Canvas {
    let panel = |pick: fn(&PredictionMetrics) -> &ErrorBands| {
        let series: Vec<(Vec<f64>, crate::render::Rgb)> = metrics
            .iter()
            .map(|m| {
                let i = Variant::ALL.iter().position(|&v| v == m.variant).unwrap_or(0);
                (pick(m).mean.clone(), VARIANT_COLORS[i])
            })
            .collect();
        render_curves(&series, 320, 240)
    };
    let panels = [
        panel(|m| &m.position),
        panel(|m| &m.velocity),
        panel(|m| &m.angle),
    ];
    let mut out = Canvas::new(3 * 320, 240, crate::render::WHITE);
    for (k, p) in panels.iter().enumerate() {
        out.blit(p, (k * 320) as i64, 0);
    }
    out
}

/// Heat map of median pairwise energy differences.
pub fn pairwise_plot(t: &PlanningTable) -> Canvas {
    let m: Vec<Vec<f64>> = Variant::ALL
        .iter()
        .map(|&r| Variant::ALL.iter().map(|&c| t.cell(r, c).median).collect())
        .collect();
    render_matrix(&m, 48)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Action, SimState};

    fn record(seed: usize, task: usize, v: Variant, e: f64, d: f64) -> PlanRecord {
        PlanRecord {
            seed_index: seed,
            task_index: task,
            result: PlanResult {
                variant: v,
                actions: vec![Action::default()],
                states: vec![SimState::new(0.5, 0.5, 0.0, 0.0)],
                throttle_energy: e,
                final_goal_distance: d,
                success: d <= SUCCESS_RADIUS,
                belief_var: Vec::new(),
            },
        }
    }

    #[test]
    fn oracle_predictions_have_zero_error() {
        let layout = crate::terrain::generate_terrain(3);
        let cases = make_prediction_cases(std::slice::from_ref(&layout), 3, 20, 0.5, 1).unwrap();
        let runs: Vec<_> = cases
            .iter()
            .map(|c| (c.truth.observations[1..].to_vec(), c.truth.observations.as_slice()))
            .collect();
        let m = aggregate_prediction(Variant::ALL[3], &runs).unwrap();
        for bands in [&m.position, &m.velocity, &m.angle] {
            assert!(bands.mean.iter().chain(&bands.p20).chain(&bands.p80).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pairwise_matrix_is_antisymmetric() {
        let mut recs = Vec::new();
        for s in 0..2 {
            for k in 0..4 {
                for (i, v) in Variant::ALL.into_iter().enumerate() {
                    let e = 1.0 + 0.3 * i as f64 + 0.17 * k as f64 + 0.05 * s as f64 + 0.01 * (i * k) as f64;
                    recs.push(record(s, k, v, e, 0.01 * (i + 1) as f64 * (k as f64 + 1.0)));
                }
            }
        }
        let t = planning_table(&recs).unwrap();
        for a in Variant::ALL {
            assert_eq!(t.cell(a, a).median, 0.0);
            for b in Variant::ALL {
                assert!((t.cell(a, b).median + t.cell(b, a).median).abs() < 1e-12);
            }
        }
        assert_eq!(t.rows.len(), 4);
        assert_eq!(planning_table_csv(&t).lines().count(), 5);
    }

    #[test]
    fn failures_use_strict_threshold() {
        let mut recs = Vec::new();
        for (i, v) in Variant::ALL.into_iter().enumerate() {
            recs.push(record(0, 0, v, 1.0, if i == 0 { 0.0500001 } else { 0.05 }));
        }
        let t = planning_table(&recs).unwrap();
        assert_eq!(t.row(Variant::ALL[0]).failures, 1);
        assert_eq!(t.row(Variant::ALL[1]).failures, 0);
    }
}
