//! Trajectory datasets over sampled environment instances.
//!
//! Every environment instance (a training terrain plus robot parameters)
//! carries two independent coloured-noise trajectories: one supplies target
//! windows, the other context transitions. On disk a dataset is JSON lines,
//! one trajectory per line.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::TrainingSample;
use crate::noise::sample_actions;
use crate::sim::{
    observe, rollout, sample_initial_state, sample_robot_params, Action, InitRange, Observation, RobotParams, Rollout,
    SimState, TERRAIN_DIM,
};
use crate::terrain::{TerrainLayout, TerrainSets};
use crate::{Error, Result};

/// Upper bound on a single JSON line, to keep malformed inputs cheap to reject.
pub const MAX_RECORD_BYTES: usize = 1 << 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_train_settings: usize,
    pub n_val_settings: usize,
    /// Actions per trajectory.
    pub traj_len: usize,
    pub omega: f64,
    pub seed: u64,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train_settings == 0 {
            return Err(Error::Config("n_train_settings must be positive".into()));
        }
        if self.traj_len == 0 {
            return Err(Error::Config("traj_len must be positive".into()));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(Error::Config("omega must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSplit {
    Train,
    Val,
}

/// An environment instance with its two trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct Setting {
    pub env_id: u32,
    pub split: DataSplit,
    pub terrain_id: u32,
    pub robot_params: RobotParams,
    /// `[target source, context source]`.
    pub trajectories: [Rollout; 2],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub settings: Vec<Setting>,
}

impl Dataset {
    pub fn split(&self, split: DataSplit) -> Vec<&Setting> {
        self.settings.iter().filter(|s| s.split == split).collect()
    }
}

/// One line of the on-disk format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub env_id: u32,
    pub split: DataSplit,
    /// 0 for the target-source trajectory, 1 for the context source.
    pub trajectory: u8,
    pub terrain_id: u32,
    pub robot_params: RobotParams,
    pub states: Vec<SimState>,
    pub actions: Vec<Action>,
    pub observations: Vec<Observation>,
    pub terrain_features: Vec<[f64; TERRAIN_DIM]>,
}

impl TrajectoryRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Format(format!("trajectory record {}: {m}", self.env_id)));
        if self.trajectory > 1 {
            return bad("trajectory index must be 0 or 1");
        }
        self.robot_params
            .validate()
            .map_err(|e| Error::Format(format!("trajectory record {}: {e}", self.env_id)))?;
        let n = self.actions.len();
        if self.states.len() != n + 1 || self.observations.len() != n + 1 || self.terrain_features.len() != n + 1 {
            return bad("states, observations and features need one more entry than actions");
        }
        for s in &self.states {
            let ok = (0.0..=1.0).contains(&s.px)
                && (0.0..=1.0).contains(&s.py)
                && (-crate::sim::V_MAX..=crate::sim::V_MAX).contains(&s.v)
                && (0.0..std::f64::consts::TAU).contains(&s.heading);
            if !ok {
                return bad("state outside its valid range");
            }
        }
        for a in &self.actions {
            if !((-1.0..=1.0).contains(&a.throttle) && (-1.0..=1.0).contains(&a.steer)) {
                return bad("action outside [-1, 1]");
            }
        }
        if self.terrain_features.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("terrain feature outside [0, 1]");
        }
        for (s, x) in self.states.iter().zip(&self.observations) {
            let want = observe(s);
            if want.0.iter().zip(&x.0).any(|(a, b)| !((a - b).abs() <= 1e-9)) {
                return bad("observation does not encode its state");
            }
        }
        Ok(())
    }

    fn into_rollout(self) -> Rollout {
        Rollout {
            states: self.states,
            observations: self.observations,
            features: self.terrain_features,
            actions: self.actions,
        }
    }
}

/// Parses and validates one JSON line.
pub fn parse_record(line: &[u8]) -> Result<TrajectoryRecord> {
    if line.len() > MAX_RECORD_BYTES {
        return Err(Error::Format("trajectory record too long".into()));
    }
    let rec: TrajectoryRecord =
        serde_json::from_slice(line).map_err(|e| Error::Format(format!("trajectory record: {e}")))?;
    rec.validate()?;
    Ok(rec)
}

fn simulate_setting(cfg: &DataConfig, env_id: u32, split: DataSplit, train: &[TerrainLayout]) -> Result<Setting> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(env_id as u64);
    let layout = &train[rng.random_range(0..train.len())];
    let params = sample_robot_params(&mut rng);
    let mut run = || -> Result<Rollout> {
        let s0 = sample_initial_state(&mut rng, InitRange::Training);
        let actions = sample_actions(cfg.omega, cfg.traj_len, &mut rng);
        rollout(&s0, &actions, &params, layout)
    };
    let first = run()?;
    let second = run()?;
    Ok(Setting {
        env_id,
        split,
        terrain_id: layout.id,
        robot_params: params,
        trajectories: [first, second],
    })
}

/// Simulates all settings. Each setting draws from its own random stream, so
/// the result does not depend on thread scheduling.
pub fn generate_dataset(cfg: &DataConfig, terrains: &TerrainSets) -> Result<Dataset> {
    cfg.validate()?;
    if terrains.train.is_empty() {
        return Err(Error::InvalidInput("no training terrains available".into()));
    }
    let n_train = cfg.n_train_settings;
    let total = n_train + cfg.n_val_settings;
    let settings = (0..total)
        .into_par_iter()
        .map(|i| {
            let split = if i < n_train { DataSplit::Train } else { DataSplit::Val };
            simulate_setting(cfg, i as u32, split, &terrains.train)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { settings })
}

pub fn write_dataset(ds: &Dataset, out: &mut impl Write) -> std::io::Result<()> {
    for s in &ds.settings {
        for (k, traj) in s.trajectories.iter().enumerate() {
            let rec = TrajectoryRecord {
                env_id: s.env_id,
                split: s.split,
                trajectory: k as u8,
                terrain_id: s.terrain_id,
                robot_params: s.robot_params,
                states: traj.states.clone(),
                actions: traj.actions.clone(),
                observations: traj.observations.clone(),
                terrain_features: traj.features.clone(),
            };
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_dataset(ds, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads JSON lines, pairing the two trajectories of every setting.
pub fn read_dataset(input: impl BufRead) -> Result<Dataset> {
    let mut pending: BTreeMap<u32, [Option<TrajectoryRecord>; 2]> = BTreeMap::new();
    for (lineno, line) in input.split(b'\n').enumerate() {
        let line = line.map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let rec = parse_record(&line).map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        let slot = &mut pending.entry(rec.env_id).or_default()[rec.trajectory as usize];
        if slot.is_some() {
            return Err(Error::Format(format!(
                "line {}: duplicate trajectory {} for setting {}",
                lineno + 1,
                rec.trajectory,
                rec.env_id
            )));
        }
        *slot = Some(rec);
    }
    let mut settings = Vec::with_capacity(pending.len());
    for (env_id, [a, b]) in pending {
        let (Some(a), Some(b)) = (a, b) else {
            return Err(Error::Format(format!("setting {env_id} lacks one of its two trajectories")));
        };
        if a.terrain_id != b.terrain_id || a.robot_params != b.robot_params || a.split != b.split {
            return Err(Error::Format(format!("setting {env_id} mixes environment instances")));
        }
        settings.push(Setting {
            env_id,
            split: a.split,
            terrain_id: a.terrain_id,
            robot_params: a.robot_params,
            trajectories: [a.into_rollout(), b.into_rollout()],
        });
    }
    Ok(Dataset { settings })
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(std::io::BufReader::new(file))
}

/// Draws `(D, C)` pairs: a random setting, a contiguous window of
/// `target_len` transitions from its first trajectory, and `K ~ U{0..k_max}`
/// distinct transitions from its second trajectory.
pub fn sample_training_batch(
    settings: &[&Setting],
    batch_size: usize,
    target_len: usize,
    k_max: usize,
    rng: &mut impl Rng,
) -> Result<Vec<TrainingSample>> {
    if settings.is_empty() {
        return Err(Error::InvalidInput("no settings to sample from".into()));
    }
    (0..batch_size)
        .map(|_| {
            let s = settings[rng.random_range(0..settings.len())];
            let [target, context] = &s.trajectories;
            if target.len() < target_len {
                return Err(Error::InvalidInput(format!(
                    "setting {} has {} transitions, window needs {target_len}",
                    s.env_id,
                    target.len()
                )));
            }
            let start = rng.random_range(0..=target.len() - target_len);
            let k = rng.random_range(0..=k_max).min(context.len());
            let mut idx = sample_indices(rng, context.len(), k).into_vec();
            idx.sort_unstable();
            Ok(TrainingSample {
                observations: target.observations[start..=start + target_len].to_vec(),
                features: target.features[start..=start + target_len].to_vec(),
                actions: target.actions[start..start + target_len].to_vec(),
                context: idx.into_iter().map(|i| context.transition(i)).collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::generate_terrain;

    fn tiny_sets() -> TerrainSets {
        let mut a = generate_terrain(1);
        a.id = 0;
        let mut b = generate_terrain(2);
        b.id = 1;
        TerrainSets {
            train: vec![a, b],
            test: Vec::new(),
        }
    }

    fn cfg() -> DataConfig {
        DataConfig {
            n_train_settings: 2,
            n_val_settings: 1,
            traj_len: 100,
            omega: 0.5,
            seed: 5,
        }
    }

    #[test]
    fn two_settings_give_four_trajectories() {
        let ds = generate_dataset(&cfg(), &tiny_sets()).unwrap();
        let train = ds.split(DataSplit::Train);
        assert_eq!(train.len(), 2);
        for s in &train {
            for t in &s.trajectories {
                assert_eq!(t.actions.len(), 100);
                assert_eq!(t.states.len(), 101);
            }
        }
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let ds = generate_dataset(&cfg(), &tiny_sets()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn missing_partner_trajectory_is_rejected() {
        let ds = generate_dataset(&cfg(), &tiny_sets()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let first_line_end = buf.iter().position(|&b| b == b'\n').unwrap();
        assert!(read_dataset(&buf[first_line_end + 1..]).is_err());
    }

    #[test]
    fn batches_respect_window_and_context_bounds() {
        let ds = generate_dataset(&cfg(), &tiny_sets()).unwrap();
        let train = ds.split(DataSplit::Train);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = sample_training_batch(&train, 64, 50, 50, &mut rng).unwrap();
        for s in &batch {
            assert_eq!(s.actions.len(), 50);
            assert_eq!(s.observations.len(), 51);
            assert!(s.context.len() <= 50);
        }
    }
}
