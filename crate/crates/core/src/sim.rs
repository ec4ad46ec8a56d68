//! Unicycle robot with terrain-dependent Coulomb friction.
//!
//! Each discrete step first applies the steering increment to the heading,
//! freezes the friction coefficient at the start position and then integrates
//! position and directional velocity over `DT` with an adaptive Dormand-Prince
//! scheme. Velocity sign changes are handled as integration events: when the
//! velocity reaches zero and throttle cannot overcome friction, the robot
//! stays at rest for the remainder of the step.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ode::{self, Tolerances};
use crate::terrain::TerrainLayout;
use crate::{Error, Result};

pub const DT: f64 = 0.01;
pub const GRAVITY: f64 = 9.81;
pub const V_MAX: f64 = 5.0;
pub const OBS_DIM: usize = 5;
pub const ACTION_DIM: usize = 2;
pub const TERRAIN_DIM: usize = 3;
/// Width of a flattened transition `(x, τ(x), u, x₊, τ(x₊))`.
pub const TRANSITION_DIM: usize = 2 * OBS_DIM + 2 * TERRAIN_DIM + ACTION_DIM;

pub const MASS_RANGE: (f64, f64) = (1.0, 4.0);
pub const THROTTLE_GAIN_RANGE: (f64, f64) = (500.0, 1000.0);
pub const STEER_GAIN_RANGE: (f64, f64) = (PI / 8.0, PI / 4.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotParams {
    pub mass: f64,
    pub throttle_gain: f64,
    pub steer_gain: f64,
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        let within = |v: f64, (lo, hi): (f64, f64)| v.is_finite() && v >= lo && v <= hi;
        if within(self.mass, MASS_RANGE)
            && within(self.throttle_gain, THROTTLE_GAIN_RANGE)
            && within(self.steer_gain, STEER_GAIN_RANGE)
        {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("robot parameters out of range: {self:?}")))
        }
    }
}

pub fn sample_robot_params(rng: &mut impl Rng) -> RobotParams {
    RobotParams {
        mass: rng.random_range(MASS_RANGE.0..=MASS_RANGE.1),
        throttle_gain: rng.random_range(THROTTLE_GAIN_RANGE.0..=THROTTLE_GAIN_RANGE.1),
        steer_gain: rng.random_range(STEER_GAIN_RANGE.0..=STEER_GAIN_RANGE.1),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct SimState {
    pub px: f64,
    pub py: f64,
    /// Directional velocity in m/s.
    pub v: f64,
    /// Heading in `[0, 2π)`.
    pub heading: f64,
}

impl From<[f64; 4]> for SimState {
    fn from(a: [f64; 4]) -> Self {
        Self {
            px: a[0],
            py: a[1],
            v: a[2],
            heading: a[3],
        }
    }
}

impl From<SimState> for [f64; 4] {
    fn from(s: SimState) -> Self {
        [s.px, s.py, s.v, s.heading]
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl SimState {
    pub fn new(px: f64, py: f64, v: f64, heading: f64) -> Self {
        Self { px, py, v, heading }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.px, self.py]
    }

    fn is_finite(&self) -> bool {
        self.px.is_finite() && self.py.is_finite() && self.v.is_finite() && self.heading.is_finite()
    }

    /// Inverse of [`observe`].
    pub fn from_observation(x: &Observation) -> Self {
        let o = x.0;
        Self {
            px: o[0],
            py: o[1],
            v: o[2] * V_MAX,
            heading: wrap_angle(o[4].atan2(o[3])),
        }
    }
}

/// Encoded observation `[pₓ, p_y, v/5, cos φ, sin φ]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn position(&self) -> [f64; 2] {
        [self.0[0], self.0[1]]
    }

    /// Heading recovered from the `(cos, sin)` pair.
    pub fn heading(&self) -> f64 {
        wrap_angle(self.0[4].atan2(self.0[3]))
    }

    /// Non-normalised velocity.
    pub fn velocity(&self) -> f64 {
        self.0[2] * V_MAX
    }
}

pub fn observe(s: &SimState) -> Observation {
    Observation([s.px, s.py, s.v / V_MAX, s.heading.cos(), s.heading.sin()])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Action {
    pub throttle: f64,
    pub steer: f64,
}

impl From<[f64; 2]> for Action {
    fn from(a: [f64; 2]) -> Self {
        Self {
            throttle: a[0],
            steer: a[1],
        }
    }
}

impl From<Action> for [f64; 2] {
    fn from(a: Action) -> Self {
        [a.throttle, a.steer]
    }
}

impl Action {
    pub fn new(throttle: f64, steer: f64) -> Self {
        Self { throttle, steer }
    }

    pub fn clipped(self) -> Self {
        Self {
            throttle: self.throttle.clamp(-1.0, 1.0),
            steer: self.steer.clamp(-1.0, 1.0),
        }
    }
}

/// A single observed transition `(x, τ(x), u, x₊, τ(x₊))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub x: Observation,
    pub tau: [f64; TERRAIN_DIM],
    pub u: Action,
    pub x_next: Observation,
    pub tau_next: [f64; TERRAIN_DIM],
}

impl Transition {
    pub fn flatten(&self) -> [f64; TRANSITION_DIM] {
        let mut out = [0.0; TRANSITION_DIM];
        out[..5].copy_from_slice(&self.x.0);
        out[5..8].copy_from_slice(&self.tau);
        out[8] = self.u.throttle;
        out[9] = self.u.steer;
        out[10..15].copy_from_slice(&self.x_next.0);
        out[15..18].copy_from_slice(&self.tau_next);
        out
    }
}

const INTEGRATION_TOL: Tolerances = Tolerances { abs: 1e-8, rel: 1e-8 };

/// Advances the robot by one control period.
pub fn step(s: &SimState, u: Action, params: &RobotParams, layout: &TerrainLayout) -> Result<SimState> {
    if !s.is_finite() || !u.throttle.is_finite() || !u.steer.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite simulator input: {s:?}, {u:?}")));
    }
    if !(params.mass > 0.0) || !params.throttle_gain.is_finite() || !params.steer_gain.is_finite() {
        return Err(Error::InvalidInput(format!("invalid robot parameters: {params:?}")));
    }
    let u = u.clipped();
    let heading = wrap_angle(s.heading + u.steer * params.steer_gain);
    let mu = layout.friction_at(s.position());
    let (px, py, v) = integrate_translation(
        [s.px, s.py, s.v],
        heading,
        u.throttle * params.throttle_gain,
        mu * params.mass * GRAVITY,
        params.mass,
    )?;
    Ok(SimState {
        px: px.clamp(0.0, 1.0),
        py: py.clamp(0.0, 1.0),
        v: v.clamp(-V_MAX, V_MAX),
        heading,
    })
}

/// Integrates position and velocity over one `DT` for fixed heading, throttle
/// force and friction force magnitude.
fn integrate_translation(
    y0: [f64; 3],
    heading: f64,
    throttle_force: f64,
    friction_force: f64,
    mass: f64,
) -> Result<(f64, f64, f64)> {
    let (c, s) = (heading.cos(), heading.sin());
    let mut t = 0.0;
    let mut y = y0;
    // At most one sign change of v per step: after a zero crossing the
    // acceleration either holds the robot at rest or pushes away from zero.
    for _ in 0..3 {
        if t >= DT {
            break;
        }
        let direction = if y[2] != 0.0 {
            y[2].signum()
        } else if throttle_force.abs() > friction_force {
            throttle_force.signum()
        } else {
            break;
        };
        let accel = (throttle_force - direction * friction_force) / mass;
        let rhs = move |_t: f64, y: &[f64; 3]| [c * y[2], s * y[2], accel];
        let decelerating = y[2] != 0.0 && accel * direction < 0.0;
        let event = decelerating.then_some(|y: &[f64; 3]| y[2]);
        let out = ode::integrate(rhs, t, y, DT, INTEGRATION_TOL, event)
            .map_err(|e| Error::Numeric { step: 0, detail: e.to_string() })?;
        t = out.t;
        y = out.y;
        if out.event {
            y[2] = 0.0;
        }
    }
    Ok((y[0], y[1], y[2]))
}

/// States, observations, terrain features and actions of a simulated rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub states: Vec<SimState>,
    pub observations: Vec<Observation>,
    pub features: Vec<[f64; TERRAIN_DIM]>,
    pub actions: Vec<Action>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn transition(&self, i: usize) -> Transition {
        Transition {
            x: self.observations[i],
            tau: self.features[i],
            u: self.actions[i],
            x_next: self.observations[i + 1],
            tau_next: self.features[i + 1],
        }
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition> + '_ {
        (0..self.len()).map(|i| self.transition(i))
    }
}

pub fn rollout(s0: &SimState, actions: &[Action], params: &RobotParams, layout: &TerrainLayout) -> Result<Rollout> {
    let mut out = Rollout {
        states: Vec::with_capacity(actions.len() + 1),
        observations: Vec::with_capacity(actions.len() + 1),
        features: Vec::with_capacity(actions.len() + 1),
        actions: Vec::with_capacity(actions.len()),
    };
    let mut s = *s0;
    out.states.push(s);
    out.observations.push(observe(&s));
    out.features.push(layout.feature_at(s.position()));
    for (i, &u) in actions.iter().enumerate() {
        s = step(&s, u, params, layout).map_err(|e| match e {
            Error::Numeric { detail, .. } => Error::Numeric { step: i, detail },
            other => other,
        })?;
        out.actions.push(u.clipped());
        out.states.push(s);
        out.observations.push(observe(&s));
        out.features.push(layout.feature_at(s.position()));
    }
    Ok(out)
}

/// Initial state distributions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitRange {
    /// Position in `[0,1]²`, velocity in `[−5,5]`, heading in `[0,2π)`.
    Training,
    /// Position in `[0.1,0.9]²`, zero velocity, heading in `[0,2π)`.
    Evaluation,
}

pub fn sample_initial_state(rng: &mut impl Rng, range: InitRange) -> SimState {
    let heading = rng.random_range(0.0..TAU);
    match range {
        InitRange::Training => {
            let px = rng.random_range(0.0..=1.0);
            let py = rng.random_range(0.0..=1.0);
            let v = rng.random_range(-V_MAX..=V_MAX);
            SimState::new(px, py, v, heading)
        }
        InitRange::Evaluation => {
            let px = rng.random_range(0.1..=0.9);
            let py = rng.random_range(0.1..=0.9);
            SimState::new(px, py, 0.0, heading)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grey() -> TerrainLayout {
        TerrainLayout::uniform([128, 128, 128])
    }

    fn params() -> RobotParams {
        RobotParams {
            mass: 2.0,
            throttle_gain: 700.0,
            steer_gain: 0.5,
        }
    }

    #[test]
    fn rest_without_throttle_is_a_fixed_point() {
        let s = SimState::new(0.3, 0.6, 0.0, 1.0);
        let next = step(&s, Action::new(0.0, 0.0), &params(), &grey()).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn friction_only_decelerates() {
        let s = SimState::new(0.5, 0.5, 2.0, 0.0);
        let next = step(&s, Action::new(0.0, 0.0), &params(), &grey()).unwrap();
        assert!(next.v.abs() <= s.v.abs());
        assert!(next.v > 0.0);
    }

    #[test]
    fn slow_robot_stops_without_reversing() {
        // μ g ≈ 25 m/s², so 0.1 m/s is dissipated within the step.
        let s = SimState::new(0.5, 0.5, 0.1, 0.0);
        let next = step(&s, Action::new(0.0, 0.0), &params(), &grey()).unwrap();
        assert_eq!(next.v, 0.0);
        let mu = rgb_to_mu_grey();
        let stop_time = 0.1 / (mu * GRAVITY);
        let travelled = 0.5 * 0.1 * stop_time;
        assert!((next.px - 0.5 - travelled).abs() < 1e-9);
    }

    fn rgb_to_mu_grey() -> f64 {
        crate::terrain::rgb_to_friction(128, 128, 128)
    }

    #[test]
    fn throttle_reverses_through_zero() {
        let s = SimState::new(0.5, 0.5, 0.2, 0.0);
        let next = step(&s, Action::new(-1.0, 0.0), &params(), &grey()).unwrap();
        assert!(next.v < 0.0);
    }

    #[test]
    fn heading_update_precedes_translation() {
        let p = RobotParams {
            mass: 1.0,
            throttle_gain: 1000.0,
            steer_gain: PI / 4.0,
        };
        let s = SimState::new(0.5, 0.5, 1.0, 0.0);
        let next = step(&s, Action::new(0.0, 1.0), &p, &TerrainLayout::uniform([0, 0, 0])).unwrap();
        assert!((next.heading - PI / 4.0).abs() < 1e-15);
        assert!((next.py - 0.5) > 0.0);
        assert!(((next.px - 0.5) - (next.py - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn positions_and_velocity_are_clipped() {
        let p = RobotParams {
            mass: 1.0,
            throttle_gain: 1000.0,
            steer_gain: 0.5,
        };
        let s = SimState::new(0.999, 0.5, 4.9, 0.0);
        let next = step(&s, Action::new(1.0, 0.0), &p, &TerrainLayout::uniform([0, 0, 0])).unwrap();
        assert_eq!(next.px, 1.0);
        assert_eq!(next.v, V_MAX);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let s = SimState::new(f64::NAN, 0.5, 0.0, 0.0);
        assert!(step(&s, Action::new(0.0, 0.0), &params(), &grey()).is_err());
        let s = SimState::new(0.5, 0.5, 0.0, 0.0);
        assert!(step(&s, Action::new(f64::INFINITY, 0.0), &params(), &grey()).is_err());
    }

    #[test]
    fn observation_examples() {
        assert_eq!(observe(&SimState::new(0.0, 0.0, 0.0, 0.0)).0, [0.0, 0.0, 0.0, 1.0, 0.0]);
        let o = observe(&SimState::new(1.0, 1.0, 5.0, PI)).0;
        assert_eq!(&o[..3], &[1.0, 1.0, 1.0]);
        assert_eq!(o[3], -1.0);
        assert!(o[4].abs() < 1e-15);
    }

    #[test]
    fn rollout_edge_cases() {
        let s0 = SimState::new(0.4, 0.4, 0.0, 2.0);
        let r = rollout(&s0, &[], &params(), &grey()).unwrap();
        assert_eq!(r.states, vec![s0]);
        let r = rollout(&s0, &[Action::default(); 20], &params(), &grey()).unwrap();
        assert!(r.states.iter().all(|s| *s == s0));
        assert_eq!(r.transitions().count(), 20);
    }

    #[test]
    fn sampled_parameters_respect_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            sample_robot_params(&mut rng).validate().unwrap();
        }
        let a = sample_robot_params(&mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_robot_params(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(-1e-300), 0.0);
        assert!((wrap_angle(-0.5) - (TAU - 0.5)).abs() < 1e-15);
        assert!((wrap_angle(7.0) - (7.0 - TAU)).abs() < 1e-15);
    }
}
