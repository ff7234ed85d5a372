//! Analytic ground-truth environments.
//!
//! Each environment integrates a closed-form ODE with fixed-step RK4 and
//! emits over-parameterized observations: every angle becomes
//! `(sin, cos)`, positions and velocities pass through. Angles are measured
//! from the upright configuration, so a hanging pendulum sits at `theta = pi`.

mod reward;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Episode;
use crate::error::{config, numeric, structural, Error, Result};
use crate::numerics::Rng;

pub use reward::{RewardFn, Task};

/// Largest RK4 substep, seconds.
pub const MAX_SUBSTEP: f64 = 0.002;

const MAX_STATE: usize = 4;
const MAX_ACT: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Pendulum,
    #[serde(alias = "cartpole")]
    CartpoleSwingup,
    Reacher2,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::CartpoleSwingup => "cartpole_swingup",
            EnvKind::Reacher2 => "reacher2",
        }
    }

    pub const ALL: [EnvKind; 3] = [EnvKind::Pendulum, EnvKind::CartpoleSwingup, EnvKind::Reacher2];
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "cartpole_swingup" | "cartpole" => Ok(EnvKind::CartpoleSwingup),
            "reacher2" => Ok(EnvKind::Reacher2),
            other => Err(config(format!("unknown environment '{other}'"))),
        }
    }
}

/// Static description of an environment plus its physical constants.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// Base control timestep, seconds.
    pub dt_base: f64,
    /// Episode length in base steps.
    pub episode_len: usize,
    /// Scale of the initial-state perturbation; 0 gives the nominal start.
    pub reset_noise: f64,
    constants: BTreeMap<String, f64>,
    // constants resolved into a fixed order for the integrator hot loop
    physics: [f64; 8],
}

const PENDULUM_CONSTANTS: &[&str] = &["mass", "length", "gravity", "damping", "max_torque"];
const CARTPOLE_CONSTANTS: &[&str] = &[
    "cart_mass",
    "pole_mass",
    "pole_half_length",
    "gravity",
    "cart_damping",
    "pole_damping",
    "max_force",
];
const REACHER_CONSTANTS: &[&str] = &[
    "link1_length",
    "link2_length",
    "link1_mass",
    "link2_mass",
    "damping",
    "max_torque",
];

fn constant_names(kind: EnvKind) -> &'static [&'static str] {
    match kind {
        EnvKind::Pendulum => PENDULUM_CONSTANTS,
        EnvKind::CartpoleSwingup => CARTPOLE_CONSTANTS,
        EnvKind::Reacher2 => REACHER_CONSTANTS,
    }
}

fn constants(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        let constants = match kind {
            EnvKind::Pendulum => constants(&[
                ("mass", 1.0),
                ("length", 1.0),
                ("gravity", 9.81),
                ("damping", 0.05),
                ("max_torque", 4.0),
            ]),
            EnvKind::CartpoleSwingup => constants(&[
                ("cart_mass", 1.0),
                ("pole_mass", 0.1),
                ("pole_half_length", 0.5),
                ("gravity", 9.81),
                ("cart_damping", 0.1),
                ("pole_damping", 0.002),
                ("max_force", 15.0),
            ]),
            EnvKind::Reacher2 => constants(&[
                ("link1_length", 0.5),
                ("link2_length", 0.5),
                ("link1_mass", 1.0),
                ("link2_mass", 1.0),
                ("damping", 0.1),
                ("max_torque", 1.0),
            ]),
        };
        let mut spec = Self {
            kind,
            dt_base: 0.01,
            episode_len: 1000,
            reset_noise: 1.0,
            constants,
            physics: [0.0; 8],
        };
        spec.resolve();
        spec
    }

    fn resolve(&mut self) {
        for (i, name) in constant_names(self.kind).iter().enumerate() {
            self.physics[i] = self.constants[*name];
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    /// Overrides a physical constant by name.
    pub fn set_constant(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(config(format!("constant '{name}' must be finite")));
        }
        match self.constants.get_mut(name) {
            Some(v) => {
                *v = value;
                self.resolve();
                Ok(())
            }
            None => Err(config(format!(
                "environment '{}' has no constant '{name}' (known: {:?})",
                self.kind,
                self.constants.keys().collect::<Vec<_>>()
            ))),
        }
    }

    pub fn constant(&self, name: &str) -> f64 {
        self.constants[name]
    }

    pub fn constants(&self) -> &BTreeMap<String, f64> {
        &self.constants
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            EnvKind::Pendulum => 2,
            EnvKind::CartpoleSwingup | EnvKind::Reacher2 => 4,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self.kind {
            EnvKind::Pendulum => 3,
            EnvKind::CartpoleSwingup => 5,
            EnvKind::Reacher2 => 6,
        }
    }

    pub fn act_dim(&self) -> usize {
        match self.kind {
            EnvKind::Pendulum | EnvKind::CartpoleSwingup => 1,
            EnvKind::Reacher2 => 2,
        }
    }

    /// Indices of angle coordinates within the state vector.
    pub fn angle_indices(&self) -> &'static [usize] {
        match self.kind {
            EnvKind::Pendulum => &[0],
            EnvKind::CartpoleSwingup => &[1],
            EnvKind::Reacher2 => &[0, 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_base > 0.0 && self.dt_base <= 0.1) {
            return Err(config(format!("dt_base {} outside (0, 0.1]", self.dt_base)));
        }
        if self.episode_len == 0 {
            return Err(config("episode_len must be >= 1"));
        }
        if !(self.reset_noise >= 0.0) {
            return Err(config("reset_noise must be >= 0"));
        }
        Ok(())
    }

    fn derivative(&self, s: &[f64], u: &[f64], out: &mut [f64]) {
        let p = &self.physics;
        match self.kind {
            EnvKind::Pendulum => {
                let [m, l, g, b, max_torque, ..] = *p;
                let inertia = m * l * l;
                out[0] = s[1];
                out[1] = (g / l) * s[0].sin() + (max_torque * u[0] - b * s[1]) / inertia;
            }
            EnvKind::CartpoleSwingup => {
                let [mc, mp, l, g, cart_damping, pole_damping, max_force, ..] = *p;
                let force = max_force * u[0] - cart_damping * s[2];
                let pole_fric = pole_damping * s[3];
                let (sin, cos) = s[1].sin_cos();
                let total = mc + mp;
                let temp = (force + mp * l * s[3] * s[3] * sin) / total;
                let theta_acc = (g * sin - cos * temp - pole_fric / (mp * l))
                    / (l * (4.0 / 3.0 - mp * cos * cos / total));
                let x_acc = temp - mp * l * theta_acc * cos / total;
                out[0] = s[2];
                out[1] = s[3];
                out[2] = x_acc;
                out[3] = theta_acc;
            }
            EnvKind::Reacher2 => {
                let [l1, l2, m1, m2, b, gain, ..] = *p;
                let (lc1, lc2) = (0.5 * l1, 0.5 * l2);
                let (i1, i2) = (m1 * l1 * l1 / 12.0, m2 * l2 * l2 / 12.0);
                let (s2, c2) = s[1].sin_cos();
                let m11 = i1 + i2 + m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2);
                let m12 = i2 + m2 * (lc2 * lc2 + l1 * lc2 * c2);
                let m22 = i2 + m2 * lc2 * lc2;
                let h = m2 * l1 * lc2 * s2;
                let (qd1, qd2) = (s[2], s[3]);
                let r1 = gain * u[0] + h * qd2 * (2.0 * qd1 + qd2) - b * qd1;
                let r2 = gain * u[1] - h * qd1 * qd1 - b * qd2;
                let det = m11 * m22 - m12 * m12;
                out[0] = qd1;
                out[1] = qd2;
                out[2] = (m22 * r1 - m12 * r2) / det;
                out[3] = (m11 * r2 - m12 * r1) / det;
            }
        }
    }

    fn integrate(&self, state: &[f64], u: &[f64], dt: f64) -> [f64; MAX_STATE] {
        let n = state.len();
        let substeps = substep_count(dt);
        let h = dt / substeps as f64;
        let mut s = [0.0; MAX_STATE];
        s[..n].copy_from_slice(state);
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) = ([0.0; MAX_STATE], [0.0; MAX_STATE], [0.0; MAX_STATE], [0.0; MAX_STATE], [0.0; MAX_STATE]);
        for _ in 0..substeps {
            self.derivative(&s, u, &mut k1);
            for i in 0..n {
                tmp[i] = s[i] + 0.5 * h * k1[i];
            }
            self.derivative(&tmp, u, &mut k2);
            for i in 0..n {
                tmp[i] = s[i] + 0.5 * h * k2[i];
            }
            self.derivative(&tmp, u, &mut k3);
            for i in 0..n {
                tmp[i] = s[i] + h * k3[i];
            }
            self.derivative(&tmp, u, &mut k4);
            for i in 0..n {
                s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        s
    }

    /// Integrates the ODE over `dt` with the action held constant.
    pub fn step(&self, state: &[f64], action: &[f64], dt: f64) -> Result<Vec<f64>> {
        let n = self.state_dim();
        if state.len() != n || action.len() != self.act_dim() {
            return Err(structural("state or action has the wrong length"));
        }
        if !(dt > 0.0 && dt <= 0.1) {
            return Err(config(format!("dt {dt} outside (0, 0.1]")));
        }
        if state.iter().chain(action).any(|v| !v.is_finite()) {
            return Err(numeric("non-finite state or action"));
        }
        let mut u = [0.0; MAX_ACT];
        for (dst, a) in u.iter_mut().zip(action) {
            *dst = a.clamp(-1.0, 1.0);
        }
        let s = self.integrate(state, &u, dt);
        let s = s[..n].to_vec();
        if s.iter().any(|v| !v.is_finite()) {
            return Err(numeric("integration produced a non-finite state"));
        }
        Ok(s)
    }

    /// Over-parameterized observation of a state.
    pub fn observe(&self, state: &[f64]) -> Vec<f64> {
        match self.kind {
            EnvKind::Pendulum => {
                let (s, c) = state[0].sin_cos();
                vec![s, c, state[1]]
            }
            EnvKind::CartpoleSwingup => {
                let (s, c) = state[1].sin_cos();
                vec![state[0], s, c, state[2], state[3]]
            }
            EnvKind::Reacher2 => {
                let (s1, c1) = state[0].sin_cos();
                let (s2, c2) = state[1].sin_cos();
                vec![s1, c1, s2, c2, state[2], state[3]]
            }
        }
    }

    /// Recovers the minimal state from an observation; angles come back in
    /// `(-pi, pi]`.
    pub fn state_from_obs(&self, obs: &[f64]) -> Vec<f64> {
        match self.kind {
            EnvKind::Pendulum => vec![obs[0].atan2(obs[1]), obs[2]],
            EnvKind::CartpoleSwingup => vec![obs[0], obs[1].atan2(obs[2]), obs[3], obs[4]],
            EnvKind::Reacher2 => vec![obs[0].atan2(obs[1]), obs[2].atan2(obs[3]), obs[4], obs[5]],
        }
    }

    /// Nominal initial state (zero reset noise).
    pub fn nominal_state(&self) -> Vec<f64> {
        match self.kind {
            EnvKind::Pendulum => vec![std::f64::consts::PI, 0.0],
            EnvKind::CartpoleSwingup => vec![0.0, std::f64::consts::PI, 0.0, 0.0],
            EnvKind::Reacher2 => vec![0.0, 0.0, 0.0, 0.0],
        }
    }

    /// Half-widths of the uniform reset perturbation at `reset_noise = 1`.
    pub fn reset_half_widths(&self) -> Vec<f64> {
        match self.kind {
            EnvKind::Pendulum => vec![0.1, 0.1],
            EnvKind::CartpoleSwingup => vec![0.1, 0.1, 0.05, 0.05],
            EnvKind::Reacher2 => vec![std::f64::consts::PI, std::f64::consts::PI, 0.0, 0.0],
        }
    }

    /// Per-dimension `(lo, hi)` bounds that every reset lies within.
    pub fn reset_bounds(&self) -> Vec<(f64, f64)> {
        self.nominal_state()
            .iter()
            .zip(self.reset_half_widths())
            .map(|(c, w)| (c - w * self.reset_noise, c + w * self.reset_noise))
            .collect()
    }

    /// Samples an initial state: nominal plus a uniform perturbation.
    pub fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        self.nominal_state()
            .into_iter()
            .zip(self.reset_half_widths())
            .map(|(c, w)| {
                let half = w * self.reset_noise;
                if half > 0.0 {
                    c + rng.uniform_range(-half, half)
                } else {
                    c
                }
            })
            .collect()
    }

    /// Runs `policy(obs, t)` for `length` base steps from a sampled start.
    pub fn run_episode<P>(&self, reward: &RewardFn, policy: P, length: usize, rng: &mut Rng) -> Result<Episode>
    where
        P: FnMut(&[f64], usize) -> Vec<f64>,
    {
        let s0 = self.reset(rng);
        self.run_episode_from(reward, &s0, policy, length)
    }

    /// Same as [`EnvSpec::run_episode`] from a given start state. The reward of
    /// transition `t` is evaluated on the state reached after it.
    pub fn run_episode_from<P>(&self, reward: &RewardFn, state0: &[f64], mut policy: P, length: usize) -> Result<Episode>
    where
        P: FnMut(&[f64], usize) -> Vec<f64>,
    {
        if length == 0 {
            return Err(config("episode length must be >= 1"));
        }
        let mut episode = Episode::with_capacity(self.dt_base, self.obs_dim(), self.act_dim(), length);
        let mut state = state0.to_vec();
        let mut obs = self.observe(&state);
        episode.push_observation(&obs);
        for t in 0..length {
            let action = policy(&obs, t);
            if action.len() != self.act_dim() {
                return Err(structural("policy returned an action of the wrong length"));
            }
            if action.iter().any(|a| !a.is_finite()) {
                return Err(numeric(format!("policy returned a non-finite action at step {t}")));
            }
            let action: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
            state = self.step(&state, &action, self.dt_base)?;
            obs = self.observe(&state);
            let r = reward.evaluate(self, &obs, &action);
            episode.push_transition(&action, r, &obs);
        }
        Ok(episode)
    }

    /// Total mechanical energy (pendulum only), used by fidelity checks.
    pub fn pendulum_energy(&self, state: &[f64]) -> f64 {
        let [m, l, g, ..] = self.physics;
        0.5 * m * l * l * state[1] * state[1] + m * g * l * state[0].cos()
    }
}

/// Number of equal RK4 substeps used for an interval `dt`.
pub fn substep_count(dt: f64) -> usize {
    ((dt / MAX_SUBSTEP) - 1e-9).ceil().max(1.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn pendulum_equilibrium_is_fixed() {
        let env = EnvSpec::new(EnvKind::Pendulum);
        let s = env.step(&[PI, 0.0], &[0.0], 0.01).unwrap();
        assert!((s[0] - PI).abs() < 1e-9 && s[1].abs() < 1e-9);
    }

    #[test]
    fn cartpole_hanging_equilibrium_is_fixed() {
        let env = EnvSpec::new(EnvKind::CartpoleSwingup);
        let mut s = vec![0.0, PI, 0.0, 0.0];
        for _ in 0..100 {
            s = env.step(&s, &[0.0], 0.01).unwrap();
        }
        assert!((s[1] - PI).abs() < 1e-9);
        assert!(s[0].abs() < 1e-9 && s[2].abs() < 1e-9 && s[3].abs() < 1e-9);
    }

    #[test]
    fn undamped_pendulum_conserves_energy() {
        let mut env = EnvSpec::new(EnvKind::Pendulum);
        env.set_constant("damping", 0.0).unwrap();
        let mut s = vec![2.0, 0.5];
        let e0 = env.pendulum_energy(&s);
        for _ in 0..1000 {
            s = env.step(&s, &[0.0], 0.01).unwrap();
        }
        let drift = ((env.pendulum_energy(&s) - e0) / e0).abs();
        assert!(drift < 1e-5, "drift {drift}");
    }

    #[test]
    fn cartpole_mirror_symmetry() {
        let env = EnvSpec::new(EnvKind::CartpoleSwingup);
        let mut a = vec![0.3, 2.0, -0.4, 1.1];
        let mut b: Vec<f64> = a.iter().map(|v| -v).collect();
        for _ in 0..200 {
            a = env.step(&a, &[0.7], 0.01).unwrap();
            b = env.step(&b, &[-0.7], 0.01).unwrap();
        }
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn composed_steps_match_long_step() {
        for kind in EnvKind::ALL {
            let env = EnvSpec::new(kind);
            let s0: Vec<f64> = (0..env.state_dim()).map(|i| 0.3 + 0.2 * i as f64).collect();
            let u = vec![0.4; env.act_dim()];
            let mut s = s0.clone();
            for _ in 0..4 {
                s = env.step(&s, &u, 0.01).unwrap();
            }
            let long = env.step(&s0, &u, 0.04).unwrap();
            for (x, y) in s.iter().zip(&long) {
                assert!((x - y).abs() < 1e-7, "{kind}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn observation_manifold_and_inverse() {
        let mut rng = Rng::new(8);
        for kind in EnvKind::ALL {
            let env = EnvSpec::new(kind);
            assert_eq!(env.observe(&vec![0.0; env.state_dim()]).len(), env.obs_dim());
            for _ in 0..200 {
                let s: Vec<f64> = (0..env.state_dim()).map(|_| rng.uniform_range(-20.0, 20.0)).collect();
                let o = env.observe(&s);
                let back = env.state_from_obs(&o);
                for i in 0..env.state_dim() {
                    if env.angle_indices().contains(&i) {
                        let d = (s[i] - back[i]).rem_euclid(2.0 * PI);
                        assert!(d < 1e-9 || (2.0 * PI - d) < 1e-9);
                    } else {
                        assert_eq!(s[i], back[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn sin_cos_of_zero() {
        let env = EnvSpec::new(EnvKind::Pendulum);
        assert_eq!(env.observe(&[0.0, 0.0]), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn reset_is_deterministic_and_bounded() {
        for kind in EnvKind::ALL {
            let env = EnvSpec::new(kind);
            assert_eq!(env.reset(&mut Rng::new(4)), env.reset(&mut Rng::new(4)));
            let bounds = env.reset_bounds();
            let mut rng = Rng::new(5);
            for _ in 0..10_000 {
                let s = env.reset(&mut rng);
                for (v, (lo, hi)) in s.iter().zip(&bounds) {
                    assert!(*v >= *lo && *v <= *hi);
                }
            }
            let mut quiet = env.clone();
            quiet.reset_noise = 0.0;
            assert_eq!(quiet.reset(&mut rng), env.nominal_state());
        }
    }

    #[test]
    fn episode_replay_is_consistent() {
        let env = EnvSpec::new(EnvKind::CartpoleSwingup);
        let reward = RewardFn::default_for(env.kind);
        let mut rng = Rng::new(1);
        let s0 = env.reset(&mut rng);
        let mut prng = Rng::new(2);
        let ep = env
            .run_episode_from(&reward, &s0, |_, _| vec![prng.uniform_range(-1.5, 1.5)], 50)
            .unwrap();
        assert_eq!(ep.len(), 50);
        let mut s = s0.clone();
        for t in 0..50 {
            assert!(ep.actions()[[t, 0]].abs() <= 1.0);
            s = env.step(&s, &[ep.actions()[[t, 0]]], env.dt_base).unwrap();
            let o = env.observe(&s);
            assert_eq!(ep.observations().row(t + 1).to_vec(), o);
            assert!((0.0..=1.0).contains(&ep.rewards()[t]));
        }
    }

    #[test]
    fn resting_pendulum_episode_is_static() {
        let mut env = EnvSpec::new(EnvKind::Pendulum);
        env.reset_noise = 0.0;
        let reward = RewardFn::default_for(env.kind);
        let ep = env.run_episode(&reward, |_, _| vec![0.0], 100, &mut Rng::new(0)).unwrap();
        let first = ep.observations().row(0).to_owned();
        for row in ep.observations().rows() {
            for (a, b) in row.iter().zip(first.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn non_finite_policy_action_errors() {
        let env = EnvSpec::new(EnvKind::Pendulum);
        let reward = RewardFn::default_for(env.kind);
        let r = env.run_episode(&reward, |_, _| vec![f64::NAN], 10, &mut Rng::new(0));
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn unknown_constant_rejected() {
        let mut env = EnvSpec::new(EnvKind::Pendulum);
        assert!(env.set_constant("warp_drive", 1.0).is_err());
        assert!("hovercraft".parse::<EnvKind>().is_err());
    }
}
