//! Deterministic 2D track driving: kinematic car, three simulated sensors,
//! drift-penalized reward and sensor corruption.

mod car;
mod noise;
mod sensors;
mod track;

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use car::{integrate, CarState, Dynamics};
pub use noise::{corrupt, SensorNoiseSpec};
pub use sensors::{
    physical_readout, raycast_laser, render_grid, ImageSpec, LaserSpec, MultiObservation, Sensor,
    PHYSICAL_DIM, PHYSICAL_SCALES,
};
pub use track::{Point, Projection, Track, TrackSpec};

use crate::error::{Error, Result};

/// Weights of the three reward terms and the off-track penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardWeights {
    pub progress: f64,
    pub drift: f64,
    pub offset: f64,
    pub off_track_penalty: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            progress: 1.0,
            drift: 1.0,
            offset: 1.0,
            off_track_penalty: 1.0,
        }
    }
}

/// `v cos(angle) - v |sin(angle)| - v |track_pos|`, weighted; the
/// termination penalty is applied separately by [`TrackEnv::step`].
pub fn reward(state: &CarState, w: &RewardWeights) -> f64 {
    let v = state.v_x;
    w.progress * v * state.angle.cos()
        - w.drift * v * state.angle.sin().abs()
        - w.offset * v * state.track_pos.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartMode {
    /// Always the first centerline vertex.
    Fixed,
    /// A vertex drawn from the reset seed.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub dynamics: Dynamics,
    pub dt: f64,
    pub max_steps: usize,
    pub laser: LaserSpec,
    pub image: ImageSpec,
    pub reward: RewardWeights,
    /// Sensors that are simulated; disabled blocks stay zero.
    pub enabled: [bool; 3],
    pub start: StartMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dynamics: Dynamics::default(),
            dt: 0.05,
            max_steps: 400,
            laser: LaserSpec::default(),
            image: ImageSpec::default(),
            reward: RewardWeights::default(),
            enabled: [true; 3],
            start: StartMode::Fixed,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be positive"));
        }
        if self.laser.beams == 0 || self.laser.frames == 0 || !(self.laser.max_range > 0.0) {
            return Err(Error::config("laser needs beams, frames and a positive range"));
        }
        let im = &self.image;
        if im.height == 0 || im.width == 0 || im.channels == 0 || im.frames == 0 || !(im.cell > 0.0)
        {
            return Err(Error::config("image dimensions must be positive"));
        }
        Ok(())
    }

    /// Raw block widths: physical, laser (all frames), image (all frames).
    pub fn sensor_dims(&self) -> [usize; 3] {
        [PHYSICAL_DIM, self.laser.dim(), self.image.dim()]
    }
}

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: MultiObservation,
    pub reward: f64,
    pub done: bool,
    /// The car left the track (terminal, not a time limit).
    pub off_track: bool,
}

/// A single track environment instance.
#[derive(Debug, Clone)]
pub struct TrackEnv {
    track: Track,
    cfg: EnvConfig,
    state: CarState,
    laser_frames: VecDeque<Vec<f64>>,
    image_frames: VecDeque<Vec<f64>>,
    steps: usize,
}

impl TrackEnv {
    pub fn new(spec: TrackSpec, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let track = Track::new(spec)?;
        let state = CarState::at_start(&track, 0, &cfg.dynamics);
        let mut env = Self {
            track,
            cfg,
            state,
            laser_frames: VecDeque::new(),
            image_frames: VecDeque::new(),
            steps: 0,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &CarState {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Places the car at rest on the start vertex and refills the frame stacks.
    pub fn reset(&mut self, seed: u64) -> MultiObservation {
        let start = match self.cfg.start {
            StartMode::Fixed => 0,
            StartMode::Random => ChaCha8Rng::seed_from_u64(seed).random_range(0..self.track.len()),
        };
        self.state = CarState::at_start(&self.track, start, &self.cfg.dynamics);
        self.steps = 0;
        let (laser, image) = self.read_frames();
        self.laser_frames = std::iter::repeat_n(laser, self.cfg.laser.frames).collect();
        self.image_frames = std::iter::repeat_n(image, self.cfg.image.frames).collect();
        self.observation()
    }

    /// Advances the car by one `dt` with `(steer, accel)` in `[-1, 1]`.
    pub fn step(&mut self, action: [f64; 2]) -> Result<Step> {
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::numeric("env step", format!("non-finite action {action:?}")));
        }
        let clipped = action.map(|a| a.clamp(-1.0, 1.0));
        if clipped != action {
            log::warn!("action {action:?} clipped to {clipped:?}");
        }
        self.state = integrate(
            &self.state,
            clipped[0],
            clipped[1],
            self.cfg.dt,
            &self.cfg.dynamics,
            &self.track,
        );
        self.steps += 1;
        let (laser, image) = self.read_frames();
        push_frame(&mut self.laser_frames, laser, self.cfg.laser.frames);
        push_frame(&mut self.image_frames, image, self.cfg.image.frames);

        let off_track = self.state.off_track();
        let mut r = reward(&self.state, &self.cfg.reward);
        if off_track {
            r -= self.cfg.reward.off_track_penalty;
        }
        Ok(Step {
            observation: self.observation(),
            reward: r,
            done: off_track || self.steps >= self.cfg.max_steps,
            off_track,
        })
    }

    fn read_frames(&self) -> (Vec<f64>, Vec<f64>) {
        let laser = if self.cfg.enabled[Sensor::Laser.index()] {
            raycast_laser(&self.state, &self.track, &self.cfg.laser)
        } else {
            vec![0.0; self.cfg.laser.beams]
        };
        let image = if self.cfg.enabled[Sensor::Image.index()] {
            render_grid(&self.state, &self.track, &self.cfg.image)
        } else {
            vec![0.0; self.cfg.image.frame_dim()]
        };
        (laser, image)
    }

    fn observation(&self) -> MultiObservation {
        MultiObservation {
            physical: physical_readout(&self.state).to_vec(),
            laser: self.laser_frames.iter().flatten().copied().collect(),
            image: self.image_frames.iter().flatten().copied().collect(),
            available: self.cfg.enabled,
            max_range: self.cfg.laser.max_range,
        }
    }
}

fn push_frame(frames: &mut VecDeque<Vec<f64>>, frame: Vec<f64>, cap: usize) {
    frames.push_back(frame);
    while frames.len() > cap {
        frames.pop_front();
    }
}

/// One row of a trajectory dump.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v_x: f64,
    pub track_pos: f64,
    pub angle: f64,
    pub reward: f64,
    pub done: bool,
}

impl TrajectoryRow {
    pub fn new(t: usize, s: &CarState, reward: f64, done: bool) -> Self {
        Self {
            t,
            x: s.position[0],
            y: s.position[1],
            heading: s.heading,
            v_x: s.v_x,
            track_pos: s.track_pos,
            angle: s.angle,
            reward,
            done,
        }
    }
}

pub fn write_trajectory_csv(rows: &[TrajectoryRow], path: &Path) -> Result<()> {
    let mut out = String::from("t,x,y,heading,v_x,track_pos,angle,reward,done\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.t,
            r.x,
            r.y,
            r.heading,
            r.v_x,
            r.track_pos,
            r.angle,
            r.reward,
            u8::from(r.done)
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
