use std::f64::consts::PI;

use super::car::CarState;
use super::track::{point_segment, ray_segment, Track};

/// The three sensing modalities, in block order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sensor {
    Physical,
    Laser,
    Image,
}

impl Sensor {
    pub const ALL: [Sensor; 3] = [Sensor::Physical, Sensor::Laser, Sensor::Image];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Sensor::Physical => "physical",
            Sensor::Laser => "laser",
            Sensor::Image => "image",
        }
    }
}

pub const PHYSICAL_DIM: usize = 10;

/// Fixed per-channel divisors for the physical block:
/// v_x, v_y, yaw rate, track_pos, angle, four wheel speeds, engine speed.
pub const PHYSICAL_SCALES: [f64; PHYSICAL_DIM] =
    [30.0, 5.0, 5.0, 1.0, 1.0, 100.0, 100.0, 100.0, 100.0, 500.0];

#[derive(Debug, Clone, PartialEq)]
pub struct LaserSpec {
    pub beams: usize,
    pub fov: f64,
    pub max_range: f64,
    pub frames: usize,
}

impl Default for LaserSpec {
    fn default() -> Self {
        Self {
            beams: 19,
            fov: PI,
            max_range: 50.0,
            frames: 1,
        }
    }
}

impl LaserSpec {
    /// Beam angle relative to heading; beam 0 points right (-fov/2).
    pub fn beam_angle(&self, k: usize) -> f64 {
        if self.beams == 1 {
            return 0.0;
        }
        -self.fov / 2.0 + self.fov * k as f64 / (self.beams - 1) as f64
    }

    pub fn dim(&self) -> usize {
        self.beams * self.frames
    }
}

/// Bird's-eye occupancy grid around the car.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub cell: f64,
    pub frames: usize,
}

impl Default for ImageSpec {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 1,
            cell: 2.0,
            frames: 1,
        }
    }
}

impl ImageSpec {
    pub fn frame_dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn dim(&self) -> usize {
        self.frame_dim() * self.frames
    }

    /// World position of the centre of cell (`row`, `col`). Row 0 is the
    /// farthest ahead, column 0 the farthest left.
    pub fn cell_center(&self, state: &CarState, row: usize, col: usize) -> [f64; 2] {
        let fwd = (self.height as f64 / 2.0 - row as f64 - 0.5) * self.cell;
        let left = (self.width as f64 / 2.0 - col as f64 - 0.5) * self.cell;
        let (s, c) = state.heading.sin_cos();
        [
            state.position[0] + fwd * c - left * s,
            state.position[1] + fwd * s + left * c,
        ]
    }
}

/// Raw physical readout in SI units.
pub fn physical_readout(state: &CarState) -> [f64; PHYSICAL_DIM] {
    let w = state.wheel_speeds;
    [
        state.v_x,
        state.v_y,
        state.yaw_rate,
        state.track_pos,
        state.angle,
        w[0],
        w[1],
        w[2],
        w[3],
        state.engine_speed,
    ]
}

/// Range to the nearest track boundary along each beam, clipped to `max_range`.
pub fn raycast_laser(state: &CarState, track: &Track, spec: &LaserSpec) -> Vec<f64> {
    let origin = state.position;
    let near: Vec<_> = track
        .boundary_segments()
        .filter(|&(a, b)| point_segment(origin, a, b).0 <= spec.max_range)
        .collect();
    (0..spec.beams)
        .map(|k| {
            let ang = state.heading + spec.beam_angle(k);
            let dir = [ang.cos(), ang.sin()];
            near.iter()
                .filter_map(|&(a, b)| ray_segment(origin, dir, a, b))
                .fold(spec.max_range, f64::min)
        })
        .collect()
}

/// One occupancy frame: 1 inside the track, 0 outside, for every channel.
pub fn render_grid(state: &CarState, track: &Track, spec: &ImageSpec) -> Vec<f64> {
    let reach = 0.5
        * spec.cell
        * ((spec.height * spec.height + spec.width * spec.width) as f64).sqrt()
        + track.half_width();
    let near = track.segments_near(state.position, reach + spec.cell);
    let mut plane = Vec::with_capacity(spec.height * spec.width);
    for r in 0..spec.height {
        for c in 0..spec.width {
            let p = spec.cell_center(state, r, c);
            plane.push(if track.contains_among(p, &near) { 1.0 } else { 0.0 });
        }
    }
    let mut out = Vec::with_capacity(spec.frame_dim());
    for _ in 0..spec.channels {
        out.extend_from_slice(&plane);
    }
    out
}

/// One observation from all three sensors, in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiObservation {
    pub physical: Vec<f64>,
    /// Frames of ranges in meters, oldest first.
    pub laser: Vec<f64>,
    /// Frames of occupancy grids, oldest first.
    pub image: Vec<f64>,
    pub available: [bool; 3],
    pub max_range: f64,
}

impl MultiObservation {
    pub fn block(&self, sensor: Sensor) -> &[f64] {
        match sensor {
            Sensor::Physical => &self.physical,
            Sensor::Laser => &self.laser,
            Sensor::Image => &self.image,
        }
    }

    pub fn block_mut(&mut self, sensor: Sensor) -> &mut Vec<f64> {
        match sensor {
            Sensor::Physical => &mut self.physical,
            Sensor::Laser => &mut self.laser,
            Sensor::Image => &mut self.image,
        }
    }

    /// Divisor that maps one raw element of `sensor` to its normalized scale.
    pub fn scale(&self, sensor: Sensor, element: usize) -> f64 {
        match sensor {
            Sensor::Physical => PHYSICAL_SCALES[element % PHYSICAL_DIM],
            Sensor::Laser => self.max_range,
            Sensor::Image => 1.0,
        }
    }

    pub fn normalized(&self, sensor: Sensor) -> Vec<f64> {
        self.block(sensor)
            .iter()
            .enumerate()
            .map(|(i, v)| v / self.scale(sensor, i))
            .collect()
    }

    /// Normalized blocks for `sensors`, concatenated in the given order.
    pub fn flatten(&self, sensors: &[Sensor]) -> Vec<f64> {
        sensors.iter().flat_map(|&s| self.normalized(s)).collect()
    }

    pub fn is_available(&self, sensor: Sensor) -> bool {
        self.available[sensor.index()]
    }
}
