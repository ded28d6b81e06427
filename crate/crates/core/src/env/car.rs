use std::f64::consts::PI;

use super::track::Track;

/// Kinematic bicycle constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    pub wheelbase: f64,
    pub max_steer: f64,
    pub max_accel: f64,
    pub drag: f64,
    pub max_speed: f64,
    pub wheel_radius: f64,
    pub engine_idle: f64,
    pub gear_ratio: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self {
            wheelbase: 2.5,
            max_steer: 0.5,
            max_accel: 4.0,
            drag: 0.1,
            max_speed: 30.0,
            wheel_radius: 0.3,
            engine_idle: 100.0,
            gear_ratio: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarState {
    pub position: [f64; 2],
    pub heading: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub yaw_rate: f64,
    pub wheel_speeds: [f64; 4],
    pub engine_speed: f64,
    /// Signed lateral offset divided by the half width; positive is left.
    pub track_pos: f64,
    /// Heading minus centerline tangent, wrapped to (-pi, pi].
    pub angle: f64,
    /// Centerline segment nearest the car.
    pub segment: usize,
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

impl CarState {
    /// Stationary car on centerline vertex `start`, aligned with the track.
    pub fn at_start(track: &Track, start: usize, dynamics: &Dynamics) -> Self {
        let mut s = Self {
            position: track.point(start),
            heading: track.tangent(start),
            v_x: 0.0,
            v_y: 0.0,
            yaw_rate: 0.0,
            wheel_speeds: [0.0; 4],
            engine_speed: dynamics.engine_idle,
            track_pos: 0.0,
            angle: 0.0,
            segment: start % track.len(),
        };
        s.locate(track);
        s
    }

    /// Recomputes `track_pos`, `angle` and `segment` from the pose.
    pub fn locate(&mut self, track: &Track) {
        let p = track.project(self.position);
        self.track_pos = p.offset / track.half_width();
        self.angle = wrap_angle(self.heading - p.tangent_angle);
        self.segment = p.segment;
    }

    pub fn off_track(&self) -> bool {
        self.track_pos.abs() > 1.0
    }
}

/// One explicit Euler step of the kinematic bicycle model.
///
/// Heading and position advance with the pre-step speed and heading; the
/// speed then integrates `accel * a_max - drag * v` and is clamped to
/// `[0, v_max]`. Lateral speed, yaw rate, wheel and engine speeds are set
/// kinematically from the new speed.
pub fn integrate(
    state: &CarState,
    steer: f64,
    accel: f64,
    dt: f64,
    dynamics: &Dynamics,
    track: &Track,
) -> CarState {
    let tan_delta = (steer * dynamics.max_steer).tan();
    let turn = state.v_x / dynamics.wheelbase * tan_delta;
    let heading = wrap_angle(state.heading + dt * turn);
    let position = [
        state.position[0] + dt * state.v_x * state.heading.cos(),
        state.position[1] + dt * state.v_x * state.heading.sin(),
    ];
    let v_x = (state.v_x + dt * (accel * dynamics.max_accel - dynamics.drag * state.v_x))
        .clamp(0.0, dynamics.max_speed);
    let yaw_rate = v_x / dynamics.wheelbase * tan_delta;
    let wheel = v_x / dynamics.wheel_radius;
    let mut next = CarState {
        position,
        heading,
        v_x,
        v_y: yaw_rate * dynamics.wheelbase / 2.0,
        yaw_rate,
        wheel_speeds: [wheel; 4],
        engine_speed: dynamics.engine_idle + dynamics.gear_ratio * wheel,
        track_pos: 0.0,
        angle: 0.0,
        segment: state.segment,
    };
    next.locate(track);
    next
}
