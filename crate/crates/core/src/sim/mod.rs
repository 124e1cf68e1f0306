//! Deterministic 2D navigation simulator.
//!
//! The world is an occupancy grid with labelled landmarks. The agent carries a
//! continuous pose; headings are measured in degrees with 0° pointing along +y
//! and increasing counterclockwise, so a heading of 90° faces -x.

mod geodesic;
mod grid_walk;
mod raster;
mod scene;
mod view;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geodesic::{Cost, DistanceField};
pub use raster::{render_png, RASTER_HEIGHT, RASTER_WIDTH};
pub use scene::{
    Cell, Episode, GroundTruthSubgoal, Landmark, SceneFile, SceneMap, LandmarkRecord,
    EPISODE_SCHEMA, SCENE_SCHEMA,
};
pub use view::{
    local_views, panoramic_views, render_view, Observation, ViewDescriptor, ViewRegime, ViewSet,
    VisibleLandmark, LOCAL_OFFSETS, PANORAMIC_OFFSETS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid agent state: position ({x}, {y}) is outside the grid or on a blocked cell")]
    InvalidState { x: f64, y: f64 },
    #[error("no free path between ({}, {}) and ({}, {})", from.x, from.y, to.x, to.y)]
    Unreachable { from: Point, to: Point },
    #[error("malformed scene: {0}")]
    Scene(String),
}

/// A position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

impl From<Point> for (f64, f64) {
    fn from(p: Point) -> Self {
        (p.x, p.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Degrees in `[0, 360)`.
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_heading(heading),
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Maps any angle onto `[0, 360)`.
pub fn normalize_heading(degrees: f64) -> f64 {
    let h = degrees.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if h >= 360.0 {
        0.0
    } else {
        snap(h)
    }
}

/// Maps any angle onto `(-180, 180]`.
pub fn wrap_signed(degrees: f64) -> f64 {
    let h = normalize_heading(degrees);
    if h > 180.0 {
        h - 360.0
    } else {
        h
    }
}

/// Unit direction of a heading: 0° is +y, 90° is -x.
pub fn heading_vector(heading: f64) -> (f64, f64) {
    let (s, c) = heading.to_radians().sin_cos();
    (-s, c)
}

/// Absolute heading (degrees, `[0, 360)`) of the vector `from -> to`.
pub fn bearing_between(from: Point, to: Point) -> f64 {
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    normalize_heading((-dx).atan2(dy).to_degrees())
}

/// Positions and angles are kept on a 1e-9 lattice so repeated motion stays
/// bit-reproducible and exact multiples of 90° do not leak 1e-17 residue.
pub(crate) fn snap(v: f64) -> f64 {
    let r = (v * 1e9).round() / 1e9;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::Forward,
        Action::TurnLeft,
        Action::TurnRight,
        Action::Stop,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::TurnLeft => "turn_left",
            Action::TurnRight => "turn_right",
            Action::Stop => "stop",
        }
    }

    pub fn is_motion(&self) -> bool {
        !matches!(self, Action::Stop)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub step_length: f64,
    pub turn_angle: f64,
    pub fov: f64,
    pub view_range: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            step_length: 0.25,
            turn_angle: 30.0,
            fov: 60.0,
            view_range: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub pose: Pose,
    pub collided: bool,
}

/// Applies one action. Forward is rejected (pose unchanged, `collided`) when
/// the swept segment touches a blocked or out-of-grid cell.
pub fn step(
    scene: &SceneMap,
    pose: Pose,
    action: Action,
    config: &SimConfig,
) -> Result<StepResult, SimError> {
    scene.check_pose(&pose)?;
    let result = match action {
        Action::Forward => {
            let (dx, dy) = heading_vector(pose.heading);
            let target = Point::new(
                snap(pose.x + dx * config.step_length),
                snap(pose.y + dy * config.step_length),
            );
            if scene.segment_is_free(pose.position(), target) {
                StepResult {
                    pose: Pose {
                        x: target.x,
                        y: target.y,
                        heading: pose.heading,
                    },
                    collided: false,
                }
            } else {
                StepResult {
                    pose,
                    collided: true,
                }
            }
        }
        Action::TurnLeft => StepResult {
            pose: Pose::new(pose.x, pose.y, pose.heading + config.turn_angle),
            collided: false,
        },
        Action::TurnRight => StepResult {
            pose: Pose::new(pose.x, pose.y, pose.heading - config.turn_angle),
            collided: false,
        },
        Action::Stop => StepResult {
            pose,
            collided: false,
        },
    };
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(cols: usize, rows: usize, cell: f64) -> SceneMap {
        let rows: Vec<String> = (0..rows).map(|_| ".".repeat(cols)).collect();
        SceneMap::from_rows("open", cell, &rows, vec![]).unwrap()
    }

    #[test]
    fn forward_moves_along_plus_y_at_zero_heading() {
        let scene = open(4, 4, 0.5);
        let r = step(&scene, Pose::new(0.0, 0.0, 0.0), Action::Forward, &SimConfig::default()).unwrap();
        assert_eq!(r.pose, Pose::new(0.0, 0.25, 0.0));
        assert!(!r.collided);
    }

    #[test]
    fn turn_left_is_counterclockwise() {
        let scene = open(4, 4, 0.5);
        let r = step(&scene, Pose::new(0.0, 0.0, 0.0), Action::TurnLeft, &SimConfig::default()).unwrap();
        assert_eq!(r.pose, Pose::new(0.0, 0.0, 30.0));
        let r = step(&scene, Pose::new(0.0, 0.0, 0.0), Action::TurnRight, &SimConfig::default()).unwrap();
        assert_eq!(r.pose.heading, 330.0);
    }

    #[test]
    fn forward_into_wall_collides() {
        let scene = SceneMap::from_rows("w", 0.25, &["..", "##"], vec![]).unwrap();
        let pose = Pose::new(0.125, 0.125, 0.0);
        let r = step(&scene, pose, Action::Forward, &SimConfig::default()).unwrap();
        assert_eq!(r.pose, pose);
        assert!(r.collided);
    }

    #[test]
    fn forward_off_the_grid_collides() {
        let scene = open(2, 2, 0.25);
        let pose = Pose::new(0.1, 0.4, 0.0);
        let r = step(&scene, pose, Action::Forward, &SimConfig::default()).unwrap();
        assert!(r.collided);
    }

    #[test]
    fn stop_keeps_pose() {
        let scene = open(2, 2, 0.5);
        let pose = Pose::new(0.3, 0.3, 120.0);
        let r = step(&scene, pose, Action::Stop, &SimConfig::default()).unwrap();
        assert_eq!(r.pose, pose);
        assert!(!r.collided);
    }

    #[test]
    fn pose_outside_grid_is_invalid() {
        let scene = open(2, 2, 0.5);
        let err = step(&scene, Pose::new(5.0, 0.0, 0.0), Action::Stop, &SimConfig::default());
        assert!(matches!(err, Err(SimError::InvalidState { .. })));
    }

    #[test]
    fn heading_normalization() {
        assert_eq!(normalize_heading(-30.0), 330.0);
        assert_eq!(normalize_heading(360.0), 0.0);
        assert_eq!(normalize_heading(720.0 + 15.0), 15.0);
        assert_eq!(wrap_signed(270.0), -90.0);
        assert_eq!(wrap_signed(180.0), 180.0);
    }

    #[test]
    fn ninety_degree_forward_is_exact() {
        let scene = open(8, 8, 0.5);
        let r = step(&scene, Pose::new(2.0, 2.0, 90.0), Action::Forward, &SimConfig::default()).unwrap();
        assert_eq!(r.pose.x, 1.75);
        assert_eq!(r.pose.y, 2.0);
    }
}
