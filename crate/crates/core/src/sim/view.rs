//! Symbolic view rendering.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grid_walk::walk_segment;
use super::scene::SceneMap;
use super::{bearing_between, heading_vector, normalize_heading, wrap_signed, Point, Pose, SimConfig};

/// Forward-centred offsets used by the execution stage.
pub const LOCAL_OFFSETS: [f64; 3] = [-30.0, 0.0, 30.0];
/// Six views tiling the full circle, used by the transition stage.
pub const PANORAMIC_OFFSETS: [f64; 6] = [0.0, 60.0, 120.0, 180.0, 240.0, 300.0];

/// Number of depth rays spread evenly across the field of view.
const DEPTH_RAYS: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleLandmark {
    pub label: String,
    /// Meters, rounded to millimetres.
    pub range: f64,
    /// Degrees relative to the view direction, positive to the left.
    pub bearing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewDescriptor {
    pub fov: f64,
    pub range: f64,
    /// Sorted by range, then bearing, then label.
    pub landmarks: Vec<VisibleLandmark>,
    /// Free-space depth along evenly spaced rays, leftmost first.
    pub depth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub heading: f64,
    pub offset: f64,
    pub descriptor: ViewDescriptor,
}

impl Observation {
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("observation serializes")
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// One-line text rendering used in prompts and summaries.
    pub fn describe(&self) -> String {
        if self.descriptor.landmarks.is_empty() {
            return "no landmarks in view".to_string();
        }
        self.descriptor
            .landmarks
            .iter()
            .map(|l| format!("{} at {:.1} m, {:+.0}°", l.label, l.range, l.bearing))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewRegime {
    Local,
    Panoramic,
}

impl ViewRegime {
    pub fn offsets(&self) -> &'static [f64] {
        match self {
            ViewRegime::Local => &LOCAL_OFFSETS,
            ViewRegime::Panoramic => &PANORAMIC_OFFSETS,
        }
    }

    pub fn role_prefix(&self) -> &'static str {
        match self {
            ViewRegime::Local => "local",
            ViewRegime::Panoramic => "pan",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSet {
    regime: ViewRegime,
    views: Vec<Observation>,
}

impl ViewSet {
    pub fn regime(&self) -> ViewRegime {
        self.regime
    }

    pub fn views(&self) -> &[Observation] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// The 0°-offset view.
    pub fn frontal(&self) -> &Observation {
        self.views
            .iter()
            .find(|v| v.offset == 0.0)
            .expect("every view set contains the 0° view")
    }
}

fn round_to(v: f64, quantum: f64) -> f64 {
    let r = (v / quantum).round() * quantum;
    // keep the canonical text free of "-0.0"
    if r == 0.0 {
        0.0
    } else {
        (r * 1e6).round() / 1e6
    }
}

/// Renders the view at `heading_offset` degrees from the pose heading.
/// Landmarks are listed when they are inside the cone, within range and not
/// occluded by a blocked cell other than their own.
pub fn render_view(scene: &SceneMap, pose: &Pose, heading_offset: f64, config: &SimConfig) -> Observation {
    let view_heading = normalize_heading(pose.heading + heading_offset);
    let origin = pose.position();
    let half_fov = config.fov / 2.0;

    let mut landmarks: Vec<VisibleLandmark> = scene
        .landmarks()
        .iter()
        .filter_map(|lm| {
            let center = scene.cell_center(lm.cell);
            let range = origin.distance(&center);
            if range > config.view_range + 1e-9 {
                return None;
            }
            let bearing = if range < 1e-9 {
                0.0
            } else {
                wrap_signed(bearing_between(origin, center) - view_heading)
            };
            if bearing.abs() > half_fov + 1e-9 {
                return None;
            }
            if !line_of_sight(scene, origin, center, lm.cell) {
                return None;
            }
            Some(VisibleLandmark {
                label: lm.label.clone(),
                range: round_to(range, 1e-3),
                bearing: round_to(bearing, 1e-2),
            })
        })
        .collect();
    landmarks.sort_by(|a, b| {
        a.range
            .total_cmp(&b.range)
            .then(a.bearing.total_cmp(&b.bearing))
            .then_with(|| a.label.cmp(&b.label))
    });

    let depth = (0..DEPTH_RAYS)
        .map(|i| {
            let rel = half_fov - config.fov * i as f64 / (DEPTH_RAYS - 1) as f64;
            round_to(
                ray_depth(scene, origin, view_heading + rel, config.view_range),
                1e-3,
            )
        })
        .collect();

    Observation {
        heading: view_heading,
        offset: heading_offset,
        descriptor: ViewDescriptor {
            fov: config.fov,
            range: config.view_range,
            landmarks,
            depth,
        },
    }
}

fn line_of_sight(scene: &SceneMap, from: Point, to: Point, own: super::Cell) -> bool {
    let mut clear = true;
    walk_segment(scene.cell_size(), from, to, |c, r, _| {
        let is_own = c == own.col as i64 && r == own.row as i64;
        clear = is_own || scene.is_free_signed(c, r);
        clear
    });
    clear
}

fn ray_depth(scene: &SceneMap, origin: Point, heading: f64, max_range: f64) -> f64 {
    let (dx, dy) = heading_vector(heading);
    let end = Point::new(origin.x + dx * max_range, origin.y + dy * max_range);
    let mut depth = max_range;
    walk_segment(scene.cell_size(), origin, end, |c, r, t| {
        if scene.is_free_signed(c, r) {
            true
        } else {
            depth = depth.min(t * max_range);
            false
        }
    });
    depth
}

fn view_set(scene: &SceneMap, pose: &Pose, regime: ViewRegime, config: &SimConfig) -> ViewSet {
    ViewSet {
        regime,
        views: regime
            .offsets()
            .iter()
            .map(|&offset| render_view(scene, pose, offset, config))
            .collect(),
    }
}

/// Views at -30°, 0° and +30° around the current heading.
pub fn local_views(scene: &SceneMap, pose: &Pose, config: &SimConfig) -> ViewSet {
    view_set(scene, pose, ViewRegime::Local, config)
}

/// Six views at 60° increments starting from the current heading.
pub fn panoramic_views(scene: &SceneMap, pose: &Pose, config: &SimConfig) -> ViewSet {
    view_set(scene, pose, ViewRegime::Panoramic, config)
}
