use serde::{Deserialize, Serialize};

use super::grid_walk::walk_segment;
use super::{Point, Pose, SimError};

pub const SCENE_SCHEMA: &str = "stagenav.scene/1";
pub const EPISODE_SCHEMA: &str = "stagenav.episode/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Cell {
    pub col: usize,
    pub row: usize,
}

impl Cell {
    pub const fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }
}

impl From<(usize, usize)> for Cell {
    fn from((col, row): (usize, usize)) -> Self {
        Self { col, row }
    }
}

impl From<Cell> for (usize, usize) {
    fn from(c: Cell) -> Self {
        (c.col, c.row)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub label: String,
    pub cell: Cell,
    /// Lower is more salient.
    pub salience: u32,
}

/// Immutable occupancy grid. Row `r` spans `y ∈ [r·cell, (r+1)·cell)` and
/// column `c` spans `x ∈ [c·cell, (c+1)·cell)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMap {
    id: String,
    cell_size: f64,
    width: usize,
    height: usize,
    blocked: Vec<bool>,
    landmarks: Vec<Landmark>,
}

impl SceneMap {
    pub fn from_rows<S: AsRef<str>>(
        id: impl Into<String>,
        cell_size: f64,
        rows: &[S],
        landmarks: Vec<Landmark>,
    ) -> Result<Self, SimError> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(SimError::Scene(format!("cell_size must be positive, got {cell_size}")));
        }
        let height = rows.len();
        if height == 0 {
            return Err(SimError::Scene("grid has no rows".into()));
        }
        let width = rows[0].as_ref().chars().count();
        if width == 0 {
            return Err(SimError::Scene("grid has empty rows".into()));
        }
        let mut blocked = Vec::with_capacity(width * height);
        for (r, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.chars().count() != width {
                return Err(SimError::Scene(format!(
                    "row {r} has {} cells, expected {width}",
                    row.chars().count()
                )));
            }
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '.' => blocked.push(false),
                    '#' => blocked.push(true),
                    other => {
                        return Err(SimError::Scene(format!(
                            "row {r} col {c}: unknown occupancy symbol {other:?}"
                        )))
                    }
                }
            }
        }
        let scene = Self {
            id: id.into(),
            cell_size,
            width,
            height,
            blocked,
            landmarks,
        };
        for (i, lm) in scene.landmarks.iter().enumerate() {
            if !scene.in_bounds(lm.cell) {
                return Err(SimError::Scene(format!(
                    "landmark {i} ({}) at {:?} lies outside the grid",
                    lm.label, lm.cell
                )));
            }
        }
        Ok(scene)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.col < self.width && cell.row < self.height
    }

    pub(crate) fn index(&self, cell: Cell) -> usize {
        cell.row * self.width + cell.col
    }

    pub(crate) fn cell_at_index(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.in_bounds(cell) && !self.blocked[self.index(cell)]
    }

    pub(crate) fn is_free_signed(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && self.is_free(Cell::new(col as usize, row as usize))
    }

    pub fn cell_of(&self, p: Point) -> Option<Cell> {
        if !(p.x.is_finite() && p.y.is_finite()) || p.x < 0.0 || p.y < 0.0 {
            return None;
        }
        let cell = Cell::new(
            (p.x / self.cell_size).floor() as usize,
            (p.y / self.cell_size).floor() as usize,
        );
        self.in_bounds(cell).then_some(cell)
    }

    pub fn cell_center(&self, cell: Cell) -> Point {
        Point::new(
            (cell.col as f64 + 0.5) * self.cell_size,
            (cell.row as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn is_free_point(&self, p: Point) -> bool {
        self.cell_of(p).is_some_and(|c| self.is_free(c))
    }

    pub fn check_pose(&self, pose: &Pose) -> Result<(), SimError> {
        if pose.heading.is_finite() && self.is_free_point(pose.position()) {
            Ok(())
        } else {
            Err(SimError::InvalidState {
                x: pose.x,
                y: pose.y,
            })
        }
    }

    /// True when every cell swept by the segment is inside the grid and free.
    pub fn segment_is_free(&self, from: Point, to: Point) -> bool {
        let mut free = true;
        walk_segment(self.cell_size, from, to, |c, r, _| {
            free = self.is_free_signed(c, r);
            free
        });
        free
    }

    /// Row-major occupancy strings, the inverse of [`SceneMap::from_rows`].
    pub fn rows(&self) -> Vec<String> {
        (0..self.height)
            .map(|r| {
                (0..self.width)
                    .map(|c| if self.blocked[r * self.width + c] { '#' } else { '.' })
                    .collect()
            })
            .collect()
    }

    pub fn to_file(&self) -> SceneFile {
        SceneFile {
            schema: SCENE_SCHEMA.to_string(),
            id: self.id.clone(),
            cell_size: self.cell_size,
            rows: self.rows(),
            landmarks: self
                .landmarks
                .iter()
                .map(|l| LandmarkRecord {
                    label: l.label.clone(),
                    cell: l.cell,
                    salience: l.salience,
                })
                .collect(),
        }
    }
}

/// On-disk scene layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub schema: String,
    pub id: String,
    pub cell_size: f64,
    pub rows: Vec<String>,
    pub landmarks: Vec<LandmarkRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkRecord {
    pub label: String,
    pub cell: Cell,
    pub salience: u32,
}

impl TryFrom<SceneFile> for SceneMap {
    type Error = SimError;

    fn try_from(file: SceneFile) -> Result<Self, Self::Error> {
        if file.schema != SCENE_SCHEMA {
            return Err(SimError::Scene(format!(
                "unsupported scene schema {:?} (expected {SCENE_SCHEMA:?})",
                file.schema
            )));
        }
        let landmarks = file
            .landmarks
            .into_iter()
            .map(|l| Landmark {
                label: l.label,
                cell: l.cell,
                salience: l.salience,
            })
            .collect();
        SceneMap::from_rows(file.id, file.cell_size, &file.rows, landmarks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthSubgoal {
    pub text: String,
    pub waypoint: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub schema: String,
    pub id: String,
    pub scene_id: String,
    pub instruction: String,
    pub start: Pose,
    pub goal: Point,
    pub reference_path: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_subgoals: Option<Vec<GroundTruthSubgoal>>,
}

impl Episode {
    /// Structural checks that need no scene. Returns one message per problem.
    pub fn structural_violations(&self, success_threshold: f64) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema != EPISODE_SCHEMA {
            out.push(format!(
                "unsupported episode schema {:?} (expected {EPISODE_SCHEMA:?})",
                self.schema
            ));
        }
        if self.instruction.trim().is_empty() {
            out.push("instruction is empty".into());
        }
        match (self.reference_path.first(), self.reference_path.last()) {
            (Some(first), Some(last)) => {
                if first.distance(&self.start.position()) > 1e-6 {
                    out.push("reference_path does not begin at the start position".into());
                }
                if last.distance(&self.goal) > success_threshold {
                    out.push("reference_path does not end within the success threshold of the goal".into());
                }
            }
            _ => out.push("reference_path is empty".into()),
        }
        if let Some(subgoals) = &self.ground_truth_subgoals {
            if subgoals.is_empty() {
                out.push("ground_truth_subgoals is present but empty".into());
            }
            if subgoals.iter().any(|s| s.text.trim().is_empty()) {
                out.push("ground_truth_subgoals contains an empty subgoal".into());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_grid() {
        let err = SceneMap::from_rows("x", 0.5, &["...", ".."], vec![]).unwrap_err();
        assert!(matches!(err, SimError::Scene(_)));
    }

    #[test]
    fn rejects_landmark_off_grid() {
        let lm = Landmark {
            label: "sofa".into(),
            cell: Cell::new(5, 0),
            salience: 1,
        };
        assert!(SceneMap::from_rows("x", 0.5, &["..."], vec![lm]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let lm = Landmark {
            label: "red door".into(),
            cell: Cell::new(1, 0),
            salience: 2,
        };
        let scene = SceneMap::from_rows("s", 0.25, &[".#.", "..."], vec![lm]).unwrap();
        let json = serde_json::to_string(&scene.to_file()).unwrap();
        let back: SceneFile = serde_json::from_str(&json).unwrap();
        assert_eq!(SceneMap::try_from(back).unwrap(), scene);
        assert!(json.contains("\"cell\":[1,0]"));
    }

    #[test]
    fn cell_lookup() {
        let scene = SceneMap::from_rows("s", 0.5, &["..", ".#"], vec![]).unwrap();
        assert_eq!(scene.cell_of(Point::new(0.75, 0.2)), Some(Cell::new(1, 0)));
        assert_eq!(scene.cell_of(Point::new(1.0, 0.2)), None);
        assert!(!scene.is_free_point(Point::new(0.75, 0.75)));
    }
}
