//! Shortest paths over free cells, 8-connected.
//!
//! Path lengths are carried as exact `(orthogonal, diagonal)` move counts so
//! that distances are symmetric and comparisons never depend on the order in
//! which floating-point sums were accumulated.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use super::scene::{Cell, SceneMap};
use super::{Point, SimError};

/// `orth + diag·√2` cell lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Cost {
    pub orth: u32,
    pub diag: u32,
}

impl Cost {
    pub fn cells(&self) -> f64 {
        self.orth as f64 + self.diag as f64 * SQRT_2
    }

    fn add(self, diagonal: bool) -> Cost {
        if diagonal {
            Cost {
                orth: self.orth,
                diag: self.diag + 1,
            }
        } else {
            Cost {
                orth: self.orth + 1,
                diag: self.diag,
            }
        }
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        // sign of p + q·√2 with integer p, q
        let p = self.orth as i64 - other.orth as i64;
        let q = self.diag as i64 - other.diag as i64;
        match (p.signum(), q.signum()) {
            (0, 0) => Ordering::Equal,
            (a, b) if a >= 0 && b >= 0 => Ordering::Greater,
            (a, b) if a <= 0 && b <= 0 => Ordering::Less,
            (1, _) => (p * p).cmp(&(2 * q * q)),
            _ => (2 * q * q).cmp(&(p * p)),
        }
    }
}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub(crate) const NEIGHBOURS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Shortest-path costs from every free cell to one target cell.
#[derive(Debug, Clone)]
pub struct DistanceField {
    target: Cell,
    width: usize,
    cell_size: f64,
    costs: Vec<Option<Cost>>,
}

impl DistanceField {
    pub fn target(&self) -> Cell {
        self.target
    }

    pub fn cost(&self, cell: Cell) -> Option<Cost> {
        if cell.col >= self.width {
            return None;
        }
        self.costs.get(cell.row * self.width + cell.col).copied().flatten()
    }

    pub fn meters(&self, cell: Cell) -> Option<f64> {
        self.cost(cell).map(|c| c.cells() * self.cell_size)
    }
}

impl SceneMap {
    /// Whether a single move from `from` by `(dc, dr)` is allowed. Diagonal
    /// moves need both orthogonal side cells free.
    pub(crate) fn move_allowed(&self, from: Cell, dc: i64, dr: i64) -> Option<Cell> {
        let c = from.col as i64 + dc;
        let r = from.row as i64 + dr;
        if !self.is_free_signed(c, r) {
            return None;
        }
        if dc != 0 && dr != 0 {
            let side_a = self.is_free_signed(from.col as i64 + dc, from.row as i64);
            let side_b = self.is_free_signed(from.col as i64, from.row as i64 + dr);
            if !(side_a && side_b) {
                return None;
            }
        }
        Some(Cell::new(c as usize, r as usize))
    }

    /// Dijkstra from `target` over free cells. Blocked or unreachable cells
    /// have no cost.
    pub fn distance_field(&self, target: Cell) -> DistanceField {
        let mut costs: Vec<Option<Cost>> = vec![None; self.width() * self.height()];
        if self.is_free(target) {
            let mut heap = BinaryHeap::new();
            costs[self.index(target)] = Some(Cost::default());
            heap.push(Reverse((Cost::default(), self.index(target))));
            while let Some(Reverse((cost, idx))) = heap.pop() {
                if costs[idx].is_some_and(|c| c < cost) {
                    continue;
                }
                let cell = self.cell_at_index(idx);
                for (dc, dr) in NEIGHBOURS {
                    let Some(next) = self.move_allowed(cell, dc, dr) else {
                        continue;
                    };
                    let candidate = cost.add(dc != 0 && dr != 0);
                    let ni = self.index(next);
                    if costs[ni].is_none_or(|c| candidate < c) {
                        costs[ni] = Some(candidate);
                        heap.push(Reverse((candidate, ni)));
                    }
                }
            }
        }
        DistanceField {
            target,
            width: self.width(),
            cell_size: self.cell_size(),
            costs,
        }
    }

    fn free_cell_of(&self, p: Point) -> Result<Cell, SimError> {
        self.cell_of(p)
            .filter(|c| self.is_free(*c))
            .ok_or(SimError::InvalidState { x: p.x, y: p.y })
    }

    /// Grid geodesic between the cells containing `from` and `to`, in meters.
    pub fn geodesic_distance(&self, from: Point, to: Point) -> Result<f64, SimError> {
        let a = self.free_cell_of(from)?;
        let b = self.free_cell_of(to)?;
        self.distance_field(b)
            .meters(a)
            .ok_or(SimError::Unreachable { from, to })
    }

    /// One shortest cell path from `from` to `to`, both ends included.
    /// Among equal-cost successors the first in neighbour order wins.
    pub fn shortest_cell_path(&self, from: Cell, to: Cell) -> Option<Vec<Cell>> {
        let field = self.distance_field(to);
        self.descend(&field, from)
    }

    pub(crate) fn descend(&self, field: &DistanceField, from: Cell) -> Option<Vec<Cell>> {
        let mut cost = field.cost(from)?;
        let mut path = vec![from];
        let mut current = from;
        while current != field.target() {
            let (next, next_cost) = self.downhill(field, current, cost)?;
            path.push(next);
            current = next;
            cost = next_cost;
        }
        Some(path)
    }

    /// The neighbour that lies on a shortest path from `cell` to the field's
    /// target.
    pub(crate) fn downhill(
        &self,
        field: &DistanceField,
        cell: Cell,
        cost: Cost,
    ) -> Option<(Cell, Cost)> {
        NEIGHBOURS.iter().find_map(|&(dc, dr)| {
            let next = self.move_allowed(cell, dc, dr)?;
            let next_cost = field.cost(next)?;
            (next_cost.add(dc != 0 && dr != 0) == cost).then_some((next, next_cost))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_ordering_is_exact() {
        let three_orth = Cost { orth: 3, diag: 0 };
        let two_diag = Cost { orth: 0, diag: 2 };
        // 2√2 ≈ 2.83 < 3
        assert!(two_diag < three_orth);
        let a = Cost { orth: 1, diag: 1 };
        let b = Cost { orth: 2, diag: 0 };
        assert!(a > b);
        assert_eq!(a.cmp(&a), Ordering::Equal);
        assert!(Cost { orth: 7, diag: 0 } > Cost { orth: 0, diag: 4 });
        assert!(Cost { orth: 5, diag: 0 } < Cost { orth: 0, diag: 4 });
    }

    #[test]
    fn same_cell_is_zero() {
        let scene = SceneMap::from_rows("s", 0.25, &["....."], vec![]).unwrap();
        let p = Point::new(0.1, 0.1);
        assert_eq!(scene.geodesic_distance(p, p).unwrap(), 0.0);
    }

    #[test]
    fn walled_off_is_unreachable() {
        let scene = SceneMap::from_rows("s", 1.0, &[".#."], vec![]).unwrap();
        let err = scene
            .geodesic_distance(Point::new(0.5, 0.5), Point::new(2.5, 0.5))
            .unwrap_err();
        assert!(matches!(err, SimError::Unreachable { .. }));
    }

    #[test]
    fn blocked_endpoint_is_invalid() {
        let scene = SceneMap::from_rows("s", 1.0, &[".#."], vec![]).unwrap();
        let err = scene
            .geodesic_distance(Point::new(1.5, 0.5), Point::new(2.5, 0.5))
            .unwrap_err();
        assert!(matches!(err, SimError::InvalidState { .. }));
    }

    #[test]
    fn no_corner_cutting() {
        // the only diagonal squeezes between two blocked corners
        let scene = SceneMap::from_rows("s", 1.0, &[".#", "#."], vec![]).unwrap();
        assert!(scene
            .geodesic_distance(Point::new(0.5, 0.5), Point::new(1.5, 1.5))
            .is_err());
    }

    #[test]
    fn shortest_path_endpoints() {
        let scene = SceneMap::from_rows("s", 1.0, &["....", ".##.", "...."], vec![]).unwrap();
        let path = scene
            .shortest_cell_path(Cell::new(0, 1), Cell::new(3, 1))
            .unwrap();
        assert_eq!(path.first(), Some(&Cell::new(0, 1)));
        assert_eq!(path.last(), Some(&Cell::new(3, 1)));
        for w in path.windows(2) {
            let dc = w[0].col.abs_diff(w[1].col);
            let dr = w[0].row.abs_diff(w[1].row);
            assert!(dc <= 1 && dr <= 1 && (dc + dr) > 0);
        }
    }
}
