use super::Point;

/// Visits every grid cell touched by the segment `from -> to`, in order,
/// together with the segment parameter `t ∈ [0, 1]` at which the cell is
/// entered. When the segment passes exactly through a cell corner both side
/// cells are reported, so a diagonal sweep cannot slip between two blocked
/// cells. The visitor returns `false` to stop early.
pub(crate) fn walk_segment(
    cell_size: f64,
    from: Point,
    to: Point,
    mut visit: impl FnMut(i64, i64, f64) -> bool,
) {
    let mut cx = (from.x / cell_size).floor() as i64;
    let mut cy = (from.y / cell_size).floor() as i64;
    let ex = (to.x / cell_size).floor() as i64;
    let ey = (to.y / cell_size).floor() as i64;
    if !visit(cx, cy, 0.0) {
        return;
    }

    let dx = to.x - from.x;
    let dy = to.y - from.y;
    let step_x = sign(dx);
    let step_y = sign(dy);
    // Crossing parameters are recomputed from the line index each time so
    // that coincident crossings compare equal instead of drifting apart.
    let crossing = |cell: i64, step: i64, origin: f64, delta: f64| -> f64 {
        match step {
            0 => f64::INFINITY,
            1 => ((cell + 1) as f64 * cell_size - origin) / delta,
            _ => (cell as f64 * cell_size - origin) / delta,
        }
    };

    let budget = (ex - cx).abs() + (ey - cy).abs() + 2;
    for _ in 0..budget {
        if cx == ex && cy == ey {
            return;
        }
        let t_max_x = crossing(cx, step_x, from.x, dx);
        let t_max_y = crossing(cy, step_y, from.y, dy);
        let t = t_max_x.min(t_max_y);
        if t > 1.0 {
            return;
        }
        // a negative-going crossing at t = 1 ends on the line, which still
        // belongs to the current cell
        let cross_x = t_max_x <= t_max_y && !(t >= 1.0 && step_x < 0);
        let cross_y = t_max_y <= t_max_x && !(t >= 1.0 && step_y < 0);
        match (cross_x, cross_y) {
            (true, false) => cx += step_x,
            (false, true) => cy += step_y,
            (true, true) => {
                if !visit(cx + step_x, cy, t) || !visit(cx, cy + step_y, t) {
                    return;
                }
                cx += step_x;
                cy += step_y;
            }
            (false, false) => return,
        }
        if !visit(cx, cy, t) {
            return;
        }
    }
}

fn sign(delta: f64) -> i64 {
    if delta > 0.0 {
        1
    } else if delta < 0.0 {
        -1
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(from: Point, to: Point) -> Vec<(i64, i64)> {
        let mut out = Vec::new();
        walk_segment(1.0, from, to, |x, y, _| {
            out.push((x, y));
            true
        });
        out
    }

    #[test]
    fn horizontal_run() {
        assert_eq!(
            cells(Point::new(0.5, 0.5), Point::new(3.5, 0.5)),
            vec![(0, 0), (1, 0), (2, 0), (3, 0)]
        );
    }

    #[test]
    fn exact_diagonal_reports_both_corner_neighbours() {
        let got = cells(Point::new(0.5, 0.5), Point::new(1.5, 1.5));
        assert_eq!(got, vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn stays_in_cell() {
        assert_eq!(cells(Point::new(0.2, 0.2), Point::new(0.7, 0.9)), vec![(0, 0)]);
    }

    #[test]
    fn negative_direction() {
        assert_eq!(
            cells(Point::new(2.5, 0.5), Point::new(0.5, 0.5)),
            vec![(2, 0), (1, 0), (0, 0)]
        );
    }
}
