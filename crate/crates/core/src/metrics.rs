//! Episode outcomes and run aggregation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::DoneReason;
use crate::sim::{Action, Episode, Point, Pose, SceneMap, SimError};
use crate::trace::{Trace, TraceEvent};

pub const REPORT_SCHEMA: &str = "stagenav.report/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("run {run} covers a different episode set than run 0")]
    MismatchedEpisodes { run: usize },
    #[error("trace has no done record")]
    Unfinished,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Geodesic distance from the final position to the goal.
pub fn compute_ne(scene: &SceneMap, final_position: Point, goal: Point) -> Result<f64, SimError> {
    scene.geodesic_distance(final_position, goal)
}

/// Sum of Euclidean displacements; turns add nothing.
pub fn compute_tl(path: &[Pose]) -> f64 {
    path.windows(2)
        .map(|w| w[0].position().distance(&w[1].position()))
        .sum()
}

/// Whether any point of the path comes within `threshold` (geodesic) of the
/// goal.
pub fn compute_osr(scene: &SceneMap, path: &[Point], goal: Point, threshold: f64) -> bool {
    let Some(goal_cell) = scene.cell_of(goal) else {
        return false;
    };
    let field = scene.distance_field(goal_cell);
    path.iter().any(|p| {
        scene
            .cell_of(*p)
            .and_then(|c| field.meters(c))
            .is_some_and(|d| d <= threshold)
    })
}

/// `S · l / max(p, l)`, and `S` when both lengths are zero.
pub fn spl_term(success: bool, shortest: f64, traveled: f64) -> f64 {
    if !success {
        return 0.0;
    }
    let denom = traveled.max(shortest);
    if denom <= 0.0 {
        1.0
    } else {
        shortest / denom
    }
}

/// Mean SPL over `(success, shortest, traveled)` triples.
pub fn compute_spl(cases: &[(bool, f64, f64)]) -> f64 {
    if cases.is_empty() {
        return 0.0;
    }
    cases.iter().map(|&(s, l, p)| spl_term(s, l, p)).sum::<f64>() / cases.len() as f64
}

/// Dynamic time warping cost with Euclidean point distance.
pub fn dtw(path: &[Point], reference: &[Point]) -> f64 {
    let m = reference.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for p in path {
        cur[0] = f64::INFINITY;
        for (j, r) in reference.iter().enumerate() {
            let best = prev[j].min(prev[j + 1]).min(cur[j]);
            cur[j + 1] = p.distance(r) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// `exp(-DTW / (|reference| · d_th))`.
pub fn compute_ndtw(path: &[Point], reference: &[Point], d_th: f64) -> f64 {
    if path.is_empty() || reference.is_empty() {
        return 0.0;
    }
    (-dtw(path, reference) / (reference.len() as f64 * d_th)).exp()
}

pub fn collision_rate(collisions: usize, forward_actions: usize) -> f64 {
    collisions as f64 / forward_actions.max(1) as f64
}

/// Consecutive duplicate positions removed.
pub fn dedup_positions(path: &[Pose]) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(path.len());
    for p in path {
        let q = p.position();
        if out.last() != Some(&q) {
            out.push(q);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode_id: String,
    pub success: bool,
    pub ne: f64,
    pub tl: f64,
    pub osr_hit: bool,
    pub spl_term: f64,
    pub ndtw: f64,
    pub steps: u32,
    pub forward_actions: usize,
    pub collisions: usize,
    pub shortest_length: f64,
    /// `None` when the episode aborted on a backend failure.
    pub done_reason: Option<DoneReason>,
}

impl EpisodeOutcome {
    pub fn collision_rate(&self) -> f64 {
        collision_rate(self.collisions, self.forward_actions)
    }

    pub fn aborted(&self) -> bool {
        matches!(self.done_reason, None | Some(DoneReason::ParseFailureCap))
    }
}

/// Success requires the episode to end by completing its final subgoal
/// within `threshold` of the goal.
pub fn outcome_from_trace(
    trace: &Trace,
    scene: &SceneMap,
    episode: &Episode,
    threshold: f64,
    aborted: bool,
) -> Result<EpisodeOutcome, MetricsError> {
    let path = trace.path();
    let (reason, steps, final_pose) = match trace.done() {
        Some((r, s, p)) => (Some(r), s, *p),
        None if aborted => {
            let last = *path.last().unwrap_or(&episode.start);
            let steps = trace
                .events()
                .filter(|e| matches!(e, TraceEvent::Step { .. } | TraceEvent::ParseFailure { stage: crate::evidence::Stage::Execution, .. }))
                .count() as u32;
            (None, steps, last)
        }
        None => return Err(MetricsError::Unfinished),
    };
    let mut forward_actions = 0;
    let mut collisions = 0;
    for e in trace.events() {
        if let TraceEvent::Step { action, collided, .. } = e {
            if *action == Action::Forward {
                forward_actions += 1;
                if *collided {
                    collisions += 1;
                }
            }
        }
    }
    let ne = compute_ne(scene, final_pose.position(), episode.goal)?;
    let tl = compute_tl(&path);
    let positions = dedup_positions(&path);
    let shortest = compute_ne(scene, episode.start.position(), episode.goal)?;
    let success = reason == Some(DoneReason::Completed) && ne <= threshold;
    Ok(EpisodeOutcome {
        episode_id: episode.id.clone(),
        success,
        ne,
        tl,
        osr_hit: compute_osr(scene, &positions, episode.goal, threshold),
        spl_term: spl_term(success, shortest, tl),
        ndtw: compute_ndtw(&positions, &episode.reference_path, threshold),
        steps,
        forward_actions,
        collisions,
        shortest_length: shortest,
        done_reason: if aborted { None } else { reason },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        // identical inputs give exactly zero
        let std = if values.iter().all(|v| *v == values[0]) {
            0.0
        } else {
            var.sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema: String,
    pub episodes: usize,
    pub runs: usize,
    pub tl: Stat,
    pub ne: Stat,
    /// Percentage points.
    pub osr: Stat,
    pub sr: Stat,
    pub spl: Stat,
    pub ndtw: Stat,
    pub steps: Stat,
    pub collision_rate: Stat,
    pub aborted: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

fn mean_of(outcomes: &[EpisodeOutcome], f: impl Fn(&EpisodeOutcome) -> f64) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().map(f).sum::<f64>() / outcomes.len() as f64
}

/// Per-run episode means, then mean and population std across runs.
pub fn aggregate(runs: &[Vec<EpisodeOutcome>]) -> Result<MetricReport, MetricsError> {
    let first = runs.first().ok_or(MetricsError::NoRuns)?;
    let ids = |run: &[EpisodeOutcome]| run.iter().map(|o| o.episode_id.clone()).collect::<BTreeSet<_>>();
    let reference = ids(first);
    for (i, run) in runs.iter().enumerate().skip(1) {
        if ids(run) != reference || run.len() != first.len() {
            return Err(MetricsError::MismatchedEpisodes { run: i });
        }
    }
    let per_run = |f: &dyn Fn(&EpisodeOutcome) -> f64| -> Stat {
        let values: Vec<f64> = runs.iter().map(|r| mean_of(r, f)).collect();
        Stat::of(&values)
    };
    let pct = |b: bool| if b { 100.0 } else { 0.0 };
    Ok(MetricReport {
        schema: REPORT_SCHEMA.to_string(),
        episodes: first.len(),
        runs: runs.len(),
        tl: per_run(&|o| o.tl),
        ne: per_run(&|o| o.ne),
        osr: per_run(&|o| pct(o.osr_hit)),
        sr: per_run(&|o| pct(o.success)),
        spl: per_run(&|o| 100.0 * o.spl_term),
        ndtw: per_run(&|o| 100.0 * o.ndtw),
        steps: per_run(&|o| o.steps as f64),
        collision_rate: per_run(&|o| o.collision_rate()),
        aborted: runs.iter().flatten().filter(|o| o.aborted()).count(),
        config: None,
    })
}

pub const TABLE_COLUMNS: [&str; 8] = ["TL", "NE", "OSR", "SR", "SPL", "nDTW", "Steps", "Coll."];

fn cells(r: &MetricReport) -> [String; 8] {
    let f = |s: &Stat, prec: usize| format!("{:.prec$} ± {:.prec$}", s.mean, s.std);
    [
        f(&r.tl, 2),
        f(&r.ne, 2),
        f(&r.osr, 1),
        f(&r.sr, 1),
        f(&r.spl, 1),
        f(&r.ndtw, 1),
        f(&r.steps, 1),
        f(&r.collision_rate, 2),
    ]
}

/// Aligned plain-text table, one row per labelled report.
pub fn render_table(rows: &[(String, &MetricReport)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max("Variant".len());
    let body: Vec<[String; 8]> = rows.iter().map(|(_, r)| cells(r)).collect();
    let mut widths = TABLE_COLUMNS.map(|c| c.chars().count());
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "Variant");
    for (c, w) in TABLE_COLUMNS.iter().zip(widths) {
        let _ = write!(out, "  {c:>w$}");
    }
    out.push('\n');
    for ((label, _), row) in rows.iter().zip(&body) {
        let _ = write!(out, "{label:<label_w$}");
        for (c, w) in row.iter().zip(widths) {
            let pad = w - c.chars().count();
            let _ = write!(out, "  {}{c}", " ".repeat(pad));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(x: f64, y: f64) -> Pose {
        Pose::new(x, y, 0.0)
    }

    #[test]
    fn trajectory_length() {
        assert_eq!(compute_tl(&[pose(0.0, 0.0)]), 0.0);
        let ten: Vec<Pose> = (0..=10).map(|i| pose(0.0, 0.25 * i as f64)).collect();
        assert!((compute_tl(&ten) - 2.5).abs() < 1e-12);
        let ftf = [pose(0.0, 0.0), pose(0.0, 0.25), Pose::new(0.0, 0.25, 30.0), Pose::new(-0.125, 0.25 + 0.216_506_350_946, 30.0)];
        assert!((compute_tl(&ftf) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn spl_cases() {
        assert_eq!(compute_spl(&[(true, 5.0, 5.0)]), 1.0);
        assert_eq!(compute_spl(&[(true, 5.0, 10.0)]), 0.5);
        assert_eq!(compute_spl(&[(false, 5.0, 5.0), (false, 1.0, 9.0)]), 0.0);
        assert_eq!(spl_term(true, 0.0, 0.0), 1.0);
    }

    #[test]
    fn ndtw_closed_forms() {
        let a = [Point::new(0.0, 0.0), Point::new(1.0, 0.0)];
        assert_eq!(compute_ndtw(&a, &a, 3.0), 1.0);
        let p = [Point::new(0.0, 0.0)];
        let r = [Point::new(0.0, 1.5)];
        assert!((compute_ndtw(&p, &r, 3.0) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn collision_rates() {
        assert_eq!(collision_rate(0, 0), 0.0);
        assert_eq!(collision_rate(3, 12), 0.25);
        assert_eq!(collision_rate(7, 7), 1.0);
    }

    fn outcome(id: &str, success: bool) -> EpisodeOutcome {
        EpisodeOutcome {
            episode_id: id.into(),
            success,
            ne: 1.0,
            tl: 2.0,
            osr_hit: success,
            spl_term: if success { 1.0 } else { 0.0 },
            ndtw: 0.5,
            steps: 10,
            forward_actions: 4,
            collisions: 1,
            shortest_length: 2.0,
            done_reason: Some(DoneReason::Completed),
        }
    }

    #[test]
    fn aggregation() {
        let run = |n_success: usize| -> Vec<EpisodeOutcome> {
            (0..100).map(|i| outcome(&format!("e{i}"), i < n_success)).collect()
        };
        let report = aggregate(&[run(30), run(32), run(28)]).unwrap();
        assert!((report.sr.mean - 30.0).abs() < 1e-9);
        let expected_std = (8.0f64 / 3.0).sqrt();
        assert!((report.sr.std - expected_std).abs() < 1e-9);
        let single = aggregate(&[run(30)]).unwrap();
        assert_eq!(single.sr.std, 0.0);
        assert_eq!(single.tl.std, 0.0);
        let same = aggregate(&[run(5), run(5), run(5)]).unwrap();
        assert_eq!(same.spl.std, 0.0);
        assert_eq!(same.ndtw.std, 0.0);
        let mut other = run(30);
        other[0].episode_id = "zzz".into();
        assert!(matches!(aggregate(&[run(30), other]), Err(MetricsError::MismatchedEpisodes { run: 1 })));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn table_has_all_columns() {
        let r = aggregate(&[vec![outcome("a", true)]]).unwrap();
        let t = render_table(&[("full".into(), &r)]);
        let header = t.lines().next().unwrap();
        let mut last = 0;
        for c in TABLE_COLUMNS {
            let at = header.find(c).unwrap();
            assert!(at >= last);
            last = at;
        }
    }
}
