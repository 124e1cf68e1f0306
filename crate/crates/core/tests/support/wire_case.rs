//! The canonical 7-image transition request behind the wire fixtures.

use stagenav_core::backend::{GenerationLimits, ModelRequest};
use stagenav_core::evidence::{PromptBuilder, PromptProfile, SubgoalContext};
use stagenav_core::memory::{MemoryState, RolloutSummary};
use stagenav_core::sim::{local_views, panoramic_views, Action, Cell, Landmark, Pose, SceneMap, SimConfig};

/// A fixed room with three landmarks and a mid-episode transition bundle.
pub fn transition_request() -> ModelRequest {
    let rows: Vec<String> = (0..12)
        .map(|r| {
            if r == 0 || r == 11 {
                "#".repeat(16)
            } else {
                format!("#{}#", ".".repeat(14))
            }
        })
        .collect();
    let landmarks = vec![
        Landmark { label: "blue sofa".into(), cell: Cell::new(6, 5), salience: 1 },
        Landmark { label: "white door".into(), cell: Cell::new(14, 8), salience: 1 },
        Landmark { label: "green lamp".into(), cell: Cell::new(3, 9), salience: 2 },
    ];
    let scene = SceneMap::from_rows("fixture-room", 0.5, &rows, landmarks).unwrap();
    let sim = SimConfig::default();
    let start = Pose::new(3.25, 1.25, 0.0);
    let now = Pose::new(3.25, 3.75, 330.0);
    let memory = MemoryState::new(4, local_views(&scene, &start, &sim).frontal().clone(), 0);
    let summary = RolloutSummary::new(
        "moved forward ten steps along the room; the blue sofa passed on the left",
        vec![Action::Forward; 8],
    )
    .unwrap();
    let goal = SubgoalContext {
        text: "walk past the blue sofa",
        index: 1,
        count: 2,
        instruction: "Walk past the blue sofa, then stop at the white door.",
    };
    let bundle = PromptBuilder::new(PromptProfile::default(), sim, 4)
        .transition(&goal, &panoramic_views(&scene, &now, &sim), &memory, &summary, None)
        .unwrap();
    ModelRequest::from_bundle(&bundle, GenerationLimits::default())
}
