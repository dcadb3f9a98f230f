mod common;

use handover_core::dataset::TaskSpec;
use handover_core::grasp::GraspCandidate;
use handover_core::pipeline::{run_pipeline, Method, PipelineRun};
use handover_core::reasoner::{RuleReasoner, Stage, StagePayload};
use nalgebra::Vector3;

fn run(
    root: &std::path::Path,
    entry: usize,
    task: &TaskSpec,
    method: Method,
    supplied: Option<&[GraspCandidate]>,
) -> PipelineRun {
    let entries = common::suite(root, &["hammer"], 3, 5);
    let cfg = common::config(root, "handle-only");
    let backend = cfg.backend.build();
    run_pipeline(&entries[entry], task, &cfg, backend.as_ref(), &RuleReasoner, method, supplied)
}

#[test]
fn hammer_a_nail_hands_over_by_the_head() {
    let dir = tempfile::tempdir().unwrap();
    let task = common::task("hammer", "hammer a nail");
    for i in 0..3 {
        let r = run(dir.path(), i, &task, Method::Ours, None);
        assert_eq!(r.exit_code(), 0, "{:?}", r.trace.error);
        let sel = r.trace.selection.as_ref().unwrap();
        assert_eq!(sel.grasp_part, "head", "entry {i}");
        assert_eq!(r.trace.plan.as_ref().unwrap().human_grasp_part, "handle");
        let pose = r.trace.handover.as_ref().unwrap();
        assert!((pose.rotation.into_inner().norm() - 1.0).abs() < 1e-9);
        let stages: Vec<Stage> = r.trace.exchanges.iter().map(|e| e.query.stage).collect();
        assert_eq!(stages.first(), Some(&Stage::TaskReasoning));
        assert_eq!(stages.last(), Some(&Stage::ChooseGrasp));
    }
}

#[test]
fn clustered_grasps_exhaust_the_gate() {
    let dir = tempfile::tempdir().unwrap();
    let task = common::task("hammer", "hammer a nail");
    let first = run(dir.path(), 0, &task, Method::Ours, None);
    let g = first.trace.selection.unwrap().grasp;
    let clustered: Vec<GraspCandidate> = (0..8)
        .map(|i| {
            let shift = Vector3::new(0.001 * i as f64, 0.0, 0.0);
            GraspCandidate {
                translation: g.translation + shift,
                contacts: [g.contacts[0] + shift, g.contacts[1] + shift],
                ..g.clone()
            }
        })
        .collect();
    let r = run(dir.path(), 0, &task, Method::Ours, Some(&clustered));
    assert_eq!(r.exit_code(), 3);
    assert_eq!(r.trace.error.as_ref().unwrap().exit_code, 3);
    assert_eq!(r.trace.grasp_rounds.len(), 4);
    assert!(r.trace.grasp_rounds.iter().all(|round| !round.passed));
    let seeds: Vec<u64> = r.trace.grasp_rounds.iter().map(|round| round.seed).collect();
    assert!(seeds.windows(2).all(|w| w[0] != w[1]));
    assert!(r.trace.selection.is_none());
    assert!(r.trace.segmentation.is_some());
}

#[test]
fn ablations_strip_the_supporting_info() {
    let dir = tempfile::tempdir().unwrap();
    let task = common::task("hammer", "hammer a nail");
    let grasp_query = |r: &PipelineRun| {
        r.trace
            .exchanges
            .iter()
            .find(|e| e.query.stage == Stage::ChooseGrasp)
            .expect("grasp choice asked")
            .query
            .supporting_info
            .clone()
    };

    let full = grasp_query(&run(dir.path(), 0, &task, Method::Ours, None));
    let StagePayload::GraspChoice { candidates, human_part } = &full.payload else { panic!() };
    assert_eq!(human_part.as_deref(), Some("handle"));
    assert!(candidates.iter().all(|c| c.human_clearance_m.is_some()));
    assert!(full.object.is_some() && !full.parts.is_empty());

    let nh = grasp_query(&run(dir.path(), 0, &task, Method::NoHuman, None));
    let StagePayload::GraspChoice { candidates, human_part } = &nh.payload else { panic!() };
    assert!(human_part.is_none());
    assert!(candidates.iter().all(|c| c.human_clearance_m.is_none()));
    assert!(!serde_json::to_string(&nh).unwrap().contains("human_part"));

    let ng = grasp_query(&run(dir.path(), 0, &task, Method::NoGeometry, None));
    assert!(ng.object.is_none() && ng.parts.is_empty());
    let StagePayload::GraspChoice { human_part, .. } = &ng.payload else { panic!() };
    assert_eq!(human_part.as_deref(), Some("handle"));
}

#[test]
fn baselines_skip_the_reasoner_for_selection() {
    let dir = tempfile::tempdir().unwrap();
    let task = common::task("hammer", "hammer a nail");
    for method in [Method::Heuristic, Method::PlannerFirst] {
        let r = run(dir.path(), 1, &task, method, None);
        assert_eq!(r.exit_code(), 0);
        assert!(r.trace.exchanges.iter().all(|e| e.query.stage != Stage::ChooseGrasp));
        let sel = r.trace.selection.unwrap();
        if method == Method::PlannerFirst {
            assert_eq!(sel.candidate_index, 0);
        }
    }
}

#[test]
fn traces_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let task = common::task("hammer", "hammer a nail");
    let a = serde_json::to_string(&run(dir.path(), 2, &task, Method::Ours, None).trace).unwrap();
    let b = serde_json::to_string(&run(dir.path(), 2, &task, Method::Ours, None).trace).unwrap();
    assert_eq!(a, b);
}

#[test]
fn task_for_another_class_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let task = common::task("knife", "cut");
    let r = run(dir.path(), 0, &task, Method::Ours, None);
    assert_eq!(r.exit_code(), 2);
    assert!(r.trace.plan.is_none());
}
