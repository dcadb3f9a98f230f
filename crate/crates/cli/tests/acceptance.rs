//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use handover_core::config::PipelineConfig;
use handover_core::dataset::synthetic::{
    backend_masks, default_intrinsics, render, sample_box_surface, sample_cylinder_surface, sample_sphere_surface, synthetic_object,
    write_suite, BackendMode, SYNTHETIC_CLASSES,
};
use handover_core::dataset::{load_dataset, reference_tasks, taxonomy, TaskSpec};
use handover_core::eval::{detection_rate, f1, grasp_success, gt_part_cloud, iou, masks_by_label};
use handover_core::geometry::{dbscan, Cluster, Mask2D, PointCloud};
use handover_core::grasp::{
    diversity_gate, fps_select, generate_grasps, handover_orientation, min_pairwise_distance, GraspCandidate,
    GraspParams, GripperSpec, WORLD_UP,
};
use handover_core::partseg::{
    detect_missing, fuse, refine_masks, run_stages, BackendSpec, PartHypothesis, SegContext, SegParams,
};
use handover_core::pipeline::{choose, prepare, Method, PipelineError};
use handover_core::reasoner::{
    task_reasoning, RemoteConfig, RemoteReasoner, ReasonerError, RuleReasoner, OS_HEADER, SI_HEADER, TD_HEADER,
};
use nalgebra::{Point3, Rotation3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("{what} took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

// ---------------------------------------------------------------- metrics

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Mask2D {
    let density: f64 = rng.random_range(0.0..1.0);
    let mut m = Mask2D::new(w, h);
    if rng.random_bool(0.1) {
        return m;
    }
    for v in 0..h {
        for u in 0..w {
            if rng.random_bool(density) {
                m.set(u, v, true);
            }
        }
    }
    m
}

fn naive_counts(p: &Mask2D, g: &Mask2D) -> (usize, usize, usize, usize) {
    let (mut inter, mut uni, mut np, mut ng) = (0, 0, 0, 0);
    for v in 0..g.height() {
        for u in 0..g.width() {
            let (a, b) = (p.get(u, v), g.get(u, v));
            inter += (a && b) as usize;
            uni += (a || b) as usize;
            np += a as usize;
            ng += b as usize;
        }
    }
    (inter, uni, np, ng)
}

fn naive_iou(p: &Mask2D, g: &Mask2D) -> f64 {
    let (i, u, _, _) = naive_counts(p, g);
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

fn naive_f1(p: &Mask2D, g: &Mask2D) -> f64 {
    let (i, _, np, ng) = naive_counts(p, g);
    if np + ng == 0 {
        1.0
    } else {
        2.0 * i as f64 / (np + ng) as f64
    }
}

/// A ground-truth part counts when some prediction whose label names it
/// reaches `thresh` IoU against the union of the ground truth it names.
fn naive_detection_rate(pred: &BTreeMap<String, Mask2D>, gt: &BTreeMap<String, Mask2D>, thresh: f64) -> f64 {
    let mut hits = 0;
    for (name, g) in gt {
        let detected = pred.iter().any(|(label, p)| {
            let names: Vec<&str> = label.split('+').collect();
            if !names.contains(&name.as_str()) {
                return false;
            }
            let target = Mask2D::from_fn(g.width(), g.height(), |u, v| {
                names.iter().any(|n| gt.get(*n).is_some_and(|m| m.get(u, v)))
            });
            naive_iou(p, &target) >= thresh
        });
        hits += detected as usize;
    }
    100.0 * hits as f64 / gt.len() as f64
}

fn metric_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let names = ["a", "b", "c"];
    let labels = ["a", "b", "c", "a+b", "b+c"];
    for case in 0..1000 {
        let (w, h) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let (p, g) = (random_mask(&mut rng, w, h), random_mask(&mut rng, w, h));
        let (i, f) = (iou(&p, &g).map_err(|e| e.to_string())?, f1(&p, &g).map_err(|e| e.to_string())?);
        ensure(i == naive_iou(&p, &g) && f == naive_f1(&p, &g), || {
            format!("case {case}: iou {i} f1 {f} vs reference")
        })?;

        let mut gt = BTreeMap::new();
        for n in names.iter().take(rng.random_range(1..=3)) {
            gt.insert(n.to_string(), random_mask(&mut rng, w, h));
        }
        let mut pred = BTreeMap::new();
        for _ in 0..rng.random_range(0..=3) {
            let l = labels[rng.random_range(0..labels.len())];
            let base = gt.get(l.split('+').next().unwrap()).cloned();
            let m = match base {
                Some(b) if rng.random_bool(0.5) => b,
                _ => random_mask(&mut rng, w, h),
            };
            pred.insert(l.to_string(), m);
        }
        let thresh = [0.0, 0.25, 0.5, 0.75, 1.0][rng.random_range(0..5)];
        let dr = detection_rate(&pred, &gt, thresh).map_err(|e| e.to_string())?;
        ensure(dr == naive_detection_rate(&pred, &gt, thresh), || {
            format!("case {case}: detection rate {dr} vs reference")
        })?;
    }
    within(start.elapsed(), 10.0, "1000 mask pairs")?;
    Ok(format!("1000 pairs exact in {:.2} s", start.elapsed().as_secs_f64()))
}

// ---------------------------------------------------------------- dbscan

fn naive_dbscan(pts: &[Point3<f64>], eps: f64, min_pts: usize) -> Vec<Cluster> {
    let n = pts.len();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| (pts[i] - pts[j]).norm() <= eps).collect())
        .collect();
    let core: Vec<bool> = adj.iter().map(|a| a.len() >= min_pts).collect();
    // components of core points, each named by its lowest core index
    let mut root: Vec<usize> = (0..n).collect();
    fn find(root: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while root[r] != r {
            r = root[r];
        }
        root[i] = r;
        r
    }
    for i in 0..n {
        for &j in &adj[i] {
            if core[i] && core[j] {
                let (a, b) = (find(&mut root, i), find(&mut root, j));
                root[a.max(b)] = a.min(b);
            }
        }
    }
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        if core[i] {
            owner[i] = Some(find(&mut root, i));
        }
    }
    for i in 0..n {
        if !core[i] {
            owner[i] = adj[i].iter().find(|&&j| core[j]).map(|&j| find(&mut root, j));
        }
    }
    let mut ids: Vec<usize> = owner.iter().flatten().copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let mut out: Vec<Cluster> = ids
        .iter()
        .map(|&id| Cluster {
            member_indices: (0..n).filter(|&i| owner[i] == Some(id)).collect(),
            is_noise: false,
        })
        .collect();
    let noise: Vec<usize> = (0..n).filter(|&i| owner[i].is_none()).collect();
    if !noise.is_empty() {
        out.push(Cluster {
            member_indices: noise,
            is_noise: true,
        });
    }
    out
}

fn dbscan_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..200 {
        let n = rng.random_range(1..=500);
        let blobs: Vec<Point3<f64>> = (0..rng.random_range(1..=5))
            .map(|_| Point3::new(rng.random_range(0.0..0.3), rng.random_range(0.0..0.3), rng.random_range(0.0..0.3)))
            .collect();
        let spread: f64 = rng.random_range(0.005..0.05);
        let pts: Vec<Point3<f64>> = (0..n)
            .map(|_| {
                let c = blobs[rng.random_range(0..blobs.len())];
                c + Vector3::new(
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                )
            })
            .collect();
        // a few exact duplicates exercise the inclusive radius
        let mut pts = pts;
        if n > 4 {
            pts[n - 1] = pts[0];
            pts[n - 2] = pts[0] + Vector3::new(0.01, 0.0, 0.0);
        }
        let eps = [0.01, rng.random_range(0.002..0.03)][rng.random_range(0..2)];
        let min_pts = rng.random_range(1..=12);
        let cloud = PointCloud::new(pts.clone()).map_err(|e| e.to_string())?;
        let got = dbscan(&cloud, eps, min_pts);
        ensure(got == naive_dbscan(&pts, eps, min_pts), || {
            format!("case {case}: n {n} eps {eps} min_pts {min_pts} partitions differ")
        })?;
    }
    within(start.elapsed(), 30.0, "200 clouds")?;
    Ok(format!("200 clouds identical in {:.2} s", start.elapsed().as_secs_f64()))
}

// ---------------------------------------------------------------- fps and gate

fn grasp_at(p: Point3<f64>) -> GraspCandidate {
    let half = Vector3::new(0.0, 0.01, 0.0);
    GraspCandidate {
        rotation: UnitQuaternion::identity(),
        translation: p,
        width: 0.02,
        contacts: [p - half, p + half],
        approach: Vector3::z(),
    }
}

fn best_min_distance(pts: &[Point3<f64>], k: usize) -> f64 {
    let n = pts.len();
    let mut best = f64::NEG_INFINITY;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut m = f64::INFINITY;
        for a in 0..k {
            for b in a + 1..k {
                m = m.min((pts[idx[a]] - pts[idx[b]]).norm());
            }
        }
        best = best.max(m);
        // next k-combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < n - k + i {
                break;
            }
            if i == 0 {
                return best;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn fps_optimality() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sets = 0;
    for n in 3..=12 {
        for trial in 0..60 {
            let mut pts: Vec<Point3<f64>> = (0..n)
                .map(|_| Point3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.4..0.6)))
                .collect();
            if trial % 5 == 0 {
                // collinear with a duplicate
                for (i, p) in pts.iter_mut().enumerate() {
                    *p = Point3::new((i * i % 7) as f64 * 0.01, 0.0, 0.5);
                }
            }
            let grasps: Vec<GraspCandidate> = pts.iter().map(|&p| grasp_at(p)).collect();
            for k in [2, 3] {
                let pick = fps_select(&grasps, k, rng.random()).map_err(|e| e.to_string())?;
                let chosen: Vec<GraspCandidate> = pick.iter().map(|&i| grasps[i].clone()).collect();
                let got = min_pairwise_distance(&chosen).ok_or("subset too small")?;
                let want = best_min_distance(&pts, k);
                ensure(got == want, || format!("n {n} k {k}: {got} vs optimum {want}"))?;
                sets += 1;
            }
        }
    }
    within(start.elapsed(), 10.0, "fps sets")?;
    Ok(format!("{sets} sets optimal in {:.2} s", start.elapsed().as_secs_f64()))
}

fn diversity_gate_boundary() -> Check {
    let at = |x: f64| grasp_at(Point3::new(x, 0.0, 0.5));
    // lengths whose third is exact in binary
    for d in [0.125, 0.0625, 0.25, 0.09375] {
        let l = 3.0 * d;
        ensure(l / 3.0 == d, || format!("{l}/3 is not exact"))?;
        let pair = [at(0.0), at(d)];
        ensure(diversity_gate(&pair, l), || format!("pair at exactly l/3 = {d} rejected"))?;
        let below = [at(0.0), at(d - 1e-12)];
        ensure(!diversity_gate(&below, l), || format!("pair just below {d} accepted"))?;
        let five = [at(0.0), at(0.3 * d), at(0.6 * d), at(0.9 * d), at(d)];
        ensure(diversity_gate(&five, l), || "five grasps spanning l/3 rejected".into())?;
        let tight = [at(0.0), at(0.3 * d), at(0.6 * d), at(0.9 * d), at(0.99 * d)];
        ensure(!diversity_gate(&tight, l), || "five grasps within l/3 accepted".into())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let l: f64 = rng.random_range(0.05..0.5);
        let f: f64 = rng.random_range(0.5..1.5);
        if (f - 1.0).abs() < 1e-9 {
            continue;
        }
        let d = l / 3.0 * f;
        let expect = d >= l / 3.0;
        ensure(diversity_gate(&[at(0.0), at(d)], l) == expect, || format!("l {l} d {d}"))?;
    }
    ensure(!diversity_gate(&[at(0.0)], 0.1), || "single grasp passed".into())?;
    Ok("inclusive at exactly one third; 1000 random straddles correct".into())
}

// ---------------------------------------------------------------- segmentation

fn seg_context(class: &str, scene: &handover_core::dataset::synthetic::RenderedScene) -> Result<SegContext, String> {
    SegContext::new(
        class,
        None,
        scene.depth.clone(),
        scene.intrinsics,
        scene.object_mask.clone(),
        SegParams::default(),
    )
    .map_err(|e| e.to_string())
}

fn hyps(list: Vec<(String, Mask2D)>) -> Vec<PartHypothesis> {
    list.into_iter()
        .map(|(label, mask)| PartHypothesis {
            label,
            mask,
            score: Some(1.0),
        })
        .collect()
}

fn part_recovery() -> Check {
    let start = Instant::now();
    let expected = taxonomy().parts("hammer").unwrap().to_vec();
    let (mut before, mut after) = (0.0, 0.0);
    for seed in 0..20 {
        let scene = render(&synthetic_object("hammer", 100 + seed).unwrap(), &default_intrinsics());
        let ctx = seg_context("hammer", &scene)?;
        let h = hyps(backend_masks("hammer", &scene, BackendMode::HandleOnly, seed));
        let raw = masks_by_label(h.iter().map(|x| (x.label.as_str(), &x.mask)));
        let b = detection_rate(&raw, &scene.part_masks, 0.5).map_err(|e| e.to_string())?;
        let (refined, _) = refine_masks(&ctx, h, &RuleReasoner).map_err(|e| e.to_string())?;
        let mut labeling = fuse(&ctx, &refined);
        detect_missing(&ctx, &mut labeling, &expected, &RuleReasoner).map_err(|e| e.to_string())?;
        let a = detection_rate(&labeling.masks, &scene.part_masks, 0.5).map_err(|e| e.to_string())?;
        ensure(b == 50.0 && a == 100.0, || format!("fixture {seed}: DR {b} -> {a}"))?;
        before += b / 20.0;
        after += a / 20.0;
    }
    within(start.elapsed(), 20.0, "20 hammer fixtures")?;
    Ok(format!("DR {before:.2} -> {after:.2} on 20 fixtures in {:.2} s", start.elapsed().as_secs_f64()))
}

fn conservation_and_idempotence() -> Check {
    let start = Instant::now();
    for i in 0..100u64 {
        let class = SYNTHETIC_CLASSES[i as usize % SYNTHETIC_CLASSES.len()];
        let mode = BackendMode::ALL[(i / 6) as usize % BackendMode::ALL.len()];
        let scene = render(&synthetic_object(class, 500 + i).unwrap(), &default_intrinsics());
        let ctx = seg_context(class, &scene)?;
        let expected = taxonomy().parts(class).unwrap().to_vec();
        let n = ctx.object_cloud.len();
        let first = run_stages(&ctx, hyps(backend_masks(class, &scene, mode, i)), &expected, &RuleReasoner)
            .map_err(|e| format!("{class} {mode:?} {i}: {e}"))?;
        first.check_invariants().map_err(|e| format!("{class} {mode:?} {i}: {e}"))?;
        for s in &first.stages {
            let owned: usize = s.parts.values().sum();
            let unassigned = (s.unassigned_fraction * n as f64).round() as usize;
            ensure(owned + unassigned == n, || {
                format!("{class} {i} stage {}: {owned} + {unassigned} != {n}", s.stage)
            })?;
        }
        let fr: Vec<f64> = first.stages.iter().map(|s| s.unassigned_fraction).collect();
        ensure(fr.windows(2).all(|w| w[1] <= w[0]), || format!("{class} {i}: coverage shrank {fr:?}"))?;
        let second = run_stages(&ctx, first.to_hypotheses(), &expected, &RuleReasoner).map_err(|e| e.to_string())?;
        ensure(second.parts == first.parts && second.unidentified == first.unidentified, || {
            format!("{class} {mode:?} {i}: second pass changed the result")
        })?;
    }
    Ok(format!("100 fixtures in {:.2} s", start.elapsed().as_secs_f64()))
}

// ---------------------------------------------------------------- selection

fn selection_safety(dir: &Path) -> Check {
    let start = Instant::now();
    let root = dir.join("selection");
    write_suite(&root, SYNTHETIC_CLASSES, 14, 77).map_err(|e| e.to_string())?;
    let entries = load_dataset(&root).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig {
        backend: BackendSpec::Fixture {
            dir: root.join("backend").join("perfect"),
        },
        ..PipelineConfig::default()
    };
    let backend = cfg.backend.build();
    let margin = cfg.eval.margin_m;
    let (mut scenes, mut mixed, mut heuristic_wins, mut first_wins) = (0, 0, 0, 0);
    'outer: for entry in &entries {
        for reference in reference_tasks().into_iter().filter(|r| r.spec.object_class == entry.object_class) {
            if scenes == 100 {
                break 'outer;
            }
            let prepared =
                prepare(entry, &reference.spec, &cfg, backend.as_ref(), &RuleReasoner).map_err(|e| e.to_string())?;
            let seg = &prepared.segmentation.result;
            let human = gt_part_cloud(&seg.object_cloud, &entry.gt_part_masks[&reference.human_part]);
            let ok = |g: &GraspCandidate| grasp_success(g, &human, margin).expect("human cloud");
            let subset = prepared.grasps.subset_candidates();
            let free = subset.iter().filter(|g| ok(g)).count();
            if free == 0 {
                continue;
            }
            scenes += 1;
            for method in [Method::Ours, Method::Heuristic] {
                let c = choose(&prepared, method, &cfg, &RuleReasoner).map_err(|e| e.to_string())?;
                ensure(ok(&c.grasp), || {
                    format!("{} '{}': {method} picked an interfering grasp", entry.id(), reference.spec.task_text)
                })?;
            }
            if free < subset.len() {
                mixed += 1;
                let h = choose(&prepared, Method::Heuristic, &cfg, &RuleReasoner).map_err(|e| e.to_string())?;
                let p = choose(&prepared, Method::PlannerFirst, &cfg, &RuleReasoner).map_err(|e| e.to_string())?;
                heuristic_wins += ok(&h.grasp) as usize;
                first_wins += ok(&p.grasp) as usize;
            }
        }
    }
    ensure(scenes == 100, || format!("only {scenes} scenes with a free candidate"))?;
    ensure(mixed > 0 && heuristic_wins > first_wins, || {
        format!("mixed scenes {mixed}: heuristic {heuristic_wins} vs planner-first {first_wins}")
    })?;
    Ok(format!(
        "100/100 safe; mixed scenes {mixed}: heuristic {heuristic_wins} vs planner-first {first_wins} ({:.2} s)",
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------- handover

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn handover_alignment() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let position = Point3::new(0.6, 0.0, 0.3);
    let mut fallbacks = 0;
    for i in 0..1000 {
        let robot = Point3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.4..0.7));
        let b = unit_vector(&mut rng);
        let dist: f64 = rng.random_range(0.02..0.3);
        // every tenth triple is exactly opposed, or vertical and opposed
        let u = match i % 10 {
            0 => -b,
            5 if i % 20 == 5 => {
                let b_up = if rng.random_bool(0.5) { WORLD_UP } else { -WORLD_UP };
                check_vertical_opposed(&b_up, robot, dist, &position, &mut fallbacks)?;
                unit_vector(&mut rng)
            }
            _ => unit_vector(&mut rng),
        };
        let human = robot + u * dist;
        let pose = handover_orientation(&grasp_at(robot), &human, &b, &position).map_err(|e| e.to_string())?;
        let offset = (human - robot).normalize();
        let err = (pose.rotation * offset - b).norm();
        ensure(err <= 1e-6, || format!("triple {i}: misaligned by {err}"))?;
        if i % 10 == 0 {
            let axis = Unit::new_normalize(WORLD_UP.cross(&offset));
            let expected = UnitQuaternion::from_axis_angle(&axis, std::f64::consts::PI);
            ensure(pose.rotation.angle_to(&expected) < 1e-6, || {
                format!("triple {i}: opposed case is not a half turn about up x offset")
            })?;
            fallbacks += 1;
        }
    }
    within(start.elapsed(), 5.0, "1000 triples")?;
    Ok(format!(
        "1000 triples within 1e-6, {fallbacks} opposed cases on the fallback, {:.3} s",
        start.elapsed().as_secs_f64()
    ))
}

/// Vertical opposed offset: the half turn is about x × offset.
fn check_vertical_opposed(
    b: &Vector3<f64>,
    robot: Point3<f64>,
    dist: f64,
    position: &Point3<f64>,
    fallbacks: &mut usize,
) -> Result<(), String> {
    let human = robot - b * dist;
    let pose = handover_orientation(&grasp_at(robot), &human, b, position).map_err(|e| e.to_string())?;
    let offset = -b;
    ensure((pose.rotation * offset - b).norm() <= 1e-6, || "vertical opposed case misaligned".into())?;
    let axis = Unit::new_normalize(Vector3::x().cross(&offset));
    let expected = UnitQuaternion::from_axis_angle(&axis, std::f64::consts::PI);
    ensure(pose.rotation.angle_to(&expected) < 1e-6, || {
        "vertical opposed case is not a half turn about x x offset".into()
    })?;
    *fallbacks += 1;
    Ok(())
}

// ---------------------------------------------------------------- sampler

/// Outward normal of the box face nearest to `p`.
fn box_normal(p: &Point3<f64>, center: &Point3<f64>, rot: &Rotation3<f64>, half: &Vector3<f64>) -> Vector3<f64> {
    let local = rot.inverse() * (p - center);
    let gaps = [
        half.x - local.x.abs(),
        half.y - local.y.abs(),
        half.z - local.z.abs(),
    ];
    let axis = (0..3).min_by(|&a, &b| gaps[a].total_cmp(&gaps[b])).unwrap();
    let mut n = Vector3::zeros();
    n[axis] = local[axis].signum();
    rot * n
}

fn cylinder_normal(p: &Point3<f64>, center: &Point3<f64>, axis: &Vector3<f64>, radius: f64, half: f64) -> Vector3<f64> {
    let d = p - center;
    let t = d.dot(axis);
    let radial = d - axis * t;
    if half - t.abs() < radius - radial.norm() {
        axis * t.signum()
    } else {
        radial.normalize()
    }
}

fn audit(grasps: &[GraspCandidate], gripper: &GripperSpec, normal: impl Fn(&Point3<f64>) -> Vector3<f64>) -> Result<(), String> {
    for (i, g) in grasps.iter().enumerate() {
        let angle = normal(&g.contacts[0]).dot(&normal(&g.contacts[1])).clamp(-1.0, 1.0).acos().to_degrees();
        ensure(angle >= 150.0, || format!("grasp {i}: normals {angle:.1} deg apart"))?;
        ensure(g.width <= gripper.max_width, || format!("grasp {i}: width {}", g.width))?;
    }
    Ok(())
}

fn sampler_audit() -> Check {
    let gripper = GripperSpec::default();
    let params = GraspParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut total = 0;
    for i in 0..10u64 {
        let center = Point3::new(0.0, 0.0, 0.5);
        let rot = Rotation3::from_euler_angles(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0));
        let half = Vector3::new(rng.random_range(0.01..0.035), rng.random_range(0.02..0.06), rng.random_range(0.05..0.12));
        let cloud = sample_box_surface(center, rot, half, 3000, &mut rng);
        let grasps = generate_grasps(&cloud, &gripper, &params, i);
        ensure(!grasps.is_empty(), || format!("box {i}: no grasps"))?;
        audit(&grasps, &gripper, |p| box_normal(p, &center, &rot, &half)).map_err(|e| format!("box {i}: {e}"))?;
        total += grasps.len();

        let axis = Unit::new_normalize(Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0)));
        let (radius, length) = (rng.random_range(0.01..0.035), rng.random_range(0.06..0.12));
        let cloud = sample_cylinder_surface(center, axis, radius, length, 3000, &mut rng);
        let grasps = generate_grasps(&cloud, &gripper, &params, i);
        ensure(!grasps.is_empty(), || format!("cylinder {i}: no grasps"))?;
        audit(&grasps, &gripper, |p| cylinder_normal(p, &center, &axis, radius, length))
            .map_err(|e| format!("cylinder {i}: {e}"))?;
        total += grasps.len();
    }
    let sphere = sample_sphere_surface(Point3::new(0.0, 0.0, 0.5), 0.06, 3000, &mut rng);
    ensure(generate_grasps(&sphere, &gripper, &params, 0).is_empty(), || {
        "12 cm sphere produced grasps".into()
    })?;
    Ok(format!("{total} grasps on 10 boxes and 10 cylinders pass; wide sphere empty"))
}

// ---------------------------------------------------------------- determinism

fn handover_bin(args: &[&str], env: &[(&str, &str)]) -> Result<std::process::Output, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_handover"));
    cmd.args(args).env_remove("LLM_ENDPOINT");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().map_err(|e| e.to_string())
}

fn determinism(dir: &Path) -> Check {
    let root = dir.join("determinism");
    write_suite(&root, &["hammer", "knife", "spoon"], 2, 5).map_err(|e| e.to_string())?;
    let root_s = root.to_str().unwrap();
    let mut pipeline_runs = Vec::new();
    for _ in 0..2 {
        let o = handover_bin(
            &[
                "pipeline", "--dataset", root_s, "--entry", "knife/01/0", "--task", "cut", "--reasoner", "rule",
                "--seed", "7",
            ],
            &[],
        )?;
        ensure(o.status.code() == Some(0), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        pipeline_runs.push(o.stdout);
    }
    ensure(pipeline_runs[0] == pipeline_runs[1], || "pipeline traces differ".into())?;
    let mut reports = Vec::new();
    for (i, jobs) in ["1", "4"].iter().enumerate() {
        let out = dir.join(format!("eval{i}"));
        let o = handover_bin(
            &[
                "eval", "--dataset", root_s, "--out", out.to_str().unwrap(), "--csv", "--jobs", jobs, "--seed", "7",
            ],
            &[],
        )?;
        ensure(o.status.code() == Some(0), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        let files: Vec<Vec<u8>> = ["report.json", "report.txt", "report.csv"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap_or_default())
            .collect();
        reports.push(files);
    }
    ensure(reports[0] == reports[1], || "eval reports differ".into())?;
    Ok(format!(
        "pipeline trace ({} bytes) and eval report ({} bytes) identical across runs",
        pipeline_runs[0].len(),
        reports[0][0].len()
    ))
}

// ---------------------------------------------------------------- remote reasoner

struct MockEndpoint {
    url: String,
    requests: Arc<Mutex<Vec<serde_json::Value>>>,
}

/// Serves `reply(n)` as the assistant content for the n-th request.
fn mock_endpoint(reply: impl Fn(usize) -> String + Send + 'static) -> MockEndpoint {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock endpoint");
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&requests);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; len];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let n = {
                let mut r = seen.lock().unwrap();
                r.push(serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null));
                r.len() - 1
            };
            let payload = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": reply(n)}}]
            })
            .to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                payload.len(),
                payload
            );
        }
    });
    MockEndpoint { url, requests }
}

fn remote(url: &str) -> RemoteReasoner {
    RemoteReasoner::new(RemoteConfig {
        endpoint: url.into(),
        api_key: None,
        model: "mock".into(),
        temperature: 0.0,
        max_retries: RemoteConfig::DEFAULT_RETRIES,
        timeout_secs: 10,
    })
}

fn remote_contract(dir: &Path) -> Check {
    let spec = TaskSpec {
        object_class: "hammer".into(),
        task_text: "hammer a nail".into(),
        conventionality: handover_core::dataset::Conventionality::ConventionalEasy,
    };
    let valid = serde_json::json!({
        "post_task_description": "The human hammers a nail holding the handle.",
        "relevant_parts": ["handle", "head"],
        "human_grasp_part": "handle",
        "robot_grasp_region": {"description": "the head", "part": "head"}
    })
    .to_string();

    // valid answer on the first try
    let ok = mock_endpoint(move |_| valid.clone());
    let plan = task_reasoning(&spec, None, &remote(&ok.url)).map_err(|e| e.to_string())?;
    ensure(plan.human_grasp_part == "handle" && plan.robot_grasp_region.part.as_deref() == Some("head"), || {
        format!("parsed plan {plan:?}")
    })?;
    let reqs = ok.requests.lock().unwrap().clone();
    ensure(reqs.len() == 1, || format!("{} requests for a valid answer", reqs.len()))?;
    let prompt = reqs[0]["messages"][1]["content"].as_str().unwrap_or_default().to_string();
    let (td, si, os) = (prompt.find(TD_HEADER), prompt.find(SI_HEADER), prompt.find(OS_HEADER));
    ensure(matches!((td, si, os), (Some(a), Some(b), Some(c)) if a < b && b < c), || {
        format!("prompt sections out of order: {td:?} {si:?} {os:?}")
    })?;

    // invalid every time: one attempt plus exactly three retries, then code 4
    let bad = mock_endpoint(|n| if n % 2 == 0 { "the handle".into() } else { "{\"human_grasp_part\": 3}".into() });
    let err = task_reasoning(&spec, None, &remote(&bad.url)).expect_err("invalid answers accepted");
    let attempts = bad.requests.lock().unwrap().len();
    ensure(matches!(err, ReasonerError::RetriesExhausted { attempts: 4, .. }) && attempts == 4, || {
        format!("{attempts} requests, error {err}")
    })?;
    let code = PipelineError::from(err).exit_code();
    ensure(code == 4, || format!("exit code {code}"))?;

    // the same through the command line
    let root = dir.join("remote");
    write_suite(&root, &["hammer"], 1, 1).map_err(|e| e.to_string())?;
    let cli_bad = mock_endpoint(|_| "not json".into());
    let o = handover_bin(
        &[
            "pipeline", "--dataset", root.to_str().unwrap(), "--entry", "hammer/00/0", "--task", "hammer a nail",
            "--reasoner", "remote",
        ],
        &[("LLM_ENDPOINT", cli_bad.url.as_str())],
    )?;
    let cli_attempts = cli_bad.requests.lock().unwrap().len();
    ensure(o.status.code() == Some(4) && cli_attempts == 4, || {
        format!("cli exit {:?} after {cli_attempts} requests", o.status.code())
    })?;
    Ok("valid answer parsed; TD < SI < OS; 1 + 3 retries then exit code 4 (library and CLI)".into())
}

// ---------------------------------------------------------------- main

fn main() {
    let suite_start = Instant::now();
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Check + '_>)> = vec![
        ("metric oracle equivalence", Box::new(metric_oracle)),
        ("dbscan oracle equivalence", Box::new(dbscan_oracle)),
        ("fps optimality", Box::new(fps_optimality)),
        ("diversity gate boundary", Box::new(diversity_gate_boundary)),
        ("part recovery direction", Box::new(part_recovery)),
        ("segmentation conservation and idempotence", Box::new(conservation_and_idempotence)),
        ("selection safety", Box::new(|| selection_safety(dir.path()))),
        ("handover orientation", Box::new(handover_alignment)),
        ("antipodal sampler audit", Box::new(sampler_audit)),
        ("determinism", Box::new(|| determinism(dir.path()))),
        ("remote reasoner contract", Box::new(|| remote_contract(dir.path()))),
    ];
    let mut failed = 0;
    let stdout = std::io::stdout();
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        let _ = writeln!(
            stdout.lock(),
            "{tag} {name}: {detail} [{:.2} s]",
            started.elapsed().as_secs_f64()
        );
    }
    let total = suite_start.elapsed().as_secs_f64();
    let (tag, detail) = if total < 60.0 {
        ("PASS", format!("{total:.2} s"))
    } else {
        failed += 1;
        ("FAIL", format!("{total:.2} s, limit 60 s"))
    };
    let _ = writeln!(stdout.lock(), "{tag} full acceptance suite under 60 s: {detail}");
    if failed > 0 {
        let _ = writeln!(stdout.lock(), "{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}
