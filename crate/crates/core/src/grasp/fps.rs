use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::{GraspCandidate, GraspError, GraspParams};

/// Largest number of k-subsets searched exhaustively; above it the greedy
/// max-min construction is used.
pub const EXACT_FPS_LIMIT: u64 = 20_000;

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u64) / (i as u64 + 1);
        if acc > EXACT_FPS_LIMIT {
            return u64::MAX;
        }
    }
    acc
}

fn subset_min_distance(points: &[Point3<f64>], subset: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            best = best.min((points[i] - points[j]).norm());
        }
    }
    best
}

/// Smallest translation distance between any two grasps; `None` below two.
pub fn min_pairwise_distance(grasps: &[GraspCandidate]) -> Option<f64> {
    let pts: Vec<Point3<f64>> = grasps.iter().map(|g| g.translation).collect();
    (pts.len() >= 2).then(|| subset_min_distance(&pts, &(0..pts.len()).collect::<Vec<_>>()))
}

fn max_pairwise_distance(grasps: &[&GraspCandidate]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (a, g) in grasps.iter().enumerate() {
        for h in &grasps[a + 1..] {
            let d = (g.translation - h.translation).norm();
            best = Some(best.map_or(d, |b| b.max(d)));
        }
    }
    best
}

fn greedy(points: &[Point3<f64>], k: usize, start: usize) -> Vec<usize> {
    let mut chosen = vec![start];
    let mut nearest: Vec<f64> = points.iter().map(|p| (p - points[start]).norm()).collect();
    while chosen.len() < k {
        let mut best = None;
        for (i, &d) in nearest.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (next, _) = best.expect("k < n");
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min((p - points[next]).norm());
        }
    }
    chosen
}

/// Best k-subset by exhaustive search. Among equally spread subsets the
/// first one in lexicographic order that contains `start` wins, then the
/// first overall.
fn exhaustive(points: &[Point3<f64>], k: usize, start: usize) -> Vec<usize> {
    let n = points.len();
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best: Option<(f64, bool, Vec<usize>)> = None;
    loop {
        let d = subset_min_distance(points, &idx);
        let has_start = idx.contains(&start);
        let better = match &best {
            None => true,
            Some((bd, bs, _)) => d > *bd || (d == *bd && has_start && !bs),
        };
        if better {
            best = Some((d, has_start, idx.clone()));
        }
        // next combination
        let Some(pos) = (0..k).rev().find(|&p| idx[p] < n - k + p) else { break };
        idx[pos] += 1;
        for q in pos + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
    let mut subset = best.expect("at least one subset").2;
    // lead with the seed-determined pick when it is part of the answer
    if let Some(p) = subset.iter().position(|&i| i == start) {
        subset[..=p].rotate_right(1);
    }
    subset
}

/// Indices of `min(k, n)` mutually distant points.
///
/// The seed determines the first pick. Small problems are solved exactly
/// (maximum achievable minimum pairwise distance); larger ones use the
/// greedy furthest-point construction from that first pick.
pub fn fps_points(points: &[Point3<f64>], k: usize, seed: u64) -> Result<Vec<usize>, GraspError> {
    let n = points.len();
    if n == 0 {
        return Err(GraspError::Input("no candidates to sample from".into()));
    }
    if k == 0 {
        return Err(GraspError::Input("k must be at least 1".into()));
    }
    if k >= n {
        return Ok((0..n).collect());
    }
    let start = (seed % n as u64) as usize;
    if k == 1 {
        return Ok(vec![start]);
    }
    if binomial(n, k) <= EXACT_FPS_LIMIT {
        Ok(exhaustive(points, k, start))
    } else {
        Ok(greedy(points, k, start))
    }
}

/// Furthest point sampling over grasp translations.
pub fn fps_select(candidates: &[GraspCandidate], k: usize, seed: u64) -> Result<Vec<usize>, GraspError> {
    let pts: Vec<Point3<f64>> = candidates.iter().map(|g| g.translation).collect();
    fps_points(&pts, k, seed)
}

/// True when some pair in `subset` is at least a third of `dominant_length`
/// apart. Fewer than two grasps never pass.
pub fn diversity_gate(subset: &[GraspCandidate], dominant_length: f64) -> bool {
    let threshold = dominant_length / 3.0;
    subset.iter().enumerate().any(|(a, g)| {
        subset[a + 1..]
            .iter()
            .any(|h| (g.translation - h.translation).norm() >= threshold)
    })
}

/// One generate-downselect-gate attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRound {
    pub round: usize,
    pub seed: u64,
    pub generated: usize,
    /// Indices into that round's candidates.
    pub subset: Vec<usize>,
    pub max_pairwise_m: Option<f64>,
    pub threshold_m: f64,
    pub passed: bool,
}

/// Outcome of [`plan_grasps`]: the last round's candidates and the chosen subset.
#[derive(Clone, Debug)]
pub struct GraspPlan {
    pub candidates: Vec<GraspCandidate>,
    pub subset: Vec<usize>,
    pub rounds: Vec<GenerationRound>,
}

impl GraspPlan {
    pub fn subset_candidates(&self) -> Vec<GraspCandidate> {
        self.subset.iter().map(|&i| self.candidates[i].clone()).collect()
    }
}

fn round_seed(seed: u64, round: usize) -> u64 {
    if round == 0 {
        return seed;
    }
    // splitmix64 step
    let mut z = seed.wrapping_add((round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates candidates, keeps `params.k` diverse ones and checks the
/// diversity gate, regenerating with a fresh seed up to
/// `params.regen_rounds` times.
pub fn plan_grasps(
    dominant_length: f64,
    params: &GraspParams,
    seed: u64,
    mut generate: impl FnMut(u64) -> Vec<GraspCandidate>,
) -> Result<GraspPlan, GraspError> {
    let threshold = dominant_length / 3.0;
    let mut rounds = Vec::new();
    for round in 0..=params.regen_rounds {
        let s = round_seed(seed, round);
        let candidates = generate(s);
        let subset = if candidates.is_empty() {
            Vec::new()
        } else {
            fps_select(&candidates, params.k, s)?
        };
        let chosen: Vec<GraspCandidate> = subset.iter().map(|&i| candidates[i].clone()).collect();
        let passed = diversity_gate(&chosen, dominant_length);
        log::debug!("grasp round {round}: {} candidates, gate {}", candidates.len(), passed);
        rounds.push(GenerationRound {
            round,
            seed: s,
            generated: candidates.len(),
            max_pairwise_m: max_pairwise_distance(&chosen.iter().collect::<Vec<_>>()),
            subset: subset.clone(),
            threshold_m: threshold,
            passed,
        });
        if passed {
            return Ok(GraspPlan {
                candidates,
                subset,
                rounds,
            });
        }
    }
    Err(GraspError::GateExhausted {
        rounds: params.regen_rounds,
        history: rounds,
    })
}
