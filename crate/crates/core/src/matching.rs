//! Dynamic matching: a deterministic-in-(A, B, seed) injection from balls to
//! bins maintained by multi-round consistent hashing on the circle.
//!
//! Each round hashes the unmatched balls and bins onto the circle; a ball
//! whose clockwise successor is a bin gets matched to it. The induced
//! matching depends only on the current sets and the seed, so any update
//! sequence reaching the same (A, B) yields the same matching.

use crate::perm::{CircleHash, Role, Seed};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchingError {
    #[error("promise |A| <= |B| violated: {balls} balls, {bins} bins")]
    BallsExceedBins { balls: usize, bins: usize },
    #[error("element {0} already present")]
    Duplicate(u64),
    #[error("element {0} not present")]
    Missing(u64),
}

/// A ball/bin instance. Balls and bins live in separate universes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BallBinInstance {
    pub balls: Vec<u64>,
    pub bins: Vec<u64>,
}

impl BallBinInstance {
    pub fn new(mut balls: Vec<u64>, mut bins: Vec<u64>) -> Result<Self, MatchingError> {
        balls.sort_unstable();
        balls.dedup();
        bins.sort_unstable();
        bins.dedup();
        if balls.len() > bins.len() {
            return Err(MatchingError::BallsExceedBins {
                balls: balls.len(),
                bins: bins.len(),
            });
        }
        Ok(BallBinInstance { balls, bins })
    }
}

/// State of one round, for the instrumented difference tests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundTrace {
    /// Unmatched balls before this round.
    pub balls: Vec<u64>,
    /// Unmatched bins before this round.
    pub bins: Vec<u64>,
    /// Pairs matched in this round.
    pub matched: Vec<(u64, u64)>,
}

/// Result of running the matching algorithm.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matching {
    /// ball -> bin; an injection covering every ball.
    pub pairs: BTreeMap<u64, u64>,
    /// Number of rounds executed.
    pub rounds: u32,
    /// (ball, bin, round) in match order.
    pub per_round_trace: Vec<(u64, u64, u32)>,
}

impl Matching {
    pub fn get(&self, ball: u64) -> Option<u64> {
        self.pairs.get(&ball).copied()
    }
}

/// Runs the matching algorithm, recording per-round set snapshots.
pub fn compute_matching_traced(
    inst: &BallBinInstance,
    seed: Seed,
) -> Result<(Matching, Vec<RoundTrace>), MatchingError> {
    if inst.balls.len() > inst.bins.len() {
        return Err(MatchingError::BallsExceedBins {
            balls: inst.balls.len(),
            bins: inst.bins.len(),
        });
    }
    let mut pairs = BTreeMap::new();
    let mut trace = Vec::new();
    let mut order = Vec::new();
    let mut balls = inst.balls.clone();
    let mut bins = inst.bins.clone();
    let mut round = 0u32;
    while !balls.is_empty() {
        round += 1;
        let h = CircleHash::new(seed, round);
        // lay out this round's circle
        let mut pts: Vec<(crate::perm::CirclePoint, Role, u64)> = balls
            .iter()
            .map(|&a| (h.point(a, Role::Ball), Role::Ball, a))
            .chain(bins.iter().map(|&b| (h.point(b, Role::Bin), Role::Bin, b)))
            .collect();
        pts.sort_unstable_by(|x, y| x.0.cmp(&y.0));
        let m = pts.len();
        let mut matched = Vec::new();
        for j in 0..m {
            let (_, role_j, elem_j) = pts[j];
            let (_, role_next, elem_next) = pts[(j + 1) % m];
            if role_j == Role::Ball && role_next == Role::Bin {
                matched.push((elem_j, elem_next));
            }
        }
        trace.push(RoundTrace {
            balls: balls.clone(),
            bins: bins.clone(),
            matched: matched.clone(),
        });
        for &(a, b) in &matched {
            pairs.insert(a, b);
            order.push((a, b, round));
            balls.retain(|&x| x != a);
            bins.retain(|&x| x != b);
        }
        debug_assert!(!matched.is_empty() || balls.is_empty(), "a round must match");
    }
    Ok((
        Matching {
            pairs,
            rounds: round,
            per_round_trace: order,
        },
        trace,
    ))
}

/// The matching for (A, B, seed). Pure: independent of operation history.
pub fn compute_matching(inst: &BallBinInstance, seed: Seed) -> Result<Matching, MatchingError> {
    compute_matching_traced(inst, seed).map(|(m, _)| m)
}

/// Number of balls whose assignment differs, counting newly matched and
/// newly unmatched balls once each (sentinel convention).
pub fn relocation_cost(m1: &Matching, m2: &Matching) -> usize {
    let mut cost = 0;
    for (a, b) in &m1.pairs {
        if m2.pairs.get(a) != Some(b) {
            cost += 1;
        }
    }
    for a in m2.pairs.keys() {
        if !m1.pairs.contains_key(a) {
            cost += 1;
        }
    }
    cost
}

/// A single update to a ball/bin instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOp {
    InsertBall(u64),
    DeleteBall(u64),
    InsertBin(u64),
    DeleteBin(u64),
}

/// Applies an update, recomputes the matching, and reports the relocation
/// cost against `old`.
pub fn apply_update(
    inst: &BallBinInstance,
    op: UpdateOp,
    seed: Seed,
    old: &Matching,
) -> Result<(BallBinInstance, Matching, usize), MatchingError> {
    let mut balls = inst.balls.clone();
    let mut bins = inst.bins.clone();
    match op {
        UpdateOp::InsertBall(x) => {
            if balls.contains(&x) {
                return Err(MatchingError::Duplicate(x));
            }
            balls.push(x);
        }
        UpdateOp::DeleteBall(x) => {
            if !balls.contains(&x) {
                return Err(MatchingError::Missing(x));
            }
            balls.retain(|&e| e != x);
        }
        UpdateOp::InsertBin(x) => {
            if bins.contains(&x) {
                return Err(MatchingError::Duplicate(x));
            }
            bins.push(x);
        }
        UpdateOp::DeleteBin(x) => {
            if !bins.contains(&x) {
                return Err(MatchingError::Missing(x));
            }
            bins.retain(|&e| e != x);
        }
    }
    let new_inst = BallBinInstance::new(balls, bins)?;
    let new_m = compute_matching(&new_inst, seed)?;
    let cost = relocation_cost(old, &new_m);
    Ok((new_inst, new_m, cost))
}

/// Inserts or deletes a ball and a bin simultaneously, as the adapters and
/// minimaps need; both primitive costs are summed.
pub fn apply_paired_update(
    inst: &BallBinInstance,
    ball_op: UpdateOp,
    bin_op: UpdateOp,
    seed: Seed,
    old: &Matching,
) -> Result<(BallBinInstance, Matching, usize), MatchingError> {
    let (mid_inst, mid_m, c1) = apply_update_relaxed(inst, ball_op, seed, old)?;
    let (new_inst, new_m, c2) = apply_update_relaxed(&mid_inst, bin_op, seed, &mid_m)?;
    if new_inst.balls.len() > new_inst.bins.len() {
        return Err(MatchingError::BallsExceedBins {
            balls: new_inst.balls.len(),
            bins: new_inst.bins.len(),
        });
    }
    Ok((new_inst, new_m, c1 + c2))
}

/// Like `apply_update` but tolerates a transient |A| = |B| + 1 state by
/// matching only |B| balls; used internally by the paired composite.
fn apply_update_relaxed(
    inst: &BallBinInstance,
    op: UpdateOp,
    seed: Seed,
    old: &Matching,
) -> Result<(BallBinInstance, Matching, usize), MatchingError> {
    match apply_update(inst, op, seed, old) {
        Err(MatchingError::BallsExceedBins { .. }) => {
            // build the intermediate instance without the promise check
            let mut balls = inst.balls.clone();
            let mut bins = inst.bins.clone();
            match op {
                UpdateOp::InsertBall(x) => balls.push(x),
                UpdateOp::DeleteBall(x) => balls.retain(|&e| e != x),
                UpdateOp::InsertBin(x) => bins.push(x),
                UpdateOp::DeleteBin(x) => bins.retain(|&e| e != x),
            }
            balls.sort_unstable();
            bins.sort_unstable();
            let tmp = BallBinInstance { balls, bins };
            let m = compute_matching_partial(&tmp, seed);
            let cost = relocation_cost(old, &m);
            Ok((tmp, m, cost))
        }
        other => other,
    }
}

/// Matching run that stops once bins are exhausted (|A| may exceed |B|).
fn compute_matching_partial(inst: &BallBinInstance, seed: Seed) -> Matching {
    let mut pairs = BTreeMap::new();
    let mut order = Vec::new();
    let mut balls = inst.balls.clone();
    let mut bins = inst.bins.clone();
    let mut round = 0u32;
    while !balls.is_empty() && !bins.is_empty() {
        round += 1;
        let h = CircleHash::new(seed, round);
        let mut pts: Vec<(crate::perm::CirclePoint, Role, u64)> = balls
            .iter()
            .map(|&a| (h.point(a, Role::Ball), Role::Ball, a))
            .chain(bins.iter().map(|&b| (h.point(b, Role::Bin), Role::Bin, b)))
            .collect();
        pts.sort_unstable_by(|x, y| x.0.cmp(&y.0));
        let m = pts.len();
        let mut matched = Vec::new();
        for j in 0..m {
            if pts[j].1 == Role::Ball && pts[(j + 1) % m].1 == Role::Bin {
                matched.push((pts[j].2, pts[(j + 1) % m].2));
            }
        }
        for &(a, b) in &matched {
            pairs.insert(a, b);
            order.push((a, b, round));
            balls.retain(|&x| x != a);
            bins.retain(|&x| x != b);
        }
    }
    Matching {
        pairs,
        rounds: round,
        per_round_trace: order,
    }
}
