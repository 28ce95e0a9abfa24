//! Independent routing stage: order the customers inside one tour.
//! Point 0 of every point list is the depot anchor; a route is the
//! cycle through all points starting and ending there. Three routers:
//! exact Held-Karp dynamic programming for small tours, nearest
//! neighbor with 2-opt and Or-opt improvement, and a small attention
//! pointer policy.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::features::polar_points;
use crate::nn::{encode, BoundParams, ModelConfig, NodeId, ParamSet, Tape, Tensor};
use crate::problem::{euclid, Instance, Point, Solution, Tour};
use crate::{Error, Result};

/// Largest point count (including the depot anchor) the exact DP
/// accepts: 2^12 subsets of customers.
pub const HELD_KARP_MAX: usize = 13;

pub const LOGIT_CLIP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Which router orders tour visits.
#[derive(Clone, Copy)]
pub enum TourRouter<'a> {
    ExactDp,
    NnTwoOpt,
    Neural { params: &'a ParamSet, cfg: &'a ModelConfig },
}

impl TourRouter<'_> {
    /// Routes one point list; returns the visiting order (a permutation
    /// of 0..n starting at 0) and the cycle length.
    pub fn route(&self, points: &[Point]) -> Result<(Vec<usize>, f64)> {
        match self {
            TourRouter::ExactDp => held_karp(points),
            TourRouter::NnTwoOpt => Ok(nn_2opt(points)),
            TourRouter::Neural { params, cfg } => {
                let (order, len, _) = neural_tsp_rollout(params, cfg, points, DecodeMode::Greedy, None);
                Ok((order, len))
            }
        }
    }
}

pub fn cycle_length(points: &[Point], order: &[usize]) -> f64 {
    if order.len() <= 1 {
        return 0.0;
    }
    let mut len = 0.0;
    for w in order.windows(2) {
        len += euclid(points[w[0]], points[w[1]]);
    }
    len + euclid(points[*order.last().unwrap()], points[order[0]])
}

/// Exact TSP by Held-Karp dynamic programming, O(2^n n^2) over the
/// non-anchor points. Rejects inputs above [`HELD_KARP_MAX`] points.
pub fn held_karp(points: &[Point]) -> Result<(Vec<usize>, f64)> {
    let n = points.len();
    if n == 0 || n > HELD_KARP_MAX {
        return Err(Error::SizeLimit(format!(
            "held_karp handles 1..={HELD_KARP_MAX} points, got {n}"
        )));
    }
    if n == 1 {
        return Ok((vec![0], 0.0));
    }
    let m = n - 1; // points 1..n, bit i encodes point i+1
    let full = (1usize << m) - 1;
    let d = |a: usize, b: usize| euclid(points[a], points[b]);

    // best[mask][j]: shortest path 0 -> (set mask) ending at point j+1
    let mut best = vec![f64::INFINITY; (full + 1) * m];
    let mut parent = vec![usize::MAX; (full + 1) * m];
    for j in 0..m {
        best[(1 << j) * m + j] = d(0, j + 1);
    }
    for mask in 1..=full {
        for j in 0..m {
            if mask & (1 << j) == 0 {
                continue;
            }
            let rest = mask ^ (1 << j);
            if rest == 0 {
                continue; // base case seeded above
            }
            for i in 0..m {
                if rest & (1 << i) == 0 {
                    continue;
                }
                let cand = best[rest * m + i] + d(i + 1, j + 1);
                if cand < best[mask * m + j] {
                    best[mask * m + j] = cand;
                    parent[mask * m + j] = i;
                }
            }
        }
    }
    // rebuild from the cheapest closing edge
    let (mut last, mut total) = (0usize, f64::INFINITY);
    for j in 0..m {
        let cand = best[full * m + j] + d(j + 1, 0);
        if cand < total {
            total = cand;
            last = j;
        }
    }
    let mut order = vec![0usize; n];
    let mut mask = full;
    let mut at = last;
    for slot in (1..n).rev() {
        order[slot] = at + 1;
        let p = parent[mask * m + at];
        mask ^= 1 << at;
        if p == usize::MAX {
            break;
        }
        at = p;
    }
    Ok((order, total))
}

fn nearest_neighbor_order(points: &[Point]) -> Vec<usize> {
    let n = points.len();
    let mut order = Vec::with_capacity(n);
    let mut used = vec![false; n];
    order.push(0);
    used[0] = true;
    let mut at = 0;
    for _ in 1..n {
        let mut pick = usize::MAX;
        let mut best = f64::INFINITY;
        for (j, &u) in used.iter().enumerate() {
            if u {
                continue;
            }
            let dist = euclid(points[at], points[j]);
            if dist < best {
                best = dist;
                pick = j;
            }
        }
        order.push(pick);
        used[pick] = true;
        at = pick;
    }
    order
}

const IMPROVE_EPS: f64 = 1e-12;

/// One full first-improvement 2-opt sweep; applies the first improving
/// reversal found and reports whether anything changed. Position 0 (the
/// anchor) never moves.
fn two_opt_pass(points: &[Point], order: &mut [usize]) -> bool {
    let n = order.len();
    for i in 1..n - 1 {
        for j in i + 1..n {
            let next = if j + 1 == n { 0 } else { j + 1 };
            let delta = euclid(points[order[i - 1]], points[order[j]])
                + euclid(points[order[i]], points[order[next]])
                - euclid(points[order[i - 1]], points[order[i]])
                - euclid(points[order[j]], points[order[next]]);
            if delta < -IMPROVE_EPS {
                order[i..=j].reverse();
                return true;
            }
        }
    }
    false
}

/// One first-improvement Or-opt sweep: relocate a segment of 1..=3
/// consecutive visits to another position, forward orientation.
fn or_opt_pass(points: &[Point], order: &mut Vec<usize>) -> bool {
    let n = order.len();
    for seg in 1..=3usize.min(n.saturating_sub(2)) {
        for i in 1..n - seg + 1 {
            let before = order[i - 1];
            let first = order[i];
            let last = order[i + seg - 1];
            let after = order[(i + seg) % n];
            let removal_gain = euclid(points[before], points[first])
                + euclid(points[last], points[after])
                - euclid(points[before], points[after]);
            // insertion positions in the tour with the segment removed
            for k in 1..n - seg + 1 {
                if k >= i && k <= i + seg {
                    continue;
                }
                let (u, v) = if k < i {
                    (order[k - 1], order[k])
                } else {
                    (order[k - 1], order[k % n])
                };
                let insert_cost = euclid(points[u], points[first])
                    + euclid(points[last], points[v])
                    - euclid(points[u], points[v]);
                if insert_cost - removal_gain < -IMPROVE_EPS {
                    let segment: Vec<usize> = order.drain(i..i + seg).collect();
                    let at = if k < i { k } else { k - seg };
                    for (off, s) in segment.into_iter().enumerate() {
                        order.insert(at + off, s);
                    }
                    return true;
                }
            }
        }
    }
    false
}

/// Local search from a given starting order: 2-opt to a local optimum,
/// then Or-opt relocations, repeated until neither move class improves.
pub fn improve_order(points: &[Point], mut order: Vec<usize>) -> (Vec<usize>, f64) {
    if order.len() > 2 {
        loop {
            while two_opt_pass(points, &mut order) {}
            if !or_opt_pass(points, &mut order) {
                break;
            }
        }
    }
    let len = cycle_length(points, &order);
    (order, len)
}

/// Nearest-neighbor construction from point 0 followed by 2-opt and
/// Or-opt improvement. Deterministic: fixed scan order, first
/// improvement.
pub fn nn_2opt(points: &[Point]) -> (Vec<usize>, f64) {
    improve_order(points, nearest_neighbor_order(points))
}

/// A sampled or greedy rollout of the attention pointer policy over a
/// point list. Returns the visiting order, the cycle length, and the
/// log-probability of the chosen sequence. Pass an RNG for sampling
/// mode; greedy mode ignores it.
pub fn neural_tsp_rollout(
    params: &ParamSet,
    cfg: &ModelConfig,
    points: &[Point],
    mode: DecodeMode,
    rng: Option<&mut ChaCha8Rng>,
) -> (Vec<usize>, f64, f64) {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let (order, len, logp) = neural_tsp_on_tape(&mut tape, &bound, cfg, points, mode, rng);
    let logp_value = logp.map(|id| tape.value(id).item()).unwrap_or(0.0);
    (order, len, logp_value)
}

/// Tape-level rollout for training: the returned node is the summed
/// log-probability of the sampled choices (None when there was no
/// choice to make).
pub fn neural_tsp_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    points: &[Point],
    mode: DecodeMode,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Vec<usize>, f64, Option<NodeId>) {
    let n = points.len();
    assert!(n >= 1, "cannot route zero points");
    if n == 1 {
        return (vec![0], 0.0, None);
    }
    let feats = tape.constant(polar_points(points).values);
    let h = encode(tape, bound, cfg, feats);
    let keys = tape.matmul(h, bound.get("dec.wk"));
    let keys_t = tape.transpose(keys);
    let all_rows: Vec<usize> = (0..n).collect();
    let h_mean = tape.mean_rows(h, &all_rows);
    let h_first = tape.gather_rows(h, &[0]);
    let scale = 1.0 / (cfg.dim as f64).sqrt();

    let mut visited = vec![false; n];
    visited[0] = true;
    let mut order = vec![0usize];
    let mut last = 0usize;
    let mut logp: Option<NodeId> = None;

    for _ in 1..n {
        let h_last = tape.gather_rows(h, &[last]);
        let ctx = tape.concat_cols(&[h_mean, h_first, h_last]);
        let q = tape.matmul(ctx, bound.get("dec.wq"));
        let scores = tape.matmul(q, keys_t);
        let scores = tape.scale(scores, scale);
        let clipped = tape.tanh_clip(scores, LOGIT_CLIP);
        let masked = tape.mask_fill(clipped, &visited);
        let probs = tape.softmax(masked);
        let pick = match mode {
            DecodeMode::Greedy => argmax_row(tape.value(probs).row(0)),
            DecodeMode::Sample => {
                let r = rng.as_deref_mut().expect("sampling needs an RNG");
                sample_row(tape.value(probs).row(0), r)
            }
        };
        let p = tape.select(probs, 0, pick);
        let lp = tape.log(p);
        logp = Some(match logp {
            Some(acc) => tape.add(acc, lp),
            None => lp,
        });
        visited[pick] = true;
        order.push(pick);
        last = pick;
    }
    let len = cycle_length(points, &order);
    (order, len, logp)
}

/// Highest-probability index, lowest index on ties.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Draws an index from a probability row.
pub fn sample_row(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_positive // float round-off at the tail
}

/// Applies a router to every tour of a partition. For the local-search
/// router the routed order never costs more than the insertion order
/// (the improvement restarts from the insertion order if nearest
/// neighbor led somewhere worse).
pub fn route_solution(inst: &Instance, partition: &[Tour], router: &TourRouter) -> Result<Solution> {
    let mut tours = Vec::with_capacity(partition.len());
    for tour in partition {
        if tour.visits.len() <= 1 {
            tours.push(tour.clone());
            continue;
        }
        let mut points = Vec::with_capacity(tour.visits.len() + 1);
        points.push(inst.depots()[tour.depot]);
        points.extend(tour.visits.iter().map(|&c| inst.customers()[c]));
        let (order, len) = router.route(&points)?;
        let order = match router {
            TourRouter::NnTwoOpt => {
                let insertion: Vec<usize> = (0..points.len()).collect();
                let insertion_len = cycle_length(&points, &insertion);
                if len > insertion_len + IMPROVE_EPS {
                    improve_order(&points, insertion).0
                } else {
                    order
                }
            }
            _ => order,
        };
        let visits = order[1..].iter().map(|&p| tour.visits[p - 1]).collect();
        tours.push(Tour::new(tour.depot, visits));
    }
    Ok(Solution::new(tours))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn square() -> Vec<Point> {
        vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
        (0..n).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect()
    }

    /// Exhaustive minimum over all (n-1)! orders; the independent
    /// oracle for the DP.
    fn brute_force_cycle(points: &[Point]) -> f64 {
        fn permute(points: &[Point], rest: &mut Vec<usize>, cur: &mut Vec<usize>, best: &mut f64) {
            if rest.is_empty() {
                let len = cycle_length(points, cur);
                if len < *best {
                    *best = len;
                }
                return;
            }
            for i in 0..rest.len() {
                let v = rest.remove(i);
                cur.push(v);
                permute(points, rest, cur, best);
                cur.pop();
                rest.insert(i, v);
            }
        }
        let mut rest: Vec<usize> = (1..points.len()).collect();
        let mut best = f64::INFINITY;
        permute(points, &mut rest, &mut vec![0], &mut best);
        best
    }

    #[test]
    fn held_karp_square_and_triangle() {
        let (order, len) = held_karp(&square()).unwrap();
        assert!((len - 4.0).abs() < 1e-12);
        assert_eq!(order.len(), 4);
        assert_eq!(order[0], 0);

        let tri = vec![(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)];
        let (_, len) = held_karp(&tri).unwrap();
        assert!((len - 12.0).abs() < 1e-12);

        assert_eq!(held_karp(&[(0.0, 0.0)]).unwrap().1, 0.0);
        assert!(held_karp(&vec![(0.0, 0.0); 14]).is_err());
    }

    #[test]
    fn held_karp_matches_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [5, 7, 9] {
            for _ in 0..5 {
                let pts = random_points(&mut rng, n);
                let (order, len) = held_karp(&pts).unwrap();
                let brute = brute_force_cycle(&pts);
                assert!((len - brute).abs() < 1e-9, "n={n}: dp {len} vs brute {brute}");
                assert!((cycle_length(&pts, &order) - len).abs() < 1e-9);
                let mut sorted = order.clone();
                sorted.sort_unstable();
                assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn nn_2opt_on_easy_shapes() {
        let (order, len) = nn_2opt(&square());
        assert!((len - 4.0).abs() < 1e-12);
        assert_eq!(order[0], 0);

        let collinear: Vec<Point> = vec![(0.0, 0.0), (3.0, 0.0), (1.0, 0.0), (2.0, 0.0), (4.0, 0.0)];
        let (_, len) = nn_2opt(&collinear);
        assert!((len - 8.0).abs() < 1e-12, "sweep order is optimal on a line, got {len}");
    }

    #[test]
    fn nn_2opt_never_beats_exact_and_is_two_opt_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let pts = random_points(&mut rng, 10);
            let (order, len) = nn_2opt(&pts);
            let (_, exact) = held_karp(&pts).unwrap();
            assert!(len >= exact - 1e-9);
            // exhaustive 2-opt scan: no single reversal improves
            let mut o = order.clone();
            assert!(!two_opt_pass(&pts, &mut o), "returned cycle not 2-opt optimal");
            assert!((cycle_length(&pts, &order) - len).abs() < 1e-9);
        }
    }

    #[test]
    fn neural_rollout_visits_everything() {
        let cfg = ModelConfig::new(1, 8, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = ParamSet::init_router(&cfg, &mut rng);
        let pts = random_points(&mut rng, 7);
        let (order, len, logp) = neural_tsp_rollout(&params, &cfg, &pts, DecodeMode::Greedy, None);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..7).collect::<Vec<_>>());
        assert!((cycle_length(&pts, &order) - len).abs() < 1e-12);
        assert!(logp <= 0.0);

        // determinism of greedy decode
        let again = neural_tsp_rollout(&params, &cfg, &pts, DecodeMode::Greedy, None);
        assert_eq!(order, again.0);

        // single point: trivial cycle
        let (o, l, lp) = neural_tsp_rollout(&params, &cfg, &pts[..1], DecodeMode::Greedy, None);
        assert_eq!(o, vec![0]);
        assert_eq!(l, 0.0);
        assert_eq!(lp, 0.0);
    }

    #[test]
    fn route_solution_orders_and_bounds() {
        let inst = Instance::new(
            "r",
            vec![(0.0, 0.0)],
            vec![(1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.2)],
            vec![1, 1, 1, 1],
            10,
        )
        .unwrap();
        let partition = vec![Tour::new(0, vec![2, 0, 3, 1])];
        let insertion_cost =
            crate::solution_cost(&inst, &Solution::new(partition.clone()));

        let dp = route_solution(&inst, &partition, &TourRouter::ExactDp).unwrap();
        let ls = route_solution(&inst, &partition, &TourRouter::NnTwoOpt).unwrap();
        let dp_cost = crate::solution_cost(&inst, &dp);
        let ls_cost = crate::solution_cost(&inst, &ls);
        assert!(dp_cost <= ls_cost + 1e-9);
        assert!(ls_cost <= insertion_cost + 1e-9);

        // routed tours are permutations of the input visits
        let mut got = dp.tours[0].visits.clone();
        got.sort_unstable();
        assert_eq!(got, vec![0, 1, 2, 3]);

        // tours with <= 1 customer come back unchanged
        let single = vec![Tour::new(0, vec![2])];
        let routed = route_solution(&inst, &single, &TourRouter::ExactDp).unwrap();
        assert_eq!(routed.tours[0].visits, vec![2]);
    }
}
