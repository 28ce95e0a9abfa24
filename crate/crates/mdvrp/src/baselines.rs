//! Non-learned references: an exhaustive oracle for tiny instances, a
//! nearest-depot clustering with Clarke-Wright savings construction,
//! and a random packing control arm.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::problem::{euclid, Instance, Solution, Tour};
use crate::router::{held_karp, route_solution, TourRouter};
use crate::{max_tours, Error, Result};

pub const ORACLE_MAX_CUSTOMERS: usize = 8;
pub const ORACLE_MAX_DEPOTS: usize = 3;

/// Exact optimum by enumerating every set partition of the customers
/// (capacity-feasible blocks, at most the tour bound many), assigning
/// each block its best depot, and ordering each block with the exact
/// DP. The global cost reference for acceptance checks.
pub fn brute_force(inst: &Instance) -> Result<Solution> {
    let n = inst.num_customers();
    if n > ORACLE_MAX_CUSTOMERS || inst.num_depots() > ORACLE_MAX_DEPOTS {
        return Err(Error::SizeLimit(format!(
            "oracle handles <= {ORACLE_MAX_CUSTOMERS} customers and <= {ORACLE_MAX_DEPOTS} depots, got {} / {}",
            n,
            inst.num_depots()
        )));
    }
    let budget = max_tours(inst);
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut best: Option<(f64, Solution)> = None;
    enumerate_partitions(inst, 0, budget, &mut blocks, &mut best)?;
    best.map(|(_, sol)| sol)
        .ok_or_else(|| Error::Deadlock(format!("no feasible partition for {}", inst.id)))
}

fn enumerate_partitions(
    inst: &Instance,
    next: usize,
    budget: usize,
    blocks: &mut Vec<Vec<usize>>,
    best: &mut Option<(f64, Solution)>,
) -> Result<()> {
    if next == inst.num_customers() {
        let mut tours = Vec::with_capacity(blocks.len());
        let mut total = 0.0;
        for block in blocks.iter() {
            let (depot, order, len) = best_depot_order(inst, block)?;
            total += len;
            tours.push(Tour::new(depot, order));
        }
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            *best = Some((total, Solution::new(tours)));
        }
        return Ok(());
    }
    // Place customer `next` into an existing block or open a new one.
    let demand = u64::from(inst.demands()[next]);
    for i in 0..blocks.len() {
        let load: u64 = blocks[i].iter().map(|&c| u64::from(inst.demands()[c])).sum();
        if load + demand <= u64::from(inst.capacity()) {
            blocks[i].push(next);
            enumerate_partitions(inst, next + 1, budget, blocks, best)?;
            blocks[i].pop();
        }
    }
    if blocks.len() < budget {
        blocks.push(vec![next]);
        enumerate_partitions(inst, next + 1, budget, blocks, best)?;
        blocks.pop();
    }
    Ok(())
}

fn best_depot_order(inst: &Instance, block: &[usize]) -> Result<(usize, Vec<usize>, f64)> {
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for d in 0..inst.num_depots() {
        let mut points = Vec::with_capacity(block.len() + 1);
        points.push(inst.depots()[d]);
        points.extend(block.iter().map(|&c| inst.customers()[c]));
        let (order, len) = held_karp(&points)?;
        if best.as_ref().is_none_or(|(b, _, _)| len < *b) {
            let visits = order[1..].iter().map(|&p| block[p - 1]).collect();
            best = Some((len, d, visits));
        }
    }
    let (len, d, visits) = best.expect("at least one depot");
    Ok((d, visits, len))
}

/// Assigns every customer to its nearest depot, ties to the lower
/// depot index. Returns one (possibly empty) customer list per depot.
pub fn nearest_depot_clusters(inst: &Instance) -> Vec<Vec<usize>> {
    let mut clusters = vec![Vec::new(); inst.num_depots()];
    for (c, &p) in inst.customers().iter().enumerate() {
        let mut best = 0usize;
        let mut best_d = euclid(p, inst.depots()[0]);
        for (d, &q) in inst.depots().iter().enumerate().skip(1) {
            let dist = euclid(p, q);
            if dist < best_d {
                best_d = dist;
                best = d;
            }
        }
        clusters[best].push(c);
    }
    clusters
}

/// Distance-based clustering followed by Clarke-Wright parallel
/// savings inside each cluster, then per-tour routing. A relocation
/// pass repacks stragglers when the merge phase strands more tours
/// than the tour bound allows.
pub fn cluster_savings(inst: &Instance, router: &TourRouter) -> Result<Solution> {
    let clusters = nearest_depot_clusters(inst);
    let mut tours: Vec<Tour> = Vec::new();
    for (depot, cluster) in clusters.iter().enumerate() {
        tours.extend(savings_routes(inst, depot, cluster));
    }
    consolidate_to_budget(inst, &mut tours);
    route_solution(inst, &tours, router)
}

/// Clarke-Wright parallel savings within one cluster: one route per
/// customer, then merge route endpoints in order of decreasing savings
/// s(i,j) = d(0,i) + d(0,j) - d(i,j), capacity permitting. Ties break
/// on larger savings then lower indices; sweeps repeat until no merge
/// applies.
fn savings_routes(inst: &Instance, depot: usize, cluster: &[usize]) -> Vec<Tour> {
    if cluster.is_empty() {
        return Vec::new();
    }
    let dpt = inst.depots()[depot];
    let mut routes: Vec<Vec<usize>> = cluster.iter().map(|&c| vec![c]).collect();
    let mut loads: Vec<u64> =
        cluster.iter().map(|&c| u64::from(inst.demands()[c])).collect();
    // route id holding each customer, or usize::MAX once merged away
    let mut route_of: Vec<usize> = vec![usize::MAX; inst.num_customers()];
    for (r, &c) in cluster.iter().enumerate() {
        route_of[c] = r;
    }

    let mut savings: Vec<(f64, usize, usize)> = Vec::new();
    for (a, &i) in cluster.iter().enumerate() {
        for &j in cluster.iter().skip(a + 1) {
            let s = euclid(dpt, inst.customers()[i]) + euclid(dpt, inst.customers()[j])
                - euclid(inst.customers()[i], inst.customers()[j]);
            savings.push((s, i, j));
        }
    }
    savings.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });

    let mut merged = true;
    while merged {
        merged = false;
        for &(_, i, j) in &savings {
            let (ri, rj) = (route_of[i], route_of[j]);
            if ri == rj || ri == usize::MAX || rj == usize::MAX {
                continue;
            }
            if loads[ri] + loads[rj] > u64::from(inst.capacity()) {
                continue;
            }
            // endpoint-to-endpoint merges only
            let i_first = routes[ri].first() == Some(&i);
            let i_last = routes[ri].last() == Some(&i);
            let j_first = routes[rj].first() == Some(&j);
            let j_last = routes[rj].last() == Some(&j);
            if !(i_first || i_last) || !(j_first || j_last) {
                continue;
            }
            let mut tail = std::mem::take(&mut routes[rj]);
            if i_last && j_first {
                // ri ... i - j ... rj
            } else if i_last && j_last {
                tail.reverse();
            } else if i_first && j_first {
                routes[ri].reverse();
            } else {
                // i_first && j_last: prepend by swapping roles
                std::mem::swap(&mut routes[ri], &mut tail);
            }
            routes[ri].extend(tail);
            loads[ri] += loads[rj];
            loads[rj] = 0;
            for &c in &routes[ri] {
                route_of[c] = ri;
            }
            merged = true;
        }
    }
    routes
        .into_iter()
        .filter(|r| !r.is_empty())
        .map(|r| Tour::new(depot, r))
        .collect()
}

/// Moves customers out of the lightest tours into remaining capacity
/// elsewhere until the opened-tour count fits the bound (or no move
/// helps). Relocations pick the receiving tour by nearest depot.
fn consolidate_to_budget(inst: &Instance, tours: &mut Vec<Tour>) {
    let budget = max_tours(inst);
    while tours.iter().filter(|t| !t.visits.is_empty()).count() > budget {
        let lightest = tours
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.visits.is_empty())
            .min_by_key(|(i, t)| (t.demand(inst), *i))
            .map(|(i, _)| i)
            .expect("nonempty tour exists");
        let victims = tours[lightest].visits.clone();
        let mut placed = Vec::new();
        for &c in &victims {
            let demand = u64::from(inst.demands()[c]);
            let target = tours
                .iter()
                .enumerate()
                .filter(|(i, t)| {
                    *i != lightest
                        && !t.visits.is_empty()
                        && t.demand(inst) + demand <= u64::from(inst.capacity())
                })
                .min_by(|(_, a), (_, b)| {
                    let da = euclid(inst.customers()[c], inst.depots()[a.depot]);
                    let db = euclid(inst.customers()[c], inst.depots()[b.depot]);
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(i, _)| i);
            match target {
                Some(i) => {
                    tours[i].visits.push(c);
                    placed.push(c);
                }
                None => break,
            }
        }
        if placed.len() == victims.len() {
            tours[lightest].visits.clear();
        } else {
            // undo the partial relocation; the budget cannot be met
            for &c in &placed {
                for t in tours.iter_mut() {
                    if let Some(pos) = t.visits.iter().position(|&x| x == c) {
                        t.visits.remove(pos);
                        break;
                    }
                }
            }
            tours[lightest].visits.extend(placed);
            break;
        }
    }
    tours.retain(|t| !t.visits.is_empty());
}

/// Control arm: shuffle the customers, pack them first-fit into one
/// open tour per depot (closing the fullest open tour when nothing
/// fits), then route. Falls back to demand-sorted packing when the
/// shuffle order would exceed the tour bound.
pub fn random_partition(
    inst: &Instance,
    seed: u64,
    router: &TourRouter,
) -> Result<Solution> {
    let mut order: Vec<usize> = (0..inst.num_customers()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let tours = match pack(inst, &order) {
        Some(tours) => tours,
        None => {
            // demand-sorted packing wastes almost nothing
            let mut sorted = order;
            sorted.sort_by_key(|&c| std::cmp::Reverse(inst.demands()[c]));
            pack(inst, &sorted).ok_or_else(|| {
                Error::Deadlock(format!("packing failed even demand-sorted on {}", inst.id))
            })?
        }
    };
    route_solution(inst, &tours, router)
}

/// First-fit packing over one open tour per depot with a round-robin
/// start cursor. Returns None when it would open more tours than the
/// bound.
fn pack(inst: &Instance, order: &[usize]) -> Option<Vec<Tour>> {
    let d = inst.num_depots();
    let budget = max_tours(inst);
    let mut open: Vec<(usize, Vec<usize>, u64)> =
        (0..d).map(|dep| (dep, Vec::new(), 0)).collect();
    let mut closed: Vec<Tour> = Vec::new();
    let mut cursor = 0usize;
    for &c in order {
        let demand = u64::from(inst.demands()[c]);
        let mut placed = false;
        for off in 0..d {
            let slot = (cursor + off) % d;
            let (_, visits, load) = &mut open[slot];
            if *load + demand <= u64::from(inst.capacity()) {
                visits.push(c);
                *load += demand;
                placed = true;
                break;
            }
        }
        if !placed {
            // close the fullest open tour and restart it
            let slot = (0..d).max_by_key(|&s| (open[s].2, s)).unwrap();
            let (dep, visits, _) = &mut open[slot];
            closed.push(Tour::new(*dep, std::mem::take(visits)));
            open[slot].2 = 0;
            open[slot].1.push(c);
            open[slot].2 = demand;
        }
        cursor = (cursor + 1) % d;
    }
    let mut tours = closed;
    tours.extend(
        open.into_iter().filter(|(_, v, _)| !v.is_empty()).map(|(dep, v, _)| Tour::new(dep, v)),
    );
    if tours.len() > budget {
        return None;
    }
    Some(tours)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instancegen::{generate_indexed, GenConfig};
    use crate::{solution_cost, validate};

    #[test]
    fn oracle_tiny_cases() {
        let inst = Instance::new(
            "one",
            vec![(0.0, 0.0)],
            vec![(0.5, 0.0)],
            vec![3],
            10,
        )
        .unwrap();
        let sol = brute_force(&inst).unwrap();
        assert!((solution_cost(&inst, &sol) - 1.0).abs() < 1e-12);

        // Two coincident customers with total demand within capacity:
        // one tour is optimal.
        let inst = Instance::new(
            "пair",
            vec![(0.0, 0.0)],
            vec![(0.7, 0.0), (0.7, 0.0)],
            vec![4, 4],
            10,
        )
        .unwrap();
        let sol = brute_force(&inst).unwrap();
        assert_eq!(sol.tours.iter().filter(|t| !t.visits.is_empty()).count(), 1);
        assert!((solution_cost(&inst, &sol) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn oracle_rejects_large() {
        let inst = generate_indexed(&GenConfig::uniform(9, 2, 1), 0).unwrap();
        assert!(brute_force(&inst).is_err());
        let inst = generate_indexed(&GenConfig::uniform(4, 4, 1), 0).unwrap();
        assert!(brute_force(&inst).is_err());
    }

    #[test]
    fn oracle_lower_bounds_heuristics() {
        for idx in 0..10 {
            let mut cfg = GenConfig::uniform(6, 2, 42);
            cfg.capacity = 20;
            let inst = generate_indexed(&cfg, idx).unwrap();
            let oracle = brute_force(&inst).unwrap();
            let oc = solution_cost(&inst, &oracle);
            assert!(validate(&inst, &oracle).is_feasible());

            let cs = cluster_savings(&inst, &TourRouter::ExactDp).unwrap();
            let rp = random_partition(&inst, idx, &TourRouter::ExactDp).unwrap();
            assert!(oc <= solution_cost(&inst, &cs) + 1e-9);
            assert!(oc <= solution_cost(&inst, &rp) + 1e-9);
        }
    }

    #[test]
    fn clusters_partition_customers() {
        let inst = generate_indexed(&GenConfig::uniform(30, 3, 7), 0).unwrap();
        let clusters = nearest_depot_clusters(&inst);
        let mut seen = vec![false; inst.num_customers()];
        for cluster in &clusters {
            for &c in cluster {
                assert!(!seen[c]);
                seen[c] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        // idempotent
        assert_eq!(clusters, nearest_depot_clusters(&inst));

        // equidistant customer goes to depot 0
        let tie = Instance::new(
            "tie",
            vec![(0.0, 0.0), (1.0, 0.0)],
            vec![(0.5, 0.3)],
            vec![1],
            10,
        )
        .unwrap();
        assert_eq!(nearest_depot_clusters(&tie), vec![vec![0], vec![]]);
    }

    #[test]
    fn cluster_savings_feasible_and_bounded() {
        for idx in 0..15 {
            let inst = generate_indexed(&GenConfig::uniform(40, 3, 11), idx).unwrap();
            let sol = cluster_savings(&inst, &TourRouter::NnTwoOpt).unwrap();
            let rep = validate(&inst, &sol);
            assert!(rep.is_feasible(), "{:?}", rep.violations);
            assert!(sol.opened_tours() <= max_tours(&inst));
        }
        // single customer cluster: one out-and-back tour
        let inst = Instance::new(
            "single",
            vec![(0.0, 0.0)],
            vec![(0.0, 2.0)],
            vec![1],
            10,
        )
        .unwrap();
        let sol = cluster_savings(&inst, &TourRouter::ExactDp).unwrap();
        assert!((solution_cost(&inst, &sol) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn random_partition_deterministic_and_feasible() {
        for idx in 0..15 {
            let inst = generate_indexed(&GenConfig::uniform(35, 2, 19), idx).unwrap();
            let a = random_partition(&inst, 5, &TourRouter::NnTwoOpt).unwrap();
            let b = random_partition(&inst, 5, &TourRouter::NnTwoOpt).unwrap();
            assert_eq!(a, b);
            let rep = validate(&inst, &a);
            assert!(rep.is_feasible(), "{:?}", rep.violations);
            assert!(a.opened_tours() <= max_tours(&inst));
        }
    }
}
