//! The decision process the partitioner acts in: tour lifecycle
//! (standby, initiated, inactive), feasibility masks, the wastable
//! capacity threshold that gates tour deactivation, and reward
//! assembly.
//!
//! A tour may close only when its used capacity exceeds the current
//! threshold AND the capacity it would strand does not exceed the
//! remaining wastable budget. The second condition keeps the budget
//! invariant eta >= 0, so mask-respecting policies cannot close tours
//! into a capacity-infeasible endgame.

use crate::problem::{Instance, Solution, Tour};
use crate::router::TourRouter;
use crate::{max_tours, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TourStatus {
    /// No customers yet; full capacity; not counted against the budget.
    Standby,
    /// Serving customers and open for more.
    Initiated,
    /// Closed; accepts nothing.
    Inactive,
}

/// One vehicle tour as the environment tracks it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TourState {
    pub depot: usize,
    /// Global node index of the last added node (the depot initially).
    pub last_node: usize,
    pub remaining: u32,
    pub status: TourStatus,
    pub visits: Vec<usize>,
}

impl TourState {
    fn fresh(depot: usize, capacity: u32) -> Self {
        TourState {
            depot,
            last_node: depot,
            remaining: capacity,
            status: TourStatus::Standby,
            visits: Vec::new(),
        }
    }

    pub fn used(&self, capacity: u32) -> u32 {
        capacity - self.remaining
    }
}

/// What a policy can do: extend an active tour by a customer, or send
/// it back to its depot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionNode {
    Customer(usize),
    Depot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action {
    /// Index into the current active tour list.
    pub tour: usize,
    pub node: ActionNode,
}

/// Decode-time state: visited set, active tours (at most one per
/// depot), closed tours, and the step counter.
#[derive(Debug, Clone)]
pub struct EnvState<'a> {
    inst: &'a Instance,
    l_max: usize,
    visited: Vec<bool>,
    num_visited: usize,
    active: Vec<TourState>,
    inactive: Vec<TourState>,
    t: usize,
    forced_deactivations: usize,
}

impl<'a> EnvState<'a> {
    /// Initial state: one standby tour per depot, nothing visited.
    pub fn new(inst: &'a Instance) -> Self {
        Self::with_max_tours(inst, max_tours(inst))
    }

    /// Initial state with an explicit tour budget (unit tests exercise
    /// threshold arithmetic at budgets the bound formula never yields).
    pub fn with_max_tours(inst: &'a Instance, l_max: usize) -> Self {
        let active = (0..inst.num_depots())
            .map(|d| TourState::fresh(d, inst.capacity()))
            .collect();
        EnvState {
            inst,
            l_max,
            visited: vec![false; inst.num_customers()],
            num_visited: 0,
            active,
            inactive: Vec::new(),
            t: 0,
            forced_deactivations: 0,
        }
    }

    pub fn instance(&self) -> &Instance {
        self.inst
    }

    pub fn max_tours(&self) -> usize {
        self.l_max
    }

    pub fn step_count(&self) -> usize {
        self.t
    }

    pub fn active(&self) -> &[TourState] {
        &self.active
    }

    pub fn inactive(&self) -> &[TourState] {
        &self.inactive
    }

    pub fn visited(&self) -> &[bool] {
        &self.visited
    }

    pub fn num_visited(&self) -> usize {
        self.num_visited
    }

    pub fn forced_deactivations(&self) -> usize {
        self.forced_deactivations
    }

    fn initiated_count(&self) -> usize {
        self.active.iter().filter(|t| t.status == TourStatus::Initiated).count()
    }

    /// Total wastable capacity eta and the deactivation threshold. When
    /// closed tours have consumed the whole budget the divisor
    /// vanishes; the threshold degrades to 0 and the standby mask is
    /// what forbids opening further tours.
    pub fn wastable_and_threshold(&self) -> (i64, f64) {
        let cap = i64::from(self.inst.capacity());
        let eta = self.l_max as i64 * cap
            - self.inst.total_demand() as i64
            - self.inactive.iter().map(|t| i64::from(t.remaining)).sum::<i64>();
        let open_slots = self.l_max as i64 - self.inactive.len() as i64;
        if open_slots <= 0 {
            return (eta, 0.0);
        }
        (eta, eta as f64 / open_slots as f64)
    }

    /// Whether a standby tour may still turn into an initiated one.
    pub fn standby_allowed(&self) -> bool {
        self.initiated_count() + self.inactive.len() < self.l_max
    }

    /// Whether `tour` may pick its depot and close: an initiated tour
    /// whose used capacity exceeds the threshold and whose stranded
    /// capacity fits the wastable budget.
    pub fn deactivation_allowed(&self, tour: &TourState) -> bool {
        if tour.status != TourStatus::Initiated {
            return false;
        }
        let (eta, threshold) = self.wastable_and_threshold();
        let used = f64::from(tour.used(self.inst.capacity()));
        used > threshold && i64::from(tour.remaining) <= eta
    }

    /// Feasibility mask for one active tour over {depot} + customers:
    /// slot 0 is the tour's depot, slot 1+c is customer c.
    pub fn feasible_nodes(&self, tour_idx: usize) -> Vec<bool> {
        let tour = &self.active[tour_idx];
        let n = self.inst.num_customers();
        let mut mask = vec![false; n + 1];
        if tour.status == TourStatus::Standby && !self.standby_allowed() {
            return mask;
        }
        mask[0] = self.deactivation_allowed(tour);
        for c in 0..n {
            mask[c + 1] = !self.visited[c] && self.inst.demands()[c] <= tour.remaining;
        }
        mask
    }

    /// True when some active tour still has a feasible action.
    pub fn has_feasible_action(&self) -> bool {
        (0..self.active.len()).any(|i| self.feasible_nodes(i).iter().any(|&b| b))
    }

    pub fn is_terminal(&self) -> bool {
        self.num_visited == self.inst.num_customers()
    }

    /// Applies an action. Customer actions must pass the feasibility
    /// mask; depot actions must pass the deactivation rule.
    pub fn step(&mut self, action: Action) -> Result<()> {
        if action.tour >= self.active.len() {
            return Err(Error::InfeasibleAction(format!(
                "tour index {} out of range",
                action.tour
            )));
        }
        match action.node {
            ActionNode::Customer(c) => {
                let mask = self.feasible_nodes(action.tour);
                if c >= self.inst.num_customers() || !mask[c + 1] {
                    return Err(Error::InfeasibleAction(format!(
                        "customer {c} not assignable to tour {}",
                        action.tour
                    )));
                }
                let tour = &mut self.active[action.tour];
                tour.visits.push(c);
                tour.remaining -= self.inst.demands()[c];
                tour.last_node = self.inst.customer_node(c);
                tour.status = TourStatus::Initiated;
                self.visited[c] = true;
                self.num_visited += 1;
            }
            ActionNode::Depot => {
                if !self.deactivation_allowed(&self.active[action.tour]) {
                    return Err(Error::InfeasibleAction(format!(
                        "tour {} may not deactivate",
                        action.tour
                    )));
                }
                self.deactivate(action.tour);
            }
        }
        self.t += 1;
        Ok(())
    }

    fn deactivate(&mut self, tour_idx: usize) {
        let mut tour = self.active.remove(tour_idx);
        let depot = tour.depot;
        tour.status = TourStatus::Inactive;
        self.inactive.push(tour);
        // The closed tour frees its depot slot only while the overall
        // budget still has room for another opened tour.
        if self.initiated_count() + self.inactive.len() < self.l_max {
            self.active.insert(tour_idx, TourState::fresh(depot, self.inst.capacity()));
        }
    }

    /// Last-resort recovery for the state the masks are believed to
    /// make unreachable: no feasible action but customers remain. The
    /// fullest initiated tour is closed regardless of the threshold so
    /// decoding can continue; callers should treat a nonzero
    /// `forced_deactivations` count as a diagnostic. Fails when not
    /// even that is possible.
    pub fn forced_deactivation(&mut self) -> Result<usize> {
        debug_assert!(!self.is_terminal() && !self.has_feasible_action());
        let idx = self
            .active
            .iter()
            .enumerate()
            .filter(|(_, t)| t.status == TourStatus::Initiated)
            .min_by_key(|(i, t)| (t.remaining, *i))
            .map(|(i, _)| i)
            .ok_or_else(|| {
                Error::Deadlock(format!(
                    "instance {}: {} of {} customers served, no initiated tour to close",
                    self.inst.id,
                    self.num_visited,
                    self.inst.num_customers()
                ))
            })?;
        self.forced_deactivations += 1;
        self.deactivate(idx);
        self.t += 1;
        Ok(idx)
    }

    /// The tours built so far: closed ones plus open initiated ones.
    pub fn partition(&self) -> Vec<Tour> {
        let mut tours: Vec<Tour> = self
            .inactive
            .iter()
            .map(|t| Tour::new(t.depot, t.visits.clone()))
            .collect();
        tours.extend(
            self.active
                .iter()
                .filter(|t| !t.visits.is_empty())
                .map(|t| Tour::new(t.depot, t.visits.clone())),
        );
        tours
    }

    pub fn into_solution(&self) -> Solution {
        Solution::new(self.partition())
    }
}

/// Negative total routed length of a partition: each tour's customers
/// are ordered by the supplied router and the cycle lengths summed.
pub fn reward(inst: &Instance, partition: &[Tour], router: &TourRouter) -> Result<f64> {
    let mut total = 0.0;
    for tour in partition {
        if tour.visits.is_empty() {
            continue;
        }
        let mut points = Vec::with_capacity(tour.visits.len() + 1);
        points.push(inst.depots()[tour.depot]);
        points.extend(tour.visits.iter().map(|&c| inst.customers()[c]));
        let (_, len) = router.route(&points)?;
        total += len;
    }
    Ok(-total)
}
