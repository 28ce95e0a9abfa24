//! Instance and solution data model, distance arithmetic, feasibility
//! validation, and the tour-count bound.

use crate::{Error, Result};

/// A point in the plane. Generated instances live in the unit square,
/// parsed benchmark files may use any finite coordinates.
pub type Point = (f64, f64);

/// Euclidean distance between two points.
pub fn euclid(a: Point, b: Point) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

/// A multi-depot capacitated routing instance.
///
/// Demands and the vehicle capacity are integer units so that capacity
/// bookkeeping is exact; geometry is in 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    depots: Vec<Point>,
    customers: Vec<Point>,
    demands: Vec<u32>,
    capacity: u32,
}

impl Instance {
    /// Builds an instance, rejecting data that can never be served:
    /// empty node sets, non-finite coordinates, zero demands, or a
    /// demand above the vehicle capacity.
    pub fn new(
        id: impl Into<String>,
        depots: Vec<Point>,
        customers: Vec<Point>,
        demands: Vec<u32>,
        capacity: u32,
    ) -> Result<Self> {
        if depots.is_empty() {
            return Err(Error::InvalidInstance("at least one depot required".into()));
        }
        if customers.is_empty() {
            return Err(Error::InvalidInstance("at least one customer required".into()));
        }
        if customers.len() != demands.len() {
            return Err(Error::InvalidInstance(format!(
                "{} customers but {} demands",
                customers.len(),
                demands.len()
            )));
        }
        if capacity == 0 {
            return Err(Error::InvalidInstance("capacity must be positive".into()));
        }
        for &(x, y) in depots.iter().chain(customers.iter()) {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::InvalidInstance("non-finite coordinate".into()));
            }
        }
        for (i, &d) in demands.iter().enumerate() {
            if d == 0 {
                return Err(Error::InvalidInstance(format!("customer {i} has zero demand")));
            }
            if d > capacity {
                return Err(Error::InvalidInstance(format!(
                    "customer {i} demand {d} exceeds capacity {capacity}"
                )));
            }
        }
        Ok(Instance { id: id.into(), depots, customers, demands, capacity })
    }

    pub fn depots(&self) -> &[Point] {
        &self.depots
    }

    pub fn customers(&self) -> &[Point] {
        &self.customers
    }

    pub fn demands(&self) -> &[u32] {
        &self.demands
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn num_depots(&self) -> usize {
        self.depots.len()
    }

    pub fn num_customers(&self) -> usize {
        self.customers.len()
    }

    /// Total number of nodes (depots + customers).
    pub fn num_nodes(&self) -> usize {
        self.depots.len() + self.customers.len()
    }

    pub fn total_demand(&self) -> u64 {
        self.demands.iter().map(|&d| u64::from(d)).sum()
    }

    /// Coordinates of a node by global index: depots first, then customers.
    pub fn node(&self, idx: usize) -> Point {
        if idx < self.depots.len() {
            self.depots[idx]
        } else {
            self.customers[idx - self.depots.len()]
        }
    }

    /// Global node index of a customer.
    pub fn customer_node(&self, customer: usize) -> usize {
        self.depots.len() + customer
    }

    /// Distance between two nodes by global index.
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        euclid(self.node(i), self.node(j))
    }
}

/// One vehicle tour: a depot anchor plus the ordered customers it serves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tour {
    pub depot: usize,
    pub visits: Vec<usize>,
}

impl Tour {
    pub fn new(depot: usize, visits: Vec<usize>) -> Self {
        Tour { depot, visits }
    }

    pub fn demand(&self, inst: &Instance) -> u64 {
        self.visits.iter().map(|&c| u64::from(inst.demands()[c])).sum()
    }
}

/// A full solution. Empty tours are allowed and cost nothing; the
/// feasibility bound leaves room for unopened standby tours.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Solution {
    pub tours: Vec<Tour>,
}

impl Solution {
    pub fn new(tours: Vec<Tour>) -> Self {
        Solution { tours }
    }

    /// Number of tours that actually serve a customer.
    pub fn opened_tours(&self) -> usize {
        self.tours.iter().filter(|t| !t.visits.is_empty()).count()
    }
}

/// Cycle length of one tour: depot, visits in order, back to the depot.
/// An empty tour has length zero.
pub fn tour_length(inst: &Instance, tour: &Tour) -> f64 {
    if tour.visits.is_empty() {
        return 0.0;
    }
    let depot = inst.depots()[tour.depot];
    let mut len = 0.0;
    let mut prev = depot;
    for &c in &tour.visits {
        let p = inst.customers()[c];
        len += euclid(prev, p);
        prev = p;
    }
    len + euclid(prev, depot)
}

/// Total travel distance of a solution.
pub fn solution_cost(inst: &Instance, sol: &Solution) -> f64 {
    sol.tours.iter().map(|t| tour_length(inst, t)).sum()
}

/// Constraint families a solution can violate. Subtour-freeness is
/// structural here (tours are depot-anchored ordered lists), so only
/// coverage, capacity, duplication, and anchoring can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintTag {
    Coverage,
    Capacity,
    DepotAnchor,
    Duplicate,
}

impl std::fmt::Display for ConstraintTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ConstraintTag::Coverage => "COVERAGE",
            ConstraintTag::Capacity => "CAPACITY",
            ConstraintTag::DepotAnchor => "DEPOT_ANCHOR",
            ConstraintTag::Duplicate => "DUPLICATE",
        };
        f.write_str(s)
    }
}

/// Outcome of validating a solution. Infeasibility is data, not an error.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub violations: Vec<(ConstraintTag, String)>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a solution against the instance: every customer served exactly
/// once, no tour over capacity, every tour anchored at a real depot.
pub fn validate(inst: &Instance, sol: &Solution) -> FeasibilityReport {
    let mut violations = Vec::new();
    let mut seen = vec![false; inst.num_customers()];

    for (ti, tour) in sol.tours.iter().enumerate() {
        if tour.depot >= inst.num_depots() {
            violations.push((
                ConstraintTag::DepotAnchor,
                format!("tour {ti} anchored at unknown depot {}", tour.depot),
            ));
        }
        let mut load = 0u64;
        for &c in &tour.visits {
            if c >= inst.num_customers() {
                violations.push((
                    ConstraintTag::Coverage,
                    format!("tour {ti} visits unknown customer {c}"),
                ));
                continue;
            }
            if seen[c] {
                violations.push((
                    ConstraintTag::Duplicate,
                    format!("customer {c} visited more than once (again in tour {ti})"),
                ));
            }
            seen[c] = true;
            load += u64::from(inst.demands()[c]);
        }
        if load > u64::from(inst.capacity()) {
            violations.push((
                ConstraintTag::Capacity,
                format!("tour {ti} load {load} exceeds capacity {}", inst.capacity()),
            ));
        }
    }
    for (c, &visited) in seen.iter().enumerate() {
        if !visited {
            violations.push((ConstraintTag::Coverage, format!("customer {c} not visited")));
        }
    }
    FeasibilityReport { violations }
}

/// Upper bound on tours worth opening: ceil(total demand / capacity)
/// plus one slack tour per depot.
pub fn max_tours(inst: &Instance) -> usize {
    let total = inst.total_demand();
    let cap = u64::from(inst.capacity());
    let needed = total.div_ceil(cap) as usize;
    needed + inst.num_depots()
}
