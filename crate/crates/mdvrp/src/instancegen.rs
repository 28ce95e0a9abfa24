//! Reproducible random instance generation.
//!
//! Coordinates are drawn in the unit square, either uniformly or from
//! skewed beta/gamma distributions that are min-max normalized per
//! instance. Demands are uniform integers in 1..=10. Every instance is
//! a pure function of (config, index): per-instance RNG streams derive
//! from the master seed and the instance index, so parallel generation
//! is order-independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution as _, Gamma};

use crate::problem::{Instance, Point};
use crate::{Error, Result};

pub const DEMAND_MIN: u32 = 1;
pub const DEMAND_MAX: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordDistribution {
    Uniform,
    Beta,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepotLayout {
    Random,
    /// Depots pinned to the top edge of the unit square (2-4 depots).
    FixedTopEdge,
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub n_customers: usize,
    pub n_depots: usize,
    /// 0 selects the size-based default capacity.
    pub capacity: u32,
    pub distribution: CoordDistribution,
    pub depot_layout: DepotLayout,
    pub seed: u64,
}

impl GenConfig {
    pub fn uniform(n_customers: usize, n_depots: usize, seed: u64) -> Self {
        GenConfig {
            n_customers,
            n_depots,
            capacity: 0,
            distribution: CoordDistribution::Uniform,
            depot_layout: DepotLayout::Random,
            seed,
        }
    }

    fn check(&self) -> Result<()> {
        if self.n_customers == 0 {
            return Err(Error::Config("n_customers must be >= 1".into()));
        }
        if self.n_depots == 0 || self.n_depots > 9 {
            return Err(Error::Config("n_depots must be in 1..=9".into()));
        }
        if self.depot_layout == DepotLayout::FixedTopEdge
            && !(2..=4).contains(&self.n_depots)
        {
            return Err(Error::Config("fixed top-edge layout needs 2..=4 depots".into()));
        }
        Ok(())
    }
}

/// Default vehicle capacity by instance size: 50 up to 100 customers,
/// 150 up to 400, 175 up to 700, 200 beyond.
pub fn default_capacity(n_customers: usize) -> u32 {
    match n_customers {
        0..=100 => 50,
        101..=400 => 150,
        401..=700 => 175,
        _ => 200,
    }
}

/// The fixed top-edge depot layouts used for skewed-distribution studies.
pub fn fixed_depots(n_depots: usize) -> Result<Vec<Point>> {
    match n_depots {
        2 => Ok(vec![(0.0, 1.0), (1.0, 1.0)]),
        3 => Ok(vec![(0.0, 1.0), (0.5, 1.0), (1.0, 1.0)]),
        4 => Ok(vec![(0.0, 1.0), (0.33, 1.0), (0.66, 1.0), (1.0, 1.0)]),
        n => Err(Error::Config(format!("no fixed layout for {n} depots"))),
    }
}

/// Generates the instance at stream index 0. See [`generate_indexed`].
pub fn generate(cfg: &GenConfig) -> Result<Instance> {
    generate_indexed(cfg, 0)
}

/// Generates the `index`-th instance of the stream family defined by
/// `cfg.seed`. Deterministic in (cfg, index).
pub fn generate_indexed(cfg: &GenConfig, index: u64) -> Result<Instance> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);

    let depots = match cfg.depot_layout {
        DepotLayout::FixedTopEdge => fixed_depots(cfg.n_depots)?,
        DepotLayout::Random => (0..cfg.n_depots)
            .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
            .collect(),
    };

    let customers = match cfg.distribution {
        CoordDistribution::Uniform => (0..cfg.n_customers)
            .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
            .collect(),
        CoordDistribution::Beta => {
            let beta = Beta::new(3.0, 1.0).expect("valid beta parameters");
            skewed_coords(cfg.n_customers, &mut rng, |r| beta.sample(r))
        }
        CoordDistribution::Gamma => {
            let gamma = Gamma::new(7.0, 1.0).expect("valid gamma parameters");
            skewed_coords(cfg.n_customers, &mut rng, |r| gamma.sample(r))
        }
    };

    let demands: Vec<u32> =
        (0..cfg.n_customers).map(|_| rng.random_range(DEMAND_MIN..=DEMAND_MAX)).collect();

    let capacity = if cfg.capacity == 0 { default_capacity(cfg.n_customers) } else { cfg.capacity };

    let dist_tag = match cfg.distribution {
        CoordDistribution::Uniform => "u",
        CoordDistribution::Beta => "b",
        CoordDistribution::Gamma => "g",
    };
    let id = format!(
        "n{}d{}{}s{}i{}",
        cfg.n_customers, cfg.n_depots, dist_tag, cfg.seed, index
    );
    Instance::new(id, depots, customers, demands, capacity)
}

/// Draws each axis independently, then min-max normalizes per axis into
/// [0, 1]. A degenerate axis (all samples equal) collapses to 0.5.
fn skewed_coords<R: Rng>(
    n: usize,
    rng: &mut R,
    mut draw: impl FnMut(&mut R) -> f64,
) -> Vec<Point> {
    let xs: Vec<f64> = (0..n).map(|_| draw(rng)).collect();
    let ys: Vec<f64> = (0..n).map(|_| draw(rng)).collect();
    let norm = |v: &[f64]| -> Vec<f64> {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-12 {
            return vec![0.5; v.len()];
        }
        v.iter().map(|&x| (x - lo) / (hi - lo)).collect()
    };
    norm(&xs).into_iter().zip(norm(&ys)).collect()
}
