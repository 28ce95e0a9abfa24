//! Node feature construction: polar coordinates relative to the first
//! depot plus capacity-scaled demand. Polar features make the encoder
//! input invariant to translating the whole instance.

use crate::nn::Tensor;
use crate::problem::{euclid, Instance, Point};

pub const FEATURE_COLS: usize = 3; // radius, angle, scaled demand

/// Per-node features, depots first. Columns are (r, theta, demand/C)
/// with theta in [0, 2*pi) and theta = 0 whenever r = 0; depot rows
/// carry zero demand.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Tensor,
}

impl FeatureMatrix {
    pub fn num_nodes(&self) -> usize {
        self.values.rows()
    }
}

fn polar_row(origin: Point, p: Point) -> (f64, f64) {
    let r = euclid(origin, p);
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let mut theta = (p.1 - origin.1).atan2(p.0 - origin.0);
    if theta < 0.0 {
        theta += 2.0 * std::f64::consts::PI;
    }
    // atan2 can return exactly 2*pi - 0 after the wrap for tiny negative
    // angles; keep the half-open interval.
    if theta >= 2.0 * std::f64::consts::PI {
        theta = 0.0;
    }
    (r, theta)
}

/// Features for a full instance, relative to depot 0.
pub fn to_polar(inst: &Instance) -> FeatureMatrix {
    let origin = inst.depots()[0];
    let n = inst.num_nodes();
    let mut values = Tensor::zeros(n, FEATURE_COLS);
    for (i, &p) in inst.depots().iter().enumerate() {
        let (r, theta) = polar_row(origin, p);
        values.set(i, 0, r);
        values.set(i, 1, theta);
    }
    let cap = f64::from(inst.capacity());
    for (c, &p) in inst.customers().iter().enumerate() {
        let row = inst.num_depots() + c;
        let (r, theta) = polar_row(origin, p);
        values.set(row, 0, r);
        values.set(row, 1, theta);
        values.set(row, 2, f64::from(inst.demands()[c]) / cap);
    }
    FeatureMatrix { values }
}

/// Features for a bare point list (tour routing), relative to point 0,
/// with a zero demand column.
pub fn polar_points(points: &[Point]) -> FeatureMatrix {
    assert!(!points.is_empty());
    let origin = points[0];
    let mut values = Tensor::zeros(points.len(), FEATURE_COLS);
    for (i, &p) in points.iter().enumerate() {
        let (r, theta) = polar_row(origin, p);
        values.set(i, 0, r);
        values.set(i, 1, theta);
    }
    FeatureMatrix { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Instance;
    use std::f64::consts::PI;

    fn inst(depots: Vec<Point>, customers: Vec<Point>) -> Instance {
        let demands = vec![5; customers.len()];
        Instance::new("f", depots, customers, demands, 10).unwrap()
    }

    #[test]
    fn axis_aligned_angles() {
        let i = inst(vec![(0.25, 0.25)], vec![(1.25, 0.25), (0.25, 1.25)]);
        let f = to_polar(&i);
        // depot row: the convention fixes (0, 0, 0)
        assert_eq!(f.values.row(0), &[0.0, 0.0, 0.0]);
        // east neighbor at distance 1
        assert!((f.values.at(1, 0) - 1.0).abs() < 1e-12);
        assert!(f.values.at(1, 1).abs() < 1e-12);
        // north neighbor at pi/2
        assert!((f.values.at(2, 1) - PI / 2.0).abs() < 1e-12);
        // demand scaling
        assert!((f.values.at(1, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn translation_invariance() {
        let base = inst(vec![(0.1, 0.2), (0.9, 0.8)], vec![(0.4, 0.4), (0.6, 0.7)]);
        let shifted = inst(
            vec![(0.1 + 3.0, 0.2 - 2.0), (0.9 + 3.0, 0.8 - 2.0)],
            vec![(0.4 + 3.0, 0.4 - 2.0), (0.6 + 3.0, 0.7 - 2.0)],
        );
        let a = to_polar(&base);
        let b = to_polar(&shifted);
        for (x, y) in a.values.data().iter().zip(b.values.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_shifts_angles_only() {
        let alpha = 0.7f64;
        let origin = (0.3, 0.3);
        let pts = [(0.8, 0.5), (0.1, 0.9), (0.45, 0.2)];
        let rot = |p: Point| -> Point {
            let (dx, dy) = (p.0 - origin.0, p.1 - origin.1);
            (
                origin.0 + dx * alpha.cos() - dy * alpha.sin(),
                origin.1 + dx * alpha.sin() + dy * alpha.cos(),
            )
        };
        let a = to_polar(&inst(vec![origin], pts.to_vec()));
        let b = to_polar(&inst(vec![origin], pts.iter().map(|&p| rot(p)).collect()));
        for row in 1..a.values.rows() {
            let (r0, t0) = (a.values.at(row, 0), a.values.at(row, 1));
            let (r1, t1) = (b.values.at(row, 0), b.values.at(row, 1));
            assert!((r0 - r1).abs() < 1e-9, "radius changed under rotation");
            let dt = (t1 - t0).rem_euclid(2.0 * PI);
            assert!(
                (dt - alpha).abs() < 1e-9 || (dt - alpha).abs() > 2.0 * PI - 1e-9,
                "angle shift {dt} != {alpha}"
            );
        }
    }

    #[test]
    fn point_features_match_instance_features() {
        let pts = vec![(0.2, 0.3), (0.7, 0.1), (0.5, 0.9)];
        let f = polar_points(&pts);
        assert_eq!(f.values.rows(), 3);
        assert_eq!(f.values.row(0), &[0.0, 0.0, 0.0]);
        for r in 0..3 {
            assert_eq!(f.values.at(r, 2), 0.0);
        }
    }
}
