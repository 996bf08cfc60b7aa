//! Least-squares trilateration: Gauss-Newton on the range residuals. Used to
//! initialize the filter and as an independent cross-check in tests.

use crate::model::{AnchorConfiguration, DeviceId, Point3, RangeMeasurement, MIN_ANCHORS_3D};
use nalgebra::{Cholesky, Matrix3, Vector3};
use thiserror::Error;

const MAX_ITERATIONS: usize = 50;
const STEP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TrilaterationError {
    #[error("need at least {need} distinct anchors, got {got}")]
    TooFewAnchors { got: usize, need: usize },
    #[error("measurement references unknown anchor {0}")]
    UnknownAnchor(DeviceId),
    #[error("ill-conditioned anchor geometry (anchors coplanar or degenerate)")]
    IllConditioned,
    #[error("no convergence after {MAX_ITERATIONS} iterations, rms residual {residual} m")]
    NoConvergence { residual: f64 },
}

/// Solves for the point minimizing the squared range residuals
/// `sum_i (|x - p_i| - d_i)^2`, starting from the anchor centroid.
pub fn trilaterate_points(ranges: &[(Point3, f64)]) -> Result<Point3, TrilaterationError> {
    if ranges.len() < MIN_ANCHORS_3D {
        return Err(TrilaterationError::TooFewAnchors {
            got: ranges.len(),
            need: MIN_ANCHORS_3D,
        });
    }
    let mut x: Vector3<f64> = ranges
        .iter()
        .fold(Vector3::zeros(), |acc, (p, _)| acc + p.as_vector())
        / ranges.len() as f64;

    for _ in 0..MAX_ITERATIONS {
        // Normal equations J^T J dx = -J^T r built in one pass.
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (p, d) in ranges {
            let diff = x - p.as_vector();
            let norm = diff.norm().max(1e-12);
            let dir = diff / norm;
            let residual = norm - d;
            jtj += dir * dir.transpose();
            jtr += dir * residual;
        }
        let chol = Cholesky::new(jtj).ok_or(TrilaterationError::IllConditioned)?;
        let step = chol.solve(&(-jtr));
        x += step;
        if step.norm() < STEP_TOLERANCE {
            return Ok(Point3::from_vector(&x));
        }
    }
    let rms = (ranges
        .iter()
        .map(|(p, d)| {
            let r = (x - p.as_vector()).norm() - d;
            r * r
        })
        .sum::<f64>()
        / ranges.len() as f64)
        .sqrt();
    Err(TrilaterationError::NoConvergence { residual: rms })
}

/// Trilateration from estimator measurements, resolving anchor positions from
/// the deployment configuration. Duplicate anchors collapse to their latest
/// measurement.
pub fn trilaterate_ls(
    measurements: &[RangeMeasurement],
    anchors: &AnchorConfiguration,
) -> Result<Point3, TrilaterationError> {
    let mut by_anchor: std::collections::BTreeMap<DeviceId, f64> = Default::default();
    for m in measurements {
        by_anchor.insert(m.anchor, m.distance);
    }
    let ranges: Vec<(Point3, f64)> = by_anchor
        .iter()
        .map(|(&id, &d)| {
            anchors
                .position_of(id)
                .map(|p| (p, d))
                .ok_or(TrilaterationError::UnknownAnchor(id))
        })
        .collect::<Result<_, _>>()?;
    trilaterate_points(&ranges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::euclidean_distance;

    fn spread_anchors() -> Vec<Point3> {
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(9.0, 0.0, 2.0),
            Point3::new(9.0, 9.0, 0.5),
            Point3::new(0.0, 9.0, 2.0),
            Point3::new(4.5, 4.5, 3.0),
        ]
    }

    #[test]
    fn exact_ranges_recover_the_point() {
        let truth = Point3::new(3.0, 4.0, 1.2);
        let ranges: Vec<(Point3, f64)> = spread_anchors()
            .iter()
            .take(4)
            .map(|p| (*p, euclidean_distance(*p, truth)))
            .collect();
        let solved = trilaterate_points(&ranges).unwrap();
        assert!(euclidean_distance(solved, truth) < 1e-6);
    }

    #[test]
    fn too_few_anchors_rejected() {
        let ranges = vec![
            (Point3::new(0.0, 0.0, 0.0), 1.0),
            (Point3::new(1.0, 0.0, 0.0), 1.0),
            (Point3::new(0.0, 1.0, 0.0), 1.0),
        ];
        assert_eq!(
            trilaterate_points(&ranges).unwrap_err(),
            TrilaterationError::TooFewAnchors { got: 3, need: 4 }
        );
    }

    #[test]
    fn coplanar_anchors_are_ill_conditioned() {
        let truth = Point3::new(3.0, 4.0, 0.0);
        let flat: Vec<(Point3, f64)> = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(9.0, 0.0, 0.0),
            Point3::new(9.0, 9.0, 0.0),
            Point3::new(0.0, 9.0, 0.0),
        ]
        .iter()
        .map(|p| (*p, euclidean_distance(*p, truth)))
        .collect();
        assert_eq!(
            trilaterate_points(&flat).unwrap_err(),
            TrilaterationError::IllConditioned
        );
    }

    #[test]
    fn common_bias_stays_near_truth() {
        // +0.1 m on every range; with well-spread anchors the minimizer
        // stays within 0.2 m of the true point.
        let truth = Point3::new(3.5, 2.5, 1.0);
        let ranges: Vec<(Point3, f64)> = spread_anchors()
            .iter()
            .map(|p| (*p, euclidean_distance(*p, truth) + 0.1))
            .collect();
        let solved = trilaterate_points(&ranges).unwrap();
        assert!(
            euclidean_distance(solved, truth) < 0.2,
            "bias pulled the solution {} m away",
            euclidean_distance(solved, truth)
        );
    }
}
