//! Tag motion paths: constant-speed piecewise-linear trajectories and the
//! generators used by the bundled scenarios.

use crate::model::Point3;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory needs at least two waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("trajectory has zero total length")]
    ZeroLength,
    #[error("speed must be positive, got {0}")]
    NonPositiveSpeed(f64),
    #[error("square side must be positive, got {0}")]
    NonPositiveSide(f64),
    #[error("waypoint has a non-finite coordinate")]
    NonFiniteWaypoint,
}

/// A continuous path sampled by simulation time. Constant speed along the
/// waypoint polyline; before 0 and after `duration_s` the end positions hold.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<Point3>,
    /// Cumulative arc length at each waypoint, meters.
    cumulative: Vec<f64>,
    speed: f64,
    duration_s: f64,
}

impl Trajectory {
    /// A tag that never moves. Duration zero: the position holds forever.
    pub fn static_point(p: Point3) -> Self {
        Self {
            waypoints: vec![p],
            cumulative: vec![0.0],
            speed: 0.0,
            duration_s: 0.0,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn waypoints(&self) -> &[Point3] {
        &self.waypoints
    }

    /// Position at simulation time `t`, clamped to the path's time span.
    pub fn position_at(&self, t: f64) -> Point3 {
        if self.waypoints.len() == 1 || t <= 0.0 {
            return self.waypoints[0];
        }
        let total = *self.cumulative.last().unwrap();
        let s = (t.min(self.duration_s) * self.speed).min(total);
        // Find the segment containing arc length s.
        let idx = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        if idx + 1 >= self.waypoints.len() {
            return *self.waypoints.last().unwrap();
        }
        let seg_len = self.cumulative[idx + 1] - self.cumulative[idx];
        let frac = if seg_len > 0.0 {
            (s - self.cumulative[idx]) / seg_len
        } else {
            0.0
        };
        let a = self.waypoints[idx].as_vector();
        let b = self.waypoints[idx + 1].as_vector();
        Point3::from_vector(&(a + (b - a) * frac))
    }

    /// The same path shifted by a constant offset.
    pub fn translated(&self, dx: f64, dy: f64, dz: f64) -> Self {
        Self {
            waypoints: self
                .waypoints
                .iter()
                .map(|p| p.translated(dx, dy, dz))
                .collect(),
            cumulative: self.cumulative.clone(),
            speed: self.speed,
            duration_s: self.duration_s,
        }
    }
}

/// Constant-speed linear interpolation through `waypoints`.
pub fn gen_polyline(waypoints: &[Point3], speed: f64) -> Result<Trajectory, TrajectoryError> {
    if waypoints.len() < 2 {
        return Err(TrajectoryError::TooFewWaypoints(waypoints.len()));
    }
    if !(speed > 0.0) {
        return Err(TrajectoryError::NonPositiveSpeed(speed));
    }
    if waypoints.iter().any(|p| !p.is_finite()) {
        return Err(TrajectoryError::NonFiniteWaypoint);
    }
    let mut cumulative = Vec::with_capacity(waypoints.len());
    cumulative.push(0.0);
    for w in waypoints.windows(2) {
        let seg = crate::model::euclidean_distance(w[0], w[1]);
        cumulative.push(cumulative.last().unwrap() + seg);
    }
    let total = *cumulative.last().unwrap();
    if total <= 0.0 {
        return Err(TrajectoryError::ZeroLength);
    }
    Ok(Trajectory {
        waypoints: waypoints.to_vec(),
        cumulative,
        speed,
        duration_s: total / speed,
    })
}

/// A closed square path at constant height and speed, starting at the corner
/// nearest the origin and traversed counter-clockwise in the xy plane.
pub fn gen_square(side: f64, height: f64, speed: f64) -> Result<Trajectory, TrajectoryError> {
    if !(side > 0.0) {
        return Err(TrajectoryError::NonPositiveSide(side));
    }
    let corners = [
        Point3::new(0.0, 0.0, height),
        Point3::new(side, 0.0, height),
        Point3::new(side, side, height),
        Point3::new(0.0, side, height),
        Point3::new(0.0, 0.0, height),
    ];
    gen_polyline(&corners, speed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::euclidean_distance;

    #[test]
    fn square_duration_and_perimeter() {
        let t = gen_square(4.5, 1.0, 0.5).unwrap();
        assert!((t.duration_s() - 36.0).abs() < 1e-12);
        // perimeter = 18 m
        assert!((t.duration_s() * 0.5 - 18.0).abs() < 1e-12);
    }

    #[test]
    fn square_is_closed() {
        let t = gen_square(4.5, 1.0, 0.5).unwrap();
        let start = t.position_at(0.0);
        let end = t.position_at(t.duration_s());
        assert!(euclidean_distance(start, end) < 1e-12);
    }

    #[test]
    fn square_quarter_point_is_adjacent_corner() {
        let t = gen_square(4.5, 1.0, 0.5).unwrap();
        let q = t.position_at(t.duration_s() / 4.0);
        assert!(euclidean_distance(q, Point3::new(4.5, 0.0, 1.0)) < 1e-12);
    }

    #[test]
    fn polyline_midpoint() {
        let t = gen_polyline(
            &[Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)],
            1.0,
        )
        .unwrap();
        assert!((t.duration_s() - 1.0).abs() < 1e-12);
        let mid = t.position_at(0.5);
        assert!(euclidean_distance(mid, Point3::new(0.5, 0.0, 0.0)) < 1e-12);
    }

    #[test]
    fn repeated_single_waypoint_rejected() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(
            gen_polyline(&[p, p], 1.0).unwrap_err(),
            TrajectoryError::ZeroLength
        );
    }

    #[test]
    fn l_shaped_corner_time() {
        let wps = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
            Point3::new(2.0, 3.0, 0.0),
        ];
        let t = gen_polyline(&wps, 0.5).unwrap();
        // corner reached at cumulative-length / speed = 2.0 / 0.5
        let corner = t.position_at(4.0);
        assert!(euclidean_distance(corner, wps[1]) < 1e-12);
        assert!((t.duration_s() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn position_holds_past_duration() {
        let t = gen_polyline(
            &[Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)],
            1.0,
        )
        .unwrap();
        assert!(euclidean_distance(t.position_at(100.0), Point3::new(1.0, 0.0, 0.0)) < 1e-12);
    }

    #[test]
    fn static_point_holds_everywhere() {
        let p = Point3::new(3.0, 2.0, 1.0);
        let t = Trajectory::static_point(p);
        assert_eq!(t.position_at(0.0), p);
        assert_eq!(t.position_at(59.0), p);
    }
}
