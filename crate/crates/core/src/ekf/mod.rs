//! Extended Kalman filter for range-only localization: constant-velocity
//! prediction over a 6D position/velocity state, two-range measurement
//! updates `z = [d_k, d_{k-1}]`, and the outlier gates.

mod estimator;
mod trilaterate;

pub use estimator::{initialize, AcceptedSample, EkfConfig, Estimator, EstimateRow, ProcessOutcome};
pub use trilaterate::{trilaterate_ls, trilaterate_points, TrilaterationError};

use crate::model::{DeviceId, Point3, RangeMeasurement};
use nalgebra::{Matrix2, Matrix2x6, Matrix3, Matrix6, Matrix6x2, Vector2, Vector3, Vector6};
use std::collections::BTreeMap;
use thiserror::Error;

/// Positions closer than this to an anchor make the range direction
/// undefined; such updates are skipped.
pub const SINGULAR_GEOMETRY_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EkfError {
    #[error("prediction over negative dt {0}")]
    NegativeDt(f64),
    #[error("singular geometry: estimate within {0} m of the anchor, update skipped")]
    SingularGeometry(f64),
    #[error("no range history for anchor {0}; seed it before updating")]
    MissingHistory(DeviceId),
    #[error("measurement at {measurement}s precedes filter time {filter}s")]
    TimeRegression { measurement: f64, filter: f64 },
    #[error("innovation covariance not invertible")]
    SingularInnovation,
}

/// Filter state: 3D position and velocity with a 6x6 covariance ordered
/// `[x, y, z, vx, vy, vz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub covariance: Matrix6<f64>,
    /// Wall-clock time of the last committed update, seconds.
    pub last_update_time: f64,
    /// Posterior position after the previous update.
    pub prev_position: Vector3<f64>,
}

impl EkfState {
    pub fn new(position: Point3, noise: &NoiseConfig, time: f64) -> Self {
        let p = position.as_vector();
        let mut cov = Matrix6::zeros();
        for i in 0..3 {
            cov[(i, i)] = noise.p0_pos;
            cov[(i + 3, i + 3)] = noise.p0_vel;
        }
        Self {
            position: p,
            velocity: Vector3::zeros(),
            covariance: cov,
            last_update_time: time,
            prev_position: p,
        }
    }

    pub fn position_point(&self) -> Point3 {
        Point3::from_vector(&self.position)
    }

    /// Trace of the position block of the covariance, m^2.
    pub fn position_trace(&self) -> f64 {
        self.covariance[(0, 0)] + self.covariance[(1, 1)] + self.covariance[(2, 2)]
    }
}

/// Process / measurement noise and initial covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// White-acceleration process noise scale, m/s^2.
    pub sigma_accel: f64,
    /// Per-range measurement standard deviation, meters.
    pub sigma_range: f64,
    /// Initial position variance per axis, m^2.
    pub p0_pos: f64,
    /// Initial velocity variance per axis, (m/s)^2.
    pub p0_vel: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_accel: 2.0,
            sigma_range: 0.15,
            p0_pos: 25.0,
            p0_vel: 4.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.sigma_accel <= 0.0
            || self.sigma_range <= 0.0
            || self.p0_pos <= 0.0
            || self.p0_vel <= 0.0
        {
            return Err("noise parameters must be positive".into());
        }
        Ok(())
    }
}

/// Outlier-rejection thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateConfig {
    /// Shortest reportable range, meters.
    pub min_range_m: f64,
    /// Longest reportable range, meters.
    pub max_range_m: f64,
    /// A measurement is coherent if it differs from the predicted tag-anchor
    /// distance by less than this, meters. Enforced only after convergence.
    pub coherence_threshold_m: f64,
    /// The filter counts as converged once the position-covariance trace
    /// stays below this for `convergence_consecutive` updates, m^2.
    pub convergence_trace_threshold_m2: f64,
    pub convergence_consecutive: u32,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            min_range_m: 0.1,
            max_range_m: 100.0,
            coherence_threshold_m: 2.0,
            convergence_trace_threshold_m2: 0.75,
            convergence_consecutive: 10,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_range_m > 0.0 && self.min_range_m < self.max_range_m) {
            return Err("gate range band must satisfy 0 < min < max".into());
        }
        if self.coherence_threshold_m <= 0.0
            || self.convergence_trace_threshold_m2 <= 0.0
            || self.convergence_consecutive == 0
        {
            return Err("gate thresholds must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RejectReason {
    /// Outside the reportable range band.
    OutOfBand,
    /// Disagrees with the predicted tag-anchor distance.
    Incoherent { error_m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateDecision {
    Accept,
    Reject(RejectReason),
}

impl GateDecision {
    pub fn is_accept(self) -> bool {
        matches!(self, GateDecision::Accept)
    }
}

/// Last accepted distance per anchor: the `d_{k-1}` half of the measurement
/// vector. An anchor appears only after its first accepted measurement.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerAnchorHistory {
    map: BTreeMap<DeviceId, f64>,
}

impl PerAnchorHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn seed(&mut self, anchor: DeviceId, distance: f64) {
        self.map.insert(anchor, distance);
    }

    pub fn last_distance(&self, anchor: DeviceId) -> Option<f64> {
        self.map.get(&anchor).copied()
    }

    pub fn contains(&self, anchor: DeviceId) -> bool {
        self.map.contains_key(&anchor)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// How the previous-epoch position inside the measurement model is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrevRangeMode {
    /// Back-propagate the current state: `x_{k-1} := x_k - v_k * dt`. Both
    /// measurement rows depend on the state, so `d_{k-1}` informs velocity.
    #[default]
    VelocitySubstitution,
    /// Treat the stored posterior position as a constant; its measurement row
    /// has a zero Jacobian.
    StoredPosterior,
}

fn symmetrize(m: &Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

/// Constant-velocity prediction: the mean moves by `v * dt`, the covariance by
/// `F P F^T + Q` with the white-acceleration process noise
/// (position block `dt^4/4 s^2 I`, cross `dt^3/2 s^2 I`, velocity `dt^2 s^2 I`).
pub fn predict(state: &EkfState, dt: f64, noise: &NoiseConfig) -> Result<EkfState, EkfError> {
    if dt < 0.0 {
        return Err(EkfError::NegativeDt(dt));
    }
    let mut f = Matrix6::<f64>::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
    }
    let s2 = noise.sigma_accel * noise.sigma_accel;
    let q_pp = dt.powi(4) / 4.0 * s2;
    let q_pv = dt.powi(3) / 2.0 * s2;
    let q_vv = dt.powi(2) * s2;
    let mut q = Matrix6::<f64>::zeros();
    for i in 0..3 {
        q[(i, i)] = q_pp;
        q[(i, i + 3)] = q_pv;
        q[(i + 3, i)] = q_pv;
        q[(i + 3, i + 3)] = q_vv;
    }
    Ok(EkfState {
        position: state.position + state.velocity * dt,
        velocity: state.velocity,
        covariance: symmetrize(&(f * state.covariance * f.transpose() + q)),
        last_update_time: state.last_update_time,
        prev_position: state.prev_position,
    })
}

/// Measurement prediction and Jacobian for one anchor.
///
/// `h = [|x - p|, |x_prev - p|]` where `x_prev` follows `mode`. Row one of the
/// Jacobian is the unit vector from anchor to estimate; row two carries the
/// back-propagated direction and its `-dt`-scaled velocity block.
fn measurement_model(
    state: &EkfState,
    anchor: &Vector3<f64>,
    dt: f64,
    mode: PrevRangeMode,
) -> Result<(Vector2<f64>, Matrix2x6<f64>), EkfError> {
    let to_est = state.position - anchor;
    let r1 = to_est.norm();
    if r1 < SINGULAR_GEOMETRY_EPS {
        return Err(EkfError::SingularGeometry(r1));
    }
    let u = to_est / r1;

    let mut h = Matrix2x6::zeros();
    h.fixed_view_mut::<1, 3>(0, 0).copy_from(&u.transpose());

    let (r2, row2_pos, row2_vel) = match mode {
        PrevRangeMode::VelocitySubstitution => {
            let prev = state.position - state.velocity * dt;
            let to_prev = prev - anchor;
            let norm = to_prev.norm();
            if norm < SINGULAR_GEOMETRY_EPS {
                return Err(EkfError::SingularGeometry(norm));
            }
            let w = to_prev / norm;
            (norm, w, -w * dt)
        }
        PrevRangeMode::StoredPosterior => {
            let to_prev = state.prev_position - anchor;
            let norm = to_prev.norm();
            if norm < SINGULAR_GEOMETRY_EPS {
                return Err(EkfError::SingularGeometry(norm));
            }
            // Constant: no dependence on the current state.
            (norm, Vector3::zeros(), Vector3::zeros())
        }
    };
    h.fixed_view_mut::<1, 3>(1, 0).copy_from(&row2_pos.transpose());
    h.fixed_view_mut::<1, 3>(1, 3).copy_from(&row2_vel.transpose());

    Ok((Vector2::new(r1, r2), h))
}

/// One EKF update with `z = [d_k, d_{k-1}]` against a single anchor.
///
/// The caller must have seeded the history with this anchor's previous
/// distance. On success the history and the stored previous position advance;
/// on a singular-geometry error nothing changes.
pub fn update(
    state: &EkfState,
    m: &RangeMeasurement,
    anchor_pos: Point3,
    history: &mut PerAnchorHistory,
    noise: &NoiseConfig,
) -> Result<EkfState, EkfError> {
    update_with_mode(
        state,
        m,
        anchor_pos,
        history,
        noise,
        PrevRangeMode::VelocitySubstitution,
    )
}

pub fn update_with_mode(
    state: &EkfState,
    m: &RangeMeasurement,
    anchor_pos: Point3,
    history: &mut PerAnchorHistory,
    noise: &NoiseConfig,
    mode: PrevRangeMode,
) -> Result<EkfState, EkfError> {
    let d_prev = history
        .last_distance(m.anchor)
        .ok_or(EkfError::MissingHistory(m.anchor))?;
    if m.time < state.last_update_time {
        return Err(EkfError::TimeRegression {
            measurement: m.time,
            filter: state.last_update_time,
        });
    }
    let dt = m.time - state.last_update_time;
    let anchor = anchor_pos.as_vector();
    let (h_pred, h_jac) = measurement_model(state, &anchor, dt, mode)?;

    let z = Vector2::new(m.distance, d_prev);
    let innovation = z - h_pred;

    let r = Matrix2::from_diagonal(&Vector2::new(
        noise.sigma_range * noise.sigma_range,
        noise.sigma_range * noise.sigma_range,
    ));
    let s = h_jac * state.covariance * h_jac.transpose() + r;
    let s_inv = s.try_inverse().ok_or(EkfError::SingularInnovation)?;
    let gain: Matrix6x2<f64> = state.covariance * h_jac.transpose() * s_inv;

    let correction: Vector6<f64> = gain * innovation;
    let position = state.position + correction.fixed_rows::<3>(0).into_owned();
    let velocity = state.velocity + correction.fixed_rows::<3>(3).into_owned();

    // Joseph form keeps the covariance symmetric positive semidefinite even
    // with an imperfect gain.
    let i_kh = Matrix6::identity() - gain * h_jac;
    let covariance = symmetrize(
        &(i_kh * state.covariance * i_kh.transpose() + gain * r * gain.transpose()),
    );

    history.seed(m.anchor, m.distance);
    Ok(EkfState {
        position,
        velocity,
        covariance,
        last_update_time: m.time,
        prev_position: position,
    })
}

/// Outlier gates: the range band always applies; the coherence test against
/// the estimated tag-anchor distance only once the filter has converged.
pub fn gate(
    m: &RangeMeasurement,
    state: &EkfState,
    anchor_pos: Point3,
    cfg: &GateConfig,
    converged: bool,
) -> GateDecision {
    if m.distance < cfg.min_range_m || m.distance > cfg.max_range_m {
        return GateDecision::Reject(RejectReason::OutOfBand);
    }
    if converged {
        let predicted = (state.position - anchor_pos.as_vector()).norm();
        let error_m = (m.distance - predicted).abs();
        if error_m >= cfg.coherence_threshold_m {
            return GateDecision::Reject(RejectReason::Incoherent { error_m });
        }
    }
    GateDecision::Accept
}

/// Pre-initialization band check, identical to the band half of [`gate`].
pub fn band_check(distance: f64, cfg: &GateConfig) -> GateDecision {
    if distance < cfg.min_range_m || distance > cfg.max_range_m {
        GateDecision::Reject(RejectReason::OutOfBand)
    } else {
        GateDecision::Accept
    }
}

/// Convergence detector: latches true once the position-covariance trace has
/// stayed under the threshold for the configured number of consecutive
/// updates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConvergenceTracker {
    streak: u32,
    latched: bool,
}

impl ConvergenceTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed the post-update state; returns the (possibly newly latched) flag.
    pub fn observe(&mut self, state: &EkfState, cfg: &GateConfig) -> bool {
        if self.latched {
            return true;
        }
        if state.position_trace() < cfg.convergence_trace_threshold_m2 {
            self.streak += 1;
            if self.streak >= cfg.convergence_consecutive {
                self.latched = true;
            }
        } else {
            self.streak = 0;
        }
        self.latched
    }

    pub fn is_converged(&self) -> bool {
        self.latched
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base_state() -> EkfState {
        EkfState::new(Point3::new(1.0, 2.0, 3.0), &NoiseConfig::default(), 0.0)
    }

    #[test]
    fn predict_zero_velocity_keeps_position() {
        let state = base_state();
        let out = predict(&state, 0.7, &NoiseConfig::default()).unwrap();
        assert_eq!(out.position, state.position);
    }

    #[test]
    fn predict_moves_along_velocity() {
        let mut state = base_state();
        state.position = Vector3::zeros();
        state.velocity = Vector3::new(1.0, 0.0, 0.0);
        let out = predict(&state, 0.5, &NoiseConfig::default()).unwrap();
        assert_relative_eq!(out.position.x, 0.5, epsilon = 1e-15);
        assert_eq!(out.position.y, 0.0);
        assert_eq!(out.velocity, state.velocity);
    }

    #[test]
    fn predict_inflates_covariance() {
        let state = base_state();
        let out = predict(&state, 0.1, &NoiseConfig::default()).unwrap();
        assert!(out.covariance.trace() > state.covariance.trace());
    }

    #[test]
    fn predict_rejects_negative_dt() {
        let state = base_state();
        assert_eq!(
            predict(&state, -0.1, &NoiseConfig::default()).unwrap_err(),
            EkfError::NegativeDt(-0.1)
        );
    }

    #[test]
    fn zero_innovation_leaves_mean_fixed() {
        let noise = NoiseConfig::default();
        let mut state = base_state();
        state.velocity = Vector3::new(0.3, -0.2, 0.1);
        let anchor = Point3::new(10.0, 0.0, 0.0);
        let dt = 0.25;
        let prev = state.position - state.velocity * dt;
        let mut history = PerAnchorHistory::new();
        history.seed(DeviceId(1), (prev - anchor.as_vector()).norm());
        let m = RangeMeasurement {
            anchor: DeviceId(1),
            seq: 0,
            distance: (state.position - anchor.as_vector()).norm(),
            time: state.last_update_time + dt,
        };
        let before = state.clone();
        let out = update(&state, &m, anchor, &mut history, &noise).unwrap();
        assert!((out.position - before.position).norm() < 1e-12);
        assert!((out.velocity - before.velocity).norm() < 1e-12);
        assert!(out.covariance.trace() <= before.covariance.trace() + 1e-12);
    }

    #[test]
    fn update_requires_history() {
        let state = base_state();
        let mut history = PerAnchorHistory::new();
        let m = RangeMeasurement {
            anchor: DeviceId(5),
            seq: 0,
            distance: 3.0,
            time: 0.1,
        };
        assert_eq!(
            update(&state, &m, Point3::new(5.0, 0.0, 0.0), &mut history, &NoiseConfig::default())
                .unwrap_err(),
            EkfError::MissingHistory(DeviceId(5))
        );
    }

    #[test]
    fn coincident_anchor_skips_update() {
        let state = base_state();
        let mut history = PerAnchorHistory::new();
        history.seed(DeviceId(1), 1.0);
        let m = RangeMeasurement {
            anchor: DeviceId(1),
            seq: 0,
            distance: 0.5,
            time: 0.1,
        };
        let anchor = Point3::new(1.0, 2.0, 3.0); // exactly the estimate
        let err = update(&state, &m, anchor, &mut history, &NoiseConfig::default()).unwrap_err();
        assert!(matches!(err, EkfError::SingularGeometry(_)));
        // history untouched on skip
        assert_eq!(history.last_distance(DeviceId(1)), Some(1.0));
    }

    #[test]
    fn gate_band_rejections() {
        let cfg = GateConfig::default();
        let state = base_state();
        let anchor = Point3::new(5.0, 2.0, 3.0);
        let mk = |d: f64| RangeMeasurement {
            anchor: DeviceId(1),
            seq: 0,
            distance: d,
            time: 0.0,
        };
        assert_eq!(
            gate(&mk(0.05), &state, anchor, &cfg, false),
            GateDecision::Reject(RejectReason::OutOfBand)
        );
        assert_eq!(
            gate(&mk(150.0), &state, anchor, &cfg, true),
            GateDecision::Reject(RejectReason::OutOfBand)
        );
        assert_eq!(gate(&mk(0.1), &state, anchor, &cfg, false), GateDecision::Accept);
        assert_eq!(gate(&mk(100.0), &state, anchor, &cfg, false), GateDecision::Accept);
    }

    #[test]
    fn coherence_gate_only_after_convergence() {
        let cfg = GateConfig::default();
        let state = base_state(); // estimate at (1,2,3)
        let anchor = Point3::new(6.0, 2.0, 3.0); // predicted range 5.0
        let m = RangeMeasurement {
            anchor: DeviceId(1),
            seq: 0,
            distance: 7.5,
            time: 0.0,
        };
        assert_eq!(gate(&m, &state, anchor, &cfg, false), GateDecision::Accept);
        match gate(&m, &state, anchor, &cfg, true) {
            GateDecision::Reject(RejectReason::Incoherent { error_m }) => {
                assert_relative_eq!(error_m, 2.5, epsilon = 1e-12);
            }
            other => panic!("expected incoherent rejection, got {other:?}"),
        }
    }

    #[test]
    fn convergence_latches() {
        let cfg = GateConfig {
            convergence_trace_threshold_m2: 1.0,
            convergence_consecutive: 3,
            ..Default::default()
        };
        let noise = NoiseConfig::default();
        let mut good = EkfState::new(Point3::default(), &noise, 0.0);
        good.covariance = Matrix6::identity() * 0.1;
        let mut bad = EkfState::new(Point3::default(), &noise, 0.0);

        let mut tracker = ConvergenceTracker::new();
        assert!(!tracker.observe(&bad, &cfg), "initial covariance is too wide");
        assert!(!tracker.observe(&good, &cfg));
        assert!(!tracker.observe(&good, &cfg));
        assert!(tracker.observe(&good, &cfg), "third consecutive pass latches");
        // latched even if the trace grows again
        assert!(tracker.observe(&bad, &cfg));
    }

    #[test]
    fn stored_posterior_mode_has_zero_second_row() {
        let mut state = base_state();
        state.velocity = Vector3::new(0.5, 0.0, 0.0);
        state.prev_position = Vector3::new(0.5, 2.0, 3.0);
        let anchor = Vector3::new(10.0, 0.0, 0.0);
        let (_, h) = measurement_model(&state, &anchor, 0.2, PrevRangeMode::StoredPosterior).unwrap();
        for c in 0..6 {
            assert_eq!(h[(1, c)], 0.0);
        }
        let (_, h_sub) =
            measurement_model(&state, &anchor, 0.2, PrevRangeMode::VelocitySubstitution).unwrap();
        assert!(h_sub[(1, 3)] != 0.0, "substitution row carries velocity terms");
    }
}
