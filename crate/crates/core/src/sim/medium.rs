//! Radio medium model: propagation delay, independent per-receiver frame
//! loss, Gaussian rx-timestamp jitter, and optional per-anchor range bias.

use super::event::{EventQueue, SimEvent};
use crate::model::{euclidean_distance, DeviceId, Point3, SPEED_OF_LIGHT, TICK_SECONDS};
use crate::protocol::Frame;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MediumError {
    #[error("loss probability must lie in [0, 1], got {0}")]
    LossOutOfRange(f64),
    #[error("timestamp jitter sigma must be non-negative, got {0}")]
    NegativeJitter(f64),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MediumModel {
    /// Probability that any single frame delivery is lost, per receiver.
    pub loss_probability: f64,
    /// Standard deviation of Gaussian noise added to rx timestamps, seconds.
    pub timestamp_jitter_sigma_s: f64,
    /// Constant extra path length on every link touching the keyed device
    /// (an NLOS-style bias), meters.
    pub extra_range_bias_m: BTreeMap<DeviceId, f64>,
}

impl MediumModel {
    pub fn validate(&self) -> Result<(), MediumError> {
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(MediumError::LossOutOfRange(self.loss_probability));
        }
        if self.timestamp_jitter_sigma_s < 0.0 {
            return Err(MediumError::NegativeJitter(self.timestamp_jitter_sigma_s));
        }
        Ok(())
    }

    fn bias_of(&self, id: DeviceId) -> f64 {
        self.extra_range_bias_m.get(&id).copied().unwrap_or(0.0)
    }
}

/// Schedules delivery of one transmitted frame to every other device.
///
/// Receivers must be passed in ascending device-id order: the RNG draw order
/// is two draws per receiver (one uniform for loss, one normal for the rx
/// jitter in ticks), in that receiver order, whether or not the draws end up
/// used. Returns the number of deliveries scheduled.
pub fn transmit<R: Rng>(
    queue: &mut EventQueue,
    frame: &Frame,
    src: DeviceId,
    src_pos: Point3,
    receivers: &[(DeviceId, Point3)],
    sim_time: f64,
    medium: &MediumModel,
    rng: &mut R,
) -> usize {
    let jitter = Normal::new(0.0, medium.timestamp_jitter_sigma_s)
        .expect("validated sigma is non-negative");
    let mut scheduled = 0;
    for &(dst, dst_pos) in receivers {
        debug_assert!(dst != src);
        let lost: f64 = rng.random();
        let jitter_ticks = (jitter.sample(rng) / TICK_SECONDS).round() as i64;
        if lost < medium.loss_probability {
            continue;
        }
        let path_m = euclidean_distance(src_pos, dst_pos)
            + medium.bias_of(src)
            + medium.bias_of(dst);
        let delivery_time = sim_time + path_m / SPEED_OF_LIGHT;
        queue.push(
            delivery_time,
            SimEvent::FrameDelivery {
                dst,
                frame: *frame,
                jitter_ticks,
            },
        );
        scheduled += 1;
    }
    scheduled
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn poll() -> Frame {
        Frame::poll(0, DeviceId(0), DeviceId(1))
    }

    #[test]
    fn delivery_delayed_by_range_over_c() {
        let mut q = EventQueue::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let medium = MediumModel::default();
        // 299.792458 m apart: flight time exactly 1 microsecond.
        let n = transmit(
            &mut q,
            &poll(),
            DeviceId(0),
            Point3::new(0.0, 0.0, 0.0),
            &[(DeviceId(1), Point3::new(299.792458, 0.0, 0.0))],
            2.0,
            &medium,
            &mut rng,
        );
        assert_eq!(n, 1);
        let (t, _) = q.pop().unwrap();
        assert!((t - 2.000001).abs() < 1e-15);
    }

    #[test]
    fn certain_loss_schedules_nothing() {
        let mut q = EventQueue::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let medium = MediumModel {
            loss_probability: 1.0,
            ..Default::default()
        };
        let n = transmit(
            &mut q,
            &poll(),
            DeviceId(0),
            Point3::default(),
            &[
                (DeviceId(1), Point3::new(1.0, 0.0, 0.0)),
                (DeviceId(2), Point3::new(2.0, 0.0, 0.0)),
            ],
            0.0,
            &medium,
            &mut rng,
        );
        assert_eq!(n, 0);
        assert!(q.is_empty());
    }

    #[test]
    fn anchor_bias_lengthens_the_path() {
        let mut q = EventQueue::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut medium = MediumModel::default();
        medium.extra_range_bias_m.insert(DeviceId(1), 0.299792458);
        transmit(
            &mut q,
            &poll(),
            DeviceId(0),
            Point3::default(),
            &[(DeviceId(1), Point3::new(299.792458, 0.0, 0.0))],
            0.0,
            &medium,
            &mut rng,
        );
        let (t, _) = q.pop().unwrap();
        // 1 us of geometry + 1 ns of bias
        assert!((t - 1.001e-6).abs() < 1e-15);
    }

    #[test]
    fn loss_draws_are_independent_of_jitter_setting() {
        // Same seed, different jitter sigma: the same subset of frames must
        // be lost, because both draws happen for every receiver.
        let count = |sigma: f64| {
            let mut q = EventQueue::new();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let medium = MediumModel {
                loss_probability: 0.5,
                timestamp_jitter_sigma_s: sigma,
                ..Default::default()
            };
            let receivers: Vec<_> = (1..=8)
                .map(|i| (DeviceId(i), Point3::new(i as f64, 0.0, 0.0)))
                .collect();
            let mut kept = Vec::new();
            for round in 0..16 {
                let f = Frame::poll(round, DeviceId(0), DeviceId(1));
                kept.push(transmit(
                    &mut q,
                    &f,
                    DeviceId(0),
                    Point3::default(),
                    &receivers,
                    round as f64,
                    &medium,
                    &mut rng,
                ));
            }
            kept
        };
        assert_eq!(count(0.0), count(1e-9));
    }
}
