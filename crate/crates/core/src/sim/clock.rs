//! Per-device clock model: constant frequency offset (drift) plus a phase
//! offset, quantized to the 40-bit tick counter.

use crate::model::{TickTimestamp, TICK_MODULUS, TICK_SECONDS};

/// Maximum modeled oscillator drift magnitude, dimensionless (100 ppm).
pub const MAX_DRIFT: f64 = 100e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClockModel {
    /// Phase offset, seconds of device time at simulation time zero.
    pub offset_s: f64,
    /// Fractional frequency error, e.g. 20e-6 for +20 ppm.
    pub drift: f64,
}

impl ClockModel {
    pub fn new(offset_s: f64, drift: f64) -> Self {
        Self { offset_s, drift }
    }

    /// Unwrapped device tick count as a real number.
    fn real_ticks(&self, sim_time: f64) -> f64 {
        ((1.0 + self.drift) * sim_time + self.offset_s) / TICK_SECONDS
    }

    /// What the device's timestamp register reads at `sim_time`:
    /// floor(((1 + drift) * t + offset) / TICK_SECONDS) mod 2^40.
    pub fn device_now(&self, sim_time: f64) -> TickTimestamp {
        let raw = self.real_ticks(sim_time).floor() as i128;
        TickTimestamp::new(raw.rem_euclid(TICK_MODULUS as i128) as u64)
    }

    /// Simulation time at which the register next reads `target`, searching
    /// forward from `not_before`. Used to realize delayed transmissions.
    ///
    /// A target in the very recent past (the scheduling event itself happened
    /// at that tick) maps to `not_before`, the way hardware fires a late
    /// delayed TX immediately rather than waiting a full counter period.
    pub fn sim_time_at_tick(&self, target: TickTimestamp, not_before: f64) -> f64 {
        let modulus = TICK_MODULUS as f64;
        let now_real = self.real_ticks(not_before);
        let now_reg = now_real.rem_euclid(modulus);
        let mut delta = (target.ticks() as f64 - now_reg).rem_euclid(modulus);
        if delta > modulus / 2.0 {
            delta = 0.0;
        }
        not_before + delta * TICK_SECONDS / (1.0 + self.drift)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_clock_at_zero() {
        let c = ClockModel::default();
        assert_eq!(c.device_now(0.0).ticks(), 0);
    }

    #[test]
    fn one_tick_offset() {
        let c = ClockModel::new(TICK_SECONDS, 0.0);
        assert_eq!(c.device_now(0.0).ticks(), 1);
    }

    #[test]
    fn drift_scales_elapsed_time() {
        let c = ClockModel::new(0.0, 20e-6);
        // ticks for 1.000020 s, evaluated independently of device_now
        let expected = (1.000020_f64 / TICK_SECONDS).floor() as u64;
        assert_eq!(c.device_now(1.0).ticks(), expected);
    }

    #[test]
    fn register_wraps_past_full_period() {
        let c = ClockModel::default();
        let period = TICK_MODULUS as f64 * TICK_SECONDS;
        let t = c.device_now(period + 5.0 * TICK_SECONDS);
        assert!(t.ticks() <= 6);
    }

    #[test]
    fn negative_offset_wraps_backwards() {
        let c = ClockModel::new(-3.0 * TICK_SECONDS, 0.0);
        assert_eq!(c.device_now(0.0).ticks(), TICK_MODULUS - 3);
    }

    #[test]
    fn sim_time_at_tick_round_trips() {
        let c = ClockModel::new(1.7e-6, -15e-6);
        let now = 0.125;
        let target = c.device_now(now).wrapping_add(1_000_000);
        let t = c.sim_time_at_tick(target, now);
        assert!(t >= now);
        assert_eq!(c.device_now(t + 1e-15).ticks(), target.ticks());
    }

    #[test]
    fn just_past_target_fires_immediately() {
        let c = ClockModel::default();
        let now = 1.0;
        let target = c.device_now(now); // the current tick, already reached
        let t = c.sim_time_at_tick(target, now);
        assert!((t - now).abs() < TICK_SECONDS);
    }
}
