//! Shared domain types: device identities, device-clock timestamps, and
//! local-frame geometry used by the protocol, simulator, and estimator.

use thiserror::Error;

/// Devices timestamp radio events with a 40-bit tick counter. One tick is the
/// timestamp resolution of an IEEE 802.15.4a transceiver running a 499.2 MHz
/// chipping clock with a 128x prescaler, ~15.65 ps.
pub const TICK_SECONDS: f64 = 1.0 / (128.0 * 499.2e6);

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Width of the device timestamp counter in bits.
pub const TICK_BITS: u32 = 40;

/// Timestamp counter modulus (2^40).
pub const TICK_MODULUS: u64 = 1 << TICK_BITS;

/// Minimum number of anchors for an observable 3D localization run.
pub const MIN_ANCHORS_3D: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("device id {0} assigned twice in one deployment")]
    DuplicateDeviceId(u8),
    #[error("id 255 is the broadcast address and cannot be assigned to a device")]
    BroadcastIdAssigned,
    #[error("anchor configuration must contain at least one anchor")]
    NoAnchors,
    #[error("at least {need} anchors are required for a 3D localization run, got {got}")]
    TooFewAnchors { got: usize, need: usize },
    #[error("position component is not finite")]
    NonFinitePosition,
}

/// Identity of a tag or anchor on the air. 255 is reserved as the broadcast
/// destination and is never assigned to a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceId(pub u8);

impl DeviceId {
    /// Broadcast destination address.
    pub const BROADCAST: DeviceId = DeviceId(255);

    pub fn is_broadcast(self) -> bool {
        self == Self::BROADCAST
    }
}

impl std::fmt::Display for DeviceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A device-clock reading: tick count modulo 2^40.
///
/// The counter wraps roughly every 17.2 s, so interval arithmetic must go
/// through [`tick_diff`] rather than plain subtraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TickTimestamp(u64);

impl TickTimestamp {
    /// Wraps the raw count into the 40-bit range.
    pub fn new(ticks: u64) -> Self {
        Self(ticks & (TICK_MODULUS - 1))
    }

    pub fn ticks(self) -> u64 {
        self.0
    }

    /// Adds a tick count, wrapping modulo 2^40.
    pub fn wrapping_add(self, ticks: u64) -> Self {
        Self::new(self.0.wrapping_add(ticks))
    }

    /// Adds a signed tick offset, wrapping modulo 2^40.
    pub fn wrapping_add_signed(self, ticks: i64) -> Self {
        let m = TICK_MODULUS as i128;
        Self(((self.0 as i128 + ticks as i128).rem_euclid(m)) as u64)
    }
}

/// Elapsed ticks from `earlier` to `later`, (later - earlier) mod 2^40.
/// Correct across exactly one counter wraparound.
pub fn tick_diff(later: TickTimestamp, earlier: TickTimestamp) -> u64 {
    later.0.wrapping_sub(earlier.0) & (TICK_MODULUS - 1)
}

/// Converts a tick count to seconds.
pub fn ticks_to_seconds(ticks: u64) -> f64 {
    ticks as f64 * TICK_SECONDS
}

/// A point in the deployment's local Cartesian frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn as_vector(self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &nalgebra::Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn translated(self, dx: f64, dy: f64, dz: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.z + dz)
    }
}

/// Euclidean distance between two points, meters.
pub fn euclidean_distance(a: Point3, b: Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// The deployment's anchors at known positions. List order defines the tag's
/// polling order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfiguration {
    entries: Vec<(DeviceId, Point3)>,
}

impl AnchorConfiguration {
    /// Builds a configuration, rejecting duplicate ids, the broadcast id, and
    /// non-finite positions.
    pub fn new(entries: Vec<(DeviceId, Point3)>) -> Result<Self, ModelError> {
        if entries.is_empty() {
            return Err(ModelError::NoAnchors);
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(id, pos) in &entries {
            if id.is_broadcast() {
                return Err(ModelError::BroadcastIdAssigned);
            }
            if !seen.insert(id) {
                return Err(ModelError::DuplicateDeviceId(id.0));
            }
            if !pos.is_finite() {
                return Err(ModelError::NonFinitePosition);
            }
        }
        Ok(Self { entries })
    }

    /// Errors unless the configuration has enough anchors for a 3D fix.
    pub fn require_localizable(&self) -> Result<(), ModelError> {
        if self.entries.len() < MIN_ANCHORS_3D {
            return Err(ModelError::TooFewAnchors {
                got: self.entries.len(),
                need: MIN_ANCHORS_3D,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Anchor at a polling-order index.
    pub fn get(&self, index: usize) -> Option<(DeviceId, Point3)> {
        self.entries.get(index).copied()
    }

    pub fn position_of(&self, id: DeviceId) -> Option<Point3> {
        self.entries
            .iter()
            .find(|(aid, _)| *aid == id)
            .map(|(_, p)| *p)
    }

    pub fn contains(&self, id: DeviceId) -> bool {
        self.entries.iter().any(|(aid, _)| *aid == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (DeviceId, Point3)> + '_ {
        self.entries.iter().copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }

    /// Centroid of the anchor positions.
    pub fn centroid(&self) -> Point3 {
        let n = self.entries.len() as f64;
        let mut c = nalgebra::Vector3::zeros();
        for (_, p) in &self.entries {
            c += p.as_vector();
        }
        Point3::from_vector(&(c / n))
    }
}

/// One tag-anchor distance sample as consumed by the estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeMeasurement {
    /// Anchor the distance was measured against.
    pub anchor: DeviceId,
    /// Polling-cycle sequence number the exchange belonged to.
    pub seq: u8,
    /// Measured distance, meters.
    pub distance: f64,
    /// Estimator wall-clock time of the sample, seconds.
    pub time: f64,
}
