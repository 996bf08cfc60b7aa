//! Discrete-event queue: events pop in non-decreasing time order, ties broken
//! by insertion order so runs are reproducible.

use crate::model::DeviceId;
use crate::protocol::Frame;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, PartialEq)]
pub enum SimEvent {
    /// Kick the tag's polling loop.
    TagKickoff,
    /// A scheduled transmission leaves `src`'s antenna.
    DeviceTransmit { src: DeviceId, frame: Frame },
    /// A frame arrives at `dst`. The rx-timestamp jitter was drawn when the
    /// transmission was processed and rides along, in ticks.
    FrameDelivery {
        dst: DeviceId,
        frame: Frame,
        jitter_ticks: i64,
    },
    /// A one-shot timer armed by `device` fires.
    TimerExpiry { device: DeviceId, timer_id: u64 },
    /// The anchor stops receiving and transmitting.
    SilenceAnchor { anchor: DeviceId },
    /// The anchor comes back.
    RestoreAnchor { anchor: DeviceId },
}

#[derive(Debug)]
struct Scheduled {
    time: f64,
    seq: u64,
    event: SimEvent,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Scheduled {}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the earliest event pops first.
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
            .reverse()
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Scheduled>,
    counter: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, event: SimEvent) {
        debug_assert!(time.is_finite());
        let seq = self.counter;
        self.counter += 1;
        self.heap.push(Scheduled { time, seq, event });
    }

    pub fn pop(&mut self) -> Option<(f64, SimEvent)> {
        self.heap.pop().map(|s| (s.time, s.event))
    }

    pub fn next_time(&self) -> Option<f64> {
        self.heap.peek().map(|s| s.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
