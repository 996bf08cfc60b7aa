//! Deterministic discrete-event simulation of the radio network: one tag
//! cycling through the anchors, propagation delay and loss on every link,
//! per-device clocks with drift, and a log of everything that happened.
//!
//! The entire run is a pure function of [`SimConfig`]: the same config
//! (including the seed) produces a byte-identical log.

mod clock;
mod event;
mod log;
mod medium;

pub use clock::{ClockModel, MAX_DRIFT};
pub use event::{EventQueue, SimEvent};
pub use log::{LogParseError, RecordKind, SimLog, SimRecord, SIMLOG_HEADER};
pub use medium::{transmit, MediumError, MediumModel};

use crate::model::{AnchorConfiguration, DeviceId, ModelError, Point3};
use crate::protocol::{
    Action, AnchorEngine, AnchorEvent, Frame, FrameBody, ProtocolConfig, TagEngine, TagEvent,
};
use crate::trajectory::Trajectory;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Medium(#[from] MediumError),
    #[error("simulation duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("tag id {0} collides with an anchor id")]
    TagIdCollision(DeviceId),
    #[error("unknown anchor id {0}")]
    UnknownAnchor(DeviceId),
    #[error("clock drift for device {device} is {drift} but must satisfy |drift| <= 100e-6")]
    DriftOutOfRange { device: DeviceId, drift: f64 },
    #[error("invalid protocol config: {0}")]
    Protocol(String),
    #[error("anchor drop at {at}s must come before its restore at {restore}s")]
    DropAfterRestore { at: f64, restore: f64 },
}

/// Silences one anchor mid-run, optionally restoring it later.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorDrop {
    pub anchor: DeviceId,
    pub at_s: f64,
    pub restore_s: Option<f64>,
}

/// Everything a run depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub anchors: AnchorConfiguration,
    pub tag_id: DeviceId,
    pub trajectory: Trajectory,
    /// Clock model per device; devices not listed run ideal clocks.
    pub clocks: BTreeMap<DeviceId, ClockModel>,
    pub medium: MediumModel,
    pub protocol: ProtocolConfig,
    pub duration_s: f64,
    pub rng_seed: u64,
    pub drops: Vec<AnchorDrop>,
}

impl SimConfig {
    pub fn new(anchors: AnchorConfiguration, tag_id: DeviceId, trajectory: Trajectory) -> Self {
        Self {
            anchors,
            tag_id,
            trajectory,
            clocks: BTreeMap::new(),
            medium: MediumModel::default(),
            protocol: ProtocolConfig::default(),
            duration_s: 10.0,
            rng_seed: 0,
            drops: Vec::new(),
        }
    }

    /// Schedules an anchor to go silent at `at_s` for the rest of the run.
    pub fn drop_anchor(&mut self, anchor: DeviceId, at_s: f64) -> Result<(), SimError> {
        self.drop_anchor_until(anchor, at_s, None)
    }

    /// Schedules an anchor outage with an optional restore time.
    pub fn drop_anchor_until(
        &mut self,
        anchor: DeviceId,
        at_s: f64,
        restore_s: Option<f64>,
    ) -> Result<(), SimError> {
        if !self.anchors.contains(anchor) {
            return Err(SimError::UnknownAnchor(anchor));
        }
        if let Some(r) = restore_s {
            if r <= at_s {
                return Err(SimError::DropAfterRestore { at: at_s, restore: r });
            }
        }
        self.drops.push(AnchorDrop {
            anchor,
            at_s,
            restore_s,
        });
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration_s > 0.0) {
            return Err(SimError::NonPositiveDuration(self.duration_s));
        }
        if self.tag_id.is_broadcast() {
            return Err(ModelError::BroadcastIdAssigned.into());
        }
        if self.anchors.contains(self.tag_id) {
            return Err(SimError::TagIdCollision(self.tag_id));
        }
        self.medium.validate()?;
        self.protocol.validate().map_err(SimError::Protocol)?;
        for (&device, clock) in &self.clocks {
            if device != self.tag_id && !self.anchors.contains(device) {
                return Err(SimError::UnknownAnchor(device));
            }
            if clock.drift.abs() > MAX_DRIFT {
                return Err(SimError::DriftOutOfRange {
                    device,
                    drift: clock.drift,
                });
            }
        }
        for bias_id in self.medium.extra_range_bias_m.keys() {
            if *bias_id != self.tag_id && !self.anchors.contains(*bias_id) {
                return Err(SimError::UnknownAnchor(*bias_id));
            }
        }
        for drop in &self.drops {
            if !self.anchors.contains(drop.anchor) {
                return Err(SimError::UnknownAnchor(drop.anchor));
            }
        }
        Ok(())
    }
}

struct Simulator<'a> {
    config: &'a SimConfig,
    queue: EventQueue,
    rng: ChaCha8Rng,
    tag: TagEngine,
    anchors: BTreeMap<DeviceId, AnchorEngine>,
    silenced: BTreeSet<DeviceId>,
    log: SimLog,
}

impl<'a> Simulator<'a> {
    fn new(config: &'a SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let tag = TagEngine::new(
            config.tag_id,
            config.anchors.clone(),
            config.protocol,
        )
        .expect("validated anchors are non-empty");
        let anchors = config
            .anchors
            .ids()
            .map(|id| (id, AnchorEngine::new(id, config.protocol)))
            .collect();
        Ok(Self {
            config,
            queue: EventQueue::new(),
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            tag,
            anchors,
            silenced: BTreeSet::new(),
            log: SimLog::default(),
        })
    }

    fn clock_of(&self, device: DeviceId) -> ClockModel {
        self.config.clocks.get(&device).copied().unwrap_or_default()
    }

    fn position_of(&self, device: DeviceId, sim_time: f64) -> Point3 {
        if device == self.config.tag_id {
            self.config.trajectory.position_at(sim_time)
        } else {
            self.config
                .anchors
                .position_of(device)
                .expect("frames only originate from known devices")
        }
    }

    /// Every device except `src`, ascending id, paired with its position.
    /// The ordering fixes the RNG draw order inside `transmit`.
    fn receivers_excluding(&self, src: DeviceId, sim_time: f64) -> Vec<(DeviceId, Point3)> {
        let mut ids: Vec<DeviceId> = self.config.anchors.ids().collect();
        ids.push(self.config.tag_id);
        ids.sort();
        ids.into_iter()
            .filter(|&id| id != src)
            .map(|id| (id, self.position_of(id, sim_time)))
            .collect()
    }

    fn apply_actions(&mut self, device: DeviceId, sim_time: f64, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::SendFrame { frame, at } => {
                    let tx_time = self.clock_of(device).sim_time_at_tick(at, sim_time);
                    self.queue
                        .push(tx_time, SimEvent::DeviceTransmit { src: device, frame });
                }
                Action::ArmTimer {
                    timer_id,
                    duration_s,
                } => {
                    // The timer counts device ticks, so drift stretches it.
                    let real = duration_s / (1.0 + self.clock_of(device).drift);
                    self.queue
                        .push(sim_time + real, SimEvent::TimerExpiry { device, timer_id });
                }
                Action::SkipAnchor { .. } => {}
            }
        }
    }

    fn record_kind(frame: &Frame) -> RecordKind {
        match frame.body {
            FrameBody::Poll => RecordKind::Poll,
            FrameBody::Response => RecordKind::Response,
            FrameBody::Final { .. } => RecordKind::Final,
            FrameBody::Report { .. } => RecordKind::Report,
        }
    }

    fn handle(&mut self, sim_time: f64, event: SimEvent) {
        match event {
            SimEvent::TagKickoff => {
                let now = self.clock_of(self.config.tag_id).device_now(sim_time);
                let actions = self.tag.on_event(TagEvent::ClockTick, now);
                self.apply_actions(self.config.tag_id, sim_time, actions);
            }
            SimEvent::SilenceAnchor { anchor } => {
                self.silenced.insert(anchor);
            }
            SimEvent::RestoreAnchor { anchor } => {
                self.silenced.remove(&anchor);
            }
            SimEvent::DeviceTransmit { src, frame } => {
                if self.silenced.contains(&src) {
                    return;
                }
                self.log.records.push(SimRecord::frame(
                    sim_time,
                    Self::record_kind(&frame),
                    frame.src,
                    frame.dst,
                    frame.seq,
                ));
                let receivers = self.receivers_excluding(src, sim_time);
                let src_pos = self.position_of(src, sim_time);
                transmit(
                    &mut self.queue,
                    &frame,
                    src,
                    src_pos,
                    &receivers,
                    sim_time,
                    &self.config.medium,
                    &mut self.rng,
                );
                // Anchors read back the actual TX timestamp.
                if let Some(engine) = self.anchors.get_mut(&src) {
                    let tx = self.config.clocks.get(&src).copied().unwrap_or_default()
                        .device_now(sim_time);
                    let actions = engine.on_event(AnchorEvent::SendComplete { tx }, tx);
                    self.apply_actions(src, sim_time, actions);
                }
            }
            SimEvent::FrameDelivery {
                dst,
                frame,
                jitter_ticks,
            } => {
                if self.silenced.contains(&dst) {
                    return;
                }
                let rx = self
                    .clock_of(dst)
                    .device_now(sim_time)
                    .wrapping_add_signed(jitter_ticks);
                if dst == self.config.tag_id {
                    // Any ranging result overheard by the tag joins the
                    // measurement stream, stamped with ground truth.
                    if let FrameBody::Report {
                        anchor,
                        distance_mm,
                        tag,
                    } = frame.body
                    {
                        if tag == self.config.tag_id {
                            self.log.records.push(SimRecord::measurement(
                                sim_time,
                                anchor,
                                frame.seq,
                                distance_mm as f64 / 1000.0,
                                self.config.trajectory.position_at(sim_time),
                            ));
                        }
                    }
                    let actions = self.tag.on_event(TagEvent::FrameReceived(frame), rx);
                    self.apply_actions(self.config.tag_id, sim_time, actions);
                } else if let Some(engine) = self.anchors.get_mut(&dst) {
                    let actions = engine.on_event(AnchorEvent::FrameReceived(frame), rx);
                    self.apply_actions(dst, sim_time, actions);
                }
            }
            SimEvent::TimerExpiry { device, timer_id } => {
                if device == self.config.tag_id {
                    let now = self.clock_of(device).device_now(sim_time);
                    let actions = self.tag.on_event(TagEvent::TimerExpired { timer_id }, now);
                    self.apply_actions(device, sim_time, actions);
                }
            }
        }
    }

    fn run(mut self) -> SimLog {
        self.queue.push(0.0, SimEvent::TagKickoff);
        for drop in &self.config.drops {
            self.queue.push(
                drop.at_s,
                SimEvent::SilenceAnchor {
                    anchor: drop.anchor,
                },
            );
            if let Some(restore) = drop.restore_s {
                self.queue.push(
                    restore,
                    SimEvent::RestoreAnchor {
                        anchor: drop.anchor,
                    },
                );
            }
        }
        while let Some((time, event)) = self.queue.pop() {
            if time > self.config.duration_s {
                break;
            }
            self.handle(time, event);
        }
        self.log
    }
}

/// Runs the simulation to completion and returns the log.
pub fn run(config: &SimConfig) -> Result<SimLog, SimError> {
    Ok(Simulator::new(config)?.run())
}
