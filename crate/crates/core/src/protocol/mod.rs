//! Two-way-ranging protocol: the tag and anchor state machines of the
//! POLL / RESPONSE / FINAL / REPORT exchange, and the conversion from the six
//! exchange timestamps to a distance.
//!
//! Both engines are deterministic state machines driven by injected events.
//! They never read a clock or a timer themselves: the caller supplies the
//! device-clock reading alongside each event, timer arming is an emitted
//! action, and expiry comes back as an event. Feeding the same event sequence
//! twice produces the same action sequence.

mod frame;

pub use frame::{
    decode_frame, encode_frame, CodecError, Frame, FrameBody, KIND_FINAL, KIND_POLL, KIND_REPORT,
    KIND_RESPONSE,
};

use crate::model::{
    tick_diff, AnchorConfiguration, DeviceId, TickTimestamp, SPEED_OF_LIGHT, TICK_SECONDS,
};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("degenerate exchange: all four ranging intervals are zero")]
    DegenerateExchange,
    #[error("tag requires at least one anchor to poll")]
    NoAnchors,
}

/// Protocol timing parameters. The response and report timeouts bound how long
/// the tag waits before skipping an unresponsive anchor; the reply delay is the
/// fixed turnaround both sides use for scheduled transmissions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolConfig {
    pub response_timeout_s: f64,
    pub report_timeout_s: f64,
    pub reply_delay_s: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            response_timeout_s: 0.005,
            report_timeout_s: 0.010,
            reply_delay_s: 0.003,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.response_timeout_s <= 0.0 || self.report_timeout_s <= 0.0 || self.reply_delay_s <= 0.0
        {
            return Err("protocol timeouts and reply delay must be positive".into());
        }
        Ok(())
    }

    fn reply_delay_ticks(&self) -> u64 {
        (self.reply_delay_s / TICK_SECONDS).round() as u64
    }
}

/// Event injected into an engine. The caller provides the device-clock reading
/// at which the event occurred as a separate argument; for received frames
/// that reading is the rx timestamp.
#[derive(Debug, Clone, PartialEq)]
pub enum TagEvent {
    /// Kick: starts the polling loop when the tag is idle.
    ClockTick,
    FrameReceived(Frame),
    TimerExpired { timer_id: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnchorEvent {
    FrameReceived(Frame),
    /// A scheduled transmission left the antenna at device time `tx`.
    SendComplete { tx: TickTimestamp },
}

/// Side effect requested by an engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Transmit `frame` when the local clock reaches `at` (delayed TX).
    SendFrame { frame: Frame, at: TickTimestamp },
    /// Arm a one-shot timer; expiry must be injected as `TimerExpired` with
    /// the same id. Arming supersedes any earlier timer.
    ArmTimer { timer_id: u64, duration_s: f64 },
    /// The current anchor did not complete its exchange and was skipped.
    SkipAnchor { anchor: DeviceId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TagPhase {
    Idle,
    AwaitResponse,
    AwaitReport,
}

/// Tag-side ranging engine. Polls the configured anchors one after the other,
/// skipping any that do not answer within the timeout, and restarts from the
/// first anchor with an incremented sequence number after each full cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct TagEngine {
    self_id: DeviceId,
    anchors: AnchorConfiguration,
    config: ProtocolConfig,
    cursor: usize,
    seq: u8,
    phase: TagPhase,
    t_sp: TickTimestamp,
    t_rr: TickTimestamp,
    t_sf: TickTimestamp,
    timer_seq: u64,
}

impl TagEngine {
    pub fn new(
        self_id: DeviceId,
        anchors: AnchorConfiguration,
        config: ProtocolConfig,
    ) -> Result<Self, ProtocolError> {
        if anchors.is_empty() {
            return Err(ProtocolError::NoAnchors);
        }
        Ok(Self {
            self_id,
            anchors,
            config,
            cursor: 0,
            seq: 0,
            phase: TagPhase::Idle,
            t_sp: TickTimestamp::default(),
            t_rr: TickTimestamp::default(),
            t_sf: TickTimestamp::default(),
            timer_seq: 0,
        })
    }

    pub fn current_anchor(&self) -> DeviceId {
        self.anchors.get(self.cursor).expect("cursor in range").0
    }

    pub fn seq(&self) -> u8 {
        self.seq
    }

    fn arm_timer(&mut self, duration_s: f64, actions: &mut Vec<Action>) {
        self.timer_seq += 1;
        actions.push(Action::ArmTimer {
            timer_id: self.timer_seq,
            duration_s,
        });
    }

    fn start_poll(&mut self, at: TickTimestamp, actions: &mut Vec<Action>) {
        let anchor = self.current_anchor();
        self.t_sp = at;
        self.phase = TagPhase::AwaitResponse;
        actions.push(Action::SendFrame {
            frame: Frame::poll(self.seq, self.self_id, anchor),
            at,
        });
        self.arm_timer(self.config.response_timeout_s, actions);
    }

    fn advance_cursor(&mut self) {
        self.cursor += 1;
        if self.cursor == self.anchors.len() {
            self.cursor = 0;
            self.seq = self.seq.wrapping_add(1);
        }
    }

    /// Advances the state machine. `now` is the tag-clock reading at which the
    /// event occurred (the rx timestamp for received frames).
    pub fn on_event(&mut self, event: TagEvent, now: TickTimestamp) -> Vec<Action> {
        let mut actions = Vec::new();
        match event {
            TagEvent::ClockTick => {
                if self.phase == TagPhase::Idle {
                    self.start_poll(now, &mut actions);
                }
            }
            TagEvent::TimerExpired { timer_id } => {
                if timer_id != self.timer_seq || self.phase == TagPhase::Idle {
                    return actions; // superseded timer
                }
                actions.push(Action::SkipAnchor {
                    anchor: self.current_anchor(),
                });
                self.advance_cursor();
                self.start_poll(now, &mut actions);
            }
            TagEvent::FrameReceived(frame) => match (self.phase, frame.body) {
                (TagPhase::AwaitResponse, FrameBody::Response) => {
                    if frame.src != self.current_anchor()
                        || frame.dst != self.self_id
                        || frame.seq != self.seq
                    {
                        return actions; // stale or foreign response
                    }
                    self.t_rr = now;
                    self.t_sf = now.wrapping_add(self.config.reply_delay_ticks());
                    actions.push(Action::SendFrame {
                        frame: Frame::final_msg(
                            self.seq,
                            self.self_id,
                            frame.src,
                            self.t_sp,
                            self.t_rr,
                            self.t_sf,
                        ),
                        at: self.t_sf,
                    });
                    self.phase = TagPhase::AwaitReport;
                    self.arm_timer(self.config.report_timeout_s, &mut actions);
                }
                (TagPhase::AwaitReport, FrameBody::Report { tag, anchor, .. }) => {
                    if frame.src != self.current_anchor()
                        || anchor != self.current_anchor()
                        || tag != self.self_id
                        || frame.seq != self.seq
                    {
                        return actions;
                    }
                    // Exchange complete; move to the next anchor after the
                    // usual turnaround.
                    self.advance_cursor();
                    let at = now.wrapping_add(self.config.reply_delay_ticks());
                    self.start_poll(at, &mut actions);
                }
                _ => {}
            },
        }
        actions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AnchorPhase {
    Idle,
    AwaitFinal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct AnchorExchange {
    tag: DeviceId,
    seq: u8,
    t_rp: TickTimestamp,
    t_sr: TickTimestamp,
}

/// Anchor-side ranging engine: answers polls addressed to it, and on a valid
/// FINAL computes the distance and broadcasts the result.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorEngine {
    self_id: DeviceId,
    config: ProtocolConfig,
    phase: AnchorPhase,
    exchange: Option<AnchorExchange>,
}

impl AnchorEngine {
    pub fn new(self_id: DeviceId, config: ProtocolConfig) -> Self {
        Self {
            self_id,
            config,
            phase: AnchorPhase::Idle,
            exchange: None,
        }
    }

    pub fn on_event(&mut self, event: AnchorEvent, now: TickTimestamp) -> Vec<Action> {
        let mut actions = Vec::new();
        match event {
            AnchorEvent::SendComplete { tx } => {
                // The response left at its scheduled tick; record the actual
                // reading the way firmware reads back the TX timestamp.
                if self.phase == AnchorPhase::AwaitFinal {
                    if let Some(ex) = self.exchange.as_mut() {
                        ex.t_sr = tx;
                    }
                }
            }
            AnchorEvent::FrameReceived(frame) => match frame.body {
                FrameBody::Poll => {
                    if frame.dst != self.self_id {
                        return actions;
                    }
                    // A fresh poll always restarts the exchange, so a tag that
                    // gave up on us last cycle can range again this cycle.
                    let t_sr = now.wrapping_add(self.config.reply_delay_ticks());
                    self.exchange = Some(AnchorExchange {
                        tag: frame.src,
                        seq: frame.seq,
                        t_rp: now,
                        t_sr,
                    });
                    self.phase = AnchorPhase::AwaitFinal;
                    actions.push(Action::SendFrame {
                        frame: Frame::response(frame.seq, self.self_id, frame.src),
                        at: t_sr,
                    });
                }
                FrameBody::Final { t_sp, t_rr, t_sf } => {
                    if frame.dst != self.self_id {
                        return actions;
                    }
                    let matching = self.exchange.filter(|ex| {
                        self.phase == AnchorPhase::AwaitFinal
                            && ex.seq == frame.seq
                            && ex.tag == frame.src
                    });
                    // Out-of-order or stale FINAL: drop the exchange entirely.
                    self.phase = AnchorPhase::Idle;
                    let Some(ex) = matching else {
                        self.exchange = None;
                        return actions;
                    };
                    self.exchange = None;
                    let stamps = TwrTimestamps {
                        t_sp,
                        t_rp: ex.t_rp,
                        t_sr: ex.t_sr,
                        t_rr,
                        t_sf,
                        t_rf: now,
                    };
                    if let Ok(distance_m) = compute_distance(&stamps) {
                        let distance_mm = (distance_m * 1000.0).round().clamp(0.0, u32::MAX as f64);
                        actions.push(Action::SendFrame {
                            frame: Frame::report(
                                frame.seq,
                                self.self_id,
                                ex.tag,
                                self.self_id,
                                distance_mm as u32,
                            ),
                            at: now.wrapping_add(self.config.reply_delay_ticks()),
                        });
                    }
                }
                FrameBody::Response | FrameBody::Report { .. } => {}
            },
        }
        actions
    }
}

/// The six timestamps of one completed exchange, in the clock of the device
/// that recorded each (tag: t_sp, t_rr, t_sf; anchor: t_rp, t_sr, t_rf).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwrTimestamps {
    pub t_sp: TickTimestamp,
    pub t_rp: TickTimestamp,
    pub t_sr: TickTimestamp,
    pub t_rr: TickTimestamp,
    pub t_sf: TickTimestamp,
    pub t_rf: TickTimestamp,
}

/// Asymmetric double-sided TWR time of flight, in ticks:
///
/// ```text
/// tof = (R1*R2 - D1*D2) / (R1 + R2 + D1 + D2)
/// ```
///
/// where R1/R2 are the two round-trip intervals and D1/D2 the two reply
/// delays. The form cancels clock-frequency offset to first order. Returns
/// `None` when the denominator is zero.
pub fn ads_twr_tof_ticks(r1: f64, d1: f64, r2: f64, d2: f64) -> Option<f64> {
    let denom = r1 + r2 + d1 + d2;
    if denom == 0.0 {
        return None;
    }
    Some((r1 * r2 - d1 * d2) / denom)
}

/// Distance from the six timestamps of one exchange, meters.
///
/// Intervals are formed with wraparound-safe differences, so the exchange may
/// straddle one counter wrap. A negative time of flight (noise on a very short
/// range) clamps to zero.
pub fn compute_distance(t: &TwrTimestamps) -> Result<f64, ProtocolError> {
    let r1 = tick_diff(t.t_rr, t.t_sp);
    let d1 = tick_diff(t.t_sr, t.t_rp);
    let r2 = tick_diff(t.t_rf, t.t_sr);
    let d2 = tick_diff(t.t_sf, t.t_rr);

    // Products of 40-bit counts can reach 2^80; keep them exact.
    let num = (r1 as i128) * (r2 as i128) - (d1 as i128) * (d2 as i128);
    let den = r1 as i128 + r2 as i128 + d1 as i128 + d2 as i128;
    if den == 0 {
        return Err(ProtocolError::DegenerateExchange);
    }
    let tof_ticks = num as f64 / den as f64;
    Ok(tof_ticks.max(0.0) * TICK_SECONDS * SPEED_OF_LIGHT)
}
