//! Structured event log.
//!
//! One JSON object per line. The first line is a header carrying the schema
//! version and seed; every other line is an [`EventRecord`] with the fixed
//! key order `t, node, cat, ev, <attributes>`. Floating-point attributes are
//! rounded when recorded so the written text is canonical and parses back to
//! the identical value.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{ticks_to_seconds, NodeId, Tick, TICKS_PER_SECOND};

pub const LOG_FORMAT: &str = "aeronet-events";
pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Gps,
    Mavlink,
    Packet,
    Radio,
    Mode,
    Mission,
    Error,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Gps => "gps",
            Category::Mavlink => "mavlink",
            Category::Packet => "packet",
            Category::Radio => "radio",
            Category::Mode => "mode",
            Category::Mission => "mission",
            Category::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Category> {
        Some(match s {
            "gps" => Category::Gps,
            "mavlink" => Category::Mavlink,
            "packet" => Category::Packet,
            "radio" => Category::Radio,
            "mode" => Category::Mode,
            "mission" => Category::Mission,
            "error" => Category::Error,
            _ => return None,
        })
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Identity of a datagram as it crosses one hop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketIds {
    pub packet_id: u32,
    pub size: u32,
    pub source: u8,
    pub destination: u8,
    pub sender: u8,
    pub receiver: u8,
    pub priority: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum Event {
    // gps
    Fix {
        lat: f64,
        lon: f64,
        alt: f64,
        speed: f64,
        climb: f64,
        heading: f64,
        odometer: f64,
    },

    // mavlink
    FrameTx {
        msgid: u8,
        seq: u8,
        sysid: u8,
        compid: u8,
        len: u16,
    },
    FrameRx {
        msgid: u8,
        seq: u8,
        sysid: u8,
        compid: u8,
        len: u16,
    },
    FrameDropped {
        msgid: u8,
        sysid: u8,
        reason: String,
    },
    HeartbeatSkipped {
        reason: String,
    },
    ProxyCreated {
        sysid: u8,
        autopilot: String,
    },
    HeartbeatTimeout {
        sysid: u8,
        silence: f64,
    },
    HeartbeatRestored {
        sysid: u8,
    },
    Command {
        command: u16,
        name: String,
        autopilot_id: u8,
        component_id: u8,
        params: [f64; 7],
    },
    CommandAccepted {
        command: u16,
    },
    CommandRejected {
        command: u16,
        reason: String,
    },
    Unsupported {
        command: u16,
    },

    // mode
    ModeChange {
        from: String,
        to: String,
        reason: String,
    },
    Failsafe {
        action: String,
        silence: f64,
    },
    EnduranceExhausted {
        airborne: bool,
    },
    WaypointReached {
        lat: f64,
        lon: f64,
        alt: f64,
    },
    LoiterExpired {},

    // mission
    Stage {
        stage: String,
    },
    TaskComplete {
        task: u32,
        elapsed: f64,
        deadline: f64,
        met: bool,
    },
    MissionComplete {
        tasks: u32,
    },
    PlanAborted {
        completed: u32,
        reason: String,
    },
    RoleChange {
        role: String,
    },
    CustodyTake {
        source: u8,
        destination: u8,
        packet_id: u32,
        held: u32,
    },
    CustodyRelease {
        source: u8,
        destination: u8,
        packet_id: u32,
        held: u32,
    },
    NodeFinal {
        odometer: f64,
        mode: String,
        armed: bool,
        tracker_calls: u64,
        heartbeats_tx: u64,
        acu_heartbeats_tx: u64,
        custody_taken: u32,
        custody_released: u32,
        custody_held: u32,
    },
    RunEnd {
        ticks: u64,
    },

    // packet
    PacketSend {
        #[serde(flatten)]
        ids: PacketIds,
        ttl: u8,
        /// Relative deadline budget in seconds.
        deadline: f64,
        /// Number of application receivers the packet is offered to.
        fanout: u32,
    },
    PacketRelay {
        #[serde(flatten)]
        ids: PacketIds,
        ttl: u8,
    },
    PacketDeliver {
        #[serde(flatten)]
        ids: PacketIds,
        hops: u8,
        late: bool,
    },
    PacketDrop {
        #[serde(flatten)]
        ids: PacketIds,
        reason: String,
    },

    // radio
    RadioTx {
        receiver: u8,
        len: u32,
        start_us: u64,
        airtime_us: u64,
        frequency: f64,
        gain: f64,
    },
    RadioRx {
        sender: u8,
        len: u32,
        rssi: f64,
        snr: f64,
        frequency: f64,
        gain: f64,
        outcome: String,
        collided: bool,
    },
    MacDrop {
        len: u32,
        reason: String,
    },

    // error
    Fault {
        message: String,
    },
}

fn q(x: f64, decimals: i32) -> f64 {
    if !x.is_finite() {
        return 0.0;
    }
    let s = 10f64.powi(decimals);
    let r = (x * s).round() / s;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

impl Event {
    pub fn category(&self) -> Category {
        use Event::*;
        match self {
            Fix { .. } => Category::Gps,
            FrameTx { .. }
            | FrameRx { .. }
            | FrameDropped { .. }
            | HeartbeatSkipped { .. }
            | ProxyCreated { .. }
            | HeartbeatTimeout { .. }
            | HeartbeatRestored { .. }
            | Command { .. }
            | CommandAccepted { .. }
            | CommandRejected { .. }
            | Unsupported { .. } => Category::Mavlink,
            ModeChange { .. }
            | Failsafe { .. }
            | EnduranceExhausted { .. }
            | WaypointReached { .. }
            | LoiterExpired {} => Category::Mode,
            Stage { .. }
            | TaskComplete { .. }
            | MissionComplete { .. }
            | PlanAborted { .. }
            | RoleChange { .. }
            | CustodyTake { .. }
            | CustodyRelease { .. }
            | NodeFinal { .. }
            | RunEnd { .. } => Category::Mission,
            PacketSend { .. } | PacketRelay { .. } | PacketDeliver { .. } | PacketDrop { .. } => {
                Category::Packet
            }
            RadioTx { .. } | RadioRx { .. } | MacDrop { .. } => Category::Radio,
            Fault { .. } => Category::Error,
        }
    }

    /// Rounds every real-valued attribute to its logged precision.
    pub fn canonical(mut self) -> Self {
        use Event::*;
        match &mut self {
            Fix {
                lat,
                lon,
                alt,
                speed,
                climb,
                heading,
                odometer,
            } => {
                *lat = q(*lat, 8);
                *lon = q(*lon, 8);
                *alt = q(*alt, 3);
                *speed = q(*speed, 3);
                *climb = q(*climb, 3);
                *heading = q(*heading, 2);
                *odometer = q(*odometer, 3);
            }
            WaypointReached { lat, lon, alt } => {
                *lat = q(*lat, 8);
                *lon = q(*lon, 8);
                *alt = q(*alt, 3);
            }
            HeartbeatTimeout { silence, .. } | Failsafe { silence, .. } => {
                *silence = q(*silence, 2)
            }
            Command { params, .. } => {
                for p in params.iter_mut() {
                    // params travel as f32; keep that value exactly
                    *p = (*p as f32) as f64;
                }
            }
            TaskComplete {
                elapsed, deadline, ..
            } => {
                *elapsed = q(*elapsed, 2);
                *deadline = q(*deadline, 2);
            }
            NodeFinal { odometer, .. } => *odometer = q(*odometer, 3),
            PacketSend { deadline, .. } => *deadline = q(*deadline, 2),
            RadioTx {
                frequency, gain, ..
            } => {
                *frequency = q(*frequency, 0);
                *gain = q(*gain, 2);
            }
            RadioRx {
                rssi,
                snr,
                frequency,
                gain,
                ..
            } => {
                *rssi = q(*rssi, 2);
                *snr = q(*snr, 2);
                *frequency = q(*frequency, 0);
                *gain = q(*gain, 2);
            }
            _ => {}
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// Simulation time in seconds (tick / 100).
    pub t: f64,
    pub node: NodeId,
    pub cat: Category,
    #[serde(flatten)]
    pub event: Event,
}

impl EventRecord {
    pub fn new(tick: Tick, node: NodeId, event: Event) -> Self {
        let event = event.canonical();
        Self {
            t: ticks_to_seconds(tick),
            node,
            cat: event.category(),
            event,
        }
    }

    pub fn tick(&self) -> Tick {
        (self.t * TICKS_PER_SECOND as f64).round() as Tick
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event records always serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub log: String,
    pub schema: u32,
    pub scenario: String,
    pub seed: u64,
    pub duration_s: f64,
    pub nodes: Vec<NodeId>,
}

impl LogHeader {
    pub fn new(
        scenario: impl Into<String>,
        seed: u64,
        duration_s: f64,
        nodes: Vec<NodeId>,
    ) -> Self {
        Self {
            log: LOG_FORMAT.to_string(),
            schema: LOG_SCHEMA_VERSION,
            scenario: scenario.into(),
            seed,
            duration_s,
            nodes,
        }
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("record at t={got} s precedes the last recorded t={last} s")]
    Ordering { last: f64, got: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing log header")]
    MissingHeader,
    #[error("unsupported log schema {0}")]
    Schema(u32),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Subscriber = Box<dyn FnMut(&EventRecord) + Send>;

/// Accumulates records for one run.
///
/// Records of the current tick are buffered and released sorted by node
/// (stable, so emission order is kept per node) when the tick is closed.
pub struct EventLog {
    header: LogHeader,
    records: Vec<EventRecord>,
    pending: Vec<EventRecord>,
    pending_tick: Tick,
    subscriber: Option<Subscriber>,
}

impl fmt::Debug for EventLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EventLog")
            .field("header", &self.header)
            .field("records", &self.records.len())
            .field("pending", &self.pending.len())
            .finish()
    }
}

impl EventLog {
    pub fn new(header: LogHeader) -> Self {
        Self {
            header,
            records: Vec::new(),
            pending: Vec::new(),
            pending_tick: 0,
            subscriber: None,
        }
    }

    /// Streams every record to `f` as it is released.
    pub fn set_subscriber(&mut self, f: Subscriber) {
        self.subscriber = Some(f);
    }

    pub fn header(&self) -> &LogHeader {
        &self.header
    }

    fn last_tick(&self) -> Option<Tick> {
        if !self.pending.is_empty() {
            return Some(self.pending_tick);
        }
        self.records.last().map(|r| r.tick())
    }

    /// Appends a record; returns its position among all records so far.
    pub fn record(&mut self, tick: Tick, node: NodeId, event: Event) -> Result<usize, LogError> {
        if let Some(last) = self.last_tick() {
            if tick < last {
                return Err(LogError::Ordering {
                    last: ticks_to_seconds(last),
                    got: ticks_to_seconds(tick),
                });
            }
        }
        if tick != self.pending_tick {
            self.close_tick();
            self.pending_tick = tick;
        }
        self.pending.push(EventRecord::new(tick, node, event));
        Ok(self.records.len() + self.pending.len() - 1)
    }

    /// Releases the buffered records of the current tick.
    pub fn close_tick(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let mut batch = std::mem::take(&mut self.pending);
        batch.sort_by_key(|r| r.node);
        if let Some(sub) = self.subscriber.as_mut() {
            for r in &batch {
                sub(r);
            }
        }
        self.records.extend(batch);
    }

    pub fn records(&mut self) -> &[EventRecord] {
        self.close_tick();
        &self.records
    }

    pub fn into_records(mut self) -> (LogHeader, Vec<EventRecord>) {
        self.close_tick();
        (self.header, self.records)
    }

    pub fn write_to<W: Write>(&mut self, mut w: W) -> io::Result<()> {
        self.close_tick();
        write_log(&mut w, &self.header, &self.records)
    }

    pub fn flush_to(&mut self, path: &Path) -> io::Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)
    }
}

pub fn write_log<W: Write>(
    w: &mut W,
    header: &LogHeader,
    records: &[EventRecord],
) -> io::Result<()> {
    writeln!(
        w,
        "{}",
        serde_json::to_string(header).map_err(io::Error::other)?
    )?;
    for r in records {
        writeln!(w, "{}", r.to_line())?;
    }
    Ok(())
}

pub fn render_log(header: &LogHeader, records: &[EventRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_log(&mut buf, header, records).expect("writing to memory cannot fail");
    buf
}

/// Parses a log produced by [`EventLog::write_to`]. An empty input yields
/// `None` for the header and no records.
pub fn parse_log(text: &str) -> Result<(Option<LogHeader>, Vec<EventRecord>), LogError> {
    let mut header = None;
    let mut records = Vec::new();
    let mut last: Option<Tick> = None;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let n = i + 1;
        if !line.ends_with('\n') {
            return Err(LogError::Parse {
                line: n,
                message: "truncated line".into(),
            });
        }
        let line = line.trim_end_matches('\n');
        if i == 0 {
            let h: LogHeader = serde_json::from_str(line).map_err(|e| LogError::Parse {
                line: n,
                message: format!("bad header: {e}"),
            })?;
            if h.log != LOG_FORMAT {
                return Err(LogError::MissingHeader);
            }
            if h.schema != LOG_SCHEMA_VERSION {
                return Err(LogError::Schema(h.schema));
            }
            header = Some(h);
            continue;
        }
        let rec: EventRecord = serde_json::from_str(line).map_err(|e| LogError::Parse {
            line: n,
            message: e.to_string(),
        })?;
        if rec.cat != rec.event.category() {
            return Err(LogError::Parse {
                line: n,
                message: format!("category {} does not match event", rec.cat),
            });
        }
        let tick = rec.tick();
        if last.is_some_and(|l| tick < l) {
            return Err(LogError::Parse {
                line: n,
                message: "time goes backwards".into(),
            });
        }
        last = Some(tick);
        records.push(rec);
    }
    Ok((header, records))
}

pub fn replay(path: &Path) -> Result<(Option<LogHeader>, Vec<EventRecord>), LogError> {
    let text = fs::read_to_string(path)?;
    parse_log(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header() -> LogHeader {
        LogHeader::new("unit", 7, 1.0, vec![NodeId(1), NodeId(2)])
    }

    fn ids() -> PacketIds {
        PacketIds {
            packet_id: 9,
            size: 48,
            source: 1,
            destination: 3,
            sender: 2,
            receiver: 255,
            priority: 1,
        }
    }

    #[test]
    fn gps_line_carries_position_speed_and_heading() {
        let r = EventRecord::new(
            150,
            NodeId(1),
            Event::Fix {
                lat: 42.123456789,
                lon: -76.5,
                alt: 10.0004,
                speed: 5.0,
                climb: 0.0,
                heading: 90.0,
                odometer: 12.5,
            },
        );
        let line = r.to_line();
        assert!(
            line.starts_with(r#"{"t":1.5,"node":1,"cat":"gps","ev":"fix","lat":42.12345679,"#),
            "{line}"
        );
        for key in ["lat", "lon", "alt", "speed", "heading"] {
            assert!(line.contains(&format!("\"{key}\":")), "{key}");
        }
    }

    #[test]
    fn packet_line_carries_six_ids() {
        let r = EventRecord::new(0, NodeId(2), Event::PacketRelay { ids: ids(), ttl: 7 });
        let line = r.to_line();
        for key in [
            "packet_id",
            "size",
            "source",
            "destination",
            "sender",
            "receiver",
            "priority",
        ] {
            assert!(line.contains(&format!("\"{key}\":")), "{key} in {line}");
        }
        let back: EventRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn time_regression_is_an_ordering_error() {
        let mut log = EventLog::new(header());
        log.record(5, NodeId(1), Event::LoiterExpired {}).unwrap();
        assert!(matches!(
            log.record(4, NodeId(1), Event::LoiterExpired {}),
            Err(LogError::Ordering { .. })
        ));
    }

    #[test]
    fn records_within_a_tick_are_sorted_by_node() {
        let mut log = EventLog::new(header());
        log.record(1, NodeId(2), Event::RunEnd { ticks: 1 })
            .unwrap();
        log.record(1, NodeId(1), Event::RunEnd { ticks: 2 })
            .unwrap();
        log.record(1, NodeId(2), Event::RunEnd { ticks: 3 })
            .unwrap();
        log.record(2, NodeId(0), Event::RunEnd { ticks: 4 })
            .unwrap();
        let order: Vec<_> = log
            .records()
            .iter()
            .map(|r| match r.event {
                Event::RunEnd { ticks } => ticks,
                _ => 0,
            })
            .collect();
        assert_eq!(order, vec![2, 1, 3, 4]);
    }

    #[test]
    fn write_and_replay_round_trip() {
        let mut log = EventLog::new(header());
        for t in 0..50u64 {
            log.record(
                t,
                NodeId((t % 3) as u8),
                Event::RadioRx {
                    sender: 1,
                    len: 116,
                    rssi: -60.123456 - t as f64 / 7.0,
                    snr: 30.3333,
                    frequency: 2.4e9,
                    gain: 0.0,
                    outcome: "delivered".into(),
                    collided: false,
                },
            )
            .unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.log");
        log.flush_to(&path).unwrap();
        let (h, recs) = replay(&path).unwrap();
        assert_eq!(h.unwrap(), header());
        assert_eq!(recs, log.records());
    }

    #[test]
    fn truncated_final_line_reports_its_number() {
        let mut log = EventLog::new(header());
        log.record(0, NodeId(1), Event::RunEnd { ticks: 0 })
            .unwrap();
        log.record(1, NodeId(1), Event::RunEnd { ticks: 1 })
            .unwrap();
        let mut buf = Vec::new();
        log.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.len() - 5];
        match parse_log(cut) {
            Err(LogError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_input_has_no_header() {
        let (h, r) = parse_log("").unwrap();
        assert!(h.is_none() && r.is_empty());
    }

    #[test]
    fn subscriber_sees_released_records() {
        use std::sync::{Arc, Mutex};
        let seen = Arc::new(Mutex::new(Vec::new()));
        let sink = seen.clone();
        let mut log = EventLog::new(header());
        log.set_subscriber(Box::new(move |r| sink.lock().unwrap().push(r.node)));
        log.record(3, NodeId(2), Event::LoiterExpired {}).unwrap();
        log.record(3, NodeId(1), Event::LoiterExpired {}).unwrap();
        log.close_tick();
        assert_eq!(*seen.lock().unwrap(), vec![NodeId(1), NodeId(2)]);
    }

    proptest! {
        #[test]
        fn canonical_values_survive_text(x in -1e6f64..1e6, y in -180f64..180.0, p in any::<f32>().prop_filter("finite", |v| v.is_finite())) {
            let r = EventRecord::new(17, NodeId(4), Event::Fix {
                lat: y / 2.0, lon: y, alt: x.abs(), speed: x, climb: -x, heading: y + 180.0, odometer: x.abs(),
            });
            let back: EventRecord = serde_json::from_str(&r.to_line()).unwrap();
            prop_assert_eq!(&back, &r);
            let c = EventRecord::new(17, NodeId(4), Event::Command {
                command: 16, name: "x".into(), autopilot_id: 1, component_id: 0, params: [p as f64; 7],
            });
            let back: EventRecord = serde_json::from_str(&c.to_line()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
