//! Media links between the autopilot control unit and the flight controller.
//!
//! A serial link serializes bytes at `baud_rate / 10` bytes per second (8N1
//! framing) and delivers them in order. Delivery happens in the tick during
//! which the last byte of a send finishes. In-process links deliver in the
//! tick they were sent.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::sim::{Tick, TICKS_PER_SECOND};

/// Bits on the wire per payload byte (start + 8 data + stop).
pub const BITS_PER_BYTE: u64 = 10;
pub const DEFAULT_BAUD: u32 = 115_200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkKind {
    Serial,
    InProc,
    Tcp,
    Udp,
    Telemetry,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkConfig {
    pub kind: LinkKind,
    pub port_name: String,
    pub baud_rate: u32,
}

impl LinkConfig {
    pub fn serial(port_name: impl Into<String>, baud_rate: u32) -> Self {
        Self {
            kind: LinkKind::Serial,
            port_name: port_name.into(),
            baud_rate,
        }
    }

    pub fn inproc(name: impl Into<String>) -> Self {
        Self {
            kind: LinkKind::InProc,
            port_name: name.into(),
            baud_rate: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkId(pub u32);

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "link{}", self.0)
    }
}

/// The two ends of a link. By convention `A` is the companion computer and
/// `B` the flight controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum End {
    A,
    B,
}

impl End {
    pub fn peer(self) -> End {
        match self {
            End::A => End::B,
            End::B => End::A,
        }
    }

    fn index(self) -> usize {
        match self {
            End::A => 0,
            End::B => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("port {0} is already open")]
    AlreadyOpen(String),
    #[error("no such link {0}")]
    UnknownLink(LinkId),
    #[error("{0} is down")]
    LinkDown(LinkId),
    #[error("serial link {0} needs a positive baud rate")]
    InvalidBaud(String),
    #[error("link kind {0:?} is not implemented")]
    Unsupported(LinkKind),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub bytes_sent: u64,
    pub bytes_delivered: u64,
    /// Bytes still in flight when the link was disconnected.
    pub bytes_dropped: u64,
}

/// One direction of a link.
#[derive(Clone, Debug, Default)]
struct Pipe {
    /// End of the last queued transmission, in units of `1 / (100 * baud)` s
    /// so that both ticks and bit times are integers.
    busy_until: u128,
    pending: VecDeque<(Tick, Vec<u8>)>,
}

#[derive(Clone, Debug)]
pub struct Link {
    id: LinkId,
    config: LinkConfig,
    connected: bool,
    pipes: [Pipe; 2],
    stats: LinkStats,
}

impl Link {
    pub fn id(&self) -> LinkId {
        self.id
    }

    pub fn config(&self) -> &LinkConfig {
        &self.config
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    fn delivery_tick(&mut self, from: End, len: usize, now: Tick) -> Tick {
        match self.config.kind {
            LinkKind::Serial => {
                let baud = self.config.baud_rate as u128;
                let units_per_tick = baud * 100 / TICKS_PER_SECOND as u128;
                let pipe = &mut self.pipes[from.index()];
                let start = pipe.busy_until.max(now as u128 * units_per_tick);
                // one bit lasts 100 units
                let end = start + len as u128 * BITS_PER_BYTE as u128 * 100;
                pipe.busy_until = end;
                (end / units_per_tick) as Tick
            }
            _ => now,
        }
    }
}

/// Owns every link of one node, keyed by port name.
#[derive(Clone, Debug, Default)]
pub struct LinkManager {
    links: Vec<Link>,
}

impl LinkManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open_link(&mut self, config: LinkConfig) -> Result<LinkId, LinkError> {
        if self
            .links
            .iter()
            .any(|l| l.config.port_name == config.port_name)
        {
            return Err(LinkError::AlreadyOpen(config.port_name));
        }
        match config.kind {
            LinkKind::Serial if config.baud_rate == 0 => {
                return Err(LinkError::InvalidBaud(config.port_name))
            }
            LinkKind::Serial | LinkKind::InProc => {}
            other => return Err(LinkError::Unsupported(other)),
        }
        let id = LinkId(self.links.len() as u32);
        self.links.push(Link {
            id,
            config,
            connected: false,
            pipes: Default::default(),
            stats: LinkStats::default(),
        });
        Ok(id)
    }

    pub fn link(&self, id: LinkId) -> Result<&Link, LinkError> {
        self.links
            .get(id.0 as usize)
            .ok_or(LinkError::UnknownLink(id))
    }

    fn link_mut(&mut self, id: LinkId) -> Result<&mut Link, LinkError> {
        self.links
            .get_mut(id.0 as usize)
            .ok_or(LinkError::UnknownLink(id))
    }

    pub fn connect_link(&mut self, id: LinkId) -> Result<(), LinkError> {
        self.link_mut(id)?.connected = true;
        Ok(())
    }

    /// Drops bytes still in flight; already delivered bytes are unaffected.
    pub fn disconnect_link(&mut self, id: LinkId) -> Result<(), LinkError> {
        let link = self.link_mut(id)?;
        link.connected = false;
        for pipe in &mut link.pipes {
            let dropped: usize = pipe.pending.drain(..).map(|(_, b)| b.len()).sum();
            link.stats.bytes_dropped += dropped as u64;
            pipe.busy_until = 0;
        }
        Ok(())
    }

    pub fn is_connected(&self, id: LinkId) -> bool {
        self.link(id).map(|l| l.connected).unwrap_or(false)
    }

    /// Queues `data` from end `from` toward its peer and returns the tick in
    /// which the peer can read it.
    pub fn send_bytes(
        &mut self,
        id: LinkId,
        from: End,
        data: &[u8],
        now: Tick,
    ) -> Result<Tick, LinkError> {
        let link = self.link_mut(id)?;
        if !link.connected {
            return Err(LinkError::LinkDown(id));
        }
        let at = link.delivery_tick(from, data.len(), now);
        link.stats.bytes_sent += data.len() as u64;
        link.pipes[from.index()]
            .pending
            .push_back((at, data.to_vec()));
        Ok(at)
    }

    /// Returns every byte addressed to `to` whose delivery tick is `<= now`.
    pub fn poll(&mut self, id: LinkId, to: End, now: Tick) -> Vec<u8> {
        let Ok(link) = self.link_mut(id) else {
            return Vec::new();
        };
        let pipe = &mut link.pipes[to.peer().index()];
        let mut out = Vec::new();
        while let Some((at, _)) = pipe.pending.front() {
            if *at > now {
                break;
            }
            let (_, bytes) = pipe.pending.pop_front().expect("front exists");
            out.extend(bytes);
        }
        link.stats.bytes_delivered += out.len() as u64;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn serial() -> (LinkManager, LinkId) {
        let mut m = LinkManager::new();
        let id = m
            .open_link(LinkConfig::serial("ttyACM0", DEFAULT_BAUD))
            .unwrap();
        m.connect_link(id).unwrap();
        (m, id)
    }

    #[test]
    fn open_and_uniqueness() {
        let mut m = LinkManager::new();
        let id = m.open_link(LinkConfig::serial("ttyACM0", 115_200)).unwrap();
        assert!(!m.is_connected(id));
        assert_eq!(
            m.open_link(LinkConfig::serial("ttyACM0", 57_600)),
            Err(LinkError::AlreadyOpen("ttyACM0".into()))
        );
        assert!(m.open_link(LinkConfig::inproc("loop")).is_ok());
        assert_eq!(
            m.open_link(LinkConfig::serial("ttyUSB1", 0)),
            Err(LinkError::InvalidBaud("ttyUSB1".into()))
        );
        let udp = LinkConfig {
            kind: LinkKind::Udp,
            port_name: "udp:14550".into(),
            baud_rate: 0,
        };
        assert_eq!(m.open_link(udp), Err(LinkError::Unsupported(LinkKind::Udp)));
    }

    #[test]
    fn one_second_of_bytes_takes_one_second() {
        // 11,520 bytes * 10 bits / 115,200 bps = 1.0 s
        let (mut m, id) = serial();
        let at = m.send_bytes(id, End::A, &vec![0x55; 11_520], 40).unwrap();
        assert_eq!(at, 140);
        assert!(m.poll(id, End::B, 139).is_empty());
        assert_eq!(m.poll(id, End::B, 140).len(), 11_520);
    }

    #[test]
    fn empty_send_arrives_same_tick() {
        let (mut m, id) = serial();
        assert_eq!(m.send_bytes(id, End::A, &[], 7).unwrap(), 7);
    }

    #[test]
    fn short_frame_arrives_same_tick() {
        let (mut m, id) = serial();
        // 41 bytes take 3.56 ms
        assert_eq!(m.send_bytes(id, End::A, &[0; 41], 3).unwrap(), 3);
        assert_eq!(m.poll(id, End::B, 3).len(), 41);
    }

    #[test]
    fn down_link_rejects_and_keeps_delivered_bytes() {
        let (mut m, id) = serial();
        m.send_bytes(id, End::A, &[1, 2, 3], 0).unwrap();
        m.send_bytes(id, End::A, &vec![9; 2000], 0).unwrap();
        assert_eq!(m.poll(id, End::B, 0), vec![1, 2, 3]);
        m.disconnect_link(id).unwrap();
        assert_eq!(
            m.send_bytes(id, End::A, &[4], 1),
            Err(LinkError::LinkDown(id))
        );
        assert_eq!(m.link(id).unwrap().stats().bytes_dropped, 2000);
        assert_eq!(m.link(id).unwrap().stats().bytes_delivered, 3);
    }

    #[test]
    fn inproc_is_unthrottled() {
        let mut m = LinkManager::new();
        let id = m.open_link(LinkConfig::inproc("loop")).unwrap();
        m.connect_link(id).unwrap();
        assert_eq!(m.send_bytes(id, End::B, &vec![0; 100_000], 12).unwrap(), 12);
        assert_eq!(m.poll(id, End::A, 12).len(), 100_000);
    }

    #[test]
    fn directions_are_independent() {
        let (mut m, id) = serial();
        m.send_bytes(id, End::A, &vec![1; 11_520], 0).unwrap();
        assert_eq!(m.send_bytes(id, End::B, &[2; 12], 0).unwrap(), 0);
        assert_eq!(m.poll(id, End::A, 0), vec![2; 12]);
    }

    proptest! {
        #[test]
        fn fifo_and_throughput_bound(sends in prop::collection::vec((0u64..50, 0usize..3000), 1..20)) {
            let (mut m, id) = serial();
            let mut now = 0;
            let mut expected = Vec::new();
            let mut last_at = 0;
            for (i, (gap, len)) in sends.iter().enumerate() {
                now += gap;
                let data = vec![i as u8; *len];
                let at = m.send_bytes(id, End::A, &data, now).unwrap();
                prop_assert!(at >= last_at);
                last_at = at;
                expected.extend(data);
            }
            let mut got = Vec::new();
            for t in 0..=last_at {
                let chunk = m.poll(id, End::B, t);
                // bits delivered by the end of tick t never exceed the line rate
                got.extend(chunk);
                let max_bytes = (t + 1) * DEFAULT_BAUD as u64 / 100 / BITS_PER_BYTE;
                prop_assert!(got.len() as u64 <= max_bytes);
            }
            prop_assert_eq!(got, expected);
        }
    }
}
