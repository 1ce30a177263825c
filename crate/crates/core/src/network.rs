//! Network layer: application send/receive buffers, the datagram header and
//! duplicate-suppressed flooding.
//!
//! PDU layout (little-endian, 16-byte header followed by the payload):
//!
//! | offset | size | field          |
//! |--------|------|----------------|
//! | 0      | 4    | packet_id      |
//! | 4      | 1    | source         |
//! | 5      | 1    | destination    |
//! | 6      | 1    | sender         |
//! | 7      | 1    | receiver       |
//! | 8      | 1    | priority       |
//! | 9      | 1    | ttl            |
//! | 10     | 4    | deadline tick  |
//! | 14     | 2    | payload length |

use std::collections::{HashSet, VecDeque};

use thiserror::Error;

use crate::logger::PacketIds;
use crate::sim::{NodeId, Tick};

pub const PDU_HEADER_LEN: usize = 16;
pub const MTU: usize = 1024;
pub const DEFAULT_TTL: u8 = 8;
pub const PRIORITY_CONTROL: u8 = 0;
pub const PRIORITY_DATA: u8 = 1;
/// Deadline value meaning "none".
pub const NO_DEADLINE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("payload of {len} bytes exceeds the {mtu}-byte MTU")]
    MtuExceeded { len: usize, mtu: usize },
    #[error("malformed PDU: {0}")]
    Malformed(&'static str),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub packet_id: u32,
    pub source: NodeId,
    pub destination: NodeId,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub priority: u8,
    pub ttl: u8,
    pub deadline_tick: u32,
    pub payload: Vec<u8>,
}

impl Packet {
    pub fn size(&self) -> usize {
        PDU_HEADER_LEN + self.payload.len()
    }

    pub fn key(&self) -> (NodeId, u32) {
        (self.source, self.packet_id)
    }

    pub fn ids(&self) -> PacketIds {
        PacketIds {
            packet_id: self.packet_id,
            size: self.size() as u32,
            source: self.source.0,
            destination: self.destination.0,
            sender: self.sender.0,
            receiver: self.receiver.0,
            priority: self.priority,
        }
    }

    pub fn is_late(&self, now: Tick) -> bool {
        self.deadline_tick != NO_DEADLINE && now > self.deadline_tick as Tick
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(self.size());
        b.extend_from_slice(&self.packet_id.to_le_bytes());
        b.extend_from_slice(&[
            self.source.0,
            self.destination.0,
            self.sender.0,
            self.receiver.0,
            self.priority,
            self.ttl,
        ]);
        b.extend_from_slice(&self.deadline_tick.to_le_bytes());
        b.extend_from_slice(&(self.payload.len() as u16).to_le_bytes());
        b.extend_from_slice(&self.payload);
        b
    }

    pub fn decode(b: &[u8]) -> Result<Packet, NetError> {
        if b.len() < PDU_HEADER_LEN {
            return Err(NetError::Malformed("short header"));
        }
        let len = u16::from_le_bytes([b[14], b[15]]) as usize;
        if b.len() != PDU_HEADER_LEN + len {
            return Err(NetError::Malformed("length mismatch"));
        }
        Ok(Packet {
            packet_id: u32::from_le_bytes([b[0], b[1], b[2], b[3]]),
            source: NodeId(b[4]),
            destination: NodeId(b[5]),
            sender: NodeId(b[6]),
            receiver: NodeId(b[7]),
            priority: b[8],
            ttl: b[9],
            deadline_tick: u32::from_le_bytes([b[10], b[11], b[12], b[13]]),
            payload: b[PDU_HEADER_LEN..].to_vec(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    Duplicate,
    TtlExpired,
    Malformed,
}

impl DropReason {
    pub fn name(self) -> &'static str {
        match self {
            DropReason::Duplicate => "duplicate",
            DropReason::TtlExpired => "ttl_expired",
            DropReason::Malformed => "malformed",
        }
    }
}

/// What the network layer decided for one incoming PDU. Relays are returned
/// to the caller rather than queued so a node behavior can intercept them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PduDecision {
    Deliver(Packet),
    Relay(Packet),
    DeliverAndRelay {
        delivered: Packet,
        relay: Packet,
    },
    Drop {
        packet: Option<Packet>,
        reason: DropReason,
    },
}

/// Chooses the next-hop receiver for a packet leaving this node, or `None`
/// to stop forwarding it.
pub trait RoutingPolicy: Send {
    fn next_hop(&mut self, me: NodeId, packet: &Packet) -> Option<NodeId>;
}

/// Every relay is a link-layer broadcast.
#[derive(Clone, Copy, Debug, Default)]
pub struct Flooding;

impl RoutingPolicy for Flooding {
    fn next_hop(&mut self, _me: NodeId, _packet: &Packet) -> Option<NodeId> {
        Some(NodeId::BROADCAST)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub relayed: u64,
    pub duplicates: u64,
    pub expired: u64,
    pub malformed: u64,
    /// Times the received signal was raised toward the agent.
    pub signals: u64,
}

pub struct Network {
    me: NodeId,
    next_id: u32,
    ttl: u8,
    mtu: usize,
    control: VecDeque<Packet>,
    data: VecDeque<Packet>,
    receive_buffer: VecDeque<Packet>,
    seen: HashSet<(NodeId, u32)>,
    routing: Box<dyn RoutingPolicy>,
    stats: NetStats,
}

impl Network {
    pub fn new(me: NodeId) -> Self {
        Self {
            me,
            next_id: 1,
            ttl: DEFAULT_TTL,
            mtu: MTU,
            control: VecDeque::new(),
            data: VecDeque::new(),
            receive_buffer: VecDeque::new(),
            seen: HashSet::new(),
            routing: Box::new(Flooding),
            stats: NetStats::default(),
        }
    }

    pub fn with_routing(mut self, routing: Box<dyn RoutingPolicy>) -> Self {
        self.routing = routing;
        self
    }

    pub fn id(&self) -> NodeId {
        self.me
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn initial_ttl(&self) -> u8 {
        self.ttl
    }

    /// Builds a packet and appends it to the send FIFO of its priority.
    pub fn send_data(
        &mut self,
        dest: NodeId,
        priority: u8,
        deadline_tick: u32,
        payload: &[u8],
    ) -> Result<Packet, NetError> {
        self.send_with_ttl(dest, priority, deadline_tick, payload, self.ttl)
    }

    pub fn send_with_ttl(
        &mut self,
        dest: NodeId,
        priority: u8,
        deadline_tick: u32,
        payload: &[u8],
        ttl: u8,
    ) -> Result<Packet, NetError> {
        if payload.len() > self.mtu {
            return Err(NetError::MtuExceeded {
                len: payload.len(),
                mtu: self.mtu,
            });
        }
        let packet = Packet {
            packet_id: self.next_id,
            source: self.me,
            destination: dest,
            sender: self.me,
            receiver: NodeId::BROADCAST,
            priority,
            ttl: ttl.max(1),
            deadline_tick,
            payload: payload.to_vec(),
        };
        self.next_id = self.next_id.wrapping_add(1);
        self.seen.insert(packet.key());
        self.stats.sent += 1;
        self.enqueue(packet.clone());
        Ok(packet)
    }

    fn enqueue(&mut self, packet: Packet) {
        if packet.priority == PRIORITY_CONTROL {
            self.control.push_back(packet);
        } else {
            self.data.push_back(packet);
        }
    }

    /// Queues a relay produced by [`Network::on_pdu_from_mac`].
    pub fn queue_relay(&mut self, packet: Packet) {
        self.stats.relayed += 1;
        self.enqueue(packet);
    }

    /// Re-injects a packet carried in custody, as if freshly relayed here.
    pub fn reinject(&mut self, mut packet: Packet) {
        packet.sender = self.me;
        packet.receiver = NodeId::BROADCAST;
        packet.ttl = self.ttl;
        self.seen.insert(packet.key());
        self.queue_relay(packet);
    }

    pub fn pending(&self) -> usize {
        self.control.len() + self.data.len()
    }

    /// Next PDU for the MAC, control traffic first.
    pub fn next_pdu(&mut self) -> Option<Packet> {
        self.control.pop_front().or_else(|| self.data.pop_front())
    }

    /// Oldest received payload, or an empty vector when none is buffered.
    pub fn get_data(&mut self) -> Vec<u8> {
        self.receive_buffer
            .pop_front()
            .map(|p| p.payload)
            .unwrap_or_default()
    }

    pub fn receive_packet(&mut self) -> Option<Packet> {
        self.receive_buffer.pop_front()
    }

    pub fn received_len(&self) -> usize {
        self.receive_buffer.len()
    }

    fn deliver(&mut self, packet: Packet) {
        self.receive_buffer.push_back(packet);
        self.stats.delivered += 1;
        self.stats.signals += 1;
    }

    fn relay_copy(&mut self, packet: &Packet) -> Option<Packet> {
        if packet.ttl <= 1 {
            return None;
        }
        let receiver = self.routing.next_hop(self.me, packet)?;
        Some(Packet {
            ttl: packet.ttl - 1,
            sender: self.me,
            receiver,
            ..packet.clone()
        })
    }

    /// Classifies one PDU handed up by the MAC. Deliveries are buffered here;
    /// relays are returned for the caller to queue.
    pub fn on_pdu_from_mac(&mut self, pdu: &[u8]) -> PduDecision {
        let packet = match Packet::decode(pdu) {
            Ok(p) => p,
            Err(_) => {
                self.stats.malformed += 1;
                return PduDecision::Drop {
                    packet: None,
                    reason: DropReason::Malformed,
                };
            }
        };
        if !self.seen.insert(packet.key()) {
            self.stats.duplicates += 1;
            return PduDecision::Drop {
                packet: Some(packet),
                reason: DropReason::Duplicate,
            };
        }
        if packet.destination == self.me {
            self.deliver(packet.clone());
            return PduDecision::Deliver(packet);
        }
        let relay = self.relay_copy(&packet);
        if packet.destination.is_broadcast() {
            self.deliver(packet.clone());
            return match relay {
                Some(relay) => PduDecision::DeliverAndRelay {
                    delivered: packet,
                    relay,
                },
                None => PduDecision::Deliver(packet),
            };
        }
        match relay {
            Some(relay) => PduDecision::Relay(relay),
            None => {
                self.stats.expired += 1;
                PduDecision::Drop {
                    packet: Some(packet),
                    reason: DropReason::TtlExpired,
                }
            }
        }
    }
}
