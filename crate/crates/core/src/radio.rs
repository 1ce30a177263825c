//! MAC and PHY: frame format with CRC32, channel access, and a shared
//! medium that decides per receiver whether each frame arrives.
//!
//! MAC frame layout (little-endian):
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | sync `7E 55 AA 7E`          |
//! | 4      | 2    | body length                |
//! | 6      | 1    | hop sender                 |
//! | 7      | 1    | hop receiver               |
//! | 8      | 2    | sequence                   |
//! | 10     | 2    | reserved, zero             |
//! | 12     | n    | body (one network PDU)     |
//! | 12 + n | 4    | CRC32 over header and body |
//!
//! The medium runs in microseconds. Received power follows log-distance
//! path loss; interference from overlapping frames and jammers is summed in
//! milliwatts; the packet error rate is a logistic function of SNR.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::logger::Event;
use crate::sim::{NodeId, RngLane, RngStream};

pub const MAC_SYNC: [u8; 4] = [0x7E, 0x55, 0xAA, 0x7E];
pub const MAC_HEADER_LEN: usize = 12;
pub const MAC_CRC_LEN: usize = 4;
pub const MAC_OVERHEAD: usize = MAC_HEADER_LEN + MAC_CRC_LEN;

/// Transmissions closer than this in carrier frequency share a channel.
pub const CO_CHANNEL_HZ: f64 = 1e6;
/// Overlapping frames received within this many dB of each other both fail.
pub const CAPTURE_MARGIN_DB: f64 = 6.0;
/// Frames whose noise-only SNR falls this many curve slopes below the
/// threshold are neither decoded nor sensed.
pub const SENSITIVITY_SLOPES: f64 = 3.0;

pub const MIN_FREQUENCY_HZ: f64 = 70e6;
pub const MAX_FREQUENCY_HZ: f64 = 6e9;

fn default_tx_power() -> f64 {
    10.0
}
fn default_frequency() -> f64 {
    2.4e9
}
fn default_bitrate() -> u32 {
    250_000
}
fn default_noise_floor() -> f64 {
    -95.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioConfig {
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
    #[serde(default = "default_frequency")]
    pub frequency_hz: f64,
    #[serde(default = "default_bitrate")]
    pub bitrate: u32,
    #[serde(default = "default_noise_floor")]
    pub noise_floor_dbm: f64,
    #[serde(default)]
    pub rx_gain_db: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: default_tx_power(),
            frequency_hz: default_frequency(),
            bitrate: default_bitrate(),
            noise_floor_dbm: default_noise_floor(),
            rx_gain_db: 0.0,
        }
    }
}

impl RadioConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(MIN_FREQUENCY_HZ..=MAX_FREQUENCY_HZ).contains(&self.frequency_hz) {
            v.push(format!(
                "frequency_hz {} outside {MIN_FREQUENCY_HZ}..={MAX_FREQUENCY_HZ}",
                self.frequency_hz
            ));
        }
        if self.bitrate == 0 {
            v.push("bitrate must be positive".into());
        }
        v
    }

    /// Airtime of `len` bytes in whole microseconds, rounded up.
    pub fn airtime_us(&self, len: usize) -> u64 {
        (len as u64 * 8 * 1_000_000).div_ceil(self.bitrate as u64)
    }
}

fn default_pl0() -> f64 {
    40.0
}
fn default_exponent() -> f64 {
    2.7
}
fn default_d0() -> f64 {
    1.0
}
fn default_threshold() -> f64 {
    5.0
}
fn default_slope() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    #[serde(default = "default_pl0")]
    pub pl0_db: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default = "default_d0")]
    pub d0_m: f64,
    #[serde(default = "default_threshold")]
    pub snr_threshold_db: f64,
    #[serde(default = "default_slope")]
    pub slope_db: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            pl0_db: default_pl0(),
            exponent: default_exponent(),
            d0_m: default_d0(),
            snr_threshold_db: default_threshold(),
            slope_db: default_slope(),
        }
    }
}

impl ChannelParams {
    pub fn problems(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.d0_m <= 0.0 {
            v.push("d0_m must be positive".into());
        }
        if self.exponent <= 0.0 {
            v.push("exponent must be positive".into());
        }
        if self.slope_db <= 0.0 {
            v.push("slope_db must be positive".into());
        }
        v
    }

    /// Log-distance path loss in dB; distances below `d0` clamp to `d0`.
    pub fn path_loss(&self, d: f64) -> f64 {
        let d = d.max(self.d0_m);
        self.pl0_db + 10.0 * self.exponent * (d / self.d0_m).log10()
    }

    /// Packet error rate for a given SNR.
    pub fn per(&self, snr_db: f64) -> f64 {
        1.0 / (1.0 + ((snr_db - self.snr_threshold_db) / self.slope_db).exp())
    }

    /// Lowest noise-only SNR at which a frame is decoded or sensed.
    pub fn sensitivity_snr(&self) -> f64 {
        self.snr_threshold_db - SENSITIVITY_SLOPES * self.slope_db
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

pub fn co_channel(a_hz: f64, b_hz: f64) -> bool {
    (a_hz - b_hz).abs() < CO_CHANNEL_HZ
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RxOutcome {
    Delivered,
    CrcFail,
    BelowSensitivity,
}

impl RxOutcome {
    pub fn name(self) -> &'static str {
        match self {
            RxOutcome::Delivered => "delivered",
            RxOutcome::CrcFail => "crc_fail",
            RxOutcome::BelowSensitivity => "below_sensitivity",
        }
    }
}

impl fmt::Display for RxOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReceiveDecision {
    pub rssi: f64,
    pub snr: f64,
    pub per: f64,
    pub outcome: RxOutcome,
}

/// Outcome of one frame at one receiver. `u` is a uniform draw in `[0, 1)`
/// from the receiver's channel stream; `collided` forces a CRC failure.
pub fn receive_decision(
    ch: &ChannelParams,
    rssi: f64,
    noise_floor_dbm: f64,
    interference_mw: f64,
    collided: bool,
    u: f64,
) -> ReceiveDecision {
    let snr = rssi - mw_to_dbm(dbm_to_mw(noise_floor_dbm) + interference_mw);
    let per = ch.per(snr);
    let outcome = if rssi - noise_floor_dbm < ch.sensitivity_snr() {
        RxOutcome::BelowSensitivity
    } else if collided || u < per {
        RxOutcome::CrcFail
    } else {
        RxOutcome::Delivered
    };
    ReceiveDecision {
        rssi,
        snr,
        per,
        outcome,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame shorter than header and checksum")]
    Short,
    #[error("bad sync word")]
    Sync,
    #[error("length field disagrees with frame size")]
    Length,
    #[error("CRC32 mismatch")]
    Crc,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacFrame {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub seq: u16,
    pub body: Vec<u8>,
}

impl MacFrame {
    pub fn encoded_len(&self) -> usize {
        MAC_OVERHEAD + self.body.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(self.encoded_len());
        b.extend_from_slice(&MAC_SYNC);
        b.extend_from_slice(&(self.body.len() as u16).to_le_bytes());
        b.push(self.sender.0);
        b.push(self.receiver.0);
        b.extend_from_slice(&self.seq.to_le_bytes());
        b.extend_from_slice(&[0, 0]);
        b.extend_from_slice(&self.body);
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Result<MacFrame, FrameError> {
        if b.len() < MAC_OVERHEAD {
            return Err(FrameError::Short);
        }
        let (data, crc) = b.split_at(b.len() - MAC_CRC_LEN);
        let crc = u32::from_le_bytes([crc[0], crc[1], crc[2], crc[3]]);
        if crc32fast::hash(data) != crc {
            return Err(FrameError::Crc);
        }
        if data[..4] != MAC_SYNC {
            return Err(FrameError::Sync);
        }
        let len = u16::from_le_bytes([data[4], data[5]]) as usize;
        if len != data.len() - MAC_HEADER_LEN {
            return Err(FrameError::Length);
        }
        Ok(MacFrame {
            sender: NodeId(data[6]),
            receiver: NodeId(data[7]),
            seq: u16::from_le_bytes([data[8], data[9]]),
            body: data[MAC_HEADER_LEN..].to_vec(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacMode {
    /// Carrier sense with random backoff.
    Csma,
    /// Transmit whenever a frame is ready, without sensing.
    Aloha,
    /// Fixed round-robin time slots.
    Tdma,
}

fn default_backoff_slot() -> u64 {
    1_000
}
fn default_cw_min() -> u32 {
    16
}
fn default_cw_max() -> u32 {
    128
}
fn default_retry_limit() -> u32 {
    7
}
fn default_tdma_slot() -> u64 {
    50_000
}
fn default_queue_limit() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacConfig {
    pub mode: MacMode,
    #[serde(default = "default_backoff_slot")]
    pub backoff_slot_us: u64,
    #[serde(default = "default_cw_min")]
    pub cw_min: u32,
    #[serde(default = "default_cw_max")]
    pub cw_max: u32,
    /// A frame is dropped after this many busy senses in a row are exceeded.
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default = "default_tdma_slot")]
    pub tdma_slot_us: u64,
    #[serde(default = "default_queue_limit")]
    pub queue_limit: usize,
}

impl MacConfig {
    pub fn new(mode: MacMode) -> Self {
        Self {
            mode,
            backoff_slot_us: default_backoff_slot(),
            cw_min: default_cw_min(),
            cw_max: default_cw_max(),
            retry_limit: default_retry_limit(),
            tdma_slot_us: default_tdma_slot(),
            queue_limit: default_queue_limit(),
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.cw_min == 0 || self.cw_max < self.cw_min {
            v.push("need 0 < cw_min <= cw_max".into());
        }
        if self.tdma_slot_us == 0 || self.backoff_slot_us == 0 {
            v.push("slot lengths must be positive".into());
        }
        if self.queue_limit == 0 {
            v.push("queue_limit must be positive".into());
        }
        v
    }
}

impl Default for MacConfig {
    fn default() -> Self {
        Self::new(MacMode::Csma)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "lowercase", deny_unknown_fields)]
pub enum JammerBehavior {
    /// On for `duty_cycle` of every `period_s`, starting at t = 0.
    Passive {
        #[serde(default = "one")]
        duty_cycle: f64,
        #[serde(default = "one")]
        period_s: f64,
    },
    /// On only while it senses cooperative transmissions.
    Adaptive,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct Jammer {
    pub node: NodeId,
    pub position: GeoPoint,
    pub power_dbm: f64,
    pub frequency_hz: f64,
    pub behavior: JammerBehavior,
    pub noise_floor_dbm: f64,
}

impl Jammer {
    /// True if the passive schedule is on at any instant of `[start, end)`.
    fn passive_on(duty: f64, period_s: f64, start: u64, end: u64) -> bool {
        if duty <= 0.0 {
            return false;
        }
        if duty >= 1.0 {
            return true;
        }
        let period = (period_s * 1e6).round().max(1.0) as u64;
        let on = (duty * period as f64).round() as u64;
        let mut k = start / period;
        while k * period < end {
            let (a, b) = (k * period, k * period + on);
            if a < end && b > start {
                return true;
            }
            k += 1;
        }
        false
    }
}

#[derive(Clone, Debug)]
struct Outgoing {
    bytes: Vec<u8>,
    receiver: NodeId,
}

struct Station {
    radio: RadioConfig,
    position: GeoPoint,
    queue: VecDeque<Outgoing>,
    seq: u16,
    busy_count: u32,
    cw: u32,
    attempt_pending: bool,
    tx_until: u64,
    mac_rng: RngStream,
    rx_rng: RngStream,
}

#[derive(Clone, Debug)]
struct Transmission {
    id: u64,
    sender: NodeId,
    receiver: NodeId,
    start: u64,
    end: u64,
    bytes: Vec<u8>,
    power_dbm: f64,
    frequency_hz: f64,
    position: GeoPoint,
    done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum MediumEvent {
    // ends sort before attempts at the same instant: the channel is free at
    // the end time of a frame
    TxEnd(u64),
    Attempt(NodeId),
}

/// One PDU handed up from the MAC.
#[derive(Clone, Debug, PartialEq)]
pub struct Received {
    pub sender: NodeId,
    pub pdu: Vec<u8>,
    pub rssi: f64,
    pub at_us: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MediumStats {
    pub frames_sent: u64,
    pub delivered: u64,
    pub crc_fail: u64,
    pub collided: u64,
    pub below_sensitivity: u64,
    pub dropped: u64,
    /// CRC failures caught by the receiver's frame check.
    pub crc_rejected: u64,
    /// Damaged frames that nonetheless passed the check; must stay zero.
    pub silent_corruption: u64,
    pub jammed_frames: u64,
}

pub struct Medium {
    mac: MacConfig,
    channel: ChannelParams,
    seed: u64,
    stations: BTreeMap<NodeId, Station>,
    jammers: Vec<Jammer>,
    history: Vec<Transmission>,
    queue: BTreeMap<(u64, MediumEvent, u64), ()>,
    seq: u64,
    next_tx: u64,
    now_us: u64,
    inbox: BTreeMap<NodeId, Vec<Received>>,
    stats: MediumStats,
    per_sender_delivered: BTreeMap<NodeId, u64>,
}

impl Medium {
    pub fn new(mac: MacConfig, channel: ChannelParams, seed: u64) -> Self {
        Self {
            mac,
            channel,
            seed,
            stations: BTreeMap::new(),
            jammers: Vec::new(),
            history: Vec::new(),
            queue: BTreeMap::new(),
            seq: 0,
            next_tx: 0,
            now_us: 0,
            inbox: BTreeMap::new(),
            stats: MediumStats::default(),
            per_sender_delivered: BTreeMap::new(),
        }
    }

    pub fn mac(&self) -> &MacConfig {
        &self.mac
    }

    pub fn channel(&self) -> &ChannelParams {
        &self.channel
    }

    pub fn stats(&self) -> MediumStats {
        self.stats
    }

    /// Frames from `sender` that reached their addressed receiver intact.
    pub fn delivered_from(&self, sender: NodeId) -> u64 {
        self.per_sender_delivered.get(&sender).copied().unwrap_or(0)
    }

    pub fn add_station(&mut self, node: NodeId, radio: RadioConfig, position: GeoPoint) {
        self.stations.insert(
            node,
            Station {
                radio,
                position,
                queue: VecDeque::new(),
                seq: 0,
                busy_count: 0,
                cw: self.mac.cw_min,
                attempt_pending: false,
                tx_until: 0,
                mac_rng: RngStream::new(self.seed, node, RngLane::Mac),
                rx_rng: RngStream::new(self.seed, node, RngLane::Channel),
            },
        );
    }

    pub fn add_jammer(&mut self, jammer: Jammer) {
        self.jammers.push(jammer);
    }

    pub fn set_position(&mut self, node: NodeId, position: GeoPoint) {
        if let Some(s) = self.stations.get_mut(&node) {
            s.position = position;
        }
    }

    pub fn queue_len(&self, node: NodeId) -> usize {
        self.stations.get(&node).map(|s| s.queue.len()).unwrap_or(0)
    }

    pub fn has_room(&self, node: NodeId) -> bool {
        self.queue_len(node) < self.mac.queue_limit
    }

    /// Rank of `node` in the TDMA schedule and the schedule length.
    pub fn tdma_rank(&self, node: NodeId) -> Option<(u64, u64)> {
        let rank = self.stations.keys().position(|&k| k == node)?;
        Some((rank as u64, self.stations.len() as u64))
    }

    /// Whether `node` owns the TDMA slot containing `t_us`.
    pub fn tdma_slot_for(&self, node: NodeId, t_us: u64) -> bool {
        match self.tdma_rank(node) {
            Some((rank, n)) => (t_us / self.mac.tdma_slot_us) % n == rank,
            None => false,
        }
    }

    fn push_event(&mut self, at: u64, ev: MediumEvent) {
        self.seq += 1;
        self.queue.insert((at, ev, self.seq), ());
    }

    /// Frames a PDU and appends it to the node's transmit queue.
    pub fn submit(
        &mut self,
        node: NodeId,
        receiver: NodeId,
        pdu: &[u8],
        now_us: u64,
    ) -> Result<usize, &'static str> {
        let limit = self.mac.queue_limit;
        let st = self.stations.get_mut(&node).ok_or("unknown station")?;
        if st.queue.len() >= limit {
            return Err("queue_full");
        }
        let frame = MacFrame {
            sender: node,
            receiver,
            seq: st.seq,
            body: pdu.to_vec(),
        };
        st.seq = st.seq.wrapping_add(1);
        let bytes = frame.encode();
        let len = bytes.len();
        st.queue.push_back(Outgoing { bytes, receiver });
        if !st.attempt_pending {
            st.attempt_pending = true;
            let at = now_us.max(st.tx_until);
            self.push_event(at, MediumEvent::Attempt(node));
        }
        Ok(len)
    }

    fn rssi_at(&self, power_dbm: f64, from: &GeoPoint, to: &GeoPoint, rx_gain: f64) -> f64 {
        power_dbm - self.channel.path_loss(from.distance_to(to)) + rx_gain
    }

    fn senses(&self, tx: &Transmission, node: NodeId) -> bool {
        let st = &self.stations[&node];
        if !co_channel(tx.frequency_hz, st.radio.frequency_hz) {
            return false;
        }
        let rssi = self.rssi_at(
            tx.power_dbm,
            &tx.position,
            &st.position,
            st.radio.rx_gain_db,
        );
        rssi - st.radio.noise_floor_dbm >= self.channel.sensitivity_snr()
    }

    /// End of the latest decodable transmission on air at `t`, if any.
    fn sense(&self, node: NodeId, t: u64) -> Option<u64> {
        self.history
            .iter()
            .filter(|g| g.sender != node && g.start <= t && t < g.end)
            .filter(|g| self.senses(g, node))
            .map(|g| g.end)
            .max()
    }

    /// Processes every medium event strictly before `until_us`.
    pub fn advance(&mut self, until_us: u64, out: &mut Vec<(NodeId, Event)>) {
        while let Some((&(at, ev, seq), _)) = self.queue.iter().next() {
            if at >= until_us {
                break;
            }
            self.queue.remove(&(at, ev, seq));
            self.now_us = at;
            match ev {
                MediumEvent::Attempt(node) => self.attempt(node, at, out),
                MediumEvent::TxEnd(id) => self.finish(id, at, out),
            }
        }
        self.now_us = self.now_us.max(until_us);
    }

    fn drop_front(&mut self, node: NodeId, reason: &str, t: u64, out: &mut Vec<(NodeId, Event)>) {
        let st = self.stations.get_mut(&node).expect("station exists");
        if let Some(f) = st.queue.pop_front() {
            out.push((
                node,
                Event::MacDrop {
                    len: f.bytes.len() as u32,
                    reason: reason.into(),
                },
            ));
            self.stats.dropped += 1;
        }
        st.busy_count = 0;
        st.cw = self.mac.cw_min;
        if !st.queue.is_empty() {
            st.attempt_pending = true;
            self.push_event(t, MediumEvent::Attempt(node));
        }
    }

    fn attempt(&mut self, node: NodeId, t: u64, out: &mut Vec<(NodeId, Event)>) {
        let st = self.stations.get_mut(&node).expect("station exists");
        st.attempt_pending = false;
        let Some(front) = st.queue.front() else {
            return;
        };
        let airtime = st.radio.airtime_us(front.bytes.len());
        match self.mac.mode {
            MacMode::Aloha => self.transmit(node, t, out),
            MacMode::Csma => match self.sense(node, t) {
                None => self.transmit(node, t, out),
                Some(busy_until) => {
                    let st = self.stations.get_mut(&node).expect("station exists");
                    st.busy_count += 1;
                    if st.busy_count > self.mac.retry_limit {
                        self.drop_front(node, "retry_limit", t, out);
                        return;
                    }
                    let slots = st.mac_rng.below(st.cw as u64);
                    st.cw = (st.cw * 2).min(self.mac.cw_max);
                    st.attempt_pending = true;
                    let at = busy_until + slots * self.mac.backoff_slot_us;
                    self.push_event(at, MediumEvent::Attempt(node));
                }
            },
            MacMode::Tdma => {
                let slot = self.mac.tdma_slot_us;
                if airtime > slot {
                    self.drop_front(node, "exceeds_slot", t, out);
                    return;
                }
                let (rank, n) = self.tdma_rank(node).expect("station exists");
                let s0 = t / slot;
                if s0 % n == rank && t + airtime <= (s0 + 1) * slot {
                    self.transmit(node, t, out);
                    return;
                }
                let mut s = s0 + (rank + n - s0 % n) % n;
                if s == s0 {
                    s += n;
                }
                let st = self.stations.get_mut(&node).expect("station exists");
                st.attempt_pending = true;
                self.push_event(s * slot, MediumEvent::Attempt(node));
            }
        }
    }

    fn transmit(&mut self, node: NodeId, t: u64, out: &mut Vec<(NodeId, Event)>) {
        let cw_min = self.mac.cw_min;
        let st = self.stations.get_mut(&node).expect("station exists");
        let f = st.queue.pop_front().expect("attempt has a frame");
        let airtime = st.radio.airtime_us(f.bytes.len());
        st.busy_count = 0;
        st.cw = cw_min;
        st.tx_until = t + airtime;
        let tx = Transmission {
            id: self.next_tx,
            sender: node,
            receiver: f.receiver,
            start: t,
            end: t + airtime,
            power_dbm: st.radio.tx_power_dbm,
            frequency_hz: st.radio.frequency_hz,
            position: st.position,
            bytes: f.bytes,
            done: false,
        };
        out.push((
            node,
            Event::RadioTx {
                receiver: f.receiver.0,
                len: tx.bytes.len() as u32,
                start_us: t,
                airtime_us: airtime,
                frequency: tx.frequency_hz,
                gain: tx.power_dbm,
            },
        ));
        let more = !st.queue.is_empty();
        if more {
            st.attempt_pending = true;
        }
        self.next_tx += 1;
        self.stats.frames_sent += 1;
        self.push_event(tx.end, MediumEvent::TxEnd(tx.id));
        if more {
            self.push_event(tx.end, MediumEvent::Attempt(node));
        }
        self.history.push(tx);
    }

    fn jammer_active(&self, j: &Jammer, start: u64, end: u64) -> bool {
        match j.behavior {
            JammerBehavior::Passive {
                duty_cycle,
                period_s,
            } => Jammer::passive_on(duty_cycle, period_s, start, end),
            JammerBehavior::Adaptive => self.history.iter().any(|g| {
                g.start < end
                    && g.end > start
                    && co_channel(g.frequency_hz, j.frequency_hz)
                    && self.rssi_at(g.power_dbm, &g.position, &j.position, 0.0) - j.noise_floor_dbm
                        >= self.channel.sensitivity_snr()
            }),
        }
    }

    /// Interference power at `at` during `[start, end)`, ignoring `skip`.
    /// Returns (milliwatts, collided with a near-equal frame, jammed).
    fn interference(&self, f: &Transmission, rx: NodeId, rssi: f64) -> (f64, bool, bool) {
        let st = &self.stations[&rx];
        let mut mw = 0.0;
        let mut collided = false;
        for g in &self.history {
            if g.id == f.id || g.sender == rx || g.start >= f.end || g.end <= f.start {
                continue;
            }
            if !co_channel(g.frequency_hz, st.radio.frequency_hz) {
                continue;
            }
            let p = self.rssi_at(g.power_dbm, &g.position, &st.position, st.radio.rx_gain_db);
            mw += dbm_to_mw(p);
            if (p - rssi).abs() <= CAPTURE_MARGIN_DB {
                collided = true;
            }
        }
        let mut jammed = false;
        for j in &self.jammers {
            if !co_channel(j.frequency_hz, st.radio.frequency_hz)
                || !self.jammer_active(j, f.start, f.end)
            {
                continue;
            }
            jammed = true;
            mw += dbm_to_mw(self.rssi_at(
                j.power_dbm,
                &j.position,
                &st.position,
                st.radio.rx_gain_db,
            ));
        }
        (mw, collided, jammed)
    }

    fn finish(&mut self, id: u64, t: u64, out: &mut Vec<(NodeId, Event)>) {
        let Some(idx) = self.history.iter().position(|g| g.id == id) else {
            return;
        };
        let f = self.history[idx].clone();
        let receivers: Vec<NodeId> = self
            .stations
            .keys()
            .copied()
            .filter(|&k| k != f.sender)
            .collect();
        let mut any_jammed = false;
        for rx in receivers {
            let st = &self.stations[&rx];
            let radio = st.radio.clone();
            let rssi = self.rssi_at(f.power_dbm, &f.position, &st.position, radio.rx_gain_db);
            let tuned = co_channel(f.frequency_hz, radio.frequency_hz);
            let half_duplex = self
                .history
                .iter()
                .any(|g| g.sender == rx && g.start < f.end && g.end > f.start);
            let (mw, collided, jammed) = self.interference(&f, rx, rssi);
            let u = self
                .stations
                .get_mut(&rx)
                .expect("station exists")
                .rx_rng
                .uniform();
            let mut d = receive_decision(
                &self.channel,
                rssi,
                radio.noise_floor_dbm,
                mw,
                collided || half_duplex,
                u,
            );
            if !tuned {
                d.outcome = RxOutcome::BelowSensitivity;
            }
            if d.outcome == RxOutcome::BelowSensitivity {
                self.stats.below_sensitivity += 1;
                continue;
            }
            any_jammed |= jammed;
            let bytes = if d.outcome == RxOutcome::Delivered {
                f.bytes.clone()
            } else {
                let mut b = f.bytes.clone();
                let i = (u * (b.len() * 8) as f64) as usize % (b.len() * 8);
                b[i / 8] ^= 1 << (i % 8);
                b
            };
            match (d.outcome, MacFrame::decode(&bytes)) {
                (RxOutcome::Delivered, Ok(frame)) => {
                    self.stats.delivered += 1;
                    if frame.receiver == rx || frame.receiver.is_broadcast() {
                        if frame.receiver == f.receiver {
                            *self.per_sender_delivered.entry(f.sender).or_default() += 1;
                        }
                        self.inbox.entry(rx).or_default().push(Received {
                            sender: frame.sender,
                            pdu: frame.body,
                            rssi,
                            at_us: t,
                        });
                    }
                }
                (RxOutcome::Delivered, Err(_)) => unreachable!("intact frames always verify"),
                (_, Err(_)) => {
                    self.stats.crc_fail += 1;
                    self.stats.crc_rejected += 1;
                }
                (_, Ok(_)) => {
                    self.stats.crc_fail += 1;
                    self.stats.silent_corruption += 1;
                }
            }
            if collided {
                self.stats.collided += 1;
            }
            out.push((
                rx,
                Event::RadioRx {
                    sender: f.sender.0,
                    len: f.bytes.len() as u32,
                    rssi: d.rssi,
                    snr: d.snr,
                    frequency: radio.frequency_hz,
                    gain: radio.rx_gain_db,
                    outcome: d.outcome.name().into(),
                    collided,
                },
            ));
        }
        if any_jammed {
            self.stats.jammed_frames += 1;
        }
        self.history[idx].done = true;
        let horizon = self
            .history
            .iter()
            .filter(|g| !g.done)
            .map(|g| g.start)
            .min()
            .unwrap_or(t)
            .min(t);
        self.history.retain(|g| !g.done || g.end > horizon);
    }

    /// Takes the PDUs received by `node` so far.
    pub fn take_inbox(&mut self, node: NodeId) -> Vec<Received> {
        self.inbox.remove(&node).unwrap_or_default()
    }
}
