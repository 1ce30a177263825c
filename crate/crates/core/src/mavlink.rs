//! MAVLink 1.0 framing for the emulator's control dialect.
//!
//! Frame layout, all multi-byte integers little-endian:
//!
//! | offset      | field          | notes                          |
//! |-------------|----------------|--------------------------------|
//! | 0           | start sign     | always `0xFE`                  |
//! | 1           | payload length | 0..=255                        |
//! | 2           | sequence       | wraps 255 -> 0                 |
//! | 3           | system id      | 1..=255                        |
//! | 4           | component id   | 0..=255                        |
//! | 5           | message id     | 0..=255                        |
//! | 6..6+n      | payload        |                                |
//! | 6+n..8+n    | checksum       | X.25 CRC over bytes 1..6+n and the message's extra seed byte |
//!
//! The dialect knows two messages. HEARTBEAT (id 0, 4 bytes): vehicle type,
//! autopilot type, mode flags, protocol version (always 1). COMMAND (id 76,
//! 33 bytes): seven `f32` parameters, `u16` command id, target system,
//! target component, confirmation counter.

use std::fmt;

use thiserror::Error;

pub const START_SIGN: u8 = 0xFE;
pub const HEADER_LEN: usize = 6;
pub const CHECKSUM_LEN: usize = 2;
/// Header plus checksum.
pub const FRAME_OVERHEAD: usize = HEADER_LEN + CHECKSUM_LEN;
pub const MAX_PAYLOAD: usize = 255;

pub const MSG_ID_HEARTBEAT: u8 = 0;
pub const MSG_ID_COMMAND: u8 = 76;
pub const HEARTBEAT_LEN: usize = 4;
pub const COMMAND_LEN: usize = 33;
pub const MAVLINK_VERSION: u8 = 1;

const CRC_EXTRA_HEARTBEAT: u8 = 50;
const CRC_EXTRA_COMMAND: u8 = 152;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MavError {
    #[error("system id 0 is not a valid sender")]
    InvalidSystem,
    #[error("payload of {0} bytes exceeds the 255-byte frame limit")]
    PayloadTooLong(usize),
    #[error("unsupported command id {0}")]
    UnsupportedCommand(u16),
    #[error("unknown message id {0}")]
    UnknownMessage(u8),
    #[error("message {msg_id} expects a {expected}-byte payload, got {got}")]
    BadPayloadLength {
        msg_id: u8,
        expected: usize,
        got: usize,
    },
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
}

/// One step of the reflected 0x1021 polynomial.
#[inline]
pub fn crc_accumulate(byte: u8, crc: u16) -> u16 {
    let mut tmp = byte ^ (crc & 0xFF) as u8;
    tmp ^= tmp << 4;
    let tmp = tmp as u16;
    (crc >> 8) ^ (tmp << 8) ^ (tmp << 3) ^ (tmp >> 4)
}

/// X.25 CRC-16: init 0xFFFF, reflected 0x1021, output xor 0xFFFF.
pub fn crc16_x25(data: &[u8]) -> u16 {
    !data.iter().fold(0xFFFF, |crc, &b| crc_accumulate(b, crc))
}

/// X.25 CRC-16 over `data` followed by `extra_seed`.
pub fn crc16(data: &[u8], extra_seed: u8) -> u16 {
    let crc = data.iter().fold(0xFFFF, |crc, &b| crc_accumulate(b, crc));
    !crc_accumulate(extra_seed, crc)
}

/// Checksum seed byte per message id, `None` for ids outside the dialect.
pub fn crc_extra(msg_id: u8) -> Option<u8> {
    match msg_id {
        MSG_ID_HEARTBEAT => Some(CRC_EXTRA_HEARTBEAT),
        MSG_ID_COMMAND => Some(CRC_EXTRA_COMMAND),
        _ => None,
    }
}

pub fn expected_payload_len(msg_id: u8) -> Option<usize> {
    match msg_id {
        MSG_ID_HEARTBEAT => Some(HEARTBEAT_LEN),
        MSG_ID_COMMAND => Some(COMMAND_LEN),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VehicleType {
    Generic,
    FixedWing,
    Quadrotor,
    Helicopter,
    Hexarotor,
    Other(u8),
}

impl From<u8> for VehicleType {
    fn from(v: u8) -> Self {
        match v {
            0 => Self::Generic,
            1 => Self::FixedWing,
            2 => Self::Quadrotor,
            4 => Self::Helicopter,
            13 => Self::Hexarotor,
            other => Self::Other(other),
        }
    }
}

impl From<VehicleType> for u8 {
    fn from(v: VehicleType) -> u8 {
        match v {
            VehicleType::Generic => 0,
            VehicleType::FixedWing => 1,
            VehicleType::Quadrotor => 2,
            VehicleType::Helicopter => 4,
            VehicleType::Hexarotor => 13,
            VehicleType::Other(o) => o,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AutopilotType {
    Generic,
    ArduPilotMega,
    Pixhawk,
    Other(u8),
}

impl AutopilotType {
    pub fn name(self) -> &'static str {
        match self {
            Self::Generic => "generic",
            Self::ArduPilotMega => "apm",
            Self::Pixhawk => "pixhawk",
            Self::Other(_) => "other",
        }
    }
}

impl From<u8> for AutopilotType {
    fn from(v: u8) -> Self {
        match v {
            0 => Self::Generic,
            3 => Self::ArduPilotMega,
            12 => Self::Pixhawk,
            other => Self::Other(other),
        }
    }
}

impl From<AutopilotType> for u8 {
    fn from(v: AutopilotType) -> u8 {
        match v {
            AutopilotType::Generic => 0,
            AutopilotType::ArduPilotMega => 3,
            AutopilotType::Pixhawk => 12,
            AutopilotType::Other(o) => o,
        }
    }
}

/// Heartbeat mode byte: bit0 armed, bit1 autonomous, bit2 manual, bit3 stabilize.
/// Higher bits are carried through untouched.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ModeFlags(pub u8);

impl ModeFlags {
    pub const ARMED: u8 = 1 << 0;
    pub const AUTONOMOUS: u8 = 1 << 1;
    pub const MANUAL: u8 = 1 << 2;
    pub const STABILIZE: u8 = 1 << 3;

    pub fn armed(self) -> bool {
        self.0 & Self::ARMED != 0
    }

    pub fn autonomous(self) -> bool {
        self.0 & Self::AUTONOMOUS != 0
    }

    pub fn manual(self) -> bool {
        self.0 & Self::MANUAL != 0
    }

    pub fn stabilize(self) -> bool {
        self.0 & Self::STABILIZE != 0
    }

    pub fn with(self, bit: u8, on: bool) -> Self {
        if on {
            Self(self.0 | bit)
        } else {
            Self(self.0 & !bit)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeartbeatMsg {
    pub vehicle_type: VehicleType,
    pub autopilot_type: AutopilotType,
    pub mode: ModeFlags,
    pub mavlink_version: u8,
}

impl HeartbeatMsg {
    pub fn new(vehicle_type: VehicleType, autopilot_type: AutopilotType, mode: ModeFlags) -> Self {
        Self {
            vehicle_type,
            autopilot_type,
            mode,
            mavlink_version: MAVLINK_VERSION,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CommandId {
    Waypoint,
    LoiterTime,
    ReturnToLaunch,
    Land,
    Takeoff,
    SetMode,
    SetServo,
}

impl CommandId {
    pub const ALL: [CommandId; 7] = [
        Self::Waypoint,
        Self::LoiterTime,
        Self::ReturnToLaunch,
        Self::Land,
        Self::Takeoff,
        Self::SetMode,
        Self::SetServo,
    ];

    pub fn code(self) -> u16 {
        match self {
            Self::Waypoint => 16,
            Self::LoiterTime => 19,
            Self::ReturnToLaunch => 20,
            Self::Land => 21,
            Self::Takeoff => 22,
            Self::SetMode => 176,
            Self::SetServo => 183,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Waypoint => "MAV_CMD_NAV_WAYPOINT",
            Self::LoiterTime => "MAV_CMD_NAV_LOITER_TIME",
            Self::ReturnToLaunch => "MAV_CMD_NAV_RETURN_TO_LAUNCH",
            Self::Land => "MAV_CMD_NAV_LAND",
            Self::Takeoff => "MAV_CMD_NAV_TAKEOFF",
            Self::SetMode => "MAV_CMD_DO_SET_MODE",
            Self::SetServo => "MAV_CMD_DO_SET_SERVO",
        }
    }
}

impl TryFrom<u16> for CommandId {
    type Error = MavError;

    fn try_from(code: u16) -> Result<Self, MavError> {
        Self::ALL
            .into_iter()
            .find(|c| c.code() == code)
            .ok_or(MavError::UnsupportedCommand(code))
    }
}

impl fmt::Display for CommandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A command with its seven positional parameters. For loiter-time the
/// parameters are: seconds, unused, radius m, yaw deg, latitude, longitude,
/// altitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommandMsg {
    pub command: CommandId,
    pub target_system: u8,
    pub target_component: u8,
    pub confirmation: u8,
    pub params: [f32; 7],
}

impl CommandMsg {
    pub fn param(&self, n: usize) -> f32 {
        self.params[n - 1]
    }
}

/// Packs the ten `executeCommand` arguments into a [`CommandMsg`].
pub fn map_execute_command(
    cmd_type: u16,
    autopilot_id: u8,
    component_id: u8,
    params: [f32; 7],
) -> Result<CommandMsg, MavError> {
    let command = CommandId::try_from(cmd_type)?;
    Ok(CommandMsg {
        command,
        target_system: autopilot_id,
        target_component: component_id,
        confirmation: 0,
        params,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MavMessage {
    Heartbeat(HeartbeatMsg),
    Command(CommandMsg),
}

impl MavMessage {
    pub fn msg_id(&self) -> u8 {
        match self {
            Self::Heartbeat(_) => MSG_ID_HEARTBEAT,
            Self::Command(_) => MSG_ID_COMMAND,
        }
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        match self {
            Self::Heartbeat(hb) => vec![
                hb.vehicle_type.into(),
                hb.autopilot_type.into(),
                hb.mode.0,
                hb.mavlink_version,
            ],
            Self::Command(cmd) => {
                let mut out = Vec::with_capacity(COMMAND_LEN);
                for p in cmd.params {
                    out.extend_from_slice(&p.to_le_bytes());
                }
                out.extend_from_slice(&cmd.command.code().to_le_bytes());
                out.push(cmd.target_system);
                out.push(cmd.target_component);
                out.push(cmd.confirmation);
                out
            }
        }
    }

    pub fn decode(msg_id: u8, payload: &[u8]) -> Result<Self, MavError> {
        let expected = expected_payload_len(msg_id).ok_or(MavError::UnknownMessage(msg_id))?;
        if payload.len() != expected {
            return Err(MavError::BadPayloadLength {
                msg_id,
                expected,
                got: payload.len(),
            });
        }
        match msg_id {
            MSG_ID_HEARTBEAT => {
                if payload[3] != MAVLINK_VERSION {
                    return Err(MavError::BadVersion(payload[3]));
                }
                Ok(Self::Heartbeat(HeartbeatMsg {
                    vehicle_type: payload[0].into(),
                    autopilot_type: payload[1].into(),
                    mode: ModeFlags(payload[2]),
                    mavlink_version: payload[3],
                }))
            }
            _ => {
                let mut params = [0f32; 7];
                for (i, p) in params.iter_mut().enumerate() {
                    let b: [u8; 4] = payload[i * 4..i * 4 + 4].try_into().expect("4 bytes");
                    *p = f32::from_le_bytes(b);
                }
                let code = u16::from_le_bytes([payload[28], payload[29]]);
                Ok(Self::Command(CommandMsg {
                    command: CommandId::try_from(code)?,
                    target_system: payload[30],
                    target_component: payload[31],
                    confirmation: payload[32],
                    params,
                }))
            }
        }
    }
}

/// A checksum-verified wire frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MavFrame {
    pub sequence: u8,
    pub system_id: u8,
    pub component_id: u8,
    pub message_id: u8,
    pub payload: Vec<u8>,
    pub checksum: u16,
}

impl MavFrame {
    /// Builds a frame for an arbitrary message id with an explicit seed byte.
    pub fn with_extra(
        sequence: u8,
        system_id: u8,
        component_id: u8,
        message_id: u8,
        payload: Vec<u8>,
        extra_seed: u8,
    ) -> Result<Self, MavError> {
        if system_id == 0 {
            return Err(MavError::InvalidSystem);
        }
        if payload.len() > MAX_PAYLOAD {
            return Err(MavError::PayloadTooLong(payload.len()));
        }
        let mut frame = Self {
            sequence,
            system_id,
            component_id,
            message_id,
            payload,
            checksum: 0,
        };
        let bytes = frame.header_and_payload();
        frame.checksum = crc16(&bytes[1..], extra_seed);
        Ok(frame)
    }

    pub fn from_message(
        msg: &MavMessage,
        sequence: u8,
        system_id: u8,
        component_id: u8,
    ) -> Result<Self, MavError> {
        let extra = crc_extra(msg.msg_id()).expect("dialect message");
        Self::with_extra(
            sequence,
            system_id,
            component_id,
            msg.msg_id(),
            msg.encode_payload(),
            extra,
        )
    }

    pub fn start_sign(&self) -> u8 {
        START_SIGN
    }

    pub fn length(&self) -> u8 {
        self.payload.len() as u8
    }

    fn header_and_payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload.len() + FRAME_OVERHEAD);
        out.extend_from_slice(&[
            START_SIGN,
            self.payload.len() as u8,
            self.sequence,
            self.system_id,
            self.component_id,
            self.message_id,
        ]);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header_and_payload();
        out.extend_from_slice(&self.checksum.to_le_bytes());
        out
    }

    pub fn message(&self) -> Result<MavMessage, MavError> {
        MavMessage::decode(self.message_id, &self.payload)
    }
}

/// Encodes `msg` as a complete wire frame.
pub fn encode_frame(msg: &MavMessage, seq: u8, sysid: u8, compid: u8) -> Result<Vec<u8>, MavError> {
    MavFrame::from_message(msg, seq, sysid, compid).map(|f| f.to_bytes())
}

/// Decodes every complete frame in `bytes` with a fresh parser.
pub fn decode_frames(bytes: &[u8]) -> Vec<MavFrame> {
    MavParser::new().feed(bytes)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParserStats {
    pub frames: u64,
    pub crc_errors: u64,
    /// Frames whose id is outside the dialect or whose length field does not
    /// match the id's fixed payload size.
    pub malformed: u64,
    /// Bytes discarded while searching for a start sign.
    pub skipped_bytes: u64,
}

/// Incremental frame parser. Frames may span any number of `feed` calls; bad
/// frames are discarded and scanning resumes at the next start sign after the
/// rejected one.
#[derive(Clone, Debug, Default)]
pub struct MavParser {
    buf: Vec<u8>,
    stats: ParserStats,
}

impl MavParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> ParserStats {
        self.stats
    }

    /// Bytes held while waiting for the rest of a frame.
    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn feed(&mut self, bytes: &[u8]) -> Vec<MavFrame> {
        self.buf.extend_from_slice(bytes);
        let mut frames = Vec::new();
        let mut pos = 0;
        loop {
            match self.buf[pos..].iter().position(|&b| b == START_SIGN) {
                Some(off) => {
                    self.stats.skipped_bytes += off as u64;
                    pos += off;
                }
                None => {
                    self.stats.skipped_bytes += (self.buf.len() - pos) as u64;
                    pos = self.buf.len();
                    break;
                }
            }
            let avail = &self.buf[pos..];
            if avail.len() < HEADER_LEN {
                break;
            }
            let len = avail[1] as usize;
            let msg_id = avail[5];
            let (Some(extra), Some(expected)) = (crc_extra(msg_id), expected_payload_len(msg_id))
            else {
                self.stats.malformed += 1;
                pos += 1;
                continue;
            };
            if len != expected {
                self.stats.malformed += 1;
                pos += 1;
                continue;
            }
            let total = len + FRAME_OVERHEAD;
            if avail.len() < total {
                break;
            }
            let crc = u16::from_le_bytes([avail[HEADER_LEN + len], avail[HEADER_LEN + len + 1]]);
            if crc16(&avail[1..HEADER_LEN + len], extra) != crc {
                self.stats.crc_errors += 1;
                pos += 1;
                continue;
            }
            frames.push(MavFrame {
                sequence: avail[2],
                system_id: avail[3],
                component_id: avail[4],
                message_id: msg_id,
                payload: avail[HEADER_LEN..HEADER_LEN + len].to_vec(),
                checksum: crc,
            });
            self.stats.frames += 1;
            pos += total;
        }
        self.buf.drain(..pos);
        frames
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bit-at-a-time reference: reflected polynomial 0x8408, init 0xFFFF,
    /// output xor 0xFFFF.
    fn oracle_x25(data: &[u8]) -> u16 {
        let mut crc: u16 = 0xFFFF;
        for &byte in data {
            crc ^= byte as u16;
            for _ in 0..8 {
                crc = if crc & 1 != 0 {
                    (crc >> 1) ^ 0x8408
                } else {
                    crc >> 1
                };
            }
        }
        crc ^ 0xFFFF
    }

    #[test]
    fn crc_matches_bitwise_oracle() {
        // frozen from the oracle: "123456789" -> 0x906E, [0x00] -> 0xF078
        assert_eq!(oracle_x25(b"123456789"), 0x906E);
        assert_eq!(oracle_x25(&[0x00]), 0xF078);
        assert_eq!(crc16_x25(b"123456789"), 0x906E);
        assert_eq!(crc16(&[], 0x00), 0xF078);
        assert_eq!(crc16(b"12345678", b'9'), 0x906E);
    }

    #[test]
    fn crc_detects_single_bit_flip() {
        let data = b"heartbeat payload".to_vec();
        let base = crc16(&data, 50);
        for i in 0..data.len() {
            for bit in 0..8 {
                let mut d = data.clone();
                d[i] ^= 1 << bit;
                assert_ne!(crc16(&d, 50), base);
            }
        }
    }

    fn heartbeat() -> MavMessage {
        MavMessage::Heartbeat(HeartbeatMsg::new(
            VehicleType::Quadrotor,
            AutopilotType::ArduPilotMega,
            ModeFlags(ModeFlags::ARMED | ModeFlags::AUTONOMOUS),
        ))
    }

    fn land() -> MavMessage {
        MavMessage::Command(map_execute_command(21, 1, 0, [0.0; 7]).unwrap())
    }

    #[test]
    fn frame_layout() {
        let bytes = encode_frame(&heartbeat(), 5, 1, 1).unwrap();
        assert_eq!(bytes[0], 0xFE);
        assert_eq!(&bytes[1..6], &[4, 5, 1, 1, 0]);
        assert_eq!(bytes.len(), 12);
        let cmd = encode_frame(&land(), 0, 255, 190).unwrap();
        assert_eq!(cmd.len(), 8 + COMMAND_LEN);
        assert_eq!(cmd[1] as usize, COMMAND_LEN);
        assert_eq!(cmd[5], MSG_ID_COMMAND);
    }

    #[test]
    fn system_zero_rejected() {
        assert_eq!(
            encode_frame(&heartbeat(), 0, 0, 1),
            Err(MavError::InvalidSystem)
        );
    }

    #[test]
    fn heartbeat_round_trip() {
        let bytes = encode_frame(&heartbeat(), 5, 1, 1).unwrap();
        let frames = decode_frames(&bytes);
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].sequence, 5);
        assert_eq!(frames[0].message().unwrap(), heartbeat());
    }

    #[test]
    fn map_execute_command_examples() {
        let land = map_execute_command(21, 1, 0, [0.0; 7]).unwrap();
        assert_eq!(land.command, CommandId::Land);
        assert_eq!((land.target_system, land.target_component), (1, 0));

        let loiter =
            map_execute_command(19, 1, 0, [30.0, 0.0, 5.0, 0.0, 43.0, -78.8, 10.0]).unwrap();
        assert_eq!(loiter.command, CommandId::LoiterTime);
        assert_eq!(loiter.param(1), 30.0);
        assert_eq!(loiter.param(3), 5.0);
        assert_eq!(loiter.param(5), 43.0);

        assert_eq!(
            map_execute_command(999, 1, 0, [0.0; 7]),
            Err(MavError::UnsupportedCommand(999))
        );
    }

    #[test]
    fn parser_handles_concatenation_and_split_feeds() {
        let mut stream = encode_frame(&heartbeat(), 1, 1, 1).unwrap();
        stream.extend(encode_frame(&land(), 2, 255, 0).unwrap());
        assert_eq!(decode_frames(&stream).len(), 2);

        let mut p = MavParser::new();
        let mut got = Vec::new();
        for b in &stream {
            got.extend(p.feed(std::slice::from_ref(b)));
        }
        assert_eq!(got.len(), 2);
        assert_eq!(got[1].message().unwrap(), land());
        assert_eq!(p.buffered(), 0);
    }

    #[test]
    fn parser_resyncs_past_garbage_and_corruption() {
        let a = encode_frame(&heartbeat(), 1, 1, 1).unwrap();
        let mut bad = encode_frame(&land(), 2, 1, 1).unwrap();
        bad[10] ^= 0x40;
        let c = encode_frame(&land(), 3, 1, 1).unwrap();
        let mut stream = vec![0x00, 0xFE, 0x13, 0xFE];
        stream.extend(&a);
        stream.extend(&bad);
        stream.extend(&c);
        let frames = decode_frames(&stream);
        assert_eq!(
            frames.iter().map(|f| f.sequence).collect::<Vec<_>>(),
            vec![1, 3]
        );
    }

    #[test]
    fn sequence_wraps() {
        for seq in [254u8, 255, 0] {
            let f = decode_frames(&encode_frame(&heartbeat(), seq, 1, 1).unwrap());
            assert_eq!(f[0].sequence, seq);
        }
        assert_eq!(255u8.wrapping_add(1), 0);
    }

    #[test]
    fn unknown_ids_are_not_decoded() {
        let f = MavFrame::with_extra(0, 1, 1, 99, vec![1, 2, 3], 0).unwrap();
        assert_eq!(f.message(), Err(MavError::UnknownMessage(99)));
        let mut p = MavParser::new();
        assert!(p.feed(&f.to_bytes()).is_empty());
        assert_eq!(p.stats().malformed, 1);
    }

    fn arb_message() -> impl Strategy<Value = MavMessage> {
        let hb = (any::<u8>(), any::<u8>(), any::<u8>()).prop_map(|(v, a, m)| {
            MavMessage::Heartbeat(HeartbeatMsg::new(v.into(), a.into(), ModeFlags(m)))
        });
        let cmd = (
            0usize..7,
            any::<u8>(),
            any::<u8>(),
            any::<u8>(),
            prop::array::uniform7(-1.0e6f32..1.0e6),
        )
            .prop_map(|(c, ts, tc, conf, params)| {
                MavMessage::Command(CommandMsg {
                    command: CommandId::ALL[c],
                    target_system: ts,
                    target_component: tc,
                    confirmation: conf,
                    params,
                })
            });
        prop_oneof![hb, cmd]
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(msg in arb_message(), seq: u8, sys in 1u8..=255, comp: u8) {
            let bytes = encode_frame(&msg, seq, sys, comp).unwrap();
            let frames = decode_frames(&bytes);
            prop_assert_eq!(frames.len(), 1);
            let f = &frames[0];
            prop_assert_eq!(f.length() as usize, f.payload.len());
            prop_assert_eq!((f.sequence, f.system_id, f.component_id), (seq, sys, comp));
            prop_assert_eq!(f.message().unwrap(), msg);
        }

        #[test]
        fn single_byte_corruption_is_rejected(msg in arb_message(), pos in 0usize..41, mask in 1u8..=255) {
            let mut bytes = encode_frame(&msg, 7, 1, 1).unwrap();
            let pos = pos % bytes.len();
            bytes[pos] ^= mask;
            prop_assert!(decode_frames(&bytes).is_empty());
        }
    }
}
