//! Autopilot control unit: the companion-side end of the autopilot link.
//!
//! Registers a proxy per autopilot on its first heartbeat, sends its own
//! heartbeat once a second, dispatches commands and reports heartbeat loss.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::links::{End, LinkError, LinkId, LinkManager};
use crate::logger::Event;
use crate::mavlink::{
    encode_frame, map_execute_command, AutopilotType, HeartbeatMsg, MavError, MavFrame, MavMessage,
    MavParser, ModeFlags, VehicleType, FRAME_OVERHEAD,
};
use crate::sim::{ticks_to_seconds, Tick, TICKS_PER_SECOND};

pub const ACU_SYSTEM_ID: u8 = 255;
pub const ACU_COMPONENT_ID: u8 = 190;
/// Ground-control vehicle type, as reported in the ACU heartbeat.
pub const ACU_VEHICLE_TYPE: u8 = 6;
pub const HEARTBEAT_TIMEOUT: Tick = 3 * TICKS_PER_SECOND;
pub const HEARTBEAT_PERIOD: Tick = TICKS_PER_SECOND;

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleProxy {
    pub system_id: u8,
    pub autopilot_type: AutopilotType,
    pub last_heartbeat: Tick,
    pub mode: ModeFlags,
    pub armed: bool,
    pub link: LinkId,
    timed_out: bool,
}

impl VehicleProxy {
    pub fn timed_out(&self) -> bool {
        self.timed_out
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AcuError {
    #[error("no vehicle with system id {0} has been heard")]
    UnknownVehicle(u8),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Mav(#[from] MavError),
}

/// Notifications raised toward the agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcuSignal {
    ProxyCreated(u8),
    HeartbeatTimeout(u8),
    HeartbeatRestored(u8),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AcuStats {
    pub heartbeats_sent: u64,
    pub heartbeats_skipped: u64,
    pub commands_sent: u64,
}

pub struct Acu {
    link: LinkId,
    parser: MavParser,
    seq: u8,
    proxies: BTreeMap<u8, VehicleProxy>,
    /// Heartbeats are sent only while `now <= heartbeat_until`.
    heartbeat_until: Option<Tick>,
    timeout: Tick,
    stats: AcuStats,
}

impl Acu {
    pub fn new(link: LinkId) -> Self {
        Self {
            link,
            parser: MavParser::new(),
            seq: 0,
            proxies: BTreeMap::new(),
            heartbeat_until: None,
            timeout: HEARTBEAT_TIMEOUT,
            stats: AcuStats::default(),
        }
    }

    pub fn link(&self) -> LinkId {
        self.link
    }

    pub fn stats(&self) -> AcuStats {
        self.stats
    }

    pub fn proxy(&self, system_id: u8) -> Option<&VehicleProxy> {
        self.proxies.get(&system_id)
    }

    pub fn proxies(&self) -> impl Iterator<Item = &VehicleProxy> {
        self.proxies.values()
    }

    /// Halts the outbound heartbeat after tick `t`.
    pub fn stop_heartbeat_after(&mut self, t: Tick) {
        self.heartbeat_until = Some(t);
    }

    /// Processes one validated frame from the autopilot side.
    pub fn on_frame(
        &mut self,
        now: Tick,
        frame: &MavFrame,
        out: &mut Vec<Event>,
    ) -> Option<AcuSignal> {
        out.push(Event::FrameRx {
            msgid: frame.message_id,
            seq: frame.sequence,
            sysid: frame.system_id,
            compid: frame.component_id,
            len: frame.payload.len() as u16,
        });
        match frame.message() {
            Ok(MavMessage::Heartbeat(hb)) => self.on_heartbeat(now, frame.system_id, &hb, out),
            Ok(MavMessage::Command(cmd)) => {
                out.push(Event::FrameDropped {
                    msgid: frame.message_id,
                    sysid: frame.system_id,
                    reason: format!("command for system {} not handled here", cmd.target_system),
                });
                None
            }
            Err(e) => {
                out.push(Event::FrameDropped {
                    msgid: frame.message_id,
                    sysid: frame.system_id,
                    reason: e.to_string(),
                });
                None
            }
        }
    }

    fn on_heartbeat(
        &mut self,
        now: Tick,
        sysid: u8,
        hb: &HeartbeatMsg,
        out: &mut Vec<Event>,
    ) -> Option<AcuSignal> {
        if let Some(p) = self.proxies.get_mut(&sysid) {
            p.last_heartbeat = now;
            p.mode = hb.mode;
            p.armed = hb.mode.armed();
            if p.timed_out {
                p.timed_out = false;
                out.push(Event::HeartbeatRestored { sysid });
                return Some(AcuSignal::HeartbeatRestored(sysid));
            }
            return None;
        }
        self.proxies.insert(
            sysid,
            VehicleProxy {
                system_id: sysid,
                autopilot_type: hb.autopilot_type,
                last_heartbeat: now,
                mode: hb.mode,
                armed: hb.mode.armed(),
                link: self.link,
                timed_out: false,
            },
        );
        out.push(Event::ProxyCreated {
            sysid,
            autopilot: hb.autopilot_type.name().into(),
        });
        Some(AcuSignal::ProxyCreated(sysid))
    }

    /// Reads everything the autopilot has delivered by `now`.
    pub fn poll(
        &mut self,
        now: Tick,
        links: &mut LinkManager,
        out: &mut Vec<Event>,
    ) -> Vec<AcuSignal> {
        let bytes = links.poll(self.link, End::A, now);
        if bytes.is_empty() {
            return Vec::new();
        }
        let frames = self.parser.feed(&bytes);
        frames
            .iter()
            .filter_map(|f| self.on_frame(now, f, out))
            .collect()
    }

    /// Sends one command. The ten arguments are logged before the frame
    /// enters the link.
    #[allow(clippy::too_many_arguments)]
    pub fn execute_command(
        &mut self,
        now: Tick,
        links: &mut LinkManager,
        cmd_type: u16,
        autopilot_id: u8,
        component_id: u8,
        params: [f32; 7],
        out: &mut Vec<Event>,
    ) -> Result<Tick, AcuError> {
        let cmd = map_execute_command(cmd_type, autopilot_id, component_id, params)?;
        let proxy = self
            .proxies
            .get(&autopilot_id)
            .ok_or(AcuError::UnknownVehicle(autopilot_id))?;
        if !links.is_connected(proxy.link) {
            return Err(LinkError::LinkDown(proxy.link).into());
        }
        out.push(Event::Command {
            command: cmd_type,
            name: cmd.command.name().into(),
            autopilot_id,
            component_id,
            params: params.map(f64::from),
        });
        let msg = MavMessage::Command(cmd);
        let bytes = encode_frame(&msg, self.seq, ACU_SYSTEM_ID, ACU_COMPONENT_ID)?;
        let at = links.send_bytes(proxy.link, End::A, &bytes, now)?;
        out.push(Event::FrameTx {
            msgid: msg.msg_id(),
            seq: self.seq,
            sysid: ACU_SYSTEM_ID,
            compid: ACU_COMPONENT_ID,
            len: (bytes.len() - FRAME_OVERHEAD) as u16,
        });
        self.seq = self.seq.wrapping_add(1);
        self.stats.commands_sent += 1;
        Ok(at)
    }

    /// Sends the 1 Hz ACU heartbeat when `now` falls on a second boundary.
    pub fn heartbeat_tick(
        &mut self,
        now: Tick,
        links: &mut LinkManager,
        out: &mut Vec<Event>,
    ) -> bool {
        if !now.is_multiple_of(HEARTBEAT_PERIOD) || self.heartbeat_until.is_some_and(|u| now > u) {
            return false;
        }
        if !links.is_connected(self.link) {
            self.stats.heartbeats_skipped += 1;
            out.push(Event::HeartbeatSkipped {
                reason: "link down".into(),
            });
            return false;
        }
        let hb = HeartbeatMsg::new(
            VehicleType::Other(ACU_VEHICLE_TYPE),
            AutopilotType::Generic,
            ModeFlags::default(),
        );
        let msg = MavMessage::Heartbeat(hb);
        let bytes = encode_frame(&msg, self.seq, ACU_SYSTEM_ID, ACU_COMPONENT_ID)
            .expect("ACU system id is non-zero");
        if let Err(e) = links.send_bytes(self.link, End::A, &bytes, now) {
            self.stats.heartbeats_skipped += 1;
            out.push(Event::HeartbeatSkipped {
                reason: e.to_string(),
            });
            return false;
        }
        out.push(Event::FrameTx {
            msgid: msg.msg_id(),
            seq: self.seq,
            sysid: ACU_SYSTEM_ID,
            compid: ACU_COMPONENT_ID,
            len: (bytes.len() - FRAME_OVERHEAD) as u16,
        });
        self.seq = self.seq.wrapping_add(1);
        self.stats.heartbeats_sent += 1;
        true
    }

    /// Raises one timeout per continuous silence longer than the timeout.
    pub fn check_heartbeat_timeout(&mut self, now: Tick, out: &mut Vec<Event>) -> Vec<AcuSignal> {
        let mut signals = Vec::new();
        for p in self.proxies.values_mut() {
            let silence = now.saturating_sub(p.last_heartbeat);
            if !p.timed_out && silence > self.timeout {
                p.timed_out = true;
                out.push(Event::HeartbeatTimeout {
                    sysid: p.system_id,
                    silence: ticks_to_seconds(silence),
                });
                signals.push(AcuSignal::HeartbeatTimeout(p.system_id));
            }
        }
        signals
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::links::LinkConfig;
    use crate::mavlink::{decode_frames, CommandId};

    fn setup() -> (Acu, LinkManager) {
        let mut links = LinkManager::new();
        let id = links
            .open_link(LinkConfig::serial("ttyACM0", 115_200))
            .unwrap();
        links.connect_link(id).unwrap();
        (Acu::new(id), links)
    }

    fn autopilot_beat(links: &mut LinkManager, link: LinkId, now: Tick, seq: u8) {
        let hb = HeartbeatMsg::new(
            VehicleType::Quadrotor,
            AutopilotType::ArduPilotMega,
            ModeFlags(ModeFlags::ARMED),
        );
        let bytes = encode_frame(&MavMessage::Heartbeat(hb), seq, 1, 1).unwrap();
        links.send_bytes(link, End::B, &bytes, now).unwrap();
    }

    #[test]
    fn first_heartbeat_creates_one_proxy() {
        let (mut acu, mut links) = setup();
        let mut out = Vec::new();
        autopilot_beat(&mut links, acu.link(), 0, 0);
        assert_eq!(
            acu.poll(0, &mut links, &mut out),
            vec![AcuSignal::ProxyCreated(1)]
        );
        autopilot_beat(&mut links, acu.link(), 100, 1);
        assert!(acu.poll(100, &mut links, &mut out).is_empty());
        assert_eq!(acu.proxies().count(), 1);
        let p = acu.proxy(1).unwrap();
        assert_eq!(p.last_heartbeat, 100);
        assert_eq!(p.autopilot_type, AutopilotType::ArduPilotMega);
        assert!(p.armed);
    }

    #[test]
    fn foreign_command_frame_is_dropped() {
        let (mut acu, mut links) = setup();
        let mut out = Vec::new();
        let cmd = map_execute_command(21, 7, 0, [0.0; 7]).unwrap();
        let bytes = encode_frame(&MavMessage::Command(cmd), 0, 1, 1).unwrap();
        links.send_bytes(acu.link(), End::B, &bytes, 0).unwrap();
        assert!(acu.poll(0, &mut links, &mut out).is_empty());
        assert!(matches!(out[1], Event::FrameDropped { msgid: 76, .. }));
    }

    #[test]
    fn command_needs_a_registered_vehicle() {
        let (mut acu, mut links) = setup();
        let mut out = Vec::new();
        assert_eq!(
            acu.execute_command(0, &mut links, 21, 1, 0, [0.0; 7], &mut out),
            Err(AcuError::UnknownVehicle(1))
        );
        assert!(out.is_empty());
    }

    #[test]
    fn land_command_is_logged_then_framed() {
        let (mut acu, mut links) = setup();
        let mut out = Vec::new();
        autopilot_beat(&mut links, acu.link(), 0, 0);
        acu.poll(0, &mut links, &mut out);
        out.clear();
        acu.execute_command(5, &mut links, 21, 1, 0, [0.0; 7], &mut out)
            .unwrap();
        assert!(matches!(
            out[0],
            Event::Command {
                command: 21,
                autopilot_id: 1,
                component_id: 0,
                ..
            }
        ));
        assert!(matches!(out[1], Event::FrameTx { msgid: 76, .. }));
        let frames = decode_frames(&links.poll(acu.link(), End::B, 5));
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].system_id, ACU_SYSTEM_ID);
        match frames[0].message().unwrap() {
            MavMessage::Command(c) => {
                assert_eq!(c.command, CommandId::Land);
                assert_eq!(c.target_system, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loiter_parameters_reach_the_payload() {
        let (mut acu, mut links) = setup();
        let mut out = Vec::new();
        autopilot_beat(&mut links, acu.link(), 0, 0);
        acu.poll(0, &mut links, &mut out);
        let p = [30.0, 0.0, 5.0, 90.0, 42.4534, -76.4735, 12.0];
        acu.execute_command(0, &mut links, 19, 1, 0, p, &mut out)
            .unwrap();
        let frames = decode_frames(&links.poll(acu.link(), End::B, 0));
        match frames[0].message().unwrap() {
            MavMessage::Command(c) => {
                assert_eq!(c.param(1), 30.0);
                assert_eq!(c.param(3), 5.0);
                assert_eq!(c.param(4), 90.0);
                assert_eq!(c.param(5), 42.4534);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn thirty_seconds_of_heartbeats() {
        let (mut acu, mut links) = setup();
        let mut out = Vec::new();
        let sent = (0..3000)
            .filter(|&t| acu.heartbeat_tick(t, &mut links, &mut out))
            .count();
        assert_eq!(sent, 30);
    }

    #[test]
    fn halted_and_disconnected_heartbeats() {
        let (mut acu, mut links) = setup();
        let mut out = Vec::new();
        acu.stop_heartbeat_after(1000);
        let sent = (0..3000)
            .filter(|&t| acu.heartbeat_tick(t, &mut links, &mut out))
            .count();
        assert_eq!(sent, 11);
        links.disconnect_link(acu.link()).unwrap();
        let (mut acu2, _) = (Acu::new(acu.link()), ());
        assert!(!acu2.heartbeat_tick(0, &mut links, &mut out));
        assert_eq!(acu2.stats().heartbeats_skipped, 1);
    }

    #[test]
    fn timeout_is_edge_triggered_and_rearms() {
        let (mut acu, mut links) = setup();
        let mut out = Vec::new();
        autopilot_beat(&mut links, acu.link(), 0, 0);
        acu.poll(0, &mut links, &mut out);
        let mut raised = Vec::new();
        for t in 1..=1000 {
            if !acu.check_heartbeat_timeout(t, &mut out).is_empty() {
                raised.push(t);
            }
        }
        assert_eq!(raised, vec![301]);
        autopilot_beat(&mut links, acu.link(), 1000, 1);
        assert_eq!(
            acu.poll(1000, &mut links, &mut out),
            vec![AcuSignal::HeartbeatRestored(1)]
        );
        assert!(acu.check_heartbeat_timeout(1300, &mut out).is_empty());
        assert_eq!(
            acu.check_heartbeat_timeout(1301, &mut out),
            vec![AcuSignal::HeartbeatTimeout(1)]
        );
    }
}
