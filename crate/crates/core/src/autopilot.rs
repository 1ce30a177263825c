//! Simulated flight controller.
//!
//! Reads command frames from its end of the ACU link, flies a point-mass
//! vehicle toward the active target, emits a heartbeat every second and
//! falls back to RTL or LAND when the ACU heartbeat goes silent.

use std::fmt;

use crate::geo::{enu_offset, heading_deg, GeoPoint};
use crate::links::{End, LinkId, LinkManager};
use crate::logger::Event;
use crate::mavlink::{
    encode_frame, AutopilotType, CommandId, CommandMsg, HeartbeatMsg, MavFrame, MavMessage,
    MavParser, ModeFlags, VehicleType,
};
use crate::sim::{ticks_to_seconds, Tick, TICKS_PER_SECOND, TICK_SECONDS};

pub const CRUISE_SPEED: f64 = 5.0;
pub const CLIMB_RATE: f64 = 2.0;
pub const ACCEPTANCE_RADIUS: f64 = 2.0;
/// Silence longer than this (strictly) trips the failsafe.
pub const HEARTBEAT_TIMEOUT: Tick = 3 * TICKS_PER_SECOND;
pub const DEFAULT_ENDURANCE_S: f64 = 1560.0;
pub const HEARTBEAT_PERIOD: Tick = TICKS_PER_SECOND;

/// Residual below which a target coordinate counts as reached exactly.
const SNAP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlightMode {
    Disarmed,
    ArmedIdle,
    Takeoff,
    Waypoint,
    Loiter,
    Land,
    Rtl,
}

impl FlightMode {
    pub fn name(self) -> &'static str {
        match self {
            FlightMode::Disarmed => "DISARMED",
            FlightMode::ArmedIdle => "ARMED_IDLE",
            FlightMode::Takeoff => "TAKEOFF",
            FlightMode::Waypoint => "WAYPOINT",
            FlightMode::Loiter => "LOITER",
            FlightMode::Land => "LAND",
            FlightMode::Rtl => "RTL",
        }
    }
}

impl fmt::Display for FlightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct VehicleConfig {
    pub system_id: u8,
    pub component_id: u8,
    pub vehicle_type: VehicleType,
    pub autopilot_type: AutopilotType,
    pub cruise_speed: f64,
    pub climb_rate: f64,
    pub acceptance_radius: f64,
    pub endurance_s: f64,
    pub gps_lock: bool,
    pub heartbeat_timeout: Tick,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self {
            system_id: 1,
            component_id: 1,
            vehicle_type: VehicleType::Quadrotor,
            autopilot_type: AutopilotType::ArduPilotMega,
            cruise_speed: CRUISE_SPEED,
            climb_rate: CLIMB_RATE,
            acceptance_radius: ACCEPTANCE_RADIUS,
            endurance_s: DEFAULT_ENDURANCE_S,
            gps_lock: true,
            heartbeat_timeout: HEARTBEAT_TIMEOUT,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleState {
    pub position: GeoPoint,
    pub groundspeed: f64,
    pub climb_rate: f64,
    pub heading: f64,
    pub mode: FlightMode,
    pub armed: bool,
    pub gps_lock: bool,
    pub home: GeoPoint,
    pub endurance_remaining: f64,
    pub active_target: Option<GeoPoint>,
    pub loiter_until: Option<Tick>,
    /// Sum of per-tick displacements in meters.
    pub odometer: f64,
}

impl VehicleState {
    pub fn new(home: GeoPoint, gps_lock: bool, endurance_s: f64) -> Self {
        Self {
            position: home,
            groundspeed: 0.0,
            climb_rate: 0.0,
            heading: 0.0,
            mode: FlightMode::Disarmed,
            armed: false,
            gps_lock,
            home,
            endurance_remaining: endurance_s,
            active_target: None,
            loiter_until: None,
            odometer: 0.0,
        }
    }

    pub fn airborne(&self) -> bool {
        self.position.alt > 0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AutopilotStats {
    pub heartbeats_sent: u64,
    pub heartbeats_skipped: u64,
    pub acu_heartbeats_received: u64,
    pub commands_accepted: u64,
    pub commands_rejected: u64,
}

pub struct Autopilot {
    cfg: VehicleConfig,
    state: VehicleState,
    link: LinkId,
    parser: MavParser,
    seq: u8,
    flags: ModeFlags,
    last_acu_heartbeat: Option<Tick>,
    failsafe_engaged: bool,
    endurance_ticks: Tick,
    endurance_logged: bool,
    loiter_seconds: f64,
    arrived: bool,
    loiter_expired: bool,
    land_point: GeoPoint,
    arrivals: u64,
    loiter_expiries: u64,
    stats: AutopilotStats,
}

/// Read-only view of the vehicle handed to the agent each tick.
#[derive(Clone, Debug, PartialEq)]
pub struct Telemetry {
    pub position: GeoPoint,
    pub home: GeoPoint,
    pub mode: FlightMode,
    pub armed: bool,
    pub gps_lock: bool,
    pub endurance_remaining: f64,
    /// Count of waypoint or loiter targets reached so far.
    pub arrivals: u64,
    /// Count of loiters that ran their full duration.
    pub loiter_expiries: u64,
}

impl Autopilot {
    pub fn new(cfg: VehicleConfig, home: GeoPoint, link: LinkId) -> Self {
        let state = VehicleState::new(home, cfg.gps_lock, cfg.endurance_s);
        let endurance_ticks = (cfg.endurance_s * TICKS_PER_SECOND as f64).round().max(0.0) as Tick;
        Self {
            cfg,
            state,
            link,
            parser: MavParser::new(),
            seq: 0,
            flags: ModeFlags::default(),
            last_acu_heartbeat: None,
            failsafe_engaged: false,
            endurance_ticks,
            endurance_logged: false,
            loiter_seconds: 0.0,
            arrived: false,
            loiter_expired: false,
            land_point: home,
            arrivals: 0,
            loiter_expiries: 0,
            stats: AutopilotStats::default(),
        }
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn telemetry(&self) -> Telemetry {
        Telemetry {
            position: self.state.position,
            home: self.state.home,
            mode: self.state.mode,
            armed: self.state.armed,
            gps_lock: self.state.gps_lock,
            endurance_remaining: self.state.endurance_remaining,
            arrivals: self.arrivals,
            loiter_expiries: self.loiter_expiries,
        }
    }

    pub fn config(&self) -> &VehicleConfig {
        &self.cfg
    }

    pub fn stats(&self) -> AutopilotStats {
        self.stats
    }

    pub fn last_acu_heartbeat(&self) -> Option<Tick> {
        self.last_acu_heartbeat
    }

    pub fn mode_flags(&self) -> ModeFlags {
        self.flags.with(ModeFlags::ARMED, self.state.armed)
    }

    /// One simulation tick: read the link, check the failsafe, move, and emit
    /// the periodic heartbeat.
    pub fn tick(&mut self, now: Tick, links: &mut LinkManager, out: &mut Vec<Event>) {
        let bytes = links.poll(self.link, End::B, now);
        if !bytes.is_empty() {
            for frame in self.parser.feed(&bytes) {
                self.on_frame(now, &frame, out);
            }
        }
        self.failsafe_check(now, out);
        self.step_kinematics(now, out);
        if now.is_multiple_of(HEARTBEAT_PERIOD) {
            self.heartbeat_tick(now, links, out);
        }
    }

    fn on_frame(&mut self, now: Tick, frame: &MavFrame, out: &mut Vec<Event>) {
        out.push(Event::FrameRx {
            msgid: frame.message_id,
            seq: frame.sequence,
            sysid: frame.system_id,
            compid: frame.component_id,
            len: frame.payload.len() as u16,
        });
        match frame.message() {
            Ok(MavMessage::Heartbeat(_)) => {
                self.stats.acu_heartbeats_received += 1;
                self.last_acu_heartbeat = Some(now);
                self.failsafe_engaged = false;
            }
            Ok(MavMessage::Command(cmd)) => {
                if cmd.target_system != self.cfg.system_id {
                    out.push(Event::FrameDropped {
                        msgid: frame.message_id,
                        sysid: frame.system_id,
                        reason: format!("addressed to system {}", cmd.target_system),
                    });
                    return;
                }
                self.handle_command(now, &cmd, out);
            }
            Err(e) => out.push(Event::FrameDropped {
                msgid: frame.message_id,
                sysid: frame.system_id,
                reason: e.to_string(),
            }),
        }
    }

    fn set_mode(&mut self, mode: FlightMode, reason: &str, out: &mut Vec<Event>) {
        if self.state.mode == mode {
            return;
        }
        out.push(Event::ModeChange {
            from: self.state.mode.name().into(),
            to: mode.name().into(),
            reason: reason.into(),
        });
        self.state.mode = mode;
        self.state.armed = mode != FlightMode::Disarmed;
        if mode == FlightMode::Disarmed {
            self.state.active_target = None;
            self.state.loiter_until = None;
            self.state.groundspeed = 0.0;
            self.state.climb_rate = 0.0;
        }
    }

    fn reject(&mut self, code: u16, reason: &str, out: &mut Vec<Event>) {
        self.stats.commands_rejected += 1;
        out.push(Event::CommandRejected {
            command: code,
            reason: reason.into(),
        });
    }

    fn set_target(&mut self, target: GeoPoint) {
        self.state.active_target = Some(target);
        self.state.loiter_until = None;
        self.arrived = false;
        self.loiter_expired = false;
    }

    /// Applies one command addressed to this vehicle.
    pub fn handle_command(&mut self, now: Tick, cmd: &CommandMsg, out: &mut Vec<Event>) {
        let code = cmd.command.code();
        let p = |n: usize| cmd.param(n) as f64;
        if cmd.command == CommandId::SetServo {
            out.push(Event::Unsupported { command: code });
            return;
        }
        if cmd.command == CommandId::SetMode {
            self.apply_flags(ModeFlags(p(1) as u8), out);
            return;
        }
        if !self.state.armed {
            self.reject(code, "vehicle disarmed", out);
            return;
        }
        if self.failsafe_engaged {
            self.reject(code, "failsafe active", out);
            return;
        }
        let here = self.state.position;
        match cmd.command {
            CommandId::Takeoff => {
                let alt = p(7);
                if alt <= 0.0 {
                    self.reject(code, "takeoff altitude must be positive", out);
                    return;
                }
                self.set_target(here.with_alt(alt));
                self.set_mode(FlightMode::Takeoff, "command", out);
            }
            CommandId::Waypoint => {
                let target = GeoPoint::new(p(5), p(6), p(7));
                if !target.is_flyable() {
                    self.reject(code, "target not flyable", out);
                    return;
                }
                self.set_target(target);
                self.set_mode(FlightMode::Waypoint, "command", out);
            }
            CommandId::LoiterTime => {
                let mut target = GeoPoint::new(p(5), p(6), p(7));
                if target.lat == 0.0 && target.lon == 0.0 {
                    target.lat = here.lat;
                    target.lon = here.lon;
                }
                if target.alt <= 0.0 {
                    target.alt = here.alt;
                }
                if !target.is_flyable() || p(1) < 0.0 {
                    self.reject(code, "bad loiter parameters", out);
                    return;
                }
                self.set_target(target);
                self.loiter_seconds = p(1);
                self.set_mode(FlightMode::Loiter, "command", out);
                self.check_arrival(now, out);
            }
            CommandId::ReturnToLaunch => {
                if !self.state.gps_lock {
                    self.reject(code, "no gps lock", out);
                    return;
                }
                self.set_target(self.state.home.with_alt(here.alt));
                self.set_mode(FlightMode::Rtl, "command", out);
            }
            CommandId::Land => self.begin_land(here, "command", out),
            CommandId::SetMode | CommandId::SetServo => unreachable!("handled above"),
        }
        self.stats.commands_accepted += 1;
        out.push(Event::CommandAccepted { command: code });
    }

    fn apply_flags(&mut self, flags: ModeFlags, out: &mut Vec<Event>) {
        let code = CommandId::SetMode.code();
        if flags.armed() && !self.state.armed {
            if self.endurance_ticks == 0 {
                self.reject(code, "endurance exhausted", out);
                return;
            }
            self.set_mode(FlightMode::ArmedIdle, "set_mode", out);
        } else if !flags.armed() && self.state.armed {
            if self.state.airborne() {
                self.reject(code, "cannot disarm in flight", out);
                return;
            }
            self.set_mode(FlightMode::Disarmed, "set_mode", out);
        }
        self.flags = flags;
        self.stats.commands_accepted += 1;
        out.push(Event::CommandAccepted { command: code });
    }

    fn begin_land(&mut self, point: GeoPoint, reason: &str, out: &mut Vec<Event>) {
        self.land_point = point.with_alt(0.0);
        self.set_target(self.land_point);
        self.set_mode(FlightMode::Land, reason, out);
    }

    /// Engages RTL (with GPS lock) or LAND when the ACU has been silent
    /// longer than the timeout.
    pub fn failsafe_check(&mut self, now: Tick, out: &mut Vec<Event>) {
        if !self.state.armed || self.failsafe_engaged {
            return;
        }
        let Some(last) = self.last_acu_heartbeat else {
            return;
        };
        let silence = now.saturating_sub(last);
        if silence <= self.cfg.heartbeat_timeout {
            return;
        }
        self.failsafe_engaged = true;
        let here = self.state.position;
        let rtl = self.state.gps_lock && self.state.airborne();
        out.push(Event::Failsafe {
            action: if rtl { "RTL" } else { "LAND" }.into(),
            silence: ticks_to_seconds(silence),
        });
        if rtl {
            self.set_target(self.state.home.with_alt(here.alt));
            self.set_mode(FlightMode::Rtl, "failsafe", out);
        } else {
            self.begin_land(here, "failsafe", out);
        }
    }

    fn check_arrival(&mut self, now: Tick, out: &mut Vec<Event>) {
        let Some(target) = self.state.active_target else {
            return;
        };
        if self.arrived {
            return;
        }
        let d = enu_offset(&self.state.position, &target);
        let reached = match self.state.mode {
            FlightMode::Rtl => d.horizontal() <= self.cfg.acceptance_radius,
            FlightMode::Takeoff => d.up.abs() <= SNAP,
            _ => d.norm() <= self.cfg.acceptance_radius,
        };
        if !reached {
            return;
        }
        self.arrived = true;
        match self.state.mode {
            FlightMode::Waypoint => {
                self.arrivals += 1;
                out.push(Event::WaypointReached {
                    lat: target.lat,
                    lon: target.lon,
                    alt: target.alt,
                })
            }
            FlightMode::Loiter => {
                self.arrivals += 1;
                self.state.loiter_until =
                    Some(now + (self.loiter_seconds * TICKS_PER_SECOND as f64).round() as Tick)
            }
            FlightMode::Takeoff => {
                // hold at the takeoff altitude until told otherwise
                self.set_mode(FlightMode::Loiter, "takeoff_complete", out);
                self.arrived = true;
            }
            FlightMode::Rtl => self.begin_land(self.state.home, "home_reached", out),
            _ => {}
        }
    }

    /// Advances the point-mass model by one tick.
    pub fn step_kinematics(&mut self, now: Tick, out: &mut Vec<Event>) {
        if self.state.armed {
            self.endurance_ticks = self.endurance_ticks.saturating_sub(1);
            self.state.endurance_remaining = ticks_to_seconds(self.endurance_ticks);
            if self.endurance_ticks == 0 && !self.endurance_logged {
                self.endurance_logged = true;
                out.push(Event::EnduranceExhausted {
                    airborne: self.state.airborne(),
                });
                if self.state.airborne() {
                    if self.state.mode != FlightMode::Land {
                        self.begin_land(self.state.position, "endurance", out);
                    }
                } else {
                    self.set_mode(FlightMode::Disarmed, "endurance", out);
                }
            }
        }

        let old = self.state.position;
        if let (true, Some(target)) = (self.state.armed, self.state.active_target) {
            let dt = TICK_SECONDS;
            let d = enu_offset(&old, &target);
            let h = d.horizontal();
            let max_h = self.cfg.cruise_speed * dt;
            let (lat, lon) = if h <= max_h + SNAP {
                (target.lat, target.lon)
            } else {
                let f = max_h / h;
                (
                    old.lat + (target.lat - old.lat) * f,
                    old.lon + (target.lon - old.lon) * f,
                )
            };
            let max_v = self.cfg.climb_rate * dt;
            let alt = if d.up.abs() <= max_v + SNAP {
                target.alt
            } else {
                old.alt + max_v.copysign(d.up)
            };
            let new = GeoPoint::new(lat, lon, alt.max(0.0));
            let step = enu_offset(&old, &new);
            self.state.position = new;
            self.state.groundspeed = step.horizontal() / dt;
            self.state.climb_rate = step.up / dt;
            if step.horizontal() > 0.0 {
                self.state.heading = heading_deg(&step);
            }
            self.state.odometer += step.norm();
        } else {
            self.state.groundspeed = 0.0;
            self.state.climb_rate = 0.0;
        }

        match self.state.mode {
            FlightMode::Land if self.state.position.alt <= 0.0 => {
                self.state.position.alt = 0.0;
                self.set_mode(FlightMode::Disarmed, "landed", out);
            }
            FlightMode::Loiter => {
                self.check_arrival(now, out);
                if let Some(until) = self.state.loiter_until {
                    if now >= until && !self.loiter_expired {
                        self.loiter_expired = true;
                        self.loiter_expiries += 1;
                        out.push(Event::LoiterExpired {});
                    }
                }
            }
            FlightMode::Takeoff | FlightMode::Waypoint | FlightMode::Rtl => {
                self.check_arrival(now, out)
            }
            _ => {}
        }
    }

    /// True once an accepted loiter has run its full duration.
    pub fn loiter_expired(&self) -> bool {
        self.loiter_expired
    }

    /// True once the vehicle is within the acceptance radius of its target.
    pub fn target_reached(&self) -> bool {
        self.arrived
    }

    pub fn heartbeat(&self) -> HeartbeatMsg {
        HeartbeatMsg::new(
            self.cfg.vehicle_type,
            self.cfg.autopilot_type,
            self.mode_flags(),
        )
    }

    /// Sends one heartbeat toward the ACU and records a position fix.
    pub fn heartbeat_tick(&mut self, now: Tick, links: &mut LinkManager, out: &mut Vec<Event>) {
        let s = &self.state;
        out.push(Event::Fix {
            lat: s.position.lat,
            lon: s.position.lon,
            alt: s.position.alt,
            speed: s.groundspeed,
            climb: s.climb_rate,
            heading: s.heading,
            odometer: s.odometer,
        });
        if !links.is_connected(self.link) {
            self.stats.heartbeats_skipped += 1;
            out.push(Event::HeartbeatSkipped {
                reason: "link down".into(),
            });
            return;
        }
        let msg = MavMessage::Heartbeat(self.heartbeat());
        let bytes = encode_frame(&msg, self.seq, self.cfg.system_id, self.cfg.component_id)
            .expect("configured system id is non-zero");
        match links.send_bytes(self.link, End::B, &bytes, now) {
            Ok(_) => {
                out.push(Event::FrameTx {
                    msgid: msg.msg_id(),
                    seq: self.seq,
                    sysid: self.cfg.system_id,
                    compid: self.cfg.component_id,
                    len: (bytes.len() - crate::mavlink::FRAME_OVERHEAD) as u16,
                });
                self.seq = self.seq.wrapping_add(1);
                self.stats.heartbeats_sent += 1;
            }
            Err(e) => {
                self.stats.heartbeats_skipped += 1;
                out.push(Event::HeartbeatSkipped {
                    reason: e.to_string(),
                });
            }
        }
    }
}
