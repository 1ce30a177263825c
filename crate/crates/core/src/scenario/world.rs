//! Scenario execution: wires every node's stack to the shared medium and
//! steps the whole world one tick at a time.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{metrics, Arrival, Endpoint, MetricsReport, NodeKind, Role, ScenarioSpec};
use crate::acu::Acu;
use crate::agent::{Action, Agent, Custody};
use crate::autopilot::{Autopilot, VehicleConfig};
use crate::geo::GeoPoint;
use crate::links::{LinkConfig, LinkManager, DEFAULT_BAUD};
use crate::logger::{render_log, Event, EventLog, EventRecord, LogError, LogHeader};
use crate::network::{Network, Packet, PduDecision, NO_DEADLINE};
use crate::radio::{Jammer, Medium};
use crate::sim::{seconds_to_ticks, NodeId, RngLane, RngStream, Tick};

const US_PER_TICK: u64 = 10_000;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("event log: {0}")]
    Log(#[from] LogError),
    #[error("metrics: {0}")]
    Metrics(#[from] metrics::MetricsError),
}

/// Result of a completed run. The report is computed from `records`.
#[derive(Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub header: LogHeader,
    pub records: Vec<EventRecord>,
}

impl RunOutput {
    pub fn log_bytes(&self) -> Vec<u8> {
        render_log(&self.header, &self.records)
    }
}

struct AirStack {
    links: LinkManager,
    acu: Acu,
    autopilot: Autopilot,
}

struct FlowState {
    index: usize,
    next_us: u64,
    stop_us: Option<u64>,
}

struct NodeRt {
    id: NodeId,
    role: Role,
    position: GeoPoint,
    network: Option<Network>,
    air: Option<AirStack>,
    agent: Option<Agent>,
    traffic_rng: RngStream,
    flows: Vec<FlowState>,
}

pub struct World {
    spec: ScenarioSpec,
    now: Tick,
    end: Tick,
    medium: Medium,
    nodes: Vec<NodeRt>,
    log: EventLog,
    /// Per packet, the ttl a zero-hop copy would carry; hop count of a
    /// received copy is `base - ttl + 1`.
    ttl_base: BTreeMap<(NodeId, u32), u8>,
    finished: bool,
}

fn to_us(seconds: f64) -> u64 {
    (seconds * 1e6).round().max(0.0) as u64
}

impl World {
    pub fn new(spec: &ScenarioSpec, seed_override: Option<u64>) -> World {
        let spec = spec.clone();
        let seed = seed_override.unwrap_or(spec.seed);
        let end = seconds_to_ticks(spec.duration_s);
        let mut medium = Medium::new(spec.mac.clone(), spec.channel.clone(), seed);
        let mut nodes = Vec::new();
        let mut sorted: Vec<_> = spec.nodes.iter().collect();
        sorted.sort_by_key(|n| n.id);
        for n in sorted {
            if !n.cooperative() {
                if let Some(j) = spec.spectral.jammers.iter().find(|j| j.node == n.id) {
                    medium.add_jammer(Jammer {
                        node: n.id,
                        position: n.start,
                        power_dbm: j.power_dbm,
                        frequency_hz: j.frequency_hz.unwrap_or(n.radio.frequency_hz),
                        behavior: j.behavior(),
                        noise_floor_dbm: n.radio.noise_floor_dbm,
                    });
                }
            } else {
                medium.add_station(n.id, n.radio.clone(), n.start);
            }
            let mission = spec.plan_for(n.id).cloned();
            let air = (n.kind == NodeKind::Air && n.cooperative()).then(|| {
                let mut links = LinkManager::new();
                let link = links
                    .open_link(LinkConfig::serial(
                        format!("ttyACM{}", n.id.0),
                        DEFAULT_BAUD,
                    ))
                    .expect("default baud is valid");
                links.connect_link(link).expect("link was just opened");
                let cfg = VehicleConfig {
                    system_id: n.id.0,
                    endurance_s: n.endurance_s,
                    gps_lock: n.gps_lock,
                    ..VehicleConfig::default()
                };
                let mut acu = Acu::new(link);
                if let Some(s) = n.stop_acu_heartbeat_s {
                    acu.stop_heartbeat_after(seconds_to_ticks(s));
                }
                AirStack {
                    links,
                    acu,
                    autopilot: Autopilot::new(cfg, n.start, link),
                }
            });
            let agent = air.as_ref().map(|_| {
                let arm_at = n
                    .arm_at_s
                    .or(mission.as_ref().map(|_| 0.0))
                    .map(seconds_to_ticks);
                let mut a = Agent::new(n.id, n.id.0, mission, arm_at);
                a.set_role(n.role.name());
                a
            });
            let mut traffic_rng = RngStream::new(seed, n.id, RngLane::Traffic);
            let flows = spec
                .traffic
                .iter()
                .enumerate()
                .filter(|(_, f)| f.source == n.id)
                .map(|(index, f)| {
                    let start = to_us(f.start_s);
                    let next_us = match f.arrival {
                        Arrival::Periodic => start,
                        Arrival::Poisson => start + to_us(traffic_rng.exponential(f.period_s)),
                    };
                    FlowState {
                        index,
                        next_us,
                        stop_us: f.stop_s.map(to_us),
                    }
                })
                .collect();
            nodes.push(NodeRt {
                id: n.id,
                role: n.role,
                position: n.start,
                network: n.cooperative().then(|| Network::new(n.id)),
                air,
                agent,
                traffic_rng,
                flows,
            });
        }
        let header = LogHeader::new(
            spec.name.clone(),
            seed,
            spec.duration_s,
            nodes.iter().map(|n| n.id).collect(),
        );
        World {
            spec,
            now: 0,
            end,
            medium,
            nodes,
            log: EventLog::new(header),
            ttl_base: BTreeMap::new(),
            finished: false,
        }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn end(&self) -> Tick {
        self.end
    }

    pub fn is_done(&self) -> bool {
        self.now >= self.end
    }

    pub fn medium(&self) -> &Medium {
        &self.medium
    }

    pub fn autopilot(&self, node: NodeId) -> Option<&Autopilot> {
        self.find(node)?.air.as_ref().map(|a| &a.autopilot)
    }

    pub fn acu(&self, node: NodeId) -> Option<&Acu> {
        self.find(node)?.air.as_ref().map(|a| &a.acu)
    }

    pub fn agent(&self, node: NodeId) -> Option<&Agent> {
        self.find(node)?.agent.as_ref()
    }

    pub fn custody(&self, node: NodeId) -> Option<&Custody> {
        self.agent(node).map(|a| a.custody())
    }

    fn find(&self, node: NodeId) -> Option<&NodeRt> {
        self.nodes.iter().find(|n| n.id == node)
    }

    fn current_leader(&self) -> Option<NodeId> {
        self.nodes
            .iter()
            .find(|n| n.role == Role::Leader && n.network.is_some())
            .map(|n| n.id)
    }

    /// Executes one tick.
    pub fn step(&mut self) -> Result<(), RunError> {
        let t = self.now;
        for rc in &self.spec.role_changes {
            if seconds_to_ticks(rc.at_s) == t {
                if let Some(n) = self.nodes.iter_mut().find(|n| n.id == rc.node) {
                    n.role = rc.role;
                    if let Some(a) = n.agent.as_mut() {
                        a.set_role(rc.role.name());
                    }
                    self.log.record(
                        t,
                        rc.node,
                        Event::RoleChange {
                            role: rc.role.name().into(),
                        },
                    )?;
                }
            }
        }
        let mut radio = Vec::new();
        self.medium.advance(t * US_PER_TICK, &mut radio);
        for (node, ev) in radio {
            self.log.record(t, node, ev)?;
        }
        let leader = self.current_leader();
        let fanout = self.spec.cooperative_count().saturating_sub(1) as u32;
        for i in 0..self.nodes.len() {
            let mut out = Vec::new();
            let node = &mut self.nodes[i];
            step_node(
                node,
                t,
                &self.spec,
                &mut self.medium,
                &mut self.ttl_base,
                leader,
                fanout,
                &mut out,
            );
            let id = node.id;
            for ev in out {
                self.log.record(t, id, ev)?;
            }
        }
        self.log.close_tick();
        self.now += 1;
        Ok(())
    }

    /// Writes the terminating records and computes the report.
    pub fn finish(mut self) -> Result<RunOutput, RunError> {
        if !self.finished {
            self.finished = true;
            let t = self.now;
            for n in &self.nodes {
                let (odometer, mode, armed, hb, acu_hb) = match &n.air {
                    Some(a) => {
                        let s = a.autopilot.state();
                        (
                            s.odometer,
                            s.mode.name().to_string(),
                            s.armed,
                            a.autopilot.stats().heartbeats_sent,
                            a.acu.stats().heartbeats_sent,
                        )
                    }
                    None => (0.0, "NONE".to_string(), false, 0, 0),
                };
                let (calls, custody) = match &n.agent {
                    Some(a) => (a.tracker_calls(), a.custody().clone()),
                    None => (0, Custody::default()),
                };
                self.log.record(
                    t,
                    n.id,
                    Event::NodeFinal {
                        odometer,
                        mode,
                        armed,
                        tracker_calls: calls,
                        heartbeats_tx: hb,
                        acu_heartbeats_tx: acu_hb,
                        custody_taken: custody.taken(),
                        custody_released: custody.released(),
                        custody_held: custody.held(),
                    },
                )?;
            }
            self.log
                .record(t, NodeId::WORLD, Event::RunEnd { ticks: t })?;
        }
        let (header, records) = self.log.into_records();
        let report = metrics::compute_metrics(Some(&header), &records)?;
        Ok(RunOutput {
            report,
            header,
            records,
        })
    }
}

/// Runs a scenario for its full duration.
pub fn run(spec: &ScenarioSpec, seed_override: Option<u64>) -> Result<RunOutput, RunError> {
    let mut w = World::new(spec, seed_override);
    while !w.is_done() {
        w.step()?;
    }
    w.finish()
}

#[allow(clippy::too_many_arguments)]
fn send(
    net: &mut Network,
    ttl_base: &mut BTreeMap<(NodeId, u32), u8>,
    t: Tick,
    dest: NodeId,
    priority: u8,
    deadline_s: Option<f64>,
    ttl: Option<u8>,
    payload: &[u8],
    fanout: u32,
) -> Event {
    let deadline_tick = deadline_s
        .map(|d| (t + seconds_to_ticks(d)).min(NO_DEADLINE as Tick - 1) as u32)
        .unwrap_or(NO_DEADLINE);
    let ttl = ttl.unwrap_or(net.initial_ttl());
    match net.send_with_ttl(dest, priority, deadline_tick, payload, ttl) {
        Ok(p) => {
            ttl_base.insert(p.key(), p.ttl);
            Event::PacketSend {
                ids: p.ids(),
                ttl: p.ttl,
                deadline: deadline_s.unwrap_or(0.0),
                fanout: if dest.is_broadcast() { fanout } else { 1 },
            }
        }
        Err(e) => Event::Fault {
            message: e.to_string(),
        },
    }
}

fn deliver_event(
    p: &Packet,
    t: Tick,
    ttl_base: &BTreeMap<(NodeId, u32), u8>,
    default_ttl: u8,
) -> Event {
    let base = ttl_base.get(&p.key()).copied().unwrap_or(default_ttl);
    Event::PacketDeliver {
        ids: p.ids(),
        hops: base.saturating_sub(p.ttl).saturating_add(1),
        late: p.is_late(t),
    }
}

#[allow(clippy::too_many_arguments)]
fn step_node(
    node: &mut NodeRt,
    t: Tick,
    spec: &ScenarioSpec,
    medium: &mut Medium,
    ttl_base: &mut BTreeMap<(NodeId, u32), u8>,
    leader: Option<NodeId>,
    fanout: u32,
    out: &mut Vec<Event>,
) {
    let me = node.id;
    let Some(net) = node.network.as_mut() else {
        return;
    };

    // network ingest
    let zone = node
        .agent
        .as_ref()
        .and_then(|a| a.ferry_zone(&node.position));
    for rx in medium.take_inbox(me) {
        let decision = net.on_pdu_from_mac(&rx.pdu);
        let (delivered, relay) = match decision {
            PduDecision::Deliver(p) => (Some(p), None),
            PduDecision::Relay(p) => (None, Some(p)),
            PduDecision::DeliverAndRelay { delivered, relay } => (Some(delivered), Some(relay)),
            PduDecision::Drop {
                packet: Some(p),
                reason,
            } => {
                out.push(Event::PacketDrop {
                    ids: p.ids(),
                    reason: reason.name().into(),
                });
                (None, None)
            }
            PduDecision::Drop {
                packet: None,
                reason,
            } => {
                out.push(Event::Fault {
                    message: format!("{} pdu from node {}", reason.name(), rx.sender.0),
                });
                (None, None)
            }
        };
        if let Some(p) = delivered {
            out.push(deliver_event(&p, t, ttl_base, net.initial_ttl()));
        }
        if let Some(p) = relay {
            let carry = match (zone, node.agent.as_mut()) {
                (Some(z), Some(agent)) if !p.destination.is_broadcast() && p.destination != me => {
                    Some((z, agent))
                }
                _ => None,
            };
            match carry {
                Some((z, agent)) => {
                    let (source, destination, packet_id) =
                        (p.source.0, p.destination.0, p.packet_id);
                    let held = agent.custody_mut().take(z, p);
                    out.push(Event::CustodyTake {
                        source,
                        destination,
                        packet_id,
                        held,
                    });
                }
                None => {
                    out.push(Event::PacketRelay {
                        ids: p.ids(),
                        ttl: p.ttl,
                    });
                    net.queue_relay(p);
                }
            }
        }
    }
    while net.receive_packet().is_some() {}

    if let Some(air) = node.air.as_mut() {
        air.acu.heartbeat_tick(t, &mut air.links, out);
        if let Some(agent) = node.agent.as_mut() {
            let telem = air.autopilot.telemetry();
            let sysid = air.autopilot.config().system_id;
            let known = air.acu.proxy(sysid).is_some();
            for action in agent.tick(t, &telem, known, out) {
                match action {
                    Action::Command { command, params } => {
                        let compid = air.autopilot.config().component_id;
                        if let Err(e) = air.acu.execute_command(
                            t,
                            &mut air.links,
                            command.code(),
                            sysid,
                            compid,
                            params,
                            out,
                        ) {
                            out.push(Event::Fault {
                                message: e.to_string(),
                            });
                        }
                    }
                    Action::Send {
                        destination,
                        priority,
                        deadline_s,
                        payload,
                    } => {
                        let ev = send(
                            net,
                            ttl_base,
                            t,
                            destination,
                            priority,
                            deadline_s,
                            None,
                            &payload,
                            fanout,
                        );
                        out.push(ev);
                    }
                }
            }
        }
        air.autopilot.tick(t, &mut air.links, out);
        node.position = air.autopilot.state().position;
        medium.set_position(me, node.position);
        air.acu.poll(t, &mut air.links, out);
        air.acu.check_heartbeat_timeout(t, out);
    }

    // custody release on the far side
    if let Some(agent) = node.agent.as_mut() {
        if let Some(z) = agent.ferry_zone(&node.position) {
            let batch = agent.custody_mut().release_in(z);
            let mut held = agent.custody().held() + batch.len() as u32;
            for p in batch {
                held -= 1;
                let hops = ttl_base
                    .get(&p.key())
                    .copied()
                    .unwrap_or(p.ttl)
                    .saturating_sub(p.ttl);
                let (source, destination, packet_id) = (p.source.0, p.destination.0, p.packet_id);
                ttl_base.insert(p.key(), net.initial_ttl().saturating_add(hops));
                net.reinject(p);
                out.push(Event::CustodyRelease {
                    source,
                    destination,
                    packet_id,
                    held,
                });
            }
        }
    }

    // traffic generation
    let window_end = (t + 1) * US_PER_TICK;
    for fs in node.flows.iter_mut() {
        let f = &spec.traffic[fs.index];
        while fs.next_us < window_end && fs.stop_us.is_none_or(|s| fs.next_us < s) {
            let dest = match &f.destination {
                Endpoint::Node(d) => Some(*d),
                Endpoint::Named(s) if s == "broadcast" => Some(NodeId::BROADCAST),
                Endpoint::Named(_) => leader,
            };
            match dest {
                Some(d) if d != me => {
                    let payload = vec![f.priority; f.bytes];
                    let ev = send(
                        net,
                        ttl_base,
                        t,
                        d,
                        f.priority,
                        f.deadline_s,
                        f.ttl,
                        &payload,
                        fanout,
                    );
                    out.push(ev);
                }
                Some(_) => {}
                None => out.push(Event::Fault {
                    message: "no leader to receive flow".into(),
                }),
            }
            fs.next_us += match f.arrival {
                Arrival::Periodic => to_us(f.period_s).max(1),
                Arrival::Poisson => to_us(node.traffic_rng.exponential(f.period_s)).max(1),
            };
        }
    }

    // hand PDUs to the MAC
    while net.pending() > 0 && medium.has_room(me) {
        let p = net.next_pdu().expect("pending packet");
        if let Err(reason) = medium.submit(me, p.receiver, &p.encode(), t * US_PER_TICK) {
            out.push(Event::Fault {
                message: format!("mac refused pdu: {reason}"),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{enu_offset, Enu};
    use crate::logger::parse_log;
    use crate::scenario::{compute_metrics, parse_scenario};
    use proptest::prelude::*;
    use serde_json::json;

    const HOME: GeoPoint = GeoPoint::new(42.0, -76.0, 0.0);

    fn at(east: f64, north: f64, up: f64) -> serde_json::Value {
        let p = HOME.offset(Enu { east, north, up });
        json!({"lat": p.lat, "lon": p.lon, "alt": p.alt})
    }

    fn spec(v: serde_json::Value) -> ScenarioSpec {
        parse_scenario(&v.to_string()).unwrap()
    }

    fn line3() -> ScenarioSpec {
        spec(json!({
            "schema": 1, "name": "line3", "seed": 11, "duration_s": 12,
            "channel": {"slope_db": 0.1},
            "nodes": [
                {"id": 1, "kind": "ground", "start": at(0.0, 0.0, 0.0)},
                {"id": 2, "kind": "ground", "start": at(100.0, 0.0, 0.0)},
                {"id": 3, "kind": "ground", "start": at(200.0, 0.0, 0.0)}
            ],
            "traffic": [
                {"source": 1, "destination": 3, "bytes": 100, "period_s": 0.5, "start_s": 0.1},
                {"source": 3, "destination": 1, "bytes": 100, "period_s": 0.5, "start_s": 0.3, "priority": 0}
            ]
        }))
    }

    #[test]
    fn flooding_on_a_lossless_line_delivers_everything() {
        let out = run(&line3(), None).unwrap();
        for c in &out.report.classes {
            assert!(c.offered > 0);
            assert_eq!(c.delivered, c.offered, "{c:?}");
        }
        let hops: Vec<u8> = out
            .records
            .iter()
            .filter_map(|r| match r.event {
                Event::PacketDeliver { hops, .. } => Some(hops),
                _ => None,
            })
            .collect();
        assert!(hops.iter().all(|&h| h == 2), "{hops:?}");
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = line3();
        let a = run(&s, None).unwrap();
        let b = run(&s, None).unwrap();
        assert_eq!(a.log_bytes(), b.log_bytes());
        assert_eq!(a.report, b.report);
        let c = run(&s, Some(12)).unwrap();
        assert_eq!(c.header.seed, 12);
    }

    #[test]
    fn persisted_log_reproduces_the_report() {
        let out = run(&line3(), None).unwrap();
        let text = String::from_utf8(out.log_bytes()).unwrap();
        let (header, records) = parse_log(&text).unwrap();
        assert_eq!(records, out.records);
        assert_eq!(
            compute_metrics(header.as_ref(), &records).unwrap(),
            out.report
        );
    }

    fn straight_flight(north: f64) -> ScenarioSpec {
        spec(json!({
            "schema": 1, "name": "straight", "seed": 1, "duration_s": 70,
            "nodes": [{"id": 1, "kind": "air", "start": at(0.0, 0.0, 0.0)}],
            "plans": [{"node": 1, "mission": {"type": "plan", "takeoff_alt": 10,
                "tasks": [{"target": at(0.0, north, 10.0), "deadline_s": 60}]}}]
        }))
    }

    #[test]
    fn straight_leg_distance() {
        // arrival is declared at the 2 m acceptance radius, so a target
        // 102 m out ends a 100 m leg
        let mut w = World::new(&straight_flight(102.0), None);
        let mut leg_start = None;
        let mut leg_end = None;
        while !w.is_done() {
            w.step().unwrap();
            let s = w.autopilot(NodeId(1)).unwrap().state();
            match s.mode {
                crate::autopilot::FlightMode::Waypoint if leg_start.is_none() => {
                    leg_start = Some(s.odometer)
                }
                crate::autopilot::FlightMode::Rtl if leg_end.is_none() => {
                    leg_end = Some(s.odometer)
                }
                _ => {}
            }
        }
        let d = leg_end.unwrap() - leg_start.unwrap();
        assert!((d - 100.0).abs() <= 0.5, "{d}");
    }

    #[test]
    fn distance_is_the_sum_of_tick_displacements() {
        let spec = straight_flight(100.0);
        let mut w = World::new(&spec, None);
        let mut last = w.autopilot(NodeId(1)).unwrap().state().position;
        let mut sum = 0.0;
        while !w.is_done() {
            w.step().unwrap();
            let p = w.autopilot(NodeId(1)).unwrap().state().position;
            sum += enu_offset(&last, &p).norm();
            last = p;
        }
        let out = w.finish().unwrap();
        let d = out.report.distance(1).unwrap();
        assert!((d - sum).abs() <= 1e-3, "{d} vs {sum}");
        let m = &out.report.missions[0];
        let last_task = out
            .report
            .tasks
            .iter()
            .map(|t| t.completion_s)
            .fold(0.0, f64::max);
        assert!(m.completion_s.unwrap() >= last_task);
        assert_eq!(out.report.tasks.len(), 1);
    }

    #[test]
    fn fix_track_agrees_with_odometer() {
        let out = run(&straight_flight(100.0), None).unwrap();
        let fixes: Vec<GeoPoint> = out
            .report
            .track
            .iter()
            .map(|s| GeoPoint::new(s.lat, s.lon, s.alt))
            .collect();
        let chord: f64 = fixes
            .windows(2)
            .map(|w| enu_offset(&w[0], &w[1]).norm())
            .sum();
        let d = out.report.distance(1).unwrap();
        // 1 Hz chords only cut corners: a one-second chord spanning a right
        // angle loses at most (1 - 1/sqrt 2) of its ~5.4 m, and this path
        // has three corners
        assert!(
            chord <= d + 0.05 && chord >= d - 3.0 * 1.6,
            "{chord} vs {d}"
        );
    }

    #[test]
    fn world_exposes_component_state() {
        let mut w = World::new(&straight_flight(100.0), None);
        for _ in 0..200 {
            w.step().unwrap();
        }
        assert!(w.autopilot(NodeId(1)).unwrap().state().armed);
        assert!(w.acu(NodeId(1)).unwrap().proxy(1).is_some());
        assert_eq!(w.agent(NodeId(1)).unwrap().tracker_calls(), 200);
        assert!(w.custody(NodeId(1)).unwrap().conserved());
    }

    fn contested(seed: u64, jammed: bool) -> ScenarioSpec {
        let mut nodes = vec![
            json!({"id": 1, "kind": "ground", "start": at(-75.0, 0.0, 0.0)}),
            json!({"id": 2, "kind": "ground", "start": at(-65.0, 0.0, 0.0)}),
            json!({"id": 3, "kind": "ground", "start": at(65.0, 0.0, 0.0)}),
            json!({"id": 4, "kind": "ground", "start": at(75.0, 0.0, 0.0)}),
        ];
        let mut spectral = json!({"mode": "open"});
        if jammed {
            nodes.push(
                json!({"id": 9, "kind": "ground", "allegiance": "noncooperative",
                              "start": at(0.0, 0.0, 0.0)}),
            );
            spectral = json!({"mode": "contested",
                              "jammers": [{"node": 9, "power_dbm": 20, "behavior": "passive"}]});
        }
        spec(json!({
            "schema": 1, "name": "contested", "seed": seed, "duration_s": 20,
            "nodes": nodes, "spectral": spectral,
            "traffic": [
                {"source": 1, "destination": 4, "bytes": 64, "period_s": 0.5},
                {"source": 1, "destination": 2, "bytes": 64, "period_s": 0.5, "start_s": 0.25, "priority": 0}
            ]
        }))
    }

    fn delivery(r: &MetricsReport, priority: u8) -> f64 {
        r.class(priority)
            .map(|c| c.delivered as f64 / c.offered as f64)
            .unwrap_or(1.0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn removing_jammers_never_hurts(seed in any::<u64>()) {
            let with = run(&contested(seed, true), None).unwrap().report;
            let without = run(&contested(seed, false), None).unwrap().report;
            for p in [0u8, 1] {
                prop_assert!(delivery(&without, p) >= delivery(&with, p),
                    "class {p}: {} < {}", delivery(&without, p), delivery(&with, p));
            }
        }

        #[test]
        fn class_accounting_balances(seed in any::<u64>()) {
            let r = run(&contested(seed, true), None).unwrap().report;
            for c in &r.classes {
                prop_assert_eq!(c.delivered + c.lost, c.offered);
                prop_assert!((0.0..=1.0).contains(&c.loss_ratio));
                prop_assert!((0.0..=1.0).contains(&c.deadline_miss_ratio));
            }
        }
    }
}
