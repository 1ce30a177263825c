//! Benchmark scenarios: schema, loading and validation.
//!
//! A scenario is a JSON document. Unknown keys anywhere are errors, and
//! validation reports every violation it finds with its location rather
//! than stopping at the first.

mod metrics;
mod world;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::MissionSpec;
use crate::autopilot::DEFAULT_ENDURANCE_S;
use crate::geo::GeoPoint;
use crate::network::MTU;
use crate::radio::{
    ChannelParams, JammerBehavior, MacConfig, MacMode, RadioConfig, MAX_FREQUENCY_HZ,
    MIN_FREQUENCY_HZ,
};
use crate::sim::NodeId;

pub use metrics::{
    compute_metrics, render_metrics, ClassMetrics, CustodyMetrics, FlowMetrics, MetricsError,
    MetricsReport, MissionMetrics, NodeDistance, RadioMetrics, TaskMetrics, TrackSample,
};
pub use world::{run, RunError, RunOutput, World};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;
pub const MAX_DURATION_S: f64 = 24.0 * 3600.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Air,
    Ground,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allegiance {
    #[default]
    Cooperative,
    Noncooperative,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Leader,
    #[default]
    Follower,
    Ferry,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Leader => "leader",
            Role::Follower => "follower",
            Role::Ferry => "ferry",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralMode {
    #[default]
    Open,
    Congested,
    Contested,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arrival {
    #[default]
    Periodic,
    Poisson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JammerKind {
    Passive,
    Adaptive,
}

fn yes() -> bool {
    true
}
fn default_endurance() -> f64 {
    DEFAULT_ENDURANCE_S
}
fn default_priority() -> u8 {
    1
}
fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(default)]
    pub allegiance: Allegiance,
    #[serde(default)]
    pub role: Role,
    pub start: GeoPoint,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default = "default_endurance")]
    pub endurance_s: f64,
    #[serde(default = "yes")]
    pub gps_lock: bool,
    /// When the agent arms the vehicle; defaults to 0 for nodes with a plan.
    #[serde(default)]
    pub arm_at_s: Option<f64>,
    /// The companion computer stops sending heartbeats after this time.
    #[serde(default)]
    pub stop_acu_heartbeat_s: Option<f64>,
}

impl NodeSpec {
    pub fn cooperative(&self) -> bool {
        self.allegiance == Allegiance::Cooperative
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSpec {
    pub node: NodeId,
    pub mission: MissionSpec,
}

/// A flow sink: a node id, `"broadcast"`, or `"leader"`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Endpoint {
    Node(NodeId),
    Named(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub source: NodeId,
    pub destination: Endpoint,
    pub bytes: usize,
    pub period_s: f64,
    #[serde(default)]
    pub arrival: Arrival,
    #[serde(default = "default_priority")]
    pub priority: u8,
    #[serde(default)]
    pub deadline_s: Option<f64>,
    #[serde(default)]
    pub ttl: Option<u8>,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default)]
    pub stop_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JammerSpec {
    /// A noncooperative node; the jammer sits at its start position.
    pub node: NodeId,
    pub power_dbm: f64,
    /// Defaults to the node's radio frequency.
    #[serde(default)]
    pub frequency_hz: Option<f64>,
    pub behavior: JammerKind,
    #[serde(default = "one")]
    pub duty_cycle: f64,
    #[serde(default = "one")]
    pub period_s: f64,
}

impl JammerSpec {
    pub fn behavior(&self) -> JammerBehavior {
        match self.behavior {
            JammerKind::Passive => JammerBehavior::Passive {
                duty_cycle: self.duty_cycle,
                period_s: self.period_s,
            },
            JammerKind::Adaptive => JammerBehavior::Adaptive,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Spectral {
    #[serde(default)]
    pub mode: SpectralMode,
    #[serde(default)]
    pub jammers: Vec<JammerSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleChangeSpec {
    pub at_s: f64,
    pub node: NodeId,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    pub duration_s: f64,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub plans: Vec<PlanSpec>,
    #[serde(default)]
    pub traffic: Vec<FlowSpec>,
    #[serde(default)]
    pub spectral: Spectral,
    #[serde(default)]
    pub mac: MacConfig,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub role_changes: Vec<RoleChangeSpec>,
}

impl ScenarioSpec {
    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn plan_for(&self, id: NodeId) -> Option<&MissionSpec> {
        self.plans.iter().find(|p| p.node == id).map(|p| &p.mission)
    }

    pub fn cooperative_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.cooperative()).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl Violation {
    fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{} violation(s):\n{}", .0.len(), render_violations(.0))]
    Invalid(Vec<Violation>),
}

fn render_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn load(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

/// Parses and fully validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, ScenarioError> {
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_str(text);
    let syntax = |e: serde_json::Error| ScenarioError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    };
    let spec: ScenarioSpec =
        serde_ignored::deserialize(&mut de, |path| unknown.push(path.to_string()))
            .map_err(syntax)?;
    de.end().map_err(syntax)?;
    let mut violations: Vec<Violation> = unknown
        .into_iter()
        .map(|p| Violation::new(p, "unknown key"))
        .collect();
    violations.extend(validate(&spec));
    if violations.is_empty() {
        Ok(spec)
    } else {
        Err(ScenarioError::Invalid(violations))
    }
}

fn finite_nonneg(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

fn finite_pos(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn check_point(v: &mut Vec<Violation>, loc: &str, p: &GeoPoint) {
    if !p.is_flyable() {
        v.push(Violation::new(
            loc,
            format!(
                "position ({}, {}, {}) is not a valid fix",
                p.lat, p.lon, p.alt
            ),
        ));
    }
}

fn check_mission(v: &mut Vec<Violation>, loc: &str, m: &MissionSpec, coop: &BTreeSet<NodeId>) {
    let alt_ok = |a: f64| a.is_finite() && a > 0.0;
    match m {
        MissionSpec::Reference {
            takeoff_alt,
            loiter_time_s,
        } => {
            if !alt_ok(*takeoff_alt) {
                v.push(Violation::new(
                    format!("{loc}.takeoff_alt"),
                    "must be positive",
                ));
            }
            if !finite_nonneg(*loiter_time_s) {
                v.push(Violation::new(
                    format!("{loc}.loiter_time_s"),
                    "must be >= 0",
                ));
            }
        }
        MissionSpec::Plan { takeoff_alt, tasks } => {
            if !alt_ok(*takeoff_alt) {
                v.push(Violation::new(
                    format!("{loc}.takeoff_alt"),
                    "must be positive",
                ));
            }
            for (i, t) in tasks.iter().enumerate() {
                let tl = format!("{loc}.tasks.{i}");
                check_point(v, &format!("{tl}.target"), &t.target);
                if !finite_pos(t.deadline_s) {
                    v.push(Violation::new(
                        format!("{tl}.deadline_s"),
                        "must be positive",
                    ));
                }
                if !finite_nonneg(t.loiter_s) {
                    v.push(Violation::new(format!("{tl}.loiter_s"), "must be >= 0"));
                }
                if t.payload_bytes > MTU {
                    v.push(Violation::new(
                        format!("{tl}.payload_bytes"),
                        format!("{} exceeds the {MTU}-byte MTU", t.payload_bytes),
                    ));
                }
                match t.report_to {
                    Some(r) if !coop.contains(&r) => v.push(Violation::new(
                        format!("{tl}.report_to"),
                        format!("node {} is not a cooperative node", r.0),
                    )),
                    None if t.payload_bytes > 0 => v.push(Violation::new(
                        format!("{tl}.report_to"),
                        "payload_bytes given without a report_to node",
                    )),
                    _ => {}
                }
            }
        }
        MissionSpec::Ferry {
            takeoff_alt,
            region_a,
            region_b,
            custody_radius_m,
        } => {
            if !alt_ok(*takeoff_alt) {
                v.push(Violation::new(
                    format!("{loc}.takeoff_alt"),
                    "must be positive",
                ));
            }
            check_point(v, &format!("{loc}.region_a"), region_a);
            check_point(v, &format!("{loc}.region_b"), region_b);
            if !finite_pos(*custody_radius_m) {
                v.push(Violation::new(
                    format!("{loc}.custody_radius_m"),
                    "must be positive",
                ));
            } else if region_a.distance_to(region_b) <= 2.0 * custody_radius_m {
                v.push(Violation::new(loc, "regions a and b overlap"));
            }
        }
    }
}

/// Every semantic rule a parsed scenario must satisfy.
pub fn validate(spec: &ScenarioSpec) -> Vec<Violation> {
    let mut v = Vec::new();
    if spec.schema != SCENARIO_SCHEMA_VERSION {
        v.push(Violation::new(
            "schema",
            format!(
                "unsupported version {}, expected {SCENARIO_SCHEMA_VERSION}",
                spec.schema
            ),
        ));
    }
    if spec.name.trim().is_empty() {
        v.push(Violation::new("name", "must not be empty"));
    }
    if !finite_pos(spec.duration_s) || spec.duration_s > MAX_DURATION_S {
        v.push(Violation::new(
            "duration_s",
            format!("must be in (0, {MAX_DURATION_S}], got {}", spec.duration_s),
        ));
    }
    for p in spec.mac.problems() {
        v.push(Violation::new("mac", p));
    }
    for p in spec.channel.problems() {
        v.push(Violation::new("channel", p));
    }

    let mut ids: BTreeMap<NodeId, usize> = BTreeMap::new();
    if spec.nodes.is_empty() {
        v.push(Violation::new("nodes", "at least one node is required"));
    }
    for (i, n) in spec.nodes.iter().enumerate() {
        let loc = format!("nodes.{i}");
        if n.id == NodeId::WORLD || n.id.is_broadcast() {
            v.push(Violation::new(
                format!("{loc}.id"),
                format!("node id {} is reserved", n.id.0),
            ));
        }
        if let Some(first) = ids.insert(n.id, i) {
            v.push(Violation::new(
                format!("{loc}.id"),
                format!("duplicate node id {} (first used by nodes.{first})", n.id.0),
            ));
            ids.insert(n.id, first);
        }
        check_point(&mut v, &format!("{loc}.start"), &n.start);
        for p in n.radio.problems() {
            v.push(Violation::new(format!("{loc}.radio"), p));
        }
        if !finite_pos(n.endurance_s) {
            v.push(Violation::new(
                format!("{loc}.endurance_s"),
                "must be positive",
            ));
        }
        if let Some(a) = n.arm_at_s {
            if !finite_nonneg(a) {
                v.push(Violation::new(format!("{loc}.arm_at_s"), "must be >= 0"));
            }
        }
        if let Some(s) = n.stop_acu_heartbeat_s {
            if !finite_nonneg(s) {
                v.push(Violation::new(
                    format!("{loc}.stop_acu_heartbeat_s"),
                    "must be >= 0",
                ));
            }
        }
        if n.kind == NodeKind::Ground && (n.arm_at_s.is_some() || n.stop_acu_heartbeat_s.is_some())
        {
            v.push(Violation::new(
                loc.clone(),
                "ground nodes have no flight controller",
            ));
        }
        if !n.cooperative() && n.role != Role::Follower {
            v.push(Violation::new(
                format!("{loc}.role"),
                "noncooperative nodes take no cooperative role",
            ));
        }
        if n.role == Role::Ferry && n.kind != NodeKind::Air {
            v.push(Violation::new(
                format!("{loc}.role"),
                "a ferry must be an air node",
            ));
        }
    }
    let coop: BTreeSet<NodeId> = spec
        .nodes
        .iter()
        .filter(|n| n.cooperative())
        .map(|n| n.id)
        .collect();

    let mut planned = BTreeSet::new();
    for (i, p) in spec.plans.iter().enumerate() {
        let loc = format!("plans.{i}");
        match spec.node(p.node) {
            None => v.push(Violation::new(
                format!("{loc}.node"),
                format!("unknown node {}", p.node.0),
            )),
            Some(n) => {
                if !n.cooperative() || n.kind != NodeKind::Air {
                    v.push(Violation::new(
                        format!("{loc}.node"),
                        format!("node {} is not a cooperative air node", p.node.0),
                    ));
                }
                let is_ferry_plan = matches!(p.mission, MissionSpec::Ferry { .. });
                if is_ferry_plan != (n.role == Role::Ferry) {
                    v.push(Violation::new(
                        format!("{loc}.mission"),
                        format!(
                            "node {} has role {} but a mismatched mission",
                            n.id.0,
                            n.role.name()
                        ),
                    ));
                }
            }
        }
        if !planned.insert(p.node) {
            v.push(Violation::new(
                format!("{loc}.node"),
                format!("node {} already has a plan", p.node.0),
            ));
        }
        check_mission(&mut v, &format!("{loc}.mission"), &p.mission, &coop);
    }
    for (i, n) in spec.nodes.iter().enumerate() {
        if n.role == Role::Ferry && !planned.contains(&n.id) {
            v.push(Violation::new(
                format!("nodes.{i}"),
                format!("ferry node {} has no plan", n.id.0),
            ));
        }
    }

    let any_leader = spec
        .nodes
        .iter()
        .any(|n| n.role == Role::Leader && n.cooperative());
    for (i, f) in spec.traffic.iter().enumerate() {
        let loc = format!("traffic.{i}");
        if !coop.contains(&f.source) {
            v.push(Violation::new(
                format!("{loc}.source"),
                format!("node {} is not a cooperative node", f.source.0),
            ));
        }
        match &f.destination {
            Endpoint::Node(d) => {
                if !coop.contains(d) {
                    v.push(Violation::new(
                        format!("{loc}.destination"),
                        format!("dangling endpoint: node {} is not a cooperative node", d.0),
                    ));
                } else if *d == f.source {
                    v.push(Violation::new(
                        format!("{loc}.destination"),
                        "flow sends to itself",
                    ));
                }
            }
            Endpoint::Named(s) if s == "broadcast" => {}
            Endpoint::Named(s) if s == "leader" => {
                if !any_leader {
                    v.push(Violation::new(
                        format!("{loc}.destination"),
                        "flow names a leader sink but no node starts as leader",
                    ));
                }
            }
            Endpoint::Named(s) => v.push(Violation::new(
                format!("{loc}.destination"),
                format!("unknown endpoint {s:?}"),
            )),
        }
        if f.bytes == 0 || f.bytes > MTU {
            v.push(Violation::new(
                format!("{loc}.bytes"),
                format!("must be in 1..={MTU}, got {}", f.bytes),
            ));
        }
        if !finite_pos(f.period_s) {
            v.push(Violation::new(
                format!("{loc}.period_s"),
                "must be positive",
            ));
        }
        if let Some(d) = f.deadline_s {
            if !finite_pos(d) {
                v.push(Violation::new(
                    format!("{loc}.deadline_s"),
                    "must be positive",
                ));
            }
        }
        if f.ttl == Some(0) {
            v.push(Violation::new(format!("{loc}.ttl"), "must be at least 1"));
        }
        if !finite_nonneg(f.start_s) {
            v.push(Violation::new(format!("{loc}.start_s"), "must be >= 0"));
        }
        if let Some(s) = f.stop_s {
            if !(s.is_finite() && s > f.start_s) {
                v.push(Violation::new(
                    format!("{loc}.stop_s"),
                    "must be after start_s",
                ));
            }
        }
    }

    let mut jammed = BTreeSet::new();
    for (i, j) in spec.spectral.jammers.iter().enumerate() {
        let loc = format!("spectral.jammers.{i}");
        match spec.node(j.node) {
            Some(n) if !n.cooperative() => {}
            Some(_) => v.push(Violation::new(
                format!("{loc}.node"),
                format!("node {} is cooperative", j.node.0),
            )),
            None => v.push(Violation::new(
                format!("{loc}.node"),
                format!("unknown node {}", j.node.0),
            )),
        }
        if !jammed.insert(j.node) {
            v.push(Violation::new(
                format!("{loc}.node"),
                format!("node {} already has a jammer", j.node.0),
            ));
        }
        if !j.power_dbm.is_finite() {
            v.push(Violation::new(format!("{loc}.power_dbm"), "must be finite"));
        }
        if let Some(f) = j.frequency_hz {
            if !(MIN_FREQUENCY_HZ..=MAX_FREQUENCY_HZ).contains(&f) {
                v.push(Violation::new(
                    format!("{loc}.frequency_hz"),
                    "outside the supported band",
                ));
            }
        }
        if !(0.0..=1.0).contains(&j.duty_cycle) {
            v.push(Violation::new(
                format!("{loc}.duty_cycle"),
                "must be in [0, 1]",
            ));
        }
        if !finite_pos(j.period_s) {
            v.push(Violation::new(
                format!("{loc}.period_s"),
                "must be positive",
            ));
        }
    }
    for (i, n) in spec.nodes.iter().enumerate() {
        if !n.cooperative() && !jammed.contains(&n.id) {
            v.push(Violation::new(
                format!("nodes.{i}"),
                format!("noncooperative node {} has no jammer", n.id.0),
            ));
        }
    }
    match spec.spectral.mode {
        SpectralMode::Contested if spec.spectral.jammers.is_empty() => v.push(Violation::new(
            "spectral.mode",
            "contested mode requires at least one jammer",
        )),
        SpectralMode::Open if !spec.spectral.jammers.is_empty() => v.push(Violation::new(
            "spectral.mode",
            "open mode admits no jammers",
        )),
        _ => {}
    }

    for (i, r) in spec.role_changes.iter().enumerate() {
        let loc = format!("role_changes.{i}");
        if !coop.contains(&r.node) {
            v.push(Violation::new(
                format!("{loc}.node"),
                format!("node {} is not a cooperative node", r.node.0),
            ));
        } else if spec.node(r.node).is_some_and(|n| n.role == Role::Ferry) || r.role == Role::Ferry
        {
            v.push(Violation::new(
                format!("{loc}.role"),
                "ferry duty cannot be switched at run time",
            ));
        }
        if !(r.at_s.is_finite() && r.at_s >= 0.0 && r.at_s < spec.duration_s) {
            v.push(Violation::new(
                format!("{loc}.at_s"),
                "must fall inside the run",
            ));
        }
    }

    if spec.mac.mode == MacMode::Tdma {
        for (i, n) in spec.nodes.iter().enumerate() {
            let longest = n.radio.airtime_us(MTU + 32);
            if n.cooperative() && n.radio.bitrate > 0 && longest > spec.mac.tdma_slot_us {
                v.push(Violation::new(
                    format!("nodes.{i}.radio.bitrate"),
                    format!("a full frame needs {longest} us, longer than the TDMA slot"),
                ));
            }
        }
    }
    v
}
