//! Mission application.
//!
//! The mission tracker runs every `track_period` ticks and does nothing
//! while the vehicle is disarmed. Three missions are provided: the
//! takeoff-loiter-land reference, an ordered plan of targets, and a ferry
//! shuttling between two regions carrying packets in custody.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::autopilot::{FlightMode, Telemetry, ACCEPTANCE_RADIUS};
use crate::geo::{enu_offset, GeoPoint};
use crate::logger::Event;
use crate::mavlink::{CommandId, ModeFlags};
use crate::network::{Packet, PRIORITY_CONTROL};
use crate::sim::{seconds_to_ticks, ticks_to_seconds, NodeId, Tick};

pub const LOITER_TIME_S: f64 = 20.0;
pub const TAKEOFF_ALT_M: f64 = 10.0;
/// Size of the status datagram broadcast when the reference mission lands.
pub const STATUS_MSG_LEN: usize = 32;
pub const LOITER_RADIUS_M: f32 = 5.0;
pub const CUSTODY_RADIUS_M: f64 = 15.0;

fn default_takeoff_alt() -> f64 {
    TAKEOFF_ALT_M
}
fn default_loiter_time() -> f64 {
    LOITER_TIME_S
}
fn default_custody_radius() -> f64 {
    CUSTODY_RADIUS_M
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanTask {
    pub target: GeoPoint,
    /// Seconds after the plan starts.
    pub deadline_s: f64,
    #[serde(default)]
    pub loiter_s: f64,
    #[serde(default)]
    pub payload_bytes: usize,
    #[serde(default)]
    pub report_to: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum MissionSpec {
    /// Takeoff, loiter in place, land.
    Reference {
        #[serde(default = "default_takeoff_alt")]
        takeoff_alt: f64,
        #[serde(default = "default_loiter_time")]
        loiter_time_s: f64,
    },
    /// Visit targets in order, then return to launch.
    Plan {
        #[serde(default = "default_takeoff_alt")]
        takeoff_alt: f64,
        tasks: Vec<PlanTask>,
    },
    /// Shuttle between two regions carrying packets across a partition.
    Ferry {
        #[serde(default = "default_takeoff_alt")]
        takeoff_alt: f64,
        region_a: GeoPoint,
        region_b: GeoPoint,
        #[serde(default = "default_custody_radius")]
        custody_radius_m: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Start,
    Loiter,
    Stop,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Start => "STAGE_START",
            Stage::Loiter => "STAGE_LOITER",
            Stage::Stop => "STAGE_STOP",
        }
    }
}

/// Something the agent asks its node to do.
#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Command {
        command: CommandId,
        params: [f32; 7],
    },
    Send {
        destination: NodeId,
        priority: u8,
        deadline_s: Option<f64>,
        payload: Vec<u8>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FerryZone {
    A,
    B,
}

/// Packets carried by a ferry, tagged with the region they were picked up
/// in. `taken == released + held` always.
#[derive(Clone, Debug, Default)]
pub struct Custody {
    held: VecDeque<(FerryZone, Packet)>,
    taken: u32,
    released: u32,
}

impl Custody {
    pub fn take(&mut self, zone: FerryZone, packet: Packet) -> u32 {
        self.held.push_back((zone, packet));
        self.taken += 1;
        self.held.len() as u32
    }

    /// Releases, in pickup order, every packet picked up outside `zone`.
    pub fn release_in(&mut self, zone: FerryZone) -> Vec<Packet> {
        let (out, keep): (Vec<_>, Vec<_>) = self.held.drain(..).partition(|(z, _)| *z != zone);
        self.held = keep.into();
        self.released += out.len() as u32;
        out.into_iter().map(|(_, p)| p).collect()
    }

    pub fn taken(&self) -> u32 {
        self.taken
    }

    pub fn released(&self) -> u32 {
        self.released
    }

    pub fn held(&self) -> u32 {
        self.held.len() as u32
    }

    pub fn conserved(&self) -> bool {
        self.taken == self.released + self.held()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PlanPhase {
    Transit,
    Loiter,
}

#[derive(Clone, Debug, PartialEq)]
enum Progress {
    /// Waiting for takeoff to finish.
    Climbing,
    Task {
        index: usize,
        phase: PlanPhase,
        arrivals: u64,
        expiries: u64,
    },
    Leg {
        toward: FerryZone,
        arrivals: u64,
    },
    Finished,
}

pub struct Agent {
    node: NodeId,
    system_id: u8,
    mission: Option<MissionSpec>,
    arm_at: Option<Tick>,
    track_period: Tick,
    arm_sent: bool,
    stage: Stage,
    loiter_timer: Tick,
    progress: Progress,
    plan_start: Tick,
    completed: u32,
    mission_done: bool,
    tracker_calls: u64,
    stage_actions: u64,
    role: String,
    custody: Custody,
}

impl Agent {
    pub fn new(
        node: NodeId,
        system_id: u8,
        mission: Option<MissionSpec>,
        arm_at: Option<Tick>,
    ) -> Self {
        Self {
            node,
            system_id,
            mission,
            arm_at,
            track_period: 1,
            arm_sent: false,
            stage: Stage::Start,
            loiter_timer: 0,
            progress: Progress::Climbing,
            plan_start: 0,
            completed: 0,
            mission_done: false,
            tracker_calls: 0,
            stage_actions: 0,
            role: String::new(),
            custody: Custody::default(),
        }
    }

    pub fn with_track_period(mut self, period: Tick) -> Self {
        self.track_period = period.max(1);
        self
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn system_id(&self) -> u8 {
        self.system_id
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn tracker_calls(&self) -> u64 {
        self.tracker_calls
    }

    /// Tracker invocations that found the vehicle armed and ran a stage.
    pub fn stage_actions(&self) -> u64 {
        self.stage_actions
    }

    pub fn custody(&self) -> &Custody {
        &self.custody
    }

    pub fn custody_mut(&mut self) -> &mut Custody {
        &mut self.custody
    }

    pub fn role(&self) -> &str {
        &self.role
    }

    pub fn set_role(&mut self, role: &str) {
        self.role = role.to_string();
    }

    pub fn is_ferry(&self) -> bool {
        matches!(self.mission, Some(MissionSpec::Ferry { .. }))
    }

    /// Which ferry region, if any, the vehicle is currently inside.
    pub fn ferry_zone(&self, position: &GeoPoint) -> Option<FerryZone> {
        let Some(MissionSpec::Ferry {
            region_a,
            region_b,
            custody_radius_m,
            ..
        }) = &self.mission
        else {
            return None;
        };
        if enu_offset(position, region_a).horizontal() <= *custody_radius_m {
            Some(FerryZone::A)
        } else if enu_offset(position, region_b).horizontal() <= *custody_radius_m {
            Some(FerryZone::B)
        } else {
            None
        }
    }

    /// Runs once per tick: arming, the periodic tracker, and completion
    /// bookkeeping that must happen even when disarmed.
    pub fn tick(
        &mut self,
        now: Tick,
        telem: &Telemetry,
        vehicle_known: bool,
        out: &mut Vec<Event>,
    ) -> Vec<Action> {
        let mut actions = Vec::new();
        if !self.arm_sent && vehicle_known && !telem.armed && self.arm_at.is_some_and(|t| now >= t)
        {
            self.arm_sent = true;
            let flags = ModeFlags::ARMED | ModeFlags::AUTONOMOUS;
            actions.push(Action::Command {
                command: CommandId::SetMode,
                params: [flags as f32, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            });
        }
        if now.is_multiple_of(self.track_period) {
            self.mission_tracker(now, telem, &mut actions, out);
        }
        if self.stage == Stage::Stop && !telem.armed && !self.mission_done {
            if let Some(MissionSpec::Reference { .. }) = self.mission {
                self.mission_done = true;
                out.push(Event::MissionComplete { tasks: 0 });
            }
        }
        actions
    }

    /// One tracker invocation; a no-op while the vehicle is disarmed.
    pub fn mission_tracker(
        &mut self,
        now: Tick,
        telem: &Telemetry,
        actions: &mut Vec<Action>,
        out: &mut Vec<Event>,
    ) {
        self.tracker_calls += 1;
        if !telem.armed {
            return;
        }
        let Some(mission) = self.mission.clone() else {
            return;
        };
        self.stage_actions += 1;
        match mission {
            MissionSpec::Reference {
                takeoff_alt,
                loiter_time_s,
            } => match self.stage {
                Stage::Start => self.stage_start(now, telem, takeoff_alt, actions, out),
                Stage::Loiter => self.stage_loiter(now, loiter_time_s, actions, out),
                Stage::Stop => {}
            },
            MissionSpec::Plan { takeoff_alt, tasks } => match self.stage {
                Stage::Start => self.stage_start(now, telem, takeoff_alt, actions, out),
                Stage::Loiter => self.run_plan(now, telem, &tasks, actions, out),
                Stage::Stop => {}
            },
            MissionSpec::Ferry {
                takeoff_alt,
                region_a,
                region_b,
                ..
            } => match self.stage {
                Stage::Start => self.stage_start(now, telem, takeoff_alt, actions, out),
                Stage::Loiter => self.ferry_behavior(telem, &region_a, &region_b, actions),
                Stage::Stop => {}
            },
        }
    }

    fn enter(&mut self, stage: Stage, out: &mut Vec<Event>) {
        self.stage = stage;
        out.push(Event::Stage {
            stage: stage.name().into(),
        });
    }

    fn stage_start(
        &mut self,
        now: Tick,
        telem: &Telemetry,
        alt: f64,
        actions: &mut Vec<Action>,
        out: &mut Vec<Event>,
    ) {
        match telem.mode {
            FlightMode::ArmedIdle
                if self.progress == Progress::Climbing && self.loiter_timer == 0 =>
            {
                out.push(Event::Stage {
                    stage: Stage::Start.name().into(),
                });
                // marks the takeoff as sent
                self.loiter_timer = now;
                actions.push(Action::Command {
                    command: CommandId::Takeoff,
                    params: [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, alt as f32],
                });
            }
            FlightMode::Loiter => {
                self.loiter_timer = now;
                self.plan_start = now;
                self.enter(Stage::Loiter, out);
            }
            _ => {}
        }
    }

    fn stage_loiter(
        &mut self,
        now: Tick,
        loiter_time_s: f64,
        actions: &mut Vec<Action>,
        out: &mut Vec<Event>,
    ) {
        if now - self.loiter_timer <= seconds_to_ticks(loiter_time_s) {
            return;
        }
        actions.push(Action::Command {
            command: CommandId::Land,
            params: [0.0; 7],
        });
        actions.push(Action::Send {
            destination: NodeId::BROADCAST,
            priority: PRIORITY_CONTROL,
            deadline_s: None,
            payload: self.status_message(now),
        });
        self.enter(Stage::Stop, out);
    }

    fn status_message(&self, now: Tick) -> Vec<u8> {
        let mut m = vec![0u8; STATUS_MSG_LEN];
        m[0] = self.node.0;
        m[1] = self.stage as u8;
        m[2..10].copy_from_slice(&now.to_le_bytes());
        m
    }

    fn task_command(task: &PlanTask) -> Action {
        let t = task.target;
        if task.loiter_s > 0.0 {
            Action::Command {
                command: CommandId::LoiterTime,
                params: [
                    task.loiter_s as f32,
                    0.0,
                    LOITER_RADIUS_M,
                    0.0,
                    t.lat as f32,
                    t.lon as f32,
                    t.alt as f32,
                ],
            }
        } else {
            Action::Command {
                command: CommandId::Waypoint,
                params: [
                    0.0,
                    ACCEPTANCE_RADIUS as f32,
                    0.0,
                    0.0,
                    t.lat as f32,
                    t.lon as f32,
                    t.alt as f32,
                ],
            }
        }
    }

    fn finish_plan(&mut self, telem: &Telemetry, actions: &mut Vec<Action>, out: &mut Vec<Event>) {
        self.progress = Progress::Finished;
        self.mission_done = true;
        out.push(Event::MissionComplete {
            tasks: self.completed,
        });
        let command = if telem.gps_lock {
            CommandId::ReturnToLaunch
        } else {
            CommandId::Land
        };
        actions.push(Action::Command {
            command,
            params: [0.0; 7],
        });
        self.enter(Stage::Stop, out);
    }

    fn start_task(
        &mut self,
        index: usize,
        tasks: &[PlanTask],
        telem: &Telemetry,
        actions: &mut Vec<Action>,
        out: &mut Vec<Event>,
    ) {
        match tasks.get(index) {
            Some(task) => {
                actions.push(Self::task_command(task));
                self.progress = Progress::Task {
                    index,
                    phase: PlanPhase::Transit,
                    arrivals: telem.arrivals,
                    expiries: telem.loiter_expiries,
                };
            }
            None => self.finish_plan(telem, actions, out),
        }
    }

    /// Visits the plan's targets in order.
    fn run_plan(
        &mut self,
        now: Tick,
        telem: &Telemetry,
        tasks: &[PlanTask],
        actions: &mut Vec<Action>,
        out: &mut Vec<Event>,
    ) {
        match self.progress.clone() {
            Progress::Climbing => self.start_task(0, tasks, telem, actions, out),
            Progress::Task {
                index,
                phase,
                arrivals,
                expiries,
            } => {
                if matches!(telem.mode, FlightMode::Rtl | FlightMode::Land) {
                    let reason = if telem.endurance_remaining <= 0.0 {
                        "endurance exhausted"
                    } else {
                        "vehicle left mission mode"
                    };
                    out.push(Event::PlanAborted {
                        completed: self.completed,
                        reason: reason.into(),
                    });
                    self.progress = Progress::Finished;
                    self.enter(Stage::Stop, out);
                    return;
                }
                let task = &tasks[index];
                let done = match phase {
                    PlanPhase::Transit if telem.arrivals > arrivals => {
                        if task.payload_bytes > 0 {
                            if let Some(dest) = task.report_to {
                                actions.push(Action::Send {
                                    destination: dest,
                                    priority: 1,
                                    deadline_s: None,
                                    payload: vec![index as u8; task.payload_bytes],
                                });
                            }
                        }
                        if task.loiter_s > 0.0 {
                            self.progress = Progress::Task {
                                index,
                                phase: PlanPhase::Loiter,
                                arrivals,
                                expiries,
                            };
                            false
                        } else {
                            true
                        }
                    }
                    PlanPhase::Loiter => telem.loiter_expiries > expiries,
                    _ => false,
                };
                if done {
                    let elapsed = ticks_to_seconds(now - self.plan_start);
                    self.completed += 1;
                    out.push(Event::TaskComplete {
                        task: index as u32,
                        elapsed,
                        deadline: task.deadline_s,
                        met: elapsed <= task.deadline_s,
                    });
                    self.start_task(index + 1, tasks, telem, actions, out);
                }
            }
            Progress::Leg { .. } | Progress::Finished => {}
        }
    }

    fn ferry_behavior(
        &mut self,
        telem: &Telemetry,
        a: &GeoPoint,
        b: &GeoPoint,
        actions: &mut Vec<Action>,
    ) {
        let go = |toward: FerryZone| {
            let t = if toward == FerryZone::A { a } else { b };
            Action::Command {
                command: CommandId::Waypoint,
                params: [
                    0.0,
                    ACCEPTANCE_RADIUS as f32,
                    0.0,
                    0.0,
                    t.lat as f32,
                    t.lon as f32,
                    t.alt as f32,
                ],
            }
        };
        match self.progress {
            Progress::Climbing => {
                actions.push(go(FerryZone::A));
                self.progress = Progress::Leg {
                    toward: FerryZone::A,
                    arrivals: telem.arrivals,
                };
            }
            Progress::Leg { toward, arrivals } if telem.arrivals > arrivals => {
                let next = if toward == FerryZone::A {
                    FerryZone::B
                } else {
                    FerryZone::A
                };
                actions.push(go(next));
                self.progress = Progress::Leg {
                    toward: next,
                    arrivals: telem.arrivals,
                };
            }
            _ => {}
        }
    }
}
