//! Metrics computed purely from an event log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logger::{Event, EventRecord, LogHeader};
use crate::sim::{ticks_to_seconds, NodeId, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("partial log, missing terminators: {}", .missing.join(", "))]
    PartialLog { missing: Vec<String> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub priority: u8,
    pub offered: u64,
    pub delivered: u64,
    pub lost: u64,
    pub throughput_bps: f64,
    pub mean_delay_s: f64,
    pub p95_delay_s: f64,
    pub loss_ratio: f64,
    pub deadline_misses: u64,
    pub deadline_miss_ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub source: u8,
    pub destination: u8,
    pub offered: u64,
    pub delivered: u64,
    pub delivery_ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub node: u8,
    pub task: u32,
    pub completion_s: f64,
    pub deadline_s: f64,
    pub met: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MissionMetrics {
    pub node: u8,
    pub tasks_completed: u32,
    /// Time of the mission-complete record, if the mission finished.
    pub completion_s: Option<f64>,
    pub aborted: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeDistance {
    pub node: u8,
    pub meters: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub t: f64,
    pub node: u8,
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CustodyMetrics {
    pub taken: u64,
    pub released: u64,
    pub held: u64,
    /// Deliveries of packets that travelled in custody.
    pub delivered: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RadioMetrics {
    pub frames_tx: u64,
    pub rx_delivered: u64,
    pub rx_crc_fail: u64,
    pub rx_below_sensitivity: u64,
    pub rx_collided: u64,
    pub mac_drops: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub duration_s: f64,
    pub classes: Vec<ClassMetrics>,
    pub flows: Vec<FlowMetrics>,
    pub tasks: Vec<TaskMetrics>,
    pub missions: Vec<MissionMetrics>,
    pub distance_m: Vec<NodeDistance>,
    pub track: Vec<TrackSample>,
    pub custody: CustodyMetrics,
    pub radio: RadioMetrics,
    pub faults: u64,
}

impl MetricsReport {
    pub fn class(&self, priority: u8) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.priority == priority)
    }

    pub fn flow(&self, source: u8, destination: u8) -> Option<&FlowMetrics> {
        self.flows
            .iter()
            .find(|f| f.source == source && f.destination == destination)
    }

    pub fn distance(&self, node: u8) -> Option<f64> {
        self.distance_m
            .iter()
            .find(|d| d.node == node)
            .map(|d| d.meters)
    }
}

/// Canonical text form: pretty JSON with a trailing newline.
pub fn render_metrics(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports always serialize");
    s.push('\n');
    s
}

fn q(x: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (x * s).round() / s
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        q(a as f64 / b as f64, 6)
    }
}

struct Sent {
    tick: Tick,
    priority: u8,
    destination: u8,
    size: u32,
    deadline: Option<Tick>,
}

#[derive(Default)]
struct ClassAcc {
    offered: u64,
    delivered: u64,
    bits: u64,
    delays: Vec<Tick>,
    misses: u64,
}

/// Computes the report from a log. An empty log yields a zeroed report; a
/// log without its terminating records is rejected.
pub fn compute_metrics(
    header: Option<&LogHeader>,
    records: &[EventRecord],
) -> Result<MetricsReport, MetricsError> {
    let Some(header) = header else {
        if records.is_empty() {
            return Ok(MetricsReport::default());
        }
        return Err(MetricsError::PartialLog {
            missing: vec!["header".into()],
        });
    };
    let mut finals = BTreeSet::new();
    let mut end: Option<Tick> = None;
    for r in records {
        match r.event {
            Event::NodeFinal { .. } => {
                finals.insert(r.node);
            }
            Event::RunEnd { ticks } => end = Some(ticks),
            _ => {}
        }
    }
    let mut missing: Vec<String> = header
        .nodes
        .iter()
        .filter(|n| !finals.contains(n))
        .map(|n| format!("node_final for node {}", n.0))
        .collect();
    if end.is_none() {
        missing.push("run_end".into());
    }
    if !missing.is_empty() {
        return Err(MetricsError::PartialLog { missing });
    }
    let duration_ticks = end.unwrap_or(0);
    let duration_s = ticks_to_seconds(duration_ticks);

    let mut sent: BTreeMap<(u8, u32), Sent> = BTreeMap::new();
    let mut got: BTreeSet<(u8, u32, NodeId)> = BTreeSet::new();
    let mut classes: BTreeMap<u8, ClassAcc> = BTreeMap::new();
    let mut flows: BTreeMap<(u8, u8), (u64, u64)> = BTreeMap::new();
    let mut tasks = Vec::new();
    let mut missions: BTreeMap<NodeId, MissionMetrics> = BTreeMap::new();
    let mut distance = Vec::new();
    let mut track = Vec::new();
    let mut custody = CustodyMetrics::default();
    let mut carried: BTreeSet<(u8, u32)> = BTreeSet::new();
    let mut radio = RadioMetrics::default();
    let mut faults = 0;

    for r in records {
        let tick = r.tick();
        match &r.event {
            Event::PacketSend {
                ids,
                deadline,
                fanout,
                ..
            } => {
                let c = classes.entry(ids.priority).or_default();
                c.offered += *fanout as u64;
                flows.entry((ids.source, ids.destination)).or_default().0 += *fanout as u64;
                sent.insert(
                    (ids.source, ids.packet_id),
                    Sent {
                        tick,
                        priority: ids.priority,
                        destination: ids.destination,
                        size: ids.size,
                        deadline: (*deadline > 0.0)
                            .then(|| crate::sim::seconds_to_ticks(*deadline)),
                    },
                );
            }
            Event::PacketDeliver { ids, .. } => {
                let key = (ids.source, ids.packet_id);
                let Some(s) = sent.get(&key) else { continue };
                if !got.insert((ids.source, ids.packet_id, r.node)) {
                    continue;
                }
                let c = classes.entry(s.priority).or_default();
                c.delivered += 1;
                c.bits += s.size as u64 * 8;
                let delay = tick - s.tick;
                c.delays.push(delay);
                if s.deadline.is_some_and(|d| delay > d) {
                    c.misses += 1;
                }
                flows.entry((ids.source, s.destination)).or_default().1 += 1;
                if carried.contains(&key) {
                    custody.delivered += 1;
                }
            }
            Event::CustodyTake { .. } => custody.taken += 1,
            Event::CustodyRelease {
                source, packet_id, ..
            } => {
                custody.released += 1;
                carried.insert((*source, *packet_id));
            }
            Event::TaskComplete {
                task,
                elapsed,
                deadline,
                met,
            } => tasks.push(TaskMetrics {
                node: r.node.0,
                task: *task,
                completion_s: *elapsed,
                deadline_s: *deadline,
                met: *met,
            }),
            Event::MissionComplete { tasks: n } => {
                let m = missions.entry(r.node).or_default();
                m.node = r.node.0;
                m.tasks_completed = *n;
                m.completion_s = Some(r.t);
            }
            Event::PlanAborted { completed, reason } => {
                let m = missions.entry(r.node).or_default();
                m.node = r.node.0;
                m.tasks_completed = *completed;
                m.aborted = Some(reason.clone());
            }
            Event::Fix { lat, lon, alt, .. } => track.push(TrackSample {
                t: r.t,
                node: r.node.0,
                lat: *lat,
                lon: *lon,
                alt: *alt,
            }),
            Event::NodeFinal {
                odometer,
                custody_held,
                mode,
                ..
            } => {
                custody.held += *custody_held as u64;
                if mode != "NONE" {
                    distance.push(NodeDistance {
                        node: r.node.0,
                        meters: *odometer,
                    });
                }
            }
            Event::RadioTx { .. } => radio.frames_tx += 1,
            Event::RadioRx {
                outcome, collided, ..
            } => {
                match outcome.as_str() {
                    "delivered" => radio.rx_delivered += 1,
                    "crc_fail" => radio.rx_crc_fail += 1,
                    _ => radio.rx_below_sensitivity += 1,
                }
                if *collided {
                    radio.rx_collided += 1;
                }
            }
            Event::MacDrop { .. } => radio.mac_drops += 1,
            Event::Fault { .. } => faults += 1,
            _ => {}
        }
    }

    let classes = classes
        .into_iter()
        .map(|(priority, mut c)| {
            c.delays.sort_unstable();
            let n = c.delays.len();
            let mean = if n == 0 {
                0.0
            } else {
                ticks_to_seconds(c.delays.iter().sum::<Tick>()) / n as f64
            };
            let p95 = if n == 0 {
                0.0
            } else {
                // nearest rank
                let rank = (0.95 * n as f64).ceil() as usize;
                ticks_to_seconds(c.delays[rank.clamp(1, n) - 1])
            };
            let lost = c.offered.saturating_sub(c.delivered);
            ClassMetrics {
                priority,
                offered: c.offered,
                delivered: c.delivered,
                lost,
                throughput_bps: if duration_s > 0.0 {
                    q(c.bits as f64 / duration_s, 3)
                } else {
                    0.0
                },
                mean_delay_s: q(mean, 6),
                p95_delay_s: q(p95, 6),
                loss_ratio: ratio(lost, c.offered),
                deadline_misses: c.misses,
                deadline_miss_ratio: ratio(c.misses, c.delivered),
            }
        })
        .collect();
    let flows = flows
        .into_iter()
        .map(
            |((source, destination), (offered, delivered))| FlowMetrics {
                source,
                destination,
                offered,
                delivered,
                delivery_ratio: ratio(delivered, offered),
            },
        )
        .collect();

    Ok(MetricsReport {
        scenario: header.scenario.clone(),
        seed: header.seed,
        duration_s,
        classes,
        flows,
        tasks,
        missions: missions.into_values().collect(),
        distance_m: distance,
        track,
        custody,
        radio,
        faults,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logger::PacketIds;
    use crate::sim::seconds_to_ticks;

    fn ids(id: u32, prio: u8) -> PacketIds {
        PacketIds {
            packet_id: id,
            size: 48,
            source: 1,
            destination: 2,
            sender: 1,
            receiver: 255,
            priority: prio,
        }
    }

    fn header() -> LogHeader {
        LogHeader::new("t", 1, 10.0, vec![NodeId(1), NodeId(2)])
    }

    fn terminate(recs: &mut Vec<EventRecord>, t: Tick) {
        for n in [1, 2] {
            recs.push(EventRecord::new(
                t,
                NodeId(n),
                Event::NodeFinal {
                    odometer: 0.0,
                    mode: "NONE".into(),
                    armed: false,
                    tracker_calls: 0,
                    heartbeats_tx: 0,
                    acu_heartbeats_tx: 0,
                    custody_taken: 0,
                    custody_released: 0,
                    custody_held: 0,
                },
            ));
        }
        recs.push(EventRecord::new(
            t,
            NodeId::WORLD,
            Event::RunEnd { ticks: t },
        ));
    }

    fn send(t: Tick, id: u32, deadline: f64) -> EventRecord {
        EventRecord::new(
            t,
            NodeId(1),
            Event::PacketSend {
                ids: ids(id, 0),
                ttl: 8,
                deadline,
                fanout: 1,
            },
        )
    }

    fn deliver(t: Tick, id: u32) -> EventRecord {
        EventRecord::new(
            t,
            NodeId(2),
            Event::PacketDeliver {
                ids: ids(id, 0),
                hops: 1,
                late: false,
            },
        )
    }

    #[test]
    fn ten_sent_eight_delivered() {
        let mut recs: Vec<_> = (1..=10).map(|i| send(i, i as u32, 0.0)).collect();
        recs.extend((1..=8).map(|i| deliver(20 + i, i as u32)));
        terminate(&mut recs, 1000);
        let r = compute_metrics(Some(&header()), &recs).unwrap();
        let c = r.class(0).unwrap();
        assert_eq!((c.offered, c.delivered, c.lost), (10, 8, 2));
        assert_eq!(c.loss_ratio, 0.2);
        assert_eq!(c.delivered + c.lost, c.offered);
        // 8 deliveries of 48 bytes over 10 s
        assert_eq!(c.throughput_bps, 307.2);
    }

    #[test]
    fn late_delivery_is_a_miss_not_a_loss() {
        let mut recs = vec![
            send(seconds_to_ticks(4.0), 1, 0.5),
            deliver(seconds_to_ticks(5.0), 1),
        ];
        terminate(&mut recs, 1000);
        let c = compute_metrics(Some(&header()), &recs).unwrap().classes[0].clone();
        assert_eq!((c.delivered, c.deadline_misses, c.lost), (1, 1, 0));
        assert_eq!(c.mean_delay_s, 1.0);
        assert_eq!(c.deadline_miss_ratio, 1.0);
    }

    #[test]
    fn duplicate_deliveries_counted_once() {
        let mut recs = vec![send(1, 1, 0.0), deliver(2, 1), deliver(3, 1)];
        terminate(&mut recs, 10);
        let c = compute_metrics(Some(&header()), &recs).unwrap().classes[0].clone();
        assert_eq!(c.delivered, 1);
    }

    #[test]
    fn p95_is_nearest_rank() {
        let mut recs: Vec<_> = (0..20).map(|i| send(0, i, 0.0)).collect();
        recs.extend((0..20).map(|i| deliver(i as Tick + 1, i)));
        terminate(&mut recs, 100);
        let c = compute_metrics(Some(&header()), &recs).unwrap().classes[0].clone();
        // delays 0.01..=0.20 s, rank ceil(19) = 19
        assert_eq!(c.p95_delay_s, 0.19);
        assert_eq!(c.mean_delay_s, 0.105);
    }

    #[test]
    fn empty_log_gives_zeroed_report() {
        assert_eq!(
            compute_metrics(None, &[]).unwrap(),
            MetricsReport::default()
        );
    }

    #[test]
    fn missing_terminators_are_listed() {
        let recs = vec![send(1, 1, 0.0)];
        match compute_metrics(Some(&header()), &recs) {
            Err(MetricsError::PartialLog { missing }) => {
                assert_eq!(
                    missing,
                    vec!["node_final for node 1", "node_final for node 2", "run_end"]
                );
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rendered_report_ends_with_newline() {
        let s = render_metrics(&MetricsReport::default());
        assert!(s.ends_with("}\n"));
        let back: MetricsReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, MetricsReport::default());
    }
}
