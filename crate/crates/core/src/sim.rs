//! Fixed-timestep simulation clock, task scheduler and per-node random streams.
//!
//! Time is counted in integer ticks of 10 ms. Every task carries an owner node
//! and an insertion sequence, and tasks run in `(fire_time, round, owner,
//! sequence)` order, which is a total order over everything ever scheduled.
//! `round` is zero for tasks that were already queued when their tick started
//! and increases for tasks added to a tick while that tick is executing.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in ticks.
pub type Tick = u64;

/// Length of one tick in milliseconds.
pub const TICK_MS: u64 = 10;
/// Ticks per simulated second.
pub const TICKS_PER_SECOND: u64 = 1000 / TICK_MS;
/// Length of one tick in seconds.
pub const TICK_SECONDS: f64 = TICK_MS as f64 / 1000.0;

/// Converts seconds to the nearest tick.
pub fn seconds_to_ticks(seconds: f64) -> Tick {
    (seconds * TICKS_PER_SECOND as f64).round().max(0.0) as Tick
}

pub fn ticks_to_seconds(ticks: Tick) -> f64 {
    ticks as f64 / TICKS_PER_SECOND as f64
}

/// Identifier of a simulated node. `0` is the world itself, `255` is broadcast.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u8);

impl NodeId {
    pub const WORLD: NodeId = NodeId(0);
    pub const BROADCAST: NodeId = NodeId(255);

    pub fn is_broadcast(self) -> bool {
        self == Self::BROADCAST
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedulerError {
    #[error("cannot schedule at tick {requested}: clock is already at tick {now}")]
    PastTime { requested: Tick, now: Tick },
    #[error("cannot run until tick {requested}: clock is already at tick {now}")]
    RunBackwards { requested: Tick, now: Tick },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimClock {
    now: Tick,
}

impl SimClock {
    pub fn new() -> Self {
        Self { now: 0 }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn now_seconds(&self) -> f64 {
        ticks_to_seconds(self.now)
    }

    pub fn tick_length_ms(&self) -> u64 {
        TICK_MS
    }

    fn advance_to(&mut self, t: Tick) {
        debug_assert!(t >= self.now, "clock must not run backwards");
        self.now = self.now.max(t);
    }
}

impl Default for SimClock {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a scheduled task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TaskToken {
    pub id: u64,
    pub fire_time: Tick,
    pub owner: NodeId,
    pub sequence: u64,
    round: u32,
}

impl TaskToken {
    fn key(&self) -> (Tick, u32, NodeId, u64) {
        (self.fire_time, self.round, self.owner, self.sequence)
    }
}

impl PartialOrd for TaskToken {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TaskToken {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

struct Entry<E> {
    token: TaskToken,
    task: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.token == other.token
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.token.cmp(&other.token)
    }
}

/// Deterministic task queue driven by a [`SimClock`].
///
/// Tasks are plain values of type `E`; the caller interprets them. Periodic
/// behaviour is obtained by rescheduling from the handler.
pub struct Scheduler<E> {
    clock: SimClock,
    queue: BinaryHeap<Reverse<Entry<E>>>,
    cancelled: HashSet<u64>,
    next_id: u64,
    next_sequence: u64,
    /// Tick currently being executed and its round counter.
    executing: Option<(Tick, u32)>,
    executed: u64,
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self {
            clock: SimClock::new(),
            queue: BinaryHeap::new(),
            cancelled: HashSet::new(),
            next_id: 0,
            next_sequence: 0,
            executing: None,
            executed: 0,
        }
    }

    pub fn now(&self) -> Tick {
        self.clock.now()
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    /// Total tasks executed since creation.
    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn schedule_at(
        &mut self,
        t: Tick,
        owner: NodeId,
        task: E,
    ) -> Result<TaskToken, SchedulerError> {
        let now = self.clock.now();
        if t < now {
            return Err(SchedulerError::PastTime { requested: t, now });
        }
        let round = match self.executing {
            Some((tick, round)) if tick == t => round + 1,
            _ => 0,
        };
        let token = TaskToken {
            id: self.next_id,
            fire_time: t,
            owner,
            sequence: self.next_sequence,
            round,
        };
        self.next_id += 1;
        self.next_sequence += 1;
        self.queue.push(Reverse(Entry { token, task }));
        Ok(token)
    }

    /// Schedules `task` `delay` ticks from now.
    pub fn schedule_in(&mut self, delay: Tick, owner: NodeId, task: E) -> TaskToken {
        let t = self.clock.now() + delay;
        self.schedule_at(t, owner, task)
            .expect("future tick is never in the past")
    }

    /// Cancels a pending task. Returns false if it already ran or was cancelled.
    pub fn cancel(&mut self, token: TaskToken) -> bool {
        if token.id >= self.next_id || self.cancelled.contains(&token.id) {
            return false;
        }
        if !self.queue.iter().any(|e| e.0.token.id == token.id) {
            return false;
        }
        self.cancelled.insert(token.id)
    }

    /// Pops the next task with `fire_time <= until`, advancing the clock to it.
    pub fn next_due(&mut self, until: Tick) -> Option<(TaskToken, E)> {
        loop {
            let head = self.queue.peek()?;
            if head.0.token.fire_time > until {
                return None;
            }
            let Reverse(entry) = self.queue.pop().expect("peeked");
            if self.cancelled.remove(&entry.token.id) {
                continue;
            }
            self.clock.advance_to(entry.token.fire_time);
            self.executing = Some((entry.token.fire_time, entry.token.round));
            self.executed += 1;
            return Some((entry.token, entry.task));
        }
    }

    /// Finishes a run: moves the clock to `until` once nothing else is due.
    pub fn advance_to(&mut self, until: Tick) -> Result<(), SchedulerError> {
        let now = self.clock.now();
        if until < now {
            return Err(SchedulerError::RunBackwards {
                requested: until,
                now,
            });
        }
        self.clock.advance_to(until);
        self.executing = None;
        Ok(())
    }

    /// Executes every task with `fire_time <= until` in total order and leaves
    /// the clock at `until`. The handler may schedule further tasks.
    pub fn run<F>(&mut self, until: Tick, mut handler: F) -> Result<u64, SchedulerError>
    where
        F: FnMut(&mut Self, TaskToken, E),
    {
        let now = self.clock.now();
        if until < now {
            return Err(SchedulerError::RunBackwards {
                requested: until,
                now,
            });
        }
        let mut count = 0;
        while let Some((token, task)) = self.next_due(until) {
            handler(self, token, task);
            count += 1;
        }
        self.advance_to(until)?;
        Ok(count)
    }
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Independent random lanes for one node, so that e.g. traffic generation is
/// unaffected by how many backoff draws the MAC consumed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RngLane {
    General = 0,
    Mac = 1,
    Channel = 2,
    Traffic = 3,
}

/// Counter-based random stream derived from `(scenario seed, node id, lane)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    node: NodeId,
    seed: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, node: NodeId, lane: RngLane) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((node.0 as u64) << 8) | lane as u64);
        Self {
            node,
            seed,
            draws: 0,
            rng,
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32/64-bit words drawn so far.
    pub fn draw_count(&self) -> u64 {
        self.draws
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        // rejection sampling keeps the draw unbiased
        let zone = u64::MAX - (u64::MAX % n) - 1;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % n;
            }
        }
    }

    /// Exponentially distributed draw with the given mean.
    pub fn exponential(&mut self, mean: f64) -> f64 {
        -mean * (1.0 - self.uniform()).ln()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.draws += 1;
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.draws += 1;
        self.rng.fill_bytes(dst)
    }
}

/// Hands out [`RngStream`]s for a scenario seed.
#[derive(Clone, Copy, Debug)]
pub struct RngFactory {
    seed: u64,
}

impl RngFactory {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng_for(&self, node: NodeId) -> RngStream {
        RngStream::new(self.seed, node, RngLane::General)
    }

    pub fn lane(&self, node: NodeId, lane: RngLane) -> RngStream {
        RngStream::new(self.seed, node, lane)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_tick_tasks_order_by_owner_then_sequence() {
        let mut s = Scheduler::new();
        s.schedule_at(5, NodeId(2), "b").unwrap();
        s.schedule_at(5, NodeId(1), "a").unwrap();
        s.schedule_at(5, NodeId(1), "a2").unwrap();
        let mut order = Vec::new();
        s.run(5, |_, _, t| order.push(t)).unwrap();
        assert_eq!(order, vec!["a", "a2", "b"]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut s: Scheduler<()> = Scheduler::new();
        s.run(10, |_, _, _| {}).unwrap();
        assert_eq!(
            s.schedule_at(9, NodeId(1), ()),
            Err(SchedulerError::PastTime {
                requested: 9,
                now: 10
            })
        );
        assert!(s.schedule_at(10, NodeId(1), ()).is_ok());
    }

    #[test]
    fn task_added_to_current_tick_runs_after_queued_ones() {
        let mut s = Scheduler::new();
        s.schedule_at(3, NodeId(1), 1).unwrap();
        s.schedule_at(3, NodeId(4), 2).unwrap();
        let mut order = Vec::new();
        s.run(3, |s, _, t| {
            order.push(t);
            if t == 1 {
                // lower owner, but the tick is already under way
                s.schedule_at(3, NodeId(0), 3).unwrap();
            }
        })
        .unwrap();
        assert_eq!(order, vec![1, 2, 3]);
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut s: Scheduler<()> = Scheduler::new();
        assert_eq!(s.run(100, |_, _, _| {}).unwrap(), 0);
        assert_eq!(s.now(), 100);
    }

    #[test]
    fn periodic_rates() {
        for (period, until, expected) in [(100, 6000, 60), (1, 100, 100)] {
            let mut s = Scheduler::new();
            s.schedule_in(period, NodeId(1), ());
            let mut fired = 0;
            let n = s
                .run(until, |s, _, ()| {
                    fired += 1;
                    s.schedule_in(period, NodeId(1), ());
                })
                .unwrap();
            assert_eq!(n, expected);
            assert_eq!(fired, expected);
            assert_eq!(s.now(), until);
        }
    }

    #[test]
    fn cancelled_tasks_do_not_run() {
        let mut s = Scheduler::new();
        let a = s.schedule_at(1, NodeId(1), 'a').unwrap();
        s.schedule_at(1, NodeId(1), 'b').unwrap();
        assert!(s.cancel(a));
        assert!(!s.cancel(a));
        let mut order = Vec::new();
        s.run(2, |_, _, t| order.push(t)).unwrap();
        assert_eq!(order, vec!['b']);
        assert!(!s.cancel(a));
    }

    fn draws(seed: u64, node: u8) -> Vec<f64> {
        let mut r = RngFactory::new(seed).rng_for(NodeId(node));
        (0..1000).map(|_| r.uniform()).collect()
    }

    /// Pearson correlation; independent uniform streams of length 1000 have a
    /// standard error of about 0.032.
    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn streams_are_reproducible() {
        assert_eq!(draws(7, 3), draws(7, 3));
    }

    #[test]
    fn streams_are_distinct_across_nodes_and_seeds() {
        for (a, b) in [(draws(7, 1), draws(7, 2)), (draws(7, 1), draws(8, 1))] {
            let equal = a.iter().zip(&b).filter(|(x, y)| x == y).count();
            assert_eq!(equal, 0);
            assert!(correlation(&a, &b).abs() < 0.15);
        }
    }

    #[test]
    fn lanes_are_independent() {
        let f = RngFactory::new(1);
        let mut mac = f.lane(NodeId(1), RngLane::Mac);
        let mut traffic = f.lane(NodeId(1), RngLane::Traffic);
        let before: Vec<u64> = (0..5).map(|_| traffic.next_u64()).collect();
        for _ in 0..100 {
            mac.next_u64();
        }
        let mut traffic2 = f.lane(NodeId(1), RngLane::Traffic);
        let again: Vec<u64> = (0..5).map(|_| traffic2.next_u64()).collect();
        assert_eq!(before, again);
        assert_eq!(mac.draw_count(), 100);
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = RngFactory::new(3).rng_for(NodeId(9));
        let mut seen = [false; 16];
        for _ in 0..2000 {
            let v = r.below(16) as usize;
            seen[v] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
