//! Discrete-event kernel: virtual clock, `(time, seq)`-ordered event queue and
//! named, independent random substreams.
//!
//! Every run is single-threaded and fully determined by the scenario and its
//! seed. Ties at equal timestamps are broken by insertion order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Simulated time in seconds. Always finite and non-negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    /// Panics on NaN, infinity or negative input; those are logic errors.
    pub fn from_secs(secs: f64) -> Self {
        assert!(
            secs.is_finite() && secs >= 0.0,
            "invalid simulated time: {secs}"
        );
        SimTime(secs)
    }

    pub fn secs(self) -> f64 {
        self.0
    }

    pub fn after(self, delta: f64) -> SimTime {
        SimTime::from_secs(self.0 + delta)
    }
}

impl Eq for SimTime {}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("event scheduled in the past: t={at} < now={now}")]
    PastEvent { at: f64, now: f64 },
    #[error("run_until target {target} precedes current clock {now}")]
    TargetInPast { target: f64, now: f64 },
    #[error("exponential rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("dispatch failed at t={at}: {message}")]
    Dispatch { at: f64, message: String },
}

/// A queued event. `(time, seq)` is unique within one kernel.
#[derive(Debug, Clone)]
pub struct Event<P> {
    pub time: SimTime,
    pub seq: u64,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    // Reversed so the max-heap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Event queue plus virtual clock.
#[derive(Debug)]
pub struct Kernel<P> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Event<P>>,
    dispatched: u64,
}

impl<P> Default for Kernel<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Kernel<P> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Queues `payload` at absolute time `at`; returns the assigned sequence number.
    pub fn schedule(&mut self, at: SimTime, payload: P) -> Result<u64, KernelError> {
        if at < self.now {
            return Err(KernelError::PastEvent {
                at: at.secs(),
                now: self.now.secs(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event {
            time: at,
            seq,
            payload,
        });
        Ok(seq)
    }

    pub fn schedule_in(&mut self, delay: f64, payload: P) -> Result<u64, KernelError> {
        let at = self.now.after(delay);
        self.schedule(at, payload)
    }

    /// Removes and returns the next event if it is due at or before `limit`,
    /// advancing the clock to its timestamp.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<Event<P>> {
        if self.queue.peek().is_some_and(|e| e.time <= limit) {
            let event = self.queue.pop().expect("peeked");
            self.now = event.time;
            self.dispatched += 1;
            Some(event)
        } else {
            None
        }
    }

    /// Dispatches every event with `time <= t_end` in `(time, seq)` order and
    /// leaves the clock at `t_end`.
    ///
    /// The dispatcher receives the kernel so it can schedule follow-up events.
    /// A dispatcher error stops the run immediately; the clock stays at the
    /// failing event's time.
    pub fn run_until<F, E>(&mut self, t_end: SimTime, mut dispatch: F) -> Result<SimTime, KernelError>
    where
        F: FnMut(&mut Kernel<P>, Event<P>) -> Result<(), E>,
        E: fmt::Display,
    {
        if t_end < self.now {
            return Err(KernelError::TargetInPast {
                target: t_end.secs(),
                now: self.now.secs(),
            });
        }
        while let Some(event) = self.pop_until(t_end) {
            let at = event.time.secs();
            dispatch(self, event).map_err(|e| KernelError::Dispatch {
                at,
                message: e.to_string(),
            })?;
        }
        self.now = t_end;
        Ok(self.now)
    }
}

/// Named random substreams. Drawing from one never perturbs another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    /// Demand arrivals and class draws; one substream per terminal.
    Workload(usize),
    /// Handover targets when more than two edges exist.
    Mobility,
    /// Which terminals move on each tick.
    MoverSelection,
}

impl Stream {
    fn tag(self) -> (u64, u64) {
        match self {
            Stream::Workload(i) => (0x776f_726b_6c6f_6164, i as u64),
            Stream::Mobility => (0x6d6f_6269_6c69_7479, 0),
            Stream::MoverSelection => (0x6d6f_7665_7273_656c, 0),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded generator for one substream.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: Stream) -> Self {
        let (name, index) = stream.tag();
        let derived = splitmix64(splitmix64(seed ^ name) ^ index);
        Self {
            rng: ChaCha8Rng::seed_from_u64(derived),
        }
    }

    /// Uniform draw in `(0, 1]`.
    pub fn unit_open_closed(&mut self) -> f64 {
        1.0 - self.rng.random::<f64>()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn exponential(&mut self, rate: f64) -> Result<f64, KernelError> {
        let u = self.unit_open_closed();
        exponential_from_uniform(u, rate)
    }

    /// Uniformly chooses `k` distinct values from `0..n`, returned sorted.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        let mut chosen = pool[..k].to_vec();
        chosen.sort_unstable();
        chosen
    }
}

/// Inverse-CDF exponential sample `-ln(u) / rate` for `u` in `(0, 1]`.
pub fn exponential_from_uniform(u: f64, rate: f64) -> Result<f64, KernelError> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(KernelError::NonPositiveRate(rate));
    }
    debug_assert!(u > 0.0 && u <= 1.0);
    Ok(-u.ln() / rate)
}
