//! Deterministic discrete-event engine: integer-microsecond clock, a
//! (fire_at, insertion seq) ordered event queue, and named random substreams
//! derived from a single master seed.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Simulation time in microseconds since the start of the run.
///
/// The time base is integer on purpose: event ordering must not depend on
/// floating-point rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * 1e6).round() as u64)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl std::fmt::Display for SimTime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Identifier handed back by [`Engine::schedule`]; equals the insertion seq.
pub type EventId = u64;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("event scheduled in the past: fire_at={fire_at} < now={now}")]
    InPast { fire_at: SimTime, now: SimTime },
}

struct Entry<P> {
    fire_at: SimTime,
    seq: u64,
    payload: P,
}

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}
impl<P> Eq for Entry<P> {}
impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Entry<P> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.fire_at, self.seq).cmp(&(other.fire_at, other.seq))
    }
}

/// Single-threaded event engine. One engine per scenario run.
pub struct Engine<P> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Entry<P>>>,
    master_seed: u64,
    streams: HashMap<String, ChaCha8Rng>,
}

impl<P> Engine<P> {
    pub fn new(master_seed: u64) -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            master_seed,
            streams: HashMap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Enqueue an event. Events pop in ascending (fire_at, seq) order, so
    /// two events at the same time fire in insertion order.
    pub fn schedule(&mut self, fire_at: SimTime, payload: P) -> Result<EventId, ScheduleError> {
        if fire_at < self.now {
            return Err(ScheduleError::InPast { fire_at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Entry { fire_at, seq, payload }));
        Ok(seq)
    }

    /// Convenience: schedule relative to the current clock.
    pub fn schedule_in(&mut self, delay: SimTime, payload: P) -> EventId {
        let at = self.now + delay;
        self.schedule(at, payload).expect("delay is non-negative")
    }

    /// Execute every event with fire_at <= until, in key order, then advance
    /// the clock to `until`. Handlers may schedule follow-up events at or
    /// after the current time. Returns the number of events executed.
    pub fn run(&mut self, until: SimTime, mut handler: impl FnMut(&mut Self, SimTime, P)) -> u64 {
        let mut executed = 0;
        while let Some(Reverse(head)) = self.queue.peek() {
            if head.fire_at > until {
                break;
            }
            let Reverse(entry) = self.queue.pop().unwrap();
            debug_assert!(entry.fire_at >= self.now, "event queue went backwards");
            self.now = entry.fire_at;
            handler(self, entry.fire_at, entry.payload);
            executed += 1;
        }
        self.now = until;
        executed
    }

    /// The named random substream, created on first use from
    /// (master seed, label). Repeated calls continue the same sequence.
    pub fn stream(&mut self, label: &str) -> &mut ChaCha8Rng {
        let master = self.master_seed;
        self.streams
            .entry(label.to_string())
            .or_insert_with(|| ChaCha8Rng::from_seed(derive_seed(master, label)))
    }
}

fn derive_seed(master: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}
