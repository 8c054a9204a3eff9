//! Simplified IEEE 802.11 power-save MAC: a shared beacon/ATIM schedule and
//! the per-node buffer that holds frames for dozing neighbors until they are
//! advertised, acknowledged, marked, and flushed after the ATIM window.
//!
//! Beacons themselves are abstracted to a perfect shared clock; the beacon
//! election backoff of the standard is not modeled.

use crate::engine::SimTime;
use crate::routing::{Frame, NodeId};

/// Beacon-interval schedule shared by every node. Interval k spans
/// [k*T, (k+1)*T) and opens with the ATIM window [k*T, k*T + atim).
#[derive(Debug, Clone, Copy)]
pub struct PsmSchedule {
    pub beacon_interval: SimTime,
    pub atim_window: SimTime,
}

impl PsmSchedule {
    pub fn new(beacon_interval: SimTime, atim_window: SimTime) -> Self {
        assert!(
            SimTime::ZERO < atim_window && atim_window < beacon_interval,
            "need 0 < atim_window < beacon_interval"
        );
        PsmSchedule { beacon_interval, atim_window }
    }

    pub fn interval_index(&self, t: SimTime) -> u64 {
        t.as_micros() / self.beacon_interval.as_micros()
    }

    pub fn interval_start(&self, k: u64) -> SimTime {
        SimTime(k * self.beacon_interval.as_micros())
    }

    pub fn window_end(&self, k: u64) -> SimTime {
        self.interval_start(k) + self.atim_window
    }

    pub fn in_atim_window(&self, t: SimTime) -> bool {
        let k = self.interval_index(t);
        t < self.window_end(k)
    }

    /// First instant at or after `t` where a data transmission may start
    /// (outside any ATIM window).
    pub fn data_start_at(&self, t: SimTime) -> SimTime {
        if self.in_atim_window(t) {
            self.window_end(self.interval_index(t))
        } else {
            t
        }
    }
}

/// Where a buffered frame is headed at the MAC level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MacDest {
    Node(NodeId),
    Broadcast,
}

#[derive(Debug, Clone)]
pub struct Buffered {
    pub frame: Frame,
    pub dest: MacDest,
    pub marked: bool,
    pub retries: u32,
    /// Set when the retry counter was already bumped for the current
    /// interval (a marked frame that did not fit before the interval end).
    bumped: bool,
    /// The frame has been advertised at least once; only then do unserved
    /// intervals count as retries.
    advertised: bool,
}

/// Outcome of the interval-start housekeeping.
#[derive(Debug, Default, PartialEq)]
pub struct IntervalStart {
    /// Frames dropped because they exceeded the retry cap.
    pub retry_drops: Vec<Frame>,
}

/// Per-node PSM buffer.
#[derive(Debug, Default)]
pub struct MacBuffer {
    queue: Vec<Buffered>,
}

impl MacBuffer {
    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Buffer a frame for a (possibly dozing) MAC destination. On overflow
    /// the newest frame — this one — is rejected.
    pub fn push(&mut self, frame: Frame, dest: MacDest, cap: usize) -> Result<(), Frame> {
        if self.queue.len() >= cap {
            return Err(frame);
        }
        self.queue.push(Buffered {
            frame,
            dest,
            marked: false,
            retries: 0,
            bumped: false,
            advertised: false,
        });
        Ok(())
    }

    /// Interval-start housekeeping: clear stale marks, charge one retry to
    /// every frame that sat through the previous interval, and drop frames
    /// past the retry cap.
    pub fn start_interval(&mut self, retry_max: u32) -> IntervalStart {
        let mut out = IntervalStart::default();
        for b in &mut self.queue {
            b.marked = false;
            if b.bumped {
                b.bumped = false;
            } else if b.advertised {
                b.retries += 1;
            }
        }
        let mut kept = Vec::with_capacity(self.queue.len());
        for b in self.queue.drain(..) {
            if b.retries > retry_max {
                out.retry_drops.push(b.frame);
            } else {
                kept.push(b);
            }
        }
        self.queue = kept;
        out
    }

    /// One advertisement per distinct buffered destination. Broadcast
    /// advertisements need no acknowledgment, so their frames are marked
    /// for transmission right away.
    pub fn advertise(&mut self) -> Vec<MacDest> {
        let mut dests: Vec<MacDest> = Vec::new();
        for b in &mut self.queue {
            if !dests.contains(&b.dest) {
                dests.push(b.dest);
            }
            b.advertised = true;
            if b.dest == MacDest::Broadcast {
                b.marked = true;
            }
        }
        dests.sort();
        dests
    }

    /// An ATIM-ACK arrived from `from` inside the window: mark everything
    /// buffered for that destination. Returns how many frames were marked.
    pub fn mark_on_ack(&mut self, from: NodeId) -> usize {
        let mut n = 0;
        for b in &mut self.queue {
            if b.dest == MacDest::Node(from) && !b.marked {
                b.marked = true;
                n += 1;
            }
        }
        n
    }

    /// Remove and return the marked frames for post-window transmission, in
    /// buffer order.
    pub fn take_marked(&mut self) -> Vec<Buffered> {
        let mut taken = Vec::new();
        let mut kept = Vec::with_capacity(self.queue.len());
        for b in self.queue.drain(..) {
            if b.marked {
                taken.push(b);
            } else {
                kept.push(b);
            }
        }
        self.queue = kept;
        taken
    }

    /// Re-buffer a marked frame that did not fit before the interval ended.
    /// It pays its retry immediately and waits for the next window.
    pub fn requeue_unsent(&mut self, mut b: Buffered) {
        b.marked = false;
        b.retries += 1;
        b.bumped = true;
        self.queue.push(b);
    }

    /// Destinations with unmarked unicast frames (advertised but not yet
    /// acked); used to detect whether the node must stay awake.
    pub fn has_marked(&self) -> bool {
        self.queue.iter().any(|b| b.marked)
    }
}
