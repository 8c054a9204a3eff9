//! Application traffic sources: constant-bit-rate flows and a reliable
//! fixed-window transport ("TCP-lite") with cumulative acks, RTO doubling,
//! and retransmission. No congestion control — the reliability semantics
//! are what the experiments compare, not AIMD.

use std::collections::BTreeMap;

use crate::engine::SimTime;
use crate::routing::NodeId;

/// Constant-bit-rate source: fixed-size packets at a fixed interval over
/// [start, stop), sequence numbers from zero.
#[derive(Debug, Clone)]
pub struct CbrFlow {
    pub src: NodeId,
    pub dst: NodeId,
    pub pkt_bytes: u64,
    pub interval: SimTime,
    pub start: SimTime,
    pub stop: SimTime,
    pub next_seq: u32,
}

impl CbrFlow {
    pub fn new(
        src: NodeId,
        dst: NodeId,
        pkt_bytes: u64,
        interval: SimTime,
        start: SimTime,
        stop: SimTime,
    ) -> Self {
        assert!(interval > SimTime::ZERO);
        CbrFlow { src, dst, pkt_bytes, interval, start, stop, next_seq: 0 }
    }

    pub fn first_emission(&self) -> Option<SimTime> {
        (self.start < self.stop).then_some(self.start)
    }

    /// Emit the packet due at `t` and report when the next one is due, if
    /// it falls before `stop`.
    pub fn emit(&mut self, t: SimTime) -> (u32, Option<SimTime>) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let next = t + self.interval;
        (seq, (next < self.stop).then_some(next))
    }

    /// Total packets the flow will emit: one per interval over [start, stop).
    pub fn expected_count(&self) -> u64 {
        let span = self.stop.saturating_sub(self.start).as_micros();
        span.div_ceil(self.interval.as_micros())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InflightEntry {
    pub seq: u32,
    pub first_sent: SimTime,
    pub retx: u32,
    /// Bumped on every (re)send so stale timeout timers can be ignored.
    pub epoch: u64,
    pub rto: SimTime,
}

/// A packet handed to the network, with the timer the caller must arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    pub seq: u32,
    /// Original send time — retransmissions keep it so end-to-end delay
    /// spans from the first send to delivery.
    pub origin_ts: SimTime,
    pub timeout_at: SimTime,
    pub epoch: u64,
}

#[derive(Debug, PartialEq)]
pub enum TimeoutOutcome {
    /// The timer was stale or the packet is already acked.
    Ignored,
    Retransmit(Emission),
    /// Retransmissions exhausted; the flow stops. The listed sequence
    /// numbers were still unacknowledged.
    Abort { pending: Vec<u32> },
}

/// Fixed-window reliable sender.
#[derive(Debug, Clone)]
pub struct TcpLiteFlow {
    pub src: NodeId,
    pub dst: NodeId,
    pub pkt_bytes: u64,
    pub window: usize,
    pub next_seq: u32,
    pub cum_ack: u32,
    pub rto_min: SimTime,
    pub rto_max: SimTime,
    pub max_retx: u32,
    /// Stop after this many packets; zero means unlimited.
    pub total_pkts: u32,
    /// Minimum spacing between fresh emissions; zero disables pacing.
    pub emit_min_interval: SimTime,
    pub aborted: bool,
    srtt: Option<f64>,
    last_emit: Option<SimTime>,
    inflight: Vec<InflightEntry>,
    next_epoch: u64,
}

impl TcpLiteFlow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        src: NodeId,
        dst: NodeId,
        pkt_bytes: u64,
        window: usize,
        rto_min: SimTime,
        rto_max: SimTime,
        max_retx: u32,
        total_pkts: u32,
        emit_min_interval: SimTime,
    ) -> Self {
        assert!(window >= 1);
        TcpLiteFlow {
            src,
            dst,
            pkt_bytes,
            window,
            next_seq: 0,
            cum_ack: 0,
            rto_min,
            rto_max,
            max_retx,
            total_pkts,
            emit_min_interval,
            aborted: false,
            srtt: None,
            last_emit: None,
            inflight: Vec::new(),
            next_epoch: 0,
        }
    }

    pub fn inflight_len(&self) -> usize {
        self.inflight.len()
    }

    pub fn inflight_seqs(&self) -> Vec<u32> {
        self.inflight.iter().map(|e| e.seq).collect()
    }

    pub fn done(&self) -> bool {
        self.aborted
            || (self.total_pkts > 0 && self.cum_ack >= self.total_pkts && self.inflight.is_empty())
    }

    fn base_rto(&self) -> SimTime {
        match self.srtt {
            Some(s) => {
                let rto = SimTime::from_secs_f64(2.0 * s);
                rto.max(self.rto_min).min(self.rto_max)
            }
            None => self.rto_min,
        }
    }

    /// Emit fresh packets while the window has room (and pacing allows).
    /// Returns the emissions and, when pacing blocked further sends, the
    /// time to try again.
    pub fn send_window(&mut self, t: SimTime) -> (Vec<Emission>, Option<SimTime>) {
        let mut out = Vec::new();
        if self.aborted {
            return (out, None);
        }
        loop {
            if self.inflight.len() >= self.window {
                return (out, None);
            }
            if self.total_pkts > 0 && self.next_seq >= self.total_pkts {
                return (out, None);
            }
            if self.emit_min_interval > SimTime::ZERO {
                if let Some(last) = self.last_emit {
                    let earliest = last + self.emit_min_interval;
                    if t < earliest {
                        return (out, Some(earliest));
                    }
                }
            }
            let seq = self.next_seq;
            self.next_seq += 1;
            let rto = self.base_rto();
            let epoch = self.next_epoch;
            self.next_epoch += 1;
            self.inflight.push(InflightEntry { seq, first_sent: t, retx: 0, epoch, rto });
            self.last_emit = Some(t);
            out.push(Emission { seq, origin_ts: t, timeout_at: t + rto, epoch });
            if self.emit_min_interval > SimTime::ZERO {
                // pacing: one packet per call, ask to be called back
                let earliest = t + self.emit_min_interval;
                return (out, Some(earliest));
            }
        }
    }

    /// Handle a cumulative ack. Duplicate acks change nothing (no fast
    /// retransmit). A new ack clears covered entries, feeds RTT smoothing
    /// from an unambiguous (never-retransmitted) sample, and resets the
    /// per-entry backoff.
    pub fn on_ack(&mut self, t: SimTime, ack: u32) -> usize {
        if ack <= self.cum_ack || self.aborted {
            return 0;
        }
        let mut sample: Option<f64> = None;
        let before = self.inflight.len();
        self.inflight.retain(|e| {
            if e.seq < ack {
                if e.retx == 0 {
                    sample = Some((t - e.first_sent).as_secs_f64());
                }
                false
            } else {
                true
            }
        });
        let cleared = before - self.inflight.len();
        self.cum_ack = ack;
        if let Some(s) = sample {
            self.srtt = Some(match self.srtt {
                Some(old) => old * 7.0 / 8.0 + s / 8.0,
                None => s,
            });
        }
        // a new cumulative ack is fresh evidence the path works: timers
        // restart from the smoothed RTT and the backoff resets
        let base = self.base_rto();
        for e in &mut self.inflight {
            e.rto = base;
        }
        cleared
    }

    pub fn srtt(&self) -> Option<f64> {
        self.srtt
    }

    /// A retransmission timer fired for (seq, epoch).
    pub fn on_timeout(&mut self, t: SimTime, seq: u32, epoch: u64) -> TimeoutOutcome {
        if self.aborted {
            return TimeoutOutcome::Ignored;
        }
        let Some(idx) = self.inflight.iter().position(|e| e.seq == seq && e.epoch == epoch)
        else {
            return TimeoutOutcome::Ignored;
        };
        if self.inflight[idx].retx + 1 > self.max_retx {
            self.aborted = true;
            let pending = self.inflight_seqs();
            self.inflight.clear();
            return TimeoutOutcome::Abort { pending };
        }
        let epoch = self.next_epoch;
        self.next_epoch += 1;
        let e = &mut self.inflight[idx];
        e.retx += 1;
        e.rto = SimTime(e.rto.as_micros() * 2).min(self.rto_max);
        e.epoch = epoch;
        TimeoutOutcome::Retransmit(Emission {
            seq,
            origin_ts: e.first_sent,
            timeout_at: t + e.rto,
            epoch,
        })
    }
}

/// Destination-side reassembly for TCP-lite: dedup, in-order application
/// delivery, and the cumulative ack value.
#[derive(Debug, Default, Clone)]
pub struct TcpReceiver {
    app_next: u32,
    buffer: BTreeMap<u32, SimTime>,
}

impl TcpReceiver {
    /// Accept a data packet; returns the (seq, origin_ts) pairs released to
    /// the application, in order.
    pub fn on_data(&mut self, seq: u32, origin_ts: SimTime) -> Vec<(u32, SimTime)> {
        if seq >= self.app_next {
            self.buffer.entry(seq).or_insert(origin_ts);
        }
        let mut released = Vec::new();
        while let Some(ts) = self.buffer.remove(&self.app_next) {
            released.push((self.app_next, ts));
            self.app_next += 1;
        }
        released
    }

    /// Cumulative ack: everything below this is delivered.
    pub fn ack_value(&self) -> u32 {
        self.app_next
    }

    /// Whether this sequence number has not been seen before (neither
    /// released nor buffered) — i.e. the arrival is a first, not a
    /// duplicate from a retransmission.
    pub fn is_new(&self, seq: u32) -> bool {
        seq >= self.app_next && !self.buffer.contains_key(&seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MS: u64 = 1_000;

    #[test]
    fn cbr_fixed_interval_emissions() {
        let mut f = CbrFlow::new(
            0,
            1,
            512,
            SimTime::from_millis(250),
            SimTime::ZERO,
            SimTime::from_secs(100),
        );
        let mut t = f.first_emission().unwrap();
        let mut times = vec![];
        loop {
            let (seq, next) = f.emit(t);
            times.push((seq, t));
            match next {
                Some(n) => t = n,
                None => break,
            }
        }
        assert_eq!(times.len(), 400, "100 s at 4 pkt/s");
        assert_eq!(times[0], (0, SimTime::ZERO));
        assert_eq!(times[1].1, SimTime::from_millis(250));
        assert_eq!(times[2].1, SimTime::from_millis(500));
        assert_eq!(f.expected_count(), 400);
    }

    #[test]
    fn cbr_ends_cleanly_before_stop() {
        let mut f = CbrFlow::new(
            0,
            1,
            512,
            SimTime::from_millis(300),
            SimTime::ZERO,
            SimTime::from_millis(700),
        );
        // emissions at 0, 300, 600; 900 >= stop
        let mut n = 0;
        let mut t = f.first_emission().unwrap();
        loop {
            let (_, next) = f.emit(t);
            n += 1;
            match next {
                Some(nx) => t = nx,
                None => break,
            }
        }
        assert_eq!(n, 3);
        assert_eq!(f.expected_count(), 3);
    }

    fn flow(window: usize) -> TcpLiteFlow {
        TcpLiteFlow::new(
            0,
            1,
            512,
            window,
            SimTime::from_secs(1),
            SimTime::from_secs(64),
            8,
            0,
            SimTime::ZERO,
        )
    }

    #[test]
    fn window_fills_then_blocks() {
        let mut f = flow(8);
        let (emitted, _) = f.send_window(SimTime::ZERO);
        assert_eq!(emitted.len(), 8);
        let (emitted, _) = f.send_window(SimTime(10));
        assert!(emitted.is_empty(), "full window emits nothing");
    }

    #[test]
    fn ack_advance_opens_window() {
        let mut f = flow(8);
        f.send_window(SimTime::ZERO);
        let cleared = f.on_ack(SimTime(50 * MS), 3);
        assert_eq!(cleared, 3);
        let (emitted, _) = f.send_window(SimTime(50 * MS));
        assert_eq!(emitted.len(), 3, "exactly the acked count re-opens");
        assert_eq!(emitted[0].seq, 8);
    }

    #[test]
    fn duplicate_ack_is_ignored() {
        let mut f = flow(4);
        f.send_window(SimTime::ZERO);
        f.on_ack(SimTime(10 * MS), 2);
        let snapshot = f.inflight_seqs();
        assert_eq!(f.on_ack(SimTime(20 * MS), 2), 0);
        assert_eq!(f.inflight_seqs(), snapshot);
        assert_eq!(f.cum_ack, 2);
    }

    #[test]
    fn rtt_smoothing_feeds_rto() {
        let mut f = flow(1);
        f.send_window(SimTime::ZERO);
        f.on_ack(SimTime(100 * MS), 1); // first sample: srtt = 0.1 s
        assert!((f.srtt().unwrap() - 0.1).abs() < 1e-12);
        f.send_window(SimTime(100 * MS));
        f.on_ack(SimTime(100 * MS + 300 * MS), 2); // sample 0.3 s
        let expect = 0.1 * 7.0 / 8.0 + 0.3 / 8.0;
        assert!((f.srtt().unwrap() - expect).abs() < 1e-12);
        // rto = max(rto_min, 2 * srtt) = 1 s here since 2*srtt < rto_min
        assert_eq!(f.base_rto(), SimTime::from_secs(1));
    }

    #[test]
    fn rto_doubles_on_consecutive_timeouts() {
        let mut f = flow(1);
        let (em, _) = f.send_window(SimTime::ZERO);
        let e0 = em[0];
        assert_eq!(e0.timeout_at, SimTime::from_secs(1), "base rto 1 s");
        let TimeoutOutcome::Retransmit(r1) = f.on_timeout(e0.timeout_at, 0, e0.epoch) else {
            panic!("expected retransmit");
        };
        assert_eq!(r1.timeout_at - e0.timeout_at, SimTime::from_secs(2));
        let TimeoutOutcome::Retransmit(r2) = f.on_timeout(r1.timeout_at, 0, r1.epoch) else {
            panic!("expected retransmit");
        };
        assert_eq!(r2.timeout_at - r1.timeout_at, SimTime::from_secs(4));
        // origin timestamp sticks to the first send
        assert_eq!(r2.origin_ts, SimTime::ZERO);
    }

    #[test]
    fn stale_timer_ignored_and_abort_at_cap() {
        let mut f = flow(1);
        let (em, _) = f.send_window(SimTime::ZERO);
        let e0 = em[0];
        f.on_ack(SimTime(5 * MS), 1);
        assert_eq!(f.on_timeout(e0.timeout_at, 0, e0.epoch), TimeoutOutcome::Ignored);

        let mut f = flow(1);
        let (em, _) = f.send_window(SimTime::ZERO);
        let mut last = em[0];
        for _ in 0..8 {
            match f.on_timeout(last.timeout_at, 0, last.epoch) {
                TimeoutOutcome::Retransmit(r) => last = r,
                other => panic!("unexpected {other:?}"),
            }
        }
        let out = f.on_timeout(last.timeout_at, 0, last.epoch);
        assert_eq!(out, TimeoutOutcome::Abort { pending: vec![0] });
        assert!(f.done());
    }

    #[test]
    fn receiver_orders_and_dedups() {
        let mut r = TcpReceiver::default();
        assert_eq!(r.on_data(1, SimTime(10)), vec![]);
        assert_eq!(r.ack_value(), 0);
        let rel = r.on_data(0, SimTime(5));
        assert_eq!(rel, vec![(0, SimTime(5)), (1, SimTime(10))]);
        assert_eq!(r.ack_value(), 2);
        // duplicate of an already-delivered seq releases nothing
        assert_eq!(r.on_data(0, SimTime(99)), vec![]);
        assert_eq!(r.ack_value(), 2);
    }

    #[test]
    fn pacing_limits_emission_rate() {
        let mut f = TcpLiteFlow::new(
            0,
            1,
            512,
            8,
            SimTime::from_secs(1),
            SimTime::from_secs(64),
            8,
            0,
            SimTime::from_millis(100),
        );
        let (em, again) = f.send_window(SimTime::ZERO);
        assert_eq!(em.len(), 1);
        assert_eq!(again, Some(SimTime::from_millis(100)));
        let (em, _) = f.send_window(SimTime::from_millis(50));
        assert!(em.is_empty());
        let (em, _) = f.send_window(SimTime::from_millis(100));
        assert_eq!(em.len(), 1);
    }
}
