//! Per-run measurement: delivery ratio, average end-to-end delay,
//! throughput, energy totals, and the packet-fate ledger that reconciles
//! sent = received + in-flight + dropped for every flow.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::engine::SimTime;
use crate::routing::{FlowId, Protocol};

/// Why a packet (its last live copy) left the network undelivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropCause {
    /// Hop limit exhausted.
    Ttl,
    /// MAC buffer overflow.
    Buffer,
    /// MAC retry cap, or a reliable flow giving up (abort).
    Retry,
    /// Lost to a collision at every remaining receiver.
    Collision,
    /// The flood died out: gossip declined, duplicate everywhere, or no
    /// receiver in range.
    Dieout,
}

impl DropCause {
    pub const ALL: [DropCause; 5] = [
        DropCause::Ttl,
        DropCause::Buffer,
        DropCause::Retry,
        DropCause::Collision,
        DropCause::Dieout,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DropCause::Ttl => "ttl",
            DropCause::Buffer => "buffer",
            DropCause::Retry => "retry",
            DropCause::Collision => "collision",
            DropCause::Dieout => "dieout",
        }
    }
}

/// Live-copy accounting for one original packet.
#[derive(Debug, Clone, Copy)]
struct Fate {
    live: u32,
    delivered: bool,
    last_cause: DropCause,
}

/// Application-layer counters for one flow. `sent` counts originals only —
/// retransmissions never inflate it; `received` counts deduplicated
/// application deliveries.
#[derive(Debug, Default, Clone)]
pub struct FlowCounters {
    pub sent: u64,
    pub received: u64,
    pub delay_sum_s: f64,
    pub bytes_received: u64,
    /// Deliveries inside the measurement window (after warm-up).
    pub measured_received: u64,
    pub measured_delay_sum_s: f64,
    pub measured_bytes: u64,
}

pub fn pdr(c: &FlowCounters) -> f64 {
    if c.sent == 0 {
        0.0
    } else {
        c.received as f64 / c.sent as f64
    }
}

pub fn avg_delay_s(c: &FlowCounters) -> f64 {
    if c.measured_received == 0 {
        0.0
    } else {
        c.measured_delay_sum_s / c.measured_received as f64
    }
}

pub fn throughput_bps(c: &FlowCounters, duration_s: f64) -> f64 {
    assert!(duration_s > 0.0, "zero-duration measurement window");
    c.measured_bytes as f64 * 8.0 / duration_s
}

#[derive(Debug, Error)]
pub enum ReconcileError {
    #[error("flow {flow}: sent {sent} != received {received} + inflight {inflight} + drops {drops}")]
    FlowMismatch { flow: FlowId, sent: u64, received: u64, inflight: u64, drops: u64 },
    #[error("node {node}: mode-time {mode_us}us != elapsed {elapsed_us}us")]
    TimeMismatch { node: usize, mode_us: u64, elapsed_us: u64 },
    #[error("node {node}: ledger recompute {recomputed} J != running total {running} J")]
    EnergyMismatch { node: usize, recomputed: f64, running: f64 },
}

/// Tracks every original data packet's copies through the network.
#[derive(Debug, Default)]
pub struct PacketLedger {
    fates: BTreeMap<(FlowId, u32), Fate>,
    counters: BTreeMap<FlowId, FlowCounters>,
}

/// End-of-run classification for one flow.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct FlowAudit {
    pub sent: u64,
    pub received: u64,
    pub inflight: u64,
    pub drops: BTreeMap<DropCause, u64>,
}

impl PacketLedger {
    pub fn counters(&self, flow: FlowId) -> FlowCounters {
        self.counters.get(&flow).cloned().unwrap_or_default()
    }

    pub fn all_counters(&self) -> impl Iterator<Item = (&FlowId, &FlowCounters)> {
        self.counters.iter()
    }

    /// A fresh original enters the network with one live copy.
    pub fn originate(&mut self, flow: FlowId, seq: u32) {
        let prev = self.fates.insert(
            (flow, seq),
            Fate { live: 1, delivered: false, last_cause: DropCause::Dieout },
        );
        debug_assert!(prev.is_none(), "duplicate original ({flow},{seq})");
        self.counters.entry(flow).or_default().sent += 1;
    }

    /// A new copy of an existing original appears (reception accepted
    /// somewhere, a retransmission, or a standing sender-side entry).
    pub fn copy_spawned(&mut self, flow: FlowId, seq: u32) {
        let f = self.fates.get_mut(&(flow, seq)).expect("copy of unknown packet");
        f.live += 1;
    }

    /// A copy leaves the network. The cause is remembered so that if this
    /// was the last copy, the packet's death is attributed to it.
    pub fn copy_ended(&mut self, flow: FlowId, seq: u32, cause: DropCause) {
        let f = self.fates.get_mut(&(flow, seq)).expect("ending copy of unknown packet");
        debug_assert!(f.live > 0, "copy underflow for ({flow},{seq})");
        f.live -= 1;
        if f.live == 0 && !f.delivered {
            f.last_cause = cause;
        }
    }

    /// Deduplicated application delivery.
    pub fn delivered(
        &mut self,
        flow: FlowId,
        seq: u32,
        origin_ts: SimTime,
        now: SimTime,
        bytes: u64,
        warmup: SimTime,
    ) -> bool {
        let f = self.fates.get_mut(&(flow, seq)).expect("delivery of unknown packet");
        if f.delivered {
            return false;
        }
        f.delivered = true;
        let delay = (now - origin_ts).as_secs_f64();
        let c = self.counters.entry(flow).or_default();
        c.received += 1;
        c.delay_sum_s += delay;
        c.bytes_received += bytes;
        if origin_ts >= warmup {
            c.measured_received += 1;
            c.measured_delay_sum_s += delay;
            c.measured_bytes += bytes;
        }
        true
    }

    pub fn is_delivered(&self, flow: FlowId, seq: u32) -> bool {
        self.fates.get(&(flow, seq)).map(|f| f.delivered).unwrap_or(false)
    }

    /// Classify every original at end of run: delivered, still in flight
    /// (live copies remain), or dropped by its last copy's cause.
    pub fn audit(&self) -> BTreeMap<FlowId, FlowAudit> {
        let mut out: BTreeMap<FlowId, FlowAudit> = BTreeMap::new();
        for (&flow, c) in &self.counters {
            let a = out.entry(flow).or_default();
            a.sent = c.sent;
        }
        for (&(flow, _seq), fate) in &self.fates {
            let a = out.entry(flow).or_default();
            if fate.delivered {
                a.received += 1;
            } else if fate.live > 0 {
                a.inflight += 1;
            } else {
                *a.drops.entry(fate.last_cause).or_default() += 1;
            }
        }
        out
    }

    /// Assert the per-flow balance. The received count is cross-checked
    /// against the flow counters.
    pub fn reconcile(&self) -> Result<BTreeMap<FlowId, FlowAudit>, ReconcileError> {
        let audits = self.audit();
        for (&flow, a) in &audits {
            let drops: u64 = a.drops.values().sum();
            let c = self.counters.get(&flow).cloned().unwrap_or_default();
            if a.sent != a.received + a.inflight + drops || a.received != c.received {
                return Err(ReconcileError::FlowMismatch {
                    flow,
                    sent: a.sent,
                    received: a.received,
                    inflight: a.inflight,
                    drops,
                });
            }
        }
        Ok(audits)
    }
}

/// One scenario run's aggregated results.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub protocol: Protocol,
    pub traffic: &'static str,
    pub nodes: usize,
    pub sim_time_s: f64,
    pub seed: u64,
    pub pdr: f64,
    pub avg_delay_ms: f64,
    pub throughput_bps: f64,
    pub energy_j: f64,
    pub drops: BTreeMap<DropCause, u64>,
    pub sent: u64,
    pub received: u64,
    pub inflight: u64,
}

pub const CSV_HEADER: &str =
    "protocol,traffic,nodes,sim_time_s,seed,pdr,avg_delay_ms,throughput_bps,energy_j,drops_ttl,drops_buffer,drops_retry";

impl MetricsRow {
    pub fn drop_count(&self, cause: DropCause) -> u64 {
        self.drops.get(&cause).copied().unwrap_or(0)
    }

    /// Fixed-format CSV line; formatting is part of the replay-determinism
    /// contract.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.3},{},{:.6},{:.6},{:.3},{:.6},{},{},{}",
            self.protocol.label(),
            self.traffic,
            self.nodes,
            self.sim_time_s,
            self.seed,
            self.pdr,
            self.avg_delay_ms,
            self.throughput_bps,
            self.energy_j,
            self.drop_count(DropCause::Ttl),
            self.drop_count(DropCause::Buffer),
            self.drop_count(DropCause::Retry),
        )
    }
}
