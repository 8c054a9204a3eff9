//! Protocol decision logic for the two schemes under test: probabilistic
//! gossip forwarding (GSP) and adaptive energy-efficient gossip (AEERG) with
//! a per-node active-neighbor count B driven by destination feedback.

use rand::Rng;

use crate::engine::SimTime;

pub type NodeId = usize;

/// Application flow identifier; flows are numbered per run.
pub type FlowId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Gsp,
    Aeerg,
}

impl Protocol {
    pub fn label(self) -> &'static str {
        match self {
            Protocol::Gsp => "gsp",
            Protocol::Aeerg => "aeerg",
        }
    }
}

/// What a routed frame carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payload {
    Data,
    /// Delivery-ratio feedback from a flow destination back to its source.
    Feedback { d: f64, window: u32 },
    /// Cumulative acknowledgment for the reliable transport.
    TcpAck { cum: u32 },
}

impl Payload {
    pub fn label(self) -> &'static str {
        match self {
            Payload::Data => "data",
            Payload::Feedback { .. } => "feedback",
            Payload::TcpAck { .. } => "tcpack",
        }
    }
}

/// A routed application frame. `route_id` is unique per emission (including
/// retransmissions) and keys duplicate suppression at relays; `(flow, seq)`
/// identifies the original packet end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub route_id: u64,
    pub flow: FlowId,
    pub seq: u32,
    pub payload: Payload,
    pub src: NodeId,
    pub dst: NodeId,
    pub origin_ts: SimTime,
    pub hops: u32,
    pub bytes: u64,
    /// AEERG constrained broadcast: only these nodes relay the frame.
    /// Empty for GSP, where the frame is an open broadcast.
    pub targets: Vec<NodeId>,
}

/// Neighbor list sorted ascending by distance, refreshed on the neighbor
/// tick. All entries are within radio range.
#[derive(Debug, Clone, Default)]
pub struct NeighborTable {
    entries: Vec<(NodeId, f64)>,
}

impl NeighborTable {
    pub fn rebuild(&mut self, mut entries: Vec<(NodeId, f64)>) {
        entries.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        self.entries = entries;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(NodeId, f64)] {
        &self.entries
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GossipConfig {
    pub p_gossip: f64,
    /// Hops that always forward before the probabilistic rule kicks in.
    pub hops_forced: u32,
}

impl Default for GossipConfig {
    fn default() -> Self {
        GossipConfig { p_gossip: 0.7, hops_forced: 1 }
    }
}

/// GSP forwarding decision. `hop` is the hop count the packet would have
/// after this forward (the source's own broadcast is hop 1).
pub fn gossip_decide(cfg: &GossipConfig, hop: u32, rng: &mut impl Rng) -> bool {
    if hop <= cfg.hops_forced {
        return true;
    }
    rng.random_bool(cfg.p_gossip)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SleepChoice {
    Active,
    Sleep,
}

/// Per-node AEERG control state.
#[derive(Debug, Clone)]
pub struct AeergState {
    /// Number of nearest neighbors kept active / targeted for forwarding.
    pub b: usize,
    pub rt: f64,
    pub p_sleep: f64,
    pub last_d: Option<f64>,
}

impl AeergState {
    pub fn new(rt: f64, p_sleep: f64) -> Self {
        // B starts at one: broadcast only to the closest neighbor
        AeergState { b: 1, rt, p_sleep, last_d: None }
    }

    /// Apply a heard delivery ratio: below RT widen by one neighbor, at or
    /// above RT narrow by one, clamped to [1, |table|].
    pub fn adjust_b(&mut self, d: f64, table_len: usize) {
        debug_assert!((0.0..=1.0).contains(&d));
        if d < self.rt {
            self.b = (self.b + 1).min(table_len.max(1));
        } else {
            self.b = self.b.saturating_sub(1).max(1);
        }
        self.last_d = Some(d);
    }

    /// Keep B inside [1, |table|] when the neighbor table shrinks.
    pub fn clamp_to_table(&mut self, table_len: usize) {
        self.b = self.b.min(table_len.max(1)).max(1);
    }

    /// Sleep-or-stay decision at the end of each ATIM window. Forced-active
    /// nodes (awake pledges, pending traffic) never reach this point.
    pub fn sleep_decide(&self, rng: &mut impl Rng) -> SleepChoice {
        if rng.random_bool(self.p_sleep) {
            SleepChoice::Sleep
        } else {
            SleepChoice::Active
        }
    }
}

/// The min(B, |table|) nearest neighbors in ascending distance order, and
/// the distance of the farthest selected one (which sets the transmit
/// power). Empty table yields an empty selection.
pub fn select_targets(b: usize, table: &NeighborTable) -> (Vec<NodeId>, f64) {
    let take = b.min(table.len());
    let sel: Vec<NodeId> = table.entries[..take].iter().map(|&(id, _)| id).collect();
    let far = if take == 0 { 0.0 } else { table.entries[take - 1].1 };
    (sel, far)
}

/// Delivery ratio computed at the destination over one feedback window.
pub fn destination_feedback(sent: u32, received: u32) -> f64 {
    debug_assert!(received <= sent.max(1), "received beyond the highest seen seq");
    received as f64 / sent.max(1) as f64
}
