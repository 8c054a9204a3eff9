//! One scenario run: builds the engine, nodes, flows and MAC state from a
//! [`ScenarioConfig`], executes the event loop to the configured horizon,
//! and returns a reconciled metrics row.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::io::Write;

use thiserror::Error;

use crate::config::{ScenarioConfig, TrafficKind};
use crate::engine::{Engine, SimTime};
use crate::mac::{MacBuffer, MacDest, PsmSchedule};
use crate::metrics::{
    avg_delay_s, pdr, throughput_bps, DropCause, FlowAudit, FlowCounters, MetricsRow,
    PacketLedger, ReconcileError,
};
use crate::mobility::{distance, MotionState, Region};
use crate::radio::{in_range, tx_duration, tx_power_for_distance, EnergyLedger, PowerTable, RadioMode};
use crate::routing::{
    destination_feedback, gossip_decide, AeergState, FlowId, Frame, GossipConfig,
    NeighborTable, NodeId, Payload, Protocol, SleepChoice,
};
use crate::traffic::{CbrFlow, TcpLiteFlow, TcpReceiver, TimeoutOutcome};

const ATIM_BYTES: u64 = 28;
const ATIM_ACK_BYTES: u64 = 14;
/// Wake-up trigger a forwarder sends at full power when one of its chosen
/// targets is dozing.
const TRIGGER_BYTES: u64 = 16;
const TCP_ACK_BYTES: u64 = 40;
const FEEDBACK_BYTES: u64 = 32;
/// Deterministic per-node offset for ATIM transmissions inside the window.
const ATIM_SLOT_US: u64 = 250;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Reconcile(#[from] ReconcileError),
    #[error("trace sink: {0}")]
    Trace(#[from] std::io::Error),
}

/// Full result of one run: the CSV row plus the audit detail the tests use.
#[derive(Debug)]
pub struct RunReport {
    pub row: MetricsRow,
    pub audits: BTreeMap<FlowId, FlowAudit>,
    pub node_ledgers: Vec<EnergyLedger>,
    pub executed_events: u64,
    /// Nodes that handled each data packet (detail mode only).
    pub reach: BTreeMap<(FlowId, u32), BTreeSet<NodeId>>,
    /// Application delivery order per flow (detail mode only).
    pub app_deliveries: BTreeMap<FlowId, Vec<u32>>,
    pub flow_aborted: BTreeMap<FlowId, bool>,
    /// Times any node's active-neighbor count B was observed outside
    /// [1, max(1, |neighbor table|)] at an adjustment or neighbor tick.
    pub b_range_violations: u64,
}

enum Ev {
    NeighborTick,
    IntervalStart,
    AtimWindowEnd,
    TxBegin(usize),
    TxEnd(usize),
    RxEnd(NodeId),
    CbrEmit(FlowId),
    TcpStart(FlowId),
    TcpPace(FlowId),
    TcpTimeout { flow: FlowId, seq: u32, epoch: u64 },
    FeedbackClose(FlowId),
    SilenceTick,
    HoldRetry { node: NodeId, frame: Frame },
}

#[derive(Debug, Clone, Copy, Default)]
struct ForwardState {
    last_forward: SimTime,
    last_feedback: SimTime,
    last_fb_window: Option<u32>,
}

struct Node {
    motion: MotionState,
    mode: RadioMode,
    mode_since: SimTime,
    tx_watts: f64,
    energy: EnergyLedger,
    rx_until: SimTime,
    tx_free_at: SimTime,
    /// Carrier sense: earliest instant this node may start a transmission,
    /// pushed out by every scheduled transmission whose radius covers it.
    channel_busy_until: SimTime,
    table: NeighborTable,
    aeerg: AeergState,
    mac: MacBuffer,
    pending_app: VecDeque<Frame>,
    seen: HashSet<u64>,
    pledged: bool,
    advertised: bool,
    pending_rx: Vec<usize>,
    forward_state: BTreeMap<FlowId, ForwardState>,
}

impl Node {
    fn alive(&self) -> bool {
        !self.energy.dead
    }

    fn pos_at(&self, t: SimTime) -> (f64, f64) {
        self.motion.position_at(t)
    }
}

enum TxKind {
    Routed(Frame),
    Atim { dest: MacDest },
    AtimAck { to: NodeId },
    /// Full-power wake-up signal for dozing forwarding targets.
    Trigger { targets: Vec<NodeId> },
}

struct Tx {
    sender: NodeId,
    kind: TxKind,
    end: SimTime,
    power_w: f64,
    radius_m: f64,
    accepted: Vec<NodeId>,
    collided: bool,
}

struct FeedbackWindow {
    window_id: u32,
    received: u32,
    high_seq: u32,
    high_seq_at_open: u32,
    any_traffic: bool,
}

enum FlowState {
    Cbr(CbrFlow),
    Tcp { tx: TcpLiteFlow, rx: TcpReceiver },
}

struct Flow {
    id: FlowId,
    src: NodeId,
    dst: NodeId,
    state: FlowState,
    fb: FeedbackWindow,
}

struct World {
    cfg: ScenarioConfig,
    protocol: Protocol,
    psm_on: bool,
    schedule: PsmSchedule,
    power: PowerTable,
    gossip: GossipConfig,
    region: Region,
    sim_end: SimTime,
    warmup: SimTime,
    nodes: Vec<Node>,
    flows: Vec<Flow>,
    txs: Vec<Tx>,
    ledger: PacketLedger,
    next_route_id: u64,
    trace: Option<Box<dyn Write>>,
    reach: BTreeMap<(FlowId, u32), BTreeSet<NodeId>>,
    app_deliveries: BTreeMap<FlowId, Vec<u32>>,
    b_range_violations: u64,
}

type Eng = Engine<Ev>;

impl World {
    fn trace(&mut self, t: SimTime, node: usize, kind: &str, detail: &str) {
        if let Some(w) = self.trace.as_mut() {
            let _ = writeln!(w, "{}\t{}\t{}\t{}", t.as_micros(), node, kind, detail);
        }
    }

    // ---- energy / mode bookkeeping -------------------------------------

    fn accrue_to(&mut self, id: NodeId, t: SimTime) {
        let n = &mut self.nodes[id];
        let dt = t.as_micros().saturating_sub(n.mode_since.as_micros());
        if dt > 0 {
            let watts = match n.mode {
                RadioMode::Transmit => n.tx_watts,
                m => self.power.watts(m),
            };
            n.energy.accrue(n.mode, dt, watts);
        }
        n.mode_since = t;
    }

    fn set_mode(&mut self, t: SimTime, id: NodeId, mode: RadioMode, tx_watts: Option<f64>) {
        self.accrue_to(id, t);
        let n = &mut self.nodes[id];
        let changed = n.mode != mode;
        n.mode = mode;
        if let Some(w) = tx_watts {
            n.tx_watts = w;
        }
        if changed {
            self.trace(t, id, "mode", mode.label());
        }
    }

    // ---- fate tracking helpers -----------------------------------------

    fn fate_end(&mut self, frame: &Frame, cause: DropCause) {
        if frame.payload == Payload::Data {
            self.ledger.copy_ended(frame.flow, frame.seq, cause);
        }
    }

    fn fate_spawn(&mut self, frame: &Frame) {
        if frame.payload == Payload::Data {
            self.ledger.copy_spawned(frame.flow, frame.seq);
        }
    }

    // ---- transmissions ---------------------------------------------------

    /// Carrier-sense reservation: every node the transmission's radius
    /// covers defers its own starts until `end`. Low-power transmissions
    /// occupy only a small disc, leaving the rest of the region free for
    /// concurrent traffic.
    fn reserve_channel(&mut self, t: SimTime, sender: NodeId, radius_m: f64, end: SimTime) {
        let pos = self.nodes[sender].pos_at(t);
        for n in &mut self.nodes {
            if in_range(pos, n.pos_at(t), radius_m) && n.channel_busy_until < end {
                n.channel_busy_until = end;
            }
        }
    }

    /// Queue a data-frame transmission honoring the per-node transmitter
    /// serialization and (under PSM) the ATIM-window exclusion.
    fn enqueue_data_tx(
        &mut self,
        eng: &mut Eng,
        t: SimTime,
        sender: NodeId,
        frame: Frame,
        radius_m: f64,
        power_w: f64,
    ) {
        let airtime = tx_duration(frame.bytes, self.cfg.rate_bps);
        let n = &self.nodes[sender];
        let mut start = t.max(n.tx_free_at).max(n.channel_busy_until);
        if self.psm_on {
            start = self.schedule.data_start_at(start);
            // never let a data frame spill into the next ATIM window
            loop {
                let k = self.schedule.interval_index(start);
                if start + airtime <= self.schedule.interval_start(k + 1) {
                    break;
                }
                start = self.schedule.window_end(k + 1);
            }
        }
        let end = start + airtime;
        // queue cap: a medium backlog deeper than the MAC buffer sheds the
        // newest frame; depth is measured in full data-frame slots since
        // that is what fills the queue
        let slot = tx_duration(frame.bytes.max(self.cfg.cbr_pkt_bytes), self.cfg.rate_bps);
        let wait = start.saturating_sub(t).as_micros();
        if wait > self.cfg.mac_buffer_cap as u64 * slot.as_micros().max(1) {
            self.trace(t, sender, "drop", "txqueue");
            self.fate_end(&frame, DropCause::Buffer);
            return;
        }
        self.nodes[sender].tx_free_at = end;
        self.reserve_channel(t, sender, radius_m, end);
        let idx = self.txs.len();
        self.txs.push(Tx {
            sender,
            kind: TxKind::Routed(frame),
            end,
            power_w,
            radius_m,
            accepted: Vec::new(),
            collided: false,
        });
        eng.schedule(start, Ev::TxBegin(idx)).unwrap();
        eng.schedule(end, Ev::TxEnd(idx)).unwrap();
    }

    /// Full-power wake-up signal sent ahead of a reduced-power data frame
    /// whose targets include dozing nodes. Follows data-phase timing so the
    /// data transmission queues right behind it on the sender.
    fn enqueue_trigger_tx(&mut self, eng: &mut Eng, t: SimTime, sender: NodeId, targets: Vec<NodeId>) {
        let airtime = tx_duration(TRIGGER_BYTES, self.cfg.rate_bps);
        let n = &self.nodes[sender];
        let mut start = t.max(n.tx_free_at).max(n.channel_busy_until);
        if self.psm_on {
            start = self.schedule.data_start_at(start);
            loop {
                let k = self.schedule.interval_index(start);
                if start + airtime <= self.schedule.interval_start(k + 1) {
                    break;
                }
                start = self.schedule.window_end(k + 1);
            }
        }
        let end = start + airtime;
        self.nodes[sender].tx_free_at = end;
        self.reserve_channel(t, sender, self.cfg.range_m, end);
        let idx = self.txs.len();
        self.txs.push(Tx {
            sender,
            kind: TxKind::Trigger { targets },
            end,
            power_w: self.power.p_tx,
            radius_m: self.cfg.range_m,
            accepted: Vec::new(),
            collided: false,
        });
        eng.schedule(start, Ev::TxBegin(idx)).unwrap();
        eng.schedule(end, Ev::TxEnd(idx)).unwrap();
    }

    /// ATIM / ATIM-ACK transmission; must complete inside the current ATIM
    /// window or it is abandoned (the frame stays buffered for a retry).
    fn enqueue_ctrl_tx(&mut self, eng: &mut Eng, t: SimTime, sender: NodeId, kind: TxKind) {
        let bytes = match kind {
            TxKind::Atim { .. } => ATIM_BYTES,
            TxKind::AtimAck { .. } => ATIM_ACK_BYTES,
            TxKind::Routed(_) => unreachable!("data goes through enqueue_data_tx"),
            TxKind::Trigger { .. } => unreachable!("triggers go through enqueue_trigger_tx"),
        };
        let airtime = tx_duration(bytes, self.cfg.rate_bps);
        let n = &self.nodes[sender];
        let start = t.max(n.tx_free_at).max(n.channel_busy_until);
        let k = self.schedule.interval_index(start);
        let end = start + airtime;
        if !self.schedule.in_atim_window(start) || end > self.schedule.window_end(k) {
            self.trace(t, sender, "drop", "atim-window-full");
            return;
        }
        self.nodes[sender].tx_free_at = end;
        self.reserve_channel(t, sender, self.cfg.range_m, end);
        let idx = self.txs.len();
        self.txs.push(Tx {
            sender,
            kind,
            end,
            power_w: self.power.p_tx,
            radius_m: self.cfg.range_m,
            accepted: Vec::new(),
            collided: false,
        });
        eng.schedule(start, Ev::TxBegin(idx)).unwrap();
        eng.schedule(end, Ev::TxEnd(idx)).unwrap();
    }

    fn on_tx_begin(&mut self, eng: &mut Eng, t: SimTime, idx: usize) {
        let sender = self.txs[idx].sender;
        if !self.nodes[sender].alive() {
            return;
        }
        let power = self.txs[idx].power_w;
        self.set_mode(t, sender, RadioMode::Transmit, Some(power));
        let spos = self.nodes[sender].pos_at(t);
        let radius = self.txs[idx].radius_m;
        let end = self.txs[idx].end;
        for j in 0..self.nodes.len() {
            if j == sender || !self.nodes[j].alive() {
                continue;
            }
            match self.nodes[j].mode {
                RadioMode::Doze | RadioMode::Transmit => continue,
                _ => {}
            }
            if !in_range(spos, self.nodes[j].pos_at(t), radius) {
                continue;
            }
            if self.cfg.fault_loss_prob > 0.0 {
                use rand::Rng;
                if eng.stream("mac").random_bool(self.cfg.fault_loss_prob) {
                    // jams the radio for the duration but carries no frame
                    self.mark_receiving(eng, t, j, idx, end);
                    self.nodes[j].pending_rx.retain(|&p| p != idx);
                    continue;
                }
            }
            if self.cfg.collisions && self.nodes[j].mode == RadioMode::Receive {
                // overlapping receptions destroy each other at this receiver
                let pending = std::mem::take(&mut self.nodes[j].pending_rx);
                for p in pending {
                    self.txs[p].accepted.retain(|&a| a != j);
                    self.txs[p].collided = true;
                }
                self.txs[idx].collided = true;
                self.mark_receiving(eng, t, j, idx, end);
                self.nodes[j].pending_rx.clear();
                self.trace(t, j, "collision", "");
                continue;
            }
            self.mark_receiving(eng, t, j, idx, end);
            self.txs[idx].accepted.push(j);
        }
    }

    fn mark_receiving(&mut self, eng: &mut Eng, t: SimTime, j: NodeId, idx: usize, end: SimTime) {
        if self.nodes[j].mode == RadioMode::Idle {
            self.set_mode(t, j, RadioMode::Receive, None);
        }
        if end > self.nodes[j].rx_until {
            self.nodes[j].rx_until = end;
        }
        self.nodes[j].pending_rx.push(idx);
        eng.schedule(end, Ev::RxEnd(j)).unwrap();
    }

    fn on_tx_end(&mut self, eng: &mut Eng, t: SimTime, idx: usize) {
        let sender = self.txs[idx].sender;
        if self.nodes[sender].mode == RadioMode::Transmit {
            self.set_mode(t, sender, RadioMode::Idle, None);
        }
        let accepted = std::mem::take(&mut self.txs[idx].accepted);
        for &j in &accepted {
            self.nodes[j].pending_rx.retain(|&p| p != idx);
        }
        // move the frame out; the Tx record keeps a placeholder
        let kind = std::mem::replace(&mut self.txs[idx].kind, TxKind::AtimAck { to: usize::MAX });
        match kind {
            TxKind::Atim { dest } => {
                for &j in &accepted {
                    self.on_atim_received(eng, t, j, sender, dest);
                }
            }
            TxKind::AtimAck { to } => {
                if accepted.contains(&to) && self.schedule.in_atim_window(t) {
                    let n = self.nodes[to].mac.mark_on_ack(sender);
                    if n > 0 {
                        self.trace(t, to, "mark", &format!("{n} frames for {sender}"));
                    }
                }
            }
            TxKind::Trigger { targets } => {
                // strong enough to reach a dozing radio: targets still in
                // range wake now, in time for the data frame queued behind
                let spos = self.nodes[sender].pos_at(t);
                for tgt in targets {
                    if self.nodes[tgt].alive()
                        && self.nodes[tgt].mode == RadioMode::Doze
                        && in_range(spos, self.nodes[tgt].pos_at(t), self.cfg.range_m)
                    {
                        self.set_mode(t, tgt, RadioMode::Idle, None);
                        self.trace(t, tgt, "wake", &format!("by {sender}"));
                    }
                }
            }
            TxKind::Routed(frame) => {
                for &j in &accepted {
                    self.fate_spawn(&frame);
                    self.deliver_routed(eng, t, j, sender, frame.clone());
                }
                let cause = if accepted.is_empty() && self.txs[idx].collided {
                    DropCause::Collision
                } else {
                    DropCause::Dieout
                };
                self.fate_end(&frame, cause);
            }
        }
    }

    fn on_rx_end(&mut self, t: SimTime, j: NodeId) {
        self.nodes[j].pending_rx.retain(|&p| self.txs[p].end > t);
        if self.nodes[j].mode == RadioMode::Receive && self.nodes[j].rx_until <= t {
            self.set_mode(t, j, RadioMode::Idle, None);
        }
    }

    // ---- PSM -------------------------------------------------------------

    fn on_interval_start(&mut self, eng: &mut Eng, t: SimTime) {
        let k = self.schedule.interval_index(t);
        // every node wakes for the ATIM window before any routing runs, so
        // a drained frame never sees a stale doze state
        for id in 0..self.nodes.len() {
            if self.nodes[id].alive() && self.nodes[id].mode == RadioMode::Doze {
                self.set_mode(t, id, RadioMode::Idle, None);
            }
        }
        for id in 0..self.nodes.len() {
            if !self.nodes[id].alive() {
                continue;
            }
            self.nodes[id].pledged = false;
            self.nodes[id].advertised = false;
            let dropped = self.nodes[id].mac.start_interval(self.cfg.mac_retry_max);
            for frame in dropped.retry_drops {
                self.trace(t, id, "drop", "mac-retry");
                self.fate_end(&frame, DropCause::Retry);
            }
            // packets queued while dozing get routed now so they can be
            // advertised in this window
            self.drain_pending(eng, t, id);
            let ads = self.nodes[id].mac.advertise();
            if !ads.is_empty() {
                self.nodes[id].advertised = true;
                let slot = SimTime((id as u64 % 64) * ATIM_SLOT_US);
                let at = t + slot;
                for dest in ads {
                    self.enqueue_ctrl_tx(eng, at, id, TxKind::Atim { dest });
                }
            }
        }
        eng.schedule(self.schedule.window_end(k), Ev::AtimWindowEnd).unwrap();
        let next = self.schedule.interval_start(k + 1);
        if next < self.sim_end {
            eng.schedule(next, Ev::IntervalStart).unwrap();
        }
    }

    fn on_atim_received(&mut self, eng: &mut Eng, t: SimTime, j: NodeId, from: NodeId, dest: MacDest) {
        if !self.schedule.in_atim_window(t) {
            self.trace(t, j, "drop", "atim-late");
            return;
        }
        match dest {
            MacDest::Broadcast => {
                self.nodes[j].pledged = true;
            }
            MacDest::Node(n) if n == j => {
                self.nodes[j].pledged = true;
                self.enqueue_ctrl_tx(eng, t, j, TxKind::AtimAck { to: from });
            }
            MacDest::Node(_) => {}
        }
    }

    fn on_atim_window_end(&mut self, eng: &mut Eng, t: SimTime) {
        let k = self.schedule.interval_index(t);
        let next_interval = self.schedule.interval_start(k + 1);
        // pass 1: sleep-or-stay decisions
        for id in 0..self.nodes.len() {
            if !self.nodes[id].alive() || self.nodes[id].mode == RadioMode::Doze {
                continue;
            }
            let n = &self.nodes[id];
            let forced = n.pledged
                || n.advertised
                || n.mac.has_marked()
                || !n.pending_app.is_empty()
                || n.tx_free_at > t
                || n.rx_until > t;
            if forced {
                continue;
            }
            let sleep = match self.protocol {
                // pure PSM: an uncommitted node always dozes
                Protocol::Gsp => SleepChoice::Sleep,
                Protocol::Aeerg => self.nodes[id].aeerg.sleep_decide(eng.stream("sleep")),
            };
            if sleep == SleepChoice::Sleep {
                self.set_mode(t, id, RadioMode::Doze, None);
            }
        }
        // pass 2: flush marked frames and drain deferred routing work
        for id in 0..self.nodes.len() {
            if !self.nodes[id].alive() || self.nodes[id].mode == RadioMode::Doze {
                continue;
            }
            let marked = self.nodes[id].mac.take_marked();
            for b in marked {
                let airtime = tx_duration(b.frame.bytes, self.cfg.rate_bps);
                let start = t.max(self.nodes[id].tx_free_at);
                if start + airtime > next_interval {
                    self.nodes[id].mac.requeue_unsent(b);
                    continue;
                }
                let (radius, power) = match b.dest {
                    MacDest::Broadcast => (self.cfg.range_m, self.power.p_tx),
                    MacDest::Node(d) => self.unicast_radius_power(t, id, d),
                };
                self.enqueue_data_tx(eng, t, id, b.frame, radius, power);
            }
            self.drain_pending(eng, t, id);
        }
    }

    /// Power-controlled radius toward a known destination, with headroom
    /// for movement since the neighbor tick.
    fn unicast_radius_power(&self, t: SimTime, from: NodeId, to: NodeId) -> (f64, f64) {
        let d = distance(self.nodes[from].pos_at(t), self.nodes[to].pos_at(t));
        let radius = (d + self.cfg.aeerg_power_margin_m).min(self.cfg.range_m);
        let power = tx_power_for_distance(radius, self.cfg.range_m, &self.power, self.cfg.path_loss_alpha)
            .unwrap_or(self.power.p_tx);
        (radius, power)
    }

    fn drain_pending(&mut self, eng: &mut Eng, t: SimTime, id: NodeId) {
        while let Some(frame) = self.nodes[id].pending_app.pop_front() {
            self.route_send(eng, t, id, frame, None, false);
        }
    }

    // ---- routing ---------------------------------------------------------

    /// Hand a frame (fresh from the application or being forwarded) to the
    /// protocol at `node`. The caller guarantees the node is awake.
    fn route_send(
        &mut self,
        eng: &mut Eng,
        t: SimTime,
        node: NodeId,
        frame: Frame,
        exclude: Option<NodeId>,
        held_once: bool,
    ) {
        match self.protocol {
            Protocol::Gsp => {
                if self.psm_on {
                    // pure PSM broadcasts are buffered and advertised
                    match self.nodes[node].mac.push(frame, MacDest::Broadcast, self.cfg.mac_buffer_cap) {
                        Ok(()) => {}
                        Err(f) => {
                            self.trace(t, node, "drop", "mac-buffer");
                            self.fate_end(&f, DropCause::Buffer);
                        }
                    }
                } else {
                    self.enqueue_data_tx(eng, t, node, frame, self.cfg.range_m, self.power.p_tx);
                }
            }
            Protocol::Aeerg => {
                // the B nearest neighbors are the forwarding set; any of
                // them found dozing is woken first by a full-power trigger,
                // then one reduced-power transmission reaches them all
                let (selected, dozing, far) = {
                    let n = &self.nodes[node];
                    let b = self.cfg.fixed_b.unwrap_or(n.aeerg.b);
                    let mut selected: Vec<(NodeId, f64)> = n
                        .table
                        .entries()
                        .iter()
                        .copied()
                        .filter(|&(id, _)| Some(id) != exclude)
                        .collect();
                    selected.truncate(b);
                    let far = selected.iter().map(|&(_, d)| d).fold(0.0f64, f64::max);
                    let dozing: Vec<NodeId> = selected
                        .iter()
                        .map(|&(id, _)| id)
                        .filter(|&id| self.psm_on && self.nodes[id].mode == RadioMode::Doze)
                        .collect();
                    (selected.into_iter().map(|(id, _)| id).collect::<Vec<_>>(), dozing, far)
                };
                if selected.is_empty() {
                    if held_once {
                        self.trace(t, node, "drop", "isolated");
                        self.fate_end(&frame, DropCause::Dieout);
                    } else {
                        // hold one neighbor tick, then give up if still alone
                        let tick = SimTime::from_secs_f64(self.cfg.neighbor_tick_s);
                        eng.schedule(t + tick, Ev::HoldRetry { node, frame }).unwrap();
                    }
                    return;
                }
                if !dozing.is_empty() {
                    self.enqueue_trigger_tx(eng, t, node, dozing);
                }
                let mut copy = frame;
                copy.targets = selected;
                let radius = (far + self.cfg.aeerg_power_margin_m).min(self.cfg.range_m);
                let power = tx_power_for_distance(
                    radius,
                    self.cfg.range_m,
                    &self.power,
                    self.cfg.path_loss_alpha,
                )
                .unwrap_or(self.power.p_tx);
                self.enqueue_data_tx(eng, t, node, copy, radius, power);
            }
        }
    }

    /// Process a physically received routed frame at `node`.
    fn deliver_routed(&mut self, eng: &mut Eng, t: SimTime, node: NodeId, from: NodeId, frame: Frame) {
        // AEERG: any forwarder of the flow that hears feedback applies it,
        // even on an overheard copy
        if self.protocol == Protocol::Aeerg {
            if let Payload::Feedback { d, window } = frame.payload {
                self.trace(t, node, "fbrx", &format!("flow={} d={d:.3}", frame.flow));
                self.apply_feedback(t, node, frame.flow, d, window);
            }
        }
        // physical reach: every node that decoded a copy of the data packet
        if self.cfg.record_detail && frame.payload == Payload::Data {
            self.reach.entry((frame.flow, frame.seq)).or_default().insert(node);
        }
        let is_target = frame.targets.is_empty() || frame.targets.contains(&node);
        if node == frame.dst {
            if !self.nodes[node].seen.insert(frame.route_id) {
                self.fate_end(&frame, DropCause::Dieout);
                return;
            }
            self.consume_at_destination(eng, t, node, &frame);
            if self.protocol == Protocol::Aeerg {
                // targeted forwarding terminates at the destination
                self.fate_end(&frame, DropCause::Dieout);
                return;
            }
            // gossip is destination-agnostic: the destination relays like
            // any other node
        } else {
            if self.protocol == Protocol::Aeerg && !is_target {
                // overheard only; does not poison later targeted forwarding
                self.fate_end(&frame, DropCause::Dieout);
                return;
            }
            if !self.nodes[node].seen.insert(frame.route_id) {
                self.fate_end(&frame, DropCause::Dieout);
                return;
            }
        }
        // relay
        let next_hops = frame.hops + 1;
        if next_hops > self.cfg.ttl {
            self.trace(t, node, "drop", "ttl");
            self.fate_end(&frame, DropCause::Ttl);
            return;
        }
        match self.protocol {
            Protocol::Gsp => {
                if !gossip_decide(&self.gossip, next_hops, eng.stream("gossip")) {
                    self.fate_end(&frame, DropCause::Dieout);
                    return;
                }
            }
            Protocol::Aeerg => {
                self.note_flow_send(t, node, frame.flow);
            }
        }
        let mut fwd = frame;
        fwd.hops = next_hops;
        fwd.targets.clear();
        self.route_send(eng, t, node, fwd, Some(from), false);
    }

    /// Mark `node` as actively transmitting for a flow — originating or
    /// relaying any of its frames (data, acks, feedback). The silence rule
    /// watches these nodes, so the reverse (ack/feedback) path adapts B the
    /// same way the data path does.
    fn note_flow_send(&mut self, t: SimTime, node: NodeId, flow: FlowId) {
        if self.protocol != Protocol::Aeerg {
            return;
        }
        let fs = self.nodes[node].forward_state.entry(flow).or_default();
        fs.last_forward = t;
        if fs.last_feedback == SimTime::ZERO {
            fs.last_feedback = t; // grace period starts at first send
        }
    }

    /// Evidence at `node` that the flow's loop is working (for a
    /// destination: fresh data keeps arriving, so its acks/feedback are
    /// getting through). Resets the silence clock.
    fn note_flow_progress(&mut self, t: SimTime, node: NodeId, flow: FlowId) {
        if self.protocol != Protocol::Aeerg {
            return;
        }
        let fs = self.nodes[node].forward_state.entry(flow).or_default();
        fs.last_feedback = t;
    }

    fn check_b_range(&mut self, id: NodeId) {
        let b = self.nodes[id].aeerg.b;
        if b < 1 || b > self.nodes[id].table.len().max(1) {
            self.b_range_violations += 1;
        }
    }

    fn apply_feedback(&mut self, t: SimTime, node: NodeId, flow: FlowId, d: f64, window: u32) {
        let table_len = self.nodes[node].table.len();
        let is_source = self.flows.get(flow as usize).map(|f| f.src == node).unwrap_or(false);
        let n = &mut self.nodes[node];
        let involved = is_source || n.forward_state.contains_key(&flow);
        if !involved {
            return;
        }
        let fs = n.forward_state.entry(flow).or_default();
        if fs.last_fb_window == Some(window) {
            return; // already applied this window's feedback
        }
        fs.last_fb_window = Some(window);
        fs.last_feedback = t;
        n.aeerg.adjust_b(d.clamp(0.0, 1.0), table_len);
        let b = n.aeerg.b;
        self.check_b_range(node);
        self.trace(t, node, "feedback", &format!("flow={flow} d={d:.3} b={b}"));
    }

    fn consume_at_destination(&mut self, eng: &mut Eng, t: SimTime, node: NodeId, frame: &Frame) {
        match frame.payload {
            Payload::Data => {
                let flow_idx = frame.flow as usize;
                if matches!(self.flows[flow_idx].state, FlowState::Cbr(_)) {
                    let newly = self.ledger.delivered(
                        frame.flow,
                        frame.seq,
                        frame.origin_ts,
                        t,
                        frame.bytes,
                        self.warmup,
                    );
                    if newly {
                        self.trace(t, node, "deliver", &format!("flow={} seq={}", frame.flow, frame.seq));
                        self.app_deliveries.entry(frame.flow).or_default().push(frame.seq);
                        self.feedback_note_delivery(eng, t, frame.flow, frame.seq);
                        self.note_flow_progress(t, node, frame.flow);
                    }
                } else {
                    let (was_new, released, ack) = {
                        let FlowState::Tcp { rx, .. } = &mut self.flows[flow_idx].state else {
                            unreachable!()
                        };
                        let was_new = rx.is_new(frame.seq);
                        let released = rx.on_data(frame.seq, frame.origin_ts);
                        (was_new, released, rx.ack_value())
                    };
                    // feedback counts first-time arrivals: the network's
                    // delivery performance, not the in-order release point
                    if was_new {
                        self.feedback_note_delivery(eng, t, frame.flow, frame.seq);
                        // fresh data arriving means the acks are flowing
                        self.note_flow_progress(t, node, frame.flow);
                    }
                    for (seq, origin) in released {
                        if self.ledger.delivered(frame.flow, seq, origin, t, frame.bytes, self.warmup) {
                            self.trace(t, node, "deliver", &format!("flow={} seq={seq}", frame.flow));
                            self.app_deliveries.entry(frame.flow).or_default().push(seq);
                        }
                    }
                    // cumulative ack rides back through the same protocol
                    let src = self.flows[flow_idx].src;
                    let ack_frame =
                        self.new_frame(frame.flow, ack, Payload::TcpAck { cum: ack }, node, src, t, TCP_ACK_BYTES);
                    self.note_flow_send(t, node, frame.flow);
                    self.inject_at_source(eng, t, node, ack_frame);
                }
            }
            Payload::TcpAck { cum } => {
                let flow_idx = frame.flow as usize;
                let cleared: Vec<u32> = match &mut self.flows[flow_idx].state {
                    FlowState::Tcp { tx, .. } => {
                        let before = tx.inflight_seqs();
                        if tx.on_ack(t, cum) > 0 {
                            before.into_iter().filter(|&s| s < cum).collect()
                        } else {
                            Vec::new()
                        }
                    }
                    FlowState::Cbr(_) => Vec::new(),
                };
                if !cleared.is_empty() {
                    for s in cleared {
                        // the sender-side standing copy retires
                        self.ledger.copy_ended(frame.flow, s, DropCause::Dieout);
                    }
                    // an advancing ack is loop-progress evidence at the source
                    self.note_flow_progress(t, node, frame.flow);
                    self.tcp_fill_window(eng, t, frame.flow);
                }
            }
            Payload::Feedback { .. } => {
                // adjustment already applied in deliver_routed
            }
        }
    }

    // ---- AEERG feedback windows -------------------------------------------

    fn feedback_note_delivery(&mut self, eng: &mut Eng, t: SimTime, flow: FlowId, seq: u32) {
        if self.protocol != Protocol::Aeerg {
            return;
        }
        let f = &mut self.flows[flow as usize];
        f.fb.any_traffic = true;
        f.fb.received += 1;
        if seq + 1 > f.fb.high_seq {
            f.fb.high_seq = seq + 1;
        }
        if f.fb.received >= self.cfg.feedback_window_pkts {
            self.close_feedback_window(eng, t, flow);
        }
    }

    fn close_feedback_window(&mut self, eng: &mut Eng, t: SimTime, flow: FlowId) {
        let f = &mut self.flows[flow as usize];
        if !f.fb.any_traffic {
            return;
        }
        let sent = f.fb.high_seq.saturating_sub(f.fb.high_seq_at_open);
        let received = f.fb.received;
        let d = destination_feedback(sent.max(received), received).min(1.0);
        let window = f.fb.window_id;
        f.fb.window_id += 1;
        f.fb.received = 0;
        f.fb.high_seq_at_open = f.fb.high_seq;
        let (src, dst) = (f.src, f.dst);
        let fb = self.new_frame(flow, window, Payload::Feedback { d, window }, dst, src, t, FEEDBACK_BYTES);
        self.note_flow_send(t, dst, flow);
        self.inject_at_source(eng, t, dst, fb);
        self.trace(t, dst, "fbwindow", &format!("flow={flow} d={d:.3}"));
    }

    fn on_feedback_close(&mut self, eng: &mut Eng, t: SimTime, flow: FlowId) {
        self.close_feedback_window(eng, t, flow);
        let next = t + SimTime::from_secs_f64(self.cfg.feedback_window_s);
        if next < self.sim_end {
            eng.schedule(next, Ev::FeedbackClose(flow)).unwrap();
        }
    }

    /// Sources and forwarders that stop hearing feedback for an active flow
    /// treat the silence as D = 0 and widen. The check runs per beacon, so
    /// once the two-window silence threshold is crossed B keeps ramping every
    /// beacon interval until feedback is heard again.
    fn on_silence_tick(&mut self, eng: &mut Eng, t: SimTime) {
        let window = SimTime::from_secs_f64(self.cfg.feedback_window_s);
        let horizon = SimTime(2 * window.as_micros());
        for id in 0..self.nodes.len() {
            if !self.nodes[id].alive() {
                continue;
            }
            let table_len = self.nodes[id].table.len();
            let flows: Vec<FlowId> = self.nodes[id].forward_state.keys().copied().collect();
            for flow in flows {
                let fs = self.nodes[id].forward_state.get(&flow).copied().unwrap_or_default();
                let active = t.saturating_sub(fs.last_forward) <= horizon && fs.last_forward > SimTime::ZERO;
                let silent = t.saturating_sub(fs.last_feedback) >= horizon;
                if active && silent {
                    self.nodes[id].aeerg.adjust_b(0.0, table_len);
                    self.check_b_range(id);
                    let fs = self.nodes[id].forward_state.get_mut(&flow).unwrap();
                    fs.last_fb_window = None;
                    let b = self.nodes[id].aeerg.b;
                    self.trace(t, id, "silence", &format!("flow={flow} b={b}"));
                }
            }
        }
        let next = t + SimTime::from_millis(self.cfg.beacon_interval_ms);
        if next < self.sim_end {
            eng.schedule(next, Ev::SilenceTick).unwrap();
        }
    }

    // ---- traffic -----------------------------------------------------------

    fn new_frame(
        &mut self,
        flow: FlowId,
        seq: u32,
        payload: Payload,
        src: NodeId,
        dst: NodeId,
        origin_ts: SimTime,
        bytes: u64,
    ) -> Frame {
        let route_id = self.next_route_id;
        self.next_route_id += 1;
        Frame { route_id, flow, seq, payload, src, dst, origin_ts, hops: 0, bytes, targets: vec![] }
    }

    /// A frame created at `node` enters the network: routed now if the node
    /// is awake and outside the ATIM window, deferred otherwise.
    fn inject_at_source(&mut self, eng: &mut Eng, t: SimTime, node: NodeId, frame: Frame) {
        if !self.nodes[node].alive() {
            self.fate_end(&frame, DropCause::Dieout);
            return;
        }
        if self.nodes[node].mode == RadioMode::Doze || (self.psm_on && self.schedule.in_atim_window(t)) {
            self.nodes[node].pending_app.push_back(frame);
            return;
        }
        self.route_send(eng, t, node, frame, None, false);
    }

    fn on_cbr_emit(&mut self, eng: &mut Eng, t: SimTime, flow: FlowId) {
        let f = &mut self.flows[flow as usize];
        let (src, dst) = (f.src, f.dst);
        let FlowState::Cbr(cbr) = &mut f.state else { return };
        let bytes = cbr.pkt_bytes;
        let (seq, next) = cbr.emit(t);
        if let Some(n) = next {
            eng.schedule(n, Ev::CbrEmit(flow)).unwrap();
        }
        self.ledger.originate(flow, seq);
        self.note_flow_send(t, src, flow);
        let frame = self.new_frame(flow, seq, Payload::Data, src, dst, t, bytes);
        if self.cfg.record_detail {
            self.reach.entry((flow, seq)).or_default().insert(src);
        }
        self.trace(t, src, "emit", &format!("flow={flow} seq={seq}"));
        self.inject_at_source(eng, t, src, frame);
    }

    fn tcp_fill_window(&mut self, eng: &mut Eng, t: SimTime, flow: FlowId) {
        let f = &mut self.flows[flow as usize];
        let (src, dst) = (f.src, f.dst);
        let FlowState::Tcp { tx, .. } = &mut f.state else { return };
        let bytes = tx.pkt_bytes;
        let (emissions, again) = tx.send_window(t);
        if let Some(at) = again {
            if at < self.sim_end {
                eng.schedule(at, Ev::TcpPace(flow)).unwrap();
            }
        }
        for em in emissions {
            self.ledger.originate(flow, em.seq);
            // the sender's retransmission entry counts as a standing copy
            self.ledger.copy_spawned(flow, em.seq);
            self.note_flow_send(t, src, flow);
            eng.schedule(em.timeout_at, Ev::TcpTimeout { flow, seq: em.seq, epoch: em.epoch })
                .unwrap();
            let frame = self.new_frame(flow, em.seq, Payload::Data, src, dst, em.origin_ts, bytes);
            self.trace(t, src, "emit", &format!("flow={flow} seq={}", em.seq));
            self.inject_at_source(eng, t, src, frame);
        }
    }

    fn on_tcp_timeout(&mut self, eng: &mut Eng, t: SimTime, flow: FlowId, seq: u32, epoch: u64) {
        let f = &mut self.flows[flow as usize];
        let (src, dst) = (f.src, f.dst);
        let FlowState::Tcp { tx, .. } = &mut f.state else { return };
        let bytes = tx.pkt_bytes;
        match tx.on_timeout(t, seq, epoch) {
            TimeoutOutcome::Ignored => {}
            TimeoutOutcome::Retransmit(em) => {
                eng.schedule(em.timeout_at, Ev::TcpTimeout { flow, seq: em.seq, epoch: em.epoch })
                    .unwrap();
                self.ledger.copy_spawned(flow, em.seq);
                self.note_flow_send(t, src, flow);
                let frame = self.new_frame(flow, em.seq, Payload::Data, src, dst, em.origin_ts, bytes);
                self.trace(t, src, "retx", &format!("flow={flow} seq={}", em.seq));
                self.inject_at_source(eng, t, src, frame);
            }
            TimeoutOutcome::Abort { pending } => {
                self.trace(t, src, "abort", &format!("flow={flow}"));
                for s in pending {
                    self.ledger.copy_ended(flow, s, DropCause::Retry);
                }
            }
        }
    }

    // ---- mobility / neighbor discovery --------------------------------------

    fn on_neighbor_tick(&mut self, eng: &mut Eng, t: SimTime) {
        let region = self.region;
        for n in self.nodes.iter_mut() {
            n.motion.advance_to(t, eng.stream("mobility"), &region);
        }
        let pos: Vec<(f64, f64)> = self.nodes.iter().map(|n| n.pos_at(t)).collect();
        for i in 0..self.nodes.len() {
            if !self.nodes[i].alive() {
                self.nodes[i].table.rebuild(Vec::new());
                continue;
            }
            let mut entries = Vec::new();
            for (j, &pj) in pos.iter().enumerate() {
                if j == i || !self.nodes[j].alive() {
                    continue;
                }
                let d = distance(pos[i], pj);
                if d <= self.cfg.range_m {
                    entries.push((j, d));
                }
            }
            self.nodes[i].table.rebuild(entries);
            let len = self.nodes[i].table.len();
            self.nodes[i].aeerg.clamp_to_table(len);
            self.check_b_range(i);
        }
        let next = t + SimTime::from_secs_f64(self.cfg.neighbor_tick_s);
        if next < self.sim_end {
            eng.schedule(next, Ev::NeighborTick).unwrap();
        }
    }

    fn handle(&mut self, eng: &mut Eng, t: SimTime, ev: Ev) {
        match ev {
            Ev::NeighborTick => self.on_neighbor_tick(eng, t),
            Ev::IntervalStart => self.on_interval_start(eng, t),
            Ev::AtimWindowEnd => self.on_atim_window_end(eng, t),
            Ev::TxBegin(i) => self.on_tx_begin(eng, t, i),
            Ev::TxEnd(i) => self.on_tx_end(eng, t, i),
            Ev::RxEnd(j) => self.on_rx_end(t, j),
            Ev::CbrEmit(f) => self.on_cbr_emit(eng, t, f),
            Ev::TcpStart(f) | Ev::TcpPace(f) => self.tcp_fill_window(eng, t, f),
            Ev::TcpTimeout { flow, seq, epoch } => self.on_tcp_timeout(eng, t, flow, seq, epoch),
            Ev::FeedbackClose(f) => self.on_feedback_close(eng, t, f),
            Ev::SilenceTick => self.on_silence_tick(eng, t),
            Ev::HoldRetry { node, frame } => {
                if self.nodes[node].mode == RadioMode::Doze {
                    self.nodes[node].pending_app.push_back(frame);
                } else {
                    self.route_send(eng, t, node, frame, None, true);
                }
            }
        }
    }
}

/// Execute one scenario and return the reconciled report.
pub fn run_one(cfg: &ScenarioConfig) -> Result<RunReport, RunError> {
    run_one_traced(cfg, None)
}

/// Like [`run_one`], with an optional event-trace sink
/// (`t_us<TAB>node<TAB>kind<TAB>detail` per line).
pub fn run_one_traced(
    cfg: &ScenarioConfig,
    trace: Option<Box<dyn Write>>,
) -> Result<RunReport, RunError> {
    cfg.validate()?;
    let mut eng: Eng = Engine::new(cfg.seed);
    let region = Region::new(cfg.area_w_m, cfg.area_h_m);
    let pause = SimTime::from_secs_f64(cfg.pause_s);
    let sim_end = cfg.sim_end();

    let nodes: Vec<Node> = (0..cfg.n_nodes)
        .map(|i| {
            let motion = match &cfg.fixed_positions {
                Some(pos) => MotionState {
                    origin: pos[i],
                    waypoint: pos[i],
                    depart_at: SimTime::ZERO,
                    speed_mps: 0.0,
                    pause,
                },
                None => MotionState::initial(eng.stream("mobility"), &region, cfg.speed_mps, pause),
            };
            Node {
                motion,
                mode: RadioMode::Idle,
                mode_since: SimTime::ZERO,
                tx_watts: cfg.p_tx_w,
                energy: EnergyLedger::new(cfg.initial_energy_j),
                rx_until: SimTime::ZERO,
                tx_free_at: SimTime::ZERO,
                channel_busy_until: SimTime::ZERO,
                table: NeighborTable::default(),
                aeerg: AeergState::new(cfg.rt, cfg.p_sleep),
                mac: MacBuffer::default(),
                pending_app: VecDeque::new(),
                seen: HashSet::new(),
                pledged: false,
                advertised: false,
                pending_rx: Vec::new(),
                forward_state: BTreeMap::new(),
            }
        })
        .collect();

    // flow endpoints: disjoint random pairs, or the fixed list
    let pairs: Vec<(NodeId, NodeId)> = match &cfg.fixed_flows {
        Some(p) => p.clone(),
        None => {
            use rand::seq::SliceRandom;
            let want = cfg.flows.min(cfg.n_nodes / 2);
            let mut ids: Vec<NodeId> = (0..cfg.n_nodes).collect();
            ids.shuffle(eng.stream("traffic"));
            (0..want).map(|k| (ids[2 * k], ids[2 * k + 1])).collect()
        }
    };

    let flow_start = SimTime::from_secs_f64(cfg.flow_start_s);
    let flows: Vec<Flow> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(src, dst))| {
            let state = match cfg.traffic {
                TrafficKind::Cbr => FlowState::Cbr(CbrFlow::new(
                    src,
                    dst,
                    cfg.cbr_pkt_bytes,
                    SimTime::from_secs_f64(1.0 / cfg.cbr_rate_pps),
                    flow_start,
                    sim_end,
                )),
                TrafficKind::Tcp => FlowState::Tcp {
                    tx: TcpLiteFlow::new(
                        src,
                        dst,
                        cfg.cbr_pkt_bytes,
                        cfg.tcp_window,
                        SimTime::from_millis(cfg.tcp_rto_min_ms),
                        SimTime::from_secs(cfg.tcp_rto_max_s),
                        cfg.tcp_max_retx,
                        cfg.tcp_total_pkts,
                        SimTime::from_millis(cfg.tcp_emit_interval_ms),
                    ),
                    rx: TcpReceiver::default(),
                },
            };
            Flow {
                id: i as FlowId,
                src,
                dst,
                state,
                fb: FeedbackWindow {
                    window_id: 0,
                    received: 0,
                    high_seq: 0,
                    high_seq_at_open: 0,
                    any_traffic: false,
                },
            }
        })
        .collect();

    let mut world = World {
        protocol: cfg.protocol,
        psm_on: cfg.psm_enabled(),
        schedule: PsmSchedule::new(
            SimTime::from_millis(cfg.beacon_interval_ms),
            SimTime::from_millis(cfg.atim_window_ms),
        ),
        power: cfg.power_table(),
        gossip: GossipConfig { p_gossip: cfg.p_gossip, hops_forced: cfg.hops_forced },
        region,
        sim_end,
        warmup: SimTime::from_secs_f64(cfg.warmup_s),
        nodes,
        flows,
        txs: Vec::new(),
        ledger: PacketLedger::default(),
        next_route_id: 0,
        trace,
        reach: BTreeMap::new(),
        app_deliveries: BTreeMap::new(),
        b_range_violations: 0,
        cfg: cfg.clone(),
    };

    eng.schedule(SimTime::ZERO, Ev::NeighborTick).unwrap();
    if world.psm_on {
        eng.schedule(SimTime::ZERO, Ev::IntervalStart).unwrap();
    }
    for i in 0..world.flows.len() {
        let fid = i as FlowId;
        match cfg.traffic {
            TrafficKind::Cbr => {
                if let FlowState::Cbr(c) = &world.flows[i].state {
                    if let Some(t0) = c.first_emission() {
                        eng.schedule(t0, Ev::CbrEmit(fid)).unwrap();
                    }
                }
            }
            TrafficKind::Tcp => {
                eng.schedule(flow_start, Ev::TcpStart(fid)).unwrap();
            }
        }
        if cfg.protocol == Protocol::Aeerg {
            let w = SimTime::from_secs_f64(cfg.feedback_window_s);
            eng.schedule(flow_start + w, Ev::FeedbackClose(fid)).unwrap();
        }
    }
    if cfg.protocol == Protocol::Aeerg {
        let w = SimTime::from_secs_f64(cfg.feedback_window_s);
        eng.schedule(flow_start + w, Ev::SilenceTick).unwrap();
    }

    if cfg.record_detail {
        world.install_reach_recording();
    }

    let executed = eng.run(sim_end, |eng, t, ev| world.handle(eng, t, ev));

    // settle the energy ledgers to the horizon
    for id in 0..world.nodes.len() {
        world.accrue_to(id, sim_end);
    }

    // invariant: B stayed within [1, max(1, |table|)] — enforced by
    // construction in adjust_b/clamp_to_table; assert as a backstop
    for n in &world.nodes {
        debug_assert!(n.aeerg.b >= 1 && n.aeerg.b <= n.table.len().max(1));
    }

    let audits = world.ledger.reconcile()?;
    let elapsed = sim_end.as_micros();
    for (i, n) in world.nodes.iter().enumerate() {
        let total = n.energy.total_micros();
        if total.abs_diff(elapsed) > 1 {
            return Err(ReconcileError::TimeMismatch { node: i, mode_us: total, elapsed_us: elapsed }
                .into());
        }
        let recomputed = n.energy.recompute();
        if (recomputed - n.energy.consumed()).abs() > 1e-9 {
            return Err(ReconcileError::EnergyMismatch {
                node: i,
                recomputed,
                running: n.energy.consumed(),
            }
            .into());
        }
    }

    let mut agg = FlowCounters::default();
    let mut drops: BTreeMap<DropCause, u64> = BTreeMap::new();
    let mut inflight = 0;
    for (_, c) in world.ledger.all_counters() {
        agg.sent += c.sent;
        agg.received += c.received;
        agg.delay_sum_s += c.delay_sum_s;
        agg.bytes_received += c.bytes_received;
        agg.measured_received += c.measured_received;
        agg.measured_delay_sum_s += c.measured_delay_sum_s;
        agg.measured_bytes += c.measured_bytes;
    }
    for a in audits.values() {
        inflight += a.inflight;
        for (&cause, &n) in &a.drops {
            *drops.entry(cause).or_default() += n;
        }
    }
    let duration = cfg.sim_time_s - cfg.warmup_s;
    let energy_j: f64 = world.nodes.iter().map(|n| n.energy.consumed()).sum();
    let row = MetricsRow {
        protocol: cfg.protocol,
        traffic: cfg.traffic.label(),
        nodes: cfg.n_nodes,
        sim_time_s: cfg.sim_time_s,
        seed: cfg.seed,
        pdr: pdr(&agg),
        avg_delay_ms: avg_delay_s(&agg) * 1e3,
        throughput_bps: throughput_bps(&agg, duration),
        energy_j,
        drops,
        sent: agg.sent,
        received: agg.received,
        inflight,
    };

    let flow_aborted = world
        .flows
        .iter()
        .map(|f| {
            let aborted = matches!(&f.state, FlowState::Tcp { tx, .. } if tx.aborted);
            (f.id, aborted)
        })
        .collect();

    Ok(RunReport {
        row,
        audits,
        node_ledgers: world.nodes.into_iter().map(|n| n.energy).collect(),
        executed_events: executed,
        reach: world.reach,
        app_deliveries: world.app_deliveries,
        flow_aborted,
        b_range_violations: world.b_range_violations,
    })
}

impl World {
    fn install_reach_recording(&mut self) {
        // reach sets are created lazily per data packet; pre-create for
        // CBR flows so even undelivered packets appear
        let expected: Vec<(FlowId, u64)> = self
            .flows
            .iter()
            .map(|f| {
                let count = match &f.state {
                    FlowState::Cbr(c) => c.expected_count(),
                    FlowState::Tcp { tx, .. } => tx.total_pkts as u64,
                };
                (f.id, count)
            })
            .collect();
        for (flow, count) in expected {
            for seq in 0..count {
                self.reach.insert((flow, seq as u32), BTreeSet::new());
            }
        }
    }
}
