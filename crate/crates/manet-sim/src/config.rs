//! Scenario configuration: a flat `key = value` format with `#` comments,
//! CLI-style overrides, validation that reports every bad key at once, and
//! an echo of the effective configuration for output-file provenance.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::engine::SimTime;
use crate::radio::PowerTable;
use crate::routing::Protocol;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrafficKind {
    Cbr,
    Tcp,
}

impl TrafficKind {
    pub fn label(self) -> &'static str {
        match self {
            TrafficKind::Cbr => "cbr",
            TrafficKind::Tcp => "tcp",
        }
    }
}

/// Whether nodes run the power-save MAC. `Auto` resolves to on for both
/// protocols; `Off` keeps every node awake (energy baselines, oracles).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsmMode {
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    // region / mobility
    pub area_w_m: f64,
    pub area_h_m: f64,
    pub speed_mps: f64,
    pub pause_s: f64,
    pub neighbor_tick_s: f64,

    // radio / energy
    pub range_m: f64,
    pub rate_bps: u64,
    pub p_tx_w: f64,
    pub p_rx_w: f64,
    pub p_idle_w: f64,
    pub p_doze_w: f64,
    pub path_loss_alpha: f64,
    pub initial_energy_j: f64,

    // MAC / PSM
    pub beacon_interval_ms: u64,
    pub atim_window_ms: u64,
    pub mac_retry_max: u32,
    pub mac_buffer_cap: usize,
    pub collisions: bool,
    pub psm: PsmMode,

    // routing
    pub protocol: Protocol,
    pub p_gossip: f64,
    pub hops_forced: u32,
    pub p_sleep: f64,
    pub rt: f64,
    pub feedback_window_pkts: u32,
    pub feedback_window_s: f64,
    pub ttl: u32,
    /// Power-control headroom added to the farthest selected neighbor's
    /// distance, covering position drift between neighbor ticks.
    pub aeerg_power_margin_m: f64,

    // traffic
    pub traffic: TrafficKind,
    pub cbr_pkt_bytes: u64,
    pub cbr_rate_pps: f64,
    pub tcp_window: usize,
    pub tcp_rto_min_ms: u64,
    pub tcp_rto_max_s: u64,
    pub tcp_max_retx: u32,
    pub tcp_total_pkts: u32,
    /// Application-limited pacing for the reliable flow; 0 = window-limited.
    pub tcp_emit_interval_ms: u64,
    pub flows: usize,

    // harness
    pub n_nodes: usize,
    pub sim_time_s: f64,
    pub seed: u64,
    pub runs_per_point: usize,
    pub warmup_s: f64,
    /// Per-reception loss probability for fault-injection tests.
    pub fault_loss_prob: f64,

    // test-harness knobs, not exposed through the config file
    pub fixed_positions: Option<Vec<(f64, f64)>>,
    pub fixed_flows: Option<Vec<(usize, usize)>>,
    pub flow_start_s: f64,
    pub record_detail: bool,
    /// Pin every node's active-neighbor count B, bypassing feedback control.
    pub fixed_b: Option<usize>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            area_w_m: 600.0,
            area_h_m: 400.0,
            speed_mps: 20.0,
            pause_s: 10.0,
            neighbor_tick_s: 1.0,
            range_m: 250.0,
            rate_bps: 2_000_000,
            p_tx_w: 1.4,
            p_rx_w: 1.0,
            p_idle_w: 0.7,
            p_doze_w: 0.045,
            path_loss_alpha: 2.0,
            initial_energy_j: 1000.0,
            beacon_interval_ms: 100,
            atim_window_ms: 20,
            mac_retry_max: 4,
            mac_buffer_cap: 64,
            collisions: false,
            psm: PsmMode::Auto,
            protocol: Protocol::Gsp,
            p_gossip: 0.7,
            hops_forced: 1,
            p_sleep: 0.2,
            rt: 0.9,
            feedback_window_pkts: 20,
            feedback_window_s: 2.0,
            ttl: 32,
            aeerg_power_margin_m: 25.0,
            traffic: TrafficKind::Cbr,
            cbr_pkt_bytes: 512,
            cbr_rate_pps: 4.0,
            tcp_window: 8,
            tcp_rto_min_ms: 200,
            tcp_rto_max_s: 60,
            tcp_max_retx: 8,
            tcp_total_pkts: 0,
            tcp_emit_interval_ms: 0,
            flows: 10,
            n_nodes: 50,
            sim_time_s: 100.0,
            seed: 1,
            runs_per_point: 10,
            warmup_s: 5.0,
            fault_loss_prob: 0.0,
            fixed_positions: None,
            fixed_flows: None,
            flow_start_s: 0.0,
            record_detail: false,
            fixed_b: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse failed:\n{0}")]
    Parse(String),
    #[error("config validation failed:\n{0}")]
    Invalid(String),
}

impl ScenarioConfig {
    /// Effective PSM switch after resolving `auto`. Both protocols run on
    /// the power-save MAC by default; `off` is the all-awake configuration
    /// used for energy baselines and static oracles.
    pub fn psm_enabled(&self) -> bool {
        match self.psm {
            PsmMode::On => true,
            PsmMode::Off => false,
            PsmMode::Auto => true,
        }
    }

    pub fn power_table(&self) -> PowerTable {
        PowerTable {
            p_tx: self.p_tx_w,
            p_rx: self.p_rx_w,
            p_idle: self.p_idle_w,
            p_doze: self.p_doze_w,
        }
    }

    pub fn sim_end(&self) -> SimTime {
        SimTime::from_secs_f64(self.sim_time_s)
    }

    /// Parse a flat `key = value` file body and apply it over `self`.
    pub fn apply_str(&mut self, body: &str) -> Result<(), ConfigError> {
        let mut errors = String::new();
        for (lineno, raw) in body.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                let _ = writeln!(errors, "line {}: expected `key = value`", lineno + 1);
                continue;
            };
            if let Err(e) = self.set(key.trim(), value.trim()) {
                let _ = writeln!(errors, "line {}: {}", lineno + 1, e);
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Parse(errors.trim_end().to_string()))
        }
    }

    /// Set one key from its string form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn f64v(v: &str) -> Result<f64, String> {
            v.parse().map_err(|_| format!("not a number: `{v}`"))
        }
        fn u64v(v: &str) -> Result<u64, String> {
            v.parse().map_err(|_| format!("not an integer: `{v}`"))
        }
        fn usizev(v: &str) -> Result<usize, String> {
            v.parse().map_err(|_| format!("not an integer: `{v}`"))
        }
        fn u32v(v: &str) -> Result<u32, String> {
            v.parse().map_err(|_| format!("not an integer: `{v}`"))
        }
        fn boolv(v: &str) -> Result<bool, String> {
            match v {
                "on" | "true" | "1" | "yes" => Ok(true),
                "off" | "false" | "0" | "no" => Ok(false),
                _ => Err(format!("expected on/off: `{v}`")),
            }
        }
        match key {
            "area_w_m" => self.area_w_m = f64v(value)?,
            "area_h_m" => self.area_h_m = f64v(value)?,
            "speed_mps" => self.speed_mps = f64v(value)?,
            "pause_s" => self.pause_s = f64v(value)?,
            "neighbor_tick_s" => self.neighbor_tick_s = f64v(value)?,
            "range_m" => self.range_m = f64v(value)?,
            "rate_bps" => self.rate_bps = u64v(value)?,
            "p_tx_w" => self.p_tx_w = f64v(value)?,
            "p_rx_w" => self.p_rx_w = f64v(value)?,
            "p_idle_w" => self.p_idle_w = f64v(value)?,
            "p_doze_w" => self.p_doze_w = f64v(value)?,
            "path_loss_alpha" => self.path_loss_alpha = f64v(value)?,
            "initial_energy_j" => self.initial_energy_j = f64v(value)?,
            "beacon_interval_ms" => self.beacon_interval_ms = u64v(value)?,
            "atim_window_ms" => self.atim_window_ms = u64v(value)?,
            "mac_retry_max" => self.mac_retry_max = u32v(value)?,
            "mac_buffer_cap" => self.mac_buffer_cap = usizev(value)?,
            "collisions" => self.collisions = boolv(value)?,
            "psm" => {
                self.psm = match value {
                    "auto" => PsmMode::Auto,
                    "on" => PsmMode::On,
                    "off" => PsmMode::Off,
                    _ => return Err(format!("psm must be auto/on/off, got `{value}`")),
                }
            }
            "protocol" => {
                self.protocol = match value {
                    "gsp" => Protocol::Gsp,
                    "aeerg" => Protocol::Aeerg,
                    _ => return Err(format!("protocol must be gsp or aeerg, got `{value}`")),
                }
            }
            "p_gossip" => self.p_gossip = f64v(value)?,
            "hops_forced" => self.hops_forced = u32v(value)?,
            "p_sleep" => self.p_sleep = f64v(value)?,
            "rt" => self.rt = f64v(value)?,
            "feedback_window_pkts" => self.feedback_window_pkts = u32v(value)?,
            "feedback_window_s" => self.feedback_window_s = f64v(value)?,
            "ttl" => self.ttl = u32v(value)?,
            "aeerg_power_margin_m" => self.aeerg_power_margin_m = f64v(value)?,
            "traffic" => {
                self.traffic = match value {
                    "cbr" => TrafficKind::Cbr,
                    "tcp" => TrafficKind::Tcp,
                    _ => return Err(format!("traffic must be cbr or tcp, got `{value}`")),
                }
            }
            "cbr_pkt_bytes" => self.cbr_pkt_bytes = u64v(value)?,
            "cbr_rate_pps" => self.cbr_rate_pps = f64v(value)?,
            "tcp_window" => self.tcp_window = usizev(value)?,
            "tcp_rto_min_ms" => self.tcp_rto_min_ms = u64v(value)?,
            "tcp_rto_max_s" => self.tcp_rto_max_s = u64v(value)?,
            "tcp_max_retx" => self.tcp_max_retx = u32v(value)?,
            "tcp_total_pkts" => self.tcp_total_pkts = u32v(value)?,
            "tcp_emit_interval_ms" => self.tcp_emit_interval_ms = u64v(value)?,
            "flows" => self.flows = usizev(value)?,
            "n_nodes" => self.n_nodes = usizev(value)?,
            "sim_time_s" => self.sim_time_s = f64v(value)?,
            "seed" => self.seed = u64v(value)?,
            "runs_per_point" => self.runs_per_point = usizev(value)?,
            "warmup_s" => self.warmup_s = f64v(value)?,
            "fault_loss_prob" => self.fault_loss_prob = f64v(value)?,
            // diagnostic: pin B instead of letting feedback drive it
            "fixed_b" => {
                self.fixed_b = match u64v(value)? {
                    0 => None,
                    b => Some(b as usize),
                }
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Validate ranges; reports every bad key, not just the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = String::new();
        let mut bad = |msg: String| {
            let _ = writeln!(errors, "{msg}");
        };
        if self.area_w_m <= 0.0 || self.area_h_m <= 0.0 {
            bad("area_w_m/area_h_m: region must have positive extent".into());
        }
        if self.speed_mps < 0.0 {
            bad("speed_mps: must be >= 0".into());
        }
        if self.pause_s < 0.0 {
            bad("pause_s: must be >= 0".into());
        }
        if self.neighbor_tick_s <= 0.0 {
            bad("neighbor_tick_s: must be > 0".into());
        }
        if self.range_m <= 0.0 {
            bad("range_m: must be > 0".into());
        }
        if self.rate_bps == 0 {
            bad("rate_bps: channel rate must be > 0".into());
        }
        if self.power_table().validate().is_err() {
            bad("p_*_w: need p_tx >= p_rx >= p_idle > p_doze >= 0".into());
        }
        if self.path_loss_alpha <= 0.0 {
            bad("path_loss_alpha: must be > 0".into());
        }
        if self.initial_energy_j <= 0.0 {
            bad("initial_energy_j: must be > 0".into());
        }
        if self.atim_window_ms == 0 || self.atim_window_ms >= self.beacon_interval_ms {
            bad("atim_window_ms: need 0 < atim_window < beacon_interval".into());
        }
        if !(0.0..=1.0).contains(&self.p_gossip) {
            bad("p_gossip: probability in [0,1]".into());
        }
        if !(0.0..=1.0).contains(&self.p_sleep) {
            bad("p_sleep: probability in [0,1]".into());
        }
        if !(0.0..=1.0).contains(&self.rt) {
            bad("rt: ratio in [0,1]".into());
        }
        if !(0.0..=1.0).contains(&self.fault_loss_prob) {
            bad("fault_loss_prob: probability in [0,1]".into());
        }
        if self.feedback_window_s <= 0.0 {
            bad("feedback_window_s: must be > 0".into());
        }
        if self.ttl == 0 {
            bad("ttl: must be >= 1".into());
        }
        if self.cbr_pkt_bytes == 0 {
            bad("cbr_pkt_bytes: must be > 0".into());
        }
        if self.cbr_rate_pps <= 0.0 {
            bad("cbr_rate_pps: must be > 0".into());
        }
        if self.tcp_window == 0 {
            bad("tcp_window: must be >= 1".into());
        }
        if self.tcp_rto_min_ms == 0 {
            bad("tcp_rto_min_ms: must be > 0".into());
        }
        if self.n_nodes == 0 {
            bad("n_nodes: must be >= 1".into());
        }
        if self.sim_time_s <= 0.0 {
            bad("sim_time_s: must be > 0".into());
        }
        if self.runs_per_point == 0 {
            bad("runs_per_point: must be >= 1".into());
        }
        if self.warmup_s < 0.0 || self.warmup_s >= self.sim_time_s {
            bad("warmup_s: must be in [0, sim_time_s)".into());
        }
        if let Some(pos) = &self.fixed_positions {
            if pos.len() != self.n_nodes {
                bad("fixed_positions: length must equal n_nodes".into());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors.trim_end().to_string()))
        }
    }

    /// The effective configuration as `key = value` lines, for echoing into
    /// CSV headers.
    pub fn echo(&self) -> Vec<String> {
        let psm = match self.psm {
            PsmMode::Auto => "auto",
            PsmMode::On => "on",
            PsmMode::Off => "off",
        };
        let pairs: BTreeMap<&str, String> = BTreeMap::from([
            ("area_w_m", format!("{}", self.area_w_m)),
            ("area_h_m", format!("{}", self.area_h_m)),
            ("speed_mps", format!("{}", self.speed_mps)),
            ("pause_s", format!("{}", self.pause_s)),
            ("neighbor_tick_s", format!("{}", self.neighbor_tick_s)),
            ("range_m", format!("{}", self.range_m)),
            ("rate_bps", format!("{}", self.rate_bps)),
            ("p_tx_w", format!("{}", self.p_tx_w)),
            ("p_rx_w", format!("{}", self.p_rx_w)),
            ("p_idle_w", format!("{}", self.p_idle_w)),
            ("p_doze_w", format!("{}", self.p_doze_w)),
            ("path_loss_alpha", format!("{}", self.path_loss_alpha)),
            ("initial_energy_j", format!("{}", self.initial_energy_j)),
            ("beacon_interval_ms", format!("{}", self.beacon_interval_ms)),
            ("atim_window_ms", format!("{}", self.atim_window_ms)),
            ("mac_retry_max", format!("{}", self.mac_retry_max)),
            ("mac_buffer_cap", format!("{}", self.mac_buffer_cap)),
            ("collisions", if self.collisions { "on" } else { "off" }.to_string()),
            ("psm", psm.to_string()),
            ("protocol", self.protocol.label().to_string()),
            ("p_gossip", format!("{}", self.p_gossip)),
            ("hops_forced", format!("{}", self.hops_forced)),
            ("p_sleep", format!("{}", self.p_sleep)),
            ("rt", format!("{}", self.rt)),
            ("feedback_window_pkts", format!("{}", self.feedback_window_pkts)),
            ("feedback_window_s", format!("{}", self.feedback_window_s)),
            ("ttl", format!("{}", self.ttl)),
            ("aeerg_power_margin_m", format!("{}", self.aeerg_power_margin_m)),
            ("traffic", self.traffic.label().to_string()),
            ("cbr_pkt_bytes", format!("{}", self.cbr_pkt_bytes)),
            ("cbr_rate_pps", format!("{}", self.cbr_rate_pps)),
            ("tcp_window", format!("{}", self.tcp_window)),
            ("tcp_rto_min_ms", format!("{}", self.tcp_rto_min_ms)),
            ("tcp_rto_max_s", format!("{}", self.tcp_rto_max_s)),
            ("tcp_max_retx", format!("{}", self.tcp_max_retx)),
            ("tcp_total_pkts", format!("{}", self.tcp_total_pkts)),
            ("tcp_emit_interval_ms", format!("{}", self.tcp_emit_interval_ms)),
            ("flows", format!("{}", self.flows)),
            ("n_nodes", format!("{}", self.n_nodes)),
            ("sim_time_s", format!("{}", self.sim_time_s)),
            ("seed", format!("{}", self.seed)),
            ("runs_per_point", format!("{}", self.runs_per_point)),
            ("warmup_s", format!("{}", self.warmup_s)),
            ("fault_loss_prob", format!("{}", self.fault_loss_prob)),
        ]);
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}")).collect()
    }
}
