//! Unit-disk radio model: inclusive range test, transmission timing at the
//! channel rate, a distance-scaled transmit power law, and per-node energy
//! accounting by radio mode.

use thiserror::Error;

use crate::engine::SimTime;
use crate::mobility::distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RadioMode {
    Transmit,
    Receive,
    Idle,
    Doze,
}

impl RadioMode {
    pub const ALL: [RadioMode; 4] =
        [RadioMode::Transmit, RadioMode::Receive, RadioMode::Idle, RadioMode::Doze];

    fn index(self) -> usize {
        match self {
            RadioMode::Transmit => 0,
            RadioMode::Receive => 1,
            RadioMode::Idle => 2,
            RadioMode::Doze => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RadioMode::Transmit => "tx",
            RadioMode::Receive => "rx",
            RadioMode::Idle => "idle",
            RadioMode::Doze => "doze",
        }
    }
}

/// Power draw per radio mode, in watts. Idle defaults to half of transmit.
#[derive(Debug, Clone, Copy)]
pub struct PowerTable {
    pub p_tx: f64,
    pub p_rx: f64,
    pub p_idle: f64,
    pub p_doze: f64,
}

impl Default for PowerTable {
    fn default() -> Self {
        // WaveLAN-class figures; p_idle = p_tx / 2
        PowerTable { p_tx: 1.4, p_rx: 1.0, p_idle: 0.7, p_doze: 0.045 }
    }
}

impl PowerTable {
    pub fn watts(&self, mode: RadioMode) -> f64 {
        match mode {
            RadioMode::Transmit => self.p_tx,
            RadioMode::Receive => self.p_rx,
            RadioMode::Idle => self.p_idle,
            RadioMode::Doze => self.p_doze,
        }
    }

    pub fn validate(&self) -> Result<(), RadioError> {
        if self.p_tx >= self.p_rx && self.p_rx >= self.p_idle && self.p_idle > self.p_doze && self.p_doze >= 0.0
        {
            Ok(())
        } else {
            Err(RadioError::BadPowerTable)
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("power table must satisfy p_tx >= p_rx >= p_idle > p_doze >= 0")]
    BadPowerTable,
    #[error("transmit distance {d} exceeds radio range {range}")]
    OutOfRange { d: f64, range: f64 },
}

/// Inclusive unit-disk connectivity: reachable iff distance <= range.
pub fn in_range(a: (f64, f64), b: (f64, f64), range_m: f64) -> bool {
    distance(a, b) <= range_m
}

/// Airtime of a payload at the channel rate, rounded up to whole
/// microseconds.
pub fn tx_duration(payload_bytes: u64, rate_bps: u64) -> SimTime {
    assert!(rate_bps > 0, "channel rate must be positive");
    let bits = payload_bytes * 8;
    SimTime((bits * 1_000_000).div_ceil(rate_bps))
}

/// Transmit power needed to reach distance `d`: p_tx * (d / range)^alpha,
/// floored at 10% of p_tx so a zero-distance send is never free.
pub fn tx_power_for_distance(
    d: f64,
    range_m: f64,
    table: &PowerTable,
    alpha: f64,
) -> Result<f64, RadioError> {
    if !(0.0..=range_m).contains(&d) {
        return Err(RadioError::OutOfRange { d, range: range_m });
    }
    let scaled = table.p_tx * (d / range_m).powf(alpha);
    Ok(scaled.max(0.1 * table.p_tx))
}

/// Per-node energy ledger: microseconds and joules accumulated per radio
/// mode, plus the residual against the initial budget.
#[derive(Debug, Clone)]
pub struct EnergyLedger {
    mode_micros: [u64; 4],
    energy_by_mode: [f64; 4],
    consumed: f64,
    pub initial: f64,
    pub dead: bool,
}

impl EnergyLedger {
    pub fn new(initial_j: f64) -> Self {
        EnergyLedger {
            mode_micros: [0; 4],
            energy_by_mode: [0.0; 4],
            consumed: 0.0,
            initial: initial_j,
            dead: false,
        }
    }

    /// Charge `micros` of time in `mode` at `watts`. The caller passes the
    /// table power, or an override for distance-scaled transmissions.
    pub fn accrue(&mut self, mode: RadioMode, micros: u64, watts: f64) {
        if micros == 0 {
            return;
        }
        let joules = micros as f64 / 1e6 * watts;
        let i = mode.index();
        self.mode_micros[i] += micros;
        self.energy_by_mode[i] += joules;
        self.consumed += joules;
        if self.consumed >= self.initial {
            self.dead = true;
        }
    }

    pub fn consumed(&self) -> f64 {
        self.consumed
    }

    pub fn residual(&self) -> f64 {
        (self.initial - self.consumed).max(0.0)
    }

    pub fn micros_in(&self, mode: RadioMode) -> u64 {
        self.mode_micros[mode.index()]
    }

    pub fn total_micros(&self) -> u64 {
        self.mode_micros.iter().sum()
    }

    /// Re-derive total joules from the per-mode subtotals; must agree with
    /// the running sum to float-summation noise.
    pub fn recompute(&self) -> f64 {
        self.energy_by_mode.iter().sum()
    }
}
