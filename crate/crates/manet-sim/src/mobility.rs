//! Random-waypoint mobility: each node travels in a straight line to a
//! uniformly drawn waypoint at fixed speed, pauses, then picks the next leg.

use rand::Rng;

use crate::engine::SimTime;

/// Rectangular simulation region in meters.
#[derive(Debug, Clone, Copy)]
pub struct Region {
    pub width: f64,
    pub height: f64,
}

impl Region {
    pub fn new(width: f64, height: f64) -> Self {
        assert!(width > 0.0 && height > 0.0, "region must have positive extent");
        Region { width, height }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> (f64, f64) {
        // x drawn before y so the draw order is part of the replay contract
        let x = rng.random_range(0.0..=self.width);
        let y = rng.random_range(0.0..=self.height);
        (x, y)
    }
}

/// One leg of a random-waypoint trajectory.
#[derive(Debug, Clone, Copy)]
pub struct MotionState {
    pub origin: (f64, f64),
    pub waypoint: (f64, f64),
    pub depart_at: SimTime,
    pub speed_mps: f64,
    pub pause: SimTime,
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

impl MotionState {
    /// Initial state: uniform placement, first leg departs immediately.
    pub fn initial(rng: &mut impl Rng, region: &Region, speed_mps: f64, pause: SimTime) -> Self {
        let origin = region.sample(rng);
        let waypoint = region.sample(rng);
        MotionState { origin, waypoint, depart_at: SimTime::ZERO, speed_mps, pause }
    }

    /// When the node reaches the waypoint. A zero speed never arrives; the
    /// node just sits at its origin.
    pub fn arrival_at(&self) -> Option<SimTime> {
        let d = distance(self.origin, self.waypoint);
        if self.speed_mps <= 0.0 {
            return None;
        }
        let travel_us = (d / self.speed_mps * 1e6).ceil() as u64;
        Some(self.depart_at + SimTime(travel_us))
    }

    /// When the post-arrival pause ends and the next leg may start.
    pub fn leg_end(&self) -> Option<SimTime> {
        self.arrival_at().map(|a| a + self.pause)
    }

    /// Position at time t: at the origin before departure, linear toward the
    /// waypoint while traveling, clamped at the waypoint afterwards.
    pub fn position_at(&self, t: SimTime) -> (f64, f64) {
        if t <= self.depart_at || self.speed_mps <= 0.0 {
            return self.origin;
        }
        let d = distance(self.origin, self.waypoint);
        if d == 0.0 {
            return self.origin;
        }
        let elapsed_s = (t - self.depart_at).as_secs_f64();
        let traveled = self.speed_mps * elapsed_s;
        if traveled >= d {
            return self.waypoint;
        }
        let f = traveled / d;
        (
            self.origin.0 + (self.waypoint.0 - self.origin.0) * f,
            self.origin.1 + (self.waypoint.1 - self.origin.1) * f,
        )
    }

    /// Draw the next leg once the current one has completed (arrival plus
    /// pause). The new origin is the old waypoint.
    pub fn next_leg(&self, rng: &mut impl Rng, region: &Region) -> MotionState {
        let depart_at = self.leg_end().expect("next_leg on a static node");
        MotionState {
            origin: self.waypoint,
            waypoint: region.sample(rng),
            depart_at,
            speed_mps: self.speed_mps,
            pause: self.pause,
        }
    }

    /// Advance through as many completed legs as needed so that `t` falls on
    /// the current leg.
    pub fn advance_to(&mut self, t: SimTime, rng: &mut impl Rng, region: &Region) {
        while let Some(end) = self.leg_end() {
            if t < end {
                break;
            }
            *self = self.next_leg(rng, region);
        }
    }
}
