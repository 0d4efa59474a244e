use rand::Rng;

use super::config::SimConfig;
use crate::{micros_to_secs, Micros};

/// Straight-line constant-speed motion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trajectory {
    pub x0: f64,
    pub y0: f64,
    pub vx: f64,
    pub t0: Micros,
}

impl Trajectory {
    pub fn fixed(x: f64, y: f64) -> Self {
        Self { x0: x, y0: y, vx: 0.0, t0: 0 }
    }

    pub fn at(&self, t: Micros) -> (f64, f64) {
        (self.x0 + self.vx * micros_to_secs(t - self.t0), self.y0)
    }

    pub fn distance(&self, other: &Trajectory, t: Micros) -> f64 {
        let (a, b) = (self.at(t), other.at(t));
        (a.0 - b.0).hypot(a.1 - b.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ring {
    Centre,
    Inner,
    Outer,
    Adversary,
}

/// Static layout: evaluated node at the origin, `n` nodes uniform in the
/// range disc, `3n` in the annulus out to twice the range, and adversaries
/// evenly spaced on a circle.
pub fn place_static<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Vec<(Ring, Trajectory)> {
    let r = cfg.range;
    let mut out = Vec::with_capacity(4 * cfg.n as usize + cfg.n_adv as usize + 1);
    out.push((Ring::Centre, Trajectory::fixed(0.0, 0.0)));
    let uniform = |lo: f64, hi: f64, rng: &mut R| {
        // Uniform over the annulus lo <= d < hi.
        let d = (lo * lo + rng.gen::<f64>() * (hi * hi - lo * lo)).sqrt();
        let th = rng.gen::<f64>() * std::f64::consts::TAU;
        Trajectory::fixed(d * th.cos(), d * th.sin())
    };
    for _ in 0..cfg.n {
        out.push((Ring::Inner, uniform(0.0, r, rng)));
    }
    for _ in 0..3 * cfg.n {
        out.push((Ring::Outer, uniform(r, 2.0 * r, rng)));
    }
    for k in 0..cfg.n_adv {
        let th = std::f64::consts::TAU * f64::from(k) / f64::from(cfg.n_adv);
        let p = Trajectory::fixed(cfg.adversary_radius * th.cos(), cfg.adversary_radius * th.sin());
        out.push((Ring::Adversary, p));
    }
    out
}

pub const LANE_SPEEDS: [f64; 3] = [25.0, 30.0, 35.0];
pub const LANE_WIDTH: f64 = 3.5;

/// Poisson arrival rate per direction that yields a mean of `n` vehicles
/// within `range` of a vehicle in the middle of the road: the two directions
/// together have linear density `2 * rate * mean(1/v)`, and a receiver hears
/// a `2 * range` stretch.
pub fn highway_arrival_rate(cfg: &SimConfig) -> f64 {
    let inv_speed = LANE_SPEEDS.iter().map(|v| 1.0 / v).sum::<f64>() / LANE_SPEEDS.len() as f64;
    f64::from(cfg.n) / (4.0 * cfg.range * inv_speed) * cfg.arrival_scale
}

/// A vehicle entering at `t` from the west end (`eastbound`) or the east end
/// in the given lane, and the time it reaches the far end.
pub fn highway_vehicle(cfg: &SimConfig, eastbound: bool, lane: usize, t: Micros) -> (Trajectory, Micros) {
    let v = LANE_SPEEDS[lane];
    let y = (lane as f64 + 0.5) * LANE_WIDTH;
    let traj = if eastbound {
        Trajectory { x0: 0.0, y0: y, vx: v, t0: t }
    } else {
        Trajectory { x0: cfg.road_length, y0: -y, vx: -v, t0: t }
    };
    let trip = crate::secs_to_micros(cfg.road_length / v);
    (traj, t + trip)
}

pub fn in_measure_zone(cfg: &SimConfig, x: f64) -> bool {
    let lo = (cfg.road_length - cfg.measure_width) / 2.0;
    (lo..=lo + cfg.measure_width).contains(&x)
}
