//! Vehicle kinematics on a ring road and the radio channel gains used by the
//! sidelink (V2V) and offloading uplink (V2I).
//!
//! V2V links carry log-distance pathloss, lognormal shadowing, and Rayleigh
//! block fading held per control epoch; the V2I link redraws its fading every
//! slot. All gains are linear power factors including antenna gains.

use crate::config::{db_to_lin, SimConfig};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp1, Normal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub id: usize,
    pub position_m: f64,
    pub lane: u32,
    pub speed_mps: f64,
    /// Direction of travel along the ring, +1 or -1.
    pub heading: i8,
}

/// Mutable world geometry for one episode.
#[derive(Debug, Clone)]
pub struct World {
    pub vehicles: Vec<VehicleState>,
    pub road_length_m: f64,
    pub rsu_position_m: f64,
    pub rsu_lateral_offset_m: f64,
}

impl World {
    /// Place vehicles uniformly at random with per-episode constant speeds.
    pub fn new(cfg: &SimConfig, rng: &mut ChaCha12Rng) -> World {
        let n = cfg.derived.n_vehicles as usize;
        let road = cfg.derived.road_length_m;
        let vmax = cfg.derived.max_speed_mps;
        let vehicles = (0..n)
            .map(|id| {
                let position_m = rng.random::<f64>() * road;
                let speed_mps = vmax * (cfg.min_speed_frac + (1.0 - cfg.min_speed_frac) * rng.random::<f64>());
                let lane = id as u32 % cfg.n_lanes.max(1);
                VehicleState {
                    id,
                    position_m,
                    lane,
                    speed_mps,
                    heading: if lane % 2 == 0 { 1 } else { -1 },
                }
            })
            .collect();
        World {
            vehicles,
            road_length_m: road,
            rsu_position_m: road / 2.0,
            rsu_lateral_offset_m: cfg.rsu_lateral_offset_m,
        }
    }

    pub fn n(&self) -> usize {
        self.vehicles.len()
    }

    /// Advance all positions by `speed * heading * dt` with ring wrap.
    pub fn advance(&mut self, dt_s: f64) {
        debug_assert!(dt_s > 0.0);
        let road = self.road_length_m;
        for v in &mut self.vehicles {
            v.position_m = (v.position_m + v.speed_mps * v.heading as f64 * dt_s).rem_euclid(road);
        }
    }

    /// Unsigned ring distance between vehicles `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.signed_gap(i, j).abs()
    }

    /// Signed gap from `i` to `j` in [-L/2, L/2).
    pub fn signed_gap(&self, i: usize, j: usize) -> f64 {
        let raw = self.vehicles[j].position_m - self.vehicles[i].position_m;
        let half = self.road_length_m / 2.0;
        (raw + half).rem_euclid(self.road_length_m) - half
    }

    /// Range rate of `j` as seen from `i` (positive = receding).
    pub fn range_rate(&self, i: usize, j: usize) -> f64 {
        let gap = self.signed_gap(i, j);
        let vi = self.vehicles[i].speed_mps * self.vehicles[i].heading as f64;
        let vj = self.vehicles[j].speed_mps * self.vehicles[j].heading as f64;
        gap.signum() * (vj - vi)
    }

    /// Slant distance from vehicle `i` to the RSU antenna.
    pub fn rsu_distance(&self, i: usize) -> f64 {
        let raw = self.vehicles[i].position_m - self.rsu_position_m;
        let half = self.road_length_m / 2.0;
        let along = ((raw + half).rem_euclid(self.road_length_m) - half).abs();
        (along * along + self.rsu_lateral_offset_m * self.rsu_lateral_offset_m).sqrt()
    }
}

/// Log-distance pathloss in dB with a 1 m close-in clamp.
pub fn pathloss_db(distance_m: f64, cfg: &SimConfig) -> f64 {
    let d = distance_m.max(1.0);
    cfg.derived.pl0_db + 10.0 * cfg.pathloss_exponent * d.log10()
}

/// All channel gains valid for the current slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSnapshot {
    n: usize,
    /// Symmetric linear V2V power gains, epoch-static.
    v2v_gain: Vec<f64>,
    /// Linear V2I uplink gains, redrawn each slot.
    v2i_gain: Vec<f64>,
    /// Shadowing state behind the V2V gains, dB.
    shadowing_db: Vec<f64>,
}

impl ChannelSnapshot {
    pub fn v2v(&self, i: usize, j: usize) -> f64 {
        self.v2v_gain[i * self.n + j]
    }

    pub fn v2i(&self, i: usize) -> f64 {
        self.v2i_gain[i]
    }

    pub fn shadowing_db(&self, i: usize, j: usize) -> f64 {
        self.shadowing_db[i * self.n + j]
    }
}

/// Draws and holds the gains; one instance per episode.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    snapshot: ChannelSnapshot,
}

impl ChannelModel {
    pub fn new(n: usize) -> ChannelModel {
        ChannelModel {
            snapshot: ChannelSnapshot {
                n,
                v2v_gain: vec![0.0; n * n],
                v2i_gain: vec![0.0; n],
                shadowing_db: vec![0.0; n * n],
            },
        }
    }

    /// Redraw V2V shadowing and block fading; held for the whole epoch.
    pub fn sample_epoch(&mut self, world: &World, cfg: &SimConfig, rng: &mut ChaCha12Rng) {
        let n = world.n();
        let ant_db = 2.0 * cfg.antenna_gain_db;
        let shadow = Normal::new(0.0, cfg.shadowing_sigma_db).expect("sigma >= 0");
        for i in 0..n {
            for j in (i + 1)..n {
                let (x_db, fade) = if cfg.fading_enabled {
                    let x: f64 = shadow.sample(rng);
                    let f: f64 = rng.sample(Exp1);
                    (x, f)
                } else {
                    (0.0, 1.0)
                };
                let pl = pathloss_db(world.distance(i, j), cfg);
                let gain = db_to_lin(-(pl + x_db) + ant_db) * fade;
                self.snapshot.v2v_gain[i * n + j] = gain;
                self.snapshot.v2v_gain[j * n + i] = gain;
                self.snapshot.shadowing_db[i * n + j] = x_db;
                self.snapshot.shadowing_db[j * n + i] = x_db;
            }
        }
    }

    /// Redraw V2I fading; quasi-static within the slot.
    pub fn sample_slot(&mut self, world: &World, cfg: &SimConfig, rng: &mut ChaCha12Rng) {
        let ant_db = 2.0 * cfg.antenna_gain_db;
        for i in 0..world.n() {
            let fade: f64 = if cfg.fading_enabled { rng.sample(Exp1) } else { 1.0 };
            let pl = pathloss_db(world.rsu_distance(i), cfg);
            self.snapshot.v2i_gain[i] = db_to_lin(-pl + ant_db) * fade;
        }
    }

    pub fn snapshot(&self) -> &ChannelSnapshot {
        &self.snapshot
    }
}
