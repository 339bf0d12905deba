//! Intensified event-camera model.
//!
//! Each photon is detected with a fixed probability. A detection lights up a
//! small cluster of pixels around the true position, all sharing one
//! jittered, quantized timestamp.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::geom::{Plane, Vec2};
use crate::pairgen::CHUNK_NS;
use crate::rng::{self, Domain};

/// FWHM of a Gaussian in units of its standard deviation, 2√(2 ln 2).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Spread of intensifier cluster pixels around the true position (pixels).
const CLUSTER_SIGMA: f64 = 0.5;

pub const FLAG_FAR: u16 = 1 << 0;
pub const FLAG_DARK: u16 = 1 << 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    /// Sensor width and height (pixels).
    pub sensor_size: [u16; 2],
    /// Probability that an incident photon is registered.
    pub efficiency: f64,
    /// Timing jitter, full width at half maximum (ns).
    pub jitter_fwhm: f64,
    /// Timestamp quantum (ns).
    pub time_bin: f64,
    /// Uncorrelated background events per second over the whole sensor.
    pub dark_rate: f64,
    /// Mean number of pixels per detection.
    pub cluster_size_mean: f64,
    /// Time-over-threshold of a pixel at the exact photon position.
    pub tot_scale: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            sensor_size: [256, 256],
            efficiency: 0.07,
            jitter_fwhm: 16.0,
            time_bin: 1.5625,
            dark_rate: 0.0,
            cluster_size_mean: 4.0,
            tot_scale: 100.0,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::config(format!("camera.efficiency must be in (0, 1] (got {})", self.efficiency)));
        }
        if !(self.jitter_fwhm >= 0.0) {
            return Err(Error::config("camera.jitter_fwhm must be >= 0"));
        }
        if !(self.time_bin > 0.0) {
            return Err(Error::config("camera.time_bin must be > 0"));
        }
        if !(self.dark_rate >= 0.0) {
            return Err(Error::config("camera.dark_rate must be >= 0"));
        }
        if !(self.cluster_size_mean >= 1.0) {
            return Err(Error::config("camera.cluster_size_mean must be >= 1"));
        }
        if !(self.tot_scale >= 1.0 && self.tot_scale <= u16::MAX as f64) {
            return Err(Error::config("camera.tot_scale must be in [1, 65535]"));
        }
        if self.sensor_size[0] == 0 || self.sensor_size[1] == 0 {
            return Err(Error::config("camera.sensor_size must be non-zero"));
        }
        Ok(())
    }

    pub fn jitter_sigma(&self) -> f64 {
        self.jitter_fwhm / FWHM_PER_SIGMA
    }

    pub fn quantize(&self, t_ns: f64) -> u64 {
        (t_ns / self.time_bin).round().max(0.0) as u64
    }
}

/// One pixel hit. `toa` is in units of the camera `time_bin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RawEvent {
    pub toa: u64,
    pub x: u16,
    pub y: u16,
    pub tot: u16,
    /// Simulation ground truth: [`FLAG_FAR`], [`FLAG_DARK`].
    pub flags: u16,
}

impl RawEvent {
    /// Total order used wherever raw streams are sorted.
    pub fn sort_key(&self) -> (u64, u16, u16, u16, u16) {
        (self.toa, self.y, self.x, self.tot, self.flags)
    }
}

/// A photon reaching the camera at a continuous sensor coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub t_ns: f64,
    pub pos: Vec2,
    pub plane: Plane,
}

/// Register one photon. Pushes nothing when the photon is missed, otherwise
/// a cluster of distinct pixels inside the 3x3 block around the seed pixel.
pub fn detect<R: Rng + ?Sized>(arrival: &Arrival, cfg: &CameraConfig, rng: &mut R, out: &mut Vec<RawEvent>) {
    let u: f64 = rng.random();
    if u >= cfg.efficiency {
        return;
    }
    let extra = if cfg.cluster_size_mean > 1.0 {
        Poisson::new(cfg.cluster_size_mean - 1.0).expect("validated").sample(rng) as usize
    } else {
        0
    };
    let jitter: f64 = if cfg.jitter_fwhm > 0.0 { rng.sample::<f64, _>(StandardNormal) * cfg.jitter_sigma() } else { 0.0 };
    let toa = cfg.quantize(arrival.t_ns + jitter);

    let max_x = cfg.sensor_size[0] as f64 - 1.0;
    let max_y = cfg.sensor_size[1] as f64 - 1.0;
    let seed_x = arrival.pos.x.round().clamp(0.0, max_x) as i32;
    let seed_y = arrival.pos.y.round().clamp(0.0, max_y) as i32;
    let flags = if arrival.plane == Plane::Far { FLAG_FAR } else { 0 };

    let start = out.len();
    let push = |px: i32, py: i32, out: &mut Vec<RawEvent>| {
        let (x, y) = (px as u16, py as u16);
        if out[start..].iter().any(|e| e.x == x && e.y == y) {
            return;
        }
        let d = (Vec2::new(px as f64, py as f64) - arrival.pos).norm();
        let tot = (cfg.tot_scale * (1.0 - d / 2.0)).round().max(1.0) as u16;
        out.push(RawEvent { toa, x, y, tot, flags });
    };
    push(seed_x, seed_y, out);
    for _ in 0..extra {
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        let px = (arrival.pos.x + dx * CLUSTER_SIGMA).round() as i32;
        let py = (arrival.pos.y + dy * CLUSTER_SIGMA).round() as i32;
        let px = px.clamp(seed_x - 1, seed_x + 1).clamp(0, max_x as i32);
        let py = py.clamp(seed_y - 1, seed_y + 1).clamp(0, max_y as i32);
        push(px, py, out);
    }
}

/// Uncorrelated single-pixel background over `duration_s`, generated per
/// source time chunk and returned in emission order.
pub fn generate_darks(cfg: &CameraConfig, duration_s: f64, seed: u64) -> Vec<RawEvent> {
    if cfg.dark_rate <= 0.0 || duration_s <= 0.0 {
        return Vec::new();
    }
    let duration_ns = duration_s * 1e9;
    let chunks = (duration_ns / CHUNK_NS).ceil() as usize;
    exec::flatten(exec::map_range(chunks, |c| dark_chunk(cfg, duration_ns, seed, c)))
}

pub fn dark_chunk(cfg: &CameraConfig, duration_ns: f64, seed: u64, chunk: usize) -> Vec<RawEvent> {
    let start = chunk as f64 * CHUNK_NS;
    let end = ((chunk + 1) as f64 * CHUNK_NS).min(duration_ns);
    if cfg.dark_rate <= 0.0 || start >= end {
        return Vec::new();
    }
    let mut rng = rng::stream(seed, Domain::Darks, chunk as u64);
    let gap = Exp::new(cfg.dark_rate * 1e-9).expect("validated");
    let mut out = Vec::new();
    let mut t = start;
    loop {
        t += gap.sample(&mut rng);
        if t >= end {
            break;
        }
        let x = rng.random_range(0..cfg.sensor_size[0]);
        let y = rng.random_range(0..cfg.sensor_size[1]);
        let tot = rng.random_range(1..=cfg.tot_scale as u16);
        out.push(RawEvent { toa: cfg.quantize(t), x, y, tot, flags: FLAG_DARK });
    }
    out
}
