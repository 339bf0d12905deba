//! SPDC photon-pair source.
//!
//! The joint distribution is a separable double Gaussian per transverse axis:
//! a broad Gaussian for the pair centre and a narrow one for the
//! signal/idler difference in position, and the mirror image of that for
//! momentum (narrow sum, broad difference). Emission times form a homogeneous
//! Poisson process.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::geom::Vec2;
use crate::rng::{self, Domain};

/// Emission times are generated in fixed-length chunks, each with its own
/// random stream. Changing this changes every simulated dataset.
pub const CHUNK_NS: f64 = 1.0e6;

/// Source parameters. The default correlation widths are not calibrated
/// against a real crystal; they are chosen so the far-field spans the
/// default detector region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// Pairs per second.
    pub pair_rate: f64,
    /// Transverse birth-position spread per axis (µm).
    pub pos_sigma: Vec2,
    /// Spread of the signal-idler birth-position difference (µm).
    pub pos_corr_sigma: f64,
    /// Single-photon transverse wavevector spread (rad/µm).
    pub k_sigma: f64,
    /// Spread of k_signal + k_idler (rad/µm). Zero gives perfect anti-correlation.
    pub k_sum_sigma: f64,
    /// Signal/idler wavelength (nm).
    pub wavelength: f64,
    /// Pump wavelength (nm).
    pub pump_wavelength: f64,
    /// Exposure (s).
    pub duration: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            pair_rate: 2.0e5,
            pos_sigma: Vec2::new(60.0, 60.0),
            pos_corr_sigma: 0.5,
            k_sigma: 0.5,
            k_sum_sigma: 0.02,
            wavelength: 810.0,
            pump_wavelength: 405.0,
            duration: 1.0,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("source.{name} must be > 0 (got {v})")))
            }
        };
        positive("pair_rate", self.pair_rate)?;
        positive("pos_sigma.x", self.pos_sigma.x)?;
        positive("pos_sigma.y", self.pos_sigma.y)?;
        positive("pos_corr_sigma", self.pos_corr_sigma)?;
        positive("k_sigma", self.k_sigma)?;
        positive("wavelength", self.wavelength)?;
        positive("pump_wavelength", self.pump_wavelength)?;
        positive("duration", self.duration)?;
        if !(self.k_sum_sigma >= 0.0) {
            return Err(Error::config(format!(
                "source.k_sum_sigma must be >= 0 (got {})",
                self.k_sum_sigma
            )));
        }
        if self.k_sum_sigma > self.k_sigma {
            return Err(Error::config(format!(
                "source.k_sum_sigma ({}) must not exceed source.k_sigma ({})",
                self.k_sum_sigma, self.k_sigma
            )));
        }
        Ok(())
    }

    pub fn duration_ns(&self) -> f64 {
        self.duration * 1.0e9
    }

    pub fn chunk_count(&self) -> usize {
        (self.duration_ns() / CHUNK_NS).ceil() as usize
    }

    /// Spread of the half-difference (k_s - k_i)/2 that keeps the marginal at k_sigma.
    fn k_diff_sigma(&self) -> f64 {
        (self.k_sigma * self.k_sigma - self.k_sum_sigma * self.k_sum_sigma / 4.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonPair {
    /// Emission time (ns from exposure start).
    pub t_emit: f64,
    /// Signal birth position in the crystal plane (µm).
    pub r_signal: Vec2,
    /// Idler birth position (µm).
    pub r_idler: Vec2,
    /// Signal transverse wavevector (rad/µm).
    pub k_signal: Vec2,
    /// Idler transverse wavevector (rad/µm).
    pub k_idler: Vec2,
}

/// Generate the whole exposure, sorted by emission time.
pub fn generate_pairs(cfg: &SourceConfig, seed: u64) -> Result<Vec<PhotonPair>> {
    cfg.validate()?;
    let chunks = exec::map_range(cfg.chunk_count(), |c| generate_chunk(cfg, seed, c));
    Ok(exec::flatten(chunks))
}

/// Pairs emitted in `[c * CHUNK_NS, (c + 1) * CHUNK_NS)`, clipped to the
/// exposure. Assumes `cfg` is valid.
pub fn generate_chunk(cfg: &SourceConfig, seed: u64, chunk: usize) -> Vec<PhotonPair> {
    let start = chunk as f64 * CHUNK_NS;
    let end = ((chunk + 1) as f64 * CHUNK_NS).min(cfg.duration_ns());
    if start >= end {
        return Vec::new();
    }
    let mut rng = rng::stream(seed, Domain::Source, chunk as u64);
    let gap = Exp::new(cfg.pair_rate * 1.0e-9).expect("rate validated");
    let expected = ((end - start) * cfg.pair_rate * 1.0e-9) as usize;
    let mut out = Vec::with_capacity(expected + expected / 8 + 4);
    let mut t = start;
    loop {
        t += gap.sample(&mut rng);
        if t >= end {
            break;
        }
        out.push(draw_pair(cfg, t, &mut rng));
    }
    out
}

fn draw_pair(cfg: &SourceConfig, t_emit: f64, rng: &mut ChaCha8Rng) -> PhotonPair {
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let centre = Vec2::new(normal() * cfg.pos_sigma.x, normal() * cfg.pos_sigma.y);
    let sep = Vec2::new(normal() * cfg.pos_corr_sigma, normal() * cfg.pos_corr_sigma);
    let k_sum = Vec2::new(normal() * cfg.k_sum_sigma, normal() * cfg.k_sum_sigma);
    let diff_sigma = cfg.k_diff_sigma();
    let k_half_diff = Vec2::new(normal() * diff_sigma, normal() * diff_sigma);
    let half_sum = k_sum.scale(0.5);
    let half_sep = sep.scale(0.5);
    PhotonPair {
        t_emit,
        r_signal: centre + half_sep,
        r_idler: centre - half_sep,
        k_signal: half_sum + k_half_diff,
        k_idler: half_sum - k_half_diff,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(duration: f64, rate: f64) -> SourceConfig {
        SourceConfig { duration, pair_rate: rate, ..Default::default() }
    }

    #[test]
    fn perfect_anticorrelation_limit() {
        let c = SourceConfig { k_sum_sigma: 0.0, ..cfg(1e-3, 1e6) };
        let pairs = generate_pairs(&c, 3).unwrap();
        assert!(!pairs.is_empty());
        for p in &pairs {
            assert_eq!(p.k_idler, -p.k_signal);
        }
    }

    #[test]
    fn default_wavelengths_are_degenerate_810() {
        let c = SourceConfig::default();
        assert_eq!(c.wavelength, 810.0);
        assert_eq!(c.pump_wavelength, 405.0);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs_name_the_violation() {
        let bad = SourceConfig { k_sum_sigma: 1.0, k_sigma: 0.5, ..Default::default() };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("k_sum_sigma"), "{msg}");
        let bad = SourceConfig { pair_rate: 0.0, ..Default::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("pair_rate"));
        let bad = SourceConfig { duration: -1.0, ..Default::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("duration"));
    }

    #[test]
    fn times_sorted_and_inside_exposure() {
        let c = cfg(3.5e-3, 1e6);
        let pairs = generate_pairs(&c, 1).unwrap();
        assert!(pairs.windows(2).all(|w| w[0].t_emit <= w[1].t_emit));
        assert!(pairs.iter().all(|p| p.t_emit >= 0.0 && p.t_emit < c.duration_ns()));
    }

    #[test]
    fn chunked_generation_matches_whole() {
        let c = cfg(2.5e-3, 5e5);
        let whole = generate_pairs(&c, 11).unwrap();
        let by_chunk: Vec<_> = (0..c.chunk_count()).flat_map(|i| generate_chunk(&c, 11, i)).collect();
        assert_eq!(whole, by_chunk);
    }
}
