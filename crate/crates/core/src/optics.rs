//! Deterministic mapping of photons onto the two camera regions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Region, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticsConfig {
    /// Sample plane to camera magnification.
    pub magnification: f64,
    /// Camera displacement (µm) per unit idler transverse wavevector (rad/µm).
    pub effective_focal: f64,
    /// Largest signal |k| passed by the objective (rad/µm).
    pub na_cutoff: f64,
    pub near_region: Region,
    pub far_region: Region,
    /// Camera pixel pitch (µm).
    pub pixel_pitch: f64,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        OpticsConfig {
            magnification: 40.0,
            // 0.5 rad/µm (the default k_sigma) maps to 110 / 8 pixels, so ±4σ fits the region
            effective_focal: 1512.5,
            na_cutoff: 1.0,
            near_region: Region::new(14, 73, 110, 110),
            far_region: Region::new(132, 73, 110, 110),
            pixel_pitch: 55.0,
        }
    }
}

impl OpticsConfig {
    pub fn validate(&self, sensor: (u16, u16)) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("optics.{name} must be > 0 (got {v})")))
            }
        };
        positive("magnification", self.magnification)?;
        positive("effective_focal", self.effective_focal)?;
        positive("na_cutoff", self.na_cutoff)?;
        positive("pixel_pitch", self.pixel_pitch)?;
        for (name, r) in [("near_region", &self.near_region), ("far_region", &self.far_region)] {
            if r.width == 0 || r.height == 0 {
                return Err(Error::config(format!("optics.{name} must be non-empty")));
            }
            if r.x0 as u32 + r.width as u32 > sensor.0 as u32 || r.y0 as u32 + r.height as u32 > sensor.1 as u32 {
                return Err(Error::config(format!("optics.{name} extends past the {}x{} sensor", sensor.0, sensor.1)));
            }
        }
        if self.near_region.overlaps(&self.far_region) {
            return Err(Error::config("optics.near_region and optics.far_region overlap"));
        }
        Ok(())
    }

    /// Camera pixels per µm of sample-plane displacement.
    pub fn near_scale(&self) -> f64 {
        self.magnification / self.pixel_pitch
    }

    /// Camera pixels per rad/µm of idler wavevector.
    pub fn far_scale(&self) -> f64 {
        self.effective_focal / self.pixel_pitch
    }

    /// Image a sample-plane position (µm) into the near-field region.
    /// `None` when it lands outside the region.
    pub fn map_near(&self, sample: Vec2) -> Option<Vec2> {
        let p = self.near_region.center() + sample.scale(self.near_scale());
        self.near_region.contains(p).then_some(p)
    }

    /// Inverse of [`map_near`](Self::map_near) for any camera coordinate.
    pub fn near_to_sample(&self, camera: Vec2) -> Vec2 {
        (camera - self.near_region.center()).scale(1.0 / self.near_scale())
    }

    /// Fourier-plane position of an idler with transverse wavevector `k`.
    pub fn map_far(&self, k: Vec2) -> Option<Vec2> {
        let p = self.far_region.center() + k.scale(self.far_scale());
        self.far_region.contains(p).then_some(p)
    }

    /// Idler wavevector that lands on a far-field camera coordinate.
    pub fn far_to_k(&self, camera: Vec2) -> Vec2 {
        (camera - self.far_region.center()).scale(1.0 / self.far_scale())
    }

    /// Signal illumination angle implied by momentum anti-correlation with
    /// the idler detected at `camera`.
    pub fn infer_signal_k(&self, camera: Vec2) -> Vec2 {
        -self.far_to_k(camera)
    }

    /// Objective acceptance, closed at the cutoff.
    pub fn objective_accept(&self, k: Vec2) -> bool {
        k.norm() <= self.na_cutoff
    }
}
