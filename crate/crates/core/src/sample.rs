//! Phase/amplitude targets and the thin-element photon-sample interaction.
//!
//! A photon crossing the sample at position `r` survives with probability
//! `amplitude(r)^2` and has its transverse wavevector shifted by the local
//! phase gradient. Off-grid values come from bilinear interpolation and the
//! gradient from central differences one grid pitch wide.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::pgm::Graymap;

/// Thin-plate phase delay `2π(n − 1)·depth/λ` (depth and λ in nm).
pub fn phase_from_etch(depth_nm: f64, refractive_index: f64, wavelength_nm: f64) -> f64 {
    2.0 * PI * (refractive_index - 1.0) * depth_nm / wavelength_nm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Flat,
    UsafBars,
    BlobPhantom,
    FromImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blob {
    pub center: Vec2,
    /// 1/e radius of the bump (µm).
    pub width: f64,
    /// Peak phase (rad).
    pub height: f64,
}

/// Target description. Only the fields relevant to `kind` are consulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    pub kind: TargetKind,
    /// Etch depth of the bars (nm).
    pub etch_depth: f64,
    pub refractive_index: f64,
    /// Illumination wavelength (nm).
    pub wavelength: f64,
    /// Grid node spacing (µm).
    pub grid_pitch: f64,
    /// Width of the linear ramp smoothing each phase step (µm). Defaults to one grid pitch.
    pub edge_width: Option<f64>,
    pub n_bars: usize,
    pub bar_width: f64,
    pub bar_gap: f64,
    pub bar_length: f64,
    /// Centre of the bar group or image (µm).
    pub center: Vec2,
    pub blobs: Vec<Blob>,
    pub image_path: Option<PathBuf>,
    /// Phase assigned to the image's maximum gray value (rad).
    pub phase_max: f64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec {
            kind: TargetKind::Flat,
            etch_depth: 350.0,
            refractive_index: 1.46,
            wavelength: 810.0,
            grid_pitch: 0.25,
            edge_width: None,
            n_bars: 3,
            bar_width: 2.0,
            bar_gap: 2.0,
            bar_length: 10.0,
            center: Vec2::ZERO,
            blobs: vec![
                Blob { center: Vec2::new(0.0, 0.0), width: 12.0, height: 1.0 },
                Blob { center: Vec2::new(4.0, -3.0), width: 3.0, height: 0.8 },
                Blob { center: Vec2::new(-8.0, 6.0), width: 2.0, height: 0.5 },
            ],
            image_path: None,
            phase_max: PI,
        }
    }
}

/// Location of one x-directed phase step of the bar target, for ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarEdge {
    /// Centre of the ramp (µm).
    pub x: f64,
    pub width: f64,
    /// Phase increases with x across this edge.
    pub rising: bool,
    /// Portion of the edge clear of the bar-end ramps (µm).
    pub y_min: f64,
    pub y_max: f64,
}

impl TargetSpec {
    pub fn usaf_bars(etch_depth: f64) -> Self {
        TargetSpec { kind: TargetKind::UsafBars, etch_depth, ..Default::default() }
    }

    pub fn edge_width(&self) -> f64 {
        self.edge_width.unwrap_or(self.grid_pitch)
    }

    pub fn bar_phase(&self) -> f64 {
        phase_from_etch(self.etch_depth, self.refractive_index, self.wavelength)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(Error::config(what.to_string())) };
        check(self.etch_depth >= 0.0, "sample.etch_depth must be >= 0")?;
        check(self.refractive_index > 1.0, "sample.refractive_index must be > 1")?;
        check(self.wavelength > 0.0, "sample.wavelength must be > 0")?;
        check(self.grid_pitch > 0.0, "sample.grid_pitch must be > 0")?;
        check(self.edge_width() > 0.0, "sample.edge_width must be > 0")?;
        match self.kind {
            TargetKind::UsafBars => {
                check(self.n_bars >= 1, "sample.n_bars must be >= 1")?;
                check(self.bar_width > 0.0, "sample.bar_width must be > 0")?;
                check(self.bar_gap > 0.0, "sample.bar_gap must be > 0")?;
                check(self.bar_length > 0.0, "sample.bar_length must be > 0")?;
                check(
                    self.bar_width >= self.edge_width() && self.bar_gap >= self.edge_width(),
                    "sample.edge_width must not exceed bar_width or bar_gap",
                )?;
            }
            TargetKind::BlobPhantom => {
                check(!self.blobs.is_empty(), "sample.blobs must not be empty")?;
                for b in &self.blobs {
                    check(b.width > 0.0, "sample.blobs[].width must be > 0")?;
                }
            }
            TargetKind::FromImage => {
                check(self.image_path.is_some(), "sample.image_path is required for from_image")?;
                check(self.phase_max.is_finite(), "sample.phase_max must be finite")?;
            }
            TargetKind::Flat => {}
        }
        Ok(())
    }

    /// Left edge of bar `i` before smoothing (µm).
    fn bar_left(&self, i: usize) -> f64 {
        let span = self.n_bars as f64 * self.bar_width + (self.n_bars - 1) as f64 * self.bar_gap;
        self.center.x - span / 2.0 + i as f64 * (self.bar_width + self.bar_gap)
    }

    /// Rising and falling x-edges of the bar target, in x order.
    pub fn bar_edges(&self) -> Vec<BarEdge> {
        if self.kind != TargetKind::UsafBars {
            return Vec::new();
        }
        let e = self.edge_width();
        let y_min = self.center.y - self.bar_length / 2.0 + e / 2.0;
        let y_max = self.center.y + self.bar_length / 2.0 - e / 2.0;
        (0..self.n_bars)
            .flat_map(|i| {
                let l = self.bar_left(i);
                [
                    BarEdge { x: l, width: e, rising: true, y_min, y_max },
                    BarEdge { x: l + self.bar_width, width: e, rising: false, y_min, y_max },
                ]
            })
            .collect()
    }
}

/// Sampled phase and amplitude over the sample plane.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMap {
    nx: usize,
    ny: usize,
    pitch: f64,
    /// Sample-plane coordinate of node (0, 0) (µm).
    origin: Vec2,
    phase: Vec<f64>,
    amplitude: Vec<f64>,
}

impl TargetMap {
    pub fn new(nx: usize, ny: usize, pitch: f64, origin: Vec2, phase: Vec<f64>, amplitude: Vec<f64>) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::config(format!("target grid must be at least 2x2 (got {nx}x{ny})")));
        }
        if !(pitch > 0.0) {
            return Err(Error::config("target grid pitch must be > 0"));
        }
        if phase.len() != nx * ny || amplitude.len() != nx * ny {
            return Err(Error::Shape("phase and amplitude grids must both be nx*ny".into()));
        }
        if phase.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("target phase must be finite"));
        }
        if amplitude.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::config("target amplitude must lie in [0, 1]"));
        }
        Ok(TargetMap { nx, ny, pitch, origin, phase, amplitude })
    }

    pub fn from_fn(nx: usize, ny: usize, pitch: f64, origin: Vec2, f: impl Fn(Vec2) -> f64) -> Result<Self> {
        let mut phase = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                phase.push(f(origin + Vec2::new(i as f64 * pitch, j as f64 * pitch)));
            }
        }
        TargetMap::new(nx, ny, pitch, origin, phase, vec![1.0; nx * ny])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn node(&self, i: usize, j: usize) -> Vec2 {
        self.origin + Vec2::new(i as f64 * self.pitch, j as f64 * self.pitch)
    }

    pub fn phase_grid(&self) -> &[f64] {
        &self.phase
    }

    pub fn amplitude_grid(&self) -> &[f64] {
        &self.amplitude
    }

    fn inside(&self, p: Vec2) -> bool {
        let u = (p.x - self.origin.x) / self.pitch;
        let v = (p.y - self.origin.y) / self.pitch;
        u >= 0.0 && v >= 0.0 && u <= (self.nx - 1) as f64 && v <= (self.ny - 1) as f64
    }

    /// Bilinear interpolation with edge extension outside the node lattice.
    fn bilinear(&self, grid: &[f64], p: Vec2) -> f64 {
        let u = ((p.x - self.origin.x) / self.pitch).clamp(0.0, (self.nx - 1) as f64);
        let v = ((p.y - self.origin.y) / self.pitch).clamp(0.0, (self.ny - 1) as f64);
        let i = (u.floor() as usize).min(self.nx - 2);
        let j = (v.floor() as usize).min(self.ny - 2);
        let fu = u - i as f64;
        let fv = v - j as f64;
        let at = |i: usize, j: usize| grid[j * self.nx + i];
        (1.0 - fv) * ((1.0 - fu) * at(i, j) + fu * at(i + 1, j)) + fv * ((1.0 - fu) * at(i, j + 1) + fu * at(i + 1, j + 1))
    }

    pub fn phase_at(&self, p: Vec2) -> f64 {
        if self.inside(p) {
            self.bilinear(&self.phase, p)
        } else {
            0.0
        }
    }

    pub fn amplitude_at(&self, p: Vec2) -> f64 {
        if self.inside(p) {
            self.bilinear(&self.amplitude, p)
        } else {
            1.0
        }
    }

    /// Phase gradient (rad/µm) at `p`; zero off the grid.
    pub fn gradient_at(&self, p: Vec2) -> Vec2 {
        if !self.inside(p) {
            return Vec2::ZERO;
        }
        let h = self.pitch;
        let gx = (self.bilinear(&self.phase, p + Vec2::new(h, 0.0)) - self.bilinear(&self.phase, p - Vec2::new(h, 0.0))) / (2.0 * h);
        let gy = (self.bilinear(&self.phase, p + Vec2::new(0.0, h)) - self.bilinear(&self.phase, p - Vec2::new(0.0, h))) / (2.0 * h);
        Vec2::new(gx, gy)
    }

    /// Pass a signal photon through the sample. Returns the kicked wavevector,
    /// or `None` if the photon was absorbed. Always consumes one uniform draw.
    pub fn interact<R: Rng + ?Sized>(&self, position: Vec2, k: Vec2, rng: &mut R) -> Option<Vec2> {
        let u: f64 = rng.random();
        let a = self.amplitude_at(position);
        if u < a * a {
            Some(k + self.gradient_at(position))
        } else {
            None
        }
    }
}

/// Linear ramp trapezoid: 0 outside `[lo - e/2, hi + e/2]`, 1 inside `[lo + e/2, hi - e/2]`.
fn trapezoid(x: f64, lo: f64, hi: f64, e: f64) -> f64 {
    let up = (x - (lo - e / 2.0)) / e;
    let down = ((hi + e / 2.0) - x) / e;
    up.min(down).clamp(0.0, 1.0)
}

pub fn build_target(spec: &TargetSpec) -> Result<TargetMap> {
    spec.validate()?;
    let pitch = spec.grid_pitch;
    match spec.kind {
        TargetKind::Flat => {
            let n = 2;
            let origin = spec.center - Vec2::new(pitch / 2.0, pitch / 2.0);
            TargetMap::new(n, n, pitch, origin, vec![0.0; 4], vec![1.0; 4])
        }
        TargetKind::UsafBars => {
            let e = spec.edge_width();
            let phi0 = spec.bar_phase();
            let margin = 2.0 * e + 4.0 * pitch;
            let x_lo = spec.bar_left(0) - margin;
            let x_hi = spec.bar_left(spec.n_bars - 1) + spec.bar_width + margin;
            let y_lo = spec.center.y - spec.bar_length / 2.0 - margin;
            let y_hi = spec.center.y + spec.bar_length / 2.0 + margin;
            let nx = ((x_hi - x_lo) / pitch).ceil() as usize + 1;
            let ny = ((y_hi - y_lo) / pitch).ceil() as usize + 1;
            let lefts: Vec<f64> = (0..spec.n_bars).map(|i| spec.bar_left(i)).collect();
            let (yb0, yb1) = (spec.center.y - spec.bar_length / 2.0, spec.center.y + spec.bar_length / 2.0);
            TargetMap::from_fn(nx, ny, pitch, Vec2::new(x_lo, y_lo), |p| {
                let ty = trapezoid(p.y, yb0, yb1, e);
                let tx = lefts
                    .iter()
                    .map(|&l| trapezoid(p.x, l, l + spec.bar_width, e))
                    .fold(0.0, f64::max);
                phi0 * tx * ty
            })
        }
        TargetKind::BlobPhantom => {
            let reach = spec.blobs.iter().map(|b| 4.0 * b.width).fold(0.0, f64::max);
            let x_lo = spec.blobs.iter().map(|b| b.center.x).fold(f64::INFINITY, f64::min) - reach;
            let x_hi = spec.blobs.iter().map(|b| b.center.x).fold(f64::NEG_INFINITY, f64::max) + reach;
            let y_lo = spec.blobs.iter().map(|b| b.center.y).fold(f64::INFINITY, f64::min) - reach;
            let y_hi = spec.blobs.iter().map(|b| b.center.y).fold(f64::NEG_INFINITY, f64::max) + reach;
            let nx = ((x_hi - x_lo) / pitch).ceil() as usize + 1;
            let ny = ((y_hi - y_lo) / pitch).ceil() as usize + 1;
            TargetMap::from_fn(nx, ny, pitch, Vec2::new(x_lo, y_lo), |p| {
                spec.blobs
                    .iter()
                    .map(|b| {
                        let d = p - b.center;
                        b.height * (-(d.dot(d)) / (b.width * b.width)).exp()
                    })
                    .sum()
            })
        }
        TargetKind::FromImage => {
            let path = spec.image_path.as_ref().expect("validated");
            let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
            let img = Graymap::read_from(std::io::BufReader::new(file))?;
            let scale = spec.phase_max / img.maxval as f64;
            let phase = img.data.iter().map(|&v| v as f64 * scale).collect();
            let origin = spec.center
                - Vec2::new((img.width as f64 - 1.0) * pitch / 2.0, (img.height as f64 - 1.0) * pitch / 2.0);
            TargetMap::new(img.width, img.height, pitch, origin, phase, vec![1.0; img.width * img.height])
        }
    }
}
