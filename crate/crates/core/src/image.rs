//! Coincidence images, DPC images and line-profile visibility.

use serde::{Deserialize, Serialize};

use crate::centroid::PhotonEvent;
use crate::coinc::CoincidencePair;
use crate::error::{Error, Result};
use crate::exec;
use crate::geom::{Region, Vec2};
use crate::pgm::Graymap;

/// Accumulated counts over the near-field region, optionally binned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFrame {
    pub width: usize,
    pub height: usize,
    pub bin: usize,
    /// Row-major counts.
    pub counts: Vec<u32>,
    /// Exposure (s).
    pub exposure: f64,
    pub label: String,
    pub dataset: String,
}

impl ImageFrame {
    pub fn empty(region: &Region, bin: usize) -> Result<Self> {
        let bin = bin.max(1);
        if region.width as usize % bin != 0 || region.height as usize % bin != 0 {
            return Err(Error::Shape(format!(
                "bin factor {bin} does not divide the {}x{} region",
                region.width, region.height
            )));
        }
        let (w, h) = (region.width as usize / bin, region.height as usize / bin);
        Ok(ImageFrame {
            width: w,
            height: h,
            bin,
            counts: vec![0; w * h],
            exposure: 0.0,
            label: String::new(),
            dataset: String::new(),
        })
    }

    pub fn at(&self, i: usize, j: usize) -> u32 {
        self.counts[j * self.width + i]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Bin index of an absolute sensor coordinate, if inside the region.
    pub fn bin_of(&self, region: &Region, p: Vec2) -> Option<usize> {
        let l = region.to_local(p);
        let i = ((l.x + 0.5) / self.bin as f64).floor();
        let j = ((l.y + 0.5) / self.bin as f64).floor();
        (i >= 0.0 && j >= 0.0 && (i as usize) < self.width && (j as usize) < self.height)
            .then(|| j as usize * self.width + i as usize)
    }

    pub fn add(&mut self, other: &ImageFrame) -> Result<()> {
        if (self.width, self.height, self.bin) != (other.width, other.height, other.bin) {
            return Err(Error::Shape("cannot add frames of different geometry".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// 16-bit graymap; counts above 65535 saturate.
    pub fn to_graymap(&self) -> Graymap {
        Graymap {
            width: self.width,
            height: self.height,
            maxval: u16::MAX,
            data: self.counts.iter().map(|&c| c.min(u16::MAX as u32) as u16).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.counts.len() * 3);
        for row in self.counts.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

fn accumulate_by<T: Sync>(items: &[T], region: &Region, bin: usize, pos: impl Fn(&T) -> Vec2 + Sync + Send) -> Result<ImageFrame> {
    let empty = ImageFrame::empty(region, bin)?;
    let partials = exec::map_chunks(items, 1 << 16, |chunk| {
        let mut f = empty.clone();
        for it in chunk {
            if let Some(k) = f.bin_of(region, pos(it)) {
                f.counts[k] += 1;
            }
        }
        f
    });
    let mut frame = empty;
    for p in &partials {
        frame.add(p)?;
    }
    Ok(frame)
}

/// Coincidence image: one count per pair at its near-field coordinate.
pub fn accumulate(pairs: &[CoincidencePair], near: &Region, bin: usize) -> Result<ImageFrame> {
    accumulate_by(pairs, near, bin, |p| p.near.pos())
}

/// Singles image of photon events (no coincidence requirement).
pub fn accumulate_events(events: &[PhotonEvent], near: &Region, bin: usize) -> Result<ImageFrame> {
    accumulate_by(events, near, bin, |e| e.pos())
}

/// Normalised difference image `2 (R - L) / (R + L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpcFrame {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub label_a: String,
    pub label_b: String,
    pub min_counts: u32,
}

pub const DEFAULT_MIN_COUNTS: u32 = 10;

/// DPC of two asymmetric images. Pixels whose summed counts fall below
/// `min_counts` are marked invalid and set to zero.
pub fn dpc(i_r: &ImageFrame, i_l: &ImageFrame, min_counts: u32) -> Result<DpcFrame> {
    if (i_r.width, i_r.height, i_r.bin) != (i_l.width, i_l.height, i_l.bin) {
        return Err(Error::Shape(format!(
            "DPC inputs differ: {}x{} (bin {}) vs {}x{} (bin {})",
            i_r.width, i_r.height, i_r.bin, i_l.width, i_l.height, i_l.bin
        )));
    }
    if i_r.exposure != i_l.exposure {
        return Err(Error::Shape("DPC inputs have different exposures".into()));
    }
    let mut values = Vec::with_capacity(i_r.counts.len());
    let mut valid = Vec::with_capacity(i_r.counts.len());
    for (&r, &l) in i_r.counts.iter().zip(&i_l.counts) {
        let sum = r as u64 + l as u64;
        if sum >= min_counts as u64 && sum > 0 {
            let (r, l) = (r as f64, l as f64);
            values.push(2.0 * (r - l) / (r + l));
            valid.push(true);
        } else {
            values.push(0.0);
            valid.push(false);
        }
    }
    Ok(DpcFrame {
        width: i_r.width,
        height: i_r.height,
        values,
        valid,
        label_a: i_r.label.clone(),
        label_b: i_l.label.clone(),
        min_counts,
    })
}

impl DpcFrame {
    pub fn at(&self, i: usize, j: usize) -> Option<f64> {
        let k = j * self.width + i;
        self.valid[k].then_some(self.values[k])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    /// 8-bit visualisation, linear from -2 → 0 to +2 → 255.
    pub fn to_graymap(&self) -> Graymap {
        Graymap {
            width: self.width,
            height: self.height,
            maxval: 255,
            data: self.values.iter().map(|&v| ((v.clamp(-2.0, 2.0) + 2.0) / 4.0 * 255.0).round() as u16).collect(),
        }
    }
}

/// Line segment along which a profile is taken, in frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub start: Vec2,
    pub end: Vec2,
    /// Number of pixels summed across the line.
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityReport {
    pub v: f64,
    pub i_max_bar: f64,
    pub i_min_bar: f64,
    pub roi: Roi,
    /// Counts integrated across the ROI at unit steps along it.
    pub profile: Vec<f64>,
    pub maxima: Vec<usize>,
    pub minima: Vec<usize>,
}

/// Sample the frame along the ROI, summing `roi.width` nearest-pixel samples
/// across the line at each unit step.
pub fn line_profile(frame: &ImageFrame, roi: &Roi) -> Result<Vec<f64>> {
    let d = roi.end - roi.start;
    let len = d.norm();
    if !(len > 0.0) || roi.width == 0 {
        return Err(Error::config("ROI must have non-zero length and width"));
    }
    let inside = |p: Vec2| p.x >= -0.5 && p.y >= -0.5 && p.x < frame.width as f64 - 0.5 && p.y < frame.height as f64 - 0.5;
    if !inside(roi.start) || !inside(roi.end) {
        return Err(Error::config("ROI endpoints must lie inside the frame"));
    }
    let u = d.scale(1.0 / len);
    let v = Vec2::new(-u.y, u.x);
    let n = len.floor() as usize + 1;
    let half = (roi.width as f64 - 1.0) / 2.0;
    Ok((0..n)
        .map(|s| {
            (0..roi.width)
                .map(|t| {
                    let p = roi.start + u.scale(s as f64) + v.scale(t as f64 - half);
                    if inside(p) {
                        frame.at(p.x.round() as usize, p.y.round() as usize) as f64
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect())
}

fn smooth3(p: &[f64]) -> Vec<f64> {
    (0..p.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(p.len() - 1);
            p[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn prominence(s: &[f64], i: usize) -> f64 {
    let left = s[..i].iter().rposition(|&x| x > s[i]).map_or(0, |j| j + 1);
    let right = s[i + 1..].iter().position(|&x| x > s[i]).map_or(s.len(), |j| i + 1 + j);
    let lmin = s[left..i].iter().copied().fold(f64::INFINITY, f64::min);
    let rmin = s[i + 1..right].iter().copied().fold(f64::INFINITY, f64::min);
    let base = match (lmin.is_finite(), rmin.is_finite()) {
        (true, true) => lmin.max(rmin),
        (true, false) => lmin,
        (false, true) => rmin,
        (false, false) => s[i],
    };
    s[i] - base
}

/// Contrast of `n_lines` bright lines along a profile.
///
/// The profile is smoothed with a 3-sample moving average. Maxima are strict
/// local maxima above the profile median; when more than `n_lines` exist the
/// most prominent are kept. Minima are the lowest smoothed values between
/// consecutive kept maxima (for a single line, the profile minimum).
pub fn visibility_of_profile(profile: &[f64], n_lines: usize) -> Result<(f64, f64, f64, Vec<usize>, Vec<usize>)> {
    let fail = |message: String| Err(Error::Analysis { message, profile: profile.to_vec() });
    if n_lines == 0 {
        return fail("n_lines must be >= 1".into());
    }
    if profile.len() < 3 {
        return fail("profile shorter than 3 samples".into());
    }
    let s = smooth3(profile);
    let med = median(&s);
    let candidates: Vec<usize> = (1..s.len() - 1).filter(|&i| s[i] > s[i - 1] && s[i] > s[i + 1] && s[i] > med).collect();
    if candidates.len() < n_lines {
        return fail(format!("found {} maxima, expected {n_lines}", candidates.len()));
    }
    let mut ranked: Vec<(f64, usize)> = candidates.iter().map(|&i| (prominence(&s, i), i)).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(s[b.1].total_cmp(&s[a.1])).then(a.1.cmp(&b.1)));
    let mut maxima: Vec<usize> = ranked[..n_lines].iter().map(|r| r.1).collect();
    maxima.sort_unstable();

    let argmin = |lo: usize, hi: usize| (lo..=hi).min_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b))).expect("non-empty");
    let minima: Vec<usize> = if n_lines == 1 {
        vec![argmin(0, s.len() - 1)]
    } else {
        maxima.windows(2).map(|w| argmin(w[0], w[1])).collect()
    };
    let i_max = maxima.iter().map(|&i| s[i]).sum::<f64>() / maxima.len() as f64;
    let i_min = minima.iter().map(|&i| s[i]).sum::<f64>() / minima.len() as f64;
    if !(i_max + i_min > 0.0) {
        return fail("profile has no counts".into());
    }
    Ok(((i_max - i_min) / (i_max + i_min), i_max, i_min, maxima, minima))
}

pub fn visibility(frame: &ImageFrame, roi: &Roi, n_lines: usize) -> Result<VisibilityReport> {
    let profile = line_profile(frame, roi)?;
    let (v, i_max_bar, i_min_bar, maxima, minima) = visibility_of_profile(&profile, n_lines)?;
    Ok(VisibilityReport { v, i_max_bar, i_min_bar, roi: *roi, profile, maxima, minima })
}
