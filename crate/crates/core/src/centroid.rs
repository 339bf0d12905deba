//! Collapse intensifier clusters into single-photon detections.
//!
//! Raw hits that are within `time_gate` of each other and 8-connected on the
//! sensor are joined (single linkage). The stream is cut wherever the time
//! gap exceeds the gate; the pieces are independent and processed in parallel.

use serde::{Deserialize, Serialize};

use crate::detector::RawEvent;
use crate::error::{Error, Result};
use crate::exec;
use crate::geom::{quantize_subpixel, Plane, Region, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Time-over-threshold weighted mean.
    Tot,
    /// Plain mean of pixel centres.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CentroidParams {
    /// Maximum time separation of hits in one cluster (ns).
    pub time_gate: f64,
    /// 4 or 8.
    pub connectivity: u8,
    pub weighting: Weighting,
}

impl Default for CentroidParams {
    fn default() -> Self {
        CentroidParams { time_gate: 100.0, connectivity: 8, weighting: Weighting::Tot }
    }
}

impl CentroidParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.time_gate >= 0.0) {
            return Err(Error::config("centroid.time_gate must be >= 0"));
        }
        if self.connectivity != 4 && self.connectivity != 8 {
            return Err(Error::config("centroid.connectivity must be 4 or 8"));
        }
        Ok(())
    }

    fn gate_ticks(&self, time_bin: f64) -> u64 {
        (self.time_gate / time_bin + 1e-9).floor() as u64
    }

    fn adjacent(&self, a: &RawEvent, b: &RawEvent) -> bool {
        let dx = a.x.abs_diff(b.x);
        let dy = a.y.abs_diff(b.y);
        match self.connectivity {
            4 => dx + dy <= 1,
            _ => dx <= 1 && dy <= 1,
        }
    }
}

/// A single detected photon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonEvent {
    /// Sensor coordinate on the 1/256-pixel grid.
    pub x: f64,
    pub y: f64,
    /// Time of arrival in `time_bin` units.
    pub toa: u64,
    pub plane: Plane,
    pub n_pixels: u16,
}

impl PhotonEvent {
    pub fn new(x: f64, y: f64, toa: u64, plane: Plane, n_pixels: u16) -> Self {
        PhotonEvent { x: quantize_subpixel(x), y: quantize_subpixel(y), toa, plane, n_pixels }
    }

    pub fn pos(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn sort_key(&self) -> (u64, Plane, i64, i64, u16) {
        (self.toa, self.plane, (self.y * 256.0) as i64, (self.x * 256.0) as i64, self.n_pixels)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CentroidOutput {
    /// Time-sorted photons from both arms.
    pub photons: Vec<PhotonEvent>,
    /// Clusters whose centroid fell in neither region.
    pub dropped_clusters: usize,
    /// Raw hits belonging to dropped clusters.
    pub dropped_events: usize,
}

impl CentroidOutput {
    pub fn split_planes(&self) -> (Vec<PhotonEvent>, Vec<PhotonEvent>) {
        self.photons.iter().partition(|p| p.plane == Plane::Near)
    }
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet((0..n).collect())
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index is the root, keeps results order-free
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Cluster and centroid a raw stream.
///
/// The input must be time-ordered; hits may be out of order by at most
/// `time_gate` (hits of one flash can be reported in any order), anything
/// worse is a stream-order error.
pub fn cluster_and_centroid(
    events: &[RawEvent],
    params: &CentroidParams,
    time_bin: f64,
    near: &Region,
    far: &Region,
) -> Result<CentroidOutput> {
    params.validate()?;
    let gate = params.gate_ticks(time_bin);

    let mut bounds = Vec::new();
    let mut start = 0usize;
    let mut latest = 0u64;
    for (i, e) in events.iter().enumerate() {
        if i > 0 {
            if e.toa.saturating_add(gate) < latest {
                return Err(Error::StreamOrder { index: i, previous: latest, toa: e.toa });
            }
            if e.toa > latest.saturating_add(gate) {
                bounds.push((start, i));
                start = i;
            }
        }
        latest = latest.max(e.toa);
    }
    if !events.is_empty() {
        bounds.push((start, events.len()));
    }

    let parts = exec::map_slice(&bounds, |&(a, b)| centroid_partition(&events[a..b], params, gate, near, far));
    let mut out = CentroidOutput::default();
    for (photons, clusters, hits) in parts {
        out.photons.extend(photons);
        out.dropped_clusters += clusters;
        out.dropped_events += hits;
    }
    exec::sort_by_key(&mut out.photons, PhotonEvent::sort_key);
    Ok(out)
}

fn centroid_partition(
    part: &[RawEvent],
    params: &CentroidParams,
    gate: u64,
    near: &Region,
    far: &Region,
) -> (Vec<PhotonEvent>, usize, usize) {
    let mut hits = part.to_vec();
    hits.sort_unstable_by_key(RawEvent::sort_key);
    let mut sets = DisjointSet::new(hits.len());
    for i in 0..hits.len() {
        for j in i + 1..hits.len() {
            if hits[j].toa - hits[i].toa > gate {
                break;
            }
            if params.adjacent(&hits[i], &hits[j]) {
                sets.union(i, j);
            }
        }
    }
    // roots are the smallest member index, so members arrive in sorted order
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); hits.len()];
    for i in 0..hits.len() {
        let r = sets.find(i);
        members[r].push(i);
    }

    let mut photons = Vec::new();
    let (mut dropped_clusters, mut dropped_hits) = (0, 0);
    for cluster in members.iter().filter(|m| !m.is_empty()) {
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        let mut toa = u64::MAX;
        for &i in cluster {
            let h = &hits[i];
            let w = match params.weighting {
                Weighting::Tot => h.tot.max(1) as f64,
                Weighting::Uniform => 1.0,
            };
            sx += w * h.x as f64;
            sy += w * h.y as f64;
            sw += w;
            toa = toa.min(h.toa);
        }
        let c = Vec2::new(sx / sw, sy / sw);
        let plane = if near.contains(c) {
            Plane::Near
        } else if far.contains(c) {
            Plane::Far
        } else {
            dropped_clusters += 1;
            dropped_hits += cluster.len();
            continue;
        };
        let n = cluster.len().min(u16::MAX as usize) as u16;
        photons.push(PhotonEvent::new(c.x, c.y, toa, plane, n));
    }
    (photons, dropped_clusters, dropped_hits)
}
