//! End-to-end simulation and processing chains.

use serde::{Deserialize, Serialize};

use crate::centroid::{cluster_and_centroid, CentroidOutput};
use crate::coinc::{pair_events, CoincidencePair, PairStats};
use crate::config::RunConfig;
use crate::detector::{dark_chunk, detect, Arrival, CameraConfig, RawEvent};
use crate::error::Result;
use crate::exec;
use crate::geom::Plane;
use crate::pairgen::generate_chunk;
use crate::rng::{self, Domain};
use crate::sample::{build_target, TargetMap};
use crate::store::{EventFileHeader, RecordKind};

/// Where simulated photons were lost before reaching the camera.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpticalStats {
    pub pairs: u64,
    pub absorbed: u64,
    pub objective_rejected: u64,
    pub near_out_of_field: u64,
    pub far_out_of_field: u64,
}

impl OpticalStats {
    fn merge(&mut self, o: &OpticalStats) {
        self.pairs += o.pairs;
        self.absorbed += o.absorbed;
        self.objective_rejected += o.objective_rejected;
        self.near_out_of_field += o.near_out_of_field;
        self.far_out_of_field += o.far_out_of_field;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Simulation {
    /// Time-sorted raw hits, photons and darks merged.
    pub raw: Vec<RawEvent>,
    pub optical: OpticalStats,
    pub dark_events: u64,
}

/// Photons of one source chunk that reach the camera, in emission order
/// (signal before idler within a pair).
pub fn optical_chunk(cfg: &RunConfig, target: &TargetMap, chunk: usize) -> (Vec<Arrival>, OpticalStats) {
    let pairs = generate_chunk(&cfg.source, cfg.seed, chunk);
    let mut rng = rng::stream(cfg.seed, Domain::Sample, chunk as u64);
    let mut stats = OpticalStats { pairs: pairs.len() as u64, ..Default::default() };
    let mut out = Vec::with_capacity(pairs.len() * 2);
    let optics = &cfg.optics;
    for p in &pairs {
        match target.interact(p.r_signal, p.k_signal, &mut rng) {
            None => stats.absorbed += 1,
            Some(k) if !optics.objective_accept(k) => stats.objective_rejected += 1,
            Some(_) => match optics.map_near(p.r_signal) {
                Some(pos) => out.push(Arrival { t_ns: p.t_emit, pos, plane: Plane::Near }),
                None => stats.near_out_of_field += 1,
            },
        }
        match optics.map_far(p.k_idler) {
            Some(pos) => out.push(Arrival { t_ns: p.t_emit, pos, plane: Plane::Far }),
            None => stats.far_out_of_field += 1,
        }
    }
    (out, stats)
}

/// Camera response to one chunk of arrivals plus that chunk's darks; unsorted.
pub fn detect_chunk(arrivals: &[Arrival], camera: &CameraConfig, seed: u64, duration_ns: f64, chunk: usize) -> Vec<RawEvent> {
    let mut rng = rng::stream(seed, Domain::Detector, chunk as u64);
    let mut out = Vec::with_capacity((arrivals.len() as f64 * camera.efficiency * camera.cluster_size_mean) as usize + 16);
    for a in arrivals {
        detect(a, camera, &mut rng, &mut out);
    }
    out.extend(dark_chunk(camera, duration_ns, seed, chunk));
    out
}

pub fn build(cfg: &RunConfig) -> Result<TargetMap> {
    cfg.validate()?;
    build_target(&cfg.sample)
}

/// Source → sample → optics → camera, returning the merged raw stream.
pub fn simulate(cfg: &RunConfig) -> Result<Simulation> {
    let target = build(cfg)?;
    let duration_ns = cfg.source.duration_ns();
    let parts = exec::map_range(cfg.source.chunk_count(), |c| {
        let (arrivals, stats) = optical_chunk(cfg, &target, c);
        (detect_chunk(&arrivals, &cfg.camera, cfg.seed, duration_ns, c), stats)
    });
    let mut optical = OpticalStats::default();
    let mut raw = Vec::with_capacity(parts.iter().map(|p| p.0.len()).sum());
    for (events, stats) in parts {
        optical.merge(&stats);
        raw.extend(events);
    }
    exec::sort_by_key(&mut raw, RawEvent::sort_key);
    let dark_events = raw.iter().filter(|e| e.flags & crate::detector::FLAG_DARK != 0).count() as u64;
    Ok(Simulation { raw, optical, dark_events })
}

/// All arrivals, grouped by source chunk, for re-running detection with
/// different camera settings.
pub fn simulate_arrivals(cfg: &RunConfig) -> Result<(Vec<Vec<Arrival>>, OpticalStats)> {
    let target = build(cfg)?;
    let parts = exec::map_range(cfg.source.chunk_count(), |c| optical_chunk(cfg, &target, c));
    let mut optical = OpticalStats::default();
    let mut chunks = Vec::with_capacity(parts.len());
    for (a, s) in parts {
        optical.merge(&s);
        chunks.push(a);
    }
    Ok((chunks, optical))
}

/// Detection over pre-computed arrivals, sorted.
pub fn detect_all(chunks: &[Vec<Arrival>], camera: &CameraConfig, seed: u64, duration_ns: f64) -> Vec<RawEvent> {
    let idx: Vec<usize> = (0..chunks.len()).collect();
    let parts = exec::map_slice(&idx, |&c| detect_chunk(&chunks[c], camera, seed, duration_ns, c));
    let mut raw = exec::flatten(parts);
    exec::sort_by_key(&mut raw, RawEvent::sort_key);
    raw
}

#[derive(Debug, Clone, Default)]
pub struct Processed {
    pub centroided: CentroidOutput,
    pub pairs: Vec<CoincidencePair>,
    pub pair_stats: PairStats,
}

/// Centroid and pair a raw stream.
pub fn process(raw: &[RawEvent], cfg: &RunConfig) -> Result<Processed> {
    let o = &cfg.optics;
    let centroided = cluster_and_centroid(raw, &cfg.centroid, cfg.camera.time_bin, &o.near_region, &o.far_region)?;
    let (near, far) = centroided.split_planes();
    let (pairs, pair_stats) = pair_events(&near, &far, &cfg.coincidence, cfg.camera.time_bin)?;
    Ok(Processed { centroided, pairs, pair_stats })
}

/// File header for stage outputs of this configuration.
pub fn header(cfg: &RunConfig, kind: RecordKind, metadata: String) -> EventFileHeader {
    EventFileHeader::new(kind, cfg.camera.sensor_size, cfg.camera.time_bin, cfg.optics.near_region, cfg.optics.far_region, metadata)
}
