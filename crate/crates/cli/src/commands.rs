use std::path::{Path, PathBuf};

use qpcm::aperture::ApertureMask;
use qpcm::centroid::{cluster_and_centroid, PhotonEvent};
use qpcm::coinc::{accidental_rate, dt_histogram, pair_events};
use qpcm::config::{load_run_config, RunConfig};
use qpcm::dataset::PairTable;
use qpcm::detector::RawEvent;
use qpcm::image::{dpc, visibility, ImageFrame, Roi};
use qpcm::payload::{to_json, DpcPayload, FramePayload};
use qpcm::pipeline::{detect_all, header, process, simulate, simulate_arrivals};
use qpcm::store::{self, EventFileHeader, RecordKind, RunMetadata};
use qpcm::{Error, Result, Vec2};
use serde_json::{json, Value};

use crate::args::{Cli, Command, RoiArgs, SweepParam};
use crate::manifest::{config_sha256, dataset_id, manifest_path, Manifest};

pub const CONFIG_DIR_ENV: &str = "QPCM_CONFIG_DIR";

/// Resolve `--config`: as given if it exists, else relative to `$QPCM_CONFIG_DIR`.
pub fn resolve_config_path(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = std::env::var_os(CONFIG_DIR_ENV) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    path.to_path_buf()
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    match &cli.config {
        Some(p) => load_run_config(&resolve_config_path(p)),
        None => Ok(RunConfig::default()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

fn read_mask(path: &Path) -> Result<ApertureMask> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    ApertureMask::from_json(&text)
}

fn metadata(cfg: &RunConfig, stage: &str, seed: u64, exposure_s: f64) -> String {
    RunMetadata {
        tool: "qpcm".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        stage: stage.into(),
        seed,
        config_sha256: config_sha256(cfg),
        exposure_s,
    }
    .to_json()
}

fn finish(mut manifest: Manifest, primary: &Path, outputs: &[&Path], summary: Value) -> Result<Value> {
    for p in outputs {
        manifest.output(p)?;
    }
    manifest.summary = summary.clone();
    manifest.write(&manifest_path(primary))?;
    Ok(summary)
}

pub fn run(cli: &Cli) -> Result<Value> {
    let cfg = load_config(cli)?;
    let mut manifest = Manifest::new(command_name(&cli.command), &cfg);
    if let Some(p) = &cli.config {
        manifest.input(&resolve_config_path(p))?;
    }
    match &cli.command {
        Command::Simulate { out } => {
            let sim = simulate(&cfg)?;
            let h = header(&cfg, RecordKind::Raw, metadata(&cfg, "simulate", cfg.seed, cfg.source.duration));
            store::write_file(out, &h, &sim.raw)?;
            let summary = json!({
                "raw_events": sim.raw.len(),
                "dark_events": sim.dark_events,
                "optical": sim.optical,
                "exposure_s": cfg.source.duration,
            });
            finish(manifest, out, &[out], summary)
        }
        Command::Centroid { input, out } => {
            manifest.input(input)?;
            let (h, raw, meta) = read_raw(input, &cfg)?;
            let res = cluster_and_centroid(&raw, &cfg.centroid, h.time_bin, &h.near, &h.far)?;
            let (near, far) = res.split_planes();
            let oh = EventFileHeader::new(RecordKind::Photon, h.sensor, h.time_bin, h.near, h.far, metadata(&cfg, "centroid", meta.seed, meta.exposure_s));
            store::write_file(out, &oh, &res.photons)?;
            let summary = json!({
                "raw_events": raw.len(),
                "photons": res.photons.len(),
                "near": near.len(),
                "far": far.len(),
                "dropped_clusters": res.dropped_clusters,
                "dropped_events": res.dropped_events,
            });
            finish(manifest, out, &[out], summary)
        }
        Command::Pair { input, out, dt_hist } => {
            manifest.input(input)?;
            let (h, photons) = store::read_file::<PhotonEvent>(input)?;
            let meta = RunMetadata::parse(&h.metadata);
            let near: Vec<PhotonEvent> = photons.iter().filter(|p| p.plane == qpcm::Plane::Near).copied().collect();
            let far: Vec<PhotonEvent> = photons.iter().filter(|p| p.plane == qpcm::Plane::Far).copied().collect();
            let (pairs, stats) = pair_events(&near, &far, &cfg.coincidence, h.time_bin)?;
            let oh = EventFileHeader::new(RecordKind::Pair, h.sensor, h.time_bin, h.near, h.far, metadata(&cfg, "pair", meta.seed, meta.exposure_s));
            store::write_file(out, &oh, &pairs)?;
            let mut outputs: Vec<&Path> = vec![out];
            if let Some(p) = dt_hist {
                let mut csv = String::from("dt_ns,count\n");
                for (t, c) in dt_histogram(&pairs, &cfg.coincidence, h.time_bin) {
                    csv.push_str(&format!("{t},{c}\n"));
                }
                write_text(p, &csv)?;
                outputs.push(p);
            }
            let expected_accidentals = if meta.exposure_s > 0.0 {
                let t = meta.exposure_s;
                accidental_rate(near.len() as f64 / t, far.len() as f64 / t, cfg.coincidence.window) * t
            } else {
                0.0
            };
            let summary = json!({
                "stats": stats,
                "exposure_s": meta.exposure_s,
                "expected_accidentals": expected_accidentals,
            });
            finish(manifest, out, &outputs, summary)
        }
        Command::Render { input, mask, out_dir, bin } => {
            let (table, id) = load_table(input, &mut manifest)?;
            std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
            let bin = bin.unwrap_or(cfg.image.bin);
            let mut written = Vec::new();
            let mut frames = Vec::new();
            for m in mask {
                manifest.input(m)?;
                let frame = render(&table, &id, &read_mask(m)?, bin)?;
                let stem = m.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "frame".into());
                let (pgm, csv, js) = (out_dir.join(format!("{stem}.pgm")), out_dir.join(format!("{stem}.csv")), out_dir.join(format!("{stem}.json")));
                write_bytes(&pgm, &frame.to_graymap().to_bytes())?;
                write_text(&csv, &frame.to_csv())?;
                write_text(&js, &to_json(&FramePayload::new(&frame)))?;
                frames.push(json!({ "mask": m, "label": frame.label, "total": frame.total(), "max": frame.max() }));
                written.extend([pgm, csv, js]);
            }
            let outputs: Vec<&Path> = written.iter().map(PathBuf::as_path).collect();
            finish(manifest, &out_dir.join("render"), &outputs, json!({ "dataset": id, "bin": bin, "frames": frames }))
        }
        Command::Dpc { input, mask_a, mask_b, out, bin, min_counts } => {
            let (table, id) = load_table(input, &mut manifest)?;
            manifest.input(mask_a)?;
            let a = read_mask(mask_a)?;
            let b = match mask_b {
                Some(p) => {
                    manifest.input(p)?;
                    read_mask(p)?
                }
                None => a.complement(table.far_region()),
            };
            let bin = bin.unwrap_or(cfg.image.bin);
            let d = dpc(&render(&table, &id, &a, bin)?, &render(&table, &id, &b, bin)?, min_counts.unwrap_or(cfg.image.min_counts))?;
            let with_ext = |ext: &str| {
                let mut s = out.as_os_str().to_owned();
                s.push(ext);
                PathBuf::from(s)
            };
            let (csv, pgm, js) = (with_ext(".csv"), with_ext(".pgm"), with_ext(".json"));
            write_text(&csv, &d.to_csv())?;
            write_bytes(&pgm, &d.to_graymap().to_bytes())?;
            write_text(&js, &to_json(&DpcPayload::new(&d)))?;
            let valid = d.valid.iter().filter(|v| **v).count();
            let mean_abs = d.values.iter().zip(&d.valid).filter(|(_, ok)| **ok).map(|(v, _)| v.abs()).sum::<f64>() / valid.max(1) as f64;
            let summary = json!({ "dataset": id, "label_a": d.label_a, "label_b": d.label_b, "valid_pixels": valid, "mean_abs": mean_abs });
            finish(manifest, out, &[&csv, &pgm, &js], summary)
        }
        Command::Visibility { input, mask, roi, n_lines, bin, out } => {
            let (table, id) = load_table(input, &mut manifest)?;
            manifest.input(mask)?;
            let frame = render(&table, &id, &read_mask(mask)?, bin.unwrap_or(cfg.image.bin))?;
            let report = visibility(&frame, &parse_roi(roi)?, *n_lines)?;
            write_text(out, &to_json(&report))?;
            let summary = json!({ "dataset": id, "label": frame.label, "total": frame.total(), "v": report.v, "i_max_bar": report.i_max_bar, "i_min_bar": report.i_min_bar });
            finish(manifest, out, &[out], summary)
        }
        Command::Sweep { param, values, out } => {
            let rows = sweep(&cfg, *param, values)?;
            let mut csv = String::from("param,value,raw_events,photons_near,photons_far,pairs,singles_near,singles_far\n");
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    param.name(),
                    r.value,
                    r.raw_events,
                    r.photons_near,
                    r.photons_far,
                    r.pairs,
                    r.singles_near,
                    r.singles_far
                ));
            }
            write_text(out, &csv)?;
            let summary = json!({ "param": param.name(), "values": values, "pairs": rows.iter().map(|r| r.pairs).collect::<Vec<_>>() });
            finish(manifest, out, &[out], summary)
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate { .. } => "simulate",
        Command::Centroid { .. } => "centroid",
        Command::Pair { .. } => "pair",
        Command::Render { .. } => "render",
        Command::Dpc { .. } => "dpc",
        Command::Visibility { .. } => "visibility",
        Command::Sweep { .. } => "sweep",
    }
}

fn read_raw(input: &Path, cfg: &RunConfig) -> Result<(EventFileHeader, Vec<RawEvent>, RunMetadata)> {
    let is_csv = input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if !is_csv {
        let (h, raw) = store::read_file::<RawEvent>(input)?;
        let meta = RunMetadata::parse(&h.metadata);
        return Ok((h, raw, meta));
    }
    let file = std::fs::File::open(input).map_err(|e| Error::file(input, e))?;
    let raw = store::import_csv(std::io::BufReader::new(file), cfg.camera.time_bin)?;
    let span = match (raw.first(), raw.last()) {
        (Some(a), Some(b)) => (b.toa - a.toa) as f64 * cfg.camera.time_bin * 1e-9,
        _ => 0.0,
    };
    let meta = RunMetadata { exposure_s: span, ..Default::default() };
    Ok((header(cfg, RecordKind::Raw, String::new()), raw, meta))
}

/// Load a pair file into an indexed table; returns it with the dataset id.
pub fn load_table(input: &Path, manifest: &mut Manifest) -> Result<(PairTable, String)> {
    manifest.input(input)?;
    let sha = manifest.inputs.last().expect("just pushed").sha256.clone();
    Ok((PairTable::from_reader(store::open_file(input)?)?, dataset_id(&sha)))
}

pub fn render(table: &PairTable, id: &str, mask: &ApertureMask, bin: usize) -> Result<ImageFrame> {
    let mut frame = table.render(mask, bin)?;
    frame.dataset = id.to_string();
    Ok(frame)
}

fn parse_roi(r: &RoiArgs) -> Result<Roi> {
    match r.roi.as_slice() {
        [x0, y0, x1, y1] => Ok(Roi { start: Vec2::new(*x0, *y0), end: Vec2::new(*x1, *y1), width: r.roi_width }),
        _ => Err(Error::config("--roi takes x0,y0,x1,y1")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub raw_events: usize,
    pub photons_near: usize,
    pub photons_far: usize,
    pub pairs: u64,
    pub singles_near: u64,
    pub singles_far: u64,
}

/// Optical stage once, then detection and processing per value.
pub fn sweep(cfg: &RunConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    let (chunks, _) = simulate_arrivals(cfg)?;
    values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            match param {
                SweepParam::Efficiency => c.camera.efficiency = v,
                SweepParam::DarkRate => c.camera.dark_rate = v,
                SweepParam::JitterFwhm => c.camera.jitter_fwhm = v,
                SweepParam::ClusterSizeMean => c.camera.cluster_size_mean = v,
                SweepParam::Window => c.coincidence.window = v,
                SweepParam::TimeGate => c.centroid.time_gate = v,
            }
            c.validate()?;
            let raw = detect_all(&chunks, &c.camera, c.seed, c.source.duration_ns());
            let p = process(&raw, &c)?;
            let (near, far) = p.centroided.split_planes();
            Ok(SweepRow {
                value: v,
                raw_events: raw.len(),
                photons_near: near.len(),
                photons_far: far.len(),
                pairs: p.pair_stats.pairs,
                singles_near: p.pair_stats.singles_near,
                singles_far: p.pair_stats.singles_far,
            })
        })
        .collect()
}
