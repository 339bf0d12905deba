//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test --release -p qpcm-cli --test acceptance -- 3 4`.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use qpcm::aperture::{ApertureMask, Bitmap};
use qpcm::centroid::{cluster_and_centroid, CentroidParams, PhotonEvent};
use qpcm::coinc::{accidental_rate, CoincidenceConfig, CoincidencePair};
use qpcm::config::{load_run_config, RunConfig};
use qpcm::detector::{detect, Arrival, CameraConfig, RawEvent};
use qpcm::geom::quantize_subpixel;
use qpcm::image::accumulate_events;
use qpcm::optics::OpticsConfig;
use qpcm::pairgen::{generate_pairs, SourceConfig};
use qpcm::rng::{stream, Domain};
use qpcm::store::{self, EventFileHeader, EventReader, EventWriter, Record, RecordKind};
use qpcm::{Plane, Region, Vec2};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_qpcm");

type Check = Result<String, String>;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mask_file(name: &str) -> String {
    repo().join("masks").join(name).to_str().unwrap().to_string()
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn qpcm(dir: &Path, args: &[&str]) -> Result<Value, String> {
    let out = Command::new(BIN).args(args).current_dir(dir).env_remove("QPCM_CONFIG_DIR").output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("qpcm {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

/// Copy of a repository config with top-level or section keys replaced.
fn variant(dir: &Path, base: &str, name: &str, set: &[(&str, String)]) -> PathBuf {
    let text = std::fs::read_to_string(repo().join("configs").join(base)).unwrap();
    let lines: Vec<String> = text
        .lines()
        .map(|l| match set.iter().find(|(k, _)| l.split('=').next().map(str::trim) == Some(k)) {
            Some((k, v)) => format!("{k} = {v}"),
            None => l.to_string(),
        })
        .collect();
    let p = dir.join(name);
    std::fs::write(&p, lines.join("\n") + "\n").unwrap();
    p
}

/// simulate → centroid → pair into `dir`; returns the pair summary.
fn chain(dir: &Path, config: &Path, workers: Option<usize>) -> Result<Value, String> {
    std::fs::create_dir_all(dir).unwrap();
    let c = s(config);
    let w = workers.map(|w| w.to_string());
    let run = |args: &[&str]| {
        let mut full: Vec<&str> = Vec::new();
        if let Some(w) = &w {
            full.extend(["--workers", w.as_str()]);
        }
        full.extend(["--config", c.as_str()]);
        full.extend(args);
        qpcm(dir, &full)
    };
    run(&["simulate", "--out", "raw.qpcm"])?;
    run(&["centroid", "--input", "raw.qpcm", "--out", "photons.qpcm"])?;
    run(&["pair", "--input", "photons.qpcm", "--out", "pairs.qpcm"])
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn dpc_values(dir: &Path, a: &str, b: Option<&str>, prefix: &str, bin: usize) -> Result<(usize, Vec<Option<f64>>), String> {
    let bin = bin.to_string();
    let mut args = vec!["dpc", "--input", "pairs.qpcm", "--mask-a", a, "--out", prefix, "--bin", &bin];
    if let Some(b) = b {
        args.extend(["--mask-b", b]);
    }
    qpcm(dir, &args)?;
    let v = read_json(&dir.join(format!("{prefix}.json")));
    let width = v["width"].as_u64().unwrap() as usize;
    Ok((width, v["values"].as_array().unwrap().iter().map(|x| x.as_f64()).collect()))
}

fn render_counts(dir: &Path, mask: &str, out: &str) -> Result<Vec<f64>, String> {
    let s = qpcm(dir, &["render", "--input", "pairs.qpcm", "--mask", mask, "--out-dir", out])?;
    let stem = s["frames"][0]["label"].as_str().unwrap_or("frame").to_string();
    let csv = std::fs::read_to_string(dir.join(out).join(format!("{stem}.csv"))).map_err(|e| e.to_string())?;
    Ok(csv.split([',', '\n']).filter(|x| !x.is_empty()).map(|x| x.parse().unwrap()).collect())
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_sd(a);
    let (mb, _) = mean_sd(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c1_antisymmetry(dir: &Path) -> Check {
    let cfg = variant(dir, "bars_350.toml", "run.toml", &[("seed", "1".into()), ("duration", "0.5".into())]);
    chain(dir, &cfg, None)?;
    let run = load_run_config(&cfg).map_err(|e| e.to_string())?;
    let disk = ApertureMask::from_json(&std::fs::read_to_string(mask_file("center_disk.json")).unwrap()).unwrap();
    let comp = dir.join("disk_complement.json");
    std::fs::write(&comp, disk.complement(&run.optics.far_region).to_json()).unwrap();
    let comp = s(&comp);
    let (right, left, up, down, cd) = (mask_file("right.json"), mask_file("left.json"), mask_file("up.json"), mask_file("down.json"), mask_file("center_disk.json"));
    let cases: [(&str, &str, usize); 4] = [(&right, &left, 1), (&up, &down, 1), (&cd, &comp, 1), (&right, &left, 5)];
    let mut compared = 0;
    for (i, (a, b, bin)) in cases.iter().enumerate() {
        let (_, ab) = dpc_values(dir, a, Some(b), &format!("ab{i}"), *bin)?;
        let (_, ba) = dpc_values(dir, b, Some(a), &format!("ba{i}"), *bin)?;
        for (x, y) in ab.iter().zip(&ba) {
            match (x, y) {
                (Some(x), Some(y)) if *x == -*y => compared += 1,
                (None, None) => {}
                _ => return Err(format!("case {i}: {x:?} vs {y:?}")),
            }
        }
    }
    // the default second mask is the complement
    let (_, implicit) = dpc_values(dir, &cd, None, "implicit", 1)?;
    let (_, explicit) = dpc_values(dir, &cd, Some(&comp), "explicit", 1)?;
    ensure(implicit == explicit && compared > 1000, format!("{compared} valid pixels negate exactly over 4 mask pairs"))
}

fn c2_flat_null(dir: &Path) -> Check {
    let summary = chain(dir, &repo().join("configs/flat.toml"), None)?;
    let pairs = summary["stats"]["pairs"].as_u64().unwrap();
    let (right, left) = (mask_file("right.json"), mask_file("left.json"));
    let r = render_counts(dir, &right, "r")?;
    let l = render_counts(dir, &left, "l")?;
    let (_, d) = dpc_values(dir, &right, Some(&left), "dpc", 1)?;
    let (mut abs, mut counts, mut n) = (0.0, 0.0, 0usize);
    for k in 0..d.len() {
        if let Some(v) = d[k] {
            abs += v.abs();
            counts += r[k] + l[k];
            n += 1;
        }
    }
    let (mean_abs, mean_count) = (abs / n as f64, counts / n as f64);
    let bound = 3.0 / mean_count.sqrt();
    ensure(
        pairs >= 1_000_000 && mean_abs < bound,
        format!("{pairs} pairs, {n} valid pixels, mean |DPC| {mean_abs:.4} < {bound:.4} (mean count {mean_count:.1})"),
    )
}

/// Per-edge (mean, standard error) of DPC over the ground-truth edge bands.
fn edge_band_stats(run: &RunConfig, width: usize, values: &[Option<f64>]) -> Vec<(bool, f64, f64, usize)> {
    let near = run.optics.near_region;
    run.sample
        .bar_edges()
        .iter()
        .map(|e| {
            let mut v = Vec::new();
            for (k, x) in values.iter().enumerate() {
                let (i, j) = (k % width, k / width);
                let p = run.optics.near_to_sample(Vec2::new((near.x0 as usize + i) as f64, (near.y0 as usize + j) as f64));
                if (p.x - e.x).abs() <= e.width / 2.0 && p.y >= e.y_min && p.y <= e.y_max {
                    if let Some(x) = x {
                        v.push(*x);
                    }
                }
            }
            let (m, sd) = mean_sd(&v);
            (e.rising, m, sd / (v.len() as f64).sqrt(), v.len())
        })
        .collect()
}

fn c3_edge_signs(dir: &Path) -> Check {
    let cfg = repo().join("configs/bars_350.toml");
    chain(dir, &cfg, None)?;
    let run = load_run_config(&cfg).map_err(|e| e.to_string())?;
    let (w, x_dpc) = dpc_values(dir, &mask_file("right.json"), Some(&mask_file("left.json")), "x", 1)?;
    let (_, y_dpc) = dpc_values(dir, &mask_file("down.json"), Some(&mask_file("up.json")), "y", 1)?;
    let x = edge_band_stats(&run, w, &x_dpc);
    let y = edge_band_stats(&run, w, &y_dpc);
    let mut ok = x.len() == 6;
    let mut parts = Vec::new();
    let rising_sign = x[0].1.signum();
    for &(rising, m, se, n) in &x {
        let sign_ok = if rising { m.signum() == rising_sign } else { m.signum() == -rising_sign };
        ok &= sign_ok && m.abs() >= 5.0 * se && n > 0;
        parts.push(format!("{}{:+.2}({:.0}σ)", if rising { "R" } else { "F" }, m, m.abs() / se));
    }
    let mean_abs = |s: &[(bool, f64, f64, usize)]| s.iter().map(|t| t.1.abs()).sum::<f64>() / s.len() as f64;
    let ratio = mean_abs(&x) / mean_abs(&y);
    ok &= ratio >= 3.0;
    ensure(ok, format!("edges {}; |DPC| θ=0 / θ=π/2 = {ratio:.1}", parts.join(" ")))
}

fn checkerboard(region: &Region) -> ApertureMask {
    let (w, h) = (region.width as usize, region.height as usize);
    let mut b = Bitmap::filled(w, h, false);
    for j in 0..h {
        for i in 0..w {
            b.bits[j * w + i] = (i + j) % 2 == 0;
        }
    }
    ApertureMask::bitmap(b).with_label("checkerboard")
}

fn c4_visibility_ordering(dir: &Path) -> Check {
    let far = RunConfig::default().optics.far_region;
    let board = dir.join("checkerboard.json");
    std::fs::write(&board, checkerboard(&far).to_json()).unwrap();
    let (board, left) = (s(&board), mask_file("left.json"));
    let seeds = 10;
    // [depth][mode][seed]: depth 0 = 350 nm, 1 = 150 nm; mode 0 = asymmetric, 1 = raw
    let mut v = [[vec![], vec![]], [vec![], vec![]]];
    let mut counts = [0u64; 2];
    for (d, base) in ["bars_350.toml", "bars_150.toml"].iter().enumerate() {
        for seed in 1..=seeds {
            let sub = dir.join(format!("{d}_{seed}"));
            std::fs::create_dir_all(&sub).unwrap();
            let cfg = variant(&sub, base, "run.toml", &[("seed", seed.to_string()), ("duration", "1.0".into())]);
            chain(&sub, &cfg, None)?;
            for (m, mask) in [&left, &board].iter().enumerate() {
                let r = qpcm(&sub, &["visibility", "--input", "pairs.qpcm", "--mask", mask, "--roi", "28,54.5,82,54.5", "--roi-width", "30", "--n-lines", "3", "--out", "v.json"])?;
                v[d][m].push(r["v"].as_f64().unwrap());
                if d == 0 && seed == 1 {
                    counts[m] = r["total"].as_u64().unwrap_or(0);
                }
            }
        }
    }
    let diff = |a: &[f64], b: &[f64]| -> (f64, f64) {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        mean_sd(&d)
    };
    let checks = [
        ("asym350>raw350", diff(&v[0][0], &v[0][1])),
        ("asym150>raw150", diff(&v[1][0], &v[1][1])),
        ("asym350>asym150", diff(&v[0][0], &v[1][0])),
        ("raw350>raw150", diff(&v[0][1], &v[1][1])),
    ];
    let mut ok = true;
    let mut parts = vec![format!(
        "V asym/raw 350 nm {:.3}/{:.3}, 150 nm {:.3}/{:.3}",
        mean_sd(&v[0][0]).0,
        mean_sd(&v[0][1]).0,
        mean_sd(&v[1][0]).0,
        mean_sd(&v[1][1]).0
    )];
    for (name, (m, sd)) in checks {
        // σ is the spread of a single seeded repeat, not of the mean
        ok &= m >= 3.0 * sd;
        parts.push(format!("{name} {:.1}σ", m / sd));
    }
    if counts[0] > 0 {
        parts.push(format!("counts asym/raw {}/{}", counts[0], counts[1]));
    }
    ensure(ok, parts.join("; "))
}

fn brute_force(near: &[PhotonEvent], far: &[PhotonEvent], max_dt: i64) -> Vec<(u64, u64)> {
    let mut cands = Vec::new();
    let mut j0 = 0;
    for (i, n) in near.iter().enumerate() {
        while j0 < far.len() && (far[j0].toa as i64) < n.toa as i64 - max_dt {
            j0 += 1;
        }
        for (j, f) in far.iter().enumerate().skip(j0) {
            let dt = f.toa as i64 - n.toa as i64;
            if dt > max_dt {
                break;
            }
            cands.push((dt.abs(), i, j));
        }
    }
    cands.sort_unstable();
    let (mut used_n, mut used_f) = (vec![false; near.len()], vec![false; far.len()]);
    let mut out = Vec::new();
    for (_, i, j) in cands {
        if !used_n[i] && !used_f[j] {
            used_n[i] = true;
            used_f[j] = true;
            out.push((near[i].y as u64, far[j].y as u64));
        }
    }
    out.sort_unstable();
    out
}

fn photon_header(time_bin: f64) -> EventFileHeader {
    let o = OpticsConfig::default();
    EventFileHeader::new(RecordKind::Photon, [256, 256], time_bin, o.near_region, o.far_region, String::new())
}

/// Time-ordered photon stream written as a photon file; `y` carries an id.
fn write_photons(path: &Path, near: &[PhotonEvent], far: &[PhotonEvent]) {
    let mut all: Vec<PhotonEvent> = near.iter().chain(far).copied().collect();
    all.sort_by_key(|p| p.sort_key());
    store::write_file(path, &photon_header(1.5625), &all).unwrap();
}

fn tagged(toa: &[u64], plane: Plane) -> Vec<PhotonEvent> {
    let o = OpticsConfig::default();
    let x = match plane {
        Plane::Near => o.near_region.x0 as f64 + 5.0,
        Plane::Far => o.far_region.x0 as f64 + 5.0,
    };
    toa.iter().enumerate().map(|(i, &t)| PhotonEvent::new(x, i as f64, t, plane, 1)).collect()
}

fn c5_pairing_oracle(dir: &Path) -> Check {
    let cfg = CoincidenceConfig::default();
    let max_dt = cfg.max_dt_ticks(1.5625).unwrap() as i64;
    let mut total_pairs = 0;
    for seed in 0..200u64 {
        let mut rng = stream(seed, Domain::Test, 5);
        let total = rng.random_range(2..=10_000usize);
        let n_near = rng.random_range(1..total);
        // from sparse to heavily overlapping
        let span = (total as u64 * rng.random_range(1..200u64)).max(1);
        let mut draw = |n: usize| {
            let mut t: Vec<u64> = (0..n).map(|_| rng.random_range(0..span)).collect();
            t.sort_unstable();
            t
        };
        let near = tagged(&draw(n_near), Plane::Near);
        let far = tagged(&draw(total - n_near), Plane::Far);
        let expected = brute_force(&near, &far, max_dt);
        write_photons(&dir.join("photons.qpcm"), &near, &far);
        qpcm(dir, &["pair", "--input", "photons.qpcm", "--out", "pairs.qpcm"])?;
        let (_, pairs) = store::read_file::<CoincidencePair>(&dir.join("pairs.qpcm")).map_err(|e| e.to_string())?;
        let mut got: Vec<(u64, u64)> = pairs.iter().map(|p| (p.near.y as u64, p.far.y as u64)).collect();
        got.sort_unstable();
        if got != expected {
            return Err(format!("stream {seed}: {} pairs vs {} from brute force", got.len(), expected.len()));
        }
        total_pairs += got.len();
    }
    Ok(format!("200 streams identical, {total_pairs} pairs"))
}

fn c6_accidentals(dir: &Path) -> Check {
    let (rate, duration, window) = (1.0e4, 100.0, 20.0);
    let bin: f64 = 1.5625;
    let realisations = 10;
    let gap = Exp::new(rate * 1e-9).unwrap();
    let mut found = Vec::new();
    for r in 0..realisations {
        let mut rng = stream(r, Domain::Test, 6);
        let mut poisson = || {
            let mut t = 0.0;
            let mut v = Vec::new();
            loop {
                t += gap.sample(&mut rng);
                if t >= duration * 1e9 {
                    return v;
                }
                v.push((t / bin).round() as u64);
            }
        };
        let near = tagged(&poisson(), Plane::Near);
        let far = tagged(&poisson(), Plane::Far);
        write_photons(&dir.join("photons.qpcm"), &near, &far);
        let s = qpcm(dir, &["pair", "--input", "photons.qpcm", "--out", "pairs.qpcm"])?;
        found.push(s["stats"]["pairs"].as_f64().unwrap());
    }
    let (mean, _) = mean_sd(&found);
    let expected = accidental_rate(rate, rate, window) * duration;
    let dev = mean / expected - 1.0;
    ensure(dev.abs() <= 0.10, format!("mean {mean:.1} accidentals over {realisations} runs vs 2·r₁·r₂·τ·T = {expected:.0} ({:+.1}%)", dev * 100.0))
}

fn c7_efficiency_scaling(dir: &Path) -> Check {
    let s = qpcm(dir, &["--config", &s(&repo().join("configs/flat.toml")), "sweep", "--param", "efficiency", "--values", "0.05,0.1,0.2,0.4", "--out", "sweep.csv"])?;
    let eta = [0.05f64, 0.1, 0.2, 0.4];
    let pairs: Vec<f64> = s["pairs"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = (eta.iter().map(|e| e.ln()).collect(), pairs.iter().map(|p| p.ln()).collect());
    let (mx, _) = mean_sd(&x);
    let (my, _) = mean_sd(&y);
    let slope = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
    ensure((slope - 2.0).abs() <= 0.1, format!("pairs {pairs:?}, slope {slope:.3}"))
}

fn c8_anticorrelation(_: &Path) -> Check {
    let src = SourceConfig { pair_rate: 1.2e5, duration: 1.0, k_sum_sigma: 0.01 * SourceConfig::default().k_sigma, ..Default::default() };
    let optics = OpticsConfig::default();
    let cam = CameraConfig { efficiency: 1.0, ..Default::default() };
    let pairs = generate_pairs(&src, 8).map_err(|e| e.to_string())?;
    let mut truth = Vec::new();
    let mut arrivals = Vec::new();
    for p in &pairs {
        if let Some(pos) = optics.map_far(p.k_idler) {
            // one idler per microsecond: clusters never overlap
            arrivals.push(Arrival { t_ns: 1000.0 * (arrivals.len() + 1) as f64, pos, plane: Plane::Far });
            truth.push(p.k_signal);
            if truth.len() == 100_000 {
                break;
            }
        }
    }
    let mut rng = stream(8, Domain::Detector, 0);
    let mut raw = Vec::new();
    for a in &arrivals {
        detect(a, &cam, &mut rng, &mut raw);
    }
    raw.sort_by_key(|e| e.sort_key());
    let out = cluster_and_centroid(&raw, &CentroidParams::default(), cam.time_bin, &optics.near_region, &optics.far_region).map_err(|e| e.to_string())?;
    if out.photons.len() != truth.len() {
        return Err(format!("{} idler photons for {} pairs", out.photons.len(), truth.len()));
    }
    let centre = optics.far_region.center();
    let mut r = Vec::new();
    for axis in 0..2 {
        let pick = |v: Vec2| if axis == 0 { v.x } else { v.y };
        let t: Vec<f64> = truth.iter().map(|&k| pick(k)).collect();
        let offset: Vec<f64> = out.photons.iter().map(|p| pick(p.pos() - centre)).collect();
        let inferred: Vec<f64> = out.photons.iter().map(|p| pick(optics.infer_signal_k(p.pos()))).collect();
        r.push((pearson(&offset, &t), pearson(&inferred, &t)));
    }
    let ok = r.iter().all(|(raw, inf)| *raw <= -0.99 && *inf >= 0.99);
    ensure(
        ok,
        format!(
            "{} pairs; corr(idler pixel offset, signal k) x {:.5} y {:.5}; corr(inferred, true) x {:.5} y {:.5}",
            truth.len(),
            r[0].0,
            r[1].0,
            r[0].1,
            r[1].1
        ),
    )
}

fn c9_centroiding(dir: &Path) -> Check {
    let rate = 3.0e4;
    let o = OpticsConfig::default();
    let cam = CameraConfig { efficiency: 1.0, ..Default::default() };
    let mut rng = stream(9, Domain::Test, 9);
    let gap = Exp::new(rate * 1e-9).unwrap();
    let mut arrivals = Vec::new();
    let mut t = 1000.0;
    while t < 1.0e9 {
        let (region, plane) = if rng.random_bool(0.5) { (o.near_region, Plane::Near) } else { (o.far_region, Plane::Far) };
        let x = region.x0 as f64 + 1.0 + rng.random::<f64>() * (region.width as f64 - 3.0);
        let y = region.y0 as f64 + 1.0 + rng.random::<f64>() * (region.height as f64 - 3.0);
        arrivals.push(Arrival { t_ns: t, pos: Vec2::new(x, y), plane });
        t += gap.sample(&mut rng);
    }
    let mut det_rng = stream(9, Domain::Detector, 0);
    let mut raw: Vec<RawEvent> = Vec::new();
    let mut detected = Vec::new();
    for a in &arrivals {
        let before = raw.len();
        detect(a, &cam, &mut det_rng, &mut raw);
        if raw.len() > before {
            detected.push(*a);
        }
    }
    raw.sort_by_key(|e| e.sort_key());
    let h = EventFileHeader::new(RecordKind::Raw, cam.sensor_size, cam.time_bin, o.near_region, o.far_region, "{\"exposure_s\":1.0}".into());
    store::write_file(&dir.join("raw.qpcm"), &h, &raw).map_err(|e| e.to_string())?;
    qpcm(dir, &["centroid", "--input", "raw.qpcm", "--out", "photons.qpcm"])?;
    let (_, photons) = store::read_file::<PhotonEvent>(&dir.join("photons.qpcm")).map_err(|e| e.to_string())?;
    // nearest detection in the same plane within ±100 ns
    let times: Vec<f64> = detected.iter().map(|a| a.t_ns).collect();
    let mut se = 0.0;
    let mut matched = 0usize;
    for p in &photons {
        let tp = p.toa as f64 * cam.time_bin;
        let lo = times.partition_point(|&x| x < tp - 100.0);
        let hi = times.partition_point(|&x| x <= tp + 100.0);
        let best = detected[lo..hi].iter().filter(|a| a.plane == p.plane).map(|a| (a.pos - p.pos()).norm()).fold(f64::INFINITY, f64::min);
        if best.is_finite() {
            se += best * best;
            matched += 1;
        }
    }
    let rms = (se / matched as f64).sqrt();
    let ratio = photons.len() as f64 / detected.len() as f64;
    ensure(
        (ratio - 1.0).abs() <= 0.02 && rms < 0.5,
        format!("{} photons for {} detections ({:+.2}%), centroid RMS {rms:.3} px at {rate:.0}/s", photons.len(), detected.len(), (ratio - 1.0) * 100.0),
    )
}

fn c10_noise_suppression(dir: &Path) -> Check {
    let cfg = repo().join("configs/noise.toml");
    let run = load_run_config(&cfg).map_err(|e| e.to_string())?;
    chain(dir, &cfg, None)?;
    let coinc = render_counts(dir, &mask_file("full.json"), "frames")?;
    let (_, photons) = store::read_file::<PhotonEvent>(&dir.join("photons.qpcm")).map_err(|e| e.to_string())?;
    let near_photons: Vec<PhotonEvent> = photons.iter().filter(|p| p.plane == Plane::Near).copied().collect();
    let near = run.optics.near_region;
    let singles = accumulate_events(&near_photons, &near, 1).map_err(|e| e.to_string())?;
    let centre = run.optics.map_near(Vec2::new(0.0, 0.0)).unwrap();
    let radius = (run.optics.map_near(Vec2::new(5.0 * run.source.pos_sigma.x, 0.0)).unwrap() - centre).norm();
    let (mut bg_coinc, mut bg_singles, mut n) = (0.0, 0.0, 0);
    for j in 0..near.height as usize {
        for i in 0..near.width as usize {
            let p = Vec2::new((near.x0 as usize + i) as f64, (near.y0 as usize + j) as f64);
            if (p - centre).norm() > radius {
                bg_coinc += coinc[j * near.width as usize + i];
                bg_singles += singles.at(i, j) as f64;
                n += 1;
            }
        }
    }
    let ratio = bg_singles / bg_coinc.max(1.0);
    let dark_ratio = run.camera.dark_rate / run.source.pair_rate;
    ensure(
        ratio >= 50.0 && dark_ratio >= 10.0,
        format!("darks at {dark_ratio:.0}x pair rate; background over {n} px: singles {bg_singles:.0}, coincidences {bg_coinc:.0}, suppression {ratio:.0}x"),
    )
}

fn c11_store_roundtrip(dir: &Path) -> Check {
    let n = 1_000_000;
    let mut rng = stream(11, Domain::Test, 11);
    fn coord(rng: &mut impl Rng) -> f64 {
        quantize_subpixel(rng.random_range(0.0..255.99))
    }
    fn photon(rng: &mut impl Rng, plane: Plane) -> PhotonEvent {
        PhotonEvent { x: coord(rng), y: coord(rng), toa: rng.random_range(0..1u64 << 40), plane, n_pixels: rng.random() }
    }
    fn roundtrip<T: Record + PartialEq>(path: &Path, recs: &[T]) -> Result<(), String> {
        let o = OpticsConfig::default();
        let h = EventFileHeader::new(T::KIND, [256, 256], 1.5625, o.near_region, o.far_region, "{}".into());
        store::write_file(path, &h, recs).map_err(|e| e.to_string())?;
        let (back_h, back) = store::read_file::<T>(path).map_err(|e| e.to_string())?;
        if back_h != h || back != recs {
            return Err(format!("{:?} records differ after round trip", T::KIND));
        }
        let bytes = std::fs::read(path).unwrap();
        let mut w = EventWriter::new(Vec::new(), &h).map_err(|e| e.to_string())?;
        w.write(&back).map_err(|e| e.to_string())?;
        if w.finish().map_err(|e| e.to_string())? != bytes {
            return Err(format!("{:?} re-encoding differs", T::KIND));
        }
        Ok(())
    }
    let raw: Vec<RawEvent> = (0..n).map(|_| RawEvent { toa: rng.random(), x: rng.random(), y: rng.random(), tot: rng.random(), flags: rng.random() }).collect();
    roundtrip(&dir.join("raw.qpcm"), &raw)?;
    let photons: Vec<PhotonEvent> = (0..n).map(|i| photon(&mut rng, if i % 2 == 0 { Plane::Near } else { Plane::Far })).collect();
    roundtrip(&dir.join("photons.qpcm"), &photons)?;
    let pairs: Vec<CoincidencePair> = (0..n)
        .map(|_| {
            let near = photon(&mut rng, Plane::Near);
            let mut far = photon(&mut rng, Plane::Far);
            let dt = rng.random_range(-1000i64..1000);
            far.toa = near.toa.checked_add_signed(dt).unwrap();
            CoincidencePair { near, far, dt }
        })
        .collect();
    roundtrip(&dir.join("pairs.qpcm"), &pairs)?;

    let bytes = std::fs::read(dir.join("pairs.qpcm")).unwrap();
    let cut = &bytes[..bytes.len() - CoincidencePair::SIZE / 2];
    let truncated = EventReader::new(std::io::Cursor::new(cut)).and_then(|r| r.read_all::<CoincidencePair>()).unwrap_err();
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    let magic = EventReader::new(std::io::Cursor::new(&bad)).and_then(|r| r.read_all::<CoincidencePair>()).unwrap_err();
    let (a, b) = (truncated.category(), magic.category());
    ensure(a == "truncated" && b == "bad_magic", format!("3 x {n} records bit-exact; truncation → {a}, bad magic → {b}"))
}

fn c12_determinism(dir: &Path) -> Check {
    let mut outputs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    let workers = [1, 2, 7];
    let cfg = variant(dir, "bars_350.toml", "run.toml", &[("seed", "12".into()), ("duration", "1.0".into())]);
    for w in workers {
        let sub = dir.join(format!("w{w}"));
        std::fs::create_dir_all(&sub).unwrap();
        chain(&sub, &cfg, Some(w))?;
        let ws = w.to_string();
        let (full, right, left) = (mask_file("full.json"), mask_file("right.json"), mask_file("left.json"));
        qpcm(&sub, &["--workers", &ws, "render", "--input", "pairs.qpcm", "--mask", &full, "--mask", &right, "--mask", &left, "--out-dir", "frames"])?;
        qpcm(&sub, &["--workers", &ws, "dpc", "--input", "pairs.qpcm", "--mask-a", &right, "--mask-b", &left, "--out", "dpc"])?;
        let mut files = Vec::new();
        for f in ["raw.qpcm", "photons.qpcm", "pairs.qpcm", "pairs.qpcm.manifest.json", "dpc.csv", "dpc.pgm", "dpc.json"] {
            files.push((f.to_string(), std::fs::read(sub.join(f)).unwrap()));
        }
        let mut frames: Vec<_> = std::fs::read_dir(sub.join("frames")).unwrap().map(|e| e.unwrap().path()).collect();
        frames.sort();
        for f in frames {
            files.push((format!("frames/{}", f.file_name().unwrap().to_str().unwrap()), std::fs::read(&f).unwrap()));
        }
        outputs.push(files);
    }
    for (k, o) in outputs.iter().enumerate().skip(1) {
        if o != &outputs[0] {
            let diff: Vec<&str> = o.iter().zip(&outputs[0]).filter(|(a, b)| a != b).map(|(a, _)| a.0.as_str()).collect();
            return Err(format!("workers {} differs from workers 1: {diff:?}", workers[k]));
        }
    }
    Ok(format!("{} files byte-identical across workers {workers:?}", outputs[0].len()))
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit_s: f64,
    run: fn(&Path) -> Check,
}

const CRITERIA: [Criterion; 12] = [
    Criterion { id: 1, name: "DPC antisymmetry", limit_s: 5.0, run: c1_antisymmetry },
    Criterion { id: 2, name: "flat-target null", limit_s: 60.0, run: c2_flat_null },
    Criterion { id: 3, name: "edge-sign reproduction", limit_s: 120.0, run: c3_edge_signs },
    Criterion { id: 4, name: "visibility ordering", limit_s: 600.0, run: c4_visibility_ordering },
    Criterion { id: 5, name: "pairing oracle equivalence", limit_s: 60.0, run: c5_pairing_oracle },
    Criterion { id: 6, name: "accidental-rate law", limit_s: 30.0, run: c6_accidentals },
    Criterion { id: 7, name: "quadratic efficiency scaling", limit_s: 300.0, run: c7_efficiency_scaling },
    Criterion { id: 8, name: "momentum anti-correlation", limit_s: 30.0, run: c8_anticorrelation },
    Criterion { id: 9, name: "centroiding fidelity", limit_s: 30.0, run: c9_centroiding },
    Criterion { id: 10, name: "noise suppression", limit_s: 60.0, run: c10_noise_suppression },
    Criterion { id: 11, name: "store round-trip", limit_s: 30.0, run: c11_store_roundtrip },
    Criterion { id: 12, name: "determinism", limit_s: 120.0, run: c12_determinism },
];

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    // `cargo test` passes harness flags such as --list; only a bare run executes
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let tmp = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let result = std::panic::catch_unwind(|| (c.run)(tmp.path())).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match result {
            Ok(d) if secs <= c.limit_s => (true, d),
            Ok(d) => (false, format!("{d}; over time limit")),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!("{} {:>2} {:<28} {:>6.1}s / {:>3.0}s  {detail}", if ok { "PASS" } else { "FAIL" }, c.id, c.name, secs, c.limit_s);
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
