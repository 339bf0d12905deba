//! Near/far coincidence identification.
//!
//! Two detections pair when their arrival-time difference is strictly below
//! the window. Candidates are resolved greedily by ascending |Δt|, ties going
//! to the earlier near event and then the earlier far event. The merged
//! stream is split wherever no candidate can straddle a gap, and the pieces
//! are matched independently; this yields exactly the global greedy matching.

use serde::{Deserialize, Serialize};

use crate::centroid::PhotonEvent;
use crate::error::{Error, Result};
use crate::exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Greedy by smallest |Δt|.
    ClosestTime,
    /// Each near event, in time order, takes the earliest free far event.
    FirstCome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoincidenceConfig {
    /// Pairs require |Δt| < window (ns).
    pub window: f64,
    pub policy: TieBreak,
    pub max_pairs_per_event: u32,
}

impl Default for CoincidenceConfig {
    fn default() -> Self {
        CoincidenceConfig { window: 20.0, policy: TieBreak::ClosestTime, max_pairs_per_event: 1 }
    }
}

impl CoincidenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window > 0.0) {
            return Err(Error::config("coincidence.window must be > 0"));
        }
        if self.max_pairs_per_event != 1 {
            return Err(Error::config("coincidence.max_pairs_per_event must be 1"));
        }
        Ok(())
    }

    /// Largest tick difference `d` with `d * time_bin < window`, or `None`
    /// if even simultaneous events cannot pair.
    pub fn max_dt_ticks(&self, time_bin: f64) -> Option<u64> {
        let mut k = (self.window / time_bin).ceil() as i64;
        while k >= 0 && k as f64 * time_bin >= self.window {
            k -= 1;
        }
        while (k + 1) as f64 * time_bin < self.window {
            k += 1;
        }
        (k >= 0).then_some(k as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoincidencePair {
    pub near: PhotonEvent,
    pub far: PhotonEvent,
    /// `far.toa - near.toa` in time_bin units.
    pub dt: i64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStats {
    pub pairs: u64,
    pub singles_near: u64,
    pub singles_far: u64,
    /// Near events that had more than one far candidate in the window.
    pub multi_candidate_count: u64,
}

/// Expected accidental coincidences per second between two independent
/// Poisson streams for a |Δt| < window acceptance.
pub fn accidental_rate(rate_near_hz: f64, rate_far_hz: f64, window_ns: f64) -> f64 {
    2.0 * rate_near_hz * rate_far_hz * window_ns * 1e-9
}

/// Pair two complete time-sorted streams.
pub fn pair_events(
    near: &[PhotonEvent],
    far: &[PhotonEvent],
    cfg: &CoincidenceConfig,
    time_bin: f64,
) -> Result<(Vec<CoincidencePair>, PairStats)> {
    let mut p = Pairer::new(cfg, time_bin)?;
    p.push(near, far)?;
    Ok(p.finish())
}

/// Incremental pairer: feed both streams in arbitrary chunk sizes; output
/// is identical to [`pair_events`] over the concatenation.
pub struct Pairer {
    policy: TieBreak,
    max_dt: Option<u64>,
    near: Vec<(u64, PhotonEvent)>,
    far: Vec<(u64, PhotonEvent)>,
    near_seen: u64,
    far_seen: u64,
    near_last: Option<u64>,
    far_last: Option<u64>,
    pairs: Vec<CoincidencePair>,
    stats: PairStats,
}

impl Pairer {
    pub fn new(cfg: &CoincidenceConfig, time_bin: f64) -> Result<Self> {
        cfg.validate()?;
        if !(time_bin > 0.0) {
            return Err(Error::config("time_bin must be > 0"));
        }
        Ok(Pairer {
            policy: cfg.policy,
            max_dt: cfg.max_dt_ticks(time_bin),
            near: Vec::new(),
            far: Vec::new(),
            near_seen: 0,
            far_seen: 0,
            near_last: None,
            far_last: None,
            pairs: Vec::new(),
            stats: PairStats::default(),
        })
    }

    pub fn push(&mut self, near: &[PhotonEvent], far: &[PhotonEvent]) -> Result<()> {
        append_sorted(&mut self.near, &mut self.near_seen, &mut self.near_last, near)?;
        append_sorted(&mut self.far, &mut self.far_seen, &mut self.far_last, far)?;
        // neither stream can deliver anything earlier than this any more
        let horizon = match (self.near_last, self.far_last) {
            (Some(a), Some(b)) => a.min(b),
            _ => return Ok(()),
        };
        self.flush(Some(horizon));
        Ok(())
    }

    /// Pairs finalised so far, in near-time order.
    pub fn take_pairs(&mut self) -> Vec<CoincidencePair> {
        std::mem::take(&mut self.pairs)
    }

    pub fn finish(mut self) -> (Vec<CoincidencePair>, PairStats) {
        self.flush(None);
        (self.pairs, self.stats)
    }

    fn flush(&mut self, horizon: Option<u64>) {
        let Some(max_dt) = self.max_dt else {
            self.stats.singles_near += self.near.len() as u64;
            self.stats.singles_far += self.far.len() as u64;
            self.near.clear();
            self.far.clear();
            return;
        };
        let segments = segment(&self.near, &self.far, max_dt);
        // a cut before toa `b` is final once both streams have reached `b`
        let take = match horizon {
            None => segments.len(),
            Some(h) => segments
                .iter()
                .rposition(|s| s.next_start.is_some_and(|b| b <= h))
                .map_or(0, |i| i + 1),
        };
        if take == 0 {
            return;
        }
        let policy = self.policy;
        let near = &self.near;
        let far = &self.far;
        let results = exec::map_slice(&segments[..take], |s| {
            match_segment(&near[s.near.clone()], &far[s.far.clone()], max_dt, policy)
        });
        let (mut n_used, mut f_used) = (0usize, 0usize);
        for (s, (pairs, multi)) in segments[..take].iter().zip(results) {
            self.stats.pairs += pairs.len() as u64;
            self.stats.singles_near += (s.near.len() - pairs.len()) as u64;
            self.stats.singles_far += (s.far.len() - pairs.len()) as u64;
            self.stats.multi_candidate_count += multi;
            self.pairs.extend(pairs);
            n_used = s.near.end;
            f_used = s.far.end;
        }
        self.near.drain(..n_used);
        self.far.drain(..f_used);
    }
}

fn append_sorted(
    buf: &mut Vec<(u64, PhotonEvent)>,
    seen: &mut u64,
    last: &mut Option<u64>,
    events: &[PhotonEvent],
) -> Result<()> {
    for e in events {
        if let Some(prev) = *last {
            if e.toa < prev {
                return Err(Error::StreamOrder { index: *seen as usize, previous: prev, toa: e.toa });
            }
        }
        *last = Some(e.toa);
        buf.push((*seen, *e));
        *seen += 1;
    }
    Ok(())
}

struct Segment {
    near: std::ops::Range<usize>,
    far: std::ops::Range<usize>,
    /// toa of the first event after this segment, if buffered.
    next_start: Option<u64>,
}

/// Split buffered events where consecutive merged toas differ by more than `max_dt`.
fn segment(near: &[(u64, PhotonEvent)], far: &[(u64, PhotonEvent)], max_dt: u64) -> Vec<Segment> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    let (mut si, mut sj) = (0, 0);
    let mut prev: Option<u64> = None;
    while i < near.len() || j < far.len() {
        let take_near = j >= far.len() || (i < near.len() && near[i].1.toa <= far[j].1.toa);
        let t = if take_near { near[i].1.toa } else { far[j].1.toa };
        if let Some(p) = prev {
            if t - p > max_dt {
                out.push(Segment { near: si..i, far: sj..j, next_start: Some(t) });
                si = i;
                sj = j;
            }
        }
        prev = Some(t);
        if take_near {
            i += 1;
        } else {
            j += 1;
        }
    }
    if prev.is_some() {
        out.push(Segment { near: si..i, far: sj..j, next_start: None });
    }
    out
}

fn match_segment(
    near: &[(u64, PhotonEvent)],
    far: &[(u64, PhotonEvent)],
    max_dt: u64,
    policy: TieBreak,
) -> (Vec<CoincidencePair>, u64) {
    if near.is_empty() || far.is_empty() {
        return (Vec::new(), 0);
    }
    // candidate edges (|dt|, near idx, far idx), local indices
    let mut edges: Vec<(u64, usize, usize)> = Vec::new();
    let mut multi = 0;
    let mut lo = 0;
    for (a, (_, n)) in near.iter().enumerate() {
        while lo < far.len() && far[lo].1.toa + max_dt < n.toa {
            lo += 1;
        }
        let mut count = 0;
        for (b, (_, f)) in far.iter().enumerate().skip(lo) {
            if f.toa > n.toa + max_dt {
                break;
            }
            edges.push((f.toa.abs_diff(n.toa), a, b));
            count += 1;
        }
        if count > 1 {
            multi += 1;
        }
    }
    match policy {
        // local indices are monotone in the global ones, so this is the global tie-break
        TieBreak::ClosestTime => edges.sort_unstable(),
        TieBreak::FirstCome => edges.sort_unstable_by_key(|&(_, a, b)| (a, b)),
    }
    let mut near_used = vec![false; near.len()];
    let mut far_used = vec![false; far.len()];
    let mut matched: Vec<(usize, usize)> = Vec::new();
    for (_, a, b) in edges {
        if !near_used[a] && !far_used[b] {
            near_used[a] = true;
            far_used[b] = true;
            matched.push((a, b));
        }
    }
    matched.sort_unstable();
    let pairs = matched
        .into_iter()
        .map(|(a, b)| {
            let (n, f) = (near[a].1, far[b].1);
            CoincidencePair { near: n, far: f, dt: f.toa as i64 - n.toa as i64 }
        })
        .collect();
    (pairs, multi)
}

/// Histogram of pair Δt with one bin per time quantum over the acceptance
/// window: `(bin_start_ns, count)` rows.
pub fn dt_histogram(pairs: &[CoincidencePair], cfg: &CoincidenceConfig, time_bin: f64) -> Vec<(f64, u64)> {
    let Some(max_dt) = cfg.max_dt_ticks(time_bin) else {
        return Vec::new();
    };
    let m = max_dt as i64;
    let mut counts = vec![0u64; (2 * m + 1) as usize];
    for p in pairs {
        if p.dt.abs() <= m {
            counts[(p.dt + m) as usize] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (((i as i64 - m) as f64 - 0.5) * time_bin, c))
        .collect()
}
