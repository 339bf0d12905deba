//! Digital Fourier-plane apertures.
//!
//! Masks live in far-region-relative pixel coordinates: pixel `(i, j)` of the
//! far region is centred on `(i, j)`, and half planes are measured from the
//! region centre. All boundaries are closed.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::coinc::CoincidencePair;
use crate::error::{Error, Result};
use crate::geom::{Region, Vec2};

#[derive(Debug, Clone, PartialEq)]
pub enum MaskKind {
    Full,
    /// `(p - c) · (cos θ, sin θ) >= offset`.
    HalfPlane { angle: f64, offset: f64 },
    Disk { center: Vec2, radius: f64 },
    Annulus { center: Vec2, r_in: f64, r_out: f64 },
    Bitmap(Bitmap),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    pub width: usize,
    pub height: usize,
    /// Row-major, row 0 first.
    pub bits: Vec<bool>,
}

impl Bitmap {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Bitmap { width, height, bits: vec![value; width * height] }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[j * self.width + i]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Run lengths per row, alternating outside/inside and starting with an
    /// outside run (possibly zero).
    pub fn to_runs(&self) -> Vec<Vec<u32>> {
        self.bits
            .chunks(self.width.max(1))
            .map(|row| {
                let mut runs = Vec::new();
                let mut current = false;
                let mut len = 0u32;
                for &b in row {
                    if b == current {
                        len += 1;
                    } else {
                        runs.push(len);
                        current = b;
                        len = 1;
                    }
                }
                runs.push(len);
                runs
            })
            .collect()
    }

    pub fn from_runs(width: usize, height: usize, rows: &[Vec<u32>]) -> Result<Self> {
        if rows.len() != height {
            return Err(Error::Format(format!("bitmap has {} rows, expected {height}", rows.len())));
        }
        let mut bits = Vec::with_capacity(width * height);
        for (j, runs) in rows.iter().enumerate() {
            let start = bits.len();
            let mut value = false;
            for &r in runs {
                bits.extend(std::iter::repeat_n(value, r as usize));
                value = !value;
            }
            if bits.len() - start != width {
                return Err(Error::Format(format!("bitmap row {j} covers {} pixels, expected {width}", bits.len() - start)));
            }
        }
        Ok(Bitmap { width, height, bits })
    }
}

/// Coverage of a rectangle of far-field coordinates by a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    Inside,
    Outside,
    Partial,
}

// keeps cell classification consistent with per-point rounding
const CLASSIFY_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ApertureMask {
    pub kind: MaskKind,
    pub label: String,
}

impl ApertureMask {
    pub fn full() -> Self {
        ApertureMask { kind: MaskKind::Full, label: "full".into() }
    }

    pub fn half_plane(angle: f64, offset: f64) -> Self {
        let angle = normalize_angle(angle);
        ApertureMask {
            kind: MaskKind::HalfPlane { angle, offset },
            label: format!("half_plane({angle:.4},{offset})"),
        }
    }

    pub fn disk(center: Vec2, radius: f64) -> Self {
        ApertureMask { kind: MaskKind::Disk { center, radius }, label: "disk".into() }
    }

    pub fn annulus(center: Vec2, r_in: f64, r_out: f64) -> Self {
        ApertureMask { kind: MaskKind::Annulus { center, r_in, r_out }, label: "annulus".into() }
    }

    pub fn bitmap(bitmap: Bitmap) -> Self {
        ApertureMask { kind: MaskKind::Bitmap(bitmap), label: "bitmap".into() }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn validate(&self, region: &Region) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("invalid aperture: {m}")));
        match &self.kind {
            MaskKind::Full => Ok(()),
            MaskKind::HalfPlane { angle, offset } => {
                if !angle.is_finite() || !offset.is_finite() {
                    return bad("half_plane parameters must be finite");
                }
                Ok(())
            }
            MaskKind::Disk { center, radius } => {
                if !(*radius > 0.0) || !center.x.is_finite() || !center.y.is_finite() {
                    return bad("disk radius must be > 0");
                }
                Ok(())
            }
            MaskKind::Annulus { center, r_in, r_out } => {
                if !(*r_in > 0.0 && r_in < r_out) || !center.x.is_finite() || !center.y.is_finite() {
                    return bad("annulus needs 0 < r_in < r_out");
                }
                Ok(())
            }
            MaskKind::Bitmap(b) => {
                if b.width != region.width as usize || b.height != region.height as usize || b.bits.len() != b.width * b.height {
                    return bad(&format!(
                        "bitmap is {}x{}, far region is {}x{}",
                        b.width, b.height, region.width, region.height
                    ));
                }
                Ok(())
            }
        }
    }

    /// Membership of a far-region-relative coordinate.
    pub fn contains_local(&self, p: Vec2, region: &Region) -> bool {
        match &self.kind {
            MaskKind::Full => true,
            MaskKind::HalfPlane { angle, offset } => {
                let d = p - region.local_center();
                d.x * angle.cos() + d.y * angle.sin() >= *offset
            }
            MaskKind::Disk { center, radius } => (p - *center).norm() <= *radius,
            MaskKind::Annulus { center, r_in, r_out } => {
                let r = (p - *center).norm();
                r >= *r_in && r <= *r_out
            }
            MaskKind::Bitmap(b) => {
                let i = (p.x + 0.5).floor();
                let j = (p.y + 0.5).floor();
                i >= 0.0 && j >= 0.0 && (i as usize) < b.width && (j as usize) < b.height && b.get(i as usize, j as usize)
            }
        }
    }

    /// Membership of an absolute sensor coordinate in the far region.
    pub fn contains(&self, p: Vec2, region: &Region) -> bool {
        self.contains_local(region.to_local(p), region)
    }

    /// Rasterise onto the far-region pixel grid (pixel centres).
    pub fn rasterize(&self, region: &Region) -> Bitmap {
        let (w, h) = (region.width as usize, region.height as usize);
        let mut bits = Vec::with_capacity(w * h);
        for j in 0..h {
            for i in 0..w {
                bits.push(self.contains_local(Vec2::new(i as f64, j as f64), region));
            }
        }
        Bitmap { width: w, height: h, bits }
    }

    /// Number of far-region pixel centres inside the mask.
    pub fn area(&self, region: &Region) -> usize {
        self.rasterize(region).count()
    }

    pub fn complement(&self, region: &Region) -> ApertureMask {
        let label = format!("not {}", self.label);
        let kind = match &self.kind {
            MaskKind::HalfPlane { angle, offset } => {
                MaskKind::HalfPlane { angle: normalize_angle(angle + PI), offset: -offset }
            }
            MaskKind::Bitmap(b) => MaskKind::Bitmap(Bitmap { bits: b.bits.iter().map(|v| !v).collect(), ..b.clone() }),
            MaskKind::Full => MaskKind::Bitmap(Bitmap::filled(region.width as usize, region.height as usize, false)),
            MaskKind::Disk { .. } | MaskKind::Annulus { .. } => {
                let r = self.rasterize(region);
                MaskKind::Bitmap(Bitmap { bits: r.bits.iter().map(|v| !v).collect(), ..r })
            }
        };
        ApertureMask { kind, label }
    }

    /// Classify the closed local rectangle `[lo, hi]`. `Inside`/`Outside` are
    /// only returned when every point of the rectangle agrees with
    /// [`contains_local`](Self::contains_local).
    pub fn classify_rect(&self, lo: Vec2, hi: Vec2, region: &Region) -> Coverage {
        let corners = [lo, Vec2::new(hi.x, lo.y), Vec2::new(lo.x, hi.y), hi];
        let nearest = |c: Vec2| {
            let dx = (lo.x - c.x).max(0.0).max(c.x - hi.x);
            let dy = (lo.y - c.y).max(0.0).max(c.y - hi.y);
            dx.hypot(dy)
        };
        let farthest = |c: Vec2| corners.iter().map(|&p| (p - c).norm()).fold(0.0, f64::max);
        match &self.kind {
            MaskKind::Full => Coverage::Inside,
            MaskKind::HalfPlane { angle, offset } => {
                let u = Vec2::new(angle.cos(), angle.sin());
                let c = region.local_center();
                let proj = corners.map(|p| (p - c).dot(u));
                let (mn, mx) = proj.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                if mn >= offset + CLASSIFY_MARGIN {
                    Coverage::Inside
                } else if mx < offset - CLASSIFY_MARGIN {
                    Coverage::Outside
                } else {
                    Coverage::Partial
                }
            }
            MaskKind::Disk { center, radius } => {
                if farthest(*center) <= radius - CLASSIFY_MARGIN {
                    Coverage::Inside
                } else if nearest(*center) > radius + CLASSIFY_MARGIN {
                    Coverage::Outside
                } else {
                    Coverage::Partial
                }
            }
            MaskKind::Annulus { center, r_in, r_out } => {
                let (n, f) = (nearest(*center), farthest(*center));
                if n >= r_in + CLASSIFY_MARGIN && f <= r_out - CLASSIFY_MARGIN {
                    Coverage::Inside
                } else if f < r_in - CLASSIFY_MARGIN || n > r_out + CLASSIFY_MARGIN {
                    Coverage::Outside
                } else {
                    Coverage::Partial
                }
            }
            MaskKind::Bitmap(_) => Coverage::Partial,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MaskWire::from(self)).expect("mask serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: MaskWire = serde_json::from_str(text).map_err(|e| Error::config(format!("invalid aperture: {e}")))?;
        ApertureMask::try_from(wire)
    }
}

pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Keep pairs whose far-field coordinate is inside the mask, in order.
pub fn select_pairs(pairs: &[CoincidencePair], mask: &ApertureMask, far: &Region) -> Vec<CoincidencePair> {
    pairs.iter().filter(|p| mask.contains(p.far.pos(), far)).copied().collect()
}

/// Split pairs into (inside, outside). Boundary points belong to the mask.
pub fn partition_pairs(
    pairs: &[CoincidencePair],
    mask: &ApertureMask,
    far: &Region,
) -> (Vec<CoincidencePair>, Vec<CoincidencePair>) {
    pairs.iter().partition(|p| mask.contains(p.far.pos(), far))
}

/// Wire form of a mask: a flat JSON object with `kind`, its parameters and
/// `label`. Bitmaps carry run-length encoded rows.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskWire {
    pub kind: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_out: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<u32>>>,
}

impl From<&ApertureMask> for MaskWire {
    fn from(m: &ApertureMask) -> Self {
        let mut w = MaskWire { label: m.label.clone(), ..Default::default() };
        match &m.kind {
            MaskKind::Full => w.kind = "full".into(),
            MaskKind::HalfPlane { angle, offset } => {
                w.kind = "half_plane".into();
                w.angle = Some(*angle);
                w.offset = Some(*offset);
            }
            MaskKind::Disk { center, radius } => {
                w.kind = "disk".into();
                w.center = Some(*center);
                w.radius = Some(*radius);
            }
            MaskKind::Annulus { center, r_in, r_out } => {
                w.kind = "annulus".into();
                w.center = Some(*center);
                w.r_in = Some(*r_in);
                w.r_out = Some(*r_out);
            }
            MaskKind::Bitmap(b) => {
                w.kind = "bitmap".into();
                w.width = Some(b.width);
                w.height = Some(b.height);
                w.rows = Some(b.to_runs());
            }
        }
        w
    }
}

impl TryFrom<MaskWire> for ApertureMask {
    type Error = Error;

    fn try_from(w: MaskWire) -> Result<Self> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::config(format!("invalid aperture: {} needs `{name}`", w.kind)));
        let center = || w.center.ok_or_else(|| Error::config(format!("invalid aperture: {} needs `center`", w.kind)));
        let kind = match w.kind.as_str() {
            "full" => MaskKind::Full,
            "half_plane" => MaskKind::HalfPlane { angle: normalize_angle(need(w.angle, "angle")?), offset: w.offset.unwrap_or(0.0) },
            "disk" => MaskKind::Disk { center: center()?, radius: need(w.radius, "radius")? },
            "annulus" => MaskKind::Annulus { center: center()?, r_in: need(w.r_in, "r_in")?, r_out: need(w.r_out, "r_out")? },
            "bitmap" => {
                let (Some(width), Some(height), Some(rows)) = (w.width, w.height, w.rows.as_ref()) else {
                    return Err(Error::config("invalid aperture: bitmap needs `width`, `height` and `rows`"));
                };
                MaskKind::Bitmap(Bitmap::from_runs(width, height, rows).map_err(|e| Error::config(format!("invalid aperture: {e}")))?)
            }
            other => return Err(Error::config(format!("invalid aperture: unknown kind {other:?}"))),
        };
        let label = if w.label.is_empty() { w.kind.clone() } else { w.label.clone() };
        let mask = ApertureMask { kind, label };
        // geometry checks that do not depend on the region
        match &mask.kind {
            MaskKind::Bitmap(_) => Ok(mask),
            _ => mask.validate(&Region::new(0, 0, 1, 1)).map(|_| mask),
        }
    }
}

impl Serialize for ApertureMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MaskWire::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ApertureMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = MaskWire::deserialize(d)?;
        ApertureMask::try_from(w).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn region() -> Region {
        Region::new(132, 73, 110, 110)
    }

    fn local(dx: f64, dy: f64) -> Vec2 {
        region().local_center() + Vec2::new(dx, dy)
    }

    #[test]
    fn full_contains_everything() {
        let m = ApertureMask::full();
        for p in [local(0.0, 0.0), local(-54.0, 54.0), Vec2::new(0.0, 0.0)] {
            assert!(m.contains_local(p, &region()));
        }
    }

    #[test]
    fn half_plane_sign() {
        let m = ApertureMask::half_plane(0.0, 0.0);
        assert!(m.contains_local(local(5.0, 0.0), &region()));
        assert!(!m.contains_local(local(-5.0, 0.0), &region()));
        // closed boundary
        assert!(m.contains_local(local(0.0, 3.0), &region()));
        // absolute coordinates go through the region origin
        assert!(m.contains(region().center() + Vec2::new(1.0, 0.0), &region()));
    }

    #[test]
    fn half_plane_complement_rotates_by_pi() {
        let c = ApertureMask::half_plane(PI / 4.0, 0.0).complement(&region());
        match c.kind {
            MaskKind::HalfPlane { angle, offset } => {
                assert!((angle - 5.0 * PI / 4.0).abs() < 1e-12);
                assert_eq!(offset, 0.0);
            }
            _ => panic!("expected half plane"),
        }
    }

    #[test]
    fn complement_of_full_is_empty() {
        let c = ApertureMask::full().complement(&region());
        match &c.kind {
            MaskKind::Bitmap(b) => assert_eq!(b.count(), 0),
            _ => panic!("expected bitmap"),
        }
    }

    #[test]
    fn areas_partition_the_region() {
        let r = region();
        for m in [
            ApertureMask::disk(Vec2::new(40.0, 60.0), 23.3),
            ApertureMask::annulus(Vec2::new(54.5, 54.5), 10.0, 30.0),
            ApertureMask::half_plane(0.0, 0.0),
            ApertureMask::half_plane(PI / 2.0, 7.25),
            ApertureMask::full(),
        ] {
            let a = m.area(&r) + m.complement(&r).area(&r);
            assert_eq!(a, r.area(), "{}", m.label);
        }
    }

    #[test]
    fn json_schema() {
        let m = ApertureMask::half_plane(PI, 1.5).with_label("LHS");
        let text = m.to_json();
        assert_eq!(text, format!(r#"{{"kind":"half_plane","label":"LHS","angle":{},"offset":1.5}}"#, PI));
        assert_eq!(ApertureMask::from_json(&text).unwrap(), m);

        let err = ApertureMask::from_json(r#"{"kind":"disk","center":[1,2],"radius":-1}"#).unwrap_err();
        assert_eq!(err.category(), "config");
        assert!(ApertureMask::from_json(r#"{"kind":"full","radious":3}"#).is_err());
        assert!(ApertureMask::from_json(r#"{"kind":"annulus","center":[1,2],"r_in":5,"r_out":2}"#).is_err());
        assert!(ApertureMask::from_json(r#"{"kind":"hexagon"}"#).is_err());
    }

    #[test]
    fn bitmap_runs() {
        let b = Bitmap { width: 5, height: 2, bits: vec![true, true, false, true, false, false, false, false, false, false] };
        let runs = b.to_runs();
        assert_eq!(runs, vec![vec![0, 2, 1, 1, 1], vec![5]]);
        assert_eq!(Bitmap::from_runs(5, 2, &runs).unwrap(), b);
        assert!(Bitmap::from_runs(5, 2, &[vec![1, 2], vec![5]]).is_err());
        let m = ApertureMask::bitmap(b);
        assert_eq!(ApertureMask::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn bitmap_dims_checked() {
        let m = ApertureMask::bitmap(Bitmap::filled(3, 3, true));
        assert!(m.validate(&region()).is_err());
        assert!(m.validate(&Region::new(0, 0, 3, 3)).is_ok());
    }

    fn arb_mask() -> impl Strategy<Value = ApertureMask> {
        prop_oneof![
            Just(ApertureMask::full()),
            (0.0..TAU, -20.0..20.0f64).prop_map(|(a, o)| ApertureMask::half_plane(a, o)),
            (0.0..110.0f64, 0.0..110.0f64, 1.0..60.0f64).prop_map(|(x, y, r)| ApertureMask::disk(Vec2::new(x, y), r)),
            (0.0..110.0f64, 0.0..110.0f64, 1.0..30.0f64, 1.0..30.0f64)
                .prop_map(|(x, y, a, b)| ApertureMask::annulus(Vec2::new(x, y), a, a + b)),
        ]
    }

    proptest! {
        #[test]
        fn complement_is_exclusive_off_boundary(m in arb_mask(), x in -0.5..109.5f64, y in -0.5..109.5f64) {
            let r = region();
            let c = m.complement(&r);
            let p = Vec2::new(x, y);
            match &m.kind {
                MaskKind::HalfPlane { angle, offset } => {
                    let margin = (p - r.local_center()).dot(Vec2::new(angle.cos(), angle.sin())) - offset;
                    if margin.abs() > 1e-9 {
                        prop_assert!(m.contains_local(p, &r) ^ c.contains_local(p, &r));
                    }
                }
                _ => {
                    // rasterised complements are exact on pixel centres
                    let px = Vec2::new(x.round().clamp(0.0, 109.0), y.round().clamp(0.0, 109.0));
                    prop_assert!(m.contains_local(px, &r) ^ c.contains_local(px, &r));
                }
            }
        }

        #[test]
        fn classification_agrees_with_points(m in arb_mask(), x in 0.0..100.0f64, y in 0.0..100.0f64, w in 0.1..8.0f64, fx in 0.0..1.0f64, fy in 0.0..1.0f64) {
            let r = region();
            let lo = Vec2::new(x, y);
            let hi = Vec2::new(x + w, y + w);
            let p = Vec2::new(x + fx * w, y + fy * w);
            match m.classify_rect(lo, hi, &r) {
                Coverage::Inside => prop_assert!(m.contains_local(p, &r)),
                Coverage::Outside => prop_assert!(!m.contains_local(p, &r)),
                Coverage::Partial => {}
            }
        }
    }
}
