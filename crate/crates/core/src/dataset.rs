//! Memory-resident pair tables indexed by far-field pixel.
//!
//! Rendering a mask visits each far-field cell once: cells wholly inside or
//! outside the mask are accepted or skipped in bulk, and only cells on the
//! mask boundary test their pairs one by one. The counts are identical to
//! `accumulate(select_pairs(..))`.

use std::io::Read;

use crate::aperture::{ApertureMask, Coverage};
use crate::coinc::CoincidencePair;
use crate::error::Result;
use crate::exec;
use crate::geom::{Region, Vec2};
use crate::image::ImageFrame;
use crate::store::{from_fixed, to_fixed, EventReader, RunMetadata};

const OUTSIDE: u16 = u16::MAX;

#[derive(Debug, Clone)]
pub struct PairTable {
    near_region: Region,
    far_region: Region,
    exposure: f64,
    /// CSR offsets into the per-pair arrays; one extra trailing bucket holds
    /// pairs whose far coordinate is outside the far region.
    cell_start: Vec<usize>,
    near_px: Vec<(u16, u16)>,
    far_fixed: Vec<(u32, u32)>,
    len: usize,
}

impl PairTable {
    pub fn new(pairs: &[CoincidencePair], near_region: Region, far_region: Region, exposure: f64) -> Self {
        let mut b = PairTableBuilder::new(near_region, far_region, exposure);
        b.reserve(pairs.len());
        for p in pairs {
            b.push(p);
        }
        b.finish()
    }

    /// Stream a pair file into a table without holding the decoded records.
    pub fn from_reader<R: Read>(reader: EventReader<R>) -> Result<Self> {
        let h = reader.header().clone();
        let mut b = PairTableBuilder::new(h.near, h.far, RunMetadata::parse(&h.metadata).exposure_s);
        for p in reader.records::<CoincidencePair>() {
            b.push(&p?);
        }
        Ok(b.finish())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn near_region(&self) -> &Region {
        &self.near_region
    }

    pub fn far_region(&self) -> &Region {
        &self.far_region
    }

    pub fn exposure(&self) -> f64 {
        self.exposure
    }

    /// Approximate resident size in bytes.
    pub fn memory_bytes(&self) -> usize {
        self.len * (std::mem::size_of::<(u16, u16)>() + std::mem::size_of::<(u32, u32)>()) + self.cell_start.len() * 8
    }

    /// Resident bytes a table of `n` pairs needs.
    pub fn estimate_bytes(n: usize, far_region: &Region) -> usize {
        n * 12 + (far_region.area() + 2) * 8
    }

    /// Coincidence image of the pairs selected by `mask`.
    pub fn render(&self, mask: &ApertureMask, bin: usize) -> Result<ImageFrame> {
        mask.validate(&self.far_region)?;
        let mut frame = ImageFrame::empty(&self.near_region, bin)?;
        frame.exposure = self.exposure;
        frame.label = mask.label.clone();
        let bin = frame.bin;
        let width = self.far_region.width as usize;
        let cells = self.far_region.area();
        let rows: Vec<usize> = (0..=self.far_region.height as usize).collect();
        let far = self.far_region;
        let empty = frame.clone();
        // one task per far-field row; the last "row" is the out-of-region bucket
        let partials = exec::map_slice(&rows, |&j| {
            let mut f = empty.clone();
            let (c0, c1) = if j < far.height as usize { (j * width, (j + 1) * width) } else { (cells, cells + 1) };
            for c in c0..c1 {
                let (s, e) = (self.cell_start[c], self.cell_start[c + 1]);
                if s == e {
                    continue;
                }
                let coverage = if c == cells {
                    Coverage::Partial
                } else {
                    let (i, j) = ((c % width) as f64, (c / width) as f64);
                    mask.classify_rect(Vec2::new(i - 0.5, j - 0.5), Vec2::new(i + 0.5, j + 0.5), &far)
                };
                for k in s..e {
                    let keep = match coverage {
                        Coverage::Inside => true,
                        Coverage::Outside => false,
                        Coverage::Partial => {
                            let (fx, fy) = self.far_fixed[k];
                            mask.contains(Vec2::new(from_fixed(fx), from_fixed(fy)), &far)
                        }
                    };
                    if !keep {
                        continue;
                    }
                    let (px, py) = self.near_px[k];
                    if px == OUTSIDE {
                        continue;
                    }
                    let (bx, by) = (px as usize / bin, py as usize / bin);
                    f.counts[by * f.width + bx] += 1;
                }
            }
            f
        });
        for p in &partials {
            frame.add(p)?;
        }
        Ok(frame)
    }

    /// Counts of pair far-field coordinates over the far region.
    pub fn far_occupancy(&self) -> ImageFrame {
        let mut f = ImageFrame::empty(&self.far_region, 1).expect("bin 1 divides");
        f.exposure = self.exposure;
        f.label = "far_occupancy".into();
        let cells = self.far_region.area();
        for c in 0..cells {
            f.counts[c] = (self.cell_start[c + 1] - self.cell_start[c]) as u32;
        }
        f
    }
}

/// Accumulates pairs in a compact form; `finish` buckets them by far cell,
/// keeping push order within each cell.
#[derive(Debug, Clone)]
pub struct PairTableBuilder {
    near_region: Region,
    far_region: Region,
    exposure: f64,
    cell: Vec<u32>,
    near_px: Vec<(u16, u16)>,
    far_fixed: Vec<(u32, u32)>,
}

impl PairTableBuilder {
    pub fn new(near_region: Region, far_region: Region, exposure: f64) -> Self {
        PairTableBuilder { near_region, far_region, exposure, cell: Vec::new(), near_px: Vec::new(), far_fixed: Vec::new() }
    }

    pub fn reserve(&mut self, n: usize) {
        self.cell.reserve(n);
        self.near_px.reserve(n);
        self.far_fixed.reserve(n);
    }

    pub fn push(&mut self, p: &CoincidencePair) {
        let (far, near) = (&self.far_region, &self.near_region);
        let l = far.to_local(p.far.pos());
        let (i, j) = ((l.x + 0.5).floor(), (l.y + 0.5).floor());
        let cell = if i >= 0.0 && j >= 0.0 && i < far.width as f64 && j < far.height as f64 {
            j as usize * far.width as usize + i as usize
        } else {
            far.area()
        };
        let near_px = if near.contains(p.near.pos()) {
            let l = near.to_local(p.near.pos());
            ((l.x + 0.5).floor() as u16, (l.y + 0.5).floor() as u16)
        } else {
            (OUTSIDE, OUTSIDE)
        };
        self.cell.push(cell as u32);
        self.near_px.push(near_px);
        self.far_fixed.push((to_fixed(p.far.x), to_fixed(p.far.y)));
    }

    pub fn finish(self) -> PairTable {
        let cells = self.far_region.area();
        let mut cell_start = vec![0usize; cells + 2];
        for &c in &self.cell {
            cell_start[c as usize + 1] += 1;
        }
        for c in 0..=cells {
            cell_start[c + 1] += cell_start[c];
        }
        let n = self.cell.len();
        let mut next = cell_start.clone();
        let mut near_px = vec![(0u16, 0u16); n];
        let mut far_fixed = vec![(0u32, 0u32); n];
        for (k, &c) in self.cell.iter().enumerate() {
            let dst = &mut next[c as usize];
            near_px[*dst] = self.near_px[k];
            far_fixed[*dst] = self.far_fixed[k];
            *dst += 1;
        }
        PairTable {
            near_region: self.near_region,
            far_region: self.far_region,
            exposure: self.exposure,
            cell_start,
            near_px,
            far_fixed,
            len: n,
        }
    }
}
