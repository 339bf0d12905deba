//! Fixed-width little-endian event files.
//!
//! ```text
//! header   magic "QPCMEVT1" | version u16 | kind u8 | reserved u8
//!          | sensor w u16 | sensor h u16 | time_bin f64
//!          | near x0,y0,w,h u16 x4 | far x0,y0,w,h u16 x4
//!          | metadata length u32 | metadata (JSON, UTF-8)
//! raw      toa u64 | x u16 | y u16 | tot u16 | flags u16                      16 B
//! photon   toa u64 | x u32 | y u32 | n_pixels u16 | plane u8 | pad 5        24 B
//! pair     near toa u64 | dt i32 | near x,y u32 | far x,y u32
//!          | near n_pixels u16 | far n_pixels u16                          32 B
//! ```
//!
//! Times are in `time_bin` units; coordinates are 24.8 fixed point pixels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::centroid::PhotonEvent;
use crate::coinc::CoincidencePair;
use crate::detector::RawEvent;
use crate::error::{Error, Result};
use crate::geom::{Plane, Region};

pub const MAGIC: &[u8; 8] = b"QPCMEVT1";
pub const VERSION: u16 = 1;
const FIXED_HEADER: usize = 44;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum RecordKind {
    Raw = 0,
    Photon = 1,
    Pair = 2,
}

impl RecordKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(RecordKind::Raw),
            1 => Ok(RecordKind::Photon),
            2 => Ok(RecordKind::Pair),
            other => Err(Error::Format(format!("unknown record kind {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RecordKind::Raw => "raw",
            RecordKind::Photon => "photon",
            RecordKind::Pair => "pair",
        }
    }
}

/// Provenance carried in the header metadata of files written by the tools.
/// Unknown fields are ignored on read so third-party files still load.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Acquisition time covered by the records (s).
    pub exposure_s: f64,
}

impl RunMetadata {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metadata serialises")
    }

    /// Parse header metadata; empty or non-JSON text gives the defaults.
    pub fn parse(text: &str) -> Self {
        serde_json::from_str(text).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventFileHeader {
    pub version: u16,
    pub kind: RecordKind,
    pub sensor: [u16; 2],
    pub time_bin: f64,
    pub near: Region,
    pub far: Region,
    pub metadata: String,
}

impl EventFileHeader {
    pub fn new(kind: RecordKind, sensor: [u16; 2], time_bin: f64, near: Region, far: Region, metadata: String) -> Self {
        EventFileHeader { version: VERSION, kind, sensor, time_bin, near, far, metadata }
    }

    pub fn encoded_len(&self) -> usize {
        FIXED_HEADER + self.metadata.len()
    }

    fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(self.encoded_len());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&self.version.to_le_bytes());
        b.push(self.kind as u8);
        b.push(0);
        b.extend_from_slice(&self.sensor[0].to_le_bytes());
        b.extend_from_slice(&self.sensor[1].to_le_bytes());
        b.extend_from_slice(&self.time_bin.to_le_bytes());
        for r in [&self.near, &self.far] {
            for v in [r.x0, r.y0, r.width, r.height] {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        b.extend_from_slice(self.metadata.as_bytes());
        b
    }

    fn decode<R: Read>(r: &mut R) -> Result<Self> {
        let mut fixed = [0u8; FIXED_HEADER];
        let got = read_full(r, &mut fixed)?;
        if got >= 8 && &fixed[..8] != MAGIC {
            return Err(Error::BadMagic);
        }
        if got < FIXED_HEADER {
            return Err(Error::Truncated { offset: got as u64 });
        }
        let u16_at = |i: usize| u16::from_le_bytes([fixed[i], fixed[i + 1]]);
        let version = u16_at(8);
        if version != VERSION {
            return Err(Error::Version(version));
        }
        let kind = RecordKind::from_byte(fixed[10])?;
        let region_at = |i: usize| Region::new(u16_at(i), u16_at(i + 2), u16_at(i + 4), u16_at(i + 6));
        let time_bin = f64::from_le_bytes(fixed[16..24].try_into().expect("8 bytes"));
        let meta_len = u32::from_le_bytes(fixed[40..44].try_into().expect("4 bytes")) as usize;
        let mut meta = vec![0u8; meta_len];
        let got = read_full(r, &mut meta)?;
        if got < meta_len {
            return Err(Error::Truncated { offset: (FIXED_HEADER + got) as u64 });
        }
        let metadata = String::from_utf8(meta).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        Ok(EventFileHeader {
            version,
            kind,
            sensor: [u16_at(12), u16_at(14)],
            time_bin,
            near: region_at(24),
            far: region_at(32),
            metadata,
        })
    }
}

/// Read until `buf` is full or EOF; returns the byte count.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(n)
}

pub fn to_fixed(v: f64) -> u32 {
    (v * 256.0).round().clamp(0.0, u32::MAX as f64) as u32
}

pub fn from_fixed(v: u32) -> f64 {
    v as f64 / 256.0
}

/// A fixed-size on-disk record.
pub trait Record: Sized {
    const KIND: RecordKind;
    const SIZE: usize;
    fn encode(&self, out: &mut [u8]);
    fn decode(bytes: &[u8]) -> Result<Self>;
}

impl Record for RawEvent {
    const KIND: RecordKind = RecordKind::Raw;
    const SIZE: usize = 16;

    fn encode(&self, o: &mut [u8]) {
        o[0..8].copy_from_slice(&self.toa.to_le_bytes());
        o[8..10].copy_from_slice(&self.x.to_le_bytes());
        o[10..12].copy_from_slice(&self.y.to_le_bytes());
        o[12..14].copy_from_slice(&self.tot.to_le_bytes());
        o[14..16].copy_from_slice(&self.flags.to_le_bytes());
    }

    fn decode(b: &[u8]) -> Result<Self> {
        Ok(RawEvent {
            toa: u64::from_le_bytes(b[0..8].try_into().expect("8")),
            x: u16::from_le_bytes([b[8], b[9]]),
            y: u16::from_le_bytes([b[10], b[11]]),
            tot: u16::from_le_bytes([b[12], b[13]]),
            flags: u16::from_le_bytes([b[14], b[15]]),
        })
    }
}

fn plane_byte(p: Plane) -> u8 {
    match p {
        Plane::Near => 0,
        Plane::Far => 1,
    }
}

fn plane_from(b: u8) -> Result<Plane> {
    match b {
        0 => Ok(Plane::Near),
        1 => Ok(Plane::Far),
        other => Err(Error::Format(format!("invalid plane tag {other}"))),
    }
}

impl Record for PhotonEvent {
    const KIND: RecordKind = RecordKind::Photon;
    const SIZE: usize = 24;

    fn encode(&self, o: &mut [u8]) {
        o[0..8].copy_from_slice(&self.toa.to_le_bytes());
        o[8..12].copy_from_slice(&to_fixed(self.x).to_le_bytes());
        o[12..16].copy_from_slice(&to_fixed(self.y).to_le_bytes());
        o[16..18].copy_from_slice(&self.n_pixels.to_le_bytes());
        o[18] = plane_byte(self.plane);
        o[19..24].fill(0);
    }

    fn decode(b: &[u8]) -> Result<Self> {
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().expect("4"));
        Ok(PhotonEvent {
            toa: u64::from_le_bytes(b[0..8].try_into().expect("8")),
            x: from_fixed(u32_at(8)),
            y: from_fixed(u32_at(12)),
            n_pixels: u16::from_le_bytes([b[16], b[17]]),
            plane: plane_from(b[18])?,
        })
    }
}

impl Record for CoincidencePair {
    const KIND: RecordKind = RecordKind::Pair;
    const SIZE: usize = 32;

    fn encode(&self, o: &mut [u8]) {
        o[0..8].copy_from_slice(&self.near.toa.to_le_bytes());
        o[8..12].copy_from_slice(&(self.dt as i32).to_le_bytes());
        o[12..16].copy_from_slice(&to_fixed(self.near.x).to_le_bytes());
        o[16..20].copy_from_slice(&to_fixed(self.near.y).to_le_bytes());
        o[20..24].copy_from_slice(&to_fixed(self.far.x).to_le_bytes());
        o[24..28].copy_from_slice(&to_fixed(self.far.y).to_le_bytes());
        o[28..30].copy_from_slice(&self.near.n_pixels.to_le_bytes());
        o[30..32].copy_from_slice(&self.far.n_pixels.to_le_bytes());
    }

    fn decode(b: &[u8]) -> Result<Self> {
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().expect("4"));
        let near_toa = u64::from_le_bytes(b[0..8].try_into().expect("8"));
        let dt = i32::from_le_bytes(b[8..12].try_into().expect("4")) as i64;
        let far_toa = near_toa
            .checked_add_signed(dt)
            .ok_or_else(|| Error::Format("pair dt points before time zero".into()))?;
        Ok(CoincidencePair {
            near: PhotonEvent {
                toa: near_toa,
                x: from_fixed(u32_at(12)),
                y: from_fixed(u32_at(16)),
                plane: Plane::Near,
                n_pixels: u16::from_le_bytes([b[28], b[29]]),
            },
            far: PhotonEvent {
                toa: far_toa,
                x: from_fixed(u32_at(20)),
                y: from_fixed(u32_at(24)),
                plane: Plane::Far,
                n_pixels: u16::from_le_bytes([b[30], b[31]]),
            },
            dt,
        })
    }
}

pub struct EventWriter<W: Write> {
    inner: W,
    kind: RecordKind,
    buf: Vec<u8>,
}

impl<W: Write> EventWriter<W> {
    pub fn new(mut inner: W, header: &EventFileHeader) -> Result<Self> {
        inner.write_all(&header.encode())?;
        Ok(EventWriter { inner, kind: header.kind, buf: Vec::new() })
    }

    pub fn write<T: Record>(&mut self, records: &[T]) -> Result<()> {
        if T::KIND != self.kind {
            return Err(Error::RecordKind { expected: self.kind.name(), found: T::KIND.name() });
        }
        for chunk in records.chunks(4096) {
            self.buf.clear();
            self.buf.resize(chunk.len() * T::SIZE, 0);
            for (r, out) in chunk.iter().zip(self.buf.chunks_exact_mut(T::SIZE)) {
                r.encode(out);
            }
            self.inner.write_all(&self.buf)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Streaming reader; records are decoded one at a time.
#[derive(Debug)]
pub struct EventReader<R: Read> {
    inner: R,
    header: EventFileHeader,
    offset: u64,
}

impl<R: Read> EventReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let header = EventFileHeader::decode(&mut inner)?;
        let offset = header.encoded_len() as u64;
        Ok(EventReader { inner, header, offset })
    }

    pub fn header(&self) -> &EventFileHeader {
        &self.header
    }

    /// Next record, `None` at a clean end of file.
    pub fn next_record<T: Record>(&mut self) -> Result<Option<T>> {
        if T::KIND != self.header.kind {
            return Err(Error::RecordKind { expected: T::KIND.name(), found: self.header.kind.name() });
        }
        let mut buf = [0u8; 32];
        let buf = &mut buf[..T::SIZE];
        let got = read_full(&mut self.inner, buf)?;
        if got == 0 {
            return Ok(None);
        }
        if got < T::SIZE {
            return Err(Error::Truncated { offset: self.offset });
        }
        self.offset += T::SIZE as u64;
        T::decode(buf).map(Some)
    }

    pub fn records<T: Record>(mut self) -> impl Iterator<Item = Result<T>> {
        let mut done = false;
        std::iter::from_fn(move || {
            if done {
                return None;
            }
            match self.next_record::<T>() {
                Ok(Some(r)) => Some(Ok(r)),
                Ok(None) => {
                    done = true;
                    None
                }
                Err(e) => {
                    done = true;
                    Some(Err(e))
                }
            }
        })
    }

    pub fn read_all<T: Record>(self) -> Result<(EventFileHeader, Vec<T>)> {
        let header = self.header.clone();
        let records = self.records::<T>().collect::<Result<Vec<T>>>()?;
        Ok((header, records))
    }
}

pub fn write_file<T: Record>(path: &Path, header: &EventFileHeader, records: &[T]) -> Result<()> {
    if header.kind != T::KIND {
        return Err(Error::RecordKind { expected: header.kind.name(), found: T::KIND.name() });
    }
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = EventWriter::new(BufWriter::new(f), header)?;
    w.write(records)?;
    w.finish()?;
    Ok(())
}

pub fn open_file(path: &Path) -> Result<EventReader<BufReader<File>>> {
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    EventReader::new(BufReader::new(f))
}

pub fn read_file<T: Record>(path: &Path) -> Result<(EventFileHeader, Vec<T>)> {
    open_file(path)?.read_all()
}

#[derive(Debug, Deserialize)]
struct CsvHit {
    toa_ns: f64,
    x: u16,
    y: u16,
    tot: u16,
}

/// Import hits exported by third-party time taggers as CSV with a
/// `toa_ns,x,y,tot` header. Returned events are sorted.
pub fn import_csv<R: Read>(reader: R, time_bin: f64) -> Result<Vec<RawEvent>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<CsvHit>().enumerate() {
        let h = row.map_err(|e| Error::Format(format!("CSV row {}: {e}", line + 1)))?;
        if !(h.toa_ns >= 0.0) {
            return Err(Error::Format(format!("CSV row {}: negative toa", line + 1)));
        }
        out.push(RawEvent { toa: (h.toa_ns / time_bin).round() as u64, x: h.x, y: h.y, tot: h.tot, flags: 0 });
    }
    out.sort_unstable_by_key(RawEvent::sort_key);
    Ok(out)
}
