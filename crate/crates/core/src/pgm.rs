//! Minimal binary portable graymap (P5) codec, 8- and 16-bit.

use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples, top row first.
    pub data: Vec<u16>,
}

impl Graymap {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n{}\n", self.width, self.height, self.maxval)?;
        let mut buf = Vec::with_capacity(self.data.len() * 2);
        if self.maxval < 256 {
            buf.extend(self.data.iter().map(|&v| v as u8));
        } else {
            for &v in &self.data {
                buf.extend_from_slice(&v.to_be_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::parse(&bytes)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let token = |pos: &mut usize| -> Result<String> {
            loop {
                while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                    *pos += 1;
                }
                if *pos < bytes.len() && bytes[*pos] == b'#' {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = *pos;
            while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if start == *pos {
                return Err(Error::Format("truncated graymap header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
        };
        let magic = token(&mut pos)?;
        let num = |s: String| -> Result<usize> {
            s.parse().map_err(|_| Error::Format(format!("bad graymap header field {s:?}")))
        };
        let width = num(token(&mut pos)?)?;
        let height = num(token(&mut pos)?)?;
        let maxval = num(token(&mut pos)?)?;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Format(format!("graymap maxval {maxval} out of range")));
        }
        let n = width * height;
        let data = match magic.as_str() {
            "P5" => {
                // exactly one whitespace byte separates header and raster
                pos += 1;
                let body = bytes.get(pos..).unwrap_or(&[]);
                if maxval < 256 {
                    if body.len() < n {
                        return Err(Error::Format("graymap raster truncated".into()));
                    }
                    body[..n].iter().map(|&b| b as u16).collect()
                } else {
                    if body.len() < 2 * n {
                        return Err(Error::Format("graymap raster truncated".into()));
                    }
                    body[..2 * n].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
                }
            }
            "P2" => {
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    v.push(num(token(&mut pos)?)? as u16);
                }
                v
            }
            other => return Err(Error::Format(format!("unsupported graymap magic {other:?}"))),
        };
        Ok(Graymap { width, height, maxval: maxval as u16, data })
    }
}
