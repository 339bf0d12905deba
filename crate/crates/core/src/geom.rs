use serde::{Deserialize, Serialize};

/// A 2-vector: positions in µm, wavevectors in rad/µm, or camera pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

/// Rectangular block of sensor pixels. Pixel `i` covers `[i - 0.5, i + 0.5)`
/// in continuous camera coordinates, so integer coordinates are pixel centres.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x0: u16,
    pub y0: u16,
    pub width: u16,
    pub height: u16,
}

impl Region {
    pub const fn new(x0: u16, y0: u16, width: u16, height: u16) -> Self {
        Region { x0, y0, width, height }
    }

    /// Continuous coordinate of the region centre.
    pub fn center(&self) -> Vec2 {
        Vec2::new(
            self.x0 as f64 + (self.width as f64 - 1.0) / 2.0,
            self.y0 as f64 + (self.height as f64 - 1.0) / 2.0,
        )
    }

    /// Centre in region-relative coordinates.
    pub fn local_center(&self) -> Vec2 {
        Vec2::new((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let lx = p.x - self.x0 as f64 + 0.5;
        let ly = p.y - self.y0 as f64 + 0.5;
        lx >= 0.0 && ly >= 0.0 && lx < self.width as f64 && ly < self.height as f64
    }

    pub fn contains_pixel(&self, x: u16, y: u16) -> bool {
        x >= self.x0
            && y >= self.y0
            && (x - self.x0) < self.width
            && (y - self.y0) < self.height
    }

    pub fn to_local(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x - self.x0 as f64, p.y - self.y0 as f64)
    }

    pub fn area(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        let ax1 = self.x0 as u32 + self.width as u32;
        let ay1 = self.y0 as u32 + self.height as u32;
        let bx1 = other.x0 as u32 + other.width as u32;
        let by1 = other.y0 as u32 + other.height as u32;
        (self.x0 as u32) < bx1 && (other.x0 as u32) < ax1 && (self.y0 as u32) < by1 && (other.y0 as u32) < ay1
    }
}

/// Which arm of the microscope a detection belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    /// Image plane of the crystal, via the sample (signal photons).
    Near,
    /// Fourier plane of the crystal (idler photons).
    Far,
}

/// Round a sub-pixel coordinate to the 24.8 fixed-point grid used on disk.
/// Values stay exactly representable so file round trips are lossless.
pub fn quantize_subpixel(v: f64) -> f64 {
    (v * 256.0).round() / 256.0
}
