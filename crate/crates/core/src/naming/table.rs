//! Binary naming table: `"CNTB" | u32 version | u32 grid | grid³ × 11 f32`,
//! all little-endian, red index slowest.

use super::TERM_COUNT;
use crate::error::{Error, Result};
use crate::math::Vec3;

pub const TABLE_MAGIC: &[u8; 4] = b"CNTB";
pub const TABLE_VERSION: u32 = 1;

const HEADER_LEN: usize = 12;

/// Nearest-cell lookup table over the sRGB-encoded unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct NamingTable {
    grid: usize,
    cells: Vec<[f64; TERM_COUNT]>,
}

impl NamingTable {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != TABLE_MAGIC {
            return Err(Error::NamingTable("missing CNTB header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != TABLE_VERSION {
            return Err(Error::NamingTable(format!("unsupported version {version}")));
        }
        let grid = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if grid == 0 || grid > 256 {
            return Err(Error::NamingTable(format!("bad grid size {grid}")));
        }
        let ncells = grid * grid * grid;
        let expected = HEADER_LEN + ncells * TERM_COUNT * 4;
        if bytes.len() != expected {
            return Err(Error::NamingTable(format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let mut cells = Vec::with_capacity(ncells);
        for chunk in bytes[HEADER_LEN..].chunks_exact(TERM_COUNT * 4) {
            let mut cell = [0.0; TERM_COUNT];
            for (c, b) in cell.iter_mut().zip(chunk.chunks_exact(4)) {
                *c = f32::from_le_bytes(b.try_into().unwrap()) as f64;
            }
            let sum: f64 = cell.iter().sum();
            if cell.iter().any(|v| !v.is_finite() || *v < 0.0) || sum <= 0.0 {
                return Err(Error::NamingTable("cell is not a distribution".into()));
            }
            for c in cell.iter_mut() {
                *c /= sum;
            }
            cells.push(cell);
        }
        Ok(Self { grid, cells })
    }

    /// Serializes cells as f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.cells.len() * TERM_COUNT * 4);
        out.extend_from_slice(TABLE_MAGIC);
        out.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.grid as u32).to_le_bytes());
        for cell in &self.cells {
            for v in cell {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Builds a table by averaging `sample` over `samples³` points per cell.
    pub fn generate(
        grid: usize,
        samples: usize,
        sample: impl Fn(&Vec3) -> [f64; TERM_COUNT],
    ) -> Self {
        let offs: Vec<f64> = (0..samples).map(|s| (s as f64 + 0.5) / samples as f64).collect();
        let mut cells = Vec::with_capacity(grid * grid * grid);
        for r in 0..grid {
            for g in 0..grid {
                for b in 0..grid {
                    let mut acc = [0.0; TERM_COUNT];
                    for or in &offs {
                        for og in &offs {
                            for ob in &offs {
                                let rgb = [
                                    (r as f64 + or) / grid as f64,
                                    (g as f64 + og) / grid as f64,
                                    (b as f64 + ob) / grid as f64,
                                ];
                                for (a, p) in acc.iter_mut().zip(sample(&rgb)) {
                                    *a += p;
                                }
                            }
                        }
                    }
                    let sum: f64 = acc.iter().sum();
                    for a in acc.iter_mut() {
                        *a /= sum;
                    }
                    cells.push(acc);
                }
            }
        }
        Self { grid, cells }
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn cell(&self, r: usize, g: usize, b: usize) -> [f64; TERM_COUNT] {
        self.cells[(r * self.grid + g) * self.grid + b]
    }

    #[inline]
    fn index_of(&self, c: f64) -> usize {
        ((c * self.grid as f64).floor() as usize).min(self.grid - 1)
    }

    /// Nearest-cell lookup for an sRGB-encoded color in [0,1]³.
    pub fn lookup(&self, rgb: &Vec3) -> [f64; TERM_COUNT] {
        self.cell(
            self.index_of(rgb[0]),
            self.index_of(rgb[1]),
            self.index_of(rgb[2]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_headers() {
        assert!(NamingTable::from_bytes(b"XXXX").is_err());
        let mut b = Vec::new();
        b.extend_from_slice(TABLE_MAGIC);
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        assert!(NamingTable::from_bytes(&b).is_err());
    }

    #[test]
    fn bytes_round_trip() {
        let t = NamingTable::generate(2, 1, |rgb| {
            let mut p = [0.0; TERM_COUNT];
            p[(rgb[0] * 2.0) as usize] = 1.0;
            p
        });
        let back = NamingTable::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(t, back);
        assert_eq!(back.lookup(&[0.9, 0.1, 0.1])[1], 1.0);
        assert_eq!(back.lookup(&[1.0, 1.0, 1.0])[1], 1.0);
    }
}
