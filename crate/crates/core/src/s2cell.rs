//! S2 cell identifiers for points on the sphere.
//!
//! Implements the standard S2 decomposition: project onto one of six cube
//! faces, apply the quadratic (u,v) -> (s,t) transform, discretize to leaf
//! (i,j) coordinates and walk the face's Hilbert curve. Only the
//! point-to-cell direction is needed here.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const MAX_LEVEL: u8 = 30;
const MAX_SIZE: u32 = 1 << MAX_LEVEL;
const POS_BITS: u32 = 2 * MAX_LEVEL as u32 + 1;

const SWAP_MASK: u8 = 0x01;
const INVERT_MASK: u8 = 0x02;

// Hilbert sub-cell position for each orientation and (i,j) quadrant.
const IJ_TO_POS: [[u8; 4]; 4] = [
    [0, 1, 3, 2], // canonical
    [0, 3, 1, 2], // swapped
    [2, 3, 1, 0], // inverted
    [2, 1, 3, 0], // swapped & inverted
];
const POS_TO_ORIENTATION: [u8; 4] = [SWAP_MASK, 0, 0, INVERT_MASK | SWAP_MASK];

/// A 64-bit S2 cell id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId(pub u64);

impl CellId {
    /// Leaf cell containing the given lat/lon (degrees).
    pub fn from_lat_lon(lat: f64, lon: f64) -> CellId {
        let (phi, lambda) = (lat.to_radians(), lon.to_radians());
        let xyz = [phi.cos() * lambda.cos(), phi.cos() * lambda.sin(), phi.sin()];
        let (face, u, v) = xyz_to_face_uv(xyz);
        let i = st_to_ij(uv_to_st(u));
        let j = st_to_ij(uv_to_st(v));
        CellId::from_face_ij(face, i, j)
    }

    fn from_face_ij(face: u8, i: u32, j: u32) -> CellId {
        let mut orientation = face & SWAP_MASK;
        let mut pos: u64 = 0;
        for k in (0..MAX_LEVEL as u32).rev() {
            let quad = ((((i >> k) & 1) << 1) | ((j >> k) & 1)) as usize;
            let p = IJ_TO_POS[orientation as usize][quad];
            pos = (pos << 2) | p as u64;
            orientation ^= POS_TO_ORIENTATION[p as usize];
        }
        CellId(((face as u64) << POS_BITS) | (pos << 1) | 1)
    }

    pub fn face(&self) -> u8 {
        (self.0 >> POS_BITS) as u8
    }

    fn lsb(&self) -> u64 {
        self.0 & self.0.wrapping_neg()
    }

    pub fn level(&self) -> u8 {
        MAX_LEVEL - (self.0.trailing_zeros() / 2) as u8
    }

    /// Ancestor at `level`; `level` must not exceed this cell's level.
    pub fn parent(&self, level: u8) -> CellId {
        debug_assert!(level <= self.level());
        let lsb = 1u64 << (2 * (MAX_LEVEL - level) as u32);
        CellId((self.0 & lsb.wrapping_neg()) | lsb)
    }

    pub fn contains(&self, other: &CellId) -> bool {
        let lsb = self.lsb();
        other.0 >= self.0 - (lsb - 1) && other.0 <= self.0 + (lsb - 1)
    }

    pub fn to_token(&self) -> String {
        let hex = format!("{:016x}", self.0);
        hex.trim_end_matches('0').to_string()
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_token())
    }
}

/// Cell ids of a point at two resolutions, coarse first.
pub fn cells_at_levels(lat: f64, lon: f64, coarse: u8, fine: u8) -> (CellId, CellId) {
    let leaf = CellId::from_lat_lon(lat, lon);
    (leaf.parent(coarse), leaf.parent(fine))
}

fn xyz_to_face_uv(p: [f64; 3]) -> (u8, f64, f64) {
    let (ax, ay, az) = (p[0].abs(), p[1].abs(), p[2].abs());
    let mut face = if ax > ay {
        if ax > az {
            0
        } else {
            2
        }
    } else if ay > az {
        1
    } else {
        2
    };
    if p[face as usize] < 0.0 {
        face += 3;
    }
    let (x, y, z) = (p[0], p[1], p[2]);
    let (u, v) = match face {
        0 => (y / x, z / x),
        1 => (-x / y, z / y),
        2 => (-x / z, -y / z),
        3 => (z / x, y / x),
        4 => (z / y, -x / y),
        _ => (-y / z, -x / z),
    };
    (face, u, v)
}

fn uv_to_st(u: f64) -> f64 {
    if u >= 0.0 {
        0.5 * (1.0 + 3.0 * u).sqrt()
    } else {
        1.0 - 0.5 * (1.0 - 3.0 * u).sqrt()
    }
}

fn st_to_ij(s: f64) -> u32 {
    let v = (MAX_SIZE as f64 * s).floor();
    v.clamp(0.0, (MAX_SIZE - 1) as f64) as u32
}
