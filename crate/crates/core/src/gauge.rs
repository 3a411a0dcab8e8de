//! Gauge links and clover blocks.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, shape, Result};
use crate::geometry::{LatticeGeometry, NDIM};

/// 3x3 complex matrix, row-major.
pub type Su3 = [C64; 9];

/// Complex values stored per clover block (lower triangle of a 6x6 Hermitian).
pub const CLOVER_BLOCK: usize = 21;
/// Complex values stored per site of the clover field.
pub const CLOVER_SITE: usize = 2 * CLOVER_BLOCK;

const ZERO: C64 = C64::new(0.0, 0.0);

pub const IDENTITY3: Su3 = [
    C64::new(1.0, 0.0),
    ZERO,
    ZERO,
    ZERO,
    C64::new(1.0, 0.0),
    ZERO,
    ZERO,
    ZERO,
    C64::new(1.0, 0.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaugeMode {
    Unit,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CloverMode {
    Zero,
    RandomHermitian { scale: f64 },
}

fn gaussian(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im)
}

pub fn det3(u: &Su3) -> C64 {
    u[0] * (u[4] * u[8] - u[5] * u[7]) - u[1] * (u[3] * u[8] - u[5] * u[6])
        + u[2] * (u[3] * u[7] - u[4] * u[6])
}

/// `max |U^H U - I|` over entries.
pub fn unitarity_defect(u: &Su3) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..3 {
        for c in 0..3 {
            let mut s = ZERO;
            for k in 0..3 {
                s += u[k * 3 + r].conj() * u[k * 3 + c];
            }
            if r == c {
                s -= C64::new(1.0, 0.0);
            }
            worst = worst.max(s.norm());
        }
    }
    worst
}

/// Random SU(3) matrix from Gram-Schmidt on Gaussian columns, with the
/// determinant phase divided out of the last column.
fn random_su3(rng: &mut ChaCha8Rng) -> Su3 {
    let mut cols = [[ZERO; 3]; 3];
    for col in cols.iter_mut() {
        for v in col.iter_mut() {
            *v = gaussian(rng);
        }
    }
    for j in 0..3 {
        for p in 0..j {
            let proj: C64 = (0..3).map(|r| cols[p][r].conj() * cols[j][r]).sum();
            for r in 0..3 {
                let t = cols[p][r];
                cols[j][r] -= proj * t;
            }
        }
        let n = libm::sqrt(cols[j].iter().map(|z| z.norm_sqr()).sum::<f64>());
        for v in cols[j].iter_mut() {
            *v /= n;
        }
    }
    let mut u: Su3 = [ZERO; 9];
    for r in 0..3 {
        for c in 0..3 {
            u[r * 3 + c] = cols[c][r];
        }
    }
    let d = det3(&u);
    let phase = C64::from_polar(1.0, -d.arg());
    for r in 0..3 {
        u[r * 3 + 2] *= phase;
    }
    u
}

/// One 3x3 link per site and direction, stored `[(site * 4 + mu) * 9 + row * 3 + col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeField {
    geom: LatticeGeometry,
    data: Vec<C64>,
}

impl GaugeField {
    pub fn unit(geom: &LatticeGeometry) -> Self {
        let mut data = Vec::with_capacity(geom.n_sites() * NDIM * 9);
        for _ in 0..geom.n_sites() * NDIM {
            data.extend_from_slice(&IDENTITY3);
        }
        Self { geom: *geom, data }
    }

    pub fn generate(geom: &LatticeGeometry, mode: GaugeMode, seed: u64) -> Self {
        match mode {
            GaugeMode::Unit => Self::unit(geom),
            GaugeMode::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut data = Vec::with_capacity(geom.n_sites() * NDIM * 9);
                for _ in 0..geom.n_sites() * NDIM {
                    data.extend_from_slice(&random_su3(&mut rng));
                }
                Self { geom: *geom, data }
            }
        }
    }

    pub fn from_raw(geom: &LatticeGeometry, data: Vec<C64>) -> Result<Self> {
        if data.len() != geom.n_sites() * NDIM * 9 {
            return Err(shape!("gauge data length {} for {} sites", data.len(), geom.n_sites()));
        }
        Ok(Self { geom: *geom, data })
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geom
    }

    #[inline]
    pub fn link(&self, x: usize, mu: usize) -> &[C64] {
        &self.data[(x * NDIM + mu) * 9..][..9]
    }

    pub fn link_mut(&mut self, x: usize, mu: usize) -> &mut [C64] {
        &mut self.data[(x * NDIM + mu) * 9..][..9]
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    /// Links of the given global sites, in order (a rank's local slice).
    pub fn restrict(&self, local: &LatticeGeometry, global_sites: &[usize]) -> Result<Self> {
        if local.n_sites() != global_sites.len() {
            return Err(shape!("restriction to {} sites", global_sites.len()));
        }
        let mut data = Vec::with_capacity(global_sites.len() * NDIM * 9);
        for &g in global_sites {
            data.extend_from_slice(&self.data[g * NDIM * 9..][..NDIM * 9]);
        }
        Ok(Self { geom: *local, data })
    }

    /// Checks every link is special unitary to `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for x in 0..self.geom.n_sites() {
            for mu in 0..NDIM {
                let u: &Su3 = self.link(x, mu).try_into().expect("9 entries");
                let defect = unitarity_defect(u);
                let det = (det3(u) - C64::new(1.0, 0.0)).norm();
                if defect > tol || det > tol {
                    return Err(invalid!(
                        "gauge link (site {x}, mu {mu}) not special unitary: |U^H U - I| = {defect:e}, |det U - 1| = {det:e}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Two 6x6 Hermitian blocks per site, each stored as its lower triangle in
/// row order (`(0,0), (1,0), (1,1), (2,0), ...`).
#[derive(Debug, Clone, PartialEq)]
pub struct CloverField {
    geom: LatticeGeometry,
    data: Vec<C64>,
}

#[inline]
fn tri(r: usize, c: usize) -> usize {
    r * (r + 1) / 2 + c
}

impl CloverField {
    pub fn zero(geom: &LatticeGeometry) -> Self {
        Self {
            geom: *geom,
            data: vec![ZERO; geom.n_sites() * CLOVER_SITE],
        }
    }

    pub fn generate(geom: &LatticeGeometry, mode: CloverMode, seed: u64) -> Self {
        match mode {
            CloverMode::Zero => Self::zero(geom),
            CloverMode::RandomHermitian { scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut out = Self::zero(geom);
                for x in 0..geom.n_sites() {
                    for blk in 0..2 {
                        let mut g = [[ZERO; 6]; 6];
                        for row in g.iter_mut() {
                            for v in row.iter_mut() {
                                *v = gaussian(&mut rng);
                            }
                        }
                        let mut h = [[ZERO; 6]; 6];
                        for r in 0..6 {
                            for c in 0..6 {
                                h[r][c] = (g[r][c] + g[c][r].conj()) * (0.5 * scale);
                            }
                        }
                        out.set_block(x, blk, &h);
                    }
                }
                out
            }
        }
    }

    /// Every block equal to `scale * I`.
    pub fn scaled_identity(geom: &LatticeGeometry, scale: f64) -> Self {
        let mut out = Self::zero(geom);
        let mut h = [[ZERO; 6]; 6];
        for (r, row) in h.iter_mut().enumerate() {
            row[r] = C64::new(scale, 0.0);
        }
        for x in 0..geom.n_sites() {
            out.set_block(x, 0, &h);
            out.set_block(x, 1, &h);
        }
        out
    }

    pub fn from_raw(geom: &LatticeGeometry, data: Vec<C64>) -> Result<Self> {
        if data.len() != geom.n_sites() * CLOVER_SITE {
            return Err(shape!("clover data length {} for {} sites", data.len(), geom.n_sites()));
        }
        Ok(Self { geom: *geom, data })
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geom
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn packed_block(&self, x: usize, blk: usize) -> &[C64] {
        &self.data[x * CLOVER_SITE + blk * CLOVER_BLOCK..][..CLOVER_BLOCK]
    }

    /// Stores the lower triangle of `h`; diagonal imaginary parts are dropped.
    pub fn set_block(&mut self, x: usize, blk: usize, h: &[[C64; 6]; 6]) {
        let base = x * CLOVER_SITE + blk * CLOVER_BLOCK;
        for r in 0..6 {
            for c in 0..=r {
                let v = if r == c { C64::new(h[r][r].re, 0.0) } else { h[r][c] };
                self.data[base + tri(r, c)] = v;
            }
        }
    }

    /// Full Hermitian block.
    pub fn block(&self, x: usize, blk: usize) -> [[C64; 6]; 6] {
        expand_hermitian(self.packed_block(x, blk))
    }

    pub fn restrict(&self, local: &LatticeGeometry, global_sites: &[usize]) -> Result<Self> {
        if local.n_sites() != global_sites.len() {
            return Err(shape!("restriction to {} sites", global_sites.len()));
        }
        let mut data = Vec::with_capacity(global_sites.len() * CLOVER_SITE);
        for &g in global_sites {
            data.extend_from_slice(&self.data[g * CLOVER_SITE..][..CLOVER_SITE]);
        }
        Ok(Self { geom: *local, data })
    }
}

/// Expands a packed lower triangle into the full Hermitian 6x6 matrix.
pub fn expand_hermitian(packed: &[C64]) -> [[C64; 6]; 6] {
    let mut h = [[ZERO; 6]; 6];
    for r in 0..6 {
        for c in 0..=r {
            h[r][c] = packed[tri(r, c)];
            h[c][r] = packed[tri(r, c)].conj();
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> LatticeGeometry {
        LatticeGeometry::new([2, 2, 2, 4]).unwrap()
    }

    #[test]
    fn unit_gauge_is_identity() {
        let u = GaugeField::generate(&geom(), GaugeMode::Unit, 0);
        for x in 0..geom().n_sites() {
            for mu in 0..4 {
                assert_eq!(u.link(x, mu), &IDENTITY3[..]);
            }
        }
    }

    #[test]
    fn random_gauge_special_unitary() {
        let u = GaugeField::generate(&geom(), GaugeMode::Random, 7);
        for x in 0..geom().n_sites() {
            for mu in 0..4 {
                let l: &Su3 = u.link(x, mu).try_into().unwrap();
                assert!(unitarity_defect(l) <= 1e-12);
                assert!((det3(l) - C64::new(1.0, 0.0)).norm() <= 1e-12);
            }
        }
        assert!(u.validate(1e-12).is_ok());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = GaugeField::generate(&geom(), GaugeMode::Random, 42);
        let b = GaugeField::generate(&geom(), GaugeMode::Random, 42);
        let c = GaugeField::generate(&geom(), GaugeMode::Random, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let s = CloverMode::RandomHermitian { scale: 0.3 };
        assert_eq!(
            CloverField::generate(&geom(), s, 5),
            CloverField::generate(&geom(), s, 5)
        );
    }

    #[test]
    fn corrupted_gauge_fails_validation() {
        let mut u = GaugeField::generate(&geom(), GaugeMode::Random, 7);
        u.link_mut(3, 2)[4] *= 1.01;
        let err = u.validate(1e-12).unwrap_err();
        assert!(alloc::format!("{err}").contains("site 3, mu 2"));
    }

    #[test]
    fn clover_blocks_hermitian() {
        let c = CloverField::generate(&geom(), CloverMode::RandomHermitian { scale: 0.5 }, 1);
        for x in 0..geom().n_sites() {
            for blk in 0..2 {
                let h = c.block(x, blk);
                for r in 0..6 {
                    for col in 0..6 {
                        assert_eq!(h[r][col], h[col][r].conj());
                    }
                    assert_eq!(h[r][r].im, 0.0);
                }
            }
        }
        assert_eq!(c.data().len(), geom().n_sites() * 42);
    }
}
