//! Dense ground truth for tiny lattices.
//!
//! Everything here is deliberately naive: the operator is assembled from full
//! 12x12 link blocks `(I -+ gamma_mu)/2 (x) U`, with no spin compression and no
//! shared kernel code, so it can check the production operator.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64 as C64;

use crate::dirac::DiracParams;
use crate::error::{invalid, shape, Error, Result};
use crate::field::{BlockField, Layout, LayoutPolicy, SPINOR};
use crate::gamma::gamma;
use crate::gauge::{CloverField, GaugeField};
use crate::geometry::{Direction, LatticeGeometry, Parity, NDIM};

/// Largest dense dimension the assemblers accept (a 6^4 lattice).
pub const MAX_DENSE_DIM: usize = 20736;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Square or rectangular complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape!("{} entries for a {rows}x{cols} matrix", data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        self.data[r * self.cols + c] = v;
    }

    fn add_to(&mut self, r: usize, c: usize, v: C64) {
        self.data[r * self.cols + c] += v;
    }

    pub fn matvec(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.cols {
            return Err(shape!("matvec: vector of {} for {} columns", v.len(), self.cols));
        }
        Ok(self
            .data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `self * other`, skipping zero entries of `self`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(shape!("matmul {}x{} by {}x{}", self.rows, self.cols, other.rows, other.cols));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * other.cols..][..other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == ZERO {
                    continue;
                }
                for (o, b) in orow.iter_mut().zip(&other.data[k * other.cols..][..other.cols]) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(shape!("subtracting {}x{} from {}x{}", other.rows, other.cols, self.rows, self.cols));
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn adjoint(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c].conj();
            }
        }
        out
    }

    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(rows.len(), cols.len());
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                out.data[i * cols.len() + j] = self.get(r, c);
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Applies the matrix to every rhs column of a field whose elements are
    /// ordered `site * s + component`.
    pub fn apply_field(&self, v: &BlockField) -> Result<BlockField> {
        let n = v.n_sites() * v.components();
        if n != self.cols || self.rows != self.cols {
            return Err(shape!("field of dimension {n} vs {}x{} matrix", self.rows, self.cols));
        }
        let mut out = BlockField::zeros(v.n_sites(), v.components(), v.policy());
        for i in 0..v.b() {
            out.set_column(i, &self.matvec(&v.column(i))?)?;
        }
        Ok(out)
    }

    pub fn lu(&self) -> Result<DenseLu> {
        DenseLu::factor(self)
    }
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    lu: Vec<C64>,
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(shape!("LU of a {}x{} matrix", a.rows, a.cols));
        }
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| lu[i * n + k].norm().total_cmp(&lu[j * n + k].norm()))
                .unwrap_or(k);
            if lu[p * n + k] == ZERO {
                return Err(Error::SingularMatrix(k));
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                piv.swap(k, p);
            }
            let pivot = lu[k * n + k];
            let (top, bottom) = lu.split_at_mut((k + 1) * n);
            let krow = &top[k * n..];
            for row in bottom.chunks_exact_mut(n) {
                let l = row[k] / pivot;
                row[k] = l;
                if l != ZERO {
                    for c in k + 1..n {
                        row[c] -= l * krow[c];
                    }
                }
            }
        }
        Ok(Self { n, lu, piv })
    }

    pub fn solve(&self, rhs: &[C64]) -> Result<Vec<C64>> {
        let n = self.n;
        if rhs.len() != n {
            return Err(shape!("solve: rhs of {} for dimension {n}", rhs.len()));
        }
        let mut x: Vec<C64> = self.piv.iter().map(|&p| rhs[p]).collect();
        for r in 0..n {
            let row = &self.lu[r * n..][..r];
            let s: C64 = row.iter().zip(&x[..r]).map(|(a, b)| a * b).sum();
            x[r] -= s;
        }
        for r in (0..n).rev() {
            let row = &self.lu[r * n..][..n];
            let s: C64 = row[r + 1..].iter().zip(&x[r + 1..]).map(|(a, b)| a * b).sum();
            x[r] = (x[r] - s) / row[r];
        }
        Ok(x)
    }
}

/// Solves `A x = y` for each column of `rhs`.
pub fn dense_solve(a: &DenseMatrix, rhs: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
    let lu = a.lu()?;
    rhs.iter().map(|y| lu.solve(y)).collect()
}

/// Minimizer of `|A y - v|_2` through the normal equations.
pub fn dense_lstsq(a: &DenseMatrix, v: &[C64]) -> Result<Vec<C64>> {
    if v.len() != a.rows {
        return Err(shape!("lstsq: vector of {} for {} rows", v.len(), a.rows));
    }
    let ah = a.adjoint();
    let normal = ah.matmul(a)?;
    let rhs = ah.matvec(v)?;
    normal.lu()?.solve(&rhs)
}

fn check_size(n: usize) -> Result<()> {
    if n > MAX_DENSE_DIM {
        return Err(invalid!("dense dimension {n} exceeds the guard {MAX_DENSE_DIM}"));
    }
    Ok(())
}

fn kron_proj_link(p: &[[C64; 4]; 4], u: &[[C64; 3]; 3]) -> [[C64; 12]; 12] {
    let mut m = [[ZERO; 12]; 12];
    for s1 in 0..4 {
        for s2 in 0..4 {
            for c1 in 0..3 {
                for c2 in 0..3 {
                    m[s1 * 3 + c1][s2 * 3 + c2] = p[s1][s2] * u[c1][c2];
                }
            }
        }
    }
    m
}

fn half_projector(mu: usize, gamma_sign: f64) -> [[C64; 4]; 4] {
    let g = gamma(mu);
    let mut p = [[ZERO; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            let id = if r == c { 1.0 } else { 0.0 };
            p[r][c] = (C64::new(id, 0.0) + g[r][c] * gamma_sign) * 0.5;
        }
    }
    p
}

fn link3(u: &[C64]) -> [[C64; 3]; 3] {
    core::array::from_fn(|r| core::array::from_fn(|c| u[r * 3 + c]))
}

fn link3_adjoint(u: &[C64]) -> [[C64; 3]; 3] {
    core::array::from_fn(|r| core::array::from_fn(|c| u[c * 3 + r].conj()))
}

/// Dense `D = (4 + m0) - C - sum_mu [P-_mu (x) U_mu(x) T_+mu + P+_mu (x) U_mu^H(x - mu) T_-mu]`.
pub fn assemble_dirac_dense(params: DiracParams, gauge: &GaugeField, clover: &CloverField) -> Result<DenseMatrix> {
    let geom: LatticeGeometry = *gauge.geometry();
    if clover.geometry() != &geom {
        return Err(shape!("gauge and clover lattices differ"));
    }
    let nl = geom.n_sites();
    let n = SPINOR * nl;
    check_size(n)?;
    let mut d = DenseMatrix::zeros(n, n);
    let diag = 4.0 + params.m0;
    for x in 0..nl {
        for k in 0..SPINOR {
            d.add_to(x * 12 + k, x * 12 + k, C64::new(diag, 0.0));
        }
        for blk in 0..2 {
            let c = clover.block(x, blk);
            for r in 0..6 {
                for cc in 0..6 {
                    d.add_to(x * 12 + blk * 6 + r, x * 12 + blk * 6 + cc, -c[r][cc]);
                }
            }
        }
        for mu in 0..NDIM {
            let fwd = geom.neighbor_index(x, mu, Direction::Forward);
            let bwd = geom.neighbor_index(x, mu, Direction::Backward);
            let pm = half_projector(mu, 1.0);
            let pp = half_projector(mu, -1.0);
            let forward_block = kron_proj_link(&pm, &link3(gauge.link(x, mu)));
            let backward_block = kron_proj_link(&pp, &link3_adjoint(gauge.link(bwd, mu)));
            for r in 0..12 {
                for c in 0..12 {
                    d.add_to(x * 12 + r, fwd * 12 + c, -forward_block[r][c]);
                    d.add_to(x * 12 + r, bwd * 12 + c, -backward_block[r][c]);
                }
            }
        }
    }
    Ok(d)
}

/// Row/column indices of all spinor components on sites of one parity, in
/// ascending site order.
pub fn parity_indices(geom: &LatticeGeometry, parity: Parity) -> Vec<usize> {
    (0..geom.n_sites())
        .filter(|&x| geom.parity_of(x) == parity)
        .flat_map(|x| (0..SPINOR).map(move |k| x * SPINOR + k))
        .collect()
}

/// Dense Schur complement `D_ee - D_eo D_oo^-1 D_oe` on even sites, ordered
/// by ascending even site.
pub fn assemble_schur_dense(params: DiracParams, gauge: &GaugeField, clover: &CloverField) -> Result<DenseMatrix> {
    let d = assemble_dirac_dense(params, gauge, clover)?;
    let geom = gauge.geometry();
    let e = parity_indices(geom, Parity::Even);
    let o = parity_indices(geom, Parity::Odd);
    let dee = d.submatrix(&e, &e);
    let deo = d.submatrix(&e, &o);
    let doe = d.submatrix(&o, &e);
    let doo = d.submatrix(&o, &o);
    // D_oo is block diagonal on sites; invert it block by block.
    let no = o.len();
    let mut doo_inv = DenseMatrix::zeros(no, no);
    for b0 in (0..no).step_by(SPINOR) {
        for r in 0..no {
            for c in 0..SPINOR {
                let inside = (b0..b0 + SPINOR).contains(&r);
                if !inside && doo.get(r, b0 + c) != ZERO {
                    return Err(invalid!("odd-odd block is not site diagonal"));
                }
            }
        }
        let idx: Vec<usize> = (b0..b0 + SPINOR).collect();
        let lu = doo.submatrix(&idx, &idx).lu()?;
        for c in 0..SPINOR {
            let mut unit = vec![ZERO; SPINOR];
            unit[c] = C64::new(1.0, 0.0);
            let col = lu.solve(&unit)?;
            for r in 0..SPINOR {
                doo_inv.set(b0 + r, b0 + c, col[r]);
            }
        }
    }
    let correction = deo.matmul(&doo_inv.matmul(&doe)?)?;
    dee.sub(&correction)
}

/// Column `i` of a field as a dense vector, in `site * 12 + component` order.
pub fn field_columns(v: &BlockField) -> Vec<Vec<C64>> {
    (0..v.b()).map(|i| v.column(i)).collect()
}

/// Builds a field from dense columns.
pub fn field_from_columns(n_sites: usize, s: usize, layout: Layout, cols: &[Vec<C64>]) -> Result<BlockField> {
    let policy = LayoutPolicy::new(layout, cols.len())?;
    let mut f = BlockField::zeros(n_sites, s, policy);
    for (i, c) in cols.iter().enumerate() {
        f.set_column(i, c)?;
    }
    Ok(f)
}

/// Largest per-rhs relative difference `|a_i - b_i| / |b_i|`.
pub fn max_relative_error(a: &BlockField, b: &BlockField) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.b() {
        let (ca, cb) = (a.column(i), b.column(i));
        let diff: f64 = ca.iter().zip(&cb).map(|(x, y)| (x - y).norm_sqr()).sum();
        let norm: f64 = cb.iter().map(|y| y.norm_sqr()).sum();
        worst = worst.max(libm::sqrt(diff) / libm::sqrt(norm).max(f64::MIN_POSITIVE));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::{CloverMode, GaugeMode};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn lu_solves_random_system() {
        let n = 17;
        let a = DenseMatrix::from_rows(
            n,
            n,
            BlockField::random(n, n, LayoutPolicy::unblocked(), 11).into_data(),
        )
        .unwrap();
        let y: Vec<C64> = (0..n).map(|k| c(k as f64, 1.0)).collect();
        let x = dense_solve(&a, &[y.clone()]).unwrap().remove(0);
        let ax = a.matvec(&x).unwrap();
        let err: f64 = ax.iter().zip(&y).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        let ny: f64 = y.iter().map(|q| q.norm()).fold(0.0, f64::max);
        assert!(err <= 1e-10 * ny);
    }

    #[test]
    fn identity_solve_and_singular() {
        let id = DenseMatrix::identity(4);
        let y = vec![c(1.0, 2.0), c(3.0, 0.0), c(0.0, -1.0), c(5.0, 5.0)];
        assert_eq!(dense_solve(&id, &[y.clone()]).unwrap()[0], y);
        let z = DenseMatrix::zeros(3, 3);
        assert_eq!(z.lu().unwrap_err(), Error::SingularMatrix(0));
    }

    #[test]
    fn lstsq_matches_hand_example() {
        let a = DenseMatrix::from_rows(2, 1, vec![c(2.0, 0.0), c(0.0, 0.0)]).unwrap();
        let y = dense_lstsq(&a, &[c(6.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert!((y[0] - c(3.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn free_field_constant_vector() {
        let geom = LatticeGeometry::new([2, 2, 2, 2]).unwrap();
        let u = GaugeField::unit(&geom);
        let cl = CloverField::zero(&geom);
        let m0 = -0.5;
        let d = assemble_dirac_dense(DiracParams::new(m0), &u, &cl).unwrap();
        let v: Vec<C64> = (0..d.cols()).map(|k| c(((k % 12) as f64) - 3.0, 0.5)).collect();
        let dv = d.matvec(&v).unwrap();
        for (a, b) in dv.iter().zip(&v) {
            assert!((a - b * m0).norm() < 1e-14);
        }
    }

    #[test]
    fn block_sparsity_on_small_lattice() {
        let geom = LatticeGeometry::new([2, 2, 2, 2]).unwrap();
        let u = GaugeField::generate(&geom, GaugeMode::Random, 4);
        let cl = CloverField::generate(&geom, CloverMode::RandomHermitian { scale: 0.3 }, 5);
        let d = assemble_dirac_dense(DiracParams::new(0.1), &u, &cl).unwrap();
        let nl = geom.n_sites();
        for x in 0..nl {
            let nonzero = (0..nl)
                .filter(|&y| (0..12).any(|r| (0..12).any(|cc| d.get(x * 12 + r, y * 12 + cc) != ZERO)))
                .count();
            // self plus four distinct neighbours: on extent 2 both hops of a
            // direction land on the same site
            assert_eq!(nonzero, 5);
        }
    }

    #[test]
    fn schur_halves_dimension() {
        let geom = LatticeGeometry::new([2, 2, 2, 2]).unwrap();
        let u = GaugeField::generate(&geom, GaugeMode::Random, 8);
        let cl = CloverField::zero(&geom);
        let s = assemble_schur_dense(DiracParams::new(0.2), &u, &cl).unwrap();
        assert_eq!(s.rows(), 6 * geom.n_sites());
        assert_eq!(s.cols(), 6 * geom.n_sites());
        assert!(s.all_finite());
    }

    #[test]
    fn size_guard() {
        let geom = LatticeGeometry::new([8, 8, 8, 4]).unwrap();
        let u = GaugeField::unit(&geom);
        let cl = CloverField::zero(&geom);
        assert!(assemble_dirac_dense(DiracParams::new(0.0), &u, &cl).is_err());
    }
}
