//! Odd-even splitting and the even-site Schur complement
//! `S = D_ee - D_eo D_oo^-1 D_oe`.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use num_complex::Complex64 as C64;

use crate::dirac::{HoppingWorkspace, Plain, WilsonDirac};
use crate::error::{shape, Error, Result};
use crate::exec::Executor;
use crate::field::{BlockField, LayoutPolicy, SPINOR};
use crate::gauge::CLOVER_BLOCK;
use crate::gauge::{expand_hermitian, CloverField};
use crate::geometry::{LatticeGeometry, Parity};
use crate::operator::LinearOperator;

/// Per-site blocks whose smallest-to-largest pivot ratio falls below this are
/// rejected as singular.
pub const PIVOT_RATIO_THRESHOLD: f64 = 1e-12;

/// Even and odd site lists in ascending order, plus each site's position
/// within its own list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OeSplit {
    even: Vec<usize>,
    odd: Vec<usize>,
    position: Vec<usize>,
}

impl OeSplit {
    pub fn new(geom: &LatticeGeometry) -> Self {
        let mut even = Vec::with_capacity(geom.n_sites() / 2);
        let mut odd = Vec::with_capacity(geom.n_sites() / 2);
        let mut position = vec![0; geom.n_sites()];
        for x in 0..geom.n_sites() {
            let list = match geom.parity_of(x) {
                Parity::Even => &mut even,
                Parity::Odd => &mut odd,
            };
            position[x] = list.len();
            list.push(x);
        }
        Self { even, odd, position }
    }

    pub fn even(&self) -> &[usize] {
        &self.even
    }

    pub fn odd(&self) -> &[usize] {
        &self.odd
    }

    pub fn sites(&self, p: Parity) -> &[usize] {
        match p {
            Parity::Even => &self.even,
            Parity::Odd => &self.odd,
        }
    }

    /// Position of `site` within its parity list.
    pub fn position(&self, site: usize) -> usize {
        self.position[site]
    }

    pub fn n_sites(&self) -> usize {
        self.position.len()
    }

    /// Gathers the sites of one parity into a half-size field.
    pub fn restrict(&self, v: &BlockField, p: Parity) -> Result<BlockField> {
        if v.n_sites() != self.n_sites() {
            return Err(shape!("split: field has {} sites, lattice {}", v.n_sites(), self.n_sites()));
        }
        let sites = self.sites(p);
        let mut out = BlockField::zeros(sites.len(), v.components(), v.policy());
        for (j, &x) in sites.iter().enumerate() {
            out.site_block_mut(j).copy_from_slice(v.site_block(x));
        }
        Ok(out)
    }

    /// Writes a half-size field into the sites of one parity of `full`.
    pub fn embed(&self, half: &BlockField, p: Parity, full: &mut BlockField) -> Result<()> {
        let sites = self.sites(p);
        if half.n_sites() != sites.len() || full.n_sites() != self.n_sites() {
            return Err(shape!("embed: {} sites into a parity of {}", half.n_sites(), sites.len()));
        }
        if half.components() != full.components() || half.policy() != full.policy() {
            return Err(shape!("embed: component count or layout differ"));
        }
        for (j, &x) in sites.iter().enumerate() {
            full.site_block_mut(x).copy_from_slice(half.site_block(j));
        }
        Ok(())
    }

    pub fn split(&self, v: &BlockField) -> Result<(BlockField, BlockField)> {
        Ok((self.restrict(v, Parity::Even)?, self.restrict(v, Parity::Odd)?))
    }

    pub fn merge(&self, even: &BlockField, odd: &BlockField) -> Result<BlockField> {
        let mut full = BlockField::zeros(self.n_sites(), even.components(), even.policy());
        self.embed(even, Parity::Even, &mut full)?;
        self.embed(odd, Parity::Odd, &mut full)?;
        Ok(full)
    }
}

/// LU factors of the two 6x6 blocks of `(4 + m0) - C(x)` at a list of sites.
#[derive(Debug, Clone)]
pub struct SiteBlockInverse {
    lu: Vec<[C64; 36]>,
    piv: Vec<[usize; 6]>,
}

fn lu6(a: &[[C64; 6]; 6]) -> ([C64; 36], [usize; 6], f64) {
    let mut m = [C64::new(0.0, 0.0); 36];
    for r in 0..6 {
        m[r * 6..r * 6 + 6].copy_from_slice(&a[r]);
    }
    let mut piv = [0usize; 6];
    let (mut pmin, mut pmax) = (f64::INFINITY, 0.0f64);
    for k in 0..6 {
        let p = (k..6)
            .max_by(|&i, &j| m[i * 6 + k].norm().total_cmp(&m[j * 6 + k].norm()))
            .unwrap_or(k);
        piv[k] = p;
        if p != k {
            for c in 0..6 {
                m.swap(k * 6 + c, p * 6 + c);
            }
        }
        let d = m[k * 6 + k];
        pmin = pmin.min(d.norm());
        pmax = pmax.max(d.norm());
        if d.norm() == 0.0 {
            continue;
        }
        for r in k + 1..6 {
            let l = m[r * 6 + k] / d;
            m[r * 6 + k] = l;
            for c in k + 1..6 {
                let t = m[k * 6 + c];
                m[r * 6 + c] -= l * t;
            }
        }
    }
    let ratio = if pmax > 0.0 { pmin / pmax } else { 0.0 };
    (m, piv, ratio)
}

fn solve6(lu: &[C64; 36], piv: &[usize; 6], x: &mut [C64; 6]) {
    for k in 0..6 {
        x.swap(k, piv[k]);
    }
    for r in 0..6 {
        for c in 0..r {
            let t = lu[r * 6 + c] * x[c];
            x[r] -= t;
        }
    }
    for r in (0..6).rev() {
        for c in r + 1..6 {
            let t = lu[r * 6 + c] * x[c];
            x[r] -= t;
        }
        x[r] /= lu[r * 6 + r];
    }
}

impl SiteBlockInverse {
    pub fn new(diag: f64, clover: &CloverField, sites: &[usize]) -> Result<Self> {
        let mut lu = Vec::with_capacity(2 * sites.len());
        let mut piv = Vec::with_capacity(2 * sites.len());
        for &x in sites {
            for blk in 0..2 {
                let c = expand_hermitian(&clover.data()[(x * 2 + blk) * CLOVER_BLOCK..][..CLOVER_BLOCK]);
                let a: [[C64; 6]; 6] = core::array::from_fn(|r| {
                    core::array::from_fn(|cc| if r == cc { C64::new(diag, 0.0) - c[r][cc] } else { -c[r][cc] })
                });
                let (m, p, ratio) = lu6(&a);
                if !(ratio >= PIVOT_RATIO_THRESHOLD) {
                    return Err(Error::SingularBlock {
                        site: x,
                        pivot_ratio: ratio,
                    });
                }
                lu.push(m);
                piv.push(p);
            }
        }
        Ok(Self { lu, piv })
    }

    /// Solves in place for the site block stored at position `j`.
    pub fn solve_block(&self, j: usize, v: &mut [C64], policy: LayoutPolicy) {
        let (ks, is) = policy.strides(SPINOR);
        for i in 0..policy.b() {
            for blk in 0..2 {
                let mut x: [C64; 6] = core::array::from_fn(|r| v[(blk * 6 + r) * ks + i * is]);
                solve6(&self.lu[2 * j + blk], &self.piv[2 * j + blk], &mut x);
                for (r, val) in x.iter().enumerate() {
                    v[(blk * 6 + r) * ks + i * is] = *val;
                }
            }
        }
    }

    /// Solves every block of a half-size field.
    pub fn solve_field(&self, v: &mut BlockField) -> Result<()> {
        if 2 * v.n_sites() != self.lu.len() || v.components() != SPINOR {
            return Err(shape!("block solve on {} sites, factored {}", v.n_sites(), self.lu.len() / 2));
        }
        let policy = v.policy();
        for j in 0..v.n_sites() {
            self.solve_block(j, v.site_block_mut(j), policy);
        }
        Ok(())
    }
}

struct Scratch {
    policy: LayoutPolicy,
    full_in: BlockField,
    full_out: BlockField,
    ws: HoppingWorkspace,
}

/// Odd-even reduced system for one operator.
pub struct OddEven<'d> {
    dirac: &'d WilsonDirac<'d>,
    exec: &'d dyn Executor,
    split: OeSplit,
    odd_inverse: SiteBlockInverse,
    scratch: RefCell<Option<Scratch>>,
}

impl<'d> OddEven<'d> {
    pub fn new(dirac: &'d WilsonDirac<'d>, exec: &'d dyn Executor) -> Result<Self> {
        let split = OeSplit::new(dirac.geometry());
        let odd_inverse = SiteBlockInverse::new(dirac.params().diagonal(), dirac.clover(), split.odd())?;
        Ok(Self {
            dirac,
            exec,
            split,
            odd_inverse,
            scratch: RefCell::new(None),
        })
    }

    pub fn split(&self) -> &OeSplit {
        &self.split
    }

    pub fn dirac(&self) -> &WilsonDirac<'d> {
        self.dirac
    }

    fn with_scratch<T>(&self, policy: LayoutPolicy, f: impl FnOnce(&mut Scratch) -> Result<T>) -> Result<T> {
        let mut slot = self.scratch.borrow_mut();
        let sc = match slot.as_mut() {
            Some(sc) if sc.policy == policy => sc,
            _ => {
                let n = self.split.n_sites();
                slot.insert(Scratch {
                    policy,
                    full_in: BlockField::zeros(n, SPINOR, policy),
                    full_out: BlockField::zeros(n, SPINOR, policy),
                    ws: self.dirac.workspace(policy),
                })
            }
        };
        f(sc)
    }

    /// `out = D_{target, source} v` for a half field `v` on the source parity.
    fn hop(&self, sc: &mut Scratch, v: &BlockField, target: Parity) -> Result<BlockField> {
        sc.full_in.fill_zero();
        self.split.embed(v, target.flip(), &mut sc.full_in)?;
        self.dirac.hopping_to(&sc.full_in, &mut sc.full_out, &mut sc.ws, target, self.exec)?;
        self.split.restrict(&sc.full_out, target)
    }

    fn check_half(&self, v: &BlockField) -> Result<()> {
        if v.n_sites() != self.split.even().len() || v.components() != SPINOR {
            return Err(shape!(
                "half field must have {} sites x 12 components, got {} x {}",
                self.split.even().len(),
                v.n_sites(),
                v.components()
            ));
        }
        Ok(())
    }

    /// `v_odd <- D_oo^-1 v_odd`.
    pub fn apply_odd_inverse(&self, v: &mut BlockField) -> Result<()> {
        self.odd_inverse.solve_field(v)
    }

    /// `w = S v` on even sites.
    pub fn apply_schur(&self, v: &BlockField, w: &mut BlockField) -> Result<()> {
        self.check_half(v)?;
        v.check_same_shape(w, "schur output")?;
        self.with_scratch(v.policy(), |sc| {
            let mut t = self.hop(sc, v, Parity::Odd)?;
            self.odd_inverse.solve_field(&mut t)?;
            let u = self.hop(sc, &t, Parity::Even)?;
            self.dirac
                .self_coupling_with(&Plain, v, w, self.exec, Some(self.split.even()))?;
            for (a, b) in w.data_mut().iter_mut().zip(u.data()) {
                *a -= b;
            }
            Ok(())
        })
    }

    /// Even-site right-hand side `eta_e - D_eo D_oo^-1 eta_o`.
    pub fn prepare_rhs(&self, eta: &BlockField) -> Result<BlockField> {
        let (mut eta_e, mut eta_o) = self.split.split(eta)?;
        self.odd_inverse.solve_field(&mut eta_o)?;
        let u = self.with_scratch(eta.policy(), |sc| self.hop(sc, &eta_o, Parity::Even))?;
        for (a, b) in eta_e.data_mut().iter_mut().zip(u.data()) {
            *a -= b;
        }
        Ok(eta_e)
    }

    /// `x_o = D_oo^-1 (eta_o - D_oe x_e)`.
    pub fn reconstruct_odd(&self, x_even: &BlockField, eta: &BlockField) -> Result<BlockField> {
        self.check_half(x_even)?;
        let mut r = self.split.restrict(eta, Parity::Odd)?;
        let u = self.with_scratch(x_even.policy(), |sc| self.hop(sc, x_even, Parity::Odd))?;
        for (a, b) in r.data_mut().iter_mut().zip(u.data()) {
            *a -= b;
        }
        self.odd_inverse.solve_field(&mut r)?;
        Ok(r)
    }

    /// Full solution from the even half.
    pub fn reconstruct_full(&self, x_even: &BlockField, eta: &BlockField) -> Result<BlockField> {
        let x_odd = self.reconstruct_odd(x_even, eta)?;
        self.split.merge(x_even, &x_odd)
    }
}

impl LinearOperator for OddEven<'_> {
    fn apply(&self, x: &BlockField, y: &mut BlockField) -> Result<()> {
        self.apply_schur(x, y)
    }
}
