//! Block-vector storage for `b` right-hand sides and the BLAS-1 style kernels
//! the solver needs.
//!
//! Per site, the `s x b` matrix of components by right-hand sides is stored
//! either column-major (all components of rhs 0, then rhs 1, ...) or row-major
//! (all rhs of component 0, then component 1, ...). Site blocks are laid out by
//! ascending site number and complex values keep their natural interleaved
//! real/imaginary format.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, shape, Result};

/// Components per site of a full spinor (4 spin x 3 colour).
pub const SPINOR: usize = 12;
/// Components per site of a projected half spinor.
pub const HALF_SPINOR: usize = 6;

/// Number of partial sums each right-hand side keeps in the reductions.
pub const REDUCTION_LANES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    /// Layout 1: offset `i * s + k` inside a site block.
    ColumnMajor,
    /// Layout 2: offset `k * b + i` inside a site block.
    RowMajor,
}

impl Layout {
    pub fn number(self) -> u8 {
        match self {
            Layout::ColumnMajor => 1,
            Layout::RowMajor => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Layout::ColumnMajor),
            2 => Ok(Layout::RowMajor),
            _ => Err(invalid!("layout must be 1 or 2, got {n}")),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Storage order and blocking size of a block field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayoutPolicy {
    layout: Layout,
    b: usize,
}

impl LayoutPolicy {
    pub fn new(layout: Layout, b: usize) -> Result<Self> {
        if b == 0 {
            return Err(invalid!("blocking size must be at least 1"));
        }
        Ok(Self { layout, b })
    }

    /// The unblocked baseline: layout 1 with one right-hand side.
    pub fn unblocked() -> Self {
        Self {
            layout: Layout::ColumnMajor,
            b: 1,
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn b(&self) -> usize {
        self.b
    }

    /// `(component stride, rhs stride)` inside a site block of `s` components.
    #[inline]
    pub fn strides(&self, s: usize) -> (usize, usize) {
        match self.layout {
            Layout::ColumnMajor => (1, s),
            Layout::RowMajor => (self.b, 1),
        }
    }

    #[inline]
    pub fn offset(&self, s: usize, x: usize, k: usize, i: usize) -> usize {
        let (ks, is) = self.strides(s);
        x * s * self.b + k * ks + i * is
    }
}

/// Checked storage offset of element `(site x, component k, rhs i)`.
pub fn element_offset(
    policy: LayoutPolicy,
    s: usize,
    n_sites: usize,
    x: usize,
    k: usize,
    i: usize,
) -> Result<usize> {
    if x >= n_sites || k >= s || i >= policy.b() {
        return Err(invalid!(
            "element (x={x}, k={k}, i={i}) outside ({n_sites}, {s}, {})",
            policy.b()
        ));
    }
    Ok(policy.offset(s, x, k, i))
}

/// `b` vectors of `s` complex components on each of `n_sites` sites.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockField {
    n_sites: usize,
    s: usize,
    policy: LayoutPolicy,
    data: Vec<C64>,
}

impl BlockField {
    pub fn zeros(n_sites: usize, s: usize, policy: LayoutPolicy) -> Self {
        Self {
            n_sites,
            s,
            policy,
            data: vec![C64::new(0.0, 0.0); n_sites * s * policy.b()],
        }
    }

    pub fn from_fn(
        n_sites: usize,
        s: usize,
        policy: LayoutPolicy,
        mut f: impl FnMut(usize, usize, usize) -> C64,
    ) -> Self {
        let mut out = Self::zeros(n_sites, s, policy);
        for x in 0..n_sites {
            for i in 0..policy.b() {
                for k in 0..s {
                    out.data[policy.offset(s, x, k, i)] = f(x, k, i);
                }
            }
        }
        out
    }

    /// Wraps raw storage already in `policy` order.
    pub fn from_raw(n_sites: usize, s: usize, policy: LayoutPolicy, data: Vec<C64>) -> Result<Self> {
        if data.len() != n_sites * s * policy.b() {
            return Err(shape!(
                "raw data length {} != {} sites x {s} x {}",
                data.len(),
                n_sites,
                policy.b()
            ));
        }
        Ok(Self {
            n_sites,
            s,
            policy,
            data,
        })
    }

    /// Entries drawn from a unit complex Gaussian (each part variance 1/2),
    /// generated in natural `(x, i, k)` order so the values do not depend on
    /// the layout.
    pub fn random(n_sites: usize, s: usize, policy: LayoutPolicy, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = core::f64::consts::FRAC_1_SQRT_2;
        Self::from_fn(n_sites, s, policy, |_, _, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re * scale, im * scale)
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn components(&self) -> usize {
        self.s
    }

    pub fn policy(&self) -> LayoutPolicy {
        self.policy
    }

    pub fn b(&self) -> usize {
        self.policy.b()
    }

    pub fn block_len(&self) -> usize {
        self.s * self.policy.b()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, k: usize, i: usize) -> C64 {
        self.data[self.policy.offset(self.s, x, k, i)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, k: usize, i: usize, v: C64) {
        let o = self.policy.offset(self.s, x, k, i);
        self.data[o] = v;
    }

    pub fn site_block(&self, x: usize) -> &[C64] {
        let l = self.block_len();
        &self.data[x * l..(x + 1) * l]
    }

    pub fn site_block_mut(&mut self, x: usize) -> &mut [C64] {
        let l = self.block_len();
        &mut self.data[x * l..(x + 1) * l]
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(C64::new(0.0, 0.0));
    }

    pub fn same_shape(&self, other: &BlockField) -> bool {
        self.n_sites == other.n_sites && self.s == other.s && self.policy == other.policy
    }

    pub fn check_same_shape(&self, other: &BlockField, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(shape!(
                "{what}: ({} sites, s={}, {:?}) vs ({} sites, s={}, {:?})",
                self.n_sites,
                self.s,
                self.policy,
                other.n_sites,
                other.s,
                other.policy
            ))
        }
    }

    pub fn copy_from(&mut self, other: &BlockField) -> Result<()> {
        self.check_same_shape(other, "copy")?;
        self.data.copy_from_slice(&other.data);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Right-hand side `i` as a plain vector in `(site, component)` order.
    pub fn column(&self, i: usize) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.n_sites * self.s);
        for x in 0..self.n_sites {
            for k in 0..self.s {
                out.push(self.get(x, k, i));
            }
        }
        out
    }

    pub fn set_column(&mut self, i: usize, v: &[C64]) -> Result<()> {
        if v.len() != self.n_sites * self.s || i >= self.b() {
            return Err(shape!("column {i} of length {}", v.len()));
        }
        for x in 0..self.n_sites {
            for k in 0..self.s {
                self.set(x, k, i, v[x * self.s + k]);
            }
        }
        Ok(())
    }

    /// Single-rhs field holding column `i`.
    pub fn extract_rhs(&self, i: usize) -> BlockField {
        let p = LayoutPolicy::new(self.policy.layout(), 1).expect("b = 1 is valid");
        Self::from_fn(self.n_sites, self.s, p, |x, k, _| self.get(x, k, i))
    }

    /// Stacks single-rhs fields into one block field.
    pub fn from_rhs(cols: &[BlockField], layout: Layout) -> Result<BlockField> {
        let first = cols
            .first()
            .ok_or_else(|| invalid!("need at least one right-hand side"))?;
        let policy = LayoutPolicy::new(layout, cols.len())?;
        for c in cols {
            if c.n_sites != first.n_sites || c.s != first.s || c.b() != 1 {
                return Err(shape!("right-hand sides must be single-rhs fields of equal shape"));
            }
        }
        Ok(Self::from_fn(first.n_sites, first.s, policy, |x, k, i| {
            cols[i].get(x, k, 0)
        }))
    }

    /// Value-preserving permutation into another layout with the same `b`.
    pub fn convert_layout(&self, target: LayoutPolicy) -> Result<BlockField> {
        if target.b() != self.b() {
            return Err(shape!(
                "layout conversion cannot change b ({} -> {})",
                self.b(),
                target.b()
            ));
        }
        if target == self.policy {
            return Ok(self.clone());
        }
        let mut out = Self::zeros(self.n_sites, self.s, target);
        let l = self.block_len();
        let (sks, sis) = self.policy.strides(self.s);
        let (tks, tis) = target.strides(self.s);
        for (src, dst) in self.data.chunks_exact(l).zip(out.data.chunks_exact_mut(l)) {
            for k in 0..self.s {
                for i in 0..self.b() {
                    dst[k * tks + i * tis] = src[k * sks + i * sis];
                }
            }
        }
        Ok(out)
    }
}

/// `y(i) += alpha(i) * x(i)` for every right-hand side `i`.
pub fn block_axpy(alpha: &[C64], x: &BlockField, y: &mut BlockField) -> Result<()> {
    y.check_same_shape(x, "axpy")?;
    if alpha.len() != x.b() {
        return Err(shape!("axpy: {} coefficients for b = {}", alpha.len(), x.b()));
    }
    let s = x.s;
    let b = x.b();
    match x.policy.layout() {
        Layout::RowMajor => {
            for (xs, ys) in x.data.chunks_exact(b).zip(y.data.chunks_exact_mut(b)) {
                for ((yv, xv), a) in ys.iter_mut().zip(xs).zip(alpha) {
                    *yv += a * xv;
                }
            }
        }
        Layout::ColumnMajor => {
            for (n, (xs, ys)) in x.data.chunks_exact(s).zip(y.data.chunks_exact_mut(s)).enumerate() {
                let a = alpha[n % b];
                for (yv, xv) in ys.iter_mut().zip(xs) {
                    *yv += a * xv;
                }
            }
        }
    }
    Ok(())
}

/// `v(i) *= alpha(i)` for every right-hand side `i`.
pub fn block_scale(alpha: &[C64], v: &mut BlockField) -> Result<()> {
    if alpha.len() != v.b() {
        return Err(shape!("scale: {} coefficients for b = {}", alpha.len(), v.b()));
    }
    let s = v.s;
    let b = v.b();
    match v.policy.layout() {
        Layout::RowMajor => {
            for vs in v.data.chunks_exact_mut(b) {
                for (x, a) in vs.iter_mut().zip(alpha) {
                    *x *= a;
                }
            }
        }
        Layout::ColumnMajor => {
            for (n, vs) in v.data.chunks_exact_mut(s).enumerate() {
                let a = alpha[n % b];
                for x in vs {
                    *x *= a;
                }
            }
        }
    }
    Ok(())
}

/// Reduction over all elements of each right-hand side. Element `j` (in
/// `(site, component)` order) of rhs `i` is added into partial sum
/// `acc[(j mod 8) * b + i]`; partials are combined in order at the end. The
/// summation order per rhs is therefore the same for every layout and every
/// `b`.
fn lane_reduce<T, F>(a: &BlockField, zero: T, mut term: F) -> Vec<T>
where
    T: Copy + core::ops::AddAssign,
    F: FnMut(usize) -> T,
{
    let b = a.b();
    let s = a.s;
    let mut acc = vec![zero; REDUCTION_LANES * b];
    match a.policy.layout() {
        Layout::RowMajor => {
            let mut off = 0;
            for j in 0..a.n_sites * s {
                let lane = &mut acc[(j % REDUCTION_LANES) * b..][..b];
                for (i, slot) in lane.iter_mut().enumerate() {
                    *slot += term(off + i);
                }
                off += b;
            }
        }
        Layout::ColumnMajor => {
            for x in 0..a.n_sites {
                for i in 0..b {
                    let base = (x * b + i) * s;
                    for k in 0..s {
                        let j = x * s + k;
                        acc[(j % REDUCTION_LANES) * b + i] += term(base + k);
                    }
                }
            }
        }
    }
    (0..b)
        .map(|i| {
            let mut t = zero;
            for p in 0..REDUCTION_LANES {
                t += acc[p * b + i];
            }
            t
        })
        .collect()
}

/// Per-rhs 2-norms.
pub fn block_norms(v: &BlockField) -> Vec<f64> {
    lane_reduce(v, 0.0f64, |o| v.data[o].norm_sqr())
        .into_iter()
        .map(libm::sqrt)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DotStrategy {
    /// One pass per rhs, walking that rhs's elements with the layout stride.
    Naive,
    /// All rhs accumulated together in lane-parallel partial sums; per-rhs
    /// totals are separated once at the end.
    #[default]
    DeferredSeparation,
}

/// `h(i) = sum conj(w(i)) * e(i)` for every right-hand side.
pub fn block_dot(w: &BlockField, e: &BlockField, strategy: DotStrategy) -> Result<Vec<C64>> {
    w.check_same_shape(e, "dot")?;
    let zero = C64::new(0.0, 0.0);
    Ok(match strategy {
        DotStrategy::DeferredSeparation => lane_reduce(w, zero, |o| w.data[o].conj() * e.data[o]),
        DotStrategy::Naive => (0..w.b())
            .map(|i| {
                let mut t = zero;
                for x in 0..w.n_sites {
                    for k in 0..w.s {
                        let o = w.policy.offset(w.s, x, k, i);
                        t += w.data[o].conj() * e.data[o];
                    }
                }
                t
            })
            .collect(),
    })
}
