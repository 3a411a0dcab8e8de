//! Clover-improved Wilson-Dirac operator on blocks of right-hand sides.
//!
//! The evaluation is staged exactly like the textbook algorithm:
//!
//! 1. `eta = (4 + m0) psi - C psi`
//! 2. `lambda_mu(x) = pi-_mu psi(x)` (compressed to six components)
//! 3. send the `x_mu = 0` face of `lambda_mu` backwards
//! 4. `chi_mu(x + mu) = pi+_mu U_mu(x)^H psi(x)`
//! 5. send `chi_mu` for the `x_mu = L - 1` face forwards
//! 6. receive `lambda_mu` halo
//! 7. `eta(x) -= U_mu(x) lambda_mu(x + mu)`, reconstructed to twelve components
//! 8. receive `chi_mu` halo
//! 9. `eta(x) -= chi_mu(x)`, reconstructed
//!
//! Without a communicator the lattice is periodic and steps 3, 5, 6 and 8 are
//! skipped. The loop over right-hand sides sits innermost in every stage.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64 as C64;

use crate::error::{invalid, shape, Error, Result};
use crate::exec::Executor;
use crate::field::{BlockField, Layout, LayoutPolicy, HALF_SPINOR, SPINOR};
use crate::gamma::{ProjSign, ProjectorTable, SpinProjector};
use crate::gauge::{expand_hermitian, CloverField, GaugeField, CLOVER_BLOCK, CLOVER_SITE};
use crate::geometry::{Direction, LatticeGeometry, Parity, NDIM};
use crate::operator::LinearOperator;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiracParams {
    pub m0: f64,
}

impl DiracParams {
    pub fn new(m0: f64) -> Self {
        Self { m0 }
    }

    /// Diagonal coefficient `4 + m0` (lattice spacing 1).
    pub fn diagonal(&self) -> f64 {
        4.0 + self.m0
    }
}

/// Floating-point operations used by the kernels. `Plain` compiles to the
/// bare operations; `FlopCounter` tallies them (complex multiply = 6,
/// complex add/sub = 2, real-times-complex = 2).
pub trait Arith: Sync {
    fn mul(&self, a: C64, b: C64) -> C64;
    fn add(&self, a: C64, b: C64) -> C64;
    fn sub(&self, a: C64, b: C64) -> C64;
    fn scale(&self, r: f64, a: C64) -> C64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Plain;

impl Arith for Plain {
    #[inline(always)]
    fn mul(&self, a: C64, b: C64) -> C64 {
        a * b
    }
    #[inline(always)]
    fn add(&self, a: C64, b: C64) -> C64 {
        a + b
    }
    #[inline(always)]
    fn sub(&self, a: C64, b: C64) -> C64 {
        a - b
    }
    #[inline(always)]
    fn scale(&self, r: f64, a: C64) -> C64 {
        a * r
    }
}

#[derive(Debug, Default)]
pub struct FlopCounter {
    flops: AtomicU64,
}

impl FlopCounter {
    pub fn flops(&self) -> u64 {
        self.flops.load(Ordering::Relaxed)
    }

    fn tick(&self, n: u64) {
        self.flops.fetch_add(n, Ordering::Relaxed);
    }
}

impl Arith for FlopCounter {
    fn mul(&self, a: C64, b: C64) -> C64 {
        self.tick(6);
        a * b
    }
    fn add(&self, a: C64, b: C64) -> C64 {
        self.tick(2);
        a + b
    }
    fn sub(&self, a: C64, b: C64) -> C64 {
        self.tick(2);
        a - b
    }
    fn scale(&self, r: f64, a: C64) -> C64 {
        self.tick(2);
        a * r
    }
}

/// Nominal per-site cost of one operator evaluation for `b` right-hand sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Traffic {
    pub flops_per_site: u64,
    pub bytes_per_site: u64,
}

pub const FLOPS_PER_SITE_RHS: u64 = 2574;
pub const COMPLEX_PER_SITE_RHS: u64 = 168;
pub const COMPLEX_PER_SITE_FIXED: u64 = 114;
pub const COMPLEX_BYTES: u64 = 16;

pub fn account_traffic(b: usize) -> Traffic {
    let b = b as u64;
    Traffic {
        flops_per_site: FLOPS_PER_SITE_RHS * b,
        bytes_per_site: (COMPLEX_PER_SITE_RHS * b + COMPLEX_PER_SITE_FIXED) * COMPLEX_BYTES,
    }
}

/// Point-to-point halo transport used by the multi-rank evaluation.
///
/// `dir` is the direction of travel: `lambda` halos travel `Backward` (to the
/// `-mu` neighbour), `chi` halos travel `Forward`. A receive for `(mu, dir)`
/// returns the message the opposite neighbour posted on the same channel.
pub trait HaloExchange {
    fn post_send(&mut self, mu: usize, dir: Direction, payload: Vec<C64>) -> Result<()>;
    fn complete_recv(&mut self, mu: usize, dir: Direction) -> Result<Vec<C64>>;
}

/// Per-direction half-spinor buffers plus received halos.
#[derive(Debug, Clone)]
pub struct HoppingWorkspace {
    policy: LayoutPolicy,
    n_sites: usize,
    lambda: [BlockField; NDIM],
    chi: [BlockField; NDIM],
    lambda_halo: [Vec<C64>; NDIM],
    chi_halo: [Vec<C64>; NDIM],
    // [mu][travel direction]
    halo_ready: [[bool; 2]; NDIM],
    exchange: bool,
}

impl HoppingWorkspace {
    pub fn new(n_sites: usize, policy: LayoutPolicy) -> Self {
        let half = || BlockField::zeros(n_sites, HALF_SPINOR, policy);
        Self {
            policy,
            n_sites,
            lambda: core::array::from_fn(|_| half()),
            chi: core::array::from_fn(|_| half()),
            lambda_halo: Default::default(),
            chi_halo: Default::default(),
            halo_ready: [[false; 2]; NDIM],
            exchange: false,
        }
    }

    pub fn policy(&self) -> LayoutPolicy {
        self.policy
    }

    pub fn lambda(&self, mu: usize) -> &BlockField {
        &self.lambda[mu]
    }

    pub fn chi(&self, mu: usize) -> &BlockField {
        &self.chi[mu]
    }

    /// Puts the workspace in multi-rank mode: hops across the local boundary
    /// read halo buffers, which must be received first.
    pub fn set_exchange_mode(&mut self, on: bool) {
        self.exchange = on;
        self.halo_ready = [[false; 2]; NDIM];
    }
}

fn each_elem(policy: LayoutPolicy, s: usize, mut f: impl FnMut(usize, usize)) {
    match policy.layout() {
        Layout::ColumnMajor => {
            for i in 0..policy.b() {
                for k in 0..s {
                    f(k, i)
                }
            }
        }
        Layout::RowMajor => {
            for k in 0..s {
                for i in 0..policy.b() {
                    f(k, i)
                }
            }
        }
    }
}

/// `h = P psi` compressed to two spin components.
#[inline(always)]
fn compress<A: Arith>(ar: &A, sp: &SpinProjector, psi: &[C64], h: &mut [C64], pol: LayoutPolicy) {
    let (pk, pi) = pol.strides(SPINOR);
    let (hk, hi) = pol.strides(HALF_SPINOR);
    each_elem(pol, HALF_SPINOR, |k, i| {
        let (a, col) = (k / 3, k % 3);
        let (partner, coef) = sp.compress[a];
        let lower = psi[((2 + partner) * 3 + col) * pk + i * pi];
        h[k * hk + i * hi] = ar.add(ar.scale(0.5, psi[k * pk + i * pi]), ar.mul(coef, lower));
    });
}

/// `t = M h` on both colour vectors of a half spinor.
#[inline(always)]
fn mat3_half<A: Arith>(ar: &A, m: &[C64; 9], h: &[C64], t: &mut [C64], pol: LayoutPolicy) {
    let b = pol.b();
    match pol.layout() {
        Layout::ColumnMajor => {
            for i in 0..b {
                let hv = &h[i * HALF_SPINOR..][..HALF_SPINOR];
                let tv = &mut t[i * HALF_SPINOR..][..HALF_SPINOR];
                for a in 0..2 {
                    for r in 0..3 {
                        let mut acc = ar.mul(m[r * 3], hv[a * 3]);
                        acc = ar.add(acc, ar.mul(m[r * 3 + 1], hv[a * 3 + 1]));
                        acc = ar.add(acc, ar.mul(m[r * 3 + 2], hv[a * 3 + 2]));
                        tv[a * 3 + r] = acc;
                    }
                }
            }
        }
        Layout::RowMajor => {
            for a in 0..2 {
                let h0 = &h[(a * 3) * b..][..b];
                let h1 = &h[(a * 3 + 1) * b..][..b];
                let h2 = &h[(a * 3 + 2) * b..][..b];
                for r in 0..3 {
                    let tr = &mut t[(a * 3 + r) * b..][..b];
                    let (m0, m1, m2) = (m[r * 3], m[r * 3 + 1], m[r * 3 + 2]);
                    for i in 0..b {
                        tr[i] = ar.mul(m0, h0[i]);
                    }
                    for i in 0..b {
                        tr[i] = ar.add(tr[i], ar.mul(m1, h1[i]));
                    }
                    for i in 0..b {
                        tr[i] = ar.add(tr[i], ar.mul(m2, h2[i]));
                    }
                }
            }
        }
    }
}

/// `eta -= reconstruct(t)`.
#[inline(always)]
fn reconstruct_sub<A: Arith>(ar: &A, sp: &SpinProjector, t: &[C64], eta: &mut [C64], pol: LayoutPolicy) {
    let (ek, ei) = pol.strides(SPINOR);
    let (tk, ti) = pol.strides(HALF_SPINOR);
    each_elem(pol, HALF_SPINOR, |k, i| {
        let (a, r) = (k / 3, k % 3);
        let up = k * ek + i * ei;
        eta[up] = ar.sub(eta[up], t[k * tk + i * ti]);
        let (q, coef) = sp.reconstruct[a];
        let lo = ((2 + a) * 3 + r) * ek + i * ei;
        eta[lo] = ar.sub(eta[lo], ar.mul(coef, t[(q * 3 + r) * tk + i * ti]));
    });
}

#[inline(always)]
fn clover_site<A: Arith>(ar: &A, diag: f64, packed: &[C64], psi: &[C64], eta: &mut [C64], pol: LayoutPolicy) {
    let b = pol.b();
    for blk in 0..2 {
        let c = expand_hermitian(&packed[blk * CLOVER_BLOCK..][..CLOVER_BLOCK]);
        match pol.layout() {
            Layout::ColumnMajor => {
                for i in 0..b {
                    let p = &psi[i * SPINOR + blk * 6..][..6];
                    let e = &mut eta[i * SPINOR + blk * 6..][..6];
                    for r in 0..6 {
                        let mut acc = ar.scale(diag, p[r]);
                        for cc in 0..6 {
                            acc = ar.sub(acc, ar.mul(c[r][cc], p[cc]));
                        }
                        e[r] = acc;
                    }
                }
            }
            Layout::RowMajor => {
                for r in 0..6 {
                    let kr = blk * 6 + r;
                    let e = &mut eta[kr * b..][..b];
                    let p = &psi[kr * b..][..b];
                    for i in 0..b {
                        e[i] = ar.scale(diag, p[i]);
                    }
                    for (cc, coef) in c[r].iter().enumerate() {
                        let p = &psi[(blk * 6 + cc) * b..][..b];
                        for i in 0..b {
                            e[i] = ar.sub(e[i], ar.mul(*coef, p[i]));
                        }
                    }
                }
            }
        }
    }
}

fn adjoint(u: &[C64]) -> [C64; 9] {
    core::array::from_fn(|k| u[(k % 3) * 3 + k / 3].conj())
}

fn as_su3(u: &[C64]) -> &[C64; 9] {
    u.try_into().expect("link has 9 entries")
}

/// Runs `f(site, out_block, scratch)` over every block of `out`.
fn run_sites<F>(exec: &dyn Executor, out: &mut BlockField, scratch_len: usize, f: F)
where
    F: Fn(usize, &mut [C64], &mut [C64]) + Sync,
{
    let bl = out.block_len();
    exec.for_each_block(out.data_mut(), bl, &|first, chunk| {
        let mut scratch = vec![C64::new(0.0, 0.0); scratch_len];
        for (j, blk) in chunk.chunks_exact_mut(bl).enumerate() {
            f(first + j, blk, &mut scratch);
        }
    });
}

/// The operator `D = D_W - C` bound to a gauge and clover field.
#[derive(Debug, Clone)]
pub struct WilsonDirac<'a> {
    params: DiracParams,
    geom: LatticeGeometry,
    gauge: &'a GaugeField,
    clover: &'a CloverField,
    proj: ProjectorTable,
    nbr: Vec<[[usize; 2]; NDIM]>,
    coords: Vec<[usize; NDIM]>,
    parity: Vec<Parity>,
    faces: [[Vec<usize>; 2]; NDIM],
    face_pos: Vec<[usize; NDIM]>,
}

impl<'a> WilsonDirac<'a> {
    pub fn new(params: DiracParams, gauge: &'a GaugeField, clover: &'a CloverField) -> Result<Self> {
        let geom = *gauge.geometry();
        if clover.geometry() != &geom {
            return Err(shape!(
                "gauge lattice {:?} vs clover lattice {:?}",
                geom.dims(),
                clover.geometry().dims()
            ));
        }
        if !params.m0.is_finite() {
            return Err(invalid!("m0 must be finite"));
        }
        let dims = geom.dims();
        let coords: Vec<[usize; NDIM]> = (0..geom.n_sites())
            .map(|x| geom.site_coord(x).expect("in range").0)
            .collect();
        let face_pos = coords
            .iter()
            .map(|c| {
                core::array::from_fn(|mu| {
                    (0..NDIM)
                        .filter(|&d| d != mu)
                        .fold(0, |acc, d| acc * dims[d] + c[d])
                })
            })
            .collect();
        Ok(Self {
            params,
            geom,
            gauge,
            clover,
            proj: ProjectorTable::new(),
            nbr: geom.neighbor_table(),
            parity: (0..geom.n_sites()).map(|x| geom.parity_of(x)).collect(),
            coords,
            faces: core::array::from_fn(|mu| core::array::from_fn(|d| geom.face(mu, Direction::BOTH[d]))),
            face_pos,
        })
    }

    pub fn params(&self) -> DiracParams {
        self.params
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geom
    }

    pub fn gauge(&self) -> &GaugeField {
        self.gauge
    }

    pub fn clover(&self) -> &CloverField {
        self.clover
    }

    pub fn projectors(&self) -> &ProjectorTable {
        &self.proj
    }

    pub fn workspace(&self, policy: LayoutPolicy) -> HoppingWorkspace {
        HoppingWorkspace::new(self.geom.n_sites(), policy)
    }

    fn check_spinor(&self, f: &BlockField, what: &str) -> Result<()> {
        if f.n_sites() != self.geom.n_sites() || f.components() != SPINOR {
            return Err(shape!(
                "{what}: expected {} sites x 12 components, got {} x {}",
                self.geom.n_sites(),
                f.n_sites(),
                f.components()
            ));
        }
        Ok(())
    }

    fn check_io(&self, psi: &BlockField, eta: &BlockField, ws: &HoppingWorkspace) -> Result<()> {
        self.check_spinor(psi, "input")?;
        psi.check_same_shape(eta, "output")?;
        if ws.policy != psi.policy() || ws.n_sites != psi.n_sites() {
            return Err(shape!("workspace layout {:?} vs field {:?}", ws.policy, psi.policy()));
        }
        Ok(())
    }

    #[inline]
    fn selected(&self, x: usize, filter: Option<Parity>) -> bool {
        filter.is_none_or(|p| self.parity[x] == p)
    }

    /// `eta = (4 + m0) psi - C psi`. With `sites`, output block `j` is taken
    /// at lattice site `sites[j]` (parity-restricted fields).
    pub fn self_coupling_with<A: Arith>(
        &self,
        ar: &A,
        psi: &BlockField,
        eta: &mut BlockField,
        exec: &dyn Executor,
        sites: Option<&[usize]>,
    ) -> Result<()> {
        psi.check_same_shape(eta, "self coupling")?;
        let expect = sites.map_or(self.geom.n_sites(), |s| s.len());
        if psi.n_sites() != expect || psi.components() != SPINOR {
            return Err(shape!("self coupling on {} sites, expected {expect}", psi.n_sites()));
        }
        let pol = psi.policy();
        let diag = self.params.diagonal();
        let clover = self.clover.data();
        run_sites(exec, eta, 0, |j, out, _| {
            let x = sites.map_or(j, |s| s[j]);
            let packed = &clover[x * CLOVER_SITE..][..CLOVER_SITE];
            clover_site(ar, diag, packed, psi.site_block(j), out, pol);
        });
        Ok(())
    }

    /// `lambda_mu(x) = pi-_mu psi(x)` at the selected sites.
    pub fn project_minus_with<A: Arith>(
        &self,
        ar: &A,
        psi: &BlockField,
        mu: usize,
        lambda: &mut BlockField,
        exec: &dyn Executor,
        filter: Option<Parity>,
    ) {
        let pol = psi.policy();
        let sp = self.proj.get(mu, ProjSign::Minus);
        run_sites(exec, lambda, 0, |x, out, _| {
            if self.selected(x, filter) {
                compress(ar, sp, psi.site_block(x), out, pol);
            }
        });
    }

    /// `chi_mu(y) = pi+_mu U_mu(y - mu)^H psi(y - mu)` at selected destinations.
    /// In exchange mode the `y_mu = 0` face is left to the halo.
    pub fn project_plus_udag_with<A: Arith>(
        &self,
        ar: &A,
        psi: &BlockField,
        mu: usize,
        chi: &mut BlockField,
        exec: &dyn Executor,
        filter: Option<Parity>,
        exchange: bool,
    ) {
        let pol = psi.policy();
        let sp = self.proj.get(mu, ProjSign::Plus);
        let hl = HALF_SPINOR * pol.b();
        run_sites(exec, chi, hl, |y, out, h| {
            if !self.selected(y, filter) || (exchange && self.coords[y][mu] == 0) {
                return;
            }
            let x = self.nbr[y][mu][Direction::Backward.index()];
            compress(ar, sp, psi.site_block(x), h, pol);
            let udag = adjoint(self.gauge.link(x, mu));
            mat3_half(ar, &udag, h, out, pol);
        });
    }

    fn hop_minus_site<A: Arith>(&self, ar: &A, x: usize, mu: usize, src: &[C64], out: &mut [C64], t: &mut [C64], pol: LayoutPolicy) {
        let sp = self.proj.get(mu, ProjSign::Minus);
        mat3_half(ar, as_su3(self.gauge.link(x, mu)), src, t, pol);
        reconstruct_sub(ar, sp, t, out, pol);
    }

    /// `eta(x) -= [I4 (x) U_mu(x)] lambda_mu(x + mu)`, reconstructed.
    pub fn accumulate_hop_minus_with<A: Arith>(
        &self,
        ar: &A,
        ws: &HoppingWorkspace,
        eta: &mut BlockField,
        mu: usize,
        exec: &dyn Executor,
        filter: Option<Parity>,
    ) -> Result<()> {
        if ws.exchange && !ws.halo_ready[mu][Direction::Backward.index()] {
            return Err(Error::HaloMissing { mu, dir: "-" });
        }
        let pol = ws.policy;
        let hl = HALF_SPINOR * pol.b();
        let last = self.geom.dims()[mu] - 1;
        let lambda = &ws.lambda[mu];
        let halo = &ws.lambda_halo[mu];
        run_sites(exec, eta, hl, |x, out, t| {
            if !self.selected(x, filter) {
                return;
            }
            let src = if ws.exchange && self.coords[x][mu] == last {
                &halo[self.face_pos[x][mu] * hl..][..hl]
            } else {
                lambda.site_block(self.nbr[x][mu][Direction::Forward.index()])
            };
            self.hop_minus_site(ar, x, mu, src, out, t, pol);
        });
        Ok(())
    }

    /// `eta(x) -= chi_mu(x)`, reconstructed.
    pub fn accumulate_hop_plus_with<A: Arith>(
        &self,
        ar: &A,
        ws: &HoppingWorkspace,
        eta: &mut BlockField,
        mu: usize,
        exec: &dyn Executor,
        filter: Option<Parity>,
    ) -> Result<()> {
        if ws.exchange && !ws.halo_ready[mu][Direction::Forward.index()] {
            return Err(Error::HaloMissing { mu, dir: "+" });
        }
        let pol = ws.policy;
        let hl = HALF_SPINOR * pol.b();
        let sp = self.proj.get(mu, ProjSign::Plus);
        let chi = &ws.chi[mu];
        let halo = &ws.chi_halo[mu];
        run_sites(exec, eta, 0, |x, out, _| {
            if !self.selected(x, filter) {
                return;
            }
            let src = if ws.exchange && self.coords[x][mu] == 0 {
                &halo[self.face_pos[x][mu] * hl..][..hl]
            } else {
                chi.site_block(x)
            };
            reconstruct_sub(ar, sp, src, out, pol);
        });
        Ok(())
    }

    fn apply_local<A: Arith>(
        &self,
        ar: &A,
        psi: &BlockField,
        eta: &mut BlockField,
        ws: &mut HoppingWorkspace,
        exec: &dyn Executor,
    ) -> Result<()> {
        self.check_io(psi, eta, ws)?;
        ws.set_exchange_mode(false);
        self.self_coupling_with(ar, psi, eta, exec, None)?;
        for mu in 0..NDIM {
            self.project_minus_with(ar, psi, mu, &mut ws.lambda[mu], exec, None);
        }
        for mu in 0..NDIM {
            self.project_plus_udag_with(ar, psi, mu, &mut ws.chi[mu], exec, None, false);
        }
        for mu in 0..NDIM {
            self.accumulate_hop_minus_with(ar, ws, eta, mu, exec, None)?;
        }
        for mu in 0..NDIM {
            self.accumulate_hop_plus_with(ar, ws, eta, mu, exec, None)?;
        }
        Ok(())
    }

    /// `eta = D psi` on a periodic single-rank lattice.
    pub fn apply(&self, psi: &BlockField, eta: &mut BlockField, exec: &dyn Executor) -> Result<()> {
        let mut ws = self.workspace(psi.policy());
        self.apply_local(&Plain, psi, eta, &mut ws, exec)
    }

    pub fn apply_with(
        &self,
        psi: &BlockField,
        eta: &mut BlockField,
        ws: &mut HoppingWorkspace,
        exec: &dyn Executor,
    ) -> Result<()> {
        self.apply_local(&Plain, psi, eta, ws, exec)
    }

    /// Evaluates `D psi` while counting floating-point operations.
    pub fn apply_counted(&self, psi: &BlockField, exec: &dyn Executor) -> Result<(BlockField, u64)> {
        let counter = FlopCounter::default();
        let mut eta = BlockField::zeros(psi.n_sites(), SPINOR, psi.policy());
        let mut ws = self.workspace(psi.policy());
        self.apply_local(&counter, psi, &mut eta, &mut ws, exec)?;
        Ok((eta, counter.flops()))
    }

    fn pack_lambda(&self, ws: &HoppingWorkspace, mu: usize) -> Vec<C64> {
        let face = &self.faces[mu][Direction::Backward.index()];
        let mut out = Vec::with_capacity(face.len() * ws.lambda[mu].block_len());
        for &x in face {
            out.extend_from_slice(ws.lambda[mu].site_block(x));
        }
        out
    }

    fn pack_chi<A: Arith>(&self, ar: &A, psi: &BlockField, mu: usize) -> Vec<C64> {
        let pol = psi.policy();
        let hl = HALF_SPINOR * pol.b();
        let sp = self.proj.get(mu, ProjSign::Plus);
        let face = &self.faces[mu][Direction::Forward.index()];
        let mut out = vec![C64::new(0.0, 0.0); face.len() * hl];
        let mut h = vec![C64::new(0.0, 0.0); hl];
        for (slot, &x) in out.chunks_exact_mut(hl).zip(face) {
            compress(ar, sp, psi.site_block(x), &mut h, pol);
            let udag = adjoint(self.gauge.link(x, mu));
            mat3_half(ar, &udag, &h, slot, pol);
        }
        out
    }

    /// Steps 1-5 of a multi-rank evaluation: local compute and posted sends.
    pub fn begin_exchange(
        &self,
        psi: &BlockField,
        eta: &mut BlockField,
        ws: &mut HoppingWorkspace,
        comm: &mut dyn HaloExchange,
        exec: &dyn Executor,
    ) -> Result<()> {
        self.check_io(psi, eta, ws)?;
        ws.set_exchange_mode(true);
        let ar = &Plain;
        self.self_coupling_with(ar, psi, eta, exec, None)?;
        for mu in 0..NDIM {
            self.project_minus_with(ar, psi, mu, &mut ws.lambda[mu], exec, None);
        }
        for mu in 0..NDIM {
            comm.post_send(mu, Direction::Backward, self.pack_lambda(ws, mu))?;
        }
        for mu in 0..NDIM {
            self.project_plus_udag_with(ar, psi, mu, &mut ws.chi[mu], exec, None, true);
        }
        for mu in 0..NDIM {
            comm.post_send(mu, Direction::Forward, self.pack_chi(ar, psi, mu))?;
        }
        Ok(())
    }

    /// Steps 6-9 of a multi-rank evaluation: receives and boundary hops.
    pub fn finish_exchange(
        &self,
        eta: &mut BlockField,
        ws: &mut HoppingWorkspace,
        comm: &mut dyn HaloExchange,
        exec: &dyn Executor,
    ) -> Result<()> {
        if !ws.exchange {
            return Err(invalid!("finish_exchange without begin_exchange"));
        }
        let hl = HALF_SPINOR * ws.policy.b();
        let ar = &Plain;
        for mu in 0..NDIM {
            let msg = comm.complete_recv(mu, Direction::Backward)?;
            let want = self.faces[mu][Direction::Forward.index()].len() * hl;
            if msg.len() != want {
                return Err(Error::Comm(alloc::format!(
                    "lambda halo mu={mu}: {} values, expected {want}",
                    msg.len()
                )));
            }
            ws.lambda_halo[mu] = msg;
            ws.halo_ready[mu][Direction::Backward.index()] = true;
        }
        for mu in 0..NDIM {
            self.accumulate_hop_minus_with(ar, ws, eta, mu, exec, None)?;
        }
        for mu in 0..NDIM {
            let msg = comm.complete_recv(mu, Direction::Forward)?;
            let want = self.faces[mu][Direction::Backward.index()].len() * hl;
            if msg.len() != want {
                return Err(Error::Comm(alloc::format!(
                    "chi halo mu={mu}: {} values, expected {want}",
                    msg.len()
                )));
            }
            ws.chi_halo[mu] = msg;
            ws.halo_ready[mu][Direction::Forward.index()] = true;
        }
        for mu in 0..NDIM {
            self.accumulate_hop_plus_with(ar, ws, eta, mu, exec, None)?;
        }
        ws.halo_ready = [[false; 2]; NDIM];
        Ok(())
    }

    /// `eta = D psi` on one rank of a decomposed lattice.
    pub fn apply_exchange(
        &self,
        psi: &BlockField,
        eta: &mut BlockField,
        ws: &mut HoppingWorkspace,
        comm: &mut dyn HaloExchange,
        exec: &dyn Executor,
    ) -> Result<()> {
        self.begin_exchange(psi, eta, ws, comm, exec)?;
        self.finish_exchange(eta, ws, comm, exec)
    }

    /// Hopping part of `D` restricted to output sites of parity `target`:
    /// `out(x) = -sum_mu [...]` there, zero elsewhere. Only input values on the
    /// opposite parity are read.
    pub fn hopping_to(
        &self,
        psi: &BlockField,
        out: &mut BlockField,
        ws: &mut HoppingWorkspace,
        target: Parity,
        exec: &dyn Executor,
    ) -> Result<()> {
        self.check_io(psi, out, ws)?;
        ws.set_exchange_mode(false);
        let ar = &Plain;
        out.fill_zero();
        let source = target.flip();
        for mu in 0..NDIM {
            self.project_minus_with(ar, psi, mu, &mut ws.lambda[mu], exec, Some(source));
            self.project_plus_udag_with(ar, psi, mu, &mut ws.chi[mu], exec, Some(target), false);
        }
        for mu in 0..NDIM {
            self.accumulate_hop_minus_with(ar, ws, out, mu, exec, Some(target))?;
        }
        for mu in 0..NDIM {
            self.accumulate_hop_plus_with(ar, ws, out, mu, exec, Some(target))?;
        }
        Ok(())
    }
}

/// [`WilsonDirac`] as a [`LinearOperator`] with a cached workspace.
pub struct DiracOperator<'d> {
    dirac: &'d WilsonDirac<'d>,
    exec: &'d dyn Executor,
    ws: RefCell<Option<HoppingWorkspace>>,
}

impl<'d> DiracOperator<'d> {
    pub fn new(dirac: &'d WilsonDirac<'d>, exec: &'d dyn Executor) -> Self {
        Self {
            dirac,
            exec,
            ws: RefCell::new(None),
        }
    }
}

impl LinearOperator for DiracOperator<'_> {
    fn apply(&self, x: &BlockField, y: &mut BlockField) -> Result<()> {
        let mut slot = self.ws.borrow_mut();
        let ws = match slot.as_mut() {
            Some(ws) if ws.policy() == x.policy() => ws,
            _ => slot.insert(self.dirac.workspace(x.policy())),
        };
        self.dirac.apply_with(x, y, ws, self.exec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Serial;
    use crate::gauge::{CloverMode, GaugeMode};

    fn pol(l: Layout, b: usize) -> LayoutPolicy {
        LayoutPolicy::new(l, b).unwrap()
    }

    fn max_abs_diff(a: &BlockField, b: &BlockField) -> f64 {
        let mut m: f64 = 0.0;
        for x in 0..a.n_sites() {
            for k in 0..a.components() {
                for i in 0..a.b() {
                    m = m.max((a.get(x, k, i) - b.get(x, k, i)).norm());
                }
            }
        }
        m
    }

    #[test]
    fn traffic_ledger() {
        assert_eq!(
            account_traffic(1),
            Traffic {
                flops_per_site: 2574,
                bytes_per_site: 4512
            }
        );
        assert_eq!(
            account_traffic(16),
            Traffic {
                flops_per_site: 41184,
                bytes_per_site: 44832
            }
        );
        for b in 1..40 {
            let t = account_traffic(b);
            assert_eq!(t.bytes_per_site / 16 - 168 * b as u64, 114);
        }
    }

    #[test]
    fn self_coupling_examples() {
        let geom = LatticeGeometry::new([2, 2, 2, 2]).unwrap();
        let u = GaugeField::unit(&geom);
        let m0 = -0.3;
        for layout in [Layout::ColumnMajor, Layout::RowMajor] {
            let psi = BlockField::random(16, 12, pol(layout, 3), 2);
            let mut eta = BlockField::zeros(16, 12, pol(layout, 3));

            let c = CloverField::zero(&geom);
            let d = WilsonDirac::new(DiracParams::new(m0), &u, &c).unwrap();
            d.self_coupling_with(&Plain, &psi, &mut eta, &Serial, None).unwrap();
            for (e, p) in eta.data().iter().zip(psi.data()) {
                assert!((e - p * (4.0 + m0)).norm() <= 1e-15);
            }

            let c = CloverField::scaled_identity(&geom, 1.0);
            let d = WilsonDirac::new(DiracParams::new(m0), &u, &c).unwrap();
            d.self_coupling_with(&Plain, &psi, &mut eta, &Serial, None).unwrap();
            for (e, p) in eta.data().iter().zip(psi.data()) {
                assert!((e - p * (3.0 + m0)).norm() <= 1e-14);
            }
        }
    }

    #[test]
    fn free_field_constant_spinor() {
        let geom = LatticeGeometry::new([4, 2, 2, 4]).unwrap();
        let u = GaugeField::unit(&geom);
        let c = CloverField::zero(&geom);
        let m0 = -0.5;
        let d = WilsonDirac::new(DiracParams::new(m0), &u, &c).unwrap();
        for layout in [Layout::ColumnMajor, Layout::RowMajor] {
            let consts: Vec<C64> = (0..12 * 2).map(|k| C64::new(k as f64 * 0.1 - 1.0, 0.3)).collect();
            let psi = BlockField::from_fn(geom.n_sites(), 12, pol(layout, 2), |_, k, i| consts[i * 12 + k]);
            let mut eta = BlockField::zeros(geom.n_sites(), 12, pol(layout, 2));
            d.apply(&psi, &mut eta, &Serial).unwrap();
            for (e, p) in eta.data().iter().zip(psi.data()) {
                assert!((e - p * m0).norm() <= 1e-14);
            }
        }
    }

    #[test]
    fn layouts_agree_and_batches_match_single_rhs() {
        let geom = LatticeGeometry::new([2, 4, 2, 2]).unwrap();
        let u = GaugeField::generate(&geom, GaugeMode::Random, 1);
        let c = CloverField::generate(&geom, CloverMode::RandomHermitian { scale: 0.2 }, 2);
        let d = WilsonDirac::new(DiracParams::new(-0.2), &u, &c).unwrap();
        let n = geom.n_sites();
        for b in [1, 2, 4, 8, 16] {
            let p1 = BlockField::random(n, 12, pol(Layout::ColumnMajor, b), 3);
            let p2 = p1.convert_layout(pol(Layout::RowMajor, b)).unwrap();
            let mut e1 = BlockField::zeros(n, 12, p1.policy());
            let mut e2 = BlockField::zeros(n, 12, p2.policy());
            d.apply(&p1, &mut e1, &Serial).unwrap();
            d.apply(&p2, &mut e2, &Serial).unwrap();
            let scale = e1.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(max_abs_diff(&e1, &e2) <= 1e-13 * scale);
            for i in 0..b {
                let single = p1.extract_rhs(i);
                let mut es = BlockField::zeros(n, 12, single.policy());
                d.apply(&single, &mut es, &Serial).unwrap();
                assert_eq!(es.column(0), e1.column(i));
            }
        }
    }

    #[test]
    fn instrumented_flops_near_nominal() {
        let geom = LatticeGeometry::new([2, 2, 2, 4]).unwrap();
        let u = GaugeField::generate(&geom, GaugeMode::Random, 1);
        let c = CloverField::generate(&geom, CloverMode::RandomHermitian { scale: 0.2 }, 2);
        let d = WilsonDirac::new(DiracParams::new(-0.2), &u, &c).unwrap();
        for b in [1, 3, 8] {
            for layout in [Layout::ColumnMajor, Layout::RowMajor] {
                let psi = BlockField::random(geom.n_sites(), 12, pol(layout, b), 1);
                let (eta, flops) = d.apply_counted(&psi, &Serial).unwrap();
                let per = flops / (geom.n_sites() * b) as u64;
                assert_eq!(per, 2616);
                let nominal = FLOPS_PER_SITE_RHS as f64;
                assert!((per as f64 - nominal).abs() <= 0.15 * nominal);
                let mut plain = BlockField::zeros(geom.n_sites(), 12, psi.policy());
                d.apply(&psi, &mut plain, &Serial).unwrap();
                assert_eq!(eta, plain);
            }
        }
    }

    #[test]
    fn halo_missing_is_reported() {
        let geom = LatticeGeometry::new([2, 2, 2, 2]).unwrap();
        let u = GaugeField::unit(&geom);
        let c = CloverField::zero(&geom);
        let d = WilsonDirac::new(DiracParams::new(0.1), &u, &c).unwrap();
        let mut ws = d.workspace(LayoutPolicy::unblocked());
        ws.set_exchange_mode(true);
        let mut eta = BlockField::zeros(16, 12, LayoutPolicy::unblocked());
        let err = d
            .accumulate_hop_minus_with(&Plain, &ws, &mut eta, 2, &Serial, None)
            .unwrap_err();
        assert_eq!(err, Error::HaloMissing { mu: 2, dir: "-" });
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let geom = LatticeGeometry::new([2, 2, 2, 2]).unwrap();
        let u = GaugeField::unit(&geom);
        let c = CloverField::zero(&geom);
        let d = WilsonDirac::new(DiracParams::new(0.1), &u, &c).unwrap();
        let psi = BlockField::zeros(16, 12, pol(Layout::RowMajor, 2));
        let mut eta = BlockField::zeros(16, 12, pol(Layout::ColumnMajor, 2));
        assert!(d.apply(&psi, &mut eta, &Serial).is_err());
        let half = BlockField::zeros(16, 6, pol(Layout::RowMajor, 2));
        let mut out = half.clone();
        assert!(d.apply(&half, &mut out, &Serial).is_err());
        let other = LatticeGeometry::new([2, 2, 2, 4]).unwrap();
        let c2 = CloverField::zero(&other);
        assert!(WilsonDirac::new(DiracParams::new(0.1), &u, &c2).is_err());
    }
}
