//! Restarted GMRES run in lockstep on a block of independent right-hand sides.
//!
//! Every rhs has its own Krylov basis, Hessenberg matrix and Givens rotations;
//! only the kernel calls (operator, dots, axpys) are shared. All rhs keep
//! iterating until the largest relative residual is below the tolerance.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64 as C64;

use crate::error::{invalid, shape, Error, Result};
use crate::field::{block_axpy, block_dot, block_norms, block_scale, BlockField, DotStrategy};
use crate::operator::LinearOperator;

/// A rhs whose new Arnoldi norm drops below this times `|eta|` has found an
/// invariant subspace and is frozen.
pub const BREAKDOWN_FACTOR: f64 = 1e-14;

/// Orthogonality loss that triggers the adaptive second Gram-Schmidt pass.
pub const REORTH_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reorthogonalize {
    /// Single modified Gram-Schmidt pass.
    #[default]
    Off,
    /// Always run a second pass.
    Always,
    /// Run a second pass when its coefficients exceed [`REORTH_THRESHOLD`].
    WhenDegraded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresConfig {
    pub restart_len: usize,
    pub restarts: usize,
    pub tol: f64,
    /// Run exactly `restarts * restart_len` iterations regardless of `tol`.
    pub fixed_iterations: bool,
    pub reorthogonalize: Reorthogonalize,
    /// Recompute the true residual after every iteration (one extra operator
    /// application per iteration).
    pub track_explicit_residual: bool,
    /// Measure basis orthonormality at the end of every cycle.
    pub check_orthogonality: bool,
    pub dot: DotStrategy,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self {
            restart_len: 10,
            restarts: 10,
            tol: 1e-8,
            fixed_iterations: false,
            reorthogonalize: Reorthogonalize::Off,
            track_explicit_residual: false,
            check_orthogonality: false,
            dot: DotStrategy::DeferredSeparation,
        }
    }
}

impl GmresConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restart_len == 0 {
            return Err(invalid!("restart_len must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(invalid!("restarts must be at least 1"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(invalid!("tolerance must be positive, got {}", self.tol));
        }
        Ok(())
    }
}

/// Recurrence residual and true residual after one iteration, both relative
/// to `|eta|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCheck {
    pub iteration: usize,
    pub recurrence: Vec<f64>,
    pub explicit: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub solution: BlockField,
    /// `history[n][i]`: relative residual of rhs `i` after iteration `n + 1`.
    pub history: Vec<Vec<f64>>,
    pub iterations: usize,
    pub cycles: usize,
    /// Final true relative residuals all below `tol`.
    pub converged: bool,
    /// Some cycle failed to lower the largest relative residual.
    pub stagnated: bool,
    pub final_relnorms: Vec<f64>,
    pub residual_checks: Vec<ResidualCheck>,
    /// Largest `|V_p^H V_q - delta_pq|` seen, when orthogonality is checked.
    pub orthogonality_defect: Option<f64>,
}

/// Givens rotation zeroing `b` against `a`: returns `(c, s, r)` with
/// `[c s; -conj(s) c] [a; b] = [r; 0]`.
fn givens(a: C64, b: C64) -> (f64, C64, C64) {
    let (na, nb) = (a.norm(), b.norm());
    if nb == 0.0 {
        return (1.0, C64::new(0.0, 0.0), a);
    }
    if na == 0.0 {
        return (0.0, b.conj() / nb, C64::new(nb, 0.0));
    }
    let t = libm::hypot(na, nb);
    let phase = a / na;
    (na / t, phase * b.conj() / t, phase * t)
}

fn rotate(c: f64, s: C64, x: C64, y: C64) -> (C64, C64) {
    (x * c + s * y, -s.conj() * x + y * c)
}

fn back_substitute(r: &[C64], ld: usize, k: usize, g: &[C64]) -> Result<Vec<C64>> {
    let mut y = vec![C64::new(0.0, 0.0); k];
    for row in (0..k).rev() {
        let mut s = g[row];
        for col in row + 1..k {
            s -= r[row * ld + col] * y[col];
        }
        let d = r[row * ld + row];
        if d.norm() == 0.0 {
            return Err(Error::SingularMatrix(row));
        }
        y[row] = s / d;
    }
    Ok(y)
}

/// Minimizes `|g - H y|` for a `(k+1) x k` upper-Hessenberg `H` (row-major)
/// with Givens rotations. Returns `y` and the residual norm.
pub fn hessenberg_lstsq(h: &[C64], k: usize, g: &[C64]) -> Result<(Vec<C64>, f64)> {
    if h.len() != (k + 1) * k || g.len() != k + 1 {
        return Err(shape!("hessenberg_lstsq: {} entries and {} rhs for k = {k}", h.len(), g.len()));
    }
    let mut r = h.to_vec();
    let mut g = g.to_vec();
    for j in 0..k {
        let (c, s, d) = givens(r[j * k + j], r[(j + 1) * k + j]);
        r[j * k + j] = d;
        r[(j + 1) * k + j] = C64::new(0.0, 0.0);
        for col in j + 1..k {
            let (x, y) = rotate(c, s, r[j * k + col], r[(j + 1) * k + col]);
            r[j * k + col] = x;
            r[(j + 1) * k + col] = y;
        }
        let (x, y) = rotate(c, s, g[j], g[j + 1]);
        g[j] = x;
        g[j + 1] = y;
    }
    let y = back_substitute(&r, k, k, &g)?;
    Ok((y, g[k].norm()))
}

/// Per-rhs Arnoldi state within one cycle.
#[derive(Debug, Clone)]
struct RhsState {
    m: usize,
    // rotated Hessenberg, row-major (m+1) x m
    r: Vec<C64>,
    cs: Vec<f64>,
    sn: Vec<C64>,
    gamma: Vec<C64>,
    len: usize,
    frozen: bool,
}

impl RhsState {
    fn new(m: usize, beta: f64, frozen: bool) -> Self {
        let mut gamma = vec![C64::new(0.0, 0.0); m + 1];
        gamma[0] = C64::new(beta, 0.0);
        Self {
            m,
            r: vec![C64::new(0.0, 0.0); (m + 1) * m],
            cs: vec![1.0; m],
            sn: vec![C64::new(0.0, 0.0); m],
            gamma,
            len: 0,
            frozen,
        }
    }

    /// Adds column `j` (entries `h[0..=j]` and subdiagonal `hn`).
    fn push_column(&mut self, j: usize, h: &[C64], hn: f64) {
        let m = self.m;
        let mut col: Vec<C64> = h.to_vec();
        for k in 0..j {
            let (x, y) = rotate(self.cs[k], self.sn[k], col[k], col[k + 1]);
            col[k] = x;
            col[k + 1] = y;
        }
        let (c, s, d) = givens(col[j], C64::new(hn, 0.0));
        col[j] = d;
        self.cs[j] = c;
        self.sn[j] = s;
        for (k, v) in col.iter().enumerate() {
            self.r[k * m + j] = *v;
        }
        let (x, y) = rotate(c, s, self.gamma[j], self.gamma[j + 1]);
        self.gamma[j] = x;
        self.gamma[j + 1] = y;
        self.len = j + 1;
    }

    fn residual(&self) -> f64 {
        self.gamma[self.len].norm()
    }

    fn solve(&self) -> Result<Vec<C64>> {
        back_substitute(&self.r, self.m, self.len, &self.gamma)
    }

    fn basis_len(&self) -> usize {
        self.len + usize::from(!self.frozen)
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

fn residual<O: LinearOperator + ?Sized>(op: &O, eta: &BlockField, x: &BlockField, tmp: &mut BlockField) -> Result<BlockField> {
    op.apply(x, tmp)?;
    let mut r = eta.clone();
    for (a, b) in r.data_mut().iter_mut().zip(tmp.data()) {
        *a -= b;
    }
    Ok(r)
}

/// `x + sum_k V_k y_k`, per rhs.
fn update(x: &BlockField, basis: &[BlockField], states: &[RhsState]) -> Result<BlockField> {
    let mut out = x.clone();
    let ys: Vec<Vec<C64>> = states.iter().map(|s| s.solve()).collect::<Result<_>>()?;
    let kmax = states.iter().map(|s| s.len).max().unwrap_or(0);
    for (k, v) in basis.iter().enumerate().take(kmax) {
        let coef: Vec<C64> = ys
            .iter()
            .map(|y| y.get(k).copied().unwrap_or(C64::new(0.0, 0.0)))
            .collect();
        block_axpy(&coef, v, &mut out)?;
    }
    Ok(out)
}

/// Largest per-rhs `|V_p^H V_q - delta_pq|` over the valid basis vectors.
pub fn orthonormality_defect(basis: &[BlockField], valid: &[usize], dot: DotStrategy) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for p in 0..basis.len() {
        for q in 0..=p {
            let d = block_dot(&basis[p], &basis[q], dot)?;
            for (i, z) in d.iter().enumerate() {
                if p < valid[i] && q < valid[i] {
                    let delta = if p == q { 1.0 } else { 0.0 };
                    worst = worst.max((z - delta).norm());
                }
            }
        }
    }
    Ok(worst)
}

/// Solves `op x = eta` for every rhs column, starting from `psi0`.
pub fn gmres_solve<O: LinearOperator + ?Sized>(
    op: &O,
    eta: &BlockField,
    psi0: &BlockField,
    cfg: &GmresConfig,
) -> Result<GmresOutcome> {
    cfg.validate()?;
    eta.check_same_shape(psi0, "initial guess")?;
    let b = eta.b();
    let m = cfg.restart_len;
    let ref_norms: Vec<f64> = block_norms(eta)
        .into_iter()
        .map(|n| if n > 0.0 { n } else { 1.0 })
        .collect();
    let mut x = psi0.clone();
    let mut tmp = BlockField::zeros(eta.n_sites(), eta.components(), eta.policy());
    let mut basis: Vec<BlockField> = (0..=m).map(|_| tmp.clone()).collect();

    let mut out = GmresOutcome {
        solution: x.clone(),
        history: Vec::new(),
        iterations: 0,
        cycles: 0,
        converged: false,
        stagnated: false,
        final_relnorms: Vec::new(),
        residual_checks: Vec::new(),
        orthogonality_defect: cfg.check_orthogonality.then_some(0.0),
    };

    for _cycle in 0..cfg.restarts {
        // true residual at every restart
        let r = residual(op, eta, &x, &mut tmp)?;
        let beta = block_norms(&r);
        let start_rel: Vec<f64> = beta.iter().zip(&ref_norms).map(|(a, n)| a / n).collect();
        if !cfg.fixed_iterations && max_of(&start_rel) < cfg.tol {
            break;
        }
        out.cycles += 1;
        let mut states: Vec<RhsState> = (0..b)
            .map(|i| RhsState::new(m, beta[i], beta[i] <= BREAKDOWN_FACTOR * ref_norms[i]))
            .collect();
        let inv: Vec<C64> = (0..b)
            .map(|i| C64::new(if states[i].frozen { 0.0 } else { 1.0 / beta[i] }, 0.0))
            .collect();
        basis[0].copy_from(&r)?;
        block_scale(&inv, &mut basis[0])?;
        let mut rel = start_rel.clone();

        for j in 0..m {
            let (head, tail) = basis.split_at_mut(j + 1);
            let w = &mut tail[0];
            op.apply(&head[j], w)?;
            let mut h = vec![vec![C64::new(0.0, 0.0); j + 1]; b];
            for (k, vk) in head.iter().enumerate() {
                let mut d = block_dot(vk, w, cfg.dot)?;
                for (i, z) in d.iter_mut().enumerate() {
                    if states[i].frozen {
                        *z = C64::new(0.0, 0.0);
                    }
                    h[i][k] = *z;
                }
                let neg: Vec<C64> = d.iter().map(|z| -z).collect();
                block_axpy(&neg, vk, w)?;
            }
            if cfg.reorthogonalize != Reorthogonalize::Off {
                let mut corr = Vec::with_capacity(j + 1);
                for vk in head.iter() {
                    corr.push(block_dot(vk, w, cfg.dot)?);
                }
                let wn = block_norms(w);
                let degraded = corr
                    .iter()
                    .flat_map(|d| d.iter().enumerate())
                    .any(|(i, z)| z.norm() > REORTH_THRESHOLD * wn[i]);
                if cfg.reorthogonalize == Reorthogonalize::Always || degraded {
                    for (k, vk) in head.iter().enumerate() {
                        let mut d = block_dot(vk, w, cfg.dot)?;
                        for (i, z) in d.iter_mut().enumerate() {
                            if states[i].frozen {
                                *z = C64::new(0.0, 0.0);
                            }
                            h[i][k] += *z;
                        }
                        let neg: Vec<C64> = d.iter().map(|z| -z).collect();
                        block_axpy(&neg, vk, w)?;
                    }
                }
            }
            let hn = block_norms(w);
            let mut scale = vec![C64::new(0.0, 0.0); b];
            for i in 0..b {
                let st = &mut states[i];
                if st.frozen {
                    continue;
                }
                st.push_column(j, &h[i], hn[i]);
                if hn[i] < BREAKDOWN_FACTOR * ref_norms[i] {
                    st.frozen = true;
                } else {
                    scale[i] = C64::new(1.0 / hn[i], 0.0);
                }
                rel[i] = st.residual() / ref_norms[i];
            }
            block_scale(&scale, w)?;
            out.iterations += 1;
            out.history.push(rel.clone());

            if cfg.track_explicit_residual {
                let xj = update(&x, &basis[..=j], &states)?;
                let rj = residual(op, eta, &xj, &mut tmp)?;
                let explicit = block_norms(&rj).iter().zip(&ref_norms).map(|(a, n)| a / n).collect();
                out.residual_checks.push(ResidualCheck {
                    iteration: out.iterations,
                    recurrence: rel.clone(),
                    explicit,
                });
            }
            if !cfg.fixed_iterations && max_of(&rel) < cfg.tol {
                break;
            }
        }

        if let Some(worst) = out.orthogonality_defect.as_mut() {
            let valid: Vec<usize> = states.iter().map(RhsState::basis_len).collect();
            *worst = worst.max(orthonormality_defect(&basis, &valid, cfg.dot)?);
        }
        x = update(&x, &basis, &states)?;
        if max_of(&rel) >= max_of(&start_rel) && max_of(&start_rel) > 0.0 {
            out.stagnated = true;
        }
    }

    let r = residual(op, eta, &x, &mut tmp)?;
    out.final_relnorms = block_norms(&r).iter().zip(&ref_norms).map(|(a, n)| a / n).collect();
    out.converged = max_of(&out.final_relnorms) < cfg.tol;
    out.solution = x;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    /// Largest relative deviation between batched and single-rhs histories.
    pub max_deviation: f64,
    /// Iterations compared per rhs.
    pub compared: Vec<usize>,
}

/// Solves the block once in lockstep and once rhs by rhs, and compares the
/// residual histories over their common length.
pub fn batched_vs_independent_audit<O: LinearOperator + ?Sized>(
    op: &O,
    eta: &BlockField,
    psi0: &BlockField,
    cfg: &GmresConfig,
) -> Result<AuditReport> {
    let batched = gmres_solve(op, eta, psi0, cfg)?;
    let mut max_deviation: f64 = 0.0;
    let mut compared = Vec::with_capacity(eta.b());
    for i in 0..eta.b() {
        let single = gmres_solve(op, &eta.extract_rhs(i), &psi0.extract_rhs(i), cfg)?;
        let n = single.history.len().min(batched.history.len());
        for it in 0..n {
            let (a, s) = (batched.history[it][i], single.history[it][0]);
            let dev = (a - s).abs() / s.abs().max(f64::MIN_POSITIVE);
            max_deviation = max_deviation.max(if a == s { 0.0 } else { dev });
        }
        compared.push(n);
    }
    Ok(AuditReport {
        max_deviation,
        compared,
    })
}
