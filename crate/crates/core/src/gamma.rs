//! Dirac matrices and the spin projectors used by the hopping term.
//!
//! Chiral basis, every matrix block anti-diagonal in 2x2 spin blocks:
//!
//! ```text
//! gamma_0 = [[0, I], [I, 0]]
//! gamma_k = [[0, -i sigma_k], [i sigma_k, 0]]    k = 1, 2, 3
//! ```
//!
//! `pi_plus = (I - gamma)/2` and `pi_minus = (I + gamma)/2`. Writing
//! `gamma = [[0, B], [B^H, 0]]`, the projector `(I + s*gamma)/2` maps a spinor
//! `(u, l)` to `(h, s*B^H h)` with `h = (u + s*B l)/2`, so two spin components
//! (six complex numbers with colour) carry all the information.

use num_complex::Complex64 as C64;

pub type Mat4 = [[C64; 4]; 4];

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Gamma matrix `gamma_mu` in the chiral basis.
pub fn gamma(mu: usize) -> Mat4 {
    // upper-right 2x2 block B
    let b: [[C64; 2]; 2] = match mu {
        0 => [[ONE, ZERO], [ZERO, ONE]],
        1 => [[ZERO, -I], [-I, ZERO]],
        2 => [[ZERO, -ONE], [ONE, ZERO]],
        3 => [[-I, ZERO], [ZERO, I]],
        _ => panic!("mu = {mu} out of range"),
    };
    let mut g = [[ZERO; 4]; 4];
    for r in 0..2 {
        for c in 0..2 {
            g[r][c + 2] = b[r][c];
            g[c + 2][r] = b[r][c].conj();
        }
    }
    g
}

/// Which projector of the pair: `Plus = (I - gamma)/2`, `Minus = (I + gamma)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjSign {
    Plus,
    Minus,
}

impl ProjSign {
    fn gamma_sign(self) -> f64 {
        match self {
            ProjSign::Plus => -1.0,
            ProjSign::Minus => 1.0,
        }
    }
}

/// Dense 4x4 projector, for verification.
pub fn projector_matrix(mu: usize, sign: ProjSign) -> Mat4 {
    let g = gamma(mu);
    let s = sign.gamma_sign();
    let mut p = [[ZERO; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            let id = if r == c { ONE } else { ZERO };
            p[r][c] = (id + g[r][c] * s) * 0.5;
        }
    }
    p
}

/// Compression/reconstruction tables of one projector.
///
/// Half-spinor row `a` (spin 0 or 1) is `0.5 * u[a] + compress[a].1 * l[compress[a].0]`
/// and the restored lower spin `a` is `reconstruct[a].1 * h[reconstruct[a].0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinProjector {
    pub compress: [(usize, C64); 2],
    pub reconstruct: [(usize, C64); 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorTable {
    plus: [SpinProjector; 4],
    minus: [SpinProjector; 4],
}

impl Default for ProjectorTable {
    fn default() -> Self {
        Self::new()
    }
}

impl ProjectorTable {
    pub fn new() -> Self {
        Self {
            plus: core::array::from_fn(|mu| Self::build(mu, ProjSign::Plus)),
            minus: core::array::from_fn(|mu| Self::build(mu, ProjSign::Minus)),
        }
    }

    fn build(mu: usize, sign: ProjSign) -> SpinProjector {
        let g = gamma(mu);
        let s = sign.gamma_sign();
        let single = |row: [C64; 2]| -> (usize, C64) {
            let nz: [usize; 2] = [0, 1];
            let j = nz
                .into_iter()
                .find(|&j| row[j] != ZERO)
                .expect("gamma block row has one nonzero");
            (j, row[j])
        };
        // B = g[0..2][2..4], B^H = g[2..4][0..2]
        let compress = core::array::from_fn(|a| {
            let (j, v) = single([g[a][2], g[a][3]]);
            (j, v * (0.5 * s))
        });
        let reconstruct = core::array::from_fn(|a| {
            let (j, v) = single([g[a + 2][0], g[a + 2][1]]);
            (j, v * s)
        });
        SpinProjector {
            compress,
            reconstruct,
        }
    }

    pub fn get(&self, mu: usize, sign: ProjSign) -> &SpinProjector {
        match sign {
            ProjSign::Plus => &self.plus[mu],
            ProjSign::Minus => &self.minus[mu],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mul(a: &Mat4, b: &Mat4) -> Mat4 {
        let mut o = [[ZERO; 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                for k in 0..4 {
                    o[r][c] += a[r][k] * b[k][c];
                }
            }
        }
        o
    }

    fn max_diff(a: &Mat4, b: &Mat4) -> f64 {
        let mut m: f64 = 0.0;
        for r in 0..4 {
            for c in 0..4 {
                m = m.max((a[r][c] - b[r][c]).norm());
            }
        }
        m
    }

    fn identity() -> Mat4 {
        let mut id = [[ZERO; 4]; 4];
        for (r, row) in id.iter_mut().enumerate() {
            row[r] = ONE;
        }
        id
    }

    #[test]
    fn gammas_hermitian_involutions() {
        for mu in 0..4 {
            let g = gamma(mu);
            for r in 0..4 {
                for c in 0..4 {
                    assert_eq!(g[r][c], g[c][r].conj());
                }
            }
            assert!(max_diff(&mul(&g, &g), &identity()) == 0.0);
        }
    }

    #[test]
    fn gammas_anticommute() {
        for mu in 0..4 {
            for nu in 0..4 {
                if mu == nu {
                    continue;
                }
                let (a, b) = (gamma(mu), gamma(nu));
                let ab = mul(&a, &b);
                let ba = mul(&b, &a);
                let mut sum = [[ZERO; 4]; 4];
                for r in 0..4 {
                    for c in 0..4 {
                        sum[r][c] = ab[r][c] + ba[r][c];
                    }
                }
                assert_eq!(max_diff(&sum, &[[ZERO; 4]; 4]), 0.0);
            }
        }
    }

    #[test]
    fn projectors_idempotent_partition_rank_two() {
        for mu in 0..4 {
            let p = projector_matrix(mu, ProjSign::Plus);
            let m = projector_matrix(mu, ProjSign::Minus);
            assert!(max_diff(&mul(&p, &p), &p) <= 1e-15);
            assert!(max_diff(&mul(&m, &m), &m) <= 1e-15);
            let mut sum = [[ZERO; 4]; 4];
            let mut trace_p = ZERO;
            for r in 0..4 {
                trace_p += p[r][r];
                for c in 0..4 {
                    sum[r][c] = p[r][c] + m[r][c];
                }
            }
            assert_eq!(max_diff(&sum, &identity()), 0.0);
            // trace of a projector equals its rank
            assert!((trace_p - C64::new(2.0, 0.0)).norm() <= 1e-15);
        }
    }

    #[test]
    fn compression_reconstructs_dense_projection() {
        let table = ProjectorTable::new();
        let psi = [
            C64::new(0.3, -1.2),
            C64::new(-0.7, 0.4),
            C64::new(1.1, 0.9),
            C64::new(-0.2, -0.5),
        ];
        for mu in 0..4 {
            for sign in [ProjSign::Plus, ProjSign::Minus] {
                let p = projector_matrix(mu, sign);
                let sp = table.get(mu, sign);
                let h: [C64; 2] =
                    core::array::from_fn(|a| psi[a] * 0.5 + sp.compress[a].1 * psi[2 + sp.compress[a].0]);
                let full = [
                    h[0],
                    h[1],
                    sp.reconstruct[0].1 * h[sp.reconstruct[0].0],
                    sp.reconstruct[1].1 * h[sp.reconstruct[1].0],
                ];
                for r in 0..4 {
                    let mut want = ZERO;
                    for c in 0..4 {
                        want += p[r][c] * psi[c];
                    }
                    assert!((want - full[r]).norm() <= 1e-15, "mu={mu} {sign:?} row {r}");
                }
            }
        }
    }
}
