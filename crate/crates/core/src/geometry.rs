//! Four-dimensional periodic lattice: site numbering, parity, neighbours and
//! the decomposition of the lattice over a grid of ranks.
//!
//! Sites are numbered in mixed-radix order with the last dimension running
//! fastest: `((x0 * N1 + x1) * N2 + x2) * N3 + x3`. All four dimensions are
//! periodic.

use alloc::vec::Vec;
use core::fmt;

use crate::error::{invalid, Result};

pub const NDIM: usize = 4;

/// Hop direction along a lattice axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Forward, Direction::Backward];

    pub fn reverse(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Backward => 1,
        }
    }

    pub fn sign(self) -> &'static str {
        match self {
            Direction::Forward => "+",
            Direction::Backward => "-",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.sign())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn flip(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }
}

/// A site coordinate `(x0, x1, x2, x3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SiteCoord(pub [usize; NDIM]);

impl SiteCoord {
    pub fn parity(&self) -> Parity {
        if self.0.iter().sum::<usize>() % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

/// Lattice extents. Every extent is at least 2 and even.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticeGeometry {
    dims: [usize; NDIM],
    n_sites: usize,
}

impl LatticeGeometry {
    pub fn new(dims: [usize; NDIM]) -> Result<Self> {
        for (d, &n) in dims.iter().enumerate() {
            if n < 2 || n % 2 != 0 {
                return Err(invalid!(
                    "lattice extent N{d} = {n} must be even and at least 2"
                ));
            }
        }
        Ok(Self {
            dims,
            n_sites: dims.iter().product(),
        })
    }

    pub fn dims(&self) -> [usize; NDIM] {
        self.dims
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn contains(&self, c: SiteCoord) -> bool {
        c.0.iter().zip(self.dims.iter()).all(|(&x, &n)| x < n)
    }

    pub fn site_index(&self, c: SiteCoord) -> Result<usize> {
        if !self.contains(c) {
            return Err(invalid!("coordinate {:?} outside lattice {:?}", c.0, self.dims));
        }
        Ok(self.index_unchecked(c))
    }

    #[inline]
    pub(crate) fn index_unchecked(&self, c: SiteCoord) -> usize {
        let [x0, x1, x2, x3] = c.0;
        let [_, n1, n2, n3] = self.dims;
        ((x0 * n1 + x1) * n2 + x2) * n3 + x3
    }

    pub fn site_coord(&self, site: usize) -> Result<SiteCoord> {
        if site >= self.n_sites {
            return Err(invalid!("site {site} outside [0, {})", self.n_sites));
        }
        Ok(self.coord_unchecked(site))
    }

    #[inline]
    pub(crate) fn coord_unchecked(&self, mut site: usize) -> SiteCoord {
        let mut c = [0usize; NDIM];
        for d in (0..NDIM).rev() {
            c[d] = site % self.dims[d];
            site /= self.dims[d];
        }
        SiteCoord(c)
    }

    /// Neighbouring coordinate one step along `mu`, with periodic wraparound.
    pub fn neighbor(&self, c: SiteCoord, mu: usize, dir: Direction) -> SiteCoord {
        let mut out = c.0;
        let n = self.dims[mu];
        out[mu] = match dir {
            Direction::Forward => (c.0[mu] + 1) % n,
            Direction::Backward => (c.0[mu] + n - 1) % n,
        };
        SiteCoord(out)
    }

    pub fn neighbor_index(&self, site: usize, mu: usize, dir: Direction) -> usize {
        self.index_unchecked(self.neighbor(self.coord_unchecked(site), mu, dir))
    }

    pub fn parity_of(&self, site: usize) -> Parity {
        self.coord_unchecked(site).parity()
    }

    /// Table of `neighbor_index` for every site, indexed `[site][mu][dir]`.
    pub fn neighbor_table(&self) -> Vec<[[usize; 2]; NDIM]> {
        (0..self.n_sites)
            .map(|x| {
                let mut row = [[0usize; 2]; NDIM];
                for (mu, r) in row.iter_mut().enumerate() {
                    for dir in Direction::BOTH {
                        r[dir.index()] = self.neighbor_index(x, mu, dir);
                    }
                }
                row
            })
            .collect()
    }

    /// Local sites on the face `x_mu = 0` (Backward) or `x_mu = N_mu - 1`
    /// (Forward), ascending.
    pub fn face(&self, mu: usize, dir: Direction) -> Vec<usize> {
        let target = match dir {
            Direction::Forward => self.dims[mu] - 1,
            Direction::Backward => 0,
        };
        (0..self.n_sites)
            .filter(|&x| self.coord_unchecked(x).0[mu] == target)
            .collect()
    }
}

/// A rectangular grid of ranks, each owning an equal block of the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankGrid {
    grid: [usize; NDIM],
    local_dims: [usize; NDIM],
}

impl RankGrid {
    pub fn new(geom: &LatticeGeometry, grid: [usize; NDIM]) -> Result<Self> {
        let dims = geom.dims();
        let mut local_dims = [0; NDIM];
        for d in 0..NDIM {
            if grid[d] == 0 || dims[d] % grid[d] != 0 {
                return Err(invalid!(
                    "rank grid R{d} = {} does not divide N{d} = {}",
                    grid[d],
                    dims[d]
                ));
            }
            local_dims[d] = dims[d] / grid[d];
        }
        if grid.iter().any(|&r| r > 1) && local_dims.iter().any(|&l| l < 2) {
            return Err(invalid!(
                "local extents {local_dims:?} must be at least 2 for grid {grid:?}"
            ));
        }
        Ok(Self { grid, local_dims })
    }

    pub fn grid(&self) -> [usize; NDIM] {
        self.grid
    }

    pub fn local_dims(&self) -> [usize; NDIM] {
        self.local_dims
    }

    pub fn n_ranks(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn rank_coord(&self, mut rank: usize) -> [usize; NDIM] {
        let mut c = [0; NDIM];
        for d in (0..NDIM).rev() {
            c[d] = rank % self.grid[d];
            rank /= self.grid[d];
        }
        c
    }

    pub fn rank_of(&self, coord: [usize; NDIM]) -> usize {
        coord
            .iter()
            .zip(self.grid.iter())
            .fold(0, |acc, (&c, &r)| acc * r + c)
    }

    pub fn neighbor_rank(&self, rank: usize, mu: usize, dir: Direction) -> usize {
        let mut c = self.rank_coord(rank);
        let r = self.grid[mu];
        c[mu] = match dir {
            Direction::Forward => (c[mu] + 1) % r,
            Direction::Backward => (c[mu] + r - 1) % r,
        };
        self.rank_of(c)
    }

    /// Owning rank of a global coordinate.
    pub fn owner(&self, c: SiteCoord) -> usize {
        let mut rc = [0; NDIM];
        for d in 0..NDIM {
            rc[d] = c.0[d] / self.local_dims[d];
        }
        self.rank_of(rc)
    }
}

/// One rank's share of a decomposed lattice.
#[derive(Debug, Clone)]
pub struct RankDomain {
    pub rank: usize,
    pub origin: [usize; NDIM],
    pub local: LatticeGeometry,
    /// Global site number of every local site, in local site order.
    pub global_sites: Vec<usize>,
    /// Local sites whose neighbour in `(mu, dir)` lives on another rank,
    /// indexed `[mu][dir.index()]`, ascending.
    pub boundary: [[Vec<usize>; 2]; NDIM],
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub grid: RankGrid,
    pub ranks: Vec<RankDomain>,
}

pub fn decompose(geom: &LatticeGeometry, grid: [usize; NDIM]) -> Result<Decomposition> {
    let grid = RankGrid::new(geom, grid)?;
    let local = LatticeGeometry::new(grid.local_dims())?;
    let ranks = (0..grid.n_ranks())
        .map(|rank| {
            let rc = grid.rank_coord(rank);
            let mut origin = [0; NDIM];
            for d in 0..NDIM {
                origin[d] = rc[d] * grid.local_dims()[d];
            }
            let global_sites: Vec<usize> = (0..local.n_sites())
                .map(|l| {
                    let lc = local.coord_unchecked(l).0;
                    let mut g = [0; NDIM];
                    for d in 0..NDIM {
                        g[d] = origin[d] + lc[d];
                    }
                    geom.index_unchecked(SiteCoord(g))
                })
                .collect();
            let boundary = core::array::from_fn(|mu| {
                core::array::from_fn(|di| {
                    let dir = Direction::BOTH[di];
                    global_sites
                        .iter()
                        .enumerate()
                        .filter(|&(_, &g)| {
                            let nb = geom.neighbor(geom.coord_unchecked(g), mu, dir);
                            grid.owner(nb) != rank
                        })
                        .map(|(l, _)| l)
                        .collect()
                })
            });
            RankDomain {
                rank,
                origin,
                local,
                global_sites,
                boundary,
            }
        })
        .collect();
    Ok(Decomposition { grid, ranks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(d: [usize; 4]) -> LatticeGeometry {
        LatticeGeometry::new(d).unwrap()
    }

    #[test]
    fn site_index_examples() {
        assert_eq!(g([2; 4]).site_index(SiteCoord([0; 4])).unwrap(), 0);
        assert_eq!(g([2; 4]).site_index(SiteCoord([1; 4])).unwrap(), 15);
        assert_eq!(g([4; 4]).site_index(SiteCoord([1, 2, 3, 0])).unwrap(), 108);
    }

    #[test]
    fn rejects_bad_extents_and_coords() {
        assert!(LatticeGeometry::new([3, 4, 4, 4]).is_err());
        assert!(LatticeGeometry::new([0, 4, 4, 4]).is_err());
        assert!(g([2; 4]).site_index(SiteCoord([2, 0, 0, 0])).is_err());
        assert!(g([2; 4]).site_coord(16).is_err());
    }

    #[test]
    fn parity_and_neighbors() {
        assert_eq!(SiteCoord([0; 4]).parity(), Parity::Even);
        assert_eq!(SiteCoord([0, 0, 0, 1]).parity(), Parity::Odd);
        let l2 = g([2; 4]);
        assert_eq!(
            l2.neighbor(SiteCoord([1; 4]), 3, Direction::Forward),
            SiteCoord([1, 1, 1, 0])
        );
        assert_eq!(
            g([4; 4]).neighbor(SiteCoord([0; 4]), 0, Direction::Backward),
            SiteCoord([3, 0, 0, 0])
        );
        // extent 2: both directions reach the same site
        let c = SiteCoord([0, 1, 0, 1]);
        for mu in 0..4 {
            assert_eq!(
                l2.neighbor(c, mu, Direction::Forward),
                l2.neighbor(c, mu, Direction::Backward)
            );
        }
    }

    #[test]
    fn decompose_single_rank() {
        let d = decompose(&g([4; 4]), [1; 4]).unwrap();
        assert_eq!(d.ranks.len(), 1);
        assert_eq!(d.ranks[0].global_sites.len(), 256);
        for mu in 0..4 {
            for b in &d.ranks[0].boundary[mu] {
                assert!(b.is_empty());
            }
        }
    }

    #[test]
    fn decompose_two_ranks_along_x0() {
        let d = decompose(&g([4; 4]), [2, 1, 1, 1]).unwrap();
        assert_eq!(d.ranks.len(), 2);
        for r in &d.ranks {
            assert_eq!(r.global_sites.len(), 128);
            assert_eq!(r.boundary[0][0].len(), 64);
            assert_eq!(r.boundary[0][1].len(), 64);
            for mu in 1..4 {
                assert!(r.boundary[mu][0].is_empty() && r.boundary[mu][1].is_empty());
            }
        }
    }

    #[test]
    fn decompose_rejects_non_dividing_grid() {
        assert!(decompose(&g([4; 4]), [3, 1, 1, 1]).is_err());
        assert!(decompose(&g([4; 4]), [4, 1, 1, 1]).is_err());
    }
}
