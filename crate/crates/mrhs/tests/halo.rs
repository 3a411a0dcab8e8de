use std::time::Duration;

use mrhs::halo::{apply_decomposed, DecomposedProblem, Hub, RankExecution, DEFAULT_TIMEOUT};
use mrhs_core::dirac::{DiracParams, HaloExchange};
use mrhs_core::field::{BlockField, Layout, LayoutPolicy, SPINOR};
use mrhs_core::gauge::{CloverField, CloverMode, GaugeField, GaugeMode};
use mrhs_core::geometry::{Direction, LatticeGeometry, RankGrid};
use mrhs_core::C64;

const DIRS: [Direction; 2] = Direction::BOTH;

fn tag(rank: usize, mu: usize, dir: Direction) -> Vec<C64> {
    vec![C64::new(rank as f64, (2 * mu + (dir == Direction::Forward) as usize) as f64); 3]
}

#[test]
fn every_mailbox_consumed_once_on_sixteen_ranks() {
    let geom = LatticeGeometry::new([4, 4, 4, 4]).unwrap();
    let grid = RankGrid::new(&geom, [2, 2, 2, 2]).unwrap();
    let hub = Hub::new(grid, DEFAULT_TIMEOUT);
    let mut comms: Vec<_> = (0..grid.n_ranks()).map(|r| hub.endpoint(r)).collect();
    for epoch in 0..3 {
        for c in &mut comms {
            c.begin_epoch();
            for mu in 0..4 {
                for dir in DIRS {
                    c.post_send(mu, dir, tag(c.rank(), mu, dir)).unwrap();
                }
            }
        }
        for c in &mut comms {
            for mu in 0..4 {
                for dir in DIRS {
                    let got = c.complete_recv(mu, dir).unwrap();
                    let src = grid.neighbor_rank(c.rank(), mu, dir.reverse());
                    assert_eq!(got, tag(src, mu, dir));
                }
            }
            assert_eq!(c.end_epoch().epoch, epoch);
        }
        let audit = hub.audit_epoch(epoch).unwrap();
        assert_eq!((audit.posted, audit.consumed), (16 * 8, 16 * 8));
    }
}

#[test]
fn unconsumed_message_fails_audit() {
    let geom = LatticeGeometry::new([8, 4, 4, 4]).unwrap();
    let grid = RankGrid::new(&geom, [2, 2, 2, 1]).unwrap();
    let hub = Hub::new(grid, DEFAULT_TIMEOUT);
    let mut c = hub.endpoint(3);
    c.post_send(1, Direction::Forward, tag(3, 1, Direction::Forward)).unwrap();
    let err = hub.audit_epoch(0).unwrap_err().to_string();
    assert!(err.contains("never received"), "{err}");
}

#[test]
fn decomposed_apply_audits_every_channel() {
    let geom = LatticeGeometry::new([8, 4, 4, 4]).unwrap();
    let u = GaugeField::generate(&geom, GaugeMode::Random, 3);
    let c = CloverField::generate(&geom, CloverMode::RandomHermitian { scale: 0.1 }, 4);
    let problem = DecomposedProblem::new(&u, &c, [2, 2, 2, 1]).unwrap();
    let pol = LayoutPolicy::new(Layout::RowMajor, 2).unwrap();
    let psi = BlockField::random(geom.n_sites(), SPINOR, pol, 5);
    let params = DiracParams::new(-0.5);
    let seq = apply_decomposed(params, &problem, &psi, RankExecution::Sequential, DEFAULT_TIMEOUT).unwrap();
    let con = apply_decomposed(params, &problem, &psi, RankExecution::Concurrent, DEFAULT_TIMEOUT).unwrap();
    assert_eq!(seq.audit.posted, 8 * 8);
    assert_eq!(seq.audit.consumed, 8 * 8);
    assert_eq!(seq.stats.len(), 8);
    assert_eq!(seq.eta, con.eta);
    for _ in 0..3 {
        let again = apply_decomposed(params, &problem, &psi, RankExecution::Concurrent, DEFAULT_TIMEOUT).unwrap();
        assert_eq!(again.eta, seq.eta);
    }
}

#[test]
fn scatter_gather_roundtrip() {
    let geom = LatticeGeometry::new([8, 4, 4, 4]).unwrap();
    let u = GaugeField::generate(&geom, GaugeMode::Random, 3);
    let c = CloverField::zero(&geom);
    let problem = DecomposedProblem::new(&u, &c, [2, 2, 1, 1]).unwrap();
    let pol = LayoutPolicy::new(Layout::ColumnMajor, 3).unwrap();
    let psi = BlockField::random(geom.n_sites(), SPINOR, pol, 9);
    let parts = problem.scatter(&psi);
    assert_eq!(parts.len(), 4);
    assert!(parts.iter().all(|p| p.n_sites() == geom.n_sites() / 4));
    assert_eq!(problem.gather(&parts), psi);
}

#[test]
fn missing_neighbor_times_out_naming_channel() {
    let geom = LatticeGeometry::new([8, 4, 4, 4]).unwrap();
    let grid = RankGrid::new(&geom, [2, 1, 1, 1]).unwrap();
    let hub = Hub::new(grid, Duration::from_millis(20));
    let mut c = hub.endpoint(0);
    let err = c.complete_recv(0, Direction::Forward).unwrap_err().to_string();
    assert!(err.contains("rank 0") && err.contains("mu=0") && err.contains("dir=+"), "{err}");
}

#[test]
fn indivisible_grid_rejected() {
    let geom = LatticeGeometry::new([4, 4, 4, 4]).unwrap();
    let u = GaugeField::unit(&geom);
    let c = CloverField::zero(&geom);
    assert!(DecomposedProblem::new(&u, &c, [3, 1, 1, 1]).is_err());
}
