use mrhs_core::dirac::{DiracOperator, DiracParams, WilsonDirac};
use mrhs_core::exec::Serial;
use mrhs_core::field::{BlockField, Layout, LayoutPolicy};
use mrhs_core::gauge::{CloverField, CloverMode, GaugeField, GaugeMode};
use mrhs_core::geometry::LatticeGeometry;
use mrhs_core::gmres::{gmres_solve, GmresConfig};
use mrhs_core::oe::OddEven;
use mrhs_core::oracle::{
    assemble_dirac_dense, assemble_schur_dense, dense_solve, field_columns, max_relative_error,
};

fn problem(dims: [usize; 4], seed: u64) -> (LatticeGeometry, GaugeField, CloverField) {
    let geom = LatticeGeometry::new(dims).unwrap();
    let u = GaugeField::generate(&geom, GaugeMode::Random, seed);
    let c = CloverField::generate(&geom, CloverMode::RandomHermitian { scale: 0.1 }, seed + 1);
    (geom, u, c)
}

#[test]
fn dirac_matches_dense_on_4_4() {
    let (geom, u, c) = problem([4, 4, 4, 4], 10);
    let params = DiracParams::new(-0.5);
    let dense = assemble_dirac_dense(params, &u, &c).unwrap();
    let d = WilsonDirac::new(params, &u, &c).unwrap();
    for layout in [Layout::ColumnMajor, Layout::RowMajor] {
        for b in [1, 2, 4, 8] {
            let pol = LayoutPolicy::new(layout, b).unwrap();
            let psi = BlockField::random(geom.n_sites(), 12, pol, 100 + b as u64);
            let mut eta = BlockField::zeros(geom.n_sites(), 12, pol);
            d.apply(&psi, &mut eta, &Serial).unwrap();
            let expect = dense.apply_field(&psi).unwrap();
            let err = max_relative_error(&eta, &expect);
            assert!(err <= 1e-12, "layout {layout} b {b}: {err:e}");
        }
    }
}

#[test]
fn schur_matches_dense() {
    let (geom, u, c) = problem([4, 4, 2, 2], 20);
    let params = DiracParams::new(-0.3);
    let dense = assemble_schur_dense(params, &u, &c).unwrap();
    let d = WilsonDirac::new(params, &u, &c).unwrap();
    let oe = OddEven::new(&d, &Serial).unwrap();
    for layout in [Layout::ColumnMajor, Layout::RowMajor] {
        for b in [1, 4] {
            let pol = LayoutPolicy::new(layout, b).unwrap();
            let v = BlockField::random(geom.n_sites() / 2, 12, pol, 7);
            let mut w = v.clone();
            oe.apply_schur(&v, &mut w).unwrap();
            let expect = dense.apply_field(&v).unwrap();
            let err = max_relative_error(&w, &expect);
            assert!(err <= 1e-11, "layout {layout} b {b}: {err:e}");
        }
    }
}

#[test]
fn gmres_matches_dense_solve() {
    let (geom, u, c) = problem([4, 4, 2, 2], 30);
    let params = DiracParams::new(-0.2);
    let dense = assemble_dirac_dense(params, &u, &c).unwrap();
    let d = WilsonDirac::new(params, &u, &c).unwrap();
    let op = DiracOperator::new(&d, &Serial);
    let pol = LayoutPolicy::new(Layout::RowMajor, 4).unwrap();
    let eta = BlockField::random(geom.n_sites(), 12, pol, 5);
    let zero = BlockField::zeros(geom.n_sites(), 12, pol);
    let cfg = GmresConfig { restarts: 50, ..GmresConfig::default() };
    let out = gmres_solve(&op, &eta, &zero, &cfg).unwrap();
    assert!(out.converged, "{:?}", out.final_relnorms);
    let x = dense_solve(&dense, &field_columns(&eta)).unwrap();
    for (i, xi) in x.iter().enumerate() {
        let got = out.solution.column(i);
        let diff: f64 = got.iter().zip(xi).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = xi.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
        assert!(diff <= 1e-6 * norm, "rhs {i}: {:e}", diff / norm);
    }
}
