use mrhs_core::field::{block_norms, BlockField, Layout, LayoutPolicy, SPINOR};
use mrhs_core::geometry::{Direction, LatticeGeometry, NDIM};
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = [usize; NDIM]> {
    prop::array::uniform4(prop::sample::select(vec![2usize, 4, 6]))
}

fn layout() -> impl Strategy<Value = Layout> {
    prop::sample::select(vec![Layout::ColumnMajor, Layout::RowMajor])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn site_index_is_a_bijection(d in dims()) {
        let g = LatticeGeometry::new(d).unwrap();
        let mut seen = vec![false; g.n_sites()];
        for s in 0..g.n_sites() {
            let c = g.site_coord(s).unwrap();
            prop_assert_eq!(g.site_index(c).unwrap(), s);
            prop_assert!(!seen[s]);
            seen[s] = true;
        }
    }

    #[test]
    fn neighbors_invert_and_flip_parity(d in dims(), seed in 0usize..10_000, mu in 0..NDIM) {
        let g = LatticeGeometry::new(d).unwrap();
        let s = seed % g.n_sites();
        for dir in Direction::BOTH {
            let n = g.neighbor_index(s, mu, dir);
            prop_assert_eq!(g.neighbor_index(n, mu, dir.reverse()), s);
            prop_assert_eq!(g.parity_of(n), g.parity_of(s).flip());
        }
    }

    #[test]
    fn layout_conversion_roundtrips(
        n in 1usize..20,
        b in 1usize..17,
        from in layout(),
        to in layout(),
        seed in any::<u64>(),
    ) {
        let p = LayoutPolicy::new(from, b).unwrap();
        let q = LayoutPolicy::new(to, b).unwrap();
        let x = BlockField::random(n, SPINOR, p, seed);
        let y = x.convert_layout(q).unwrap();
        for site in 0..n {
            for k in 0..SPINOR {
                for i in 0..b {
                    prop_assert_eq!(x.get(site, k, i), y.get(site, k, i));
                }
            }
        }
        prop_assert_eq!(block_norms(&x), block_norms(&y));
        prop_assert_eq!(y.convert_layout(p).unwrap(), x);
    }
}
