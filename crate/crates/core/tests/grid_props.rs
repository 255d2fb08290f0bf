use demforge::grid::{compose, denormalize, mask_from_grid, normalize, ElevationGrid, GridGeometry, OcclusionMask};
use proptest::prelude::*;

fn cells(max: usize) -> impl Strategy<Value = (usize, usize, Vec<Option<f32>>)> {
    (1..max, 1..max).prop_flat_map(|(r, c)| {
        (Just(r), Just(c), proptest::collection::vec(proptest::option::weighted(0.8, -50.0f32..50.0), r * c))
    })
}

fn grid(r: usize, c: usize, v: &[Option<f32>]) -> ElevationGrid {
    let g = GridGeometry::square(r, c, 0.04).unwrap();
    ElevationGrid::new(g, v.iter().map(|x| x.unwrap_or(f32::NAN)).collect()).unwrap()
}

proptest! {
    #[test]
    fn mask_marks_exactly_the_missing_cells((r, c, v) in cells(12)) {
        let g = grid(r, c, &v);
        let m = mask_from_grid(&g);
        for i in 0..r {
            for j in 0..c {
                prop_assert_eq!(m.get(i, j), g.is_missing(i, j));
            }
        }
    }

    #[test]
    fn compose_is_cellwise((r, c, v) in cells(12), seed in any::<u64>()) {
        let occ = grid(r, c, &v);
        let geometry = *occ.geometry();
        let rec = ElevationGrid::from_fn(geometry, |i, j| ((i * 31 + j * 7) as u64 ^ seed) as f32 % 97.0);
        let bits: Vec<bool> = (0..r * c).map(|k| (seed >> (k % 64)) & 1 == 1).collect();
        let mask = OcclusionMask::new(geometry, bits).unwrap();
        match compose(&occ, &rec, &mask) {
            Ok(out) => {
                for k in 0..r * c {
                    let want = if mask.bits()[k] { rec.cells()[k] } else { occ.cells()[k] };
                    prop_assert_eq!(out.cells()[k].to_bits(), want.to_bits());
                }
            }
            Err(_) => prop_assert!(false, "compose failed on valid inputs"),
        }
    }

    #[test]
    fn normalize_round_trip((r, c, v) in cells(12)) {
        let g = grid(r, c, &v);
        prop_assume!(g.observed_count() > 0);
        let (n, state) = normalize(&g).unwrap();
        let back = denormalize(&n, state);
        for (a, b) in g.cells().iter().zip(back.cells()) {
            if a.is_nan() {
                prop_assert!(b.is_nan());
            } else {
                prop_assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
            }
        }
    }
}

#[test]
fn compose_rejects_incomplete_reconstruction() {
    let g = GridGeometry::square(1, 2, 0.04).unwrap();
    let occ = ElevationGrid::new(g, vec![1.0, f32::NAN]).unwrap();
    let rec = ElevationGrid::new(g, vec![f32::NAN, 7.0]).unwrap();
    let mask = OcclusionMask::new(g, vec![false, true]).unwrap();
    assert!(compose(&occ, &rec, &mask).is_err());
}
