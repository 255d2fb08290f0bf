use demforge::grid::{mask_from_grid, ElevationGrid, GridGeometry};
use demforge::sampler::{sample_occlusion, SamplerConfig};
use demforge::terrain::{TerrainKind, TerrainSpec};
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = TerrainKind> {
    prop_oneof![Just(TerrainKind::Hills), Just(TerrainKind::Stairs), Just(TerrainKind::Boxes)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn outcome_invariants(kind in kind_strategy(), terrain_seed in any::<u64>(), seed in any::<u64>(), holes in 0u32..5) {
        let geometry = GridGeometry::square(32, 32, 0.04).unwrap();
        let base = TerrainSpec::new(kind, terrain_seed).with_geometry(geometry).generate();
        let target = ElevationGrid::from_fn(geometry, |r, c| {
            if holes > 0 && (r * 5 + c * 3) % (holes as usize * 7 + 3) == 0 { f32::NAN } else { base.get(r, c) }
        });
        let cfg = SamplerConfig::default();
        let out = sample_occlusion(&target, &cfg, seed).unwrap();
        prop_assert!(out.iterations_used <= cfg.max_iters);
        prop_assert_eq!(out.iterations_used as usize, out.trace.len());
        if out.success {
            prop_assert!(out.achieved_ratio >= cfg.r_occ_min && out.achieved_ratio <= cfg.r_occ_max);
            prop_assert!(out.mask.count() > 0);
        }
        prop_assert!(out.mask.is_disjoint(&mask_from_grid(&target)));

        // Consecutive brackets move only as the previous ratio dictates, widening aside.
        for w in out.trace.windows(2) {
            let (prev, next) = (w[0], w[1]);
            prop_assert!(next.offset >= next.o_min && next.offset <= next.o_max);
            if prev.ratio > cfg.r_occ_max {
                let widened = (prev.offset - next.o_min - cfg.min_bracket).abs() < 1e-12;
                prop_assert!(next.o_min >= prev.o_min || widened);
                prop_assert_eq!(next.o_max, prev.o_max);
            } else {
                let widened = (next.o_max - prev.offset - cfg.min_bracket).abs() < 1e-12;
                prop_assert!(next.o_max <= prev.o_max || widened);
                prop_assert_eq!(next.o_min, prev.o_min);
            }
        }
    }
}

#[test]
fn boxes_succeed_most_of_the_time() {
    let cfg = SamplerConfig::default();
    let n = 200u64;
    let ok = (0..n)
        .filter(|&s| {
            let g = TerrainSpec::new(TerrainKind::Boxes, s).generate();
            sample_occlusion(&g, &cfg, s ^ 0xABCD).unwrap().success
        })
        .count();
    assert!(ok as f64 >= 0.9 * n as f64, "{ok}/{n}");
}
