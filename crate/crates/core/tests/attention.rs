use dualformer::attention::{
    gp_attention_with_priors, gp_msa_sublayer, lw_attention, lw_msa_sublayer, multi_head_attention_with_weights,
    peg, pyramid_downsample, window_partition, window_reverse, AttentionParams, Parameters, PegParams, PriorScale,
    PyramidKernels, PyramidSpec, WindowGrid, PEG_EXTENT,
};
use dualformer::numerics::ConvKernel3D;
use dualformer::oracle::{adaptive_avg_pool3d_ref, masked_multi_head_ref, AttentionMask};
use dualformer::trace::Probe;
use dualformer::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n % d == 0).collect()
}

fn random_params(d: usize, heads: usize, r: &mut ChaCha8Rng) -> AttentionParams {
    let mut p = AttentionParams::zeros(d, heads).unwrap();
    p.visit_mut("", &mut |name, t| {
        let (lo, hi) = if name.ends_with("gain") { (0.5, 1.5) } else { (-0.4, 0.4) };
        *t = Tensor::uniform(t.shape().to_vec(), lo, hi, r);
    });
    p
}

/// A map extent with a window chosen among its divisors.
fn map_and_window() -> impl Strategy<Value = ([usize; 3], [usize; 3])> {
    proptest::array::uniform3(1usize..7).prop_flat_map(|map| {
        let w = map.map(|e| proptest::sample::select(divisors(e)));
        (Just(map), w)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn partition_then_reverse_is_identity((map, window) in map_and_window(), d in 1usize..5, seed in any::<u64>()) {
        let grid = WindowGrid::new(map, window).unwrap();
        prop_assert_eq!(grid.window_count() * grid.tokens_per_window(), map.iter().product::<usize>());
        let x: Tensor = Tensor::uniform([map[0], map[1], map[2], d], -1.0, 1.0, &mut rng(seed));
        let back = window_reverse(&window_partition(&x, &grid).unwrap(), &grid).unwrap();
        prop_assert!(back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn lw_core_equals_block_diagonal_oracle((map, window) in map_and_window(), heads in 1usize..4, seed in any::<u64>()) {
        let d = 4 * heads;
        let mut r = rng(seed);
        let grid = WindowGrid::new(map, window).unwrap();
        let p = random_params(d, heads, &mut r);
        let h: Tensor = Tensor::uniform([map[0], map[1], map[2], d], -1.0, 1.0, &mut r);
        let fast = lw_attention(&h, &grid, &p, &Probe::off()).unwrap();
        let rows = h.clone().reshape([grid.token_count(), d]).unwrap();
        let (q, k, v) = (p.q.forward(&rows).unwrap(), p.k.forward(&rows).unwrap(), p.v.forward(&rows).unwrap());
        let mixed = masked_multi_head_ref(&q, &k, &v, heads, &AttentionMask::block_diagonal(&grid)).unwrap();
        let slow = p.out.forward(&mixed).unwrap().reshape(h.shape().to_vec()).unwrap();
        prop_assert!(fast.max_abs_diff(&slow) < 1e-10);
    }

    #[test]
    fn pyramid_matches_average_pooling(
        map in proptest::array::uniform3(1usize..9),
        picks in proptest::collection::vec((proptest::array::uniform3(0usize..8), proptest::bool::weighted(0.2)), 1..4),
        d in 1usize..6,
        seed in any::<u64>(),
    ) {
        let scales: Vec<PriorScale> = picks
            .iter()
            .map(|(idx, whole)| {
                if *whole {
                    PriorScale::Whole
                } else {
                    PriorScale::Grid([0, 1, 2].map(|a| {
                        let ds = divisors(map[a]);
                        ds[idx[a] % ds.len()]
                    }))
                }
            })
            .collect();
        let spec = PyramidSpec::new(scales);
        let x: Tensor = Tensor::uniform([map[0], map[1], map[2], d], -1.0, 1.0, &mut rng(seed));
        let priors = pyramid_downsample(&x, &spec, &PyramidKernels::averaging(&spec, map, d).unwrap()).unwrap();
        prop_assert_eq!(priors.len(), spec.prior_count(map).unwrap());
        let mut expect_offset = 0;
        for (grid, &off) in spec.resolve(map).unwrap().iter().zip(&priors.offsets) {
            prop_assert_eq!(off, expect_offset);
            let slow = adaptive_avg_pool3d_ref(&x, *grid).unwrap();
            let fast = &priors.tokens.data()[off * d..off * d + slow.numel()];
            for (a, b) in fast.iter().zip(slow.data()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            expect_offset += grid.iter().product::<usize>();
        }
    }

    #[test]
    fn gp_queries_do_not_interact(j in 0usize..32, seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_params(8, 2, &mut r);
        let h: Tensor = Tensor::uniform([2, 4, 4, 8], -1.0, 1.0, &mut r);
        let priors: Tensor = Tensor::uniform([5, 8], -1.0, 1.0, &mut r);
        let mut h2 = h.clone();
        for v in &mut h2.data_mut()[j * 8..(j + 1) * 8] {
            *v += 0.5;
        }
        let a = gp_attention_with_priors(&h, &priors, &p, &Probe::off()).unwrap();
        let b = gp_attention_with_priors(&h2, &priors, &p, &Probe::off()).unwrap();
        for tok in 0..32 {
            let same = a.data()[tok * 8..(tok + 1) * 8] == b.data()[tok * 8..(tok + 1) * 8];
            prop_assert_eq!(same, tok != j);
        }
    }

    #[test]
    fn attention_rows_sum_to_one(nq in 1usize..9, nk in 1usize..9, heads in 1usize..4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = 2 * heads;
        let p = random_params(d, heads, &mut r);
        let q: Tensor = Tensor::uniform([nq, d], -2.0, 2.0, &mut r);
        let kv: Tensor = Tensor::uniform([nk, d], -2.0, 2.0, &mut r);
        let (_, weights) = multi_head_attention_with_weights(&q, &kv, &p).unwrap();
        prop_assert_eq!(weights.len(), heads);
        for w in &weights {
            for row in w.data().chunks(nk) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zeroed_residual_branches_are_identities((map, window) in map_and_window(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut p = random_params(8, 2, &mut r);
        p.out.weight = Tensor::zeros([8, 8]);
        p.out.bias = Tensor::zeros([8]);
        p.mlp_out.weight = Tensor::zeros([32, 8]);
        p.mlp_out.bias = Tensor::zeros([8]);
        let x: Tensor = Tensor::uniform([map[0], map[1], map[2], 8], -1.0, 1.0, &mut r);
        let grid = WindowGrid::new(map, window).unwrap();
        let spec = PyramidSpec::whole();
        let k = PyramidKernels::averaging(&spec, map, 8).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&lw_msa_sublayer(&x, &grid, &p).unwrap()), bits(&x));
        prop_assert_eq!(bits(&gp_msa_sublayer(&x, &spec, &k, &p).unwrap()), bits(&x));
        let zero_peg = PegParams {
            kernel: ConvKernel3D::new(PEG_EXTENT, [1; 3], Tensor::zeros([8, 3, 3, 3]), Some(Tensor::zeros([8]))).unwrap(),
        };
        let y = peg(&x, &zero_peg).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert_eq!(bits(&y), bits(&x));
    }
}

#[test]
fn bad_windows_name_the_axis() {
    let e = WindowGrid::new([4, 6, 8], [2, 4, 4]).unwrap_err().to_string();
    assert!(e.contains("height axis"), "{e}");
}
