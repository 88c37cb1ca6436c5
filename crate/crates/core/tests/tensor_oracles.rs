use entn_core::tensor::{
    f3tn_contract, fold, frob_dist, frob_norm, partial_contract_pair, unfold, FactorTriple, Mode,
    Tensor3,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Literal six-loop evaluation of the element-wise F3TN definition.
fn brute_contract(f: &FactorTriple) -> Tensor3 {
    let [id, jd, nd] = f.dims();
    let r = f.rank();
    let mut out = Tensor3::zeros([id, jd, nd]);
    for i in 0..id {
        for j in 0..jd {
            for n in 0..nd {
                let mut acc = 0.0;
                for x in 0..r {
                    for y in 0..r {
                        for z in 0..r {
                            acc += f.gi()[(i, x, y)] * f.gj()[(x, j, z)] * f.gn()[(y, z, n)];
                        }
                    }
                }
                out[(i, j, n)] = acc;
            }
        }
    }
    out
}

fn signed_factors(dims: [usize; 3], f: usize, rng: &mut ChaCha8Rng) -> FactorTriple {
    let mut t = FactorTriple::random(dims, f, 2.0, rng);
    for mode in Mode::ALL {
        let mut g = t.factor(mode).clone();
        g.values_mut().iter_mut().for_each(|v| *v -= 1.0);
        t.set_factor(mode, g).unwrap();
    }
    t
}

fn rel_err(a: &Tensor3, b: &Tensor3) -> f64 {
    frob_dist(a, b).unwrap() / frob_norm(b).max(f64::MIN_POSITIVE)
}

#[test]
fn rank_one_contraction_is_outer_product() {
    let a = [1.5, -2.0, 0.5];
    let b = [3.0, 0.25];
    let c = [2.0, -1.0, 4.0, 0.1];
    let gi = Tensor3::from_vec([3, 1, 1], a.to_vec()).unwrap();
    let gj = Tensor3::from_vec([1, 2, 1], b.to_vec()).unwrap();
    let gn = Tensor3::from_vec([1, 1, 4], c.to_vec()).unwrap();
    let e = f3tn_contract(&FactorTriple::new(gi, gj, gn).unwrap());
    for i in 0..3 {
        for j in 0..2 {
            for n in 0..4 {
                let want: f64 = a[i] * b[j] * c[n];
                assert!((e[(i, j, n)] - want).abs() <= 1e-15 * want.abs().max(1.0));
            }
        }
    }
}

#[test]
fn zero_gj_annihilates() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut f = FactorTriple::random([3, 4, 2], 3, 1.0, &mut rng);
    f.set_factor(Mode::J, Tensor3::zeros([3, 4, 3])).unwrap();
    assert!(f3tn_contract(&f).values().iter().all(|&v| v == 0.0));
}

#[test]
fn contraction_matches_brute_force_3x3x3_rank2() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let f = signed_factors([3, 3, 3], 2, &mut rng);
    let fast = f3tn_contract(&f);
    let slow = brute_contract(&f);
    assert!(rel_err(&fast, &slow) < 1e-12);
}

#[test]
fn rank_mismatch_is_shape_error() {
    let gi = Tensor3::zeros([2, 2, 2]);
    let gj = Tensor3::zeros([3, 2, 3]);
    let gn = Tensor3::zeros([2, 2, 2]);
    assert!(FactorTriple::new(gi, gj, gn).is_err());
    let a = Tensor3::zeros([2, 3, 2]);
    let b = Tensor3::zeros([3, 3, 4]);
    assert!(partial_contract_pair(&a, &b, Mode::I).is_err());
}

#[test]
fn mode_i_unfolding_layout_by_hand() {
    // values 1..8 stored first-index-fastest: T(a,b,c) = 1 + a + 2b + 4c
    let t = Tensor3::from_vec([2, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
    assert_eq!(t[(1, 0, 1)], 6.0);
    let m = unfold(&t, Mode::I);
    // columns enumerate (j, n) pairs with j fastest: (0,0) (1,0) (0,1) (1,1)
    let expected = DMatrix::from_row_slice(2, 4, &[1.0, 3.0, 5.0, 7.0, 2.0, 4.0, 6.0, 8.0]);
    assert_eq!(m, expected);
    // mode j: columns (i, n), i fastest
    let mj = unfold(&t, Mode::J);
    let ej = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    assert_eq!(mj, ej);
    // mode n: columns (i, j), i fastest
    let mn = unfold(&t, Mode::N);
    let en = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    assert_eq!(mn, en);
}

#[test]
fn unfold_zero_and_bad_fold() {
    let z = Tensor3::zeros([2, 3, 4]);
    for mode in Mode::ALL {
        assert!(unfold(&z, mode).iter().all(|&v| v == 0.0));
    }
    let m = DMatrix::<f64>::zeros(3, 8);
    assert!(fold(&m, [2, 3, 4], Mode::I).is_err());
    assert!(fold(&m, [2, 3, 4], Mode::J).is_ok());
}

#[test]
fn scalar_latent_h_i() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = FactorTriple::random([2, 3, 4], 1, 1.0, &mut rng);
    let h = f.partial_contract(Mode::I);
    assert_eq!(h.shape(), (1, 12));
    for n in 0..4 {
        for j in 0..3 {
            assert_eq!(h[(0, j + 3 * n)], f.gj()[(0, j, 0)] * f.gn()[(0, 0, n)]);
        }
    }
}

#[test]
fn zero_gi_gives_zero_h_n() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut f = FactorTriple::random([2, 3, 4], 2, 1.0, &mut rng);
    f.set_factor(Mode::I, Tensor3::zeros([2, 2, 2])).unwrap();
    assert!(f.partial_contract(Mode::N).iter().all(|&v| v == 0.0));
}

#[test]
fn consistency_contract_2x2x2_rank2() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = signed_factors([2, 2, 2], 2, &mut rng);
    let e = brute_contract(&f);
    for mode in Mode::ALL {
        let lhs = unfold(&e, mode);
        let rhs = unfold(f.factor(mode), mode) * f.partial_contract(mode);
        assert!((lhs - rhs).abs().max() < 1e-12, "mode {mode}");
    }
}

#[test]
fn norms() {
    assert_eq!(frob_norm(&Tensor3::zeros([2, 2, 2])), 0.0);
    let mut t = Tensor3::zeros([1, 2, 1]);
    t[(0, 1, 0)] = 3.0;
    assert_eq!(frob_norm(&t), 3.0);
    assert_eq!(frob_dist(&t, &t).unwrap(), 0.0);
    assert!(frob_dist(&t, &Tensor3::zeros([2, 1, 1])).is_err());
}

#[test]
fn dump_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let t = Tensor3::random_uniform([3, 2, 4], 1.0, &mut rng);
    let mut buf = Vec::new();
    t.write_dump(&mut buf).unwrap();
    assert_eq!(Tensor3::read_dump(&buf[..]).unwrap(), t);
}

fn dims_and_rank() -> impl Strategy<Value = ([usize; 3], usize, u64)> {
    (1usize..=4, 1usize..=4, 1usize..=4, 1usize..=3, any::<u64>())
        .prop_map(|(i, j, n, f, seed)| ([i, j, n], f, seed))
}

proptest! {
    #[test]
    fn contraction_matches_oracle((dims, f, seed) in dims_and_rank()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = signed_factors(dims, f, &mut rng);
        let fast = f3tn_contract(&g);
        let slow = brute_contract(&g);
        let scale = frob_norm(&slow);
        prop_assert!(frob_dist(&fast, &slow).unwrap() <= 1e-12 * scale.max(1e-300));
    }

    #[test]
    fn fold_unfold_roundtrip((dims, _f, seed) in dims_and_rank()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor3::random_uniform(dims, 1.0, &mut rng);
        for mode in Mode::ALL {
            prop_assert_eq!(fold(&unfold(&t, mode), dims, mode).unwrap(), t.clone());
        }
    }

    #[test]
    fn unfolding_consistency((dims, f, seed) in dims_and_rank()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = signed_factors(dims, f, &mut rng);
        let e = f3tn_contract(&g);
        for mode in Mode::ALL {
            let lhs = unfold(&e, mode);
            let rhs = unfold(g.factor(mode), mode) * g.partial_contract(mode);
            prop_assert!((lhs - rhs).abs().max() <= 1e-10);
        }
    }

    #[test]
    fn norm_invariant_under_gauge_rescaling((dims, f, seed) in dims_and_rank(), alpha in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = signed_factors(dims, f, &mut rng);
        let base = frob_norm(&f3tn_contract(&g));
        let mut scaled = g.clone();
        let mut gi = g.gi().clone();
        gi.scale(alpha);
        let mut gj = g.gj().clone();
        gj.scale(1.0 / alpha);
        scaled.set_factor(Mode::I, gi).unwrap();
        scaled.set_factor(Mode::J, gj).unwrap();
        let after = frob_norm(&f3tn_contract(&scaled));
        prop_assert!((after - base).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn single_entry_matches_full((dims, f, seed) in dims_and_rank()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = signed_factors(dims, f, &mut rng);
        let full = f3tn_contract(&g);
        let i = rng.random_range(0..dims[0]);
        let j = rng.random_range(0..dims[1]);
        let n = rng.random_range(0..dims[2]);
        prop_assert!((g.entry(i, j, n) - full[(i, j, n)]).abs() <= 1e-12 * full[(i, j, n)].abs().max(1.0));
    }
}
