use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::edges::{edge_index, NodeCount};

fn nc(v: usize) -> NodeCount {
    NodeCount::new(v).unwrap()
}

fn s1_v10() -> Partition {
    Partition::from_one_based(&[1, 1, 1, 2, 2, 2, 3, 3, 3, 3], None).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn random_config(rng: &mut ChaCha8Rng, v: usize) -> (Partition, RhoParams, f64, EntryMap) {
    let k = rng.random_range(1..=(v / 2).clamp(1, 6));
    let labels: Vec<usize> = (0..v).map(|_| rng.random_range(0..k)).collect();
    let p = Partition::new(labels, k).unwrap();
    let map = if rng.random_bool(0.5) {
        EntryMap::Exponential
    } else {
        EntryMap::Identity
    };
    let (rho0, rho) = match map {
        // rho_k <= rho_0 keeps every within-block entry at least the cross entry.
        EntryMap::Exponential => {
            let rho0 = rng.random_range(0.5..3.0);
            (rho0, (0..k).map(|_| rng.random_range(0.0..rho0)).collect())
        }
        EntryMap::Identity => {
            let rho0 = rng.random_range(0.0..0.3);
            (rho0, (0..k).map(|_| rng.random_range(rho0..1.0)).collect())
        }
    };
    let lambda = 10f64.powf(rng.random_range(-3.0..0.0));
    (p, RhoParams::new(rho0, rho), lambda, map)
}

fn random_psd(rng: &mut ChaCha8Rng, e: usize, rows: usize) -> SampleCov {
    let r = DMatrix::from_fn(rows, e, |_, _| rng.random_range(-1.0..1.0));
    SampleCov::from_data(&r).unwrap()
}

#[test]
fn trivial_single_class_matrix() {
    let p = Partition::new(vec![0, 0, 0], 1).unwrap();
    let r = RhoParams::new(0.0, vec![0.0]);
    let sigma = build_dense(&p, &r, 0.01, nc(3), EntryMap::Exponential).unwrap();
    for a in 0..3 {
        for b in 0..3 {
            let want = if a == b { 1.01 } else { 1.0 };
            assert_eq!(sigma[(a, b)], want);
        }
    }
}

#[test]
fn two_pair_example_only_diagonal_within() {
    let p = Partition::new(vec![0, 0, 1, 1], 2).unwrap();
    let r = RhoParams::new(1.0, vec![0.0, 0.0]);
    let sigma = build_dense(&p, &r, 0.0, nc(4), EntryMap::Exponential).unwrap();
    let e01 = edge_index(0, 1, 4).unwrap();
    let e23 = edge_index(2, 3, 4).unwrap();
    for a in 0..6 {
        for b in 0..6 {
            let want = if a == b && (a == e01 || a == e23) {
                1.0
            } else {
                (-1.0f64).exp()
            };
            assert_eq!(sigma[(a, b)], want, "entry ({a},{b})");
        }
    }
}

#[test]
fn last_block_of_s1_has_its_own_strength() {
    let p = s1_v10();
    let r = RhoParams::new(2.0, vec![0.2, 0.4, 0.9]);
    let sigma = build_dense(&p, &r, 0.01, nc(10), EntryMap::Exponential).unwrap();
    let block: Vec<usize> = [(6, 7), (6, 8), (6, 9), (7, 8), (7, 9), (8, 9)]
        .iter()
        .map(|&(i, j)| edge_index(i, j, 10).unwrap())
        .collect();
    for &a in &block {
        for &b in &block {
            let want = (-0.9f64).exp() + if a == b { 0.01 } else { 0.0 };
            assert_eq!(sigma[(a, b)], want);
        }
    }
    let outside = edge_index(0, 6, 10).unwrap();
    assert_eq!(sigma[(block[0], outside)], (-2.0f64).exp());
}

#[test]
fn block_sizes_for_clustered_layouts() {
    let sc = build_structured(
        &s1_v10(),
        &RhoParams::new(1.0, vec![0.2, 0.4, 0.9]),
        0.01,
        nc(10),
        EntryMap::Exponential,
    )
    .unwrap();
    assert_eq!(sc.block_sizes(), &[3, 3, 6]);

    let labels: Vec<usize> = (0..20).map(|i| i / 4).collect();
    let p = Partition::new(labels, 5).unwrap();
    let sc = build_structured(&p, &RhoParams::new(1.0, vec![0.5; 5]), 0.01, nc(20), EntryMap::Exponential)
        .unwrap();
    assert_eq!(sc.block_sizes(), &[6, 6, 6, 6, 6]);
    for members in sc.block_members() {
        assert!(members.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn logdet_of_all_ones_plus_ridge() {
    let p = Partition::new(vec![0, 0, 0], 1).unwrap();
    for &lambda in &[1e-3, 0.01, 0.5, 2.0] {
        let sc = StructuredCov::new(p.clone(), RhoParams::new(3.0, vec![0.0]), lambda, nc(3), EntryMap::Exponential)
            .unwrap();
        let want = 2.0 * lambda.ln() + (lambda + 3.0).ln();
        assert_relative_eq!(sc.logdet().unwrap(), want, max_relative = 1e-12);
    }
}

#[test]
fn equal_rhos_reduce_to_rank_one() {
    let v = 12;
    let labels: Vec<usize> = (0..v).map(|i| i % 3).collect();
    let p = Partition::new(labels, 3).unwrap();
    let rho0 = 0.7;
    let lambda = 0.05;
    let e = (v * (v - 1) / 2) as f64;
    let sc = StructuredCov::new(p, RhoParams::new(rho0, vec![rho0; 3]), lambda, nc(v), EntryMap::Exponential)
        .unwrap();
    let want = (e - 1.0) * lambda.ln() + (lambda + e * (-rho0).exp()).ln();
    assert_relative_eq!(sc.logdet().unwrap(), want, max_relative = 1e-10);
}

#[test]
fn trace_against_itself_is_dimension() {
    let sc = build_structured(
        &s1_v10(),
        &RhoParams::new(1.5, vec![0.2, 0.4, 0.9]),
        0.01,
        nc(10),
        EntryMap::Exponential,
    )
    .unwrap();
    let h = SampleCov::new(sc.materialize(), 1).unwrap();
    assert_relative_eq!(sc.trace_quad(&h).unwrap(), 45.0, max_relative = 1e-9);
}

#[test]
fn trace_against_identity_is_trace_of_inverse() {
    let sc = build_structured(
        &s1_v10(),
        &RhoParams::new(1.5, vec![0.2, 0.4, 0.9]),
        0.01,
        nc(10),
        EntryMap::Exponential,
    )
    .unwrap();
    let h = SampleCov::new(DMatrix::identity(45, 45), 1).unwrap();
    let inv = sc.materialize().try_inverse().unwrap();
    assert_relative_eq!(sc.trace_quad(&h).unwrap(), inv.trace(), max_relative = 1e-9);
}

#[test]
fn dense_oracle_trivial_cases() {
    let e = 6;
    let h = DMatrix::from_fn(e, e, |a, b| if a == b { 2.0 + a as f64 } else { 0.1 });
    let (ld, tr) = dense_oracle(&DMatrix::identity(e, e), &h).unwrap();
    assert_eq!(ld, 0.0);
    assert_relative_eq!(tr, h.trace(), max_relative = 1e-14);

    let lambda = 0.3;
    let (ld, tr) = dense_oracle(&(DMatrix::identity(e, e) * lambda), &h).unwrap();
    assert_relative_eq!(ld, e as f64 * lambda.ln(), max_relative = 1e-12);
    assert_relative_eq!(tr, h.trace() / lambda, max_relative = 1e-12);
}

#[test]
fn s1_fast_path_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sc = build_structured(
        &s1_v10(),
        &RhoParams::new(2.0, vec![0.2, 0.4, 0.9]),
        0.01,
        nc(10),
        EntryMap::Exponential,
    )
    .unwrap();
    let h = random_psd(&mut rng, 45, 60);
    let (ld, tr) = dense_oracle_structured(&sc, &h).unwrap();
    let (fld, ftr) = sc.logdet_and_trace(&h).unwrap();
    assert!(rel_close(fld, ld, 1e-10));
    assert!(rel_close(ftr, tr, 1e-10));
}

#[test]
fn positive_definite_on_table_layout() {
    let sc = build_structured(
        &s1_v10(),
        &RhoParams::new(2.0, vec![0.2, 0.4, 0.9]),
        0.01,
        nc(10),
        EntryMap::Exponential,
    )
    .unwrap();
    let check = sc.is_positive_definite();
    assert!(check.positive_definite);
    assert!(check.diagnostic.is_none());
    assert!(nalgebra::Cholesky::new(sc.materialize()).is_some());

    // A cross entry above a within entry breaks definiteness even with rho >= 0.
    let weak = build_structured(
        &s1_v10(),
        &RhoParams::new(0.3, vec![0.2, 0.4, 0.9]),
        0.01,
        nc(10),
        EntryMap::Exponential,
    )
    .unwrap();
    assert!(!weak.is_positive_definite().positive_definite);
    assert!(nalgebra::Cholesky::new(weak.materialize()).is_none());
}

#[test]
fn zero_ridge_rank_one_is_not_positive_definite() {
    let p = Partition::new(vec![0; 4], 1).unwrap();
    let sc = StructuredCov::new(p, RhoParams::new(0.5, vec![0.5]), 0.0, nc(4), EntryMap::Exponential).unwrap();
    let check = sc.is_positive_definite();
    assert!(!check.positive_definite);
    assert!(check.diagnostic.unwrap().contains("ridge"));
    assert!(matches!(sc.logdet(), Err(Error::NotPositiveDefinite(_))));
}

#[test]
fn strong_cross_with_weak_blocks_is_flagged() {
    // Identity map: cross entry 0.9 against within-block 0.0 makes Lambda indefinite.
    let p = s1_v10();
    let sc = StructuredCov::new(p, RhoParams::new(0.9, vec![0.0, 0.0, 0.0]), 1e-6, nc(10), EntryMap::Identity)
        .unwrap();
    let check = sc.is_positive_definite();
    assert!(!check.positive_definite);
    let msg = check.diagnostic.unwrap();
    assert!(msg.contains("pivot"), "{msg}");
    assert!(nalgebra::Cholesky::new(sc.materialize()).is_none());
}

#[test]
fn exponential_map_counterexample_is_flagged() {
    // rho_0 far below rho_k with a tiny ridge: D has large negative entries.
    let p = s1_v10();
    let sc = StructuredCov::new(p, RhoParams::new(0.0, vec![8.0, 8.0, 8.0]), 1e-9, nc(10), EntryMap::Exponential)
        .unwrap();
    assert!(!sc.is_positive_definite().positive_definite);
    assert!(nalgebra::Cholesky::new(sc.materialize()).is_none());
}

#[test]
fn rejects_bad_inputs() {
    let p = s1_v10();
    let r = RhoParams::new(1.0, vec![0.1, 0.2, 0.3]);
    assert!(build_dense(&p, &r, -0.1, nc(10), EntryMap::Exponential).is_err());
    assert!(build_dense(&p, &r, f64::NAN, nc(10), EntryMap::Exponential).is_err());
    assert!(matches!(
        build_dense(&p, &r, 0.01, nc(11), EntryMap::Exponential),
        Err(Error::DimensionMismatch(_))
    ));
    let short = RhoParams::new(1.0, vec![0.1, 0.2]);
    assert!(build_structured(&p, &short, 0.01, nc(10), EntryMap::Exponential).is_err());
    let sc = build_structured(&p, &r, 0.01, nc(10), EntryMap::Exponential).unwrap();
    let h = SampleCov::new(DMatrix::identity(6, 6), 1).unwrap();
    assert!(matches!(sc.trace_quad(&h), Err(Error::DimensionMismatch(_))));
}

#[test]
fn sample_cov_from_data_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = random_psd(&mut rng, 10, 7);
    let m = h.matrix();
    assert_eq!(m, &m.transpose());
    assert_eq!(h.subjects(), 7);
    assert!(SampleCov::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]), 1).is_err());
}

#[test]
fn entry_map_parsing() {
    assert_eq!("exp".parse::<EntryMap>().unwrap(), EntryMap::Exponential);
    assert_eq!("Identity".parse::<EntryMap>().unwrap(), EntryMap::Identity);
    assert!("linear".parse::<EntryMap>().is_err());
    let m = EntryMap::Exponential;
    assert_relative_eq!(m.rho_for_strength(m.strength(0.37)), 0.37, max_relative = 1e-14);
}

#[test]
fn entrywise_equivalence_200_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for _ in 0..200 {
        let v = rng.random_range(3..=20);
        let (p, r, lambda, map) = random_config(&mut rng, v);
        let dense = build_dense(&p, &r, lambda, nc(v), map).unwrap();
        let sc = build_structured(&p, &r, lambda, nc(v), map).unwrap();
        assert_eq!(sc.materialize(), dense);
        assert_eq!(dense, dense.transpose());
    }
}

#[test]
fn backend_equivalence_at_table_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for &v in &[10, 20, 30, 40] {
        for _ in 0..3 {
            let (p, r, lambda, map) = random_config(&mut rng, v);
            let sc = build_structured(&p, &r, lambda, nc(v), map).unwrap();
            let h = random_psd(&mut rng, sc.dim(), 50);
            let (ld, tr) = dense_oracle_structured(&sc, &h).unwrap();
            let (fld, ftr) = sc.logdet_and_trace(&h).unwrap();
            assert!(rel_close(fld, ld, 1e-8), "v={v}: {fld} vs {ld}");
            assert!(rel_close(ftr, tr, 1e-8), "v={v}: {ftr} vs {tr}");
        }
    }
}

#[test]
fn quad_form_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (p, r, lambda, map) = random_config(&mut rng, 9);
    let sc = build_structured(&p, &r, lambda, nc(9), map).unwrap();
    let x: Vec<f64> = (0..36).map(|_| rng.random_range(-2.0..2.0)).collect();
    let xv = nalgebra::DVector::from_vec(x.clone());
    let sol = nalgebra::Cholesky::new(sc.materialize()).unwrap().solve(&xv);
    assert!(rel_close(sc.quad_form(&x).unwrap(), xv.dot(&sol), 1e-9));
}

fn permuted(p: &Partition, perm: &[usize]) -> Partition {
    // Node i of the original becomes node perm[i].
    let mut labels = vec![0; p.nodes()];
    for (i, &c) in p.labels().iter().enumerate() {
        labels[perm[i]] = c;
    }
    Partition::new(labels, p.num_classes()).unwrap()
}

fn edge_perm(perm: &[usize]) -> Vec<usize> {
    let v = perm.len();
    let mut out = Vec::new();
    for i in 0..v {
        for j in i + 1..v {
            let (a, b) = (perm[i].min(perm[j]), perm[i].max(perm[j]));
            out.push(edge_index(a, b, v).unwrap());
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn node_permutation_conjugates_sigma(
        seed in any::<u64>(),
        v in 3usize..=8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, r, lambda, map) = random_config(&mut rng, v);
        let mut perm: Vec<usize> = (0..v).collect();
        for i in (1..v).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let sigma = build_dense(&p, &r, lambda, nc(v), map).unwrap();
        let sigma_p = build_dense(&permuted(&p, &perm), &r, lambda, nc(v), map).unwrap();
        let ep = edge_perm(&perm);
        for a in 0..sigma.nrows() {
            for b in 0..sigma.ncols() {
                prop_assert_eq!(sigma[(a, b)], sigma_p[(ep[a], ep[b])]);
            }
        }
    }

    #[test]
    fn structured_matches_dense_for_small_graphs(seed in any::<u64>(), v in 3usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, r, lambda, map) = random_config(&mut rng, v);
        let sc = build_structured(&p, &r, lambda, nc(v), map).unwrap();
        let h = random_psd(&mut rng, sc.dim(), 20);
        let (ld, tr) = dense_oracle_structured(&sc, &h).unwrap();
        let (fld, ftr) = sc.logdet_and_trace(&h).unwrap();
        prop_assert!(rel_close(fld, ld, 1e-8));
        prop_assert!(rel_close(ftr, tr, 1e-8));
    }
}
