use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::likelihood::EdgeData;
use crate::simgen::{generate, make_ground_truth, Arrangement, TruthSpec};

fn nc(v: usize) -> NodeCount {
    NodeCount::new(v).unwrap()
}

fn s1() -> Partition {
    Partition::from_one_based(&[1, 1, 1, 2, 2, 2, 3, 3, 3, 3], None).unwrap()
}

fn small_data(seed: u64, s: usize) -> EdgeData {
    let gt = make_ground_truth(&TruthSpec {
        sizes: vec![3, 3, 4],
        rho: vec![0.2, 0.4, 0.9],
        rho0: 2.0,
        lambda: 0.01,
        map: EntryMap::Exponential,
        arrangement: Arrangement::Clustered,
    })
    .unwrap();
    generate(&gt, s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn quick_cfg(k: usize, seed: u64) -> MHConfig {
    MHConfig {
        k,
        iters: 60,
        burn_in: 20,
        prior_sd: 1.0,
        seed,
        rho_init_range: (0.0, 0.5),
        ..MHConfig::default()
    }
}

#[test]
fn proposal_probabilities_follow_class_counts() {
    let p = s1();
    let probs = label_proposal_probs(&p, 0);
    let want = [2.0 / 9.0, 3.0 / 9.0, 4.0 / 9.0];
    for (a, b) in probs.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    for i in 0..10 {
        assert!((label_proposal_probs(&p, i).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
    let one = Partition::new(vec![0; 5], 2).unwrap();
    assert_eq!(label_proposal_probs(&one, 2), vec![1.0, 0.0]);
}

#[test]
fn proposal_frequencies_match_probabilities() {
    let data = small_data(1, 20);
    let ev = Evaluator::new(&data, 0.01, EntryMap::Exponential);
    let state = ChainState::new(s1(), RhoParams::new(2.0, vec![0.2, 0.4, 0.9]), &ev);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 90_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let (c, prob) = propose_label(&state, 0, &mut rng);
        assert!((prob - label_proposal_probs(&state.partition, 0)[c]).abs() < 1e-15);
        counts[c] += 1;
    }
    for (c, want) in [2.0 / 9.0, 3.0 / 9.0, 4.0 / 9.0].iter().enumerate() {
        assert!((counts[c] as f64 / n as f64 - want).abs() < 0.01);
    }
}

#[test]
fn strict_initialisation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let p = init_partition(nc(10), 3, &mut rng).unwrap();
        let mut sizes = p.class_sizes();
        sizes.sort_unstable();
        assert!(sizes.iter().all(|&n| n >= 3));
        assert_eq!(sizes.iter().sum::<usize>(), 10);
        assert!(p.is_init_valid());
        let q = init_partition(nc(9), 3, &mut rng).unwrap();
        assert_eq!(q.class_sizes(), vec![3, 3, 3]);
    }
    let err = init_partition(nc(10), 4, &mut rng).unwrap_err();
    assert!(matches!(err, Error::Infeasible(_)));
    assert!(err.to_string().contains("at least 3"));
}

#[test]
fn relaxed_initialisation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = init_partition_with(nc(10), 4, InitPolicy::Relaxed, &mut rng).unwrap();
    let mut sizes = p.class_sizes();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![2, 2, 3, 3]);
    assert!(init_partition_with(nc(10), 6, InitPolicy::Relaxed, &mut rng).is_err());
}

#[test]
fn rho_initialisation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = init_rho(4, (0.0, 0.5), &mut rng).unwrap();
    assert_eq!(r.num_components(), 5);
    assert!(r.components().iter().all(|x| (0.0..=0.5).contains(x)));
    let r = init_rho(3, (0.3, 0.3), &mut rng).unwrap();
    assert!(r.components().iter().all(|&x| x == 0.3));
    let a = init_rho(3, (0.0, 0.5), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = init_rho(3, (0.0, 0.5), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    assert!(init_rho(3, (0.5, 0.1), &mut rng).is_err());
    assert!(init_rho(0, (0.0, 0.5), &mut rng).is_err());
}

#[test]
fn rho_proposals() {
    let data = small_data(1, 10);
    let ev = Evaluator::new(&data, 0.01, EntryMap::Exponential);
    let state = ChainState::new(s1(), RhoParams::new(2.0, vec![0.2, 0.4, 0.9]), &ev);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    assert_eq!(propose_rho(&state, 3, 0.0, &mut rng), 0.9);
    let n = 100_000;
    let step = 0.01;
    let mean = (0..n).map(|_| propose_rho(&state, 3, step, &mut rng)).sum::<f64>() / n as f64;
    assert!((mean - 0.9).abs() < 3.0 * step / (n as f64).sqrt());
    let a = propose_rho(&state, 1, step, &mut ChaCha8Rng::seed_from_u64(1));
    let b = propose_rho(&state, 1, step, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(a, b);
}

#[test]
fn label_acceptance_contract() {
    let data = small_data(2, 30);
    let ev = Evaluator::new(&data, 0.01, EntryMap::Exponential);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let truth = RhoParams::new(2.0, vec![0.2, 0.4, 0.9]);
    let mut state = ChainState::new(s1(), truth.clone(), &ev);
    let before = state.clone();
    assert!(accept_label(&mut state, &ev, 4, 1, &mut rng));
    assert_eq!(state, before);

    // From a wrong label, moving back to the truth always improves the fit.
    let mut wrong = s1();
    wrong.set_label(0, 2);
    for _ in 0..50 {
        let mut st = ChainState::new(wrong.clone(), truth.clone(), &ev);
        assert!(ev.eval(&s1(), &truth) > st.loglik);
        assert!(accept_label(&mut st, &ev, 0, 0, &mut rng));
        assert_eq!(st.partition, s1());
    }

    // Rejections leave the state bitwise unchanged.
    let mut rejected = 0;
    for _ in 0..200 {
        let mut st = before.clone();
        if !accept_label(&mut st, &ev, 0, 2, &mut rng) {
            rejected += 1;
            assert_eq!(st.partition, before.partition);
            assert_eq!(st.rho, before.rho);
            assert_eq!(st.loglik.to_bits(), before.loglik.to_bits());
        }
    }
    assert!(rejected > 0);
}

#[test]
fn non_pd_proposals_are_rejected() {
    let data = small_data(3, 10);
    let ev = Evaluator::new(&data, 1e-9, EntryMap::Exponential);
    let mut state = ChainState::new(s1(), RhoParams::new(2.0, vec![0.2, 0.4, 0.9]), &ev);
    assert!(state.loglik.is_finite());
    let before = state.clone();
    let prior = RhoPrior { mean: 0.25, sd: 1e6 };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // rho_0 far below the within values makes Sigma indefinite.
    for _ in 0..100 {
        assert!(!accept_rho(&mut state, &ev, 0, -3.0, prior, &mut rng));
    }
    assert_eq!(state, before);
}

#[test]
fn flat_prior_reduces_to_likelihood_ratio() {
    let data = small_data(4, 50);
    let ev = Evaluator::new(&data, 0.01, EntryMap::Exponential);
    let state = ChainState::new(s1(), RhoParams::new(2.0, vec![0.2, 0.4, 0.9]), &ev);
    let flat = RhoPrior { mean: 0.25, sd: 1e6 };
    for &(c, x) in &[(1, 0.25), (3, 0.7), (0, 1.8)] {
        let (lr, cand, ll) = rho_log_ratio(&state, &ev, c, x, flat);
        assert_eq!(ll, ev.eval(&state.partition, &cand));
        assert!((lr - (ll - state.loglik)).abs() < 1e-9 * (1.0 + lr.abs()));
        let tight = RhoPrior { mean: 0.25, sd: 0.01 };
        let (lt, _, _) = rho_log_ratio(&state, &ev, c, x, tight);
        let want = ll - state.loglik + tight.log_density(x) - tight.log_density(state.rho.component(c));
        assert!((lt - want).abs() < 1e-9 * (1.0 + want.abs()));
    }
}

#[test]
fn metropolis_test_frequency() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for &alpha in &[0.1f64, 0.37, 0.8] {
        let n = 100_000;
        let hits = (0..n).filter(|_| mh_test(alpha.ln(), &mut rng)).count();
        assert!((hits as f64 / n as f64 - alpha).abs() < 0.01);
    }
    assert!(mh_test(0.5, &mut rng));
    assert!(!mh_test(f64::NEG_INFINITY, &mut rng));
    assert!(!mh_test(f64::NAN, &mut rng));
}

#[test]
fn two_point_chain_is_balanced() {
    // Alternate proposals between two rho values; stationary frequencies
    // must follow the normalised posterior.
    let data = small_data(5, 5);
    let ev = Evaluator::new(&data, 0.01, EntryMap::Exponential);
    let prior = RhoPrior { mean: 0.25, sd: 0.5 };
    let (a, b) = (0.85, 1.0);
    let rho_at = |x: f64| RhoParams::new(2.0, vec![0.2, 0.4, x]);
    let target = |x: f64| ev.eval(&s1(), &rho_at(x)) + prior.log_density(x);
    let d = target(a) - target(b);
    assert!(d.abs() < 3.0, "pick closer grid points: {d}");
    let pa = 1.0 / (1.0 + (-d).exp());
    let mut state = ChainState::new(s1(), rho_at(a), &ev);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 100_000;
    let mut at_a = 0;
    for _ in 0..n {
        let other = if state.rho.rho[2] == a { b } else { a };
        accept_rho(&mut state, &ev, 3, other, prior, &mut rng);
        at_a += usize::from(state.rho.rho[2] == a);
    }
    assert!((at_a as f64 / n as f64 - pa).abs() < 0.02, "{} vs {pa}", at_a as f64 / n as f64);
}

#[test]
fn config_validation() {
    let v = nc(10);
    assert!(MHConfig::default().validate(v).is_ok());
    let bad = [
        MHConfig { k: 0, ..MHConfig::default() },
        MHConfig { iters: 100, burn_in: 100, ..MHConfig::default() },
        MHConfig { step_sd: 0.0, ..MHConfig::default() },
        MHConfig { prior_sd: -1.0, ..MHConfig::default() },
        MHConfig { lambda: f64::NAN, ..MHConfig::default() },
        MHConfig { rho_init_range: (1.0, 0.0), ..MHConfig::default() },
        MHConfig { k: 4, ..MHConfig::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate(v).is_err(), "{cfg:?}");
    }
    let relaxed = MHConfig { k: 4, init: InitPolicy::Relaxed, ..MHConfig::default() };
    assert!(relaxed.validate(v).is_ok());
}

#[test]
fn update_order_follows_first_member() {
    let p = Partition::from_one_based(&[3, 1, 3, 2, 1], Some(4)).unwrap();
    assert_eq!(rho_update_order(&p), vec![0, 3, 1, 2]);
}

#[test]
fn chain_is_seed_deterministic_and_consistent() {
    let data = small_data(6, 40);
    let cfg = quick_cfg(3, 21);
    let (t1, s1_) = run_chain(&data, &cfg).unwrap();
    let (t2, s2_) = run_chain(&data, &cfg).unwrap();
    assert_eq!(t1.records, t2.records);
    assert_eq!(s1_, s2_);
    assert_eq!(t1.records.len(), cfg.iters);
    let pw = t1.pointwise.as_ref().unwrap();
    assert_eq!(pw.draws(), cfg.iters - cfg.burn_in);
    assert_eq!(pw.subjects(), 40);

    let ev = Evaluator::new(&data, cfg.lambda, cfg.map);
    for (idx, r) in t1.records.iter().enumerate() {
        let p = Partition::new(r.labels.clone(), 3).unwrap();
        let rho = RhoParams::from_components(&r.rho).unwrap();
        let fresh = ev.eval(&p, &rho);
        assert_eq!(fresh.to_bits(), r.loglik.to_bits());
        if idx >= cfg.burn_in {
            let row = ev.subject_logliks(&p, &rho).unwrap();
            for (s, x) in row.iter().enumerate() {
                assert_eq!(x.to_bits(), pw.get(idx - cfg.burn_in, s).to_bits());
            }
        }
    }
}

#[test]
fn classes_never_revive() {
    let data = small_data(7, 30);
    let cfg = MHConfig {
        iters: 150,
        burn_in: 50,
        init: InitPolicy::Relaxed,
        ..quick_cfg(5, 3)
    };
    let (trace, summary) = run_chain(&data, &cfg).unwrap();
    let mut alive = vec![true; 5];
    for r in &trace.records {
        let mut now = vec![false; 5];
        for &c in &r.labels {
            now[c] = true;
        }
        for c in 0..5 {
            assert!(alive[c] || !now[c], "class {c} revived at {}", r.iteration);
            if !now[c] {
                assert_eq!(r.rho_accepted[c + 1], None);
            }
        }
        alive = now;
    }
    assert!(summary.k_hat <= 5);
    assert_eq!(summary.rho_hat.len(), 6);
    for (c, v) in summary.vanished.iter().enumerate() {
        assert_eq!(*v, summary.map_partition.class_sizes()[c] == 0);
    }
}

#[test]
fn chain_from_given_start() {
    let data = small_data(8, 30);
    let cfg = quick_cfg(3, 4);
    let start = (s1(), RhoParams::new(2.0, vec![0.2, 0.4, 0.9]));
    let (trace, _) = run_chain_from(&data, &cfg, Some(start)).unwrap();
    assert_eq!(trace.records.len(), cfg.iters);
    let wrong = (Partition::new(vec![0; 9], 3).unwrap(), RhoParams::new(1.0, vec![0.1; 3]));
    assert!(run_chain_from(&data, &cfg, Some(wrong)).is_err());
}

#[test]
fn relabeled_start_gives_relabeled_chain() {
    let data = small_data(9, 30);
    let cfg = quick_cfg(3, 17);
    let rho = RhoParams::new(1.9, vec![0.3, 0.35, 0.8]);
    let perm = [2, 0, 1];
    let (a, _) = run_chain_from(&data, &cfg, Some((s1(), rho.clone()))).unwrap();
    let (b, _) = run_chain_from(&data, &cfg, Some((s1().relabel(&perm).unwrap(), rho.relabel(&perm)))).unwrap();
    for (x, y) in a.records.iter().zip(&b.records) {
        let px = Partition::new(x.labels.clone(), 3).unwrap().relabel(&perm).unwrap();
        assert_eq!(px.labels(), y.labels.as_slice());
        assert_eq!(x.loglik.to_bits(), y.loglik.to_bits());
        let rx = RhoParams::from_components(&x.rho).unwrap().relabel(&perm);
        assert_eq!(rx.components(), y.rho);
    }
}

fn record(iteration: usize, labels: Vec<usize>, rho: Vec<f64>, loglik: f64) -> IterationRecord {
    IterationRecord {
        iteration,
        label_accepted: vec![true; labels.len()],
        rho_accepted: vec![Some(false); rho.len()],
        labels,
        rho,
        loglik,
    }
}

#[test]
fn summary_of_constant_trace() {
    let labels = vec![0, 0, 0, 1, 1, 1];
    let rho = vec![1.0, 0.2, 0.3];
    let trace = ChainTrace {
        records: (1..=10).map(|t| record(t, labels.clone(), rho.clone(), -5.0)).collect(),
        burn_in: 4,
        k: 2,
        pointwise: None,
    };
    let s = summarize(&trace).unwrap();
    assert_eq!(s.map_partition.labels(), labels.as_slice());
    assert_eq!(s.rho_hat, rho);
    assert_eq!(s.k_hat, 2);
    assert_eq!(s.acceptance.labels, 1.0);
    assert_eq!(s.acceptance.rho, 0.0);
    assert_eq!(s.map_iteration, 5);
}

#[test]
fn summary_picks_single_best_draw() {
    let mut records: Vec<_> = (1..=6)
        .map(|t| record(t, vec![0, 0, 0, 1, 1, 1], vec![1.0, 0.2, 0.3], -10.0))
        .collect();
    records[4] = record(5, vec![1, 1, 1, 1, 1, 1], vec![1.0, 0.2, 0.3], -1.0);
    let trace = ChainTrace {
        records,
        burn_in: 2,
        k: 2,
        pointwise: None,
    };
    let s = summarize(&trace).unwrap();
    assert_eq!(s.map_partition.labels(), &[1, 1, 1, 1, 1, 1]);
    assert_eq!(s.k_hat, 1);
    assert_eq!(s.vanished, vec![true, false]);
    let bad = ChainTrace { burn_in: 6, ..trace };
    assert!(summarize(&bad).is_err());
}

#[test]
fn trace_csv_layout() {
    let data = small_data(10, 12);
    let (trace, _) = run_chain(&data, &quick_cfg(3, 1)).unwrap();
    let csv = trace.to_csv();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,loglik,rho0,rho1,rho2,rho3,labels,label_accepts,rho_accepts,rho_attempts"
    );
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "1");
    assert_eq!(first[6].split('-').count(), 10);
    assert_eq!(csv.lines().count(), 61);
}

#[test]
fn rejects_unusable_start() {
    let r = DMatrix::from_element(5, 45, 0.0);
    let data = EdgeData::new(r).unwrap();
    let cfg = MHConfig { lambda: 0.0, ..quick_cfg(3, 1) };
    assert!(matches!(run_chain(&data, &cfg), Err(Error::NotPositiveDefinite(_))));
    let _ = ChaCha8Rng::seed_from_u64(0).random::<u8>();
}
