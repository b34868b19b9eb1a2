use driftlab::data::{gen_gaussian_clusters, ClassId, TrainTest};
use driftlab::harness::*;
use driftlab::nn::ParamSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn clusters(n_classes: usize, seed: u64) -> TrainTest {
    let all = gen_gaussian_clusters(n_classes, 40, 8, 0.15, seed).unwrap();
    let train: Vec<usize> = (0..all.len()).filter(|i| i % 2 == 0).collect();
    let test: Vec<usize> = (0..all.len()).filter(|i| i % 2 == 1).collect();
    TrainTest::new(all.subset(&train), all.subset(&test)).unwrap()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        hidden: vec![16],
        embedding_dim: 4,
    }
}

fn quick(method: Method) -> MethodConfig {
    let mut cfg = MethodConfig::new(method);
    cfg.epochs = 4;
    cfg.lr = 1e-2;
    cfg.batch_size = 16;
    cfg
}

fn bits(p: &ParamSet) -> Vec<u64> {
    p.tensors().iter().flat_map(|t| t.data().iter().map(|x| x.to_bits())).collect()
}

#[test]
fn split_respects_fraction_and_held_out() {
    let data = clusters(10, 0);
    let seq = split_tasks(&data, 4, Some(1.0 / 3.0), &[4], 3).unwrap();
    let sizes: Vec<usize> = seq.tasks().iter().map(|t| t.classes.len()).collect();
    assert_eq!(sizes, vec![3, 2, 2, 2]);
    assert!(!seq.class_order().contains(&4));
    assert!(seq.held_out().unwrap().labels().iter().all(|&l| l == 4));
    for (a, b) in seq.tasks().iter().zip(seq.tasks().iter().skip(1)) {
        assert!(a.classes.iter().all(|c| !b.classes.contains(c)));
    }
    assert!(split_tasks(&data, 3, None, &[], 0).is_err());
    assert!(split_tasks(&data, 3, Some(1.5), &[], 0).is_err());
}

#[test]
fn single_task_record() {
    let seq = split_tasks(&clusters(2, 1), 1, None, &[], 0).unwrap();
    let r = run_sequence(&quick(Method::EFt), &small_model(), &seq).unwrap();
    assert_eq!(r.n_tasks(), 1);
    assert_eq!(r.accuracy.len(), 1);
    assert!(r.avg_incremental_accuracy(1).unwrap() > 0.9);
    assert!(r.avg_forgetting(1).is_err());
    assert!(r.transitions.is_empty());
}

#[test]
fn e_fix_freezes_after_first_task() {
    let seq = split_tasks(&clusters(6, 2), 3, None, &[], 0).unwrap();
    let mut seen: Vec<Vec<u64>> = Vec::new();
    let r = run_sequence_observed(&quick(Method::EFix), &small_model(), &seq, |ev| {
        seen.push(bits(ev.learner.embedding().unwrap().params()));
    })
    .unwrap();
    assert_eq!(seen.len(), 3);
    assert!(seen.iter().all(|p| p == &seen[0]));
    assert_eq!(r.task_stats[1].steps, 0);
    for trace in &r.prototype_traces {
        let vals: Vec<f64> = trace.with_sdc.iter().flatten().copied().collect();
        assert!(vals.iter().all(|v| v.to_bits() == vals[0].to_bits()));
        assert_eq!(trace.with_sdc, trace.without_sdc);
    }
}

#[test]
fn zero_gamma_matches_plain_fine_tuning() {
    let seq = split_tasks(&clusters(6, 3), 3, None, &[], 1).unwrap();
    let base = run_sequence(&quick(Method::EFt), &small_model(), &seq).unwrap();
    for m in [Method::ELwf, Method::EEwc, Method::EMas] {
        let mut cfg = quick(m);
        cfg.gamma = Some(0.0);
        let r = run_sequence(&cfg, &small_model(), &seq).unwrap();
        assert_eq!(a_matrix_csv(&r.accuracy), a_matrix_csv(&base.accuracy), "{m}");
    }
}

#[test]
fn regularizers_start_at_zero() {
    let seq = split_tasks(&clusters(4, 4), 2, None, &[], 0).unwrap();
    for m in [Method::ELwf, Method::EEwc, Method::EMas] {
        let r = run_sequence(&quick(m), &small_model(), &seq).unwrap();
        assert_eq!(r.task_stats[1].regularizer_at_start, Some(0.0), "{m}");
    }
}

#[test]
fn joint_fills_only_last_row() {
    let seq = split_tasks(&clusters(6, 5), 3, None, &[], 0).unwrap();
    let r = run_sequence(&quick(Method::Joint), &small_model(), &seq).unwrap();
    assert!(r.accuracy[0].is_none() && r.accuracy[1].is_none());
    assert_eq!(r.accuracy[2].as_ref().unwrap().len(), 3);
    assert!(r.avg_incremental_accuracy(3).unwrap() > 0.8);
}

#[test]
fn confusion_counts_every_seen_sample() {
    let data = clusters(6, 6);
    let seq = split_tasks(&data, 3, None, &[], 2).unwrap();
    let r = run_sequence(&quick(Method::EFt), &small_model(), &seq).unwrap();
    for k in 1..=3 {
        let cm = r.confusion_matrix(k).unwrap();
        let seen: usize = seq.tasks()[..k].iter().map(|t| t.test.len()).sum();
        assert_eq!(cm.total(), seen as u64);
        let correct: f64 = seq.tasks()[..k]
            .iter()
            .enumerate()
            .map(|(j, t)| r.accuracy_at(k, j + 1).unwrap() * t.test.len() as f64)
            .sum();
        assert!((cm.correct() as f64 - correct).abs() < 1e-9);
        assert_eq!(r.overall_accuracy[k - 1], Some(cm.accuracy()));
    }
}

#[test]
fn reruns_are_byte_identical() {
    let seq = split_tasks(&clusters(4, 7), 2, None, &[], 0).unwrap();
    for m in [Method::Ft, Method::EEwc] {
        let mut cfg = quick(m);
        cfg.sdc = m.supports_sdc();
        let a = run_sequence(&cfg, &small_model(), &seq).unwrap();
        let b = run_sequence(&cfg, &small_model(), &seq).unwrap();
        assert_eq!(a_matrix_csv(&a.accuracy), a_matrix_csv(&b.accuracy));
        assert_eq!(a.transitions, b.transitions);
    }
}

#[test]
fn fine_tuning_leaves_old_heads_untouched() {
    let seq = split_tasks(&clusters(6, 8), 3, None, &[], 0).unwrap();
    let mut head0: Vec<Vec<u64>> = Vec::new();
    run_sequence_observed(&quick(Method::Ft), &small_model(), &seq, |ev| {
        let m = ev.learner.softmax().unwrap();
        let (w, b) = m.head_param_indices(0);
        let p = m.params();
        head0.push(p.get(w).data().iter().chain(p.get(b).data()).map(|x| x.to_bits()).collect());
    })
    .unwrap();
    assert!(head0.iter().all(|h| h == &head0[0]));
}

#[test]
fn embedding_separates_two_clusters() {
    let seq = split_tasks(&clusters(2, 9), 1, None, &[], 0).unwrap();
    for m in [Method::EFt, Method::FtStar] {
        let r = run_sequence(&quick(m), &small_model(), &seq).unwrap();
        assert!(r.accuracy_at(1, 1).unwrap() > 0.95, "{m}");
    }
}

#[test]
fn sdc_rejected_for_softmax_methods() {
    for m in [Method::Ft, Method::FtStar, Method::Joint] {
        let mut cfg = MethodConfig::new(m);
        cfg.sdc = true;
        assert!(cfg.validate().is_err());
    }
}

#[test]
fn sdc_records_one_transition_per_later_task() {
    let seq = split_tasks(&clusters(6, 10), 3, None, &[], 0).unwrap();
    let mut cfg = quick(Method::EFt);
    cfg.sdc = true;
    let r = run_sequence(&cfg, &small_model(), &seq).unwrap();
    let tasks: Vec<usize> = r.transitions.iter().map(|t| t.task).collect();
    assert_eq!(tasks, vec![1, 2]);
    assert_eq!(r.transitions[1].moves.len(), 4);
    for mv in &r.transitions[0].moves {
        for d in 0..mv.before.len() {
            assert_eq!(mv.after[d], mv.before[d] + mv.drift[d]);
        }
    }
}

fn hand_a(acc: &[Vec<f64>], k: usize) -> f64 {
    acc[k - 1].iter().sum::<f64>() / k as f64
}

fn hand_f(acc: &[Vec<f64>], k: usize) -> f64 {
    let mut total = 0.0;
    for j in 0..k - 1 {
        let drops: Vec<f64> = (0..k - 1).filter(|&l| l >= j).map(|l| acc[l][j] - acc[k - 1][j]).collect();
        total += drops.into_iter().fold(f64::NEG_INFINITY, f64::max);
    }
    total / (k - 1) as f64
}

#[test]
fn metric_formulas_match_hand_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.gen_range(1..=8);
        let rows: Vec<Vec<f64>> = (1..=n).map(|k| (0..k).map(|_| rng.gen::<f64>()).collect()).collect();
        let acc: AccuracyMatrix = rows.iter().cloned().map(Some).collect();
        for k in 1..=n {
            assert!((avg_incremental_accuracy(&acc, k).unwrap() - hand_a(&rows, k)).abs() < 1e-12);
            if k > 1 {
                assert!((avg_forgetting(&acc, k).unwrap() - hand_f(&rows, k)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn forgetting_of_a_known_matrix() {
    let acc: AccuracyMatrix = vec![Some(vec![0.9]), Some(vec![0.6, 0.8]), Some(vec![0.5, 0.7, 0.9])];
    assert!((avg_incremental_accuracy(&acc, 3).unwrap() - 0.7).abs() < 1e-12);
    assert!((avg_forgetting(&acc, 3).unwrap() - (0.4 + 0.1) / 2.0).abs() < 1e-12);
}

#[test]
fn run_files_round_trip() {
    let seq = split_tasks(&clusters(4, 12), 2, None, &[], 0).unwrap();
    let mut cfg = quick(Method::EFt);
    cfg.sdc = true;
    let r = run_sequence(&cfg, &small_model(), &seq).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run_files(dir.path(), &r).unwrap();
    assert_eq!(read_a_matrix(&dir.path().join("a_matrix.csv")).unwrap(), r.accuracy);
    assert_eq!(read_record(dir.path()).unwrap(), r);
    let classes: Vec<ClassId> = r.final_prototypes.as_ref().unwrap().classes();
    assert_eq!(classes.len(), 4);
}

#[test]
fn pre_substitute_pretrains_then_freezes() {
    let data = clusters(6, 9);
    let seq = split_tasks(&data, 2, None, &[4, 5], 0).unwrap();
    let mut seen: Vec<Vec<u64>> = Vec::new();
    let r = run_sequence_observed(&quick(Method::EPreSubstitute), &small_model(), &seq, |ev| {
        seen.push(bits(ev.learner.embedding().unwrap().params()));
    })
    .unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[0], seen[1]);
    assert!(r.task_stats.iter().all(|s| s.steps == 0));

    let one = split_tasks(&data, 5, None, &[5], 0).unwrap();
    let err = run_sequence(&quick(Method::EPreSubstitute), &small_model(), &one).unwrap_err();
    assert!(err.to_string().contains("dataset.held_out_classes"), "{err}");
    let none = split_tasks(&data, 2, None, &[], 0).unwrap();
    assert!(run_sequence(&quick(Method::EPreSubstitute), &small_model(), &none).is_err());
}
