mod common;

use common::*;
use driftlab::data::gen_gaussian_clusters;
use driftlab::models::EmbeddingModel;
use driftlab::nn::Tensor;
use driftlab::sdc::*;
use driftlab::Error;
use proptest::prelude::*;
use rand::Rng;

fn field(pos: &[Vec<f64>], delta: &[Vec<f64>]) -> DriftField {
    let before = Tensor::from_rows(pos).unwrap();
    let after: Vec<Vec<f64>> = pos.iter().zip(delta).map(|(p, d)| p.iter().zip(d).map(|(a, b)| a + b).collect()).collect();
    DriftField::from_endpoints(before, &Tensor::from_rows(&after).unwrap(), vec![0; pos.len()]).unwrap()
}

fn random_points(r: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| r.gen_range(-scale..scale)).collect()).collect()
}

fn brute_force(pos: &[Vec<f64>], delta: &[Vec<f64>], q: &[f64], sigma: f64) -> Vec<f64> {
    let mut num = vec![0.0; q.len()];
    let mut den = 0.0;
    for i in 0..pos.len() {
        let mut sq = 0.0;
        for k in 0..q.len() {
            sq += (pos[i][k] - q[k]).powi(2);
        }
        let w = (-sq / (2.0 * sigma * sigma)).exp();
        den += w;
        for k in 0..q.len() {
            num[k] += w * delta[i][k];
        }
    }
    num.iter().map(|v| v / den).collect()
}

#[test]
fn compute_prototypes_examples() {
    let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![3.0, 3.0]]).unwrap();
    let p = compute_prototypes(&z, &[0, 0, 4], &[0, 4]).unwrap();
    assert_eq!(p[&0], vec![0.5, 0.5]);
    assert_eq!(p[&4], vec![3.0, 3.0]);
    assert!(matches!(compute_prototypes(&z, &[0, 0, 4], &[0, 1]), Err(Error::MissingData(_))));
}

#[test]
fn compute_prototypes_matches_groupby() {
    let mut r = rng(4);
    for _ in 0..20 {
        let n = r.gen_range(5..40);
        let z = uniform(&mut r, &[n, 3], -1.0, 1.0);
        let mut labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..4)).collect();
        labels[..4].copy_from_slice(&[0, 1, 2, 3]);
        let p = compute_prototypes(&z, &labels, &[0, 1, 2, 3]).unwrap();
        for c in 0..4 {
            let members: Vec<&[f64]> = (0..n).filter(|&i| labels[i] == c).map(|i| z.row(i)).collect();
            for k in 0..3 {
                let mean = members.iter().map(|m| m[k]).sum::<f64>() / members.len() as f64;
                assert!((p[&c][k] - mean).abs() < 1e-12);
            }
        }
    }
}

fn book(protos: &[Vec<f64>]) -> PrototypeBook {
    let mut b = PrototypeBook::new(protos[0].len());
    for (c, p) in protos.iter().enumerate() {
        b.insert(c, p.clone(), 0).unwrap();
    }
    b
}

#[test]
fn ncm_examples() {
    let b = book(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
    assert_eq!(ncm_classify(&z, &b).unwrap(), vec![0, 1, 0]);
    assert!(matches!(ncm_classify(&z, &PrototypeBook::new(2)), Err(Error::State(_))));
}

#[test]
fn ncm_matches_distance_matrix_argmin() {
    let mut r = rng(9);
    for _ in 0..20 {
        let k = r.gen_range(1..8);
        let protos = random_points(&mut r, k, 4, 1.0);
        let b = book(&protos);
        let z = uniform(&mut r, &[30, 4], -1.0, 1.0);
        let expected: Vec<usize> = z
            .rows()
            .map(|q| {
                let d: Vec<f64> = protos.iter().map(|p| dist(p, q)).collect();
                (0..d.len()).fold(0, |best, i| if d[i] < d[best] { i } else { best })
            })
            .collect();
        assert_eq!(ncm_classify(&z, &b).unwrap(), expected);
    }
}

#[test]
fn single_point_at_query_returns_its_drift() {
    let f = field(&[vec![0.2, 0.3]], &[vec![0.5, -0.1]]);
    let out = interpolate_drift(&f, &[0.2, 0.3], &KernelConfig::default()).unwrap();
    assert_eq!(out.drift, f.displacements().row(0));
    assert_eq!(out.total_weight, 1.0);
}

#[test]
fn interpolation_matches_brute_force() {
    let mut r = rng(1);
    for _ in 0..100 {
        let pos = random_points(&mut r, 5, 2, 1.0);
        let delta = random_points(&mut r, 5, 2, 0.5);
        let q: Vec<f64> = (0..2).map(|_| r.gen_range(-1.0..1.0)).collect();
        let f = field(&pos, &delta);
        let cfg = KernelConfig::default();
        let out = interpolate_drift(&f, &q, &cfg).unwrap();
        if out.degenerate {
            continue;
        }
        let expected = brute_force(&pos, &f_deltas(&f), &q, 0.3);
        for (a, b) in out.drift.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

fn f_deltas(f: &DriftField) -> Vec<Vec<f64>> {
    f.displacements().rows().map(<[f64]>::to_vec).collect()
}

#[test]
fn degenerate_mass_gives_zero_drift() {
    let f = field(&[vec![0.0, 0.0]], &[vec![1.0, 1.0]]);
    let out = interpolate_drift(&f, &[5.0, 5.0], &KernelConfig::default()).unwrap();
    assert!(out.degenerate);
    assert_eq!(out.drift, vec![0.0, 0.0]);
}

#[test]
fn bad_kernel_or_empty_field_rejected() {
    let f = field(&[vec![0.0]], &[vec![1.0]]);
    let bad = KernelConfig { sigma: 0.0, ..KernelConfig::default() };
    assert!(interpolate_drift(&f, &[0.0], &bad).is_err());
    let empty = DriftField::from_endpoints(Tensor::zeros(&[0, 1]), &Tensor::zeros(&[0, 1]), vec![]).unwrap();
    assert!(interpolate_drift(&empty, &[0.0], &KernelConfig::default()).is_err());
}

#[test]
fn sigma_limits() {
    let mut r = rng(2);
    for _ in 0..20 {
        let pos = random_points(&mut r, 6, 3, 1.0);
        let delta = random_points(&mut r, 6, 3, 1.0);
        let f = field(&pos, &delta);
        let deltas = f_deltas(&f);
        let wide = interpolate_drift(&f, &[0.1, 0.2, 0.3], &KernelConfig { sigma: 1e6, ..KernelConfig::default() }).unwrap();
        for k in 0..3 {
            let mean = deltas.iter().map(|d| d[k]).sum::<f64>() / 6.0;
            assert!((wide.drift[k] - mean).abs() < 1e-8);
        }
        let near: Vec<f64> = pos[2].iter().map(|v| v + 1e-4).collect();
        let narrow = interpolate_drift(&f, &near, &KernelConfig { sigma: 1e-3, ..KernelConfig::default() }).unwrap();
        assert!(!narrow.degenerate);
        for k in 0..3 {
            assert!((narrow.drift[k] - deltas[2][k]).abs() < 1e-8);
        }
    }
}

#[test]
fn compensate_moves_only_old_prototypes() {
    let mut b = PrototypeBook::new(2);
    b.insert(0, vec![0.0, 0.0], 0).unwrap();
    b.insert(1, vec![1.0, 0.0], 1).unwrap();
    let f = field(&[vec![0.0, 0.0], vec![1.0, 0.0]], &[vec![0.1, 0.0], vec![0.1, 0.0]]);
    let applied = compensate(&mut b, &f, &KernelConfig::default(), 1).unwrap();
    assert_eq!(applied.len(), 1);
    assert!((b.get(0).unwrap().vector[0] - 0.1).abs() < 1e-15);
    assert_eq!(b.get(1).unwrap().vector, vec![1.0, 0.0]);
}

#[test]
fn zero_field_leaves_book_unchanged() {
    let mut b = book(&[vec![0.3, 0.4], vec![-0.2, 0.1]]);
    let before = b.clone();
    let f = field(&[vec![0.0, 0.0], vec![0.5, 0.5]], &[vec![0.0, 0.0], vec![0.0, 0.0]]);
    compensate(&mut b, &f, &KernelConfig::default(), 1).unwrap();
    assert_eq!(b, before);
}

#[test]
fn two_step_recursion_unrolls() {
    let mut r = rng(6);
    let cfg = KernelConfig::default();
    let mu = vec![0.1, -0.2];
    let (p1, d1) = (random_points(&mut r, 8, 2, 0.6), random_points(&mut r, 8, 2, 0.3));
    let (p2, d2) = (random_points(&mut r, 8, 2, 0.6), random_points(&mut r, 8, 2, 0.3));
    let (f1, f2) = (field(&p1, &d1), field(&p2, &d2));
    let mut b = PrototypeBook::new(2);
    b.insert(0, mu.clone(), 0).unwrap();
    compensate(&mut b, &f1, &cfg, 1).unwrap();
    compensate(&mut b, &f2, &cfg, 2).unwrap();
    let step1 = brute_force(&p1, &f_deltas(&f1), &mu, 0.3);
    let mid: Vec<f64> = mu.iter().zip(&step1).map(|(a, b)| a + b).collect();
    let step2 = brute_force(&p2, &f_deltas(&f2), &mid, 0.3);
    let entry = b.get(0).unwrap();
    for k in 0..2 {
        assert!((entry.vector[k] - (mid[k] + step2[k])).abs() < 1e-12);
        assert!((entry.compensation[k] - (step1[k] + step2[k])).abs() < 1e-12);
    }
    assert_eq!(entry.origin, mu);
}

#[test]
fn collect_drift_endpoints() {
    let data = gen_gaussian_clusters(2, 5, 4, 0.3, 0).unwrap();
    let model = EmbeddingModel::mlp(4, &[16], 3, 1).unwrap();
    let snap = model.snapshot(0);
    let f = collect_drift(&snap, &model, &data).unwrap();
    assert_eq!(f.len(), data.len());
    assert!(f.displacements().data().iter().all(|v| *v == 0.0));
    let mut moved = model.clone();
    moved.params_mut().get_mut(0).data_mut()[0] += 0.5;
    let f = collect_drift(&snap, &moved, &data).unwrap();
    assert_eq!(f.positions(), &snap.embed(&data.to_tensor()).unwrap());
    let other = EmbeddingModel::mlp(4, &[8], 3, 1).unwrap();
    assert!(matches!(collect_drift(&snap, &other, &data), Err(Error::Architecture(_))));
}

#[test]
fn true_drift_examples() {
    let mut r = rng(3);
    let z = uniform(&mut r, &[12, 2], -1.0, 1.0);
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let means = compute_prototypes(&z, &labels, &[0, 1, 2]).unwrap();
    let mut b = PrototypeBook::new(2);
    for (c, m) in &means {
        b.insert(*c, m.clone(), 0).unwrap();
    }
    for d in true_drift(&b, &z, &labels).unwrap().values() {
        assert!(d.iter().all(|v| v.abs() < 1e-15));
    }
    let shifted = Tensor::new(vec![12, 2], z.data().chunks(2).flat_map(|r| [r[0] + 0.3, r[1] - 0.1]).collect()).unwrap();
    for (c, d) in true_drift(&b, &shifted, &labels).unwrap() {
        assert!((d[0] - 0.3).abs() < 1e-12 && (d[1] + 0.1).abs() < 1e-12, "class {c}");
        let members: Vec<usize> = (0..12).filter(|&i| labels[i] == c).collect();
        let brute = members.iter().map(|&i| shifted.row(i)[0]).sum::<f64>() / members.len() as f64 - means[&c][0];
        assert!((d[0] - brute).abs() < 1e-12);
    }
    assert!(matches!(true_drift(&b, &z.select_rows(&[0, 1]).unwrap(), &[0, 1]), Err(Error::MissingData(_))));
}

proptest! {
    #[test]
    fn constant_field_gives_constant(seed in 0u64..10_000, sigma in 0.05f64..5.0) {
        let mut r = rng(seed);
        let pos = random_points(&mut r, 7, 3, 1.0);
        let v = vec![0.3, -0.7, 0.1];
        let f = field(&pos, &vec![v.clone(); 7]);
        let q: Vec<f64> = (0..3).map(|_| r.gen_range(-0.5..0.5)).collect();
        let out = interpolate_drift(&f, &q, &KernelConfig { sigma, ..KernelConfig::default() }).unwrap();
        prop_assume!(!out.degenerate);
        for k in 0..3 {
            prop_assert!((out.drift[k] - f_deltas(&f)[0][k]).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_translation_invariance(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let pos = random_points(&mut r, 6, 2, 1.0);
        let delta = random_points(&mut r, 6, 2, 0.4);
        let q = vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        let t = vec![r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)];
        let moved: Vec<Vec<f64>> = pos.iter().map(|p| vec![p[0] + t[0], p[1] + t[1]]).collect();
        let cfg = KernelConfig::default();
        let a = interpolate_drift(&field(&pos, &delta), &q, &cfg).unwrap();
        let b = interpolate_drift(&field(&moved, &delta), &[q[0] + t[0], q[1] + t[1]], &cfg).unwrap();
        prop_assume!(!a.degenerate);
        for k in 0..2 {
            prop_assert!((a.drift[k] - b.drift[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn ncm_translation_invariance(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let protos = random_points(&mut r, 4, 3, 1.0);
        let t: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
        let z = uniform(&mut r, &[10, 3], -1.0, 1.0);
        let shift = |p: &[f64]| p.iter().zip(&t).map(|(a, b)| a + b).collect::<Vec<f64>>();
        let moved_book = book(&protos.iter().map(|p| shift(p)).collect::<Vec<_>>());
        let moved_z = Tensor::from_rows(&z.rows().map(shift).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(ncm_classify(&z, &book(&protos)).unwrap(), ncm_classify(&moved_z, &moved_book).unwrap());
    }
}
