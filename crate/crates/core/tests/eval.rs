use bipo_core::eval::*;
use bipo_core::motion::corpus::{generate_corpus, vocabulary, CorpusConfig, Split};
use bipo_core::t2m::TextVocab;
use bipo_tensor::Rng;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn random_set(n: usize, d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.normal()).collect()).collect()
}

/// Random orthogonal matrix from Gram–Schmidt on a Gaussian matrix.
fn orthogonal(d: usize, rng: &mut Rng) -> DMatrix<f64> {
    let mut q: Vec<DVector<f64>> = Vec::new();
    while q.len() < d {
        let mut v = DVector::from_fn(d, |_, _| rng.normal());
        for u in &q {
            v -= u * u.dot(&v);
        }
        if v.norm() > 1e-6 {
            q.push(v.normalize());
        }
    }
    DMatrix::from_columns(&q)
}

#[test]
fn fid_of_a_set_with_itself_is_zero() {
    let mut rng = Rng::new(1);
    let x = random_set(200, 16, &mut rng);
    assert!(fid(&x, &x).unwrap().value < 1e-6);
}

#[test]
fn fid_mean_shift_is_squared_distance() {
    let mut rng = Rng::new(2);
    let d = DVector::from_vec(vec![0.5, -1.0, 2.0]);
    let x = random_set(100, 3, &mut rng);
    let y: Vec<Vec<f64>> = x.iter().map(|r| r.iter().zip(d.iter()).map(|(a, b)| a + b).collect()).collect();
    assert!((fid(&x, &y).unwrap().value - d.norm_squared()).abs() < 1e-8);

    let id = |mean: DVector<f64>| Gaussian {
        cov: DMatrix::identity(3, 3),
        mean,
        regularized: false,
    };
    let f = fid_from_gaussians(&id(DVector::zeros(3)), &id(d.clone())).unwrap();
    assert!((f.value - d.norm_squared()).abs() < 1e-8);
}

#[test]
fn fid_one_dimensional_variances() {
    let g = |v: f64| Gaussian {
        mean: DVector::zeros(1),
        cov: DMatrix::from_element(1, 1, v),
        regularized: false,
    };
    assert!((fid_from_gaussians(&g(4.0), &g(1.0)).unwrap().value - 1.0).abs() < 1e-8);
    // Halving every sample halves the mean and quarters the variance:
    // (m/2)² + (√a − √(a/4))² = (m² + a) / 4.
    let mut rng = Rng::new(3);
    let x = random_set(50, 1, &mut rng);
    let y: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] / 2.0]).collect();
    let g = gaussian(&x).unwrap();
    let (m, a) = (g.mean[0], g.cov[(0, 0)]);
    assert!((fid(&x, &y).unwrap().value - (m * m + a) / 4.0).abs() < 1e-8);
}

#[test]
fn fid_with_shared_eigenbasis_matches_closed_form() {
    let mut rng = Rng::new(4);
    for d in [2, 5, 12] {
        let q = orthogonal(d, &mut rng);
        let a: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.1, 3.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.1, 3.0)).collect();
        let shift = DVector::from_fn(d, |_, _| rng.normal());
        let cov = |e: &[f64]| &q * DMatrix::from_diagonal(&DVector::from_row_slice(e)) * q.transpose();
        let ga = Gaussian {
            mean: DVector::zeros(d),
            cov: cov(&a),
            regularized: false,
        };
        let gb = Gaussian {
            mean: shift.clone(),
            cov: cov(&b),
            regularized: false,
        };
        let expected: f64 = shift.norm_squared() + a.iter().zip(&b).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>();
        let f = fid_from_gaussians(&ga, &gb).unwrap().value;
        assert!((f - expected).abs() < 1e-8, "{f} vs {expected}");
        let back = fid_from_gaussians(&gb, &ga).unwrap().value;
        assert!((f - back).abs() < 1e-8);
    }
}

#[test]
fn matrix_sqrt_of_random_psd() {
    let mut rng = Rng::new(5);
    for d in [1, 4, 20] {
        let g = DMatrix::from_fn(d, d + 2, |_, _| rng.normal());
        let a = &g * g.transpose();
        let b = matrix_sqrt_psd(&a).unwrap();
        assert!((&b * &b - &a).norm() / a.norm() < 1e-8);
    }
}

fn naive_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

#[test]
fn metrics_match_naive_loops() {
    let mut rng = Rng::new(6);
    for trial in 0..10 {
        let n = 32 + rng.below(33);
        let d = 1 + rng.below(8);
        let text = random_set(n, d, &mut rng);
        let motion: Vec<Vec<f64>> = text
            .iter()
            .map(|t| t.iter().map(|v| v + 0.8 * rng.normal()).collect())
            .collect();

        // R-precision: sort each pool by distance; ties keep the true text first.
        let pools = draw_pools(n, 32, &mut Rng::new(trial)).unwrap();
        let fast = r_precision_with_pools(&text, &motion, &pools, 3).unwrap();
        let mut hits = [0usize; 3];
        for i in 0..n {
            let mut scored: Vec<(f64, usize)> = pools[i].iter().map(|&j| (naive_distance(&motion[i], &text[j]), j)).collect();
            scored.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| (x.1 != i).cmp(&(y.1 != i))));
            let rank = scored.iter().position(|&(_, j)| j == i).unwrap();
            for (k, h) in hits.iter_mut().enumerate() {
                if rank <= k {
                    *h += 1;
                }
            }
        }
        for k in 0..3 {
            assert_eq!(fast[k], hits[k] as f64 / n as f64);
        }
        let via_rng = r_precision(&text, &motion, 3, &mut Rng::new(trial)).unwrap();
        assert_eq!(via_rng, fast);

        let mut mm = 0.0;
        for i in 0..n {
            mm += naive_distance(&text[i], &motion[i]);
        }
        assert!((mm_dist(&text, &motion).unwrap() - mm / n as f64).abs() < 1e-12);

        let s_dis = n / 2;
        let div = diversity(&motion, s_dis, &mut Rng::new(100 + trial)).unwrap();
        let idx = Rng::new(100 + trial).sample_distinct(n, 2 * s_dis);
        let mut total = 0.0;
        for p in 0..s_dis {
            total += naive_distance(&motion[idx[p]], &motion[idx[s_dis + p]]);
        }
        assert!((div - total / s_dis as f64).abs() < 1e-12);

        let groups: Vec<Vec<Vec<f64>>> = (0..3).map(|_| random_set(30, d, &mut rng)).collect();
        let mmod = mmodality(&groups, 10, &mut Rng::new(200 + trial)).unwrap();
        let mut draw = Rng::new(200 + trial);
        let mut per_text = 0.0;
        for g in &groups {
            let idx = draw.sample_distinct(30, 20);
            let mut s = 0.0;
            for p in 0..10 {
                s += naive_distance(&g[idx[p]], &g[idx[10 + p]]);
            }
            per_text += s / 10.0;
        }
        assert!((mmod - per_text / 3.0).abs() < 1e-12);
    }
}

#[test]
fn random_features_give_chance_r_precision() {
    let mut rng = Rng::new(7);
    let trials = 1000;
    let mut per_k = vec![Vec::with_capacity(trials); 3];
    for _ in 0..trials {
        let text = random_set(32, 4, &mut rng);
        let motion = random_set(32, 4, &mut rng);
        let r = r_precision(&text, &motion, 3, &mut rng).unwrap();
        for k in 0..3 {
            per_k[k].push(r[k]);
        }
    }
    for (k, v) in per_k.iter().enumerate() {
        let mean = v.iter().sum::<f64>() / trials as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
        let expected = (k + 1) as f64 / 32.0;
        assert!((mean - expected).abs() < 3.0 * sd / (trials as f64).sqrt(), "R@{}: {mean} vs {expected}", k + 1);
    }
}

#[test]
fn diversity_and_mmodality_of_identical_features_are_zero() {
    let f = vec![vec![1.5, -2.0]; 40];
    assert_eq!(diversity(&f, 20, &mut Rng::new(0)).unwrap(), 0.0);
    assert_eq!(mmodality(&[f.clone(), f], 10, &mut Rng::new(0)).unwrap(), 0.0);
    assert!(diversity(&vec![vec![0.0]; 10], 6, &mut Rng::new(0)).is_err());
    assert!(mmodality(&[vec![vec![0.0]; 19]], 10, &mut Rng::new(0)).is_err());
}

#[test]
fn confidence_intervals_shrink_with_repetitions() {
    let mut rng = Rng::new(8);
    let draws: Vec<f64> = (0..40).map(|_| rng.normal()).collect();
    let ten = summarize(&draws[..10]);
    let forty = summarize(&draws);
    assert!(forty.ci95 < ten.ci95);
}

proptest! {
    #[test]
    fn r_precision_is_monotone(seed in 0u64..5000, n in 32usize..48, d in 1usize..5) {
        let mut rng = Rng::new(seed);
        let text = random_set(n, d, &mut rng);
        let motion = random_set(n, d, &mut rng);
        let r = r_precision(&text, &motion, 3, &mut rng).unwrap();
        prop_assert!(r[0] <= r[1] && r[1] <= r[2]);
    }

    #[test]
    fn fid_is_symmetric_and_nonnegative(seed in 0u64..5000) {
        let mut rng = Rng::new(seed);
        let x = random_set(30, 4, &mut rng);
        let y: Vec<Vec<f64>> = random_set(40, 4, &mut rng).into_iter().map(|r| r.iter().map(|v| 2.0 * v + 1.0).collect()).collect();
        let a = fid(&x, &y).unwrap().value;
        let b = fid(&y, &x).unwrap().value;
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-8 * (1.0 + a));
    }
}

#[test]
fn extractors_separate_matched_pairs() {
    let corpus = generate_corpus(
        11,
        &CorpusConfig {
            n_sequences: 240,
            ..Default::default()
        },
    )
    .unwrap();
    let train = corpus.training_pairs();
    let test: Vec<_> = corpus.split(Split::Test).into_iter().cloned().collect();
    let config = ExtractorConfig {
        steps: 150,
        ..Default::default()
    };
    let vocab = TextVocab::new(vocabulary()).unwrap();
    let (x, report) = train_extractors(&train, &test, vocab.clone(), &config, 3).unwrap();
    assert!(report.final_loss < report.init_loss);
    assert!(report.matched_distance < report.mismatched_distance, "{report:?}");

    let texts: Vec<Vec<String>> = test.iter().map(|p| p.text.clone()).collect();
    let motions: Vec<_> = test.iter().map(|p| &p.motion).collect();
    let tf = x.text_features(&texts).unwrap();
    let mf = x.motion_features(&motions).unwrap();
    assert!(tf.iter().chain(&mf).all(|f| f.len() == 32));

    // Shuffling the pairing must worsen the matched distance.
    let mut order: Vec<usize> = (0..mf.len()).collect();
    Rng::new(5).shuffle(&mut order);
    let shuffled: Vec<Vec<f64>> = order.iter().map(|&i| mf[i].clone()).collect();
    assert!(mm_dist(&tf, &mf).unwrap() < mm_dist(&tf, &shuffled).unwrap());

    let (again, _) = train_extractors(&train, &test, vocab, &config, 3).unwrap();
    assert_eq!(again.motion_features(&motions).unwrap(), mf);

    let restored = FeatureExtractors::from_checkpoint(&x.to_checkpoint()).unwrap();
    assert_eq!(restored.text_features(&texts).unwrap(), tf);
}
