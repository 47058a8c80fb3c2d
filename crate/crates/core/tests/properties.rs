use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use qwem_core::corpus::{build_vocabulary, count_skipgrams, CountConfig, SkipGramCounter};
use qwem_core::dynamics::{characteristic_time, integrate_flow};
use qwem_core::eval::{residual_winner, Similarity};
use qwem_core::spectral::eigh;
use qwem_core::target::{build_mstar_from, compute_psi, frobenius_loss, pmi_series_residual, quartic_loss_expectation};
use qwem_core::taskvec::{task_vectors_from_ids, DEFAULT_RANK_TOL};
use qwem_core::trainers::{loss_and_grad, PairBatch};
use qwem_core::{
    analogy_accuracy, factorize_target, mp_fit, pc_neighbors, requiv_distance, signal_in_mean, spearman, spike_snr,
    AnalogySet, EmbeddingMatrix, LossKind, Normalization, PairDistribution, Provenance, Reweight, SimilaritySet,
    TargetMatrix, TaskVectorSet, TopK, Vocabulary,
};

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    gaussian(n, n, 1.0, rng).qr().q()
}

fn words(v: usize) -> Vec<String> {
    (0..v).map(|i| format!("w{i}")).collect()
}

fn vocab(v: usize) -> Vocabulary {
    let entries = words(v).into_iter().enumerate().map(|(i, w)| (w, 1000 - i as u64)).collect();
    Vocabulary::from_entries(entries, 1_000_000).unwrap()
}

/// Target with the given eigenvalues in a random basis.
fn planted_target(lambdas: &[f64], v: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = orthogonal(v, rng);
    let mut diag = DVector::zeros(v);
    for (k, &l) in lambdas.iter().enumerate() {
        diag[k] = l;
    }
    let m = &q * DMatrix::from_diagonal(&diag) * q.transpose();
    (&m + m.transpose()) * 0.5
}

fn docs_strategy() -> impl Strategy<Value = Vec<Vec<String>>> {
    prop::collection::vec(prop::collection::vec(0u8..8, 2..16), 1..12)
        .prop_map(|docs| docs.into_iter().map(|d| d.into_iter().map(|t| format!("t{t}")).collect()).collect())
}

fn distinct(docs: &[Vec<String>]) -> usize {
    docs.iter().flatten().collect::<std::collections::HashSet<_>>().len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_are_symmetric_and_normalized(docs in docs_strategy()) {
        let vocab = build_vocabulary(&docs, distinct(&docs), 0).unwrap();
        let stats = count_skipgrams(&docs, &vocab, CountConfig::new(4)).unwrap();
        let v = vocab.len() as u32;
        let unigram: f64 = (0..v).map(|i| stats.p_unigram(i)).sum();
        prop_assert!((unigram - 1.0).abs() <= 1e-12);
        for i in 0..v {
            for j in 0..v {
                prop_assert_eq!(stats.pair_count(i, j), stats.pair_count(j, i));
            }
        }
        let joint: f64 = (0..v).flat_map(|i| (0..v).map(move |j| (i, j))).map(|(i, j)| stats.p_joint(i, j)).sum();
        prop_assert!((joint - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn sharded_counting_matches_single_pass(docs in docs_strategy(), shards in 1usize..5) {
        let vocab = build_vocabulary(&docs, distinct(&docs), 0).unwrap();
        let config = CountConfig::new(4);
        let whole = count_skipgrams(&docs, &vocab, config).unwrap();
        prop_assert_eq!(&whole, &count_skipgrams(&docs, &vocab, config).unwrap());

        let chunk = docs.len().div_ceil(shards);
        let counters: Vec<SkipGramCounter> = docs
            .chunks(chunk)
            .map(|part| {
                let mut c = SkipGramCounter::new(vocab.len(), config);
                for d in part {
                    c.add_document(&vocab, d);
                }
                c
            })
            .collect();
        let merged = counters.into_iter().rev().reduce(SkipGramCounter::merge).unwrap();
        prop_assert_eq!(&whole, &merged.finish(vocab.clone()).unwrap());

        let stats: Vec<_> = docs.chunks(chunk).map(|part| count_skipgrams(part, &vocab, config).unwrap()).collect();
        let merged = stats.into_iter().reduce(|a, b| a.merge(b).unwrap()).unwrap();
        prop_assert_eq!(&whole, &merged);
    }

    #[test]
    fn setting1_target_is_bounded_with_unit_weights(docs in docs_strategy(), seed in any::<u64>()) {
        let vocab = build_vocabulary(&docs, distinct(&docs), 0).unwrap();
        let stats = count_skipgrams(&docs, &vocab, CountConfig::new(4)).unwrap();
        let dist = PairDistribution::from_stats(&stats, 64).unwrap();
        let target = build_mstar_from(&dist, &Reweight::Setting1).unwrap();
        prop_assert!(target.matrix().iter().all(|x| (-2.0..=2.0).contains(x)));
        let g = target.g().unwrap();
        prop_assert!((g - 1.0).abs() <= 4.0 * f64::EPSILON, "g = {g}");

        let psi = compute_psi(&Reweight::Setting1, &dist).unwrap();
        let v = dist.vocab_size();
        for i in 0..v {
            for j in 0..v {
                if dist.joint()[(i, j)] + dist.unigram()[i] * dist.unigram()[j] > 0.0 {
                    let (a, b) = psi.masses(i, j);
                    prop_assert!((a + b - 1.0).abs() <= 4.0 * f64::EPSILON);
                }
            }
        }

        // The expectation form and the Frobenius form differ by a constant.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(1..=4);
        let gap = |w: &DMatrix<f64>| {
            quartic_loss_expectation(&psi, w).unwrap() - frobenius_loss(target.matrix(), 1.0, w).unwrap()
        };
        let w1 = gaussian(v, d, 0.7, &mut rng);
        let w2 = gaussian(v, d, 0.7, &mut rng);
        prop_assert!((gap(&w1) - gap(&w2)).abs() <= 1e-10, "{} vs {}", gap(&w1), gap(&w2));
    }

    #[test]
    fn series_residual_is_seventh_order(x in -0.5f64..0.5) {
        prop_assume!(x != 0.0);
        let ratio = pmi_series_residual(x).unwrap() / x.powi(7);
        // Tail of 2·atanh(x/2) from x⁷/448 on, bounded by its geometric majorant.
        let lead = 1.0 / 448.0;
        prop_assert!(ratio >= lead * (1.0 - 1e-12));
        prop_assert!(ratio <= lead / (1.0 - x * x / 4.0) * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spectral_factor_beats_random_rank_d(seed in any::<u64>(), v in 3usize..=10, d_frac in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 1 + ((v - 1) as f64 * d_frac) as usize;
        let d = d.min(v - 1);
        let a = gaussian(v, v, 1.0, &mut rng);
        let m = &a * a.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let w = factorize_target(&TargetMatrix::synthetic(m.clone()).unwrap(), d).unwrap();
        let best = (w.matrix() * w.matrix().transpose() - &m).norm_squared();
        for _ in 0..10_000 {
            let r = gaussian(v, d, 1.0, &mut rng);
            let g = &r * r.transpose();
            // Optimal non-negative scale of the random Gram against M.
            let c = (g.dot(&m) / g.norm_squared()).max(0.0);
            let err = (g * c - &m).norm_squared();
            prop_assert!(best <= err * (1.0 + 1e-12), "{best} > {err}");
        }
    }

    #[test]
    fn requiv_is_a_pseudometric(seed in any::<u64>(), v in 2usize..8, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(v, d, 1.0, &mut rng);
        let b = gaussian(v, d, 1.0, &mut rng);
        let c = gaussian(v, d, 1.0, &mut rng);
        let dist = |x: &DMatrix<f64>, y: &DMatrix<f64>| requiv_distance(x, y).unwrap();
        prop_assert!((dist(&a, &b) - dist(&b, &a)).abs() <= 1e-9);
        prop_assert!(dist(&a, &c) <= dist(&a, &b) + dist(&b, &c) + 1e-9);
        prop_assert!(dist(&a, &(&a * orthogonal(d, &mut rng))) <= 1e-9);
        prop_assert!(dist(&a, &b) > 1e-6);
    }

    #[test]
    fn eigh_is_bitwise_repeatable(seed in any::<u64>(), v in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(v, v, 1.0, &mut rng);
        let m = (&a + a.transpose()) * 0.5;
        let first = eigh(&m, TopK::All).unwrap();
        let second = eigh(&m, TopK::All).unwrap();
        prop_assert_eq!(first.eigenvalues(), second.eigenvalues());
        prop_assert_eq!(first.eigenvectors(), second.eigenvectors());
    }

    #[test]
    fn qwem_and_sgns_gradients_match_finite_differences(seed in any::<u64>(), v in 2usize..=8, d in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = gaussian(v, d, 0.8, &mut rng);
        let mut pos = PairBatch::default();
        let mut neg = PairBatch::default();
        for _ in 0..6 {
            pos.push(rng.random_range(0..v as u32), rng.random_range(0..v as u32), rng.random_range(0.1..1.0));
            neg.push(rng.random_range(0..v as u32), rng.random_range(0..v as u32), rng.random_range(0.1..1.0));
        }
        for loss in [LossKind::Qwem, LossKind::Sgns] {
            let (_, g) = loss_and_grad(&w, loss, &pos, &neg).unwrap();
            let f = |w: &DMatrix<f64>| loss_and_grad(w, loss, &pos, &neg).unwrap().0;
            let h = 1e-5;
            for r in 0..v {
                for c in 0..d {
                    let mut up = w.clone();
                    up[(r, c)] += h;
                    let mut down = w.clone();
                    down[(r, c)] -= h;
                    let fd = (f(&up) - f(&down)) / (2.0 * h);
                    prop_assert!((fd - g[(r, c)]).abs() <= 1e-6 * g[(r, c)].abs().max(1.0), "{fd} vs {}", g[(r, c)]);
                }
                // A whole-row perturbation moves the loss by the row's gradient.
                let dir = gaussian(1, d, 1.0, &mut rng);
                let mut up = w.clone();
                let mut down = w.clone();
                for c in 0..d {
                    up[(r, c)] += h * dir[c];
                    down[(r, c)] -= h * dir[c];
                }
                let fd = (f(&up) - f(&down)) / (2.0 * h);
                let an: f64 = (0..d).map(|c| g[(r, c)] * dir[c]).sum();
                prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{fd} vs {an}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn modes_saturate_in_eigenvalue_order(seed in any::<u64>(), top in 1.0f64..3.0, r1 in 0.3f64..0.7, r2 in 0.3f64..0.7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lambdas = [top, top * r1, top * r1 * r2];
        let m = planted_target(&[lambdas[0], lambdas[1], lambdas[2], 0.05], 6, &mut rng);
        let target = TargetMatrix::synthetic(m).unwrap();
        let w0 = gaussian(6, 3, 1e-4, &mut rng);
        let end = 3.0 * characteristic_time(lambdas[2], 1e-8).unwrap();
        let times: Vec<f64> = (1..=300).map(|k| end * k as f64 / 300.0).collect();
        let trace = integrate_flow(&target, &w0, &times, None).unwrap();
        let half: Vec<f64> = trace.half_saturation_times(&lambdas).into_iter().map(Option::unwrap).collect();
        prop_assert!(half[0] < half[1] && half[1] < half[2], "{half:?}");
    }

    #[test]
    fn doubling_eigenvalues_halves_time(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = planted_target(&[2.0, 1.0, 0.4, 0.1], 5, &mut rng);
        let w0 = gaussian(5, 2, 1e-3, &mut rng);
        let end = 2.0 * characteristic_time(1.0, 1e-6).unwrap();
        let times: Vec<f64> = (1..=50).map(|k| end * k as f64 / 50.0).collect();
        let halved: Vec<f64> = times.iter().map(|t| t / 2.0).collect();
        let base = integrate_flow(&TargetMatrix::synthetic(m.clone()).unwrap(), &w0, &times, None).unwrap();
        // With M → 2M the flow maps W(t) to √2·W(2t), so s² doubles.
        let fast = integrate_flow(&TargetMatrix::synthetic(&m * 2.0).unwrap(), &(&w0 * 2f64.sqrt()), &halved, None).unwrap();
        for (a, b) in base.mode_variance.iter().zip(&fast.mode_variance) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((2.0 * x - y).abs() <= 1e-8 * y.abs().max(1e-12), "{x} vs {y}");
            }
        }
    }
}

/// Random tuples over distinct words, one category.
fn analogy_text(v: usize, n: usize, rng: &mut ChaCha8Rng, fourth: impl Fn([u32; 3]) -> u32) -> (String, usize) {
    let mut text = String::from(": random\n");
    let mut seen = std::collections::HashSet::new();
    for _ in 0..n {
        let mut t = [0u32; 3];
        loop {
            for x in &mut t {
                *x = rng.random_range(0..v as u32);
            }
            if t[0] != t[1] && t[0] != t[2] && t[1] != t[2] {
                break;
            }
        }
        let d = fourth(t);
        if seen.insert([t[0], t[1], t[2], d]) {
            text.push_str(&format!("w{} w{} w{} w{d}\n", t[0], t[1], t[2]));
        }
    }
    (text, seen.len())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn evaluation_is_rotation_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, d) = (24, 5);
        let vocab = vocab(v);
        let w = gaussian(v, d, 1.0, &mut rng);
        let wu = &w * orthogonal(d, &mut rng);
        let (text, _) = analogy_text(v, 40, &mut rng, |t| (t[2] + 1) % v as u32);
        let data = AnalogySet::parse(&text, &vocab).unwrap();
        for norm in [Normalization::Full, Normalization::CandidateOnly] {
            let a = analogy_accuracy(&w, &data, norm).unwrap();
            let b = analogy_accuracy(&wu, &data, norm).unwrap();
            prop_assert_eq!(a.correct, b.correct);
            prop_assert!((0.0..=1.0).contains(&a.accuracy));
        }
        // Distinct unordered pairs, as in real similarity sets; a repeated
        // pair would tie exactly in W and only up to rounding in W·U.
        let mut sim = String::new();
        let mut seen = std::collections::HashSet::new();
        while seen.len() < 30 {
            let (i, j) = (rng.random_range(0..v), rng.random_range(0..v));
            if i != j && seen.insert((i.min(j), i.max(j))) {
                sim.push_str(&format!("w{i} w{j} {}\n", rng.random_range(0.0..10.0)));
            }
        }
        let sim = SimilaritySet::parse(&sim, &vocab).unwrap();
        for kind in [Similarity::Inner, Similarity::Cosine] {
            let a = spearman(&w, &sim, kind).unwrap();
            let b = spearman(&wu, &sim, kind).unwrap();
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            prop_assert!((-1.0..=1.0).contains(&a));
        }
        for k in 0..2 {
            let a = pc_neighbors(&w, &vocab, k, 5).unwrap();
            let b = pc_neighbors(&wu, &vocab, k, 5).unwrap();
            prop_assert_eq!(a.iter().map(|x| &x.0).collect::<Vec<_>>(), b.iter().map(|x| &x.0).collect::<Vec<_>>());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.1 - y.1).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn residual_and_alignment_winners_agree(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, d) = (30, 4);
        let vocab = vocab(v);
        let w = gaussian(v, d, 1.0, &mut rng);
        let (text, n) = analogy_text(v, 60, &mut rng, |t| residual_winner(&w, [t[0], t[1], t[2], 0]).unwrap());
        let data = AnalogySet::parse(&text, &vocab).unwrap();
        let report = analogy_accuracy(&w, &data, Normalization::Full).unwrap();
        prop_assert_eq!(report.total, n);
        prop_assert_eq!(report.correct, n);
    }

    #[test]
    fn task_vector_statistics_are_bounded(seed in any::<u64>(), n in 2usize..20, dim in 1usize..12, shift in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = gaussian(n, dim, 1.0, &mut rng);
        let offset = gaussian(1, dim, shift, &mut rng);
        for mut row in r.row_iter_mut() {
            row += &offset;
        }
        let tv = TaskVectorSet::from_rows("c", r);
        prop_assert!(signal_in_mean(&tv).unwrap() <= 1.0 + 1e-12);
        prop_assert!(spike_snr(&tv, DEFAULT_RANK_TOL).unwrap() >= 1.0 - 1e-12);
    }

    #[test]
    fn gram_trace_grows_with_truncation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, d) = (16, 8);
        let w = EmbeddingMatrix::new(gaussian(v, d, 1.0, &mut rng), Provenance::Spectral, "random").unwrap();
        let pairs: Vec<(u32, u32)> = (0..6).map(|k| (k, k + 8)).collect();
        let traces: Vec<f64> =
            (1..=d).map(|k| task_vectors_from_ids(&w, "c", &pairs, k).unwrap().gram.trace()).collect();
        prop_assert!(traces.windows(2).all(|p| p[0] <= p[1]), "{traces:?}");
    }

    #[test]
    fn mp_fit_ignores_row_order_and_rotation(seed in any::<u64>(), n in 8usize..24, extra in 0usize..24) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = n + extra;
        let r = gaussian(n, dim, 1.0, &mut rng);
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let permuted = DMatrix::from_fn(n, dim, |i, k| r[(order[i], k)]);
        let rotated = &r * orthogonal(dim, &mut rng);
        let base = mp_fit(&TaskVectorSet::from_rows("c", r)).unwrap();
        for other in [permuted, rotated] {
            let fit = mp_fit(&TaskVectorSet::from_rows("c", other)).unwrap();
            prop_assert_eq!(fit.d_eff, base.d_eff);
            prop_assert!((fit.ks - base.ks).abs() <= 1e-9);
            prop_assert!((fit.sigma2 - base.sigma2).abs() <= 1e-9 * base.sigma2);
        }
    }
}
