use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use qwem_bench::{random_batch, random_matrix, random_symmetric, small_planted};
use qwem_core::eval::{analogy_accuracy, AnalogySet, Normalization};
use qwem_core::trainers::{loss_and_grad, sample_pairs, PairObjective, Sampling};
use qwem_core::{eigh, factorize_target, mp_fit, LossKind, Reweight, TargetMatrix, TaskVectorSet, TopK};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gradients(c: &mut Criterion) {
    let w = random_matrix(2000, 50, 0.1, 1);
    let pos = random_batch(2000, 50_000, 2);
    let neg = random_batch(2000, 50_000, 3);
    c.bench_function("qwem loss+grad 100k pairs, V=2000 d=50", |b| {
        b.iter(|| loss_and_grad(&w, LossKind::Qwem, &pos, &neg).unwrap())
    });
    c.bench_function("sgns loss+grad 100k pairs, V=2000 d=50", |b| {
        b.iter(|| loss_and_grad(&w, LossKind::Sgns, &pos, &neg).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let corpus = small_planted();
    let stats = corpus.stats(10).unwrap();
    let objective = PairObjective::from_stats(&stats, &Reweight::Setting1, Sampling::Adjusted).unwrap();
    c.bench_function("sample 100k pairs from planted objective", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(4),
            |mut rng| sample_pairs(&objective, 50_000, 50_000, &mut rng),
            BatchSize::SmallInput,
        )
    });
    c.bench_function("count skip-grams of the small planted corpus", |b| b.iter(|| corpus.stats(10).unwrap()));
}

fn spectral(c: &mut Criterion) {
    let m = random_symmetric(600, 5);
    c.bench_function("top-50 eigenpairs, n=600", |b| b.iter(|| eigh(&m, TopK::Top(50)).unwrap()));
    c.bench_function("full eigendecomposition, n=600", |b| b.iter(|| eigh(&m, TopK::All).unwrap()));
}

fn evaluation(c: &mut Criterion) {
    let corpus = small_planted();
    let stats = corpus.stats(10).unwrap();
    let target = qwem_core::build_mstar(&stats, &Reweight::Setting1).unwrap();
    let w = factorize_target(&target, 60).unwrap();
    let set = AnalogySet::parse(&corpus.questions_words(), stats.vocab()).unwrap();
    c.bench_function("analogy accuracy over planted questions", |b| {
        b.iter(|| analogy_accuracy(w.matrix(), &set, Normalization::Full).unwrap())
    });
    let tv = TaskVectorSet::from_rows("bench", random_matrix(32, 128, 1.0, 6));
    c.bench_function("MP fit, N=32 d=128", |b| b.iter(|| mp_fit(&tv).unwrap()));
    let small = TargetMatrix::synthetic(random_symmetric(200, 7)).unwrap();
    c.bench_function("factorize n=200 target at d=20", |b| b.iter(|| factorize_target(&small, 20).unwrap()));
}

criterion_group!(benches, gradients, sampling, spectral, evaluation);
criterion_main!(benches);
