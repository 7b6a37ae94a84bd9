use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cosfire_hash::dog::dog_response_map;
use cosfire_hash::hashnet::{Matrix, MlpParams, REFERENCE_HIDDEN, REFERENCE_INPUT};
use cosfire_hash::imaging::{sigma_clip, Image};
use cosfire_hash::retrieval::{HashCode, RetrievalIndex};
use cosfire_hash::{DogParams, Polarity};

fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Image {
    Image::from_fn(size, size, |_, _| rng.gen::<f64>()).unwrap()
}

fn random_code(rng: &mut ChaCha8Rng, bits: usize) -> HashCode {
    HashCode::from_bools(&(0..bits).map(|_| rng.gen::<bool>()).collect::<Vec<_>>())
}

fn bench_imaging(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = random_image(&mut rng, 150);
    c.bench_function("sigma_clip 150x150", |b| b.iter(|| sigma_clip(black_box(&img), 3.0, 10).unwrap()));
    let params = DogParams::new(3.0, Polarity::CenterOn).unwrap();
    c.bench_function("dog map 150x150 sigma 3", |b| b.iter(|| dog_response_map(black_box(&img), params)));
}

fn bench_mlp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = MlpParams::init_uniform(REFERENCE_INPUT, &REFERENCE_HIDDEN, 72, &mut rng).unwrap();
    let x = Matrix::new(64, REFERENCE_INPUT, (0..64 * REFERENCE_INPUT).map(|_| rng.gen::<f64>()).collect()).unwrap();
    c.bench_function("mlp infer 64x372 -> 72", |b| b.iter(|| params.infer(black_box(&x)).unwrap()));
}

fn bench_query(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bits = 72;
    let n = 10_000;
    let codes = (0..n).map(|_| random_code(&mut rng, bits)).collect();
    let labels = (0..n).map(|i| i % 4).collect();
    let index = RetrievalIndex::from_parts(bits, codes, labels, (0..n as u32).collect()).unwrap();
    c.bench_function("hamming query 10k x 72 bits, top 100", |b| {
        b.iter_batched(
            || random_code(&mut rng, bits),
            |q| index.query(&q, 100).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_imaging, bench_mlp, bench_query);
criterion_main!(benches);
