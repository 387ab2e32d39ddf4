use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use gmmc_bench::procedural_image;
use gmmc_core::codec::{decode_container, encode_image};
use gmmc_core::{CodecModel, EncodeOptions};

// Decode time per pixel should stay flat across sizes: each step reads a
// fixed 5x5 window.
fn decode_scaling(c: &mut Criterion) {
    let model = CodecModel::toy(3, 128, 2024).unwrap();
    let mut g = c.benchmark_group("decode");
    g.sample_size(10);
    for side in [64usize, 128, 256] {
        let img = procedural_image(side, side, side as u64);
        let bytes = encode_image(&img, &model, &EncodeOptions::default()).unwrap().bytes;
        g.throughput(Throughput::Elements((side * side) as u64));
        g.bench_with_input(BenchmarkId::from_parameter(side), &bytes, |b, bytes| {
            b.iter(|| decode_container(bytes, &model).unwrap())
        });
    }
    g.finish();
}

fn encode(c: &mut Criterion) {
    let model = CodecModel::toy(3, 128, 2024).unwrap();
    let img = procedural_image(256, 256, 1);
    let mut g = c.benchmark_group("encode");
    g.sample_size(10);
    g.throughput(Throughput::Elements(256 * 256));
    g.bench_function("256", |b| b.iter(|| encode_image(&img, &model, &EncodeOptions::default()).unwrap()));
    g.finish();
}

criterion_group!(benches, decode_scaling, encode);
criterion_main!(benches);
