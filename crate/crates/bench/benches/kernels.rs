use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fairglite_core::encoder::{attention_layer, BoundLayer, EdgeIndex, LayerParams};
use fairglite_core::fair::{mmd_loss, train_fairglite};
use fairglite_core::graph::{make_split, synthesize_biased_graph, MaskMode, SplitRatios, SyntheticParams};
use fairglite_core::rng::{stream, Stream};
use fairglite_core::{FairConfig, GroupIndex, ProxyResult, Tape, Tensor};
use rand::Rng as _;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, Stream::Aux);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn bench_mmd(c: &mut Criterion) {
    let mut group = c.benchmark_group("mmd_forward_backward");
    for n in [200usize, 500, 1000] {
        let h = random_matrix(n, 16, 1);
        let groups: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        let idx = GroupIndex::from_groups(&groups, 0..n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let tape = Tape::new();
                let v = tape.param(&h);
                let loss = mmd_loss(v, &idx, 0.1).unwrap();
                tape.backward(loss).unwrap();
            })
        });
    }
    group.finish();
}

fn graph(n: usize) -> fairglite_core::Graph {
    synthesize_biased_graph(&SyntheticParams { n, ..SyntheticParams::default() })
        .unwrap()
        .remove_isolated()
        .unwrap()
}

fn bench_attention(c: &mut Criterion) {
    let g = graph(1000);
    let edges = EdgeIndex::new(&g);
    let mut rng = stream(2, Stream::FairInit);
    let layer = LayerParams::init(&mut rng, 16, 16);
    let h = random_matrix(g.num_nodes(), 16, 3);
    c.bench_function("attention_layer_forward_backward_n1000", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let bound = BoundLayer { xi: tape.param(&layer.xi), w: tape.param(&layer.w), attn: tape.param(&layer.attn) };
            let out = attention_layer(&edges, tape.constant(h.clone()), &bound).unwrap();
            let loss = out.output.square().sum_all();
            tape.backward(loss).unwrap();
        })
    });
}

fn bench_epoch(c: &mut Criterion) {
    let g = graph(1000);
    let split = make_split(&g, SplitRatios::default(), 0.4, MaskMode::Uniform, 0).unwrap();
    let x = g.standardized_features(&split.train);
    let proxies = ProxyResult::from_observed(g.demographics().iter().map(|d| d.unwrap_or(0)).collect());
    let cfg = FairConfig { epochs: 1, ..FairConfig::default() };
    c.bench_function("training_epoch_n1000", |b| {
        b.iter(|| train_fairglite(&g, &split, &x, &proxies, &cfg, None).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_mmd, bench_attention, bench_epoch
}
criterion_main!(benches);
