use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wbb_bench::{happy_path, nested_term, signature_db};
use wbb_core::explore::{explore, ExploreBounds, ProtocolModel, ProtocolOptions, SpecModel};
use wbb_core::message::{canonicalize, items_of, threshold_filter, verify_counting_lemma};
use wbb_core::protocol::ProtocolConfig;
use wbb_core::refinement::check_simulation;

fn messages(c: &mut Criterion) {
    let term = nested_term(8);
    c.bench_function("canonicalize/depth8", |b| b.iter(|| canonicalize(black_box(&term))));
    c.bench_function("items_of/depth8", |b| b.iter(|| items_of(black_box(&term))));
    let mut g = c.benchmark_group("threshold_filter");
    for size in [16, 128, 1024] {
        let db = signature_db(8, 16, size, 7);
        g.bench_with_input(BenchmarkId::from_parameter(size), &db, |b, db| {
            b.iter(|| threshold_filter(black_box(db), 6, Some(0)).unwrap())
        });
    }
    g.finish();
    c.bench_function("counting_lemma/n<=6", |b| b.iter(|| verify_counting_lemma(black_box(6))));
}

fn refinement(c: &mut Criterion) {
    let (cfg, trace) = happy_path(4, 3);
    c.bench_function("check_simulation/happy_path", |b| b.iter(|| check_simulation(&cfg, black_box(&trace))));
}

fn exploration(c: &mut Criterion) {
    let mut g = c.benchmark_group("explore");
    g.sample_size(10);
    let spec_cfg = ProtocolConfig::new(4, 3).with_items(&["a", "b"]).unwrap().with_clash("a", "b").unwrap();
    g.bench_function("bbspec/two_items", |b| b.iter(|| explore(&SpecModel::new(&spec_cfg), &ExploreBounds::exhaustive(12))));
    let cfg = ProtocolConfig::new(4, 3);
    for depth in [6, 10] {
        g.bench_with_input(BenchmarkId::new("bbprot1", depth), &depth, |b, &d| {
            b.iter(|| explore(&ProtocolModel::new(&cfg, ProtocolOptions::full()), &ExploreBounds::exhaustive(d)))
        });
    }
    g.finish();
}

criterion_group!(benches, messages, refinement, exploration);
criterion_main!(benches);
