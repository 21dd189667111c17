use criterion::{black_box, criterion_group, criterion_main, Criterion};

use imcsynth::abstraction::transition_bounds;
use imcsynth::components::{
    find_extended_greatest_accepting, find_extended_permanent_accepting,
    find_greatest_permanent_winning,
};
use imcsynth::{
    build_bmdp, maximize_reach, product, synthesize_finite, trigger_regions, Bound, FiniteConfig,
    InputRegion, ReachOptions, Rect,
};
use imcsynth_bench::{bistable, phi1};

fn abstraction(c: &mut Criterion) {
    let sys = bistable(16);
    let p = sys.initial_partition();
    c.bench_function("build_bmdp 16x16", |b| {
        b.iter(|| build_bmdp(black_box(&p), &sys, &sys.modes).unwrap())
    });
    let noise = sys.noise.clone();
    let reach = Rect::new(vec![0.9, 1.1], vec![1.2, 1.35]);
    let target = Rect::new(vec![1.0, 1.0], vec![1.25, 1.25]);
    c.bench_function("transition_bounds", |b| {
        b.iter(|| transition_bounds(black_box(&reach), &target, &noise))
    });
    let u = InputRegion::from_box(sys.input_box.clone().unwrap());
    c.bench_function("trigger_regions 2d", |b| {
        b.iter(|| trigger_regions(black_box(&reach), &target, &noise, &u))
    });
}

fn product_solving(c: &mut Criterion) {
    let sys = bistable(16);
    let abs = build_bmdp(&sys.initial_partition(), &sys, &sys.modes).unwrap();
    let m = product(&abs.bmdp, &phi1()).unwrap();
    c.bench_function("components 16x16", |b| {
        b.iter(|| {
            let up = find_extended_permanent_accepting(&m).unwrap();
            let ul = find_extended_greatest_accepting(&m).unwrap();
            find_greatest_permanent_winning(&m, &up, &ul).unwrap()
        })
    });
    let up = find_extended_permanent_accepting(&m).unwrap();
    let ul = find_extended_greatest_accepting(&m).unwrap();
    let wc = find_greatest_permanent_winning(&m, &up, &ul).unwrap();
    let opts = ReachOptions {
        eps_conv: 1e-7,
        ..Default::default()
    };
    c.bench_function("lower reach 16x16", |b| {
        b.iter(|| maximize_reach(&m, black_box(&wc.members), Bound::Lower, &opts).unwrap())
    });
}

fn synthesis(c: &mut Criterion) {
    let sys = bistable(8);
    let dra = phi1();
    let cfg = FiniteConfig {
        max_iters: 2,
        ..Default::default()
    };
    let mut g = c.benchmark_group("synthesis");
    g.sample_size(10);
    g.bench_function("finite 8x8, 2 refinements", |b| {
        b.iter(|| synthesize_finite(&sys, &dra, &cfg).unwrap())
    });
    g.finish();
}

criterion_group!(benches, abstraction, product_solving, synthesis);
criterion_main!(benches);
