//! Criterion benches over the pipeline's hot kernels. Build once with the
//! default features for the rayon path and once with `--no-default-features`
//! for the sequential fallback; bench ids carry the mode so the two runs can
//! be compared directly:
//!
//! ```text
//! cargo bench -p tlseg-core
//! cargo bench -p tlseg-core --no-default-features
//! ```

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::Vector3;
use std::hint::black_box;

use tlseg_core::fusion::{self, compute_obb, obb_iou, obb_iou_monte_carlo, PartialInstance};
use tlseg_core::label_transfer::{self, LabeledCloud};
use tlseg_core::masks::Modality;
use tlseg_core::projection::{lanczos_resample, project_station, ProjectionParams};
use tlseg_core::scan_io::{PointCloud, ScanPoint, ScanStation};
use tlseg_core::synth::{self, SceneSpec};

fn mode() -> &'static str {
    if tlseg_core::parallelism_enabled() {
        "par"
    } else {
        "seq"
    }
}

fn bench_scene() -> (ScanStation, ProjectionParams) {
    let spec = SceneSpec {
        n_heads: 30,
        surface_density: 120_000.0,
        seed: 11,
        ..SceneSpec::default()
    };
    let scene = synth::generate_scene(&spec).unwrap();
    let origin = Vector3::new(1.6, 0.0, 1.2);
    let orientation = synth::look_at_pose(origin, Vector3::new(0.0, 0.0, 0.3)).unwrap();
    let beam = 0.0005;
    let (station, _) = synth::simulate_scan(&scene, "bench", origin, orientation, beam).unwrap();
    let params = ProjectionParams {
        point_spacing: 0.003,
        max_range: 3.0,
        lanczos_support: 3,
        native_resolution: Some(beam),
    };
    (station, params)
}

fn bench_projection(c: &mut Criterion) {
    let (station, params) = bench_scene();
    let mut group = c.benchmark_group(format!("projection/{}", mode()));
    group.sample_size(20);
    group.bench_function("project_station", |b| {
        b.iter(|| project_station(black_box(&station), &params).unwrap())
    });
    let full = project_station(&station, &params).unwrap();
    group.bench_function("lanczos_resample", |b| {
        b.iter(|| lanczos_resample(black_box(&full), &params).unwrap())
    });
    group.finish();
}

fn random_instances(n: usize) -> Vec<PartialInstance> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    (0..n)
        .map(|i| {
            let center = Vector3::new(
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(0.2..0.5),
            );
            let points: Vec<ScanPoint> = (0..60)
                .map(|_| ScanPoint {
                    position: center
                        + Vector3::new(
                            rng.random_range(-0.03..0.03),
                            rng.random_range(-0.03..0.03),
                            rng.random_range(-0.05..0.05),
                        ),
                    intensity: 0.5,
                })
                .collect();
            let positions: Vec<Vector3<f64>> = points.iter().map(|p| p.position).collect();
            PartialInstance {
                obb: compute_obb(&positions),
                points,
                class_label: "head".into(),
                confidence: 1.0,
                station_id: format!("st{:02}", i % 6),
                modality: Modality::Intensity,
                mask_id: i as u32,
            }
        })
        .collect()
}

fn bench_fusion(c: &mut Criterion) {
    let instances = random_instances(400);
    let mut group = c.benchmark_group(format!("fusion/{}", mode()));
    group.sample_size(20);
    group.bench_function("build_graph", |b| {
        b.iter(|| fusion::build_graph(black_box(&instances), 6, 0.15).unwrap())
    });
    let graph = fusion::build_graph(&instances, 6, 0.15).unwrap();
    group.bench_function("hcs_cluster", |b| {
        b.iter(|| fusion::hcs_cluster(black_box(&graph), 1, 3))
    });
    let a = &instances[0].obb;
    let b_box = &instances[1].obb;
    group.bench_function("obb_iou_exact", |b| {
        b.iter(|| obb_iou(black_box(a), black_box(b_box)))
    });
    group.bench_function("obb_iou_monte_carlo_100k", |b| {
        b.iter(|| obb_iou_monte_carlo(black_box(a), black_box(b_box), 100_000, 3))
    });
    group.finish();
}

fn bench_label_transfer(c: &mut Criterion) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let n = 50_000;
    let labeled = LabeledCloud {
        cloud: PointCloud::new(
            (0..n)
                .map(|_| ScanPoint {
                    position: Vector3::new(
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(0.0..0.5),
                    ),
                    intensity: 0.5,
                })
                .collect(),
        ),
        semantic: (0..n).map(|i| (i % 3) as u16).collect(),
        instance: (0..n).map(|i| (i % 40) as i32 - 1).collect(),
    };
    let mut group = c.benchmark_group(format!("label_transfer/{}", mode()));
    group.sample_size(10);
    group.bench_function("refine_majority_vote", |b| {
        b.iter(|| {
            label_transfer::refine_majority_vote(black_box(&labeled), 0.003, true, true).unwrap()
        })
    });
    group.bench_function("sample_spheres", |b| {
        b.iter(|| label_transfer::sample_spheres(black_box(&labeled), 0.12, 0.12).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_projection,
    bench_fusion,
    bench_label_transfer
);
criterion_main!(benches);
