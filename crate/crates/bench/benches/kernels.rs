use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array4;
use texdistill::backbone::{tap_preset, Arch, TapPreset};
use texdistill::ops::{conv2d, ConvGeometry};
use texdistill::student::build_reduced_student;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn conv(c: &mut Criterion) {
    let x = Array4::<f32>::from_elem((1, 64, 64, 64), 0.5);
    let w = Array4::<f32>::from_elem((64, 64, 3, 3), 0.01);
    c.bench_function("conv3x3_64x64_at_64", |b| {
        b.iter(|| {
            conv2d(
                black_box(x.view()),
                w.view(),
                None,
                ConvGeometry::new(3, 1, 1),
            )
        })
    });
}

fn student_forward(c: &mut Criterion) {
    let spec = tap_preset(Arch::Resnet18, TapPreset::ReducedStudent).unwrap();
    let student = build_reduced_student::<f32>(&spec, 0).unwrap();
    let x = Array4::<f32>::from_elem((1, 3, 256, 256), 0.1);
    c.bench_function("reduced_student_forward_256", |b| {
        b.iter(|| student.forward(black_box(x.view())).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = conv, student_forward
}
criterion_main!(benches);
