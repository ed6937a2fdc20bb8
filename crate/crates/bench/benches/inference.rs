use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array4;
use texdistill::anomaly::infer_tensor;
use texdistill::distill::{branch_specs, init_students, Teachers};
use texdistill::model::BranchModel;
use texdistill::{DistillModel, FusionRule, Method, TrainConfig};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn untrained_model(method: Method) -> DistillModel {
    let mut config = TrainConfig::for_method(method);
    config.resnet_weights = "seeded:0".into();
    config.effnet_weights = "seeded:0".into();
    let teachers = Teachers::load(&config).unwrap();
    let (res_spec, eff_spec) = branch_specs(&config).unwrap();
    let (res, eff) = init_students(&config).unwrap();
    DistillModel {
        method,
        resnet: BranchModel::new(Arc::clone(&teachers.resnet), res_spec, res).unwrap(),
        effnet: match (eff_spec, eff, &teachers.effnet) {
            (Some(spec), Some(s), Some(t)) => {
                Some(BranchModel::new(Arc::clone(t), spec, s).unwrap())
            }
            _ => None,
        },
        alpha: config.alpha,
        input_size: config.input_size,
        fusion: FusionRule::default(),
    }
}

fn inference(c: &mut Criterion) {
    let x = Array4::<f32>::from_elem((1, 3, 256, 256), 0.1);
    for method in [Method::Reduced, Method::Mixed] {
        let model = untrained_model(method);
        c.bench_function(&format!("infer_{method}_256"), |b| {
            b.iter(|| infer_tensor(&model, black_box(x.view())).unwrap())
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = inference
}
criterion_main!(benches);
