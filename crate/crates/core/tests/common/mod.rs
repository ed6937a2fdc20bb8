#![allow(dead_code)]

use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use texdistill::anomaly::{fuse_maps, AnomalyMap, FusionRule, MapBranch};
use texdistill::backbone::TapSpec;
use texdistill::distill::{
    layer_loss, loss_and_gradients, pixel_loss, total_loss_mixed, total_loss_reduced,
};
use texdistill::ops::ConvGeometry;
use texdistill::student::{Branch, StudentBuilder, StudentNet};
use texdistill::{FeatureMap, Tap};

pub fn randn4(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Array4<f64> {
    Array4::from_shape_simple_fn(shape, || rng.sample::<f64, _>(StandardNormal))
}

/// Two-tap student small enough for exhaustive finite differences.
pub fn tiny_student(seed: u64, c1: usize, c2: usize) -> StudentNet<f64> {
    let taps = vec![
        TapSpec {
            tap: Tap::Block(1),
            channels: c1,
            spatial: 64,
        },
        TapSpec {
            tap: Tap::Block(2),
            channels: c2,
            spatial: 32,
        },
    ];
    StudentBuilder::<f64>::new(3, seed)
        .conv_block(c1, ConvGeometry::new(3, 2, 1))
        .max_pool(ConvGeometry::new(3, 2, 1))
        .tap()
        .conv_block(c2, ConvGeometry::new(3, 2, 1))
        .tap()
        .finish(Branch::Resnet, taps)
}

fn unit_targets(rng: &mut ChaCha8Rng, shapes: &[[usize; 4]]) -> Vec<Array4<f64>> {
    shapes
        .iter()
        .map(|s| {
            let mut t = randn4(rng, (s[0], s[1], s[2], s[3]));
            for mut px in t.lanes_mut(ndarray::Axis(1)) {
                let n = px.dot(&px).sqrt();
                px /= n;
            }
            t
        })
        .collect()
}

/// Max relative error between analytic and central-difference gradients of
/// the distillation loss over every trainable parameter of a tiny student.
pub fn gradient_check(config_seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(config_seed);
    let c1 = rng.random_range(2..=5);
    let c2 = rng.random_range(2..=5);
    let batch = rng.random_range(2..=3);
    let weight: f64 = rng.random_range(0.1..2.0);
    let mut student = tiny_student(config_seed, c1, c2);
    let x = randn4(&mut rng, (batch, 3, 32, 32));
    let shapes: Vec<[usize; 4]> = student
        .forward(x.view())
        .unwrap()
        .iter()
        .map(|f| f.shape())
        .collect();
    let targets = unit_targets(&mut rng, &shapes);
    let views: Vec<_> = targets.iter().map(|t| t.view()).collect();

    let (_, grads) = loss_and_gradients(&mut student, x.view(), &views, weight, false).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();

    let h = 1e-6;
    let eval = |s: &mut StudentNet<f64>| {
        loss_and_gradients(s, x.view(), &views, weight, false)
            .unwrap()
            .0
    };
    let mut worst = 0.0f64;
    for (pi, g) in analytic.iter().enumerate() {
        for (k, &a) in g.iter().enumerate() {
            let orig = student.trainable_slices_mut()[pi][k];
            student.trainable_slices_mut()[pi][k] = orig + h;
            let up = eval(&mut student);
            student.trainable_slices_mut()[pi][k] = orig - h;
            let down = eval(&mut student);
            student.trainable_slices_mut()[pi][k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// O(n^2) pair-counting AUROC: P(score_pos > score_neg) + 0.5 P(tie).
pub fn pair_count_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0f64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            n += 1;
            continue;
        }
        p += 1;
        for (j, &sj) in scores.iter().enumerate() {
            if !labels[j] {
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / (p as f64 * n as f64)
}

/// Random scores with deliberate ties and both classes present.
pub fn random_scored_instance(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=max_n);
    let levels = rng.random_range(2..=n.max(3));
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n)
        .map(|_| rng.random_range(0..levels) as f64 * 0.37 - 1.0)
        .collect();
    (scores, labels)
}

fn random_feature_map(
    rng: &mut ChaCha8Rng,
    shape: (usize, usize, usize, usize),
    tap: Tap,
) -> FeatureMap<f64> {
    let scale = 10f64.powf(rng.random_range(-3.0..3.0));
    FeatureMap::new(tap, 4, randn4(rng, shape) * scale)
}

/// Loss invariants on one random case; returns a description of the first
/// violation.
pub fn loss_invariants_case(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = (
        rng.random_range(1..=3),
        rng.random_range(1..=8),
        rng.random_range(1..=6),
        rng.random_range(1..=6),
    );
    let ft = random_feature_map(&mut rng, shape, Tap::Stem);
    let fs = random_feature_map(&mut rng, shape, Tap::Stem);
    let pl = pixel_loss(&ft, &fs).map_err(|e| e.to_string())?;
    if let Some(v) = pl.iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(format!("negative pixel loss {v}"));
    }
    if let Some(v) = pl.iter().find(|v| **v > 2.0 + 1e-6) {
        return Err(format!("pixel loss {v} exceeds 2"));
    }
    let same = layer_loss(&ft, &ft.clone()).map_err(|e| e.to_string())?;
    if same.abs() > 1e-12 {
        return Err(format!("loss of identical maps is {same}"));
    }
    let res_t = vec![ft.clone()];
    let res_s = vec![fs.clone()];
    let eff_t = vec![random_feature_map(&mut rng, shape, Tap::Stage(5))];
    let eff_s = vec![random_feature_map(&mut rng, shape, Tap::Stage(5))];
    let reduced = total_loss_reduced(&res_t, &res_s).map_err(|e| e.to_string())?;
    let mixed = total_loss_mixed(&res_t, &res_s, &eff_t, &eff_s, 0.0).map_err(|e| e.to_string())?;
    if (reduced - mixed).abs() > 1e-12 * reduced.abs().max(1.0) {
        return Err(format!("alpha=0 gives {mixed}, reduced loss is {reduced}"));
    }
    Ok(())
}

pub fn random_map(rng: &mut ChaCha8Rng, side: usize, branch: MapBranch) -> AnomalyMap {
    AnomalyMap::new(
        Array2::from_shape_simple_fn((side, side), || rng.random_range(0.0f32..5.0)),
        branch,
    )
}

/// Fusion properties on one random case.
pub fn fusion_properties_case(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = rng.random_range(2..=24);
    let a_res = random_map(&mut rng, side, MapBranch::Resnet);
    let a_eff = random_map(&mut rng, side, MapBranch::Effnet);

    let constant = AnomalyMap::new(
        Array2::from_elem((side, side), rng.random_range(0.0f32..9.0)),
        MapBranch::Effnet,
    );
    let fused = fuse_maps(&a_res, &constant, FusionRule::Extent).map_err(|e| e.to_string())?;
    if fused.values.iter().any(|v| *v != 0.0) {
        return Err("constant EfficientNet map did not give a zero fused map".into());
    }

    let c: f32 = rng.random_range(0.1..10.0);
    let scaled = AnomalyMap::new(a_eff.values.mapv(|v| v * c), MapBranch::Effnet);
    let base = fuse_maps(&a_res, &a_eff, FusionRule::Extent).map_err(|e| e.to_string())?;
    let hom = fuse_maps(&a_res, &scaled, FusionRule::Extent).map_err(|e| e.to_string())?;
    for (b, h) in base.values.iter().zip(hom.values.iter()) {
        let expect = f64::from(*b) * f64::from(c);
        if (f64::from(*h) - expect).abs() > 1e-6 * expect.abs().max(1.0) {
            return Err(format!("homogeneity: {h} vs {expect}"));
        }
    }

    let (pi, pj) = (rng.random_range(0..side), rng.random_range(0..side));
    let mut spike = Array2::<f32>::zeros((side, side));
    spike[[pi, pj]] = 1.0;
    let local = fuse_maps(
        &AnomalyMap::new(spike, MapBranch::Resnet),
        &a_eff,
        FusionRule::Extent,
    )
    .map_err(|e| e.to_string())?;
    let min = a_eff.values.iter().copied().fold(f32::INFINITY, f32::min);
    for ((i, j), v) in local.values.indexed_iter() {
        let expect = if (i, j) == (pi, pj) {
            a_eff.values[[i, j]] - min
        } else {
            0.0
        };
        if (v - expect).abs() > 1e-6 {
            return Err(format!(
                "locality: pixel ({i},{j}) is {v}, expected {expect}"
            ));
        }
    }
    Ok(())
}

/// Checks every teacher and student tap against its spec at one input side.
pub fn shape_contracts(side: usize) -> Result<(), String> {
    use texdistill::backbone::{load_teacher, preset_arch, tap_preset, Arch, TapPreset};
    use texdistill::distill::align_teacher;
    use texdistill::student::{
        build_effnet_student, build_reduced_student, build_two_conv_baseline,
    };

    let x = Array4::<f32>::from_elem((1, 3, side, side), 0.25);
    for arch in [Arch::Resnet18, Arch::EfficientnetB0] {
        let teacher = load_teacher(arch, "seeded:0").map_err(|e| e.to_string())?;
        for preset in TapPreset::ALL
            .into_iter()
            .filter(|p| preset_arch(*p) == arch)
        {
            let spec = tap_preset(arch, preset).map_err(|e| e.to_string())?;
            let maps = teacher
                .extract_features(x.view(), &spec)
                .map_err(|e| format!("{preset}: {e}"))?;
            let mut students = Vec::new();
            if arch == Arch::Resnet18 {
                students.push(build_reduced_student::<f32>(&spec, 0).map_err(|e| e.to_string())?);
                students.push(build_two_conv_baseline::<f32>(&spec, 0).map_err(|e| e.to_string())?);
            } else {
                students.push(build_effnet_student::<f32>(&spec, 0).map_err(|e| e.to_string())?);
            }
            for (k, (m, t)) in maps.iter().zip(&spec.taps).enumerate() {
                let s = t.spatial_for(side);
                if m.shape() != [1, t.channels, s, s] || m.tap != t.tap {
                    return Err(format!(
                        "{arch:?} {preset} tap {k}: {:?} at side {side}",
                        m.shape()
                    ));
                }
            }
            for student in &students {
                let out = student
                    .forward(x.view())
                    .map_err(|e| format!("{preset}: {e}"))?;
                if out.len() != maps.len() {
                    return Err(format!(
                        "{preset}: {} student taps for {} teacher taps",
                        out.len(),
                        maps.len()
                    ));
                }
                for ((fs, ft), ts) in out.iter().zip(&maps).zip(student.taps()) {
                    let aligned = align_teacher(ft);
                    let s = ts.spatial_for(side);
                    if fs.shape() != aligned.shape() || fs.shape() != [1, ts.channels, s, s] {
                        return Err(format!(
                            "{preset} {:?}: student {:?}, aligned teacher {:?}",
                            fs.tap,
                            fs.shape(),
                            aligned.shape()
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Small training setup for pipeline tests.
pub fn tiny_config(method: texdistill::Method, epochs: usize) -> texdistill::TrainConfig {
    let mut c = texdistill::TrainConfig::for_method(method);
    c.epochs = epochs;
    c.input_size = 64;
    c.batch_size = 4;
    c.resnet_weights = "seeded:0".into();
    c.effnet_weights = "seeded:0".into();
    c
}

pub fn tiny_dataset(n_train: usize) -> texdistill::DatasetSplits {
    use texdistill::data::{generate_synthetic_texture_dataset, TextureFamily};
    generate_synthetic_texture_dataset(TextureFamily::Grating, n_train, 3, 3, 7)
}

/// Recomputes the mean validation loss of a checkpoint from its recorded
/// validation ids.
pub fn recomputed_validation_loss(
    ckpt_path: &std::path::Path,
    dataset: &[texdistill::Sample],
) -> (f64, f64) {
    use texdistill::data::preprocess_to;
    use texdistill::distill::load_model;
    let (ckpt, model) = load_model(ckpt_path, FusionRule::default()).unwrap();
    let images: Vec<_> = ckpt
        .validation_ids
        .iter()
        .map(|id| {
            let s = dataset
                .iter()
                .find(|s| &s.source_id == id)
                .expect("recorded id exists");
            preprocess_to(&s.image, model.input_size)
        })
        .collect();
    (ckpt.validation_loss, model.mean_loss(&images, 4).unwrap())
}

pub fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
