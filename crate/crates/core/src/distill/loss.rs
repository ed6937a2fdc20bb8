//! Feature-matching losses between teacher and student tap outputs.
//!
//! Every location's channel vector is scaled to unit length; the pixel loss is
//! half the squared distance between the teacher's and the student's unit
//! vectors, so it lies in `[0, 2]`. A layer loss is the mean pixel loss over
//! all locations (and over the batch).

use ndarray::{Array3, Array4, ArrayView4};

use crate::error::{Error, Result};
use crate::features::{FeatureMap, Tap};
use crate::ops::{adaptive_avg_pool2d, channel_pair_mean, Real};

/// Added to the vector norm before dividing.
pub const NORM_EPS: f64 = 1e-8;

/// Shrinks a ResNet teacher map to the reduced student's geometry.
///
/// `tap_index` counts ResNet-branch layers from 1 (the stem). Layer 1 is
/// returned unchanged; deeper layers are halved spatially by adaptive
/// average pooling and halved in channels by averaging adjacent channel pairs.
pub fn pool_teacher_features<F: Real>(ft: &FeatureMap<F>, tap_index: usize) -> FeatureMap<F> {
    if tap_index <= 1 {
        return ft.clone();
    }
    let (h, w) = ft.spatial();
    let pooled = adaptive_avg_pool2d(ft.data.view(), (h / 2).max(1), (w / 2).max(1));
    let halved = channel_pair_mean(pooled.view(), (ft.channels() / 2).max(1));
    FeatureMap::new(ft.tap, ft.stride * 2, halved)
}

/// ResNet-branch layer index of a tap (stem = 1, block k = k + 1).
pub fn resnet_tap_index(tap: Tap) -> usize {
    match tap {
        Tap::Stem => 1,
        Tap::Block(k) => k as usize + 1,
        Tap::Stage(_) => 1,
    }
}

/// Brings a teacher map into its student's geometry: ResNet block taps are
/// pooled, the ResNet stem and EfficientNet stage taps pass through.
pub fn align_teacher<F: Real>(ft: &FeatureMap<F>) -> FeatureMap<F> {
    match ft.tap {
        Tap::Block(_) => pool_teacher_features(ft, resnet_tap_index(ft.tap)),
        Tap::Stem | Tap::Stage(_) => ft.clone(),
    }
}

/// Per-location L2 norms, shape `(batch, h, w)`.
fn location_norms<F: Real>(x: &ArrayView4<F>) -> Array3<F> {
    let (n, c, h, w) = x.dim();
    let mut sq = Array3::<F>::zeros((n, h, w));
    for b in 0..n {
        let mut acc = sq.index_axis_mut(ndarray::Axis(0), b);
        for ch in 0..c {
            let plane = x.slice(ndarray::s![b, ch, .., ..]);
            acc.zip_mut_with(&plane, |a, &v| *a += v * v);
        }
    }
    sq.mapv_inplace(|v| v.sqrt());
    sq
}

fn unit_vectors<F: Real>(x: ArrayView4<F>) -> (Array4<F>, Array3<F>) {
    let norms = location_norms(&x);
    let eps = F::lit(NORM_EPS);
    let mut out = x.to_owned();
    for (mut img, nimg) in out.outer_iter_mut().zip(norms.outer_iter()) {
        for mut plane in img.outer_iter_mut() {
            plane.zip_mut_with(&nimg, |v, &nv| *v /= nv + eps);
        }
    }
    (out, norms)
}

/// Scales every location's channel vector to unit L2 norm; zero vectors stay zero.
pub fn normalize_features<F: Real>(fm: &FeatureMap<F>) -> FeatureMap<F> {
    FeatureMap::new(fm.tap, fm.stride, unit_vectors(fm.data.view()).0)
}

fn check_same_shape<F>(ft: &FeatureMap<F>, fs: &FeatureMap<F>) -> Result<()> {
    if ft.shape() != fs.shape() {
        return Err(Error::shape(
            format!("teacher/student maps at {}", fs.tap),
            &ft.shape(),
            &fs.shape(),
        ));
    }
    Ok(())
}

/// `½‖unit(ft) − unit(fs)‖²` at every location, shape `(batch, h, w)`.
pub fn pixel_loss<F: Real>(ft: &FeatureMap<F>, fs: &FeatureMap<F>) -> Result<Array3<F>> {
    check_same_shape(ft, fs)?;
    let (t, _) = unit_vectors(ft.data.view());
    Ok(pixel_loss_normalized_teacher(t.view(), fs.data.view()))
}

fn pixel_loss_normalized_teacher<F: Real>(t: ArrayView4<F>, s: ArrayView4<F>) -> Array3<F> {
    let (su, _) = unit_vectors(s);
    let (n, c, h, w) = t.dim();
    let mut out = Array3::<F>::zeros((n, h, w));
    let half = F::lit(0.5);
    for b in 0..n {
        let mut acc = out.index_axis_mut(ndarray::Axis(0), b);
        for ch in 0..c {
            let tp = t.slice(ndarray::s![b, ch, .., ..]);
            let sp = su.slice(ndarray::s![b, ch, .., ..]);
            ndarray::Zip::from(&mut acc)
                .and(&tp)
                .and(&sp)
                .for_each(|a, &tv, &sv| *a += (tv - sv) * (tv - sv));
        }
    }
    out.mapv_inplace(|v| v * half);
    out
}

fn mean<F: Real>(a: &Array3<F>) -> F {
    let sum: f64 = a.iter().map(|v| v.to_f64().unwrap()).sum();
    F::lit(sum / a.len() as f64)
}

/// Mean pixel loss over all locations of all images in the batch.
pub fn layer_loss<F: Real>(ft: &FeatureMap<F>, fs: &FeatureMap<F>) -> Result<F> {
    Ok(mean(&pixel_loss(ft, fs)?))
}

fn check_lengths<F>(t: &[FeatureMap<F>], s: &[FeatureMap<F>]) -> Result<()> {
    if t.len() != s.len() {
        return Err(Error::LengthMismatch {
            teacher: t.len(),
            student: s.len(),
        });
    }
    Ok(())
}

/// Unweighted sum of layer losses. Teacher maps are raw; ResNet block taps are
/// pooled to the student's geometry first.
pub fn total_loss_reduced<F: Real>(
    teacher: &[FeatureMap<F>],
    student: &[FeatureMap<F>],
) -> Result<F> {
    check_lengths(teacher, student)?;
    teacher
        .iter()
        .zip(student)
        .try_fold(F::zero(), |acc, (ft, fs)| {
            Ok(acc + layer_loss(&align_teacher(ft), fs)?)
        })
}

/// ResNet-branch total plus `alpha` times the EfficientNet-branch total
/// (EfficientNet maps are compared without pooling).
pub fn total_loss_mixed<F: Real>(
    res_teacher: &[FeatureMap<F>],
    res_student: &[FeatureMap<F>],
    eff_teacher: &[FeatureMap<F>],
    eff_student: &[FeatureMap<F>],
    alpha: F,
) -> Result<F> {
    let res = total_loss_reduced(res_teacher, res_student)?;
    let eff = total_loss_reduced(eff_teacher, eff_student)?;
    Ok(res + alpha * eff)
}

/// Teacher targets in student geometry, already unit-normalized.
#[derive(Debug, Clone)]
pub struct Target<F> {
    pub tap: Tap,
    pub data: Array4<F>,
}

impl<F: Real> Target<F> {
    pub fn from_teacher(ft: &FeatureMap<F>) -> Self {
        let aligned = align_teacher(ft);
        Self {
            tap: ft.tap,
            data: unit_vectors(aligned.data.view()).0,
        }
    }
}

/// Per-image layer losses for normalized targets (no gradient).
pub fn per_image_layer_loss<F: Real>(target: ArrayView4<F>, student: ArrayView4<F>) -> Vec<f64> {
    let pl = pixel_loss_normalized_teacher(target, student);
    pl.outer_iter()
        .map(|img| img.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / img.len() as f64)
        .collect()
}

/// Layer loss (mean over batch and locations) times `weight`, and its gradient
/// with respect to the raw student map.
pub fn layer_loss_with_grad<F: Real>(
    target: ArrayView4<F>,
    student: ArrayView4<F>,
    weight: F,
) -> Result<(F, Array4<F>)> {
    if target.dim() != student.dim() {
        return Err(Error::shape(
            "normalized target vs student map",
            target.shape(),
            student.shape(),
        ));
    }
    let (n, c, h, w) = student.dim();
    let (su, norms) = unit_vectors(student);
    let eps = F::lit(NORM_EPS);
    let scale = weight / F::lit((n * h * w) as f64);

    // d = unit(s) - t; loss = scale * ½ Σ d²; dL/dunit(s) = scale * d.
    let mut d = su.clone();
    d -= &target;
    let loss_sum: f64 = d.iter().map(|v| v.to_f64().unwrap().powi(2)).sum();
    let loss = F::lit(0.5 * loss_sum) * scale;

    // Backprop through s / (‖s‖ + eps):
    //   ds = g / (‖s‖+eps) - s (s·g) / (‖s‖ (‖s‖+eps)²), with g = dL/dunit(s).
    let mut dot = Array3::<F>::zeros((n, h, w));
    for b in 0..n {
        let mut acc = dot.index_axis_mut(ndarray::Axis(0), b);
        for ch in 0..c {
            let sp = student.slice(ndarray::s![b, ch, .., ..]);
            let dp = d.slice(ndarray::s![b, ch, .., ..]);
            ndarray::Zip::from(&mut acc)
                .and(&sp)
                .and(&dp)
                .for_each(|a, &sv, &dv| *a += sv * dv);
        }
    }
    let mut grad = d;
    for b in 0..n {
        for ch in 0..c {
            let sp = student.slice(ndarray::s![b, ch, .., ..]);
            let mut gp = grad.slice_mut(ndarray::s![b, ch, .., ..]);
            ndarray::Zip::from(&mut gp)
                .and(&sp)
                .and(&norms.index_axis(ndarray::Axis(0), b))
                .and(&dot.index_axis(ndarray::Axis(0), b))
                .for_each(|g, &sv, &nv, &dv| {
                    let denom = nv + eps;
                    let radial = if nv > F::zero() {
                        sv * dv / (nv * denom * denom)
                    } else {
                        F::zero()
                    };
                    *g = scale * (*g / denom - radial);
                });
        }
    }
    Ok((loss, grad))
}
