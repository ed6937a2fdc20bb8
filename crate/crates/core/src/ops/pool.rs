use ndarray::{Array2, Array4, ArrayView4, Axis};

use super::{ConvGeometry, Real};

/// Argmax positions of a max-pool forward pass, flat within each input plane.
#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    argmax: Vec<u32>,
    input_dim: (usize, usize, usize, usize),
}

/// Max pooling; padded positions never win.
pub fn max_pool2d<F: Real>(x: ArrayView4<F>, g: ConvGeometry) -> (Array4<F>, MaxPoolCache) {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (g.out_dim(h), g.out_dim(w));
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut y = Array4::<F>::zeros((n, c, oh, ow));
    let mut argmax = vec![0u32; n * c * oh * ow];
    let ys = y.as_slice_mut().expect("fresh array");
    for p in 0..n * c {
        let src = &xs[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = F::neg_infinity();
                let mut best_idx = 0usize;
                for ky in 0..g.kernel {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let idx = iy as usize * w + ix as usize;
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = p * oh * ow + oy * ow + ox;
                ys[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
    (
        y,
        MaxPoolCache {
            argmax,
            input_dim: (n, c, h, w),
        },
    )
}

/// [`max_pool2d`] without the argmax cache, for forward-only passes.
pub fn max_pool2d_eval<F: Real>(x: ArrayView4<F>, g: ConvGeometry) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (g.out_dim(h), g.out_dim(w));
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let window = |o: usize, len: usize| {
        let lo = (o * g.stride).saturating_sub(g.padding);
        let hi = (o * g.stride + g.kernel).saturating_sub(g.padding).min(len);
        lo..hi
    };
    let cols: Vec<_> = (0..ow).map(|ox| window(ox, w)).collect();
    let rows: Vec<_> = (0..oh).map(|oy| window(oy, h)).collect();
    let mut y = Array4::<F>::zeros((n, c, oh, ow));
    let mut down = vec![F::neg_infinity(); w];
    for (src, dst) in xs.chunks_exact(h * w).zip(
        y.as_slice_mut()
            .expect("fresh array")
            .chunks_exact_mut(oh * ow),
    ) {
        for (out, r) in dst.chunks_exact_mut(ow).zip(&rows) {
            down.fill(F::neg_infinity());
            for line in src[r.start * w..r.end * w].chunks_exact(w) {
                for (d, &v) in down.iter_mut().zip(line) {
                    *d = d.max(v);
                }
            }
            for (o, r) in out.iter_mut().zip(&cols) {
                let mut best = F::neg_infinity();
                for &v in &down[r.clone()] {
                    best = best.max(v);
                }
                *o = best;
            }
        }
    }
    y
}

pub fn max_pool2d_backward<F: Real>(cache: &MaxPoolCache, gy: ArrayView4<F>) -> Array4<F> {
    let (n, c, h, w) = cache.input_dim;
    let (_, _, oh, ow) = gy.dim();
    let gy = gy.as_standard_layout();
    let gs = gy.as_slice().expect("standard layout");
    let mut dx = Array4::<F>::zeros(cache.input_dim);
    let ds = dx.as_slice_mut().expect("fresh array");
    for p in 0..n * c {
        for o in 0..oh * ow {
            let i = p * oh * ow + o;
            ds[p * h * w + cache.argmax[i] as usize] += gs[i];
        }
    }
    dx
}

fn bin(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

/// Adaptive average pooling to `(out_h, out_w)`, bins as `[floor(i*in/out), ceil((i+1)*in/out))`.
pub fn adaptive_avg_pool2d<F: Real>(x: ArrayView4<F>, out_h: usize, out_w: usize) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    assert!(out_h >= 1 && out_w >= 1 && out_h <= h && out_w <= w);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut y = Array4::<F>::zeros((n, c, out_h, out_w));
    let ys = y.as_slice_mut().expect("fresh array");
    for p in 0..n * c {
        let src = &xs[p * h * w..(p + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1) = bin(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1) = bin(ox, w, out_w);
                let mut acc = F::zero();
                for iy in y0..y1 {
                    for v in &src[iy * w + x0..iy * w + x1] {
                        acc += *v;
                    }
                }
                ys[p * out_h * out_w + oy * out_w + ox] =
                    acc / F::lit(((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    y
}

/// Adaptive averaging along the channel axis down to `out_c` channels.
/// For an even channel count and `out_c = c / 2` this averages adjacent pairs.
pub fn channel_pair_mean<F: Real>(x: ArrayView4<F>, out_c: usize) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    assert!(out_c >= 1 && out_c <= c);
    let mut y = Array4::<F>::zeros((n, out_c, h, w));
    for b in 0..n {
        for oc in 0..out_c {
            let (c0, c1) = bin(oc, c, out_c);
            let mut dst = y.slice_mut(ndarray::s![b, oc, .., ..]);
            for ci in c0..c1 {
                dst += &x.slice(ndarray::s![b, ci, .., ..]);
            }
            let inv = F::one() / F::lit((c1 - c0) as f64);
            dst.mapv_inplace(|v| v * inv);
        }
    }
    y
}

/// Spatial mean per (image, channel).
pub fn global_avg_pool<F: Real>(x: ArrayView4<F>) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let inv = F::one() / F::lit((h * w) as f64);
    let mut out = Array2::<F>::zeros((n, c));
    for ((b, ch), v) in out.indexed_iter_mut() {
        *v = x.index_axis(Axis(0), b).index_axis(Axis(0), ch).sum() * inv;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    #[test]
    fn max_pool_resnet_geometry_halves_and_routes_gradient() {
        let x = Array::from_shape_fn((1, 1, 4, 4), |(_, _, i, j)| (i * 4 + j) as f64);
        let g = ConvGeometry::new(3, 2, 1);
        let (y, cache) = max_pool2d(x.view(), g);
        assert_eq!(y.dim(), (1, 1, 2, 2));
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        assert_eq!(y[[0, 0, 1, 1]], 15.0);
        let dx = max_pool2d_backward(&cache, Array4::<f64>::ones(y.dim()).view());
        assert_eq!(dx.sum(), 4.0);
        assert_eq!(dx[[0, 0, 3, 3]], 1.0);
    }

    #[test]
    fn eval_pool_matches_cached_pool() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for (g, (h, w)) in [
            (ConvGeometry::new(3, 2, 1), (9, 12)),
            (ConvGeometry::new(3, 2, 1), (16, 16)),
            (ConvGeometry::new(2, 2, 0), (7, 6)),
            (ConvGeometry::new(3, 1, 1), (5, 8)),
        ] {
            let x = Array::from_shape_simple_fn((2, 3, h, w), || rng.random_range(-1.0..1.0));
            assert_eq!(
                max_pool2d_eval(x.view(), g),
                max_pool2d(x.view(), g).0,
                "{g:?}"
            );
        }
    }

    #[test]
    fn adaptive_pool_even_halving_is_2x2_mean() {
        let x = Array::from_shape_fn((1, 1, 4, 4), |(_, _, i, j)| (i * 4 + j) as f64);
        let y = adaptive_avg_pool2d(x.view(), 2, 2);
        assert_eq!(y[[0, 0, 0, 0]], (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
        assert_eq!(y[[0, 0, 1, 1]], (10.0 + 11.0 + 14.0 + 15.0) / 4.0);
    }

    #[test]
    fn channel_mean_pairs_adjacent_channels() {
        let x = Array::from_shape_fn((1, 4, 1, 1), |(_, c, _, _)| c as f64);
        let y = channel_pair_mean(x.view(), 2);
        assert_eq!(y.iter().copied().collect::<Vec<_>>(), vec![0.5, 2.5]);
    }
}
