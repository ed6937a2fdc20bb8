use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{Array2, Array3, Array4, ArrayView1, ArrayView2, ArrayView4, ArrayViewMut2, Axis};
use rayon::prelude::ParallelSliceMut;

use super::{winograd, Real};

/// Square kernel geometry of a 2-D convolution or pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// "Same"-style padding `(k - 1) / 2`.
    pub const fn same(kernel: usize, stride: usize) -> Self {
        Self::new(kernel, stride, (kernel - 1) / 2)
    }

    pub fn out_dim(&self, n: usize) -> usize {
        (n + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Output columns `[lo, hi)` whose input index `o * stride + tap - padding`
    /// falls inside `0..len`.
    fn valid_range(&self, tap: usize, len: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if tap >= self.padding {
            0
        } else {
            (self.padding - tap).div_ceil(s)
        };
        let hi = if len + self.padding > tap {
            ((len + self.padding - tap - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads<F> {
    pub dx: Option<Array4<F>>,
    pub dw: Array4<F>,
}

fn im2col<F: Real>(
    plane: &[F],
    (c, h, w): (usize, usize, usize),
    g: ConvGeometry,
    (oh, ow): (usize, usize),
    col: &mut [F],
) {
    let k = g.kernel;
    let hw_out = oh * ow;
    let (ox_ranges, oy_ranges): (Vec<_>, Vec<_>) = (0..k)
        .map(|t| (g.valid_range(t, w, ow), g.valid_range(t, h, oh)))
        .unzip();
    for ci in 0..c {
        let src = &plane[ci * h * w..(ci + 1) * h * w];
        for (ky, &(oy_lo, oy_hi)) in oy_ranges.iter().enumerate() {
            for (kx, &(ox_lo, ox_hi)) in ox_ranges.iter().enumerate() {
                let row_idx = (ci * k + ky) * k + kx;
                let row = &mut col[row_idx * hw_out..(row_idx + 1) * hw_out];
                for oy in 0..oh {
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if oy < oy_lo || oy >= oy_hi || ox_lo >= ox_hi {
                        dst.fill(F::zero());
                        continue;
                    }
                    let iy = oy * g.stride + ky - g.padding;
                    let line = &src[iy * w..(iy + 1) * w];
                    dst[..ox_lo].fill(F::zero());
                    dst[ox_hi..].fill(F::zero());
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx - g.padding;
                        dst[ox_lo..ox_hi].copy_from_slice(&line[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst[ox] = line[ox * g.stride + kx - g.padding];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<F: Real>(
    col: &[F],
    (c, h, w): (usize, usize, usize),
    g: ConvGeometry,
    (oh, ow): (usize, usize),
    plane: &mut [F],
) {
    let k = g.kernel;
    let hw_out = oh * ow;
    for ci in 0..c {
        let dst = &mut plane[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let (oy_lo, oy_hi) = g.valid_range(ky, h, oh);
            for kx in 0..k {
                let (ox_lo, ox_hi) = g.valid_range(kx, w, ow);
                let row_idx = (ci * k + ky) * k + kx;
                let row = &col[row_idx * hw_out..(row_idx + 1) * hw_out];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.padding;
                    let line = &mut dst[iy * w..(iy + 1) * w];
                    let src = &row[oy * ow..(oy + 1) * ow];
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx - g.padding;
                        let dst = &mut line[ix0..ix0 + (ox_hi - ox_lo)];
                        for (d, s) in dst.iter_mut().zip(&src[ox_lo..ox_hi]) {
                            *d += *s;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            line[ox * g.stride + kx - g.padding] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_shapes<F>(x: &ArrayView4<F>, w: &ArrayView4<F>, g: ConvGeometry) {
    assert_eq!(
        x.dim().1,
        w.dim().1,
        "conv input channels {} do not match kernel {:?}",
        x.dim().1,
        w.dim()
    );
    assert_eq!(w.dim().2, g.kernel);
    assert_eq!(w.dim().3, g.kernel);
}

/// Dense 2-D convolution via im2col + GEMM. `w` is `(out, in, k, k)`.
pub fn conv2d<F: Real>(
    x: ArrayView4<F>,
    w: ArrayView4<F>,
    bias: Option<ArrayView1<F>>,
    g: ConvGeometry,
) -> Array4<F> {
    check_conv_shapes(&x, &w, g);
    let (n, c, h, wd) = x.dim();
    let cout = w.dim().0;
    let (oh, ow) = (g.out_dim(h), g.out_dim(wd));
    let kdim = c * g.kernel * g.kernel;
    let w2 = w
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((cout, kdim))
        .expect("kernel reshape");
    let x = x.as_standard_layout();
    let fast = winograd::applies(c, cout, h, wd, g).then(|| winograd::transform_kernel(w));
    let mut y = Array4::<F>::zeros((n, cout, oh, ow));
    y.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(x.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut yi, xi)| {
            let xs = xi.as_slice().expect("standard layout");
            let mut out = yi
                .view_mut()
                .into_shape_with_order((cout, oh * ow))
                .expect("output reshape");
            if let Some(u) = &fast {
                winograd::conv3x3(xs, (c, h, wd), u, &mut out);
            } else if g.is_pointwise() {
                let xv = ArrayView2::from_shape((c, h * wd), xs).expect("pointwise view");
                general_mat_mul(F::one(), &w2, &xv, F::zero(), &mut out);
            } else {
                let mut col = vec![F::zero(); kdim * oh * ow];
                im2col(xs, (c, h, wd), g, (oh, ow), &mut col);
                let cv = ArrayView2::from_shape((kdim, oh * ow), &col).expect("col view");
                general_mat_mul(F::one(), &w2, &cv, F::zero(), &mut out);
            }
            if let Some(b) = &bias {
                add_channel_bias(&mut out, b);
            }
        });
    y
}

/// Kernel of a 3x3, stride 1, padding 1 convolution, transformed once for
/// [`conv3x3_transformed`].
pub fn winograd_kernel<F: Real>(w: ArrayView4<F>) -> Array3<F> {
    winograd::transform_kernel(w)
}

/// [`conv2d`] with geometry `(3, 1, 1)` and a kernel from [`winograd_kernel`].
pub fn conv3x3_transformed<F: Real>(x: ArrayView4<F>, u: &Array3<F>) -> Array4<F> {
    let (n, c, h, wd) = x.dim();
    let (cout, cin) = (u.dim().1, u.dim().2);
    assert_eq!(c, cin, "conv input channels {c} do not match kernel {cin}");
    let x = x.as_standard_layout();
    let mut y = Array4::<F>::zeros((n, cout, h, wd));
    y.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(x.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut yi, xi)| {
            let xs = xi.as_slice().expect("standard layout");
            let mut out = yi
                .view_mut()
                .into_shape_with_order((cout, h * wd))
                .expect("output reshape");
            winograd::conv3x3(xs, (c, h, wd), u, &mut out);
        });
    y
}

fn add_channel_bias<F: Real>(out: &mut ArrayViewMut2<F>, b: &ArrayView1<F>) {
    for (mut row, &bv) in out.axis_iter_mut(Axis(0)).zip(b.iter()) {
        row.mapv_inplace(|v| v + bv);
    }
}

/// Gradients of [`conv2d`] (without bias) with respect to the input and the kernel.
///
/// `dx` is skipped when `need_dx` is false (first layer of a network).
pub fn conv2d_backward<F: Real>(
    x: ArrayView4<F>,
    w: ArrayView4<F>,
    gy: ArrayView4<F>,
    g: ConvGeometry,
    need_dx: bool,
) -> ConvGrads<F> {
    check_conv_shapes(&x, &w, g);
    let (n, c, h, wd) = x.dim();
    let cout = w.dim().0;
    let (oh, ow) = (g.out_dim(h), g.out_dim(wd));
    assert_eq!(gy.dim(), (n, cout, oh, ow), "output gradient shape");
    let kdim = c * g.kernel * g.kernel;
    let w2 = w
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((cout, kdim))
        .expect("kernel reshape");
    let w2t = w2.t();
    let x = x.as_standard_layout();
    let gy = gy.as_standard_layout();

    let per_image: Vec<(Array2<F>, Option<Vec<F>>)> = x
        .axis_iter(Axis(0))
        .into_par_iter()
        .zip(gy.axis_iter(Axis(0)).into_par_iter())
        .map(|(xi, gyi)| {
            let xs = xi.as_slice().expect("standard layout");
            let gv = gyi
                .into_shape_with_order((cout, oh * ow))
                .expect("grad reshape");
            let mut dw = Array2::<F>::zeros((cout, kdim));
            let col_owned;
            let cv = if g.is_pointwise() {
                ArrayView2::from_shape((c, h * wd), xs).expect("pointwise view")
            } else {
                let mut col = vec![F::zero(); kdim * oh * ow];
                im2col(xs, (c, h, wd), g, (oh, ow), &mut col);
                col_owned = col;
                ArrayView2::from_shape((kdim, oh * ow), &col_owned[..]).expect("col view")
            };
            general_mat_mul(F::one(), &gv, &cv.t(), F::zero(), &mut dw);
            let dx = need_dx.then(|| {
                let mut dcol = Array2::<F>::zeros((kdim, oh * ow));
                general_mat_mul(F::one(), &w2t, &gv, F::zero(), &mut dcol);
                if g.is_pointwise() {
                    dcol.into_raw_vec_and_offset().0
                } else {
                    let mut plane = vec![F::zero(); c * h * wd];
                    col2im(
                        dcol.as_slice().expect("standard"),
                        (c, h, wd),
                        g,
                        (oh, ow),
                        &mut plane,
                    );
                    plane
                }
            });
            (dw, dx)
        })
        .collect();

    let mut dw = Array2::<F>::zeros((cout, kdim));
    let mut dx = need_dx.then(|| Vec::with_capacity(n * c * h * wd));
    for (dwi, dxi) in per_image {
        dw += &dwi;
        if let (Some(acc), Some(part)) = (dx.as_mut(), dxi) {
            acc.extend_from_slice(&part);
        }
    }
    ConvGrads {
        dx: dx.map(|v| Array4::from_shape_vec((n, c, h, wd), v).expect("dx shape")),
        dw: dw
            .into_shape_with_order((cout, c, g.kernel, g.kernel))
            .expect("dw shape"),
    }
}

/// Depthwise convolution (one filter per channel). `w` is `(c, 1, k, k)`.
pub fn depthwise_conv2d<F: Real>(x: ArrayView4<F>, w: ArrayView4<F>, g: ConvGeometry) -> Array4<F> {
    let (n, c, h, wd) = x.dim();
    assert_eq!(
        w.dim(),
        (c, 1, g.kernel, g.kernel),
        "depthwise kernel shape"
    );
    let (oh, ow) = (g.out_dim(h), g.out_dim(wd));
    let k = g.kernel;
    let x = x.as_standard_layout();
    let w = w.as_standard_layout();
    let ws = w.as_slice().expect("standard layout");
    let mut y = Array4::<F>::zeros((n, c, oh, ow));
    let xs = x.as_slice().expect("standard layout");
    y.as_slice_mut()
        .expect("fresh array")
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane_idx, out)| {
            let ci = plane_idx % c;
            let src = &xs[plane_idx * h * wd..(plane_idx + 1) * h * wd];
            let kern = &ws[ci * k * k..(ci + 1) * k * k];
            for ky in 0..k {
                let (oy_lo, oy_hi) = g.valid_range(ky, h, oh);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = g.valid_range(kx, wd, ow);
                    let kv = kern[ky * k + kx];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.padding;
                        let line = &src[iy * wd..(iy + 1) * wd];
                        let dst = &mut out[oy * ow..(oy + 1) * ow];
                        if g.stride == 1 {
                            let ix0 = ox_lo + kx - g.padding;
                            for (d, &s) in dst[ox_lo..ox_hi]
                                .iter_mut()
                                .zip(&line[ix0..ix0 + (ox_hi - ox_lo)])
                            {
                                *d += kv * s;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                dst[ox] += kv * line[ox * g.stride + kx - g.padding];
                            }
                        }
                    }
                }
            }
        });
    y
}
