//! Winograd F(4x4, 3x3) for dense 3x3 convolutions with stride 1 and padding 1.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array3, ArrayView2, ArrayView4, ArrayViewMut2, Axis};

use super::conv::ConvGeometry;
use super::Real;

const T: usize = 6;
const M: usize = 4;

/// Whether the fast path is used for this layer.
pub(super) fn applies(c: usize, cout: usize, h: usize, w: usize, g: ConvGeometry) -> bool {
    g == ConvGeometry::new(3, 1, 1) && c >= 16 && cout >= 16 && h * w >= 1024
}

fn bt<F: Real>(d: [F; T]) -> [F; T] {
    let (two, four, five) = (F::lit(2.0), F::lit(4.0), F::lit(5.0));
    [
        four * d[0] - five * d[2] + d[4],
        -four * (d[1] + d[2]) + d[3] + d[4],
        four * (d[1] - d[2]) - d[3] + d[4],
        two * (d[3] - d[1]) - d[2] + d[4],
        two * (d[1] - d[3]) - d[2] + d[4],
        four * d[1] - five * d[3] + d[5],
    ]
}

fn gk<F: Real>(g: [F; 3]) -> [F; T] {
    let (q, s, t, tf) = (
        F::lit(0.25),
        F::lit(1.0 / 6.0),
        F::lit(1.0 / 12.0),
        F::lit(1.0 / 24.0),
    );
    [
        q * g[0],
        -s * (g[0] + g[1] + g[2]),
        -s * (g[0] - g[1] + g[2]),
        tf * g[0] + t * g[1] + s * g[2],
        tf * g[0] - t * g[1] + s * g[2],
        g[2],
    ]
}

fn at<F: Real>(m: [F; T]) -> [F; M] {
    let (two, four, eight) = (F::lit(2.0), F::lit(4.0), F::lit(8.0));
    let (a, b) = (m[1] + m[2], m[1] - m[2]);
    let (c, d) = (m[3] + m[4], m[3] - m[4]);
    [
        m[0] + a + c,
        b + two * d,
        a + four * c,
        b + eight * d + m[5],
    ]
}

/// Kernel `(cout, c, 3, 3)` to the 36 transformed matrices `(36, cout, c)`.
pub(super) fn transform_kernel<F: Real>(w: ArrayView4<F>) -> Array3<F> {
    let (cout, c, _, _) = w.dim();
    let w = w.as_standard_layout();
    let ws = w.as_slice().expect("standard layout");
    let mut u = Array3::<F>::zeros((T * T, cout, c));
    let us = u.as_slice_mut().expect("fresh array");
    let plane = cout * c;
    let mut block = [[F::zero(); T * T]; 64];
    for (b, kernels) in ws.chunks(9 * 64).enumerate() {
        let n = kernels.len() / 9;
        for (k, dst) in kernels.chunks_exact(9).zip(block.iter_mut()) {
            let rows = [0, 1, 2].map(|y| gk([k[3 * y], k[3 * y + 1], k[3 * y + 2]]));
            for x in 0..T {
                let col = gk([rows[0][x], rows[1][x], rows[2][x]]);
                for (y, v) in col.into_iter().enumerate() {
                    dst[y * T + x] = v;
                }
            }
        }
        for e in 0..T * T {
            let run = &mut us[e * plane + b * 64..e * plane + b * 64 + n];
            for (d, src) in run.iter_mut().zip(&block) {
                *d = src[e];
            }
        }
    }
    u
}

/// One image: `plane` is `(c, h, w)` in standard order, `out` is `(cout, h * w)`.
///
/// Transforms run over a whole row of tiles at once, lane `tx` holding tile `tx`.
pub(super) fn conv3x3<F: Real>(
    plane: &[F],
    (c, h, w): (usize, usize, usize),
    u: &Array3<F>,
    out: &mut ArrayViewMut2<F>,
) {
    let cout = u.dim().1;
    let (th, tw) = (h.div_ceil(M), w.div_ceil(M));
    let tiles = th * tw;
    let (hp, wp) = (th * M + 2, tw * M + 2);

    let mut padded = vec![F::zero(); hp * wp];
    let mut v = vec![F::zero(); T * T * c * tiles];
    let mut lanes = vec![F::zero(); T * T * tw];
    let mut half = vec![F::zero(); T * T * tw];
    for ci in 0..c {
        let src = &plane[ci * h * w..(ci + 1) * h * w];
        for (dst, line) in padded[wp..].chunks_exact_mut(wp).zip(src.chunks_exact(w)) {
            dst[1..=w].copy_from_slice(line);
        }
        for ty in 0..th {
            for i in 0..T {
                let row = &padded[(ty * M + i) * wp..(ty * M + i + 1) * wp];
                for j in 0..T {
                    let lane = &mut lanes[(i * T + j) * tw..(i * T + j + 1) * tw];
                    for (tx, d) in lane.iter_mut().enumerate() {
                        *d = row[tx * M + j];
                    }
                }
            }
            for i in 0..T {
                for tx in 0..tw {
                    let r = bt(std::array::from_fn(|j| lanes[(i * T + j) * tw + tx]));
                    for (x, val) in r.into_iter().enumerate() {
                        half[(i * T + x) * tw + tx] = val;
                    }
                }
            }
            for x in 0..T {
                for tx in 0..tw {
                    let col = bt(std::array::from_fn(|i| half[(i * T + x) * tw + tx]));
                    for (y, val) in col.into_iter().enumerate() {
                        v[((y * T + x) * c + ci) * tiles + ty * tw + tx] = val;
                    }
                }
            }
        }
    }

    let mut m = vec![F::zero(); T * T * cout * tiles];
    for (xi, (mc, vc)) in m
        .chunks_exact_mut(cout * tiles)
        .zip(v.chunks_exact(c * tiles))
        .enumerate()
    {
        let vv = ArrayView2::from_shape((c, tiles), vc).expect("transformed input");
        let mut mv = ArrayViewMut2::from_shape((cout, tiles), mc).expect("transformed output");
        general_mat_mul(
            F::one(),
            &u.index_axis(Axis(0), xi),
            &vv,
            F::zero(),
            &mut mv,
        );
    }

    let mut half = vec![F::zero(); T * M * tw];
    for (o, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let dst = row.as_slice_mut().expect("standard layout");
        for ty in 0..th {
            let lane = |e: usize| {
                let at = (e * cout + o) * tiles + ty * tw;
                &m[at..at + tw]
            };
            for y in 0..T {
                let src: [&[F]; T] = std::array::from_fn(|x| lane(y * T + x));
                for tx in 0..tw {
                    let r = at(std::array::from_fn(|x| src[x][tx]));
                    for (x, val) in r.into_iter().enumerate() {
                        half[(y * M + x) * tw + tx] = val;
                    }
                }
            }
            let rows = M.min(h - ty * M);
            for x in 0..M {
                for tx in 0..tw {
                    let ox = tx * M + x;
                    if ox >= w {
                        continue;
                    }
                    let col = at(std::array::from_fn(|y| half[(y * M + x) * tw + tx]));
                    for (y, val) in col.into_iter().enumerate().take(rows) {
                        dst[(ty * M + y) * w + ox] = val;
                    }
                }
            }
        }
    }
}
