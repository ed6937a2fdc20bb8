use ndarray::{Array2, ArrayView2};

use super::Real;

/// Source coordinate sampling with half-pixel centers (`align_corners = false`).
fn sample_axis(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling of a single plane. Every output value is a convex
/// combination of at most four input values.
pub fn resize_bilinear<F: Real>(plane: ArrayView2<F>, out_h: usize, out_w: usize) -> Array2<F> {
    let (h, w) = plane.dim();
    assert!(h > 0 && w > 0 && out_h > 0 && out_w > 0, "empty resize");
    if (h, w) == (out_h, out_w) {
        return plane.to_owned();
    }
    let rows = sample_axis(out_h, h);
    let cols = sample_axis(out_w, w);
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let (y0, y1, ly) = rows[oy];
        let (x0, x1, lx) = cols[ox];
        let (ly, lx) = (F::lit(ly), F::lit(lx));
        let top = plane[[y0, x0]] * (F::one() - lx) + plane[[y0, x1]] * lx;
        let bottom = plane[[y1, x0]] * (F::one() - lx) + plane[[y1, x1]] * lx;
        top * (F::one() - ly) + bottom * ly
    })
}

/// Nearest-neighbour resampling, used for binary masks.
pub fn resize_nearest<T: Copy>(plane: ArrayView2<T>, out_h: usize, out_w: usize) -> Array2<T> {
    let (h, w) = plane.dim();
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let iy = ((oy * h) / out_h).min(h - 1);
        let ix = ((ox * w) / out_w).min(w - 1);
        plane[[iy, ix]]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn constant_plane_stays_constant() {
        let p = Array2::from_elem((8, 8), 1.0f32);
        let up = resize_bilinear(p.view(), 256, 256);
        assert!(up.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn downscale_by_two_averages_pairs() {
        let p = Array2::from_shape_fn((2, 4), |(_, j)| j as f64);
        let d = resize_bilinear(p.view(), 1, 2);
        assert_eq!(d[[0, 0]], 0.5);
        assert_eq!(d[[0, 1]], 2.5);
    }

    #[test]
    fn nearest_keeps_values_binary() {
        let p = Array2::from_shape_fn((3, 3), |(i, j)| u8::from(i == j));
        let up = resize_nearest(p.view(), 7, 7);
        assert!(up.iter().all(|&v| v <= 1));
        assert_eq!(up[[0, 0]], 1);
    }
}
