use ndarray::{Array4, ArrayView4, Zip};

use super::Real;

pub fn relu_inplace<F: Real>(x: &mut Array4<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Gradient of ReLU given its forward output.
pub fn relu_backward<F: Real>(output: ArrayView4<F>, gy: ArrayView4<F>) -> Array4<F> {
    let mut dx = gy.to_owned();
    Zip::from(&mut dx).and(&output).for_each(|d, &o| {
        if o <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

pub fn sigmoid<F: Real>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

/// `x * sigmoid(x)`.
pub fn silu_inplace<F: Real>(x: &mut Array4<F>) {
    x.mapv_inplace(|v| v * sigmoid(v));
}
