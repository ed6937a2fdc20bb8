use ndarray::{Array1, Array4, ArrayView4};

use super::Real;

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub eps: F,
    pub momentum: F,
}

/// Saved state of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<F> {
    xhat: Array4<F>,
    inv_std: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct BnGrads<F> {
    pub dx: Array4<F>,
    pub dgamma: Array1<F>,
    pub dbeta: Array1<F>,
}

impl<F: Real> BatchNorm2d<F> {
    /// Unit scale, zero shift, zero mean and unit variance.
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: F::lit(1e-5),
            momentum: F::lit(0.1),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `(scale, shift)` so that eval-mode output is `x * scale + shift`.
    pub fn folded(&self) -> (Vec<F>, Vec<F>) {
        self.gamma
            .iter()
            .zip(&self.beta)
            .zip(self.running_mean.iter().zip(&self.running_var))
            .map(|((&g, &b), (&m, &v))| {
                let scale = g / (v + self.eps).sqrt();
                (scale, b - m * scale)
            })
            .unzip()
    }

    /// Normalizes with the stored running statistics.
    pub fn forward_eval(&self, x: ArrayView4<F>) -> Array4<F> {
        let (scale, shift) = self.folded();
        let mut y = x.as_standard_layout().into_owned();
        apply_affine(&mut y, &scale, &shift);
        y
    }

    /// Normalizes with batch statistics. When `update_running` is set, the
    /// running statistics move toward the batch statistics by `momentum`
    /// (running variance uses the unbiased estimate).
    pub fn forward_train(
        &mut self,
        x: ArrayView4<F>,
        update_running: bool,
    ) -> (Array4<F>, BnCache<F>) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels(), "batch norm channel count");
        let hw = h * w;
        let count = n * hw;
        let mut xhat = x.as_standard_layout().into_owned();
        let mut inv_std = Array1::<F>::zeros(c);
        {
            let data = xhat.as_slice_mut().expect("standard layout");
            for ch in 0..c {
                let mut sum = 0.0f64;
                for b in 0..n {
                    let off = (b * c + ch) * hw;
                    sum += data[off..off + hw]
                        .iter()
                        .map(|v| v.to_f64().unwrap())
                        .sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0f64;
                for b in 0..n {
                    let off = (b * c + ch) * hw;
                    sq += data[off..off + hw]
                        .iter()
                        .map(|v| {
                            let d = v.to_f64().unwrap() - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
                let var = sq / count as f64;
                let istd = 1.0 / (var + self.eps.to_f64().unwrap()).sqrt();
                let (mean_f, istd_f) = (F::lit(mean), F::lit(istd));
                for b in 0..n {
                    let off = (b * c + ch) * hw;
                    for v in &mut data[off..off + hw] {
                        *v = (*v - mean_f) * istd_f;
                    }
                }
                inv_std[ch] = istd_f;
                if update_running {
                    let unbiased = if count > 1 {
                        sq / (count - 1) as f64
                    } else {
                        var
                    };
                    let m = self.momentum;
                    self.running_mean[ch] = (F::one() - m) * self.running_mean[ch] + m * mean_f;
                    self.running_var[ch] =
                        (F::one() - m) * self.running_var[ch] + m * F::lit(unbiased);
                }
            }
        }
        let mut y = xhat.clone();
        apply_affine(
            &mut y,
            self.gamma.as_slice().unwrap(),
            self.beta.as_slice().unwrap(),
        );
        (y, BnCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &BnCache<F>, gy: ArrayView4<F>) -> BnGrads<F> {
        let (n, c, h, w) = gy.dim();
        let hw = h * w;
        let count = F::lit((n * hw) as f64);
        let gy = gy.as_standard_layout();
        let gs = gy.as_slice().expect("standard layout");
        let xs = cache.xhat.as_slice().expect("standard layout");
        let mut dx = Array4::<F>::zeros((n, c, h, w));
        let mut dgamma = Array1::<F>::zeros(c);
        let mut dbeta = Array1::<F>::zeros(c);
        let dxs = dx.as_slice_mut().expect("fresh array");
        for ch in 0..c {
            let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
            for b in 0..n {
                let off = (b * c + ch) * hw;
                for (g, x) in gs[off..off + hw].iter().zip(&xs[off..off + hw]) {
                    let g = g.to_f64().unwrap();
                    sum_g += g;
                    sum_gx += g * x.to_f64().unwrap();
                }
            }
            let (sum_g, sum_gx) = (F::lit(sum_g), F::lit(sum_gx));
            dgamma[ch] = sum_gx;
            dbeta[ch] = sum_g;
            let k = self.gamma[ch] * cache.inv_std[ch] / count;
            for b in 0..n {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    dxs[i] = k * (count * gs[i] - sum_g - xs[i] * sum_gx);
                }
            }
        }
        BnGrads { dx, dgamma, dbeta }
    }
}

fn apply_affine<F: Real>(y: &mut Array4<F>, scale: &[F], shift: &[F]) {
    let (_, c, h, w) = y.dim();
    let hw = h * w;
    for (i, plane) in y
        .as_slice_mut()
        .expect("standard layout")
        .chunks_mut(hw)
        .enumerate()
    {
        let ch = i % c;
        let (s, t) = (scale[ch], shift[ch]);
        for v in plane {
            *v = *v * s + t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_mode_output_is_standardized_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array::from_shape_fn((3, 2, 4, 5), |(_, c, _, _)| {
            rng.random_range(-1.0..1.0) * (c as f64 + 1.0) + 5.0
        });
        let mut bn = BatchNorm2d::<f64>::identity(2);
        let (y, _) = bn.forward_train(x.view(), true);
        for c in 0..2 {
            let ch = y.slice(ndarray::s![.., c, .., ..]);
            let mean = ch.mean().unwrap();
            let var = ch.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(bn.running_mean.iter().all(|&m| (m - 0.5).abs() < 0.2));
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut bn = BatchNorm2d::<f64>::identity(1);
        bn.running_mean[0] = 2.0;
        bn.running_var[0] = 4.0 - bn.eps;
        bn.gamma[0] = 3.0;
        bn.beta[0] = 1.0;
        let x = Array4::from_elem((1, 1, 1, 2), 6.0);
        let y = bn.forward_eval(x.view());
        assert!((y[[0, 0, 0, 0]] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array::from_shape_fn((2, 3, 3, 3), |_| rng.random_range(-1.0..1.0));
        let probe = Array::from_shape_fn(x.dim(), |_| rng.random_range(-1.0..1.0));
        let mut bn = BatchNorm2d::<f64>::identity(3);
        bn.gamma = Array1::from(vec![0.5, 1.5, -2.0]);
        bn.beta = Array1::from(vec![0.1, 0.0, 0.3]);
        let objective = |bn: &mut BatchNorm2d<f64>, x: &Array4<f64>| {
            let (y, _) = bn.forward_train(x.view(), false);
            (&y * &probe).sum()
        };
        let (_, cache) = bn.forward_train(x.view(), false);
        let grads = bn.backward(&cache, probe.view());
        let h = 1e-6;
        for idx in [(0, 0, 0, 0), (1, 2, 1, 2), (0, 1, 2, 0)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let numeric = (objective(&mut bn, &xp) - objective(&mut bn, &xm)) / (2.0 * h);
            assert!(
                (numeric - grads.dx[idx]).abs() < 1e-6,
                "{numeric} vs {}",
                grads.dx[idx]
            );
        }
        let mut bp = bn.clone();
        bp.gamma[1] += h;
        let mut bm = bn.clone();
        bm.gamma[1] -= h;
        let numeric = (objective(&mut bp, &x) - objective(&mut bm, &x)) / (2.0 * h);
        assert!((numeric - grads.dgamma[1]).abs() < 1e-6);
    }
}
