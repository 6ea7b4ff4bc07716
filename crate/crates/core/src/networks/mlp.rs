use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense layer `y = x · W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn orthogonal<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: orthogonal_matrix(inputs, outputs, gain, rng),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }
}

/// Matrix with orthonormal rows or columns (whichever is shorter), times `gain`.
fn orthogonal_matrix<T: Real, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    gain: f64,
    rng: &mut R,
) -> Array2<T> {
    let (long, short) = if rows >= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    // columns of `basis` are orthonormalised with modified Gram-Schmidt
    let mut basis = Array2::<f64>::from_shape_fn((long, short), |_| rng.sample(StandardNormal));
    for j in 0..short {
        for k in 0..j {
            let dot = basis.column(j).dot(&basis.column(k));
            let prev = basis.column(k).to_owned();
            basis.column_mut(j).scaled_add(-dot, &prev);
        }
        let norm = basis.column(j).dot(&basis.column(j)).sqrt();
        basis.column_mut(j).mapv_inplace(|x| x / norm);
    }
    let oriented = if rows >= cols {
        basis
    } else {
        basis.reversed_axes()
    };
    Array2::from_shape_fn((rows, cols), |ij| T::lit(gain * oriented[ij]))
}

/// Multilayer perceptron with ReLU hidden activations and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

/// Inputs seen by every layer during a forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    layer_inputs: Vec<Array2<T>>,
}

impl<T: Real> Mlp<T> {
    /// `widths` lists every layer width including input and output.
    pub fn zeros(widths: &[usize]) -> Self {
        assert!(
            widths.len() >= 2,
            "an mlp needs at least input and output widths"
        );
        Self {
            layers: widths
                .windows(2)
                .map(|w| Linear::zeros(w[0], w[1]))
                .collect(),
        }
    }

    pub fn orthogonal<R: Rng + ?Sized>(
        widths: &[usize],
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(
            widths.len() >= 2,
            "an mlp needs at least input and output widths"
        );
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i + 1 == n { output_gain } else { hidden_gain };
                Linear::orthogonal(w[0], w[1], gain, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs()];
        w.extend(self.layers.iter().map(Linear::outputs));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(Linear::outputs).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.widths())
    }

    /// Checks that consecutive layers chain and every entry is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::ShapeMismatch("mlp has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: bias length {} vs {} outputs",
                    l.bias.len(),
                    l.outputs()
                )));
            }
            if i > 0 && self.layers[i - 1].outputs() != l.inputs() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    l.inputs(),
                    i - 1,
                    self.layers[i - 1].outputs()
                )));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "layer {i} holds non-finite parameters"
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &Array2<T>) -> Array2<T> {
        self.forward_cached(input).0
    }

    pub fn forward_cached(&self, input: &Array2<T>) -> (Array2<T>, ForwardCache<T>) {
        let n = self.layers.len();
        let mut layer_inputs = Vec::with_capacity(n);
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = x.dot(&layer.weight);
            z += &layer.bias;
            if i + 1 < n {
                z.mapv_inplace(|v| v.max(T::zero()));
            }
            layer_inputs.push(x);
            x = z;
        }
        (x, ForwardCache { layer_inputs })
    }

    /// Reverse-mode gradients of a scalar loss given `d loss / d output`.
    /// ReLU's subgradient at zero is taken as zero.
    pub fn backward(&self, cache: &ForwardCache<T>, upstream: &Array2<T>) -> Result<Self> {
        let batch = cache.layer_inputs.first().map(|x| x.nrows()).unwrap_or(0);
        if upstream.dim() != (batch, self.output_width()) {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {:?} vs expected ({batch}, {})",
                upstream.dim(),
                self.output_width()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut dz = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.layer_inputs[i];
            let weight = x.t().dot(&dz).as_standard_layout().into_owned();
            let bias = dz.sum_axis(Axis(0));
            if i > 0 {
                let mut dx = dz.dot(&layer.weight.t());
                // x is the ReLU output of the previous layer: x > 0 iff pre-activation > 0
                ndarray::Zip::from(&mut dx).and(x).for_each(|d, &h| {
                    if h <= T::zero() {
                        *d = T::zero();
                    }
                });
                dz = dx;
            }
            grads.push(Linear { weight, bias });
        }
        grads.reverse();
        Ok(Self { layers: grads })
    }

    pub fn params(&self) -> impl Iterator<Item = &[T]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weight.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weight.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w: Array2<f64> = orthogonal_matrix(16, 4, 1.0, &mut rng);
        let gram = w.t().dot(&w);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - expect).abs() < 1e-12);
            }
        }
        let wide: Array2<f64> = orthogonal_matrix(4, 16, 2.0, &mut rng);
        let gram = wide.dot(&wide.t());
        assert!((gram[[2, 2]] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_forward_to_bias() {
        let mut mlp = Mlp::<f64>::zeros(&[4, 8, 8, 2]);
        mlp.layers[2].bias[1] = 0.25;
        let out = mlp.forward(&Array2::from_elem((3, 4), 1.7));
        assert_eq!(out.row(1).to_vec(), vec![0.0, 0.25]);
    }

    #[test]
    fn upstream_shape_is_checked() {
        let mlp = Mlp::<f64>::zeros(&[4, 4, 1]);
        let (_, cache) = mlp.forward_cached(&Array2::zeros((5, 4)));
        let err = mlp.backward(&cache, &Array2::zeros((5, 2))).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn broken_chain_is_rejected() {
        let mut mlp = Mlp::<f64>::zeros(&[4, 4, 1]);
        mlp.layers[1] = Linear::zeros(3, 1);
        assert!(matches!(mlp.validate(), Err(Error::ShapeMismatch(_))));
    }
}
