//! Fully connected classifier head: ReLU hidden layers, softmax output, and
//! the frame-level cross-entropy objective.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::conv::{relu_backward, relu_inplace};
use crate::error::{Error, Result};
use crate::init::glorot_uniform;
use crate::Scalar;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-30;

/// `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    weights: Array2<T>,
    biases: Array1<T>,
}

impl<T: Scalar> Affine<T> {
    pub fn new(weights: Array2<T>, biases: Array1<T>) -> Result<Self> {
        if weights.nrows() != biases.len() || weights.is_empty() {
            return Err(Error::Shape(format!(
                "affine weights {:?} with {} biases",
                weights.dim(),
                biases.len()
            )));
        }
        Ok(Self { weights, biases })
    }

    pub fn random<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, rng: &mut R) -> Result<Self> {
        Self::new(
            glorot_uniform(output_dim, input_dim, input_dim, output_dim, rng),
            Array1::zeros(output_dim),
        )
    }

    pub fn zeros(input_dim: usize, output_dim: usize) -> Result<Self> {
        Self::new(Array2::zeros((output_dim, input_dim)), Array1::zeros(output_dim))
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Array2<T> {
        &mut self.weights
    }

    pub fn biases(&self) -> &Array1<T> {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut Array1<T> {
        &mut self.biases
    }

    pub fn parts_mut(&mut self) -> (&mut Array2<T>, &mut Array1<T>) {
        (&mut self.weights, &mut self.biases)
    }

    pub fn forward_batch(&self, input: ArrayView2<'_, T>) -> Array2<T> {
        input.dot(&self.weights.t()) + &self.biases
    }
}

#[derive(Debug, Clone)]
pub struct AffineGradients<T> {
    pub weights: Array2<T>,
    pub biases: Array1<T>,
}

/// Hidden layers followed by a softmax output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DnnHead<T> {
    hidden: Vec<Affine<T>>,
    output: Affine<T>,
}

impl<T: Scalar> DnnHead<T> {
    pub fn new(hidden: Vec<Affine<T>>, output: Affine<T>) -> Result<Self> {
        let mut prev: Option<usize> = None;
        for layer in hidden.iter().chain(std::iter::once(&output)) {
            if let Some(p) = prev {
                if layer.input_dim() != p {
                    return Err(Error::Shape(format!(
                        "layer expects {} inputs but previous layer produces {p}",
                        layer.input_dim()
                    )));
                }
            }
            prev = Some(layer.output_dim());
        }
        Ok(Self { hidden, output })
    }

    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dims: &[usize],
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut hidden = Vec::with_capacity(hidden_dims.len());
        let mut prev = input_dim;
        for &d in hidden_dims {
            hidden.push(Affine::random(prev, d, rng)?);
            prev = d;
        }
        Self::new(hidden, Affine::random(prev, num_classes, rng)?)
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().unwrap_or(&self.output).input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.output.output_dim()
    }

    /// Layer widths from the input to the class count, e.g. `[450, 512, 512, C]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.hidden.iter().map(Affine::output_dim))
            .chain(std::iter::once(self.num_classes()))
            .collect()
    }

    pub fn hidden(&self) -> &[Affine<T>] {
        &self.hidden
    }

    pub fn hidden_mut(&mut self) -> &mut [Affine<T>] {
        &mut self.hidden
    }

    pub fn output(&self) -> &Affine<T> {
        &self.output
    }

    pub fn output_mut(&mut self) -> &mut Affine<T> {
        &mut self.output
    }

    pub fn parts_mut(&mut self) -> (&mut [Affine<T>], &mut Affine<T>) {
        (&mut self.hidden, &mut self.output)
    }

    /// Inserts `layers` between the last hidden layer and the output layer.
    ///
    /// The output layer is kept when its fan-in still matches; otherwise its
    /// weights are replaced by `fallback_output_weights` and its biases kept.
    pub(crate) fn insert_before_output(
        &mut self,
        layers: Vec<Affine<T>>,
        fallback_output_weights: Array2<T>,
    ) -> Result<()> {
        let mut hidden = self.hidden.clone();
        hidden.extend(layers);
        let mut output = self.output.clone();
        let fan_in = hidden.last().map_or(self.input_dim(), Affine::output_dim);
        if output.input_dim() != fan_in {
            output = Affine::new(fallback_output_weights, output.biases.clone())?;
        }
        *self = Self::new(hidden, output)?;
        Ok(())
    }

    pub fn forward_batch(&self, input: ArrayView2<'_, T>) -> Result<HeadForward<T>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "head input has {} columns, expected {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        let mut activations = Vec::with_capacity(self.hidden.len() + 1);
        activations.push(input.to_owned());
        for layer in &self.hidden {
            let mut a = layer.forward_batch(activations.last().expect("input pushed").view());
            relu_inplace(&mut a);
            activations.push(a);
        }
        let mut probs = self.output.forward_batch(activations.last().expect("input pushed").view());
        softmax_rows(&mut probs);
        Ok(HeadForward { activations, probs })
    }

    /// Gradients of the batch-mean cross-entropy; also returns the gradient
    /// with respect to the head input.
    pub fn backward_batch(&self, cache: &HeadForward<T>, labels: &[usize]) -> Result<(HeadGradients<T>, Array2<T>)> {
        let batch = cache.probs.nrows();
        if labels.len() != batch {
            return Err(Error::Shape(format!("{} labels for batch of {batch}", labels.len())));
        }
        let classes = self.num_classes();
        let mut delta = cache.probs.clone();
        for (row, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::InvalidLabel { label, num_classes: classes });
            }
            delta[[row, label]] -= T::one();
        }
        delta /= T::of(batch as f64);

        let layers: Vec<&Affine<T>> = self.hidden.iter().chain(std::iter::once(&self.output)).collect();
        let mut grads = Vec::with_capacity(layers.len());
        for (idx, layer) in layers.iter().enumerate().rev() {
            let input = &cache.activations[idx];
            grads.push(AffineGradients {
                weights: delta.t().dot(input),
                biases: delta.sum_axis(Axis(0)),
            });
            let mut d_input = delta.dot(&layer.weights);
            if idx > 0 {
                relu_backward(&mut d_input, input);
            }
            delta = d_input;
        }
        grads.reverse();
        let output = grads.pop().expect("output layer gradient");
        Ok((HeadGradients { hidden: grads, output }, delta))
    }
}

#[derive(Debug, Clone)]
pub struct HeadForward<T> {
    /// Input followed by each rectified hidden activation.
    pub activations: Vec<Array2<T>>,
    /// `B × C` class posteriors.
    pub probs: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct HeadGradients<T> {
    pub hidden: Vec<AffineGradients<T>>,
    pub output: AffineGradients<T>,
}

/// Row-wise softmax with max-logit subtraction.
pub fn softmax_rows<T: Scalar>(logits: &mut Array2<T>) {
    for mut row in logits.outer_iter_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

pub fn softmax<T: Scalar>(logits: ArrayView1<'_, T>) -> Array1<T> {
    let mut m = logits.to_owned().insert_axis(Axis(0));
    softmax_rows(&mut m);
    m.remove_axis(Axis(0))
}

/// Class posteriors for a single input vector.
pub fn dnn_forward<T: Scalar>(input: ArrayView1<'_, T>, head: &DnnHead<T>) -> Result<Array1<T>> {
    let batch = input.insert_axis(Axis(0));
    Ok(head.forward_batch(batch)?.probs.remove_axis(Axis(0)))
}

/// `−ln p[label]`, with `p` clamped at [`PROB_FLOOR`].
pub fn cross_entropy<T: Scalar>(probs: ArrayView1<'_, T>, label: usize) -> Result<T> {
    let p = *probs.get(label).ok_or(Error::InvalidLabel {
        label,
        num_classes: probs.len(),
    })?;
    Ok(-p.max(T::of(PROB_FLOOR)).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Explicit nested-loop matrix arithmetic, independent of ndarray's dot.
    fn matrix_oracle(input: &[f64], head: &DnnHead<f64>) -> Vec<f64> {
        let affine = |x: &[f64], layer: &Affine<f64>| -> Vec<f64> {
            (0..layer.output_dim())
                .map(|o| {
                    let mut acc = layer.biases()[o];
                    for (i, xi) in x.iter().enumerate() {
                        acc += layer.weights()[[o, i]] * xi;
                    }
                    acc
                })
                .collect()
        };
        let mut x = input.to_vec();
        for layer in head.hidden() {
            x = affine(&x, layer).into_iter().map(|v| v.max(0.0)).collect();
        }
        let logits = affine(&x, head.output());
        let max = logits.iter().cloned().fold(f64::MIN, f64::max);
        let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|e| e / total).collect()
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = DnnHead::<f64>::random(7, &[5, 4], 6, &mut rng).unwrap();
        for _ in 0..20 {
            let x: Array1<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = dnn_forward(x.view(), &head).unwrap();
            assert!((p.sum() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_network_is_uniform() {
        let head = DnnHead::<f64>::new(
            vec![Affine::zeros(3, 4).unwrap()],
            Affine::zeros(4, 5).unwrap(),
        )
        .unwrap();
        let p = dnn_forward(array![1.0, -2.0, 0.5].view(), &head).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut head = DnnHead::<f64>::random(6, &[8, 8, 5], 4, &mut rng).unwrap();
        for layer in head.hidden_mut() {
            layer.biases_mut().mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        for _ in 0..10 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = dnn_forward(ArrayView1::from(&x), &head).unwrap();
            for (a, b) in p.iter().zip(matrix_oracle(&x, &head)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn input_dimension_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = DnnHead::<f64>::random(3, &[2], 2, &mut rng).unwrap();
        assert!(matches!(dnn_forward(array![1.0, 2.0].view(), &head), Err(Error::Shape(_))));
        assert!(DnnHead::new(vec![Affine::<f64>::zeros(3, 4).unwrap()], Affine::zeros(5, 2).unwrap()).is_err());
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p: Array1<f64> = softmax(array![50.0f64, -50.0, 49.0].view());
        assert!((p.sum() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|v| v.is_finite()));
        let p: Array1<f32> = softmax(array![1000.0f32, 999.0].view());
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_entropy_values() {
        assert_eq!(cross_entropy(array![0.0, 1.0, 0.0].view(), 1).unwrap(), 0.0);
        let c = 7;
        let uniform = Array1::from_elem(c, 1.0 / c as f64);
        assert!((cross_entropy(uniform.view(), 3).unwrap() - (c as f64).ln()).abs() < 1e-12);
        let probs = array![0.2, 0.3, 0.5];
        assert!((cross_entropy(probs.view(), 2).unwrap() + 0.5f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(array![1.0f64, 0.0].view(), 1).unwrap().is_finite());
        assert!(matches!(cross_entropy(probs.view(), 3), Err(Error::InvalidLabel { .. })));
    }

    #[test]
    fn logit_gradient_is_probs_minus_one_hot() {
        let head = DnnHead::<f64>::new(vec![], Affine::new(Array2::eye(3), Array1::zeros(3)).unwrap()).unwrap();
        let input = array![[0.3, -1.2, 2.0]];
        let cache = head.forward_batch(input.view()).unwrap();
        let (_, d_input) = head.backward_batch(&cache, &[1]).unwrap();
        // identity output layer: d_input equals d_logits
        let mut expected = cache.probs.row(0).to_owned();
        expected[1] -= 1.0;
        for (a, b) in d_input.row(0).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        // numerical check of the identity
        let loss = |z: &Array1<f64>| cross_entropy(softmax(z.view()).view(), 1).unwrap();
        let z = input.row(0).to_owned();
        for i in 0..3 {
            let mut plus = z.clone();
            plus[i] += 1e-6;
            let mut minus = z.clone();
            minus[i] -= 1e-6;
            let numeric = (loss(&plus) - loss(&minus)) / 2e-6;
            assert!((numeric - expected[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn insert_before_output_keeps_matching_output_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut head = DnnHead::<f64>::random(4, &[6], 3, &mut rng).unwrap();
        let before = head.output().clone();
        head.insert_before_output(
            vec![Affine::random(6, 6, &mut rng).unwrap()],
            Array2::zeros((3, 6)),
        )
        .unwrap();
        assert_eq!(head.dims(), vec![4, 6, 6, 3]);
        assert_eq!(head.output(), &before);
    }
}
