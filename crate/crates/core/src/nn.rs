//! Fully connected tanh networks with a flat parameter view.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autograd::{matmul, Tape, Var};
use crate::error::{Error, Result};

/// One affine layer; `weight` is `inputs × outputs`, `bias` is `1 × outputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array2::zeros((1, outputs)),
        }
    }
}

/// Multilayer perceptron with tanh hidden activations and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Dense>,
}

/// Orthogonal matrix of the given shape scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    let tall = rows >= cols;
    let (r, c) = if tall { (rows, cols) } else { (cols, rows) };
    let gauss = DMatrix::<f64>::from_fn(r, c, |_, _| rng.sample(StandardNormal));
    let qr = gauss.qr();
    let mut q = qr.q();
    let rdiag = qr.r();
    for j in 0..c {
        if rdiag[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        gain * if tall { q[(i, j)] } else { q[(j, i)] }
    })
}

impl Mlp {
    /// Zero-initialized network with layer widths `sizes` (input first).
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self {
            sizes: sizes.to_vec(),
            layers,
        }
    }

    /// Orthogonal init with gain √2 on hidden layers and `output_gain` on the
    /// final layer; biases start at zero.
    pub fn orthogonal_init<R: Rng + ?Sized>(
        sizes: &[usize],
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(sizes);
        let last = net.layers.len() - 1;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let gain = if l == last {
                output_gain
            } else {
                std::f64::consts::SQRT_2
            };
            let (i, o) = layer.weight.dim();
            layer.weight = orthogonal(i, o, gain, rng);
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Parameters in layer order, each layer as weight (row-major) then bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend(layer.weight.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension {
                what: "network parameter vector",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for layer in &mut self.layers {
            for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *v = flat[off];
                off += 1;
            }
        }
        Ok(())
    }

    /// Batched forward pass (rows are inputs).
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.input_dim(), "network input width");
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = matmul(&h, &layer.weight);
            for mut row in y.rows_mut() {
                row += &layer.bias.row(0);
            }
            if l != last {
                y.mapv_inplace(f64::tanh);
            }
            h = y;
        }
        h
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        self.forward(&row).into_raw_vec_and_offset().0
    }

    /// Record the forward pass on `tape`; returns the output node and the
    /// parameter leaves in flat order.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> (Var, Vec<Var>) {
        let last = self.layers.len() - 1;
        let mut params = Vec::with_capacity(2 * self.layers.len());
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = tape.leaf(layer.weight.clone());
            let b = tape.leaf(layer.bias.clone());
            params.push(w);
            params.push(b);
            h = tape.affine(h, w, b);
            if l != last {
                h = tape.tanh(h);
            }
        }
        (h, params)
    }

    /// Forward pass with a tangent in parameter space: returns the output and
    /// its directional derivative along `tangent` (flat parameter layout).
    pub fn jvp(&self, x: &Array2<f64>, tangent: &[f64]) -> (Array2<f64>, Array2<f64>) {
        assert_eq!(tangent.len(), self.num_params());
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        let mut dh = Array2::<f64>::zeros(x.dim());
        let mut off = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let (i, o) = layer.weight.dim();
            let dw =
                Array2::from_shape_vec((i, o), tangent[off..off + i * o].to_vec()).expect("dw");
            off += i * o;
            let db = &tangent[off..off + o];
            off += o;
            let mut y = matmul(&h, &layer.weight);
            let mut dy = matmul(&h, &dw) + matmul(&dh, &layer.weight);
            for (mut row, mut drow) in y.rows_mut().into_iter().zip(dy.rows_mut()) {
                row += &layer.bias.row(0);
                for (d, &b) in drow.iter_mut().zip(db) {
                    *d += b;
                }
            }
            if l != last {
                y.mapv_inplace(f64::tanh);
                ndarray::Zip::from(&mut dy)
                    .and(&y)
                    .for_each(|d, &t| *d *= 1.0 - t * t);
            }
            h = y;
            dh = dy;
        }
        (h, dh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::orthogonal_init(&[3, 8, 8, 2], 0.01, &mut rng);
        let flat = net.flat();
        assert_eq!(flat.len(), net.num_params());
        let mut other = Mlp::zeros(&[3, 8, 8, 2]);
        other.set_flat(&flat).unwrap();
        assert_eq!(other, net);
        assert_eq!(other.flat(), flat);
        assert!(other.set_flat(&flat[1..]).is_err());
    }

    #[test]
    fn orthogonal_columns_have_gain_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = orthogonal(10, 4, 2.0, &mut rng);
        let gram = w.t().dot(&w);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 4.0 } else { 0.0 };
                assert!((gram[[i, j]] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn jvp_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::orthogonal_init(&[2, 5, 5, 3], 1.0, &mut rng);
        let x = Array2::from_shape_fn((4, 2), |(i, j)| (i as f64 - 1.5) * 0.3 + j as f64 * 0.2);
        let v: Vec<f64> = (0..net.num_params())
            .map(|k| ((k * 37 % 11) as f64 - 5.0) / 10.0)
            .collect();
        let (y, dy) = net.jvp(&x, &v);
        assert_eq!(y, net.forward(&x));
        let h = 1e-6;
        let base = net.flat();
        let mut plus = net.clone();
        plus.set_flat(
            &base
                .iter()
                .zip(&v)
                .map(|(p, t)| p + h * t)
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let mut minus = net.clone();
        minus
            .set_flat(
                &base
                    .iter()
                    .zip(&v)
                    .map(|(p, t)| p - h * t)
                    .collect::<Vec<_>>(),
            )
            .unwrap();
        let fd = (plus.forward(&x) - minus.forward(&x)) / (2.0 * h);
        for (a, b) in fd.iter().zip(dy.iter()) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn linear_network_has_no_hidden_layer() {
        let mut net = Mlp::zeros(&[1, 1]);
        net.set_flat(&[2.0, 0.5]).unwrap();
        assert_eq!(net.forward_one(&[3.0]), vec![6.5]);
    }
}
