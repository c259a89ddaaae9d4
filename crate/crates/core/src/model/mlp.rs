use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{ModelError, Result};

/// Hidden-layer activation.
pub fn leaky_relu(z: f64, slope: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        slope * z
    }
}

fn leaky_relu_grad(z: f64, slope: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        slope
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Encoder output width.
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

/// Two-layer projection `h = LeakyReLU(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Activations kept from the forward pass for backpropagation.
pub struct ForwardCache {
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl MlpParams {
    pub fn zeros(dims: Dims) -> Self {
        MlpParams {
            w1: Array2::zeros((dims.input, dims.hidden)),
            b1: Array1::zeros(dims.hidden),
            w2: Array2::zeros((dims.hidden, dims.output)),
            b2: Array1::zeros(dims.output),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn xavier<R: Rng>(dims: Dims, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        for w in [&mut p.w1, &mut p.w2] {
            let (fan_in, fan_out) = w.dim();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            w.mapv_inplace(|_| dist.sample(rng));
        }
        p
    }

    pub fn dims(&self) -> Dims {
        Dims {
            input: self.w1.nrows(),
            hidden: self.w1.ncols(),
            output: self.w2.ncols(),
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        let d = self.dims();
        if self.b1.len() != d.hidden || self.w2.nrows() != d.hidden || self.b2.len() != d.output {
            return Err(ModelError::ShapeMismatch(format!(
                "inconsistent MLP shapes w1 {:?} b1 {} w2 {:?} b2 {}",
                self.w1.dim(),
                self.b1.len(),
                self.w2.dim(),
                self.b2.len()
            )));
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Row-batched forward pass.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>, slope: f64) -> Result<(Array2<f64>, ForwardCache)> {
        if x.ncols() != self.w1.nrows() {
            return Err(ModelError::ShapeMismatch(format!(
                "input width {} but W1 expects {}",
                x.ncols(),
                self.w1.nrows()
            )));
        }
        let pre = x.dot(&self.w1) + &self.b1;
        let hidden = pre.mapv(|z| leaky_relu(z, slope));
        let out = hidden.dot(&self.w2) + &self.b2;
        Ok((out, ForwardCache { pre, hidden }))
    }

    /// Gradients of a scalar loss with respect to every parameter, given the
    /// upstream gradient `d_out` of the batch outputs.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        cache: &ForwardCache,
        d_out: ArrayView2<'_, f64>,
        slope: f64,
    ) -> MlpParams {
        let w2 = cache.hidden.t().dot(&d_out);
        let b2 = d_out.sum_axis(Axis(0));
        let mut d_pre = d_out.dot(&self.w2.t());
        d_pre.zip_mut_with(&cache.pre, |g, &z| *g *= leaky_relu_grad(z, slope));
        let w1 = x.t().dot(&d_pre);
        let b1 = d_pre.sum_axis(Axis(0));
        MlpParams { w1, b1, w2, b2 }
    }
}

/// Single-vector forward pass.
pub fn mlp_forward(p: &MlpParams, x: ArrayView1<'_, f64>, slope: f64) -> Result<Array1<f64>> {
    p.check()?;
    let x2 = x.insert_axis(Axis(0));
    let (out, _) = p.forward_batch(x2, slope)?;
    Ok(out.row(0).to_owned())
}

/// Preference score `h_u . h_i`.
pub fn score(h_u: ArrayView1<'_, f64>, h_i: ArrayView1<'_, f64>) -> Result<f64> {
    if h_u.len() != h_i.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "score of {}- and {}-dim vectors",
            h_u.len(),
            h_i.len()
        )));
    }
    Ok(h_u.dot(&h_i))
}
