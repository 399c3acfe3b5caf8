//! Parameter storage, initialization, and SGD updates.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::spec::{Head, NetworkSpec};
use crate::net::Scalar;

/// Weights (in_dim x out_dim) and bias for one affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> DenseParams<F> {
    fn zeros(rows: usize, cols: usize) -> Self {
        DenseParams {
            w: Array2::zeros((rows, cols)),
            b: Array1::zeros(cols),
        }
    }

    fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let w = Array2::from_shape_fn((rows, cols), |_| {
            F::from_f64((rng.random::<f64>() * 2.0 - 1.0) * bound)
        });
        DenseParams {
            w,
            b: Array1::zeros(cols),
        }
    }

    fn sgd_step(&mut self, grad: &DenseParams<F>, lr: F, l2: F) {
        ndarray::Zip::from(&mut self.w)
            .and(&grad.w)
            .for_each(|w, &g| {
                *w = *w - lr * (g + l2 * *w);
            });
        ndarray::Zip::from(&mut self.b)
            .and(&grad.b)
            .for_each(|b, &g| {
                *b = *b - lr * g;
            });
    }
}

/// All trainable parameters of a network, in forward order.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<F> {
    pub time: Option<DenseParams<F>>,
    pub freq: Option<DenseParams<F>>,
    pub dense: Vec<DenseParams<F>>,
    pub output: DenseParams<F>,
}

/// (rows, cols) of every weight matrix in storage order:
/// time conv, freq conv, dense layers, output.
///
/// Convolution weights are stored as patch matrices. A time-branch patch is
/// the contiguous slice of `kernel_width` stacked frames (row length
/// kernel*bands); a freq-branch patch gathers `kernel_width` adjacent bands
/// from every context frame, frame-major (row length frames*kernel).
fn shapes(spec: &NetworkSpec) -> Vec<(&'static str, usize, usize)> {
    let mut out = Vec::new();
    match &spec.head {
        Head::None => {}
        Head::Freq { conv } => {
            out.push((
                "freq",
                conv.kernel_width * spec.input_frames,
                conv.num_filters,
            ));
        }
        Head::TimeFreq { time, freq } => {
            out.push((
                "time",
                time.kernel_width * spec.input_bands,
                time.num_filters,
            ));
            out.push((
                "freq",
                freq.kernel_width * spec.input_frames,
                freq.num_filters,
            ));
        }
    }
    let mut prev = spec.head_output_dim();
    for &h in &spec.hidden {
        out.push(("dense", prev, h));
        prev = h;
    }
    out.push(("output", prev, spec.num_classes));
    out
}

/// Glorot-uniform initialization: each weight is drawn uniformly from
/// +-sqrt(6/(fan_in+fan_out)); biases start at zero. Layers are drawn in
/// storage order, weights row-major, from a ChaCha stream seeded by `seed`,
/// so a (spec, seed) pair fully determines the result.
pub fn init_network<F: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<Parameters<F>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut time = None;
    let mut freq = None;
    let mut dense = Vec::new();
    let mut output = None;
    for (kind, rows, cols) in shapes(spec) {
        let layer = DenseParams::glorot(rows, cols, &mut rng);
        match kind {
            "time" => time = Some(layer),
            "freq" => freq = Some(layer),
            "dense" => dense.push(layer),
            _ => output = Some(layer),
        }
    }
    Ok(Parameters {
        time,
        freq,
        dense,
        output: output.expect("shapes always ends with the output layer"),
    })
}

impl<F: Scalar> Parameters<F> {
    pub fn zeros_like(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut time = None;
        let mut freq = None;
        let mut dense = Vec::new();
        let mut output = None;
        for (kind, rows, cols) in shapes(spec) {
            let layer = DenseParams::zeros(rows, cols);
            match kind {
                "time" => time = Some(layer),
                "freq" => freq = Some(layer),
                "dense" => dense.push(layer),
                _ => output = Some(layer),
            }
        }
        Ok(Parameters {
            time,
            freq,
            dense,
            output: output.expect("shapes always ends with the output layer"),
        })
    }

    pub(crate) fn layers(&self) -> Vec<&DenseParams<F>> {
        let mut out = Vec::new();
        if let Some(t) = &self.time {
            out.push(t);
        }
        if let Some(f) = &self.freq {
            out.push(f);
        }
        out.extend(self.dense.iter());
        out.push(&self.output);
        out
    }

    pub(crate) fn layers_mut(&mut self) -> Vec<&mut DenseParams<F>> {
        let mut out = Vec::new();
        if let Some(t) = &mut self.time {
            out.push(t);
        }
        if let Some(f) = &mut self.freq {
            out.push(f);
        }
        out.extend(self.dense.iter_mut());
        out.push(&mut self.output);
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters in storage order (weights row-major, then bias).
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in self.layers() {
            out.extend(layer.w.iter().copied());
            out.extend(layer.b.iter().copied());
        }
        out
    }

    /// Inverse of [`Parameters::flatten`].
    pub fn assign_flat(&mut self, values: &[F]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::input(format!(
                "expected {} parameter values, got {}",
                self.num_params(),
                values.len()
            )));
        }
        let mut at = 0usize;
        for layer in self.layers_mut() {
            for w in layer.w.iter_mut() {
                *w = values[at];
                at += 1;
            }
            for b in layer.b.iter_mut() {
                *b = values[at];
                at += 1;
            }
        }
        Ok(())
    }

    /// Checks that stored shapes match a spec.
    pub fn validate_shapes(&self, spec: &NetworkSpec) -> Result<()> {
        spec.validate()?;
        let expected = shapes(spec);
        let have = self.layers();
        if expected.len() != have.len() {
            return Err(Error::input(format!(
                "parameter layer count {} does not match spec ({} layers)",
                have.len(),
                expected.len()
            )));
        }
        for (i, ((kind, rows, cols), layer)) in expected.iter().zip(have.iter()).enumerate() {
            if layer.w.nrows() != *rows || layer.w.ncols() != *cols || layer.b.len() != *cols {
                return Err(Error::input(format!(
                    "layer {i} ({kind}) has shape {}x{} (bias {}), spec requires {rows}x{cols}",
                    layer.w.nrows(),
                    layer.w.ncols(),
                    layer.b.len()
                )));
            }
        }
        Ok(())
    }

    /// One SGD step. L2 decay (toward zero) applies to weights only.
    pub fn sgd_step(&mut self, grads: &Parameters<F>, lr: f64, l2: f64) {
        let lr = F::from_f64(lr);
        let l2 = F::from_f64(l2);
        let gl: Vec<&DenseParams<F>> = grads.layers();
        for (layer, grad) in self.layers_mut().into_iter().zip(gl) {
            layer.sgd_step(grad, lr, l2);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers().iter().all(|l| {
            l.w.iter().all(|v| v.is_finite_scalar()) && l.b.iter().all(|v| v.is_finite_scalar())
        })
    }

    /// Converts storage scalar (f32 checkpoints to f64 verification nets).
    pub fn cast<G: Scalar>(&self) -> Parameters<G> {
        let conv = |l: &DenseParams<F>| DenseParams {
            w: l.w.mapv(|v| G::from_f64(v.to_f64())),
            b: l.b.mapv(|v| G::from_f64(v.to_f64())),
        };
        Parameters {
            time: self.time.as_ref().map(conv),
            freq: self.freq.as_ref().map(conv),
            dense: self.dense.iter().map(conv).collect(),
            output: conv(&self.output),
        }
    }
}
