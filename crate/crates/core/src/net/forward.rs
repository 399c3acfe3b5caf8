//! Forward pass with intermediate caching for backprop and activation taps.
//!
//! Convolution branches are evaluated as patch-matrix products (im2col).
//! Within a branch, output columns are ordered filter-major: column
//! f*pooled + j holds filter f at pooled position j. Max pooling runs on
//! the linear convolution outputs before the sigmoid (the two orders
//! commute because the sigmoid is monotone); winning positions are cached
//! for gradient routing.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::net::params::{DenseParams, Parameters};
use crate::net::spec::{conv_positions, pooled_positions, ConvSpec, Head, NetworkSpec};
use crate::net::{sigmoid, Scalar};

/// Activations of one tapped dense hidden layer for one utterance.
/// Rows are frames, columns are neurons.
#[derive(Debug, Clone)]
pub struct ActivationTrace<F> {
    pub utterance_id: String,
    /// 1-based dense hidden layer index.
    pub layer_index: usize,
    pub values: Array2<F>,
}

pub(crate) struct BranchCache<F> {
    /// (rows*positions) x patch_len patch matrix.
    pub patches: Array2<F>,
    pub positions: usize,
    /// Winning convolution position for each (row, pooled output) pair.
    pub argmax: Array2<usize>,
    /// Post-sigmoid branch output, rows x (filters*pooled).
    pub act: Array2<F>,
}

pub(crate) struct Cache<F> {
    pub time: Option<BranchCache<F>>,
    pub freq: Option<BranchCache<F>>,
    /// Input to the first dense layer.
    pub head_out: Array2<F>,
    /// Post-sigmoid dense hidden activations, in layer order.
    pub hidden: Vec<Array2<F>>,
    pub posteriors: Array2<F>,
}

enum PatchAxis {
    Time,
    Freq,
}

fn build_patches<F: Scalar>(
    x: &ArrayView2<F>,
    frames: usize,
    bands: usize,
    kernel: usize,
    axis: PatchAxis,
) -> (Array2<F>, usize) {
    let rows = x.nrows();
    match axis {
        PatchAxis::Time => {
            let positions = conv_positions(frames, kernel);
            let plen = kernel * bands;
            let mut patches = Array2::zeros((rows * positions, plen));
            for r in 0..rows {
                let row = x.row(r);
                for p in 0..positions {
                    patches
                        .row_mut(r * positions + p)
                        .assign(&row.slice(ndarray::s![p * bands..p * bands + plen]));
                }
            }
            (patches, positions)
        }
        PatchAxis::Freq => {
            let positions = conv_positions(bands, kernel);
            let plen = kernel * frames;
            let mut patches = Array2::zeros((rows * positions, plen));
            for r in 0..rows {
                let row = x.row(r);
                for p in 0..positions {
                    let mut dst = patches.row_mut(r * positions + p);
                    for f in 0..frames {
                        for j in 0..kernel {
                            dst[f * kernel + j] = row[f * bands + p + j];
                        }
                    }
                }
            }
            (patches, positions)
        }
    }
}

fn branch_forward<F: Scalar>(
    x: &ArrayView2<F>,
    frames: usize,
    bands: usize,
    conv: &ConvSpec,
    params: &DenseParams<F>,
    axis: PatchAxis,
) -> BranchCache<F> {
    let rows = x.nrows();
    let (patches, positions) = build_patches(x, frames, bands, conv.kernel_width, axis);
    let mut lin = patches.dot(&params.w);
    lin += &params.b;
    let pooled = pooled_positions(positions, conv.pool_width);
    let width = conv.num_filters * pooled;
    let mut act = Array2::zeros((rows, width));
    let mut argmax = Array2::zeros((rows, width));
    for r in 0..rows {
        for f in 0..conv.num_filters {
            for j in 0..pooled {
                let mut best_p = j * conv.pool_width;
                let mut best = lin[[r * positions + best_p, f]];
                for p in best_p + 1..(j + 1) * conv.pool_width {
                    let v = lin[[r * positions + p, f]];
                    if v > best {
                        best = v;
                        best_p = p;
                    }
                }
                act[[r, f * pooled + j]] = sigmoid(best);
                argmax[[r, f * pooled + j]] = best_p;
            }
        }
    }
    BranchCache {
        patches,
        positions,
        argmax,
        act,
    }
}

fn dense_forward<F: Scalar>(x: &Array2<F>, params: &DenseParams<F>) -> Array2<F> {
    let mut z = x.dot(&params.w);
    z += &params.b;
    z.mapv_inplace(sigmoid);
    z
}

fn softmax_rows<F: Scalar>(mut z: Array2<F>) -> Array2<F> {
    for mut row in z.axis_iter_mut(Axis(0)) {
        let mut max = row[0];
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    z
}

pub(crate) fn forward_cache<F: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<F>,
    input: &ArrayView2<F>,
) -> Result<Cache<F>> {
    params.validate_shapes(spec)?;
    if input.nrows() == 0 {
        return Err(Error::input("forward pass on an empty batch".to_string()));
    }
    if input.ncols() != spec.input_dim() {
        return Err(Error::input(format!(
            "input width {} does not match spec input_dim {} ({} frames x {} bands)",
            input.ncols(),
            spec.input_dim(),
            spec.input_frames,
            spec.input_bands
        )));
    }
    let (time, freq, head_out) = match &spec.head {
        Head::None => (None, None, input.to_owned()),
        Head::Freq { conv } => {
            let b = branch_forward(
                input,
                spec.input_frames,
                spec.input_bands,
                conv,
                params.freq.as_ref().expect("validated shapes"),
                PatchAxis::Freq,
            );
            let out = b.act.clone();
            (None, Some(b), out)
        }
        Head::TimeFreq { time, freq } => {
            let tb = branch_forward(
                input,
                spec.input_frames,
                spec.input_bands,
                time,
                params.time.as_ref().expect("validated shapes"),
                PatchAxis::Time,
            );
            let fb = branch_forward(
                input,
                spec.input_frames,
                spec.input_bands,
                freq,
                params.freq.as_ref().expect("validated shapes"),
                PatchAxis::Freq,
            );
            let mut out = Array2::zeros((input.nrows(), tb.act.ncols() + fb.act.ncols()));
            out.slice_mut(ndarray::s![.., ..tb.act.ncols()])
                .assign(&tb.act);
            out.slice_mut(ndarray::s![.., tb.act.ncols()..])
                .assign(&fb.act);
            (Some(tb), Some(fb), out)
        }
    };
    let mut hidden = Vec::with_capacity(spec.hidden.len());
    let mut prev = &head_out;
    for layer in &params.dense {
        hidden.push(dense_forward(prev, layer));
        prev = hidden.last().expect("just pushed");
    }
    let mut logits = prev.dot(&params.output.w);
    logits += &params.output.b;
    let posteriors = softmax_rows(logits);
    Ok(Cache {
        time,
        freq,
        head_out,
        hidden,
        posteriors,
    })
}

/// Class posteriors for a batch of stacked input rows.
pub fn forward<F: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<F>,
    input: &ArrayView2<F>,
) -> Result<Array2<F>> {
    Ok(forward_cache(spec, params, input)?.posteriors)
}

/// Posteriors plus the activations of one dense hidden layer.
pub fn forward_with_taps<F: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<F>,
    input: &ArrayView2<F>,
    layer_index: usize,
    utterance_id: &str,
) -> Result<(Array2<F>, ActivationTrace<F>)> {
    spec.validate_tap(layer_index)?;
    let cache = forward_cache(spec, params, input)?;
    let values = cache.hidden[layer_index - 1].clone();
    Ok((
        cache.posteriors,
        ActivationTrace {
            utterance_id: utterance_id.to_string(),
            layer_index,
            values,
        },
    ))
}
