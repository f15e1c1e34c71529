//! SGD training with backpropagation through time, and binary-connect
//! retraining that manufactures beacons for the search.
//!
//! Training math runs in f64 while parameters stay f32, so runs are
//! bit-reproducible from the seed. The loss is the mean per-step
//! cross-entropy of the frame-level softmax against the sequence label.
//!
//! Binary-connect retraining quantizes the matrix weights per assignment for
//! every forward/backward pass but applies the updates to retained
//! full-precision weights. The quantizer backward is a straight-through
//! estimator: identity inside the clip range, zero outside.

use crate::dataset::Sample;
use crate::quant::{fixed16_format_for, mmse_clip_threshold, Precision, QuantError};
use crate::sru::{
    network_forward, predict_label, sigmoid, LayerParams, Matrix, NetDims, NetError,
    QuantAssignment, SruNetwork,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch} (loss not finite)")]
    Diverged { epoch: usize },
    #[error("validation error {got:.4} exceeds sanity bound {bound:.4}")]
    SanityBound { got: f64, bound: f64 },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Quant(#[from] QuantError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// baseline training fails if validation error ends above this
    pub max_val_error: f64,
    /// rescale each batch gradient to this global norm when it exceeds it;
    /// recurrent nets explode without some guard
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 1.0,
            batch_size: 32,
            seed: 7,
            max_val_error: 0.20,
            max_grad_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BeaconKind {
    General,
    FirstLayer2Bit,
    FirstLayerFix16,
}

/// Retrained full-precision parameters tailored to one precision assignment.
#[derive(Debug, Clone)]
pub struct Beacon {
    pub network: SruNetwork,
    pub source_genome: Vec<u8>,
    pub kind: BeaconKind,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: SruNetwork,
    pub val_error: f64,
    pub epoch_losses: Vec<f64>,
}

/// Fresh network with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) matrix
/// weights and zero biases.
pub fn random_network(dims: NetDims, seed: u64) -> SruNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = SruNetwork::zeros(dims);
    let fill = |m: &mut Matrix, rng: &mut ChaCha8Rng| {
        let bound = 1.0 / (m.cols as f64).sqrt();
        for v in m.data.iter_mut() {
            *v = rng.gen_range(-bound..bound) as f32;
        }
    };
    for layer in &mut net.layers {
        match layer {
            LayerParams::BiSru { dirs } => {
                for d in dirs {
                    fill(&mut d.w, &mut rng);
                    fill(&mut d.wf, &mut rng);
                    fill(&mut d.wr, &mut rng);
                }
            }
            LayerParams::Projection { w } => fill(w, &mut rng),
            LayerParams::Fc { w, .. } => fill(w, &mut rng),
        }
    }
    net
}

/// Fraction of samples whose predicted label differs from the truth.
pub fn classification_error(net: &SruNetwork, samples: &[Sample]) -> Result<f64, NetError> {
    let mut wrong = 0usize;
    for s in samples {
        let scores = network_forward(net, &s.seq)?;
        if predict_label(&scores) != s.label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / samples.len().max(1) as f64)
}

// ---------------------------------------------------------------------------
// forward with caches + backward
// ---------------------------------------------------------------------------

struct DirCache {
    /// time indices in processing order (reversed for the backward direction)
    order: Vec<usize>,
    uw: Vec<Vec<f64>>,
    f: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

enum LayerCache {
    BiSru { dirs: Vec<DirCache> },
    Projection,
    Fc { probs: Vec<Vec<f64>> },
}

struct ForwardCache {
    /// inputs[l][t] is the input vector layer l saw at time t
    inputs: Vec<Vec<Vec<f64>>>,
    layers: Vec<LayerCache>,
}

fn forward_cached(
    net: &SruNetwork,
    sequence: &[Vec<f64>],
    label: usize,
) -> Result<(ForwardCache, f64), NetError> {
    if sequence.is_empty() {
        return Err(NetError::EmptySequence);
    }
    if sequence[0].len() != net.dims.input_dim {
        return Err(NetError::DimensionMismatch {
            what: "network input",
            expected: net.dims.input_dim,
            got: sequence[0].len(),
        });
    }
    let t_len = sequence.len();
    let mut inputs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(net.layers.len());
    let mut caches: Vec<LayerCache> = Vec::with_capacity(net.layers.len());
    let mut steps: Vec<Vec<f64>> = sequence.to_vec();
    let mut loss = 0.0;
    for layer in &net.layers {
        inputs.push(steps.clone());
        match layer {
            LayerParams::BiSru { dirs } => {
                let hidden = dirs[0].w.rows;
                let mut dir_caches = Vec::with_capacity(dirs.len());
                let mut outputs = vec![vec![0.0; hidden * dirs.len()]; t_len];
                for (d, p) in dirs.iter().enumerate() {
                    let order: Vec<usize> = if d == 1 {
                        (0..t_len).rev().collect()
                    } else {
                        (0..t_len).collect()
                    };
                    let mut cache = DirCache {
                        order: order.clone(),
                        uw: Vec::with_capacity(t_len),
                        f: Vec::with_capacity(t_len),
                        r: Vec::with_capacity(t_len),
                        c: Vec::with_capacity(t_len),
                    };
                    let mut c_prev = vec![0.0; hidden];
                    for &t in &order {
                        let x_t = &steps[t];
                        let uw = p.w.mxv(x_t);
                        let uf = p.wf.mxv(x_t);
                        let ur = p.wr.mxv(x_t);
                        let mut c = vec![0.0; hidden];
                        let mut f = vec![0.0; hidden];
                        let mut r = vec![0.0; hidden];
                        for i in 0..hidden {
                            f[i] = sigmoid(uf[i] + p.bf[i] as f64);
                            r[i] = sigmoid(ur[i] + p.br[i] as f64);
                            c[i] = f[i] * c_prev[i] + (1.0 - f[i]) * uw[i];
                            let highway = if x_t.len() == hidden { x_t[i] } else { uw[i] };
                            outputs[t][d * hidden + i] =
                                r[i] * c[i].tanh() + (1.0 - r[i]) * highway;
                        }
                        c_prev = c.clone();
                        cache.uw.push(uw);
                        cache.f.push(f);
                        cache.r.push(r);
                        cache.c.push(c);
                    }
                    dir_caches.push(cache);
                }
                caches.push(LayerCache::BiSru { dirs: dir_caches });
                steps = outputs;
            }
            LayerParams::Projection { w } => {
                caches.push(LayerCache::Projection);
                steps = steps.iter().map(|x| w.mxv(x)).collect();
            }
            LayerParams::Fc { w, b } => {
                let mut probs = Vec::with_capacity(t_len);
                for x in &steps {
                    let mut z = w.mxv(x);
                    for (zi, bi) in z.iter_mut().zip(b) {
                        *zi += *bi as f64;
                    }
                    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    loss -= (z[label] - lse) / t_len as f64;
                    probs.push(z.iter().map(|v| (v - lse).exp()).collect());
                }
                caches.push(LayerCache::Fc { probs });
                steps = Vec::new();
            }
        }
    }
    Ok((ForwardCache { inputs, layers: caches }, loss))
}

/// out[c] += W^T dvec
fn tmxv_acc(w: &Matrix, dvec: &[f64], out: &mut [f64]) {
    for row in 0..w.rows {
        let dv = dvec[row];
        if dv == 0.0 {
            continue;
        }
        let base = row * w.cols;
        for col in 0..w.cols {
            out[col] += w.data[base + col] as f64 * dv;
        }
    }
}

/// grads[r, c] += dvec[r] * x[c]
fn outer_acc(grads: &mut [f64], dvec: &[f64], x: &[f64]) {
    for (row, &dv) in dvec.iter().enumerate() {
        let base = row * x.len();
        for (col, &xv) in x.iter().enumerate() {
            grads[base + col] += dv * xv;
        }
    }
}

/// Start offset of each layer's parameters in the flattened vector.
fn layer_offsets(net: &SruNetwork) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(net.specs.len());
    let mut off = 0;
    for spec in &net.specs {
        offsets.push(off);
        off += spec.param_count();
    }
    offsets
}

/// Mean per-step cross-entropy of the label under the frame softmax.
pub fn sequence_loss(net: &SruNetwork, sequence: &[Vec<f64>], label: usize) -> Result<f64, NetError> {
    forward_cached(net, sequence, label).map(|(_, loss)| loss)
}

/// Accumulates dLoss/dParam into `grads` (flatten order) and returns the loss.
pub fn loss_and_gradient(
    net: &SruNetwork,
    sequence: &[Vec<f64>],
    label: usize,
    grads: &mut [f64],
) -> Result<f64, NetError> {
    let (cache, loss) = forward_cached(net, sequence, label)?;
    let t_len = sequence.len();
    let offsets = layer_offsets(net);
    // d loss / d layer-output, in time order; seeded by the FC layer
    let mut dsteps: Vec<Vec<f64>> = Vec::new();
    for (l, layer) in net.layers.iter().enumerate().rev() {
        let x = &cache.inputs[l];
        let off = offsets[l];
        match (layer, &cache.layers[l]) {
            (LayerParams::Fc { w, .. }, LayerCache::Fc { probs }) => {
                let in_dim = w.cols;
                let out_dim = w.rows;
                let mut dx = vec![vec![0.0; in_dim]; t_len];
                for t in 0..t_len {
                    let mut dz = probs[t].clone();
                    dz[label] -= 1.0;
                    for v in dz.iter_mut() {
                        *v /= t_len as f64;
                    }
                    outer_acc(&mut grads[off..off + out_dim * in_dim], &dz, &x[t]);
                    for (i, v) in dz.iter().enumerate() {
                        grads[off + out_dim * in_dim + i] += v;
                    }
                    tmxv_acc(w, &dz, &mut dx[t]);
                }
                dsteps = dx;
            }
            (LayerParams::Projection { w }, LayerCache::Projection) => {
                let in_dim = w.cols;
                let mut dx = vec![vec![0.0; in_dim]; t_len];
                for t in 0..t_len {
                    outer_acc(&mut grads[off..off + w.rows * in_dim], &dsteps[t], &x[t]);
                    tmxv_acc(w, &dsteps[t], &mut dx[t]);
                }
                dsteps = dx;
            }
            (LayerParams::BiSru { dirs }, LayerCache::BiSru { dirs: dir_caches }) => {
                let hidden = dirs[0].w.rows;
                let in_dim = dirs[0].w.cols;
                let matched = in_dim == hidden;
                let dir_stride = 3 * hidden * in_dim + 2 * hidden;
                let mut dx = vec![vec![0.0; in_dim]; t_len];
                for (d, (p, dc)) in dirs.iter().zip(dir_caches).enumerate() {
                    let doff = off + d * dir_stride;
                    let (gw, rest) = grads[doff..doff + dir_stride].split_at_mut(hidden * in_dim);
                    let (gwf, rest) = rest.split_at_mut(hidden * in_dim);
                    let (gwr, rest) = rest.split_at_mut(hidden * in_dim);
                    let (gbf, gbr) = rest.split_at_mut(hidden);
                    let mut dc_carry = vec![0.0; hidden];
                    // walk processed steps newest-first
                    for s in (0..t_len).rev() {
                        let t = dc.order[s];
                        let x_t = &x[t];
                        let dh = &dsteps[t][d * hidden..(d + 1) * hidden];
                        let mut duw = vec![0.0; hidden];
                        let mut dzf = vec![0.0; hidden];
                        let mut dzr = vec![0.0; hidden];
                        for i in 0..hidden {
                            let f = dc.f[s][i];
                            let r = dc.r[s][i];
                            let g = dc.c[s][i].tanh();
                            let c_prev = if s > 0 { dc.c[s - 1][i] } else { 0.0 };
                            let highway = if matched { x_t[i] } else { dc.uw[s][i] };
                            let dr = dh[i] * (g - highway);
                            let d_c = dc_carry[i] + dh[i] * r * (1.0 - g * g);
                            let df = d_c * (c_prev - dc.uw[s][i]);
                            duw[i] = d_c * (1.0 - f);
                            dc_carry[i] = d_c * f;
                            let dhw = dh[i] * (1.0 - r);
                            if matched {
                                dx[t][i] += dhw;
                            } else {
                                duw[i] += dhw;
                            }
                            dzf[i] = df * f * (1.0 - f);
                            dzr[i] = dr * r * (1.0 - r);
                            gbf[i] += dzf[i];
                            gbr[i] += dzr[i];
                        }
                        outer_acc(gw, &duw, x_t);
                        outer_acc(gwf, &dzf, x_t);
                        outer_acc(gwr, &dzr, x_t);
                        tmxv_acc(&p.w, &duw, &mut dx[t]);
                        tmxv_acc(&p.wf, &dzf, &mut dx[t]);
                        tmxv_acc(&p.wr, &dzr, &mut dx[t]);
                    }
                }
                dsteps = dx;
            }
            _ => unreachable!("cache shape follows layer shape"),
        }
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// SGD loops
// ---------------------------------------------------------------------------

enum QuantizerMode<'a> {
    /// ordinary training on the stored weights
    Plain,
    /// forward/backward on weights quantized per assignment, STE mask applied
    BinaryConnect(&'a QuantAssignment),
    /// binary-connect plumbing with the quantizer replaced by identity
    #[allow(dead_code)]
    Identity,
}

/// Quantize every matrix in place per assignment and record the STE mask
/// (1 inside the clip range, 0 outside). Biases snap to their own 16-bit
/// fixed-point grid and always pass gradient.
pub fn quantize_weights_for_training(
    net: &SruNetwork,
    assignment: &QuantAssignment,
) -> Result<(SruNetwork, Vec<f64>), TrainError> {
    if assignment.layers.len() != net.layers.len() {
        return Err(NetError::DimensionMismatch {
            what: "assignment layers",
            expected: net.layers.len(),
            got: assignment.layers.len(),
        }
        .into());
    }
    let mut q = net.clone();
    let mut mask = vec![1.0f64; net.param_count()];
    let mut off = 0usize;

    fn quantize_matrix(
        m: &mut Matrix,
        prec: Precision,
        mask: &mut [f64],
        off: &mut usize,
    ) -> Result<(), QuantError> {
        let vals: Vec<f64> = m.data.iter().map(|&v| v as f64).collect();
        if prec.is_integer() {
            let params = mmse_clip_threshold(&vals, prec)?;
            for (i, &v) in vals.iter().enumerate() {
                m.data[i] = params.dequantize_level(params.quantize_value(v)) as f32;
                if v.abs() > params.clip_threshold {
                    mask[*off + i] = 0.0;
                }
            }
        } else {
            let fmt = fixed16_format_for(&vals)?;
            for (i, &v) in vals.iter().enumerate() {
                m.data[i] = fmt.quantize_value(v) as f32;
            }
        }
        *off += m.data.len();
        Ok(())
    }

    fn snap_bias(b: &mut [f32], off: &mut usize) -> Result<(), QuantError> {
        let vals: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        let fmt = fixed16_format_for(&vals)?;
        for (i, &v) in vals.iter().enumerate() {
            b[i] = fmt.quantize_value(v) as f32;
        }
        *off += b.len();
        Ok(())
    }

    for (layer, prec) in q.layers.iter_mut().zip(&assignment.layers) {
        match layer {
            LayerParams::BiSru { dirs } => {
                for d in dirs {
                    quantize_matrix(&mut d.w, prec.weights, &mut mask, &mut off)?;
                    quantize_matrix(&mut d.wf, prec.weights, &mut mask, &mut off)?;
                    quantize_matrix(&mut d.wr, prec.weights, &mut mask, &mut off)?;
                    snap_bias(&mut d.bf, &mut off)?;
                    snap_bias(&mut d.br, &mut off)?;
                }
            }
            LayerParams::Projection { w } => {
                quantize_matrix(w, prec.weights, &mut mask, &mut off)?;
            }
            LayerParams::Fc { w, b } => {
                quantize_matrix(w, prec.weights, &mut mask, &mut off)?;
                snap_bias(b, &mut off)?;
            }
        }
    }
    Ok((q, mask))
}

fn run_sgd(
    net: &mut SruNetwork,
    data: &[Sample],
    cfg: &TrainConfig,
    mode: QuantizerMode,
) -> Result<Vec<f64>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = data.len();
    let nparams = net.param_count();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let staged = match mode {
                QuantizerMode::Plain => None,
                QuantizerMode::BinaryConnect(a) => Some(quantize_weights_for_training(net, a)?),
                QuantizerMode::Identity => Some((net.clone(), vec![1.0; nparams])),
            };
            let mut grads = vec![0.0f64; nparams];
            let mut batch_loss = 0.0;
            {
                let fwd: &SruNetwork = staged.as_ref().map(|(q, _)| q).unwrap_or(net);
                for &i in batch {
                    batch_loss += loss_and_gradient(fwd, &data[i].seq, data[i].label, &mut grads)?;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            if let Some((_, mask)) = &staged {
                for (g, m) in grads.iter_mut().zip(mask) {
                    *g *= scale * m;
                }
            } else {
                for g in grads.iter_mut() {
                    *g *= scale;
                }
            }
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.max_grad_norm {
                let shrink = cfg.max_grad_norm / norm;
                for g in grads.iter_mut() {
                    *g *= shrink;
                }
            }
            let mut flat = net.flatten();
            for (p, g) in flat.iter_mut().zip(&grads) {
                *p = (*p as f64 - cfg.learning_rate * g) as f32;
            }
            net.load_flat(&flat)?;
            epoch_loss += batch_loss;
        }
        let mean = epoch_loss / n.max(1) as f64;
        if !mean.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        epoch_losses.push(mean);
    }
    Ok(epoch_losses)
}

/// Plain SGD over the training split; returns per-epoch mean losses.
pub fn sgd_train(
    net: &mut SruNetwork,
    data: &[Sample],
    cfg: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    run_sgd(net, data, cfg, QuantizerMode::Plain)
}

/// Train a fresh network from the seed and verify it actually learned.
pub fn train_baseline(
    dims: NetDims,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let mut net = random_network(dims, cfg.seed);
    let epoch_losses = sgd_train(&mut net, train, cfg)?;
    let val_error = classification_error(&net, val)?;
    if val_error > cfg.max_val_error {
        return Err(TrainError::SanityBound {
            got: val_error,
            bound: cfg.max_val_error,
        });
    }
    Ok(TrainOutcome {
        network: net,
        val_error,
        epoch_losses,
    })
}

/// Binary-connect retraining: quantized weights in forward/backward, updates
/// on the full-precision copies. The beacon keeps the full-precision result.
pub fn retrain_binary_connect(
    net: &SruNetwork,
    assignment: &QuantAssignment,
    source_genome: Vec<u8>,
    kind: BeaconKind,
    data: &[Sample],
    cfg: &TrainConfig,
) -> Result<Beacon, TrainError> {
    let mut tuned = net.clone();
    run_sgd(&mut tuned, data, cfg, QuantizerMode::BinaryConnect(assignment))?;
    Ok(Beacon {
        network: tuned,
        source_genome,
        kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, TaskConfig};
    use crate::quant::Precision;
    use crate::sru::{layer_specs, LayerPrecision};

    fn tiny_dims() -> NetDims {
        NetDims {
            input_dim: 1,
            hidden: 1,
            directions: 1,
            classes: 2,
            sru_layers: 1,
        }
    }

    fn small_dims() -> NetDims {
        NetDims {
            input_dim: 3,
            hidden: 2,
            directions: 2,
            classes: 3,
            sru_layers: 2,
        }
    }

    fn random_sequence(rng: &mut ChaCha8Rng, t_len: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..t_len)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    fn finite_difference_check(dims: NetDims, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_network(dims, rng.gen());
        let seq = random_sequence(&mut rng, 4, dims.input_dim);
        let label = rng.gen_range(0..dims.classes);
        let mut grads = vec![0.0f64; net.param_count()];
        loss_and_gradient(&net, &seq, label, &mut grads).unwrap();
        let flat = net.flatten();
        let mut worst = 0.0f64;
        for i in 0..flat.len() {
            let h = 5e-4f64;
            let mut plus = flat.clone();
            plus[i] = (plus[i] as f64 + h) as f32;
            let mut minus = flat.clone();
            minus[i] = (minus[i] as f64 - h) as f32;
            // measure the step the f32 rounding actually took
            let delta = plus[i] as f64 - minus[i] as f64;
            let mut npp = net.clone();
            npp.load_flat(&plus).unwrap();
            let mut npm = net.clone();
            npm.load_flat(&minus).unwrap();
            let lp = sequence_loss(&npp, &seq, label).unwrap();
            let lm = sequence_loss(&npm, &seq, label).unwrap();
            let fd = (lp - lm) / delta;
            let denom = grads[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max((grads[i] - fd).abs() / denom);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences_on_one_unit_network() {
        for point in 0..20 {
            let worst = finite_difference_check(tiny_dims(), 100 + point);
            assert!(worst <= 1e-3, "point {point}: relative error {worst}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_with_projection_and_two_directions() {
        for point in 0..5 {
            let worst = finite_difference_check(small_dims(), 300 + point);
            assert!(worst <= 1e-3, "point {point}: relative error {worst}");
        }
    }

    #[test]
    fn loss_decreases_on_a_learnable_batch() {
        let cfg = TaskConfig {
            train_size: 32,
            val_size: 16,
            test_size: 16,
            ..TaskConfig::default()
        };
        let data = generate(&cfg);
        let dims = NetDims {
            input_dim: cfg.input_dim,
            hidden: 8,
            directions: 2,
            classes: cfg.classes,
            sru_layers: 1,
        };
        let mut net = random_network(dims, 5);
        let tc = TrainConfig {
            epochs: 8,
            learning_rate: 0.1,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let losses = sgd_train(&mut net, &data.train, &tc).unwrap();
        assert!(
            losses.last().unwrap() < losses.first().unwrap(),
            "losses {losses:?}"
        );
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let data = generate(&TaskConfig {
            train_size: 8,
            val_size: 4,
            test_size: 4,
            ..TaskConfig::default()
        });
        let mut net = random_network(
            NetDims {
                input_dim: data.input_dim,
                classes: data.classes,
                ..small_dims()
            },
            11,
        );
        let before = net.flatten();
        let cfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        sgd_train(&mut net, &data.train, &cfg).unwrap();
        assert_eq!(net.flatten(), before);
    }

    #[test]
    fn identical_seeds_reproduce_parameters_bit_for_bit() {
        let data = generate(&TaskConfig {
            train_size: 16,
            val_size: 8,
            test_size: 8,
            ..TaskConfig::default()
        });
        let dims = NetDims {
            input_dim: data.input_dim,
            hidden: 4,
            directions: 2,
            classes: data.classes,
            sru_layers: 1,
        };
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.05,
            batch_size: 4,
            seed: 21,
            ..TrainConfig::default()
        };
        let mut a = random_network(dims, cfg.seed);
        let mut b = random_network(dims, cfg.seed);
        sgd_train(&mut a, &data.train, &cfg).unwrap();
        sgd_train(&mut b, &data.train, &cfg).unwrap();
        assert_eq!(a.flatten(), b.flatten());
    }

    #[test]
    fn identity_quantizer_reduces_to_a_plain_sgd_step() {
        let data = generate(&TaskConfig {
            train_size: 8,
            ..TaskConfig::default()
        });
        let dims = NetDims {
            input_dim: data.input_dim,
            hidden: 4,
            directions: 2,
            classes: data.classes,
            sru_layers: 1,
        };
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.05,
            batch_size: 8,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut plain = random_network(dims, 9);
        let mut masked = plain.clone();
        run_sgd(&mut plain, &data.train[..8], &cfg, QuantizerMode::Plain).unwrap();
        run_sgd(&mut masked, &data.train[..8], &cfg, QuantizerMode::Identity).unwrap();
        assert_eq!(plain.flatten(), masked.flatten());
    }

    #[test]
    fn zero_epochs_with_fix16_returns_input_parameters() {
        let dims = small_dims();
        let net = random_network(dims, 2);
        let n_layers = net.layers.len();
        let assignment = QuantAssignment::uniform(n_layers, Precision::Fix16, Precision::Fix16);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let beacon = retrain_binary_connect(
            &net,
            &assignment,
            vec![4; n_layers],
            BeaconKind::General,
            &[],
            &cfg,
        )
        .unwrap();
        assert_eq!(beacon.network.flatten(), net.flatten());
        assert_eq!(beacon.kind, BeaconKind::General);
    }

    #[test]
    fn straight_through_mask_blocks_out_of_range_weights() {
        let dims = NetDims {
            input_dim: 4,
            hidden: 4,
            directions: 1,
            classes: 2,
            sru_layers: 1,
        };
        let mut net = random_network(dims, 17);
        // plant an outlier in the first matrix; the MMSE clip will sit below it
        if let LayerParams::BiSru { dirs } = &mut net.layers[0] {
            dirs[0].w.data[0] = 5.0;
        }
        let specs = layer_specs(&dims);
        let assignment = QuantAssignment {
            layers: specs
                .iter()
                .map(|_| LayerPrecision {
                    weights: Precision::Int4,
                    activations: Precision::Fix16,
                })
                .collect(),
        };
        let (q, mask) = quantize_weights_for_training(&net, &assignment).unwrap();
        // masked out iff beyond the clip, and the quantized copy stays inside it
        assert_eq!(mask[0], 0.0);
        assert!(mask.iter().filter(|&&m| m == 1.0).count() > 0);
        if let LayerParams::BiSru { dirs } = &q.layers[0] {
            assert!(dirs[0].w.data[0] < 5.0);
        }

        // one binary-connect step must leave the masked weight untouched
        let data = generate(&TaskConfig {
            input_dim: dims.input_dim,
            classes: dims.classes,
            train_size: 4,
            val_size: 2,
            test_size: 2,
            seq_len: 5,
            ..TaskConfig::default()
        });
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.5,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let beacon = retrain_binary_connect(
            &net,
            &assignment,
            vec![2; specs.len()],
            BeaconKind::General,
            &data.train,
            &cfg,
        )
        .unwrap();
        assert_eq!(beacon.network.flatten()[0], 5.0);
        assert_ne!(beacon.network.flatten(), net.flatten());
    }

    #[test]
    fn beacon_keeps_full_precision_parameters() {
        let data = generate(&TaskConfig {
            train_size: 16,
            val_size: 8,
            test_size: 8,
            ..TaskConfig::default()
        });
        let dims = NetDims {
            input_dim: data.input_dim,
            hidden: 4,
            directions: 2,
            classes: data.classes,
            sru_layers: 1,
        };
        let net = random_network(dims, 13);
        let n_layers = net.layers.len();
        let assignment = QuantAssignment::uniform(n_layers, Precision::Int2, Precision::Fix16);
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.05,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let beacon = retrain_binary_connect(
            &net,
            &assignment,
            vec![1; n_layers],
            BeaconKind::FirstLayer2Bit,
            &data.train,
            &cfg,
        )
        .unwrap();
        // INT2 admits at most 4 distinct weight values per matrix; the beacon
        // stores many more, so it cannot be holding the quantized copies
        if let LayerParams::BiSru { dirs } = &beacon.network.layers[0] {
            let mut vals: Vec<f32> = dirs[0].w.data.clone();
            vals.sort_by(f32::total_cmp);
            vals.dedup();
            assert!(vals.len() > 4, "only {} distinct values", vals.len());
        } else {
            panic!("first layer should be recurrent");
        }
    }

    #[test]
    fn divergence_is_reported_not_propagated() {
        let data = generate(&TaskConfig {
            train_size: 8,
            val_size: 4,
            test_size: 4,
            ..TaskConfig::default()
        });
        let dims = NetDims {
            input_dim: data.input_dim,
            hidden: 4,
            directions: 1,
            classes: data.classes,
            sru_layers: 1,
        };
        let mut net = random_network(dims, 1);
        // large enough that clipped steps still overflow the f32 parameters
        let cfg = TrainConfig {
            epochs: 40,
            learning_rate: 1e38,
            batch_size: 8,
            ..TrainConfig::default()
        };
        match sgd_train(&mut net, &data.train, &cfg) {
            Err(TrainError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
        // a merely unstable rate keeps the loss finite but fails the
        // post-training quality gate instead
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 1e4,
            batch_size: 8,
            ..TrainConfig::default()
        };
        match train_baseline(dims, &data.train, &data.val, &cfg) {
            Err(TrainError::SanityBound { .. }) => {}
            other => panic!("expected the sanity bound to fail, got {other:?}"),
        }
    }
}
