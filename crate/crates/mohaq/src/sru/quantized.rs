//! Quantized inference under a per-layer precision assignment.
//!
//! Only matrix-vector operands are quantized to integer grids: weights with
//! an MMSE-selected clipping threshold computed from the matrix itself,
//! activations with the calibrated range of the layer input. Integer
//! matrix-vector products accumulate in i64 and are re-quantized back to
//! 16-bit fixed point sized by the calibrated full-precision output range.
//! Biases, gates, and the recurrent state stay in 16-bit fixed point.

use super::*;
use crate::quant::{
    fixed16_format_for, mmse_clip_threshold, FixedPointFormat, IntQuantParams, Precision,
};

/// Gates and tanh outputs live in [-1, 1]; no integer bits needed.
const UNIT_FMT: FixedPointFormat = FixedPointFormat {
    integer_bits: 0,
    fraction_bits: 15,
};

#[derive(Debug)]
enum PreparedWeights {
    Int {
        levels: Vec<i32>,
        params: IntQuantParams,
    },
    Fix {
        values: Vec<f64>,
    },
}

#[derive(Debug)]
struct PreparedBlock {
    rows: usize,
    cols: usize,
    weights: PreparedWeights,
    out_fmt: FixedPointFormat,
}

impl PreparedBlock {
    fn prepare(
        m: &Matrix,
        precision: Precision,
        out_range: f64,
    ) -> Result<Self, NetError> {
        let data: Vec<f64> = m.data.iter().map(|&w| w as f64).collect();
        let weights = if precision.is_integer() {
            let params = mmse_clip_threshold(&data, precision)?;
            let levels = data.iter().map(|&w| params.quantize_value(w)).collect();
            PreparedWeights::Int { levels, params }
        } else {
            let fmt = fixed16_format_for(&data)?;
            PreparedWeights::Fix {
                values: data.iter().map(|&w| fmt.quantize_value(w)).collect(),
            }
        };
        Ok(PreparedBlock {
            rows: m.rows,
            cols: m.cols,
            weights,
            out_fmt: FixedPointFormat::for_range(out_range)?,
        })
    }

    /// Matrix-vector product; `x_int` carries integer activation levels and
    /// their scale when the layer quantizes activations to an integer grid.
    fn mxv(&self, x_fix: &[f64], x_int: Option<(&[i32], f64)>) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        match (&self.weights, x_int) {
            (PreparedWeights::Int { levels, params }, Some((xi, act_scale))) => {
                let scale = params.scale * act_scale;
                for r in 0..self.rows {
                    let row = &levels[r * self.cols..(r + 1) * self.cols];
                    let mut acc: i64 = 0;
                    for (w, a) in row.iter().zip(xi) {
                        acc += *w as i64 * *a as i64;
                    }
                    out[r] = self.out_fmt.quantize_value(acc as f64 / scale);
                }
            }
            (PreparedWeights::Int { levels, params }, None) => {
                for r in 0..self.rows {
                    let row = &levels[r * self.cols..(r + 1) * self.cols];
                    let mut acc = 0.0;
                    for (w, x) in row.iter().zip(x_fix) {
                        acc += *w as f64 / params.scale * x;
                    }
                    out[r] = self.out_fmt.quantize_value(acc);
                }
            }
            (PreparedWeights::Fix { values }, Some((xi, act_scale))) => {
                for r in 0..self.rows {
                    let row = &values[r * self.cols..(r + 1) * self.cols];
                    let mut acc = 0.0;
                    for (w, a) in row.iter().zip(xi) {
                        acc += w * *a as f64;
                    }
                    out[r] = self.out_fmt.quantize_value(acc / act_scale);
                }
            }
            (PreparedWeights::Fix { values }, None) => {
                for r in 0..self.rows {
                    let row = &values[r * self.cols..(r + 1) * self.cols];
                    let mut acc = 0.0;
                    for (w, x) in row.iter().zip(x_fix) {
                        acc += w * x;
                    }
                    out[r] = self.out_fmt.quantize_value(acc);
                }
            }
        }
        out
    }
}

#[derive(Debug)]
struct PreparedDir {
    w: PreparedBlock,
    wf: PreparedBlock,
    wr: PreparedBlock,
    bf: Vec<f64>,
    br: Vec<f64>,
    state_fmt: FixedPointFormat,
}

#[derive(Debug)]
enum PreparedLayer {
    BiSru { dirs: Vec<PreparedDir> },
    Projection { block: PreparedBlock },
    Fc { block: PreparedBlock, bias: Vec<f64> },
}

/// A network frozen under one precision assignment, ready for inference.
pub struct QuantizedNet {
    input_dim: usize,
    layers: Vec<PreparedLayer>,
    input_fmt: Vec<FixedPointFormat>,
    act_quant: Vec<Option<IntQuantParams>>,
}

fn fixed16_vec(data: &[f32]) -> Result<Vec<f64>, NetError> {
    let data: Vec<f64> = data.iter().map(|&v| v as f64).collect();
    let fmt = fixed16_format_for(&data)?;
    Ok(data.iter().map(|&v| fmt.quantize_value(v)).collect())
}

impl QuantizedNet {
    pub fn prepare(
        net: &SruNetwork,
        assignment: &QuantAssignment,
        calib: &CalibrationTable,
    ) -> Result<Self, NetError> {
        if assignment.layers.len() != net.layers.len() {
            return Err(NetError::DimensionMismatch {
                what: "assignment layers",
                expected: net.layers.len(),
                got: assignment.layers.len(),
            });
        }
        let site = |l: usize, what: &str| NetError::UncalibratedSite(format!("layer {l} {what}"));
        if calib.layer_input.len() != net.layers.len() {
            return Err(site(calib.layer_input.len(), "input"));
        }
        let mut layers = Vec::new();
        let mut input_fmt = Vec::new();
        let mut act_quant = Vec::new();
        for (l, (layer, spec)) in net.layers.iter().zip(&net.specs).enumerate() {
            let blocks = calib
                .mxv_output
                .get(l)
                .filter(|b| b.len() == spec.mxv_block_count())
                .ok_or_else(|| site(l, "matrix-vector output"))?;
            let in_range = calib.layer_input[l];
            input_fmt.push(FixedPointFormat::for_range(in_range)?);
            let act = assignment.layers[l].activations;
            act_quant.push(if act.is_integer() {
                Some(IntQuantParams::with_clip(in_range, act)?)
            } else {
                None
            });
            let wp = assignment.layers[l].weights;
            layers.push(match layer {
                LayerParams::BiSru { dirs } => {
                    let states = calib
                        .sru_state
                        .get(l)
                        .filter(|s| s.len() == dirs.len())
                        .ok_or_else(|| site(l, "state"))?;
                    let prepared: Result<Vec<PreparedDir>, NetError> = dirs
                        .iter()
                        .enumerate()
                        .map(|(d, dir)| {
                            Ok(PreparedDir {
                                w: PreparedBlock::prepare(&dir.w, wp, blocks[d * 3])?,
                                wf: PreparedBlock::prepare(&dir.wf, wp, blocks[d * 3 + 1])?,
                                wr: PreparedBlock::prepare(&dir.wr, wp, blocks[d * 3 + 2])?,
                                bf: fixed16_vec(&dir.bf)?,
                                br: fixed16_vec(&dir.br)?,
                                state_fmt: FixedPointFormat::for_range(states[d])?,
                            })
                        })
                        .collect();
                    PreparedLayer::BiSru { dirs: prepared? }
                }
                LayerParams::Projection { w } => PreparedLayer::Projection {
                    block: PreparedBlock::prepare(w, wp, blocks[0])?,
                },
                LayerParams::Fc { w, b } => PreparedLayer::Fc {
                    block: PreparedBlock::prepare(w, wp, blocks[0])?,
                    bias: fixed16_vec(b)?,
                },
            });
        }
        Ok(QuantizedNet {
            input_dim: net.dims.input_dim,
            layers,
            input_fmt,
            act_quant,
        })
    }

    pub fn forward(&self, sequence: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NetError> {
        if sequence.is_empty() {
            return Err(NetError::EmptySequence);
        }
        if sequence[0].len() != self.input_dim {
            return Err(NetError::DimensionMismatch {
                what: "network input",
                expected: self.input_dim,
                got: sequence[0].len(),
            });
        }
        let mut steps: Vec<Vec<f64>> = sequence.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let fmt = self.input_fmt[l];
            let x_fix: Vec<Vec<f64>> = steps
                .iter()
                .map(|v| v.iter().map(|&x| fmt.quantize_value(x)).collect())
                .collect();
            let x_int: Option<(Vec<Vec<i32>>, f64)> = self.act_quant[l].as_ref().map(|params| {
                (
                    x_fix
                        .iter()
                        .map(|v| v.iter().map(|&x| params.quantize_value(x)).collect())
                        .collect(),
                    params.scale,
                )
            });
            let int_at = |t: usize| x_int.as_ref().map(|(levels, s)| (levels[t].as_slice(), *s));
            steps = match layer {
                PreparedLayer::BiSru { dirs } => {
                    let t_len = x_fix.len();
                    let mut per_dir: Vec<Vec<Vec<f64>>> = Vec::new();
                    for (d, dir) in dirs.iter().enumerate() {
                        let hidden = dir.w.rows;
                        let mut out = vec![Vec::new(); t_len];
                        let mut c = vec![0.0; hidden];
                        let order: Vec<usize> = if d == 1 {
                            (0..t_len).rev().collect()
                        } else {
                            (0..t_len).collect()
                        };
                        for t in order {
                            let uw = dir.w.mxv(&x_fix[t], int_at(t));
                            let uf = dir.wf.mxv(&x_fix[t], int_at(t));
                            let ur = dir.wr.mxv(&x_fix[t], int_at(t));
                            let mut h = vec![0.0; hidden];
                            for i in 0..hidden {
                                let f = UNIT_FMT.quantize_value(sigmoid(uf[i] + dir.bf[i]));
                                let r = UNIT_FMT.quantize_value(sigmoid(ur[i] + dir.br[i]));
                                c[i] = dir
                                    .state_fmt
                                    .quantize_value(f * c[i] + (1.0 - f) * uw[i]);
                                let tanh_c = UNIT_FMT.quantize_value(c[i].tanh());
                                let highway = if x_fix[t].len() == hidden {
                                    x_fix[t][i]
                                } else {
                                    uw[i]
                                };
                                h[i] = r * tanh_c + (1.0 - r) * highway;
                            }
                            out[t] = h;
                        }
                        per_dir.push(out);
                    }
                    (0..x_fix.len())
                        .map(|t| per_dir.iter().flat_map(|d| d[t].iter().copied()).collect())
                        .collect()
                }
                PreparedLayer::Projection { block } => (0..x_fix.len())
                    .map(|t| block.mxv(&x_fix[t], int_at(t)))
                    .collect(),
                PreparedLayer::Fc { block, bias } => (0..x_fix.len())
                    .map(|t| {
                        let y = block.mxv(&x_fix[t], int_at(t));
                        let logits: Vec<f64> =
                            y.iter().zip(bias).map(|(v, b)| v + b).collect();
                        softmax(&logits)
                    })
                    .collect(),
            };
        }
        Ok(steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng, dims: NetDims, spread: f32) -> SruNetwork {
        let mut net = SruNetwork::zeros(dims);
        let vals: Vec<f32> = (0..net.param_count())
            .map(|_| rng.gen_range(-spread..spread))
            .collect();
        net.load_flat(&vals).unwrap();
        net
    }

    fn random_seq(rng: &mut ChaCha8Rng, t: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    fn small_dims() -> NetDims {
        NetDims {
            input_dim: 3,
            hidden: 4,
            directions: 2,
            classes: 3,
            sru_layers: 2,
        }
    }

    fn mean_score_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0;
        for (ra, rb) in a.iter().zip(b) {
            for (x, y) in ra.iter().zip(rb) {
                sum += (x - y).abs();
                n += 1;
            }
        }
        sum / n as f64
    }

    #[test]
    fn zero_network_matches_full_precision_exactly() {
        let net = SruNetwork::zeros(small_dims());
        let seq = vec![vec![0.0; 3]; 4];
        let calib = calibrate(&net, &[seq.clone()]).unwrap();
        let assignment = QuantAssignment::uniform(net.layers.len(), Precision::Int4, Precision::Int4);
        let q = QuantizedNet::prepare(&net, &assignment, &calib).unwrap();
        assert_eq!(q.forward(&seq).unwrap(), network_forward(&net, &seq).unwrap());
    }

    #[test]
    fn fixed16_everywhere_tracks_full_precision_closely() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tol = (-10.0f64).exp2();
        for _ in 0..10 {
            let net = random_net(&mut rng, small_dims(), 0.5);
            let cal_seqs: Vec<_> = (0..5).map(|_| random_seq(&mut rng, 6, 3)).collect();
            let calib = calibrate(&net, &cal_seqs).unwrap();
            let assignment =
                QuantAssignment::uniform(net.layers.len(), Precision::Fix16, Precision::Fix16);
            let q = QuantizedNet::prepare(&net, &assignment, &calib).unwrap();
            let seq = random_seq(&mut rng, 6, 3);
            let qs = q.forward(&seq).unwrap();
            let fs = network_forward(&net, &seq).unwrap();
            for (qr, fr) in qs.iter().zip(&fs) {
                for (a, b) in qr.iter().zip(fr) {
                    assert!((a - b).abs() < tol, "|{a} - {b}| >= {tol}");
                }
            }
        }
    }

    #[test]
    fn coarser_grids_deviate_more_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut gaps = [0.0f64; 4];
        let ladder = [
            Precision::Int2,
            Precision::Int4,
            Precision::Int8,
            Precision::Fix16,
        ];
        for _ in 0..20 {
            let net = random_net(&mut rng, small_dims(), 0.5);
            let cal_seqs: Vec<_> = (0..5).map(|_| random_seq(&mut rng, 6, 3)).collect();
            let calib = calibrate(&net, &cal_seqs).unwrap();
            let seq = random_seq(&mut rng, 6, 3);
            let full = network_forward(&net, &seq).unwrap();
            for (slot, p) in gaps.iter_mut().zip(ladder) {
                let assignment = QuantAssignment::uniform(net.layers.len(), p, p);
                let q = QuantizedNet::prepare(&net, &assignment, &calib).unwrap();
                *slot += mean_score_gap(&q.forward(&seq).unwrap(), &full);
            }
        }
        assert!(gaps[0] > gaps[1], "2-bit {} <= 4-bit {}", gaps[0], gaps[1]);
        assert!(gaps[1] > gaps[2], "4-bit {} <= 8-bit {}", gaps[1], gaps[2]);
        assert!(gaps[2] > gaps[3], "8-bit {} <= 16-bit {}", gaps[2], gaps[3]);
    }

    #[test]
    fn quantized_forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let net = random_net(&mut rng, small_dims(), 0.5);
        let cal_seqs: Vec<_> = (0..4).map(|_| random_seq(&mut rng, 5, 3)).collect();
        let calib = calibrate(&net, &cal_seqs).unwrap();
        let assignment = QuantAssignment::uniform(net.layers.len(), Precision::Int4, Precision::Int8);
        let seq = random_seq(&mut rng, 5, 3);
        let q1 = QuantizedNet::prepare(&net, &assignment, &calib).unwrap();
        let q2 = QuantizedNet::prepare(&net, &assignment, &calib).unwrap();
        assert_eq!(q1.forward(&seq).unwrap(), q2.forward(&seq).unwrap());
    }

    #[test]
    fn missing_calibration_entries_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let net = random_net(&mut rng, small_dims(), 0.5);
        let calib = calibrate(&net, &[random_seq(&mut rng, 5, 3)]).unwrap();
        let assignment = QuantAssignment::uniform(net.layers.len(), Precision::Int8, Precision::Int8);

        let mut broken = calib.clone();
        broken.mxv_output[1].pop();
        assert!(matches!(
            QuantizedNet::prepare(&net, &assignment, &broken),
            Err(NetError::UncalibratedSite(_))
        ));

        let mut no_state = calib.clone();
        no_state.sru_state[0].clear();
        assert!(matches!(
            QuantizedNet::prepare(&net, &assignment, &no_state),
            Err(NetError::UncalibratedSite(_))
        ));

        let mut short = calib;
        short.layer_input.pop();
        assert!(QuantizedNet::prepare(&net, &assignment, &short).is_err());
    }

    #[test]
    fn recurrent_parameters_ignore_the_weight_precision() {
        // bias and state handling is identical under any weight/activation
        // precision; only matrix-vector operands change representation
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let net = random_net(&mut rng, small_dims(), 0.5);
        let calib = calibrate(&net, &[random_seq(&mut rng, 5, 3)]).unwrap();
        let coarse = QuantizedNet::prepare(
            &net,
            &QuantAssignment::uniform(net.layers.len(), Precision::Int2, Precision::Int2),
            &calib,
        )
        .unwrap();
        let fine = QuantizedNet::prepare(
            &net,
            &QuantAssignment::uniform(net.layers.len(), Precision::Fix16, Precision::Fix16),
            &calib,
        )
        .unwrap();
        for (a, b) in coarse.layers.iter().zip(&fine.layers) {
            if let (PreparedLayer::BiSru { dirs: da }, PreparedLayer::BiSru { dirs: db }) = (a, b) {
                for (x, y) in da.iter().zip(db) {
                    assert_eq!(x.bf, y.bf);
                    assert_eq!(x.br, y.br);
                    assert_eq!(x.state_fmt, y.state_fmt);
                }
            }
        }
    }
}
