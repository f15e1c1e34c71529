//! The SRU-based network: layer layout, full-precision inference, and
//! activation-range calibration. Quantized inference lives in [`quantized`].
//!
//! Layer layout follows the reference model: SRU layers (optionally
//! bidirectional) alternate with projection layers, and a fully connected
//! layer with per-step softmax closes the stack. The SRU cell keeps all
//! matrix-vector work on the current input; the recurrence itself is
//! element-wise:
//!
//! ```text
//! f_t = sigmoid(W_f x_t + b_f)
//! r_t = sigmoid(W_r x_t + b_r)
//! c_t = f_t * c_{t-1} + (1 - f_t) * (W x_t)
//! h_t = r_t * tanh(c_t) + (1 - r_t) * x_t
//! ```
//!
//! When a layer's input width differs from its hidden width the highway term
//! `x_t` is ill-formed; the layer then routes `W x_t` into the highway
//! instead, which keeps the three matrix-vector blocks intact.

pub mod quantized;

pub use quantized::QuantizedNet;

use crate::quant::Precision;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("empty sequence")]
    EmptySequence,
    #[error("no calibration sequences")]
    NoCalibrationData,
    #[error("uncalibrated site: {0}")]
    UncalibratedSite(String),
    #[error(transparent)]
    Quant(#[from] crate::quant::QuantError),
}

/// Row-major matrix of f32 parameters; arithmetic runs in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f32>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        Matrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn mxv(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xv) in row.iter().zip(x) {
                acc += *w as f64 * xv;
            }
            out[r] = acc;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    BiSru,
    Projection,
    Fc,
}

/// Shape of one layer, enough to derive parameter and operation counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub directions: usize,
}

impl LayerSpec {
    pub fn hidden(&self) -> usize {
        match self.kind {
            LayerKind::BiSru => self.out_dim / self.directions,
            _ => self.out_dim,
        }
    }

    /// Parameters that sit inside matrix-vector products (quantizable).
    pub fn mxv_weight_count(&self) -> usize {
        match self.kind {
            LayerKind::BiSru => self.directions * 3 * self.hidden() * self.in_dim,
            LayerKind::Projection | LayerKind::Fc => self.in_dim * self.out_dim,
        }
    }

    /// Bias and recurrent vectors; always stored in 16-bit fixed point.
    pub fn aux_param_count(&self) -> usize {
        match self.kind {
            LayerKind::BiSru => self.directions * 2 * self.hidden(),
            LayerKind::Projection => 0,
            LayerKind::Fc => self.out_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.mxv_weight_count() + self.aux_param_count()
    }

    /// One MAC per matrix-vector weight per time step.
    pub fn mxv_macs_per_step(&self) -> usize {
        self.mxv_weight_count()
    }

    /// Element-wise multiplies in the recurrence (four per hidden unit).
    pub fn elementwise_macs_per_step(&self) -> usize {
        match self.kind {
            LayerKind::BiSru => self.directions * 4 * self.hidden(),
            _ => 0,
        }
    }

    /// Matrix-vector blocks in the layer (three per SRU direction).
    pub fn mxv_block_count(&self) -> usize {
        match self.kind {
            LayerKind::BiSru => self.directions * 3,
            _ => 1,
        }
    }
}

/// Global network dimensions; the layer list is derived from these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub input_dim: usize,
    pub hidden: usize,
    pub directions: usize,
    pub classes: usize,
    pub sru_layers: usize,
}

/// SRU layers separated by projections, closed by one FC layer.
pub fn layer_specs(dims: &NetDims) -> Vec<LayerSpec> {
    assert!(dims.sru_layers >= 1 && (1..=2).contains(&dims.directions));
    let mut specs = Vec::new();
    for k in 0..dims.sru_layers {
        let in_dim = if k == 0 { dims.input_dim } else { dims.hidden };
        specs.push(LayerSpec {
            kind: LayerKind::BiSru,
            in_dim,
            out_dim: dims.directions * dims.hidden,
            directions: dims.directions,
        });
        if k + 1 < dims.sru_layers {
            specs.push(LayerSpec {
                kind: LayerKind::Projection,
                in_dim: dims.directions * dims.hidden,
                out_dim: dims.hidden,
                directions: 1,
            });
        }
    }
    specs.push(LayerSpec {
        kind: LayerKind::Fc,
        in_dim: dims.directions * dims.hidden,
        out_dim: dims.classes,
        directions: 1,
    });
    specs
}

/// Parameters of one SRU direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SruDirection {
    pub w: Matrix,
    pub wf: Matrix,
    pub wr: Matrix,
    pub bf: Vec<f32>,
    pub br: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    BiSru { dirs: Vec<SruDirection> },
    Projection { w: Matrix },
    Fc { w: Matrix, b: Vec<f32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SruNetwork {
    pub dims: NetDims,
    pub specs: Vec<LayerSpec>,
    pub layers: Vec<LayerParams>,
}

impl SruNetwork {
    pub fn zeros(dims: NetDims) -> Self {
        let specs = layer_specs(&dims);
        let layers = specs
            .iter()
            .map(|s| match s.kind {
                LayerKind::BiSru => LayerParams::BiSru {
                    dirs: (0..s.directions)
                        .map(|_| SruDirection {
                            w: Matrix::zeros(s.hidden(), s.in_dim),
                            wf: Matrix::zeros(s.hidden(), s.in_dim),
                            wr: Matrix::zeros(s.hidden(), s.in_dim),
                            bf: vec![0.0; s.hidden()],
                            br: vec![0.0; s.hidden()],
                        })
                        .collect(),
                },
                LayerKind::Projection => LayerParams::Projection {
                    w: Matrix::zeros(s.out_dim, s.in_dim),
                },
                LayerKind::Fc => LayerParams::Fc {
                    w: Matrix::zeros(s.out_dim, s.in_dim),
                    b: vec![0.0; s.out_dim],
                },
            })
            .collect();
        SruNetwork { dims, specs, layers }
    }

    pub fn param_count(&self) -> usize {
        self.specs.iter().map(|s| s.param_count()).sum()
    }

    /// All parameters in checkpoint order: per layer, per direction,
    /// w / wf / wr row-major then bf / br; projections w; FC w then b.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            match layer {
                LayerParams::BiSru { dirs } => {
                    for d in dirs {
                        out.extend_from_slice(&d.w.data);
                        out.extend_from_slice(&d.wf.data);
                        out.extend_from_slice(&d.wr.data);
                        out.extend_from_slice(&d.bf);
                        out.extend_from_slice(&d.br);
                    }
                }
                LayerParams::Projection { w } => out.extend_from_slice(&w.data),
                LayerParams::Fc { w, b } => {
                    out.extend_from_slice(&w.data);
                    out.extend_from_slice(&b);
                }
            }
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn load_flat(&mut self, flat: &[f32]) -> Result<(), NetError> {
        if flat.len() != self.param_count() {
            return Err(NetError::DimensionMismatch {
                what: "flat parameter vector",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut pos = 0;
        let mut take = |dst: &mut [f32]| {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        };
        for layer in &mut self.layers {
            match layer {
                LayerParams::BiSru { dirs } => {
                    for d in dirs {
                        take(&mut d.w.data);
                        take(&mut d.wf.data);
                        take(&mut d.wr.data);
                        take(&mut d.bf);
                        take(&mut d.br);
                    }
                }
                LayerParams::Projection { w } => take(&mut w.data),
                LayerParams::Fc { w, b } => {
                    take(&mut w.data);
                    take(b);
                }
            }
        }
        Ok(())
    }
}

/// Observer for activation statistics during a full-precision pass.
/// Matrix-vector outputs are reported before bias addition, which is the
/// quantity the quantized path re-quantizes.
pub trait Probe {
    fn layer_input(&mut self, _layer: usize, _v: &[f64]) {}
    fn mxv_output(&mut self, _layer: usize, _block: usize, _v: &[f64]) {}
    fn sru_state(&mut self, _layer: usize, _direction: usize, _v: &[f64]) {}
}

pub struct NoProbe;
impl Probe for NoProbe {}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// One SRU step. The highway term uses `x_t` when the input width matches the
/// hidden width and `W x_t` otherwise. Returns `(h_t, c_t)`.
pub fn sru_cell_forward(
    x_t: &[f64],
    c_prev: &[f64],
    p: &SruDirection,
) -> Result<(Vec<f64>, Vec<f64>), NetError> {
    let hidden = p.w.rows;
    if x_t.len() != p.w.cols {
        return Err(NetError::DimensionMismatch {
            what: "SRU cell input",
            expected: p.w.cols,
            got: x_t.len(),
        });
    }
    if c_prev.len() != hidden {
        return Err(NetError::DimensionMismatch {
            what: "SRU cell state",
            expected: hidden,
            got: c_prev.len(),
        });
    }
    let uw = p.w.mxv(x_t);
    let uf = p.wf.mxv(x_t);
    let ur = p.wr.mxv(x_t);
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    for i in 0..hidden {
        let f = sigmoid(uf[i] + p.bf[i] as f64);
        let r = sigmoid(ur[i] + p.br[i] as f64);
        c[i] = f * c_prev[i] + (1.0 - f) * uw[i];
        let highway = if x_t.len() == hidden { x_t[i] } else { uw[i] };
        h[i] = r * c[i].tanh() + (1.0 - r) * highway;
    }
    Ok((h, c))
}

fn sru_direction_outputs(
    p: &SruDirection,
    steps: &[Vec<f64>],
    reverse: bool,
    layer: usize,
    direction: usize,
    block_base: usize,
    probe: &mut impl Probe,
) -> Vec<Vec<f64>> {
    let hidden = p.w.rows;
    let t_len = steps.len();
    let mut out = vec![Vec::new(); t_len];
    let mut c = vec![0.0; hidden];
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for t in order {
        let x_t = &steps[t];
        let uw = p.w.mxv(x_t);
        let uf = p.wf.mxv(x_t);
        let ur = p.wr.mxv(x_t);
        probe.mxv_output(layer, block_base, &uw);
        probe.mxv_output(layer, block_base + 1, &uf);
        probe.mxv_output(layer, block_base + 2, &ur);
        let mut h = vec![0.0; hidden];
        for i in 0..hidden {
            let f = sigmoid(uf[i] + p.bf[i] as f64);
            let r = sigmoid(ur[i] + p.br[i] as f64);
            c[i] = f * c[i] + (1.0 - f) * uw[i];
            let highway = if x_t.len() == hidden { x_t[i] } else { uw[i] };
            h[i] = r * c[i].tanh() + (1.0 - r) * highway;
        }
        probe.sru_state(layer, direction, &c);
        out[t] = h;
    }
    out
}

/// Full-precision forward pass; returns per-step softmax scores.
pub fn network_forward_probed(
    net: &SruNetwork,
    sequence: &[Vec<f64>],
    probe: &mut impl Probe,
) -> Result<Vec<Vec<f64>>, NetError> {
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
    let mut steps: Vec<Vec<f64>> = sequence.to_vec();
    for (idx, layer) in net.layers.iter().enumerate() {
        for v in &steps {
            probe.layer_input(idx, v);
        }
        steps = match layer {
            LayerParams::BiSru { dirs } => {
                let mut per_dir = Vec::new();
                for (d, p) in dirs.iter().enumerate() {
                    per_dir.push(sru_direction_outputs(
                        p,
                        &steps,
                        d == 1,
                        idx,
                        d,
                        d * 3,
                        probe,
                    ));
                }
                (0..steps.len())
                    .map(|t| per_dir.iter().flat_map(|dir| dir[t].iter().copied()).collect())
                    .collect()
            }
            LayerParams::Projection { w } => steps
                .iter()
                .map(|x| {
                    let y = w.mxv(x);
                    probe.mxv_output(idx, 0, &y);
                    y
                })
                .collect(),
            LayerParams::Fc { w, b } => steps
                .iter()
                .map(|x| {
                    let y = w.mxv(x);
                    probe.mxv_output(idx, 0, &y);
                    let logits: Vec<f64> =
                        y.iter().zip(b).map(|(v, bias)| v + *bias as f64).collect();
                    softmax(&logits)
                })
                .collect(),
        };
    }
    Ok(steps)
}

pub fn network_forward(net: &SruNetwork, sequence: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NetError> {
    network_forward_probed(net, sequence, &mut NoProbe)
}

/// Predicted class: argmax of softmax scores averaged over steps
/// (first index wins ties).
pub fn predict_label(scores: &[Vec<f64>]) -> usize {
    let classes = scores[0].len();
    let mut mean = vec![0.0; classes];
    for step in scores {
        for (m, s) in mean.iter_mut().zip(step) {
            *m += s;
        }
    }
    let mut best = 0;
    for k in 1..classes {
        if mean[k] > mean[best] {
            best = k;
        }
    }
    best
}

/// Per-layer precision choice for weights and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerPrecision {
    pub weights: Precision,
    pub activations: Precision,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantAssignment {
    pub layers: Vec<LayerPrecision>,
}

impl QuantAssignment {
    pub fn uniform(layers: usize, weights: Precision, activations: Precision) -> Self {
        QuantAssignment {
            layers: vec![LayerPrecision { weights, activations }; layers],
        }
    }
}

/// Median activation ranges gathered from full-precision validation runs.
/// `mxv_output` ranges are recorded before bias addition. Sites that never
/// produced a nonzero value fall back to range 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    pub layer_input: Vec<f64>,
    pub mxv_output: Vec<Vec<f64>>,
    pub sru_state: Vec<Vec<f64>>,
}

#[derive(Debug)]
struct RangeProbe {
    layer_input: Vec<f64>,
    mxv_output: Vec<Vec<f64>>,
    sru_state: Vec<Vec<f64>>,
}

impl RangeProbe {
    fn new(specs: &[LayerSpec]) -> Self {
        RangeProbe {
            layer_input: vec![0.0; specs.len()],
            mxv_output: specs.iter().map(|s| vec![0.0; s.mxv_block_count()]).collect(),
            sru_state: specs
                .iter()
                .map(|s| match s.kind {
                    LayerKind::BiSru => vec![0.0; s.directions],
                    _ => Vec::new(),
                })
                .collect(),
        }
    }
}

fn max_abs_into(slot: &mut f64, v: &[f64]) {
    for &x in v {
        let a = x.abs();
        if a > *slot {
            *slot = a;
        }
    }
}

impl Probe for RangeProbe {
    fn layer_input(&mut self, layer: usize, v: &[f64]) {
        max_abs_into(&mut self.layer_input[layer], v);
    }
    fn mxv_output(&mut self, layer: usize, block: usize, v: &[f64]) {
        max_abs_into(&mut self.mxv_output[layer][block], v);
    }
    fn sru_state(&mut self, layer: usize, direction: usize, v: &[f64]) {
        max_abs_into(&mut self.sru_state[layer][direction], v);
    }
}

/// Median with the even-count convention: mean of the two middle values.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Run every sequence through the full-precision network, record per-site
/// max |value| per sequence, and take the median across sequences.
pub fn calibrate(net: &SruNetwork, sequences: &[Vec<Vec<f64>>]) -> Result<CalibrationTable, NetError> {
    if sequences.is_empty() {
        return Err(NetError::NoCalibrationData);
    }
    let mut per_seq: Vec<RangeProbe> = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let mut probe = RangeProbe::new(&net.specs);
        network_forward_probed(net, seq, &mut probe)?;
        per_seq.push(probe);
    }
    let sanitize = |r: f64| if r > 0.0 { r } else { 1.0 };
    let med_site = |extract: &dyn Fn(&RangeProbe) -> f64| {
        let mut vals: Vec<f64> = per_seq.iter().map(|p| extract(p)).collect();
        sanitize(median(&mut vals))
    };
    let layer_input = (0..net.specs.len())
        .map(|l| med_site(&move |p: &RangeProbe| p.layer_input[l]))
        .collect();
    let mxv_output = (0..net.specs.len())
        .map(|l| {
            (0..net.specs[l].mxv_block_count())
                .map(|b| med_site(&move |p: &RangeProbe| p.mxv_output[l][b]))
                .collect()
        })
        .collect();
    let sru_state = net
        .specs
        .iter()
        .enumerate()
        .map(|(l, s)| match s.kind {
            LayerKind::BiSru => (0..s.directions)
                .map(|d| med_site(&move |p: &RangeProbe| p.sru_state[l][d]))
                .collect(),
            _ => Vec::new(),
        })
        .collect();
    Ok(CalibrationTable {
        layer_input,
        mxv_output,
        sru_state,
    })
}
