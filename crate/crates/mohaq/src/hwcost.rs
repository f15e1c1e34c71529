//! Analytic hardware cost models: memory footprint, speedup, and energy.
//!
//! Speedup is the MAC-weighted mean of per-precision speedups relative to a
//! 16x16 baseline: `S = sum(S_i * N_i) / N_T` where `N_i` counts the MACs
//! executed at precision pair i and `N_T` is the total. Energy adds the MAC
//! energies to the cost of loading every model bit into on-chip memory once
//! (the model is assumed SRAM-resident and compute-bound). Whether
//! element-wise (non matrix-vector) operations count as 16x16 MACs is a
//! profile flag.

use crate::quant::Precision;
use crate::sru::{LayerSpec, QuantAssignment};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HwError {
    #[error("profile {profile} does not support {w}-bit weights with {a}-bit activations")]
    UnsupportedPair { profile: String, w: u8, a: u8 },
    #[error("profile {0} has no energy model")]
    NoEnergyModel(String),
    #[error("assignment has {got} layers, architecture has {expected}")]
    LayerCountMismatch { expected: usize, got: usize },
    #[error("no operations to schedule")]
    EmptyWorkload,
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("cannot read profile: {0}")]
    Io(#[from] std::io::Error),
}

/// Bit widths of a (weights, activations) MAC operand pair.
pub type PrecisionPair = (u8, u8);

#[derive(Debug, Clone)]
pub struct HwProfile {
    pub name: String,
    pub weight_precisions: Vec<Precision>,
    pub activation_precisions: Vec<Precision>,
    /// weights and activations must use the same precision per layer
    pub tie_wa: bool,
    /// count element-wise operations as 16x16 MACs in the speedup/energy sums
    pub count_elementwise: bool,
    pub speedup: BTreeMap<PrecisionPair, f64>,
    pub mac_energy_pj: Option<BTreeMap<PrecisionPair, f64>>,
    pub bit_transfer_pj: Option<f64>,
    pub sram_bytes: Option<u64>,
}

impl HwProfile {
    /// Reconfigurable-MAC platform: one precision per layer, 4/8/16-bit,
    /// element-wise work runs at 16-bit rate, full energy model.
    pub fn silago() -> Self {
        let prec = vec![Precision::Int4, Precision::Int8, Precision::Fix16];
        let speedup = BTreeMap::from([((4, 4), 4.0), ((8, 8), 2.0), ((16, 16), 1.0)]);
        let energy = BTreeMap::from([((4, 4), 0.153), ((8, 8), 0.542), ((16, 16), 1.666)]);
        HwProfile {
            name: "silago".into(),
            weight_precisions: prec.clone(),
            activation_precisions: prec,
            tie_wa: true,
            count_elementwise: true,
            speedup,
            mac_energy_pj: Some(energy),
            bit_transfer_pj: Some(0.08),
            sram_bytes: None,
        }
    }

    /// Bit-serial fused-PE platform: independent weight/activation precision
    /// from 2 to 16 bits. Each PE fuses 16 two-bit multipliers, so the MAC
    /// rate scales with 64 / ((w/2) * (a/2)); no energy model is published.
    pub fn bitfusion() -> Self {
        let prec = vec![Precision::Int2, Precision::Int4, Precision::Int8, Precision::Fix16];
        let mut speedup = BTreeMap::new();
        for &w in &[2u8, 4, 8, 16] {
            for &a in &[2u8, 4, 8, 16] {
                let bricks = (w.max(2) as f64 / 2.0) * (a.max(2) as f64 / 2.0);
                speedup.insert((w, a), 64.0 / bricks);
            }
        }
        HwProfile {
            name: "bitfusion".into(),
            weight_precisions: prec.clone(),
            activation_precisions: prec,
            tie_wa: false,
            count_elementwise: false,
            speedup,
            mac_energy_pj: None,
            bit_transfer_pj: None,
            sram_bytes: None,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "silago" => Some(Self::silago()),
            "bitfusion" => Some(Self::bitfusion()),
            _ => None,
        }
    }

    pub fn speedup_of(&self, pair: PrecisionPair) -> Result<f64, HwError> {
        self.speedup
            .get(&pair)
            .copied()
            .ok_or_else(|| HwError::UnsupportedPair {
                profile: self.name.clone(),
                w: pair.0,
                a: pair.1,
            })
    }

    pub fn has_energy_model(&self) -> bool {
        self.mac_energy_pj.is_some()
    }

    fn mac_energy_of(&self, pair: PrecisionPair) -> Result<f64, HwError> {
        let table = self
            .mac_energy_pj
            .as_ref()
            .ok_or_else(|| HwError::NoEnergyModel(self.name.clone()))?;
        table
            .get(&pair)
            .copied()
            .ok_or_else(|| HwError::UnsupportedPair {
                profile: self.name.clone(),
                w: pair.0,
                a: pair.1,
            })
    }

    /// Check internal consistency: every usable pair priced, 16x16 baseline
    /// normalized to 1, positive costs.
    pub fn validate(&self) -> Result<(), HwError> {
        let bad = |msg: String| Err(HwError::InvalidProfile(msg));
        if self.weight_precisions.is_empty() || self.activation_precisions.is_empty() {
            return bad("no supported precisions".into());
        }
        for &w in &self.weight_precisions {
            for &a in &self.activation_precisions {
                if self.tie_wa && w != a {
                    continue;
                }
                let pair = (w.bit_width(), a.bit_width());
                if !self.speedup.contains_key(&pair) {
                    return bad(format!("missing speedup for {}x{}", pair.0, pair.1));
                }
                if let Some(table) = &self.mac_energy_pj {
                    if !table.contains_key(&pair) {
                        return bad(format!("missing energy for {}x{}", pair.0, pair.1));
                    }
                }
            }
        }
        if self.count_elementwise && !self.speedup.contains_key(&(16, 16)) {
            return bad("element-wise counting requires a 16x16 entry".into());
        }
        if let Some(&base) = self.speedup.get(&(16, 16)) {
            if base != 1.0 {
                return bad(format!("16x16 speedup must be 1, got {base}"));
            }
        }
        if self.speedup.values().any(|&s| !(s > 0.0)) {
            return bad("speedups must be positive".into());
        }
        if let Some(table) = &self.mac_energy_pj {
            if table.values().any(|&e| !(e > 0.0)) {
                return bad("energies must be positive".into());
            }
            if self.bit_transfer_pj.is_none() {
                return bad("energy model requires bit_transfer_pj".into());
            }
        }
        if let Some(t) = self.bit_transfer_pj {
            if !(t > 0.0) {
                return bad("bit_transfer_pj must be positive".into());
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HwError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Parse the `[general]` / `[speedup]` / `[energy]` profile format;
    /// precision pairs are keyed as `"WxA"`, e.g. `"16x16"`.
    pub fn from_toml_str(text: &str) -> Result<Self, HwError> {
        let raw: RawProfile =
            toml::from_str(text).map_err(|e| HwError::InvalidProfile(e.to_string()))?;
        let precisions = |bits: &[u8], what: &str| -> Result<Vec<Precision>, HwError> {
            bits.iter()
                .map(|&b| match b {
                    2 => Ok(Precision::Int2),
                    4 => Ok(Precision::Int4),
                    8 => Ok(Precision::Int8),
                    16 => Ok(Precision::Fix16),
                    other => Err(HwError::InvalidProfile(format!(
                        "{what} precision {other} not one of 2/4/8/16"
                    ))),
                })
                .collect()
        };
        let parse_pairs = |map: &BTreeMap<String, f64>| -> Result<BTreeMap<PrecisionPair, f64>, HwError> {
            map.iter()
                .map(|(k, &v)| {
                    let (w, a) = k
                        .split_once('x')
                        .and_then(|(w, a)| Some((w.parse::<u8>().ok()?, a.parse::<u8>().ok()?)))
                        .ok_or_else(|| {
                            HwError::InvalidProfile(format!("bad precision pair key {k:?}"))
                        })?;
                    Ok(((w, a), v))
                })
                .collect()
        };
        let profile = HwProfile {
            name: raw.general.name,
            weight_precisions: precisions(&raw.general.weight_precisions, "weight")?,
            activation_precisions: precisions(&raw.general.activation_precisions, "activation")?,
            tie_wa: raw.general.tie_wa,
            count_elementwise: raw.general.count_elementwise,
            speedup: parse_pairs(&raw.speedup)?,
            mac_energy_pj: raw.energy.as_ref().map(|e| parse_pairs(e)).transpose()?,
            bit_transfer_pj: raw.general.bit_transfer_pj,
            sram_bytes: raw.general.sram_bytes,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_toml_string(&self) -> String {
        let mut out = String::new();
        let bits = |ps: &[Precision]| {
            ps.iter().map(|p| p.bit_width().to_string()).collect::<Vec<_>>().join(", ")
        };
        let _ = writeln!(out, "[general]");
        let _ = writeln!(out, "name = {:?}", self.name);
        let _ = writeln!(out, "tie_wa = {}", self.tie_wa);
        let _ = writeln!(out, "count_elementwise = {}", self.count_elementwise);
        let _ = writeln!(out, "weight_precisions = [{}]", bits(&self.weight_precisions));
        let _ = writeln!(out, "activation_precisions = [{}]", bits(&self.activation_precisions));
        if let Some(t) = self.bit_transfer_pj {
            let _ = writeln!(out, "bit_transfer_pj = {t}");
        }
        if let Some(s) = self.sram_bytes {
            let _ = writeln!(out, "sram_bytes = {s}");
        }
        let _ = writeln!(out, "\n[speedup]");
        for ((w, a), s) in &self.speedup {
            let _ = writeln!(out, "\"{w}x{a}\" = {s}");
        }
        if let Some(table) = &self.mac_energy_pj {
            let _ = writeln!(out, "\n[energy]");
            for ((w, a), e) in table {
                let _ = writeln!(out, "\"{w}x{a}\" = {e}");
            }
        }
        out
    }
}

#[derive(serde::Deserialize)]
struct RawGeneral {
    name: String,
    tie_wa: bool,
    count_elementwise: bool,
    weight_precisions: Vec<u8>,
    activation_precisions: Vec<u8>,
    bit_transfer_pj: Option<f64>,
    sram_bytes: Option<u64>,
}

#[derive(serde::Deserialize)]
struct RawProfile {
    general: RawGeneral,
    speedup: BTreeMap<String, f64>,
    energy: Option<BTreeMap<String, f64>>,
}

/// Full cost breakdown of one assignment on one profile.
#[derive(Debug, Clone)]
pub struct CostReport {
    pub model_bits: u64,
    pub total_param_count: u64,
    pub compression_ratio: f64,
    pub speedup: f64,
    pub energy_j: Option<f64>,
    pub mac_energy_pj: Option<f64>,
    pub transfer_energy_pj: Option<f64>,
    pub mac_counts: BTreeMap<PrecisionPair, u64>,
    pub total_macs: u64,
}

fn check_layers(specs: &[LayerSpec], assignment: &QuantAssignment) -> Result<(), HwError> {
    if specs.len() != assignment.layers.len() {
        return Err(HwError::LayerCountMismatch {
            expected: specs.len(),
            got: assignment.layers.len(),
        });
    }
    Ok(())
}

/// Stored model size: matrix-vector weights at their assigned width, every
/// auxiliary parameter at 16 bits.
pub fn memory_size_bits(specs: &[LayerSpec], assignment: &QuantAssignment) -> Result<u64, HwError> {
    check_layers(specs, assignment)?;
    Ok(specs
        .iter()
        .zip(&assignment.layers)
        .map(|(s, p)| {
            s.mxv_weight_count() as u64 * p.weights.bit_width() as u64
                + s.aux_param_count() as u64 * 16
        })
        .sum())
}

pub fn baseline_bits(specs: &[LayerSpec]) -> u64 {
    32 * specs.iter().map(|s| s.param_count() as u64).sum::<u64>()
}

pub fn compression_ratio(specs: &[LayerSpec], model_bits: u64) -> f64 {
    baseline_bits(specs) as f64 / model_bits as f64
}

/// Per-pair MAC counts over `seq_len` steps; element-wise work is booked as
/// 16x16 when the profile asks for it.
pub fn mac_counts(
    specs: &[LayerSpec],
    assignment: &QuantAssignment,
    count_elementwise: bool,
    seq_len: usize,
) -> Result<BTreeMap<PrecisionPair, u64>, HwError> {
    check_layers(specs, assignment)?;
    let mut counts: BTreeMap<PrecisionPair, u64> = BTreeMap::new();
    for (s, p) in specs.iter().zip(&assignment.layers) {
        let pair = (p.weights.bit_width(), p.activations.bit_width());
        let mxv = s.mxv_macs_per_step() as u64 * seq_len as u64;
        if mxv > 0 {
            *counts.entry(pair).or_insert(0) += mxv;
        }
        if count_elementwise {
            let elem = s.elementwise_macs_per_step() as u64 * seq_len as u64;
            if elem > 0 {
                *counts.entry((16, 16)).or_insert(0) += elem;
            }
        }
    }
    Ok(counts)
}

pub fn speedup(
    specs: &[LayerSpec],
    assignment: &QuantAssignment,
    profile: &HwProfile,
    seq_len: usize,
) -> Result<f64, HwError> {
    let counts = mac_counts(specs, assignment, profile.count_elementwise, seq_len)?;
    let total: u64 = counts.values().sum();
    if total == 0 {
        return Err(HwError::EmptyWorkload);
    }
    let mut weighted = 0.0;
    for (&pair, &n) in &counts {
        weighted += profile.speedup_of(pair)? * n as f64;
    }
    Ok(weighted / total as f64)
}

pub fn energy_joules(
    specs: &[LayerSpec],
    assignment: &QuantAssignment,
    profile: &HwProfile,
    seq_len: usize,
) -> Result<f64, HwError> {
    let report = cost_report(specs, assignment, profile, seq_len)?;
    report.energy_j.ok_or_else(|| HwError::NoEnergyModel(profile.name.clone()))
}

pub fn cost_report(
    specs: &[LayerSpec],
    assignment: &QuantAssignment,
    profile: &HwProfile,
    seq_len: usize,
) -> Result<CostReport, HwError> {
    let counts = mac_counts(specs, assignment, profile.count_elementwise, seq_len)?;
    let total: u64 = counts.values().sum();
    let model_bits = memory_size_bits(specs, assignment)?;
    let speedup = if total == 0 {
        1.0
    } else {
        let mut weighted = 0.0;
        for (&pair, &n) in &counts {
            weighted += profile.speedup_of(pair)? * n as f64;
        }
        weighted / total as f64
    };
    let (mac_pj, transfer_pj, energy) = if profile.has_energy_model() {
        let mut mac_pj = 0.0;
        for (&pair, &n) in &counts {
            mac_pj += profile.mac_energy_of(pair)? * n as f64;
        }
        let transfer_pj = model_bits as f64
            * profile
                .bit_transfer_pj
                .ok_or_else(|| HwError::NoEnergyModel(profile.name.clone()))?;
        (Some(mac_pj), Some(transfer_pj), Some((mac_pj + transfer_pj) * 1e-12))
    } else {
        (None, None, None)
    };
    Ok(CostReport {
        model_bits,
        total_param_count: specs.iter().map(|s| s.param_count() as u64).sum(),
        compression_ratio: compression_ratio(specs, model_bits),
        speedup,
        energy_j: energy,
        mac_energy_pj: mac_pj,
        transfer_energy_pj: transfer_pj,
        mac_counts: counts,
        total_macs: total,
    })
}
