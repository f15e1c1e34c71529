//! The quantization search: genomes encode per-layer precisions, the genetic
//! engine optimizes error against hardware costs.
//!
//! Three modes share one evaluator core. Inference-only scores every genome
//! by post-training quantization of the baseline parameters. The fixed
//! three-beacon mode also scores against a retrained beacon picked by the
//! first layer's precision and keeps the better error. The dynamic mode
//! starts from the same three beacons and retrains new ones whenever a
//! hardware-feasible, nearly-error-feasible solution sits too far from every
//! existing beacon.

use crate::dataset::Sample;
use crate::hwcost::{cost_report, CostReport, HwError, HwProfile};
use crate::quant::{Precision, QuantError};
use crate::sru::{
    calibrate, predict_label, CalibrationTable, LayerPrecision, NetError, QuantAssignment,
    QuantizedNet, SruNetwork,
};
use crate::trainer::{retrain_binary_connect, Beacon, BeaconKind, TrainConfig, TrainError};
use nsga2::{evolve, Evaluation, GaConfig, Genome, Problem};
use rayon::prelude::*;
use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("genome length {got}, expected {expected}")]
    GenomeLength { expected: usize, got: usize },
    #[error("gene {code} at position {position} is not a precision code")]
    BadGene { position: usize, code: u8 },
    #[error("profile {profile} does not allow {what} precision {precision} (layer {layer})")]
    UnsupportedPrecision {
        profile: String,
        what: &'static str,
        precision: &'static str,
        layer: usize,
    },
    #[error("weight-code vectors differ in length: {a} vs {b}")]
    DistanceLength { a: usize, b: usize },
    #[error("objective list invalid: {0}")]
    Objectives(String),
    #[error("beacon mode requires a beacon configuration")]
    MissingBeaconConfig,
    #[error("tie_wa assignment has weights != activations in layer {0}")]
    NotTied(usize),
    #[error(transparent)]
    Hw(#[from] HwError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error("beacon retraining failed: {0}")]
    Retrain(#[from] TrainError),
    #[error("search failed: {0}")]
    Engine(String),
}

/// Objectives are all minimized; speedup enters negated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Error,
    Speedup,
    Energy,
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    InferenceOnly,
    BeaconFixed3,
    BeaconDynamic,
}

impl SearchMode {
    pub fn uses_beacons(self) -> bool {
        !matches!(self, SearchMode::InferenceOnly)
    }
}

/// Everything a genome evaluation needs, fixed for the whole search.
#[derive(Debug, Clone)]
pub struct SearchContext {
    pub network: SruNetwork,
    pub calibration: CalibrationTable,
    /// sequences used to calibrate the baseline; beacons are calibrated on
    /// the same ones so their quantized inference is self-consistent
    pub calib_sequences: Vec<Vec<Vec<f64>>>,
    pub profile: HwProfile,
    pub objectives: Vec<ObjectiveKind>,
    pub max_model_bits: Option<u64>,
    pub error_threshold: f64,
    /// split the error objective is measured on
    pub eval_samples: Vec<Sample>,
    /// held-out split used only for the final records
    pub test_samples: Vec<Sample>,
    pub seq_len: usize,
}

#[derive(Debug, Clone)]
pub struct BeaconConfig {
    /// retrain when the nearest beacon is farther than this
    pub distance_threshold: u32,
    /// cap on dynamically created beacons
    pub budget: usize,
    /// extra error headroom over the search threshold for the beacon-feasible
    /// area: high-error solutions may become feasible once retrained
    pub area_slack: f64,
    /// per-beacon seeds are retrain.seed + creation index
    pub retrain: TrainConfig,
    pub train_samples: Vec<Sample>,
}

/// A retrained beacon plus the calibration that matches its parameters.
#[derive(Debug, Clone)]
pub struct BeaconEntry {
    pub beacon: Beacon,
    pub calibration: CalibrationTable,
}

#[derive(Debug, Clone)]
pub struct NamedBeacon {
    pub name: String,
    pub entry: BeaconEntry,
}

/// Per-evaluation detail kept alongside the engine's objective log.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalDetail {
    pub base_error: f64,
    pub beacon_error: Option<f64>,
    pub final_error: f64,
    pub beacon: Option<String>,
    pub model_bits: u64,
    pub cp_r: f64,
    pub speedup: f64,
    pub energy_j: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalLogEntry {
    pub generation: usize,
    pub genome: Vec<u8>,
    pub objectives: Vec<f64>,
    pub violation: f64,
    #[serde(flatten)]
    pub detail: EvalDetail,
}

/// One row of the final Pareto report.
#[derive(Debug, Clone)]
pub struct ParetoRecord {
    pub genome: Vec<u8>,
    pub assignment: QuantAssignment,
    pub wer_v: f64,
    pub wer_t: f64,
    pub cp_r: f64,
    pub speedup: f64,
    pub energy_j: Option<f64>,
    pub model_bits: u64,
    /// beacon whose parameters won the error minimum; None when the baseline won
    pub beacon: Option<String>,
    /// engine-facing objective vector, reproducible by re-evaluation
    pub objectives: Vec<f64>,
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub records: Vec<ParetoRecord>,
    pub log: Vec<EvalLogEntry>,
    pub evaluations: usize,
    pub beacons: Vec<NamedBeacon>,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// genome encoding
// ---------------------------------------------------------------------------

/// Genes per layer: one shared precision under tie_wa, else weight then
/// activation.
pub fn genome_length(n_layers: usize, tie_wa: bool) -> usize {
    if tie_wa {
        n_layers
    } else {
        2 * n_layers
    }
}

fn supported(profile: &HwProfile, p: Precision, weights: bool) -> bool {
    let list = if weights {
        &profile.weight_precisions
    } else {
        &profile.activation_precisions
    };
    list.contains(&p)
}

pub fn decode(
    genome: &[u8],
    profile: &HwProfile,
    n_layers: usize,
) -> Result<QuantAssignment, SearchError> {
    let expected = genome_length(n_layers, profile.tie_wa);
    if genome.len() != expected {
        return Err(SearchError::GenomeLength {
            expected,
            got: genome.len(),
        });
    }
    let precision_at = |position: usize| -> Result<Precision, SearchError> {
        Precision::from_code(genome[position]).map_err(|_| SearchError::BadGene {
            position,
            code: genome[position],
        })
    };
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (w, a) = if profile.tie_wa {
            let p = precision_at(l)?;
            (p, p)
        } else {
            (precision_at(2 * l)?, precision_at(2 * l + 1)?)
        };
        if !supported(profile, w, true) {
            return Err(SearchError::UnsupportedPrecision {
                profile: profile.name.clone(),
                what: "weight",
                precision: w.name(),
                layer: l,
            });
        }
        if !supported(profile, a, false) {
            return Err(SearchError::UnsupportedPrecision {
                profile: profile.name.clone(),
                what: "activation",
                precision: a.name(),
                layer: l,
            });
        }
        layers.push(LayerPrecision {
            weights: w,
            activations: a,
        });
    }
    Ok(QuantAssignment { layers })
}

pub fn encode(assignment: &QuantAssignment, tie_wa: bool) -> Result<Vec<u8>, SearchError> {
    let mut genome = Vec::with_capacity(genome_length(assignment.layers.len(), tie_wa));
    for (l, p) in assignment.layers.iter().enumerate() {
        if tie_wa {
            if p.weights != p.activations {
                return Err(SearchError::NotTied(l));
            }
            genome.push(p.weights.code());
        } else {
            genome.push(p.weights.code());
            genome.push(p.activations.code());
        }
    }
    Ok(genome)
}

/// Encoded weight precisions only; the beacon distance ignores activations.
pub fn weight_codes(assignment: &QuantAssignment) -> Vec<u8> {
    assignment.layers.iter().map(|p| p.weights.code()).collect()
}

/// Manhattan distance between encoded weight-precision vectors.
pub fn beacon_distance(a: &[u8], b: &[u8]) -> Result<u32, SearchError> {
    if a.len() != b.len() {
        return Err(SearchError::DistanceLength {
            a: a.len(),
            b: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as i32 - y as i32).unsigned_abs())
        .sum())
}

// ---------------------------------------------------------------------------
// beacons
// ---------------------------------------------------------------------------

/// Which beacon serves an assignment in the fixed three-beacon mode.
pub fn select_beacon(assignment: &QuantAssignment) -> BeaconKind {
    let first = &assignment.layers[0];
    if first.weights == Precision::Int2 {
        BeaconKind::FirstLayer2Bit
    } else if first.weights == Precision::Fix16 && first.activations == Precision::Fix16 {
        BeaconKind::FirstLayerFix16
    } else {
        BeaconKind::General
    }
}

pub fn beacon_name(index: usize, kind: BeaconKind) -> String {
    match (index, kind) {
        (0, BeaconKind::General) => "general".into(),
        (1, BeaconKind::FirstLayer2Bit) => "first-2bit".into(),
        (2, BeaconKind::FirstLayerFix16) => "first-fix16".into(),
        (i, _) => format!("dyn-{i}"),
    }
}

/// The three standing beacon assignments: a general low-precision one and the
/// two first-layer specials.
pub fn preset_beacon_assignments(n_layers: usize) -> Vec<(BeaconKind, QuantAssignment)> {
    let general = QuantAssignment::uniform(n_layers, Precision::Int4, Precision::Int8);
    let mut first_2bit = general.clone();
    first_2bit.layers[0].weights = Precision::Int2;
    let mut first_fix16 = general.clone();
    first_fix16.layers[0] = LayerPrecision {
        weights: Precision::Fix16,
        activations: Precision::Fix16,
    };
    vec![
        (BeaconKind::General, general),
        (BeaconKind::FirstLayer2Bit, first_2bit),
        (BeaconKind::FirstLayerFix16, first_fix16),
    ]
}

fn make_beacon(
    ctx: &SearchContext,
    cfg: &BeaconConfig,
    kind: BeaconKind,
    assignment: &QuantAssignment,
    creation_index: usize,
) -> Result<BeaconEntry, TrainError> {
    let retrain_cfg = TrainConfig {
        seed: cfg.retrain.seed + creation_index as u64,
        ..cfg.retrain
    };
    let beacon = retrain_binary_connect(
        &ctx.network,
        assignment,
        encode(assignment, false).expect("generic encoding never fails"),
        kind,
        &cfg.train_samples,
        &retrain_cfg,
    )?;
    let calibration = calibrate(&beacon.network, &ctx.calib_sequences)?;
    Ok(BeaconEntry {
        beacon,
        calibration,
    })
}

/// Retrain the three preset beacons in order.
pub fn build_preset_beacons(
    ctx: &SearchContext,
    cfg: &BeaconConfig,
) -> Result<Vec<BeaconEntry>, SearchError> {
    preset_beacon_assignments(ctx.network.specs.len())
        .iter()
        .enumerate()
        .map(|(i, (kind, assignment))| Ok(make_beacon(ctx, cfg, *kind, assignment, i)?))
        .collect()
}

fn nearest_beacon(codes: &[u8], beacons: &[BeaconEntry]) -> Result<Option<(usize, u32)>, SearchError> {
    let mut best: Option<(usize, u32)> = None;
    for (i, entry) in beacons.iter().enumerate() {
        let beacon_codes: Vec<u8> = entry
            .beacon
            .source_genome
            .iter()
            .step_by(2)
            .copied()
            .collect();
        let d = beacon_distance(codes, &beacon_codes)?;
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    Ok(best)
}

pub struct PolicyOutcome {
    /// index of the beacon to evaluate with
    pub nearest: usize,
    pub created: bool,
    pub warning: Option<String>,
}

/// The dynamic rule: retrain when every existing beacon is farther than the
/// threshold (and budget remains), then serve the nearest beacon.
pub fn dynamic_beacon_policy<F>(
    codes: &[u8],
    beacons: &mut Vec<BeaconEntry>,
    threshold: u32,
    remaining_budget: usize,
    retrain: F,
) -> Result<PolicyOutcome, SearchError>
where
    F: FnOnce() -> Result<BeaconEntry, TrainError>,
{
    let near = nearest_beacon(codes, beacons)?;
    let too_far = near.map_or(true, |(_, d)| d > threshold);
    if too_far && remaining_budget > 0 {
        match retrain() {
            Ok(entry) => {
                beacons.push(entry);
                return Ok(PolicyOutcome {
                    nearest: beacons.len() - 1,
                    created: true,
                    warning: None,
                });
            }
            Err(e) => {
                let Some((nearest, _)) = near else {
                    return Err(SearchError::Retrain(e));
                };
                return Ok(PolicyOutcome {
                    nearest,
                    created: false,
                    warning: Some(format!("beacon retraining failed, using nearest: {e}")),
                });
            }
        }
    }
    let (nearest, _) = near.ok_or(SearchError::MissingBeaconConfig)?;
    Ok(PolicyOutcome {
        nearest,
        created: false,
        warning: None,
    })
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

pub fn quantized_error(
    net: &SruNetwork,
    assignment: &QuantAssignment,
    calib: &CalibrationTable,
    samples: &[Sample],
) -> Result<f64, NetError> {
    let q = QuantizedNet::prepare(net, assignment, calib)?;
    let mut wrong = 0usize;
    for s in samples {
        if predict_label(&q.forward(&s.seq)?) != s.label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / samples.len().max(1) as f64)
}

fn hardware_feasible(ctx: &SearchContext, model_bits: u64) -> bool {
    ctx.max_model_bits.map_or(true, |limit| model_bits <= limit)
}

/// max(0, bits over limit)/limit + max(0, error over threshold)/threshold
fn violation_of(ctx: &SearchContext, model_bits: u64, error: f64) -> f64 {
    let mut v = 0.0;
    if let Some(limit) = ctx.max_model_bits {
        if model_bits > limit {
            v += (model_bits - limit) as f64 / limit as f64;
        }
    }
    if error > ctx.error_threshold {
        v += (error - ctx.error_threshold) / ctx.error_threshold;
    }
    v
}

fn objective_vector(ctx: &SearchContext, error: f64, report: &CostReport) -> Vec<f64> {
    ctx.objectives
        .iter()
        .map(|o| match o {
            ObjectiveKind::Error => error,
            ObjectiveKind::Speedup => -report.speedup,
            ObjectiveKind::Energy => report.energy_j.expect("energy objective pre-validated"),
            ObjectiveKind::Memory => report.model_bits as f64,
        })
        .collect()
}

fn finish_eval(
    ctx: &SearchContext,
    report: &CostReport,
    base_error: f64,
    beacon_error: Option<f64>,
    beacon: Option<String>,
) -> (Evaluation, EvalDetail) {
    let final_error = beacon_error.map_or(base_error, |b| b.min(base_error));
    // ties go to the baseline parameters
    let winner = match beacon_error {
        Some(b) if b < base_error => beacon,
        _ => None,
    };
    let detail = EvalDetail {
        base_error,
        beacon_error,
        final_error,
        beacon: winner,
        model_bits: report.model_bits,
        cp_r: report.compression_ratio,
        speedup: report.speedup,
        energy_j: report.energy_j,
    };
    let eval = Evaluation {
        objectives: objective_vector(ctx, final_error, report),
        violation: violation_of(ctx, report.model_bits, final_error),
    };
    (eval, detail)
}

/// Score a genome by post-training quantization of the baseline parameters.
pub fn evaluate_inference_only(
    ctx: &SearchContext,
    genome: &[u8],
) -> Result<(Evaluation, EvalDetail), SearchError> {
    let assignment = decode(genome, &ctx.profile, ctx.network.specs.len())?;
    let report = cost_report(&ctx.network.specs, &assignment, &ctx.profile, ctx.seq_len)?;
    let base = quantized_error(&ctx.network, &assignment, &ctx.calibration, &ctx.eval_samples)?;
    Ok(finish_eval(ctx, &report, base, None, None))
}

/// Score a genome twice, with the baseline and with the beacon selected by
/// the first layer's precision, and keep the lower error.
pub fn evaluate_beacon_based(
    ctx: &SearchContext,
    genome: &[u8],
    beacons: &[BeaconEntry],
) -> Result<(Evaluation, EvalDetail), SearchError> {
    let assignment = decode(genome, &ctx.profile, ctx.network.specs.len())?;
    let report = cost_report(&ctx.network.specs, &assignment, &ctx.profile, ctx.seq_len)?;
    let base = quantized_error(&ctx.network, &assignment, &ctx.calibration, &ctx.eval_samples)?;
    let kind = select_beacon(&assignment);
    let index = beacons
        .iter()
        .position(|e| e.beacon.kind == kind)
        .ok_or(SearchError::MissingBeaconConfig)?;
    let entry = &beacons[index];
    let beacon_err = quantized_error(
        &entry.beacon.network,
        &assignment,
        &entry.calibration,
        &ctx.eval_samples,
    )?;
    Ok(finish_eval(
        ctx,
        &report,
        base,
        Some(beacon_err),
        Some(beacon_name(index, kind)),
    ))
}

// ---------------------------------------------------------------------------
// the GA problem
// ---------------------------------------------------------------------------

struct GaProblem<'a> {
    ctx: &'a SearchContext,
    mode: SearchMode,
    beacon_cfg: Option<&'a BeaconConfig>,
    weight_alphabet: Vec<u8>,
    activation_alphabet: Vec<u8>,
    tie_alphabet: Vec<u8>,
    beacons: Mutex<Vec<BeaconEntry>>,
    details: Mutex<BTreeMap<Genome, EvalDetail>>,
    /// pure-mode memo: identical genomes re-score identically
    cache: Mutex<HashMap<Genome, (Evaluation, EvalDetail)>>,
    warnings: Mutex<Vec<String>>,
}

impl GaProblem<'_> {
    fn evaluate_dynamic(&self, genome: &[u8]) -> Result<(Evaluation, EvalDetail), SearchError> {
        let cfg = self.beacon_cfg.ok_or(SearchError::MissingBeaconConfig)?;
        let assignment = decode(genome, &self.ctx.profile, self.ctx.network.specs.len())?;
        let report = cost_report(
            &self.ctx.network.specs,
            &assignment,
            &self.ctx.profile,
            self.ctx.seq_len,
        )?;
        let base = quantized_error(
            &self.ctx.network,
            &assignment,
            &self.ctx.calibration,
            &self.ctx.eval_samples,
        )?;
        let in_area = hardware_feasible(self.ctx, report.model_bits)
            && base <= self.ctx.error_threshold + cfg.area_slack;
        if !in_area {
            return Ok(finish_eval(self.ctx, &report, base, None, None));
        }
        let codes = weight_codes(&assignment);
        let mut beacons = self.beacons.lock().expect("beacon lock");
        let creation_index = beacons.len();
        let remaining = (3 + cfg.budget).saturating_sub(creation_index);
        let outcome = dynamic_beacon_policy(
            &codes,
            &mut beacons,
            cfg.distance_threshold,
            remaining,
            || make_beacon(self.ctx, cfg, BeaconKind::General, &assignment, creation_index),
        )?;
        if let Some(w) = outcome.warning {
            self.warnings.lock().expect("warning lock").push(w);
        }
        let entry = &beacons[outcome.nearest];
        let name = beacon_name(outcome.nearest, entry.beacon.kind);
        let beacon_err = quantized_error(
            &entry.beacon.network,
            &assignment,
            &entry.calibration,
            &self.ctx.eval_samples,
        )?;
        drop(beacons);
        Ok(finish_eval(self.ctx, &report, base, Some(beacon_err), Some(name)))
    }
}

impl Problem for GaProblem<'_> {
    type Error = SearchError;

    fn genome_length(&self) -> usize {
        genome_length(self.ctx.network.specs.len(), self.ctx.profile.tie_wa)
    }

    fn alphabet(&self, position: usize) -> &[u8] {
        if self.ctx.profile.tie_wa {
            &self.tie_alphabet
        } else if position % 2 == 0 {
            &self.weight_alphabet
        } else {
            &self.activation_alphabet
        }
    }

    fn evaluate(&self, genome: &[u8]) -> Result<Evaluation, SearchError> {
        if self.mode != SearchMode::BeaconDynamic {
            if let Some((eval, _)) = self.cache.lock().expect("cache lock").get(genome) {
                return Ok(eval.clone());
            }
        }
        let (eval, detail) = match self.mode {
            SearchMode::InferenceOnly => evaluate_inference_only(self.ctx, genome)?,
            SearchMode::BeaconFixed3 => {
                let beacons = self.beacons.lock().expect("beacon lock");
                evaluate_beacon_based(self.ctx, genome, &beacons)?
            }
            SearchMode::BeaconDynamic => self.evaluate_dynamic(genome)?,
        };
        self.details
            .lock()
            .expect("detail lock")
            .insert(genome.to_vec(), detail.clone());
        if self.mode != SearchMode::BeaconDynamic {
            self.cache
                .lock()
                .expect("cache lock")
                .insert(genome.to_vec(), (eval.clone(), detail));
        }
        Ok(eval)
    }

    fn evaluate_batch(&self, genomes: &[Genome]) -> Result<Vec<Evaluation>, SearchError> {
        match self.mode {
            // beacon creation must observe a stable order
            SearchMode::BeaconDynamic => genomes.iter().map(|g| self.evaluate(g)).collect(),
            _ => genomes.par_iter().map(|g| self.evaluate(g)).collect(),
        }
    }
}

fn alphabet_codes(precisions: &[Precision]) -> Vec<u8> {
    let mut codes: Vec<u8> = precisions.iter().map(|p| p.code()).collect();
    codes.sort_unstable();
    codes.dedup();
    codes
}

fn validate(ctx: &SearchContext) -> Result<(), SearchError> {
    if ctx.objectives.len() < 2 {
        return Err(SearchError::Objectives(
            "need at least two objectives".into(),
        ));
    }
    if !ctx.objectives.contains(&ObjectiveKind::Error) {
        return Err(SearchError::Objectives(
            "the error objective is mandatory".into(),
        ));
    }
    if ctx.objectives.contains(&ObjectiveKind::Energy) && !ctx.profile.has_energy_model() {
        return Err(SearchError::Objectives(format!(
            "profile {} has no energy model",
            ctx.profile.name
        )));
    }
    let mut seen = Vec::new();
    for o in &ctx.objectives {
        if seen.contains(o) {
            return Err(SearchError::Objectives("duplicate objective".into()));
        }
        seen.push(*o);
    }
    ctx.profile.validate()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// the search driver
// ---------------------------------------------------------------------------

/// Re-score one genome against the final beacon list and fill in the
/// held-out test error with whichever parameters won on validation.
/// Returns the record plus its constraint violation.
pub fn record_for_genome(
    ctx: &SearchContext,
    genome: &[u8],
    mode: SearchMode,
    beacons: &[BeaconEntry],
) -> Result<(ParetoRecord, f64), SearchError> {
    let assignment = decode(genome, &ctx.profile, ctx.network.specs.len())?;
    let report = cost_report(&ctx.network.specs, &assignment, &ctx.profile, ctx.seq_len)?;
    let base = quantized_error(&ctx.network, &assignment, &ctx.calibration, &ctx.eval_samples)?;
    let chosen: Option<(usize, String)> = match mode {
        SearchMode::InferenceOnly => None,
        SearchMode::BeaconFixed3 => {
            let kind = select_beacon(&assignment);
            let index = beacons
                .iter()
                .position(|e| e.beacon.kind == kind)
                .ok_or(SearchError::MissingBeaconConfig)?;
            Some((index, beacon_name(index, kind)))
        }
        SearchMode::BeaconDynamic => {
            let codes = weight_codes(&assignment);
            nearest_beacon(&codes, beacons)?
                .map(|(i, _)| (i, beacon_name(i, beacons[i].beacon.kind)))
        }
    };
    let (beacon_err, winner, winner_index) = match &chosen {
        None => (None, None, None),
        Some((index, name)) => {
            let entry = &beacons[*index];
            let err = quantized_error(
                &entry.beacon.network,
                &assignment,
                &entry.calibration,
                &ctx.eval_samples,
            )?;
            if err < base {
                (Some(err), Some(name.clone()), Some(*index))
            } else {
                (Some(err), None, None)
            }
        }
    };
    let wer_v = beacon_err.map_or(base, |b| b.min(base));
    let wer_t = match winner_index {
        Some(index) => quantized_error(
            &beacons[index].beacon.network,
            &assignment,
            &beacons[index].calibration,
            &ctx.test_samples,
        )?,
        None => quantized_error(&ctx.network, &assignment, &ctx.calibration, &ctx.test_samples)?,
    };
    let violation = violation_of(ctx, report.model_bits, wer_v);
    let record = ParetoRecord {
        genome: genome.to_vec(),
        assignment,
        wer_v,
        wer_t,
        cp_r: report.compression_ratio,
        speedup: report.speedup,
        energy_j: report.energy_j,
        model_bits: report.model_bits,
        beacon: winner,
        objectives: objective_vector(ctx, wer_v, &report),
    };
    Ok((record, violation))
}

pub fn run_search(
    ctx: &SearchContext,
    mode: SearchMode,
    ga: &GaConfig,
    beacon_cfg: Option<&BeaconConfig>,
) -> Result<SearchOutcome, SearchError> {
    validate(ctx)?;
    let initial_beacons = if mode.uses_beacons() {
        let cfg = beacon_cfg.ok_or(SearchError::MissingBeaconConfig)?;
        build_preset_beacons(ctx, cfg)?
    } else {
        Vec::new()
    };
    let problem = GaProblem {
        ctx,
        mode,
        beacon_cfg,
        weight_alphabet: alphabet_codes(&ctx.profile.weight_precisions),
        activation_alphabet: alphabet_codes(&ctx.profile.activation_precisions),
        tie_alphabet: {
            let w = alphabet_codes(&ctx.profile.weight_precisions);
            alphabet_codes(&ctx.profile.activation_precisions)
                .into_iter()
                .filter(|c| w.contains(c))
                .collect()
        },
        beacons: Mutex::new(initial_beacons),
        details: Mutex::new(BTreeMap::new()),
        cache: Mutex::new(HashMap::new()),
        warnings: Mutex::new(Vec::new()),
    };
    let pareto = evolve(&problem, ga).map_err(|e| SearchError::Engine(e.to_string()))?;

    let details = problem.details.into_inner().expect("detail lock");
    let log: Vec<EvalLogEntry> = pareto
        .log
        .iter()
        .map(|r| {
            let detail = details
                .get(&r.genome)
                .cloned()
                .expect("every logged genome was evaluated");
            EvalLogEntry {
                generation: r.generation,
                genome: r.genome.clone(),
                objectives: r.objectives.clone(),
                violation: r.violation,
                detail,
            }
        })
        .collect();

    let beacons = problem.beacons.into_inner().expect("beacon lock");
    let warnings = problem.warnings.into_inner().expect("warning lock");

    // final records score against the finished beacon list; in dynamic mode
    // that can shift errors, so feasibility and dominance are re-checked
    let mut scored: Vec<(ParetoRecord, f64)> = pareto
        .front
        .iter()
        .map(|s| record_for_genome(ctx, &s.genome, mode, &beacons))
        .collect::<Result<_, _>>()?;
    scored.retain(|(_, violation)| *violation == 0.0);
    let mut keep = vec![true; scored.len()];
    for i in 0..scored.len() {
        for j in 0..scored.len() {
            if i != j
                && keep[j]
                && nsga2::pareto_dominates(&scored[j].0.objectives, &scored[i].0.objectives)
            {
                keep[i] = false;
                break;
            }
        }
    }
    let mut records: Vec<ParetoRecord> = scored
        .into_iter()
        .zip(keep)
        .filter_map(|((record, _), k)| k.then_some(record))
        .collect();
    records.sort_by(|a, b| {
        a.wer_v
            .total_cmp(&b.wer_v)
            .then_with(|| a.genome.cmp(&b.genome))
    });

    let named = beacons
        .into_iter()
        .enumerate()
        .map(|(i, entry)| NamedBeacon {
            name: beacon_name(i, entry.beacon.kind),
            entry,
        })
        .collect();

    Ok(SearchOutcome {
        records,
        log,
        evaluations: pareto.evaluations,
        beacons: named,
        warnings,
    })
}
