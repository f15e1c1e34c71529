//! The command-line pipeline: `train` fits the baseline, `search` runs the
//! precision search against a checkpoint, `verify` re-derives a finished
//! report and fails on any discrepancy.
//!
//! Every run is reproducible from its config and seeds: given the same
//! inputs, output files match byte for byte regardless of `--jobs`.

use crate::checkpoint;
use crate::config::{ConfigError, ExperimentConfig, ModeSetting, ProfileRef};
use crate::dataset::{calibration_indices, generate, stratified_half_indices, Dataset};
use crate::hwcost::baseline_bits;
use crate::search::{
    record_for_genome, run_search, BeaconConfig, BeaconEntry, NamedBeacon, ObjectiveKind,
    ParetoRecord, SearchContext, SearchMode, SearchOutcome,
};
use crate::sru::calibrate;
use crate::trainer::{classification_error, train_baseline, Beacon, BeaconKind};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
    Verify(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Verify(_) => EXIT_VERIFY,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
            CliError::Verify(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

macro_rules! runtime_from {
    ($($ty:ty),+) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(e.to_string())
            }
        })+
    };
}

runtime_from!(
    std::io::Error,
    crate::checkpoint::CheckpointError,
    crate::trainer::TrainError,
    crate::search::SearchError,
    crate::sru::NetError,
    crate::hwcost::HwError,
    serde_json::Error
);

#[derive(Parser, Debug)]
#[command(
    name = "mohaq",
    about = "Mixed-precision quantization search for SRU networks",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the full-precision baseline and write a checkpoint
    Train(TrainArgs),
    /// Search per-layer precisions against a trained checkpoint
    Search(SearchArgs),
    /// Re-derive a search report and fail on any mismatch
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Config file path or preset name (wer-mem, silago, bitfusion, bitfusion-deep)
    #[arg(long, default_value = "wer-mem")]
    config: String,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Override the training seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Baseline checkpoint written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Search mode: inference | beacon3 | beacon-dyn
    #[arg(long)]
    mode: Option<String>,
    /// Hardware profile: silago | bitfusion | path to a profile TOML
    #[arg(long)]
    profile: Option<String>,
    /// Cap on concurrent genome evaluations
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Override the search seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    run: RunArgs,
}

/// Parse argv and run; the return value is the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Search(args) => cmd_search(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn resolve_config(spec: &str) -> Result<ExperimentConfig, CliError> {
    let path = Path::new(spec);
    if path.exists() {
        Ok(ExperimentConfig::load(path)?)
    } else if ExperimentConfig::preset_names().contains(&spec) {
        Ok(ExperimentConfig::preset(spec)?)
    } else {
        Err(CliError::Usage(format!(
            "config not found: {spec} (no such file, and not a preset name)"
        )))
    }
}

fn apply_run_overrides(cfg: &mut ExperimentConfig, args: &RunArgs) -> Result<(), CliError> {
    if let Some(mode) = &args.mode {
        cfg.search.mode = ModeSetting::parse(mode)?;
    }
    if let Some(profile) = &args.profile {
        cfg.search.profile = ProfileRef::parse(profile);
    }
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("cannot size the thread pool: {e}")))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(&args.common.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let data = generate(&cfg.task);
    let outcome = train_baseline(cfg.net_dims(), &data.train, &data.val, &cfg.train)?;
    std::fs::create_dir_all(&args.common.out)?;
    let ckpt = args.common.out.join("baseline.net");
    checkpoint::save(&outcome.network, &ckpt)?;
    let mut summary = String::new();
    summary.push_str(&format!("epochs: {}\n", outcome.epoch_losses.len()));
    if let Some(loss) = outcome.epoch_losses.last() {
        summary.push_str(&format!("final_loss: {loss}\n"));
    }
    summary.push_str(&format!("val_error: {}\n", outcome.val_error));
    std::fs::write(args.common.out.join("train_summary.txt"), &summary)?;
    print!("{summary}");
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// shared search/verify setup
// ---------------------------------------------------------------------------

struct Experiment {
    cfg: ExperimentConfig,
    ctx: SearchContext,
    mode: SearchMode,
    beacon_cfg: BeaconConfig,
}

fn build_experiment(cfg: ExperimentConfig, checkpoint_path: &Path) -> Result<Experiment, CliError> {
    let data: Dataset = generate(&cfg.task);
    let network = checkpoint::load(checkpoint_path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", checkpoint_path.display())))?;
    if network.dims != cfg.net_dims() {
        return Err(CliError::Usage(format!(
            "checkpoint dimensions {:?} do not match the config {:?}",
            network.dims,
            cfg.net_dims()
        )));
    }
    let calib_idx = calibration_indices(
        data.val.len(),
        cfg.search.calibration_count.min(data.val.len()),
        cfg.task.seed,
    );
    let calib_sequences: Vec<_> = calib_idx.iter().map(|&i| data.val[i].seq.clone()).collect();
    let calibration = calibrate(&network, &calib_sequences)?;
    let eval_idx = stratified_half_indices(&data.val, data.classes, cfg.task.seed);
    let eval_samples: Vec<_> = eval_idx.iter().map(|&i| data.val[i].clone()).collect();
    let baseline_error = classification_error(&network, &eval_samples)?;
    let error_threshold = cfg.search.error_threshold.resolve(baseline_error);
    let max_model_bits = cfg.search.min_compression.map(|c| {
        (baseline_bits(&network.specs) as f64 / c).floor() as u64
    });
    let profile = cfg.search.profile.load()?;
    let ctx = SearchContext {
        network,
        calibration,
        calib_sequences,
        profile,
        objectives: cfg.search.objectives.clone(),
        max_model_bits,
        error_threshold,
        eval_samples,
        test_samples: data.test.clone(),
        seq_len: cfg.task.seq_len,
    };
    let beacon_cfg = BeaconConfig {
        distance_threshold: cfg.beacon.distance_threshold,
        budget: cfg.beacon.budget,
        area_slack: cfg.beacon.area_slack,
        retrain: cfg.beacon.train_config(&cfg.train),
        train_samples: data.train,
    };
    let mode = cfg.search.mode.to_search_mode();
    Ok(Experiment {
        cfg,
        ctx,
        mode,
        beacon_cfg,
    })
}

// ---------------------------------------------------------------------------
// report files
// ---------------------------------------------------------------------------

pub const CSV_HEADER: &str = "solution,genome,wer_v,wer_t,cp_r,speedup,energy_J,beacon";

fn genome_digits(genome: &[u8]) -> String {
    genome.iter().map(|&g| char::from(b'0' + g)).collect()
}

fn csv_line(index: usize, r: &ParetoRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        index + 1,
        genome_digits(&r.genome),
        r.wer_v,
        r.wer_t,
        r.cp_r,
        r.speedup,
        r.energy_j.map(|e| e.to_string()).unwrap_or_default(),
        r.beacon.clone().unwrap_or_default(),
    )
}

fn pareto_csv(records: &[ParetoRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (i, r) in records.iter().enumerate() {
        out.push_str(&csv_line(i, r));
        out.push('\n');
    }
    out
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct BeaconMeta {
    name: String,
    kind: BeaconKind,
    source_genome: Vec<u8>,
    params_file: String,
}

fn save_beacons(out: &Path, beacons: &[NamedBeacon]) -> Result<(), CliError> {
    let mut metas = Vec::with_capacity(beacons.len());
    for (i, nb) in beacons.iter().enumerate() {
        let params_file = format!("beacon_{i}.net");
        checkpoint::save(&nb.entry.beacon.network, &out.join(&params_file))?;
        metas.push(BeaconMeta {
            name: nb.name.clone(),
            kind: nb.entry.beacon.kind,
            source_genome: nb.entry.beacon.source_genome.clone(),
            params_file,
        });
    }
    let json = serde_json::to_string_pretty(&metas)?;
    std::fs::write(out.join("beacons.json"), json + "\n")?;
    Ok(())
}

fn load_beacons(out: &Path, ctx: &SearchContext) -> Result<Vec<BeaconEntry>, CliError> {
    let path = out.join("beacons.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let metas: Vec<BeaconMeta> = serde_json::from_str(&text)?;
    let mut entries = Vec::with_capacity(metas.len());
    for meta in metas {
        let network = checkpoint::load(&out.join(&meta.params_file))?;
        let calibration = calibrate(&network, &ctx.calib_sequences)?;
        entries.push(BeaconEntry {
            beacon: Beacon {
                network,
                source_genome: meta.source_genome,
                kind: meta.kind,
            },
            calibration,
        });
    }
    Ok(entries)
}

fn objective_name(o: ObjectiveKind) -> &'static str {
    match o {
        ObjectiveKind::Error => "wer_v",
        ObjectiveKind::Speedup => "speedup",
        ObjectiveKind::Energy => "energy_J",
        ObjectiveKind::Memory => "model_bits",
    }
}

fn search_summary(cfg: &ExperimentConfig, outcome: &SearchOutcome) -> String {
    let mut s = String::new();
    s.push_str(&format!("mode: {}\n", cfg.search.mode.as_str()));
    s.push_str(&format!("evaluations: {}\n", outcome.evaluations));
    s.push_str(&format!("front size: {}\n", outcome.records.len()));
    for (k, o) in cfg.search.objectives.iter().enumerate() {
        let best = outcome
            .records
            .iter()
            .map(|r| r.objectives[k])
            .min_by(f64::total_cmp);
        if let Some(mut best) = best {
            if *o == ObjectiveKind::Speedup {
                best = -best;
            }
            s.push_str(&format!("best {}: {}\n", objective_name(*o), best));
        }
    }
    s.push_str(&format!("beacons: {}\n", outcome.beacons.len()));
    s.push_str(&format!("warnings: {}\n", outcome.warnings.len()));
    for w in &outcome.warnings {
        s.push_str(&format!("warning: {w}\n"));
    }
    s
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

fn cmd_search(args: SearchArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(&args.run.common.config)?;
    apply_run_overrides(&mut cfg, &args.run)?;
    if let Some(seed) = args.seed {
        cfg.search.ga.seed = seed;
    }
    let exp = build_experiment(cfg, &args.run.checkpoint)?;
    let beacon_cfg = exp.mode.uses_beacons().then_some(&exp.beacon_cfg);
    let outcome = run_search(&exp.ctx, exp.mode, &exp.cfg.search.ga, beacon_cfg)?;

    let out = &args.run.common.out;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("pareto.csv"), pareto_csv(&outcome.records))?;
    let mut log = String::new();
    for entry in &outcome.log {
        log.push_str(&serde_json::to_string(entry)?);
        log.push('\n');
    }
    std::fs::write(out.join("eval_log.jsonl"), log)?;
    if exp.mode.uses_beacons() {
        save_beacons(out, &outcome.beacons)?;
    }
    let summary = search_summary(&exp.cfg, &outcome);
    std::fs::write(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!("pareto: {}", out.join("pareto.csv").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn parse_f64(row: usize, field: &str, text: &str) -> Result<f64, CliError> {
    text.parse().map_err(|_| {
        CliError::Verify(format!("row {row}: {field} is not a number: {text:?}"))
    })
}

struct CsvRow {
    genome: Vec<u8>,
    wer_v: f64,
    wer_t: f64,
    cp_r: f64,
    speedup: f64,
    energy_j: Option<f64>,
    beacon: Option<String>,
}

fn parse_csv(text: &str) -> Result<Vec<CsvRow>, CliError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(CliError::Verify(format!(
                "bad CSV header: {other:?}, expected {CSV_HEADER:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(CliError::Verify(format!(
                "row {row}: expected 8 fields, got {}",
                fields.len()
            )));
        }
        let genome: Vec<u8> = fields[1]
            .bytes()
            .map(|b| b.wrapping_sub(b'0'))
            .collect();
        if genome.is_empty() || genome.iter().any(|&g| g == 0 || g > 9) {
            return Err(CliError::Verify(format!(
                "row {row}: bad genome field {:?}",
                fields[1]
            )));
        }
        rows.push(CsvRow {
            genome,
            wer_v: parse_f64(row, "wer_v", fields[2])?,
            wer_t: parse_f64(row, "wer_t", fields[3])?,
            cp_r: parse_f64(row, "cp_r", fields[4])?,
            speedup: parse_f64(row, "speedup", fields[5])?,
            energy_j: if fields[6].is_empty() {
                None
            } else {
                Some(parse_f64(row, "energy_J", fields[6])?)
            },
            beacon: (!fields[7].is_empty()).then(|| fields[7].to_string()),
        });
    }
    Ok(rows)
}

fn exact(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}

fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(&args.run.common.config)?;
    apply_run_overrides(&mut cfg, &args.run)?;
    let exp = build_experiment(cfg, &args.run.checkpoint)?;
    let out = &args.run.common.out;
    let csv_path = out.join("pareto.csv");
    let text = std::fs::read_to_string(&csv_path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", csv_path.display())))?;
    let rows = parse_csv(&text)?;
    let beacons = if exp.mode.uses_beacons() {
        load_beacons(out, &exp.ctx)?
    } else {
        Vec::new()
    };

    let mut problems = Vec::new();
    let mut reference = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let n = i + 1;
        let (rec, violation) = match record_for_genome(&exp.ctx, &row.genome, exp.mode, &beacons) {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("row {n}: cannot re-evaluate: {e}"));
                continue;
            }
        };
        let mut mismatch = |field: &str, got: String, want: String| {
            problems.push(format!("row {n}: {field} is {got}, re-evaluation gives {want}"));
        };
        if !exact(row.wer_v, rec.wer_v) {
            mismatch("wer_v", row.wer_v.to_string(), rec.wer_v.to_string());
        }
        if !exact(row.wer_t, rec.wer_t) {
            mismatch("wer_t", row.wer_t.to_string(), rec.wer_t.to_string());
        }
        if !exact(row.cp_r, rec.cp_r) {
            mismatch("cp_r", row.cp_r.to_string(), rec.cp_r.to_string());
        }
        if !exact(row.speedup, rec.speedup) {
            mismatch("speedup", row.speedup.to_string(), rec.speedup.to_string());
        }
        match (row.energy_j, rec.energy_j) {
            (Some(a), Some(b)) if exact(a, b) => {}
            (None, None) => {}
            (a, b) => mismatch("energy_J", format!("{a:?}"), format!("{b:?}")),
        }
        if row.beacon != rec.beacon {
            mismatch("beacon", format!("{:?}", row.beacon), format!("{:?}", rec.beacon));
        }
        if violation != 0.0 {
            problems.push(format!(
                "row {n}: violates the search constraints (violation {violation})"
            ));
        }
        reference.push(rec);
    }
    for (i, a) in reference.iter().enumerate() {
        for (j, b) in reference.iter().enumerate() {
            if i != j && nsga2::pareto_dominates(&a.objectives, &b.objectives) {
                problems.push(format!(
                    "row {} is dominated by row {}",
                    j + 1,
                    i + 1
                ));
            }
        }
    }
    if problems.is_empty() {
        println!(
            "verify: {} records reproduced bit-exactly, front mutually non-dominated",
            rows.len()
        );
        Ok(())
    } else {
        for p in &problems {
            eprintln!("{p}");
        }
        Err(CliError::Verify(format!(
            "{} problem(s) in {}",
            problems.len(),
            csv_path.display()
        )))
    }
}
