//! Experiment configuration: named presets, a TOML override format, and
//! validation with field paths.
//!
//! A config file may either stand alone or start from a named preset via a
//! top-level `preset = "..."` key; any section it provides then overrides
//! individual fields of that preset.

use crate::dataset::TaskConfig;
use crate::hwcost::{HwError, HwProfile};
use crate::search::ObjectiveKind;
use crate::sru::NetDims;
use crate::trainer::TrainConfig;
use nsga2::GaConfig;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown preset {0:?} (known: wer-mem, silago, bitfusion, bitfusion-deep)")]
    UnknownPreset(String),
    #[error("invalid config field {field}: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Profile(#[from] HwError),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub directions: usize,
    pub sru_layers: usize,
}

/// Where the hardware profile comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProfileRef {
    Builtin(String),
    File(PathBuf),
}

impl ProfileRef {
    pub fn parse(s: &str) -> Self {
        if HwProfile::builtin(s).is_some() {
            ProfileRef::Builtin(s.to_string())
        } else {
            ProfileRef::File(PathBuf::from(s))
        }
    }

    pub fn load(&self) -> Result<HwProfile, HwError> {
        match self {
            ProfileRef::Builtin(name) => {
                Ok(HwProfile::builtin(name).expect("builtin names pre-checked"))
            }
            ProfileRef::File(path) => HwProfile::load(path),
        }
    }
}

/// Feasibility bound on the error objective. Offsets are added to the
/// full-precision baseline error once it is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorThreshold {
    Absolute(f64),
    BaselineOffset(f64),
}

impl ErrorThreshold {
    pub fn resolve(self, baseline_error: f64) -> f64 {
        match self {
            ErrorThreshold::Absolute(t) => t,
            ErrorThreshold::BaselineOffset(d) => baseline_error + d,
        }
    }

    fn parse_str(s: &str) -> Result<Self, ConfigError> {
        let field = "search.error_threshold";
        let rest = s
            .strip_prefix("baseline+")
            .ok_or_else(|| invalid(field, format!("expected a number or \"baseline+X\", got {s:?}")))?;
        let offset: f64 = rest
            .parse()
            .map_err(|_| invalid(field, format!("bad offset in {s:?}")))?;
        Ok(ErrorThreshold::BaselineOffset(offset))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSetting {
    Inference,
    Beacon3,
    BeaconDyn,
}

impl ModeSetting {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "inference" => Ok(ModeSetting::Inference),
            "beacon3" => Ok(ModeSetting::Beacon3),
            "beacon-dyn" => Ok(ModeSetting::BeaconDyn),
            other => Err(invalid(
                "search.mode",
                format!("expected inference | beacon3 | beacon-dyn, got {other:?}"),
            )),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModeSetting::Inference => "inference",
            ModeSetting::Beacon3 => "beacon3",
            ModeSetting::BeaconDyn => "beacon-dyn",
        }
    }

    pub fn to_search_mode(self) -> crate::search::SearchMode {
        match self {
            ModeSetting::Inference => crate::search::SearchMode::InferenceOnly,
            ModeSetting::Beacon3 => crate::search::SearchMode::BeaconFixed3,
            ModeSetting::BeaconDyn => crate::search::SearchMode::BeaconDynamic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchSettings {
    pub mode: ModeSetting,
    pub profile: ProfileRef,
    pub objectives: Vec<ObjectiveKind>,
    pub ga: GaConfig,
    /// cap model_bits at baseline_bits / min_compression
    pub min_compression: Option<f64>,
    pub error_threshold: ErrorThreshold,
    pub calibration_count: usize,
}

#[derive(Debug, Clone)]
pub struct BeaconSettings {
    pub distance_threshold: u32,
    pub budget: usize,
    pub area_slack: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl BeaconSettings {
    /// Retraining reuses the trainer defaults but with fewer epochs, a
    /// gentler step, and a seed offset so it never mirrors baseline batches.
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed: base.seed + 1000,
            // retraining starts from a working net; never reject the result
            max_val_error: 1.0,
            ..*base
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub search: SearchSettings,
    pub beacon: BeaconSettings,
}

impl ExperimentConfig {
    pub fn net_dims(&self) -> NetDims {
        NetDims {
            input_dim: self.task.input_dim,
            hidden: self.model.hidden,
            directions: self.model.directions,
            classes: self.task.classes,
            sru_layers: self.model.sru_layers,
        }
    }

    /// The generic two-objective search: error against memory footprint,
    /// unconstrained memory, full untied alphabet.
    fn preset_wer_mem() -> Self {
        ExperimentConfig {
            task: TaskConfig::default(),
            model: ModelConfig {
                hidden: 32,
                directions: 2,
                sru_layers: 4,
            },
            train: TrainConfig::default(),
            search: SearchSettings {
                mode: ModeSetting::Inference,
                profile: ProfileRef::Builtin("bitfusion".into()),
                objectives: vec![ObjectiveKind::Error, ObjectiveKind::Memory],
                ga: GaConfig {
                    generations: 60,
                    seed: 11,
                    ..GaConfig::default()
                },
                min_compression: None,
                error_threshold: ErrorThreshold::BaselineOffset(0.08),
                calibration_count: 70,
            },
            beacon: BeaconSettings {
                distance_threshold: 3,
                budget: 10,
                area_slack: 0.08,
                epochs: 5,
                learning_rate: 0.2,
                batch_size: 32,
            },
        }
    }

    /// Three objectives on the tied-precision platform, short search.
    fn preset_silago() -> Self {
        let mut cfg = Self::preset_wer_mem();
        cfg.search.profile = ProfileRef::Builtin("silago".into());
        cfg.search.objectives = vec![
            ObjectiveKind::Error,
            ObjectiveKind::Speedup,
            ObjectiveKind::Energy,
        ];
        cfg.search.ga.generations = 15;
        cfg.search.min_compression = Some(3.5);
        cfg
    }

    /// Error versus speedup under a tight memory cap.
    fn preset_bitfusion() -> Self {
        let mut cfg = Self::preset_wer_mem();
        cfg.search.objectives = vec![ObjectiveKind::Error, ObjectiveKind::Speedup];
        cfg.search.min_compression = Some(10.6);
        cfg.search.error_threshold = ErrorThreshold::Absolute(0.24);
        cfg
    }

    /// The bitfusion search on a deeper model with a longer budget.
    fn preset_bitfusion_deep() -> Self {
        let mut cfg = Self::preset_bitfusion();
        cfg.model.sru_layers = 6;
        cfg.search.ga.generations = 90;
        cfg.search.min_compression = Some(9.9);
        cfg
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "wer-mem" => Ok(Self::preset_wer_mem()),
            "silago" => Ok(Self::preset_silago()),
            "bitfusion" => Ok(Self::preset_bitfusion()),
            "bitfusion-deep" => Ok(Self::preset_bitfusion_deep()),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["wer-mem", "silago", "bitfusion", "bitfusion-deep"]
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let mut cfg = match &raw.preset {
            Some(name) => Self::preset(name)?,
            None => Self::preset_wer_mem(),
        };
        raw.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be positive, got {v}")))
            }
        };
        let at_least = |field: &str, v: usize, min: usize| {
            if v >= min {
                Ok(())
            } else {
                Err(invalid(field, format!("must be at least {min}, got {v}")))
            }
        };
        at_least("task.input_dim", self.task.input_dim, 1)?;
        at_least("task.seq_len", self.task.seq_len, 1)?;
        at_least("task.classes", self.task.classes, 2)?;
        at_least("task.train_size", self.task.train_size, self.task.classes)?;
        at_least("task.val_size", self.task.val_size, self.task.classes)?;
        at_least("task.test_size", self.task.test_size, 1)?;
        at_least("model.hidden", self.model.hidden, 1)?;
        if !(1..=2).contains(&self.model.directions) {
            return Err(invalid(
                "model.directions",
                format!("must be 1 or 2, got {}", self.model.directions),
            ));
        }
        at_least("model.sru_layers", self.model.sru_layers, 1)?;
        at_least("train.epochs", self.train.epochs, 1)?;
        positive("train.learning_rate", self.train.learning_rate)?;
        at_least("train.batch_size", self.train.batch_size, 1)?;
        positive("train.max_val_error", self.train.max_val_error)?;
        positive("train.max_grad_norm", self.train.max_grad_norm)?;
        at_least("search.generations", self.search.ga.generations, 1)?;
        at_least("search.population_size", self.search.ga.population_size, 2)?;
        at_least(
            "search.initial_population_size",
            self.search.ga.initial_population_size,
            self.search.ga.population_size,
        )?;
        if !(0.0..=1.0).contains(&self.search.ga.crossover_prob) {
            return Err(invalid(
                "search.crossover_prob",
                "must lie in [0, 1]".to_string(),
            ));
        }
        if let Some(p) = self.search.ga.mutation_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid("search.mutation_prob", "must lie in [0, 1]"));
            }
        }
        if self.search.objectives.is_empty() {
            return Err(invalid("search.objectives", "must not be empty"));
        }
        if let Some(c) = self.search.min_compression {
            positive("search.min_compression", c)?;
        }
        let t = match self.search.error_threshold {
            ErrorThreshold::Absolute(t) => t,
            ErrorThreshold::BaselineOffset(d) => d,
        };
        positive("search.error_threshold", t)?;
        at_least("search.calibration_count", self.search.calibration_count, 1)?;
        at_least("beacon.budget", self.beacon.budget, 1)?;
        positive("beacon.area_slack", self.beacon.area_slack)?;
        at_least("beacon.epochs", self.beacon.epochs, 1)?;
        positive("beacon.learning_rate", self.beacon.learning_rate)?;
        at_least("beacon.batch_size", self.beacon.batch_size, 1)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// the raw TOML layer
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawThreshold {
    Number(f64),
    Text(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    task: Option<RawTask>,
    model: Option<RawModel>,
    train: Option<RawTrain>,
    search: Option<RawSearch>,
    beacon: Option<RawBeacon>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    seed: Option<u64>,
    input_dim: Option<usize>,
    seq_len: Option<usize>,
    classes: Option<usize>,
    train_size: Option<usize>,
    val_size: Option<usize>,
    test_size: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    hidden: Option<usize>,
    directions: Option<usize>,
    sru_layers: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    max_val_error: Option<f64>,
    max_grad_norm: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSearch {
    mode: Option<String>,
    profile: Option<String>,
    objectives: Option<Vec<ObjectiveKind>>,
    generations: Option<usize>,
    population_size: Option<usize>,
    initial_population_size: Option<usize>,
    crossover_prob: Option<f64>,
    mutation_prob: Option<f64>,
    seed: Option<u64>,
    min_compression: Option<f64>,
    error_threshold: Option<RawThreshold>,
    calibration_count: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBeacon {
    distance_threshold: Option<u32>,
    budget: Option<usize>,
    area_slack: Option<f64>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
}

macro_rules! take {
    ($raw:expr => $($field:ident -> $target:expr),+ $(,)?) => {
        $(if let Some(v) = $raw.$field {
            $target = v;
        })+
    };
}

impl RawConfig {
    fn apply(self, cfg: &mut ExperimentConfig) -> Result<(), ConfigError> {
        if let Some(t) = self.task {
            take!(t =>
                seed -> cfg.task.seed,
                input_dim -> cfg.task.input_dim,
                seq_len -> cfg.task.seq_len,
                classes -> cfg.task.classes,
                train_size -> cfg.task.train_size,
                val_size -> cfg.task.val_size,
                test_size -> cfg.task.test_size,
            );
        }
        if let Some(m) = self.model {
            take!(m =>
                hidden -> cfg.model.hidden,
                directions -> cfg.model.directions,
                sru_layers -> cfg.model.sru_layers,
            );
        }
        if let Some(t) = self.train {
            take!(t =>
                epochs -> cfg.train.epochs,
                learning_rate -> cfg.train.learning_rate,
                batch_size -> cfg.train.batch_size,
                seed -> cfg.train.seed,
                max_val_error -> cfg.train.max_val_error,
                max_grad_norm -> cfg.train.max_grad_norm,
            );
        }
        if let Some(s) = self.search {
            if let Some(mode) = s.mode {
                cfg.search.mode = ModeSetting::parse(&mode)?;
            }
            if let Some(profile) = s.profile {
                cfg.search.profile = ProfileRef::parse(&profile);
            }
            take!(s =>
                objectives -> cfg.search.objectives,
                generations -> cfg.search.ga.generations,
                population_size -> cfg.search.ga.population_size,
                initial_population_size -> cfg.search.ga.initial_population_size,
                crossover_prob -> cfg.search.ga.crossover_prob,
                seed -> cfg.search.ga.seed,
                calibration_count -> cfg.search.calibration_count,
            );
            if let Some(p) = s.mutation_prob {
                cfg.search.ga.mutation_prob = Some(p);
            }
            if let Some(c) = s.min_compression {
                cfg.search.min_compression = Some(c);
            }
            if let Some(t) = s.error_threshold {
                cfg.search.error_threshold = match t {
                    RawThreshold::Number(v) => ErrorThreshold::Absolute(v),
                    RawThreshold::Text(s) => ErrorThreshold::parse_str(&s)?,
                };
            }
        }
        if let Some(b) = self.beacon {
            take!(b =>
                distance_threshold -> cfg.beacon.distance_threshold,
                budget -> cfg.beacon.budget,
                area_slack -> cfg.beacon.area_slack,
                epochs -> cfg.beacon.epochs,
                learning_rate -> cfg.beacon.learning_rate,
                batch_size -> cfg.beacon.batch_size,
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_the_published_shapes() {
        let wm = ExperimentConfig::preset("wer-mem").unwrap();
        assert_eq!(wm.search.ga.generations, 60);
        assert_eq!(wm.search.ga.population_size, 10);
        assert_eq!(wm.search.ga.initial_population_size, 40);
        assert_eq!(
            wm.search.objectives,
            vec![ObjectiveKind::Error, ObjectiveKind::Memory]
        );
        assert_eq!(wm.search.min_compression, None);
        assert_eq!(
            wm.search.error_threshold,
            ErrorThreshold::BaselineOffset(0.08)
        );

        let si = ExperimentConfig::preset("silago").unwrap();
        assert_eq!(si.search.ga.generations, 15);
        assert_eq!(si.search.objectives.len(), 3);
        assert_eq!(si.search.min_compression, Some(3.5));
        assert_eq!(si.search.profile, ProfileRef::Builtin("silago".into()));
        assert!(si.search.profile.load().unwrap().tie_wa);

        let bf = ExperimentConfig::preset("bitfusion").unwrap();
        assert_eq!(bf.search.ga.generations, 60);
        assert_eq!(
            bf.search.objectives,
            vec![ObjectiveKind::Error, ObjectiveKind::Speedup]
        );
        assert_eq!(bf.search.min_compression, Some(10.6));
        assert_eq!(bf.search.error_threshold, ErrorThreshold::Absolute(0.24));

        let deep = ExperimentConfig::preset("bitfusion-deep").unwrap();
        assert_eq!(deep.search.ga.generations, 90);
        assert_eq!(deep.search.min_compression, Some(9.9));
        assert_eq!(deep.model.sru_layers, 6);
        assert_eq!(bf.model.sru_layers, 4);
    }

    #[test]
    fn every_preset_passes_validation() {
        for name in ExperimentConfig::preset_names() {
            ExperimentConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(matches!(
            ExperimentConfig::preset("sillago"),
            Err(ConfigError::UnknownPreset(_))
        ));
    }

    #[test]
    fn toml_overrides_merge_over_a_preset() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            preset = "bitfusion"

            [task]
            seed = 99

            [search]
            generations = 5
            mode = "beacon3"

            [beacon]
            epochs = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.task.seed, 99);
        assert_eq!(cfg.search.ga.generations, 5);
        assert_eq!(cfg.search.mode, ModeSetting::Beacon3);
        assert_eq!(cfg.beacon.epochs, 2);
        // untouched fields keep the preset values
        assert_eq!(cfg.search.min_compression, Some(10.6));
        assert_eq!(cfg.search.error_threshold, ErrorThreshold::Absolute(0.24));
        assert_eq!(cfg.task.input_dim, TaskConfig::default().input_dim);
    }

    #[test]
    fn standalone_config_without_preset_uses_generic_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            [search]
            objectives = ["error", "speedup"]
            "#,
        )
        .unwrap();
        assert_eq!(
            cfg.search.objectives,
            vec![ObjectiveKind::Error, ObjectiveKind::Speedup]
        );
        assert_eq!(cfg.search.ga.generations, 60);
        assert_eq!(cfg.train.epochs, TrainConfig::default().epochs);
    }

    #[test]
    fn threshold_accepts_numbers_and_baseline_offsets() {
        let abs = ExperimentConfig::from_toml_str("[search]\nerror_threshold = 0.3").unwrap();
        assert_eq!(abs.search.error_threshold, ErrorThreshold::Absolute(0.3));
        let off =
            ExperimentConfig::from_toml_str("[search]\nerror_threshold = \"baseline+0.05\"")
                .unwrap();
        assert_eq!(
            off.search.error_threshold,
            ErrorThreshold::BaselineOffset(0.05)
        );
        assert_eq!(ErrorThreshold::BaselineOffset(0.05).resolve(0.1), 0.1 + 0.05);
        assert_eq!(ErrorThreshold::Absolute(0.3).resolve(0.1), 0.3);
        let err = ExperimentConfig::from_toml_str("[search]\nerror_threshold = \"around 0.3\"");
        assert!(matches!(err, Err(ConfigError::Invalid { field, .. }) if field == "search.error_threshold"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected_with_paths() {
        assert!(matches!(
            ExperimentConfig::from_toml_str("[search]\nobjective = [\"error\"]"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_str("preset = \"tpu\""),
            Err(ConfigError::UnknownPreset(_))
        ));
        let err = ExperimentConfig::from_toml_str("[train]\nepochs = 0").unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Invalid { ref field, .. } if field == "train.epochs"
        ));
        let err = ExperimentConfig::from_toml_str("[train]\nlearning_rate = -1.0").unwrap_err();
        assert!(
            matches!(err, ConfigError::Invalid { ref field, .. } if field == "train.learning_rate")
        );
        let err = ExperimentConfig::from_toml_str("[search]\nmode = \"hybrid\"").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref field, .. } if field == "search.mode"));
        let err = ExperimentConfig::from_toml_str("[model]\ndirections = 3").unwrap_err();
        assert!(
            matches!(err, ConfigError::Invalid { ref field, .. } if field == "model.directions")
        );
    }

    #[test]
    fn profile_refs_resolve_builtins_and_fall_back_to_paths() {
        assert_eq!(
            ProfileRef::parse("silago"),
            ProfileRef::Builtin("silago".into())
        );
        assert_eq!(
            ProfileRef::parse("bitfusion"),
            ProfileRef::Builtin("bitfusion".into())
        );
        assert_eq!(
            ProfileRef::parse("custom.toml"),
            ProfileRef::File(PathBuf::from("custom.toml"))
        );
        assert!(ProfileRef::File(PathBuf::from("/nonexistent/p.toml"))
            .load()
            .is_err());
    }

    #[test]
    fn beacon_retraining_config_derives_from_the_trainer_config() {
        let cfg = ExperimentConfig::preset("bitfusion").unwrap();
        let retrain = cfg.beacon.train_config(&cfg.train);
        assert_eq!(retrain.epochs, 5);
        assert_eq!(retrain.learning_rate, 0.2);
        assert_eq!(retrain.seed, cfg.train.seed + 1000);
        assert_eq!(retrain.max_grad_norm, cfg.train.max_grad_norm);
        assert_eq!(retrain.max_val_error, 1.0);
    }

    #[test]
    fn net_dims_combine_task_and_model_sections() {
        let cfg = ExperimentConfig::preset("bitfusion-deep").unwrap();
        let dims = cfg.net_dims();
        assert_eq!(dims.input_dim, cfg.task.input_dim);
        assert_eq!(dims.classes, cfg.task.classes);
        assert_eq!(dims.sru_layers, 6);
        assert_eq!(dims.hidden, 32);
        assert_eq!(dims.directions, 2);
    }
}
