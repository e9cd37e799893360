//! Run configuration: one JSON document covering every command, merged with
//! `--key value` overrides from the command line.
//!
//! Keys without a dot apply to the section of the command being run
//! (`ddff synth --scenes 8` sets `synth.scenes`); dotted keys address any
//! field from the root (`--train.learning_rate 1e-4`). Values parse as JSON
//! when possible and fall back to strings, so `--baseline classic` and
//! `--scenes 8` both do the obvious thing. Schema violations report the
//! offending field path and exit with status 2 before any work happens.

use std::fmt;
use std::path::{Path, PathBuf};

use ddff_core::dff::FocusMeasure;
use ddff_net::network::NetworkSpec;
use ddff_net::patches::PatchConfig;
use ddff_net::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// The six pipeline commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Refocus,
    Train,
    Eval,
    Predict,
    Plot,
}

impl Command {
    pub fn parse(s: &str) -> Option<Command> {
        Some(match s {
            "synth" => Command::Synth,
            "refocus" => Command::Refocus,
            "train" => Command::Train,
            "eval" => Command::Eval,
            "predict" => Command::Predict,
            "plot" => Command::Plot,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Refocus => "refocus",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Predict => "predict",
            Command::Plot => "plot",
        }
    }

    /// Config section that bare (dot-free) overrides land in.
    fn section(self) -> &'static str {
        self.name()
    }
}

/// A configuration problem: reported on stderr and mapped to exit status 2.
#[derive(Debug)]
pub struct ConfigError {
    /// Dotted field path when the problem is tied to one field.
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "invalid config: {}", self.message)
        } else {
            write!(f, "invalid config at `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

// ---------------------------------------------------------------------------
// Sections
// ---------------------------------------------------------------------------

/// Synthetic dataset generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of scenes to generate.
    pub scenes: usize,
    /// Master seed; scene `i` derives its own seed from it. Must be given
    /// explicitly (flag or config file).
    pub seed: Option<u64>,
    /// Sub-aperture frame size `[height, width]`.
    pub frame: [usize; 2],
    /// Inclusive range for the number of depth planes per scene.
    pub min_planes: usize,
    pub max_planes: usize,
    /// Metric depth range `[near, far]` the planes are drawn from.
    pub depth_range: [f64; 2],
    /// Fraction of groundtruth pixels knocked out per scene (sensor-style
    /// dropouts); 0 disables.
    pub dropout_fraction: f64,
    /// Also store each scene's raw light field under `<scene>/lightfield/`.
    pub save_lightfields: bool,
    /// Dataset root to write; defaults to the top-level `dataset`.
    pub out: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenes: 4,
            seed: None,
            frame: [96, 96],
            min_planes: 2,
            max_planes: 4,
            depth_range: [0.5, 7.0],
            dropout_fraction: 0.0,
            save_lightfields: false,
            out: None,
        }
    }
}

/// Focal stack sampling shared by `synth` and `refocus`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackConfig {
    /// Slices per stack.
    pub slices: usize,
    /// Focus disparity of the first (nearest-focus) slice, in pixels.
    pub d_near: f64,
    /// Focus disparity of the last slice.
    pub d_far: f64,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            slices: 10,
            d_near: 0.28,
            d_far: 0.02,
        }
    }
}

/// Light-field to focal-stack conversion.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefocusConfig {
    /// Directory holding a stored light field (`lightfield.json` + views).
    pub lightfield: Option<PathBuf>,
    /// Output directory for the stack (slice PNGs + `stack.json`).
    pub out: Option<PathBuf>,
}

/// Training: optimizer hyperparameters plus data routing. Every field is
/// optional; unset fields take the library defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub lr_decay: Option<f64>,
    pub lr_decay_epochs: Option<usize>,
    pub validation_fraction: Option<f64>,
    /// Master seed for init, patch shuffling, the validation split, and
    /// dropout. Must be given explicitly (flag or config file).
    pub seed: Option<u64>,
    /// Stop once the epoch loss falls below this fraction of its first-epoch
    /// value.
    pub early_stop_ratio: Option<f64>,
    /// Scene subset to train on; default all scenes in the dataset.
    pub scenes: Option<Vec<String>>,
    /// Dataset root; defaults to the top-level `dataset`.
    pub dataset: Option<PathBuf>,
    /// Checkpoint output path; default `<runs_dir>/model.ckpt`.
    pub out: Option<PathBuf>,
}

impl TrainSection {
    /// Overlay onto the library defaults.
    pub fn to_train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            momentum: self.momentum.unwrap_or(d.momentum),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            lr_decay: self.lr_decay.unwrap_or(d.lr_decay),
            lr_decay_epochs: self.lr_decay_epochs.unwrap_or(d.lr_decay_epochs),
            validation_fraction: self
                .validation_fraction
                .unwrap_or(d.validation_fraction),
            seed: self.seed.unwrap_or(0),
            early_stop_ratio: self.early_stop_ratio,
        }
    }
}

/// What `eval` scores: exactly one source must be set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Sharpness-argmax depth from focus.
    Classic,
}

/// Bad-pixel threshold sweep for curve artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveGrid {
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

impl Default for CurveGrid {
    fn default() -> Self {
        CurveGrid {
            start: 0.01,
            stop: 0.25,
            steps: 25,
        }
    }
}

impl CurveGrid {
    /// The strictly increasing threshold list. Values are rounded to ten
    /// decimals so grid points like 0.07 coincide exactly with hand-written
    /// thresholds instead of differing in the last bits.
    pub fn taus(&self) -> Vec<f64> {
        if self.steps <= 1 {
            return vec![self.start];
        }
        (0..self.steps)
            .map(|i| {
                let t = self.start + (self.stop - self.start) * i as f64 / (self.steps - 1) as f64;
                (t * 1e10).round() / 1e10
            })
            .collect()
    }
}

/// Evaluation of a predictor over a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Dataset root; defaults to the top-level `dataset`.
    pub dataset: Option<PathBuf>,
    /// Scene subset to score; default all scenes.
    pub scenes: Option<Vec<String>>,
    /// Score a trained model.
    pub checkpoint: Option<PathBuf>,
    /// Score a non-learned baseline.
    pub baseline: Option<Baseline>,
    /// Score externally produced predictions
    /// (`<dir>/<scene>/stack_NNNN.pfm`, one per stack).
    pub predictions: Option<PathBuf>,
    /// Headline bad-pixel thresholds for the reports.
    pub taus: Vec<f64>,
    /// Threshold sweep for the bad-pixel curve artifact.
    pub curve: CurveGrid,
    /// Focus measure for the classic baseline.
    pub measure: FocusMeasure,
    /// Aggregation window for the classic baseline (odd).
    pub window: usize,
    /// Output directory; default `<runs_dir>/eval`.
    pub out: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            dataset: None,
            scenes: None,
            checkpoint: None,
            baseline: None,
            predictions: None,
            taus: vec![0.07],
            curve: CurveGrid::default(),
            measure: FocusMeasure::default(),
            window: 9,
            out: None,
        }
    }
}

/// Single-stack inference.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub checkpoint: Option<PathBuf>,
    /// Read the stack from a dataset scene...
    pub scene: Option<String>,
    pub index: usize,
    /// ...or from a standalone stack directory (as written by `refocus`).
    pub stack_dir: Option<PathBuf>,
    /// Dataset root; defaults to the top-level `dataset`.
    pub dataset: Option<PathBuf>,
    /// Output directory; default `<runs_dir>/predict`.
    pub out: Option<PathBuf>,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            checkpoint: None,
            scene: None,
            index: 0,
            stack_dir: None,
            dataset: None,
            out: None,
        }
    }
}

/// Plot/report generation from recorded run manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    /// Index into the manifest log (0-based); default: the latest run that
    /// carries plottable data.
    pub run: Option<usize>,
    /// Scene/stack used for the per-slice focus-score dumps; default: first
    /// scene, stack 0.
    pub scene: Option<String>,
    pub index: usize,
    /// Focus measure for the score dumps.
    pub measure: FocusMeasure,
    pub window: usize,
    /// Dataset root for score dumps and disparity summaries.
    pub dataset: Option<PathBuf>,
    /// Output directory; default `<runs_dir>/plots`.
    pub out: Option<PathBuf>,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig {
            run: None,
            scene: None,
            index: 0,
            measure: FocusMeasure::default(),
            window: 9,
            dataset: None,
            out: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Root
// ---------------------------------------------------------------------------

/// The complete run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Default dataset root shared by `synth`, `train`, `eval`, `predict`.
    pub dataset: PathBuf,
    /// Where manifests, checkpoints, reports, and plots go.
    pub runs_dir: PathBuf,
    pub synth: SynthConfig,
    pub stack: StackConfig,
    pub refocus: RefocusConfig,
    pub network: NetworkSpec,
    pub patches: PatchConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub predict: PredictConfig,
    pub plot: PlotConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            dataset: PathBuf::from("data/synth"),
            runs_dir: PathBuf::from("runs"),
            synth: SynthConfig::default(),
            stack: StackConfig::default(),
            refocus: RefocusConfig::default(),
            network: NetworkSpec::default(),
            patches: PatchConfig::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
            predict: PredictConfig::default(),
            plot: PlotConfig::default(),
        }
    }
}

impl Config {
    /// Cross-field checks that serde cannot express. `command` scopes the
    /// checks to what the run will actually touch.
    pub fn validate(&self, command: Command) -> Result<(), ConfigError> {
        self.network
            .validate()
            .map_err(|e| ConfigError::at("network", e.to_string()))?;
        self.patches
            .validate()
            .map_err(|e| ConfigError::at("patches", e.to_string()))?;
        if self.stack.slices < 2 {
            return Err(ConfigError::at("stack.slices", "need at least 2 slices"));
        }
        if !self.stack.d_near.is_finite() || !self.stack.d_far.is_finite() {
            return Err(ConfigError::at("stack", "focus disparities must be finite"));
        }
        match command {
            Command::Synth => {
                let s = &self.synth;
                if s.scenes == 0 {
                    return Err(ConfigError::at("synth.scenes", "need at least one scene"));
                }
                if s.min_planes == 0 || s.min_planes > s.max_planes {
                    return Err(ConfigError::at(
                        "synth.min_planes",
                        format!("bad plane range {}..={}", s.min_planes, s.max_planes),
                    ));
                }
                if !(s.depth_range[0] > 0.0 && s.depth_range[0] < s.depth_range[1]) {
                    return Err(ConfigError::at(
                        "synth.depth_range",
                        "need 0 < near < far",
                    ));
                }
                if !(0.0..1.0).contains(&s.dropout_fraction) {
                    return Err(ConfigError::at(
                        "synth.dropout_fraction",
                        "must lie in [0, 1)",
                    ));
                }
            }
            Command::Refocus => {
                if self.refocus.lightfield.is_none() {
                    return Err(ConfigError::at(
                        "refocus.lightfield",
                        "a light-field directory is required",
                    ));
                }
                if self.refocus.out.is_none() {
                    return Err(ConfigError::at(
                        "refocus.out",
                        "an output directory is required",
                    ));
                }
            }
            Command::Train => {
                self.train
                    .to_train_config()
                    .validate()
                    .map_err(|e| ConfigError::at("train", e.to_string()))?;
            }
            Command::Eval => {
                let set = [
                    self.eval.checkpoint.is_some(),
                    self.eval.baseline.is_some(),
                    self.eval.predictions.is_some(),
                ]
                .iter()
                .filter(|b| **b)
                .count();
                if set != 1 {
                    return Err(ConfigError::at(
                        "eval",
                        "set exactly one of `checkpoint`, `baseline`, `predictions`",
                    ));
                }
                if self.eval.taus.is_empty() {
                    return Err(ConfigError::at("eval.taus", "need at least one threshold"));
                }
                if self.eval.window % 2 == 0 {
                    return Err(ConfigError::at("eval.window", "window must be odd"));
                }
                let g = &self.eval.curve;
                if !(g.start > 0.0 && (g.steps <= 1 || g.stop > g.start)) {
                    return Err(ConfigError::at(
                        "eval.curve",
                        "need 0 < start < stop",
                    ));
                }
            }
            Command::Predict => {
                if self.predict.checkpoint.is_none() {
                    return Err(ConfigError::at(
                        "predict.checkpoint",
                        "a checkpoint path is required",
                    ));
                }
                if self.predict.scene.is_none() && self.predict.stack_dir.is_none() {
                    return Err(ConfigError::at(
                        "predict",
                        "set `scene` (dataset stack) or `stack_dir` (standalone stack)",
                    ));
                }
            }
            Command::Plot => {
                if self.plot.window % 2 == 0 {
                    return Err(ConfigError::at("plot.window", "window must be odd"));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Loading and overrides
// ---------------------------------------------------------------------------

/// Sets `path` (dot-separated) in a JSON tree, creating objects on the way.
fn set_path(tree: &mut Value, path: &str, value: Value) -> Result<(), ConfigError> {
    let mut cur = tree;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(ConfigError::at(path, "empty path segment"));
        }
        if !cur.is_object() {
            return Err(ConfigError::at(
                parts[..i].join("."),
                "cannot override a non-object value with a dotted path",
            ));
        }
        let map = cur.as_object_mut().unwrap();
        if i + 1 == parts.len() {
            map.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = map
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("paths have at least one segment");
}

/// Parses an override value: JSON when it parses, bare string otherwise
/// (so `--baseline classic` works without shell-quoting the quotes).
fn parse_override(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn seed_present(tree: &Value, section: &str) -> bool {
    tree.get(section)
        .and_then(|s| s.get("seed"))
        .is_some_and(|v| !v.is_null())
}

/// Loads the config file (or starts empty), applies overrides, enforces the
/// explicit-seed rule, and validates the result. Returns the typed config
/// plus the fully resolved JSON (defaults filled in) for the run manifest.
pub fn load_config(
    path: Option<&Path>,
    command: Command,
    overrides: &[(String, String)],
) -> Result<(Config, Value), ConfigError> {
    let mut tree: Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                ConfigError::at("", format!("cannot read {}: {e}", p.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| ConfigError::at("", format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    if !tree.is_object() {
        return Err(ConfigError::at("", "config root must be a JSON object"));
    }

    // Bare keys usually address the invoked command's section; the two
    // root-level scalars stay at the root so `--dataset` and `--runs_dir`
    // work everywhere.
    const ROOT_KEYS: [&str; 2] = ["dataset", "runs_dir"];
    for (key, raw) in overrides {
        let full = if key.contains('.') || ROOT_KEYS.contains(&key.as_str()) {
            key.clone()
        } else {
            format!("{}.{}", command.section(), key)
        };
        set_path(&mut tree, &full, parse_override(raw))?;
    }

    // Reproducibility rule: generation and training refuse to run on an
    // implicit seed.
    match command {
        Command::Synth if !seed_present(&tree, "synth") => {
            return Err(ConfigError::at(
                "synth.seed",
                "`--seed` is required for synth",
            ));
        }
        Command::Train if !seed_present(&tree, "train") => {
            return Err(ConfigError::at(
                "train.seed",
                "`--seed` is required for train",
            ));
        }
        _ => {}
    }

    let config: Config = serde_path_to_error::deserialize(tree)
        .map_err(|e| ConfigError::at(e.path().to_string(), e.inner().to_string()))?;
    config.validate(command)?;
    let resolved = serde_json::to_value(&config)
        .map_err(|e| ConfigError::at("", format!("cannot serialize resolved config: {e}")))?;
    Ok((config, resolved))
}
