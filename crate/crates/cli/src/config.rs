//! Flat `section.key = value` run configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use gentest_core::baseline::{AttackConfig, NormKind};
use gentest_core::models::{GeneratorArch, GeneratorModel};
use gentest_core::synthdata::{BiasFeature, BiasSpec};
use gentest_core::testgen::{default_epsilon, Mode, Objective, TestGenConfig};
use gentest_core::training::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io { path: PathBuf, message: String },
    Syntax { line: usize, message: String },
    UnknownKey { line: usize, key: String },
    DuplicateKey { line: usize, key: String },
    InvalidValue { key: String, value: String, reason: String },
}

impl ConfigError {
    /// The offending key, when the error concerns one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. }
            | ConfigError::DuplicateKey { key, .. }
            | ConfigError::InvalidValue { key, .. } => Some(key),
            _ => None,
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, message } => write!(f, "{}: {message}", path.display()),
            ConfigError::Syntax { line, message } => write!(f, "line {line}: {message}"),
            ConfigError::UnknownKey { line, key } => write!(f, "line {line}: unknown key `{key}`"),
            ConfigError::DuplicateKey { line, key } => {
                write!(f, "line {line}: key `{key}` given twice")
            }
            ConfigError::InvalidValue { key, value, reason } => {
                write!(f, "key `{key}`: invalid value {value:?}: {reason}")
            }
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorMode {
    Distilled,
    Cgan,
}

impl GeneratorMode {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorMode::Distilled => "distilled",
            GeneratorMode::Cgan => "cgan",
        }
    }
}

/// `None` stands for `auto`: a value derived from the rest of the config.
pub type Auto = Option<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSection {
    pub classes: usize,
    pub n_per_class: usize,
    pub bias: BiasSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSection {
    pub mode: GeneratorMode,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub samples_per_epoch: usize,
    pub cgan_aux_weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierSection {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestGenSection {
    pub epsilon: Auto,
    pub confidence: f64,
    pub mode: Mode,
    pub objective: Objective,
    pub step_size: f64,
    pub max_iterations: usize,
    pub layers: Vec<usize>,
    pub seeds_per_direction: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackSection {
    pub norm: NormKind,
    pub epsilon: Auto,
    pub step_size: Auto,
    pub steps: usize,
    pub mode: Mode,
    pub objective: Objective,
    pub confidence: f64,
    pub seeds_per_direction: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialSection {
    pub norm: NormKind,
    pub epsilon: Auto,
    pub step_size: Auto,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisSection {
    pub epsilon_l2: Auto,
    pub epsilon_linf: Auto,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory, already resolved against the config file's folder.
    pub output: PathBuf,
    pub dataset: DatasetSection,
    pub generator: GeneratorSection,
    pub classifier: ClassifierSection,
    pub testgen: TestGenSection,
    pub attack: AttackSection,
    pub adversarial: AdversarialSection,
    pub analysis: AnalysisSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output: PathBuf::from("output"),
            dataset: DatasetSection {
                classes: 2,
                n_per_class: 500,
                bias: BiasSpec::default(),
            },
            generator: GeneratorSection {
                mode: GeneratorMode::Distilled,
                latent_dim: 16,
                hidden: vec![64, 128, 256, 512],
                learning_rate: 0.002,
                epochs: 40,
                batch_size: 32,
                optimizer: OptimizerKind::Adam,
                samples_per_epoch: 2048,
                cgan_aux_weight: 1.0,
            },
            classifier: ClassifierSection {
                learning_rate: 0.01,
                momentum: 0.9,
                batch_size: 32,
                epochs: 30,
                optimizer: OptimizerKind::Sgd,
            },
            testgen: TestGenSection {
                epsilon: None,
                confidence: 0.999,
                mode: Mode::ConfidentTargeted,
                objective: Objective::LogConfidence,
                step_size: 0.005,
                max_iterations: 500,
                layers: vec![0, 1, 2],
                seeds_per_direction: 250,
            },
            attack: AttackSection {
                norm: NormKind::Linf,
                epsilon: None,
                step_size: None,
                steps: 40,
                mode: Mode::Targeted,
                objective: Objective::LogConfidence,
                confidence: 0.999,
                seeds_per_direction: 600,
            },
            adversarial: AdversarialSection {
                norm: NormKind::Linf,
                epsilon: None,
                step_size: None,
                steps: 40,
            },
            analysis: AnalysisSection {
                epsilon_l2: None,
                epsilon_linf: None,
            },
        }
    }
}

fn invalid(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| invalid(key, value, format!("expected a {}", std::any::type_name::<T>())))
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = parse_num(key, value)?;
    if !v.is_finite() {
        return Err(invalid(key, value, "must be finite"));
    }
    Ok(v)
}

fn parse_auto(key: &str, value: &str) -> Result<Auto, ConfigError> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_f64(key, value).map(Some)
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn parse_pair(key: &str, value: &str) -> Result<(f64, f64), ConfigError> {
    match parse_list::<f64>(key, value)?.as_slice() {
        &[a, b] => Ok((a, b)),
        _ => Err(invalid(key, value, "expected two comma-separated numbers")),
    }
}

fn parse_with<T>(key: &str, value: &str, f: impl Fn(&str) -> gentest_core::Result<T>) -> Result<T, ConfigError> {
    f(value).map_err(|e| invalid(key, value, e.to_string()))
}

fn parse_optimizer(key: &str, value: &str) -> Result<OptimizerKind, ConfigError> {
    match value {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::Adam),
        _ => Err(invalid(key, value, "expected sgd or adam")),
    }
}

fn optimizer_name(k: OptimizerKind) -> &'static str {
    match k {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::Adam => "adam",
    }
}

fn auto_text(v: Auto) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

fn list_text<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.dataset;
        let g = &self.generator;
        let c = &self.classifier;
        let t = &self.testgen;
        let a = &self.attack;
        let v = &self.adversarial;
        vec![
            ("seed", self.seed.to_string()),
            ("io.output", self.output.display().to_string()),
            ("dataset.classes", d.classes.to_string()),
            ("dataset.n_per_class", d.n_per_class.to_string()),
            ("dataset.bias_feature", d.bias.feature.name().to_string()),
            ("dataset.bias_classes", format!("{},{}", d.bias.classes.0, d.bias.classes.1)),
            ("dataset.bias_range0", format!("{},{}", d.bias.range0.0, d.bias.range0.1)),
            ("dataset.bias_range1", format!("{},{}", d.bias.range1.0, d.bias.range1.1)),
            ("generator.mode", g.mode.name().to_string()),
            ("generator.latent_dim", g.latent_dim.to_string()),
            ("generator.hidden", list_text(&g.hidden)),
            ("generator.learning_rate", g.learning_rate.to_string()),
            ("generator.epochs", g.epochs.to_string()),
            ("generator.batch_size", g.batch_size.to_string()),
            ("generator.optimizer", optimizer_name(g.optimizer).to_string()),
            ("generator.samples_per_epoch", g.samples_per_epoch.to_string()),
            ("generator.cgan_aux_weight", g.cgan_aux_weight.to_string()),
            ("classifier.learning_rate", c.learning_rate.to_string()),
            ("classifier.momentum", c.momentum.to_string()),
            ("classifier.batch_size", c.batch_size.to_string()),
            ("classifier.epochs", c.epochs.to_string()),
            ("classifier.optimizer", optimizer_name(c.optimizer).to_string()),
            ("testgen.epsilon", auto_text(t.epsilon)),
            ("testgen.confidence", t.confidence.to_string()),
            ("testgen.mode", t.mode.name().to_string()),
            ("testgen.objective", t.objective.name().to_string()),
            ("testgen.step_size", t.step_size.to_string()),
            ("testgen.max_iterations", t.max_iterations.to_string()),
            ("testgen.layers", list_text(&t.layers)),
            ("testgen.seeds_per_direction", t.seeds_per_direction.to_string()),
            ("attack.norm", a.norm.name().to_string()),
            ("attack.epsilon", auto_text(a.epsilon)),
            ("attack.step_size", auto_text(a.step_size)),
            ("attack.steps", a.steps.to_string()),
            ("attack.mode", a.mode.name().to_string()),
            ("attack.objective", a.objective.name().to_string()),
            ("attack.confidence", a.confidence.to_string()),
            ("attack.seeds_per_direction", a.seeds_per_direction.to_string()),
            ("adversarial.norm", v.norm.name().to_string()),
            ("adversarial.epsilon", auto_text(v.epsilon)),
            ("adversarial.step_size", auto_text(v.step_size)),
            ("adversarial.steps", v.steps.to_string()),
            ("analysis.epsilon_l2", auto_text(self.analysis.epsilon_l2)),
            ("analysis.epsilon_linf", auto_text(self.analysis.epsilon_linf)),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        RunConfig::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let d = &mut self.dataset;
        let g = &mut self.generator;
        let c = &mut self.classifier;
        let t = &mut self.testgen;
        let a = &mut self.attack;
        let v = &mut self.adversarial;
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "io.output" => self.output = PathBuf::from(value),
            "dataset.classes" => d.classes = parse_num(key, value)?,
            "dataset.n_per_class" => d.n_per_class = parse_num(key, value)?,
            "dataset.bias_feature" => d.bias.feature = parse_with(key, value, str::parse::<BiasFeature>)?,
            "dataset.bias_classes" => match parse_list::<usize>(key, value)?.as_slice() {
                &[y0, y1] => d.bias.classes = (y0, y1),
                _ => return Err(invalid(key, value, "expected two class ids")),
            },
            "dataset.bias_range0" => d.bias.range0 = parse_pair(key, value)?,
            "dataset.bias_range1" => d.bias.range1 = parse_pair(key, value)?,
            "generator.mode" => {
                g.mode = match value {
                    "distilled" => GeneratorMode::Distilled,
                    "cgan" => GeneratorMode::Cgan,
                    _ => return Err(invalid(key, value, "expected distilled or cgan")),
                }
            }
            "generator.latent_dim" => g.latent_dim = parse_num(key, value)?,
            "generator.hidden" => g.hidden = parse_list(key, value)?,
            "generator.learning_rate" => g.learning_rate = parse_f64(key, value)?,
            "generator.epochs" => g.epochs = parse_num(key, value)?,
            "generator.batch_size" => g.batch_size = parse_num(key, value)?,
            "generator.optimizer" => g.optimizer = parse_optimizer(key, value)?,
            "generator.samples_per_epoch" => g.samples_per_epoch = parse_num(key, value)?,
            "generator.cgan_aux_weight" => g.cgan_aux_weight = parse_f64(key, value)?,
            "classifier.learning_rate" => c.learning_rate = parse_f64(key, value)?,
            "classifier.momentum" => c.momentum = parse_f64(key, value)?,
            "classifier.batch_size" => c.batch_size = parse_num(key, value)?,
            "classifier.epochs" => c.epochs = parse_num(key, value)?,
            "classifier.optimizer" => c.optimizer = parse_optimizer(key, value)?,
            "testgen.epsilon" => t.epsilon = parse_auto(key, value)?,
            "testgen.confidence" => t.confidence = parse_f64(key, value)?,
            "testgen.mode" => t.mode = parse_with(key, value, str::parse::<Mode>)?,
            "testgen.objective" => t.objective = parse_with(key, value, str::parse::<Objective>)?,
            "testgen.step_size" => t.step_size = parse_f64(key, value)?,
            "testgen.max_iterations" => t.max_iterations = parse_num(key, value)?,
            "testgen.layers" => t.layers = parse_list(key, value)?,
            "testgen.seeds_per_direction" => t.seeds_per_direction = parse_num(key, value)?,
            "attack.norm" => a.norm = parse_with(key, value, str::parse::<NormKind>)?,
            "attack.epsilon" => a.epsilon = parse_auto(key, value)?,
            "attack.step_size" => a.step_size = parse_auto(key, value)?,
            "attack.steps" => a.steps = parse_num(key, value)?,
            "attack.mode" => a.mode = parse_with(key, value, str::parse::<Mode>)?,
            "attack.objective" => a.objective = parse_with(key, value, str::parse::<Objective>)?,
            "attack.confidence" => a.confidence = parse_f64(key, value)?,
            "attack.seeds_per_direction" => a.seeds_per_direction = parse_num(key, value)?,
            "adversarial.norm" => v.norm = parse_with(key, value, str::parse::<NormKind>)?,
            "adversarial.epsilon" => v.epsilon = parse_auto(key, value)?,
            "adversarial.step_size" => v.step_size = parse_auto(key, value)?,
            "adversarial.steps" => v.steps = parse_num(key, value)?,
            "analysis.epsilon_l2" => self.analysis.epsilon_l2 = parse_auto(key, value)?,
            "analysis.epsilon_linf" => self.analysis.epsilon_linf = parse_auto(key, value)?,
            _ => unreachable!("caller checks keys"),
        }
        Ok(())
    }

    /// Parses config text; `io.output` is resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let keys = Self::keys();
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, found {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !keys.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
            cfg.set(key, value)?;
        }
        cfg.output = base.join(&cfg.output);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Canonical text of every key; `io.output` is written as given.
    pub fn to_text(&self, output: &str) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let v = if k == "io.output" { output.to_string() } else { v };
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    fn value_of(&self, key: &str) -> String {
        self.entries()
            .into_iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
            .unwrap_or_default()
    }

    fn check(&self, key: &str, ok: bool, reason: &str) -> Result<(), ConfigError> {
        if ok {
            Ok(())
        } else {
            Err(invalid(key, &self.value_of(key), reason))
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.dataset;
        self.check("dataset.classes", (2..=4).contains(&d.classes), "must be between 2 and 4")?;
        self.check("dataset.n_per_class", d.n_per_class > 0, "must be positive")?;
        d.bias
            .validate()
            .map_err(|e| invalid("dataset.bias_classes", &self.value_of("dataset.bias_classes"), e.to_string()))?;
        self.check(
            "dataset.bias_classes",
            d.bias.classes.0 < d.classes && d.bias.classes.1 < d.classes,
            "bias classes must be below dataset.classes",
        )?;
        let g = &self.generator;
        self.check("generator.latent_dim", g.latent_dim >= 15, "distillation needs at least 15 latent dimensions")?;
        self.check("generator.hidden", !g.hidden.is_empty() && !g.hidden.contains(&0), "widths must be positive")?;
        self.check("generator.learning_rate", g.learning_rate > 0.0, "must be positive")?;
        self.check("generator.batch_size", g.batch_size > 0, "must be positive")?;
        self.check("generator.samples_per_epoch", g.samples_per_epoch > 0, "must be positive")?;
        self.check("generator.cgan_aux_weight", g.cgan_aux_weight >= 0.0, "must be nonnegative")?;
        let c = &self.classifier;
        self.check("classifier.learning_rate", c.learning_rate > 0.0, "must be positive")?;
        self.check("classifier.momentum", (0.0..1.0).contains(&c.momentum), "must be in [0, 1)")?;
        self.check("classifier.batch_size", c.batch_size > 0, "must be positive")?;
        let t = &self.testgen;
        self.check("testgen.epsilon", t.epsilon.map_or(true, |e| e > 0.0), "must be positive")?;
        self.check("testgen.confidence", t.confidence >= 0.0, "must be nonnegative")?;
        self.check("testgen.step_size", t.step_size > 0.0, "must be positive")?;
        let sites = g.hidden.len() + 2;
        let mut layers = t.layers.clone();
        layers.sort_unstable();
        layers.dedup();
        self.check(
            "testgen.layers",
            !t.layers.is_empty() && layers.len() == t.layers.len() && layers.iter().all(|&l| l < sites),
            "must list distinct perturbation sites of the generator",
        )?;
        let a = &self.attack;
        self.check("attack.epsilon", a.epsilon.map_or(true, |e| e >= 0.0), "must be nonnegative")?;
        self.check("attack.step_size", a.step_size.map_or(true, |e| e >= 0.0), "must be nonnegative")?;
        self.check("attack.confidence", a.confidence >= 0.0, "must be nonnegative")?;
        let v = &self.adversarial;
        self.check("adversarial.epsilon", v.epsilon.map_or(true, |e| e >= 0.0), "must be nonnegative")?;
        self.check("adversarial.step_size", v.step_size.map_or(true, |e| e >= 0.0), "must be nonnegative")?;
        for key in ["analysis.epsilon_l2", "analysis.epsilon_linf"] {
            let val = if key.ends_with("l2") { self.analysis.epsilon_l2 } else { self.analysis.epsilon_linf };
            self.check(key, val.map_or(true, |e| e >= 0.0), "must be nonnegative")?;
        }
        Ok(())
    }

    pub fn generator_arch(&self) -> GeneratorArch {
        GeneratorArch {
            latent_dim: self.generator.latent_dim,
            classes: self.dataset.classes,
            hidden: self.generator.hidden.clone(),
            image_shape: [3, 16, 16],
        }
    }

    pub fn classifier_train(&self, seed: u64) -> TrainConfig {
        let c = &self.classifier;
        TrainConfig {
            learning_rate: c.learning_rate,
            momentum: c.momentum,
            batch_size: c.batch_size,
            epochs: c.epochs,
            seed,
            optimizer: c.optimizer,
            ..TrainConfig::default()
        }
    }

    pub fn testgen_config(&self, g: &GeneratorModel) -> TestGenConfig {
        let t = &self.testgen;
        TestGenConfig {
            epsilon: t.epsilon.unwrap_or_else(|| default_epsilon(g, &t.layers)),
            confidence: t.confidence,
            mode: t.mode,
            objective: t.objective,
            step_size: t.step_size,
            max_iterations: t.max_iterations,
            layers: t.layers.clone(),
            seed: 0,
        }
    }

    pub fn attack_config(&self) -> AttackConfig {
        let a = &self.attack;
        let mut cfg = attack_budget(a.norm, a.epsilon, a.step_size, a.steps);
        cfg.mode = a.mode;
        cfg.objective = a.objective;
        cfg.confidence = a.confidence;
        cfg
    }

    pub fn adversarial_attack(&self) -> AttackConfig {
        let v = &self.adversarial;
        attack_budget(v.norm, v.epsilon, v.step_size, v.steps)
    }

    pub fn reference_epsilons(&self) -> (f64, f64) {
        (
            self.analysis.epsilon_l2.unwrap_or(NormKind::L2.default_epsilon()),
            self.analysis.epsilon_linf.unwrap_or(NormKind::Linf.default_epsilon()),
        )
    }
}

/// Attack with `auto` budget `norm`'s reference and `auto` step `2.5 eps / steps`.
fn attack_budget(norm: NormKind, epsilon: Auto, step_size: Auto, steps: usize) -> AttackConfig {
    let mut cfg = AttackConfig::new(norm);
    cfg.epsilon = epsilon.unwrap_or(cfg.epsilon);
    cfg.steps = steps;
    cfg.step_size = step_size.unwrap_or(if steps > 0 { 2.5 * cfg.epsilon / steps as f64 } else { 0.0 });
    cfg
}
