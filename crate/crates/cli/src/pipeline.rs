//! Experiment stages and their on-disk artifacts.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use gentest_core::analysis::{
    distance_distribution, distance_histogram_csv, distance_summary_csv, fault_detection_csv,
    fault_detection_rate, is_flip, transfer_csv, transfer_matrix, write_text, DistanceReport,
    FaultDetectionReport, DISTANCE_HISTOGRAM_CSV, DISTANCE_SUMMARY_CSV, FAULT_DETECTION_CSV,
    TRANSFER_CSV,
};
use gentest_core::baseline::pixel_test;
use gentest_core::models::{
    load_weights, save_weights, ClassifierModel, DiscriminatorArch, GeneratorModel,
};
use gentest_core::rng::{derive_indexed, derive_seed};
use gentest_core::synthdata::{
    build_biased_dataset, build_unbiased_dataset, export_dataset, BiasedSplits, LabeledDataset,
    Split,
};
use gentest_core::testgen::{
    export_tests, generate_test, import_tests, seed_latent, Status, TestCase,
};
use gentest_core::training::{
    accuracy, adversarial_train, distillation_mse, inject_fault_on, train_classifier,
    train_generator_cgan, train_generator_distilled_with, BiasVerificationReport, CganConfig,
    DistillConfig, LossKind, TrainConfig,
};
use gentest_core::{Error, Result};

use crate::config::{GeneratorMode, RunConfig};
use crate::grid::emit_image_grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Synth,
    TrainGenerator,
    InjectFault,
    TrainClassifier,
    AdvTrain,
    GenTests,
    AttackPixel,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::TrainGenerator,
        Stage::InjectFault,
        Stage::TrainClassifier,
        Stage::AdvTrain,
        Stage::GenTests,
        Stage::AttackPixel,
        Stage::Analyze,
    ];

    /// Stages chained by `full-experiment`, in order.
    pub const EXPERIMENT: [Stage; 7] = [
        Stage::Synth,
        Stage::TrainGenerator,
        Stage::InjectFault,
        Stage::AdvTrain,
        Stage::GenTests,
        Stage::AttackPixel,
        Stage::Analyze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::TrainGenerator => "train-generator",
            Stage::InjectFault => "inject-fault",
            Stage::TrainClassifier => "train-classifier",
            Stage::AdvTrain => "adv-train",
            Stage::GenTests => "gen-tests",
            Stage::AttackPixel => "attack-pixel",
            Stage::Analyze => "analyze",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

pub const FAILED_MARKER: &str = "FAILED";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.txt";

pub const GENERATOR_FILE: &str = "models/generator.nnw";
pub const DISCRIMINATOR_FILE: &str = "models/discriminator.nnw";
pub const BIASED_FILE: &str = "models/biased.nnw";
pub const ROBUST_FILE: &str = "models/robust.nnw";
pub const UNBIASED_FILE: &str = "models/unbiased.nnw";

pub const SEMANTIC_DIR: &str = "tests/semantic";
pub const PIXEL_DIR: &str = "tests/pixel";
pub const REPORTS_DIR: &str = "reports";

/// Candidate seeds tried per requested valid seed before giving up.
const MAX_ATTEMPTS_PER_SEED: usize = 20;
/// Successful pairs shown in each direction's image grid.
const GRID_PAIRS: usize = 8;

/// Shared state of one invocation.
pub struct Context {
    pub cfg: RunConfig,
    pool: rayon::ThreadPool,
    jobs: usize,
    /// `key = value` results reported in the run summary.
    pub results: Vec<(String, String)>,
}

impl Context {
    pub fn new(cfg: RunConfig, jobs: usize) -> Result<Self> {
        let jobs = jobs.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        Ok(Context {
            cfg,
            pool,
            jobs,
            results: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.cfg.output.join(rel)
    }

    fn record(&mut self, key: impl Into<String>, value: impl ToString) {
        self.results.push((key.into(), value.to_string()));
    }

    fn stage_seed(&self, tag: &str) -> u64 {
        derive_seed(self.cfg.seed, tag)
    }

    fn directions(&self) -> [(usize, usize); 2] {
        let (a, b) = self.cfg.dataset.bias.classes;
        [(a, b), (b, a)]
    }

    fn splits(&self) -> Result<BiasedSplits> {
        build_biased_dataset(&self.cfg.dataset.bias, self.cfg.dataset.n_per_class, self.stage_seed("dataset"))
    }

    fn unbiased(&self, classes: &[usize], split: Split) -> Result<LabeledDataset> {
        build_unbiased_dataset(classes, self.cfg.dataset.n_per_class, split, self.stage_seed("dataset"))
    }

    fn bias_pair(&self) -> [usize; 2] {
        let (a, b) = self.cfg.dataset.bias.classes;
        [a, b]
    }

    fn load_classifier(&self, rel: &str) -> Result<ClassifierModel> {
        load_weights(&self.path(rel))
    }

    fn save<M: gentest_core::models::WeightsFile>(&self, model: &M, rel: &str) -> Result<()> {
        let path = self.path(rel);
        ensure_parent(&path)?;
        save_weights(model, &path)
    }

    fn write_report(&self, name: &str, text: &str) -> Result<()> {
        write_text(&self.path(REPORTS_DIR).join(name), text)
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Synth => self.synth(),
            Stage::TrainGenerator => self.train_generator(),
            Stage::InjectFault => self.inject_fault(),
            Stage::TrainClassifier => self.train_unbiased(),
            Stage::AdvTrain => self.adv_train(),
            Stage::GenTests => self.gen_tests(),
            Stage::AttackPixel => self.attack_pixel(),
            Stage::Analyze => self.analyze(),
        }
    }

    fn synth(&mut self) -> Result<()> {
        let splits = self.splits()?;
        for data in [&splits.train, &splits.holdout_aligned, &splits.holdout_counter, &splits.unbiased_test] {
            export_dataset(data, &self.path("data").join(data.split.name()))?;
            self.record(format!("synth.{}", data.split.name()), data.len());
        }
        Ok(())
    }

    fn train_generator(&mut self) -> Result<()> {
        let gc = &self.cfg.generator;
        let train = TrainConfig {
            learning_rate: gc.learning_rate,
            batch_size: gc.batch_size,
            epochs: gc.epochs,
            seed: self.stage_seed("generator"),
            optimizer: gc.optimizer,
            ..TrainConfig::default()
        };
        let g = match gc.mode {
            GeneratorMode::Distilled => train_generator_distilled_with(&DistillConfig {
                arch: self.cfg.generator_arch(),
                train: TrainConfig {
                    loss: LossKind::MeanSquared,
                    ..train
                },
                samples_per_epoch: gc.samples_per_epoch,
            })?,
            GeneratorMode::Cgan => {
                let classes: Vec<usize> = (0..self.cfg.dataset.classes).collect();
                let data = self.unbiased(&classes, Split::Train)?;
                let run = train_generator_cgan(
                    &data,
                    &CganConfig {
                        generator: self.cfg.generator_arch(),
                        discriminator: DiscriminatorArch {
                            classes: self.cfg.dataset.classes,
                            ..DiscriminatorArch::default()
                        },
                        train,
                        aux_weight: gc.cgan_aux_weight,
                        aux_classifier: self.cfg.classifier_train(self.stage_seed("generator-aux")),
                        warmup_steps: 0,
                    },
                )?;
                self.save(&run.discriminator, DISCRIMINATOR_FILE)?;
                let mut csv = String::from("epoch,generator_loss,discriminator_loss\n");
                for (e, (gl, dl)) in run.history.generator_loss.iter().zip(&run.history.discriminator_loss).enumerate() {
                    csv.push_str(&format!("{e},{gl:.6},{dl:.6}\n"));
                }
                self.write_report("cgan_history.csv", &csv)?;
                run.generator
            }
        };
        self.save(&g, GENERATOR_FILE)?;
        let mse = distillation_mse(&g, 200, self.stage_seed("generator-eval"))?;
        self.write_report("generator.csv", &format!("mode,renderer_mse\n{},{mse:.6}\n", self.cfg.generator.mode.name()))?;
        self.record("generator.renderer_mse", format!("{mse:.6}"));
        Ok(())
    }

    fn classifier_report(&mut self, name: &str, model: &ClassifierModel, splits: &BiasedSplits) -> Result<BiasVerificationReport> {
        let report = BiasVerificationReport::new(
            accuracy(model, &splits.holdout_aligned)?,
            accuracy(model, &splits.holdout_counter)?,
        );
        let test = accuracy(model, &splits.unbiased_test)?;
        let csv = format!(
            "classifier,aligned_accuracy,counter_accuracy,unbiased_test_accuracy,fault_acquired\n{name},{:.6},{:.6},{test:.6},{}\n",
            report.aligned_accuracy, report.counter_accuracy, report.fault_acquired
        );
        self.write_report(&format!("classifier_{name}.csv"), &csv)?;
        self.record(format!("{name}.aligned_accuracy"), format!("{:.6}", report.aligned_accuracy));
        self.record(format!("{name}.counter_accuracy"), format!("{:.6}", report.counter_accuracy));
        self.record(format!("{name}.unbiased_test_accuracy"), format!("{test:.6}"));
        self.record(format!("{name}.fault_acquired"), report.fault_acquired);
        Ok(report)
    }

    fn inject_fault(&mut self) -> Result<()> {
        let splits = self.splits()?;
        let fi = inject_fault_on(&splits, &self.cfg.classifier_train(self.stage_seed("biased-classifier")))?;
        self.save(&fi.model, BIASED_FILE)?;
        self.classifier_report("biased", &fi.model, &splits)?;
        Ok(())
    }

    fn train_unbiased(&mut self) -> Result<()> {
        let splits = self.splits()?;
        let data = self.unbiased(&self.bias_pair(), Split::Train)?;
        let model = train_classifier(&data, &self.cfg.classifier_train(self.stage_seed("unbiased-classifier")))?;
        self.save(&model, UNBIASED_FILE)?;
        self.classifier_report("unbiased", &model, &splits)?;
        Ok(())
    }

    fn adv_train(&mut self) -> Result<()> {
        let splits = self.splits()?;
        let model = adversarial_train(
            &splits.train,
            &self.cfg.adversarial_attack(),
            &self.cfg.classifier_train(self.stage_seed("robust-classifier")),
        )?;
        self.save(&model, ROBUST_FILE)?;
        self.classifier_report("robust", &model, &splits)?;
        Ok(())
    }

    /// Runs `make` on seed indices in parallel blocks and keeps, in index
    /// order, the first `count` tests whose seed the classifier got right.
    fn collect_valid<F>(&self, count: usize, make: F) -> Result<(Vec<TestCase>, usize)>
    where
        F: Fn(u64) -> Result<TestCase> + Sync,
    {
        let limit = count * MAX_ATTEMPTS_PER_SEED;
        let block = 4 * self.jobs;
        let mut valid = Vec::with_capacity(count);
        let mut attempts = 0;
        let mut next = 0;
        while valid.len() < count && next < limit {
            let end = (next + block).min(limit);
            let batch: Vec<Result<TestCase>> =
                self.pool.install(|| (next..end).into_par_iter().map(|i| make(i as u64)).collect());
            next = end;
            for t in batch {
                let mut t = t?;
                attempts += 1;
                if t.status != Status::SeedMisclassified {
                    t.id = valid.len();
                    valid.push(t);
                    if valid.len() == count {
                        break;
                    }
                }
            }
        }
        Ok((valid, attempts))
    }

    fn export_direction(&mut self, method: &str, dir: &Path, tests: &[TestCase], attempts: usize) -> Result<()> {
        export_tests(tests, dir)?;
        let successes: Vec<&TestCase> = tests.iter().filter(|t| t.is_success()).collect();
        let pairs: Vec<(&_, &_)> = successes
            .iter()
            .take(GRID_PAIRS)
            .map(|t| (&t.seed_image, &t.test_image))
            .collect();
        if !pairs.is_empty() {
            emit_image_grid(&pairs, &dir.join("grid.ppm"))?;
        }
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        self.record(format!("{method}.{name}.seeds"), tests.len());
        self.record(format!("{method}.{name}.attempts"), attempts);
        self.record(format!("{method}.{name}.successes"), successes.len());
        Ok(())
    }

    fn gen_tests(&mut self) -> Result<()> {
        let g: GeneratorModel = load_weights(&self.path(GENERATOR_FILE))?;
        let f = self.load_classifier(BIASED_FILE)?;
        let base = self.cfg.testgen_config(&g);
        let root = self.stage_seed("gen-tests");
        for (y0, y1) in self.directions() {
            let tag = format!("{y0}-{y1}");
            let (tests, attempts) = self.collect_valid(self.cfg.testgen.seeds_per_direction, |i| {
                let mut cfg = base.clone();
                cfg.seed = derive_indexed(root, &tag, i);
                generate_test(&g, &f, y0, y1, &cfg)
            })?;
            self.export_direction("semantic", &self.path(SEMANTIC_DIR).join(&tag), &tests, attempts)?;
        }
        Ok(())
    }

    fn attack_pixel(&mut self) -> Result<()> {
        let g: GeneratorModel = load_weights(&self.path(GENERATOR_FILE))?;
        let f = self.load_classifier(BIASED_FILE)?;
        let attack = self.cfg.attack_config();
        let root = self.stage_seed("attack-pixel");
        for (y0, y1) in self.directions() {
            let tag = format!("{y0}-{y1}");
            let (tests, attempts) = self.collect_valid(self.cfg.attack.seeds_per_direction, |i| {
                let z = seed_latent(&g, derive_indexed(root, &tag, i));
                let x = g.forward(&z, y0)?.image;
                pixel_test(&f, &x, y0, y1, &attack)
            })?;
            self.export_direction("pixel", &self.path(PIXEL_DIR).join(&tag), &tests, attempts)?;
        }
        Ok(())
    }

    fn load_method(&self, dir: &str) -> Result<Vec<(String, Vec<TestCase>)>> {
        self.directions()
            .into_iter()
            .map(|(y0, y1)| {
                let tag = format!("{y0}-{y1}");
                Ok((tag.clone(), import_tests(&self.path(dir).join(&tag))?))
            })
            .collect()
    }

    fn analyze(&mut self) -> Result<()> {
        let bias = self.cfg.dataset.bias;
        let (eps_l2, eps_linf) = self.cfg.reference_epsilons();
        let mut methods = vec![("semantic", self.load_method(SEMANTIC_DIR)?)];
        if self.path(PIXEL_DIR).exists() {
            methods.push(("pixel", self.load_method(PIXEL_DIR)?));
        }

        let mut distances: Vec<(&str, DistanceReport)> = Vec::new();
        let mut faults: Vec<(&str, FaultDetectionReport)> = Vec::new();
        let mut flip_rows = String::from("method,direction,seed_id,flip\n");
        for (method, dirs) in &methods {
            let successes: Vec<TestCase> = dirs
                .iter()
                .flat_map(|(_, t)| t.iter().filter(|t| t.is_success()).cloned())
                .collect();
            match distance_distribution(&successes, eps_l2, eps_linf) {
                Ok(d) => {
                    self.record(format!("{method}.l2_exceed_fraction"), format!("{:.6}", d.l2.exceed_fraction));
                    self.record(format!("{method}.linf_exceed_fraction"), format!("{:.6}", d.linf.exceed_fraction));
                    self.record(format!("{method}.linf_median"), format!("{:.6}", d.linf.median()));
                    distances.push((method, d));
                }
                Err(Error::EmptyTests) => self.record(format!("{method}.distances"), "no successful tests"),
                Err(e) => return Err(e),
            }
            for (tag, tests) in dirs {
                if tests.is_empty() {
                    continue;
                }
                let report = fault_detection_rate(tests, &bias)?;
                for t in tests.iter().filter(|t| t.is_success()) {
                    let flip = match is_flip(t, &bias)? {
                        Some(true) => "1",
                        Some(false) => "0",
                        None => "excluded",
                    };
                    flip_rows.push_str(&format!("{method},{tag},{:05},{flip}\n", t.id));
                }
                let rate = report.rate().map_or_else(|| "none".to_string(), |r| format!("{r:.6}"));
                let seeds = tests.len();
                let succ = tests.iter().filter(|t| t.is_success()).count();
                self.record(format!("{method}.{tag}.success_rate"), format!("{:.6}", succ as f64 / seeds as f64));
                self.record(format!("{method}.{tag}.flip_rate"), rate);
                faults.push((method, report));
            }
        }
        let dist_refs: Vec<(&str, &DistanceReport)> = distances.iter().map(|(m, d)| (*m, d)).collect();
        self.write_report(DISTANCE_HISTOGRAM_CSV, &distance_histogram_csv(&dist_refs))?;
        self.write_report(DISTANCE_SUMMARY_CSV, &distance_summary_csv(&dist_refs))?;
        let fault_refs: Vec<(&str, &FaultDetectionReport)> = faults.iter().map(|(m, r)| (*m, r)).collect();
        self.write_report(FAULT_DETECTION_CSV, &fault_detection_csv(&fault_refs))?;
        self.write_report("fault_detection_tests.csv", &flip_rows)?;

        let mut models: Vec<(&str, ClassifierModel)> = vec![("biased", self.load_classifier(BIASED_FILE)?)];
        for (name, file) in [("robust", ROBUST_FILE), ("unbiased", UNBIASED_FILE)] {
            if self.path(file).exists() {
                models.push((name, self.load_classifier(file)?));
            }
        }
        let flat: Vec<(&str, Vec<TestCase>)> = methods
            .iter()
            .map(|(m, dirs)| (*m, dirs.iter().flat_map(|(_, t)| t.iter().cloned()).collect()))
            .collect();
        let sources: Vec<(&str, &[TestCase])> = flat.iter().map(|(m, t)| (*m, t.as_slice())).collect();
        let model_refs: Vec<(&str, &ClassifierModel)> = models.iter().map(|(n, m)| (*n, m)).collect();
        let transfer = transfer_matrix(&sources, &model_refs)?;
        self.write_report(TRANSFER_CSV, &transfer_csv(&transfer))?;
        let mut rows = String::from("model,method,direction,seed_id,predicted\n");
        for (name, model) in &model_refs {
            for (method, dirs) in &methods {
                for (tag, tests) in dirs {
                    for t in tests.iter().filter(|t| t.is_success()) {
                        let p = model.predict(&t.test_image)?.predicted;
                        rows.push_str(&format!("{name},{method},{tag},{:05},{p}\n", t.id));
                    }
                }
            }
        }
        self.write_report("transfer_tests.csv", &rows)?;
        for (i, model) in transfer.models.iter().enumerate() {
            for (j, method) in transfer.methods.iter().enumerate() {
                let v = transfer.cells[i][j].map_or_else(|| "none".to_string(), |c| format!("{:.6}", c.accuracy));
                self.record(format!("transfer.{model}.{method}"), v);
            }
        }
        Ok(())
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}
