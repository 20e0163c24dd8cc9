//! Aggregations over generated tests: pixel distances, fault detection and
//! transfer to other classifiers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::ClassifierModel;
use crate::synthdata::{extract_features, BiasSpec};
use crate::testgen::TestCase;

pub const HISTOGRAM_BINS: usize = 32;

/// Distances within this much of the reference budget count as inside it,
/// matching the precision the pixel-space projection guarantees.
pub const EXCEED_TOLERANCE: f64 = 1e-9;

/// Uniform-width histogram over `[min, max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0; bins];
        for &v in values {
            counts[Self::bin(v, min, max, bins)] += 1;
        }
        Histogram { min, max, counts }
    }

    fn bin(v: f64, min: f64, max: f64, bins: usize) -> usize {
        if max > min {
            (((v - min) / (max - min) * bins as f64) as usize).min(bins - 1)
        } else {
            0
        }
    }

    /// `[lower, upper)` edges of bin `i`.
    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = (self.max - self.min) / self.counts.len() as f64;
        (self.min + w * i as f64, self.min + w * (i + 1) as f64)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Distances for one norm against a reference budget.
#[derive(Clone, Debug, PartialEq)]
pub struct NormDistances {
    /// Ascending.
    pub values: Vec<f64>,
    pub histogram: Histogram,
    pub reference_epsilon: f64,
    /// Fraction of tests further than the reference budget plus
    /// [`EXCEED_TOLERANCE`].
    pub exceed_fraction: f64,
}

impl NormDistances {
    fn new(mut values: Vec<f64>, reference_epsilon: f64) -> Self {
        values.sort_by(f64::total_cmp);
        let exceed = values.iter().filter(|&&v| v > reference_epsilon + EXCEED_TOLERANCE).count();
        NormDistances {
            histogram: Histogram::new(&values, HISTOGRAM_BINS),
            exceed_fraction: exceed as f64 / values.len() as f64,
            reference_epsilon,
            values,
        }
    }

    pub fn median(&self) -> f64 {
        let n = self.values.len();
        if n % 2 == 1 {
            self.values[n / 2]
        } else {
            0.5 * (self.values[n / 2 - 1] + self.values[n / 2])
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceReport {
    pub l2: NormDistances,
    pub linf: NormDistances,
}

impl DistanceReport {
    pub fn len(&self) -> usize {
        self.l2.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l2.values.is_empty()
    }
}

/// Pixel distances between seed and test images of every test in `tests`.
pub fn distance_distribution(tests: &[TestCase], eps_l2: f64, eps_linf: f64) -> Result<DistanceReport> {
    if tests.is_empty() {
        return Err(Error::EmptyTests);
    }
    Ok(DistanceReport {
        l2: NormDistances::new(tests.iter().map(|t| t.pixel_l2).collect(), eps_l2),
        linf: NormDistances::new(tests.iter().map(|t| t.pixel_linf).collect(), eps_linf),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaultDetectionReport {
    pub seed_class: usize,
    pub target_class: usize,
    /// Successful tests whose feature the oracle could read on both images.
    pub successes: usize,
    pub flips: usize,
    /// Successful tests skipped because the oracle was not confident.
    pub excluded: usize,
}

impl FaultDetectionReport {
    /// `flips / successes`, absent when nothing was counted.
    pub fn rate(&self) -> Option<f64> {
        (self.successes > 0).then(|| self.flips as f64 / self.successes as f64)
    }
}

/// Whether the biased feature moved from the seed class's range on the seed
/// image into the partner's range on the test image. `None` when the oracle
/// cannot read the feature on either image.
pub fn is_flip(test: &TestCase, bias: &BiasSpec) -> Result<Option<bool>> {
    let (from, to) = match (
        bias.range_of(test.seed_class),
        bias.partner(test.seed_class).and_then(|p| bias.range_of(p)),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidBias(format!(
                "class {} is not part of the bias pair {:?}",
                test.seed_class, bias.classes
            )))
        }
    };
    let seed = bias.feature.of_estimate(&extract_features(&test.seed_image));
    let after = bias.feature.of_estimate(&extract_features(&test.test_image));
    Ok(match (seed, after) {
        (Some(s), Some(t)) => Some(BiasSpec::in_range(from, s) && BiasSpec::in_range(to, t)),
        _ => None,
    })
}

/// Counts oracle-confirmed feature flips among the successful tests, which
/// must all share one seed class.
pub fn fault_detection_rate(tests: &[TestCase], bias: &BiasSpec) -> Result<FaultDetectionReport> {
    bias.validate()?;
    let first = tests.first().ok_or(Error::EmptyTests)?;
    let seed_class = first.seed_class;
    if tests.iter().any(|t| t.seed_class != seed_class) {
        return Err(Error::InvalidConfig("tests mix several seed classes".into()));
    }
    let target_class = bias.partner(seed_class).ok_or_else(|| {
        Error::InvalidBias(format!("class {seed_class} is not part of the bias pair {:?}", bias.classes))
    })?;
    let mut report = FaultDetectionReport {
        seed_class,
        target_class,
        successes: 0,
        flips: 0,
        excluded: 0,
    };
    for t in tests.iter().filter(|t| t.is_success()) {
        match is_flip(t, bias)? {
            Some(flip) => {
                report.successes += 1;
                report.flips += usize::from(flip);
            }
            None => report.excluded += 1,
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferCell {
    pub accuracy: f64,
    pub count: usize,
}

/// Accuracy of each model (row) on each method's tests (column).
#[derive(Clone, Debug, PartialEq)]
pub struct TransferReport {
    pub models: Vec<String>,
    pub methods: Vec<String>,
    /// `cells[model][method]`; `None` when the method has no successful test.
    pub cells: Vec<Vec<Option<TransferCell>>>,
}

impl TransferReport {
    pub fn cell(&self, model: &str, method: &str) -> Option<TransferCell> {
        let i = self.models.iter().position(|m| m == model)?;
        let j = self.methods.iter().position(|m| m == method)?;
        self.cells[i][j]
    }
}

/// Fraction of each method's successful test images that each model labels
/// with the seed class.
pub fn transfer_matrix(
    tests_by_source: &[(&str, &[TestCase])],
    models: &[(&str, &ClassifierModel)],
) -> Result<TransferReport> {
    let mut cells = Vec::with_capacity(models.len());
    for (_, model) in models {
        let mut row = Vec::with_capacity(tests_by_source.len());
        for (_, tests) in tests_by_source {
            let mut correct = 0;
            let mut count = 0;
            for t in tests.iter().filter(|t| t.is_success()) {
                count += 1;
                correct += usize::from(model.predict(&t.test_image)?.predicted == t.seed_class);
            }
            row.push((count > 0).then(|| TransferCell {
                accuracy: correct as f64 / count as f64,
                count,
            }));
        }
        cells.push(row);
    }
    Ok(TransferReport {
        models: models.iter().map(|(n, _)| n.to_string()).collect(),
        methods: tests_by_source.iter().map(|(n, _)| n.to_string()).collect(),
        cells,
    })
}

pub const DISTANCE_HISTOGRAM_CSV: &str = "distance_histogram.csv";
pub const DISTANCE_SUMMARY_CSV: &str = "distance_summary.csv";
pub const FAULT_DETECTION_CSV: &str = "fault_detection.csv";
pub const TRANSFER_CSV: &str = "transfer.csv";

/// Histogram rows for each `(method, report)`.
pub fn distance_histogram_csv(reports: &[(&str, &DistanceReport)]) -> String {
    let mut s = String::from("method,norm,bin,lower,upper,count\n");
    for (method, report) in reports {
        for (name, d) in [("l2", &report.l2), ("linf", &report.linf)] {
            for (i, c) in d.histogram.counts.iter().enumerate() {
                let (lo, hi) = d.histogram.edges(i);
                let _ = writeln!(s, "{method},{name},{i},{lo:.6},{hi:.6},{c}");
            }
        }
    }
    s
}

pub fn distance_summary_csv(reports: &[(&str, &DistanceReport)]) -> String {
    let mut s = String::from("method,norm,tests,reference_epsilon,exceed_fraction,median,min,max\n");
    for (method, report) in reports {
        for (name, d) in [("l2", &report.l2), ("linf", &report.linf)] {
            let _ = writeln!(
                s,
                "{method},{name},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                d.values.len(),
                d.reference_epsilon,
                d.exceed_fraction,
                d.median(),
                d.histogram.min,
                d.histogram.max
            );
        }
    }
    s
}

/// One row per `(method, report)`; the rate column is empty when nothing
/// was counted.
pub fn fault_detection_csv(reports: &[(&str, &FaultDetectionReport)]) -> String {
    let mut s = String::from("method,y0,y1,successes,flips,excluded,rate\n");
    for (method, r) in reports {
        let rate = r.rate().map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{method},{},{},{},{},{},{rate}",
            r.seed_class, r.target_class, r.successes, r.flips, r.excluded
        );
    }
    s
}

/// One row per present cell.
pub fn transfer_csv(report: &TransferReport) -> String {
    let mut s = String::from("model,method,tests,accuracy\n");
    for (i, model) in report.models.iter().enumerate() {
        for (j, method) in report.methods.iter().enumerate() {
            if let Some(c) = report.cells[i][j] {
                let _ = writeln!(s, "{model},{method},{},{:.6}", c.count, c.accuracy);
            }
        }
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
