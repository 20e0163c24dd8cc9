use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::weights::{read_tensors, write_tensors};
use crate::synthdata::write_ppm;
use crate::tensor::Tensor;
use crate::testgen::generate::{pixel_distances, Mode, Status, TestCase, TestSource};
use crate::testgen::perturbation::Perturbation;

pub const TESTS_FILE: &str = "tests.tsv";
/// Lossless tensors behind every record of [`TESTS_FILE`].
pub const TENSORS_FILE: &str = "tests.nnw";

pub const TSV_HEADER: &str = "seed_id\tsource\tmode\ty0\ty1\tstatus\titerations\tperturbation_norm\tpixel_l2\tpixel_linf\tmargin";

fn source_name(t: &TestCase) -> &'static str {
    match t.source {
        TestSource::Semantic { .. } => "semantic",
        TestSource::Pixel { .. } => "pixel",
    }
}

/// One tab-separated record; `y1` is `-` for untargeted tests.
pub fn tsv_record(t: &TestCase) -> String {
    let target = t.target.map_or_else(|| "-".to_string(), |y| y.to_string());
    format!(
        "{:05}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
        t.id,
        source_name(t),
        t.mode.name(),
        t.seed_class,
        target,
        t.status.name(),
        t.iterations,
        t.perturbation_norm,
        t.pixel_l2,
        t.pixel_linf,
        t.achieved_margin()
    )
}

fn test_tensors(t: &TestCase, out: &mut Vec<(String, Tensor)>) {
    let key = |part: &str| format!("{:05}.{part}", t.id);
    out.push((key("seed"), t.seed_image.clone()));
    out.push((key("test"), t.test_image.clone()));
    out.push((key("seed_conf"), t.seed_confidences.clone()));
    out.push((key("test_conf"), t.test_confidences.clone()));
    match &t.source {
        TestSource::Semantic { latent, perturbation } => {
            out.push((key("latent"), latent.clone()));
            for (i, s) in perturbation.sites().iter().enumerate() {
                out.push((key(&format!("site{i:02}")), s.clone()));
            }
        }
        TestSource::Pixel { delta } => out.push((key("delta"), delta.clone())),
    }
}

/// Writes `tests.tsv`, the tensor bundle and `<id>_seed.ppm` /
/// `<id>_test.ppm` for each test. Ids must be unique.
pub fn export_tests(tests: &[TestCase], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = String::from(TSV_HEADER);
    text.push('\n');
    let mut tensors = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for t in tests {
        if !seen.insert(t.id) {
            return Err(Error::InvalidConfig(format!("duplicate test id {}", t.id)));
        }
        text.push_str(&tsv_record(t));
        text.push('\n');
        test_tensors(t, &mut tensors);
        write_ppm(&dir.join(format!("{:05}_seed.ppm", t.id)), &t.seed_image)?;
        write_ppm(&dir.join(format!("{:05}_test.ppm", t.id)), &t.test_image)?;
    }
    write_tensors(&dir.join(TENSORS_FILE), &tensors)?;
    let path = dir.join(TESTS_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads tests written by [`export_tests`]. Images, confidences and
/// perturbations come back bit-exact; distances are recomputed from them.
pub fn import_tests(dir: &Path) -> Result<Vec<TestCase>> {
    let path = dir.join(TESTS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bundle = dir.join(TENSORS_FILE);
    let mut tensors: BTreeMap<String, Tensor> = read_tensors(&bundle)?.into_iter().collect();
    let bad = |line: usize, detail: String| Error::Format {
        path: path.clone(),
        detail: format!("line {line}: {detail}"),
    };
    let mut lines = text.lines();
    if lines.next() != Some(TSV_HEADER) {
        return Err(bad(1, "unexpected header".into()));
    }
    let mut tests = Vec::new();
    for (n, line) in lines.enumerate() {
        let ln = n + 2;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 11 {
            return Err(bad(ln, format!("expected 11 columns, found {}", cols.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(ln, format!("bad integer {s:?}")));
        let id = num(cols[0])?;
        let mode: Mode = cols[2].parse()?;
        let seed_class = num(cols[3])?;
        let target = if cols[4] == "-" { None } else { Some(num(cols[4])?) };
        let status: Status = cols[5].parse()?;
        let iterations = num(cols[6])?;
        let mut take = |part: &str| {
            let name = format!("{id:05}.{part}");
            tensors.remove(&name).ok_or_else(|| Error::MissingTensor {
                path: bundle.clone(),
                name,
            })
        };
        let seed_image = take("seed")?;
        let test_image = take("test")?;
        let seed_confidences = take("seed_conf")?;
        let test_confidences = take("test_conf")?;
        let source = match cols[1] {
            "semantic" => {
                let latent = take("latent")?;
                let mut sites = Vec::new();
                while let Ok(s) = take(&format!("site{:02}", sites.len())) {
                    sites.push(s);
                }
                TestSource::Semantic {
                    latent,
                    perturbation: Perturbation::from_vectors(sites)?,
                }
            }
            "pixel" => TestSource::Pixel { delta: take("delta")? },
            other => return Err(bad(ln, format!("unknown source {other:?}"))),
        };
        let perturbation_norm = match &source {
            TestSource::Semantic { perturbation, .. } => perturbation.flattened_norm(),
            TestSource::Pixel { .. } => 0.0,
        };
        let (pixel_l2, pixel_linf) = pixel_distances(&seed_image, &test_image);
        tests.push(TestCase {
            id,
            seed_class,
            target,
            mode,
            source,
            seed_image,
            test_image,
            seed_confidences,
            test_confidences,
            status,
            iterations,
            perturbation_norm,
            pixel_l2,
            pixel_linf,
        });
    }
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Format {
            path: bundle,
            detail: format!("tensor {name} has no record"),
        });
    }
    Ok(tests)
}
