use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::synthdata::features::SceneEstimate;
use crate::synthdata::scene::{render, SceneParams, Shape, CENTER_RANGE, MIN_HUE_GAP, SIZE_RANGE};
use crate::tensor::Tensor;

/// Scene parameter that a bias correlates with the class label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BiasFeature {
    BackgroundHue,
    ObjectHue,
    CenterX,
    CenterY,
    Size,
}

impl BiasFeature {
    pub const ALL: [BiasFeature; 5] = [
        BiasFeature::BackgroundHue,
        BiasFeature::ObjectHue,
        BiasFeature::CenterX,
        BiasFeature::CenterY,
        BiasFeature::Size,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BiasFeature::BackgroundHue => "background_hue",
            BiasFeature::ObjectHue => "object_hue",
            BiasFeature::CenterX => "cx",
            BiasFeature::CenterY => "cy",
            BiasFeature::Size => "size",
        }
    }

    /// Range of values the feature can take.
    pub fn domain(self) -> (f64, f64) {
        match self {
            BiasFeature::BackgroundHue | BiasFeature::ObjectHue => (0.0, 1.0),
            BiasFeature::CenterX | BiasFeature::CenterY => CENTER_RANGE,
            BiasFeature::Size => SIZE_RANGE,
        }
    }

    pub fn is_hue(self) -> bool {
        matches!(self, BiasFeature::BackgroundHue | BiasFeature::ObjectHue)
    }

    pub fn of_params(self, p: &SceneParams) -> f64 {
        match self {
            BiasFeature::BackgroundHue => p.background_hue,
            BiasFeature::ObjectHue => p.object_hue,
            BiasFeature::CenterX => p.cx,
            BiasFeature::CenterY => p.cy,
            BiasFeature::Size => p.size,
        }
    }

    /// Reads the feature from an oracle estimate; `None` when the estimate
    /// is flagged low-confidence for this feature.
    pub fn of_estimate(self, e: &SceneEstimate) -> Option<f64> {
        match self {
            BiasFeature::BackgroundHue => e.background_confident.then_some(e.background_hue),
            BiasFeature::ObjectHue => e.object_confident.then_some(e.object_hue),
            BiasFeature::CenterX => e.object_confident.then_some(e.cx),
            BiasFeature::CenterY => e.object_confident.then_some(e.cy),
            BiasFeature::Size => e.object_confident.then_some(e.size),
        }
    }
}

impl fmt::Display for BiasFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BiasFeature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BiasFeature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidBias(format!("unknown feature {s:?}")))
    }
}

/// Assignment of disjoint feature ranges to a pair of classes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasSpec {
    pub classes: (usize, usize),
    pub feature: BiasFeature,
    pub range0: (f64, f64),
    pub range1: (f64, f64),
}

impl Default for BiasSpec {
    fn default() -> Self {
        BiasSpec {
            classes: (0, 1),
            feature: BiasFeature::BackgroundHue,
            range0: (0.05, 0.45),
            range1: (0.55, 0.95),
        }
    }
}

impl BiasSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidBias(m));
        let (y0, y1) = self.classes;
        if y0 == y1 {
            return err(format!("class pair ({y0}, {y1}) is not distinct"));
        }
        for y in [y0, y1] {
            if Shape::from_class(y).is_none() {
                return err(format!("class {y} has no shape"));
            }
        }
        let (lo, hi) = self.feature.domain();
        for (name, (a, b)) in [("range0", self.range0), ("range1", self.range1)] {
            if !(a.is_finite() && b.is_finite() && a < b && a >= lo && b <= hi) {
                return err(format!("{name} ({a}, {b}) is not a subrange of ({lo}, {hi})"));
            }
        }
        if self.range0.0 < self.range1.1 && self.range1.0 < self.range0.1 {
            return err(format!(
                "ranges {:?} and {:?} overlap",
                self.range0, self.range1
            ));
        }
        Ok(())
    }

    pub fn range_of(&self, class: usize) -> Option<(f64, f64)> {
        if class == self.classes.0 {
            Some(self.range0)
        } else if class == self.classes.1 {
            Some(self.range1)
        } else {
            None
        }
    }

    /// The other class of the pair.
    pub fn partner(&self, class: usize) -> Option<usize> {
        if class == self.classes.0 {
            Some(self.classes.1)
        } else if class == self.classes.1 {
            Some(self.classes.0)
        } else {
            None
        }
    }

    pub fn in_range(range: (f64, f64), value: f64) -> bool {
        (range.0..=range.1).contains(&value)
    }

    /// Midpoint between the two ranges, usable as a separating threshold.
    pub fn threshold(&self) -> f64 {
        if self.range0.1 <= self.range1.0 {
            0.5 * (self.range0.1 + self.range1.0)
        } else {
            0.5 * (self.range1.1 + self.range0.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
    HoldoutAligned,
    HoldoutCounter,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::HoldoutAligned => "holdout-aligned",
            Split::HoldoutCounter => "holdout-counter",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Split::Train, Split::Test, Split::HoldoutAligned, Split::HoldoutCounter]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub label: usize,
    pub params: SceneParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub split: Split,
    pub samples: Vec<Sample>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn images(&self) -> impl Iterator<Item = &Tensor> {
        self.samples.iter().map(|s| &s.image)
    }

    /// Number of classes implied by the largest label.
    pub fn class_count(&self) -> usize {
        self.samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
    }
}

/// Per-class sample counts for each split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub holdout: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn for_train(n_per_class: usize) -> Self {
        SplitSizes {
            train: n_per_class,
            holdout: (n_per_class / 4).max(50),
            test: (n_per_class / 2).max(250),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasedSplits {
    pub train: LabeledDataset,
    pub holdout_aligned: LabeledDataset,
    pub holdout_counter: LabeledDataset,
    pub unbiased_test: LabeledDataset,
}

fn sample_hue_pair(rng: &mut Rng, fixed: Option<(BiasFeature, f64)>) -> (f64, f64) {
    let offset = |rng: &mut Rng| MIN_HUE_GAP + rng.uniform() * (1.0 - 2.0 * MIN_HUE_GAP);
    match fixed {
        Some((BiasFeature::ObjectHue, obj)) => {
            let bg = (obj + offset(rng)).rem_euclid(1.0);
            (bg, obj)
        }
        Some((BiasFeature::BackgroundHue, bg)) => {
            let obj = (bg + offset(rng)).rem_euclid(1.0);
            (bg, obj)
        }
        _ => {
            let bg = rng.uniform();
            let obj = (bg + offset(rng)).rem_euclid(1.0);
            (bg, obj)
        }
    }
}

/// Draws scene parameters for `class_id` with every field uniform over its
/// range, except `constraint`'s feature which is drawn from the given range.
pub fn sample_params(
    rng: &mut Rng,
    class_id: usize,
    constraint: Option<(BiasFeature, (f64, f64))>,
) -> SceneParams {
    let pinned = constraint.map(|(f, (lo, hi))| (f, rng.uniform_range(lo, hi)));
    let (background_hue, object_hue) = sample_hue_pair(rng, pinned.filter(|(f, _)| f.is_hue()));
    let mut draw = |feature: BiasFeature| match pinned {
        Some((f, v)) if f == feature => v,
        _ => {
            let (lo, hi) = feature.domain();
            rng.uniform_range(lo, hi)
        }
    };
    let cx = draw(BiasFeature::CenterX);
    let cy = draw(BiasFeature::CenterY);
    let size = draw(BiasFeature::Size);
    SceneParams {
        class_id,
        background_hue,
        object_hue,
        cx,
        cy,
        size,
    }
}

fn build_split(
    split: Split,
    per_class: &[(usize, Option<(BiasFeature, (f64, f64))>)],
    n_per_class: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let mut rng = Rng::derive(seed, split.name());
    let mut samples = Vec::with_capacity(per_class.len() * n_per_class);
    for &(class, constraint) in per_class {
        for _ in 0..n_per_class {
            let params = sample_params(&mut rng, class, constraint);
            samples.push(Sample {
                image: render(&params)?,
                label: class,
                params,
            });
        }
    }
    rng.shuffle(&mut samples);
    Ok(LabeledDataset { split, samples })
}

/// Builds the biased training set, the two verification holdouts and an
/// unbiased test set, each from its own stream derived from `seed`.
pub fn build_biased_dataset(bias: &BiasSpec, n_per_class: usize, seed: u64) -> Result<BiasedSplits> {
    build_biased_dataset_sized(bias, SplitSizes::for_train(n_per_class), seed)
}

pub fn build_biased_dataset_sized(bias: &BiasSpec, sizes: SplitSizes, seed: u64) -> Result<BiasedSplits> {
    bias.validate()?;
    if sizes.train == 0 || sizes.holdout == 0 || sizes.test == 0 {
        return Err(Error::EmptyDataset);
    }
    let (y0, y1) = bias.classes;
    let f = bias.feature;
    let seed = derive_seed(seed, "biased");
    let aligned = [(y0, Some((f, bias.range0))), (y1, Some((f, bias.range1)))];
    let counter = [(y0, Some((f, bias.range1))), (y1, Some((f, bias.range0)))];
    let free = [(y0, None), (y1, None)];
    Ok(BiasedSplits {
        train: build_split(Split::Train, &aligned, sizes.train, seed)?,
        holdout_aligned: build_split(Split::HoldoutAligned, &aligned, sizes.holdout, seed)?,
        holdout_counter: build_split(Split::HoldoutCounter, &counter, sizes.holdout, seed)?,
        unbiased_test: build_split(Split::Test, &free, sizes.test, seed)?,
    })
}

/// Dataset over `classes` with every scene field sampled uniformly.
pub fn build_unbiased_dataset(
    classes: &[usize],
    n_per_class: usize,
    split: Split,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes.is_empty() || n_per_class == 0 {
        return Err(Error::EmptyDataset);
    }
    if let Some(&c) = classes.iter().find(|&&c| Shape::from_class(c).is_none()) {
        return Err(Error::InvalidScene(format!("class_id {c} has no shape")));
    }
    let free: Vec<_> = classes.iter().map(|&c| (c, None)).collect();
    build_split(split, &free, n_per_class, derive_seed(seed, "unbiased"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlapping_ranges_are_rejected() {
        let bias = BiasSpec {
            range1: (0.25, 0.5),
            ..BiasSpec::default()
        };
        assert!(matches!(bias.validate(), Err(Error::InvalidBias(_))));
        assert!(build_biased_dataset(&bias, 50, 1).is_err());
    }

    #[test]
    fn same_class_pair_is_rejected() {
        let bias = BiasSpec {
            classes: (1, 1),
            ..BiasSpec::default()
        };
        assert!(bias.validate().is_err());
    }

    #[test]
    fn default_split_sizes() {
        let s = SplitSizes::for_train(400);
        assert_eq!((s.train, s.holdout, s.test), (400, 100, 250));
        let s = SplitSizes::for_train(50);
        assert_eq!((s.train, s.holdout, s.test), (50, 50, 250));
    }

    #[test]
    fn sampled_params_are_valid_and_respect_constraints() {
        let mut rng = Rng::new(5);
        for feature in BiasFeature::ALL {
            let (lo, hi) = feature.domain();
            let range = (lo + 0.25 * (hi - lo), lo + 0.5 * (hi - lo));
            for i in 0..200 {
                let p = sample_params(&mut rng, i % 4, Some((feature, range)));
                p.validate().unwrap();
                let v = feature.of_params(&p);
                assert!(BiasSpec::in_range(range, v), "{feature}: {v}");
            }
        }
    }

    #[test]
    fn feature_names_round_trip() {
        for f in BiasFeature::ALL {
            assert_eq!(f.name().parse::<BiasFeature>().unwrap(), f);
        }
        assert!("hue".parse::<BiasFeature>().is_err());
    }
}
