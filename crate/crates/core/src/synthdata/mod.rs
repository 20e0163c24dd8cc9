//! Procedural scenes with known semantic parameters, biased datasets built
//! from them, and a feature oracle that reads the parameters back.

mod dataset;
mod features;
mod ppm;
mod scene;

pub use dataset::{
    build_biased_dataset, build_biased_dataset_sized, build_unbiased_dataset, sample_params, BiasFeature, BiasSpec,
    BiasedSplits, LabeledDataset, Sample, Split, SplitSizes,
};
pub use features::{
    extract_features, extract_features_among, SceneEstimate, MIN_OBJECT_PIXELS,
    OBJECT_HUE_THRESHOLD,
};
pub use ppm::{
    decode_ppm, encode_ppm, export_dataset, import_dataset, read_ppm, to_byte, write_ppm,
    MANIFEST_FILE,
};
pub use scene::{
    coverage_map, hsv_to_rgb, hue_distance, render, rgb_to_hsv, SceneParams, Shape,
    CENTER_RANGE, CHANNELS, IMAGE_SHAPE, IMAGE_SIZE, MIN_HUE_GAP, SATURATION, SIZE_RANGE,
    VALUE,
};
