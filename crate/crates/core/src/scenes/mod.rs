//! Image, annotation and dataset IO, plus the synthetic scene generator.

mod io;
mod synth;

pub use io::{
    decode_image, encode_image, encode_names, image_dimensions, list_mit_cases, load_annotation, load_image,
    load_mask, load_mit_case, normalize_for_png, save_image, save_outputs, save_scene, Artifacts, MitCase,
    Transfer, ARTIFACTS,
};
pub use synth::{generate_scene, SceneParams, SyntheticScene, DEFAULT_DIRECTION};
