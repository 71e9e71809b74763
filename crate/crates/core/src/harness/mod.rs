//! Desk-scale training and evaluation on synthetic low-light pairs.

mod ablate;
mod adam;
mod corpus;
mod degrade;
mod evaluate;
mod metrics;
mod train;

pub use ablate::{ablate, AblationReport, AblationRow, Study};
pub use adam::Adam;
pub use corpus::{
    image_from_rgb8, image_to_rgb8, load_png_dir, read_png, synthetic_corpus, write_png,
};
pub use degrade::{degrade, DegradationParams, DifficultyBucket};
pub use evaluate::{evaluate, BucketRow, EvalReport};
pub use metrics::{format_psnr, mean_psnr, psnr};
pub use train::{
    split_indices, train, EpochLog, TrainConfig, TrainOutcome, BUNDLED_CORPUS_LEN,
    BUNDLED_CORPUS_SEED, BUNDLED_IMAGE_SIZE, VALIDATION_STRIDE,
};
