//! Dataset generation, (de)serialization and cross-validation splits.

mod format;
mod split;
mod synthetic;

pub use format::{load_dataset, parse_dataset, render_dataset, save_dataset, FORMAT_TAG, FORMAT_VERSION};
pub use split::{kfold_split, Fold};
pub use synthetic::{generate_synthetic, ClassGenerator, SyntheticSpec};
