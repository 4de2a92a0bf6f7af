//! On-disk dataset layout, loading, and the synthetic "sounding shapes"
//! corpus.

pub mod error;
pub mod image;
pub mod layout;
pub mod loader;
pub mod synth;
pub mod wav;

pub use error::{DataError, Result};
pub use layout::{DatasetManifest, ManifestEntry, PathTemplate, Split, Subset};
pub use loader::{hflip, load_dataset, Dataset, LoaderOptions};
pub use synth::{generate_synthetic, ScheduleMode, SynthConfig, SynthSummary};
