//! Recording ingestion, windowing, normalization, subject splits and
//! synthetic tasks.
//!
//! On disk a dataset is a JSONL manifest, one object per recording:
//!
//! ```text
//! {"path": "recordings/0000.csv", "subject": "s000", "label": 1, "sample_rate_hz": 100.0}
//! ```
//!
//! Paths are relative to the manifest. Each CSV has no header and one row of
//! comma-separated channel values per timestep.

mod recording;
mod split;
mod synth;
mod window;

pub use recording::{load_recordings, read_csv, read_manifest, write_csv, write_recordings, ManifestEntry, Recording};
pub use split::{apportion, subject_split, Part, Split};
pub use synth::{
    synth_centralized, synth_multiscale, synth_multiscale_with, synth_noise, SynthDataset, SynthMeta, SynthShape,
    BURST, BURST_BLOCK, CENTRALIZED_CYCLES, MULTISCALE_FAST_AMPLITUDE, MULTISCALE_SLOW_AMPLITUDE,
    SYNTH_SAMPLE_RATE_HZ,
};
pub use window::{prepare_splits, window, window_count, zscore, NormStats, PreparedSplits, WindowSet, STD_FLOOR};
