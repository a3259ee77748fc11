//! Series ingestion, panel assembly, splits, standardization and windows.
mod io;
mod panel;
mod series;
pub mod synth;
mod windows;

pub use io::{build_panel, load_panel, read_series_csv, write_series_csv, Manifest, SeriesEntry, SeriesKind};
pub use panel::{chronological_split, chronological_split_with, fit_apply_standardizer, PanelDataset, SplitSpec, Standardizer, Subset};
pub use series::{compute_log_returns, difference, forward_fill_align, Frequency, RawSeries, Transform};
pub use windows::{batch_for, make_windows, window_targets, WindowBatch};
