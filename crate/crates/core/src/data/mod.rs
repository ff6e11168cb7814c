//! Synthetic gridded weather, stencil windows, normalization and on-disk
//! formats.

pub mod calendar;
pub mod manifest;
pub mod synth;
pub mod tgrd;
pub mod windows;

pub use calendar::Season;
pub use manifest::Manifest;
pub use synth::{synth_generate, GridSeries, SpatialField, SyntheticConfig};
pub use tgrd::{read_grid_file, write_grid_file, GridEntries, GridTensor};
pub use windows::{
    extract_windows, lattice_locations, normalize, split_by_date, upsample_series, NormStats, Splits, WeatherWindow,
    WindowSpec,
};
