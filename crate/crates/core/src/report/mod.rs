//! Descriptive shares, multiplicity adjustment, tables and figures.

mod bh;
mod figures;
mod shares;

pub use bh::{bh_adjust, PValueSet};
pub use figures::{
    diff_svg, diverging_color, emit_figures, forest_svg, heatmap_svg, histogram_svg,
    load_coordinates, sequential_color, write_odds_ratio_csv, Coordinate, EmitReport, Projection,
    DIFF_CLAMP, SIGNIFICANCE,
};
pub use shares::{negative_share, NegativeShareTable, ShareCell, ShareDiff};
