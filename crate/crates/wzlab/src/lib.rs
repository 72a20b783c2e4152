//! Numerical laboratory for rate-distortion-generalization trade-offs in
//! regression from binned, noisily quantized observations.

// Validation deliberately writes `!(x > 0.0)` so NaN fails closed; the
// `partial_cmp` form clippy prefers loses that property.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod codec_sim;
pub mod config;
pub mod error;
pub mod info_density;
pub mod moments;
pub mod quad;
pub mod region;
pub mod regressors;
pub mod report;
pub mod rng;
pub mod source_model;
pub mod util;

pub use error::{Error, Result};
pub use info_density::{DensityTable, TableSpec};
pub use source_model::{channel_params, SourceModel, TestChannel};

/// Compiles and runs every code block in the guide, so the book cannot
/// drift from the API it documents.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $path))]
            mod $name {}
        };
    }

    chapter!(overview, "overview.md");
    chapter!(source_model, "source-model.md");
    chapter!(densities, "densities.md");
    chapter!(regression, "regression.md");
    chapter!(moments, "moments.md");
    chapter!(regions, "regions.md");
    chapter!(codec, "codec.md");
    chapter!(cli, "cli.md");
}
