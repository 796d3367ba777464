//! Test-only support: brute-force oracles that re-derive geometry and metric
//! results without touching the library's code paths, plus seeded generators for
//! synthetic scenes.
//!
//! Oracles take library types as *input* only.

pub mod eval_oracle;
pub mod raster;
pub mod scenes;
