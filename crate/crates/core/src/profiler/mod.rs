//! Layer-wise parameter and MAC accounting.
//!
//! A [`LayerGraph`] describes a network as a flat list of layers with the
//! feature maps they run over. Costs come either from closed-form
//! expressions ([`analytic_profile`]) or from executing each layer on the
//! tape and reading its MAC counter ([`instrumented_profile`]).

mod analytic;
mod exec;
mod graph;
mod report;
pub mod zoo;

pub use analytic::{layer_cost, propagate, window_pad, LayerShapes, MapShape};
pub use exec::{instrumented_count, instrumented_layer, instrumented_profile};
pub use graph::{Group, LayerGraph, LayerKind, LayerSpec};
pub use report::{
    analytic_profile, reduction_pct, reduction_report, resolution_sweep, sweep_csv, sweep_svg, GroupProfile,
    LayerProfile, ProfileReport, Reduction, SweepPoint, ABLATION_RESOLUTIONS,
};
