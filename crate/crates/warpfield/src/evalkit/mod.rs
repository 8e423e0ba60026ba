//! Evaluation toolkit: image metrics, novel-view rendering, point-cloud
//! export, and the synthetic scene generator backing the verification suite.

pub mod metrics;
pub mod synth;
pub mod view;

pub use metrics::{psnr, ssim, MetricReport, PSNR_CAP_DB};
pub use synth::{
    generate_synthetic, oracle_render_frame, AnalyticRadiance, Blob, BlobMotion, DepthCorruption,
    MaskSpec, OracleFrame, SyntheticScene,
};
pub use view::{
    eval_dataset, export_pointcloud, render_source_view, render_view, EvalSplit, RenderedView,
};
