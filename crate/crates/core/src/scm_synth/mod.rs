//! Synthetic ground truth: a structural causal model over fundus factors, a
//! renderer that turns factors into images, and dataset I/O.

mod dag;
mod dataset;
mod render;

pub use dag::{sample_factors, DagEdge, DagNode, FactorTable, GroundTruthDag, NodeKind, LABEL, NUISANCE_NAMES};
pub use dataset::{
    generate_dataset, load_dag, load_image_dataset, write_dataset, DagFile, Dataset, GenerateConfig, Split,
};
pub use render::{region_masks, render_clean, render_fundus, render_one, FundusParams, RegionMasks, RenderConfig};
