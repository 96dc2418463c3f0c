//! Every field architecture: single-modality, shared fusion, the decomposed
//! ablations, geometry-aware alignment, shared geometry initialization and
//! their combination.

pub mod encoders;
pub mod model;
pub mod spec;

pub use encoders::{fuse, gaa_fuse, sgi_encode};
pub use model::{build_model, hard_constraint_loss, BranchNodes, FieldQuery, FieldResponse, Model};
pub use spec::{fusion_name, sgi_name, Architecture, Fusion, MlpConfig, ModelSpec, SgiVariant};
