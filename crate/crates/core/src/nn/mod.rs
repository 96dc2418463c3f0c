//! Small fully-connected networks, the reverse-mode tape they run on, and
//! the Adam optimizer.

pub mod adam;
pub mod gradcheck;
pub mod mlp;
pub mod params;
pub mod tape;

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{choose_probes, finite_diff_check, FdReport};
pub use mlp::{Activation, Mlp, MlpSpec, OutputActivation};
pub use params::{GradBuffer, ParamStore, Segment};
pub use tape::{GridBinding, LinearLayer, NodeId, RayLayout, Tape, Unary};
