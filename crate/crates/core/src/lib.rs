//! Partial interference alignment for downlink multi-cell MIMO clusters:
//! feasibility checks, Stage I alignment, Stage II utility maximization and a
//! seeded Monte-Carlo harness.

pub mod alignment;
pub mod error;
pub mod feasibility;
pub mod harness;
pub mod linalg;
pub mod net_model;
pub mod num;

pub use error::{Error, Result};
pub use feasibility::{AlignmentSet, Pair};
pub use net_model::{ChannelSet, ClusterDims, TopologyKind, UserId};
