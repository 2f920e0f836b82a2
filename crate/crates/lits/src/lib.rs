//! Joint terrestrial access and LEO backhaul resource allocation for
//! integrated terrestrial-satellite networks.

pub mod channel;
pub mod error;
pub mod harness;
pub mod leo_backhaul;
pub mod oracle;
pub mod orchestrator;
pub mod scalar;
pub mod scenario;
pub mod terrestrial_matching;

pub use error::{Error, Result};
