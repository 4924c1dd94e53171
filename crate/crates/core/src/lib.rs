//! Data-flow attestation workbench for a 16-bit MCU model.
pub mod corpus;
pub mod emulator;
pub mod error;
pub mod instrument;
pub mod isa;
pub mod layout;
pub mod metrics;
pub mod pox;
pub mod trace;
pub mod verifier;

pub use error::Error;
