//! Numerical core for transferring entanglement between two distant qubits
//! with a magnetic soliton travelling along a classical spin chain.

pub mod chain;
pub mod entanglement;
pub mod numcore;
pub mod output;
pub mod protocol;
pub mod scs;
