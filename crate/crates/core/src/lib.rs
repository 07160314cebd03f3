//! Fluctuation identities for continuous-time Markov chains on the integers
//! that move down by at most one step at a time.

pub mod chain;
pub mod linalg;
pub mod measures;
pub mod scalar;
pub mod cpp;
mod exact;
pub mod oracle;
pub mod poly;
pub mod wide;
pub mod quad;
pub mod mbi;
pub mod simulate;
pub mod panel;
