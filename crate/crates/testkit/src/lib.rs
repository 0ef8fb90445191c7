//! Shared test machinery for the feeder workspace: canned fixtures, a dense
//! nodal Newton reference solver, conservation checkers, and random network
//! generation. Everything here exists to check the production crates from
//! the outside; nothing in it is needed at runtime.

pub mod checks;
pub mod fixtures;
pub mod gen;
pub mod oracle;
