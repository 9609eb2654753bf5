//! Executor backend implementations.

pub mod capped;
pub mod hierarchical;
pub mod workerpool;

#[cfg(test)]
pub(crate) mod testrig;
