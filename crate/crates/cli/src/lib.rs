//! Orchestration for training, evaluating and ensembling the compact
//! classifier from `recipe-core`: run configuration, manifests, a synthetic
//! dataset generator, and the command implementations behind the `recipe`
//! binary.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod preview;
pub mod synthetic;
pub mod train;

use thiserror::Error;

/// A configuration or invocation mistake (exit code 2).
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Process exit code for an error: 2 for usage and configuration problems,
/// 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|e| {
        e.is::<UsageError>()
            || matches!(e.downcast_ref::<recipe_core::Error>(), Some(recipe_core::Error::Config(_) | recipe_core::Error::Usage(_)))
    });
    if usage {
        2
    } else {
        1
    }
}
