//! Expression trees over `{+, ×, variables, constants}`.

mod parse;
mod poly;
mod sample;
mod tree;

use thiserror::Error;

pub use parse::{default_names, parse, to_infix};
pub use poly::{canonical_polynomial, polynomial_to_tree, to_report_string, Monomial, Polynomial, TERM_CAP};
pub use sample::{full, grow, sample_tree, LeafLaw};
pub use tree::{ExprTree, Node};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("variable index {index} out of range for {available} features")]
    VariableOutOfRange { index: usize, available: usize },

    #[error("malformed tree: {0}")]
    Structure(String),

    #[error("polynomial expansion exceeded {} terms (reached {terms})", TERM_CAP)]
    TooLarge { terms: usize },
}
