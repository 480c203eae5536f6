//! Multi-reader multi-case observer studies: session planning, reader
//! agreement, performance tables, reading time and the crossed random
//! intercept logistic model used to compare reading conditions.

mod glmm;
mod kappa;
mod plan;
mod ratings;

use thiserror::Error;

pub use glmm::{glmm_fit, outcomes_from_ratings, FixedEffect, GlmmConfig, GlmmFit, Outcome, Subset};
pub use kappa::{category_counts, fleiss_kappa};
pub use plan::{
    build_plan, Condition, Reader, ReaderPlan, SessionPlan, StudyPlan, Tier, DEFAULT_WASHOUT_DAYS, LATIN_SQUARE,
};
pub use ratings::{
    read_ratings_csv, reader_table, reading_time, write_ratings_csv, AggregateRow, BinaryCall, Confusion, Interval,
    ReaderRating, ReaderRow, ReaderTable, RATINGS_HEADER,
};

#[derive(Debug, Error, PartialEq)]
pub enum MrmcError {
    #[error("reader count {readers} is not a multiple of 3 (remainder {remainder})")]
    ReaderCount { readers: usize, remainder: usize },
    #[error("duplicate id {0}")]
    Duplicate(String),
    #[error("rating references unknown case {0}")]
    UnknownCase(String),
    #[error("invalid timing: {0}")]
    Interval(String),
    #[error("kappa is undefined: every rating falls in one category")]
    KappaUndefined,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, MrmcError>;
