//! Building pre-editorial normalization pairs from graphemic manuscript
//! transcriptions and normalized editions.
//!
//! The pipeline runs in stages: [`textprep`] decomposes pages and passages,
//! [`fingerprint`] finds candidate pairs through shared character n-grams,
//! [`aligner`] computes character alignments, [`pairbuilder`] filters and cuts
//! them into bounded training pairs. [`abbrev`] measures how much of the
//! target side goes beyond abbreviation expansion, [`normalize`] hosts the
//! rule-based and external normalizers, and [`metrics`] scores outputs.
//! [`review`] keeps the decision log of the gold-set review workflow.
//!
//! [`pipeline`] chains the stages over content-addressed work directories;
//! [`synth`] generates seeded corpora with known answers for testing.

pub mod abbrev;
pub mod aligner;
pub mod error;
pub mod fingerprint;
pub mod metrics;
pub mod normalize;
pub mod pairbuilder;
pub mod pipeline;
pub mod review;
pub mod scalar;
pub mod synth;
pub mod textprep;

pub use error::{Error, Result};
pub use scalar::{Cost, Fraction};

pub type AlignParams = aligner::AlignParams<f64>;
pub type CostModel = aligner::CostModel<f64>;
pub type CharAlignment = aligner::CharAlignment<f64>;
pub type AlignmentRecord = aligner::AlignmentRecord<f64>;
pub type EditReport = metrics::EditReport<f64>;
pub type BowReport = metrics::BowReport<f64>;
/// Bag-of-words scores as exact fractions.
pub type ExactBowReport = metrics::BowReport<num_rational::Ratio<u64>>;
pub type EvalReport = metrics::EvalReport<f64>;
