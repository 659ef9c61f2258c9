//! Topic trends over a dated document collection.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! * [`ingest`]: load articles, filter by length, language and date window,
//!   index them by publication month.
//! * [`preprocess`]: clean article bodies into token streams and merge
//!   curated multi-word phrases into single tokens.
//! * [`features`]: vocabulary filtering and the tf-idf document-term matrix.
//! * [`nmf`]: nonnegative factorization `X ≈ WH` by alternating HALS sweeps.
//! * [`stability`]: ranked top-term lists, average Jaccard agreement and
//!   stability scores used to choose the topic count.
//! * [`analysis`]: relevance-ranked term tables, document topic mixtures and
//!   monthly topic trends.

pub mod analysis;
mod binfmt;
pub mod dense;
pub mod features;
pub mod ingest;
pub mod langdetect;
pub mod nmf;
pub mod preprocess;
pub mod sparse;
pub mod stability;
pub mod synth;

pub use dense::DenseMatrix;
pub use sparse::CsrMatrix;
