//! Relation classification with strict surface/syntactic rules and a
//! contrastively trained semantic back-off.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: annotated sentences, entity spans, instances, marked text.
//! - [`rule`]: the rule language (AST, parser, serializer, rule files).
//! - [`matcher`]: strict matching and indexed corpus scans.
//! - [`rulegen`]: rules from shortest dependency paths or in-between tokens.
//! - [`synonyms`]: entity type synonyms used for augmentation.
//! - [`synth`]: a synthetic parsed corpus and few-shot benchmark.
//! - [`pipeline`]: (rule, marked sentence) training pairs with paraphrases.
//! - [`semantic`]: the hashed dual encoder, contrastive loss and training.
//! - [`sieve`]: strict rules first, similarity as the fallback.
//! - [`eval`]: episodic micro P/R/F1, threshold tuning, the type baseline.
//! - [`session`]: event-sourced rule edits and their evaluation.

pub mod bundled;
pub mod corpus;
pub mod episode;
pub mod eval;
pub mod matcher;
pub mod pipeline;
pub mod rule;
pub mod rulegen;
pub mod semantic;
pub mod session;
pub mod sieve;
pub mod synonyms;
pub mod synth;
