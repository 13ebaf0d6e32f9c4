//! Recognition of under-represented named entities in word lattices.
//!
//! The crate covers the whole desk-scale pipeline: corpus and named-entity
//! inventory handling ([`corpus`]), exemplar-utterance generation
//! ([`exemplar`]), a Witten-Bell back-off n-gram LM ([`ngram`]), a small
//! Elman RNN LM with embedding enrichment ([`rnnlm`]), a synthetic
//! first-pass decoder ([`simdecode`]), lattice search ([`lattice`]),
//! rescoring and keyword-biased path extraction ([`rescore`]), evaluation
//! ([`metrics`]) and the experiment harness ([`experiment`]) that runs on
//! the synthetic benchmark from [`synth`].
//!
//! Every seeded component derives its stream from a trial seed through
//! [`seed`], and bulk work goes through [`par`], which uses rayon when the
//! `parallel` feature is on and returns results in input order either way.

pub mod corpus;
pub mod exemplar;
pub mod experiment;
pub mod lattice;
pub mod metrics;
pub mod ngram;
pub mod par;
pub mod rescore;
pub mod rnnlm;
pub mod seed;
pub mod simdecode;
pub mod symbols;
pub mod synth;

pub use lattice::{KeywordAcceptor, KeywordMatch, Lattice, LatticeError, NodeId, Path, ScaleConfig};
pub use symbols::{SymbolTable, WordId};
