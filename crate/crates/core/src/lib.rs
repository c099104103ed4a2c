//! Decision-boundary probing for in-context classifiers.
//!
//! `dbprobe` generates small synthetic 2-D classification tasks, turns their
//! context sets into few-shot prompts, queries a classifier over a uniform
//! grid and measures the resulting decision map. Anything that can answer
//! "which class is this query, given these labelled examples" plugs in as a
//! [`backend::Backend`]: text-completion endpoints, numeric-protocol
//! endpoints, the natively implemented classical [`baselines`], or a
//! scripted mock.
//!
//! The pieces, bottom-up:
//!
//! - [`taskgen`]: linear / circle / moon generators, balanced splits and the
//!   affine map into prompt space.
//! - [`promptfmt`]: prompt rendering and the class/label correspondence.
//! - [`backend`]: the classifier interface, the HTTP clients, caching and
//!   bounded fan-out.
//! - [`probe`]: query grids and decision maps.
//! - [`baselines`]: logistic regression, k-NN, CART, MLP and SMO-trained SVM.
//! - [`metrics`]: fragmentation, connected regions, disagreement and
//!   accuracy curves.
//! - [`active`]: entropy-driven active selection of new context points.
//! - [`experiment`]: config-driven sweeps, the JSONL run ledger, SVG figures
//!   and markdown reports.
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod active;
pub mod backend;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod hashing;
pub mod metrics;
pub mod probe;
pub mod promptfmt;
pub mod rng;
pub mod taskgen;

pub use error::{Error, Result};

/// A point in the plane.
pub type Point = [f64; 2];
