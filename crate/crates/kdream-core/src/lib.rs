//! Knowledge-guided molecular generation toolkit.
//!
//! The pipeline has three stages: translational knowledge-graph embeddings
//! ([`kge`]), a score-based diffusion model over continuous molecular graphs
//! ([`diffusion`]), and a graph-attention regressor ([`crn`]) whose input
//! gradients steer reverse sampling toward target embeddings ([`guidance`]).
//! Supporting modules cover triple ingestion ([`kg`]), discrete molecular
//! graphs and SMILES ([`molgraph`]), a small reverse-mode autodiff engine
//! ([`diffkit`]), and generation metrics plus multivariate statistics
//! ([`stats`]).

pub mod crn;
pub mod diffkit;
pub mod gradcheck;
pub mod diffusion;
pub mod guidance;
pub mod kg;
pub mod kge;
pub mod molgraph;
pub mod rng;
pub mod stats;
