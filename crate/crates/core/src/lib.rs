//! K-way normalized cut on token feature grids by fractional alternating
//! optimization, with mask generation, neighbor-diffusion refinement,
//! exhaustive and spectral reference partitioners, and mIoU evaluation.
//!
//! ```no_run
//! use fracut::{graph, solver, tensor_io};
//!
//! let features = tensor_io::read_npy("tokens.npy")?;
//! let config = tensor_io::PipelineConfig::default();
//! let g = graph::build_affinity(&features, config.alpha_power, config.lambda_affinity)?;
//! let (assignment, report) = solver::solve(&g, &config)?;
//! println!("{} iterations, labels {:?}", report.iterations_run, assignment.hard_labels());
//! # Ok::<(), fracut::Error>(())
//! ```

pub mod cli;
pub mod dream;
pub mod error;
pub mod eval;
pub mod graph;
pub mod maskgen;
pub mod oracle;
pub mod solver;
pub mod tensor_io;

pub use error::{Error, Result};
