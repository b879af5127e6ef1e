pub mod config;
pub mod eval;
pub mod geometry;
pub mod ingest;
pub mod matching;
pub mod pgo;
pub mod pipeline;
pub mod pose_estimation;
pub mod retrieval;
pub mod robust;
pub mod simulator;
pub mod triangulation;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/conventions.md")]
mod conventions {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/dataset.md")]
mod dataset {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/library.md")]
mod library {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/configuration.md")]
mod configuration {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pose_graph.md")]
mod pose_graph {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
mod evaluation {}
