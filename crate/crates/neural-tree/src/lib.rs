//! Tree-decomposition-structured graph learning.
//!
//! This crate implements a message-passing architecture that operates on a
//! hierarchical tree expansion of the input graph (the *H-tree*) instead of
//! the graph itself, together with everything needed to build, validate and
//! exercise that structure end to end:
//!
//! - [`graph`]: undirected simple graphs, node sets, and the on-disk formats;
//! - [`treedecomp`]: junction-tree construction via min-fill triangulation,
//!   decomposition validity checking, and an exact treewidth oracle;
//! - [`htree`]: the recursive H-tree construction and its parameter-count
//!   estimates;
//! - [`subsample`]: bounded-treewidth edge subsampling with a certified
//!   witness decomposition;
//! - [`pgm`]: clique-decomposable functions, discrete graphical models, and
//!   exact inference (brute force and junction-tree calibration);
//! - [`nn`]: the neural engine — aggregators, heads, losses, and exact
//!   reverse-mode gradients for both the tree-structured and the baseline
//!   graph architecture;
//! - [`pipeline`]: synthetic dataset generation, the training loop, and the
//!   experiment harnesses that compare the two architectures.
//!
//! Everything is deterministic by construction: all iteration orders are
//! sorted, all randomness flows through seeded ChaCha generators, and all
//! serialized artifacts are byte-stable for a fixed input and seed.

pub mod graph;
pub mod htree;
pub mod nn;
pub mod pgm;
pub mod pipeline;
pub mod subsample;
pub mod treedecomp;
