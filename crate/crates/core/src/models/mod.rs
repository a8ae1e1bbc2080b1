//! Desk-scale classifiers: logistic regression, MLPs and the simpleVGG family.
//!
//! simpleVGG geometry is fixed: 3×3 convolutions with stride 1 and padding 1,
//! and a 2×2 max-pool after every block. Freezing works on groups: one group
//! per conv block (or hidden dense layer), then the hidden fully connected
//! layer. The output layer is always trainable.

mod arch;
mod checkpoint;
mod network;

pub use arch::{parse_arch_spec, Activation, ArchSpec, Block, Norm};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use network::{FreezePlan, Layer, Network};
