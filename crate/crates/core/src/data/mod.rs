//! Dataset model, `.gzc` container, side-information assignment and a
//! synthetic generator.

mod access;
mod container;
mod dataset;
mod sideinfo;
mod synth;

pub use access::{Access, AccessLog, GzslSource};
pub use container::{decode_container, encode_container, load_container, save_container};
pub use dataset::{ClassInfo, GzslDataset, ModalityTable, Samples, Split};
pub use sideinfo::{assign_side_info, SideInfoAssignment};
pub use synth::{synth_generate, SynthConfig};
