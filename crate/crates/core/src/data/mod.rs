//! Synthetic digit sequences: IDX glyphs, N-body physics, rendering and storage.

mod chaos;
mod container;
mod generate;
mod glyphs;
mod idx;
pub mod physics;

pub use chaos::{chaos_ensemble, chaos_probe, perturb, ChaosEnsemble, ChaosReport, ChaosRun, Divergence};
pub use container::{read_dataset, write_dataset, DatasetHeader, Dtype, SequenceDataset, MAGIC};
pub use generate::{gen_moving_mnist, gen_nbody_mnist, generate_sample, init_bodies, render_frame, sample_seed, splitmix64, GenConfig};
pub use glyphs::{Glyphs, GLYPH_SIZE};
pub use idx::{parse_idx, parse_idx_labels, write_idx, IdxImages, IMAGE_MAGIC, LABEL_MAGIC};
pub use physics::{simulate_nbody, Body, Boundary, PhysicsConfig};
