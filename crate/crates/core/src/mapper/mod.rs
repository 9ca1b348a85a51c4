//! Cross-view grouping of masks into objects, the low-dimensional lattice
//! those objects live on, and the per-view training targets derived from
//! both.

mod bake;
mod correspond;
mod lattice;
mod mapping;
mod similarity;

pub use bake::{bake_feature_maps, BakedView};
pub use correspond::count_mask_correspondences;
pub use lattice::{build_lattice, lattice_side, CellEntry, GridCell, GridLattice, LATTICE_DIM};
pub use mapping::{cross_view_grid_mapping, Assignment, MappingResult, Provenance};
pub use similarity::{similarity_clip, similarity_color, similarity_hybrid};
