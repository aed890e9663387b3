//! Supershape generation, voxelization, STL meshing and evolutionary search.
//!
//! The pipeline runs genome -> [`geometry`] surface samples -> [`voxelize`]
//! occupancy grid -> [`mesh`] triangles -> STL bytes. [`evolve`] drives a
//! genetic algorithm over genomes using a [`fitness`] provider, either an
//! automatic voxel match against one of the [`targets`] or fitness values
//! entered by an operator.

pub mod evolve;
pub mod fitness;
pub mod geometry;
pub mod mesh;
pub mod targets;
pub mod voxelize;

pub use evolve::{
    Event, EvolveError, GAConfig, Individual, IndividualId, IndividualState, LoopMode, RunState,
};
pub use fitness::{Evaluator, FitnessError, Screen, TargetMatch, VoxelScreen};
pub use geometry::{
    extended_point, sample_surface, spherical_product, superformula_r, BasicGenome, BasicParams,
    ExtendedGenome, Genome, GenomeKind, Resolution, Surface, SurfaceSample, TwistParam,
};
pub use mesh::{
    export_stl, extract_mesh, laplacian_smooth, parse_binary_stl, MeshError, StlMode, TriMesh,
};
pub use voxelize::{
    active_fraction, add_platform, fill_interior, match_fraction, rasterize, render_grid,
    render_shape, Placement, RasterOptions, RenderOptions, VoxelError, VoxelGrid, Workspace,
};
