//! Named genomes and the solid target grids built from them.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{BasicGenome, ExtendedGenome, Genome};
use crate::voxelize::{render_shape, RenderOptions, VoxelError, VoxelGrid, Workspace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error("unknown builtin genome {0:?}")]
    UnknownName(String),
    #[error("{0:?} is not an evolution target (use cube, star or heart)")]
    NotATarget(String),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedGenome {
    pub name: &'static str,
    pub genome: Genome,
    pub description: &'static str,
}

pub const BUILTIN_NAMES: [&str; 8] = [
    "cube",
    "star",
    "heart",
    "torus",
    "mobius",
    "shell",
    "vawt_star_seed",
    "vawt_extended_seed",
];

pub const TARGET_NAMES: [&str; 3] = ["cube", "star", "heart"];

// Extended parameters a shape does not set take these values:
// t1 = 0, t2 = 0, d1 = 1, d2 = 1, c1 = 1, c2 = 1, c3 = 0, r0 = 10.
const fn extended(basic: [f64; 8], extra: [f64; 8]) -> ExtendedGenome {
    ExtendedGenome::new([
        basic[0], basic[1], basic[2], basic[3], basic[4], basic[5], basic[6], basic[7], extra[0],
        extra[1], extra[2], extra[3], extra[4], extra[5], extra[6], extra[7],
    ])
}

const HEART_OCTET: [f64; 8] = [3.0, 1.5, 12.0, 3.0, 0.0, 3.0, 0.0, 0.0];

/// Looks up a builtin genome by name.
pub fn builtin(name: &str) -> Result<NamedGenome, TargetError> {
    let (name, genome, description) = match name {
        "cube" => (
            "cube",
            Genome::Basic(BasicGenome::new([
                4.0, 10.0, 10.0, 10.0, 4.0, 10.0, 10.0, 10.0,
            ])),
            "rounded cube",
        ),
        "star" => (
            "star",
            Genome::Basic(BasicGenome::new([
                6.0, 5.0, 10.0, 10.0, 4.0, 10.0, 10.0, 10.0,
            ])),
            "six-pointed star",
        ),
        "heart" => (
            "heart",
            Genome::Basic(BasicGenome::new(HEART_OCTET)),
            "heart",
        ),
        "shell" => (
            "shell",
            Genome::Extended(extended(
                HEART_OCTET,
                [0.0, 2.0, 1.0, 1.0, 5.0, 1.0, 0.0, 10.0],
            )),
            "spiral shell",
        ),
        "torus" => (
            "torus",
            Genome::Extended(extended(
                [10.0; 8],
                [2.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 10.0],
            )),
            "torus",
        ),
        "mobius" => (
            "mobius",
            Genome::Extended(extended(
                HEART_OCTET,
                [4.0, 0.0, 0.0, 0.0, 5.0, 0.3, 2.2, 10.0],
            )),
            "twisted band",
        ),
        "vawt_star_seed" => (
            "vawt_star_seed",
            Genome::Basic(BasicGenome::new([
                6.0, 5.0, 30.0, 10.0, 4.0, 10.0, 10.0, 10.0,
            ])),
            "star-section turbine rotor",
        ),
        "vawt_extended_seed" => (
            "vawt_extended_seed",
            Genome::Extended(ExtendedGenome::new([
                0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 6.0, 0.5, 0.7, 4.0, 1.0, 0.4, 50.0,
            ])),
            "extended turbine rotor",
        ),
        other => return Err(TargetError::UnknownName(other.to_string())),
    };
    Ok(NamedGenome {
        name,
        genome,
        description,
    })
}

/// Solid voxelization of one of the three evolution targets, normalized to
/// fill a grid of the given dimensions.
pub fn build_target(name: &str, dims: [usize; 3]) -> Result<VoxelGrid, TargetError> {
    if !TARGET_NAMES.contains(&name) {
        return Err(match builtin(name) {
            Ok(_) => TargetError::NotATarget(name.to_string()),
            Err(e) => e,
        });
    }
    let named = builtin(name)?;
    let ws = Workspace {
        physical_size: dims.map(|d| d as f64),
        grid_dims: dims,
        platform_enabled: false,
        fill_interior: true,
    };
    Ok(render_shape(&named.genome, &ws, &RenderOptions::target())?)
}
