//! Fitness providers: voxel match against a target grid, operator-entered
//! measurements, and a cheap deterministic mock.

use thiserror::Error;

use crate::evolve::{EvaluationMeta, Event, FitnessUnits, Individual, IndividualId, RunState};
use crate::geometry::Genome;
use crate::voxelize::{
    match_fraction, render_shape, RenderOptions, VoxelError, VoxelGrid, Workspace,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitnessError {
    #[error("no individual {0}")]
    UnknownIndividual(IndividualId),
    #[error("individual {0} already has a fitness; resubmit with override to replace it")]
    AlreadyEvaluated(IndividualId),
    #[error("individual {0} is not in the current population")]
    NotInPopulation(IndividualId),
    #[error("fitness must be a finite value >= 0, got {0}")]
    InvalidValue(f64),
    #[error("target grid is {target:?} but the workspace renders {workspace:?}")]
    TargetDims {
        target: [usize; 3],
        workspace: [usize; 3],
    },
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

/// Automated fitness, maximized. Implementations must be pure so that
/// evaluations can run in any order or in parallel.
pub trait Evaluator: Sync {
    fn evaluate(&self, genome: &Genome) -> Result<f64, FitnessError>;

    fn units(&self) -> FitnessUnits {
        FitnessUnits::Score
    }
}

/// Sum of all genes.
pub fn evaluate_mock(genome: &Genome) -> f64 {
    genome.genes().iter().sum()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Mock;

impl Evaluator for Mock {
    fn evaluate(&self, genome: &Genome) -> Result<f64, FitnessError> {
        Ok(evaluate_mock(genome))
    }
}

/// Fraction of voxels that agree with `target` after solid rendering. A
/// genome whose surface misses the grid is scored as the empty grid.
pub fn evaluate_target(
    genome: &Genome,
    target: &VoxelGrid,
    ws: &Workspace,
    opts: &RenderOptions,
) -> Result<f64, FitnessError> {
    if target.dims() != ws.grid_dims {
        return Err(FitnessError::TargetDims {
            target: target.dims(),
            workspace: ws.grid_dims,
        });
    }
    match render_shape(genome, ws, opts) {
        Ok(grid) => Ok(match_fraction(&grid, target)?),
        Err(VoxelError::EmptyResult) => Ok(1.0 - target.active_fraction()),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone)]
pub struct TargetMatch {
    target: VoxelGrid,
    workspace: Workspace,
    options: RenderOptions,
}

impl TargetMatch {
    pub fn new(target: VoxelGrid, workspace: Workspace) -> Result<Self, FitnessError> {
        Self::with_options(target, workspace, RenderOptions::target())
    }

    pub fn with_options(
        target: VoxelGrid,
        mut workspace: Workspace,
        options: RenderOptions,
    ) -> Result<Self, FitnessError> {
        if target.dims() != workspace.grid_dims {
            return Err(FitnessError::TargetDims {
                target: target.dims(),
                workspace: workspace.grid_dims,
            });
        }
        workspace.platform_enabled = false;
        Ok(Self {
            target,
            workspace,
            options,
        })
    }

    /// Target built from a named shape on a unit-voxel grid.
    pub fn builtin(name: &str, dims: [usize; 3]) -> Result<Self, crate::targets::TargetError> {
        let target = crate::targets::build_target(name, dims)?;
        let ws = Workspace {
            physical_size: dims.map(|d| d as f64),
            grid_dims: dims,
            platform_enabled: false,
            fill_interior: true,
        };
        Ok(Self::new(target, ws).expect("dims agree by construction"))
    }

    pub fn target(&self) -> &VoxelGrid {
        &self.target
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }
}

impl Evaluator for TargetMatch {
    fn evaluate(&self, genome: &Genome) -> Result<f64, FitnessError> {
        evaluate_target(genome, &self.target, &self.workspace, &self.options)
    }

    fn units(&self) -> FitnessUnits {
        FitnessUnits::Match
    }
}

/// Viability check applied to seeds and offspring before they are kept.
pub trait Screen: Sync {
    /// Fraction of the workspace the genome occupies.
    fn active_fraction(&self, genome: &Genome) -> f64;
}

/// Accepts everything. For runs that do not voxelize.
#[derive(Debug, Clone, Copy, Default)]
pub struct AcceptAll;

impl Screen for AcceptAll {
    fn active_fraction(&self, _genome: &Genome) -> f64 {
        1.0
    }
}

/// Renders the shape in a workspace, without the platform, and reports its
/// active fraction. Genomes that miss the grid count as empty.
#[derive(Debug, Clone)]
pub struct VoxelScreen {
    pub workspace: Workspace,
    /// Render settings per genome; `None` uses the turbine defaults.
    pub options: Option<RenderOptions>,
}

impl VoxelScreen {
    pub fn vawt() -> Self {
        Self {
            workspace: Workspace::vawt_default(),
            options: None,
        }
    }
}

impl Screen for VoxelScreen {
    fn active_fraction(&self, genome: &Genome) -> f64 {
        let opts = self
            .options
            .unwrap_or_else(|| RenderOptions::vawt_for(genome));
        render_shape(genome, &self.workspace, &opts)
            .map(|g| g.active_fraction())
            .unwrap_or(0.0)
    }
}

/// Records an operator's measurement for a pending member of the current
/// population. A request token that was already used returns the individual
/// unchanged.
pub fn submit_manual_fitness(
    state: &mut RunState,
    id: IndividualId,
    value: f64,
    meta: EvaluationMeta,
) -> Result<Individual, FitnessError> {
    if let Some(token) = &meta.request_token {
        if let Some(Event::Evaluation { id: prior, .. }) = state.token_event(token) {
            let prior = *prior;
            return state
                .individual(prior)
                .cloned()
                .ok_or(FitnessError::UnknownIndividual(prior));
        }
    }
    if !(value.is_finite() && value >= 0.0) {
        return Err(FitnessError::InvalidValue(value));
    }
    let ind = state
        .individual(id)
        .ok_or(FitnessError::UnknownIndividual(id))?;
    if !state.population_ids().contains(&id) {
        return Err(FitnessError::NotInPopulation(id));
    }
    if ind.is_evaluated() && !meta.override_previous {
        return Err(FitnessError::AlreadyEvaluated(id));
    }
    state
        .commit(Event::Evaluation {
            id,
            fitness: value,
            units: FitnessUnits::Rpm,
            meta,
        })
        .expect("submission checked above");
    Ok(state.individual(id).cloned().expect("exists"))
}
