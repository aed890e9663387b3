//! Operator-in-the-loop runs over the event-sourced store.
//!
//! Each run has one writer at a time. A mutation works on a copy of the
//! run state, writes artifacts and appends the new events to the log, and
//! only then replaces the shared state, so readers always see the last
//! committed state and a failed write leaves nothing half-applied.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use supershape_core::evolve::{
    advance_generation, history_from_events, seed_population, ConfigOverrides, EvaluationMeta,
    GenerationSummary,
};
use supershape_core::fitness::submit_manual_fitness;
use supershape_core::targets::builtin;
use supershape_core::voxelize::format;
use supershape_core::{
    export_stl, extract_mesh, laplacian_smooth, render_grid, Event, EvolveError, FitnessError,
    GAConfig, Genome, Individual, IndividualId, IndividualState, RenderOptions, RunState,
    StlMode, VoxelScreen, Workspace,
};
use thiserror::Error;

use crate::store::{born, ArtifactKind, RunMeta, RunMode, RunStore, StoreError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            ApiError::BadRequest(_) => 400,
            ApiError::NotFound(_) => 404,
            ApiError::Conflict(_) => 409,
            ApiError::Internal(_) => 500,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ApiError::BadRequest(_) => "bad_request",
            ApiError::NotFound(_) => "not_found",
            ApiError::Conflict(_) => "conflict",
            ApiError::Internal(_) => "internal",
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

fn evolve_error(e: EvolveError) -> ApiError {
    match e {
        EvolveError::GenerationIncomplete { .. }
        | EvolveError::NotEnoughEvaluated { .. }
        | EvolveError::SeedInfeasible { .. } => ApiError::Conflict(e.to_string()),
        EvolveError::Config(_) | EvolveError::GenomeMismatch { .. } => {
            ApiError::BadRequest(e.to_string())
        }
        _ => ApiError::Internal(e.to_string()),
    }
}

fn fitness_error(e: FitnessError) -> ApiError {
    match e {
        FitnessError::UnknownIndividual(_) => ApiError::NotFound(e.to_string()),
        FitnessError::InvalidValue(_) => ApiError::BadRequest(e.to_string()),
        FitnessError::AlreadyEvaluated(_) | FitnessError::NotInPopulation(_) => {
            ApiError::Conflict(e.to_string())
        }
        _ => ApiError::Internal(e.to_string()),
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRun {
    pub mode: Option<RunMode>,
    pub seed_genome: Option<Genome>,
    #[serde(default)]
    pub config: ConfigOverrides,
    pub smoothing_steps: Option<usize>,
    pub request_token: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitFitness {
    pub value: f64,
    pub note: Option<String>,
    #[serde(default, rename = "override")]
    pub override_previous: bool,
    pub request_token: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Advance {
    pub request_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndividualView {
    pub id: IndividualId,
    pub generation: u32,
    pub state: IndividualState,
    pub fitness: Option<f64>,
    pub genome: Genome,
    pub parent_ids: Vec<IndividualId>,
    pub is_seed: bool,
    pub mesh_url: String,
    pub voxels_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunDescriptor {
    pub run_id: String,
    pub mode: RunMode,
    pub created: String,
    pub smoothing_steps: usize,
    pub config: GAConfig,
    pub generation: u32,
    pub evaluations: u64,
    pub discards: u64,
    pub pending: usize,
    pub evaluated: usize,
    pub best: Option<IndividualView>,
    pub members: Vec<IndividualView>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub mode: RunMode,
    pub created: String,
    pub generation: u32,
    pub pending: usize,
    pub best_fitness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct History {
    pub run_id: String,
    pub generations: Vec<GenerationSummary>,
    pub best_fitness: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Artifacts {
    pub genome: Vec<u8>,
    pub stl: Vec<u8>,
    pub vox: Vec<u8>,
}

/// Turbine-workspace grid with platform, its voxel file, and the smoothed
/// binary STL.
pub fn render_artifacts(genome: &Genome, smoothing_steps: usize) -> Result<Artifacts, String> {
    let grid = render_grid(
        genome,
        &Workspace::vawt_default(),
        &RenderOptions::vawt_for(genome),
    )
    .map_err(|e| e.to_string())?;
    let mesh = extract_mesh(&grid).map_err(|e| e.to_string())?;
    let smoothed = laplacian_smooth(&mesh, smoothing_steps, 1.0);
    Ok(Artifacts {
        genome: serde_json::to_vec_pretty(genome).expect("genomes serialize"),
        stl: export_stl(&smoothed, StlMode::Binary).map_err(|e| e.to_string())?,
        vox: format::encode(&grid),
    })
}

struct RunHandle {
    meta: RunMeta,
    writer: Mutex<()>,
    state: RwLock<RunState>,
}

impl RunHandle {
    fn snapshot(&self) -> RunState {
        self.state.read().expect("state lock").clone()
    }
}

pub struct Session {
    store: RunStore,
    runs: RwLock<BTreeMap<String, Arc<RunHandle>>>,
    create: Mutex<()>,
    jobs: usize,
}

fn now() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .expect("UTC timestamps format")
}

impl Session {
    /// Opens the store and replays every run in it. A run whose log does not
    /// replay is an error: serving it would misreport the experiment.
    pub fn open(store: RunStore, jobs: usize) -> Result<Self, StoreError> {
        let mut runs = BTreeMap::new();
        for stored in store.load_all()? {
            let state = RunState::replay(stored.meta.config.clone(), &stored.events).map_err(
                |e| StoreError::Corrupt {
                    run_id: stored.meta.run_id.clone(),
                    reason: e.to_string(),
                },
            )?;
            runs.insert(
                stored.meta.run_id.clone(),
                Arc::new(RunHandle {
                    meta: stored.meta,
                    writer: Mutex::new(()),
                    state: RwLock::new(state),
                }),
            );
        }
        Ok(Self {
            store,
            runs: RwLock::new(runs),
            create: Mutex::new(()),
            jobs: jobs.max(1),
        })
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    fn handle(&self, run_id: &str) -> Result<Arc<RunHandle>, ApiError> {
        self.runs
            .read()
            .expect("run table lock")
            .get(run_id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no run {run_id}")))
    }

    fn view(run_id: &str, ind: &Individual) -> IndividualView {
        let base = format!("/api/v1/runs/{run_id}/individuals/{}", ind.id);
        IndividualView {
            id: ind.id,
            generation: ind.generation,
            state: ind.state,
            fitness: ind.fitness,
            genome: ind.genome.clone(),
            parent_ids: ind.parent_ids.clone(),
            is_seed: ind.id == 0,
            mesh_url: format!("{base}/mesh"),
            voxels_url: format!("{base}/voxels"),
        }
    }

    fn describe(meta: &RunMeta, state: &RunState) -> RunDescriptor {
        let members: Vec<IndividualView> = state
            .population()
            .map(|i| Self::view(&meta.run_id, i))
            .collect();
        let evaluated = members.iter().filter(|m| m.fitness.is_some()).count();
        RunDescriptor {
            run_id: meta.run_id.clone(),
            mode: meta.mode,
            created: meta.created.clone(),
            smoothing_steps: meta.smoothing_steps,
            config: meta.config.clone(),
            generation: state.generation(),
            evaluations: state.evaluations(),
            discards: state.discards(),
            pending: members.len() - evaluated,
            evaluated,
            best: state.best().map(|b| Self::view(&meta.run_id, b)),
            members,
        }
    }

    /// Renders and stores artifacts for `ids`, spread over the worker
    /// threads.
    fn write_artifacts(
        &self,
        meta: &RunMeta,
        state: &RunState,
        ids: &[IndividualId],
    ) -> Result<(), ApiError> {
        let individuals: Vec<&Individual> = ids
            .iter()
            .map(|&id| state.individual(id).expect("born individuals exist"))
            .collect();
        let chunk = individuals.len().div_ceil(self.jobs).max(1);
        std::thread::scope(|scope| {
            let workers: Vec<_> = individuals
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || -> Result<(), ApiError> {
                        for ind in part {
                            let a = render_artifacts(&ind.genome, meta.smoothing_steps).map_err(
                                |e| ApiError::Internal(format!("individual {}: {e}", ind.id)),
                            )?;
                            for (kind, bytes) in [
                                (ArtifactKind::Genome, &a.genome),
                                (ArtifactKind::Stl, &a.stl),
                                (ArtifactKind::Vox, &a.vox),
                            ] {
                                self.store
                                    .write_artifact(&meta.run_id, ind, kind, bytes)?;
                            }
                        }
                        Ok(())
                    })
                })
                .collect();
            workers
                .into_iter()
                .try_for_each(|w| w.join().expect("artifact worker panicked"))
        })
    }

    pub fn create_run(&self, req: CreateRun) -> Result<RunDescriptor, ApiError> {
        let _guard = self.create.lock().expect("create lock");
        if let Some(token) = &req.request_token {
            let existing = self
                .runs
                .read()
                .expect("run table lock")
                .values()
                .find(|h| h.meta.request_token.as_ref() == Some(token))
                .cloned();
            if let Some(h) = existing {
                return Ok(Self::describe(&h.meta, &h.snapshot()));
            }
        }
        let mode = req.mode.unwrap_or(RunMode::BasicVawt);
        let config = req
            .config
            .apply(GAConfig::vawt(mode.genome_kind()))
            .map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let seed = match req.seed_genome {
            Some(g) => g,
            None => builtin(mode.seed_name()).expect("builtin seeds exist").genome,
        };
        if seed.kind() != mode.genome_kind() {
            return Err(ApiError::BadRequest(format!(
                "seed genome has {} genes; {mode:?} runs need {}",
                seed.genes().len(),
                mode.genome_kind().gene_count()
            )));
        }
        let mut state = RunState::new(config.clone()).map_err(evolve_error)?;
        seed_population(&mut state, &seed, &VoxelScreen::vawt(), self.jobs)
            .map_err(evolve_error)?;

        let run_id = uuid::Uuid::new_v4().simple().to_string()[..12].to_owned();
        let meta = RunMeta {
            run_id: run_id.clone(),
            mode,
            config,
            smoothing_steps: req
                .smoothing_steps
                .unwrap_or_else(|| mode.default_smoothing_steps()),
            created: now(),
            request_token: req.request_token,
        };
        self.store.create(&meta)?;
        let written = self
            .write_artifacts(&meta, &state, &born(state.events()))
            .and_then(|()| Ok(self.store.append(&run_id, state.events())?));
        if let Err(e) = written {
            let _ = std::fs::remove_dir_all(self.store.run_dir(&run_id));
            return Err(e);
        }
        let descriptor = Self::describe(&meta, &state);
        self.runs.write().expect("run table lock").insert(
            run_id,
            Arc::new(RunHandle {
                meta,
                writer: Mutex::new(()),
                state: RwLock::new(state),
            }),
        );
        Ok(descriptor)
    }

    pub fn list_runs(&self) -> Vec<RunSummary> {
        let runs: Vec<Arc<RunHandle>> = self
            .runs
            .read()
            .expect("run table lock")
            .values()
            .cloned()
            .collect();
        runs.iter()
            .map(|h| {
                let s = h.snapshot();
                RunSummary {
                    run_id: h.meta.run_id.clone(),
                    mode: h.meta.mode,
                    created: h.meta.created.clone(),
                    generation: s.generation(),
                    pending: s.pending().count(),
                    best_fitness: s.best_fitness(),
                }
            })
            .collect()
    }

    pub fn get_run(&self, run_id: &str) -> Result<RunDescriptor, ApiError> {
        let h = self.handle(run_id)?;
        Ok(Self::describe(&h.meta, &h.snapshot()))
    }

    pub fn list_pending(&self, run_id: &str) -> Result<Vec<IndividualView>, ApiError> {
        let h = self.handle(run_id)?;
        let state = h.snapshot();
        Ok(state.pending().map(|i| Self::view(run_id, i)).collect())
    }

    pub fn get_individual(&self, run_id: &str, id: IndividualId) -> Result<IndividualView, ApiError> {
        let h = self.handle(run_id)?;
        let state = h.snapshot();
        state
            .individual(id)
            .map(|i| Self::view(run_id, i))
            .ok_or_else(|| ApiError::NotFound(format!("run {run_id} has no individual {id}")))
    }

    /// Stored artifact bytes, exactly as written when the individual was born.
    pub fn artifact(
        &self,
        run_id: &str,
        id: IndividualId,
        kind: ArtifactKind,
    ) -> Result<Vec<u8>, ApiError> {
        let h = self.handle(run_id)?;
        let state = h.snapshot();
        let ind = state
            .individual(id)
            .ok_or_else(|| ApiError::NotFound(format!("run {run_id} has no individual {id}")))?;
        self.store
            .read_artifact(run_id, ind, kind)
            .map_err(|e| ApiError::Internal(format!("artifact unavailable: {e}")))
    }

    pub fn submit_fitness(
        &self,
        run_id: &str,
        id: IndividualId,
        req: SubmitFitness,
    ) -> Result<IndividualView, ApiError> {
        let h = self.handle(run_id)?;
        let _writer = h.writer.lock().expect("writer lock");
        let mut next = h.snapshot();
        let before = next.events().len();
        let meta = EvaluationMeta {
            note: req.note,
            timestamp: Some(now()),
            override_previous: req.override_previous,
            request_token: req.request_token,
        };
        let ind = submit_manual_fitness(&mut next, id, req.value, meta).map_err(fitness_error)?;
        self.store.append(run_id, &next.events()[before..])?;
        *h.state.write().expect("state lock") = next;
        Ok(Self::view(run_id, &ind))
    }

    pub fn advance(&self, run_id: &str, req: Advance) -> Result<RunDescriptor, ApiError> {
        let h = self.handle(run_id)?;
        let _writer = h.writer.lock().expect("writer lock");
        let mut next = h.snapshot();
        if let Some(token) = &req.request_token {
            if let Some(Event::Population { .. }) = next.token_event(token) {
                return Ok(Self::describe(&h.meta, &next));
            }
        }
        let before = next.events().len();
        advance_generation(&mut next, &VoxelScreen::vawt(), self.jobs, req.request_token)
            .map_err(evolve_error)?;
        let new = &next.events()[before..];
        self.write_artifacts(&h.meta, &next, &born(new))?;
        self.store.append(run_id, new)?;
        let descriptor = Self::describe(&h.meta, &next);
        *h.state.write().expect("state lock") = next;
        Ok(descriptor)
    }

    pub fn history(&self, run_id: &str) -> Result<History, ApiError> {
        let h = self.handle(run_id)?;
        let state = h.snapshot();
        Ok(History {
            run_id: run_id.to_owned(),
            generations: history_from_events(state.events()),
            best_fitness: state.best_fitness(),
        })
    }

    /// The committed event log of a run.
    pub fn events(&self, run_id: &str) -> Result<Vec<Event>, ApiError> {
        Ok(self.handle(run_id)?.snapshot().events().to_vec())
    }
}
