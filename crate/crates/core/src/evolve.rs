//! Genetic algorithm engine.
//!
//! A run is event sourced: every change to a [`RunState`] goes through
//! [`RunState::commit`], which validates an [`Event`], applies it and appends
//! it to the log. [`RunState::replay`] rebuilds an identical state from the
//! configuration and the log alone.
//!
//! All randomness used to create individual `k` comes from ChaCha8 stream `k`
//! of the run seed, so results do not depend on evaluation order or on how
//! many worker threads evaluate a batch.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitness::{Evaluator, FitnessError, Screen};
use crate::geometry::{Genome, GenomeKind};

pub type IndividualId = u64;

/// Attempts allowed per slot before a seeding or generation step gives up.
pub const MAX_REGENERATIONS: u32 = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolveError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("tournament of size {needed} needs that many evaluated individuals, found {found}")]
    NotEnoughEvaluated { needed: usize, found: usize },
    #[error("generation {generation} still has {pending} pending individuals")]
    GenerationIncomplete { generation: u32, pending: usize },
    #[error("no viable genome after {attempts} consecutive attempts")]
    SeedInfeasible { attempts: u32 },
    #[error("operation needs a {expected:?} run")]
    WrongMode { expected: LoopMode },
    #[error("genome has {found} genes, run expects {expected}")]
    GenomeMismatch { expected: usize, found: usize },
    #[error("event log rejected at entry {index}: {reason}")]
    Replay { index: usize, reason: String },
    #[error(transparent)]
    Fitness(#[from] FitnessError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    SteadyState,
    Generational,
}

/// Half-widths of uniform perturbations, split by gene group: the eight
/// superformula genes and the eight extra genes of extended genomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneSteps {
    pub basic: f64,
    pub extended: f64,
}

impl GeneSteps {
    pub fn for_gene(&self, index: usize) -> f64 {
        if index < 8 {
            self.basic
        } else {
            self.extended
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GAConfig {
    pub genome_kind: GenomeKind,
    pub population_size: usize,
    pub mutation_rate: f64,
    pub mutation_step: GeneSteps,
    pub crossover_rate: f64,
    pub tournament_size: usize,
    pub elitism_count: usize,
    pub gene_bounds: Vec<[f64; 2]>,
    pub mode: LoopMode,
    pub rng_seed: u64,
    /// Offspring and seed perturbations whose voxelization has a smaller
    /// active fraction are discarded and regenerated. Zero disables the check.
    pub discard_min_active: f64,
    /// Perturbation ranges used when seeding a population from one genome.
    pub seed_perturbation: GeneSteps,
    /// Put carried-over elites back up for measurement instead of keeping
    /// their fitness.
    #[serde(default)]
    pub re_evaluate_elite: bool,
}

pub const BASIC_BOUNDS: [f64; 2] = [0.0, 50.0];
pub const EXTRA_BOUNDS: [f64; 2] = [-50.0, 50.0];
pub const R0_BOUNDS: [f64; 2] = [1.0, 100.0];

impl GAConfig {
    /// Steady-state target matching with basic genomes.
    pub fn target() -> Self {
        Self {
            genome_kind: GenomeKind::Basic,
            population_size: 200,
            mutation_rate: 0.25,
            mutation_step: GeneSteps {
                basic: 5.0,
                extended: 0.5,
            },
            crossover_rate: 0.0,
            tournament_size: 3,
            elitism_count: 0,
            gene_bounds: Self::default_bounds(GenomeKind::Basic),
            mode: LoopMode::SteadyState,
            rng_seed: 0,
            discard_min_active: 0.0,
            seed_perturbation: GeneSteps {
                basic: 5.0,
                extended: 1.0,
            },
            re_evaluate_elite: false,
        }
    }

    /// Generational turbine evolution with one elite and the 1% discard rule.
    pub fn vawt(kind: GenomeKind) -> Self {
        Self {
            genome_kind: kind,
            population_size: 20,
            mode: LoopMode::Generational,
            elitism_count: 1,
            discard_min_active: 0.01,
            gene_bounds: Self::default_bounds(kind),
            seed_perturbation: match kind {
                GenomeKind::Basic => GeneSteps {
                    basic: 5.0,
                    extended: 1.0,
                },
                GenomeKind::Extended => GeneSteps {
                    basic: 10.0,
                    extended: 1.0,
                },
            },
            ..Self::target()
        }
    }

    pub fn default_bounds(kind: GenomeKind) -> Vec<[f64; 2]> {
        let mut bounds = vec![BASIC_BOUNDS; 8];
        if kind == GenomeKind::Extended {
            bounds.extend([EXTRA_BOUNDS; 7]);
            bounds.push(R0_BOUNDS);
        }
        bounds
    }

    pub fn validate(&self) -> Result<(), EvolveError> {
        let fail = |msg: String| Err(EvolveError::Config(msg));
        if self.population_size == 0 {
            return fail("population_size must be positive".into());
        }
        if self.tournament_size == 0 || self.tournament_size > self.population_size {
            return fail(format!(
                "tournament_size must be in 1..={}",
                self.population_size
            ));
        }
        if self.elitism_count >= self.population_size {
            return fail("elitism_count must be smaller than population_size".into());
        }
        for (name, p) in [
            ("mutation_rate", self.mutation_rate),
            ("crossover_rate", self.crossover_rate),
            ("discard_min_active", self.discard_min_active),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must be within [0, 1], got {p}"));
            }
        }
        for (name, s) in [
            ("mutation_step", self.mutation_step),
            ("seed_perturbation", self.seed_perturbation),
        ] {
            if !(s.basic >= 0.0
                && s.extended >= 0.0
                && s.basic.is_finite()
                && s.extended.is_finite())
            {
                return fail(format!("{name} half-widths must be finite and >= 0"));
            }
        }
        let n = self.genome_kind.gene_count();
        if self.gene_bounds.len() != n {
            return fail(format!(
                "gene_bounds has {} entries, {:?} genomes have {n}",
                self.gene_bounds.len(),
                self.genome_kind
            ));
        }
        for (i, [lo, hi]) in self.gene_bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return fail(format!(
                    "gene_bounds[{i}] = [{lo}, {hi}] is not a finite interval"
                ));
            }
        }
        Ok(())
    }

    pub fn clamp(&self, genome: &mut Genome) {
        for (g, [lo, hi]) in genome.genes_mut().iter_mut().zip(&self.gene_bounds) {
            *g = g.clamp(*lo, *hi);
        }
    }

    pub fn in_bounds(&self, genome: &Genome) -> bool {
        genome.genes().len() == self.gene_bounds.len()
            && genome
                .genes()
                .iter()
                .zip(&self.gene_bounds)
                .all(|(g, [lo, hi])| lo <= g && g <= hi)
    }
}

/// Partial configuration layered over a mode's defaults. Used for config
/// files and API requests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub population_size: Option<usize>,
    pub mutation_rate: Option<f64>,
    pub mutation_step: Option<GeneSteps>,
    pub crossover_rate: Option<f64>,
    pub tournament_size: Option<usize>,
    pub elitism_count: Option<usize>,
    pub gene_bounds: Option<Vec<[f64; 2]>>,
    pub rng_seed: Option<u64>,
    pub discard_min_active: Option<f64>,
    pub seed_perturbation: Option<GeneSteps>,
    pub re_evaluate_elite: Option<bool>,
}

impl ConfigOverrides {
    pub fn apply(&self, mut cfg: GAConfig) -> Result<GAConfig, EvolveError> {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$f = v.clone();
                }
            )*};
        }
        set!(
            population_size,
            mutation_rate,
            mutation_step,
            crossover_rate,
            tournament_size,
            elitism_count,
            gene_bounds,
            rng_seed,
            discard_min_active,
            seed_perturbation,
            re_evaluate_elite
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndividualState {
    Pending,
    Evaluated,
}

/// Unit attached to a recorded fitness value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessUnits {
    /// Fraction of matching voxels.
    Match,
    /// Revolutions per minute entered by an operator.
    Rpm,
    /// Anything else, e.g. the test evaluator.
    Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: IndividualId,
    pub genome: Genome,
    pub fitness: Option<f64>,
    pub state: IndividualState,
    pub generation: u32,
    pub parent_ids: Vec<IndividualId>,
}

impl Individual {
    pub fn is_evaluated(&self) -> bool {
        self.state == IndividualState::Evaluated
    }
}

/// Fitness submission details that only manual entry carries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default, rename = "override", skip_serializing_if = "is_false")]
    pub override_previous: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_token: Option<String>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// A new individual, pending evaluation.
    Birth {
        id: IndividualId,
        generation: u32,
        parent_ids: Vec<IndividualId>,
        genome: Genome,
    },
    /// A candidate rejected by the active-voxel check. It never becomes an
    /// individual; `slot` is the id it was being generated for.
    Discard {
        slot: IndividualId,
        attempt: u32,
        active_fraction: f64,
        genome: Genome,
    },
    Evaluation {
        id: IndividualId,
        fitness: f64,
        units: FitnessUnits,
        #[serde(flatten)]
        meta: EvaluationMeta,
    },
    /// Steady-state replacement of `victim` by `offspring`.
    Replacement {
        victim: IndividualId,
        offspring: IndividualId,
    },
    /// The members of a new generation.
    Population {
        generation: u32,
        members: Vec<IndividualId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_token: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    config: GAConfig,
    /// Every individual ever born, indexed by id.
    individuals: Vec<Individual>,
    population: Vec<IndividualId>,
    generation: u32,
    evaluations: u64,
    discards: u64,
    best: Option<IndividualId>,
    events: Vec<Event>,
}

impl RunState {
    pub fn new(config: GAConfig) -> Result<Self, EvolveError> {
        config.validate()?;
        Ok(Self {
            config,
            individuals: Vec::new(),
            population: Vec::new(),
            generation: 0,
            evaluations: 0,
            discards: 0,
            best: None,
            events: Vec::new(),
        })
    }

    /// Rebuilds a run by re-applying its log.
    pub fn replay(config: GAConfig, events: &[Event]) -> Result<Self, EvolveError> {
        let mut state = Self::new(config)?;
        state.events.reserve(events.len());
        for (index, event) in events.iter().enumerate() {
            state
                .commit(event.clone())
                .map_err(|reason| EvolveError::Replay { index, reason })?;
        }
        Ok(state)
    }

    pub fn config(&self) -> &GAConfig {
        &self.config
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn individual(&self, id: IndividualId) -> Option<&Individual> {
        self.individuals.get(id as usize)
    }

    pub fn population_ids(&self) -> &[IndividualId] {
        &self.population
    }

    pub fn population(&self) -> impl Iterator<Item = &Individual> + '_ {
        self.population
            .iter()
            .map(|&id| &self.individuals[id as usize])
    }

    pub fn pending(&self) -> impl Iterator<Item = &Individual> + '_ {
        self.population().filter(|i| !i.is_evaluated())
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    /// Number of fitness values recorded, overrides included.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn discards(&self) -> u64 {
        self.discards
    }

    /// The highest-fitness individual ever evaluated. Ties keep the earlier one.
    pub fn best(&self) -> Option<&Individual> {
        self.best.map(|id| &self.individuals[id as usize])
    }

    pub fn best_fitness(&self) -> Option<f64> {
        self.best().and_then(|i| i.fitness)
    }

    pub fn mean_fitness(&self) -> Option<f64> {
        let (sum, n) = self
            .population()
            .filter_map(|i| i.fitness)
            .fold((0.0, 0usize), |(s, n), f| (s + f, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn next_id(&self) -> IndividualId {
        self.individuals.len() as IndividualId
    }

    /// Earlier outcome of a request token, if it was used before.
    pub fn token_event(&self, token: &str) -> Option<&Event> {
        self.events.iter().rev().find(|e| match e {
            Event::Evaluation { meta, .. } => meta.request_token.as_deref() == Some(token),
            Event::Population { request_token, .. } => request_token.as_deref() == Some(token),
            _ => false,
        })
    }

    /// Random stream owned by one individual id.
    pub fn stream(&self, id: IndividualId) -> ChaCha8Rng {
        stream(self.config.rng_seed, id)
    }

    /// Validates and applies one event. On error the state is unchanged.
    pub fn commit(&mut self, event: Event) -> Result<(), String> {
        match &event {
            Event::Birth {
                id,
                generation,
                parent_ids,
                genome,
            } => {
                if *id != self.next_id() {
                    return Err(format!("birth of {id}, expected id {}", self.next_id()));
                }
                if let Some(p) = parent_ids.iter().find(|&&p| p >= *id) {
                    return Err(format!("parent {p} of {id} does not exist"));
                }
                genome.validate().map_err(|e| e.to_string())?;
                if genome.kind() != self.config.genome_kind {
                    return Err(format!("{id} has a {:?} genome", genome.kind()));
                }
                self.individuals.push(Individual {
                    id: *id,
                    genome: genome.clone(),
                    fitness: None,
                    state: IndividualState::Pending,
                    generation: *generation,
                    parent_ids: parent_ids.clone(),
                });
            }
            Event::Discard { genome, .. } => {
                genome.validate().map_err(|e| e.to_string())?;
                self.discards += 1;
            }
            Event::Evaluation {
                id, fitness, meta, ..
            } => {
                let ind = self
                    .individuals
                    .get(*id as usize)
                    .ok_or_else(|| format!("evaluation of unknown individual {id}"))?;
                if !fitness.is_finite() {
                    return Err(format!("fitness {fitness} of {id} is not finite"));
                }
                if ind.is_evaluated() && !meta.override_previous {
                    return Err(format!("{id} is already evaluated"));
                }
                let was_best = self.best == Some(*id);
                let ind = &mut self.individuals[*id as usize];
                ind.fitness = Some(*fitness);
                ind.state = IndividualState::Evaluated;
                self.evaluations += 1;
                if was_best {
                    self.recompute_best();
                } else if self.best_fitness().is_none_or(|b| *fitness > b) {
                    self.best = Some(*id);
                }
            }
            Event::Replacement { victim, offspring } => {
                let pos = self
                    .population
                    .iter()
                    .position(|p| p == victim)
                    .ok_or_else(|| format!("victim {victim} is not in the population"))?;
                match self.individuals.get(*offspring as usize) {
                    Some(o) if o.is_evaluated() => {}
                    _ => return Err(format!("offspring {offspring} is not evaluated")),
                }
                if self.population.contains(offspring) {
                    return Err(format!("offspring {offspring} is already a member"));
                }
                self.population[pos] = *offspring;
            }
            Event::Population {
                generation,
                members,
                ..
            } => {
                if members.len() != self.config.population_size {
                    return Err(format!(
                        "generation {generation} has {} members, expected {}",
                        members.len(),
                        self.config.population_size
                    ));
                }
                if let Some(m) = members.iter().find(|&&m| m >= self.next_id()) {
                    return Err(format!("member {m} was never born"));
                }
                let mut sorted = members.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != members.len() {
                    return Err("duplicate members".into());
                }
                if !self.population.is_empty() && *generation != self.generation + 1 {
                    return Err(format!(
                        "generation {generation} does not follow {}",
                        self.generation
                    ));
                }
                self.generation = *generation;
                self.population = members.clone();
            }
        }
        self.events.push(event);
        Ok(())
    }

    fn recompute_best(&mut self) {
        self.best = None;
        for ind in &self.individuals {
            if let Some(f) = ind.fitness {
                if self.best_fitness().is_none_or(|b| f > b) {
                    self.best = Some(ind.id);
                }
            }
        }
    }

    fn commit_ok(&mut self, event: Event) {
        if let Err(e) = self.commit(event) {
            panic!("engine produced an invalid event: {e}");
        }
    }

    fn evaluated_members(&self) -> Vec<&Individual> {
        self.population().filter(|i| i.is_evaluated()).collect()
    }
}

pub fn stream(seed: u64, id: IndividualId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Each gene is perturbed with probability `mutation_rate` by a uniform value
/// within its group's step, then clamped to the gene bounds.
pub fn mutate<R: Rng>(genome: &Genome, cfg: &GAConfig, rng: &mut R) -> Genome {
    let mut out = genome.clone();
    for (i, g) in out.genes_mut().iter_mut().enumerate() {
        if rng.gen::<f64>() < cfg.mutation_rate {
            let step = cfg.mutation_step.for_gene(i);
            if step > 0.0 {
                *g += rng.gen_range(-step..=step);
            }
        }
    }
    cfg.clamp(&mut out);
    out
}

/// Every gene is taken from either parent with equal probability.
pub fn uniform_crossover<R: Rng>(a: &Genome, b: &Genome, rng: &mut R) -> Genome {
    let mut out = a.clone();
    for (g, &other) in out.genes_mut().iter_mut().zip(b.genes()) {
        if rng.gen::<bool>() {
            *g = other;
        }
    }
    out
}

/// Adds a uniform value within the seeding range to every gene.
pub fn perturb<R: Rng>(genome: &Genome, cfg: &GAConfig, rng: &mut R) -> Genome {
    let mut out = genome.clone();
    for (i, g) in out.genes_mut().iter_mut().enumerate() {
        let step = cfg.seed_perturbation.for_gene(i);
        if step > 0.0 {
            *g += rng.gen_range(-step..=step);
        }
    }
    cfg.clamp(&mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Best,
    Worst,
}

/// Samples `k` distinct evaluated candidates and returns the fittest (or
/// least fit). Ties are broken uniformly at random.
pub fn tournament_select<'a, R: Rng>(
    candidates: &[&'a Individual],
    k: usize,
    rng: &mut R,
    objective: Objective,
) -> Result<&'a Individual, EvolveError> {
    let evaluated: Vec<&Individual> = candidates
        .iter()
        .copied()
        .filter(|i| i.is_evaluated())
        .collect();
    if k == 0 || evaluated.len() < k {
        return Err(EvolveError::NotEnoughEvaluated {
            needed: k.max(1),
            found: evaluated.len(),
        });
    }
    let drawn = index::sample(rng, evaluated.len(), k);
    let fitness = |i: usize| evaluated[i].fitness.unwrap_or(f64::NAN);
    let mut tied: Vec<usize> = Vec::with_capacity(k);
    for i in drawn.iter() {
        let better = match tied.first() {
            None => true,
            Some(&t) => match objective {
                Objective::Best => fitness(i) > fitness(t),
                Objective::Worst => fitness(i) < fitness(t),
            },
        };
        if better {
            tied.clear();
            tied.push(i);
        } else if fitness(i) == fitness(tied[0]) {
            tied.push(i);
        }
    }
    let pick = if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.gen_range(0..tied.len())]
    };
    Ok(evaluated[pick])
}

/// Fills an empty run with genomes drawn uniformly within the gene bounds.
pub fn init_uniform(state: &mut RunState) -> Result<(), EvolveError> {
    if !state.population.is_empty() {
        return Err(EvolveError::Config("population already initialized".into()));
    }
    let start = state.next_id();
    for k in 0..state.config.population_size as u64 {
        let id = start + k;
        let mut rng = state.stream(id);
        let genes: Vec<f64> = state
            .config
            .gene_bounds
            .iter()
            .map(|&[lo, hi]| if lo < hi { rng.gen_range(lo..=hi) } else { lo })
            .collect();
        let genome = Genome::from_genes(&genes).map_err(|e| EvolveError::Config(e.to_string()))?;
        state.commit_ok(Event::Birth {
            id,
            generation: 0,
            parent_ids: Vec::new(),
            genome,
        });
    }
    let members = (start..start + state.config.population_size as u64).collect();
    state.commit_ok(Event::Population {
        generation: 0,
        members,
        request_token: None,
    });
    Ok(())
}

/// Draws candidates from `make` until one passes the screen, recording every
/// rejection. The closure receives the attempt number.
fn screened<S: Screen + ?Sized>(
    screen: &S,
    min_active: f64,
    slot: IndividualId,
    mut make: impl FnMut(u32) -> Result<Genome, EvolveError>,
) -> Result<(Genome, Vec<Event>), EvolveError> {
    let mut discards = Vec::new();
    for attempt in 0..MAX_REGENERATIONS {
        let genome = make(attempt)?;
        if min_active <= 0.0 {
            return Ok((genome, discards));
        }
        let active = screen.active_fraction(&genome);
        if active >= min_active {
            return Ok((genome, discards));
        }
        discards.push(Event::Discard {
            slot,
            attempt,
            active_fraction: active,
            genome,
        });
    }
    Err(EvolveError::SeedInfeasible {
        attempts: MAX_REGENERATIONS,
    })
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, U: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    use rayon::prelude::*;
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Sync, U: Send>(items: &[T], _jobs: usize, f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Seeds a run from one genome: the seed itself plus `P - 1` perturbed
/// copies, each screened against `discard_min_active`.
pub fn seed_population<S: Screen + ?Sized>(
    state: &mut RunState,
    seed: &Genome,
    screen: &S,
    jobs: usize,
) -> Result<(), EvolveError> {
    if !state.population.is_empty() {
        return Err(EvolveError::Config("population already initialized".into()));
    }
    seed.validate()
        .map_err(|e| EvolveError::Config(e.to_string()))?;
    let cfg = state.config.clone();
    if seed.kind() != cfg.genome_kind {
        return Err(EvolveError::GenomeMismatch {
            expected: cfg.genome_kind.gene_count(),
            found: seed.genes().len(),
        });
    }
    let start = state.next_id();
    let min_active = cfg.discard_min_active;
    if min_active > 0.0 && screen.active_fraction(seed) < min_active {
        return Err(EvolveError::SeedInfeasible { attempts: 1 });
    }
    let slots: Vec<IndividualId> = (start + 1..start + cfg.population_size as u64).collect();
    let results = par_map(&slots, jobs, |&id| {
        let mut rng = stream(cfg.rng_seed, id);
        screened(screen, min_active, id, |_| {
            Ok(perturb(seed, &cfg, &mut rng))
        })
    });
    let results: Vec<(Genome, Vec<Event>)> = results.into_iter().collect::<Result<_, _>>()?;

    state.commit_ok(Event::Birth {
        id: start,
        generation: 0,
        parent_ids: Vec::new(),
        genome: seed.clone(),
    });
    for (&id, (genome, discards)) in slots.iter().zip(results) {
        for d in discards {
            state.commit_ok(d);
        }
        state.commit_ok(Event::Birth {
            id,
            generation: 0,
            parent_ids: Vec::new(),
            genome,
        });
    }
    state.commit_ok(Event::Population {
        generation: 0,
        members: (start..start + cfg.population_size as u64).collect(),
        request_token: None,
    });
    Ok(())
}

/// Produces one offspring genome for `id`: best-of-k parent (and a second
/// parent when crossover fires), then mutation.
fn breed(
    cfg: &GAConfig,
    members: &[&Individual],
    rng: &mut ChaCha8Rng,
) -> Result<(Genome, Vec<IndividualId>), EvolveError> {
    let a = tournament_select(members, cfg.tournament_size, rng, Objective::Best)?;
    let mut parents = vec![a.id];
    let mut genome = a.genome.clone();
    if cfg.crossover_rate > 0.0 && rng.gen::<f64>() < cfg.crossover_rate {
        let b = tournament_select(members, cfg.tournament_size, rng, Objective::Best)?;
        parents.push(b.id);
        genome = uniform_crossover(&genome, &b.genome, rng);
    }
    Ok((mutate(&genome, cfg, rng), parents))
}

fn require_complete(state: &RunState) -> Result<(), EvolveError> {
    let pending = state.pending().count();
    if state.population.is_empty() || pending > 0 {
        return Err(EvolveError::GenerationIncomplete {
            generation: state.generation,
            pending: if state.population.is_empty() {
                state.config.population_size
            } else {
                pending
            },
        });
    }
    Ok(())
}

/// One steady-state step: breed one offspring, evaluate it, and let it
/// replace the loser of a worst-of-k tournament. Returns the offspring id.
pub fn step_steady_state<E: Evaluator + ?Sized>(
    state: &mut RunState,
    evaluator: &E,
) -> Result<IndividualId, EvolveError> {
    if state.config.mode != LoopMode::SteadyState {
        return Err(EvolveError::WrongMode {
            expected: LoopMode::SteadyState,
        });
    }
    require_complete(state)?;
    let id = state.next_id();
    let mut rng = state.stream(id);
    let members = state.evaluated_members();
    let (genome, parent_ids) = breed(&state.config, &members, &mut rng)?;
    let victim = tournament_select(
        &members,
        state.config.tournament_size,
        &mut rng,
        Objective::Worst,
    )?
    .id;
    let generation = parent_ids
        .iter()
        .map(|&p| state.individuals[p as usize].generation + 1)
        .max()
        .unwrap_or(0);
    let fitness = evaluator.evaluate(&genome)?;
    state.commit_ok(Event::Birth {
        id,
        generation,
        parent_ids,
        genome,
    });
    state.commit_ok(Event::Evaluation {
        id,
        fitness,
        units: evaluator.units(),
        meta: EvaluationMeta::default(),
    });
    state.commit_ok(Event::Replacement {
        victim,
        offspring: id,
    });
    Ok(id)
}

/// Forms the next generation: the elites carried over, then offspring from
/// best-of-k tournaments and mutation. Offspring failing the active-voxel
/// screen are discarded and regenerated. New offspring are left pending.
pub fn advance_generation<S: Screen + ?Sized>(
    state: &mut RunState,
    screen: &S,
    jobs: usize,
    request_token: Option<String>,
) -> Result<u32, EvolveError> {
    if state.config.mode != LoopMode::Generational {
        return Err(EvolveError::WrongMode {
            expected: LoopMode::Generational,
        });
    }
    require_complete(state)?;
    let cfg = state.config.clone();
    let next_generation = state.generation + 1;

    let mut ranked: Vec<&Individual> = state.population().collect();
    ranked.sort_by(|a, b| {
        b.fitness
            .partial_cmp(&a.fitness)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.id.cmp(&b.id))
    });
    let elites: Vec<(IndividualId, Genome)> = ranked[..cfg.elitism_count]
        .iter()
        .map(|i| (i.id, i.genome.clone()))
        .collect();

    let start = state.next_id();
    let copies = if cfg.re_evaluate_elite {
        elites.len()
    } else {
        0
    };
    let offspring_start = start + copies as u64;
    let slots: Vec<IndividualId> =
        (offspring_start..offspring_start + (cfg.population_size - elites.len()) as u64).collect();
    let members = state.evaluated_members();
    let results = par_map(&slots, jobs, |&id| {
        let mut rng = stream(cfg.rng_seed, id);
        let mut parents = Vec::new();
        let (genome, discards) = screened(screen, cfg.discard_min_active, id, |_| {
            let (g, p) = breed(&cfg, &members, &mut rng)?;
            parents = p;
            Ok(g)
        })?;
        Ok::<_, EvolveError>((genome, parents, discards))
    });
    let results: Vec<_> = results.into_iter().collect::<Result<_, _>>()?;

    let mut next_members = Vec::with_capacity(cfg.population_size);
    for (k, (elite, genome)) in elites.into_iter().enumerate() {
        if cfg.re_evaluate_elite {
            let id = start + k as u64;
            state.commit_ok(Event::Birth {
                id,
                generation: next_generation,
                parent_ids: vec![elite],
                genome,
            });
            next_members.push(id);
        } else {
            next_members.push(elite);
        }
    }
    for (&id, (genome, parent_ids, discards)) in slots.iter().zip(results) {
        for d in discards {
            state.commit_ok(d);
        }
        state.commit_ok(Event::Birth {
            id,
            generation: next_generation,
            parent_ids,
            genome,
        });
        next_members.push(id);
    }
    state.commit_ok(Event::Population {
        generation: next_generation,
        members: next_members,
        request_token,
    });
    Ok(next_generation)
}

/// Evaluates every pending member (possibly in parallel) and commits the
/// results in id order. Nothing is committed if any evaluation fails.
pub fn evaluate_pending<E: Evaluator + ?Sized>(
    state: &mut RunState,
    evaluator: &E,
    jobs: usize,
    mut on_commit: impl FnMut(&RunState),
) -> Result<usize, EvolveError> {
    let mut pending: Vec<(IndividualId, Genome)> =
        state.pending().map(|i| (i.id, i.genome.clone())).collect();
    pending.sort_by_key(|p| p.0);
    let results = par_map(&pending, jobs, |(_, g)| evaluator.evaluate(g));
    let results: Vec<f64> = results.into_iter().collect::<Result<_, _>>()?;
    for ((id, _), fitness) in pending.iter().zip(&results) {
        state.commit_ok(Event::Evaluation {
            id: *id,
            fitness: *fitness,
            units: evaluator.units(),
            meta: EvaluationMeta::default(),
        });
        on_commit(state);
    }
    Ok(results.len())
}

/// Generational step with an automated evaluator: advance, then evaluate the
/// new pending members.
pub fn step_generational<E: Evaluator + ?Sized, S: Screen + ?Sized>(
    state: &mut RunState,
    evaluator: &E,
    screen: &S,
    jobs: usize,
) -> Result<u32, EvolveError> {
    let generation = advance_generation(state, screen, jobs, None)?;
    evaluate_pending(state, evaluator, jobs, |_| {})?;
    Ok(generation)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub evaluations: u64,
    pub best_fitness: f64,
    pub mean_fitness: f64,
}

impl ConvergencePoint {
    fn of(state: &RunState) -> Self {
        Self {
            evaluations: state.evaluations(),
            best_fitness: state.best_fitness().unwrap_or(f64::NAN),
            mean_fitness: state.mean_fitness().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetRunLimits {
    /// Total evaluations, the initial population included.
    pub budget: u64,
    /// Stop as soon as the best fitness reaches this value.
    pub stop_at: Option<f64>,
    pub jobs: usize,
}

/// Runs a steady-state search until the budget or the stop threshold is
/// reached. Initializes the population uniformly when the run is empty.
/// Returns one convergence point per evaluation.
pub fn run_target<E: Evaluator + ?Sized>(
    state: &mut RunState,
    evaluator: &E,
    limits: TargetRunLimits,
) -> Result<Vec<ConvergencePoint>, EvolveError> {
    let mut curve = Vec::new();
    if state.population.is_empty() {
        init_uniform(state)?;
    }
    let done = |s: &RunState| {
        s.evaluations() >= limits.budget
            || matches!((limits.stop_at, s.best_fitness()), (Some(t), Some(b)) if b >= t)
    };
    if state.pending().next().is_some() {
        evaluate_pending(state, evaluator, limits.jobs, |s| {
            curve.push(ConvergencePoint::of(s))
        })?;
    }
    while !done(state) {
        step_steady_state(state, evaluator)?;
        curve.push(ConvergencePoint::of(state));
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub id: IndividualId,
    pub parent_ids: Vec<IndividualId>,
    pub fitness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub generation: u32,
    pub members: Vec<LineageEntry>,
    pub evaluated: usize,
    pub best_fitness: Option<f64>,
    pub mean_fitness: Option<f64>,
    pub best_id: Option<IndividualId>,
    /// Best fitness over every individual evaluated up to this generation.
    pub best_so_far: Option<f64>,
    pub discards: u64,
}

/// Per-generation statistics, computed from the event log alone.
pub fn history_from_events(events: &[Event]) -> Vec<GenerationSummary> {
    let mut parents: Vec<Vec<IndividualId>> = Vec::new();
    let mut fitness: Vec<Option<f64>> = Vec::new();
    // (generation, members, discards since the previous boundary)
    let mut generations: Vec<(u32, Vec<IndividualId>, u64)> = Vec::new();
    let mut best_so_far: Vec<Option<f64>> = Vec::new();
    let mut running_best: Option<f64> = None;
    let mut discards = 0;
    for e in events {
        match e {
            Event::Birth { id, parent_ids, .. } => {
                let i = *id as usize;
                if parents.len() <= i {
                    parents.resize(i + 1, Vec::new());
                    fitness.resize(i + 1, None);
                }
                parents[i] = parent_ids.clone();
            }
            Event::Evaluation { id, fitness: f, .. } => {
                if let Some(slot) = fitness.get_mut(*id as usize) {
                    *slot = Some(*f);
                }
            }
            Event::Discard { .. } => discards += 1,
            Event::Replacement { victim, offspring } => {
                if let Some((_, members, _)) = generations.last_mut() {
                    if let Some(pos) = members.iter().position(|m| m == victim) {
                        members[pos] = *offspring;
                    }
                }
            }
            Event::Population {
                generation,
                members,
                ..
            } => {
                if !generations.is_empty() {
                    best_so_far.push(running_best);
                }
                generations.push((*generation, members.clone(), discards));
                discards = 0;
            }
        }
        if let Event::Evaluation { fitness: f, .. } = e {
            running_best = Some(running_best.map_or(*f, |b: f64| b.max(*f)));
        }
    }
    if !generations.is_empty() {
        best_so_far.push(running_best);
    }
    generations
        .into_iter()
        .zip(best_so_far)
        .map(|((generation, members, discards), best_so_far)| {
            let members: Vec<LineageEntry> = members
                .iter()
                .map(|&id| LineageEntry {
                    id,
                    parent_ids: parents.get(id as usize).cloned().unwrap_or_default(),
                    fitness: fitness.get(id as usize).copied().flatten(),
                })
                .collect();
            let scored: Vec<(IndividualId, f64)> = members
                .iter()
                .filter_map(|m| m.fitness.map(|f| (m.id, f)))
                .collect();
            let best = scored
                .iter()
                .copied()
                .reduce(|a, b| if b.1 > a.1 { b } else { a });
            let mean = (!scored.is_empty())
                .then(|| scored.iter().map(|s| s.1).sum::<f64>() / scored.len() as f64);
            GenerationSummary {
                generation,
                evaluated: scored.len(),
                best_fitness: best.map(|b| b.1),
                best_id: best.map(|b| b.0),
                mean_fitness: mean,
                best_so_far,
                discards,
                members,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitness::{AcceptAll, Mock};
    use crate::geometry::BasicGenome;

    fn evaluated(id: u64, fitness: f64) -> Individual {
        Individual {
            id,
            genome: Genome::Basic(BasicGenome::new([1.0; 8])),
            fitness: Some(fitness),
            state: IndividualState::Evaluated,
            generation: 0,
            parent_ids: vec![],
        }
    }

    #[test]
    fn zero_rate_or_zero_step_leaves_genome() {
        let g = Genome::Basic(BasicGenome::new([3.0, 7.0, 1.0, 2.0, 9.0, 4.0, 5.0, 6.0]));
        let mut cfg = GAConfig::target();
        cfg.mutation_rate = 0.0;
        let mut rng = stream(1, 1);
        assert_eq!(mutate(&g, &cfg, &mut rng), g);
        cfg.mutation_rate = 1.0;
        cfg.mutation_step = GeneSteps {
            basic: 0.0,
            extended: 0.0,
        };
        assert_eq!(mutate(&g, &cfg, &mut rng), g);
    }

    #[test]
    fn mutation_respects_bounds() {
        let g = Genome::Basic(BasicGenome::new([
            0.0, 50.0, 0.0, 50.0, 0.0, 50.0, 0.0, 50.0,
        ]));
        let mut cfg = GAConfig::target();
        cfg.mutation_rate = 1.0;
        let mut rng = stream(2, 0);
        for _ in 0..1000 {
            assert!(cfg.in_bounds(&mutate(&g, &cfg, &mut rng)));
        }
    }

    #[test]
    fn full_tournament_returns_best_and_worst() {
        let pop: Vec<Individual> = [0.3, 0.9, 0.1, 0.5]
            .iter()
            .enumerate()
            .map(|(i, &f)| evaluated(i as u64, f))
            .collect();
        let refs: Vec<&Individual> = pop.iter().collect();
        let mut rng = stream(3, 0);
        for _ in 0..50 {
            assert_eq!(
                tournament_select(&refs, 4, &mut rng, Objective::Best)
                    .unwrap()
                    .id,
                1
            );
            assert_eq!(
                tournament_select(&refs, 4, &mut rng, Objective::Worst)
                    .unwrap()
                    .id,
                2
            );
        }
        assert_eq!(
            tournament_select(&refs, 5, &mut rng, Objective::Best).unwrap_err(),
            EvolveError::NotEnoughEvaluated {
                needed: 5,
                found: 4
            }
        );
    }

    #[test]
    fn steady_state_keeps_size_and_logs() {
        let mut cfg = GAConfig::target();
        cfg.population_size = 10;
        let mut state = RunState::new(cfg.clone()).unwrap();
        let curve = run_target(
            &mut state,
            &Mock,
            TargetRunLimits {
                budget: 60,
                stop_at: None,
                jobs: 1,
            },
        )
        .unwrap();
        assert_eq!(curve.len(), 60);
        assert_eq!(state.population_ids().len(), 10);
        assert_eq!(state.evaluations(), 60);
        assert!(curve
            .windows(2)
            .all(|w| w[0].best_fitness <= w[1].best_fitness));
        let replayed = RunState::replay(cfg, state.events()).unwrap();
        assert_eq!(replayed, state);
    }

    #[test]
    fn generational_elite_survives() {
        let mut cfg = GAConfig::vawt(GenomeKind::Basic);
        cfg.rng_seed = 9;
        let mut state = RunState::new(cfg).unwrap();
        let seed = crate::targets::builtin("vawt_star_seed").unwrap().genome;
        seed_population(&mut state, &seed, &AcceptAll, 1).unwrap();
        assert_eq!(state.individual(0).unwrap().genome, seed);
        assert!(matches!(
            advance_generation(&mut state, &AcceptAll, 1, None),
            Err(EvolveError::GenerationIncomplete { pending: 20, .. })
        ));
        evaluate_pending(&mut state, &Mock, 1, |_| {}).unwrap();
        let best = state.best().unwrap().id;
        step_generational(&mut state, &Mock, &AcceptAll, 1).unwrap();
        assert_eq!(state.generation(), 1);
        assert!(state.population_ids().contains(&best));
        assert_eq!(state.population_ids().len(), 20);
        let history = history_from_events(state.events());
        assert_eq!(history.len(), 2);
        assert!(history[1].best_fitness >= history[0].best_fitness);
    }

    #[test]
    fn replay_rejects_tampered_log() {
        let mut cfg = GAConfig::target();
        cfg.population_size = 4;
        let mut state = RunState::new(cfg.clone()).unwrap();
        init_uniform(&mut state).unwrap();
        let mut events = state.events().to_vec();
        events.push(Event::Replacement {
            victim: 0,
            offspring: 3,
        });
        assert!(matches!(
            RunState::replay(cfg, &events),
            Err(EvolveError::Replay { index: 5, .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = GAConfig::target();
        cfg.tournament_size = 201;
        assert!(cfg.validate().is_err());
        let mut cfg = GAConfig::vawt(GenomeKind::Extended);
        assert_eq!(cfg.gene_bounds.len(), 16);
        cfg.validate().unwrap();
        cfg.gene_bounds.pop();
        assert!(cfg.validate().is_err());
        let over: ConfigOverrides =
            serde_json::from_str(r#"{"population_size": 30, "rng_seed": 4}"#).unwrap();
        let applied = over.apply(GAConfig::vawt(GenomeKind::Basic)).unwrap();
        assert_eq!((applied.population_size, applied.rng_seed), (30, 4));
        assert!(serde_json::from_str::<ConfigOverrides>(r#"{"populaton": 3}"#).is_err());
    }
}
