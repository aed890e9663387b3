//! Statistical and reproducibility checks of the evolutionary engine.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use supershape_core::evolve::*;
use supershape_core::fitness::{evaluate_mock, AcceptAll, Mock, Screen, TargetMatch, VoxelScreen};
use supershape_core::targets::builtin;
use supershape_core::*;

fn individual(id: u64, fitness: f64) -> Individual {
    Individual {
        id,
        genome: Genome::Basic(BasicGenome::new([1.0; 8])),
        fitness: Some(fitness),
        state: IndividualState::Evaluated,
        generation: 0,
        parent_ids: vec![],
    }
}

/// Win probability of each member over every k-subset, ties shared equally.
fn enumerate(fitness: &[f64], k: usize, objective: Objective) -> Vec<f64> {
    let n = fitness.len();
    let mut p = vec![0.0; n];
    let mut subsets = 0usize;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        subsets += 1;
        let members: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let pick = |a: f64, b: f64| match objective {
            Objective::Best => a.max(b),
            Objective::Worst => a.min(b),
        };
        let target = members.iter().map(|&i| fitness[i]).reduce(pick).unwrap();
        let winners: Vec<usize> = members.into_iter().filter(|&i| fitness[i] == target).collect();
        for &w in &winners {
            p[w] += 1.0 / winners.len() as f64;
        }
    }
    p.iter().map(|x| x / subsets as f64).collect()
}

fn tournament_counts(fitness: &[f64], k: usize, objective: Objective, trials: usize, seed: u64) -> Vec<usize> {
    let pop: Vec<Individual> = fitness.iter().enumerate().map(|(i, &f)| individual(i as u64, f)).collect();
    let refs: Vec<&Individual> = pop.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0; fitness.len()];
    for _ in 0..trials {
        counts[tournament_select(&refs, k, &mut rng, objective).unwrap().id as usize] += 1;
    }
    counts
}

fn assert_matches_enumeration(fitness: &[f64], k: usize, objective: Objective, seed: u64) {
    let trials = 100_000;
    let expected = enumerate(fitness, k, objective);
    let counts = tournament_counts(fitness, k, objective, trials, seed);
    let mut chi2 = 0.0;
    let mut cells = 0;
    for (&c, &p) in counts.iter().zip(&expected) {
        if p == 0.0 {
            assert_eq!(c, 0, "{fitness:?} k={k}: impossible winner drawn");
            continue;
        }
        let e = p * trials as f64;
        chi2 += (c as f64 - e).powi(2) / e;
        cells += 1;
    }
    if cells > 1 {
        let critical = ChiSquared::new((cells - 1) as f64).unwrap().inverse_cdf(0.999);
        assert!(chi2 < critical, "{fitness:?} k={k} {objective:?}: chi2 {chi2} >= {critical}");
    }
}

#[test]
fn enumeration_of_three() {
    let f = [0.1, 0.5, 0.9];
    let two = enumerate(&f, 2, Objective::Best);
    assert!((two[2] - 2.0 / 3.0).abs() < 1e-15 && (two[1] - 1.0 / 3.0).abs() < 1e-15 && two[0] == 0.0);
    assert_eq!(enumerate(&f, 3, Objective::Best), vec![0.0, 0.0, 1.0]);
}

#[test]
fn tournaments_match_enumeration() {
    assert_matches_enumeration(&[0.1, 0.5, 0.9], 2, Objective::Best, 1);
    assert_matches_enumeration(&[0.1, 0.5, 0.9], 3, Objective::Best, 2);
    assert_matches_enumeration(&[0.1, 0.5, 0.9], 1, Objective::Best, 3);
    let tied = [0.3, 0.7, 0.7, 0.1, 0.9];
    for k in 1..=5 {
        for (j, objective) in [Objective::Best, Objective::Worst].into_iter().enumerate() {
            assert_matches_enumeration(&tied, k, objective, 10 + 2 * k as u64 + j as u64);
        }
    }
    assert_matches_enumeration(&[0.5, 0.5, 0.5, 0.5], 3, Objective::Best, 40);
}

/// Kolmogorov-Smirnov statistic of `xs` against U(lo, hi).
fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn mutation_deltas_are_uniform_in_step() {
    let mut cfg = GAConfig::vawt(GenomeKind::Extended);
    cfg.mutation_rate = 1.0;
    // Centre of every gene's bounds, so no delta is clamped.
    let centre: Vec<f64> = cfg.gene_bounds.iter().map(|[lo, hi]| (lo + hi) / 2.0).collect();
    let genome = Genome::from_genes(&centre).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut shape, mut extra) = (Vec::new(), Vec::new());
    for _ in 0..3000 {
        let child = mutate(&genome, &cfg, &mut rng);
        for (i, (a, b)) in child.genes().iter().zip(&centre).enumerate() {
            if i < 8 { shape.push(a - b) } else { extra.push(a - b) }
        }
    }
    for (deltas, step) in [(shape, cfg.mutation_step.basic), (extra, cfg.mutation_step.extended)] {
        assert!(deltas.iter().all(|d| d.abs() <= step));
        let n = deltas.len() as f64;
        let d = ks_uniform(deltas, -step, step);
        // Asymptotic critical value at p = 0.001.
        assert!(d < 1.9495 / n.sqrt(), "KS {d} for step {step}");
    }

    // Per-allele rate: each gene mutates independently with probability 0.25.
    let cfg = GAConfig::target();
    let genome = Genome::Basic(BasicGenome::new([25.0; 8]));
    let trials = 20_000;
    let changed: usize = (0..trials)
        .map(|_| mutate(&genome, &cfg, &mut rng).genes().iter().filter(|&&g| g != 25.0).count())
        .sum();
    let n = (trials * 8) as f64;
    let sigma = (n * 0.25 * 0.75).sqrt();
    assert!((changed as f64 - 0.25 * n).abs() < 4.0 * sigma, "{changed} of {n}");
}

fn log(state: &RunState) -> String {
    state.events().iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect()
}

#[test]
fn same_seed_same_log() {
    let tm = TargetMatch::builtin("cube", [50; 3]).unwrap();
    let run = |jobs: usize| {
        let mut cfg = GAConfig::target();
        cfg.population_size = 40;
        cfg.rng_seed = 99;
        let mut state = RunState::new(cfg).unwrap();
        run_target(&mut state, &tm, TargetRunLimits { budget: 300, stop_at: None, jobs }).unwrap();
        state
    };
    let a = run(1);
    let b = run(1);
    assert_eq!(log(&a), log(&b));
    assert_eq!(log(&a), log(&run(4)));
    assert_eq!(a.evaluations(), 300);
    let replayed = RunState::replay(a.config().clone(), a.events()).unwrap();
    assert_eq!(log(&replayed), log(&a));
    assert_eq!(replayed.best_fitness(), a.best_fitness());

    let turbine = |jobs: usize| {
        let mut state = RunState::new(GAConfig::vawt(GenomeKind::Basic)).unwrap();
        let seed = builtin("vawt_star_seed").unwrap().genome;
        let screen = VoxelScreen::vawt();
        seed_population(&mut state, &seed, &screen, jobs).unwrap();
        evaluate_pending(&mut state, &Mock, jobs, |_| {}).unwrap();
        for _ in 0..2 {
            step_generational(&mut state, &Mock, &screen, jobs).unwrap();
        }
        state
    };
    let t = turbine(1);
    assert_eq!(log(&t), log(&turbine(1)));
    assert_eq!(log(&t), log(&turbine(3)));
}

#[test]
fn mock_best_never_drops_over_twenty_generations() {
    let mut state = RunState::new(GAConfig::vawt(GenomeKind::Basic)).unwrap();
    let seed = builtin("vawt_star_seed").unwrap().genome;
    seed_population(&mut state, &seed, &AcceptAll, 1).unwrap();
    evaluate_pending(&mut state, &Mock, 1, |_| {}).unwrap();
    let mut best = state.best_fitness().unwrap();
    for g in 1..=20 {
        let elite = state.best().unwrap().clone();
        assert_eq!(step_generational(&mut state, &Mock, &AcceptAll, 1).unwrap(), g);
        assert_eq!(state.population_ids().len(), 20);
        let carried = state.population().find(|i| i.id == elite.id).expect("elite carried");
        assert_eq!((&carried.genome, carried.fitness), (&elite.genome, elite.fitness));
        assert!(state.population().all(|i| state.config().in_bounds(&i.genome)));
        let now = state.best_fitness().unwrap();
        assert!(now >= best, "generation {g}: {now} < {best}");
        best = now;
    }
    assert!(best > evaluate_mock(&seed));
}

/// Rejects every genome whose first gene exceeds `limit`.
struct FirstGeneBelow(f64);

impl Screen for FirstGeneBelow {
    fn active_fraction(&self, genome: &Genome) -> f64 {
        if genome.genes()[0] > self.0 { 0.0 } else { 0.5 }
    }
}

#[test]
fn seeding_keeps_seed_and_screens_perturbations() {
    let seed = builtin("vawt_star_seed").unwrap().genome;
    let screen = VoxelScreen::vawt();
    let mut state = RunState::new(GAConfig::vawt(GenomeKind::Basic)).unwrap();
    seed_population(&mut state, &seed, &screen, 1).unwrap();
    let members: Vec<&Individual> = state.population().collect();
    assert_eq!(members.len(), 20);
    assert_eq!(members[0].genome, seed);
    for m in &members[1..] {
        for (g, s) in m.genome.genes().iter().zip(seed.genes()) {
            assert!((g - s).abs() <= 5.0);
        }
        assert!(state.config().in_bounds(&m.genome));
        assert!(screen.active_fraction(&m.genome) >= 0.01);
    }

    // Half the perturbations fail the screen; each is logged and replaced.
    let limit = seed.genes()[0];
    let mut state = RunState::new(GAConfig::vawt(GenomeKind::Basic)).unwrap();
    seed_population(&mut state, &seed, &FirstGeneBelow(limit), 1).unwrap();
    assert!(state.population().all(|i| i.genome.genes()[0] <= limit));
    let discards: Vec<&Event> = state.events().iter().filter(|e| matches!(e, Event::Discard { .. })).collect();
    assert!(discards.len() > 5, "{}", discards.len());
    assert_eq!(state.discards(), discards.len() as u64);
    for e in discards {
        let Event::Discard { genome, active_fraction, .. } = e else { unreachable!() };
        assert!(genome.genes()[0] > limit);
        assert_eq!(*active_fraction, 0.0);
    }
    assert_eq!(state.evaluations(), 0);

    let mut state = RunState::new(GAConfig::vawt(GenomeKind::Basic)).unwrap();
    assert!(matches!(
        seed_population(&mut state, &seed, &FirstGeneBelow(-1.0), 1),
        Err(EvolveError::SeedInfeasible { .. })
    ));
}
