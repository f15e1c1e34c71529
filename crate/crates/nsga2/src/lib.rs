//! NSGA-II for discrete genomes.
//!
//! The engine is generic over a [`Problem`] that supplies the genome shape,
//! the per-position gene alphabet, and an evaluation function returning
//! objective values (all minimized) plus a constraint-violation measure.
//! Infeasible solutions are handled with Deb's constraint-domination rule:
//! a feasible solution always dominates an infeasible one, and between two
//! infeasible solutions the smaller violation wins.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A candidate solution: one symbol per gene position.
pub type Genome = Vec<u8>;

#[derive(Debug, thiserror::Error)]
pub enum EvolveError {
    #[error("problem evaluation failed for genome {genome:?} in generation {generation}: {source}")]
    Evaluation {
        generation: usize,
        genome: Genome,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("invalid GA configuration: {0}")]
    Config(String),
}

/// Result of evaluating one genome. All objectives are minimized;
/// `violation` is zero for feasible solutions and positive otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objectives: Vec<f64>,
    pub violation: f64,
}

/// The optimization problem seen by the engine.
///
/// `evaluate` must be safe to call concurrently; the engine merges batch
/// results deterministically by index, so parallel evaluation never changes
/// the outcome.
pub trait Problem: Sync {
    type Error: std::error::Error + Send + Sync + 'static;

    fn genome_length(&self) -> usize;

    /// Allowed symbols for the gene at `position`.
    fn alphabet(&self, position: usize) -> &[u8];

    fn evaluate(&self, genome: &[u8]) -> Result<Evaluation, Self::Error>;

    /// Evaluate one generation's worth of genomes. The default runs the
    /// evaluations through rayon and collects in index order; problems with
    /// order-dependent side effects (e.g. stateful evaluators) can override
    /// this with a sequential loop.
    fn evaluate_batch(&self, genomes: &[Genome]) -> Result<Vec<Evaluation>, Self::Error> {
        genomes.par_iter().map(|g| self.evaluate(g)).collect()
    }
}

/// A fully evaluated population member.
#[derive(Debug, Clone)]
pub struct EvaluatedSolution {
    pub genome: Genome,
    pub objectives: Vec<f64>,
    pub violation: f64,
    /// Front index from the last non-dominated sort (0 = best).
    pub rank: usize,
    /// Crowding distance within its front.
    pub crowding: f64,
}

impl EvaluatedSolution {
    pub fn is_feasible(&self) -> bool {
        self.violation == 0.0
    }
}

/// One line of the evaluation log: every genome the search ever evaluated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub generation: usize,
    pub genome: Genome,
    pub objectives: Vec<f64>,
    pub violation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub initial_population_size: usize,
    /// Total generation count, the seeded initial generation included.
    pub generations: usize,
    pub crossover_prob: f64,
    /// Per-gene mutation probability; `None` means 1/genome_length.
    pub mutation_prob: Option<f64>,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 10,
            initial_population_size: 40,
            generations: 60,
            crossover_prob: 0.9,
            mutation_prob: None,
            seed: 0,
        }
    }
}

/// Output of [`evolve`].
#[derive(Debug, Clone)]
pub struct ParetoSet {
    /// Non-dominated set over every solution the run evaluated, kept in an
    /// elitist archive so front points cannot be lost to crowding truncation.
    /// Feasible solutions only (unless no feasible solution was ever seen),
    /// deduplicated by genome.
    pub front: Vec<EvaluatedSolution>,
    pub log: Vec<LogRecord>,
    pub evaluations: usize,
}

/// Deb's constraint-domination: feasible beats infeasible, smaller violation
/// beats larger, and between feasible solutions ordinary Pareto dominance.
pub fn constrained_dominates(
    a_obj: &[f64],
    a_viol: f64,
    b_obj: &[f64],
    b_viol: f64,
) -> bool {
    let a_feasible = a_viol == 0.0;
    let b_feasible = b_viol == 0.0;
    match (a_feasible, b_feasible) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a_viol < b_viol,
        (true, true) => pareto_dominates(a_obj, b_obj),
    }
}

/// Standard Pareto dominance on minimization objectives: no worse everywhere,
/// strictly better somewhere.
pub fn pareto_dominates(a: &[f64], b: &[f64]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    let mut strictly_better = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly_better = true;
        }
    }
    strictly_better
}

/// Fast non-dominated sort. Returns the fronts as index lists into
/// `solutions` and stamps each solution's `rank`.
pub fn non_dominated_sort(solutions: &mut [EvaluatedSolution]) -> Vec<Vec<usize>> {
    let n = solutions.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    let mut fronts: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();

    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if constrained_dominates(
                &solutions[i].objectives,
                solutions[i].violation,
                &solutions[j].objectives,
                solutions[j].violation,
            ) {
                dominated_by[i].push(j);
            } else if constrained_dominates(
                &solutions[j].objectives,
                solutions[j].violation,
                &solutions[i].objectives,
                solutions[i].violation,
            ) {
                domination_count[i] += 1;
            }
        }
        if domination_count[i] == 0 {
            current.push(i);
        }
    }

    while !current.is_empty() {
        let rank = fronts.len();
        for &i in &current {
            solutions[i].rank = rank;
        }
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                domination_count[j] -= 1;
                if domination_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        fronts.push(std::mem::take(&mut current));
        current = next;
    }
    fronts
}

/// Crowding distance for one front, aligned with `front`'s order. Boundary
/// solutions per objective get infinity; interior solutions accumulate the
/// neighbor gap normalized by the objective's range.
pub fn crowding_distance(solutions: &[EvaluatedSolution], front: &[usize]) -> Vec<f64> {
    let len = front.len();
    let mut distance = vec![0.0f64; len];
    if len == 0 {
        return distance;
    }
    let n_obj = solutions[front[0]].objectives.len();
    // positions into `front`, re-sorted per objective
    let mut order: Vec<usize> = (0..len).collect();
    for m in 0..n_obj {
        order.sort_by(|&a, &b| {
            solutions[front[a]].objectives[m]
                .partial_cmp(&solutions[front[b]].objectives[m])
                .expect("objective values must not be NaN")
        });
        distance[order[0]] = f64::INFINITY;
        distance[order[len - 1]] = f64::INFINITY;
        let min = solutions[front[order[0]]].objectives[m];
        let max = solutions[front[order[len - 1]]].objectives[m];
        if max > min {
            for k in 1..len.saturating_sub(1) {
                let prev = solutions[front[order[k - 1]]].objectives[m];
                let next = solutions[front[order[k + 1]]].objectives[m];
                distance[order[k]] += (next - prev) / (max - min);
            }
        }
    }
    distance
}

/// Insert one evaluated solution into the archive of mutually non-dominated
/// solutions. A repeat of an already archived genome replaces the stored
/// evaluation (evaluators with external state may score the same genome
/// differently on a later visit).
fn archive_insert(archive: &mut Vec<EvaluatedSolution>, candidate: &EvaluatedSolution) {
    if let Some(pos) = archive.iter().position(|s| s.genome == candidate.genome) {
        archive.remove(pos);
    }
    let beaten = archive.iter().any(|s| {
        constrained_dominates(
            &s.objectives,
            s.violation,
            &candidate.objectives,
            candidate.violation,
        )
    });
    if beaten {
        return;
    }
    archive.retain(|s| {
        !constrained_dominates(
            &candidate.objectives,
            candidate.violation,
            &s.objectives,
            s.violation,
        )
    });
    archive.push(candidate.clone());
}

/// Run the full NSGA-II loop: seeded initial population, then generations of
/// binary-tournament mating, uniform crossover, random-reset mutation, and
/// (mu+lambda) survival by rank and crowding. The returned front is the
/// archive of all non-dominated evaluations, not the final population's
/// front 0: survival truncation may drop front points once the population
/// fills with duplicates, and the archive keeps them.
pub fn evolve<P: Problem>(problem: &P, cfg: &GaConfig) -> Result<ParetoSet, EvolveError> {
    if cfg.population_size < 2 {
        return Err(EvolveError::Config(
            "population_size must be at least 2".into(),
        ));
    }
    if cfg.generations < 1 {
        return Err(EvolveError::Config("generations must be at least 1".into()));
    }
    let genome_len = problem.genome_length();
    if genome_len == 0 {
        return Err(EvolveError::Config("genome length must be positive".into()));
    }
    for pos in 0..genome_len {
        if problem.alphabet(pos).is_empty() {
            return Err(EvolveError::Config(format!(
                "empty alphabet at gene position {pos}"
            )));
        }
    }
    let mutation_prob = cfg
        .mutation_prob
        .unwrap_or(1.0 / genome_len as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log: Vec<LogRecord> = Vec::new();
    let mut evaluations = 0usize;
    let mut archive: Vec<EvaluatedSolution> = Vec::new();

    // generation 1: the enlarged initial population
    let initial: Vec<Genome> = (0..cfg.initial_population_size)
        .map(|_| random_genome(problem, genome_len, &mut rng))
        .collect();
    let mut population = evaluate_into_solutions(problem, &initial, 1, &mut log)?;
    evaluations += population.len();
    for s in &population {
        archive_insert(&mut archive, s);
    }
    survive(&mut population, cfg.population_size);

    for generation in 2..=cfg.generations {
        let offspring = make_offspring(
            problem,
            &population,
            cfg.population_size,
            cfg.crossover_prob,
            mutation_prob,
            &mut rng,
        );
        let mut evaluated =
            evaluate_into_solutions(problem, &offspring, generation, &mut log)?;
        evaluations += evaluated.len();
        for s in &evaluated {
            archive_insert(&mut archive, s);
        }
        population.append(&mut evaluated);
        survive(&mut population, cfg.population_size);
    }

    // once any feasible solution enters, constraint-domination evicts every
    // infeasible one, so the archive is all-feasible exactly when possible
    let mut front = archive;
    let indices: Vec<usize> = (0..front.len()).collect();
    let crowd = crowding_distance(&front, &indices);
    for (s, d) in front.iter_mut().zip(crowd) {
        s.rank = 0;
        s.crowding = d;
    }

    Ok(ParetoSet {
        front,
        log,
        evaluations,
    })
}

fn random_genome<P: Problem>(problem: &P, len: usize, rng: &mut ChaCha8Rng) -> Genome {
    (0..len)
        .map(|pos| {
            let alphabet = problem.alphabet(pos);
            alphabet[rng.gen_range(0..alphabet.len())]
        })
        .collect()
}

fn evaluate_into_solutions<P: Problem>(
    problem: &P,
    genomes: &[Genome],
    generation: usize,
    log: &mut Vec<LogRecord>,
) -> Result<Vec<EvaluatedSolution>, EvolveError> {
    let evals = problem
        .evaluate_batch(genomes)
        .map_err(|e| EvolveError::Evaluation {
            generation,
            genome: genomes.first().cloned().unwrap_or_default(),
            source: Box::new(e),
        })?;
    assert_eq!(evals.len(), genomes.len(), "batch evaluation lost results");
    let solutions: Vec<EvaluatedSolution> = genomes
        .iter()
        .zip(evals)
        .map(|(g, e)| EvaluatedSolution {
            genome: g.clone(),
            objectives: e.objectives,
            violation: e.violation,
            rank: 0,
            crowding: 0.0,
        })
        .collect();
    log.extend(solutions.iter().map(|s| LogRecord {
        generation,
        genome: s.genome.clone(),
        objectives: s.objectives.clone(),
        violation: s.violation,
    }));
    Ok(solutions)
}

/// (mu+lambda) survival: refill the population front by front, breaking the
/// last front by descending crowding distance.
fn survive(population: &mut Vec<EvaluatedSolution>, target: usize) {
    if population.len() <= target {
        let fronts = non_dominated_sort(population);
        for f in &fronts {
            let d = crowding_distance(population, f);
            for (k, &i) in f.iter().enumerate() {
                population[i].crowding = d[k];
            }
        }
        return;
    }
    let fronts = non_dominated_sort(population);
    let mut survivors: Vec<EvaluatedSolution> = Vec::with_capacity(target);
    for f in &fronts {
        let d = crowding_distance(population, f);
        let mut members: Vec<(usize, f64)> =
            f.iter().copied().zip(d.iter().copied()).collect();
        if survivors.len() + members.len() <= target {
            for (i, crowd) in members {
                let mut s = population[i].clone();
                s.crowding = crowd;
                survivors.push(s);
            }
        } else {
            // stable sort keeps index order among equal crowding values
            members.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("crowding is never NaN"));
            for (i, crowd) in members.into_iter().take(target - survivors.len()) {
                let mut s = population[i].clone();
                s.crowding = crowd;
                survivors.push(s);
            }
        }
        if survivors.len() == target {
            break;
        }
    }
    *population = survivors;
}

fn make_offspring<P: Problem>(
    problem: &P,
    population: &[EvaluatedSolution],
    count: usize,
    crossover_prob: f64,
    mutation_prob: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Genome> {
    let mut offspring = Vec::with_capacity(count + 1);
    while offspring.len() < count {
        let a = tournament(population, rng);
        let b = tournament(population, rng);
        let (mut c1, mut c2) = if rng.gen_bool(crossover_prob.clamp(0.0, 1.0)) {
            uniform_crossover(&population[a].genome, &population[b].genome, rng)
        } else {
            (population[a].genome.clone(), population[b].genome.clone())
        };
        mutate(problem, &mut c1, mutation_prob, rng);
        mutate(problem, &mut c2, mutation_prob, rng);
        offspring.push(c1);
        offspring.push(c2);
    }
    offspring.truncate(count);
    offspring
}

/// Binary tournament on (rank, crowding); the first contestant wins ties.
fn tournament(population: &[EvaluatedSolution], rng: &mut ChaCha8Rng) -> usize {
    let a = rng.gen_range(0..population.len());
    let b = rng.gen_range(0..population.len());
    let (sa, sb) = (&population[a], &population[b]);
    if sb.rank < sa.rank || (sb.rank == sa.rank && sb.crowding > sa.crowding) {
        b
    } else {
        a
    }
}

fn uniform_crossover(a: &[u8], b: &[u8], rng: &mut ChaCha8Rng) -> (Genome, Genome) {
    let mut c1 = Vec::with_capacity(a.len());
    let mut c2 = Vec::with_capacity(a.len());
    for (&ga, &gb) in a.iter().zip(b) {
        if rng.gen_bool(0.5) {
            c1.push(ga);
            c2.push(gb);
        } else {
            c1.push(gb);
            c2.push(ga);
        }
    }
    (c1, c2)
}

/// Random-reset mutation: each gene flips to a different alphabet symbol
/// with probability `prob`.
fn mutate<P: Problem>(problem: &P, genome: &mut Genome, prob: f64, rng: &mut ChaCha8Rng) {
    for (pos, gene) in genome.iter_mut().enumerate() {
        if rng.gen_bool(prob.clamp(0.0, 1.0)) {
            let alphabet = problem.alphabet(pos);
            let others: Vec<u8> = alphabet.iter().copied().filter(|&s| s != *gene).collect();
            if !others.is_empty() {
                *gene = others[rng.gen_range(0..others.len())];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sol(objectives: Vec<f64>, violation: f64) -> EvaluatedSolution {
        EvaluatedSolution {
            genome: vec![],
            objectives,
            violation,
            rank: 0,
            crowding: 0.0,
        }
    }

    #[test]
    fn single_solution_is_one_front() {
        let mut s = vec![sol(vec![1.0, 2.0], 0.0)];
        let fronts = non_dominated_sort(&mut s);
        assert_eq!(fronts, vec![vec![0]]);
        assert_eq!(s[0].rank, 0);
    }

    #[test]
    fn strict_dominance_splits_fronts() {
        let mut s = vec![sol(vec![1.0, 1.0], 0.0), sol(vec![2.0, 2.0], 0.0)];
        let fronts = non_dominated_sort(&mut s);
        assert_eq!(fronts, vec![vec![0], vec![1]]);
    }

    #[test]
    fn feasible_dominates_infeasible_regardless_of_objectives() {
        let mut s = vec![sol(vec![100.0, 100.0], 0.0), sol(vec![0.0, 0.0], 0.5)];
        let fronts = non_dominated_sort(&mut s);
        assert_eq!(fronts, vec![vec![0], vec![1]]);
    }

    #[test]
    fn smaller_violation_wins_between_infeasible() {
        assert!(constrained_dominates(&[5.0], 0.1, &[1.0], 0.2));
        assert!(!constrained_dominates(&[1.0], 0.2, &[5.0], 0.1));
    }

    #[test]
    fn crowding_boundary_pair_is_infinite() {
        let s = vec![sol(vec![0.0, 1.0], 0.0), sol(vec![1.0, 0.0], 0.0)];
        let d = crowding_distance(&s, &[0, 1]);
        assert!(d[0].is_infinite() && d[1].is_infinite());
    }

    #[test]
    fn crowding_middle_of_three_evenly_spaced_is_two() {
        let s = vec![
            sol(vec![0.0, 2.0], 0.0),
            sol(vec![1.0, 1.0], 0.0),
            sol(vec![2.0, 0.0], 0.0),
        ];
        let d = crowding_distance(&s, &[0, 1, 2]);
        assert_eq!(d[1], 2.0);
        assert!(d[0].is_infinite() && d[2].is_infinite());
    }

    #[test]
    fn crowding_identical_interior_points_are_zero() {
        let s = vec![
            sol(vec![0.0, 0.0], 0.0),
            sol(vec![0.0, 0.0], 0.0),
            sol(vec![0.0, 0.0], 0.0),
        ];
        let d = crowding_distance(&s, &[0, 1, 2]);
        // degenerate range: boundaries still get infinity, interiors zero
        assert_eq!(d[1], 0.0);
    }
}
