//! Iteration 0 placement and the asynchronous relocation loop.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::choice::{choose_mode, housing_score_terms, shannon_diversity, ModeEvaluation};
use crate::error::{Error, Result};
use crate::geodata::Dwelling;
use crate::population::{available_modes, Worker};
use crate::rng;
use crate::scenario::{Intervention, Model};

/// A worker together with its current housing and commute choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    #[serde(flatten)]
    pub worker: Worker,
    /// Index into `Model::units`.
    pub unit: usize,
    pub living_place: Dwelling,
    pub possible_mobility_modes: Vec<usize>,
    pub mobility_mode: usize,
    /// Minutes.
    pub time_main_activity: f64,
    /// Meters.
    pub distance_main_activity: f64,
    /// Currency per trip.
    pub commuting_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub movers: usize,
    /// Indexed like `Model::modes`.
    pub mode_shares: Vec<f64>,
    pub mean_commute_minutes: f64,
    /// Shannon diversity per unit, indexed like `Model::units`.
    pub diversity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationState {
    pub iteration: u64,
    pub persons: Vec<Person>,
    /// Agents per unit and profile.
    pub occupancy: Vec<Vec<u32>>,
    pub vacancies: Vec<u32>,
    pub capacity: Vec<u32>,
    pub movers_last: usize,
    /// Consecutive iterations with a mover fraction below epsilon.
    pub quiet_streak: usize,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
}

impl SimulationState {
    pub fn occupied(&self, unit: usize) -> u32 {
        self.occupancy[unit].iter().sum()
    }

    /// Checks that every unit's residents plus vacancies equal its capacity
    /// and that the per-unit tallies match the person records.
    pub fn check_conservation(&self) -> std::result::Result<(), String> {
        let mut tally = vec![vec![0u32; self.occupancy.first().map_or(0, Vec::len)]; self.occupancy.len()];
        for p in &self.persons {
            tally[p.unit][p.worker.profile] += 1;
        }
        if tally != self.occupancy {
            return Err("occupancy does not match person records".into());
        }
        for u in 0..self.capacity.len() {
            if self.occupied(u) + self.vacancies[u] != self.capacity[u] {
                return Err(format!(
                    "unit {u}: {} occupied + {} vacant != capacity {}",
                    self.occupied(u),
                    self.vacancies[u],
                    self.capacity[u]
                ));
            }
        }
        Ok(())
    }
}

/// Fenwick tree over vacancy counts for proportional sampling.
struct VacancyIndex {
    tree: Vec<u64>,
}

impl VacancyIndex {
    fn new(counts: &[u32]) -> Self {
        let mut idx = VacancyIndex {
            tree: vec![0; counts.len() + 1],
        };
        for (i, &c) in counts.iter().enumerate() {
            idx.add(i, i64::from(c));
        }
        idx
    }

    fn add(&mut self, pos: usize, delta: i64) {
        let mut i = pos + 1;
        while i < self.tree.len() {
            self.tree[i] = self.tree[i].wrapping_add_signed(delta);
            i += i & i.wrapping_neg();
        }
    }

    fn total(&self) -> u64 {
        let mut i = self.tree.len() - 1;
        let mut sum = 0;
        while i > 0 {
            sum += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        sum
    }

    /// Unit holding the `target`-th vacancy (0-based).
    fn find(&self, mut target: u64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos
    }
}

/// Draws a unit with probability proportional to its vacancies by picking a
/// unit in proportion to its capacity and accepting it with probability
/// `vacant / capacity`. Each agent gets its own stream, so a change in the
/// vacancy of one unit only alters the draws that land on that unit.
struct Thinning {
    cumulative: Vec<u64>,
}

impl Thinning {
    fn new(capacity: &[u32]) -> Self {
        let cumulative = capacity
            .iter()
            .scan(0u64, |acc, &c| {
                *acc += u64::from(c);
                Some(*acc)
            })
            .collect();
        Thinning { cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R, capacity: &[u32], vacancies: &[u32]) -> usize {
        let total = *self.cumulative.last().expect("at least one unit");
        loop {
            let target = rng.gen_range(0..total);
            let unit = self.cumulative.partition_point(|&c| c <= target);
            if rng.gen_range(0..capacity[unit]) < vacancies[unit] {
                return unit;
            }
        }
    }
}

/// Scoring context for one model and criteria set.
struct Scorer<'a> {
    model: &'a Model,
    /// `zone[profile][unit]`: the unit lies in the profile's preferred city.
    zone: Vec<Vec<bool>>,
}

impl<'a> Scorer<'a> {
    fn new(model: &'a Model) -> Self {
        let geo = &model.geography;
        let zone = model
            .profiles
            .housing
            .iter()
            .map(|h| {
                model
                    .units
                    .iter()
                    .map(|&u| geo.city_of(u) == h.preferred_zone)
                    .collect()
            })
            .collect();
        Scorer { model, zone }
    }

    fn best_mode(&self, worker: &Worker, unit: usize) -> (Vec<usize>, Option<ModeEvaluation>) {
        let m = self.model;
        let available = available_modes(worker, m.units[unit], &m.geography, &m.modes);
        let row = m.commute.row(unit, m.commute.workplace_slot(worker.activity_place));
        let best = choose_mode(
            &m.profiles.mobility[worker.profile],
            &m.modes,
            available.iter().filter(|&&i| row[i].is_finite()).map(|&i| (i, row[i])),
            &m.scenario.consts,
        );
        (available, best)
    }

    /// Score of living in `unit`; `exclude_self` removes the agent from the
    /// unit's occupant counts before measuring diversity.
    fn housing(&self, worker: &Worker, unit: usize, occupancy: &[Vec<u32>], exclude_self: bool) -> Option<(f64, ModeEvaluation)> {
        let m = self.model;
        let (_, best) = self.best_mode(worker, unit);
        let best = best?;
        let base = &m.base_population[unit];
        let occ = &occupancy[unit];
        let counts = (0..base.len()).map(|p| {
            let mut c = base[p] + occ[p];
            if exclude_self && p == worker.profile {
                c -= 1;
            }
            c
        });
        let diversity = shannon_diversity(counts).unwrap_or(0.0);
        let score = housing_score_terms(
            &m.profiles.housing[worker.profile],
            m.rent(unit),
            self.zone[worker.profile][unit],
            best.score,
            diversity,
            m.profiles.len(),
            &m.scenario.consts,
        );
        Some((score, best))
    }
}

fn settle(model: &Model, person: &mut Person, unit: usize, available: Vec<usize>, best: ModeEvaluation) {
    person.unit = unit;
    person.living_place = Dwelling {
        location: model.units[unit],
        rent: model.rent(unit),
    };
    person.possible_mobility_modes = available;
    person.mobility_mode = best.mode;
    person.time_main_activity = best.time;
    person.distance_main_activity = best.distance;
    person.commuting_cost = best.cost;
}

fn record(model: &Model, state: &SimulationState, movers: usize) -> IterationRecord {
    let n = state.persons.len();
    let mut shares = vec![0.0; model.modes.len()];
    let mut minutes = 0.0;
    for p in &state.persons {
        shares[p.mobility_mode] += 1.0;
        minutes += p.time_main_activity;
    }
    if n > 0 {
        shares.iter_mut().for_each(|s| *s /= n as f64);
        minutes /= n as f64;
    }
    let diversity = (0..model.units.len())
        .map(|u| {
            let base = &model.base_population[u];
            shannon_diversity(base.iter().zip(&state.occupancy[u]).map(|(a, b)| a + b)).unwrap_or(0.0)
        })
        .collect();
    IterationRecord {
        iteration: state.iteration,
        movers,
        mode_shares: shares,
        mean_commute_minutes: minutes,
        diversity,
    }
}

/// Iteration 0: every worker takes a uniformly random vacant dwelling and
/// picks the best commute mode from it.
pub fn initialize(model: &Model) -> Result<SimulationState> {
    let n = model.n_agents();
    let capacity: Vec<u32> = (0..model.units.len()).map(|u| model.capacity(u)).collect();
    let supply: u64 = capacity.iter().map(|&c| u64::from(c)).sum();
    if supply < n as u64 {
        return Err(Error::Validation(format!(
            "insufficient housing: {supply} vacant dwellings for {n} agents"
        )));
    }
    let scorer = Scorer::new(model);
    let mut rng = rng::substream(model.scenario.seed, rng::PLACEMENT, 0);
    let mut vacancies = capacity.clone();
    let mut index = VacancyIndex::new(&vacancies);
    let k = model.profiles.len();
    let mut occupancy = vec![vec![0u32; k]; model.units.len()];
    let mut persons = Vec::with_capacity(n);
    for worker in &model.workers {
        let unit = index.find(rng.gen_range(0..index.total()));
        vacancies[unit] -= 1;
        index.add(unit, -1);
        occupancy[unit][worker.profile] += 1;
        let (available, best) = scorer.best_mode(worker, unit);
        let best = best.ok_or_else(|| {
            Error::Validation(format!(
                "person {}: workplace `{}` unreachable from `{}` by every available mode",
                worker.person_id,
                model.geography.buildings[worker.activity_place].building_id,
                model.unit_id(unit)
            ))
        })?;
        let mut person = Person {
            worker: worker.clone(),
            unit,
            living_place: Dwelling {
                location: model.units[unit],
                rent: 0.0,
            },
            possible_mobility_modes: Vec::new(),
            mobility_mode: 0,
            time_main_activity: 0.0,
            distance_main_activity: 0.0,
            commuting_cost: 0.0,
        };
        settle(model, &mut person, unit, available, best);
        persons.push(person);
    }
    let mut state = SimulationState {
        iteration: 0,
        persons,
        occupancy,
        vacancies,
        capacity,
        movers_last: 0,
        quiet_streak: 0,
        converged: false,
        history: Vec::new(),
    };
    let rec = record(model, &state, 0);
    state.history.push(rec);
    Ok(state)
}

/// One relocation iteration. Agents are visited in a seeded random order;
/// each draws one alternative dwelling uniformly over current vacancies and
/// moves only if it scores strictly higher than where it lives now. Moves
/// take effect immediately for later agents.
pub fn step(model: &Model, state: &mut SimulationState) {
    let iteration = state.iteration + 1;
    let seed = model.scenario.seed;
    let mut order: Vec<usize> = (0..state.persons.len()).collect();
    order.shuffle(&mut rng::substream(seed, rng::PERMUTATION, iteration));
    let scorer = Scorer::new(model);
    let thinning = Thinning::new(&state.capacity);
    let free: u64 = state.vacancies.iter().map(|&v| u64::from(v)).sum();
    let mut movers = 0;
    for &a in order.iter().filter(|_| free > 0) {
        let mut sampler = rng::substream(seed, rng::SAMPLING, (iteration << 32) | a as u64);
        let alt = thinning.sample(&mut sampler, &state.capacity, &state.vacancies);
        let current = state.persons[a].unit;
        if alt == current {
            continue;
        }
        let worker = &state.persons[a].worker;
        let Some((alt_score, _)) = scorer.housing(worker, alt, &state.occupancy, false) else {
            continue;
        };
        let here = scorer.housing(worker, current, &state.occupancy, true).map_or(f64::NEG_INFINITY, |s| s.0);
        if alt_score > here {
            let profile = worker.profile;
            let (available, best) = scorer.best_mode(worker, alt);
            let best = best.expect("alternative scored, so a mode exists");
            state.occupancy[current][profile] -= 1;
            state.occupancy[alt][profile] += 1;
            state.vacancies[current] += 1;
            state.vacancies[alt] -= 1;
            settle(model, &mut state.persons[a], alt, available, best);
            movers += 1;
        }
    }
    state.iteration = iteration;
    state.movers_last = movers;
    let fraction = if state.persons.is_empty() {
        0.0
    } else {
        movers as f64 / state.persons.len() as f64
    };
    if fraction < model.scenario.convergence.epsilon {
        state.quiet_streak += 1;
    } else {
        state.quiet_streak = 0;
    }
    let rec = record(model, state, movers);
    state.history.push(rec);
}

/// Steps until the mover fraction stays below epsilon for `window`
/// consecutive iterations, or `max_iterations` steps have run in this call.
pub fn resume(model: &Model, state: &mut SimulationState) {
    let conv = model.scenario.convergence;
    let mut steps = 0;
    while state.quiet_streak < conv.window && steps < conv.max_iterations {
        step(model, state);
        steps += 1;
    }
    state.converged = state.quiet_streak >= conv.window;
}

pub fn run_to_convergence(model: &Model) -> Result<SimulationState> {
    let mut state = initialize(model)?;
    resume(model, &mut state);
    Ok(state)
}

/// Recomputes every agent's mode options and choice from where it lives,
/// after rents or transit service changed.
pub fn refresh_choices(model: &Model, state: &mut SimulationState) -> Result<()> {
    let scorer = Scorer::new(model);
    for person in &mut state.persons {
        let unit = person.unit;
        let (available, best) = scorer.best_mode(&person.worker, unit);
        let best = best.ok_or_else(|| {
            Error::Validation(format!(
                "person {}: no reachable commute mode from `{}`",
                person.worker.person_id,
                model.unit_id(unit)
            ))
        })?;
        settle(model, person, unit, available, best);
    }
    Ok(())
}

/// Applies interventions to a model and its running state atomically: on any
/// error both are left untouched. A non-empty list restarts the convergence
/// count so the next `resume` re-equilibrates.
pub fn apply_interventions(
    model: &mut Model,
    state: &mut SimulationState,
    interventions: &[Intervention],
) -> Result<()> {
    if interventions.is_empty() {
        return Ok(());
    }
    let mut next_model = model.clone();
    let mut next_state = state.clone();
    for i in interventions {
        let occupied: Vec<u32> = (0..next_state.capacity.len()).map(|u| next_state.occupied(u)).collect();
        next_model.apply_with_occupancy(i, Some(&occupied))?;
        for u in 0..next_state.capacity.len() {
            let cap = next_model.capacity(u);
            next_state.capacity[u] = cap;
            next_state.vacancies[u] = cap - occupied[u];
        }
    }
    refresh_choices(&next_model, &mut next_state)?;
    next_state.quiet_streak = 0;
    next_state.converged = false;
    *model = next_model;
    *state = next_state;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::VacancyIndex;

    #[test]
    fn vacancy_index_sampling_is_proportional() {
        let counts = [0, 3, 0, 1, 2];
        let idx = VacancyIndex::new(&counts);
        assert_eq!(idx.total(), 6);
        let picks: Vec<usize> = (0..6).map(|t| idx.find(t)).collect();
        assert_eq!(picks, vec![1, 1, 1, 3, 4, 4]);
    }

    #[test]
    fn vacancy_index_updates() {
        let mut idx = VacancyIndex::new(&[2, 2, 2]);
        idx.add(1, -2);
        assert_eq!(idx.total(), 4);
        assert_eq!((0..4).map(|t| idx.find(t)).collect::<Vec<_>>(), vec![0, 0, 2, 2]);
        idx.add(1, 1);
        assert_eq!(idx.find(2), 1);
    }
}
