//! Fitting the behavioral criteria to observed housing and mode-share
//! distributions: RMSE errors, the criteria vector, and multi-restart
//! steepest-descent hill climbing.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{HousingCriteria, MobilityCriteria, ProfileTable};
use crate::report::{block_group_counts, mode_fractions, Summary};
use crate::rng;
use crate::scenario::Model;
use crate::simulation::{run_to_convergence, SimulationState};

/// Root-mean-square deviation between two equally long vectors.
pub fn rmse(observed: &[f64], simulated: &[f64]) -> Result<f64> {
    if observed.len() != simulated.len() {
        return Err(Error::LengthMismatch(observed.len(), simulated.len()));
    }
    if observed.is_empty() {
        return Err(Error::Validation("rmse of an empty vector".into()));
    }
    let sum: f64 = observed
        .iter()
        .zip(simulated)
        .map(|(y, yhat)| (y - yhat) * (y - yhat))
        .sum();
    Ok((sum / observed.len() as f64).sqrt())
}

/// Observed percentages to calibrate against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedData {
    /// GEOID -> profile id -> percent of that block group's workers.
    pub housing: BTreeMap<String, BTreeMap<String, f64>>,
    /// Mode id -> percent of workers.
    pub mode_shares: BTreeMap<String, f64>,
}

impl ObservedData {
    pub fn validate(&self) -> Result<()> {
        for (geoid, row) in &self.housing {
            let total: f64 = row.values().sum();
            if (total - 100.0).abs() > 0.1 {
                return Err(Error::Validation(format!(
                    "observed housing for `{geoid}` sums to {total}, not 100"
                )));
            }
        }
        let total: f64 = self.mode_shares.values().sum();
        if (total - 100.0).abs() > 0.1 {
            return Err(Error::Validation(format!("observed mode shares sum to {total}, not 100")));
        }
        Ok(())
    }

    /// Observed data as a run would report it: every block group with at
    /// least one agent, and every mode.
    pub fn from_summary(summary: &Summary) -> ObservedData {
        let housing = summary
            .block_group_distribution
            .iter()
            .filter(|(g, _)| summary.block_group_agents.get(*g).copied().unwrap_or(0) > 0)
            .map(|(g, row)| (g.clone(), row.clone()))
            .collect();
        let mode_shares = summary
            .mode_shares
            .iter()
            .map(|(m, s)| (m.clone(), 100.0 * s))
            .collect();
        ObservedData { housing, mode_shares }
    }

    pub fn read(housing_path: &Path, modes_path: &Path) -> Result<ObservedData> {
        #[derive(Deserialize)]
        struct HousingRow {
            geoid: String,
            profile_id: String,
            percent: f64,
        }
        #[derive(Deserialize)]
        struct ModeRow {
            mode_id: String,
            percent: f64,
        }
        let mut housing: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(housing_path)?;
        for row in r.deserialize::<HousingRow>() {
            let row = row?;
            housing.entry(row.geoid).or_default().insert(row.profile_id, row.percent);
        }
        let mut mode_shares = BTreeMap::new();
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(modes_path)?;
        for row in r.deserialize::<ModeRow>() {
            let row = row?;
            mode_shares.insert(row.mode_id, row.percent);
        }
        let data = ObservedData { housing, mode_shares };
        data.validate()?;
        Ok(data)
    }

    pub fn write(&self, housing_path: &Path, modes_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(housing_path)?;
        w.write_record(["geoid", "profile_id", "percent"])?;
        for (g, row) in &self.housing {
            for (p, v) in row {
                w.write_record([g.as_str(), p.as_str(), &v.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(housing_path, e))?;
        let mut w = csv::Writer::from_path(modes_path)?;
        w.write_record(["mode_id", "percent"])?;
        for (m, v) in &self.mode_shares {
            w.write_record([m.as_str(), &v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(modes_path, e))
    }
}

/// Pooled RMSE over every (block group, profile) cell in the observed data.
pub fn housing_error(model: &Model, state: &SimulationState, observed: &ObservedData) -> Result<f64> {
    let counts = block_group_counts(model, state);
    let (mut ys, mut yhats) = (Vec::new(), Vec::new());
    for (geoid, row) in &observed.housing {
        let bg = model
            .geography
            .block_group_index(geoid)
            .ok_or_else(|| Error::UnknownTarget(geoid.clone()))?;
        let total: u32 = counts[bg].iter().sum();
        for (profile, &y) in row {
            let p = model
                .profiles
                .index_of(profile)
                .ok_or_else(|| Error::Validation(format!("observed data names unknown profile `{profile}`")))?;
            let sim = if total > 0 {
                100.0 * f64::from(counts[bg][p]) / f64::from(total)
            } else {
                0.0
            };
            ys.push(y);
            yhats.push(sim);
        }
    }
    rmse(&ys, &yhats)
}

/// RMSE over the percentage share of every mode in the scenario.
pub fn mobility_error(model: &Model, state: &SimulationState, observed: &ObservedData) -> Result<f64> {
    let shares = mode_fractions(model, state);
    let mut ys = Vec::new();
    let mut yhats = Vec::new();
    for (mode, share) in model.modes.iter().zip(shares) {
        let y = observed.mode_shares.get(&mode.mode_id).ok_or_else(|| {
            Error::Validation(format!("observed mode shares lack mode `{}`", mode.mode_id))
        })?;
        ys.push(*y);
        yhats.push(100.0 * share);
    }
    rmse(&ys, &yhats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Errors {
    pub housing: f64,
    pub mobility: f64,
}

impl Errors {
    pub fn total(&self) -> f64 {
        self.housing + self.mobility
    }
}

/// One coordinate of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coordinate {
    pub lo: f64,
    pub hi: f64,
    /// Neighbor step; integral coordinates always step by 1.
    pub step: f64,
    pub integral: bool,
}

impl Coordinate {
    fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.integral {
            rng.gen_range(self.lo as i64..=self.hi as i64) as f64
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

/// Per profile, eight coordinates: rent weight, diversity acceptance, zone
/// weight, preferred zone (an index into the sorted city list), then the
/// price, time, difficulty and pattern weights for commuting.
#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaSpace {
    pub cities: Vec<String>,
    pub n_profiles: usize,
}

pub const PER_PROFILE: usize = 8;
const ZONE_SLOT: usize = 3;

impl CriteriaSpace {
    pub fn for_model(model: &Model) -> CriteriaSpace {
        CriteriaSpace {
            cities: model.geography.cities(),
            n_profiles: model.profiles.len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n_profiles * PER_PROFILE
    }

    pub fn coordinates(&self, step: f64) -> Vec<Coordinate> {
        let w = |lo, hi| Coordinate {
            lo,
            hi,
            step,
            integral: false,
        };
        let zone = Coordinate {
            lo: 0.0,
            hi: self.cities.len().saturating_sub(1) as f64,
            step: 1.0,
            integral: true,
        };
        let block = [
            w(-1.0, 0.0),
            w(-1.0, 1.0),
            w(0.0, 1.0),
            zone,
            w(-1.0, 0.0),
            w(-1.0, 0.0),
            w(-1.0, 0.0),
            w(0.0, 1.0),
        ];
        (0..self.n_profiles).flat_map(|_| block).collect()
    }

    pub fn encode(&self, table: &ProfileTable) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(self.dim());
        for (h, m) in table.housing.iter().zip(&table.mobility) {
            let zone = self
                .cities
                .iter()
                .position(|c| *c == h.preferred_zone)
                .ok_or_else(|| Error::Validation(format!("unknown preferred zone `{}`", h.preferred_zone)))?;
            v.extend([
                h.w_price,
                h.diversity_acceptance,
                h.zone_weight,
                zone as f64,
                m.w_price,
                m.w_time,
                m.w_difficulty,
                m.w_pattern,
            ]);
        }
        Ok(v)
    }

    /// Installs a vector into a copy of `table` (same profiles).
    pub fn decode(&self, vector: &[f64], table: &ProfileTable) -> ProfileTable {
        assert_eq!(vector.len(), self.dim(), "criteria vector length");
        let mut out = table.clone();
        for (p, chunk) in vector.chunks(PER_PROFILE).enumerate() {
            let zone = (chunk[ZONE_SLOT].round().max(0.0) as usize).min(self.cities.len() - 1);
            out.housing[p] = HousingCriteria {
                w_price: chunk[0],
                diversity_acceptance: chunk[1],
                zone_weight: chunk[2],
                preferred_zone: self.cities[zone].clone(),
            };
            out.mobility[p] = MobilityCriteria {
                w_price: chunk[4],
                w_time: chunk[5],
                w_difficulty: chunk[6],
                w_pattern: chunk[7],
            };
        }
        out
    }
}

/// Runs the model with the vector's criteria and scores it against `observed`.
pub fn objective(model: &Model, space: &CriteriaSpace, vector: &[f64], observed: &ObservedData) -> Result<Errors> {
    let candidate = model.with_criteria(space.decode(vector, &model.profiles));
    let state = run_to_convergence(&candidate)?;
    Ok(Errors {
        housing: housing_error(&candidate, &state, observed)?,
        mobility: mobility_error(&candidate, &state, observed)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub step_size: f64,
    pub max_evaluations: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Extra simulation seeds the best vector is re-run under.
    pub seed_checks: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            step_size: 0.05,
            max_evaluations: 3000,
            restarts: 5,
            seed: 0,
            seed_checks: 3,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Validation("calibration.step_size must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Validation("calibration.restarts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub evaluation: usize,
    pub climb: usize,
    /// The evaluated point became the climb's current point.
    pub accepted: bool,
    pub vector: Vec<f64>,
    pub housing_error: f64,
    pub mobility_error: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimbSummary {
    pub climb: usize,
    pub evaluations: usize,
    pub accepted_moves: usize,
    pub best_total: f64,
    /// Ended at a point no neighbor strictly improves on.
    pub local_minimum: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub best_vector: Vec<f64>,
    pub housing_error: f64,
    pub mobility_error: f64,
    pub total: f64,
    pub evaluations: usize,
    /// Stopped because the evaluation budget ran out.
    pub budget_exhausted: bool,
    pub climbs: Vec<ClimbSummary>,
    pub trace: Vec<TraceEntry>,
}

/// Multi-restart steepest-descent hill climbing over a box.
///
/// Each climb starts from a seeded random point, evaluates all single
/// coordinate moves `±step` (clamped, skipping moves that clamp back onto the
/// current point), and moves to the best neighbor only if it strictly lowers
/// the total error. Neighbor batches may be evaluated in parallel; the
/// accepted sequence is the one the sequential scan would produce.
pub fn hill_climb<F>(
    coords: &[Coordinate],
    config: &CalibrationConfig,
    evaluate: F,
) -> Result<CalibrationResult>
where
    F: Fn(&[f64]) -> Result<Errors> + Sync,
{
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut climbs = Vec::new();
    let budget = config.max_evaluations;
    let mut exhausted = false;
    for climb in 0..config.restarts {
        if trace.len() >= budget {
            exhausted = true;
            break;
        }
        let start_eval = trace.len();
        let mut rng = rng::substream(config.seed, rng::CALIBRATION_START, climb as u64);
        let mut current: Vec<f64> = coords.iter().map(|c| c.sample(&mut rng)).collect();
        let mut current_err = evaluate(&current)?;
        trace.push(TraceEntry {
            evaluation: trace.len(),
            climb,
            accepted: true,
            vector: current.clone(),
            housing_error: current_err.housing,
            mobility_error: current_err.mobility,
            total: current_err.total(),
        });
        let mut moves = 0;
        let mut local_minimum = false;
        loop {
            let mut neighbors = Vec::with_capacity(2 * coords.len());
            for (j, c) in coords.iter().enumerate() {
                for dir in [1.0, -1.0] {
                    let x = c.clamp(current[j] + dir * c.step);
                    if x != current[j] {
                        let mut n = current.clone();
                        n[j] = x;
                        neighbors.push(n);
                    }
                }
            }
            let remaining = budget - trace.len();
            if neighbors.len() > remaining {
                neighbors.truncate(remaining);
                exhausted = true;
            }
            if neighbors.is_empty() {
                local_minimum = !exhausted;
                break;
            }
            let results: Vec<Errors> = neighbors
                .par_iter()
                .map(|n| evaluate(n))
                .collect::<Result<_>>()?;
            let mut best: Option<usize> = None;
            for (i, e) in results.iter().enumerate() {
                if best.is_none_or(|b| e.total() < results[b].total()) {
                    best = Some(i);
                }
            }
            let best = best.expect("neighbors evaluated");
            let improves = results[best].total() < current_err.total();
            for (i, (n, e)) in neighbors.iter().zip(&results).enumerate() {
                trace.push(TraceEntry {
                    evaluation: trace.len(),
                    climb,
                    accepted: improves && i == best,
                    vector: n.clone(),
                    housing_error: e.housing,
                    mobility_error: e.mobility,
                    total: e.total(),
                });
            }
            if improves {
                current = neighbors[best].clone();
                current_err = results[best];
                moves += 1;
            }
            if exhausted {
                break;
            }
            if !improves {
                local_minimum = true;
                break;
            }
        }
        climbs.push(ClimbSummary {
            climb,
            evaluations: trace.len() - start_eval,
            accepted_moves: moves,
            best_total: current_err.total(),
            local_minimum,
        });
        if exhausted {
            break;
        }
    }
    let best = trace
        .iter()
        .min_by(|a, b| a.total.total_cmp(&b.total).then(a.evaluation.cmp(&b.evaluation)))
        .ok_or_else(|| Error::Validation("calibration budget allows no evaluation".into()))?;
    Ok(CalibrationResult {
        best_vector: best.vector.clone(),
        housing_error: best.housing_error,
        mobility_error: best.mobility_error,
        total: best.total,
        evaluations: trace.len(),
        budget_exhausted: exhausted,
        climbs,
        trace: trace.clone(),
    })
}

/// Spread of the objective when the best vector is re-run under other seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSpread {
    pub seeds: Vec<u64>,
    pub totals: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Calibrates the model's criteria against `observed`.
pub fn calibrate(model: &Model, observed: &ObservedData, config: &CalibrationConfig) -> Result<CalibrationResult> {
    config.validate()?;
    let space = CriteriaSpace::for_model(model);
    let coords = space.coordinates(config.step_size);
    hill_climb(&coords, config, |v| objective(model, &space, v, observed))
}

pub fn seed_spread(model: &Model, observed: &ObservedData, vector: &[f64], checks: usize) -> Result<Option<SeedSpread>> {
    if checks == 0 {
        return Ok(None);
    }
    let space = CriteriaSpace::for_model(model);
    let seeds: Vec<u64> = (1..=checks as u64).map(|k| model.scenario.seed.wrapping_add(k)).collect();
    let totals: Vec<f64> = seeds
        .par_iter()
        .map(|&s| {
            let mut scenario = model.scenario.clone();
            scenario.seed = s;
            scenario.interventions = Vec::new();
            let reseeded = Model::from_parts(
                scenario,
                (*model.geography).clone(),
                model.profiles.clone(),
                model.modes.clone(),
            )?;
            let reseeded = Model {
                applied: model.applied.clone(),
                ..reseeded
            };
            objective(&reseeded, &space, vector, observed).map(|e| e.total())
        })
        .collect::<Result<_>>()?;
    let min = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    Ok(Some(SeedSpread {
        seeds,
        totals,
        min,
        max,
        mean,
    }))
}

/// Evaluation log: index, climb, accepted flag, every coordinate, both errors.
pub fn write_trace(path: &Path, result: &CalibrationResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = result.best_vector.len();
    let mut header = vec!["evaluation".to_string(), "climb".into(), "accepted".into()];
    header.extend((0..dim).map(|j| format!("x{j}")));
    header.extend(["housing_error".to_string(), "mobility_error".into(), "total".into()]);
    w.write_record(&header)?;
    for t in &result.trace {
        let mut row = vec![t.evaluation.to_string(), t.climb.to_string(), t.accepted.to_string()];
        row.extend(t.vector.iter().map(f64::to_string));
        row.extend([t.housing_error.to_string(), t.mobility_error.to_string(), t.total.to_string()]);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a trace log written by `write_trace`.
pub fn read_trace(path: &Path) -> Result<Vec<TraceEntry>> {
    let mut r = csv::Reader::from_path(path)?;
    let width = r.headers()?.len();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |k: usize| -> Result<f64> {
            rec[k]
                .parse()
                .map_err(|_| Error::Validation(format!("trace column {k} is not numeric")))
        };
        out.push(TraceEntry {
            evaluation: f(0)? as usize,
            climb: f(1)? as usize,
            accepted: &rec[2] == "true",
            vector: (3..width - 3).map(f).collect::<Result<_>>()?,
            housing_error: f(width - 3)?,
            mobility_error: f(width - 2)?,
            total: f(width - 1)?,
        });
    }
    Ok(out)
}
