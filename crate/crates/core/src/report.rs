//! Run summaries, tabular exports, persisted state and what-if comparisons.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{block_group_feature, building_feature, collection, Location};
use crate::population::ProfileTable;
use crate::scenario::{Intervention, Model, Scenario};
use crate::simulation::SimulationState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommuteStats {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub n_agents: usize,
    pub iterations: u64,
    pub converged: bool,
    /// Fractions by mode id; sum to 1 when there are agents.
    pub mode_shares: BTreeMap<String, f64>,
    /// Percent of each block group's agents per profile.
    pub block_group_distribution: BTreeMap<String, BTreeMap<String, f64>>,
    pub block_group_agents: BTreeMap<String, u32>,
    /// Shannon diversity of every housing unit (building id or GEOID).
    pub unit_diversity: BTreeMap<String, f64>,
    pub commute_minutes: CommuteStats,
    /// Movers per iteration, iteration 0 first.
    pub movers: Vec<usize>,
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Agent counts per block group and profile.
pub fn block_group_counts(model: &Model, state: &SimulationState) -> Vec<Vec<u32>> {
    let geo = &model.geography;
    let mut counts = vec![vec![0u32; model.profiles.len()]; geo.block_groups.len()];
    for (u, occ) in state.occupancy.iter().enumerate() {
        let bg = geo.block_group_of(model.units[u]);
        for (p, &c) in occ.iter().enumerate() {
            counts[bg][p] += c;
        }
    }
    counts
}

/// Fraction of agents per mode, indexed like `Model::modes`.
pub fn mode_fractions(model: &Model, state: &SimulationState) -> Vec<f64> {
    let mut shares = vec![0.0; model.modes.len()];
    for p in &state.persons {
        shares[p.mobility_mode] += 1.0;
    }
    let n = state.persons.len();
    if n > 0 {
        shares.iter_mut().for_each(|s| *s /= n as f64);
    }
    shares
}

pub fn summarize(model: &Model, state: &SimulationState) -> Summary {
    let geo = &model.geography;
    let profiles = &model.profiles.profiles;
    let mode_shares = model
        .modes
        .iter()
        .zip(mode_fractions(model, state))
        .map(|(m, s)| (m.mode_id.clone(), s))
        .collect();
    let counts = block_group_counts(model, state);
    let mut distribution = BTreeMap::new();
    let mut agents = BTreeMap::new();
    for (bg, row) in geo.block_groups.iter().zip(&counts) {
        let total: u32 = row.iter().sum();
        let pct = profiles
            .iter()
            .zip(row)
            .map(|(p, &c)| {
                let v = if total > 0 { 100.0 * f64::from(c) / f64::from(total) } else { 0.0 };
                (p.profile_id.clone(), v)
            })
            .collect();
        distribution.insert(bg.geoid.clone(), pct);
        agents.insert(bg.geoid.clone(), total);
    }
    let last = state.history.last();
    let unit_diversity = (0..model.units.len())
        .map(|u| {
            let h = last.map_or(0.0, |r| r.diversity[u]);
            (model.unit_id(u).to_string(), h)
        })
        .collect();
    let mut minutes: Vec<f64> = state.persons.iter().map(|p| p.time_main_activity).collect();
    minutes.sort_by(f64::total_cmp);
    let mean = if minutes.is_empty() {
        0.0
    } else {
        minutes.iter().sum::<f64>() / minutes.len() as f64
    };
    Summary {
        scenario: model.scenario.name.clone(),
        seed: model.scenario.seed,
        n_agents: state.persons.len(),
        iterations: state.iteration,
        converged: state.converged,
        mode_shares,
        block_group_distribution: distribution,
        block_group_agents: agents,
        unit_diversity,
        commute_minutes: CommuteStats {
            mean,
            p50: nearest_rank(&minutes, 0.5),
            p90: nearest_rank(&minutes, 0.9),
            max: minutes.last().copied().unwrap_or(0.0),
        },
        movers: state.history.iter().map(|r| r.movers).collect(),
    }
}

/// Per-unit metrics attached to a map feature.
fn unit_metrics(model: &Model, state: &SimulationState, rents: &[f64], unit: Option<usize>) -> serde_json::Value {
    let Some(u) = unit else {
        return serde_json::json!({
            "diversity": 0.0,
            "dominant_profile": null,
            "agents": 0,
            "vacancy": 0,
            "mean_rent": null,
        });
    };
    let counts: Vec<u32> = model.base_population[u]
        .iter()
        .zip(&state.occupancy[u])
        .map(|(a, b)| a + b)
        .collect();
    let dominant = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(p, _)| model.profiles.profiles[p].profile_id.clone());
    let diversity = state.history.last().map_or(0.0, |r| r.diversity[u]);
    let occupied = state.occupied(u);
    let mean_rent = if occupied > 0 {
        Some(rents[u] / f64::from(occupied))
    } else if state.capacity[u] > 0 {
        Some(model.rent(u))
    } else {
        None
    };
    serde_json::json!({
        "diversity": diversity,
        "dominant_profile": dominant,
        "agents": occupied,
        "vacancy": state.vacancies[u],
        "mean_rent": mean_rent,
    })
}

fn with_metrics(mut feature: serde_json::Value, metrics: serde_json::Value) -> serde_json::Value {
    if let (Some(props), serde_json::Value::Object(extra)) = (feature["properties"].as_object_mut(), metrics) {
        props.extend(extra);
    }
    feature
}

/// Block-group and building features in the input format, each carrying the
/// unit's diversity, dominant profile, agent count, remaining vacancy and
/// mean rent. Nonresidential buildings and units without dwellings carry no
/// rent; nonresidential buildings also carry zero diversity.
pub fn layers(model: &Model, state: &SimulationState) -> serde_json::Value {
    let geo = &model.geography;
    let mut rents = vec![0.0; model.units.len()];
    for p in &state.persons {
        rents[p.unit] += p.living_place.rent;
    }
    let block_groups = geo
        .block_groups
        .iter()
        .enumerate()
        .map(|(i, bg)| {
            let unit = model.unit_index.get(&Location::BlockGroup(i)).copied();
            with_metrics(block_group_feature(bg), unit_metrics(model, state, &rents, unit))
        })
        .collect();
    let buildings = geo
        .buildings
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let unit = model.unit_index.get(&Location::Building(i)).copied();
            with_metrics(building_feature(b), unit_metrics(model, state, &rents, unit))
        })
        .collect();
    serde_json::json!({
        "block_groups": collection(block_groups),
        "buildings": collection(buildings),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::File {
        file: path.display().to_string(),
        message: e.to_string(),
    })
}

/// History as `iteration,movers,<mode ids...>` rows of mode-share fractions.
pub fn write_history(path: &Path, model: &Model, state: &SimulationState) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iteration".to_string(), "movers".to_string()];
    header.extend(model.modes.iter().map(|m| m.mode_id.clone()));
    w.write_record(&header)?;
    for r in &state.history {
        let mut row = vec![r.iteration.to_string(), r.movers.to_string()];
        row.extend(r.mode_shares.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub iteration: u64,
    pub movers: usize,
    pub shares: BTreeMap<String, f64>,
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>> {
    let file = path.display().to_string();
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let bad = |line: u64, message: String| Error::Row {
        file: file.clone(),
        line,
        message,
    };
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(line, format!("column {k} is not numeric")))
        };
        let shares = (2..header.len())
            .map(|k| Ok((header[k].to_string(), num(k)?)))
            .collect::<Result<_>>()?;
        rows.push(HistoryRow {
            iteration: num(0)? as u64,
            movers: num(1)? as usize,
            shares,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRow {
    pub person_id: u32,
    pub profile: String,
    pub unit: String,
    pub mode: String,
    pub commute_minutes: f64,
    pub distance_m: f64,
    pub cost: f64,
}

pub fn agent_rows(model: &Model, state: &SimulationState) -> Vec<AgentRow> {
    state
        .persons
        .iter()
        .map(|p| AgentRow {
            person_id: p.worker.person_id,
            profile: model.profiles.profiles[p.worker.profile].profile_id.clone(),
            unit: model.unit_id(p.unit).to_string(),
            mode: model.modes[p.mobility_mode].mode_id.clone(),
            commute_minutes: p.time_main_activity,
            distance_m: p.distance_main_activity,
            cost: p.commuting_cost,
        })
        .collect()
}

pub fn write_agents(path: &Path, model: &Model, state: &SimulationState) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in agent_rows(model, state) {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_agents(path: &Path) -> Result<Vec<AgentRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub const STATE_SCHEMA: &str = "citymove-state/1";

/// A converged run persisted for later what-if comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedState {
    pub schema: String,
    /// Scenario whose `interventions` hold every edit applied so far.
    pub scenario: Scenario,
    pub criteria: ProfileTable,
    pub state: SimulationState,
}

impl SavedState {
    pub fn capture(model: &Model, state: &SimulationState) -> SavedState {
        let mut scenario = model.scenario.clone();
        scenario.interventions = model.applied.clone();
        SavedState {
            schema: STATE_SCHEMA.to_string(),
            scenario,
            criteria: model.profiles.clone(),
            state: state.clone(),
        }
    }

    /// Rebuilds the model from the referenced input files and checks that the
    /// stored state fits it.
    pub fn restore(&self) -> Result<(Model, SimulationState)> {
        if self.schema != STATE_SCHEMA {
            return Err(Error::Validation(format!(
                "state schema `{}` is not `{STATE_SCHEMA}`",
                self.schema
            )));
        }
        let base = Model::load(&self.scenario)?;
        if base.profiles.profiles != self.criteria.profiles {
            return Err(Error::Validation("saved profiles differ from the profile file".into()));
        }
        let model = base.with_criteria(self.criteria.clone());
        let state = self.state.clone();
        if state.capacity.len() != model.units.len() || state.persons.len() != model.n_agents() {
            return Err(Error::Validation("saved state does not match the scenario geography".into()));
        }
        state.check_conservation().map_err(Error::Validation)?;
        Ok((model, state))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub mode_shares: BTreeMap<String, f64>,
    pub block_group_distribution: BTreeMap<String, BTreeMap<String, f64>>,
    pub mean_commute_minutes: f64,
    pub unit_diversity: BTreeMap<String, f64>,
}

/// Baseline and what-if summaries side by side, with what-if minus baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub interventions: Vec<Intervention>,
    pub baseline: Summary,
    pub whatif: Summary,
    pub deltas: Deltas,
}

fn diff_maps(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    a.keys()
        .chain(b.keys())
        .map(|k| {
            let d = b.get(k).copied().unwrap_or(0.0) - a.get(k).copied().unwrap_or(0.0);
            (k.clone(), d)
        })
        .collect()
}

pub fn compare(interventions: Vec<Intervention>, baseline: Summary, whatif: Summary) -> Comparison {
    let empty = BTreeMap::new();
    let block_group_distribution = baseline
        .block_group_distribution
        .keys()
        .chain(whatif.block_group_distribution.keys())
        .map(|g| {
            let a = baseline.block_group_distribution.get(g).unwrap_or(&empty);
            let b = whatif.block_group_distribution.get(g).unwrap_or(&empty);
            (g.clone(), diff_maps(a, b))
        })
        .collect();
    let deltas = Deltas {
        mode_shares: diff_maps(&baseline.mode_shares, &whatif.mode_shares),
        block_group_distribution,
        mean_commute_minutes: whatif.commute_minutes.mean - baseline.commute_minutes.mean,
        unit_diversity: diff_maps(&baseline.unit_diversity, &whatif.unit_diversity),
    };
    Comparison {
        interventions,
        baseline,
        whatif,
        deltas,
    }
}
