//! Scenario documents and the loaded, validated model a run operates on.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationConfig;
use crate::choice::NormalizationConstants;
use crate::error::{Error, Result};
use crate::geodata::{load_geography, Geography, Location};
use crate::population::{
    read_housing_criteria, read_mobility_criteria, read_modes, read_profiles, synthesize_population,
    MobilityMode, ProfileTable, Worker,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Convergence {
    /// Mover fraction below which an iteration counts as quiet.
    pub epsilon: f64,
    /// Consecutive quiet iterations required.
    pub window: usize,
    pub max_iterations: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Convergence {
            epsilon: 0.01,
            window: 3,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransitFlag {
    #[serde(rename = "has_T")]
    HasT,
    #[serde(rename = "has_bus")]
    HasBus,
}

/// An edit to housing supply or transit service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intervention {
    SetRent { target: String, value: f64 },
    AddVacancies { target: String, value: u32 },
    RemoveVacancies { target: String, value: u32 },
    SetTransitFlag {
        target: String,
        flag: TransitFlag,
        value: bool,
    },
}

impl Intervention {
    pub fn target(&self) -> &str {
        match self {
            Intervention::SetRent { target, .. }
            | Intervention::AddVacancies { target, .. }
            | Intervention::RemoveVacancies { target, .. }
            | Intervention::SetTransitFlag { target, .. } => target,
        }
    }
}

/// Interventions file: `[[interventions]]` tables in TOML, or a JSON list.
pub fn read_interventions(path: &Path) -> Result<Vec<Intervention>> {
    #[derive(Deserialize)]
    struct Doc {
        #[serde(default)]
        interventions: Vec<Intervention>,
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    if path.extension().is_some_and(|e| e == "json") {
        return serde_json::from_str(&text).map_err(|e| Error::File {
            file,
            message: e.to_string(),
        });
    }
    toml::from_str::<Doc>(&text)
        .map(|d| d.interventions)
        .map_err(|e| Error::File {
            file,
            message: e.to_string(),
        })
}

/// The scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    /// Directory holding the geographic layers.
    pub geography: PathBuf,
    pub profiles: PathBuf,
    pub housing_criteria: PathBuf,
    pub mobility_criteria: PathBuf,
    pub modes: PathBuf,
    pub n_agents: usize,
    pub seed: u64,
    #[serde(default)]
    pub consts: NormalizationConstants,
    #[serde(default)]
    pub convergence: Convergence,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub interventions: Vec<Intervention>,
}

impl Scenario {
    /// Parses a TOML scenario, resolving relative paths against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Scenario> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| Error::Validation(e.to_string()))?;
        s.resolve_paths(base);
        Ok(s)
    }

    /// Parses a JSON scenario, resolving relative paths against `base`.
    pub fn from_json_str(text: &str, base: &Path) -> Result<Scenario> {
        let mut s: Scenario = serde_json::from_str(text).map_err(|e| Error::Validation(e.to_string()))?;
        s.resolve_paths(base);
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Scenario> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = fs::canonicalize(base).unwrap_or_else(|_| base.to_path_buf());
        if path.extension().is_some_and(|e| e == "json") {
            Scenario::from_json_str(&text, &base)
        } else {
            Scenario::from_toml_str(&text, &base)
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.geography,
            &mut self.profiles,
            &mut self.housing_criteria,
            &mut self.mobility_criteria,
            &mut self.modes,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Validation(format!("override `{key}`: cannot parse `{value}`")))
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "n_agents" => self.n_agents = parse(key, value)?,
            "epsilon" => self.convergence.epsilon = parse(key, value)?,
            "window" => self.convergence.window = parse(key, value)?,
            "max_iterations" => self.convergence.max_iterations = parse(key, value)?,
            "cost_ref" => self.consts.cost_ref = parse(key, value)?,
            "time_ref" => self.consts.time_ref = parse(key, value)?,
            "rent_ref" => self.consts.rent_ref = parse(key, value)?,
            "step_size" => self.calibration.step_size = parse(key, value)?,
            "max_evaluations" => self.calibration.max_evaluations = parse(key, value)?,
            "restarts" => self.calibration.restarts = parse(key, value)?,
            "calibration_seed" => self.calibration.seed = parse(key, value)?,
            "seed_checks" => self.calibration.seed_checks = parse(key, value)?,
            "name" => self.name = value.to_string(),
            _ => return Err(Error::Validation(format!("unknown override key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate_settings(&self) -> Result<()> {
        let c = &self.convergence;
        if !(c.epsilon > 0.0 && c.epsilon <= 1.0) {
            return Err(Error::Validation(format!("convergence.epsilon = {} outside (0, 1]", c.epsilon)));
        }
        if c.window == 0 || c.max_iterations == 0 {
            return Err(Error::Validation(
                "convergence.window and convergence.max_iterations must be at least 1".into(),
            ));
        }
        if !self.consts.is_valid() {
            return Err(Error::Validation("normalization constants must be positive".into()));
        }
        self.calibration.validate()
    }
}

/// Origin-to-workplace network distances, per housing unit, workplace and mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CommuteTable {
    n_workplaces: usize,
    n_modes: usize,
    /// Meters; infinite when the mode cannot connect the two.
    distances: Vec<f64>,
    slot_of_building: HashMap<usize, usize>,
}

impl CommuteTable {
    pub fn build(geo: &Geography, units: &[Location], modes: &[MobilityMode]) -> CommuteTable {
        let workplaces: Vec<usize> = geo.nonresidential().collect();
        let n_modes = modes.len();
        let mut distances = vec![f64::INFINITY; units.len() * workplaces.len() * n_modes];
        let net = &geo.network;
        for (m, mode) in modes.iter().enumerate() {
            let Some(bit) = net.mode_bit(&mode.mode_id) else {
                continue;
            };
            let unit_nodes: Vec<Option<usize>> = units
                .iter()
                .map(|&u| net.snap(&geo.anchor(u), &mode.mode_id))
                .collect();
            for (w, &b) in workplaces.iter().enumerate() {
                let Some(source) = net.snap(&geo.buildings[b].centroid, &mode.mode_id) else {
                    continue;
                };
                let from_work = net.distances_from(source, bit);
                for (u, node) in unit_nodes.iter().enumerate() {
                    if let Some(node) = node {
                        distances[(u * workplaces.len() + w) * n_modes + m] = from_work[*node];
                    }
                }
            }
        }
        CommuteTable {
            n_workplaces: workplaces.len(),
            n_modes,
            distances,
            slot_of_building: workplaces.iter().enumerate().map(|(w, &b)| (b, w)).collect(),
        }
    }

    pub fn workplace_slot(&self, building: usize) -> usize {
        self.slot_of_building[&building]
    }

    /// Distance row for `(unit, workplace slot)`, indexed by mode.
    #[inline]
    pub fn row(&self, unit: usize, slot: usize) -> &[f64] {
        let start = (unit * self.n_workplaces + slot) * self.n_modes;
        &self.distances[start..start + self.n_modes]
    }
}

/// Everything a run needs, validated: geography, profiles with their
/// default criteria, modes, the synthesized workers and precomputed commute distances.
#[derive(Debug, Clone)]
pub struct Model {
    pub scenario: Scenario,
    pub geography: Arc<Geography>,
    pub profiles: ProfileTable,
    pub modes: Vec<MobilityMode>,
    /// Housing units: residential buildings, then block groups.
    pub units: Vec<Location>,
    pub unit_index: HashMap<Location, usize>,
    pub commute: Arc<CommuteTable>,
    pub workers: Vec<Worker>,
    /// Census residents per unit and profile (zero for buildings).
    pub base_population: Vec<Vec<u32>>,
    /// Interventions applied on top of the input files, in order.
    pub applied: Vec<Intervention>,
}

impl Model {
    /// Loads every file a scenario references and applies its interventions.
    pub fn load(scenario: &Scenario) -> Result<Model> {
        scenario.validate_settings()?;
        let geography = load_geography(&scenario.geography)?;
        let profiles = read_profiles(&scenario.profiles)?;
        let housing = read_housing_criteria(&scenario.housing_criteria, &profiles)?;
        let mobility = read_mobility_criteria(&scenario.mobility_criteria, &profiles)?;
        let modes = read_modes(&scenario.modes)?;
        let table = ProfileTable {
            profiles,
            housing,
            mobility,
        };
        Model::from_parts(scenario.clone(), geography, table, modes)
    }

    pub fn from_parts(
        scenario: Scenario,
        geography: Geography,
        profiles: ProfileTable,
        mut modes: Vec<MobilityMode>,
    ) -> Result<Model> {
        scenario.validate_settings()?;
        crate::population::validate_modes(&mut modes)?;
        for bg in &geography.block_groups {
            for key in bg.population.keys() {
                if profiles.index_of(key).is_none() {
                    return Err(Error::Validation(format!(
                        "block group `{}`: population key `{key}` is not a profile",
                        bg.geoid
                    )));
                }
            }
        }
        let cities = geography.cities();
        for (p, h) in profiles.profiles.iter().zip(&profiles.housing) {
            if !cities.contains(&h.preferred_zone) {
                return Err(Error::Validation(format!(
                    "profile `{}`: preferred_zone `{}` is not a city in the geography",
                    p.profile_id, h.preferred_zone
                )));
            }
        }
        let mut units: Vec<Location> = geography
            .buildings
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_residential())
            .map(|(i, _)| Location::Building(i))
            .collect();
        units.extend((0..geography.block_groups.len()).map(Location::BlockGroup));
        let unit_index = units.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let base_population = units
            .iter()
            .map(|&u| match u {
                Location::Building(_) => vec![0; profiles.len()],
                Location::BlockGroup(b) => profiles
                    .profiles
                    .iter()
                    .map(|p| geography.block_groups[b].population.get(&p.profile_id).copied().unwrap_or(0))
                    .collect(),
            })
            .collect();
        let workers = synthesize_population(scenario.n_agents, &profiles.profiles, &geography, scenario.seed)?;
        let commute = CommuteTable::build(&geography, &units, &modes);
        let mut model = Model {
            geography: Arc::new(geography),
            profiles,
            modes,
            units,
            unit_index,
            commute: Arc::new(commute),
            workers,
            base_population,
            applied: Vec::new(),
            scenario,
        };
        let interventions = model.scenario.interventions.clone();
        for i in &interventions {
            model.apply(i)?;
        }
        Ok(model)
    }

    pub fn n_agents(&self) -> usize {
        self.workers.len()
    }

    pub fn capacity(&self, unit: usize) -> u32 {
        match self.units[unit] {
            Location::Building(b) => self.geography.buildings[b].vacant_spaces,
            Location::BlockGroup(b) => self.geography.block_groups[b].vacant_spaces,
        }
    }

    pub fn rent(&self, unit: usize) -> f64 {
        match self.units[unit] {
            Location::Building(b) => self.geography.buildings[b].rent_vacancy,
            Location::BlockGroup(b) => self.geography.block_groups[b].rent_vacancy,
        }
    }

    pub fn unit_id(&self, unit: usize) -> &str {
        self.geography.location_id(self.units[unit])
    }

    pub fn unit_of(&self, id: &str) -> Option<usize> {
        self.geography.resolve(id).and_then(|l| self.unit_index.get(&l).copied())
    }

    pub fn total_capacity(&self) -> u64 {
        (0..self.units.len()).map(|u| u64::from(self.capacity(u))).sum()
    }

    /// Applies one intervention to the model's housing supply and transit
    /// flags. `occupied` gives current residents per unit when a running
    /// state exists; removals may only take unoccupied capacity.
    pub fn apply_with_occupancy(&mut self, intervention: &Intervention, occupied: Option<&[u32]>) -> Result<()> {
        let target = intervention.target().to_string();
        let geo = Arc::make_mut(&mut self.geography);
        match intervention {
            Intervention::SetTransitFlag { flag, value, .. } => {
                let bg = geo
                    .block_group_index(&target)
                    .ok_or_else(|| Error::UnknownTarget(target.clone()))?;
                match flag {
                    TransitFlag::HasT => geo.block_groups[bg].has_t = *value,
                    TransitFlag::HasBus => geo.block_groups[bg].has_bus = *value,
                }
            }
            _ => {
                let unit = geo
                    .resolve(&target)
                    .and_then(|l| self.unit_index.get(&l).copied())
                    .ok_or_else(|| Error::UnknownTarget(target.clone()))?;
                let (vacant, rent) = match self.units[unit] {
                    Location::Building(b) => {
                        let b = &mut geo.buildings[b];
                        (&mut b.vacant_spaces, &mut b.rent_vacancy)
                    }
                    Location::BlockGroup(b) => {
                        let b = &mut geo.block_groups[b];
                        (&mut b.vacant_spaces, &mut b.rent_vacancy)
                    }
                };
                match intervention {
                    Intervention::SetRent { value, .. } => {
                        if !(*value > 0.0 && value.is_finite()) {
                            return Err(Error::Validation(format!("set_rent on `{target}`: rent must be positive")));
                        }
                        *rent = *value;
                    }
                    Intervention::AddVacancies { value, .. } => {
                        *vacant = vacant
                            .checked_add(*value)
                            .ok_or_else(|| Error::Validation(format!("add_vacancies on `{target}` overflows")))?;
                    }
                    Intervention::RemoveVacancies { value, .. } => {
                        let taken = occupied.map_or(0, |o| o[unit]);
                        let free = vacant.saturating_sub(taken);
                        if *value > free {
                            return Err(Error::Eviction {
                                target,
                                message: format!("removing {value} exceeds {free} unoccupied spaces"),
                            });
                        }
                        *vacant -= value;
                    }
                    Intervention::SetTransitFlag { .. } => unreachable!(),
                }
            }
        }
        self.applied.push(intervention.clone());
        Ok(())
    }

    pub fn apply(&mut self, intervention: &Intervention) -> Result<()> {
        self.apply_with_occupancy(intervention, None)
    }

    /// Profile table with different criteria (same profiles).
    pub fn with_criteria(&self, table: ProfileTable) -> Model {
        Model {
            profiles: table,
            ..self.clone()
        }
    }
}
