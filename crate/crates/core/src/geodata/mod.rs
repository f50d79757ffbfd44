//! Geographic layers: block groups, buildings, the road network, and the
//! travel-time model used for commutes.

mod format;
mod network;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use format::{
    block_group_feature, building_feature, collection, load_geography, write_geography, LAYER_FILES,
};
pub use network::{Edge, RoadNetwork, Route};

use crate::geometry::{Area, Point};
use crate::population::MobilityMode;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockGroup {
    pub geoid: String,
    pub geometry: Area,
    pub city: String,
    pub vacant_spaces: u32,
    /// Mean monthly rent of the vacancies.
    pub rent_vacancy: f64,
    /// Census residents per income profile.
    pub population: BTreeMap<String, u32>,
    pub has_t: bool,
    pub has_bus: bool,
    pub centroid: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Usage {
    Residential,
    Nonresidential,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Building {
    pub building_id: String,
    pub geometry: Area,
    pub associated_block_group: String,
    /// Index into `Geography::block_groups`.
    pub block_group: usize,
    pub vacant_spaces: u32,
    pub rent_vacancy: f64,
    pub usage: Usage,
    pub centroid: Point,
}

impl Building {
    pub fn is_residential(&self) -> bool {
        self.usage == Usage::Residential
    }
}

/// Where a dwelling sits: a building in the fine-grained area, or a whole
/// block group on the outskirts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Location {
    Building(usize),
    BlockGroup(usize),
}

/// A housing slot plus the rent recorded when it was taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dwelling {
    pub location: Location,
    pub rent: f64,
}

/// All geographic layers after validation and projection into local meters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Geography {
    pub block_groups: Vec<BlockGroup>,
    pub buildings: Vec<Building>,
    pub network: RoadNetwork,
}

impl Geography {
    pub fn block_group_index(&self, geoid: &str) -> Option<usize> {
        self.block_groups.iter().position(|b| b.geoid == geoid)
    }

    pub fn building_index(&self, id: &str) -> Option<usize> {
        self.buildings.iter().position(|b| b.building_id == id)
    }

    /// Block group a location belongs to.
    pub fn block_group_of(&self, location: Location) -> usize {
        match location {
            Location::Building(i) => self.buildings[i].block_group,
            Location::BlockGroup(i) => i,
        }
    }

    /// Commute origin point: building centroid, or block-group centroid for outskirts dwellings.
    pub fn anchor(&self, location: Location) -> Point {
        match location {
            Location::Building(i) => self.buildings[i].centroid,
            Location::BlockGroup(i) => self.block_groups[i].centroid,
        }
    }

    pub fn city_of(&self, location: Location) -> &str {
        &self.block_groups[self.block_group_of(location)].city
    }

    /// Identifier of a location as it appears in the input layers.
    pub fn location_id(&self, location: Location) -> &str {
        match location {
            Location::Building(i) => &self.buildings[i].building_id,
            Location::BlockGroup(i) => &self.block_groups[i].geoid,
        }
    }

    /// Resolves a building id or GEOID (buildings take precedence).
    pub fn resolve(&self, id: &str) -> Option<Location> {
        self.building_index(id)
            .map(Location::Building)
            .or_else(|| self.block_group_index(id).map(Location::BlockGroup))
    }

    pub fn nonresidential(&self) -> impl Iterator<Item = usize> + '_ {
        self.buildings
            .iter()
            .enumerate()
            .filter(|(_, b)| !b.is_residential())
            .map(|(i, _)| i)
    }

    /// Distinct city names, sorted.
    pub fn cities(&self) -> Vec<String> {
        let mut cities: Vec<String> = self.block_groups.iter().map(|b| b.city.clone()).collect();
        cities.sort();
        cities.dedup();
        cities
    }
}

/// Door-to-door minutes: waiting time plus in-vehicle time at the mode's mean speed.
pub fn travel_time(distance_m: f64, mode: &MobilityMode) -> f64 {
    mode.waiting_time + 60.0 * (distance_m / 1000.0) / mode.mean_speed
}
