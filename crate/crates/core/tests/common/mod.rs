//! Small hand-built scenario bundles written into temporary directories.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

pub fn smalltown() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/smalltown/scenario.toml")
}

pub fn square(x0: f64, y0: f64, side: f64) -> Value {
    json!([[[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side], [x0, y0]]])
}

pub fn collection(features: Vec<Value>) -> Value {
    json!({"type": "FeatureCollection", "crs": "local:meters", "features": features})
}

pub fn feature(properties: Value, geometry: Value) -> Value {
    json!({"type": "Feature", "properties": properties, "geometry": geometry})
}

pub fn polygon(coords: Value) -> Value {
    json!({"type": "Polygon", "coordinates": coords})
}

pub fn line(points: &[(f64, f64)]) -> Value {
    let coords: Vec<Value> = points.iter().map(|(x, y)| json!([x, y])).collect();
    json!({"type": "LineString", "coordinates": coords})
}

pub fn point(x: f64, y: f64) -> Value {
    json!({"type": "Point", "coordinates": [x, y]})
}

/// Two 1 km block groups side by side: "G1" (city West, x 0..1000) and
/// "G2" (city East, x 1000..2000). Building "W" is the only workplace, in G1;
/// building "H" is a residential building in G2. A single street joins the
/// two block-group centroids and passes the building centroids.
pub struct World {
    pub g1_vacancies: u32,
    pub g1_rent: f64,
    pub g2_vacancies: u32,
    pub g2_rent: f64,
    pub h_vacancies: u32,
    pub h_rent: f64,
    pub bus_at: Vec<&'static str>,
    pub profiles: Vec<(&'static str, f64, f64, f64)>,
    pub housing: Vec<String>,
    pub mobility: Vec<String>,
    pub modes: Vec<&'static str>,
    pub n_agents: usize,
    pub seed: u64,
    pub convergence: String,
}

impl Default for World {
    fn default() -> Self {
        World {
            g1_vacancies: 5,
            g1_rent: 2000.0,
            g2_vacancies: 5,
            g2_rent: 1500.0,
            h_vacancies: 5,
            h_rent: 2000.0,
            bus_at: vec!["G1", "G2"],
            profiles: vec![("low", 0.5, 0.0, 0.0), ("high", 0.5, 1.0, 1.0)],
            housing: vec![
                "low,-1.0,0.0,0.3,East".into(),
                "high,-0.4,0.0,0.6,West".into(),
            ],
            mobility: vec![
                "low,-1.0,-0.7,-0.6,0.5".into(),
                "high,-0.7,-0.85,-0.75,0.8".into(),
            ],
            modes: vec![
                "walk,0,5,0,0.2,0.5,walk",
                "bike,0.01,5,0,0.15,0.5,private_bike",
                "bus,0.1,20,7,0.3,0.4,public_bus",
                "car,0.32,30,0,0.5,1,private_car",
            ],
            n_agents: 10,
            seed: 1,
            convergence: "epsilon = 0.01\nwindow = 3\nmax_iterations = 500\n".into(),
        }
    }
}

fn write_json(path: &Path, value: &Value) {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

impl World {
    pub fn geo_layers(&self) -> Vec<(&'static str, Value)> {
        let bg = |geoid: &str, city: &str, x0: f64| {
            feature(
                json!({"GEOID": geoid, "city": city, "population": {"low": 10, "high": 10}}),
                polygon(square(x0, 0.0, 1000.0)),
            )
        };
        let vac = |geoid: &str, v: u32, r: f64| feature(json!({"GEOID": geoid, "vacant_spaces": v, "rent_vacancy": r}), Value::Null);
        let stops: Vec<Value> = self
            .bus_at
            .iter()
            .map(|g| {
                let x = if *g == "G1" { 500.0 } else { 1500.0 };
                feature(json!({"mobility_allowed": ["bus"]}), point(x, 500.0))
            })
            .collect();
        vec![
            ("block_groups.geojson", collection(vec![bg("G1", "West", 0.0), bg("G2", "East", 1000.0)])),
            (
                "vacancies.geojson",
                collection(vec![vac("G1", self.g1_vacancies, self.g1_rent), vac("G2", self.g2_vacancies, self.g2_rent)]),
            ),
            (
                "buildings.geojson",
                collection(vec![
                    feature(
                        json!({"building_id": "W", "associated_block_group": "G1", "usage": "nonresidential"}),
                        polygon(square(650.0, 450.0, 100.0)),
                    ),
                    feature(
                        json!({"building_id": "H", "associated_block_group": "G2", "usage": "residential",
                               "vacant_spaces": self.h_vacancies, "rent_vacancy": self.h_rent}),
                        polygon(square(1150.0, 450.0, 100.0)),
                    ),
                ]),
            ),
            ("transit.geojson", collection(stops)),
            (
                "roads.geojson",
                collection(vec![feature(
                    json!({"mobility_allowed": ["walk", "bike", "bus", "car"]}),
                    line(&[(500.0, 500.0), (700.0, 500.0), (1200.0, 500.0), (1500.0, 500.0)]),
                )]),
            ),
        ]
    }

    /// Writes the full scenario into `dir` and returns the scenario file path.
    pub fn write(&self, dir: &Path) -> PathBuf {
        let geo = dir.join("geo");
        fs::create_dir_all(&geo).unwrap();
        for (file, value) in self.geo_layers() {
            write_json(&geo.join(file), &value);
        }
        let mut profiles = String::from("profile_id,proportion,p_car,p_bike\n");
        for (id, p, car, bike) in &self.profiles {
            profiles += &format!("{id},{p},{car},{bike}\n");
        }
        fs::write(dir.join("profiles.csv"), profiles).unwrap();
        fs::write(
            dir.join("housing_criteria.csv"),
            format!("profile_id,w_price,diversity_acceptance,zone_weight,preferred_zone\n{}\n", self.housing.join("\n")),
        )
        .unwrap();
        fs::write(
            dir.join("mobility_criteria.csv"),
            format!("profile_id,w_price,w_time,w_difficulty,w_pattern\n{}\n", self.mobility.join("\n")),
        )
        .unwrap();
        fs::write(
            dir.join("modes.csv"),
            format!(
                "mode_id,price_per_km,mean_speed_kmh,waiting_min,difficulty,pattern,access\n{}\n",
                self.modes.join("\n")
            ),
        )
        .unwrap();
        let scenario = format!(
            "name = \"tiny\"\ngeography = \"geo\"\nprofiles = \"profiles.csv\"\n\
             housing_criteria = \"housing_criteria.csv\"\nmobility_criteria = \"mobility_criteria.csv\"\n\
             modes = \"modes.csv\"\nn_agents = {}\nseed = {}\n\n[convergence]\n{}",
            self.n_agents, self.seed, self.convergence
        );
        let path = dir.join("scenario.toml");
        fs::write(&path, scenario).unwrap();
        path
    }
}
