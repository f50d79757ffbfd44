//! Reading and writing the geographic bundle: one JSON feature collection per
//! layer, each declaring its coordinate reference system in a `crs` member.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{BlockGroup, Building, Geography, RoadNetwork, Usage};
use crate::error::{Error, Result};
use crate::geometry::{Area, Crs, Point, Polygon, Projection};

/// Layer name and file name, in load order.
pub const LAYER_FILES: [(&str, &str); 5] = [
    ("block_groups", "block_groups.geojson"),
    ("vacancies", "vacancies.geojson"),
    ("buildings", "buildings.geojson"),
    ("transit", "transit.geojson"),
    ("roads", "roads.geojson"),
];

struct Layer {
    file: String,
    crs: Crs,
    features: Vec<Value>,
}

fn read_layer(dir: &Path, layer: &str, file: &str) -> Result<Layer> {
    let path = dir.join(file);
    if !path.is_file() {
        return Err(Error::MissingLayer {
            layer: layer.to_string(),
            path,
        });
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::File {
        file: file.to_string(),
        message: format!("not valid JSON: {e}"),
    })?;
    let file_err = |message: &str| Error::File {
        file: file.to_string(),
        message: message.to_string(),
    };
    let crs_name = match doc.get("crs") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Object(o)) => o
            .get("properties")
            .and_then(|p| p.get("name"))
            .and_then(Value::as_str)
            .ok_or_else(|| file_err("`crs` object lacks properties.name"))?
            .to_string(),
        _ => return Err(file_err("missing required `crs` member")),
    };
    let crs = Crs::parse(&crs_name)
        .ok_or_else(|| file_err(&format!("unsupported crs `{crs_name}` (no projection known)")))?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| file_err("missing `features` array"))?
        .clone();
    Ok(Layer {
        file: file.to_string(),
        crs,
        features,
    })
}

struct Feature<'a> {
    file: &'a str,
    id: String,
    props: Map<String, Value>,
    geometry: Option<&'a Value>,
}

impl<'a> Feature<'a> {
    fn new(file: &'a str, index: usize, raw: &'a Value, id_key: Option<&str>) -> Self {
        let props = raw
            .get("properties")
            .and_then(Value::as_object)
            .cloned()
            .unwrap_or_default();
        let id = id_key
            .and_then(|k| props.get(k))
            .or_else(|| raw.get("id"))
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .unwrap_or_else(|| format!("#{index}"));
        let geometry = raw.get("geometry").filter(|g| !g.is_null());
        Feature {
            file,
            id,
            props,
            geometry,
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Feature {
            file: self.file.to_string(),
            feature: self.id.clone(),
            message: message.into(),
        }
    }

    fn string(&self, key: &str) -> Result<String> {
        match self.props.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            _ => Err(self.err(format!("missing string attribute `{key}`"))),
        }
    }

    fn count(&self, key: &str) -> Result<u32> {
        match self.props.get(key) {
            None | Some(Value::Null) => Ok(0),
            Some(v) => v
                .as_u64()
                .and_then(|n| u32::try_from(n).ok())
                .ok_or_else(|| self.err(format!("`{key}` must be a nonnegative integer"))),
        }
    }

    fn number(&self, key: &str) -> Result<f64> {
        match self.props.get(key) {
            None | Some(Value::Null) => Ok(0.0),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| self.err(format!("`{key}` must be a number"))),
        }
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.props.get(key) {
            None | Some(Value::Null) => Ok(false),
            Some(Value::Bool(b)) => Ok(*b),
            Some(Value::Number(n)) if n.as_u64() == Some(0) || n.as_u64() == Some(1) => {
                Ok(n.as_u64() == Some(1))
            }
            _ => Err(self.err(format!("`{key}` must be a boolean"))),
        }
    }

    fn modes(&self) -> Result<Vec<String>> {
        let raw = self
            .props
            .get("mobility_allowed")
            .ok_or_else(|| self.err("missing `mobility_allowed`"))?;
        let list: Vec<String> = match raw {
            Value::Array(items) => items
                .iter()
                .map(|v| v.as_str().map(str::to_string))
                .collect::<Option<_>>()
                .ok_or_else(|| self.err("`mobility_allowed` must list mode ids"))?,
            Value::String(s) => s
                .split([',', ';', ' '])
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect(),
            _ => return Err(self.err("`mobility_allowed` must list mode ids")),
        };
        if list.is_empty() {
            return Err(self.err("`mobility_allowed` is empty"));
        }
        Ok(list)
    }

    fn geometry_type(&self) -> Option<&str> {
        self.geometry?.get("type")?.as_str()
    }

    fn coordinates(&self) -> Result<&Value> {
        self.geometry
            .and_then(|g| g.get("coordinates"))
            .ok_or_else(|| self.err("missing geometry"))
    }
}

struct Projector {
    projection: Option<Projection>,
}

impl Projector {
    fn point(&self, f: &Feature, raw: &Value) -> Result<Point> {
        let xy = raw
            .as_array()
            .filter(|a| a.len() >= 2)
            .and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)))
            .ok_or_else(|| f.err("malformed coordinate"))?;
        Ok(match self.projection {
            Some(p) => p.project(xy.0, xy.1),
            None => Point::new(xy.0, xy.1),
        })
    }

    fn line(&self, f: &Feature, raw: &Value) -> Result<Vec<Point>> {
        raw.as_array()
            .ok_or_else(|| f.err("malformed coordinate list"))?
            .iter()
            .map(|c| self.point(f, c))
            .collect()
    }

    fn ring(&self, f: &Feature, raw: &Value) -> Result<Vec<Point>> {
        let mut ring = self.line(f, raw)?;
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        if ring.len() < 3 {
            return Err(f.err("polygon ring needs at least 3 distinct vertices"));
        }
        Ok(ring)
    }

    fn polygon(&self, f: &Feature, raw: &Value) -> Result<Polygon> {
        let rings = raw
            .as_array()
            .filter(|r| !r.is_empty())
            .ok_or_else(|| f.err("polygon without rings"))?;
        let exterior = self.ring(f, &rings[0])?;
        let holes = rings[1..]
            .iter()
            .map(|r| self.ring(f, r))
            .collect::<Result<_>>()?;
        Ok(Polygon { exterior, holes })
    }

    fn area(&self, f: &Feature) -> Result<Area> {
        let coords = f.coordinates()?;
        let parts = match f.geometry_type() {
            Some("Polygon") => vec![self.polygon(f, coords)?],
            Some("MultiPolygon") => coords
                .as_array()
                .ok_or_else(|| f.err("malformed MultiPolygon"))?
                .iter()
                .map(|p| self.polygon(f, p))
                .collect::<Result<_>>()?,
            other => {
                return Err(f.err(format!(
                    "expected polygonal geometry, found {}",
                    other.unwrap_or("none")
                )))
            }
        };
        Ok(Area { parts })
    }

    fn lines(&self, f: &Feature) -> Result<Vec<Vec<Point>>> {
        let coords = f.coordinates()?;
        match f.geometry_type() {
            Some("LineString") => Ok(vec![self.line(f, coords)?]),
            Some("MultiLineString") => coords
                .as_array()
                .ok_or_else(|| f.err("malformed MultiLineString"))?
                .iter()
                .map(|l| self.line(f, l))
                .collect(),
            other => Err(f.err(format!(
                "expected line geometry, found {}",
                other.unwrap_or("none")
            ))),
        }
    }
}

fn collect_lonlat(value: &Value, acc: &mut Vec<(f64, f64)>) {
    match value {
        Value::Array(items) if items.len() >= 2 && items[0].is_number() && items[1].is_number() => {
            acc.push((items[0].as_f64().unwrap(), items[1].as_f64().unwrap()));
        }
        Value::Array(items) => items.iter().for_each(|v| collect_lonlat(v, acc)),
        _ => {}
    }
}

fn reference_point(layer: &Layer) -> Option<Projection> {
    let mut coords = Vec::new();
    for f in &layer.features {
        if let Some(c) = f.get("geometry").and_then(|g| g.get("coordinates")) {
            collect_lonlat(c, &mut coords);
        }
    }
    if coords.is_empty() {
        return None;
    }
    let fold = |sel: fn(&(f64, f64)) -> f64| {
        let lo = coords.iter().map(sel).fold(f64::INFINITY, f64::min);
        let hi = coords.iter().map(sel).fold(f64::NEG_INFINITY, f64::max);
        (lo + hi) / 2.0
    };
    Some(Projection {
        lon0: fold(|c| c.0),
        lat0: fold(|c| c.1),
    })
}

fn add_lines(
    network: &mut RoadNetwork,
    feature: &Feature,
    lines: Vec<Vec<Point>>,
    modes: &[String],
) -> Result<()> {
    for line in lines {
        if line.len() < 2 {
            return Err(feature.err("line needs at least 2 vertices"));
        }
        for pair in line.windows(2) {
            let length = pair[0].distance(&pair[1]);
            if !(length > 0.0) {
                return Err(feature.err("zero-length road segment"));
            }
            let a = network.add_node(pair[0]);
            let b = network.add_node(pair[1]);
            if a == b {
                return Err(feature.err("segment shorter than a millimeter"));
            }
            network.add_edge(a, b, length, modes);
        }
    }
    Ok(())
}

/// Loads, validates and cross-references the five layers in `dir`.
pub fn load_geography(dir: &Path) -> Result<Geography> {
    let mut layers = Vec::with_capacity(LAYER_FILES.len());
    for (layer, file) in LAYER_FILES {
        layers.push(read_layer(dir, layer, file)?);
    }
    let lonlat = layers.iter().any(|l| l.crs == Crs::LonLat);
    if lonlat {
        if let Some(local) = layers.iter().find(|l| l.crs == Crs::LocalMeters) {
            return Err(Error::File {
                file: local.file.clone(),
                message: "mixes local:meters with geographic layers; no projection metadata links them"
                    .into(),
            });
        }
    }
    let projector = Projector {
        projection: if lonlat {
            reference_point(&layers[0]).or_else(|| layers.iter().find_map(reference_point))
        } else {
            None
        },
    };
    let [bg_layer, vac_layer, bld_layer, transit_layer, road_layer] = &layers[..] else {
        unreachable!()
    };

    let mut block_groups = Vec::new();
    let mut bg_index: HashMap<String, usize> = HashMap::new();
    for (i, raw) in bg_layer.features.iter().enumerate() {
        let f = Feature::new(&bg_layer.file, i, raw, Some("GEOID"));
        let geoid = f.string("GEOID")?;
        let geometry = projector.area(&f)?;
        let population = match f.props.get("population") {
            None | Some(Value::Null) => BTreeMap::new(),
            Some(Value::Object(map)) => map
                .iter()
                .map(|(k, v)| {
                    v.as_u64()
                        .and_then(|n| u32::try_from(n).ok())
                        .map(|n| (k.clone(), n))
                        .ok_or_else(|| f.err(format!("population[{k}] must be a nonnegative integer")))
                })
                .collect::<Result<_>>()?,
            Some(_) => return Err(f.err("`population` must map profile ids to counts")),
        };
        if bg_index.insert(geoid.clone(), block_groups.len()).is_some() {
            return Err(f.err("duplicate GEOID"));
        }
        let centroid = geometry.centroid();
        block_groups.push(BlockGroup {
            city: f.string("city")?,
            vacant_spaces: 0,
            rent_vacancy: 0.0,
            population,
            has_t: f.flag("has_T")?,
            has_bus: f.flag("has_bus")?,
            centroid,
            geometry,
            geoid,
        });
    }

    let mut seen = HashSet::new();
    for (i, raw) in vac_layer.features.iter().enumerate() {
        let f = Feature::new(&vac_layer.file, i, raw, Some("GEOID"));
        let geoid = f.string("GEOID")?;
        let &bg = bg_index
            .get(&geoid)
            .ok_or_else(|| f.err(format!("unknown GEOID `{geoid}`")))?;
        if !seen.insert(geoid.clone()) {
            return Err(f.err("duplicate vacancy record"));
        }
        if let Some(t) = f.geometry_type() {
            if t != "Polygon" && t != "MultiPolygon" {
                return Err(f.err(format!("expected polygonal geometry, found {t}")));
            }
        }
        let vacant = f.count("vacant_spaces")?;
        let rent = f.number("rent_vacancy")?;
        if vacant > 0 && !(rent > 0.0) {
            return Err(f.err("rent_vacancy must be positive when vacant_spaces > 0"));
        }
        block_groups[bg].vacant_spaces = vacant;
        block_groups[bg].rent_vacancy = rent;
    }

    let mut buildings = Vec::new();
    let mut building_ids = HashSet::new();
    for (i, raw) in bld_layer.features.iter().enumerate() {
        let f = Feature::new(&bld_layer.file, i, raw, Some("building_id"));
        let associated = f.string("associated_block_group")?;
        let &bg = bg_index
            .get(&associated)
            .ok_or_else(|| f.err(format!("associated_block_group `{associated}` not found")))?;
        let geometry = projector.area(&f)?;
        let usage = match f.props.get("usage").and_then(Value::as_str) {
            Some("residential") => Usage::Residential,
            Some("nonresidential") => Usage::Nonresidential,
            _ => return Err(f.err("`usage` must be residential or nonresidential")),
        };
        let mut vacant = f.count("vacant_spaces")?;
        if usage == Usage::Nonresidential {
            vacant = 0;
        }
        let rent = f.number("rent_vacancy")?;
        if vacant > 0 && !(rent > 0.0) {
            return Err(f.err("rent_vacancy must be positive when vacant_spaces > 0"));
        }
        if !building_ids.insert(f.id.clone()) {
            return Err(f.err("duplicate building_id"));
        }
        let centroid = geometry.centroid();
        buildings.push(Building {
            building_id: f.id.clone(),
            geometry,
            associated_block_group: associated,
            block_group: bg,
            vacant_spaces: vacant,
            rent_vacancy: rent,
            usage,
            centroid,
        });
    }

    let mut network = RoadNetwork::new();
    for (i, raw) in road_layer.features.iter().enumerate() {
        let f = Feature::new(&road_layer.file, i, raw, None);
        let modes = f.modes()?;
        let lines = projector.lines(&f)?;
        add_lines(&mut network, &f, lines, &modes)?;
    }

    // Stops flag the block group containing them; lines become mode-tagged edges.
    for (i, raw) in transit_layer.features.iter().enumerate() {
        let f = Feature::new(&transit_layer.file, i, raw, None);
        let modes = f.modes()?;
        match f.geometry_type() {
            Some("Point") => {
                let p = projector.point(&f, f.coordinates()?)?;
                let Some(bg) = block_groups.iter_mut().find(|b| b.geometry.contains(&p)) else {
                    continue;
                };
                for m in &modes {
                    match m.as_str() {
                        "T" => bg.has_t = true,
                        "bus" => bg.has_bus = true,
                        _ => {}
                    }
                }
            }
            Some("LineString") | Some("MultiLineString") => {
                let lines = projector.lines(&f)?;
                add_lines(&mut network, &f, lines, &modes)?;
            }
            other => {
                return Err(f.err(format!(
                    "transit features must be points or lines, found {}",
                    other.unwrap_or("none")
                )))
            }
        }
    }

    Ok(Geography {
        block_groups,
        buildings,
        network,
    })
}

fn ring_json(ring: &[Point]) -> Value {
    let mut coords: Vec<Value> = ring.iter().map(|p| json!([p.x, p.y])).collect();
    if let Some(first) = coords.first().cloned() {
        coords.push(first);
    }
    Value::Array(coords)
}

/// Feature geometry for an area, in the input format.
pub(crate) fn area_json(area: &Area) -> Value {
    let polys: Vec<Value> = area
        .parts
        .iter()
        .map(|p| {
            let mut rings = vec![ring_json(&p.exterior)];
            rings.extend(p.holes.iter().map(|h| ring_json(h)));
            Value::Array(rings)
        })
        .collect();
    if polys.len() == 1 {
        json!({"type": "Polygon", "coordinates": polys[0]})
    } else {
        json!({"type": "MultiPolygon", "coordinates": polys})
    }
}

pub fn block_group_feature(bg: &BlockGroup) -> Value {
    json!({
        "type": "Feature",
        "properties": {
            "GEOID": bg.geoid,
            "city": bg.city,
            "population": bg.population,
            "has_T": bg.has_t,
            "has_bus": bg.has_bus,
        },
        "geometry": area_json(&bg.geometry),
    })
}

pub fn building_feature(b: &Building) -> Value {
    json!({
        "type": "Feature",
        "properties": {
            "building_id": b.building_id,
            "associated_block_group": b.associated_block_group,
            "vacant_spaces": b.vacant_spaces,
            "rent_vacancy": b.rent_vacancy,
            "usage": b.usage,
        },
        "geometry": area_json(&b.geometry),
    })
}

/// A feature collection in the input format.
pub fn collection(features: Vec<Value>) -> Value {
    json!({"type": "FeatureCollection", "crs": Crs::LocalMeters.name(), "features": features})
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the model back out as a bundle in local meters. Transit stops are
/// already folded into the block-group flags and transit lines into the road
/// edges, so the transit layer is written empty.
pub fn write_geography(geo: &Geography, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bgs = geo.block_groups.iter().map(block_group_feature).collect();
    let vacancies = geo
        .block_groups
        .iter()
        .map(|bg| {
            json!({
                "type": "Feature",
                "properties": {
                    "GEOID": bg.geoid,
                    "vacant_spaces": bg.vacant_spaces,
                    "rent_vacancy": bg.rent_vacancy,
                },
                "geometry": Value::Null,
            })
        })
        .collect();
    let buildings = geo.buildings.iter().map(building_feature).collect();
    let net = &geo.network;
    let roads = net
        .edges()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let (a, b) = (net.nodes()[e.from], net.nodes()[e.to]);
            json!({
                "type": "Feature",
                "properties": {"mobility_allowed": net.edge_modes(i)},
                "geometry": {"type": "LineString", "coordinates": [[a.x, a.y], [b.x, b.y]]},
            })
        })
        .collect();
    let layers = [bgs, vacancies, buildings, Vec::new(), roads];
    for ((_, file), features) in LAYER_FILES.iter().zip(layers) {
        write_json(&dir.join(file), &collection(features))?;
    }
    Ok(())
}
