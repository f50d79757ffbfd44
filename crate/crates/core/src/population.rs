//! Income profiles, behavioral criteria, mobility modes and the synthetic
//! worker population.

use std::path::Path;

use rand::Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{Geography, Location};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncomeProfile {
    pub profile_id: String,
    pub proportion: f64,
    pub p_car: f64,
    pub p_bike: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HousingCriteria {
    /// In [-1, 0].
    pub w_price: f64,
    /// In [-1, 1].
    pub diversity_acceptance: f64,
    /// In [0, 1].
    pub zone_weight: f64,
    pub preferred_zone: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityCriteria {
    /// In [-1, 0].
    pub w_price: f64,
    /// In [-1, 0].
    pub w_time: f64,
    /// In [-1, 0].
    pub w_difficulty: f64,
    /// In [0, 1].
    pub w_pattern: f64,
}

/// How a mode is accessed. The declaration order is the tie-break order
/// used when two modes score the same.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Access {
    #[serde(rename = "walk")]
    Walk,
    #[serde(rename = "private_bike")]
    PrivateBike,
    #[serde(rename = "public_bus")]
    PublicBus,
    #[serde(rename = "public_T")]
    PublicT,
    #[serde(rename = "private_car")]
    PrivateCar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityMode {
    pub mode_id: String,
    pub price_per_km: f64,
    /// km/h
    pub mean_speed: f64,
    /// minutes
    pub waiting_time: f64,
    pub difficulty: f64,
    pub pattern: f64,
    pub access: Access,
}

/// Fixed attributes of a worker agent, decided once at synthesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Worker {
    pub person_id: u32,
    /// Index into the profile list.
    pub profile: usize,
    /// Index of a nonresidential building.
    pub activity_place: usize,
    pub owns_car: bool,
    pub owns_bike: bool,
}

/// Profiles with their criteria, index-aligned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTable {
    pub profiles: Vec<IncomeProfile>,
    pub housing: Vec<HousingCriteria>,
    pub mobility: Vec<MobilityCriteria>,
}

impl ProfileTable {
    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.profiles.iter().position(|p| p.profile_id == id)
    }
}

fn in_range(x: f64, lo: f64, hi: f64) -> bool {
    x.is_finite() && x >= lo && x <= hi
}

pub fn validate_profiles(profiles: &[IncomeProfile]) -> Result<()> {
    if profiles.is_empty() {
        return Err(Error::Validation("at least one income profile is required".into()));
    }
    for p in profiles {
        for (name, v) in [("proportion", p.proportion), ("p_car", p.p_car), ("p_bike", p.p_bike)] {
            if !in_range(v, 0.0, 1.0) {
                return Err(Error::Validation(format!(
                    "profile `{}`: {name} = {v} outside [0, 1]",
                    p.profile_id
                )));
            }
        }
    }
    let total: f64 = profiles.iter().map(|p| p.proportion).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "profile proportions must sum to 1 (got {total})"
        )));
    }
    Ok(())
}

impl HousingCriteria {
    pub fn validate(&self, profile: &str) -> Result<()> {
        let checks = [
            ("w_price", self.w_price, -1.0, 0.0),
            ("diversity_acceptance", self.diversity_acceptance, -1.0, 1.0),
            ("zone_weight", self.zone_weight, 0.0, 1.0),
        ];
        for (name, v, lo, hi) in checks {
            if !in_range(v, lo, hi) {
                return Err(Error::Validation(format!(
                    "housing criteria `{profile}`: {name} = {v} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

impl MobilityCriteria {
    pub fn validate(&self, profile: &str) -> Result<()> {
        let checks = [
            ("w_price", self.w_price, -1.0, 0.0),
            ("w_time", self.w_time, -1.0, 0.0),
            ("w_difficulty", self.w_difficulty, -1.0, 0.0),
            ("w_pattern", self.w_pattern, 0.0, 1.0),
        ];
        for (name, v, lo, hi) in checks {
            if !in_range(v, lo, hi) {
                return Err(Error::Validation(format!(
                    "mobility criteria `{profile}`: {name} = {v} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

impl MobilityMode {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::Validation(format!("mode `{}`: {what}", self.mode_id)))
        };
        if !(self.mean_speed > 0.0 && self.mean_speed.is_finite()) {
            return bad("mean_speed must be positive");
        }
        if !(self.price_per_km >= 0.0 && self.price_per_km.is_finite()) {
            return bad("price_per_km must be nonnegative");
        }
        if !(self.waiting_time >= 0.0 && self.waiting_time.is_finite()) {
            return bad("waiting time must be nonnegative");
        }
        if !in_range(self.difficulty, 0.0, 1.0) || !in_range(self.pattern, 0.0, 1.0) {
            return bad("difficulty and pattern must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Sorts modes into tie-break order (access kind, then id) and checks them.
pub fn validate_modes(modes: &mut [MobilityMode]) -> Result<()> {
    for m in modes.iter() {
        m.validate()?;
    }
    modes.sort_by(|a, b| (a.access, &a.mode_id).cmp(&(b.access, &b.mode_id)));
    for w in modes.windows(2) {
        if w[0].mode_id == w[1].mode_id {
            return Err(Error::Validation(format!("duplicate mode `{}`", w[0].mode_id)));
        }
    }
    if !modes.iter().any(|m| m.access == Access::Walk) {
        return Err(Error::Validation("a walk mode is required".into()));
    }
    Ok(())
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::File {
            file: file.clone(),
            message: e.to_string(),
        })?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Row {
                file: file.clone(),
                line,
                message: match e.kind() {
                    csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                    _ => e.to_string(),
                },
            }
        })?);
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct HousingRow {
    profile_id: String,
    w_price: f64,
    diversity_acceptance: f64,
    zone_weight: f64,
    preferred_zone: String,
}

#[derive(Deserialize)]
struct MobilityRow {
    profile_id: String,
    w_price: f64,
    w_time: f64,
    w_difficulty: f64,
    w_pattern: f64,
}

#[derive(Deserialize)]
struct ModeRow {
    mode_id: String,
    price_per_km: f64,
    mean_speed_kmh: f64,
    waiting_min: f64,
    difficulty: f64,
    pattern: f64,
    access: Access,
}

pub fn read_profiles(path: &Path) -> Result<Vec<IncomeProfile>> {
    let profiles: Vec<IncomeProfile> = read_rows(path)?;
    validate_profiles(&profiles).map_err(|e| Error::File {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(profiles)
}

fn align<R, T>(
    path: &Path,
    profiles: &[IncomeProfile],
    rows: Vec<R>,
    id: impl Fn(&R) -> &str,
    convert: impl Fn(R) -> Result<T>,
) -> Result<Vec<T>> {
    let file = path.display().to_string();
    let mut slots: Vec<Option<T>> = (0..profiles.len()).map(|_| None).collect();
    for (line, row) in rows.into_iter().enumerate() {
        let pid = id(&row).to_string();
        let idx = profiles
            .iter()
            .position(|p| p.profile_id == pid)
            .ok_or_else(|| Error::Row {
                file: file.clone(),
                line: line as u64 + 2,
                message: format!("unknown profile `{pid}`"),
            })?;
        if slots[idx].is_some() {
            return Err(Error::Row {
                file: file.clone(),
                line: line as u64 + 2,
                message: format!("duplicate profile `{pid}`"),
            });
        }
        slots[idx] = Some(convert(row).map_err(|e| Error::Row {
            file: file.clone(),
            line: line as u64 + 2,
            message: e.to_string(),
        })?);
    }
    slots
        .into_iter()
        .zip(profiles)
        .map(|(s, p)| {
            s.ok_or_else(|| Error::File {
                file: file.clone(),
                message: format!("no criteria for profile `{}`", p.profile_id),
            })
        })
        .collect()
}

pub fn read_housing_criteria(path: &Path, profiles: &[IncomeProfile]) -> Result<Vec<HousingCriteria>> {
    let rows: Vec<HousingRow> = read_rows(path)?;
    align(path, profiles, rows, |r| &r.profile_id, |r| {
        let c = HousingCriteria {
            w_price: r.w_price,
            diversity_acceptance: r.diversity_acceptance,
            zone_weight: r.zone_weight,
            preferred_zone: r.preferred_zone,
        };
        c.validate(&r.profile_id)?;
        Ok(c)
    })
}

pub fn read_mobility_criteria(path: &Path, profiles: &[IncomeProfile]) -> Result<Vec<MobilityCriteria>> {
    let rows: Vec<MobilityRow> = read_rows(path)?;
    align(path, profiles, rows, |r| &r.profile_id, |r| {
        let c = MobilityCriteria {
            w_price: r.w_price,
            w_time: r.w_time,
            w_difficulty: r.w_difficulty,
            w_pattern: r.w_pattern,
        };
        c.validate(&r.profile_id)?;
        Ok(c)
    })
}

pub fn read_modes(path: &Path) -> Result<Vec<MobilityMode>> {
    let rows: Vec<ModeRow> = read_rows(path)?;
    let mut modes: Vec<MobilityMode> = rows
        .into_iter()
        .map(|r| MobilityMode {
            mode_id: r.mode_id,
            price_per_km: r.price_per_km,
            mean_speed: r.mean_speed_kmh,
            waiting_time: r.waiting_min,
            difficulty: r.difficulty,
            pattern: r.pattern,
            access: r.access,
        })
        .collect();
    validate_modes(&mut modes).map_err(|e| Error::File {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(modes)
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::File {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_housing_criteria(path: &Path, table: &ProfileTable) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        profile_id: &'a str,
        w_price: f64,
        diversity_acceptance: f64,
        zone_weight: f64,
        preferred_zone: &'a str,
    }
    write_rows(
        path,
        table.profiles.iter().zip(&table.housing).map(|(p, h)| Row {
            profile_id: &p.profile_id,
            w_price: h.w_price,
            diversity_acceptance: h.diversity_acceptance,
            zone_weight: h.zone_weight,
            preferred_zone: &h.preferred_zone,
        }),
    )
}

pub fn write_mobility_criteria(path: &Path, table: &ProfileTable) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        profile_id: &'a str,
        w_price: f64,
        w_time: f64,
        w_difficulty: f64,
        w_pattern: f64,
    }
    write_rows(
        path,
        table.profiles.iter().zip(&table.mobility).map(|(p, m)| Row {
            profile_id: &p.profile_id,
            w_price: m.w_price,
            w_time: m.w_time,
            w_difficulty: m.w_difficulty,
            w_pattern: m.w_pattern,
        }),
    )
}

/// Exact per-profile counts for `n` agents by largest-remainder rounding.
/// Remainder ties go to the earlier profile.
pub fn profile_counts(n: usize, proportions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Builds `n` workers: exact profile counts, a uniformly drawn nonresidential
/// workplace each, and Bernoulli car/bike ownership.
pub fn synthesize_population(
    n: usize,
    profiles: &[IncomeProfile],
    geo: &Geography,
    seed: u64,
) -> Result<Vec<Worker>> {
    validate_profiles(profiles)?;
    let workplaces: Vec<usize> = geo.nonresidential().collect();
    if workplaces.is_empty() {
        return Err(Error::Validation("no nonresidential building to work in".into()));
    }
    let counts = profile_counts(n, &profiles.iter().map(|p| p.proportion).collect::<Vec<_>>());
    let mut rng = rng::substream(seed, rng::POPULATION, 0);
    let mut workers = Vec::with_capacity(n);
    for (profile, &count) in counts.iter().enumerate() {
        let p = &profiles[profile];
        for _ in 0..count {
            let activity_place = workplaces[rng.gen_range(0..workplaces.len())];
            let owns_car = rng.gen_bool(p.p_car);
            let owns_bike = rng.gen_bool(p.p_bike);
            workers.push(Worker {
                person_id: workers.len() as u32,
                profile,
                activity_place,
                owns_car,
                owns_bike,
            });
        }
    }
    Ok(workers)
}

/// Mode indices open to `worker` when living at `home`: walking always,
/// private modes by ownership, public modes only when both the home and
/// workplace block groups are served.
pub fn available_modes(
    worker: &Worker,
    home: Location,
    geo: &Geography,
    modes: &[MobilityMode],
) -> Vec<usize> {
    let home_bg = &geo.block_groups[geo.block_group_of(home)];
    let work_bg = &geo.block_groups[geo.buildings[worker.activity_place].block_group];
    modes
        .iter()
        .enumerate()
        .filter(|(_, m)| match m.access {
            Access::Walk => true,
            Access::PrivateCar => worker.owns_car,
            Access::PrivateBike => worker.owns_bike,
            Access::PublicBus => home_bg.has_bus && work_bg.has_bus,
            Access::PublicT => home_bg.has_t && work_bg.has_t,
        })
        .map(|(i, _)| i)
        .collect()
}
