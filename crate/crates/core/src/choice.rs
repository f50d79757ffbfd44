//! Scoring of commute modes and housing options, and Shannon-Weaver diversity.
//!
//! Every feature entering a score is scaled into [0, 1] (cost, time and rent
//! are divided by scenario reference values and clamped), so each weight
//! multiplies a comparable quantity.

use serde::{Deserialize, Serialize};

use crate::geodata::travel_time;
use crate::population::{HousingCriteria, MobilityCriteria, MobilityMode};

/// Reference scales for commute cost, commute time and rent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConstants {
    /// Currency per trip.
    #[serde(default = "default_cost_ref")]
    pub cost_ref: f64,
    /// Minutes.
    #[serde(default = "default_time_ref")]
    pub time_ref: f64,
    /// Currency per month.
    #[serde(default = "default_rent_ref")]
    pub rent_ref: f64,
}

fn default_cost_ref() -> f64 {
    10.0
}
fn default_time_ref() -> f64 {
    60.0
}
fn default_rent_ref() -> f64 {
    4000.0
}

impl Default for NormalizationConstants {
    fn default() -> Self {
        NormalizationConstants {
            cost_ref: default_cost_ref(),
            time_ref: default_time_ref(),
            rent_ref: default_rent_ref(),
        }
    }
}

impl NormalizationConstants {
    pub fn is_valid(&self) -> bool {
        [self.cost_ref, self.time_ref, self.rent_ref]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEvaluation {
    /// Index into the scenario's mode table.
    pub mode: usize,
    pub distance: f64,
    /// Currency per trip.
    pub cost: f64,
    /// Minutes.
    pub time: f64,
    pub score: f64,
}

pub fn evaluate_mode(
    criteria: &MobilityCriteria,
    mode_index: usize,
    mode: &MobilityMode,
    distance: f64,
    consts: &NormalizationConstants,
) -> ModeEvaluation {
    let cost = mode.price_per_km * distance / 1000.0;
    let time = travel_time(distance, mode);
    let score = criteria.w_price * (cost / consts.cost_ref).min(1.0)
        + criteria.w_time * (time / consts.time_ref).min(1.0)
        + criteria.w_difficulty * mode.difficulty
        + criteria.w_pattern * mode.pattern;
    ModeEvaluation {
        mode: mode_index,
        distance,
        cost,
        time,
        score,
    }
}

/// Linear score of one commute option.
pub fn mode_score(
    criteria: &MobilityCriteria,
    mode: &MobilityMode,
    distance: f64,
    consts: &NormalizationConstants,
) -> f64 {
    evaluate_mode(criteria, 0, mode, distance, consts).score
}

/// Best option among `(mode index, distance)` candidates; equal scores are
/// resolved by access kind (walk, bike, bus, T, car) and then mode id, so
/// the candidate order never matters. `None` when there are no candidates.
pub fn choose_mode(
    criteria: &MobilityCriteria,
    modes: &[MobilityMode],
    candidates: impl IntoIterator<Item = (usize, f64)>,
    consts: &NormalizationConstants,
) -> Option<ModeEvaluation> {
    let mut best: Option<ModeEvaluation> = None;
    for (i, distance) in candidates {
        let eval = evaluate_mode(criteria, i, &modes[i], distance, consts);
        let better = match &best {
            None => true,
            Some(b) => {
                eval.score > b.score
                    || (eval.score == b.score
                        && (modes[i].access, &modes[i].mode_id)
                            < (modes[b.mode].access, &modes[b.mode].mode_id))
            }
        };
        if better {
            best = Some(eval);
        }
    }
    best
}

/// Shannon-Weaver index `-Σ p ln p` over the positive counts; `None` if every count is zero.
pub fn shannon_diversity<I>(counts: I) -> Option<f64>
where
    I: IntoIterator,
    I::Item: Into<f64>,
{
    let counts: Vec<f64> = counts.into_iter().map(Into::into).filter(|&c| c > 0.0).collect();
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let h = -counts
        .iter()
        .map(|c| {
            let p = c / total;
            p * p.ln()
        })
        .sum::<f64>();
    Some(h.max(0.0))
}

/// Diversity scaled into [0, 1] by `ln k`; zero when there is a single profile.
pub fn normalized_diversity(diversity: f64, k_profiles: usize) -> f64 {
    if k_profiles < 2 {
        0.0
    } else {
        diversity / (k_profiles as f64).ln()
    }
}

/// Housing score with the zone test already resolved.
pub fn housing_score_terms(
    criteria: &HousingCriteria,
    rent: f64,
    in_preferred_zone: bool,
    best_mode_score: f64,
    unit_diversity: f64,
    k_profiles: usize,
    consts: &NormalizationConstants,
) -> f64 {
    let zone = if in_preferred_zone { criteria.zone_weight } else { 0.0 };
    criteria.w_price * (rent / consts.rent_ref).min(1.0)
        + criteria.diversity_acceptance * normalized_diversity(unit_diversity, k_profiles)
        + zone
        + best_mode_score
}

/// Housing score: rent, diversity of the unit, zone preference, plus the score
/// of the best commute mode from that dwelling.
pub fn housing_score(
    criteria: &HousingCriteria,
    rent: f64,
    city: &str,
    best_mode: &ModeEvaluation,
    unit_diversity: f64,
    k_profiles: usize,
    consts: &NormalizationConstants,
) -> f64 {
    housing_score_terms(
        criteria,
        rent,
        city == criteria.preferred_zone,
        best_mode.score,
        unit_diversity,
        k_profiles,
        consts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::Access;

    const CONSTS: NormalizationConstants = NormalizationConstants {
        cost_ref: 10.0,
        time_ref: 60.0,
        rent_ref: 4000.0,
    };

    // $60,000-$99,999 mobility weights
    const MIDDLE: MobilityCriteria = MobilityCriteria {
        w_price: -0.7,
        w_time: -0.85,
        w_difficulty: -0.75,
        w_pattern: 0.8,
    };

    fn bus() -> MobilityMode {
        MobilityMode {
            mode_id: "bus".into(),
            price_per_km: 0.1,
            mean_speed: 20.0,
            waiting_time: 7.0,
            difficulty: 0.3,
            pattern: 0.4,
            access: Access::PublicBus,
        }
    }

    fn walk() -> MobilityMode {
        MobilityMode {
            mode_id: "walk".into(),
            price_per_km: 0.0,
            mean_speed: 5.0,
            waiting_time: 0.0,
            difficulty: 0.2,
            pattern: 0.5,
            access: Access::Walk,
        }
    }

    #[test]
    fn bus_five_km_terms() {
        let e = evaluate_mode(&MIDDLE, 0, &bus(), 5000.0, &CONSTS);
        assert!((e.cost - 0.5).abs() < 1e-12);
        assert!((e.time - 22.0).abs() < 1e-12);
        // -0.7*0.05 - 0.85*22/60 - 0.75*0.3 + 0.8*0.4
        let hand = -0.035 - 0.85 * 22.0 / 60.0 - 0.225 + 0.32;
        assert!((e.score - hand).abs() < 1e-12);
        assert!((e.score - (-0.251_667)).abs() < 1e-6);
    }

    #[test]
    fn zero_weights_score_zero() {
        let zero = MobilityCriteria {
            w_price: 0.0,
            w_time: 0.0,
            w_difficulty: 0.0,
            w_pattern: 0.0,
        };
        assert_eq!(mode_score(&zero, &bus(), 12_345.0, &CONSTS), 0.0);
    }

    #[test]
    fn zero_distance_leaves_difficulty_and_pattern() {
        let s = mode_score(&MIDDLE, &walk(), 0.0, &CONSTS);
        assert!((s - (-0.75 * 0.2 + 0.8 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn bus_beats_walk_at_five_km() {
        let modes = vec![walk(), bus()];
        // walk: 60 min clamps to 1 -> -0.85 - 0.15 + 0.4 = -0.6
        let w = mode_score(&MIDDLE, &modes[0], 5000.0, &CONSTS);
        assert!((w - (-0.6)).abs() < 1e-12);
        let best = choose_mode(&MIDDLE, &modes, [(0, 5000.0), (1, 5000.0)], &CONSTS).unwrap();
        assert_eq!(best.mode, 1);
    }

    #[test]
    fn singleton_and_empty_sets() {
        let modes = vec![walk(), bus()];
        assert_eq!(choose_mode(&MIDDLE, &modes, [(0, 800.0)], &CONSTS).unwrap().mode, 0);
        assert!(choose_mode(&MIDDLE, &modes, [], &CONSTS).is_none());
    }

    #[test]
    fn identical_modes_tie_to_walk() {
        let mut modes = vec![walk(), bus(), walk(), walk(), walk()];
        for (m, (id, access)) in modes.iter_mut().zip([
            ("walk", Access::Walk),
            ("bus", Access::PublicBus),
            ("car", Access::PrivateCar),
            ("T", Access::PublicT),
            ("bike", Access::PrivateBike),
        ]) {
            *m = MobilityMode {
                mode_id: id.into(),
                access,
                ..walk()
            };
        }
        let order = [2, 4, 1, 3, 0];
        let best = choose_mode(&MIDDLE, &modes, order.iter().map(|&i| (i, 1500.0)), &CONSTS).unwrap();
        assert_eq!(modes[best.mode].mode_id, "walk");
    }

    #[test]
    fn shannon_worked_values() {
        assert!((shannon_diversity([5u32, 5]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(shannon_diversity([10u32]).unwrap(), 0.0);
        assert!((shannon_diversity([1u32, 1, 2]).unwrap() - 1.039_720_770_839_918).abs() < 1e-12);
        assert!(shannon_diversity([0u32, 0]).is_none());
        assert!(shannon_diversity(Vec::<u32>::new()).is_none());
    }

    fn lower_middle() -> HousingCriteria {
        HousingCriteria {
            w_price: -0.8,
            diversity_acceptance: 0.0,
            zone_weight: 0.4,
            preferred_zone: "Cambridge".into(),
        }
    }

    fn best(score: f64) -> ModeEvaluation {
        ModeEvaluation {
            mode: 0,
            distance: 0.0,
            cost: 0.0,
            time: 0.0,
            score,
        }
    }

    #[test]
    fn housing_worked_values() {
        let c = lower_middle();
        let inside = housing_score(&c, 2000.0, "Cambridge", &best(-0.2267), 1.3, 8, &CONSTS);
        assert!((inside - (-0.2267)).abs() < 1e-12);
        let outside = housing_score(&c, 2000.0, "Somerville", &best(-0.2267), 0.2, 8, &CONSTS);
        assert!((outside - (-0.6267)).abs() < 1e-12);
    }

    #[test]
    fn housing_zero_case() {
        let zero = HousingCriteria {
            w_price: 0.0,
            diversity_acceptance: 0.0,
            zone_weight: 0.0,
            preferred_zone: "x".into(),
        };
        assert_eq!(housing_score(&zero, 3000.0, "x", &best(0.0), 1.0, 8, &CONSTS), 0.0);
    }

    #[test]
    fn rent_clamps_at_reference() {
        let c = lower_middle();
        let a = housing_score(&c, 5000.0, "x", &best(0.0), 0.0, 8, &CONSTS);
        let b = housing_score(&c, 9000.0, "x", &best(0.0), 0.0, 8, &CONSTS);
        assert_eq!(a, b);
        assert!((a - (-0.8)).abs() < 1e-12);
    }

    #[test]
    fn single_profile_diversity_term_vanishes() {
        assert_eq!(normalized_diversity(0.0, 1), 0.0);
        assert!((normalized_diversity(8f64.ln(), 8) - 1.0).abs() < 1e-12);
    }
}
