//! Model inputs and deficit labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::DailyRecord;

pub const N_FEATURES: usize = 7;
pub const N_TARGETS: usize = 2;

/// Canonical input order. Changing it invalidates existing checkpoints.
pub const FEATURE_NAMES: [&str; N_FEATURES] = ["distance", "sleep", "bmi", "age", "breakfast", "meal", "gender"];

/// Below this, a fitted standard deviation is replaced by 1.
pub const ZERO_VARIANCE_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub distance_km: f64,
    pub sleep_hrs: f64,
    pub bmi: f64,
    pub age: f64,
    pub breakfast: f64,
    /// Lunch + dinner, in {0, 1, 2}.
    pub meal: f64,
    pub gender: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.distance_km,
            self.sleep_hrs,
            self.bmi,
            self.age,
            self.breakfast,
            self.meal,
            self.gender,
        ]
    }
}

/// Drops steps, folds height and weight into BMI, and lunch and dinner into a
/// meal count.
pub fn engineer(record: &DailyRecord) -> Result<FeatureVector> {
    if !(record.height_cm.is_finite() && record.height_cm > 0.0) {
        return Err(Error::InvalidRecord(format!(
            "height_cm {} must be > 0",
            record.height_cm
        )));
    }
    let height_m = record.height_cm / 100.0;
    Ok(FeatureVector {
        distance_km: record.distance_km,
        sleep_hrs: record.sleep_hrs,
        bmi: record.weight_kg / (height_m * height_m),
        age: record.age as f64,
        breakfast: record.breakfast as f64,
        meal: (record.lunch + record.dinner) as f64,
        gender: record.gender as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: [f64; N_FEATURES],
    /// Population standard deviation, guarded against zero.
    pub std: [f64; N_FEATURES],
    pub count: u64,
}

impl ScalerStats {
    pub fn fit(rows: &[[f64; N_FEATURES]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("cannot fit a scaler on zero rows".into()));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; N_FEATURES];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; N_FEATURES];
        for r in rows {
            for i in 0..N_FEATURES {
                let d = r[i] - mean[i];
                var[i] += d * d;
            }
        }
        let std = var.map(|v| {
            let s = (v / n).sqrt();
            if s < ZERO_VARIANCE_GUARD {
                1.0
            } else {
                s
            }
        });
        Ok(Self {
            mean,
            std,
            count: rows.len() as u64,
        })
    }

    pub fn fit_features(rows: &[FeatureVector]) -> Result<Self> {
        let arrays: Vec<_> = rows.iter().map(FeatureVector::to_array).collect();
        Self::fit(&arrays)
    }

    pub fn transform(&self, x: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        std::array::from_fn(|i| (x[i] - self.mean[i]) / self.std[i])
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.iter().chain(&self.std).any(|v| !v.is_finite()) || self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument(
                "scaler statistics must be finite with std > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeficitPair {
    pub sleep: f64,
    pub distance: f64,
}

impl DeficitPair {
    pub fn to_array(&self) -> [f64; N_TARGETS] {
        [self.sleep, self.distance]
    }

    pub fn from_array(a: [f64; N_TARGETS]) -> Self {
        Self {
            sleep: a[0],
            distance: a[1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdealRanges {
    pub sleep_hrs: [f64; 2],
    pub distance_km: [f64; 2],
}

impl Default for IdealRanges {
    fn default() -> Self {
        Self {
            sleep_hrs: [7.0, 9.0],
            distance_km: [5.0, 8.0],
        }
    }
}

impl IdealRanges {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        for (k, [lo, hi]) in [
            ("ideal_sleep_hrs", self.sleep_hrs),
            ("ideal_distance_km", self.distance_km),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(format!("{prefix}.{k}"), "need finite min < max"));
            }
        }
        Ok(())
    }
}

/// Signed distance from `[lo, hi]`: positive below, negative above, zero inside.
pub fn deficit(x: f64, [lo, hi]: [f64; 2]) -> f64 {
    if x < lo {
        lo - x
    } else if x > hi {
        -(x - hi)
    } else {
        0.0
    }
}

pub fn deficit_labels(record: &DailyRecord, ranges: &IdealRanges) -> DeficitPair {
    DeficitPair {
        sleep: deficit(record.sleep_hrs, ranges.sleep_hrs),
        distance: deficit(record.distance_km, ranges.distance_km),
    }
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;
    use proptest::prelude::*;

    use super::*;

    fn paper_row() -> DailyRecord {
        DailyRecord {
            date: NaiveDate::from_ymd_opt(2025, 4, 18).unwrap(),
            steps: 9657,
            distance_km: 4.83,
            sleep_hrs: 8.04,
            breakfast: 0,
            lunch: 1,
            dinner: 1,
            age: 22,
            height_cm: 165.0,
            weight_kg: 59.0,
            gender: 0,
            user_id: 0,
        }
    }

    #[test]
    fn engineer_example_row() {
        let f = engineer(&paper_row()).unwrap();
        assert!((f.bmi - 21.67).abs() <= 0.01, "bmi {}", f.bmi);
        assert_eq!(f.meal, 2.0);
        assert_eq!(f.breakfast, 0.0);
        assert_eq!(f.distance_km, 4.83);
        assert_eq!(f.gender, 0.0);
    }

    #[test]
    fn skipped_meals_and_steps_ignored() {
        let mut r = paper_row();
        r.lunch = 0;
        r.dinner = 0;
        assert_eq!(engineer(&r).unwrap().meal, 0.0);
        let a = engineer(&r).unwrap();
        r.steps = 1;
        assert_eq!(engineer(&r).unwrap(), a);
    }

    #[test]
    fn non_positive_height_rejected() {
        let mut r = paper_row();
        r.height_cm = 0.0;
        assert!(matches!(engineer(&r), Err(Error::InvalidRecord(_))));
    }

    fn column_scaler(col: &[f64]) -> ScalerStats {
        let rows: Vec<[f64; N_FEATURES]> = col.iter().map(|&v| [v; N_FEATURES]).collect();
        ScalerStats::fit(&rows).unwrap()
    }

    #[test]
    fn scaler_examples() {
        let s = column_scaler(&[1.0, 2.0, 3.0]);
        assert_eq!(s.transform(&[2.0; N_FEATURES])[0], 0.0);
        let s = column_scaler(&[5.0, 5.0, 5.0]);
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.transform(&[5.0; N_FEATURES])[0], 0.0);
        let s = column_scaler(&[0.0, 2.0]);
        assert_eq!((s.mean[0], s.std[0]), (1.0, 1.0));
        assert_eq!(s.transform(&[2.0; N_FEATURES])[0], 1.0);
        assert!(ScalerStats::fit(&[]).is_err());
    }

    #[test]
    fn deficit_examples() {
        let r = IdealRanges::default();
        assert_eq!(deficit(8.0, r.sleep_hrs), 0.0);
        assert_eq!(deficit(6.0, r.sleep_hrs), 1.0);
        assert_eq!(deficit(9.5, r.distance_km), -1.5);
    }

    #[test]
    fn deficit_sign_grid() {
        let range = [7.0, 9.0];
        for i in 0..=240 {
            let x = i as f64 * 0.05;
            let d = deficit(x, range);
            let expected = if x < 7.0 {
                1.0
            } else if x > 9.0 {
                -1.0
            } else {
                0.0
            };
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            assert_eq!(sign, expected, "x = {x}");
        }
    }

    proptest! {
        #[test]
        fn standardized_fit_set_has_zero_mean_unit_std(
            rows in prop::collection::vec(prop::array::uniform7(-1e3f64..1e3), 2..60)
        ) {
            let s = ScalerStats::fit(&rows).unwrap();
            let t: Vec<_> = rows.iter().map(|r| s.transform(r)).collect();
            let n = rows.len() as f64;
            for i in 0..N_FEATURES {
                let m = t.iter().map(|r| r[i]).sum::<f64>() / n;
                prop_assert!(m.abs() < 1e-9);
                let raw_var = rows.iter().map(|r| (r[i] - s.mean[i]).powi(2)).sum::<f64>() / n;
                if raw_var.sqrt() >= ZERO_VARIANCE_GUARD {
                    let sd = (t.iter().map(|r| (r[i] - m).powi(2)).sum::<f64>() / n).sqrt();
                    prop_assert!((sd - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
