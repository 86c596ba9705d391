//! Seeded synthetic lifestyle data.
//!
//! A user is a [`UserProfile`] (gender, height, weight, age and a personal
//! stride length) and a run of consecutive [`DailyRecord`]s. Per-feature
//! distributions:
//!
//! | feature   | distribution                                             |
//! |-----------|----------------------------------------------------------|
//! | gender    | Bernoulli(`p_male`), 0 = female, 1 = male                |
//! | height    | Normal, parameters per gender                            |
//! | weight    | Log-normal, median and log-sd per gender                 |
//! | age       | Truncated normal, rounded to whole years                 |
//! | stride    | Normal truncated to positive values, drawn once per user |
//! | steps     | Negative binomial (gamma-Poisson mixture)                |
//! | distance  | steps x stride                                           |
//! | sleep     | Truncated normal                                         |
//! | meals     | independent Bernoulli per meal                           |
//!
//! Every user draws from its own stream derived from `(seed, user_id)`, so the
//! dataset does not depend on iteration order.

use std::io::{Read, Write};

use chrono::{Days, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Stream};

pub const CSV_HEADER: [&str; 12] = [
    "date",
    "steps",
    "distance_km",
    "sleep_hrs",
    "breakfast",
    "lunch",
    "dinner",
    "age",
    "height_cm",
    "weight_kg",
    "gender",
    "user_id",
];

pub const FEMALE: u8 = 0;
pub const MALE: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: u32,
    pub age: u32,
    /// 0 = female, 1 = male.
    pub gender: u8,
    pub height_cm: f64,
    pub weight_kg: f64,
    /// Personal stride length in km per step.
    pub stride_km: f64,
}

/// One user-day of raw measurements. Field names double as the CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub date: NaiveDate,
    pub steps: u64,
    pub distance_km: f64,
    pub sleep_hrs: f64,
    pub breakfast: u8,
    pub lunch: u8,
    pub dinner: u8,
    pub age: u32,
    pub height_cm: f64,
    pub weight_kg: f64,
    pub gender: u8,
    pub user_id: u32,
}

impl DailyRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::InvalidRecord(format!(
                "user {} on {}: {what}",
                self.user_id, self.date
            )))
        };
        if !(self.distance_km.is_finite() && self.distance_km >= 0.0) {
            return bad("distance_km must be finite and >= 0");
        }
        if !(self.sleep_hrs.is_finite() && (0.0..=24.0).contains(&self.sleep_hrs)) {
            return bad("sleep_hrs must lie in [0, 24]");
        }
        if self.breakfast > 1 || self.lunch > 1 || self.dinner > 1 {
            return bad("meal flags must be 0 or 1");
        }
        if self.gender > 1 {
            return bad("gender must be 0 or 1");
        }
        if !(self.height_cm.is_finite() && self.height_cm > 0.0) {
            return bad("height_cm must be > 0");
        }
        if !(self.weight_kg.is_finite() && self.weight_kg > 0.0) {
            return bad("weight_kg must be > 0");
        }
        Ok(())
    }
}

/// All records of one user, in date order.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSeries {
    pub profile: UserProfile,
    pub records: Vec<DailyRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub steps_mean: f64,
    /// Negative-binomial size parameter; variance is `mean + mean^2 / dispersion`.
    pub steps_dispersion: f64,
    pub stride_mean_km: f64,
    pub stride_sd_km: f64,
    pub sleep_mean: f64,
    pub sleep_sd: f64,
    pub sleep_bounds: [f64; 2],
    pub p_breakfast: f64,
    pub p_lunch: f64,
    pub p_dinner: f64,
    pub height_mean_male: f64,
    pub height_sd_male: f64,
    pub height_mean_female: f64,
    pub height_sd_female: f64,
    pub weight_median_male: f64,
    pub weight_log_sd_male: f64,
    pub weight_median_female: f64,
    pub weight_log_sd_female: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub age_bounds: [u32; 2],
    pub p_male: f64,
    pub start_date: NaiveDate,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            steps_mean: 7000.0,
            steps_dispersion: 4.0,
            stride_mean_km: 0.0007,
            stride_sd_km: 0.00005,
            sleep_mean: 7.0,
            sleep_sd: 1.1,
            sleep_bounds: [3.0, 12.0],
            p_breakfast: 0.75,
            p_lunch: 0.90,
            p_dinner: 0.90,
            height_mean_male: 175.0,
            height_sd_male: 7.0,
            height_mean_female: 162.0,
            height_sd_female: 6.0,
            weight_median_male: 70.0,
            weight_log_sd_male: 0.15,
            weight_median_female: 60.0,
            weight_log_sd_female: 0.15,
            age_mean: 21.0,
            age_sd: 2.0,
            age_bounds: [17, 30],
            p_male: 0.5,
            start_date: NaiveDate::from_ymd_opt(2025, 4, 18).expect("valid date"),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("generator.{k}");
        for (k, p) in [
            ("p_breakfast", self.p_breakfast),
            ("p_lunch", self.p_lunch),
            ("p_dinner", self.p_dinner),
            ("p_male", self.p_male),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(key(k), "probability must lie in [0, 1]"));
            }
        }
        for (k, v) in [
            ("steps_mean", self.steps_mean),
            ("steps_dispersion", self.steps_dispersion),
            ("stride_mean_km", self.stride_mean_km),
            ("stride_sd_km", self.stride_sd_km),
            ("sleep_sd", self.sleep_sd),
            ("height_mean_male", self.height_mean_male),
            ("height_sd_male", self.height_sd_male),
            ("height_mean_female", self.height_mean_female),
            ("height_sd_female", self.height_sd_female),
            ("weight_median_male", self.weight_median_male),
            ("weight_log_sd_male", self.weight_log_sd_male),
            ("weight_median_female", self.weight_median_female),
            ("weight_log_sd_female", self.weight_log_sd_female),
            ("age_sd", self.age_sd),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key(k), "must be finite and > 0"));
            }
        }
        let [lo, hi] = self.sleep_bounds;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi && hi <= 24.0) {
            return Err(Error::config(key("sleep_bounds"), "need 0 <= lo < hi <= 24"));
        }
        if !self.sleep_mean.is_finite() {
            return Err(Error::config(key("sleep_mean"), "must be finite"));
        }
        let [alo, ahi] = self.age_bounds;
        if alo >= ahi {
            return Err(Error::config(
                key("age_bounds"),
                "lower bound must be below upper bound",
            ));
        }
        if !self.age_mean.is_finite() {
            return Err(Error::config(key("age_mean"), "must be finite"));
        }
        Ok(())
    }
}

/// Draws from `Normal(mean, sd)` restricted to `[lo, hi]` by rejection. Falls
/// back to clamping after a bounded number of tries so far-tail
/// configurations still terminate.
pub(crate) fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let normal = Normal::new(mean, sd).expect("validated sd");
    for _ in 0..1000 {
        let v = normal.sample(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
    mean.clamp(lo, hi)
}

fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> u8 {
    u8::from(rng.random::<f64>() < p)
}

fn negative_binomial<R: Rng + ?Sized>(rng: &mut R, mean: f64, dispersion: f64) -> u64 {
    let gamma = Gamma::new(dispersion, mean / dispersion).expect("validated parameters");
    let lambda = gamma.sample(rng);
    if !(lambda > 0.0 && lambda.is_finite()) {
        return 0;
    }
    let poisson = Poisson::new(lambda).expect("positive rate");
    poisson.sample(rng) as u64
}

#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// Gender is drawn first; it selects the height and weight parameters.
    pub fn sample_profile(&self, user_id: u32, rng: &mut ChaCha8Rng) -> UserProfile {
        let c = &self.cfg;
        let gender = bernoulli(rng, c.p_male);
        let (h_mean, h_sd, w_median, w_sd) = if gender == MALE {
            (
                c.height_mean_male,
                c.height_sd_male,
                c.weight_median_male,
                c.weight_log_sd_male,
            )
        } else {
            (
                c.height_mean_female,
                c.height_sd_female,
                c.weight_median_female,
                c.weight_log_sd_female,
            )
        };
        let height_cm = truncated_normal(rng, h_mean, h_sd, 1.0, f64::INFINITY);
        let log_w = Normal::new(w_median.ln(), w_sd).expect("validated sd").sample(rng);
        let weight_kg = log_w.exp();
        let [alo, ahi] = c.age_bounds;
        let age = truncated_normal(rng, c.age_mean, c.age_sd, alo as f64, ahi as f64)
            .round()
            .clamp(alo as f64, ahi as f64) as u32;
        let stride_km = truncated_normal(rng, c.stride_mean_km, c.stride_sd_km, f64::MIN_POSITIVE, f64::INFINITY);
        UserProfile {
            user_id,
            age,
            gender,
            height_cm,
            weight_kg,
            stride_km,
        }
    }

    pub fn sample_day(&self, profile: &UserProfile, date: NaiveDate, rng: &mut ChaCha8Rng) -> DailyRecord {
        let c = &self.cfg;
        let steps = negative_binomial(rng, c.steps_mean, c.steps_dispersion);
        let distance_km = steps as f64 * profile.stride_km;
        let [lo, hi] = c.sleep_bounds;
        let sleep_hrs = truncated_normal(rng, c.sleep_mean, c.sleep_sd, lo, hi);
        let breakfast = bernoulli(rng, c.p_breakfast);
        let lunch = bernoulli(rng, c.p_lunch);
        let dinner = bernoulli(rng, c.p_dinner);
        DailyRecord {
            date,
            steps,
            distance_km,
            sleep_hrs,
            breakfast,
            lunch,
            dinner,
            age: profile.age,
            height_cm: profile.height_cm,
            weight_kg: profile.weight_kg,
            gender: profile.gender,
            user_id: profile.user_id,
        }
    }

    /// One user's profile and `days` consecutive records, drawn from the
    /// user's own stream under `(seed, stream)`.
    pub fn generate_user(&self, user_id: u32, days: usize, seed: u64, stream: Stream) -> UserSeries {
        let mut rng = seed::rng(seed, stream, user_id as u64);
        let profile = self.sample_profile(user_id, &mut rng);
        let records = (0..days)
            .map(|d| {
                let date = self.cfg.start_date + Days::new(d as u64);
                self.sample_day(&profile, date, &mut rng)
            })
            .collect();
        UserSeries { profile, records }
    }

    pub fn generate_dataset(&self, n_users: usize, days_per_user: usize, seed: u64) -> Result<Vec<UserSeries>> {
        self.generate_stream(n_users, days_per_user, seed, Stream::User)
    }

    pub(crate) fn generate_stream(
        &self,
        n_users: usize,
        days_per_user: usize,
        seed: u64,
        stream: Stream,
    ) -> Result<Vec<UserSeries>> {
        if n_users == 0 {
            return Err(Error::InvalidArgument("n_users must be >= 1".into()));
        }
        if days_per_user == 0 {
            return Err(Error::InvalidArgument("days_per_user must be >= 1".into()));
        }
        let n: u32 = n_users
            .try_into()
            .map_err(|_| Error::InvalidArgument("n_users exceeds u32 range".into()))?;
        Ok((0..n)
            .into_par_iter()
            .map(|uid| self.generate_user(uid, days_per_user, seed, stream))
            .collect())
    }
}

pub fn flatten(users: &[UserSeries]) -> Vec<DailyRecord> {
    users.iter().flat_map(|u| u.records.iter().cloned()).collect()
}

/// Writes records with a fixed number of decimals per column so the output is
/// byte-stable.
pub fn write_csv<W: Write>(out: W, records: &[DailyRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.date.format("%Y-%m-%d").to_string(),
            r.steps.to_string(),
            format!("{:.4}", r.distance_km),
            format!("{:.4}", r.sleep_hrs),
            r.breakfast.to_string(),
            r.lunch.to_string(),
            r.dinner.to_string(),
            r.age.to_string(),
            format!("{:.2}", r.height_cm),
            format!("{:.2}", r.weight_kg),
            r.gender.to_string(),
            r.user_id.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses and validates a dataset CSV. The header must match [`CSV_HEADER`]
/// exactly.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<DailyRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::InvalidRecord(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let rec: DailyRecord = row?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}
