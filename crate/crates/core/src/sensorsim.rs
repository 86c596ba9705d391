//! Accelerometer-driven step counting and night-time sleep tracking.
//!
//! Steps: a reading counts as a step when the change in acceleration
//! magnitude since the previous reading exceeds the threshold and more than
//! the debounce interval has passed since the last counted step.
//!
//! Sleep: a clock ticks every `tick_minutes`. Inside the sleep window, a tick
//! more than `inactivity_minutes` after the last counted step marks the user
//! asleep and accrues one tick of sleep. A tick closer than that to the last
//! step while the user is marked asleep (and the clock is between midnight
//! and the window end) adds `compensation_hours` and clears the flag.
//!
//! All clock arithmetic is in UTC on millisecond timestamps.

use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MS_PER_MINUTE: i64 = 60_000;
const MS_PER_HOUR: i64 = 3_600_000;
const MS_PER_DAY: i64 = 86_400_000;

pub const TRACE_HEADER: [&str; 4] = ["t_ms", "x", "y", "z"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelSample {
    pub t_ms: i64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl AccelSample {
    pub fn magnitude(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Minimum change in magnitude between consecutive readings for a step.
    pub step_threshold: f64,
    /// Distance credited per step, in meters.
    pub stride_m: f64,
    pub debounce_ms: i64,
    pub sleep_window_start_hour: u32,
    pub sleep_window_end_hour: u32,
    pub inactivity_minutes: f64,
    pub compensation_hours: f64,
    pub tick_minutes: u32,
    /// Longest trace `process_trace` accepts.
    pub max_trace_hours: u32,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            step_threshold: 1.8,
            stride_m: 0.5,
            debounce_ms: 300,
            sleep_window_start_hour: 22,
            sleep_window_end_hour: 10,
            inactivity_minutes: 120.0,
            compensation_hours: 2.0,
            tick_minutes: 1,
            max_trace_hours: 36,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("sensors.{k}");
        if !(self.step_threshold.is_finite() && self.step_threshold > 0.0) {
            return Err(Error::config(key("step_threshold"), "must be > 0"));
        }
        if !(self.stride_m.is_finite() && self.stride_m > 0.0) {
            return Err(Error::config(key("stride_m"), "must be > 0"));
        }
        if self.debounce_ms <= 0 {
            return Err(Error::config(key("debounce_ms"), "must be > 0"));
        }
        if self.sleep_window_start_hour >= 24 {
            return Err(Error::config(key("sleep_window_start_hour"), "must be < 24"));
        }
        if self.sleep_window_end_hour >= 24 || self.sleep_window_end_hour == self.sleep_window_start_hour {
            return Err(Error::config(
                key("sleep_window_end_hour"),
                "must be < 24 and differ from the window start",
            ));
        }
        if !(self.inactivity_minutes.is_finite() && self.inactivity_minutes >= 0.0) {
            return Err(Error::config(key("inactivity_minutes"), "must be >= 0"));
        }
        if !(self.compensation_hours.is_finite() && self.compensation_hours >= 0.0) {
            return Err(Error::config(key("compensation_hours"), "must be >= 0"));
        }
        if self.tick_minutes == 0 {
            return Err(Error::config(key("tick_minutes"), "must be >= 1"));
        }
        if self.max_trace_hours == 0 {
            return Err(Error::config(key("max_trace_hours"), "must be >= 1"));
        }
        Ok(())
    }

    fn tick_ms(&self) -> i64 {
        self.tick_minutes as i64 * MS_PER_MINUTE
    }

    fn in_window(&self, hour: u32) -> bool {
        let (start, end) = (self.sleep_window_start_hour, self.sleep_window_end_hour);
        if start > end {
            hour >= start || hour < end
        } else {
            start <= hour && hour < end
        }
    }

    /// Index of the sleep day containing `t`; days roll over at window start.
    fn sleep_day(&self, t_ms: i64) -> i64 {
        (t_ms - self.sleep_window_start_hour as i64 * MS_PER_HOUR).div_euclid(MS_PER_DAY)
    }
}

pub fn hour_of_day(t_ms: i64) -> u32 {
    (t_ms.rem_euclid(MS_PER_DAY) / MS_PER_HOUR) as u32
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackerState {
    pub last_magnitude: f64,
    pub last_step_time: i64,
    pub step_count: u64,
    /// Always `step_count * stride_m`.
    pub distance_m: f64,
    pub last_activity_time: i64,
    pub is_sleeping: bool,
    pub sleep_hours: f64,
    pub last_sample_time: Option<i64>,
    /// Sleep day of the last in-window tick; a later day resets the sleep total.
    pub sleep_day: Option<i64>,
}

impl TrackerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds one accelerometer reading. Returns whether it was counted as a step.
    pub fn step_update(&mut self, cfg: &SensorConfig, sample: &AccelSample) -> Result<bool> {
        if let Some(prev) = self.last_sample_time {
            if sample.t_ms < prev {
                return Err(Error::OutOfOrder {
                    t: sample.t_ms,
                    previous: prev,
                });
            }
        }
        let magnitude = sample.magnitude();
        let stepped = (magnitude - self.last_magnitude).abs() > cfg.step_threshold
            && sample.t_ms - self.last_step_time > cfg.debounce_ms;
        if stepped {
            self.last_step_time = sample.t_ms;
            self.step_count += 1;
            self.distance_m = self.step_count as f64 * cfg.stride_m;
            self.last_activity_time = sample.t_ms;
        }
        self.last_magnitude = magnitude;
        self.last_sample_time = Some(sample.t_ms);
        Ok(stepped)
    }

    /// One tick of the sleep clock at `now_ms`. Ticks outside the sleep
    /// window leave the state untouched.
    pub fn sleep_tick(&mut self, cfg: &SensorConfig, now_ms: i64) {
        let hour = hour_of_day(now_ms);
        if !cfg.in_window(hour) {
            return;
        }
        let day = cfg.sleep_day(now_ms);
        if matches!(self.sleep_day, Some(d) if day > d) {
            self.sleep_hours = 0.0;
            self.is_sleeping = false;
        }
        self.sleep_day = Some(day);

        let minutes_idle = (now_ms - self.last_activity_time) as f64 / MS_PER_MINUTE as f64;
        if minutes_idle > cfg.inactivity_minutes {
            self.is_sleeping = true;
            self.sleep_hours += cfg.tick_minutes as f64 / 60.0;
        } else if self.is_sleeping && hour < cfg.sleep_window_end_hour {
            self.sleep_hours += cfg.compensation_hours;
            self.is_sleeping = false;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DaySummary {
    pub steps: u64,
    pub distance_km: f64,
    pub sleep_hrs: f64,
}

/// Streaming replay: readings and clock ticks interleaved by timestamp.
///
/// Ticks fall on multiples of the tick period, starting at the first multiple
/// at or after the first reading. A tick at the same instant as a reading is
/// processed after it. Feeding a trace in pieces (with [`Replay::flush`] in
/// between or not) is equivalent to feeding it whole.
#[derive(Debug, Clone)]
pub struct Replay<'a> {
    cfg: &'a SensorConfig,
    state: TrackerState,
    next_tick: Option<i64>,
}

impl<'a> Replay<'a> {
    pub fn new(cfg: &'a SensorConfig) -> Self {
        Self::with_state(cfg, TrackerState::new())
    }

    pub fn with_state(cfg: &'a SensorConfig, state: TrackerState) -> Self {
        Self {
            cfg,
            state,
            next_tick: None,
        }
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    fn fire_ticks_while(&mut self, mut due: impl FnMut(i64) -> bool) {
        let period = self.cfg.tick_ms();
        while let Some(t) = self.next_tick {
            if !due(t) {
                break;
            }
            self.state.sleep_tick(self.cfg, t);
            self.next_tick = Some(t + period);
        }
    }

    pub fn push(&mut self, sample: &AccelSample) -> Result<bool> {
        if let Some(prev) = self.state.last_sample_time {
            if sample.t_ms < prev {
                return Err(Error::OutOfOrder {
                    t: sample.t_ms,
                    previous: prev,
                });
            }
        }
        if self.next_tick.is_none() {
            let period = self.cfg.tick_ms();
            self.next_tick = Some(
                sample.t_ms.div_euclid(period) * period + if sample.t_ms.rem_euclid(period) == 0 { 0 } else { period },
            );
        }
        self.fire_ticks_while(|t| t < sample.t_ms);
        self.state.step_update(self.cfg, sample)
    }

    /// Fires every tick up to and including the last reading's timestamp.
    pub fn flush(&mut self) {
        if let Some(last) = self.state.last_sample_time {
            self.fire_ticks_while(|t| t <= last);
        }
    }

    pub fn summary(&self) -> DaySummary {
        DaySummary {
            steps: self.state.step_count,
            distance_km: self.state.distance_m / 1000.0,
            sleep_hrs: self.state.sleep_hours,
        }
    }

    pub fn into_state(self) -> TrackerState {
        self.state
    }
}

/// Replays a whole trace from a fresh state.
pub fn process_trace(trace: &[AccelSample], cfg: &SensorConfig) -> Result<DaySummary> {
    cfg.validate()?;
    let (Some(first), Some(last)) = (trace.first(), trace.last()) else {
        return Ok(DaySummary::default());
    };
    let span = last.t_ms - first.t_ms;
    if span > cfg.max_trace_hours as i64 * MS_PER_HOUR {
        return Err(Error::InvalidArgument(format!(
            "trace spans {:.2} h, more than the {} h limit",
            span as f64 / MS_PER_HOUR as f64,
            cfg.max_trace_hours
        )));
    }
    let mut replay = Replay::new(cfg);
    for s in trace {
        replay.push(s)?;
    }
    replay.flush();
    Ok(replay.summary())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "activity", rename_all = "snake_case")]
pub enum Activity {
    Walk { steps_per_min: f64 },
    Idle,
}

/// One schedule entry. In JSON the activity fields sit beside the timing:
/// `{"start_ms": 0, "duration_ms": 60000, "activity": "walk", "steps_per_min": 100}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_ms: i64,
    pub duration_ms: i64,
    #[serde(flatten)]
    pub activity: Activity,
}

impl Segment {
    fn end_ms(&self) -> i64 {
        self.start_ms.saturating_add(self.duration_ms)
    }
}

/// Sorts segments by start and checks durations, cadences and overlaps.
pub fn validate_schedule(segments: &[Segment]) -> Result<Vec<Segment>> {
    let mut sorted: Vec<Segment> = segments.to_vec();
    sorted.sort_by_key(|s| s.start_ms);
    for s in &sorted {
        if s.duration_ms <= 0 || s.start_ms.checked_add(s.duration_ms).is_none() {
            return Err(Error::InvalidArgument(format!(
                "segment at {} ms has an invalid duration",
                s.start_ms
            )));
        }
        if let Activity::Walk { steps_per_min } = s.activity {
            if !(steps_per_min > 0.0 && steps_per_min < 200.0) {
                return Err(Error::InvalidArgument(format!(
                    "walking cadence {steps_per_min} steps/min outside (0, 200)"
                )));
            }
        }
    }
    for pair in sorted.windows(2) {
        if pair[0].end_ms() > pair[1].start_ms {
            return Err(Error::InvalidArgument(format!(
                "segments starting at {} ms and {} ms overlap",
                pair[0].start_ms, pair[1].start_ms
            )));
        }
    }
    Ok(sorted)
}

/// Parses a JSON array of [`Segment`]s and validates it.
pub fn parse_schedule(text: &str) -> Result<Vec<Segment>> {
    let segments: Vec<Segment> = serde_json::from_str(text)?;
    validate_schedule(&segments)
}

/// Magnitude of a walking step peak above the resting level. Peaks land in
/// `[STEP_PEAK - STEP_PEAK_JITTER, STEP_PEAK + STEP_PEAK_JITTER]`.
const STEP_PEAK: f64 = 3.0;
const STEP_PEAK_JITTER: f64 = 0.3;
/// Per-axis amplitude of resting noise; the magnitude stays below 0.09.
const REST_JITTER: f64 = 0.05;
/// Spacing of resting readings between step peaks.
const WALK_REST_SPACING_MS: i64 = 100;

fn random_direction(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn peak_sample(t_ms: i64, rng: &mut ChaCha8Rng) -> AccelSample {
    let m = STEP_PEAK + rng.random_range(-STEP_PEAK_JITTER..=STEP_PEAK_JITTER);
    let [x, y, z] = random_direction(rng);
    AccelSample {
        t_ms,
        x: m * x,
        y: m * y,
        z: m * z,
    }
}

fn rest_sample(t_ms: i64, rng: &mut ChaCha8Rng) -> AccelSample {
    AccelSample {
        t_ms,
        x: rng.random_range(-REST_JITTER..=REST_JITTER),
        y: rng.random_range(-REST_JITTER..=REST_JITTER),
        z: rng.random_range(-REST_JITTER..=REST_JITTER),
    }
}

/// Synthesizes a trace from non-overlapping segments.
///
/// Walking emits one peak reading per step at the requested cadence with
/// resting readings every 100 ms in between; each rise into a peak is a
/// supra-threshold swing and every other change is sub-threshold or falls
/// inside the debounce interval. Idle segments emit resting readings every
/// `idle_sample_ms`. Cadences must keep steps more than 300 ms apart
/// (`steps_per_min < 200`).
pub fn synth_trace(segments: &[Segment], idle_sample_ms: i64, rng: &mut ChaCha8Rng) -> Result<Vec<AccelSample>> {
    if idle_sample_ms <= 0 {
        return Err(Error::InvalidArgument("idle sample spacing must be > 0".into()));
    }
    let sorted = validate_schedule(segments)?;

    let mut out = Vec::new();
    for seg in &sorted {
        let end = seg.end_ms();
        match seg.activity {
            Activity::Idle => {
                let mut t = seg.start_ms;
                while t < end {
                    out.push(rest_sample(t, rng));
                    t += idle_sample_ms;
                }
            }
            Activity::Walk { steps_per_min } => {
                let interval = 60_000.0 / steps_per_min;
                let step_time = |k: u64| seg.start_ms + (k as f64 * interval).round() as i64;
                let mut k = 0u64;
                while step_time(k) < end {
                    let t = step_time(k);
                    out.push(peak_sample(t, rng));
                    let next = step_time(k + 1).min(end);
                    let mut r = t + WALK_REST_SPACING_MS;
                    while r < next {
                        out.push(rest_sample(r, rng));
                        r += WALK_REST_SPACING_MS;
                    }
                    k += 1;
                }
            }
        }
    }
    Ok(out)
}

pub fn write_trace_csv<W: Write>(out: W, trace: &[AccelSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for s in trace {
        w.write_record([s.t_ms.to_string(), s.x.to_string(), s.y.to_string(), s.z.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a trace CSV. Timestamps must be strictly increasing and all
/// components finite.
pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<AccelSample>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(Error::InvalidRecord(format!(
            "unexpected trace header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out: Vec<AccelSample> = Vec::new();
    for row in rdr.deserialize() {
        let s: AccelSample = row?;
        if !(s.x.is_finite() && s.y.is_finite() && s.z.is_finite()) {
            return Err(Error::NonFinite("trace sample"));
        }
        if let Some(prev) = out.last() {
            if s.t_ms <= prev.t_ms {
                return Err(Error::OutOfOrder {
                    t: s.t_ms,
                    previous: prev.t_ms,
                });
            }
        }
        out.push(s);
    }
    Ok(out)
}

pub const SUMMARY_HEADER: [&str; 4] = ["date", "steps", "distance_km", "sleep_hrs"];

/// Writes day summaries using the dataset CSV's column names.
pub fn write_summary_csv<W: Write>(out: W, rows: &[(chrono::NaiveDate, DaySummary)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for (date, s) in rows {
        w.write_record([
            date.format("%Y-%m-%d").to_string(),
            s.steps.to_string(),
            format!("{:.4}", s.distance_km),
            format!("{:.4}", s.sleep_hrs),
        ])?;
    }
    w.flush()?;
    Ok(())
}
