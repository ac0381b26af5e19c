//! Synthetic snapshot streams with a known data-generating process.
//!
//! Each event emits one top-of-book snapshot. The best bid walks on a tick
//! grid with a one-tick spread. On each event the quote moves with
//! probability `activity` (the current regime's, when regimes are on), and
//! the direction is up with probability `logistic(signal_beta · imb)`, where
//! `imb = (bid − ask) / (bid + ask)` is the Level-1 volume imbalance shown in
//! the snapshot just emitted.
//!
//! The imbalance comes from a latent `Z`, an AR(1) with unit stationary
//! variance, through `I = tanh(Z)`. The Level-1 total size is Gamma-distributed
//! and split as `bid = V(1 + I)/2`. After every price move `Z` is redrawn from
//! its stationary law, since the queues have been consumed. As a result, past
//! prices say nothing about the next direction and all predictability sits in
//! the current book.
//!
//! Days are independent. Day `d` opens at `mid0 + d · day_gap_ticks`, which
//! keeps mids far from zero and from the five-day pooled mean.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::{BookSnapshot, Level, BOOK_DEPTH, SESSION_CLOSE_NS, SESSION_OPEN_NS};
use crate::features::DaySnapshots;
use crate::labeling::LabelingPolicy;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    ConfigInvalid(String),
}

/// Two-state activity chain: the per-event move probability is `low` or
/// `high`, switching state with probability `switch_prob` on each event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolRegimes {
    pub low: f64,
    pub high: f64,
    pub switch_prob: f64,
}

/// Gamma law for the total size at a level, parameterized by its mean and
/// squared coefficient of variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VolumeLaw {
    pub mean: f64,
    pub dispersion: f64,
}

impl Default for VolumeLaw {
    fn default() -> Self {
        VolumeLaw {
            mean: 100.0,
            dispersion: 0.25,
        }
    }
}

/// Coefficient giving a planted directional ceiling of about 0.75 under the
/// default volume law.
pub const PLANTED_BETA: f64 = 2.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_days: usize,
    pub events_per_day: usize,
    pub seed: u64,
    /// Opening mid of day 0, in 1/10000 USD.
    pub mid0: u32,
    /// Price increment, in 1/10000 USD.
    pub tick: u32,
    /// Imbalance → direction coefficient; 0 means no signal.
    pub signal_beta: f64,
    /// Per-event move probability when regimes are off.
    pub activity: f64,
    pub vol_regimes: Option<VolRegimes>,
    pub volume_law: VolumeLaw,
    /// AR(1) persistence of the latent imbalance.
    pub imbalance_persistence: f64,
    /// Levels per side.
    pub depth: usize,
    /// Shift of each day's opening mid relative to the previous day, in ticks.
    pub day_gap_ticks: u32,
    pub start_date: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_days: 30,
            events_per_day: 5_000,
            seed: 0,
            mid0: 1_000_000,
            tick: 100,
            signal_beta: 0.0,
            activity: 0.1,
            vol_regimes: None,
            volume_law: VolumeLaw::default(),
            imbalance_persistence: 0.99,
            depth: BOOK_DEPTH,
            day_gap_ticks: 100,
            start_date: NaiveDate::from_ymd_opt(2022, 1, 3).expect("valid date"),
        }
    }
}

fn probability(name: &str, p: f64) -> Result<(), SynthError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SynthError::ConfigInvalid(format!(
            "{name} = {p} is not a probability"
        )))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::ConfigInvalid(m));
        if self.n_days == 0 {
            return bad("n_days must be positive".into());
        }
        if self.events_per_day < 2 {
            return bad("events_per_day must be at least 2".into());
        }
        if self.tick == 0 {
            return bad("tick must be positive".into());
        }
        if self.depth == 0 || self.depth > BOOK_DEPTH {
            return bad(format!("depth must be in 1..={BOOK_DEPTH}"));
        }
        if !self.signal_beta.is_finite() {
            return bad("signal_beta must be finite".into());
        }
        probability("activity", self.activity)?;
        if let Some(r) = &self.vol_regimes {
            probability("vol_regimes.low", r.low)?;
            probability("vol_regimes.high", r.high)?;
            probability("vol_regimes.switch_prob", r.switch_prob)?;
        }
        if !(0.0..1.0).contains(&self.imbalance_persistence) {
            return bad("imbalance_persistence must lie in [0, 1)".into());
        }
        let v = &self.volume_law;
        if !(v.mean >= 2.0 && v.dispersion > 0.0 && v.mean.is_finite() && v.dispersion.is_finite()) {
            return bad("volume_law needs mean >= 2 and positive dispersion".into());
        }
        // Upward excursions are bounded by the event count; downward ones are
        // reflected at `floor_ticks`, which should be many standard deviations
        // of a day's walk away.
        let tick = self.tick as u64;
        let top = self.mid0 as u64
            + (self.n_days as u64 * self.day_gap_ticks as u64
                + self.events_per_day as u64
                + self.depth as u64
                + 1)
                * tick;
        if top > u32::MAX as u64 {
            return bad("prices could exceed the u32 range".into());
        }
        let spread = 10.0 * (self.events_per_day as f64).sqrt();
        if ((self.mid0 / self.tick) as f64) < self.floor_ticks() as f64 + spread {
            return bad("mid0 is too close to zero for this many events".into());
        }
        Ok(())
    }

    /// Checks that every generated day is long enough to be labeled under `policy`.
    pub fn validate_for(&self, policy: &LabelingPolicy) -> Result<(), SynthError> {
        self.validate()?;
        if self.events_per_day < policy.min_day_len() {
            return Err(SynthError::ConfigInvalid(format!(
                "events_per_day {} is shorter than window + horizons = {}",
                self.events_per_day,
                policy.min_day_len()
            )));
        }
        Ok(())
    }

    /// Trading dates (weekdays from `start_date`).
    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut out = Vec::with_capacity(self.n_days);
        let mut d = self.start_date;
        while out.len() < self.n_days {
            if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                out.push(d);
            }
            d += Duration::days(1);
        }
        out
    }

    /// Lowest best bid, in ticks, that still leaves room for the full depth.
    fn floor_ticks(&self) -> u32 {
        self.depth as u32 + 1
    }

    fn gamma(&self) -> Gamma<f64> {
        let v = &self.volume_law;
        Gamma::new(1.0 / v.dispersion, v.mean * v.dispersion).expect("validated volume law")
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Level-1 sizes from a total draw and a latent imbalance.
fn split(total: f64, latent: f64) -> (u32, u32) {
    let v = (total.round() as u32).max(2);
    let bid = ((v as f64 * (1.0 + latent.tanh()) / 2.0).round() as u32).clamp(1, v - 1);
    (bid, v - bid)
}

fn draw_size<R: Rng>(gamma: &Gamma<f64>, rng: &mut R) -> u32 {
    (gamma.sample(rng).round() as u32).max(1)
}

struct Day<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    gamma: Gamma<f64>,
}

impl Day<'_> {
    fn snapshot(&mut self, ts: u64, best_bid: u32, bid1: u32, ask1: u32) -> BookSnapshot {
        let tick = self.cfg.tick;
        let mut asks = Vec::with_capacity(self.cfg.depth);
        let mut bids = Vec::with_capacity(self.cfg.depth);
        asks.push(Level::new(best_bid + tick, ask1));
        bids.push(Level::new(best_bid, bid1));
        for l in 1..self.cfg.depth as u32 {
            asks.push(Level::new(
                best_bid + tick * (l + 1),
                draw_size(&self.gamma, &mut self.rng),
            ));
            bids.push(Level::new(
                best_bid - tick * l,
                draw_size(&self.gamma, &mut self.rng),
            ));
        }
        BookSnapshot::from_levels(ts, &asks, &bids)
    }
}

/// Generates day `index` on its own random stream.
pub fn generate_day(cfg: &SynthConfig, index: usize) -> Result<DaySnapshots, SynthError> {
    cfg.validate()?;
    let date = *cfg
        .dates()
        .get(index)
        .ok_or_else(|| SynthError::ConfigInvalid(format!("day {index} beyond n_days")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let mut day = Day {
        cfg,
        rng,
        gamma: cfg.gamma(),
    };
    let n = cfg.events_per_day;
    let phi = cfg.imbalance_persistence;
    let innovation = (1.0 - phi * phi).sqrt();
    let open_ticks = cfg.mid0 / cfg.tick + index as u32 * cfg.day_gap_ticks;
    let mut best_bid = open_ticks * cfg.tick;
    let mut latent: f64 = day.rng.sample(StandardNormal);
    let mut high = match &cfg.vol_regimes {
        Some(_) => day.rng.gen_bool(0.5),
        None => false,
    };
    let span = SESSION_CLOSE_NS - SESSION_OPEN_NS;
    let mut snapshots = Vec::with_capacity(n);
    for i in 0..n {
        let ts = SESSION_OPEN_NS + span * (i as u64 + 1) / (n as u64 + 1);
        let total = day.gamma.sample(&mut day.rng);
        let (bid1, ask1) = split(total, latent);
        snapshots.push(day.snapshot(ts, best_bid, bid1, ask1));

        let activity = match &cfg.vol_regimes {
            Some(r) => {
                let q = if high { r.high } else { r.low };
                if day.rng.gen_bool(r.switch_prob) {
                    high = !high;
                }
                q
            }
            None => cfg.activity,
        };
        if day.rng.gen_bool(activity) {
            let imb = (bid1 as f64 - ask1 as f64) / (bid1 + ask1) as f64;
            let up = day.rng.gen_bool(logistic(cfg.signal_beta * imb));
            if up || best_bid / cfg.tick <= cfg.floor_ticks() {
                best_bid += cfg.tick;
            } else {
                best_bid -= cfg.tick;
            }
            latent = day.rng.sample(StandardNormal);
        } else {
            let e: f64 = day.rng.sample(StandardNormal);
            latent = phi * latent + innovation * e;
        }
    }
    Ok(DaySnapshots { date, snapshots })
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<DaySnapshots>, SynthError> {
    cfg.validate()?;
    (0..cfg.n_days).map(|d| generate_day(cfg, d)).collect()
}

/// Monte Carlo estimate of the Bayes-optimal accuracy for the direction of
/// the next price move: `E[max(p, 1 − p)]` with `p = logistic(β · imb)` and
/// `imb` drawn from the stationary Level-1 imbalance law.
pub fn planted_ceiling(cfg: &SynthConfig, n_trials: usize) -> Result<f64, SynthError> {
    cfg.validate()?;
    if n_trials < 10_000 {
        return Err(SynthError::ConfigInvalid(format!(
            "planted_ceiling needs at least 10^4 trials, got {n_trials}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xce11_1e55);
    let gamma = cfg.gamma();
    let mut acc = 0.0;
    for _ in 0..n_trials {
        let z: f64 = rng.sample(StandardNormal);
        let (bid, ask) = split(gamma.sample(&mut rng), z);
        let imb = (bid as f64 - ask as f64) / (bid + ask) as f64;
        let p = logistic(cfg.signal_beta * imb);
        acc += p.max(1.0 - p);
    }
    Ok(acc / n_trials as f64)
}
