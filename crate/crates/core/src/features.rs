//! Standardization of book snapshots into model inputs.
//!
//! Prices and volumes are each z-scored with one pooled (mean, std) pair
//! fitted over the five trading days preceding the day being transformed.

use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::{BookSnapshot, BOOK_DEPTH};

/// Days of history a scaler is fitted over.
pub const SCALER_DAYS: usize = 5;

const PRICE_SCALE: f64 = 10_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("need {needed} prior days, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("{0} standard deviation is zero")]
    DegenerateStd(&'static str),
    #[error("snapshot lacks depth: need {needed} levels per side, have {asks} ask / {bids} bid")]
    InsufficientDepth { needed: usize, asks: usize, bids: usize },
    #[error("scaler fitted over {fitted:?} cannot transform {day}")]
    ScalerNotApplicable { day: NaiveDate, fitted: Vec<NaiveDate> },
    #[error("prior day {0} has no snapshots")]
    EmptyDay(NaiveDate),
}

/// One trading day of snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct DaySnapshots {
    pub date: NaiveDate,
    pub snapshots: Vec<BookSnapshot>,
}

/// Input column selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FullLob,
    Level1,
    PricesOnly,
    VolumesOnly,
    PricesImbalance,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::FullLob,
        Variant::Level1,
        Variant::PricesOnly,
        Variant::VolumesOnly,
        Variant::PricesImbalance,
    ];

    /// Number of feature columns.
    pub fn width(self) -> usize {
        match self {
            Variant::FullLob => 4 * BOOK_DEPTH,
            Variant::Level1 => 4,
            Variant::PricesOnly | Variant::VolumesOnly => 2,
            Variant::PricesImbalance => 3,
        }
    }

    /// Valid levels required on each side.
    pub fn required_depth(self) -> usize {
        match self {
            Variant::FullLob => BOOK_DEPTH,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::FullLob => "full_lob",
            Variant::Level1 => "level1",
            Variant::PricesOnly => "prices_only",
            Variant::VolumesOnly => "volumes_only",
            Variant::PricesImbalance => "prices_imbalance",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::FullLob => "Full LOB",
            Variant::Level1 => "Prices & volumes",
            Variant::PricesOnly => "Prices",
            Variant::VolumesOnly => "Volumes",
            Variant::PricesImbalance => "Prices & imbalance",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

/// Pooled price and volume statistics (population std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub price_mean: f64,
    pub price_std: f64,
    pub volume_mean: f64,
    pub volume_std: f64,
    pub fitted_over: Vec<NaiveDate>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (mut n, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    let mean = sum / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / n as f64).sqrt())
}

impl Scaler {
    /// Fits on the last [`SCALER_DAYS`] entries of `history` that fall
    /// strictly before `day`. Only valid (non-sentinel) levels are pooled.
    pub fn fit(history: &[DaySnapshots], day: NaiveDate) -> Result<Scaler, FeatureError> {
        Scaler::fit_over(history, day, SCALER_DAYS)
    }

    /// As [`Scaler::fit`] with a custom look-back of `days` (at least one).
    pub fn fit_over(history: &[DaySnapshots], day: NaiveDate, days: usize) -> Result<Scaler, FeatureError> {
        let mut prior: Vec<&DaySnapshots> = history.iter().filter(|d| d.date < day).collect();
        prior.sort_by_key(|d| d.date);
        if days == 0 || prior.len() < days {
            return Err(FeatureError::InsufficientHistory {
                needed: days.max(1),
                available: prior.len(),
            });
        }
        let used = &prior[prior.len() - days..];
        if let Some(d) = used.iter().find(|d| d.snapshots.is_empty()) {
            return Err(FeatureError::EmptyDay(d.date));
        }
        let levels = || {
            used.iter()
                .flat_map(|d| d.snapshots.iter())
                .flat_map(|s| s.asks[..s.valid_asks].iter().chain(s.bids[..s.valid_bids].iter()))
        };
        let (price_mean, price_std) = mean_std(levels().map(|l| l.price as f64 / PRICE_SCALE));
        let (volume_mean, volume_std) = mean_std(levels().map(|l| l.volume as f64));
        if !(price_std > 0.0) {
            return Err(FeatureError::DegenerateStd("price"));
        }
        if !(volume_std > 0.0) {
            return Err(FeatureError::DegenerateStd("volume"));
        }
        Ok(Scaler {
            price_mean,
            price_std,
            volume_mean,
            volume_std,
            fitted_over: used.iter().map(|d| d.date).collect(),
        })
    }

    /// A scaler may only transform a day strictly after everything it saw.
    pub fn check_applicable(&self, day: NaiveDate) -> Result<(), FeatureError> {
        if !self.fitted_over.is_empty() && self.fitted_over.iter().all(|d| *d < day) {
            Ok(())
        } else {
            Err(FeatureError::ScalerNotApplicable {
                day,
                fitted: self.fitted_over.clone(),
            })
        }
    }

    /// Z-score of a price in 1/10000 USD.
    pub fn price(&self, raw: u32) -> f64 {
        (raw as f64 / PRICE_SCALE - self.price_mean) / self.price_std
    }

    pub fn volume(&self, raw: u32) -> f64 {
        (raw as f64 - self.volume_mean) / self.volume_std
    }
}

/// Standardized feature row for one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub variant: Variant,
    pub ts_ns: u64,
}

fn check_depth(snap: &BookSnapshot, needed: usize) -> Result<(), FeatureError> {
    if snap.valid_asks < needed || snap.valid_bids < needed {
        Err(FeatureError::InsufficientDepth {
            needed,
            asks: snap.valid_asks,
            bids: snap.valid_bids,
        })
    } else {
        Ok(())
    }
}

/// Signed Level-1 volume imbalance in [-1, 1]; positive when the bid is heavier.
pub fn imbalance(snap: &BookSnapshot) -> Result<f64, FeatureError> {
    check_depth(snap, 1)?;
    let bid = snap.bids[0].volume as f64;
    let ask = snap.asks[0].volume as f64;
    Ok((bid - ask) / (bid + ask))
}

/// Appends the variant's columns for `snap` to `out`.
pub fn standardize_into(
    snap: &BookSnapshot,
    scaler: &Scaler,
    variant: Variant,
    out: &mut Vec<f64>,
) -> Result<(), FeatureError> {
    check_depth(snap, variant.required_depth())?;
    let (a, b) = (snap.asks[0], snap.bids[0]);
    match variant {
        Variant::FullLob => {
            for i in 0..BOOK_DEPTH {
                out.push(scaler.price(snap.asks[i].price));
                out.push(scaler.volume(snap.asks[i].volume));
                out.push(scaler.price(snap.bids[i].price));
                out.push(scaler.volume(snap.bids[i].volume));
            }
        }
        Variant::Level1 => out.extend([
            scaler.price(a.price),
            scaler.volume(a.volume),
            scaler.price(b.price),
            scaler.volume(b.volume),
        ]),
        Variant::PricesOnly => out.extend([scaler.price(a.price), scaler.price(b.price)]),
        Variant::VolumesOnly => out.extend([scaler.volume(a.volume), scaler.volume(b.volume)]),
        Variant::PricesImbalance => {
            out.extend([scaler.price(a.price), scaler.price(b.price), imbalance(snap)?])
        }
    }
    Ok(())
}

pub fn standardize(
    snap: &BookSnapshot,
    scaler: &Scaler,
    variant: Variant,
) -> Result<FeatureVector, FeatureError> {
    let mut values = Vec::with_capacity(variant.width());
    standardize_into(snap, scaler, variant, &mut values)?;
    Ok(FeatureVector {
        values,
        variant,
        ts_ns: snap.timestamp_ns,
    })
}

/// Standardized mid-price series of one day, indexed by event number.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedSeries {
    pub values: Vec<f64>,
    pub source_day: NaiveDate,
}

impl StandardizedSeries {
    pub fn new(values: Vec<f64>, source_day: NaiveDate) -> Self {
        StandardizedSeries { values, source_day }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Standardized mid of a two-sided snapshot.
pub fn standardized_mid(snap: &BookSnapshot, scaler: &Scaler) -> Result<f64, FeatureError> {
    check_depth(snap, 1)?;
    let mid = (snap.asks[0].price as f64 + snap.bids[0].price as f64) / 2.0 / PRICE_SCALE;
    Ok((mid - scaler.price_mean) / scaler.price_std)
}

pub fn mid_series(
    snaps: &[BookSnapshot],
    scaler: &Scaler,
    day: NaiveDate,
) -> Result<StandardizedSeries, FeatureError> {
    let values = snaps
        .iter()
        .map(|s| standardized_mid(s, scaler))
        .collect::<Result<_, _>>()?;
    Ok(StandardizedSeries::new(values, day))
}

/// Row-major `rows × width` feature matrix for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    /// Rows `end + 1 - len ..= end`, contiguous.
    pub fn window(&self, end: usize, len: usize) -> &[f64] {
        &self.data[(end + 1 - len) * self.width..(end + 1) * self.width]
    }
}

/// A day's features and mid series, aligned by event index.
#[derive(Debug, Clone)]
pub struct PreparedDay {
    pub date: NaiveDate,
    pub variant: Variant,
    pub features: Arc<FeatureMatrix>,
    pub mid: StandardizedSeries,
    /// Raw Level-1 imbalance per kept snapshot.
    pub imbalance: Vec<f64>,
    /// Snapshots dropped for lacking the variant's depth.
    pub dropped: usize,
}

/// Standardizes a whole day, dropping snapshots too thin for `variant` so
/// that features and mids stay aligned.
pub fn prepare_day(
    day: &DaySnapshots,
    scaler: &Scaler,
    variant: Variant,
) -> Result<PreparedDay, FeatureError> {
    scaler.check_applicable(day.date)?;
    let needed = variant.required_depth();
    let mut data = Vec::with_capacity(day.snapshots.len() * variant.width());
    let mut mids = Vec::with_capacity(day.snapshots.len());
    let mut imb = Vec::with_capacity(day.snapshots.len());
    let mut dropped = 0;
    for snap in &day.snapshots {
        if snap.valid_asks < needed || snap.valid_bids < needed {
            dropped += 1;
            continue;
        }
        standardize_into(snap, scaler, variant, &mut data)?;
        mids.push(standardized_mid(snap, scaler)?);
        imb.push(imbalance(snap)?);
    }
    if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
        return Err(FeatureError::DegenerateStd(if bad % 2 == 0 {
            "price"
        } else {
            "volume"
        }));
    }
    Ok(PreparedDay {
        date: day.date,
        variant,
        features: Arc::new(FeatureMatrix {
            width: variant.width(),
            data,
        }),
        mid: StandardizedSeries::new(mids, day.date),
        imbalance: imb,
        dropped,
    })
}
