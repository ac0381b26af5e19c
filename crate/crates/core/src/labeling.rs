//! Modified-return targets, class thresholds and windowed sample assembly.
//!
//! With `m` the standardized mid series of one day, the past and future
//! averages are
//!
//! ```text
//! p_k(t) = (1/k)  Σ_{i=0}^{k-1} m(t - i)
//! f_k(t) = (1/k)  Σ_{i=1}^{k}   m(t + i)
//! ```
//!
//! and the target is `r_{k,k'}(t) = (f_{k'}(t) - p_k(t)) / p_k(t)`. The
//! current-price target `r_{1,k'}` is the `k = 1` case.

use std::io::{self, Read, Write};
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureMatrix, PreparedDay};

/// Denominators with magnitude below this are rejected.
pub const ZERO_EPS: f64 = 1e-8;

/// Quantile of |y| used as the class threshold.
pub const STABLE_QUANTILE: f64 = 1.0 / 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("index out of range: t={t}, horizon={horizon}, len={len}")]
    IndexOutOfRange { t: usize, horizon: usize, len: usize },
    #[error("denominator {0:e} too close to zero")]
    ZeroDenominator(f64),
    #[error("empty or too small input")]
    EmptyInput,
    #[error("class threshold is zero: over a third of targets are exactly zero")]
    ZeroAlpha,
    #[error("non-finite target")]
    NonFinite,
    #[error("day has {len} observations, need at least {needed}")]
    DayTooShort { len: usize, needed: usize },
    #[error("invalid policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("archive: {0}")]
    Archive(String),
}

impl From<io::Error> for LabelError {
    fn from(e: io::Error) -> Self {
        LabelError::Archive(e.to_string())
    }
}

/// Three-way class. The discriminant order is also the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Up = 0,
    Down = 1,
    Stable = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Up, Label::Down, Label::Stable];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn is_diverge(self) -> bool {
        self != Label::Stable
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Up => "UP",
            Label::Down => "DOWN",
            Label::Stable => "STABLE",
        }
    }

    /// Mirror image: UP and DOWN swap, STABLE is fixed.
    pub fn flipped(self) -> Label {
        match self {
            Label::Up => Label::Down,
            Label::Down => Label::Up,
            Label::Stable => Label::Stable,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// `r_{k,k'}`: past average over `k` observations.
    RkK,
    /// `r_{1,k'}`: base is the current mid.
    R1K,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelingPolicy {
    pub k: usize,
    pub k_prime: usize,
    /// Class threshold; refit per training window by the runner.
    pub alpha: f64,
    pub target: TargetKind,
    pub window: usize,
    pub stride: usize,
}

impl Default for LabelingPolicy {
    fn default() -> Self {
        LabelingPolicy {
            k: 20,
            k_prime: 20,
            alpha: 1.0,
            target: TargetKind::R1K,
            window: 100,
            stride: 1,
        }
    }
}

impl LabelingPolicy {
    pub fn validate(&self) -> Result<(), LabelError> {
        if self.k == 0 || self.k_prime == 0 {
            return Err(LabelError::InvalidPolicy("horizons must be at least 1"));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(LabelError::InvalidPolicy("alpha must be positive"));
        }
        if self.window == 0 || self.stride == 0 {
            return Err(LabelError::InvalidPolicy("window and stride must be at least 1"));
        }
        Ok(())
    }

    /// Past horizon actually used by the target.
    pub fn past_horizon(&self) -> usize {
        match self.target {
            TargetKind::RkK => self.k,
            TargetKind::R1K => 1,
        }
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        LabelingPolicy {
            alpha,
            ..self.clone()
        }
    }

    /// Minimum observations a day needs to yield one sample.
    pub fn min_day_len(&self) -> usize {
        self.window + self.k + self.k_prime
    }

    /// First and last anchor index (inclusive) for a day of `n` observations.
    pub fn anchor_bounds(&self, n: usize) -> Result<(usize, usize), LabelError> {
        if n < self.min_day_len() {
            return Err(LabelError::DayTooShort {
                len: n,
                needed: self.min_day_len(),
            });
        }
        Ok((self.window - 1 + self.k, n - 1 - self.k_prime))
    }

    /// Anchor indices stepping by the stride.
    pub fn anchors(&self, n: usize) -> Result<impl Iterator<Item = usize>, LabelError> {
        let (first, last) = self.anchor_bounds(n)?;
        Ok((first..=last).step_by(self.stride))
    }
}

pub fn past_avg(m: &[f64], t: usize, k: usize) -> Result<f64, LabelError> {
    if k == 0 || t >= m.len() || t + 1 < k {
        return Err(LabelError::IndexOutOfRange {
            t,
            horizon: k,
            len: m.len(),
        });
    }
    Ok(m[t + 1 - k..=t].iter().sum::<f64>() / k as f64)
}

pub fn future_avg(m: &[f64], t: usize, k: usize) -> Result<f64, LabelError> {
    if k == 0 || t + k >= m.len() {
        return Err(LabelError::IndexOutOfRange {
            t,
            horizon: k,
            len: m.len(),
        });
    }
    Ok(m[t + 1..=t + k].iter().sum::<f64>() / k as f64)
}

pub fn modified_return(m: &[f64], t: usize, k: usize, k_prime: usize) -> Result<f64, LabelError> {
    let p = past_avg(m, t, k)?;
    let f = future_avg(m, t, k_prime)?;
    if p.abs() < ZERO_EPS {
        return Err(LabelError::ZeroDenominator(p));
    }
    Ok((f - p) / p)
}

/// Target value at `t` under `policy`.
pub fn target(m: &[f64], t: usize, policy: &LabelingPolicy) -> Result<f64, LabelError> {
    modified_return(m, t, policy.past_horizon(), policy.k_prime)
}

/// Linear-interpolation quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Threshold putting a third of `targets` in STABLE: the 1/3 quantile of |y|.
pub fn choose_alpha(targets: &[f64]) -> Result<f64, LabelError> {
    if targets.len() < 3 {
        return Err(LabelError::EmptyInput);
    }
    let mut abs: Vec<f64> = targets.iter().map(|y| y.abs()).collect();
    if abs.iter().any(|v| !v.is_finite()) {
        return Err(LabelError::NonFinite);
    }
    abs.sort_by(f64::total_cmp);
    let alpha = quantile_sorted(&abs, STABLE_QUANTILE);
    if alpha > 0.0 {
        Ok(alpha)
    } else {
        Err(LabelError::ZeroAlpha)
    }
}

/// UP if `y > alpha`, DOWN if `y < -alpha`, STABLE otherwise (ties are STABLE).
pub fn classify(y: f64, alpha: f64) -> Label {
    if y > alpha {
        Label::Up
    } else if y < -alpha {
        Label::Down
    } else {
        Label::Stable
    }
}

/// One training or evaluation example. The window is a view into the day's
/// feature matrix.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    source: Arc<FeatureMatrix>,
    end_row: usize,
    window_len: usize,
    pub t: usize,
    pub y: f64,
    pub label: Label,
    pub day: NaiveDate,
}

impl LabeledSample {
    pub fn new(
        source: Arc<FeatureMatrix>,
        end_row: usize,
        window_len: usize,
        t: usize,
        y: f64,
        label: Label,
        day: NaiveDate,
    ) -> Self {
        assert!(end_row + 1 >= window_len && end_row < source.rows());
        LabeledSample {
            source,
            end_row,
            window_len,
            t,
            y,
            label,
            day,
        }
    }

    /// Row-major `window × width` slice ending at the anchor.
    pub fn window(&self) -> &[f64] {
        self.source.window(self.end_row, self.window_len)
    }

    pub fn width(&self) -> usize {
        self.source.width
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }
}

/// Anchor targets of a day: `(t, y)` for every anchor on the stride grid.
pub fn day_targets(mid: &[f64], policy: &LabelingPolicy) -> Result<Vec<(usize, f64)>, LabelError> {
    policy
        .anchors(mid.len())?
        .map(|t| target(mid, t, policy).map(|y| (t, y)))
        .collect()
}

/// Builds the labeled windows of one day.
pub fn build_samples(day: &PreparedDay, policy: &LabelingPolicy) -> Result<Vec<LabeledSample>, LabelError> {
    policy.validate()?;
    let n = day.mid.len();
    if day.features.rows() != n {
        return Err(LabelError::InvalidPolicy("features and mid series misaligned"));
    }
    Ok(day_targets(&day.mid.values, policy)?
        .into_iter()
        .map(|(t, y)| {
            LabeledSample::new(
                day.features.clone(),
                t,
                policy.window,
                t,
                y,
                classify(y, policy.alpha),
                day.date,
            )
        })
        .collect())
}

const ARCHIVE_MAGIC: &[u8; 8] = b"LOBSAMP\0";
const ARCHIVE_VERSION: u32 = 1;

fn date_code(d: NaiveDate) -> u32 {
    d.year() as u32 * 10_000 + d.month() * 100 + d.day()
}

fn date_from_code(c: u32) -> Option<NaiveDate> {
    NaiveDate::from_ymd_opt((c / 10_000) as i32, (c / 100) % 100, c % 100)
}

/// Writes one day's samples in the columnar archive layout (little-endian):
///
/// | field | type |
/// |---|---|
/// | magic `LOBSAMP\0` | 8 bytes |
/// | version | u32 |
/// | width M, window W | u32, u32 |
/// | count N | u64 |
/// | k, k', alpha, target (0 = r_k,k', 1 = r_1,k'), stride | u32, u32, f64, u8, u32 |
/// | day as YYYYMMDD | u32 |
/// | windows | N·W·M f64, row-major per sample |
/// | labels | N u8 (0 UP, 1 DOWN, 2 STABLE) |
/// | targets y | N f64 |
/// | anchors t | N u64 |
pub fn write_archive<W: Write>(
    mut out: W,
    day: NaiveDate,
    policy: &LabelingPolicy,
    samples: &[LabeledSample],
) -> Result<(), LabelError> {
    let width = samples.first().map_or(0, |s| s.width());
    if samples
        .iter()
        .any(|s| s.width() != width || s.window_len != policy.window)
    {
        return Err(LabelError::Archive("samples disagree on shape".into()));
    }
    out.write_all(ARCHIVE_MAGIC)?;
    out.write_all(&ARCHIVE_VERSION.to_le_bytes())?;
    out.write_all(&(width as u32).to_le_bytes())?;
    out.write_all(&(policy.window as u32).to_le_bytes())?;
    out.write_all(&(samples.len() as u64).to_le_bytes())?;
    out.write_all(&(policy.k as u32).to_le_bytes())?;
    out.write_all(&(policy.k_prime as u32).to_le_bytes())?;
    out.write_all(&policy.alpha.to_le_bytes())?;
    out.write_all(&[match policy.target {
        TargetKind::RkK => 0u8,
        TargetKind::R1K => 1,
    }])?;
    out.write_all(&(policy.stride as u32).to_le_bytes())?;
    out.write_all(&date_code(day).to_le_bytes())?;
    for s in samples {
        for v in s.window() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    let labels: Vec<u8> = samples.iter().map(|s| s.label as u8).collect();
    out.write_all(&labels)?;
    for s in samples {
        out.write_all(&s.y.to_le_bytes())?;
    }
    for s in samples {
        out.write_all(&(s.t as u64).to_le_bytes())?;
    }
    Ok(())
}

/// Decoded archive contents.
#[derive(Debug, Clone)]
pub struct Archive {
    pub day: NaiveDate,
    pub policy: LabelingPolicy,
    pub samples: Vec<LabeledSample>,
}

pub fn read_archive<R: Read>(mut input: R) -> Result<Archive, LabelError> {
    fn arr<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], LabelError> {
        let mut b = [0u8; N];
        r.read_exact(&mut b)?;
        Ok(b)
    }
    let r = &mut input;
    if &arr::<8, _>(r)? != ARCHIVE_MAGIC {
        return Err(LabelError::Archive("bad magic".into()));
    }
    let version = u32::from_le_bytes(arr(r)?);
    if version != ARCHIVE_VERSION {
        return Err(LabelError::Archive(format!("unsupported version {version}")));
    }
    let width = u32::from_le_bytes(arr(r)?) as usize;
    let window = u32::from_le_bytes(arr(r)?) as usize;
    let count = u64::from_le_bytes(arr(r)?) as usize;
    let k = u32::from_le_bytes(arr(r)?) as usize;
    let k_prime = u32::from_le_bytes(arr(r)?) as usize;
    let alpha = f64::from_le_bytes(arr(r)?);
    let target = match arr::<1, _>(r)?[0] {
        0 => TargetKind::RkK,
        1 => TargetKind::R1K,
        other => return Err(LabelError::Archive(format!("bad target kind {other}"))),
    };
    let stride = u32::from_le_bytes(arr(r)?) as usize;
    let day =
        date_from_code(u32::from_le_bytes(arr(r)?)).ok_or_else(|| LabelError::Archive("bad date".into()))?;
    let policy = LabelingPolicy {
        k,
        k_prime,
        alpha,
        target,
        window,
        stride,
    };
    let mut windows = Vec::with_capacity(count);
    for _ in 0..count {
        let mut data = Vec::with_capacity(window * width);
        for _ in 0..window * width {
            data.push(f64::from_le_bytes(arr(r)?));
        }
        windows.push(Arc::new(FeatureMatrix { width, data }));
    }
    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels)?;
    let mut ys = Vec::with_capacity(count);
    for _ in 0..count {
        ys.push(f64::from_le_bytes(arr(r)?));
    }
    let mut samples = Vec::with_capacity(count);
    for ((src, lab), y) in windows.into_iter().zip(labels).zip(ys) {
        let t = u64::from_le_bytes(arr(r)?) as usize;
        let label =
            Label::from_index(lab as usize).ok_or_else(|| LabelError::Archive(format!("bad label {lab}")))?;
        samples.push(LabeledSample::new(src, window - 1, window, t, y, label, day));
    }
    Ok(Archive { day, policy, samples })
}
