//! Velocity series on a uniform time grid, total variation, dyadic
//! coarsening and nearest-neighbour gap filling.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};

/// Number of 5-minute slices in a day.
pub const SLICES_PER_DAY: usize = 288;
/// Default slice duration in minutes.
pub const DEFAULT_SLICE_MINUTES: f64 = 5.0;

/// One road-day of velocity samples (km/h) on a uniform grid of slice length `h` minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocitySeries {
    road_id: String,
    day: String,
    h: f64,
    values: Vec<f64>,
    observed_mask: Vec<bool>,
}

impl VelocitySeries {
    /// Builds a fully observed series.
    pub fn new(
        road_id: impl Into<String>,
        day: impl Into<String>,
        h: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::with_mask(road_id, day, h, values, mask)
    }

    /// Builds a series with an explicit observed mask.
    pub fn with_mask(
        road_id: impl Into<String>,
        day: impl Into<String>,
        h: f64,
        values: Vec<f64>,
        observed_mask: Vec<bool>,
    ) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "h",
                reason: format!("slice duration must be positive, got {h}"),
            });
        }
        if values.len() < 2 {
            return Err(Error::TooShort {
                len: values.len(),
                min: 2,
            });
        }
        if observed_mask.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: values.len(),
                got: observed_mask.len(),
            });
        }
        check_finite(&values)?;
        if let Some(index) = values.iter().position(|v| *v < 0.0) {
            return Err(Error::NegativeVelocity {
                index,
                value: values[index],
            });
        }
        Ok(Self {
            road_id: road_id.into(),
            day: day.into(),
            h,
            values,
            observed_mask,
        })
    }

    /// Builds a series that may hold negative samples (synthetic signals,
    /// zero-mean noise). Finiteness is still enforced.
    pub fn signed(
        road_id: impl Into<String>,
        day: impl Into<String>,
        h: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "h",
                reason: format!("slice duration must be positive, got {h}"),
            });
        }
        if values.len() < 2 {
            return Err(Error::TooShort {
                len: values.len(),
                min: 2,
            });
        }
        check_finite(&values)?;
        let observed_mask = vec![true; values.len()];
        Ok(Self {
            road_id: road_id.into(),
            day: day.into(),
            h,
            values,
            observed_mask,
        })
    }

    pub fn road_id(&self) -> &str {
        &self.road_id
    }

    pub fn day(&self) -> &str {
        &self.day
    }

    /// Slice duration.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed_mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false for a constructed series (length is at least 2).
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of slices backed by a raw record.
    pub fn observed_count(&self) -> usize {
        self.observed_mask.iter().filter(|m| **m).count()
    }

    pub fn total_variation(&self) -> f64 {
        tv(&self.values)
    }

    /// Same road, day, grid and mask with replaced samples.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                expected: self.values.len(),
                got: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(Self {
            values,
            ..self.clone()
        })
    }
}

/// Discrete total variation `sum |u[i+1] - u[i]|`.
///
/// Returns 0 for a single sample and rejects non-finite input, naming the index.
pub fn total_variation(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("total variation of an empty series"));
    }
    check_finite(values)?;
    Ok(tv(values))
}

/// Unchecked total variation for internal hot loops.
pub fn tv(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Pairwise-averaged series at resolution level `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseSeries {
    pub level: u32,
    pub values: Vec<f64>,
    /// `2^level * h`.
    pub effective_h: f64,
}

/// Applies `level` rounds of pairwise averaging to raw samples.
pub fn coarsen_values(values: &[f64], level: u32) -> Result<Vec<f64>> {
    let divisor = 1usize << level;
    if values.is_empty() || values.len() % divisor != 0 {
        return Err(Error::Indivisible {
            len: values.len(),
            divisor,
        });
    }
    let mut out = values.to_vec();
    for _ in 0..level {
        out = out.chunks_exact(2).map(|p| (p[0] + p[1]) / 2.0).collect();
    }
    Ok(out)
}

/// Coarsens a series to level 0, 1 or 2.
pub fn coarsen(series: &VelocitySeries, level: u32) -> Result<CoarseSeries> {
    if level > 2 {
        return Err(Error::InvalidParameter {
            name: "level",
            reason: format!("coarsening level must be 0, 1 or 2, got {level}"),
        });
    }
    Ok(CoarseSeries {
        level,
        values: coarsen_values(series.values(), level)?,
        effective_h: series.h() * f64::from(1u32 << level),
    })
}

/// Fills a day of `n` slices from sparse `(slice, velocity)` records, slices numbered from 1.
///
/// Each missing slice copies the nearest observed slice by index distance;
/// equidistant neighbours resolve to the earlier one. Distances do not wrap
/// across midnight.
pub fn nearest_interpolate(
    road_id: impl Into<String>,
    day: impl Into<String>,
    h: f64,
    records: &[(usize, f64)],
    n: usize,
) -> Result<VelocitySeries> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut slots: Vec<Option<f64>> = vec![None; n];
    for &(slice, v) in records {
        if slice == 0 || slice > n {
            return Err(Error::SliceOutOfRange { slice, n });
        }
        if slots[slice - 1].is_some() {
            return Err(Error::DuplicateSlice { slice });
        }
        slots[slice - 1] = Some(v);
    }

    // Distance to the closest observation on each side, in one sweep each way.
    let mut left: Vec<Option<usize>> = vec![None; n];
    let mut last = None;
    for (i, slot) in slots.iter().enumerate() {
        if slot.is_some() {
            last = Some(i);
        }
        left[i] = last;
    }
    let mut right: Vec<Option<usize>> = vec![None; n];
    let mut next = None;
    for i in (0..n).rev() {
        if slots[i].is_some() {
            next = Some(i);
        }
        right[i] = next;
    }

    let mut values = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for i in 0..n {
        let src = match (left[i], right[i]) {
            (Some(l), Some(r)) => {
                if i - l <= r - i {
                    l
                } else {
                    r
                }
            }
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (None, None) => unreachable!("at least one record exists"),
        };
        values.push(slots[src].expect("source slot is observed"));
        mask.push(slots[i].is_some());
    }
    VelocitySeries::with_mask(road_id, day, h, values, mask)
}
