use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

/// One univariate series. Missing observations are stored as `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub id: String,
    pub start: NaiveDateTime,
    /// Frequency tag such as `H`, `D`, `W`, `M`, `Q`, `Y`.
    pub freq: String,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(id: impl Into<String>, start: NaiveDateTime, freq: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            start,
            freq: freq.into(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `true` at missing positions; `None` when everything is observed.
    pub fn mask(&self) -> Option<Vec<bool>> {
        self.values
            .iter()
            .any(|v| v.is_nan())
            .then(|| self.values.iter().map(|v| v.is_nan()).collect())
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }
}

/// Start timestamp used when none is meaningful (synthetic data).
pub fn epoch() -> NaiveDateTime {
    chrono::DateTime::UNIX_EPOCH.naive_utc()
}
