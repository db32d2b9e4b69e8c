//! Behavioral scoring of learner tracking data.
//!
//! Each raw tracking variable is binned into a categorical band worth
//! 0, 2, 4, 6, 8 or 10 points. Bins are lower-inclusive and half-open; the
//! last bin of every row is open-ended (capped by the variable's domain).
//! Values below a row's first bound score [`Band::None`].
//!
//! Variables pair up into four learning measures:
//!
//! | measure           | variables                          |
//! |-------------------|------------------------------------|
//! | conscientiousness | login streak (D), time spent (T)   |
//! | motivation        | page visits (P), search queries (S)|
//! | understanding     | completion (C), quiz average (Q)   |
//! | engagement        | reaction ratio (R), feedback (F)   |
//!
//! A measure is the arithmetic mean of its two variable scores.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("value {value} out of domain for variable {variable} (allowed {min}..={max})")]
    OutOfDomain {
        variable: Variable,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("no band has score value {0}")]
    UnknownBandValue(u8),
}

/// One of the eight tracking variables, in fixed column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variable {
    /// Consecutive login days.
    D,
    /// Hours spent.
    T,
    /// Distinct page visits.
    P,
    /// Search queries.
    S,
    /// Activity completion percent.
    C,
    /// Quiz average percent.
    Q,
    /// Positive:negative reaction ratio.
    R,
    /// Mean satisfaction score.
    F,
}

impl Variable {
    pub const ALL: [Variable; 8] = [
        Variable::D,
        Variable::T,
        Variable::P,
        Variable::S,
        Variable::C,
        Variable::Q,
        Variable::R,
        Variable::F,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Variable::D => "D",
            Variable::T => "T",
            Variable::P => "P",
            Variable::S => "S",
            Variable::C => "C",
            Variable::Q => "Q",
            Variable::R => "R",
            Variable::F => "F",
        }
    }

    /// Inclusive upper bound of the domain; `f64::INFINITY` for unbounded variables.
    pub fn domain_max(self) -> f64 {
        match self {
            Variable::C | Variable::Q => 100.0,
            Variable::F => 10.0,
            _ => f64::INFINITY,
        }
    }

    /// `(lower_bound, score)` pairs, ascending. A value scores the entry with
    /// the greatest lower bound not exceeding it.
    fn bins(self) -> &'static [(f64, u8)] {
        match self {
            Variable::D | Variable::P => &[(1.0, 2), (2.0, 4), (3.0, 6), (4.0, 10)],
            Variable::T => &[(1.0, 2), (4.0, 4), (8.0, 6), (13.0, 10)],
            Variable::S => &[(1.0, 2), (2.0, 4), (4.0, 6), (6.0, 10)],
            Variable::C => &[(1.0, 2), (21.0, 4), (61.0, 6), (91.0, 8), (100.0, 10)],
            Variable::Q => &[(1.0, 2), (51.0, 4), (71.0, 6), (91.0, 8), (100.0, 10)],
            Variable::R => &[(1.0, 2), (2.0, 4), (4.0, 6), (7.0, 10)],
            Variable::F => &[(1.0, 2), (4.0, 4), (6.0, 6), (8.0, 10)],
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    None,
    Low,
    Moderate,
    High,
    VeryHigh,
    Exceptional,
}

impl Band {
    pub fn value(self) -> u8 {
        match self {
            Band::None => 0,
            Band::Low => 2,
            Band::Moderate => 4,
            Band::High => 6,
            Band::VeryHigh => 8,
            Band::Exceptional => 10,
        }
    }

    pub fn from_value(value: u8) -> Result<Band, ScoringError> {
        Ok(match value {
            0 => Band::None,
            2 => Band::Low,
            4 => Band::Moderate,
            6 => Band::High,
            8 => Band::VeryHigh,
            10 => Band::Exceptional,
            other => return Err(ScoringError::UnknownBandValue(other)),
        })
    }
}

/// A categorical score: the band together with its point value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeasureScore {
    band: Band,
}

impl MeasureScore {
    pub fn new(band: Band) -> Self {
        MeasureScore { band }
    }

    pub fn band(self) -> Band {
        self.band
    }

    pub fn value(self) -> u8 {
        self.band.value()
    }
}

impl From<Band> for MeasureScore {
    fn from(band: Band) -> Self {
        MeasureScore { band }
    }
}

/// Snapshot cadence. Weekly and daily snapshots never mix in one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Granularity {
    #[default]
    Weekly,
    Daily,
}

/// One learner's raw tracking variables for one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSnapshot {
    pub learner_id: String,
    pub period_index: u32,
    pub granularity: Granularity,
    pub logins_streak_days: u32,
    pub time_spent_hours: f64,
    pub page_visits: u32,
    pub search_queries: u32,
    pub activity_completion_pct: f64,
    pub quiz_avg_pct: f64,
    pub reaction_ratio: f64,
    pub feedback_avg: f64,
}

impl TrackingSnapshot {
    /// The eight variables as reals in column order D,T,P,S,C,Q,R,F.
    pub fn values(&self) -> [f64; 8] {
        [
            f64::from(self.logins_streak_days),
            self.time_spent_hours,
            f64::from(self.page_visits),
            f64::from(self.search_queries),
            self.activity_completion_pct,
            self.quiz_avg_pct,
            self.reaction_ratio,
            self.feedback_avg,
        ]
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        for (var, value) in Variable::ALL.into_iter().zip(self.values()) {
            check_domain(var, value)?;
        }
        Ok(())
    }
}

/// The four learning measures, each on a 0–10 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MeasureVector {
    pub conscientiousness: f64,
    pub motivation: f64,
    pub understanding: f64,
    pub engagement: f64,
}

impl MeasureVector {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.conscientiousness,
            self.motivation,
            self.understanding,
            self.engagement,
        ]
    }
}

fn check_domain(variable: Variable, value: f64) -> Result<(), ScoringError> {
    let max = variable.domain_max();
    // NaN fails both comparisons and lands here too; infinity is never a measurement.
    if !(value >= 0.0 && value <= max && value.is_finite()) {
        return Err(ScoringError::OutOfDomain {
            variable,
            value,
            min: 0.0,
            max,
        });
    }
    Ok(())
}

/// Bins a raw variable value into its band.
pub fn score_variable(variable: Variable, value: f64) -> Result<MeasureScore, ScoringError> {
    check_domain(variable, value)?;
    let points = variable
        .bins()
        .iter()
        .rev()
        .find(|(lower, _)| value >= *lower)
        .map_or(0, |&(_, points)| points);
    Band::from_value(points).map(MeasureScore::from)
}

fn pair_mean(a: MeasureScore, b: MeasureScore) -> f64 {
    f64::from(u16::from(a.value()) + u16::from(b.value())) / 2.0
}

pub fn compute_measure_vector(snapshot: &TrackingSnapshot) -> Result<MeasureVector, ScoringError> {
    let v = snapshot.values();
    let mut scores = [MeasureScore::new(Band::None); 8];
    for (slot, (var, value)) in scores.iter_mut().zip(Variable::ALL.into_iter().zip(v)) {
        *slot = score_variable(var, value)?;
    }
    Ok(MeasureVector {
        conscientiousness: pair_mean(scores[0], scores[1]),
        motivation: pair_mean(scores[2], scores[3]),
        understanding: pair_mean(scores[4], scores[5]),
        engagement: pair_mean(scores[6], scores[7]),
    })
}

pub fn average_score(v: &MeasureVector) -> f64 {
    v.as_array().iter().sum::<f64>() / 4.0
}
