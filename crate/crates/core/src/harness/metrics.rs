use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::datagen::{AnomalyKind, Gold, ReferenceAct};
use crate::embeddings::EncodedAct;
use crate::error::Result;
use crate::pop::Prediction;

/// Anything that carries a gold outcome.
pub trait Labeled {
    fn gold(&self) -> Gold;
}

impl Labeled for ReferenceAct {
    fn gold(&self) -> Gold {
        self.gold
    }
}

impl Labeled for EncodedAct {
    fn gold(&self) -> Gold {
        self.gold
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub correct: usize,
    pub n: usize,
}

impl Count {
    /// `100·correct/n`, or 0 for an empty category.
    pub fn percent(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.n as f64
        }
    }
}

/// Rows: gold Pointing, MissRef, MultRef. Columns: predicted the gold
/// index, pointed elsewhere, protested.
pub type Confusion = [[usize; 3]; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total: f64,
    pub pointing: f64,
    pub missref: f64,
    pub multref: f64,
    pub total_count: Count,
    pub pointing_count: Count,
    pub missref_count: Count,
    pub multref_count: Count,
    pub confusion: Confusion,
}

fn row_of(gold: Gold) -> usize {
    match gold {
        Gold::Point(_) => 0,
        Gold::Anomaly(AnomalyKind::Miss) => 1,
        Gold::Anomaly(AnomalyKind::Mult) => 2,
    }
}

pub fn is_correct(gold: Gold, pred: Prediction) -> bool {
    match (gold, pred) {
        (Gold::Point(i), Prediction::Point(j)) => i == j,
        (Gold::Anomaly(_), Prediction::Protest) => true,
        _ => false,
    }
}

impl Metrics {
    pub fn from_outcomes<I: IntoIterator<Item = (Gold, Prediction)>>(outcomes: I) -> Self {
        let mut confusion = [[0usize; 3]; 3];
        let mut cats = [Count::default(); 3];
        for (gold, pred) in outcomes {
            let row = row_of(gold);
            let col = match (gold, pred) {
                (_, Prediction::Protest) => 2,
                (Gold::Point(i), Prediction::Point(j)) if i == j => 0,
                _ => 1,
            };
            confusion[row][col] += 1;
            cats[row].n += 1;
            if is_correct(gold, pred) {
                cats[row].correct += 1;
            }
        }
        let total_count = Count {
            correct: cats.iter().map(|c| c.correct).sum(),
            n: cats.iter().map(|c| c.n).sum(),
        };
        Metrics {
            total: total_count.percent(),
            pointing: cats[0].percent(),
            missref: cats[1].percent(),
            multref: cats[2].percent(),
            total_count,
            pointing_count: cats[0],
            missref_count: cats[1],
            multref_count: cats[2],
            confusion,
        }
    }

    /// Fraction of acts on which the system protested.
    pub fn protest_rate(&self) -> f64 {
        let protests: usize = self.confusion.iter().map(|r| r[2]).sum();
        if self.total_count.n == 0 {
            0.0
        } else {
            protests as f64 / self.total_count.n as f64
        }
    }

    /// One-line summary plus the confusion table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:>8} {:>8} {:>8} {:>8}", "Total", "Pointing", "MissRef", "MultRef").unwrap();
        writeln!(
            out,
            "{:>8.1} {:>8.1} {:>8.1} {:>8.1}",
            self.total, self.pointing, self.missref, self.multref
        )
        .unwrap();
        writeln!(out).unwrap();
        writeln!(out, "{:<10} {:>8} {:>8} {:>8}", "gold\\pred", "gold idx", "other", "protest").unwrap();
        for (name, row) in ["Pointing", "MissRef", "MultRef"].iter().zip(&self.confusion) {
            writeln!(out, "{:<10} {:>8} {:>8} {:>8}", name, row[0], row[1], row[2]).unwrap();
        }
        out
    }
}

/// Runs `predict` over every act and tallies the outcomes.
pub fn evaluate<A, F>(acts: &[A], mut predict: F) -> Result<Metrics>
where
    A: Labeled,
    F: FnMut(&A) -> Result<Prediction>,
{
    let mut outcomes = Vec::with_capacity(acts.len());
    for act in acts {
        outcomes.push((act.gold(), predict(act)?));
    }
    Ok(Metrics::from_outcomes(outcomes))
}
