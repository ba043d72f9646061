use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::act::{AnomalyKind, Gold, ReferenceAct};

/// Average frequency per combination type (or percentage, for the unseen row).
/// Attribute columns are `None` for Object-Only data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboRow {
    pub object: f64,
    pub object_image: f64,
    pub object_attr: Option<f64>,
    pub object_attr_image: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub train: ComboRow,
    pub test: Option<ComboRow>,
    /// Percentage of distinct test combinations never seen in train.
    pub unseen_in_test: Option<ComboRow>,
}

#[derive(Default)]
struct Combos<'a> {
    o: HashMap<&'a str, usize>,
    oi: HashMap<(&'a str, &'a str), usize>,
    oa: HashMap<(&'a str, &'a str), usize>,
    oai: HashMap<(&'a str, &'a str, &'a str), usize>,
    has_attr: bool,
}

impl<'a> Combos<'a> {
    fn count(acts: &'a [ReferenceAct]) -> Self {
        let mut c = Combos::default();
        for act in acts {
            for it in &act.items {
                *c.o.entry(&it.object).or_default() += 1;
                *c.oi.entry((&it.object, &it.image_id)).or_default() += 1;
                if let Some(a) = &it.attribute {
                    c.has_attr = true;
                    *c.oa.entry((&it.object, a)).or_default() += 1;
                    *c.oai.entry((&it.object, a, &it.image_id)).or_default() += 1;
                }
            }
        }
        c
    }

    fn row(&self) -> ComboRow {
        fn avg<K>(m: &HashMap<K, usize>) -> f64 {
            if m.is_empty() {
                0.0
            } else {
                m.values().sum::<usize>() as f64 / m.len() as f64
            }
        }
        ComboRow {
            object: avg(&self.o),
            object_image: avg(&self.oi),
            object_attr: self.has_attr.then(|| avg(&self.oa)),
            object_attr_image: self.has_attr.then(|| avg(&self.oai)),
        }
    }

    fn unseen(&self, train: &Combos<'_>) -> ComboRow {
        fn pct<K: Eq + std::hash::Hash>(test: &HashMap<K, usize>, train: &HashMap<K, usize>) -> f64 {
            if test.is_empty() {
                return 0.0;
            }
            let missing = test.keys().filter(|k| !train.contains_key(*k)).count();
            100.0 * missing as f64 / test.len() as f64
        }
        ComboRow {
            object: pct(&self.o, &train.o),
            object_image: pct(&self.oi, &train.oi),
            object_attr: self.has_attr.then(|| pct(&self.oa, &train.oa)),
            object_attr_image: self.has_attr.then(|| pct(&self.oai, &train.oai)),
        }
    }
}

/// Frequency statistics over sequence items, optionally against a test split.
pub fn dataset_stats(train: &[ReferenceAct], test: Option<&[ReferenceAct]>) -> DatasetStats {
    let tr = Combos::count(train);
    let te = test.map(Combos::count);
    DatasetStats {
        train: tr.row(),
        test: te.as_ref().map(Combos::row),
        unseen_in_test: te.as_ref().map(|t| t.unseen(&tr)),
    }
}

impl DatasetStats {
    pub fn render(&self) -> String {
        let fmt_row = |r: &ComboRow| {
            let opt = |x: Option<f64>| x.map_or("--".to_string(), |v| format!("{v:.1}"));
            format!(
                "{:>8.1} {:>8.1} {:>8} {:>8}",
                r.object,
                r.object_image,
                opt(r.object_attr),
                opt(r.object_attr_image)
            )
        };
        let mut out = String::new();
        writeln!(out, "{:<16} {:>8} {:>8} {:>8} {:>8}", "", "O", "O+I", "O+A", "O+A+I").unwrap();
        writeln!(out, "{:<16} {}", "train avg freq", fmt_row(&self.train)).unwrap();
        if let Some(t) = &self.test {
            writeln!(out, "{:<16} {}", "test avg freq", fmt_row(t)).unwrap();
        }
        if let Some(u) = &self.unseen_in_test {
            writeln!(out, "{:<16} {}", "unseen in test %", fmt_row(u)).unwrap();
        }
        out
    }
}

/// Outcome and length distribution of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub acts: usize,
    pub point_fraction: f64,
    pub miss_fraction: f64,
    pub mult_fraction: f64,
    /// length → fraction of acts
    pub length_fractions: BTreeMap<usize, f64>,
    /// gold index → fraction of successful acts
    pub gold_index_fractions: BTreeMap<usize, f64>,
    pub distinct_sequences: usize,
}

pub fn summarize(acts: &[ReferenceAct]) -> SplitSummary {
    let n = acts.len().max(1) as f64;
    let mut point = 0usize;
    let mut miss = 0usize;
    let mut mult = 0usize;
    let mut lengths: BTreeMap<usize, usize> = BTreeMap::new();
    let mut golds: BTreeMap<usize, usize> = BTreeMap::new();
    let mut distinct = HashSet::new();
    for act in acts {
        *lengths.entry(act.len()).or_default() += 1;
        match act.gold {
            Gold::Point(i) => {
                point += 1;
                *golds.entry(i).or_default() += 1;
            }
            Gold::Anomaly(AnomalyKind::Miss) => miss += 1,
            Gold::Anomaly(AnomalyKind::Mult) => mult += 1,
        }
        distinct.insert((&act.query, &act.items));
    }
    let points = point.max(1) as f64;
    SplitSummary {
        acts: acts.len(),
        point_fraction: point as f64 / n,
        miss_fraction: miss as f64 / n,
        mult_fraction: mult as f64 / n,
        length_fractions: lengths.into_iter().map(|(k, v)| (k, v as f64 / n)).collect(),
        gold_index_fractions: golds.into_iter().map(|(k, v)| (k, v as f64 / points)).collect(),
        distinct_sequences: distinct.len(),
    }
}
