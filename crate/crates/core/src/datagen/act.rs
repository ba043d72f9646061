use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    /// No candidate matches the query.
    Miss,
    /// Two or more candidates match the query.
    Mult,
}

/// Gold outcome of a reference act.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGold", into = "RawGold")]
pub enum Gold {
    Point(usize),
    Anomaly(AnomalyKind),
}

impl Gold {
    pub fn is_anomaly(&self) -> bool {
        matches!(self, Gold::Anomaly(_))
    }

    /// Output cell the gold maps to for a sequence of `n` candidates:
    /// the index for `Point`, `n` for either anomaly.
    pub fn target_cell(&self, n: usize) -> usize {
        match *self {
            Gold::Point(i) => i,
            Gold::Anomaly(_) => n,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGold {
    kind: RawGoldKind,
    index: Option<usize>,
    anomaly_kind: Option<AnomalyKind>,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum RawGoldKind {
    Point,
    Anomaly,
}

impl TryFrom<RawGold> for Gold {
    type Error = Error;

    fn try_from(raw: RawGold) -> Result<Self, Error> {
        match (raw.kind, raw.index, raw.anomaly_kind) {
            (RawGoldKind::Point, Some(i), None) => Ok(Gold::Point(i)),
            (RawGoldKind::Anomaly, None, Some(k)) => Ok(Gold::Anomaly(k)),
            (RawGoldKind::Point, _, _) => Err(Error::contract(
                "point gold needs an index and no anomaly_kind",
            )),
            (RawGoldKind::Anomaly, _, _) => Err(Error::contract(
                "anomaly gold needs an anomaly_kind and no index",
            )),
        }
    }
}

impl From<Gold> for RawGold {
    fn from(g: Gold) -> Self {
        match g {
            Gold::Point(i) => RawGold {
                kind: RawGoldKind::Point,
                index: Some(i),
                anomaly_kind: None,
            },
            Gold::Anomaly(k) => RawGold {
                kind: RawGoldKind::Anomaly,
                index: None,
                anomaly_kind: Some(k),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub noun: String,
    pub attribute: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Item {
    pub object: String,
    pub image_id: String,
    pub attribute: Option<String>,
}

impl Item {
    /// An item matches when the object equals the query noun and, if the
    /// query has an attribute, the attributes are equal too.
    pub fn matches(&self, query: &Query) -> bool {
        self.object == query.noun
            && match &query.attribute {
                Some(a) => self.attribute.as_deref() == Some(a.as_str()),
                None => true,
            }
    }
}

/// One query, a candidate sequence, and the gold outcome.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceAct {
    pub id: String,
    pub query: Query,
    pub items: Vec<Item>,
    pub gold: Gold,
}

impl ReferenceAct {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn has_attributes(&self) -> bool {
        self.query.attribute.is_some()
    }

    pub fn matching_positions(&self) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.matches(&self.query))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Checks the structural and gold-consistency invariants of an act.
///
/// Lengths must lie in `[2, max_len]`; attributes must be present on the
/// query and every item, or on none of them; the gold outcome must agree
/// with the number and position of matching items.
pub fn validate_act(act: &ReferenceAct, max_len: usize) -> Result<(), String> {
    let n = act.items.len();
    if n < 2 || n > max_len {
        return Err(format!("{}: length {n} outside [2, {max_len}]", act.id));
    }
    let with_attr = act.query.attribute.is_some();
    if act.items.iter().any(|it| it.attribute.is_some() != with_attr) {
        return Err(format!("{}: attributes must be all present or all absent", act.id));
    }
    let matches = act.matching_positions();
    match act.gold {
        Gold::Point(i) => {
            if i >= n {
                return Err(format!("{}: gold index {i} out of range for {n} items", act.id));
            }
            if matches != [i] {
                return Err(format!(
                    "{}: gold Point({i}) but matching positions are {matches:?}",
                    act.id
                ));
            }
        }
        Gold::Anomaly(AnomalyKind::Miss) => {
            if !matches.is_empty() {
                return Err(format!("{}: missing-referent act has matches {matches:?}", act.id));
            }
        }
        Gold::Anomaly(AnomalyKind::Mult) => {
            if matches.len() < 2 {
                return Err(format!(
                    "{}: multiple-referent act has {} match(es)",
                    act.id,
                    matches.len()
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(o: &str) -> Item {
        Item {
            object: o.into(),
            image_id: format!("{o}/000"),
            attribute: None,
        }
    }

    fn act(items: &[&str], gold: Gold) -> ReferenceAct {
        ReferenceAct {
            id: "t-0".into(),
            query: Query {
                noun: "cup".into(),
                attribute: None,
            },
            items: items.iter().map(|o| item(o)).collect(),
            gold,
        }
    }

    #[test]
    fn gold_json_shape() {
        let s = serde_json::to_string(&Gold::Point(2)).unwrap();
        assert_eq!(s, r#"{"kind":"point","index":2,"anomaly_kind":null}"#);
        let s = serde_json::to_string(&Gold::Anomaly(AnomalyKind::Mult)).unwrap();
        assert_eq!(s, r#"{"kind":"anomaly","index":null,"anomaly_kind":"mult"}"#);
        assert!(serde_json::from_str::<Gold>(r#"{"kind":"point","index":null,"anomaly_kind":null}"#).is_err());
        assert!(serde_json::from_str::<Gold>(r#"{"kind":"anomaly","index":1,"anomaly_kind":"miss"}"#).is_err());
    }

    #[test]
    fn validator_accepts_consistent_acts() {
        assert!(validate_act(&act(&["harrier", "cup", "mug"], Gold::Point(1)), 5).is_ok());
        assert!(validate_act(&act(&["harrier", "mug"], Gold::Anomaly(AnomalyKind::Miss)), 5).is_ok());
        assert!(validate_act(&act(&["cup", "cup", "mug"], Gold::Anomaly(AnomalyKind::Mult)), 5).is_ok());
    }

    #[test]
    fn validator_rejects_inconsistent_acts() {
        assert!(validate_act(&act(&["cup", "cup"], Gold::Point(0)), 5).is_err());
        assert!(validate_act(&act(&["cup", "mug"], Gold::Point(1)), 5).is_err());
        assert!(validate_act(&act(&["cup", "mug"], Gold::Point(2)), 5).is_err());
        assert!(validate_act(&act(&["cup", "mug"], Gold::Anomaly(AnomalyKind::Miss)), 5).is_err());
        assert!(validate_act(&act(&["cup", "mug"], Gold::Anomaly(AnomalyKind::Mult)), 5).is_err());
        assert!(validate_act(&act(&["cup"], Gold::Point(0)), 5).is_err());
        assert!(validate_act(&act(&["a", "b", "cup"], Gold::Point(2)), 2).is_err());
    }

    #[test]
    fn attribute_matching_needs_both_coordinates() {
        let q = Query {
            noun: "bill".into(),
            attribute: Some("spend".into()),
        };
        let mk = |o: &str, a: &str| Item {
            object: o.into(),
            image_id: "x".into(),
            attribute: Some(a.into()),
        };
        assert!(mk("bill", "spend").matches(&q));
        assert!(!mk("bill", "pay").matches(&q));
        assert!(!mk("coin", "spend").matches(&q));
    }
}
