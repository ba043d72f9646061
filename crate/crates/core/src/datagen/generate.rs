use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::act::{validate_act, AnomalyKind, Gold, Item, Query, ReferenceAct};
use crate::embeddings::World;
use crate::error::{Error, Result};
use crate::numerics::Rng;

const MAX_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    ObjectOnly,
    #[serde(alias = "object-attribute")]
    ObjectAttr,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "object-only" => Ok(Task::ObjectOnly),
            "object-attr" | "object-attribute" => Ok(Task::ObjectAttr),
            other => Err(Error::config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

/// Sequence-length range, anomaly rates, split sizes and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of a missing-referent anomaly.
    pub p0: f64,
    /// Probability of a multiple-referent anomaly.
    pub pm: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            min_len: 2,
            max_len: 5,
            p0: 0.15,
            pm: 0.15,
            n_train: 40_000,
            n_val: 5_000,
            n_test: 10_000,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::config(format!(
                "need 2 <= min_len <= max_len, got [{}, {}]",
                self.min_len, self.max_len
            )));
        }
        if !(self.p0 >= 0.0 && self.pm >= 0.0 && self.p0 + self.pm < 1.0) {
            return Err(Error::config("anomaly rates need p0, pm >= 0 and p0 + pm < 1"));
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }
}

/// Stream of acts for one split.
///
/// Each act draws from its own generator derived from `(seed, split, index)`,
/// so any index range can be generated independently and matches the
/// corresponding slice of a sequential run.
pub struct ActStream<'w> {
    world: &'w World,
    spec: DatasetSpec,
    task: Task,
    split: Split,
    range: Range<usize>,
}

impl Iterator for ActStream<'_> {
    type Item = Result<ReferenceAct>;

    fn next(&mut self) -> Option<Self::Item> {
        let index = self.range.next()?;
        let mut rng = Rng::derive(self.spec.seed, &[self.split.tag(), index as u64]);
        let id = format!("{}-{index}", self.split.name());
        Some(generate_act(self.task, self.world, &self.spec, &mut rng, id))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.range.size_hint()
    }
}

pub fn stream<'w>(
    task: Task,
    world: &'w World,
    spec: &DatasetSpec,
    split: Split,
    range: Range<usize>,
) -> Result<ActStream<'w>> {
    check_preconditions(task, world, spec)?;
    Ok(ActStream {
        world,
        spec: spec.clone(),
        task,
        split,
        range,
    })
}

pub fn generate_split(task: Task, world: &World, spec: &DatasetSpec, split: Split) -> Result<Vec<ReferenceAct>> {
    generate_range(task, world, spec, split, 0..spec.count(split))
}

pub fn generate_range(
    task: Task,
    world: &World,
    spec: &DatasetSpec,
    split: Split,
    range: Range<usize>,
) -> Result<Vec<ReferenceAct>> {
    stream(task, world, spec, split, range)?.collect()
}

fn check_preconditions(task: Task, world: &World, spec: &DatasetSpec) -> Result<()> {
    spec.validate()?;
    match task {
        Task::ObjectOnly => {
            if world.objects().len() < spec.max_len + 1 {
                return Err(Error::config(format!(
                    "object-only generation with max_len {} needs at least {} objects, world has {}",
                    spec.max_len,
                    spec.max_len + 1,
                    world.objects().len()
                )));
            }
        }
        Task::ObjectAttr => {
            if !world.has_attributes() {
                return Err(Error::config("object+attribute generation needs a compatibility table"));
            }
            // the query plus at most six confounders
            if spec.max_len > 7 {
                return Err(Error::config("object+attribute sequences are limited to 7 items"));
            }
        }
    }
    Ok(())
}

fn generate_act(task: Task, world: &World, spec: &DatasetSpec, rng: &mut Rng, id: String) -> Result<ReferenceAct> {
    let act = match task {
        Task::ObjectOnly => object_only_act(world, spec, rng, id)?,
        Task::ObjectAttr => object_attr_act(world, spec, rng, id)?,
    };
    validate_act(&act, spec.max_len).map_err(|msg| Error::Generation {
        object: act.query.noun.clone(),
        message: format!("generated act failed validation: {msg}"),
    })?;
    Ok(act)
}

fn draw_outcome(spec: &DatasetSpec, rng: &mut Rng) -> Option<AnomalyKind> {
    let u = rng.next_f64();
    if u < spec.p0 {
        Some(AnomalyKind::Miss)
    } else if u < spec.p0 + spec.pm {
        Some(AnomalyKind::Mult)
    } else {
        None
    }
}

fn pick_image(world: &World, object: &str, rng: &mut Rng) -> String {
    rng.choose(world.images_of(object)).expect("world objects have images").clone()
}

/// An image of `object` other than `avoid`, when the object has more than one.
fn fresh_image(world: &World, object: &str, avoid: &str, rng: &mut Rng) -> String {
    let imgs = world.images_of(object);
    if imgs.len() < 2 {
        return imgs[0].clone();
    }
    loop {
        let cand = rng.choose(imgs).expect("non-empty");
        if cand != avoid {
            return cand.clone();
        }
    }
}

/// Places slot 0 (the query item) at a random position; returns the reordered
/// items and the new position of slot 0.
fn shuffle_items(items: Vec<Item>, rng: &mut Rng) -> (Vec<Item>, usize) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    rng.shuffle(&mut order);
    let pos = order.iter().position(|&k| k == 0).expect("slot 0 present");
    let mut slots: Vec<Option<Item>> = items.into_iter().map(Some).collect();
    let out = order.iter().map(|&k| slots[k].take().expect("each slot used once")).collect();
    (out, pos)
}

fn finish(id: String, query: Query, items: Vec<Item>, outcome: Option<AnomalyKind>, rng: &mut Rng) -> ReferenceAct {
    let (items, pos) = shuffle_items(items, rng);
    let gold = match outcome {
        None => Gold::Point(pos),
        Some(kind) => Gold::Anomaly(kind),
    };
    ReferenceAct { id, query, items, gold }
}

/// One Object-Only act.
///
/// Slots are filled with distinct objects (one random image each) and the
/// first slot supplies the query. A missing-referent act replaces the first
/// slot with an object absent from the sequence; a multiple-referent act
/// overwrites one of the other slots with the query object and a fresh image.
/// The sequence is shuffled last.
pub fn object_only_act(world: &World, spec: &DatasetSpec, rng: &mut Rng, id: String) -> Result<ReferenceAct> {
    let objects = world.objects();
    let len = rng.range_inclusive(spec.min_len, spec.max_len);
    if objects.len() < len + 1 {
        return Err(Error::config("world has too few objects for the requested sequence length"));
    }
    let chosen = rng.sample_distinct(objects.len(), len);
    let mut items: Vec<Item> = chosen
        .iter()
        .map(|&o| Item {
            object: objects[o].clone(),
            image_id: pick_image(world, &objects[o], rng),
            attribute: None,
        })
        .collect();
    let query = Query {
        noun: items[0].object.clone(),
        attribute: None,
    };

    let outcome = draw_outcome(spec, rng);
    match outcome {
        Some(AnomalyKind::Miss) => {
            // uniform over the objects not already in the sequence
            let mut k = rng.below(objects.len() - len);
            let mut sorted = chosen.clone();
            sorted.sort_unstable();
            for &c in &sorted {
                if k >= c {
                    k += 1;
                }
            }
            items[0] = Item {
                object: objects[k].clone(),
                image_id: pick_image(world, &objects[k], rng),
                attribute: None,
            };
        }
        Some(AnomalyKind::Mult) => {
            let j = rng.range_inclusive(1, len - 1);
            let image_id = fresh_image(world, &query.noun, &items[0].image_id, rng);
            items[j] = Item {
                object: query.noun.clone(),
                image_id,
                attribute: None,
            };
        }
        None => {}
    }
    Ok(finish(id, query, items, outcome, rng))
}

/// One Object+Attribute act.
///
/// From the query pair (o1, a1) two further attributes a2, a3 of o1 are drawn,
/// then objects o2 and o3 (both different from o1) carrying a2 and a3. The six
/// confounders are (a2,o1), (a1,o2), (a2,o2), (a3,o1), (a1,o3), (a3,o3); the
/// sequence is the query triple plus `len - 1` of them without replacement.
/// Anomalies are introduced as in [`object_only_act`], with matching decided on
/// the (object, attribute) pair.
pub fn object_attr_act(world: &World, spec: &DatasetSpec, rng: &mut Rng, id: String) -> Result<ReferenceAct> {
    let objects = world.objects();
    let o1 = rng.choose(objects).expect("world has objects").clone();
    let attrs = world.compatible_attributes(&o1);
    if attrs.len() < 3 {
        return Err(Error::Generation {
            object: o1,
            message: format!("needs 3 compatible attributes, has {}", attrs.len()),
        });
    }
    let picks = rng.sample_distinct(attrs.len(), 3);
    let (a1, a2, a3) = (
        attrs[picks[0]].to_owned(),
        attrs[picks[1]].to_owned(),
        attrs[picks[2]].to_owned(),
    );
    let other_owner = |attr: &str, rng: &mut Rng| -> Result<String> {
        let owners: Vec<&String> = world.objects_with_attribute(attr).iter().filter(|o| **o != o1).collect();
        rng.choose(&owners).map(|o| (*o).clone()).ok_or_else(|| Error::Generation {
            object: o1.clone(),
            message: format!("attribute `{attr}` has no other compatible object"),
        })
    };
    let o2 = other_owner(&a2, rng)?;
    let o3 = other_owner(&a3, rng)?;
    let i1 = pick_image(world, &o1, rng);

    let mut triple = |attr: &str, obj: &str| Item {
        object: obj.to_owned(),
        image_id: pick_image(world, obj, rng),
        attribute: Some(attr.to_owned()),
    };
    let pool = vec![
        triple(&a2, &o1),
        triple(&a1, &o2),
        triple(&a2, &o2),
        triple(&a3, &o1),
        triple(&a1, &o3),
        triple(&a3, &o3),
    ];

    let len = rng.range_inclusive(spec.min_len, spec.max_len);
    let mut items = Vec::with_capacity(len);
    items.push(Item {
        object: o1.clone(),
        image_id: i1,
        attribute: Some(a1.clone()),
    });
    for k in rng.sample_distinct(pool.len(), len - 1) {
        items.push(pool[k].clone());
    }
    let query = Query {
        noun: o1.clone(),
        attribute: Some(a1.clone()),
    };

    let outcome = draw_outcome(spec, rng);
    match outcome {
        Some(AnomalyKind::Miss) => {
            let mut replacement = None;
            for _ in 0..MAX_RESAMPLES {
                let o = rng.choose(objects).expect("non-empty");
                let compatible = world.compatible_attributes(o);
                let Some(a) = rng.choose(&compatible) else { continue };
                if !(o == &o1 && *a == a1) {
                    replacement = Some(Item {
                        object: o.clone(),
                        image_id: pick_image(world, o, rng),
                        attribute: Some((*a).to_owned()),
                    });
                    break;
                }
            }
            items[0] = replacement.ok_or_else(|| Error::Generation {
                object: o1.clone(),
                message: "no replacement pair for a missing-referent act".into(),
            })?;
        }
        Some(AnomalyKind::Mult) => {
            let j = rng.range_inclusive(1, len - 1);
            let image_id = fresh_image(world, &o1, &items[0].image_id, rng);
            items[j] = Item {
                object: o1.clone(),
                image_id,
                attribute: Some(a1.clone()),
            };
        }
        None => {}
    }
    Ok(finish(id, query, items, outcome, rng))
}
