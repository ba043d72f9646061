use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::world::World;
use crate::datagen::{Gold, ReferenceAct};
use crate::error::{Error, Result};
use crate::numerics::{norm, Rng};

/// Ordered token list with O(1) index lookup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            index.entry(t.clone()).or_insert(i);
        }
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Object nouns followed by attributes, in world order.
    pub fn for_world(world: &World) -> Self {
        let mut tokens: Vec<String> = world.objects().to_vec();
        tokens.extend(world.attributes().iter().cloned());
        Vocab::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// One-hot vector of length `|vocab|` for `token`.
pub fn one_hot(token: &str, vocab: &Vocab) -> Result<Vec<f64>> {
    let i = vocab
        .index_of(token)
        .ok_or_else(|| Error::Encoding(format!("`{token}` is not in the one-hot vocabulary")))?;
    let mut v = vec![0.0; vocab.len()];
    v[i] = 1.0;
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodeMode {
    /// Word and attribute vectors from the world's tables.
    Dense,
    /// Query nouns and attributes as one-hot vectors; images stay dense.
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodeOptions {
    pub mode: EncodeMode,
    /// Dense mode only: substitute a zero vector for unknown words or images.
    pub unknown_as_zero: bool,
    /// L2-normalize each concatenated block (image, noun, attribute).
    pub normalize_blocks: bool,
    /// Zero the attribute blocks, keeping dimensions unchanged.
    pub drop_attributes: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions {
            mode: EncodeMode::Dense,
            unknown_as_zero: false,
            normalize_blocks: false,
            drop_attributes: false,
        }
    }
}

impl EncodeOptions {
    pub fn mode(mode: EncodeMode) -> Self {
        EncodeOptions {
            mode,
            ..Self::default()
        }
    }
}

/// A reference act turned into numeric inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedAct {
    pub id: String,
    pub query: Vec<f64>,
    pub candidates: Vec<Vec<f64>>,
    pub gold: Gold,
}

impl EncodedAct {
    pub fn new(id: impl Into<String>, query: Vec<f64>, candidates: Vec<Vec<f64>>, gold: Gold) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::contract("encoded act needs at least one candidate"));
        }
        let d = candidates[0].len();
        if candidates.iter().any(|c| c.len() != d) {
            return Err(Error::contract("candidate vectors must share one dimension"));
        }
        Ok(EncodedAct {
            id: id.into(),
            query,
            candidates,
            gold,
        })
    }

    pub fn cardinality(&self) -> usize {
        self.candidates.len()
    }

    pub fn query_dim(&self) -> usize {
        self.query.len()
    }

    pub fn candidate_dim(&self) -> usize {
        self.candidates.first().map_or(0, Vec::len)
    }
}

/// Encodes reference acts against a world.
#[derive(Debug, Clone)]
pub struct Encoder<'w> {
    world: &'w World,
    vocab: Option<Vocab>,
    options: EncodeOptions,
}

impl<'w> Encoder<'w> {
    pub fn new(world: &'w World, options: EncodeOptions) -> Result<Self> {
        let vocab = match options.mode {
            EncodeMode::Dense => None,
            EncodeMode::OneHot => {
                if options.unknown_as_zero {
                    return Err(Error::config("unknown-word back-off is only available in dense mode"));
                }
                Some(Vocab::for_world(world))
            }
        };
        Ok(Encoder { world, vocab, options })
    }

    /// Uses an explicit vocabulary for one-hot mode (e.g. one stored in a checkpoint).
    pub fn with_vocab(world: &'w World, options: EncodeOptions, vocab: Vocab) -> Result<Self> {
        let mut enc = Encoder::new(world, options)?;
        if enc.options.mode == EncodeMode::OneHot {
            enc.vocab = Some(vocab);
        }
        Ok(enc)
    }

    pub fn vocab(&self) -> Option<&Vocab> {
        self.vocab.as_ref()
    }

    pub fn options(&self) -> &EncodeOptions {
        &self.options
    }

    fn word_dim(&self) -> usize {
        match &self.vocab {
            Some(v) => v.len(),
            None => self.world.word_vecs().dim(),
        }
    }

    /// `(query_dim, candidate_dim)` for acts with or without attributes.
    pub fn dims(&self, with_attributes: bool) -> (usize, usize) {
        let w = self.word_dim();
        let img = self.world.image_vecs().dim();
        if with_attributes {
            (2 * w, img + w)
        } else {
            (w, img)
        }
    }

    fn linguistic(&self, token: &str, attribute: bool) -> Result<Vec<f64>> {
        if let Some(vocab) = &self.vocab {
            return one_hot(token, vocab);
        }
        let table = if attribute {
            self.world.attr_vecs()
        } else {
            self.world.word_vecs()
        };
        match table.get(token) {
            Some(v) => Ok(v.to_vec()),
            None if self.options.unknown_as_zero => {
                log::warn!("unknown token `{token}` encoded as a zero vector");
                Ok(vec![0.0; self.world.word_vecs().dim()])
            }
            None => Err(Error::Encoding(format!("no vector for token `{token}`"))),
        }
    }

    fn image(&self, image_id: &str) -> Result<Vec<f64>> {
        match self.world.image_vecs().get(image_id) {
            Some(v) => Ok(v.to_vec()),
            None if self.options.unknown_as_zero && self.options.mode == EncodeMode::Dense => {
                log::warn!("unknown image `{image_id}` encoded as a zero vector");
                Ok(vec![0.0; self.world.image_vecs().dim()])
            }
            None => Err(Error::Encoding(format!("no vector for image `{image_id}`"))),
        }
    }

    fn block(&self, mut v: Vec<f64>) -> Vec<f64> {
        if self.options.normalize_blocks {
            let n = norm(&v);
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
            }
        }
        v
    }

    fn attribute_block(&self, attr: &str) -> Result<Vec<f64>> {
        let v = self.linguistic(attr, true)?;
        if self.options.drop_attributes {
            Ok(vec![0.0; v.len()])
        } else {
            Ok(self.block(v))
        }
    }

    pub fn encode(&self, act: &ReferenceAct) -> Result<EncodedAct> {
        let with_attr = act.query.attribute.is_some();
        let mut query = self.block(self.linguistic(&act.query.noun, false)?);
        if let Some(a) = &act.query.attribute {
            query.extend(self.attribute_block(a)?);
        }
        let mut candidates = Vec::with_capacity(act.items.len());
        for item in &act.items {
            let mut c = self.block(self.image(&item.image_id)?);
            match (&item.attribute, with_attr) {
                (Some(a), true) => c.extend(self.attribute_block(a)?),
                (None, false) => {}
                _ => {
                    return Err(Error::Encoding(format!(
                        "act `{}` mixes items with and without attributes",
                        act.id
                    )))
                }
            }
            candidates.push(c);
        }
        EncodedAct::new(act.id.clone(), query, candidates, act.gold)
    }

    pub fn encode_all(&self, acts: &[ReferenceAct]) -> Result<Vec<EncodedAct>> {
        acts.iter().map(|a| self.encode(a)).collect()
    }
}

/// Encodes one act with default options for `mode`.
pub fn encode_act(act: &ReferenceAct, world: &World, mode: EncodeMode) -> Result<EncodedAct> {
    Encoder::new(world, EncodeOptions::mode(mode))?.encode(act)
}

/// A permutation of image vectors: image `id` takes the vector previously held
/// by `source[id]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePermutation {
    pub seed: u64,
    pub source: BTreeMap<String, String>,
}

impl ImagePermutation {
    pub fn inverse(&self) -> ImagePermutation {
        ImagePermutation {
            seed: self.seed,
            source: self.source.iter().map(|(k, v)| (v.clone(), k.clone())).collect(),
        }
    }

    pub fn apply(&self, world: &World) -> Result<World> {
        let mut out = world.clone();
        for (id, src) in &self.source {
            let v = world
                .image_vecs()
                .get(src)
                .ok_or_else(|| Error::Encoding(format!("no vector for image `{src}`")))?
                .to_vec();
            if !world.image_vecs().contains(id) {
                return Err(Error::Encoding(format!("no vector for image `{id}`")));
            }
            out.image_vecs_mut().replace(id, v);
        }
        Ok(out)
    }
}

/// Reassigns image vectors by a seeded cyclic permutation (Sattolo's
/// algorithm), so no image id keeps its own vector. Returns the shuffled
/// world together with the permutation for reuse on other splits.
pub fn shuffle_images(world: &World, seed: u64) -> Result<(World, ImagePermutation)> {
    let ids: Vec<String> = world.image_ids().map(str::to_owned).collect();
    if ids.len() < 2 {
        return Err(Error::contract("image shuffling needs at least two images"));
    }
    let mut rng = Rng::new(seed);
    let mut order: Vec<usize> = (0..ids.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.below(i);
        order.swap(i, j);
    }
    let source = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), ids[order[i]].clone()))
        .collect();
    let perm = ImagePermutation { seed, source };
    let shuffled = perm.apply(world)?;
    Ok((shuffled, perm))
}
