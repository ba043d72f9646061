use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::table::{CompatMap, EmbeddingTable};
use crate::error::{Error, Result};
use crate::numerics::{norm, Matrix, Rng};

/// Shape and noise parameters of a synthetic embedding world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub classes: usize,
    pub images_per_class: usize,
    pub attributes: usize,
    /// Attributes initially sampled per object before coverage repair.
    pub attrs_per_object: usize,
    pub d_img: usize,
    pub d_word: usize,
    /// Per-coordinate std of image noise around the class centroid.
    pub sigma: f64,
    /// Per-coordinate std of the noise added to mapped word vectors.
    pub sigma_w: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            classes: 200,
            images_per_class: 10,
            attributes: 100,
            attrs_per_object: 8,
            d_img: 64,
            d_word: 32,
            sigma: 0.1,
            sigma_w: 0.2,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("world needs at least 2 object classes"));
        }
        if self.images_per_class < 1 {
            return Err(Error::config("world needs at least 1 image per class"));
        }
        if self.d_img == 0 || self.d_word == 0 {
            return Err(Error::config("embedding dimensions must be positive"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite())
            || !(self.sigma_w >= 0.0 && self.sigma_w.is_finite())
        {
            return Err(Error::config("noise scales must be finite and non-negative"));
        }
        if self.attributes > 0 {
            if self.attributes < 3 {
                return Err(Error::config("attribute inventory needs at least 3 attributes"));
            }
            if self.attrs_per_object < 3 || self.attrs_per_object > self.attributes {
                return Err(Error::config(format!(
                    "attrs_per_object must lie in [3, {}]",
                    self.attributes
                )));
            }
        }
        Ok(())
    }
}

/// Objects, their images, and the visual/word/attribute vector spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWorld", into = "RawWorld")]
pub struct World {
    raw: RawWorld,
    image_object: BTreeMap<String, String>,
    attr_objects: BTreeMap<String, Vec<String>>,
    attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawWorld {
    config: Option<WorldConfig>,
    seed: Option<u64>,
    objects: Vec<String>,
    images: BTreeMap<String, Vec<String>>,
    image_vecs: EmbeddingTable,
    word_vecs: EmbeddingTable,
    attr_vecs: EmbeddingTable,
    compat: CompatMap,
}

impl TryFrom<RawWorld> for World {
    type Error = Error;

    fn try_from(raw: RawWorld) -> Result<Self> {
        World::from_raw(raw)
    }
}

impl From<World> for RawWorld {
    fn from(w: World) -> Self {
        w.raw
    }
}

fn token_name(prefix: &str, i: usize, width: usize) -> String {
    format!("{prefix}_{i:0width$}")
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl World {
    /// Generates a seeded synthetic world.
    ///
    /// Each class gets a unit centroid; images are the centroid plus isotropic
    /// Gaussian noise (std `sigma`). The class noun vector is a fixed random
    /// linear map of the centroid plus noise (std `sigma_w`). Attribute vectors
    /// are independent random unit vectors, and compatibility is a sampled
    /// bipartite relation in which every object has at least 3 attributes and
    /// every attribute at least 2 objects.
    ///
    /// Names are zero-padded to a common width so that no name is a substring
    /// of another.
    pub fn synthetic(config: &WorldConfig, seed: u64) -> Result<World> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let cw = config.classes.to_string().len().max(4);
        let iw = config.images_per_class.to_string().len().max(3);
        let aw = config.attributes.to_string().len().max(4);

        let objects: Vec<String> = (0..config.classes).map(|c| token_name("object", c, cw)).collect();
        let centroids: Vec<Vec<f64>> = (0..config.classes)
            .map(|_| unit(rng.gaussian_vec(config.d_img, 1.0)))
            .collect();

        let map_scale = 1.0 / (config.d_word as f64).sqrt();
        let cross_modal = Matrix::from_vec(
            config.d_word,
            config.d_img,
            rng.gaussian_vec(config.d_word * config.d_img, map_scale),
        )?;

        let mut images = BTreeMap::new();
        let mut image_vecs = EmbeddingTable::new(config.d_img);
        for (obj, mu) in objects.iter().zip(&centroids) {
            let mut ids = Vec::with_capacity(config.images_per_class);
            for k in 0..config.images_per_class {
                let id = format!("{obj}/{k:0iw$}");
                let v: Vec<f64> = mu.iter().map(|m| m + config.sigma * rng.normal()).collect();
                image_vecs.insert(id.clone(), v)?;
                ids.push(id);
            }
            images.insert(obj.clone(), ids);
        }

        let mut word_vecs = EmbeddingTable::new(config.d_word);
        for (obj, mu) in objects.iter().zip(&centroids) {
            let mapped = cross_modal.matvec(mu)?;
            let v = mapped.into_iter().map(|x| x + config.sigma_w * rng.normal()).collect();
            word_vecs.insert(obj.clone(), v)?;
        }

        let attr_names: Vec<String> = (0..config.attributes).map(|a| token_name("attr", a, aw)).collect();
        let mut attr_vecs = EmbeddingTable::new(config.d_word);
        for name in &attr_names {
            attr_vecs.insert(name.clone(), unit(rng.gaussian_vec(config.d_word, 1.0)))?;
        }

        let mut compat = CompatMap::new();
        if config.attributes > 0 {
            let mut owners: Vec<Vec<usize>> = vec![Vec::new(); config.attributes];
            let mut per_object: Vec<BTreeSet<usize>> = Vec::with_capacity(config.classes);
            for o in 0..config.classes {
                let picks = rng.sample_distinct(config.attributes, config.attrs_per_object);
                for &a in &picks {
                    owners[a].push(o);
                }
                per_object.push(picks.into_iter().collect());
            }
            // every attribute must be compatible with at least two objects
            for (a, owned) in owners.iter_mut().enumerate() {
                while owned.len() < 2 {
                    let o = rng.below(config.classes);
                    if per_object[o].insert(a) {
                        owned.push(o);
                    }
                }
            }
            for (o, attrs) in per_object.into_iter().enumerate() {
                compat.insert(
                    objects[o].clone(),
                    attrs.into_iter().map(|a| attr_names[a].clone()).collect(),
                );
            }
        }

        World::from_raw(RawWorld {
            config: Some(config.clone()),
            seed: Some(seed),
            objects,
            images,
            image_vecs,
            word_vecs,
            attr_vecs,
            compat,
        })
    }

    /// Assembles a world from externally produced vectors.
    ///
    /// Image ids must have the form `<object>/<suffix>`; the object of an image
    /// is everything before the last `/`. Every such object needs a word vector.
    pub fn from_tables(
        image_vecs: EmbeddingTable,
        word_vecs: EmbeddingTable,
        attr_vecs: EmbeddingTable,
        compat: CompatMap,
    ) -> Result<World> {
        let mut images: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for id in image_vecs.tokens() {
            let (obj, _) = id
                .rsplit_once('/')
                .ok_or_else(|| Error::config(format!("image id `{id}` is not `<object>/<suffix>`")))?;
            images.entry(obj.to_owned()).or_default().push(id.to_owned());
        }
        let objects = images.keys().cloned().collect();
        World::from_raw(RawWorld {
            config: None,
            seed: None,
            objects,
            images,
            image_vecs,
            word_vecs,
            attr_vecs,
            compat,
        })
    }

    fn from_raw(raw: RawWorld) -> Result<World> {
        let mut image_object = BTreeMap::new();
        let mut seen_objects = BTreeSet::new();
        for obj in &raw.objects {
            if !seen_objects.insert(obj.as_str()) {
                return Err(Error::config(format!("duplicate object `{obj}`")));
            }
            let ids = raw
                .images
                .get(obj)
                .filter(|ids| !ids.is_empty())
                .ok_or_else(|| Error::config(format!("object `{obj}` has no images")))?;
            for id in ids {
                if !raw.image_vecs.contains(id) {
                    return Err(Error::config(format!("image `{id}` has no vector")));
                }
                if image_object.insert(id.clone(), obj.clone()).is_some() {
                    return Err(Error::config(format!("image `{id}` listed under two objects")));
                }
            }
            if !raw.word_vecs.contains(obj) {
                return Err(Error::config(format!("object `{obj}` has no word vector")));
            }
        }
        if raw.images.len() != raw.objects.len() {
            return Err(Error::config("image map lists objects missing from the object list"));
        }
        if raw.attr_vecs.len() > 0 && raw.attr_vecs.dim() != raw.word_vecs.dim() {
            return Err(Error::config("attribute and word vectors must share a dimension"));
        }

        let mut attr_objects: BTreeMap<String, Vec<String>> = BTreeMap::new();
        if !raw.compat.is_empty() {
            for obj in &raw.objects {
                let attrs = raw.compat.get(obj).map_or(0, BTreeSet::len);
                if attrs < 3 {
                    return Err(Error::config(format!(
                        "object `{obj}` has {attrs} compatible attributes, need at least 3"
                    )));
                }
            }
            for (obj, attrs) in &raw.compat {
                if !seen_objects.contains(obj.as_str()) {
                    return Err(Error::config(format!("compatibility entry for unknown object `{obj}`")));
                }
                for a in attrs {
                    if !raw.attr_vecs.contains(a) {
                        return Err(Error::config(format!("attribute `{a}` has no vector")));
                    }
                    attr_objects.entry(a.clone()).or_default().push(obj.clone());
                }
            }
        }
        // keep inverse lists in object order
        let position: BTreeMap<&str, usize> =
            raw.objects.iter().enumerate().map(|(i, o)| (o.as_str(), i)).collect();
        for owners in attr_objects.values_mut() {
            owners.sort_by_key(|o| position[o.as_str()]);
        }
        let attributes = raw.attr_vecs.tokens().map(str::to_owned).collect();

        Ok(World {
            raw,
            image_object,
            attr_objects,
            attributes,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<World> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn config(&self) -> Option<&WorldConfig> {
        self.raw.config.as_ref()
    }

    pub fn seed(&self) -> Option<u64> {
        self.raw.seed
    }

    pub fn objects(&self) -> &[String] {
        &self.raw.objects
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn images_of(&self, object: &str) -> &[String] {
        self.raw.images.get(object).map_or(&[], Vec::as_slice)
    }

    pub fn object_of_image(&self, image_id: &str) -> Option<&str> {
        self.image_object.get(image_id).map(String::as_str)
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.image_object.keys().map(String::as_str)
    }

    pub fn image_count(&self) -> usize {
        self.image_object.len()
    }

    pub fn image_vecs(&self) -> &EmbeddingTable {
        &self.raw.image_vecs
    }

    pub fn word_vecs(&self) -> &EmbeddingTable {
        &self.raw.word_vecs
    }

    pub fn attr_vecs(&self) -> &EmbeddingTable {
        &self.raw.attr_vecs
    }

    pub fn compat(&self) -> &CompatMap {
        &self.raw.compat
    }

    pub fn compatible_attributes(&self, object: &str) -> Vec<&str> {
        self.raw
            .compat
            .get(object)
            .map(|s| s.iter().map(String::as_str).collect())
            .unwrap_or_default()
    }

    pub fn objects_with_attribute(&self, attribute: &str) -> &[String] {
        self.attr_objects.get(attribute).map_or(&[], Vec::as_slice)
    }

    pub fn has_attributes(&self) -> bool {
        !self.raw.compat.is_empty()
    }

    pub(crate) fn image_vecs_mut(&mut self) -> &mut EmbeddingTable {
        &mut self.raw.image_vecs
    }

    /// Fraction of images whose nearest class mean (over image vectors) is their own class.
    pub fn nearest_centroid_accuracy(&self) -> f64 {
        let dim = self.raw.image_vecs.dim();
        let means: Vec<Vec<f64>> = self
            .raw
            .objects
            .iter()
            .map(|o| {
                let ids = self.images_of(o);
                let mut m = vec![0.0; dim];
                for id in ids {
                    for (acc, x) in m.iter_mut().zip(self.raw.image_vecs.get(id).unwrap()) {
                        *acc += x;
                    }
                }
                m.iter_mut().for_each(|x| *x /= ids.len() as f64);
                m
            })
            .collect();
        let mut correct = 0usize;
        for (c, obj) in self.raw.objects.iter().enumerate() {
            for id in self.images_of(obj) {
                let v = self.raw.image_vecs.get(id).unwrap();
                let best = means
                    .iter()
                    .map(|m| m.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(i, _)| i);
                if best == Some(c) {
                    correct += 1;
                }
            }
        }
        correct as f64 / self.image_count() as f64
    }
}
