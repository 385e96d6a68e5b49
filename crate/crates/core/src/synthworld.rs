//! Seeded synthetic world: factor codes, renders, captions and retrieval
//! tasks with known ground truth.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::composer::{object_list, Fill, PromptTemplate};
use crate::encoders::Vocabulary;
use crate::error::{ensure, Result};

pub const OBJECTS: [&str; 20] = [
    "car", "cat", "dog", "bird", "chair", "table", "apple", "boat", "horse", "clock", "lamp",
    "guitar", "shoe", "tree", "house", "cup", "book", "fish", "bicycle", "flower",
];
pub const DOMAINS: [&str; 5] = ["real", "cartoon", "origami", "toy", "sculpture"];
pub const ATTRIBUTES: [&str; 8] = [
    "red", "blue", "green", "yellow", "striped", "wooden", "shiny", "small",
];
pub const SCENES: [&str; 6] = ["forest", "beach", "street", "kitchen", "field", "snow"];
pub const FUNCTION_WORDS: [&str; 7] = ["a", "of", "in", "and", ",", "photo", "is"];

/// Index of "real" in [`DOMAINS`].
pub const REAL: usize = 0;

pub const OBJECT_DIM: usize = 24;
pub const DOMAIN_DIM: usize = 12;
pub const ATTRIBUTE_DIM: usize = 12;
pub const SCENE_DIM: usize = 12;
pub const NOISE_DIM: usize = 4;
pub const WORLD_DIM: usize = OBJECT_DIM + DOMAIN_DIM + ATTRIBUTE_DIM + SCENE_DIM + NOISE_DIM;

/// First sample seed of each disjoint range.
pub mod seeds {
    pub const PRETRAIN: u64 = 0;
    pub const VAL: u64 = 100_000;
    pub const UNLABELED: u64 = 200_000;
    pub const HOLDOUT: u64 = 300_000;
    pub const TASK_DOMAIN: u64 = 1_000_000;
    pub const TASK_OBJECTS: u64 = 2_000_000;
    pub const TASK_ATTRIBUTES: u64 = 3_000_000;
    /// Offset of query images within a task's range.
    pub const QUERY_OFFSET: u64 = 500_000;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub noise_sigma: f64,
    pub n_pretrain: usize,
    pub n_val: usize,
    pub n_unlabeled: usize,
    pub n_holdout: usize,
    /// Probability that a pretraining image holds two or three objects.
    pub p_multi_object: f64,
    pub p_mention_domain: f64,
    pub p_mention_attribute: f64,
    pub p_mention_scene: f64,
    pub samples_per_domain_object: usize,
    pub task_pool: usize,
    pub task_queries: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.05,
            n_pretrain: 5000,
            n_val: 200,
            n_unlabeled: 5000,
            n_holdout: 500,
            p_multi_object: 0.3,
            p_mention_domain: 0.7,
            p_mention_attribute: 0.7,
            p_mention_scene: 0.7,
            samples_per_domain_object: 20,
            task_pool: 2000,
            task_queries: 200,
        }
    }
}

/// Semantic content of one image. `None` and empty fields render as zero
/// blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Descriptor {
    pub objects: Vec<usize>,
    pub domain: Option<usize>,
    pub attributes: Vec<usize>,
    pub scene: Option<usize>,
}

impl Descriptor {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.objects.is_empty() && self.objects.len() <= 3,
            "descriptor needs one to three objects"
        );
        ensure!(self.attributes.len() <= 2, "at most two attributes per image");
        ensure!(self.objects.iter().all(|&o| o < OBJECTS.len()), "object id out of range");
        ensure!(self.attributes.iter().all(|&a| a < ATTRIBUTES.len()), "attribute id out of range");
        ensure!(self.domain.is_none_or(|d| d < DOMAINS.len()), "domain id out of range");
        ensure!(self.scene.is_none_or(|s| s < SCENES.len()), "scene id out of range");
        let mut o = self.objects.clone();
        o.sort_unstable();
        o.dedup();
        ensure!(o.len() == self.objects.len(), "repeated object");
        ensure!(
            self.attributes.len() < 2 || self.attributes[0] != self.attributes[1],
            "repeated attribute"
        );
        Ok(())
    }

    pub fn has_object(&self, o: usize) -> bool {
        self.objects.contains(&o)
    }
}

/// What a caption states; the other factors are left open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionFacts {
    pub domain: Option<usize>,
    pub objects: Vec<usize>,
    pub attribute: Option<usize>,
    pub scene: Option<usize>,
}

impl CaptionFacts {
    /// True when `d` agrees with everything the caption says.
    pub fn satisfied_by(&self, d: &Descriptor) -> bool {
        self.domain.is_none_or(|x| d.domain == Some(x))
            && self.objects.iter().all(|&o| d.has_object(o))
            && self.attribute.is_none_or(|a| d.attributes.contains(&a))
            && self.scene.is_none_or(|s| d.scene == Some(s))
    }
}

fn unit_code<R: Rng>(rng: &mut R, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

fn block_sum(codes: &[Vec<f32>], ids: &[usize], dim: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; dim];
    if ids.is_empty() {
        return out;
    }
    for &i in ids {
        out.iter_mut().zip(&codes[i]).for_each(|(o, c)| *o += c);
    }
    if ids.len() > 1 {
        let n = out.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        if n > 1e-12 {
            out.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
        }
    }
    out
}

/// Factor codes and vocabulary of a world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub config: WorldConfig,
    pub objects: Vec<Vec<f32>>,
    pub domains: Vec<Vec<f32>>,
    pub attributes: Vec<Vec<f32>>,
    pub scenes: Vec<Vec<f32>>,
    pub vocab: Vocabulary,
}

pub fn vocabulary() -> Vocabulary {
    Vocabulary::new(
        FUNCTION_WORDS
            .iter()
            .chain(&DOMAINS)
            .chain(&OBJECTS)
            .chain(&ATTRIBUTES)
            .chain(&SCENES)
            .copied(),
    )
}

impl World {
    pub fn generate(config: WorldConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut codes = |n: usize, dim: usize| (0..n).map(|_| unit_code(&mut rng, dim)).collect();
        Self {
            objects: codes(OBJECTS.len(), OBJECT_DIM),
            domains: codes(DOMAINS.len(), DOMAIN_DIM),
            attributes: codes(ATTRIBUTES.len(), ATTRIBUTE_DIM),
            scenes: codes(SCENES.len(), SCENE_DIM),
            vocab: vocabulary(),
            seed,
            config,
        }
    }

    fn render_rng(&self, sample_seed: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        rng.set_stream(self.seed);
        rng
    }

    /// Concatenated factor blocks plus jitter and noise. Pure in
    /// (world, descriptor, sample seed).
    pub fn render(&self, d: &Descriptor, sample_seed: u64) -> Result<Vec<f32>> {
        self.render_with_sigma(d, sample_seed, self.config.noise_sigma)
    }

    pub fn render_with_sigma(&self, d: &Descriptor, sample_seed: u64, sigma: f64) -> Result<Vec<f32>> {
        d.validate()?;
        let mut x = Vec::with_capacity(WORLD_DIM);
        let mut active = Vec::with_capacity(WORLD_DIM);
        let mut push = |block: Vec<f32>, on: bool| {
            active.extend(std::iter::repeat_n(on, block.len()));
            x.extend(block);
        };
        push(block_sum(&self.objects, &d.objects, OBJECT_DIM), true);
        let dom: Vec<usize> = d.domain.into_iter().collect();
        push(block_sum(&self.domains, &dom, DOMAIN_DIM), d.domain.is_some());
        push(
            block_sum(&self.attributes, &d.attributes, ATTRIBUTE_DIM),
            !d.attributes.is_empty(),
        );
        let sc: Vec<usize> = d.scene.into_iter().collect();
        push(block_sum(&self.scenes, &sc, SCENE_DIM), d.scene.is_some());
        push(vec![0.0; NOISE_DIM], true);

        if sigma > 0.0 {
            let mut rng = self.render_rng(sample_seed);
            let jitter = Normal::new(0.0, sigma / 2.0).expect("finite sigma");
            let noise = Normal::new(0.0, sigma).expect("finite sigma");
            let code_dims = WORLD_DIM - NOISE_DIM;
            for (i, (v, on)) in x.iter_mut().zip(&active).enumerate() {
                // Draw even for zeroed blocks so streams line up across descriptors.
                let e = if i < code_dims { jitter.sample(&mut rng) } else { noise.sample(&mut rng) };
                if *on {
                    *v = (*v as f64 + e) as f32;
                }
            }
        }
        Ok(x)
    }

    /// Caption text and the facts it states.
    pub fn caption<R: Rng>(&self, d: &Descriptor, rng: &mut R) -> (String, CaptionFacts) {
        let cfg = &self.config;
        let domain = d.domain.filter(|_| rng.random_bool(cfg.p_mention_domain));
        let attribute = d
            .attributes
            .first()
            .copied()
            .filter(|_| rng.random_bool(cfg.p_mention_attribute));
        let scene = d.scene.filter(|_| rng.random_bool(cfg.p_mention_scene));
        let mut text = format!("a {} of a", domain.map_or("photo", |x| DOMAINS[x]));
        if let Some(a) = attribute {
            text.push(' ');
            text.push_str(ATTRIBUTES[a]);
        }
        let names: Vec<&str> = d.objects.iter().map(|&o| OBJECTS[o]).collect();
        text.push(' ');
        text.push_str(&object_list(&names));
        if let Some(s) = scene {
            text.push_str(" in a ");
            text.push_str(SCENES[s]);
        }
        let facts = CaptionFacts {
            domain,
            objects: d.objects.clone(),
            attribute,
            scene,
        };
        (text, facts)
    }

    fn caption_rng(&self, sample_seed: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        rng.set_stream(self.seed ^ 0xCA97_1000);
        rng
    }

    fn dataset_rng(&self, tag: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(tag);
        rng
    }

    fn sample(&self, id: u64, descriptor: Descriptor, captioned: bool) -> Result<Sample> {
        let image = self.render(&descriptor, id)?;
        let caption = captioned.then(|| self.caption(&descriptor, &mut self.caption_rng(id)));
        Ok(Sample {
            id,
            descriptor,
            caption: caption.as_ref().map(|c| c.0.clone()),
            facts: caption.map(|c| c.1),
            image,
        })
    }

    fn pretrain_descriptor<R: Rng>(&self, rng: &mut R) -> Descriptor {
        let n_obj = if rng.random_bool(self.config.p_multi_object) {
            rng.random_range(2..=3)
        } else {
            1
        };
        Descriptor {
            objects: distinct(rng, OBJECTS.len(), n_obj..=n_obj),
            domain: Some(rng.random_range(0..DOMAINS.len())),
            attributes: distinct(rng, ATTRIBUTES.len(), 1..=2),
            scene: Some(rng.random_range(0..SCENES.len())),
        }
    }

    fn distribution_set(&self, name: &str, base: u64, n: usize, captioned: bool) -> Result<Dataset> {
        let mut rng = self.dataset_rng(base);
        let samples = (0..n as u64)
            .map(|i| {
                let d = self.pretrain_descriptor(&mut rng);
                self.sample(base + i, d, captioned)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            name: name.to_string(),
            samples,
        })
    }

    /// Captioned pairs for pretraining.
    pub fn pretrain_set(&self) -> Result<Dataset> {
        self.distribution_set("pretrain", seeds::PRETRAIN, self.config.n_pretrain, true)
    }

    /// Captioned held-out pairs for validation.
    pub fn val_set(&self) -> Result<Dataset> {
        self.distribution_set("val", seeds::VAL, self.config.n_val, true)
    }

    /// Images from the pretraining distribution without captions.
    pub fn unlabeled_set(&self) -> Result<Dataset> {
        self.distribution_set("unlabeled", seeds::UNLABELED, self.config.n_unlabeled, false)
    }

    /// Held-out images for reconstruction checks.
    pub fn holdout_set(&self) -> Result<Dataset> {
        self.distribution_set("holdout", seeds::HOLDOUT, self.config.n_holdout, false)
    }

    pub fn task(&self, kind: TaskKind) -> Result<CirTask> {
        let t = match kind {
            TaskKind::Domain => self.domain_task()?,
            TaskKind::Objects => self.object_task()?,
            TaskKind::Attributes => self.attribute_task()?,
        };
        t.validate()?;
        Ok(t)
    }

    fn random_background<R: Rng>(
        &self,
        rng: &mut R,
        objects: Vec<usize>,
        n_attr: std::ops::RangeInclusive<usize>,
    ) -> Descriptor {
        Descriptor {
            objects,
            domain: Some(rng.random_range(0..DOMAINS.len())),
            attributes: distinct(rng, ATTRIBUTES.len(), n_attr),
            scene: Some(rng.random_range(0..SCENES.len())),
        }
    }

    fn domain_task(&self) -> Result<CirTask> {
        let base = seeds::TASK_DOMAIN;
        let mut rng = self.dataset_rng(base);
        let mut pool = Vec::new();
        let per = self.config.samples_per_domain_object;
        for dom in 0..DOMAINS.len() {
            for obj in 0..OBJECTS.len() {
                for _ in 0..per {
                    let mut d = self.random_background(&mut rng, vec![obj], 1..=2);
                    d.domain = Some(dom);
                    pool.push(self.sample(base + pool.len() as u64, d, false)?);
                }
            }
        }
        let mut queries = Vec::new();
        for q in 0..self.config.task_queries as u64 {
            let obj = rng.random_range(0..OBJECTS.len());
            let mut d = self.random_background(&mut rng, vec![obj], 1..=2);
            d.domain = Some(REAL);
            let target = rng.random_range(1..DOMAINS.len());
            queries.push(CirQuery {
                image: self.sample(base + seeds::QUERY_OFFSET + q, d, false)?,
                fill: Fill {
                    domain: Some(DOMAINS[target].to_string()),
                    ..Fill::default()
                },
                truth: Truth::ObjectDomain { object: obj, domain: target },
            });
        }
        Ok(CirTask {
            kind: TaskKind::Domain,
            queries,
            pool,
        })
    }

    fn object_task(&self) -> Result<CirTask> {
        let base = seeds::TASK_OBJECTS;
        let mut rng = self.dataset_rng(base);
        let pool = (0..self.config.task_pool as u64)
            .map(|i| {
                let objs = distinct(&mut rng, OBJECTS.len(), 1..=3);
                let d = self.random_background(&mut rng, objs, 1..=2);
                self.sample(base + i, d, false)
            })
            .collect::<Result<Vec<_>>>()?;
        let anchors: Vec<&Sample> = pool.iter().filter(|s| s.descriptor.objects.len() >= 2).collect();
        ensure!(!anchors.is_empty(), "object pool has no multi-object image");
        let mut queries = Vec::new();
        for q in 0..self.config.task_queries as u64 {
            let anchor = anchors.choose(&mut rng).expect("non-empty");
            let objs = &anchor.descriptor.objects;
            let pick = rng.random_range(0..objs.len());
            let object = objs[pick];
            let extras: Vec<usize> = objs.iter().copied().filter(|&o| o != object).collect();
            let d = Descriptor {
                objects: vec![object],
                domain: None,
                attributes: Vec::new(),
                scene: None,
            };
            let mut all = vec![object];
            all.extend(&extras);
            queries.push(CirQuery {
                image: self.sample(base + seeds::QUERY_OFFSET + q, d, false)?,
                fill: Fill {
                    objects: extras.iter().map(|&o| OBJECTS[o].to_string()).collect(),
                    ..Fill::default()
                },
                truth: Truth::ContainsObjects(all),
            });
        }
        Ok(CirTask {
            kind: TaskKind::Objects,
            queries,
            pool,
        })
    }

    fn attribute_task(&self) -> Result<CirTask> {
        let base = seeds::TASK_ATTRIBUTES;
        let mut rng = self.dataset_rng(base);
        let pool = (0..self.config.task_pool as u64)
            .map(|i| {
                let obj = rng.random_range(0..OBJECTS.len());
                let d = self.random_background(&mut rng, vec![obj], 1..=2);
                self.sample(base + i, d, false)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut queries = Vec::new();
        for q in 0..self.config.task_queries as u64 {
            let anchor = pool.choose(&mut rng).expect("non-empty pool");
            let object = anchor.descriptor.objects[0];
            let target = *anchor.descriptor.attributes.choose(&mut rng).expect("has attributes");
            let others: Vec<usize> = (0..ATTRIBUTES.len()).filter(|&a| a != target).collect();
            let own = *others.choose(&mut rng).expect("eight attributes");
            let mut d = self.random_background(&mut rng, vec![object], 0..=0);
            d.attributes = vec![own];
            queries.push(CirQuery {
                image: self.sample(base + seeds::QUERY_OFFSET + q, d, false)?,
                fill: Fill {
                    text: format!("is {}", ATTRIBUTES[target]),
                    ..Fill::default()
                },
                truth: Truth::ObjectAttribute { object, attribute: target },
            });
        }
        Ok(CirTask {
            kind: TaskKind::Attributes,
            queries,
            pool,
        })
    }
}

fn distinct<R: Rng>(rng: &mut R, n: usize, k: std::ops::RangeInclusive<usize>) -> Vec<usize> {
    let k = rng.random_range(k);
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    all.truncate(k);
    all
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Sample seed; unique across every set of a world.
    pub id: u64,
    pub descriptor: Descriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facts: Option<CaptionFacts>,
    #[serde(skip)]
    pub image: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn images(&self) -> Vec<&[f32]> {
        self.samples.iter().map(|s| s.image.as_slice()).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Domain,
    Objects,
    Attributes,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Domain, TaskKind::Objects, TaskKind::Attributes];

    pub fn template(self) -> PromptTemplate {
        match self {
            TaskKind::Domain => PromptTemplate::domain(),
            TaskKind::Objects => PromptTemplate::objects(),
            TaskKind::Attributes => PromptTemplate::sentence(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Domain => "domain",
            TaskKind::Objects => "objects",
            TaskKind::Attributes => "attributes",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "a" | "domain" => Ok(TaskKind::Domain),
            "b" | "objects" => Ok(TaskKind::Objects),
            "c" | "attributes" => Ok(TaskKind::Attributes),
            other => Err(crate::Error::contract(format!("unknown task {other:?}"))),
        }
    }
}

/// Ground-truth predicate over candidate descriptors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    ObjectDomain { object: usize, domain: usize },
    ContainsObjects(Vec<usize>),
    ObjectAttribute { object: usize, attribute: usize },
}

impl Truth {
    pub fn accepts(&self, d: &Descriptor) -> bool {
        match self {
            Truth::ObjectDomain { object, domain } => {
                d.objects.first() == Some(object) && d.domain == Some(*domain)
            }
            Truth::ContainsObjects(all) => all.iter().all(|&o| d.has_object(o)),
            Truth::ObjectAttribute { object, attribute } => {
                d.objects.first() == Some(object) && d.attributes.contains(attribute)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CirQuery {
    pub image: Sample,
    pub fill: Fill,
    pub truth: Truth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CirTask {
    pub kind: TaskKind,
    pub queries: Vec<CirQuery>,
    pub pool: Vec<Sample>,
}

impl CirTask {
    /// Every query has a target and no query image satisfies its own
    /// predicate.
    pub fn validate(&self) -> Result<()> {
        for (i, q) in self.queries.iter().enumerate() {
            ensure!(
                self.pool.iter().any(|c| q.truth.accepts(&c.descriptor)),
                "{} query {i} has no valid target",
                self.kind.name()
            );
            ensure!(
                !q.truth.accepts(&q.image.descriptor),
                "{} query {i} satisfies its own predicate",
                self.kind.name()
            );
        }
        Ok(())
    }

    pub fn pool_images(&self) -> Vec<&[f32]> {
        self.pool.iter().map(|s| s.image.as_slice()).collect()
    }

    pub fn query_images(&self) -> Vec<&[f32]> {
        self.queries.iter().map(|q| q.image.image.as_slice()).collect()
    }
}
