//! End-to-end stages, run configuration, artifacts and reports.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{AdamWConfig, Tensor};
use crate::checkpoint::{hex, Checkpoint};
use crate::composer::{compose_queries, template_text_embeddings, Fill, PromptTemplate, QuerySpec};
use crate::contrastive::{train_clip, PairSet, TrainConfig, TrainLog};
use crate::encoders::{Architecture, EncoderBundle, TokenSequence, MAPPER};
use crate::error::{ensure, Error, Result};
use crate::mapper::{init_mapper, reconstruction_eval, train_mapper, MapperKind};
use crate::retrieval::{
    average_queries, image_only_queries, recalls, text_only_queries, unit_query, weight_sweep,
    EmbeddingIndex, Recalls, WeightSweep,
};
use crate::synthworld::{CirTask, Dataset, Descriptor, Sample, TaskKind, World, WorldConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamWConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub arch: Architecture,
    pub tau_init: f64,
    pub tau_max: f64,
    pub pretrain: StageConfig,
    pub mapper: StageConfig,
    pub tasks: Vec<TaskKind>,
    /// Weight of the text side in the averaging baseline.
    pub average_weight: f64,
    pub sweep_grid: Vec<f64>,
    /// Replaces every task's built-in template when set.
    pub template: Option<PromptTemplate>,
    /// Where artifacts go; not part of any stage hash.
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            world: WorldConfig::default(),
            arch: Architecture::default(),
            tau_init: 1.0 / 0.07,
            tau_max: 100.0,
            pretrain: StageConfig {
                epochs: 30,
                batch_size: 128,
                optim: AdamWConfig::default(),
            },
            mapper: StageConfig {
                epochs: 15,
                batch_size: 128,
                optim: AdamWConfig::default(),
            },
            tasks: TaskKind::ALL.to_vec(),
            average_weight: 0.5,
            sweep_grid: crate::retrieval::uniform_grid(10),
            template: None,
            out_dir: PathBuf::from("p2w-out"),
        }
    }
}

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("config serializes")
}

/// Chained hashes: each stage covers its own settings and everything upstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageHashes {
    pub world: [u8; 32],
    pub pretrain: [u8; 32],
    pub mapper: [u8; 32],
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.tau_init > 0.0 && self.tau_init <= self.tau_max, "tau_init must lie in (0, tau_max]");
        ensure!((0.0..=1.0).contains(&self.average_weight), "average_weight outside [0, 1]");
        ensure!(!self.tasks.is_empty(), "no tasks selected");
        ensure!(
            self.arch.norm_gain.is_finite() && self.arch.norm_gain > 0.0,
            "arch.norm_gain must be positive"
        );
        ensure!(
            self.arch.embed_dim % self.arch.heads == 0,
            "arch.embed_dim must divide into arch.heads"
        );
        ensure!(self.pretrain.batch_size >= 2 && self.mapper.batch_size >= 2, "batch size below 2");
        ensure!(
            self.arch.world_dim == crate::synthworld::WORLD_DIM,
            "arch.world_dim must be {}",
            crate::synthworld::WORLD_DIM
        );
        Ok(())
    }

    pub fn hashes(&self) -> StageHashes {
        let world = digest(&[b"world", &json_bytes(&(self.seed, &self.world))]);
        let pretrain = digest(&[
            b"pretrain",
            &world,
            &json_bytes(&(&self.arch, self.tau_init, self.tau_max, &self.pretrain)),
        ]);
        let mapper = digest(&[b"mapper", &pretrain, &json_bytes(&self.mapper)]);
        StageHashes {
            world,
            pretrain,
            mapper,
        }
    }

    pub fn world(&self) -> World {
        World::generate(self.world.clone(), self.seed)
    }

    fn train_config(&self, stage: &StageConfig, salt: u64) -> TrainConfig {
        TrainConfig {
            epochs: stage.epochs,
            batch_size: stage.batch_size,
            optim: stage.optim,
            seed: self.seed.wrapping_mul(1_000_003).wrapping_add(salt),
            tau_max: self.tau_max,
        }
    }

    fn template_for(&self, kind: TaskKind) -> PromptTemplate {
        self.template.clone().unwrap_or_else(|| kind.template())
    }
}

// ---- in-memory stages ----

/// Text-to-image R@1 on captioned pairs, where a hit is any image agreeing
/// with every factor its caption states.
pub fn caption_r1(bundle: &EncoderBundle, set: &Dataset) -> Result<f64> {
    let images = set.images();
    let meta: Vec<&Descriptor> = set.samples.iter().map(|s| &s.descriptor).collect();
    let ids = set.samples.iter().map(|s| s.id).collect();
    let index = EmbeddingIndex::build(bundle, &images, ids, meta)?;
    let captions = captions_of(bundle, set)?;
    let queries = text_only_queries(&bundle.text_embeddings(&captions)?)?;
    let facts: Vec<_> = set
        .samples
        .iter()
        .map(|s| s.facts.clone().ok_or_else(|| Error::contract("validation sample has no caption")))
        .collect::<Result<_>>()?;
    let (r, _) = recalls(&index, &queries, |q, d: &&Descriptor| facts[q].satisfied_by(d))?;
    Ok(r.r1)
}

fn captions_of(bundle: &EncoderBundle, set: &Dataset) -> Result<Vec<TokenSequence>> {
    set.samples
        .iter()
        .map(|s| {
            let c = s
                .caption
                .as_deref()
                .ok_or_else(|| Error::contract(format!("sample {} has no caption", s.id)))?;
            bundle.parse(c)
        })
        .collect()
}

/// Trains the two encoders from scratch; they come back frozen.
pub fn pretrain(cfg: &RunConfig, train: &Dataset, val: &Dataset) -> Result<(EncoderBundle, TrainLog)> {
    cfg.validate()?;
    let world_vocab = crate::synthworld::vocabulary();
    let mut bundle = EncoderBundle::init(cfg.arch, world_vocab, cfg.tau_init, cfg.seed);
    let pairs = PairSet {
        images: train.images(),
        captions: captions_of(&bundle, train)?,
    };
    let tc = cfg.train_config(&cfg.pretrain, 1);
    let log = train_clip(&mut bundle, &pairs, &tc, |b| caption_r1(b, val))?;
    Ok((bundle, log))
}

/// Swaps in a freshly initialised mapper of the given kind.
pub fn reset_mapper(bundle: &mut EncoderBundle, kind: MapperKind, seed: u64) {
    bundle.arch.mapper_kind = kind;
    let fresh = init_mapper(&bundle.arch, seed);
    bundle.params.unfreeze_prefix(MAPPER);
    bundle.params.extend(fresh);
}

/// Trains the mapper on unlabeled images, with holdout reconstruction logged
/// every epoch.
pub fn fit_mapper(
    cfg: &RunConfig,
    bundle: &mut EncoderBundle,
    unlabeled: &Dataset,
    holdout: &Dataset,
) -> Result<TrainLog> {
    ensure!(bundle.encoders_frozen(), "encoders must be frozen before mapper training");
    let tc = cfg.train_config(&cfg.mapper, 2);
    train_mapper(bundle, &unlabeled.images(), &holdout.images(), &tc)
}

pub fn reconstruction(bundle: &EncoderBundle, holdout: &Dataset) -> Result<(f64, f64)> {
    reconstruction_eval(bundle, &holdout.images())
}

/// Method names as they appear in reports.
pub const PIC2WORD: &str = "pic2word";
pub const IMAGE_ONLY: &str = "image_only";
pub const TEXT_ONLY: &str = "text_only";

pub fn average_name(w: f64) -> String {
    format!("average@{w}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub template: String,
    pub queries: usize,
    pub pool: usize,
    pub methods: BTreeMap<String, Recalls>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub config_hash: String,
    pub tasks: BTreeMap<String, TaskReport>,
}

/// Query-side material shared by every method on one task.
pub struct PreparedTask {
    pub task: CirTask,
    pub template: PromptTemplate,
    pub index: EmbeddingIndex<Descriptor>,
    /// Unnormalized image embeddings of the query images.
    pub v: Vec<Vec<f32>>,
    /// Unnormalized text embeddings of the template without the pseudo slot.
    pub t: Vec<Vec<f32>>,
    pub fills: Vec<Fill>,
}

fn fill_for(template: &PromptTemplate, q: &crate::synthworld::CirQuery) -> Fill {
    let mut fill = q.fill.clone();
    if template.uses(crate::composer::Slot::Text) && fill.text.is_empty() {
        fill.text = match (&fill.domain, fill.objects.is_empty()) {
            (Some(d), _) => d.clone(),
            (None, false) => crate::composer::object_list(&fill.objects),
            _ => String::new(),
        };
    }
    fill
}

impl PreparedTask {
    pub fn new(bundle: &EncoderBundle, task: CirTask, template: PromptTemplate) -> Result<Self> {
        let ids = task.pool.iter().map(|s| s.id).collect();
        let meta = task.pool.iter().map(|s| s.descriptor.clone()).collect();
        let index = EmbeddingIndex::build(bundle, &task.pool_images(), ids, meta)?;
        let v = bundle.image_embeddings(&task.query_images())?;
        let fills: Vec<Fill> = task.queries.iter().map(|q| fill_for(&template, q)).collect();
        let t = template_text_embeddings(bundle, &template, &fills)?;
        Ok(Self {
            task,
            template,
            index,
            v,
            t,
            fills,
        })
    }

    pub fn is_target(&self) -> impl Fn(usize, &Descriptor) -> bool + '_ {
        move |q, d| self.task.queries[q].truth.accepts(d)
    }

    pub fn pic2word_queries(&self, bundle: &EncoderBundle) -> Result<Vec<Vec<f32>>> {
        let specs: Vec<QuerySpec<'_>> = self
            .task
            .queries
            .iter()
            .zip(&self.fills)
            .map(|(q, f)| QuerySpec {
                image: &q.image.image,
                fill: f.clone(),
            })
            .collect();
        compose_queries(bundle, &self.template, &specs)
    }

    /// Every method's query embeddings, keyed by report name.
    pub fn method_queries(&self, bundle: &EncoderBundle, w: f64) -> Result<BTreeMap<String, Vec<Vec<f32>>>> {
        Ok(BTreeMap::from([
            (PIC2WORD.to_string(), self.pic2word_queries(bundle)?),
            (IMAGE_ONLY.to_string(), image_only_queries(&self.v)?),
            (TEXT_ONLY.to_string(), text_only_queries(&self.t)?),
            (average_name(w), average_queries(&self.t, &self.v, w)?),
        ]))
    }

    pub fn report(&self, bundle: &EncoderBundle, w: f64) -> Result<TaskReport> {
        let mut methods = BTreeMap::new();
        for (name, q) in self.method_queries(bundle, w)? {
            let (r, _) = recalls(&self.index, &q, self.is_target())?;
            methods.insert(name, r);
        }
        Ok(TaskReport {
            template: self.template.to_string(),
            queries: self.task.queries.len(),
            pool: self.task.pool.len(),
            methods,
        })
    }

    pub fn sweep(&self, grid: &[f64]) -> Result<WeightSweep> {
        weight_sweep(&self.index, &self.t, &self.v, grid, self.is_target())
    }
}

pub fn prepare(cfg: &RunConfig, bundle: &EncoderBundle, world: &World, kind: TaskKind) -> Result<PreparedTask> {
    PreparedTask::new(bundle, world.task(kind)?, cfg.template_for(kind))
}

pub fn evaluate(cfg: &RunConfig, bundle: &EncoderBundle, world: &World) -> Result<EvalReport> {
    let mut tasks = BTreeMap::new();
    for &kind in &cfg.tasks {
        let p = prepare(cfg, bundle, world, kind)?;
        tasks.insert(kind.name().to_string(), p.report(bundle, cfg.average_weight)?);
    }
    Ok(EvalReport {
        seed: cfg.seed,
        config_hash: hex(&cfg.hashes().mapper),
        tasks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    pub config_hash: String,
    pub tasks: BTreeMap<String, WeightSweep>,
}

pub fn sweep(cfg: &RunConfig, bundle: &EncoderBundle, world: &World) -> Result<SweepReport> {
    let mut tasks = BTreeMap::new();
    for &kind in &cfg.tasks {
        let p = prepare(cfg, bundle, world, kind)?;
        tasks.insert(kind.name().to_string(), p.sweep(&cfg.sweep_grid)?);
    }
    Ok(SweepReport {
        seed: cfg.seed,
        config_hash: hex(&cfg.hashes().mapper),
        tasks,
    })
}

// ---- artifacts ----

pub const WORLD_FILE: &str = "world.json";
pub const ENCODERS_FILE: &str = "encoders.p2w";
pub const MAPPER_FILE: &str = "mapper.p2w";
pub const REPORT_FILE: &str = "report.json";
pub const SWEEP_FILE: &str = "sweep.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const DATASETS: [&str; 4] = ["pretrain", "val", "unlabeled", "holdout"];

#[derive(Serialize, Deserialize)]
struct WorldFile {
    config_hash: String,
    world: World,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn missing(path: &Path, stage: &str) -> Error {
    Error::StaleArtifact {
        path: path.to_path_buf(),
        reason: format!("file is missing; run `{stage}` first"),
    }
}

fn read_required(path: &Path, stage: &str) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => missing(path, stage),
        _ => e.into(),
    })
}

fn checkpoint(path: &Path, stage: &str, hash: &[u8; 32]) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(missing(path, stage));
    }
    Checkpoint::load_verified(path, hash)
}

pub fn save_dataset(dir: &Path, set: &Dataset, hash: &[u8; 32]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(dir.join(format!("{}.jsonl", set.name)))?);
    for s in &set.samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let dim = set.samples.first().map_or(0, |s| s.image.len());
    ensure!(dim > 0, "dataset {} is empty", set.name);
    let data = set.samples.iter().flat_map(|s| s.image.iter().copied()).collect();
    Checkpoint {
        config_hash: Some(*hash),
        tensors: vec![("images".to_string(), Tensor::new(vec![set.len(), dim], data))],
    }
    .save(&dir.join(format!("{}.p2w", set.name)))
}

pub fn load_dataset(dir: &Path, name: &str, hash: &[u8; 32]) -> Result<Dataset> {
    let tensor_path = dir.join(format!("{name}.p2w"));
    let ck = checkpoint(&tensor_path, "gen-world", hash)?;
    let images = ck
        .get("images")
        .ok_or_else(|| Error::CorruptCheckpoint(format!("{} has no images record", tensor_path.display())))?;
    let manifest = dir.join(format!("{name}.jsonl"));
    if !manifest.exists() {
        return Err(missing(&manifest, "gen-world"));
    }
    let mut samples = Vec::new();
    for line in BufReader::new(fs::File::open(&manifest)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            samples.push(serde_json::from_str::<Sample>(&line)?);
        }
    }
    let (n, dim) = images.matrix_dims();
    ensure!(n == samples.len(), "{name}: {} manifest rows but {n} images", samples.len());
    for (s, row) in samples.iter_mut().zip(images.data().chunks(dim)) {
        s.image = row.to_vec();
    }
    Ok(Dataset {
        name: name.to_string(),
        samples,
    })
}

fn load_world(cfg: &RunConfig, out: &Path) -> Result<World> {
    let path = out.join(WORLD_FILE);
    let file: WorldFile = serde_json::from_str(&read_required(&path, "gen-world")?)?;
    let want = hex(&cfg.hashes().world);
    if file.config_hash != want {
        return Err(Error::StaleArtifact {
            path,
            reason: format!("built with config {} but the current config is {want}", file.config_hash),
        });
    }
    Ok(file.world)
}

fn load_encoders(cfg: &RunConfig, out: &Path) -> Result<EncoderBundle> {
    let ck = checkpoint(&out.join(ENCODERS_FILE), "pretrain", &cfg.hashes().pretrain)?;
    let mut bundle = EncoderBundle {
        arch: cfg.arch,
        vocab: crate::synthworld::vocabulary(),
        params: ck.into_params(),
    };
    bundle.freeze_encoders();
    Ok(bundle)
}

fn load_full(cfg: &RunConfig, out: &Path) -> Result<EncoderBundle> {
    let mut bundle = load_encoders(cfg, out)?;
    let mapper_path = out.join(MAPPER_FILE);
    let ck = checkpoint(&mapper_path, "train-mapper", &cfg.hashes().mapper)?;
    let expected = init_mapper(&cfg.arch, 0);
    for (name, t) in ck.tensors {
        ensure!(
            expected.get(&name).is_some_and(|e| e.shape() == t.shape()),
            "{}: unexpected tensor {name}",
            mapper_path.display()
        );
        bundle.params.insert(name, t);
    }
    ensure!(
        expected.names().all(|n| bundle.params.contains(n)),
        "{}: mapper tensors missing",
        mapper_path.display()
    );
    bundle.freeze_encoders();
    Ok(bundle)
}

#[derive(Default)]
struct Timings(BTreeMap<String, f64>);

impl Timings {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        let secs = start.elapsed().as_secs_f64();
        info!("{name} took {secs:.1}s");
        self.0.insert(name.to_string(), secs);
        Ok(out)
    }

    fn save(&self, out: &Path, stage: &str) -> Result<()> {
        let path = out.join(TIMINGS_FILE);
        let mut all: BTreeMap<String, BTreeMap<String, f64>> = fs::read_to_string(&path)
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or_default();
        all.insert(stage.to_string(), self.0.clone());
        write_json(&path, &all)
    }
}

/// `gen-world`: factor codes, the four datasets and their manifests.
pub fn cmd_gen_world(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let hash = cfg.hashes().world;
    let world = cfg.world();
    let mut t = Timings::default();
    t.time("datasets", || {
        for set in [world.pretrain_set()?, world.val_set()?, world.unlabeled_set()?, world.holdout_set()?] {
            save_dataset(out, &set, &hash)?;
        }
        Ok(())
    })?;
    let path = out.join(WORLD_FILE);
    write_json(
        &path,
        &WorldFile {
            config_hash: hex(&hash),
            world,
        },
    )?;
    t.save(out, "gen-world")?;
    Ok(path)
}

/// `pretrain`: trains and freezes the encoders.
pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let h = cfg.hashes();
    load_world(cfg, out)?;
    let train = load_dataset(out, "pretrain", &h.world)?;
    let val = load_dataset(out, "val", &h.world)?;
    let mut t = Timings::default();
    let (bundle, log) = t.time("pretrain", || pretrain(cfg, &train, &val))?;
    let enc = bundle.params.iter().filter(|(n, _)| !n.starts_with(MAPPER));
    let ck = Checkpoint {
        config_hash: Some(h.pretrain),
        tensors: enc.map(|(n, t)| (n.to_string(), t.clone())).collect(),
    };
    let path = out.join(ENCODERS_FILE);
    ck.save(&path)?;
    write_json(&out.join("pretrain_log.json"), &log)?;
    t.save(out, "pretrain")?;
    Ok(path)
}

/// `train-mapper`: trains the mapping network against the frozen encoders.
pub fn cmd_train_mapper(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let h = cfg.hashes();
    load_world(cfg, out)?;
    let mut bundle = load_encoders(cfg, out)?;
    reset_mapper(&mut bundle, cfg.arch.mapper_kind, cfg.seed.wrapping_add(1));
    let unlabeled = load_dataset(out, "unlabeled", &h.world)?;
    let holdout = load_dataset(out, "holdout", &h.world)?;
    let mut t = Timings::default();
    let log = t.time("train-mapper", || fit_mapper(cfg, &mut bundle, &unlabeled, &holdout))?;
    let ck = Checkpoint::from_params(&bundle.params.subset(MAPPER), Some(h.mapper));
    let path = out.join(MAPPER_FILE);
    ck.save(&path)?;
    write_json(&out.join("mapper_log.json"), &log)?;
    t.save(out, "train-mapper")?;
    Ok(path)
}

fn save_index(out: &Path, p: &PreparedTask, hash: &[u8; 32]) -> Result<()> {
    let name = format!("index_{}", p.task.kind.name());
    let (n, d) = (p.index.len(), p.index.dim());
    Checkpoint {
        config_hash: Some(*hash),
        tensors: vec![("embeddings".to_string(), Tensor::new(vec![n, d], p.index.matrix().to_vec()))],
    }
    .save(&out.join(format!("{name}.p2w")))?;
    let mut w = BufWriter::new(fs::File::create(out.join(format!("{name}.jsonl")))?);
    for (id, m) in p.index.ids().iter().zip(p.index.meta()) {
        serde_json::to_writer(&mut w, &serde_json::json!({ "id": id, "descriptor": m }))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// `eval`: every method on every selected task, written to `report.json`.
pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let h = cfg.hashes();
    let world = load_world(cfg, out)?;
    let bundle = load_full(cfg, out)?;
    let mut t = Timings::default();
    let mut tasks = BTreeMap::new();
    for &kind in &cfg.tasks {
        let report = t.time(&format!("eval-{}", kind.name()), || {
            let p = prepare(cfg, &bundle, &world, kind)?;
            save_index(out, &p, &h.mapper)?;
            p.report(&bundle, cfg.average_weight)
        })?;
        tasks.insert(kind.name().to_string(), report);
    }
    let report = EvalReport {
        seed: cfg.seed,
        config_hash: hex(&h.mapper),
        tasks,
    };
    let path = out.join(REPORT_FILE);
    write_json(&path, &report)?;
    t.save(out, "eval")?;
    Ok(path)
}

/// `sweep`: recall of the averaging baseline over the weight grid.
pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let world = load_world(cfg, out)?;
    let bundle = load_full(cfg, out)?;
    let mut t = Timings::default();
    let report = t.time("sweep", || sweep(cfg, &bundle, &world))?;
    let path = out.join(SWEEP_FILE);
    write_json(&path, &report)?;
    t.save(out, "sweep")?;
    Ok(path)
}

/// Unit-normalizes and checks that two query sets rank identically.
pub fn same_rankings<M: Sync>(index: &EmbeddingIndex<M>, a: &[Vec<f32>], b: &[Vec<f32>], k: usize) -> Result<bool> {
    let ra = index.search_all(a, k)?;
    let rb = index.search_all(b, k)?;
    Ok(ra == rb)
}

/// Convenience for callers holding raw rows.
pub fn normalize_all(rows: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    rows.iter().map(|r| unit_query(r)).collect()
}
