use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{hash_json, EncoderChoice, MllmProvider, Pipeline, PipelineError, Result, Stage, StageOutcome, Status};
use crate::corpus::{self, DatasetSplit, LoadedSplit, ITEM_IDS_FILE, SPLIT_MANIFEST_FILE, TEST_FILE, TRAIN_FILE, USER_IDS_FILE, VALID_FILE};
use crate::descriptor::{
    describe_items, describe_users, render_prompt1, DescribeCache, DescriptorError, ItemCatalog, MllmClient,
    StubTransport, UserCatalog, FUSION_SEPARATOR,
};
use crate::digest::sha256_hex;
use crate::embedder::{encode_texts, store_read, store_write, EmbeddingMatrix, PrecomputedEncoder, Precision, StubEncoder, TextEncoder};
use crate::eval::{self, Target};
use crate::graph::{export_graph, import_graph, GraphConfig, GraphVariant, RefinedGraph};
use crate::model::{self, Checkpoint, TrainOutcome};

const CACHE_FILE: &str = "cache.jsonl";
const ITEMS_FILE: &str = "items.jsonl";
const USERS_FILE: &str = "users.jsonl";
const FAILURES_FILE: &str = "failures.tsv";
const ITEM_EMB_FILE: &str = "items.emb";
const USER_EMB_FILE: &str = "users.emb";
const SEMANTIC_FILE: &str = "semantic.graph";
const COOCCUR_FILE: &str = "cooccur.graph";
const MERGED_FILE: &str = "merged.graph";
const NORMALIZED_FILE: &str = "normalized.graph";
const FEATURES_FILE: &str = "features.emb";
const CHECKPOINT_FILE: &str = "checkpoint.ckp";
const HISTORY_FILE: &str = "history.csv";
const GRID_FILE: &str = "grid.tsv";
const METRICS_FILE: &str = "metrics.json";
const TOPN_FILE: &str = "topn.tsv";
const KEYED_GRAPH_FILE: &str = "refined_graph.tsv";
const ABLATION_FILE: &str = "ablation.tsv";
const ABLATION_JSON: &str = "ablation.json";

/// Described item as persisted by the describe stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ItemRecord {
    index: usize,
    item_key: String,
    text_meta: String,
    image_ref: Option<String>,
    semantic_desc: Option<String>,
    /// Text handed to the encoder.
    multimodal_desc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct UserRecord {
    index: usize,
    user_key: String,
    behavior_list: Vec<String>,
    preference_text: Option<String>,
}

impl UserRecord {
    /// Preference text, or the joined behavior list when generation failed.
    fn encoder_text(&self) -> String {
        self.preference_text
            .clone()
            .unwrap_or_else(|| self.behavior_list.join(FUSION_SEPARATOR))
    }
}

/// Graph construction variants compared by the ablation stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoGd,
    NoTe,
    NoGcn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoGd, Variant::NoTe, Variant::NoGcn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGd => "no_gd",
            Variant::NoTe => "no_te",
            Variant::NoGcn => "no_gcn",
        }
    }

    pub fn graph_variant(self) -> GraphVariant {
        let full = GraphVariant::FULL;
        match self {
            Variant::Full => full,
            Variant::NoGd => GraphVariant { denoise: false, ..full },
            Variant::NoTe => GraphVariant { enhance: false, ..full },
            Variant::NoGcn => GraphVariant { convolve: false, ..full },
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?} (expected full, no_gd, no_te or no_gcn)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub best_epoch: usize,
    pub valid_recall20: f64,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(sha256_hex(bytes))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    write_text(path, &out)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(k, line)| {
            let line = line.map_err(|e| PipelineError::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| {
                PipelineError::Descriptor(DescriptorError::BadRecord {
                    path: path.to_path_buf(),
                    line: k + 1,
                    reason: e.to_string(),
                })
            })
        })
        .collect()
}

fn names(files: &[&str]) -> Vec<String> {
    files.iter().map(|f| f.to_string()).collect()
}

fn format_metrics(m: &BTreeMap<usize, f64>) -> serde_json::Value {
    m.iter().map(|(k, v)| (k.to_string(), json!(v))).collect::<serde_json::Map<_, _>>().into()
}

impl Pipeline {
    fn config_hash(&self, stage: Stage) -> Result<String> {
        let c = &self.cfg;
        let value = match stage {
            Stage::Prepare => json!({
                "interactions": file_digest(&c.interactions)?,
                "kcore": c.kcore,
                "ratios": [c.train_ratio, c.valid_ratio, c.test_ratio],
                "seed": c.seed,
            }),
            Stage::Describe => {
                let provider = match c.mllm_provider {
                    MllmProvider::Stub => json!({"stub": c.seed}),
                    MllmProvider::Http => json!({
                        "model": c.mllm_model,
                        "temperature": c.mllm_temperature,
                        "image_mode": c.mllm_image_mode,
                    }),
                };
                json!({
                    "dataset": c.dataset,
                    "item_metadata": file_digest(&c.item_metadata)?,
                    "provider": provider,
                    "behavior_cap": c.behavior_cap,
                })
            }
            Stage::Encode => match c.encoder {
                EncoderChoice::Stub => json!({"stub": {"dim": c.encoder_dim, "seed": c.seed}}),
                EncoderChoice::Precomputed => json!({"precomputed": {
                    "store": file_digest(c.encoder_store.as_deref().unwrap_or(Path::new("")))?,
                    "keys": file_digest(c.encoder_keys.as_deref().unwrap_or(Path::new("")))?,
                }}),
            },
            Stage::BuildGraph => json!(self.cfg.graph_config()),
            Stage::Train if self.opts.grid => json!({
                "train": c.train_config(),
                "graph": c.graph_config(),
                "alpha_grid": c.alpha_grid,
                "k_cooccur_grid": c.k_cooccur_grid,
            }),
            Stage::Train => json!(c.train_config()),
            Stage::Evaluate => json!({"ks": c.eval_ks, "slope": c.leaky_slope}),
            Stage::ExportGraph => json!({"format": 1}),
            Stage::Ablate => json!({"graph": c.graph_config(), "train": c.train_config(), "ks": c.eval_ks}),
        };
        Ok(hash_json(&value))
    }

    fn load_split(&self) -> Result<LoadedSplit> {
        Ok(corpus::read_split(&self.stage_dir(Stage::Prepare))?)
    }

    fn load_embeddings(&self) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
        let dir = self.stage_dir(Stage::Encode);
        Ok((store_read(&dir.join(USER_EMB_FILE))?, store_read(&dir.join(ITEM_EMB_FILE))?))
    }

    pub fn prepare(&mut self) -> Result<StageOutcome> {
        let stage = Stage::Prepare;
        let hash = self.config_hash(stage)?;
        let Some(upstream) = self.begin(stage, stage.deps(), &hash)? else {
            return Ok(StageOutcome::up_to_date(stage, self.record_of(stage)?));
        };
        let c = &self.cfg;
        let raw = corpus::load_interactions(&c.interactions)?;
        let filtered = corpus::kcore_filter(&raw, c.kcore)?;
        let indexed = corpus::index(&filtered)?;
        let split = corpus::split(&indexed.matrix, c.split_ratios(), c.seed)?;
        let dir = self.stage_dir_created(stage)?;
        let m = corpus::write_split(&dir, &indexed, &split)?;
        log::info!("prepared {} users, {} items", m.n_users, m.n_items);
        let summary = json!({
            "raw_interactions": raw.len(),
            "raw_users": raw.n_users(),
            "raw_items": raw.n_items(),
            "interactions": filtered.len(),
            "users": m.n_users,
            "items": m.n_items,
            "train": m.n_train,
            "valid": m.n_valid,
            "test": m.n_test,
            "seed": m.seed,
        });
        let files = names(&[USER_IDS_FILE, ITEM_IDS_FILE, TRAIN_FILE, VALID_FILE, TEST_FILE, SPLIT_MANIFEST_FILE]);
        self.finish(stage, hash, upstream, files, true, summary.clone())?;
        Ok(StageOutcome {
            stage,
            status: Status::Completed,
            summary,
            report: None,
        })
    }

    fn client(&self) -> Result<MllmClient> {
        let cfg = self.cfg.mllm_config();
        Ok(match self.cfg.mllm_provider {
            MllmProvider::Stub => MllmClient::new(cfg, Box::new(StubTransport { seed: self.cfg.seed }))?,
            MllmProvider::Http => MllmClient::http(cfg.with_env_overrides())?,
        })
    }

    pub fn describe(&mut self) -> Result<StageOutcome> {
        let stage = Stage::Describe;
        let hash = self.config_hash(stage)?;
        let Some(upstream) = self.begin(stage, stage.deps(), &hash)? else {
            return Ok(StageOutcome::up_to_date(stage, self.record_of(stage)?));
        };
        let loaded = self.load_split()?;
        let mut catalog = ItemCatalog::from_metadata(&self.cfg.item_metadata, &loaded.items)?;
        let dir = self.stage_dir_created(stage)?;
        let cache = DescribeCache::open(&dir.join(CACHE_FILE))?;
        let client = self.client()?;
        let prompt = render_prompt1(&self.cfg.dataset)?;
        let concurrency = self.cfg.mllm_concurrency;

        let item_report = describe_items(&client, &cache, &prompt, &mut catalog, concurrency);
        // Items without a generated description fall back to their metadata text.
        let mut filled = catalog.clone();
        for e in filled.entries.iter_mut().filter(|e| e.semantic_desc.is_none()) {
            e.semantic_desc = Some(String::new());
            if e.text_meta.trim().is_empty() {
                e.text_meta = e.item_key.clone();
            }
        }
        let mut users = UserCatalog::build(&loaded.split.train, &filled, self.cfg.behavior_cap)?;
        let user_report = describe_users(&client, &cache, &mut users, concurrency);

        let items: Vec<ItemRecord> = catalog
            .entries
            .iter()
            .zip(&filled.entries)
            .enumerate()
            .map(|(index, (e, f))| ItemRecord {
                index,
                item_key: e.item_key.clone(),
                text_meta: e.text_meta.clone(),
                image_ref: e.image_ref.clone(),
                semantic_desc: e.semantic_desc.clone(),
                multimodal_desc: f.multimodal_desc().expect("filled above"),
            })
            .collect();
        let user_rows: Vec<UserRecord> = users
            .behavior_lists
            .into_iter()
            .zip(users.preferences)
            .enumerate()
            .map(|(index, (behavior_list, preference_text))| UserRecord {
                index,
                user_key: loaded.users.key(index).to_string(),
                behavior_list,
                preference_text,
            })
            .collect();
        write_jsonl(&dir.join(ITEMS_FILE), &items)?;
        write_jsonl(&dir.join(USERS_FILE), &user_rows)?;

        let mut failures = String::from("kind\tindex\tkey\terror\n");
        for (i, e) in &item_report.failures {
            writeln!(failures, "item\t{i}\t{}\t{e}", loaded.items.key(*i)).unwrap();
        }
        for (u, e) in &user_report.failures {
            writeln!(failures, "user\t{u}\t{}\t{e}", loaded.users.key(*u)).unwrap();
        }
        write_text(&dir.join(FAILURES_FILE), &failures)?;
        let n_failures = item_report.failures.len() + user_report.failures.len();
        for (i, e) in &item_report.failures {
            log::warn!("item {}: {e}", loaded.items.key(*i));
        }
        for (u, e) in &user_report.failures {
            log::warn!("user {}: {e}", loaded.users.key(*u));
        }
        let summary = json!({
            "items_generated": item_report.generated,
            "items_cached": item_report.cached,
            "item_failures": item_report.failures.len(),
            "users_generated": user_report.generated,
            "users_cached": user_report.cached,
            "user_failures": user_report.failures.len(),
            "transport_calls": client.calls(),
        });
        let files = names(&[ITEMS_FILE, USERS_FILE, FAILURES_FILE]);
        self.finish(stage, hash, upstream, files, n_failures == 0, summary.clone())?;
        let status = if n_failures == 0 {
            Status::Completed
        } else {
            Status::Partial { failures: n_failures }
        };
        Ok(StageOutcome {
            stage,
            status,
            summary,
            report: None,
        })
    }

    fn encoder(&self) -> Result<Box<dyn TextEncoder>> {
        let c = &self.cfg;
        Ok(match c.encoder {
            EncoderChoice::Stub => Box::new(StubEncoder::new(c.encoder_dim, c.seed)),
            EncoderChoice::Precomputed => Box::new(PrecomputedEncoder::open(
                c.encoder_store.as_deref().expect("validated"),
                c.encoder_keys.as_deref().expect("validated"),
            )?),
        })
    }

    pub fn encode(&mut self) -> Result<StageOutcome> {
        let stage = Stage::Encode;
        let hash = self.config_hash(stage)?;
        let Some(upstream) = self.begin(stage, stage.deps(), &hash)? else {
            return Ok(StageOutcome::up_to_date(stage, self.record_of(stage)?));
        };
        let src = self.stage_dir(Stage::Describe);
        let items: Vec<ItemRecord> = read_jsonl(&src.join(ITEMS_FILE))?;
        let users: Vec<UserRecord> = read_jsonl(&src.join(USERS_FILE))?;
        let encoder = self.encoder()?;
        let item_texts: Vec<String> = items.iter().map(|r| r.multimodal_desc.clone()).collect();
        let user_texts: Vec<String> = users.iter().map(UserRecord::encoder_text).collect();
        let item_emb = encode_texts(encoder.as_ref(), &item_texts)?;
        let user_emb = encode_texts(encoder.as_ref(), &user_texts)?;
        let dir = self.stage_dir_created(stage)?;
        store_write(&item_emb, &dir.join(ITEM_EMB_FILE), Precision::F64)?;
        store_write(&user_emb, &dir.join(USER_EMB_FILE), Precision::F64)?;
        let summary = json!({"items": item_emb.rows(), "users": user_emb.rows(), "dim": item_emb.dim()});
        self.finish(stage, hash, upstream, names(&[ITEM_EMB_FILE, USER_EMB_FILE]), true, summary.clone())?;
        Ok(StageOutcome {
            stage,
            status: Status::Completed,
            summary,
            report: None,
        })
    }

    fn write_graph_artifacts(&self, g: &RefinedGraph) -> Result<Vec<String>> {
        let dir = self.stage_dir_created(Stage::BuildGraph)?;
        export_graph(&g.semantic, &dir.join(SEMANTIC_FILE))?;
        export_graph(&g.cooccur, &dir.join(COOCCUR_FILE))?;
        export_graph(&g.merged, &dir.join(MERGED_FILE))?;
        export_graph(&g.normalized, &dir.join(NORMALIZED_FILE))?;
        store_write(&g.features, &dir.join(FEATURES_FILE), Precision::F64)?;
        Ok(names(&[SEMANTIC_FILE, COOCCUR_FILE, MERGED_FILE, NORMALIZED_FILE, FEATURES_FILE]))
    }

    fn graph_summary(g: &RefinedGraph, cfg: &GraphConfig) -> serde_json::Value {
        json!({
            "alpha": cfg.alpha,
            "k_semantic": cfg.k_semantic,
            "k_cooccur": cfg.k_cooccur,
            "layers": cfg.layers,
            "semantic_edges": g.semantic.n_edges(),
            "cooccur_edges": g.cooccur.n_edges(),
            "merged_edges": g.merged.n_edges(),
        })
    }

    pub fn build_graph(&mut self) -> Result<StageOutcome> {
        let stage = Stage::BuildGraph;
        let hash = self.config_hash(stage)?;
        let Some(upstream) = self.begin(stage, stage.deps(), &hash)? else {
            return Ok(StageOutcome::up_to_date(stage, self.record_of(stage)?));
        };
        let loaded = self.load_split()?;
        let (_, items) = self.load_embeddings()?;
        let cfg = self.cfg.graph_config();
        let g = RefinedGraph::build(&items, &loaded.split.train, &cfg, GraphVariant::FULL)?;
        let files = self.write_graph_artifacts(&g)?;
        let summary = Self::graph_summary(&g, &cfg);
        self.finish(stage, hash, upstream, files, true, summary.clone())?;
        Ok(StageOutcome {
            stage,
            status: Status::Completed,
            summary,
            report: None,
        })
    }

    fn write_train_artifacts(&self, out: &TrainOutcome) -> Result<Vec<String>> {
        let dir = self.stage_dir_created(Stage::Train)?;
        Checkpoint {
            params: out.params.clone(),
            adam: out.adam.clone(),
            epoch: out.best_epoch as u64,
        }
        .save(&dir.join(CHECKPOINT_FILE))?;
        write_text(&dir.join(HISTORY_FILE), &out.history.to_csv())?;
        Ok(names(&[CHECKPOINT_FILE, HISTORY_FILE]))
    }

    fn train_summary(out: &TrainOutcome) -> serde_json::Value {
        json!({
            "best_epoch": out.best_epoch,
            "epochs": out.history.epochs.len(),
            "best_valid_recall20": out.history.best().map(|r| r.recall20),
        })
    }

    pub fn train(&mut self) -> Result<StageOutcome> {
        if self.opts.grid {
            return self.train_grid();
        }
        let stage = Stage::Train;
        let hash = self.config_hash(stage)?;
        let Some(upstream) = self.begin(stage, stage.deps(), &hash)? else {
            return Ok(StageOutcome::up_to_date(stage, self.record_of(stage)?));
        };
        let loaded = self.load_split()?;
        let (users, _) = self.load_embeddings()?;
        let features = store_read(&self.stage_dir(Stage::BuildGraph).join(FEATURES_FILE))?;
        let out = model::train(&loaded.split, &users, &features, &self.cfg.train_config())?;
        let files = self.write_train_artifacts(&out)?;
        let summary = Self::train_summary(&out);
        self.finish(stage, hash, upstream, files, true, summary.clone())?;
        Ok(StageOutcome {
            stage,
            status: Status::Completed,
            summary,
            report: None,
        })
    }

    /// Trains one model per (alpha, K_c) grid point, keeps the one with the
    /// best validation Recall@20 and records it as the graph and train stages.
    fn train_grid(&mut self) -> Result<StageOutcome> {
        let stage = Stage::Train;
        let hash = self.config_hash(stage)?;
        let base = [Stage::Prepare, Stage::Encode];
        self.verify_chain(&base)?;
        if !self.opts.force {
            if let Some(rec) = self.manifest.stages.get(stage.name()) {
                if rec.config_hash == hash && self.verify_chain(stage.deps()).is_ok() {
                    return Ok(StageOutcome::up_to_date(stage, rec));
                }
                return Err(PipelineError::Exists {
                    stage,
                    reason: "a previous training run".into(),
                });
            }
            if self.manifest.stages.contains_key(Stage::BuildGraph.name()) {
                return Err(PipelineError::Exists {
                    stage: Stage::BuildGraph,
                    reason: "a previous graph".into(),
                });
            }
        }
        let loaded = self.load_split()?;
        let (users, items) = self.load_embeddings()?;
        let train_cfg = self.cfg.train_config();
        let mut table = String::from("alpha\tk_cooccur\tbest_epoch\tvalid_recall20\n");
        let mut best: Option<(f64, GraphConfig, RefinedGraph, TrainOutcome)> = None;
        for &alpha in &self.cfg.alpha_grid {
            for &k_cooccur in &self.cfg.k_cooccur_grid {
                let gcfg = self.cfg.graph_config_at(alpha, k_cooccur);
                let g = RefinedGraph::build(&items, &loaded.split.train, &gcfg, GraphVariant::FULL)?;
                let out = model::train(&loaded.split, &users, &g.features, &train_cfg)?;
                let score = out.history.best().map_or(0.0, |r| r.recall20);
                writeln!(table, "{alpha}\t{k_cooccur}\t{}\t{score}", out.best_epoch).unwrap();
                log::info!("grid alpha={alpha} k_cooccur={k_cooccur}: valid recall@20 {score:.4}");
                if best.as_ref().is_none_or(|(s, ..)| score > *s) {
                    best = Some((score, gcfg, g, out));
                }
            }
        }
        let (score, gcfg, g, out) = best.expect("grids are non-empty");

        let graph_files = self.write_graph_artifacts(&g)?;
        let graph_hash = hash_json(&json!(gcfg));
        let graph_upstream = self.recorded_upstream(Stage::BuildGraph.deps())?;
        let graph_summary = Self::graph_summary(&g, &gcfg);
        self.finish(Stage::BuildGraph, graph_hash, graph_upstream, graph_files, true, graph_summary)?;

        let mut files = self.write_train_artifacts(&out)?;
        write_text(&self.stage_dir(stage).join(GRID_FILE), &table)?;
        files.push(GRID_FILE.to_string());
        let upstream = self.recorded_upstream(stage.deps())?;
        let mut summary = Self::train_summary(&out);
        summary["grid_alpha"] = json!(gcfg.alpha);
        summary["grid_k_cooccur"] = json!(gcfg.k_cooccur);
        summary["grid_valid_recall20"] = json!(score);
        self.finish(stage, hash, upstream, files, true, summary.clone())?;
        Ok(StageOutcome {
            stage,
            status: Status::Completed,
            summary,
            report: Some(table),
        })
    }

    pub fn evaluate(&mut self) -> Result<StageOutcome> {
        let stage = Stage::Evaluate;
        let hash = self.config_hash(stage)?;
        let Some(upstream) = self.begin(stage, stage.deps(), &hash)? else {
            return Ok(StageOutcome::up_to_date(stage, self.record_of(stage)?));
        };
        let loaded = self.load_split()?;
        let (users, _) = self.load_embeddings()?;
        let features = store_read(&self.stage_dir(Stage::BuildGraph).join(FEATURES_FILE))?;
        let ck = Checkpoint::load(&self.stage_dir(Stage::Train).join(CHECKPOINT_FILE))?;
        let (report, ranking) = eval::evaluate(
            &ck.params,
            &loaded.split,
            &users,
            &features,
            Target::Test,
            &self.cfg.eval_ks,
            self.cfg.leaky_slope,
        )?;
        let mut chain = String::new();
        for s in stage.deps() {
            chain.push_str(&self.record_of(*s)?.config_hash);
        }
        chain.push_str(&hash);
        let metrics = json!({
            "dataset": self.cfg.dataset,
            "seed": self.cfg.seed,
            "config_hash": sha256_hex(chain),
            "target": "test",
            "n_users": report.n_users_evaluated,
            "recall": format_metrics(&report.recall),
            "ndcg": format_metrics(&report.ndcg),
        });
        let dir = self.stage_dir_created(stage)?;
        write_text(
            &dir.join(METRICS_FILE),
            &serde_json::to_string_pretty(&metrics).expect("metrics serialize"),
        )?;
        let mut topn = String::new();
        for (u, list) in &ranking.lists {
            let keys: Vec<&str> = list.iter().map(|&i| loaded.items.key(i)).collect();
            writeln!(topn, "{}\t{}", loaded.users.key(*u), keys.join(",")).unwrap();
        }
        write_text(&dir.join(TOPN_FILE), &topn)?;
        self.finish(stage, hash, upstream, names(&[METRICS_FILE, TOPN_FILE]), true, metrics.clone())?;
        Ok(StageOutcome {
            stage,
            status: Status::Completed,
            summary: metrics,
            report: None,
        })
    }

    pub fn export_graph(&mut self) -> Result<StageOutcome> {
        let stage = Stage::ExportGraph;
        let hash = self.config_hash(stage)?;
        let Some(upstream) = self.begin(stage, stage.deps(), &hash)? else {
            return Ok(StageOutcome::up_to_date(stage, self.record_of(stage)?));
        };
        let loaded = self.load_split()?;
        let src = self.stage_dir(Stage::BuildGraph);
        let merged = import_graph(&src.join(MERGED_FILE))?;
        let normalized = import_graph(&src.join(NORMALIZED_FILE))?;
        let dir = self.stage_dir_created(stage)?;
        export_graph(&merged, &dir.join(MERGED_FILE))?;
        export_graph(&normalized, &dir.join(NORMALIZED_FILE))?;
        let path = dir.join(KEYED_GRAPH_FILE);
        let mut w = std::io::BufWriter::new(fs::File::create(&path).map_err(|e| PipelineError::io(&path, e))?);
        for (s, d, wgt) in merged.edges() {
            writeln!(w, "{}\t{}\t{wgt:.16e}", loaded.items.key(s), loaded.items.key(d))
                .map_err(|e| PipelineError::io(&path, e))?;
        }
        w.flush().map_err(|e| PipelineError::io(&path, e))?;
        drop(w);
        loaded.items.write_tsv(&dir.join(ITEM_IDS_FILE))?;
        let summary = json!({"items": merged.n(), "edges": merged.n_edges()});
        let files = names(&[MERGED_FILE, NORMALIZED_FILE, KEYED_GRAPH_FILE, ITEM_IDS_FILE]);
        self.finish(stage, hash, upstream, files, true, summary.clone())?;
        Ok(StageOutcome {
            stage,
            status: Status::Completed,
            summary,
            report: None,
        })
    }

    /// Builds, trains and evaluates (on test) each requested graph variant.
    pub fn ablate(&mut self, variants: &[Variant]) -> Result<StageOutcome> {
        let stage = Stage::Ablate;
        let mut hash_input = json!({"base": self.config_hash(stage)?});
        hash_input["variants"] = json!(variants);
        let hash = hash_json(&hash_input);
        let Some(upstream) = self.begin(stage, stage.deps(), &hash)? else {
            return Ok(StageOutcome::up_to_date(stage, self.record_of(stage)?));
        };
        let loaded = self.load_split()?;
        let (users, items) = self.load_embeddings()?;
        let rows = ablation_rows(
            &loaded.split,
            &users,
            &items,
            &self.cfg.graph_config(),
            &self.cfg.train_config(),
            &self.cfg.eval_ks,
            variants,
        )?;
        let table = ablation_table(&rows, &self.cfg.eval_ks);
        let dir = self.stage_dir_created(stage)?;
        write_text(&dir.join(ABLATION_FILE), &table)?;
        write_text(
            &dir.join(ABLATION_JSON),
            &serde_json::to_string_pretty(&rows).expect("rows serialize"),
        )?;
        let summary = json!(rows);
        self.finish(stage, hash, upstream, names(&[ABLATION_FILE, ABLATION_JSON]), true, summary.clone())?;
        Ok(StageOutcome {
            stage,
            status: Status::Completed,
            summary,
            report: Some(table),
        })
    }
}

/// Trains and evaluates each variant; metrics are on the test split.
pub fn ablation_rows(
    split: &DatasetSplit,
    users: &EmbeddingMatrix,
    items: &EmbeddingMatrix,
    graph_cfg: &GraphConfig,
    train_cfg: &model::TrainConfig,
    ks: &[usize],
    variants: &[Variant],
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&variant| {
            let g = RefinedGraph::build(items, &split.train, graph_cfg, variant.graph_variant())?;
            let out = model::train(split, users, &g.features, train_cfg)?;
            let (report, _) = eval::evaluate(
                &out.params,
                split,
                users,
                &g.features,
                Target::Test,
                ks,
                train_cfg.leaky_slope,
            )?;
            log::info!("variant {}: best epoch {}", variant.name(), out.best_epoch);
            Ok(AblationRow {
                variant,
                best_epoch: out.best_epoch,
                valid_recall20: out.history.best().map_or(0.0, |r| r.recall20),
                recall: report.recall,
                ndcg: report.ndcg,
            })
        })
        .collect()
}

fn ablation_table(rows: &[AblationRow], ks: &[usize]) -> String {
    let mut out = String::from("variant");
    for k in ks {
        write!(out, "\tR@{k}").unwrap();
    }
    for k in ks {
        write!(out, "\tN@{k}").unwrap();
    }
    out.push('\n');
    for r in rows {
        out.push_str(r.variant.name());
        for k in ks {
            write!(out, "\t{:.4}", r.recall[k]).unwrap();
        }
        for k in ks {
            write!(out, "\t{:.4}", r.ndcg[k]).unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(!Variant::NoGd.graph_variant().denoise);
        assert!(!Variant::NoTe.graph_variant().enhance);
        assert!(!Variant::NoGcn.graph_variant().convolve);
        assert_eq!(Variant::Full.graph_variant(), GraphVariant::FULL);
    }

    #[test]
    fn user_text_fallback() {
        let r = UserRecord {
            index: 0,
            user_key: "u".into(),
            behavior_list: vec!["a".into(), "b".into()],
            preference_text: None,
        };
        assert_eq!(r.encoder_text(), "a. b");
    }

    #[test]
    fn table_layout() {
        let row = AblationRow {
            variant: Variant::NoTe,
            best_epoch: 3,
            valid_recall20: 0.5,
            recall: [(10, 0.25), (20, 0.5)].into(),
            ndcg: [(10, 0.125), (20, 0.2)].into(),
        };
        let t = ablation_table(&[row], &[10, 20]);
        assert_eq!(t, "variant\tR@10\tR@20\tN@10\tN@20\nno_te\t0.2500\t0.5000\t0.1250\t0.2000\n");
    }
}
