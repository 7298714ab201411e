//! Training configuration, the full model, and checkpoints.
//!
//! # Checkpoint format
//!
//! Line-oriented UTF-8 text:
//!
//! ```text
//! lerp-checkpoint 1
//! config {"m":80,"T":2,...}
//! graph <fingerprint>
//! entities <n>
//! relations <count> <relation-vocab-hash>
//! relation <name>                     (one line per relation slot)
//! dims m=<m> T=<T> K=<K> rules=<rules per relation> targets=<targets>
//! params <count>
//! param <name> <rows> <cols>
//! <rows·cols space-separated values>  (shortest round-trip decimal form)
//! ...
//! end
//! ```
//!
//! Parameters appear in allocation order and loading checks every name and
//! shape, so a checkpoint only loads into the layout it was written from.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{relation_vocab_hash, KnowledgeGraph};
use crate::lerp::{compute_lerp, ClampVariant, LerpMatrix, LerpParams};
use crate::param::{AdamConfig, ParamStore};
use crate::rules::{predict_batch, Query, RuleSet};
use crate::tensor::Tensor;
use crate::util::write_atomic;

const MAGIC: &str = "lerp-checkpoint 1";

/// Standard deviation of the Gaussian noise on the initial logits.
pub const INIT_SIGMA: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// LERP width.
    pub m: usize,
    /// LERP depth.
    #[serde(rename = "T")]
    pub t: usize,
    /// Hops per rule.
    #[serde(rename = "K")]
    pub k: usize,
    pub rules_per_relation: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub constrain_head: bool,
    pub clamp_variant: ClampVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            m: 80,
            t: 2,
            k: 3,
            rules_per_relation: 4,
            epochs: 10,
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 128,
            seed: 0,
            constrain_head: false,
            clamp_variant: ClampVariant::Clamped,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.to_owned(),
                message: message.to_owned(),
            })
        };
        if self.m < 1 {
            return bad("m", "must be at least 1");
        }
        if self.k < 1 {
            return bad("K", "must be at least 1");
        }
        if self.rules_per_relation < 1 {
            return bad("rules_per_relation", "must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if self.batch_size < 1 {
            return bad("batch_size", "must be at least 1");
        }
        Ok(())
    }

    /// Parses and validates a JSON config document; unknown keys are errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let key = msg
                .split('`')
                .nth(1)
                .unwrap_or("<document>")
                .to_owned();
            Error::Config { key, message: msg }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub lerp: LerpParams,
    pub rules: RuleSet,
    graph_fingerprint: String,
    relation_names: Vec<String>,
    num_entities: usize,
}

impl Model {
    /// Fresh model sized for `graph`, logits drawn from `N(0, 0.01²)` with
    /// the config seed.
    pub fn new(config: TrainConfig, graph: &KnowledgeGraph) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self::allocate(
            config,
            graph.fingerprint(),
            graph.relation_names().to_vec(),
            graph.num_entities(),
            INIT_SIGMA,
            &mut rng,
        ))
    }

    fn allocate(
        config: TrainConfig,
        graph_fingerprint: String,
        relation_names: Vec<String>,
        num_entities: usize,
        sigma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let relations = relation_names.len();
        let targets = relations.saturating_sub(1);
        let mut store = ParamStore::new();
        let lerp = LerpParams::init(&mut store, config.t, config.m, relations, sigma, rng);
        let rules = RuleSet::init(
            &mut store,
            targets,
            config.rules_per_relation,
            config.k,
            relations,
            config.m + 1,
            config.constrain_head,
            sigma,
            rng,
        );
        Model {
            config,
            store,
            lerp,
            rules,
            graph_fingerprint,
            relation_names,
            num_entities,
        }
    }

    pub fn graph_fingerprint(&self) -> &str {
        &self.graph_fingerprint
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn count_learnable_scalars(&self) -> usize {
        self.store.scalar_count()
    }

    /// Refuses graphs other than the one the model was built for.
    pub fn check_graph(&self, graph: &KnowledgeGraph) -> Result<()> {
        let found = graph.fingerprint();
        if found != self.graph_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.graph_fingerprint.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn lerp_matrix(&self, graph: &KnowledgeGraph) -> Result<LerpMatrix> {
        self.check_graph(graph)?;
        Ok(compute_lerp(&self.store, &self.lerp, graph, self.config.clamp_variant))
    }

    /// Scores for `queries`, `n × |queries|`.
    pub fn score(&self, graph: &KnowledgeGraph, queries: &[Query]) -> Result<Tensor> {
        let lerp = self.lerp_matrix(graph)?;
        predict_batch(&self.store, &self.rules, &lerp, graph, queries)
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(
            out,
            "config {}",
            serde_json::to_string(&self.config).expect("config serializes")
        )
        .unwrap();
        writeln!(out, "graph {}", self.graph_fingerprint).unwrap();
        writeln!(out, "entities {}", self.num_entities).unwrap();
        writeln!(
            out,
            "relations {} {}",
            self.relation_names.len(),
            relation_vocab_hash(&self.relation_names)
        )
        .unwrap();
        for name in &self.relation_names {
            writeln!(out, "relation {name}").unwrap();
        }
        writeln!(
            out,
            "dims m={} T={} K={} rules={} targets={}",
            self.config.m,
            self.config.t,
            self.config.k,
            self.config.rules_per_relation,
            self.rules.targets()
        )
        .unwrap();
        writeln!(out, "params {}", self.store.len()).unwrap();
        for (_, p) in self.store.iter() {
            writeln!(out, "param {} {} {}", p.name, p.value.rows(), p.value.cols()).unwrap();
            let mut first = true;
            for v in p.value.data() {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        writeln!(out, "end").unwrap();
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_checkpoint_string().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| bad(format!("truncated before {what}")))
        };
        if next("header")? != MAGIC {
            return Err(bad("missing `lerp-checkpoint 1` header".into()));
        }
        let config: TrainConfig = serde_json::from_str(field(next("config")?, "config")?)?;
        config.validate()?;
        let fingerprint = field(next("graph")?, "graph")?.to_owned();
        let num_entities: usize = parse(field(next("entities")?, "entities")?)?;
        let rel_line = field(next("relations")?, "relations")?;
        let mut parts = rel_line.split_whitespace();
        let count: usize = parse(parts.next().unwrap_or(""))?;
        let hash = parts.next().unwrap_or("").to_owned();
        let mut relation_names = Vec::with_capacity(count);
        for _ in 0..count {
            relation_names.push(field(next("relation")?, "relation")?.to_owned());
        }
        if relation_vocab_hash(&relation_names) != hash {
            return Err(bad("relation vocabulary hash mismatch".into()));
        }
        let _dims = field(next("dims")?, "dims")?;
        let nparams: usize = parse(field(next("params")?, "params")?)?;

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::allocate(config, fingerprint, relation_names, num_entities, 0.0, &mut rng);
        if model.store.len() != nparams {
            return Err(bad(format!(
                "expected {} parameter tensors, found {nparams}",
                model.store.len()
            )));
        }
        let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let header = field(next("param")?, "param")?;
            let mut h = header.split_whitespace();
            let name = h.next().unwrap_or("");
            let rows: usize = parse(h.next().unwrap_or(""))?;
            let cols: usize = parse(h.next().unwrap_or(""))?;
            let expected = &model.store.get(id).name;
            if name != expected || (rows, cols) != model.store.value(id).shape() {
                return Err(bad(format!(
                    "parameter `{name}` {rows}x{cols} does not match expected `{expected}` {:?}",
                    model.store.value(id).shape()
                )));
            }
            let values: Vec<f64> = next("values")?
                .split_whitespace()
                .map(parse)
                .collect::<Result<_>>()?;
            if values.len() != rows * cols {
                return Err(bad(format!("parameter `{name}` has {} values", values.len())));
            }
            *model.store.value_mut(id) = Tensor::from_vec(rows, cols, values);
        }
        if next("end")? != "end" {
            return Err(bad("missing `end` marker".into()));
        }
        Ok(model)
    }
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::Checkpoint(format!("expected `{key}` line, found `{line}`")))
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("cannot parse `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Triplet;

    fn small_graph() -> KnowledgeGraph {
        KnowledgeGraph::from_triplets(
            5,
            2,
            vec![
                Triplet::new(0, 0, 1),
                Triplet::new(1, 1, 2),
                Triplet::new(2, 0, 3),
                Triplet::new(3, 1, 4),
            ],
        )
        .unwrap()
    }

    #[test]
    fn unknown_config_key_is_named() {
        let err = TrainConfig::from_json(r#"{"m": 4, "depth": 2}"#).unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "depth"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn invalid_value_is_named() {
        let err = TrainConfig::from_json(r#"{"lr": -1.0}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "lr"), "{err}");
        let err = TrainConfig::from_json(r#"{"K": 0}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "K"), "{err}");
    }

    #[test]
    fn config_keys_round_trip() {
        let cfg = TrainConfig {
            m: 3,
            t: 1,
            clamp_variant: ClampVariant::Unclamped,
            ..TrainConfig::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"T\":1") && json.contains("\"unclamped\""));
        assert_eq!(TrainConfig::from_json(&json).unwrap(), cfg);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let g = small_graph();
        let cfg = TrainConfig {
            m: 3,
            t: 2,
            k: 2,
            rules_per_relation: 2,
            constrain_head: true,
            ..TrainConfig::default()
        };
        let model = Model::new(cfg, &g).unwrap();
        let text = model.to_checkpoint_string();
        let back = Model::from_checkpoint_str(&text).unwrap();
        assert_eq!(back.to_checkpoint_string(), text);
        for ((_, a), (_, b)) in model.store.iter().zip(back.store.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let g = small_graph();
        let cfg = TrainConfig {
            m: 2,
            t: 1,
            k: 1,
            rules_per_relation: 1,
            ..TrainConfig::default()
        };
        let text = Model::new(cfg, &g).unwrap().to_checkpoint_string();
        let broken = text.replacen("param lerp.chain.1 2 5", "param lerp.chain.1 2 6", 1);
        assert!(Model::from_checkpoint_str(&broken).is_err());
        assert!(Model::from_checkpoint_str(&text[..text.len() / 2]).is_err());
    }

    #[test]
    fn other_graph_is_refused() {
        let g = small_graph();
        let model = Model::new(TrainConfig { m: 2, t: 1, k: 1, ..TrainConfig::default() }, &g).unwrap();
        let other = KnowledgeGraph::from_triplets(5, 2, vec![Triplet::new(0, 0, 2)]).unwrap();
        assert!(matches!(
            model.check_graph(&other),
            Err(Error::FingerprintMismatch { .. })
        ));
    }
}
