//! Joint optimization of the LERP grid and all rules.
//!
//! Every training triplet `(h, r, t)` yields the queries `r(h, ?) = t` and
//! `r′(t, ?) = h`. Each mini-batch computes the LERP matrix once, scores all
//! its queries against it and takes one Adam step on the mean cross-entropy.
//! While a batch is scored, its own triplets are hidden from the graph.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::kg::{EdgeMask, KnowledgeGraph, Triplet};
use crate::lerp::forward_lerp;
use crate::model::{Model, TrainConfig};
use crate::rules::{score_queries, Query};

/// One query per train triplet in each direction, in train order. The
/// `relation` of a reverse query is the reverse relation id.
pub fn make_queries(graph: &KnowledgeGraph) -> Vec<Triplet> {
    let mut out = Vec::with_capacity(2 * graph.train().len());
    for t in graph.train() {
        out.push(*t);
        out.push(Triplet::new(t.tail, graph.reverse_of(t.relation), t.head));
    }
    out
}

/// Deterministic per-epoch shuffle.
pub fn shuffle_queries(queries: &mut [Triplet], seed: u64, epoch: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    queries.shuffle(&mut rng);
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
    /// Queries whose score vector was all zero when trained.
    pub empty_queries: usize,
    pub seconds: f64,
}

/// One optimization step on `batch`; returns the batch loss and the number of
/// queries with all-zero scores.
pub fn train_step(
    model: &mut Model,
    graph: &KnowledgeGraph,
    batch: &[Triplet],
    mask: &mut EdgeMask,
) -> Result<(f64, usize)> {
    mask.clear();
    for q in batch {
        mask.hide(graph, q.head, q.relation, q.tail);
    }
    let mask_ref: &EdgeMask = mask;
    let queries: Vec<Query> = batch.iter().map(|q| Query::new(q.head, q.relation)).collect();
    let targets: Vec<usize> = batch.iter().map(|q| q.tail).collect();

    let mut tape = Tape::new();
    let lerp = forward_lerp(
        &mut tape,
        &model.store,
        &model.lerp,
        graph,
        Some(mask_ref),
        model.config.clamp_variant,
    );
    let scores = score_queries(
        &mut tape,
        &model.store,
        &model.rules,
        lerp,
        graph,
        &queries,
        None,
        Some(mask_ref),
    )?;
    let empty = {
        let s = tape.value(scores);
        (0..s.cols())
            .filter(|&c| (0..s.rows()).all(|r| s.get(r, c) == 0.0))
            .count()
    };
    let loss_node = tape.cross_entropy(scores, targets);
    let loss = tape.scalar(loss_node);
    if !loss.is_finite() {
        let terms = tape.cross_entropy_terms(loss_node);
        let worst = terms
            .iter()
            .position(|v| !v.is_finite())
            .unwrap_or(0);
        let q = batch[worst];
        return Err(Error::NonFiniteLoss {
            loss,
            head: graph.entity_name(q.head).to_owned(),
            relation: graph.relation_name(q.relation).to_owned(),
            tail: graph.entity_name(q.tail).to_owned(),
        });
    }
    tape.backward(loss_node, &mut model.store);
    drop(tape);
    mask.clear();
    model.store.adam_step(&model.config.adam());
    Ok((loss, empty))
}

/// Receives progress while training.
pub trait TrainObserver {
    /// After every optimization step, with the batch loss.
    fn step(&mut self, _epoch: usize, _step: usize, _loss: f64) {}

    /// After every epoch; an error aborts training.
    fn epoch(&mut self, _stats: &EpochStats, _model: &Model) -> Result<()> {
        Ok(())
    }
}

struct EpochFn<F>(F);

impl<F: FnMut(&EpochStats, &Model) -> Result<()>> TrainObserver for EpochFn<F> {
    fn epoch(&mut self, stats: &EpochStats, model: &Model) -> Result<()> {
        (self.0)(stats, model)
    }
}

/// One pass over `queries` in mini-batches of the configured size.
pub fn train_epoch(
    model: &mut Model,
    graph: &KnowledgeGraph,
    queries: &[Triplet],
    epoch: usize,
) -> Result<EpochStats> {
    train_epoch_observed(model, graph, queries, epoch, &mut EpochFn(|_: &EpochStats, _: &Model| Ok(())))
}

fn train_epoch_observed(
    model: &mut Model,
    graph: &KnowledgeGraph,
    queries: &[Triplet],
    epoch: usize,
    observer: &mut impl TrainObserver,
) -> Result<EpochStats> {
    model.check_graph(graph)?;
    let start = Instant::now();
    let mut mask = EdgeMask::new(graph);
    let mut total = 0.0;
    let mut empty_queries = 0;
    let mut steps = 0;
    for batch in queries.chunks(model.config.batch_size) {
        let (loss, empty) = train_step(model, graph, batch, &mut mask)?;
        total += loss * batch.len() as f64;
        empty_queries += empty;
        steps += 1;
        observer.step(epoch, steps, loss);
    }
    let mean_loss = if queries.is_empty() {
        0.0
    } else {
        total / queries.len() as f64
    };
    Ok(EpochStats {
        epoch,
        mean_loss,
        steps,
        empty_queries,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains a fresh model for `config.epochs` epochs, handing each finished
/// epoch to `on_epoch` (e.g. to checkpoint it).
pub fn fit_with(
    config: TrainConfig,
    graph: &KnowledgeGraph,
    on_epoch: impl FnMut(&EpochStats, &Model) -> Result<()>,
) -> Result<Model> {
    fit_observed(config, graph, &mut EpochFn(on_epoch))
}

/// Trains a fresh model, reporting every step and epoch to `observer`.
pub fn fit_observed(
    config: TrainConfig,
    graph: &KnowledgeGraph,
    observer: &mut impl TrainObserver,
) -> Result<Model> {
    let mut model = Model::new(config, graph)?;
    let mut queries = make_queries(graph);
    for epoch in 1..=model.config.epochs {
        shuffle_queries(&mut queries, model.config.seed, epoch);
        let stats = train_epoch_observed(&mut model, graph, &queries, epoch, observer)?;
        observer.epoch(&stats, &model)?;
    }
    Ok(model)
}

/// [`fit_with`] that writes `epoch-NN.ckpt` into `checkpoint_dir` after each
/// epoch when a directory is given.
pub fn fit(config: TrainConfig, graph: &KnowledgeGraph, checkpoint_dir: Option<&Path>) -> Result<Model> {
    fit_with(config, graph, |stats, model| {
        if let Some(dir) = checkpoint_dir {
            model.save(&dir.join(format!("epoch-{:02}.ckpt", stats.epoch)))?;
        }
        Ok(())
    })
}
