//! Knowledge distillation from a frozen random teacher. The student learns
//! to reproduce the teacher's node and graph embeddings on the observed
//! graphs; graphs it reproduces poorly are anomalous.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{fit, TrainSpec};
use super::{gine_forward, AttributedGraph, EarlyStop, Embedding, GineModel, TrainLog};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlocalConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub layers: usize,
    pub hidden: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub early_stop: Option<EarlyStop>,
}

impl Default for GlocalConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 50,
            layers: 3,
            hidden: 10,
            lambda: 0.1,
            epochs: 150,
            seed: 7,
            early_stop: Some(EarlyStop::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlocalState {
    pub teacher: GineModel,
    pub student: GineModel,
    pub lambda: f64,
    pub log: TrainLog,
}

/// Teacher outputs the student is trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    /// Final-layer node embeddings, `n × h`.
    pub nodes: Tensor,
    /// `1 × L·h`.
    pub graph: Tensor,
}

impl Target {
    pub fn of(teacher: &GineModel, g: &AttributedGraph) -> Result<Self> {
        let Embedding { mut nodes, graph } = teacher.embed(g)?;
        Ok(Self {
            nodes: nodes.pop().expect("at least one layer"),
            graph,
        })
    }
}

/// Mean over `graphs` of `λ·L_node + L_graph` and its gradient with
/// respect to every student parameter.
pub fn glocalkd_loss(
    student: &GineModel,
    graphs: &[(&AttributedGraph, &Target)],
    lambda: f64,
) -> Result<(f64, Vec<Tensor>)> {
    if graphs.is_empty() {
        return Err(Error::Empty("no graphs in batch".into()));
    }
    let tape = Tape::new();
    let bound = student.bind(&tape, true);
    let mut total = None;
    for (g, target) in graphs {
        let emb = gine_forward(&tape, student, &bound, g)?;
        let last = *emb.nodes.last().expect("at least one layer");
        let node_diff = tape.sub(last, tape.constant(target.nodes.clone()))?;
        let l_node = tape.scalar_mul(tape.squared_norm(node_diff), lambda / g.n_vertices() as f64);
        let l_graph = tape.squared_norm(tape.sub(emb.graph, tape.constant(target.graph.clone()))?);
        let term = tape.add(l_node, l_graph)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    let loss = tape.scalar_mul(total.expect("non-empty batch"), 1.0 / graphs.len() as f64);
    let grads = tape.backward(loss)?;
    let params = student.params();
    let grads = bound
        .vars
        .iter()
        .zip(&params)
        .map(|(&v, p)| grads.get(v, p.shape()))
        .collect();
    Ok((tape.scalar_value(loss), grads))
}

pub fn glocalkd_train(graphs: &[AttributedGraph], config: &GlocalConfig) -> Result<GlocalState> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Empty("glocalkd_train needs at least one graph".into()))?;
    if !(config.lambda >= 0.0 && config.lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be ≥ 0, got {}", config.lambda)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dims = (first.node_dim(), first.edge_dim(), config.hidden, config.layers);
    let teacher = GineModel::init(dims.0, dims.1, dims.2, dims.3, &mut rng)?;
    let mut student = GineModel::init(dims.0, dims.1, dims.2, dims.3, &mut rng)?;
    let targets = graphs
        .iter()
        .map(|g| Target::of(&teacher, g))
        .collect::<Result<Vec<_>>>()?;

    let spec = TrainSpec {
        lr: config.lr,
        weight_decay: 0.0,
        batch_size: config.batch_size,
        epochs: config.epochs,
        early_stop: config.early_stop,
    };
    let log = fit(&mut student, graphs, &spec, &mut rng, |m, batch| {
        let members: Vec<(&AttributedGraph, &Target)> =
            batch.iter().map(|&i| (&graphs[i], &targets[i])).collect();
        glocalkd_loss(m, &members, config.lambda)
    })?;
    Ok(GlocalState {
        teacher,
        student,
        lambda: config.lambda,
        log,
    })
}

fn squared_distance(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `λ·L_node(g) + L_graph(g)`.
pub fn glocalkd_score(state: &GlocalState, g: &AttributedGraph) -> Result<f64> {
    let target = Target::of(&state.teacher, g)?;
    let emb = state.student.embed(g)?;
    let last = emb.nodes.last().expect("at least one layer");
    let l_node = squared_distance(last, &target.nodes) / g.n_vertices() as f64;
    Ok(state.lambda * l_node + squared_distance(&emb.graph, &target.graph))
}
