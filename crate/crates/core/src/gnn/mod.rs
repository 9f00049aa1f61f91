//! Graph neural anomaly scoring with GINE message passing.
//!
//! Each layer computes
//! `h'_v = MLP((1 + ε) h_v + Σ_u ReLU(h_u + W_e y_uv))`, where the MLP is
//! two bias-free linear maps with a ReLU between them. Every directed edge
//! delivers its message in both directions. The graph embedding is the
//! concatenation over layers of the mean node embedding.

mod checkpoint;
mod glocalkd;
mod ocgin;
mod train;

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Tensor, Var};
use crate::corrnet::DatedGraph;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use glocalkd::{glocalkd_loss, glocalkd_score, glocalkd_train, GlocalConfig, GlocalState, Target};
pub use ocgin::{ocgin_loss, ocgin_score, ocgin_train, OcginConfig, OcginState};
pub use train::{EarlyStop, TrainLog};

/// Graph with dense node and edge attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedGraph {
    pub as_of: NaiveDate,
    node_features: Tensor,
    edges: Vec<(usize, usize)>,
    edge_features: Tensor,
    msg_src: Vec<usize>,
    msg_dst: Vec<usize>,
    msg_features: Tensor,
}

impl AttributedGraph {
    pub fn new(
        as_of: NaiveDate,
        node_features: Tensor,
        edges: Vec<(usize, usize)>,
        edge_features: Tensor,
    ) -> Result<Self> {
        let n = node_features.rows();
        if node_features.cols() == 0 || edge_features.cols() == 0 {
            return Err(Error::shape("AttributedGraph::new", "attribute dimension 0"));
        }
        if edge_features.rows() != edges.len() {
            return Err(Error::shape(
                "AttributedGraph::new",
                format!("{} edge rows for {} edges", edge_features.rows(), edges.len()),
            ));
        }
        if let Some(&(s, t)) = edges.iter().find(|&&(s, t)| s >= n || t >= n) {
            return Err(Error::shape(
                "AttributedGraph::new",
                format!("edge ({s},{t}) with {n} vertices"),
            ));
        }
        let k = edge_features.cols();
        let mut msg_src = Vec::with_capacity(2 * edges.len());
        let mut msg_dst = Vec::with_capacity(2 * edges.len());
        let mut data = Vec::with_capacity(2 * edges.len() * k);
        for (e, &(s, t)) in edges.iter().enumerate() {
            for (from, to) in [(s, t), (t, s)] {
                msg_src.push(from);
                msg_dst.push(to);
                data.extend_from_slice(edge_features.row_slice(e));
            }
        }
        let msg_features = Tensor::new(msg_src.len(), k, data)?;
        Ok(Self {
            as_of,
            node_features,
            edges,
            edge_features,
            msg_src,
            msg_dst,
            msg_features,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.node_features.rows()
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_features(&self) -> &Tensor {
        &self.edge_features
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.cols()
    }

    /// Same graph with vertex `v` renamed to `perm[v]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_vertices();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("relabel needs a permutation".into()));
        }
        let m = self.node_dim();
        let mut x = vec![0.0; n * m];
        for v in 0..n {
            x[perm[v] * m..(perm[v] + 1) * m].copy_from_slice(self.node_features.row_slice(v));
        }
        Self::new(
            self.as_of,
            Tensor::new(n, m, x)?,
            self.edges.iter().map(|&(s, t)| (perm[s], perm[t])).collect(),
            self.edge_features.clone(),
        )
    }
}

/// Node features `(1, weighted degree)` and edge feature `(weight)`.
pub fn attribute_graph(g: &DatedGraph) -> AttributedGraph {
    let n = g.graph.n_vertices();
    let mut degree = vec![0.0; n];
    for e in g.graph.edges() {
        degree[e.source] += e.weight;
        degree[e.target] += e.weight;
    }
    let x = degree.iter().flat_map(|&d| [1.0, d]).collect();
    let edges = g.graph.edges().iter().map(|e| (e.source, e.target)).collect();
    let y = g.graph.edges().iter().map(|e| e.weight).collect::<Vec<_>>();
    let n_edges = y.len();
    AttributedGraph::new(
        g.as_of,
        Tensor::new(n, 2, x).expect("2 features per vertex"),
        edges,
        Tensor::new(n_edges, 1, y).expect("1 feature per edge"),
    )
    .expect("digraph indices are validated")
}

pub fn attribute_graphs(graphs: &[DatedGraph]) -> Vec<AttributedGraph> {
    graphs.iter().map(attribute_graph).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GineLayer {
    /// `1 × 1`.
    pub epsilon: Tensor,
    /// `k × d_in`: projects edge attributes into the layer's input space.
    pub edge_proj: Tensor,
    /// `d_in × h`.
    pub w1: Tensor,
    /// `h × h`.
    pub w2: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GineModel {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub hidden: usize,
    pub layers: Vec<GineLayer>,
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(rows, cols, data).expect("sized by construction")
}

impl GineModel {
    /// Weights drawn uniformly from `±1/√fan_in`; every ε starts at 0.
    pub fn init(
        node_dim: usize,
        edge_dim: usize,
        hidden: usize,
        n_layers: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if node_dim == 0 || edge_dim == 0 || hidden == 0 || n_layers == 0 {
            return Err(Error::InvalidArgument(format!(
                "model dimensions must be positive: node {node_dim}, edge {edge_dim}, hidden {hidden}, layers {n_layers}"
            )));
        }
        let layers = (0..n_layers)
            .map(|l| {
                let d_in = if l == 0 { node_dim } else { hidden };
                GineLayer {
                    epsilon: Tensor::scalar(0.0),
                    edge_proj: uniform(rng, edge_dim, d_in, edge_dim),
                    w1: uniform(rng, d_in, hidden, d_in),
                    w2: uniform(rng, hidden, hidden, hidden),
                }
            })
            .collect();
        Ok(Self {
            node_dim,
            edge_dim,
            hidden,
            layers,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.hidden * self.layers.len()
    }

    /// Parameters in a fixed order: per layer ε, edge projection, W1, W2.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.epsilon, &l.edge_proj, &l.w1, &l.w2])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.epsilon, &mut l.edge_proj, &mut l.w1, &mut l.w2])
            .collect()
    }

    /// SHA-256 over the bit patterns of every parameter.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for p in self.params() {
            hasher.update((p.rows() as u64).to_le_bytes());
            hasher.update((p.cols() as u64).to_le_bytes());
            for v in p.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Records the parameters on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundModel {
        let vars = self
            .params()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        BoundModel { vars }
    }

    fn check_graph(&self, g: &AttributedGraph) -> Result<()> {
        if g.node_dim() != self.node_dim || g.edge_dim() != self.edge_dim {
            return Err(Error::shape(
                "gine_forward",
                format!(
                    "graph attributes {}/{} vs model {}/{}",
                    g.node_dim(),
                    g.edge_dim(),
                    self.node_dim,
                    self.edge_dim
                ),
            ));
        }
        if g.n_vertices() == 0 {
            return Err(Error::shape("gine_forward", "graph has no vertices"));
        }
        Ok(())
    }

    /// Per-layer node embeddings and the graph embedding, computed without
    /// recording gradients.
    pub fn embed(&self, g: &AttributedGraph) -> Result<Embedding> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let out = gine_forward(&tape, self, &bound, g)?;
        Ok(Embedding {
            nodes: out.nodes.iter().map(|&v| tape.value(v)).collect(),
            graph: tape.value(out.graph),
        })
    }
}

/// Model parameters recorded on a tape, in [`GineModel::params`] order.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub vars: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct TapeEmbedding {
    /// `n × h` per layer.
    pub nodes: Vec<Var>,
    /// `1 × L·h`.
    pub graph: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub nodes: Vec<Tensor>,
    pub graph: Tensor,
}

/// One GINE layer on an `n × d_in` input.
pub fn gine_layer(
    tape: &Tape,
    vars: &[Var],
    h: Var,
    g: &AttributedGraph,
) -> Result<Var> {
    let [epsilon, edge_proj, w1, w2] = [vars[0], vars[1], vars[2], vars[3]];
    let mut z = tape.add(h, tape.scale_by(h, epsilon)?)?;
    if !g.msg_src.is_empty() {
        let y = tape.constant(g.msg_features.clone());
        let neighbours = tape.gather_rows(h, &g.msg_src)?;
        let messages = tape.relu(tape.add(neighbours, tape.matmul(y, edge_proj)?)?);
        z = tape.add(z, tape.scatter_add_rows(messages, &g.msg_dst, g.n_vertices())?)?;
    }
    tape.matmul(tape.relu(tape.matmul(z, w1)?), w2)
}

pub fn gine_forward(
    tape: &Tape,
    model: &GineModel,
    bound: &BoundModel,
    g: &AttributedGraph,
) -> Result<TapeEmbedding> {
    model.check_graph(g)?;
    if bound.vars.len() != 4 * model.layers.len() {
        return Err(Error::shape("gine_forward", "bound parameters do not match the model"));
    }
    let mut h = tape.constant(g.node_features.clone());
    let mut nodes = Vec::with_capacity(model.layers.len());
    let mut pooled = Vec::with_capacity(model.layers.len());
    for vars in bound.vars.chunks(4) {
        h = gine_layer(tape, vars, h, g)?;
        nodes.push(h);
        pooled.push(tape.mean_rows(h)?);
    }
    let graph = tape.concat_cols(&pooled)?;
    Ok(TapeEmbedding { nodes, graph })
}
