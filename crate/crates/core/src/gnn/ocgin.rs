//! One-class GINE: embeddings are pulled towards a fixed centre and the
//! squared distance to that centre is the anomaly score.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{fit, TrainSpec};
use super::{gine_forward, AttributedGraph, EarlyStop, GineModel, TrainLog};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcginConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub seed: u64,
    pub early_stop: Option<EarlyStop>,
}

impl Default for OcginConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            weight_decay: 1e-4,
            batch_size: 50,
            layers: 3,
            hidden: 10,
            epochs: 150,
            seed: 7,
            early_stop: Some(EarlyStop::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcginState {
    pub model: GineModel,
    /// `1 × L·h`, fixed at initialisation.
    pub center: Tensor,
    pub log: TrainLog,
}

/// Mean of `|embedding − center|²` over `graphs` and its gradient with
/// respect to every model parameter. No regulariser is included.
pub fn ocgin_loss(
    model: &GineModel,
    graphs: &[&AttributedGraph],
    center: &Tensor,
) -> Result<(f64, Vec<Tensor>)> {
    if graphs.is_empty() {
        return Err(Error::Empty("no graphs in batch".into()));
    }
    let tape = Tape::new();
    let bound = model.bind(&tape, true);
    let c = tape.constant(center.clone());
    let mut total = None;
    for g in graphs {
        let emb = gine_forward(&tape, model, &bound, g)?;
        let d = tape.squared_norm(tape.sub(emb.graph, c)?);
        total = Some(match total {
            None => d,
            Some(t) => tape.add(t, d)?,
        });
    }
    let loss = tape.scalar_mul(total.expect("non-empty batch"), 1.0 / graphs.len() as f64);
    let grads = tape.backward(loss)?;
    let params = model.params();
    let grads = bound
        .vars
        .iter()
        .zip(&params)
        .map(|(&v, p)| grads.get(v, p.shape()))
        .collect();
    Ok((tape.scalar_value(loss), grads))
}

pub fn ocgin_train(graphs: &[AttributedGraph], config: &OcginConfig) -> Result<OcginState> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Empty("ocgin_train needs at least one graph".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = GineModel::init(
        first.node_dim(),
        first.edge_dim(),
        config.hidden,
        config.layers,
        &mut rng,
    )?;

    let mut center = vec![0.0; model.embedding_dim()];
    for g in graphs {
        let emb = model.embed(g)?;
        for (c, x) in center.iter_mut().zip(emb.graph.data()) {
            *c += x;
        }
    }
    let center = Tensor::row(center.into_iter().map(|c| c / graphs.len() as f64).collect());

    let spec = TrainSpec {
        lr: config.lr,
        weight_decay: config.weight_decay,
        batch_size: config.batch_size,
        epochs: config.epochs,
        early_stop: config.early_stop,
    };
    let log = fit(&mut model, graphs, &spec, &mut rng, |m, batch| {
        let members: Vec<&AttributedGraph> = batch.iter().map(|&i| &graphs[i]).collect();
        ocgin_loss(m, &members, &center)
    })?;
    Ok(OcginState { model, center, log })
}

/// `|embedding(g) − center|²`.
pub fn ocgin_score(state: &OcginState, g: &AttributedGraph) -> Result<f64> {
    let emb = state.model.embed(g)?;
    Ok(emb
        .graph
        .data()
        .iter()
        .zip(state.center.data())
        .map(|(x, c)| (x - c) * (x - c))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrnet::{DatedGraph, WeightedDigraph};
    use crate::gnn::attribute_graph;
    use chrono::NaiveDate;

    fn graph(edges: &[(usize, usize, f64)]) -> AttributedGraph {
        attribute_graph(&DatedGraph {
            as_of: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
            graph: WeightedDigraph::from_triples(5, edges).unwrap(),
        })
    }

    fn quick(epochs: usize) -> OcginConfig {
        OcginConfig {
            lr: 0.01,
            batch_size: 4,
            layers: 2,
            hidden: 6,
            epochs,
            early_stop: None,
            ..OcginConfig::default()
        }
    }

    #[test]
    fn identical_graphs_reach_zero_loss() {
        let g = graph(&[(0, 1, 0.3), (1, 2, 0.7), (3, 4, 0.2)]);
        let graphs = vec![g; 10];
        let state = ocgin_train(&graphs, &OcginConfig { epochs: 200, ..quick(200) }).unwrap();
        let last = *state.log.epoch_losses.last().unwrap();
        assert!(last < 1e-6, "{last}");
    }

    #[test]
    fn zero_output_maps_give_center_norm() {
        let graphs = vec![graph(&[(0, 1, 0.3)]), graph(&[(2, 3, 0.9), (3, 4, 0.1)])];
        let mut state = ocgin_train(&graphs, &OcginConfig { weight_decay: 0.0, ..quick(1) }).unwrap();
        for layer in &mut state.model.layers {
            layer.w2.data_mut().iter_mut().for_each(|w| *w = 0.0);
        }
        let c2: f64 = state.center.data().iter().map(|c| c * c).sum();
        let refs: Vec<&AttributedGraph> = graphs.iter().collect();
        let (loss, _) = ocgin_loss(&state.model, &refs, &state.center).unwrap();
        assert_eq!(loss, c2);
        for g in &graphs {
            assert_eq!(ocgin_score(&state, g).unwrap(), c2);
        }
    }

    #[test]
    fn score_is_zero_at_center_and_nonnegative() {
        let graphs = vec![graph(&[(0, 1, 0.3)]); 3];
        let state = ocgin_train(&graphs, &quick(0)).unwrap();
        assert!(ocgin_score(&state, &graphs[0]).unwrap().abs() < 1e-24);
        let other = graph(&[(0, 4, 0.8), (4, 2, 0.5)]);
        assert!(ocgin_score(&state, &other).unwrap() >= 0.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(ocgin_train(&[], &quick(1)), Err(Error::Empty(_))));
    }
}
