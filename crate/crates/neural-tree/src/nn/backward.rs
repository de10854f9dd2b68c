//! Exact reverse-mode gradients for the message-passing models.
//!
//! The batch objective is the sum over items of the mean data loss
//! (cross-entropy or squared error over the item's targeted nodes) plus
//! `l2·‖θ‖²`. The backward pass replays the cached forward tensors in
//! reverse; every computation is sequential and in fixed order, so the
//! result is bit-identical across runs.

use super::forward::{apply_heads, run_iterations, Network, Readout, Topology};
use super::kernels::{axpy, dot, log_sum_exp, softmax};
use super::{HeadKind, IterParams, ModelParams, NnError, Targets};
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;

/// One training example: a network, its features, and its supervision.
#[derive(Clone, Copy)]
pub struct TrainItem<'a> {
    pub net: Network<'a>,
    pub x: &'a BTreeMap<crate::graph::NodeId, Vec<f64>>,
    pub targets: &'a Targets,
}

/// Loss and exact gradients of the batch objective
/// `Σ_items mean-data-loss + l2·‖θ‖²`. Gradients come back in a
/// parameter-shaped container. `dropout_rng` enables training-mode dropout
/// masks (drawn sequentially over items, deterministically); pass `None`
/// for exact evaluation-mode gradients.
pub fn batch_loss_and_grads(
    p: &ModelParams,
    batch: &[TrainItem<'_>],
    l2: f64,
    mut dropout_rng: Option<&mut ChaCha20Rng>,
) -> Result<(f64, ModelParams), NnError> {
    p.validate_shapes()?;
    let mut grads = p.zeros_like();
    let mut total_loss = 0.0;
    for item in batch {
        total_loss += item_backward(p, item, &mut grads, dropout_rng.as_deref_mut())?;
    }
    // The ridge term and its gradient close the objective.
    total_loss += l2 * p.squared_norm();
    if l2 != 0.0 {
        let theta = p.flatten();
        for (g, t) in grads.values_mut().zip(theta) {
            *g += 2.0 * l2 * t;
        }
    }
    Ok((total_loss, grads))
}

fn item_backward(
    p: &ModelParams,
    item: &TrainItem<'_>,
    grads: &mut ModelParams,
    dropout_rng: Option<&mut ChaCha20Rng>,
) -> Result<f64, NnError> {
    let topo = Topology::build(item.net, item.x, p.config.input_dim)?;
    let cache = run_iterations(&topo, p, dropout_rng);
    let final_h = cache.final_h(&topo).to_vec();
    let heads = apply_heads(&topo, p, &final_h)?;

    // Readout index per node id, to connect targets to head outputs.
    let readout_of: BTreeMap<crate::graph::NodeId, usize> =
        topo.readouts.iter().enumerate().map(|(i, (v, _, _))| (*v, i)).collect();

    // Data loss and the gradient at each readout's logits.
    let mut dlogits: Vec<Option<Vec<f64>>> = vec![None; topo.readouts.len()];
    let mut loss = 0.0;
    match item.targets {
        Targets::Labels(labels) => {
            if labels.is_empty() {
                return Ok(0.0);
            }
            let scale = 1.0 / labels.len() as f64;
            for (&v, &label) in labels {
                let idx = *readout_of.get(&v).ok_or(NnError::MissingOutput(v))?;
                let z = &heads.logits[idx];
                if label >= z.len() {
                    return Err(NnError::LabelOutOfRange { node: v, got: label, classes: z.len() });
                }
                loss += scale * (log_sum_exp(z) - z[label]);
                let mut d = softmax(z);
                d[label] -= 1.0;
                d.iter_mut().for_each(|g| *g *= scale);
                dlogits[idx] = Some(d);
            }
        }
        Targets::Values(values) => {
            if values.is_empty() {
                return Ok(0.0);
            }
            debug_assert!(matches!(p.config.head, HeadKind::Regression));
            let scale = 1.0 / values.len() as f64;
            for (&v, &y) in values {
                let idx = *readout_of.get(&v).ok_or(NnError::MissingOutput(v))?;
                let out = heads.logits[idx][0];
                loss += scale * (out - y) * (out - y);
                dlogits[idx] = Some(vec![2.0 * scale * (out - y)]);
            }
        }
    }

    // Heads backward: accumulate head gradients and the gradient at the
    // final hidden states.
    let mut dfinal: Vec<Vec<f64>> = final_h.iter().map(|h| vec![0.0; h.len()]).collect();
    for (idx, d) in dlogits.iter().enumerate() {
        let Some(d) = d else { continue };
        let (_, ty, readout) = &topo.readouts[idx];
        let head = p.head(*ty)?;
        let slot = grads
            .heads
            .binary_search_by_key(ty, |(t, _)| *t)
            .expect("gradient container mirrors the parameters");
        let ghead = &mut grads.heads[slot].1;
        ghead.weight.add_outer(d, &heads.pooled[idx]);
        axpy(&mut ghead.bias, 1.0, d);
        let dpooled = head.weight.matvec_t(d);
        match readout {
            Readout::Node(i) => axpy(&mut dfinal[*i], 1.0, &dpooled),
            Readout::MeanOf(ids) => {
                let w = 1.0 / ids.len() as f64;
                for &i in ids {
                    axpy(&mut dfinal[i], w, &dpooled);
                }
            }
        }
    }

    // Iterations backward, newest first.
    let mut dh = dfinal;
    for t in (0..p.iters.len()).rev() {
        let it = &cache.iters[t];
        let h_prev: &[Vec<f64>] =
            if t == 0 { &topo.init } else { &cache.iters[t - 1].post };
        let scales = p.edge_scalars.as_ref().map(|v| &v[t]);
        let mut dprev: Vec<Vec<f64>> = h_prev.iter().map(|h| vec![0.0; h.len()]).collect();
        for u in 0..topo.n {
            // Through the dropout mask and the rectifier.
            let mut delta = dh[u].clone();
            if let Some(mask) = &it.mask {
                for (d, &m) in delta.iter_mut().zip(&mask[u]) {
                    *d *= m;
                }
            }
            for (d, &z) in delta.iter_mut().zip(&it.pre[u]) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
            if delta.iter().all(|&d| d == 0.0) {
                continue;
            }
            match (&p.iters[t], &mut grads.iters[t]) {
                (
                    IterParams::GcnMean { weight, .. },
                    IterParams::GcnMean { weight: gw, bias: gb },
                ) => {
                    gw.add_outer(&delta, &it.agg[u]);
                    axpy(gb, 1.0, &delta);
                    let dm = weight.matvec_t(&delta);
                    let denom = (1 + topo.neighbors[u].len()) as f64;
                    axpy(&mut dprev[u], 1.0 / denom, &dm);
                    for &(w, kind) in &topo.neighbors[u] {
                        let s = super::forward::link_scale(scales, kind);
                        axpy(&mut dprev[w], s / denom, &dm);
                        if let Some(gs) = grads.edge_scalars.as_mut() {
                            *super::forward::link_scale_mut(&mut gs[t], kind) +=
                                dot(&dm, &h_prev[w]) / denom;
                        }
                    }
                }
                (
                    IterParams::ShallowRelu { w_self, w_nbr, .. },
                    IterParams::ShallowRelu { w_self: gs_, w_nbr: gn, bias: gb },
                ) => {
                    gs_.add_outer(&delta, &h_prev[u]);
                    gn.add_outer(&delta, &it.agg[u]);
                    axpy(gb, 1.0, &delta);
                    axpy(&mut dprev[u], 1.0, &w_self.matvec_t(&delta));
                    let q = w_nbr.matvec_t(&delta);
                    for &(w, kind) in &topo.neighbors[u] {
                        let s = super::forward::link_scale(scales, kind);
                        axpy(&mut dprev[w], s, &q);
                        if let Some(gs) = grads.edge_scalars.as_mut() {
                            *super::forward::link_scale_mut(&mut gs[t], kind) +=
                                dot(&q, &h_prev[w]);
                        }
                    }
                }
                _ => unreachable!("gradient container mirrors the parameters"),
            }
        }
        dh = dprev;
    }
    Ok(loss)
}
