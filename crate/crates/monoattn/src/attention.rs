//! Scaled dot-product attention, multihead wrapping, and whole-head dropout.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ndgrad::{Array, Graph, NodeId};

/// Energy added to masked source columns. Large enough that the softmax
/// weight underflows to exactly 0.0, small enough to stay finite in backward.
pub const MASK_ENERGY: f64 = -1e9;

/// One attention mechanism's normalized weights, kept both as a live graph
/// node (for loss construction) and as a value snapshot (for reporting and
/// dumps).
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub layer: usize,
    pub head: usize,
    pub node: NodeId,
    /// Snapshot of the weight matrix, one row per target step, one column
    /// per (possibly padded) source position.
    pub weights: Array,
    /// Valid source columns; masked columns carry weight 0 exactly.
    pub src_mask: Vec<bool>,
    /// Valid target rows.
    pub tgt_mask: Vec<bool>,
}

/// One sampled whole-head dropout decision, shared by a whole batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DropHeadPlan {
    pub rate: f64,
    pub keep: Vec<bool>,
    /// Inverted-dropout rescale for surviving heads: heads / kept.
    pub rescale: f64,
}

impl DropHeadPlan {
    pub fn keep_all(heads: usize) -> Self {
        DropHeadPlan {
            rate: 0.0,
            keep: vec![true; heads],
            rescale: 1.0,
        }
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// Drops each head independently with probability `p`, resampling until at
/// least one head survives. Survivors are rescaled by heads/kept.
pub fn sample_drophead<R: Rng>(heads: usize, p: f64, rng: &mut R) -> Result<DropHeadPlan> {
    if heads == 0 {
        return Err(Error::InvalidArgument(
            "drophead needs at least one head".to_string(),
        ));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "drophead rate must be in [0, 1), got {}",
            p
        )));
    }
    if p == 0.0 {
        return Ok(DropHeadPlan::keep_all(heads));
    }
    loop {
        let keep: Vec<bool> = (0..heads).map(|_| rng.random::<f64>() >= p).collect();
        let kept = keep.iter().filter(|&&k| k).count();
        if kept > 0 {
            return Ok(DropHeadPlan {
                rate: p,
                keep,
                rescale: heads as f64 / kept as f64,
            });
        }
    }
}

/// Soft attention: energies are scaled dot products (1/sqrt(d)), masked
/// columns get `MASK_ENERGY`, rows are softmax-normalized, and the context
/// is the weight-averaged value rows. With `causal` set, query i additionally
/// sees only key positions <= i.
pub fn attend(
    g: &mut Graph,
    queries: NodeId,
    keys: NodeId,
    values: NodeId,
    src_mask: &[bool],
    causal: bool,
    layer: usize,
    head: usize,
) -> Result<(NodeId, AttentionWeights)> {
    let d = g.value(queries).ncols();
    let x = g.value(keys).nrows();
    if g.value(keys).ncols() != d {
        return Err(Error::ShapeMismatch {
            op: "attend",
            details: format!(
                "query width {} vs key width {}",
                d,
                g.value(keys).ncols()
            ),
        });
    }
    if g.value(values).nrows() != x {
        return Err(Error::ShapeMismatch {
            op: "attend",
            details: format!(
                "{} key rows vs {} value rows",
                x,
                g.value(values).nrows()
            ),
        });
    }
    if src_mask.len() != x {
        return Err(Error::ShapeMismatch {
            op: "attend",
            details: format!("{} key rows vs {} mask entries", x, src_mask.len()),
        });
    }
    if src_mask.iter().all(|&m| !m) {
        return Err(Error::InvalidArgument(
            "attend: every source position is masked".to_string(),
        ));
    }
    let y = g.value(queries).nrows();
    if causal {
        if y != x {
            return Err(Error::ShapeMismatch {
                op: "attend",
                details: format!("causal attention needs square energies, got {} x {}", y, x),
            });
        }
        if !src_mask[0] {
            return Err(Error::InvalidArgument(
                "attend: first position masked, causal row 0 would see nothing".to_string(),
            ));
        }
    }
    let kt = g.transpose(keys)?;
    let raw = g.matmul(queries, kt)?;
    let mut energies = g.scale(raw, 1.0 / (d as f64).sqrt())?;
    if causal {
        let mut bias = Array::zeros(vec![y, x]);
        for i in 0..y {
            for j in 0..x {
                if j > i || !src_mask[j] {
                    bias.set(i, j, MASK_ENERGY);
                }
            }
        }
        let bias = g.leaf(bias)?;
        energies = g.add(energies, bias)?;
    } else if src_mask.iter().any(|&m| !m) {
        let bias: Vec<f64> = src_mask
            .iter()
            .map(|&m| if m { 0.0 } else { MASK_ENERGY })
            .collect();
        let bias = g.leaf(Array::new(vec![1, x], bias)?)?;
        energies = g.add_row(energies, bias)?;
    }
    let alpha = g.row_softmax(energies)?;
    let ctx = g.matmul(alpha, values)?;
    let rows = g.value(alpha).nrows();
    Ok((
        ctx,
        AttentionWeights {
            layer,
            head,
            node: alpha,
            weights: g.value(alpha).clone(),
            src_mask: src_mask.to_vec(),
            tgt_mask: vec![true; rows],
        },
    ))
}

/// Per-head projection parameters for one multihead attention site, as graph
/// leaves owned by the caller.
#[derive(Debug, Clone)]
pub struct MultiheadParams {
    pub wq: Vec<NodeId>,
    pub wk: Vec<NodeId>,
    pub wv: Vec<NodeId>,
    pub wo: NodeId,
}

/// Runs every head of one attention site and concatenates the head contexts
/// through the output projection. A drop plan zeroes dropped heads and
/// rescales survivors; `None` and a rate-0 plan produce identical bits.
pub fn multihead_attend(
    g: &mut Graph,
    queries: NodeId,
    keys_values: NodeId,
    params: &MultiheadParams,
    heads: usize,
    src_mask: &[bool],
    causal: bool,
    layer: usize,
    drop_plan: Option<&DropHeadPlan>,
) -> Result<(NodeId, Vec<AttentionWeights>)> {
    let d = g.value(queries).ncols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::InvalidArgument(format!(
            "model width {} is not divisible into {} heads",
            d, heads
        )));
    }
    if params.wq.len() != heads || params.wk.len() != heads || params.wv.len() != heads {
        return Err(Error::InvalidArgument(format!(
            "expected {} per-head projections, got {}/{}/{}",
            heads,
            params.wq.len(),
            params.wk.len(),
            params.wv.len()
        )));
    }
    if let Some(plan) = drop_plan {
        if plan.keep.len() != heads {
            return Err(Error::InvalidArgument(format!(
                "drop plan covers {} heads, site has {}",
                plan.keep.len(),
                heads
            )));
        }
        if plan.kept_count() == 0 {
            return Err(Error::InvalidArgument(
                "drop plan keeps no heads".to_string(),
            ));
        }
    }
    let mut contexts = Vec::with_capacity(heads);
    let mut all_weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = g.matmul(queries, params.wq[h])?;
        let k = g.matmul(keys_values, params.wk[h])?;
        let v = g.matmul(keys_values, params.wv[h])?;
        let (mut ctx, aw) = attend(g, q, k, v, src_mask, causal, layer, h)?;
        if let Some(plan) = drop_plan {
            if !plan.keep[h] {
                ctx = g.scale(ctx, 0.0)?;
            } else if plan.rescale != 1.0 {
                ctx = g.scale(ctx, plan.rescale)?;
            }
        }
        contexts.push(ctx);
        all_weights.push(aw);
    }
    let cat = g.concat_cols(&contexts)?;
    let out = g.matmul(cat, params.wo)?;
    Ok((out, all_weights))
}
