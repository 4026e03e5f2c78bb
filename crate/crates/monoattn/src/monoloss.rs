//! Mean attended position, the pairwise monotonicity hinge loss, and the
//! L_MONO / %mono reporting statistics.
//!
//! Two routes compute the same quantities: pure functions over weight
//! snapshots (for reporting) and graph nodes over live attention (for
//! training). Both are written against the same scalar expressions, in the
//! same accumulation order, so loss node values and report values agree
//! bit for bit.

use crate::attention::AttentionWeights;
use crate::error::{Error, Result};
use crate::ndgrad::{Array, Graph, NodeId};
use serde::{Deserialize, Serialize};
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// Which attention mechanisms receive the monotonicity loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMask {
    All,
    None,
    /// Explicit (layer, head) pairs.
    Subset(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonoConfig {
    /// Loss weight applied by the trainer.
    pub lambda: f64,
    /// Margin fraction: each step must advance by at least delta * |X| / |Y|.
    pub delta: f64,
    pub direction: Direction,
    pub head_mask: HeadMask,
    /// Score only source positions right of the separator token.
    pub separator_masking: bool,
}

impl Default for MonoConfig {
    fn default() -> Self {
        MonoConfig {
            lambda: 0.1,
            delta: 0.0,
            direction: Direction::Increasing,
            head_mask: HeadMask::All,
            separator_masking: false,
        }
    }
}

impl MonoConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "loss weight must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if !self.delta.is_finite() || !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!(
                "margin delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        match &self.head_mask {
            HeadMask::None if self.lambda > 0.0 => Err(Error::Config(
                "head mask 'none' contradicts a positive loss weight; \
                 set the weight to 0 or pick heads"
                    .to_string(),
            )),
            HeadMask::Subset(pairs) if pairs.is_empty() => Err(Error::Config(
                "empty head subset; use 'none' to disable scoring".to_string(),
            )),
            _ => Ok(()),
        }
    }
}

/// Per-sequence scoring metadata: true source length, scored target steps
/// (including the end-of-sequence step), and the separator's 0-based source
/// position if the sequence has one.
#[derive(Debug, Clone, Copy)]
pub struct SeqScope {
    pub src_len: usize,
    pub tgt_len: usize,
    pub sep: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadReport {
    pub layer: usize,
    pub head: usize,
    pub l_mono: f64,
    pub pct_mono: f64,
    pub pairs: usize,
    /// Whether this mechanism was inside the head mask (receives the loss).
    pub in_loss: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonoReport {
    /// Mean hinge loss over scored mechanisms, normalized by scored target
    /// tokens (the cross-entropy convention).
    pub l_mono: f64,
    /// Fraction of scored consecutive pairs whose hinge term is zero.
    pub pct_mono: f64,
    pub pair_count: usize,
    pub per_head: Vec<HeadReport>,
}

fn margin(delta: f64, x_len: usize, y_len: usize) -> f64 {
    delta * x_len as f64 / y_len as f64
}

fn recip_x(x_len: usize) -> f64 {
    1.0 / x_len as f64
}

/// Hinge terms for an increasing bias: max((a_k - a_{k+1} + margin)/|X|, 0)
/// for every consecutive pair. `y_len` is the number of scored steps and
/// normally equals `positions.len()`.
fn pairwise_terms(positions: &[f64], x_len: usize, y_len: usize, delta: f64) -> Vec<f64> {
    if positions.len() < 2 {
        return Vec::new();
    }
    let m = margin(delta, x_len, y_len);
    let r = recip_x(x_len);
    positions
        .windows(2)
        .map(|w| {
            let t = (w[0] - w[1] + m) * r;
            if t > 0.0 {
                t
            } else {
                0.0
            }
        })
        .collect()
}

/// Weighted mean of 1-based positions under an attention row.
pub fn mean_attended_position(row: &[f64]) -> Result<f64> {
    let mass: f64 = row.iter().sum();
    if mass == 0.0 {
        return Err(Error::InvalidArgument(
            "attention row is fully masked (weights sum to 0)".to_string(),
        ));
    }
    Ok(row
        .iter()
        .enumerate()
        .map(|(j, &w)| w * (j + 1) as f64)
        .sum())
}

fn reversed(positions: &[f64]) -> Vec<f64> {
    positions.iter().rev().cloned().collect()
}

/// Per-pair hinge terms in scoring order; a decreasing direction scores the
/// reversed sequence. [`mono_loss`] is their sum.
pub fn hinge_terms(
    positions: &[f64],
    x_len: usize,
    delta: f64,
    direction: Direction,
) -> Result<Vec<f64>> {
    if x_len == 0 {
        return Err(Error::InvalidArgument(
            "source length must be at least 1".to_string(),
        ));
    }
    Ok(match direction {
        Direction::Increasing => pairwise_terms(positions, x_len, positions.len(), delta),
        Direction::Decreasing => {
            pairwise_terms(&reversed(positions), x_len, positions.len(), delta)
        }
    })
}

/// Pairwise hinge loss over a sequence of mean attended positions. A
/// decreasing direction scores the reversed sequence, so
/// `mono_loss(p, Increasing) == mono_loss(reversed(p), Decreasing)` exactly.
pub fn mono_loss(positions: &[f64], x_len: usize, delta: f64, direction: Direction) -> Result<f64> {
    Ok(hinge_terms(positions, x_len, delta, direction)?.iter().sum())
}

/// Analytic gradient of [`mono_loss`] with respect to each position: each
/// strictly active term contributes +1/|X| to its left position and -1/|X|
/// to its right one.
pub fn mono_loss_grad(
    positions: &[f64],
    x_len: usize,
    delta: f64,
    direction: Direction,
) -> Result<Vec<f64>> {
    if x_len == 0 {
        return Err(Error::InvalidArgument(
            "source length must be at least 1".to_string(),
        ));
    }
    let n = positions.len();
    match direction {
        Direction::Increasing => {
            let mut grad = vec![0.0; n];
            let r = recip_x(x_len);
            for (k, t) in pairwise_terms(positions, x_len, n, delta).iter().enumerate() {
                if *t > 0.0 {
                    grad[k] += r;
                    grad[k + 1] -= r;
                }
            }
            Ok(grad)
        }
        Direction::Decreasing => {
            let mut grad =
                mono_loss_grad(&reversed(positions), x_len, delta, Direction::Increasing)?;
            grad.reverse();
            Ok(grad)
        }
    }
}

/// Fraction of consecutive pairs whose pairwise hinge term is zero, i.e.
/// whose position advances by at least the margin. Equality counts. One or
/// zero positions give 1.0. Callers scoring a decreasing bias pass the
/// reversed positions.
pub fn percent_mono(positions: &[f64], x_len: usize, y_len: usize, delta: f64) -> f64 {
    let terms = pairwise_terms(positions, x_len, y_len, delta);
    if terms.is_empty() {
        return 1.0;
    }
    terms.iter().filter(|&&t| t == 0.0).count() as f64 / terms.len() as f64
}

/// The 0-based source column range scored for one sequence, plus its length.
/// With separator masking on, only columns strictly right of the separator
/// count, re-indexed from position 1.
pub fn separator_scope(
    src_len: usize,
    sep: Option<usize>,
    masking: bool,
) -> Result<(Range<usize>, usize)> {
    if src_len == 0 {
        return Err(Error::InvalidArgument(
            "source length must be at least 1".to_string(),
        ));
    }
    if !masking {
        return Ok((0..src_len, src_len));
    }
    let sep = sep.ok_or_else(|| {
        Error::InvalidArgument(
            "separator masking is on but the sequence has no separator".to_string(),
        )
    })?;
    if sep >= src_len {
        return Err(Error::InvalidArgument(format!(
            "separator position {} outside source of length {}",
            sep, src_len
        )));
    }
    if sep + 1 == src_len {
        return Err(Error::InvalidArgument(
            "separator at the last source position leaves nothing to score".to_string(),
        ));
    }
    Ok((sep + 1..src_len, src_len - sep - 1))
}

/// Mean attended positions for every scored target step of one mechanism,
/// renormalizing rows over the scored region when separator masking is on.
fn seq_positions(weights: &Array, scope: &SeqScope, masking: bool) -> Result<Vec<f64>> {
    let (range, _) = separator_scope(scope.src_len, scope.sep, masking)?;
    if weights.nrows() != scope.tgt_len {
        return Err(Error::ShapeMismatch {
            op: "mono-score",
            details: format!(
                "{} attention rows vs {} scored target steps",
                weights.nrows(),
                scope.tgt_len
            ),
        });
    }
    if weights.ncols() < scope.src_len {
        return Err(Error::ShapeMismatch {
            op: "mono-score",
            details: format!(
                "{} attention columns vs source length {}",
                weights.ncols(),
                scope.src_len
            ),
        });
    }
    let mut out = Vec::with_capacity(weights.nrows());
    for i in 0..weights.nrows() {
        let row = &weights.row(i)[range.clone()];
        if masking {
            let mass: f64 = row.iter().sum();
            if mass == 0.0 {
                return Err(Error::InvalidArgument(
                    "attention mass is zero over the scored source region".to_string(),
                ));
            }
            let raw: f64 = row
                .iter()
                .enumerate()
                .map(|(j, &w)| w * (j + 1) as f64)
                .sum();
            out.push(raw / mass);
        } else {
            out.push(mean_attended_position(row)?);
        }
    }
    Ok(out)
}

/// Mean attended position per target step, exactly as the loss sees it:
/// one value per attention row, restricted (and renormalized) to the
/// post-separator region when `separator_masking` is on.
pub fn abar_path(weights: &Array, scope: &SeqScope, separator_masking: bool) -> Result<Vec<f64>> {
    seq_positions(weights, scope, separator_masking)
}

/// Difference matrix whose product with the position column yields the
/// pre-margin hinge arguments, ordered to match the pure route exactly.
fn diff_matrix(y_len: usize, direction: Direction) -> Array {
    let mut d = Array::zeros(vec![y_len - 1, y_len]);
    for k in 0..y_len - 1 {
        match direction {
            Direction::Increasing => {
                d.set(k, k, 1.0);
                d.set(k, k + 1, -1.0);
            }
            Direction::Decreasing => {
                // Term k pairs the reversed sequence: r_k - r_{k+1} with
                // r = reverse(a), i.e. a[y-1-k] - a[y-2-k].
                d.set(k, y_len - 1 - k, 1.0);
                d.set(k, y_len - 2 - k, -1.0);
            }
        }
    }
    d
}

/// In-graph hinge sum for one (mechanism, sequence): the differentiable twin
/// of summing `pairwise_terms` over `seq_positions`.
fn seq_loss_node(
    g: &mut Graph,
    aw: &AttentionWeights,
    scope: &SeqScope,
    config: &MonoConfig,
) -> Result<Option<NodeId>> {
    let y = scope.tgt_len;
    if y < 2 {
        return Ok(None);
    }
    let (range, x_eff) = separator_scope(scope.src_len, scope.sep, config.separator_masking)?;
    let sub = g.slice_cols(aw.node, range.start, range.end)?;
    let pos_col: Vec<f64> = (1..=x_eff).map(|j| j as f64).collect();
    let pos = g.leaf(Array::new(vec![x_eff, 1], pos_col)?)?;
    let abar = if config.separator_masking {
        let ones = g.leaf(Array::filled(vec![x_eff, 1], 1.0))?;
        let raw = g.matmul(sub, pos)?;
        let mass = g.matmul(sub, ones)?;
        g.div(raw, mass)?
    } else {
        g.matmul(sub, pos)?
    };
    let d = g.leaf(diff_matrix(y, config.direction))?;
    let diffs = g.matmul(d, abar)?;
    let shifted = g.add_const(diffs, margin(config.delta, x_eff, y))?;
    let scaled = g.scale(shifted, recip_x(x_eff))?;
    let hinge = g.max_zero(scaled)?;
    Ok(Some(g.sum(hinge)?))
}

/// Mechanism identities shared by every sequence of the batch.
fn mechanisms(attn: &[Vec<AttentionWeights>]) -> Result<Vec<(usize, usize)>> {
    let first: Vec<(usize, usize)> = attn[0].iter().map(|aw| (aw.layer, aw.head)).collect();
    for (s, seq) in attn.iter().enumerate().skip(1) {
        let ids: Vec<(usize, usize)> = seq.iter().map(|aw| (aw.layer, aw.head)).collect();
        if ids != first {
            return Err(Error::InvalidArgument(format!(
                "sequence {} carries different attention mechanisms than sequence 0",
                s
            )));
        }
    }
    let mut dedup = first.clone();
    dedup.sort_unstable();
    dedup.dedup();
    if dedup.len() != first.len() {
        return Err(Error::InvalidArgument(
            "duplicate (layer, head) mechanism in batch".to_string(),
        ));
    }
    Ok(first)
}

/// Indices into the mechanism list selected by the mask.
fn resolve_mask(mask: &HeadMask, mechs: &[(usize, usize)]) -> Result<Vec<usize>> {
    match mask {
        HeadMask::All => Ok((0..mechs.len()).collect()),
        HeadMask::None => Ok(Vec::new()),
        HeadMask::Subset(pairs) => {
            let mut wanted = pairs.clone();
            wanted.sort_unstable();
            wanted.dedup();
            let mut out = Vec::with_capacity(wanted.len());
            for pair in wanted {
                match mechs.iter().position(|&m| m == pair) {
                    Some(i) => out.push(i),
                    None => {
                        return Err(Error::Config(format!(
                            "head mask names layer {} head {}, which does not exist",
                            pair.0, pair.1
                        )))
                    }
                }
            }
            out.sort_unstable();
            Ok(out)
        }
    }
}

struct BatchTerms {
    mechs: Vec<(usize, usize)>,
    /// seq_sums[mech][seq]: per-sequence hinge sums.
    seq_sums: Vec<Vec<f64>>,
    zeros: Vec<usize>,
    pairs: Vec<usize>,
    total_tokens: usize,
    scored: Vec<usize>,
}

fn batch_terms(
    attn: &[Vec<AttentionWeights>],
    scopes: &[SeqScope],
    config: &MonoConfig,
) -> Result<BatchTerms> {
    config.validate()?;
    if attn.is_empty() || attn.len() != scopes.len() {
        return Err(Error::InvalidArgument(format!(
            "batch carries {} attention entries for {} scopes",
            attn.len(),
            scopes.len()
        )));
    }
    let mechs = mechanisms(attn)?;
    let scored = resolve_mask(&config.head_mask, &mechs)?;
    let total_tokens: usize = scopes.iter().map(|s| s.tgt_len).sum();
    if total_tokens == 0 {
        return Err(Error::InvalidArgument(
            "batch has no scored target tokens".to_string(),
        ));
    }
    let mut seq_sums = vec![Vec::with_capacity(scopes.len()); mechs.len()];
    let mut zeros = vec![0usize; mechs.len()];
    let mut pairs = vec![0usize; mechs.len()];
    for (mi, _) in mechs.iter().enumerate() {
        for (s, scope) in scopes.iter().enumerate() {
            let positions =
                seq_positions(&attn[s][mi].weights, scope, config.separator_masking)?;
            let (_, x_eff) =
                separator_scope(scope.src_len, scope.sep, config.separator_masking)?;
            let effective = match config.direction {
                Direction::Increasing => positions,
                Direction::Decreasing => reversed(&positions),
            };
            let terms = pairwise_terms(&effective, x_eff, scope.tgt_len, config.delta);
            zeros[mi] += terms.iter().filter(|&&t| t == 0.0).count();
            pairs[mi] += terms.len();
            seq_sums[mi].push(terms.iter().sum());
        }
    }
    Ok(BatchTerms {
        mechs,
        seq_sums,
        zeros,
        pairs,
        total_tokens,
        scored,
    })
}

fn build_report(bt: &BatchTerms) -> MonoReport {
    // Headline statistics cover the masked-in mechanisms; an empty mask
    // falls back to all of them so reporting-only runs stay meaningful.
    let headline: Vec<usize> = if bt.scored.is_empty() {
        (0..bt.mechs.len()).collect()
    } else {
        bt.scored.clone()
    };
    let tokens_f = bt.total_tokens as f64;
    let mut grand = 0.0;
    let mut zero_total = 0usize;
    let mut pair_total = 0usize;
    for &mi in &headline {
        for &s in bt.seq_sums[mi].iter() {
            grand += s;
        }
        zero_total += bt.zeros[mi];
        pair_total += bt.pairs[mi];
    }
    let denom = (headline.len() * bt.total_tokens) as f64;
    let l_mono = grand * (1.0 / denom);
    let pct_mono = if pair_total == 0 {
        1.0
    } else {
        zero_total as f64 / pair_total as f64
    };
    let per_head = bt
        .mechs
        .iter()
        .enumerate()
        .map(|(mi, &(layer, head))| HeadReport {
            layer,
            head,
            l_mono: bt.seq_sums[mi].iter().sum::<f64>() / tokens_f,
            pct_mono: if bt.pairs[mi] == 0 {
                1.0
            } else {
                bt.zeros[mi] as f64 / bt.pairs[mi] as f64
            },
            pairs: bt.pairs[mi],
            in_loss: bt.scored.contains(&mi),
        })
        .collect();
    MonoReport {
        l_mono,
        pct_mono,
        pair_count: pair_total,
        per_head,
    }
}

/// Reporting-only scoring over attention snapshots. Scores every mechanism
/// for the per-head breakdown; headline numbers follow the head mask, or all
/// mechanisms when the mask selects none.
pub fn report_batch(
    attn: &[Vec<AttentionWeights>],
    scopes: &[SeqScope],
    config: &MonoConfig,
) -> Result<MonoReport> {
    Ok(build_report(&batch_terms(attn, scopes, config)?))
}

/// Builds the differentiable batch loss over the masked-in mechanisms and
/// the matching report. The loss is the mechanism-mean hinge sum divided by
/// the total scored target tokens; the trainer applies the lambda weight.
pub fn score_batch(
    g: &mut Graph,
    attn: &[Vec<AttentionWeights>],
    scopes: &[SeqScope],
    config: &MonoConfig,
) -> Result<(NodeId, MonoReport)> {
    let bt = batch_terms(attn, scopes, config)?;
    let report = build_report(&bt);
    let mut total: Option<NodeId> = None;
    for &mi in &bt.scored {
        for (s, scope) in scopes.iter().enumerate() {
            if let Some(node) = seq_loss_node(g, &attn[s][mi], scope, config)? {
                total = Some(match total {
                    None => node,
                    Some(t) => g.add(t, node)?,
                });
            }
        }
    }
    let loss = match total {
        None => g.scalar_leaf(0.0)?,
        Some(t) => {
            let denom = (bt.scored.len() * bt.total_tokens) as f64;
            g.scale(t, 1.0 / denom)?
        }
    };
    Ok((loss, report))
}
