//! Minimal attentional encoder-decoder built on the autodiff graph.
//!
//! One post-norm transformer stack per side, sized for desk-scale runs.
//! Every example of a batch is unrolled into the same graph over shared
//! parameter leaves, so a single backward pass covers the whole batch.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    multihead_attend, sample_drophead, AttentionWeights, DropHeadPlan, MultiheadParams,
};
use crate::corpus::{BOS_ID, EOS_ID};
use crate::monoloss::SeqScope;
use crate::ndgrad::{Array, Graph, NodeId};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;
const EMBED_INIT: f64 = 0.05;
const CHECKPOINT_VERSION: u32 = 1;

/// How source positions are numbered before the sinusoids are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosMode {
    /// 0, 1, 2, ... from the left edge.
    Vanilla,
    /// Signed offsets i - sep around a per-example separator token.
    SepCentered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ff_dim: usize,
    pub drophead: f64,
    pub pos_mode: PosMode,
    pub tie_softmax: bool,
    pub seed: u64,
}

impl ModelConfig {
    /// Stock tiny model: 64-dim, 4 heads, one layer per side, 128-wide FF.
    pub fn new(src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            src_vocab,
            tgt_vocab,
            dim: 64,
            heads: 4,
            enc_layers: 1,
            dec_layers: 1,
            ff_dim: 128,
            drophead: 0.0,
            pos_mode: PosMode::Vanilla,
            tie_softmax: true,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
            ("dim", self.dim),
            ("heads", self.heads),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("ff_dim", self.ff_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{} must be positive", what)));
            }
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model width {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.tgt_vocab <= EOS_ID {
            return Err(Error::Config(format!(
                "target vocab of {} has no room for the reserved bos/eos ids",
                self.tgt_vocab
            )));
        }
        if !self.drophead.is_finite() || !(0.0..1.0).contains(&self.drophead) {
            return Err(Error::Config(format!(
                "drophead rate must lie in [0, 1), got {}",
                self.drophead
            )));
        }
        Ok(())
    }
}

/// Position indices plus their sinusoidal embedding rows.
///
/// Vanilla numbering counts 0..len-1; separator-centered numbering uses the
/// signed offset i - sep, so the token after the separator sits at +1 and the
/// one before it at -1. The sinusoids are evaluated on the signed value.
pub fn positional_encoding(
    len: usize,
    sep: Option<usize>,
    mode: PosMode,
    dim: usize,
) -> Result<(Vec<i64>, Array)> {
    if len == 0 || dim == 0 {
        return Err(Error::InvalidArgument(
            "positional encoding needs a nonzero length and width".to_string(),
        ));
    }
    let positions: Vec<i64> = match mode {
        PosMode::Vanilla => (0..len as i64).collect(),
        PosMode::SepCentered => {
            let s = sep.ok_or_else(|| {
                Error::InvalidArgument(
                    "separator-centered positions need a separator index".to_string(),
                )
            })?;
            if s >= len {
                return Err(Error::InvalidArgument(format!(
                    "separator index {} outside sequence of length {}",
                    s, len
                )));
            }
            (0..len as i64).map(|i| i - s as i64).collect()
        }
    };
    let mut pe = Array::zeros(vec![len, dim]);
    for (i, &p) in positions.iter().enumerate() {
        let row = pe.row_mut(i);
        for (j, slot) in row.iter_mut().enumerate() {
            let freq = 10000f64.powf(-(((j / 2) * 2) as f64) / dim as f64);
            let angle = p as f64 * freq;
            *slot = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Ok((positions, pe))
}

/// One padded batch of id sequences. Target rows hold the raw tokens; the
/// decoder adds bos/eos itself during teacher forcing.
#[derive(Debug, Clone)]
pub struct Batch {
    pub src: Vec<Vec<usize>>,
    pub src_lens: Vec<usize>,
    pub tgt: Vec<Vec<usize>>,
    pub tgt_lens: Vec<usize>,
    pub sep: Vec<Option<usize>>,
    pub pad_id: usize,
}

impl Batch {
    pub fn new(
        src: Vec<Vec<usize>>,
        tgt: Vec<Vec<usize>>,
        sep: Vec<Option<usize>>,
        pad_id: usize,
    ) -> Result<Batch> {
        if src.is_empty() {
            return Err(Error::InvalidArgument("empty batch".to_string()));
        }
        if tgt.len() != src.len() || sep.len() != src.len() {
            return Err(Error::ShapeMismatch {
                op: "batch",
                details: format!(
                    "{} source rows, {} target rows, {} separator entries",
                    src.len(),
                    tgt.len(),
                    sep.len()
                ),
            });
        }
        let src_lens: Vec<usize> = src.iter().map(Vec::len).collect();
        let tgt_lens: Vec<usize> = tgt.iter().map(Vec::len).collect();
        for (i, &l) in src_lens.iter().enumerate() {
            if l == 0 {
                return Err(Error::InvalidArgument(format!(
                    "source row {} is empty",
                    i
                )));
            }
            if let Some(s) = sep[i] {
                if s >= l {
                    return Err(Error::InvalidArgument(format!(
                        "separator index {} outside source row {} of length {}",
                        s, i, l
                    )));
                }
            }
        }
        let src_w = src_lens.iter().copied().max().unwrap_or(0);
        let tgt_w = tgt_lens.iter().copied().max().unwrap_or(0);
        let pad_rows = |rows: Vec<Vec<usize>>, w: usize| {
            rows.into_iter()
                .map(|mut r| {
                    r.resize(w, pad_id);
                    r
                })
                .collect()
        };
        Ok(Batch {
            src: pad_rows(src, src_w),
            src_lens,
            tgt: pad_rows(tgt, tgt_w),
            tgt_lens,
            sep,
            pad_id,
        })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Scoring extents per example: the target side counts the eos step.
    pub fn scopes(&self) -> Vec<SeqScope> {
        (0..self.len())
            .map(|i| SeqScope {
                src_len: self.src_lens[i],
                tgt_len: self.tgt_lens[i] + 1,
                sep: self.sep[i],
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Xavier,
    Embedding,
    Ones,
    Zeros,
}

fn attn_layout(out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, d: usize, heads: usize) {
    let dh = d / heads;
    for h in 0..heads {
        for w in ["wq", "wk", "wv"] {
            out.push((format!("{}.h{}.{}", prefix, h, w), vec![d, dh], Init::Xavier));
        }
    }
    out.push((format!("{}.wo", prefix), vec![d, d], Init::Xavier));
}

fn ln_layout(out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, d: usize) {
    out.push((format!("{}.gamma", prefix), vec![1, d], Init::Ones));
    out.push((format!("{}.beta", prefix), vec![1, d], Init::Zeros));
}

fn ff_layout(out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, d: usize, ff: usize) {
    out.push((format!("{}.w1", prefix), vec![d, ff], Init::Xavier));
    out.push((format!("{}.b1", prefix), vec![1, ff], Init::Zeros));
    out.push((format!("{}.w2", prefix), vec![ff, d], Init::Xavier));
    out.push((format!("{}.b2", prefix), vec![1, d], Init::Zeros));
}

fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.dim;
    let mut out = vec![
        (
            "src_embed".to_string(),
            vec![config.src_vocab, d],
            Init::Embedding,
        ),
        (
            "tgt_embed".to_string(),
            vec![config.tgt_vocab, d],
            Init::Embedding,
        ),
    ];
    for l in 0..config.enc_layers {
        attn_layout(&mut out, &format!("enc.l{}.self", l), d, config.heads);
        ln_layout(&mut out, &format!("enc.l{}.ln1", l), d);
        ff_layout(&mut out, &format!("enc.l{}.ff", l), d, config.ff_dim);
        ln_layout(&mut out, &format!("enc.l{}.ln2", l), d);
    }
    for l in 0..config.dec_layers {
        attn_layout(&mut out, &format!("dec.l{}.self", l), d, config.heads);
        ln_layout(&mut out, &format!("dec.l{}.ln1", l), d);
        attn_layout(&mut out, &format!("dec.l{}.cross", l), d, config.heads);
        ln_layout(&mut out, &format!("dec.l{}.ln2", l), d);
        ff_layout(&mut out, &format!("dec.l{}.ff", l), d, config.ff_dim);
        ln_layout(&mut out, &format!("dec.l{}.ln3", l), d);
    }
    if !config.tie_softmax {
        out.push((
            "out_proj".to_string(),
            vec![d, config.tgt_vocab],
            Init::Xavier,
        ));
    }
    out
}

/// Named parameter tensors in a fixed construction order.
#[derive(Debug, Clone)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array>,
}

impl ParamSet {
    fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> ParamSet {
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (name, shape, init) in layout(config) {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Xavier => {
                    let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-a..a)).collect()
                }
                Init::Embedding => (0..n)
                    .map(|_| rng.random_range(-EMBED_INIT..EMBED_INIT))
                    .collect(),
                Init::Ones => vec![1.0; n],
                Init::Zeros => vec![0.0; n],
            };
            names.push(name);
            values.push(Array::new(shape, data).expect("layout shapes are consistent"));
        }
        ParamSet { names, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn value(&self, i: usize) -> &Array {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Array {
        &mut self.values[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter())
    }
}

/// Per-site drop plans for one training step, shared across the batch.
#[derive(Debug, Clone)]
pub struct DropPlans {
    pub enc_self: Vec<DropHeadPlan>,
    pub dec_self: Vec<DropHeadPlan>,
    pub dec_cross: Vec<DropHeadPlan>,
}

impl DropPlans {
    pub fn sample<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<DropPlans> {
        let site = |n: usize, rng: &mut R| -> Result<Vec<DropHeadPlan>> {
            (0..n)
                .map(|_| sample_drophead(config.heads, config.drophead, rng))
                .collect()
        };
        Ok(DropPlans {
            enc_self: site(config.enc_layers, rng)?,
            dec_self: site(config.dec_layers, rng)?,
            dec_cross: site(config.dec_layers, rng)?,
        })
    }
}

/// Everything the graph knows after a teacher-forced pass.
pub struct ForwardPass {
    /// Per-example logit matrices, one row per predicted token (incl. eos).
    pub logits: Vec<NodeId>,
    /// Per-example cross-attention weights, decoder layers in order, heads
    /// ascending within a layer. These are the mechanisms the monotonicity
    /// loss scores.
    pub cross_attn: Vec<Vec<AttentionWeights>>,
    /// Token-mean cross entropy over the whole batch.
    pub ce: NodeId,
    /// Parameter leaves in `ParamSet` order, for gradient reads.
    pub param_ids: Vec<NodeId>,
    /// Number of target tokens scored by the cross entropy.
    pub scored_tokens: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

/// Greedy decode of one source sequence.
pub struct Decoded {
    pub tokens: Vec<usize>,
    /// Cross-attention from the final decoding step, covering every row.
    pub cross_attn: Vec<AttentionWeights>,
    pub scope: SeqScope,
    pub ended_with_eos: bool,
}

struct Bound<'a> {
    params: &'a ParamSet,
    ids: Vec<NodeId>,
}

impl<'a> Bound<'a> {
    fn id(&self, name: &str) -> NodeId {
        let i = self
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {}", name));
        self.ids[i]
    }

    fn attn(&self, prefix: &str, heads: usize) -> MultiheadParams {
        let per = |w: &str| {
            (0..heads)
                .map(|h| self.id(&format!("{}.h{}.{}", prefix, h, w)))
                .collect()
        };
        MultiheadParams {
            wq: per("wq"),
            wk: per("wk"),
            wv: per("wv"),
            wo: self.id(&format!("{}.wo", prefix)),
        }
    }
}

impl Model {
    pub fn init(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ParamSet::init(&config, &mut rng);
        Ok(Model { config, params })
    }

    fn bind<'a>(&'a self, g: &mut Graph) -> Result<Bound<'a>> {
        let ids = self
            .params
            .values
            .iter()
            .map(|v| g.leaf(v.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound {
            params: &self.params,
            ids,
        })
    }

    fn residual_norm(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: NodeId,
        delta: NodeId,
        prefix: &str,
    ) -> Result<NodeId> {
        let s = g.add(x, delta)?;
        g.layer_norm(
            s,
            bound.id(&format!("{}.gamma", prefix)),
            bound.id(&format!("{}.beta", prefix)),
            LN_EPS,
        )
    }

    fn feed_forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: NodeId,
        prefix: &str,
    ) -> Result<NodeId> {
        let h = g.matmul(x, bound.id(&format!("{}.w1", prefix)))?;
        let h = g.add_row(h, bound.id(&format!("{}.b1", prefix)))?;
        let h = g.relu(h)?;
        let o = g.matmul(h, bound.id(&format!("{}.w2", prefix)))?;
        g.add_row(o, bound.id(&format!("{}.b2", prefix)))
    }

    fn embed(
        &self,
        g: &mut Graph,
        table: NodeId,
        ids: &[usize],
        sep: Option<usize>,
        mode: PosMode,
    ) -> Result<NodeId> {
        let e = g.gather(table, ids)?;
        let scaled = g.scale(e, (self.config.dim as f64).sqrt())?;
        let (_, pe) = positional_encoding(ids.len(), sep, mode, self.config.dim)?;
        let pe = g.leaf(pe)?;
        g.add(scaled, pe)
    }

    fn encode(
        &self,
        g: &mut Graph,
        bound: &Bound,
        ids: &[usize],
        src_len: usize,
        sep: Option<usize>,
        plans: Option<&DropPlans>,
    ) -> Result<(NodeId, Vec<bool>)> {
        let mask: Vec<bool> = (0..ids.len()).map(|j| j < src_len).collect();
        let mut x = self.embed(g, bound.id("src_embed"), ids, sep, self.config.pos_mode)?;
        for l in 0..self.config.enc_layers {
            let p = bound.attn(&format!("enc.l{}.self", l), self.config.heads);
            let plan = plans.map(|pl| &pl.enc_self[l]);
            let (a, _) =
                multihead_attend(g, x, x, &p, self.config.heads, &mask, false, l, plan)?;
            x = self.residual_norm(g, bound, x, a, &format!("enc.l{}.ln1", l))?;
            let f = self.feed_forward(g, bound, x, &format!("enc.l{}.ff", l))?;
            x = self.residual_norm(g, bound, x, f, &format!("enc.l{}.ln2", l))?;
        }
        Ok((x, mask))
    }

    fn decoder_stack(
        &self,
        g: &mut Graph,
        bound: &Bound,
        dec_ids: &[usize],
        memory: NodeId,
        src_mask: &[bool],
        plans: Option<&DropPlans>,
        cross_out: &mut Vec<AttentionWeights>,
    ) -> Result<NodeId> {
        let yl = dec_ids.len();
        let self_mask = vec![true; yl];
        let mut x = self.embed(g, bound.id("tgt_embed"), dec_ids, None, PosMode::Vanilla)?;
        for l in 0..self.config.dec_layers {
            let p = bound.attn(&format!("dec.l{}.self", l), self.config.heads);
            let plan = plans.map(|pl| &pl.dec_self[l]);
            let (a, _) =
                multihead_attend(g, x, x, &p, self.config.heads, &self_mask, true, l, plan)?;
            x = self.residual_norm(g, bound, x, a, &format!("dec.l{}.ln1", l))?;

            let p = bound.attn(&format!("dec.l{}.cross", l), self.config.heads);
            let plan = plans.map(|pl| &pl.dec_cross[l]);
            let (a, aws) =
                multihead_attend(g, x, memory, &p, self.config.heads, src_mask, false, l, plan)?;
            cross_out.extend(aws);
            x = self.residual_norm(g, bound, x, a, &format!("dec.l{}.ln2", l))?;

            let f = self.feed_forward(g, bound, x, &format!("dec.l{}.ff", l))?;
            x = self.residual_norm(g, bound, x, f, &format!("dec.l{}.ln3", l))?;
        }
        if self.config.tie_softmax {
            let et = g.transpose(bound.id("tgt_embed"))?;
            g.matmul(x, et)
        } else {
            g.matmul(x, bound.id("out_proj"))
        }
    }

    fn check_plans(&self, plans: Option<&DropPlans>) -> Result<()> {
        if let Some(p) = plans {
            if p.enc_self.len() != self.config.enc_layers
                || p.dec_self.len() != self.config.dec_layers
                || p.dec_cross.len() != self.config.dec_layers
            {
                return Err(Error::InvalidArgument(format!(
                    "drop plans cover {}/{}/{} layers, model has {} encoder and {} decoder layers",
                    p.enc_self.len(),
                    p.dec_self.len(),
                    p.dec_cross.len(),
                    self.config.enc_layers,
                    self.config.dec_layers
                )));
            }
        }
        Ok(())
    }

    /// Teacher-forced pass over a batch, binding fresh parameter leaves.
    pub fn forward_teacher_forced(
        &self,
        g: &mut Graph,
        batch: &Batch,
        plans: Option<&DropPlans>,
    ) -> Result<ForwardPass> {
        let bound = self.bind(g)?;
        let ids = bound.ids.clone();
        self.forward_bound(g, ids, batch, plans)
    }

    /// Teacher-forced pass over pre-bound parameter leaves (ParamSet order).
    pub fn forward_with_params(
        &self,
        g: &mut Graph,
        param_ids: &[NodeId],
        batch: &Batch,
        plans: Option<&DropPlans>,
    ) -> Result<ForwardPass> {
        if param_ids.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                details: format!(
                    "{} parameter leaves for {} parameters",
                    param_ids.len(),
                    self.params.len()
                ),
            });
        }
        self.forward_bound(g, param_ids.to_vec(), batch, plans)
    }

    fn forward_bound(
        &self,
        g: &mut Graph,
        param_ids: Vec<NodeId>,
        batch: &Batch,
        plans: Option<&DropPlans>,
    ) -> Result<ForwardPass> {
        self.config.validate()?;
        self.check_plans(plans)?;
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".to_string()));
        }
        let bound = Bound {
            params: &self.params,
            ids: param_ids,
        };
        let mut logits_all = Vec::with_capacity(batch.len());
        let mut cross_all = Vec::with_capacity(batch.len());
        let mut ce_total: Option<NodeId> = None;
        let mut scored_tokens = 0usize;
        for i in 0..batch.len() {
            let (memory, mask) = self.encode(
                g,
                &bound,
                &batch.src[i],
                batch.src_lens[i],
                batch.sep[i],
                plans,
            )?;
            let n = batch.tgt_lens[i];
            let mut dec_in = Vec::with_capacity(n + 1);
            dec_in.push(BOS_ID);
            dec_in.extend_from_slice(&batch.tgt[i][..n]);
            let mut targets = batch.tgt[i][..n].to_vec();
            targets.push(EOS_ID);
            let mut mech = Vec::new();
            let logits =
                self.decoder_stack(g, &bound, &dec_in, memory, &mask, plans, &mut mech)?;
            let ce_i = g.cross_entropy_logits(logits, &targets, &vec![true; n + 1])?;
            ce_total = Some(match ce_total {
                Some(acc) => g.add(acc, ce_i)?,
                None => ce_i,
            });
            scored_tokens += n + 1;
            logits_all.push(logits);
            cross_all.push(mech);
        }
        let ce_sum = ce_total.expect("batch is nonempty");
        let ce = g.scale(ce_sum, 1.0 / scored_tokens as f64)?;
        Ok(ForwardPass {
            logits: logits_all,
            cross_attn: cross_all,
            ce,
            param_ids: bound.ids,
            scored_tokens,
        })
    }

    /// Greedy decode: argmax at each step, ties to the lowest id, stopping at
    /// eos or after `max_len` emitted tokens.
    pub fn greedy_decode(
        &self,
        src: &[usize],
        sep: Option<usize>,
        max_len: usize,
    ) -> Result<Decoded> {
        self.config.validate()?;
        if src.is_empty() {
            return Err(Error::InvalidArgument("empty source".to_string()));
        }
        if max_len == 0 {
            return Err(Error::InvalidArgument(
                "max_len must be positive".to_string(),
            ));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g)?;
        let (memory, mask) = self.encode(&mut g, &bound, src, src.len(), sep, None)?;
        let mut tokens = Vec::new();
        let mut ended_with_eos = false;
        let cross_attn = loop {
            let mut dec_in = Vec::with_capacity(tokens.len() + 1);
            dec_in.push(BOS_ID);
            dec_in.extend_from_slice(&tokens);
            let mut mech = Vec::new();
            let logits =
                self.decoder_stack(&mut g, &bound, &dec_in, memory, &mask, None, &mut mech)?;
            let v = g.value(logits);
            let next = argmax_lowest(v.row(v.nrows() - 1));
            if next == EOS_ID {
                ended_with_eos = true;
                break mech;
            }
            tokens.push(next);
            if tokens.len() == max_len {
                break mech;
            }
        };
        let steps = tokens.len() + usize::from(ended_with_eos);
        let scope = SeqScope {
            src_len: src.len(),
            tgt_len: steps,
            sep,
        };
        Ok(Decoded {
            tokens,
            cross_attn,
            scope,
            ended_with_eos,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let params: BTreeMap<String, SavedParam> = self
            .params
            .iter()
            .map(|(name, value)| {
                (
                    name.to_string(),
                    SavedParam {
                        shape: value.shape().to_vec(),
                        data: value.data().to_vec(),
                    },
                )
            })
            .collect();
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params,
        };
        let mut text = serde_json::to_string(&file)?;
        text.push('\n');
        fs::write(path, text)
            .map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (this build reads {})",
                file.version, CHECKPOINT_VERSION
            )));
        }
        file.config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("bad stored config: {}", e)))?;
        let mut stored = file.params;
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (name, shape, _) in layout(&file.config) {
            let saved = stored.remove(&name).ok_or_else(|| {
                Error::Checkpoint(format!("missing parameter {}", name))
            })?;
            if saved.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    name, saved.shape, shape
                )));
            }
            let value = Array::new(saved.shape, saved.data)
                .map_err(|e| Error::Checkpoint(format!("parameter {}: {}", name, e)))?;
            names.push(name);
            values.push(value);
        }
        if let Some(extra) = stored.keys().next() {
            return Err(Error::Checkpoint(format!(
                "unexpected parameter {}",
                extra
            )));
        }
        Ok(Model {
            config: file.config,
            params: ParamSet { names, values },
        })
    }
}

pub(crate) fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: ModelConfig,
    params: BTreeMap<String, SavedParam>,
}

#[derive(Serialize, Deserialize)]
struct SavedParam {
    shape: Vec<usize>,
    data: Vec<f64>,
}
