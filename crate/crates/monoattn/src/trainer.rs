//! Training loop: Adam over the joint objective CE + lambda * L_mono, with
//! periodic dev evaluation, early stopping, and a CSV trace.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::metrics::{eval_metric, metric_maximizes, EvalPair};
use crate::model::{Batch, Decoded, DropPlans, Model, ModelConfig, ParamSet};
use crate::monoloss::{report_batch, score_batch, MonoConfig, MonoReport, SeqScope};
use crate::ndgrad::{Array, Graph};
use crate::{Error, Result};

/// Extra decoding steps allowed beyond the source length.
pub const DECODE_SLACK: usize = 10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
        }
    }
}

/// Learning-rate schedule applied on top of the peak rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrDecay {
    /// Flat peak rate for the whole run.
    Constant,
    /// Half-cosine from the peak rate toward zero across max_steps. Late
    /// steps then take tiny updates, which settles the attention geometry
    /// instead of leaving it dancing on the minibatch noise floor.
    Cosine,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mono: MonoConfig,
    pub model: ModelConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    pub checkpoint_interval: usize,
    pub patience: usize,
    pub optim: OptimConfig,
    pub lr_decay: LrDecay,
    /// Dev metric steering early stopping; exact-match accuracy by default.
    pub dev_metric: String,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            mono: MonoConfig::default(),
            model,
            batch_size: 16,
            max_steps: 2000,
            checkpoint_interval: 200,
            patience: 5,
            optim: OptimConfig::default(),
            lr_decay: LrDecay::Cosine,
            dev_metric: "acc".to_string(),
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mono.validate()?;
        self.model.validate()?;
        for (what, v) in [
            ("batch_size", self.batch_size),
            ("max_steps", self.max_steps),
            ("checkpoint_interval", self.checkpoint_interval),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{} must be at least 1", what)));
            }
        }
        if !self.optim.lr.is_finite() || self.optim.lr <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.optim.lr
            )));
        }
        for (what, v) in [("beta1", self.optim.beta1), ("beta2", self.optim.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!(
                    "{} must lie in [0, 1), got {}",
                    what, v
                )));
            }
        }
        if !(self.optim.eps > 0.0) {
            return Err(Error::Config(format!(
                "adam eps must be positive, got {}",
                self.optim.eps
            )));
        }
        metric_maximizes(&self.dev_metric)?;
        Ok(())
    }
}

/// Adam with bias correction; one state slot per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    config: OptimConfig,
    m: Vec<Array>,
    v: Vec<Array>,
    t: u32,
}

impl Adam {
    pub fn new(params: &ParamSet, config: OptimConfig) -> Adam {
        let zeros: Vec<Array> = (0..params.len())
            .map(|i| Array::zeros(params.value(i).shape().to_vec()))
            .collect();
        Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update at the given effective learning rate (the caller owns the
    /// schedule; pass `config.lr` for a flat rate).
    pub fn step(&mut self, params: &mut ParamSet, grads: &[&Array], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                op: "adam",
                details: format!("{} gradients for {} parameters", grads.len(), self.m.len()),
            });
        }
        self.t += 1;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..grads.len() {
            if !grads[i].all_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradient of {}", params.name(i)),
                });
            }
            if grads[i].shape() != params.value(i).shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    details: format!(
                        "gradient shape {:?} for parameter {} of shape {:?}",
                        grads[i].shape(),
                        params.name(i),
                        params.value(i).shape()
                    ),
                });
            }
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.value_mut(i).data_mut();
            for k in 0..g.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= lr * mh / (vh.sqrt() + self.config.eps);
            }
        }
        Ok(())
    }
}

/// Loss values observed at one training step.
#[derive(Debug, Clone)]
pub struct StepStats {
    pub step: usize,
    /// CE + lambda * L_mono (equals `ce` when lambda is zero).
    pub total: f64,
    pub ce: f64,
    /// Unweighted monotonicity loss over the masked-in mechanisms.
    pub mono: f64,
    /// lambda * mono, exactly as it entered the total.
    pub mono_term: f64,
    pub pct_mono: f64,
    pub report: MonoReport,
}

/// One checkpoint line of the training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub train_ce: f64,
    pub train_mono: f64,
    pub train_pctmono: f64,
    pub dev_metric: f64,
    pub dev_mono: f64,
    pub dev_pctmono: f64,
    /// Per-mechanism decoded L_mono, layer then head ascending.
    pub per_head: Vec<crate::monoloss::HeadReport>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub best: Model,
    pub best_step: usize,
    pub best_metric: f64,
    pub best_row: TraceRow,
    pub trace: Vec<TraceRow>,
    pub stopped_early: bool,
}

/// Dev-set evaluation of the current parameters on decoded outputs.
#[derive(Debug, Clone)]
pub struct DevStats {
    pub metric: f64,
    pub report: MonoReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Observation {
    Improved,
    /// Equal to the recorded best: the checkpoint is still worth keeping
    /// (latest of equals is the most-trained one), but patience burns down.
    Tied,
    Wait,
    Stop,
}

#[derive(Debug)]
struct EarlyStop {
    best: Option<f64>,
    bad: usize,
    patience: usize,
    maximize: bool,
}

impl EarlyStop {
    fn new(patience: usize, maximize: bool) -> EarlyStop {
        EarlyStop {
            best: None,
            bad: 0,
            patience,
            maximize,
        }
    }

    fn observe(&mut self, value: f64) -> Observation {
        let (improved, tied) = match self.best {
            None => (true, false),
            Some(b) if self.maximize => (value > b, value == b),
            Some(b) => (value < b, value == b),
        };
        if improved {
            self.best = Some(value);
            self.bad = 0;
            return Observation::Improved;
        }
        self.bad += 1;
        if self.bad >= self.patience {
            Observation::Stop
        } else if tied {
            Observation::Tied
        } else {
            Observation::Wait
        }
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    opt: Adam,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Trainer> {
        config.validate()?;
        let model = Model::init(config.model.clone())?;
        let opt = Adam::new(&model.params, config.optim.clone());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer {
            config,
            model,
            opt,
            rng,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Evaluates the joint loss on a batch without touching the parameters.
    pub fn loss_on(&self, batch: &Batch) -> Result<f64> {
        let mut g = Graph::new();
        let fp = self.model.forward_teacher_forced(&mut g, batch, None)?;
        let lambda = self.config.mono.lambda;
        if lambda > 0.0 {
            let (mono, _) = score_batch(&mut g, &fp.cross_attn, &batch.scopes(), &self.config.mono)?;
            let term = g.scale(mono, lambda)?;
            let total = g.add(fp.ce, term)?;
            g.value(total).scalar_value()
        } else {
            g.value(fp.ce).scalar_value()
        }
    }

    /// Effective learning rate for a 1-based step index.
    pub fn lr_at(&self, step: usize) -> f64 {
        let peak = self.config.optim.lr;
        match self.config.lr_decay {
            LrDecay::Constant => peak,
            LrDecay::Cosine => {
                let t = (step.saturating_sub(1)) as f64 / self.config.max_steps as f64;
                peak * 0.5 * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos())
            }
        }
    }

    /// One optimization step. The objective is CE + lambda * L_mono, both
    /// normalized per scored target token; at lambda zero the loss graph is
    /// plain CE and the monotonicity side is computed only for reporting.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepStats> {
        self.step += 1;
        let plans = if self.model.config.drophead > 0.0 {
            Some(DropPlans::sample(&self.model.config, &mut self.rng)?)
        } else {
            None
        };
        let scopes = batch.scopes();
        let result = (|| {
            let mut g = Graph::new();
            let fp = self.model.forward_teacher_forced(&mut g, batch, plans.as_ref())?;
            let lambda = self.config.mono.lambda;
            let (total, mono_term, report) = if lambda > 0.0 {
                let (mono, report) = score_batch(&mut g, &fp.cross_attn, &scopes, &self.config.mono)?;
                let term = g.scale(mono, lambda)?;
                let total = g.add(fp.ce, term)?;
                (total, g.value(term).scalar_value()?, report)
            } else {
                let report = report_batch(&fp.cross_attn, &scopes, &self.config.mono)?;
                (fp.ce, 0.0, report)
            };
            let grads = g.backward(total)?;
            let gs: Vec<&Array> = fp.param_ids.iter().map(|&id| grads.get(id)).collect();
            let lr = self.lr_at(self.step);
            self.opt.step(&mut self.model.params, &gs, lr)?;
            Ok(StepStats {
                step: self.step,
                total: g.value(total).scalar_value()?,
                ce: g.value(fp.ce).scalar_value()?,
                mono: report.l_mono,
                mono_term,
                pct_mono: report.pct_mono,
                report,
            })
        })();
        result.map_err(|e| match e {
            Error::NonFinite { context } => Error::NonFiniteLoss {
                diagnostic: format!(
                    "step {}: non-finite value in {}\nsrc ids: {:?}\nsrc lens: {:?}\ntgt ids: {:?}\ntgt lens: {:?}",
                    self.step, context, batch.src, batch.src_lens, batch.tgt, batch.tgt_lens
                ),
            },
            other => other,
        })
    }

    /// Greedy-decodes the dev set and scores the configured metric plus the
    /// monotonicity report on the decoded attention.
    pub fn evaluate(&self, dev: &Corpus) -> Result<DevStats> {
        let decoded = decode_corpus(&self.model, dev)?;
        let pairs = eval_pairs(dev, &decoded)?;
        let metric = eval_metric(&self.config.dev_metric, &pairs)?;
        let report = decoded_mono_report(&decoded, &self.config.mono)?;
        Ok(DevStats { metric, report })
    }

    /// Trains until `max_steps` or until the dev metric fails to improve for
    /// `patience` consecutive checkpoints, returning the best checkpoint
    /// seen. Among checkpoints with an equal metric the latest one wins: it
    /// has had the most training on everything the metric does not measure.
    pub fn fit(&mut self, train: &Corpus, dev: &Corpus) -> Result<FitResult> {
        if train.is_empty() || dev.is_empty() {
            return Err(Error::InvalidArgument(
                "fit needs nonempty train and dev sets".to_string(),
            ));
        }
        let n = train.len();
        let bs = self.config.batch_size.min(n);
        let interval = self.config.checkpoint_interval;
        let maximize = metric_maximizes(&self.config.dev_metric)?;
        let mut stopper = EarlyStop::new(self.config.patience, maximize);
        let mut order: Vec<usize> = (0..n).collect();
        let mut pos = n;
        let mut trace: Vec<TraceRow> = Vec::new();
        let mut best: Option<(f64, usize, Model)> = None;
        let mut stopped_early = false;
        while self.step < self.config.max_steps {
            if pos >= n {
                order.shuffle(&mut self.rng);
                pos = 0;
            }
            let end = (pos + bs).min(n);
            let batch = train.batch(&order[pos..end])?;
            pos = end;
            let stats = self.train_step(&batch)?;
            let step = self.step;
            if step % interval != 0 && step != self.config.max_steps {
                continue;
            }
            let dev_stats = self.evaluate(dev)?;
            trace.push(TraceRow {
                step,
                train_ce: stats.ce,
                train_mono: stats.mono,
                train_pctmono: stats.pct_mono,
                dev_metric: dev_stats.metric,
                dev_mono: dev_stats.report.l_mono,
                dev_pctmono: dev_stats.report.pct_mono,
                per_head: dev_stats.report.per_head.clone(),
            });
            match stopper.observe(dev_stats.metric) {
                Observation::Improved | Observation::Tied => {
                    best = Some((dev_stats.metric, step, self.model.clone()));
                }
                Observation::Wait => {}
                Observation::Stop => {
                    stopped_early = true;
                    break;
                }
            }
        }
        let (best_metric, best_step, model) =
            best.expect("the first checkpoint always improves");
        let best_row = trace
            .iter()
            .find(|r| r.step == best_step)
            .cloned()
            .expect("best step was traced");
        Ok(FitResult {
            best: model,
            best_step,
            best_metric,
            best_row,
            trace,
            stopped_early,
        })
    }
}

/// Greedy-decodes every pair of a corpus with the stock length slack. Uses
/// the same source encoding as training batches (trailing eos included).
pub fn decode_corpus(model: &Model, data: &Corpus) -> Result<Vec<Decoded>> {
    data.pairs
        .iter()
        .map(|p| {
            let src = crate::corpus::encode_src(&data.src_vocab, &p.src);
            let max_len = src.len() + DECODE_SLACK;
            model.greedy_decode(&src, p.sep_index(), max_len)
        })
        .collect()
}

/// Turns decoded id sequences back into evaluation pairs against the corpus
/// references.
pub fn eval_pairs(data: &Corpus, decoded: &[Decoded]) -> Result<Vec<EvalPair>> {
    if decoded.len() != data.len() {
        return Err(Error::ShapeMismatch {
            op: "eval_pairs",
            details: format!("{} decodes for {} pairs", decoded.len(), data.len()),
        });
    }
    data.pairs
        .iter()
        .zip(decoded)
        .map(|(p, d)| {
            let candidate = data.tgt_vocab.decode(&d.tokens)?;
            EvalPair::new(candidate, p.references())
        })
        .collect()
}

/// Monotonicity report over decoded attention.
pub fn decoded_mono_report(decoded: &[Decoded], config: &MonoConfig) -> Result<MonoReport> {
    let attn: Vec<Vec<crate::attention::AttentionWeights>> =
        decoded.iter().map(|d| d.cross_attn.clone()).collect();
    let scopes: Vec<SeqScope> = decoded.iter().map(|d| d.scope).collect();
    report_batch(&attn, &scopes, config)
}

/// Writes the trace as CSV with one per-mechanism column per scored head.
pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut out =
        String::from("step,train_ce,train_mono,train_pctmono,dev_metric,dev_mono,dev_pctmono");
    if let Some(first) = trace.first() {
        for hr in &first.per_head {
            out.push_str(&format!(",mono_l{}h{}", hr.layer, hr.head));
        }
    }
    out.push('\n');
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            r.step, r.train_ce, r.train_mono, r.train_pctmono, r.dev_metric, r.dev_mono,
            r.dev_pctmono
        ));
        for hr in &r.per_head {
            out.push_str(&format!(",{}", hr.l_mono));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub dev_metric: f64,
    pub dev_mono: f64,
    pub dev_pctmono: f64,
}

/// Trains one independent run per lambda (shared seed) and reports each
/// run's best checkpoint, sorted by lambda.
pub fn sweep_lambda(
    base: &TrainConfig,
    lambdas: &[f64],
    train: &Corpus,
    dev: &Corpus,
) -> Result<Vec<SweepRow>> {
    if lambdas.len() < 2 {
        return Err(Error::Usage(
            "a lambda sweep needs at least two values".to_string(),
        ));
    }
    for &l in lambdas {
        if !l.is_finite() || l < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda values must be finite and nonnegative, got {}",
                l
            )));
        }
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite lambdas"));
    let mut rows = Vec::with_capacity(sorted.len());
    for lambda in sorted {
        let mut config = base.clone();
        config.mono.lambda = lambda;
        let mut trainer = Trainer::new(config)?;
        let fit = trainer.fit(train, dev)?;
        rows.push(SweepRow {
            lambda,
            dev_metric: fit.best_metric,
            dev_mono: fit.best_row.dev_mono,
            dev_pctmono: fit.best_row.dev_pctmono,
        });
    }
    Ok(rows)
}
