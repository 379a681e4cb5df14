//! The assembled forecaster: embedding, decomposition, the trend, seasonal
//! and time-frequency branches, the projection head, losses and training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamState, Graph, Tensor, Var};
use crate::data::{WindowBatch, Windows};
use crate::decomposition::{decompose_var, validate_kernel, Embedding, DEFAULT_KERNEL};
use crate::error::{Error, Result};
use crate::params::{Bindings, Linear};
use crate::scalar::Scalar;
use crate::taylorkan::{build_seasonal_kan, build_trend_kan, top_k_frequencies, KanNetwork, SpectralPeaks};
use crate::tf_synergy::{PatchConfig, TfSynergy};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// MSE on the standardized scale.
    Long,
    /// sMAPE on the original scale.
    Short,
}

impl Task {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "long" => Ok(Task::Long),
            "short" => Ok(Task::Short),
            _ => Err(Error::Config(format!("task must be long or short, got {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Long => "long",
            Task::Short => "short",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub width: usize,
    pub kernel: usize,
    pub trend_degree: usize,
    pub top_k: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::etth1()
    }
}

impl ModelConfig {
    pub fn etth1() -> Self {
        Self {
            lookback: 96,
            horizon: 96,
            width: 32,
            kernel: DEFAULT_KERNEL,
            trend_degree: 3,
            top_k: 5,
            patch_len: 6,
            stride: 6,
            lambda: 0.01,
            learning_rate: 0.0005,
            batch_size: 64,
            epochs: 10,
            patience: 3,
        }
    }

    pub fn patch(&self) -> PatchConfig {
        PatchConfig::new(self.patch_len, self.stride)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("width", self.width),
            ("kernel", self.kernel),
            ("trend_degree", self.trend_degree),
            ("top_k", self.top_k),
            ("patch_len", self.patch_len),
            ("stride", self.stride),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.trend_degree > self.lookback {
            return Err(Error::Config("trend_degree exceeds lookback".into()));
        }
        if 2 * self.top_k > self.lookback {
            return Err(Error::Config("top_k exceeds lookback / 2".into()));
        }
        validate_kernel(self.kernel, self.lookback).map_err(|e| Error::Config(e.to_string()))?;
        self.patch().validate(self.lookback).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    pub pred: T,
    pub reg_trend: T,
    pub reg_seasonal: T,
    pub reg_tf: T,
    pub total: T,
}

/// Graph vars of one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub pred: Var,
    pub reg_trend: Var,
    pub reg_seasonal: Var,
    pub reg_tf: Var,
    pub total: Var,
}

impl LossVars {
    pub fn values<T: Scalar>(&self, g: &Graph<T>) -> LossBreakdown<T> {
        LossBreakdown {
            pred: g.item(self.pred),
            reg_trend: g.item(self.reg_trend),
            reg_seasonal: g.item(self.reg_seasonal),
            reg_tf: g.item(self.reg_tf),
            total: g.item(self.total),
        }
    }
}

/// Layer inputs recorded during a forward pass, each `(rows, width)`.
#[derive(Clone, Debug, Default)]
pub struct Probe {
    pub trend: Vec<Var>,
    pub seasonal: Vec<Var>,
    /// First (only) layer input of each per-patch network.
    pub tf: Vec<Var>,
}

/// Affine de-standardization applied before sMAPE, one entry per row.
#[derive(Clone, Debug, PartialEq)]
pub struct RowScale<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastModel<T> {
    pub cfg: ModelConfig,
    pub peaks: SpectralPeaks<T>,
    pub embed: Embedding<T>,
    pub trend: KanNetwork<T>,
    pub seasonal: KanNetwork<T>,
    pub tf: TfSynergy<T>,
    /// `d → 1`
    pub head_width: Linear<T>,
    /// `L → F`
    pub head_time: Linear<T>,
}

impl<T: Scalar> ForecastModel<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cfg: ModelConfig, peaks: SpectralPeaks<T>) -> Result<Self> {
        cfg.validate()?;
        if peaks.bins.len() != cfg.top_k {
            return Err(Error::Config(format!(
                "{} frequencies supplied, top_k is {}",
                peaks.bins.len(),
                cfg.top_k
            )));
        }
        let l = cfg.lookback;
        let embed = Embedding::new(rng, cfg.width);
        let trend = build_trend_kan(rng, l, l, cfg.trend_degree)?;
        let seasonal = build_seasonal_kan(rng, l, l, &peaks)?;
        let tf = TfSynergy::new(rng, l, cfg.width, cfg.patch())?;
        let head_width = Linear::new(rng, cfg.width, 1);
        let head_time = Linear::new(rng, l, cfg.horizon);
        Ok(Self {
            cfg,
            peaks,
            embed,
            trend,
            seasonal,
            tf,
            head_width,
            head_time,
        })
    }

    /// Builds a model whose seasonal prior uses the dominant frequencies of
    /// the raw seasonal component of `inputs` (time on the last axis).
    pub fn from_inputs<R: Rng + ?Sized>(rng: &mut R, cfg: ModelConfig, inputs: &Tensor<T>) -> Result<Self> {
        cfg.validate()?;
        let seasonal = raw_seasonal(inputs, cfg.kernel)?;
        let peaks = top_k_frequencies(&seasonal, cfg.top_k)?;
        Self::new(rng, cfg, peaks)
    }

    /// `(R, L) → (R, F)` with every row treated as an independent series.
    pub fn forward_var(
        &self,
        g: &mut Graph<T>,
        bnd: &mut Bindings,
        x: Var,
        mut probe: Option<&mut Probe>,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.cfg.lookback {
            return Err(Error::shape("forward", &shape, &[0, self.cfg.lookback]));
        }
        let rows = shape[0];
        let e = self.embed.forward(g, bnd, "embed", x)?;
        let (trend, seasonal) = decompose_var(g, e, self.cfg.kernel)?;
        let tt = g.permute(trend, &[0, 2, 1])?;
        let ht = self
            .trend
            .forward_probe(g, bnd, "trend", tt, probe.as_deref_mut().map(|p| &mut p.trend))?;
        let ht = g.permute(ht, &[0, 2, 1])?;
        let st = g.permute(seasonal, &[0, 2, 1])?;
        let hs = self
            .seasonal
            .forward_probe(g, bnd, "seasonal", st, probe.as_deref_mut().map(|p| &mut p.seasonal))?;
        let hs = g.permute(hs, &[0, 2, 1])?;
        let htf = self
            .tf
            .forward(g, bnd, "tf", seasonal, probe.map(|p| &mut p.tf))?;
        let h = g.add(ht, hs)?;
        let h = g.add(h, htf)?;
        let z = self.head_width.forward(g, bnd, "head.width", h)?;
        let z = g.reshape(z, &[rows, self.cfg.lookback])?;
        self.head_time.forward(g, bnd, "head.time", z)
    }

    /// `(N, L)` or `(B, N, L)` inputs to forecasts of matching leading shape.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = x.shape().to_vec();
        let l = *shape.last().unwrap_or(&0);
        if shape.len() < 2 || l != self.cfg.lookback {
            return Err(Error::shape("forward", &shape, &[self.cfg.lookback]));
        }
        let mut g = Graph::new();
        let mut b = Bindings::new();
        let xv = g.constant(x.clone());
        let xv = g.reshape(xv, &[x.numel() / l, l])?;
        let y = self.forward_var(&mut g, &mut b, xv, None)?;
        let mut out = shape;
        *out.last_mut().unwrap() = self.cfg.horizon;
        let y = g.reshape(y, &out)?;
        Ok(g.tensor(y))
    }

    /// Prediction loss plus `λ` times the three sparsification penalties.
    pub fn loss_var(
        &self,
        g: &mut Graph<T>,
        bnd: &mut Bindings,
        pred: Var,
        target: Var,
        task: Task,
        scale: Option<&RowScale<T>>,
    ) -> Result<LossVars> {
        let ps = g.shape(pred).to_vec();
        if ps != g.shape(target) {
            return Err(Error::shape("loss", &ps, g.shape(target)));
        }
        let pred_loss = match task {
            Task::Long => {
                let d = g.sub(pred, target)?;
                let d2 = g.square(d);
                g.mean_all(d2)
            }
            Task::Short => {
                let (yh, y) = match scale {
                    Some(s) => {
                        let cols = *ps.last().unwrap_or(&1);
                        let rows = ps.iter().product::<usize>() / cols;
                        if s.mean.len() != rows || s.std.len() != rows {
                            return Err(Error::invalid("loss", format!("{} row scales for {rows} rows", s.mean.len())));
                        }
                        let m = g.constant(Tensor::from_fn(&ps, |k| s.mean[k / cols]));
                        let sd = g.constant(Tensor::from_fn(&ps, |k| s.std[k / cols]));
                        let yh = g.mul(pred, sd)?;
                        let yh = g.add(yh, m)?;
                        let y = g.mul(target, sd)?;
                        (yh, g.add(y, m)?)
                    }
                    None => (pred, target),
                };
                let d = g.sub(yh, y)?;
                let num = g.abs(d);
                let a = g.abs(yh);
                let b = g.abs(y);
                let den = g.add(a, b)?;
                let r = g.div_or_zero(num, den)?;
                let m = g.mean_all(r);
                g.scale(m, T::lit(200.0))
            }
        };
        let reg_trend = self.trend.reg(g, bnd, "trend")?;
        let reg_seasonal = self.seasonal.reg(g, bnd, "seasonal")?;
        let reg_tf = self.tf.reg(g, bnd, "tf")?;
        let reg = g.add(reg_trend, reg_seasonal)?;
        let reg = g.add(reg, reg_tf)?;
        let reg = g.scale(reg, T::lit(self.cfg.lambda));
        let total = g.add(pred_loss, reg)?;
        Ok(LossVars {
            pred: pred_loss,
            reg_trend,
            reg_seasonal,
            reg_tf,
            total,
        })
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = self.embed.map.params("embed");
        v.extend(self.trend.params("trend"));
        v.extend(self.seasonal.params("seasonal"));
        v.extend(self.tf.params("tf"));
        v.extend(self.head_width.params("head.width"));
        v.extend(self.head_time.params("head.time"));
        v
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = self.embed.map.params_mut("embed");
        v.extend(self.trend.params_mut("trend"));
        v.extend(self.seasonal.params_mut("seasonal"));
        v.extend(self.tf.params_mut("tf"));
        v.extend(self.head_width.params_mut("head.width"));
        v.extend(self.head_time.params_mut("head.time"));
        v
    }

    /// Every network of the model with its name, in report order.
    pub fn networks(&self) -> Vec<(String, &KanNetwork<T>)> {
        let mut v = vec![("trend".to_string(), &self.trend), ("seasonal".to_string(), &self.seasonal)];
        for (p, k) in self.tf.kans.iter().enumerate() {
            v.push((format!("tf.kan.{p}"), k));
        }
        v
    }

    pub fn networks_mut(&mut self) -> Vec<(String, &mut KanNetwork<T>)> {
        let mut v = vec![
            ("trend".to_string(), &mut self.trend),
            ("seasonal".to_string(), &mut self.seasonal),
        ];
        for (p, k) in self.tf.kans.iter_mut().enumerate() {
            v.push((format!("tf.kan.{p}"), k));
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Seasonal residual of raw series with time on the last axis.
pub fn raw_seasonal<T: Scalar>(x: &Tensor<T>, kernel: usize) -> Result<Tensor<T>> {
    let l = *x.shape().last().unwrap_or(&0);
    validate_kernel(kernel, l)?;
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let avg = g.moving_average(xv, kernel)?;
    let s = g.sub(xv, avg)?;
    Ok(g.tensor(s))
}

/// One optimizer step on a batch; returns the loss before the update.
pub fn train_step<T: Scalar>(
    model: &mut ForecastModel<T>,
    adam: &mut AdamState<T>,
    batch: &WindowBatch<T>,
    task: Task,
    scale: Option<&RowScale<T>>,
) -> Result<LossBreakdown<T>> {
    let (l, f) = (model.cfg.lookback, model.cfg.horizon);
    let mut g = Graph::new();
    let mut b = Bindings::new();
    let x = g.constant(batch.inputs.clone());
    let x = g.reshape(x, &[batch.inputs.numel() / l, l])?;
    let y = g.constant(batch.targets.clone());
    let y = g.reshape(y, &[batch.targets.numel() / f, f])?;
    let yh = model.forward_var(&mut g, &mut b, x, None)?;
    let lv = model.loss_var(&mut g, &mut b, yh, y, task, scale)?;
    let out = lv.values(&g);
    if !out.total.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    g.backward(lv.total)?;
    let mut params = model.params_mut();
    for (name, t) in params.iter_mut() {
        let v = b
            .get(name)
            .ok_or_else(|| Error::invalid("train_step", format!("parameter {name} unused")))?;
        g.write_grad(v, t)?;
    }
    let mut refs: Vec<&mut Tensor<T>> = params.into_iter().map(|(_, t)| t).collect();
    adam_step(&mut refs, adam)?;
    Ok(out)
}

/// Forecasts `(B, N, F)` for the windows starting at `starts`.
pub fn predict_batch<T: Scalar>(model: &ForecastModel<T>, windows: &Windows<T>, starts: &[usize]) -> Result<Tensor<T>> {
    model.forward(&windows.batch(starts).inputs)
}

/// Mean prediction loss over every window, evaluated in batches.
pub fn evaluate_pred<T: Scalar>(model: &ForecastModel<T>, windows: &Windows<T>, task: Task) -> Result<T> {
    let mut total = 0.0f64;
    let mut count = 0usize;
    let idx: Vec<usize> = (0..windows.len()).collect();
    for chunk in idx.chunks(model.cfg.batch_size) {
        let batch = windows.batch(chunk);
        let (mean, std) = windows.row_scale(chunk.len());
        let scale = RowScale { mean, std };
        let pred = model.forward(&batch.inputs)?;
        let mut g = Graph::new();
        let mut b = Bindings::new();
        let p = g.constant(pred);
        let y = g.constant(batch.targets.clone());
        let lv = model.loss_var(&mut g, &mut b, p, y, task, Some(&scale))?;
        total += g.item(lv.pred).as_f64() * chunk.len() as f64;
        count += chunk.len();
    }
    if count == 0 {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    Ok(T::lit(total / count as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_pred: f64,
    pub val_pred: f64,
    pub reg: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
}

impl History {
    /// Tab-separated, one line per epoch, after a header line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\ttrain_pred\tval_pred\treg\ttotal\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{}\t{:?}\t{:?}\t{:?}\t{:?}\n",
                e.epoch, e.train_pred, e.val_pred, e.reg, e.total
            ));
        }
        s
    }
}

/// Adam over shuffled mini-batches with early stopping on the validation
/// prediction loss; the best-validation parameters are restored at the end.
/// Training stops once `patience` consecutive epochs fail to improve and
/// one more does too.
pub fn train<T: Scalar>(
    model: &mut ForecastModel<T>,
    train: &Windows<T>,
    val: &Windows<T>,
    task: Task,
    seed: u64,
) -> Result<History> {
    if train.is_empty() {
        return Err(Error::Data("training split has no windows".into()));
    }
    if val.is_empty() {
        return Err(Error::Data("validation split has no windows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(T::lit(model.cfg.learning_rate));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, ForecastModel<T>)> = None;
    let mut stale = 0usize;
    for epoch in 1..=model.cfg.epochs {
        order.shuffle(&mut rng);
        let (mut pred, mut reg, mut total, mut seen) = (0.0f64, 0.0f64, 0.0f64, 0usize);
        for chunk in order.chunks(model.cfg.batch_size) {
            let batch = train.batch(chunk);
            let (mean, std) = train.row_scale(chunk.len());
            let scale = RowScale { mean, std };
            let lb = train_step(model, &mut adam, &batch, task, Some(&scale))?;
            let w = chunk.len() as f64;
            pred += lb.pred.as_f64() * w;
            reg += (lb.reg_trend + lb.reg_seasonal + lb.reg_tf).as_f64() * w;
            total += lb.total.as_f64() * w;
            seen += chunk.len();
        }
        let n = seen as f64;
        let val_pred = evaluate_pred(model, val, task)?.as_f64();
        history.epochs.push(EpochRecord {
            epoch,
            train_pred: pred / n,
            val_pred,
            reg: reg / n,
            total: total / n,
        });
        let improved = best.as_ref().is_none_or(|(b, _)| val_pred < *b);
        if improved {
            best = Some((val_pred, model.clone()));
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale > model.cfg.patience {
                break;
            }
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(history)
}
