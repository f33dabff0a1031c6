use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spun_nn::{Adam, AdamConfig, LrSchedule, Mode, NnError, Tape, Tensor};

use crate::dataset::{
    augment_mask, parallel_map, region_spectrum, scaled_family, DatasetManifest, PartialPairSample, Split,
};
use crate::error::{invalid, CoreError, Result};
use crate::geometry::{RegionMask, ShapeFamily};
use crate::spectral::{offset_encode, Spectrum};
use crate::union::model::{UnionArch, UnionModel};

/// One supervised example: part offsets and the target union eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct UnionExample {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub target: Vec<f64>,
}

impl UnionExample {
    pub fn new(s1: &Spectrum, s2: &Spectrum, union: &Spectrum) -> Self {
        Self { a: offset_encode(s1).offsets, b: offset_encode(s2).offsets, target: union.values().to_vec() }
    }

    pub fn from_sample(s: &PartialPairSample) -> Self {
        Self::new(&s.spec1, &s.spec2, &s.union_spec)
    }
}

pub fn split_examples(m: &DatasetManifest, split: Split) -> Vec<UnionExample> {
    m.split_samples(split).into_iter().map(UnionExample::from_sample).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub arch: UnionArch,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub t0: usize,
    pub t_mult: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of the training examples held back for checkpoint selection.
    pub val_fraction: f64,
    /// Precomputed augmented input variants per training sample; 0 disables.
    pub augment_variants: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: UnionArch::default(),
            batch: 32,
            lr: 2e-4,
            weight_decay: 1e-5,
            t0: 10,
            t_mult: 2,
            epochs: 150,
            seed: 0,
            val_fraction: 0.1,
            augment_variants: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { base_lr: self.lr, min_lr: 0.0, t0: self.t0, t_mult: self.t_mult }
    }

    fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.epochs == 0 || self.t0 == 0 || self.t_mult == 0 {
            return Err(invalid("batch, epochs, t0 and t_mult must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(invalid(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub fn write_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in history {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

fn diverged(epoch: usize) -> impl Fn(CoreError) -> CoreError {
    move |e| match e {
        CoreError::Nn(NnError::NonFinite { .. }) => CoreError::DivergenceDetected(epoch),
        other => other,
    }
}

fn targets(batch: &[&UnionExample]) -> Result<Tensor> {
    let k = batch[0].target.len();
    let data: Vec<f64> = batch.iter().flat_map(|e| e.target.iter().copied()).collect();
    Ok(Tensor::matrix(batch.len(), k, data)?)
}

/// Mean squared error over the examples, evaluated in batches.
pub fn mean_loss(model: &UnionModel, examples: &[UnionExample], batch: usize) -> Result<f64> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in examples.chunks(batch.max(1)) {
        let refs: Vec<&UnionExample> = chunk.iter().collect();
        let tape = Tape::with_store(&model.store, Mode::Eval);
        let a: Vec<&[f64]> = chunk.iter().map(|e| e.a.as_slice()).collect();
        let b: Vec<&[f64]> = chunk.iter().map(|e| e.b.as_slice()).collect();
        let pred = model.forward_batch(&tape, &a, &b)?;
        let t = tape.constant(targets(&refs)?)?;
        let loss = tape.mse(pred, t)?;
        total += tape.value(loss).data()[0] * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

/// Trains a union model with MSE on decoded eigenvalues. A seeded
/// `val_fraction` of `train` selects the returned checkpoint; `extra` examples
/// (augmented variants) are only ever trained on.
pub fn train_union(
    train: &[UnionExample],
    extra: &[UnionExample],
    cfg: &TrainConfig,
) -> Result<(UnionModel, Vec<EpochRecord>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(invalid("no training examples"));
    }
    let k = cfg.arch.k;
    if let Some(e) = train.iter().chain(extra).find(|e| e.a.len() != k || e.b.len() != k || e.target.len() != k) {
        return Err(CoreError::LengthMismatch { expected: k, got: e.target.len().min(e.a.len()).min(e.b.len()) });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((cfg.val_fraction * train.len() as f64).round() as usize).min(train.len() - 1);
    let val: Vec<UnionExample> = order[..n_val].iter().map(|&i| train[i].clone()).collect();
    let fit: Vec<&UnionExample> = order[n_val..].iter().map(|&i| &train[i]).chain(extra).collect();

    let mut model = UnionModel::new(cfg.arch, cfg.seed)?;
    init_rho_bias(&mut model, &fit)?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() });
    let schedule = cfg.schedule();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, spun_nn::ParamStore)> = None;
    let mut idx: Vec<usize> = (0..fit.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in idx.chunks(cfg.batch).enumerate() {
            let batch: Vec<&UnionExample> = chunk.iter().map(|&i| fit[i]).collect();
            let grads = {
                let dropout_seed = rng.random::<u64>() ^ ((epoch as u64) << 32 | step as u64);
                let tape = Tape::with_store(&model.store, Mode::Train).with_dropout_seed(dropout_seed);
                let a: Vec<&[f64]> = batch.iter().map(|e| e.a.as_slice()).collect();
                let b: Vec<&[f64]> = batch.iter().map(|e| e.b.as_slice()).collect();
                let pred = model.forward_batch(&tape, &a, &b).map_err(diverged(epoch))?;
                let t = tape.constant(targets(&batch)?)?;
                let loss = tape.mse(pred, t).map_err(|e| diverged(epoch)(e.into()))?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(CoreError::DivergenceDetected(epoch));
                }
                total += value * batch.len() as f64;
                tape.backward(loss)?
            };
            model.store.accumulate(grads.params(), 1.0)?;
            adam.step(&mut model.store, lr)?;
        }
        let train_loss = total / fit.len() as f64;
        let val_loss = if val.is_empty() { train_loss } else { mean_loss(&model, &val, cfg.batch)? };
        if !val_loss.is_finite() {
            return Err(CoreError::DivergenceDetected(epoch));
        }
        log::debug!("epoch {epoch} lr {lr:.3e} train {train_loss:.4} val {val_loss:.4}");
        history.push(EpochRecord { epoch, lr, train_loss, val_loss });
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.store.clone()));
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok((model, history))
}

/// Starts the offset head at the mean training offset.
fn init_rho_bias(model: &mut UnionModel, fit: &[&UnionExample]) -> Result<()> {
    let (mut sum, mut n) = (0.0, 0usize);
    for e in fit {
        let mut prev = 0.0;
        for &v in &e.target {
            sum += v - prev;
            prev = v;
            n += 1;
        }
    }
    let mean = if n > 0 { sum / n as f64 } else { 0.0 };
    model.store.get_mut("union.rho.bias")?.value.data_mut().fill(mean);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnionMetrics {
    pub mse: f64,
    pub mae: f64,
}

/// Mean over samples of the squared / absolute eigenvalue error averaged
/// over the k entries.
pub fn spectrum_errors<'a>(pairs: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> UnionMetrics {
    let (mut se, mut ae, mut n) = (0.0, 0.0, 0usize);
    for (p, t) in pairs {
        let k = t.len().max(1) as f64;
        se += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / k;
        ae += p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / k;
        n += 1;
    }
    let n = n.max(1) as f64;
    UnionMetrics { mse: se / n, mae: ae / n }
}

pub fn eval_union(model: &UnionModel, examples: &[UnionExample]) -> Result<UnionMetrics> {
    if examples.is_empty() {
        return Err(invalid("evaluation split is empty"));
    }
    let preds = predict_examples(model, examples)?;
    Ok(spectrum_errors(preds.iter().map(Vec::as_slice).zip(examples.iter().map(|e| e.target.as_slice()))))
}

pub fn predict_examples(model: &UnionModel, examples: &[UnionExample]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(64) {
        let tape = Tape::with_store(&model.store, Mode::Eval);
        let a: Vec<&[f64]> = chunk.iter().map(|e| e.a.as_slice()).collect();
        let b: Vec<&[f64]> = chunk.iter().map(|e| e.b.as_slice()).collect();
        let pred = model.forward_batch(&tape, &a, &b)?;
        let v = tape.value(pred);
        out.extend((0..chunk.len()).map(|i| v.row_slice(i).to_vec()));
    }
    Ok(out)
}

fn decode(offsets: &[f64]) -> Vec<f64> {
    offsets
        .iter()
        .scan(0.0, |acc, &o| {
            *acc += o;
            Some(*acc)
        })
        .collect()
}

/// Errors of the elementwise minimum of the two part spectra, the naive
/// predictor suggested by domain monotonicity.
pub fn min_baseline(examples: &[UnionExample]) -> UnionMetrics {
    let preds: Vec<Vec<f64>> = examples
        .iter()
        .map(|e| decode(&e.a).iter().zip(decode(&e.b)).map(|(x, y)| x.min(y)).collect())
        .collect();
    spectrum_errors(preds.iter().map(Vec::as_slice).zip(examples.iter().map(|e| e.target.as_slice())))
}

/// Training examples whose part masks are independently grown or shrunk by
/// up to two vertex rings (clipped to the union) and re-solved. The union
/// target is unchanged. Variants whose regions degenerate are skipped.
pub fn augmented_examples(
    family: &ShapeFamily,
    manifest: &DatasetManifest,
    variants: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<UnionExample>> {
    if variants == 0 {
        return Ok(Vec::new());
    }
    let scaled = scaled_family(family, manifest.target_area)?;
    let train = manifest.split_samples(Split::Train);
    let k = manifest.k;
    let tasks = train.len() * variants;
    let out = parallel_map(tasks, jobs, |t| {
        let s = train[t / variants];
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let clip = |m: &RegionMask, rng: &mut ChaCha8Rng| -> Option<RegionMask> {
            let grown = augment_mask(m, family, rng);
            let bits = grown.bits().iter().zip(s.union_mask.bits()).map(|(a, b)| *a && *b).collect();
            RegionMask::new(bits).ok()
        };
        let (Some(m1), Some(m2)) = (clip(&s.mask1, &mut rng), clip(&s.mask2, &mut rng)) else {
            return Ok(None);
        };
        let shape = scaled.shape(s.meta.identity, s.meta.pose)?;
        match (region_spectrum(&shape, &m1, k), region_spectrum(&shape, &m2, k)) {
            (Ok(a), Ok(b)) => Ok(Some(UnionExample::new(&a, &b, &s.union_spec))),
            _ => Ok(None),
        }
    })?;
    Ok(out.into_iter().flatten().collect())
}
