use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use spun_nn::{load_ckpt, save_ckpt, Adam, AdamConfig, LayerNorm, Linear, LrSchedule, Mode, NnError, ParamStore, Tape, Tensor, Var};

use crate::error::{invalid, CoreError, Result};
use crate::geometry::RegionMask;
use crate::spectral::Spectrum;

/// Layer widths of the network for a 6890-vertex body template. Other
/// templates scale them by `V / 6890`.
pub const REFERENCE_WIDTHS: [usize; 5] = [1300, 2600, 3900, 5200, 6890];
pub const REFERENCE_VERTICES: usize = 6890;
pub const REGION_DROPOUT: f64 = 0.5;
const INPUT_SHIFT: &str = "region.input_shift";
const INPUT_SCALE: &str = "region.input_scale";

pub fn layer_widths(vertices: usize) -> [usize; 5] {
    REFERENCE_WIDTHS.map(|w| ((w * vertices) as f64 / REFERENCE_VERTICES as f64).round().max(1.0) as usize)
}

/// Spectrum-to-indicator MLP over the template vertices.
///
/// Inputs are standardized per index with frozen statistics taken from the
/// training spectra. Spectra of different unions are close to rescalings of
/// one another, and without this the first layer norm discards the scale.
#[derive(Debug, Clone)]
pub struct RegionModel {
    pub k: usize,
    pub vertices: usize,
    pub store: ParamStore,
    linear: Vec<Linear>,
    norms: Vec<LayerNorm>,
}

impl RegionModel {
    pub fn new(k: usize, vertices: usize, seed: u64) -> Result<Self> {
        if k == 0 || vertices == 0 {
            return Err(invalid(format!("region model with k = {k}, V = {vertices}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let widths = layer_widths(vertices);
        let mut linear = Vec::with_capacity(5);
        let mut fan_in = k;
        for (i, &w) in widths.iter().enumerate() {
            linear.push(Linear::init(&mut store, &format!("region.linear{i}"), fan_in, w, &mut rng)?);
            fan_in = w;
        }
        let norms = (0..4)
            .map(|i| LayerNorm::init(&mut store, &format!("region.norm{i}"), widths[i]))
            .collect::<spun_nn::Result<Vec<_>>>()?;
        store.insert(INPUT_SHIFT, Tensor::matrix(1, k, vec![0.0; k])?)?;
        store.insert(INPUT_SCALE, Tensor::matrix(1, k, vec![1.0; k])?)?;
        store.freeze(INPUT_SHIFT)?;
        store.freeze(INPUT_SCALE)?;
        Ok(Self { k, vertices, store, linear, norms })
    }

    pub fn from_store(store: ParamStore) -> Result<Self> {
        let first = store.value("region.linear0.weight")?.shape().to_vec();
        let last = store.value("region.linear4.weight")?.shape().to_vec();
        let mut model = Self::new(first[0], last[1], 0)?;
        let shapes = |s: &ParamStore| -> Vec<(String, Vec<usize>)> {
            s.iter().map(|(n, p)| (n.to_string(), p.value.shape().to_vec())).collect()
        };
        if shapes(&model.store) != shapes(&store) {
            return Err(invalid("checkpoint parameters do not form a region model"));
        }
        model.store = store;
        model.store.freeze(INPUT_SHIFT)?;
        model.store.freeze(INPUT_SCALE)?;
        Ok(model)
    }

    /// Sets the input standardization to the per-index mean and inverse
    /// standard deviation of `spectra`.
    pub fn fit_input(&mut self, spectra: &[&[f64]]) -> Result<()> {
        if spectra.is_empty() {
            return Err(invalid("no spectra to fit input statistics"));
        }
        let n = spectra.len() as f64;
        let mut mean = vec![0.0; self.k];
        let mut var = vec![0.0; self.k];
        for s in spectra {
            if s.len() != self.k {
                return Err(CoreError::LengthMismatch { expected: self.k, got: s.len() });
            }
            mean.iter_mut().zip(*s).for_each(|(m, x)| *m += x / n);
        }
        for s in spectra {
            var.iter_mut().zip(*s).zip(&mean).for_each(|((v, x), m)| *v += (x - m) * (x - m) / n);
        }
        let scale = var.iter().map(|v| if *v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }).collect::<Vec<f64>>();
        self.store.get_mut(INPUT_SHIFT)?.value.data_mut().copy_from_slice(&mean);
        self.store.get_mut(INPUT_SCALE)?.value.data_mut().copy_from_slice(&scale);
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(save_ckpt(&self.store, path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_store(load_ckpt(path)?)
    }

    /// Per-vertex probabilities `[batch, V]`.
    pub fn forward_batch(&self, tape: &Tape, spectra: &[&[f64]]) -> Result<Var> {
        let shift = self.store.value(INPUT_SHIFT)?.data();
        let scale = self.store.value(INPUT_SCALE)?.data();
        let mut data = Vec::with_capacity(spectra.len() * self.k);
        for s in spectra {
            if s.len() != self.k {
                return Err(CoreError::LengthMismatch { expected: self.k, got: s.len() });
            }
            data.extend(s.iter().zip(shift).zip(scale).map(|((x, m), c)| (x - m) * c));
        }
        let x = tape.constant(Tensor::matrix(spectra.len(), self.k, data)?)?;
        let h = self.linear[0].forward(tape, x)?;
        let mut h = self.norms[0].forward(tape, tape.relu(h)?)?;
        for i in 1..4 {
            let z = tape.elu(self.linear[i].forward(tape, h)?)?;
            h = self.norms[i].forward(tape, tape.dropout(z, REGION_DROPOUT)?)?;
        }
        Ok(tape.sigmoid(self.linear[4].forward(tape, h)?)?)
    }

    pub fn predict_batch(&self, spectra: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(spectra.len());
        for chunk in spectra.chunks(64) {
            let tape = Tape::with_store(&self.store, Mode::Eval);
            let p = self.forward_batch(&tape, chunk)?;
            let v = tape.value(p);
            out.extend((0..chunk.len()).map(|i| v.row_slice(i).to_vec()));
        }
        Ok(out)
    }
}

pub fn region_forward(s: &Spectrum, model: &RegionModel, mode: Mode) -> Result<Vec<f64>> {
    let tape = Tape::with_store(&model.store, mode);
    let p = model.forward_batch(&tape, &[s.values()])?;
    let out = tape.value(p).data().to_vec();
    Ok(out)
}

fn mse(pred: &[f64], target: impl Iterator<Item = f64>) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len().max(1) as f64
}

fn indicator(mask: &RegionMask) -> impl Iterator<Item = f64> + '_ {
    mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 })
}

/// `min(mse(pred, gt), mse(pred, sym gt))`.
pub fn sym_loss(pred: &[f64], gt: &RegionMask, symmap: &[usize]) -> Result<f64> {
    if pred.len() != gt.len() || symmap.len() != gt.len() {
        return Err(CoreError::LengthMismatch { expected: gt.len(), got: pred.len().min(symmap.len()) });
    }
    let mirrored = gt.permuted(symmap);
    Ok(mse(pred, indicator(gt)).min(mse(pred, indicator(&mirrored))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub iou: f64,
    pub accuracy: f64,
}

fn iou_acc(pred: &[bool], gt: &[bool]) -> (f64, f64) {
    let (mut inter, mut uni, mut agree) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        inter += (p && g) as usize;
        uni += (p || g) as usize;
        agree += (p == g) as usize;
    }
    let iou = if uni == 0 { 1.0 } else { inter as f64 / uni as f64 };
    (iou, agree as f64 / gt.len().max(1) as f64)
}

/// IoU and accuracy at threshold 0.5, each against the better of the mask
/// and its mirror image, averaged over samples.
pub fn region_metrics(preds: &[Vec<f64>], gts: &[&RegionMask], symmap: &[usize]) -> Result<RegionMetrics> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(invalid(format!("{} predictions for {} masks", preds.len(), gts.len())));
    }
    let (mut iou, mut acc) = (0.0, 0.0);
    for (p, gt) in preds.iter().zip(gts) {
        if p.len() != gt.len() {
            return Err(CoreError::LengthMismatch { expected: gt.len(), got: p.len() });
        }
        let bits: Vec<bool> = p.iter().map(|&v| v >= 0.5).collect();
        let (i1, a1) = iou_acc(&bits, gt.bits());
        let (i2, a2) = iou_acc(&bits, gt.permuted(symmap).bits());
        iou += i1.max(i2);
        acc += a1.max(a2);
    }
    let n = preds.len() as f64;
    Ok(RegionMetrics { iou: iou / n, accuracy: acc / n })
}

/// One localization example: an input spectrum and its union mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionExample {
    pub spectrum: Vec<f64>,
    pub mask: RegionMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionTrainConfig {
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub t0: usize,
    pub t_mult: usize,
    pub epochs: usize,
    /// Epochs without validation IoU improvement before stopping.
    pub patience: usize,
    /// Ground-truth noise as a fraction of the per-index mean eigenvalue.
    pub noise: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for RegionTrainConfig {
    fn default() -> Self {
        Self {
            batch: 32,
            lr: 5e-5,
            weight_decay: 1e-6,
            t0: 10,
            t_mult: 2,
            epochs: 630,
            patience: 160,
            noise: 0.01,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl RegionTrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { base_lr: self.lr, min_lr: 0.0, t0: self.t0, t_mult: self.t_mult }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEpoch {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_iou: f64,
}

/// Trains the localization MLP with the symmetry-invariant loss.
///
/// `truth` holds ground-truth union spectra, which receive fresh Gaussian
/// noise every epoch; `predicted` holds spectra from a frozen union model and
/// is used as is. A seeded `val_fraction` of `truth` drives early stopping
/// and checkpoint selection by IoU.
pub fn train_region(
    truth: &[RegionExample],
    predicted: &[RegionExample],
    symmap: &[usize],
    cfg: &RegionTrainConfig,
) -> Result<(RegionModel, Vec<RegionEpoch>)> {
    if cfg.batch == 0 || cfg.epochs == 0 || !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(invalid("batch and epochs must be positive and val_fraction in [0, 1)"));
    }
    let first = truth.first().ok_or_else(|| invalid("no training examples"))?;
    let (k, v) = (first.spectrum.len(), first.mask.len());
    if let Some(e) = truth.iter().chain(predicted).find(|e| e.spectrum.len() != k || e.mask.len() != v) {
        return Err(CoreError::LengthMismatch { expected: k, got: e.spectrum.len() });
    }
    if symmap.len() != v {
        return Err(CoreError::LengthMismatch { expected: v, got: symmap.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((cfg.val_fraction * truth.len() as f64).round() as usize).min(truth.len() - 1);
    let val: Vec<&RegionExample> = order[..n_val].iter().map(|&i| &truth[i]).collect();
    let fit_truth: Vec<&RegionExample> = order[n_val..].iter().map(|&i| &truth[i]).collect();

    let mut sigma = vec![0.0; k];
    for e in &fit_truth {
        for (s, x) in sigma.iter_mut().zip(&e.spectrum) {
            *s += x;
        }
    }
    sigma.iter_mut().for_each(|s| *s *= cfg.noise / fit_truth.len() as f64);

    let mut model = RegionModel::new(k, v, cfg.seed)?;
    model.fit_input(&fit_truth.iter().map(|e| e.spectrum.as_slice()).collect::<Vec<_>>())?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() });
    let schedule = cfg.schedule();
    let all: Vec<&RegionExample> = fit_truth.iter().copied().chain(predicted).collect();
    let direct: Vec<Vec<f64>> = all.iter().map(|e| indicator(&e.mask).collect()).collect();
    let mirrored: Vec<Vec<f64>> = all.iter().map(|e| indicator(&e.mask.permuted(symmap)).collect()).collect();
    let val_spectra: Vec<&[f64]> = val.iter().map(|e| e.spectrum.as_slice()).collect();
    let val_masks: Vec<&RegionMask> = val.iter().map(|e| &e.mask).collect();

    let mut history = Vec::new();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let inputs: Vec<Vec<f64>> = fit_truth
            .iter()
            .map(|e| {
                e.spectrum
                    .iter()
                    .zip(&sigma)
                    .map(|(x, s)| if *s > 0.0 { x + Normal::new(0.0, *s).expect("positive").sample(&mut rng) } else { *x })
                    .collect()
            })
            .chain(predicted.iter().map(|e| e.spectrum.clone()))
            .collect();
        let mut idx: Vec<usize> = (0..inputs.len()).collect();
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in idx.chunks(cfg.batch).enumerate() {
            let grads = {
                let seed = rng.random::<u64>() ^ ((epoch as u64) << 32 | step as u64);
                let tape = Tape::with_store(&model.store, Mode::Train).with_dropout_seed(seed);
                let xs: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
                let pred = model.forward_batch(&tape, &xs).map_err(|e| match e {
                    CoreError::Nn(NnError::NonFinite { .. }) => CoreError::DivergenceDetected(epoch),
                    other => other,
                })?;
                // The closer of the mask and its mirror is the target, which
                // gives the gradient of the min.
                let mut target = Vec::with_capacity(chunk.len() * v);
                {
                    let p = tape.value(pred);
                    for (r, &i) in chunk.iter().enumerate() {
                        let row = p.row_slice(r);
                        let d = mse(row, direct[i].iter().copied());
                        let m = mse(row, mirrored[i].iter().copied());
                        target.extend_from_slice(if d <= m { &direct[i] } else { &mirrored[i] });
                    }
                }
                let t = tape.constant(Tensor::matrix(chunk.len(), v, target)?)?;
                let loss = tape.mse(pred, t)?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(CoreError::DivergenceDetected(epoch));
                }
                total += value * chunk.len() as f64;
                tape.backward(loss)?
            };
            model.store.accumulate(grads.params(), 1.0)?;
            adam.step(&mut model.store, lr)?;
        }
        let train_loss = total / inputs.len() as f64;
        let val_iou = if val.is_empty() {
            -train_loss
        } else {
            region_metrics(&model.predict_batch(&val_spectra)?, &val_masks, symmap)?.iou
        };
        log::debug!("region epoch {epoch} lr {lr:.3e} loss {train_loss:.5} val iou {val_iou:.4}");
        history.push(RegionEpoch { epoch, lr, train_loss, val_iou });
        if best.as_ref().is_none_or(|(b, _)| val_iou > *b) {
            best = Some((val_iou, model.store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok((model, history))
}

pub fn eval_region(model: &RegionModel, examples: &[RegionExample], symmap: &[usize]) -> Result<RegionMetrics> {
    let xs: Vec<&[f64]> = examples.iter().map(|e| e.spectrum.as_slice()).collect();
    let masks: Vec<&RegionMask> = examples.iter().map(|e| &e.mask).collect();
    region_metrics(&model.predict_batch(&xs)?, &masks, symmap)
}
