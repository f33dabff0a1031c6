use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spun_nn::layers::normal;
use spun_nn::{load_ckpt, save_ckpt, Axis, CrossBlock, EncoderBlock, Linear, Mode, ParamStore, Tape, Tensor, Var};

use crate::error::{invalid, CoreError, Result};
use crate::spectral::{offset_encode, BoundaryCondition, OffsetSeq, Spectrum, DEFAULT_K};

/// Layer sizes of the union operator. Model width is
/// `pos_width + val_width + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnionArch {
    pub k: usize,
    pub pos_width: usize,
    pub val_width: usize,
    pub heads: usize,
    pub ta_layers: usize,
    pub ta_ff: usize,
    pub tb_layers: usize,
    pub tb_ff: usize,
}

impl Default for UnionArch {
    fn default() -> Self {
        Self { k: DEFAULT_K, pos_width: 16, val_width: 15, heads: 8, ta_layers: 6, ta_ff: 64, tb_layers: 3, tb_ff: 32 }
    }
}

impl UnionArch {
    pub fn width(&self) -> usize {
        self.pos_width + self.val_width + 1
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.heads == 0 || self.width() % self.heads != 0 {
            return Err(invalid(format!("union width {} with {} heads, k = {}", self.width(), self.heads, self.k)));
        }
        Ok(())
    }
}

pub const DROPOUT: f64 = 0.1;
const THETA_A: &str = "union.theta_a";
const THETA_B: &str = "union.theta_b";

/// The learned spectral union operator.
#[derive(Debug, Clone)]
pub struct UnionModel {
    pub arch: UnionArch,
    pub store: ParamStore,
    ta: Vec<CrossBlock>,
    tb: Vec<EncoderBlock>,
    rho: Linear,
    /// Boundary condition attached to predicted spectra.
    pub output_bc: BoundaryCondition,
}

impl UnionModel {
    pub fn new(arch: UnionArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = arch.width();
        store.insert(THETA_A, normal(vec![arch.k, arch.pos_width], 0.02, &mut rng))?;
        store.insert(THETA_B, normal(vec![1, arch.val_width], 0.02, &mut rng))?;
        let ta = (0..arch.ta_layers)
            .map(|i| CrossBlock::init(&mut store, &format!("union.ta.{i}"), d, arch.heads, arch.ta_ff, DROPOUT, &mut rng))
            .collect::<spun_nn::Result<Vec<_>>>()?;
        let tb = (0..arch.tb_layers)
            .map(|i| {
                EncoderBlock::init(&mut store, &format!("union.tb.{i}"), d, arch.heads, arch.tb_ff, DROPOUT, &mut rng)
            })
            .collect::<spun_nn::Result<Vec<_>>>()?;
        let rho = Linear::init(&mut store, "union.rho", d, 1, &mut rng)?;
        Ok(Self { arch, store, ta, tb, rho, output_bc: BoundaryCondition::Dirichlet })
    }

    /// Rebuilds a model around loaded parameters. Sizes are read from the
    /// tensor shapes; the head count must be supplied.
    pub fn from_store(store: ParamStore, heads: usize) -> Result<Self> {
        let shape = |name: &str| -> Result<Vec<usize>> { Ok(store.value(name)?.shape().to_vec()) };
        let count = |prefix: &str| (0..).take_while(|i| store.contains(&format!("{prefix}.{i}.norm1.gamma"))).count();
        let ta_layers = count("union.ta");
        let tb_layers = count("union.tb");
        let theta_a = shape(THETA_A)?;
        let arch = UnionArch {
            k: theta_a[0],
            pos_width: theta_a[1],
            val_width: shape(THETA_B)?[1],
            heads,
            ta_layers,
            ta_ff: if ta_layers > 0 { shape("union.ta.0.ff1.weight")?[1] } else { 0 },
            tb_layers,
            tb_ff: if tb_layers > 0 { shape("union.tb.0.ff1.weight")?[1] } else { 0 },
        };
        let mut model = Self::new(arch, 0)?;
        let fresh: Vec<(String, Vec<usize>)> =
            model.store.iter().map(|(n, p)| (n.to_string(), p.value.shape().to_vec())).collect();
        let loaded: Vec<(String, Vec<usize>)> =
            store.iter().map(|(n, p)| (n.to_string(), p.value.shape().to_vec())).collect();
        if fresh != loaded {
            return Err(invalid("checkpoint parameters do not form a union model"));
        }
        model.store = store;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(save_ckpt(&self.store, path)?)
    }

    pub fn load(path: impl AsRef<Path>, heads: usize) -> Result<Self> {
        Self::from_store(load_ckpt(path)?, heads)
    }

    /// Embeds a batch of offset sequences, stacked along rows:
    /// row `i` of each block is `(theta_a[i], off_i * theta_b, off_i)`.
    pub fn embed_batch(&self, tape: &Tape, offsets: &[&[f64]]) -> Result<Var> {
        let k = self.arch.k;
        let mut column = Vec::with_capacity(offsets.len() * k);
        for o in offsets {
            if o.len() != k {
                return Err(CoreError::LengthMismatch { expected: k, got: o.len() });
            }
            column.extend_from_slice(o);
        }
        let rows = column.len();
        let off = tape.constant(Tensor::matrix(rows, 1, column)?)?;
        let theta_a = tape.param(THETA_A)?;
        let pos = tape.concat(&vec![theta_a; offsets.len()], Axis::Rows)?;
        let val = tape.matmul(off, tape.param(THETA_B)?)?;
        Ok(tape.concat(&[pos, val, off], Axis::Cols)?)
    }

    /// Predicted eigenvalues `[batch, k]` for pairs of offset sequences.
    pub fn forward_batch(&self, tape: &Tape, a: &[&[f64]], b: &[&[f64]]) -> Result<Var> {
        if a.len() != b.len() || a.is_empty() {
            return Err(invalid(format!("batch sizes {} and {}", a.len(), b.len())));
        }
        let (k, n) = (self.arch.k, a.len());
        let ea = self.embed_batch(tape, a)?;
        let eb = self.embed_batch(tape, b)?;
        // Both directions in one pass with shared weights.
        let mut x = tape.concat(&[ea, eb], Axis::Rows)?;
        let memory = tape.concat(&[eb, ea], Axis::Rows)?;
        for block in &self.ta {
            x = block.forward(tape, x, memory, k)?;
        }
        let h_ab = tape.slice(x, Axis::Rows, 0, n * k)?;
        let h_ba = tape.slice(x, Axis::Rows, n * k, n * k)?;
        let mut d = tape.add(h_ab, h_ba)?;
        for block in &self.tb {
            d = block.forward(tape, d, k)?;
        }
        let r = self.rho.forward(tape, d)?;
        let offsets = tape.relu(tape.reshape(r, vec![n, k])?)?;
        Ok(tape.cumsum(offsets)?)
    }

    /// Union spectrum of two part spectra.
    pub fn predict(&self, s1: &Spectrum, s2: &Spectrum, mode: Mode) -> Result<Spectrum> {
        Ok(self.predict_batch(&[(s1, s2)], mode)?.remove(0))
    }

    pub fn predict_batch(&self, pairs: &[(&Spectrum, &Spectrum)], mode: Mode) -> Result<Vec<Spectrum>> {
        let enc: Vec<(OffsetSeq, OffsetSeq)> = pairs.iter().map(|(a, b)| (offset_encode(a), offset_encode(b))).collect();
        let a: Vec<&[f64]> = enc.iter().map(|(x, _)| x.offsets.as_slice()).collect();
        let b: Vec<&[f64]> = enc.iter().map(|(_, y)| y.offsets.as_slice()).collect();
        let tape = Tape::with_store(&self.store, mode);
        let out = self.forward_batch(&tape, &a, &b)?;
        let values = tape.value(out).clone();
        (0..pairs.len())
            .map(|i| Spectrum::new(values.row_slice(i).to_vec(), self.output_bc))
            .collect()
    }
}

/// Embedding `[k, width]` of one offset sequence.
pub fn embed(offsets: &OffsetSeq, model: &UnionModel) -> Result<Tensor> {
    let tape = Tape::with_store(&model.store, Mode::Eval);
    let e = model.embed_batch(&tape, &[&offsets.offsets])?;
    let t = tape.value(e).clone();
    Ok(t)
}

pub fn union_forward(s1: &Spectrum, s2: &Spectrum, model: &UnionModel, mode: Mode) -> Result<Spectrum> {
    for s in [s1, s2] {
        if s.k() != model.arch.k {
            return Err(CoreError::LengthMismatch { expected: model.arch.k, got: s.k() });
        }
    }
    model.predict(s1, s2, mode)
}

/// Left fold of pairwise unions.
pub fn union_compose(spectra: &[Spectrum], model: &UnionModel) -> Result<Spectrum> {
    if spectra.len() < 2 {
        return Err(invalid(format!("composition needs at least two spectra, got {}", spectra.len())));
    }
    let mut acc = union_forward(&spectra[0], &spectra[1], model, Mode::Eval)?;
    for s in &spectra[2..] {
        acc = union_forward(&acc, s, model, Mode::Eval)?;
    }
    Ok(acc)
}

/// Right fold, for comparison with [`union_compose`].
pub fn union_compose_right(spectra: &[Spectrum], model: &UnionModel) -> Result<Spectrum> {
    if spectra.len() < 2 {
        return Err(invalid(format!("composition needs at least two spectra, got {}", spectra.len())));
    }
    let n = spectra.len();
    let mut acc = union_forward(&spectra[n - 2], &spectra[n - 1], model, Mode::Eval)?;
    for s in spectra[..n - 2].iter().rev() {
        acc = union_forward(s, &acc, model, Mode::Eval)?;
    }
    Ok(acc)
}
