//! Parameterized building blocks. Each layer only remembers parameter
//! names; values live in a [`ParamStore`] and enter a forward pass through
//! [`Tape::param`].

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::Result;
use crate::params::ParamStore;
use crate::tape::{Axis, Tape, Var};
use crate::tensor::Tensor;

/// Fills a tensor with `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in<R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("sized")
}

pub fn normal<R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("sized")
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = format!("{name}.weight");
        let bias = format!("{name}.bias");
        store.insert(&weight, uniform_fan_in(vec![fan_in, fan_out], fan_in, rng))?;
        store.insert(&bias, uniform_fan_in(vec![1, fan_out], fan_in, rng))?;
        Ok(Self { weight, bias, fan_in, fan_out })
    }

    /// `x W + b` for `x` of shape `[rows, fan_in]`.
    pub fn forward(&self, tape: &Tape, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight)?;
        let b = tape.param(&self.bias)?;
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        let gamma = format!("{name}.gamma");
        let beta = format!("{name}.beta");
        store.insert(&gamma, Tensor::filled(vec![1, width], 1.0))?;
        store.insert(&beta, Tensor::zeros(vec![1, width]))?;
        Ok(Self { gamma, beta })
    }

    pub fn forward(&self, tape: &Tape, x: Var) -> Result<Var> {
        let g = tape.param(&self.gamma)?;
        let b = tape.param(&self.beta)?;
        tape.layer_norm(x, g, b)
    }
}

/// Multi-head attention with learned query/key/value/output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            query: Linear::init(store, &format!("{name}.query"), width, width, rng)?,
            key: Linear::init(store, &format!("{name}.key"), width, width, rng)?,
            value: Linear::init(store, &format!("{name}.value"), width, width, rng)?,
            output: Linear::init(store, &format!("{name}.output"), width, width, rng)?,
            heads,
        })
    }

    /// `query` has `batch * seq_q` rows; `memory` has `batch * seq_kv` rows.
    pub fn forward(
        &self,
        tape: &Tape,
        query: Var,
        memory: Var,
        seq_q: usize,
        seq_kv: usize,
        allowed: Option<&[bool]>,
    ) -> Result<Var> {
        let q = self.query.forward(tape, query)?;
        let k = self.key.forward(tape, memory)?;
        let v = self.value.forward(tape, memory)?;
        let heads = tape.attention(q, k, v, self.heads, seq_q, seq_kv, allowed)?;
        self.output.forward(tape, heads)
    }
}

#[derive(Debug, Clone)]
struct FeedForward {
    inner: Linear,
    outer: Linear,
}

impl FeedForward {
    fn init<R: Rng>(store: &mut ParamStore, name: &str, width: usize, ff: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            inner: Linear::init(store, &format!("{name}.ff1"), width, ff, rng)?,
            outer: Linear::init(store, &format!("{name}.ff2"), ff, width, rng)?,
        })
    }

    fn forward(&self, tape: &Tape, x: Var, dropout: f64) -> Result<Var> {
        let h = self.inner.forward(tape, x)?;
        let h = tape.relu(h)?;
        let h = tape.dropout(h, dropout)?;
        self.outer.forward(tape, h)
    }
}

/// Post-norm transformer encoder layer:
/// `x = norm(x + attn(x)); x = norm(x + ff(x))`.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ff: FeedForward,
    norm2: LayerNorm,
    pub dropout: f64,
}

impl EncoderBlock {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        ff_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::init(store, &format!("{name}.attn"), width, heads, rng)?,
            norm1: LayerNorm::init(store, &format!("{name}.norm1"), width)?,
            ff: FeedForward::init(store, name, width, ff_dim, rng)?,
            norm2: LayerNorm::init(store, &format!("{name}.norm2"), width)?,
            dropout,
        })
    }

    /// `x` stacks sequences of length `seq` along rows.
    pub fn forward(&self, tape: &Tape, x: Var, seq: usize) -> Result<Var> {
        let a = self.attn.forward(tape, x, x, seq, seq, None)?;
        let a = tape.dropout(a, self.dropout)?;
        let x = self.norm1.forward(tape, tape.add(x, a)?)?;
        let f = self.ff.forward(tape, x, self.dropout)?;
        let f = tape.dropout(f, self.dropout)?;
        self.norm2.forward(tape, tape.add(x, f)?)
    }

    /// Names of the output projections of both residual branches.
    pub fn residual_output_params(&self) -> Vec<&str> {
        vec![
            &self.attn.output.weight,
            &self.attn.output.bias,
            &self.ff.outer.weight,
            &self.ff.outer.bias,
        ]
    }
}

/// Decoder-style layer: self-attention over `target`, then attention from
/// `target` into `memory`, then feed-forward; post-norm residuals throughout.
#[derive(Debug, Clone)]
pub struct CrossBlock {
    self_attn: MultiHeadAttention,
    norm1: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff: FeedForward,
    norm3: LayerNorm,
    pub dropout: f64,
}

impl CrossBlock {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        ff_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::init(store, &format!("{name}.self_attn"), width, heads, rng)?,
            norm1: LayerNorm::init(store, &format!("{name}.norm1"), width)?,
            cross_attn: MultiHeadAttention::init(store, &format!("{name}.cross_attn"), width, heads, rng)?,
            norm2: LayerNorm::init(store, &format!("{name}.norm2"), width)?,
            ff: FeedForward::init(store, name, width, ff_dim, rng)?,
            norm3: LayerNorm::init(store, &format!("{name}.norm3"), width)?,
            dropout,
        })
    }

    pub fn forward(&self, tape: &Tape, target: Var, memory: Var, seq: usize) -> Result<Var> {
        let a = self.self_attn.forward(tape, target, target, seq, seq, None)?;
        let a = tape.dropout(a, self.dropout)?;
        let x = self.norm1.forward(tape, tape.add(target, a)?)?;
        let c = self.cross_attn.forward(tape, x, memory, seq, seq, None)?;
        let c = tape.dropout(c, self.dropout)?;
        let x = self.norm2.forward(tape, tape.add(x, c)?)?;
        let f = self.ff.forward(tape, x, self.dropout)?;
        let f = tape.dropout(f, self.dropout)?;
        self.norm3.forward(tape, tape.add(x, f)?)
    }

    pub fn residual_output_params(&self) -> Vec<&str> {
        vec![
            &self.self_attn.output.weight,
            &self.self_attn.output.bias,
            &self.cross_attn.output.weight,
            &self.cross_attn.output.bias,
            &self.ff.outer.weight,
            &self.ff.outer.bias,
        ]
    }
}

/// Stacks `parts` (each `[rows, cols]`) along rows.
pub fn stack_rows(tape: &Tape, parts: &[Var]) -> Result<Var> {
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    tape.concat(parts, Axis::Rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        normal(vec![rows, cols], 1.0, &mut rng)
    }

    #[test]
    fn identical_value_rows_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::init(&mut store, "mha", 8, 2, &mut rng).unwrap();
        let tape = Tape::with_store(&store, Mode::Eval);
        let q = tape.constant(random_input(5, 8, 2)).unwrap();
        let row = random_input(1, 8, 3);
        let mut data = Vec::new();
        for _ in 0..5 {
            data.extend_from_slice(row.data());
        }
        let mem = tape.constant(Tensor::matrix(5, 8, data).unwrap()).unwrap();
        let out = mha.forward(&tape, q, mem, 5, 5, None).unwrap();
        let out = tape.value(out);
        for r in 1..5 {
            for c in 0..8 {
                assert!((out.at(r, c) - out.at(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::init(&mut store, "mha", 8, 4, &mut rng).unwrap();
        let x = random_input(6, 8, 5);
        let perm = [3, 0, 5, 1, 4, 2];
        let mut px = Vec::new();
        for &p in &perm {
            px.extend_from_slice(x.row_slice(p));
        }
        let px = Tensor::matrix(6, 8, px).unwrap();

        let tape = Tape::with_store(&store, Mode::Eval);
        let a = tape.constant(x).unwrap();
        let ya = mha.forward(&tape, a, a, 6, 6, None).unwrap();
        let b = tape.constant(px).unwrap();
        let yb = mha.forward(&tape, b, b, 6, 6, None).unwrap();
        let (ya, yb) = (tape.value(ya).clone(), tape.value(yb).clone());
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..8 {
                assert!((yb.at(i, c) - ya.at(p, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoder_with_zeroed_residual_branches_is_a_norm_cascade() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let block = EncoderBlock::init(&mut store, "enc", 8, 2, 16, 0.1, &mut rng).unwrap();
        for name in block.residual_output_params() {
            store.get_mut(name).unwrap().value.data_mut().fill(0.0);
        }
        let x = random_input(4, 8, 7);
        let tape = Tape::with_store(&store, Mode::Eval);
        let xv = tape.constant(x.clone()).unwrap();
        let y = block.forward(&tape, xv, 4).unwrap();
        let ones = tape.constant(Tensor::filled(vec![1, 8], 1.0)).unwrap();
        let zeros = tape.constant(Tensor::zeros(vec![1, 8])).unwrap();
        let n1 = tape.layer_norm(xv, ones, zeros).unwrap();
        let n2 = tape.layer_norm(n1, ones, zeros).unwrap();
        let (y, n2) = (tape.value(y).clone(), tape.value(n2).clone());
        for (a, b) in y.data().iter().zip(n2.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_mode_blocks_are_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let block = CrossBlock::init(&mut store, "x", 8, 2, 16, 0.1, &mut rng).unwrap();
        let t = random_input(6, 8, 9);
        let m = random_input(6, 8, 10);
        let run = || {
            let tape = Tape::with_store(&store, Mode::Eval);
            let tv = tape.constant(t.clone()).unwrap();
            let mv = tape.constant(m.clone()).unwrap();
            let y = block.forward(&tape, tv, mv, 3).unwrap();
            let out = tape.value(y).clone();
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn cross_block_output_depends_on_memory() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let block = CrossBlock::init(&mut store, "x", 8, 2, 16, 0.0, &mut rng).unwrap();
        let tape = Tape::with_store(&store, Mode::Eval);
        let t = tape.constant(random_input(4, 8, 12)).unwrap();
        let m = tape.input(random_input(4, 8, 13)).unwrap();
        let y = block.forward(&tape, t, m, 4).unwrap();
        let w = tape.constant(random_input(4, 8, 14)).unwrap();
        let s = tape.sum(tape.mul(y, w).unwrap()).unwrap();
        let g = tape.backward(s).unwrap();
        let norm: f64 = g.get(m).unwrap().iter().map(|v| v * v).sum();
        assert!(norm > 1e-12);
    }
}
