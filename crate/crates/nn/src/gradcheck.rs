//! Central finite-difference checks of the reverse sweep.
//!
//! A function under test maps leaf tensors (and optionally the parameters of
//! a store) to any tensor `y`; it is reduced to the scalar `sum(y * w)` with a
//! fixed random `w` so that every output entry contributes. The reported
//! error for one scalar is `|ad - fd| / max(|ad|, |fd|, REL_FLOOR)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{normal, CrossBlock, EncoderBlock, Linear, MultiHeadAttention};
use crate::params::ParamStore;
use crate::tape::{Axis, Mode, Tape, Var};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;
pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const BLOCK_TOL: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub checked: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

pub fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(REL_FLOOR)
}

fn reduce(tape: &Tape, y: Var, weights: &mut Option<Tensor>) -> Result<Var> {
    let shape = tape.shape(y);
    let w = weights
        .get_or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            normal(shape.clone(), 1.0, &mut rng)
        })
        .clone();
    let w = tape.constant(w)?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

/// Maximum relative error between reverse-mode and central-difference
/// gradients over every input entry and every parameter in `store`.
pub fn check<F>(store: &ParamStore, inputs: &[Tensor], mode: Mode, seed: u64, f: F) -> Result<(f64, usize)>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let mut weights = None;
    let eval = |store: &ParamStore, inputs: &[Tensor], weights: &mut Option<Tensor>| -> Result<f64> {
        let tape = Tape::with_store(store, mode).with_dropout_seed(seed);
        let vars = inputs.iter().map(|t| tape.input(t.clone())).collect::<Result<Vec<_>>>()?;
        let y = f(&tape, &vars)?;
        let s = reduce(&tape, y, weights)?;
        let v = tape.value(s).data()[0];
        Ok(v)
    };

    let tape = Tape::with_store(store, mode).with_dropout_seed(seed);
    let vars = inputs.iter().map(|t| tape.input(t.clone())).collect::<Result<Vec<_>>>()?;
    let y = f(&tape, &vars)?;
    let s = reduce(&tape, y, &mut weights)?;
    let grads = tape.backward(s)?;

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (i, t) in inputs.iter().enumerate() {
        let ad = grads.get(vars[i]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let fd = (eval(store, &plus, &mut weights)? - eval(store, &minus, &mut weights)?) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(ad[j], fd));
            checked += 1;
        }
    }
    let param_grads: Vec<(String, Vec<f64>)> =
        grads.params().map(|(n, g)| (n.to_string(), g.to_vec())).collect();
    for name in store.names().map(str::to_string).collect::<Vec<_>>() {
        let ad = param_grads
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| vec![0.0; store.value(&name).map(Tensor::len).unwrap_or(0)]);
        for (j, adj) in ad.iter().enumerate() {
            let mut plus = store.clone();
            plus.get_mut(&name)?.value.data_mut()[j] += FD_STEP;
            let mut minus = store.clone();
            minus.get_mut(&name)?.value.data_mut()[j] -= FD_STEP;
            let fd = (eval(&plus, inputs, &mut weights)? - eval(&minus, inputs, &mut weights)?) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(*adj, fd));
            checked += 1;
        }
    }
    Ok((worst, checked))
}

/// Random `rows x cols` matrix with entries bounded away from zero, so kinked
/// primitives are never probed within a finite-difference step of the kink.
pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = normal(vec![rows, cols], 1.0, rng);
    for v in t.data_mut() {
        if v.abs() < 1e-2 {
            *v = if *v < 0.0 { -0.5 } else { 0.5 };
        }
    }
    t
}

fn report(name: &str, tol: f64, r: Result<(f64, usize)>) -> Result<GradcheckReport> {
    let (max_rel_err, checked) = r?;
    Ok(GradcheckReport { name: name.to_string(), max_rel_err, tolerance: tol, checked })
}

/// Checks every primitive on random 4x7 inputs and every composed block on
/// small random configurations.
pub fn run_suite(seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = |r, c| random_matrix(r, c, &mut rng);
    let empty = ParamStore::new();
    let ev = Mode::Eval;
    let tol = PRIMITIVE_TOL;
    let mut out = Vec::new();

    let a = m(4, 7);
    let b = m(7, 5);
    let c = m(4, 7);
    let row = m(1, 7);
    let gamma = m(1, 7);
    let beta = m(1, 7);
    let target = m(4, 7);

    out.push(report("matmul", tol, check(&empty, &[a.clone(), b], ev, 0, |t, v| t.matmul(v[0], v[1])))?);
    out.push(report("add", tol, check(&empty, &[a.clone(), c.clone()], ev, 0, |t, v| t.add(v[0], v[1])))?);
    out.push(report("add_row", tol, check(&empty, &[a.clone(), row], ev, 0, |t, v| t.add_row(v[0], v[1])))?);
    out.push(report("mul", tol, check(&empty, &[a.clone(), c.clone()], ev, 0, |t, v| t.mul(v[0], v[1])))?);
    out.push(report("scale", tol, check(&empty, &[a.clone()], ev, 0, |t, v| t.scale(v[0], -1.7)))?);
    out.push(report("relu", tol, check(&empty, &[a.clone()], ev, 0, |t, v| t.relu(v[0])))?);
    out.push(report("elu", tol, check(&empty, &[a.clone()], ev, 0, |t, v| t.elu(v[0])))?);
    out.push(report("sigmoid", tol, check(&empty, &[a.clone()], ev, 0, |t, v| t.sigmoid(v[0])))?);
    out.push(report("softmax", tol, check(&empty, &[a.clone()], ev, 0, |t, v| t.softmax(v[0])))?);
    out.push(report(
        "layer_norm",
        tol,
        check(&empty, &[a.clone(), gamma, beta], ev, 0, |t, v| t.layer_norm(v[0], v[1], v[2])),
    )?);
    out.push(report(
        "dropout",
        tol,
        check(&empty, &[a.clone()], Mode::Train, 3, |t, v| t.dropout(v[0], 0.3)),
    )?);
    out.push(report("cumsum", tol, check(&empty, &[a.clone()], ev, 0, |t, v| t.cumsum(v[0])))?);
    out.push(report("mse", tol, check(&empty, &[a.clone(), target], ev, 0, |t, v| t.mse(v[0], v[1])))?);
    out.push(report("sum", tol, check(&empty, &[a.clone()], ev, 0, |t, v| t.sum(v[0])))?);
    out.push(report(
        "concat",
        tol,
        check(&empty, &[a.clone(), c.clone()], ev, 0, |t, v| {
            let cols = t.concat(&[v[0], v[1]], Axis::Cols)?;
            let rows = t.concat(&[v[1], v[0]], Axis::Rows)?;
            let rows = t.reshape(rows, vec![4, 14])?;
            t.mul(cols, rows)
        }),
    )?);
    out.push(report(
        "slice",
        tol,
        check(&empty, &[a.clone()], ev, 0, |t, v| {
            let s = t.slice(v[0], Axis::Cols, 2, 4)?;
            let r = t.slice(v[0], Axis::Rows, 1, 2)?;
            let r = t.reshape(r, vec![2, 7])?;
            let r = t.slice(r, Axis::Cols, 0, 4)?;
            let s = t.slice(s, Axis::Rows, 0, 2)?;
            t.mul(s, r)
        }),
    )?);
    out.push(report("transpose", tol, check(&empty, &[a.clone()], ev, 0, |t, v| t.transpose(v[0])))?);
    out.push(report("reshape", tol, check(&empty, &[a.clone()], ev, 0, |t, v| t.reshape(v[0], vec![7, 4])))?);
    let (q, k, vv) = (m(4, 7), m(4, 7), m(4, 7));
    out.push(report(
        "attention",
        tol,
        check(&empty, &[q, k, vv], ev, 0, |t, v| t.attention(v[0], v[1], v[2], 1, 4, 4, None)),
    )?);
    let (q, k, vv) = (m(8, 8), m(6, 8), m(6, 8));
    let allowed: Vec<bool> = (0..12).map(|i| i % 5 != 1).collect();
    out.push(report(
        "attention_masked_multihead",
        tol,
        check(&empty, &[q, k, vv], ev, 0, |t, v| {
            t.attention(v[0], v[1], v[2], 2, 4, 3, Some(&allowed))
        }),
    )?);

    let btol = BLOCK_TOL;
    let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0xb10c);
    let mut store = ParamStore::new();
    let lin = Linear::init(&mut store, "lin", 7, 5, &mut prng)?;
    let x = random_matrix(4, 7, &mut prng);
    out.push(report("linear", btol, check(&store, &[x], ev, 0, |t, v| lin.forward(t, v[0])))?);

    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::init(&mut store, "mha", 8, 2, &mut prng)?;
    let (x, mem) = (random_matrix(6, 8, &mut prng), random_matrix(6, 8, &mut prng));
    out.push(report(
        "multi_head_attention",
        btol,
        check(&store, &[x, mem], ev, 0, |t, v| mha.forward(t, v[0], v[1], 3, 3, None)),
    )?);

    let mut store = ParamStore::new();
    let enc = EncoderBlock::init(&mut store, "enc", 8, 2, 12, 0.1, &mut prng)?;
    let x = random_matrix(6, 8, &mut prng);
    out.push(report(
        "encoder_block",
        btol,
        check(&store, &[x.clone()], ev, 0, |t, v| enc.forward(t, v[0], 3)),
    )?);
    out.push(report(
        "encoder_block_train_dropout",
        btol,
        check(&store, &[x], Mode::Train, 21, |t, v| enc.forward(t, v[0], 3)),
    )?);

    let mut store = ParamStore::new();
    let cross = CrossBlock::init(&mut store, "cross", 8, 2, 12, 0.1, &mut prng)?;
    let (x, mem) = (random_matrix(6, 8, &mut prng), random_matrix(6, 8, &mut prng));
    out.push(report(
        "cross_block",
        btol,
        check(&store, &[x, mem], ev, 0, |t, v| cross.forward(t, v[0], v[1], 3)),
    )?);
    Ok(out)
}
