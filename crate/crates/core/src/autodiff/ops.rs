//! Operation kernels: forward evaluation and vector-Jacobian products.
//!
//! Every reduction runs in a fixed left-to-right order so repeated runs of
//! the same graph produce bit-identical results.

use super::tensor::Tensor;

/// Operation kind recorded at a graph node.
#[derive(Debug, Clone)]
pub enum Op {
    /// Named leaf. `differentiable: false` marks data that never receives a
    /// gradient (e.g. one-hot targets).
    Leaf { name: String, differentiable: bool },
    /// `[n] -> [n/frame_len, 1, frame_len]`, non-overlapping segmentation.
    Frame { frame_len: usize },
    /// `(x [b,ci,l], w [co,ci,k], bias [co]) -> [b,co,l]`, zero padding keeps
    /// the output length equal to the input length.
    Conv1dSame,
    /// `[b,c,l] -> [b,c,l/pool]`, non-overlapping max windows; remainder
    /// samples are dropped. Ties route to the first maximal element.
    MaxPool { pool: usize },
    Tanh,
    Relu,
    Square,
    Scale(f64),
    /// `[frames,c,l] -> [1,c,frames*l]`: per-frame outputs concatenated along
    /// time within each channel.
    ConcatTime,
    /// `[frames,c,l] -> [frames,c*l]`: one feature vector per frame.
    FlattenFrames,
    /// Any shape -> `[numel]`.
    Flatten,
    /// `(x [n], w [m,n], b [m]) -> [m]`.
    Dense,
    /// `(seq [t,f], wx [4u,f], wh [4u,u], b [4u]) -> [u]`: LSTM over the
    /// sequence, returning the last hidden state. Gate order i,f,g,o.
    LstmLast { units: usize },
    /// `(seq [t,f], u [units,f], w [units,units]) -> [units]`: vanilla tanh
    /// RNN `s_t = tanh(U x_t + W s_{t-1})`, returning the last state.
    TanhRnnLast { units: usize },
    Mean,
    Sum,
    /// `[k] -> [k]`, numerically stable.
    Softmax,
    /// `(logits [k], onehot [k]) -> [1]` cross-entropy; no gradient flows to
    /// the one-hot input.
    SoftmaxCrossEntropy,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Frame { .. } => "frame",
            Op::Conv1dSame => "conv1d_same",
            Op::MaxPool { .. } => "max_pool",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Square => "square",
            Op::Scale(_) => "scale",
            Op::ConcatTime => "concat_time",
            Op::FlattenFrames => "flatten_frames",
            Op::Flatten => "flatten",
            Op::Dense => "dense",
            Op::LstmLast { .. } => "lstm_last",
            Op::TanhRnnLast { .. } => "tanh_rnn_last",
            Op::Mean => "mean",
            Op::Sum => "sum",
            Op::Softmax => "softmax",
            Op::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }

    /// Output shape from input shapes, or a human-readable mismatch message.
    pub fn infer_shape(&self, ins: &[&[usize]]) -> Result<Vec<usize>, String> {
        match self {
            Op::Leaf { .. } => Err("leaf has no inputs".into()),
            Op::Frame { frame_len } => {
                let [x] = expect_arity::<1>(ins)?;
                if x.len() != 1 {
                    return Err(format!("frame expects a vector, got shape {x:?}"));
                }
                if *frame_len == 0 || x[0] % frame_len != 0 {
                    return Err(format!(
                        "input length {} not divisible by frame length {}",
                        x[0], frame_len
                    ));
                }
                Ok(vec![x[0] / frame_len, 1, *frame_len])
            }
            Op::Conv1dSame => {
                let [x, w, b] = expect_arity::<3>(ins)?;
                if x.len() != 3 || w.len() != 3 || b.len() != 1 {
                    return Err(format!(
                        "conv expects (x [b,ci,l], w [co,ci,k], bias [co]), got {x:?} {w:?} {b:?}"
                    ));
                }
                let (ci, co, k) = (w[1], w[0], w[2]);
                if x[1] != ci {
                    return Err(format!("x has {} channels, w expects {}", x[1], ci));
                }
                if b[0] != co {
                    return Err(format!("bias length {} != {} output channels", b[0], co));
                }
                if k == 0 || x[2] == 0 {
                    return Err("empty kernel or input".into());
                }
                Ok(vec![x[0], co, x[2]])
            }
            Op::MaxPool { pool } => {
                let [x] = expect_arity::<1>(ins)?;
                if x.len() != 3 {
                    return Err(format!("max_pool expects [b,c,l], got {x:?}"));
                }
                if *pool == 0 || x[2] / pool == 0 {
                    return Err(format!(
                        "pooling length {} by factor {} yields an empty map",
                        x[2], pool
                    ));
                }
                Ok(vec![x[0], x[1], x[2] / pool])
            }
            Op::Tanh | Op::Relu | Op::Square | Op::Scale(_) => {
                let [x] = expect_arity::<1>(ins)?;
                Ok(x.to_vec())
            }
            Op::ConcatTime => {
                let [x] = expect_arity::<1>(ins)?;
                if x.len() != 3 {
                    return Err(format!("concat_time expects [frames,c,l], got {x:?}"));
                }
                Ok(vec![1, x[1], x[0] * x[2]])
            }
            Op::FlattenFrames => {
                let [x] = expect_arity::<1>(ins)?;
                if x.len() != 3 {
                    return Err(format!("flatten_frames expects [frames,c,l], got {x:?}"));
                }
                Ok(vec![x[0], x[1] * x[2]])
            }
            Op::Flatten => {
                let [x] = expect_arity::<1>(ins)?;
                Ok(vec![x.iter().product()])
            }
            Op::Dense => {
                let [x, w, b] = expect_arity::<3>(ins)?;
                if x.len() != 1 || w.len() != 2 || b.len() != 1 {
                    return Err(format!(
                        "dense expects (x [n], w [m,n], b [m]), got {x:?} {w:?} {b:?}"
                    ));
                }
                if w[1] != x[0] || b[0] != w[0] {
                    return Err(format!(
                        "dense dims disagree: x {}, w {}x{}, b {}",
                        x[0], w[0], w[1], b[0]
                    ));
                }
                Ok(vec![w[0]])
            }
            Op::LstmLast { units } => {
                let [seq, wx, wh, b] = expect_arity::<4>(ins)?;
                let u = *units;
                if seq.len() != 2 {
                    return Err(format!("lstm expects seq [t,f], got {seq:?}"));
                }
                let feat = seq[1];
                if wx != &[4 * u, feat] as &[usize] {
                    return Err(format!("wx shape {wx:?}, expected [{}, {}]", 4 * u, feat));
                }
                if wh != &[4 * u, u] as &[usize] {
                    return Err(format!("wh shape {wh:?}, expected [{}, {}]", 4 * u, u));
                }
                if b != &[4 * u] as &[usize] {
                    return Err(format!("bias shape {b:?}, expected [{}]", 4 * u));
                }
                if seq[0] == 0 {
                    return Err("empty sequence".into());
                }
                Ok(vec![u])
            }
            Op::TanhRnnLast { units } => {
                let [seq, u_m, w_m] = expect_arity::<3>(ins)?;
                let u = *units;
                if seq.len() != 2 || seq[0] == 0 {
                    return Err(format!("rnn expects non-empty seq [t,f], got {seq:?}"));
                }
                if u_m != &[u, seq[1]] as &[usize] {
                    return Err(format!("U shape {u_m:?}, expected [{}, {}]", u, seq[1]));
                }
                if w_m != &[u, u] as &[usize] {
                    return Err(format!("W shape {w_m:?}, expected [{}, {}]", u, u));
                }
                Ok(vec![u])
            }
            Op::Mean | Op::Sum => {
                let [x] = expect_arity::<1>(ins)?;
                if x.iter().product::<usize>() == 0 {
                    return Err("reduction over empty tensor".into());
                }
                Ok(vec![1])
            }
            Op::Softmax => {
                let [x] = expect_arity::<1>(ins)?;
                if x.len() != 1 || x[0] == 0 {
                    return Err(format!("softmax expects a non-empty vector, got {x:?}"));
                }
                Ok(x.to_vec())
            }
            Op::SoftmaxCrossEntropy => {
                let [z, y] = expect_arity::<2>(ins)?;
                if z != y || z.len() != 1 {
                    return Err(format!("logits {z:?} and one-hot {y:?} must both be [k]"));
                }
                Ok(vec![1])
            }
        }
    }

    /// Forward kernel. `out` is pre-sized to the inferred shape.
    pub fn eval(&self, ins: &[&Tensor], out: &mut [f64]) -> Cache {
        match self {
            Op::Leaf { .. } => unreachable!("leaves are bound, not evaluated"),
            Op::Frame { .. } | Op::FlattenFrames | Op::Flatten => {
                out.copy_from_slice(&ins[0].values);
                Cache::None
            }
            Op::Conv1dSame => {
                conv1d_same_forward(ins[0], ins[1], ins[2], out);
                Cache::None
            }
            Op::MaxPool { pool } => Cache::ArgMax(max_pool_forward(ins[0], *pool, out)),
            Op::Tanh => {
                for (o, &v) in out.iter_mut().zip(&ins[0].values) {
                    *o = v.tanh();
                }
                Cache::None
            }
            Op::Relu => {
                for (o, &v) in out.iter_mut().zip(&ins[0].values) {
                    *o = if v > 0.0 { v } else { 0.0 };
                }
                Cache::None
            }
            Op::Square => {
                for (o, &v) in out.iter_mut().zip(&ins[0].values) {
                    *o = v * v;
                }
                Cache::None
            }
            Op::Scale(c) => {
                for (o, &v) in out.iter_mut().zip(&ins[0].values) {
                    *o = c * v;
                }
                Cache::None
            }
            Op::ConcatTime => {
                let (frames, ch, len) = dims3(&ins[0].shape);
                let x = &ins[0].values;
                for f in 0..frames {
                    for c in 0..ch {
                        let src = &x[(f * ch + c) * len..(f * ch + c + 1) * len];
                        out[c * frames * len + f * len..c * frames * len + (f + 1) * len]
                            .copy_from_slice(src);
                    }
                }
                Cache::None
            }
            Op::Dense => {
                dense_forward(ins[0], ins[1], ins[2], out);
                Cache::None
            }
            Op::LstmLast { units } => {
                let cache = lstm_forward(ins[0], ins[1], ins[2], ins[3], *units);
                let t = ins[0].shape[0];
                out.copy_from_slice(&cache.h[t * units..(t + 1) * units]);
                Cache::Lstm(Box::new(cache))
            }
            Op::TanhRnnLast { units } => {
                let states = tanh_rnn_forward(ins[0], ins[1], ins[2], *units);
                let t = ins[0].shape[0];
                out.copy_from_slice(&states[t * units..(t + 1) * units]);
                Cache::States(states)
            }
            Op::Mean => {
                out[0] = left_to_right_sum(&ins[0].values) / ins[0].numel() as f64;
                Cache::None
            }
            Op::Sum => {
                out[0] = left_to_right_sum(&ins[0].values);
                Cache::None
            }
            Op::Softmax => {
                softmax_stable(&ins[0].values, out);
                Cache::None
            }
            Op::SoftmaxCrossEntropy => {
                let mut probs = vec![0.0; ins[0].numel()];
                out[0] = cross_entropy_from_logits(&ins[0].values, &ins[1].values, &mut probs);
                Cache::Probs(probs)
            }
        }
    }

    /// Gradient contribution to each input, given the upstream gradient.
    /// `None` entries mark inputs that receive no gradient.
    pub fn vjp(
        &self,
        ins: &[&Tensor],
        out_values: &[f64],
        out_grad: &[f64],
        cache: &Cache,
    ) -> Vec<Option<Vec<f64>>> {
        match self {
            Op::Leaf { .. } => unreachable!(),
            Op::Frame { .. } | Op::FlattenFrames | Op::Flatten => {
                vec![Some(out_grad.to_vec())]
            }
            Op::Conv1dSame => {
                let (dx, dw, db) = conv1d_same_backward(ins[0], ins[1], out_grad);
                vec![Some(dx), Some(dw), Some(db)]
            }
            Op::MaxPool { .. } => {
                let Cache::ArgMax(idx) = cache else {
                    unreachable!()
                };
                let mut dx = vec![0.0; ins[0].numel()];
                for (j, &src) in idx.iter().enumerate() {
                    dx[src] += out_grad[j];
                }
                vec![Some(dx)]
            }
            Op::Tanh => {
                // tanh' from the cached forward value: 1 - y^2.
                let dx = out_grad
                    .iter()
                    .zip(out_values)
                    .map(|(&g, &y)| g * (1.0 - y * y))
                    .collect();
                vec![Some(dx)]
            }
            Op::Relu => {
                let dx = out_grad
                    .iter()
                    .zip(&ins[0].values)
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                vec![Some(dx)]
            }
            Op::Square => {
                let dx = out_grad
                    .iter()
                    .zip(&ins[0].values)
                    .map(|(&g, &x)| 2.0 * x * g)
                    .collect();
                vec![Some(dx)]
            }
            Op::Scale(c) => vec![Some(out_grad.iter().map(|&g| c * g).collect())],
            Op::ConcatTime => {
                let (frames, ch, len) = dims3(&ins[0].shape);
                let mut dx = vec![0.0; ins[0].numel()];
                for f in 0..frames {
                    for c in 0..ch {
                        dx[(f * ch + c) * len..(f * ch + c + 1) * len].copy_from_slice(
                            &out_grad[c * frames * len + f * len..c * frames * len + (f + 1) * len],
                        );
                    }
                }
                vec![Some(dx)]
            }
            Op::Dense => {
                let (dx, dw, db) = dense_backward(ins[0], ins[1], out_grad);
                vec![Some(dx), Some(dw), Some(db)]
            }
            Op::LstmLast { units } => {
                let Cache::Lstm(cache) = cache else {
                    unreachable!()
                };
                let (dseq, dwx, dwh, db) =
                    lstm_backward(ins[0], ins[1], ins[2], cache, *units, out_grad);
                vec![Some(dseq), Some(dwx), Some(dwh), Some(db)]
            }
            Op::TanhRnnLast { units } => {
                let Cache::States(states) = cache else {
                    unreachable!()
                };
                let (dseq, du, dw) =
                    tanh_rnn_backward(ins[0], ins[1], ins[2], states, *units, out_grad);
                vec![Some(dseq), Some(du), Some(dw)]
            }
            Op::Mean => {
                let g = out_grad[0] / ins[0].numel() as f64;
                vec![Some(vec![g; ins[0].numel()])]
            }
            Op::Sum => vec![Some(vec![out_grad[0]; ins[0].numel()])],
            Op::Softmax => {
                let dot: f64 = out_grad
                    .iter()
                    .zip(out_values)
                    .map(|(&g, &y)| g * y)
                    .fold(0.0, |a, b| a + b);
                let dx = out_grad
                    .iter()
                    .zip(out_values)
                    .map(|(&g, &y)| (g - dot) * y)
                    .collect();
                vec![Some(dx)]
            }
            Op::SoftmaxCrossEntropy => {
                let Cache::Probs(p) = cache else {
                    unreachable!()
                };
                let g = out_grad[0];
                let dz = p
                    .iter()
                    .zip(&ins[1].values)
                    .map(|(&pi, &yi)| g * (pi - yi))
                    .collect();
                vec![Some(dz), None]
            }
        }
    }
}

/// Per-node data saved by the forward pass for use in the backward pass.
#[derive(Debug, Clone, Default)]
pub enum Cache {
    #[default]
    None,
    /// Source index of each pooled maximum.
    ArgMax(Vec<usize>),
    /// RNN states `s_0..s_T`, row-major `[(t+1), units]`.
    States(Vec<f64>),
    Lstm(Box<LstmCache>),
    /// Softmax probabilities.
    Probs(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Hidden states `h_0..h_T`, `[(t+1), units]`.
    pub h: Vec<f64>,
    /// Cell states `c_0..c_T`, `[(t+1), units]`.
    pub c: Vec<f64>,
    /// Gate activations per step, each `[t, units]`.
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    /// `tanh(c_t)` per step, `[t, units]`.
    pub tanh_c: Vec<f64>,
}

fn expect_arity<'a, const N: usize>(ins: &[&'a [usize]]) -> Result<[&'a [usize]; N], String> {
    if ins.len() != N {
        return Err(format!("expected {} inputs, got {}", N, ins.len()));
    }
    let mut out = [ins[0]; N];
    out.copy_from_slice(ins);
    Ok(out)
}

fn dims3(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2])
}

/// Plain sequential sum; the fixed order keeps reductions reproducible.
pub fn left_to_right_sum(xs: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &x in xs {
        acc += x;
    }
    acc
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Left padding for a length-preserving convolution; the remainder (`k - 1 -
/// pad_left`) pads the right.
fn pad_left(k: usize) -> usize {
    (k - 1) / 2
}

fn conv1d_same_forward(x: &Tensor, w: &Tensor, bias: &Tensor, out: &mut [f64]) {
    let (batch, ci, len) = dims3(&x.shape);
    let (co, _, k) = dims3(&w.shape);
    let pl = pad_left(k) as isize;
    for b in 0..batch {
        for o in 0..co {
            let y = &mut out[(b * co + o) * len..(b * co + o + 1) * len];
            y.fill(bias.values[o]);
            for i in 0..ci {
                let xs = &x.values[(b * ci + i) * len..(b * ci + i + 1) * len];
                let ws = &w.values[(o * ci + i) * k..(o * ci + i + 1) * k];
                for (t, &wv) in ws.iter().enumerate() {
                    let shift = t as isize - pl;
                    let p0 = (-shift).max(0) as usize;
                    let p1 = (len as isize - shift).min(len as isize) as usize;
                    if p0 >= p1 {
                        continue;
                    }
                    let q0 = (p0 as isize + shift) as usize;
                    let (yw, xw) = (&mut y[p0..p1], &xs[q0..q0 + (p1 - p0)]);
                    for (yv, &xv) in yw.iter_mut().zip(xw) {
                        *yv += wv * xv;
                    }
                }
            }
        }
    }
}

fn conv1d_same_backward(x: &Tensor, w: &Tensor, dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (batch, ci, len) = dims3(&x.shape);
    let (co, _, k) = dims3(&w.shape);
    let pl = pad_left(k) as isize;
    let mut dx = vec![0.0; x.numel()];
    let mut dw = vec![0.0; w.numel()];
    let mut db = vec![0.0; co];
    for b in 0..batch {
        for o in 0..co {
            let dys = &dy[(b * co + o) * len..(b * co + o + 1) * len];
            db[o] += left_to_right_sum(dys);
            for i in 0..ci {
                let xs = &x.values[(b * ci + i) * len..(b * ci + i + 1) * len];
                let dxs = &mut dx[(b * ci + i) * len..(b * ci + i + 1) * len];
                let ws = &w.values[(o * ci + i) * k..(o * ci + i + 1) * k];
                let dws = &mut dw[(o * ci + i) * k..(o * ci + i + 1) * k];
                for t in 0..k {
                    let shift = t as isize - pl;
                    let p0 = (-shift).max(0) as usize;
                    let p1 = (len as isize - shift).min(len as isize) as usize;
                    if p0 >= p1 {
                        continue;
                    }
                    let q0 = (p0 as isize + shift) as usize;
                    let n = p1 - p0;
                    // dw[t] += <dy, x shifted>; dx[q] += w[t] * dy[p].
                    let mut acc = 0.0;
                    for (&g, &xv) in dys[p0..p1].iter().zip(&xs[q0..q0 + n]) {
                        acc += g * xv;
                    }
                    dws[t] += acc;
                    let wv = ws[t];
                    for (dxv, &g) in dxs[q0..q0 + n].iter_mut().zip(&dys[p0..p1]) {
                        *dxv += wv * g;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// Pooling, dense
// ---------------------------------------------------------------------------

fn max_pool_forward(x: &Tensor, pool: usize, out: &mut [f64]) -> Vec<usize> {
    let (batch, ch, len) = dims3(&x.shape);
    let out_len = len / pool;
    let mut argmax = vec![0usize; out.len()];
    for bc in 0..batch * ch {
        let xs = &x.values[bc * len..(bc + 1) * len];
        for j in 0..out_len {
            let base = j * pool;
            let mut best = base;
            for t in base + 1..base + pool {
                // Strict '>' keeps the first maximal element on ties.
                if xs[t] > xs[best] {
                    best = t;
                }
            }
            out[bc * out_len + j] = xs[best];
            argmax[bc * out_len + j] = bc * len + best;
        }
    }
    argmax
}

fn dense_forward(x: &Tensor, w: &Tensor, bias: &Tensor, out: &mut [f64]) {
    let n = x.numel();
    for (m, o) in out.iter_mut().enumerate() {
        let row = &w.values[m * n..(m + 1) * n];
        let mut acc = bias.values[m];
        for (&wv, &xv) in row.iter().zip(&x.values) {
            acc += wv * xv;
        }
        *o = acc;
    }
}

fn dense_backward(x: &Tensor, w: &Tensor, dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = x.numel();
    let m = dy.len();
    let mut dx = vec![0.0; n];
    let mut dw = vec![0.0; m * n];
    for (j, &g) in dy.iter().enumerate() {
        let row = &w.values[j * n..(j + 1) * n];
        let drow = &mut dw[j * n..(j + 1) * n];
        for i in 0..n {
            dx[i] += g * row[i];
            drow[i] = g * x.values[i];
        }
    }
    (dx, dw, dy.to_vec())
}

// ---------------------------------------------------------------------------
// Recurrent kernels
// ---------------------------------------------------------------------------

fn matvec_into(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (m, o) in out.iter_mut().enumerate() {
        let row = &w[m * n..(m + 1) * n];
        let mut acc = 0.0;
        for (&wv, &xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *o += acc;
    }
}

/// `out[i] += w^T g`, i.e. accumulate columns of `w` weighted by `g`.
fn matvec_transpose_add(w: &[f64], g: &[f64], out: &mut [f64]) {
    let n = out.len();
    for (m, &gv) in g.iter().enumerate() {
        let row = &w[m * n..(m + 1) * n];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += gv * wv;
        }
    }
}

fn outer_add(dst: &mut [f64], g: &[f64], x: &[f64]) {
    let n = x.len();
    for (m, &gv) in g.iter().enumerate() {
        let row = &mut dst[m * n..(m + 1) * n];
        for (r, &xv) in row.iter_mut().zip(x) {
            *r += gv * xv;
        }
    }
}

fn lstm_forward(seq: &Tensor, wx: &Tensor, wh: &Tensor, bias: &Tensor, u: usize) -> LstmCache {
    let (steps, feat) = (seq.shape[0], seq.shape[1]);
    let mut cache = LstmCache {
        h: vec![0.0; (steps + 1) * u],
        c: vec![0.0; (steps + 1) * u],
        i: vec![0.0; steps * u],
        f: vec![0.0; steps * u],
        g: vec![0.0; steps * u],
        o: vec![0.0; steps * u],
        tanh_c: vec![0.0; steps * u],
    };
    let mut z = vec![0.0; 4 * u];
    for t in 0..steps {
        let x_t = &seq.values[t * feat..(t + 1) * feat];
        z.copy_from_slice(&bias.values);
        matvec_into(&wx.values, x_t, &mut z);
        let h_prev = cache.h[t * u..(t + 1) * u].to_vec();
        matvec_into(&wh.values, &h_prev, &mut z);
        for j in 0..u {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[u + j]);
            let g_g = z[2 * u + j].tanh();
            let o_g = sigmoid(z[3 * u + j]);
            let c_new = f_g * cache.c[t * u + j] + i_g * g_g;
            let tc = c_new.tanh();
            cache.i[t * u + j] = i_g;
            cache.f[t * u + j] = f_g;
            cache.g[t * u + j] = g_g;
            cache.o[t * u + j] = o_g;
            cache.c[(t + 1) * u + j] = c_new;
            cache.tanh_c[t * u + j] = tc;
            cache.h[(t + 1) * u + j] = o_g * tc;
        }
    }
    cache
}

fn lstm_backward(
    seq: &Tensor,
    wx: &Tensor,
    wh: &Tensor,
    cache: &LstmCache,
    u: usize,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (steps, feat) = (seq.shape[0], seq.shape[1]);
    let mut dseq = vec![0.0; steps * feat];
    let mut dwx = vec![0.0; wx.numel()];
    let mut dwh = vec![0.0; wh.numel()];
    let mut db = vec![0.0; 4 * u];
    let mut dh = dout.to_vec();
    let mut dc = vec![0.0; u];
    let mut dz = vec![0.0; 4 * u];
    for t in (0..steps).rev() {
        for j in 0..u {
            let (i_g, f_g, g_g, o_g) = (
                cache.i[t * u + j],
                cache.f[t * u + j],
                cache.g[t * u + j],
                cache.o[t * u + j],
            );
            let tc = cache.tanh_c[t * u + j];
            let dc_total = dc[j] + dh[j] * o_g * (1.0 - tc * tc);
            let do_g = dh[j] * tc;
            let di = dc_total * g_g;
            let df = dc_total * cache.c[t * u + j];
            let dg = dc_total * i_g;
            dz[j] = di * i_g * (1.0 - i_g);
            dz[u + j] = df * f_g * (1.0 - f_g);
            dz[2 * u + j] = dg * (1.0 - g_g * g_g);
            dz[3 * u + j] = do_g * o_g * (1.0 - o_g);
            dc[j] = dc_total * f_g;
        }
        let x_t = &seq.values[t * feat..(t + 1) * feat];
        let h_prev = &cache.h[t * u..(t + 1) * u];
        outer_add(&mut dwx, &dz, x_t);
        outer_add(&mut dwh, &dz, h_prev);
        for (b, &z) in db.iter_mut().zip(&dz) {
            *b += z;
        }
        let dx_t = &mut dseq[t * feat..(t + 1) * feat];
        matvec_transpose_add(&wx.values, &dz, dx_t);
        dh.iter_mut().for_each(|v| *v = 0.0);
        matvec_transpose_add(&wh.values, &dz, &mut dh);
    }
    (dseq, dwx, dwh, db)
}

fn tanh_rnn_forward(seq: &Tensor, u_m: &Tensor, w_m: &Tensor, u: usize) -> Vec<f64> {
    let (steps, feat) = (seq.shape[0], seq.shape[1]);
    let mut states = vec![0.0; (steps + 1) * u];
    let mut a = vec![0.0; u];
    for t in 0..steps {
        a.iter_mut().for_each(|v| *v = 0.0);
        matvec_into(&u_m.values, &seq.values[t * feat..(t + 1) * feat], &mut a);
        let prev = states[t * u..(t + 1) * u].to_vec();
        matvec_into(&w_m.values, &prev, &mut a);
        for j in 0..u {
            states[(t + 1) * u + j] = a[j].tanh();
        }
    }
    states
}

fn tanh_rnn_backward(
    seq: &Tensor,
    u_m: &Tensor,
    w_m: &Tensor,
    states: &[f64],
    u: usize,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (steps, feat) = (seq.shape[0], seq.shape[1]);
    let mut dseq = vec![0.0; steps * feat];
    let mut du = vec![0.0; u_m.numel()];
    let mut dw = vec![0.0; w_m.numel()];
    let mut ds = dout.to_vec();
    let mut da = vec![0.0; u];
    for t in (0..steps).rev() {
        for j in 0..u {
            let s = states[(t + 1) * u + j];
            da[j] = ds[j] * (1.0 - s * s);
        }
        let x_t = &seq.values[t * feat..(t + 1) * feat];
        let s_prev = &states[t * u..(t + 1) * u];
        outer_add(&mut du, &da, x_t);
        outer_add(&mut dw, &da, s_prev);
        matvec_transpose_add(&u_m.values, &da, &mut dseq[t * feat..(t + 1) * feat]);
        ds.iter_mut().for_each(|v| *v = 0.0);
        matvec_transpose_add(&w_m.values, &da, &mut ds);
    }
    (dseq, du, dw)
}

// ---------------------------------------------------------------------------
// Softmax heads
// ---------------------------------------------------------------------------

pub fn softmax_stable(z: &[f64], out: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - m).exp();
        denom += *o;
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
}

fn cross_entropy_from_logits(z: &[f64], onehot: &[f64], probs: &mut [f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for (p, &v) in probs.iter_mut().zip(z) {
        *p = (v - m).exp();
        denom += *p;
    }
    let lse = denom.ln() + m;
    let mut loss = 0.0;
    for (j, p) in probs.iter_mut().enumerate() {
        *p /= denom;
        loss -= onehot[j] * (z[j] - lse);
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: &[usize], values: Vec<f64>) -> Tensor {
        Tensor::from_values(shape, values).unwrap()
    }

    /// Direct triple-loop convolution used as an oracle for the shifted
    /// kernel above.
    fn conv_reference(x: &Tensor, w: &Tensor, bias: &Tensor) -> Vec<f64> {
        let (batch, ci, len) = dims3(&x.shape);
        let (co, _, k) = dims3(&w.shape);
        let pl = pad_left(k) as isize;
        let mut out = vec![0.0; batch * co * len];
        for b in 0..batch {
            for o in 0..co {
                for p in 0..len {
                    let mut acc = bias.values[o];
                    for i in 0..ci {
                        for t in 0..k {
                            let q = p as isize + t as isize - pl;
                            if q >= 0 && (q as usize) < len {
                                acc += w.values[(o * ci + i) * k + t]
                                    * x.values[(b * ci + i) * len + q as usize];
                            }
                        }
                    }
                    out[(b * co + o) * len + p] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_reference() {
        let x = tensor(
            &[2, 3, 11],
            (0..66).map(|i| ((i * 37 % 19) as f64 - 9.0) / 7.0).collect(),
        );
        let w = tensor(
            &[4, 3, 5],
            (0..60).map(|i| ((i * 13 % 23) as f64 - 11.0) / 13.0).collect(),
        );
        let b = tensor(&[4], vec![0.1, -0.2, 0.3, 0.0]);
        let mut out = vec![0.0; 2 * 4 * 11];
        conv1d_same_forward(&x, &w, &b, &mut out);
        let reference = conv_reference(&x, &w, &b);
        for (a, r) in out.iter().zip(&reference) {
            assert!((a - r).abs() < 1e-12, "{a} vs {r}");
        }
    }

    #[test]
    fn conv_even_kernel_pads_more_on_the_right() {
        // k=4 -> pad_left 1, pad_right 2.
        let x = tensor(&[1, 1, 4], vec![1.0, 0.0, 0.0, 0.0]);
        let w = tensor(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let b = tensor(&[1], vec![0.0]);
        let mut out = vec![0.0; 4];
        conv1d_same_forward(&x, &w, &b, &mut out);
        // out[p] = sum_t w[t] x[p+t-1]; x = delta at 0.
        assert_eq!(out, vec![2.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn max_pool_tie_routes_to_first() {
        let x = tensor(&[1, 1, 4], vec![0.5, 0.5, 0.2, 0.9]);
        let mut out = vec![0.0; 2];
        let idx = max_pool_forward(&x, 2, &mut out);
        assert_eq!(out, vec![0.5, 0.9]);
        assert_eq!(idx, vec![0, 3]);
    }

    #[test]
    fn max_pool_drops_remainder() {
        let x = tensor(&[1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 9.0]);
        let op = Op::MaxPool { pool: 2 };
        let shape = op.infer_shape(&[&x.shape]).unwrap();
        assert_eq!(shape, vec![1, 1, 2]);
        let mut out = vec![0.0; 2];
        max_pool_forward(&x, 2, &mut out);
        assert_eq!(out, vec![2.0, 4.0]);
    }

    #[test]
    fn softmax_sums_to_one_and_handles_large_logits() {
        let z = vec![1000.0, 1001.0, 999.0];
        let mut p = vec![0.0; 3];
        softmax_stable(&z, &mut p);
        let s = left_to_right_sum(&p);
        assert!((s - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn concat_time_roundtrip() {
        // 2 frames, 2 channels, 3 samples.
        let x = tensor(&[2, 2, 3], (0..12).map(|i| i as f64).collect());
        let op = Op::ConcatTime;
        let mut out = vec![0.0; 12];
        op.eval(&[&x], &mut out);
        // channel 0: frame0 [0,1,2], frame1 [6,7,8]; channel 1: [3,4,5],[9,10,11].
        assert_eq!(
            out,
            vec![0.0, 1.0, 2.0, 6.0, 7.0, 8.0, 3.0, 4.0, 5.0, 9.0, 10.0, 11.0]
        );
        let grads = op.vjp(&[&x], &out, &out, &Cache::None);
        assert_eq!(grads[0].as_ref().unwrap(), &x.values);
    }

    #[test]
    fn cross_entropy_matches_log_softmax() {
        let z = vec![0.3, -1.2, 2.0];
        let onehot = vec![0.0, 0.0, 1.0];
        let mut p = vec![0.0; 3];
        let loss = cross_entropy_from_logits(&z, &onehot, &mut p);
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        assert!((loss + (z[2].exp() / denom).ln()).abs() < 1e-12);
    }
}
