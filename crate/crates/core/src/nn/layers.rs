//! Neural layers built from graph ops.

use super::graph::{Graph, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Uniform `+-sqrt(6 / (fan_in + fan_out))` initialization.
pub fn xavier_uniform(rng: &mut Stream, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor<f32> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_in(-bound, bound) as f32).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// `D^-1/2 (A + I) D^-1/2` for an undirected edge list over `n` nodes.
pub fn normalized_adjacency<T: Real>(n: usize, edges: &[(usize, usize)]) -> Result<Tensor<T>> {
    let mut a = vec![0.0f64; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(Error::Graph(format!(
                "edge ({u}, {v}) dangles outside {n} nodes"
            )));
        }
        if u != v {
            a[u * n + v] = 1.0;
            a[v * n + u] = 1.0;
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| a[i * n..(i + 1) * n].iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] /= (deg[i] * deg[j]).sqrt();
        }
    }
    Tensor::from_f64(vec![n, n], &a)
}

/// One graph convolution: `ReLU(adj * h * weight + bias)`.
pub fn graph_conv<T: Real>(g: &mut Graph<T>, h: Var, adj: Var, weight: Var, bias: Var) -> Result<Var> {
    let hw = g.matmul(h, weight)?;
    let agg = g.matmul(adj, hw)?;
    let z = g.add_bias(agg, bias)?;
    Ok(g.relu(z))
}

#[derive(Debug, Clone, Copy)]
pub struct MlpParams {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Two affine layers with a ReLU between them; returns raw logits.
pub fn mlp<T: Real>(g: &mut Graph<T>, x: Var, p: &MlpParams) -> Result<Var> {
    let h = g.matmul(x, p.w1)?;
    let h = g.add_bias(h, p.b1)?;
    let h = g.relu(h);
    let o = g.matmul(h, p.w2)?;
    g.add_bias(o, p.b2)
}

/// Row lookup into a `|V| x d` table.
pub fn embedding<T: Real>(g: &mut Graph<T>, table: Var, ids: &[usize]) -> Result<Var> {
    let (v, _) = g.value(table).dims2("embedding")?;
    if let Some(&bad) = ids.iter().find(|i| **i >= v) {
        return Err(Error::Index {
            what: "embedding id",
            index: bad,
            size: v,
        });
    }
    g.gather_rows(table, ids)
}

#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub embed: Var,
    /// `embed_dim x 4*hidden`, gate blocks ordered input, forget, cell, output.
    pub w_ih: Var,
    /// `hidden x 4*hidden`.
    pub w_hh: Var,
    /// `4*hidden`.
    pub bias: Var,
}

/// Runs an LSTM over a batch of equal-length id sequences and returns the
/// final hidden state of each (`batch x hidden`). Padding is processed like
/// any other token.
pub fn recurrent_encode<T: Real>(g: &mut Graph<T>, p: &LstmParams, seqs: &[Vec<usize>]) -> Result<Var> {
    let len = seqs.first().map(Vec::len).unwrap_or(0);
    if len == 0 || seqs.iter().any(|s| s.len() != len) {
        return Err(Error::Usage(
            "recurrent_encode needs non-empty sequences of equal length".into(),
        ));
    }
    let (hidden, four_h) = g.value(p.w_hh).dims2("lstm")?;
    if four_h != 4 * hidden {
        return Err(Error::Shape {
            op: "lstm",
            left: g.shape(p.w_hh).to_vec(),
            right: vec![hidden, 4 * hidden],
        });
    }
    let batch = seqs.len();
    let mut h = g.constant(Tensor::zeros(vec![batch, hidden]));
    let mut c = g.constant(Tensor::zeros(vec![batch, hidden]));
    let mut ids = vec![0usize; batch];
    for t in 0..len {
        for (slot, s) in ids.iter_mut().zip(seqs) {
            *slot = s[t];
        }
        let x = embedding(g, p.embed, &ids)?;
        let xi = g.matmul(x, p.w_ih)?;
        let hh = g.matmul(h, p.w_hh)?;
        let z = g.add(xi, hh)?;
        let z = g.add_bias(z, p.bias)?;
        let zi = g.slice_cols(z, 0, hidden)?;
        let zf = g.slice_cols(z, hidden, 2 * hidden)?;
        let zg = g.slice_cols(z, 2 * hidden, 3 * hidden)?;
        let zo = g.slice_cols(z, 3 * hidden, 4 * hidden)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        c = g.add(keep, write)?;
        let tc = g.tanh(c);
        h = g.mul(o, tc)?;
    }
    Ok(h)
}

pub const CONV_INPUT: usize = 256;

/// Three `3x3`, stride-2, pad-1 convolutions with ReLU on a `1 x 256 x 256`
/// image; output is `C x 32 x 32`.
pub fn conv_stack<T: Real>(g: &mut Graph<T>, img: Var, layers: &[(Var, Var); 3]) -> Result<Var> {
    if g.shape(img) != [1, CONV_INPUT, CONV_INPUT] {
        return Err(Error::Shape {
            op: "conv_stack",
            left: g.shape(img).to_vec(),
            right: vec![1, CONV_INPUT, CONV_INPUT],
        });
    }
    let mut x = img;
    for (w, b) in layers {
        let y = g.conv2d(x, *w, *b, 2, 1)?;
        x = g.relu(y);
    }
    Ok(x)
}

/// Mean two-class cross-entropy with boolean targets (`true` = class 1).
pub fn cross_entropy<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[bool], weights: Option<&[f64]>) -> Result<Var> {
    let targets: Vec<usize> = labels.iter().map(|l| usize::from(*l)).collect();
    g.cross_entropy(logits, &targets, weights)
}
