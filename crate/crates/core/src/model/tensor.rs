//! Minimal reverse-mode autodiff over row-major 2-D `f64` tensors. A
//! [`Tape`] records each op with whatever it needs for the backward pass;
//! parameters enter as leaves tagged with their index in the store.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
}

impl Param {
    pub fn zeros(name: &str, rows: usize, cols: usize) -> Self {
        Param { name: name.to_string(), rows, cols, value: vec![0.0; rows * cols] }
    }

    pub fn filled(name: &str, rows: usize, cols: usize, v: f64) -> Self {
        Param { name: name.to_string(), rows, cols, value: vec![v; rows * cols] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu(Var),
    Scale(Var, Vec<f64>),
    Gather { table: Var, rows: Vec<usize> },
    Assemble(Vec<(Var, Vec<usize>)>),
    Attention { qkv: Var, batch: usize, seq: usize, heads: usize, probs: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64> },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

/// C = A·B for row-major matrices with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every caller passes slices that cover the strided extents of
    // an m×k, k×n and m×n matrix respectively; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc);
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    let s = (2.0 / PI).sqrt();
    0.5 * x * (1.0 + (s * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let s = (2.0 / PI).sqrt();
    let u = s * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * GELU_C * x * x)
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn input(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols, "input shape mismatch");
        self.push(rows, cols, value, Op::Leaf)
    }

    pub fn param(&mut self, index: usize, p: &Param) -> Var {
        self.push(p.rows, p.cols, p.value.clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), k as isize, 1, self.value(b), n as isize, 1, 0.0, &mut out, n as isize, 1);
        self.push(m, n, out, Op::MatMul(a, b))
    }

    /// Adds a `[1, n]` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (m, n) = self.shape(x);
        assert_eq!(self.shape(b), (1, n), "bias shape mismatch");
        let bv = self.value(b);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(n) {
            for (o, bb) in row.iter_mut().zip(bv) {
                *o += bb;
            }
        }
        self.push(m, n, out, Op::AddRow(x, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(m, n, out, Op::Add(a, b))
    }

    /// `x·W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (m, n) = self.shape(x);
        assert_eq!(self.shape(gamma), (1, n));
        assert_eq!(self.shape(beta), (1, n));
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        self.push(m, n, out, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let out = self.value(x).iter().map(|&v| gelu(v)).collect();
        self.push(m, n, out, Op::Gelu(x))
    }

    /// Inverted dropout; identity when `p == 0` or no rng is given.
    pub fn dropout(&mut self, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
        let Some(rng) = rng.filter(|_| p > 0.0) else { return x };
        let (m, n) = self.shape(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..m * n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let out = self.value(x).iter().zip(&mask).map(|(v, s)| v * s).collect();
        self.push(m, n, out, Op::Scale(x, mask))
    }

    /// Rows of `table` picked by index.
    pub fn gather(&mut self, table: Var, rows: Vec<usize>) -> Var {
        let (tr, n) = self.shape(table);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in &rows {
            assert!(r < tr, "gather row {r} out of range {tr}");
            out.extend_from_slice(&tv[r * n..(r + 1) * n]);
        }
        self.push(rows.len(), n, out, Op::Gather { table, rows })
    }

    /// Builds a `[rows, cols]` tensor whose row `dest[i]` is row `i` of the
    /// corresponding part. Rows not covered stay zero.
    pub fn assemble(&mut self, rows: usize, cols: usize, parts: Vec<(Var, Vec<usize>)>) -> Var {
        let mut out = vec![0.0; rows * cols];
        for (v, dest) in &parts {
            let (pr, pc) = self.shape(*v);
            assert_eq!(pc, cols, "assemble column mismatch");
            assert_eq!(pr, dest.len(), "assemble row mismatch");
            let pv = self.value(*v);
            for (i, &d) in dest.iter().enumerate() {
                out[d * cols..(d + 1) * cols].copy_from_slice(&pv[i * cols..(i + 1) * cols]);
            }
        }
        self.push(rows, cols, out, Op::Assemble(parts))
    }

    /// Causal multi-head self-attention over `batch` sequences of length
    /// `seq`. `qkv` is `[batch*seq, 3d]` holding queries, keys and values;
    /// keys with `key_valid == false` are hidden from every query.
    pub fn attention(&mut self, qkv: Var, batch: usize, seq: usize, heads: usize, key_valid: &[bool]) -> Var {
        let (rows, three_d) = self.shape(qkv);
        assert_eq!(rows, batch * seq);
        assert_eq!(key_valid.len(), rows);
        let d = three_d / 3;
        assert_eq!(d % heads, 0);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let x = self.value(qkv);
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; rows * d];
        let mut scores = vec![0.0; seq * seq];
        for b in 0..batch {
            let base = b * seq * three_d;
            for h in 0..heads {
                let q = &x[base + h * dh..];
                let k = &x[base + d + h * dh..];
                gemm(seq, dh, seq, q, three_d as isize, 1, k, 1, three_d as isize, 0.0, &mut scores, seq as isize, 1);
                let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                for i in 0..seq {
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..=i {
                        if key_valid[b * seq + j] {
                            max = max.max(scores[i * seq + j] * scale);
                        }
                    }
                    let mut sum = 0.0;
                    for j in 0..seq {
                        let e = if j <= i && key_valid[b * seq + j] { (scores[i * seq + j] * scale - max).exp() } else { 0.0 };
                        p[i * seq + j] = e;
                        sum += e;
                    }
                    if sum > 0.0 {
                        for j in 0..=i {
                            p[i * seq + j] /= sum;
                        }
                    }
                }
                let v = &x[base + 2 * d + h * dh..];
                let o = &mut out[b * seq * d + h * dh..];
                gemm(seq, seq, dh, p, seq as isize, 1, v, three_d as isize, 1, 0.0, o, d as isize, 1);
            }
        }
        self.push(rows, d, out, Op::Attention { qkv, batch, seq, heads, probs })
    }

    /// Weighted mean cross-entropy of `logits` rows against `targets`.
    /// Rows with zero weight contribute nothing.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>, weights: Vec<f64>) -> Var {
        let (m, n) = self.shape(logits);
        assert_eq!(targets.len(), m);
        assert_eq!(weights.len(), m);
        let lv = self.value(logits);
        let mut probs = vec![0.0; m * n];
        let mut total = 0.0;
        let wsum: f64 = weights.iter().sum();
        for r in 0..m {
            let row = &lv[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for c in 0..n {
                probs[r * n + c] = (row[c] - max).exp() / sum;
            }
            if weights[r] != 0.0 {
                total += weights[r] * -(row[targets[r]] - max - sum.ln());
            }
        }
        let loss = if wsum > 0.0 { total / wsum } else { 0.0 };
        self.push(1, 1, vec![loss], Op::CrossEntropy { logits, targets, weights, probs })
    }

    /// Backpropagates from the scalar `loss`; returns one gradient per
    /// parameter index in `0..n_params` (zeros for unused parameters).
    pub fn backward(&self, loss: Var, n_params: usize) -> Vec<Vec<f64>> {
        assert_eq!(self.shape(loss), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut param_grads: Vec<Vec<f64>> = vec![Vec::new(); n_params];

        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
            let len = nodes[v.0].value.len();
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let (m, n) = (node.rows, node.cols);
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => {
                    let pg = &mut param_grads[*p];
                    if pg.is_empty() {
                        *pg = g;
                    } else {
                        for (a, b) in pg.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let k = self.nodes[a.0].cols;
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // dA = dC · Bᵀ
                    let ga = acc(&mut grads, &self.nodes, *a);
                    gemm(m, n, k, &g, n as isize, 1, bv, 1, n as isize, 1.0, ga, k as isize, 1);
                    // dB = Aᵀ · dC
                    let gb = acc(&mut grads, &self.nodes, *b);
                    gemm(k, m, n, av, 1, k as isize, &g, n as isize, 1, 1.0, gb, n as isize, 1);
                }
                Op::AddRow(x, b) => {
                    let gx = acc(&mut grads, &self.nodes, *x);
                    for (a, v) in gx.iter_mut().zip(&g) {
                        *a += v;
                    }
                    let gb = acc(&mut grads, &self.nodes, *b);
                    for row in g.chunks(n) {
                        for (a, v) in gb.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        let gv = acc(&mut grads, &self.nodes, *v);
                        for (x, y) in gv.iter_mut().zip(&g) {
                            *x += y;
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let gam = self.value(*gamma).to_vec();
                    let mut dgamma = vec![0.0; n];
                    let mut dbeta = vec![0.0; n];
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for c in 0..n {
                            dgamma[c] += gr[c] * hr[c];
                            dbeta[c] += gr[c];
                            let dh = gr[c] * gam[c];
                            sum_d += dh;
                            sum_dh += dh * hr[c];
                        }
                        let nf = n as f64;
                        for c in 0..n {
                            let dh = gr[c] * gam[c];
                            dx[r * n + c] = rstd[r] * (dh - sum_d / nf - hr[c] * sum_dh / nf);
                        }
                    }
                    for (v, d) in [(*x, dx), (*gamma, dgamma), (*beta, dbeta)] {
                        let gv = acc(&mut grads, &self.nodes, v);
                        for (a, b) in gv.iter_mut().zip(&d) {
                            *a += b;
                        }
                    }
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let gx = acc(&mut grads, &self.nodes, *x);
                    for i in 0..g.len() {
                        gx[i] += g[i] * gelu_grad(xv[i]);
                    }
                }
                Op::Scale(x, s) => {
                    let gx = acc(&mut grads, &self.nodes, *x);
                    for i in 0..g.len() {
                        gx[i] += g[i] * s[i];
                    }
                }
                Op::Gather { table, rows } => {
                    let gt = acc(&mut grads, &self.nodes, *table);
                    for (i, &r) in rows.iter().enumerate() {
                        for c in 0..n {
                            gt[r * n + c] += g[i * n + c];
                        }
                    }
                }
                Op::Assemble(parts) => {
                    for (v, dest) in parts {
                        let gv = acc(&mut grads, &self.nodes, *v);
                        for (i, &d) in dest.iter().enumerate() {
                            for c in 0..n {
                                gv[i * n + c] += g[d * n + c];
                            }
                        }
                    }
                }
                Op::Attention { qkv, batch, seq, heads, probs } => {
                    let (batch, seq, heads) = (*batch, *seq, *heads);
                    let d = n;
                    let three_d = 3 * d;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let x = self.value(*qkv).to_vec();
                    let gq = acc(&mut grads, &self.nodes, *qkv);
                    let mut dp = vec![0.0; seq * seq];
                    for b in 0..batch {
                        let base = b * seq * three_d;
                        for h in 0..heads {
                            let p = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                            let go = &g[b * seq * d + h * dh..];
                            let v = &x[base + 2 * d + h * dh..];
                            // dP = dO · Vᵀ
                            gemm(seq, dh, seq, go, d as isize, 1, v, 1, three_d as isize, 0.0, &mut dp, seq as isize, 1);
                            // dV = Pᵀ · dO
                            gemm(
                                seq,
                                seq,
                                dh,
                                p,
                                1,
                                seq as isize,
                                go,
                                d as isize,
                                1,
                                1.0,
                                &mut gq[base + 2 * d + h * dh..],
                                three_d as isize,
                                1,
                            );
                            // dS = P ∘ (dP − rowsum(dP ∘ P)), folded with the scale.
                            for i in 0..seq {
                                let dot: f64 = (0..=i).map(|j| dp[i * seq + j] * p[i * seq + j]).sum();
                                for j in 0..seq {
                                    dp[i * seq + j] =
                                        if j <= i { p[i * seq + j] * (dp[i * seq + j] - dot) * scale } else { 0.0 };
                                }
                            }
                            let q = &x[base + h * dh..];
                            let k = &x[base + d + h * dh..];
                            // dQ = dS · K
                            gemm(seq, seq, dh, &dp, seq as isize, 1, k, three_d as isize, 1, 1.0, &mut gq[base + h * dh..], three_d as isize, 1);
                            // dK = dSᵀ · Q
                            gemm(
                                seq,
                                seq,
                                dh,
                                &dp,
                                1,
                                seq as isize,
                                q,
                                three_d as isize,
                                1,
                                1.0,
                                &mut gq[base + d + h * dh..],
                                three_d as isize,
                                1,
                            );
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, weights, probs } => {
                    let (lm, ln) = self.shape(*logits);
                    let wsum: f64 = weights.iter().sum();
                    if wsum > 0.0 {
                        let gl = acc(&mut grads, &self.nodes, *logits);
                        for r in 0..lm {
                            let w = weights[r] * g[0] / wsum;
                            if w == 0.0 {
                                continue;
                            }
                            for c in 0..ln {
                                let y = if c == targets[r] { 1.0 } else { 0.0 };
                                gl[r * ln + c] += w * (probs[r * ln + c] - y);
                            }
                        }
                    }
                }
            }
        }
        for (i, pg) in param_grads.iter_mut().enumerate() {
            if pg.is_empty() {
                // Unused parameter: report a zero gradient of the right size.
                let len = self
                    .nodes
                    .iter()
                    .find_map(|nd| match nd.op {
                        Op::Param(p) if p == i => Some(nd.value.len()),
                        _ => None,
                    })
                    .unwrap_or(0);
                *pg = vec![0.0; len];
            }
        }
        param_grads
    }
}
