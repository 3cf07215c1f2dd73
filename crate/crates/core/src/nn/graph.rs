//! Reverse-mode autodiff over sequence-level layer ops.
//!
//! Every node holds a `[rows, cols]` matrix; sequence nodes have one row per
//! frame. Ops that combine a sequence with a single-row node broadcast the
//! single row over time and sum its gradient back over time.

use super::kernels::{
    axpy, dot, matmul_nn_add, matmul_nt_add, matvec_add, matvec_t_add, outer_add, outer_sum_add,
    sigmoid,
};
use super::tensor::{Gradients, ParamId, ParameterSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

/// Parameter handles for one LSTM layer: `w_ih [4H, in]`, `w_hh [4H, H]`,
/// `b [4H]`, gate order input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmIds {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
}

impl LstmIds {
    pub fn lookup(params: &ParameterSet, prefix: &str) -> Result<Self> {
        Ok(Self {
            w_ih: params.expect_id(&format!("{prefix}.w_ih"))?,
            w_hh: params.expect_id(&format!("{prefix}.w_hh"))?,
            b: params.expect_id(&format!("{prefix}.b"))?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AffineIds {
    pub w: ParamId,
    pub b: ParamId,
}

impl AffineIds {
    pub fn lookup(params: &ParameterSet, prefix: &str) -> Result<Self> {
        Ok(Self {
            w: params.expect_id(&format!("{prefix}.w"))?,
            b: params.expect_id(&format!("{prefix}.b"))?,
        })
    }
}

#[derive(Debug)]
pub(crate) struct LstmCache {
    /// `[T, 4H]` post-activation gates.
    gates: Vec<f64>,
    /// `[T, H]` cell states.
    cells: Vec<f64>,
    /// `[T, H]` tanh of cell states.
    tanh_c: Vec<f64>,
    h0: Vec<f64>,
    c0: Vec<f64>,
}

/// Runs one LSTM layer over `x` (`[T, in]`). Returns outputs `[T, H]`,
/// the cache for backprop and the final cell state.
pub(crate) fn lstm_run(
    x: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    b: &Tensor,
    h0: &[f64],
    c0: &[f64],
) -> Result<(Tensor, LstmCache, Vec<f64>)> {
    let h = w_hh.cols();
    let n_in = x.cols();
    if w_ih.shape() != [4 * h, n_in] {
        return Err(Error::shape(
            "lstm w_ih",
            format!("[{}, {}]", 4 * h, n_in),
            format!("{:?}", w_ih.shape()),
        ));
    }
    if w_hh.shape() != [4 * h, h] || b.len() != 4 * h {
        return Err(Error::shape(
            "lstm w_hh/b",
            format!("[{}, {}] / {}", 4 * h, h, 4 * h),
            format!("{:?} / {}", w_hh.shape(), b.len()),
        ));
    }
    if h0.len() != h || c0.len() != h {
        return Err(Error::shape("lstm initial state", h, h0.len().max(c0.len())));
    }
    let t_len = x.rows();
    let mut out = Tensor::zeros(&[t_len, h]);
    let mut gates = vec![0.0; t_len * 4 * h];
    let mut cells = vec![0.0; t_len * h];
    let mut tanh_c = vec![0.0; t_len * h];
    let mut h_prev = h0.to_vec();
    let mut c_prev = c0.to_vec();
    for z in gates.chunks_exact_mut(4 * h) {
        z.copy_from_slice(b.data());
    }
    if n_in > 0 {
        matmul_nt_add(x.data(), w_ih.data(), n_in, &mut gates);
    }
    for t in 0..t_len {
        let z = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        matvec_add(w_hh.data(), &h_prev, z);
        let (zi, rest) = z.split_at_mut(h);
        let (zf, rest) = rest.split_at_mut(h);
        let (zg, zo) = rest.split_at_mut(h);
        let c = &mut cells[t * h..(t + 1) * h];
        let tc = &mut tanh_c[t * h..(t + 1) * h];
        let hr = out.row_mut(t);
        for j in 0..h {
            let i = sigmoid(zi[j]);
            let f = sigmoid(zf[j]);
            let g = zg[j].tanh();
            let o = sigmoid(zo[j]);
            zi[j] = i;
            zf[j] = f;
            zg[j] = g;
            zo[j] = o;
            c[j] = f * c_prev[j] + i * g;
            tc[j] = c[j].tanh();
            hr[j] = o * tc[j];
        }
        h_prev.copy_from_slice(hr);
        c_prev.copy_from_slice(c);
    }
    let cache = LstmCache {
        gates,
        cells,
        tanh_c,
        h0: h0.to_vec(),
        c0: c0.to_vec(),
    };
    Ok((out, cache, c_prev))
}

#[allow(clippy::too_many_arguments)]
fn lstm_backward(
    x: &Tensor,
    out: &Tensor,
    cache: &LstmCache,
    w_ih: &Tensor,
    w_hh: &Tensor,
    d_out: &Tensor,
    g_w_ih: &mut [f64],
    g_w_hh: &mut [f64],
    g_b: &mut [f64],
    d_x: &mut Tensor,
) {
    let h = w_hh.cols();
    let t_len = x.rows();
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz_all = vec![0.0; t_len * 4 * h];
    for t in (0..t_len).rev() {
        let dz = &mut dz_all[t * 4 * h..(t + 1) * 4 * h];
        let gates = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
        let tc = &cache.tanh_c[t * h..(t + 1) * h];
        let c_prev = if t > 0 {
            &cache.cells[(t - 1) * h..t * h]
        } else {
            &cache.c0[..]
        };
        let dh_row = d_out.row(t);
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let dh = dh_row[j] + dh_next[j];
            let d_o = dh * tc[j];
            let dc = dh * o * (1.0 - tc[j] * tc[j]) + dc_next[j];
            dz[j] = dc * g * i * (1.0 - i);
            dz[h + j] = dc * c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dc * i * (1.0 - g * g);
            dz[3 * h + j] = d_o * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_add(w_hh.data(), dz, &mut dh_next);
        axpy(1.0, dz, g_b);
    }
    let n_in = x.cols();
    if t_len == 0 {
        return;
    }
    if n_in > 0 {
        outer_sum_add(g_w_ih, &dz_all, x.data(), n_in);
        matmul_nn_add(&dz_all, w_ih.data(), n_in, d_x.data_mut());
    }
    // previous outputs, with h0 in front
    let mut h_prev = Vec::with_capacity(t_len * h);
    h_prev.extend_from_slice(&cache.h0);
    h_prev.extend_from_slice(&out.data()[..t_len.saturating_sub(1) * h]);
    outer_sum_add(g_w_hh, &dz_all, &h_prev, h);
}

#[derive(Debug)]
enum Op {
    Input,
    Lstm {
        x: Var,
        ids: LstmIds,
        cache: LstmCache,
    },
    Affine {
        x: Var,
        ids: AffineIds,
        act: Activation,
    },
    Concat {
        parts: Vec<Var>,
    },
    Film {
        h: Var,
        cond: Var,
        gamma_offset: f64,
    },
    Cosine {
        a: Var,
        b: Var,
    },
    MeanRows {
        x: Var,
    },
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation over a borrowed parameter set.
#[derive(Debug)]
pub struct Graph<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
}

const NORM_EPS: f64 = 1e-12;

/// Row of `t` used when broadcasting a possibly single-row node over time.
#[inline]
fn bcast_row(t: &Tensor, i: usize) -> &[f64] {
    if t.rows() == 1 {
        t.row(0)
    } else {
        t.row(i)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant leaf; a vector is promoted to a single row.
    pub fn input(&mut self, t: Tensor) -> Var {
        let t = if t.shape().len() == 1 {
            Tensor::row_vector(t.into_data())
        } else {
            t
        };
        self.push(t, Op::Input)
    }

    /// LSTM layer over a `[T, in]` sequence from zero initial state.
    pub fn lstm(&mut self, x: Var, ids: LstmIds) -> Result<Var> {
        let p = self.params;
        let h = p.get(ids.w_hh).cols();
        let zeros = vec![0.0; h];
        let (out, cache, _) = lstm_run(
            self.value(x),
            p.get(ids.w_ih),
            p.get(ids.w_hh),
            p.get(ids.b),
            &zeros,
            &zeros,
        )?;
        Ok(self.push(out, Op::Lstm { x, ids, cache }))
    }

    /// Row-wise `act(x W^T + b)`.
    pub fn affine(&mut self, x: Var, ids: AffineIds, act: Activation) -> Result<Var> {
        let w = self.params.get(ids.w);
        let b = self.params.get(ids.b);
        let xv = self.value(x);
        if w.shape().len() != 2 || w.cols() != xv.cols() || b.len() != w.rows() {
            return Err(Error::shape(
                "affine",
                format!("w [_, {}] with matching bias", xv.cols()),
                format!("w {:?}, b {:?}", w.shape(), b.shape()),
            ));
        }
        let mut out = Tensor::zeros(&[xv.rows(), w.rows()]);
        for t in 0..xv.rows() {
            let row = out.row_mut(t);
            row.copy_from_slice(b.data());
            matvec_add(w.data(), xv.row(t), row);
            if act == Activation::Tanh {
                row.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        Ok(self.push(out, Op::Affine { x, ids, act }))
    }

    /// Feature-wise concatenation; single-row parts broadcast over time.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.iter().map(|&p| self.value(p).rows()).max().unwrap_or(0);
        for &p in parts {
            let r = self.value(p).rows();
            if r != rows && r != 1 {
                return Err(Error::shape("concat rows", rows, r));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(&[rows, cols]);
        for t in 0..rows {
            let mut off = 0;
            let row = out.row_mut(t);
            for &p in parts {
                let src = bcast_row(&self.nodes[p.0].value, t);
                row[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// FiLM: `(gamma_offset + gamma) * h + beta`, with `cond = [gamma | beta]`
    /// either per frame or a single broadcast row.
    pub fn film(&mut self, h: Var, cond: Var, gamma_offset: f64) -> Result<Var> {
        let hv = self.value(h);
        let cv = self.value(cond);
        let d = hv.cols();
        if cv.cols() != 2 * d || (cv.rows() != 1 && cv.rows() != hv.rows()) {
            return Err(Error::shape(
                "film conditioning",
                format!("[{} or 1, {}]", hv.rows(), 2 * d),
                format!("{:?}", cv.shape()),
            ));
        }
        let mut out = Tensor::zeros(&[hv.rows(), d]);
        for t in 0..hv.rows() {
            let c = bcast_row(cv, t);
            let (gamma, beta) = c.split_at(d);
            let hr = hv.row(t);
            for (j, o) in out.row_mut(t).iter_mut().enumerate() {
                *o = (gamma_offset + gamma[j]) * hr[j] + beta[j];
            }
        }
        Ok(self.push(
            out,
            Op::Film {
                h,
                cond,
                gamma_offset,
            },
        ))
    }

    /// Row-wise cosine similarity, `[T, 1]`; either side may be one row.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let rows = av.rows().max(bv.rows());
        if av.cols() != bv.cols()
            || (av.rows() != rows && av.rows() != 1)
            || (bv.rows() != rows && bv.rows() != 1)
        {
            return Err(Error::shape(
                "cosine",
                format!("{:?}", av.shape()),
                format!("{:?}", bv.shape()),
            ));
        }
        let mut out = Tensor::zeros(&[rows, 1]);
        for t in 0..rows {
            let (x, y) = (bcast_row(av, t), bcast_row(bv, t));
            let nx = dot(x, x).sqrt().max(NORM_EPS);
            let ny = dot(y, y).sqrt().max(NORM_EPS);
            out.row_mut(t)[0] = dot(x, y) / (nx * ny);
        }
        Ok(self.push(out, Op::Cosine { a, b }))
    }

    /// Mean over rows, `[1, cols]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() == 0 {
            return Err(Error::Usage("mean over an empty sequence".into()));
        }
        let mut out = vec![0.0; xv.cols()];
        for t in 0..xv.rows() {
            axpy(1.0, xv.row(t), &mut out);
        }
        let n = xv.rows() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        Ok(self.push(Tensor::row_vector(out), Op::MeanRows { x }))
    }

    /// Mean over rows of `-log softmax(logits_t)[label_t]`, `[1, 1]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if labels.len() != lv.rows() || lv.rows() == 0 {
            return Err(Error::shape("cross-entropy labels", lv.rows(), labels.len()));
        }
        let c = lv.cols();
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut probs = Tensor::zeros(lv.shape());
        let mut loss = 0.0;
        for (t, &label) in labels.iter().enumerate() {
            let (p, nll) = softmax_nll(lv.row(t), label);
            probs.row_mut(t).copy_from_slice(&p);
            loss += nll;
        }
        loss /= labels.len() as f64;
        Ok(self.push(
            Tensor::row_vector(vec![loss]),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse pass from a scalar node. Parameters not reached get zero
    /// gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(Error::Usage("backward on a node that was never recorded".into()));
        };
        if node.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        let p = self.params;
        let mut grads = p.zeros_like();
        let mut node_grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[loss.0] = Some(Tensor::filled(node.value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = node_grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Lstm { x, ids, cache } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.shape());
                    let (w_ih, w_hh) = (p.get(ids.w_ih), p.get(ids.w_hh));
                    let mut gw_ih = std::mem::replace(grads.get_mut(ids.w_ih), Tensor::zeros(&[0]));
                    let mut gw_hh = std::mem::replace(grads.get_mut(ids.w_hh), Tensor::zeros(&[0]));
                    lstm_backward(
                        xv,
                        &node.value,
                        cache,
                        w_ih,
                        w_hh,
                        &g,
                        gw_ih.data_mut(),
                        gw_hh.data_mut(),
                        grads.get_mut(ids.b).data_mut(),
                        &mut dx,
                    );
                    *grads.get_mut(ids.w_ih) = gw_ih;
                    *grads.get_mut(ids.w_hh) = gw_hh;
                    accumulate(&mut node_grads, *x, dx);
                }
                Op::Affine { x, ids, act } => {
                    let xv = self.value(*x);
                    let w = p.get(ids.w);
                    let mut dx = Tensor::zeros(xv.shape());
                    let mut dpre = vec![0.0; w.rows()];
                    for t in 0..xv.rows() {
                        let y = node.value.row(t);
                        for (j, d) in dpre.iter_mut().enumerate() {
                            *d = match act {
                                Activation::Identity => g.row(t)[j],
                                Activation::Tanh => g.row(t)[j] * (1.0 - y[j] * y[j]),
                            };
                        }
                        outer_add(grads.get_mut(ids.w).data_mut(), &dpre, xv.row(t));
                        axpy(1.0, &dpre, grads.get_mut(ids.b).data_mut());
                        matvec_t_add(w.data(), &dpre, dx.row_mut(t));
                    }
                    accumulate(&mut node_grads, *x, dx);
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for &part in parts {
                        let pv = self.value(part);
                        let w = pv.cols();
                        let mut dp = Tensor::zeros(pv.shape());
                        for t in 0..g.rows() {
                            let src = &g.row(t)[off..off + w];
                            let dst = if pv.rows() == 1 { dp.row_mut(0) } else { dp.row_mut(t) };
                            axpy(1.0, src, dst);
                        }
                        off += w;
                        accumulate(&mut node_grads, part, dp);
                    }
                }
                Op::Film {
                    h,
                    cond,
                    gamma_offset,
                } => {
                    let hv = self.value(*h);
                    let cv = self.value(*cond);
                    let d = hv.cols();
                    let mut dh = Tensor::zeros(hv.shape());
                    let mut dc = Tensor::zeros(cv.shape());
                    for t in 0..hv.rows() {
                        let c = bcast_row(cv, t);
                        let gr = g.row(t);
                        let hr = hv.row(t);
                        for j in 0..d {
                            dh.row_mut(t)[j] = gr[j] * (gamma_offset + c[j]);
                        }
                        let dcr = if cv.rows() == 1 { dc.row_mut(0) } else { dc.row_mut(t) };
                        for j in 0..d {
                            dcr[j] += gr[j] * hr[j];
                            dcr[d + j] += gr[j];
                        }
                    }
                    accumulate(&mut node_grads, *h, dh);
                    accumulate(&mut node_grads, *cond, dc);
                }
                Op::Cosine { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = Tensor::zeros(av.shape());
                    let mut db = Tensor::zeros(bv.shape());
                    for t in 0..g.rows() {
                        let (x, y) = (bcast_row(av, t), bcast_row(bv, t));
                        let nx = dot(x, x).sqrt().max(NORM_EPS);
                        let ny = dot(y, y).sqrt().max(NORM_EPS);
                        let cos = node.value.row(t)[0];
                        let go = g.row(t)[0];
                        let dar = if av.rows() == 1 { da.row_mut(0) } else { da.row_mut(t) };
                        for j in 0..x.len() {
                            dar[j] += go * (y[j] / (nx * ny) - cos * x[j] / (nx * nx));
                        }
                        let dbr = if bv.rows() == 1 { db.row_mut(0) } else { db.row_mut(t) };
                        for j in 0..y.len() {
                            dbr[j] += go * (x[j] / (nx * ny) - cos * y[j] / (ny * ny));
                        }
                    }
                    accumulate(&mut node_grads, *a, da);
                    accumulate(&mut node_grads, *b, db);
                }
                Op::MeanRows { x } => {
                    let xv = self.value(*x);
                    let n = xv.rows() as f64;
                    let mut dx = Tensor::zeros(xv.shape());
                    for t in 0..xv.rows() {
                        axpy(1.0 / n, g.row(0), dx.row_mut(t));
                    }
                    accumulate(&mut node_grads, *x, dx);
                }
                Op::SoftmaxCe {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = g.data()[0] / labels.len() as f64;
                    let mut dl = probs.clone();
                    for (t, &label) in labels.iter().enumerate() {
                        let row = dl.row_mut(t);
                        row[label] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    accumulate(&mut node_grads, *logits, dl);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(node_grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut node_grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Stable softmax of one row and the negative log-likelihood of `label`.
pub(crate) fn softmax_nll(logits: &[f64], label: usize) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / sum).collect();
    let nll = sum.ln() - (logits[label] - max);
    (probs, nll)
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(logits.shape());
    for t in 0..logits.rows() {
        let (p, _) = softmax_nll(logits.row(t), 0);
        out.row_mut(t).copy_from_slice(&p);
    }
    out
}
