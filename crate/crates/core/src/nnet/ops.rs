//! Forward and backward kernels on raw row-major buffers.
//!
//! Layouts: conv2d works on `[n, c, h, w]` with `w` (time) contiguous;
//! temporal conv, pooling over time and the LSTM use `[n, c, t]`.

#[inline]
fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub struct Conv2dDims {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl Conv2dDims {
    /// Output rows `r` and the shifted input row for kernel row `dh`.
    fn rows(&self, dh: usize) -> (usize, usize) {
        let ph = self.kh / 2;
        let lo = ph.saturating_sub(dh);
        let hi = (self.h + ph).saturating_sub(dh).min(self.h);
        (lo, hi.max(lo))
    }

    fn cols(&self, dw: usize) -> (usize, usize) {
        let pw = self.kw / 2;
        let lo = pw.saturating_sub(dw);
        let hi = (self.w + pw).saturating_sub(dw).min(self.w);
        (lo, hi.max(lo))
    }
}

/// Same-padded stride-1 2-D convolution (odd kernels).
pub fn conv2d_forward(x: &[f64], weight: &[f64], bias: &[f64], d: &Conv2dDims) -> Vec<f64> {
    let plane = d.h * d.w;
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    let mut y = vec![0.0; d.n * d.cout * plane];
    for b in 0..d.n {
        for co in 0..d.cout {
            let out = &mut y[(b * d.cout + co) * plane..][..plane];
            out.fill(bias[co]);
            for ci in 0..d.cin {
                let inp = &x[(b * d.cin + ci) * plane..][..plane];
                let wk = &weight[(co * d.cin + ci) * d.kh * d.kw..][..d.kh * d.kw];
                for dh in 0..d.kh {
                    let (r0, r1) = d.rows(dh);
                    for dw in 0..d.kw {
                        let wv = wk[dh * d.kw + dw];
                        let (c0, c1) = d.cols(dw);
                        for r in r0..r1 {
                            let ir = r + dh - ph;
                            axpy(
                                &mut out[r * d.w + c0..r * d.w + c1],
                                wv,
                                &inp[ir * d.w + c0 + dw - pw..ir * d.w + c1 + dw - pw],
                            );
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    gy: &[f64],
    d: &Conv2dDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = d.h * d.w;
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; d.cout];
    for b in 0..d.n {
        for co in 0..d.cout {
            let g = &gy[(b * d.cout + co) * plane..][..plane];
            gb[co] += g.iter().sum::<f64>();
            for ci in 0..d.cin {
                let base = (b * d.cin + ci) * plane;
                let widx = (co * d.cin + ci) * d.kh * d.kw;
                for dh in 0..d.kh {
                    let (r0, r1) = d.rows(dh);
                    for dw in 0..d.kw {
                        let wv = weight[widx + dh * d.kw + dw];
                        let (c0, c1) = d.cols(dw);
                        let mut acc = 0.0;
                        for r in r0..r1 {
                            let ir = r + dh - ph;
                            let grow = &g[r * d.w + c0..r * d.w + c1];
                            let xs = base + ir * d.w + c0 + dw - pw;
                            acc += dot(grow, &x[xs..xs + (c1 - c0)]);
                            axpy(&mut gx[xs..xs + (c1 - c0)], wv, grow);
                        }
                        gw[widx + dh * d.kw + dw] += acc;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

pub struct Conv1dDims {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub t: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv1dDims {
    pub fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn t_out(&self) -> usize {
        (self.t + 2 * self.pad() - self.k) / self.stride + 1
    }
}

/// Temporal convolution with `k / 2` zero padding.
pub fn conv1d_forward(x: &[f64], weight: &[f64], bias: &[f64], d: &Conv1dDims) -> Vec<f64> {
    let to = d.t_out();
    let p = d.pad() as isize;
    let mut y = vec![0.0; d.n * d.cout * to];
    for b in 0..d.n {
        for co in 0..d.cout {
            let out = &mut y[(b * d.cout + co) * to..][..to];
            out.fill(bias[co]);
            for ci in 0..d.cin {
                let inp = &x[(b * d.cin + ci) * d.t..][..d.t];
                let wk = &weight[(co * d.cin + ci) * d.k..][..d.k];
                for (j, o) in out.iter_mut().enumerate() {
                    let s = (j * d.stride) as isize - p;
                    let mut acc = 0.0;
                    for (kk, &wv) in wk.iter().enumerate() {
                        let ti = s + kk as isize;
                        if ti >= 0 && (ti as usize) < d.t {
                            acc += wv * inp[ti as usize];
                        }
                    }
                    *o += acc;
                }
            }
        }
    }
    y
}

pub fn conv1d_backward(
    x: &[f64],
    weight: &[f64],
    gy: &[f64],
    d: &Conv1dDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let to = d.t_out();
    let p = d.pad() as isize;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; d.cout];
    for b in 0..d.n {
        for co in 0..d.cout {
            let g = &gy[(b * d.cout + co) * to..][..to];
            gb[co] += g.iter().sum::<f64>();
            for ci in 0..d.cin {
                let xb = (b * d.cin + ci) * d.t;
                let wb = (co * d.cin + ci) * d.k;
                for (j, &gv) in g.iter().enumerate() {
                    if gv == 0.0 {
                        continue;
                    }
                    let s = (j * d.stride) as isize - p;
                    for kk in 0..d.k {
                        let ti = s + kk as isize;
                        if ti >= 0 && (ti as usize) < d.t {
                            gw[wb + kk] += gv * x[xb + ti as usize];
                            gx[xb + ti as usize] += gv * weight[wb + kk];
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Per-channel batch statistics over `[n, c, inner]`.
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub fn batchnorm_train(
    x: &[f64],
    n: usize,
    c: usize,
    inner: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, BnCache) {
    let m = (n * inner) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            mean[ch] += x[(b * c + ch) * inner..][..inner].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for b in 0..n {
        for ch in 0..c {
            var[ch] += x[(b * c + ch) * inner..][..inner]
                .iter()
                .map(|v| (v - mean[ch]).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * inner;
            for i in off..off + inner {
                xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                y[i] = gamma[ch] * xhat[i] + beta[ch];
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

pub fn batchnorm_eval(
    x: &[f64],
    n: usize,
    c: usize,
    inner: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for ch in 0..c {
        let scale = gamma[ch] / (running_var[ch] + eps).sqrt();
        let shift = beta[ch] - running_mean[ch] * scale;
        for b in 0..n {
            let off = (b * c + ch) * inner;
            for i in off..off + inner {
                y[i] = x[i] * scale + shift;
            }
        }
    }
    y
}

/// Returns `(gx, ggamma, gbeta)`.
pub fn batchnorm_backward(
    gy: &[f64],
    cache: &BnCache,
    n: usize,
    c: usize,
    inner: usize,
    gamma: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = (n * inner) as f64;
    let mut ggamma = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * inner;
            for i in off..off + inner {
                ggamma[ch] += gy[i] * cache.xhat[i];
                gbeta[ch] += gy[i];
            }
        }
    }
    let mut gx = vec![0.0; gy.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * inner;
            let k = gamma[ch] * cache.inv_std[ch] / m;
            for i in off..off + inner {
                gx[i] = k * (m * gy[i] - gbeta[ch] - cache.xhat[i] * ggamma[ch]);
            }
        }
    }
    (gx, ggamma, gbeta)
}

/// Max over non-overlapping groups of `pool` rows of `[n, c, h, w]`.
/// Returns the output and, per output cell, the flat index of the winner.
pub fn maxpool_freq_forward(
    x: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    pool: usize,
) -> (Vec<f64>, Vec<usize>) {
    let ho = h / pool;
    let mut y = vec![f64::NEG_INFINITY; n * c * ho * w];
    let mut arg = vec![0usize; y.len()];
    for nc in 0..n * c {
        for r in 0..ho {
            for p in 0..pool {
                let ir = r * pool + p;
                let src = nc * h * w + ir * w;
                let dst = nc * ho * w + r * w;
                for col in 0..w {
                    let v = x[src + col];
                    if v > y[dst + col] {
                        y[dst + col] = v;
                        arg[dst + col] = src + col;
                    }
                }
            }
        }
    }
    (y, arg)
}

/// Bin `[start, end)` of adaptive pooling from `t` steps to `out` bins.
pub fn adaptive_bin(i: usize, t: usize, out: usize) -> (usize, usize) {
    let start = i * t / out;
    let end = ((i + 1) * t).div_ceil(out);
    (start, end.max(start + 1).min(t))
}

pub fn avgpool_time_forward(x: &[f64], nc: usize, t: usize, out: usize) -> Vec<f64> {
    let mut y = vec![0.0; nc * out];
    for r in 0..nc {
        let row = &x[r * t..][..t];
        for i in 0..out {
            let (s, e) = adaptive_bin(i, t, out);
            y[r * out + i] = row[s..e].iter().sum::<f64>() / (e - s) as f64;
        }
    }
    y
}

pub fn avgpool_time_backward(gy: &[f64], nc: usize, t: usize, out: usize) -> Vec<f64> {
    let mut gx = vec![0.0; nc * t];
    for r in 0..nc {
        for i in 0..out {
            let (s, e) = adaptive_bin(i, t, out);
            let g = gy[r * out + i] / (e - s) as f64;
            gx[r * t + s..r * t + e].iter_mut().for_each(|v| *v += g);
        }
    }
    gx
}

/// `y[b, o, p] = sum_i w[o, i] x[b, i, p] + bias[o]` over `positions` p.
pub fn dense_forward(
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    n: usize,
    cin: usize,
    cout: usize,
    positions: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; n * cout * positions];
    for b in 0..n {
        for o in 0..cout {
            let out = &mut y[(b * cout + o) * positions..][..positions];
            out.fill(bias[o]);
            for i in 0..cin {
                let wv = weight[o * cin + i];
                axpy(out, wv, &x[(b * cin + i) * positions..][..positions]);
            }
        }
    }
    y
}

pub fn dense_backward(
    x: &[f64],
    weight: &[f64],
    gy: &[f64],
    n: usize,
    cin: usize,
    cout: usize,
    positions: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; cout];
    for b in 0..n {
        for o in 0..cout {
            let g = &gy[(b * cout + o) * positions..][..positions];
            gb[o] += g.iter().sum::<f64>();
            for i in 0..cin {
                let xs = &x[(b * cin + i) * positions..][..positions];
                gw[o * cin + i] += dot(g, xs);
                axpy(&mut gx[(b * cin + i) * positions..][..positions], weight[o * cin + i], g);
            }
        }
    }
    (gx, gw, gb)
}

/// Softmax over axis 1 of `[n, k, positions]`.
pub fn softmax_forward(x: &[f64], n: usize, k: usize, positions: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for b in 0..n {
        for p in 0..positions {
            let idx = |c: usize| (b * k + c) * positions + p;
            let mx = (0..k).map(|c| x[idx(c)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..k {
                let e = (x[idx(c)] - mx).exp();
                y[idx(c)] = e;
                z += e;
            }
            for c in 0..k {
                y[idx(c)] /= z;
            }
        }
    }
    y
}

pub fn softmax_backward(y: &[f64], gy: &[f64], n: usize, k: usize, positions: usize) -> Vec<f64> {
    let mut gx = vec![0.0; y.len()];
    for b in 0..n {
        for p in 0..positions {
            let idx = |c: usize| (b * k + c) * positions + p;
            let s: f64 = (0..k).map(|c| y[idx(c)] * gy[idx(c)]).sum();
            for c in 0..k {
                gx[idx(c)] = y[idx(c)] * (gy[idx(c)] - s);
            }
        }
    }
    gx
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Per-step activations kept for backpropagation through time.
pub struct LstmCache {
    /// Gate activations `[n, t, 4h]` in order i, f, g, o.
    pub gates: Vec<f64>,
    /// Cell states `[n, t, h]`.
    pub cells: Vec<f64>,
    /// Hidden states `[n, t, h]`.
    pub hidden: Vec<f64>,
}

pub struct LstmDims {
    pub n: usize,
    pub input: usize,
    pub hidden: usize,
    pub t: usize,
}

/// Single-layer LSTM over `[n, input, t]`, zero initial state, output
/// `[n, hidden, t]`. Weights: `w_ih [4h, input]`, `w_hh [4h, h]`, `b [4h]`.
pub fn lstm_forward(
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    bias: &[f64],
    d: &LstmDims,
) -> (Vec<f64>, LstmCache) {
    let (h, t, inp) = (d.hidden, d.t, d.input);
    let g4 = 4 * h;
    let mut gates = vec![0.0; d.n * t * g4];
    let mut cells = vec![0.0; d.n * t * h];
    let mut hidden = vec![0.0; d.n * t * h];
    let mut y = vec![0.0; d.n * h * t];
    let mut z = vec![0.0; g4];
    let mut xt = vec![0.0; inp];
    for b in 0..d.n {
        for s in 0..t {
            for (i, v) in xt.iter_mut().enumerate() {
                *v = x[(b * inp + i) * t + s];
            }
            for r in 0..g4 {
                let mut acc = bias[r] + dot(&w_ih[r * inp..(r + 1) * inp], &xt);
                if s > 0 {
                    let hp = &hidden[(b * t + s - 1) * h..][..h];
                    acc += dot(&w_hh[r * h..(r + 1) * h], hp);
                }
                z[r] = acc;
            }
            let go = (b * t + s) * g4;
            for j in 0..h {
                let ig = sigmoid(z[j]);
                let fg = sigmoid(z[h + j]);
                let gg = z[2 * h + j].tanh();
                let og = sigmoid(z[3 * h + j]);
                gates[go + j] = ig;
                gates[go + h + j] = fg;
                gates[go + 2 * h + j] = gg;
                gates[go + 3 * h + j] = og;
                let cprev = if s > 0 { cells[(b * t + s - 1) * h + j] } else { 0.0 };
                let c = fg * cprev + ig * gg;
                cells[(b * t + s) * h + j] = c;
                let hv = og * c.tanh();
                hidden[(b * t + s) * h + j] = hv;
                y[(b * h + j) * t + s] = hv;
            }
        }
    }
    (y, LstmCache { gates, cells, hidden })
}

/// Returns `(gx, gw_ih, gw_hh, gbias)`.
pub fn lstm_backward(
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    gy: &[f64],
    cache: &LstmCache,
    d: &LstmDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (h, t, inp) = (d.hidden, d.t, d.input);
    let g4 = 4 * h;
    let mut gx = vec![0.0; x.len()];
    let mut gw_ih = vec![0.0; w_ih.len()];
    let mut gw_hh = vec![0.0; w_hh.len()];
    let mut gb = vec![0.0; g4];
    let mut dz = vec![0.0; g4];
    let mut xt = vec![0.0; inp];
    for b in 0..d.n {
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        for s in (0..t).rev() {
            let go = (b * t + s) * g4;
            for j in 0..h {
                let dh = gy[(b * h + j) * t + s] + dh_next[j];
                let ig = cache.gates[go + j];
                let fg = cache.gates[go + h + j];
                let gg = cache.gates[go + 2 * h + j];
                let og = cache.gates[go + 3 * h + j];
                let c = cache.cells[(b * t + s) * h + j];
                let tc = c.tanh();
                let cprev = if s > 0 { cache.cells[(b * t + s - 1) * h + j] } else { 0.0 };
                let dc = dh * og * (1.0 - tc * tc) + dc_next[j];
                dz[j] = dc * gg * ig * (1.0 - ig);
                dz[h + j] = dc * cprev * fg * (1.0 - fg);
                dz[2 * h + j] = dc * ig * (1.0 - gg * gg);
                dz[3 * h + j] = dh * tc * og * (1.0 - og);
                dc_next[j] = dc * fg;
            }
            for (i, v) in xt.iter_mut().enumerate() {
                *v = x[(b * inp + i) * t + s];
            }
            dh_next.fill(0.0);
            for r in 0..g4 {
                let g = dz[r];
                gb[r] += g;
                axpy(&mut gw_ih[r * inp..(r + 1) * inp], g, &xt);
                for i in 0..inp {
                    gx[(b * inp + i) * t + s] += g * w_ih[r * inp + i];
                }
                if s > 0 {
                    let hp = &cache.hidden[(b * t + s - 1) * h..][..h];
                    axpy(&mut gw_hh[r * h..(r + 1) * h], g, hp);
                    axpy(&mut dh_next, g, &w_hh[r * h..(r + 1) * h]);
                }
            }
        }
    }
    (gx, gw_ih, gw_hh, gb)
}
