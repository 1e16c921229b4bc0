use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, BnCache, Conv1dDims, Conv2dDims, LstmCache, LstmDims};
use super::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Architecture of one layer. Tensor layouts are `[n, channels, ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Same-padded stride-1 convolution over `[n, c, freq, time]`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
    },
    /// Convolution along time over `[n, c, t]`, spanning all input channels.
    Conv1dTemporal {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    Sigmoid,
    /// Max over groups of `pool` frequency rows; time resolution unchanged.
    MaxPoolFreq {
        pool: usize,
    },
    /// Average over time: `None` collapses the axis, `Some(k)` pools to `k` bins.
    AvgPoolTime {
        output_frames: Option<usize>,
    },
    Lstm {
        input_size: usize,
        hidden_size: usize,
    },
    /// Maps the channel axis; applied independently at every position.
    Dense {
        input_size: usize,
        output_size: usize,
    },
    ResidualBlock {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Softmax over the channel axis at every position.
    Softmax,
}

impl LayerSpec {
    /// Channel count the layer expects, if it constrains it.
    pub fn in_channels(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv2d { in_channels, .. }
            | LayerSpec::Conv1dTemporal { in_channels, .. }
            | LayerSpec::ResidualBlock { in_channels, .. } => Some(in_channels),
            LayerSpec::BatchNorm { channels } => Some(channels),
            LayerSpec::Lstm { input_size, .. } | LayerSpec::Dense { input_size, .. } => {
                Some(input_size)
            }
            _ => None,
        }
    }

    pub fn out_channels(&self, input: Option<usize>) -> Option<usize> {
        match *self {
            LayerSpec::Conv2d { out_channels, .. }
            | LayerSpec::Conv1dTemporal { out_channels, .. }
            | LayerSpec::ResidualBlock { out_channels, .. } => Some(out_channels),
            LayerSpec::BatchNorm { channels } => Some(channels),
            LayerSpec::Lstm { hidden_size, .. } => Some(hidden_size),
            LayerSpec::Dense { output_size, .. } => Some(output_size),
            _ => input,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Conv1dTemporal { .. } => "conv1d",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::MaxPoolFreq { .. } => "max_pool_freq",
            LayerSpec::AvgPoolTime { .. } => "avg_pool_time",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::ResidualBlock { .. } => "residual",
            LayerSpec::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

impl Param {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name,
            shape,
            value: vec![0.0; n],
        }
    }

    fn filled(name: String, shape: Vec<usize>, v: f64) -> Self {
        let mut p = Self::zeros(name, shape);
        p.value.fill(v);
        p
    }

    fn uniform<R: Rng>(name: String, shape: Vec<usize>, limit: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(name, shape);
        for v in &mut p.value {
            *v = rng.gen_range(-limit..=limit);
        }
        p
    }
}

/// A layer with its trainable parameters and non-trainable buffers
/// (batch-norm running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Param>,
    pub buffers: Vec<Param>,
}

pub enum Cache {
    None,
    Input(Tensor),
    Output(Tensor),
    BatchNorm(BnCache),
    MaxPool { arg: Vec<usize>, in_shape: Vec<usize> },
    AvgPool { in_shape: Vec<usize> },
    Lstm { input: Tensor, cache: LstmCache },
    Residual(Box<ResidualCache>),
}

pub struct ResidualCache {
    input: Tensor,
    h1: Tensor,
    bn1: BnCache,
    a1: Tensor,
    h2: Tensor,
    bn2: BnCache,
    short: Option<(Tensor, BnCache)>,
    out: Tensor,
}

fn he_limit(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

fn bn_params(prefix: &str, c: usize) -> (Vec<Param>, Vec<Param>) {
    (
        vec![
            Param::filled(format!("{prefix}gamma"), vec![c], 1.0),
            Param::zeros(format!("{prefix}beta"), vec![c]),
        ],
        vec![
            Param::zeros(format!("{prefix}running_mean"), vec![c]),
            Param::filled(format!("{prefix}running_var"), vec![c], 1.0),
        ],
    )
}

fn conv1d_params<R: Rng>(prefix: &str, cin: usize, cout: usize, k: usize, rng: &mut R) -> Vec<Param> {
    vec![
        Param::uniform(format!("{prefix}weight"), vec![cout, cin, k], he_limit(cin * k), rng),
        Param::zeros(format!("{prefix}bias"), vec![cout]),
    ]
}

impl Layer {
    /// Builds a layer with seeded initial values. `prefix` makes parameter
    /// names unique within a model.
    pub fn build<R: Rng>(spec: LayerSpec, prefix: &str, rng: &mut R) -> Result<Self> {
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        let p = |s: &str| format!("{prefix}.{s}");
        match spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => {
                if kernel[0] % 2 == 0 || kernel[1] % 2 == 0 {
                    return Err(Error::Invalid("conv2d kernels must be odd".into()));
                }
                let fan = in_channels * kernel[0] * kernel[1];
                params.push(Param::uniform(
                    p("weight"),
                    vec![out_channels, in_channels, kernel[0], kernel[1]],
                    he_limit(fan),
                    rng,
                ));
                params.push(Param::zeros(p("bias"), vec![out_channels]));
            }
            LayerSpec::Conv1dTemporal {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if stride == 0 || kernel == 0 {
                    return Err(Error::Invalid("conv1d kernel and stride must be positive".into()));
                }
                params = conv1d_params(&p(""), in_channels, out_channels, kernel, rng);
            }
            LayerSpec::BatchNorm { channels } => {
                (params, buffers) = bn_params(&p(""), channels);
            }
            LayerSpec::Lstm {
                input_size,
                hidden_size,
            } => {
                let lim = 1.0 / (hidden_size as f64).sqrt();
                params.push(Param::uniform(p("w_ih"), vec![4 * hidden_size, input_size], lim, rng));
                params.push(Param::uniform(p("w_hh"), vec![4 * hidden_size, hidden_size], lim, rng));
                params.push(Param::uniform(p("bias"), vec![4 * hidden_size], lim, rng));
            }
            LayerSpec::Dense {
                input_size,
                output_size,
            } => {
                params.push(Param::uniform(
                    p("weight"),
                    vec![output_size, input_size],
                    he_limit(input_size),
                    rng,
                ));
                params.push(Param::zeros(p("bias"), vec![output_size]));
            }
            LayerSpec::ResidualBlock {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if stride == 0 || kernel == 0 {
                    return Err(Error::Invalid("residual kernel and stride must be positive".into()));
                }
                params.extend(conv1d_params(&p("conv1."), in_channels, out_channels, kernel, rng));
                let (bp, bb) = bn_params(&p("bn1."), out_channels);
                params.extend(bp);
                buffers.extend(bb);
                params.extend(conv1d_params(&p("conv2."), out_channels, out_channels, kernel, rng));
                let (bp, bb) = bn_params(&p("bn2."), out_channels);
                params.extend(bp);
                buffers.extend(bb);
                if stride != 1 || in_channels != out_channels {
                    params.extend(conv1d_params(&p("short."), in_channels, out_channels, 1, rng));
                    let (bp, bb) = bn_params(&p("short_bn."), out_channels);
                    params.extend(bp);
                    buffers.extend(bb);
                }
            }
            LayerSpec::MaxPoolFreq { pool } => {
                if pool == 0 {
                    return Err(Error::Invalid("pool size must be positive".into()));
                }
            }
            LayerSpec::AvgPoolTime { output_frames } => {
                if output_frames == Some(0) {
                    return Err(Error::Invalid("adaptive pooling needs at least one bin".into()));
                }
            }
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Softmax => {}
        }
        Ok(Self {
            spec,
            params,
            buffers,
        })
    }

    pub fn kind(&self) -> &'static str {
        self.spec.kind()
    }

    fn check_rank(&self, x: &Tensor, rank: usize) -> Result<()> {
        if x.shape().len() != rank {
            return Err(Error::Shape(format!(
                "{} expects a rank-{rank} input, got {:?}",
                self.kind(),
                x.shape()
            )));
        }
        Ok(())
    }

    fn check_channels(&self, x: &Tensor) -> Result<()> {
        if let Some(c) = self.spec.in_channels() {
            if x.shape().len() < 2 || x.dim(1) != c {
                return Err(Error::Shape(format!(
                    "{} expects {c} channels, got shape {:?}",
                    self.kind(),
                    x.shape()
                )));
            }
        }
        Ok(())
    }

    /// Forward pass. In training mode batch norm uses batch statistics and
    /// the returned cache holds everything `backward` needs; running
    /// statistics are updated separately by [`Layer::update_running_stats`].
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<(Tensor, Cache)> {
        self.check_channels(x)?;
        let s = x.shape().to_vec();
        match self.spec {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                ..
            } => {
                self.check_rank(x, 4)?;
                let d = Conv2dDims {
                    n: s[0],
                    cin: s[1],
                    cout: out_channels,
                    h: s[2],
                    w: s[3],
                    kh: kernel[0],
                    kw: kernel[1],
                };
                let y = ops::conv2d_forward(x.data(), &self.params[0].value, &self.params[1].value, &d);
                Ok((
                    Tensor::new(vec![s[0], out_channels, s[2], s[3]], y)?,
                    cache_input(x, train),
                ))
            }
            LayerSpec::Conv1dTemporal {
                out_channels,
                kernel,
                stride,
                ..
            } => {
                self.check_rank(x, 3)?;
                let d = Conv1dDims {
                    n: s[0],
                    cin: s[1],
                    cout: out_channels,
                    t: s[2],
                    k: kernel,
                    stride,
                };
                let y = ops::conv1d_forward(x.data(), &self.params[0].value, &self.params[1].value, &d);
                Ok((
                    Tensor::new(vec![s[0], out_channels, d.t_out()], y)?,
                    cache_input(x, train),
                ))
            }
            LayerSpec::BatchNorm { channels } => {
                let (y, cache) = bn_forward(x, &self.params[0..2], &self.buffers[0..2], channels, train);
                Ok((Tensor::new(s, y)?, cache.map_or(Cache::None, Cache::BatchNorm)))
            }
            LayerSpec::Relu => {
                let y: Vec<f64> = x.data().iter().map(|&v| v.max(0.0)).collect();
                let y = Tensor::new(s, y)?;
                let c = if train { Cache::Output(y.clone()) } else { Cache::None };
                Ok((y, c))
            }
            LayerSpec::Sigmoid => {
                let y: Vec<f64> = x.data().iter().map(|&v| ops::sigmoid(v)).collect();
                let y = Tensor::new(s, y)?;
                let c = if train { Cache::Output(y.clone()) } else { Cache::None };
                Ok((y, c))
            }
            LayerSpec::MaxPoolFreq { pool } => {
                self.check_rank(x, 4)?;
                if s[2] < pool {
                    return Err(Error::Shape(format!(
                        "cannot pool {} frequency rows by {pool}",
                        s[2]
                    )));
                }
                let (y, arg) = ops::maxpool_freq_forward(x.data(), s[0], s[1], s[2], s[3], pool);
                let y = Tensor::new(vec![s[0], s[1], s[2] / pool, s[3]], y)?;
                let c = if train {
                    Cache::MaxPool { arg, in_shape: s }
                } else {
                    Cache::None
                };
                Ok((y, c))
            }
            LayerSpec::AvgPoolTime { output_frames } => {
                self.check_rank(x, 3)?;
                let out = output_frames.unwrap_or(1);
                let y = ops::avgpool_time_forward(x.data(), s[0] * s[1], s[2], out);
                let shape = match output_frames {
                    Some(k) => vec![s[0], s[1], k],
                    None => vec![s[0], s[1]],
                };
                Ok((Tensor::new(shape, y)?, Cache::AvgPool { in_shape: s }))
            }
            LayerSpec::Lstm { hidden_size, .. } => {
                self.check_rank(x, 3)?;
                let d = LstmDims {
                    n: s[0],
                    input: s[1],
                    hidden: hidden_size,
                    t: s[2],
                };
                let (y, cache) = ops::lstm_forward(
                    x.data(),
                    &self.params[0].value,
                    &self.params[1].value,
                    &self.params[2].value,
                    &d,
                );
                let y = Tensor::new(vec![s[0], hidden_size, s[2]], y)?;
                let c = if train {
                    Cache::Lstm {
                        input: x.clone(),
                        cache,
                    }
                } else {
                    Cache::None
                };
                Ok((y, c))
            }
            LayerSpec::Dense {
                input_size,
                output_size,
            } => {
                if s.len() < 2 {
                    return Err(Error::Shape(format!("dense expects [n, c, ...], got {s:?}")));
                }
                let pos = x.positions();
                let y = ops::dense_forward(
                    x.data(),
                    &self.params[0].value,
                    &self.params[1].value,
                    s[0],
                    input_size,
                    output_size,
                    pos,
                );
                let mut shape = s.clone();
                shape[1] = output_size;
                Ok((Tensor::new(shape, y)?, cache_input(x, train)))
            }
            LayerSpec::ResidualBlock { .. } => self.residual_forward(x, train),
            LayerSpec::Softmax => {
                if s.len() < 2 {
                    return Err(Error::Shape(format!("softmax expects [n, k, ...], got {s:?}")));
                }
                let y = ops::softmax_forward(x.data(), s[0], s[1], x.positions());
                let y = Tensor::new(s, y)?;
                let c = if train { Cache::Output(y.clone()) } else { Cache::None };
                Ok((y, c))
            }
        }
    }

    /// Gradient w.r.t. the input and, in order, every parameter.
    pub fn backward(&self, cache: &Cache, gy: &Tensor) -> Result<(Tensor, Vec<Vec<f64>>)> {
        let missing = || Error::Invalid(format!("{} backward without a training cache", self.kind()));
        match (&self.spec, cache) {
            (
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    ..
                },
                Cache::Input(x),
            ) => {
                let s = x.shape();
                let d = Conv2dDims {
                    n: s[0],
                    cin: s[1],
                    cout: *out_channels,
                    h: s[2],
                    w: s[3],
                    kh: kernel[0],
                    kw: kernel[1],
                };
                let (gx, gw, gb) = ops::conv2d_backward(x.data(), &self.params[0].value, gy.data(), &d);
                Ok((Tensor::new(s.to_vec(), gx)?, vec![gw, gb]))
            }
            (
                LayerSpec::Conv1dTemporal {
                    out_channels,
                    kernel,
                    stride,
                    ..
                },
                Cache::Input(x),
            ) => {
                let s = x.shape();
                let d = Conv1dDims {
                    n: s[0],
                    cin: s[1],
                    cout: *out_channels,
                    t: s[2],
                    k: *kernel,
                    stride: *stride,
                };
                let (gx, gw, gb) = ops::conv1d_backward(x.data(), &self.params[0].value, gy.data(), &d);
                Ok((Tensor::new(s.to_vec(), gx)?, vec![gw, gb]))
            }
            (LayerSpec::BatchNorm { channels }, Cache::BatchNorm(c)) => {
                let s = gy.shape();
                let inner = gy.len() / (s[0] * channels);
                let (gx, gg, gb) =
                    ops::batchnorm_backward(gy.data(), c, s[0], *channels, inner, &self.params[0].value);
                Ok((Tensor::new(s.to_vec(), gx)?, vec![gg, gb]))
            }
            (LayerSpec::Relu, Cache::Output(y)) => {
                let gx = gy
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                Ok((Tensor::new(gy.shape().to_vec(), gx)?, vec![]))
            }
            (LayerSpec::Sigmoid, Cache::Output(y)) => {
                let gx = gy
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &v)| g * v * (1.0 - v))
                    .collect();
                Ok((Tensor::new(gy.shape().to_vec(), gx)?, vec![]))
            }
            (LayerSpec::MaxPoolFreq { .. }, Cache::MaxPool { arg, in_shape }) => {
                let mut gx = vec![0.0; in_shape.iter().product()];
                for (&a, &g) in arg.iter().zip(gy.data()) {
                    gx[a] += g;
                }
                Ok((Tensor::new(in_shape.clone(), gx)?, vec![]))
            }
            (LayerSpec::AvgPoolTime { output_frames }, Cache::AvgPool { in_shape }) => {
                let out = output_frames.unwrap_or(1);
                let gx = ops::avgpool_time_backward(gy.data(), in_shape[0] * in_shape[1], in_shape[2], out);
                Ok((Tensor::new(in_shape.clone(), gx)?, vec![]))
            }
            (LayerSpec::Lstm { hidden_size, .. }, Cache::Lstm { input, cache }) => {
                let s = input.shape();
                let d = LstmDims {
                    n: s[0],
                    input: s[1],
                    hidden: *hidden_size,
                    t: s[2],
                };
                let (gx, gwi, gwh, gb) = ops::lstm_backward(
                    input.data(),
                    &self.params[0].value,
                    &self.params[1].value,
                    gy.data(),
                    cache,
                    &d,
                );
                Ok((Tensor::new(s.to_vec(), gx)?, vec![gwi, gwh, gb]))
            }
            (
                LayerSpec::Dense {
                    input_size,
                    output_size,
                },
                Cache::Input(x),
            ) => {
                let (gx, gw, gb) = ops::dense_backward(
                    x.data(),
                    &self.params[0].value,
                    gy.data(),
                    x.dim(0),
                    *input_size,
                    *output_size,
                    x.positions(),
                );
                Ok((Tensor::new(x.shape().to_vec(), gx)?, vec![gw, gb]))
            }
            (LayerSpec::ResidualBlock { .. }, Cache::Residual(c)) => self.residual_backward(c, gy),
            (LayerSpec::Softmax, Cache::Output(y)) => {
                let s = y.shape();
                let gx = ops::softmax_backward(y.data(), gy.data(), s[0], s[1], y.positions());
                Ok((Tensor::new(s.to_vec(), gx)?, vec![]))
            }
            _ => Err(missing()),
        }
    }

    /// Folds the batch statistics from a training forward pass into the
    /// running estimates.
    pub fn update_running_stats(&mut self, cache: &Cache, momentum: f64) {
        let blend = |buffers: &mut [Param], c: &BnCache, count: usize| {
            let unbias = if count > 1 {
                count as f64 / (count - 1) as f64
            } else {
                1.0
            };
            for (rm, m) in buffers[0].value.iter_mut().zip(&c.mean) {
                *rm = (1.0 - momentum) * *rm + momentum * m;
            }
            for (rv, v) in buffers[1].value.iter_mut().zip(&c.var) {
                *rv = (1.0 - momentum) * *rv + momentum * v * unbias;
            }
        };
        match cache {
            Cache::BatchNorm(c) => {
                let count = c.xhat.len() / c.mean.len().max(1);
                blend(&mut self.buffers[0..2], c, count);
            }
            Cache::Residual(r) => {
                let count = r.bn1.xhat.len() / r.bn1.mean.len().max(1);
                blend(&mut self.buffers[0..2], &r.bn1, count);
                let count = r.bn2.xhat.len() / r.bn2.mean.len().max(1);
                blend(&mut self.buffers[2..4], &r.bn2, count);
                if let Some((_, sc)) = &r.short {
                    let count = sc.xhat.len() / sc.mean.len().max(1);
                    blend(&mut self.buffers[4..6], sc, count);
                }
            }
            _ => {}
        }
    }

    fn residual_dims(&self, x: &Tensor, conv: usize) -> Conv1dDims {
        let LayerSpec::ResidualBlock {
            in_channels,
            out_channels,
            kernel,
            stride,
        } = self.spec
        else {
            unreachable!()
        };
        let s = x.shape();
        match conv {
            1 => Conv1dDims {
                n: s[0],
                cin: in_channels,
                cout: out_channels,
                t: s[2],
                k: kernel,
                stride,
            },
            2 => Conv1dDims {
                n: s[0],
                cin: out_channels,
                cout: out_channels,
                t: s[2],
                k: kernel,
                stride: 1,
            },
            _ => Conv1dDims {
                n: s[0],
                cin: in_channels,
                cout: out_channels,
                t: s[2],
                k: 1,
                stride,
            },
        }
    }

    fn residual_forward(&self, x: &Tensor, train: bool) -> Result<(Tensor, Cache)> {
        self.check_rank(x, 3)?;
        let cout = self.spec.out_channels(None).unwrap_or(0);
        let p = &self.params;
        let b = &self.buffers;
        let n = x.dim(0);

        let d1 = self.residual_dims(x, 1);
        let h1 = Tensor::new(
            vec![n, cout, d1.t_out()],
            ops::conv1d_forward(x.data(), &p[0].value, &p[1].value, &d1),
        )?;
        let (z1, bn1) = bn_forward(&h1, &p[2..4], &b[0..2], cout, train);
        let a1 = Tensor::new(h1.shape().to_vec(), z1.into_iter().map(|v| v.max(0.0)).collect())?;
        let d2 = self.residual_dims(&a1, 2);
        let h2 = Tensor::new(
            vec![n, cout, d2.t_out()],
            ops::conv1d_forward(a1.data(), &p[4].value, &p[5].value, &d2),
        )?;
        let (z2, bn2) = bn_forward(&h2, &p[6..8], &b[2..4], cout, train);

        let (shortcut, short_cache) = if p.len() > 8 {
            let ds = self.residual_dims(x, 3);
            let hs = Tensor::new(
                vec![n, cout, ds.t_out()],
                ops::conv1d_forward(x.data(), &p[8].value, &p[9].value, &ds),
            )?;
            let (zs, bns) = bn_forward(&hs, &p[10..12], &b[4..6], cout, train);
            (zs, bns.map(|c| (hs, c)))
        } else {
            (x.data().to_vec(), None)
        };
        if shortcut.len() != z2.len() {
            return Err(Error::Shape("residual branches disagree in length".into()));
        }
        let out: Vec<f64> = z2
            .iter()
            .zip(&shortcut)
            .map(|(a, s)| (a + s).max(0.0))
            .collect();
        let out = Tensor::new(h2.shape().to_vec(), out)?;
        if !train {
            return Ok((out, Cache::None));
        }
        let cache = ResidualCache {
            input: x.clone(),
            h1,
            bn1: bn1.expect("train mode"),
            a1,
            h2,
            bn2: bn2.expect("train mode"),
            short: short_cache,
            out: out.clone(),
        };
        Ok((out, Cache::Residual(Box::new(cache))))
    }

    fn residual_backward(&self, c: &ResidualCache, gy: &Tensor) -> Result<(Tensor, Vec<Vec<f64>>)> {
        let p = &self.params;
        let cout = self.spec.out_channels(None).unwrap_or(0);
        let n = gy.dim(0);
        // Through the final ReLU.
        let g: Vec<f64> = gy
            .data()
            .iter()
            .zip(c.out.data())
            .map(|(&g, &o)| if o > 0.0 { g } else { 0.0 })
            .collect();

        let inner2 = c.h2.len() / (n * cout);
        let (gh2, gg2, gb2) = ops::batchnorm_backward(&g, &c.bn2, n, cout, inner2, &p[6].value);
        let d2 = self.residual_dims(&c.a1, 2);
        let (ga1, gw2, gbias2) = ops::conv1d_backward(c.a1.data(), &p[4].value, &gh2, &d2);
        let gz1: Vec<f64> = ga1
            .iter()
            .zip(c.a1.data())
            .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
            .collect();
        let inner1 = c.h1.len() / (n * cout);
        let (gh1, gg1, gb1) = ops::batchnorm_backward(&gz1, &c.bn1, n, cout, inner1, &p[2].value);
        let d1 = self.residual_dims(&c.input, 1);
        let (mut gx, gw1, gbias1) = ops::conv1d_backward(c.input.data(), &p[0].value, &gh1, &d1);

        let mut grads = vec![gw1, gbias1, gg1, gb1, gw2, gbias2, gg2, gb2];
        match &c.short {
            Some((hs, sc)) => {
                let inner = hs.len() / (n * cout);
                let (ghs, ggs, gbs) = ops::batchnorm_backward(&g, sc, n, cout, inner, &p[10].value);
                let ds = self.residual_dims(&c.input, 3);
                let (gxs, gws, gbias_s) = ops::conv1d_backward(c.input.data(), &p[8].value, &ghs, &ds);
                gx.iter_mut().zip(&gxs).for_each(|(a, b)| *a += b);
                grads.extend([gws, gbias_s, ggs, gbs]);
            }
            None => gx.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        }
        Ok((Tensor::new(c.input.shape().to_vec(), gx)?, grads))
    }
}

fn cache_input(x: &Tensor, train: bool) -> Cache {
    if train {
        Cache::Input(x.clone())
    } else {
        Cache::None
    }
}

fn bn_forward(
    x: &Tensor,
    params: &[Param],
    buffers: &[Param],
    channels: usize,
    train: bool,
) -> (Vec<f64>, Option<BnCache>) {
    let n = x.dim(0);
    let inner = x.len() / (n * channels).max(1);
    if train {
        let (y, c) = ops::batchnorm_train(
            x.data(),
            n,
            channels,
            inner,
            &params[0].value,
            &params[1].value,
            BN_EPS,
        );
        (y, Some(c))
    } else {
        let y = ops::batchnorm_eval(
            x.data(),
            n,
            channels,
            inner,
            &params[0].value,
            &params[1].value,
            &buffers[0].value,
            &buffers[1].value,
            BN_EPS,
        );
        (y, None)
    }
}
