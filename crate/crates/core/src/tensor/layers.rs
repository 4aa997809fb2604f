use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::network::MatmulExecutor;
use super::Tensor;

/// 2-D convolution; `weight` is `[out, in·k·k]`, channel-major then kernel row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Fully connected layer; `weight` is `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    Linear(Linear<T>),
    Relu,
    AvgPool {
        size: usize,
    },
    Flatten,
    /// `y = x + body(x)`
    Residual {
        body: Vec<Layer<T>>,
    },
}

/// Architecture description used to build and initialize a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv {
        out: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Linear {
        out: usize,
    },
    Relu,
    AvgPool {
        size: usize,
    },
    Flatten,
    Residual {
        body: Vec<LayerSpec>,
    },
}

fn one() -> usize {
    1
}

fn conv_out(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = len + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return Err(Error::shape(format!(
            "convolution kernel {kernel} (stride {stride}, pad {padding}) does not fit input {len}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn fan_in_uniform<T: Scalar>(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| T::of(rng.random_range(-bound..bound)))
        .collect()
}

impl LayerSpec {
    pub(crate) fn build<T: Scalar>(
        &self,
        in_shape: &[usize],
        rng: &mut impl Rng,
    ) -> Result<(Layer<T>, Vec<usize>)> {
        match self {
            LayerSpec::Conv {
                out,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = spatial(in_shape)?;
                let ho = conv_out(h, *kernel, *stride, *padding)?;
                let wo = conv_out(w, *kernel, *stride, *padding)?;
                let fan_in = c * kernel * kernel;
                let weight = Tensor::new(
                    vec![*out, fan_in],
                    fan_in_uniform(rng, out * fan_in, fan_in),
                )?;
                let layer = Layer::Conv2d(Conv2d {
                    in_channels: c,
                    out_channels: *out,
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                    weight,
                    bias: Tensor::zeros(vec![*out]),
                });
                Ok((layer, vec![*out, ho, wo]))
            }
            LayerSpec::Linear { out } => {
                let [f] = flat(in_shape)?;
                let weight = Tensor::new(vec![*out, f], fan_in_uniform(rng, out * f, f))?;
                let layer = Layer::Linear(Linear {
                    in_features: f,
                    out_features: *out,
                    weight,
                    bias: Tensor::zeros(vec![*out]),
                });
                Ok((layer, vec![*out]))
            }
            LayerSpec::Relu => Ok((Layer::Relu, in_shape.to_vec())),
            LayerSpec::AvgPool { size } => {
                let layer = Layer::AvgPool { size: *size };
                let out = layer.out_shape(in_shape)?;
                Ok((layer, out))
            }
            LayerSpec::Flatten => Ok((Layer::Flatten, vec![in_shape.iter().product()])),
            LayerSpec::Residual { body } => {
                let mut shape = in_shape.to_vec();
                let mut layers = Vec::with_capacity(body.len());
                for spec in body {
                    let (l, s) = spec.build(&shape, rng)?;
                    layers.push(l);
                    shape = s;
                }
                if shape != in_shape {
                    return Err(Error::shape(format!(
                        "residual body maps {in_shape:?} to {shape:?}"
                    )));
                }
                Ok((Layer::Residual { body: layers }, shape))
            }
        }
    }
}

fn spatial(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        &[c, h, w] => Ok([c, h, w]),
        other => Err(Error::shape(format!(
            "expected a [channels, height, width] input, got {other:?}"
        ))),
    }
}

fn flat(shape: &[usize]) -> Result<[usize; 1]> {
    match shape {
        &[f] => Ok([f]),
        other => Err(Error::shape(format!(
            "expected a flat feature input, got {other:?}"
        ))),
    }
}

/// Per-layer state kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum LayerCache<T> {
    Conv {
        index: usize,
        cols: Array2<T>,
        in_shape: [usize; 4],
        out_hw: [usize; 2],
    },
    Linear {
        index: usize,
        input: Array2<T>,
    },
    Relu {
        input: Vec<T>,
    },
    Pool {
        in_shape: [usize; 4],
    },
    Flatten {
        in_shape: Vec<usize>,
    },
    Residual(Vec<LayerCache<T>>),
}

/// Gradients of weighted layer `index`: `(weight, bias)`.
pub(crate) type ParamGrads<T> = Vec<Option<(Vec<T>, Vec<T>)>>;

/// `[n, c, h, w]` -> `[n·ho·wo, c·k·k]`.
pub(crate) fn im2col<T: Scalar>(
    x: &[T],
    [n, c, h, w]: [usize; 4],
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Array2<T>, [usize; 2])> {
    let ho = conv_out(h, kernel, stride, padding)?;
    let wo = conv_out(w, kernel, stride, padding)?;
    let kk = kernel * kernel;
    let mut cols = Array2::zeros((n * ho * wo, c * kk));
    for s in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = (s * ho + oy) * wo + ox;
                let mut out = cols.row_mut(row);
                for ch in 0..c {
                    let plane = &x[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            out[ch * kk + ky * kernel + kx] = plane[iy as usize * w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    Ok((cols, [ho, wo]))
}

fn col2im<T: Scalar>(
    cols: &Array2<T>,
    [n, c, h, w]: [usize; 4],
    [ho, wo]: [usize; 2],
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Vec<T> {
    let kk = kernel * kernel;
    let mut x = vec![T::zero(); n * c * h * w];
    for s in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = cols.row((s * ho + oy) * wo + ox);
                for ch in 0..c {
                    let base = (s * c + ch) * h * w;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let at = base + iy as usize * w + ix as usize;
                            x[at] = x[at] + row[ch * kk + ky * kernel + kx];
                        }
                    }
                }
            }
        }
    }
    x
}

fn weight_view<T: Scalar>(t: &Tensor<T>) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((t.shape()[0], t.shape()[1]), t.data()).expect("2-d weight")
}

/// Data of `a` in row-major order, whatever its memory layout.
pub(crate) fn row_major<T: Clone>(a: Array2<T>) -> Vec<T> {
    if a.is_standard_layout() {
        a.into_raw_vec_and_offset().0
    } else {
        a.iter().cloned().collect()
    }
}

fn check_executor_output<T>(out: &Array2<T>, rows: usize, cols: usize) -> Result<()> {
    if out.dim() != (rows, cols) {
        return Err(Error::shape(format!(
            "executor returned {:?}, expected ({rows}, {cols})",
            out.dim()
        )));
    }
    Ok(())
}

impl<T: Scalar> Layer<T> {
    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
                weight: c.weight.cast(),
                bias: c.bias.cast(),
            }),
            Layer::Linear(l) => Layer::Linear(Linear {
                in_features: l.in_features,
                out_features: l.out_features,
                weight: l.weight.cast(),
                bias: l.bias.cast(),
            }),
            Layer::Relu => Layer::Relu,
            Layer::AvgPool { size } => Layer::AvgPool { size: *size },
            Layer::Flatten => Layer::Flatten,
            Layer::Residual { body } => Layer::Residual {
                body: body.iter().map(Layer::cast).collect(),
            },
        }
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(c) => {
                let [ch, h, w] = spatial(in_shape)?;
                if ch != c.in_channels {
                    return Err(Error::shape(format!(
                        "conv expects {} channels, got {ch}",
                        c.in_channels
                    )));
                }
                Ok(vec![
                    c.out_channels,
                    conv_out(h, c.kernel, c.stride, c.padding)?,
                    conv_out(w, c.kernel, c.stride, c.padding)?,
                ])
            }
            Layer::Linear(l) => {
                let [f] = flat(in_shape)?;
                if f != l.in_features {
                    return Err(Error::shape(format!(
                        "linear expects {} features, got {f}",
                        l.in_features
                    )));
                }
                Ok(vec![l.out_features])
            }
            Layer::Relu => Ok(in_shape.to_vec()),
            Layer::AvgPool { size } => {
                let [c, h, w] = spatial(in_shape)?;
                if *size == 0 || h % size != 0 || w % size != 0 {
                    return Err(Error::shape(format!(
                        "average pool {size} does not tile {h}x{w}"
                    )));
                }
                Ok(vec![c, h / size, w / size])
            }
            Layer::Flatten => Ok(vec![in_shape.iter().product()]),
            Layer::Residual { body } => {
                let mut s = in_shape.to_vec();
                for l in body {
                    s = l.out_shape(&s)?;
                }
                if s != in_shape {
                    return Err(Error::shape(format!(
                        "residual body maps {in_shape:?} to {s:?}"
                    )));
                }
                Ok(s)
            }
        }
    }

    pub(crate) fn forward<E: MatmulExecutor<T> + ?Sized>(
        &self,
        x: Tensor<T>,
        exec: &E,
        counter: &mut usize,
        cache: Option<&mut Vec<LayerCache<T>>>,
    ) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(c) => {
                let index = *counter;
                *counter += 1;
                let in_shape = batch4(&x)?;
                let (cols, [ho, wo]) = im2col(x.data(), in_shape, c.kernel, c.stride, c.padding)?;
                let n = in_shape[0];
                let rows = exec.matmul(index, weight_view(&c.weight), cols.view(), n)?;
                check_executor_output(&rows, n * ho * wo, c.out_channels)?;
                let mut out = vec![T::zero(); n * c.out_channels * ho * wo];
                let bias = c.bias.data();
                for s in 0..n {
                    for p in 0..ho * wo {
                        let r = rows.row(s * ho * wo + p);
                        for o in 0..c.out_channels {
                            out[(s * c.out_channels + o) * ho * wo + p] = r[o] + bias[o];
                        }
                    }
                }
                if let Some(cache) = cache {
                    cache.push(LayerCache::Conv {
                        index,
                        cols,
                        in_shape,
                        out_hw: [ho, wo],
                    });
                }
                Tensor::new(vec![n, c.out_channels, ho, wo], out)
            }
            Layer::Linear(l) => {
                let index = *counter;
                *counter += 1;
                let n = x.batch();
                if x.sample_len() != l.in_features || x.shape().len() != 2 {
                    return Err(Error::shape(format!(
                        "linear expects [n, {}], got {:?}",
                        l.in_features,
                        x.shape()
                    )));
                }
                let input = Array2::from_shape_vec((n, l.in_features), x.into_data())
                    .expect("checked shape");
                let mut rows = exec.matmul(index, weight_view(&l.weight), input.view(), n)?;
                check_executor_output(&rows, n, l.out_features)?;
                let bias = ndarray::ArrayView1::from(l.bias.data());
                rows.rows_mut()
                    .into_iter()
                    .for_each(|mut r| r.zip_mut_with(&bias, |a, &b| *a = *a + b));
                if let Some(cache) = cache {
                    cache.push(LayerCache::Linear { index, input });
                }
                Tensor::new(vec![n, l.out_features], row_major(rows))
            }
            Layer::Relu => {
                let shape = x.shape().to_vec();
                let out: Vec<T> = x.data().iter().map(|&v| v.max(T::zero())).collect();
                if let Some(cache) = cache {
                    cache.push(LayerCache::Relu {
                        input: x.into_data(),
                    });
                }
                Tensor::new(shape, out)
            }
            Layer::AvgPool { size } => {
                let in_shape = batch4(&x)?;
                let [n, c, h, w] = in_shape;
                let (ho, wo) = (h / size, w / size);
                if *size == 0 || ho * size != h || wo * size != w {
                    return Err(Error::shape(format!(
                        "average pool {size} does not tile {h}x{w}"
                    )));
                }
                let scale = T::of_usize(size * size).recip();
                let xd = x.data();
                let mut out = vec![T::zero(); n * c * ho * wo];
                for p in 0..n * c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut acc = T::zero();
                            for dy in 0..*size {
                                let row = p * h * w + (oy * size + dy) * w + ox * size;
                                for dx in 0..*size {
                                    acc = acc + xd[row + dx];
                                }
                            }
                            out[(p * ho + oy) * wo + ox] = acc * scale;
                        }
                    }
                }
                if let Some(cache) = cache {
                    cache.push(LayerCache::Pool { in_shape });
                }
                Tensor::new(vec![n, c, ho, wo], out)
            }
            Layer::Flatten => {
                let in_shape = x.shape().to_vec();
                let n = x.batch();
                let f = x.sample_len();
                if let Some(cache) = cache {
                    cache.push(LayerCache::Flatten {
                        in_shape: in_shape.clone(),
                    });
                }
                x.reshape(vec![n, f])
            }
            Layer::Residual { body } => {
                let skip = x.clone();
                let mut inner = cache.as_ref().map(|_| Vec::with_capacity(body.len()));
                let mut y = x;
                for l in body {
                    y = l.forward(y, exec, counter, inner.as_mut())?;
                }
                if y.shape() != skip.shape() {
                    return Err(Error::shape(format!(
                        "residual body maps {:?} to {:?}",
                        skip.shape(),
                        y.shape()
                    )));
                }
                for (a, b) in y.data_mut().iter_mut().zip(skip.data()) {
                    *a = *a + *b;
                }
                if let (Some(cache), Some(inner)) = (cache, inner) {
                    cache.push(LayerCache::Residual(inner));
                }
                Ok(y)
            }
        }
    }

    pub(crate) fn backward(
        &self,
        cache: &LayerCache<T>,
        grad: Tensor<T>,
        params: &mut Option<ParamGrads<T>>,
    ) -> Result<Tensor<T>> {
        match (self, cache) {
            (
                Layer::Conv2d(c),
                LayerCache::Conv {
                    index,
                    cols,
                    in_shape,
                    out_hw,
                },
            ) => {
                let [n, _, _, _] = *in_shape;
                let p = out_hw[0] * out_hw[1];
                let o = c.out_channels;
                // [n, o, ho, wo] -> rows [n·p, o]
                let gd = grad.data();
                let mut g = Array2::zeros((n * p, o));
                for s in 0..n {
                    for ch in 0..o {
                        let plane = &gd[(s * o + ch) * p..(s * o + ch + 1) * p];
                        for (q, &v) in plane.iter().enumerate() {
                            g[[s * p + q, ch]] = v;
                        }
                    }
                }
                if let Some(pg) = params.as_mut() {
                    let gw = g.t().dot(cols);
                    let gb: Vec<T> = g.sum_axis(Axis(0)).to_vec();
                    pg[*index] = Some((row_major(gw), gb));
                }
                let gcols = g.dot(&weight_view(&c.weight));
                let gx = col2im(&gcols, *in_shape, *out_hw, c.kernel, c.stride, c.padding);
                Tensor::new(in_shape.to_vec(), gx)
            }
            (Layer::Linear(l), LayerCache::Linear { index, input }) => {
                let n = input.nrows();
                let g = Array2::from_shape_vec((n, l.out_features), grad.into_data())
                    .map_err(|e| Error::shape(e.to_string()))?;
                if let Some(pg) = params.as_mut() {
                    let gw = g.t().dot(input);
                    let gb: Vec<T> = g.sum_axis(Axis(0)).to_vec();
                    pg[*index] = Some((row_major(gw), gb));
                }
                let gx = g.dot(&weight_view(&l.weight));
                Tensor::new(vec![n, l.in_features], row_major(gx))
            }
            (Layer::Relu, LayerCache::Relu { input }) => {
                let mut grad = grad;
                for (g, &x) in grad.data_mut().iter_mut().zip(input) {
                    if !(x > T::zero()) {
                        *g = T::zero();
                    }
                }
                Ok(grad)
            }
            (Layer::AvgPool { size }, LayerCache::Pool { in_shape }) => {
                let [n, c, h, w] = *in_shape;
                let (ho, wo) = (h / size, w / size);
                let scale = T::of_usize(size * size).recip();
                let gd = grad.data();
                let mut gx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    for y in 0..h {
                        for x in 0..w {
                            gx[p * h * w + y * w + x] =
                                gd[(p * ho + y / size) * wo + x / size] * scale;
                        }
                    }
                }
                Tensor::new(in_shape.to_vec(), gx)
            }
            (Layer::Flatten, LayerCache::Flatten { in_shape }) => grad.reshape(in_shape.clone()),
            (Layer::Residual { body }, LayerCache::Residual(inner)) => {
                let skip = grad.clone();
                let mut g = grad;
                for (l, c) in body.iter().zip(inner).rev() {
                    g = l.backward(c, g, params)?;
                }
                for (a, b) in g.data_mut().iter_mut().zip(skip.data()) {
                    *a = *a + *b;
                }
                Ok(g)
            }
            _ => Err(Error::invalid("forward cache does not match the network")),
        }
    }

    pub(crate) fn weighted_layers(&self) -> usize {
        match self {
            Layer::Conv2d(_) | Layer::Linear(_) => 1,
            Layer::Residual { body } => body.iter().map(Layer::weighted_layers).sum(),
            _ => 0,
        }
    }

    pub(crate) fn collect_params<'a>(&'a self, out: &mut Vec<&'a Tensor<T>>) {
        match self {
            Layer::Conv2d(c) => out.extend([&c.weight, &c.bias]),
            Layer::Linear(l) => out.extend([&l.weight, &l.bias]),
            Layer::Residual { body } => body.iter().for_each(|l| l.collect_params(out)),
            _ => {}
        }
    }

    pub(crate) fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        match self {
            Layer::Conv2d(c) => out.extend([&mut c.weight, &mut c.bias]),
            Layer::Linear(l) => out.extend([&mut l.weight, &mut l.bias]),
            Layer::Residual { body } => body.iter_mut().for_each(|l| l.collect_params_mut(out)),
            _ => {}
        }
    }
}

fn batch4<T: Scalar>(x: &Tensor<T>) -> Result<[usize; 4]> {
    match x.shape() {
        &[n, c, h, w] => Ok([n, c, h, w]),
        other => Err(Error::shape(format!(
            "expected an [n, c, h, w] tensor, got {other:?}"
        ))),
    }
}
