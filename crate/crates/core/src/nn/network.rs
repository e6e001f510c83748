//! Layer graphs, flat parameter storage, forward and reverse-mode passes.

use serde::{Deserialize, Serialize};

use super::layers::{pool_map, ConvGeometry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Periodic padding followed by a VALID convolution; keeps spatial size.
    PeriodicConv {
        in_ch: usize,
        out_ch: usize,
        kernel: Vec<usize>,
    },
    Relu,
    SumPool {
        window: Vec<usize>,
    },
    /// Flattens its input.
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

/// A single-channel input of shape `input_spatial` fed through `layers`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_spatial: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub spatial: Vec<usize>,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.channels * self.spatial.iter().product::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
enum Compiled {
    Conv {
        in_ch: usize,
        out_ch: usize,
        geo: ConvGeometry,
        w: usize,
        b: usize,
    },
    Relu,
    Pool {
        map: Vec<usize>,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        w: usize,
        b: usize,
    },
}

/// A validated [`NetworkSpec`] with precomputed index tables.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Shape>,
    layers: Vec<Compiled>,
    param_count: usize,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[l]` is the input of layer `l`; the last entry is the output.
    acts: Vec<Vec<f64>>,
    /// Padded inputs of convolution layers.
    padded: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace holds the input")
    }
}

impl Network {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        if spec.input_spatial.iter().any(|&s| s == 0) {
            return Err(Error::ShapeMismatch("empty input extent".into()));
        }
        let mut shape = Shape {
            channels: 1,
            spatial: spec.input_spatial.clone(),
        };
        let mut shapes = vec![shape.clone()];
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut offset = 0;
        for (l, layer) in spec.layers.iter().enumerate() {
            let ctx = |msg: String| Error::ShapeMismatch(format!("layer {l}: {msg}"));
            let compiled = match layer {
                LayerSpec::PeriodicConv {
                    in_ch,
                    out_ch,
                    kernel,
                } => {
                    if *in_ch != shape.channels {
                        return Err(ctx(format!("expects {in_ch} channels, got {}", shape.channels)));
                    }
                    if kernel.iter().zip(&shape.spatial).any(|(&k, &s)| k > 2 * s - 1) {
                        return Err(ctx(format!("kernel {kernel:?} exceeds padded extent")));
                    }
                    let geo = ConvGeometry::new(&shape.spatial, kernel).map_err(|e| ctx(e.to_string()))?;
                    let w = offset;
                    let b = w + out_ch * in_ch * geo.kernel_len();
                    offset = b + out_ch;
                    shape.channels = *out_ch;
                    Compiled::Conv {
                        in_ch: *in_ch,
                        out_ch: *out_ch,
                        geo,
                        w,
                        b,
                    }
                }
                LayerSpec::Relu => Compiled::Relu,
                LayerSpec::SumPool { window } => {
                    let (out, map) = pool_map(&shape.spatial, window).map_err(|e| ctx(e.to_string()))?;
                    shape.spatial = out;
                    Compiled::Pool { map }
                }
                LayerSpec::Dense { inputs, outputs } => {
                    if *inputs != shape.len() {
                        return Err(ctx(format!("expects {inputs} inputs, got {}", shape.len())));
                    }
                    let w = offset;
                    let b = w + inputs * outputs;
                    offset = b + outputs;
                    shape = Shape {
                        channels: *outputs,
                        spatial: vec![],
                    };
                    Compiled::Dense {
                        inputs: *inputs,
                        outputs: *outputs,
                        w,
                        b,
                    }
                }
            };
            layers.push(compiled);
            shapes.push(shape.clone());
        }
        Ok(Self {
            spec: spec.clone(),
            shapes,
            layers,
            param_count: offset,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn input_len(&self) -> usize {
        self.shapes[0].len()
    }

    pub fn output_shape(&self) -> &Shape {
        self.shapes.last().expect("input shape always present")
    }

    /// `(fan_in, weight range, bias range)` of every parameterized layer.
    pub fn parameter_blocks(&self) -> Vec<(usize, std::ops::Range<usize>, std::ops::Range<usize>)> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Compiled::Conv {
                    in_ch, out_ch, geo, w, b, ..
                } => Some((in_ch * geo.kernel_len(), *w..*b, *b..b + out_ch)),
                Compiled::Dense {
                    inputs, outputs, w, b,
                } => Some((*inputs, *w..*b, *b..b + outputs)),
                _ => None,
            })
            .collect()
    }

    fn check(&self, params: &[f64], input: &[f64]) -> Result<()> {
        if params.len() != self.param_count {
            return Err(Error::ShapeMismatch(format!(
                "network has {} parameters, got {}",
                self.param_count,
                params.len()
            )));
        }
        if input.len() != self.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_len(),
                input.len()
            )));
        }
        Ok(())
    }

    pub fn forward_trace(&self, params: &[f64], input: &[f64]) -> Result<Trace> {
        self.check(params, input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut padded = Vec::new();
        acts.push(input.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let x = &acts[l];
            let out_len = self.shapes[l + 1].len();
            let y = match layer {
                Compiled::Conv {
                    in_ch, out_ch, geo, w, b,
                } => {
                    let mut xp = Vec::new();
                    geo.pad_into(x, *in_ch, &mut xp);
                    let mut y = vec![0.0; out_len];
                    let klen = geo.kernel_len();
                    geo.correlate(
                        &xp,
                        &params[*w..w + out_ch * in_ch * klen],
                        &params[*b..b + out_ch],
                        *in_ch,
                        *out_ch,
                        &mut y,
                    );
                    padded.push(xp);
                    y
                }
                Compiled::Relu => x.iter().map(|v| v.max(0.0)).collect(),
                Compiled::Pool { map } => {
                    let olen = out_len / self.shapes[l].channels;
                    let s = map.len();
                    let mut y = vec![0.0; out_len];
                    for c in 0..self.shapes[l].channels {
                        for (i, &o) in map.iter().enumerate() {
                            y[c * olen + o] += x[c * s + i];
                        }
                    }
                    y
                }
                Compiled::Dense {
                    inputs, outputs, w, b,
                } => (0..*outputs)
                    .map(|o| {
                        let row = &params[w + o * inputs..w + (o + 1) * inputs];
                        params[b + o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
                    })
                    .collect(),
            };
            acts.push(y);
        }
        Ok(Trace { acts, padded })
    }

    /// Output values for one input.
    pub fn forward_values(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(params, input)?.acts.pop().expect("output"))
    }

    /// Scalar output for one input.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<f64> {
        let out = self.forward_values(params, input)?;
        match out.as_slice() {
            [y] => Ok(*y),
            _ => Err(Error::ShapeMismatch(format!("network output has {} values", out.len()))),
        }
    }

    /// Accumulate `d(seed . output)/d(params)` into `grad`; returns the input
    /// gradient when `input_grad` is set.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &Trace,
        seed: &[f64],
        grad: &mut [f64],
        input_grad: bool,
    ) -> Result<Option<Vec<f64>>> {
        if grad.len() != self.param_count || seed.len() != self.output_shape().len() {
            return Err(Error::ShapeMismatch("gradient buffer or seed size".into()));
        }
        let mut up = seed.to_vec();
        let mut conv_idx = trace.padded.len();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.acts[l];
            let need_dx = l > 0 || input_grad;
            up = match layer {
                Compiled::Conv {
                    in_ch, out_ch, geo, w, b,
                } => {
                    conv_idx -= 1;
                    let xp = &trace.padded[conv_idx];
                    let klen = geo.kernel_len();
                    let wlen = out_ch * in_ch * klen;
                    let (gw, gb) = grad[*w..b + out_ch].split_at_mut(b - w);
                    let mut dxp = if need_dx { vec![0.0; xp.len()] } else { Vec::new() };
                    geo.correlate_backward(
                        xp,
                        &params[*w..w + wlen],
                        &up,
                        *in_ch,
                        *out_ch,
                        gw,
                        gb,
                        need_dx.then_some(dxp.as_mut_slice()),
                    );
                    if need_dx {
                        let mut dx = vec![0.0; x.len()];
                        geo.unpad_add(&dxp, *in_ch, &mut dx);
                        dx
                    } else {
                        Vec::new()
                    }
                }
                Compiled::Relu => x
                    .iter()
                    .zip(&up)
                    .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
                    .collect(),
                Compiled::Pool { map } => {
                    let channels = self.shapes[l].channels;
                    let olen = up.len() / channels;
                    let s = map.len();
                    let mut dx = vec![0.0; x.len()];
                    for c in 0..channels {
                        for (i, &o) in map.iter().enumerate() {
                            dx[c * s + i] = up[c * olen + o];
                        }
                    }
                    dx
                }
                Compiled::Dense {
                    inputs, outputs, w, b,
                } => {
                    let mut dx = vec![0.0; *inputs];
                    for o in 0..*outputs {
                        let g = up[o];
                        grad[b + o] += g;
                        let row = w + o * inputs;
                        for i in 0..*inputs {
                            grad[row + i] += g * x[i];
                            dx[i] += g * params[row + i];
                        }
                    }
                    dx
                }
            };
        }
        Ok(input_grad.then_some(up))
    }
}

/// Scalar network output `h_theta(input)`.
pub fn forward(spec: &NetworkSpec, params: &[f64], input: &[f64]) -> Result<f64> {
    Network::new(spec)?.forward(params, input)
}

/// Gradient of the scalar output with respect to the parameters.
pub fn backward(spec: &NetworkSpec, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    let net = Network::new(spec)?;
    let trace = net.forward_trace(params, input)?;
    if trace.output().len() != 1 {
        return Err(Error::ShapeMismatch("network output is not scalar".into()));
    }
    let mut grad = vec![0.0; net.param_count()];
    net.backward(params, &trace, &[1.0], &mut grad, false)?;
    Ok(grad)
}

pub fn param_count(spec: &NetworkSpec) -> Result<usize> {
    Ok(Network::new(spec)?.param_count())
}

/// Periodic conv (kernel `n` per axis, `alpha` channels) -> ReLU -> global
/// sum pool -> dense `alpha -> 1`. Has `alpha n^d + 2 alpha + 1` parameters.
pub fn build_single_conv_arch(n: usize, d: usize, alpha: usize) -> Result<NetworkSpec> {
    if n < 2 || alpha < 1 || d < 1 {
        return Err(Error::InvalidConfig(format!(
            "need n >= 2, d >= 1, alpha >= 1; got n={n} d={d} alpha={alpha}"
        )));
    }
    Ok(NetworkSpec {
        input_spatial: vec![n; d],
        layers: vec![
            LayerSpec::PeriodicConv {
                in_ch: 1,
                out_ch: alpha,
                kernel: vec![n; d],
            },
            LayerSpec::Relu,
            LayerSpec::SumPool { window: vec![n; d] },
            LayerSpec::Dense {
                inputs: alpha,
                outputs: 1,
            },
        ],
    })
}

fn pointwise_stage(width: usize, depth: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::with_capacity(2 * depth);
    for j in 0..depth {
        let in_ch = if j == 0 { 1 } else { width };
        let out_ch = if j + 1 == depth { 1 } else { width };
        layers.push(LayerSpec::PeriodicConv {
            in_ch,
            out_ch,
            kernel: vec![1],
        });
        if j + 1 < depth {
            layers.push(LayerSpec::Relu);
        }
    }
    layers
}

/// 1D network: `stage_depth` kernel-1 convolutions (`1 -> width -> ... -> 1`),
/// a sum pool over all `n` points, and the same pointwise stack on the
/// pooled scalar.
pub fn build_1d_three_stage_arch(n: usize, width: usize, stage_depth: usize) -> Result<NetworkSpec> {
    if n < 2 || width < 1 || stage_depth < 1 {
        return Err(Error::InvalidConfig(format!(
            "need n >= 2, width >= 1, stage_depth >= 1; got {n}, {width}, {stage_depth}"
        )));
    }
    let mut layers = pointwise_stage(width, stage_depth);
    layers.push(LayerSpec::SumPool { window: vec![n] });
    layers.extend(pointwise_stage(width, stage_depth));
    Ok(NetworkSpec {
        input_spatial: vec![n],
        layers,
    })
}

/// Evaluate the layers before the first sum pool of a three-stage 1D network
/// on scalar inputs (each as a one-point field).
pub fn extract_stage1_response(spec: &NetworkSpec, params: &[f64], xs: &[f64]) -> Result<Vec<f64>> {
    let wrong = |m: &str| Error::WrongArchitecture(m.to_string());
    if spec.input_spatial.len() != 1 {
        return Err(wrong("stage-1 response needs a 1-d network"));
    }
    let pool = spec
        .layers
        .iter()
        .position(|l| matches!(l, LayerSpec::SumPool { .. }))
        .ok_or_else(|| wrong("no sum-pool layer"))?;
    let stage1 = &spec.layers[..pool];
    let pointwise = stage1.iter().all(|l| match l {
        LayerSpec::PeriodicConv { kernel, .. } => kernel.as_slice() == [1],
        LayerSpec::Relu => true,
        _ => false,
    });
    if stage1.is_empty() || !pointwise {
        return Err(wrong("stage 1 must be kernel-1 convolutions and ReLUs"));
    }
    let sub = NetworkSpec {
        input_spatial: vec![1],
        layers: stage1.to_vec(),
    };
    let net = Network::new(&sub)?;
    if net.output_shape().channels != 1 {
        return Err(wrong("stage 1 must end with a single channel"));
    }
    let full = Network::new(spec)?;
    if params.len() != full.param_count() {
        return Err(Error::ShapeMismatch("parameter vector does not match spec".into()));
    }
    let p = &params[..net.param_count()];
    xs.iter().map(|&x| net.forward(p, &[x])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_parameter_counts() {
        let count = |n, alpha| param_count(&build_single_conv_arch(n, 2, alpha).unwrap()).unwrap();
        assert_eq!(count(8, 16), 1057);
        assert_eq!(count(16, 16), 4129);
        assert_eq!(count(8, 5), 331);
        assert_eq!(count(16, 5), 1291);
    }

    #[test]
    fn three_stage_parameter_count() {
        // 1->16: 32, 16->16: 272, 16->1: 17 per stage.
        let spec = build_1d_three_stage_arch(8, 16, 3).unwrap();
        assert_eq!(param_count(&spec).unwrap(), 2 * (32 + 272 + 17));
    }

    #[test]
    fn zero_params_give_zero() {
        let spec = build_single_conv_arch(4, 2, 3).unwrap();
        let net = Network::new(&spec).unwrap();
        let y = net.forward(&vec![0.0; net.param_count()], &[1.0; 16]).unwrap();
        assert_eq!(y, 0.0);
        let mut p = vec![0.0; net.param_count()];
        *p.last_mut().unwrap() = 0.75;
        assert_eq!(net.forward(&p, &[1.0; 16]).unwrap(), 0.75);
    }

    #[test]
    fn zero_stage1_is_constant() {
        let spec = build_1d_three_stage_arch(8, 4, 3).unwrap();
        let p = vec![0.0; param_count(&spec).unwrap()];
        let r = extract_stage1_response(&spec, &p, &[0.3, 0.9, 1.5]).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
        let single = build_single_conv_arch(8, 1, 4).unwrap();
        let ps = vec![0.0; param_count(&single).unwrap()];
        assert!(matches!(
            extract_stage1_response(&single, &ps, &[1.0]),
            Err(Error::WrongArchitecture(_))
        ));
    }

    #[test]
    fn rejects_incompatible_layers() {
        let spec = NetworkSpec {
            input_spatial: vec![4],
            layers: vec![LayerSpec::Dense {
                inputs: 3,
                outputs: 1,
            }],
        };
        assert!(Network::new(&spec).is_err());
        let spec = NetworkSpec {
            input_spatial: vec![4],
            layers: vec![LayerSpec::PeriodicConv {
                in_ch: 2,
                out_ch: 1,
                kernel: vec![3],
            }],
        };
        assert!(Network::new(&spec).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = build_1d_three_stage_arch(8, 16, 3).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"type\":\"periodic_conv\""));
        let back: NetworkSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
