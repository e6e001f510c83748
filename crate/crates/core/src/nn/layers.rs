//! Layer kernels and their reverse-mode derivatives.
//!
//! Convolution weights are laid out `[out_ch][in_ch][kernel...]`, dense
//! weights `[out][in]`.

use super::tensor::{strides, Tensor};
use crate::error::{Error, Result};

/// Index tables for periodic padding followed by a VALID cross-correlation.
#[derive(Debug, Clone)]
pub struct ConvGeometry {
    pub spatial: Vec<usize>,
    pub kernel: Vec<usize>,
    pub padded: Vec<usize>,
    /// Source index in the unpadded input of every padded position.
    pub pad_src: Vec<usize>,
    /// Padded flat index of kernel offset zero for every output position.
    pub base: Vec<usize>,
    /// Padded flat offset of every kernel position.
    pub offsets: Vec<usize>,
    /// Offsets of the kernel rows; each row is contiguous along the last axis.
    row_offsets: Vec<usize>,
    row_len: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl ConvGeometry {
    pub fn new(spatial: &[usize], kernel: &[usize]) -> Result<Self> {
        if spatial.len() != kernel.len() {
            return Err(Error::ShapeMismatch(format!(
                "kernel rank {} vs spatial rank {}",
                kernel.len(),
                spatial.len()
            )));
        }
        if kernel.iter().any(|&k| k == 0) {
            return Err(Error::ShapeMismatch("kernel sizes must be at least 1".into()));
        }
        let padded: Vec<usize> = spatial.iter().zip(kernel).map(|(s, k)| s + k - 1).collect();
        let pstr = strides(&padded);
        let sstr = strides(spatial);
        let kstr = strides(kernel);
        let left: Vec<usize> = kernel.iter().map(|k| (k - 1) / 2).collect();

        let padded_len: usize = padded.iter().product();
        let pad_src = (0..padded_len)
            .map(|p| {
                (0..padded.len())
                    .map(|k| {
                        let coord = (p / pstr[k]) % padded[k];
                        let src = (coord as isize - left[k] as isize)
                            .rem_euclid(spatial[k] as isize) as usize;
                        src * sstr[k]
                    })
                    .sum()
            })
            .collect();
        let out_len: usize = spatial.iter().product();
        let base = (0..out_len)
            .map(|o| {
                (0..spatial.len())
                    .map(|k| ((o / sstr[k]) % spatial[k]) * pstr[k])
                    .sum()
            })
            .collect();
        let klen: usize = kernel.iter().product();
        let offsets: Vec<usize> = (0..klen)
            .map(|q| {
                (0..kernel.len())
                    .map(|k| ((q / kstr[k]) % kernel[k]) * pstr[k])
                    .sum()
            })
            .collect();
        let row_len = *kernel.last().expect("rank checked above");
        let row_offsets = offsets.iter().step_by(row_len).copied().collect();
        Ok(Self {
            spatial: spatial.to_vec(),
            kernel: kernel.to_vec(),
            padded,
            pad_src,
            base,
            offsets,
            row_offsets,
            row_len,
        })
    }

    pub fn spatial_len(&self) -> usize {
        self.base.len()
    }

    pub fn padded_len(&self) -> usize {
        self.pad_src.len()
    }

    pub fn kernel_len(&self) -> usize {
        self.offsets.len()
    }

    pub(crate) fn pad_into(&self, x: &[f64], channels: usize, out: &mut Vec<f64>) {
        let s = self.spatial_len();
        out.clear();
        out.reserve(channels * self.padded_len());
        for c in 0..channels {
            let xc = &x[c * s..(c + 1) * s];
            out.extend(self.pad_src.iter().map(|&i| xc[i]));
        }
    }

    pub(crate) fn unpad_add(&self, dpadded: &[f64], channels: usize, dx: &mut [f64]) {
        let s = self.spatial_len();
        let p = self.padded_len();
        for c in 0..channels {
            let dxc = &mut dx[c * s..(c + 1) * s];
            for (&src, g) in self.pad_src.iter().zip(&dpadded[c * p..(c + 1) * p]) {
                dxc[src] += g;
            }
        }
    }

    /// VALID cross-correlation of a padded input, plus bias.
    pub(crate) fn correlate(&self, xpad: &[f64], w: &[f64], b: &[f64], in_ch: usize, out_ch: usize, out: &mut [f64]) {
        let (s, p, kl) = (self.spatial_len(), self.padded_len(), self.kernel_len());
        for co in 0..out_ch {
            let oc = &mut out[co * s..(co + 1) * s];
            oc.iter_mut().for_each(|v| *v = b[co]);
            for ci in 0..in_ch {
                let wk = &w[(co * in_ch + ci) * kl..(co * in_ch + ci + 1) * kl];
                let xc = &xpad[ci * p..(ci + 1) * p];
                let rl = self.row_len;
                for (o, acc) in oc.iter_mut().enumerate() {
                    let window = &xc[self.base[o]..];
                    let mut sum = 0.0;
                    for (wr, &roff) in wk.chunks_exact(rl).zip(&self.row_offsets) {
                        sum += dot(wr, &window[roff..roff + rl]);
                    }
                    *acc += sum;
                }
            }
        }
    }

    /// Accumulate `dw`, `db` and optionally the padded-input gradient.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn correlate_backward(
        &self,
        xpad: &[f64],
        w: &[f64],
        up: &[f64],
        in_ch: usize,
        out_ch: usize,
        dw: &mut [f64],
        db: &mut [f64],
        mut dxpad: Option<&mut [f64]>,
    ) {
        let (s, p, kl) = (self.spatial_len(), self.padded_len(), self.kernel_len());
        for co in 0..out_ch {
            let uc = &up[co * s..(co + 1) * s];
            db[co] += uc.iter().sum::<f64>();
            for ci in 0..in_ch {
                let widx = (co * in_ch + ci) * kl;
                let xc = &xpad[ci * p..(ci + 1) * p];
                for (o, &u) in uc.iter().enumerate() {
                    if u == 0.0 {
                        continue;
                    }
                    let rl = self.row_len;
                    let window = &xc[self.base[o]..];
                    let dwk = &mut dw[widx..widx + kl];
                    for (gr, &roff) in dwk.chunks_exact_mut(rl).zip(&self.row_offsets) {
                        axpy(u, &window[roff..roff + rl], gr);
                    }
                    if let Some(dx) = dxpad.as_deref_mut() {
                        let dxc = &mut dx[ci * p + self.base[o]..];
                        for (wr, &roff) in w[widx..widx + kl].chunks_exact(rl).zip(&self.row_offsets) {
                            axpy(u, wr, &mut dxc[roff..roff + rl]);
                        }
                    }
                }
            }
        }
    }
}

/// Extend every spatial axis cyclically by `k - 1` (`floor((k-1)/2)` before,
/// the rest after) so a VALID convolution keeps the spatial size.
pub fn periodic_pad(x: &Tensor, kernel: &[usize]) -> Result<Tensor> {
    let geo = ConvGeometry::new(x.spatial(), kernel)?;
    let mut out = Vec::new();
    geo.pad_into(x.values(), x.channels(), &mut out);
    Tensor::new(x.channels(), geo.padded.clone(), out)
}

/// Adjoint of [`periodic_pad`]: fold padded gradients back onto the grid.
pub fn periodic_pad_backward(dpadded: &Tensor, spatial: &[usize], kernel: &[usize]) -> Result<Tensor> {
    let geo = ConvGeometry::new(spatial, kernel)?;
    if dpadded.spatial() != geo.padded.as_slice() {
        return Err(Error::ShapeMismatch("gradient does not match padded shape".into()));
    }
    let mut dx = Tensor::zeros(dpadded.channels(), spatial.to_vec());
    geo.unpad_add(dpadded.values(), dpadded.channels(), dx.values_mut());
    Ok(dx)
}

fn valid_geometry(xpad: &Tensor, kernel: &[usize]) -> Result<ConvGeometry> {
    if kernel.len() != xpad.spatial().len() {
        return Err(Error::ShapeMismatch("kernel rank differs from input rank".into()));
    }
    let mut spatial = Vec::with_capacity(kernel.len());
    for (&p, &k) in xpad.spatial().iter().zip(kernel) {
        if k == 0 || k > p {
            return Err(Error::ShapeMismatch(format!("kernel {k} does not fit extent {p}")));
        }
        spatial.push(p - k + 1);
    }
    // Only base/offsets are used for a VALID correlation; the padded extent
    // of this geometry equals the given input's.
    ConvGeometry::new(&spatial, kernel)
}

/// VALID cross-correlation of an already padded input:
/// `out[co][o] = b[co] + sum_{ci,q} w[co][ci][q] x[ci][o + q]`.
pub fn conv_forward(xpad: &Tensor, w: &[f64], b: &[f64], out_ch: usize, kernel: &[usize]) -> Result<Tensor> {
    let geo = valid_geometry(xpad, kernel)?;
    let in_ch = xpad.channels();
    check_conv_params(w, b, in_ch, out_ch, geo.kernel_len())?;
    let mut out = vec![0.0; out_ch * geo.spatial_len()];
    geo.correlate(xpad.values(), w, b, in_ch, out_ch, &mut out);
    Tensor::new(out_ch, geo.spatial.clone(), out)
}

fn check_conv_params(w: &[f64], b: &[f64], in_ch: usize, out_ch: usize, klen: usize) -> Result<()> {
    if w.len() != out_ch * in_ch * klen || b.len() != out_ch {
        return Err(Error::ShapeMismatch(format!(
            "conv {in_ch}->{out_ch} with {klen}-point kernel needs {} weights and {out_ch} biases, got {} and {}",
            out_ch * in_ch * klen,
            w.len(),
            b.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    /// Gradient with respect to the padded input.
    pub dx: Tensor,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn conv_backward(xpad: &Tensor, w: &[f64], out_ch: usize, kernel: &[usize], upstream: &Tensor) -> Result<ConvGrads> {
    let geo = valid_geometry(xpad, kernel)?;
    let in_ch = xpad.channels();
    if upstream.channels() != out_ch || upstream.spatial() != geo.spatial.as_slice() {
        return Err(Error::ShapeMismatch("upstream gradient shape".into()));
    }
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; out_ch];
    check_conv_params(w, &db, in_ch, out_ch, geo.kernel_len())?;
    let mut dx = Tensor::zeros(in_ch, xpad.spatial().to_vec());
    geo.correlate_backward(
        xpad.values(),
        w,
        upstream.values(),
        in_ch,
        out_ch,
        &mut dw,
        &mut db,
        Some(dx.values_mut()),
    );
    Ok(ConvGrads { dx, dw, db })
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Subgradient 0 at the kink.
pub fn relu_backward(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if x.values().len() != upstream.values().len() {
        return Err(Error::ShapeMismatch("relu upstream size".into()));
    }
    let vals = x
        .values()
        .iter()
        .zip(upstream.values())
        .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.channels(), x.spatial().to_vec(), vals)
}

/// Output position of every input position under non-overlapping windows.
pub(crate) fn pool_map(spatial: &[usize], window: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    if spatial.len() != window.len() {
        return Err(Error::ShapeMismatch("pool window rank".into()));
    }
    if spatial.iter().zip(window).any(|(&s, &w)| w == 0 || s % w != 0) {
        return Err(Error::ShapeMismatch(format!(
            "window {window:?} does not tile {spatial:?}"
        )));
    }
    let out: Vec<usize> = spatial.iter().zip(window).map(|(s, w)| s / w).collect();
    let istr = strides(spatial);
    let ostr = strides(&out);
    let len: usize = spatial.iter().product();
    let map = (0..len)
        .map(|i| {
            (0..spatial.len())
                .map(|k| ((i / istr[k]) % spatial[k] / window[k]) * ostr[k])
                .sum()
        })
        .collect();
    Ok((out, map))
}

/// Sum over non-overlapping windows; a window equal to the full extent gives
/// one value per channel.
pub fn sum_pool_forward(x: &Tensor, window: &[usize]) -> Result<Tensor> {
    let (out_spatial, map) = pool_map(x.spatial(), window)?;
    let olen: usize = out_spatial.iter().product();
    let s = x.spatial_len();
    let mut out = vec![0.0; x.channels() * olen];
    for c in 0..x.channels() {
        for (i, &o) in map.iter().enumerate() {
            out[c * olen + o] += x.values()[c * s + i];
        }
    }
    Tensor::new(x.channels(), out_spatial, out)
}

pub fn sum_pool_backward(upstream: &Tensor, spatial: &[usize], window: &[usize]) -> Result<Tensor> {
    let (out_spatial, map) = pool_map(spatial, window)?;
    if upstream.spatial() != out_spatial.as_slice() {
        return Err(Error::ShapeMismatch("pool upstream shape".into()));
    }
    let olen = upstream.spatial_len();
    let s: usize = spatial.iter().product();
    let mut dx = vec![0.0; upstream.channels() * s];
    for c in 0..upstream.channels() {
        for (i, &o) in map.iter().enumerate() {
            dx[c * s + i] = upstream.values()[c * olen + o];
        }
    }
    Tensor::new(upstream.channels(), spatial.to_vec(), dx)
}

/// `y = W x + b` with `W` stored `[out][in]`.
pub fn dense_forward(x: &[f64], w: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let outputs = b.len();
    if w.len() != outputs * x.len() {
        return Err(Error::ShapeMismatch(format!(
            "dense {}->{outputs} needs {} weights, got {}",
            x.len(),
            outputs * x.len(),
            w.len()
        )));
    }
    Ok(w.chunks_exact(x.len())
        .zip(b)
        .map(|(row, bi)| bi + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect())
}

/// Returns `(dx, dw, db)`.
pub fn dense_backward(x: &[f64], w: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if w.len() != upstream.len() * x.len() {
        return Err(Error::ShapeMismatch("dense weight shape".into()));
    }
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    for (o, &g) in upstream.iter().enumerate() {
        let row = &w[o * x.len()..(o + 1) * x.len()];
        for i in 0..x.len() {
            dx[i] += g * row[i];
            dw[o * x.len() + i] = g * x[i];
        }
    }
    Ok((dx, dw, upstream.to_vec()))
}
