//! Numeric kernels behind the tape operations.
//!
//! Inputs are `[batch][time][channel]`, conv kernels `[out][in][width]`,
//! dense weights `[out][in]`. Short dot products run in `f32`; sums over the
//! batch and time axes accumulate in `f64`. Every output element is owned by
//! exactly one task and reduced in a fixed order, so results do not depend
//! on the number of worker threads.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(width - 1) / 2` on both ends.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub time_in: usize,
    pub channels_in: usize,
    pub channels_out: usize,
    pub width: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn pad(&self) -> usize {
        match self.padding {
            Padding::Same => (self.width - 1) / 2,
            Padding::Valid => 0,
        }
    }

    pub fn time_out(&self) -> usize {
        conv_out_len(self.time_in, self.width, self.stride, self.padding).unwrap_or(0)
    }

    #[inline]
    fn source(&self, t: usize, j: usize) -> Option<usize> {
        let pos = (t * self.stride + j) as isize - self.pad() as isize;
        (pos >= 0 && (pos as usize) < self.time_in).then_some(pos as usize)
    }
}

/// Output length of a 1-D convolution, or `None` when the input is shorter
/// than a valid-padded kernel.
pub fn conv_out_len(time: usize, width: usize, stride: usize, padding: Padding) -> Option<usize> {
    if stride == 0 || width == 0 || time == 0 {
        return None;
    }
    match padding {
        Padding::Same => Some(time.div_ceil(stride)),
        Padding::Valid => (time >= width).then(|| (time - width) / stride + 1),
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Kernel reordered to `[out][width][in]` so the channel axis is contiguous.
fn transpose_kernel(w: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let (o_n, c_n, k_n) = (g.channels_out, g.channels_in, g.width);
    let mut wt = vec![0.0; w.len()];
    for o in 0..o_n {
        for c in 0..c_n {
            for j in 0..k_n {
                wt[(o * k_n + j) * c_n + c] = w[(o * c_n + c) * k_n + j];
            }
        }
    }
    wt
}

pub fn conv1d_forward(x: &[f32], w: &[f32], bias: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let t_out = g.time_out();
    let (c_n, o_n, k_n) = (g.channels_in, g.channels_out, g.width);
    let wt = transpose_kernel(w, g);
    let mut out = vec![0.0f32; g.batch * t_out * o_n];
    out.par_chunks_mut(t_out * o_n)
        .enumerate()
        .for_each(|(b, ob)| {
            let xb = &x[b * g.time_in * c_n..(b + 1) * g.time_in * c_n];
            for t in 0..t_out {
                let row = &mut ob[t * o_n..(t + 1) * o_n];
                row.copy_from_slice(bias);
                for j in 0..k_n {
                    let Some(src) = g.source(t, j) else { continue };
                    let xs = &xb[src * c_n..(src + 1) * c_n];
                    for (o, r) in row.iter_mut().enumerate() {
                        *r += dot(&wt[(o * k_n + j) * c_n..(o * k_n + j + 1) * c_n], xs);
                    }
                }
            }
        });
    out
}

/// Gradient with respect to the convolution input.
pub fn conv1d_backward_input(gout: &[f32], w: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let t_out = g.time_out();
    let (c_n, o_n, k_n) = (g.channels_in, g.channels_out, g.width);
    let wt = transpose_kernel(w, g);
    let mut dx = vec![0.0f32; g.batch * g.time_in * c_n];
    dx.par_chunks_mut(g.time_in * c_n)
        .enumerate()
        .for_each(|(b, dxb)| {
            let gb = &gout[b * t_out * o_n..(b + 1) * t_out * o_n];
            for t in 0..t_out {
                let grow = &gb[t * o_n..(t + 1) * o_n];
                for j in 0..k_n {
                    let Some(src) = g.source(t, j) else { continue };
                    let dxs = &mut dxb[src * c_n..(src + 1) * c_n];
                    for (o, &gv) in grow.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        let wrow = &wt[(o * k_n + j) * c_n..(o * k_n + j + 1) * c_n];
                        for (d, &wv) in dxs.iter_mut().zip(wrow) {
                            *d += gv * wv;
                        }
                    }
                }
            }
        });
    dx
}

/// Gradients with respect to the kernel and bias.
pub fn conv1d_backward_params(
    gout: &[f32],
    x: &[f32],
    g: &ConvGeometry,
) -> (Vec<f32>, Vec<f32>) {
    let t_out = g.time_out();
    let (c_n, o_n, k_n) = (g.channels_in, g.channels_out, g.width);
    let per_out: Vec<(Vec<f32>, f32)> = (0..o_n)
        .into_par_iter()
        .map(|o| {
            let mut acc = vec![0.0f64; k_n * c_n];
            let mut part = vec![0.0f32; k_n * c_n];
            let mut bias_acc = 0.0f64;
            for b in 0..g.batch {
                let xb = &x[b * g.time_in * c_n..(b + 1) * g.time_in * c_n];
                let gb = &gout[b * t_out * o_n..(b + 1) * t_out * o_n];
                part.iter_mut().for_each(|p| *p = 0.0);
                let mut bias_part = 0.0f64;
                for t in 0..t_out {
                    let gv = gb[t * o_n + o];
                    if gv == 0.0 {
                        continue;
                    }
                    bias_part += f64::from(gv);
                    for j in 0..k_n {
                        let Some(src) = g.source(t, j) else { continue };
                        let xs = &xb[src * c_n..(src + 1) * c_n];
                        for (p, &xv) in part[j * c_n..(j + 1) * c_n].iter_mut().zip(xs) {
                            *p += gv * xv;
                        }
                    }
                }
                for (a, &p) in acc.iter_mut().zip(&part) {
                    *a += f64::from(p);
                }
                bias_acc += bias_part;
            }
            // back to [in][width] order
            let mut dw = vec![0.0f32; c_n * k_n];
            for j in 0..k_n {
                for c in 0..c_n {
                    dw[c * k_n + j] = acc[j * c_n + c] as f32;
                }
            }
            (dw, bias_acc as f32)
        })
        .collect();
    let mut dw = Vec::with_capacity(o_n * c_n * k_n);
    let mut db = Vec::with_capacity(o_n);
    for (w, b) in per_out {
        dw.extend_from_slice(&w);
        db.push(b);
    }
    (dw, db)
}

/// `y = x W^T + b` for `x: [batch][in]`, `W: [out][in]`.
pub fn dense_forward(x: &[f32], w: &[f32], bias: &[f32], batch: usize, n_in: usize) -> Vec<f32> {
    let n_out = bias.len();
    let mut y = vec![0.0f32; batch * n_out];
    y.par_chunks_mut(n_out).enumerate().for_each(|(b, yb)| {
        let xb = &x[b * n_in..(b + 1) * n_in];
        for (o, yv) in yb.iter_mut().enumerate() {
            *yv = bias[o] + dot(&w[o * n_in..(o + 1) * n_in], xb);
        }
    });
    y
}

pub fn dense_backward_input(gout: &[f32], w: &[f32], batch: usize, n_in: usize) -> Vec<f32> {
    let n_out = w.len() / n_in;
    let mut dx = vec![0.0f32; batch * n_in];
    dx.par_chunks_mut(n_in).enumerate().for_each(|(b, dxb)| {
        let gb = &gout[b * n_out..(b + 1) * n_out];
        for (o, &gv) in gb.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            for (d, &wv) in dxb.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                *d += gv * wv;
            }
        }
    });
    dx
}

pub fn dense_backward_params(
    gout: &[f32],
    x: &[f32],
    batch: usize,
    n_in: usize,
    n_out: usize,
) -> (Vec<f32>, Vec<f32>) {
    let mut dw = vec![0.0f32; n_out * n_in];
    dw.par_chunks_mut(n_in).enumerate().for_each(|(o, row)| {
        let mut acc = vec![0.0f64; n_in];
        for b in 0..batch {
            let gv = f64::from(gout[b * n_out + o]);
            if gv == 0.0 {
                continue;
            }
            for (a, &xv) in acc.iter_mut().zip(&x[b * n_in..(b + 1) * n_in]) {
                *a += gv * f64::from(xv);
            }
        }
        for (r, a) in row.iter_mut().zip(acc) {
            *r = a as f32;
        }
    });
    let db = (0..n_out)
        .map(|o| (0..batch).map(|b| f64::from(gout[b * n_out + o])).sum::<f64>() as f32)
        .collect();
    (dw, db)
}

/// Nearest-neighbour resampling of the time axis: `out[t] = in[t * len_in / len_out]`.
pub fn resize_time_index(t: usize, len_in: usize, len_out: usize) -> usize {
    t * len_in / len_out
}
