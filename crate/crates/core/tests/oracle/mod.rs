//! Naive f64 reference implementations used as independent gradient oracles.
#![allow(dead_code)]

use modwatch::model::ModelSpec;
use modwatch::params::ModelParameters;

/// `[b][t][c] * [o][c][k] -> [b][t'][o]`, zero padded when `same`.
pub fn conv1d(x: &[f64], dims: [usize; 3], w: &[f64], wdims: [usize; 3], bias: &[f64], stride: usize, same: bool) -> (Vec<f64>, usize) {
    let [b_n, t_in, c_in] = dims;
    let [o_n, _, k] = wdims;
    let pad = if same { (k - 1) / 2 } else { 0 };
    let t_out = if same { t_in.div_ceil(stride) } else { (t_in - k) / stride + 1 };
    let mut y = vec![0.0; b_n * t_out * o_n];
    for b in 0..b_n {
        for t in 0..t_out {
            for o in 0..o_n {
                let mut acc = bias[o];
                for j in 0..k {
                    let pos = (t * stride + j) as isize - pad as isize;
                    if pos < 0 || pos as usize >= t_in {
                        continue;
                    }
                    for c in 0..c_in {
                        acc += w[(o * c_in + c) * k + j] * x[(b * t_in + pos as usize) * c_in + c];
                    }
                }
                y[(b * t_out + t) * o_n + o] = acc;
            }
        }
    }
    (y, t_out)
}

/// `y[b][o] = bias[o] + sum_i w[o][i] x[b][i]`.
pub fn dense(x: &[f64], batch: usize, w: &[f64], n_out: usize, bias: &[f64]) -> Vec<f64> {
    let n_in = x.len() / batch;
    let mut y = vec![0.0; batch * n_out];
    for b in 0..batch {
        for o in 0..n_out {
            y[b * n_out + o] = bias[o] + (0..n_in).map(|i| w[o * n_in + i] * x[b * n_in + i]).sum::<f64>();
        }
    }
    y
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Nearest-neighbour time resampling, `out[s] = in[floor(s * t_in / t_out)]`.
pub fn resize(x: &[f64], dims: [usize; 3], t_out: usize) -> Vec<f64> {
    let [b_n, t_in, c] = dims;
    let mut y = Vec::with_capacity(b_n * t_out * c);
    for b in 0..b_n {
        for s in 0..t_out {
            let src = (s * t_in) / t_out;
            y.extend_from_slice(&x[(b * t_in + src) * c..(b * t_in + src + 1) * c]);
        }
    }
    y
}

pub fn concat(a: &[f64], b: &[f64], batch: usize) -> Vec<f64> {
    let (na, nb) = (a.len() / batch, b.len() / batch);
    (0..batch)
        .flat_map(|r| a[r * na..(r + 1) * na].iter().chain(&b[r * nb..(r + 1) * nb]).copied().collect::<Vec<_>>())
        .collect()
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub fn kld(mu: &[f64], logvar: &[f64], batch: usize) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, l)| -0.5 * (1.0 + l - m * m - l.exp()))
        .sum::<f64>()
        / batch as f64
}

/// Central differences of `f` at `x` for the listed coordinates.
pub fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], coords: &[usize], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Parameter tensors in layer order as f64: kernel, bias, kernel, bias, ...
pub fn params_f64(p: &ModelParameters) -> Vec<Vec<f64>> {
    p.tensors().map(|t| t.data().iter().map(|&v| f64::from(v)).collect()).collect()
}

/// Full conditional-model loss `mse(x, decode(z)) + eta * kld` with
/// `z = mu + exp(logvar / 2) * eps`.
pub fn cvae_loss(spec: &ModelSpec, p: &[Vec<f64>], x: &[f64], cond: &[f64], eps: &[f64], eta: f64) -> f64 {
    let batch = x.len() / (spec.time_steps * spec.channels);
    let mut layer = 0;
    let mut next = || {
        let i = layer;
        layer += 1;
        (&p[2 * i], &p[2 * i + 1])
    };
    let k = spec.kernel_width;
    let (mut h, mut t, mut c) = (x.to_vec(), spec.time_steps, spec.channels);
    for (i, &o) in spec.encoder_kernels().iter().enumerate() {
        let (w, b) = next();
        let (y, t2) = conv1d(&h, [batch, t, c], w, [o, c, k], b, spec.stride(i), true);
        h = relu(&y);
        t = t2;
        c = o;
    }
    let (w, b) = next();
    h = relu(&dense(&h, batch, w, spec.dense_units, b));
    let hc = concat(&h, cond, batch);
    let (w, b) = next();
    let mu = dense(&hc, batch, w, spec.latent_dim, b);
    let (w, b) = next();
    let logvar = dense(&hc, batch, w, spec.latent_dim, b);
    let z: Vec<f64> = mu
        .iter()
        .zip(&logvar)
        .zip(eps)
        .map(|((m, l), e)| m + (0.5 * l).exp() * e)
        .collect();
    let mut h = concat(&z, cond, batch);
    let (w, b) = next();
    h = relu(&dense(&h, batch, w, spec.dense_units, b));
    let (w, b) = next();
    h = relu(&dense(&h, batch, w, spec.flat_len(), b));
    let (mut t, mut c) = (spec.bottleneck_len(), spec.bottleneck_channels());
    let dec = spec.decoder_kernels();
    for (i, &o) in dec.iter().enumerate() {
        if let Some(len) = spec.decoder_target_len(i) {
            h = resize(&h, [batch, t, c], len);
            t = len;
        }
        let (w, b) = next();
        let (y, _) = conv1d(&h, [batch, t, c], w, [o, c, k], b, 1, true);
        h = if i + 1 == dec.len() { y } else { relu(&y) };
        c = o;
    }
    mse(x, &h) + eta * kld(&mu, &logvar, batch)
}
