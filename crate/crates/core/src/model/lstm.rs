//! Standard LSTM cell, gate order `[input, forget, output, candidate]`.

use super::linalg::{matvec_add, matvec_t_add, outer_add, sigmoid};

/// Activations of one cell step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// `[x; h_prev]`
    pub concat: Vec<f64>,
    /// Post-activation gates, `4 * hidden`.
    pub gates: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn forward(w: &[f64], b: &[f64], x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmCache {
    let hidden = h_prev.len();
    let mut concat = Vec::with_capacity(x.len() + hidden);
    concat.extend_from_slice(x);
    concat.extend_from_slice(h_prev);
    let mut z = b.to_vec();
    matvec_add(&mut z, w, &concat);
    let mut gates = z;
    for (k, g) in gates.iter_mut().enumerate() {
        *g = if k < 3 * hidden { sigmoid(*g) } else { g.tanh() };
    }
    let mut c = vec![0.0; hidden];
    let mut tanh_c = vec![0.0; hidden];
    let mut h = vec![0.0; hidden];
    for j in 0..hidden {
        let (i, f, o, g) = (gates[j], gates[hidden + j], gates[2 * hidden + j], gates[3 * hidden + j]);
        c[j] = f * c_prev[j] + i * g;
        tanh_c[j] = c[j].tanh();
        h[j] = o * tanh_c[j];
    }
    LstmCache {
        concat,
        gates,
        c_prev: c_prev.to_vec(),
        c,
        tanh_c,
        h,
    }
}

/// Backpropagates `dh` (and `dc` from the next step) through one step.
///
/// Accumulates into `dw`/`db`; returns `(d_concat, dc_prev)`.
pub fn backward(cache: &LstmCache, w: &[f64], dh: &[f64], dc_next: &[f64], dw: &mut [f64], db: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
    let hidden = dh.len();
    let g = &cache.gates;
    let mut dz = vec![0.0; 4 * hidden];
    let mut dc_prev = vec![0.0; hidden];
    for j in 0..hidden {
        let (i, f, o, gg) = (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
        let tc = cache.tanh_c[j];
        let dc = dc_next[j] + dh[j] * o * (1.0 - tc * tc);
        dz[j] = dc * gg * i * (1.0 - i);
        dz[hidden + j] = dc * cache.c_prev[j] * f * (1.0 - f);
        dz[2 * hidden + j] = dh[j] * tc * o * (1.0 - o);
        dz[3 * hidden + j] = dc * i * (1.0 - gg * gg);
        dc_prev[j] = dc * f;
    }
    outer_add(dw, &dz, &cache.concat);
    for (d, v) in db.iter_mut().zip(&dz) {
        *d += v;
    }
    let mut d_concat = vec![0.0; cache.concat.len()];
    matvec_t_add(&mut d_concat, w, &dz);
    (d_concat, dc_prev)
}
