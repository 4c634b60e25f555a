//! Unrolled recurrence over a whole sequence and its exact backward pass.
//!
//! Per-step quantities are kept in flat row-major buffers (`T × H`) so a
//! training step allocates a handful of vectors per sequence, not per step.

use super::lstm::{CellParams, MaskSpec};
use crate::tensor::{sigmoid, Matrix};

/// Pre-sampled, already scaled dropout masks for one sequence.
///
/// `None` means the corresponding noise is off. Zoneout masks hold 1 where the
/// previous state is kept.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceNoise {
    /// `T × X` multiplicative mask on the cell input.
    pub input: Option<Vec<f64>>,
    /// `H` multiplicative mask on `h_{t-1}` inside the recurrent product.
    pub recurrent: Option<Vec<f64>>,
    /// `T × H` zoneout indicators for `h`.
    pub zoneout_h: Option<Vec<f64>>,
    /// `T × H` zoneout indicators for `c`.
    pub zoneout_c: Option<Vec<f64>>,
    /// `H` mask on the final hidden state before the head.
    pub readout: Option<Vec<f64>>,
    /// Mask on the input of the head's output layer.
    pub projection: Option<Vec<f64>>,
}

impl SequenceNoise {
    pub fn is_identity(&self) -> bool {
        *self == SequenceNoise::default()
    }
}

/// Activations retained for backpropagation.
#[derive(Debug, Clone)]
pub struct RecurrentCache {
    pub steps: usize,
    pub hidden: usize,
    pub input: usize,
    /// `T × X` cell inputs after input dropout.
    pub x: Vec<f64>,
    /// `(T+1) × H`, row 0 is the zero initial state.
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    /// `T × 4H` post-activation gates in f, i, o, g order.
    pub gates: Vec<f64>,
    /// `T × H` candidate cell state before zoneout.
    pub c_new: Vec<f64>,
    /// `T × H` tanh of `c_new`.
    pub tanh_c: Vec<f64>,
}

impl RecurrentCache {
    pub fn h_last(&self) -> &[f64] {
        &self.h[self.steps * self.hidden..]
    }

    pub fn h_at(&self, t: usize) -> &[f64] {
        &self.h[(t + 1) * self.hidden..(t + 2) * self.hidden]
    }

    pub fn c_at(&self, t: usize) -> &[f64] {
        &self.c[(t + 1) * self.hidden..(t + 2) * self.hidden]
    }
}

#[inline]
fn affine(params: &CellParams, masks: Option<&MaskSpec>, x: &[f64], h: &[f64], out: &mut [f64]) {
    let hdim = params.hidden_size();
    for g in 0..4 {
        let a = &mut out[g * hdim..(g + 1) * hdim];
        a.copy_from_slice(&params.b[g]);
        match masks {
            Some(m) => {
                m.input.support_matvec_acc(&params.w[g], x, a);
                m.recurrent.support_matvec_acc(&params.u[g], h, a);
            }
            None => {
                params.w[g].matvec_acc(x, a);
                params.u[g].matvec_acc(h, a);
            }
        }
    }
}

/// Runs the cell over every row of `x` from a zero state.
pub fn run_recurrent(
    params: &CellParams,
    masks: Option<&MaskSpec>,
    x: &Matrix,
    noise: &SequenceNoise,
) -> RecurrentCache {
    let (t_len, xdim) = x.shape();
    let hdim = params.hidden_size();
    let mut cache = RecurrentCache {
        steps: t_len,
        hidden: hdim,
        input: xdim,
        x: x.as_slice().to_vec(),
        h: vec![0.0; (t_len + 1) * hdim],
        c: vec![0.0; (t_len + 1) * hdim],
        gates: vec![0.0; t_len * 4 * hdim],
        c_new: vec![0.0; t_len * hdim],
        tanh_c: vec![0.0; t_len * hdim],
    };
    if let Some(m) = &noise.input {
        for (v, s) in cache.x.iter_mut().zip(m) {
            *v *= s;
        }
    }
    let mut h_rec = vec![0.0; hdim];
    for t in 0..t_len {
        let (h_done, h_rest) = cache.h.split_at_mut((t + 1) * hdim);
        let h_prev = &h_done[t * hdim..];
        let h_out = &mut h_rest[..hdim];
        let (c_done, c_rest) = cache.c.split_at_mut((t + 1) * hdim);
        let c_prev = &c_done[t * hdim..];
        let c_out = &mut c_rest[..hdim];

        let h_in: &[f64] = match &noise.recurrent {
            Some(r) => {
                for j in 0..hdim {
                    h_rec[j] = h_prev[j] * r[j];
                }
                &h_rec
            }
            None => h_prev,
        };
        let gates = &mut cache.gates[t * 4 * hdim..(t + 1) * 4 * hdim];
        affine(params, masks, &cache.x[t * xdim..(t + 1) * xdim], h_in, gates);
        for v in &mut gates[..3 * hdim] {
            *v = sigmoid(*v);
        }
        for v in &mut gates[3 * hdim..] {
            *v = v.tanh();
        }
        let (f, rest) = gates.split_at(hdim);
        let (i, rest) = rest.split_at(hdim);
        let (o, g) = rest.split_at(hdim);
        let c_new = &mut cache.c_new[t * hdim..(t + 1) * hdim];
        let tanh_c = &mut cache.tanh_c[t * hdim..(t + 1) * hdim];
        for j in 0..hdim {
            c_new[j] = f[j] * c_prev[j] + i[j] * g[j];
            tanh_c[j] = c_new[j].tanh();
            let h_new = o[j] * tanh_c[j];
            h_out[j] = match &noise.zoneout_h {
                Some(z) if z[t * hdim + j] != 0.0 => h_prev[j],
                _ => h_new,
            };
            c_out[j] = match &noise.zoneout_c {
                Some(z) if z[t * hdim + j] != 0.0 => c_prev[j],
                _ => c_new[j],
            };
        }
    }
    cache
}

/// Backpropagates `dh_last = ∂L/∂h_T` through the unrolled sequence.
///
/// Gradients are accumulated into `grads`; masked weight gradients only touch
/// the mask support. When `dx` is given it receives `∂L/∂x` (before input
/// dropout, so with respect to the raw input rows).
pub fn backprop_recurrent(
    params: &CellParams,
    masks: Option<&MaskSpec>,
    cache: &RecurrentCache,
    noise: &SequenceNoise,
    dh_last: &[f64],
    grads: &mut CellParams,
    mut dx: Option<&mut Matrix>,
) {
    let hdim = cache.hidden;
    let xdim = cache.input;
    let mut dh = dh_last.to_vec();
    let mut dc = vec![0.0; hdim];
    let mut da = vec![0.0; 4 * hdim];
    let mut h_rec = vec![0.0; hdim];
    let mut dh_rec = vec![0.0; hdim];
    let mut dx_t = vec![0.0; xdim];
    for t in (0..cache.steps).rev() {
        let gates = &cache.gates[t * 4 * hdim..(t + 1) * 4 * hdim];
        let c_prev = &cache.c[t * hdim..(t + 1) * hdim];
        let h_prev = &cache.h[t * hdim..(t + 1) * hdim];
        let tanh_c = &cache.tanh_c[t * hdim..(t + 1) * hdim];
        let x_t = &cache.x[t * xdim..(t + 1) * xdim];
        let mut dh_prev_direct = vec![0.0; hdim];
        let mut dc_prev = vec![0.0; hdim];
        for j in 0..hdim {
            let (f, i, o, g) = (gates[j], gates[hdim + j], gates[2 * hdim + j], gates[3 * hdim + j]);
            let zh = noise.zoneout_h.as_ref().map_or(0.0, |z| z[t * hdim + j]);
            let zc = noise.zoneout_c.as_ref().map_or(0.0, |z| z[t * hdim + j]);
            let dh_new = dh[j] * (1.0 - zh);
            dh_prev_direct[j] = dh[j] * zh;
            let d_o = dh_new * tanh_c[j];
            let dc_new = dh_new * o * (1.0 - tanh_c[j] * tanh_c[j]) + dc[j] * (1.0 - zc);
            dc_prev[j] = dc[j] * zc + dc_new * f;
            let d_f = dc_new * c_prev[j];
            let d_i = dc_new * g;
            let d_g = dc_new * i;
            da[j] = d_f * f * (1.0 - f);
            da[hdim + j] = d_i * i * (1.0 - i);
            da[2 * hdim + j] = d_o * o * (1.0 - o);
            da[3 * hdim + j] = d_g * (1.0 - g * g);
        }
        let h_in: &[f64] = match &noise.recurrent {
            Some(r) => {
                for j in 0..hdim {
                    h_rec[j] = h_prev[j] * r[j];
                }
                &h_rec
            }
            None => h_prev,
        };
        dh_rec.fill(0.0);
        dx_t.fill(0.0);
        for g in 0..4 {
            let a = &da[g * hdim..(g + 1) * hdim];
            for (b, d) in grads.b[g].iter_mut().zip(a) {
                *b += d;
            }
            match masks {
                Some(m) => {
                    m.input.support_add_outer(&mut grads.w[g], a, x_t);
                    m.recurrent.support_add_outer(&mut grads.u[g], a, h_in);
                    m.recurrent.support_matvec_t_acc(&params.u[g], a, &mut dh_rec);
                    if dx.is_some() {
                        m.input.support_matvec_t_acc(&params.w[g], a, &mut dx_t);
                    }
                }
                None => {
                    grads.w[g].add_outer(a, x_t);
                    grads.u[g].add_outer(a, h_in);
                    params.u[g].matvec_t_acc(a, &mut dh_rec);
                    if dx.is_some() {
                        params.w[g].matvec_t_acc(a, &mut dx_t);
                    }
                }
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let row = dx.row_mut(t);
            match &noise.input {
                Some(m) => {
                    for (k, v) in row.iter_mut().enumerate() {
                        *v += dx_t[k] * m[t * xdim + k];
                    }
                }
                None => {
                    for (v, d) in row.iter_mut().zip(&dx_t) {
                        *v += d;
                    }
                }
            }
        }
        for j in 0..hdim {
            let r = noise.recurrent.as_ref().map_or(1.0, |r| r[j]);
            dh[j] = dh_prev_direct[j] + dh_rec[j] * r;
        }
        dc = dc_prev;
    }
}
