use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{build_group_mask, sigmoid, BinaryMask, Matrix};

/// Gate order used for every per-gate array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Output = 2,
    Candidate = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Output, Gate::Candidate];

    pub fn suffix(self) -> &'static str {
        match self {
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Output => "o",
            Gate::Candidate => "c",
        }
    }
}

/// Group geometry of an FG-LSTM and its two fixed masks.
///
/// `p` feature groups, `c` input components per group and `k` hidden units per
/// group give `H = k·p` hidden units and `X = c·p` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub p: usize,
    pub c: usize,
    pub k: usize,
    pub input: BinaryMask,
    pub recurrent: BinaryMask,
}

impl MaskSpec {
    pub fn new(p: usize, c: usize, k: usize) -> Result<Self> {
        if p == 0 || c == 0 || k == 0 {
            return Err(Error::InvalidArgument(format!(
                "group geometry must be positive, got p={p} c={c} k={k}"
            )));
        }
        let (h, x) = (k * p, c * p);
        Ok(Self {
            p,
            c,
            k,
            input: build_group_mask(p, h, x)?,
            recurrent: build_group_mask(p, h, h)?,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.k * self.p
    }

    pub fn input_size(&self) -> usize {
        self.c * self.p
    }

    /// Checks that the stored masks are exactly the group masks for `(p, c, k)`.
    pub fn validate(&self) -> Result<()> {
        let expected = MaskSpec::new(self.p, self.c, self.k)?;
        if expected.input != self.input || expected.recurrent != self.recurrent {
            return Err(Error::InvalidArgument("masks are not group masks for their geometry".into()));
        }
        Ok(())
    }
}

/// Weights and biases of the four gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    /// `H × X` input weights per gate.
    pub w: [Matrix; 4],
    /// `H × H` recurrent weights per gate.
    pub u: [Matrix; 4],
    pub b: [Vec<f64>; 4],
}

impl CellParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w: std::array::from_fn(|_| Matrix::zeros(hidden, input)),
            u: std::array::from_fn(|_| Matrix::zeros(hidden, hidden)),
            b: std::array::from_fn(|_| vec![0.0; hidden]),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.b[0].len()
    }

    pub fn input_size(&self) -> usize {
        self.w[0].cols()
    }

    /// Glorot-uniform weights for a dense LSTM; biases zero except the forget
    /// gate, which starts at 1.
    pub fn init_dense<R: Rng + ?Sized>(hidden: usize, input: usize, rng: &mut R) -> Self {
        let lim_w = (6.0 / (hidden + input) as f64).sqrt();
        let lim_u = (6.0 / (2 * hidden) as f64).sqrt();
        let mut p = Self::zeros(hidden, input);
        for g in 0..4 {
            p.w[g] = Matrix::random_uniform(hidden, input, lim_w, rng);
            p.u[g] = Matrix::random_uniform(hidden, hidden, lim_u, rng);
        }
        p.b[Gate::Forget as usize].fill(1.0);
        p
    }

    /// Uniform in `±1/√(c·k)` on the mask support, zero elsewhere.
    pub fn init_grouped<R: Rng + ?Sized>(masks: &MaskSpec, rng: &mut R) -> Self {
        let (h, x) = (masks.hidden_size(), masks.input_size());
        let limit = 1.0 / ((masks.c * masks.k) as f64).sqrt();
        let mut p = Self::zeros(h, x);
        for g in 0..4 {
            fill_support(&mut p.w[g], &masks.input, limit, rng);
            fill_support(&mut p.u[g], &masks.recurrent, limit, rng);
        }
        p.b[Gate::Forget as usize].fill(1.0);
        p
    }

    pub fn check_shapes(&self, hidden: usize, input: usize) -> Result<()> {
        for g in 0..4 {
            if self.w[g].shape() != (hidden, input) {
                return Err(Error::dim("CellParams.w", format!("{hidden}x{input}"), format!("{:?}", self.w[g].shape())));
            }
            if self.u[g].shape() != (hidden, hidden) {
                return Err(Error::dim("CellParams.u", format!("{hidden}x{hidden}"), format!("{:?}", self.u[g].shape())));
            }
            if self.b[g].len() != hidden {
                return Err(Error::dim("CellParams.b", hidden, self.b[g].len()));
            }
        }
        Ok(())
    }

    /// Zeros every entry outside the masks' support.
    pub fn apply_masks(&mut self, masks: &MaskSpec) {
        for g in 0..4 {
            zero_off_support(&mut self.w[g], &masks.input);
            zero_off_support(&mut self.u[g], &masks.recurrent);
        }
    }

    pub(crate) fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(12);
        for gate in Gate::ALL {
            out.push((format!("w_{}", gate.suffix()), self.w[gate as usize].as_slice()));
        }
        for gate in Gate::ALL {
            out.push((format!("u_{}", gate.suffix()), self.u[gate as usize].as_slice()));
        }
        for gate in Gate::ALL {
            out.push((format!("b_{}", gate.suffix()), self.b[gate as usize].as_slice()));
        }
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(12);
        out.extend(self.w.iter_mut().map(Matrix::as_mut_slice));
        out.extend(self.u.iter_mut().map(Matrix::as_mut_slice));
        out.extend(self.b.iter_mut().map(Vec::as_mut_slice));
        out
    }
}

fn fill_support<R: Rng + ?Sized>(m: &mut Matrix, mask: &BinaryMask, limit: f64, rng: &mut R) {
    for i in 0..m.rows() {
        for &j in mask.row_support(i) {
            m.set(i, j, rng.random_range(-limit..limit));
        }
    }
}

fn zero_off_support(m: &mut Matrix, mask: &BinaryMask) {
    for (v, &bit) in m.as_mut_slice().iter_mut().zip(mask.bits()) {
        if bit == 0 {
            *v = 0.0;
        }
    }
}

/// Gate activations of one step, all of length `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateValues {
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
}

/// Pre-activations `b + (W∘M)x + (U∘M)h`, per gate. With no masks the dense
/// weights are used.
pub(crate) fn preactivations(
    params: &CellParams,
    masks: Option<&MaskSpec>,
    x: &[f64],
    h: &[f64],
) -> [Vec<f64>; 4] {
    std::array::from_fn(|g| {
        let mut a = params.b[g].clone();
        match masks {
            Some(m) => {
                m.input.support_matvec_acc(&params.w[g], x, &mut a);
                m.recurrent.support_matvec_acc(&params.u[g], h, &mut a);
            }
            None => {
                params.w[g].matvec_acc(x, &mut a);
                params.u[g].matvec_acc(h, &mut a);
            }
        }
        a
    })
}

pub(crate) fn activate(pre: [Vec<f64>; 4]) -> GateValues {
    let [f, i, o, g] = pre;
    GateValues {
        f: f.into_iter().map(sigmoid).collect(),
        i: i.into_iter().map(sigmoid).collect(),
        o: o.into_iter().map(sigmoid).collect(),
        g: g.into_iter().map(f64::tanh).collect(),
    }
}

fn check_step(params: &CellParams, x: &[f64], h: &[f64], c: &[f64]) -> Result<()> {
    let hidden = params.hidden_size();
    if x.len() != params.input_size() {
        return Err(Error::dim("cell step input", params.input_size(), x.len()));
    }
    if h.len() != hidden || c.len() != hidden {
        return Err(Error::dim("cell step state", hidden, format!("h={} c={}", h.len(), c.len())));
    }
    Ok(())
}

fn finish_step(gates: &GateValues, c_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let c: Vec<f64> = (0..c_prev.len())
        .map(|j| gates.f[j] * c_prev[j] + gates.i[j] * gates.g[j])
        .collect();
    let h = c.iter().zip(&gates.o).map(|(cj, oj)| oj * cj.tanh()).collect();
    (h, c)
}

/// One FG-LSTM step with the input and recurrent weights masked by `masks`.
pub fn fg_lstm_step(
    params: &CellParams,
    masks: &MaskSpec,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.check_shapes(masks.hidden_size(), masks.input_size())?;
    check_step(params, x, h_prev, c_prev)?;
    let gates = activate(preactivations(params, Some(masks), x, h_prev));
    Ok(finish_step(&gates, c_prev))
}

/// One dense LSTM step.
pub fn lstm_step(params: &CellParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    params.check_shapes(params.hidden_size(), params.input_size())?;
    check_step(params, x, h_prev, c_prev)?;
    let gates = activate(preactivations(params, None, x, h_prev));
    Ok(finish_step(&gates, c_prev))
}

/// Entry counts of the eight recurrent weight matrices: all of them, and those
/// permitted by the group masks.
pub fn effective_kernel_size(hidden: usize, input: usize, p: usize) -> Result<(usize, usize)> {
    let dense = 4 * (hidden * input + hidden * hidden);
    if p == 0 || hidden % p != 0 || input % p != 0 {
        return Err(Error::InvalidArgument(format!(
            "hidden ({hidden}) and input ({input}) sizes must be multiples of p = {p}"
        )));
    }
    Ok((dense, dense / p))
}

/// Dense kernel size only; no divisibility requirement.
pub fn dense_kernel_size(hidden: usize, input: usize) -> usize {
    4 * (hidden * input + hidden * hidden)
}

/// Parameters of `p` independent small LSTMs equivalent to an FG-LSTM.
///
/// Group `g` owns hidden units `g, g+p, g+2p, …` and inputs `g, g+p, …`, in
/// that order.
pub fn split_into_group_cells(params: &CellParams, masks: &MaskSpec) -> Result<Vec<CellParams>> {
    masks.validate()?;
    let (p, c, k) = (masks.p, masks.c, masks.k);
    params.check_shapes(k * p, c * p)?;
    Ok((0..p)
        .map(|g| {
            let mut small = CellParams::zeros(k, c);
            for gate in 0..4 {
                for r in 0..k {
                    let row = g + r * p;
                    for m in 0..c {
                        small.w[gate].set(r, m, params.w[gate].get(row, g + m * p));
                    }
                    for m in 0..k {
                        small.u[gate].set(r, m, params.u[gate].get(row, g + m * p));
                    }
                    small.b[gate][r] = params.b[gate][row];
                }
            }
            small
        })
        .collect())
}

/// Inverse of [`split_into_group_cells`]; off-support entries are zero.
pub fn merge_group_cells(groups: &[CellParams], masks: &MaskSpec) -> Result<CellParams> {
    let (p, c, k) = (masks.p, masks.c, masks.k);
    if groups.len() != p {
        return Err(Error::dim("merge_group_cells", p, groups.len()));
    }
    let mut params = CellParams::zeros(k * p, c * p);
    for (g, small) in groups.iter().enumerate() {
        small.check_shapes(k, c)?;
        for gate in 0..4 {
            for r in 0..k {
                let row = g + r * p;
                for m in 0..c {
                    params.w[gate].set(row, g + m * p, small.w[gate].get(r, m));
                }
                for m in 0..k {
                    params.u[gate].set(row, g + m * p, small.u[gate].get(r, m));
                }
                params.b[gate][row] = small.b[gate][r];
            }
        }
    }
    Ok(params)
}

/// Picks the entries of group `g` (`g, g+p, …`) from an interleaved vector.
pub fn deinterleave(v: &[f64], p: usize, g: usize) -> Vec<f64> {
    v.iter().skip(g).step_by(p).copied().collect()
}

/// Writes group `g`'s entries back into an interleaved vector.
pub fn interleave_into(dst: &mut [f64], src: &[f64], p: usize, g: usize) {
    for (r, v) in src.iter().enumerate() {
        dst[g + r * p] = *v;
    }
}
