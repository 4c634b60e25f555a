//! Two ways of running an FG-LSTM over a batch of sequences.
//!
//! The masked strategy stacks the four gates and multiplies the whole batch by
//! the masked `4H × X` and `4H × H` matrices, one large product each per step.
//! The small-cells strategy runs `p` independent LSTMs of `k` units, one pair
//! of small products per group and step. Before anything is timed, both are run
//! on the same inputs and compared with each other and with the per-sequence
//! reference cell; a disagreement above [`TOLERANCE`] aborts the benchmark.

use std::time::Instant;

use fglstm_core::cells::{fg_lstm_step, split_into_group_cells, CellParams, MaskSpec};
use fglstm_core::tensor::gemm_into;
use fglstm_core::{sigmoid, Error, Matrix, Result, SeedTree};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Largest accepted elementwise difference between strategies.
pub const TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchGeometry {
    pub p: usize,
    /// Hidden units per group.
    pub k: usize,
    /// Input components per group.
    pub c: usize,
    pub batch: usize,
    pub steps: usize,
}

impl BenchGeometry {
    pub fn hidden(&self) -> usize {
        self.k * self.p
    }

    pub fn input(&self) -> usize {
        self.c * self.p
    }

    pub fn validate(&self) -> Result<()> {
        if [self.p, self.k, self.c, self.batch, self.steps].contains(&0) {
            return Err(Error::config("geometry", format!("all sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// The parameter-count geometry: 100 groups of two inputs, H from 100 to 2000.
pub fn parameter_table_grid(batch: usize, steps: usize) -> Vec<BenchGeometry> {
    [1, 2, 3, 4, 5, 10, 15, 20]
        .into_iter()
        .map(|k| BenchGeometry { p: 100, k, c: 2, batch, steps })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub geometry: BenchGeometry,
    pub hidden: usize,
    pub input: usize,
    /// Both strategies run single-threaded.
    pub threads: usize,
    pub repetitions: usize,
    /// Sequences per second, from the median repetition.
    pub masked_throughput: f64,
    pub small_cells_throughput: f64,
    pub max_divergence: f64,
}

/// Random parameters and inputs for one geometry.
#[derive(Debug, Clone)]
pub struct BenchCase {
    pub geometry: BenchGeometry,
    pub masks: MaskSpec,
    pub params: CellParams,
    /// One `batch × X` matrix per step.
    pub inputs: Vec<Matrix>,
    stacked: Stacked,
    groups: Vec<Stacked>,
}

/// Gate-stacked weights `[f; i; o; g]`: `4n × in`, `4n × n`, and `4n` biases.
#[derive(Debug, Clone)]
struct Stacked {
    w: Matrix,
    u: Matrix,
    b: Vec<f64>,
}

impl Stacked {
    fn new(params: &CellParams) -> Self {
        let (n, x) = (params.hidden_size(), params.input_size());
        let w = Matrix::from_fn(4 * n, x, |r, j| params.w[r / n].get(r % n, j));
        let u = Matrix::from_fn(4 * n, n, |r, j| params.u[r / n].get(r % n, j));
        let b = (0..4 * n).map(|r| params.b[r / n][r % n]).collect();
        Self { w, u, b }
    }

    fn hidden(&self) -> usize {
        self.u.cols()
    }
}

impl BenchCase {
    pub fn new(geometry: BenchGeometry, seed: u64) -> Result<Self> {
        geometry.validate()?;
        let tree = SeedTree::new(seed);
        let masks = MaskSpec::new(geometry.p, geometry.c, geometry.k)?;
        let mut rng = tree.stream("params");
        let mut params = CellParams::init_grouped(&masks, &mut rng);
        for b in params.b.iter_mut() {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        let mut rng = tree.stream("inputs");
        let inputs = (0..geometry.steps)
            .map(|_| Matrix::random_uniform(geometry.batch, geometry.input(), 1.0, &mut rng))
            .collect();
        // Off-support entries are zero, so the masked product is a plain product
        // with the pre-masked weights.
        let stacked = Stacked::new(&params);
        let groups = split_into_group_cells(&params, &masks)?.iter().map(Stacked::new).collect();
        Ok(Self { geometry, masks, params, inputs, stacked, groups })
    }

    /// Final `(h, c)` of every sequence (`batch × H`, interleaved unit order)
    /// under the masked strategy; with `trace`, also `h` after every step.
    pub fn run_masked(&self, trace: bool) -> (Matrix, Matrix, Vec<Matrix>) {
        let g = &self.geometry;
        let mut state = State::new(g.batch, g.hidden());
        let mut history = Vec::new();
        for x in &self.inputs {
            state.step(&self.stacked, x);
            if trace {
                history.push(state.h.clone());
            }
        }
        (state.h, state.c, history)
    }

    /// Same outputs as [`BenchCase::run_masked`], computed by `p` small cells.
    pub fn run_small_cells(&self, trace: bool) -> (Matrix, Matrix, Vec<Matrix>) {
        let g = &self.geometry;
        let mut states: Vec<State> = (0..g.p).map(|_| State::new(g.batch, g.k)).collect();
        let mut xg = Matrix::zeros(g.batch, g.c);
        let mut history = Vec::new();
        for x in &self.inputs {
            for (grp, (cell, state)) in self.groups.iter().zip(states.iter_mut()).enumerate() {
                for r in 0..g.batch {
                    let row = x.row(r);
                    for (m, v) in xg.row_mut(r).iter_mut().enumerate() {
                        *v = row[grp + m * g.p];
                    }
                }
                state.step(cell, &xg);
            }
            if trace {
                history.push(interleave(&states, |s| &s.h, g));
            }
        }
        (interleave(&states, |s| &s.h, g), interleave(&states, |s| &s.c, g), history)
    }

    /// Largest elementwise difference between the strategies over every step's
    /// hidden state and the final cell state, also checked against the
    /// per-sequence reference cell on the first few sequences.
    pub fn divergence(&self) -> Result<f64> {
        let (h_a, c_a, trace_a) = self.run_masked(true);
        let (h_b, c_b, trace_b) = self.run_small_cells(true);
        let mut worst = max_diff(&c_a, &c_b).max(max_diff(&h_a, &h_b));
        for (a, b) in trace_a.iter().zip(&trace_b) {
            worst = worst.max(max_diff(a, b));
        }
        let n = self.geometry.hidden();
        for r in 0..self.geometry.batch.min(2) {
            let (mut h, mut c) = (vec![0.0; n], vec![0.0; n]);
            for (t, x) in self.inputs.iter().enumerate() {
                (h, c) = fg_lstm_step(&self.params, &self.masks, x.row(r), &h, &c)?;
                worst = worst.max(slice_diff(&h, trace_a[t].row(r)));
            }
            worst = worst.max(slice_diff(&c, c_a.row(r)));
        }
        Ok(worst)
    }
}

fn max_diff(a: &Matrix, b: &Matrix) -> f64 {
    slice_diff(a.as_slice(), b.as_slice())
}

fn slice_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn interleave(states: &[State], pick: impl Fn(&State) -> &Matrix, g: &BenchGeometry) -> Matrix {
    Matrix::from_fn(g.batch, g.hidden(), |r, j| pick(&states[j % g.p]).get(r, j / g.p))
}

/// Batched recurrent state, one row per sequence.
struct State {
    h: Matrix,
    c: Matrix,
    gates: Matrix,
}

impl State {
    fn new(batch: usize, hidden: usize) -> Self {
        Self {
            h: Matrix::zeros(batch, hidden),
            c: Matrix::zeros(batch, hidden),
            gates: Matrix::zeros(batch, 4 * hidden),
        }
    }

    fn step(&mut self, cell: &Stacked, x: &Matrix) {
        let n = cell.hidden();
        gemm_into(x, false, &cell.w, true, &mut self.gates, 0.0);
        gemm_into(&self.h, false, &cell.u, true, &mut self.gates, 1.0);
        for r in 0..self.h.rows() {
            let a = self.gates.row(r);
            let (h, c) = (self.h.row_mut(r), self.c.row_mut(r));
            for j in 0..n {
                let f = sigmoid(a[j] + cell.b[j]);
                let i = sigmoid(a[n + j] + cell.b[n + j]);
                let o = sigmoid(a[2 * n + j] + cell.b[2 * n + j]);
                let g = (a[3 * n + j] + cell.b[3 * n + j]).tanh();
                c[j] = f * c[j] + i * g;
                h[j] = o * c[j].tanh();
            }
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Verifies equivalence, then times both strategies `repetitions` times.
pub fn run_bench(geometry: BenchGeometry, repetitions: usize, seed: u64) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::config("repetitions", "must be positive"));
    }
    let case = BenchCase::new(geometry, seed)?;
    let divergence = case.divergence()?;
    if !(divergence <= TOLERANCE) {
        return Err(Error::Mismatch(format!(
            "masked and small-cell outputs differ by {divergence:e} on {geometry:?}"
        )));
    }
    let time = |f: &dyn Fn()| {
        let start = Instant::now();
        f();
        start.elapsed().as_secs_f64()
    };
    let mut masked = Vec::with_capacity(repetitions);
    let mut small = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        masked.push(time(&|| {
            std::hint::black_box(case.run_masked(false));
        }));
        small.push(time(&|| {
            std::hint::black_box(case.run_small_cells(false));
        }));
    }
    let throughput = |secs: f64| geometry.batch as f64 / secs.max(f64::MIN_POSITIVE);
    Ok(BenchReport {
        geometry,
        hidden: geometry.hidden(),
        input: geometry.input(),
        threads: 1,
        repetitions,
        masked_throughput: throughput(median(masked)),
        small_cells_throughput: throughput(median(small)),
        max_divergence: divergence,
    })
}
