//! Finite-difference verification of first and second derivatives.
//!
//! The finite-difference side only ever reads forward values, so it is an
//! independent check on the backward rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Relative error with the `max(|a|, |b|, 1e-8)` denominator.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let out = f(tape.constant(x.clone()))?;
    out.item()
}

fn autodiff_grad<F>(f: &F, x: &Tensor) -> Result<Tensor>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = f(v)?;
    let g = tape.grad(out, &[v], false)?;
    Ok((*g[0].value()).clone())
}

fn perturbed(x: &Tensor, i: usize, delta: f64) -> Tensor {
    let mut p = x.clone();
    p.data_mut()[i] += delta;
    p
}

/// Outcome of comparing autodiff against central differences.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CheckReport {
    /// Max over coordinates of `relative_error(autodiff, fd)`.
    pub max_rel: f64,
    /// The same after discounting the rounding error a central difference can
    /// carry, `ε_mach·max(|f(x+εe)|, |f(x−εe)|) / ε`.
    pub max_rel_beyond_rounding: f64,
}

impl CheckReport {
    fn record(&mut self, exact: f64, fd: f64, scale: f64, eps: f64) {
        let rel = relative_error(exact, fd);
        let floor = f64::EPSILON * scale / eps;
        let den = exact.abs().max(fd.abs()).max(1e-8);
        self.max_rel = self.max_rel.max(rel);
        self.max_rel_beyond_rounding = self.max_rel_beyond_rounding.max(((exact - fd).abs() - floor).max(0.0) / den);
    }

    fn merge(self, other: Self) -> Self {
        Self {
            max_rel: self.max_rel.max(other.max_rel),
            max_rel_beyond_rounding: self.max_rel_beyond_rounding.max(other.max_rel_beyond_rounding),
        }
    }
}

/// Max over coordinates of the relative error between the autodiff gradient of
/// `f` at `x` and the central difference `(f(x+εe) − f(x−εe)) / 2ε`.
pub fn check_gradient<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    Ok(gradient_report(f, x, eps)?.max_rel)
}

pub fn gradient_report<F>(f: F, x: &Tensor, eps: f64) -> Result<CheckReport>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let g = autodiff_grad(&f, x)?;
    let mut report = CheckReport::default();
    for i in 0..x.len() {
        let (hi, lo) = (eval(&f, &perturbed(x, i, eps))?, eval(&f, &perturbed(x, i, -eps))?);
        report.record(g.data()[i], (hi - lo) / (2.0 * eps), hi.abs().max(lo.abs()), eps);
    }
    Ok(report)
}

/// Max relative error between the autodiff Hessian (gradient of each gradient
/// coordinate, built with `create_graph`) and central differences of the
/// first-order autodiff gradient.
pub fn check_second_order<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    Ok(second_order_report(f, x, eps)?.max_rel)
}

pub fn second_order_report<F>(f: F, x: &Tensor, eps: f64) -> Result<CheckReport>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let n = x.len();
    let tape = Tape::new();
    let v = tape.leaf(x.clone());
    let g = tape.grad(f(v)?, &[v], true)?[0].reshape(&[n])?;
    let mut hessian = vec![0.0; n * n];
    for i in 0..n {
        let gi = g.index_select(&[i])?.sum()?;
        if !gi.is_tracked() {
            continue;
        }
        let row = tape.grad(gi, &[v], false)?[0].value();
        hessian[i * n..(i + 1) * n].copy_from_slice(row.data());
    }
    let mut report = CheckReport::default();
    for j in 0..n {
        let plus = autodiff_grad(&f, &perturbed(x, j, eps))?;
        let minus = autodiff_grad(&f, &perturbed(x, j, -eps))?;
        for i in 0..n {
            let (hi, lo) = (plus.data()[i], minus.data()[i]);
            report.record(hessian[i * n + j], (hi - lo) / (2.0 * eps), hi.abs().max(lo.abs()), eps);
        }
    }
    Ok(report)
}

/// One layer of a randomly generated composite graph.
#[derive(Clone, Debug)]
pub enum GraphStep {
    Tanh,
    Sigmoid,
    Softplus,
    Square,
    /// Adds a constant of the running shape.
    AddConst(Tensor),
    /// Adds the input back in (a skip path).
    AddInput,
    MulConst(Tensor),
    MulInput,
    /// Right-multiplies by a square constant.
    MatMul(Tensor),
}

/// A random differentiable graph over a `[rows, cols]` input, reduced to a scalar
/// by `sum_all` or `mean_all`.
#[derive(Clone, Debug)]
pub struct RandomGraph {
    pub rows: usize,
    pub cols: usize,
    pub steps: Vec<GraphStep>,
    pub mean_reduce: bool,
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
        .expect("shape and data agree")
}

impl RandomGraph {
    pub fn sample(rng: &mut ChaCha8Rng, max_depth: usize) -> Self {
        let rows = rng.gen_range(1..=3);
        let cols = rng.gen_range(1..=4);
        let depth = rng.gen_range(1..=max_depth.max(1));
        let steps = (0..depth)
            .map(|_| match rng.gen_range(0..9) {
                0 => GraphStep::Tanh,
                1 => GraphStep::Sigmoid,
                2 => GraphStep::Softplus,
                3 => GraphStep::Square,
                4 => GraphStep::AddConst(uniform_tensor(rng, &[rows, cols], 1.0)),
                5 => GraphStep::AddInput,
                6 => GraphStep::MulConst(uniform_tensor(rng, &[rows, cols], 1.5)),
                7 => GraphStep::MulInput,
                _ => GraphStep::MatMul(uniform_tensor(rng, &[cols, cols], 1.0)),
            })
            .collect();
        Self { rows, cols, steps, mean_reduce: rng.gen_bool(0.5) }
    }

    pub fn input(&self, rng: &mut ChaCha8Rng) -> Tensor {
        uniform_tensor(rng, &[self.rows, self.cols], 1.0)
    }

    pub fn eval<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let tape = x.tape();
        let mut h = x;
        for step in &self.steps {
            h = match step {
                GraphStep::Tanh => h.tanh()?,
                GraphStep::Sigmoid => h.sigmoid()?,
                GraphStep::Softplus => h.softplus()?,
                GraphStep::Square => h.square()?,
                GraphStep::AddConst(c) => h.add(tape.constant(c.clone()))?,
                GraphStep::AddInput => h.add(x)?,
                GraphStep::MulConst(c) => h.mul(tape.constant(c.clone()))?,
                GraphStep::MulInput => h.mul(x)?,
                GraphStep::MatMul(m) => h.matmul(tape.constant(m.clone()))?,
            };
        }
        if self.mean_reduce {
            h.mean()
        } else {
            h.sum()
        }
    }
}

/// Summary of a randomized gradient-check run.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub graphs: usize,
    pub first_order: CheckReport,
    pub second_order: CheckReport,
    /// Graphs whose first-order error reaches 1e-6.
    pub first_order_failures: usize,
    /// Graphs whose second-order error reaches 1e-4.
    pub second_order_failures: usize,
}

/// Checks `graphs` random composite graphs of depth ≤ 6 at first order
/// (eps 1e-5) and second order (eps 1e-4).
pub fn random_graph_suite(seed: u64, graphs: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport {
        graphs,
        first_order: CheckReport::default(),
        second_order: CheckReport::default(),
        first_order_failures: 0,
        second_order_failures: 0,
    };
    for _ in 0..graphs {
        let graph = RandomGraph::sample(&mut rng, 6);
        let x = graph.input(&mut rng);
        let first = gradient_report(|v| graph.eval(v), &x, 1e-5)?;
        let second = second_order_report(|v| graph.eval(v), &x, 1e-4)?;
        report.first_order_failures += usize::from(first.max_rel >= 1e-6);
        report.second_order_failures += usize::from(second.max_rel >= 1e-4);
        report.first_order = report.first_order.merge(first);
        report.second_order = report.second_order.merge(second);
    }
    Ok(report)
}

/// A named single-op probe used to check closure under differentiation.
pub struct OpProbe {
    pub name: &'static str,
    pub input: Tensor,
    pub f: Box<dyn for<'t> Fn(Var<'t>) -> Result<Var<'t>> + Send + Sync>,
}

fn probe(
    name: &'static str,
    input: &Tensor,
    f: impl for<'t> Fn(Var<'t>) -> Result<Var<'t>> + Send + Sync + 'static,
) -> OpProbe {
    OpProbe { name, input: input.clone(), f: Box::new(f) }
}

/// `sum(inner(x) * w)` for a fixed constant `w`.
fn weighted(
    name: &'static str,
    input: &Tensor,
    w: &Tensor,
    inner: impl for<'t> Fn(Var<'t>) -> Result<Var<'t>> + Send + Sync + 'static,
) -> OpProbe {
    let w = w.clone();
    probe(name, input, move |x| {
        let t = x.tape();
        inner(x)?.mul(t.constant(w.clone()))?.sum()
    })
}

/// One probe per differentiable op kind. Linear ops are composed with a
/// nonlinearity so their second derivatives are not trivially zero.
pub fn op_probes(seed: u64) -> Vec<OpProbe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform_tensor(&mut rng, &[2, 3], 1.0);
    let w = uniform_tensor(&mut rng, &[2, 3], 1.0);
    let w32 = uniform_tensor(&mut rng, &[3, 2], 1.0);
    let w33 = uniform_tensor(&mut rng, &[3, 3], 1.0);
    let w43 = uniform_tensor(&mut rng, &[4, 3], 1.0);
    let positive = x.map(|v| v.abs() + 0.5);

    vec![
        weighted("add", &x, &w, |x| x.add(x.square()?)),
        weighted("sub", &x, &w, |x| x.square()?.sub(x.tanh()?)),
        weighted("neg", &x, &w, |x| x.square()?.neg()),
        weighted("mul", &x, &w, |x| x.mul(x.sigmoid()?)),
        weighted("scalar_mul", &x, &w, |x| x.square()?.scale(-1.7)),
        weighted("matmul", &x, &w, move |x| {
            let t = x.tape();
            x.matmul(t.constant(w33.clone()))?.mul(x)
        }),
        probe("matmul_rhs", &x, {
            let w43 = w43.clone();
            move |x| {
                let t = x.tape();
                t.constant(w43.clone()).matmul(x.transpose()?)?.square()?.sum()
            }
        }),
        weighted("transpose", &x, &w32, |x| x.square()?.transpose()),
        probe("sum_all", &x, |x| x.sum()?.square()),
        probe("sum_axis", &x, |x| x.sum_axis(1)?.square()?.sum()),
        probe("mean_all", &x, |x| x.tanh()?.mean()?.square()),
        weighted("square", &x, &w, |x| x.square()),
        weighted("exp", &x, &w, |x| x.exp()),
        weighted("log", &positive, &w, |x| x.ln()),
        weighted("tanh", &x, &w, |x| x.tanh()),
        weighted("sigmoid", &x, &w, |x| x.sigmoid()),
        weighted("relu", &x, &w, |x| x.relu()?.mul(x)),
        weighted("softplus", &x, &w, |x| x.softplus()),
        probe("logsumexp_rows", &x, |x| x.logsumexp_rows()?.square()?.sum()),
        weighted("concat", &x, &w43, |x| Var::concat(&[x, x.square()?])?.square()),
        weighted("index_select", &x, &w, |x| x.index_select(&[1, 0])?.mul(x)),
        probe("reshape", &x, |x| x.reshape(&[3, 2])?.logsumexp_rows()?.sum()),
        probe("broadcast_to", &x, |x| x.sum_axis(0)?.broadcast_to(&[4, 3])?.tanh()?.sum()),
    ]
}
