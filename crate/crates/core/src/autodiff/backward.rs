//! Backward rules. Each rule is built from tape operations so its output is
//! differentiable whenever the tape is recording.

use super::{OpKind, Var};
use crate::error::Result;

/// Reduces a broadcast gradient back to `shape`; no-op when shapes already match.
fn unbroadcast<'t>(g: Var<'t>, shape: &[usize]) -> Result<Var<'t>> {
    if g.shape() == shape {
        Ok(g)
    } else {
        g.sum_to(shape)
    }
}

/// Returns the gradient contribution for each parent of `out` (None where `needs` is false).
pub(super) fn rule<'t>(
    op: &OpKind,
    inputs: &[Var<'t>],
    out: Var<'t>,
    g: Var<'t>,
    needs: &[bool],
) -> Result<Vec<Option<Var<'t>>>> {
    let tape = out.tape();
    let one = |v: Result<Var<'t>>| -> Result<Vec<Option<Var<'t>>>> { Ok(vec![Some(v?)]) };
    match op {
        OpKind::Add => {
            let a = if needs[0] { Some(unbroadcast(g, &inputs[0].shape())?) } else { None };
            let b = if needs[1] { Some(unbroadcast(g, &inputs[1].shape())?) } else { None };
            Ok(vec![a, b])
        }
        OpKind::Sub => {
            let a = if needs[0] { Some(unbroadcast(g, &inputs[0].shape())?) } else { None };
            let b = if needs[1] { Some(unbroadcast(g, &inputs[1].shape())?.neg()?) } else { None };
            Ok(vec![a, b])
        }
        OpKind::Mul => {
            let (x, y) = (inputs[0], inputs[1]);
            let a = if needs[0] { Some(unbroadcast(g.mul(y)?, &x.shape())?) } else { None };
            let b = if needs[1] { Some(unbroadcast(g.mul(x)?, &y.shape())?) } else { None };
            Ok(vec![a, b])
        }
        OpKind::Neg => one(g.neg()),
        OpKind::ScalarMul(k) => one(g.scale(*k)),
        OpKind::MatMul => {
            let (x, y) = (inputs[0], inputs[1]);
            let a = if needs[0] { Some(g.matmul(y.transpose()?)?) } else { None };
            let b = if needs[1] { Some(x.transpose()?.matmul(g)?) } else { None };
            Ok(vec![a, b])
        }
        OpKind::Transpose => one(g.transpose()),
        OpKind::SumAll => one(g.broadcast_to(&inputs[0].shape())),
        OpKind::SumAxis(axis) => {
            let mut keep = inputs[0].shape();
            keep[*axis] = 1;
            one(g.reshape(&keep)?.broadcast_to(&inputs[0].shape()))
        }
        OpKind::MeanAll => {
            let shape = inputs[0].shape();
            let n: usize = shape.iter().product();
            one(g.scale(1.0 / n as f64)?.broadcast_to(&shape))
        }
        OpKind::Square => one(g.mul(inputs[0].scale(2.0)?)),
        OpKind::Exp => one(g.mul(out)),
        // d ln x = exp(-ln x) dx keeps the rule inside the division-free op set.
        OpKind::Log => one(g.mul(out.neg()?.exp()?)),
        OpKind::Tanh => one(g.sub(g.mul(out.square()?)?)),
        OpKind::Sigmoid => one(g.mul(out.sub(out.square()?)?)),
        OpKind::Relu => {
            let mask = inputs[0].value().map(|x| if x > 0.0 { 1.0 } else { 0.0 });
            one(g.mul(tape.constant(mask)))
        }
        OpKind::Softplus => one(g.mul(inputs[0].sigmoid()?)),
        OpKind::LogSumExpRows => {
            let x = inputs[0];
            let shape = x.shape();
            let col = [shape[0], 1];
            let softmax = x.sub(out.reshape(&col)?)?.exp()?;
            one(softmax.mul(g.reshape(&col)?))
        }
        OpKind::Detach => Ok(vec![None]),
        OpKind::Concat => {
            let mut start = 0;
            let mut grads = Vec::with_capacity(inputs.len());
            for (inp, &need) in inputs.iter().zip(needs) {
                let rows = inp.shape()[0];
                if need {
                    let idx: Vec<usize> = (start..start + rows).collect();
                    grads.push(Some(g.index_select(&idx)?));
                } else {
                    grads.push(None);
                }
                start += rows;
            }
            Ok(grads)
        }
        OpKind::IndexSelect(indices) => {
            let rows = inputs[0].shape()[0];
            one(tape.apply(OpKind::ScatterRows { indices: indices.clone(), rows }, &[g]))
        }
        OpKind::ScatterRows { indices, .. } => one(tape.apply(OpKind::IndexSelect(indices.clone()), &[g])),
        OpKind::Reshape(_) => one(g.reshape(&inputs[0].shape())),
        OpKind::BroadcastTo(_) => one(unbroadcast(g, &inputs[0].shape())),
        OpKind::SumTo(_) => one(g.broadcast_to(&inputs[0].shape())),
    }
}
