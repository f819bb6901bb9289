//! Central finite-difference gradient checks in 64-bit mode.

use logoforge::tensor::{Graph, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type OpFn =
    Box<dyn for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>, TensorError>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub f: OpFn,
}

pub const FD_STEP: f64 = 1e-3;

fn rand_t(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero, for ops with a kink at the origin.
fn rand_away(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `max |a - n| / max(max |n|, max |a|, 1e-3)` over all entries.
pub fn rel_error(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>]) -> f64 {
    let mut num = 0.0f64;
    let mut scale = 1e-3f64;
    for (a, n) in analytic.iter().zip(numeric) {
        for (x, y) in a.data().iter().zip(n.data()) {
            num = num.max((x - y).abs());
            scale = scale.max(x.abs()).max(y.abs());
        }
    }
    num / scale
}

fn weights_for(dims: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand_t(&mut rng, dims, -1.0, 1.0)
}

/// `sum(f(inputs) * R)` with a fixed random projection `R`.
fn projected<'g>(
    g: &'g Graph<f64>,
    case: &OpCase,
    vars: &[Var<'g, f64>],
) -> Result<Var<'g, f64>, TensorError> {
    let y = (case.f)(g, vars)?;
    let r = g.constant(weights_for(&y.dims(), 7));
    Ok(y.mul(r)?.sum())
}

fn loss_at(case: &OpCase, inputs: &[Tensor<f64>]) -> f64 {
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    projected(&g, case, &vars).unwrap().item()
}

fn first_grad_at(case: &OpCase, inputs: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = projected(&g, case, &vars).unwrap();
    g.gradients(loss, &vars).unwrap()
}

/// Second-order objective: `sum_i <grad_i, S_i>` for fixed random `S_i`.
fn second_loss_at(case: &OpCase, inputs: &[Tensor<f64>]) -> f64 {
    first_grad_at(case, inputs)
        .iter()
        .enumerate()
        .map(|(i, gr)| {
            let s = weights_for(gr.dims(), 100 + i as u64);
            gr.data().iter().zip(s.data()).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum()
}

fn numeric_grad(inputs: &[Tensor<f64>], f: impl Fn(&[Tensor<f64>]) -> f64) -> Vec<Tensor<f64>> {
    let mut out = Vec::new();
    for i in 0..inputs.len() {
        let mut gi = Tensor::zeros(inputs[i].dims());
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            gi.data_mut()[j] = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        }
        out.push(gi);
    }
    out
}

/// Relative error of the first-order gradient.
pub fn check_first_order(case: &OpCase) -> f64 {
    let analytic = first_grad_at(case, &case.inputs);
    let numeric = numeric_grad(&case.inputs, |x| loss_at(case, x));
    rel_error(&analytic, &numeric)
}

/// Relative error of the gradient of a gradient expression.
pub fn check_second_order(case: &OpCase) -> f64 {
    let g = Graph::new();
    let vars: Vec<_> = case.inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = projected(&g, case, &vars).unwrap();
    let grads = g.grad(loss, &vars).unwrap();
    let mut second = g.constant(Tensor::scalar(0.0));
    for (i, gr) in grads.iter().enumerate() {
        let s = g.constant(weights_for(&gr.dims(), 100 + i as u64));
        second = second.add(gr.mul(s).unwrap().sum()).unwrap();
    }
    // Inputs the gradient expression does not depend on get zero.
    let analytic: Vec<Tensor<f64>> = if second.requires_grad() {
        g.gradients(second, &vars).unwrap()
    } else {
        case.inputs.iter().map(|t| Tensor::zeros(t.dims())).collect()
    };
    let numeric = numeric_grad(&case.inputs, |x| second_loss_at(case, x));
    rel_error(&analytic, &numeric)
}

macro_rules! case {
    ($name:expr, [$($inp:expr),*], |$g:ident, $v:ident| $body:expr) => {
        OpCase {
            name: $name,
            inputs: vec![$($inp),*],
            f: Box::new(|$g, $v| {
                #[allow(unused_variables)]
                let _ = &$g;
                $body
            }),
        }
    };
}

/// Random instances of every differentiable op.
pub fn op_cases(seed: u64, reps: usize) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cases = Vec::new();
    for _ in 0..reps {
        let pos_b = rand_t(r, &[3, 4], 0.5, 1.5);
        cases.extend([
            case!("add", [rand_t(r, &[3, 4], -1., 1.), rand_t(r, &[3, 4], -1., 1.)], |g, v| v[0].add(v[1])),
            case!("sub", [rand_t(r, &[3, 4], -1., 1.), rand_t(r, &[3, 4], -1., 1.)], |g, v| v[0].sub(v[1])),
            case!("mul", [rand_t(r, &[3, 4], -1., 1.), rand_t(r, &[3, 4], -1., 1.)], |g, v| v[0].mul(v[1])),
            case!("div", [rand_t(r, &[3, 4], -1., 1.), pos_b], |g, v| v[0].div(v[1])),
            case!("neg", [rand_t(r, &[5], -1., 1.)], |g, v| Ok(v[0].neg())),
            case!("scale", [rand_t(r, &[5], -1., 1.)], |g, v| Ok(v[0].scale(0.7))),
            case!("add_scalar", [rand_t(r, &[5], -1., 1.)], |g, v| Ok(v[0].add_scalar(0.3))),
            case!("square", [rand_t(r, &[5], -1., 1.)], |g, v| Ok(v[0].square())),
            case!("mul_const", [rand_t(r, &[2, 3], -1., 1.)], |g, v| {
                v[0].mul_const(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5))
            }),
            case!("sum", [rand_t(r, &[2, 3], -1., 1.)], |g, v| Ok(v[0].sum())),
            case!("mean", [rand_t(r, &[2, 3], -1., 1.)], |g, v| Ok(v[0].mean())),
            case!("sum_to_axis", [rand_t(r, &[2, 3, 4], -1., 1.)], |g, v| v[0].sum_to_axis(1)),
            case!("expand_axis", [rand_t(r, &[3], -1., 1.)], |g, v| v[0].expand_axis(1, &[2, 3, 4])),
            case!("channel_bias", [rand_t(r, &[2, 3, 2, 2], -1., 1.), rand_t(r, &[3], -1., 1.)], |g, v| {
                v[0].add_channel_bias(v[1])
            }),
            case!("matmul", [rand_t(r, &[3, 4], -1., 1.), rand_t(r, &[4, 2], -1., 1.)], |g, v| v[0].matmul(v[1])),
            case!("transpose", [rand_t(r, &[3, 5], -1., 1.)], |g, v| v[0].t()),
            case!("reshape", [rand_t(r, &[2, 6], -1., 1.)], |g, v| v[0].reshape(&[3, 4])),
            case!("conv2d_s1p1", [rand_t(r, &[2, 2, 5, 5], -1., 1.), rand_t(r, &[3, 2, 3, 3], -1., 1.)], |g, v| {
                v[0].conv2d(v[1], 1, 1)
            }),
            case!("conv2d_s2p1", [rand_t(r, &[1, 2, 6, 6], -1., 1.), rand_t(r, &[2, 2, 4, 4], -1., 1.)], |g, v| {
                v[0].conv2d(v[1], 2, 1)
            }),
            case!("conv2d_1x1", [rand_t(r, &[2, 3, 3, 3], -1., 1.), rand_t(r, &[2, 3, 1, 1], -1., 1.)], |g, v| {
                v[0].conv2d(v[1], 1, 0)
            }),
            case!("conv2d_transpose", [rand_t(r, &[1, 3, 3, 3], -1., 1.), rand_t(r, &[3, 2, 4, 4], -1., 1.)], |g, v| {
                v[0].conv2d_transpose(v[1], 2, 1)
            }),
            case!("conv2d_weight_grad", [rand_t(r, &[1, 2, 5, 5], -1., 1.), rand_t(r, &[1, 3, 5, 5], -1., 1.)], |g, v| {
                v[0].conv2d_weight_grad(v[1], 3, 3, 1, 1)
            }),
            case!("leaky_relu", [rand_away(r, &[4, 4])], |g, v| Ok(v[0].leaky_relu(0.2))),
            case!("relu", [rand_away(r, &[4, 4])], |g, v| Ok(v[0].relu())),
            case!("tanh", [rand_t(r, &[6], -2., 2.)], |g, v| Ok(v[0].tanh())),
            case!("sigmoid", [rand_t(r, &[6], -3., 3.)], |g, v| Ok(v[0].sigmoid())),
            case!("softplus", [rand_t(r, &[6], -3., 3.)], |g, v| Ok(v[0].softplus())),
            case!("exp", [rand_t(r, &[6], -1., 1.)], |g, v| Ok(v[0].exp())),
            case!("ln", [rand_t(r, &[6], 0.5, 2.)], |g, v| Ok(v[0].ln())),
            case!("sqrt", [rand_t(r, &[6], 0.5, 2.)], |g, v| Ok(v[0].sqrt())),
            case!("log_softmax", [rand_t(r, &[3, 5], -2., 2.)], |g, v| v[0].log_softmax()),
            case!("concat", [rand_t(r, &[2, 3, 2, 2], -1., 1.), rand_t(r, &[2, 1, 2, 2], -1., 1.)], |g, v| {
                g.concat(&[v[0], v[1]], 1)
            }),
            case!("slice", [rand_t(r, &[2, 4, 3], -1., 1.)], |g, v| v[0].slice_axis(1, 1, 2)),
            case!("pad", [rand_t(r, &[2, 2, 3], -1., 1.)], |g, v| v[0].pad_axis(1, 1, 4)),
            case!("upsample2", [rand_t(r, &[1, 2, 3, 3], -1., 1.)], |g, v| v[0].upsample2()),
            case!("avgpool2", [rand_t(r, &[1, 2, 4, 4], -1., 1.)], |g, v| v[0].avgpool2()),
            case!("blur", [rand_t(r, &[1, 2, 7, 7], -1., 1.)], |g, v| v[0].gaussian_blur(1.0)),
        ]);
    }
    cases
}
