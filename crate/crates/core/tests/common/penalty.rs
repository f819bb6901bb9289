//! Gradient-penalty checks against nested differences and a closed form.

use super::gradcheck::rel_error;
use logoforge::tensor::{Graph, Tensor, Var};
use logoforge::training::{per_sample_norms, wgan_gp_critic_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tiny smooth critic: conv 3×3 → tanh → linear.
fn critic<'g>(x: Var<'g, f64>, p: &[Var<'g, f64>]) -> Var<'g, f64> {
    let h = x.conv2d(p[0], 1, 1).unwrap().tanh().flatten().unwrap();
    h.matmul(p[1]).unwrap().reshape(&[x.dims()[0]]).unwrap()
}

fn penalty_value(x: &Tensor<f64>, params: &[Tensor<f64>]) -> f64 {
    // Inner gradient by central differences in x, then the penalty.
    let h = 1e-5;
    let n = x.dims()[0];
    let row = x.numel() / n;
    let eval = |xt: &Tensor<f64>| {
        let g = Graph::new();
        let p: Vec<_> = params.iter().map(|t| g.constant(t.clone())).collect();
        critic(g.constant(xt.clone()), &p).value().data().to_vec()
    };
    let mut sq = vec![0.0; n];
    for j in 0..row {
        let (mut plus, mut minus) = (x.clone(), x.clone());
        for i in 0..n {
            plus.data_mut()[i * row + j] += h;
            minus.data_mut()[i * row + j] -= h;
        }
        let (fp, fm) = (eval(&plus), eval(&minus));
        for i in 0..n {
            let d = (fp[i] - fm[i]) / (2.0 * h);
            sq[i] += d * d;
        }
    }
    10.0 * sq.iter().map(|s| (s.sqrt() - 1.0).powi(2)).sum::<f64>() / n as f64
}

/// Relative error between the same-tape penalty gradient of a small critic
/// and nested central differences.
pub fn nested_difference_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[2, 1, 4, 4], |_| rng.random_range(-1.0..1.0));
    let params = vec![
        Tensor::from_fn(&[2, 1, 3, 3], |_| rng.random_range(-0.5..0.5)),
        Tensor::from_fn(&[32, 1], |_| rng.random_range(-0.5..0.5)),
    ];

    let g = Graph::new();
    let p: Vec<_> = params.iter().map(|t| g.param(t.clone())).collect();
    let xv = g.param(x.clone());
    let d = critic(xv, &p);
    let gx = g.grad(d.sum(), &[xv]).unwrap()[0];
    let norms = per_sample_norms(gx).unwrap();
    let zero = g.constant(Tensor::zeros(&[2]));
    let loss = wgan_gp_critic_loss(zero, zero, norms, 10.0).unwrap();
    let analytic = g.gradients(loss, &p).unwrap();

    let h = 1e-4;
    let numeric: Vec<Tensor<f64>> = params
        .iter()
        .enumerate()
        .map(|(k, t)| {
            Tensor::from_fn(t.dims(), |i| {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus[k].data_mut()[i] += h;
                minus[k].data_mut()[i] -= h;
                (penalty_value(&x, &plus) - penalty_value(&x, &minus)) / (2.0 * h)
            })
        })
        .collect();
    rel_error(&analytic, &numeric)
}

/// Max absolute deviation from `2 (|w| - 1) w / |w|` for `D(x) = w·x`.
pub fn linear_closed_form_error() -> f64 {
    let w = Tensor::new(&[3, 1], vec![0.3, -1.2, 0.8]).unwrap();
    let g = Graph::new();
    let wv = g.param(w.clone());
    let xv = g.param(Tensor::new(&[4, 3], (0..12).map(|i| i as f64 * 0.1 - 0.5).collect()).unwrap());
    let d = xv.matmul(wv).unwrap().reshape(&[4]).unwrap();
    let gx = g.grad(d.sum(), &[xv]).unwrap()[0];
    let norms = per_sample_norms(gx).unwrap();
    let zero = g.constant(Tensor::zeros(&[4]));
    let loss = wgan_gp_critic_loss(zero, zero, norms, 1.0).unwrap();
    let got = g.gradients(loss, &[wv]).unwrap().remove(0);
    let norm = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    got.data().iter().zip(w.data()).map(|(a, &wi)| (a - 2.0 * (norm - 1.0) * wi / norm).abs()).fold(0.0, f64::max)
}
