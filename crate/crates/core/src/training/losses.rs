use crate::models::ModelError;
use crate::tensor::{Element, Graph, Tensor, Var};

/// Standard GAN objective on pre-sigmoid logits `[N]`, in softplus form:
/// `d = mean softplus(-real) + mean softplus(fake)`,
/// `g = mean softplus(-fake)`.
pub fn dcgan_losses<'g>(d_real: Var<'g, f32>, d_fake: Var<'g, f32>) -> Result<(Var<'g, f32>, Var<'g, f32>), ModelError> {
    check_finite(&d_real, "real logits")?;
    check_finite(&d_fake, "fake logits")?;
    let d = d_real.neg().softplus().mean().add(d_fake.softplus().mean())?;
    let g = d_fake.neg().softplus().mean();
    Ok((d, g))
}

/// Generator loss alone: `mean softplus(-fake)`.
pub fn dcgan_generator_loss<'g>(d_fake: Var<'g, f32>) -> Var<'g, f32> {
    d_fake.neg().softplus().mean()
}

/// `mean(fake) - mean(real) + lambda * mean((norm - 1)^2)`.
pub fn wgan_gp_critic_loss<'g, T: Element>(
    d_real: Var<'g, T>,
    d_fake: Var<'g, T>,
    grad_norms: Var<'g, T>,
    lambda: T,
) -> Result<Var<'g, T>, ModelError> {
    check_finite(&grad_norms, "gradient norms")?;
    let w = d_fake.mean().sub(d_real.mean())?;
    let penalty = grad_norms.add_scalar(T::from_f64(-1.0)).square().mean().scale(lambda);
    Ok(w.add(penalty)?)
}

/// Per-sample L2 norms of `grad` over every axis but the first, `[N]`.
pub fn per_sample_norms<'g, T: Element>(grad: Var<'g, T>) -> Result<Var<'g, T>, ModelError> {
    let d = grad.dims();
    let rest: usize = d[1..].iter().product();
    let sq = grad.square().reshape(&[d[0], rest])?;
    let ones = grad.graph().constant(Tensor::ones(&[rest, 1]));
    // The offset keeps the square root differentiable at zero.
    Ok(sq.matmul(ones)?.reshape(&[d[0]])?.add_scalar(T::from_f64(1e-12)).sqrt())
}

/// Uniform per-sample mixing `eps * real + (1 - eps) * fake`, as a fresh
/// leaf requiring gradients.
pub fn interpolate_samples<'g>(
    graph: &'g Graph<f32>,
    real: &Tensor<f32>,
    fake: &Tensor<f32>,
    eps: &[f32],
) -> Result<Var<'g, f32>, ModelError> {
    let n = real.dims()[0];
    if fake.dims() != real.dims() || eps.len() != n {
        return Err(ModelError::Config(format!(
            "interpolation shapes {:?} / {:?} / {}",
            real.dims(),
            fake.dims(),
            eps.len()
        )));
    }
    let row = real.numel() / n;
    let (r, f) = (real.data(), fake.data());
    let mixed = Tensor::from_fn(real.dims(), |i| {
        let e = eps[i / row];
        e * r[i] + (1.0 - e) * f[i]
    });
    Ok(graph.param(mixed))
}

/// Mean cross-entropy of `logits [N, k]` against soft targets `[N, k]`.
pub fn cross_entropy<'g>(logits: Var<'g, f32>, targets: &Tensor<f32>) -> Result<Var<'g, f32>, ModelError> {
    let n = logits.dims()[0];
    let lp = logits.log_softmax()?;
    Ok(lp.mul_const(targets.clone())?.sum().scale(-1.0 / n as f32))
}

/// Auxiliary-classifier terms `(d_term, g_term)`: the discriminator gets
/// `w * (CE(real) + CE(fake))`, the generator `w * CE(fake)`.
pub fn ac_loss_terms<'g>(
    logits_real: Var<'g, f32>,
    logits_fake: Var<'g, f32>,
    labels: &[usize],
    ac_weight: f32,
) -> Result<(Var<'g, f32>, Var<'g, f32>), ModelError> {
    let k = logits_real.dims()[1];
    let targets = crate::models::onehot_rows(labels, k)?;
    let ce_real = cross_entropy(logits_real, &targets)?;
    let ce_fake = cross_entropy(logits_fake, &targets)?;
    Ok((ce_real.add(ce_fake)?.scale(ac_weight), ce_fake.scale(ac_weight)))
}

fn check_finite<T: Element>(v: &Var<'_, T>, what: &str) -> Result<(), ModelError> {
    if v.value().is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFinite(what.into()))
    }
}
