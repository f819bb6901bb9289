//! Forward-pass context and the layer primitives shared by all networks.

use std::cell::RefCell;

use super::params::{Bound, ParamSet};
use super::ModelError;
use crate::tensor::{Graph, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and record them.
    Train,
    /// Normalize with the running buffers.
    Eval,
}

/// Per-layer batch statistics observed during a training-mode forward.
#[derive(Debug, Clone)]
pub struct BatchStat {
    pub layer: String,
    pub mean: Tensor<f32>,
    /// Biased (population) variance of the batch.
    pub var: Tensor<f32>,
    pub count: usize,
}

pub struct Ctx<'a, 'g> {
    pub graph: &'g Graph<f32>,
    pub params: &'a Bound<'g>,
    pub buffers: &'a ParamSet,
    pub mode: BnMode,
    /// Soft labels `[N, k]` used to build one-hot maps; `None` disables all
    /// label inputs.
    pub labels: Option<&'a Tensor<f32>>,
    stats: RefCell<Vec<BatchStat>>,
}

impl<'a, 'g> Ctx<'a, 'g> {
    pub fn new(
        graph: &'g Graph<f32>,
        params: &'a Bound<'g>,
        buffers: &'a ParamSet,
        mode: BnMode,
        labels: Option<&'a Tensor<f32>>,
    ) -> Self {
        Self {
            graph,
            params,
            buffers,
            mode,
            labels,
            stats: RefCell::new(Vec::new()),
        }
    }

    pub fn p(&self, name: &str) -> Result<Var<'g, f32>, ModelError> {
        self.params.get(name)
    }

    pub fn take_stats(&self) -> Vec<BatchStat> {
        self.stats.take()
    }

    /// `x` with label maps concatenated on the channel axis, when labels
    /// are present.
    pub fn with_maps(&self, x: Var<'g, f32>) -> Result<Var<'g, f32>, ModelError> {
        let Some(labels) = self.labels else {
            return Ok(x);
        };
        let d = x.dims();
        let maps = soft_label_maps(labels, d[2], d[3])?;
        Ok(self.graph.concat(&[x, self.graph.constant(maps)], 1)?)
    }

    /// `x [N, F]` with the label vector appended, when labels are present.
    pub fn with_label_vec(&self, x: Var<'g, f32>) -> Result<Var<'g, f32>, ModelError> {
        match self.labels {
            Some(l) => Ok(self.graph.concat(&[x, self.graph.constant(l.clone())], 1)?),
            None => Ok(x),
        }
    }

    pub fn linear(&self, x: Var<'g, f32>, prefix: &str) -> Result<Var<'g, f32>, ModelError> {
        let w = self.p(&format!("{prefix}.w"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        let y = x.matmul(w)?;
        Ok(y.add_channel_bias(b)?)
    }

    pub fn conv(&self, x: Var<'g, f32>, prefix: &str, stride: usize, pad: usize) -> Result<Var<'g, f32>, ModelError> {
        let y = x.conv2d(self.p(&format!("{prefix}.w"))?, stride, pad)?;
        match self.params.get(&format!("{prefix}.b")) {
            Ok(b) => Ok(y.add_channel_bias(b)?),
            Err(_) => Ok(y),
        }
    }

    pub fn conv_t(&self, x: Var<'g, f32>, prefix: &str, stride: usize, pad: usize) -> Result<Var<'g, f32>, ModelError> {
        let y = x.conv2d_transpose(self.p(&format!("{prefix}.w"))?, stride, pad)?;
        Ok(y.add_channel_bias(self.p(&format!("{prefix}.b"))?)?)
    }

    /// Batch norm over every axis except 1, for `[N, C]` or `[N, C, H, W]`.
    pub fn batch_norm(&self, x: Var<'g, f32>, prefix: &str) -> Result<Var<'g, f32>, ModelError> {
        let dims = x.dims();
        let c = dims[1];
        let count = dims.iter().product::<usize>() / c;
        let gamma = self.p(&format!("{prefix}.gamma"))?;
        let beta = self.p(&format!("{prefix}.beta"))?;
        let g = self.graph;
        let (centered, inv_std) = match self.mode {
            BnMode::Train => {
                let mean = x.sum_to_axis(1)?.scale(1.0 / count as f32);
                let xc = x.sub(mean.expand_axis(1, &dims)?)?;
                let var = xc.square().sum_to_axis(1)?.scale(1.0 / count as f32);
                self.stats.borrow_mut().push(BatchStat {
                    layer: prefix.to_string(),
                    mean: (*mean.value()).clone(),
                    var: (*var.value()).clone(),
                    count,
                });
                let inv = g
                    .constant(Tensor::ones(&[c]))
                    .div(var.add_scalar(BN_EPS as f32).sqrt())?;
                (xc, inv)
            }
            BnMode::Eval => {
                let mean = self.buffers.get(&format!("{prefix}.mean"))?;
                let var = self.buffers.get(&format!("{prefix}.var"))?;
                let inv = var.map(|v| 1.0 / (v + BN_EPS as f32).sqrt());
                let xc = x.sub(g.constant(mean.clone()).expand_axis(1, &dims)?)?;
                (xc, g.constant(inv))
            }
        };
        let scale = inv_std.mul(gamma)?;
        let y = centered.mul(scale.expand_axis(1, &dims)?)?;
        Ok(y.add_channel_bias(beta)?)
    }
}

/// Per-sample spatial mean `[N, C, H, W] -> [N, C]`.
pub fn global_mean_pool<'g>(x: Var<'g, f32>) -> Result<Var<'g, f32>, ModelError> {
    let d = x.dims();
    let hw = d[2] * d[3];
    let flat = x.reshape(&[d[0] * d[1], hw])?;
    let ones = x.graph().constant(Tensor::full(&[hw, 1], 1.0 / hw as f32));
    Ok(flat.matmul(ones)?.reshape(&[d[0], d[1]])?)
}

/// Maps `[k, h, w]` with channel `label` all ones and every other channel
/// zero.
pub fn build_onehot_feature_maps(label: usize, k: usize, h: usize, w: usize) -> Result<Tensor<f32>, ModelError> {
    if label >= k {
        return Err(ModelError::Label { label, k });
    }
    let plane = h * w;
    Ok(Tensor::from_fn(&[k, h, w], |i| if i / plane == label { 1.0 } else { 0.0 }))
}

/// `[N, k, h, w]` maps, each channel filled with the sample's label weight.
pub fn soft_label_maps(labels: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>, ModelError> {
    let d = labels.dims();
    if d.len() != 2 {
        return Err(ModelError::Config(format!("labels must be [N, k], got {d:?}")));
    }
    let plane = h * w;
    let data = labels.data();
    Ok(Tensor::from_fn(&[d[0], d[1], h, w], |i| data[i / plane]))
}

/// One-hot rows `[N, k]` for integer labels.
pub fn onehot_rows(labels: &[usize], k: usize) -> Result<Tensor<f32>, ModelError> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(ModelError::Label { label: bad, k });
    }
    if labels.is_empty() {
        return Err(ModelError::Config("empty label list".into()));
    }
    Ok(Tensor::from_fn(&[labels.len(), k], |i| {
        if labels[i / k] == i % k {
            1.0
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn onehot_maps_construction() {
        let m = build_onehot_feature_maps(2, 4, 2, 2).unwrap();
        assert_eq!(m.dims(), &[4, 2, 2]);
        let expect: Vec<f32> = [0.0, 0.0, 1.0, 0.0].iter().flat_map(|&v| [v; 4]).collect();
        assert_eq!(m.data(), &expect[..]);
        assert_eq!(build_onehot_feature_maps(0, 1, 3, 3).unwrap().data(), &[1.0; 9]);
        assert!(matches!(
            build_onehot_feature_maps(4, 4, 2, 2),
            Err(ModelError::Label { label: 4, k: 4 })
        ));
    }

    #[test]
    fn soft_maps_scale_channels() {
        let l = Tensor::new(&[1, 3], vec![0.5, 0.0, 0.5]).unwrap();
        let m = soft_label_maps(&l, 1, 2).unwrap();
        assert_eq!(m.data(), &[0.5, 0.5, 0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn batch_norm_train_normalizes() {
        let g = Graph::new();
        let mut ps = ParamSet::new();
        ps.insert("bn.gamma", Tensor::ones(&[2]));
        ps.insert("bn.beta", Tensor::zeros(&[2]));
        let bound = ps.bind(&g, true);
        let bufs = ParamSet::new();
        let ctx = Ctx::new(&g, &bound, &bufs, BnMode::Train, None);
        let x = g.constant(Tensor::from_fn(&[4, 2], |i| (i * i) as f32));
        let y = ctx.batch_norm(x, "bn").unwrap().value();
        for c in 0..2 {
            let col: Vec<f32> = (0..4).map(|r| y.data()[r * 2 + c]).collect();
            let mean: f32 = col.iter().sum::<f32>() / 4.0;
            let var: f32 = col.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 4.0;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3);
        }
        assert_eq!(ctx.take_stats().len(), 1);
    }
}
