use super::graph::{GradSink, Graph, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel running mean and (unbiased) variance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    /// Initial statistics: mean 0, variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

pub enum BatchNormMode<'a> {
    /// Normalize with batch statistics and fold them into `running`.
    Train {
        running: &'a mut RunningStats,
        momentum: f64,
    },
    Eval { running: &'a RunningStats },
}

impl Graph {
    /// Per-channel batch normalization over the `(N, H, W)` axes.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
        epsilon: f64,
    ) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("batch_norm")?;
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::shape(
                "batch_norm",
                format!("affine parameters must have {c} entries"),
            ));
        }
        let plane = h * w;
        let count = (n * plane) as f64;
        let xd = x.data();
        let channel_values = |ch: usize| {
            (0..n).flat_map(move |s| xd[(s * c + ch) * plane..(s * c + ch + 1) * plane].iter())
        };

        let (mean, var, batch_stats) = match mode {
            BatchNormMode::Train { running, momentum } => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let m = channel_values(ch).sum::<f64>() / count;
                    let v = channel_values(ch).map(|x| (x - m) * (x - m)).sum::<f64>() / count;
                    mean[ch] = m;
                    var[ch] = v;
                }
                if running.mean.len() != c {
                    *running = RunningStats::new(c);
                }
                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                for ch in 0..c {
                    running.mean[ch] = (1.0 - momentum) * running.mean[ch] + momentum * mean[ch];
                    running.var[ch] =
                        (1.0 - momentum) * running.var[ch] + momentum * var[ch] * unbias;
                }
                (mean, var, true)
            }
            BatchNormMode::Eval { running } => {
                if running.is_empty() {
                    return Err(Error::InvalidArgument(
                        "batch_norm eval mode requires populated running statistics".into(),
                    ));
                }
                if running.mean.len() != c || running.var.len() != c {
                    return Err(Error::shape(
                        "batch_norm",
                        format!("running stats cover {} channels, input has {c}", running.mean.len()),
                    ));
                }
                (running.mean.clone(), running.var.clone(), false)
            }
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for s in 0..n {
            for ch in 0..c {
                let r = (s * c + ch) * plane..(s * c + ch + 1) * plane;
                for i in r {
                    let xh = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = gd[ch] * xh + bd[ch];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let rg = self.any_grad(&[input, gamma, beta]);
        Ok(self.push(
            value,
            rg,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward(
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: &[f64],
    inv_std: &[f64],
    batch_stats: bool,
    grad: &[f64],
    sink: &mut GradSink<'_>,
) {
    let [n, c, h, w] = sink.value(input).dims4("batch_norm").expect("rank 4");
    let plane = h * w;
    let count = (n * plane) as f64;
    let gd = sink.value(gamma).data().to_vec();
    let idx = |s: usize, ch: usize| (s * c + ch) * plane..(s * c + ch + 1) * plane;

    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for s in 0..n {
        for ch in 0..c {
            for i in idx(s, ch) {
                sum_dy[ch] += grad[i];
                sum_dy_xhat[ch] += grad[i] * xhat[i];
            }
        }
    }
    sink.add(gamma, &sum_dy_xhat);
    sink.add(beta, &sum_dy);
    sink.with(input, |gx| {
        for s in 0..n {
            for ch in 0..c {
                let k = gd[ch] * inv_std[ch];
                for i in idx(s, ch) {
                    gx[i] += if batch_stats {
                        k * (grad[i] - sum_dy[ch] / count - xhat[i] * sum_dy_xhat[ch] / count)
                    } else {
                        k * grad[i]
                    };
                }
            }
        }
    });
}
