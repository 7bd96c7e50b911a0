use super::graph::{GradSink, Graph, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};

fn even_dims(t: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    let d = t.dims4(op)?;
    if d[2] % 2 != 0 || d[3] % 2 != 0 {
        return Err(Error::shape(
            op,
            format!("spatial extent {}x{} is not even", d[2], d[3]),
        ));
    }
    Ok(d)
}

impl Graph {
    /// 2x2 max pooling with stride 2. Ties resolve to the first element in
    /// row-major order within the window.
    pub fn max_pool2d(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = even_dims(x, "max_pool2d")?;
        let (oh, ow) = (h / 2, w / 2);
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, rg, Op::MaxPool2d { input, argmax }))
    }

    /// 2x2 mean pooling with stride 2.
    pub fn avg_pool2d(&mut self, input: Var) -> Result<Var> {
        let value = avg_pool2d(self.value(input))?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, rg, Op::AvgPool2d { input }))
    }

    /// Nearest-neighbour upsampling: every pixel becomes a `factor x factor`
    /// block.
    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::InvalidArgument("upsample factor must be positive".into()));
        }
        let value = upsample_nearest(self.value(input), factor)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, rg, Op::Upsample { input, factor }))
    }
}

pub(crate) fn avg_pool2d(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = even_dims(x, "avg_pool2d")?;
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i = base + 2 * oy * w + 2 * ox;
                out.push(0.25 * (xd[i] + xd[i + 1] + xd[i + w] + xd[i + w + 1]));
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub(crate) fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4("upsample_nearest")?;
    let (oh, ow) = (h * factor, w * factor);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let src = &xd[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let row = &src[(oy / factor) * w..(oy / factor + 1) * w];
            for ox in 0..ow {
                out.push(row[ox / factor]);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub(super) fn max_backward(input: Var, argmax: &[usize], grad: &[f64], sink: &mut GradSink<'_>) {
    sink.with(input, |gx| {
        for (&idx, &g) in argmax.iter().zip(grad) {
            gx[idx] += g;
        }
    });
}

pub(super) fn avg_backward(input: Var, out: &Tensor, grad: &[f64], sink: &mut GradSink<'_>) {
    let [_, _, oh, ow] = out.dims4("avg_pool2d").expect("rank 4");
    let w = 2 * ow;
    sink.with(input, |gx| {
        for (o, &g) in grad.iter().enumerate() {
            let p = o / (oh * ow);
            let oy = (o / ow) % oh;
            let ox = o % ow;
            let i = p * 4 * oh * ow + 2 * oy * w + 2 * ox;
            let q = 0.25 * g;
            gx[i] += q;
            gx[i + 1] += q;
            gx[i + w] += q;
            gx[i + w + 1] += q;
        }
    });
}

pub(super) fn upsample_backward(
    input: Var,
    factor: usize,
    out: &Tensor,
    grad: &[f64],
    sink: &mut GradSink<'_>,
) {
    let [_, _, oh, ow] = out.dims4("upsample_nearest").expect("rank 4");
    let (h, w) = (oh / factor, ow / factor);
    sink.with(input, |gx| {
        for (o, &g) in grad.iter().enumerate() {
            let p = o / (oh * ow);
            let oy = (o / ow) % oh;
            let ox = o % ow;
            gx[p * h * w + (oy / factor) * w + ox / factor] += g;
        }
    });
}
