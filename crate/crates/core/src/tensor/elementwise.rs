use super::graph::{GradSink, Graph, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Numerically safe logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Broadcast layout of a binary op: output shape and per-operand strides
/// (zero along broadcast axes).
struct Broadcast {
    shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("rank mismatch {a:?} vs {b:?}")));
    }
    let mut shape = Vec::with_capacity(a.len());
    for (&da, &db) in a.iter().zip(b) {
        shape.push(match (da, db) {
            _ if da == db => da,
            (1, d) | (d, 1) => d,
            _ => return Err(Error::shape(op, format!("cannot broadcast {a:?} with {b:?}"))),
        });
    }
    let masked = |dims: &[usize]| {
        contiguous_strides(dims)
            .into_iter()
            .zip(dims.iter().zip(&shape))
            .map(|(s, (&d, &o))| if d == 1 && o != 1 { 0 } else { s })
            .collect()
    };
    Ok(Broadcast {
        a_strides: masked(a),
        b_strides: masked(b),
        shape,
    })
}

impl Broadcast {
    /// Calls `f(out_index, a_index, b_index)` for every output element.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let rank = self.shape.len();
        let total: usize = self.shape.iter().product();
        let mut counter = vec![0usize; rank];
        let (mut ia, mut ib) = (0usize, 0usize);
        for o in 0..total {
            f(o, ia, ib);
            for axis in (0..rank).rev() {
                counter[axis] += 1;
                ia += self.a_strides[axis];
                ib += self.b_strides[axis];
                if counter[axis] < self.shape[axis] {
                    break;
                }
                ia -= self.a_strides[axis] * counter[axis];
                ib -= self.b_strides[axis] * counter[axis];
                counter[axis] = 0;
            }
        }
    }
}

impl Graph {
    pub fn relu(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let data = t.data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.requires_grad(input);
        self.push(value, rg, Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let data = t.data().iter().map(|&x| sigmoid(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.requires_grad(input);
        self.push(value, rg, Op::Sigmoid { input })
    }

    /// Elementwise sum; singleton axes broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Add { a, b }))
    }

    /// Elementwise product; singleton axes broadcast.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Mul { a, b }))
    }

    fn binary(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::new(ta.shape().to_vec(), data);
        }
        let bc = broadcast(op, ta.shape(), tb.shape())?;
        let mut data = vec![0.0; bc.shape.iter().product()];
        let (ad, bd) = (ta.data(), tb.data());
        bc.for_each(|o, ia, ib| data[o] = f(ad[ia], bd[ib]));
        Tensor::new(bc.shape, data)
    }

    /// Concatenates two NCHW tensors along the channel axis (`a` first).
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [na, ca, ha, wa] = ta.dims4("concat_channels")?;
        let [nb, cb, hb, wb] = tb.dims4("concat_channels")?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let plane = ha * wa;
        let mut data = Vec::with_capacity(ta.numel() + tb.numel());
        for s in 0..na {
            data.extend_from_slice(&ta.data()[s * ca * plane..(s + 1) * ca * plane]);
            data.extend_from_slice(&tb.data()[s * cb * plane..(s + 1) * cb * plane]);
        }
        let value = Tensor::new(vec![na, ca + cb, ha, wa], data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Concat { a, b }))
    }

    /// Channels `start..start + len` of an NCHW tensor.
    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(input).slice_channels(start, len)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, rg, Op::SliceChannels { input, start }))
    }
}

pub(super) fn relu_backward(input: Var, out: &Tensor, grad: &[f64], sink: &mut GradSink<'_>) {
    sink.with(input, |gx| {
        for ((g, &y), &go) in gx.iter_mut().zip(out.data()).zip(grad) {
            if y > 0.0 {
                *g += go;
            }
        }
    });
}

pub(super) fn sigmoid_backward(input: Var, out: &Tensor, grad: &[f64], sink: &mut GradSink<'_>) {
    sink.with(input, |gx| {
        for ((g, &y), &go) in gx.iter_mut().zip(out.data()).zip(grad) {
            *g += go * y * (1.0 - y);
        }
    });
}

pub(super) fn add_backward(a: Var, b: Var, out: &Tensor, grad: &[f64], sink: &mut GradSink<'_>) {
    let (sa, sb) = (sink.value(a).shape().to_vec(), sink.value(b).shape().to_vec());
    if sa == sb {
        sink.add(a, grad);
        sink.add(b, grad);
        return;
    }
    let bc = broadcast("add", &sa, &sb).expect("validated in forward");
    debug_assert_eq!(bc.shape, out.shape());
    sink.with(a, |ga| bc.for_each(|o, ia, _| ga[ia] += grad[o]));
    sink.with(b, |gb| bc.for_each(|o, _, ib| gb[ib] += grad[o]));
}

pub(super) fn mul_backward(a: Var, b: Var, out: &Tensor, grad: &[f64], sink: &mut GradSink<'_>) {
    let ta = sink.value(a).clone();
    let tb = sink.value(b).clone();
    if ta.shape() == tb.shape() {
        sink.with(a, |ga| {
            for ((g, &y), &go) in ga.iter_mut().zip(tb.data()).zip(grad) {
                *g += go * y;
            }
        });
        sink.with(b, |gb| {
            for ((g, &x), &go) in gb.iter_mut().zip(ta.data()).zip(grad) {
                *g += go * x;
            }
        });
        return;
    }
    let bc = broadcast("mul", ta.shape(), tb.shape()).expect("validated in forward");
    debug_assert_eq!(bc.shape, out.shape());
    let (ad, bd) = (ta.data(), tb.data());
    sink.with(a, |ga| bc.for_each(|o, ia, ib| ga[ia] += grad[o] * bd[ib]));
    sink.with(b, |gb| bc.for_each(|o, ia, ib| gb[ib] += grad[o] * ad[ia]));
}

pub(super) fn concat_backward(a: Var, b: Var, out: &Tensor, grad: &[f64], sink: &mut GradSink<'_>) {
    let [n, _, h, w] = out.dims4("concat_channels").expect("rank 4");
    let ca = sink.value(a).shape()[1];
    let cb = sink.value(b).shape()[1];
    let plane = h * w;
    let c = ca + cb;
    sink.with(a, |ga| {
        for s in 0..n {
            let src = &grad[s * c * plane..(s * c + ca) * plane];
            for (g, v) in ga[s * ca * plane..(s + 1) * ca * plane].iter_mut().zip(src) {
                *g += v;
            }
        }
    });
    sink.with(b, |gb| {
        for s in 0..n {
            let src = &grad[(s * c + ca) * plane..(s + 1) * c * plane];
            for (g, v) in gb[s * cb * plane..(s + 1) * cb * plane].iter_mut().zip(src) {
                *g += v;
            }
        }
    });
}

pub(super) fn slice_backward(input: Var, start: usize, out: &Tensor, grad: &[f64], sink: &mut GradSink<'_>) {
    let [n, len, h, w] = out.dims4("slice_channels").expect("rank 4");
    let c = sink.value(input).shape()[1];
    let plane = h * w;
    sink.with(input, |gx| {
        for s in 0..n {
            let dst = &mut gx[(s * c + start) * plane..(s * c + start + len) * plane];
            let src = &grad[s * len * plane..(s + 1) * len * plane];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v;
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_and_sigmoid_values() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![3], vec![-1.0, 2.0, 0.0]).unwrap());
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 2.0, 0.0]);
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).data()[2], 0.5);
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!(sigmoid(-745.0).is_finite());
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let inputs = vec![random_tensor(&mut rng, &[1, 2, 3, 3]), random_tensor(&mut rng, &[1, 2, 3, 3])];
        let report = check_gradients(&inputs, 1e-5, |g, v| {
            let p = g.mul(v[0], v[1])?;
            let q = g.mul(p, v[0])?;
            Ok(g.sum(q))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn broadcast_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let inputs = vec![random_tensor(&mut rng, &[2, 1, 3, 4]), random_tensor(&mut rng, &[2, 3, 3, 1])];
        let report = check_gradients(&inputs, 1e-5, |g, v| {
            let p = g.mul(v[0], v[1])?;
            let s = g.add(p, v[1])?;
            let sq = g.mul(s, s)?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn broadcast_values() {
        let mut g = Graph::new();
        let a = g.input(Tensor::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        let b = g.input(Tensor::new(vec![1, 2, 1, 1], vec![10.0, 20.0]).unwrap());
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).shape(), &[1, 2, 1, 2]);
        assert_eq!(g.value(s).data(), &[11.0, 12.0, 21.0, 22.0]);
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[1, 2, 3, 3]));
        let b = g.input(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(g.add(a, b).is_err());
        let c = g.input(Tensor::zeros(&[2, 3, 3]));
        assert!(g.mul(a, c).is_err());
    }

    #[test]
    fn relu_sigmoid_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let inputs = vec![random_tensor(&mut rng, &[2, 2, 3, 3])];
        let report = check_gradients(&inputs, 1e-6, |g, v| {
            let r = g.relu(v[0]);
            let s = g.sigmoid(v[0]);
            let p = g.mul(r, s)?;
            Ok(g.sum(p))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let av = random_tensor(&mut rng, &[2, 1, 2, 2]);
        let bv = random_tensor(&mut rng, &[2, 3, 2, 2]);
        let mut g = Graph::new();
        let a = g.input(av.clone());
        let b = g.input(bv.clone());
        let c = g.concat_channels(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 4, 2, 2]);
        let a2 = g.slice_channels(c, 0, 1).unwrap();
        let b2 = g.slice_channels(c, 1, 3).unwrap();
        assert_eq!(g.value(a2), &av);
        assert_eq!(g.value(b2), &bv);
    }

    #[test]
    fn concat_shape_and_errors() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[1, 1, 2, 2]));
        let b = g.input(Tensor::zeros(&[1, 1, 2, 2]));
        let c = g.concat_channels(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[1, 2, 2, 2]);
        let d = g.input(Tensor::zeros(&[1, 1, 4, 2]));
        assert!(g.concat_channels(a, d).is_err());
    }

    #[test]
    fn concat_sum_gradient_is_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let inputs = vec![random_tensor(&mut rng, &[1, 2, 2, 3]), random_tensor(&mut rng, &[1, 1, 2, 3])];
        let mut g = Graph::new();
        let a = g.leaf(inputs[0].clone());
        let b = g.leaf(inputs[1].clone());
        let c = g.concat_channels(a, b).unwrap();
        let loss = g.sum(c);
        g.backward(loss).unwrap();
        assert!(g.grad(a).unwrap().iter().all(|&v| v == 1.0));
        assert!(g.grad(b).unwrap().iter().all(|&v| v == 1.0));

        let report = check_gradients(&inputs, 1e-5, |g, v| {
            let c = g.concat_channels(v[0], v[1])?;
            let s = g.slice_channels(c, 1, 2)?;
            let sq = g.mul(s, s)?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
