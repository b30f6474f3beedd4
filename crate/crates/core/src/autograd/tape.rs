//! Single-use reverse-mode tape.
//!
//! Every op appends a node holding its output and a closure that maps the
//! output gradient to input gradients. Nodes are appended only after their
//! inputs exist, so the node vector is already in topological order and the
//! reverse sweep is a plain backwards loop.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::autograd::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::ops::{self, conv, layout, linalg, norm, pointwise, ConvSpec};
use crate::tensor::{compensated_sum, ensure_same_shape, Element, Shape, Tensor};

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    leaves: RefCell<HashMap<ParamId, usize>>,
    consumed: Cell<bool>,
    check_finite: bool,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    /// A tape that rejects NaN/Inf outputs in debug builds.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            leaves: RefCell::new(HashMap::new()),
            consumed: Cell::new(false),
            check_finite,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(
        &self,
        op: &'static str,
        value: Tensor<T>,
        inputs: Vec<usize>,
        backward: Option<BackwardFn<T>>,
    ) -> Result<Var<'_, T>> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        if self.check_finite && !value.all_finite() {
            return Err(Error::invalid(op, "produced a non-finite value"));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = backward.is_some() && inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            inputs,
            backward: if requires_grad { backward } else { None },
            requires_grad,
            param: None,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// A value that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            inputs: Vec::new(),
            backward: None,
            requires_grad: false,
            param: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// The leaf for a stored parameter. Repeated calls return the same node,
    /// so every use of a parameter accumulates into one gradient.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.leaves.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(store.value(id).clone()),
            inputs: Vec::new(),
            backward: None,
            requires_grad: true,
            param: Some(id),
        });
        let node = nodes.len() - 1;
        self.leaves.borrow_mut().insert(id, node);
        Var { tape: self, id: node }
    }

    pub fn concat(&self, xs: &[Var<'_, T>]) -> Result<Var<'_, T>> {
        let values: Vec<Rc<Tensor<T>>> = xs.iter().map(|v| v.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let out = layout::concat_channels(&refs)?;
        let sizes: Vec<usize> = values.iter().map(|v| v.shape().c).collect();
        self.push(
            "concat",
            out,
            xs.iter().map(|v| v.id).collect(),
            Some(Box::new(move |g, _, _| {
                Ok(layout::split_channels(g, &sizes)?.into_iter().map(Some).collect())
            })),
        )
    }

    /// Runs the reverse sweep from a scalar `loss` and overwrites every
    /// parameter gradient in `store`; parameters the loss does not reach get
    /// zero. The tape is freed and cannot be reused.
    pub fn backward(&self, loss: Var<'_, T>, store: &mut ParamStore<T>) -> Result<()> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        let loss_shape = loss.shape();
        if loss_shape.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        self.consumed.set(true);
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        self.leaves.borrow_mut().clear();

        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(loss_shape));
        store.zero_grads();

        for i in (0..=loss.id).rev() {
            let Some(grad) = grads[i].take() else { continue };
            let node = &nodes[i];
            if let Some(pid) = node.param {
                store.get_mut(pid).grad.add_assign(&grad)?;
                continue;
            }
            let Some(backward) = &node.backward else { continue };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&j| nodes[j].value.as_ref()).collect();
            let input_grads = backward(&grad, &inputs, &node.value)?;
            for (&j, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !nodes[j].requires_grad {
                    continue;
                }
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn value(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Shape {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn item(&self) -> Result<T> {
        self.value().item()
    }

    fn unary(
        self,
        op: &'static str,
        out: Tensor<T>,
        backward: impl Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> Result<Tensor<T>> + 'static,
    ) -> Result<Var<'t, T>> {
        self.tape.push(
            op,
            out,
            vec![self.id],
            Some(Box::new(move |g, ins, out| Ok(vec![Some(backward(g, ins[0], out)?)]))),
        )
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = pointwise::add(&self.value(), &other.value())?;
        self.tape.push(
            "add",
            out,
            vec![self.id, other.id],
            Some(Box::new(|g, _, _| Ok(vec![Some(g.clone()), Some(g.clone())]))),
        )
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = pointwise::sub(&self.value(), &other.value())?;
        self.tape.push(
            "sub",
            out,
            vec![self.id, other.id],
            Some(Box::new(|g, _, _| Ok(vec![Some(g.clone()), Some(g.map(|v| -v))]))),
        )
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = pointwise::mul(&self.value(), &other.value())?;
        self.tape.push(
            "mul",
            out,
            vec![self.id, other.id],
            Some(Box::new(|g, ins, _| {
                Ok(vec![Some(pointwise::mul(g, ins[1])?), Some(pointwise::mul(g, ins[0])?)])
            })),
        )
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.value().zip_map(&other.value(), "div", |a, b| a / b)?;
        self.tape.push(
            "div",
            out,
            vec![self.id, other.id],
            Some(Box::new(|g, ins, out| {
                let da = g.zip_map(ins[1], "div", |g, b| g / b)?;
                let db = pointwise::mul(&da, out)?.map(|v| -v);
                Ok(vec![Some(da), Some(db)])
            })),
        )
    }

    pub fn add_scalar(self, s: T) -> Result<Var<'t, T>> {
        let out = pointwise::add_scalar(&self.value(), s);
        self.unary("add_scalar", out, |g, _, _| Ok(g.clone()))
    }

    pub fn mul_scalar(self, s: T) -> Result<Var<'t, T>> {
        let out = pointwise::mul_scalar(&self.value(), s);
        self.unary("mul_scalar", out, move |g, _, _| Ok(pointwise::mul_scalar(g, s)))
    }

    pub fn gelu(self) -> Result<Var<'t, T>> {
        let out = pointwise::gelu(&self.value());
        self.unary("gelu", out, |g, x, _| {
            g.zip_map(x, "gelu", |g, x| {
                g * T::lit(pointwise::gelu_grad_scalar(x.to_f64_lossy()))
            })
        })
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        let out = self.value().map(|v| v.max(T::zero()));
        self.unary("relu", out, |g, x, _| {
            g.zip_map(x, "relu", |g, x| if x > T::zero() { g } else { T::zero() })
        })
    }

    pub fn conv2d(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>, spec: ConvSpec) -> Result<Var<'t, T>> {
        let x = self.value();
        let w = weight.value();
        let b = bias.map(|b| b.value());
        let out = conv::conv2d(&x, &w, b.as_deref(), &spec)?;
        let mut inputs = vec![self.id, weight.id];
        inputs.extend(bias.map(|b| b.id));
        let x_needs = self.requires_grad();
        self.tape.push(
            "conv2d",
            out,
            inputs,
            Some(Box::new(move |g, ins, _| {
                let dx = if x_needs {
                    Some(conv::conv2d_grad_input(g, ins[1], &spec, ins[0].shape())?)
                } else {
                    None
                };
                let (dw, db) = conv::conv2d_grad_params(g, ins[0], &spec)?;
                let mut out = vec![dx, Some(dw)];
                if spec.bias {
                    out.push(db);
                }
                Ok(out)
            })),
        )
    }

    fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Batched product over the trailing two dims.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = linalg::matmul(&self.value(), &other.value())?;
        self.tape.push(
            "matmul",
            out,
            vec![self.id, other.id],
            Some(Box::new(|g, ins, _| {
                let da = linalg::matmul(g, &linalg::transpose(ins[1]))?;
                let db = linalg::matmul(&linalg::transpose(ins[0]), g)?;
                Ok(vec![Some(da), Some(db)])
            })),
        )
    }

    pub fn transpose(self) -> Result<Var<'t, T>> {
        let out = linalg::transpose(&self.value());
        self.unary("transpose", out, |g, _, _| Ok(linalg::transpose(g)))
    }

    /// Row softmax of `scale * x` with a constant scale.
    pub fn softmax(self, scale: T) -> Result<Var<'t, T>> {
        let out = linalg::softmax_lastdim(&self.value(), scale)?;
        self.unary("softmax", out, move |g, x, y| {
            Ok(linalg::softmax_lastdim_backward(x, y, g, scale).0)
        })
    }

    /// Row softmax of `alpha * x` where `alpha` is a trainable scalar.
    pub fn softmax_scaled(self, alpha: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = alpha.item()?;
        let out = linalg::softmax_lastdim(&self.value(), a)?;
        self.tape.push(
            "softmax",
            out,
            vec![self.id, alpha.id],
            Some(Box::new(|g, ins, y| {
                let a = ins[1].item()?;
                let (dx, da) = linalg::softmax_lastdim_backward(ins[0], y, g, a);
                Ok(vec![Some(dx), Some(Tensor::full(ins[1].shape(), da))])
            })),
        )
    }

    /// Channel layer norm with per-channel affine parameters.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>) -> Result<Var<'t, T>> {
        let (out, cache) = norm::layer_norm_channels(
            &self.value(),
            &gamma.value(),
            &beta.value(),
            T::lit(ops::LAYER_NORM_EPS),
        )?;
        self.tape.push(
            "layer_norm",
            out,
            vec![self.id, gamma.id, beta.id],
            Some(Box::new(move |g, ins, _| {
                let (dx, dg, db) = norm::layer_norm_channels_backward(g, ins[1], &cache);
                Ok(vec![Some(dx), Some(dg), Some(db)])
            })),
        )
    }

    pub fn avg_pool(self, out_h: usize, out_w: usize) -> Result<Var<'t, T>> {
        let out = norm::adaptive_avg_pool(&self.value(), out_h, out_w)?;
        self.unary("avg_pool", out, |g, x, _| {
            Ok(norm::adaptive_avg_pool_backward(g, x.shape()))
        })
    }

    pub fn pixel_unshuffle(self, r: usize) -> Result<Var<'t, T>> {
        let out = layout::pixel_unshuffle(&self.value(), r)?;
        self.unary("pixel_unshuffle", out, move |g, _, _| layout::pixel_shuffle(g, r))
    }

    pub fn pixel_shuffle(self, r: usize) -> Result<Var<'t, T>> {
        let out = layout::pixel_shuffle(&self.value(), r)?;
        self.unary("pixel_shuffle", out, move |g, _, _| layout::pixel_unshuffle(g, r))
    }

    pub fn slice_channels(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let out = layout::slice_channels(&self.value(), start, len)?;
        self.unary("slice_channels", out, move |g, x, _| {
            Ok(layout::embed_channels(g, x.shape(), start))
        })
    }

    pub fn split_channels(self, sizes: &[usize]) -> Result<Vec<Var<'t, T>>> {
        if sizes.iter().sum::<usize>() != self.shape().c {
            return Err(Error::invalid(
                "split_channels",
                format!("sizes {sizes:?} do not sum to {} channels", self.shape().c),
            ));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let part = self.slice_channels(start, len);
                start += len;
                part
            })
            .collect()
    }

    pub fn reshape(self, shape: impl Into<Shape>) -> Result<Var<'t, T>> {
        let out = self.value().reshape(shape)?;
        self.unary("reshape", out, |g, x, _| g.reshape(x.shape()))
    }

    pub fn reflect_pad(self, pad_h: usize, pad_w: usize) -> Result<Var<'t, T>> {
        let out = layout::reflect_pad(&self.value(), pad_h, pad_w)?;
        self.unary("reflect_pad", out, |g, x, _| {
            Ok(layout::reflect_pad_backward(g, x.shape()))
        })
    }

    pub fn crop(self, h: usize, w: usize) -> Result<Var<'t, T>> {
        let out = layout::crop(&self.value(), h, w)?;
        self.unary("crop", out, |g, x, _| Ok(layout::crop_backward(g, x.shape())))
    }

    pub fn sum(self) -> Result<Var<'t, T>> {
        let out = Tensor::scalar(self.value().sum());
        self.unary("sum", out, |g, x, _| Ok(Tensor::full(x.shape(), g.item()?)))
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let n = T::lit(x.numel() as f64);
        let out = Tensor::scalar(x.sum() / n);
        self.unary("mean", out, move |g, x, _| Ok(Tensor::full(x.shape(), g.item()? / n)))
    }

    /// Mean absolute error against `target`. The subgradient at zero
    /// residual is zero.
    pub fn l1_loss(self, target: Var<'t, T>) -> Result<Var<'t, T>> {
        let (p, t) = (self.value(), target.value());
        ensure_same_shape("l1_loss", p.shape(), t.shape())?;
        let n = T::lit(p.numel() as f64);
        let total = compensated_sum(p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b).abs()));
        self.tape.push(
            "l1_loss",
            Tensor::scalar(total / n),
            vec![self.id, target.id],
            Some(Box::new(move |g, ins, _| {
                let scale = g.item()? / n;
                let sign = ins[0].zip_map(ins[1], "l1_loss", |a, b| {
                    let d = a - b;
                    if d > T::zero() {
                        scale
                    } else if d < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                })?;
                let neg = sign.map(|v| -v);
                Ok(vec![Some(sign), Some(neg)])
            })),
        )
    }

    /// Soft residual head: `K * hazy - B + hazy` where channel 0 of `self`
    /// is the gate `K` (broadcast over RGB) and channels 1..4 are `B`.
    pub fn soft_residual(self, hazy: Var<'t, T>) -> Result<Var<'t, T>> {
        let (head, img) = (self.value(), hazy.value());
        let (hs, is) = (head.shape(), img.shape());
        if hs.c != 4 || is.c != 3 || (hs.n, hs.h, hs.w) != (is.n, is.h, is.w) {
            return Err(Error::ShapeMismatch {
                op: "soft_residual",
                lhs: hs,
                rhs: is,
            });
        }
        let out = Tensor::from_fn(is, |[n, c, y, x]| {
            let v = img.at(n, c, y, x);
            head.at(n, 0, y, x) * v - head.at(n, c + 1, y, x) + v
        });
        self.tape.push(
            "soft_residual",
            out,
            vec![self.id, hazy.id],
            Some(Box::new(|g, ins, _| {
                let (head, img) = (ins[0], ins[1]);
                let s = img.shape();
                let mut dhead = Tensor::zeros(head.shape());
                let mut dimg = Tensor::zeros(s);
                for n in 0..s.n {
                    for c in 0..s.c {
                        for y in 0..s.h {
                            for x in 0..s.w {
                                let gv = g.at(n, c, y, x);
                                let k = head.at(n, 0, y, x);
                                let i = dhead.offset(n, 0, y, x);
                                dhead.data_mut()[i] = dhead.data()[i] + gv * img.at(n, c, y, x);
                                dhead.set(n, c + 1, y, x, -gv);
                                dimg.set(n, c, y, x, gv * (k + T::one()));
                            }
                        }
                    }
                }
                Ok(vec![Some(dhead), Some(dimg)])
            })),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Tensor<f64>)]) -> (ParamStore<f64>, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values.iter().map(|(n, v)| s.add(*n, v.clone()).unwrap()).collect();
        (s, ids)
    }

    #[test]
    fn sum_gives_ones() {
        let x = Tensor::<f64>::from_fn([2, 3, 2, 2], |[n, c, y, x]| (n + c * y) as f64 - x as f64);
        let (mut store, ids) = store_with(&[("x", x)]);
        let tape = Tape::new();
        let loss = tape.param(&store, ids[0]).sum().unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert!(store.grad(ids[0]).data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn matmul_grad_is_ones_times_b_transposed() {
        let a = Tensor::<f64>::matrix(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.5]).unwrap();
        let b = Tensor::<f64>::matrix(3, 2, vec![0.2, 1.0, -1.0, 2.0, 4.0, 0.5]).unwrap();
        let (mut store, ids) = store_with(&[("a", a), ("b", b.clone())]);
        let tape = Tape::new();
        let loss = tape
            .param(&store, ids[0])
            .matmul(tape.param(&store, ids[1]))
            .unwrap()
            .sum()
            .unwrap();
        tape.backward(loss, &mut store).unwrap();
        // (ones(2x2) . B^T)[i][l] = row sum of B at l
        let expect: Vec<f64> = (0..2)
            .flat_map(|_| (0..3).map(|l| b.data()[l * 2] + b.data()[l * 2 + 1]))
            .collect();
        assert_eq!(store.grad(ids[0]).data(), expect.as_slice());
    }

    #[test]
    fn unused_param_gets_zero_and_reuse_accumulates() {
        let (mut store, ids) = store_with(&[
            ("x", Tensor::full([1, 1, 2, 2], 3.0)),
            ("unused", Tensor::full([1, 1, 1, 1], 7.0)),
        ]);
        store.get_mut(ids[1]).grad = Tensor::full([1, 1, 1, 1], 9.0);
        let tape = Tape::new();
        let x = tape.param(&store, ids[0]);
        // loss = sum(x * x + x) -> grad 2x + 1
        let loss = x.mul(x).unwrap().add(x).unwrap().sum().unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert!(store.grad(ids[0]).data().iter().all(|&g| g == 7.0));
        assert_eq!(store.grad(ids[1]).data(), &[0.0]);
    }

    #[test]
    fn backward_errors() {
        let (mut store, ids) = store_with(&[("x", Tensor::ones([1, 1, 2, 2]))]);
        let tape = Tape::new();
        let x = tape.param(&store, ids[0]);
        assert!(matches!(tape.backward(x, &mut store), Err(Error::NonScalarLoss(_))));
        let loss = x.sum().unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert!(matches!(tape.backward(loss, &mut store), Err(Error::TapeConsumed)));
    }

    #[test]
    fn soft_residual_examples() {
        let tape = Tape::<f64>::new();
        let hazy = tape.constant(Tensor::full([1, 3, 2, 2], 0.4));
        let head = Tensor::from_fn([1, 4, 2, 2], |[_, c, _, _]| if c == 0 { 0.5 } else { 0.1 });
        let out = tape.constant(head).soft_residual(hazy).unwrap().value();
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-15));

        let zero = tape.constant(Tensor::zeros([1, 4, 2, 2]));
        assert_eq!(*zero.soft_residual(hazy).unwrap().value(), *hazy.value());
        let gate = tape.constant(Tensor::from_fn(
            [1, 4, 2, 2],
            |[_, c, _, _]| if c == 0 { 1.0 } else { 0.0 },
        ));
        assert_eq!(
            *gate.soft_residual(hazy).unwrap().value(),
            hazy.value().map(|v| 2.0 * v)
        );
        let bad = tape.constant(Tensor::zeros([1, 3, 2, 2]));
        assert!(bad.soft_residual(hazy).is_err());
    }

    #[test]
    fn finite_checks_reject_nan() {
        let tape = Tape::<f64>::with_finite_checks(true);
        let x = tape.constant(Tensor::full([1, 1, 1, 1], f64::NAN));
        assert!(x.add_scalar(1.0).is_err());
    }
}
