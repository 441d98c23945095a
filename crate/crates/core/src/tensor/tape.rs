//! Reverse-mode differentiation over `NdArray` values.
//!
//! A `Tape` records one computation graph per forward pass. Every op appends
//! a node to an arena and computes its value eagerly; `Var` handles are plain
//! indices into that arena. `backward` seeds the scalar loss with 1, walks
//! the arena in reverse construction order (a valid topological order by
//! construction) propagating adjoints through a scratch buffer, and finally
//! adds each node's adjoint into its persistent `grad`, so repeated backward
//! calls accumulate.

use std::cell::RefCell;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Polyline;
use crate::losses;

use super::array::NdArray;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var(usize);

struct Node {
    value: NdArray,
    grad: NdArray,
    op: Op,
}

/// One bilinear sampling location: integer corner plus fractional position.
/// `x_active`/`y_active` record whether the normalized coordinate was inside
/// [0,1]; the differentiable variant zeroes coordinate gradients outside.
struct Tap {
    x0: usize,
    y0: usize,
    fx: f64,
    fy: f64,
    x_active: bool,
    y_active: bool,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddBias {
        x: usize,
        bias: usize,
    },
    Relu(usize),
    Transpose2(usize),
    ConcatCols(usize, usize),
    Conv2d {
        input: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Conv1dDilated {
        input: usize,
        kernel: usize,
        dilation: usize,
    },
    BilinearSample {
        map: usize,
        taps: Vec<Tap>,
    },
    BilinearSampleDiff {
        map: usize,
        coords: usize,
        taps: Vec<Tap>,
    },
    StopGradient(#[allow(dead_code)] usize),
    Dropout {
        input: usize,
        mask: Vec<f64>,
    },
    Clamp01(usize),
    Sum(usize),
    LossL1 {
        p: usize,
        t: Vec<[f64; 2]>,
    },
    LossL2 {
        p: usize,
        t: Vec<[f64; 2]>,
    },
    LossDtw {
        p: usize,
        t: Vec<[f64; 2]>,
        path: Vec<(usize, usize)>,
    },
    LossSoftDtw {
        p: usize,
        t: Vec<[f64; 2]>,
        gamma: f64,
        r: Vec<f64>,
    },
}

/// Arena-based gradient tape. One tape records one forward pass; it is cheap
/// to drop and rebuild per training step.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: NdArray, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let grad = NdArray::zeros(value.shape());
        nodes.push(Node { value, grad, op });
        Var(nodes.len() - 1)
    }

    /// Records an input with no parents.
    pub fn leaf(&self, value: NdArray) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Clone of the node's current value.
    pub fn value(&self, v: Var) -> NdArray {
        self.nodes.borrow()[v.0].value.clone()
    }

    /// Runs `f` against the node's value without cloning it.
    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&NdArray) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Clone of the accumulated gradient.
    pub fn grad(&self, v: Var) -> NdArray {
        self.nodes.borrow()[v.0].grad.clone()
    }

    pub fn zero_grads(&self) {
        let mut nodes = self.nodes.borrow_mut();
        for n in nodes.iter_mut() {
            for g in n.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    // ---- elementwise and structural ops ----

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if va.shape() != vb.shape() {
                return Err(Error::shape(format!(
                    "add: {:?} vs {:?}",
                    va.shape(),
                    vb.shape()
                )));
            }
            let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
            NdArray::from_vec(va.shape(), data)?
        };
        Ok(self.push(value, Op::Add(a.0, b.0)))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if va.shape() != vb.shape() {
                return Err(Error::shape(format!(
                    "mul: {:?} vs {:?}",
                    va.shape(),
                    vb.shape()
                )));
            }
            let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
            NdArray::from_vec(va.shape(), data)?
        };
        Ok(self.push(value, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let value = self.nodes.borrow()[a.0].value.map(|x| c * x);
        self.push(value, Op::Scale(a.0, c))
    }

    pub fn relu(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.0].value.map(|x| x.max(0.0));
        self.push(value, Op::Relu(a.0))
    }

    /// Adds a per-channel bias to an array whose leading dimension is the
    /// channel dimension.
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (vx, vb) = (&nodes[x.0].value, &nodes[bias.0].value);
            if vx.rank() < 1 || vb.rank() != 1 || vb.shape()[0] != vx.shape()[0] {
                return Err(Error::shape(format!(
                    "add_bias: value {:?} vs bias {:?}",
                    vx.shape(),
                    vb.shape()
                )));
            }
            let channels = vx.shape()[0];
            let inner = vx.len() / channels;
            let mut out = vx.clone();
            for c in 0..channels {
                let b = vb.data()[c];
                for v in &mut out.data_mut()[c * inner..(c + 1) * inner] {
                    *v += b;
                }
            }
            out
        };
        Ok(self.push(value, Op::AddBias { x: x.0, bias: bias.0 }))
    }

    /// Swaps the two axes of a rank-2 array.
    pub fn transpose2(&self, a: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            if va.rank() != 2 {
                return Err(Error::shape(format!(
                    "transpose2 expects rank 2, got {:?}",
                    va.shape()
                )));
            }
            transpose2_array(va)
        };
        Ok(self.push(value, Op::Transpose2(a.0)))
    }

    /// Concatenates two rank-2 arrays with equal row counts along the column
    /// axis: [V,A] ++ [V,B] -> [V,A+B].
    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if va.rank() != 2 || vb.rank() != 2 || va.shape()[0] != vb.shape()[0] {
                return Err(Error::shape(format!(
                    "concat_cols: {:?} vs {:?}",
                    va.shape(),
                    vb.shape()
                )));
            }
            let (rows, ca, cb) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
            let mut data = Vec::with_capacity(rows * (ca + cb));
            for r in 0..rows {
                data.extend_from_slice(&va.data()[r * ca..(r + 1) * ca]);
                data.extend_from_slice(&vb.data()[r * cb..(r + 1) * cb]);
            }
            NdArray::from_vec(&[rows, ca + cb], data)?
        };
        Ok(self.push(value, Op::ConcatCols(a.0, b.0)))
    }

    pub fn stop_gradient(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.0].value.clone();
        self.push(value, Op::StopGradient(a.0))
    }

    /// Clamps every element to [0,1]; gradient passes through wherever the
    /// input already lay inside the closed interval.
    pub fn clamp01(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.0].value.map(|x| x.clamp(0.0, 1.0));
        self.push(value, Op::Clamp01(a.0))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self, a: Var) -> Var {
        let value = NdArray::scalar(self.nodes.borrow()[a.0].value.iter().sum());
        self.push(value, Op::Sum(a.0))
    }

    /// Zeroes each element independently with probability `rate` and scales
    /// survivors by 1/(1-rate). Identity (and no RNG draw) when `active` is
    /// false or the rate is zero.
    pub fn dropout(&self, x: Var, rate: f64, active: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!(
                "dropout rate must lie in [0,1), got {rate}"
            )));
        }
        if !active || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let (value, mask) = {
            let nodes = self.nodes.borrow();
            let vx = &nodes[x.0].value;
            let mask: Vec<f64> = (0..vx.len())
                .map(|_| {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep_scale
                    }
                })
                .collect();
            let data = vx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
            (NdArray::from_vec(vx.shape(), data)?, mask)
        };
        Ok(self.push(value, Op::Dropout { input: x.0, mask }))
    }

    // ---- convolutions ----

    /// 2-D cross-correlation of a [C_in,H,W] input with a [C_out,C_in,k,k]
    /// kernel (k odd), zero padding.
    pub fn conv2d(&self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (vi, vk) = (&nodes[input.0].value, &nodes[kernel.0].value);
            validate_conv2d(vi, vk, stride, padding)?;
            conv2d_forward(vi, vk, stride, padding)
        };
        Ok(self.push(
            value,
            Op::Conv2d {
                input: input.0,
                kernel: kernel.0,
                stride,
                padding,
            },
        ))
    }

    /// 1-D dilated cross-correlation of a [C_in,V] input with a [C_out,C_in,k]
    /// kernel (k odd). Zero padding of dilation*(k-1)/2 keeps the output
    /// length at V; the polyline is open, so there is no circular wrap.
    pub fn conv1d_dilated(&self, input: Var, kernel: Var, dilation: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (vi, vk) = (&nodes[input.0].value, &nodes[kernel.0].value);
            validate_conv1d(vi, vk, dilation)?;
            conv1d_forward(vi, vk, dilation)
        };
        Ok(self.push(
            value,
            Op::Conv1dDilated {
                input: input.0,
                kernel: kernel.0,
                dilation,
            },
        ))
    }

    // ---- sampling ----

    /// Samples a [C,H,W] feature map at V normalized points, producing [V,C].
    /// The point coordinates are constants: gradient flows to the map only.
    pub fn bilinear_sample(&self, map: Var, points: &Polyline) -> Result<Var> {
        let (taps, value) = {
            let nodes = self.nodes.borrow();
            let vm = &nodes[map.0].value;
            let taps = make_taps(vm, points.vertices())?;
            let value = bilinear_forward(vm, &taps);
            (taps, value)
        };
        Ok(self.push_bilinear(map.0, None, taps, value))
    }

    /// Differentiable-coordinates variant: `coords` is a [V,2] node and
    /// receives the analytic bilinear derivative with respect to x and y.
    pub fn bilinear_sample_diff(&self, map: Var, coords: Var) -> Result<Var> {
        let (taps, value) = {
            let nodes = self.nodes.borrow();
            let (vm, vc) = (&nodes[map.0].value, &nodes[coords.0].value);
            if vc.rank() != 2 || vc.shape()[1] != 2 {
                return Err(Error::shape(format!(
                    "sample coordinates must be [V,2], got {:?}",
                    vc.shape()
                )));
            }
            if vc.shape()[0] == 0 {
                return Err(Error::invalid("cannot sample at zero points"));
            }
            let pts: Vec<[f64; 2]> = vc.data().chunks_exact(2).map(|c| [c[0], c[1]]).collect();
            let taps = make_taps(vm, &pts)?;
            let value = bilinear_forward(vm, &taps);
            (taps, value)
        };
        Ok(self.push_bilinear(map.0, Some(coords.0), taps, value))
    }

    fn push_bilinear(
        &self,
        map: usize,
        coords: Option<usize>,
        taps: Vec<Tap>,
        value: NdArray,
    ) -> Var {
        let op = match coords {
            None => Op::BilinearSample { map, taps },
            Some(c) => Op::BilinearSampleDiff {
                map,
                coords: c,
                taps,
            },
        };
        self.push(value, op)
    }

    // ---- contour losses ----

    /// Mean Euclidean vertex distance between aligned contours.
    pub fn loss_l1(&self, p: Var, t: &Polyline) -> Result<Var> {
        let (value, tv) = {
            let nodes = self.nodes.borrow();
            let vp = &nodes[p.0].value;
            let tv = check_paired(vp, t)?;
            let n = tv.len();
            let mut acc = 0.0;
            for (i, tj) in tv.iter().enumerate() {
                let dx = vp.data()[2 * i] - tj[0];
                let dy = vp.data()[2 * i + 1] - tj[1];
                acc += (dx * dx + dy * dy).sqrt();
            }
            (NdArray::scalar(acc / n as f64), tv)
        };
        Ok(self.push(value, Op::LossL1 { p: p.0, t: tv }))
    }

    /// Mean squared vertex distance between aligned contours.
    pub fn loss_l2(&self, p: Var, t: &Polyline) -> Result<Var> {
        let (value, tv) = {
            let nodes = self.nodes.borrow();
            let vp = &nodes[p.0].value;
            let tv = check_paired(vp, t)?;
            let n = tv.len();
            let mut acc = 0.0;
            for (i, tj) in tv.iter().enumerate() {
                let dx = vp.data()[2 * i] - tj[0];
                let dy = vp.data()[2 * i + 1] - tj[1];
                acc += dx * dx + dy * dy;
            }
            (NdArray::scalar(acc / n as f64), tv)
        };
        Ok(self.push(value, Op::LossL2 { p: p.0, t: tv }))
    }

    /// Dynamic-time-warping loss: minimum summed squared distance over all
    /// monotone boundary-complete alignments. The gradient flows through the
    /// minimizing alignment path.
    pub fn loss_dtw(&self, p: Var, t: &Polyline) -> Result<Var> {
        let (value, tv, path) = {
            let nodes = self.nodes.borrow();
            let vp = &nodes[p.0].value;
            let (pv, tv) = check_contours(vp, t)?;
            let table = losses::dtw_table(&pv, &tv);
            let path = losses::dtw_best_path(&table, pv.len(), tv.len());
            let value = table[pv.len() * (tv.len() + 1) + tv.len()];
            (NdArray::scalar(value), tv, path)
        };
        Ok(self.push(value, Op::LossDtw { p: p.0, t: tv, path }))
    }

    /// Soft dynamic time warping: the DTW recurrence with min replaced by
    /// softmin_gamma. Smooth in every vertex coordinate; backward runs the
    /// reverse pass over soft alignment weights.
    pub fn loss_softdtw(&self, p: Var, t: &Polyline, gamma: f64) -> Result<Var> {
        if gamma <= 0.0 {
            return Err(Error::invalid(format!(
                "softdtw smoothness must be positive, got {gamma}"
            )));
        }
        let (value, tv, r) = {
            let nodes = self.nodes.borrow();
            let vp = &nodes[p.0].value;
            let (pv, tv) = check_contours(vp, t)?;
            let r = losses::softdtw_table(&pv, &tv, gamma);
            let value = r[pv.len() * (tv.len() + 1) + tv.len()];
            (NdArray::scalar(value), tv, r)
        };
        Ok(self.push(
            value,
            Op::LossSoftDtw {
                p: p.0,
                t: tv,
                gamma,
                r,
            },
        ))
    }

    // ---- backward ----

    /// Propagates d(loss)/d(node) to every ancestor of `loss`, adding into
    /// each node's persistent gradient.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if !nodes[loss.0].value.is_scalar() {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut adj: Vec<Option<NdArray>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(NdArray::full(nodes[loss.0].value.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            backprop_node(&nodes, i, &g, &mut adj);
            for (dst, src) in nodes[i].grad.data_mut().iter_mut().zip(g.data()) {
                *dst += *src;
            }
        }
        Ok(())
    }
}

/// Validates that `p` is [V,2] matching the truth vertex count; returns the
/// truth vertices.
fn check_paired(vp: &NdArray, t: &Polyline) -> Result<Vec<[f64; 2]>> {
    if vp.rank() != 2 || vp.shape()[1] != 2 {
        return Err(Error::shape(format!(
            "predicted contour must be [V,2], got {:?}",
            vp.shape()
        )));
    }
    if vp.shape()[0] != t.len() {
        return Err(Error::shape(format!(
            "vertex count mismatch: predicted {}, truth {}",
            vp.shape()[0],
            t.len()
        )));
    }
    Ok(t.vertices().to_vec())
}

/// Validates contour shapes for the warping losses (counts may differ).
#[allow(clippy::type_complexity)]
fn check_contours(vp: &NdArray, t: &Polyline) -> Result<(Vec<[f64; 2]>, Vec<[f64; 2]>)> {
    if vp.rank() != 2 || vp.shape()[1] != 2 {
        return Err(Error::shape(format!(
            "predicted contour must be [V,2], got {:?}",
            vp.shape()
        )));
    }
    if vp.shape()[0] == 0 {
        return Err(Error::invalid("empty predicted contour"));
    }
    let pv = vp.data().chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    Ok((pv, t.vertices().to_vec()))
}

fn transpose2_array(a: &NdArray) -> NdArray {
    let (rows, cols) = (a.shape()[0], a.shape()[1]);
    let mut out = NdArray::zeros(&[cols, rows]);
    for r in 0..rows {
        for c in 0..cols {
            out.data_mut()[c * rows + r] = a.data()[r * cols + c];
        }
    }
    out
}

// ---- backward dispatch ----

fn accum(adj: &mut [Option<NdArray>], idx: usize, shape: &[usize], f: impl FnOnce(&mut NdArray)) {
    let mut buf = match adj[idx].take() {
        Some(b) => b,
        None => NdArray::zeros(shape),
    };
    f(&mut buf);
    adj[idx] = Some(buf);
}

fn backprop_node(nodes: &[Node], i: usize, g: &NdArray, adj: &mut [Option<NdArray>]) {
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &p in &[*a, *b] {
                accum(adj, p, nodes[p].value.shape(), |buf| {
                    for (d, s) in buf.data_mut().iter_mut().zip(g.data()) {
                        *d += *s;
                    }
                });
            }
        }
        Op::Mul(a, b) => {
            let (a, b) = (*a, *b);
            accum(adj, a, nodes[a].value.shape(), |buf| {
                for ((d, s), o) in buf.data_mut().iter_mut().zip(g.data()).zip(nodes[b].value.data()) {
                    *d += *s * *o;
                }
            });
            accum(adj, b, nodes[b].value.shape(), |buf| {
                for ((d, s), o) in buf.data_mut().iter_mut().zip(g.data()).zip(nodes[a].value.data()) {
                    *d += *s * *o;
                }
            });
        }
        Op::Scale(a, c) => {
            let c = *c;
            accum(adj, *a, nodes[*a].value.shape(), |buf| {
                for (d, s) in buf.data_mut().iter_mut().zip(g.data()) {
                    *d += c * *s;
                }
            });
        }
        Op::AddBias { x, bias } => {
            let (x, bias) = (*x, *bias);
            accum(adj, x, nodes[x].value.shape(), |buf| {
                for (d, s) in buf.data_mut().iter_mut().zip(g.data()) {
                    *d += *s;
                }
            });
            let channels = nodes[bias].value.shape()[0];
            let inner = nodes[x].value.len() / channels;
            accum(adj, bias, nodes[bias].value.shape(), |buf| {
                for c in 0..channels {
                    let s: f64 = g.data()[c * inner..(c + 1) * inner].iter().sum();
                    buf.data_mut()[c] += s;
                }
            });
        }
        Op::Relu(a) => {
            let a = *a;
            accum(adj, a, nodes[a].value.shape(), |buf| {
                for ((d, s), x) in buf.data_mut().iter_mut().zip(g.data()).zip(nodes[a].value.data())
                {
                    if *x > 0.0 {
                        *d += *s;
                    }
                }
            });
        }
        Op::Transpose2(a) => {
            let a = *a;
            let gt = transpose2_array(g);
            accum(adj, a, nodes[a].value.shape(), |buf| {
                for (d, s) in buf.data_mut().iter_mut().zip(gt.data()) {
                    *d += *s;
                }
            });
        }
        Op::ConcatCols(a, b) => {
            let (a, b) = (*a, *b);
            let (rows, ca) = (nodes[a].value.shape()[0], nodes[a].value.shape()[1]);
            let cb = nodes[b].value.shape()[1];
            let cols = ca + cb;
            accum(adj, a, nodes[a].value.shape(), |buf| {
                for r in 0..rows {
                    for c in 0..ca {
                        buf.data_mut()[r * ca + c] += g.data()[r * cols + c];
                    }
                }
            });
            accum(adj, b, nodes[b].value.shape(), |buf| {
                for r in 0..rows {
                    for c in 0..cb {
                        buf.data_mut()[r * cb + c] += g.data()[r * cols + ca + c];
                    }
                }
            });
        }
        Op::Conv2d {
            input,
            kernel,
            stride,
            padding,
        } => {
            let (input, kernel, stride, padding) = (*input, *kernel, *stride, *padding);
            accum(adj, input, nodes[input].value.shape(), |buf| {
                conv2d_backward_input(&nodes[kernel].value, g, stride, padding, buf);
            });
            accum(adj, kernel, nodes[kernel].value.shape(), |buf| {
                conv2d_backward_kernel(&nodes[input].value, g, stride, padding, buf);
            });
        }
        Op::Conv1dDilated {
            input,
            kernel,
            dilation,
        } => {
            let (input, kernel, dilation) = (*input, *kernel, *dilation);
            accum(adj, input, nodes[input].value.shape(), |buf| {
                conv1d_backward_input(&nodes[kernel].value, g, dilation, buf);
            });
            accum(adj, kernel, nodes[kernel].value.shape(), |buf| {
                conv1d_backward_kernel(&nodes[input].value, g, dilation, buf);
            });
        }
        Op::BilinearSample { map, taps } => {
            let map = *map;
            accum(adj, map, nodes[map].value.shape(), |buf| {
                bilinear_backward_map(buf, taps, g);
            });
        }
        Op::BilinearSampleDiff { map, coords, taps } => {
            let (map, coords) = (*map, *coords);
            accum(adj, map, nodes[map].value.shape(), |buf| {
                bilinear_backward_map(buf, taps, g);
            });
            accum(adj, coords, nodes[coords].value.shape(), |buf| {
                bilinear_backward_coords(&nodes[map].value, buf, taps, g);
            });
        }
        Op::StopGradient(_) => {}
        Op::Dropout { input, mask } => {
            let input = *input;
            accum(adj, input, nodes[input].value.shape(), |buf| {
                for ((d, s), m) in buf.data_mut().iter_mut().zip(g.data()).zip(mask) {
                    *d += *s * *m;
                }
            });
        }
        Op::Clamp01(a) => {
            let a = *a;
            accum(adj, a, nodes[a].value.shape(), |buf| {
                for ((d, s), x) in buf.data_mut().iter_mut().zip(g.data()).zip(nodes[a].value.data())
                {
                    if (0.0..=1.0).contains(x) {
                        *d += *s;
                    }
                }
            });
        }
        Op::Sum(a) => {
            let a = *a;
            let s = g.scalar_value();
            accum(adj, a, nodes[a].value.shape(), |buf| {
                for d in buf.data_mut() {
                    *d += s;
                }
            });
        }
        Op::LossL1 { p, t } => {
            let p = *p;
            let gs = g.scalar_value();
            let n = t.len() as f64;
            accum(adj, p, nodes[p].value.shape(), |buf| {
                let pv = nodes[p].value.data();
                for (i, tj) in t.iter().enumerate() {
                    let dx = pv[2 * i] - tj[0];
                    let dy = pv[2 * i + 1] - tj[1];
                    let norm = (dx * dx + dy * dy).sqrt();
                    if norm > 0.0 {
                        buf.data_mut()[2 * i] += gs * dx / (norm * n);
                        buf.data_mut()[2 * i + 1] += gs * dy / (norm * n);
                    }
                }
            });
        }
        Op::LossL2 { p, t } => {
            let p = *p;
            let gs = g.scalar_value();
            let n = t.len() as f64;
            accum(adj, p, nodes[p].value.shape(), |buf| {
                let pv = nodes[p].value.data();
                for (i, tj) in t.iter().enumerate() {
                    let dx = pv[2 * i] - tj[0];
                    let dy = pv[2 * i + 1] - tj[1];
                    buf.data_mut()[2 * i] += gs * 2.0 * dx / n;
                    buf.data_mut()[2 * i + 1] += gs * 2.0 * dy / n;
                }
            });
        }
        Op::LossDtw { p, t, path } => {
            let p = *p;
            let gs = g.scalar_value();
            accum(adj, p, nodes[p].value.shape(), |buf| {
                let pv = nodes[p].value.data();
                for &(i, j) in path {
                    let dx = pv[2 * i] - t[j][0];
                    let dy = pv[2 * i + 1] - t[j][1];
                    buf.data_mut()[2 * i] += gs * 2.0 * dx;
                    buf.data_mut()[2 * i + 1] += gs * 2.0 * dy;
                }
            });
        }
        Op::LossSoftDtw { p, t, gamma, r } => {
            let p = *p;
            let gs = g.scalar_value();
            accum(adj, p, nodes[p].value.shape(), |buf| {
                let pv: Vec<[f64; 2]> = nodes[p]
                    .value
                    .data()
                    .chunks_exact(2)
                    .map(|c| [c[0], c[1]])
                    .collect();
                let e = losses::softdtw_alignment(&pv, t, *gamma, r);
                let cols = t.len() + 2;
                for (i, pi) in pv.iter().enumerate() {
                    let mut gx = 0.0;
                    let mut gy = 0.0;
                    for (j, tj) in t.iter().enumerate() {
                        let w = e[(i + 1) * cols + (j + 1)];
                        if w != 0.0 {
                            gx += w * 2.0 * (pi[0] - tj[0]);
                            gy += w * 2.0 * (pi[1] - tj[1]);
                        }
                    }
                    buf.data_mut()[2 * i] += gs * gx;
                    buf.data_mut()[2 * i + 1] += gs * gy;
                }
            });
        }
    }
}

// ---- convolution kernels ----

fn validate_conv2d(input: &NdArray, kernel: &NdArray, stride: usize, padding: usize) -> Result<()> {
    if input.rank() != 3 {
        return Err(Error::shape(format!(
            "conv2d input must be [C,H,W], got {:?}",
            input.shape()
        )));
    }
    if kernel.rank() != 4 || kernel.shape()[2] != kernel.shape()[3] {
        return Err(Error::shape(format!(
            "conv2d kernel must be [C_out,C_in,k,k], got {:?}",
            kernel.shape()
        )));
    }
    let k = kernel.shape()[2];
    if k.is_multiple_of(2) {
        return Err(Error::invalid(format!("conv2d kernel size must be odd, got {k}")));
    }
    if kernel.shape()[1] != input.shape()[0] {
        return Err(Error::shape(format!(
            "conv2d channel mismatch: input has {}, kernel expects {}",
            input.shape()[0],
            kernel.shape()[1]
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d stride must be positive"));
    }
    let (h, w) = (input.shape()[1], input.shape()[2]);
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::shape(format!(
            "conv2d output would be empty: input {h}x{w}, kernel {k}, padding {padding}"
        )));
    }
    Ok(())
}

fn conv2d_out_extent(extent: usize, k: usize, stride: usize, padding: usize) -> usize {
    (extent + 2 * padding - k) / stride + 1
}

/// Valid output range for one kernel column offset: all ow with
/// 0 <= ow*stride + off < w.
fn conv_span(off: isize, w: usize, out_w: usize, stride: usize) -> Option<(usize, usize)> {
    let lo = if off < 0 {
        ((-off) as usize).div_ceil(stride)
    } else {
        0
    };
    let hi_num = w as isize - 1 - off;
    if hi_num < 0 {
        return None;
    }
    let hi = (hi_num as usize / stride).min(out_w - 1);
    if lo > hi {
        return None;
    }
    Some((lo, hi))
}

fn conv2d_forward(input: &NdArray, kernel: &NdArray, stride: usize, padding: usize) -> NdArray {
    let (ci_n, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (co_n, k) = (kernel.shape()[0], kernel.shape()[2]);
    let oh_n = conv2d_out_extent(h, k, stride, padding);
    let ow_n = conv2d_out_extent(w, k, stride, padding);
    let mut out = NdArray::zeros(&[co_n, oh_n, ow_n]);
    let idat = input.data();
    let kdat = kernel.data();
    let odat = out.data_mut();
    for co in 0..co_n {
        for ci in 0..ci_n {
            for ki in 0..k {
                for kj in 0..k {
                    let wgt = kdat[((co * ci_n + ci) * k + ki) * k + kj];
                    if wgt == 0.0 {
                        continue;
                    }
                    let off = kj as isize - padding as isize;
                    let Some((ow_lo, ow_hi)) = conv_span(off, w, ow_n, stride) else {
                        continue;
                    };
                    for oh in 0..oh_n {
                        let ih = (oh * stride + ki) as isize - padding as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let obase = (co * oh_n + oh) * ow_n;
                        let ibase = (ci * h + ih as usize) * w;
                        if stride == 1 {
                            let iw0 = (ow_lo as isize + off) as usize;
                            let len = ow_hi - ow_lo + 1;
                            let orow = &mut odat[obase + ow_lo..obase + ow_lo + len];
                            let irow = &idat[ibase + iw0..ibase + iw0 + len];
                            for (o, x) in orow.iter_mut().zip(irow) {
                                *o += wgt * *x;
                            }
                        } else {
                            for ow in ow_lo..=ow_hi {
                                let iw = (ow * stride) as isize + off;
                                odat[obase + ow] += wgt * idat[ibase + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward_input(
    kernel: &NdArray,
    g: &NdArray,
    stride: usize,
    padding: usize,
    d_input: &mut NdArray,
) {
    let (ci_n, h, w) = (
        d_input.shape()[0],
        d_input.shape()[1],
        d_input.shape()[2],
    );
    let (co_n, k) = (kernel.shape()[0], kernel.shape()[2]);
    let (oh_n, ow_n) = (g.shape()[1], g.shape()[2]);
    let kdat = kernel.data();
    let gdat = g.data();
    let ddat = d_input.data_mut();
    for co in 0..co_n {
        for ci in 0..ci_n {
            for ki in 0..k {
                for kj in 0..k {
                    let wgt = kdat[((co * ci_n + ci) * k + ki) * k + kj];
                    if wgt == 0.0 {
                        continue;
                    }
                    let off = kj as isize - padding as isize;
                    let Some((ow_lo, ow_hi)) = conv_span(off, w, ow_n, stride) else {
                        continue;
                    };
                    for oh in 0..oh_n {
                        let ih = (oh * stride + ki) as isize - padding as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let gbase = (co * oh_n + oh) * ow_n;
                        let ibase = (ci * h + ih as usize) * w;
                        if stride == 1 {
                            let iw0 = (ow_lo as isize + off) as usize;
                            let len = ow_hi - ow_lo + 1;
                            let drow = &mut ddat[ibase + iw0..ibase + iw0 + len];
                            let grow = &gdat[gbase + ow_lo..gbase + ow_lo + len];
                            for (d, s) in drow.iter_mut().zip(grow) {
                                *d += wgt * *s;
                            }
                        } else {
                            for ow in ow_lo..=ow_hi {
                                let iw = (ow * stride) as isize + off;
                                ddat[ibase + iw as usize] += wgt * gdat[gbase + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_backward_kernel(
    input: &NdArray,
    g: &NdArray,
    stride: usize,
    padding: usize,
    d_kernel: &mut NdArray,
) {
    let (ci_n, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (co_n, k) = (d_kernel.shape()[0], d_kernel.shape()[2]);
    let (oh_n, ow_n) = (g.shape()[1], g.shape()[2]);
    let idat = input.data();
    let gdat = g.data();
    let ddat = d_kernel.data_mut();
    for co in 0..co_n {
        for ci in 0..ci_n {
            for ki in 0..k {
                for kj in 0..k {
                    let off = kj as isize - padding as isize;
                    let Some((ow_lo, ow_hi)) = conv_span(off, w, ow_n, stride) else {
                        continue;
                    };
                    let mut acc = 0.0;
                    for oh in 0..oh_n {
                        let ih = (oh * stride + ki) as isize - padding as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let gbase = (co * oh_n + oh) * ow_n;
                        let ibase = (ci * h + ih as usize) * w;
                        if stride == 1 {
                            let iw0 = (ow_lo as isize + off) as usize;
                            let len = ow_hi - ow_lo + 1;
                            let grow = &gdat[gbase + ow_lo..gbase + ow_lo + len];
                            let irow = &idat[ibase + iw0..ibase + iw0 + len];
                            acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                        } else {
                            for ow in ow_lo..=ow_hi {
                                let iw = (ow * stride) as isize + off;
                                acc += gdat[gbase + ow] * idat[ibase + iw as usize];
                            }
                        }
                    }
                    ddat[((co * ci_n + ci) * k + ki) * k + kj] += acc;
                }
            }
        }
    }
}

fn validate_conv1d(input: &NdArray, kernel: &NdArray, dilation: usize) -> Result<()> {
    if input.rank() != 2 {
        return Err(Error::shape(format!(
            "conv1d input must be [C,V], got {:?}",
            input.shape()
        )));
    }
    if kernel.rank() != 3 {
        return Err(Error::shape(format!(
            "conv1d kernel must be [C_out,C_in,k], got {:?}",
            kernel.shape()
        )));
    }
    if kernel.shape()[2].is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "conv1d kernel size must be odd, got {}",
            kernel.shape()[2]
        )));
    }
    if kernel.shape()[1] != input.shape()[0] {
        return Err(Error::shape(format!(
            "conv1d channel mismatch: input has {}, kernel expects {}",
            input.shape()[0],
            kernel.shape()[1]
        )));
    }
    if dilation < 1 {
        return Err(Error::invalid("conv1d dilation must be at least 1"));
    }
    Ok(())
}

fn conv1d_forward(input: &NdArray, kernel: &NdArray, dilation: usize) -> NdArray {
    let (ci_n, v_n) = (input.shape()[0], input.shape()[1]);
    let (co_n, k) = (kernel.shape()[0], kernel.shape()[2]);
    let pad = dilation * (k - 1) / 2;
    let mut out = NdArray::zeros(&[co_n, v_n]);
    let idat = input.data();
    let kdat = kernel.data();
    let odat = out.data_mut();
    for co in 0..co_n {
        for ci in 0..ci_n {
            for kk in 0..k {
                let wgt = kdat[(co * ci_n + ci) * k + kk];
                if wgt == 0.0 {
                    continue;
                }
                let shift = (kk * dilation) as isize - pad as isize;
                let v_lo = if shift < 0 { (-shift) as usize } else { 0 };
                let v_hi_num = v_n as isize - 1 - shift;
                if v_hi_num < 0 || v_lo > v_hi_num as usize {
                    continue;
                }
                let v_hi = (v_hi_num as usize).min(v_n - 1);
                let i0 = (v_lo as isize + shift) as usize;
                let len = v_hi - v_lo + 1;
                let orow = &mut odat[co * v_n + v_lo..co * v_n + v_lo + len];
                let irow = &idat[ci * v_n + i0..ci * v_n + i0 + len];
                for (o, x) in orow.iter_mut().zip(irow) {
                    *o += wgt * *x;
                }
            }
        }
    }
    out
}

fn conv1d_backward_input(kernel: &NdArray, g: &NdArray, dilation: usize, d_input: &mut NdArray) {
    let (ci_n, v_n) = (d_input.shape()[0], d_input.shape()[1]);
    let (co_n, k) = (kernel.shape()[0], kernel.shape()[2]);
    let pad = dilation * (k - 1) / 2;
    let kdat = kernel.data();
    let gdat = g.data();
    let ddat = d_input.data_mut();
    for co in 0..co_n {
        for ci in 0..ci_n {
            for kk in 0..k {
                let wgt = kdat[(co * ci_n + ci) * k + kk];
                if wgt == 0.0 {
                    continue;
                }
                let shift = (kk * dilation) as isize - pad as isize;
                let v_lo = if shift < 0 { (-shift) as usize } else { 0 };
                let v_hi_num = v_n as isize - 1 - shift;
                if v_hi_num < 0 || v_lo > v_hi_num as usize {
                    continue;
                }
                let v_hi = (v_hi_num as usize).min(v_n - 1);
                let i0 = (v_lo as isize + shift) as usize;
                let len = v_hi - v_lo + 1;
                let drow = &mut ddat[ci * v_n + i0..ci * v_n + i0 + len];
                let grow = &gdat[co * v_n + v_lo..co * v_n + v_lo + len];
                for (d, s) in drow.iter_mut().zip(grow) {
                    *d += wgt * *s;
                }
            }
        }
    }
}

fn conv1d_backward_kernel(input: &NdArray, g: &NdArray, dilation: usize, d_kernel: &mut NdArray) {
    let (ci_n, v_n) = (input.shape()[0], input.shape()[1]);
    let (co_n, k) = (d_kernel.shape()[0], d_kernel.shape()[2]);
    let pad = dilation * (k - 1) / 2;
    let idat = input.data();
    let gdat = g.data();
    let ddat = d_kernel.data_mut();
    for co in 0..co_n {
        for ci in 0..ci_n {
            for kk in 0..k {
                let shift = (kk * dilation) as isize - pad as isize;
                let v_lo = if shift < 0 { (-shift) as usize } else { 0 };
                let v_hi_num = v_n as isize - 1 - shift;
                if v_hi_num < 0 || v_lo > v_hi_num as usize {
                    continue;
                }
                let v_hi = (v_hi_num as usize).min(v_n - 1);
                let i0 = (v_lo as isize + shift) as usize;
                let len = v_hi - v_lo + 1;
                let grow = &gdat[co * v_n + v_lo..co * v_n + v_lo + len];
                let irow = &idat[ci * v_n + i0..ci * v_n + i0 + len];
                ddat[(co * ci_n + ci) * k + kk] +=
                    grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
}

// ---- bilinear sampling kernels ----

fn make_taps(map: &NdArray, points: &[[f64; 2]]) -> Result<Vec<Tap>> {
    if map.rank() != 3 {
        return Err(Error::shape(format!(
            "feature map must be [C,H,W], got {:?}",
            map.shape()
        )));
    }
    let (h, w) = (map.shape()[1], map.shape()[2]);
    if h < 2 || w < 2 {
        return Err(Error::shape(format!(
            "feature map must be at least 2x2 to sample, got {h}x{w}"
        )));
    }
    if points.is_empty() {
        return Err(Error::invalid("cannot sample at zero points"));
    }
    Ok(points
        .iter()
        .map(|p| {
            let x_active = (0.0..=1.0).contains(&p[0]);
            let y_active = (0.0..=1.0).contains(&p[1]);
            let px = p[0].clamp(0.0, 1.0) * (w - 1) as f64;
            let py = p[1].clamp(0.0, 1.0) * (h - 1) as f64;
            let x0 = (px.floor() as usize).min(w - 2);
            let y0 = (py.floor() as usize).min(h - 2);
            Tap {
                x0,
                y0,
                fx: px - x0 as f64,
                fy: py - y0 as f64,
                x_active,
                y_active,
            }
        })
        .collect())
}

fn bilinear_forward(map: &NdArray, taps: &[Tap]) -> NdArray {
    let (c_n, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    let mdat = map.data();
    let mut out = NdArray::zeros(&[taps.len(), c_n]);
    let odat = out.data_mut();
    for (v, tap) in taps.iter().enumerate() {
        let w00 = (1.0 - tap.fx) * (1.0 - tap.fy);
        let w01 = tap.fx * (1.0 - tap.fy);
        let w10 = (1.0 - tap.fx) * tap.fy;
        let w11 = tap.fx * tap.fy;
        let base = tap.y0 * w + tap.x0;
        for c in 0..c_n {
            let plane = c * h * w;
            odat[v * c_n + c] = w00 * mdat[plane + base]
                + w01 * mdat[plane + base + 1]
                + w10 * mdat[plane + base + w]
                + w11 * mdat[plane + base + w + 1];
        }
    }
    out
}

fn bilinear_backward_map(d_map: &mut NdArray, taps: &[Tap], g: &NdArray) {
    let (c_n, h, w) = (d_map.shape()[0], d_map.shape()[1], d_map.shape()[2]);
    let ddat = d_map.data_mut();
    for (v, tap) in taps.iter().enumerate() {
        let w00 = (1.0 - tap.fx) * (1.0 - tap.fy);
        let w01 = tap.fx * (1.0 - tap.fy);
        let w10 = (1.0 - tap.fx) * tap.fy;
        let w11 = tap.fx * tap.fy;
        let base = tap.y0 * w + tap.x0;
        for c in 0..c_n {
            let s = g.data()[v * c_n + c];
            if s == 0.0 {
                continue;
            }
            let plane = c * h * w;
            ddat[plane + base] += w00 * s;
            ddat[plane + base + 1] += w01 * s;
            ddat[plane + base + w] += w10 * s;
            ddat[plane + base + w + 1] += w11 * s;
        }
    }
}

fn bilinear_backward_coords(map: &NdArray, d_coords: &mut NdArray, taps: &[Tap], g: &NdArray) {
    let (c_n, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    let mdat = map.data();
    for (v, tap) in taps.iter().enumerate() {
        let base = tap.y0 * w + tap.x0;
        let mut dpx = 0.0;
        let mut dpy = 0.0;
        for c in 0..c_n {
            let s = g.data()[v * c_n + c];
            if s == 0.0 {
                continue;
            }
            let plane = c * h * w;
            let m00 = mdat[plane + base];
            let m01 = mdat[plane + base + 1];
            let m10 = mdat[plane + base + w];
            let m11 = mdat[plane + base + w + 1];
            dpx += s * ((1.0 - tap.fy) * (m01 - m00) + tap.fy * (m11 - m10));
            dpy += s * ((1.0 - tap.fx) * (m10 - m00) + tap.fx * (m11 - m01));
        }
        if tap.x_active {
            d_coords.data_mut()[2 * v] += dpx * (w - 1) as f64;
        }
        if tap.y_active {
            d_coords.data_mut()[2 * v + 1] += dpy * (h - 1) as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn poly(pts: &[[f64; 2]]) -> Polyline {
        Polyline::new(pts.to_vec()).unwrap()
    }

    #[test]
    fn conv2d_scalar_kernel_scales() {
        let t = Tape::new();
        let x = t.leaf(NdArray::full(&[1, 3, 3], 1.0));
        let k = t.leaf(NdArray::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap());
        let y = t.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(t.shape_of(y), vec![1, 3, 3]);
        assert!(t.value(y).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv2d_identity_kernel() {
        let t = Tape::new();
        let data: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let x = t.leaf(NdArray::from_vec(&[1, 3, 3], data.clone()).unwrap());
        let k = t.leaf(NdArray::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap());
        let y = t.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(t.value(y).data(), &data[..]);
    }

    #[test]
    fn conv2d_shape_mismatch_is_error() {
        let t = Tape::new();
        let x = t.leaf(NdArray::zeros(&[2, 4, 4]));
        let k = t.leaf(NdArray::zeros(&[3, 1, 3, 3]));
        assert!(t.conv2d(x, k, 1, 1).is_err());
    }

    #[test]
    fn conv1d_center_tap_is_identity() {
        let t = Tape::new();
        let data: Vec<f64> = (0..8).map(|v| v as f64 + 1.0).collect();
        let x = t.leaf(NdArray::from_vec(&[1, 8], data.clone()).unwrap());
        for dilation in [1, 2, 3] {
            let k = t.leaf(NdArray::from_vec(&[1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap());
            let y = t.conv1d_dilated(x, k, dilation).unwrap();
            assert_eq!(t.value(y).data(), &data[..]);
        }
    }

    #[test]
    fn conv1d_left_tap_shifts_with_zero_fill() {
        let t = Tape::new();
        let data: Vec<f64> = (0..8).map(|v| v as f64 + 1.0).collect();
        let x = t.leaf(NdArray::from_vec(&[1, 8], data.clone()).unwrap());
        let k = t.leaf(NdArray::from_vec(&[1, 1, 3], vec![1.0, 0.0, 0.0]).unwrap());
        let y = t.conv1d_dilated(x, k, 3).unwrap();
        let got = t.value(y);
        for i in 0..8 {
            let want = if i < 3 { 0.0 } else { data[i - 3] };
            assert_eq!(got.data()[i], want, "index {i}");
        }
    }

    #[test]
    fn conv1d_rejects_zero_dilation() {
        let t = Tape::new();
        let x = t.leaf(NdArray::zeros(&[1, 8]));
        let k = t.leaf(NdArray::zeros(&[1, 1, 3]));
        assert!(t.conv1d_dilated(x, k, 0).is_err());
    }

    #[test]
    fn bilinear_constant_field() {
        let t = Tape::new();
        let m = t.leaf(NdArray::full(&[3, 4, 4], 7.5));
        let pts = poly(&[[0.13, 0.77], [0.5, 0.5], [1.0, 0.0]]);
        let y = t.bilinear_sample(m, &pts).unwrap();
        assert_eq!(t.shape_of(y), vec![3, 3]);
        assert!(t.value(y).iter().all(|&v| (v - 7.5).abs() < 1e-12));
    }

    #[test]
    fn bilinear_grid_node_exact() {
        let t = Tape::new();
        let mut arr = NdArray::zeros(&[2, 3, 3]);
        for c in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    *arr.at_mut(&[c, i, j]) = (100 * c + 10 * i + j) as f64;
                }
            }
        }
        let m = t.leaf(arr);
        // Normalized (x=1/2, y=1) lands on grid node row 2, col 1.
        let pts = poly(&[[0.5, 1.0], [0.0, 0.0]]);
        let y = t.bilinear_sample(m, &pts).unwrap();
        let out = t.value(y);
        assert_eq!(out.at(&[0, 0]), 21.0);
        assert_eq!(out.at(&[0, 1]), 121.0);
        assert_eq!(out.at(&[1, 0]), 0.0);
        assert_eq!(out.at(&[1, 1]), 100.0);
    }

    #[test]
    fn bilinear_midway_between_cells() {
        let t = Tape::new();
        let mut arr = NdArray::zeros(&[1, 2, 2]);
        *arr.at_mut(&[0, 0, 0]) = 0.0;
        *arr.at_mut(&[0, 0, 1]) = 4.0;
        *arr.at_mut(&[0, 1, 0]) = 0.0;
        *arr.at_mut(&[0, 1, 1]) = 4.0;
        let m = t.leaf(arr);
        let pts = poly(&[[0.5, 0.0], [0.5, 1.0]]);
        let y = t.bilinear_sample(m, &pts).unwrap();
        assert!((t.value(y).at(&[0, 0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stop_gradient_severs_product_branch() {
        let t = Tape::new();
        let x = t.leaf(NdArray::scalar(3.0));
        let sx = t.stop_gradient(x);
        let y = t.mul(sx, x).unwrap();
        let loss = t.sum(y);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).scalar_value(), 3.0);
    }

    #[test]
    fn stop_gradient_only_path_gives_zero() {
        let t = Tape::new();
        let x = t.leaf(NdArray::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let sx = t.stop_gradient(x);
        let loss = t.sum(sx);
        t.backward(loss).unwrap();
        assert!(t.grad(x).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dropout_rate_zero_is_bit_exact_identity() {
        let t = Tape::new();
        let x = t.leaf(NdArray::from_vec(&[4], vec![1.0, -2.0, 3.5, 0.0]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = t.dropout(x, 0.0, true, &mut rng).unwrap();
        assert_eq!(t.value(y).data(), t.value(x).data());
    }

    #[test]
    fn dropout_same_seed_same_mask() {
        let a = {
            let t = Tape::new();
            let x = t.leaf(NdArray::full(&[100], 1.0));
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let y = t.dropout(x, 0.3, true, &mut rng).unwrap();
            t.value(y)
        };
        let b = {
            let t = Tape::new();
            let x = t.leaf(NdArray::full(&[100], 1.0));
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let y = t.dropout(x, 0.3, true, &mut rng).unwrap();
            t.value(y)
        };
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn dropout_mean_is_close_to_one() {
        let t = Tape::new();
        let n = 100_000;
        let x = t.leaf(NdArray::full(&[n], 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let y = t.dropout(x, 0.2, true, &mut rng).unwrap();
        let mean: f64 = t.value(y).iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn dropout_rejects_bad_rate() {
        let t = Tape::new();
        let x = t.leaf(NdArray::zeros(&[4]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(t.dropout(x, 1.0, true, &mut rng).is_err());
        assert!(t.dropout(x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn backward_sum_gives_ones() {
        let t = Tape::new();
        let x = t.leaf(NdArray::from_vec(&[3], vec![5.0, -1.0, 2.0]).unwrap());
        let loss = t.sum(x);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_sum_of_squares() {
        let t = Tape::new();
        let x = t.leaf(NdArray::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let t = Tape::new();
        let x = t.leaf(NdArray::scalar(5.0));
        let y = t.scale(x, 2.0);
        let loss = t.sum(y);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).scalar_value(), 2.0);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).scalar_value(), 4.0);
        t.zero_grads();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).scalar_value(), 2.0);
    }

    #[test]
    fn backward_requires_scalar() {
        let t = Tape::new();
        let x = t.leaf(NdArray::zeros(&[2, 2]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn clamp_passes_gradient_inside_only() {
        let t = Tape::new();
        let x = t.leaf(NdArray::from_vec(&[3], vec![-0.5, 0.5, 1.5]).unwrap());
        let y = t.clamp01(x);
        let loss = t.sum(y);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).data(), &[0.0, 1.0, 0.0]);
        assert_eq!(t.value(y).data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn concat_and_transpose_round_trip_gradient() {
        let t = Tape::new();
        let a = t.leaf(NdArray::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.leaf(NdArray::from_vec(&[2, 1], vec![5.0, 6.0]).unwrap());
        let cat = t.concat_cols(a, b).unwrap();
        assert_eq!(t.value(cat).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let tr = t.transpose2(cat).unwrap();
        assert_eq!(t.shape_of(tr), vec![3, 2]);
        let loss = t.sum(tr);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(a).data(), &[1.0; 4]);
        assert_eq!(t.grad(b).data(), &[1.0; 2]);
    }

    #[test]
    fn loss_l1_examples() {
        let t = Tape::new();
        let p = t.leaf(poly(&[[0.0, 0.0], [1.0, 0.0]]).to_array());
        let zero = t.loss_l1(p, &poly(&[[0.0, 0.0], [1.0, 0.0]])).unwrap();
        assert_eq!(t.value(zero).scalar_value(), 0.0);
        let half = t.loss_l1(p, &poly(&[[0.0, 1.0], [1.0, 0.0]])).unwrap();
        assert!((t.value(half).scalar_value() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn loss_l1_constant_shift() {
        let t = Tape::new();
        let base = [[0.1, 0.2], [0.4, 0.6], [0.9, 0.3]];
        let shifted: Vec<[f64; 2]> = base.iter().map(|p| [p[0] + 0.3, p[1] + 0.4]).collect();
        let p = t.leaf(poly(&shifted).to_array());
        let l = t.loss_l1(p, &poly(&base)).unwrap();
        assert!((t.value(l).scalar_value() - 0.5).abs() < 1e-12);
        let l2 = t.loss_l2(p, &poly(&base)).unwrap();
        assert!((t.value(l2).scalar_value() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn loss_l1_no_nan_at_coincident_vertices() {
        let t = Tape::new();
        let pts = poly(&[[0.25, 0.5], [0.75, 0.5]]);
        let p = t.leaf(pts.to_array());
        let l = t.loss_l1(p, &pts).unwrap();
        t.backward(l).unwrap();
        assert!(t.grad(p).iter().all(|g| g.is_finite()));
        assert!(t.grad(p).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_l2_example() {
        let t = Tape::new();
        let p = t.leaf(poly(&[[0.0, 0.0], [1.0, 0.0]]).to_array());
        let l = t.loss_l2(p, &poly(&[[0.0, 1.0], [1.0, 0.0]])).unwrap();
        assert!((t.value(l).scalar_value() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn loss_dtw_examples() {
        let t = Tape::new();
        let p = t.leaf(poly(&[[0.0, 0.0], [1.0, 0.0]]).to_array());
        let same = t.loss_dtw(p, &poly(&[[0.0, 0.0], [1.0, 0.0]])).unwrap();
        assert_eq!(t.value(same).scalar_value(), 0.0);
        let one = t.loss_dtw(p, &poly(&[[0.0, 0.0], [1.0, 1.0]])).unwrap();
        assert_eq!(t.value(one).scalar_value(), 1.0);
    }

    #[test]
    fn loss_softdtw_approaches_dtw() {
        let t = Tape::new();
        let p = t.leaf(poly(&[[0.0, 0.0], [1.0, 0.0]]).to_array());
        let truth = poly(&[[0.0, 0.0], [1.0, 1.0]]);
        let soft = t.loss_softdtw(p, &truth, 1e-4).unwrap();
        assert!((t.value(soft).scalar_value() - 1.0).abs() < 1e-3);
        assert!(t.loss_softdtw(p, &truth, 0.0).is_err());
    }

    #[test]
    fn mismatched_vertex_counts_error_for_paired_losses() {
        let t = Tape::new();
        let p = t.leaf(poly(&[[0.0, 0.0], [1.0, 0.0]]).to_array());
        let truth = poly(&[[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]]);
        assert!(t.loss_l1(p, &truth).is_err());
        assert!(t.loss_l2(p, &truth).is_err());
        assert!(t.loss_dtw(p, &truth).is_ok());
    }
}
