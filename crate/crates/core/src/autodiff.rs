//! A small reverse-mode tape over dense row-major matrices.
//!
//! Only the operations the graph network needs are provided. Every node keeps
//! its forward value; [`Tape::backward`] walks the nodes in reverse insertion
//! order and accumulates adjoints.

use ndarray::{Array1, Array2, Axis, Zip};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    /// `a + b` where `b` is a `1 x d` row broadcast over the rows of `a`.
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    /// Rows of `a` scaled by constant factors.
    ScaleRows(Var, Array1<f64>),
    Sigmoid(Var),
    Silu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Array2<f64>,
        inv_std: Array1<f64>,
    },
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, index: usize, value: &Array2<f64>) -> Var {
        self.push(value.clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale_rows(&mut self, a: Var, factors: Array1<f64>) -> Var {
        let v = self.value(a) * &factors.view().insert_axis(Axis(1));
        self.push(v, Op::ScaleRows(a, factors))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * sigmoid(x));
        self.push(v, Op::Silu(a))
    }

    /// Row-wise layer normalization with learnable `1 x d` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mean = xv.sum_axis(Axis(1)) / d;
        let centered = xv - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|c| c * c).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + LAYER_NORM_EPS).sqrt());
        let normed = centered * inv_std.view().insert_axis(Axis(1));
        let out = &normed * self.value(gain) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        )
    }

    /// Output row `i` is row `index[i]` of `a`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>) -> Var {
        let src = self.value(a);
        let mut out = Array2::zeros((index.len(), src.ncols()));
        for (mut row, &j) in out.outer_iter_mut().zip(&index) {
            row.assign(&src.row(j));
        }
        self.push(out, Op::Gather(a, index))
    }

    /// Sums row `i` of `a` into output row `index[i]`; the output has `rows` rows.
    pub fn scatter_add(&mut self, a: Var, index: Vec<usize>, rows: usize) -> Var {
        let src = self.value(a);
        let mut out = Array2::zeros((rows, src.ncols()));
        for (row, &j) in src.outer_iter().zip(&index) {
            let mut dst = out.row_mut(j);
            dst += &row;
        }
        self.push(out, Op::ScatterAdd(a, index))
    }

    /// Propagates the given output adjoints back to every parameter.
    /// Returns one gradient per parameter index in `0..num_params`, shaped like
    /// the parameter (zero where the parameter is unused).
    pub fn backward(
        &self,
        seeds: &[(Var, Array2<f64>)],
        param_shapes: &[(usize, usize)],
    ) -> Vec<Array2<f64>> {
        self.backward_with_inputs(seeds, param_shapes, &[]).0
    }

    /// Like [`Tape::backward`], additionally returning the adjoints of the
    /// requested input nodes.
    pub fn backward_with_inputs(
        &self,
        seeds: &[(Var, Array2<f64>)],
        param_shapes: &[(usize, usize)],
        inputs: &[Var],
    ) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let mut input_grads: Vec<Array2<f64>> = inputs
            .iter()
            .map(|v| Array2::zeros(self.value(*v).raw_dim()))
            .collect();
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            accumulate(&mut grads, *v, g.clone());
        }
        let mut out: Vec<Array2<f64>> = param_shapes.iter().map(|&s| Array2::zeros(s)).collect();
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {
                    for (slot, v) in input_grads.iter_mut().zip(inputs) {
                        if v.0 == idx {
                            *slot += &g;
                        }
                    }
                }
                Op::Param(p) => out[*p] += &g,
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::ScaleRows(a, f) => {
                    let ga = g * f.view().insert_axis(Axis(1));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|d, &s| *d *= s * (1.0 - s));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Silu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| {
                        let s = sigmoid(x);
                        *d *= s * (1.0 + x * (1.0 - s));
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gg = (&g * normed).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dn = &g * self.value(*gain);
                    let d = dn.ncols() as f64;
                    let mean_dn = dn.sum_axis(Axis(1)) / d;
                    let mean_dn_n = (&dn * normed).sum_axis(Axis(1)) / d;
                    let mut gx = dn;
                    for (((mut row, nrow), &m1), (&m2, &is)) in gx
                        .outer_iter_mut()
                        .zip(normed.outer_iter())
                        .zip(&mean_dn)
                        .zip(mean_dn_n.iter().zip(inv_std))
                    {
                        Zip::from(&mut row)
                            .and(&nrow)
                            .for_each(|v, &n| *v = is * (*v - m1 - n * m2));
                    }
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *gain, gg);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gather(a, index) => {
                    let rows = self.value(*a).nrows();
                    let mut ga = Array2::zeros((rows, g.ncols()));
                    for (row, &j) in g.outer_iter().zip(index) {
                        let mut dst = ga.row_mut(j);
                        dst += &row;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ScatterAdd(a, index) => {
                    let mut ga = Array2::zeros((index.len(), g.ncols()));
                    for (mut row, &j) in ga.outer_iter_mut().zip(index) {
                        row.assign(&g.row(j));
                    }
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        (out, input_grads)
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
