//! Minimal reverse-mode gradient engine over dense row-major matrices.
//!
//! A [`Tape`] records every operation applied to its variables. Calling
//! [`Tape::backward`] on a scalar (1×1) node walks the tape in reverse and
//! accumulates adjoints. Only the primitive set the policy updaters need is
//! supported: affine maps, `tanh`, `exp`, `log`, `square`, elementwise
//! `min`, `clip`, plus the linear glue (add, sub, mul, scale, broadcasts
//! and reductions) that composes them.
//!
//! Subgradient conventions: `min(a, b)` routes the adjoint to `a` when
//! `a <= b` and to `b` otherwise; `clip(x, lo, hi)` passes the adjoint
//! through only when `lo <= x <= hi`.

use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Named nonlinear primitives that losses can be built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Affine,
    Tanh,
    Log,
    Exp,
    Min,
    Clip,
    Square,
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(Self::Affine),
            "tanh" => Ok(Self::Tanh),
            "log" => Ok(Self::Log),
            "exp" => Ok(Self::Exp),
            "min" => Ok(Self::Min),
            "clip" => Ok(Self::Clip),
            "square" => Ok(Self::Square),
            other => Err(Error::UnsupportedPrimitive(other.to_string())),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    BroadcastRows(Var),
    SumCols(Var),
    Sum(Var),
    Min(Var, Var),
    Clip {
        x: Var,
        lo: Array2<f64>,
        hi: Array2<f64>,
    },
    Dot(Var, Array2<f64>),
}

/// Recording of a computation for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`; zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }

    /// Concatenate adjoints of `vars` (row-major) into one flat vector.
    pub fn flatten(&self, vars: &[Var]) -> Vec<f64> {
        let mut out = Vec::new();
        for &v in vars {
            match &self.grads[v.0] {
                Some(g) => out.extend(g.iter().copied()),
                None => out.extend(std::iter::repeat_n(
                    0.0,
                    self.shapes[v.0].0 * self.shapes[v.0].1,
                )),
            }
        }
        out
    }
}

/// Row-major `a · b` with a fixed accumulation order per output row, so a
/// row's result does not depend on how many other rows are in the batch.
pub fn matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let (k2, m) = b.dim();
    assert_eq!(k, k2, "matmul inner dimensions");
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let av = a.as_slice().expect("standard layout");
    let bv = b.as_slice().expect("standard layout");
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = av[i * k + p];
            let brow = &bv[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Array2::from_shape_vec((n, m), out).expect("shape")
}

/// `aᵀ · b`.
fn matmul_tn(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let (n2, m) = b.dim();
    assert_eq!(n, n2);
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let av = a.as_slice().expect("standard layout");
    let bv = b.as_slice().expect("standard layout");
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let brow = &bv[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = av[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bij) in out[p * m..(p + 1) * m].iter_mut().zip(brow) {
                *o += aip * bij;
            }
        }
    }
    Array2::from_shape_vec((k, m), out).expect("shape")
}

/// `a · bᵀ`.
fn matmul_nt(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let (m, k2) = b.dim();
    assert_eq!(k, k2);
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let av = a.as_slice().expect("standard layout");
    let bv = b.as_slice().expect("standard layout");
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &av[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &bv[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * m + j] = acc;
        }
    }
    Array2::from_shape_vec((n, m), out).expect("shape")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.values[v.0];
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    /// Input or parameter node. Constants are leaves whose adjoint is ignored.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.leaf(value)
    }

    /// `x · w + b` with `b` a 1×out row broadcast over the rows of `x`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let mut y = matmul(&self.values[x.0], &self.values[w.0]);
        let bias = &self.values[b.0];
        assert_eq!(bias.nrows(), 1, "bias must be a row vector");
        for mut row in y.rows_mut() {
            row += &bias.row(0);
        }
        self.push(y, Op::Affine { x, w, b })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.values[a.0].mapv(f64::tanh);
        self.push(y, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let y = self.values[a.0].mapv(f64::exp);
        self.push(y, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let y = self.values[a.0].mapv(f64::ln);
        self.push(y, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let y = self.values[a.0].mapv(|v| v * v);
        self.push(y, Op::Square(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = &self.values[a.0] + &self.values[b.0];
        self.push(y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = &self.values[a.0] - &self.values[b.0];
        self.push(y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = &self.values[a.0] * &self.values[b.0];
        self.push(y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = &self.values[a.0] * c;
        self.push(y, Op::Scale(a, c))
    }

    /// Repeat a 1×c row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let src = &self.values[a.0];
        assert_eq!(src.nrows(), 1);
        let y = Array2::from_shape_fn((rows, src.ncols()), |(_, j)| src[[0, j]]);
        self.push(y, Op::BroadcastRows(a))
    }

    /// Sum across columns: n×c → n×1.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let src = &self.values[a.0];
        let y = Array2::from_shape_fn((src.nrows(), 1), |(i, _)| src.row(i).sum());
        self.push(y, Op::SumCols(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.values[a.0].sum();
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let y = ndarray::Zip::from(&self.values[a.0])
            .and(&self.values[b.0])
            .map_collect(|&x, &z| if x <= z { x } else { z });
        self.push(y, Op::Min(a, b))
    }

    /// `min(max(x, lo), hi)` with constant, per-element bounds.
    pub fn clip(&mut self, x: Var, lo: Array2<f64>, hi: Array2<f64>) -> Var {
        let y = ndarray::Zip::from(&self.values[x.0])
            .and(&lo)
            .and(&hi)
            .map_collect(|&v, &l, &h| v.max(l).min(h));
        self.push(y, Op::Clip { x, lo, hi })
    }

    /// Scalar clip with the same bounds for every element.
    pub fn clip_scalar(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let shape = self.values[x.0].dim();
        self.clip(
            x,
            Array2::from_elem(shape, lo),
            Array2::from_elem(shape, hi),
        )
    }

    /// `Σ c ⊙ a` for a constant coefficient matrix `c`.
    pub fn dot_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        let s = (&self.values[a.0] * &c).sum();
        self.push(Array2::from_elem((1, 1), s), Op::Dot(a, c))
    }

    /// Apply a primitive by value. Arity: `affine` takes (x, w, b), `min`
    /// takes two operands, everything else one. `clip` is applied to the
    /// unit interval when called this way; use [`Tape::clip`] for bounds.
    pub fn apply(&mut self, prim: Primitive, args: &[Var]) -> Result<Var> {
        let arity = match prim {
            Primitive::Affine => 3,
            Primitive::Min => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::Config(format!(
                "primitive {prim:?} takes {arity} operands, got {}",
                args.len()
            )));
        }
        Ok(match prim {
            Primitive::Affine => self.affine(args[0], args[1], args[2]),
            Primitive::Tanh => self.tanh(args[0]),
            Primitive::Log => self.log(args[0]),
            Primitive::Exp => self.exp(args[0]),
            Primitive::Min => self.min(args[0], args[1]),
            Primitive::Clip => self.clip_scalar(args[0], 0.0, 1.0),
            Primitive::Square => self.square(args[0]),
        })
    }

    /// Build a node from a primitive name; unknown names are rejected
    /// before anything is recorded.
    pub fn apply_named(&mut self, name: &str, args: &[Var]) -> Result<Var> {
        let prim: Primitive = name.parse()?;
        self.apply(prim, args)
    }

    /// Reverse sweep from the scalar node `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        let n = self.values.len();
        let shapes: Vec<_> = self.values.iter().map(|v| v.dim()).collect();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        assert_eq!(shapes[out.0], (1, 1), "backward requires a scalar output");
        grads[out.0] = Some(Array2::from_elem((1, 1), 1.0));

        fn accum(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.ops[idx] {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Affine { x, w, b } => {
                    let dx = matmul_nt(&g, &self.values[w.0]);
                    let dw = matmul_tn(&self.values[x.0], &g);
                    let db = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
                    accum(&mut grads, *x, dx);
                    accum(&mut grads, *w, dw);
                    accum(&mut grads, *b, db);
                }
                Op::Tanh(a) => {
                    let y = &self.values[idx];
                    let d = ndarray::Zip::from(&g)
                        .and(y)
                        .map_collect(|&g, &y| g * (1.0 - y * y));
                    accum(&mut grads, *a, d);
                }
                Op::Exp(a) => {
                    let d = &g * &self.values[idx];
                    accum(&mut grads, *a, d);
                }
                Op::Log(a) => {
                    let d = &g / &self.values[a.0];
                    accum(&mut grads, *a, d);
                }
                Op::Square(a) => {
                    let d = &g * &self.values[a.0] * 2.0;
                    accum(&mut grads, *a, d);
                }
                Op::Add(a, b) => {
                    accum(&mut grads, *a, g.clone());
                    accum(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accum(&mut grads, *b, -&g);
                    accum(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.values[b.0];
                    let db = &g * &self.values[a.0];
                    accum(&mut grads, *a, da);
                    accum(&mut grads, *b, db);
                }
                Op::Scale(a, c) => accum(&mut grads, *a, &g * *c),
                Op::BroadcastRows(a) => {
                    let d = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
                    accum(&mut grads, *a, d);
                }
                Op::SumCols(a) => {
                    let cols = shapes[a.0].1;
                    let d = Array2::from_shape_fn((g.nrows(), cols), |(i, _)| g[[i, 0]]);
                    accum(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let d = Array2::from_elem(shapes[a.0], g[[0, 0]]);
                    accum(&mut grads, *a, d);
                }
                Op::Min(a, b) => {
                    let av = &self.values[a.0];
                    let bv = &self.values[b.0];
                    let da = ndarray::Zip::from(&g)
                        .and(av)
                        .and(bv)
                        .map_collect(|&g, &x, &z| if x <= z { g } else { 0.0 });
                    let db = ndarray::Zip::from(&g)
                        .and(av)
                        .and(bv)
                        .map_collect(|&g, &x, &z| if x <= z { 0.0 } else { g });
                    accum(&mut grads, *a, da);
                    accum(&mut grads, *b, db);
                }
                Op::Clip { x, lo, hi } => {
                    let d = ndarray::Zip::from(&g)
                        .and(&self.values[x.0])
                        .and(lo)
                        .and(hi)
                        .map_collect(|&g, &v, &l, &h| if v >= l && v <= h { g } else { 0.0 });
                    accum(&mut grads, *x, d);
                }
                Op::Dot(a, c) => {
                    let d = c * g[[0, 0]];
                    accum(&mut grads, *a, d);
                }
            }
        }
        Gradients { grads, shapes }
    }
}
