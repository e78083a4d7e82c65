use std::ops::Range;

use ndarray::{concatenate, s, Array2, Axis};

use super::tape::{Op, Tape, Var};
use super::{DiffError, Result};

fn mismatch(op: &'static str, a: (usize, usize), b: (usize, usize)) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        left: a,
        right: b,
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inv(y: f64) -> f64 {
    // ln(e^y - 1), written to stay finite for large y
    y + (-(-y).exp_m1()).ln()
}

impl Tape {
    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Array2<f64>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() == vb.dim() {
            Ok(ndarray::Zip::from(va).and(vb).map_collect(|&x, &y| f(x, y)))
        } else if vb.dim() == (1, 1) {
            let y = vb[[0, 0]];
            Ok(va.mapv(|x| f(x, y)))
        } else if va.dim() == (1, 1) {
            let x = va[[0, 0]];
            Ok(vb.mapv(|y| f(x, y)))
        } else {
            Err(mismatch(name, va.dim(), vb.dim()))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product (a `1×1` operand broadcasts).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(mismatch("matmul", va.dim(), vb.dim()));
        }
        let v = va.dot(vb);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `x Wᵀ + b` for a batch `x` (n×in), weight `W` (out×in) and bias row `b` (1×out).
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let (vw, vx, vb) = (self.value(w), self.value(x), self.value(b));
        if vx.ncols() != vw.ncols() {
            return Err(mismatch("affine", vw.dim(), vx.dim()));
        }
        if vb.dim() != (1, vw.nrows()) {
            return Err(mismatch("affine", vw.dim(), vb.dim()));
        }
        let mut v = vx.dot(&vw.t());
        v += vb;
        Ok(self.push(v, Op::Affine { w, x, b }))
    }

    /// Adds a `1×c` row to every row of an `r×c` matrix.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (vm, vr) = (self.value(m), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != vm.ncols() {
            return Err(mismatch("add_row", vm.dim(), vr.dim()));
        }
        let v = vm + vr;
        Ok(self.push(v, Op::AddRow(m, row)))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if let Some(bad) = va.iter().find(|x| !(**x > 0.0)) {
            return Err(DiffError::Domain {
                op: "log",
                detail: format!("non-positive argument {bad}"),
            });
        }
        let v = va.mapv(f64::ln);
        Ok(self.push(v, Op::Log(a)))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if let Some(bad) = va.iter().find(|x| !(**x > 0.0)) {
            return Err(DiffError::Domain {
                op: "sqrt",
                detail: format!("non-positive argument {bad}"),
            });
        }
        let v = va.mapv(f64::sqrt);
        Ok(self.push(v, Op::Sqrt(a)))
    }

    /// Sum of all entries, as a `1×1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let v = Array2::from_elem((1, 1), va.sum() / va.len() as f64);
        self.push(v, Op::Mean(a))
    }

    /// Per-row sums: `r×c → r×1`.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::RowSums(a))
    }

    /// Concatenation along `axis` (0 stacks rows, 1 stacks columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(DiffError::InvalidArgument {
                op: "concat",
                detail: format!("{} parts along axis {axis}", parts.len()),
            });
        }
        let first = self.shape(parts[0]);
        for p in &parts[1..] {
            let sh = self.shape(*p);
            let ok = if axis == 0 {
                sh.1 == first.1
            } else {
                sh.0 == first.0
            };
            if !ok {
                return Err(mismatch("concat", first, sh));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(axis), &views).expect("shapes checked");
        Ok(self.push(
            v,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn slice(&mut self, a: Var, rows: Range<usize>, cols: Range<usize>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if rows.end > r || cols.end > c || rows.start > rows.end || cols.start > cols.end {
            return Err(DiffError::InvalidArgument {
                op: "slice",
                detail: format!("rows {rows:?} cols {cols:?} out of bounds for {r}x{c}"),
            });
        }
        let v = self
            .value(a)
            .slice(s![rows.clone(), cols.clone()])
            .to_owned();
        Ok(self.push(v, Op::Slice { src: a, rows, cols }))
    }

    /// Selects rows by index (repetition allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, _) = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&j| j >= r) {
            return Err(DiffError::InvalidArgument {
                op: "gather_rows",
                detail: format!("row {bad} out of bounds for {r} rows"),
            });
        }
        let v = self.value(a).select(Axis(0), idx);
        Ok(self.push(
            v,
            Op::GatherRows {
                src: a,
                idx: idx.to_vec(),
            },
        ))
    }

    /// `max(x, c)` elementwise; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x.max(c));
        self.push(v, Op::ClampMin(a, c))
    }
}
