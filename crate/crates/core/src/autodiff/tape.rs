//! Define-by-run reverse-mode differentiation over matrix operations.
//!
//! A [`Tape`] is rebuilt on every forward pass; nodes are appended in
//! evaluation order, so the node list is already a topological order and the
//! backward sweep is a single reverse iteration. A tape is single-threaded;
//! independent tapes on independent threads do not interact.

use std::collections::HashMap;

use crate::autodiff::{ParamId, ParamStore, Transform};
use crate::error::{Error, Result};
use crate::numerics::{
    cholesky_lower_unchecked, jittered_cholesky, solve_lower, solve_lower_transpose, softplus,
    softplus_grad, LowerTriangular, Matrix,
};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Guard inside the arccos adjoint denominator; keeps the derivative finite
/// when the argument sits on the clamp boundary.
const ACOS_GUARD: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Matmul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    Neg(Var),
    Sin(Var),
    Cos(Var),
    Arccos(Var),
    ReduceSum(Var),
    ReduceMean(Var),
    Cholesky(Var),
    SolveLower(Var, Var),
    SolveUpper(Var, Var),
    LogDetFromChol(Var),
    TrilStrict(Var),
    DiagEmbed(Var),
    ConcatCols(Vec<Var>),
}

struct Node {
    op: Op,
    value: Matrix,
}

/// Counters recorded while building a graph; surfaced in training reports.
#[derive(Debug, Clone, Copy, Default)]
pub struct TapeDiagnostics {
    /// Entries of predicted marginal variance that had to be clipped up to
    /// the variance floor.
    pub variance_clips: u64,
    /// Largest diagonal jitter any factorization on this tape needed.
    pub max_jitter: f64,
}

/// Gradients of one scalar root with respect to every reachable parameter.
pub struct Gradients {
    by_param: HashMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.by_param.get(&id)
    }

    /// Adds these gradients into the store's gradient slots.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (&id, g) in &self.by_param {
            store.accumulate_grad(id, g);
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    pub diagnostics: TapeDiagnostics,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::scalar(value))
    }

    /// Puts a parameter's constrained view on the tape. The unconstrained
    /// leaf receives the gradient, with the transform's chain-rule factor
    /// applied automatically.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let leaf = self.push(Op::Param(id), p.value().clone());
        match p.transform() {
            Transform::Identity => leaf,
            Transform::SoftplusPositive => self.softplus(leaf),
        }
    }

    // --- elementwise binary ops with numpy-style broadcasting ---

    fn broadcast_shape(&self, a: Var, b: Var, what: &str) -> (usize, usize) {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        let rows = match (ra, rb) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("{what}: rows {ra} vs {rb} do not broadcast"),
        };
        let cols = match (ca, cb) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("{what}: cols {ca} vs {cb} do not broadcast"),
        };
        (rows, cols)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.broadcast_op(a, b, "add", |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.broadcast_op(a, b, "sub", |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.broadcast_op(a, b, "mul", |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.broadcast_op(a, b, "div", |x, y| x / y);
        self.push(Op::Div(a, b), v)
    }

    fn broadcast_op(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (rows, cols) = self.broadcast_shape(a, b, what);
        let ma = self.value(a);
        let mb = self.value(b);
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let ia = if ma.rows() == 1 { 0 } else { i };
            let ib = if mb.rows() == 1 { 0 } else { i };
            for j in 0..cols {
                let ja = if ma.cols() == 1 { 0 } else { j };
                let jb = if mb.cols() == 1 { 0 } else { j };
                out.set(i, j, f(ma.get(ia, ja), mb.get(ib, jb)));
            }
        }
        out
    }

    // --- structural ops ---

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::Matmul(a, b), v)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    /// Zeroes the diagonal and everything above it.
    pub fn tril_strict(&mut self, a: Var) -> Var {
        let m = self.value(a);
        assert_eq!(m.rows(), m.cols(), "tril_strict needs a square matrix");
        let mut v = m.clone();
        for i in 0..v.rows() {
            for j in i..v.cols() {
                v.set(i, j, 0.0);
            }
        }
        self.push(Op::TrilStrict(a), v)
    }

    /// Joins equal-height blocks side by side. A single block is returned
    /// unchanged.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols needs at least one block");
        if parts.len() == 1 {
            return parts[0];
        }
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols blocks must share height");
            for i in 0..rows {
                for j in 0..m.cols() {
                    v.set(i, offset + j, m.get(i, j));
                }
            }
            offset += m.cols();
        }
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    /// Builds an `M x M` diagonal matrix from an `M x 1` column.
    pub fn diag_embed(&mut self, a: Var) -> Var {
        let m = self.value(a);
        assert_eq!(m.cols(), 1, "diag_embed expects a column vector");
        let n = m.rows();
        let mut v = Matrix::zeros(n, n);
        for i in 0..n {
            v.set(i, i, m.get(i, 0));
        }
        self.push(Op::DiagEmbed(a), v)
    }

    // --- elementwise unary ops ---

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(Op::Neg(a), v)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sin);
        self.push(Op::Sin(a), v)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::cos);
        self.push(Op::Cos(a), v)
    }

    /// `arccos` with the argument clamped into `[-1, 1]`. The derivative is
    /// zero in the clamped region and guarded near the boundary, which is
    /// what keeps kernels built on angles differentiable at coincident
    /// inputs.
    pub fn arccos(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.clamp(-1.0, 1.0).acos());
        self.push(Op::Arccos(a), v)
    }

    // --- reductions ---

    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(Op::ReduceSum(a), v)
    }

    pub fn reduce_mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        assert!(!m.is_empty(), "reduce_mean over an empty matrix");
        let v = Matrix::scalar(m.sum() / m.len() as f64);
        self.push(Op::ReduceMean(a), v)
    }

    // --- factorization ops ---

    /// Cholesky factor of a symmetric positive definite input. Reads the
    /// lower triangle of the input only; gradients land on the lower
    /// triangle accordingly.
    pub fn cholesky(&mut self, a: Var) -> Result<Var> {
        let l = cholesky_lower_unchecked(self.value(a))?;
        Ok(self.push(Op::Cholesky(a), l.into_matrix()))
    }

    /// Probes the jitter schedule against the current forward value, then
    /// records `chol(A + jitter*I)` on the tape. Returns the factor and the
    /// jitter used; the jitter itself is treated as a constant.
    pub fn jittered_cholesky(&mut self, a: Var) -> Result<(Var, f64)> {
        let (_, jitter) = jittered_cholesky(self.value(a))?;
        let n = self.value(a).rows();
        let eye = self.constant(Matrix::identity(n).scale(jitter));
        let shifted = self.add(a, eye);
        let l = self.cholesky(shifted)?;
        if jitter > self.diagnostics.max_jitter {
            self.diagnostics.max_jitter = jitter;
        }
        Ok((l, jitter))
    }

    /// Solves `L X = B` where `l` is lower triangular.
    pub fn solve_lower(&mut self, l: Var, b: Var) -> Var {
        let lt = LowerTriangular::from_matrix(self.value(l).clone());
        let x = solve_lower(&lt, self.value(b)).expect("solve_lower shape mismatch");
        self.push(Op::SolveLower(l, b), x)
    }

    /// Solves `L^T X = B` where `l` is lower triangular (an upper solve
    /// against the transposed factor, no explicit transpose taken).
    pub fn solve_upper(&mut self, l: Var, b: Var) -> Var {
        let lt = LowerTriangular::from_matrix(self.value(l).clone());
        let x = solve_lower_transpose(&lt, self.value(b)).expect("solve_upper shape mismatch");
        self.push(Op::SolveUpper(l, b), x)
    }

    /// `2 * sum(ln diag(L))` for a lower-triangular factor.
    pub fn log_det_from_chol(&mut self, l: Var) -> Var {
        let m = self.value(l);
        let v = Matrix::scalar(m.diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0);
        self.push(Op::LogDetFromChol(l), v)
    }

    // --- convenience builders ---

    /// Column vector of row sums, as `matmul(a, ones)`.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let ones = self.constant(Matrix::filled(self.shape(a).1, 1, 1.0));
        self.matmul(a, ones)
    }

    /// Row vector of column sums, as `matmul(ones, a)`.
    pub fn col_sums(&mut self, a: Var) -> Var {
        let ones = self.constant(Matrix::filled(1, self.shape(a).0, 1.0));
        self.matmul(ones, a)
    }

    /// `a * s` for a scalar constant.
    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let c = self.scalar(s);
        self.mul(a, c)
    }

    /// `a + s` for a scalar constant.
    pub fn shift(&mut self, a: Var, s: f64) -> Var {
        let c = self.scalar(s);
        self.add(a, c)
    }

    /// Elementwise `max(a, floor)` built from relu; counts how many entries
    /// were below the floor into the diagnostics.
    pub fn floor_at(&mut self, a: Var, floor: f64) -> Var {
        let clipped = self
            .value(a)
            .data()
            .iter()
            .filter(|&&x| x < floor)
            .count() as u64;
        self.diagnostics.variance_clips += clipped;
        let shifted = self.shift(a, -floor);
        let relu = self.relu(shifted);
        self.shift(relu, floor)
    }

    /// Returns `Err(NonFinite)` when the node's forward value contains a
    /// NaN or infinity.
    pub fn ensure_finite(&self, v: Var, op: &'static str) -> Result<()> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    // --- backward ---

    /// Reverse sweep from a scalar root. Returns the gradients of every
    /// parameter the root depends on; unreachable parameters are absent.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let (r, c) = self.shape(root);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarRoot { rows: r, cols: c });
        }
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(Matrix::scalar(1.0));

        let mut by_param: HashMap<ParamId, Matrix> = HashMap::new();

        for idx in (0..=root.0).rev() {
            let g = match adj[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match self.nodes[idx].op.clone() {
                Op::Constant => {}
                Op::Param(id) => {
                    by_param
                        .entry(id)
                        .and_modify(|acc| *acc = acc.add(&g))
                        .or_insert(g);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut adj, a, self.reduce_to(&g, self.shape(a)));
                    self.accumulate(&mut adj, b, self.reduce_to(&g, self.shape(b)));
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut adj, a, self.reduce_to(&g, self.shape(a)));
                    self.accumulate(&mut adj, b, self.reduce_to(&g.scale(-1.0), self.shape(b)));
                }
                Op::Mul(a, b) => {
                    let da = self.broadcast_grad(&g, b, self.shape(a), |g, other| g * other);
                    let db = self.broadcast_grad(&g, a, self.shape(b), |g, other| g * other);
                    self.accumulate(&mut adj, a, da);
                    self.accumulate(&mut adj, b, db);
                }
                Op::Div(a, b) => {
                    // d(a/b)/da = 1/b ; d(a/b)/db = -a/b^2
                    let da = self.broadcast_grad(&g, b, self.shape(a), |g, bv| g / bv);
                    let ga = self.broadcast_pair(&g, a, b, |g, av, bv| -g * av / (bv * bv));
                    let db = self.reduce_to(&ga, self.shape(b));
                    self.accumulate(&mut adj, a, da);
                    self.accumulate(&mut adj, b, db);
                }
                Op::Matmul(a, b) => {
                    let da = g.matmul(&self.value(b).transpose());
                    let db = self.value(a).transpose().matmul(&g);
                    self.accumulate(&mut adj, a, da);
                    self.accumulate(&mut adj, b, db);
                }
                Op::Transpose(a) => {
                    self.accumulate(&mut adj, a, g.transpose());
                }
                Op::Relu(a) => {
                    let d = self.value(a).zip_map(&g, |x, g| if x > 0.0 { g } else { 0.0 });
                    self.accumulate(&mut adj, a, d);
                }
                Op::Softplus(a) => {
                    let d = self.value(a).zip_map(&g, |x, g| g * softplus_grad(x));
                    self.accumulate(&mut adj, a, d);
                }
                Op::Exp(a) => {
                    let d = self.nodes[idx].value.zip_map(&g, |y, g| g * y);
                    self.accumulate(&mut adj, a, d);
                }
                Op::Log(a) => {
                    let d = self.value(a).zip_map(&g, |x, g| g / x);
                    self.accumulate(&mut adj, a, d);
                }
                Op::Square(a) => {
                    let d = self.value(a).zip_map(&g, |x, g| 2.0 * g * x);
                    self.accumulate(&mut adj, a, d);
                }
                Op::Sqrt(a) => {
                    let d = self.nodes[idx].value.zip_map(&g, |y, g| g / (2.0 * y));
                    self.accumulate(&mut adj, a, d);
                }
                Op::Neg(a) => {
                    self.accumulate(&mut adj, a, g.scale(-1.0));
                }
                Op::Sin(a) => {
                    let d = self.value(a).zip_map(&g, |x, g| g * x.cos());
                    self.accumulate(&mut adj, a, d);
                }
                Op::Cos(a) => {
                    let d = self.value(a).zip_map(&g, |x, g| -g * x.sin());
                    self.accumulate(&mut adj, a, d);
                }
                Op::Arccos(a) => {
                    let d = self.value(a).zip_map(&g, |x, g| {
                        if x.abs() >= 1.0 {
                            0.0
                        } else {
                            -g / (1.0 - x * x).max(ACOS_GUARD).sqrt()
                        }
                    });
                    self.accumulate(&mut adj, a, d);
                }
                Op::ReduceSum(a) => {
                    let (r, c) = self.shape(a);
                    self.accumulate(&mut adj, a, Matrix::filled(r, c, g.scalar_value()));
                }
                Op::ReduceMean(a) => {
                    let (r, c) = self.shape(a);
                    let scale = g.scalar_value() / (r * c) as f64;
                    self.accumulate(&mut adj, a, Matrix::filled(r, c, scale));
                }
                Op::Cholesky(a) => {
                    let l = LowerTriangular::from_matrix(self.nodes[idx].value.clone());
                    self.accumulate(&mut adj, a, cholesky_adjoint(&l, &g));
                }
                Op::SolveLower(lv, bv) => {
                    // X = L^{-1} B:  dB = L^{-T} dX,  dL = -tril(dB X^T)
                    let l = LowerTriangular::from_matrix(self.value(lv).clone());
                    let x = &self.nodes[idx].value;
                    let db = solve_lower_transpose(&l, &g).expect("adjoint solve");
                    let mut dl = db.matmul(&x.transpose()).scale(-1.0);
                    mask_lower(&mut dl);
                    self.accumulate(&mut adj, lv, dl);
                    self.accumulate(&mut adj, bv, db);
                }
                Op::SolveUpper(lv, bv) => {
                    // X = L^{-T} B:  dB = L^{-1} dX,  dL = -tril(X dB^T)
                    let l = LowerTriangular::from_matrix(self.value(lv).clone());
                    let x = &self.nodes[idx].value;
                    let db = solve_lower(&l, &g).expect("adjoint solve");
                    let mut dl = x.matmul(&db.transpose()).scale(-1.0);
                    mask_lower(&mut dl);
                    self.accumulate(&mut adj, lv, dl);
                    self.accumulate(&mut adj, bv, db);
                }
                Op::LogDetFromChol(lv) => {
                    let l = &self.value(lv);
                    let n = l.rows();
                    let gs = g.scalar_value();
                    let mut d = Matrix::zeros(n, n);
                    for i in 0..n {
                        d.set(i, i, 2.0 * gs / l.get(i, i));
                    }
                    self.accumulate(&mut adj, lv, d);
                }
                Op::TrilStrict(a) => {
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        for j in i..d.cols() {
                            d.set(i, j, 0.0);
                        }
                    }
                    self.accumulate(&mut adj, a, d);
                }
                Op::DiagEmbed(a) => {
                    let n = self.shape(a).0;
                    let mut d = Matrix::zeros(n, 1);
                    for i in 0..n {
                        d.set(i, 0, g.get(i, i));
                    }
                    self.accumulate(&mut adj, a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in &parts {
                        let (rows, cols) = self.shape(p);
                        let mut d = Matrix::zeros(rows, cols);
                        for i in 0..rows {
                            for j in 0..cols {
                                d.set(i, j, g.get(i, offset + j));
                            }
                        }
                        self.accumulate(&mut adj, p, d);
                        offset += cols;
                    }
                }
            }
        }
        Ok(Gradients { by_param })
    }

    fn accumulate(&self, adj: &mut [Option<Matrix>], v: Var, delta: Matrix) {
        match &mut adj[v.0] {
            Some(existing) => *existing = existing.add(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Sums a full-shape gradient down to an operand's (possibly broadcast)
    /// shape.
    fn reduce_to(&self, g: &Matrix, target: (usize, usize)) -> Matrix {
        let (tr, tc) = target;
        if g.shape() == target {
            return g.clone();
        }
        let mut out = Matrix::zeros(tr, tc);
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let ti = if tr == 1 { 0 } else { i };
                let tj = if tc == 1 { 0 } else { j };
                out.set(ti, tj, out.get(ti, tj) + g.get(i, j));
            }
        }
        out
    }

    /// Gradient of a broadcast binary op with respect to one operand:
    /// combine the output gradient with the *other* operand (broadcast to
    /// the output shape), then reduce to the operand's shape.
    fn broadcast_grad(
        &self,
        g: &Matrix,
        other: Var,
        target: (usize, usize),
        f: impl Fn(f64, f64) -> f64,
    ) -> Matrix {
        let mo = self.value(other);
        let mut full = Matrix::zeros(g.rows(), g.cols());
        for i in 0..g.rows() {
            let io = if mo.rows() == 1 { 0 } else { i };
            for j in 0..g.cols() {
                let jo = if mo.cols() == 1 { 0 } else { j };
                full.set(i, j, f(g.get(i, j), mo.get(io, jo)));
            }
        }
        self.reduce_to(&full, target)
    }

    /// Like `broadcast_grad` but combining with both operands.
    fn broadcast_pair(
        &self,
        g: &Matrix,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Matrix {
        let ma = self.value(a);
        let mb = self.value(b);
        let mut full = Matrix::zeros(g.rows(), g.cols());
        for i in 0..g.rows() {
            let ia = if ma.rows() == 1 { 0 } else { i };
            let ib = if mb.rows() == 1 { 0 } else { i };
            for j in 0..g.cols() {
                let ja = if ma.cols() == 1 { 0 } else { j };
                let jb = if mb.cols() == 1 { 0 } else { j };
                full.set(i, j, f(g.get(i, j), ma.get(ia, ja), mb.get(ib, jb)));
            }
        }
        full
    }
}

fn mask_lower(m: &mut Matrix) {
    for i in 0..m.rows() {
        for j in (i + 1)..m.cols() {
            m.set(i, j, 0.0);
        }
    }
}

/// Adjoint of the Cholesky factorization under the "lower triangle read"
/// convention: the forward pass uses only `tril(A)`, so the whole
/// sensitivity of each symmetric off-diagonal pair lands on the lower entry.
///
/// With `G = L^{-T} Phi(L^T Lbar) L^{-1}` (Phi keeps the lower triangle and
/// halves the diagonal), the gradient is `tril(G + G^T)` with the diagonal
/// replaced by `diag(G)`.
fn cholesky_adjoint(l: &LowerTriangular, lbar: &Matrix) -> Matrix {
    let n = l.dim();
    let mut p = l.as_matrix().transpose().matmul(lbar);
    for i in 0..n {
        p.set(i, i, 0.5 * p.get(i, i));
        for j in (i + 1)..n {
            p.set(i, j, 0.0);
        }
    }
    let w = solve_lower_transpose(l, &p).expect("cholesky adjoint solve");
    let g = solve_lower_transpose(l, &w.transpose())
        .expect("cholesky adjoint solve")
        .transpose();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        out.set(i, i, g.get(i, i));
        for j in 0..i {
            out.set(i, j, g.get(i, j) + g.get(j, i));
        }
    }
    out
}
