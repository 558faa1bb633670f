//! Problem description for small block-structured conic programs.
//!
//! A [`ConicProblem`] has a linear objective over a list of PSD blocks
//! (real symmetric or complex Hermitian) and a list of scalars
//! (nonnegative or free), subject to linear constraints of the form
//! `<expr> (<=|=|>=) bound`.
//!
//! Inner products follow the usual trace convention: for a block coefficient
//! `C` and block variable `X`, the contribution is `Tr(C X)`. A sparse entry
//! `(row, col, v)` with `row != col` sets both `C[row][col] = v` and the
//! mirrored `C[col][row] = conj(v)`, so it contributes `2 Re(conj(v) X[row][col])`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::ConicError;

/// Handle to a PSD block inside a [`ConicProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockId(pub(crate) usize);

/// Handle to a scalar variable inside a [`ConicProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScalarId(pub(crate) usize);

impl BlockId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl ScalarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Real symmetric `n x n` block.
    Symmetric(usize),
    /// Complex Hermitian `n x n` block, solved through its real `2n x 2n` embedding.
    Hermitian(usize),
}

impl BlockKind {
    /// Dimension of the block as seen by the user.
    pub fn dim(self) -> usize {
        match self {
            BlockKind::Symmetric(n) | BlockKind::Hermitian(n) => n,
        }
    }

    /// Dimension of the real symmetric block handed to the solver.
    pub fn real_dim(self) -> usize {
        match self {
            BlockKind::Symmetric(n) => n,
            BlockKind::Hermitian(n) => 2 * n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    NonNegative,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// One term of a block coefficient.
#[derive(Debug, Clone)]
pub enum BlockTerm {
    /// Sparse entry; see the module docs for the mirroring convention.
    Entry { row: usize, col: usize, value: Complex64 },
    /// `weight * v v^H`.
    RankOne { weight: f64, vector: DVector<Complex64> },
    /// Full coefficient matrix (symmetric or Hermitian).
    Dense(DMatrix<Complex64>),
}

/// A linear functional over all blocks and scalars.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    pub(crate) block_terms: Vec<(BlockId, BlockTerm)>,
    pub(crate) scalar_terms: Vec<(ScalarId, f64)>,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(mut self, block: BlockId, row: usize, col: usize, value: f64) -> Self {
        self.add_entry(block, row, col, Complex64::new(value, 0.0));
        self
    }

    pub fn scalar(mut self, id: ScalarId, coef: f64) -> Self {
        self.add_scalar(id, coef);
        self
    }

    pub fn add_entry(&mut self, block: BlockId, row: usize, col: usize, value: Complex64) {
        self.block_terms.push((block, BlockTerm::Entry { row, col, value }));
    }

    pub fn add_rank_one(&mut self, block: BlockId, weight: f64, vector: DVector<Complex64>) {
        self.block_terms
            .push((block, BlockTerm::RankOne { weight, vector }));
    }

    pub fn add_dense(&mut self, block: BlockId, matrix: DMatrix<Complex64>) {
        self.block_terms.push((block, BlockTerm::Dense(matrix)));
    }

    pub fn add_dense_real(&mut self, block: BlockId, matrix: &DMatrix<f64>) {
        self.add_dense(block, matrix.map(|v| Complex64::new(v, 0.0)));
    }

    pub fn add_scalar(&mut self, id: ScalarId, coef: f64) {
        self.scalar_terms.push((id, coef));
    }

    pub fn is_empty(&self) -> bool {
        self.block_terms.is_empty() && self.scalar_terms.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub expr: LinExpr,
    pub relation: Relation,
    pub bound: f64,
}

/// A conic program in the block format described in the module docs.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub(crate) sense: Sense,
    pub(crate) blocks: Vec<BlockKind>,
    pub(crate) scalars: Vec<ScalarKind>,
    pub(crate) objective: LinExpr,
    pub(crate) constraints: Vec<Constraint>,
}

impl ConicProblem {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            blocks: Vec::new(),
            scalars: Vec::new(),
            objective: LinExpr::new(),
            constraints: Vec::new(),
        }
    }

    pub fn maximize() -> Self {
        Self::new(Sense::Maximize)
    }

    pub fn minimize() -> Self {
        Self::new(Sense::Minimize)
    }

    pub fn add_symmetric_block(&mut self, n: usize) -> BlockId {
        self.blocks.push(BlockKind::Symmetric(n));
        BlockId(self.blocks.len() - 1)
    }

    pub fn add_hermitian_block(&mut self, n: usize) -> BlockId {
        self.blocks.push(BlockKind::Hermitian(n));
        BlockId(self.blocks.len() - 1)
    }

    pub fn add_scalar(&mut self, kind: ScalarKind) -> ScalarId {
        self.scalars.push(kind);
        ScalarId(self.scalars.len() - 1)
    }

    pub fn set_objective(&mut self, expr: LinExpr) {
        self.objective = expr;
    }

    pub fn add_constraint(&mut self, expr: LinExpr, relation: Relation, bound: f64) -> usize {
        self.constraints.push(Constraint {
            expr,
            relation,
            bound,
        });
        self.constraints.len() - 1
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn blocks(&self) -> &[BlockKind] {
        &self.blocks
    }

    pub fn scalars(&self) -> &[ScalarKind] {
        &self.scalars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    /// Checks dimensions, index ranges and symmetry of every coefficient.
    pub fn validate(&self) -> Result<(), ConicError> {
        if self.constraints.is_empty() {
            return Err(ConicError::Malformed("problem has no constraints".into()));
        }
        self.validate_expr(&self.objective, "objective")?;
        for (i, c) in self.constraints.iter().enumerate() {
            self.validate_expr(&c.expr, &format!("constraint {i}"))?;
            if !c.bound.is_finite() {
                return Err(ConicError::Malformed(format!(
                    "constraint {i} has a non-finite bound"
                )));
            }
        }
        Ok(())
    }

    fn validate_expr(&self, expr: &LinExpr, what: &str) -> Result<(), ConicError> {
        for (id, coef) in &expr.scalar_terms {
            if id.0 >= self.scalars.len() {
                return Err(ConicError::Malformed(format!("{what}: unknown scalar {}", id.0)));
            }
            if !coef.is_finite() {
                return Err(ConicError::Malformed(format!("{what}: non-finite coefficient")));
            }
        }
        for (id, term) in &expr.block_terms {
            let kind = *self
                .blocks
                .get(id.0)
                .ok_or_else(|| ConicError::Malformed(format!("{what}: unknown block {}", id.0)))?;
            let n = kind.dim();
            let real_only = matches!(kind, BlockKind::Symmetric(_));
            match term {
                BlockTerm::Entry { row, col, value } => {
                    if *row >= n || *col >= n {
                        return Err(ConicError::Malformed(format!(
                            "{what}: entry ({row},{col}) outside block of size {n}"
                        )));
                    }
                    if (real_only || row == col) && value.im != 0.0 {
                        return Err(ConicError::Malformed(format!(
                            "{what}: complex value on a real/diagonal entry"
                        )));
                    }
                }
                BlockTerm::RankOne { vector, weight } => {
                    if vector.len() != n || !weight.is_finite() {
                        return Err(ConicError::Malformed(format!(
                            "{what}: rank-one term has wrong length or weight"
                        )));
                    }
                    if real_only && vector.iter().any(|v| v.im != 0.0) {
                        return Err(ConicError::Malformed(format!(
                            "{what}: complex vector on a symmetric block"
                        )));
                    }
                }
                BlockTerm::Dense(m) => {
                    if m.nrows() != n || m.ncols() != n {
                        return Err(ConicError::Malformed(format!(
                            "{what}: dense coefficient has wrong shape"
                        )));
                    }
                    let scale = m.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
                    for i in 0..n {
                        for j in 0..n {
                            if (m[(i, j)] - m[(j, i)].conj()).norm() > 1e-12 * scale {
                                return Err(ConicError::Malformed(format!(
                                    "{what}: dense coefficient is not symmetric/Hermitian"
                                )));
                            }
                            if real_only && m[(i, j)].im != 0.0 {
                                return Err(ConicError::Malformed(format!(
                                    "{what}: complex coefficient on a symmetric block"
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Evaluates a linear expression at a point given in user coordinates.
    pub fn evaluate(
        &self,
        expr: &LinExpr,
        blocks: &[DMatrix<Complex64>],
        scalars: &[f64],
    ) -> f64 {
        let mut acc = 0.0;
        for (id, term) in &expr.block_terms {
            let x = &blocks[id.0];
            acc += match term {
                BlockTerm::Entry { row, col, value } => {
                    if row == col {
                        value.re * x[(*row, *row)].re
                    } else {
                        2.0 * (value.conj() * x[(*row, *col)]).re
                    }
                }
                BlockTerm::RankOne { weight, vector } => {
                    weight * (vector.adjoint() * x * vector)[(0, 0)].re
                }
                BlockTerm::Dense(c) => (c * x).trace().re,
            };
        }
        for (id, coef) in &expr.scalar_terms {
            acc += coef * scalars[id.0];
        }
        acc
    }

    /// Dense real coefficient matrix of `expr` on `block`, in the solver's real coordinates.
    pub fn real_coefficient(&self, expr: &LinExpr, block: BlockId) -> DMatrix<f64> {
        let kind = self.blocks[block.0];
        let n = kind.dim();
        let mut c = DMatrix::<Complex64>::zeros(n, n);
        for (id, term) in &expr.block_terms {
            if *id != block {
                continue;
            }
            match term {
                BlockTerm::Entry { row, col, value } => {
                    if row == col {
                        c[(*row, *row)] += *value;
                    } else {
                        c[(*row, *col)] += *value;
                        c[(*col, *row)] += value.conj();
                    }
                }
                BlockTerm::RankOne { weight, vector } => {
                    c += (vector * vector.adjoint()) * Complex64::new(*weight, 0.0);
                }
                BlockTerm::Dense(m) => c += m,
            }
        }
        match kind {
            BlockKind::Symmetric(_) => c.map(|v| v.re),
            // Tr(emb(C) emb(U)) = 2 Tr(C U), hence the factor 1/2.
            BlockKind::Hermitian(_) => embed_hermitian(&c) * 0.5,
        }
    }

    /// Writes a plain-text dump of the problem in its real (embedded) form.
    ///
    /// Each functional starts with a header line (`objective <sense>` or
    /// `constraint <i> <rel> <bound>`), followed by one `block row col value`
    /// line per nonzero upper-triangular entry. Scalars are reported as the
    /// diagonal block `L`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# blocks {}", self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            let _ = writeln!(out, "# block {i} real_dim {}", b.real_dim());
        }
        let _ = writeln!(out, "# scalars {}", self.scalars.len());
        let sense = match self.sense {
            Sense::Minimize => "minimize",
            Sense::Maximize => "maximize",
        };
        let _ = writeln!(out, "objective {sense}");
        self.dump_expr(&self.objective, &mut out);
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = writeln!(out, "constraint {i} {} {:e}", c.relation.symbol(), c.bound);
            self.dump_expr(&c.expr, &mut out);
        }
        out
    }

    fn dump_expr(&self, expr: &LinExpr, out: &mut String) {
        let mut touched: Vec<usize> = expr.block_terms.iter().map(|(b, _)| b.0).collect();
        touched.sort_unstable();
        touched.dedup();
        for b in touched {
            let c = self.real_coefficient(expr, BlockId(b));
            for j in 0..c.ncols() {
                for i in 0..=j {
                    let v = c[(i, j)];
                    if v != 0.0 {
                        let _ = writeln!(out, "{b} {i} {j} {v:e}");
                    }
                }
            }
        }
        let mut scalar: Vec<(usize, f64)> = Vec::new();
        for (id, coef) in &expr.scalar_terms {
            match scalar.iter_mut().find(|(i, _)| *i == id.0) {
                Some(slot) => slot.1 += coef,
                None => scalar.push((id.0, *coef)),
            }
        }
        scalar.sort_by_key(|(i, _)| *i);
        for (i, v) in scalar {
            if v != 0.0 {
                let _ = writeln!(out, "L {i} {i} {v:e}");
            }
        }
    }
}

/// Real symmetric embedding `[[Re H, -Im H], [Im H, Re H]]` of a Hermitian matrix.
pub fn embed_hermitian(h: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = h.nrows();
    let mut out = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = h[(i, j)];
            out[(i, j)] = v.re;
            out[(i + n, j + n)] = v.re;
            out[(i, j + n)] = -v.im;
            out[(i + n, j)] = v.im;
        }
    }
    out
}

/// Inverse of [`embed_hermitian`], averaging the redundant copies.
pub fn extract_hermitian(x: &DMatrix<f64>) -> DMatrix<Complex64> {
    let n = x.nrows() / 2;
    DMatrix::from_fn(n, n, |i, j| {
        let re = 0.5 * (x[(i, j)] + x[(i + n, j + n)]);
        let im = 0.5 * (x[(i + n, j)] - x[(i, j + n)]);
        Complex64::new(re, im)
    })
}
