//! Homogeneous self-dual primal-dual interior-point method.
//!
//! The user problem is first rewritten in standard form
//!
//! ```text
//! minimize  <c, x>   subject to  A x = b,  x in K
//! ```
//!
//! where `K` is a product of real PSD cones (Hermitian blocks enter through
//! their real embedding) and a nonnegative orthant holding nonnegative
//! scalars, split free scalars and inequality slacks. The solver then runs a
//! Mehrotra predictor-corrector on the homogeneous embedding
//!
//! ```text
//! A x - b tau = 0,   c tau - A^T y - s = 0,   b^T y - c^T x - kappa = 0
//! ```
//!
//! using the HKM search direction. Infeasibility is detected from the
//! `tau / kappa` ratio together with an explicit certificate check.
//!
//! Each block coefficient is stored as a sum of weighted rank-one terms
//! `sum_r w_r v_r v_r^T`, so the Schur complement entries reduce to
//! `sum w_r w_q (v_r^T X v_q)(v_q^T S^-1 v_r)` and never touch dense `n x n`
//! coefficient matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;

use crate::error::ConicError;
use crate::problem::{
    embed_hermitian, extract_hermitian, BlockKind, BlockTerm, ConicProblem, LinExpr, Relation,
    ScalarKind, Sense,
};

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative tolerance on primal residual, dual residual and duality gap.
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            step_fraction: 0.98,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Certificate {
    /// A Farkas certificate for the constraints was found.
    PrimalInfeasible,
    /// An improving ray was found (the objective is unbounded).
    DualInfeasible,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// Block values in user coordinates (symmetric blocks have zero imaginary part).
    pub blocks: Vec<DMatrix<Complex64>>,
    pub scalars: Vec<f64>,
    /// Objective value in the user's sense.
    pub objective_value: f64,
    /// Dual objective in the user's sense.
    pub dual_objective: f64,
    /// Multiplier per user constraint (sensitivity of the objective to the bound).
    pub dual_values: Vec<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    /// `max(primal_residual, dual_residual, gap)`.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub certificate: Option<Certificate>,
    /// Residual of the infeasibility certificate when one was returned.
    pub certificate_residual: Option<f64>,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn real_block(&self, idx: usize) -> DMatrix<f64> {
        self.blocks[idx].map(|v| v.re)
    }
}

/// Solves `problem` to relative tolerance `tol` with default iteration limits.
pub fn solve(problem: &ConicProblem, tol: f64) -> Result<ConicSolution, ConicError> {
    solve_with(problem, &SolverOptions::with_tol(tol))
}

pub fn solve_with(
    problem: &ConicProblem,
    opts: &SolverOptions,
) -> Result<ConicSolution, ConicError> {
    if !(opts.tol > 0.0) {
        return Err(ConicError::BadTolerance(opts.tol));
    }
    problem.validate()?;
    let std = StandardForm::build(problem);
    if let Some(bad) = std.inconsistent_row {
        return Ok(trivially_infeasible(problem, bad));
    }
    let raw = run(&std, opts);
    Ok(std.recover(problem, raw))
}

struct BlockData {
    n: usize,
    /// Rank-one factors as columns.
    v: DMatrix<f64>,
    w: Vec<f64>,
    owner: Vec<usize>,
    c: DMatrix<f64>,
}

enum LpOrigin {
    Scalar(usize),
    FreePos(usize),
    FreeNeg(usize),
    Slack,
}

struct StandardForm {
    blocks: Vec<BlockData>,
    a_lp: DMatrix<f64>,
    c_lp: DVector<f64>,
    b: DVector<f64>,
    /// Original row index for each kept row.
    rows: Vec<usize>,
    row_scale: Vec<f64>,
    c_scale: f64,
    b_scale: f64,
    lp_origin: Vec<LpOrigin>,
    /// Constant term dropped from the objective (none today, kept for clarity of recovery).
    sign: f64,
    inconsistent_row: Option<usize>,
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[i] = 1.0;
    v
}

/// Real rank-one factors `(weight, vector)` of one block term in solver coordinates.
fn term_factors(kind: BlockKind, term: &BlockTerm) -> Vec<(f64, DVector<f64>)> {
    match kind {
        BlockKind::Symmetric(n) => match term {
            BlockTerm::Entry { row, col, value } => {
                let v = value.re;
                if row == col {
                    vec![(v, unit(n, *row))]
                } else {
                    let (ei, ej) = (unit(n, *row), unit(n, *col));
                    vec![(0.5 * v, &ei + &ej), (-0.5 * v, &ei - &ej)]
                }
            }
            BlockTerm::RankOne { weight, vector } => vec![(*weight, vector.map(|z| z.re))],
            BlockTerm::Dense(m) => eigen_factors(&m.map(|z| z.re)),
        },
        BlockKind::Hermitian(n) => {
            // Tr(emb(C) emb(U)) = 2 Tr(C U); every weight carries a factor 1/2.
            let embed_vec = |v: &DVector<Complex64>| -> [DVector<f64>; 2] {
                let mut a = DVector::zeros(2 * n);
                let mut b = DVector::zeros(2 * n);
                for i in 0..n {
                    a[i] = v[i].re;
                    a[i + n] = v[i].im;
                    b[i] = -v[i].im;
                    b[i + n] = v[i].re;
                }
                [a, b]
            };
            let push_rank_one = |out: &mut Vec<(f64, DVector<f64>)>, w: f64, v: &DVector<Complex64>| {
                let [a, b] = embed_vec(v);
                out.push((0.5 * w, a));
                out.push((0.5 * w, b));
            };
            let mut out = Vec::new();
            match term {
                BlockTerm::Entry { row, col, value } => {
                    if row == col {
                        let mut e = DVector::<Complex64>::zeros(n);
                        e[*row] = Complex64::new(1.0, 0.0);
                        push_rank_one(&mut out, value.re, &e);
                    } else {
                        // C = |v| (p q^H + q p^H) with p = e_row, q = e^{-i arg v} e_col.
                        let mag = value.norm();
                        if mag > 0.0 {
                            let phase = Complex64::from_polar(1.0, -value.arg());
                            let mut plus = DVector::<Complex64>::zeros(n);
                            let mut minus = DVector::<Complex64>::zeros(n);
                            plus[*row] = Complex64::new(1.0, 0.0);
                            minus[*row] = Complex64::new(1.0, 0.0);
                            plus[*col] = phase;
                            minus[*col] = -phase;
                            push_rank_one(&mut out, 0.5 * mag, &plus);
                            push_rank_one(&mut out, -0.5 * mag, &minus);
                        }
                    }
                }
                BlockTerm::RankOne { weight, vector } => push_rank_one(&mut out, *weight, vector),
                BlockTerm::Dense(m) => {
                    out = eigen_factors(&(embed_hermitian(m) * 0.5));
                }
            }
            out
        }
    }
}

fn eigen_factors(m: &DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax();
    if scale == 0.0 {
        return Vec::new();
    }
    (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i].abs() > 1e-14 * scale)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
        .collect()
}

impl StandardForm {
    fn build(problem: &ConicProblem) -> Self {
        let sign = match problem.sense() {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };

        // LP columns.
        let mut lp_origin = Vec::new();
        let mut scalar_cols: Vec<(usize, Option<usize>)> = Vec::new();
        for (j, kind) in problem.scalars().iter().enumerate() {
            match kind {
                ScalarKind::NonNegative => {
                    scalar_cols.push((lp_origin.len(), None));
                    lp_origin.push(LpOrigin::Scalar(j));
                }
                ScalarKind::Free => {
                    let p = lp_origin.len();
                    lp_origin.push(LpOrigin::FreePos(j));
                    lp_origin.push(LpOrigin::FreeNeg(j));
                    scalar_cols.push((p, Some(p + 1)));
                }
            }
        }
        let mut slack_col = vec![None; problem.constraints().len()];
        for (i, c) in problem.constraints().iter().enumerate() {
            if c.relation != Relation::Eq {
                slack_col[i] = Some(lp_origin.len());
                lp_origin.push(LpOrigin::Slack);
            }
        }
        let nlp = lp_origin.len();
        let m_all = problem.constraints().len();

        let scalar_row = |expr: &LinExpr| -> DVector<f64> {
            let mut row = DVector::zeros(nlp);
            for (id, coef) in &expr.scalar_terms {
                let (p, neg) = scalar_cols[id.index()];
                row[p] += coef;
                if let Some(q) = neg {
                    row[q] -= coef;
                }
            }
            row
        };

        // Per-block factor pools, per-row norms.
        let mut pools: Vec<Vec<(usize, f64, DVector<f64>)>> = vec![Vec::new(); problem.blocks().len()];
        let mut a_lp_rows = Vec::with_capacity(m_all);
        let mut row_norm_sq = vec![0.0; m_all];
        for (i, c) in problem.constraints().iter().enumerate() {
            let mut local: Vec<Vec<(f64, DVector<f64>)>> = vec![Vec::new(); problem.blocks().len()];
            for (id, term) in &c.expr.block_terms {
                let kind = problem.blocks()[id.index()];
                local[id.index()].extend(term_factors(kind, term));
            }
            // Frobenius norm of the block row via the factor Gram matrix.
            for (bi, factors) in local.into_iter().enumerate() {
                for a in 0..factors.len() {
                    for q in 0..factors.len() {
                        let d = factors[a].1.dot(&factors[q].1);
                        row_norm_sq[i] += factors[a].0 * factors[q].0 * d * d;
                    }
                }
                for (w, v) in factors {
                    pools[bi].push((i, w, v));
                }
            }
            let mut row = scalar_row(&c.expr);
            if let Some(col) = slack_col[i] {
                row[col] = match c.relation {
                    Relation::Le => 1.0,
                    Relation::Ge => -1.0,
                    Relation::Eq => unreachable!(),
                };
            }
            row_norm_sq[i] += row.norm_squared();
            a_lp_rows.push(row);
        }
        let mut rows = Vec::new();
        let mut row_scale = Vec::new();
        let mut inconsistent_row = None;
        for i in 0..m_all {
            let norm = row_norm_sq[i].max(0.0).sqrt();
            let bound = problem.constraints()[i].bound;
            if norm <= 1e-300 {
                if bound.abs() > 0.0 && inconsistent_row.is_none() {
                    inconsistent_row = Some(i);
                }
                continue;
            }
            rows.push(i);
            row_scale.push(1.0 / norm);
        }
        let mut new_index = vec![usize::MAX; m_all];
        for (k, &i) in rows.iter().enumerate() {
            new_index[i] = k;
        }
        let m = rows.len();

        let mut b = DVector::zeros(m);
        let mut a_lp = DMatrix::zeros(m, nlp);
        for (k, &i) in rows.iter().enumerate() {
            b[k] = problem.constraints()[i].bound * row_scale[k];
            a_lp.row_mut(k)
                .copy_from(&(a_lp_rows[i].transpose() * row_scale[k]));
        }

        let mut blocks = Vec::with_capacity(problem.blocks().len());
        for (bi, kind) in problem.blocks().iter().enumerate() {
            let n = kind.real_dim();
            let kept: Vec<&(usize, f64, DVector<f64>)> = pools[bi]
                .iter()
                .filter(|(i, w, _)| new_index[*i] != usize::MAX && *w != 0.0)
                .collect();
            let mut v = DMatrix::zeros(n, kept.len());
            let mut w = Vec::with_capacity(kept.len());
            let mut owner = Vec::with_capacity(kept.len());
            for (r, (i, wr, vr)) in kept.into_iter().enumerate() {
                v.set_column(r, vr);
                let k = new_index[*i];
                w.push(wr * row_scale[k]);
                owner.push(k);
            }
            let c = problem.real_coefficient(problem.objective(), crate::problem::BlockId(bi)) * sign;
            blocks.push(BlockData { n, v, w, owner, c });
        }
        let c_lp = scalar_row(problem.objective()) * sign;

        // Objective and right-hand side normalization.
        let c_norm = (blocks.iter().map(|b| b.c.norm_squared()).sum::<f64>()
            + c_lp.norm_squared())
        .sqrt();
        let c_scale = if c_norm > 0.0 { 1.0 / c_norm } else { 1.0 };
        for blk in &mut blocks {
            blk.c *= c_scale;
        }
        let c_lp = c_lp * c_scale;
        let b_norm = b.norm();
        let b_scale = if b_norm > 1.0 { 1.0 / b_norm } else { 1.0 };
        let b = b * b_scale;

        Self {
            blocks,
            a_lp,
            c_lp,
            b,
            rows,
            row_scale,
            c_scale,
            b_scale,
            lp_origin,
            sign,
            inconsistent_row,
        }
    }

    fn m(&self) -> usize {
        self.b.len()
    }

    fn nlp(&self) -> usize {
        self.c_lp.len()
    }

    /// `A(X, x)`.
    fn apply_a(&self, xs: &[DMatrix<f64>], xl: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.a_lp * xl;
        for (blk, x) in self.blocks.iter().zip(xs) {
            if blk.w.is_empty() {
                continue;
            }
            let xv = x * &blk.v;
            for r in 0..blk.w.len() {
                out[blk.owner[r]] += blk.w[r] * blk.v.column(r).dot(&xv.column(r));
            }
        }
        out
    }

    /// `A^T y`, split into blocks and the LP part.
    fn apply_at(&self, y: &DVector<f64>) -> (Vec<DMatrix<f64>>, DVector<f64>) {
        let mats = self
            .blocks
            .iter()
            .map(|blk| {
                if blk.w.is_empty() {
                    return DMatrix::zeros(blk.n, blk.n);
                }
                let mut scaled = blk.v.clone();
                for r in 0..blk.w.len() {
                    let s = blk.w[r] * y[blk.owner[r]];
                    scaled.column_mut(r).scale_mut(s);
                }
                let m = &scaled * blk.v.transpose();
                (&m + m.transpose()) * 0.5
            })
            .collect();
        (mats, self.a_lp.transpose() * y)
    }

    fn recover(&self, problem: &ConicProblem, raw: RawResult) -> ConicSolution {
        let unscale_x = 1.0 / self.b_scale;
        let tau = raw.tau;
        let scale_x = if raw.status == SolveStatus::Optimal || raw.status == SolveStatus::MaxIter {
            unscale_x / tau
        } else {
            unscale_x
        };
        let blocks: Vec<DMatrix<Complex64>> = problem
            .blocks()
            .iter()
            .zip(&raw.x)
            .map(|(kind, x)| match kind {
                BlockKind::Symmetric(_) => x.map(|v| Complex64::new(v * scale_x, 0.0)),
                BlockKind::Hermitian(_) => extract_hermitian(&(x * scale_x)),
            })
            .collect();
        let mut scalars = vec![0.0; problem.scalars().len()];
        for (col, origin) in self.lp_origin.iter().enumerate() {
            let v = raw.xl[col] * scale_x;
            match origin {
                LpOrigin::Scalar(j) | LpOrigin::FreePos(j) => scalars[*j] += v,
                LpOrigin::FreeNeg(j) => scalars[*j] -= v,
                LpOrigin::Slack => {}
            }
        }
        // d(opt)/d(bound_i) = sign * y_k * row_scale_k / (c_scale * tau).
        let y_unscale = 1.0 / (self.c_scale * tau.max(f64::MIN_POSITIVE));
        let mut dual_values = vec![0.0; problem.constraints().len()];
        for (k, &i) in self.rows.iter().enumerate() {
            dual_values[i] = self.sign * raw.y[k] * self.row_scale[k] * y_unscale;
        }
        let objective_value = problem.evaluate(problem.objective(), &blocks, &scalars);
        let dual_objective =
            self.sign * raw.dual_obj_scaled / (self.c_scale * self.b_scale);
        ConicSolution {
            status: raw.status,
            blocks,
            scalars,
            objective_value,
            dual_objective,
            dual_values,
            primal_residual: raw.pres,
            dual_residual: raw.dres,
            gap: raw.gap,
            kkt_residual: raw.pres.max(raw.dres).max(raw.gap),
            iterations: raw.iterations,
            certificate: raw.certificate,
            certificate_residual: raw.certificate_residual,
        }
    }
}

fn trivially_infeasible(problem: &ConicProblem, _row: usize) -> ConicSolution {
    ConicSolution {
        status: SolveStatus::Infeasible,
        blocks: problem
            .blocks()
            .iter()
            .map(|k| DMatrix::zeros(k.dim(), k.dim()))
            .collect(),
        scalars: vec![0.0; problem.scalars().len()],
        objective_value: f64::NAN,
        dual_objective: f64::NAN,
        dual_values: vec![0.0; problem.constraints().len()],
        primal_residual: f64::INFINITY,
        dual_residual: 0.0,
        gap: 0.0,
        kkt_residual: f64::INFINITY,
        iterations: 0,
        certificate: Some(Certificate::PrimalInfeasible),
        certificate_residual: Some(0.0),
    }
}

struct RawResult {
    status: SolveStatus,
    x: Vec<DMatrix<f64>>,
    xl: DVector<f64>,
    y: DVector<f64>,
    tau: f64,
    pres: f64,
    dres: f64,
    gap: f64,
    dual_obj_scaled: f64,
    iterations: usize,
    certificate: Option<Certificate>,
    certificate_residual: Option<f64>,
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// Largest step `alpha` keeping `z + alpha dz` positive definite, given `z = L L^T`.
fn max_step_psd(l: &DMatrix<f64>, dz: &DMatrix<f64>) -> f64 {
    if dz.nrows() == 0 {
        return f64::INFINITY;
    }
    let t1 = l.solve_lower_triangular(dz).expect("nonsingular Cholesky factor");
    let t = l
        .solve_lower_triangular(&t1.transpose())
        .expect("nonsingular Cholesky factor");
    let t = sym(t);
    let lmin = t.symmetric_eigenvalues().min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn max_step_lp(z: &DVector<f64>, dz: &DVector<f64>) -> f64 {
    let mut a = f64::INFINITY;
    for i in 0..z.len() {
        if dz[i] < 0.0 {
            a = a.min(-z[i] / dz[i]);
        }
    }
    a
}

fn max_step_scalar(z: f64, dz: f64) -> f64 {
    if dz < 0.0 {
        -z / dz
    } else {
        f64::INFINITY
    }
}

fn cholesky_regularized(m: &DMatrix<f64>) -> Cholesky<f64, Dyn> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return c;
    }
    let diag_max = m.diagonal().amax().max(1e-300);
    let mut reg = 1e-14 * diag_max;
    loop {
        let mut mm = m.clone();
        for i in 0..mm.nrows() {
            mm[(i, i)] += reg;
        }
        if let Some(c) = Cholesky::new(mm) {
            return c;
        }
        reg *= 10.0;
        if reg > diag_max {
            // Fall back to the identity shift; iterates will stall and hit max_iter.
            let mut mm = m.clone();
            for i in 0..mm.nrows() {
                mm[(i, i)] += diag_max + 1.0;
            }
            return Cholesky::new(mm).expect("shifted matrix is positive definite");
        }
    }
}

struct Iterate {
    x: Vec<DMatrix<f64>>,
    s: Vec<DMatrix<f64>>,
    xl: DVector<f64>,
    sl: DVector<f64>,
    y: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    ds: Vec<DMatrix<f64>>,
    dxl: DVector<f64>,
    dsl: DVector<f64>,
    dy: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

fn run(std: &StandardForm, opts: &SolverOptions) -> RawResult {
    let m = std.m();
    let nlp = std.nlp();
    let nu = std.blocks.iter().map(|b| b.n).sum::<usize>() + nlp;
    let b = &std.b;
    let b_norm = b.norm();
    let c_norm = (std.blocks.iter().map(|blk| blk.c.norm_squared()).sum::<f64>()
        + std.c_lp.norm_squared())
    .sqrt();

    let mut it = Iterate {
        x: std.blocks.iter().map(|blk| DMatrix::identity(blk.n, blk.n)).collect(),
        s: std.blocks.iter().map(|blk| DMatrix::identity(blk.n, blk.n)).collect(),
        xl: DVector::from_element(nlp, 1.0),
        sl: DVector::from_element(nlp, 1.0),
        y: DVector::zeros(m),
        tau: 1.0,
        kappa: 1.0,
    };

    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY, 0.0);
    let mut iterations = 0;
    for iter in 0..=opts.max_iter {
        iterations = iter;
        // Residuals.
        let ax = std.apply_a(&it.x, &it.xl);
        let r_p = b * it.tau - &ax;
        let (aty, aty_l) = std.apply_at(&it.y);
        let r_d: Vec<DMatrix<f64>> = std
            .blocks
            .iter()
            .enumerate()
            .map(|(k, blk)| &blk.c * it.tau - &aty[k] - &it.s[k])
            .collect();
        let r_dl = &std.c_lp * it.tau - &aty_l - &it.sl;
        let cx = std
            .blocks
            .iter()
            .zip(&it.x)
            .map(|(blk, x)| frob(&blk.c, x))
            .sum::<f64>()
            + std.c_lp.dot(&it.xl);
        let by = b.dot(&it.y);
        let r_g = by - cx - it.kappa;
        let xs_sum = it.x.iter().zip(&it.s).map(|(x, s)| frob(x, s)).sum::<f64>()
            + it.xl.dot(&it.sl);
        let mu = (xs_sum + it.tau * it.kappa) / (nu as f64 + 1.0);

        let rd_norm = (r_d.iter().map(|r| r.norm_squared()).sum::<f64>() + r_dl.norm_squared()).sqrt();
        let pres = r_p.norm() / it.tau / (1.0 + b_norm);
        let dres = rd_norm / it.tau / (1.0 + c_norm);
        let pobj = cx / it.tau;
        let dobj = by / it.tau;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs().max(dobj.abs()));
        last = (pres, dres, gap, dobj);
        if pres <= opts.tol && dres <= opts.tol && gap <= opts.tol {
            return finish(std, it, SolveStatus::Optimal, last, iterations, None, None);
        }

        // Infeasibility certificates (meaningful once kappa dominates tau).
        if it.kappa > it.tau {
            if by > 0.0 {
                let cert = (aty
                    .iter()
                    .zip(&it.s)
                    .map(|(a, s)| (a + s).norm_squared())
                    .sum::<f64>()
                    + (&aty_l + &it.sl).norm_squared())
                .sqrt()
                    / by;
                if cert <= opts.tol {
                    return finish(
                        std,
                        it,
                        SolveStatus::Infeasible,
                        last,
                        iterations,
                        Some(Certificate::PrimalInfeasible),
                        Some(cert),
                    );
                }
            }
            if cx < 0.0 {
                let cert = (&ax).norm() / (-cx);
                if cert <= opts.tol {
                    return finish(
                        std,
                        it,
                        SolveStatus::Infeasible,
                        last,
                        iterations,
                        Some(Certificate::DualInfeasible),
                        Some(cert),
                    );
                }
            }
        }
        if iter == opts.max_iter {
            break;
        }

        // Factorizations.
        let mut chol_s = Vec::with_capacity(std.blocks.len());
        let mut sinv = Vec::with_capacity(std.blocks.len());
        let mut chol_x = Vec::with_capacity(std.blocks.len());
        for k in 0..std.blocks.len() {
            let cs = Cholesky::new(it.s[k].clone()).expect("dual iterate stays positive definite");
            sinv.push(sym(cs.inverse()));
            chol_s.push(cs.l());
            let cxk = Cholesky::new(it.x[k].clone()).expect("primal iterate stays positive definite");
            chol_x.push(cxk.l());
        }
        let dl = it.xl.component_div(&it.sl);

        // Schur complement.
        let mut schur = DMatrix::<f64>::zeros(m, m);
        for (k, blk) in std.blocks.iter().enumerate() {
            let r = blk.w.len();
            if r == 0 {
                continue;
            }
            let p = blk.v.transpose() * (&it.x[k] * &blk.v);
            let q = blk.v.transpose() * (&sinv[k] * &blk.v);
            for a in 0..r {
                let ia = blk.owner[a];
                let wa = blk.w[a];
                for c in 0..r {
                    let ic = blk.owner[c];
                    schur[(ia, ic)] += wa * blk.w[c] * p[(a, c)] * q[(a, c)];
                }
            }
        }
        if nlp > 0 {
            let mut scaled = std.a_lp.clone();
            for j in 0..nlp {
                scaled.column_mut(j).scale_mut(dl[j]);
            }
            schur += &scaled * std.a_lp.transpose();
        }
        let schur = sym(schur);
        let chol_m = cholesky_regularized(&schur);

        let hkm = |k: usize, v: &DMatrix<f64>| -> DMatrix<f64> { sym(&it.x[k] * v * &sinv[k]) };

        let dc: Vec<DMatrix<f64>> = (0..std.blocks.len()).map(|k| hkm(k, &std.blocks[k].c)).collect();
        let dc_l = std.c_lp.component_mul(&dl);
        let a_vec = std.apply_a(&dc, &dc_l);
        let q_vec = &a_vec + b;
        let v_vec = chol_m.solve(&q_vec);
        let cdc = std
            .blocks
            .iter()
            .zip(&dc)
            .map(|(blk, d)| frob(&blk.c, d))
            .sum::<f64>()
            + std.c_lp.dot(&dc_l);
        let drd: Vec<DMatrix<f64>> = (0..std.blocks.len()).map(|k| hkm(k, &r_d[k])).collect();
        let drd_l = r_dl.component_mul(&dl);
        let a_minus_b = &a_vec - b;
        let coef_tau = a_minus_b.dot(&v_vec) - cdc - it.kappa / it.tau;

        let solve_dir = |eta: f64,
                         rc: &[DMatrix<f64>],
                         rc_l: &DVector<f64>,
                         r_tau: f64|
         -> Direction {
            let h: Vec<DMatrix<f64>> = rc.iter().zip(&drd).map(|(r, d)| r - d * eta).collect();
            let h_l = rc_l - &drd_l * eta;
            let rhs1 = &r_p * eta - std.apply_a(&h, &h_l);
            let u = chol_m.solve(&rhs1);
            let ch = std
                .blocks
                .iter()
                .zip(&h)
                .map(|(blk, hh)| frob(&blk.c, hh))
                .sum::<f64>()
                + std.c_lp.dot(&h_l);
            let dtau = (eta * r_g - a_minus_b.dot(&u) - ch - r_tau) / coef_tau;
            let dy = &u + &v_vec * dtau;
            let (atdy, atdy_l) = std.apply_at(&dy);
            let ds: Vec<DMatrix<f64>> = (0..std.blocks.len())
                .map(|k| &r_d[k] * eta - &atdy[k] + &std.blocks[k].c * dtau)
                .collect();
            let dsl = &r_dl * eta - &atdy_l + &std.c_lp * dtau;
            let dx: Vec<DMatrix<f64>> = (0..std.blocks.len())
                .map(|k| &rc[k] - hkm(k, &ds[k]))
                .collect();
            let dxl = rc_l - dsl.component_mul(&dl);
            let dkappa = r_tau - it.kappa / it.tau * dtau;
            Direction {
                dx,
                ds,
                dxl,
                dsl,
                dy,
                dtau,
                dkappa,
            }
        };

        let max_step = |d: &Direction| -> f64 {
            let mut a = f64::INFINITY;
            for k in 0..std.blocks.len() {
                a = a.min(max_step_psd(&chol_x[k], &d.dx[k]));
                a = a.min(max_step_psd(&chol_s[k], &d.ds[k]));
            }
            a = a.min(max_step_lp(&it.xl, &d.dxl));
            a = a.min(max_step_lp(&it.sl, &d.dsl));
            a = a.min(max_step_scalar(it.tau, d.dtau));
            a.min(max_step_scalar(it.kappa, d.dkappa))
        };

        // Predictor.
        let rc_aff: Vec<DMatrix<f64>> = it.x.iter().map(|x| -x).collect();
        let rc_aff_l = -&it.xl;
        let aff = solve_dir(1.0, &rc_aff, &rc_aff_l, -it.kappa);
        let alpha_aff = max_step(&aff).min(1.0);
        let mu_aff = {
            let mut acc = 0.0;
            for k in 0..std.blocks.len() {
                let xa = &it.x[k] + &aff.dx[k] * alpha_aff;
                let sa = &it.s[k] + &aff.ds[k] * alpha_aff;
                acc += frob(&xa, &sa);
            }
            acc += (&it.xl + &aff.dxl * alpha_aff).dot(&(&it.sl + &aff.dsl * alpha_aff));
            acc += (it.tau + alpha_aff * aff.dtau) * (it.kappa + alpha_aff * aff.dkappa);
            acc / (nu as f64 + 1.0)
        };
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let rc: Vec<DMatrix<f64>> = (0..std.blocks.len())
            .map(|k| {
                &sinv[k] * (sigma * mu) - &it.x[k] - sym(&aff.dx[k] * &aff.ds[k] * &sinv[k])
            })
            .collect();
        let rc_l = DVector::from_fn(nlp, |j, _| {
            (sigma * mu - it.xl[j] * it.sl[j] - aff.dxl[j] * aff.dsl[j]) / it.sl[j]
        });
        let r_tau = (sigma * mu - it.tau * it.kappa - aff.dtau * aff.dkappa) / it.tau;
        let dir = solve_dir(1.0 - sigma, &rc, &rc_l, r_tau);
        let mut alpha = (opts.step_fraction * max_step(&dir)).min(1.0);

        // Take the step, backing off if roundoff breaks definiteness.
        let mut accepted = false;
        for _ in 0..30 {
            let x_new: Vec<DMatrix<f64>> = (0..std.blocks.len())
                .map(|k| sym(&it.x[k] + &dir.dx[k] * alpha))
                .collect();
            let s_new: Vec<DMatrix<f64>> = (0..std.blocks.len())
                .map(|k| sym(&it.s[k] + &dir.ds[k] * alpha))
                .collect();
            let ok = x_new.iter().chain(&s_new).all(|z| Cholesky::new(z.clone()).is_some());
            let xl_new = &it.xl + &dir.dxl * alpha;
            let sl_new = &it.sl + &dir.dsl * alpha;
            let tau_new = it.tau + alpha * dir.dtau;
            let kappa_new = it.kappa + alpha * dir.dkappa;
            let ok = ok
                && xl_new.iter().all(|v| *v > 0.0)
                && sl_new.iter().all(|v| *v > 0.0)
                && tau_new > 0.0
                && kappa_new > 0.0;
            if ok {
                it.x = x_new;
                it.s = s_new;
                it.xl = xl_new;
                it.sl = sl_new;
                it.y = &it.y + &dir.dy * alpha;
                it.tau = tau_new;
                it.kappa = kappa_new;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted || alpha < 1e-12 {
            break;
        }

        // Keep the embedding well scaled.
        let norm = it.tau.max(it.kappa);
        if norm > 1e8 || norm < 1e-8 {
            let s = 1.0 / norm;
            for k in 0..std.blocks.len() {
                it.x[k] *= s;
                it.s[k] *= s;
            }
            it.xl *= s;
            it.sl *= s;
            it.y *= s;
            it.tau *= s;
            it.kappa *= s;
        }
    }
    finish(std, it, SolveStatus::MaxIter, last, iterations, None, None)
}

fn finish(
    _std: &StandardForm,
    it: Iterate,
    status: SolveStatus,
    last: (f64, f64, f64, f64),
    iterations: usize,
    certificate: Option<Certificate>,
    certificate_residual: Option<f64>,
) -> RawResult {
    RawResult {
        status,
        tau: it.tau,
        x: it.x,
        xl: it.xl,
        y: it.y,
        pres: last.0,
        dres: last.1,
        gap: last.2,
        dual_obj_scaled: last.3,
        iterations,
        certificate,
        certificate_residual,
    }
}
