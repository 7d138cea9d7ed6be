//! Line-search SQP with an ℓ1 merit function. Uses the exact Lagrangian
//! Hessian when the problem provides one, damped BFGS otherwise.

use nalgebra::{DMatrix, DVector};

use super::qp::{solve_qp, Constraint, Normal, QpProblem, QpSolution, QpStatus};
use super::{max_violation, NlpProblem, SolverOptions, SolverResult, SolverStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
enum Source {
    RowLower(usize),
    RowUpper(usize),
    RowEq(usize),
    VarLower(usize),
    VarUpper(usize),
}

struct Subproblem {
    qp: QpProblem,
    eq_src: Vec<Source>,
    ineq_src: Vec<Source>,
}

struct Bounds {
    lo: DVector<f64>,
    hi: DVector<f64>,
    clo: DVector<f64>,
    chi: DVector<f64>,
    free: Vec<usize>,
}

impl Bounds {
    fn clamp(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(y.len(), |i, _| y[i].clamp(self.lo[i], self.hi[i]))
    }

    fn scatter(&self, d: &DVector<f64>, n: usize) -> DVector<f64> {
        let mut out = DVector::zeros(n);
        for (k, &i) in self.free.iter().enumerate() {
            out[i] = d[k];
        }
        out
    }

    fn gather_matrix(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.free.len(), self.free.len(), |a, b| h[(self.free[a], self.free[b])])
    }

    fn gather(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| v[i]))
    }
}

fn l1_violation(c: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    c.iter()
        .zip(lo.iter().zip(hi.iter()))
        .map(|(&x, (&a, &b))| if x.is_finite() { (a - x).max(x - b).max(0.0) } else { f64::INFINITY })
        .sum()
}

fn sparse_rows(jac: &DMatrix<f64>, free: &[usize]) -> Vec<Vec<(usize, f64)>> {
    (0..jac.nrows())
        .map(|r| {
            free.iter()
                .enumerate()
                .filter_map(|(k, &i)| {
                    let a = jac[(r, i)];
                    (a != 0.0).then_some((k, a))
                })
                .collect()
        })
        .collect()
}

/// Linearized constraints around `y` with constraint values `c`.
fn build_subproblem(
    h: DMatrix<f64>,
    g: DVector<f64>,
    c: &DVector<f64>,
    rows: &[Vec<(usize, f64)>],
    y: &DVector<f64>,
    bnd: &Bounds,
) -> Subproblem {
    let mut sp = Subproblem {
        qp: QpProblem {
            h,
            g,
            eq: Vec::new(),
            ineq: Vec::new(),
        },
        eq_src: Vec::new(),
        ineq_src: Vec::new(),
    };
    for (r, row) in rows.iter().enumerate() {
        if row.is_empty() {
            continue;
        }
        let (a, b) = (bnd.clo[r], bnd.chi[r]);
        if a == b {
            sp.qp.eq.push(Constraint {
                normal: Normal::Sparse(row.clone()),
                rhs: a - c[r],
            });
            sp.eq_src.push(Source::RowEq(r));
            continue;
        }
        if a.is_finite() {
            sp.qp.ineq.push(Constraint {
                normal: Normal::Sparse(row.clone()),
                rhs: a - c[r],
            });
            sp.ineq_src.push(Source::RowLower(r));
        }
        if b.is_finite() {
            sp.qp.ineq.push(Constraint {
                normal: Normal::Sparse(row.iter().map(|&(k, v)| (k, -v)).collect()),
                rhs: c[r] - b,
            });
            sp.ineq_src.push(Source::RowUpper(r));
        }
    }
    for (k, &i) in bnd.free.iter().enumerate() {
        if bnd.lo[i].is_finite() {
            sp.qp.ineq.push(Constraint {
                normal: Normal::Unit(k, 1.0),
                rhs: bnd.lo[i] - y[i],
            });
            sp.ineq_src.push(Source::VarLower(k));
        }
        if bnd.hi[i].is_finite() {
            sp.qp.ineq.push(Constraint {
                normal: Normal::Unit(k, -1.0),
                rhs: y[i] - bnd.hi[i],
            });
            sp.ineq_src.push(Source::VarUpper(k));
        }
    }
    sp
}

/// Row multipliers and the bound multipliers of the free variables.
fn multipliers(sp: &Subproblem, eq: &DVector<f64>, ineq: &DVector<f64>, m: usize, nf: usize) -> (DVector<f64>, DVector<f64>) {
    let mut lambda = DVector::zeros(m);
    let mut mu = DVector::zeros(nf);
    for (src, &u) in sp.eq_src.iter().zip(eq.iter()).chain(sp.ineq_src.iter().zip(ineq.iter())) {
        match *src {
            Source::RowEq(r) | Source::RowLower(r) => lambda[r] += u,
            Source::RowUpper(r) => lambda[r] -= u,
            Source::VarLower(k) => mu[k] += u,
            Source::VarUpper(k) => mu[k] -= u,
        }
    }
    (lambda, mu)
}

struct State {
    y: DVector<f64>,
    f: f64,
    c: DVector<f64>,
    g: DVector<f64>,
    jac: DMatrix<f64>,
}

fn evaluate<P: NlpProblem + ?Sized>(p: &P, y: DVector<f64>, step: f64) -> Result<State> {
    let f = p.objective(&y)?;
    let c = p.constraints(&y)?;
    let g = p.gradient(&y, step)?;
    let jac = p.jacobian(&y, step)?;
    if !f.is_finite() || c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite objective or constraints".into()));
    }
    Ok(State { y, f, c, g, jac })
}

fn values<P: NlpProblem + ?Sized>(p: &P, y: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
    let f = p.objective(y).ok()?;
    let c = p.constraints(y).ok()?;
    (f.is_finite() && c.iter().all(|v| v.is_finite())).then_some((f, c))
}

fn stationarity(s: &State, lambda: &DVector<f64>, mu: &DVector<f64>, bnd: &Bounds) -> f64 {
    let r = &s.g - s.jac.tr_mul(lambda);
    let err = bnd
        .free
        .iter()
        .enumerate()
        .map(|(k, &i)| (r[i] - mu[k]).abs())
        .fold(0.0, f64::max);
    err / (1.0 + s.g.amax())
}

/// Gauss–Newton step on `½ Σ viol²` subject to the variable bounds.
fn restoration_step<P: NlpProblem + ?Sized>(p: &P, s: &State, bnd: &Bounds, opts: &SolverOptions) -> Option<DVector<f64>> {
    let nf = bnd.free.len();
    let mut rows = Vec::new();
    let mut resid = Vec::new();
    for r in 0..s.c.len() {
        let (a, b, v) = (bnd.clo[r], bnd.chi[r], s.c[r]);
        let e = if a == b || v < a {
            v - a
        } else if v > b {
            v - b
        } else {
            continue;
        };
        rows.push(r);
        resid.push(e);
    }
    if rows.is_empty() {
        return None;
    }
    let a = DMatrix::from_fn(rows.len(), nf, |i, k| s.jac[(rows[i], bnd.free[k])]);
    let r = DVector::from_vec(resid);
    let mut h = a.tr_mul(&a);
    let reg = 1e-8 * (1.0 + h.diagonal().amax());
    for k in 0..nf {
        h[(k, k)] += reg;
    }
    let g = a.tr_mul(&r);
    let empty = vec![Vec::new(); s.c.len()];
    let sp = build_subproblem(h, g.clone(), &s.c, &empty, &s.y, bnd);
    let sol = solve_qp(&sp.qp, opts.qp_max_iterations);
    if sol.status != QpStatus::Optimal {
        return None;
    }
    let d = bnd.scatter(&sol.d, s.y.len());
    let psi = |c: &DVector<f64>| -> f64 {
        c.iter()
            .zip(bnd.clo.iter().zip(bnd.chi.iter()))
            .map(|(&x, (&a, &b))| (a - x).max(x - b).max(0.0).powi(2))
            .sum::<f64>()
            * 0.5
    };
    let psi0 = psi(&s.c);
    let slope = g.dot(&sol.d);
    if slope >= 0.0 {
        return None;
    }
    let mut alpha = 1.0;
    for _ in 0..30 {
        let yt = bnd.clamp(&(&s.y + &d * alpha));
        if let Some((_, ct)) = values(p, &yt) {
            if psi(&ct) <= psi0 + 1e-4 * alpha * slope {
                return Some(yt);
            }
        }
        alpha *= 0.5;
    }
    None
}

pub fn solve<P: NlpProblem + ?Sized>(problem: &P, y0: &DVector<f64>, opts: &SolverOptions) -> Result<SolverResult> {
    let n = problem.n_vars();
    let m = problem.n_cons();
    crate::rbd::check_dim("initial point", n, y0.len())?;
    let (lo, hi) = problem.var_bounds();
    let (clo, chi) = problem.con_bounds();
    crate::rbd::check_dim("variable bounds", n, lo.len())?;
    crate::rbd::check_dim("constraint bounds", m, clo.len())?;
    for i in 0..n {
        if lo[i] > hi[i] {
            return Err(Error::InfeasibleBounds {
                name: format!("variable {i}"),
                min: lo[i],
                max: hi[i],
            });
        }
    }
    for i in 0..m {
        if clo[i] > chi[i] {
            return Err(Error::InfeasibleBounds {
                name: format!("constraint {i}"),
                min: clo[i],
                max: chi[i],
            });
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| hi[i] > lo[i]).collect();
    let nf = free.len();
    let bnd = Bounds {
        lo,
        hi,
        clo,
        chi,
        free,
    };
    let step = opts.fd_step;
    let started = std::time::Instant::now();
    let y_start = bnd.clamp(y0);
    if y_start != *y0 {
        log::warn!("initial point outside the variable bounds; clipped");
    }
    let mut s = evaluate(problem, y_start, step)?;
    let mut b = DMatrix::<f64>::identity(nf, nf);
    let mut scaled = false;
    let mut fresh_b = true;
    // proximal term added to the QP Hessian after short steps
    let mut reg = 0.0_f64;
    let mut nu = 1.0_f64;
    let mut lambda = DVector::zeros(m);
    let mut kkt = f64::INFINITY;

    let finish = |s: &State, status, kkt, lambda: &DVector<f64>, iterations| SolverResult {
        status,
        y: s.y.iter().copied().collect(),
        objective: s.f,
        violation: max_violation(&s.c, &bnd.clo, &bnd.chi),
        kkt_error: kkt,
        iterations,
        wall_time: started.elapsed().as_secs_f64(),
        multipliers: lambda.iter().copied().collect(),
    };

    for iter in 0..opts.max_iterations {
        let viol = max_violation(&s.c, &bnd.clo, &bnd.chi);
        let rows = sparse_rows(&s.jac, &bnd.free);
        let exact = problem.lagrangian_hessian(&s.y, &lambda, step).transpose()?;
        if let Some(full) = &exact {
            b = bnd.gather_matrix(full);
        }
        let reduce = exact.is_some();
        let h = regularized(&b, reg);
        let sp = build_subproblem(h.clone(), bnd.gather(&s.g), &s.c, &rows, &s.y, &bnd);
        let sol = solve_subproblem(&sp.qp, reduce, opts.qp_max_iterations);
        log::debug!(
            "sqp {iter}: f={:.6e} viol={viol:.3e} kkt={kkt:.3e} nu={nu:.3e} lam={:.3e} reg={reg:.1e} qp={:?}",
            s.f,
            lambda.amax(),
            sol.status
        );
        match sol.status {
            QpStatus::Optimal => {}
            QpStatus::NotConvex => {
                b = DMatrix::identity(nf, nf);
                fresh_b = true;
                continue;
            }
            QpStatus::Infeasible | QpStatus::IterationLimit => {
                match restoration_step(problem, &s, &bnd, opts) {
                    Some(y) => {
                        s = evaluate(problem, y, step)?;
                        continue;
                    }
                    None => {
                        let status = if viol <= opts.feasibility_tol {
                            SolverStatus::FeasibleNotOptimal
                        } else {
                            SolverStatus::Infeasible
                        };
                        return Ok(finish(&s, status, kkt, &lambda, iter));
                    }
                }
            }
        }
        let (lam, mu) = multipliers(&sp, &sol.eq_mult, &sol.ineq_mult, m, nf);
        lambda = lam;
        kkt = stationarity(&s, &lambda, &mu, &bnd);
        let d = bnd.scatter(&sol.d, n);
        let tiny = d.amax() <= 1e-12 * (1.0 + s.y.amax());
        if viol <= opts.feasibility_tol && (kkt <= opts.optimality_tol || tiny) {
            return Ok(finish(&s, SolverStatus::Optimal, kkt, &lambda, iter));
        }

        let lam_max = lambda.amax();
        if nu < 1.1 * lam_max {
            nu = 1.5 * lam_max + 1e-3;
        } else if nu > 10.0 * (lam_max + 1e-3) {
            nu = (0.25 * nu).max(1.5 * lam_max + 1e-3);
        }
        let theta = l1_violation(&s.c, &bnd.clo, &bnd.chi);
        let phi = s.f + nu * theta;
        let slope = (s.g.dot(&d) - nu * theta).min(-1e-16);

        let mut accepted = None;
        let mut alpha = 1.0;
        for ls in 0..40 {
            let yt = bnd.clamp(&(&s.y + &d * alpha));
            if let Some((ft, ct)) = values(problem, &yt) {
                let phit = ft + nu * l1_violation(&ct, &bnd.clo, &bnd.chi);
                if phit <= phi + 1e-4 * alpha * slope {
                    accepted = Some(yt);
                    break;
                }
                if ls == 0 {
                    // second-order correction
                    let shifted = &ct - &s.jac * &d;
                    let soc = build_subproblem(h.clone(), bnd.gather(&s.g), &shifted, &rows, &s.y, &bnd);
                    let ss = solve_subproblem(&soc.qp, reduce, opts.qp_max_iterations);
                    if ss.status == QpStatus::Optimal {
                        let ys = bnd.clamp(&(&s.y + bnd.scatter(&ss.d, n)));
                        if let Some((fs, cs)) = values(problem, &ys) {
                            if fs + nu * l1_violation(&cs, &bnd.clo, &bnd.chi) <= phi + 1e-4 * slope {
                                alpha = 1.0;
                                accepted = Some(ys);
                                break;
                            }
                        }
                    }
                }
            }
            alpha *= 0.5;
        }
        let scale = b.diagonal().mean().max(1e-8);
        if accepted.is_some() && alpha == 1.0 {
            reg = if reg < 1e-10 * scale { 0.0 } else { reg * 0.25 };
        } else if alpha < 0.1 {
            reg = (reg * 8.0).max(1e-3 * scale);
        }
        let Some(y_new) = accepted else {
            if reg < 1e8 * scale {
                reg = (reg * 10.0).max(1e-2 * scale);
                continue;
            }
            reg = 0.0;
            if !fresh_b {
                b = DMatrix::identity(nf, nf);
                fresh_b = true;
                scaled = false;
                continue;
            }
            if viol > opts.feasibility_tol {
                if let Some(y) = restoration_step(problem, &s, &bnd, opts) {
                    s = evaluate(problem, y, step)?;
                    continue;
                }
                return Ok(finish(&s, SolverStatus::Infeasible, kkt, &lambda, iter));
            }
            return Ok(finish(&s, SolverStatus::FeasibleNotOptimal, kkt, &lambda, iter));
        };

        let new = evaluate(problem, y_new, step)?;
        if exact.is_none() {
            let sk = bnd.gather(&(&new.y - &s.y));
            let yk = bnd.gather(&((&new.g - new.jac.tr_mul(&lambda)) - (&s.g - s.jac.tr_mul(&lambda))));
            bfgs_update(&mut b, &sk, &yk, &mut scaled);
            fresh_b = false;
        }
        s = new;
    }
    let viol = max_violation(&s.c, &bnd.clo, &bnd.chi);
    let status = if viol <= opts.feasibility_tol {
        SolverStatus::FeasibleNotOptimal
    } else {
        SolverStatus::IterationLimit
    };
    Ok(finish(&s, status, kkt, &lambda, opts.max_iterations))
}

fn dense(normal: &Normal, n: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    match normal {
        Normal::Sparse(e) => {
            for &(i, a) in e {
                v[i] += a;
            }
        }
        Normal::Unit(i, sign) => v[*i] = *sign,
    }
    v
}

fn solve_subproblem(qp: &QpProblem, reduce: bool, max_iter: usize) -> QpSolution {
    if reduce {
        solve_reduced(qp, max_iter)
    } else {
        solve_qp(qp, max_iter)
    }
}

/// QP with an indefinite Hessian. The equalities are eliminated through
/// `d = d_p + Z w`, negative curvature of `ZᵀHZ` is mirrored, and the
/// equality multipliers are recovered by least squares.
fn solve_reduced(qp: &QpProblem, max_iter: usize) -> QpSolution {
    let n = qp.h.nrows();
    let me = qp.eq.len();
    let failed = |status| QpSolution {
        status,
        d: DVector::zeros(n),
        eq_mult: DVector::zeros(me),
        ineq_mult: DVector::zeros(qp.ineq.len()),
    };
    let rows = me.max(n);
    let mut a = DMatrix::<f64>::zeros(rows, n);
    let mut b = DVector::<f64>::zeros(rows);
    for (r, c) in qp.eq.iter().enumerate() {
        a.set_row(r, &dense(&c.normal, n).transpose());
        b[r] = c.rhs;
    }
    let svd = a.clone().svd(true, true);
    let (Some(u), Some(v_t)) = (&svd.u, &svd.v_t) else {
        return failed(QpStatus::Infeasible);
    };
    let sigma = &svd.singular_values;
    let tol = 1e-10 * sigma.max().max(1e-300) * rows as f64;
    let range: Vec<usize> = (0..sigma.len()).filter(|&i| sigma[i] > tol).collect();
    let null: Vec<usize> = (0..n).filter(|&i| i >= sigma.len() || sigma[i] <= tol).collect();

    let mut dp = DVector::zeros(n);
    for &i in &range {
        dp.axpy(u.column(i).dot(&b) / sigma[i], &v_t.row(i).transpose(), 1.0);
    }
    let resid = (&a * &dp - &b).amax();
    if resid > 1e-8 * (1.0 + b.amax()) {
        return failed(QpStatus::Infeasible);
    }

    let z = DMatrix::from_fn(n, null.len(), |i, k| v_t[(null[k], i)]);
    let hz = &qp.h * &z;
    let mut hr = z.tr_mul(&hz);
    hr = (&hr + hr.transpose()) * 0.5;
    let eig = hr.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let floor = 1e-8 * top.max(1e-12);
    let fixed = eig.eigenvalues.map(|l| l.abs().max(floor));
    if fixed != eig.eigenvalues {
        hr = &eig.eigenvectors * DMatrix::from_diagonal(&fixed) * eig.eigenvectors.transpose();
    }
    let gr = z.tr_mul(&(&qp.g + &qp.h * &dp));
    let ineq_dense: Vec<DVector<f64>> = qp.ineq.iter().map(|c| dense(&c.normal, n)).collect();
    let reduced = QpProblem {
        h: hr,
        g: gr,
        eq: Vec::new(),
        ineq: qp
            .ineq
            .iter()
            .zip(&ineq_dense)
            .map(|(c, an)| {
                let az = z.tr_mul(an);
                Constraint {
                    normal: Normal::Sparse(az.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, &v)| (k, v)).collect()),
                    rhs: c.rhs - an.dot(&dp),
                }
            })
            .collect(),
    };
    let sol = solve_qp(&reduced, max_iter);
    if sol.status != QpStatus::Optimal {
        return failed(sol.status);
    }
    let d = &dp + &z * &sol.d;
    let mut r = &qp.h * &d + &qp.g;
    for (an, &mu) in ineq_dense.iter().zip(sol.ineq_mult.iter()) {
        r.axpy(-mu, an, 1.0);
    }
    // Aᵀλ = r on the range of Aᵀ
    let mut lam = DVector::zeros(rows);
    for &i in &range {
        lam.axpy(v_t.row(i).transpose().dot(&r) / sigma[i], &u.column(i), 1.0);
    }
    QpSolution {
        status: QpStatus::Optimal,
        d,
        eq_mult: lam.rows(0, me).into_owned(),
        ineq_mult: sol.ineq_mult,
    }
}

fn regularized(b: &DMatrix<f64>, reg: f64) -> DMatrix<f64> {
    let mut h = b.clone();
    for i in 0..h.nrows() {
        h[(i, i)] += reg;
    }
    h
}

/// Powell-damped BFGS update; the first curvature pair rescales the identity.
fn bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>, scaled: &mut bool) {
    let ss = s.norm_squared();
    if ss < 1e-300 {
        return;
    }
    let sy = s.dot(y);
    if !*scaled && sy > 0.0 {
        let gamma = y.norm_squared() / sy;
        *b *= gamma.clamp(1e-6, 1e6);
        *scaled = true;
    }
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if sbs <= 1e-300 {
        return;
    }
    let r = if sy >= 0.2 * sbs {
        y.clone()
    } else {
        let theta = 0.8 * sbs / (sbs - sy);
        y * theta + &bs * (1.0 - theta)
    };
    let sr = s.dot(&r);
    if sr <= 1e-300 {
        return;
    }
    b.ger(1.0 / sr, &r, &r, 1.0);
    b.ger(-1.0 / sbs, &bs, &bs, 1.0);
    let sym = (&*b + b.transpose()) * 0.5;
    *b = sym;
}
