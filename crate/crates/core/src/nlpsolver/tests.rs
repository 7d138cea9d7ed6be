use super::*;
use approx::assert_relative_eq;
use proptest::prelude::*;

use crate::error::Error;

/// Closure-backed NLP for tests.
struct Fns<F, C> {
    n: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    clo: Vec<f64>,
    chi: Vec<f64>,
    f: F,
    c: C,
}

impl<F, C> NlpProblem for Fns<F, C>
where
    F: Fn(&DVector<f64>) -> f64,
    C: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn n_vars(&self) -> usize {
        self.n
    }
    fn n_cons(&self) -> usize {
        self.clo.len()
    }
    fn var_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_vec(self.lo.clone()), DVector::from_vec(self.hi.clone()))
    }
    fn con_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_vec(self.clo.clone()), DVector::from_vec(self.chi.clone()))
    }
    fn objective(&self, y: &DVector<f64>) -> Result<f64> {
        Ok((self.f)(y))
    }
    fn constraints(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.c)(y))
    }
}

const INF: f64 = f64::INFINITY;

fn hs071() -> Fns<impl Fn(&DVector<f64>) -> f64, impl Fn(&DVector<f64>) -> DVector<f64>> {
    Fns {
        n: 4,
        lo: vec![1.0; 4],
        hi: vec![5.0; 4],
        clo: vec![25.0, 40.0],
        chi: vec![INF, 40.0],
        f: |x: &DVector<f64>| x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2],
        c: |x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[1] * x[2] * x[3], x.norm_squared()]),
    }
}

#[test]
fn hock_schittkowski_71() {
    let p = hs071();
    let r = solve(&p, &DVector::from_vec(vec![1.0, 5.0, 5.0, 1.0]), &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolverStatus::Optimal, "{r:?}");
    assert_relative_eq!(r.objective, 17.014_017_289, epsilon = 1e-5);
    let x = DVector::from_vec(r.y.clone());
    assert_relative_eq!(x, DVector::from_vec(vec![1.0, 4.742_999_64, 3.821_149_98, 1.379_408_29]), epsilon = 1e-3);
    assert!(r.violation <= 1e-6);
}

#[test]
fn rosenbrock_with_fd_gradient() {
    let p = Fns {
        n: 2,
        lo: vec![-INF; 2],
        hi: vec![INF; 2],
        clo: vec![],
        chi: vec![],
        f: |x: &DVector<f64>| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
        c: |_: &DVector<f64>| DVector::zeros(0),
    };
    let opts = SolverOptions {
        optimality_tol: 1e-8,
        ..Default::default()
    };
    let r = solve(&p, &DVector::from_vec(vec![-1.2, 1.0]), &opts).unwrap();
    assert_eq!(r.status, SolverStatus::Optimal);
    assert_relative_eq!(r.y[0], 1.0, epsilon = 1e-4);
    assert_relative_eq!(r.y[1], 1.0, epsilon = 1e-4);
}

#[test]
fn inconsistent_constraints_report_infeasible() {
    let p = Fns {
        n: 2,
        lo: vec![-INF; 2],
        hi: vec![INF; 2],
        clo: vec![-1.0],
        chi: vec![-1.0],
        f: |x: &DVector<f64>| x.norm_squared(),
        c: |x: &DVector<f64>| DVector::from_vec(vec![x.norm_squared()]),
    };
    let r = solve(&p, &DVector::from_vec(vec![0.5, 0.3]), &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolverStatus::Infeasible);
    assert!(!r.status.is_feasible());
}

#[test]
fn iteration_limit_is_reported() {
    let p = hs071();
    let opts = SolverOptions {
        max_iterations: 1,
        ..Default::default()
    };
    let r = solve(&p, &DVector::from_vec(vec![1.0, 5.0, 5.0, 1.0]), &opts).unwrap();
    assert!(matches!(r.status, SolverStatus::IterationLimit | SolverStatus::FeasibleNotOptimal));
    assert_eq!(r.iterations, 1);
}

#[test]
fn crossed_bounds_name_the_variable() {
    let mut p = hs071();
    p.lo[2] = 6.0;
    match solve(&p, &DVector::from_element(4, 2.0), &SolverOptions::default()) {
        Err(Error::InfeasibleBounds { name, .. }) => assert_eq!(name, "variable 2"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn fixed_variables_stay_fixed() {
    let p = Fns {
        n: 3,
        lo: vec![0.25, -INF, -INF],
        hi: vec![0.25, INF, INF],
        clo: vec![1.0],
        chi: vec![1.0],
        f: |x: &DVector<f64>| x.norm_squared(),
        c: |x: &DVector<f64>| DVector::from_vec(vec![x.sum()]),
    };
    let r = solve(&p, &DVector::from_vec(vec![0.0, 0.0, 0.0]), &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolverStatus::Optimal);
    assert_eq!(r.y[0], 0.25);
    assert_relative_eq!(r.y[1], 0.375, epsilon = 1e-8);
    assert_relative_eq!(r.y[2], 0.375, epsilon = 1e-8);
}

#[test]
fn grouped_fd_jacobian_matches_dense() {
    // banded map: c_i depends on y_i and y_{i+1}
    let c = |y: &DVector<f64>| DVector::from_fn(5, |i, _| (y[i] * y[i + 1]).sin() + y[i].powi(3));
    let y = DVector::from_fn(6, |i, _| 0.3 * i as f64 - 0.7);
    let pattern: Vec<Vec<usize>> = (0..6)
        .map(|j| (0..5).filter(|&i| i == j || i + 1 == j).collect())
        .collect();
    let groups = column_groups(&pattern, 5);
    assert!(groups.len() <= 3);
    let dense = fd_jacobian(|y| Ok(c(y)), &y, 1e-7, None).unwrap();
    let grouped = fd_jacobian(|y| Ok(c(y)), &y, 1e-7, Some(&pattern)).unwrap();
    assert_relative_eq!(dense, grouped, epsilon = 1e-12);
    let exact = DMatrix::from_fn(5, 6, |i, j| {
        let s = (y[i] * y[i + 1]).cos();
        if j == i {
            s * y[i + 1] + 3.0 * y[i] * y[i]
        } else if j == i + 1 {
            s * y[i]
        } else {
            0.0
        }
    });
    assert_relative_eq!(dense, exact, epsilon = 1e-5);
}

#[test]
fn status_labels() {
    assert_eq!(SolverStatus::FeasibleNotOptimal.to_string(), "feasible-not-optimal");
    assert_eq!(serde_json::to_string(&SolverStatus::IterationLimit).unwrap(), "\"iteration-limit\"");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Equality-constrained convex quadratic against the KKT linear system.
    #[test]
    fn equality_qp_matches_kkt_solve(
        a in proptest::collection::vec(-1.0f64..1.0, 25),
        g in proptest::collection::vec(-2.0f64..2.0, 5),
        e in proptest::collection::vec(-1.0f64..1.0, 10),
        b in proptest::collection::vec(-1.0f64..1.0, 2),
    ) {
        let a = DMatrix::from_vec(5, 5, a);
        let h = &a * a.transpose() + DMatrix::identity(5, 5);
        let g = DVector::from_vec(g);
        let e = DMatrix::from_vec(2, 5, e);
        prop_assume!(e.clone().svd(false, false).singular_values.min() > 0.1);
        let b = DVector::from_vec(b);
        let mut kkt = DMatrix::zeros(7, 7);
        kkt.view_mut((0, 0), (5, 5)).copy_from(&h);
        kkt.view_mut((0, 5), (5, 2)).copy_from(&e.transpose());
        kkt.view_mut((5, 0), (2, 5)).copy_from(&e);
        let mut rhs = DVector::zeros(7);
        rhs.rows_mut(0, 5).copy_from(&-&g);
        rhs.rows_mut(5, 2).copy_from(&b);
        let exact = kkt.lu().solve(&rhs).unwrap().rows(0, 5).into_owned();

        let (h2, g2, e2) = (h.clone(), g.clone(), e.clone());
        let p = Fns {
            n: 5,
            lo: vec![-INF; 5],
            hi: vec![INF; 5],
            clo: b.iter().copied().collect(),
            chi: b.iter().copied().collect(),
            f: move |x: &DVector<f64>| 0.5 * x.dot(&(&h2 * x)) + g2.dot(x),
            c: move |x: &DVector<f64>| &e2 * x,
        };
        let r = solve(&p, &DVector::zeros(5), &SolverOptions { optimality_tol: 1e-7, ..Default::default() }).unwrap();
        prop_assert_eq!(r.status, SolverStatus::Optimal);
        let y = DVector::from_vec(r.y);
        prop_assert!((&y - &exact).amax() < 1e-5, "{} vs {}", y, exact);
    }
}
