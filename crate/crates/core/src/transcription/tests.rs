use super::*;
use crate::model::parse_model;
use crate::nlpsolver::{fd_jacobian, solve, SolverOptions, SolverStatus};
use crate::testing::fixtures;
use approx::assert_relative_eq;
use nalgebra::Vector3;
use crate::nlpsolver::NlpProblem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PENDULUM: &str = include_str!("../../../../assets/models/pendulum.model");
const PLANAR2: &str = include_str!("../../../../assets/models/planar2.model");
const QUADRUPED: &str = include_str!("../../../../assets/models/hyq_approx.model");
const STANDING: &str = include_str!("../../../../assets/tasks/standing.task");
const CROUCHING: &str = include_str!("../../../../assets/tasks/crouching.task");
const REARING: &str = include_str!("../../../../assets/tasks/rearing.task");
const SWING: &str = include_str!("../../../../assets/tasks/pendulum_swing.task");

fn quadruped() -> RobotModel {
    parse_model(QUADRUPED).unwrap()
}

fn pendulum_task(nodes: usize) -> (RobotModel, TaskSpec) {
    let m = parse_model(PENDULUM).unwrap();
    let t = parse_task(SWING, &m).unwrap().with_nodes(nodes).unwrap();
    (m, t)
}

#[test]
fn layout_sizes() {
    let m = quadruped();
    let t = parse_task(STANDING, &m).unwrap();
    let l = build_layout(&m, &t);
    assert_eq!(l.per_node() + 1, 49);
    assert_eq!(l.n_vars(), 289);
    assert_eq!(size_report(&m, &t).variables_per_node, 49);

    let (m, t) = pendulum_task(2);
    let l = build_layout(&m, &t);
    assert_eq!(l.n_vars(), 7);
    assert_eq!((l.x(1), l.u(1), l.dt(0)), (3, 5, 6));
}

#[test]
fn two_phase_layout_shares_the_transition_node() {
    let m = quadruped();
    let t = parse_task(REARING, &m).unwrap();
    let l = build_layout(&m, &t);
    assert_eq!(l.nodes, 9);
    assert_eq!(l.phase_nodes, vec![(0, 4), (4, 8)]);
    assert_eq!(l.node_phases(4), vec![0, 1]);
    assert_eq!(l.interval_phase(3), 0);
    assert_eq!(l.interval_phase(4), 1);
    assert_eq!(l.n_vars(), 9 * 48 + 2);
}

#[test]
fn size_report_itemization() {
    let m = quadruped();
    let t = parse_task(STANDING, &m).unwrap();
    let r = size_report(&m, &t);
    assert_eq!(
        (r.defects, r.torque_upper, r.torque_lower, r.height, r.velocity, r.acceleration, r.friction_cones),
        (36, 12, 12, 4, 12, 12, 4)
    );
    assert_eq!(r.core_constraints(), 48);
    assert_eq!(r.all_constraints(), 92);
    let p = assemble_nlp(&m, &t).unwrap();
    // every node carries its own rows, every interval its defects
    assert_eq!(p.n_cons(), 6 * (92 - 36) + 5 * 36);
}

#[test]
fn equilibrium_has_zero_defects() {
    let (m, t) = pendulum_task(4);
    let p = assemble_nlp(&m, &t).unwrap();
    let mut y = DVector::zeros(p.layout.n_vars());
    y[p.layout.dt(0)] = 0.2;
    assert_eq!(p.defects(&y).unwrap().amax(), 0.0);
}

/// Free pendulum `θ'' = -g sin θ` by fine RK4.
fn pendulum_flow(x: [f64; 2], t: f64) -> [f64; 2] {
    let f = |s: [f64; 2]| [s[1], -9.81 * s[0].sin()];
    let steps = 2000;
    let h = t / steps as f64;
    let mut s = x;
    for _ in 0..steps {
        let k1 = f(s);
        let k2 = f([s[0] + 0.5 * h * k1[0], s[1] + 0.5 * h * k1[1]]);
        let k3 = f([s[0] + 0.5 * h * k2[0], s[1] + 0.5 * h * k2[1]]);
        let k4 = f([s[0] + h * k3[0], s[1] + h * k3[1]]);
        for i in 0..2 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    s
}

fn exact_defect(dt: f64) -> f64 {
    let (m, t) = pendulum_task(2);
    let p = assemble_nlp(&m, &t).unwrap();
    let x0 = [0.7, -0.4];
    let x1 = pendulum_flow(x0, dt);
    let y = DVector::from_vec(vec![x0[0], x0[1], 0.0, x1[0], x1[1], 0.0, dt]);
    p.defects(&y).unwrap().amax()
}

#[test]
fn trapezoid_defect_is_third_order() {
    for dt in [0.1, 0.05, 0.025] {
        let ratio = exact_defect(dt) / exact_defect(dt / 2.0);
        assert!((ratio - 8.0).abs() <= 2.0, "dt {dt}: ratio {ratio}");
    }
}

#[test]
fn torque_row_on_a_knee_curve() {
    let src = PENDULUM.replace("max = 20", "max = 0 100, 1 200").replace("min = -20", "");
    let m = parse_model(&src).unwrap();
    let t = parse_task(SWING, &m).unwrap().with_nodes(2).unwrap();
    let p = assemble_nlp(&m, &t).unwrap();
    let y = DVector::from_vec(vec![0.5, 0.0, 160.0, 0.5, 0.0, 150.0, 0.5]);
    let rows = p.torque_path_constraints(&y);
    assert_eq!(rows.len(), 2);
    assert_relative_eq!(rows[0], -10.0, epsilon = 1e-12);
    assert_relative_eq!(rows[1], 0.0, epsilon = 1e-12);
}

#[test]
fn smoothed_cone_values() {
    let eps = DEFAULT_FRICTION_EPSILON;
    let vertical = smoothed_cone(&Vector3::new(0.0, 0.0, 200.0), 0.5, eps);
    assert!((vertical + 100.0).abs() < 1e-6, "{vertical}");
    let sliding = smoothed_cone(&Vector3::new(100.0, 0.0, 100.0), 0.5, eps);
    assert!((sliding - 50.0).abs() < 1e-2, "{sliding}");
    assert_relative_eq!(cone_margin(&Vector3::new(3.0, 4.0, 20.0), 0.5), -5.0);
}

#[test]
fn standing_guess_is_a_feasible_zero_cost_equilibrium() {
    let m = quadruped();
    let t = parse_task(STANDING, &m).unwrap();
    let p = assemble_nlp(&m, &t).unwrap();
    let y = p.initial_guess().unwrap();
    assert!(p.objective(&y).unwrap().abs() < 1e-12);
    assert!(p.defects(&y).unwrap().amax() < 1e-3);
    let (lo, hi) = p.con_bounds();
    let c = p.constraints(&y).unwrap();
    assert!(crate::nlpsolver::max_violation(&c, &lo, &hi) < 1e-8);
    let res = p.contact_kinematic_constraints(&y).unwrap();
    assert!(res.max_height() < 1e-9 && res.max_velocity() < 1e-12 && res.max_acceleration() < 1e-8);
    for (_, _, f) in p.contact_forces(&y).unwrap() {
        for c in 0..f.len() {
            assert!(cone_margin(&f.contact(c), 0.5) < 0.0);
        }
    }
}

#[test]
fn crouching_cost_is_positive_at_the_standing_trajectory() {
    let m = quadruped();
    let stand = assemble_nlp(&m, &parse_task(STANDING, &m).unwrap()).unwrap();
    let crouch = assemble_nlp(&m, &parse_task(CROUCHING, &m).unwrap()).unwrap();
    let y = stand.initial_guess().unwrap();
    assert!(crouch.objective(&y).unwrap() > 0.0);
}

#[test]
fn lifted_foot_shows_in_the_height_row() {
    let m = quadruped();
    let t = parse_task(STANDING, &m).unwrap();
    let p = assemble_nlp(&m, &t).unwrap();
    let mut y = p.initial_guess().unwrap();
    // raise the whole robot of node 2 by 5 cm
    y[p.layout.x(2) + 2] += 0.05;
    let res = p.contact_kinematic_constraints(&y).unwrap();
    for h in &res.height[2] {
        assert_relative_eq!(*h, 0.05, epsilon = 1e-9);
    }
}

#[test]
fn acceleration_rows_vanish_for_consistent_states() {
    use rand::{Rng, SeedableRng};
    let m = quadruped();
    let t = parse_task(STANDING, &m).unwrap();
    let p = assemble_nlp(&m, &t).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let all = [0, 1, 2, 3];
    for _ in 0..20 {
        let mut q = fixtures::quadruped_stance(&m, 0.6);
        for i in 0..q.len() {
            q[i] += rng.random_range(-0.1..0.1);
        }
        let raw = DVector::from_fn(18, |_, _| rng.random_range(-1.0..1.0));
        let jc = rbd::contact_jacobian(&m, &q, &all).unwrap();
        let (pinv, _) = projection::pseudo_inverse(&jc, projection::PINV_CUTOFF);
        let qd = &raw - &pinv * (&jc * &raw);
        let u = DVector::from_fn(12, |_, _| rng.random_range(-50.0..50.0));
        let mut x = DVector::zeros(36);
        x.rows_mut(0, 18).copy_from(&q);
        x.rows_mut(18, 18).copy_from(&qd);
        let ev = p.phase_eval(0, &x, &u).unwrap();
        assert!(ev.accel.amax() < 1e-8, "{}", ev.accel.amax());
    }
}

#[test]
fn structured_jacobian_matches_generic_differences() {
    let m = parse_model(PLANAR2).unwrap();
    let src = "
[phase planted]
contacts = tip
nodes = 3
duration = 0.2 1

[phase free]
contacts = none
nodes = 3
duration = 0.2 1

[cost]
state_weights = 1 1 0.1 0.1
control_weights = 0.01 0.01

[boundary]
initial = 0.3 -0.6 0 0
";
    let t = parse_task(src, &m).unwrap();
    let p = assemble_nlp(&m, &t).unwrap();
    let mut y = p.initial_guess().unwrap();
    for i in 0..y.len() {
        y[i] += 0.05 * ((i as f64) * 0.77).sin();
    }
    let structured = p.structured_jacobian(&y, 1e-6).unwrap();
    let dense = fd_jacobian(|y| p.constraints(y), &y, 1e-7, None).unwrap();
    let grouped = fd_jacobian(|y| p.constraints(y), &y, 1e-7, Some(&p.sparsity())).unwrap();
    let scale = 1.0 + dense.amax();
    assert!((&structured - &dense).amax() / scale < 1e-5, "{}", (&structured - &dense).amax());
    assert!((&grouped - &dense).amax() / scale < 1e-9);
    let g = p.gradient(&y, 1e-6).unwrap();
    let fd = crate::nlpsolver::fd_gradient(|y| p.objective(y), &y, 1e-6).unwrap();
    assert!((&g - &fd).amax() < 1e-6 * (1.0 + g.amax()));
}

#[test]
fn defect_jacobian_matches_pendulum_linearization() {
    let (m, t) = pendulum_task(2);
    let p = assemble_nlp(&m, &t).unwrap();
    let (th0, w0, u0, th1, w1, u1, dt) = (0.4, 0.3, 1.5, 0.5, -0.2, -2.0, 0.1);
    let y = DVector::from_vec(vec![th0, w0, u0, th1, w1, u1, dt]);
    let jac = p.structured_jacobian(&y, 1e-6).unwrap();
    let (r, _) = p.defect_rows();
    let g = 9.81;
    // ζ = x1 - x0 - dt/2 (f0 + f1), f = [ω, u - g sin θ]
    let exact = DMatrix::from_row_slice(
        2,
        7,
        &[
            -1.0, -dt / 2.0, 0.0, 1.0, -dt / 2.0, 0.0, -(w0 + w1) / 2.0,
            dt / 2.0 * g * th0.cos(), -1.0, -dt / 2.0, dt / 2.0 * g * th1.cos(), 1.0, -dt / 2.0,
            -((u0 - g * th0.sin()) + (u1 - g * th1.sin())) / 2.0,
        ],
    );
    assert!((jac.rows(r, 2) - &exact).amax() < 1e-5, "{}", jac.rows(r, 2));
}

#[test]
fn degenerate_task_gives_a_constant_guess() {
    let (m, mut t) = pendulum_task(5);
    t.final_guess = Some(t.initial.clone());
    t.final_min = DVector::from_element(2, f64::NEG_INFINITY);
    t.final_max = DVector::from_element(2, f64::INFINITY);
    let p = assemble_nlp(&m, &t).unwrap();
    let y = p.initial_guess().unwrap();
    for k in 0..5 {
        assert_eq!(p.layout.state(&y, k), t.initial);
        assert_eq!(p.layout.control(&y, k)[0], 0.0);
    }
    assert_eq!(y[p.layout.dt(0)], 0.5 * (0.25 + 0.75));
}

#[test]
fn rearing_guess_is_finite() {
    let m = quadruped();
    let p = assemble_nlp(&m, &parse_task(REARING, &m).unwrap()).unwrap();
    let y = p.initial_guess().unwrap();
    let c = p.constraints(&y).unwrap();
    assert!(c.iter().all(|v| v.is_finite()));
    // hind-feet-only dynamics cannot hold the stance still
    assert!(p.defects(&y).unwrap().amax() > 1e-3);
}

#[test]
fn crossed_bounds_name_the_variable() {
    let (m, mut t) = pendulum_task(3);
    t.x_max[1] = 5.0;
    t.final_min[1] = 6.0;
    t.final_max[1] = 7.0;
    match assemble_nlp(&m, &t) {
        Err(Error::InfeasibleBounds { name, .. }) => assert_eq!(name, "x[1] at node 2"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn pendulum_swing_up_converges_and_refines() {
    let (m, t) = pendulum_task(10);
    let p = assemble_nlp(&m, &t).unwrap();
    let r = solve(&p, &p.initial_guess().unwrap(), &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolverStatus::Optimal, "{r:?}");
    let y = DVector::from_vec(r.y.clone());
    assert!(p.defects(&y).unwrap().amax() <= 1e-6);

    let fine = assemble_nlp(&m, &t.clone().with_nodes(30).unwrap()).unwrap();
    let rf = solve(&fine, &fine.initial_guess().unwrap(), &SolverOptions::default()).unwrap();
    assert_eq!(rf.status, SolverStatus::Optimal);
    assert!((r.objective - rf.objective).abs() <= 0.05 * rf.objective, "{} vs {}", r.objective, rf.objective);
}

#[test]
fn lagrangian_hessian_matches_gradient_differences() {
    let (m, t) = pendulum_task(6);
    let p = assemble_nlp(&m, &t).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut y = p.initial_guess().unwrap();
    for v in y.iter_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    let lambda = DVector::from_fn(p.n_cons(), |_, _| rng.random_range(-2.0..2.0));
    let h = p.hessian_of_lagrangian(&y, &lambda).unwrap();
    let grad = |y: &DVector<f64>| {
        NlpProblem::gradient(&p, y, 1e-6).unwrap() - NlpProblem::jacobian(&p, y, 1e-7).unwrap().tr_mul(&lambda)
    };
    let e = 1e-5;
    let mut worst: f64 = 0.0;
    for j in 0..y.len() {
        let mut yp = y.clone();
        yp[j] += e;
        let mut ym = y.clone();
        ym[j] -= e;
        let col = (grad(&yp) - grad(&ym)) / (2.0 * e);
        for i in 0..y.len() {
            worst = worst.max((col[i] - h[(i, j)]).abs() / (1.0 + h[(i, j)].abs()));
        }
    }
    assert!(worst < 1e-3, "worst {worst}");
}

