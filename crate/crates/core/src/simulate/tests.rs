use super::*;
use crate::model::parse_model;
use crate::testing::fixtures;
use crate::transcription::gravity_compensation;
use crate::tvlqr::{synthesize, LqrWeights};
use nalgebra::{dvector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PENDULUM: &str = include_str!("../../../../assets/models/pendulum.model");
const QUADRUPED: &str = include_str!("../../../../assets/models/hyq_approx.model");
const ALL_FEET: [usize; 4] = [0, 1, 2, 3];

fn pendulum() -> RobotModel {
    parse_model(PENDULUM).unwrap()
}

fn quadruped() -> RobotModel {
    parse_model(QUADRUPED).unwrap()
}

fn stance(m: &RobotModel) -> DVector<f64> {
    let mut x = DVector::zeros(2 * m.nv());
    x.rows_mut(0, m.nv()).copy_from(&fixtures::quadruped_stance(m, 0.6));
    x
}

fn hold(x: DVector<f64>, u: DVector<f64>, phases: &[(f64, Vec<usize>)]) -> TrajectorySolution {
    let mut times = vec![0.0];
    let mut phase_nodes = Vec::new();
    for (i, (len, _)) in phases.iter().enumerate() {
        times.push(times[i] + len);
        phase_nodes.push((i, i + 1));
    }
    let n = times.len();
    TrajectorySolution {
        times,
        states: vec![x; n],
        controls: vec![u; n],
        durations: phases.iter().map(|p| p.0).collect(),
        phase_nodes,
        phase_contacts: phases.iter().map(|p| p.1.clone()).collect(),
        phase_friction: vec![0.5; phases.len()],
        forces: Vec::new(),
    }
}

fn consistent_velocity(m: &RobotModel, x: &DVector<f64>, contacts: &[usize], rng: &mut impl Rng) -> DVector<f64> {
    let nv = m.nv();
    let q = x.rows(0, nv).into_owned();
    let jc = rbd::contact_jacobian(m, &q, contacts).unwrap();
    let raw = DVector::from_fn(nv, |_, _| rng.random_range(-0.5..0.5));
    let (pinv, _) = projection::pseudo_inverse(&jc, 1e-10);
    &raw - pinv * (&jc * &raw)
}

#[test]
fn gravity_compensated_stance_stays_put() {
    let m = quadruped();
    let x = stance(&m);
    let u = gravity_compensation(&m, &x, &ALL_FEET).unwrap();
    let qd = DVector::zeros(m.nv());
    let cache = projection::build_projection(&m, &x.rows(0, m.nv()).into_owned(), &qd, &ALL_FEET).unwrap();
    let qdd = projection::projected_forward_dynamics(&m, &qd, &u, &cache).unwrap();
    assert!(qdd.amax() < 1e-10, "{}", qdd.amax());
    let plan = hold(x.clone(), u, &[(2.0, ALL_FEET.to_vec())]);
    let log = rollout(&m, &plan, Policy::OpenLoop, &x, &Default::default()).unwrap();
    assert_eq!(log.len(), 2001);
    assert!((log.times[2000] - 2.0).abs() < 1e-12);
    let worst = log.states.iter().map(|s| (s - &x).amax()).fold(0.0, f64::max);
    assert!(worst < 1e-5, "moved {worst}");

    let r = drift_report(&log);
    assert!(r.drift.value <= 1e-9, "{r:?}");
    assert!(r.cone_violation.value <= 1e-9, "{r:?}");
    assert!(r.penetration.value <= 1e-9, "{r:?}");
    assert!(r.contact_height.value <= 1e-9, "{r:?}");
    assert!(log.forces[0].iter().all(|f| f[2] > 0.0));
    let total: f64 = log.forces[1000].iter().map(|f| f[2]).sum();
    assert!((total - m.total_mass() * 9.81).abs() < 1e-6 * total, "{total}");
}

#[test]
fn corrupted_heights_are_flagged_at_their_sample() {
    let m = quadruped();
    let x = stance(&m);
    let u = gravity_compensation(&m, &x, &ALL_FEET).unwrap();
    let plan = hold(x.clone(), u, &[(0.2, ALL_FEET.to_vec())]);
    let mut log = rollout(&m, &plan, Policy::OpenLoop, &x, &Default::default()).unwrap();
    log.heights[137][1] = 0.05;
    log.heights[61][2] = -0.01;
    let r = drift_report(&log);
    assert_eq!(r.contact_height.time, log.times[137]);
    assert_eq!(r.contact_height.value, 0.05);
    assert_eq!(r.penetration.time, log.times[61]);
    assert_eq!(r.penetration.value, 0.01);
}

#[test]
fn both_integrators_agree() {
    let m = quadruped();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x = stance(&m);
    let u = gravity_compensation(&m, &x, &ALL_FEET).unwrap();
    let qd = consistent_velocity(&m, &x, &ALL_FEET, &mut rng);
    x.rows_mut(m.nv(), m.nv()).copy_from(&qd);
    let plan = hold(x.clone(), u, &[(0.1, ALL_FEET.to_vec())]);
    let run = |integrator| {
        let opts = RolloutOptions { integrator, ..Default::default() };
        rollout(&m, &plan, Policy::OpenLoop, &x, &opts).unwrap()
    };
    let a = run(Integrator::Projected);
    let b = run(Integrator::Kkt);
    let gap = (a.final_state() - b.final_state()).amax();
    assert!(gap < 1e-8, "gap {gap}");
    assert!(drift_report(&a).drift.value < 1e-6);
}

#[test]
fn free_motion_with_contacts_does_not_gain_energy() {
    let m = quadruped().with_gravity(Vector3::zeros());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let mut x = stance(&m);
        let qd = consistent_velocity(&m, &x, &ALL_FEET, &mut rng);
        x.rows_mut(m.nv(), m.nv()).copy_from(&qd);
        let plan = hold(x.clone(), DVector::zeros(m.nu()), &[(0.3, ALL_FEET.to_vec())]);
        let log = rollout(&m, &plan, Policy::OpenLoop, &x, &Default::default()).unwrap();
        let e0 = kinetic_energy(&m, &x).unwrap();
        for s in &log.states {
            assert!(kinetic_energy(&m, s).unwrap() <= e0 * (1.0 + 1e-8));
        }
    }
}

#[test]
fn rk4_halving_is_fourth_order() {
    let m = pendulum();
    let mut plan = hold(dvector![0.0, 0.0], dvector![0.0], &[(1.0, vec![]), (1.0, vec![])]);
    plan.controls = vec![dvector![2.0], dvector![-5.0], dvector![4.0]];
    let ratio = convergence_ratio(&m, &plan, Policy::OpenLoop, &dvector![0.3, 0.0], 0.04).unwrap();
    assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn contact_set_switches_at_the_phase_boundary() {
    let m = quadruped();
    let x = stance(&m);
    let u = gravity_compensation(&m, &x, &ALL_FEET).unwrap();
    let plan = hold(x.clone(), u, &[(0.0105, ALL_FEET.to_vec()), (0.0095, vec![2, 3])]);
    let log = rollout(&m, &plan, Policy::OpenLoop, &x, &Default::default()).unwrap();
    assert_eq!(log.len(), 21);
    assert_eq!(log.phases[10], 0);
    assert_eq!(log.phases[11], 1);
    assert_eq!(log.active[11], vec![2, 3]);
    assert_eq!(log.forces[15][0], [0.0; 3]);
    assert!(log.forces[15][2][2] > 0.0);
}

#[test]
fn inconsistent_start_is_rejected() {
    let m = quadruped();
    let mut x = stance(&m);
    x[m.nv() + 2] = 0.1;
    let u = gravity_compensation(&m, &stance(&m), &ALL_FEET).unwrap();
    let plan = hold(stance(&m), u, &[(0.1, ALL_FEET.to_vec())]);
    assert!(rollout(&m, &plan, Policy::OpenLoop, &x, &Default::default()).is_err());
}

#[test]
fn blow_up_reports_its_time() {
    let m = pendulum();
    let mut plan = hold(dvector![0.0, 0.0], dvector![0.0], &[(1.0, vec![])]);
    plan.controls[1] = dvector![f64::MAX];
    let err = rollout(&m, &plan, Policy::OpenLoop, &dvector![0.0, 0.0], &Default::default()).unwrap_err();
    match err {
        Error::NonFinite { time, .. } => assert!(time > 0.0 && time <= 1.0),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn feedback_holds_the_inverted_pendulum() {
    let m = pendulum();
    let up = dvector![std::f64::consts::PI, 0.0];
    let plan = hold(up.clone(), dvector![0.0], &[(2.0, vec![])]);
    let w = LqrWeights {
        q: DMatrix::identity(2, 2),
        r: nalgebra::dmatrix![0.1],
        qf: DMatrix::identity(2, 2),
    };
    let (sched, _, _) = synthesize(&m, &plan, &w, 0.05).unwrap();
    let x0 = &up + dvector![0.01, 0.0];
    let open = rollout(&m, &plan, Policy::OpenLoop, &x0, &Default::default()).unwrap();
    let closed = rollout(&m, &plan, Policy::Feedback(&sched), &x0, &Default::default()).unwrap();
    let (eo, ec) = (*open.tracking_error.last().unwrap(), *closed.tracking_error.last().unwrap());
    assert!(eo > 0.1, "open loop error {eo}");
    assert!(ec < 1e-3, "closed loop error {ec}");
}

#[test]
fn perturbation_is_consistent_and_about_one_percent() {
    let m = quadruped();
    let x = stance(&m);
    let xp = perturb_state(&m, &x, &ALL_FEET, 0.01).unwrap();
    assert!(velocity_drift(&m, &xp, &ALL_FEET).unwrap() < 1e-12);
    let shift = (&xp - &x).norm();
    assert!(shift > 1e-3 && shift < 0.05, "shift {shift}");
    let q = xp.rows(0, m.nv()).into_owned();
    for c in ALL_FEET {
        assert!(rbd::contact_height(&m, &q, c).unwrap().abs() < 1e-4);
    }
}
