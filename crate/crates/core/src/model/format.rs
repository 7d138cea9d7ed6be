//! Robot description files.
//!
//! ```text
//! [options]
//! name = pendulum
//! fixed_base = true            # default false
//! gravity = 0 0 -9.81          # default 0 0 -9.81
//!
//! [link base]
//! mass = 1                     # kg
//! com = 0 0 0                  # m, link frame
//! inertia = 0.01 0.01 0.01 0 0 0   # ixx iyy izz ixy ixz iyz, kg m^2 about the COM
//!
//! [joint hinge]
//! parent = base
//! child = bob
//! axis = 0 1 0                 # unit vector, joint frame
//! origin = 0 0 0               # m, parent frame (default 0)
//! rpy = 0 0 0                  # rad, parent frame (default 0)
//! limits = -3 3                # rad (default unbounded)
//! velocity_limit = 10          # rad/s (default unbounded)
//!
//! [contact_point tip]
//! link = bob
//! offset = 0 0 -1              # m, link frame
//!
//! [torque_limit hinge]
//! max = 0 100, 1 200           # angle/torque breakpoints, or a single constant
//! min = -50                    # optional lower curve
//! ```

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{ContactPointSpec, JointSpec, LinkSpec, RobotModel, TorqueCurve, TorqueLimitCurve};
use crate::error::{Error, Result};
use crate::text::{self, fmt_f64, fmt_numbers, Entry, Section};

pub fn load_model(path: impl AsRef<Path>) -> Result<RobotModel> {
    let src = std::fs::read_to_string(path)?;
    parse_model(&src)
}

pub fn parse_model(src: &str) -> Result<RobotModel> {
    let sections = text::parse_sections(src)?;
    let mut name = String::from("robot");
    let mut fixed_base = false;
    let mut gravity = Vector3::from(super::DEFAULT_GRAVITY);
    let mut seen_options = false;

    let mut link_sections = Vec::new();
    let mut joint_sections = Vec::new();
    let mut contact_sections = Vec::new();
    let mut torque_sections = Vec::new();

    for s in &sections {
        match s.kind.as_str() {
            "options" => {
                if seen_options {
                    return Err(Error::parse(s.line, None, "duplicate [options] section"));
                }
                seen_options = true;
                s.check_keys(&["name", "fixed_base", "gravity"])?;
                if let Some(e) = s.get("name") {
                    name = e.word()?.to_owned();
                }
                if let Some(e) = s.get("fixed_base") {
                    fixed_base = e.boolean()?;
                }
                if let Some(e) = s.get("gravity") {
                    gravity = Vector3::from(e.fixed::<3>()?);
                }
            }
            "link" => link_sections.push(s),
            "joint" => joint_sections.push(s),
            "contact_point" => contact_sections.push(s),
            "torque_limit" => torque_sections.push(s),
            other => {
                return Err(Error::parse(s.line, None, format!("unknown section kind `{other}`")))
            }
        }
    }

    let links = link_sections
        .iter()
        .map(|s| parse_link(s))
        .collect::<Result<Vec<_>>>()?;
    let link_index = |e: &Entry| -> Result<usize> {
        let w = e.word()?;
        links
            .iter()
            .position(|l| l.name == w)
            .ok_or_else(|| e.err(format!("unknown link `{w}`")))
    };

    let mut joints = Vec::with_capacity(joint_sections.len());
    for s in &joint_sections {
        s.check_keys(&["parent", "child", "axis", "origin", "rpy", "limits", "velocity_limit"])?;
        let origin = optional_vec3(s, "origin")?;
        let rpy = optional_vec3(s, "rpy")?;
        let limits = match s.get("limits") {
            Some(e) => {
                let [lo, hi] = e.fixed::<2>()?;
                (lo, hi)
            }
            None => (f64::NEG_INFINITY, f64::INFINITY),
        };
        let velocity_limit = match s.get("velocity_limit") {
            Some(e) => e.number()?,
            None => f64::INFINITY,
        };
        joints.push(JointSpec::new(
            s.require_name()?,
            link_index(s.require("parent")?)?,
            link_index(s.require("child")?)?,
            Vector3::from(s.require("axis")?.fixed::<3>()?),
            origin,
            rpy,
            limits,
            velocity_limit,
        ));
    }

    let mut contacts = Vec::with_capacity(contact_sections.len());
    for s in &contact_sections {
        s.check_keys(&["link", "offset"])?;
        contacts.push(ContactPointSpec {
            label: s.require_name()?.to_owned(),
            link: link_index(s.require("link")?)?,
            offset: optional_vec3(s, "offset")?,
        });
    }

    let mut torque_limits = Vec::with_capacity(torque_sections.len());
    for s in &torque_sections {
        s.check_keys(&["max", "min"])?;
        let jname = s.require_name()?;
        let joint = joints
            .iter()
            .position(|j| j.name == jname)
            .ok_or_else(|| Error::parse(s.line, None, format!("unknown joint `{jname}`")))?;
        torque_limits.push(TorqueLimitCurve {
            joint,
            max: parse_curve(s.require("max")?)?,
            min: s.get("min").map(parse_curve).transpose()?,
        });
    }

    RobotModel::new(name, fixed_base, gravity, links, joints, contacts, torque_limits)
}

fn parse_link(s: &Section) -> Result<LinkSpec> {
    s.check_keys(&["mass", "com", "inertia"])?;
    let [ixx, iyy, izz, ixy, ixz, iyz] = s.require("inertia")?.fixed::<6>()?;
    Ok(LinkSpec {
        name: s.require_name()?.to_owned(),
        mass: s.require("mass")?.number()?,
        com: optional_vec3(s, "com")?,
        inertia: Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz),
        parent_joint: None,
    })
}

fn optional_vec3(s: &Section, key: &str) -> Result<Vector3<f64>> {
    Ok(match s.get(key) {
        Some(e) => Vector3::from(e.fixed::<3>()?),
        None => Vector3::zeros(),
    })
}

fn parse_curve(e: &Entry) -> Result<TorqueCurve> {
    let curve = if e.value.contains(',') {
        TorqueCurve::Table(e.pairs()?)
    } else {
        let v = e.numbers()?;
        match v.as_slice() {
            [c] => TorqueCurve::Constant(*c),
            [a, t] => TorqueCurve::Table(vec![(*a, *t)]),
            _ => return Err(e.err("expected a constant or comma-separated breakpoints")),
        }
    };
    curve.validate().map_err(|m| e.err(m))?;
    Ok(curve)
}

/// Writes a model in the description format; [`parse_model`] reads it back unchanged.
pub fn serialize_model(model: &RobotModel) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let v3 = |v: &Vector3<f64>| fmt_numbers(v.iter());
    let _ = writeln!(out, "[options]");
    let _ = writeln!(out, "name = {}", model.name());
    let _ = writeln!(out, "fixed_base = {}", model.fixed_base());
    let _ = writeln!(out, "gravity = {}", v3(&model.gravity()));
    for l in model.links() {
        let i = &l.inertia;
        let _ = writeln!(out, "\n[link {}]", l.name);
        let _ = writeln!(out, "mass = {}", fmt_f64(l.mass));
        let _ = writeln!(out, "com = {}", v3(&l.com));
        let _ = writeln!(
            out,
            "inertia = {}",
            fmt_numbers(&[i[(0, 0)], i[(1, 1)], i[(2, 2)], i[(0, 1)], i[(0, 2)], i[(1, 2)]])
        );
    }
    let links = model.links();
    for j in model.joints() {
        let _ = writeln!(out, "\n[joint {}]", j.name);
        let _ = writeln!(out, "parent = {}", links[j.parent].name);
        let _ = writeln!(out, "child = {}", links[j.child].name);
        let _ = writeln!(out, "axis = {}", v3(&j.axis));
        let _ = writeln!(out, "origin = {}", v3(&j.origin));
        let _ = writeln!(out, "rpy = {}", v3(&j.rpy));
        let _ = writeln!(out, "limits = {}", fmt_numbers(&[j.position_limits.0, j.position_limits.1]));
        let _ = writeln!(out, "velocity_limit = {}", fmt_f64(j.velocity_limit));
    }
    for c in model.contact_points() {
        let _ = writeln!(out, "\n[contact_point {}]", c.label);
        let _ = writeln!(out, "link = {}", links[c.link].name);
        let _ = writeln!(out, "offset = {}", v3(&c.offset));
    }
    let curve = |c: &TorqueCurve| match c {
        TorqueCurve::Constant(v) => fmt_f64(*v),
        TorqueCurve::Table(p) => p
            .iter()
            .map(|(a, t)| format!("{} {}", fmt_f64(*a), fmt_f64(*t)))
            .collect::<Vec<_>>()
            .join(", "),
    };
    for t in model.torque_limits() {
        let _ = writeln!(out, "\n[torque_limit {}]", model.joints()[t.joint].name);
        let _ = writeln!(out, "max = {}", curve(&t.max));
        if let Some(min) = &t.min {
            let _ = writeln!(out, "min = {}", curve(min));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const PENDULUM: &str = "
[options]
name = pendulum
fixed_base = true

[link base]
mass = 1
inertia = 0.01 0.01 0.01 0 0 0

[link bob]
mass = 1
com = 0 0 -1
inertia = 0 0 0 0 0 0

[joint hinge]
parent = base
child = bob
axis = 0 1 0

[contact_point tip]
link = bob
offset = 0 0 -1

[torque_limit hinge]
max = 0 100, 1 200
min = -50
";

    #[test]
    fn parses_pendulum() {
        let m = parse_model(PENDULUM).unwrap();
        assert_eq!(m.n_joints(), 1);
        assert_eq!(m.nv(), 1);
        assert_eq!(m.contact_points()[0].label, "tip");
        assert_eq!(m.torque_limit(0).unwrap().min, Some(TorqueCurve::Constant(-50.0)));
        let floating = parse_model(&PENDULUM.replace("fixed_base = true", "fixed_base = false")).unwrap();
        assert_eq!(floating.nv(), 7);
    }

    #[test]
    fn serialize_round_trip() {
        let m = parse_model(PENDULUM).unwrap();
        let again = parse_model(&serialize_model(&m)).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn negative_mass_is_a_validation_error() {
        let err = parse_model(&PENDULUM.replace("mass = 1\ncom", "mass = -1\ncom")).unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)), "{err}");
    }

    #[test]
    fn parse_errors_name_line_and_field() {
        let err = parse_model(&PENDULUM.replace("axis = 0 1 0", "axis = 0 1")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("field `axis`") && msg.contains("line 18"), "{msg}");
        let err = parse_model(&PENDULUM.replace("parent = base", "parent = nowhere")).unwrap_err();
        assert!(err.to_string().contains("unknown link `nowhere`"));
        let err = parse_model("[widget]\n").unwrap_err();
        assert!(err.to_string().contains("unknown section kind"));
    }
}
