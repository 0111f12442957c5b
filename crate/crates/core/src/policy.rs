//! Argmax feedback policy of a solved value grid.

use crate::error::{Error, Result};
use crate::hamiltonian::eval_hmax;
use crate::model::ProblemSpec;
use crate::montecarlo::FeedbackPolicy;
use crate::pde::GridFunction;

/// Stores `argmax_alpha (b du + h u + l)` at every node.
pub fn extract_policy(u: &GridFunction, du: &GridFunction, spec: &ProblemSpec) -> Result<FeedbackPolicy> {
    let mesh = *u.mesh();
    if du.mesh() != u.mesh() {
        return Err(Error::ShapeMismatch("value and derivative grids differ".into()));
    }
    let mut values = Vec::with_capacity(mesh.len());
    for j in 0..mesh.n_t {
        let t = mesh.t(j);
        for i in 0..mesh.n_x {
            let (_, a) = eval_hmax(du.get(j, i), u.get(j, i), mesh.x(i), t, spec)?;
            values.push(a);
        }
    }
    FeedbackPolicy::new(mesh, spec.controls.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::control_expression;
    use crate::model::{BoundaryData, ControlSet, ControlledField, ScalarField2};
    use crate::pde::{dx, Mesh};

    fn spec(controls: ControlSet) -> ProblemSpec {
        ProblemSpec::new(
            ScalarField2::constant(1.0),
            ControlledField::new(|_, _, a| a),
            ControlledField::new(|x, _, a| -0.1 * a * a * (1.0 + x)),
            ControlledField::new(|_, t, a| (a - t).sin()),
            BoundaryData::zero(1.0),
            controls,
            1.0,
        )
        .unwrap()
    }

    fn mesh() -> Mesh {
        Mesh::new(3.0, 13, 9, 1.0).unwrap()
    }

    fn drift_only() -> ProblemSpec {
        let mut s = spec(ControlSet::interval(-1.0, 1.0).unwrap());
        s.discount = ControlledField::constant(0.0);
        s.running_reward = ControlledField::constant(0.0);
        s
    }

    #[test]
    fn positive_gradient_selects_upper_control() {
        let m = mesh();
        let u = GridFunction::from_fn(m, |x, _| x);
        let p = extract_policy(&u, &dx(&u), &drift_only()).unwrap();
        assert!(p.values().iter().all(|&a| a == 1.0));
    }

    #[test]
    fn flat_gradient_breaks_ties_low() {
        let m = mesh();
        let u = GridFunction::from_fn(m, |_, _| 0.4);
        let p = extract_policy(&u, &GridFunction::zeros(m), &drift_only()).unwrap();
        assert!(p.values().iter().all(|&a| a == -1.0));
    }

    #[test]
    fn stored_control_reproduces_hamiltonian() {
        let m = mesh();
        for controls in [
            ControlSet::interval(-1.0, 1.0).unwrap(),
            ControlSet::finite(vec![-1.0, -0.2, 0.3, 0.9]).unwrap(),
        ] {
            let s = spec(controls.clone());
            let u = GridFunction::from_fn(m, |x, t| (x * 1.7).sin() * (1.0 - t));
            let du = dx(&u);
            let p = extract_policy(&u, &du, &s).unwrap();
            for j in 0..m.n_t {
                for i in 0..m.n_x {
                    let a = p.get(j, i);
                    assert!(controls.contains(a));
                    let (h, _) = eval_hmax(du.get(j, i), u.get(j, i), m.x(i), m.t(j), &s).unwrap();
                    let e = control_expression(&s, du.get(j, i), u.get(j, i), m.x(i), m.t(j), a).unwrap();
                    assert!((h - e).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let u = GridFunction::zeros(mesh());
        let du = GridFunction::zeros(Mesh::new(3.0, 7, 9, 1.0).unwrap());
        assert!(matches!(extract_policy(&u, &du, &drift_only()), Err(Error::ShapeMismatch(_))));
    }
}
