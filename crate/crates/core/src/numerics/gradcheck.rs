//! Central finite differences against analytic gradients.

use serde::Serialize;

use super::{Gradients, ParamId, ParamSet};
use crate::error::Result;

/// Relative error with a `max(|a|, |b|, 1e-8)` denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_relative_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    pub params: Vec<ParamCheck>,
}

impl FdReport {
    pub fn max_relative_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self, tolerance: f64) -> Vec<&ParamCheck> {
        self.params
            .iter()
            // Written so that a NaN error counts as a failure.
            .filter(|p| {
                p.max_relative_error.partial_cmp(&tolerance) != Some(std::cmp::Ordering::Less)
            })
            .collect()
    }
}

/// Perturbs every coordinate of every selected parameter by `±eps` and
/// compares `(J(θ+eps) − J(θ−eps)) / 2eps` against `analytic`.
pub fn finite_difference_check<F>(
    loss: F,
    params: &ParamSet,
    analytic: &Gradients,
    eps: f64,
    selected: &[ParamId],
) -> Result<FdReport>
where
    F: Fn(&ParamSet) -> Result<f64>,
{
    assert!(eps > 0.0, "eps must be positive");
    let mut work = params.clone();
    let mut report = FdReport { params: Vec::new() };
    for &id in selected {
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..params.get(id).len() {
            let original = params.get(id).as_slice()[i];
            work.get_mut(id).as_mut_slice()[i] = original + eps;
            let plus = loss(&work)?;
            work.get_mut(id).as_mut_slice()[i] = original - eps;
            let minus = loss(&work)?;
            work.get_mut(id).as_mut_slice()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).as_slice()[i];
            let err = relative_error(a, numeric);
            if err > check.max_relative_error || err.is_nan() {
                check.max_relative_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Mask, Matrix, Tape};

    fn one_param(m: Matrix) -> (ParamSet, ParamId) {
        let mut p = ParamSet::new();
        let id = p.insert("w", m, true);
        (p, id)
    }

    fn check<F>(params: &ParamSet, build: F) -> f64
    where
        F: Fn(&mut Tape) -> crate::error::Result<crate::numerics::Node>,
    {
        let mut tape = Tape::new(params);
        let j = build(&mut tape).unwrap();
        let g = tape.backward(j).unwrap();
        let ids: Vec<_> = params.ids().collect();
        finite_difference_check(
            |p| {
                let mut t = Tape::new(p);
                let j = build(&mut t)?;
                Ok(t.value(j).item())
            },
            params,
            &g,
            1e-5,
            &ids,
        )
        .unwrap()
        .max_relative_error()
    }

    #[test]
    fn quadratic_and_linear_are_exact() {
        let (p, id) = one_param(Matrix::from_rows(&[[0.5, -1.5], [2.0, 0.25]]).unwrap());
        let quad = check(&p, |t| {
            let w = t.param(id);
            let s = t.sum_squares(w)?;
            t.scale(s, 0.5)
        });
        assert!(quad < 1e-9, "{quad}");
        let lin = check(&p, |t| {
            let w = t.param(id);
            let s = t.sum(w)?;
            t.scale(s, 3.0)
        });
        assert!(lin < 1e-9, "{lin}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn detects_wrong_gradient() {
        let (p, id) = one_param(Matrix::from_rows(&[[0.3, -0.7]]).unwrap());
        let mut tape = Tape::new(&p).with_faulty_rule(Some(crate::numerics::OpKind::Tanh));
        let w = tape.param(id);
        let y = tape.tanh(w).unwrap();
        let j = tape.sum(y).unwrap();
        let g = tape.backward(j).unwrap();
        let report = finite_difference_check(
            |p| {
                let mut t = Tape::new(p);
                let w = t.param(id);
                let y = t.tanh(w)?;
                let j = t.sum(y)?;
                Ok(t.value(j).item())
            },
            &p,
            &g,
            1e-5,
            &[id],
        )
        .unwrap();
        assert_eq!(report.failures(1e-4).len(), 1);
    }

    #[test]
    fn softmax_gradient_with_mask() {
        let (p, id) = one_param(
            Matrix::from_rows(&[[0.2, -1.0, 0.4], [1.3, 0.1, -0.6], [-0.5, 0.9, 0.0]]).unwrap(),
        );
        let err = check(&p, |t| {
            let w = t.param(id);
            let a = t.masked_column_softmax(w, Mask::new(vec![true, false, true])?)?;
            let c = t.input(Matrix::from_rows(&[
                [1.0, 2.0, -1.0],
                [3.0, 1.0, 1.0],
                [0.5, -2.0, 4.0],
            ])?);
            let m = t.mul(a, c)?;
            t.sum(m)
        });
        assert!(err < 1e-6, "{err}");
    }
}
