use super::tape::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of a central-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest relative error over every coordinate.
    pub max_rel_error: f64,
    /// (parameter index, coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    /// Analytic and central-difference values at the worst coordinate.
    pub analytic: f64,
    pub numeric: f64,
    /// `(analytic, numeric)` for every coordinate, parameters in order.
    pub pairs: Vec<(f64, f64)>,
    /// Roundoff level of one central difference of `f` at this step size.
    pub noise: f64,
}

impl GradCheck {
    pub fn coordinates(&self) -> usize {
        self.pairs.len()
    }

    /// Derivatives smaller than this cannot be compared to relative
    /// tolerance `tol`: the central difference carries `noise` of roundoff.
    pub fn resolution(&self, tol: f64) -> f64 {
        (self.noise / tol).max(1e-8)
    }

    /// Coordinates where both derivatives are below the resolution. Exact
    /// invariances and cancelling terms put coordinates here; the plain 1e-8
    /// floor would turn their roundoff into large relative errors.
    pub fn flat_coordinates(&self, tol: f64) -> usize {
        let r = self.resolution(tol);
        self.pairs
            .iter()
            .filter(|(a, n)| a.abs() + n.abs() < r)
            .count()
    }

    /// Largest relative error with the floor raised to the resolution.
    pub fn resolved_max_rel_error(&self, tol: f64) -> f64 {
        let r = self.resolution(tol);
        self.pairs
            .iter()
            .map(|&(a, n)| {
                if !a.is_finite() || !n.is_finite() {
                    f64::INFINITY
                } else {
                    (a - n).abs() / (a.abs() + n.abs()).max(r)
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.resolved_max_rel_error(tol) < tol
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`; non-finite inputs give `+Inf`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if !analytic.is_finite() || !numeric.is_finite() {
        return f64::INFINITY;
    }
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of `f` against `(f(p+h) - f(p-h)) / 2h` for
/// every coordinate of every parameter.
///
/// `f` records its computation on the given tape, reading the parameters
/// from the supplied leaves, and returns a scalar node.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let eval = |ps: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        match f(&mut tape, &vars) {
            Ok(out) => tape.scalar(out),
            Err(_) => f64::NAN,
        }
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.scalar(out);
    let grads = tape.backward(out)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        pairs: Vec::new(),
        // A few ulps of the function value, divided by the step.
        noise: 8.0 * f64::EPSILON * value.abs().max(1.0) / h,
    };
    let mut work = params.to_vec();
    for (pi, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("trainable leaf").data().to_vec();
        for (ci, &a) in analytic.iter().enumerate() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + h;
            let up = eval(&work);
            work[pi].data_mut()[ci] = orig - h;
            let down = eval(&work);
            work[pi].data_mut()[ci] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(a, numeric);
            let err = if err.is_nan() { f64::INFINITY } else { err };
            report.pairs.push((a, numeric));
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (pi, ci);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
