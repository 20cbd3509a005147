use crate::error::{Error, Result};
use crate::numcore::ParamVector;

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coordinate: usize,
    pub rel_errs: Vec<f64>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Relative error with a unit floor so that near-zero pairs compare absolutely.
fn rel_err(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6)
}

/// Check an analytic gradient against central finite differences.
///
/// `f` must return the scalar value and its full gradient at the given point,
/// and must be deterministic (any internal randomness re-seeded per call).
pub fn grad_check<F>(f: F, point: &ParamVector, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamVector) -> Result<(f64, ParamVector)>,
{
    if h <= 0.0 {
        return Err(Error::argument("finite-difference step must be positive"));
    }
    let (value, analytic) = f(point)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    if analytic.len() != point.len() {
        return Err(Error::argument(format!(
            "gradient length {} does not match point length {}",
            analytic.len(),
            point.len()
        )));
    }

    let mut rel_errs = Vec::with_capacity(point.len());
    let mut max_rel_err = 0.0;
    let mut worst = 0;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let (fp, _) = f(&probe)?;
        probe[i] = orig - h;
        let (fm, _) = f(&probe)?;
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("grad_check probe at coordinate {i}")));
        }
        let fd = (fp - fm) / (2.0 * h);
        let e = rel_err(fd, analytic[i]);
        if e > max_rel_err {
            max_rel_err = e;
            worst = i;
        }
        rel_errs.push(e);
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst_coordinate: worst,
        rel_errs,
        tolerance: tol,
    })
}
