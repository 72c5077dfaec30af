use super::tape::{Tape, Var};
use crate::error::Result;

/// Outcome of comparing analytic gradients against finite differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Five-point central difference of `f` around `x` with step `eps`.
pub fn central_difference(f: &mut impl FnMut(f64) -> f64, x: f64, eps: f64) -> f64 {
    let f1 = f(x + eps);
    let f_1 = f(x - eps);
    let f2 = f(x + 2.0 * eps);
    let f_2 = f(x - 2.0 * eps);
    (8.0 * (f1 - f_1) - (f2 - f_2)) / (12.0 * eps)
}

/// Checks the tape gradient of `build`'s scalar loss with respect to every
/// entry of `params` against central finite differences in double precision.
pub fn grad_check<F>(params: &[f64], eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let mut analytic = vec![0.0; params.len()];
    {
        let mut tape = Tape::new(params);
        let loss = build(&mut tape)?;
        tape.backward(loss, &mut analytic)?;
    }
    let mut work = params.to_vec();
    let mut numeric = vec![0.0; params.len()];
    let mut failure = None;
    for i in 0..params.len() {
        let base = params[i];
        let mut eval = |v: f64| -> f64 {
            work[i] = v;
            let mut tape = Tape::new(&work);
            match build(&mut tape) {
                Ok(l) => tape.scalar(l),
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        };
        numeric[i] = central_difference(&mut eval, base, eps);
        work[i] = base;
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let (mut worst, mut worst_index) = (0.0, 0);
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let r = relative_error(a, n);
        if r > worst || r.is_nan() {
            worst = r;
            worst_index = i;
        }
    }
    Ok(GradCheckReport { max_rel_error: worst, worst_index, analytic, numeric })
}
