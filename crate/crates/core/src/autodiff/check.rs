use super::{AutodiffError, NodeId, Tape, Tensor};

/// Denominator floor for relative errors, so that gradients that are
/// zero up to rounding do not blow up the ratio.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
    /// Index of the entry with the largest relative error.
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
    /// Set when `f` itself failed; the check then counts as failed.
    pub error: Option<String>,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

fn eval<F>(f: &F, point: &Tensor) -> Result<(Tape, NodeId, NodeId), AutodiffError>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId, AutodiffError>,
{
    let mut tape = Tape::new();
    let x = tape.variable(point);
    let y = f(&mut tape, x)?;
    Ok((tape, x, y))
}

/// Compares the tape gradient of scalar-valued `f` at `point` with central
/// finite differences of step `eps`.
pub fn gradient_check<F>(f: F, point: &Tensor, eps: f64, tol: f64) -> GradCheckReport
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId, AutodiffError>,
{
    let failed = |msg: String| GradCheckReport {
        analytic: Vec::new(),
        numeric: Vec::new(),
        max_rel_error: f64::INFINITY,
        worst_index: 0,
        tolerance: tol,
        passed: false,
        error: Some(msg),
    };

    let analytic = match eval(&f, point).and_then(|(mut tape, x, y)| {
        tape.backward(y)?;
        Ok(tape
            .grad(x)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; point.numel()]))
    }) {
        Ok(g) => g,
        Err(e) => return failed(e.to_string()),
    };

    let mut numeric = Vec::with_capacity(point.numel());
    let mut probe = point.clone();
    for i in 0..point.numel() {
        let orig = point.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&f, &probe).map(|(t, _, y)| t.scalar(y));
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&f, &probe).map(|(t, _, y)| t.scalar(y));
        probe.data_mut()[i] = orig;
        match (plus, minus) {
            (Ok(p), Ok(m)) => numeric.push((p - m) / (2.0 * eps)),
            (Err(e), _) | (_, Err(e)) => return failed(e.to_string()),
        }
    }

    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .enumerate()
        .fold((0, 0.0_f64), |best, (i, e)| if e > best.1 || e.is_nan() { (i, e) } else { best });

    GradCheckReport {
        analytic,
        numeric,
        max_rel_error,
        worst_index,
        tolerance: tol,
        passed: max_rel_error < tol,
        error: None,
    }
}
