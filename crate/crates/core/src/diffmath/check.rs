use super::{Result, Tape, Var};

/// Evaluates `f` at `x` on a fresh tape and returns `(f(x), ∇f(x))`.
///
/// `f` receives the tape and a `1×n` trainable leaf holding `x`, and must
/// return a scalar node.
pub fn gradient_of<F>(f: &F, x: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.row_param(x);
    let root = f(&mut tape, leaf)?;
    tape.backward(root)?;
    let value = tape.scalar(root);
    Ok((value, tape.grad(leaf).iter().copied().collect()))
}

fn value_of<F>(f: &F, x: &[f64]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.row_param(x);
    let root = f(&mut tape, leaf)?;
    Ok(tape.scalar(root))
}

/// Worst coordinate-wise relative error between the reverse-mode gradient
/// and central differences with the given step.
///
/// The denominator is `max(|autodiff|, |finite difference|, 1e-8)`. A NaN
/// anywhere in `f` propagates to a NaN result.
pub fn finite_difference_check<F>(f: F, x: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let (_, grad) = gradient_of(&f, x)?;
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = value_of(&f, &probe)?;
        probe[i] = x[i] - step;
        let down = value_of(&f, &probe)?;
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * step);
        let denom = grad[i].abs().max(fd.abs()).max(1e-8);
        let err = (grad[i] - fd).abs() / denom;
        if err.is_nan() {
            return Ok(f64::NAN);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}
