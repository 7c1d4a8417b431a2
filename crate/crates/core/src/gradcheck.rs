//! Central finite-difference verification of tape gradients.

use crate::error::{MafError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Scalar function of several tensor inputs, expressed on a tape.
pub trait TapeFn: Fn(&mut Tape, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Tape, &[Var]) -> Result<Var>> TapeFn for F {}

fn evaluate(f: &impl TapeFn, inputs: &[Tensor]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(MafError::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Tape gradients of `f` at `inputs`.
pub fn analytic_gradients(f: &impl TapeFn, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars.iter().map(|&v| grads.get(v)).collect())
}

/// `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h` for every coordinate of every input.
pub fn numeric_gradients(f: &impl TapeFn, inputs: &[Tensor], h: f64) -> Result<Vec<Tensor>> {
    check_step(h)?;
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for which in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[which].shape());
        for i in 0..inputs[which].numel() {
            let orig = inputs[which].data()[i];
            work[which].data_mut()[i] = orig + h;
            let plus = evaluate(f, &work)?;
            work[which].data_mut()[i] = orig - h;
            let minus = evaluate(f, &work)?;
            work[which].data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest `|analytic − numeric| / max(1, |analytic|)` over all coordinates.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Compares tape gradients of `f` against central differences with step `h`.
pub fn check_gradients_multi(f: &impl TapeFn, inputs: &[Tensor], h: f64) -> Result<f64> {
    let numeric = numeric_gradients(f, inputs, h)?;
    let analytic = analytic_gradients(f, inputs)?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Single-input form of [`check_gradients_multi`].
pub fn check_gradients(
    f: impl Fn(&mut Tape, Var) -> Result<Var>,
    x: &Tensor,
    h: f64,
) -> Result<f64> {
    let wrapped = |t: &mut Tape, v: &[Var]| f(t, v[0]);
    check_gradients_multi(&wrapped, std::slice::from_ref(x), h)
}

fn check_step(h: f64) -> Result<()> {
    if (1e-7..=1e-3).contains(&h) {
        Ok(())
    } else {
        Err(MafError::Contract(format!("finite-difference step {h} outside [1e-7, 1e-3]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_function_is_exact() {
        let x = random(&[3, 4], &mut Rng::new(0));
        let err = check_gradients(|t, v| Ok(t.sum(v)), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn softmax_sum_of_squares() {
        let x = random(&[2, 3], &mut Rng::new(1));
        let f = |t: &mut Tape, v: Var| {
            let s = t.softmax_rows(v)?;
            let sq = t.mul(s, s)?;
            Ok(t.sum(sq))
        };
        let err = check_gradients(f, &x, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let x = random(&[2, 3], &mut Rng::new(2));
        let f = |t: &mut Tape, v: &[Var]| {
            let s = t.softmax_rows(v[0])?;
            let sq = t.mul(s, s)?;
            Ok(t.sum(sq))
        };
        let inputs = [x];
        let mut analytic = analytic_gradients(&f, &inputs).unwrap();
        analytic[0].data_mut()[3] += 0.1;
        let numeric = numeric_gradients(&f, &inputs, 1e-5).unwrap();
        assert!(max_relative_error(&analytic, &numeric) > 1e-2);
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let x = Tensor::ones(&[2]);
        assert!(check_gradients(|t, v| Ok(t.sum(v)), &x, 1e-2).is_err());
        assert!(check_gradients(|t, v| Ok(t.sum(v)), &x, 1e-9).is_err());
    }
}
