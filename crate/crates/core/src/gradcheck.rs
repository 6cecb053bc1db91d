//! Central finite-difference verification of tape gradients.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::supergraph::{GradMode, NodeChoice, Supernet};
use crate::tensor::Tensor;

/// Relative error with the denominator floored at `1e-8`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares the autodiff gradient of `f` at `x` against central differences
/// with step `eps` and returns the largest elementwise relative error.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_diff_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        eps,
    )
}

/// Multi-input form of [`finite_diff_check`]; every input is differentiated.
pub fn finite_diff_check_many<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::Backward("objective must be scalar".into()));
        }
        Ok(v.item())
    };

    let mut probe: Vec<Tensor> = inputs.to_vec();
    let mut worst = 0.0f64;
    for (which, grad) in analytic.iter().enumerate() {
        for i in 0..inputs[which].len() {
            let orig = inputs[which].data()[i];
            probe[which].data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe[which].data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Checks the cross-entropy gradient of `net` with respect to every weight
/// and gamma scalar against central differences, for fixed hard-path
/// operation choices. Returns the largest relative error.
pub fn network_gradient_check(
    net: &Supernet,
    images: &Tensor,
    labels: &[usize],
    ops: &[usize],
    eps: f64,
) -> Result<f64> {
    let choices: Vec<NodeChoice> = ops.iter().map(|&o| NodeChoice::Single(o)).collect();
    let mut tape = Tape::new();
    let pass = net.forward(&mut tape, images, &choices, GradMode::ALL)?;
    let loss = tape.cross_entropy(pass.logits, labels)?;
    tape.backward(loss)?;
    let grads = pass.binder.grads(&tape);

    let eval = |probe: &Supernet| -> Result<f64> {
        let mut tape = Tape::new();
        let pass = probe.forward(&mut tape, images, &choices, GradMode::NONE)?;
        let loss = tape.cross_entropy(pass.logits, labels)?;
        Ok(tape.value(loss).item())
    };

    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (id, grad) in grads.iter().enumerate() {
        for i in 0..net.params[id].len() {
            let orig = net.params[id].data()[i];
            probe.params[id].data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.params[id].data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.params[id].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grad.as_ref().map_or(0.0, |g| g.data()[i]);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::scalar(3.0);
        let err = finite_diff_check(
            |t, v| {
                let sq = t.mul(v, v)?;
                Ok(t.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu at an exact kink: autodiff says 0, central differences say 0.5
        let x = Tensor::scalar(0.0);
        let err = finite_diff_check(
            |t, v| {
                let r = t.relu(v);
                Ok(t.sum(r))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err > 0.4);
    }
}
