use super::data::TensorData;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Settings for [`grad_check_cfg`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates whose perturbed forward passes come within
    /// `kink_margin * eps` of a ReLU zero or max-pool tie are skipped:
    /// the finite difference straddles a kink there and says nothing
    /// about the analytic gradient.
    pub kink_margin: f64,
    /// Floor on the denominator of the relative error. Below this scale the
    /// comparison is effectively absolute, so float cancellation noise in
    /// the difference quotient cannot inflate near-zero gradients into
    /// spurious mismatches.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            kink_margin: 4.0,
            abs_floor: 1e-6,
        }
    }
}

/// Compare the tape gradient of a scalar-valued function against central
/// differences, coordinate by coordinate. Returns the maximum over checked
/// coordinates of `|analytic - numeric| / max(floor, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, x: &TensorData<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_cfg(
        f,
        x,
        GradCheckConfig {
            eps,
            ..GradCheckConfig::default()
        },
    )
}

pub fn grad_check_cfg<F>(f: F, x: &TensorData<f64>, cfg: GradCheckConfig) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape: Tape<f64> = Tape::new();
    let xv = tape.leaf(x.clone(), true)?;
    let out = f(&mut tape, xv)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Shape(
            "grad_check requires a scalar-valued function".into(),
        ));
    }
    tape.backward(out)?;
    let analytic: Vec<f64> = match tape.grad(xv) {
        Some(g) => g.to_vec(),
        None => vec![0.0; x.numel()],
    };

    let eval = |data: &TensorData<f64>| -> Result<(f64, f64)> {
        let mut t: Tape<f64> = Tape::new();
        let v = t.leaf(data.clone(), false)?;
        let o = f(&mut t, v)?;
        Ok((t.value(o).item(), t.min_kink_gap()))
    };

    let margin = cfg.kink_margin * cfg.eps;
    let mut max_rel: f64 = 0.0;
    let mut perturbed = x.clone();
    for i in 0..x.numel() {
        let orig = perturbed.data()[i];
        perturbed.data_mut()[i] = orig + cfg.eps;
        let (fp, kp) = eval(&perturbed)?;
        perturbed.data_mut()[i] = orig - cfg.eps;
        let (fm, km) = eval(&perturbed)?;
        perturbed.data_mut()[i] = orig;
        if kp.min(km) < margin {
            continue;
        }
        let numeric = (fp - fm) / (2.0 * cfg.eps);
        let denom = (analytic[i].abs() + numeric.abs()).max(cfg.abs_floor);
        max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let x = TensorData::new(vec![1, 3], vec![0.5, -1.2, 2.0]).unwrap();
        let rel = grad_check(
            |t, v| {
                let y = t.mul(v, v)?;
                t.sum(y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(rel < 1e-8, "relative error {rel} too large for a quadratic");
    }

    #[test]
    fn sigmoid_tanh_chain_passes() {
        let x = TensorData::new(vec![1, 4], vec![0.3, -0.7, 1.5, -2.1]).unwrap();
        let rel = grad_check(
            |t, v| {
                let a = t.sigmoid(v)?;
                let b = t.tanh(a)?;
                t.mean(b)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(rel < 1e-7, "relative error {rel}");
    }

    #[test]
    fn relu_at_kink_is_skipped_not_failed() {
        // x = 0 sits exactly on the kink; the harness must skip it rather
        // than report a bogus mismatch.
        let x = TensorData::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let rel = grad_check(
            |t, v| {
                let y = t.relu(v)?;
                t.sum(y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(rel < 1e-8, "kink coordinate should be skipped, got {rel}");
    }

    #[test]
    fn non_scalar_output_is_an_error() {
        let x = TensorData::zeros(vec![2, 2]);
        let err = grad_check(|t, v| t.relu(v), &x, 1e-5).unwrap_err();
        assert_eq!(err.code(), "shape");
    }
}
