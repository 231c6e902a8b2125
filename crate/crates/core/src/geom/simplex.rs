use crate::error::{Error, Result};

/// How an arbitrary vector is mapped onto the probability simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimplexMode {
    /// Interpret the input as logits.
    Softmax,
    /// Closest simplex point in the Euclidean norm. Used for semantics that
    /// were perturbed off the simplex by diffusion.
    Euclidean,
}

pub fn project_to_simplex(v: &[f64], mode: SimplexMode) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::invalid("cannot project an empty vector onto the simplex"));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::invalid(format!(
            "simplex projection input is not finite ({bad})"
        )));
    }
    let mut out = v.to_vec();
    match mode {
        SimplexMode::Softmax => softmax_in_place(&mut out),
        SimplexMode::Euclidean => euclidean_in_place(&mut out),
    }
    Ok(out)
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Sort-based projection: find the largest `rho` with
/// `u_rho - (sum_{j<=rho} u_j - 1) / rho > 0` over the descending sort `u`,
/// then clamp `v - theta` at zero.
pub(crate) fn euclidean_in_place(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = project_to_simplex(&[0.0; 4], SimplexMode::Softmax).unwrap();
        for x in p {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn euclidean_is_identity_on_simplex() {
        let p = project_to_simplex(&[0.5, 0.5, 0.0], SimplexMode::Euclidean).unwrap();
        assert_eq!(p, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn euclidean_projection_of_overshoot() {
        let p = project_to_simplex(&[1.2, 0.2, -0.4], SimplexMode::Euclidean).unwrap();
        for (a, b) in p.iter().zip([1.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        assert!(project_to_simplex(&[0.1, f64::NAN], SimplexMode::Euclidean).is_err());
        assert!(project_to_simplex(&[f64::INFINITY, 0.0], SimplexMode::Softmax).is_err());
    }

    #[test]
    fn softmax_is_shift_stable() {
        let p = project_to_simplex(&[1000.0, 1000.0], SimplexMode::Softmax).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }
}
