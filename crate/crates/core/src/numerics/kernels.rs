use super::linalg::{check_dims, dot, norm, Vector};
use super::{NumericsError, DEGENERATE_NORM};

/// How similarity kernels treat vectors whose norm is below
/// [`DEGENERATE_NORM`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneratePolicy {
    /// Fail with [`NumericsError::DegenerateVector`].
    #[default]
    Strict,
    /// Report similarity 0.
    Lenient,
}

/// Cosine similarity in strict mode.
pub fn cosine_sim(a: &Vector, b: &Vector) -> Result<f64, NumericsError> {
    cosine_sim_with(a, b, DegeneratePolicy::Strict)
}

pub fn cosine_sim_with(
    a: &Vector,
    b: &Vector,
    policy: DegeneratePolicy,
) -> Result<f64, NumericsError> {
    check_dims(a.dim(), b.dim())?;
    cosine_slices(a.as_slice(), b.as_slice(), policy)
}

/// Slice form of [`cosine_sim_with`]; callers guarantee equal lengths.
pub fn cosine_slices(a: &[f64], b: &[f64], policy: DegeneratePolicy) -> Result<f64, NumericsError> {
    check_dims(a.len(), b.len())?;
    let na = norm(a);
    let nb = norm(b);
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        return match policy {
            DegeneratePolicy::Strict => Err(NumericsError::DegenerateVector),
            DegeneratePolicy::Lenient => Ok(0.0),
        };
    }
    // The product of norms is symmetric in (a, b), which keeps the result
    // exactly symmetric.
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `max + ln Σ exp(x - max)`.
pub fn log_sum_exp(xs: &[f64]) -> Result<f64, NumericsError> {
    if xs.is_empty() {
        return Err(NumericsError::EmptyInput);
    }
    if let Some(index) = xs.iter().position(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite { index });
    }
    Ok(lse_unchecked(xs.iter().copied()))
}

pub(crate) fn lse_unchecked(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = xs.map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// Softmax weights of `xs`, computed against the running max.
pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine_sim(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let s = cosine_sim(&v(&[3.0, 4.0]), &v(&[4.0, 3.0])).unwrap();
        assert!((s - 0.96).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors_and_lenient_mode() {
        assert!(matches!(
            cosine_sim(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])),
            Err(NumericsError::DimensionMismatch { expected: 2, found: 3 })
        ));
        let zero = v(&[0.0, 0.0]);
        assert!(matches!(
            cosine_sim(&zero, &v(&[1.0, 0.0])),
            Err(NumericsError::DegenerateVector)
        ));
        assert_eq!(
            cosine_sim_with(&zero, &v(&[1.0, 0.0]), DegeneratePolicy::Lenient).unwrap(),
            0.0
        );
    }

    #[test]
    fn lse_examples() {
        assert_eq!(log_sum_exp(&[0.0]).unwrap(), 0.0);
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
        // the naive form overflows
        assert!(((1000f64).exp() * 2.0).ln().is_infinite());
        assert!(matches!(log_sum_exp(&[]), Err(NumericsError::EmptyInput)));
        assert!(log_sum_exp(&[-700.0, 700.0]).unwrap().is_finite());
    }

    fn finite_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, dim)
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_bounded(a in finite_vec(6), b in finite_vec(6)) {
            let (a, b) = (v(&a), v(&b));
            prop_assume!(a.norm() > 1e-6 && b.norm() > 1e-6);
            let ab = cosine_sim(&a, &b).unwrap();
            let ba = cosine_sim(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab.abs() <= 1.0);
        }

        #[test]
        fn cosine_scale_invariant(a in finite_vec(5), b in finite_vec(5), c in 1e-3f64..1e3) {
            let (a, b) = (v(&a), v(&b));
            prop_assume!(a.norm() > 1e-6 && b.norm() > 1e-6);
            let base = cosine_sim(&a, &b).unwrap();
            let scaled = cosine_sim(&a.scaled(c), &b).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-12);
        }

        #[test]
        fn lse_bounds(xs in proptest::collection::vec(-700.0f64..700.0, 1..20)) {
            let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let l = log_sum_exp(&xs).unwrap();
            prop_assert!(l >= m);
            prop_assert!(l <= m + (xs.len() as f64).ln() + 1e-12);
        }
    }
}
