use crate::error::{validation, Result};
use crate::sim::UnitaryMatrix;

/// Half the squared Frobenius distance, `0.5 * sum |a_ij - b_ij|^2`.
pub fn frobenius_distance(a: &UnitaryMatrix, b: &UnitaryMatrix) -> Result<f64> {
    check_dims(a, b)?;
    Ok(0.5 * a.entries().iter().zip(b.entries()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>())
}

/// [`frobenius_distance`] minimized over a global phase on `b`:
/// `0.5 * (|A|^2 + |B|^2 - 2 |tr(A^† B)|)`.
///
/// Reported next to the raw distance; compilation accuracy uses the raw one.
pub fn phase_insensitive_distance(a: &UnitaryMatrix, b: &UnitaryMatrix) -> Result<f64> {
    check_dims(a, b)?;
    let na: f64 = a.entries().iter().map(|x| x.norm_sqr()).sum();
    let nb: f64 = b.entries().iter().map(|x| x.norm_sqr()).sum();
    let overlap: num_complex::Complex64 =
        a.entries().iter().zip(b.entries()).map(|(x, y)| x.conj() * y).sum();
    Ok((0.5 * (na + nb - 2.0 * overlap.norm())).max(0.0))
}

fn check_dims(a: &UnitaryMatrix, b: &UnitaryMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(validation(format!("dimension mismatch {} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}
