use crate::error::{Error, Result};

fn check(est: &[f64], reference: &[f64]) -> Result<()> {
    if est.len() != reference.len() {
        return Err(Error::DimMismatch {
            expected: reference.len(),
            got: est.len(),
        });
    }
    Ok(())
}

/// `‖est − ref‖₁ / ‖ref‖₁`.
pub fn l1_relative_error(est: &[f64], reference: &[f64]) -> Result<f64> {
    check(est, reference)?;
    let den: f64 = reference.iter().map(|r| r.abs()).sum();
    if den == 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok(est.iter().zip(reference).map(|(e, r)| (e - r).abs()).sum::<f64>() / den)
}

/// `‖est − ref‖₂ / ‖ref‖₂`.
pub fn l2_relative_error(est: &[f64], reference: &[f64]) -> Result<f64> {
    check(est, reference)?;
    let den: f64 = reference.iter().map(|r| r * r).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok(est.iter().zip(reference).map(|(e, r)| (e - r) * (e - r)).sum::<f64>().sqrt() / den)
}
