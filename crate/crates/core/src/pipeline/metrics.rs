use crate::error::{Error, Result};
use crate::imaging::Image;

fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_size(b)?;
    if a.data.is_empty() {
        return Err(Error::input("PSNR of an empty image"));
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

fn db(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// `10 log10(1 / MSE)` for data in `[0, 1]`; infinite for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(db(mse(a, b)?))
}

/// PSNR of the pooled MSE over a frame sequence.
pub fn sequence_psnr(a: &[Image], b: &[Image]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::input("sequences must be non-empty and equally long"));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += mse(x, y)?;
    }
    Ok(db(total / a.len() as f64))
}

/// Mean SSIM over a frame sequence.
pub fn sequence_ssim(a: &[Image], b: &[Image]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::input("sequences must be non-empty and equally long"));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += crate::splat::ssim(x, y)?;
    }
    Ok(total / a.len() as f64)
}

/// Decibels with four decimals, or `inf`.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}
