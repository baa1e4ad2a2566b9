//! Frame similarity, best-of-K evaluation and context-embedding analysis.

pub mod embedding;
pub mod eval;
pub mod stats;

use crate::error::{invalid, Result};
use crate::pushworld::Frame;

pub use embedding::{embedding_separation, pca_project, separation_stats, EmbeddingPoint, Pca, SeparationStats};
pub use eval::{best_of_k_eval, sample_rollouts, ContextMode, EvalConfig, EvalReport};
pub use stats::{paired_t_test, PairedTest};

/// Ceiling returned when two frames are (numerically) identical.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_dims(a: &Frame, b: &Frame) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) || a.pixels.len() != b.pixels.len() {
        return Err(invalid(format!(
            "frame dims differ: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.pixels.len() as f64)
}

/// Peak signal-to-noise ratio in dB for unit dynamic range.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let m = mse(a, b)?;
    if m < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * m.log10()).min(PSNR_CAP))
}

/// Mean SSIM over all 7x7 windows at stride 1, population statistics.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_dims(a, b)?;
    let (h, w, k) = (a.height, a.width, SSIM_WINDOW);
    if h < k || w < k {
        return Err(invalid(format!("frame {h}x{w} is smaller than the {k}x{k} window")));
    }
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for r0 in 0..=h - k {
        for c0 in 0..=w - k {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in r0..r0 + k {
                for c in c0..c0 + k {
                    let x = a.pixels[r * w + c] as f64;
                    let y = b.pixels[r * w + c] as f64;
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = saa / n - ma * ma;
            let vb = sbb / n - mb * mb;
            let cov = sab / n - ma * mb;
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            total += num / den;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}
