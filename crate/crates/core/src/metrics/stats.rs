use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided p-value for `mean(a - b) > 0`.
    pub p_greater: f64,
}

/// Paired Student t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid("paired test needs two equal-length samples of size >= 2"));
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let (t, p) = if se == 0.0 {
        let p = if mean > 0.0 { 0.0 } else { 1.0 };
        (mean.signum() * f64::INFINITY, p)
    } else {
        let t = mean / se;
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| invalid(e.to_string()))?;
        (t, 1.0 - dist.cdf(t))
    };
    Ok(PairedTest {
        n,
        mean_diff: mean,
        t,
        p_greater: p,
    })
}
