//! Brute-force reference implementations for the SEGA test suites.
//!
//! Nothing in here depends on `sega-core`. Every routine is written from the
//! defining formula with the most direct evaluation available, so a test that
//! compares the two is checking two independent routes to the same number.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest side length the naive transform accepts.
pub const MAX_DFT_SIDE: usize = 32;

/// Outcome of one oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub case: String,
    pub expected: f64,
    pub actual: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    /// Compares against an absolute tolerance.
    pub fn absolute(case: impl Into<String>, expected: f64, actual: f64, tolerance: f64) -> Self {
        let abs_error = (expected - actual).abs();
        let rel_error = abs_error / expected.abs().max(f64::MIN_POSITIVE);
        Self {
            case: case.into(),
            expected,
            actual,
            abs_error,
            rel_error,
            tolerance,
            pass: abs_error <= tolerance,
        }
    }

    /// Compares against a tolerance relative to `max(|expected|, scale)`.
    pub fn relative(
        case: impl Into<String>,
        expected: f64,
        actual: f64,
        tolerance: f64,
        scale: f64,
    ) -> Self {
        let abs_error = (expected - actual).abs();
        let rel_error = abs_error / expected.abs().max(scale).max(f64::MIN_POSITIVE);
        Self {
            case: case.into(),
            expected,
            actual,
            abs_error,
            rel_error,
            tolerance,
            pass: rel_error <= tolerance,
        }
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: expected {:.9} actual {:.9} (abs {:.3e}, rel {:.3e}, tol {:.1e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.case,
            self.expected,
            self.actual,
            self.abs_error,
            self.rel_error,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleBudgetExceeded {
    pub height: usize,
    pub width: usize,
}

impl fmt::Display for OracleBudgetExceeded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{} grid exceeds the naive DFT budget of {MAX_DFT_SIDE}x{MAX_DFT_SIDE}",
            self.height, self.width
        )
    }
}

impl std::error::Error for OracleBudgetExceeded {}

/// Direct double-sum 2D DFT of a row-major real grid.
///
/// Returns `(re, im)` pairs, row-major, with
/// `X[k,l] = Σ_h Σ_w x[h,w] · exp(-2πi (k h / H + l w / W))`.
pub fn naive_dft2(
    height: usize,
    width: usize,
    values: &[f64],
) -> Result<Vec<(f64, f64)>, OracleBudgetExceeded> {
    if height > MAX_DFT_SIDE || width > MAX_DFT_SIDE {
        return Err(OracleBudgetExceeded { height, width });
    }
    assert_eq!(values.len(), height * width, "grid size mismatch");
    let mut out = Vec::with_capacity(height * width);
    for k in 0..height {
        for l in 0..width {
            let mut re = 0.0;
            let mut im = 0.0;
            for h in 0..height {
                for w in 0..width {
                    // Reduce the phase index modulo the period before scaling
                    // so large angles never reach sin/cos.
                    let ph = ((k * h) % height) as f64 / height as f64
                        + ((l * w) % width) as f64 / width as f64;
                    let angle = -2.0 * PI * ph;
                    let x = values[h * width + w];
                    re += x * angle.cos();
                    im += x * angle.sin();
                }
            }
            out.push((re, im));
        }
    }
    Ok(out)
}

/// `|X[k,l]|²` from [`naive_dft2`].
pub fn naive_power_spectrum(
    height: usize,
    width: usize,
    values: &[f64],
) -> Result<Vec<f64>, OracleBudgetExceeded> {
    Ok(naive_dft2(height, width, values)?
        .into_iter()
        .map(|(re, im)| re * re + im * im)
        .collect())
}

/// Reference-scale form as printed in the published table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table8Form {
    Power,
    Log,
}

/// The twelve published `m_ref` values at κ = 0.08.
pub fn table8_oracle() -> Vec<(f64, Table8Form, f64)> {
    const RATIOS: [f64; 6] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    const POWER: [f64; 6] = [1.000, 1.057, 1.118, 1.182, 1.249, 1.320];
    const LOG: [f64; 6] = [1.000, 1.055, 1.111, 1.166, 1.222, 1.277];
    let mut rows = Vec::with_capacity(12);
    for (s, v) in RATIOS.iter().zip(POWER) {
        rows.push((*s, Table8Form::Power, v));
    }
    for (s, v) in RATIOS.iter().zip(LOG) {
        rows.push((*s, Table8Form::Log, v));
    }
    rows
}

/// Closed-form evaluators, each a one-line transcription of its formula.
pub mod formulas {
    pub fn inverse_frequency(dim: usize, base: f64, d: usize) -> f64 {
        1.0 / base.powf(2.0 * d as f64 / dim as f64)
    }

    pub fn ntk_base(base: f64, ratio: f64, dim: usize, strong: bool) -> f64 {
        let k = if strong { 2.0 } else { 1.0 };
        base * ratio.powf(k * dim as f64 / (dim as f64 - 2.0))
    }

    pub fn yarn_ramp(r: f64, alpha: f64, beta: f64) -> f64 {
        if r < alpha {
            0.0
        } else if r > beta {
            1.0
        } else {
            (r - alpha) / (beta - alpha)
        }
    }

    pub fn yarn_temperature(ratio: f64) -> f64 {
        0.1 * ratio.ln() + 1.0
    }

    pub fn m_ref_power(ratio: f64, kappa: f64) -> f64 {
        ratio.powf(kappa)
    }

    pub fn m_ref_log(ratio: f64, kappa: f64) -> f64 {
        1.0 + kappa * ratio.ln()
    }

    /// Geometric over arithmetic mean, by products rather than log sums.
    pub fn flatness(values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let gm = values.iter().fold(1.0, |acc, v| acc * v.powf(1.0 / n));
        let am = values.iter().sum::<f64>() / n;
        gm / am
    }

    pub fn amplitude(flatness: f64, gamma: f64) -> f64 {
        1.0 - flatness.powf(gamma)
    }

    pub fn dype_ratio(ratio: f64, t: f64, p: f64) -> f64 {
        1.0 + (ratio - 1.0) * (1.0 - t).powf(p)
    }
}

/// Rotates `x` at position `n` as an explicit 2x2 matrix product per pair.
pub fn reference_rotate(x: &[f64], n: f64, theta: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), 2 * theta.len(), "vector/schedule size mismatch");
    let mut out = vec![0.0; x.len()];
    for (d, th) in theta.iter().enumerate() {
        let a = n * th;
        let m = [[a.cos(), -a.sin()], [a.sin(), a.cos()]];
        let (x0, x1) = (x[2 * d], x[2 * d + 1]);
        out[2 * d] = m[0][0] * x0 + m[0][1] * x1;
        out[2 * d + 1] = m[1][0] * x0 + m[1][1] * x1;
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks that `⟨rotate(q, n), rotate(k, m)⟩` depends only on `n − m`.
///
/// `rotate` is the implementation under test. The expected value comes from
/// [`reference_rotate`] applied once at the relative offset,
/// `g(n − m) = ⟨R(n − m) q, k⟩`. Positions are drawn from `0..max_pos`.
pub fn rel_pos_oracle<F>(
    theta: &[f64],
    samples: usize,
    max_pos: u32,
    seed: u64,
    tolerance: f64,
    rotate: F,
) -> Vec<OracleReport>
where
    F: Fn(&[f64], f64, &[f64]) -> Vec<f64>,
{
    let dim = 2 * theta.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|i| {
            let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = rng.random_range(0..max_pos) as f64;
            let m = rng.random_range(0..max_pos) as f64;
            let actual = dot(&rotate(&q, n, theta), &rotate(&k, m, theta));
            let expected = dot(&reference_rotate(&q, n - m, theta), &k);
            let scale = dot(&q, &q).sqrt() * dot(&k, &k).sqrt();
            OracleReport::relative(
                format!("rel-pos #{i} D={dim} n={n} m={m}"),
                expected,
                actual,
                tolerance,
                scale,
            )
        })
        .collect()
}
