//! Density and view-dependent color from raw field features.
//!
//! Color features are laid out channel-major: feature `κ·B + j` is the
//! coefficient of basis function `j` for color channel `κ`, where
//! `B = (ℓmax+1)²` and `j` runs over `(ℓ, m)` with `ℓ = 0..=ℓmax`,
//! `m = -ℓ..=ℓ`.

use crate::error::{Error, Result};
use crate::real::Real;

pub const MAX_SH_DEGREE: usize = 4;

/// Shading parameters shared by every query of a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadingConfig {
    pub sh_degree: usize,
    /// Added to the raw density feature before the softplus.
    pub density_shift: f64,
}

impl Default for ShadingConfig {
    fn default() -> Self {
        Self {
            sh_degree: 3,
            density_shift: -10.0,
        }
    }
}

impl ShadingConfig {
    pub fn new(sh_degree: usize, density_shift: f64) -> Result<Self> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(Error::InvalidArgument(format!(
                "SH degree {sh_degree} exceeds {MAX_SH_DEGREE}"
            )));
        }
        Ok(Self {
            sh_degree,
            density_shift,
        })
    }

    pub fn basis_len(&self) -> usize {
        sh_basis_len(self.sh_degree)
    }

    pub fn color_channels(&self) -> usize {
        3 * self.basis_len()
    }
}

pub const fn sh_basis_len(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Real spherical harmonics up to `degree` at a direction, in `(ℓ, m)` order.
///
/// No Condon–Shortley phase: every `m > 0` function is positive along `+x`
/// near the equator and every `m < 0` function along `+y`. Non-unit inputs
/// are normalized; zero vectors are rejected.
pub fn eval_sh_basis(d: [f64; 3], degree: usize) -> Result<Vec<f64>> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::InvalidArgument(format!(
            "SH degree {degree} exceeds {MAX_SH_DEGREE}"
        )));
    }
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if !(n > 1e-12) || !n.is_finite() {
        return Err(Error::ZeroDirection);
    }
    let dir = if (n - 1.0).abs() > 1e-6 {
        [d[0] / n, d[1] / n, d[2] / n]
    } else {
        d
    };
    let mut out = vec![0.0; sh_basis_len(degree)];
    sh_basis_into(dir, degree, &mut out);
    Ok(out)
}

/// Unchecked basis evaluation for a unit direction.
pub(crate) fn sh_basis_into(d: [f64; 3], degree: usize, out: &mut [f64]) {
    let [x, y, z] = d;
    out[0] = 0.282_094_791_773_878_14;
    if degree == 0 {
        return;
    }
    const C1: f64 = 0.488_602_511_902_919_9;
    out[1] = C1 * y;
    out[2] = C1 * z;
    out[3] = C1 * x;
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = 1.092_548_430_592_079_2 * x * y;
    out[5] = 1.092_548_430_592_079_2 * y * z;
    out[6] = 0.315_391_565_252_520_05 * (3.0 * zz - 1.0);
    out[7] = 1.092_548_430_592_079_2 * x * z;
    out[8] = 0.546_274_215_296_039_6 * (xx - yy);
    if degree == 2 {
        return;
    }
    out[9] = 0.590_043_589_926_643_5 * y * (3.0 * xx - yy);
    out[10] = 2.890_611_442_640_554 * x * y * z;
    out[11] = 0.457_045_799_464_465_8 * y * (5.0 * zz - 1.0);
    out[12] = 0.373_176_332_590_115_4 * z * (5.0 * zz - 3.0);
    out[13] = 0.457_045_799_464_465_8 * x * (5.0 * zz - 1.0);
    out[14] = 1.445_305_721_320_277 * z * (xx - yy);
    out[15] = 0.590_043_589_926_643_5 * x * (xx - 3.0 * yy);
    if degree == 3 {
        return;
    }
    out[16] = 2.503_342_941_796_704_6 * x * y * (xx - yy);
    out[17] = 1.770_130_769_779_930_4 * y * z * (3.0 * xx - yy);
    out[18] = 0.946_174_695_757_560_1 * x * y * (7.0 * zz - 1.0);
    out[19] = 0.669_046_543_557_289_2 * y * z * (7.0 * zz - 3.0);
    out[20] = 0.105_785_546_915_204_31 * (35.0 * zz * zz - 30.0 * zz + 3.0);
    out[21] = 0.669_046_543_557_289_2 * x * z * (7.0 * zz - 3.0);
    out[22] = 0.473_087_347_878_780_04 * (xx - yy) * (7.0 * zz - 1.0);
    out[23] = 1.770_130_769_779_930_4 * x * z * (xx - 3.0 * yy);
    out[24] = 0.625_835_735_449_176_1 * (xx * (xx - 3.0 * yy) - yy * (3.0 * xx - yy));
}

#[inline(always)]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::from_f64(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline(always)]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Applies the activations to raw features: `σ = softplus(raw + shift)`,
/// `rgb_κ = sigmoid(Σ_j coeff[κ·B + j] · Y_j(d))`.
pub fn decode(
    raw_density: f64,
    raw_color: &[f64],
    d: [f64; 3],
    cfg: &ShadingConfig,
) -> Result<(f64, [f64; 3])> {
    let b = cfg.basis_len();
    if raw_color.len() != 3 * b {
        return Err(Error::Shape(format!(
            "color feature has {} channels, expected {}",
            raw_color.len(),
            3 * b
        )));
    }
    let basis = eval_sh_basis(d, cfg.sh_degree)?;
    let sigma = softplus(raw_density + cfg.density_shift);
    let rgb = std::array::from_fn(|k| {
        let z: f64 = raw_color[k * b..(k + 1) * b]
            .iter()
            .zip(&basis)
            .map(|(c, y)| c * y)
            .sum();
        sigmoid(z)
    });
    Ok((sigma, rgb))
}
