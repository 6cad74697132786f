//! Electromagnetic primitives: wavenumbers, plane-wave spectral components and
//! refraction through the planar air/dielectric interface at `y = 0`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::SPEED_OF_LIGHT;

/// Iteration cap for the refraction root finder.
pub const REFRACTION_MAX_ITERS: usize = 200;
/// Worst-case error (m) of a returned interface crossing.
pub const REFRACTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmError {
    #[error("frequency must be positive and finite, got {0} Hz")]
    NonPositiveFrequency(f64),
    #[error("wavenumber must be positive and finite, got {0} rad/m")]
    NonPositiveWavenumber(f64),
    #[error("relative permittivity must be >= 1, got {0}")]
    BadPermittivity(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefractionError {
    #[error("refraction solver did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("antenna (y = {air_y}) and scatterer (y = {medium_y}) are not on opposite sides of the interface")]
    SameSide { air_y: f64, medium_y: f64 },
    #[error("relative permittivity must be >= 1, got {0}")]
    BadPermittivity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Free-space wavenumber `2 pi f / c`.
pub fn wavenumber(freq_hz: f64) -> Result<f64, EmError> {
    if !(freq_hz.is_finite() && freq_hz > 0.0) {
        return Err(EmError::NonPositiveFrequency(freq_hz));
    }
    Ok(2.0 * PI * freq_hz / SPEED_OF_LIGHT)
}

/// Wavenumber inside the dielectric, `sqrt(eps) k`.
pub fn medium_wavenumber(k: f64, eps: f64) -> Result<f64, EmError> {
    if !(eps.is_finite() && eps >= 1.0) {
        return Err(EmError::BadPermittivity(eps));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(EmError::NonPositiveWavenumber(k));
    }
    Ok(eps.sqrt() * k)
}

/// `sqrt(radicand)` for a propagating component, `None` when evanescent.
#[inline]
pub fn propagating(radicand: f64) -> Option<f64> {
    if radicand >= 0.0 {
        Some(radicand.sqrt())
    } else {
        None
    }
}

/// Normal wavenumber components of the transmit and receive plane-wave
/// expansions. `None` marks an evanescent component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralComponents {
    /// Transmit path in air, `sqrt(k^2 - (k_z/2)^2)`.
    pub tx_air: Option<f64>,
    /// Transmit path in the medium, `sqrt(k_eps^2 - (k_z/2)^2)`.
    pub tx_medium: Option<f64>,
    /// Receive path in air, `sqrt(k^2 - k_xR^2 - (k_z/2)^2)`.
    pub rx_air: Option<f64>,
    /// Receive path in the medium, `sqrt(k_eps^2 - k_xR^2 - (k_z/2)^2)`.
    pub rx_medium: Option<f64>,
}

impl SpectralComponents {
    pub fn tx_propagating(&self) -> bool {
        self.tx_air.is_some() && self.tx_medium.is_some()
    }

    pub fn rx_propagating(&self) -> bool {
        self.rx_air.is_some() && self.rx_medium.is_some()
    }
}

pub fn spectral_components(k: f64, eps: f64, kx: f64, kz: f64) -> SpectralComponents {
    let k2 = k * k;
    let ke2 = eps * k2;
    let half_kz2 = 0.25 * kz * kz;
    let kx2 = kx * kx;
    SpectralComponents {
        tx_air: propagating(k2 - half_kz2),
        tx_medium: propagating(ke2 - half_kz2),
        rx_air: propagating(k2 - kx2 - half_kz2),
        rx_medium: propagating(ke2 - kx2 - half_kz2),
    }
}

/// Ray from an antenna in air to a point in the medium, bent at the interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefractionSolution {
    /// Interface crossing x (m).
    pub x_b: f64,
    /// Interface crossing z (m).
    pub z_b: f64,
    /// Path length in air (m).
    pub r_air: f64,
    /// Path length in the medium (m).
    pub r_med: f64,
}

impl RefractionSolution {
    /// `r_air + n r_med` for refractive index `n`.
    pub fn optical_length(&self, index: f64) -> f64 {
        self.r_air + index * self.r_med
    }
}

/// Horizontal offset of the interface crossing for a ray from height `h_air`
/// above the interface to depth `h_med` below it, the endpoints being `d` apart
/// horizontally. Solves `sin(theta_air) = n sin(theta_med)` by Newton steps
/// safeguarded to the bracket `[0, d]`, falling back to bisection.
pub fn crossing_offset(d: f64, h_air: f64, h_med: f64, index: f64) -> Result<f64, RefractionError> {
    if d <= 0.0 {
        return Ok(0.0);
    }
    if h_med <= 0.0 {
        return Ok(d);
    }
    if index == 1.0 {
        return Ok(d * h_air / (h_air + h_med));
    }
    let (mut lo, mut hi) = (0.0, d);
    let mut u = d * h_air / (h_air + h_med);
    let step_tol = 1e-13 * d.max(1e-3);
    for _ in 0..REFRACTION_MAX_ITERS {
        let ra = u.hypot(h_air);
        let w = d - u;
        let rm = w.hypot(h_med);
        let g = u / ra - index * w / rm;
        if g == 0.0 {
            return Ok(u);
        }
        if g < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let slope = h_air * h_air / (ra * ra * ra) + index * h_med * h_med / (rm * rm * rm);
        let mut next = u - g / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= step_tol || hi - lo <= f64::EPSILON * d {
            return Ok(next);
        }
        u = next;
    }
    Err(RefractionError::NoConvergence {
        iterations: REFRACTION_MAX_ITERS,
    })
}

/// Optical path `r_air + n r_med` for the in-plane geometry of [`crossing_offset`].
pub fn in_plane_optical_length(d: f64, h_air: f64, h_med: f64, index: f64) -> Result<f64, RefractionError> {
    let u = crossing_offset(d, h_air, h_med, index)?;
    Ok(u.hypot(h_air) + index * (d - u).hypot(h_med))
}

/// Refracted ray between `air` (y < 0) and `medium` (y >= 0).
///
/// The crossing lies in the vertical plane through both points; within that
/// plane it is the stationary point of the optical path length.
pub fn solve_refraction(air: Point3, medium: Point3, eps: f64) -> Result<RefractionSolution, RefractionError> {
    if !(eps.is_finite() && eps >= 1.0) {
        return Err(RefractionError::BadPermittivity(eps));
    }
    if !(air.y < 0.0 && medium.y >= 0.0) {
        return Err(RefractionError::SameSide {
            air_y: air.y,
            medium_y: medium.y,
        });
    }
    let dx = medium.x - air.x;
    let dz = medium.z - air.z;
    let d = dx.hypot(dz);
    let u = crossing_offset(d, -air.y, medium.y, eps.sqrt())?;
    let (x_b, z_b) = if d > 0.0 {
        let t = u / d;
        (air.x + t * dx, air.z + t * dz)
    } else {
        (air.x, air.z)
    };
    let r_air = air.distance(&Point3::new(x_b, 0.0, z_b));
    let r_med = medium.distance(&Point3::new(x_b, 0.0, z_b));
    Ok(RefractionSolution { x_b, z_b, r_air, r_med })
}

/// Optical path length `R_air + sqrt(eps) R_med` from an antenna to a scatterer.
///
/// With `eps == 1` there is no interface and the straight-line distance is
/// returned for any scatterer in front of the antenna.
pub fn optical_path(antenna: Point3, target: Point3, eps: f64) -> Result<f64, RefractionError> {
    if eps == 1.0 {
        return Ok(antenna.distance(&target));
    }
    Ok(solve_refraction(antenna, target, eps)?.optical_length(eps.sqrt()))
}
