//! Image quality metrics.
//!
//! Image entropy is computed on normalised intensity:
//! `p_i = |I_i|^2 / sum_j |I_j|^2` and `IE = -sum_i p_i log2 p_i` bits, with
//! `0 log 0 = 0`. Lower entropy means a more focused image. An all-zero image
//! has no intensity distribution and reports `+inf`.
//!
//! Decibel values are `20 log10` of magnitude relative to the global peak.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use ndarray::{Array2, Axis};

use crate::operators::ImageVolume;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImageAxis {
    X,
    Y,
    Z,
}

impl ImageAxis {
    pub fn index(self) -> usize {
        match self {
            ImageAxis::X => 0,
            ImageAxis::Y => 1,
            ImageAxis::Z => 2,
        }
    }
}

impl FromStr for ImageAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(ImageAxis::X),
            "y" => Ok(ImageAxis::Y),
            "z" => Ok(ImageAxis::Z),
            other => Err(format!("unknown axis `{other}` (expected x, y or z)")),
        }
    }
}

impl fmt::Display for ImageAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImageAxis::X => "x",
            ImageAxis::Y => "y",
            ImageAxis::Z => "z",
        })
    }
}

/// Shannon entropy (bits) of the normalised intensity of `values`.
pub fn intensity_entropy<'a>(values: impl IntoIterator<Item = &'a num_complex::Complex64> + Clone) -> f64 {
    let total: f64 = values.clone().into_iter().map(|v| v.norm_sqr()).sum();
    if total == 0.0 || !total.is_finite() {
        return f64::INFINITY;
    }
    let h: f64 = values
        .into_iter()
        .map(|v| {
            let p = v.norm_sqr() / total;
            if p > 0.0 {
                -p * p.log2()
            } else {
                0.0
            }
        })
        .sum();
    h.max(0.0)
}

/// Image entropy in bits; `+inf` for an all-zero image.
pub fn image_entropy(image: &ImageVolume) -> f64 {
    intensity_entropy(image.data().iter())
}

/// Entropy of one 2-D section `index` along `axis`.
pub fn section_entropy(image: &ImageVolume, axis: ImageAxis, index: usize) -> Result<f64> {
    let len = image.dims()[axis.index()];
    if index >= len {
        return Err(Error::IndexOutOfRange { index, len });
    }
    let section = image.data().index_axis(Axis(axis.index()), index);
    Ok(intensity_entropy(section.iter()))
}

/// Voxel with the largest magnitude, ties going to the lexicographically
/// smallest index.
pub fn peak_location(image: &ImageVolume) -> Result<([usize; 3], f64)> {
    let mut best: Option<([usize; 3], f64)> = None;
    for ((i, j, k), v) in image.data().indexed_iter() {
        let m = v.norm();
        if best.is_none_or(|(_, b)| m > b) {
            best = Some(([i, j, k], m));
        }
    }
    best.ok_or(Error::EmptyImage)
}

/// Maximum-magnitude projection along `axis` in dB relative to the global
/// peak, clipped below at `-dynamic_range_db`.
///
/// The result is indexed by the two remaining axes in their original order.
pub fn max_projection(image: &ImageVolume, axis: ImageAxis, dynamic_range_db: f64) -> Result<Array2<f64>> {
    if image.data().is_empty() {
        return Err(Error::EmptyImage);
    }
    let magnitude = image.data().mapv(|v| v.norm());
    let projected = magnitude.map_axis(Axis(axis.index()), |lane| lane.iter().fold(0.0f64, |m, v| m.max(*v)));
    let peak = projected.iter().fold(0.0f64, |m, v| m.max(*v));
    Ok(projected.mapv(|v| to_db(v, peak, dynamic_range_db)))
}

/// One 2-D section along `axis` in dB relative to the global image peak.
pub fn section_db(image: &ImageVolume, axis: ImageAxis, index: usize, dynamic_range_db: f64) -> Result<Array2<f64>> {
    let len = image.dims()[axis.index()];
    if index >= len {
        return Err(Error::IndexOutOfRange { index, len });
    }
    let (_, peak) = peak_location(image)?;
    Ok(image
        .data()
        .index_axis(Axis(axis.index()), index)
        .mapv(|v| to_db(v.norm(), peak, dynamic_range_db)))
}

fn to_db(value: f64, peak: f64, range: f64) -> f64 {
    if peak <= 0.0 {
        // an all-zero image is uniform
        return 0.0;
    }
    (20.0 * (value / peak).log10()).max(-range)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub axis: ImageAxis,
    pub dynamic_range_db: f64,
    pub values_db: Array2<f64>,
}

/// Summary metrics of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub image_entropy_bits: f64,
    /// `volume`, or `section <axis>=<index>` when computed on a 2-D cut.
    pub entropy_scope: String,
    pub peak_voxel: [usize; 3],
    pub peak_value: f64,
    pub projection: Option<Projection>,
}

impl MetricsReport {
    pub fn compute(image: &ImageVolume, projection: Option<(ImageAxis, f64)>) -> Result<Self> {
        let (peak_voxel, peak_value) = peak_location(image)?;
        let projection = projection
            .map(|(axis, range)| -> Result<Projection> {
                Ok(Projection {
                    axis,
                    dynamic_range_db: range,
                    values_db: max_projection(image, axis, range)?,
                })
            })
            .transpose()?;
        Ok(MetricsReport {
            image_entropy_bits: image_entropy(image),
            entropy_scope: "volume".into(),
            peak_voxel,
            peak_value,
            projection,
        })
    }

    /// Flat `key = value` record, one metric per line.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "image_entropy_bits = {}", self.image_entropy_bits);
        let _ = writeln!(out, "entropy_scope = {}", self.entropy_scope);
        let _ = writeln!(out, "peak_x = {}", self.peak_voxel[0]);
        let _ = writeln!(out, "peak_y = {}", self.peak_voxel[1]);
        let _ = writeln!(out, "peak_z = {}", self.peak_voxel[2]);
        let _ = writeln!(out, "peak_value = {}", self.peak_value);
        if let Some(p) = &self.projection {
            let _ = writeln!(out, "projection_axis = {}", p.axis);
            let _ = writeln!(out, "projection_range_db = {}", p.dynamic_range_db);
            let _ = writeln!(out, "projection_shape = {}x{}", p.values_db.nrows(), p.values_db.ncols());
        }
        out
    }
}

/// Cells of a 2-D map that are strict maxima of their 8-neighbourhood and
/// exceed `floor_db`.
pub fn local_maxima(map: &Array2<f64>, floor_db: f64) -> Vec<(usize, usize)> {
    let (nr, nc) = map.dim();
    let mut out = Vec::new();
    for r in 0..nr {
        for c in 0..nc {
            let v = map[[r, c]];
            if v <= floor_db {
                continue;
            }
            let mut is_max = true;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= nr as i64 || cc >= nc as i64 {
                        continue;
                    }
                    if map[[rr as usize, cc as usize]] >= v {
                        is_max = false;
                    }
                }
            }
            if is_max {
                out.push((r, c));
            }
        }
    }
    out
}
