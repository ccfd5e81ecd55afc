//! Circular cone-beam geometry.
//!
//! Rays are expressed in an isocentric frame: the isocenter is the origin,
//! the rotation axis is `x` (the volume's slice axis) and the source circles
//! in the `y-z` plane. Projectors shift rays by the volume center.
//! Detector rows (`v`) run along the rotation axis, columns (`u`) along the
//! tangential direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionGeometry {
    pub source_detector_mm: f64,
    pub detector_iso_mm: f64,
    /// `(n_u, n_v)`: columns, rows.
    pub detector_pixels: [usize; 2],
    pub pixel_pitch_mm: f64,
    pub angles_deg: Vec<f64>,
}

impl Default for ProjectionGeometry {
    fn default() -> Self {
        Self {
            source_detector_mm: 1164.0,
            detector_iso_mm: 700.0,
            detector_pixels: [976, 976],
            pixel_pitch_mm: 0.305,
            angles_deg: uniform_angles(60),
        }
    }
}

/// `n` views evenly spaced over a full turn starting at 0°.
pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 * 360.0 / n as f64).collect()
}

/// Source position, detector center and unit axes for one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewFrame {
    pub source: [f64; 3],
    pub detector_center: [f64; 3],
    pub u_axis: [f64; 3],
    pub v_axis: [f64; 3],
}

impl ProjectionGeometry {
    pub fn source_iso_mm(&self) -> f64 {
        self.source_detector_mm - self.detector_iso_mm
    }

    pub fn magnification(&self) -> f64 {
        self.source_detector_mm / self.source_iso_mm()
    }

    pub fn n_views(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn width(&self) -> usize {
        self.detector_pixels[0]
    }

    pub fn height(&self) -> usize {
        self.detector_pixels[1]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.detector_iso_mm > 0.0 && self.source_detector_mm > self.detector_iso_mm)
            || !self.source_detector_mm.is_finite()
        {
            return Err(Error::invalid(format!(
                "need source-detector ({}) > detector-isocenter ({}) > 0",
                self.source_detector_mm, self.detector_iso_mm
            )));
        }
        if self.detector_pixels.contains(&0) {
            return Err(Error::invalid("detector needs at least one pixel per axis"));
        }
        if !(self.pixel_pitch_mm > 0.0 && self.pixel_pitch_mm.is_finite()) {
            return Err(Error::invalid("pixel pitch must be > 0"));
        }
        if self.angles_deg.is_empty() {
            return Err(Error::invalid("at least one view angle is required"));
        }
        if self.angles_deg.iter().any(|a| !(0.0..360.0).contains(a))
            || self.angles_deg.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::invalid("angles must be strictly increasing within [0, 360)"));
        }
        Ok(())
    }

    pub fn view_frame(&self, view: usize) -> Result<ViewFrame> {
        let angle = *self.angles_deg.get(view).ok_or_else(|| {
            Error::OutOfBounds(format!("view {view} of {}", self.angles_deg.len()))
        })?;
        let (s, c) = angle.to_radians().sin_cos();
        let toward_source = [0.0, c, s];
        let sid = self.source_iso_mm();
        let did = self.detector_iso_mm;
        Ok(ViewFrame {
            source: toward_source.map(|e| sid * e),
            detector_center: toward_source.map(|e| -did * e),
            u_axis: [0.0, -s, c],
            v_axis: [1.0, 0.0, 0.0],
        })
    }

    /// World position of the center of detector pixel `(u, v)`.
    pub fn pixel_center(&self, frame: &ViewFrame, u: f64, v: f64) -> [f64; 3] {
        let du = (u - 0.5 * (self.width() - 1) as f64) * self.pixel_pitch_mm;
        let dv = (v - 0.5 * (self.height() - 1) as f64) * self.pixel_pitch_mm;
        [0, 1, 2].map(|a| frame.detector_center[a] + du * frame.u_axis[a] + dv * frame.v_axis[a])
    }

    /// Ray from the source through pixel `(u, v)` of `view`, unit direction.
    pub fn ray_for_pixel(&self, view: usize, u: usize, v: usize) -> Result<([f64; 3], [f64; 3])> {
        if u >= self.width() || v >= self.height() {
            return Err(Error::OutOfBounds(format!(
                "pixel ({u}, {v}) outside {}x{} detector",
                self.width(),
                self.height()
            )));
        }
        let frame = self.view_frame(view)?;
        Ok(self.ray_through(&frame, u as f64, v as f64))
    }

    #[inline]
    pub(crate) fn ray_through(&self, frame: &ViewFrame, u: f64, v: f64) -> ([f64; 3], [f64; 3]) {
        let p = self.pixel_center(frame, u, v);
        let d = [0, 1, 2].map(|a| p[a] - frame.source[a]);
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        (frame.source, d.map(|x| x / n))
    }
}
