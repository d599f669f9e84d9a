use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contact-active threshold used for sampling, area and masks.
pub const CONTACT_EPS_MM: f64 = 0.05;

/// Gel pad geometry. The sensor frame has its origin at the gel center, +x to
/// the right, +y to the top, and +z out of the gel toward the object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub width_mm: f64,
    pub height_mm: f64,
    pub max_depth_mm: f64,
    pub grid_pitch_mm: f64,
    pub smoothing_sigma_mm: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            width_mm: 20.0,
            height_mm: 15.0,
            max_depth_mm: 3.5,
            grid_pitch_mm: 0.1,
            smoothing_sigma_mm: 0.3,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.width_mm,
            self.height_mm,
            self.max_depth_mm,
            self.grid_pitch_mm,
            self.smoothing_sigma_mm,
        ];
        if fields.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Contract("sensor dimensions must be positive".into()));
        }
        if self.max_depth_mm >= self.width_mm.min(self.height_mm) {
            return Err(Error::Contract("max depth must be below the gel extent".into()));
        }
        for extent in [self.width_mm, self.height_mm] {
            let cells = extent / self.grid_pitch_mm;
            if (cells - cells.round()).abs() > 1e-6 {
                return Err(Error::Contract(format!(
                    "extent {extent} is not a whole number of {} mm cells",
                    self.grid_pitch_mm
                )));
            }
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        (self.width_mm / self.grid_pitch_mm).round() as usize
    }

    pub fn ny(&self) -> usize {
        (self.height_mm / self.grid_pitch_mm).round() as usize
    }

    /// Center of grid cell `(col, row)`. Row 0 is the top edge (+y).
    pub fn cell_center(&self, col: usize, row: usize) -> [f64; 2] {
        [
            -self.width_mm / 2.0 + (col as f64 + 0.5) * self.grid_pitch_mm,
            self.height_mm / 2.0 - (row as f64 + 0.5) * self.grid_pitch_mm,
        ]
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.width_mm / 2.0 && y.abs() <= self.height_mm / 2.0
    }

    /// Maps sensor-frame mm into `[-1, 1]³`.
    pub fn normalize_point(&self, p: [f32; 3]) -> [f32; 3] {
        [
            p[0] * (2.0 / self.width_mm) as f32,
            p[1] * (2.0 / self.height_mm) as f32,
            p[2] * (2.0 / self.max_depth_mm) as f32 - 1.0,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid() {
        let s = SensorSpec::default();
        s.validate().unwrap();
        assert_eq!((s.nx(), s.ny()), (200, 150));
        let c = s.cell_center(0, 0);
        assert!((c[0] + 9.95).abs() < 1e-12 && (c[1] - 7.45).abs() < 1e-12);
    }

    #[test]
    fn rejects_fractional_grid() {
        let s = SensorSpec {
            grid_pitch_mm: 0.3,
            ..Default::default()
        };
        assert!(s.validate().is_err());
        let s = SensorSpec {
            max_depth_mm: 16.0,
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn normalization_maps_box_corners() {
        let s = SensorSpec::default();
        assert_eq!(s.normalize_point([10.0, -7.5, 0.0]), [1.0, -1.0, -1.0]);
        assert_eq!(s.normalize_point([0.0, 0.0, 3.5]), [0.0, 0.0, 1.0]);
    }
}
