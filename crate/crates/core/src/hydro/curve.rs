use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// One knot of the level / volume / area characteristic of a reservoir.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveKnot {
    /// Water level, m amsl.
    pub level: f64,
    /// Stored volume, 10⁶ m³.
    pub volume_mcm: f64,
    /// Free surface area, km².
    pub area_km2: f64,
}

impl CurveKnot {
    pub const fn new(level: f64, volume_mcm: f64, area_km2: f64) -> Self {
        Self {
            level,
            volume_mcm,
            area_km2,
        }
    }

    /// Volume in the model's canonical unit (10³ m³).
    pub fn volume(&self) -> f64 {
        self.volume_mcm * 1000.0
    }
}

/// Piecewise-linear storage curve, queried on the volume axis (10³ m³)
/// or the level axis (m amsl).
#[derive(Debug, Clone, PartialEq)]
pub struct StorageCurve<'a> {
    knots: &'a [CurveKnot],
}

impl<'a> StorageCurve<'a> {
    pub fn new(knots: &'a [CurveKnot]) -> Result<Self, ModelError> {
        validate_knots(knots)?;
        Ok(Self { knots })
    }

    /// Skips validation; callers must hold an already validated knot list.
    pub(crate) fn new_unchecked(knots: &'a [CurveKnot]) -> Self {
        Self { knots }
    }

    pub fn min_volume(&self) -> f64 {
        self.knots[0].volume()
    }

    pub fn max_volume(&self) -> f64 {
        self.knots[self.knots.len() - 1].volume()
    }

    /// Level (m amsl) and area (km²) at `volume` (10³ m³).
    pub fn at_volume(&self, volume: f64) -> Result<(f64, f64), ModelError> {
        let lo = self.min_volume();
        let hi = self.max_volume();
        if !(volume >= lo) {
            return Err(ModelError::VolumeOutOfRange {
                volume,
                bound: "lower",
                limit: lo,
            });
        }
        if volume > hi {
            return Err(ModelError::VolumeOutOfRange {
                volume,
                bound: "upper",
                limit: hi,
            });
        }
        let k = segment(self.knots, volume, CurveKnot::volume);
        let (a, b) = (&self.knots[k], &self.knots[k + 1]);
        let f = (volume - a.volume()) / (b.volume() - a.volume());
        Ok((lerp(a.level, b.level, f), lerp(a.area_km2, b.area_km2, f)))
    }

    pub fn level(&self, volume: f64) -> Result<f64, ModelError> {
        self.at_volume(volume).map(|(h, _)| h)
    }

    pub fn area(&self, volume: f64) -> Result<f64, ModelError> {
        self.at_volume(volume).map(|(_, a)| a)
    }

    /// Inverse query: volume (10³ m³) at `level` (m amsl).
    pub fn volume_at_level(&self, level: f64) -> Result<f64, ModelError> {
        let lo = self.knots[0].level;
        let hi = self.knots[self.knots.len() - 1].level;
        if !(level >= lo) {
            return Err(ModelError::LevelOutOfRange {
                level,
                bound: "lower",
                limit: lo,
            });
        }
        if level > hi {
            return Err(ModelError::LevelOutOfRange {
                level,
                bound: "upper",
                limit: hi,
            });
        }
        let k = segment(self.knots, level, |k| k.level);
        let (a, b) = (&self.knots[k], &self.knots[k + 1]);
        let f = (level - a.level) / (b.level - a.level);
        Ok(lerp(a.volume(), b.volume(), f))
    }
}

pub(crate) fn validate_knots(knots: &[CurveKnot]) -> Result<(), ModelError> {
    if knots.len() < 2 {
        return Err(ModelError::InvalidSpec("storage curve needs at least two knots".into()));
    }
    for (idx, w) in knots.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        if !(b.level > a.level && b.volume_mcm > a.volume_mcm && b.area_km2 > a.area_km2) {
            return Err(ModelError::InvalidSpec(format!(
                "storage curve not strictly increasing between knots {idx} and {}",
                idx + 1
            )));
        }
    }
    if knots
        .iter()
        .any(|k| !(k.level.is_finite() && k.volume_mcm.is_finite() && k.area_km2.is_finite()))
    {
        return Err(ModelError::InvalidSpec("storage curve has non-finite values".into()));
    }
    Ok(())
}

/// Index `k` of the segment [k, k+1] containing `x`. The last knot maps to
/// the final segment so that knot values are reproduced exactly.
fn segment(knots: &[CurveKnot], x: f64, key: impl Fn(&CurveKnot) -> f64) -> usize {
    let upper = knots.partition_point(|k| key(k) <= x);
    upper.saturating_sub(1).min(knots.len() - 2)
}

fn lerp(a: f64, b: f64, f: f64) -> f64 {
    if f == 0.0 {
        a
    } else if f == 1.0 {
        b
    } else {
        a + (b - a) * f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydro::SystemSpec;

    #[test]
    fn knots_are_reproduced_exactly() {
        let spec = SystemSpec::knezevo();
        let curve = spec.curve();
        for k in &spec.storage_curve {
            let (h, a) = curve.at_volume(k.volume()).unwrap();
            assert_eq!(h, k.level);
            assert_eq!(a, k.area_km2);
            assert_eq!(curve.volume_at_level(k.level).unwrap(), k.volume());
        }
    }

    #[test]
    fn table_values() {
        let spec = SystemSpec::knezevo();
        let curve = spec.curve();
        assert_eq!(curve.at_volume(22_010.0).unwrap(), (1060.0, 0.74));
        assert_eq!(curve.at_volume(0.0).unwrap(), (990.0, 0.0));
        let h = curve.level(12_745.0).unwrap();
        assert!((h - 1045.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_names_bound() {
        let spec = SystemSpec::knezevo();
        let curve = spec.curve();
        match curve.at_volume(-1.0) {
            Err(ModelError::VolumeOutOfRange { bound, .. }) => assert_eq!(bound, "lower"),
            other => panic!("unexpected {other:?}"),
        }
        match curve.at_volume(1e9) {
            Err(ModelError::VolumeOutOfRange { bound, .. }) => assert_eq!(bound, "upper"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(curve.at_volume(f64::NAN).is_err());
        assert!(curve.volume_at_level(980.0).is_err());
    }

    #[test]
    fn rejects_non_monotone_curve() {
        let knots = [CurveKnot::new(1.0, 1.0, 1.0), CurveKnot::new(2.0, 0.5, 2.0)];
        assert!(StorageCurve::new(&knots).is_err());
        assert!(StorageCurve::new(&knots[..1]).is_err());
    }
}
