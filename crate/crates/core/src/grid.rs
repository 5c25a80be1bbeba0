use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::hydro::SystemSpec;

/// Discrete storage levels (10³ m³) the solvers move between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StorageGrid {
    levels: Vec<f64>,
}

impl StorageGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self, ModelError> {
        if levels.len() < 2 {
            return Err(ModelError::InvalidGrid("grid needs at least two levels".into()));
        }
        if levels.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::InvalidGrid("grid levels must be finite".into()));
        }
        if levels.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ModelError::InvalidGrid(
                "grid levels must be strictly increasing".into(),
            ));
        }
        Ok(Self { levels })
    }

    /// `count` evenly spaced levels from s_dead to s_max inclusive.
    pub fn uniform(spec: &SystemSpec, count: usize) -> Result<Self, ModelError> {
        if count < 2 {
            return Err(ModelError::InvalidGrid("grid needs at least two levels".into()));
        }
        let lo = spec.s_dead;
        let step = (spec.s_max - lo) / (count - 1) as f64;
        let mut levels: Vec<f64> = (0..count).map(|k| lo + step * k as f64).collect();
        levels[count - 1] = spec.s_max;
        Self::new(levels).and_then(|g| g.checked(spec))
    }

    /// Levels s_dead, s_dead + step, ...; s_max is appended if not hit exactly.
    pub fn with_step(spec: &SystemSpec, step: f64) -> Result<Self, ModelError> {
        if !(step > 0.0) {
            return Err(ModelError::InvalidGrid("grid step must be positive".into()));
        }
        let mut levels = Vec::new();
        let mut k = 0usize;
        loop {
            let v = spec.s_dead + step * k as f64;
            if v >= spec.s_max - 1e-9 * step {
                break;
            }
            levels.push(v);
            k += 1;
        }
        levels.push(spec.s_max);
        Self::new(levels).and_then(|g| g.checked(spec))
    }

    /// Reject grids reaching outside [s_dead, s_max].
    pub fn checked(self, spec: &SystemSpec) -> Result<Self, ModelError> {
        if self.min() < spec.s_dead || self.max() > spec.s_max {
            return Err(ModelError::InvalidGrid(format!(
                "grid [{}, {}] outside [{}, {}]",
                self.min(),
                self.max(),
                spec.s_dead,
                spec.s_max
            )));
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn get(&self, i: usize) -> f64 {
        self.levels[i]
    }

    pub fn min(&self) -> f64 {
        self.levels[0]
    }

    pub fn max(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }

    pub fn top(&self) -> usize {
        self.levels.len() - 1
    }

    /// Index of the level closest to `s`; exact midpoints go to the lower level.
    pub fn nearest(&self, s: f64) -> usize {
        let k = self.levels.partition_point(|&x| x < s);
        if k == 0 {
            return 0;
        }
        if k == self.levels.len() {
            return k - 1;
        }
        let (lo, hi) = (self.levels[k - 1], self.levels[k]);
        if s - lo <= hi - s {
            k - 1
        } else {
            k
        }
    }

    /// Index whose level equals `s` within `tol`.
    pub fn index_of(&self, s: f64, tol: f64) -> Option<usize> {
        let i = self.nearest(s);
        ((self.levels[i] - s).abs() <= tol).then_some(i)
    }
}

impl TryFrom<Vec<f64>> for StorageGrid {
    type Error = ModelError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<StorageGrid> for Vec<f64> {
    fn from(g: StorageGrid) -> Self {
        g.levels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_spans_operating_range() {
        let spec = SystemSpec::knezevo();
        let g = StorageGrid::uniform(&spec, 5).unwrap();
        assert_eq!(g.levels(), &[1_500.0, 7_000.0, 12_500.0, 18_000.0, 23_500.0]);
    }

    #[test]
    fn stepped_grid_appends_top() {
        let spec = SystemSpec::knezevo();
        let g = StorageGrid::with_step(&spec, 300.0).unwrap();
        assert_eq!(g.min(), 1_500.0);
        assert_eq!(g.max(), 23_500.0);
        assert!((g.get(1) - 1_800.0).abs() < 1e-12);
        assert_eq!(g.len(), 75);
    }

    #[test]
    fn rejects_bad_grids() {
        let spec = SystemSpec::knezevo();
        assert!(StorageGrid::new(vec![1.0]).is_err());
        assert!(StorageGrid::new(vec![2.0, 2.0]).is_err());
        assert!(StorageGrid::new(vec![100.0, 2_000.0]).unwrap().checked(&spec).is_err());
        assert!(serde_json::from_str::<StorageGrid>("[3.0, 1.0]").is_err());
    }

    #[test]
    fn nearest_snaps_midpoint_down() {
        let g = StorageGrid::new(vec![0.0, 10.0, 20.0]).unwrap();
        assert_eq!(g.nearest(5.0), 0);
        assert_eq!(g.nearest(5.1), 1);
        assert_eq!(g.nearest(-3.0), 0);
        assert_eq!(g.nearest(99.0), 2);
        assert_eq!(g.index_of(10.0, 1e-9), Some(1));
        assert_eq!(g.index_of(10.5, 1e-9), None);
    }
}
