//! Run configuration and its validation into a ready-to-run job.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use oro_core::alloc::{Formulation, DEFAULT_NU};
use oro_core::grid::StorageGrid;
use oro_core::hydro::{StepRecord, SystemSpec, WeightVector};
use oro_core::moss::{SolverConfig, SolverKind};
use oro_core::ndp::DpOptions;
use oro_core::nrl::{MissingState, RlConfig};
use oro_core::nsdp::{SdpOptions, DEFAULT_CLASSES};

use crate::ingest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunSolver {
    Ndp,
    AwdDp,
    Nsdp,
    Nrl,
    Moss,
}

impl RunSolver {
    pub fn single(self) -> Option<SolverKind> {
        match self {
            Self::Ndp => Some(SolverKind::Ndp),
            Self::AwdDp => Some(SolverKind::AwdDp),
            Self::Nsdp => Some(SolverKind::Nsdp),
            Self::Nrl => Some(SolverKind::Nrl),
            Self::Moss => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridDef {
    /// Levels `step` apart from s_dead, plus s_max.
    Step(f64),
    /// `count` evenly spaced levels from s_dead to s_max.
    Count(usize),
    Levels(Vec<f64>),
}

/// Weight vectors and the solver run for each of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub solver: SolverKind,
    pub weights: Vec<[f64; 8]>,
}

fn default_spy() -> usize {
    52
}
fn default_formulation() -> Formulation {
    Formulation::Quadratic
}
fn default_nu() -> usize {
    DEFAULT_NU
}
fn default_classes() -> usize {
    DEFAULT_CLASSES
}
fn default_seed() -> u64 {
    1
}
fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub solver: RunSolver,
    pub series: PathBuf,
    pub demands: PathBuf,
    /// System description as JSON; the Knezevo system when absent.
    #[serde(default)]
    pub spec: Option<PathBuf>,
    #[serde(default = "default_spy")]
    pub steps_per_year: usize,
    pub grid: GridDef,
    #[serde(default = "default_formulation")]
    pub formulation: Formulation,
    #[serde(default)]
    pub weights: Option<[f64; 8]>,
    #[serde(default)]
    pub sweep: Option<SweepManifest>,
    #[serde(default)]
    pub sweep_path: Option<PathBuf>,
    /// Whole years used for training; the rest is the evaluation split.
    /// Without it every solver uses the whole series.
    #[serde(default)]
    pub train_years: Option<usize>,
    #[serde(default = "default_nu")]
    pub nu: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default)]
    pub dp: DpOptions,
    #[serde(default)]
    pub sdp: SdpOptions,
    #[serde(default)]
    pub rl: RlConfig,
    #[serde(default)]
    pub missing: MissingState,
    #[serde(default)]
    pub start_storage: Option<f64>,
    /// Track Sₙ against nDP during nRL training.
    #[serde(default)]
    pub reference: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Parallel sweep entries.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

fn field(f: &str, m: impl std::fmt::Display) -> FieldError {
    FieldError {
        field: f.to_string(),
        message: m.to_string(),
    }
}

/// A validated configuration with its data loaded.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spec: SystemSpec,
    pub records: Vec<StepRecord>,
    pub grid: StorageGrid,
    /// Steps in the training split.
    pub train_len: usize,
    pub solver: SolverKind,
    pub weights: Vec<WeightVector>,
    pub sweep: bool,
    pub solver_cfg: SolverConfig,
}

impl Prepared {
    pub fn train(&self) -> &[StepRecord] {
        if self.train_len == 0 {
            &self.records
        } else {
            &self.records[..self.train_len]
        }
    }

    pub fn eval(&self) -> &[StepRecord] {
        if self.train_len == 0 {
            &self.records
        } else {
            &self.records[self.train_len..]
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Relative paths made relative to `base`.
    pub fn resolved(&self, base: &Path) -> Self {
        let mut c = self.clone();
        c.series = resolve(base, &c.series);
        c.demands = resolve(base, &c.demands);
        c.spec = c.spec.map(|p| resolve(base, &p));
        c.sweep_path = c.sweep_path.map(|p| resolve(base, &p));
        c.output_dir = c.output_dir.map(|p| resolve(base, &p));
        c
    }

    pub fn load_spec(&self) -> Result<SystemSpec, FieldError> {
        let spec = match &self.spec {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| field("spec", format!("{}: {e}", p.display())))?;
                serde_json::from_str::<SystemSpec>(&text).map_err(|e| field("spec", e))?
            }
            None => SystemSpec::knezevo().with_steps_per_year(self.steps_per_year),
        };
        spec.validate().map_err(|e| field("spec", e))?;
        Ok(spec)
    }

    pub fn manifest(&self) -> Result<Option<SweepManifest>, FieldError> {
        if let Some(m) = &self.sweep {
            return Ok(Some(m.clone()));
        }
        match &self.sweep_path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| field("sweep_path", format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map(Some)
                    .map_err(|e| field("sweep_path", e))
            }
            None => Ok(None),
        }
    }

    /// Check every field and load the data; all problems are reported at once.
    pub fn prepare(&self) -> Result<Prepared, Vec<FieldError>> {
        let mut errors = Vec::new();
        let spec = self.load_spec().map_err(|e| errors.push(e)).ok();
        let series = ingest::read_series(&self.series)
            .map_err(|e| errors.push(field("series", e)))
            .ok();
        let demands = ingest::read_demands(&self.demands)
            .map_err(|e| errors.push(field("demands", e)))
            .ok();
        let manifest = self.manifest().map_err(|e| errors.push(e)).ok().flatten();

        let (solver, raw_weights, sweep) = match (self.solver.single(), &manifest) {
            (Some(k), _) => match self.weights {
                Some(w) => (Some(k), vec![w], false),
                None => {
                    errors.push(field("weights", "required for a single-solver run"));
                    (Some(k), Vec::new(), false)
                }
            },
            (None, Some(m)) => {
                if m.weights.is_empty() {
                    errors.push(field("sweep", "manifest has no weight vectors"));
                }
                (Some(m.solver), m.weights.clone(), true)
            }
            (None, None) => {
                errors.push(field("sweep", "moss runs need sweep or sweep_path"));
                (None, Vec::new(), true)
            }
        };
        let weights: Vec<WeightVector> = raw_weights
            .iter()
            .enumerate()
            .filter_map(|(i, w)| {
                WeightVector::new(*w)
                    .map_err(|e| {
                        errors.push(field(
                            if sweep { "sweep.weights" } else { "weights" },
                            format!("vector {i}: {e}"),
                        ))
                    })
                    .ok()
            })
            .collect();
        if self.nu == 0 {
            errors.push(field("nu", "must be at least 1"));
        }
        if self.classes == 0 {
            errors.push(field("classes", "must be at least 1"));
        }
        if self.workers == 0 {
            errors.push(field("workers", "must be at least 1"));
        }
        if let Err(e) = self.rl.validate() {
            errors.push(field("rl", e));
        }

        let mut records = None;
        let mut grid = None;
        if let Some(spec) = &spec {
            if let (Some(s), Some(d)) = (&series, &demands) {
                match ingest::combine(spec, s, d) {
                    Ok(r) => records = Some(r),
                    Err(e) => errors.push(field("series", e)),
                }
            }
            let g = match &self.grid {
                GridDef::Step(step) => StorageGrid::with_step(spec, *step),
                GridDef::Count(n) => StorageGrid::uniform(spec, *n),
                GridDef::Levels(l) => StorageGrid::new(l.clone()).and_then(|g| g.checked(spec)),
            };
            match g {
                Ok(g) => grid = Some(g),
                Err(e) => errors.push(field("grid", e)),
            }
            if let Some(s0) = self.start_storage {
                if !(s0 >= spec.s_dead && s0 <= spec.s_max) {
                    errors.push(field(
                        "start_storage",
                        format!("{s0} outside [{}, {}]", spec.s_dead, spec.s_max),
                    ));
                }
            }
        }

        let mut train_len = 0;
        if let (Some(spec), Some(r)) = (&spec, &records) {
            let spy = spec.steps_per_year;
            if let Some(y) = self.train_years {
                if y == 0 || y * spy >= r.len() {
                    errors.push(field(
                        "train_years",
                        format!("split after {y} years must fall inside the {}-step series", r.len()),
                    ));
                } else {
                    train_len = y * spy;
                }
            }
            if solver.is_some_and(|k| k.trains()) {
                let train_steps = if train_len == 0 { r.len() } else { train_len };
                if train_steps < spy {
                    errors.push(field("series", "training needs at least one whole year"));
                }
            }
        }

        if !errors.is_empty() {
            return Err(errors);
        }
        let spec = spec.expect("checked");
        let mut records = records.expect("checked");
        let solver = solver.expect("checked");
        if train_len > 0 {
            let (a, b) = oro_core::series::split_years(&records, spec.steps_per_year, train_len / spec.steps_per_year)
                .map_err(|e| vec![field("train_years", e)])?;
            records = a.into_iter().chain(b).collect();
        }
        let solver_cfg = SolverConfig {
            solver,
            formulation: self.formulation,
            nu: self.nu,
            dp: self.dp,
            sdp: self.sdp,
            classes: self.classes,
            rl: self.rl.clone(),
            missing: self.missing,
            start_storage: self.start_storage,
            seed: self.seed,
            reference: self.reference,
        };
        Ok(Prepared {
            spec,
            records,
            grid: grid.expect("checked"),
            train_len,
            solver,
            weights,
            sweep,
            solver_cfg,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_takes_defaults() {
        let c = RunConfig::from_json(
            r#"{"solver":"ndp","series":"s.csv","demands":"d.csv","grid":{"step":300},"weights":[1,1,1,1,1,1,1,1]}"#,
        )
        .unwrap();
        assert_eq!(c.formulation, Formulation::Quadratic);
        assert_eq!(c.nu, 50);
        assert_eq!(c.grid, GridDef::Step(300.0));
        assert_eq!(c.rl.alpha0, 0.8);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(
            RunConfig::from_json(r#"{"solver":"ndp","series":"s","demands":"d","grid":{"count":5},"bogus":1}"#)
                .is_err()
        );
    }

    #[test]
    fn missing_files_reported_per_field() {
        let c = RunConfig::from_json(
            r#"{"solver":"moss","series":"/nonexistent/s.csv","demands":"/nonexistent/d.csv","grid":{"count":5}}"#,
        )
        .unwrap();
        let errs = c.prepare().unwrap_err();
        let fields: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
        assert!(
            fields.contains(&"series") && fields.contains(&"demands") && fields.contains(&"sweep"),
            "{fields:?}"
        );
    }
}
