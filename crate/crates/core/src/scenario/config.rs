use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cocycle::{named_field, CocycleSystem, PolynomialField, StateBox, FIELD_REGISTRY};
use crate::error::{Error, Result};
use crate::lyapunov::SearchWindow;
use crate::noise::TimeGrid;
use crate::pullback::PullbackSchedule;
use crate::randset::{CellSet, Partition};

/// A complete scenario as read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub output_dir: String,
    pub system: SystemSpec,
    pub partition: PartitionSpec,
    pub noise: NoiseSpec,
    pub seeds: SeedSpec,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub search: Option<SearchSpec>,
    #[serde(default)]
    pub sets: BTreeMap<String, SetSpec>,
    #[serde(default)]
    pub analyses: Vec<Analysis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemSpec {
    ExactDoubleWell,
    Sde {
        lower: Vec<f64>,
        upper: Vec<f64>,
        drift: FieldSpec,
        diffusion: FieldSpec,
        step: f64,
    },
    DeterministicFlow {
        lower: Vec<f64>,
        upper: Vec<f64>,
        field: FieldSpec,
        step: f64,
    },
}

/// A registered field name or explicit monomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Named(String),
    Polynomial(PolynomialField),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub cells_per_axis: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List { list: Vec<u64> },
    Range { base: u64, count: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub t_ladder: Vec<f64>,
    pub time_step: f64,
    pub samples_per_cell: usize,
    pub stop_tol: f64,
    #[serde(default = "default_pass_fraction")]
    pub pass_fraction: f64,
}

fn default_pass_fraction() -> f64 {
    crate::pullback::DEFAULT_PASS_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    pub t_lo: f64,
    pub t_hi: f64,
    pub dt: f64,
    pub refine_iters: u32,
}

/// Union of intervals (1-D) or boxes (2-D); `whole = true` is the state box.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSpec {
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub whole: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intervals: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<BoxSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// One requested analysis; `id` names its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Analysis {
    OmegaLimit {
        id: String,
        set: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<String>,
    },
    AlphaLimit {
        id: String,
        set: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<String>,
    },
    VerifyAttractor {
        id: String,
        attractor: String,
        neighborhood: String,
    },
    StrongNeighborhood {
        id: String,
        attractor: String,
        neighborhood: String,
        times: Vec<f64>,
    },
    Basin {
        id: String,
        attractor: String,
        neighborhood: String,
    },
    MorseDecomposition {
        id: String,
        attractors: Vec<String>,
        neighborhoods: Vec<String>,
        #[serde(default = "yes")]
        certificate: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coarsen: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        field_points: Option<usize>,
    },
    LyapunovField {
        id: String,
        attractor: String,
        repeller: String,
        neighborhood: String,
        points: usize,
    },
    OrbitProfile {
        id: String,
        attractor: String,
        repeller: String,
        neighborhood: String,
        x: Vec<f64>,
        t_max: f64,
        dt: f64,
    },
}

fn yes() -> bool {
    true
}

impl Analysis {
    pub fn id(&self) -> &str {
        match self {
            Analysis::OmegaLimit { id, .. }
            | Analysis::AlphaLimit { id, .. }
            | Analysis::VerifyAttractor { id, .. }
            | Analysis::StrongNeighborhood { id, .. }
            | Analysis::Basin { id, .. }
            | Analysis::MorseDecomposition { id, .. }
            | Analysis::LyapunovField { id, .. }
            | Analysis::OrbitProfile { id, .. } => id,
        }
    }

    pub fn op(&self) -> &'static str {
        match self {
            Analysis::OmegaLimit { .. } => "omega-limit",
            Analysis::AlphaLimit { .. } => "alpha-limit",
            Analysis::VerifyAttractor { .. } => "verify-attractor",
            Analysis::StrongNeighborhood { .. } => "strong-neighborhood",
            Analysis::Basin { .. } => "basin",
            Analysis::MorseDecomposition { .. } => "morse-decomposition",
            Analysis::LyapunovField { .. } => "lyapunov-field",
            Analysis::OrbitProfile { .. } => "orbit-profile",
        }
    }

    /// Execution order: checks of attractors before anything that relies
    /// on them.
    pub(crate) fn rank(&self) -> u8 {
        match self {
            Analysis::VerifyAttractor { .. } => 0,
            Analysis::OmegaLimit { .. }
            | Analysis::AlphaLimit { .. }
            | Analysis::StrongNeighborhood { .. } => 1,
            Analysis::Basin { .. } => 2,
            Analysis::MorseDecomposition { .. } => 3,
            Analysis::LyapunovField { .. } | Analysis::OrbitProfile { .. } => 4,
        }
    }

    fn set_refs(&self) -> Vec<&str> {
        match self {
            Analysis::OmegaLimit { set, target, .. } | Analysis::AlphaLimit { set, target, .. } => {
                std::iter::once(set.as_str())
                    .chain(target.as_deref())
                    .collect()
            }
            Analysis::VerifyAttractor {
                attractor,
                neighborhood,
                ..
            }
            | Analysis::StrongNeighborhood {
                attractor,
                neighborhood,
                ..
            }
            | Analysis::Basin {
                attractor,
                neighborhood,
                ..
            } => vec![attractor, neighborhood],
            Analysis::MorseDecomposition {
                attractors,
                neighborhoods,
                ..
            } => attractors
                .iter()
                .chain(neighborhoods)
                .map(String::as_str)
                .collect(),
            Analysis::LyapunovField {
                attractor,
                repeller,
                neighborhood,
                ..
            }
            | Analysis::OrbitProfile {
                attractor,
                repeller,
                neighborhood,
                ..
            } => vec![attractor, repeller, neighborhood],
        }
    }

    /// Largest forward shift of the realisation beyond the search window.
    fn forward_reach(&self) -> f64 {
        match self {
            Analysis::OrbitProfile { t_max, .. } => *t_max,
            Analysis::StrongNeighborhood { times, .. } => times.iter().copied().fold(0.0, f64::max),
            Analysis::MorseDecomposition { .. } => crate::morse::CertificateOptions::default()
                .t_checks
                .iter()
                .copied()
                .fold(0.0, f64::max),
            _ => 0.0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn system(&self) -> Result<CocycleSystem> {
        let field = |f: &FieldSpec| -> Result<PolynomialField> {
            match f {
                FieldSpec::Named(name) => named_field(name).ok_or_else(|| {
                    Error::Config(format!(
                        "unknown field {name:?}; known: {}",
                        FIELD_REGISTRY.join(", ")
                    ))
                }),
                FieldSpec::Polynomial(p) => p.clone().validated(),
            }
        };
        match &self.system {
            SystemSpec::ExactDoubleWell => Ok(CocycleSystem::exact_double_well()),
            SystemSpec::Sde {
                lower,
                upper,
                drift,
                diffusion,
                step,
            } => CocycleSystem::stratonovich(
                StateBox::new(lower.clone(), upper.clone())?,
                field(drift)?,
                field(diffusion)?,
                *step,
            ),
            SystemSpec::DeterministicFlow {
                lower,
                upper,
                field: f,
                step,
            } => CocycleSystem::deterministic(
                StateBox::new(lower.clone(), upper.clone())?,
                field(f)?,
                *step,
            ),
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.noise.t_min, self.noise.t_max, self.noise.dt)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            SeedSpec::List { list } => list.clone(),
            SeedSpec::Range { base, count } => (0..*count).map(|k| base + k).collect(),
        }
    }

    pub fn pullback_schedule(&self) -> Result<PullbackSchedule> {
        let s = &self.schedule;
        PullbackSchedule::new(
            s.t_ladder.clone(),
            s.time_step,
            s.samples_per_cell,
            s.stop_tol,
        )
    }

    pub fn search_window(&self) -> Result<SearchWindow> {
        match &self.search {
            Some(s) => SearchWindow::new(s.t_lo, s.t_hi, s.dt, s.refine_iters),
            None => SearchWindow::new(-20.0, 20.0, self.noise.dt, 40),
        }
    }

    pub fn cell_set(&self, partition: &Arc<Partition>, name: &str) -> Result<CellSet> {
        let spec = self
            .sets
            .get(name)
            .ok_or_else(|| Error::Config(format!("undefined set {name:?}")))?;
        if spec.whole {
            return Ok(CellSet::full(partition));
        }
        let mut out = CellSet::empty(partition);
        for [a, b] in &spec.intervals {
            if partition.dim() != 1 {
                return Err(Error::Config(format!(
                    "set {name:?}: intervals need a 1-D box"
                )));
            }
            out = out.union(&CellSet::interval(partition, *a, *b)?)?;
        }
        for b in &spec.boxes {
            out = out.union(&CellSet::from_box(partition, &b.lower, &b.upper)?)?;
        }
        Ok(out)
    }

    /// Every problem with the configuration, in a stable order.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut problems = Vec::new();
        let mut note = |r: Result<()>| {
            if let Err(e) = r {
                problems.push(e.to_string());
            }
        };

        let sys = self.system();
        note(sys.as_ref().map(|_| ()).map_err(Clone::clone));
        let grid = self.grid();
        note(grid.as_ref().map(|_| ()).map_err(Clone::clone));
        let sched = self.pullback_schedule();
        note(sched.as_ref().map(|_| ()).map_err(Clone::clone));
        let search = self.search_window();
        note(search.as_ref().map(|_| ()).map_err(Clone::clone));
        if !(self.schedule.pass_fraction > 0.0 && self.schedule.pass_fraction <= 1.0) {
            problems.push(format!(
                "pass_fraction {} must lie in (0, 1]",
                self.schedule.pass_fraction
            ));
        }
        if self.seed_list().is_empty() {
            problems.push("seed list is empty".into());
        }
        if self.output_dir.trim().is_empty() {
            problems.push("output_dir is empty".into());
        }

        if let Ok(sys) = &sys {
            match Partition::new(sys.state_box().clone(), self.partition.cells_per_axis) {
                Ok(part) => {
                    for name in self.sets.keys() {
                        if let Err(e) = self.cell_set(&part, name) {
                            problems.push(e.to_string());
                        }
                    }
                }
                Err(e) => problems.push(e.to_string()),
            }
        }

        let mut ids = std::collections::BTreeSet::new();
        for a in &self.analyses {
            if !ids.insert(a.id()) {
                problems.push(format!("analysis id {:?} is used twice", a.id()));
            }
            if a.id().is_empty() || a.id().contains(['/', '\\']) {
                problems.push(format!("analysis id {:?} is not a valid file stem", a.id()));
            }
            for name in a.set_refs() {
                if !self.sets.contains_key(name) {
                    problems.push(format!(
                        "analysis {:?} refers to undefined set {name:?}",
                        a.id()
                    ));
                }
            }
            if let Analysis::MorseDecomposition {
                attractors,
                neighborhoods,
                ..
            } = a
            {
                if attractors.len() != neighborhoods.len() {
                    problems.push(format!(
                        "analysis {:?}: attractor and neighbourhood lists differ in length",
                        a.id()
                    ));
                }
            }
        }

        if let (Ok(grid), Ok(sched), Ok(search)) = (&grid, &sched, &search) {
            let lookback = sched.max_lookback();
            if -grid.t_min() < lookback || grid.t_max() < lookback {
                problems.push(format!(
                    "noise horizon [{}, {}] does not cover the lookback {lookback}",
                    grid.t_min(),
                    grid.t_max()
                ));
            }
            let needs_search = self.analyses.iter().any(|a| {
                matches!(
                    a,
                    Analysis::MorseDecomposition { .. }
                        | Analysis::LyapunovField { .. }
                        | Analysis::OrbitProfile { .. }
                )
            });
            if needs_search {
                let reach = self
                    .analyses
                    .iter()
                    .map(Analysis::forward_reach)
                    .fold(0.0, f64::max);
                if grid.t_min() > search.t_lo || grid.t_max() < search.t_hi + reach {
                    problems.push(format!(
                        "noise horizon [{}, {}] does not cover the entrance-time window [{}, {}]",
                        grid.t_min(),
                        grid.t_max(),
                        search.t_lo,
                        search.t_hi + reach
                    ));
                }
            }
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}
