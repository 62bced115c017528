//! Scenario files: a TOML description of a system, a partition, noise,
//! named sets and a list of analyses, executed into a directory of CSVs.
//!
//! Outputs depend only on the configuration, so re-running a scenario
//! reproduces every file byte for byte. Wall-clock timings are kept in the
//! in-memory [`RunReport`] and never written.

mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

pub use config::{
    Analysis, BoxSpec, FieldSpec, NoiseSpec, PartitionSpec, ScenarioConfig, ScheduleSpec,
    SearchSpec, SeedSpec, SetSpec, SystemSpec,
};

use crate::cocycle::{CocycleSystem, Point};
use crate::error::{Error, Result};
use crate::lyapunov::{
    entrance_time, lyap_value, monotonicity_profile, write_field_csv, FieldSample, LyapunovField,
    PairContext,
};
use crate::morse::{
    build_decomposition, coarsen, morse_union_identity_check, verify_by_lyapunov,
    CertificateOptions, Filtration,
};
use crate::noise::{sample_wiener, NoisePath};
use crate::pullback::{
    alpha_limit, basin_estimate, omega_limit, set_distance, two_cells, verify_attractor,
    verify_strong_neighborhood, StrongVerdict,
};
use crate::randset::{CellSet, Partition, SetRule};
use crate::table;

/// Environment variable overriding `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "MORSEFLOW_OUTPUT_DIR";

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[(
    "double-well-morse",
    include_str!("../../scenarios/double-well-morse.toml"),
)];

pub fn bundled(name: &str) -> Option<ScenarioConfig> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ScenarioConfig::from_toml(text).expect("bundled scenarios parse"))
}

/// Read a bundled scenario by name, or a TOML file by path.
pub fn load(name_or_path: &str) -> Result<ScenarioConfig> {
    if let Some(cfg) = bundled(name_or_path) {
        return Ok(cfg);
    }
    let text = fs::read_to_string(name_or_path).map_err(|e| {
        Error::Config(format!(
            "{name_or_path}: not a bundled scenario and not readable ({e})"
        ))
    })?;
    ScenarioConfig::from_toml(&text)
}

/// `MORSEFLOW_OUTPUT_DIR` if set, otherwise the configured directory.
pub fn output_dir(cfg: &ScenarioConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from(&cfg.output_dir),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    /// Ran and every check it performs passed.
    Passed,
    /// Ran to completion with a negative verification result.
    Finding(String),
    /// Could not run; `code` is machine readable.
    Failed { code: &'static str, message: String },
}

impl Status {
    fn tag(&self) -> &'static str {
        match self {
            Status::Passed => "passed",
            Status::Finding(_) => "finding",
            Status::Failed { .. } => "failed",
        }
    }

    fn detail(&self) -> String {
        match self {
            Status::Passed => String::new(),
            Status::Finding(m) => m.clone(),
            Status::Failed { code, message } => format!("{code}: {message}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisOutcome {
    pub id: String,
    pub op: &'static str,
    pub status: Status,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: String,
    pub output_dir: PathBuf,
    pub outcomes: Vec<AnalysisOutcome>,
    pub warnings: Vec<String>,
    pub elapsed: Duration,
}

impl RunReport {
    /// True when some analysis could not run.
    pub fn has_errors(&self) -> bool {
        self.outcomes
            .iter()
            .any(|o| matches!(o.status, Status::Failed { .. }))
    }
}

/// Validate, then execute every analysis into `out_dir`.
pub fn run(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunReport> {
    cfg.validate().map_err(|p| Error::Config(p.join("; ")))?;
    let started = Instant::now();
    fs::create_dir_all(out_dir)?;
    let ctx = Context::new(cfg, out_dir)?;

    let mut order: Vec<&Analysis> = cfg.analyses.iter().collect();
    order.sort_by_key(|a| a.rank());
    let mut outcomes = Vec::with_capacity(order.len());
    for a in order {
        let t0 = Instant::now();
        log::info!("running {} ({})", a.id(), a.op());
        let (status, files) = match ctx.execute(a) {
            Ok(done) => done,
            Err(e) => (
                Status::Failed {
                    code: e.code(),
                    message: e.to_string(),
                },
                Vec::new(),
            ),
        };
        outcomes.push(AnalysisOutcome {
            id: a.id().to_string(),
            op: a.op(),
            status,
            files,
            elapsed: t0.elapsed(),
        });
    }

    let report = RunReport {
        scenario: cfg.name.clone(),
        output_dir: out_dir.to_path_buf(),
        outcomes,
        warnings: ctx.warnings(),
        elapsed: started.elapsed(),
    };
    write_report(&report, out_dir)?;
    Ok(report)
}

fn write_report(report: &RunReport, dir: &Path) -> Result<()> {
    let mut w = table::writer(BufWriter::new(File::create(dir.join("report.csv"))?));
    w.write_record(["id", "op", "status", "detail", "files"])?;
    for o in &report.outcomes {
        w.write_record([
            o.id.as_str(),
            o.op,
            o.status.tag(),
            &o.status.detail(),
            &o.files.join(" "),
        ])?;
    }
    for warning in &report.warnings {
        w.write_record(["", "", "warning", warning.as_str(), ""])?;
    }
    w.flush()?;
    Ok(())
}

struct Context<'a> {
    cfg: &'a ScenarioConfig,
    dir: &'a Path,
    sys: CocycleSystem,
    partition: Arc<Partition>,
    paths: Vec<NoisePath>,
}

type Done = (Status, Vec<String>);

impl<'a> Context<'a> {
    fn new(cfg: &'a ScenarioConfig, dir: &'a Path) -> Result<Self> {
        let sys = cfg.system()?;
        let partition = Partition::new(sys.state_box().clone(), cfg.partition.cells_per_axis)?;
        let grid = cfg.grid()?;
        let paths = cfg
            .seed_list()
            .into_par_iter()
            .map(|s| sample_wiener(grid, s))
            .collect();
        Ok(Self {
            cfg,
            dir,
            sys,
            partition,
            paths,
        })
    }

    fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.paths.len();
        if n < 20 {
            out.push(format!("only {n} seeds; pass fractions are coarse"));
        }
        out
    }

    fn set(&self, name: &str) -> Result<SetRule> {
        Ok(SetRule::Fixed(self.cfg.cell_set(&self.partition, name)?))
    }

    fn csv(&self, name: String) -> Result<(csv::Writer<BufWriter<File>>, String)> {
        let file = File::create(self.dir.join(&name))?;
        Ok((table::writer(BufWriter::new(file)), name))
    }

    fn execute(&self, a: &Analysis) -> Result<Done> {
        match a {
            Analysis::OmegaLimit { id, set, target } => {
                self.limit(id, set, target.as_deref(), true)
            }
            Analysis::AlphaLimit { id, set, target } => {
                self.limit(id, set, target.as_deref(), false)
            }
            Analysis::VerifyAttractor {
                id,
                attractor,
                neighborhood,
            } => {
                let report = verify_attractor(
                    &self.set(attractor)?,
                    &self.set(neighborhood)?,
                    &self.sys,
                    &self.paths,
                    &self.cfg.pullback_schedule()?,
                    self.cfg.schedule.pass_fraction,
                )?;
                let name = format!("{id}.csv");
                report.write_csv(BufWriter::new(File::create(self.dir.join(&name))?))?;
                let status = if report.passed {
                    Status::Passed
                } else {
                    Status::Finding(format!(
                        "pass fraction {:.3} below {}",
                        report.pass_fraction, report.required
                    ))
                };
                Ok((status, vec![name]))
            }
            Analysis::StrongNeighborhood {
                id,
                attractor,
                neighborhood,
                times,
            } => {
                let report = verify_strong_neighborhood(
                    &self.set(neighborhood)?,
                    &self.set(attractor)?,
                    &self.sys,
                    &self.paths,
                    times,
                )?;
                let (mut w, name) = self.csv(format!("{id}.csv"))?;
                w.write_record(["seed", "verdict", "witness_x", "witness_t"])?;
                for (seed, v) in &report.rows {
                    let (tag, x, t) = match v {
                        StrongVerdict::Strong => ("strong", String::new(), String::new()),
                        StrongVerdict::NotStrong { x, t } => {
                            ("not-strong", table::real(x.x()), table::real(*t))
                        }
                        StrongVerdict::NotInvariant { violation } => {
                            ("not-invariant", table::real(*violation), String::new())
                        }
                    };
                    w.write_record([seed.to_string(), tag.to_string(), x, t])?;
                }
                w.flush()?;
                let status = if report.strong_fraction >= self.cfg.schedule.pass_fraction {
                    Status::Passed
                } else {
                    Status::Finding(format!("strong on {:.3} of seeds", report.strong_fraction))
                };
                Ok((status, vec![name]))
            }
            Analysis::Basin {
                id,
                attractor,
                neighborhood,
            } => {
                let (a, n) = (self.set(attractor)?, self.set(neighborhood)?);
                let sched = self.cfg.pullback_schedule()?;
                let basins = self
                    .paths
                    .par_iter()
                    .map(|p| {
                        basin_estimate(
                            &a,
                            &n,
                            &self.sys,
                            p,
                            sched.max_lookback(),
                            sched.time_step(),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (mut w, name) = self.csv(format!("{id}.csv"))?;
                w.write_record(["seed", "cells", "intervals"])?;
                for (p, b) in self.paths.iter().zip(&basins) {
                    w.write_record([p.seed().to_string(), b.len().to_string(), intervals(b)])?;
                }
                w.flush()?;
                Ok((Status::Passed, vec![name]))
            }
            Analysis::MorseDecomposition {
                id,
                attractors,
                neighborhoods,
                certificate,
                coarsen: keep,
                field_points,
            } => self.morse(
                id,
                attractors,
                neighborhoods,
                *certificate,
                keep.as_deref(),
                *field_points,
            ),
            Analysis::LyapunovField {
                id,
                attractor,
                repeller,
                neighborhood,
                points,
            } => {
                let pair = self.pair(attractor, repeller, neighborhood)?;
                let xs = self.x_grid(*points)?;
                let rows = self.field_rows(&xs, |path, x| {
                    let tau = entrance_time(&pair, &self.sys, path, x)?;
                    Ok((Some(tau), lyap_value(tau)))
                })?;
                let name = format!("{id}.csv");
                write_field_csv(&rows, BufWriter::new(File::create(self.dir.join(&name))?))?;
                Ok((Status::Passed, vec![name]))
            }
            Analysis::OrbitProfile {
                id,
                attractor,
                repeller,
                neighborhood,
                x,
                t_max,
                dt,
            } => {
                let pair = self.pair(attractor, repeller, neighborhood)?;
                let x0 = Point::from_slice(x)?;
                if !(*dt > 0.0 && *t_max >= 0.0) {
                    return Err(Error::Config(format!(
                        "orbit profile {id}: need dt > 0 and t_max >= 0"
                    )));
                }
                let steps = (t_max / dt + 1e-9).floor() as usize;
                let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
                let profiles = self
                    .paths
                    .par_iter()
                    .map(|p| monotonicity_profile(&pair, &self.sys, p, x0, &times))
                    .collect::<Result<Vec<_>>>()?;
                let (mut w, name) = self.csv(format!("{id}.csv"))?;
                w.write_record(["seed", "t", "L", "reliable"])?;
                let mut increases = 0;
                for (p, prof) in self.paths.iter().zip(&profiles) {
                    increases += crate::lyapunov::profile_violations(prof, false).0.len();
                    for pt in prof {
                        w.write_record([
                            p.seed().to_string(),
                            table::real(pt.t),
                            table::real(pt.value),
                            u8::from(pt.reliable).to_string(),
                        ])?;
                    }
                }
                w.flush()?;
                let status = if increases == 0 {
                    Status::Passed
                } else {
                    Status::Finding(format!("{increases} increasing steps"))
                };
                Ok((status, vec![name]))
            }
        }
    }

    fn pair(&self, a: &str, r: &str, n: &str) -> Result<PairContext> {
        PairContext::new(
            self.set(a)?,
            self.set(r)?,
            self.set(n)?,
            self.cfg.search_window()?,
        )
    }

    /// `points` evenly spaced points per axis, box corners included.
    fn x_grid(&self, points: usize) -> Result<Vec<Point>> {
        if points < 2 {
            return Err(Error::Config("need at least 2 field points".into()));
        }
        let b = self.partition.state_box();
        let axis = |i: usize| -> Vec<f64> {
            (0..points)
                .map(|k| b.lower()[i] + b.width(i) * k as f64 / (points - 1) as f64)
                .collect()
        };
        Ok(match b.dim() {
            1 => axis(0).into_iter().map(Point::scalar).collect(),
            _ => {
                let (xs, ys) = (axis(0), axis(1));
                ys.iter()
                    .flat_map(|&y| xs.iter().map(move |&x| Point::planar(x, y)))
                    .collect()
            }
        })
    }

    fn field_rows(
        &self,
        xs: &[Point],
        eval: impl Fn(&NoisePath, Point) -> Result<(Option<crate::lyapunov::ExtendedTime>, f64)> + Sync,
    ) -> Result<Vec<FieldSample>> {
        let per_seed = self
            .paths
            .par_iter()
            .map(|p| {
                xs.iter()
                    .map(|&x| {
                        let (tau, value) = eval(p, x)?;
                        Ok(FieldSample {
                            seed: p.seed(),
                            x,
                            tau,
                            value,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(per_seed.into_iter().flatten().collect())
    }

    fn limit(&self, id: &str, set: &str, target: Option<&str>, forward: bool) -> Result<Done> {
        let d = self.set(set)?;
        let target = target.map(|t| self.set(t)).transpose()?;
        let sched = self.cfg.pullback_schedule()?;
        let results = self
            .paths
            .par_iter()
            .map(|p| {
                if forward {
                    omega_limit(&d, &self.sys, p, &sched)
                } else {
                    alpha_limit(&d, &self.sys, p, &sched)
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let (mut w, limits) = self.csv(format!("{id}.csv"))?;
        w.write_record([
            "seed",
            "converged",
            "emptied",
            "cells",
            "hausdorff_to_target",
            "intervals",
        ])?;
        let mut close = 0;
        for (p, r) in self.paths.iter().zip(&results) {
            let dist = match &target {
                Some(t) => set_distance(&r.limit, &t.at(&self.sys, p)?)?,
                None => f64::NAN,
            };
            if let Some(t) = &target {
                if dist <= two_cells(t) {
                    close += 1;
                }
            }
            w.write_record([
                p.seed().to_string(),
                u8::from(r.converged).to_string(),
                u8::from(r.emptied).to_string(),
                r.limit.len().to_string(),
                table::real(dist),
                intervals(&r.limit),
            ])?;
        }
        w.flush()?;

        let (mut w, history) = self.csv(format!("{id}-history.csv"))?;
        w.write_record(["seed", "lookback", "hausdorff_step", "cells"])?;
        for (p, r) in self.paths.iter().zip(&results) {
            for h in &r.history {
                w.write_record([
                    p.seed().to_string(),
                    table::real(h.lookback),
                    table::real(h.step),
                    h.set.len().to_string(),
                ])?;
            }
        }
        w.flush()?;

        let unconverged = results.iter().filter(|r| !r.converged).count();
        let status = if target.is_some()
            && (close as f64) < self.cfg.schedule.pass_fraction * self.paths.len() as f64
        {
            Status::Finding(format!(
                "{close} of {} limits within two cells of the target",
                self.paths.len()
            ))
        } else if unconverged > 0 {
            Status::Finding(format!("{unconverged} limits did not converge"))
        } else {
            Status::Passed
        };
        Ok((status, vec![limits, history]))
    }

    fn morse(
        &self,
        id: &str,
        attractors: &[String],
        neighborhoods: &[String],
        certificate: bool,
        keep: Option<&[usize]>,
        field_points: Option<usize>,
    ) -> Result<Done> {
        let a = attractors
            .iter()
            .map(|s| self.set(s))
            .collect::<Result<Vec<_>>>()?;
        let n = neighborhoods
            .iter()
            .map(|s| self.set(s))
            .collect::<Result<Vec<_>>>()?;
        let f = Filtration::new(&self.partition, a, n)?;
        let sched = self.cfg.pullback_schedule()?;
        let pass = self.cfg.schedule.pass_fraction;
        let d = build_decomposition(&f, &self.sys, &self.paths, &sched, pass)?;
        let mut files = Vec::new();
        let mut findings = Vec::new();

        let name = format!("{id}-sets.csv");
        d.write_csv(BufWriter::new(File::create(self.dir.join(&name))?))?;
        files.push(name);

        let (mut w, name) = self.csv(format!("{id}-summary.csv"))?;
        w.write_record(["quantity", "value"])?;
        w.write_record(["levels".to_string(), d.levels().to_string()])?;
        for (i, r) in d.plateaus.iter().enumerate() {
            w.write_record([format!("plateau_{}", i + 1), r.to_string()])?;
        }
        for (i, frac) in d.invariance.iter().enumerate() {
            w.write_record([format!("invariance_fraction_{}", i + 1), table::real(*frac)])?;
        }
        w.write_record([
            "overlapping_pairs".to_string(),
            d.overlaps.len().to_string(),
        ])?;
        if !d.overlaps.is_empty() {
            findings.push(format!("{} overlapping Morse set pairs", d.overlaps.len()));
        }
        for (i, rep) in d.repeller_reports.iter().enumerate() {
            w.write_record([
                format!("attractor_pass_fraction_{}", i + 1),
                table::real(rep.attractor.pass_fraction),
            ])?;
            w.write_record([
                format!("repeller_agreement_{}", i + 1),
                table::real(rep.agreement),
            ])?;
            if rep.agreement < pass {
                findings.push(format!("repeller {} disagrees with its alpha-limit", i + 1));
            }
        }
        let identity = morse_union_identity_check(&d, &d.filtration, &self.sys, &self.paths)?;
        let tol = 2.0 * self.partition.cell_diameter();
        let ok = identity.iter().filter(|(_, e)| *e <= tol).count() as f64 / identity.len() as f64;
        w.write_record(["union_identity_fraction".to_string(), table::real(ok)])?;
        if ok < pass {
            findings.push("union identity fails on too many seeds".into());
        }

        let search = self.cfg.search_window()?;
        let field = d.filtration.lyapunov_context(search)?;
        if certificate {
            let cert = verify_by_lyapunov(
                &d.candidates(),
                &field,
                &self.sys,
                &self.paths,
                &CertificateOptions::default(),
            )?;
            for (key, v) in [
                ("certificate_disjoint", cert.disjoint),
                ("certificate_invariant", cert.invariant),
                ("certificate_constant", cert.constant),
                ("certificate_ordered", cert.ordered),
                ("certificate_decreasing", cert.decreasing),
            ] {
                w.write_record([key.to_string(), u8::from(v).to_string()])?;
            }
            w.write_record(["certificate_tested".to_string(), cert.tested.to_string()])?;
            w.write_record(["certificate_skipped".to_string(), cert.skipped.to_string()])?;
            w.write_record([
                "certificate_verdict".to_string(),
                cert.verdict().to_string(),
            ])?;
            if !cert.consistent() {
                findings.push(cert.verdict().to_string());
            }
        }
        if let Some(keep) = keep {
            let (c, consistent) = coarsen(&d, keep, &self.sys, &self.paths)?;
            w.write_record(["coarsened_levels".to_string(), c.levels().to_string()])?;
            w.write_record([
                "coarsening_consistent".to_string(),
                u8::from(consistent).to_string(),
            ])?;
            let name = format!("{id}-coarsened-sets.csv");
            c.write_csv(BufWriter::new(File::create(self.dir.join(&name))?))?;
            files.push(name);
            if !consistent {
                findings.push("coarsening lost part of the Morse sets".into());
            }
        }
        w.flush()?;
        files.insert(1, name);

        if let Some(points) = field_points {
            let xs = self.x_grid(points)?;
            let rows = self.field_rows(&xs, |p, x| {
                Ok((None, field.evaluate(&self.sys, p, x)?.value))
            })?;
            let name = format!("{id}-field.csv");
            write_field_csv(&rows, BufWriter::new(File::create(self.dir.join(&name))?))?;
            files.push(name);
        }

        let status = if findings.is_empty() {
            Status::Passed
        } else {
            Status::Finding(findings.join("; "))
        };
        Ok((status, files))
    }
}

fn intervals(set: &CellSet) -> String {
    set.intervals()
        .iter()
        .map(|(a, b)| format!("[{};{}]", table::real(*a), table::real(*b)))
        .collect::<Vec<_>>()
        .join(" ")
}
