//! Pullback limit sets, invariant hulls, attractor checks and basins.
//!
//! The infinite intersection `⋂_{T≥0} closure ⋃_{t≥T} φ(t, θ_{-t}ω)D(θ_{-t}ω)`
//! is truncated at a finite ladder of lookbacks `T_1 < … < T_k`. Pullback
//! images are sampled every `time_step` between consecutive rungs; the
//! approximation attached to rung `T_j` is the union of all sampled images
//! with `t ≥ T_j`, so the history is nested by construction. The last
//! Hausdorff step between rungs decides convergence.

use std::io::Write;

use rayon::prelude::*;

use crate::cocycle::{CocycleSystem, Point};
use crate::error::{Error, Result};
use crate::noise::NoisePath;
use crate::randset::{image_hits, image_under_flow, CellSet, SetRule, DEFAULT_SAMPLES_PER_CELL};
use crate::table;

/// Fraction of seeds that must pass an almost-sure statement.
pub const DEFAULT_PASS_FRACTION: f64 = 0.95;

/// Times at which invariance of a candidate set is checked.
pub const INVARIANCE_CHECK_TIMES: [f64; 2] = [0.5, 1.0];

/// Lookback ladder and sampling parameters for pullback limits.
#[derive(Debug, Clone, PartialEq)]
pub struct PullbackSchedule {
    t_ladder: Vec<f64>,
    time_step: f64,
    samples_per_cell: usize,
    stop_tol: f64,
}

impl PullbackSchedule {
    pub fn new(
        t_ladder: Vec<f64>,
        time_step: f64,
        samples_per_cell: usize,
        stop_tol: f64,
    ) -> Result<Self> {
        if t_ladder.is_empty() {
            return Err(Error::Config("lookback ladder is empty".into()));
        }
        if t_ladder[0] < 0.0 || t_ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "ladder must be nonnegative and strictly increasing: {t_ladder:?}"
            )));
        }
        if !(time_step > 0.0) {
            return Err(Error::Config(format!(
                "time step must be positive, got {time_step}"
            )));
        }
        if samples_per_cell == 0 {
            return Err(Error::Config("samples_per_cell must be at least 1".into()));
        }
        if !(stop_tol >= 0.0) {
            return Err(Error::Config(format!(
                "stop tolerance must be nonnegative, got {stop_tol}"
            )));
        }
        Ok(Self {
            t_ladder,
            time_step,
            samples_per_cell,
            stop_tol,
        })
    }

    pub fn t_ladder(&self) -> &[f64] {
        &self.t_ladder
    }

    pub fn time_step(&self) -> f64 {
        self.time_step
    }

    pub fn samples_per_cell(&self) -> usize {
        self.samples_per_cell
    }

    pub fn stop_tol(&self) -> f64 {
        self.stop_tol
    }

    pub fn max_lookback(&self) -> f64 {
        *self.t_ladder.last().expect("nonempty ladder")
    }

    /// Sample times assigned to rung `j`: `[T_j, T_{j+1})` in steps of
    /// `time_step`, and just `T_k` for the last rung.
    fn window(&self, j: usize) -> Vec<f64> {
        let start = self.t_ladder[j];
        match self.t_ladder.get(j + 1) {
            None => vec![start],
            Some(&end) => {
                let n = ((end - start) / self.time_step - 1e-9).ceil().max(1.0) as usize;
                (0..n)
                    .map(|m| start + m as f64 * self.time_step)
                    .filter(|t| *t < end)
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitStep {
    pub lookback: f64,
    pub set: CellSet,
    /// Symmetric Hausdorff distance to the previous rung (infinite for the
    /// first rung).
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitResult {
    pub limit: CellSet,
    pub converged: bool,
    /// The limit came out empty; usually a sign of under-resolution.
    pub emptied: bool,
    pub history: Vec<LimitStep>,
}

impl LimitResult {
    /// CSV with columns `lookback,hausdorff_step,cells`.
    pub fn write_history_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = table::writer(out);
        w.write_record(["lookback", "hausdorff_step", "cells"])?;
        for h in &self.history {
            w.write_record([
                table::real(h.lookback),
                table::real(h.step),
                h.set.len().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Backward,
}

/// Pullback omega-limit set `Ω_D(ω)`.
pub fn omega_limit(
    d: &SetRule,
    sys: &CocycleSystem,
    path: &NoisePath,
    sched: &PullbackSchedule,
) -> Result<LimitResult> {
    limit_set(d, sys, path, sched, Direction::Forward)
}

/// Alpha-limit set `α_D(ω)`, using `φ(-t, θ_t ω) = φ(t, ω)⁻¹`.
pub fn alpha_limit(
    d: &SetRule,
    sys: &CocycleSystem,
    path: &NoisePath,
    sched: &PullbackSchedule,
) -> Result<LimitResult> {
    limit_set(d, sys, path, sched, Direction::Backward)
}

fn limit_set(
    d: &SetRule,
    sys: &CocycleSystem,
    path: &NoisePath,
    sched: &PullbackSchedule,
    dir: Direction,
) -> Result<LimitResult> {
    let t_max = sched.max_lookback();
    match dir {
        Direction::Forward => path.check_window(-t_max, 0.0)?,
        Direction::Backward => path.check_window(0.0, t_max)?,
    }
    let spc = sched.samples_per_cell;
    let image_at = |t: f64| -> Result<CellSet> {
        match dir {
            Direction::Forward => {
                let from = path.shift(-t);
                image_under_flow(&d.at(sys, &from)?, sys, t, &from, spc)
            }
            Direction::Backward => {
                let from = path.shift(t);
                image_under_flow(&d.at(sys, &from)?, sys, -t, &from, spc)
            }
        }
    };

    let rungs = sched.t_ladder.len();
    let mut windows = Vec::with_capacity(rungs);
    for j in 0..rungs {
        let mut acc = CellSet::empty(d.partition());
        for t in sched.window(j) {
            acc = acc.union(&image_at(t)?)?;
        }
        windows.push(acc);
    }

    // Tail unions: the rung-j set is ⋃_{i≥j} W_i.
    let mut tails = vec![CellSet::empty(d.partition()); rungs];
    let mut acc = CellSet::empty(d.partition());
    for j in (0..rungs).rev() {
        acc = acc.union(&windows[j])?;
        tails[j] = acc.clone();
    }

    let mut history: Vec<LimitStep> = Vec::with_capacity(rungs);
    for (j, set) in tails.into_iter().enumerate() {
        let step = match history.last() {
            None => f64::INFINITY,
            Some(prev) => set_distance(&prev.set, &set)?,
        };
        history.push(LimitStep {
            lookback: sched.t_ladder[j],
            set,
            step,
        });
    }
    let last = history.last().expect("nonempty ladder");
    let limit = last.set.clone();
    let emptied = limit.is_empty();
    if emptied {
        log::warn!("pullback limit came out empty; resolution may be too coarse");
    }
    let converged = emptied || last.step <= sched.stop_tol;
    Ok(LimitResult {
        limit,
        converged,
        emptied,
        history,
    })
}

/// Symmetric Hausdorff distance with empty sets handled: 0 when both are
/// empty, infinite when only one is.
pub fn set_distance(a: &CellSet, b: &CellSet) -> Result<f64> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => Ok(0.0),
        (true, false) | (false, true) => Ok(f64::INFINITY),
        _ => a.hausdorff(b),
    }
}

/// Forward-invariant hull `closure ⋃_{t≥0} φ(t, θ_{-t}ω)N(θ_{-t}ω)`,
/// sampled at `t = 0, dt, …, t_max`.
pub fn invariant_hull(
    n: &SetRule,
    sys: &CocycleSystem,
    path: &NoisePath,
    t_max: f64,
    dt: f64,
) -> Result<CellSet> {
    if !(dt > 0.0) || !(t_max >= 0.0) {
        return Err(Error::Config("hull needs dt > 0 and t_max >= 0".into()));
    }
    path.check_window(-t_max, 0.0)?;
    let steps = (t_max / dt + 1e-9).floor() as usize;
    let mut hull = n.at(sys, path)?;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let from = path.shift(-t);
        let img = image_under_flow(&n.at(sys, &from)?, sys, t, &from, DEFAULT_SAMPLES_PER_CELL)?;
        hull = hull.union(&img)?;
    }
    Ok(hull)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceCheck {
    pub invariant: bool,
    /// Largest semi-distance from an image to its target fibre.
    pub max_violation: f64,
    pub worst_time: Option<f64>,
}

/// Check `φ(t, ω)D(ω) ⊆ dilate(D(θ_t ω), 1)` for every `t` in `t_checks`.
pub fn is_forward_invariant(
    d: &SetRule,
    sys: &CocycleSystem,
    path: &NoisePath,
    t_checks: &[f64],
) -> Result<InvarianceCheck> {
    if t_checks.is_empty() || t_checks.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Misuse(
            "invariance checks need a nonempty list of positive times".into(),
        ));
    }
    let base = d.at(sys, path)?;
    let mut worst = (0.0f64, None);
    for &t in t_checks {
        let img = image_under_flow(&base, sys, t, path, DEFAULT_SAMPLES_PER_CELL)?;
        let target = d.at(sys, &path.shift(t))?;
        let v = if img.is_empty() {
            0.0
        } else if target.is_empty() {
            f64::INFINITY
        } else {
            img.hausdorff_semi(&target)?
        };
        if v > worst.0 {
            worst = (v, Some(t));
        }
    }
    Ok(InvarianceCheck {
        invariant: worst.0 == 0.0,
        max_violation: worst.0,
        worst_time: worst.1,
    })
}

/// Invariance of a cell approximation, checked in the covering direction:
/// every fibre must lie within one cell of the image of its predecessor,
/// forward and backward in time. The contracting direction is not tested;
/// padding cells of a compact invariant set are not invariant themselves.
pub fn covers_invariantly(
    d: &SetRule,
    sys: &CocycleSystem,
    path: &NoisePath,
    times: &[f64],
) -> Result<bool> {
    let base = d.at(sys, path)?;
    for &t in times {
        let later = path.shift(t);
        let fibre = d.at(sys, &later)?;
        let fwd = image_under_flow(&base, sys, t, path, DEFAULT_SAMPLES_PER_CELL)?;
        if !fibre.is_subset(&fwd.dilate(1))? {
            return Ok(false);
        }
        let back = image_under_flow(&fibre, sys, -t, &later, DEFAULT_SAMPLES_PER_CELL)?;
        if !base.is_subset(&back.dilate(1))? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedVerdict {
    pub seed: u64,
    pub converged: bool,
    pub hausdorff_to_target: f64,
    pub invariant: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttractorReport {
    pub rows: Vec<SeedVerdict>,
    pub pass_fraction: f64,
    pub required: f64,
    pub passed: bool,
}

impl AttractorReport {
    fn from_rows(rows: Vec<SeedVerdict>, required: f64) -> Self {
        let pass_fraction = fraction(rows.iter().filter(|r| r.pass).count(), rows.len());
        Self {
            passed: pass_fraction >= required,
            rows,
            pass_fraction,
            required,
        }
    }

    /// CSV with columns `seed,converged,hausdorff_to_target,pass`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = table::writer(out);
        w.write_record(["seed", "converged", "hausdorff_to_target", "pass"])?;
        for r in &self.rows {
            w.write_record([
                r.seed.to_string(),
                u8::from(r.converged).to_string(),
                table::real(r.hausdorff_to_target),
                u8::from(r.pass).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fraction(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

/// Tolerance used for "within two cells" comparisons.
pub fn two_cells(d: &SetRule) -> f64 {
    2.0 * d.partition().cell_diameter()
}

/// Check `A(ω) = Ω_N(ω)` (within two cells) and invariance of `A` on each
/// path, then aggregate.
pub fn verify_attractor(
    a: &SetRule,
    n: &SetRule,
    sys: &CocycleSystem,
    paths: &[NoisePath],
    sched: &PullbackSchedule,
    pass_fraction: f64,
) -> Result<AttractorReport> {
    let tol = two_cells(a);
    let rows = paths
        .par_iter()
        .map(|path| -> Result<SeedVerdict> {
            let a_here = a.at(sys, path)?;
            let n_here = n.at(sys, path)?;
            if !a_here.is_subset(&n_here.erode(1))? {
                return Err(Error::Misuse(format!(
                    "attractor candidate is not inside the interior of its neighbourhood (seed {})",
                    path.seed()
                )));
            }
            let omega = omega_limit(n, sys, path, sched)?;
            let dist = set_distance(&omega.limit, &a_here)?;
            let invariant = covers_invariantly(a, sys, path, &INVARIANCE_CHECK_TIMES)?;
            Ok(SeedVerdict {
                seed: path.seed(),
                converged: omega.converged,
                hausdorff_to_target: dist,
                invariant,
                pass: dist <= tol && invariant,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AttractorReport::from_rows(rows, pass_fraction))
}

#[derive(Debug, Clone, PartialEq)]
pub enum StrongVerdict {
    Strong,
    /// A boundary sample failed to enter the interior; `(x, t)` is a witness.
    NotStrong {
        x: Point,
        t: f64,
    },
    /// The neighbourhood is not forward invariant on this path.
    NotInvariant {
        violation: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongReport {
    pub rows: Vec<(u64, StrongVerdict)>,
    pub strong_fraction: f64,
}

/// Sample the boundary cells of `N(ω)` and check that their images at each
/// `t > 0` fall in the interior of `N(θ_t ω)`.
pub fn verify_strong_neighborhood(
    n: &SetRule,
    a: &SetRule,
    sys: &CocycleSystem,
    paths: &[NoisePath],
    t_checks: &[f64],
) -> Result<StrongReport> {
    let rows = paths
        .par_iter()
        .map(|path| -> Result<(u64, StrongVerdict)> {
            let n_here = n.at(sys, path)?;
            if !a.at(sys, path)?.is_subset(&n_here.erode(1))? {
                return Err(Error::Misuse(
                    "attractor is not inside the interior of N".into(),
                ));
            }
            let inv = is_forward_invariant(n, sys, path, t_checks)?;
            if !inv.invariant {
                return Ok((
                    path.seed(),
                    StrongVerdict::NotInvariant {
                        violation: inv.max_violation,
                    },
                ));
            }
            let boundary = n_here.boundary_cells();
            let part = n.partition();
            for &t in t_checks {
                let interior = n.at(sys, &path.shift(t))?.erode(1);
                for c in boundary.iter() {
                    for x in part.sample_lattice(c, DEFAULT_SAMPLES_PER_CELL) {
                        let y = sys.flow(t, path, x)?;
                        if !interior.contains_cell(part.cell_of(&y)) {
                            return Ok((path.seed(), StrongVerdict::NotStrong { x, t }));
                        }
                    }
                }
            }
            Ok((path.seed(), StrongVerdict::Strong))
        })
        .collect::<Result<Vec<_>>>()?;
    let strong = rows
        .iter()
        .filter(|(_, v)| *v == StrongVerdict::Strong)
        .count();
    Ok(StrongReport {
        strong_fraction: fraction(strong, rows.len()),
        rows,
    })
}

/// Time grid `0, dt, …` up to `t_max`.
fn time_grid(t_max: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !(t_max >= 0.0) {
        return Err(Error::Config(
            "time grid needs dt > 0 and t_max >= 0".into(),
        ));
    }
    let steps = (t_max / dt + 1e-9).floor() as usize;
    Ok((0..=steps).map(|k| k as f64 * dt).collect())
}

/// `int N(θ_t ω)` for every time on the grid, sharing the set when `N` is
/// fixed.
fn interiors(
    n: &SetRule,
    sys: &CocycleSystem,
    path: &NoisePath,
    times: &[f64],
) -> Result<Vec<CellSet>> {
    match n.as_fixed() {
        Some(fixed) => Ok(vec![fixed.erode(1)]),
        None => times
            .iter()
            .map(|&t| Ok(n.at(sys, &path.shift(t))?.erode(1)))
            .collect(),
    }
}

/// Cells whose every lattice sample reaches `int N(θ_t ω)` at some grid time
/// `t ≤ t_max`. Cells of `A(ω)` are always included.
pub fn basin_estimate(
    a: &SetRule,
    n: &SetRule,
    sys: &CocycleSystem,
    path: &NoisePath,
    t_max: f64,
    dt: f64,
) -> Result<CellSet> {
    path.check_window(0.0, t_max)?;
    let times = time_grid(t_max, dt)?;
    let inside = interiors(n, sys, path, &times)?;
    let interior_at = |k: usize| {
        if inside.len() == 1 {
            &inside[0]
        } else {
            &inside[k]
        }
    };
    let part = n.partition();
    let a_here = a.at(sys, path)?;

    let marked: Vec<bool> = (0..part.cell_count())
        .into_par_iter()
        .map(|c| -> Result<bool> {
            if a_here.contains_cell(c) {
                return Ok(true);
            }
            for x in part.sample_lattice(c, DEFAULT_SAMPLES_PER_CELL) {
                let mut traj = sys.trajectory(path, x, 0.0)?;
                let mut entered = false;
                for (k, &t) in times.iter().enumerate() {
                    let y = traj.advance_to(t)?;
                    if interior_at(k).contains_point(&y) {
                        entered = true;
                        break;
                    }
                }
                if !entered {
                    return Ok(false);
                }
            }
            Ok(true)
        })
        .collect::<Result<_>>()?;
    CellSet::from_indices(
        part,
        marked
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| i),
    )
}

/// Smallest grid time `T` such that the lattice image of `K` lies in
/// `int N(θ_t ω)` for every grid time `t ∈ [T, t_max]`; infinite if the last
/// grid time already fails.
pub fn uniform_entrance_time(
    k: &CellSet,
    n: &SetRule,
    sys: &CocycleSystem,
    path: &NoisePath,
    t_max: f64,
    dt: f64,
) -> Result<f64> {
    path.check_window(0.0, t_max)?;
    let times = time_grid(t_max, dt)?;
    let inside = interiors(n, sys, path, &times)?;
    let mut last_fail: Option<usize> = None;
    for (i, &t) in times.iter().enumerate() {
        let hits = image_hits(k, DEFAULT_SAMPLES_PER_CELL, |x| sys.flow(t, path, x))?;
        let interior = if inside.len() == 1 {
            &inside[0]
        } else {
            &inside[i]
        };
        if !hits.is_subset(interior)? {
            last_fail = Some(i);
        }
    }
    Ok(match last_fail {
        None => 0.0,
        Some(i) if i + 1 == times.len() => f64::INFINITY,
        Some(i) => times[i + 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::StateBox;
    use crate::noise::{sample_wiener, TimeGrid};
    use crate::randset::Partition;
    use std::sync::Arc;

    fn line() -> Arc<Partition> {
        Partition::new(StateBox::interval(-1.0, 1.0).unwrap(), 200).unwrap()
    }

    fn cells(p: &Arc<Partition>, a: f64, b: f64) -> SetRule {
        SetRule::Fixed(CellSet::interval(p, a, b).unwrap())
    }

    fn zero() -> NoisePath {
        NoisePath::zero(TimeGrid::symmetric(30.0, 0.01).unwrap(), 0)
    }

    fn noisy(seed: u64) -> NoisePath {
        sample_wiener(TimeGrid::symmetric(30.0, 0.01).unwrap(), seed)
    }

    fn sched() -> PullbackSchedule {
        PullbackSchedule::new(vec![0.0, 2.0, 5.0, 10.0, 15.0, 20.0], 0.05, 5, 0.02).unwrap()
    }

    #[test]
    fn schedule_validation() {
        assert!(PullbackSchedule::new(vec![], 0.1, 5, 0.0).is_err());
        assert!(PullbackSchedule::new(vec![1.0, 1.0], 0.1, 5, 0.0).is_err());
        assert!(PullbackSchedule::new(vec![1.0], 0.0, 5, 0.0).is_err());
        assert!(PullbackSchedule::new(vec![1.0], 0.1, 0, 0.0).is_err());
        let s = PullbackSchedule::new(vec![0.0, 1.0], 0.25, 5, 0.0).unwrap();
        assert_eq!(s.window(0), vec![0.0, 0.25, 0.5, 0.75]);
        assert_eq!(s.window(1), vec![1.0]);
    }

    #[test]
    fn omega_limit_of_upper_interval_is_the_upper_fixed_point() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let res = omega_limit(&cells(&p, 0.5, 1.0), &sys, &noisy(3), &sched()).unwrap();
        let target = CellSet::interval(&p, 1.0, 1.0).unwrap();
        assert!(res.converged);
        assert!(res.limit.hausdorff(&target).unwrap() <= 0.02);
        for w in res.history.windows(2) {
            assert!(w[1].set.is_subset(&w[0].set).unwrap());
        }
    }

    #[test]
    fn omega_limit_of_stable_cell_is_itself() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let one = CellSet::interval(&p, 1.0, 1.0).unwrap();
        let res = omega_limit(&SetRule::Fixed(one.clone()), &sys, &zero(), &sched()).unwrap();
        assert!(res.limit.hausdorff(&one).unwrap() <= 0.02);
    }

    #[test]
    fn cell_around_unstable_point_spreads_forward() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let origin = CellSet::interval(&p, 0.0, 0.0).unwrap();
        let res = omega_limit(&SetRule::Fixed(origin), &sys, &zero(), &sched()).unwrap();
        assert!(res.limit.contains_cell(0) && res.limit.contains_cell(199));
    }

    #[test]
    fn omega_limit_of_lower_interval() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let res = omega_limit(&cells(&p, -1.0, -0.5), &sys, &noisy(11), &sched()).unwrap();
        let target = CellSet::interval(&p, -1.0, -1.0).unwrap();
        assert!(res.limit.hausdorff(&target).unwrap() <= 0.02);
    }

    #[test]
    fn alpha_limits() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let path = noisy(5);
        let near_zero = alpha_limit(&cells(&p, -0.25, 0.25), &sys, &path, &sched()).unwrap();
        let origin = CellSet::interval(&p, 0.0, 0.0).unwrap();
        assert!(near_zero.limit.hausdorff(&origin).unwrap() <= 0.02);

        // Every point of the cell around 1 except 1 itself runs back to 0.
        let one = CellSet::interval(&p, 1.0, 1.0).unwrap();
        let at_one = alpha_limit(&SetRule::Fixed(one), &sys, &path, &sched()).unwrap();
        assert!(at_one.limit.contains_cell(199) && at_one.limit.contains_cell(100));
        assert!(!at_one.limit.contains_cell(90));

        let all = alpha_limit(&SetRule::Fixed(CellSet::full(&p)), &sys, &path, &sched()).unwrap();
        assert!(all.limit.is_full());
    }

    #[test]
    fn limits_report_short_horizons() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let short = sample_wiener(TimeGrid::symmetric(5.0, 0.01).unwrap(), 1);
        let r = omega_limit(&cells(&p, 0.5, 1.0), &sys, &short, &sched());
        assert!(matches!(r, Err(Error::OutOfHorizon { .. })));
    }

    #[test]
    fn empty_input_gives_empty_converged_limit() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let r = omega_limit(&SetRule::Fixed(CellSet::empty(&p)), &sys, &zero(), &sched()).unwrap();
        assert!(r.limit.is_empty() && r.converged && r.emptied);
    }

    #[test]
    fn hulls() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let n = cells(&p, 0.5, 1.0);
        let calm = invariant_hull(&n, &sys, &zero(), 10.0, 0.01).unwrap();
        assert!(calm.hausdorff(n.as_fixed().unwrap()).unwrap() <= 0.01);

        let rough = invariant_hull(&n, &sys, &noisy(2), 20.0, 0.01).unwrap();
        assert!(rough.is_contiguous());
        assert!(rough.contains_cell(199));
        assert!(n.as_fixed().unwrap().is_subset(&rough).unwrap());
        let (lo, _) = rough.intervals()[0];
        assert!(lo <= 0.5);

        let full = SetRule::Fixed(CellSet::full(&p));
        assert!(invariant_hull(&full, &sys, &noisy(2), 5.0, 0.1)
            .unwrap()
            .is_full());
    }

    #[test]
    fn hull_is_forward_invariant_under_noise() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let path = noisy(4);
        let hull = invariant_hull(&cells(&p, 0.5, 1.0), &sys, &path, 25.0, 0.01).unwrap();
        // ℓ(θ_t ω) can only move up relative to the image of ℓ(ω); checking
        // against the fixed fibre is enough at t small.
        let img = image_under_flow(&hull, &sys, 0.01, &path, 5).unwrap();
        assert!(img.hausdorff_semi(&hull).unwrap() <= 0.01);
    }

    #[test]
    fn forward_invariance_checks() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let full = SetRule::Fixed(CellSet::full(&p));
        assert!(
            is_forward_invariant(&full, &sys, &noisy(1), &[0.5, 3.0])
                .unwrap()
                .invariant
        );

        let upper = cells(&p, 0.5, 1.0);
        assert!(
            is_forward_invariant(&upper, &sys, &zero(), &[0.1, 1.0, 5.0])
                .unwrap()
                .invariant
        );

        let slab = cells(&p, 0.5, 0.6);
        let check = is_forward_invariant(&slab, &sys, &zero(), &[1.0]).unwrap();
        assert!(!check.invariant);
        assert!(check.max_violation > 0.0);
        assert_eq!(check.worst_time, Some(1.0));

        assert!(is_forward_invariant(&slab, &sys, &zero(), &[]).is_err());
    }

    fn seeds(n: u64) -> Vec<NoisePath> {
        (0..n).map(noisy).collect()
    }

    #[test]
    fn upper_fixed_point_is_an_attractor() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let a = cells(&p, 1.0, 1.0);
        let n = cells(&p, 0.5, 1.0);
        let r =
            verify_attractor(&a, &n, &sys, &seeds(20), &sched(), DEFAULT_PASS_FRACTION).unwrap();
        assert!(r.passed, "{r:?}");
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 21);
    }

    #[test]
    fn whole_box_is_a_trivial_attractor() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let x = SetRule::Fixed(CellSet::full(&p));
        let r = verify_attractor(&x, &x, &sys, &seeds(3), &sched(), DEFAULT_PASS_FRACTION).unwrap();
        assert!(r.passed);
    }

    #[test]
    fn origin_is_not_an_attractor() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let a = cells(&p, 0.0, 0.0);
        let n = cells(&p, -0.25, 0.25);
        let r = verify_attractor(&a, &n, &sys, &seeds(5), &sched(), DEFAULT_PASS_FRACTION).unwrap();
        assert!(!r.passed);
        assert!(r.rows.iter().all(|row| row.hausdorff_to_target > 0.5));
    }

    #[test]
    fn attractor_outside_neighbourhood_interior_is_misuse() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let a = cells(&p, 0.5, 0.5);
        let n = cells(&p, 0.5, 1.0);
        let r = verify_attractor(&a, &n, &sys, &seeds(1), &sched(), DEFAULT_PASS_FRACTION);
        assert!(matches!(r, Err(Error::Misuse(_))));
    }

    #[test]
    fn strong_neighbourhoods() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let a = cells(&p, 1.0, 1.0);
        let calm = [zero()];
        let r = verify_strong_neighborhood(&cells(&p, 0.5, 1.0), &a, &sys, &calm, &[0.5]).unwrap();
        assert_eq!(r.rows[0].1, StrongVerdict::Strong);

        let full = SetRule::Fixed(CellSet::full(&p));
        let r = verify_strong_neighborhood(&full, &a, &sys, &seeds(2), &[0.5]).unwrap();
        assert_eq!(r.strong_fraction, 1.0);

        let none = SetRule::Fixed(CellSet::empty(&p));
        let r =
            verify_strong_neighborhood(&cells(&p, 0.5, 0.8), &none, &sys, &calm, &[1.0]).unwrap();
        assert!(matches!(r.rows[0].1, StrongVerdict::NotInvariant { .. }));
    }

    #[test]
    fn basin_of_upper_fixed_point() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let a = cells(&p, 1.0, 1.0);
        let n = cells(&p, 0.5, 1.0);
        let basin = basin_estimate(&a, &n, &sys, &noisy(8), 20.0, 0.01).unwrap();
        let want = CellSet::interval(&p, 0.02, 1.0).unwrap();
        let banned = CellSet::interval(&p, -1.0, -0.02).unwrap();
        assert!(want.is_subset(&basin).unwrap());
        assert!(basin.intersect(&banned).unwrap().is_empty());
        assert!(!basin.contains_cell(100) && !basin.contains_cell(99));
    }

    #[test]
    fn basin_of_whole_box() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let x = SetRule::Fixed(CellSet::full(&p));
        assert!(basin_estimate(&x, &x, &sys, &noisy(1), 5.0, 0.1)
            .unwrap()
            .is_full());
    }

    #[test]
    fn uniform_entrance_times() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let n = cells(&p, 0.5, 1.0);
        let inner = CellSet::interval(&p, 0.7, 0.9).unwrap();
        assert_eq!(
            uniform_entrance_time(&inner, &n, &sys, &zero(), 5.0, 0.01).unwrap(),
            0.0
        );

        let k = CellSet::interval(&p, 0.1, 0.2).unwrap();
        let t = uniform_entrance_time(&k, &n, &sys, &zero(), 10.0, 0.01).unwrap();
        assert!((t - 0.5 * 33f64.ln()).abs() <= 0.05, "{t}");

        let with_origin = CellSet::interval(&p, -0.1, 0.1).unwrap();
        assert_eq!(
            uniform_entrance_time(&with_origin, &n, &sys, &zero(), 10.0, 0.01).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn pullback_attraction_without_noise_is_monotone() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let d = CellSet::interval(&p, 0.3, 0.6).unwrap();
        let a = CellSet::interval(&p, 1.0, 1.0).unwrap();
        let path = zero();
        let mut prev = f64::INFINITY;
        for k in 0..=40 {
            let t = k as f64 * 0.5;
            let from = path.shift(-t);
            let img = image_under_flow(&d, &sys, t, &from, 5).unwrap();
            let dist = img.hausdorff_semi(&a).unwrap();
            assert!(dist <= prev);
            prev = dist;
        }
        assert!(prev <= 0.02 + 0.02);
    }

    #[test]
    fn pullback_attraction_with_noise_ends_close() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let d = CellSet::interval(&p, 0.3, 0.6).unwrap();
        let a = CellSet::interval(&p, 1.0, 1.0).unwrap();
        let mut close = 0;
        for seed in 0..20 {
            let path = noisy(seed);
            let from = path.shift(-20.0);
            let img = image_under_flow(&d, &sys, 20.0, &from, 5).unwrap();
            if img.hausdorff_semi(&a).unwrap() <= 0.02 + 0.02 {
                close += 1;
            }
        }
        assert!(close >= 19);
    }

    #[test]
    fn limits_are_invariant_up_to_two_cells() {
        let p = line();
        let sys = CocycleSystem::exact_double_well();
        let n = cells(&p, 0.5, 1.0);
        let s = sched();
        let t = 5.0;
        let mut ok = 0;
        for seed in 0..20 {
            let path = noisy(seed);
            let here = omega_limit(&n, &sys, &path, &s).unwrap().limit;
            let later = omega_limit(&n, &sys, &path.shift(t), &s).unwrap().limit;
            let img = image_under_flow(&here, &sys, t, &path, 5).unwrap();
            if img.is_subset(&later.dilate(2)).unwrap() {
                ok += 1;
            }
        }
        assert!(ok >= 18, "{ok}");
    }
}
