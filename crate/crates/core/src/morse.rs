//! Morse decompositions from attractor filtrations.
//!
//! A filtration `∅ = A_0 ⊊ A_1 ⊊ … ⊊ A_n = X` of attractors, each with a
//! neighbourhood `N_i`, yields repellers `R_i` (the complement of the basin of
//! `A_i`) and Morse sets `M_i = A_i ∩ R_{i-1}`. The weighted sum of the pair
//! Lyapunov functions is constant on each `M_i`, with value
//! `α_i = Σ_{j<i} 2/3^{j+1} = 1 - 3^{-i}`.

use std::io::Write;
use std::sync::Arc;

use num_rational::Ratio;
use rayon::prelude::*;

use crate::cocycle::{CocycleSystem, Point};
use crate::error::{Error, Result};
use crate::lyapunov::{LyapunovField, MorseContext, PairContext, SearchWindow};
use crate::noise::NoisePath;
use crate::pullback::{
    alpha_limit, basin_estimate, covers_invariantly, set_distance, two_cells, verify_attractor,
    AttractorReport, PullbackSchedule, INVARIANCE_CHECK_TIMES,
};
use crate::randset::{CellSet, Partition, RandomSet, SetRule};
use crate::table;

/// Largest `n` for which `3^n` fits the exact plateau arithmetic.
pub const MAX_LEVELS: usize = 38;

/// Attractors `A_1 … A_{n-1}` with neighbourhoods; `A_0 = ∅` and `A_n = X`
/// are implicit. Repellers are filled in by [`build_decomposition`].
#[derive(Debug, Clone)]
pub struct Filtration {
    partition: Arc<Partition>,
    attractors: Vec<SetRule>,
    neighborhoods: Vec<SetRule>,
    /// `R_1 … R_{n-1}` once derived.
    repellers: Vec<Arc<RandomSet>>,
}

impl Filtration {
    pub fn new(
        partition: &Arc<Partition>,
        attractors: Vec<SetRule>,
        neighborhoods: Vec<SetRule>,
    ) -> Result<Self> {
        if attractors.len() != neighborhoods.len() {
            return Err(Error::Config(format!(
                "{} attractors but {} neighbourhoods",
                attractors.len(),
                neighborhoods.len()
            )));
        }
        if attractors.len() + 1 > MAX_LEVELS {
            return Err(Error::Config(format!(
                "at most {MAX_LEVELS} levels are supported"
            )));
        }
        if attractors
            .iter()
            .chain(&neighborhoods)
            .any(|s| s.partition() != partition)
        {
            return Err(Error::PartitionMismatch);
        }
        Ok(Self {
            partition: Arc::clone(partition),
            attractors,
            neighborhoods,
            repellers: Vec::new(),
        })
    }

    /// Number of Morse sets `n`.
    pub fn levels(&self) -> usize {
        self.attractors.len() + 1
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    /// `A_i` for `i = 0, …, n`.
    pub fn attractor(&self, i: usize) -> SetRule {
        if i == 0 {
            SetRule::Fixed(CellSet::empty(&self.partition))
        } else if i == self.levels() {
            SetRule::Fixed(CellSet::full(&self.partition))
        } else {
            self.attractors[i - 1].clone()
        }
    }

    /// `N_i` for `i = 0, …, n` (empty for `i = 0`, the whole box for `i = n`).
    pub fn neighborhood(&self, i: usize) -> SetRule {
        if i == 0 {
            SetRule::Fixed(CellSet::empty(&self.partition))
        } else if i == self.levels() {
            SetRule::Fixed(CellSet::full(&self.partition))
        } else {
            self.neighborhoods[i - 1].clone()
        }
    }

    pub fn has_repellers(&self) -> bool {
        self.repellers.len() + 1 == self.levels()
    }

    /// `R_i` for `i = 0, …, n`; requires derived repellers.
    pub fn repeller(&self, i: usize) -> Result<SetRule> {
        if i == 0 {
            return Ok(SetRule::Fixed(CellSet::full(&self.partition)));
        }
        if i == self.levels() {
            return Ok(SetRule::Fixed(CellSet::empty(&self.partition)));
        }
        self.repellers
            .get(i - 1)
            .map(|r| SetRule::Invariant(Arc::clone(r)))
            .ok_or_else(|| Error::Misuse("repellers have not been derived".into()))
    }

    /// Replace the derived repellers, e.g. to build a deliberately wrong
    /// filtration for a negative control.
    pub fn with_repellers(mut self, repellers: Vec<RandomSet>) -> Result<Self> {
        if repellers.len() + 1 != self.levels() {
            return Err(Error::Config(
                "need one repeller per inner attractor".into(),
            ));
        }
        self.repellers = repellers.into_iter().map(Arc::new).collect();
        Ok(self)
    }

    pub fn repeller_sets(&self) -> Vec<RandomSet> {
        self.repellers.iter().map(|r| (**r).clone()).collect()
    }

    /// Strict nesting `A_{i-1} ⊊ A_i` on one realisation, with at least one
    /// cell of difference. The error names the offending level and a witness
    /// cell.
    pub fn check_nesting(&self, sys: &CocycleSystem, path: &NoisePath) -> Result<()> {
        for i in 1..=self.levels() {
            let lower = self.attractor(i - 1).at(sys, path)?;
            let upper = self.attractor(i).at(sys, path)?;
            if let Some(c) = lower.difference(&upper)?.iter().next() {
                return Err(Error::Misuse(format!(
                    "A_{} ⊄ A_{} on seed {}: cell {c} at {:?}",
                    i - 1,
                    i,
                    path.seed(),
                    self.partition.cell_center(c)
                )));
            }
            if upper.difference(&lower)?.is_empty() {
                return Err(Error::Misuse(format!(
                    "A_{} = A_{} on seed {}",
                    i - 1,
                    i,
                    path.seed()
                )));
            }
        }
        Ok(())
    }

    /// Lyapunov context over all pairs, using the derived repellers.
    pub fn lyapunov_context(&self, search: SearchWindow) -> Result<MorseContext> {
        let inner = (1..self.levels())
            .map(|i| {
                PairContext::new(
                    self.attractor(i),
                    self.repeller(i)?,
                    self.neighborhood(i),
                    search,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        MorseContext::new(&self.partition, inner, search)
    }
}

#[derive(Debug, Clone)]
pub struct RepellerReport {
    pub repeller: RandomSet,
    /// Per seed: Hausdorff distance between the basin complement and the
    /// alpha-limit of the complement of `int N`.
    pub cross_check: Vec<(u64, f64)>,
    /// Fraction of seeds where the two agree within two cells.
    pub agreement: f64,
    pub attractor: AttractorReport,
}

/// Repeller dual to `A`: the complement of its basin on each realisation,
/// cross-checked against `α_{X \ int N}(ω)`.
pub fn repeller_of(
    a: &SetRule,
    n: &SetRule,
    sys: &CocycleSystem,
    paths: &[NoisePath],
    sched: &PullbackSchedule,
    pass_fraction: f64,
) -> Result<RepellerReport> {
    let attractor = verify_attractor(a, n, sys, paths, sched, pass_fraction)?;
    if !attractor.passed {
        return Err(Error::Misuse(format!(
            "attractor check passed on only {:.3} of seeds",
            attractor.pass_fraction
        )));
    }
    let tol = two_cells(a);
    let per_seed = paths
        .par_iter()
        .map(|path| -> Result<(u64, CellSet, f64)> {
            let basin = basin_estimate(a, n, sys, path, sched.max_lookback(), sched.time_step())?;
            let rep = basin.complement();
            let outside = SetRule::Fixed(n.at(sys, path)?.erode(1).complement());
            let alpha = alpha_limit(&outside, sys, path, sched)?;
            let d = set_distance(&rep, &alpha.limit)?;
            Ok((path.seed(), rep, d))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut repeller = RandomSet::new(a.partition(), "repeller");
    let mut cross_check = Vec::with_capacity(per_seed.len());
    for (seed, rep, d) in per_seed {
        repeller.insert(seed, rep)?;
        cross_check.push((seed, d));
    }
    let agree = cross_check.iter().filter(|(_, d)| *d <= tol).count();
    let agreement = if cross_check.is_empty() {
        0.0
    } else {
        agree as f64 / cross_check.len() as f64
    };
    Ok(RepellerReport {
        repeller,
        cross_check,
        agreement,
        attractor,
    })
}

#[derive(Debug, Clone)]
pub struct MorseDecomposition {
    /// The input filtration with repellers filled in.
    pub filtration: Filtration,
    /// `M_1 … M_n`.
    pub morse_sets: Vec<RandomSet>,
    /// `α_1 … α_n` as exact fractions.
    pub plateaus: Vec<Ratio<u64>>,
    pub seeds: Vec<u64>,
    /// Seeds on which two Morse sets share a cell.
    pub overlaps: Vec<(u64, usize, usize)>,
    /// Per level: fraction of seeds on which `M_i` passes the invariance
    /// check.
    pub invariance: Vec<f64>,
    pub repeller_reports: Vec<RepellerReport>,
}

/// `α_i = Σ_{j<i} 2/3^{j+1}` for `i = 1, …, n`.
pub fn plateaus(n: usize) -> Result<Vec<Ratio<u64>>> {
    if n == 0 || n > MAX_LEVELS {
        return Err(Error::Config(format!(
            "level count {n} outside 1..={MAX_LEVELS}"
        )));
    }
    let mut out = Vec::with_capacity(n);
    let mut acc = Ratio::new(0u64, 1);
    for j in 0..n {
        acc += Ratio::new(2u64, 3u64.pow(j as u32 + 1));
        out.push(acc);
    }
    Ok(out)
}

/// Derive repellers and Morse sets from a filtration.
pub fn build_decomposition(
    f: &Filtration,
    sys: &CocycleSystem,
    paths: &[NoisePath],
    sched: &PullbackSchedule,
    pass_fraction: f64,
) -> Result<MorseDecomposition> {
    if paths.is_empty() {
        return Err(Error::Config("no realisations to decompose".into()));
    }
    for path in paths {
        if path.offset() != 0.0 {
            return Err(Error::Misuse(
                "decompositions are built on unshifted realisations".into(),
            ));
        }
        f.check_nesting(sys, path)?;
    }
    let mut reports = Vec::new();
    let mut repellers = Vec::new();
    for i in 1..f.levels() {
        let rep = repeller_of(
            &f.attractor(i),
            &f.neighborhood(i),
            sys,
            paths,
            sched,
            pass_fraction,
        )?;
        repellers.push(rep.repeller.clone());
        reports.push(rep);
    }
    let filtration = f.clone().with_repellers(repellers)?;
    let n = filtration.levels();
    let mut decomposition = MorseDecomposition {
        morse_sets: Vec::with_capacity(n),
        plateaus: plateaus(n)?,
        seeds: paths.iter().map(|p| p.seed()).collect(),
        overlaps: Vec::new(),
        invariance: Vec::new(),
        repeller_reports: reports,
        filtration,
    };
    decomposition.morse_sets = morse_sets_of(&decomposition.filtration, sys, paths)?;
    decomposition.check(sys, paths)?;
    Ok(decomposition)
}

fn morse_sets_of(
    f: &Filtration,
    sys: &CocycleSystem,
    paths: &[NoisePath],
) -> Result<Vec<RandomSet>> {
    (1..=f.levels())
        .map(|i| {
            let mut m = RandomSet::new(&f.partition, format!("M_{i}"));
            let a = f.attractor(i);
            let r = f.repeller(i - 1)?;
            for path in paths {
                m.insert(path.seed(), a.at(sys, path)?.intersect(&r.at(sys, path)?)?)?;
            }
            Ok(m)
        })
        .collect()
}

impl MorseDecomposition {
    pub fn levels(&self) -> usize {
        self.morse_sets.len()
    }

    fn check(&mut self, sys: &CocycleSystem, paths: &[NoisePath]) -> Result<()> {
        self.overlaps.clear();
        for path in paths {
            let seed = path.seed();
            for i in 0..self.levels() {
                for j in i + 1..self.levels() {
                    if !self.morse_sets[i]
                        .get(seed)?
                        .intersect(self.morse_sets[j].get(seed)?)?
                        .is_empty()
                    {
                        self.overlaps.push((seed, i + 1, j + 1));
                    }
                }
            }
        }
        self.invariance = self
            .morse_sets
            .iter()
            .map(|m| {
                let rule = SetRule::Invariant(Arc::new(m.clone()));
                let ok = paths
                    .par_iter()
                    .map(|p| covers_invariantly(&rule, sys, p, &INVARIANCE_CHECK_TIMES))
                    .collect::<Result<Vec<_>>>()?;
                Ok(ok.iter().filter(|b| **b).count() as f64 / ok.len() as f64)
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Plateau values as floating point numbers.
    pub fn plateau_values(&self) -> Vec<f64> {
        self.plateaus
            .iter()
            .map(|r| *r.numer() as f64 / *r.denom() as f64)
            .collect()
    }

    /// Morse sets as rules usable for Lyapunov certificates.
    pub fn candidates(&self) -> Vec<SetRule> {
        self.morse_sets
            .iter()
            .map(|m| SetRule::Invariant(Arc::new(m.clone())))
            .collect()
    }

    /// CSV with columns `seed,level,plateau,cells,intervals`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = table::writer(out);
        w.write_record(["seed", "level", "plateau", "cells", "intervals"])?;
        for &seed in &self.seeds {
            for (i, m) in self.morse_sets.iter().enumerate() {
                let set = m.get(seed)?;
                let ivs: Vec<String> = set
                    .intervals()
                    .iter()
                    .map(|(a, b)| format!("[{};{}]", table::real(*a), table::real(*b)))
                    .collect();
                w.write_record([
                    seed.to_string(),
                    (i + 1).to_string(),
                    self.plateaus[i].to_string(),
                    set.len().to_string(),
                    ivs.join(" "),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per seed, the two-sided Hausdorff distance between `⋃_i M_i` and
/// `⋂_{i=0}^{n} (A_i ∪ R_i)`, both taken from `f`'s attractors and repellers
/// and `d`'s Morse sets.
pub fn morse_union_identity_check(
    d: &MorseDecomposition,
    f: &Filtration,
    sys: &CocycleSystem,
    paths: &[NoisePath],
) -> Result<Vec<(u64, f64)>> {
    if !f.has_repellers() || f.levels() != d.levels() {
        return Err(Error::Misuse(
            "filtration does not match the decomposition".into(),
        ));
    }
    paths
        .iter()
        .map(|path| {
            let seed = path.seed();
            let mut union = CellSet::empty(&f.partition);
            for m in &d.morse_sets {
                union = union.union(m.get(seed)?)?;
            }
            let mut meet = CellSet::full(&f.partition);
            for i in 0..=f.levels() {
                let ar = f
                    .attractor(i)
                    .at(sys, path)?
                    .union(&f.repeller(i)?.at(sys, path)?)?;
                meet = meet.intersect(&ar)?;
            }
            Ok((seed, set_distance(&union, &meet)?))
        })
        .collect()
}

/// Keep the attractors at the 1-based levels in `keep` and rebuild the Morse
/// sets with the existing repellers. The flag tells whether the union of the
/// old Morse sets lies within one cell of the union of the new ones on every
/// seed.
pub fn coarsen(
    d: &MorseDecomposition,
    keep: &[usize],
    sys: &CocycleSystem,
    paths: &[NoisePath],
) -> Result<(MorseDecomposition, bool)> {
    let f = &d.filtration;
    if keep.windows(2).any(|w| w[1] <= w[0]) || keep.iter().any(|&i| i == 0 || i >= f.levels()) {
        return Err(Error::Config(format!(
            "levels to keep must be increasing within 1..{}",
            f.levels()
        )));
    }
    let attractors = keep.iter().map(|&i| f.attractor(i)).collect();
    let neighborhoods = keep.iter().map(|&i| f.neighborhood(i)).collect();
    let repellers = keep
        .iter()
        .map(|&i| Ok((*f.repellers[i - 1]).clone()))
        .collect::<Result<Vec<_>>>()?;
    let coarse =
        Filtration::new(&f.partition, attractors, neighborhoods)?.with_repellers(repellers)?;
    let n = coarse.levels();
    let mut out = MorseDecomposition {
        morse_sets: morse_sets_of(&coarse, sys, paths)?,
        plateaus: plateaus(n)?,
        seeds: d.seeds.clone(),
        overlaps: Vec::new(),
        invariance: Vec::new(),
        repeller_reports: Vec::new(),
        filtration: coarse,
    };
    out.check(sys, paths)?;

    let mut consistent = true;
    for path in paths {
        let seed = path.seed();
        let mut fine = CellSet::empty(&f.partition);
        for m in &d.morse_sets {
            fine = fine.union(m.get(seed)?)?;
        }
        let mut coarse = CellSet::empty(&f.partition);
        for m in &out.morse_sets {
            coarse = coarse.union(m.get(seed)?)?;
        }
        consistent &= fine.is_subset(&coarse.dilate(1))?;
    }
    Ok((out, consistent))
}

/// A point where a certificate condition failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub seed: u64,
    pub x: Point,
    pub t: f64,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateOptions {
    pub samples_per_cell: usize,
    pub t_checks: Vec<f64>,
    /// Allowed spread of the field on a single candidate set.
    pub tol_const: f64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            samples_per_cell: 2,
            t_checks: vec![0.5, 2.0],
            tol_const: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub disjoint: bool,
    pub invariant: bool,
    /// Per candidate: `(min, max)` of the field over its sampled points.
    pub ranges: Vec<(f64, f64)>,
    pub constant: bool,
    pub ordered: bool,
    pub decreasing: bool,
    pub violations: Vec<Witness>,
    /// Orbit steps not tested because a censored entrance time was involved.
    pub skipped: usize,
    pub tested: usize,
}

impl CertificateReport {
    pub fn consistent(&self) -> bool {
        self.disjoint && self.invariant && self.constant && self.ordered && self.decreasing
    }

    pub fn verdict(&self) -> &'static str {
        if self.consistent() {
            "consistent with a Morse decomposition"
        } else {
            "not a Morse decomposition"
        }
    }
}

/// Test whether `candidates` behave like Morse sets for `field`: the field is
/// constant on each, the constants increase with the index, and it strictly
/// decreases along orbits started off their union.
pub fn verify_by_lyapunov(
    candidates: &[SetRule],
    field: &dyn LyapunovField,
    sys: &CocycleSystem,
    paths: &[NoisePath],
    opts: &CertificateOptions,
) -> Result<CertificateReport> {
    if candidates.is_empty() {
        return Err(Error::Config("no candidate sets".into()));
    }
    let part = Arc::clone(candidates[0].partition());
    if candidates.iter().any(|c| *c.partition() != part) {
        return Err(Error::PartitionMismatch);
    }

    struct SeedOutcome {
        disjoint: bool,
        invariant: bool,
        ranges: Vec<(f64, f64)>,
        violations: Vec<Witness>,
        skipped: usize,
        tested: usize,
    }

    let outcomes = paths
        .par_iter()
        .map(|path| -> Result<SeedOutcome> {
            let sets = candidates
                .iter()
                .map(|c| c.at(sys, path))
                .collect::<Result<Vec<_>>>()?;
            let mut disjoint = true;
            for i in 0..sets.len() {
                for j in i + 1..sets.len() {
                    disjoint &= sets[i].intersect(&sets[j])?.is_empty();
                }
            }
            let mut invariant = true;
            for c in candidates {
                invariant &= covers_invariantly(c, sys, path, &INVARIANCE_CHECK_TIMES)?;
            }

            let mut ranges = Vec::with_capacity(sets.len());
            for s in &sets {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for c in s.iter() {
                    for x in part.sample_lattice(c, opts.samples_per_cell) {
                        let v = field.evaluate(sys, path, x)?.value;
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                ranges.push((lo, hi));
            }

            let mut union = CellSet::empty(&part);
            for s in &sets {
                union = union.union(s)?;
            }
            let mut violations = Vec::new();
            let (mut skipped, mut tested) = (0, 0);
            for c in union.complement().iter() {
                for x in part.sample_lattice(c, opts.samples_per_cell) {
                    // Sample points on a Morse cell boundary belong to it.
                    if sets.iter().any(|s| s.contains_point(&x)) {
                        continue;
                    }
                    let before = field.evaluate(sys, path, x)?;
                    for &t in &opts.t_checks {
                        let y = sys.flow(t, path, x)?;
                        let after = field.evaluate(sys, &path.shift(t), y)?;
                        if !(before.reliable && after.reliable) {
                            skipped += 1;
                            continue;
                        }
                        tested += 1;
                        if after.value >= before.value {
                            violations.push(Witness {
                                seed: path.seed(),
                                x,
                                t,
                                before: before.value,
                                after: after.value,
                            });
                        }
                    }
                }
            }
            Ok(SeedOutcome {
                disjoint,
                invariant,
                ranges,
                violations,
                skipped,
                tested,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let k = candidates.len();
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); k];
    let mut report = CertificateReport {
        disjoint: true,
        invariant: true,
        ranges: Vec::new(),
        constant: true,
        ordered: true,
        decreasing: true,
        violations: Vec::new(),
        skipped: 0,
        tested: 0,
    };
    let mut invariant_seeds = 0;
    for o in outcomes {
        report.disjoint &= o.disjoint;
        invariant_seeds += usize::from(o.invariant);
        for (r, (lo, hi)) in ranges.iter_mut().zip(o.ranges) {
            r.0 = r.0.min(lo);
            r.1 = r.1.max(hi);
        }
        report.violations.extend(o.violations);
        report.skipped += o.skipped;
        report.tested += o.tested;
    }
    report.invariant =
        invariant_seeds as f64 >= crate::pullback::DEFAULT_PASS_FRACTION * paths.len() as f64;
    report.constant = ranges.iter().all(|(lo, hi)| hi - lo <= opts.tol_const);
    report.ordered = ranges.windows(2).all(|w| w[0].1 < w[1].0);
    report.decreasing = report.violations.is_empty();
    report.ranges = ranges;
    Ok(report)
}
