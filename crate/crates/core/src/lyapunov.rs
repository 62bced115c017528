//! Entrance-time Lyapunov functions.
//!
//! For an attractor-repeller pair `(A, R)` with neighbourhood `N` of `A`, the
//! entrance time of `x` is `τ(ω, x) = inf { t : φ(t, ω)x ∈ N(θ_t ω) }`, with
//! `τ = -∞` on `A` and `τ = +∞` on `R`. The map
//! `τ ↦ ½eᵗ` (for `τ < 0`), `τ ↦ ½(1 + (2/π) arctan τ)` (for `τ ≥ 0`) turns it
//! into a Lyapunov function with values in `[0, 1]`.
//!
//! The infimum is searched on a finite window `[t_lo, t_hi]`. Scanning starts
//! at `t_lo` on a time grid anchored to absolute time, so that shifting the
//! realisation does not move the grid, and the first crossing is refined by
//! bisection. When the orbit is already in `N` at `t_lo` the result is
//! censored below; when it never enters by `t_hi` it is censored above.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::io::Write;

use crate::cocycle::{CocycleSystem, Point};
use crate::error::{Error, Result};
use crate::noise::NoisePath;
use crate::randset::{CellSet, Partition, SetRule};
use crate::table;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Censoring {
    None,
    /// Already inside `N` at the bottom of the search window.
    Low,
    /// Not inside `N` by the top of the search window.
    High,
}

/// A time on the extended real line, with a censoring tag for finite values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedTime {
    NegInfinity,
    Finite { value: f64, censored: Censoring },
    PosInfinity,
}

impl ExtendedTime {
    pub fn exact(value: f64) -> Self {
        ExtendedTime::Finite {
            value,
            censored: Censoring::None,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            ExtendedTime::NegInfinity => f64::NEG_INFINITY,
            ExtendedTime::Finite { value, .. } => value,
            ExtendedTime::PosInfinity => f64::INFINITY,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(
            self,
            ExtendedTime::Finite {
                censored: Censoring::Low | Censoring::High,
                ..
            }
        )
    }

    /// Finite and not censored.
    pub fn is_exact(&self) -> bool {
        matches!(
            self,
            ExtendedTime::Finite {
                censored: Censoring::None,
                ..
            }
        )
    }

    /// Short tag used in CSV output.
    pub fn tag(&self) -> &'static str {
        match self {
            ExtendedTime::NegInfinity => "neg_inf",
            ExtendedTime::PosInfinity => "pos_inf",
            ExtendedTime::Finite {
                censored: Censoring::None,
                ..
            } => "finite",
            ExtendedTime::Finite {
                censored: Censoring::Low,
                ..
            } => "censored_low",
            ExtendedTime::Finite {
                censored: Censoring::High,
                ..
            } => "censored_high",
        }
    }
}

impl PartialOrd for ExtendedTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.value().partial_cmp(&other.value())
    }
}

/// Window and resolution of the entrance-time search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchWindow {
    pub t_lo: f64,
    pub t_hi: f64,
    pub dt: f64,
    pub refine_iters: u32,
}

impl SearchWindow {
    pub fn new(t_lo: f64, t_hi: f64, dt: f64, refine_iters: u32) -> Result<Self> {
        if !(t_lo < 0.0 && t_hi > 0.0) {
            return Err(Error::Config(format!(
                "search window [{t_lo}, {t_hi}] must straddle zero"
            )));
        }
        if !(dt > 0.0) || dt > t_hi - t_lo {
            return Err(Error::Config(format!(
                "scan step {dt} does not fit the window"
            )));
        }
        Ok(Self {
            t_lo,
            t_hi,
            dt,
            refine_iters,
        })
    }

    /// Width of the final bisection bracket.
    pub fn precision(&self) -> f64 {
        self.dt / 2f64.powi(self.refine_iters as i32)
    }
}

/// Attractor, repeller, neighbourhood of the attractor and search window.
#[derive(Debug, Clone)]
pub struct PairContext {
    attractor: SetRule,
    repeller: SetRule,
    neighborhood: SetRule,
    search: SearchWindow,
}

impl PairContext {
    pub fn new(
        attractor: SetRule,
        repeller: SetRule,
        neighborhood: SetRule,
        search: SearchWindow,
    ) -> Result<Self> {
        let p = attractor.partition();
        if repeller.partition() != p || neighborhood.partition() != p {
            return Err(Error::PartitionMismatch);
        }
        if let (Some(a), Some(n)) = (attractor.as_fixed(), neighborhood.as_fixed()) {
            if !a.is_subset(&n.erode(1))? {
                return Err(Error::Misuse(
                    "attractor is not inside the interior of its neighbourhood".into(),
                ));
            }
        }
        if let (Some(r), Some(n)) = (repeller.as_fixed(), neighborhood.as_fixed()) {
            if !r.intersect(n)?.is_empty() {
                return Err(Error::Misuse(
                    "repeller meets the neighbourhood of the attractor".into(),
                ));
            }
        }
        Ok(Self {
            attractor,
            repeller,
            neighborhood,
            search,
        })
    }

    /// The trivial pair `(∅, X)`; its Lyapunov function is identically 1.
    pub fn empty_attractor(partition: &Arc<Partition>, search: SearchWindow) -> Self {
        let none = SetRule::Fixed(CellSet::empty(partition));
        Self {
            attractor: none.clone(),
            repeller: SetRule::Fixed(CellSet::full(partition)),
            neighborhood: none,
            search,
        }
    }

    /// The trivial pair `(X, ∅)`; its Lyapunov function is identically 0.
    pub fn whole_space(partition: &Arc<Partition>, search: SearchWindow) -> Self {
        let all = SetRule::Fixed(CellSet::full(partition));
        Self {
            attractor: all.clone(),
            repeller: SetRule::Fixed(CellSet::empty(partition)),
            neighborhood: all,
            search,
        }
    }

    pub fn attractor(&self) -> &SetRule {
        &self.attractor
    }

    pub fn repeller(&self) -> &SetRule {
        &self.repeller
    }

    pub fn neighborhood(&self) -> &SetRule {
        &self.neighborhood
    }

    pub fn search(&self) -> &SearchWindow {
        &self.search
    }

    /// Check the pair invariants on one realisation.
    pub fn validate(&self, sys: &CocycleSystem, path: &NoisePath) -> Result<()> {
        let a = self.attractor.at(sys, path)?;
        let r = self.repeller.at(sys, path)?;
        let n = self.neighborhood.at(sys, path)?;
        if !a.is_subset(&n.erode(1))? {
            return Err(Error::Misuse(format!("A ⊄ int N on seed {}", path.seed())));
        }
        if !r.intersect(&n)?.is_empty() {
            return Err(Error::Misuse(format!("R ∩ N ≠ ∅ on seed {}", path.seed())));
        }
        Ok(())
    }
}

/// Entrance time of `x` into the neighbourhood of the attractor.
pub fn entrance_time(
    ctx: &PairContext,
    sys: &CocycleSystem,
    path: &NoisePath,
    x: Point,
) -> Result<ExtendedTime> {
    if ctx.attractor.contains(sys, path, &x)? {
        return Ok(ExtendedTime::NegInfinity);
    }
    if ctx.repeller.contains(sys, path, &x)? {
        return Ok(ExtendedTime::PosInfinity);
    }
    let w = &ctx.search;
    let inside = |t: f64| -> Result<bool> {
        let y = sys.flow(t, path, x)?;
        ctx.neighborhood.contains(sys, &path.shift(t), &y)
    };

    // Grid times k·dt in absolute coordinates.
    let off = path.offset();
    let k0 = ((w.t_lo + off) / w.dt).ceil() as i64;
    let k1 = ((w.t_hi + off) / w.dt).floor() as i64;
    if k1 < k0 {
        return Err(Error::Config("search window contains no grid time".into()));
    }
    let at = |k: i64| k as f64 * w.dt - off;

    let first = at(k0);
    if inside(first)? {
        return Ok(ExtendedTime::Finite {
            value: first,
            censored: Censoring::Low,
        });
    }
    let mut traj = sys.trajectory(path, x, first)?;
    let mut prev = first;
    for k in k0 + 1..=k1 {
        let t = at(k);
        let y = traj.advance_to(t)?;
        if ctx.neighborhood.contains(sys, &path.shift(t), &y)? {
            return Ok(ExtendedTime::exact(bisect(
                &inside,
                prev,
                t,
                w.refine_iters,
            )?));
        }
        prev = t;
    }
    Ok(ExtendedTime::Finite {
        value: prev,
        censored: Censoring::High,
    })
}

/// Shrink `(lo, hi]` with `inside(lo)` false and `inside(hi)` true; returns
/// the upper end.
fn bisect(
    inside: &dyn Fn(f64) -> Result<bool>,
    mut lo: f64,
    mut hi: f64,
    iters: u32,
) -> Result<f64> {
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if inside(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Map an entrance time to `[0, 1]`.
pub fn lyap_value(tau: ExtendedTime) -> f64 {
    match tau {
        ExtendedTime::NegInfinity => 0.0,
        ExtendedTime::PosInfinity => 1.0,
        ExtendedTime::Finite { value, .. } if value < 0.0 => 0.5 * value.exp(),
        ExtendedTime::Finite { value, .. } => 0.5 * (1.0 + (2.0 / PI) * value.atan()),
    }
}

/// A Lyapunov value with a flag telling whether any censored entrance time
/// went into it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldValue {
    pub value: f64,
    pub reliable: bool,
}

/// Anything that assigns a value to `(ω, x)`.
pub trait LyapunovField: Sync {
    fn evaluate(&self, sys: &CocycleSystem, path: &NoisePath, x: Point) -> Result<FieldValue>;
}

/// Lyapunov function of one attractor-repeller pair.
pub fn pair_lyapunov(
    ctx: &PairContext,
    sys: &CocycleSystem,
    path: &NoisePath,
    x: Point,
) -> Result<f64> {
    Ok(lyap_value(entrance_time(ctx, sys, path, x)?))
}

impl LyapunovField for PairContext {
    fn evaluate(&self, sys: &CocycleSystem, path: &NoisePath, x: Point) -> Result<FieldValue> {
        let tau = entrance_time(self, sys, path, x)?;
        Ok(FieldValue {
            value: lyap_value(tau),
            reliable: !tau.is_censored(),
        })
    }
}

/// `|τ(θ_t ω, φ(t, ω)x) - (τ(ω, x) - t)|`, or `None` when either time is
/// infinite or censored.
pub fn tau_cocycle_check(
    ctx: &PairContext,
    sys: &CocycleSystem,
    path: &NoisePath,
    x: Point,
    t: f64,
) -> Result<Option<f64>> {
    let before = entrance_time(ctx, sys, path, x)?;
    let y = sys.flow(t, path, x)?;
    let after = entrance_time(ctx, sys, &path.shift(t), y)?;
    if !before.is_exact() || !after.is_exact() {
        return Ok(None);
    }
    Ok(Some((after.value() - (before.value() - t)).abs()))
}

/// Pairs `(A_i, R_i)` for `i = 0, …, n` of a Morse filtration, with
/// `A_0 = ∅` and `A_n = X`.
#[derive(Debug, Clone)]
pub struct MorseContext {
    pairs: Vec<PairContext>,
}

impl MorseContext {
    /// `inner` holds the pairs `i = 1, …, n-1`; the trivial end pairs are
    /// added here.
    pub fn new(
        partition: &Arc<Partition>,
        inner: Vec<PairContext>,
        search: SearchWindow,
    ) -> Result<Self> {
        if inner.iter().any(|p| p.attractor.partition() != partition) {
            return Err(Error::PartitionMismatch);
        }
        let mut pairs = Vec::with_capacity(inner.len() + 2);
        pairs.push(PairContext::empty_attractor(partition, search));
        pairs.extend(inner);
        pairs.push(PairContext::whole_space(partition, search));
        Ok(Self { pairs })
    }

    /// Number of Morse sets `n`.
    pub fn levels(&self) -> usize {
        self.pairs.len() - 1
    }

    pub fn pairs(&self) -> &[PairContext] {
        &self.pairs
    }
}

/// Weight of level `i` in the Morse Lyapunov function.
pub fn level_weight(i: usize) -> f64 {
    2.0 / 3f64.powi(i as i32 + 1)
}

/// `L(ω, x) = Σ_{i=0}^{n} 2 l_i(ω, x) / 3^{i+1}`.
pub fn morse_lyapunov(
    ctx: &MorseContext,
    sys: &CocycleSystem,
    path: &NoisePath,
    x: Point,
) -> Result<f64> {
    Ok(ctx.evaluate(sys, path, x)?.value)
}

impl LyapunovField for MorseContext {
    fn evaluate(&self, sys: &CocycleSystem, path: &NoisePath, x: Point) -> Result<FieldValue> {
        let mut value = 0.0;
        let mut reliable = true;
        for (i, pair) in self.pairs.iter().enumerate() {
            let l = pair.evaluate(sys, path, x)?;
            value += level_weight(i) * l.value;
            reliable &= l.reliable;
        }
        Ok(FieldValue { value, reliable })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub t: f64,
    pub value: f64,
    pub reliable: bool,
}

/// `t ↦ L(θ_t ω, φ(t, ω)x)` on the given times.
pub fn monotonicity_profile(
    field: &dyn LyapunovField,
    sys: &CocycleSystem,
    path: &NoisePath,
    x: Point,
    times: &[f64],
) -> Result<Vec<ProfilePoint>> {
    times
        .iter()
        .map(|&t| {
            let y = sys.flow(t, path, x)?;
            let v = field.evaluate(sys, &path.shift(t), y)?;
            Ok(ProfilePoint {
                t,
                value: v.value,
                reliable: v.reliable,
            })
        })
        .collect()
}

/// Consecutive profile steps that increase. Steps next to an unreliable value
/// and steps starting on a plateau (0 or 1) are skipped: the cell
/// discretisations of `A` and `R` need not be invariant. With `strict`, equal
/// values also count. Returns `(violations, skipped)`.
pub fn profile_violations(profile: &[ProfilePoint], strict: bool) -> (Vec<(f64, f64)>, usize) {
    let mut bad = Vec::new();
    let mut skipped = 0;
    for w in profile.windows(2) {
        if !(w[0].reliable && w[1].reliable) || w[0].value == 0.0 || w[0].value == 1.0 {
            skipped += 1;
            continue;
        }
        let up = if strict {
            w[1].value >= w[0].value
        } else {
            w[1].value > w[0].value
        };
        if up {
            bad.push((w[0].t, w[1].t));
        }
    }
    (bad, skipped)
}

/// CSV with columns `t,L`.
pub fn write_profile_csv<W: Write>(profile: &[ProfilePoint], out: W) -> Result<()> {
    let mut w = table::writer(out);
    w.write_record(["t", "L"])?;
    for p in profile {
        w.write_record([table::real(p.t), table::real(p.value)])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a sampled Lyapunov field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub seed: u64,
    pub x: Point,
    pub tau: Option<ExtendedTime>,
    pub value: f64,
}

/// CSV with columns `seed,x[,y],tau_tag,tau_value,L`. Rows without an
/// entrance time (Morse sums) carry the tag `sum`.
pub fn write_field_csv<W: Write>(rows: &[FieldSample], out: W) -> Result<()> {
    let mut w = table::writer(out);
    let planar = rows.first().is_some_and(|r| r.x.dim() == 2);
    let mut header = vec!["seed", "x"];
    if planar {
        header.push("y");
    }
    header.extend(["tau_tag", "tau_value", "L"]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.seed.to_string()];
        rec.extend(r.x.coords().iter().map(|c| table::real(*c)));
        match r.tau {
            Some(t) => {
                rec.push(t.tag().to_string());
                rec.push(table::real(t.value()));
            }
            None => {
                rec.push("sum".to_string());
                rec.push(String::new());
            }
        }
        rec.push(table::real(r.value));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
