//! Two-sided Wiener noise and the shift flow acting on it.
//!
//! A [`NoisePath`] stores Brownian levels on a uniform grid over a finite
//! horizon `[t_min, t_max]` around time zero. Shifting never copies the
//! nodes: a shifted path keeps a handle on the same storage together with
//! the accumulated shift, so `θ_t ∘ θ_s` and `θ_{s+t}` evaluate through the
//! same arithmetic.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::table;

/// Relative slack admitted when a query lands just outside the horizon.
const HORIZON_SLACK: f64 = 1e-9;

/// Uniform discretisation of two-sided time around zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_min: f64,
    t_max: f64,
    dt: f64,
    steps_before: usize,
    steps_after: usize,
}

impl TimeGrid {
    pub fn new(t_min: f64, t_max: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!(
                "time step must be positive, got {dt}"
            )));
        }
        if !(t_min <= 0.0) || !t_min.is_finite() {
            return Err(Error::Config(format!("t_min must be <= 0, got {t_min}")));
        }
        if !(t_max >= 0.0) || !t_max.is_finite() {
            return Err(Error::Config(format!("t_max must be >= 0, got {t_max}")));
        }
        let steps_before = whole_steps(-t_min, dt).ok_or_else(|| {
            Error::Config(format!("t_min = {t_min} is not a multiple of dt = {dt}"))
        })?;
        let steps_after = whole_steps(t_max, dt).ok_or_else(|| {
            Error::Config(format!("t_max = {t_max} is not a multiple of dt = {dt}"))
        })?;
        Ok(Self {
            t_min,
            t_max,
            dt,
            steps_before,
            steps_after,
        })
    }

    /// Symmetric grid `[-horizon, horizon]`.
    pub fn symmetric(horizon: f64, dt: f64) -> Result<Self> {
        Self::new(-horizon, horizon, dt)
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn node_count(&self) -> usize {
        self.steps_before + self.steps_after + 1
    }

    /// Time of node `k`, counted from the node at zero.
    pub fn node_time(&self, k: i64) -> f64 {
        k as f64 * self.dt
    }
}

fn whole_steps(span: f64, dt: f64) -> Option<usize> {
    let steps = span / dt;
    let rounded = steps.round();
    if (steps - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        Some(rounded as usize)
    } else {
        None
    }
}

/// A sampled realisation `ω` of two-sided Brownian motion, possibly viewed
/// through the shift `θ_s`.
#[derive(Debug, Clone)]
pub struct NoisePath {
    grid: TimeGrid,
    nodes: Arc<[f64]>,
    seed: u64,
    offset: f64,
    /// Base level at `offset`; `None` when the offset itself is off-grid.
    origin: Option<f64>,
}

impl PartialEq for NoisePath {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.seed == other.seed
            && self.offset.to_bits() == other.offset.to_bits()
            && (Arc::ptr_eq(&self.nodes, &other.nodes) || self.nodes == other.nodes)
    }
}

/// Sample a two-sided Wiener path on `grid`.
///
/// Increments after zero come from stream 0 of a ChaCha8 generator seeded
/// with `seed`, increments before zero from stream 1, so both halves are
/// independent and reproducible.
pub fn sample_wiener(grid: TimeGrid, seed: u64) -> NoisePath {
    let sd = grid.dt.sqrt();
    let mut nodes = vec![0.0; grid.node_count()];
    let zero = grid.steps_before;

    let mut forward = ChaCha8Rng::seed_from_u64(seed);
    forward.set_stream(0);
    let mut level = 0.0;
    for slot in nodes[zero + 1..].iter_mut() {
        let z: f64 = forward.sample(StandardNormal);
        level += sd * z;
        *slot = level;
    }

    let mut backward = ChaCha8Rng::seed_from_u64(seed);
    backward.set_stream(1);
    let mut level = 0.0;
    for slot in nodes[..zero].iter_mut().rev() {
        let z: f64 = backward.sample(StandardNormal);
        level += sd * z;
        *slot = level;
    }

    NoisePath::from_nodes(grid, nodes.into(), seed)
}

impl NoisePath {
    fn from_nodes(grid: TimeGrid, nodes: Arc<[f64]>, seed: u64) -> Self {
        debug_assert_eq!(nodes[grid.steps_before], 0.0);
        Self {
            grid,
            nodes,
            seed,
            offset: 0.0,
            origin: Some(0.0),
        }
    }

    /// Noise-free path; the driven system reduces to its deterministic part.
    pub fn zero(grid: TimeGrid, seed: u64) -> Self {
        Self::from_nodes(grid, vec![0.0; grid.node_count()].into(), seed)
    }

    /// Build a path from explicit node values (node at zero must be 0).
    pub fn from_values(grid: TimeGrid, values: Vec<f64>, seed: u64) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Config(format!(
                "expected {} node values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        if values[grid.steps_before] != 0.0 {
            return Err(Error::Config("path must vanish at t = 0".into()));
        }
        Ok(Self::from_nodes(grid, values.into(), seed))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Accumulated shift relative to the sampled realisation.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// The unshifted realisation this path was derived from.
    pub fn unshifted(&self) -> NoisePath {
        NoisePath {
            grid: self.grid,
            nodes: Arc::clone(&self.nodes),
            seed: self.seed,
            offset: 0.0,
            origin: Some(0.0),
        }
    }

    /// Evaluable window in this path's own time coordinate.
    pub fn horizon(&self) -> (f64, f64) {
        (self.grid.t_min - self.offset, self.grid.t_max - self.offset)
    }

    /// `θ_s`: the returned path evaluates at `u` to `self(u + s) - self(s)`.
    pub fn shift(&self, s: f64) -> NoisePath {
        let offset = self.offset + s;
        NoisePath {
            grid: self.grid,
            nodes: Arc::clone(&self.nodes),
            seed: self.seed,
            offset,
            origin: self.base_level(offset).ok(),
        }
    }

    /// `W_t(ω) = ω(t)` with linear interpolation between nodes.
    pub fn evaluate(&self, t: f64) -> Result<f64> {
        let origin = self.origin.ok_or(Error::OutOfHorizon {
            t: 0.0,
            lo: self.horizon().0,
            hi: self.horizon().1,
        })?;
        let level = self.base_level(t + self.offset).map_err(|_| {
            let (lo, hi) = self.horizon();
            Error::OutOfHorizon { t, lo, hi }
        })?;
        Ok(level - origin)
    }

    /// Fail unless every time in `[a, b]` is evaluable.
    pub fn check_window(&self, a: f64, b: f64) -> Result<()> {
        let (lo, hi) = self.horizon();
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        if self.origin.is_none() {
            return Err(Error::OutOfHorizon { t: 0.0, lo, hi });
        }
        for t in [a, b] {
            if t < lo - slack(t) || t > hi + slack(t) {
                return Err(Error::OutOfHorizon { t, lo, hi });
            }
        }
        Ok(())
    }

    /// Grid node times (own coordinate) lying strictly inside `(a, b)`, in
    /// increasing order. Between consecutive nodes the path is affine.
    pub fn nodes_between(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        let dt = self.grid.dt;
        let first = ((a + self.offset) / dt).floor() as i64 + 1;
        let offset = self.offset;
        (first..)
            .map(move |k| k as f64 * dt - offset)
            .skip_while(move |&t| t <= a)
            .take_while(move |&t| t < b)
    }

    /// Node times in own coordinates spaced `dt` apart, covering `[a, b]`
    /// from the last node at or before `a` to the first node at or after `b`.
    pub fn node_cover(&self, a: f64, b: f64) -> Vec<f64> {
        let dt = self.grid.dt;
        let k0 = ((a + self.offset) / dt).floor() as i64;
        let k1 = ((b + self.offset) / dt).ceil() as i64;
        (k0..=k1).map(|k| k as f64 * dt - self.offset).collect()
    }

    fn base_level(&self, abs: f64) -> Result<f64> {
        let g = &self.grid;
        let out = || Error::OutOfHorizon {
            t: abs,
            lo: g.t_min,
            hi: g.t_max,
        };
        if !abs.is_finite() {
            return Err(out());
        }
        if abs < g.t_min - slack(abs) || abs > g.t_max + slack(abs) {
            return Err(out());
        }
        let pos = abs / g.dt;
        let k = pos.floor();
        let frac = pos - k;
        let idx = k as i64 + g.steps_before as i64;
        let last = self.nodes.len() as i64 - 1;
        if idx < 0 {
            return Ok(self.nodes[0]);
        }
        if idx >= last {
            return Ok(self.nodes[last as usize]);
        }
        let i = idx as usize;
        let (v0, v1) = (self.nodes[i], self.nodes[i + 1]);
        Ok(v0 + frac * (v1 - v0))
    }

    /// Dump the path as CSV with columns `t,value` (own time coordinate).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = table::writer(out);
        w.write_record(["t", "value"])?;
        for t in self.node_cover(self.horizon().0, self.horizon().1) {
            if let Ok(v) = self.evaluate(t) {
                w.write_record([table::real(t), table::real(v)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn slack(t: f64) -> f64 {
    HORIZON_SLACK * t.abs().max(1.0)
}
