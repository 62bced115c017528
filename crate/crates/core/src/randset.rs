//! Grid-cell representation of (random) compact subsets of the state box.
//!
//! A [`Partition`] splits the box into `n` (1-D) or `n × n` (2-D) equal
//! closed cells. A [`CellSet`] is a union of such cells. Closures and
//! interiors are approximated morphologically: `dilate(S, 1)` plays the role
//! of a closed neighbourhood and `erode(S, 1)` the role of `int S`. Interior
//! is taken relative to the box, so cells on the box boundary can be
//! interior cells.
//!
//! Distances between cell sets use the gap between closed cells: the value
//! is zero exactly when every cell of `A` touches `B`, and the distance
//! between the underlying point sets exceeds it by at most one cell
//! diameter.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cocycle::{CocycleSystem, Point, StateBox};
use crate::error::{Error, Result};
use crate::noise::NoisePath;
use crate::table;

/// Default sampling density per axis for cell images.
pub const DEFAULT_SAMPLES_PER_CELL: usize = 5;

/// Tolerance, in cell widths, for deciding that a coordinate sits on a cell
/// boundary.
const EDGE_TOL: f64 = 1e-9;

/// Uniform partition of a state box into closed cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    state_box: StateBox,
    cells_per_axis: usize,
}

impl Partition {
    pub fn new(state_box: StateBox, cells_per_axis: usize) -> Result<Arc<Self>> {
        if cells_per_axis < 2 {
            return Err(Error::Config(format!(
                "need at least 2 cells per axis, got {cells_per_axis}"
            )));
        }
        Ok(Arc::new(Self {
            state_box,
            cells_per_axis,
        }))
    }

    pub fn state_box(&self) -> &StateBox {
        &self.state_box
    }

    pub fn dim(&self) -> usize {
        self.state_box.dim()
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn cell_count(&self) -> usize {
        self.cells_per_axis.pow(self.dim() as u32)
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        self.state_box.width(axis) / self.cells_per_axis as f64
    }

    /// Largest cell width over the axes.
    pub fn max_cell_width(&self) -> f64 {
        (0..self.dim())
            .map(|a| self.cell_width(a))
            .fold(0.0, f64::max)
    }

    /// Length of a cell diagonal (the cell width in 1-D).
    pub fn cell_diameter(&self) -> f64 {
        (0..self.dim())
            .map(|a| self.cell_width(a).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Position of a coordinate measured in cell widths from the lower face.
    fn cell_coord(&self, axis: usize, v: f64) -> f64 {
        (v - self.state_box.lower()[axis]) / self.state_box.width(axis) * self.cells_per_axis as f64
    }

    fn split(&self, idx: usize) -> [usize; 2] {
        let n = self.cells_per_axis;
        [idx % n, idx / n]
    }

    fn join(&self, ij: [usize; 2]) -> usize {
        ij[0] + self.cells_per_axis * ij[1]
    }

    /// Cell holding `p`; points on an internal face go to the upper cell,
    /// points on the upper box face to the last cell.
    pub fn cell_of(&self, p: &Point) -> usize {
        let n = self.cells_per_axis;
        let mut ij = [0usize; 2];
        for (axis, slot) in ij.iter_mut().enumerate().take(self.dim()) {
            let c = self.cell_coord(axis, p[axis]).floor();
            *slot = c.clamp(0.0, (n - 1) as f64) as usize;
        }
        self.join(ij)
    }

    /// Every closed cell containing `p` (up to `2^dim` on shared faces).
    pub fn cells_containing(&self, p: &Point) -> Vec<usize> {
        let n = self.cells_per_axis as i64;
        let mut per_axis: [Vec<usize>; 2] = [Vec::with_capacity(2), vec![0]];
        for (axis, slot) in per_axis.iter_mut().enumerate().take(self.dim()) {
            slot.clear();
            let c = self.cell_coord(axis, p[axis]);
            let lo = ((c - EDGE_TOL).ceil() as i64 - 1).clamp(0, n - 1);
            let hi = ((c + EDGE_TOL).floor() as i64).clamp(0, n - 1);
            slot.extend((lo..=hi).map(|k| k as usize));
        }
        let mut out = Vec::with_capacity(4);
        for &j in &per_axis[1] {
            for &i in &per_axis[0] {
                out.push(self.join([i, j]));
            }
        }
        out
    }

    /// Inclusive index range of cells covering `[a, b]` along `axis`. A
    /// proper interval takes the cells whose interior meets `(a, b)`; a
    /// degenerate one takes every closed cell containing the point.
    fn axis_range(&self, axis: usize, a: f64, b: f64) -> Option<(usize, usize)> {
        let n = self.cells_per_axis as i64;
        let (pa, pb) = (self.cell_coord(axis, a), self.cell_coord(axis, b));
        if pb < pa || pb < -EDGE_TOL || pa > n as f64 + EDGE_TOL {
            return None;
        }
        let (lo, hi) = if pb - pa <= 2.0 * EDGE_TOL {
            (
                (pa - EDGE_TOL).ceil() as i64 - 1,
                (pa + EDGE_TOL).floor() as i64,
            )
        } else {
            (
                (pa + EDGE_TOL).floor() as i64,
                (pb - EDGE_TOL).ceil() as i64 - 1,
            )
        };
        let (lo, hi) = (lo.clamp(0, n - 1), hi.clamp(0, n - 1));
        (lo <= hi).then_some((lo as usize, hi as usize))
    }

    pub fn cell_bounds(&self, idx: usize) -> ([f64; 2], [f64; 2]) {
        let ij = self.split(idx);
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for axis in 0..self.dim() {
            let w = self.cell_width(axis);
            lo[axis] = self.state_box.lower()[axis] + ij[axis] as f64 * w;
            hi[axis] = lo[axis] + w;
        }
        (lo, hi)
    }

    pub fn cell_center(&self, idx: usize) -> Point {
        let (lo, hi) = self.cell_bounds(idx);
        let c: Vec<f64> = (0..self.dim()).map(|a| 0.5 * (lo[a] + hi[a])).collect();
        Point::from_slice(&c).expect("dimension checked by StateBox")
    }

    /// Regular lattice of `k` points per axis, including the cell corners
    /// when `k ≥ 2` and the centre when `k = 1`.
    pub fn sample_lattice(&self, idx: usize, k: usize) -> Vec<Point> {
        let (lo, hi) = self.cell_bounds(idx);
        let frac = |i: usize| {
            if k <= 1 {
                0.5
            } else {
                i as f64 / (k - 1) as f64
            }
        };
        let at = |axis: usize, i: usize| lo[axis] + frac(i) * (hi[axis] - lo[axis]);
        if self.dim() == 1 {
            (0..k.max(1)).map(|i| Point::scalar(at(0, i))).collect()
        } else {
            let k = k.max(1);
            (0..k * k)
                .map(|m| Point::planar(at(0, m % k), at(1, m / k)))
                .collect()
        }
    }

    /// Per-axis gap between two closed cells, in state units.
    fn gap(&self, a: usize, b: usize) -> f64 {
        let (ia, ib) = (self.split(a), self.split(b));
        (0..self.dim())
            .map(|axis| {
                let d = (ia[axis] as i64 - ib[axis] as i64)
                    .unsigned_abs()
                    .saturating_sub(1);
                (d as f64 * self.cell_width(axis)).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// A union of closed cells of one partition.
#[derive(Debug, Clone)]
pub struct CellSet {
    partition: Arc<Partition>,
    members: Vec<bool>,
}

impl PartialEq for CellSet {
    fn eq(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.partition, &other.partition) || self.partition == other.partition)
            && self.members == other.members
    }
}

impl CellSet {
    pub fn empty(partition: &Arc<Partition>) -> Self {
        Self {
            partition: Arc::clone(partition),
            members: vec![false; partition.cell_count()],
        }
    }

    /// The whole box `X`.
    pub fn full(partition: &Arc<Partition>) -> Self {
        Self {
            partition: Arc::clone(partition),
            members: vec![true; partition.cell_count()],
        }
    }

    pub fn from_indices(
        partition: &Arc<Partition>,
        indices: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let mut set = Self::empty(partition);
        for i in indices {
            if i >= set.members.len() {
                return Err(Error::Config(format!("cell index {i} out of range")));
            }
            set.members[i] = true;
        }
        Ok(set)
    }

    /// Cells covering the axis-aligned box `[lower, upper]`.
    pub fn from_box(partition: &Arc<Partition>, lower: &[f64], upper: &[f64]) -> Result<Self> {
        let dim = partition.dim();
        if lower.len() != dim || upper.len() != dim {
            return Err(Error::Config(format!(
                "set bounds must have dimension {dim}"
            )));
        }
        let mut set = Self::empty(partition);
        let mut ranges = [(0usize, 0usize); 2];
        for axis in 0..dim {
            match partition.axis_range(axis, lower[axis], upper[axis]) {
                Some(r) => ranges[axis] = r,
                None => return Ok(set),
            }
        }
        for j in ranges[1].0..=ranges[1].1 {
            for i in ranges[0].0..=ranges[0].1 {
                set.members[partition.join([i, j])] = true;
            }
        }
        Ok(set)
    }

    /// 1-D convenience for [`from_box`](Self::from_box).
    pub fn interval(partition: &Arc<Partition>, a: f64, b: f64) -> Result<Self> {
        Self::from_box(partition, &[a], &[b])
    }

    /// Cells whose closure contains `p`.
    pub fn point(partition: &Arc<Partition>, p: &Point) -> Self {
        let mut set = Self::empty(partition);
        for c in partition.cells_containing(p) {
            set.members[c] = true;
        }
        set
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|m| *m)
    }

    pub fn is_full(&self) -> bool {
        self.members.iter().all(|m| *m)
    }

    pub fn contains_cell(&self, idx: usize) -> bool {
        self.members.get(idx).copied().unwrap_or(false)
    }

    /// Whether `p` lies in the closed union of member cells.
    pub fn contains_point(&self, p: &Point) -> bool {
        self.partition
            .cells_containing(p)
            .into_iter()
            .any(|c| self.members[c])
    }

    /// Member indices in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| i)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.iter().collect()
    }

    fn same_partition(&self, other: &CellSet) -> Result<()> {
        if Arc::ptr_eq(&self.partition, &other.partition) || self.partition == other.partition {
            Ok(())
        } else {
            Err(Error::PartitionMismatch)
        }
    }

    fn zip(&self, other: &CellSet, f: impl Fn(bool, bool) -> bool) -> Result<CellSet> {
        self.same_partition(other)?;
        let members = self
            .members
            .iter()
            .zip(&other.members)
            .map(|(a, b)| f(*a, *b))
            .collect();
        Ok(CellSet {
            partition: Arc::clone(&self.partition),
            members,
        })
    }

    pub fn union(&self, other: &CellSet) -> Result<CellSet> {
        self.zip(other, |a, b| a || b)
    }

    pub fn intersect(&self, other: &CellSet) -> Result<CellSet> {
        self.zip(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &CellSet) -> Result<CellSet> {
        self.zip(other, |a, b| a && !b)
    }

    pub fn is_subset(&self, other: &CellSet) -> Result<bool> {
        self.same_partition(other)?;
        Ok(self
            .members
            .iter()
            .zip(&other.members)
            .all(|(a, b)| !*a || *b))
    }

    pub fn complement(&self) -> CellSet {
        CellSet {
            partition: Arc::clone(&self.partition),
            members: self.members.iter().map(|m| !m).collect(),
        }
    }

    /// Add every cell within `k` cells (Chebyshev distance) of a member.
    pub fn dilate(&self, k: usize) -> CellSet {
        if k == 0 || self.is_empty() {
            return self.clone();
        }
        let n = self.partition.cells_per_axis;
        let mut out = self.members.clone();
        // Separable: a square structuring element is a product of segments.
        for axis in 0..self.partition.dim() {
            let src = out.clone();
            for idx in 0..src.len() {
                if !src[idx] {
                    continue;
                }
                let ij = self.partition.split(idx);
                let lo = ij[axis].saturating_sub(k);
                let hi = (ij[axis] + k).min(n - 1);
                for c in lo..=hi {
                    let mut nij = ij;
                    nij[axis] = c;
                    out[self.partition.join(nij)] = true;
                }
            }
        }
        CellSet {
            partition: Arc::clone(&self.partition),
            members: out,
        }
    }

    /// Remove every cell within `k` cells of a non-member. Cells outside the
    /// box do not count as non-members.
    pub fn erode(&self, k: usize) -> CellSet {
        self.complement().dilate(k).complement()
    }

    /// Members that are not interior (`S ∖ erode(S, 1)`).
    pub fn boundary_cells(&self) -> CellSet {
        let interior = self.erode(1);
        self.difference(&interior).expect("same partition")
    }

    /// Distance from `p` to the closed union of member cells.
    pub fn dist_point(&self, p: &Point) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptySet("distance to an empty set"));
        }
        let dim = self.partition.dim();
        Ok(self
            .iter()
            .map(|c| {
                let (lo, hi) = self.partition.cell_bounds(c);
                (0..dim)
                    .map(|a| {
                        let d = (lo[a] - p[a]).max(p[a] - hi[a]).max(0.0);
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min))
    }

    /// Hausdorff semi-distance `d(A|B) = sup_{a∈A} inf_{b∈B}` gap between
    /// closed cells. Empty `A` gives 0; empty `B` is an error.
    pub fn hausdorff_semi(&self, other: &CellSet) -> Result<f64> {
        self.same_partition(other)?;
        if self.is_empty() {
            return Ok(0.0);
        }
        if other.is_empty() {
            return Err(Error::EmptySet("semi-distance to an empty set"));
        }
        let p = &self.partition;
        let n = p.cells_per_axis;
        if p.dim() == 1 {
            let nearest = nearest_members(&other.members);
            return Ok(self
                .iter()
                .map(|a| p.gap(a, nearest[a]))
                .fold(0.0, f64::max));
        }
        // Row-wise nearest member, then minimise over rows.
        let rows: Vec<Option<Vec<usize>>> = (0..n)
            .map(|j| {
                let row = &other.members[j * n..(j + 1) * n];
                row.iter().any(|m| *m).then(|| nearest_members(row))
            })
            .collect();
        let worst = self
            .indices()
            .par_iter()
            .map(|&a| {
                let [ia, _] = p.split(a);
                rows.iter()
                    .enumerate()
                    .filter_map(|(j, r)| r.as_ref().map(|r| p.gap(a, p.join([r[ia], j]))))
                    .fold(f64::INFINITY, f64::min)
            })
            .reduce(|| 0.0, f64::max);
        Ok(worst)
    }

    /// Symmetric Hausdorff distance built from the two semi-distances.
    pub fn hausdorff(&self, other: &CellSet) -> Result<f64> {
        Ok(self.hausdorff_semi(other)?.max(other.hausdorff_semi(self)?))
    }

    /// Maximal runs of member cells as closed intervals (1-D only).
    pub fn intervals(&self) -> Vec<(f64, f64)> {
        if self.partition.dim() != 1 {
            return Vec::new();
        }
        let mut out: Vec<(f64, f64)> = Vec::new();
        let mut last: Option<usize> = None;
        for c in self.iter() {
            let (lo, hi) = self.partition.cell_bounds(c);
            match (last, out.last_mut()) {
                (Some(prev), Some(run)) if prev + 1 == c => run.1 = hi[0],
                _ => out.push((lo[0], hi[0])),
            }
            last = Some(c);
        }
        out
    }

    /// Whether member indices form one contiguous run (1-D).
    pub fn is_contiguous(&self) -> bool {
        self.intervals().len() <= 1
    }

    /// Write every cell of the partition with its centre and membership flag.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = table::writer(out);
        let dim = self.partition.dim();
        let mut header = vec!["cell_index".to_string()];
        header.extend(
            ["center_x", "center_y"]
                .iter()
                .take(dim)
                .map(|s| s.to_string()),
        );
        header.push("member".into());
        w.write_record(&header)?;
        for idx in 0..self.members.len() {
            let c = self.partition.cell_center(idx);
            let mut row = vec![idx.to_string()];
            row.extend(c.coords().iter().map(|v| table::real(*v)));
            row.push(u8::from(self.members[idx]).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// For each position, the index of the nearest `true` entry (ties to the
/// left). `members` must contain at least one `true`.
fn nearest_members(members: &[bool]) -> Vec<usize> {
    let n = members.len();
    let mut left = vec![usize::MAX; n];
    let mut last = usize::MAX;
    for i in 0..n {
        if members[i] {
            last = i;
        }
        left[i] = last;
    }
    let mut out = vec![0; n];
    let mut next = usize::MAX;
    for i in (0..n).rev() {
        if members[i] {
            next = i;
        }
        out[i] = match (left[i], next) {
            (usize::MAX, r) => r,
            (l, usize::MAX) => l,
            (l, r) => {
                if i - l <= r - i {
                    l
                } else {
                    r
                }
            }
        };
    }
    out
}

/// Cells hit by mapping the sample lattice of every member of `set`.
///
/// In 1-D the hull of the hits of each source cell is filled in: the image
/// of an interval under a homeomorphism is the interval between the images
/// of its endpoints.
pub fn image_hits<F>(set: &CellSet, samples_per_cell: usize, map: F) -> Result<CellSet>
where
    F: Fn(Point) -> Result<Point> + Sync,
{
    if samples_per_cell == 0 {
        return Err(Error::Config("samples_per_cell must be at least 1".into()));
    }
    let p = set.partition();
    let fill = p.dim() == 1;
    let per_cell: Vec<Vec<usize>> = set
        .indices()
        .par_iter()
        .map(|&c| -> Result<Vec<usize>> {
            let mut hits = Vec::new();
            for x in p.sample_lattice(c, samples_per_cell) {
                let y = map(x)?;
                hits.push(p.cell_of(&y));
            }
            if fill {
                let lo = *hits.iter().min().expect("lattice is nonempty");
                let hi = *hits.iter().max().expect("lattice is nonempty");
                Ok((lo..=hi).collect())
            } else {
                Ok(hits)
            }
        })
        .collect::<Result<_>>()?;
    let mut out = CellSet::empty(p);
    for c in per_cell.into_iter().flatten() {
        out.members[c] = true;
    }
    Ok(out)
}

/// Outer approximation of `φ(t, ω)S`: lattice images, dilated by one cell.
pub fn image_under_flow(
    set: &CellSet,
    sys: &CocycleSystem,
    t: f64,
    path: &NoisePath,
    samples_per_cell: usize,
) -> Result<CellSet> {
    Ok(image_hits(set, samples_per_cell, |x| sys.flow(t, path, x))?.dilate(1))
}

/// Fraction of uniformly drawn points of `set` whose image cell is missing
/// from `image`; a value above 0.1% signals under-resolution.
pub fn outer_approximation_violations(
    set: &CellSet,
    image: &CellSet,
    sys: &CocycleSystem,
    t: f64,
    path: &NoisePath,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let cells = set.indices();
    if cells.is_empty() || draws == 0 {
        return Ok(0.0);
    }
    let p = set.partition();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut misses = 0usize;
    for _ in 0..draws {
        let c = cells[rng.random_range(0..cells.len())];
        let (lo, hi) = p.cell_bounds(c);
        let coords: Vec<f64> = (0..p.dim())
            .map(|a| rng.random_range(lo[a]..=hi[a]))
            .collect();
        let y = sys.flow(t, path, Point::from_slice(&coords)?)?;
        if !image.contains_cell(p.cell_of(&y)) {
            misses += 1;
        }
    }
    Ok(misses as f64 / draws as f64)
}

/// Per-realisation family `ω ↦ D(ω)` computed on finitely many seeds.
#[derive(Debug, Clone)]
pub struct RandomSet {
    partition: Arc<Partition>,
    rule: String,
    realizations: BTreeMap<u64, CellSet>,
}

impl RandomSet {
    pub fn new(partition: &Arc<Partition>, rule: impl Into<String>) -> Self {
        Self {
            partition: Arc::clone(partition),
            rule: rule.into(),
            realizations: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, seed: u64, set: CellSet) -> Result<()> {
        if **set.partition() != *self.partition {
            return Err(Error::PartitionMismatch);
        }
        self.realizations.insert(seed, set);
        Ok(())
    }

    pub fn get(&self, seed: u64) -> Result<&CellSet> {
        self.realizations
            .get(&seed)
            .ok_or(Error::MissingRealization(seed))
    }

    pub fn rule(&self) -> &str {
        &self.rule
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        self.realizations.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &CellSet)> {
        self.realizations.iter().map(|(s, c)| (*s, c))
    }

    /// Apply `f` to every realisation.
    pub fn map(
        &self,
        rule: impl Into<String>,
        f: impl Fn(u64, &CellSet) -> Result<CellSet>,
    ) -> Result<RandomSet> {
        let mut out = RandomSet::new(&self.partition, rule);
        for (seed, set) in self.iter() {
            out.insert(seed, f(seed, set)?)?;
        }
        Ok(out)
    }
}

/// How to obtain `D(ω)` for any (possibly shifted) realisation `ω`.
#[derive(Debug, Clone)]
pub enum SetRule {
    /// The same cells for every `ω`.
    Fixed(CellSet),
    /// An invariant random set known on the unshifted realisation of each
    /// seed; other fibres follow from `D(θ_s ω) = φ(s, ω)D(ω)`.
    Invariant(Arc<RandomSet>),
}

impl From<CellSet> for SetRule {
    fn from(set: CellSet) -> Self {
        SetRule::Fixed(set)
    }
}

impl From<RandomSet> for SetRule {
    fn from(set: RandomSet) -> Self {
        SetRule::Invariant(Arc::new(set))
    }
}

impl SetRule {
    pub fn partition(&self) -> &Arc<Partition> {
        match self {
            SetRule::Fixed(s) => s.partition(),
            SetRule::Invariant(r) => r.partition(),
        }
    }

    /// `D(ω)` for the realisation `path` refers to.
    pub fn at(&self, sys: &CocycleSystem, path: &NoisePath) -> Result<CellSet> {
        match self {
            SetRule::Fixed(s) => Ok(s.clone()),
            SetRule::Invariant(r) => {
                let base = r.get(path.seed())?;
                let s = path.offset();
                if s == 0.0 {
                    Ok(base.clone())
                } else {
                    image_under_flow(base, sys, s, &path.unshifted(), DEFAULT_SAMPLES_PER_CELL)
                }
            }
        }
    }

    /// Whether `x ∈ D(ω)`, deciding by closed-cell membership.
    pub fn contains(&self, sys: &CocycleSystem, path: &NoisePath, x: &Point) -> Result<bool> {
        match self {
            SetRule::Fixed(s) => Ok(s.contains_point(x)),
            SetRule::Invariant(r) => {
                let base = r.get(path.seed())?;
                let s = path.offset();
                if s == 0.0 {
                    return Ok(base.contains_point(x));
                }
                let back = sys.flow(-s, path, *x)?;
                Ok(base.contains_point(&back))
            }
        }
    }

    /// The fixed cell set, if this rule does not depend on `ω`.
    pub fn as_fixed(&self) -> Option<&CellSet> {
        match self {
            SetRule::Fixed(s) => Some(s),
            SetRule::Invariant(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::TimeGrid;
    use proptest::prelude::*;

    fn line(n: usize) -> Arc<Partition> {
        Partition::new(StateBox::interval(-1.0, 1.0).unwrap(), n).unwrap()
    }

    fn plane(n: usize) -> Arc<Partition> {
        Partition::new(StateBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(), n).unwrap()
    }

    #[test]
    fn interval_cells_follow_closure_conventions() {
        let p = line(200);
        assert_eq!(
            CellSet::interval(&p, 0.5, 1.0).unwrap().indices(),
            (150..200).collect::<Vec<_>>()
        );
        assert_eq!(
            CellSet::interval(&p, -1.0, -0.5).unwrap().indices(),
            (0..50).collect::<Vec<_>>()
        );
        assert_eq!(
            CellSet::interval(&p, 0.1, 0.2).unwrap().indices(),
            (110..120).collect::<Vec<_>>()
        );
        assert_eq!(
            CellSet::interval(&p, 0.0, 0.0).unwrap().indices(),
            vec![99, 100]
        );
        assert_eq!(
            CellSet::interval(&p, 1.0, 1.0).unwrap().indices(),
            vec![199]
        );
        assert_eq!(
            CellSet::interval(&p, -1.0, -1.0).unwrap().indices(),
            vec![0]
        );
        assert!(CellSet::interval(&p, 1.5, 2.0).unwrap().is_empty());
    }

    #[test]
    fn point_membership_uses_closed_cells() {
        let p = line(200);
        let r = CellSet::interval(&p, -1.0, 0.0).unwrap();
        assert!(r.contains_point(&Point::scalar(0.0)));
        assert!(!r.contains_point(&Point::scalar(0.004)));
        let n = CellSet::interval(&p, 0.5, 1.0).unwrap();
        assert!(n.contains_point(&Point::scalar(0.5)));
        assert!(!n.contains_point(&Point::scalar(0.4999)));
    }

    #[test]
    fn distance_from_point() {
        let p = line(200);
        let s = CellSet::interval(&p, 0.5, 1.0).unwrap();
        let d = s.dist_point(&Point::scalar(0.3)).unwrap();
        assert!((d - 0.2).abs() <= 0.01);
        assert_eq!(s.dist_point(&Point::scalar(0.7)).unwrap(), 0.0);
        let all = CellSet::full(&p);
        for x in [-1.0, -0.33, 0.0, 0.999] {
            assert_eq!(all.dist_point(&Point::scalar(x)).unwrap(), 0.0);
        }
        assert!(matches!(
            CellSet::empty(&p).dist_point(&Point::scalar(0.0)),
            Err(Error::EmptySet(_))
        ));
    }

    #[test]
    fn semi_distance_examples() {
        let p = line(200);
        let a = CellSet::interval(&p, 0.2, 0.6).unwrap();
        assert_eq!(a.hausdorff_semi(&a).unwrap(), 0.0);
        let b = CellSet::interval(&p, 0.0, 0.9).unwrap();
        assert_eq!(a.hausdorff_semi(&b).unwrap(), 0.0);
        let s09 = CellSet::interval(&p, 0.9, 0.9).unwrap();
        let s10 = CellSet::interval(&p, 1.0, 1.0).unwrap();
        let d = s09.hausdorff_semi(&s10).unwrap();
        assert!((d - 0.1).abs() <= 0.01 + 1e-12, "{d}");
        assert_eq!(CellSet::empty(&p).hausdorff_semi(&a).unwrap(), 0.0);
        assert!(a.hausdorff_semi(&CellSet::empty(&p)).is_err());
    }

    #[test]
    fn semi_distance_is_zero_iff_inside_one_cell_dilation() {
        let p = line(50);
        let b = CellSet::from_indices(&p, [10, 11, 30]).unwrap();
        let near = CellSet::from_indices(&p, [9, 12, 31]).unwrap();
        assert_eq!(near.hausdorff_semi(&b).unwrap(), 0.0);
        let far = CellSet::from_indices(&p, [13]).unwrap();
        assert!(far.hausdorff_semi(&b).unwrap() > 0.0);
    }

    #[test]
    fn planar_semi_distance_matches_brute_force() {
        let p = plane(12);
        let a = CellSet::from_indices(&p, [0, 5, 77, 143, 60]).unwrap();
        let b = CellSet::from_indices(&p, [13, 100, 130]).unwrap();
        let brute = a
            .iter()
            .map(|x| b.iter().map(|y| p.gap(x, y)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max);
        assert!((a.hausdorff_semi(&b).unwrap() - brute).abs() < 1e-15);
    }

    #[test]
    fn partitions_must_match() {
        let a = CellSet::full(&line(10));
        let b = CellSet::full(&line(20));
        assert_eq!(a.union(&b), Err(Error::PartitionMismatch));
        assert_eq!(a.hausdorff_semi(&b), Err(Error::PartitionMismatch));
    }

    #[test]
    fn set_algebra_basics() {
        let p = line(40);
        let s = CellSet::from_indices(&p, [3, 4, 5, 20]).unwrap();
        assert_eq!(s.complement().complement(), s);
        assert!(s.intersect(&s.complement()).unwrap().is_empty());
        assert!(s.union(&s.complement()).unwrap().is_full());
        assert_eq!(s.dilate(1).indices(), vec![2, 3, 4, 5, 6, 19, 20, 21]);
        assert_eq!(s.erode(1).indices(), vec![4]);
        assert!(CellSet::full(&p).erode(3).is_full());
        assert_eq!(s.boundary_cells().indices(), vec![3, 5, 20]);
    }

    #[test]
    fn planar_dilation_is_a_square() {
        let p = plane(9);
        let centre = p.join([4, 4]);
        let s = CellSet::from_indices(&p, [centre]).unwrap();
        assert_eq!(s.dilate(1).len(), 9);
        assert_eq!(s.dilate(2).len(), 25);
        assert_eq!(s.dilate(2).erode(2), s);
    }

    #[test]
    fn interval_export() {
        let p = line(10);
        let s = CellSet::from_indices(&p, [0, 1, 2, 6, 7]).unwrap();
        let iv = s.intervals();
        assert_eq!(iv.len(), 2);
        assert!((iv[0].0 + 1.0).abs() < 1e-15 && (iv[0].1 + 0.4).abs() < 1e-12);
        assert!(!s.is_contiguous());
    }

    #[test]
    fn csv_export_lists_every_cell() {
        let p = line(4);
        let s = CellSet::from_indices(&p, [1]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "cell_index,center_x,member");
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("1,-2.5000000000000000e-1,1"));
    }

    #[test]
    fn image_at_time_zero_is_about_one_cell_dilation() {
        let p = line(200);
        let sys = CocycleSystem::exact_double_well();
        let path = NoisePath::zero(TimeGrid::symmetric(10.0, 0.01).unwrap(), 0);
        let s = CellSet::interval(&p, -0.3, 0.1).unwrap();
        let img = image_under_flow(&s, &sys, 0.0, &path, 5).unwrap();
        // Lattice points on a shared edge fall in the upper cell.
        assert!(s.dilate(1).is_subset(&img).unwrap());
        assert!(img.is_subset(&s.dilate(2)).unwrap());
    }

    #[test]
    fn zero_noise_image_of_upper_interval() {
        // Endpoint 1/2 reaches 1/√(1/4 + 3/4 e^{-10}) at t = 5.
        let p = line(200);
        let sys = CocycleSystem::exact_double_well();
        let path = NoisePath::zero(TimeGrid::symmetric(10.0, 0.01).unwrap(), 0);
        let s = CellSet::interval(&p, 0.5, 1.0).unwrap();
        let img = image_under_flow(&s, &sys, 5.0, &path, 5).unwrap();
        let left = 0.5 / (0.25 + 0.75 * (-10f64).exp()).sqrt();
        assert!(left > 0.98);
        let target = CellSet::interval(&p, 0.98, 1.0).unwrap().dilate(1);
        assert!(img.is_subset(&target).unwrap());
        assert!(img.is_contiguous());
    }

    #[test]
    fn image_of_whole_box_under_expansion_is_whole_box() {
        let p = line(200);
        let sys = CocycleSystem::exact_double_well();
        let path = NoisePath::zero(TimeGrid::symmetric(30.0, 0.01).unwrap(), 0);
        let img = image_under_flow(&CellSet::full(&p), &sys, -20.0, &path, 5).unwrap();
        assert!(img.is_full());
    }

    #[test]
    fn planar_images_stay_outer() {
        let f = crate::cocycle::named_field("double-well-2d").unwrap();
        let b = StateBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let sys = CocycleSystem::deterministic(b.clone(), f, 1e-2).unwrap();
        let p = Partition::new(b, 30).unwrap();
        let path = NoisePath::zero(TimeGrid::symmetric(2.0, 0.01).unwrap(), 0);
        let s = CellSet::from_box(&p, &[0.2, -0.5], &[0.6, 0.1]).unwrap();
        let img = image_under_flow(&s, &sys, 0.3, &path, 5).unwrap();
        let miss = outer_approximation_violations(&s, &img, &sys, 0.3, &path, 2000, 1).unwrap();
        assert!(miss < 1e-3, "{miss}");
    }

    #[test]
    fn invariant_rule_transports_along_the_flow() {
        let p = line(200);
        let sys = CocycleSystem::exact_double_well();
        let path = crate::noise::sample_wiener(TimeGrid::symmetric(10.0, 0.01).unwrap(), 7);
        let mut rs = RandomSet::new(&p, "upper fixed point");
        rs.insert(7, CellSet::interval(&p, 1.0, 1.0).unwrap())
            .unwrap();
        let rule = SetRule::from(rs);
        let shifted = path.shift(2.0);
        assert!(rule.contains(&sys, &shifted, &Point::scalar(1.0)).unwrap());
        assert!(!rule.contains(&sys, &shifted, &Point::scalar(0.3)).unwrap());
        let at = rule.at(&sys, &shifted).unwrap();
        assert!(at.contains_cell(199));
        assert!(rule.at(&sys, &path.unshifted().shift(0.0)).is_ok());
        let other = crate::noise::sample_wiener(TimeGrid::symmetric(10.0, 0.01).unwrap(), 8);
        assert_eq!(rule.at(&sys, &other), Err(Error::MissingRealization(8)));
    }

    fn arb_set(n: usize) -> impl Strategy<Value = Vec<bool>> {
        proptest::collection::vec(any::<bool>(), n)
    }

    proptest! {
        #[test]
        fn closing_is_extensive(bits in arb_set(60)) {
            let p = line(60);
            let s = CellSet { partition: p, members: bits };
            prop_assert!(s.is_subset(&s.dilate(1).erode(1)).unwrap());
        }

        #[test]
        fn semi_distance_triangle_bound(a in arb_set(40), b in arb_set(40), c in arb_set(40)) {
            let p = line(40);
            let (a, b, c) = (
                CellSet { partition: p.clone(), members: a },
                CellSet { partition: p.clone(), members: b },
                CellSet { partition: p.clone(), members: c },
            );
            prop_assume!(!b.is_empty() && !c.is_empty());
            let lhs = a.hausdorff_semi(&c).unwrap();
            let rhs = a.hausdorff_semi(&b).unwrap() + b.hausdorff_semi(&c).unwrap() + p.cell_diameter();
            prop_assert!(lhs <= rhs + 1e-12);
        }

        #[test]
        fn planar_triangle_bound(a in arb_set(64), b in arb_set(64), c in arb_set(64)) {
            let p = plane(8);
            let (a, b, c) = (
                CellSet { partition: p.clone(), members: a },
                CellSet { partition: p.clone(), members: b },
                CellSet { partition: p.clone(), members: c },
            );
            prop_assume!(!b.is_empty() && !c.is_empty());
            let lhs = a.hausdorff_semi(&c).unwrap();
            let rhs = a.hausdorff_semi(&b).unwrap() + b.hausdorff_semi(&c).unwrap() + p.cell_diameter();
            prop_assert!(lhs <= rhs + 1e-12);
        }

        #[test]
        fn image_is_monotone_in_the_set(lo in 0usize..100, len in 1usize..60, extra in 0usize..40, t in 0.0f64..3.0, seed in 0u64..20) {
            let p = line(100);
            let sys = CocycleSystem::exact_double_well();
            let path = crate::noise::sample_wiener(TimeGrid::symmetric(4.0, 0.01).unwrap(), seed);
            let hi = (lo + len).min(99);
            let small = CellSet::from_indices(&p, lo..=hi).unwrap();
            let big = CellSet::from_indices(&p, lo.saturating_sub(extra)..=hi).unwrap();
            let a = image_under_flow(&small, &sys, t, &path, 5).unwrap();
            let b = image_under_flow(&big, &sys, t, &path, 5).unwrap();
            prop_assert!(a.is_subset(&b).unwrap());
            prop_assert!(a.is_contiguous());
        }
    }
}
