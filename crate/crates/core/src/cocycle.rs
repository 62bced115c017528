//! Random dynamical systems `φ(t, ω)x` on a compact state box.
//!
//! Three kinds of cocycle are supported:
//!
//! * the closed-form solution of the Stratonovich double-well equation
//!   `dX = (X - X³)dt + (X - X³)∘dW` on `[-1, 1]`, written in the
//!   conjugating coordinate `h(x) = ln(x / √(1 - x²))` where the equation
//!   becomes `dh = dt + dW`;
//! * a Stratonovich SDE with polynomial drift and diffusion, integrated by
//!   the Heun predictor-corrector scheme;
//! * a deterministic polynomial flow (same integrator, no noise).
//!
//! Negative times always go through the inverse identity
//! `φ(-t, θ_t ω) = φ(t, ω)⁻¹`. For the integrated kinds this means solving
//! `φ(t, θ_{-t}ω)x = y` for `x` instead of integrating the noisy equation
//! backwards.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoisePath;

/// Largest supported state dimension.
pub const MAX_DIM: usize = 2;

/// Clamp corrections above this size are logged.
const CLAMP_WARN: f64 = 1e-6;

const BOX_TOL: f64 = 1e-12;

/// A state in a 1- or 2-dimensional box.
#[derive(Clone, Copy, PartialEq)]
pub struct Point {
    coords: [f64; MAX_DIM],
    dim: u8,
}

impl Point {
    pub fn scalar(x: f64) -> Self {
        Self {
            coords: [x, 0.0],
            dim: 1,
        }
    }

    pub fn planar(x: f64, y: f64) -> Self {
        Self {
            coords: [x, y],
            dim: 2,
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [x] => Ok(Self::scalar(*x)),
            [x, y] => Ok(Self::planar(*x, *y)),
            _ => Err(Error::Config(format!(
                "unsupported state dimension {}",
                v.len()
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim()]
    }

    /// First coordinate; the whole state for 1-D systems.
    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    pub fn distance(&self, other: &Point) -> f64 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn zip_with(&self, other: &Point, f: impl Fn(f64, f64) -> f64) -> Point {
        let mut out = *self;
        for i in 0..self.dim() {
            out.coords[i] = f(self.coords[i], other.coords[i]);
        }
        out
    }

    fn axpy(&self, a: f64, v: &Point) -> Point {
        self.zip_with(v, |x, y| x + a * y)
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.coords()).finish()
    }
}

impl std::ops::Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coords()[i]
    }
}

/// Axis-aligned compact state space `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl StateBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() || lower.len() > MAX_DIM {
            return Err(Error::Config(format!(
                "box bounds must both have dimension 1 or 2 (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite())
        {
            return Err(Error::Config(format!(
                "box requires lower < upper, got {lower:?} / {upper:?}"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.dim() == self.dim()
            && (0..self.dim()).all(|i| {
                let tol = BOX_TOL * self.width(i);
                p[i] >= self.lower[i] - tol && p[i] <= self.upper[i] + tol
            })
    }

    /// Project onto the box; returns the projected point and the size of the
    /// correction.
    pub fn clamp(&self, p: Point) -> (Point, f64) {
        let mut out = p;
        let mut moved = 0.0f64;
        for i in 0..self.dim() {
            let c = p.coords[i].clamp(self.lower[i], self.upper[i]);
            moved = moved.max((c - p.coords[i]).abs());
            out.coords[i] = c;
        }
        (out, moved)
    }
}

/// `coef * x^px * y^py`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub powers: [u32; 2],
}

/// Polynomial vector field given component-wise as sums of monomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialField {
    components: Vec<Vec<Monomial>>,
}

impl PolynomialField {
    pub fn new(components: Vec<Vec<Monomial>>) -> Result<Self> {
        if components.is_empty() || components.len() > MAX_DIM {
            return Err(Error::Config(
                "vector field must have 1 or 2 components".into(),
            ));
        }
        if components.len() == 1 && components[0].iter().any(|m| m.powers[1] != 0) {
            return Err(Error::Config(
                "1-D vector field cannot use a second coordinate".into(),
            ));
        }
        Ok(Self { components })
    }

    /// Build a 1-D field from coefficients of `1, x, x², ...`.
    pub fn scalar(coeffs: &[f64]) -> Self {
        let terms = coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(k, &coef)| Monomial {
                coef,
                powers: [k as u32, 0],
            })
            .collect();
        Self {
            components: vec![terms],
        }
    }

    /// Re-run the constructor checks, e.g. after deserialisation.
    pub fn validated(self) -> Result<Self> {
        Self::new(self.components)
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn eval(&self, p: &Point) -> Point {
        let mut out = *p;
        for (i, terms) in self.components.iter().enumerate() {
            out.coords[i] = terms
                .iter()
                .map(|m| {
                    let mut v = m.coef * p.coords[0].powi(m.powers[0] as i32);
                    if m.powers[1] != 0 {
                        v *= p.coords[1].powi(m.powers[1] as i32);
                    }
                    v
                })
                .sum();
        }
        out
    }
}

/// Names accepted by [`named_field`].
pub const FIELD_REGISTRY: &[&str] = &[
    "double-well",
    "double-well-2d",
    "saddle-2d",
    "zero",
    "zero-2d",
];

/// Registry of polynomial vector fields by name.
pub fn named_field(name: &str) -> Option<PolynomialField> {
    let m = |coef, px, py| Monomial {
        coef,
        powers: [px, py],
    };
    let components = match name {
        "double-well" => vec![vec![m(1.0, 1, 0), m(-1.0, 3, 0)]],
        "double-well-2d" => vec![
            vec![m(1.0, 1, 0), m(-1.0, 3, 0)],
            vec![m(1.0, 0, 1), m(-1.0, 0, 3)],
        ],
        "saddle-2d" => vec![vec![m(1.0, 1, 0), m(-1.0, 3, 0)], vec![m(-1.0, 0, 1)]],
        "zero" => vec![vec![]],
        "zero-2d" => vec![vec![], vec![]],
        _ => return None,
    };
    Some(PolynomialField { components })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SystemKind {
    /// Closed-form solution of the double-well Stratonovich equation.
    ExactDoubleWell,
    /// `dX = drift(X)dt + diffusion(X)∘dW` with scalar `W`.
    StratonovichSde {
        drift: PolynomialField,
        diffusion: PolynomialField,
        step: f64,
    },
    /// `dX/dt = field(X)`, ignoring the noise path.
    DeterministicFlow { field: PolynomialField, step: f64 },
}

/// An evaluatable random dynamical system over a compact box.
#[derive(Debug, Clone, PartialEq)]
pub struct CocycleSystem {
    state_box: StateBox,
    kind: SystemKind,
}

impl CocycleSystem {
    pub fn exact_double_well() -> Self {
        Self {
            state_box: StateBox::interval(-1.0, 1.0).expect("static box"),
            kind: SystemKind::ExactDoubleWell,
        }
    }

    pub fn stratonovich(
        state_box: StateBox,
        drift: PolynomialField,
        diffusion: PolynomialField,
        step: f64,
    ) -> Result<Self> {
        check_step(step)?;
        for f in [&drift, &diffusion] {
            if f.dim() != state_box.dim() {
                return Err(Error::Config(format!(
                    "vector field dimension {} does not match box dimension {}",
                    f.dim(),
                    state_box.dim()
                )));
            }
        }
        Ok(Self {
            state_box,
            kind: SystemKind::StratonovichSde {
                drift,
                diffusion,
                step,
            },
        })
    }

    pub fn deterministic(state_box: StateBox, field: PolynomialField, step: f64) -> Result<Self> {
        check_step(step)?;
        if field.dim() != state_box.dim() {
            return Err(Error::Config(
                "vector field dimension does not match box".into(),
            ));
        }
        Ok(Self {
            state_box,
            kind: SystemKind::DeterministicFlow { field, step },
        })
    }

    /// The double-well equation integrated numerically with step `h`.
    pub fn double_well_sde(step: f64) -> Result<Self> {
        let f = named_field("double-well").expect("registered");
        Self::stratonovich(StateBox::interval(-1.0, 1.0)?, f.clone(), f, step)
    }

    pub fn state_box(&self) -> &StateBox {
        &self.state_box
    }

    pub fn kind(&self) -> &SystemKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.state_box.dim()
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.kind, SystemKind::ExactDoubleWell)
    }

    /// `φ(t, ω)x` where `ω` is `path`.
    pub fn flow(&self, t: f64, path: &NoisePath, x: Point) -> Result<Point> {
        self.flow_clamped(t, path, x).map(|(p, _)| p)
    }

    /// Like [`flow`](Self::flow) but also returns how far the raw result had
    /// to be moved back into the box.
    pub fn flow_clamped(&self, t: f64, path: &NoisePath, x: Point) -> Result<(Point, f64)> {
        self.check_state(&x)?;
        if t == 0.0 {
            return Ok((x, 0.0));
        }
        let raw = match &self.kind {
            SystemKind::ExactDoubleWell => {
                let w = path.evaluate(t)?;
                Point::scalar(double_well(x.x(), t + w))
            }
            _ if t > 0.0 => self.integrate(path, x, t)?,
            _ => self.invert_integrated(path.shift(t), -t, x)?,
        };
        let (p, moved) = self.state_box.clamp(raw);
        if moved > CLAMP_WARN {
            log::warn!("flow left the state box by {moved:e}; clamped");
        }
        Ok((p, moved))
    }

    /// `φ(t, ω)⁻¹ y = φ(-t, θ_t ω) y`.
    pub fn inverse_flow(&self, t: f64, path: &NoisePath, y: Point) -> Result<Point> {
        if t == 0.0 {
            self.check_state(&y)?;
            return Ok(y);
        }
        self.flow(-t, &path.shift(t), y)
    }

    /// Distance between `φ(t+s, ω)x` and `φ(t, θ_s ω)φ(s, ω)x`.
    pub fn cocycle_residual(&self, t: f64, s: f64, path: &NoisePath, x: Point) -> Result<f64> {
        let direct = self.flow(t + s, path, x)?;
        let mid = self.flow(s, path, x)?;
        let composed = self.flow(t, &path.shift(s), mid)?;
        Ok(direct.distance(&composed))
    }

    /// Follow the orbit of `x` forward in time, starting at `t0`.
    pub fn trajectory<'a>(
        &'a self,
        path: &'a NoisePath,
        x: Point,
        t0: f64,
    ) -> Result<Trajectory<'a>> {
        let state = self.flow(t0, path, x)?;
        Ok(Trajectory {
            sys: self,
            path,
            origin: x,
            time: t0,
            state,
        })
    }

    fn check_state(&self, x: &Point) -> Result<()> {
        if self.state_box.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                point: x.coords().to_vec(),
            })
        }
    }

    fn vector_fields(&self) -> (&PolynomialField, Option<&PolynomialField>, f64) {
        match &self.kind {
            SystemKind::StratonovichSde {
                drift,
                diffusion,
                step,
            } => (drift, Some(diffusion), *step),
            SystemKind::DeterministicFlow { field, step } => (field, None, *step),
            SystemKind::ExactDoubleWell => unreachable!("closed-form kind is not integrated"),
        }
    }

    /// Heun integration over `[0, t]`, `t > 0`. Segments are split at the
    /// noise nodes so that the driving path is affine on every sub-step.
    fn integrate(&self, path: &NoisePath, x: Point, t: f64) -> Result<Point> {
        path.check_window(0.0, t)?;
        let (drift, diffusion, h) = self.vector_fields();
        let mut breaks: Vec<f64> = match diffusion {
            Some(_) => path.nodes_between(0.0, t).collect(),
            None => Vec::new(),
        };
        breaks.push(t);

        let mut state = x;
        let mut a = 0.0;
        let mut wa = path.evaluate(0.0)?;
        for b in breaks {
            let span = b - a;
            let n = (span / h).ceil().max(1.0) as usize;
            let wb = match diffusion {
                Some(_) => path.evaluate(b)?,
                None => 0.0,
            };
            let dt = span / n as f64;
            let dw = (wb - wa) / n as f64;
            for _ in 0..n {
                state = heun_step(drift, diffusion, state, dt, dw);
            }
            a = b;
            wa = wb;
        }
        Ok(state)
    }

    /// Heun integration of the reversed equation from `t` down to 0; used as
    /// the starting guess when inverting the forward map.
    fn integrate_backward(&self, path: &NoisePath, y: Point, t: f64) -> Result<Point> {
        let (drift, diffusion, h) = self.vector_fields();
        let mut breaks: Vec<f64> = match diffusion {
            Some(_) => path.nodes_between(0.0, t).collect(),
            None => Vec::new(),
        };
        breaks.reverse();
        breaks.push(0.0);
        let mut state = y;
        let mut b = t;
        let mut wb = if diffusion.is_some() {
            path.evaluate(t)?
        } else {
            0.0
        };
        for a in breaks {
            let span = b - a;
            let n = (span / h).ceil().max(1.0) as usize;
            let wa = if diffusion.is_some() {
                path.evaluate(a)?
            } else {
                0.0
            };
            let dt = span / n as f64;
            let dw = (wb - wa) / n as f64;
            for _ in 0..n {
                state = heun_step(drift, diffusion, state, -dt, -dw);
            }
            b = a;
            wb = wa;
        }
        Ok(self.state_box.clamp(state).0)
    }

    /// Solve `φ(t, q)x = y` for `x` (`t > 0`): backward-integrated guess,
    /// then Newton on the forward map with a bisection fallback in 1-D.
    fn invert_integrated(&self, q: NoisePath, t: f64, y: Point) -> Result<Point> {
        q.check_window(0.0, t)?;
        let guess = self.integrate_backward(&q, y, t)?;
        let forward = |x: Point| -> Result<Point> {
            let x = self.state_box.clamp(x).0;
            self.integrate(&q, x, t)
        };
        let scale = (0..self.dim())
            .map(|i| self.state_box.width(i))
            .fold(0.0, f64::max);
        let tol = 1e-13 * scale;

        let mut x = guess;
        let mut best = (f64::INFINITY, x);
        for _ in 0..30 {
            let fx = forward(x)?;
            let r = fx.distance(&y);
            if r < best.0 {
                best = (r, x);
            }
            if r <= tol {
                return Ok(x);
            }
            let Some(next) = self.newton_update(&forward, x, fx, y, scale)? else {
                break;
            };
            x = self.state_box.clamp(next).0;
        }
        if self.dim() == 1 {
            return self.bisect_inverse(&forward, y, best, tol);
        }
        if best.0 <= 1e-8 * scale {
            Ok(best.1)
        } else {
            Err(Error::InverseDiverged { residual: best.0 })
        }
    }

    fn newton_update(
        &self,
        forward: &impl Fn(Point) -> Result<Point>,
        x: Point,
        fx: Point,
        y: Point,
        scale: f64,
    ) -> Result<Option<Point>> {
        let eps = 1e-7 * scale;
        let dim = self.dim();
        let mut jac = [[0.0; MAX_DIM]; MAX_DIM];
        for j in 0..dim {
            let mut xp = x;
            let room_up = self.state_box.upper[j] - x.coords[j];
            let e = if room_up > eps { eps } else { -eps };
            xp.coords[j] += e;
            let fp = forward(xp)?;
            for i in 0..dim {
                jac[i][j] = (fp.coords[i] - fx.coords[i]) / e;
            }
        }
        let r: Vec<f64> = (0..dim).map(|i| y.coords[i] - fx.coords[i]).collect();
        let delta = if dim == 1 {
            if jac[0][0].abs() < 1e-300 {
                return Ok(None);
            }
            [r[0] / jac[0][0], 0.0]
        } else {
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if det.abs() < 1e-300 {
                return Ok(None);
            }
            [
                (jac[1][1] * r[0] - jac[0][1] * r[1]) / det,
                (jac[0][0] * r[1] - jac[1][0] * r[0]) / det,
            ]
        };
        let mut next = x;
        next.coords[0] += delta[0];
        next.coords[1] += delta[1];
        Ok(Some(next))
    }

    /// 1-D maps generated by a flow are increasing, so bisection over the
    /// box always brackets the preimage.
    fn bisect_inverse(
        &self,
        forward: &impl Fn(Point) -> Result<Point>,
        y: Point,
        best: (f64, Point),
        tol: f64,
    ) -> Result<Point> {
        let mut lo = self.state_box.lower[0];
        let mut hi = self.state_box.upper[0];
        let mut best = best;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let fm = forward(Point::scalar(mid))?;
            let r = (fm.x() - y.x()).abs();
            if r < best.0 {
                best = (r, Point::scalar(mid));
            }
            if r <= tol {
                break;
            }
            if fm.x() < y.x() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(best.1)
    }
}

fn check_step(step: f64) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "integrator step must be positive, got {step}"
        )))
    }
}

/// One Stratonovich Heun step: Euler predictor, trapezoidal corrector with
/// the same noise increment.
fn heun_step(
    drift: &PolynomialField,
    diffusion: Option<&PolynomialField>,
    x: Point,
    dt: f64,
    dw: f64,
) -> Point {
    let f0 = drift.eval(&x);
    let mut pred = x.axpy(dt, &f0);
    let g0 = diffusion.map(|g| g.eval(&x));
    if let Some(g0) = &g0 {
        pred = pred.axpy(dw, g0);
    }
    let f1 = drift.eval(&pred);
    let mut next = x.axpy(0.5 * dt, &f0).axpy(0.5 * dt, &f1);
    if let (Some(g), Some(g0)) = (diffusion, &g0) {
        let g1 = g.eval(&pred);
        next = next.axpy(0.5 * dw, g0).axpy(0.5 * dw, &g1);
    }
    next
}

/// Closed-form double-well cocycle with `u = t + W_t`:
/// `x e^u / √(1 - x² + x² e^{2u})`.
///
/// For `u ≥ 0` the expression is divided through by `e^u` so that nothing
/// overflows; when even that underflows it is evaluated in logarithms.
pub fn double_well(x: f64, u: f64) -> f64 {
    if x == 0.0 || x.abs() == 1.0 {
        return x;
    }
    let x2 = x * x;
    // Factored so that states close to ±1 keep their distance to the wall.
    let q = (1.0 - x) * (1.0 + x);
    if u >= 0.0 {
        let d = x2 + q * (-2.0 * u).exp();
        if d > f64::MIN_POSITIVE {
            return x / d.sqrt();
        }
        let log_ratio = q.ln() - 2.0 * x.abs().ln() - 2.0 * u;
        x.signum() / (1.0 + log_ratio.exp()).sqrt()
    } else {
        x * u.exp() / (q + x2 * (2.0 * u).exp()).sqrt()
    }
}

/// Stepper along a forward orbit. The closed-form kind evaluates every time
/// directly from the initial state; integrated kinds advance via the cocycle
/// property `φ(t, ω) = φ(t - s, θ_s ω) ∘ φ(s, ω)`.
pub struct Trajectory<'a> {
    sys: &'a CocycleSystem,
    path: &'a NoisePath,
    origin: Point,
    time: f64,
    state: Point,
}

impl Trajectory<'_> {
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn state(&self) -> Point {
        self.state
    }

    pub fn advance_to(&mut self, t: f64) -> Result<Point> {
        if t == self.time {
            return Ok(self.state);
        }
        self.state = if self.sys.is_exact() || t < self.time {
            self.sys.flow(t, self.path, self.origin)?
        } else {
            self.sys
                .flow(t - self.time, &self.path.shift(self.time), self.state)?
        };
        self.time = t;
        Ok(self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_wiener, TimeGrid};

    fn zero_path() -> NoisePath {
        NoisePath::zero(TimeGrid::symmetric(10.0, 0.01).unwrap(), 0)
    }

    #[test]
    fn fixed_points_of_the_double_well() {
        let sys = CocycleSystem::exact_double_well();
        for seed in 0..5 {
            let p = sample_wiener(TimeGrid::symmetric(10.0, 0.01).unwrap(), seed);
            for t in [-7.0, -1.0, 0.5, 9.0] {
                for x in [-1.0, 0.0, 1.0] {
                    assert_eq!(sys.flow(t, &p, Point::scalar(x)).unwrap().x(), x);
                }
            }
        }
    }

    #[test]
    fn zero_noise_reaches_one_half() {
        // φ(t)0.1 = 1/2 at e^{2t} = (1 - 0.01)/(3 * 0.01) = 33.
        let sys = CocycleSystem::exact_double_well();
        let t = 0.5 * 33f64.ln();
        let y = sys.flow(t, &zero_path(), Point::scalar(0.1)).unwrap();
        assert!((y.x() - 0.5).abs() <= 1e-10);
        let back = sys
            .inverse_flow(t, &zero_path(), Point::scalar(0.5))
            .unwrap();
        assert!((back.x() - 0.1).abs() <= 1e-9);
    }

    #[test]
    fn bisection_oracle_agrees_with_closed_form_root() {
        let sys = CocycleSystem::exact_double_well();
        let p = zero_path();
        let (mut lo, mut hi) = (0.0, 5.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if sys.flow(mid, &p, Point::scalar(0.1)).unwrap().x() < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((hi - 0.5 * 33f64.ln()).abs() < 1e-10);
        assert!((0.5 * 33f64.ln() - 1.748254).abs() < 1e-6);
    }

    #[test]
    fn overflow_guard_keeps_long_pullbacks_finite() {
        for x in [-0.999, -1e-12, 1e-200, 0.3] {
            let y = double_well(x, 400.0);
            assert!(y.is_finite());
            assert!((y.abs() - 1.0).abs() < 1e-12 || x.abs() < 1e-100);
            assert!(double_well(x, -400.0).abs() < 1e-100);
        }
    }

    #[test]
    fn closed_form_is_odd_and_monotone() {
        let xs: Vec<f64> = (0..=40).map(|i| -1.0 + i as f64 * 0.05).collect();
        for u in [-3.0, -0.2, 0.0, 0.7, 12.0] {
            for w in xs.windows(2) {
                assert!(double_well(w[0], u) <= double_well(w[1], u));
            }
            for &x in &xs {
                assert_eq!(double_well(-x, u), -double_well(x, u));
            }
        }
    }

    #[test]
    fn rejects_points_outside_box() {
        let sys = CocycleSystem::exact_double_well();
        assert!(matches!(
            sys.flow(1.0, &zero_path(), Point::scalar(1.5)),
            Err(Error::Domain { .. })
        ));
        assert!(matches!(
            sys.flow(11.0, &zero_path(), Point::scalar(0.5)),
            Err(Error::OutOfHorizon { .. })
        ));
    }

    #[test]
    fn identity_at_time_zero() {
        let sys = CocycleSystem::double_well_sde(1e-3).unwrap();
        let p = sample_wiener(TimeGrid::symmetric(2.0, 0.01).unwrap(), 4);
        for x in [-0.7, 0.2, 0.99] {
            let y = sys.flow(0.0, &p, Point::scalar(x)).unwrap();
            assert!((y.x() - x).abs() <= 1e-12);
        }
    }

    #[test]
    fn sde_inverse_round_trip() {
        let sys = CocycleSystem::double_well_sde(1e-3).unwrap();
        let p = sample_wiener(TimeGrid::symmetric(3.0, 0.01).unwrap(), 8);
        for x in [-0.6, -0.1, 0.3, 0.8] {
            let y = sys.flow(1.3, &p, Point::scalar(x)).unwrap();
            let back = sys.inverse_flow(1.3, &p, y).unwrap();
            assert!((back.x() - x).abs() < 1e-7, "{x} -> {y:?} -> {back:?}");
        }
    }

    #[test]
    fn planar_sde_inverse_round_trip() {
        let f = named_field("double-well-2d").unwrap();
        let b = StateBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let sys = CocycleSystem::stratonovich(b, f.clone(), f, 2e-3).unwrap();
        let p = sample_wiener(TimeGrid::symmetric(2.0, 0.01).unwrap(), 2);
        let x = Point::planar(0.3, -0.4);
        let y = sys.flow(0.8, &p, x).unwrap();
        let back = sys.inverse_flow(0.8, &p, y).unwrap();
        assert!(back.distance(&x) < 1e-7);
    }

    #[test]
    fn deterministic_flow_ignores_noise() {
        let f = named_field("double-well").unwrap();
        let sys =
            CocycleSystem::deterministic(StateBox::interval(-1.0, 1.0).unwrap(), f, 1e-3).unwrap();
        let exact = CocycleSystem::exact_double_well();
        let noisy = sample_wiener(TimeGrid::symmetric(3.0, 0.01).unwrap(), 1);
        let y = sys.flow(2.0, &noisy, Point::scalar(0.2)).unwrap();
        let z = exact.flow(2.0, &zero_path(), Point::scalar(0.2)).unwrap();
        assert!((y.x() - z.x()).abs() < 1e-6);
    }

    #[test]
    fn trajectory_matches_direct_flow() {
        let sys = CocycleSystem::double_well_sde(1e-3).unwrap();
        let p = sample_wiener(TimeGrid::symmetric(3.0, 0.01).unwrap(), 6);
        let mut traj = sys.trajectory(&p, Point::scalar(0.2), 0.0).unwrap();
        let stepped = [0.5, 1.0, 1.5, 2.0].map(|t| traj.advance_to(t).unwrap());
        let direct = sys.flow(2.0, &p, Point::scalar(0.2)).unwrap();
        assert!((stepped[3].x() - direct.x()).abs() < 1e-6);
    }

    #[test]
    fn registry_covers_names() {
        for name in FIELD_REGISTRY {
            assert!(named_field(name).is_some());
        }
        assert!(named_field("lorenz").is_none());
    }

    #[test]
    fn polynomial_evaluation() {
        let f = PolynomialField::scalar(&[0.0, 1.0, 0.0, -1.0]);
        assert_eq!(f.eval(&Point::scalar(0.5)).x(), 0.5 - 0.125);
        assert_eq!(f, named_field("double-well").unwrap());
        let g = named_field("saddle-2d").unwrap();
        let v = g.eval(&Point::planar(0.5, 0.4));
        assert_eq!(v.coords(), &[0.375, -0.4]);
    }
}
