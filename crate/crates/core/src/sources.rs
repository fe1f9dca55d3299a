//! External sources `f(x, t)` and boundary inputs `g(x, t)`.
//!
//! The central type is [`SourceSpec`]: the `m`-th time derivative of `f` is
//! `a1 f0 + r1` on `(t0, t1)` and `a2 f0 + r2` on `(t1, t2)`, zero before `t0`
//! and after `t2`; `f` itself is recovered by `m`-fold integration with all
//! lower derivatives continuous. Everything is compiled into a
//! [`SeparableField`], a sum of node arrays times time profiles, which is what
//! the forward solver consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CavityShape, Grid, NodeClassification, NodeKind, Patch, Region};
use crate::operators::DiscreteOperator;
use crate::timefn::{PiecewisePoly, Poly, Side, TimeProfile};

/// Spatial profile presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    Zero,
    Constant { value: f64 },
    /// Indicator of a patch.
    Indicator { patch: Patch },
    /// `amplitude * exp(1 - 1/(1 - q))`, `q = |x - c|² / radius²`, zero outside the disc.
    Bump { cx: f64, cy: f64, radius: f64, amplitude: f64 },
    /// `amplitude * sin(2π fx x) sin(2π fy y)`
    HeatMode { fx: f64, fy: f64, amplitude: f64 },
    /// `amplitude * cos(kx x) cos(ky y)`
    Cosine { kx: f64, ky: f64, amplitude: f64 },
    /// Sum of profiles.
    Sum { terms: Vec<Profile> },
}

impl Profile {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Constant { value } => *value,
            Profile::Indicator { patch } => {
                if patch.contains(x, y) {
                    1.0
                } else {
                    0.0
                }
            }
            Profile::Bump { cx, cy, radius, amplitude } => {
                let q = ((x - cx).powi(2) + (y - cy).powi(2)) / (radius * radius);
                if q < 1.0 {
                    amplitude * (1.0 - 1.0 / (1.0 - q)).exp()
                } else {
                    0.0
                }
            }
            Profile::HeatMode { fx, fy, amplitude } => {
                let tau = 2.0 * std::f64::consts::PI;
                amplitude * (tau * fx * x).sin() * (tau * fy * y).sin()
            }
            Profile::Cosine { kx, ky, amplitude } => amplitude * (kx * x).cos() * (ky * y).cos(),
            Profile::Sum { terms } => terms.iter().map(|p| p.eval(x, y)).sum(),
        }
    }

    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        (0..grid.len())
            .map(|k| {
                let (x, y) = grid.coords(k);
                self.eval(x, y)
            })
            .collect()
    }
}

/// `r(x, t) = p(t) * profile(x)` with `p` a polynomial of degree at most 6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Remainder {
    pub coeffs: Vec<f64>,
    pub profile: Profile,
}

pub const MAX_REMAINDER_DEGREE: usize = 6;

/// Source whose `m`-th time derivative jumps at `t1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default)]
    pub m: usize,
    /// `[t0, t1, t2]`
    pub breakpoints: [f64; 3],
    /// `[a1, a2]`
    pub a: [f64; 2],
    pub f0: Profile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1: Option<Remainder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2: Option<Remainder>,
    /// Width of a C-infinity ramp replacing the jump (only for `m = 0`); 0 keeps the jump.
    #[serde(default)]
    pub ramp_width: f64,
}

impl SourceSpec {
    /// On/off source: `f = f0` on `(t0, t1)`, zero afterwards.
    pub fn bang_bang(f0: Profile, t0: f64, t1: f64, t2: f64) -> Self {
        SourceSpec { m: 0, breakpoints: [t0, t1, t2], a: [1.0, 0.0], f0, r1: None, r2: None, ramp_width: 0.0 }
    }

    /// Structural validation; compiles the time factors.
    pub fn validate(&self, grid: &Grid) -> Result<ValidatedSource> {
        let [t0, t1, t2] = self.breakpoints;
        if !(0.0 < t0 && t0 < t1 && t1 < t2) {
            return Err(Error::UnvalidatedSpec("breakpoints must satisfy 0 < t0 < t1 < t2".into()));
        }
        for r in [&self.r1, &self.r2].into_iter().flatten() {
            if Poly(r.coeffs.clone()).degree() > MAX_REMAINDER_DEGREE {
                return Err(Error::UnvalidatedSpec(format!("remainder degree above {MAX_REMAINDER_DEGREE}")));
            }
        }
        if self.ramp_width < 0.0 || (self.ramp_width > 0.0 && self.m != 0) {
            return Err(Error::UnvalidatedSpec("ramp smoothing needs m = 0 and a nonnegative width".into()));
        }
        let f0 = self.f0.sample(grid);
        let jump_zero = self.a[0] == self.a[1] || f0.iter().all(|&v| v == 0.0);
        if jump_zero {
            return Err(Error::UnvalidatedSpec("a1 f0 and a2 f0 coincide; no jump at t1".into()));
        }

        let piecewise = |first: Poly, second: Poly| {
            PiecewisePoly { breaks: vec![t0, t1, t2], pieces: vec![Poly::zero(), first, second, Poly::zero()] }
        };
        let integrate = |mut p: PiecewisePoly| {
            for _ in 0..self.m {
                p = p.integral();
            }
            p
        };
        let main = if self.ramp_width > 0.0 {
            // a1 -> a2 around t1 with a smooth ramp, switched on at t0 and off at t2
            TimeProfile::SmoothSwitch { from: self.a[0], to: self.a[1], center: t1, width: self.ramp_width }
        } else {
            TimeProfile::PiecewisePolynomial(integrate(piecewise(Poly::constant(self.a[0]), Poly::constant(self.a[1]))))
        };
        let r1 = self.r1.as_ref().map(|r| {
            (r.profile.sample(grid), TimeProfile::PiecewisePolynomial(integrate(piecewise(Poly(r.coeffs.clone()), Poly::zero()))))
        });
        let r2 = self.r2.as_ref().map(|r| {
            (r.profile.sample(grid), TimeProfile::PiecewisePolynomial(integrate(piecewise(Poly::zero(), Poly(r.coeffs.clone())))))
        });
        Ok(ValidatedSource { spec: self.clone(), grid: *grid, f0, main, r1, r2 })
    }
}

/// A [`SourceSpec`] that passed structural validation on a given grid.
#[derive(Debug, Clone)]
pub struct ValidatedSource {
    spec: SourceSpec,
    grid: Grid,
    f0: Vec<f64>,
    main: TimeProfile,
    r1: Option<(Vec<f64>, TimeProfile)>,
    r2: Option<(Vec<f64>, TimeProfile)>,
}

impl ValidatedSource {
    pub fn spec(&self) -> &SourceSpec {
        &self.spec
    }

    /// Time factor multiplying `f0` (the `m`-fold integral of the `a1/a2` switch).
    pub fn main_profile(&self) -> &TimeProfile {
        &self.main
    }

    pub fn to_field(&self) -> SeparableField {
        let mut f = SeparableField::new(self.grid.len());
        if let (TimeProfile::SmoothSwitch { .. }, [t0, _, t2]) = (&self.main, self.spec.breakpoints) {
            // the ramp only lives on (t0, t2)
            let window = TimeProfile::PiecewisePolynomial(PiecewisePoly {
                breaks: vec![t0, t2],
                pieces: vec![Poly::zero(), Poly::constant(1.0), Poly::zero()],
            });
            f.push_product(self.f0.clone(), self.main.clone(), window);
        } else {
            f.push(self.f0.clone(), self.main.clone());
        }
        for (p, t) in self.r1.iter().chain(self.r2.iter()) {
            f.push(p.clone(), t.clone());
        }
        f
    }
}

/// Evaluates `f` at one node. Fails with `UnvalidatedSpec` if the spec does not validate.
pub fn eval_source(spec: &SourceSpec, grid: &Grid, node: usize, t: f64) -> Result<f64> {
    let v = spec.validate(grid)?;
    let mut out = vec![0.0; grid.len()];
    v.to_field().fill(t, Side::Left, &mut out);
    Ok(out[node])
}

/// Sum of `nodal_k(x) * time_k(t)` terms over full-grid arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeparableField {
    len: usize,
    terms: Vec<(Vec<f64>, TimeProfile, Option<TimeProfile>)>,
}

impl SeparableField {
    pub fn new(len: usize) -> Self {
        SeparableField { len, terms: Vec::new() }
    }

    pub fn single(values: Vec<f64>, time: TimeProfile) -> Self {
        let mut f = Self::new(values.len());
        f.push(values, time);
        f
    }

    pub fn push(&mut self, values: Vec<f64>, time: TimeProfile) {
        assert_eq!(values.len(), self.len);
        self.terms.push((values, time, None));
    }

    /// Term with time factor `t1(t) * t2(t)`.
    pub fn push_product(&mut self, values: Vec<f64>, t1: TimeProfile, t2: TimeProfile) {
        assert_eq!(values.len(), self.len);
        self.terms.push((values, t1, Some(t2)));
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn spatial_terms(&self) -> impl Iterator<Item = &[f64]> {
        self.terms.iter().map(|(v, _, _)| v.as_slice())
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .terms
            .iter()
            .flat_map(|(_, t, w)| t.breakpoints().into_iter().chain(w.iter().flat_map(|w| w.breakpoints())))
            .collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// Writes the field at time `t` (one-sided limit `side`) into `out`.
    pub fn fill(&self, t: f64, side: Side, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        self.accumulate(t, side, 1.0, out);
    }

    /// `out += scale * field(t)`
    pub fn accumulate(&self, t: f64, side: Side, scale: f64, out: &mut [f64]) {
        for (vals, time, window) in &self.terms {
            let mut s = time.eval(t, side);
            if let Some(w) = window {
                s *= w.eval(t, side);
            }
            let s = s * scale;
            if s == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(vals) {
                *o += s * v;
            }
        }
    }

    pub fn eval_node(&self, node: usize, t: f64, side: Side) -> f64 {
        self.terms
            .iter()
            .map(|(vals, time, window)| {
                let w = window.as_ref().map_or(1.0, |w| w.eval(t, side));
                vals[node] * time.eval(t, side) * w
            })
            .sum()
    }
}

/// Boundary input `g(x, t) = g0(x) μ(t)` on the outer boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryInput {
    pub g0: Profile,
    pub mu: TimeProfile,
    /// Width of the collar supporting the lift.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collar: Option<f64>,
}

impl BoundaryInput {
    /// Full-grid field that is `g0 μ` on outer-boundary nodes and zero elsewhere.
    pub fn to_field(&self, grid: &Grid) -> SeparableField {
        let vals = (0..grid.len())
            .map(|k| {
                let (i, j) = grid.ij(k);
                if grid.on_edge(i, j) {
                    let (x, y) = grid.coords(k);
                    self.g0.eval(x, y)
                } else {
                    0.0
                }
            })
            .collect();
        SeparableField::single(vals, self.mu.clone())
    }
}

/// C¹ cubic cutoff `1 - 3q² + 2q³` on `[0, 1]`, 0 beyond.
pub fn collar_cutoff(q: f64) -> f64 {
    if q <= 0.0 {
        1.0
    } else if q >= 1.0 {
        0.0
    } else {
        1.0 - 3.0 * q * q + 2.0 * q * q * q
    }
}

/// Extension of `g0` supported in a collar of width `collar` along the outer boundary.
pub fn build_lift(g: &BoundaryInput, grid: &Grid, cavities: &[CavityShape]) -> Result<Vec<f64>> {
    let width = g.collar.ok_or_else(|| Error::InvalidRegion("boundary input has no collar width".into()))?;
    if width < 2.0 * grid.h() * (1.0 - 1e-12) {
        return Err(Error::InvalidRegion(format!("collar width {width} below 2h")));
    }
    if cavities.iter().any(|c| c.clearance(grid) <= width) {
        return Err(Error::CollarOverlapsCavity);
    }
    Ok((0..grid.len())
        .map(|k| {
            let (i, j) = grid.ij(k);
            let (x, y) = grid.coords(k);
            if grid.on_edge(i, j) {
                return g.g0.eval(x, y);
            }
            let d = grid.distance_to_boundary(x, y);
            let s = collar_cutoff(d / width);
            if s == 0.0 {
                return 0.0;
            }
            // nearest boundary point
            let dl = x - grid.x_min();
            let (px, py) = if d == dl {
                (grid.x_min(), y)
            } else if d == grid.x_max() - x {
                (grid.x_max(), y)
            } else if d == y - grid.y_min() {
                (x, grid.y_min())
            } else {
                (x, grid.y_max())
            };
            s * g.g0.eval(px, py)
        })
        .collect())
}

/// Source obtained by moving a lifted boundary input to the right-hand side:
/// `-μ'(t) g̃ - μ(t) A g̃`, restricted to fluid nodes.
pub fn lifted_source(g: &BoundaryInput, lift: &[f64], op: &DiscreteOperator) -> Result<SeparableField> {
    let dmu = g
        .mu
        .derivative()
        .ok_or_else(|| Error::UnvalidatedSpec("boundary time profile has no closed-form derivative".into()))?;
    let grid = op.grid();
    let mut a_lift = vec![0.0; grid.len()];
    op.scatter(&op.apply_full(lift), &mut a_lift);
    let mut f = SeparableField::new(grid.len());
    f.push(lift.iter().map(|v| -v).collect(), dmu);
    f.push(a_lift.iter().map(|v| -v).collect(), g.mu.clone());
    Ok(f)
}

/// `f = f0 + t A f0`, whose solution from zero initial data is `u = t f0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeAffineSource {
    pub f0: Vec<f64>,
    pub a_f0: Vec<f64>,
    /// Always set: this source has no jump in any time derivative.
    pub non_uniqueness_demo: bool,
}

impl TimeAffineSource {
    pub fn eval(&self, node: usize, t: f64) -> f64 {
        self.f0[node] + t * self.a_f0[node]
    }

    pub fn to_field(&self) -> SeparableField {
        let mut f = SeparableField::new(self.f0.len());
        f.push(self.f0.clone(), TimeProfile::one());
        f.push(self.a_f0.clone(), TimeProfile::linear());
        f
    }
}

/// True when every node within Chebyshev distance `margin` of a nonzero of
/// `f0` is a fluid node of `cls`.
pub fn support_clear(f0: &[f64], cls: &NodeClassification, margin: usize) -> bool {
    let g = cls.grid();
    let m = margin as isize;
    (0..g.len()).filter(|&k| f0[k] != 0.0).all(|k| {
        let (i, j) = g.ij(k);
        (-m..=m).all(|di| {
            (-m..=m).all(|dj| {
                let (a, b) = (i as isize + di, j as isize + dj);
                a >= 0
                    && b >= 0
                    && (a as usize) < g.nx()
                    && (b as usize) < g.ny()
                    && cls.kind(g.index(a as usize, b as usize)) == NodeKind::Fluid
            })
        })
    })
}

/// Builds `f0 + t A f0` with the discrete operator `op`. `f0` must keep two
/// nodes of clearance from every non-fluid node of each classification in `against`.
pub fn counterexample_source(
    f0: &[f64],
    op: &DiscreteOperator,
    against: &[&NodeClassification],
) -> Result<TimeAffineSource> {
    let grid = op.grid();
    if f0.len() != grid.len() {
        return Err(Error::ShapeMismatch("f0 must be a full-grid array".into()));
    }
    if against.iter().any(|cls| !support_clear(f0, cls, 2)) {
        return Err(Error::SupportTooClose);
    }
    let mut a_f0 = vec![0.0; grid.len()];
    op.scatter(&op.apply_full(f0), &mut a_f0);
    Ok(TimeAffineSource { f0: f0.to_vec(), a_f0, non_uniqueness_demo: true })
}

/// Grid-independent description of the source used by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Source {
    #[default]
    None,
    /// Jump structure in the `m`-th time derivative.
    Jump(SourceSpec),
    /// `f0(x) μ(t)`.
    Separable { f0: Profile, mu: TimeProfile },
    /// `f0 + t A f0`.
    TimeAffine { f0: Profile },
}

impl Source {
    /// Compiles the source on a grid. `op` is needed for the time-affine source.
    pub fn compile(&self, grid: &Grid, op: &DiscreteOperator, against: &[&NodeClassification]) -> Result<SeparableField> {
        match self {
            Source::None => Ok(SeparableField::new(grid.len())),
            Source::Jump(spec) => Ok(spec.validate(grid)?.to_field()),
            Source::Separable { f0, mu } => {
                mu.validate()?;
                Ok(SeparableField::single(f0.sample(grid), mu.clone()))
            }
            Source::TimeAffine { f0 } => Ok(counterexample_source(&f0.sample(grid), op, against)?.to_field()),
        }
    }
}

/// One itemized hypothesis check.
#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HypothesisReport {
    pub clauses: Vec<Clause>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn clause(&self, name: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &'static str, passed: bool, detail: impl Into<String>) {
        self.clauses.push(Clause { name, passed, detail: detail.into() });
    }
}

pub const CLAUSE_REGULARITY: &str = "regularity";
pub const CLAUSE_JUMP: &str = "jump";
pub const CLAUSE_CAVITY_FREE: &str = "vanishes-on-cavities";
pub const CLAUSE_OMEGA_FREE: &str = "vanishes-on-omega";
pub const CLAUSE_LIFT: &str = "lift-vanishes-on-cavities";

fn vanishes_on(values: &[&[f64]], grid: &Grid, inside: impl Fn(f64, f64) -> bool) -> bool {
    (0..grid.len()).all(|k| {
        let (x, y) = grid.coords(k);
        !inside(x, y) || values.iter().all(|v| v[k] == 0.0)
    })
}

/// Context for [`validate_hypotheses`].
pub struct HypothesisContext<'a> {
    pub grid: &'a Grid,
    pub t_final: f64,
    pub cavities: &'a [CavityShape],
    /// Zones where the source must vanish in addition to the cavities.
    pub exclusion: &'a [Region],
    pub omega: Option<&'a Region>,
    /// Discrete operator used for time-affine sources.
    pub op: Option<&'a DiscreteOperator>,
}

/// Itemized check of the regularity, jump and vanishing hypotheses. Report only.
pub fn validate_hypotheses(source: &Source, ctx: &HypothesisContext<'_>) -> HypothesisReport {
    let mut rep = HypothesisReport::default();
    let grid = ctx.grid;
    let (spatial, jump): (Vec<Vec<f64>>, (bool, String)) = match source {
        Source::None => {
            rep.push(CLAUSE_REGULARITY, true, "f = 0");
            (Vec::new(), (false, "f = 0 has no jump".to_string()))
        }
        Source::Jump(spec) => {
            let mut spatial = vec![spec.f0.sample(grid)];
            spatial.extend([&spec.r1, &spec.r2].into_iter().flatten().map(|r| r.profile.sample(grid)));
            let degree_ok = [&spec.r1, &spec.r2]
                .into_iter()
                .flatten()
                .all(|r| Poly(r.coeffs.clone()).degree() <= MAX_REMAINDER_DEGREE);
            rep.push(CLAUSE_REGULARITY, degree_ok, format!("m = {}, polynomial pieces", spec.m));
            let [t0, t1, t2] = spec.breakpoints;
            let ordered = 0.0 < t0 && t0 < t1 && t1 < t2 && t2 <= ctx.t_final * (1.0 + 1e-12);
            let nonzero = spec.a[0] != spec.a[1] && spatial[0].iter().any(|&v| v != 0.0);
            let sharp = spec.ramp_width == 0.0;
            let passed = ordered && nonzero && sharp;
            let detail = if !ordered {
                "breakpoints not in (0, T]".to_string()
            } else if !nonzero {
                "a1 f0 = a2 f0".to_string()
            } else if !sharp {
                format!("jump smoothed over width {}", spec.ramp_width)
            } else {
                format!("order-{} derivative jumps by ({} - {}) f0 at t1 = {t1}", spec.m, spec.a[1], spec.a[0])
            };
            (spatial, (passed, detail))
        }
        Source::Separable { f0, mu } => {
            let spatial = vec![f0.sample(grid)];
            let nonzero = spatial[0].iter().any(|&v| v != 0.0);
            match mu.as_piecewise() {
                Some(p) => {
                    rep.push(CLAUSE_REGULARITY, true, "piecewise polynomial time profile");
                    let j = p.first_discontinuity(0.0, ctx.t_final);
                    let detail = match j {
                        Some((m, t)) => format!("derivative of order {m} jumps at t = {t}"),
                        None => "time profile is smooth on (0, T)".to_string(),
                    };
                    (spatial, (nonzero && j.is_some(), detail))
                }
                None => {
                    rep.push(CLAUSE_REGULARITY, true, "smooth time profile");
                    (spatial, (false, "time profile is not piecewise polynomial with a jump".to_string()))
                }
            }
        }
        Source::TimeAffine { f0 } => {
            let f0 = f0.sample(grid);
            let mut spatial = vec![f0.clone()];
            if let Some(op) = ctx.op {
                let mut af0 = vec![0.0; grid.len()];
                op.scatter(&op.apply_full(&f0), &mut af0);
                spatial.push(af0);
            }
            rep.push(CLAUSE_REGULARITY, true, "affine in time");
            (spatial, (false, "time-affine source: no derivative of f jumps".to_string()))
        }
    };
    rep.push(CLAUSE_JUMP, jump.0, jump.1);

    let views: Vec<&[f64]> = spatial.iter().map(Vec::as_slice).collect();
    let on_cavities = ctx.cavities.iter().all(|c| vanishes_on(&views, grid, |x, y| c.contains_closed(x, y)));
    let on_zones = ctx.exclusion.iter().all(|r| match r {
        Region::InteriorPatch { patch } | Region::ActivationZone { patch } => {
            vanishes_on(&views, grid, |x, y| patch.contains(x, y))
        }
        Region::Subboundary { .. } => true,
    });
    rep.push(
        CLAUSE_CAVITY_FREE,
        on_cavities && on_zones,
        if on_cavities && on_zones { "source vanishes on every candidate cavity" } else { "source is nonzero on a candidate cavity or exclusion zone" },
    );
    if let Some(omega) = ctx.omega {
        let ok = match omega {
            Region::InteriorPatch { patch } | Region::ActivationZone { patch } => {
                vanishes_on(&views, grid, |x, y| patch.contains(x, y))
            }
            Region::Subboundary { .. } => false,
        };
        rep.push(CLAUSE_OMEGA_FREE, ok, if ok { "source vanishes on omega" } else { "source is nonzero on omega" });
    }
    rep
}

/// Adds the lift clause for a boundary-driven design.
pub fn validate_boundary_design(g: &BoundaryInput, grid: &Grid, cavities: &[CavityShape], rep: &mut HypothesisReport) {
    match build_lift(g, grid, cavities) {
        Ok(lift) => {
            let zero = cavities.iter().all(|c| vanishes_on(&[&lift], grid, |x, y| c.contains_closed(x, y)));
            rep.push(CLAUSE_LIFT, zero, "lift supported in the collar");
        }
        Err(e) => rep.push(CLAUSE_LIFT, false, e.to_string()),
    }
    let jump = g.mu.as_piecewise().and_then(|p| p.first_discontinuity(0.0, f64::INFINITY));
    rep.push(
        "boundary-jump",
        jump.is_some(),
        match jump {
            Some((m, t)) => format!("boundary time profile: derivative of order {m} jumps at t = {t}"),
            None => "boundary time profile has no jump".to_string(),
        },
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rasterize;
    use crate::operators::{assemble, EllipticOperator};

    fn grid() -> Grid {
        Grid::square(0.25, 2.0, 1.0 / 16.0).unwrap()
    }

    fn zone() -> Patch {
        Patch::Rect { x0: 1.6, y0: 0.3, x1: 1.9, y1: 1.9 }
    }

    #[test]
    fn bang_bang_switches_off() {
        let g = grid();
        let spec = SourceSpec::bang_bang(Profile::Indicator { patch: zone() }, 0.1, 0.5, 0.9);
        let node = g.node_at(1.75, 1.0).unwrap();
        let outside = g.node_at(1.0, 1.0).unwrap();
        assert_eq!(eval_source(&spec, &g, node, 0.3).unwrap(), 1.0);
        assert_eq!(eval_source(&spec, &g, node, 0.7).unwrap(), 0.0);
        assert_eq!(eval_source(&spec, &g, outside, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn equal_levels_are_rejected() {
        let g = grid();
        let mut spec = SourceSpec::bang_bang(Profile::Indicator { patch: zone() }, 0.1, 0.5, 0.9);
        spec.a = [0.7, 0.7];
        assert!(matches!(eval_source(&spec, &g, 0, 0.3), Err(Error::UnvalidatedSpec(_))));
        let zero = SourceSpec::bang_bang(Profile::Zero, 0.1, 0.5, 0.9);
        assert!(zero.validate(&g).is_err());
    }

    #[test]
    fn first_order_source_is_kinked() {
        let g = grid();
        let (t0, t1, a1, a2) = (0.1, 0.5, 2.0, -3.0);
        let spec = SourceSpec { m: 1, breakpoints: [t0, t1, 0.9], a: [a1, a2], ..SourceSpec::bang_bang(Profile::Constant { value: 1.0 }, t0, t1, 0.9) };
        let node = g.node_at(1.0, 1.0).unwrap();
        for t in [0.2, 0.45] {
            assert!((eval_source(&spec, &g, node, t).unwrap() - a1 * (t - t0)).abs() < 1e-14);
        }
        for t in [0.55, 0.8] {
            let e = a1 * (t1 - t0) + a2 * (t - t1);
            assert!((eval_source(&spec, &g, node, t).unwrap() - e).abs() < 1e-14);
        }
    }

    #[test]
    fn lift_collar_values() {
        let g = grid();
        let bi = BoundaryInput { g0: Profile::Constant { value: 1.0 }, mu: TimeProfile::one(), collar: Some(0.25) };
        let d1 = CavityShape::rectangle(0.75, 0.75, 1.25, 1.25);
        let lift = build_lift(&bi, &g, &[d1.clone()]).unwrap();
        let mid = g.node_at(0.25 + 0.125, 1.0).unwrap();
        assert_eq!(lift[mid], 0.5);
        for k in 0..g.len() {
            let (i, j) = g.ij(k);
            if g.on_edge(i, j) {
                assert_eq!(lift[k], 1.0);
            }
            let (x, y) = g.coords(k);
            if d1.contains_closed(x, y) || g.distance_to_boundary(x, y) >= 0.25 {
                assert_eq!(lift[k], 0.0);
            }
        }
        let big = CavityShape::rectangle(0.5, 0.5, 1.5, 1.5);
        assert_eq!(build_lift(&bi, &g, &[big]), Err(Error::CollarOverlapsCavity));
    }

    #[test]
    fn report_flags_overlap_and_affine_source() {
        let g = grid();
        let d1 = CavityShape::rectangle(0.5, 0.5, 1.0, 1.0);
        let d2 = CavityShape::rectangle(0.5, 0.5, 1.5, 1.5);
        let cav = [d1, d2];
        let ctx = HypothesisContext { grid: &g, t_final: 1.0, cavities: &cav, exclusion: &[], omega: None, op: None };
        let good = Source::Jump(SourceSpec::bang_bang(Profile::Indicator { patch: zone() }, 0.1, 0.5, 0.9));
        assert!(validate_hypotheses(&good, &ctx).all_passed());
        let overlapping = Source::Jump(SourceSpec::bang_bang(
            Profile::Indicator { patch: Patch::Rect { x0: 1.2, y0: 1.2, x1: 1.9, y1: 1.9 } },
            0.1,
            0.5,
            0.9,
        ));
        let rep = validate_hypotheses(&overlapping, &ctx);
        assert!(!rep.clause(CLAUSE_CAVITY_FREE).unwrap().passed);
        assert!(rep.clause(CLAUSE_JUMP).unwrap().passed);
        let affine = Source::TimeAffine { f0: Profile::Bump { cx: 1.75, cy: 1.0, radius: 0.1, amplitude: 1.0 } };
        let rep = validate_hypotheses(&affine, &ctx);
        assert!(!rep.clause(CLAUSE_JUMP).unwrap().passed);
        assert!(rep.clause(CLAUSE_CAVITY_FREE).unwrap().passed);
    }

    #[test]
    fn counterexample_requires_clearance() {
        let g = grid();
        let cls = rasterize(&CavityShape::rectangle(0.5, 0.5, 1.5, 1.5), &g).unwrap();
        let op = assemble(&EllipticOperator::laplacian(), &NodeClassification::without_cavity(&g)).unwrap();
        let near = Profile::Bump { cx: 1.6, cy: 1.0, radius: 0.1, amplitude: 1.0 }.sample(&g);
        assert_eq!(counterexample_source(&near, &op, &[&cls]), Err(Error::SupportTooClose));
        let far = Profile::Bump { cx: 1.78, cy: 1.0, radius: 0.08, amplitude: 1.0 }.sample(&g);
        let src = counterexample_source(&far, &op, &[&cls]).unwrap();
        assert!(src.non_uniqueness_demo);
        for k in 0..g.len() {
            assert_eq!(src.eval(k, 0.0), far[k]);
        }
    }
}
