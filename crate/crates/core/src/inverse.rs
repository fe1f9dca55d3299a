//! Distinguishability studies and least-squares shape reconstruction.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::forward::{ForwardProblem, Stepper, TimeGrid};
use crate::geometry::{rasterize, shape_from_params, CavityShape, Grid, NodeClassification, NodeKind, Parameterization, Region};
use crate::observe::{self, Observation, ObservationKind, Observer, Weights};
use crate::operators::{assemble_with, bump_bank, commutator_norm, edge_flux_field, CavityCondition, EllipticOperator, OuterCondition};
use crate::sources::{BoundaryInput, Profile, SeparableField, Source};

/// Everything a forward solve needs except the cavity, the operator and the initial data.
#[derive(Debug, Clone)]
pub struct Design {
    pub grid: Grid,
    pub source: Source,
    /// Dirichlet data on `∂Ω`.
    pub boundary: Option<BoundaryInput>,
    /// Outward conormal flux on `∂Ω`; switches the outer closure to Neumann.
    pub flux: Option<BoundaryInput>,
    pub cavity_bc: CavityCondition,
    pub time: TimeGrid,
    pub kind: ObservationKind,
    pub region: Region,
    pub region_name: String,
    /// Observations before this time are discarded.
    pub window_start: f64,
    pub weights: Weights,
    /// Classifications the source support must keep clear of (time-affine sources).
    pub candidates: Vec<CavityShape>,
}

/// One side of a comparison.
#[derive(Debug, Clone)]
pub struct Arm {
    pub shape: Option<CavityShape>,
    pub op: EllipticOperator,
    pub u0: Profile,
}

/// Observation of one forward solve, with the largest field magnitude seen.
#[derive(Debug, Clone)]
pub struct Observed {
    pub obs: Observation,
    pub field_scale: f64,
}

fn classify(shape: Option<&CavityShape>, grid: &Grid) -> Result<NodeClassification> {
    match shape {
        Some(s) => rasterize(s, grid),
        None => Ok(NodeClassification::without_cavity(grid)),
    }
}

impl Design {
    /// Same design on another grid.
    pub fn on_grid(&self, grid: Grid) -> Design {
        Design { grid, ..self.clone() }
    }

    /// Builds the forward problem for one cavity classification.
    pub fn problem(&self, cls: &NodeClassification, op: &EllipticOperator, u0: &[f64]) -> Result<ForwardProblem> {
        let grid = cls.grid();
        let outer = if self.flux.is_some() { OuterCondition::Neumann } else { OuterCondition::Dirichlet };
        let cavity_bc = if self.flux.is_some() { CavityCondition::Dirichlet } else { self.cavity_bc.clone() };
        let d = assemble_with(op, cls, outer, &cavity_bc)?;
        let against = self
            .candidates
            .iter()
            .map(|c| rasterize(c, grid))
            .collect::<Result<Vec<_>>>()?;
        let mut refs: Vec<&NodeClassification> = against.iter().collect();
        refs.push(cls);
        let source = self.source.compile(grid, &d, &refs)?;
        let mut p = ForwardProblem::new(d, cls, u0.to_vec()).with_source(source);
        if let Some(g) = &self.boundary {
            p = p.with_boundary(g.to_field(grid));
        }
        if let Some(q) = &self.flux {
            let values = edge_flux_field(grid, |x, y, _| q.g0.eval(x, y));
            p = p.with_flux(SeparableField::single(values, q.mu.clone()));
        }
        Ok(p)
    }

    /// Initial field sampled on the grid and zeroed on cavity nodes.
    pub fn initial(&self, cls: &NodeClassification, u0: &Profile) -> Vec<f64> {
        let mut v = u0.sample(cls.grid());
        for (k, x) in v.iter_mut().enumerate() {
            if cls.kind(k).is_cavity() {
                *x = 0.0;
            }
        }
        v
    }

    /// Runs one solve with initial data `u0` and records the windowed observation.
    pub fn observe_with(&self, cls: &NodeClassification, op: &EllipticOperator, u0: &[f64]) -> Result<Observed> {
        let problem = self.problem(cls, op, u0)?;
        let observer = Observer::new(self.kind, &self.region, &self.region_name, op, cls.grid(), cls.kinds())?;
        let mut rec = observer.recorder(self.window_start);
        let mut scale = 0.0f64;
        Stepper::new(&problem, &self.time)?.run_with(|_, t, u| {
            scale = u.iter().fold(scale, |m, v| m.max(v.abs()));
            rec.record(t, u);
        })?;
        Ok(Observed { obs: rec.finish(), field_scale: scale })
    }

    pub fn observe(&self, arm: &Arm) -> Result<Observed> {
        let cls = classify(arm.shape.as_ref(), &self.grid)?;
        let u0 = self.initial(&cls, &arm.u0);
        self.observe_with(&cls, &arm.op, &u0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Distinguishable,
    Indistinguishable,
    Inconclusive,
}

impl Verdict {
    pub const DISTINGUISHABLE_ABOVE: f64 = 10.0;
    pub const INDISTINGUISHABLE_AT_MOST: f64 = 3.0;

    pub fn from_ratio(ratio: f64) -> Self {
        if ratio > Self::DISTINGUISHABLE_ABOVE {
            Verdict::Distinguishable
        } else if ratio <= Self::INDISTINGUISHABLE_AT_MOST {
            Verdict::Indistinguishable
        } else {
            Verdict::Inconclusive
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Distinguishable => "DISTINGUISHABLE",
            Verdict::Indistinguishable => "INDISTINGUISHABLE",
            Verdict::Inconclusive => "INCONCLUSIVE",
        }
    }
}

/// Relative size below which observation differences count as round-off.
pub const ROUNDOFF_LEVEL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Distinguishability {
    /// Misfit between the two arms at spacing `h`.
    pub gap: f64,
    /// Misfit between the first arm at `h` and at `h/2`.
    pub floor: f64,
    /// Misfit of a uniform difference of `ROUNDOFF_LEVEL` times the field scale.
    pub guard: f64,
    pub ratio: f64,
    pub verdict: Verdict,
    pub first: Observation,
    pub second: Observation,
    /// Present for two-operator comparisons.
    pub commutator: Option<f64>,
}

fn total_weight(obs: &Observation, weights: Weights) -> f64 {
    let ones = Observation { values: vec![1.0; obs.values.len()], ..obs.clone() };
    2.0 * observe::energy(&ones, weights)
}

/// Gap between two arms, discretization floor of the first arm, and their ratio.
pub fn compare(design: &Design, first: &Arm, second: &Arm, exec: Execution) -> Result<Distinguishability> {
    let fine = design.on_grid(design.grid.refined());
    let jobs: [(&Design, &Arm); 3] = [(design, first), (design, second), (&fine, first)];
    let mut runs = exec.map(&jobs, |(d, a)| d.observe(a)).into_iter();
    let (a, b, f) = (runs.next().unwrap()?, runs.next().unwrap()?, runs.next().unwrap()?);
    let gap = observe::misfit(&a.obs, &b.obs, design.weights)?;
    let floor = observe::misfit(&a.obs, &f.obs.restrict_to(&a.obs)?, design.weights)?;
    let scale = a.field_scale.max(b.field_scale);
    let guard = 0.5 * total_weight(&a.obs, design.weights) * (ROUNDOFF_LEVEL * scale).powi(2);
    let denom = floor.max(guard);
    let ratio = if gap == 0.0 { 0.0 } else if denom > 0.0 { gap / denom } else { f64::INFINITY };
    Ok(Distinguishability {
        gap,
        floor,
        guard,
        ratio,
        verdict: Verdict::from_ratio(ratio),
        first: a.obs,
        second: b.obs,
        commutator: None,
    })
}

/// Same operator and initial data for both cavities (or different initial data
/// when `u0_second` is given).
pub fn distinguishability(
    design: &Design,
    d1: &CavityShape,
    d2: &CavityShape,
    op: &EllipticOperator,
    u0: &Profile,
    u0_second: Option<&Profile>,
    exec: Execution,
) -> Result<Distinguishability> {
    let a = Arm { shape: Some(d1.clone()), op: op.clone(), u0: u0.clone() };
    let b = Arm { shape: Some(d2.clone()), op: op.clone(), u0: u0_second.unwrap_or(u0).clone() };
    compare(design, &a, &b, exec)
}

/// Two operators, interior observations; also reports the commutator norm.
#[allow(clippy::too_many_arguments)]
pub fn q2_distinguishability(
    design: &Design,
    d1: &CavityShape,
    d2: &CavityShape,
    op1: &EllipticOperator,
    op2: &EllipticOperator,
    u0: &Profile,
    seed: u64,
    exec: Execution,
) -> Result<Distinguishability> {
    if design.kind != ObservationKind::InteriorOnOmega {
        return Err(Error::RegionKindMismatch("the two-operator comparison uses interior observations".into()));
    }
    let bank = bump_bank(&design.grid, 8, seed, 3);
    let comm = commutator_norm(op1, op2, &design.grid, &bank)?;
    let a = Arm { shape: Some(d1.clone()), op: op1.clone(), u0: u0.clone() };
    let b = Arm { shape: Some(d2.clone()), op: op2.clone(), u0: u0.clone() };
    let mut out = compare(design, &a, &b, exec)?;
    out.commutator = Some(comm);
    Ok(out)
}

/// How the unknown initial data enter the reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialPolicy {
    /// `u0 = 0` in every solve; only data after the window start are fitted.
    #[default]
    Windowed,
    /// `u0` on a 4 x 4 bilinear hat basis, fitted by linear least squares per shape.
    Joint,
}

fn default_starts() -> usize {
    4
}
fn default_max_evals() -> usize {
    400
}
fn default_xtol() -> f64 {
    1e-3
}
fn default_step() -> f64 {
    0.15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSettings {
    #[serde(default = "default_starts")]
    pub starts: usize,
    /// Total objective evaluations over all starts.
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
    /// Simplex diameter (relative to the box) below which a start stops.
    #[serde(default = "default_xtol")]
    pub xtol: f64,
    /// Initial simplex edge relative to the box size.
    #[serde(default = "default_step")]
    pub initial_step: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            starts: default_starts(),
            max_evals: default_max_evals(),
            xtol: default_xtol(),
            initial_step: default_step(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InverseProblemSpec {
    pub data: Observation,
    pub param: Parameterization,
    pub policy: InitialPolicy,
    /// Perimeter penalty weight.
    pub lambda: f64,
    pub optimizer: OptimizerSettings,
}

impl InverseProblemSpec {
    pub fn validate(&self, design: &Design) -> Result<()> {
        self.param.validate()?;
        if !(self.lambda >= 0.0) {
            return Err(Error::UnvalidatedSpec("perimeter weight must be nonnegative".into()));
        }
        if self.optimizer.starts == 0 || self.optimizer.max_evals < self.optimizer.starts {
            return Err(Error::UnvalidatedSpec("need at least one start and one evaluation per start".into()));
        }
        if self.data.times.first().is_some_and(|&t| t < design.window_start - 1e-12) {
            return Err(Error::UnvalidatedSpec("data stamps start before the window".into()));
        }
        Ok(())
    }
}

/// Objective value with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub misfit: f64,
    pub objective: f64,
    pub feasible: bool,
    pub clamped: bool,
    pub note: Option<String>,
}

/// Bilinear hats on a 4 x 4 node lattice over the outer rectangle.
pub fn hat_basis(grid: &Grid) -> Vec<Vec<f64>> {
    let n = 4usize;
    let (lx, ly) = (grid.x_max() - grid.x_min(), grid.y_max() - grid.y_min());
    let (dx, dy) = (lx / (n - 1) as f64, ly / (n - 1) as f64);
    let mut out = Vec::with_capacity(n * n);
    for b in 0..n {
        for a in 0..n {
            let (cx, cy) = (grid.x_min() + a as f64 * dx, grid.y_min() + b as f64 * dy);
            out.push(
                (0..grid.len())
                    .map(|k| {
                        let (x, y) = grid.coords(k);
                        (1.0 - (x - cx).abs() / dx).max(0.0) * (1.0 - (y - cy).abs() / dy).max(0.0)
                    })
                    .collect(),
            );
        }
    }
    out
}

/// Objective evaluator bound to a design, an operator and a problem spec.
pub struct Objective<'a> {
    pub design: &'a Design,
    pub op: &'a EllipticOperator,
    pub spec: &'a InverseProblemSpec,
}

impl Objective<'_> {
    /// Data misfit for a rasterized cavity.
    fn misfit_for(&self, cls: &NodeClassification) -> Result<f64> {
        let zero = vec![0.0; cls.grid().len()];
        let base = self.design.observe_with(cls, self.op, &zero)?.obs.restrict_to(&self.spec.data)?;
        match self.spec.policy {
            InitialPolicy::Windowed => observe::misfit(&base, &self.spec.data, self.design.weights),
            InitialPolicy::Joint => self.joint_misfit(cls, base),
        }
    }

    fn joint_misfit(&self, cls: &NodeClassification, base: Observation) -> Result<f64> {
        // responses to each basis function with all forcings switched off
        let bare = Design {
            source: Source::None,
            boundary: None,
            flux: self.design.flux.as_ref().map(|q| BoundaryInput { g0: Profile::Zero, ..q.clone() }),
            ..self.design.clone()
        };
        let basis = hat_basis(cls.grid());
        let columns = basis
            .iter()
            .map(|phi| {
                let mut u0 = phi.clone();
                for (k, v) in u0.iter_mut().enumerate() {
                    if cls.kind(k).is_cavity() {
                        *v = 0.0;
                    }
                }
                bare.observe_with(cls, self.op, &u0)?.obs.restrict_to(&self.spec.data)
            })
            .collect::<Result<Vec<_>>>()?;
        let w = sample_weights(&base, self.design.weights);
        let rows = base.values.len();
        let m = DMatrix::from_fn(rows, columns.len(), |r, c| w[r] * columns[c].values[r]);
        let rhs = DVector::from_fn(rows, |r, _| w[r] * (self.spec.data.values[r] - base.values[r]));
        let coef = m
            .clone()
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::SolverDiverged(e.to_string()))?;
        let fit = &m * &coef;
        let res: f64 = (0..rows).map(|r| (rhs[r] - fit[r]).powi(2)).sum();
        Ok(0.5 * res)
    }

    pub fn evaluate(&self, p: &[f64]) -> Evaluation {
        self.evaluate_cached(p, &mut HashMap::new())
    }

    /// Evaluates `p`, reusing misfits of previously seen rasterizations.
    pub fn evaluate_cached(&self, p: &[f64], cache: &mut HashMap<Vec<NodeKind>, f64>) -> Evaluation {
        let infeasible = |clamped: bool, note: String| Evaluation {
            misfit: f64::INFINITY,
            objective: f64::INFINITY,
            feasible: false,
            clamped,
            note: Some(note),
        };
        let ps = match shape_from_params(p, &self.spec.param) {
            Ok(ps) => ps,
            Err(e) => return infeasible(false, e.to_string()),
        };
        let cls = match rasterize(&ps.shape, &self.design.grid) {
            Ok(c) => c,
            Err(e) => return infeasible(ps.clamped, e.to_string()),
        };
        let misfit = match cache.get(cls.kinds()) {
            Some(&m) => m,
            None => match self.misfit_for(&cls) {
                Ok(m) => {
                    cache.insert(cls.kinds().to_vec(), m);
                    m
                }
                Err(e) => return infeasible(ps.clamped, e.to_string()),
            },
        };
        Evaluation {
            misfit,
            objective: misfit + self.spec.lambda * ps.shape.perimeter(),
            feasible: true,
            clamped: ps.clamped,
            note: None,
        }
    }
}

/// Per-sample weights `sqrt(w_loc w_t)` in location-major order.
fn sample_weights(obs: &Observation, weights: Weights) -> Vec<f64> {
    let nt = obs.times.len();
    let (wt, ws) = match weights {
        Weights::Unit => (vec![1.0; nt], 1.0),
        Weights::Quadrature => (observe::trapezoid_weights(&obs.times), obs.spatial_weight),
    };
    (0..obs.values.len()).map(|i| (ws * wt[i % nt]).sqrt()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub start: usize,
    pub eval: usize,
    pub params: Vec<f64>,
    pub objective: f64,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartSummary {
    pub start: usize,
    pub initial: Vec<f64>,
    pub best_params: Vec<f64>,
    pub best_objective: f64,
    pub evals: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub best_params: Vec<f64>,
    pub shape: CavityShape,
    pub misfit: f64,
    pub objective: f64,
    pub evals: usize,
    pub trace: Vec<TraceRow>,
    pub starts: Vec<StartSummary>,
    pub budget_exhausted: bool,
}

impl ReconstructionResult {
    /// Writes `start,eval,p0..,objective,best` rows.
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let dim = self.best_params.len();
        let names: Vec<String> = (0..dim).map(|i| format!("p{i}")).collect();
        writeln!(w, "start,eval,{},objective,best", names.join(","))?;
        for r in &self.trace {
            let ps: Vec<String> = r.params.iter().map(|v| format!("{v:.12e}")).collect();
            writeln!(w, "{},{},{},{:e},{:e}", r.start, r.eval, ps.join(","), r.objective, r.best)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Search<'a, 'b> {
    objective: &'b Objective<'a>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    budget: usize,
    cache: HashMap<Vec<NodeKind>, f64>,
    trace: Vec<(Vec<f64>, f64)>,
}

impl Search<'_, '_> {
    fn eval(&mut self, p: &[f64]) -> Option<f64> {
        if self.trace.len() >= self.budget {
            return None;
        }
        let e = self.objective.evaluate_cached(p, &mut self.cache);
        self.trace.push((p.to_vec(), e.objective));
        Some(e.objective)
    }

    fn project(&self, p: &mut [f64]) {
        for ((v, lo), hi) in p.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn diameter(&self, simplex: &[(Vec<f64>, f64)]) -> f64 {
        let best = &simplex[0].0;
        simplex
            .iter()
            .map(|(p, _)| {
                p.iter()
                    .zip(best)
                    .zip(self.lower.iter().zip(&self.upper))
                    .map(|((a, b), (lo, hi))| ((a - b) / (hi - lo).max(1e-300)).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// One Nelder–Mead run from `x0`; returns true when it converged before the budget.
    fn nelder_mead(&mut self, x0: &[f64], step: f64, xtol: f64) -> bool {
        let n = x0.len();
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let Some(f0) = self.eval(x0) else { return false };
        simplex.push((x0.to_vec(), f0));
        for i in 0..n {
            let mut p = x0.to_vec();
            let span = self.upper[i] - self.lower[i];
            p[i] += step * span;
            if p[i] > self.upper[i] {
                p[i] = x0[i] - step * span;
            }
            self.project(&mut p);
            let Some(f) = self.eval(&p) else { return false };
            simplex.push((p, f));
        }
        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            if self.diameter(&simplex) < xtol {
                return true;
            }
            let worst = simplex[n].clone();
            let centroid: Vec<f64> =
                (0..n).map(|j| simplex[..n].iter().map(|(p, _)| p[j]).sum::<f64>() / n as f64).collect();
            let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (worst.0[j] - centroid[j])).collect() };
            let mut xr = along(-1.0);
            self.project(&mut xr);
            let Some(fr) = self.eval(&xr) else { return false };
            if fr < simplex[0].1 {
                let mut xe = along(-2.0);
                self.project(&mut xe);
                let Some(fe) = self.eval(&xe) else { return false };
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
                continue;
            }
            let (mut xc, outside) = if fr < worst.1 { (along(-0.5), true) } else { (along(0.5), false) };
            self.project(&mut xc);
            let Some(fc) = self.eval(&xc) else { return false };
            if (outside && fc <= fr) || (!outside && fc < worst.1) {
                simplex[n] = (xc, fc);
                continue;
            }
            let best = simplex[0].0.clone();
            for v in simplex.iter_mut().skip(1) {
                let mut p: Vec<f64> = best.iter().zip(&v.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                self.project(&mut p);
                let Some(f) = self.eval(&p) else { return false };
                *v = (p, f);
            }
        }
    }
}

/// Multi-start Nelder–Mead over the parameter box.
pub fn reconstruct(design: &Design, op: &EllipticOperator, spec: &InverseProblemSpec, exec: Execution) -> Result<ReconstructionResult> {
    spec.validate(design)?;
    let opt = &spec.optimizer;
    let objective = Objective { design, op, spec };
    let dim = spec.param.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let starts: Vec<Vec<f64>> = (0..opt.starts)
        .map(|s| {
            if s == 0 {
                // box center
                spec.param.lower.iter().zip(&spec.param.upper).map(|(l, u)| 0.5 * (l + u)).collect()
            } else {
                (0..dim)
                    .map(|i| {
                        let (l, u) = (spec.param.lower[i], spec.param.upper[i]);
                        if u > l {
                            rng.random_range(l..=u)
                        } else {
                            l
                        }
                    })
                    .collect()
            }
        })
        .collect();
    let budget = opt.max_evals / opt.starts;
    let runs = exec.map(&starts, |x0| {
        let mut search = Search {
            objective: &objective,
            lower: spec.param.lower.clone(),
            upper: spec.param.upper.clone(),
            budget,
            cache: HashMap::new(),
            trace: Vec::new(),
        };
        let mut x = x0.clone();
        let mut step = opt.initial_step;
        let mut converged = false;
        // restart from the best point with a smaller simplex while budget remains
        for _ in 0..3 {
            converged = search.nelder_mead(&x, step, opt.xtol);
            if !converged {
                break;
            }
            let best = search.trace.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
            x = best.0.clone();
            step *= 0.5;
            if search.trace.len() >= budget || step < opt.xtol {
                break;
            }
        }
        (search.trace, converged)
    });

    let mut trace = Vec::new();
    let mut summaries = Vec::new();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut budget_exhausted = false;
    for (s, ((rows, converged), x0)) in runs.into_iter().zip(&starts).enumerate() {
        budget_exhausted |= !converged;
        let mut start_best: Option<(Vec<f64>, f64)> = None;
        for (i, (p, f)) in rows.iter().enumerate() {
            if start_best.as_ref().is_none_or(|b| *f < b.1) {
                start_best = Some((p.clone(), *f));
            }
            if best.as_ref().is_none_or(|b| *f < b.1) {
                best = Some((p.clone(), *f));
            }
            trace.push(TraceRow { start: s, eval: i, params: p.clone(), objective: *f, best: best.as_ref().unwrap().1 });
        }
        let (bp, bf) = start_best.unwrap_or((x0.clone(), f64::INFINITY));
        summaries.push(StartSummary { start: s, initial: x0.clone(), best_params: bp, best_objective: bf, evals: rows.len(), converged });
    }
    let (best_params, objective_value) = best.ok_or_else(|| Error::UnvalidatedSpec("no evaluations".into()))?;
    let ps = shape_from_params(&best_params, &spec.param)?;
    let misfit = objective_value - spec.lambda * ps.shape.perimeter();
    Ok(ReconstructionResult {
        best_params: ps.params,
        shape: ps.shape,
        misfit,
        objective: objective_value,
        evals: trace.len(),
        trace,
        starts: summaries,
        budget_exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_thresholds() {
        assert_eq!(Verdict::from_ratio(0.0), Verdict::Indistinguishable);
        assert_eq!(Verdict::from_ratio(3.0), Verdict::Indistinguishable);
        assert_eq!(Verdict::from_ratio(5.0), Verdict::Inconclusive);
        assert_eq!(Verdict::from_ratio(10.5), Verdict::Distinguishable);
    }

    #[test]
    fn hats_form_a_partition_of_unity() {
        let g = Grid::square(0.0, 2.0, 0.125).unwrap();
        let basis = hat_basis(&g);
        assert_eq!(basis.len(), 16);
        for k in 0..g.len() {
            let s: f64 = basis.iter().map(|b| b[k]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
