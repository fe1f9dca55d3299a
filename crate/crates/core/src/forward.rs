//! θ-scheme time stepping of `∂_t u + A u = f` on the fluid nodes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Grid, NodeClassification, NodeKind};
use crate::linalg::{self, CheckedSolver};
use crate::operators::{assemble_with, CavityCondition, DiscreteOperator, EllipticOperator, OuterCondition};
use crate::sources::SeparableField;
use crate::timefn::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ImplicitEuler,
    #[default]
    CrankNicolson,
}

impl Scheme {
    pub fn theta(self) -> f64 {
        match self {
            Scheme::ImplicitEuler => 1.0,
            Scheme::CrankNicolson => 0.5,
        }
    }
}

fn default_stride() -> usize {
    1
}

/// Uniform time grid on `[0, t_final]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_final: f64,
    pub nt: usize,
    #[serde(default)]
    pub scheme: Scheme,
    /// Every `stride`-th step is stored (the final step always is).
    #[serde(default = "default_stride")]
    pub stride: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, nt: usize, scheme: Scheme) -> Self {
        TimeGrid { t_final, nt, scheme, stride: 1 }
    }

    /// Time grid with step closest to `dt` that divides `t_final` exactly.
    pub fn with_step(t_final: f64, dt: f64, scheme: Scheme) -> Self {
        Self::new(t_final, (t_final / dt).round().max(1.0) as usize, scheme)
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.nt {
            self.t_final
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(Error::InvalidTimeGrid("final time must be positive".into()));
        }
        if self.nt == 0 || self.stride == 0 {
            return Err(Error::InvalidTimeGrid("step count and stride must be positive".into()));
        }
        Ok(())
    }

    /// Step index of `t`, if `t` is a grid time.
    pub fn step_of(&self, t: f64) -> Option<usize> {
        let s = t / self.dt();
        let r = s.round();
        ((s - r).abs() <= 1e-9 * r.max(1.0) && r >= 0.0 && r <= self.nt as f64).then_some(r as usize)
    }

    /// Fails if a breakpoint inside `(0, T)` falls between steps.
    pub fn check_aligned(&self, breakpoints: &[f64]) -> Result<()> {
        for &b in breakpoints {
            if b > 0.0 && b < self.t_final && self.step_of(b).is_none() {
                return Err(Error::BreakpointMisaligned { time: b, dt: self.dt() });
            }
        }
        Ok(())
    }

    fn stored(&self, n: usize) -> bool {
        n.is_multiple_of(self.stride) || n == self.nt
    }
}

/// Stored snapshots of a forward solve as full-grid arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub grid: Grid,
    pub kinds: Vec<NodeKind>,
    pub scheme: Scheme,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
}

impl SpaceTimeField {
    pub fn last(&self) -> &[f64] {
        self.snapshots.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Snapshot stored at step `n`.
    pub fn at_step(&self, n: usize) -> Option<&[f64]> {
        self.steps.iter().position(|&s| s == n).map(|i| self.snapshots[i].as_slice())
    }
}

/// Inputs of one forward solve. Fields are full-grid (`flux`: four slots per node).
#[derive(Debug, Clone)]
pub struct ForwardProblem {
    pub op: DiscreteOperator,
    pub kinds: Vec<NodeKind>,
    pub source: Option<SeparableField>,
    /// Dirichlet values on the outer boundary.
    pub boundary: Option<SeparableField>,
    /// Outward conormal flux for the Neumann closure.
    pub flux: Option<SeparableField>,
    pub u0: Vec<f64>,
}

impl ForwardProblem {
    pub fn new(op: DiscreteOperator, cls: &NodeClassification, u0: Vec<f64>) -> Self {
        ForwardProblem { op, kinds: cls.kinds().to_vec(), source: None, boundary: None, flux: None, u0 }
    }

    pub fn with_source(mut self, f: SeparableField) -> Self {
        self.source = (!f.is_empty()).then_some(f);
        self
    }

    pub fn with_boundary(mut self, g: SeparableField) -> Self {
        self.boundary = (!g.is_empty()).then_some(g);
        self
    }

    pub fn with_flux(mut self, q: SeparableField) -> Self {
        self.flux = (!q.is_empty()).then_some(q);
        self
    }

    fn breakpoints(&self) -> Vec<f64> {
        [&self.source, &self.boundary, &self.flux].into_iter().flatten().flat_map(|f| f.breakpoints()).collect()
    }
}

/// Factored θ-scheme for one problem and time grid.
pub struct Stepper<'a> {
    problem: &'a ForwardProblem,
    tg: TimeGrid,
    solver: CheckedSolver,
    outer_nodes: Vec<usize>,
    boundary_is_value: bool,
}

impl<'a> Stepper<'a> {
    pub fn new(problem: &'a ForwardProblem, tg: &TimeGrid) -> Result<Self> {
        tg.validate()?;
        tg.check_aligned(&problem.breakpoints())?;
        let grid = problem.op.grid();
        if problem.u0.len() != grid.len() {
            return Err(Error::ShapeMismatch("initial field must be a full-grid array".into()));
        }
        let theta = tg.scheme.theta();
        let lhs = linalg::shifted(problem.op.matrix(), 1.0 / tg.dt(), theta);
        let solver = CheckedSolver::new(lhs)?;
        let outer_nodes: Vec<usize> =
            (0..grid.len()).filter(|&k| problem.kinds[k] == NodeKind::OuterBoundary).collect();
        let boundary_is_value = outer_nodes.first().is_some_and(|&k| problem.op.unknown_of(k).is_none());
        Ok(Stepper { problem, tg: *tg, solver, outer_nodes, boundary_is_value })
    }

    /// Right-hand side forcing `F(t)` on the unknowns.
    fn forcing(&self, t: f64, side: Side, full: &mut [f64], out: &mut [f64]) {
        let p = self.problem;
        out.iter_mut().for_each(|v| *v = 0.0);
        if let Some(f) = &p.source {
            f.fill(t, side, full);
            for (o, &n) in out.iter_mut().zip(p.op.unknowns()) {
                *o += full[n];
            }
        }
        if let (Some(g), true) = (&p.boundary, self.boundary_is_value && p.op.has_value_links()) {
            self.boundary_values(g, t, side, full);
            for (o, l) in out.iter_mut().zip(p.op.value_load(full)) {
                *o += l;
            }
        }
        if let Some(q) = &p.flux {
            let mut buf = vec![0.0; q.len()];
            q.fill(t, side, &mut buf);
            for (o, l) in out.iter_mut().zip(p.op.flux_load(&buf)) {
                *o += l;
            }
        }
    }

    /// Prescribed values: `g` on the outer boundary, zero elsewhere.
    fn boundary_values(&self, g: &SeparableField, t: f64, side: Side, full: &mut [f64]) {
        full.iter_mut().for_each(|v| *v = 0.0);
        for &k in &self.outer_nodes {
            full[k] = g.eval_node(k, t, side);
        }
    }

    fn snapshot(&self, u: &[f64], t: f64, side: Side, full: &mut [f64]) {
        full.iter_mut().for_each(|v| *v = 0.0);
        if self.boundary_is_value {
            if let Some(g) = &self.problem.boundary {
                self.boundary_values(g, t, side, full);
            }
        }
        self.problem.op.scatter(u, full);
    }

    /// Runs all steps, calling `visit(step, time, full_grid_u)` after each one
    /// (and once for the initial state).
    pub fn run_with(&self, mut visit: impl FnMut(usize, f64, &[f64])) -> Result<()> {
        let p = self.problem;
        let n_unk = p.op.len();
        let len = p.op.grid().len();
        let theta = self.tg.scheme.theta();
        let dt = self.tg.dt();
        let mut u = p.op.gather(&p.u0);
        let mut full = vec![0.0; len];
        let mut scratch = vec![0.0; len];
        let mut f_old = vec![0.0; n_unk];
        let mut f_new = vec![0.0; n_unk];
        let mut au = vec![0.0; n_unk];
        let mut rhs = vec![0.0; n_unk];

        self.snapshot(&u, 0.0, Side::Right, &mut full);
        visit(0, 0.0, &full);
        for n in 0..self.tg.nt {
            let (t0, t1) = (self.tg.time(n), self.tg.time(n + 1));
            self.forcing(t0, Side::Right, &mut scratch, &mut f_old);
            self.forcing(t1, Side::Left, &mut scratch, &mut f_new);
            if theta < 1.0 {
                linalg::matvec_into(p.op.matrix(), &u, &mut au);
            }
            for k in 0..n_unk {
                let explicit = if theta < 1.0 { (1.0 - theta) * (f_old[k] - au[k]) } else { 0.0 };
                rhs[k] = u[k] / dt + explicit + theta * f_new[k];
            }
            u = self.solver.solve(&rhs)?;
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::SolverDiverged(format!("non-finite values at step {}", n + 1)));
            }
            self.snapshot(&u, t1, Side::Left, &mut full);
            visit(n + 1, t1, &full);
        }
        Ok(())
    }

    /// Runs all steps and keeps the snapshots selected by the stride.
    pub fn run(&self) -> Result<SpaceTimeField> {
        let mut out = SpaceTimeField {
            grid: *self.problem.op.grid(),
            kinds: self.problem.kinds.clone(),
            scheme: self.tg.scheme,
            steps: Vec::new(),
            times: Vec::new(),
            snapshots: Vec::new(),
        };
        let tg = self.tg;
        self.run_with(|n, t, u| {
            if tg.stored(n) {
                out.steps.push(n);
                out.times.push(t);
                out.snapshots.push(u.to_vec());
            }
        })?;
        Ok(out)
    }
}

/// Dirichlet data `g` on `∂Ω`, Dirichlet or Robin condition on the cavity.
#[allow(clippy::too_many_arguments)]
pub fn solve(
    cls: &NodeClassification,
    op: &EllipticOperator,
    source: Option<&SeparableField>,
    boundary: Option<&SeparableField>,
    u0: &[f64],
    tg: &TimeGrid,
    cavity_bc: &CavityCondition,
) -> Result<SpaceTimeField> {
    let d = assemble_with(op, cls, OuterCondition::Dirichlet, cavity_bc)?;
    let mut p = ForwardProblem::new(d, cls, u0.to_vec());
    if let Some(f) = source {
        p = p.with_source(f.clone());
    }
    if let Some(g) = boundary {
        p = p.with_boundary(g.clone());
    }
    Stepper::new(&p, tg)?.run()
}

/// Prescribed outward conormal flux on `∂Ω` (ghost-node closure), Dirichlet on the cavity.
pub fn neumann_source_solve(
    cls: &NodeClassification,
    op: &EllipticOperator,
    source: Option<&SeparableField>,
    flux: Option<&SeparableField>,
    u0: &[f64],
    tg: &TimeGrid,
) -> Result<SpaceTimeField> {
    let d = assemble_with(op, cls, OuterCondition::Neumann, &CavityCondition::Dirichlet)?;
    let mut p = ForwardProblem::new(d, cls, u0.to_vec());
    if let Some(f) = source {
        p = p.with_source(f.clone());
    }
    if let Some(q) = flux {
        p = p.with_flux(q.clone());
    }
    Stepper::new(&p, tg)?.run()
}

/// Steady state `A u = F` for time-independent forcing, as a full-grid array.
pub fn steady_state(problem: &ForwardProblem) -> Result<Vec<f64>> {
    let stepper = Stepper::new(problem, &TimeGrid::new(1.0, 1, Scheme::ImplicitEuler))?;
    let n = problem.op.len();
    let mut scratch = vec![0.0; problem.op.grid().len()];
    let mut f = vec![0.0; n];
    stepper.forcing(1.0, Side::Left, &mut scratch, &mut f);
    let u = CheckedSolver::new(problem.op.matrix().clone())?.solve(&f)?;
    let mut full = vec![0.0; scratch.len()];
    stepper.snapshot(&u, 1.0, Side::Left, &mut full);
    Ok(full)
}

/// Writes `x,y,u` rows for every node.
pub fn write_snapshot_csv(path: &Path, grid: &Grid, u: &[f64]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "x,y,u")?;
    for (k, v) in u.iter().enumerate() {
        let (x, y) = grid.coords(k);
        writeln!(w, "{x},{y},{v:e}")?;
    }
    w.flush()?;
    Ok(())
}

/// Binary PGM heatmap, min mapped to black and max to white, top row = `y_max`.
pub fn write_pgm(path: &Path, grid: &Grid, u: &[f64]) -> Result<()> {
    let (lo, hi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut bytes = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    for j in (0..ny).rev() {
        for i in 0..nx {
            let v = (u[grid.index(i, j)] - lo) / span;
            bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize, CavityShape};

    #[test]
    fn zero_data_stays_zero() {
        let g = Grid::square(0.25, 2.0, 1.0 / 16.0).unwrap();
        let cls = rasterize(&CavityShape::rectangle(0.5, 0.5, 1.0, 1.0), &g).unwrap();
        let tg = TimeGrid::new(0.1, 10, Scheme::CrankNicolson);
        let u = solve(&cls, &EllipticOperator::laplacian(), None, None, &vec![0.0; g.len()], &tg, &CavityCondition::Dirichlet)
            .unwrap();
        assert_eq!(u.snapshots.len(), 11);
        assert!(u.snapshots.iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn misaligned_breakpoint_is_rejected() {
        let tg = TimeGrid::new(1.0, 10, Scheme::ImplicitEuler);
        assert!(tg.check_aligned(&[0.2, 0.5, 1.0]).is_ok());
        assert!(matches!(tg.check_aligned(&[0.25]), Err(Error::BreakpointMisaligned { .. })));
    }

    #[test]
    fn pgm_header() {
        let g = Grid::square(0.0, 1.0, 0.25).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.pgm");
        write_pgm(&p, &g, &(0..g.len()).map(|k| k as f64).collect::<Vec<_>>()).unwrap();
        let bytes = std::fs::read(p).unwrap();
        assert!(bytes.starts_with(b"P5\n5 5\n255\n"));
        assert_eq!(bytes.len(), 11 + 25);
    }
}
