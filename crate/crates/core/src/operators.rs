//! Second-order elliptic operators `-div(a grad u) + b . grad u + c u`, their
//! finite-difference assembly on the fluid nodes, conormal traces and the
//! commutator test used for the two-operator setting.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Edge, GammaNode, Grid, NodeClassification, NodeKind, Region};
use crate::linalg::{self, SparseMatrix};

/// Closed-form coefficient presets. `Linear` covers the documented
/// `one-plus-x` / `one-plus-y` presets as special cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientPreset {
    /// `1 + x`
    OnePlusX,
    /// `1 + y`
    OnePlusY,
    /// `c0 + cx x + cy y`
    Linear { c0: f64, cx: f64, cy: f64 },
    /// `mean + amp sin(kx x) sin(ky y)`
    Wave { mean: f64, amp: f64, kx: f64, ky: f64 },
}

/// A coefficient field: a constant or a named closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Constant(f64),
    Preset(CoefficientPreset),
}

impl Default for Coefficient {
    fn default() -> Self {
        Coefficient::Constant(0.0)
    }
}

impl From<f64> for Coefficient {
    fn from(v: f64) -> Self {
        Coefficient::Constant(v)
    }
}

impl Coefficient {
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Coefficient::Constant(v) => *v,
            Coefficient::Preset(p) => match *p {
                CoefficientPreset::OnePlusX => 1.0 + x,
                CoefficientPreset::OnePlusY => 1.0 + y,
                CoefficientPreset::Linear { c0, cx, cy } => c0 + cx * x + cy * y,
                CoefficientPreset::Wave { mean, amp, kx, ky } => mean + amp * (kx * x).sin() * (ky * y).sin(),
            },
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Coefficient::Constant(_))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Coefficient::Constant(v) if *v == 0.0)
    }
}

fn one() -> Coefficient {
    Coefficient::Constant(1.0)
}

fn default_alpha() -> f64 {
    1.0
}

/// Coefficients of the elliptic operator together with the claimed
/// ellipticity constant `alpha` and coercivity floor `c0`.
///
/// `c0 = 0` means coercivity is not claimed; `c >= 0` is still required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipticOperator {
    #[serde(default = "one")]
    pub a11: Coefficient,
    #[serde(default)]
    pub a12: Coefficient,
    #[serde(default = "one")]
    pub a22: Coefficient,
    #[serde(default)]
    pub b1: Coefficient,
    #[serde(default)]
    pub b2: Coefficient,
    #[serde(default)]
    pub c: Coefficient,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub c0: f64,
}

impl Default for EllipticOperator {
    fn default() -> Self {
        Self::laplacian()
    }
}

impl EllipticOperator {
    /// `-Δ`.
    pub fn laplacian() -> Self {
        EllipticOperator {
            a11: one(),
            a12: Coefficient::default(),
            a22: one(),
            b1: Coefficient::default(),
            b2: Coefficient::default(),
            c: Coefficient::default(),
            alpha: 1.0,
            c0: 0.0,
        }
    }

    /// `-Δ + c` with the coercivity floor claimed at `c`.
    pub fn shifted_laplacian(c: f64) -> Self {
        EllipticOperator { c: c.into(), c0: c, ..Self::laplacian() }
    }

    /// Constant coefficients; `alpha` is set to the smallest eigenvalue of `a`
    /// and `c0` to `c`.
    pub fn constant(a11: f64, a12: f64, a22: f64, b1: f64, b2: f64, c: f64) -> Self {
        let mean = 0.5 * (a11 + a22);
        let rad = (0.25 * (a11 - a22).powi(2) + a12 * a12).sqrt();
        EllipticOperator {
            a11: a11.into(),
            a12: a12.into(),
            a22: a22.into(),
            b1: b1.into(),
            b2: b2.into(),
            c: c.into(),
            alpha: mean - rad,
            c0: c.max(0.0),
        }
    }

    pub fn is_constant(&self) -> bool {
        [&self.a11, &self.a12, &self.a22, &self.b1, &self.b2, &self.c].iter().all(|c| c.is_constant())
    }

    #[inline]
    pub fn matrix_at(&self, x: f64, y: f64) -> [f64; 3] {
        [self.a11.eval(x, y), self.a12.eval(x, y), self.a22.eval(x, y)]
    }

    /// Samples the structural hypotheses at every node of `grid`.
    pub fn check(&self, grid: &Grid) -> OperatorReport {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let dirs = [(1.0, 0.0), (0.0, 1.0), (s, s), (s, -s)];
        let mut min_rayleigh = f64::INFINITY;
        let mut min_c = f64::INFINITY;
        let mut max_drift = 0.0f64;
        for k in 0..grid.len() {
            let (x, y) = grid.coords(k);
            let [a11, a12, a22] = self.matrix_at(x, y);
            for (p, q) in dirs {
                min_rayleigh = min_rayleigh.min(a11 * p * p + 2.0 * a12 * p * q + a22 * q * q);
            }
            min_c = min_c.min(self.c.eval(x, y));
            max_drift = max_drift.max(self.b1.eval(x, y).hypot(self.b2.eval(x, y)));
        }
        let peclet = if self.alpha > 0.0 { grid.h() * max_drift / (2.0 * self.alpha) } else { f64::INFINITY };
        OperatorReport {
            alpha: self.alpha,
            min_rayleigh,
            ellipticity_ok: self.alpha > 0.0 && min_rayleigh >= self.alpha * (1.0 - 1e-12),
            c0: self.c0,
            min_c,
            coercivity_claimed: self.c0 > 0.0,
            coercivity_ok: self.c0 >= 0.0 && min_c >= self.c0 * (1.0 - 1e-12),
            peclet,
            peclet_ok: peclet < 1.0,
        }
    }
}

/// Outcome of sampling ellipticity, coercivity and the cell Péclet bound.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorReport {
    pub alpha: f64,
    pub min_rayleigh: f64,
    pub ellipticity_ok: bool,
    pub c0: f64,
    pub min_c: f64,
    pub coercivity_claimed: bool,
    pub coercivity_ok: bool,
    pub peclet: f64,
    pub peclet_ok: bool,
}

impl OperatorReport {
    pub fn passed(&self) -> bool {
        self.ellipticity_ok && self.coercivity_ok && self.peclet_ok
    }

    pub fn ensure(&self) -> Result<()> {
        if !self.ellipticity_ok {
            return Err(Error::HypothesisViolation(format!(
                "ellipticity: min sampled Rayleigh quotient {:.6e} < alpha = {:.6e}",
                self.min_rayleigh, self.alpha
            )));
        }
        if !self.coercivity_ok {
            return Err(Error::HypothesisViolation(format!(
                "coercivity: min c = {:.6e} < c0 = {:.6e}",
                self.min_c, self.c0
            )));
        }
        if !self.peclet_ok {
            return Err(Error::HypothesisViolation(format!(
                "cell Peclet number h |b| / (2 alpha) = {:.3} must be below 1",
                self.peclet
            )));
        }
        Ok(())
    }
}

/// Condition on the outer boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OuterCondition {
    #[default]
    Dirichlet,
    /// Prescribed conormal flux, closed with ghost nodes.
    Neumann,
}

/// Condition on the cavity boundary.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CavityCondition {
    #[default]
    Dirichlet,
    /// `du/dnu_A + m u = 0`; `m` is sampled at the cavity nodes.
    Robin { m: Coefficient },
}

const NONE: usize = usize::MAX;

/// Assembled operator on the unknown nodes.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    grid: Grid,
    matrix: SparseMatrix,
    /// unknowns x nodes: couplings to nodes carrying prescribed values.
    links: SparseMatrix,
    /// unknowns x (4 * nodes): couplings to prescribed boundary fluxes, one slot per edge.
    flux: SparseMatrix,
    unknowns: Vec<usize>,
    unknown_of: Vec<usize>,
}

impl DiscreteOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.unknowns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unknowns.is_empty()
    }

    /// Grid node of every unknown.
    pub fn unknowns(&self) -> &[usize] {
        &self.unknowns
    }

    pub fn unknown_of(&self, node: usize) -> Option<usize> {
        let u = self.unknown_of[node];
        (u != NONE).then_some(u)
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        linalg::matvec(&self.matrix, u)
    }

    /// Right-hand side contribution of prescribed node values (full-grid array).
    pub fn value_load(&self, values: &[f64]) -> Vec<f64> {
        linalg::matvec(&self.links, values).into_iter().map(|v| -v).collect()
    }

    /// Right-hand side contribution of prescribed outward conormal fluxes,
    /// laid out as in [`flux_slot`].
    pub fn flux_load(&self, flux: &[f64]) -> Vec<f64> {
        linalg::matvec(&self.flux, flux)
    }

    pub fn has_value_links(&self) -> bool {
        self.links.nnz() > 0
    }

    pub fn has_flux_links(&self) -> bool {
        self.flux.nnz() > 0
    }

    /// Discrete operator applied to a full-grid field, one value per unknown.
    pub fn apply_full(&self, full: &[f64]) -> Vec<f64> {
        let mut out = self.apply(&self.gather(full));
        for (o, l) in out.iter_mut().zip(linalg::matvec(&self.links, full)) {
            *o += l;
        }
        out
    }

    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.unknowns.iter().map(|&n| full[n]).collect()
    }

    /// Writes unknown values into a full-grid array.
    pub fn scatter(&self, u: &[f64], full: &mut [f64]) {
        for (&n, &v) in self.unknowns.iter().zip(u) {
            full[n] = v;
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        linalg::asymmetry(&self.matrix) <= tol
    }

    /// Smallest eigenvalue of the symmetric part of the matrix.
    pub fn smallest_symmetric_eigenvalue(&self) -> Result<f64> {
        linalg::smallest_eigenvalue_spd(&linalg::symmetric_part(&self.matrix))
    }
}

/// Assembles the operator with Dirichlet conditions on the outer and cavity boundaries.
pub fn assemble(op: &EllipticOperator, cls: &NodeClassification) -> Result<DiscreteOperator> {
    assemble_with(op, cls, OuterCondition::Dirichlet, &CavityCondition::Dirichlet)
}

/// Flux-form differencing of the divergence term with arithmetic midpoint
/// averaging, centered differences for the drift and a diagonal reaction term.
pub fn assemble_with(
    op: &EllipticOperator,
    cls: &NodeClassification,
    outer: OuterCondition,
    cavity: &CavityCondition,
) -> Result<DiscreteOperator> {
    let grid = *cls.grid();
    op.check(&grid).ensure()?;
    let needs_diag = outer == OuterCondition::Neumann || matches!(cavity, CavityCondition::Robin { .. });
    if needs_diag && !op.a12.is_zero() {
        return Err(Error::HypothesisViolation(
            "Neumann and Robin closures require a12 = 0".into(),
        ));
    }
    let robin_m = match cavity {
        CavityCondition::Robin { m } => Some(m),
        CavityCondition::Dirichlet => None,
    };

    let h = grid.h();
    let h2 = h * h;
    let (nx, ny) = (grid.nx() as isize, grid.ny() as isize);
    let mut unknown_of = vec![NONE; grid.len()];
    let mut unknowns = Vec::new();
    for k in 0..grid.len() {
        let kind = cls.kind(k);
        if kind == NodeKind::Fluid || (outer == OuterCondition::Neumann && kind == NodeKind::OuterBoundary) {
            unknown_of[k] = unknowns.len();
            unknowns.push(k);
        }
    }

    let coord = |i: isize, j: isize| (grid.x_min() + i as f64 * h, grid.y_min() + j as f64 * h);
    let mut mat = Vec::with_capacity(9 * unknowns.len());
    let mut links = Vec::new();
    let mut flux = Vec::new();

    for (row, &node) in unknowns.iter().enumerate() {
        let (i, j) = grid.ij(node);
        let (i, j) = (i as isize, j as isize);
        let (x, y) = grid.coords(node);
        let a11 = |di: isize, dj: isize| {
            let (px, py) = coord(i + di, j + dj);
            op.a11.eval(px, py)
        };
        let a22 = |di: isize, dj: isize| {
            let (px, py) = coord(i + di, j + dj);
            op.a22.eval(px, py)
        };
        let a12 = |di: isize, dj: isize| {
            let (px, py) = coord(i + di, j + dj);
            op.a12.eval(px, py)
        };
        let ap = [op.a11.eval(x, y), op.a22.eval(x, y)];
        let a_e = 0.5 * (ap[0] + a11(1, 0));
        let a_w = 0.5 * (ap[0] + a11(-1, 0));
        let a_n = 0.5 * (ap[1] + a22(0, 1));
        let a_s = 0.5 * (ap[1] + a22(0, -1));
        let (b1, b2) = (op.b1.eval(x, y), op.b2.eval(x, y));
        let mut stencil: Vec<(isize, isize, f64, f64)> = vec![
            // (di, dj, weight, face coefficient)
            (1, 0, -a_e / h2 + b1 / (2.0 * h), a_e),
            (-1, 0, -a_w / h2 - b1 / (2.0 * h), a_w),
            (0, 1, -a_n / h2 + b2 / (2.0 * h), a_n),
            (0, -1, -a_s / h2 - b2 / (2.0 * h), a_s),
        ];
        if !op.a12.is_zero() {
            let (e, w, n, s) = (a12(1, 0), a12(-1, 0), a12(0, 1), a12(0, -1));
            let q = 4.0 * h2;
            stencil.push((1, 1, -(e + n) / q, 0.0));
            stencil.push((-1, -1, -(w + s) / q, 0.0));
            stencil.push((-1, 1, (w + n) / q, 0.0));
            stencil.push((1, -1, (e + s) / q, 0.0));
        }
        let mut diag = (a_e + a_w + a_n + a_s) / h2 + op.c.eval(x, y);

        for (di, dj, w, face) in stencil {
            if w == 0.0 {
                continue;
            }
            let (ni, nj) = (i + di, j + dj);
            if ni < 0 || nj < 0 || ni >= nx || nj >= ny {
                // ghost outside the rectangle (Neumann closure only)
                debug_assert!(outer == OuterCondition::Neumann && (di == 0 || dj == 0));
                let mirror = grid.index((i - di) as usize, (j - dj) as usize);
                mat.push((row, unknown_of[mirror], w));
                let a_nn = if di != 0 { ap[0] } else { ap[1] };
                let edge = match (di, dj) {
                    (-1, _) => Edge::Left,
                    (1, _) => Edge::Right,
                    (_, -1) => Edge::Bottom,
                    _ => Edge::Top,
                };
                flux.push((row, flux_slot(&grid, node, edge), -w * 2.0 * h / a_nn));
                continue;
            }
            let nb = grid.index(ni as usize, nj as usize);
            let col = unknown_of[nb];
            if col != NONE {
                mat.push((row, col, w));
            } else if let (Some(m), true) = (robin_m, cls.kind(nb).is_cavity()) {
                let (cx, cy) = grid.coords(nb);
                diag += w * (1.0 - m.eval(cx, cy) * h / face);
            } else {
                links.push((row, nb, w));
            }
        }
        mat.push((row, row, diag));
    }

    let n = unknowns.len();
    Ok(DiscreteOperator {
        grid,
        matrix: linalg::csr_from_triplets(n, n, &mat),
        links: linalg::csr_from_triplets(n, grid.len(), &links),
        flux: linalg::csr_from_triplets(n, 4 * grid.len(), &flux),
        unknowns,
        unknown_of,
    })
}

/// Index of the flux value for `node` on `edge` in an array of length `4 * grid.len()`.
/// Corner nodes carry one value per adjacent edge.
pub fn flux_slot(grid: &Grid, node: usize, edge: Edge) -> usize {
    let e = match edge {
        Edge::Left => 0,
        Edge::Right => 1,
        Edge::Bottom => 2,
        Edge::Top => 3,
    };
    e * grid.len() + node
}

/// Samples `q(x, y, edge)` on every outer-boundary node and adjacent edge.
pub fn edge_flux_field(grid: &Grid, q: impl Fn(f64, f64, Edge) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; 4 * grid.len()];
    let (nx, ny) = (grid.nx(), grid.ny());
    for k in 0..grid.len() {
        let (i, j) = grid.ij(k);
        let (x, y) = grid.coords(k);
        for (on, edge) in [(i == 0, Edge::Left), (i == nx - 1, Edge::Right), (j == 0, Edge::Bottom), (j == ny - 1, Edge::Top)] {
            if on {
                out[flux_slot(grid, k, edge)] = q(x, y, edge);
            }
        }
    }
    out
}

/// Precomputed conormal-derivative stencils on the nodes of a subboundary.
#[derive(Debug, Clone)]
pub struct ConormalOperator {
    nodes: Vec<GammaNode>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl ConormalOperator {
    /// One-sided second-order normal difference, centered tangential difference,
    /// contracted with `a ν`.
    pub fn new(op: &EllipticOperator, gamma: &Region, grid: &Grid) -> Result<Self> {
        let nodes = gamma.gamma_nodes(grid)?;
        if grid.nx() < 3 || grid.ny() < 3 {
            return Err(Error::InvalidGrid("conormal stencil needs at least 3 nodes per axis".into()));
        }
        let h = grid.h();
        let rows = nodes
            .iter()
            .map(|g| {
                let (i, j) = grid.ij(g.node);
                let (x, y) = grid.coords(g.node);
                let [a11, a12, a22] = op.matrix_at(x, y);
                let (nu_x, nu_y) = g.edge.normal();
                // a ν
                let (px, py) = (a11 * nu_x + a12 * nu_y, a12 * nu_x + a22 * nu_y);
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(5);
                let idx = |i: usize, j: usize| grid.index(i, j);
                let inv2h = 1.0 / (2.0 * h);
                match g.edge {
                    Edge::Left | Edge::Right => {
                        // normal direction x: one-sided into the domain
                        let (s, i1, i2) = if g.edge == Edge::Left { (1.0, i + 1, i + 2) } else { (-1.0, i - 1, i - 2) };
                        row.push((idx(i, j), px * s * -3.0 * inv2h));
                        row.push((idx(i1, j), px * s * 4.0 * inv2h));
                        row.push((idx(i2, j), px * s * -1.0 * inv2h));
                        row.push((idx(i, j + 1), py * inv2h));
                        row.push((idx(i, j - 1), -py * inv2h));
                    }
                    Edge::Bottom | Edge::Top => {
                        let (s, j1, j2) = if g.edge == Edge::Bottom { (1.0, j + 1, j + 2) } else { (-1.0, j - 1, j - 2) };
                        row.push((idx(i, j), py * s * -3.0 * inv2h));
                        row.push((idx(i, j1), py * s * 4.0 * inv2h));
                        row.push((idx(i, j2), py * s * -1.0 * inv2h));
                        row.push((idx(i + 1, j), px * inv2h));
                        row.push((idx(i - 1, j), -px * inv2h));
                    }
                }
                row.retain(|&(_, w)| w != 0.0);
                row
            })
            .collect();
        Ok(ConormalOperator { nodes, rows })
    }

    pub fn nodes(&self) -> &[GammaNode] {
        &self.nodes
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(n, w)| w * u[n]).sum()).collect()
    }
}

/// Conormal derivative of a full-grid snapshot on the nodes of `gamma`.
pub fn conormal_trace(u: &[f64], op: &EllipticOperator, gamma: &Region, grid: &Grid) -> Result<Vec<f64>> {
    Ok(ConormalOperator::new(op, gamma, grid)?.apply(u))
}

/// Random smooth bumps vanishing within `margin` nodes of the outer boundary.
pub fn bump_bank(grid: &Grid, count: usize, seed: u64, margin: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = grid.h();
    let lo_x = grid.x_min() + (margin as f64 + 1.0) * h;
    let hi_x = grid.x_max() - (margin as f64 + 1.0) * h;
    let lo_y = grid.y_min() + (margin as f64 + 1.0) * h;
    let hi_y = grid.y_max() - (margin as f64 + 1.0) * h;
    (0..count)
        .map(|_| {
            let max_r = 0.5 * (hi_x - lo_x).min(hi_y - lo_y);
            let r = rng.random_range(0.3 * max_r..max_r);
            let cx = rng.random_range(lo_x + r..=hi_x - r);
            let cy = rng.random_range(lo_y + r..=hi_y - r);
            let amp = rng.random_range(0.5..2.0);
            (0..grid.len())
                .map(|k| {
                    let (x, y) = grid.coords(k);
                    let q = ((x - cx).powi(2) + (y - cy).powi(2)) / (r * r);
                    if q < 1.0 {
                        amp * (-1.0 / (1.0 - q)).exp() * std::f64::consts::E
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Rows of `(A1 A2 - A2 A1) v` on the unknowns of two operators assembled on the
/// same classification. Each matrix entry is accumulated over its partial products
/// in a fixed order, so equal multisets of products cancel exactly.
fn commutator_apply(a1: &SparseMatrix, a2: &SparseMatrix, v: &[f64]) -> Vec<f64> {
    let n = a1.rows();
    (0..n)
        .map(|i| {
            let mut entries: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for (first, second, slot) in [(a1, a2, 0usize), (a2, a1, 1)] {
                if let Some(row) = first.outer_view(i) {
                    for (k, &f) in row.iter() {
                        if let Some(krow) = second.outer_view(k) {
                            for (j, &s) in krow.iter() {
                                let e = entries.entry(j).or_default();
                                if slot == 0 {
                                    e.0.push(f * s);
                                } else {
                                    e.1.push(f * s);
                                }
                            }
                        }
                    }
                }
            }
            let terms: Vec<f64> = entries
                .into_iter()
                .filter(|(j, _)| v[*j] != 0.0)
                .map(|(j, (p, q))| (ordered_sum(p) - ordered_sum(q)) * v[j])
                .collect();
            terms.iter().sum()
        })
        .collect()
}

/// `max_v ‖(A1 A2 - A2 A1) v‖₂ / ‖v‖₂` over a bank of compactly supported
/// full-grid functions, using the matrices assembled on the cavity-free domain.
pub fn commutator_norm(
    op1: &EllipticOperator,
    op2: &EllipticOperator,
    grid: &Grid,
    testbank: &[Vec<f64>],
) -> Result<f64> {
    let cls = NodeClassification::without_cavity(grid);
    let d1 = assemble(op1, &cls)?;
    let d2 = assemble(op2, &cls)?;
    let mut worst = 0.0f64;
    for full in testbank {
        let v = d1.gather(full);
        let nv = linalg::norm2(&v);
        if nv == 0.0 {
            continue;
        }
        let c = commutator_apply(d1.matrix(), d2.matrix(), &v);
        worst = worst.max(linalg::norm2(&c) / nv);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize, CavityShape};

    fn small_grid() -> Grid {
        // 3 x 3 interior nodes
        Grid::square(0.0, 1.0, 0.25).unwrap()
    }

    #[test]
    fn identity_operator_gives_five_point_laplacian() {
        let g = small_grid();
        let cls = NodeClassification::without_cavity(&g);
        let d = assemble(&EllipticOperator::laplacian(), &cls).unwrap();
        assert_eq!(d.len(), 9);
        let m = d.matrix().to_dense();
        let h2 = 0.25 * 0.25;
        for r in 0..9 {
            for c in 0..9 {
                let (ri, rj): (usize, usize) = (r % 3, r / 3);
                let (ci, cj): (usize, usize) = (c % 3, c / 3);
                let dist = ri.abs_diff(ci) + rj.abs_diff(cj);
                let expected = match dist {
                    0 => 4.0 / h2,
                    1 => -1.0 / h2,
                    _ => 0.0,
                };
                assert_eq!(m[[r, c]], expected, "entry ({r},{c})");
            }
        }
    }

    #[test]
    fn reaction_shift_lands_on_diagonal() {
        let g = small_grid();
        let cls = NodeClassification::without_cavity(&g);
        let base = assemble(&EllipticOperator::laplacian(), &cls).unwrap().matrix().to_dense();
        let shifted = assemble(&EllipticOperator::shifted_laplacian(3.0), &cls).unwrap().matrix().to_dense();
        for r in 0..9 {
            for c in 0..9 {
                let e = base[[r, c]] + if r == c { 3.0 } else { 0.0 };
                assert_eq!(shifted[[r, c]], e);
            }
        }
    }

    #[test]
    fn hypothesis_violations_are_reported() {
        let cls = NodeClassification::without_cavity(&small_grid());
        let mut op = EllipticOperator::laplacian();
        op.a12 = 1.5.into(); // indefinite
        assert!(matches!(assemble(&op, &cls), Err(Error::HypothesisViolation(_))));
        let mut op = EllipticOperator::shifted_laplacian(1.0);
        op.c = 0.5.into();
        assert!(matches!(assemble(&op, &cls), Err(Error::HypothesisViolation(_))));
        let mut op = EllipticOperator::laplacian();
        op.b1 = 100.0.into();
        assert!(matches!(assemble(&op, &cls), Err(Error::HypothesisViolation(_))));
    }

    #[test]
    fn cross_term_needs_diagonal_closures() {
        let g = Grid::square(0.0, 1.0, 0.125).unwrap();
        let cls = NodeClassification::without_cavity(&g);
        let op = EllipticOperator::constant(1.0, 0.25, 1.0, 0.0, 0.0, 0.0);
        assert!(assemble_with(&op, &cls, OuterCondition::Neumann, &CavityCondition::Dirichlet).is_err());
    }

    #[test]
    fn symmetric_without_drift() {
        let g = Grid::square(0.25, 2.0, 1.0 / 16.0).unwrap();
        let cls = rasterize(&CavityShape::rectangle(0.5, 0.5, 1.0, 1.0), &g).unwrap();
        let mut op = EllipticOperator::laplacian();
        op.a11 = Coefficient::Preset(CoefficientPreset::OnePlusX);
        op.a12 = Coefficient::Preset(CoefficientPreset::Linear { c0: 0.1, cx: 0.05, cy: -0.02 });
        op.c = 2.0.into();
        let d = assemble(&op, &cls).unwrap();
        assert!(d.is_symmetric(1e-13));
        op.b1 = 0.5.into();
        let d = assemble(&op, &cls).unwrap();
        assert!(!d.is_symmetric(1e-13));
    }

    #[test]
    fn conormal_of_linear_field_on_left_edge() {
        let g = Grid::square(0.25, 2.0, 1.0 / 16.0).unwrap();
        let u: Vec<f64> = (0..g.len()).map(|k| g.coords(k).0).collect();
        let t = conormal_trace(&u, &EllipticOperator::laplacian(), &Region::edge(Edge::Left), &g).unwrap();
        assert_eq!(t.len(), 27);
        for v in t {
            assert!((v + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn self_commutator_is_exactly_zero() {
        let g = Grid::square(0.0, 1.0, 1.0 / 16.0).unwrap();
        let mut op = EllipticOperator::laplacian();
        op.a11 = Coefficient::Preset(CoefficientPreset::OnePlusX);
        op.b2 = 0.3.into();
        let bank = bump_bank(&g, 4, 1, 3);
        assert_eq!(commutator_norm(&op, &op, &g, &bank).unwrap(), 0.0);
    }
}
