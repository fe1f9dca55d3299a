//! Outer domain, candidate cavities, observation regions and their
//! rasterization onto a uniform node grid.
//!
//! Cavity boundaries are staircase-approximated: a node belongs to the cavity
//! when its center lies in the closed shape.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GRID_TOL: f64 = 1e-12;
/// Angular samples used for clearance, positivity and polyline computations.
const BOUNDARY_SAMPLES: usize = 1024;

/// Uniform node grid over the rectangle `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    h: f64,
    nx: usize,
    ny: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub h: f64,
}

impl TryFrom<GridSpec> for Grid {
    type Error = Error;
    fn try_from(s: GridSpec) -> Result<Self> {
        Grid::new(s.x_min, s.x_max, s.y_min, s.y_max, s.h)
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> Self {
        GridSpec { x_min: g.x_min, x_max: g.x_max, y_min: g.y_min, y_max: g.y_max, h: g.h }
    }
}

fn cells(len: f64, h: f64) -> Option<usize> {
    let n = len / h;
    let r = n.round();
    if r >= 2.0 && (n - r).abs() <= GRID_TOL * n.max(1.0) {
        Some(r as usize)
    } else {
        None
    }
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing h = {h} must be positive")));
        }
        if !(x_max > x_min && y_max > y_min) {
            return Err(Error::InvalidGrid("empty domain".into()));
        }
        let cx = cells(x_max - x_min, h)
            .ok_or_else(|| Error::InvalidGrid(format!("h = {h} does not divide the x extent")))?;
        let cy = cells(y_max - y_min, h)
            .ok_or_else(|| Error::InvalidGrid(format!("h = {h} does not divide the y extent")))?;
        Ok(Grid { x_min, x_max, y_min, y_max, h, nx: cx + 1, ny: cy + 1 })
    }

    pub fn square(lo: f64, hi: f64, h: f64) -> Result<Self> {
        Self::new(lo, hi, lo, hi, h)
    }

    /// Same domain with half the spacing; every node of `self` is a node of the result.
    pub fn refined(&self) -> Grid {
        Grid { h: self.h / 2.0, nx: 2 * self.nx - 1, ny: 2 * self.ny - 1, ..*self }
    }

    pub fn with_spacing(&self, h: f64) -> Result<Grid> {
        Grid::new(self.x_min, self.x_max, self.y_min, self.y_max, h)
    }

    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.nx {
            self.x_max
        } else {
            self.x_min + i as f64 * self.h
        }
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        if j + 1 == self.ny {
            self.y_max
        } else {
            self.y_min + j as f64 * self.h
        }
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (f64, f64) {
        let (i, j) = self.ij(k);
        (self.x(i), self.y(j))
    }

    #[inline]
    pub fn on_edge(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    /// Node index nearest to `(x, y)` if it coincides with a node within tolerance.
    pub fn node_at(&self, x: f64, y: f64) -> Option<usize> {
        let fi = (x - self.x_min) / self.h;
        let fj = (y - self.y_min) / self.h;
        let (ri, rj) = (fi.round(), fj.round());
        let tol = 1e-9;
        if (fi - ri).abs() > tol || (fj - rj).abs() > tol || ri < 0.0 || rj < 0.0 {
            return None;
        }
        let (i, j) = (ri as usize, rj as usize);
        (i < self.nx && j < self.ny).then(|| self.index(i, j))
    }

    /// 4-neighbours of `(i, j)` that lie on the grid.
    pub fn neighbours4(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)].into_iter().filter_map(move |(di, dj)| {
            let (a, b) = (i as isize + di, j as isize + dj);
            (a >= 0 && b >= 0 && a < nx && b < ny).then_some((a as usize, b as usize))
        })
    }

    /// Distance of a point to the outer boundary (positive inside).
    pub fn distance_to_boundary(&self, x: f64, y: f64) -> f64 {
        (x - self.x_min).min(self.x_max - x).min(y - self.y_min).min(self.y_max - y)
    }
}

/// Star-shaped curve `r(θ) = r0 + Σ a_k cos kθ + b_k sin kθ` around `(cx, cy)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarShape {
    pub cx: f64,
    pub cy: f64,
    pub r0: f64,
    #[serde(default)]
    pub a: Vec<f64>,
    #[serde(default)]
    pub b: Vec<f64>,
}

impl StarShape {
    pub fn circle(cx: f64, cy: f64, r: f64) -> Self {
        StarShape { cx, cy, r0: r, a: Vec::new(), b: Vec::new() }
    }

    pub fn harmonics(&self) -> usize {
        self.a.len().max(self.b.len())
    }

    pub fn radius(&self, theta: f64) -> f64 {
        let mut r = self.r0;
        for (k, &ak) in self.a.iter().enumerate() {
            r += ak * ((k + 1) as f64 * theta).cos();
        }
        for (k, &bk) in self.b.iter().enumerate() {
            r += bk * ((k + 1) as f64 * theta).sin();
        }
        r
    }
}

/// A candidate cavity D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CavityShape {
    AxisRectangle { x0: f64, y0: f64, x1: f64, y1: f64 },
    StarShaped(StarShape),
}

impl CavityShape {
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        CavityShape::AxisRectangle { x0, y0, x1, y1 }
    }

    pub fn circle(cx: f64, cy: f64, r: f64) -> Self {
        CavityShape::StarShaped(StarShape::circle(cx, cy, r))
    }

    /// Membership of the closed shape (boundary included).
    pub fn contains_closed(&self, x: f64, y: f64) -> bool {
        match self {
            CavityShape::AxisRectangle { x0, y0, x1, y1 } => {
                let t = GRID_TOL * (1.0 + x.abs().max(y.abs()));
                x >= x0 - t && x <= x1 + t && y >= y0 - t && y <= y1 + t
            }
            CavityShape::StarShaped(s) => {
                let (dx, dy) = (x - s.cx, y - s.cy);
                let r = dx.hypot(dy);
                let rho = s.radius(dy.atan2(dx));
                rho > 0.0 && r <= rho * (1.0 + GRID_TOL) + GRID_TOL
            }
        }
    }

    /// Membership of the open shape.
    pub fn contains_strict(&self, x: f64, y: f64) -> bool {
        match self {
            CavityShape::AxisRectangle { x0, y0, x1, y1 } => {
                let t = GRID_TOL * (1.0 + x.abs().max(y.abs()));
                x > x0 + t && x < x1 - t && y > y0 + t && y < y1 - t
            }
            CavityShape::StarShaped(s) => {
                let (dx, dy) = (x - s.cx, y - s.cy);
                let r = dx.hypot(dy);
                r < s.radius(dy.atan2(dx)) * (1.0 - GRID_TOL) - GRID_TOL
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            CavityShape::AxisRectangle { x0, y0, x1, y1 } => {
                if !(x1 > x0 && y1 > y0) {
                    return Err(Error::EmptyCavity);
                }
            }
            CavityShape::StarShaped(s) => {
                let radii: Vec<f64> = (0..BOUNDARY_SAMPLES)
                    .map(|n| s.radius(2.0 * PI * n as f64 / BOUNDARY_SAMPLES as f64))
                    .collect();
                if radii.iter().all(|&r| r <= 0.0) {
                    return Err(Error::EmptyCavity);
                }
                if radii.iter().any(|&r| r <= 0.0) {
                    return Err(Error::InvalidShape("star radius is not positive for every angle".into()));
                }
            }
        }
        Ok(())
    }

    /// Closed boundary polyline (counter-clockwise, first point not repeated).
    pub fn boundary_polyline(&self, samples: usize) -> Vec<(f64, f64)> {
        match self {
            CavityShape::AxisRectangle { x0, y0, x1, y1 } => {
                let per_side = (samples / 4).max(1);
                let corners = [(*x0, *y0), (*x1, *y0), (*x1, *y1), (*x0, *y1)];
                let mut pts = Vec::with_capacity(4 * per_side);
                for c in 0..4 {
                    let (ax, ay) = corners[c];
                    let (bx, by) = corners[(c + 1) % 4];
                    for s in 0..per_side {
                        let t = s as f64 / per_side as f64;
                        pts.push((ax + t * (bx - ax), ay + t * (by - ay)));
                    }
                }
                pts
            }
            CavityShape::StarShaped(s) => (0..samples)
                .map(|n| {
                    let th = 2.0 * PI * n as f64 / samples as f64;
                    let r = s.radius(th);
                    (s.cx + r * th.cos(), s.cy + r * th.sin())
                })
                .collect(),
        }
    }

    pub fn perimeter(&self) -> f64 {
        match self {
            CavityShape::AxisRectangle { x0, y0, x1, y1 } => 2.0 * ((x1 - x0) + (y1 - y0)),
            CavityShape::StarShaped(_) => {
                let p = self.boundary_polyline(BOUNDARY_SAMPLES);
                (0..p.len())
                    .map(|k| {
                        let (a, b) = (p[k], p[(k + 1) % p.len()]);
                        (b.0 - a.0).hypot(b.1 - a.1)
                    })
                    .sum()
            }
        }
    }

    /// Smallest distance from the closed shape to the boundary of `grid`'s rectangle.
    pub fn clearance(&self, grid: &Grid) -> f64 {
        match self {
            CavityShape::AxisRectangle { x0, y0, x1, y1 } => {
                (x0 - grid.x_min).min(grid.x_max - x1).min(y0 - grid.y_min).min(grid.y_max - y1)
            }
            CavityShape::StarShaped(_) => self
                .boundary_polyline(BOUNDARY_SAMPLES)
                .iter()
                .map(|&(x, y)| grid.distance_to_boundary(x, y))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// True when the closed shape intersects the closed axis rectangle.
    pub fn meets_rect(&self, rx0: f64, ry0: f64, rx1: f64, ry1: f64) -> bool {
        match self {
            CavityShape::AxisRectangle { x0, y0, x1, y1 } => {
                x0 <= &rx1 && &rx0 <= x1 && y0 <= &ry1 && &ry0 <= y1
            }
            CavityShape::StarShaped(s) => {
                let inside = |x: f64, y: f64| x >= rx0 && x <= rx1 && y >= ry0 && y <= ry1;
                let poly = self.boundary_polyline(BOUNDARY_SAMPLES);
                poly.iter().any(|&(x, y)| inside(x, y))
                    || inside(s.cx, s.cy)
                    || [(rx0, ry0), (rx1, ry0), (rx1, ry1), (rx0, ry1)]
                        .iter()
                        .any(|&(x, y)| self.contains_closed(x, y))
            }
        }
    }

    /// True when the closed shape intersects the closed disc.
    pub fn meets_disc(&self, cx: f64, cy: f64, r: f64) -> bool {
        if self.contains_closed(cx, cy) {
            return true;
        }
        polyline_distance(&self.boundary_polyline(BOUNDARY_SAMPLES), (cx, cy)) <= r
    }
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

fn polyline_distance(poly: &[(f64, f64)], p: (f64, f64)) -> f64 {
    (0..poly.len())
        .map(|k| point_segment_distance(p, poly[k], poly[(k + 1) % poly.len()]))
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric Hausdorff distance between two cavity boundaries.
pub fn hausdorff_distance(a: &CavityShape, b: &CavityShape) -> f64 {
    let pa = a.boundary_polyline(720);
    let pb = b.boundary_polyline(720);
    let one_sided = |from: &[(f64, f64)], to: &[(f64, f64)]| {
        from.iter().map(|&p| polyline_distance(to, p)).fold(0.0f64, f64::max)
    };
    one_sided(&pa, &pb).max(one_sided(&pb, &pa))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Fluid,
    CavityInterior,
    CavityBoundary,
    OuterBoundary,
}

impl NodeKind {
    pub fn is_cavity(self) -> bool {
        matches!(self, NodeKind::CavityInterior | NodeKind::CavityBoundary)
    }
}

/// Role of every grid node for one cavity configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeClassification {
    grid: Grid,
    kinds: Vec<NodeKind>,
    fluid_nodes: Vec<usize>,
}

impl NodeClassification {
    /// Classification of the cavity-free domain.
    pub fn without_cavity(grid: &Grid) -> Self {
        let kinds = (0..grid.len())
            .map(|k| {
                let (i, j) = grid.ij(k);
                if grid.on_edge(i, j) {
                    NodeKind::OuterBoundary
                } else {
                    NodeKind::Fluid
                }
            })
            .collect();
        Self::from_kinds(*grid, kinds)
    }

    fn from_kinds(grid: Grid, kinds: Vec<NodeKind>) -> Self {
        let fluid_nodes = kinds.iter().enumerate().filter(|(_, k)| **k == NodeKind::Fluid).map(|(n, _)| n).collect();
        NodeClassification { grid, kinds, fluid_nodes }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.kinds[node]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    /// Fluid nodes in increasing node order; position in this list is the unknown index.
    pub fn fluid_nodes(&self) -> &[usize] {
        &self.fluid_nodes
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }

    pub fn nodes_of(&self, kind: NodeKind) -> Vec<usize> {
        self.kinds.iter().enumerate().filter(|(_, &k)| k == kind).map(|(n, _)| n).collect()
    }

    pub fn cavity_nodes(&self) -> Vec<usize> {
        self.kinds.iter().enumerate().filter(|(_, k)| k.is_cavity()).map(|(n, _)| n).collect()
    }

    /// Number of fluid nodes reachable from the outer boundary through fluid 4-neighbours.
    pub fn reachable_fluid(&self) -> usize {
        let g = &self.grid;
        let mut seen = vec![false; g.len()];
        let mut queue = VecDeque::new();
        for k in 0..g.len() {
            if self.kinds[k] == NodeKind::OuterBoundary {
                seen[k] = true;
                queue.push_back(k);
            }
        }
        let mut reached = 0;
        while let Some(k) = queue.pop_front() {
            let (i, j) = g.ij(k);
            for (a, b) in g.neighbours4(i, j) {
                let n = g.index(a, b);
                if !seen[n] && self.kinds[n] == NodeKind::Fluid {
                    seen[n] = true;
                    reached += 1;
                    queue.push_back(n);
                }
            }
        }
        reached
    }
}

/// Labels every node of `grid` for the cavity `shape`.
pub fn rasterize(shape: &CavityShape, grid: &Grid) -> Result<NodeClassification> {
    shape.validate()?;
    let required = 2.0 * grid.h();
    let distance = shape.clearance(grid);
    if distance < required * (1.0 - 1e-9) {
        return Err(Error::ClearanceViolation { distance, required });
    }
    let inside: Vec<bool> = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.ij(k);
            !grid.on_edge(i, j) && {
                let (x, y) = grid.coords(k);
                shape.contains_closed(x, y)
            }
        })
        .collect();
    if !inside.iter().any(|&b| b) {
        return Err(Error::EmptyCavity);
    }
    let kinds = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.ij(k);
            if grid.on_edge(i, j) {
                NodeKind::OuterBoundary
            } else if !inside[k] {
                NodeKind::Fluid
            } else if grid.neighbours4(i, j).any(|(a, b)| !inside[grid.index(a, b)]) {
                NodeKind::CavityBoundary
            } else {
                NodeKind::CavityInterior
            }
        })
        .collect();
    let cls = NodeClassification::from_kinds(*grid, kinds);
    let total = cls.fluid_nodes.len();
    let reached = cls.reachable_fluid();
    if reached != total {
        return Err(Error::DisconnectedFluid { reached, total });
    }
    Ok(cls)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Left, Edge::Right, Edge::Bottom, Edge::Top];

    /// Outward unit normal.
    pub fn normal(self) -> (f64, f64) {
        match self {
            Edge::Left => (-1.0, 0.0),
            Edge::Right => (1.0, 0.0),
            Edge::Bottom => (0.0, -1.0),
            Edge::Top => (0.0, 1.0),
        }
    }
}

/// Part of one edge of the outer rectangle, given by a range of the tangential coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSegment {
    pub edge: Edge,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<f64>,
}

impl EdgeSegment {
    pub fn full(edge: Edge) -> Self {
        EdgeSegment { edge, from: None, to: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Patch {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disc { cx: f64, cy: f64, r: f64 },
}

impl Patch {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let t = 1e-12;
        match *self {
            Patch::Rect { x0, y0, x1, y1 } => x >= x0 - t && x <= x1 + t && y >= y0 - t && y <= y1 + t,
            Patch::Disc { cx, cy, r } => (x - cx).hypot(y - cy) <= r + t,
        }
    }

    pub fn meets(&self, shape: &CavityShape) -> bool {
        match *self {
            Patch::Rect { x0, y0, x1, y1 } => shape.meets_rect(x0, y0, x1, y1),
            Patch::Disc { cx, cy, r } => shape.meets_disc(cx, cy, r),
        }
    }
}

/// Observation or activation region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Region {
    /// Subboundary γ: a union of outer-edge segments.
    Subboundary { segments: Vec<EdgeSegment> },
    /// Interior patch ω.
    InteriorPatch { patch: Patch },
    /// Activation zone where sources are allowed to act.
    ActivationZone { patch: Patch },
}

/// A node of γ together with the edge that fixes its outward normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GammaNode {
    pub node: usize,
    pub edge: Edge,
}

impl Region {
    pub fn whole_boundary() -> Self {
        Region::Subboundary { segments: Edge::ALL.iter().map(|&e| EdgeSegment::full(e)).collect() }
    }

    pub fn edge(edge: Edge) -> Self {
        Region::Subboundary { segments: vec![EdgeSegment::full(edge)] }
    }

    /// Nodes of γ in increasing node order. Corners (no unique normal) are excluded.
    pub fn gamma_nodes(&self, grid: &Grid) -> Result<Vec<GammaNode>> {
        let Region::Subboundary { segments } = self else {
            return Err(Error::RegionKindMismatch("not a subboundary".into()));
        };
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut out = Vec::new();
        for seg in segments {
            let lo = seg.from.unwrap_or(f64::NEG_INFINITY) - 1e-12;
            let hi = seg.to.unwrap_or(f64::INFINITY) + 1e-12;
            let nodes: Vec<usize> = match seg.edge {
                Edge::Left | Edge::Right => {
                    let i = if seg.edge == Edge::Left { 0 } else { nx - 1 };
                    (1..ny - 1).filter(|&j| (lo..=hi).contains(&grid.y(j))).map(|j| grid.index(i, j)).collect()
                }
                Edge::Bottom | Edge::Top => {
                    let j = if seg.edge == Edge::Bottom { 0 } else { ny - 1 };
                    (1..nx - 1).filter(|&i| (lo..=hi).contains(&grid.x(i))).map(|i| grid.index(i, j)).collect()
                }
            };
            out.extend(nodes.into_iter().map(|node| GammaNode { node, edge: seg.edge }));
        }
        out.sort_by_key(|g| g.node);
        out.dedup_by_key(|g| g.node);
        if out.is_empty() {
            return Err(Error::EmptyGamma);
        }
        Ok(out)
    }

    /// Fluid nodes inside an interior patch or activation zone, in increasing node order.
    pub fn patch_nodes(&self, cls: &NodeClassification) -> Result<Vec<usize>> {
        let patch = match self {
            Region::InteriorPatch { patch } | Region::ActivationZone { patch } => patch,
            Region::Subboundary { .. } => {
                return Err(Error::RegionKindMismatch("subboundary has no interior nodes".into()))
            }
        };
        let g = cls.grid();
        let nodes: Vec<usize> = cls
            .fluid_nodes()
            .iter()
            .copied()
            .filter(|&k| {
                let (x, y) = g.coords(k);
                patch.contains(x, y)
            })
            .collect();
        if nodes.is_empty() {
            return Err(Error::InvalidRegion("patch contains no fluid node".into()));
        }
        Ok(nodes)
    }

    /// Checks that an interior patch or activation zone stays away from every candidate cavity.
    pub fn check_disjoint(&self, cavities: &[CavityShape]) -> Result<()> {
        match self {
            Region::InteriorPatch { patch } | Region::ActivationZone { patch } => {
                if cavities.iter().any(|c| patch.meets(c)) {
                    return Err(Error::InvalidRegion("region overlaps a candidate cavity".into()));
                }
                Ok(())
            }
            Region::Subboundary { .. } => Ok(()),
        }
    }
}

/// Finite-dimensional admissible class: star shapes with `harmonics` Fourier modes
/// inside a parameter box. Parameter order: `cx, cy, r0, a1, b1, a2, b2, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameterization {
    pub harmonics: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamShape {
    pub shape: CavityShape,
    /// Parameters after clamping into the box.
    pub params: Vec<f64>,
    pub clamped: bool,
}

impl Parameterization {
    pub fn dim_for(harmonics: usize) -> usize {
        3 + 2 * harmonics
    }

    pub fn dim(&self) -> usize {
        Self::dim_for(self.harmonics)
    }

    /// Box with center range `[c_lo, c_hi]^2`, radius range `[r_lo, r_hi]` and
    /// Fourier coefficients in `[-coef, coef]`.
    pub fn new_box(harmonics: usize, c_lo: f64, c_hi: f64, r_lo: f64, r_hi: f64, coef: f64) -> Self {
        let mut lower = vec![c_lo, c_lo, r_lo];
        let mut upper = vec![c_hi, c_hi, r_hi];
        for _ in 0..2 * harmonics {
            lower.push(-coef);
            upper.push(coef);
        }
        Parameterization { harmonics, lower, upper }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.lower.len() != d || self.upper.len() != d {
            return Err(Error::BadArity { expected: d, got: self.lower.len().min(self.upper.len()) });
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidShape("parameter box has lower > upper".into()));
        }
        Ok(())
    }

    pub fn clamp(&self, p: &[f64]) -> (Vec<f64>, bool) {
        let mut clamped = false;
        let q = p
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| {
                let c = v.clamp(lo, hi);
                clamped |= c != v;
                c
            })
            .collect();
        (q, clamped)
    }

    pub fn params_of(&self, shape: &StarShape) -> Vec<f64> {
        let mut p = vec![shape.cx, shape.cy, shape.r0];
        for k in 0..self.harmonics {
            p.push(shape.a.get(k).copied().unwrap_or(0.0));
            p.push(shape.b.get(k).copied().unwrap_or(0.0));
        }
        p
    }
}

/// Builds the star-shaped cavity described by `p`, clamping it into the box first.
pub fn shape_from_params(p: &[f64], meta: &Parameterization) -> Result<ParamShape> {
    if p.len() != meta.dim() {
        return Err(Error::BadArity { expected: meta.dim(), got: p.len() });
    }
    let (params, clamped) = meta.clamp(p);
    let (a, b) = (0..meta.harmonics).map(|k| (params[3 + 2 * k], params[4 + 2 * k])).unzip();
    let star = StarShape { cx: params[0], cy: params[1], r0: params[2], a, b };
    Ok(ParamShape { shape: CavityShape::StarShaped(star), params, clamped })
}
