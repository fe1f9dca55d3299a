//! Observations of a forward solution: conormal traces on a subboundary γ or
//! values on an interior patch ω, plus noise and the least-squares misfit.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::SpaceTimeField;
use crate::geometry::{Grid, NodeKind, Region};
use crate::operators::{ConormalOperator, EllipticOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationKind {
    ConormalOnGamma,
    InteriorOnOmega,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    pub level: f64,
    pub seed: u64,
}

/// Values at `locations` × `times`, stored location-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub kind: ObservationKind,
    pub region: String,
    /// Grid nodes in increasing order.
    pub locations: Vec<usize>,
    pub coords: Vec<(f64, f64)>,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Spatial quadrature weight per location.
    pub spatial_weight: f64,
    pub noise: Option<Noise>,
}

impl Observation {
    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn value(&self, loc: usize, time: usize) -> f64 {
        self.values[loc * self.times.len() + time]
    }

    /// Time series at one location.
    pub fn series(&self, loc: usize) -> &[f64] {
        let n = self.times.len();
        &self.values[loc * n..(loc + 1) * n]
    }

    pub fn rms(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    /// Keeps the stamps in `[t_lo, t_hi]`.
    pub fn crop(&self, t_lo: f64, t_hi: f64) -> Observation {
        let eps = 1e-12 * t_hi.abs().max(1.0);
        let keep: Vec<usize> = (0..self.times.len()).filter(|&i| self.times[i] >= t_lo - eps && self.times[i] <= t_hi + eps).collect();
        self.select(&(0..self.locations.len()).collect::<Vec<_>>(), &keep)
    }

    /// Restricts to the locations and stamps of `like` (matched by coordinates and time).
    pub fn restrict_to(&self, like: &Observation) -> Result<Observation> {
        let locs = like
            .coords
            .iter()
            .map(|&(x, y)| {
                self.coords
                    .iter()
                    .position(|&(a, b)| (a - x).abs() < 1e-9 && (b - y).abs() < 1e-9)
                    .ok_or_else(|| Error::ShapeMismatch(format!("no sample at ({x}, {y})")))
            })
            .collect::<Result<Vec<_>>>()?;
        let times = like
            .times
            .iter()
            .map(|&t| {
                self.times
                    .iter()
                    .position(|&s| (s - t).abs() < 1e-9 * t.abs().max(1.0))
                    .ok_or_else(|| Error::ShapeMismatch(format!("no stamp at t = {t}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = self.select(&locs, &times);
        out.locations = like.locations.clone();
        out.spatial_weight = like.spatial_weight;
        Ok(out)
    }

    fn select(&self, locs: &[usize], times: &[usize]) -> Observation {
        let n = self.times.len();
        Observation {
            kind: self.kind,
            region: self.region.clone(),
            locations: locs.iter().map(|&l| self.locations[l]).collect(),
            coords: locs.iter().map(|&l| self.coords[l]).collect(),
            times: times.iter().map(|&t| self.times[t]).collect(),
            values: locs.iter().flat_map(|&l| times.iter().map(move |&t| self.values[l * n + t])).collect(),
            spatial_weight: self.spatial_weight,
            noise: self.noise,
        }
    }

    /// Difference `self - other` on identical sample layouts.
    pub fn difference(&self, other: &Observation) -> Result<Observation> {
        check_layout(self, other)?;
        let mut out = self.clone();
        for (o, b) in out.values.iter_mut().zip(&other.values) {
            *o -= b;
        }
        Ok(out)
    }

    /// Writes `loc_index,x,y,t,value` rows after a commented header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let kind = match self.kind {
            ObservationKind::ConormalOnGamma => "conormal-on-gamma",
            ObservationKind::InteriorOnOmega => "interior-on-omega",
        };
        let seed = self.noise.map_or("none".to_string(), |n| n.seed.to_string());
        writeln!(w, "# kind={kind} region={} seed={seed}", self.region)?;
        writeln!(w, "loc_index,x,y,t,value")?;
        for (l, &(x, y)) in self.coords.iter().enumerate() {
            for (i, t) in self.times.iter().enumerate() {
                writeln!(w, "{l},{x},{y},{t},{:e}", self.value(l, i))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_layout(a: &Observation, b: &Observation) -> Result<()> {
    if a.kind != b.kind {
        return Err(Error::ShapeMismatch("observation kinds differ".into()));
    }
    if a.locations.len() != b.locations.len() || a.times.len() != b.times.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{} samples",
            a.locations.len(),
            a.times.len(),
            b.locations.len(),
            b.times.len()
        )));
    }
    let same_coords = a.coords.iter().zip(&b.coords).all(|(p, q)| (p.0 - q.0).abs() < 1e-9 && (p.1 - q.1).abs() < 1e-9);
    let same_times = a.times.iter().zip(&b.times).all(|(s, t)| (s - t).abs() <= 1e-9 * s.abs().max(1.0));
    if !same_coords || !same_times {
        return Err(Error::ShapeMismatch("sample locations or stamps differ".into()));
    }
    Ok(())
}

/// Precomputed extraction map for one region, usable step by step during a solve.
#[derive(Debug, Clone)]
pub struct Observer {
    kind: ObservationKind,
    region: String,
    grid: Grid,
    conormal: Option<ConormalOperator>,
    nodes: Vec<usize>,
}

impl Observer {
    /// `kinds` is the node classification of the field being observed.
    pub fn new(
        kind: ObservationKind,
        region: &Region,
        name: &str,
        op: &EllipticOperator,
        grid: &Grid,
        kinds: &[NodeKind],
    ) -> Result<Self> {
        match (kind, region) {
            (ObservationKind::ConormalOnGamma, Region::Subboundary { .. }) => {
                let c = ConormalOperator::new(op, region, grid)?;
                let nodes = c.nodes().iter().map(|g| g.node).collect();
                Ok(Observer { kind, region: name.into(), grid: *grid, conormal: Some(c), nodes })
            }
            (ObservationKind::InteriorOnOmega, Region::InteriorPatch { patch }) => {
                let nodes: Vec<usize> = (0..grid.len())
                    .filter(|&k| {
                        let (x, y) = grid.coords(k);
                        kinds[k] == NodeKind::Fluid && patch.contains(x, y)
                    })
                    .collect();
                if nodes.is_empty() {
                    return Err(Error::InvalidRegion("interior patch contains no fluid node".into()));
                }
                Ok(Observer { kind, region: name.into(), grid: *grid, conormal: None, nodes })
            }
            (ObservationKind::ConormalOnGamma, _) => {
                Err(Error::RegionKindMismatch("conormal observations need a subboundary".into()))
            }
            (ObservationKind::InteriorOnOmega, _) => {
                Err(Error::RegionKindMismatch("interior observations need an interior patch".into()))
            }
        }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Values at the observation nodes for one full-grid snapshot.
    pub fn sample(&self, u: &[f64]) -> Vec<f64> {
        match &self.conormal {
            Some(c) => c.apply(u),
            None => self.nodes.iter().map(|&n| u[n]).collect(),
        }
    }

    /// Collector that keeps stamps with `t >= window_start`.
    pub fn recorder(&self, window_start: f64) -> Recorder<'_> {
        Recorder { observer: self, window_start, times: Vec::new(), columns: Vec::new() }
    }

    fn spatial_weight(&self) -> f64 {
        match self.kind {
            ObservationKind::ConormalOnGamma => self.grid.h(),
            ObservationKind::InteriorOnOmega => self.grid.h() * self.grid.h(),
        }
    }

    fn assemble(&self, times: Vec<f64>, columns: Vec<Vec<f64>>) -> Observation {
        let nl = self.nodes.len();
        let nt = times.len();
        let mut values = vec![0.0; nl * nt];
        for (t, col) in columns.iter().enumerate() {
            for (l, v) in col.iter().enumerate() {
                values[l * nt + t] = *v;
            }
        }
        Observation {
            kind: self.kind,
            region: self.region.clone(),
            locations: self.nodes.clone(),
            coords: self.nodes.iter().map(|&n| self.grid.coords(n)).collect(),
            times,
            values,
            spatial_weight: self.spatial_weight(),
            noise: None,
        }
    }
}

/// Accumulates samples during a solve.
pub struct Recorder<'a> {
    observer: &'a Observer,
    window_start: f64,
    times: Vec<f64>,
    columns: Vec<Vec<f64>>,
}

impl Recorder<'_> {
    pub fn record(&mut self, t: f64, u: &[f64]) {
        if t >= self.window_start - 1e-12 * t.abs().max(1.0) {
            self.times.push(t);
            self.columns.push(self.observer.sample(u));
        }
    }

    pub fn finish(self) -> Observation {
        self.observer.assemble(self.times, self.columns)
    }
}

/// Observation of a stored field at every stored stamp.
pub fn extract(field: &SpaceTimeField, region: &Region, op: &EllipticOperator, kind: ObservationKind) -> Result<Observation> {
    let obs = Observer::new(kind, region, "region", op, &field.grid, &field.kinds)?;
    let mut rec = obs.recorder(f64::NEG_INFINITY);
    for (t, u) in field.times.iter().zip(&field.snapshots) {
        rec.record(*t, u);
    }
    Ok(rec.finish())
}

/// Adds i.i.d. Gaussian noise with standard deviation `level * rms(obs)`.
pub fn add_noise(obs: &Observation, level: f64, seed: u64) -> Result<Observation> {
    if !(level >= 0.0) {
        return Err(Error::UnvalidatedSpec("noise level must be nonnegative".into()));
    }
    let mut out = obs.clone();
    out.noise = Some(Noise { level, seed });
    let sigma = level * obs.rms();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::UnvalidatedSpec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.values.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

/// Quadrature for the misfit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weights {
    /// Every sample weighs 1.
    Unit,
    /// Trapezoidal rule in time, uniform spacing weight in space.
    #[default]
    Quadrature,
}

/// Trapezoidal weights for (possibly nonuniform) stamps.
pub fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    match n {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..n)
            .map(|i| {
                let left = if i > 0 { times[i] - times[i - 1] } else { 0.0 };
                let right = if i + 1 < n { times[i + 1] - times[i] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect(),
    }
}

/// `½ Σ w_loc w_t (a - b)²`.
pub fn misfit(a: &Observation, b: &Observation, weights: Weights) -> Result<f64> {
    check_layout(a, b)?;
    let nt = a.times.len();
    let (wt, ws) = match weights {
        Weights::Unit => (vec![1.0; nt], 1.0),
        Weights::Quadrature => (trapezoid_weights(&a.times), a.spatial_weight),
    };
    let mut total = 0.0;
    for l in 0..a.locations.len() {
        let (sa, sb) = (a.series(l), b.series(l));
        let s: f64 = sa.iter().zip(sb).zip(&wt).map(|((p, q), w)| w * (p - q) * (p - q)).sum();
        total += s;
    }
    Ok(0.5 * ws * total)
}

/// `½ Σ w_loc w_t a²`, the misfit against zero data.
pub fn energy(a: &Observation, weights: Weights) -> f64 {
    let zero = Observation { values: vec![0.0; a.values.len()], ..a.clone() };
    misfit(a, &zero, weights).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(values: Vec<f64>, n_loc: usize) -> Observation {
        let nt = values.len() / n_loc;
        Observation {
            kind: ObservationKind::ConormalOnGamma,
            region: "gamma".into(),
            locations: (0..n_loc).collect(),
            coords: (0..n_loc).map(|l| (0.0, l as f64)).collect(),
            times: (0..nt).map(|t| 0.1 * (t + 1) as f64).collect(),
            values,
            spatial_weight: 0.5,
            noise: None,
        }
    }

    #[test]
    fn constant_gap_closed_form() {
        let a = synthetic(vec![1.0; 12], 3);
        let b = synthetic(vec![1.25; 12], 3);
        assert_eq!(misfit(&a, &b, Weights::Unit).unwrap(), 0.5 * 12.0 * 0.0625);
        assert_eq!(misfit(&a, &a, Weights::Quadrature).unwrap(), 0.0);
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let a = synthetic(vec![1.0; 12], 3);
        let b = synthetic(vec![1.0; 12], 4);
        assert!(matches!(misfit(&a, &b, Weights::Unit), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let t: Vec<f64> = (0..11).map(|i| 0.1 * i as f64).collect();
        let w = trapezoid_weights(&t);
        let integral: f64 = t.iter().zip(&w).map(|(t, w)| t * w).sum();
        assert!((integral - 0.5).abs() < 1e-15);
    }

    #[test]
    fn noise_is_seeded() {
        let a = synthetic((0..100).map(|i| (i as f64).sin()).collect(), 4);
        assert_eq!(add_noise(&a, 0.0, 3).unwrap().values, a.values);
        let n1 = add_noise(&a, 0.05, 9).unwrap();
        let n2 = add_noise(&a, 0.05, 9).unwrap();
        assert_eq!(n1, n2);
        assert_ne!(n1.values, a.values);
    }

    #[test]
    fn crop_keeps_window() {
        let a = synthetic((0..20).map(f64::from).collect(), 2);
        let c = a.crop(0.35, 0.75);
        assert_eq!(c.times.len(), 4);
        assert_eq!(c.series(1), &[13.0, 14.0, 15.0, 16.0]);
    }
}
