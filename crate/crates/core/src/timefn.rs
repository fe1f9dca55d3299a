//! Scalar time profiles: piecewise polynomials with exact integration, plus a
//! few closed forms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which one-sided limit to take at a breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Polynomial in absolute time, ascending powers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn zero() -> Self {
        Poly(Vec::new())
    }

    pub fn constant(c: f64) -> Self {
        Poly(vec![c])
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    pub fn degree(&self) -> usize {
        self.0.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }

    pub fn derivative(&self) -> Poly {
        Poly(self.0.iter().enumerate().skip(1).map(|(k, &c)| k as f64 * c).collect())
    }

    /// Antiderivative vanishing at `t = anchor`.
    pub fn integral_from(&self, anchor: f64) -> Poly {
        let mut c = vec![0.0];
        c.extend(self.0.iter().enumerate().map(|(k, &a)| a / (k + 1) as f64));
        let mut p = Poly(c);
        let shift = p.eval(anchor);
        p.0[0] -= shift;
        p
    }

    pub fn add_constant(mut self, c: f64) -> Poly {
        if self.0.is_empty() {
            self.0.push(0.0);
        }
        self.0[0] += c;
        self
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly(self.0.iter().map(|c| c * s).collect())
    }
}

/// Piecewise polynomial on the real line: `pieces[0]` on `(-inf, breaks[0])`,
/// `pieces[k]` on `(breaks[k-1], breaks[k])`, the last piece on `(breaks[n-1], inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewisePoly {
    pub breaks: Vec<f64>,
    pub pieces: Vec<Poly>,
}

impl PiecewisePoly {
    pub fn new(breaks: Vec<f64>, pieces: Vec<Poly>) -> Result<Self> {
        let p = PiecewisePoly { breaks, pieces };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pieces.len() != self.breaks.len() + 1 {
            return Err(Error::UnvalidatedSpec(format!(
                "{} breakpoints need {} pieces, got {}",
                self.breaks.len(),
                self.breaks.len() + 1,
                self.pieces.len()
            )));
        }
        if self.breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::UnvalidatedSpec("breakpoints must be strictly increasing".into()));
        }
        Ok(())
    }

    fn piece_index(&self, t: f64, side: Side) -> usize {
        match side {
            Side::Left => self.breaks.iter().take_while(|&&b| b < t).count(),
            Side::Right => self.breaks.iter().take_while(|&&b| b <= t).count(),
        }
    }

    pub fn eval(&self, t: f64, side: Side) -> f64 {
        self.pieces[self.piece_index(t, side)].eval(t)
    }

    pub fn derivative(&self) -> PiecewisePoly {
        PiecewisePoly { breaks: self.breaks.clone(), pieces: self.pieces.iter().map(Poly::derivative).collect() }
    }

    /// Antiderivative that vanishes on the first piece's left end and is
    /// continuous across every breakpoint. Requires the first piece to be zero.
    pub fn integral(&self) -> PiecewisePoly {
        let mut pieces = Vec::with_capacity(self.pieces.len());
        let first_anchor = self.breaks.first().copied().unwrap_or(0.0);
        pieces.push(self.pieces[0].integral_from(first_anchor));
        for (k, &b) in self.breaks.iter().enumerate() {
            let left_value = pieces[k].eval(b);
            pieces.push(self.pieces[k + 1].integral_from(b).add_constant(left_value));
        }
        PiecewisePoly { breaks: self.breaks.clone(), pieces }
    }

    /// `eval(b, Right) - eval(b, Left)` at every breakpoint.
    pub fn jumps(&self) -> Vec<f64> {
        self.breaks.iter().enumerate().map(|(k, &b)| self.pieces[k + 1].eval(b) - self.pieces[k].eval(b)).collect()
    }

    pub fn max_degree(&self) -> usize {
        self.pieces.iter().map(Poly::degree).max().unwrap_or(0)
    }

    /// Lowest derivative order that jumps at some breakpoint inside `(lo, hi)`,
    /// with that breakpoint. `None` when the function is smooth there.
    pub fn first_discontinuity(&self, lo: f64, hi: f64) -> Option<(usize, f64)> {
        let mut d = self.clone();
        for order in 0..=self.max_degree() + 1 {
            for (b, j) in d.breaks.iter().zip(d.jumps()) {
                if *b > lo && *b < hi && j.abs() > 1e-12 * (1.0 + d.scale_at(*b)) {
                    return Some((order, *b));
                }
            }
            d = d.derivative();
        }
        None
    }

    fn scale_at(&self, t: f64) -> f64 {
        self.eval(t, Side::Left).abs().max(self.eval(t, Side::Right).abs())
    }
}

fn smoothstep_inf(s: f64) -> f64 {
    // C-infinity transition from 0 (s <= 0) to 1 (s >= 1)
    let phi = |z: f64| if z > 0.0 { (-1.0 / z).exp() } else { 0.0 };
    let (a, b) = (phi(s), phi(1.0 - s));
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Time profile `μ(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TimeProfile {
    Constant { value: f64 },
    /// Single polynomial on the whole line.
    Polynomial { coeffs: Vec<f64> },
    PiecewisePolynomial(PiecewisePoly),
    /// `amplitude * exp(-rate t)`
    Exponential { amplitude: f64, rate: f64 },
    /// C-infinity ramp from `from` to `to` over `[center - width/2, center + width/2]`;
    /// a sharp jump at `center` when `width = 0`.
    SmoothSwitch { from: f64, to: f64, center: f64, width: f64 },
}

impl TimeProfile {
    pub fn one() -> Self {
        TimeProfile::Constant { value: 1.0 }
    }

    pub fn linear() -> Self {
        TimeProfile::Polynomial { coeffs: vec![0.0, 1.0] }
    }

    pub fn eval(&self, t: f64, side: Side) -> f64 {
        match self {
            TimeProfile::Constant { value } => *value,
            TimeProfile::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c),
            TimeProfile::PiecewisePolynomial(p) => p.eval(t, side),
            TimeProfile::Exponential { amplitude, rate } => amplitude * (-rate * t).exp(),
            TimeProfile::SmoothSwitch { from, to, center, width } => {
                let s = if *width > 0.0 {
                    smoothstep_inf((t - (center - 0.5 * width)) / width)
                } else if t < *center || (t == *center && side == Side::Left) {
                    0.0
                } else {
                    1.0
                };
                from + (to - from) * s
            }
        }
    }

    /// Times where the profile may be discontinuous; these must lie on the time grid.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            TimeProfile::PiecewisePolynomial(p) => p.breaks.clone(),
            TimeProfile::SmoothSwitch { center, width, .. } if *width == 0.0 => vec![*center],
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TimeProfile::PiecewisePolynomial(p) => p.validate(),
            TimeProfile::SmoothSwitch { width, .. } if !(*width >= 0.0) => {
                Err(Error::UnvalidatedSpec("ramp width must be nonnegative".into()))
            }
            _ => Ok(()),
        }
    }

    /// Piecewise-polynomial view, if the profile is one.
    pub fn as_piecewise(&self) -> Option<PiecewisePoly> {
        match self {
            TimeProfile::Constant { value } => Some(PiecewisePoly { breaks: vec![], pieces: vec![Poly::constant(*value)] }),
            TimeProfile::Polynomial { coeffs } => Some(PiecewisePoly { breaks: vec![], pieces: vec![Poly(coeffs.clone())] }),
            TimeProfile::PiecewisePolynomial(p) => Some(p.clone()),
            TimeProfile::SmoothSwitch { from, to, center, width } if *width == 0.0 => Some(PiecewisePoly {
                breaks: vec![*center],
                pieces: vec![Poly::constant(*from), Poly::constant(*to)],
            }),
            _ => None,
        }
    }

    /// Time derivative; `None` for profiles without a closed-form derivative here.
    pub fn derivative(&self) -> Option<TimeProfile> {
        match self {
            TimeProfile::Exponential { amplitude, rate } => {
                Some(TimeProfile::Exponential { amplitude: -amplitude * rate, rate: *rate })
            }
            TimeProfile::SmoothSwitch { width, .. } if *width > 0.0 => None,
            other => other.as_piecewise().map(|p| TimeProfile::PiecewisePolynomial(p.derivative())),
        }
    }
}
