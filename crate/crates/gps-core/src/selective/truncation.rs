//! Quadratic inequalities in the perturbation scale and their exact
//! solution sets: finite unions of closed intervals on `[0, inf)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient magnitudes below `QUAD_ZERO_TOL * scale` are treated as zero
/// when classifying a quadratic; near-tangent discriminants in
/// `(-QUAD_ZERO_TOL * scale^2, 0)` count as tangent.
const QUAD_ZERO_TOL: f64 = 1e-12;

/// Slack for asserting that the observed scale lies inside its own
/// truncation set.
const FEASIBILITY_SLACK: f64 = 1e-9;

/// One inequality `a phi^2 + b phi + c <= 0` arising from iteration `m`,
/// unit `i`, competing group `g` of the recorded trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticConstraint {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Iteration index (1-based, matching the trace).
    pub m: usize,
    /// Unit index (zero-based).
    pub i: usize,
    /// Competing group (zero-based).
    pub g: usize,
    /// Magnitude of the criteria the inequality compares; criterion
    /// differences within `TIE_TOL * scale` count as ties, matching the
    /// assignment step's deterministic tie rule.
    pub scale: f64,
}

/// Tie tolerance shared with the assignment steps.
pub const TIE_TOL: f64 = 1e-12;

impl QuadraticConstraint {
    pub fn new(a: f64, b: f64, c: f64, m: usize, i: usize, g: usize, scale: f64) -> Self {
        Self { a, b, c, m, i, g, scale: scale.max(1.0) }
    }

    pub fn evaluate(&self, phi: f64) -> f64 {
        (self.a * phi + self.b) * phi + self.c
    }

    /// The inequality with the tie slack folded into the constant term.
    fn effective(&self) -> (f64, f64, f64) {
        (self.a, self.b, self.c - TIE_TOL * self.scale)
    }
}

/// A closed interval on the extended half-line; `hi = f64::INFINITY` encodes
/// an unbounded interval.
pub type Interval = (f64, f64);

/// Sorted disjoint closed intervals on `[0, inf)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationSet {
    intervals: Vec<Interval>,
}

impl TruncationSet {
    /// The full half-line `[0, inf)`.
    pub fn full() -> Self {
        Self {
            intervals: vec![(0.0, f64::INFINITY)],
        }
    }

    pub fn from_intervals(mut intervals: Vec<Interval>) -> Result<Self> {
        intervals.retain(|&(lo, hi)| hi >= lo);
        intervals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in intervals.windows(2) {
            if w[0].1 >= w[1].0 {
                return Err(Error::InvalidInput(
                    "truncation intervals overlap or touch; merge first".into(),
                ));
            }
        }
        if intervals.iter().any(|&(lo, _)| lo < 0.0) {
            return Err(Error::InvalidInput("truncation intervals must lie in [0, inf)".into()));
        }
        Ok(Self { intervals })
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.intervals == [(0.0, f64::INFINITY)]
    }

    pub fn contains(&self, phi: f64, tol: f64) -> bool {
        self.intervals
            .iter()
            .any(|&(lo, hi)| phi >= lo - tol && phi <= hi + tol)
    }

    /// Total length of the bounded part (diagnostic only).
    pub fn bounded_length(&self) -> f64 {
        self.intervals
            .iter()
            .filter(|&&(_, hi)| hi.is_finite())
            .map(|&(lo, hi)| hi - lo)
            .sum()
    }

    /// Set intersection.
    pub fn intersect(&self, other: &TruncationSet) -> TruncationSet {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.intervals.len() && j < other.intervals.len() {
            let (alo, ahi) = self.intervals[i];
            let (blo, bhi) = other.intervals[j];
            let lo = alo.max(blo);
            let hi = ahi.min(bhi);
            if lo <= hi {
                out.push((lo, hi));
            }
            if ahi <= bhi {
                i += 1;
            } else {
                j += 1;
            }
        }
        TruncationSet { intervals: out }
    }

    /// Does `other` contain every interval of `self`?
    pub fn subset_of(&self, other: &TruncationSet, tol: f64) -> bool {
        self.intervals.iter().all(|&(lo, hi)| {
            other.intervals.iter().any(|&(olo, ohi)| {
                lo >= olo - tol && (hi <= ohi + tol || (ohi.is_infinite() && hi.is_infinite()))
            })
        })
    }
}

/// Serialized form: pairs `[lo, hi]` with `null` for an unbounded upper end.
impl Serialize for TruncationSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<(f64, Option<f64>)> = self
            .intervals
            .iter()
            .map(|&(lo, hi)| (lo, hi.is_finite().then_some(hi)))
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TruncationSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<(f64, Option<f64>)> = Vec::deserialize(deserializer)?;
        let intervals = rows
            .into_iter()
            .map(|(lo, hi)| (lo, hi.unwrap_or(f64::INFINITY)))
            .collect();
        TruncationSet::from_intervals(intervals).map_err(serde::de::Error::custom)
    }
}

/// Solution of a single `a phi^2 + b phi + c <= 0` over all of R, by case
/// analysis with tangency tolerances. Returns sorted disjoint intervals
/// (using `-inf`/`inf` sentinels).
fn solve_quadratic_leq(a: f64, b: f64, c: f64) -> Vec<Interval> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        // 0 <= 0 everywhere
        return vec![(f64::NEG_INFINITY, f64::INFINITY)];
    }
    let all = vec![(f64::NEG_INFINITY, f64::INFINITY)];
    let none = Vec::new();

    if a.abs() <= QUAD_ZERO_TOL * scale {
        // Linear case b phi + c <= 0.
        if b.abs() <= QUAD_ZERO_TOL * scale {
            return if c <= QUAD_ZERO_TOL * scale { all } else { none };
        }
        let root = -c / b;
        return if b > 0.0 {
            vec![(f64::NEG_INFINITY, root)]
        } else {
            vec![(root, f64::INFINITY)]
        };
    }

    let disc = b * b - 4.0 * a * c;
    let disc_tol = QUAD_ZERO_TOL * scale * scale;
    if disc <= 0.0 {
        if disc > -disc_tol {
            // Tangent: a single touching point.
            let root = -b / (2.0 * a);
            return if a > 0.0 { vec![(root, root)] } else { all };
        }
        return if a > 0.0 { none } else { all };
    }
    let sq = disc.sqrt();
    // Numerically stable root pair.
    let q = -0.5 * (b + b.signum() * sq);
    let (mut r1, mut r2) = if b == 0.0 {
        let r = sq / (2.0 * a).abs();
        (-r, r)
    } else {
        (q / a, c / q)
    };
    if r1 > r2 {
        std::mem::swap(&mut r1, &mut r2);
    }
    if a > 0.0 {
        vec![(r1, r2)]
    } else {
        vec![(f64::NEG_INFINITY, r1), (r2, f64::INFINITY)]
    }
}

/// Exact solution set of `a phi^2 + b phi + c <= 0` restricted to `[0, inf)`.
pub fn quadratic_solution_set(a: f64, b: f64, c: f64) -> TruncationSet {
    clip_to_half_line(solve_quadratic_leq(a, b, c))
}

fn clip_to_half_line(intervals: Vec<Interval>) -> TruncationSet {
    let clipped = intervals
        .into_iter()
        .filter_map(|(lo, hi)| {
            if hi < 0.0 {
                None
            } else {
                Some((lo.max(0.0), hi))
            }
        })
        .collect();
    TruncationSet { intervals: clipped }
}

/// Intersect the solution sets of all constraints over `[0, inf)` and verify
/// that the observed scale `phi_obs` is a member (with slack; the interval
/// containing it is expanded when the miss is marginal).
pub fn feasible_set(constraints: &[QuadraticConstraint], phi_obs: f64) -> Result<TruncationSet> {
    if phi_obs < 0.0 || !phi_obs.is_finite() {
        return Err(Error::InvalidInput("phi_obs must be finite and >= 0".into()));
    }
    let mut set = TruncationSet::full();
    for con in constraints {
        let (a, b, c) = con.effective();
        let sol = clip_to_half_line(solve_quadratic_leq(a, b, c));
        set = set.intersect(&sol);
        if set.is_empty() {
            break;
        }
    }
    let slack = FEASIBILITY_SLACK * phi_obs.max(1.0);
    if set.contains(phi_obs, 0.0) {
        return Ok(set);
    }
    if set.contains(phi_obs, slack) {
        // Marginal miss: widen the nearest interval to cover phi_obs.
        let mut intervals = set.intervals.clone();
        for iv in intervals.iter_mut() {
            if phi_obs >= iv.0 - slack && phi_obs < iv.0 {
                iv.0 = phi_obs;
            }
            if phi_obs > iv.1 && phi_obs <= iv.1 + slack {
                iv.1 = phi_obs;
            }
        }
        return Ok(TruncationSet { intervals });
    }
    Err(Error::InfeasibleTrace { phi_obs })
}
