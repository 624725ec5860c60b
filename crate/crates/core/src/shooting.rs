//! Shooting through the switch plane.
//!
//! A profile regular at the origin is pinned down by its label
//! d = lim u(r) r^kappa and rides the inner unstable branch; a profile with
//! fast decay at infinity is pinned down by L = lim u(r) r^{n-2-kappa} and
//! rides the outer stable branch. Sliding the label moves the switch-plane
//! state along the branch, and the behavior on the far side of the switch
//! changes class at a discrete set of labels. This module classifies single
//! profiles (`solve_radial`), locates the thresholds by a deterministic
//! scan-and-bisect in the label (`find_structure`), intersects the two
//! manifold polylines (`intersect_manifolds`), and checks the closed-form
//! rescaling of the ground-state quantities (`scaling_report`).

use std::collections::HashMap;
use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fowler::{PhasePoint, PiecewiseSystem, SideSystem};
use crate::integrate::{
    integrate, Direction, Event, EventKind, EventSpec, FieldRef, Sample, Trajectory,
};
use crate::manifolds::{
    equilibria, trace_manifold, BranchPoint, BranchTag, EquilibriumKind, ManifoldBranch,
    TraceOptions,
};
use crate::params::{ExponentSet, ProblemConfig, Regime};

/// Scan resolution of the label sweep before bisection.
pub const DEFAULT_SCAN_POINTS: usize = 256;

/// Far-side integration span per probe, in log-radius units.
pub const DEFAULT_PROBE_HORIZON: f64 = 80.0;

/// Relative width of the label bracket at which bisection stops.
pub const LABEL_REL_TOL: f64 = 1e-10;

/// A switch state within this distance of the far-side manifold polyline is
/// taken to lie on it.
pub const FD_TUBE_RADIUS: f64 = 1e-6;

/// Acceptance window, relative to the expected rate, for an exponential
/// mode fit over the trailing window.
pub const RATE_FIT_REL_TOL: f64 = 0.05;

/// Phase-plane distance below which a trailing window counts as sitting on
/// the nonzero equilibrium pair.
pub const PAIR_FIT_TOL: f64 = 1e-4;

/// Coarse polyline distance below which the manifold proximity test
/// re-integrates the nearest stored segment densely. The stored polyline is
/// chorded at accepted-step resolution, far too coarse to resolve the tube
/// radius directly.
const TUBE_REFINE_DIST: f64 = 1e-2;

// ---------------------------------------------------------------------------
// solution classes

/// How a profile approaches its limit, beyond the bare power law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RateTag {
    /// u r^{alpha_l} tends to the equilibrium amplitude: the scale-invariant
    /// power rate, signed by the attracting pair point.
    PowerToPair { p_x: f64 },
    /// A single exponential mode dominates; `c` is its fitted coefficient.
    Linear { c: f64, rate: f64 },
    /// Critical growth: power rate with a logarithmic correction. `c` is the
    /// fitted constant, `slope` the measured log-log slope.
    LogCorrected { c: f64, slope: f64 },
}

/// Behavior as r tends to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "kebab-case")]
pub enum OriginClass {
    /// u r^kappa tends to the finite label d.
    Regular { d: f64 },
    /// Unbounded at the origin with the tagged rate.
    Singular { tag: RateTag },
    /// Ceases to exist at a positive radius (superexponential escape).
    Truncated { radius: f64 },
    Unresolved,
}

/// Behavior as r tends to infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "kebab-case")]
pub enum InfinityClass {
    /// u r^{n-2-kappa} tends to the finite label L.
    FastDecay {
        #[serde(rename = "L")]
        big_l: f64,
    },
    /// Decays at the slower rate carried by the tag.
    SlowDecay { tag: RateTag },
    /// Blows up at the reported finite radius.
    BlowUp { radius: f64 },
    Unresolved,
}

/// Full classification of one radial profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolutionClass {
    pub origin: OriginClass,
    pub infinity: InfinityClass,
    /// Nondegenerate sign changes of u over the whole range.
    pub zeros: usize,
    /// Crossings flagged as degenerate (|u'| under the floor); counted
    /// separately and surfaced as warnings, never silently added.
    pub degenerate: usize,
}

/// Compact display code, e.g. "R-2-fd" for a regular profile with two sign
/// changes and fast decay.
pub fn class_code(c: &SolutionClass) -> String {
    let o = match c.origin {
        OriginClass::Regular { .. } => "R",
        OriginClass::Singular { .. } => "S",
        OriginClass::Truncated { .. } => "X",
        OriginClass::Unresolved => "?",
    };
    let i = match c.infinity {
        InfinityClass::FastDecay { .. } => "fd",
        InfinityClass::SlowDecay { .. } => "sd",
        InfinityClass::BlowUp { .. } => "bu",
        InfinityClass::Unresolved => "??",
    };
    format!("{o}-{}-{i}", c.zeros)
}

/// Sign changes of u along a trajectory, split by degeneracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZeroCount {
    pub count: usize,
    pub degenerate: usize,
}

pub fn count_nondegenerate_zeros(traj: &Trajectory) -> ZeroCount {
    let mut zc = ZeroCount { count: 0, degenerate: 0 };
    for ev in &traj.events {
        if let EventKind::YAxisCrossing { degenerate } = ev.kind {
            if degenerate {
                zc.degenerate += 1;
            } else {
                zc.count += 1;
            }
        }
    }
    zc
}

/// Zero count truncated at the closest approach to the phase-plane origin.
/// A profile that lands on the far-side manifold keeps exactly the crossings
/// before the landing; what the numerical trajectory does after drifting off
/// again is not part of the profile.
fn truncated_zero_count(leg: &Trajectory) -> ZeroCount {
    let mut smin = f64::INFINITY;
    let mut s_at = leg.last().s;
    for p in &leg.samples {
        let r = p.x.hypot(p.y);
        if r < smin {
            smin = r;
            s_at = p.s;
        }
    }
    let mut zc = ZeroCount { count: 0, degenerate: 0 };
    for ev in &leg.events {
        if let EventKind::YAxisCrossing { degenerate } = ev.kind {
            if ev.s <= s_at {
                if degenerate {
                    zc.degenerate += 1;
                } else {
                    zc.count += 1;
                }
            }
        }
    }
    zc
}

// ---------------------------------------------------------------------------
// trailing-window fits

/// Least-squares line through the pairs; returns [slope, intercept].
pub fn fit_line(pairs: &[[f64; 2]]) -> Option<[f64; 2]> {
    let n = pairs.len() as f64;
    if pairs.len() < 8 {
        return None;
    }
    let (mut sa, mut sb, mut saa, mut sab) = (0.0, 0.0, 0.0, 0.0);
    for p in pairs {
        sa += p[0];
        sb += p[1];
        saa += p[0] * p[0];
        sab += p[0] * p[1];
    }
    let det = n * saa - sa * sa;
    if det.abs() < 1e-300 {
        return None;
    }
    Some([(n * sab - sa * sb) / det, (saa * sb - sa * sab) / det])
}

fn tail(samples: &[Sample]) -> &[Sample] {
    let n = samples.len();
    let k = (n / 4).max(12).min(n);
    &samples[n - k..]
}

/// Fits x ~ c e^{rate t} over the window; accepts when the measured rate
/// matches and the sign of x is constant. Returns the signed coefficient.
fn exp_rate_fit(window: &[Sample], rate: f64) -> Option<f64> {
    let sgn = window.last()?.x.signum();
    if window.iter().any(|p| p.x == 0.0 || p.x.signum() != sgn) {
        return None;
    }
    let pairs: Vec<[f64; 2]> = window.iter().map(|p| [p.t, p.x.abs().ln()]).collect();
    let [slope, icept] = fit_line(&pairs)?;
    let ok = (slope - rate).abs() <= RATE_FIT_REL_TOL * rate.abs().max(1e-6);
    ok.then(|| sgn * icept.exp())
}

/// Fits x ~ c |t|^{-1/(q-2)} over the window (critical branches crawl along
/// the center direction at that power of log-radius). Returns the signed
/// constant and the measured log-log slope.
fn log_corrected_fit(window: &[Sample], q: f64) -> Option<(f64, f64)> {
    let sgn = window.last()?.x.signum();
    if window.iter().any(|p| p.x == 0.0 || p.x.signum() != sgn || p.t == 0.0) {
        return None;
    }
    let pairs: Vec<[f64; 2]> =
        window.iter().map(|p| [p.t.abs().ln(), p.x.abs().ln()]).collect();
    let [slope, _] = fit_line(&pairs)?;
    let target = -1.0 / (q - 2.0);
    if (slope - target).abs() > 0.25 * target.abs() {
        return None;
    }
    let mean = window
        .iter()
        .map(|p| p.x.abs().ln() + p.t.abs().ln() / (q - 2.0))
        .sum::<f64>()
        / window.len() as f64;
    Some((sgn * mean.exp(), slope))
}

// ---------------------------------------------------------------------------
// transversality of the switch-plane pairing

/// Scalar measuring how transversally the inner-side flow crosses the
/// outer-side flow at the switch-plane point q; positive means the crossing
/// is oriented the way the threshold ordering needs.
pub fn transversality(sys: &PiecewiseSystem, q: [f64; 2]) -> f64 {
    let (s1, s2) = (&sys.side1, &sys.side2);
    let (a1, a2) = (s1.exp.alpha, s2.exp.alpha);
    let (n, eta) = (s1.exp.n as f64, s1.exp.eta);
    let [x, y] = q;
    (a1 - a2) * ((n - 2.0) * x * y + y * y + eta * x * x)
        - (a2 * x + y) * s1.k * s1.g.eval(x)
        + (a1 * x + y) * s2.k * s2.g.eval(x)
}

// ---------------------------------------------------------------------------
// manifold intersections

/// One crossing of the scanned branch with the far-side manifold pair.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IntersectionPoint {
    pub location: [f64; 2],
    /// Region ordinal: the number of axis crossings the far-side arm makes
    /// between this point and its seed end.
    pub j: usize,
    /// Which far-side arm carries the point. Region parity should follow the
    /// arm sign; violations are surfaced, not corrected.
    pub arm_positive: bool,
    /// Arclength along the scanned branch.
    pub upsilon: f64,
    /// Arclength along the far-side arm.
    pub sigma: f64,
    /// Angle swept by the far-side arm from this point to its seed end:
    /// the rotation the profile performs on the far side of the switch.
    pub theta_j: f64,
    /// |theta_j| should fall in (j pi, (j+1) pi).
    pub window_ok: bool,
    pub transversality: f64,
    pub first_in_region: bool,
    pub last_in_region: bool,
    /// Set when the crossing lies past the first crossing of the next
    /// region, i.e. the scanned branch re-enters an earlier region.
    pub reentrant: bool,
}

struct Seg {
    a: [f64; 2],
    b: [f64; 2],
    arm: usize,
    idx: usize,
}

fn seg_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> Option<(f64, f64)> {
    let r = [b[0] - a[0], b[1] - a[1]];
    let s = [d[0] - c[0], d[1] - c[1]];
    let denom = r[0] * s[1] - r[1] * s[0];
    if denom == 0.0 {
        return None;
    }
    let q = [c[0] - a[0], c[1] - a[1]];
    let t = (q[0] * s[1] - q[1] * s[0]) / denom;
    let u = (q[0] * r[1] - q[1] * r[0]) / denom;
    // half-open on both parameters so a crossing at a shared polyline vertex
    // is counted exactly once
    ((0.0..1.0).contains(&t) && (0.0..1.0).contains(&u)).then_some((t, u))
}

/// All crossings of the scanned branch with the two far-side arms, ordered
/// by arclength along the scanned branch. `min_regions` asks for coverage up
/// to that many regions and reports a budget failure when the traces end
/// before reaching them.
pub fn intersect_manifolds(
    walker: &ManifoldBranch,
    arm_plus: &ManifoldBranch,
    arm_minus: &ManifoldBranch,
    sys: &PiecewiseSystem,
    min_regions: Option<usize>,
) -> Result<Vec<IntersectionPoint>> {
    let arms = [arm_plus, arm_minus];
    let mut segs: Vec<Seg> = Vec::new();
    for (ai, arm) in arms.iter().enumerate() {
        for (i, w) in arm.points.windows(2).enumerate() {
            segs.push(Seg {
                a: [w[0].x, w[0].y],
                b: [w[1].x, w[1].y],
                arm: ai,
                idx: i,
            });
        }
    }
    if segs.is_empty() || walker.points.len() < 2 {
        return Ok(Vec::new());
    }

    // cell size from an upper-percentile segment length; the few segments
    // spanning many cells (blow-up tails) are checked against everything
    let mut lens: Vec<f64> = segs
        .iter()
        .map(|s| (s.b[0] - s.a[0]).hypot(s.b[1] - s.a[1]))
        .filter(|l| *l > 0.0)
        .collect();
    if lens.is_empty() {
        return Ok(Vec::new());
    }
    lens.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cell = (2.0 * lens[lens.len() * 9 / 10]).max(1e-12);
    let key = |x: f64, y: f64| ((x / cell).floor() as i64, (y / cell).floor() as i64);

    let mut grid: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
    let mut oversize: Vec<u32> = Vec::new();
    for (i, s) in segs.iter().enumerate() {
        let (x0, y0) = key(s.a[0].min(s.b[0]), s.a[1].min(s.b[1]));
        let (x1, y1) = key(s.a[0].max(s.b[0]), s.a[1].max(s.b[1]));
        if (x1 - x0 + 1) * (y1 - y0 + 1) > 64 {
            oversize.push(i as u32);
            continue;
        }
        for cx in x0..=x1 {
            for cy in y0..=y1 {
                grid.entry((cx, cy)).or_default().push(i as u32);
            }
        }
    }

    let mut hits: Vec<IntersectionPoint> = Vec::new();
    for w in walker.points.windows(2) {
        let (wa, wb) = (&w[0], &w[1]);
        let a = [wa.x, wa.y];
        let b = [wb.x, wb.y];
        let mut cand: Vec<u32> = oversize.clone();
        let (x0, y0) = key(a[0].min(b[0]), a[1].min(b[1]));
        let (x1, y1) = key(a[0].max(b[0]), a[1].max(b[1]));
        if (x1 - x0 + 1) * (y1 - y0 + 1) > 4096 {
            cand = (0..segs.len() as u32).collect();
        } else {
            for cx in x0..=x1 {
                for cy in y0..=y1 {
                    if let Some(v) = grid.get(&(cx, cy)) {
                        cand.extend_from_slice(v);
                    }
                }
            }
            cand.sort_unstable();
            cand.dedup();
        }
        for ci in cand {
            let s = &segs[ci as usize];
            let Some((t, u)) = seg_intersect(a, b, s.a, s.b) else { continue };
            let arm = arms[s.arm];
            let (ca, cb) = (&arm.points[s.idx], &arm.points[s.idx + 1]);
            let sigma = ca.s + u * (cb.s - ca.s);
            let theta = ca.theta + u * (cb.theta - ca.theta);
            let loc = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            let j = arm.crossings.partition_point(|m| m.s < sigma);
            let theta_j = arm.points[0].theta - theta;
            let jf = j as f64;
            let window_ok = theta_j.abs() > jf * std::f64::consts::PI
                && theta_j.abs() < (jf + 1.0) * std::f64::consts::PI;
            hits.push(IntersectionPoint {
                location: loc,
                j,
                arm_positive: s.arm == 0,
                upsilon: wa.s + t * (wb.s - wa.s),
                sigma,
                theta_j,
                window_ok,
                transversality: transversality(sys, loc),
                first_in_region: false,
                last_in_region: false,
                reentrant: false,
            });
        }
    }

    hits.sort_by(|p, q| p.upsilon.partial_cmp(&q.upsilon).unwrap());
    hits.dedup_by(|p, q| {
        p.arm_positive == q.arm_positive
            && (p.upsilon - q.upsilon).abs() <= 1e-12 * (1.0 + q.upsilon.abs())
    });

    // first/last per region, and re-entries past the next region's opener
    let jmax = hits.iter().map(|h| h.j).max();
    if let Some(jmax) = jmax {
        let opener: Vec<Option<f64>> = (0..=jmax + 1)
            .map(|j| {
                hits.iter()
                    .filter(|h| h.j == j)
                    .map(|h| h.upsilon)
                    .fold(None, |acc: Option<f64>, u| {
                        Some(acc.map_or(u, |a: f64| a.min(u)))
                    })
            })
            .collect();
        for j in 0..=jmax {
            let next = opener[j + 1];
            let members: Vec<usize> = hits
                .iter()
                .enumerate()
                .filter(|(_, h)| h.j == j)
                .map(|(i, _)| i)
                .collect();
            if members.is_empty() {
                continue;
            }
            hits[members[0]].first_in_region = true;
            let mut last: Option<usize> = None;
            for &i in &members {
                match next {
                    Some(nu) if hits[i].upsilon >= nu => hits[i].reentrant = true,
                    _ => last = Some(i),
                }
            }
            if let Some(i) = last {
                hits[i].last_in_region = true;
            }
        }
    }

    if let Some(need) = min_regions {
        let have = jmax.map_or(0, |j| j + 1);
        if have < need {
            return Err(Error::BudgetExhausted(format!(
                "intersections cover {have} of the {need} requested regions; extend the trace budgets"
            )));
        }
    }
    Ok(hits)
}

// ---------------------------------------------------------------------------
// the shooter: probing one label

/// Which one-parameter family is being scanned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Profiles regular at the origin, labeled by d; thresholds are D_k.
    Regular,
    /// Profiles with fast decay at infinity, labeled by L; thresholds L_k.
    Decay,
}

/// Budget and resolution knobs for the structure search.
#[derive(Debug, Clone, Serialize)]
pub struct StructureOptions {
    pub k_max: usize,
    /// Far-side integration span per probe.
    pub horizon: f64,
    pub scan_points: usize,
    pub probes_per_interval: usize,
    /// Arclength budget of the scanned branch. The default is far beyond the
    /// blow-up norm so the branch ends by blowing up, which pins down the
    /// empirical label supremum.
    pub budget: f64,
    /// Arclength budget of the two far-side arms.
    pub spiral_budget: f64,
    pub max_points: usize,
    pub label_rel_tol: f64,
}

impl Default for StructureOptions {
    fn default() -> Self {
        StructureOptions {
            k_max: 2,
            horizon: DEFAULT_PROBE_HORIZON,
            scan_points: DEFAULT_SCAN_POINTS,
            probes_per_interval: 8,
            budget: 1e9,
            spiral_budget: 1e3,
            max_points: 100_000,
            label_rel_tol: LABEL_REL_TOL,
        }
    }
}

/// One shot: the profile carried by the scanned branch at one label.
#[derive(Debug, Clone)]
pub struct Probe {
    /// Trace time on the scanned branch realizing the label.
    pub tau: f64,
    /// Arclength on the scanned branch.
    pub upsilon: f64,
    /// The label itself (d or L, in the problem's physical radius scale).
    pub label: f64,
    pub switch_state: PhasePoint,
    pub class: SolutionClass,
    /// Classification from the leg's termination alone, with the manifold
    /// proximity test left out. Near a threshold the proximity test smears
    /// over a band of labels, while the termination flips sharply; bisection
    /// must see the sharp version.
    pub sharp: SolutionClass,
    /// The far-side leg of the profile, from the switch plane outward.
    pub leg: Trajectory,
    /// Distance from the switch state to the far-side manifold polyline.
    pub tube_distance: Option<f64>,
    pub warning: Option<String>,
}

/// Traces the branches once and answers label probes against them.
pub struct Shooter<'a> {
    sys: &'a PiecewiseSystem,
    pub family: Family,
    pub walker: ManifoldBranch,
    pub tube_plus: Option<ManifoldBranch>,
    pub tube_minus: Option<ManifoldBranch>,
    walker_side: u8,
    walker_dir: Direction,
    probe_dir: Direction,
    horizon: f64,
    /// Physical-label factor for the scanned branch (powers of the switch
    /// radius; the traced system is normalized to a unit switch).
    walker_label_factor: f64,
    /// Same for labels read off the far-side arms.
    far_label_factor: f64,
    targets: Vec<[f64; 2]>,
    pair: Option<f64>,
}

impl<'a> Shooter<'a> {
    pub fn new(sys: &'a PiecewiseSystem, family: Family, opts: &StructureOptions) -> Result<Self> {
        Self::new_signed(sys, family, opts, false)
    }

    /// `negative` scans the mirrored branch (labels of the opposite sign).
    pub fn new_signed(
        sys: &'a PiecewiseSystem,
        family: Family,
        opts: &StructureOptions,
        negative: bool,
    ) -> Result<Self> {
        let (walker_side, far_side, walker_tag, tube_tags, probe_dir) = match family {
            Family::Regular => (
                1u8,
                2u8,
                if negative { BranchTag::UnstableMinus } else { BranchTag::UnstablePlus },
                (BranchTag::StablePlus, BranchTag::StableMinus),
                Direction::Forward,
            ),
            Family::Decay => (
                2u8,
                1u8,
                if negative { BranchTag::StableMinus } else { BranchTag::StablePlus },
                (BranchTag::UnstablePlus, BranchTag::UnstableMinus),
                Direction::Backward,
            ),
        };
        let walker_opts = TraceOptions {
            max_arclength: opts.budget,
            max_points: opts.max_points,
            ..TraceOptions::default()
        };
        let walker = trace_manifold(sys.side(walker_side), walker_tag, &walker_opts)?;
        if walker.center {
            return Err(Error::Regime(
                "the scanned branch is center-type; its label parametrization degenerates".into(),
            ));
        }
        let tube_opts = TraceOptions {
            max_arclength: opts.spiral_budget,
            max_points: opts.max_points,
            ..TraceOptions::default()
        };
        let mut tube = [None, None];
        for (slot, tag) in tube.iter_mut().zip([tube_tags.0, tube_tags.1]) {
            *slot = match trace_manifold(sys.side(far_side), tag, &tube_opts) {
                Ok(b) => Some(b),
                Err(Error::Regime(_)) => None,
                Err(e) => return Err(e),
            };
        }
        let far = sys.side(far_side);
        let eqs = equilibria(far);
        let targets: Vec<[f64; 2]> = eqs
            .iter()
            .filter(|e| e.kind != EquilibriumKind::Origin)
            .map(|e| e.location)
            .collect();
        let pair = eqs
            .iter()
            .find(|e| e.kind == EquilibriumKind::PPlus)
            .map(|e| e.location[0]);

        let e1 = &sys.side1.exp;
        let d_factor = sys.rho.powf(e1.kappa);
        let l_factor = sys.rho.powf(e1.kappa_conjugate());
        let (walker_label_factor, far_label_factor) = match family {
            Family::Regular => (d_factor, l_factor),
            Family::Decay => (l_factor, d_factor),
        };
        let [tube_plus, tube_minus] = tube;
        Ok(Shooter {
            sys,
            family,
            walker,
            tube_plus,
            tube_minus,
            walker_side,
            walker_dir: if walker_tag.is_unstable() {
                Direction::Forward
            } else {
                Direction::Backward
            },
            probe_dir,
            horizon: opts.horizon,
            walker_label_factor,
            far_label_factor,
            targets,
            pair,
        })
    }

    fn walker_sys(&self) -> &SideSystem {
        self.sys.side(self.walker_side)
    }

    fn far_sys(&self) -> &SideSystem {
        self.sys.side(3 - self.walker_side)
    }

    /// Physical label of the profile through the branch point at trace time
    /// tau.
    pub fn label_of(&self, tau: f64) -> f64 {
        self.walker.label_at(tau) * self.walker_label_factor
    }

    /// Trace time realizing a physical label.
    pub fn time_of(&self, label: f64) -> f64 {
        (label / self.walker_label_factor / self.walker.seed_label).ln() / self.walker.label_rate
    }

    pub fn end_time(&self) -> f64 {
        self.walker.points.last().map_or(0.0, |p| p.t)
    }

    /// Switch-plane state of the profile with trace time tau, re-integrated
    /// from the nearest stored branch sample rather than interpolated.
    fn state_at_time(&self, tau: f64) -> Result<(PhasePoint, f64)> {
        let br = &self.walker;
        let sgn = self.walker_dir.sign();
        let t_end = self.end_time();
        if tau * sgn > t_end * sgn {
            return Err(Error::SeedOverflow(self.label_of(tau)));
        }
        if tau * sgn <= 0.0 {
            // below the stored seed the branch follows its own expansion
            let c = br.seed_label * (br.label_rate * tau).exp();
            let st = crate::manifolds::expansion_state(self.walker_sys(), br.label_rate, c);
            let p0 = &br.points[0];
            let f = (br.label_rate * (tau - p0.t)).exp();
            return Ok((PhasePoint { x: st[0], y: st[1], t: 0.0 }, p0.s * f));
        }
        let i = match self.walker_dir {
            Direction::Forward => br.points.partition_point(|p| p.t <= tau),
            Direction::Backward => br.points.partition_point(|p| p.t >= tau),
        }
        .max(1)
            - 1;
        let p = br.points[i];
        if tau == p.t {
            return Ok((PhasePoint { x: p.x, y: p.y, t: 0.0 }, p.s));
        }
        let spec = EventSpec {
            record_y_axis: false,
            record_x_axis: false,
            initial_arclength: p.s,
            ..EventSpec::default()
        };
        let leg = integrate(
            FieldRef::Autonomous { system: self.walker_sys(), label: self.walker_side },
            PhasePoint { x: p.x, y: p.y, t: p.t },
            self.walker_dir,
            (tau - p.t).abs(),
            &spec,
        )?;
        let end = leg.last();
        Ok((PhasePoint { x: end.x, y: end.y, t: 0.0 }, end.s))
    }

    fn tube_match(&self, p: [f64; 2]) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for arm in [self.tube_plus.as_ref(), self.tube_minus.as_ref()].into_iter().flatten() {
            if let Some((mut d, seg, mut t)) = nearest_on_polyline(p, &arm.points) {
                if d < TUBE_REFINE_DIST {
                    if let Some((fd, ft)) = self.refine_tube_distance(arm, seg, p) {
                        d = fd;
                        t = ft;
                    }
                }
                let label = arm.label_at(t) * self.far_label_factor;
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, label));
                }
            }
        }
        best
    }

    /// Re-traverses the stored segments around `seg` with dense output and
    /// measures the distance against the fine chain instead of the coarse
    /// chords.
    fn refine_tube_distance(
        &self,
        arm: &ManifoldBranch,
        seg: usize,
        p: [f64; 2],
    ) -> Option<(f64, f64)> {
        let far_dir = if arm.tag.is_unstable() {
            Direction::Forward
        } else {
            Direction::Backward
        };
        let far_label = 3 - self.walker_side;
        let lo = seg.saturating_sub(1);
        let hi = (seg + 1).min(arm.points.len().checked_sub(2)?);
        let mut best: Option<(f64, f64)> = None;
        for si in lo..=hi {
            let (a, b) = (&arm.points[si], &arm.points[si + 1]);
            let span = (b.t - a.t).abs();
            if span == 0.0 {
                continue;
            }
            let m = 192;
            let grid: Vec<f64> =
                (0..=m).map(|k| a.t + (b.t - a.t) * k as f64 / m as f64).collect();
            let spec = EventSpec {
                record_y_axis: false,
                record_x_axis: false,
                record_at: grid,
                initial_arclength: a.s,
                ..EventSpec::default()
            };
            let Ok(leg) = integrate(
                FieldRef::Autonomous { system: self.far_sys(), label: far_label },
                PhasePoint { x: a.x, y: a.y, t: a.t },
                far_dir,
                span,
                &spec,
            ) else {
                continue;
            };
            for w in leg.recorded.windows(2) {
                let (vx, vy) = (w[1].x - w[0].x, w[1].y - w[0].y);
                let (wx, wy) = (p[0] - w[0].x, p[1] - w[0].y);
                let vv = vx * vx + vy * vy;
                let f = if vv > 0.0 { ((wx * vx + wy * vy) / vv).clamp(0.0, 1.0) } else { 0.0 };
                let d = (wx - f * vx).hypot(wy - f * vy);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, w[0].t + f * (w[1].t - w[0].t)));
                }
            }
        }
        best
    }

    fn leg_spec(&self, record_at: &[f64]) -> EventSpec {
        EventSpec {
            converge_targets: self.targets.clone(),
            record_at: record_at.to_vec(),
            ..EventSpec::default()
        }
    }

    pub fn probe(&self, tau: f64) -> Result<Probe> {
        self.probe_with(tau, &[], self.horizon)
    }

    fn probe_with(&self, tau: f64, record_at: &[f64], mut horizon: f64) -> Result<Probe> {
        let (q0, upsilon) = self.state_at_time(tau)?;
        let label = self.label_of(tau);
        let mut warning = None;
        for attempt in 0.. {
            let leg = match integrate(
                FieldRef::Piecewise(self.sys),
                q0,
                self.probe_dir,
                horizon,
                &self.leg_spec(record_at),
            ) {
                Ok(l) => l,
                Err(Error::StepFailure { t, detail }) => {
                    // keep the probe alive: an unresolved class is honest
                    // data for the caller, a hard error is not
                    let class = match self.family {
                        Family::Regular => SolutionClass {
                            origin: OriginClass::Regular { d: label },
                            infinity: InfinityClass::Unresolved,
                            zeros: self.walker_zeros(upsilon),
                            degenerate: 0,
                        },
                        Family::Decay => SolutionClass {
                            origin: OriginClass::Unresolved,
                            infinity: InfinityClass::FastDecay { big_l: label },
                            zeros: self.walker_zeros(upsilon),
                            degenerate: 0,
                        },
                    };
                    return Ok(Probe {
                        tau,
                        upsilon,
                        label,
                        switch_state: q0,
                        class,
                        sharp: class,
                        leg: Trajectory {
                            samples: vec![Sample { t: 0.0, x: q0.x, y: q0.y, s: 0.0 }],
                            events: Vec::new(),
                            termination: EventKind::Horizon,
                            direction: self.probe_dir,
                            recorded: Vec::new(),
                        },
                        tube_distance: None,
                        warning: Some(format!("step failure at t = {t:.3e}: {detail}")),
                    });
                }
                Err(e) => return Err(e),
            };
            let tube = self.tube_match([q0.x, q0.y]);
            let (class, sharp) = self.classify(&leg, label, upsilon, tube);
            let unresolved = matches!(sharp.infinity, InfinityClass::Unresolved)
                || matches!(sharp.origin, OriginClass::Unresolved);
            if unresolved && attempt < 2 && matches!(leg.termination, EventKind::Horizon) {
                horizon *= 4.0;
                continue;
            }
            if unresolved {
                warning = Some(format!(
                    "probe at label {label:.6e} unresolved after horizon {horizon:.1e}"
                ));
            }
            return Ok(Probe {
                tau,
                upsilon,
                label,
                switch_state: q0,
                class,
                sharp,
                leg,
                tube_distance: tube.map(|(d, _)| d),
                warning,
            });
        }
        unreachable!()
    }

    fn walker_zeros(&self, upsilon: f64) -> usize {
        self.walker.crossings.iter().filter(|m| m.s < upsilon).count()
    }

    /// The near-side leg of the profile with trace time tau, assembled from
    /// the branch itself. The flow on each side is autonomous, so the leg is
    /// the branch segment up to tau with its clock shifted to put the switch
    /// at zero; re-integrating it backward from the switch instead would
    /// amplify any off-branch error exponentially.
    fn near_leg(&self, tau: f64, upsilon: f64, q0: PhasePoint, record_at: &[f64]) -> Result<Trajectory> {
        let br = &self.walker;
        let sgn = self.walker_dir.sign();
        let mut samples = vec![Sample { t: 0.0, x: q0.x, y: q0.y, s: 0.0 }];
        for p in br.points.iter().rev() {
            if p.t * sgn < tau * sgn {
                samples.push(Sample {
                    t: p.t - tau,
                    x: p.x,
                    y: p.y,
                    s: upsilon - p.s,
                });
            }
        }
        let mut events: Vec<Event> = br
            .crossings
            .iter()
            .filter(|m| m.s < upsilon)
            .map(|m| Event {
                t: m.t - tau,
                x: 0.0,
                y: m.y,
                s: upsilon - m.s,
                kind: EventKind::YAxisCrossing { degenerate: false },
            })
            .collect();
        events.sort_by(|a, b| a.s.partial_cmp(&b.s).unwrap());

        // traversal order: away from the switch
        let mut wanted: Vec<f64> = record_at
            .iter()
            .copied()
            .filter(|t| t * sgn <= 0.0)
            .collect();
        wanted.sort_by(|a, b| (b * sgn).partial_cmp(&(a * sgn)).unwrap());
        let mut recorded = Vec::with_capacity(wanted.len());
        for t in wanted {
            let (state, s_here) = self.state_at_time(tau + t)?;
            recorded.push(Sample { t, x: state.x, y: state.y, s: upsilon - s_here });
        }

        let near_dir = match self.probe_dir {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        };
        Ok(Trajectory {
            samples,
            events,
            termination: EventKind::Converged { target: [0.0, 0.0] },
            direction: near_dir,
            recorded,
        })
    }

    fn classify(
        &self,
        leg: &Trajectory,
        label: f64,
        upsilon: f64,
        tube: Option<(f64, f64)>,
    ) -> (SolutionClass, SolutionClass) {
        let far = count_nondegenerate_zeros(leg);
        let zeros = self.walker_zeros(upsilon) + far.count;
        match self.family {
            Family::Regular => {
                let sharp_inf = self.infinity_from_termination(leg);
                let inf = self.tube_override_infinity(sharp_inf, tube);
                let build = |infinity| SolutionClass {
                    origin: OriginClass::Regular { d: label },
                    infinity,
                    zeros,
                    degenerate: far.degenerate,
                };
                (build(inf), build(sharp_inf))
            }
            Family::Decay => {
                let sharp_org = self.origin_from_termination(leg);
                let org = self.tube_override_origin(sharp_org, tube);
                let build = |origin| SolutionClass {
                    origin,
                    infinity: InfinityClass::FastDecay { big_l: label },
                    zeros,
                    degenerate: far.degenerate,
                };
                (build(org), build(sharp_org))
            }
        }
    }

    /// Terminal class of the outward leg (r to infinity).
    pub fn classify_infinity(
        &self,
        leg: &Trajectory,
        tube: Option<(f64, f64)>,
    ) -> InfinityClass {
        self.tube_override_infinity(self.infinity_from_termination(leg), tube)
    }

    /// Terminal class of the inward leg (r to 0).
    pub fn classify_origin(&self, leg: &Trajectory, tube: Option<(f64, f64)>) -> OriginClass {
        self.tube_override_origin(self.origin_from_termination(leg), tube)
    }

    /// A switch state sitting on the far-side manifold is the decaying (or
    /// regular) profile no matter where the finite-horizon leg drifts after
    /// shadowing it; the proximity test outranks everything but a blow-up.
    fn tube_override_infinity(
        &self,
        sharp: InfinityClass,
        tube: Option<(f64, f64)>,
    ) -> InfinityClass {
        if matches!(sharp, InfinityClass::BlowUp { .. }) {
            return sharp;
        }
        match tube {
            Some((dist, big_l)) if dist < FD_TUBE_RADIUS => InfinityClass::FastDecay { big_l },
            _ => sharp,
        }
    }

    fn tube_override_origin(&self, sharp: OriginClass, tube: Option<(f64, f64)>) -> OriginClass {
        if matches!(sharp, OriginClass::Truncated { .. }) {
            return sharp;
        }
        match tube {
            Some((dist, d)) if dist < FD_TUBE_RADIUS => OriginClass::Regular { d },
            _ => sharp,
        }
    }

    fn infinity_from_termination(&self, leg: &Trajectory) -> InfinityClass {
        if matches!(leg.termination, EventKind::BlowUp) {
            return InfinityClass::BlowUp { radius: self.sys.rho * leg.last().t.exp() };
        }
        if let EventKind::Converged { target } = leg.termination {
            return InfinityClass::SlowDecay { tag: RateTag::PowerToPair { p_x: target[0] } };
        }
        let e = &self.far_sys().exp;
        let tl = tail(&leg.samples);
        match e.regime {
            Regime::Saddle => self
                .pair_fit(tl, e.alpha)
                .map(|p_x| InfinityClass::SlowDecay { tag: RateTag::PowerToPair { p_x } })
                .unwrap_or(InfinityClass::Unresolved),
            Regime::NodeStable => exp_rate_fit(tl, e.lambda_hi)
                .map(|c| InfinityClass::SlowDecay {
                    tag: RateTag::Linear { c, rate: e.lambda_hi },
                })
                .unwrap_or(InfinityClass::Unresolved),
            Regime::CenterStable => log_corrected_fit(tl, e.q)
                .map(|(c, slope)| InfinityClass::SlowDecay {
                    tag: RateTag::LogCorrected { c, slope },
                })
                .unwrap_or(InfinityClass::Unresolved),
            _ => InfinityClass::Unresolved,
        }
    }

    fn origin_from_termination(&self, leg: &Trajectory) -> OriginClass {
        let e = &self.far_sys().exp;
        if matches!(leg.termination, EventKind::BlowUp) {
            // exponential escape at the slow rate is the singular profile; a
            // superexponential escape never reaches the origin at all
            if let Some(c) = exp_rate_fit(tail(&leg.samples), e.lambda_lo) {
                return OriginClass::Singular {
                    tag: RateTag::Linear { c, rate: e.lambda_lo },
                };
            }
            return OriginClass::Truncated { radius: self.sys.rho * leg.last().t.exp() };
        }
        if let EventKind::Converged { target } = leg.termination {
            return OriginClass::Singular { tag: RateTag::PowerToPair { p_x: target[0] } };
        }
        let tl = tail(&leg.samples);
        match e.regime {
            Regime::Saddle => self
                .pair_fit(tl, e.alpha)
                .map(|p_x| OriginClass::Singular { tag: RateTag::PowerToPair { p_x } })
                .unwrap_or(OriginClass::Unresolved),
            Regime::NodeUnstable => {
                // toward the origin both modes contract; the singular profile
                // rides the slow one, the regular profile the fast one
                if let Some(c) = exp_rate_fit(tl, e.lambda_lo) {
                    OriginClass::Singular { tag: RateTag::Linear { c, rate: e.lambda_lo } }
                } else if let Some(d) = exp_rate_fit(tl, e.lambda_hi) {
                    OriginClass::Regular { d: d * self.far_label_factor }
                } else {
                    OriginClass::Unresolved
                }
            }
            Regime::CenterUnstable => log_corrected_fit(tl, e.q)
                .map(|(c, slope)| OriginClass::Singular {
                    tag: RateTag::LogCorrected { c, slope },
                })
                .unwrap_or(OriginClass::Unresolved),
            _ => OriginClass::Unresolved,
        }
    }

    fn pair_fit(&self, tl: &[Sample], alpha: f64) -> Option<f64> {
        let p = self.pair?;
        for sgn in [1.0, -1.0] {
            let c = [sgn * p, -alpha * sgn * p];
            let mut d: Vec<f64> =
                tl.iter().map(|s| (s.x - c[0]).hypot(s.y - c[1])).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if d[d.len() / 2] < PAIR_FIT_TOL * (1.0 + p) {
                return Some(sgn * p);
            }
        }
        None
    }
}

fn nearest_on_polyline(p: [f64; 2], pts: &[BranchPoint]) -> Option<(f64, usize, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let mut best = f64::INFINITY;
    let mut bt = pts[0].t;
    let mut bi = 0;
    for (i, w) in pts.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        let (vx, vy) = (b.x - a.x, b.y - a.y);
        let (wx, wy) = (p[0] - a.x, p[1] - a.y);
        let vv = vx * vx + vy * vy;
        let f = if vv > 0.0 { ((wx * vx + wy * vy) / vv).clamp(0.0, 1.0) } else { 0.0 };
        let (dx, dy) = (wx - f * vx, wy - f * vy);
        let d2 = dx * dx + dy * dy;
        if d2 < best {
            best = d2;
            bt = a.t + f * (b.t - a.t);
            bi = i;
        }
    }
    Some((best.sqrt(), bi, bt))
}

// ---------------------------------------------------------------------------
// single profiles

/// Which one-parameter family a profile is drawn from, with its label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FamilySeed {
    /// Regular at the origin with u r^kappa tending to d.
    Regular { d: f64 },
    /// Fast decay at infinity with u r^{n-2-kappa} tending to L.
    FastDecay {
        #[serde(rename = "L")]
        big_l: f64,
    },
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub horizon: f64,
    /// Extra dense-output times for the leg toward the origin.
    pub record_at_origin: Vec<f64>,
    /// Same for the leg toward infinity.
    pub record_at_infinity: Vec<f64>,
    pub budget: f64,
    pub max_points: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            horizon: DEFAULT_PROBE_HORIZON,
            record_at_origin: Vec::new(),
            record_at_infinity: Vec::new(),
            budget: 1e9,
            max_points: 100_000,
        }
    }
}

/// A classified radial profile: both legs from the switch plane outward.
#[derive(Debug, Clone)]
pub struct RadialSolve {
    pub seed: FamilySeed,
    /// State at the switch plane (t = 0).
    pub switch_state: PhasePoint,
    /// Leg toward r = 0 (integrated backward in log-radius).
    pub origin_leg: Trajectory,
    /// Leg toward r = infinity.
    pub infinity_leg: Trajectory,
    pub class: SolutionClass,
    pub warning: Option<String>,
}

pub fn solve_radial(
    sys: &PiecewiseSystem,
    seed: FamilySeed,
    horizon: f64,
) -> Result<RadialSolve> {
    solve_radial_with(sys, seed, &SolveOptions { horizon, ..SolveOptions::default() })
}

pub fn solve_radial_with(
    sys: &PiecewiseSystem,
    seed: FamilySeed,
    opts: &SolveOptions,
) -> Result<RadialSolve> {
    let (family, label) = match seed {
        FamilySeed::Regular { d } => (Family::Regular, d),
        FamilySeed::FastDecay { big_l } => (Family::Decay, big_l),
    };
    if !(label != 0.0 && label.is_finite()) {
        return Err(Error::Domain(format!("label must be finite and nonzero, got {label}")));
    }
    let sopts = StructureOptions {
        horizon: opts.horizon,
        budget: opts.budget,
        max_points: opts.max_points,
        ..StructureOptions::default()
    };
    let shooter = Shooter::new_signed(sys, family, &sopts, label < 0.0)?;
    let tau = shooter.time_of(label);
    let far_record = match family {
        Family::Regular => &opts.record_at_infinity,
        Family::Decay => &opts.record_at_origin,
    };
    let probe = shooter.probe_with(tau, far_record, opts.horizon)?;
    let near_record = match family {
        Family::Regular => &opts.record_at_origin,
        Family::Decay => &opts.record_at_infinity,
    };
    let near = shooter.near_leg(tau, probe.upsilon, probe.switch_state, near_record)?;

    let (origin_leg, infinity_leg) = match family {
        Family::Regular => (near, probe.leg),
        Family::Decay => (probe.leg, near),
    };
    Ok(RadialSolve {
        seed,
        switch_state: probe.switch_state,
        origin_leg,
        infinity_leg,
        class: probe.class,
        warning: probe.warning,
    })
}

// ---------------------------------------------------------------------------
// threshold structure

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdEntry {
    pub k: usize,
    /// The threshold label D_k (regular family) or L_k (decay family).
    pub label: f64,
    /// Arclength on the scanned branch at the refined label.
    pub upsilon: f64,
    /// Final bisection bracket in label units.
    pub bracket: [f64; 2],
    /// Achieved bracket width.
    pub tolerance: f64,
    /// Class at the bracket midpoint, with the zero count truncated at the
    /// closest approach to the far-side origin.
    pub class: SolutionClass,
    /// Distance from the midpoint switch state to the far-side manifold.
    pub tube_distance: Option<f64>,
    /// For k >= 1: whether every probe in the interval below carries exactly
    /// k sign changes, i.e. the k-th onset label coincides with the previous
    /// threshold.
    pub tilde_matches_prev: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalProbe {
    pub label: f64,
    pub zeros: usize,
    pub class: SolutionClass,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalSummary {
    /// Interval index i covers labels between threshold i-1 and threshold i.
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub probes: Vec<IntervalProbe>,
    /// Set when every probe in the interval carries the same count.
    pub zeros_constant: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchSummary {
    pub tag: String,
    pub points: usize,
    pub crossings: usize,
    pub arclength: f64,
    pub termination: String,
    pub seed_offset: f64,
    pub seed_label: f64,
    pub label_rate: f64,
    pub seed_deviation: Option<f64>,
    pub center: bool,
    pub center_flow_match: Option<f64>,
}

impl BranchSummary {
    pub fn of(b: &ManifoldBranch) -> Self {
        BranchSummary {
            tag: b.tag.label().to_string(),
            points: b.points.len(),
            crossings: b.crossings.len(),
            arclength: b.total_arclength(),
            termination: b.termination.label().to_string(),
            seed_offset: b.seed_offset,
            seed_label: b.seed_label,
            label_rate: b.label_rate,
            seed_deviation: b.seed_deviation,
            center: b.center,
            center_flow_match: b.center_flow_match,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StructureReport {
    pub family: Family,
    pub config: ProblemConfig,
    pub side1: ExponentSet,
    pub side2: ExponentSet,
    pub regime_note: String,
    pub thresholds: Vec<ThresholdEntry>,
    pub intervals: Vec<IntervalSummary>,
    pub intersections: Vec<IntersectionPoint>,
    /// Every intersection region's parity matches its arm sign.
    pub parity_ok: bool,
    /// Every intersection's sweep angle falls in its region window.
    pub windows_ok: bool,
    /// Positive transversality at every region opener.
    pub transversal_ok: bool,
    /// Largest label reachable on the scanned branch within budget.
    pub label_reach: f64,
    /// Set when the scanned branch genuinely blows up within budget: the
    /// empirical supremum of labels whose profile crosses the switch.
    pub label_supremum: Option<f64>,
    pub walker: BranchSummary,
    pub arm_plus: Option<BranchSummary>,
    pub arm_minus: Option<BranchSummary>,
    pub probe_count: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct Disc {
    zeros: usize,
    tag: u8,
}

fn disc_of(class: &SolutionClass, family: Family) -> Disc {
    let tag = match family {
        Family::Regular => match class.infinity {
            InfinityClass::FastDecay { .. } => 0,
            InfinityClass::SlowDecay { tag } => rate_tag_code(tag),
            InfinityClass::BlowUp { .. } => 7,
            InfinityClass::Unresolved => 8,
        },
        Family::Decay => match class.origin {
            OriginClass::Regular { .. } => 0,
            OriginClass::Singular { tag } => rate_tag_code(tag),
            OriginClass::Truncated { .. } => 7,
            OriginClass::Unresolved => 8,
        },
    };
    Disc { zeros: class.zeros, tag }
}

fn rate_tag_code(tag: RateTag) -> u8 {
    match tag {
        RateTag::PowerToPair { p_x } => 1 + (p_x < 0.0) as u8,
        RateTag::Linear { c, .. } => 3 + (c < 0.0) as u8,
        RateTag::LogCorrected { c, .. } => 5 + (c < 0.0) as u8,
    }
}

/// Locates the first `k_max + 1` threshold labels of the family by scanning
/// the scanned branch in trace time (logarithmic in the label) and bisecting
/// every change of (zero count, terminal class).
pub fn find_structure(
    sys: &PiecewiseSystem,
    family: Family,
    opts: &StructureOptions,
) -> Result<StructureReport> {
    // existence gates: the threshold structure needs one absorbing and
    // one feeding side in the right order, and supercritical outer growth
    let (e1, e2) = (&sys.side1.exp, &sys.side2.exp);
    match family {
        Family::Regular => {
            if !(sys.side1.k < 0.0 && sys.side2.k > 0.0) {
                return Err(Error::Regime(format!(
                    "the regular-label family needs absorption inside the switch and a source outside it; got K1 = {}, K2 = {}",
                    sys.side1.k, sys.side2.k
                )));
            }
            if !(e2.l > e2.sobolev) || e2.hamiltonian {
                return Err(Error::Regime(format!(
                    "outer growth l2 = {:.6} must exceed the energy-critical exponent {:.6} for the decaying family to spiral",
                    e2.l, e2.sobolev
                )));
            }
        }
        Family::Decay => {
            if !(sys.side1.k > 0.0 && sys.side2.k < 0.0) {
                return Err(Error::Regime(format!(
                    "the decay-label family needs a source inside the switch and absorption outside it; got K1 = {}, K2 = {}",
                    sys.side1.k, sys.side2.k
                )));
            }
            if !(e2.l > e2.serrin) {
                return Err(Error::Regime(format!(
                    "outer growth l2 = {:.6} must exceed the scaling-threshold exponent {:.6} for fast decay to be selective",
                    e2.l, e2.serrin
                )));
            }
            if !(e1.l < e1.sobolev) || e1.hamiltonian {
                return Err(Error::Regime(format!(
                    "inner growth l1 = {:.6} must stay below the energy-critical exponent {:.6} for the regular family to spiral",
                    e1.l, e1.sobolev
                )));
            }
        }
    }

    let shooter = Shooter::new(sys, family, opts)?;
    let mut warnings: Vec<String> = Vec::new();
    let mut probe_count = 0usize;
    let probe_cap = 16 * opts.scan_points.max(8) + 2048;

    let t_end = shooter.end_time();
    let lo_t = 0.01 * t_end;
    let hi_t = t_end * (1.0 - 1e-9);
    let n = opts.scan_points.max(8);

    let eval = |tau: f64,
                    probe_count: &mut usize,
                    warnings: &mut Vec<String>|
     -> Result<(Disc, Probe)> {
        *probe_count += 1;
        if *probe_count > probe_cap {
            return Err(Error::BudgetExhausted(format!(
                "structure scan exceeded {probe_cap} probes"
            )));
        }
        let mut p = shooter.probe(tau)?;
        if p.class.degenerate > 0 {
            // a grazing contact with u = 0; step the label once and look again
            let nudged = shooter.probe(tau + (hi_t - lo_t).abs() * 1e-9 + 1e-12)?;
            *probe_count += 1;
            if nudged.class.degenerate == 0 {
                p = nudged;
            } else {
                warnings.push(format!(
                    "degenerate u = 0 contact persists near label {:.6e}",
                    p.label
                ));
            }
        }
        if let Some(w) = &p.warning {
            warnings.push(w.clone());
        }
        Ok((disc_of(&p.sharp, family), p))
    };

    // scan
    let mut grid: Vec<(f64, Disc)> = Vec::with_capacity(n);
    for i in 0..n {
        let tau = lo_t + (hi_t - lo_t) * i as f64 / (n - 1) as f64;
        let (d, _) = eval(tau, &mut probe_count, &mut warnings)?;
        grid.push((tau, d));
    }

    // refine every flip, splitting stacked flips as they surface
    let mut work: Vec<(f64, Disc, f64, Disc)> = grid
        .windows(2)
        .filter(|w| w[0].1 != w[1].1)
        .map(|w| (w[0].0, w[0].1, w[1].0, w[1].1))
        .collect();
    let mut entries: Vec<ThresholdEntry> = Vec::new();
    let need = opts.k_max + 1;
    let mut wi = 0;
    while wi < work.len() && entries.len() < need {
        let (mut a, da, b0, db) = work[wi];
        wi += 1;
        let mut b = b0;
        let mut db_cur = db;
        loop {
            let (la, lb) = (shooter.label_of(a), shooter.label_of(b));
            if (lb - la).abs() <= opts.label_rel_tol * lb.abs() {
                break;
            }
            let mid = 0.5 * (a + b);
            if mid <= a.min(b) || mid >= a.max(b) {
                break;
            }
            let (dm, _) = eval(mid, &mut probe_count, &mut warnings)?;
            if dm == da {
                a = mid;
            } else {
                b = mid;
                db_cur = dm;
            }
        }
        let (_, probe) = eval(0.5 * (a + b), &mut probe_count, &mut warnings)?;
        let tz = truncated_zero_count(&probe.leg);
        let mut class = probe.class;
        class.zeros = shooter.walker_zeros(probe.upsilon) + tz.count;
        let (la, lb) = (shooter.label_of(a), shooter.label_of(b));
        entries.push(ThresholdEntry {
            k: da.zeros,
            label: 0.5 * (la + lb),
            upsilon: probe.upsilon,
            bracket: [la, lb],
            tolerance: (lb - la).abs(),
            class,
            tube_distance: probe.tube_distance,
            tilde_matches_prev: None,
        });
        // stacked flips: the bisection homed in on the first change inside
        // the bracket; anything between its right end and the grid point is
        // a fresh bracket
        if db_cur != db {
            work.insert(wi, (b, db_cur, b0, db));
        }
    }
    entries.sort_by(|p, q| p.label.partial_cmp(&q.label).unwrap());
    if entries.len() < need {
        return Err(Error::BracketNotFound {
            lo: shooter.label_of(lo_t),
            hi: shooter.label_of(hi_t),
            what: format!(
                "threshold #{} of the {} family (found {})",
                entries.len(),
                match family {
                    Family::Regular => "regular-label",
                    Family::Decay => "decay-label",
                },
                entries.len()
            ),
        });
    }
    entries.truncate(need);
    for (i, e) in entries.iter().enumerate() {
        if e.k != i {
            warnings.push(format!(
                "threshold #{i} at label {:.6e} sits below a count of {} sign changes, not {i}",
                e.label, e.k
            ));
        }
    }

    // interval probes between consecutive thresholds
    let ppi = opts.probes_per_interval.max(1);
    let mut intervals: Vec<IntervalSummary> = Vec::new();
    for i in 0..entries.len() {
        let lo = if i == 0 { shooter.label_of(lo_t) } else { entries[i - 1].label };
        let hi = entries[i].label;
        let mut probes = Vec::with_capacity(ppi);
        for j in 0..ppi {
            let f = (j as f64 + 0.5) / ppi as f64;
            let label = (lo.abs().ln() + f * (hi.abs().ln() - lo.abs().ln())).exp()
                * lo.signum();
            let (_, p) = eval(shooter.time_of(label), &mut probe_count, &mut warnings)?;
            probes.push(IntervalProbe { label: p.label, zeros: p.class.zeros, class: p.class });
        }
        let zc = probes.first().map(|p| p.zeros);
        let zeros_constant = zc.filter(|z| probes.iter().all(|p| p.zeros == *z));
        intervals.push(IntervalSummary { index: i, lo, hi, probes, zeros_constant });
    }
    for i in 1..entries.len() {
        entries[i].tilde_matches_prev =
            Some(intervals[i].zeros_constant == Some(i));
    }

    // intersections of the two manifold polylines
    let (mut parity_ok, mut windows_ok, mut transversal_ok) = (true, true, true);
    let intersections = match (&shooter.tube_plus, &shooter.tube_minus) {
        (Some(p), Some(m)) => {
            let hits = intersect_manifolds(&shooter.walker, p, m, sys, None)?;
            for h in &hits {
                if (h.j % 2 == 0) != h.arm_positive {
                    parity_ok = false;
                    warnings.push(format!(
                        "crossing in region {} sits on the {} arm",
                        h.j,
                        if h.arm_positive { "positive" } else { "negative" }
                    ));
                }
                if !h.window_ok {
                    windows_ok = false;
                    warnings.push(format!(
                        "sweep angle {:.6} outside the region-{} window",
                        h.theta_j, h.j
                    ));
                }
                if h.first_in_region && h.transversality <= 0.0 {
                    transversal_ok = false;
                    warnings.push(format!(
                        "nonpositive transversality {:.3e} at the region-{} opener",
                        h.transversality, h.j
                    ));
                }
                if h.reentrant {
                    warnings.push(format!(
                        "the scanned branch re-enters region {} at arclength {:.6e}",
                        h.j, h.upsilon
                    ));
                }
            }
            let covered = hits.iter().map(|h| h.j).max().map_or(0, |j| j + 1);
            if covered < need {
                warnings.push(format!(
                    "intersections cover {covered} of {need} regions within the arm budgets"
                ));
            }
            hits
        }
        _ => {
            warnings.push("far-side manifold pair unavailable; no intersection table".into());
            Vec::new()
        }
    };

    let label_reach = shooter.label_of(t_end);
    let label_supremum = matches!(shooter.walker.termination, EventKind::BlowUp)
        .then_some(label_reach);
    if label_supremum.is_none() {
        warnings.push(
            "scanned branch ended within budget before blowing up; the label supremum is only a reach"
                .into(),
        );
    }

    let regime_note = format!(
        "inner side: K = {}, l = {:.6}, {:?}; outer side: K = {}, l = {:.6}, {:?}",
        sys.side1.k, e1.l, e1.regime, sys.side2.k, e2.l, e2.regime
    );

    Ok(StructureReport {
        family,
        config: shooter_config(sys),
        side1: sys.side1.exp,
        side2: sys.side2.exp,
        regime_note,
        thresholds: entries,
        intervals,
        intersections,
        parity_ok,
        windows_ok,
        transversal_ok,
        label_reach,
        label_supremum,
        walker: BranchSummary::of(&shooter.walker),
        arm_plus: shooter.tube_plus.as_ref().map(BranchSummary::of),
        arm_minus: shooter.tube_minus.as_ref().map(BranchSummary::of),
        probe_count,
        warnings,
    })
}

fn shooter_config(sys: &PiecewiseSystem) -> ProblemConfig {
    ProblemConfig {
        n: sys.side1.exp.n,
        eta: sys.side1.exp.eta,
        k1: sys.side1.k / sys.rho.powf(2.0 + sys.side1.exp.delta),
        q1: sys.side1.exp.q,
        delta1: sys.side1.exp.delta,
        k2: sys.side2.k / sys.rho.powf(2.0 + sys.side2.exp.delta),
        q2: sys.side2.exp.q,
        delta2: sys.side2.exp.delta,
        rho: sys.rho,
    }
}

// ---------------------------------------------------------------------------
// rescaling check

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScalingQuantities {
    /// Ground-state threshold label.
    pub d0: f64,
    /// Radius where the ground state attains its maximum.
    pub r0: f64,
    /// The maximum itself.
    pub u0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingCheck {
    pub k_bar: f64,
    pub rho_bar: f64,
    pub base: ScalingQuantities,
    pub scaled: ScalingQuantities,
    /// Base quantities pushed through the closed-form factors.
    pub predicted: ScalingQuantities,
    pub rel_err: ScalingQuantities,
}

/// Measures (D_0, R_0, U_0) for the base configuration and for the same
/// configuration with both couplings multiplied by `k_bar` and the switch
/// radius set to `rho_bar`, then compares against the closed-form factors
/// rho_bar for the radius and [rho_bar^{2+delta} k_bar]^{-1/(q-2)} for the
/// amplitudes.
pub fn scaling_report(
    base: &ProblemConfig,
    k_bar: f64,
    rho_bar: f64,
    opts: &StructureOptions,
) -> Result<ScalingCheck> {
    if base.eta != 0.0 {
        return Err(Error::Domain(
            "the maximum of the ground state is only finite without a Hardy term; set eta = 0"
                .into(),
        ));
    }
    if base.q1 != base.q2 || base.delta1 != base.delta2 {
        return Err(Error::Domain(
            "amplitude rescaling needs matching growth on both sides (q1 = q2, delta1 = delta2)"
                .into(),
        ));
    }
    if !(k_bar > 0.0 && rho_bar > 0.0) {
        return Err(Error::Domain(format!(
            "scale factors must be positive, got k_bar = {k_bar}, rho_bar = {rho_bar}"
        )));
    }
    let scaled_cfg = ProblemConfig {
        k1: base.k1 * k_bar,
        k2: base.k2 * k_bar,
        rho: base.rho * rho_bar,
        ..*base
    };

    let measure = |cfg: &ProblemConfig| -> Result<ScalingQuantities> {
        let sys = PiecewiseSystem::from_config(cfg)?;
        let mopts = StructureOptions { k_max: 0, ..opts.clone() };
        let rep = find_structure(&sys, Family::Regular, &mopts)?;
        let d0 = rep.thresholds[0].label;
        let shooter = Shooter::new(&sys, Family::Regular, &mopts)?;
        let probe = shooter.probe(shooter.time_of(d0))?;
        // with absorption inside, u climbs to the switch and turns over
        // beyond it: the maximum is the first critical radius going outward
        let ev = probe
            .leg
            .events
            .iter()
            .find(|e| matches!(e.kind, EventKind::XAxisCrossing) && e.x > 0.0);
        let (r0, u0) = match ev {
            Some(e) => (
                sys.rho * e.t.exp(),
                e.x * (-sys.side2.exp.alpha * e.t).exp(),
            ),
            None => {
                // fall back to the sampled maximum of u
                let mut best = (sys.rho, 0.0);
                for p in &probe.leg.samples {
                    let u = p.x * (-sys.side2.exp.alpha * p.t).exp();
                    if u > best.1 {
                        best = (sys.rho * p.t.exp(), u);
                    }
                }
                best
            }
        };
        Ok(ScalingQuantities { d0, r0, u0 })
    };

    let base_q = measure(base)?;
    let scaled_q = measure(&scaled_cfg)?;
    let amp = (rho_bar.powf(2.0 + base.delta1) * k_bar).powf(-1.0 / (base.q1 - 2.0));
    let predicted = ScalingQuantities {
        d0: base_q.d0 * amp,
        r0: base_q.r0 * rho_bar,
        u0: base_q.u0 * amp,
    };
    let rel = |m: f64, p: f64| (m - p).abs() / p.abs().max(1e-300);
    Ok(ScalingCheck {
        k_bar,
        rho_bar,
        base: base_q,
        scaled: scaled_q,
        predicted,
        rel_err: ScalingQuantities {
            d0: rel(scaled_q.d0, predicted.d0),
            r0: rel(scaled_q.r0, predicted.r0),
            u0: rel(scaled_q.u0, predicted.u0),
        },
    })
}

// ---------------------------------------------------------------------------
// emitters

pub fn write_thresholds_csv<W: Write>(w: &mut W, rep: &StructureReport) -> io::Result<()> {
    writeln!(
        w,
        "k,label,bracket_lo,bracket_hi,tolerance,upsilon,zeros,class,tube_distance"
    )?;
    for th in &rep.thresholds {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.3e},{:.16e},{},{},{}",
            th.k,
            th.label,
            th.bracket[0],
            th.bracket[1],
            th.tolerance,
            th.upsilon,
            th.class.zeros,
            class_code(&th.class),
            th.tube_distance.map_or("".to_string(), |d| format!("{d:.3e}")),
        )?;
    }
    Ok(())
}

pub fn write_intersections_csv<W: Write>(
    w: &mut W,
    pts: &[IntersectionPoint],
) -> io::Result<()> {
    writeln!(
        w,
        "j,arm,x,y,upsilon,sigma,theta,transversality,first,last,window_ok"
    )?;
    for p in pts {
        writeln!(
            w,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}",
            p.j,
            if p.arm_positive { "+" } else { "-" },
            p.location[0],
            p.location[1],
            p.upsilon,
            p.sigma,
            p.theta_j,
            p.transversality,
            p.first_in_region,
            p.last_in_region,
            p.window_ok,
        )?;
    }
    Ok(())
}
