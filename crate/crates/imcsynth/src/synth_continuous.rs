//! Synthesis over a continuous input set. Inputs live in unions of boxes; each cell
//! gets a finite action set picked from the arrangement of its transition trigger
//! regions, and reach values are optimised on a grid of inputs with a local polish.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{
    extend_to_boundary, interval_row, reach_boxes, transition_bounds, AxisIndex, NoiseModel,
    Partition, Rect, SystemModel,
};
use crate::automata::{product, ProductModel, RabinAutomaton};
use crate::components::{self, ActionSets, ComponentKind, ComponentResult};
use crate::error::{Error, Result};
use crate::imc::{complement_result, Bmdp, BoundedRow, IntervalResult, LabelSet, PartialPolicy};
use crate::reachability::{maximize_reach, ranking, row_value, Bound, Direction, ReachOptions};
use crate::synth_finite::{
    classify_actions, flat_solution, score_refinement, suboptimality_factor, ActionBounds,
    IterationRecord, Objective, StateReport, SuboptimalityReport, SynthesisResult,
};

const FEAS_TOL: f64 = 1e-12;
/// Relative inset that keeps selected inputs off the faces of their overlap.
const INSET: f64 = 1e-9;

fn norm2(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum()
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    a.partial_cmp(b) == Some(std::cmp::Ordering::Less)
}

fn inset(b: &Rect) -> Rect {
    let mut out = b.clone();
    for k in 0..b.dim() {
        let d = INSET * b.width(k);
        out.lo[k] += d;
        out.hi[k] -= d;
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InputRegion {
    pub boxes: Vec<Rect>,
}

impl InputRegion {
    pub fn new(boxes: Vec<Rect>) -> Self {
        InputRegion { boxes }
    }

    pub fn from_box(b: Rect) -> Self {
        InputRegion { boxes: vec![b] }
    }

    /// Cubes of half-width `r` around each point.
    pub fn around(points: &[Vec<f64>], r: f64) -> Self {
        let boxes = points
            .iter()
            .map(|p| {
                Rect::new(
                    p.iter().map(|x| x - r).collect(),
                    p.iter().map(|x| x + r).collect(),
                )
            })
            .collect();
        InputRegion { boxes }
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Sum of box volumes; boxes have disjoint interiors.
    pub fn volume(&self) -> f64 {
        self.boxes.iter().map(Rect::volume).sum()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(u))
    }

    pub fn hull(&self) -> Option<Rect> {
        self.boxes.iter().cloned().reduce(|a, b| a.hull(&b))
    }

    /// Closest point to the origin, pulled slightly inside its box.
    pub fn min_norm_point(&self) -> Option<Vec<f64>> {
        let mut best: Option<Vec<f64>> = None;
        for b in &self.boxes {
            let u = inset(b).clamp_point(&vec![0.0; b.dim()]);
            let better = match &best {
                None => true,
                Some(v) => norm2(&u) < norm2(v) || (norm2(&u) == norm2(v) && lex_less(&u, v)),
            };
            if better {
                best = Some(u);
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trigger {
    Off,
    On,
    Undecided,
}

/// Closed-form thresholds on one input coordinate.
#[derive(Clone, Copy, Debug)]
struct AxisRule {
    free: bool,
    off_below: f64,
    off_above: f64,
    split: f64,
    on_lo: f64,
    on_hi: f64,
}

impl AxisRule {
    fn new(rl: f64, rh: f64, a: f64, b: f64, wl: f64, wh: f64, c: f64) -> Self {
        let mid_t = if a == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else if b == f64::INFINITY {
            f64::INFINITY
        } else {
            0.5 * (a + b)
        };
        AxisRule {
            free: a == f64::NEG_INFINITY && b == f64::INFINITY,
            off_below: a - rh - wh,
            off_above: b - rl - wl,
            split: mid_t - c - 0.5 * (rl + rh),
            on_lo: a - rl - wh,
            on_hi: b - rh - wl,
        }
    }

    fn off(&self, u: f64) -> bool {
        !self.free && (u <= self.off_below || u >= self.off_above)
    }

    fn on(&self, u: f64) -> bool {
        self.free || (u >= self.split && u <= self.on_hi) || (u <= self.split && u >= self.on_lo)
    }

    fn breaks(&self) -> [f64; 5] {
        [
            self.off_below,
            self.off_above,
            self.split,
            self.on_lo,
            self.on_hi,
        ]
    }
}

fn axis_rules(reach: &Rect, target: &Rect, noise: &NoiseModel) -> Vec<AxisRule> {
    noise
        .axes
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let (wl, wh) = w.support();
            AxisRule::new(
                reach.lo[k],
                reach.hi[k],
                target.lo[k],
                target.hi[k],
                wl,
                wh,
                w.mode(),
            )
        })
        .collect()
}

fn classify(rules: &[AxisRule], u: &[f64]) -> Trigger {
    if rules.iter().zip(u).any(|(r, &x)| r.off(x)) {
        Trigger::Off
    } else if rules.iter().zip(u).all(|(r, &x)| r.on(x)) {
        Trigger::On
    } else {
        Trigger::Undecided
    }
}

/// Qualitative type of the transition `reach + u + w ∈ target`.
pub fn trigger_at(reach: &Rect, target: &Rect, noise: &NoiseModel, u: &[f64]) -> Trigger {
    classify(&axis_rules(reach, target, noise), u)
}

/// Cuts `b` along the given per-axis coordinates, keeping those strictly inside.
fn cut_box(b: &Rect, breaks: &[Vec<f64>]) -> Vec<Rect> {
    let axes: Vec<Vec<(f64, f64)>> = (0..b.dim())
        .map(|k| {
            let (lo, hi) = (b.lo[k], b.hi[k]);
            if lo >= hi {
                return vec![(lo, hi)];
            }
            let mut pts: Vec<f64> = breaks[k]
                .iter()
                .copied()
                .filter(|&x| x > lo && x < hi)
                .collect();
            pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            pts.dedup();
            let mut edges = vec![lo];
            edges.extend(pts);
            edges.push(hi);
            edges.windows(2).map(|w| (w[0], w[1])).collect()
        })
        .collect();
    let mut out = vec![Rect::new(Vec::new(), Vec::new())];
    for ax in &axes {
        out = out
            .into_iter()
            .flat_map(|r| {
                ax.iter().map(move |&(lo, hi)| {
                    let mut s = r.clone();
                    s.lo.push(lo);
                    s.hi.push(hi);
                    s
                })
            })
            .collect();
    }
    out
}

/// Joins boxes that share a full face until none do.
fn merge_boxes(mut boxes: Vec<Rect>) -> Vec<Rect> {
    loop {
        let mut joined = None;
        'outer: for i in 0..boxes.len() {
            for j in 0..boxes.len() {
                if i == j {
                    continue;
                }
                let (a, b) = (&boxes[i], &boxes[j]);
                for k in 0..a.dim() {
                    let rest =
                        (0..a.dim()).all(|l| l == k || (a.lo[l] == b.lo[l] && a.hi[l] == b.hi[l]));
                    if rest && a.hi[k] == b.lo[k] && a.lo[k] < a.hi[k] && b.lo[k] < b.hi[k] {
                        let mut m = a.clone();
                        m.hi[k] = b.hi[k];
                        joined = Some((i, j, m));
                        break 'outer;
                    }
                }
            }
        }
        match joined {
            Some((i, j, m)) => {
                boxes[i] = m;
                boxes.remove(j);
            }
            None => return boxes,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TriggerRegions {
    pub off: InputRegion,
    pub on: InputRegion,
    pub undecided: InputRegion,
}

impl TriggerRegions {
    pub fn region(&self, t: Trigger) -> &InputRegion {
        match t {
            Trigger::Off => &self.off,
            Trigger::On => &self.on,
            Trigger::Undecided => &self.undecided,
        }
    }

    /// First region whose closure holds `u`.
    pub fn label_at(&self, u: &[f64]) -> Option<Trigger> {
        [Trigger::Off, Trigger::On, Trigger::Undecided]
            .into_iter()
            .find(|&t| self.region(t).contains(u))
    }

    /// The transition is off for every input.
    pub fn is_trivial(&self) -> bool {
        self.on.is_empty() && self.undecided.is_empty()
    }

    pub fn volume(&self) -> f64 {
        self.off.volume() + self.on.volume() + self.undecided.volume()
    }
}

/// Splits `u` into the inputs for which the transition from the cell with reach box
/// `reach` into `target` is off, on or undecided.
pub fn trigger_regions(
    reach: &Rect,
    target: &Rect,
    noise: &NoiseModel,
    u: &InputRegion,
) -> TriggerRegions {
    let rules = axis_rules(reach, target, noise);
    let breaks: Vec<Vec<f64>> = rules.iter().map(|r| r.breaks().to_vec()).collect();
    let mut out = TriggerRegions::default();
    for b in &u.boxes {
        for piece in cut_box(b, &breaks) {
            let region = match classify(&rules, &piece.center()) {
                Trigger::Off => &mut out.off,
                Trigger::On => &mut out.on,
                Trigger::Undecided => &mut out.undecided,
            };
            region.boxes.push(piece);
        }
    }
    for reg in [&mut out.off, &mut out.on, &mut out.undecided] {
        reg.boxes = merge_boxes(std::mem::take(&mut reg.boxes));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapKind {
    /// At most one undecided transition.
    Single,
    /// Two or more undecided transitions.
    Multi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub region: InputRegion,
    /// Type of each target's transition, in the order the regions were given.
    pub types: Vec<Trigger>,
    pub kind: OverlapKind,
}

impl Overlap {
    pub fn with(&self, t: Trigger) -> Vec<usize> {
        (0..self.types.len())
            .filter(|&k| self.types[k] == t)
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OverlapSet {
    pub overlaps: Vec<Overlap>,
}

impl OverlapSet {
    pub fn volume(&self) -> f64 {
        self.overlaps.iter().map(|o| o.region.volume()).sum()
    }
}

/// Groups the inputs of `u` by their type vector over all targets.
pub fn enumerate_overlaps(regions: &[TriggerRegions], u: &InputRegion) -> OverlapSet {
    let mut order: Vec<(Vec<Trigger>, Vec<Rect>)> = Vec::new();
    let mut seen: HashMap<Vec<Trigger>, usize> = HashMap::new();
    for b in &u.boxes {
        let breaks: Vec<Vec<f64>> = (0..b.dim())
            .map(|k| {
                regions
                    .iter()
                    .flat_map(|r| [&r.off, &r.on, &r.undecided])
                    .flat_map(|reg| reg.boxes.iter().flat_map(move |x| [x.lo[k], x.hi[k]]))
                    .collect()
            })
            .collect();
        for piece in cut_box(b, &breaks) {
            let c = piece.center();
            let types: Vec<Trigger> = regions
                .iter()
                .map(|r| r.label_at(&c).unwrap_or(Trigger::Off))
                .collect();
            let slot = *seen.entry(types.clone()).or_insert_with(|| {
                order.push((types, Vec::new()));
                order.len() - 1
            });
            order[slot].1.push(piece);
        }
    }
    let overlaps = order
        .into_iter()
        .map(|(types, boxes)| {
            let undecided = types.iter().filter(|&&t| t == Trigger::Undecided).count();
            Overlap {
                region: InputRegion {
                    boxes: merge_boxes(boxes),
                },
                types,
                kind: if undecided <= 1 {
                    OverlapKind::Single
                } else {
                    OverlapKind::Multi
                },
            }
        })
        .collect();
    OverlapSet { overlaps }
}

/// Whether every target in `off` can get zero mass while the on targets and the other
/// undecided targets still absorb all of it, given upper bounds `hi` per target.
pub fn offs_feasible(hi: &[f64], on: &[usize], undecided: &[usize], off: &BTreeSet<usize>) -> bool {
    let mass: f64 = on.iter().map(|&t| hi[t]).sum::<f64>()
        + undecided
            .iter()
            .filter(|t| !off.contains(t))
            .map(|&t| hi[t])
            .sum::<f64>();
    mass >= 1.0 - FEAS_TOL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub n_min: usize,
    pub n_init: usize,
    /// Coordinate-descent rounds after the grid search.
    pub polish_rounds: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_min: 3,
            n_init: 12,
            polish_rounds: 12,
        }
    }
}

impl GridConfig {
    /// Points per axis for box `b` of an input set with total volume `total`.
    pub fn points_per_axis(&self, b: &Rect, total: f64) -> usize {
        let scaled = if total > 0.0 {
            (self.n_init as f64 * b.volume() / total).ceil() as usize
        } else {
            0
        };
        self.n_min.max(scaled).max(1)
    }

    pub fn points(&self, b: &Rect, total: f64) -> Vec<Vec<f64>> {
        let n = self.points_per_axis(b, total);
        let axes: Vec<Vec<f64>> = (0..b.dim())
            .map(|k| {
                if b.width(k) <= 0.0 || n == 1 {
                    return vec![b.lo[k]];
                }
                (0..n)
                    .map(|i| {
                        if i + 1 == n {
                            b.hi[k]
                        } else {
                            b.lo[k] + b.width(k) * i as f64 / (n - 1) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let mut out = vec![Vec::new()];
        for ax in &axes {
            out = out
                .into_iter()
                .flat_map(|p: Vec<f64>| {
                    ax.iter().map(move |&x| {
                        let mut q = p.clone();
                        q.push(x);
                        q
                    })
                })
                .collect();
        }
        out
    }

    fn spacing(&self, b: &Rect, total: f64) -> Vec<f64> {
        let n = self.points_per_axis(b, total);
        (0..b.dim())
            .map(|k| {
                if n > 1 {
                    b.width(k) / (n - 1) as f64
                } else {
                    b.width(k)
                }
            })
            .collect()
    }

    /// Largest grid spacing over the boxes of `region`.
    pub fn resolution(&self, region: &InputRegion, total: f64) -> f64 {
        region
            .boxes
            .iter()
            .flat_map(|b| self.spacing(b, total))
            .fold(0.0, f64::max)
    }
}

/// Coordinate ascent inside `b`, halving the step after a round without progress.
fn polish<F: Fn(&[f64]) -> f64>(
    b: &Rect,
    u0: &[f64],
    v0: f64,
    step0: &[f64],
    rounds: usize,
    f: &F,
) -> (Vec<f64>, f64) {
    let mut u = u0.to_vec();
    let mut v = v0;
    let mut step: Vec<f64> = step0.iter().map(|s| 0.5 * s).collect();
    for _ in 0..rounds {
        let mut improved = false;
        for k in 0..u.len() {
            if step[k] <= 0.0 {
                continue;
            }
            for sgn in [-1.0, 1.0] {
                let mut c = u.clone();
                c[k] = (u[k] + sgn * step[k]).clamp(b.lo[k], b.hi[k]);
                if c[k] == u[k] {
                    continue;
                }
                let fc = f(&c);
                if fc > v {
                    u = c;
                    v = fc;
                    improved = true;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    (u, v)
}

/// Maximises `f` over `region`: exact evaluation on a per-box grid plus the `seeds`
/// that lie in the region, then a local polish from the best point. Ties go to the
/// lexicographically smallest input.
pub fn optimize_input<F: Fn(&[f64]) -> f64>(
    region: &InputRegion,
    total_area: f64,
    grid: &GridConfig,
    seeds: &[Vec<f64>],
    f: F,
) -> Result<(Vec<f64>, f64)> {
    if region.is_empty() {
        return Err(Error::EmptyInputRegion);
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    let cands = region
        .boxes
        .iter()
        .flat_map(|b| grid.points(b, total_area))
        .chain(seeds.iter().filter(|s| region.contains(s)).cloned());
    for u in cands {
        let v = f(&u);
        let better = match &best {
            None => true,
            Some((bu, bv)) => v > *bv || (v == *bv && lex_less(&u, bu)),
        };
        if better {
            best = Some((u, v));
        }
    }
    let (u, v) = best.expect("region has at least one box");
    let b = region
        .boxes
        .iter()
        .find(|b| b.contains(&u))
        .expect("candidate lies in region");
    Ok(polish(
        b,
        &u,
        v,
        &grid.spacing(b, total_area),
        grid.polish_rounds,
        &f,
    ))
}

/// Best input for the one-step reach objective: mass of `row_at(u)` allocated along the
/// ranking of `values` (adversarially or favorably), weighted by `values`.
pub fn optimize_reach_input<R: Fn(&[f64]) -> BoundedRow>(
    row_at: R,
    values: &[f64],
    region: &InputRegion,
    total_area: f64,
    grid: &GridConfig,
    dir: Direction,
) -> Result<(Vec<f64>, f64)> {
    let rank = ranking(values);
    optimize_input(region, total_area, grid, &[], |u| {
        row_value(&row_at(u), &rank, values, dir)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub retained: InputRegion,
    /// Each evaluated sub-box with its best value and whether it was kept.
    pub pieces: Vec<(Rect, f64, bool)>,
    /// Grid spacing used on the sub-boxes.
    pub resolution: f64,
}

/// Splits every box of `region` in half along each axis and drops the sub-boxes whose
/// best value under `f` falls below `lower_value`. A box whose sub-boxes all survive is
/// kept whole.
pub fn prune_inputs<F: Fn(&[f64]) -> f64>(
    region: &InputRegion,
    lower_value: f64,
    margin: f64,
    total_area: f64,
    grid: &GridConfig,
    seeds: &[Vec<f64>],
    f: F,
) -> Result<PruneOutcome> {
    let mut retained = Vec::new();
    let mut pieces = Vec::new();
    let mut resolution: f64 = 0.0;
    for b in &region.boxes {
        let subs = b.quarter();
        let mut kept = Vec::new();
        for s in &subs {
            let r = InputRegion::from_box(s.clone());
            let (_, v) = optimize_input(&r, total_area, grid, seeds, &f)?;
            resolution = resolution.max(grid.resolution(&r, total_area));
            let keep = v + margin >= lower_value;
            pieces.push((s.clone(), v, keep));
            if keep {
                kept.push(s.clone());
            }
        }
        if kept.len() == subs.len() {
            retained.push(b.clone());
        } else {
            retained.extend(kept);
        }
    }
    Ok(PruneOutcome {
        retained: InputRegion { boxes: retained },
        pieces,
        resolution,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedInput {
    pub input: Vec<f64>,
    pub overlap: usize,
    /// Undecided targets this input lets the adversary switch off together.
    pub off: Vec<usize>,
}

/// Picks finitely many inputs covering the qualitative behaviours of the overlaps.
/// Targets are indexed as in the regions the overlaps were built from.
pub fn select_inputs(
    reach: &Rect,
    targets: &[Rect],
    noise: &NoiseModel,
    overlaps: &OverlapSet,
    total_area: f64,
    grid: &GridConfig,
    max_combinations: usize,
) -> Vec<SelectedInput> {
    let hi_at = |u: &[f64]| -> Vec<f64> {
        let s = reach.translate(u);
        targets
            .iter()
            .map(|t| transition_bounds(&s, t, noise).1)
            .collect()
    };
    let mut out: Vec<SelectedInput> = Vec::new();
    for (k, ov) in overlaps.overlaps.iter().enumerate() {
        if ov.kind == OverlapKind::Single {
            out.extend(ov.region.min_norm_point().map(|input| SelectedInput {
                input,
                overlap: k,
                off: Vec::new(),
            }));
            continue;
        }
        let on = ov.with(Trigger::On);
        let und = ov.with(Trigger::Undecided);
        let inner = InputRegion::new(ov.region.boxes.iter().map(inset).collect());
        let mut existing: Vec<Vec<f64>> = Vec::new();
        let start: BTreeSet<usize> = und.iter().copied().collect();
        let mut queue = VecDeque::from([start.clone()]);
        let mut seen = BTreeSet::from([start]);
        let mut feasible: Vec<BTreeSet<usize>> = Vec::new();
        let mut tried = 0;
        while let Some(s) = queue.pop_front() {
            if feasible.iter().any(|f| f.is_superset(&s)) {
                continue;
            }
            if tried >= max_combinations {
                break;
            }
            tried += 1;
            let ok = |u: &[f64]| offs_feasible(&hi_at(u), &on, &und, &s);
            if existing.iter().any(|u| ok(u)) {
                feasible.push(s);
                continue;
            }
            match constrained_min_norm(&inner, total_area, grid, &ok) {
                Some(u) => {
                    existing.push(u.clone());
                    out.push(SelectedInput {
                        input: u,
                        overlap: k,
                        off: s.iter().copied().collect(),
                    });
                    feasible.push(s);
                }
                None => {
                    for &t in &s {
                        let mut s2 = s.clone();
                        s2.remove(&t);
                        if seen.insert(s2.clone()) {
                            queue.push_back(s2);
                        }
                    }
                }
            }
        }
        if existing.is_empty() {
            out.extend(ov.region.min_norm_point().map(|input| SelectedInput {
                input,
                overlap: k,
                off: Vec::new(),
            }));
        }
    }
    let mut bits = BTreeSet::new();
    out.retain(|s| bits.insert(s.input.iter().map(|x| x.to_bits()).collect::<Vec<u64>>()));
    out
}

/// Smallest-norm input of `region` satisfying `ok`, searched on the grid and refined by
/// moves toward the origin.
fn constrained_min_norm<F: Fn(&[f64]) -> bool>(
    region: &InputRegion,
    total_area: f64,
    grid: &GridConfig,
    ok: &F,
) -> Option<Vec<f64>> {
    let mut best: Option<Vec<f64>> = None;
    let cands = region.boxes.iter().flat_map(|b| {
        let mut pts = vec![b.clamp_point(&vec![0.0; b.dim()])];
        pts.extend(grid.points(b, total_area));
        pts
    });
    for u in cands {
        let better = match &best {
            None => true,
            Some(v) => norm2(&u) < norm2(v) || (norm2(&u) == norm2(v) && lex_less(&u, v)),
        };
        if better && ok(&u) {
            best = Some(u);
        }
    }
    let u = best?;
    let b = region
        .boxes
        .iter()
        .find(|b| b.contains(&u))
        .expect("candidate lies in region");
    let score = |x: &[f64]| if ok(x) { -norm2(x) } else { f64::NEG_INFINITY };
    let (u, _) = polish(
        b,
        &u,
        -norm2(&u),
        &grid.spacing(b, total_area),
        grid.polish_rounds,
        &score,
    );
    Some(u)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuousConfig {
    pub eps_thr: f64,
    pub score_frac: f64,
    pub max_iters: usize,
    /// Value-iteration stopping threshold.
    pub eps_conv: f64,
    pub prune_margin: f64,
    pub objective: Objective,
    pub grid: GridConfig,
    /// Off-combinations tried per multi-undecided overlap.
    pub max_combinations: usize,
    /// Replaces the system's input box when set.
    pub input_region: Option<InputRegion>,
}

impl Default for ContinuousConfig {
    fn default() -> Self {
        ContinuousConfig {
            eps_thr: 0.3,
            score_frac: 0.01,
            max_iters: 6,
            eps_conv: 0.01,
            prune_margin: 1e-5,
            objective: Objective::Maximize,
            grid: GridConfig::default(),
            max_combinations: 64,
            input_region: None,
        }
    }
}

impl ContinuousConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eps_thr) {
            return Err(Error::Config(format!(
                "eps_thr {} outside [0, 1]",
                self.eps_thr
            )));
        }
        if !(0.0..=1.0).contains(&self.score_frac) {
            return Err(Error::Config(format!(
                "score fraction {} outside [0, 1]",
                self.score_frac
            )));
        }
        if !(self.eps_conv > 0.0) || self.prune_margin < 0.0 {
            return Err(Error::Config(
                "eps_conv must be positive and prune_margin non-negative".into(),
            ));
        }
        if self.grid.n_min == 0 || self.max_combinations == 0 {
            return Err(Error::Config(
                "grid size and combination cap must be positive".into(),
            ));
        }
        Ok(())
    }

    fn input_region(&self, system: &SystemModel) -> Result<InputRegion> {
        let r =
            match &self.input_region {
                Some(r) => r.clone(),
                None => InputRegion::from_box(system.input_box.clone().ok_or_else(|| {
                    Error::Config("continuous synthesis needs an input box".into())
                })?),
            };
        if r.is_empty()
            || r.boxes
                .iter()
                .any(|b| !b.is_valid() || b.dim() != system.dim())
        {
            return Err(Error::EmptyInputRegion);
        }
        Ok(r)
    }
}

/// Input vectors with stable ids.
#[derive(Clone, Debug, Default)]
struct Registry {
    inputs: Vec<Vec<f64>>,
    ids: HashMap<Vec<u64>, usize>,
}

impl Registry {
    fn id(&mut self, u: &[f64]) -> usize {
        let key: Vec<u64> = u.iter().map(|x| x.to_bits()).collect();
        let next = self.inputs.len();
        let id = *self.ids.entry(key).or_insert(next);
        if id == next {
            self.inputs.push(u.to_vec());
        }
        id
    }

    fn ids(&mut self, us: &[Vec<f64>]) -> Vec<usize> {
        let mut v: Vec<usize> = us.iter().map(|u| self.id(u)).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Per-partition data shared by the steps of one iteration.
struct Ctx<'a> {
    system: &'a SystemModel,
    dra: &'a RabinAutomaton,
    partition: &'a Partition,
    index: AxisIndex,
    reach: Vec<Rect>,
    labels: Vec<LabelSet>,
    support: Rect,
    total_area: f64,
}

impl<'a> Ctx<'a> {
    fn new(
        system: &'a SystemModel,
        dra: &'a RabinAutomaton,
        partition: &'a Partition,
        total_area: f64,
    ) -> Result<Self> {
        Ok(Ctx {
            system,
            dra,
            partition,
            index: partition.index(),
            reach: reach_boxes(system, partition)?,
            labels: system.cell_labels(partition)?,
            support: Rect::new(system.noise.lo(), system.noise.hi()),
            total_area,
        })
    }

    fn cell_row(&self, j: usize, u: &[f64]) -> BoundedRow {
        interval_row(
            self.system,
            self.partition,
            &self.index,
            &self.reach[j].translate(u),
        )
    }

    fn product_row(&self, q: usize, u: &[f64]) -> BoundedRow {
        let nd = self.dra.n_states;
        let i = q % nd;
        self.cell_row(q / nd, u).map_targets(|l| {
            l * nd
                + self
                    .dra
                    .delta(i, &self.labels[l])
                    .expect("alphabet checked")
        })
    }

    fn select(&self, j: usize, region: &InputRegion, cfg: &ContinuousConfig) -> Vec<Vec<f64>> {
        let Some(h) = region.hull() else {
            return Vec::new();
        };
        let reach = &self.reach[j];
        let domain = &self.partition.domain;
        let query = reach.expand(&h).expand(&self.support).clamp_into(domain);
        let mut rects = Vec::new();
        let mut regions = Vec::new();
        for t in self.index.query(&self.partition.cells, &query) {
            let rect = extend_to_boundary(&self.partition.cells[t], domain);
            let tr = trigger_regions(reach, &rect, &self.system.noise, region);
            if !tr.is_trivial() {
                rects.push(rect);
                regions.push(tr);
            }
        }
        let ov = enumerate_overlaps(&regions, region);
        let mut out: Vec<Vec<f64>> = select_inputs(
            reach,
            &rects,
            &self.system.noise,
            &ov,
            self.total_area,
            &cfg.grid,
            cfg.max_combinations,
        )
        .into_iter()
        .map(|s| s.input)
        .collect();
        if out.is_empty() {
            out.extend(region.min_norm_point());
        }
        out
    }

    fn bmdp(&self, acts: &[Vec<usize>], inputs: &[Vec<f64>]) -> Bmdp {
        let n = self.partition.len();
        let rows = (0..n)
            .into_par_iter()
            .map(|j| {
                acts[j]
                    .iter()
                    .map(|&a| self.cell_row(j, &inputs[a]))
                    .collect()
            })
            .collect();
        Bmdp {
            n_states: n,
            actions: acts.to_vec(),
            rows,
            labels: self.labels.clone(),
            initial: (0..n).collect(),
        }
    }
}

/// Components found on the finite abstraction induced by the selected inputs.
#[derive(Clone, Debug)]
pub struct CimcComponents {
    /// Action id → input vector.
    pub inputs: Vec<Vec<f64>>,
    pub model: ProductModel,
    pub permanent: ComponentResult,
    pub potential: ComponentResult,
}

/// Selects inputs for every cell from `region`, builds the induced BMDP and its
/// product, and runs the winning-component searches on it.
pub fn construct_components_cimc(
    partition: &Partition,
    system: &SystemModel,
    region: &InputRegion,
    dra: &RabinAutomaton,
    cfg: &ContinuousConfig,
) -> Result<CimcComponents> {
    if region.is_empty() {
        return Err(Error::EmptyInputRegion);
    }
    let ctx = Ctx::new(system, dra, partition, region.volume())?;
    let sel: Vec<Vec<Vec<f64>>> = (0..partition.len())
        .into_par_iter()
        .map(|j| ctx.select(j, region, cfg))
        .collect();
    let mut reg = Registry::default();
    let acts: Vec<Vec<usize>> = sel.iter().map(|s| reg.ids(s)).collect();
    let model = product(&ctx.bmdp(&acts, &reg.inputs), dra)?;
    let base = ActionSets::full(&model.bmdp, 0..model.n_states());
    let u_p = components::find_extended_permanent_accepting_with(&model, &base)?;
    let u_l = components::find_extended_greatest_accepting_with(&model, &base)?;
    let permanent = components::find_greatest_permanent_winning_with(&model, &u_p, &u_l, &base)?;
    Ok(CimcComponents {
        inputs: reg.inputs,
        model,
        permanent,
        potential: u_l,
    })
}

/// State handed from one partition to its refinement.
#[derive(Clone, Debug)]
struct Seed {
    /// Input region per product state.
    regions: Vec<InputRegion>,
    /// Selected inputs per cell that may be reused without a new selection.
    selected: Vec<Option<Vec<Vec<f64>>>>,
    /// States fixed to one input; the flag marks winning states.
    frozen: BTreeMap<usize, (Vec<f64>, bool)>,
    reuse: Option<(BTreeSet<usize>, BTreeSet<usize>)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuousResult {
    pub result: SynthesisResult,
    /// Input region left per product state after the last pruning.
    pub regions: Vec<InputRegion>,
    /// Grid spacing on the full input set, for judging optimisation error.
    pub grid_resolution: f64,
}

impl ContinuousResult {
    pub fn write_regions_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let dim = self
            .regions
            .iter()
            .flat_map(|r| r.boxes.first())
            .map(Rect::dim)
            .next()
            .unwrap_or(0);
        let mut header = vec![
            "state_id".to_string(),
            "cell_id".into(),
            "dra_state".into(),
            "box_id".into(),
        ];
        header.extend((0..dim).map(|k| format!("lo_{k}")));
        header.extend((0..dim).map(|k| format!("hi_{k}")));
        out.write_record(&header)?;
        let nd = self.result.n_dra;
        for (q, r) in self.regions.iter().enumerate() {
            for (b, bx) in r.boxes.iter().enumerate() {
                let mut rec = vec![
                    q.to_string(),
                    (q / nd).to_string(),
                    (q % nd).to_string(),
                    b.to_string(),
                ];
                rec.extend(bx.lo.iter().chain(&bx.hi).map(|x| x.to_string()));
                out.write_record(&rec)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

pub fn synthesize_continuous(
    system: &SystemModel,
    dra: &RabinAutomaton,
    cfg: &ContinuousConfig,
) -> Result<ContinuousResult> {
    synthesize_continuous_on(system, dra, system.initial_partition(), cfg)
}

fn insert_action(model: &mut ProductModel, q: usize, a: usize, row: BoundedRow) {
    let acts = &mut model.bmdp.actions[q];
    if let Err(pos) = acts.binary_search(&a) {
        acts.insert(pos, a);
        model.bmdp.rows[q].insert(pos, row);
    }
}

pub fn synthesize_continuous_on(
    system: &SystemModel,
    dra: &RabinAutomaton,
    mut partition: Partition,
    cfg: &ContinuousConfig,
) -> Result<ContinuousResult> {
    cfg.validate()?;
    let u0 = cfg.input_region(system)?;
    let total = u0.volume();
    let nd = dra.n_states;
    let mut seed = Seed {
        regions: vec![u0.clone(); partition.len() * nd],
        selected: vec![None; partition.len()],
        frozen: BTreeMap::new(),
        reuse: None,
    };
    let mut history = Vec::new();
    for iteration in 0.. {
        let t0 = Instant::now();
        let ctx = Ctx::new(system, dra, &partition, total)?;
        let n_cells = partition.len();
        let n = n_cells * nd;

        // selected and grid inputs per group of states sharing a region
        type Group = (Vec<usize>, Vec<Vec<f64>>, Vec<Vec<f64>>);
        let per_cell: Vec<Vec<Group>> = (0..n_cells)
            .into_par_iter()
            .map(|j| {
                let mut groups: Vec<(InputRegion, Vec<usize>)> = Vec::new();
                for q in j * nd..(j + 1) * nd {
                    if seed.frozen.contains_key(&q) {
                        continue;
                    }
                    match groups.iter_mut().find(|g| g.0 == seed.regions[q]) {
                        Some(g) => g.1.push(q),
                        None => groups.push((seed.regions[q].clone(), vec![q])),
                    }
                }
                groups
                    .into_iter()
                    .map(|(r, members)| {
                        let reused: Vec<Vec<f64>> = seed.selected[j]
                            .as_ref()
                            .map(|v| v.iter().filter(|u| r.contains(u)).cloned().collect())
                            .unwrap_or_default();
                        let sel = if reused.is_empty() {
                            ctx.select(j, &r, cfg)
                        } else {
                            reused
                        };
                        let grid = r
                            .boxes
                            .iter()
                            .flat_map(|b| cfg.grid.points(b, total))
                            .collect();
                        (members, sel, grid)
                    })
                    .collect()
            })
            .collect();
        let mut reg = Registry::default();
        let mut comp_allowed = vec![Vec::new(); n];
        let mut allowed = vec![Vec::new(); n];
        let mut selected: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_cells];
        for (j, groups) in per_cell.iter().enumerate() {
            for (members, sel, grid) in groups {
                let s = reg.ids(sel);
                let mut g = s.clone();
                g.extend(reg.ids(grid));
                g.sort_unstable();
                g.dedup();
                for &q in members {
                    comp_allowed[q] = s.clone();
                    allowed[q] = g.clone();
                }
                selected[j].extend(sel.iter().cloned());
            }
        }
        let mut frozen_ids = PartialPolicy::new();
        for (&q, (u, win)) in &seed.frozen {
            let a = reg.id(u);
            comp_allowed[q] = vec![a];
            allowed[q] = vec![a];
            if *win {
                frozen_ids.insert(q, a);
            }
        }
        let cell_acts: Vec<Vec<usize>> = (0..n_cells)
            .map(|j| {
                let mut v: Vec<usize> = allowed[j * nd..(j + 1) * nd]
                    .iter()
                    .flatten()
                    .copied()
                    .collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        let full = product(&ctx.bmdp(&cell_acts, &reg.inputs), dra)?;
        let mut model = full.restrict(&allowed);

        let (wc, u_l, pot_empty) = match seed.reuse.take() {
            Some((w, l)) => (
                ComponentResult {
                    members: w,
                    partial_policy: frozen_ids.clone(),
                    kind: ComponentKind::GreatestPermanentWinning,
                    parts: Vec::new(),
                },
                ComponentResult {
                    members: l,
                    partial_policy: PartialPolicy::new(),
                    kind: ComponentKind::GreatestAcceptingExtended,
                    parts: Vec::new(),
                },
                true,
            ),
            None => {
                let base = ActionSets {
                    allowed: (0..n).map(|q| (q, comp_allowed[q].clone())).collect(),
                };
                let mut u_p = components::find_extended_permanent_accepting_with(&model, &base)?;
                let u_l = components::find_extended_greatest_accepting_with(&model, &base)?;
                for (&q, &a) in &frozen_ids {
                    u_p.members.insert(q);
                    u_p.partial_policy.insert(q, a);
                }
                let pot_empty = u_l.members.is_subset(&u_p.members);
                let wc = components::find_greatest_permanent_winning_with(
                    &model,
                    &u_p,
                    &u_l,
                    &ActionSets::full(&model.bmdp, 0..n),
                )?;
                (wc, u_l, pot_empty)
            }
        };

        let opts = ReachOptions {
            eps_conv: cfg.eps_conv,
            ..Default::default()
        };
        let lower_opts = ReachOptions {
            frozen: Some(&wc.partial_policy),
            ..opts.clone()
        };
        let mut lower = None;
        if !wc.members.is_empty() {
            let first = maximize_reach(&model, &wc.members, Bound::Lower, &lower_opts)?;
            // one polish pass from each state's grid optimum, then re-solve
            let rank = ranking(&first.values);
            let polished: Vec<Option<Vec<f64>>> = (0..n)
                .into_par_iter()
                .map(|q| {
                    if wc.contains(q) || seed.frozen.contains_key(&q) || first.exact_one[q] {
                        return None;
                    }
                    let u0 = &reg.inputs[first.policy.choice[q]];
                    let b = seed.regions[q].boxes.iter().find(|b| b.contains(u0))?;
                    let f = |u: &[f64]| {
                        row_value(
                            &ctx.product_row(q, u),
                            &rank,
                            &first.values,
                            Direction::AdversarialMin,
                        )
                    };
                    let v0 = f(u0);
                    let (u, v) = polish(
                        b,
                        u0,
                        v0,
                        &cfg.grid.spacing(b, total),
                        cfg.grid.polish_rounds,
                        &f,
                    );
                    (v > v0 + 1e-12).then_some(u)
                })
                .collect();
            let mut added = false;
            for (q, u) in polished.into_iter().enumerate() {
                if let Some(u) = u {
                    let a = reg.id(&u);
                    insert_action(&mut model, q, a, ctx.product_row(q, &u));
                    added = true;
                }
            }
            lower = Some(if added {
                maximize_reach(&model, &wc.members, Bound::Lower, &lower_opts)?
            } else {
                first
            });
        }
        let up_target: BTreeSet<usize> = u_l.members.union(&wc.members).copied().collect();
        let upper = if up_target.is_empty() {
            flat_solution(&model, None, Direction::FavorableMax)?
        } else {
            maximize_reach(&model, &up_target, Bound::Upper, &opts)?
        };
        let lower = match lower {
            Some(l) => l,
            None => flat_solution(&model, Some(&upper), Direction::AdversarialMin)?,
        };
        let policy: Vec<usize> = (0..n)
            .map(|q| {
                wc.partial_policy
                    .get(&q)
                    .copied()
                    .unwrap_or(lower.policy.choice[q])
            })
            .collect();
        let fixed_hi = if up_target.is_empty() {
            vec![0.0; n]
        } else {
            let fixed: PartialPolicy = policy.iter().copied().enumerate().collect();
            maximize_reach(
                &model,
                &up_target,
                Bound::Upper,
                &ReachOptions {
                    frozen: Some(&fixed),
                    ..opts.clone()
                },
            )?
            .values
        };
        let bounds = IntervalResult {
            bounds: (0..n)
                .map(|q| (lower.values[q], fixed_hi[q].clamp(lower.values[q], 1.0)))
                .collect(),
        };

        // report and pruning; sub-boxes get table ids above every real action
        let rank_up = ranking(&upper.values);
        let sub_base = reg.inputs.len();
        type Outcome = (StateReport, InputRegion, Option<(Vec<f64>, bool)>);
        let outcomes: Vec<Outcome> = (0..n)
            .into_par_iter()
            .map(|q| -> Result<Outcome> {
                let a = policy[q];
                let u_star = reg.inputs[a].clone();
                let point = InputRegion::from_box(Rect::point(&u_star));
                let p_lo = lower.values[q];
                let chosen = ActionBounds {
                    action: a,
                    lo: p_lo,
                    hi: upper.action_value(q, a).unwrap_or(1.0).clamp(p_lo, 1.0),
                };
                if wc.contains(q) {
                    let table = vec![ActionBounds {
                        action: a,
                        lo: 1.0,
                        hi: 1.0,
                    }];
                    let r = StateReport {
                        epsilon: 0.0,
                        chosen: a,
                        status: classify_actions(&table, 0.0),
                        table,
                        winning: true,
                    };
                    return Ok((r, point, Some((u_star, true))));
                }
                if seed.frozen.contains_key(&q) {
                    let table = vec![chosen];
                    let r = StateReport {
                        epsilon: 0.0,
                        chosen: a,
                        status: classify_actions(&table, 0.0),
                        table,
                        winning: false,
                    };
                    return Ok((r, point, Some((u_star, false))));
                }
                let f = |u: &[f64]| {
                    row_value(
                        &ctx.product_row(q, u),
                        &rank_up,
                        &upper.values,
                        Direction::FavorableMax,
                    )
                };
                let out = prune_inputs(
                    &seed.regions[q],
                    p_lo,
                    cfg.prune_margin,
                    total,
                    &cfg.grid,
                    std::slice::from_ref(&u_star),
                    f,
                )?;
                let mut table = vec![chosen];
                table.extend(out.pieces.iter().enumerate().map(|(k, p)| ActionBounds {
                    action: sub_base + k,
                    lo: 0.0,
                    hi: p.1.min(1.0),
                }));
                let status = classify_actions(&table, cfg.prune_margin);
                let epsilon = suboptimality_factor(&table, &status, a);
                let r = StateReport {
                    epsilon,
                    chosen: a,
                    table,
                    status,
                    winning: false,
                };
                Ok(if out.retained.is_empty() {
                    (r, point, Some((u_star, false)))
                } else {
                    (r, out.retained, None)
                })
            })
            .collect::<Result<_>>()?;
        let mut states = Vec::with_capacity(n);
        let mut new_regions = Vec::with_capacity(n);
        let mut fixes = Vec::with_capacity(n);
        for (r, reg_q, fix) in outcomes {
            states.push(r);
            new_regions.push(reg_q);
            fixes.push(fix);
        }
        let report = SuboptimalityReport::new(states, cfg.eps_thr);

        let done = report.eps_max <= cfg.eps_thr;
        let capped = !done && iteration >= cfg.max_iters;
        let mut next = None;
        if !done && !capped {
            let scores = score_refinement(
                &model,
                &upper.extreme_mc,
                &lower.extreme_mc,
                &report,
                cfg.eps_thr,
            )?;
            let mut split = scores.select(cfg.score_frac);
            if split.is_empty() {
                let cells: BTreeSet<usize> = (0..n)
                    .filter(|&q| report.states[q].epsilon > cfg.eps_thr)
                    .map(|q| q / nd)
                    .collect();
                split = cells.into_iter().collect();
            }
            let (fine, parent) = partition.refine(&split)?;
            partition.check_refinement(&fine, &parent)?;
            let was_split: BTreeSet<usize> = split.iter().copied().collect();
            // selection is redone where a potential-but-not-winning state meets a refined
            // source or a refined successor
            let redo: Vec<bool> = (0..n_cells)
                .map(|j| {
                    let pot = (j * nd..(j + 1) * nd).any(|q| u_l.contains(q) && !wc.contains(q));
                    let touched = was_split.contains(&j)
                        || full.bmdp.rows[j * nd]
                            .iter()
                            .any(|r| r.support().any(|t| was_split.contains(&(t / nd))));
                    pot && touched
                })
                .collect();
            let from = |p: usize| parent[p / nd] * nd + p % nd;
            let m = fine.len() * nd;
            let children = |s: &BTreeSet<usize>| -> BTreeSet<usize> {
                (0..m).filter(|&p| s.contains(&from(p))).collect()
            };
            seed = Seed {
                regions: (0..m).map(|p| new_regions[from(p)].clone()).collect(),
                selected: (0..fine.len())
                    .map(|c| (!redo[parent[c]]).then(|| selected[parent[c]].clone()))
                    .collect(),
                frozen: (0..m)
                    .filter_map(|p| fixes[from(p)].clone().map(|f| (p, f)))
                    .collect(),
                reuse: pot_empty.then(|| (children(&wc.members), children(&u_l.members))),
            };
            next = Some((fine, split.len()));
        }
        history.push(IterationRecord {
            iteration,
            n_cells,
            n_product_states: n,
            eps_max: report.eps_max,
            mean_eps: report.mean_eps,
            frac_above: report.frac_above,
            mean_actions: model.bmdp.actions.iter().map(Vec::len).sum::<usize>() as f64 / n as f64,
            mean_remaining: report.mean_actions,
            n_winning: wc.members.len(),
            n_split: next.as_ref().map_or(0, |x| x.1),
            wall_seconds: t0.elapsed().as_secs_f64(),
        });
        if let Some((fine, _)) = next {
            partition = fine;
            continue;
        }
        let bounds = match cfg.objective {
            Objective::Maximize => bounds,
            Objective::Minimize => complement_result(&bounds),
        };
        let result = SynthesisResult {
            partition,
            n_dra: nd,
            objective: cfg.objective,
            inputs: reg.inputs,
            policy,
            bounds,
            initial: model.bmdp.initial.clone(),
            report,
            history,
            converged: done,
            winning: wc.members,
        };
        return Ok(ContinuousResult {
            result,
            regions: new_regions,
            grid_resolution: cfg.grid.resolution(&u0, total),
        });
    }
    unreachable!("loop exits by return")
}
