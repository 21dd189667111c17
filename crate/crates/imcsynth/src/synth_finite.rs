//! Finite-mode controller synthesis with suboptimality-driven refinement.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{build_bmdp, Partition, SystemModel};
use crate::automata::{product, ProductModel, RabinAutomaton};
use crate::components::{self, is_accepting_set, ActionSets, ComponentKind, ComponentResult};
use crate::error::{Error, Result};
use crate::graph::ChainAnalysis;
use crate::imc::{complement_result, IntervalResult, MarkovChain, MemorylessPolicy, PartialPolicy};
use crate::reachability::{
    maximize_reach, o_extreme_row, ranking, Bound, Direction, ReachOptions, ReachSolution,
};

const PROB_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[serde(alias = "max")]
    Maximize,
    #[serde(alias = "min")]
    Minimize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FiniteConfig {
    pub eps_thr: f64,
    /// Cells scoring above this fraction of the top score are split.
    pub score_frac: f64,
    /// Refinement steps allowed before giving up.
    pub max_iters: usize,
    pub eps_conv: f64,
    /// Slack on the dominance test, covering value-iteration error.
    pub prune_margin: f64,
    pub objective: Objective,
}

impl Default for FiniteConfig {
    fn default() -> Self {
        FiniteConfig {
            eps_thr: 0.3,
            score_frac: 0.05,
            max_iters: 6,
            eps_conv: 1e-7,
            prune_margin: 1e-5,
            objective: Objective::Maximize,
        }
    }
}

impl FiniteConfig {
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
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionStatus {
    Optimal,
    Suboptimal,
    Undecided,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub action: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateReport {
    pub epsilon: f64,
    pub chosen: usize,
    pub table: Vec<ActionBounds>,
    pub status: Vec<ActionStatus>,
    /// Member of the permanent winning set; its action is fixed.
    pub winning: bool,
}

impl StateReport {
    pub fn is_pruned(&self, a: usize) -> bool {
        self.table
            .iter()
            .zip(&self.status)
            .any(|(e, s)| e.action == a && *s == ActionStatus::Suboptimal)
    }

    /// Actions that survive pruning. An optimal action dominates all others, so it is kept alone.
    pub fn remaining(&self) -> Vec<usize> {
        if self.winning {
            return vec![self.chosen];
        }
        let optimal: Vec<usize> = self
            .table
            .iter()
            .zip(&self.status)
            .filter(|(_, s)| **s == ActionStatus::Optimal)
            .map(|(e, _)| e.action)
            .collect();
        if !optimal.is_empty() {
            return vec![if optimal.contains(&self.chosen) {
                self.chosen
            } else {
                optimal[0]
            }];
        }
        self.table
            .iter()
            .zip(&self.status)
            .filter(|(_, s)| **s != ActionStatus::Suboptimal)
            .map(|(e, _)| e.action)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuboptimalityReport {
    pub states: Vec<StateReport>,
    pub eps_thr: f64,
    pub eps_max: f64,
    pub mean_eps: f64,
    pub frac_above: f64,
    /// Mean number of actions left per state after pruning.
    pub mean_actions: f64,
}

impl SuboptimalityReport {
    pub fn new(states: Vec<StateReport>, eps_thr: f64) -> Self {
        let n = states.len().max(1) as f64;
        let eps_max = states.iter().map(|s| s.epsilon).fold(0.0, f64::max);
        let mean_eps = states.iter().map(|s| s.epsilon).sum::<f64>() / n;
        let frac_above = states.iter().filter(|s| s.epsilon > eps_thr).count() as f64 / n;
        let mean_actions = states.iter().map(|s| s.remaining().len()).sum::<usize>() as f64 / n;
        SuboptimalityReport {
            states,
            eps_thr,
            eps_max,
            mean_eps,
            frac_above,
            mean_actions,
        }
    }
}

/// Dominance classification of a state's actions from their (p̌, p̂) bounds.
pub fn classify_actions(table: &[ActionBounds], margin: f64) -> Vec<ActionStatus> {
    let best_lo = table.iter().map(|e| e.lo).fold(f64::NEG_INFINITY, f64::max);
    table
        .iter()
        .enumerate()
        .map(|(l, e)| {
            if e.hi + margin < best_lo {
                ActionStatus::Suboptimal
            } else if table
                .iter()
                .enumerate()
                .all(|(k, o)| k == l || e.lo >= o.hi)
            {
                ActionStatus::Optimal
            } else {
                ActionStatus::Undecided
            }
        })
        .collect()
}

/// Largest gain available by switching away from `chosen` to a surviving action.
pub fn suboptimality_factor(table: &[ActionBounds], status: &[ActionStatus], chosen: usize) -> f64 {
    if status.contains(&ActionStatus::Optimal) {
        return 0.0;
    }
    let Some(base) = table.iter().find(|e| e.action == chosen).map(|e| e.lo) else {
        return 0.0;
    };
    table
        .iter()
        .zip(status)
        .filter(|(e, s)| e.action != chosen && **s != ActionStatus::Suboptimal)
        .map(|(e, _)| e.hi - base)
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementScores {
    pub scores: Vec<f64>,
}

impl RefinementScores {
    pub fn max(&self) -> f64 {
        self.scores.iter().copied().fold(0.0, f64::max)
    }

    /// Cells scoring strictly above `frac` times the top score.
    pub fn select(&self, frac: f64) -> Vec<usize> {
        let m = self.max();
        if m <= 0.0 {
            return Vec::new();
        }
        (0..self.scores.len())
            .filter(|&j| self.scores[j] > frac * m)
            .collect()
    }
}

fn row_diff_norm(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let mut d: BTreeMap<usize, f64> = BTreeMap::new();
    for &(t, p) in a {
        *d.entry(t).or_default() += p;
    }
    for &(t, p) in b {
        *d.entry(t).or_default() -= p;
    }
    d.values().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-cell refinement scores from the best-case and worst-case chains.
pub fn score_refinement(
    model: &ProductModel,
    best: &MarkovChain,
    worst: &MarkovChain,
    report: &SuboptimalityReport,
    eps_thr: f64,
) -> Result<RefinementScores> {
    let n = model.n_states();
    let n_cells = model.n_model;
    let sources: Vec<usize> = (0..n)
        .filter(|&q| report.states[q].epsilon >= eps_thr)
        .collect();
    if sources.is_empty() {
        return Ok(RefinementScores {
            scores: vec![0.0; n_cells],
        });
    }
    let ab = ChainAnalysis::new(best)?;
    let aw = ChainAnalysis::new(worst)?;
    let accepting = |b: &[usize]| {
        if is_accepting_set(
            &b.iter().copied().collect(),
            &model.rabin_flags,
            model.n_pairs,
        ) {
            1.0
        } else {
            0.0
        }
    };
    let pb = ab.absorption(accepting)?;
    let pw = aw.absorption(accepting)?;
    let in_g: Vec<bool> = (0..n)
        .map(|q| {
            (pb[q] <= PROB_TOL && pw[q] <= PROB_TOL)
                || (pb[q] >= 1.0 - PROB_TOL && pw[q] >= 1.0 - PROB_TOL)
        })
        .collect();

    let bottoms = |a: &ChainAnalysis| -> BTreeSet<Vec<usize>> {
        a.bsccs()
            .map(|b| {
                let mut v = b.clone();
                v.sort_unstable();
                v
            })
            .collect()
    };
    let (sb, sw) = (bottoms(&ab), bottoms(&aw));
    let mut in_r = vec![false; n];
    for b in sb.symmetric_difference(&sw) {
        for &v in b {
            in_r[v] = true;
        }
    }
    // undecided outgoing transition under some surviving action
    let undecided: Vec<bool> = (0..n)
        .map(|q| {
            model.bmdp.actions[q].iter().enumerate().any(|(k, &a)| {
                !report.states[q].is_pruned(a)
                    && model.bmdp.rows[q][k]
                        .entries()
                        .iter()
                        .any(|e| e.lo <= 0.0 && e.hi > 0.0)
            })
        })
        .collect();
    let partners: Vec<Vec<usize>> = (0..n)
        .map(|q| {
            if !in_r[q] {
                return Vec::new();
            }
            let mut s = BTreeSet::new();
            for a in [&ab, &aw] {
                let c = a.comp_of[q];
                if a.bottom[c] {
                    s.extend(a.comps[c].iter().copied().filter(|&v| undecided[v]));
                }
            }
            s.into_iter().collect()
        })
        .collect();
    let norm: Vec<f64> = (0..n)
        .map(|q| row_diff_norm(&best.rows[q], &worst.rows[q]))
        .collect();
    let cell = |q: usize| model.split(q).0;

    // fixed chunking keeps the floating-point sum order independent of scheduling
    let partial: Vec<Vec<f64>> = sources
        .par_chunks(32)
        .map(|chunk| -> Result<Vec<f64>> {
            let mut s = vec![0.0; n_cells];
            for &q in chunk {
                let p = ab.reach_from(q)?;
                for v in 0..n {
                    if in_g[v] || p[v] <= 0.0 {
                        continue;
                    }
                    let inc = p[v] * norm[v];
                    if inc == 0.0 {
                        continue;
                    }
                    s[cell(v)] += inc;
                    for &w in &partners[v] {
                        s[cell(w)] += inc;
                    }
                }
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let mut scores = vec![0.0; n_cells];
    for s in partial {
        for (a, b) in scores.iter_mut().zip(s) {
            *a += b;
        }
    }
    Ok(RefinementScores { scores })
}

/// Information handed from one partition to its refinement.
#[derive(Clone, Debug, Default)]
pub struct Carry {
    /// Allowed actions per product state; empty means all.
    pub allowed: Vec<Vec<usize>>,
    /// Actions usable in the accepting-component searches; `None` means all allowed.
    pub qual: Vec<Option<Vec<usize>>>,
    /// States fixed to a winning action.
    pub frozen: PartialPolicy,
    /// Winning and potential sets reused when the component search is skipped.
    pub reuse: Option<(ComponentResult, ComponentResult)>,
}

impl Carry {
    pub fn fresh(n: usize) -> Self {
        Carry {
            allowed: vec![Vec::new(); n],
            qual: vec![None; n],
            frozen: PartialPolicy::new(),
            reuse: None,
        }
    }
}

/// Outcome of one synthesis pass on a fixed product.
#[derive(Clone, Debug)]
pub struct Stage {
    pub n_dra: usize,
    pub allowed: Vec<Vec<usize>>,
    pub qual: Vec<Vec<usize>>,
    pub policy: Vec<usize>,
    pub report: SuboptimalityReport,
    pub winning: ComponentResult,
    pub potential: ComponentResult,
    /// No potential-but-not-permanent accepting states were found.
    pub pot_empty: bool,
}

#[derive(Clone, Debug)]
pub struct Solved {
    pub stage: Stage,
    pub lower: ReachSolution,
    pub upper: ReachSolution,
    /// Per product state (p̌, p̂) under the synthesized policy.
    pub bounds: IntervalResult,
}

/// Solution with every value 0, used when the target set is empty.
pub(crate) fn flat_solution(
    model: &ProductModel,
    prefer: Option<&ReachSolution>,
    dir: Direction,
) -> Result<ReachSolution> {
    let bmdp = &model.bmdp;
    let n = bmdp.n_states;
    let rank = ranking(&vec![0.0; n]);
    let mut choice = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for q in 0..n {
        let a = prefer
            .map(|s| {
                let mut best = s.action_table[q][0];
                for &e in &s.action_table[q][1..] {
                    if e.1 > best.1 + 1e-12 {
                        best = e;
                    }
                }
                best.0
            })
            .unwrap_or(bmdp.actions[q][0]);
        rows.push(o_extreme_row(
            bmdp.row(q, a).ok_or(Error::InvalidAction {
                state: q,
                action: a,
            })?,
            &rank,
            dir,
        )?);
        choice.push(a);
    }
    Ok(ReachSolution {
        values: vec![0.0; n],
        policy: MemorylessPolicy { choice },
        action_table: bmdp
            .actions
            .iter()
            .map(|acts| acts.iter().map(|&a| (a, 0.0)).collect())
            .collect(),
        extreme_mc: MarkovChain {
            n_states: n,
            rows,
            labels: bmdp.labels.clone(),
            initial: bmdp.initial.clone(),
        },
        iterations: 0,
        residual: 0.0,
        exact_one: vec![false; n],
    })
}

/// Components, both reach solutions, report and bounds on an already restricted product.
pub fn solve_product(model: &ProductModel, carry: &Carry, cfg: &FiniteConfig) -> Result<Solved> {
    let n = model.n_states();
    let bmdp = &model.bmdp;
    let (wc, u_l, pot_empty) = match &carry.reuse {
        Some((wc, u_l)) => (wc.clone(), u_l.clone(), true),
        None => {
            let base = ActionSets {
                allowed: (0..n)
                    .map(|q| {
                        let acts = match carry.qual.get(q).and_then(|x| x.as_ref()) {
                            Some(list) => bmdp.actions[q]
                                .iter()
                                .copied()
                                .filter(|a| list.contains(a))
                                .collect(),
                            None => bmdp.actions[q].clone(),
                        };
                        (q, acts)
                    })
                    .collect(),
            };
            let mut u_p = components::find_extended_permanent_accepting_with(model, &base)?;
            let u_l = components::find_extended_greatest_accepting_with(model, &base)?;
            for (&q, &a) in &carry.frozen {
                u_p.members.insert(q);
                u_p.partial_policy.insert(q, a);
            }
            let pot_empty = u_l.members.is_subset(&u_p.members);
            let wc = components::find_greatest_permanent_winning_with(
                model,
                &u_p,
                &u_l,
                &ActionSets::full(bmdp, 0..n),
            )?;
            (wc, u_l, pot_empty)
        }
    };

    let opts = ReachOptions {
        eps_conv: cfg.eps_conv,
        ..Default::default()
    };
    let up_target: BTreeSet<usize> = u_l.members.union(&wc.members).copied().collect();
    let upper = if up_target.is_empty() {
        flat_solution(model, None, Direction::FavorableMax)?
    } else {
        maximize_reach(model, &up_target, Bound::Upper, &opts)?
    };
    let lower = if wc.members.is_empty() {
        flat_solution(model, Some(&upper), Direction::AdversarialMin)?
    } else {
        maximize_reach(
            model,
            &wc.members,
            Bound::Lower,
            &ReachOptions {
                frozen: Some(&wc.partial_policy),
                ..opts.clone()
            },
        )?
    };
    let policy: Vec<usize> = (0..n)
        .map(|q| {
            wc.partial_policy
                .get(&q)
                .copied()
                .unwrap_or(lower.policy.choice[q])
        })
        .collect();

    let states: Vec<StateReport> = (0..n)
        .into_par_iter()
        .map(|q| {
            if wc.contains(q) {
                let a = policy[q];
                return StateReport {
                    epsilon: 0.0,
                    chosen: a,
                    table: vec![ActionBounds {
                        action: a,
                        lo: 1.0,
                        hi: 1.0,
                    }],
                    status: vec![ActionStatus::Optimal],
                    winning: true,
                };
            }
            let table: Vec<ActionBounds> = lower.action_table[q]
                .iter()
                .map(|&(a, lo)| ActionBounds {
                    action: a,
                    lo,
                    hi: upper.action_value(q, a).unwrap_or(1.0).max(lo),
                })
                .collect();
            let status = classify_actions(&table, cfg.prune_margin);
            let epsilon = suboptimality_factor(&table, &status, policy[q]);
            StateReport {
                epsilon,
                chosen: policy[q],
                table,
                status,
                winning: false,
            }
        })
        .collect();
    let report = SuboptimalityReport::new(states, cfg.eps_thr);

    let qual: Vec<Vec<usize>> = (0..n)
        .map(|q| {
            upper.action_table[q]
                .iter()
                .filter(|e| e.1 >= 1.0 - PROB_TOL)
                .map(|e| e.0)
                .collect()
        })
        .collect();

    // upper bound of the fixed policy, onto the potential set
    let fixed_hi = if up_target.is_empty() {
        vec![0.0; n]
    } else {
        let full: PartialPolicy = policy.iter().copied().enumerate().collect();
        maximize_reach(
            model,
            &up_target,
            Bound::Upper,
            &ReachOptions {
                frozen: Some(&full),
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

    let stage = Stage {
        n_dra: model.n_dra,
        allowed: bmdp.actions.clone(),
        qual,
        policy,
        report,
        winning: ComponentResult {
            kind: ComponentKind::GreatestPermanentWinning,
            ..wc
        },
        potential: u_l,
        pot_empty,
    };
    Ok(Solved {
        stage,
        lower,
        upper,
        bounds,
    })
}

/// Seeds the next iteration on `refined` from the results on `coarse`.
pub fn carry_over(
    prev: &Stage,
    coarse: &Partition,
    refined: &Partition,
    parent: &[usize],
) -> Result<Carry> {
    coarse.check_refinement(refined, parent)?;
    let nd = prev.n_dra;
    let n = refined.len() * nd;
    let from = |p: usize| parent[p / nd] * nd + p % nd;
    let mut carry = Carry::fresh(n);
    for p in 0..n {
        let q = from(p);
        let r = &prev.report.states[q];
        let keep = r.remaining();
        if r.winning {
            carry.frozen.insert(p, r.chosen);
        }
        carry.qual[p] = Some(
            prev.qual[q]
                .iter()
                .copied()
                .filter(|a| keep.contains(a))
                .collect(),
        );
        carry.allowed[p] = keep;
    }
    if prev.pot_empty {
        let children = |s: &BTreeSet<usize>| -> BTreeSet<usize> {
            (0..n).filter(|&p| s.contains(&from(p))).collect()
        };
        let wc = ComponentResult {
            members: children(&prev.winning.members),
            partial_policy: carry.frozen.clone(),
            kind: ComponentKind::GreatestPermanentWinning,
            parts: Vec::new(),
        };
        let u_l = ComponentResult {
            members: children(&prev.potential.members),
            partial_policy: PartialPolicy::new(),
            kind: ComponentKind::GreatestAcceptingExtended,
            parts: Vec::new(),
        };
        carry.reuse = Some((wc, u_l));
    }
    Ok(carry)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub n_cells: usize,
    pub n_product_states: usize,
    pub eps_max: f64,
    pub mean_eps: f64,
    pub frac_above: f64,
    /// Mean actions per product state available to this iteration.
    pub mean_actions: f64,
    /// Mean actions per product state left after this iteration's pruning.
    pub mean_remaining: f64,
    pub n_winning: usize,
    pub n_split: usize,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub partition: Partition,
    pub n_dra: usize,
    pub objective: Objective,
    /// Action id → input vector.
    pub inputs: Vec<Vec<f64>>,
    /// Action per product state.
    pub policy: Vec<usize>,
    /// Bounds on satisfying the specification, per product state.
    pub bounds: IntervalResult,
    /// Initial product state of each cell.
    pub initial: Vec<usize>,
    pub report: SuboptimalityReport,
    pub history: Vec<IterationRecord>,
    /// False when the loop stopped on the iteration cap.
    pub converged: bool,
    pub winning: BTreeSet<usize>,
}

impl SynthesisResult {
    pub fn eps_max(&self) -> f64 {
        self.report.eps_max
    }

    /// Bounds at the initial product state of every cell.
    pub fn initial_bounds(&self) -> IntervalResult {
        IntervalResult {
            bounds: self
                .initial
                .iter()
                .map(|&q| self.bounds.bounds[q])
                .collect(),
        }
    }

    pub fn input(&self, cell: usize, dra_state: usize) -> Result<&[f64]> {
        let q = cell * self.n_dra + dra_state;
        self.policy
            .get(q)
            .and_then(|&a| self.inputs.get(a))
            .map(Vec::as_slice)
            .ok_or(Error::IncompletePolicy { cell, dra_state })
    }

    pub fn write_policy_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "cell_id",
            "dra_state",
            "mode_id",
            "p_min",
            "p_max",
            "epsilon",
        ])?;
        for (q, &a) in self.policy.iter().enumerate() {
            let (lo, hi) = self.bounds.bounds[q];
            out.write_record([
                (q / self.n_dra).to_string(),
                (q % self.n_dra).to_string(),
                a.to_string(),
                lo.to_string(),
                hi.to_string(),
                self.report.states[q].epsilon.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_history_csv<W: Write>(&self, w: W) -> Result<()> {
        write_history_csv(&self.history, w)
    }
}

pub fn write_history_csv<W: Write>(history: &[IterationRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in history {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Finite-mode synthesis from the system's initial grid.
pub fn synthesize_finite(
    system: &SystemModel,
    dra: &RabinAutomaton,
    cfg: &FiniteConfig,
) -> Result<SynthesisResult> {
    synthesize_finite_on(system, dra, system.initial_partition(), cfg)
}

pub fn synthesize_finite_on(
    system: &SystemModel,
    dra: &RabinAutomaton,
    mut partition: Partition,
    cfg: &FiniteConfig,
) -> Result<SynthesisResult> {
    cfg.validate()?;
    if system.modes.is_empty() {
        return Err(Error::Config(
            "finite synthesis needs at least one mode".into(),
        ));
    }
    let mut history = Vec::new();
    let mut carry: Option<Carry> = None;
    for iteration in 0.. {
        let t0 = Instant::now();
        let abs = build_bmdp(&partition, system, &system.modes)?;
        let full = product(&abs.bmdp, dra)?;
        let c = carry
            .take()
            .unwrap_or_else(|| Carry::fresh(full.n_states()));
        let model = full.restrict(&c.allowed);
        let solved = solve_product(&model, &c, cfg)?;
        let report = &solved.stage.report;
        let done = report.eps_max <= cfg.eps_thr;
        let capped = !done && iteration >= cfg.max_iters;
        let mut next = None;
        if !done && !capped {
            let scores = score_refinement(
                &model,
                &solved.upper.extreme_mc,
                &solved.lower.extreme_mc,
                report,
                cfg.eps_thr,
            )?;
            let mut split = scores.select(cfg.score_frac);
            if split.is_empty() {
                let cells: BTreeSet<usize> = (0..model.n_states())
                    .filter(|&q| report.states[q].epsilon > cfg.eps_thr)
                    .map(|q| q / model.n_dra)
                    .collect();
                split = cells.into_iter().collect();
            }
            let (fine, parent) = partition.refine(&split)?;
            carry = Some(carry_over(&solved.stage, &partition, &fine, &parent)?);
            next = Some((fine, split.len()));
        }
        history.push(IterationRecord {
            iteration,
            n_cells: partition.len(),
            n_product_states: model.n_states(),
            eps_max: report.eps_max,
            mean_eps: report.mean_eps,
            frac_above: report.frac_above,
            mean_actions: model.bmdp.actions.iter().map(Vec::len).sum::<usize>() as f64
                / model.n_states() as f64,
            mean_remaining: report.mean_actions,
            n_winning: solved.stage.winning.members.len(),
            n_split: next.as_ref().map_or(0, |x| x.1),
            wall_seconds: t0.elapsed().as_secs_f64(),
        });
        if let Some((fine, _)) = next {
            partition = fine;
            continue;
        }
        let bounds = match cfg.objective {
            Objective::Maximize => solved.bounds,
            Objective::Minimize => complement_result(&solved.bounds),
        };
        return Ok(SynthesisResult {
            partition,
            n_dra: model.n_dra,
            objective: cfg.objective,
            inputs: system.modes.clone(),
            policy: solved.stage.policy,
            bounds,
            initial: model.bmdp.initial.clone(),
            report: solved.stage.report,
            history,
            converged: done,
            winning: solved.stage.winning.members,
        });
    }
    unreachable!("loop exits by return")
}
