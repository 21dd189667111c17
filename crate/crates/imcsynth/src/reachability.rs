//! Interval value iteration for reachability on product models, and exact
//! reachability in Markov chains.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::automata::ProductModel;
use crate::error::{Error, Result};
use crate::graph::ChainAnalysis;
use crate::imc::{Bmdp, BoundedRow, MarkovChain, MemorylessPolicy, PartialPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    Lower,
    Upper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Mass goes to the lowest-ranked targets first.
    AdversarialMin,
    /// Mass goes to the highest-ranked targets first.
    FavorableMax,
}

/// Greedy allocation of a row's mass along `rank` (smaller rank = smaller value).
pub fn o_extreme_row(
    row: &BoundedRow,
    rank: &[usize],
    dir: Direction,
) -> Result<Vec<(usize, f64)>> {
    if row.sum_lo() > 1.0 + 1e-9 || row.sum_hi() < 1.0 - 1e-9 {
        return Err(Error::InfeasibleRow { state: usize::MAX });
    }
    let z = allocate_ranked(row, rank, dir);
    Ok(row
        .entries()
        .iter()
        .zip(z)
        .filter(|(_, m)| *m > 0.0)
        .map(|(e, m)| (e.to, m))
        .collect())
}

fn allocate_ranked(row: &BoundedRow, rank: &[usize], dir: Direction) -> Vec<f64> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    match dir {
        Direction::AdversarialMin => order.sort_by_key(|&k| rank[row.entries()[k].to]),
        Direction::FavorableMax => {
            order.sort_by_key(|&k| std::cmp::Reverse(rank[row.entries()[k].to]))
        }
    }
    row.allocate(&order)
}

/// One-step value of `row` under the greedy allocation along `rank`.
pub fn row_value(row: &BoundedRow, rank: &[usize], w: &[f64], dir: Direction) -> f64 {
    let z = allocate_ranked(row, rank, dir);
    row.entries().iter().zip(z).map(|(e, m)| m * w[e.to]).sum()
}

/// Ascending ranking of states by value, ties broken by state id.
pub fn ranking(w: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap().then(a.cmp(&b)));
    let mut rank = vec![0; w.len()];
    for (r, &q) in idx.iter().enumerate() {
        rank[q] = r;
    }
    rank
}

#[derive(Clone, Debug)]
pub struct ReachOptions<'a> {
    pub eps_conv: f64,
    pub max_iters: usize,
    /// Restricts each state's action set (sorted ids). Defaults to the model's actions.
    pub allowed: Option<&'a [Vec<usize>]>,
    /// Fixed choices that the iteration must respect.
    pub frozen: Option<&'a PartialPolicy>,
}

impl Default for ReachOptions<'_> {
    fn default() -> Self {
        ReachOptions {
            eps_conv: 1e-6,
            max_iters: 100_000,
            allowed: None,
            frozen: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReachSolution {
    pub values: Vec<f64>,
    pub policy: MemorylessPolicy,
    /// Per state, (action, value of committing to that action for one step) over allowed actions.
    pub action_table: Vec<Vec<(usize, f64)>>,
    pub extreme_mc: MarkovChain,
    pub iterations: usize,
    pub residual: f64,
    /// States whose value is certified 1 by the graph pass.
    pub exact_one: Vec<bool>,
}

impl ReachSolution {
    pub fn action_value(&self, q: usize, a: usize) -> Option<f64> {
        self.action_table[q].iter().find(|e| e.0 == a).map(|e| e.1)
    }
}

fn actions_of<'m>(model: &'m Bmdp, opts: &'m ReachOptions, q: usize) -> Vec<usize> {
    if let Some(&a) = opts.frozen.and_then(|f| f.get(&q)) {
        return vec![a];
    }
    match opts.allowed {
        Some(al) if !al[q].is_empty() => al[q].clone(),
        _ => model.actions[q].clone(),
    }
}

pub fn maximize_reach(
    model: &ProductModel,
    target: &BTreeSet<usize>,
    bound: Bound,
    opts: &ReachOptions,
) -> Result<ReachSolution> {
    maximize_reach_bmdp(&model.bmdp, target, bound, opts)
}

/// Value iteration on any BMDP. Lower bound: max over policies of the adversarial
/// minimum; upper bound: max over policies of the favorable maximum.
pub fn maximize_reach_bmdp(
    model: &Bmdp,
    target: &BTreeSet<usize>,
    bound: Bound,
    opts: &ReachOptions,
) -> Result<ReachSolution> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let n = model.n_states;
    let dir = match bound {
        Bound::Lower => Direction::AdversarialMin,
        Bound::Upper => Direction::FavorableMax,
    };
    let acts: Vec<Vec<usize>> = (0..n).map(|q| actions_of(model, opts, q)).collect();
    for q in 0..n {
        for &a in &acts[q] {
            if model.action_index(q, a).is_none() {
                return Err(Error::InvalidAction {
                    state: q,
                    action: a,
                });
            }
        }
    }
    let is_target: Vec<bool> = (0..n).map(|q| target.contains(&q)).collect();
    let (exact0, exact1, attractor) = qualitative(model, &acts, &is_target, bound);

    let mut w: Vec<f64> = (0..n)
        .map(|q| if is_target[q] || exact1[q] { 1.0 } else { 0.0 })
        .collect();
    let mut iterations = 0;
    let mut residual = 0.0;
    while iterations < opts.max_iters {
        let rank = ranking(&w);
        let next: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|q| {
                if is_target[q] || exact1[q] {
                    return 1.0;
                }
                if exact0[q] {
                    return 0.0;
                }
                acts[q]
                    .iter()
                    .map(|&a| row_value(model.row(q, a).unwrap(), &rank, &w, dir))
                    .fold(0.0, f64::max)
                    .clamp(0.0, 1.0)
            })
            .collect();
        residual = next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        w = next;
        iterations += 1;
        if residual < opts.eps_conv {
            break;
        }
    }

    // final sweep: per-action table, policy and extreme chain
    let rank = ranking(&w);
    let per_state: Vec<(Vec<(usize, f64)>, usize, Vec<(usize, f64)>)> = (0..n)
        .into_par_iter()
        .map(|q| {
            let table: Vec<(usize, f64)> = acts[q]
                .iter()
                .map(|&a| {
                    let v = if is_target[q] {
                        1.0
                    } else {
                        row_value(model.row(q, a).unwrap(), &rank, &w, dir)
                    };
                    (a, v.clamp(0.0, 1.0))
                })
                .collect();
            let choice = if let Some(a) = attractor[q] {
                a
            } else {
                let mut best = table[0];
                for &e in &table[1..] {
                    if e.1 > best.1 + 1e-12 {
                        best = e;
                    }
                }
                best.0
            };
            let row = model.row(q, choice).unwrap();
            let z = allocate_ranked(row, &rank, dir);
            let mc_row = row
                .entries()
                .iter()
                .zip(z)
                .filter(|(_, m)| *m > 0.0)
                .map(|(e, m)| (e.to, m))
                .collect();
            (table, choice, mc_row)
        })
        .collect();
    let mut action_table = Vec::with_capacity(n);
    let mut choice = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for (t, c, r) in per_state {
        action_table.push(t);
        choice.push(c);
        rows.push(r);
    }
    for q in 0..n {
        if exact1[q] {
            w[q] = 1.0;
        } else if exact0[q] {
            w[q] = 0.0;
        }
    }
    Ok(ReachSolution {
        values: w,
        policy: MemorylessPolicy { choice },
        action_table,
        extreme_mc: MarkovChain {
            n_states: n,
            rows,
            labels: model.labels.clone(),
            initial: model.initial.clone(),
        },
        iterations,
        residual,
        exact_one: (0..n).map(|q| exact1[q] || is_target[q]).collect(),
    })
}

/// Graph pass: states with value exactly 0 and exactly 1, and for the latter an action
/// that certifies it (None for targets).
fn qualitative(
    model: &Bmdp,
    acts: &[Vec<usize>],
    is_target: &[bool],
    bound: Bound,
) -> (Vec<bool>, Vec<bool>, Vec<Option<usize>>) {
    let n = model.n_states;
    let row = |q: usize, a: usize| model.row(q, a).unwrap();
    let mut zero = vec![false; n];
    match bound {
        Bound::Lower => {
            // greatest Z: under every action the adversary can keep all mass inside Z
            let mut z: Vec<bool> = is_target.iter().map(|t| !t).collect();
            loop {
                let mut changed = false;
                for q in 0..n {
                    if !z[q] {
                        continue;
                    }
                    let keeps = acts[q].iter().all(|&a| {
                        let r = row(q, a);
                        let hi_in: f64 = r.entries().iter().filter(|e| z[e.to]).map(|e| e.hi).sum();
                        hi_in >= 1.0 - 1e-12 && r.entries().iter().all(|e| z[e.to] || e.lo <= 0.0)
                    });
                    if !keeps {
                        z[q] = false;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            zero = z;
        }
        Bound::Upper => {
            let reach = crate::graph::backward_reachable(
                n,
                &(0..n).filter(|&q| is_target[q]).collect(),
                |q| {
                    acts[q]
                        .iter()
                        .flat_map(|&a| row(q, a).support().collect::<Vec<_>>())
                        .collect()
                },
            );
            for q in 0..n {
                zero[q] = !reach[q];
            }
        }
    }

    // nested attractor for exact 1
    let mut y: Vec<bool> = (0..n).map(|q| !zero[q] || is_target[q]).collect();
    let mut attractor = vec![None; n];
    loop {
        let mut x: Vec<bool> = is_target.to_vec();
        let mut act = vec![None; n];
        loop {
            let mut grew = false;
            let snapshot = x.clone();
            for q in 0..n {
                if x[q] || !y[q] {
                    continue;
                }
                for &a in &acts[q] {
                    let r = row(q, a);
                    let ok = match bound {
                        Bound::Lower => {
                            let safe = r.entries().iter().all(|e| e.hi <= 0.0 || y[e.to]);
                            let lo_in: f64 = r
                                .entries()
                                .iter()
                                .filter(|e| snapshot[e.to])
                                .map(|e| e.lo)
                                .sum();
                            let hi_out: f64 = r
                                .entries()
                                .iter()
                                .filter(|e| !snapshot[e.to])
                                .map(|e| e.hi)
                                .sum();
                            safe && (lo_in > 0.0 || hi_out < 1.0 - 1e-12)
                        }
                        Bound::Upper => {
                            let feasible = r.entries().iter().all(|e| e.lo <= 0.0 || y[e.to])
                                && r.entries()
                                    .iter()
                                    .filter(|e| y[e.to])
                                    .map(|e| e.hi)
                                    .sum::<f64>()
                                    >= 1.0 - 1e-12;
                            let lo_total: f64 = r.entries().iter().map(|e| e.lo).sum();
                            feasible
                                && r.entries().iter().any(|e| {
                                    snapshot[e.to] && e.hi.min(1.0 - (lo_total - e.lo)) > 0.0
                                })
                        }
                    };
                    if ok {
                        x[q] = true;
                        act[q] = Some(a);
                        grew = true;
                        break;
                    }
                }
            }
            if !grew {
                break;
            }
        }
        if x == y {
            attractor = act;
            break;
        }
        y = x;
    }
    let one: Vec<bool> = (0..n).map(|q| y[q] && !is_target[q]).collect();
    let zero: Vec<bool> = (0..n).map(|q| zero[q] && !is_target[q]).collect();
    (zero, one, attractor)
}

/// Probability of ever reaching each state from `from`.
pub fn mc_reachability(chain: &MarkovChain, from: usize) -> Result<Vec<f64>> {
    ChainAnalysis::new(chain)?.reach_from(from)
}

/// Probability of reaching `target` from every state.
pub fn mc_reach_set(chain: &MarkovChain, target: &BTreeSet<usize>) -> Result<Vec<f64>> {
    let mut absorbing = chain.clone();
    for &t in target {
        absorbing.rows[t] = vec![(t, 1.0)];
    }
    let a = ChainAnalysis::new(&absorbing)?;
    a.absorption(|b| {
        if b.iter().any(|v| target.contains(v)) {
            1.0
        } else {
            0.0
        }
    })
}
