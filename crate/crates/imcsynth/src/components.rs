//! Winning-component searches on product models.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::automata::ProductModel;
use crate::error::Result;
use crate::graph::sccs_sorted;
use crate::imc::{Bmdp, BoundedRow, LabelSet, PartialPolicy};
use crate::reachability::{maximize_reach_bmdp, Bound, ReachOptions};

const ZERO_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentKind {
    PermanentAcceptingExtended,
    GreatestAcceptingExtended,
    GreatestPermanentWinning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentResult {
    pub members: BTreeSet<usize>,
    pub partial_policy: PartialPolicy,
    pub kind: ComponentKind,
    /// Accepted sub-components in discovery order, with the actions left when each was accepted.
    #[serde(skip)]
    pub parts: Vec<Candidate>,
}

impl ComponentResult {
    pub fn empty(kind: ComponentKind) -> Self {
        ComponentResult {
            members: BTreeSet::new(),
            partial_policy: PartialPolicy::new(),
            kind,
            parts: Vec::new(),
        }
    }

    pub fn contains(&self, q: usize) -> bool {
        self.members.contains(&q)
    }
}

impl fmt::Display for ComponentResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "kind {}",
            serde_json::to_string(&self.kind)
                .unwrap_or_default()
                .trim_matches('"')
        )?;
        writeln!(
            f,
            "members {}",
            self.members
                .iter()
                .map(|m| m.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        )?;
        for (q, a) in &self.partial_policy {
            writeln!(f, "policy {q} {a}")?;
        }
        Ok(())
    }
}

/// Allowed actions per state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ActionSets {
    pub allowed: BTreeMap<usize, Vec<usize>>,
}

impl ActionSets {
    pub fn full(model: &Bmdp, states: impl IntoIterator<Item = usize>) -> Self {
        ActionSets {
            allowed: states
                .into_iter()
                .map(|q| (q, model.actions[q].clone()))
                .collect(),
        }
    }

    pub fn get(&self, q: usize) -> &[usize] {
        self.allowed.get(&q).map_or(&[], |v| v.as_slice())
    }

    pub fn restrict(&self, states: &[usize]) -> Self {
        ActionSets {
            allowed: states.iter().map(|&q| (q, self.get(q).to_vec())).collect(),
        }
    }

    fn total(&self) -> usize {
        self.allowed.values().map(Vec::len).sum()
    }
}

fn min_mass_into(row: &BoundedRow, in_b: &impl Fn(usize) -> bool) -> f64 {
    let lo_b: f64 = row
        .entries()
        .iter()
        .filter(|e| in_b(e.to))
        .map(|e| e.lo)
        .sum();
    let hi_rest: f64 = row
        .entries()
        .iter()
        .filter(|e| !in_b(e.to))
        .map(|e| e.hi)
        .sum();
    lo_b.max(1.0 - hi_rest)
}

fn prune(
    model: &Bmdp,
    in_b: impl Fn(usize) -> bool,
    c: &[usize],
    acts: &mut ActionSets,
    forced: bool,
) -> BTreeSet<usize> {
    let mut removed = BTreeSet::new();
    for &q in c {
        let Some(list) = acts.allowed.get_mut(&q) else {
            continue;
        };
        list.retain(|&a| {
            let row = model.row(q, a).expect("action of state");
            let leaks = if forced {
                min_mass_into(row, &in_b) > 1e-12
            } else {
                row.entries().iter().any(|e| e.hi > 0.0 && in_b(e.to))
            };
            !leaks
        });
        if list.is_empty() {
            removed.insert(q);
        }
    }
    removed
}

/// Removes every action of a `c`-state that can put mass into `b` under some adversary.
/// Returns the `c`-states left without actions.
pub fn at_p(
    model: &Bmdp,
    b: &BTreeSet<usize>,
    c: &BTreeSet<usize>,
    acts: &mut ActionSets,
) -> BTreeSet<usize> {
    let c: Vec<usize> = c.iter().copied().collect();
    prune(model, |t| b.contains(&t), &c, acts, false)
}

/// Removes every action of a `c`-state that puts mass into `b` under all adversaries.
pub fn at_pot(
    model: &Bmdp,
    b: &BTreeSet<usize>,
    c: &BTreeSet<usize>,
    acts: &mut ActionSets,
) -> BTreeSet<usize> {
    let c: Vec<usize> = c.iter().copied().collect();
    prune(model, |t| b.contains(&t), &c, acts, true)
}

/// Some pair i has an F_i member and no E_i member.
pub fn is_accepting_set(states: &BTreeSet<usize>, flags: &[u64], n_pairs: usize) -> bool {
    !witness_pairs(states.iter().copied(), flags, n_pairs).is_empty()
}

fn witness_pairs(states: impl Iterator<Item = usize>, flags: &[u64], n_pairs: usize) -> Vec<usize> {
    let all = states.fold(0u64, |m, q| m | flags[q]);
    (0..n_pairs)
        .filter(|&i| all >> (2 * i + 1) & 1 == 1 && all >> (2 * i) & 1 == 0)
        .collect()
}

/// Unmatched Rabin-accepting members over all witnessing pairs.
fn unmatched_accepting(members: &[usize], flags: &[u64], n_pairs: usize) -> BTreeSet<usize> {
    let pairs = witness_pairs(members.iter().copied(), flags, n_pairs);
    members
        .iter()
        .copied()
        .filter(|&q| pairs.iter().any(|&i| flags[q] >> (2 * i + 1) & 1 == 1))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Candidate {
    pub members: Vec<usize>,
    pub acts: ActionSets,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Permanent,
    Potential,
}

fn scc_candidates(model: &Bmdp, members: &[usize], acts: &ActionSets) -> Vec<Candidate> {
    sccs_sorted(members, |q| {
        acts.get(q)
            .iter()
            .flat_map(|&a| model.row(q, a).unwrap().support().collect::<Vec<_>>())
            .collect::<Vec<_>>()
    })
    .into_iter()
    .map(|m| {
        let acts = acts.restrict(&m);
        Candidate { members: m, acts }
    })
    .collect()
}

/// Repeats the pruning against V ∖ (R ∪ keep) until stable. Returns true if anything changed.
fn shrink(model: &Bmdp, cand: &mut Candidate, keep: &[bool], mode: Mode) -> bool {
    let mut inside = keep.to_vec();
    for &q in &cand.members {
        inside[q] = true;
    }
    let mut changed = false;
    loop {
        let before = cand.acts.total();
        let removed = prune(
            model,
            |t| !inside[t],
            &cand.members,
            &mut cand.acts,
            mode == Mode::Potential,
        );
        if removed.is_empty() && cand.acts.total() == before {
            return changed;
        }
        changed = true;
        for &q in &removed {
            inside[q] = keep[q];
            cand.acts.allowed.remove(&q);
        }
        cand.members.retain(|q| !removed.contains(q));
    }
}

/// Builds a BMDP over `members` plus an absorbing win state (standing for `win`) and an
/// absorbing lose state (everything else). Returns the model and the local index map.
fn submodel(model: &Bmdp, members: &[usize], acts: &ActionSets, win: &[bool]) -> Bmdp {
    let m = members.len();
    let local: BTreeMap<usize, usize> = members.iter().enumerate().map(|(i, &q)| (q, i)).collect();
    let map = |t: usize| {
        if let Some(&i) = local.get(&t) {
            i
        } else if win[t] {
            m
        } else {
            m + 1
        }
    };
    let mut actions = Vec::with_capacity(m + 2);
    let mut rows = Vec::with_capacity(m + 2);
    for &q in members {
        let a = acts.get(q).to_vec();
        rows.push(
            a.iter()
                .map(|&x| merge_row(model.row(q, x).unwrap(), map))
                .collect(),
        );
        actions.push(a);
    }
    for s in [m, m + 1] {
        actions.push(vec![0]);
        rows.push(vec![BoundedRow::from_entries([(s, 1.0, 1.0)])]);
    }
    Bmdp {
        n_states: m + 2,
        actions,
        rows,
        labels: vec![LabelSet::new(); m + 2],
        initial: vec![],
    }
}

/// Maps targets, summing bounds of entries that collapse onto one state.
fn merge_row(row: &BoundedRow, map: impl Fn(usize) -> usize) -> BoundedRow {
    let mut acc: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for e in row.entries() {
        let v = acc.entry(map(e.to)).or_insert((0.0, 0.0));
        v.0 += e.lo;
        v.1 += e.hi;
    }
    BoundedRow::from_entries(
        acc.into_iter()
            .map(|(t, (l, h))| (t, l.min(1.0), h.min(1.0))),
    )
}

/// Reach maximization towards `a ∪ win` inside `members`; returns members with value 0
/// and the chosen action per member.
fn certify(
    model: &Bmdp,
    members: &[usize],
    acts: &ActionSets,
    a: &BTreeSet<usize>,
    win: &[bool],
    bound: Bound,
) -> Result<(Vec<usize>, PartialPolicy)> {
    let sub = submodel(model, members, acts, win);
    let m = members.len();
    let mut target: BTreeSet<usize> = members
        .iter()
        .enumerate()
        .filter(|(_, q)| a.contains(q))
        .map(|(i, _)| i)
        .collect();
    target.insert(m);
    let opts = ReachOptions {
        eps_conv: 1e-9,
        ..Default::default()
    };
    let sol = maximize_reach_bmdp(&sub, &target, bound, &opts)?;
    let bad = (0..m)
        .filter(|&i| sol.values[i] <= ZERO_TOL)
        .map(|i| members[i])
        .collect();
    let policy = (0..m).map(|i| (members[i], sol.policy.choice[i])).collect();
    Ok((bad, policy))
}

/// Worklist search shared by the permanent and potential variants. `start` lists the
/// initial candidates; accepted candidates are returned in acceptance order with policies.
fn accepting_search(
    model: &ProductModel,
    start: Vec<Candidate>,
    mode: Mode,
) -> Result<Vec<(Candidate, PartialPolicy)>> {
    let bmdp = &model.bmdp;
    let n = bmdp.n_states;
    let none = vec![false; n];
    let bound = if mode == Mode::Permanent {
        Bound::Lower
    } else {
        Bound::Upper
    };
    let mut queue: VecDeque<Candidate> = start.into();
    let mut seen: HashSet<Candidate> = HashSet::new();
    let mut found = Vec::new();
    while let Some(mut cand) = queue.pop_front() {
        if cand.members.is_empty() || !seen.insert(cand.clone()) {
            continue;
        }
        if shrink(bmdp, &mut cand, &none, mode) {
            queue.extend(scc_candidates(bmdp, &cand.members, &cand.acts));
            continue;
        }
        let pairs = witness_pairs(
            cand.members.iter().copied(),
            &model.rabin_flags,
            model.n_pairs,
        );
        if !pairs.is_empty() {
            let a = unmatched_accepting(&cand.members, &model.rabin_flags, model.n_pairs);
            let (bad, policy) = certify(bmdp, &cand.members, &cand.acts, &a, &none, bound)?;
            if bad.is_empty() {
                found.push((cand, policy));
            } else {
                let bad_set: BTreeSet<usize> = bad.iter().copied().collect();
                let good: Vec<usize> = cand
                    .members
                    .iter()
                    .copied()
                    .filter(|q| !bad_set.contains(q))
                    .collect();
                queue.extend(scc_candidates(bmdp, &bad, &cand.acts));
                queue.extend(scc_candidates(bmdp, &good, &cand.acts));
            }
        } else {
            for i in 0..model.n_pairs {
                if !cand.members.iter().any(|&q| model.has_f(q, i)) {
                    continue;
                }
                let rest: Vec<usize> = cand
                    .members
                    .iter()
                    .copied()
                    .filter(|&q| !model.has_e(q, i))
                    .collect();
                queue.extend(scc_candidates(bmdp, &rest, &cand.acts));
            }
        }
    }
    Ok(found)
}

fn collect(found: Vec<(Candidate, PartialPolicy)>, kind: ComponentKind) -> ComponentResult {
    let mut out = ComponentResult::empty(kind);
    for (cand, policy) in found {
        for (q, a) in policy {
            out.partial_policy.entry(q).or_insert(a);
        }
        out.members.extend(cand.members.iter().copied());
        out.parts.push(cand);
    }
    out
}

fn initial_candidates(model: &ProductModel, states: &[usize], acts: &ActionSets) -> Vec<Candidate> {
    scc_candidates(&model.bmdp, states, acts)
}

/// Extended greatest permanent accepting components, with a generating policy.
pub fn find_extended_permanent_accepting(model: &ProductModel) -> Result<ComponentResult> {
    find_extended_permanent_accepting_with(
        model,
        &ActionSets::full(&model.bmdp, 0..model.n_states()),
    )
}

/// As [`find_extended_permanent_accepting`], searching only the states and actions in `base`.
pub fn find_extended_permanent_accepting_with(
    model: &ProductModel,
    base: &ActionSets,
) -> Result<ComponentResult> {
    let states = live_states(base);
    let found = accepting_search(
        model,
        initial_candidates(model, &states, base),
        Mode::Permanent,
    )?;
    Ok(collect(found, ComponentKind::PermanentAcceptingExtended))
}

/// Extended greatest accepting components (some adversary makes them accepting BSCCs).
pub fn find_extended_greatest_accepting(model: &ProductModel) -> Result<ComponentResult> {
    find_extended_greatest_accepting_with(
        model,
        &ActionSets::full(&model.bmdp, 0..model.n_states()),
    )
}

pub fn find_extended_greatest_accepting_with(
    model: &ProductModel,
    base: &ActionSets,
) -> Result<ComponentResult> {
    greatest_accepting_within(model, &live_states(base), base)
}

fn live_states(base: &ActionSets) -> Vec<usize> {
    base.allowed
        .iter()
        .filter(|(_, a)| !a.is_empty())
        .map(|(&q, _)| q)
        .collect()
}

/// Potential-variant search restricted to `states` with the given actions.
pub fn greatest_accepting_within(
    model: &ProductModel,
    states: &[usize],
    acts: &ActionSets,
) -> Result<ComponentResult> {
    let found = accepting_search(
        model,
        initial_candidates(model, states, acts),
        Mode::Potential,
    )?;
    Ok(collect(found, ComponentKind::GreatestAcceptingExtended))
}

/// Greatest permanent winning components, grown from the permanent accepting ones.
pub fn find_greatest_permanent_winning(
    model: &ProductModel,
    u_p: &ComponentResult,
    u_l: &ComponentResult,
) -> Result<ComponentResult> {
    find_greatest_permanent_winning_with(
        model,
        u_p,
        u_l,
        &ActionSets::full(&model.bmdp, 0..model.n_states()),
    )
}

/// As [`find_greatest_permanent_winning`]; candidate components only use actions from `base`.
pub fn find_greatest_permanent_winning_with(
    model: &ProductModel,
    u_p: &ComponentResult,
    u_l: &ComponentResult,
    base_acts: &ActionSets,
) -> Result<ComponentResult> {
    let bmdp = &model.bmdp;
    let n = bmdp.n_states;
    let mut wc = vec![false; n];
    for &q in &u_p.members {
        wc[q] = true;
    }
    let mut policy = u_p.partial_policy.clone();
    let mut pot: BTreeSet<usize> = u_l.members.difference(&u_p.members).copied().collect();
    let opts = ReachOptions {
        eps_conv: 1e-9,
        ..Default::default()
    };
    loop {
        let prev = wc.clone();
        let target: BTreeSet<usize> = (0..n).filter(|&q| wc[q]).collect();
        let mut sink = BTreeSet::new();
        if !target.is_empty() {
            let sol = maximize_reach_bmdp(bmdp, &target, Bound::Lower, &opts)?;
            for q in 0..n {
                if !wc[q] && sol.exact_one[q] {
                    sink.insert(q);
                    policy.insert(q, sol.policy.choice[q]);
                }
            }
        }
        for &q in &sink {
            wc[q] = true;
        }
        let rest: Vec<usize> = pot
            .iter()
            .copied()
            .filter(|q| !sink.contains(q) && !base_acts.get(*q).is_empty())
            .collect();
        let base = base_acts.restrict(&rest);
        let greatest = greatest_accepting_within(model, &rest, &base)?;
        pot = greatest.members.clone();
        let mut queue: VecDeque<Candidate> = greatest
            .parts
            .iter()
            .map(|c| Candidate {
                members: c.members.clone(),
                acts: base.restrict(&c.members),
            })
            .collect();
        let mut seen: HashSet<Candidate> = HashSet::new();
        while let Some(mut cand) = queue.pop_front() {
            if cand.members.is_empty()
                || cand.members.iter().any(|&q| wc[q])
                || !seen.insert(cand.clone())
            {
                continue;
            }
            if shrink(bmdp, &mut cand, &wc, Mode::Permanent) {
                let sub = greatest_accepting_within(model, &cand.members, &cand.acts)?;
                queue.extend(sub.parts.iter().map(|c| Candidate {
                    members: c.members.clone(),
                    acts: cand.acts.restrict(&c.members),
                }));
                continue;
            }
            let a = unmatched_accepting(&cand.members, &model.rabin_flags, model.n_pairs);
            if a.is_empty() {
                continue;
            }
            let (bad, pol) = certify(bmdp, &cand.members, &cand.acts, &a, &wc, Bound::Lower)?;
            if bad.is_empty() {
                for &q in &cand.members {
                    wc[q] = true;
                    pot.remove(&q);
                }
                policy.extend(pol);
            } else {
                let bad_set: BTreeSet<usize> = bad.iter().copied().collect();
                let good: Vec<usize> = cand
                    .members
                    .iter()
                    .copied()
                    .filter(|q| !bad_set.contains(q))
                    .collect();
                for part in [bad, good] {
                    let sub = greatest_accepting_within(model, &part, &cand.acts)?;
                    queue.extend(sub.parts.iter().map(|c| Candidate {
                        members: c.members.clone(),
                        acts: cand.acts.restrict(&c.members),
                    }));
                }
            }
        }
        if wc == prev {
            break;
        }
    }
    let members: BTreeSet<usize> = (0..n).filter(|&q| wc[q]).collect();
    policy.retain(|q, _| members.contains(q));
    Ok(ComponentResult {
        members,
        partial_policy: policy,
        kind: ComponentKind::GreatestPermanentWinning,
        parts: Vec::new(),
    })
}
