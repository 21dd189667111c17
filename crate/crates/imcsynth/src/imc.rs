//! Markov chains, interval Markov chains and bounded-parameter MDPs.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for interval and row-sum comparisons.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Default state bound for brute-force corner enumeration.
pub const DEFAULT_CORNER_LIMIT: usize = 6;

pub type LabelSet = BTreeSet<String>;

/// Partial policy: state → action id.
pub type PartialPolicy = BTreeMap<usize, usize>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entry {
    pub to: usize,
    pub lo: f64,
    pub hi: f64,
}

/// Sparse interval row. Targets are kept sorted and unique; absent targets mean [0, 0].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundedRow {
    entries: Vec<Entry>,
}

impl BoundedRow {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a row; a repeated target keeps its last bounds.
    pub fn from_entries<I: IntoIterator<Item = (usize, f64, f64)>>(it: I) -> Self {
        let mut row = Self::new();
        for (to, lo, hi) in it {
            row.insert(to, lo, hi);
        }
        row
    }

    pub fn insert(&mut self, to: usize, lo: f64, hi: f64) {
        match self.entries.binary_search_by_key(&to, |e| e.to) {
            Ok(i) => self.entries[i] = Entry { to, lo, hi },
            Err(i) => self.entries.insert(i, Entry { to, lo, hi }),
        }
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, to: usize) -> (f64, f64) {
        match self.entries.binary_search_by_key(&to, |e| e.to) {
            Ok(i) => (self.entries[i].lo, self.entries[i].hi),
            Err(_) => (0.0, 0.0),
        }
    }

    pub fn sum_lo(&self) -> f64 {
        self.entries.iter().map(|e| e.lo).sum()
    }

    pub fn sum_hi(&self) -> f64 {
        self.entries.iter().map(|e| e.hi).sum()
    }

    /// Targets with a non-zero upper bound.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().filter(|e| e.hi > 0.0).map(|e| e.to)
    }

    /// Lists every violated row invariant.
    pub fn violations(&self, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        for e in &self.entries {
            if !(e.lo >= -tol && e.lo <= e.hi + tol && e.hi <= 1.0 + tol) {
                out.push(format!(
                    "bounds [{}, {}] of target {} are not within 0 ≤ lo ≤ hi ≤ 1",
                    e.lo, e.hi, e.to
                ));
            }
        }
        let (slo, shi) = (self.sum_lo(), self.sum_hi());
        if slo > 1.0 + tol {
            out.push(format!("Σlo={} > 1", round_display(slo)));
        }
        if shi < 1.0 - tol {
            out.push(format!("Σhi={} < 1", round_display(shi)));
        }
        out
    }

    /// Greedy allocation along `order` (indices into `entries`): each target gets
    /// min(hi, 1 − allocated − Σ lo of the targets after it). Returns one mass per entry.
    pub fn allocate(&self, order: &[usize]) -> Vec<f64> {
        let mut z = vec![0.0; self.entries.len()];
        let mut rest_lo: f64 = order.iter().map(|&k| self.entries[k].lo).sum();
        let mut allocated = 0.0;
        for &k in order {
            let e = &self.entries[k];
            rest_lo -= e.lo;
            let mut m =
                e.hi.min(1.0 - allocated - rest_lo)
                    .max(e.lo.min(e.hi))
                    .max(0.0);
            if m < 1e-13 && e.lo <= 0.0 {
                // rounding residue, not mass
                m = 0.0;
            }
            z[k] = m;
            allocated += m;
        }
        z
    }

    /// Applies `f` to every target id.
    pub fn map_targets(&self, f: impl Fn(usize) -> usize) -> BoundedRow {
        BoundedRow::from_entries(self.entries.iter().map(|e| (f(e.to), e.lo, e.hi)))
    }
}

fn round_display(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Concrete Markov chain with sparse rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovChain {
    pub n_states: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub labels: Vec<LabelSet>,
    pub initial: Vec<usize>,
}

impl MarkovChain {
    /// Indices of rows whose mass is not 1 within `tol`.
    pub fn non_stochastic_rows(&self, tol: f64) -> Vec<usize> {
        (0..self.n_states)
            .filter(|&q| {
                let s: f64 = self.rows[q].iter().map(|&(_, p)| p).sum();
                (s - 1.0).abs() > tol || self.rows[q].iter().any(|&(_, p)| p < -tol)
            })
            .collect()
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.rows[from]
            .iter()
            .filter(|&&(t, _)| t == to)
            .map(|&(_, p)| p)
            .sum()
    }
}

/// Interval-valued Markov chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Imc {
    pub n_states: usize,
    pub rows: Vec<BoundedRow>,
    pub labels: Vec<LabelSet>,
    pub initial: Vec<usize>,
}

/// Bounded-parameter MDP. `rows[q][k]` belongs to action `actions[q][k]`; action ids are sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct Bmdp {
    pub n_states: usize,
    pub actions: Vec<Vec<usize>>,
    pub rows: Vec<Vec<BoundedRow>>,
    pub labels: Vec<LabelSet>,
    pub initial: Vec<usize>,
}

impl Bmdp {
    pub fn action_index(&self, q: usize, a: usize) -> Option<usize> {
        self.actions[q].binary_search(&a).ok()
    }

    pub fn row(&self, q: usize, a: usize) -> Option<&BoundedRow> {
        self.action_index(q, a).map(|k| &self.rows[q][k])
    }

    /// Single-action view of an IMC.
    pub fn from_imc(imc: &Imc) -> Bmdp {
        Bmdp {
            n_states: imc.n_states,
            actions: vec![vec![0]; imc.n_states],
            rows: imc.rows.iter().map(|r| vec![r.clone()]).collect(),
            labels: imc.labels.clone(),
            initial: imc.initial.clone(),
        }
    }

    /// All actions of every state, as an action-set working copy.
    pub fn all_actions(&self) -> Vec<Vec<usize>> {
        self.actions.clone()
    }
}

/// Full memoryless policy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorylessPolicy {
    pub choice: Vec<usize>,
}

/// Per-state satisfaction interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalResult {
    pub bounds: Vec<(f64, f64)>,
}

impl IntervalResult {
    pub fn is_valid(&self, tol: f64) -> bool {
        self.bounds
            .iter()
            .all(|&(lo, hi)| lo >= -tol && lo <= hi + tol && hi <= 1.0 + tol)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub state: usize,
    pub action: Option<usize>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_bmdp(model: &Bmdp) -> ValidationReport {
    validate_bmdp_tol(model, DEFAULT_TOL)
}

pub fn validate_bmdp_tol(model: &Bmdp, tol: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    if model.actions.len() != model.n_states || model.rows.len() != model.n_states {
        report.violations.push(Violation {
            state: 0,
            action: None,
            message: format!("expected {} action lists and row lists", model.n_states),
        });
        return report;
    }
    for q in 0..model.n_states {
        if model.actions[q].is_empty() {
            report.violations.push(Violation {
                state: q,
                action: None,
                message: "no actions".into(),
            });
        }
        if model.actions[q].len() != model.rows[q].len() {
            report.violations.push(Violation {
                state: q,
                action: None,
                message: "action list and row list differ in length".into(),
            });
            continue;
        }
        for (k, row) in model.rows[q].iter().enumerate() {
            let a = model.actions[q][k];
            for msg in row.violations(tol) {
                report.violations.push(Violation {
                    state: q,
                    action: Some(a),
                    message: msg,
                });
            }
            if let Some(e) = row.entries().iter().find(|e| e.to >= model.n_states) {
                report.violations.push(Violation {
                    state: q,
                    action: Some(a),
                    message: format!("target {} out of range", e.to),
                });
            }
        }
    }
    report
}

pub fn validate_imc(model: &Imc) -> ValidationReport {
    validate_bmdp(&Bmdp::from_imc(model))
}

pub fn induce_imc(model: &Bmdp, policy: &MemorylessPolicy) -> Result<Imc> {
    let mut rows = Vec::with_capacity(model.n_states);
    for q in 0..model.n_states {
        let a = *policy.choice.get(q).ok_or(Error::InvalidAction {
            state: q,
            action: usize::MAX,
        })?;
        let row = model.row(q, a).ok_or(Error::InvalidAction {
            state: q,
            action: a,
        })?;
        rows.push(row.clone());
    }
    Ok(Imc {
        n_states: model.n_states,
        rows,
        labels: model.labels.clone(),
        initial: model.initial.clone(),
    })
}

pub fn complement_result(r: &IntervalResult) -> IntervalResult {
    IntervalResult {
        bounds: r
            .bounds
            .iter()
            .map(|&(lo, hi)| (1.0 - hi, 1.0 - lo))
            .collect(),
    }
}

/// Distinct extreme rows of one interval row, one per permutation of its entries.
pub fn corner_rows(row: &BoundedRow) -> Vec<Vec<(usize, f64)>> {
    let n = row.len();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for perm in (0..n).permutations(n) {
        let z = row.allocate(&perm);
        let r: Vec<(usize, f64)> = row
            .entries()
            .iter()
            .zip(&z)
            .filter(|(_, &m)| m > 0.0)
            .map(|(e, &m)| (e.to, m))
            .collect();
        let key: Vec<(usize, i64)> = r
            .iter()
            .map(|&(t, p)| (t, (p * 1e12).round() as i64))
            .collect();
        if seen.insert(key) {
            out.push(r);
        }
    }
    out
}

/// Streams every corner Markov chain of `model`, refusing models above `limit` states.
pub fn enumerate_corner_mcs(model: &Imc, limit: usize) -> Result<CornerChains> {
    if model.n_states > limit {
        return Err(Error::SizeLimit {
            n: model.n_states,
            limit,
        });
    }
    let choices: Vec<Vec<Vec<(usize, f64)>>> = model.rows.iter().map(corner_rows).collect();
    let done = choices.iter().any(|c| c.is_empty());
    Ok(CornerChains {
        counter: vec![0; model.n_states],
        choices,
        labels: model.labels.clone(),
        initial: model.initial.clone(),
        done,
    })
}

pub struct CornerChains {
    choices: Vec<Vec<Vec<(usize, f64)>>>,
    counter: Vec<usize>,
    labels: Vec<LabelSet>,
    initial: Vec<usize>,
    done: bool,
}

impl CornerChains {
    /// Number of chains the stream yields in total.
    pub fn total(&self) -> usize {
        self.choices.iter().map(|c| c.len()).product()
    }
}

impl Iterator for CornerChains {
    type Item = MarkovChain;

    fn next(&mut self) -> Option<MarkovChain> {
        if self.done {
            return None;
        }
        let rows = self
            .counter
            .iter()
            .zip(&self.choices)
            .map(|(&i, c)| c[i].clone())
            .collect();
        let chain = MarkovChain {
            n_states: self.choices.len(),
            rows,
            labels: self.labels.clone(),
            initial: self.initial.clone(),
        };
        // odometer increment
        let mut k = 0;
        loop {
            if k == self.counter.len() {
                self.done = true;
                break;
            }
            self.counter[k] += 1;
            if self.counter[k] < self.choices[k].len() {
                break;
            }
            self.counter[k] = 0;
            k += 1;
        }
        Some(chain)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub from: usize,
    pub action: usize,
    pub to: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n_states: usize,
    pub labels: Vec<Vec<String>>,
    pub initial: Vec<usize>,
    pub transitions: Vec<TransitionRecord>,
}

impl Bmdp {
    pub fn to_file(&self) -> ModelFile {
        let mut transitions = Vec::new();
        for q in 0..self.n_states {
            for (k, &a) in self.actions[q].iter().enumerate() {
                for e in self.rows[q][k].entries() {
                    transitions.push(TransitionRecord {
                        from: q,
                        action: a,
                        to: e.to,
                        lo: e.lo,
                        hi: e.hi,
                    });
                }
            }
        }
        ModelFile {
            n_states: self.n_states,
            labels: self
                .labels
                .iter()
                .map(|l| l.iter().cloned().collect())
                .collect(),
            initial: self.initial.clone(),
            transitions,
        }
    }

    pub fn from_file(f: &ModelFile) -> Result<Bmdp> {
        if f.labels.len() != f.n_states {
            return Err(Error::Parse {
                line: 0,
                field: "labels".into(),
                msg: format!(
                    "expected {} label sets, found {}",
                    f.n_states,
                    f.labels.len()
                ),
            });
        }
        let mut per: Vec<BTreeMap<usize, BoundedRow>> = vec![BTreeMap::new(); f.n_states];
        for (i, t) in f.transitions.iter().enumerate() {
            if t.from >= f.n_states || t.to >= f.n_states {
                return Err(Error::Parse {
                    line: i,
                    field: "transitions".into(),
                    msg: format!("state id out of range in {:?}", t),
                });
            }
            per[t.from]
                .entry(t.action)
                .or_default()
                .insert(t.to, t.lo, t.hi);
        }
        let actions = per.iter().map(|m| m.keys().copied().collect()).collect();
        let rows = per.into_iter().map(|m| m.into_values().collect()).collect();
        Ok(Bmdp {
            n_states: f.n_states,
            actions,
            rows,
            labels: f
                .labels
                .iter()
                .map(|l| l.iter().cloned().collect())
                .collect(),
            initial: f.initial.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Bmdp> {
        Bmdp::from_file(&serde_json::from_str(text)?)
    }
}

impl Imc {
    pub fn to_json(&self) -> Result<String> {
        Bmdp::from_imc(self).to_json()
    }

    pub fn from_json(text: &str) -> Result<Imc> {
        let b = Bmdp::from_json(text)?;
        let mut rows = Vec::with_capacity(b.n_states);
        for q in 0..b.n_states {
            match b.rows[q].len() {
                0 => rows.push(BoundedRow::new()),
                1 => rows.push(b.rows[q][0].clone()),
                _ => {
                    return Err(Error::Parse {
                        line: 0,
                        field: "action".into(),
                        msg: format!("state {} has several actions", q),
                    })
                }
            }
        }
        Ok(Imc {
            n_states: b.n_states,
            rows,
            labels: b.labels,
            initial: b.initial,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(rows: Vec<BoundedRow>) -> Bmdp {
        let n = rows.len();
        Bmdp {
            n_states: n,
            actions: vec![vec![0]; n],
            rows: rows.into_iter().map(|r| vec![r]).collect(),
            labels: vec![LabelSet::new(); n],
            initial: vec![0],
        }
    }

    #[test]
    fn identity_chain_validates() {
        let m = single(vec![BoundedRow::from_entries([(0, 1.0, 1.0)])]);
        assert!(validate_bmdp(&m).is_ok());
    }

    #[test]
    fn excess_lower_mass_is_reported() {
        let m = single(vec![
            BoundedRow::from_entries([(0, 0.6, 0.7), (1, 0.5, 0.6)]),
            BoundedRow::from_entries([(1, 1.0, 1.0)]),
        ]);
        let r = validate_bmdp(&m);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].state, 0);
        assert_eq!(r.violations[0].action, Some(0));
        assert_eq!(r.violations[0].message, "Σlo=1.1 > 1");
    }

    #[test]
    fn loose_row_validates() {
        let m = single(vec![
            BoundedRow::from_entries([(0, 0.2, 0.8), (1, 0.3, 0.7)]),
            BoundedRow::from_entries([(1, 1.0, 1.0)]),
        ]);
        assert!(validate_bmdp(&m).is_ok());
    }

    fn two_action() -> Bmdp {
        Bmdp {
            n_states: 2,
            actions: vec![vec![0, 1], vec![0, 1]],
            rows: vec![
                vec![
                    BoundedRow::from_entries([(0, 1.0, 1.0)]),
                    BoundedRow::from_entries([(1, 1.0, 1.0)]),
                ],
                vec![
                    BoundedRow::from_entries([(0, 0.5, 0.5), (1, 0.5, 0.5)]),
                    BoundedRow::from_entries([(1, 0.2, 1.0)]),
                ],
            ],
            labels: vec![LabelSet::new(); 2],
            initial: vec![0, 1],
        }
    }

    #[test]
    fn induce_selects_rows() {
        let b = two_action();
        let imc = induce_imc(&b, &MemorylessPolicy { choice: vec![0, 1] }).unwrap();
        assert_eq!(imc.rows[0], b.rows[0][0]);
        assert_eq!(imc.rows[1], b.rows[1][1]);
        assert_eq!(imc.initial, b.initial);
    }

    #[test]
    fn induce_single_action_strips_labels() {
        let b = single(vec![BoundedRow::from_entries([(0, 1.0, 1.0)])]);
        let imc = induce_imc(&b, &MemorylessPolicy { choice: vec![0] }).unwrap();
        assert_eq!(Bmdp::from_imc(&imc), b);
    }

    #[test]
    fn induce_rejects_missing_action() {
        let err = induce_imc(&two_action(), &MemorylessPolicy { choice: vec![0, 7] }).unwrap_err();
        assert!(matches!(
            err,
            Error::InvalidAction {
                state: 1,
                action: 7
            }
        ));
    }

    #[test]
    fn complement_examples() {
        let r = IntervalResult {
            bounds: vec![(0.3, 0.8), (0.0, 1.0), (1.0, 1.0)],
        };
        let c = complement_result(&r);
        let expect = [(0.2, 0.7), (0.0, 1.0), (0.0, 0.0)];
        for (got, want) in c.bounds.iter().zip(expect) {
            assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12);
        }
    }

    fn sorted(mut v: Vec<Vec<(usize, f64)>>) -> Vec<Vec<(usize, f64)>> {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn corner_rows_free_pair() {
        let r = BoundedRow::from_entries([(0, 0.0, 1.0), (1, 0.0, 1.0)]);
        assert_eq!(
            sorted(corner_rows(&r)),
            vec![vec![(0, 1.0)], vec![(1, 1.0)]]
        );
    }

    #[test]
    fn corner_rows_symmetric_pair() {
        let r = BoundedRow::from_entries([(0, 0.2, 0.8), (1, 0.2, 0.8)]);
        let c = sorted(corner_rows(&r));
        assert_eq!(c.len(), 2);
        assert_eq!(c[0][0].0, 0);
        assert!((c[0][0].1 - 0.2).abs() < 1e-12 && (c[0][1].1 - 0.8).abs() < 1e-12);
        assert!((c[1][0].1 - 0.8).abs() < 1e-12 && (c[1][1].1 - 0.2).abs() < 1e-12);
    }

    #[test]
    fn corner_rows_degenerate() {
        let r = BoundedRow::from_entries([(0, 1.0, 1.0)]);
        assert_eq!(corner_rows(&r), vec![vec![(0, 1.0)]]);
    }

    #[test]
    fn corner_enumeration_size_limit() {
        let imc = Imc {
            n_states: 7,
            rows: (0..7)
                .map(|q| BoundedRow::from_entries([(q, 1.0, 1.0)]))
                .collect(),
            labels: vec![LabelSet::new(); 7],
            initial: vec![],
        };
        assert!(matches!(
            enumerate_corner_mcs(&imc, DEFAULT_CORNER_LIMIT),
            Err(Error::SizeLimit { n: 7, limit: 6 })
        ));
        assert_eq!(enumerate_corner_mcs(&imc, 7).unwrap().count(), 1);
    }

    #[test]
    fn json_round_trip() {
        let mut b = two_action();
        b.labels[1].insert("A".into());
        let text = b.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["n_states", "labels", "initial", "transitions"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(Bmdp::from_json(&text).unwrap(), b);
    }

    fn arb_row(n: usize) -> impl Strategy<Value = BoundedRow> {
        // bounds on a 0.05 grid, repaired to be valid
        proptest::collection::vec((0..=20u32, 0..=20u32), n).prop_map(|v| {
            let mut e: Vec<(f64, f64)> = v
                .into_iter()
                .map(|(a, b)| {
                    let (a, b) = (a.min(b) as f64 * 0.05, a.max(b) as f64 * 0.05);
                    (a, b)
                })
                .collect();
            let slo: f64 = e.iter().map(|x| x.0).sum();
            if slo > 1.0 {
                for x in &mut e {
                    x.0 = 0.0;
                }
            }
            let shi: f64 = e.iter().map(|x| x.1).sum();
            if shi < 1.0 {
                e[0].1 = 1.0;
            }
            BoundedRow::from_entries(e.into_iter().enumerate().map(|(i, (lo, hi))| (i, lo, hi)))
        })
    }

    proptest! {
        #[test]
        fn corners_stay_within_bounds(row in (1usize..=4).prop_flat_map(arb_row)) {
            prop_assert!(row.violations(1e-9).is_empty());
            for c in corner_rows(&row) {
                let s: f64 = c.iter().map(|x| x.1).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                for &(t, p) in &c {
                    let (lo, hi) = row.get(t);
                    prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
                }
                for e in row.entries() {
                    if e.lo > 0.0 {
                        prop_assert!(c.iter().any(|x| x.0 == e.to));
                    }
                }
            }
        }

        #[test]
        fn degenerate_rows_have_one_corner(ws in proptest::collection::vec(1u32..10, 1..4)) {
            let tot: u32 = ws.iter().sum();
            let row = BoundedRow::from_entries(ws.iter().enumerate().map(|(i, &w)| {
                let p = w as f64 / tot as f64;
                (i, p, p)
            }));
            prop_assert_eq!(corner_rows(&row).len(), 1);
        }

        #[test]
        fn complement_is_involution(v in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..8)) {
            let r = IntervalResult { bounds: v.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect() };
            let back = complement_result(&complement_result(&r));
            for (x, y) in back.bounds.iter().zip(&r.bounds) {
                prop_assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
            }
        }

        #[test]
        fn induced_models_validate(rows in proptest::collection::vec((1usize..=3).prop_flat_map(arb_row), 2..4), pick in proptest::collection::vec(0usize..2, 3)) {
            // two actions per state: the generated row and a self-loop
            let n = rows.len();
            let clamp = |r: &BoundedRow| r.map_targets(|t| t % n);
            let b = Bmdp {
                n_states: n,
                actions: vec![vec![0, 1]; n],
                rows: rows.iter().enumerate().map(|(q, r)| vec![clamp(r), BoundedRow::from_entries([(q, 1.0, 1.0)])]).collect(),
                labels: vec![LabelSet::new(); n],
                initial: vec![0],
            };
            prop_assume!(validate_bmdp(&b).is_ok());
            let pol = MemorylessPolicy { choice: (0..n).map(|q| pick[q]).collect() };
            prop_assert!(validate_imc(&induce_imc(&b, &pol).unwrap()).is_ok());
        }
    }
}
