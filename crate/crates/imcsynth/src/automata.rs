//! Deterministic Rabin automata and products with interval models.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imc::{Bmdp, BoundedRow, Imc, LabelSet};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RabinPair {
    pub e: BTreeSet<usize>,
    pub f: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RabinAutomaton {
    pub n_states: usize,
    pub alphabet: BTreeSet<LabelSet>,
    delta: BTreeMap<(usize, LabelSet), usize>,
    pub s0: usize,
    pub pairs: Vec<RabinPair>,
}

#[derive(Deserialize, Serialize)]
struct DraEdge {
    from: usize,
    label: Vec<String>,
    to: usize,
}

#[derive(Deserialize, Serialize)]
struct DraFile {
    states: usize,
    s0: usize,
    pairs: Vec<(Vec<usize>, Vec<usize>)>,
    edges: Vec<DraEdge>,
}

impl RabinAutomaton {
    pub fn delta(&self, s: usize, label: &LabelSet) -> Option<usize> {
        self.delta.get(&(s, label.clone())).copied()
    }

    /// Builds an automaton from explicit edges, checking totality over the inferred alphabet.
    pub fn new(
        n_states: usize,
        s0: usize,
        pairs: Vec<RabinPair>,
        edges: impl IntoIterator<Item = (usize, LabelSet, usize)>,
    ) -> Result<Self> {
        let mut delta = BTreeMap::new();
        let mut alphabet = BTreeSet::new();
        for (i, (from, label, to)) in edges.into_iter().enumerate() {
            if from >= n_states || to >= n_states {
                return Err(Error::Parse {
                    line: i,
                    field: "edges".into(),
                    msg: format!("state out of range: {from} -> {to}"),
                });
            }
            alphabet.insert(label.clone());
            if let Some(prev) = delta.insert((from, label.clone()), to) {
                if prev != to {
                    return Err(Error::Parse {
                        line: i,
                        field: "edges".into(),
                        msg: format!("nondeterministic edge from {from} on {:?}", label),
                    });
                }
            }
        }
        if s0 >= n_states {
            return Err(Error::Parse {
                line: 0,
                field: "s0".into(),
                msg: format!("{s0} out of range"),
            });
        }
        for p in &pairs {
            if p.e.iter().chain(&p.f).any(|&s| s >= n_states) {
                return Err(Error::Parse {
                    line: 0,
                    field: "pairs".into(),
                    msg: "state out of range".into(),
                });
            }
        }
        let mut missing: Vec<(usize, Vec<String>)> = Vec::new();
        for s in 0..n_states {
            for l in &alphabet {
                if !delta.contains_key(&(s, l.clone())) {
                    missing.push((s, l.iter().cloned().collect()));
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::NotTotal { missing });
        }
        Ok(RabinAutomaton {
            n_states,
            alphabet,
            delta,
            s0,
            pairs,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let f: DraFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            field: "document".into(),
            msg: e.to_string(),
        })?;
        let pairs = f
            .pairs
            .into_iter()
            .map(|(e, f)| RabinPair {
                e: e.into_iter().collect(),
                f: f.into_iter().collect(),
            })
            .collect();
        let edges = f
            .edges
            .into_iter()
            .map(|e| (e.from, e.label.into_iter().collect(), e.to));
        Self::new(f.states, f.s0, pairs, edges)
    }

    pub fn to_json(&self) -> Result<String> {
        let f = DraFile {
            states: self.n_states,
            s0: self.s0,
            pairs: self
                .pairs
                .iter()
                .map(|p| (p.e.iter().copied().collect(), p.f.iter().copied().collect()))
                .collect(),
            edges: self
                .delta
                .iter()
                .map(|((from, l), &to)| DraEdge {
                    from: *from,
                    label: l.iter().cloned().collect(),
                    to,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&f)?)
    }

    /// One-state automaton accepting every word over `alphabet`.
    pub fn universal(alphabet: impl IntoIterator<Item = LabelSet>) -> Self {
        let pairs = vec![RabinPair {
            e: BTreeSet::new(),
            f: [0].into(),
        }];
        Self::new(1, 0, pairs, alphabet.into_iter().map(|l| (0, l, 0)))
            .expect("universal automaton is total")
    }

    /// Rabin flag bitmask of DRA state `s`: E_i at bit 2i, F_i at bit 2i+1.
    pub fn flags(&self, s: usize) -> u64 {
        let mut m = 0;
        for (i, p) in self.pairs.iter().enumerate() {
            if p.e.contains(&s) {
                m |= 1 << (2 * i);
            }
            if p.f.contains(&s) {
                m |= 1 << (2 * i + 1);
            }
        }
        m
    }

    /// States from which no accepting lasso can be reached. Entering one of them
    /// means every continuation of the word is rejected.
    pub fn dead_states(&self) -> BTreeSet<usize> {
        let n = self.n_states;
        let succ: Vec<BTreeSet<usize>> = (0..n)
            .map(|s| {
                self.alphabet
                    .iter()
                    .filter_map(|l| self.delta(s, l))
                    .collect()
            })
            .collect();
        let reach_from = |start: usize, allowed: &dyn Fn(usize) -> bool| -> BTreeSet<usize> {
            let mut seen = BTreeSet::new();
            let mut stack = vec![start];
            while let Some(s) = stack.pop() {
                for &t in &succ[s] {
                    if allowed(t) && seen.insert(t) {
                        stack.push(t);
                    }
                }
            }
            seen
        };
        // f is on an accepting cycle for pair i if f returns to itself avoiding E_i
        let mut good = BTreeSet::new();
        for p in &self.pairs {
            for &f in &p.f {
                if p.e.contains(&f) {
                    continue;
                }
                if reach_from(f, &|t| !p.e.contains(&t)).contains(&f) {
                    good.insert(f);
                }
            }
        }
        (0..n)
            .filter(|&s| !good.contains(&s) && reach_from(s, &|_| true).is_disjoint(&good))
            .collect()
    }
}

/// Product of a model with a DRA. State ⟨Q_j, s_i⟩ has index j·|S| + i.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductModel {
    pub bmdp: Bmdp,
    pub n_model: usize,
    pub n_dra: usize,
    pub n_pairs: usize,
    pub rabin_flags: Vec<u64>,
}

impl ProductModel {
    pub fn index(&self, j: usize, i: usize) -> usize {
        j * self.n_dra + i
    }

    pub fn split(&self, p: usize) -> (usize, usize) {
        (p / self.n_dra, p % self.n_dra)
    }

    pub fn n_states(&self) -> usize {
        self.bmdp.n_states
    }

    /// Copy keeping only the listed actions per state; an empty list keeps all actions.
    pub fn restrict(&self, allowed: &[Vec<usize>]) -> ProductModel {
        let mut out = self.clone();
        for q in 0..self.n_states() {
            if allowed[q].is_empty() || allowed[q] == self.bmdp.actions[q] {
                continue;
            }
            let set: std::collections::HashSet<usize> = allowed[q].iter().copied().collect();
            let keep: Vec<usize> = self.bmdp.actions[q]
                .iter()
                .copied()
                .filter(|a| set.contains(a))
                .collect();
            out.bmdp.rows[q] = keep
                .iter()
                .map(|&a| self.bmdp.row(q, a).expect("listed action").clone())
                .collect();
            out.bmdp.actions[q] = keep;
        }
        out
    }

    pub fn has_e(&self, p: usize, i: usize) -> bool {
        self.rabin_flags[p] >> (2 * i) & 1 == 1
    }

    pub fn has_f(&self, p: usize, i: usize) -> bool {
        self.rabin_flags[p] >> (2 * i + 1) & 1 == 1
    }
}

fn check_alphabet(labels: &[LabelSet], dra: &RabinAutomaton) -> Result<()> {
    for l in labels {
        if !dra.alphabet.contains(l) {
            return Err(Error::AlphabetMismatch(l.iter().cloned().collect()));
        }
    }
    Ok(())
}

pub fn product(model: &Bmdp, dra: &RabinAutomaton) -> Result<ProductModel> {
    check_alphabet(&model.labels, dra)?;
    let ns = dra.n_states;
    let n = model.n_states * ns;
    let mut actions = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    for j in 0..model.n_states {
        for i in 0..ns {
            actions.push(model.actions[j].clone());
            rows.push(
                model.rows[j]
                    .iter()
                    .map(|r| {
                        r.map_targets(|l| {
                            let s2 = dra.delta(i, &model.labels[l]).expect("alphabet checked");
                            l * ns + s2
                        })
                    })
                    .collect::<Vec<BoundedRow>>(),
            );
            labels.push(model.labels[j].clone());
            flags.push(dra.flags(i));
        }
    }
    let initial = model
        .initial
        .iter()
        .map(|&j| {
            j * ns
                + dra
                    .delta(dra.s0, &model.labels[j])
                    .expect("alphabet checked")
        })
        .collect();
    Ok(ProductModel {
        bmdp: Bmdp {
            n_states: n,
            actions,
            rows,
            labels,
            initial,
        },
        n_model: model.n_states,
        n_dra: ns,
        n_pairs: dra.pairs.len(),
        rabin_flags: flags,
    })
}

pub fn product_imc(model: &Imc, dra: &RabinAutomaton) -> Result<ProductModel> {
    product(&Bmdp::from_imc(model), dra)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imc::{induce_imc, MemorylessPolicy};
    use proptest::prelude::*;

    fn ls(props: &[&str]) -> LabelSet {
        props.iter().map(|s| s.to_string()).collect()
    }

    fn data(name: &str) -> String {
        std::fs::read_to_string(format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR")))
            .unwrap()
    }

    #[test]
    fn parses_phi1() {
        let d = RabinAutomaton::parse(&data("phi1.dra.json")).unwrap();
        assert_eq!(d.n_states, 5);
        assert_eq!(d.pairs.len(), 1);
    }

    #[test]
    fn parses_phi2() {
        let d = RabinAutomaton::parse(&data("phi2.dra.json")).unwrap();
        assert_eq!(d.n_states, 7);
        assert_eq!(d.pairs.len(), 3);
        assert_eq!(d.alphabet.len(), 8);
    }

    #[test]
    fn universal_parses() {
        let text = r#"{"states":1,"s0":0,"pairs":[[[],[0]]],"edges":[{"from":0,"label":[],"to":0},{"from":0,"label":["A"],"to":0}]}"#;
        let d = RabinAutomaton::parse(text).unwrap();
        assert_eq!(d.n_states, 1);
        assert_eq!(d.flags(0), 0b10);
    }

    #[test]
    fn missing_edge_is_reported() {
        let text = r#"{"states":2,"s0":0,"pairs":[[[],[0]]],"edges":[{"from":0,"label":[],"to":1},{"from":0,"label":["A"],"to":0},{"from":1,"label":[],"to":1}]}"#;
        match RabinAutomaton::parse(text) {
            Err(Error::NotTotal { missing }) => {
                assert_eq!(missing, vec![(1, vec!["A".to_string()])])
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_document_is_parse_error() {
        assert!(matches!(
            RabinAutomaton::parse("{\"states\": 1,"),
            Err(Error::Parse { .. })
        ));
    }

    /// 2-state DRA over {}, {A}: moves to 1 on A, to 0 otherwise; pair ({0},{1}).
    fn toggle() -> RabinAutomaton {
        RabinAutomaton::new(
            2,
            0,
            vec![RabinPair {
                e: [0].into(),
                f: [1].into(),
            }],
            [
                (0, ls(&[]), 0),
                (0, ls(&["A"]), 1),
                (1, ls(&[]), 0),
                (1, ls(&["A"]), 1),
            ],
        )
        .unwrap()
    }

    fn two_state_bmdp() -> Bmdp {
        Bmdp {
            n_states: 2,
            actions: vec![vec![0, 1], vec![0]],
            rows: vec![
                vec![
                    BoundedRow::from_entries([(0, 0.2, 0.5), (1, 0.5, 0.8)]),
                    BoundedRow::from_entries([(0, 1.0, 1.0)]),
                ],
                vec![BoundedRow::from_entries([(0, 0.1, 0.3), (1, 0.7, 0.9)])],
            ],
            labels: vec![ls(&[]), ls(&["A"])],
            initial: vec![0, 1],
        }
    }

    #[test]
    fn product_routes_to_delta_successor() {
        let p = product(&two_state_bmdp(), &toggle()).unwrap();
        assert_eq!(p.n_states(), 4);
        // ⟨Q0,s⟩ under action 0: Q0 (label {}) → s'=0, Q1 (label {A}) → s'=1
        for s in 0..2 {
            let q = p.index(0, s);
            let row = p.bmdp.row(q, 0).unwrap();
            assert_eq!(row.get(p.index(0, 0)), (0.2, 0.5));
            assert_eq!(row.get(p.index(1, 1)), (0.5, 0.8));
            assert_eq!(row.get(p.index(0, 1)), (0.0, 0.0));
            assert_eq!(row.get(p.index(1, 0)), (0.0, 0.0));
            assert_eq!(p.bmdp.actions[q], vec![0, 1]);
        }
        assert_eq!(p.bmdp.actions[p.index(1, 0)], vec![0]);
        assert_eq!(p.rabin_flags, vec![0b01, 0b10, 0b01, 0b10]);
        // initialization counts as a transition
        assert_eq!(p.bmdp.initial, vec![p.index(0, 0), p.index(1, 1)]);
    }

    #[test]
    fn universal_product_is_identity() {
        let b = two_state_bmdp();
        let d = RabinAutomaton::universal([ls(&[]), ls(&["A"])]);
        let p = product(&b, &d).unwrap();
        assert_eq!(p.bmdp.rows, b.rows);
        assert!(p.rabin_flags.iter().all(|&f| f == 0b10));
    }

    #[test]
    fn alphabet_mismatch() {
        let mut b = two_state_bmdp();
        b.labels[1] = ls(&["B"]);
        match product(&b, &toggle()) {
            Err(Error::AlphabetMismatch(l)) => assert_eq!(l, vec!["B".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_self_loop_imc() {
        let imc = Imc {
            n_states: 1,
            rows: vec![BoundedRow::from_entries([(0, 1.0, 1.0)])],
            labels: vec![ls(&[])],
            initial: vec![0],
        };
        let p = product_imc(&imc, &RabinAutomaton::universal([ls(&[])])).unwrap();
        assert_eq!(p.n_states(), 1);
        assert!(p.has_f(0, 0) && !p.has_e(0, 0));
        assert_eq!(p.bmdp.rows[0][0].get(0), (1.0, 1.0));
    }

    #[test]
    fn empty_row_stays_empty() {
        let imc = Imc {
            n_states: 1,
            rows: vec![BoundedRow::new()],
            labels: vec![ls(&[])],
            initial: vec![],
        };
        let p = product_imc(&imc, &toggle()).unwrap();
        assert!(p.bmdp.rows.iter().all(|r| r[0].is_empty()));
    }

    #[test]
    fn induce_commutes_with_product() {
        let b = two_state_bmdp();
        let d = toggle();
        let pol = MemorylessPolicy { choice: vec![1, 0] };
        let left = product_imc(&induce_imc(&b, &pol).unwrap(), &d).unwrap();
        let prod = product(&b, &d).unwrap();
        let lifted = MemorylessPolicy {
            choice: (0..prod.n_states())
                .map(|q| pol.choice[prod.split(q).0])
                .collect(),
        };
        let right = induce_imc(&prod.bmdp, &lifted).unwrap();
        assert_eq!(
            left.bmdp
                .rows
                .iter()
                .map(|r| r[0].clone())
                .collect::<Vec<_>>(),
            right.rows
        );
        assert_eq!(left.bmdp.labels, right.labels);
        assert_eq!(left.bmdp.initial, right.initial);
    }

    #[test]
    fn dead_states_of_phi1() {
        let d = RabinAutomaton::parse(&data("phi1.dra.json")).unwrap();
        assert_eq!(d.dead_states(), [4].into());
    }

    proptest! {
        #[test]
        fn product_preserves_row_mass(
            bounds in proptest::collection::vec((0.0f64..0.5, 0.5f64..1.0), 3),
            labs in proptest::collection::vec(any::<bool>(), 3),
        ) {
            let labels: Vec<LabelSet> = labs.iter().map(|&a| if a { ls(&["A"]) } else { ls(&[]) }).collect();
            let row = BoundedRow::from_entries(bounds.iter().enumerate().map(|(t, &(lo, hi))| (t, lo / 3.0, hi)));
            let b = Bmdp {
                n_states: 3,
                actions: vec![vec![0]; 3],
                rows: vec![vec![row.clone()]; 3],
                labels,
                initial: vec![0],
            };
            let d = toggle();
            let p = product(&b, &d).unwrap();
            for q in 0..p.n_states() {
                let r = &p.bmdp.rows[q][0];
                prop_assert!((r.sum_lo() - row.sum_lo()).abs() < 1e-12);
                prop_assert!((r.sum_hi() - row.sum_hi()).abs() < 1e-12);
                prop_assert_eq!(p.rabin_flags[q], d.flags(p.split(q).1));
                for e in r.entries() {
                    let (l, s2) = p.split(e.to);
                    prop_assert_eq!(Some(s2), d.delta(p.split(q).1, &b.labels[l]));
                }
            }
        }
    }
}
