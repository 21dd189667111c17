//! Strongly connected components and exact Markov chain solves.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{Error, Result};
use crate::imc::MarkovChain;

type Lu = nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>;

/// SCCs of the subgraph induced by `nodes`. Each component is sorted; components are
/// returned in reverse topological order (sinks first), as produced by Tarjan's algorithm.
pub fn sccs<I>(nodes: &[usize], mut succ: impl FnMut(usize) -> I) -> Vec<Vec<usize>>
where
    I: IntoIterator<Item = usize>,
{
    let mut local = std::collections::HashMap::with_capacity(nodes.len());
    let mut g: DiGraph<usize, ()> = DiGraph::with_capacity(nodes.len(), nodes.len() * 4);
    for &v in nodes {
        local.insert(v, g.add_node(v));
    }
    for &v in nodes {
        let a = local[&v];
        for w in succ(v) {
            if let Some(&b) = local.get(&w) {
                g.add_edge(a, b, ());
            }
        }
    }
    tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut c: Vec<usize> = c.into_iter().map(|i| g[i]).collect();
            c.sort_unstable();
            c
        })
        .collect()
}

/// SCC sorted by smallest member, for deterministic worklists.
pub fn sccs_sorted<I>(nodes: &[usize], succ: impl FnMut(usize) -> I) -> Vec<Vec<usize>>
where
    I: IntoIterator<Item = usize>,
{
    let mut v = sccs(nodes, succ);
    v.sort();
    v
}

/// Structure of a Markov chain: SCCs in topological order, bottom SCCs, and an LU
/// factorisation of I − Q restricted to each transient SCC.
pub struct ChainAnalysis<'a> {
    chain: &'a MarkovChain,
    /// SCCs in topological order (sources first).
    pub comps: Vec<Vec<usize>>,
    pub comp_of: Vec<usize>,
    pub bottom: Vec<bool>,
    pos: Vec<usize>,
    lu: Vec<Option<Lu>>,
    lu_t: Vec<Option<Lu>>,
    diag: Vec<f64>,
}

impl<'a> ChainAnalysis<'a> {
    pub fn new(chain: &'a MarkovChain) -> Result<Self> {
        let n = chain.n_states;
        let nodes: Vec<usize> = (0..n).collect();
        let mut comps = sccs(&nodes, |v| {
            chain.rows[v]
                .iter()
                .filter(|e| e.1 > 0.0)
                .map(|e| e.0)
                .collect::<Vec<_>>()
        });
        comps.reverse();
        let mut comp_of = vec![0; n];
        let mut pos = vec![0; n];
        for (c, m) in comps.iter().enumerate() {
            for (k, &v) in m.iter().enumerate() {
                comp_of[v] = c;
                pos[v] = k;
            }
        }
        let bottom: Vec<bool> = comps
            .iter()
            .enumerate()
            .map(|(c, m)| {
                m.iter().all(|&v| {
                    chain.rows[v]
                        .iter()
                        .all(|&(t, p)| p <= 0.0 || comp_of[t] == c)
                })
            })
            .collect();
        let mut lu = Vec::with_capacity(comps.len());
        let mut lu_t = Vec::with_capacity(comps.len());
        let mut diag = vec![1.0; n];
        for (c, m) in comps.iter().enumerate() {
            if bottom[c] {
                lu.push(None);
                lu_t.push(None);
                continue;
            }
            let k = m.len();
            let mut a = DMatrix::<f64>::identity(k, k);
            for (r, &v) in m.iter().enumerate() {
                for &(t, p) in &chain.rows[v] {
                    if comp_of[t] == c {
                        a[(r, pos[t])] -= p;
                    }
                }
            }
            lu_t.push(Some(a.transpose().lu()));
            let f = a.lu();
            // diagonal of the block inverse gives expected visits to v starting at v
            for (r, &v) in m.iter().enumerate() {
                let mut e = DVector::<f64>::zeros(k);
                e[r] = 1.0;
                let x = f.solve(&e).ok_or_else(|| {
                    Error::Singular(format!("transient block containing state {v}"))
                })?;
                diag[v] = x[r];
            }
            lu.push(Some(f));
        }
        Ok(ChainAnalysis {
            chain,
            comps,
            comp_of,
            bottom,
            pos,
            lu,
            lu_t,
            diag,
        })
    }

    pub fn bsccs(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.comps
            .iter()
            .zip(&self.bottom)
            .filter(|(_, &b)| b)
            .map(|(c, _)| c)
    }

    /// Probability of ever visiting each state when starting from `from` (1 at `from`).
    pub fn reach_from(&self, from: usize) -> Result<Vec<f64>> {
        let n = self.chain.n_states;
        let mut out = vec![0.0; n];
        let c0 = self.comp_of[from];
        if self.bottom[c0] {
            for &v in &self.comps[c0] {
                out[v] = 1.0;
            }
            return Ok(out);
        }
        // expected visit counts of transient states, SCC by SCC in topological order
        let mut inflow = vec![0.0; n];
        inflow[from] = 1.0;
        let mut visits = vec![0.0; n];
        let mut absorbed = vec![0.0; self.comps.len()];
        for c in c0..self.comps.len() {
            let m = &self.comps[c];
            if self.bottom[c] {
                continue;
            }
            if m.iter().all(|&v| inflow[v] == 0.0) {
                continue;
            }
            let b = DVector::from_iterator(m.len(), m.iter().map(|&v| inflow[v]));
            // visits satisfy v (I − Q_CC) = inflow, i.e. (I − Q_CC)^T vᵀ = inflowᵀ
            let x = self.lu_t[c]
                .as_ref()
                .expect("transient block")
                .solve(&b)
                .ok_or_else(|| Error::Singular(format!("block of state {}", m[0])))?;
            for (r, &v) in m.iter().enumerate() {
                visits[v] = x[r].max(0.0);
            }
            for &v in m {
                for &(t, p) in &self.chain.rows[v] {
                    let ct = self.comp_of[t];
                    if ct != c {
                        if self.bottom[ct] {
                            absorbed[ct] += visits[v] * p;
                        } else {
                            inflow[t] += visits[v] * p;
                        }
                    }
                }
            }
        }
        for c in 0..self.comps.len() {
            if self.bottom[c] {
                for &v in &self.comps[c] {
                    out[v] = absorbed[c].min(1.0);
                }
            } else {
                for &v in &self.comps[c] {
                    out[v] = (visits[v] / self.diag[v]).clamp(0.0, 1.0);
                }
            }
        }
        out[from] = 1.0;
        Ok(out)
    }

    /// Solves x = P x with x fixed on the bottom SCCs by `bottom_value`.
    pub fn absorption(&self, bottom_value: impl Fn(&[usize]) -> f64) -> Result<Vec<f64>> {
        let n = self.chain.n_states;
        let mut x = vec![0.0; n];
        for c in (0..self.comps.len()).rev() {
            let m = &self.comps[c];
            if self.bottom[c] {
                let val = bottom_value(m);
                for &v in m {
                    x[v] = val;
                }
                continue;
            }
            let b = DVector::from_iterator(
                m.len(),
                m.iter().map(|&v| {
                    self.chain.rows[v]
                        .iter()
                        .filter(|&&(t, _)| self.comp_of[t] != c)
                        .map(|&(t, p)| p * x[t])
                        .sum::<f64>()
                }),
            );
            let sol = self.lu[c]
                .as_ref()
                .expect("transient block")
                .solve(&b)
                .ok_or_else(|| Error::Singular(format!("block of state {}", m[0])))?;
            for (r, &v) in m.iter().enumerate() {
                x[v] = sol[r].clamp(0.0, 1.0);
            }
        }
        Ok(x)
    }

    pub fn position(&self, v: usize) -> usize {
        self.pos[v]
    }
}

/// States that can reach `targets` along edges given by `succ`.
pub fn backward_reachable(
    n: usize,
    targets: &BTreeSet<usize>,
    succ: impl Fn(usize) -> Vec<usize>,
) -> Vec<bool> {
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    for v in 0..n {
        for w in succ(v) {
            pred[w].push(v);
        }
    }
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = targets.iter().copied().collect();
    for &t in &stack {
        seen[t] = true;
    }
    while let Some(v) = stack.pop() {
        for &p in &pred[v] {
            if !seen[p] {
                seen[p] = true;
                stack.push(p);
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imc::LabelSet;

    fn chain(rows: Vec<Vec<(usize, f64)>>) -> MarkovChain {
        let n = rows.len();
        MarkovChain {
            n_states: n,
            rows,
            labels: vec![LabelSet::new(); n],
            initial: vec![0],
        }
    }

    #[test]
    fn scc_of_cycle_and_tail() {
        let succ = [vec![1], vec![0], vec![0]];
        let c = sccs_sorted(&[0, 1, 2], |v| succ[v].clone());
        assert_eq!(c, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn reach_one_step_law() {
        let m = chain(vec![
            vec![(1, 0.3), (2, 0.7)],
            vec![(1, 1.0)],
            vec![(2, 1.0)],
        ]);
        let a = ChainAnalysis::new(&m).unwrap();
        let r = a.reach_from(0).unwrap();
        assert!((r[1] - 0.3).abs() < 1e-12 && (r[2] - 0.7).abs() < 1e-12);
        assert_eq!(a.bsccs().count(), 2);
    }

    #[test]
    fn reach_from_inside_absorbing_class() {
        let m = chain(vec![vec![(1, 1.0)], vec![(1, 1.0)]]);
        let a = ChainAnalysis::new(&m).unwrap();
        assert_eq!(a.reach_from(1).unwrap(), vec![0.0, 1.0]);
        assert_eq!(a.reach_from(0).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn reach_transient_loop() {
        // 0 → {1: .5, 2: .5}; 1 → {0: .5, 3: .5}; 2, 3 absorbing
        let m = chain(vec![
            vec![(1, 0.5), (2, 0.5)],
            vec![(0, 0.5), (3, 0.5)],
            vec![(2, 1.0)],
            vec![(3, 1.0)],
        ]);
        let a = ChainAnalysis::new(&m).unwrap();
        let r = a.reach_from(0).unwrap();
        // reach 3: 0.25 / (1 − 0.25) = 1/3
        assert!((r[3] - 1.0 / 3.0).abs() < 1e-12);
        assert!((r[2] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r[1] - 0.5).abs() < 1e-12);
        let r1 = a.reach_from(1).unwrap();
        // from 1: return to 1 needs 0 then 1: .25; h(1,0) = .5
        assert!((r1[0] - 0.5).abs() < 1e-12);
        let x = a
            .absorption(|b| if b.contains(&3) { 1.0 } else { 0.0 })
            .unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-12 && (x[1] - 2.0 / 3.0).abs() < 1e-12);
    }
}
