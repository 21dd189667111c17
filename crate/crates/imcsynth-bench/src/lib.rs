//! Fixtures shared by the benchmarks under `benches/`.

use imcsynth::{RabinAutomaton, SystemModel};

/// Bistable switch on an `n` by `n` grid.
pub fn bistable(n: usize) -> SystemModel {
    let mut s = SystemModel::from_json(include_str!("../../../data/bistable.json"))
        .expect("bundled system");
    s.grid = vec![n, n];
    s
}

pub fn phi1() -> RabinAutomaton {
    RabinAutomaton::parse(include_str!("../../../data/phi1.dra.json")).expect("bundled automaton")
}
