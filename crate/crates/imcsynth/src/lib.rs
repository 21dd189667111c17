//! Controller synthesis for stochastic systems over interval-valued abstractions.

pub mod abstraction;
pub mod automata;
pub mod components;
pub mod config;
pub mod error;
pub mod graph;
pub mod imc;
pub mod reachability;
pub mod synth_continuous;
pub mod synth_finite;
pub mod validation;

pub use abstraction::{build_bmdp, Partition, Rect, SystemModel};
pub use automata::{product, product_imc, ProductModel, RabinAutomaton, RabinPair};
pub use components::{ActionSets, ComponentKind, ComponentResult};
pub use config::{Pipeline, RunConfig};
pub use error::{Error, Result};
pub use imc::{
    complement_result, enumerate_corner_mcs, induce_imc, validate_bmdp, Bmdp, BoundedRow, Imc,
    IntervalResult, LabelSet, MarkovChain, MemorylessPolicy, PartialPolicy,
};
pub use reachability::{
    maximize_reach, mc_reachability, o_extreme_row, Bound, ReachOptions, ReachSolution,
};
pub use synth_continuous::{
    construct_components_cimc, enumerate_overlaps, optimize_reach_input, prune_inputs,
    select_inputs, synthesize_continuous, trigger_regions, ContinuousConfig, ContinuousResult,
    GridConfig, InputRegion, OverlapSet, Trigger, TriggerRegions,
};
pub use synth_finite::{
    synthesize_finite, FiniteConfig, IterationRecord, Objective, RefinementScores,
    SuboptimalityReport, SynthesisResult,
};
pub use validation::{
    sampled_soundness, simulate_closed_loop, write_verdicts_csv, SimulationOutcome, Verdict,
};
