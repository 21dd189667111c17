//! Monte Carlo checks of synthesized bounds by closed-loop simulation.

use std::collections::BTreeSet;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::abstraction::{interval_row, shift_reach, Partition, SystemModel};
use crate::automata::RabinAutomaton;
use crate::error::{Error, Result};
use crate::synth_finite::SynthesisResult;

/// DRA states after which the outcome of the run is settled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Monitor {
    /// No accepting continuation exists.
    pub dead: BTreeSet<usize>,
    /// Every continuation is accepting.
    pub sure: BTreeSet<usize>,
}

impl Monitor {
    pub fn new(dra: &RabinAutomaton) -> Self {
        let succ = |s: usize| -> BTreeSet<usize> {
            dra.alphabet
                .iter()
                .filter_map(|l| dra.delta(s, l))
                .collect()
        };
        let closure = |s: usize| {
            let mut seen = BTreeSet::from([s]);
            let mut stack = vec![s];
            while let Some(x) = stack.pop() {
                for t in succ(x) {
                    if seen.insert(t) {
                        stack.push(t);
                    }
                }
            }
            seen
        };
        let sure = (0..dra.n_states)
            .filter(|&s| {
                let c = closure(s);
                dra.pairs
                    .iter()
                    .any(|p| c.iter().all(|t| p.f.contains(t) && !p.e.contains(t)))
            })
            .collect();
        Monitor {
            dead: dra.dead_states(),
            sure,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub cell: usize,
    /// Product state the runs start in.
    pub state: usize,
    pub runs: usize,
    pub horizon: usize,
    /// Runs that entered a dead DRA state within the horizon.
    pub violations: usize,
    /// Runs that entered a state whose every continuation is accepting.
    pub settled: usize,
    /// Fraction of runs without a violation.
    pub frequency: f64,
    /// Two-sided 99% Wilson interval for `frequency`.
    pub interval: (f64, f64),
    /// Fraction of settled runs.
    pub settled_frequency: f64,
    pub p_lo: f64,
    pub p_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutcome {
    pub seed: u64,
    pub cells: Vec<CellOutcome>,
}

impl SimulationOutcome {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "cell_id",
            "state",
            "runs",
            "horizon",
            "violations",
            "settled",
            "frequency",
            "ci_lo",
            "ci_hi",
            "p_min",
            "p_max",
        ])?;
        for c in &self.cells {
            out.write_record([
                c.cell.to_string(),
                c.state.to_string(),
                c.runs.to_string(),
                c.horizon.to_string(),
                c.violations.to_string(),
                c.settled.to_string(),
                c.frequency.to_string(),
                c.interval.0.to_string(),
                c.interval.1.to_string(),
                c.p_lo.to_string(),
                c.p_hi.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Wilson score interval for `k` successes out of `n` at two-sided level `1 - alpha`.
pub fn wilson_interval(k: usize, n: usize, alpha: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - alpha / 2.0);
    let n = n as f64;
    let p = k as f64 / n;
    let d = 1.0 + z * z / n;
    let c = (p + z * z / (2.0 * n)) / d;
    let h = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / d;
    ((c - h).max(0.0).min(p), (c + h).min(1.0).max(p))
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of replicate `r` on `cell`, independent of scheduling.
pub fn replicate_seed(seed: u64, cell: usize, r: usize) -> u64 {
    splitmix(splitmix(seed ^ splitmix(cell as u64)) ^ r as u64)
}

/// Simulates `runs` closed-loop trajectories of `horizon` steps from uniform initial
/// points in each listed cell, with the automaton as a runtime monitor.
pub fn simulate_closed_loop(
    system: &SystemModel,
    result: &SynthesisResult,
    dra: &RabinAutomaton,
    cells: &[usize],
    horizon: usize,
    runs: usize,
    seed: u64,
) -> Result<SimulationOutcome> {
    if horizon == 0 || runs == 0 {
        return Err(Error::Config("horizon and runs must be positive".into()));
    }
    let partition = &result.partition;
    let index = partition.index();
    let monitor = Monitor::new(dra);
    let step_dra = |s: usize, x: &[f64]| -> Result<usize> {
        let l = system.labels_at(x);
        dra.delta(s, &l)
            .ok_or_else(|| Error::AlphabetMismatch(l.into_iter().collect()))
    };
    let outcomes = cells
        .iter()
        .map(|&cell| -> Result<CellOutcome> {
            let rect = partition
                .cells
                .get(cell)
                .ok_or_else(|| Error::Config(format!("cell {cell} out of range")))?;
            let tallies: Vec<(bool, bool)> = (0..runs)
                .into_par_iter()
                .map(|r| -> Result<(bool, bool)> {
                    let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(seed, cell, r));
                    let mut x: Vec<f64> = (0..rect.dim())
                        .map(|k| rect.lo[k] + rng.gen::<f64>() * rect.width(k))
                        .collect();
                    let mut s = step_dra(dra.s0, &x)?;
                    for _ in 0..horizon {
                        if monitor.dead.contains(&s) {
                            return Ok((true, false));
                        }
                        if monitor.sure.contains(&s) {
                            return Ok((false, true));
                        }
                        let j = index.locate(&partition.cells, &x).ok_or_else(|| {
                            Error::Config(format!("state {x:?} outside the partition"))
                        })?;
                        let u = result.input(j, s)?;
                        let w = system.noise.sample(&mut rng);
                        x = system.step(&x, u, &w);
                        s = step_dra(s, &x)?;
                    }
                    Ok((monitor.dead.contains(&s), monitor.sure.contains(&s)))
                })
                .collect::<Result<_>>()?;
            let violations = tallies.iter().filter(|t| t.0).count();
            let settled = tallies.iter().filter(|t| t.1).count();
            let ok = runs - violations;
            let q = result.initial[cell];
            let (p_lo, p_hi) = result.bounds.bounds[q];
            Ok(CellOutcome {
                cell,
                state: q,
                runs,
                horizon,
                violations,
                settled,
                frequency: ok as f64 / runs as f64,
                interval: wilson_interval(ok, runs, 0.01),
                settled_frequency: settled as f64 / runs as f64,
                p_lo,
                p_hi,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SimulationOutcome {
        seed,
        cells: outcomes,
    })
}

/// Empirical transition frequency against one interval entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoundnessCheck {
    pub cell: usize,
    pub input: Vec<f64>,
    pub target: usize,
    pub lo: f64,
    pub hi: f64,
    pub frequency: f64,
}

impl SoundnessCheck {
    /// Distance of the frequency outside `[lo, hi]`, zero inside.
    pub fn excess(&self) -> f64 {
        (self.lo - self.frequency)
            .max(self.frequency - self.hi)
            .max(0.0)
    }
}

/// Draws `samples` (cell, input) pairs and compares `draws` simulated successors,
/// with x uniform in the cell, against every entry of the interval row.
pub fn sampled_soundness(
    system: &SystemModel,
    partition: &Partition,
    inputs: &[Vec<f64>],
    samples: usize,
    draws: usize,
    seed: u64,
) -> Result<Vec<SoundnessCheck>> {
    if inputs.is_empty() || partition.is_empty() || draws == 0 {
        return Err(Error::Config(
            "soundness check needs cells, inputs and draws".into(),
        ));
    }
    let index = partition.index();
    let per_sample = (0..samples)
        .into_par_iter()
        .map(|k| -> Result<Vec<SoundnessCheck>> {
            let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(seed, usize::MAX, k));
            let j = rng.gen_range(0..partition.len());
            let u = &inputs[rng.gen_range(0..inputs.len())];
            let cell = &partition.cells[j];
            let reach = system.reach_overapprox(j, cell)?;
            let row = interval_row(system, partition, &index, &shift_reach(&reach, u)?);
            let mut hits = vec![0usize; partition.len()];
            for _ in 0..draws {
                let x: Vec<f64> = (0..cell.dim())
                    .map(|d| cell.lo[d] + rng.gen::<f64>() * cell.width(d))
                    .collect();
                let w = system.noise.sample(&mut rng);
                if let Some(t) = index.locate(&partition.cells, &system.step(&x, u, &w)) {
                    hits[t] += 1;
                }
            }
            let mut targets: BTreeSet<usize> = row.support().collect();
            targets.extend(hits.iter().enumerate().filter(|h| *h.1 > 0).map(|h| h.0));
            Ok(targets
                .into_iter()
                .map(|t| {
                    let (lo, hi) = row.get(t);
                    SoundnessCheck {
                        cell: j,
                        input: u.clone(),
                        target: t,
                        lo,
                        hi,
                        frequency: hits[t] as f64 / draws as f64,
                    }
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_sample.into_iter().flatten().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// Lower bound above the threshold.
    Green,
    /// Upper bound below the threshold.
    Red,
    Yellow,
}

pub fn verdict(lo: f64, hi: f64, threshold: f64) -> Verdict {
    if lo > threshold {
        Verdict::Green
    } else if hi < threshold {
        Verdict::Red
    } else {
        Verdict::Yellow
    }
}

/// One row per cell: box corners, bounds at the initial product state and verdict.
pub fn write_verdicts_csv<W: Write>(result: &SynthesisResult, threshold: f64, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let dim = result.partition.domain.dim();
    let mut header = vec!["cell_id".to_string()];
    header.extend((0..dim).map(|k| format!("lo_{k}")));
    header.extend((0..dim).map(|k| format!("hi_{k}")));
    header.extend(["p_min", "p_max", "verdict"].map(String::from));
    out.write_record(&header)?;
    for (j, c) in result.partition.cells.iter().enumerate() {
        let (lo, hi) = result.bounds.bounds[result.initial[j]];
        let v = match verdict(lo, hi, threshold) {
            Verdict::Green => "green",
            Verdict::Red => "red",
            Verdict::Yellow => "yellow",
        };
        let mut rec = vec![j.to_string()];
        rec.extend(c.lo.iter().chain(&c.hi).map(|x| x.to_string()));
        rec.extend([lo.to_string(), hi.to_string(), v.to_string()]);
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{AxisNoise, Dynamics, NoiseModel, Rect};
    use crate::automata::RabinPair;
    use crate::imc::LabelSet;
    use crate::synth_finite::{synthesize_finite, FiniteConfig};

    fn r(lo: &[f64], hi: &[f64]) -> Rect {
        Rect::new(lo.to_vec(), hi.to_vec())
    }

    fn eventually_b() -> RabinAutomaton {
        let b: LabelSet = ["B".to_string()].into();
        let none = LabelSet::new();
        let pairs = vec![RabinPair {
            e: BTreeSet::new(),
            f: [1].into(),
        }];
        RabinAutomaton::new(
            2,
            0,
            pairs,
            [
                (0, b.clone(), 1),
                (0, none.clone(), 0),
                (1, b, 1),
                (1, none, 1),
            ],
        )
        .unwrap()
    }

    /// Unstable fixed point at 1: runs drift to 0 or to B near 2.
    fn splitter() -> SystemModel {
        SystemModel {
            domain: r(&[0.0], &[2.0]),
            dynamics: Dynamics::Affine {
                matrix: vec![vec![2.0]],
                offset: vec![-1.0],
            },
            noise: NoiseModel {
                axes: vec![AxisNoise::Uniform {
                    support: [-0.1, 0.1],
                }],
            },
            modes: vec![vec![0.0], vec![0.05], vec![-0.05]],
            input_box: None,
            labels: [("B".to_string(), vec![r(&[1.8], &[2.0])])]
                .into_iter()
                .collect(),
            grid: vec![10],
        }
    }

    #[test]
    fn wilson_interval_contains_estimate() {
        let (lo, hi) = wilson_interval(50, 100, 0.01);
        assert!(lo < 0.5 && hi > 0.5);
        assert_eq!(wilson_interval(100, 100, 0.01).1, 1.0);
        let (lo, hi) = wilson_interval(0, 10, 0.01);
        assert!(lo == 0.0 && hi > 0.0);
    }

    #[test]
    fn monitor_states() {
        let m = Monitor::new(&eventually_b());
        assert_eq!(m.sure, [1].into());
        assert!(m.dead.is_empty());
        let phi1 = RabinAutomaton::parse(include_str!("../../../data/phi1.dra.json")).unwrap();
        let m = Monitor::new(&phi1);
        assert_eq!(m.dead, [4].into());
        assert!(m.sure.is_empty());
    }

    #[test]
    fn absorbing_accepting_loop_never_violates() {
        // identity map inside A; every step stays labelled
        let sys = SystemModel {
            domain: r(&[0.0], &[1.0]),
            dynamics: Dynamics::Affine {
                matrix: vec![vec![1.0]],
                offset: vec![0.0],
            },
            noise: NoiseModel {
                axes: vec![AxisNoise::Uniform {
                    support: [-0.01, 0.01],
                }],
            },
            modes: vec![vec![0.0]],
            input_box: None,
            labels: [("A".to_string(), vec![r(&[0.0], &[1.0])])]
                .into_iter()
                .collect(),
            grid: vec![2],
        };
        let phi1 = RabinAutomaton::parse(include_str!("../../../data/phi1.dra.json")).unwrap();
        let res = synthesize_finite(
            &sys,
            &phi1,
            &FiniteConfig {
                eps_thr: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        let out = simulate_closed_loop(&sys, &res, &phi1, &[0, 1], 50, 200, 7).unwrap();
        for c in &out.cells {
            assert_eq!(c.frequency, 1.0);
        }
    }

    #[test]
    fn reach_frequency_within_bounds() {
        let sys = splitter();
        let dra = eventually_b();
        let res = synthesize_finite(
            &sys,
            &dra,
            &FiniteConfig {
                eps_thr: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        let cells: Vec<usize> = (0..10).collect();
        let out = simulate_closed_loop(&sys, &res, &dra, &cells, 60, 2000, 11).unwrap();
        let mut interior = 0;
        for c in &out.cells {
            assert!(c.settled_frequency <= c.p_hi + 0.02, "{c:?}");
            assert!(c.settled_frequency >= c.p_lo - 0.02, "{c:?}");
            if c.p_lo < c.p_hi && c.settled_frequency > 0.02 && c.settled_frequency < 0.98 {
                interior += 1;
            }
        }
        assert!(interior > 0);
    }

    #[test]
    fn simulation_is_reproducible() {
        let sys = splitter();
        let dra = eventually_b();
        let res = synthesize_finite(
            &sys,
            &dra,
            &FiniteConfig {
                eps_thr: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        let a = simulate_closed_loop(&sys, &res, &dra, &[4, 5], 30, 300, 3).unwrap();
        let b = simulate_closed_loop(&sys, &res, &dra, &[4, 5], 30, 300, 3).unwrap();
        assert_eq!(a, b);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn missing_policy_entry_is_named() {
        let sys = splitter();
        let dra = eventually_b();
        let mut res = synthesize_finite(
            &sys,
            &dra,
            &FiniteConfig {
                eps_thr: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        res.policy.truncate(4);
        let err = simulate_closed_loop(&sys, &res, &dra, &[5], 10, 10, 1).unwrap_err();
        assert!(
            matches!(err, Error::IncompletePolicy { cell: 5, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn sampled_frequencies_sit_inside_rows() {
        let sys = splitter();
        let checks =
            sampled_soundness(&sys, &sys.initial_partition(), &sys.modes, 8, 20_000, 5).unwrap();
        assert!(!checks.is_empty());
        for c in &checks {
            assert!(c.excess() <= 0.01, "{c:?}");
        }
    }

    #[test]
    fn verdict_colours() {
        assert_eq!(verdict(0.85, 0.9, 0.8), Verdict::Green);
        assert_eq!(verdict(0.1, 0.7, 0.8), Verdict::Red);
        assert_eq!(verdict(0.5, 0.9, 0.8), Verdict::Yellow);
    }
}
