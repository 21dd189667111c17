//! System description, reach-set over-approximation and interval transition bounds.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::{union_volume, Partition, Rect};
use super::noise::NoiseModel;
use crate::error::{Error, Result};
use crate::imc::{Bmdp, BoundedRow, LabelSet};

const SOUNDNESS_SAMPLES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachEntry {
    pub cell: Rect,
    pub reach: Rect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Dynamics {
    /// Two-gene toggle: x1 + (−a·x1 + x2)·dt, x2 + (x1²/(x1²+1) − b·x2)·dt.
    Bistable { a: f64, b: f64, dt: f64 },
    Affine {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
    /// Reach boxes given per region; a query cell gets the hull over the regions it meets.
    /// `map`, when given, evaluates points (and is what the table is checked against).
    TabulatedReach {
        entries: Vec<ReachEntry>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        map: Option<Box<Dynamics>>,
    },
}

impl Dynamics {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Dynamics::Bistable { a, b, dt } => {
                let (x1, x2) = (x[0], x[1]);
                vec![
                    x1 + (-a * x1 + x2) * dt,
                    x2 + (x1 * x1 / (x1 * x1 + 1.0) - b * x2) * dt,
                ]
            }
            Dynamics::Affine { matrix, offset } => matrix
                .iter()
                .zip(offset)
                .map(|(row, o)| o + row.iter().zip(x).map(|(m, v)| m * v).sum::<f64>())
                .collect(),
            Dynamics::TabulatedReach { map: Some(m), .. } => m.eval(x),
            Dynamics::TabulatedReach { entries, map: None } => {
                let hit = entries
                    .iter()
                    .find(|e| e.cell.contains(x))
                    .unwrap_or(&entries[0]);
                hit.reach.center()
            }
        }
    }

    pub fn reach(&self, cell: &Rect) -> Result<Rect> {
        match self {
            Dynamics::Bistable { .. } => {
                // each component is monotone in each argument on either side of x1 = 0
                let mut pts = cell.corners();
                if cell.lo[0] < 0.0 && cell.hi[0] > 0.0 {
                    for x2 in [cell.lo[1], cell.hi[1]] {
                        pts.push(vec![0.0, x2]);
                    }
                }
                let imgs: Vec<Vec<f64>> = pts.iter().map(|p| self.eval(p)).collect();
                let n = cell.dim();
                Ok(Rect {
                    lo: (0..n)
                        .map(|k| imgs.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min))
                        .collect(),
                    hi: (0..n)
                        .map(|k| imgs.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max))
                        .collect(),
                })
            }
            Dynamics::Affine { matrix, offset } => {
                let mut lo = offset.clone();
                let mut hi = offset.clone();
                for (i, row) in matrix.iter().enumerate() {
                    for (k, &m) in row.iter().enumerate() {
                        let (p, q) = (m * cell.lo[k], m * cell.hi[k]);
                        lo[i] += p.min(q);
                        hi[i] += p.max(q);
                    }
                }
                Ok(Rect { lo, hi })
            }
            Dynamics::TabulatedReach { entries, .. } => {
                let degenerate = cell.volume() <= 0.0;
                entries
                    .iter()
                    .filter(|e| {
                        if degenerate {
                            e.cell.intersects(cell)
                        } else {
                            e.cell.overlap_volume(cell) > 0.0
                        }
                    })
                    .map(|e| e.reach.clone())
                    .reduce(|a, b| a.hull(&b))
                    .ok_or_else(|| {
                        Error::Config(format!("no tabulated reach entry covers {cell:?}"))
                    })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    pub domain: Rect,
    pub dynamics: Dynamics,
    pub noise: NoiseModel,
    /// Finite input set, one offset vector per mode.
    #[serde(default)]
    pub modes: Vec<Vec<f64>>,
    /// Continuous input set.
    #[serde(default)]
    pub input_box: Option<Rect>,
    #[serde(default)]
    pub labels: BTreeMap<String, Vec<Rect>>,
    /// Initial grid resolution per axis.
    #[serde(default)]
    pub grid: Vec<usize>,
}

impl SystemModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: SystemModel = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let check = |got: usize| {
            if got == n {
                Ok(())
            } else {
                Err(Error::Dimension { expected: n, got })
            }
        };
        check(self.domain.hi.len())?;
        if !self.domain.is_valid() || self.domain.volume() <= 0.0 {
            return Err(Error::DegenerateRect);
        }
        check(self.noise.dim())?;
        self.noise.validate()?;
        for m in &self.modes {
            check(m.len())?;
        }
        if let Some(u) = &self.input_box {
            check(u.dim())?;
            if !u.is_valid() {
                return Err(Error::EmptyInputRegion);
            }
        }
        for r in self.labels.values().flatten() {
            check(r.dim())?;
        }
        if !self.grid.is_empty() {
            check(self.grid.len())?;
        }
        match &self.dynamics {
            Dynamics::Bistable { .. } => check(2)?,
            Dynamics::Affine { matrix, offset } => {
                check(offset.len())?;
                for row in matrix {
                    check(row.len())?;
                }
                check(matrix.len())?;
            }
            Dynamics::TabulatedReach { entries, .. } => {
                if entries.is_empty() {
                    return Err(Error::Config(
                        "tabulated reach needs at least one entry".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn initial_partition(&self) -> Partition {
        let counts = if self.grid.is_empty() {
            vec![1; self.dim()]
        } else {
            self.grid.clone()
        };
        Partition::grid(&self.domain, &counts)
    }

    /// One step of the closed system, clamped into the domain.
    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
        let f = self.dynamics.eval(x);
        let y: Vec<f64> = (0..x.len()).map(|k| f[k] + u[k] + w[k]).collect();
        self.domain.clamp_point(&y)
    }

    pub fn labels_at(&self, x: &[f64]) -> LabelSet {
        self.labels
            .iter()
            .filter(|(_, rs)| rs.iter().any(|r| r.contains(x)))
            .map(|(p, _)| p.clone())
            .collect()
    }

    /// Labels per cell; fails on the first cell that straddles a region boundary.
    pub fn cell_labels(&self, partition: &Partition) -> Result<Vec<LabelSet>> {
        partition
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let vol = c.volume();
                let mut out = LabelSet::new();
                for (p, regions) in &self.labels {
                    let parts: Vec<Rect> =
                        regions.iter().filter_map(|r| r.intersection(c)).collect();
                    let inside = union_volume(&parts);
                    let tol = 1e-9 * vol.max(1e-300);
                    if inside >= vol - tol {
                        out.insert(p.clone());
                    } else if inside > tol {
                        return Err(Error::Labeling {
                            cell: i,
                            prop: p.clone(),
                        });
                    }
                }
                Ok(out)
            })
            .collect()
    }

    /// Reach box of `cell` under the deterministic map, checked against sampled images.
    pub fn reach_overapprox(&self, id: usize, cell: &Rect) -> Result<Rect> {
        let r = self.dynamics.reach(cell)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ id as u64);
        for _ in 0..SOUNDNESS_SAMPLES {
            let x: Vec<f64> = (0..cell.dim())
                .map(|k| rng.gen_range(cell.lo[k]..=cell.hi[k]))
                .collect();
            let y = self.dynamics.eval(&x);
            let ok = (0..y.len()).all(|k| {
                let tol = 1e-9 * (1.0 + y[k].abs());
                y[k] >= r.lo[k] - tol && y[k] <= r.hi[k] + tol
            });
            if !ok {
                return Err(Error::OracleUnsound { cell: id, point: x });
            }
        }
        Ok(r)
    }
}

pub fn shift_reach(r: &Rect, u: &[f64]) -> Result<Rect> {
    if u.len() != r.dim() {
        return Err(Error::Dimension {
            expected: r.dim(),
            got: u.len(),
        });
    }
    Ok(r.translate(u))
}

/// Sides lying on the domain boundary are pushed to ±∞, so clamped mass is credited to
/// the boundary cells.
pub fn extend_to_boundary(cell: &Rect, domain: &Rect) -> Rect {
    let mut out = cell.clone();
    for k in 0..cell.dim() {
        let tol = 1e-12 * (1.0 + domain.width(k));
        if (cell.lo[k] - domain.lo[k]).abs() <= tol {
            out.lo[k] = f64::NEG_INFINITY;
        }
        if (cell.hi[k] - domain.hi[k]).abs() <= tol {
            out.hi[k] = f64::INFINITY;
        }
    }
    out
}

/// Interval bounds on the probability that `s + w` lands in `target` for some `s ∈ reach`.
pub fn transition_bounds(reach: &Rect, target: &Rect, noise: &NoiseModel) -> (f64, f64) {
    let mut lo = 1.0;
    let mut hi = 1.0;
    for (k, w) in noise.axes.iter().enumerate() {
        let (a, b) = (target.lo[k], target.hi[k]);
        if a == f64::NEG_INFINITY && b == f64::INFINITY {
            continue;
        }
        let (rl, rh) = (reach.lo[k], reach.hi[k]);
        let peak = 0.5 * (a + b) - w.mode();
        let s_max = peak.clamp(rl, rh);
        let s_min = if s_max > 0.5 * (rl + rh) { rl } else { rh };
        let mass = |s: f64| (w.cdf(b - s) - w.cdf(a - s)).clamp(0.0, 1.0);
        hi *= mass(s_max);
        lo *= mass(s_min);
    }
    (lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0))
}

#[derive(Clone, Debug)]
pub struct Abstraction {
    pub partition: Partition,
    pub bmdp: Bmdp,
    /// Action id → input offset.
    pub modes: Vec<Vec<f64>>,
    /// Unshifted reach box per cell.
    pub reach: Vec<Rect>,
}

/// One interval row from a shifted reach box.
pub fn interval_row(
    system: &SystemModel,
    partition: &Partition,
    index: &super::geometry::AxisIndex,
    shifted: &Rect,
) -> BoundedRow {
    let support = Rect::new(system.noise.lo(), system.noise.hi());
    let query = shifted.expand(&support).clamp_into(&partition.domain);
    let mut row = BoundedRow::new();
    for t in index.query(&partition.cells, &query) {
        let target = extend_to_boundary(&partition.cells[t], &partition.domain);
        let (lo, hi) = transition_bounds(shifted, &target, &system.noise);
        if hi > 0.0 {
            row.insert(t, lo, hi);
        }
    }
    row
}

pub fn reach_boxes(system: &SystemModel, partition: &Partition) -> Result<Vec<Rect>> {
    partition
        .cells
        .par_iter()
        .enumerate()
        .map(|(i, c)| system.reach_overapprox(i, c))
        .collect()
}

/// BMDP over the cells of `partition` with one action per mode.
pub fn build_bmdp(
    partition: &Partition,
    system: &SystemModel,
    modes: &[Vec<f64>],
) -> Result<Abstraction> {
    if modes.is_empty() {
        return Err(Error::Config("at least one mode is required".into()));
    }
    let labels = system.cell_labels(partition)?;
    let reach = reach_boxes(system, partition)?;
    let index = partition.index();
    let rows: Vec<Vec<BoundedRow>> = reach
        .par_iter()
        .map(|r| {
            modes
                .iter()
                .map(|u| shift_reach(r, u).map(|s| interval_row(system, partition, &index, &s)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let n = partition.len();
    let bmdp = Bmdp {
        n_states: n,
        actions: vec![(0..modes.len()).collect(); n],
        rows,
        labels,
        initial: (0..n).collect(),
    };
    Ok(Abstraction {
        partition: partition.clone(),
        bmdp,
        modes: modes.to_vec(),
        reach,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::noise::AxisNoise;
    use crate::imc::validate_bmdp;
    use proptest::prelude::*;

    fn r(lo: &[f64], hi: &[f64]) -> Rect {
        Rect::new(lo.to_vec(), hi.to_vec())
    }

    pub(crate) fn bistable() -> SystemModel {
        let w = AxisNoise::TruncatedGaussian {
            mean: -0.3,
            variance: 0.1,
            support: [-0.4, -0.2],
        };
        SystemModel {
            domain: r(&[0.0, 0.0], &[4.0, 4.0]),
            dynamics: Dynamics::Bistable {
                a: 1.3,
                b: 0.25,
                dt: 0.05,
            },
            noise: NoiseModel {
                axes: vec![w.clone(), w],
            },
            modes: vec![
                vec![0.0, 0.0],
                vec![0.05, 0.0],
                vec![-0.05, 0.0],
                vec![0.0, 0.05],
                vec![0.0, -0.05],
            ],
            input_box: Some(r(&[-0.05, -0.05], &[0.05, 0.05])),
            labels: [("A".to_string(), vec![r(&[0.0, 1.0], &[4.0, 2.0])])]
                .into_iter()
                .collect(),
            grid: vec![16, 16],
        }
    }

    #[test]
    fn shift_examples() {
        assert_eq!(
            shift_reach(&r(&[0.0, 0.0], &[1.0, 1.0]), &[0.05, -0.05]).unwrap(),
            r(&[0.05, -0.05], &[1.05, 0.95])
        );
        let x = r(&[0.3, 0.7], &[1.0, 2.0]);
        assert_eq!(shift_reach(&x, &[0.0, 0.0]).unwrap(), x);
        assert!(matches!(
            shift_reach(&x, &[0.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn fact4_uniform_example() {
        let noise = NoiseModel {
            axes: vec![AxisNoise::Uniform {
                support: [-0.5, 0.5],
            }],
        };
        let (lo, hi) = transition_bounds(&r(&[0.0], &[1.0]), &r(&[1.0], &[2.0]), &noise);
        assert!(lo.abs() < 1e-15);
        assert!((hi - 0.5).abs() < 1e-15);
        let (lo, hi) = transition_bounds(&r(&[0.0], &[1.0]), &r(&[5.0], &[6.0]), &noise);
        assert_eq!((lo, hi), (0.0, 0.0));
        // target centred on the reach midpoint
        let (lo, hi) = transition_bounds(&r(&[0.0], &[0.4]), &r(&[-0.2], &[0.6]), &noise);
        assert!((hi - 0.8).abs() < 1e-12 && (lo - 0.7).abs() < 1e-12);
    }

    #[test]
    fn affine_and_identity_reach() {
        let d = Dynamics::Affine {
            matrix: vec![vec![0.5]],
            offset: vec![0.0],
        };
        assert_eq!(d.reach(&r(&[0.0], &[2.0])).unwrap(), r(&[0.0], &[1.0]));
        let id = Dynamics::Affine {
            matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            offset: vec![0.0, 0.0],
        };
        let c = r(&[0.5, 1.0], &[1.5, 2.0]);
        assert_eq!(id.reach(&c).unwrap(), c);
        let neg = Dynamics::Affine {
            matrix: vec![vec![-1.0]],
            offset: vec![1.0],
        };
        assert_eq!(neg.reach(&r(&[0.0], &[2.0])).unwrap(), r(&[-1.0], &[1.0]));
    }

    #[test]
    fn bistable_reach_is_sampled_sound() {
        let s = bistable();
        let cell = r(&[0.0, 0.0], &[1.0, 1.0]);
        let b = s.reach_overapprox(0, &cell).unwrap();
        // monotone map: corners give the box exactly
        assert_eq!(b.lo, s.dynamics.eval(&[0.0, 0.0]));
        assert_eq!(b.hi, s.dynamics.eval(&[1.0, 1.0]));
    }

    #[test]
    fn tabulated_reach_is_checked_against_its_map() {
        let mut s = bistable();
        let entries = vec![
            ReachEntry {
                cell: r(&[0.0, 0.0], &[2.0, 4.0]),
                reach: r(&[0.0, 0.0], &[2.0, 2.0]),
            },
            ReachEntry {
                cell: r(&[2.0, 0.0], &[4.0, 4.0]),
                reach: r(&[1.0, 0.0], &[2.0, 2.0]),
            },
        ];
        s.dynamics = Dynamics::TabulatedReach {
            entries: entries.clone(),
            map: None,
        };
        assert_eq!(
            s.dynamics.reach(&r(&[1.0, 0.0], &[3.0, 1.0])).unwrap(),
            r(&[0.0, 0.0], &[2.0, 2.0])
        );
        assert_eq!(s.dynamics.eval(&[3.0, 1.0]), vec![1.5, 1.0]);
        assert!(s.reach_overapprox(0, &r(&[0.0, 0.0], &[1.0, 1.0])).is_ok());
        let half = Dynamics::Affine {
            matrix: vec![vec![0.5, 0.0], vec![0.0, 0.5]],
            offset: vec![0.0, 0.0],
        };
        s.dynamics = Dynamics::TabulatedReach {
            entries: entries.clone(),
            map: Some(Box::new(half)),
        };
        assert!(s.reach_overapprox(0, &r(&[0.0, 0.0], &[2.0, 4.0])).is_ok());
        let wide = Dynamics::Affine {
            matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            offset: vec![0.0, 0.0],
        };
        s.dynamics = Dynamics::TabulatedReach {
            entries,
            map: Some(Box::new(wide)),
        };
        assert!(matches!(
            s.reach_overapprox(3, &r(&[0.0, 2.0], &[2.0, 4.0])),
            Err(Error::OracleUnsound { cell: 3, .. })
        ));
    }

    #[test]
    fn bistable_two_by_two() {
        let mut s = bistable();
        s.labels.clear();
        let p = Partition::grid(&s.domain, &[2, 2]);
        let a = build_bmdp(&p, &s, &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(a.bmdp.n_states, 4);
        assert!(a.bmdp.actions.iter().all(|x| x.len() == 1));
        assert!(validate_bmdp(&a.bmdp).is_ok());
        let a5 = build_bmdp(&p, &s, &s.modes).unwrap();
        assert!(a5.bmdp.actions.iter().all(|x| x.len() == 5));
        assert!(validate_bmdp(&a5.bmdp).is_ok());
    }

    #[test]
    fn one_cell_is_a_self_loop() {
        let mut s = bistable();
        s.labels.clear();
        let p = Partition::grid(&s.domain, &[1, 1]);
        let a = build_bmdp(&p, &s, &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(a.bmdp.rows[0][0].get(0), (1.0, 1.0));
    }

    #[test]
    fn labeling_conformance() {
        let mut s = bistable();
        let p = Partition::grid(&s.domain, &[16, 16]);
        let l = s.cell_labels(&p).unwrap();
        assert_eq!(l.iter().filter(|x| x.contains("A")).count(), 64);
        s.labels
            .insert("B".into(), vec![r(&[0.1, 0.0], &[0.2, 0.1])]);
        assert!(matches!(
            s.cell_labels(&p),
            Err(Error::Labeling { cell: 0, .. })
        ));
    }

    #[test]
    fn config_round_trip() {
        let s = bistable();
        let text = serde_json::to_string_pretty(&s).unwrap();
        assert_eq!(SystemModel::from_json(&text).unwrap(), s);
        let shipped = SystemModel::from_file(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../data/bistable.json"
        ))
        .unwrap();
        assert_eq!(shipped, s);
    }

    #[test]
    fn rows_validate_on_16x16() {
        let s = bistable();
        let a = build_bmdp(&s.initial_partition(), &s, &s.modes).unwrap();
        let rep = validate_bmdp(&a.bmdp);
        assert!(rep.is_ok(), "{:?}", rep.violations.first());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn zero_bounds_survive_refinement(splits in proptest::collection::vec(0usize..64, 1..8), mode in 0usize..5) {
            let s = bistable();
            let p = Partition::grid(&s.domain, &[8, 8]);
            let coarse = build_bmdp(&p, &s, &s.modes).unwrap();
            let mut uniq: Vec<usize> = splits.clone();
            uniq.sort_unstable();
            uniq.dedup();
            let (fine_p, parent) = p.refine(&uniq).unwrap();
            let fine = build_bmdp(&fine_p, &s, &s.modes).unwrap();
            for (c, &pc) in parent.iter().enumerate() {
                for e in fine.bmdp.rows[c][mode].entries() {
                    let (_, hi) = coarse.bmdp.rows[pc][mode].get(parent[e.to]);
                    prop_assert!(hi > 0.0, "child edge {}→{} under a zero parent bound", c, e.to);
                }
            }
        }
    }
}
