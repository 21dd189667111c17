//! Axis-aligned boxes and rectangular partitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Rect {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        debug_assert_eq!(lo.len(), hi.len());
        Rect { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn point(x: &[f64]) -> Self {
        Rect {
            lo: x.to_vec(),
            hi: x.to_vec(),
        }
    }

    pub fn width(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }

    pub fn mid(&self, k: usize) -> f64 {
        0.5 * (self.lo[k] + self.hi[k])
    }

    pub fn center(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.mid(k)).collect()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.width(k).max(0.0)).product()
    }

    pub fn is_valid(&self) -> bool {
        self.lo.iter().zip(&self.hi).all(|(a, b)| a <= b)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(k, &v)| self.lo[k] <= v && v <= self.hi[k])
    }

    pub fn contains_rect(&self, r: &Rect, tol: f64) -> bool {
        (0..self.dim()).all(|k| r.lo[k] >= self.lo[k] - tol && r.hi[k] <= self.hi[k] + tol)
    }

    /// Closed intersection test.
    pub fn intersects(&self, r: &Rect) -> bool {
        (0..self.dim()).all(|k| self.lo[k] <= r.hi[k] && r.lo[k] <= self.hi[k])
    }

    pub fn intersection(&self, r: &Rect) -> Option<Rect> {
        let lo: Vec<f64> = (0..self.dim()).map(|k| self.lo[k].max(r.lo[k])).collect();
        let hi: Vec<f64> = (0..self.dim()).map(|k| self.hi[k].min(r.hi[k])).collect();
        let out = Rect { lo, hi };
        out.is_valid().then_some(out)
    }

    pub fn overlap_volume(&self, r: &Rect) -> f64 {
        self.intersection(r).map_or(0.0, |i| i.volume())
    }

    pub fn translate(&self, u: &[f64]) -> Rect {
        Rect {
            lo: self.lo.iter().zip(u).map(|(a, b)| a + b).collect(),
            hi: self.hi.iter().zip(u).map(|(a, b)| a + b).collect(),
        }
    }

    /// Minkowski sum with another box.
    pub fn expand(&self, w: &Rect) -> Rect {
        Rect {
            lo: self.lo.iter().zip(&w.lo).map(|(a, b)| a + b).collect(),
            hi: self.hi.iter().zip(&w.hi).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn hull(&self, r: &Rect) -> Rect {
        Rect {
            lo: self.lo.iter().zip(&r.lo).map(|(a, b)| a.min(*b)).collect(),
            hi: self.hi.iter().zip(&r.hi).map(|(a, b)| a.max(*b)).collect(),
        }
    }

    /// Projects `x` onto the box.
    pub fn clamp_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, &v)| v.clamp(self.lo[k], self.hi[k]))
            .collect()
    }

    /// Clamps the box into `domain`, collapsing onto the boundary when it lies outside.
    pub fn clamp_into(&self, domain: &Rect) -> Rect {
        Rect {
            lo: (0..self.dim())
                .map(|k| self.lo[k].clamp(domain.lo[k], domain.hi[k]))
                .collect(),
            hi: (0..self.dim())
                .map(|k| self.hi[k].clamp(domain.lo[k], domain.hi[k]))
                .collect(),
        }
    }

    /// The `2^n` corners, axis 0 varying fastest.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|m| {
                (0..n)
                    .map(|k| {
                        if m >> k & 1 == 1 {
                            self.hi[k]
                        } else {
                            self.lo[k]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Splits into `2^n` equal boxes by halving every axis of positive width.
    pub fn quarter(&self) -> Vec<Rect> {
        let mut out = vec![self.clone()];
        for k in 0..self.dim() {
            if self.width(k) <= 0.0 {
                continue;
            }
            let m = self.mid(k);
            out = out
                .into_iter()
                .flat_map(|r| {
                    let mut a = r.clone();
                    let mut b = r;
                    a.hi[k] = m;
                    b.lo[k] = m;
                    [a, b]
                })
                .collect();
        }
        out
    }
}

/// Bisects along the longest side, lowest axis on ties.
pub fn split_rect(r: &Rect) -> Result<(Rect, Rect)> {
    if r.volume() <= 0.0 {
        return Err(Error::DegenerateRect);
    }
    let mut k = 0;
    for i in 1..r.dim() {
        if r.width(i) > r.width(k) {
            k = i;
        }
    }
    let m = r.mid(k);
    let mut a = r.clone();
    let mut b = r.clone();
    a.hi[k] = m;
    b.lo[k] = m;
    Ok((a, b))
}

/// Total volume of a union of boxes, by coordinate compression.
pub fn union_volume(boxes: &[Rect]) -> f64 {
    let boxes: Vec<&Rect> = boxes.iter().filter(|b| b.volume() > 0.0).collect();
    if boxes.is_empty() {
        return 0.0;
    }
    let n = boxes[0].dim();
    let coords: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut c: Vec<f64> = boxes.iter().flat_map(|b| [b.lo[k], b.hi[k]]).collect();
            c.sort_by(|a, b| a.partial_cmp(b).unwrap());
            c.dedup();
            c
        })
        .collect();
    let mut total = 0.0;
    let mut idx = vec![0usize; n];
    let dims: Vec<usize> = coords.iter().map(|c| c.len() - 1).collect();
    if dims.contains(&0) {
        return 0.0;
    }
    loop {
        let mid: Vec<f64> = (0..n)
            .map(|k| 0.5 * (coords[k][idx[k]] + coords[k][idx[k] + 1]))
            .collect();
        if boxes.iter().any(|b| b.contains(&mid)) {
            total += (0..n)
                .map(|k| coords[k][idx[k] + 1] - coords[k][idx[k]])
                .product::<f64>();
        }
        let mut k = 0;
        loop {
            if k == n {
                return total;
            }
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Cells sorted by their lower bound on axis 0, for box and point queries.
#[derive(Clone, Debug)]
pub struct AxisIndex {
    order: Vec<usize>,
    keys: Vec<f64>,
    max_width: f64,
}

impl AxisIndex {
    pub fn new(cells: &[Rect]) -> Self {
        let mut order: Vec<usize> = (0..cells.len()).collect();
        order.sort_by(|&a, &b| {
            cells[a].lo[0]
                .partial_cmp(&cells[b].lo[0])
                .unwrap()
                .then(a.cmp(&b))
        });
        let keys = order.iter().map(|&i| cells[i].lo[0]).collect();
        let max_width = cells.iter().map(|c| c.width(0)).fold(0.0, f64::max);
        AxisIndex {
            order,
            keys,
            max_width,
        }
    }

    /// Ids of cells meeting `q` (closed), ascending.
    pub fn query(&self, cells: &[Rect], q: &Rect) -> Vec<usize> {
        let end = self.keys.partition_point(|&k| k <= q.hi[0]);
        let start = self.keys.partition_point(|&k| k < q.lo[0] - self.max_width);
        let mut out: Vec<usize> = self.order[start..end]
            .iter()
            .copied()
            .filter(|&i| cells[i].intersects(q))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn locate(&self, cells: &[Rect], x: &[f64]) -> Option<usize> {
        self.query(cells, &Rect::point(x)).into_iter().next()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub domain: Rect,
    pub cells: Vec<Rect>,
}

impl Partition {
    /// Uniform grid with `counts[k]` cells along axis k; axis 0 varies fastest.
    pub fn grid(domain: &Rect, counts: &[usize]) -> Partition {
        let n = domain.dim();
        let total: usize = counts.iter().product();
        let mut cells = Vec::with_capacity(total);
        for m in 0..total {
            let mut rem = m;
            let mut lo = vec![0.0; n];
            let mut hi = vec![0.0; n];
            for k in 0..n {
                let i = rem % counts[k];
                rem /= counts[k];
                let w = domain.width(k) / counts[k] as f64;
                lo[k] = domain.lo[k] + w * i as f64;
                hi[k] = if i + 1 == counts[k] {
                    domain.hi[k]
                } else {
                    domain.lo[k] + w * (i + 1) as f64
                };
            }
            cells.push(Rect { lo, hi });
        }
        Partition {
            domain: domain.clone(),
            cells,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index(&self) -> AxisIndex {
        AxisIndex::new(&self.cells)
    }

    /// Coverage and pairwise interior-disjointness, within `tol` of relative volume.
    pub fn check(&self, tol: f64) -> Result<()> {
        let vol: f64 = self.cells.iter().map(|c| c.volume()).sum();
        let dv = self.domain.volume();
        if (vol - dv).abs() > tol * dv.max(1.0) {
            return Err(Error::Config(format!(
                "cells cover volume {vol}, domain has {dv}"
            )));
        }
        let idx = self.index();
        for (i, c) in self.cells.iter().enumerate() {
            if !self.domain.contains_rect(c, tol) {
                return Err(Error::Config(format!("cell {i} leaves the domain")));
            }
            for j in idx.query(&self.cells, c) {
                if j > i && c.overlap_volume(&self.cells[j]) > tol * c.volume().max(tol) {
                    return Err(Error::Config(format!("cells {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }

    /// Splits the listed cells in half. Returns the new partition and the child → parent map.
    pub fn refine(&self, split: &[usize]) -> Result<(Partition, Vec<usize>)> {
        let mut mark = vec![false; self.len()];
        for &i in split {
            mark[i] = true;
        }
        let mut cells = Vec::with_capacity(self.len() + split.len());
        let mut parent = Vec::with_capacity(self.len() + split.len());
        for (i, c) in self.cells.iter().enumerate() {
            if mark[i] {
                let (a, b) = split_rect(c)?;
                cells.push(a);
                cells.push(b);
                parent.push(i);
                parent.push(i);
            } else {
                cells.push(c.clone());
                parent.push(i);
            }
        }
        Ok((
            Partition {
                domain: self.domain.clone(),
                cells,
            },
            parent,
        ))
    }

    /// Checks that `fine` refines `self` under `parent`.
    pub fn check_refinement(&self, fine: &Partition, parent: &[usize]) -> Result<()> {
        if parent.len() != fine.len() {
            return Err(Error::NotRefinement(
                "parent map length differs from cell count".into(),
            ));
        }
        let mut vol = vec![0.0; self.len()];
        for (c, &p) in parent.iter().enumerate() {
            if p >= self.len() || !self.cells[p].contains_rect(&fine.cells[c], 1e-12) {
                return Err(Error::NotRefinement(format!(
                    "cell {c} is not inside its parent {p}"
                )));
            }
            vol[p] += fine.cells[c].volume();
        }
        for (p, v) in vol.iter().enumerate() {
            if (v - self.cells[p].volume()).abs() > 1e-9 * self.cells[p].volume().max(1e-300) {
                return Err(Error::NotRefinement(format!(
                    "children of cell {p} do not cover it"
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.domain.dim();
        let mut header = vec!["cell_id".to_string()];
        for k in 0..n {
            header.push(format!("lo{k}"));
            header.push(format!("hi{k}"));
        }
        wr.write_record(&header)?;
        for (i, c) in self.cells.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            for k in 0..n {
                rec.push(c.lo[k].to_string());
                rec.push(c.hi[k].to_string());
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}
