use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failure,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
        }
    }
}

/// One solve: problem parameters in a fixed column order, the method, and
/// what it cost.
#[derive(Clone, Debug, PartialEq)]
pub struct PerformanceRecord {
    pub params: Vec<f64>,
    pub method: String,
    pub outcome: Outcome,
    pub time: f64,
    pub evals: u64,
}

/// Inclusive index box over the parameter axes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBox {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl ParamBox {
    pub fn contains(&self, cell: &[usize]) -> bool {
        cell.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(c, (l, h))| l <= c && c <= h)
    }

    fn cells(&self) -> Vec<Vec<usize>> {
        let mut out = alloc::vec![self.lo.clone()];
        for d in 0..self.lo.len() {
            let mut next = Vec::new();
            for c in &out {
                for v in self.lo[d]..=self.hi[d] {
                    let mut c = c.clone();
                    c[d] = v;
                    next.push(c);
                }
            }
            out = next;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecommendationRegion {
    pub preferred: String,
    pub over: String,
    pub confidence: f64,
    /// Sorted distinct parameter values per dimension.
    pub axes: Vec<Vec<f64>>,
    pub boxes: Vec<ParamBox>,
}

impl RecommendationRegion {
    /// Every grid cell covered by some box.
    pub fn cells(&self) -> BTreeSet<Vec<usize>> {
        self.boxes.iter().flat_map(|b| b.cells()).collect()
    }

    pub fn cell_of(&self, params: &[f64]) -> Option<Vec<usize>> {
        params
            .iter()
            .zip(&self.axes)
            .map(|(p, axis)| axis.iter().position(|v| v == p))
            .collect()
    }

    pub fn contains(&self, params: &[f64]) -> bool {
        self.cell_of(params)
            .is_some_and(|c| self.boxes.iter().any(|b| b.contains(&c)))
    }
}

fn axes(db: &[PerformanceRecord]) -> Vec<Vec<f64>> {
    let dims = db[0].params.len();
    (0..dims)
        .map(|d| {
            let mut v: Vec<f64> = db.iter().map(|r| r.params[d]).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            v.dedup();
            v
        })
        .collect()
}

fn prefers(a: &PerformanceRecord, b: &PerformanceRecord) -> bool {
    a.outcome == Outcome::Success && (b.outcome == Outcome::Failure || a.time < b.time)
}

/// Greedy axis-aligned box induction. A grid cell qualifies when at least
/// `confidence` of the (A record, B record) pairs in it prefer A; boxes are
/// seeded at the first uncovered qualifying cell and grown one dimension at
/// a time while every added cell qualifies and is uncovered.
pub fn mine_regions(
    db: &[PerformanceRecord],
    a: &str,
    b: &str,
    confidence: f64,
) -> Result<RecommendationRegion> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if !(confidence > 0.5 && confidence <= 1.0) {
        return Err(Error::InvalidArgument("confidence must lie in (0.5, 1]".into()));
    }
    let dims = db[0].params.len();
    if db.iter().any(|r| r.params.len() != dims) {
        return Err(Error::InvalidArgument("records disagree on parameter count".into()));
    }
    let axes = axes(db);
    let mut by_cell: BTreeMap<Vec<usize>, (Vec<&PerformanceRecord>, Vec<&PerformanceRecord>)> =
        BTreeMap::new();
    for r in db {
        let cell: Vec<usize> = r
            .params
            .iter()
            .zip(&axes)
            .map(|(p, axis)| axis.iter().position(|v| v == p).unwrap())
            .collect();
        let e = by_cell.entry(cell).or_default();
        if r.method == a {
            e.0.push(r);
        } else if r.method == b {
            e.1.push(r);
        }
    }
    let mut good: BTreeSet<Vec<usize>> = BTreeSet::new();
    for (cell, (ra, rb)) in &by_cell {
        let pairs = ra.len() * rb.len();
        if pairs == 0 {
            continue;
        }
        let wins = ra
            .iter()
            .flat_map(|x| rb.iter().map(move |y| prefers(x, y)))
            .filter(|w| *w)
            .count();
        if wins as f64 >= confidence * pairs as f64 {
            good.insert(cell.clone());
        }
    }
    let mut covered: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut boxes = Vec::new();
    for seed in &good {
        if covered.contains(seed) {
            continue;
        }
        let mut bx = ParamBox {
            lo: seed.clone(),
            hi: seed.clone(),
        };
        for d in 0..dims {
            loop {
                if bx.hi[d] + 1 >= axes[d].len() {
                    break;
                }
                let mut grown = bx.clone();
                grown.hi[d] += 1;
                let fresh = grown.cells().into_iter().filter(|c| c[d] == grown.hi[d]);
                let ok = fresh
                    .collect::<Vec<_>>()
                    .iter()
                    .all(|c| good.contains(c) && !covered.contains(c));
                if !ok {
                    break;
                }
                bx = grown;
            }
        }
        covered.extend(bx.cells());
        boxes.push(bx);
    }
    Ok(RecommendationRegion {
        preferred: a.into(),
        over: b.into(),
        confidence,
        axes,
        boxes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(p: &[f64], m: &str, ok: bool, time: f64) -> PerformanceRecord {
        PerformanceRecord {
            params: p.to_vec(),
            method: m.into(),
            outcome: if ok { Outcome::Success } else { Outcome::Failure },
            time,
            evals: 0,
        }
    }

    #[test]
    fn a_everywhere_is_one_box() {
        let mut db = Vec::new();
        for x in 0..4 {
            for y in 0..3 {
                let p = [x as f64, y as f64];
                db.push(rec(&p, "A", true, 1.0));
                db.push(rec(&p, "B", true, 2.0));
            }
        }
        for conf in [0.6, 0.9, 1.0] {
            let r = mine_regions(&db, "A", "B", conf).unwrap();
            assert_eq!(r.boxes.len(), 1);
            assert_eq!(r.cells().len(), 12);
        }
    }

    #[test]
    fn one_contrary_record_excludes_at_full_confidence() {
        let mut db = Vec::new();
        for x in 0..3 {
            let p = [x as f64];
            db.push(rec(&p, "A", true, 1.0));
            db.push(rec(&p, "B", true, 2.0));
        }
        db.push(rec(&[1.0], "B", true, 0.5));
        let r = mine_regions(&db, "A", "B", 1.0).unwrap();
        assert!(!r.contains(&[1.0]));
        assert!(r.contains(&[0.0]) && r.contains(&[2.0]));
        assert_eq!(mine_regions(&[], "A", "B", 0.9), Err(Error::EmptyDatabase));
    }
}
