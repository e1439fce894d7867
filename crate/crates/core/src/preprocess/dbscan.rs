//! Density-based clustering of 2-D points.
//!
//! A point is core when at least `min_pts` points (itself included) lie
//! within Euclidean distance `eps`, boundary inclusive. Clusters are the
//! density-connected components of core points plus the border points they
//! reach. Clusters are numbered in creation order while scanning points by
//! index. A border point joins the cluster of its nearest core neighbour
//! (ties → the core with the smaller coordinates), so the partition does not
//! depend on input order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self { eps: 0.25, min_pts: 4 }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::config(format!("DBSCAN eps must be > 0, got {}", self.eps)));
        }
        if self.min_pts == 0 {
            return Err(Error::config("DBSCAN min_pts must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Cluster(usize),
    Noise,
}

/// Uniform grid with cell side `eps`; a radius query only visits the 3×3
/// block of cells around the query point.
struct Grid<'a> {
    points: &'a [[f64; 2]],
    eps: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [[f64; 2]], eps: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::cell(p, eps)).or_default().push(i);
        }
        Self { points, eps, cells }
    }

    fn cell(p: &[f64; 2], eps: f64) -> (i64, i64) {
        ((p[0] / eps).floor() as i64, (p[1] / eps).floor() as i64)
    }

    fn neighbours(&self, i: usize) -> Vec<usize> {
        let p = self.points[i];
        let (cx, cy) = Self::cell(&p, self.eps);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(members) = self.cells.get(&(cx + dx, cy + dy)) {
                    for &j in members {
                        let q = self.points[j];
                        if (p[0] - q[0]).hypot(p[1] - q[1]) <= self.eps {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

pub fn dbscan(points: &[[f64; 2]], params: &DbscanParams) -> Result<Vec<Label>> {
    params.validate()?;
    if points.is_empty() {
        return Err(Error::validation("DBSCAN needs at least one point"));
    }
    if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::validation("DBSCAN points must be finite"));
    }
    let grid = Grid::new(points, params.eps);
    let neighbours: Vec<Vec<usize>> = (0..points.len()).map(|i| grid.neighbours(i)).collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= params.min_pts).collect();
    let mut labels = vec![Label::Noise; points.len()];
    let mut next = 0;
    for p in 0..points.len() {
        if !core[p] || labels[p] != Label::Noise {
            continue;
        }
        let c = next;
        next += 1;
        labels[p] = Label::Cluster(c);
        let mut stack = vec![p];
        while let Some(q) = stack.pop() {
            for &r in &neighbours[q] {
                if core[r] && labels[r] == Label::Noise {
                    labels[r] = Label::Cluster(c);
                    stack.push(r);
                }
            }
        }
    }
    for p in (0..points.len()).filter(|&p| !core[p]) {
        let nearest = neighbours[p].iter().copied().filter(|&q| core[q]).min_by(|&a, &b| {
            let (pa, pb) = (points[a], points[b]);
            let da = (pa[0] - points[p][0]).hypot(pa[1] - points[p][1]);
            let db = (pb[0] - points[p][0]).hypot(pb[1] - points[p][1]);
            da.total_cmp(&db)
                .then(pa[0].total_cmp(&pb[0]))
                .then(pa[1].total_cmp(&pb[1]))
        });
        if let Some(q) = nearest {
            labels[p] = labels[q];
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_clusters_and_an_outlier() {
        let mut pts = Vec::new();
        for i in 0..5 {
            pts.push([0.01 * i as f64, 0.0]);
        }
        for i in 0..5 {
            pts.push([1.0 + 0.01 * i as f64, 1.0]);
        }
        pts.push([5.0, -5.0]);
        let labels = dbscan(&pts, &DbscanParams { eps: 0.1, min_pts: 3 }).unwrap();
        assert!(labels[..5].iter().all(|&l| l == Label::Cluster(0)));
        assert!(labels[5..10].iter().all(|&l| l == Label::Cluster(1)));
        assert_eq!(labels[10], Label::Noise);
    }

    #[test]
    fn coincident_points_form_one_cluster() {
        let pts = vec![[0.3, 0.3]; 6];
        let labels = dbscan(&pts, &DbscanParams { eps: 0.01, min_pts: 6 }).unwrap();
        assert!(labels.iter().all(|&l| l == Label::Cluster(0)));
    }

    #[test]
    fn boundary_is_inclusive() {
        let pts = vec![[0.0, 0.0], [0.5, 0.0]];
        let labels = dbscan(&pts, &DbscanParams { eps: 0.5, min_pts: 2 }).unwrap();
        assert_eq!(labels, vec![Label::Cluster(0), Label::Cluster(0)]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(dbscan(&[], &DbscanParams::default()).is_err());
        assert!(dbscan(&[[0.0, 0.0]], &DbscanParams { eps: 0.0, min_pts: 1 }).is_err());
        assert!(dbscan(&[[0.0, 0.0]], &DbscanParams { eps: 1.0, min_pts: 0 }).is_err());
    }
}
