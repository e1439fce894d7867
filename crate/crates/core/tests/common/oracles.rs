//! Slow, obviously-correct reference implementations used only by tests.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

/// Calls `f` on every length-`t_len` path over `classes` symbols.
pub fn for_each_path(t_len: usize, classes: usize, mut f: impl FnMut(&[usize])) {
    let mut path = vec![0usize; t_len];
    loop {
        f(&path);
        let mut i = 0;
        loop {
            if i == t_len {
                return;
            }
            path[i] += 1;
            if path[i] < classes {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for (i, &c) in path.iter().enumerate() {
        if c != 0 && (i == 0 || path[i - 1] != c) {
            out.push(c);
        }
    }
    out
}

fn path_log_prob(rows: &[Vec<f64>], path: &[usize]) -> f64 {
    path.iter().enumerate().map(|(t, &c)| rows[t][c]).sum()
}

/// Probability of every label sequence, by summing over all paths.
pub fn label_marginals(rows: &[Vec<f64>]) -> BTreeMap<Vec<usize>, f64> {
    let classes = rows[0].len();
    let mut out = BTreeMap::new();
    for_each_path(rows.len(), classes, |p| {
        *out.entry(collapse(p)).or_insert(0.0) += path_log_prob(rows, p).exp();
    });
    out
}

/// −log p(target) by path enumeration, with a max-shifted sum.
pub fn ctc_nll_bruteforce(rows: &[Vec<f64>], target: &[usize]) -> f64 {
    let classes = rows[0].len();
    let mut logs = Vec::new();
    for_each_path(rows.len(), classes, |p| {
        if collapse(p) == target {
            logs.push(path_log_prob(rows, p));
        }
    });
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    -(m + logs.iter().map(|v| (v - m).exp()).sum::<f64>().ln())
}

/// Label sequence of maximal marginal probability; ties → lexicographically smallest.
pub fn marginal_argmax(rows: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for (y, p) in label_marginals(rows) {
        if best.as_ref().is_none_or(|b| p > b.1) {
            best = Some((y, p));
        }
    }
    best.unwrap()
}

pub fn random_log_rows(rng: &mut impl Rng, t_len: usize, classes: usize) -> Vec<Vec<f64>> {
    (0..t_len)
        .map(|_| {
            let w: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() * 3.0).collect();
            let z = w.iter().map(|v| v.exp()).sum::<f64>().ln();
            w.iter().map(|v| v - z).collect()
        })
        .collect()
}

/// Plain recursive edit distance with memoisation.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j + 1, memo)
                .min(go(a, b, i + 1, j, memo))
                .min(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// DBSCAN by all-pairs distances. `Some(c)` cluster, `None` noise. Clusters
/// are connected components of the core graph, numbered by smallest core
/// index; a border point goes to the cluster of its nearest core neighbour,
/// ties broken by the core's coordinates.
pub fn dbscan_naive(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let near = |i: usize, j: usize| (points[i][0] - points[j][0]).hypot(points[i][1] - points[j][1]) <= eps;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
        .collect();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if core[j] && comp[j] == usize::MAX && near(i, j) {
                    comp[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    (0..n)
        .map(|i| {
            if core[i] {
                Some(comp[i])
            } else {
                let dist = |j: usize| (points[i][0] - points[j][0]).hypot(points[i][1] - points[j][1]);
                (0..n)
                    .filter(|&j| core[j] && near(i, j))
                    .min_by(|&a, &b| {
                        dist(a)
                            .partial_cmp(&dist(b))
                            .unwrap()
                            .then(points[a][0].partial_cmp(&points[b][0]).unwrap())
                            .then(points[a][1].partial_cmp(&points[b][1]).unwrap())
                    })
                    .map(|j| comp[j])
            }
        })
        .collect()
}

/// Same partition up to relabelling, and identical noise sets.
pub fn same_partition(a: &[Option<usize>], b: &[Option<usize>]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (None, None) => {}
            (Some(x), Some(y)) => {
                if *fwd.entry(*x).or_insert(*y) != *y || *back.entry(*y).or_insert(*x) != *x {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}
