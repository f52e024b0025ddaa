use pathfinding::prelude::{kuhn_munkres, Matrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;

use super::EvalError;
use crate::data::stream_seed;

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_RESTARTS: usize = 10;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check(points: &[Vec<f64>], k: usize) -> Result<usize, EvalError> {
    if k == 0 || k > points.len() {
        return Err(EvalError::ClusterCount { k, n: points.len() });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(EvalError::Shape("points differ in dimension".into()));
    }
    Ok(dim)
}

/// Within-cluster sum of squared distances to the cluster means.
pub fn within_sse(points: &[Vec<f64>], assign: &[usize], k: usize) -> f64 {
    let cents = centroids(points, assign, k);
    points.iter().zip(assign).map(|(p, &a)| sq_dist(p, &cents[a])).sum()
}

fn centroids(points: &[Vec<f64>], assign: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points.first().map_or(0, |p| p.len());
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assign) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

fn nearest(p: &[f64], cents: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (j, c) in cents.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

/// k-means++ seeding.
fn seed_centers<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut cents = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &cents[0])).collect();
    while cents.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen_range(0.0..total);
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.gen_range(0..points.len())
        };
        cents.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &cents[cents.len() - 1]));
        }
    }
    cents
}

/// One k-means++ seeded Lloyd run. Returns the assignment and the SSE
/// after every assignment step.
pub fn lloyd<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Result<(Vec<usize>, Vec<f64>), EvalError> {
    check(points, k)?;
    let mut cents = seed_centers(points, k, rng);
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &cents)).collect();
    let mut trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        trace.push(points.iter().zip(&assign).map(|(p, &a)| sq_dist(p, &cents[a])).sum());
        let updated = centroids(points, &assign, k);
        // an emptied cluster keeps its previous center
        let counts = assign.iter().fold(vec![0usize; k], |mut c, &a| {
            c[a] += 1;
            c
        });
        for j in 0..k {
            if counts[j] > 0 {
                cents[j] = updated[j].clone();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &cents)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    trace.push(within_sse(points, &assign, k));
    Ok((assign, trace))
}

/// Best-of-`KMEANS_RESTARTS` k-means by within-cluster SSE.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    check(points, k)?;
    let runs: Vec<(Vec<usize>, f64)> = (0..KMEANS_RESTARTS as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, r, 0));
            let (assign, _) = lloyd(points, k, &mut rng).expect("checked");
            let sse = within_sse(points, &assign, k);
            (assign, sse)
        })
        .collect();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.1 < runs[best].1 {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("at least one restart").0)
}

/// Ward increase in SSE from merging clusters of sizes `na`, `nb`.
fn ward_cost(ca: &[f64], na: usize, cb: &[f64], nb: usize) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    na * nb / (na + nb) * sq_dist(ca, cb)
}

/// Bottom-up Ward clustering down to `k` clusters. A cluster is named by
/// its smallest member index; ties in merge cost go to the pair with the
/// smallest names. Cluster ids are numbered in order of first appearance.
pub fn agglomerative(points: &[Vec<f64>], k: usize) -> Result<Vec<usize>, EvalError> {
    check(points, k)?;
    let n = points.len();
    let mut cents: Vec<Vec<f64>> = points.to_vec();
    let mut sizes = vec![1usize; n];
    let mut active = vec![true; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let mut cost = vec![f64::INFINITY; n * n];
    for i in 0..n {
        for j in i + 1..n {
            cost[i * n + j] = ward_cost(&cents[i], 1, &cents[j], 1);
        }
    }
    for _ in 0..n - k {
        let mut best = (f64::INFINITY, 0, 0);
        for i in (0..n).filter(|&i| active[i]) {
            for j in (i + 1..n).filter(|&j| active[j]) {
                if cost[i * n + j] < best.0 {
                    best = (cost[i * n + j], i, j);
                }
            }
        }
        let (_, a, b) = best;
        let (na, nb) = (sizes[a] as f64, sizes[b] as f64);
        let cb = std::mem::take(&mut cents[b]);
        for (x, y) in cents[a].iter_mut().zip(&cb) {
            *x = (na * *x + nb * y) / (na + nb);
        }
        sizes[a] += sizes[b];
        active[b] = false;
        parent[b] = a;
        for j in (0..n).filter(|&j| active[j] && j != a) {
            let c = ward_cost(&cents[a], sizes[a], &cents[j], sizes[j]);
            let (lo, hi) = if j < a { (j, a) } else { (a, j) };
            cost[lo * n + hi] = c;
        }
    }
    let root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let mut ids = vec![usize::MAX; n];
    let mut next = 0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let r = root(i);
        if ids[r] == usize::MAX {
            ids[r] = next;
            next += 1;
        }
        out.push(ids[r]);
    }
    Ok(out)
}

/// Clustering quality against labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub accuracy: f64,
    /// `confusion[class][cluster]` counts.
    pub confusion: Vec<Vec<usize>>,
    /// Class matched to each cluster, if any.
    pub matching: Vec<Option<usize>>,
}

/// Accuracy under the one-to-one cluster/class matching that maximises
/// the number of matched samples.
pub fn hungarian_accuracy(assignments: &[usize], labels: &[u32]) -> Result<ClusterResult, EvalError> {
    if assignments.len() != labels.len() {
        return Err(EvalError::Shape(format!(
            "{} assignments for {} labels",
            assignments.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(EvalError::Shape("no samples".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let n_clusters = assignments.iter().max().map_or(0, |&m| m + 1);
    let mut confusion = vec![vec![0usize; n_clusters]; n_classes];
    for (&a, &l) in assignments.iter().zip(labels) {
        confusion[l as usize][a] += 1;
    }
    let size = n_classes.max(n_clusters);
    let weights = Matrix::from_fn(size, size, |(cluster, class)| {
        if cluster < n_clusters && class < n_classes {
            confusion[class][cluster] as i64
        } else {
            0
        }
    });
    let (matched, cols) = kuhn_munkres(&weights);
    let matching = (0..n_clusters)
        .map(|c| Some(cols[c]).filter(|&class| class < n_classes && confusion[class][c] > 0))
        .collect();
    Ok(ClusterResult {
        assignments: assignments.to_vec(),
        accuracy: matched as f64 / labels.len() as f64,
        confusion,
        matching,
    })
}
