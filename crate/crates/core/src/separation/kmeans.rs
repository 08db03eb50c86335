use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub wcss: f64,
    /// WCSS after every assignment step of the winning restart.
    pub history: Vec<f64>,
    pub restart: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    centroids.row_mut(0).assign(&points.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (d, p) in d2.iter_mut().zip(points.rows()) {
            *d = d.min(sq_dist(p, centroids.row(c)));
        }
    }
    centroids
}

/// Nearest centroid per point, ties to the lower index. Returns the WCSS
/// and whether any label changed.
fn assign(points: ArrayView2<f64>, centroids: &Array2<f64>, labels: &mut [usize], dists: &mut [f64]) -> (f64, bool) {
    let mut changed = false;
    let mut wcss = 0.0;
    for (i, p) in points.rows().into_iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.rows().into_iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        if labels[i] != best {
            changed = true;
            labels[i] = best;
        }
        dists[i] = best_d;
        wcss += best_d;
    }
    (wcss, changed)
}

fn update(points: ArrayView2<f64>, centroids: &mut Array2<f64>, labels: &mut [usize], dists: &mut [f64]) {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.dim());
    let mut counts = vec![0usize; k];
    for (p, &l) in points.rows().into_iter().zip(labels.iter()) {
        sums.row_mut(l).scaled_add(1.0, &p);
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            continue;
        }
        // Empty cluster: move it onto the point farthest from its centroid.
        let far = dists
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc })
            .0;
        centroids.row_mut(c).assign(&points.row(far));
        counts[labels[far]] -= 1;
        labels[far] = c;
        dists[far] = 0.0;
    }
}

fn lloyd(points: ArrayView2<f64>, k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Array2<f64>, Vec<f64>) {
    let n = points.nrows();
    let mut centroids = plus_plus_init(points, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let (wcss, _) = assign(points, &centroids, &mut labels, &mut dists);
    let mut history = vec![wcss];
    for _ in 0..max_iter {
        update(points, &mut centroids, &mut labels, &mut dists);
        let (wcss, changed) = assign(points, &centroids, &mut labels, &mut dists);
        history.push(wcss);
        if !changed {
            break;
        }
    }
    (labels, centroids, history)
}

/// k-means with k-means++ seeding and several restarts, keeping the lowest
/// final WCSS (earliest restart on ties). Restart `r` draws from stream `r`
/// of a generator seeded with `seed`.
pub fn kmeans(points: ArrayView2<f64>, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<ClusterAssignment> {
    if k == 0 || points.nrows() < k {
        return Err(Error::Data(format!("cannot form {k} clusters from {} points", points.nrows())));
    }
    if cfg.restarts == 0 {
        return Err(Error::Config("k-means needs at least one restart".into()));
    }
    let runs: Vec<_> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            lloyd(points, k, cfg.max_iter, &mut rng)
        })
        .collect();
    let (restart, (labels, centroids, history)) = runs
        .into_iter()
        .enumerate()
        .reduce(|best, cand| {
            if cand.1 .2.last() < best.1 .2.last() {
                cand
            } else {
                best
            }
        })
        .expect("at least one restart");
    Ok(ClusterAssignment {
        wcss: *history.last().expect("history is never empty"),
        labels,
        centroids,
        history,
        restart,
    })
}

/// Within-cluster sum of squares of an arbitrary labelling, using the mean
/// of each cluster.
pub fn wcss_of(points: ArrayView2<f64>, labels: &[usize], k: usize) -> f64 {
    (0..k)
        .map(|c| {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                return 0.0;
            }
            let sel = points.select(Axis(0), &members);
            let mean = sel.mean_axis(Axis(0)).expect("non-empty");
            sel.rows().into_iter().map(|p| sq_dist(p, mean.view())).sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn clouds(seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for i in 0..60 {
            let c = i % 2;
            let centre = if c == 0 { -5.0 } else { 5.0 };
            rows.push(centre + noise.sample(&mut rng));
            rows.push(noise.sample(&mut rng));
            truth.push(c);
        }
        (Array2::from_shape_vec((60, 2), rows).unwrap(), truth)
    }

    #[test]
    fn separated_clouds_recovered() {
        let (pts, truth) = clouds(1);
        let a = kmeans(pts.view(), 2, 7, &KMeansConfig::default()).unwrap();
        let flip = a.labels[0] != truth[0];
        for (l, t) in a.labels.iter().zip(&truth) {
            assert_eq!(*l != *t, flip);
        }
    }

    #[test]
    fn single_cluster_is_all_zero() {
        let (pts, _) = clouds(2);
        let a = kmeans(pts.view(), 1, 0, &KMeansConfig::default()).unwrap();
        assert!(a.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn wcss_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = Array2::from_shape_simple_fn((200, 3), || rng.random_range(-1.0..1.0));
        for seed in 0..5 {
            let a = kmeans(pts.view(), 4, seed, &KMeansConfig::default()).unwrap();
            for w in a.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", a.history);
            }
            assert!((a.wcss - wcss_of(pts.view(), &a.labels, 4)).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_and_empty_cluster_reseeded() {
        let mut pts = Array2::zeros((6, 2));
        pts[[5, 0]] = 10.0;
        let a = kmeans(pts.view(), 3, 11, &KMeansConfig::default()).unwrap();
        let b = kmeans(pts.view(), 3, 11, &KMeansConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.wcss, 0.0);
        assert!(kmeans(pts.view(), 7, 0, &KMeansConfig::default()).is_err());
    }
}
