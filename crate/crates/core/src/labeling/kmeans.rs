use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureTable, LabelAssignment, LabelError, LabelKind};
use crate::ingest::{DatasetManifest, Split};

/// Clustering of a feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub k: usize,
    pub seed: u64,
    /// `k` rows of `D` coordinates.
    pub centroids: Vec<Vec<f64>>,
    pub assignment: BTreeMap<String, usize>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    /// Inertia after every assignment step, the last entry equal to `inertia`.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

/// Result of Lloyd iterations on a raw matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LloydOutcome {
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per row (lowest index on ties) and the squared distance.
fn assign(data: ArrayView2<f64>, centroids: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    let pairs: Vec<(usize, f64)> = (0..data.nrows())
        .into_par_iter()
        .map(|i| {
            let row = data.row(i);
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.outer_iter().enumerate() {
                let d = sq_dist(row, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect();
    pairs.into_iter().unzip()
}

/// k-means++ seeding: first centre uniform, each further centre drawn with
/// probability proportional to the squared distance to the nearest chosen one.
pub fn kmeans_plus_plus_init(data: ArrayView2<f64>, k: usize, seed: u64) -> Array2<f64> {
    let n = data.nrows();
    assert!(k >= 1 && k <= n, "need 1 <= k <= n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if acc > u && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), data.row(next)));
        }
    }
    let mut out = Array2::zeros((k, data.ncols()));
    for (r, &i) in chosen.iter().enumerate() {
        out.row_mut(r).assign(&data.row(i));
    }
    out
}

/// Lloyd iterations from the given centroids. Stops on an unchanged
/// assignment, on a largest centroid move below `tol`, or after `max_iter`
/// update steps. Empty clusters keep their previous centroid.
pub fn kmeans_from_centroids(data: ArrayView2<f64>, init: Array2<f64>, max_iter: usize, tol: f64) -> LloydOutcome {
    let k = init.nrows();
    let mut centroids = init;
    let (mut labels, mut dists) = assign(data, &centroids);
    let mut history = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums.row_mut(l).zip_mut_with(&data.row(i), |s, &x| *s += x);
            counts[l] += 1;
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            if counts[j] > 0 {
                let new = sums.row(j).mapv(|s| s / counts[j] as f64);
                shift = shift.max(sq_dist(new.view(), centroids.row(j)).sqrt());
                centroids.row_mut(j).assign(&new);
            }
        }
        let (next, next_d) = assign(data, &centroids);
        history.push(next_d.iter().sum());
        let fixpoint = next == labels;
        labels = next;
        dists = next_d;
        if fixpoint || shift < tol {
            break;
        }
    }
    LloydOutcome {
        centroids,
        assignment: labels,
        inertia: dists.iter().sum(),
        inertia_history: history,
        iterations,
    }
}

/// k-means with k-means++ seeding over every row of the table.
pub fn kmeans_cluster(
    features: &FeatureTable,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterResult, LabelError> {
    if k == 0 {
        return Err(LabelError::ZeroK);
    }
    if k > features.len() {
        return Err(LabelError::KTooLarge { k, n: features.len() });
    }
    let data = features.vectors.mapv(f64::from);
    let init = kmeans_plus_plus_init(data.view(), k, seed);
    let out = kmeans_from_centroids(data.view(), init, max_iter, tol);
    Ok(ClusterResult {
        k,
        seed,
        centroids: out.centroids.axis_iter(Axis(0)).map(|r| r.to_vec()).collect(),
        assignment: features.ids.iter().cloned().zip(out.assignment).collect(),
        inertia: out.inertia,
        inertia_history: out.inertia_history,
        iterations: out.iterations,
    })
}

/// Cluster indices as labels `c0 .. c(k-1)`, empty clusters included.
pub fn cluster_to_labels(result: &ClusterResult, name: &str) -> LabelAssignment {
    LabelAssignment {
        space_name: name.to_string(),
        kind: LabelKind::Cluster,
        vocab: (0..result.k).map(|i| format!("c{i}")).collect(),
        mapping: result.assignment.clone(),
    }
}

/// Summary of cluster cardinalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeStats {
    pub mean: f64,
    pub max: usize,
    pub min: usize,
    /// Population standard deviation.
    pub std: f64,
}

impl SizeStats {
    pub fn of(sizes: &[usize]) -> Self {
        let n = sizes.len().max(1) as f64;
        let mean = sizes.iter().sum::<usize>() as f64 / n;
        let var = sizes.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / n;
        SizeStats {
            mean,
            max: sizes.iter().copied().max().unwrap_or(0),
            min: sizes.iter().copied().min().unwrap_or(0),
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub all: SizeStats,
    pub train: SizeStats,
    pub test: SizeStats,
}

/// Cluster size statistics over all manifest images and over each split.
/// Assigned ids absent from the manifest are ignored.
pub fn cluster_stats(result: &ClusterResult, manifest: &DatasetManifest) -> ClusterStats {
    let mut all = vec![0; result.k];
    let mut train = vec![0; result.k];
    let mut test = vec![0; result.k];
    for (id, &c) in &result.assignment {
        match manifest.split_of(id) {
            Some(Split::Train) => train[c] += 1,
            Some(Split::Test) => test[c] += 1,
            None => continue,
        }
        all[c] += 1;
    }
    ClusterStats {
        all: SizeStats::of(&all),
        train: SizeStats::of(&train),
        test: SizeStats::of(&test),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::tests::sized_manifest;
    use ndarray::array;

    fn table(v: Array2<f32>) -> FeatureTable {
        let ids = (0..v.nrows()).map(|i| format!("img{i:05}")).collect();
        FeatureTable::new(ids, v).unwrap()
    }

    fn random_points(seed: u64, n: usize, d: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-5.0..5.0))
    }

    /// Textbook Lloyd: loop until the assignment stops changing.
    fn naive_lloyd(data: &Array2<f64>, init: &Array2<f64>) -> Vec<usize> {
        let mut c = init.clone();
        let mut prev: Option<Vec<usize>> = None;
        loop {
            let mut lab = Vec::new();
            for p in data.outer_iter() {
                let mut best = 0;
                let mut bd = f64::MAX;
                for j in 0..c.nrows() {
                    let d: f64 = (0..p.len()).map(|t| (p[t] - c[[j, t]]).powi(2)).sum();
                    if d < bd {
                        bd = d;
                        best = j;
                    }
                }
                lab.push(best);
            }
            if prev.as_ref() == Some(&lab) {
                return lab;
            }
            for j in 0..c.nrows() {
                let members: Vec<usize> = (0..lab.len()).filter(|&i| lab[i] == j).collect();
                if members.is_empty() {
                    continue;
                }
                for t in 0..c.ncols() {
                    c[[j, t]] = members.iter().map(|&i| data[[i, t]]).sum::<f64>() / members.len() as f64;
                }
            }
            prev = Some(lab);
        }
    }

    #[test]
    fn k1_is_the_mean() {
        let v = array![[0.0f32, 0.0], [2.0, 0.0], [1.0, 3.0], [1.0, 1.0]];
        let r = kmeans_cluster(&table(v), 1, 0, 100, 0.0).unwrap();
        assert!((r.centroids[0][0] - 1.0).abs() < 1e-12);
        assert!((r.centroids[0][1] - 1.0).abs() < 1e-12);
        // squared distances to (1, 1): 2 + 2 + 4 + 0
        assert!((r.inertia - 8.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_distinct_gives_zero_inertia() {
        let v = array![[0.0f32, 0.0], [5.0, 0.0], [0.0, 5.0], [9.0, 9.0], [-3.0, 2.0]];
        let r = kmeans_cluster(&table(v), 5, 11, 100, 1e-9).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut seen: Vec<usize> = r.assignment.values().copied().collect();
        seen.sort();
        assert_eq!(seen, [0, 1, 2, 3, 4]);
    }

    #[test]
    fn agrees_with_naive_lloyd() {
        let data = random_points(17, 50, 3);
        let init = kmeans_plus_plus_init(data.view(), 4, 3);
        let out = kmeans_from_centroids(data.view(), init.clone(), 1000, 0.0);
        assert_eq!(out.assignment, naive_lloyd(&data, &init));
    }

    #[test]
    fn inertia_non_increasing_and_assignment_optimal() {
        for seed in 0..10 {
            let data = random_points(seed, 80, 4);
            let out = kmeans_from_centroids(data.view(), kmeans_plus_plus_init(data.view(), 5, seed), 300, 1e-9);
            for w in out.inertia_history.windows(2) {
                assert!(w[1] <= w[0], "{:?}", out.inertia_history);
            }
            assert_eq!(*out.inertia_history.last().unwrap(), out.inertia);
            let (best, _) = assign(data.view(), &out.centroids);
            assert_eq!(best, out.assignment);
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let data = array![[0.0, 0.0]];
        let c = array![[1.0, 0.0], [-1.0, 0.0]];
        assert_eq!(assign(data.view(), &c).0, [0]);
    }

    #[test]
    fn seed_determinism_and_errors() {
        let t = table(random_points(4, 30, 2).mapv(|v| v as f32));
        let a = kmeans_cluster(&t, 3, 8, 300, 1e-6).unwrap();
        assert_eq!(a, kmeans_cluster(&t, 3, 8, 300, 1e-6).unwrap());
        assert!(matches!(
            kmeans_cluster(&t, 31, 0, 10, 0.0),
            Err(LabelError::KTooLarge { k: 31, n: 30 })
        ));
        assert!(kmeans_cluster(&t, 0, 0, 10, 0.0).is_err());
    }

    #[test]
    fn empty_clusters_are_kept() {
        // duplicated points force empty clusters once k exceeds distinct values
        let v = array![[1.0f32], [1.0], [1.0], [4.0]];
        let t = table(v);
        let data = t.vectors.mapv(f64::from);
        let init = array![[1.0], [4.0], [100.0]];
        let out = kmeans_from_centroids(data.view(), init, 10, 0.0);
        assert_eq!(out.assignment, [0, 0, 0, 1]);
        assert_eq!(out.centroids[[2, 0]], 100.0);
        let r = ClusterResult {
            k: 3,
            seed: 0,
            centroids: vec![],
            assignment: t.ids.iter().cloned().zip(out.assignment).collect(),
            inertia: 0.0,
            inertia_history: vec![],
            iterations: 0,
        };
        let l = cluster_to_labels(&r, "kmeans3");
        assert_eq!(l.vocab, ["c0", "c1", "c2"]);
        assert_eq!(l.mapping, r.assignment);
        assert_eq!(l.kind, LabelKind::Cluster);
    }

    #[test]
    fn size_stats_hand_values() {
        let s = SizeStats::of(&[10, 30]);
        assert_eq!((s.mean, s.max, s.min, s.std), (20.0, 30, 10, 10.0));
    }

    #[test]
    fn stats_per_split() {
        let m = sized_manifest(10);
        let assignment = m.images().iter().map(|im| (im.id.clone(), 2)).collect();
        let r = ClusterResult {
            k: 4,
            seed: 0,
            centroids: vec![],
            assignment,
            inertia: 0.0,
            inertia_history: vec![],
            iterations: 0,
        };
        let s = cluster_stats(&r, &m);
        assert_eq!(s.all.min, 0);
        assert_eq!(s.all.max, 10);
        assert_eq!(s.train.max, 7);
        assert_eq!(s.test.max, 3);
        assert_eq!(s.all.mean, 2.5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn data() -> impl Strategy<Value = (Array2<f32>, usize)> {
            (2..40usize, 1..5usize).prop_flat_map(|(n, d)| {
                (
                    prop::collection::vec(-100i32..100, n * d).prop_map(move |v| {
                        Array2::from_shape_vec((n, d), v.into_iter().map(|x| x as f32 / 10.0).collect()).unwrap()
                    }),
                    1..=n.min(6),
                )
            })
        }

        proptest! {
            #[test]
            fn assignments_are_nearest_and_inertia_never_rises((v, k) in data(), seed in any::<u64>()) {
                let t = table(v);
                let r = kmeans_cluster(&t, k, seed, 300, 0.0).unwrap();
                let data = t.vectors.mapv(f64::from);
                let cents = Array2::from_shape_vec(
                    (k, t.dim()),
                    r.centroids.iter().flatten().copied().collect(),
                ).unwrap();
                let (nearest, _) = assign(data.view(), &cents);
                let got: Vec<usize> = t.ids.iter().map(|id| r.assignment[id]).collect();
                prop_assert_eq!(got, nearest);
                for w in r.inertia_history.windows(2) {
                    prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", r.inertia_history);
                }
                prop_assert_eq!(kmeans_cluster(&t, k, seed, 300, 0.0).unwrap(), r);
            }
        }
    }
}
