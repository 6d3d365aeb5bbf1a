//! k-means over joint visual-semantic points, plus cluster-quality metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vecmath;

pub const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    PlusPlus,
    /// `k` distinct points drawn uniformly.
    Forgy,
    /// A random partition, averaged without any Lloyd refinement.
    RandomAssign,
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMode::PlusPlus => "plusplus",
            InitMode::Forgy => "forgy",
            InitMode::RandomAssign => "random_assign",
        })
    }
}

impl FromStr for InitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plusplus" => Ok(InitMode::PlusPlus),
            "forgy" => Ok(InitMode::Forgy),
            "random_assign" => Ok(InitMode::RandomAssign),
            other => Err(Error::Config(format!("unknown k-means init `{other}`"))),
        }
    }
}

/// Cluster representatives `c_j`, indexed `0..k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    centroids: Vec<Vec<f64>>,
}

impl ClusterModel {
    pub fn new(centroids: Vec<Vec<f64>>) -> Result<Self> {
        let dim = match centroids.first() {
            Some(c) => c.len(),
            None => return Err(Error::EmptyInput("cluster model needs at least one centroid")),
        };
        if centroids.iter().any(|c| c.len() != dim) {
            return Err(Error::ShapeMismatch("centroids differ in length".into()));
        }
        if centroids.iter().any(|c| !vecmath::all_finite(c)) {
            return Err(Error::NonFiniteValue("centroid".into()));
        }
        Ok(Self { centroids })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j]
    }

    /// Adds `delta` to centroid `j`.
    pub fn shift(&mut self, j: usize, delta: &[f64]) -> Result<()> {
        let c = self
            .centroids
            .get_mut(j)
            .ok_or_else(|| Error::OutOfRange(format!("centroid {j}")))?;
        if delta.len() != c.len() {
            return Err(Error::ShapeMismatch(format!(
                "centroid has {} entries, update has {}",
                c.len(),
                delta.len()
            )));
        }
        vecmath::axpy(c, 1.0, delta);
        Ok(())
    }

    /// Euclidean distance from `point` to every centroid.
    pub fn distances(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "point has {} entries, centroids {}",
                point.len(),
                self.dim()
            )));
        }
        Ok(self
            .centroids
            .iter()
            .map(|c| vecmath::euclidean(point, c))
            .collect())
    }

    /// Nearest centroid and its distance; ties go to the lowest index.
    pub fn assign(&self, point: &[f64]) -> Result<(usize, f64)> {
        let d = self.distances(point)?;
        let mut best = 0;
        for j in 1..d.len() {
            if d[j] < d[best] {
                best = j;
            }
        }
        Ok((best, d[best]))
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: ClusterModel,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub objective: f64,
    /// Objective after every assignment step, in order.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    /// All points coincide while `k > 1`; the centroids are `k` copies.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub k: usize,
    pub seed: u64,
    pub init: InitMode,
    /// Fit on z-scored coordinates; centroids are mapped back afterwards.
    pub standardize: bool,
    /// Independent seeded initializations; the lowest objective wins.
    pub restarts: usize,
}

fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, vecmath::squared_distance(p, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = vecmath::squared_distance(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn mean_of(points: &[Vec<f64>], members: impl Iterator<Item = usize>, dim: usize) -> Option<Vec<f64>> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for i in members {
        vecmath::axpy(&mut acc, 1.0, &points[i]);
        n += 1;
    }
    (n > 0).then(|| acc.into_iter().map(|v| v / n as f64).collect())
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| vecmath::squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[chosen].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(vecmath::squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn objective_of(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| vecmath::squared_distance(p, &centroids[a]))
        .sum()
}

/// Fits `k` centroids to `points`.
///
/// Lloyd iterations run until the assignment stops changing or
/// [`MAX_LLOYD_ITERATIONS`] is reached; at each Lloyd fixed point a sweep of
/// single-point transfers is tried before stopping. A cluster that loses all
/// members is re-seeded with the point farthest from its current centroid.
pub fn kmeans_fit(points: &[Vec<f64>], opts: KMeansOptions) -> Result<KMeansFit> {
    let k = opts.k;
    if points.is_empty() {
        return Err(Error::EmptyInput("k-means needs at least one point"));
    }
    if k == 0 || k > points.len() {
        return Err(Error::TooFewPoints {
            points: points.len(),
            k,
        });
    }
    if opts.restarts == 0 {
        return Err(Error::OutOfRange("k-means needs at least one restart".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::ShapeMismatch("points differ in length".into()));
    }

    if opts.standardize {
        let (mean, std) = column_moments(points);
        let z: Vec<Vec<f64>> = points
            .iter()
            .map(|p| p.iter().zip(&mean).zip(&std).map(|((x, m), s)| (x - m) / s).collect())
            .collect();
        let mut fit = kmeans_fit(&z, KMeansOptions { standardize: false, ..opts })?;
        let restored = fit
            .model
            .centroids
            .iter()
            .map(|c| c.iter().zip(&mean).zip(&std).map(|((x, m), s)| x * s + m).collect())
            .collect();
        fit.model = ClusterModel::new(restored)?;
        fit.objective = objective_of(points, fit.model.centroids(), &fit.assignments);
        return Ok(fit);
    }

    let degenerate = k > 1 && points.iter().all(|p| p == &points[0]);
    if degenerate {
        log::warn!("all {} points coincide; returning {k} identical centroids", points.len());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    if opts.init == InitMode::RandomAssign {
        let mut labels: Vec<usize> = (0..points.len()).map(|i| i % k).collect();
        labels.shuffle(&mut rng);
        let centroids: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                mean_of(points, (0..points.len()).filter(|&i| labels[i] == j), dim)
                    .expect("every cluster receives at least one point")
            })
            .collect();
        let objective = objective_of(points, &centroids, &labels);
        return Ok(KMeansFit {
            model: ClusterModel::new(centroids)?,
            assignments: labels,
            objective,
            objective_trace: vec![objective],
            iterations: 0,
            degenerate,
        });
    }

    let mut best: Option<KMeansFit> = None;
    for _ in 0..opts.restarts {
        let fit = lloyd(points, k, opts.init, degenerate, &mut rng)?;
        if best.as_ref().is_none_or(|b| fit.objective < b.objective) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd(
    points: &[Vec<f64>],
    k: usize,
    init: InitMode,
    degenerate: bool,
    rng: &mut ChaCha8Rng,
) -> Result<KMeansFit> {
    let dim = points[0].len();
    let mut centroids = match init {
        InitMode::PlusPlus => plus_plus(points, k, rng),
        _ => index::sample(rng, points.len(), k)
            .into_iter()
            .map(|i| points[i].clone())
            .collect(),
    };

    let mut assignments: Vec<usize> = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (j, _) = nearest(&centroids, p);
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        // Re-seed empty clusters from the farthest points.
        for j in 0..k {
            if assignments.contains(&j) {
                continue;
            }
            let far = (0..points.len())
                .max_by(|&a, &b| {
                    let da = vecmath::squared_distance(&points[a], &centroids[assignments[a]]);
                    let db = vecmath::squared_distance(&points[b], &centroids[assignments[b]]);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("points is non-empty");
            centroids[j] = points[far].clone();
            assignments[far] = j;
            changed = true;
        }
        trace.push(objective_of(points, &centroids, &assignments));
        if iterations >= MAX_LLOYD_ITERATIONS {
            break;
        }
        if !changed {
            if !transfer_points(points, &mut centroids, &mut assignments) {
                break;
            }
            trace.push(objective_of(points, &centroids, &assignments));
        }
        iterations += 1;
        for (j, c) in centroids.iter_mut().enumerate() {
            if let Some(m) = mean_of(points, (0..points.len()).filter(|&i| assignments[i] == j), dim) {
                *c = m;
            }
        }
    }
    let objective = objective_of(points, &centroids, &assignments);
    Ok(KMeansFit {
        model: ClusterModel::new(centroids)?,
        assignments,
        objective,
        objective_trace: trace,
        iterations,
        degenerate,
    })
}

/// One sweep of single-point transfers, each taken when it lowers the
/// objective after both affected means are updated. Leaves `centroids` at the
/// exact means of the new partition. Returns whether any point moved.
fn transfer_points(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignments: &mut [usize]) -> bool {
    let k = centroids.len();
    let dim = points[0].len();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    let mut moved = false;
    for (i, p) in points.iter().enumerate() {
        let from = assignments[i];
        if sizes[from] <= 1 {
            continue;
        }
        let n_from = sizes[from] as f64;
        let removal = n_from / (n_from - 1.0) * vecmath::squared_distance(p, &centroids[from]);
        let mut best: Option<(usize, f64)> = None;
        for (to, c) in centroids.iter().enumerate() {
            if to == from {
                continue;
            }
            let n_to = sizes[to] as f64;
            let added = n_to / (n_to + 1.0) * vecmath::squared_distance(p, c);
            if added < removal * (1.0 - 1e-12) && best.is_none_or(|b| added < b.1) {
                best = Some((to, added));
            }
        }
        if let Some((to, _)) = best {
            let n_to = sizes[to] as f64;
            for (d, &x) in p.iter().enumerate() {
                centroids[from][d] = (n_from * centroids[from][d] - x) / (n_from - 1.0);
                centroids[to][d] = (n_to * centroids[to][d] + x) / (n_to + 1.0);
            }
            sizes[from] -= 1;
            sizes[to] += 1;
            assignments[i] = to;
            moved = true;
        }
    }
    if moved {
        for (j, c) in centroids.iter_mut().enumerate() {
            if let Some(m) = mean_of(points, (0..points.len()).filter(|&i| assignments[i] == j), dim) {
                *c = m;
            }
        }
    }
    moved
}

fn column_moments(points: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = points.len() as f64;
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    for p in points {
        vecmath::axpy(&mut mean, 1.0 / n, p);
    }
    let mut var = vec![0.0; dim];
    for p in points {
        for ((v, x), m) in var.iter_mut().zip(p).zip(&mean) {
            *v += (x - m) * (x - m) / n;
        }
    }
    let std = var
        .into_iter()
        .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, std)
}

/// Per-class counts over clusters plus the resulting purity.
#[derive(Debug, Clone, PartialEq)]
pub struct PurityReport {
    pub purity: f64,
    /// `class label -> count per cluster`.
    pub histogram: BTreeMap<String, Vec<usize>>,
    pub n_points: usize,
}

fn class_counts<S: AsRef<str>>(
    assignments: &[usize],
    labels: &[S],
    k: usize,
) -> Result<BTreeMap<String, Vec<usize>>> {
    if assignments.is_empty() {
        return Err(Error::EmptyInput("purity needs at least one point"));
    }
    if assignments.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} assignments for {} labels",
            assignments.len(),
            labels.len()
        )));
    }
    let mut hist: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (&a, l) in assignments.iter().zip(labels) {
        if a >= k {
            return Err(Error::OutOfRange(format!("cluster {a} with k = {k}")));
        }
        hist.entry(l.as_ref().to_string()).or_insert_with(|| vec![0; k])[a] += 1;
    }
    Ok(hist)
}

/// `(1/N) Σ_clusters max_class |cluster ∩ class|`.
pub fn purity<S: AsRef<str>>(assignments: &[usize], labels: &[S], k: usize) -> Result<PurityReport> {
    let histogram = class_counts(assignments, labels, k)?;
    let majority: usize = (0..k)
        .map(|j| histogram.values().map(|row| row[j]).max().unwrap_or(0))
        .sum();
    Ok(PurityReport {
        purity: majority as f64 / assignments.len() as f64,
        histogram,
        n_points: assignments.len(),
    })
}

/// Distribution of each class over clusters, in percent (rows sum to 100).
pub fn cluster_histogram<S: AsRef<str>>(
    assignments: &[usize],
    labels: &[S],
    k: usize,
) -> Result<BTreeMap<String, Vec<f64>>> {
    Ok(class_counts(assignments, labels, k)?
        .into_iter()
        .map(|(label, row)| {
            let total: usize = row.iter().sum();
            let pct = row.iter().map(|&c| 100.0 * c as f64 / total as f64).collect();
            (label, pct)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn opts(k: usize, init: InitMode) -> KMeansOptions {
        KMeansOptions {
            k,
            seed: 3,
            init,
            standardize: false,
            restarts: 1,
        }
    }

    #[test]
    fn k_equal_to_point_count_recovers_points() {
        let pts = vec![vec![0.0, 0.0], vec![5.0, 1.0], vec![-3.0, 2.0]];
        for init in [InitMode::PlusPlus, InitMode::Forgy] {
            let fit = kmeans_fit(&pts, opts(3, init)).unwrap();
            assert_eq!(fit.objective, 0.0);
            let mut got = fit.model.centroids().to_vec();
            got.sort_by(|a, b| a[0].total_cmp(&b[0]));
            let mut want = pts.clone();
            want.sort_by(|a, b| a[0].total_cmp(&b[0]));
            assert_eq!(got, want);
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]];
        let fit = kmeans_fit(&pts, opts(1, InitMode::PlusPlus)).unwrap();
        assert_eq!(fit.model.centroid(0), &[3.0, 3.0]);
    }

    #[test]
    fn degenerate_points_are_flagged() {
        let pts = vec![vec![1.0, 1.0]; 4];
        let fit = kmeans_fit(&pts, opts(3, InitMode::PlusPlus)).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.model.k(), 3);
        assert!(fit.model.centroids().iter().all(|c| c == &[1.0, 1.0]));
    }

    #[test]
    fn restarts_keep_the_best_run() {
        let pts: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 7) as f64, (i * i % 11) as f64]).collect();
        let single = kmeans_fit(&pts, opts(4, InitMode::Forgy)).unwrap();
        let many = kmeans_fit(&pts, KMeansOptions { restarts: 8, ..opts(4, InitMode::Forgy) }).unwrap();
        assert!(many.objective <= single.objective);
        assert!(kmeans_fit(&pts, KMeansOptions { restarts: 0, ..opts(2, InitMode::Forgy) }).is_err());
    }

    #[test]
    fn too_few_points() {
        let pts = vec![vec![1.0]];
        assert!(matches!(
            kmeans_fit(&pts, opts(2, InitMode::PlusPlus)),
            Err(Error::TooFewPoints { points: 1, k: 2 })
        ));
        assert!(kmeans_fit(&[], opts(1, InitMode::PlusPlus)).is_err());
    }

    #[test]
    fn random_assignment_partitions_every_point() {
        let pts: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        let fit = kmeans_fit(&pts, opts(4, InitMode::RandomAssign)).unwrap();
        assert_eq!(fit.iterations, 0);
        for j in 0..4 {
            assert_eq!(fit.assignments.iter().filter(|&&a| a == j).count(), 3);
        }
    }

    #[test]
    fn standardized_fit_returns_original_space_centroids() {
        let pts = vec![
            vec![0.0, 100.0],
            vec![0.1, 300.0],
            vec![10.0, 110.0],
            vec![10.1, 290.0],
        ];
        let fit = kmeans_fit(
            &pts,
            KMeansOptions {
                standardize: true,
                ..opts(1, InitMode::PlusPlus)
            },
        )
        .unwrap();
        let c = fit.model.centroid(0);
        assert!((c[0] - 5.05).abs() < 1e-12 && (c[1] - 200.0).abs() < 1e-9);
    }

    #[test]
    fn assign_examples() {
        let m = ClusterModel::new(vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![5.0, 5.0]]).unwrap();
        assert_eq!(m.assign(&[5.0, 5.0]).unwrap(), (2, 0.0));
        assert_eq!(m.assign(&[1.0, 0.0]).unwrap().0, 0);
        assert!(m.assign(&[1.0]).is_err());
    }

    #[test]
    fn purity_examples() {
        let p = purity(&[0, 0, 1, 1], &["A", "A", "B", "B"], 2).unwrap();
        assert_eq!(p.purity, 1.0);
        let p = purity(&[0, 0, 0, 1], &["A", "A", "B", "B"], 2).unwrap();
        assert_eq!(p.purity, 0.75);
        let p = purity(&[0, 0, 1, 1], &["A", "B", "A", "B"], 2).unwrap();
        assert_eq!(p.purity, 0.5);
        assert_eq!(p.histogram["A"], vec![1, 1]);
        assert!(purity::<&str>(&[], &[], 2).is_err());
    }

    #[test]
    fn histogram_examples() {
        let h = cluster_histogram(&[0, 0, 0], &["A", "A", "A"], 3).unwrap();
        assert_eq!(h["A"], vec![100.0, 0.0, 0.0]);
        let h = cluster_histogram(&[0, 0, 0, 1], &["A"; 4], 2).unwrap();
        assert_eq!(h["A"], vec![75.0, 25.0]);
    }

    proptest! {
        #[test]
        fn lloyd_never_increases_objective(
            pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 5..40),
            k in 1usize..5,
            seed in 0u64..1000,
        ) {
            prop_assume!(k <= pts.len());
            for init in [InitMode::PlusPlus, InitMode::Forgy] {
                let fit = kmeans_fit(&pts, KMeansOptions { k, seed, init, standardize: false, restarts: 1 }).unwrap();
                for w in fit.objective_trace.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
                }
                let again = kmeans_fit(&pts, KMeansOptions { k, seed, init, standardize: false, restarts: 1 }).unwrap();
                prop_assert_eq!(&again.model, &fit.model);
            }
        }

        #[test]
        fn purity_bounds_and_histogram_consistency(
            data in prop::collection::vec((0usize..4, 0usize..3), 1..60),
        ) {
            let assignments: Vec<usize> = data.iter().map(|d| d.0).collect();
            let labels: Vec<String> = data.iter().map(|d| format!("c{}", d.1)).collect();
            let rep = purity(&assignments, &labels, 4).unwrap();
            let n = data.len() as f64;
            let largest = rep.histogram.values().map(|r| r.iter().sum::<usize>()).max().unwrap();
            prop_assert!(rep.purity > 0.0 && rep.purity <= 1.0);
            prop_assert!(rep.purity + 1e-12 >= largest as f64 / n);
            for (label, row) in &rep.histogram {
                let count = labels.iter().filter(|l| *l == label).count();
                prop_assert_eq!(row.iter().sum::<usize>(), count);
            }
            let single_class = (0..4).all(|j| rep.histogram.values().filter(|r| r[j] > 0).count() <= 1);
            prop_assert_eq!(single_class, rep.purity == 1.0);
            let pct = cluster_histogram(&assignments, &labels, 4).unwrap();
            for row in pct.values() {
                prop_assert!((row.iter().sum::<f64>() - 100.0).abs() < 1e-9);
            }
        }
    }
}
