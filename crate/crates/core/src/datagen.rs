//! Synthetic in-distribution / shifted classification data, Dirichlet
//! label-skew partitioning and Jensen–Shannon heterogeneity diagnostics.
//!
//! In-distribution samples come from `C` isotropic Gaussian clusters whose
//! means form a regular simplex embedded in a seeded random subspace of
//! `R^d`. A [`ShiftSpec`] keeps the label semantics and moves the feature
//! geometry: class means are rotated in consecutive coordinate planes and
//! translated, the within-class spread is scaled and the label prior
//! replaced.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::tensorlab::{Matrix, SeededRng};

const STREAM_DATA: u64 = 0x0da7a;
const STREAM_PARTITION: u64 = 0x9a27;

/// Labeled feature vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        classes: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if features.len() != dim * labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            name: name.into(),
            dim,
            classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn raw_features(&self) -> &[f64] {
        &self.features
    }

    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidConfig(format!(
                    "index {i} out of range for dataset of {} samples",
                    self.len()
                )));
            }
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            name: name.into(),
            dim: self.dim,
            classes: self.classes,
            features,
            labels,
        })
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        histogram(self.labels.iter().copied(), self.classes)
    }
}

fn histogram(labels: impl Iterator<Item = usize>, classes: usize) -> Vec<usize> {
    let mut h = vec![0usize; classes];
    for l in labels {
        h[l] += 1;
    }
    h
}

fn normalize_counts(h: &[usize]) -> Vec<f64> {
    let total: usize = h.iter().sum();
    if total == 0 {
        return vec![0.0; h.len()];
    }
    h.iter().map(|c| *c as f64 / total as f64).collect()
}

/// Distribution shift applied to the in-distribution geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    /// Radians, applied in every coordinate plane `(2i, 2i+1)`.
    pub rotation_angle: f64,
    pub mean_shift: Vec<f64>,
    pub label_prior: Vec<f64>,
    /// Multiplier on the within-class standard deviation.
    pub noise_scale: f64,
}

impl ShiftSpec {
    pub fn identity(dim: usize, classes: usize) -> Self {
        Self {
            rotation_angle: 0.0,
            mean_shift: vec![0.0; dim],
            label_prior: vec![1.0 / classes as f64; classes],
            noise_scale: 1.0,
        }
    }

    pub fn validate(&self, dim: usize, classes: usize) -> Result<()> {
        if !(self.noise_scale > 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise_scale must be positive, got {}",
                self.noise_scale
            )));
        }
        if !self.rotation_angle.is_finite() {
            return Err(Error::NonFinite("rotation_angle"));
        }
        if self.mean_shift.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.mean_shift.len(),
            });
        }
        if self.mean_shift.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mean_shift"));
        }
        if self.label_prior.len() != classes {
            return Err(Error::DimensionMismatch {
                expected: classes,
                got: self.label_prior.len(),
            });
        }
        validate_distribution(&self.label_prior)
    }

    /// Class means after the shift, one row per class.
    pub fn shifted_means(&self, means: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(means.rows(), means.cols());
        for c in 0..means.rows() {
            let rotated = rotate_planes(means.row(c), self.rotation_angle);
            for (j, v) in rotated.iter().enumerate() {
                out[(c, j)] = v + self.mean_shift[j];
            }
        }
        out
    }
}

/// Rotates each consecutive coordinate pair by `angle`; an odd trailing
/// coordinate is left as is.
pub fn rotate_planes(v: &[f64], angle: f64) -> Vec<f64> {
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    let mut out = v.to_vec();
    for pair in out.chunks_exact_mut(2) {
        let (x, y) = (pair[0], pair[1]);
        pair[0] = c * x - s * y;
        pair[1] = s * x + c * y;
    }
    out
}

/// The three shifts of the default benchmark: a plane rotation, a
/// translation along an alternating-sign direction, and a milder rotation
/// with a skewed label prior. All three also widen the clusters.
pub fn benchmark_shifts(dim: usize, classes: usize) -> Vec<ShiftSpec> {
    let uniform = vec![1.0 / classes as f64; classes];
    let inv = 1.0 / libm::sqrt(dim as f64);
    let direction: Vec<f64> = (0..dim)
        .map(|i| if i % 2 == 0 { 2.0 * inv } else { -2.0 * inv })
        .collect();
    let weights: Vec<f64> = (0..classes).map(|c| libm::pow(0.5, c as f64)).collect();
    let total: f64 = weights.iter().sum();
    vec![
        ShiftSpec {
            rotation_angle: 0.5,
            mean_shift: vec![0.0; dim],
            label_prior: uniform.clone(),
            noise_scale: 1.3,
        },
        ShiftSpec {
            rotation_angle: 0.0,
            mean_shift: direction,
            label_prior: uniform,
            noise_scale: 1.3,
        },
        ShiftSpec {
            rotation_angle: 0.3,
            mean_shift: vec![0.0; dim],
            label_prior: weights.iter().map(|w| w / total).collect(),
            noise_scale: 1.8,
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub classes: usize,
    /// Euclidean norm of every class mean.
    pub class_sep: f64,
    /// Within-class standard deviation of the in-distribution clusters.
    pub noise_std: f64,
    pub shifts: Vec<ShiftSpec>,
}

impl GeneratorConfig {
    /// Default benchmark: `d = 32`, `C = 3`, 3000 training samples,
    /// 1000 per test set and [`benchmark_shifts`].
    pub fn benchmark(seed: u64) -> Self {
        Self {
            seed,
            n_train: 3000,
            n_test: 1000,
            dim: 32,
            classes: 3,
            class_sep: 3.0,
            noise_std: 1.0,
            shifts: benchmark_shifts(32, 3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidConfig("at least 2 classes required".into()));
        }
        if self.dim < 2 {
            return Err(Error::InvalidConfig("feature dimension must be >= 2".into()));
        }
        if self.n_train < self.classes {
            return Err(Error::InvalidConfig(format!(
                "n_train ({}) must be at least the class count ({})",
                self.n_train, self.classes
            )));
        }
        if !(self.noise_std > 0.0) || !(self.class_sep >= 0.0) {
            return Err(Error::InvalidConfig(
                "noise_std must be positive and class_sep nonnegative".into(),
            ));
        }
        for s in &self.shifts {
            s.validate(self.dim, self.classes)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub id_train: Dataset,
    pub id_test: Dataset,
    pub ood_tests: Vec<Dataset>,
    /// In-distribution class means, one row per class.
    pub class_means: Matrix,
}

/// Regular simplex of `classes` points with norm `sep`, embedded along
/// seeded orthonormal directions. Falls back to random unit directions when
/// `classes > dim`.
pub fn class_means(seed: u64, dim: usize, classes: usize, sep: f64) -> Matrix {
    let mut rng = SeededRng::derive(seed, STREAM_DATA, &[0x6e0]);
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    while dirs.len() < classes.min(dim) {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for b in &dirs {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if n > 1e-8 {
            dirs.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let mut means = Matrix::zeros(classes, dim);
    if classes <= dim {
        // Simplex vertex c: e_c - 1/C, which has norm sqrt((C-1)/C).
        let k = classes as f64;
        let vertex_norm = libm::sqrt((k - 1.0) / k);
        for c in 0..classes {
            for (i, dir) in dirs.iter().enumerate() {
                let coef = (if i == c { 1.0 } else { 0.0 }) - 1.0 / k;
                for j in 0..dim {
                    means[(c, j)] += sep * coef / vertex_norm * dir[j];
                }
            }
        }
    } else {
        for c in 0..classes {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
            v.iter_mut().for_each(|x| *x *= sep / n);
            for j in 0..dim {
                means[(c, j)] = v[j];
            }
        }
    }
    means
}

pub fn generate(cfg: &GeneratorConfig) -> Result<GeneratedData> {
    cfg.validate()?;
    let means = class_means(cfg.seed, cfg.dim, cfg.classes, cfg.class_sep);

    let mut rng = SeededRng::derive(cfg.seed, STREAM_DATA, &[1]);
    let id_train = sample_balanced("id_train", &means, cfg.noise_std, cfg.n_train, &mut rng)?;
    let mut rng = SeededRng::derive(cfg.seed, STREAM_DATA, &[2]);
    let id_test = sample_balanced("id_test", &means, cfg.noise_std, cfg.n_test, &mut rng)?;

    let mut ood_tests = Vec::with_capacity(cfg.shifts.len());
    for (k, shift) in cfg.shifts.iter().enumerate() {
        let mut rng = SeededRng::derive(cfg.seed, STREAM_DATA, &[3, k as u64]);
        let shifted = shift.shifted_means(&means);
        let mut labels = Vec::with_capacity(cfg.n_test);
        for _ in 0..cfg.n_test {
            labels.push(sample_categorical(&shift.label_prior, &mut rng));
        }
        let features = sample_features(
            &shifted,
            cfg.noise_std * shift.noise_scale,
            &labels,
            &mut rng,
        );
        ood_tests.push(Dataset::new(
            format!("ood{}", k + 1),
            cfg.dim,
            cfg.classes,
            features,
            labels,
        )?);
    }

    Ok(GeneratedData {
        id_train,
        id_test,
        ood_tests,
        class_means: means,
    })
}

/// Bayes rule for isotropic Gaussian classes with the given means, common
/// standard deviation and prior. Ties go to the lowest class id.
pub fn bayes_predict(means: &Matrix, std: f64, prior: &[f64], x: &[f64]) -> usize {
    let var2 = 2.0 * std * std;
    let mut best = (0, f64::NEG_INFINITY);
    for c in 0..means.rows() {
        let d2: f64 = means.row(c).iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
        let score = libm::log(prior[c]) - d2 / var2;
        if score > best.1 {
            best = (c, score);
        }
    }
    best.0
}

pub fn bayes_accuracy(means: &Matrix, std: f64, prior: &[f64], ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if means.cols() != ds.dim() || means.rows() != prior.len() {
        return Err(Error::ShapeMismatch(format!(
            "means {:?}, prior {} vs dataset d={}",
            means.shape(),
            prior.len(),
            ds.dim()
        )));
    }
    let hits = (0..ds.len())
        .filter(|&i| bayes_predict(means, std, prior, ds.features(i)) == ds.label(i))
        .count();
    Ok(hits as f64 / ds.len() as f64)
}

fn sample_balanced(
    name: &str,
    means: &Matrix,
    noise_std: f64,
    n: usize,
    rng: &mut SeededRng,
) -> Result<Dataset> {
    let classes = means.rows();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    shuffle(&mut labels, rng);
    let features = sample_features(means, noise_std, &labels, rng);
    Dataset::new(name, means.cols(), classes, features, labels)
}

fn sample_features(means: &Matrix, std: f64, labels: &[usize], rng: &mut SeededRng) -> Vec<f64> {
    let dim = means.cols();
    let mut out = Vec::with_capacity(labels.len() * dim);
    for &y in labels {
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut *rng);
            out.push(means[(y, j)] + std * z);
        }
    }
    out
}

/// Fisher–Yates.
pub fn shuffle<T>(items: &mut [T], rng: &mut SeededRng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

fn sample_categorical(p: &[f64], rng: &mut SeededRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave `acc` a hair below 1: fall back to the last
    // category with positive mass.
    p.iter().rposition(|v| *v > 0.0).unwrap_or(p.len() - 1)
}

/// Assignment of sample indices to clients.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
    pub alpha: f64,
    pub seed: u64,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.client_indices.iter().map(Vec::len).collect()
    }

    /// Checks disjointness, nonempty shards and index bounds.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (k, idx) in self.client_indices.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::InvalidConfig(format!("client {k} has no samples")));
            }
            for &i in idx {
                if i >= n {
                    return Err(Error::InvalidConfig(format!(
                        "client {k}: index {i} out of range ({n} samples)"
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidConfig(format!(
                        "index {i} assigned to more than one client"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    pub fn shards(&self, ds: &Dataset) -> Result<Vec<Dataset>> {
        self.client_indices
            .iter()
            .enumerate()
            .map(|(k, idx)| ds.subset(format!("{}/client{k}", ds.name), idx))
            .collect()
    }

    pub fn label_histograms(&self, ds: &Dataset) -> Vec<Vec<usize>> {
        self.client_indices
            .iter()
            .map(|idx| histogram(idx.iter().map(|&i| ds.label(i)), ds.classes()))
            .collect()
    }
}

/// Per-class Dirichlet label skew: for every class, client proportions are
/// drawn from `Dir(alpha · 1_K)`; the class's samples are shuffled and cut
/// into consecutive runs sized by the cumulative proportions.
///
/// Clients left empty receive one sample from the currently largest client.
pub fn dirichlet_partition(ds: &Dataset, clients: usize, alpha: f64, seed: u64) -> Result<Partition> {
    if clients == 0 {
        return Err(Error::InvalidConfig("at least one client required".into()));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidConfig(format!("alpha must be positive, got {alpha}")));
    }
    if ds.len() < clients {
        return Err(Error::InvalidConfig(format!(
            "{} samples cannot fill {clients} clients",
            ds.len()
        )));
    }
    let mut rng = SeededRng::derive(seed, STREAM_PARTITION, &[alpha.to_bits(), clients as u64]);
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|_| Error::InvalidConfig(format!("invalid Dirichlet concentration {alpha}")))?;

    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for class in 0..ds.classes() {
        let mut weights: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 && total.is_finite() {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            // Every draw underflowed: the whole class lands on one client.
            let k = rng.random_range(0..clients);
            weights = vec![0.0; clients];
            weights[k] = 1.0;
        }
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.label(i) == class).collect();
        shuffle(&mut members, &mut rng);
        let n = members.len();
        let mut start = 0usize;
        let mut cumulative = 0.0;
        for (k, w) in weights.iter().enumerate() {
            cumulative += w;
            let end = if k + 1 == clients {
                n
            } else {
                ((cumulative * n as f64) as usize).clamp(start, n)
            };
            assigned[k].extend_from_slice(&members[start..end]);
            start = end;
        }
    }

    while let Some(empty) = assigned.iter().position(Vec::is_empty) {
        let donor = (0..clients)
            .max_by(|&a, &b| assigned[a].len().cmp(&assigned[b].len()).then(b.cmp(&a)))
            .expect("clients >= 1");
        let moved = assigned[donor].pop().expect("donor is nonempty");
        log::warn!("client {empty} drew no samples; moved sample {moved} from client {donor}");
        assigned[empty].push(moved);
    }
    for idx in &mut assigned {
        idx.sort_unstable();
    }

    Ok(Partition {
        client_indices: assigned,
        alpha,
        seed,
    })
}

fn validate_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution("empty vector".into()));
    }
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidDistribution("negative or non-finite entry".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("sums to {total}")));
    }
    Ok(())
}

/// Square root of the Jensen–Shannon divergence (natural log).
pub fn js_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    validate_distribution(p)?;
    validate_distribution(q)?;
    let mut div = 0.0;
    for (a, b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if *a > 0.0 {
            div += 0.5 * a * libm::log(a / m);
        }
        if *b > 0.0 {
            div += 0.5 * b * libm::log(b / m);
        }
    }
    Ok(libm::sqrt(div.max(0.0)).min(libm::sqrt(core::f64::consts::LN_2)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JsSummary {
    /// Mean over client pairs `i < j`.
    pub mean: f64,
    pub max: f64,
}

/// Symmetric `K×K` matrix of label-distribution JS distances between clients.
pub fn pairwise_js(part: &Partition, ds: &Dataset) -> Result<(Matrix, JsSummary)> {
    let dists: Vec<Vec<f64>> = part
        .label_histograms(ds)
        .iter()
        .map(|h| normalize_counts(h))
        .collect();
    let k = dists.len();
    let mut out = Matrix::zeros(k, k);
    let (mut sum, mut max, mut pairs) = (0.0, 0.0f64, 0usize);
    for i in 0..k {
        for j in i + 1..k {
            let d = js_distance(&dists[i], &dists[j])?;
            out[(i, j)] = d;
            out[(j, i)] = d;
            sum += d;
            max = max.max(d);
            pairs += 1;
        }
    }
    let mean = if pairs == 0 { 0.0 } else { sum / pairs as f64 };
    Ok((out, JsSummary { mean, max }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels_only(labels: Vec<usize>, classes: usize) -> Dataset {
        let n = labels.len();
        Dataset::new("t", 1, classes, vec![0.0; n], labels).unwrap()
    }

    #[test]
    fn js_examples() {
        assert_eq!(js_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let max = js_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((max - 0.832_554_611_157_697_7).abs() < 1e-12);
        // sqrt(JS) for (1/2, 1/2) vs (1, 0): mpmath at 40 digits.
        let d = js_distance(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((d - 0.464_501_404_022_459_0).abs() < 1e-12);
    }

    #[test]
    fn js_rejects_invalid() {
        assert!(js_distance(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        assert!(js_distance(&[1.5, -0.5], &[0.5, 0.5]).is_err());
        assert!(js_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn single_client_gets_everything() {
        let ds = labels_only((0..30).map(|i| i % 3).collect(), 3);
        let p = dirichlet_partition(&ds, 1, 0.1, 4).unwrap();
        assert_eq!(p.client_indices, vec![(0..30).collect::<Vec<_>>()]);
    }

    #[test]
    fn empty_clients_are_repaired() {
        let ds = labels_only(vec![0; 12], 2);
        let p = dirichlet_partition(&ds, 6, 0.01, 1).unwrap();
        p.validate(12).unwrap();
        assert_eq!(p.sizes().iter().sum::<usize>(), 12);
    }

    #[test]
    fn concentrated_alpha_matches_global_histogram() {
        let ds = labels_only((0..4000).map(|i| i % 4).collect(), 4);
        let p = dirichlet_partition(&ds, 4, 1e6, 9).unwrap();
        for h in p.label_histograms(&ds) {
            let total: usize = h.iter().sum();
            for c in h {
                let share = c as f64 / total as f64;
                assert!((share - 0.25).abs() / 0.25 < 0.05, "share {share}");
            }
        }
    }

    #[test]
    fn disjoint_shards_are_maximally_distant() {
        let ds = labels_only(vec![0, 0, 1, 1], 2);
        let part = Partition {
            client_indices: vec![vec![0, 1], vec![2, 3]],
            alpha: 1.0,
            seed: 0,
        };
        let (m, s) = pairwise_js(&part, &ds).unwrap();
        assert!((m[(0, 1)] - libm::sqrt(core::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(m[(0, 0)], 0.0);
        assert_eq!(s.mean, m[(0, 1)]);

        let same = Partition {
            client_indices: vec![vec![0, 2], vec![1, 3]],
            alpha: 1.0,
            seed: 0,
        };
        let (m, _) = pairwise_js(&same, &ds).unwrap();
        assert!(m.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn partition_validation() {
        let bad = Partition {
            client_indices: vec![vec![0, 1], vec![1]],
            alpha: 1.0,
            seed: 0,
        };
        assert!(bad.validate(3).is_err());
        let empty = Partition {
            client_indices: vec![vec![0], vec![]],
            alpha: 1.0,
            seed: 0,
        };
        assert!(empty.validate(3).is_err());
    }

    #[test]
    fn shift_validation() {
        let mut s = ShiftSpec::identity(3, 2);
        s.validate(3, 2).unwrap();
        s.noise_scale = 0.0;
        assert!(s.validate(3, 2).is_err());
        let mut s = ShiftSpec::identity(3, 2);
        s.label_prior = vec![0.5, 0.4];
        assert!(s.validate(3, 2).is_err());
        assert!(ShiftSpec::identity(3, 2).validate(4, 2).is_err());
    }

    #[test]
    fn simplex_means_have_requested_norm_and_zero_centroid() {
        let m = class_means(3, 8, 3, 2.5);
        for c in 0..3 {
            let n = libm::sqrt(m.row(c).iter().map(|v| v * v).sum::<f64>());
            assert!((n - 2.5).abs() < 1e-12);
        }
        for j in 0..8 {
            assert!((0..3).map(|c| m[(c, j)]).sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_by_pi_negates_even_dims() {
        let v = rotate_planes(&[1.0, 2.0, -3.0, 0.5], core::f64::consts::PI);
        for (a, b) in v.iter().zip([-1.0, -2.0, 3.0, -0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
