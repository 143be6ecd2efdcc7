//! Datasets: synthetic generators, IDX and CSV loaders, and the
//! subsampling/balancing transforms used to build skewed or balanced splits.

mod idx;
mod tabular;

pub use idx::{load_idx, load_idx_images, load_idx_labels, load_idx_pair, write_idx_images, write_idx_labels};
pub use tabular::{preprocess_tabular, read_csv_rows, ColumnKind, ColumnSpec, TabularEncoder, TabularRows, TabularSchema, Transformed};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};

/// Features, labels in `0..num_classes`, and optional protected-group ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    groups: Option<Vec<usize>>,
    num_classes: usize,
    num_groups: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Dimension {
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::param(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            groups: None,
            num_classes,
            num_groups: 0,
        })
    }

    pub fn with_groups(mut self, groups: Vec<usize>, num_groups: usize) -> Result<Self> {
        if groups.len() != self.labels.len() {
            return Err(Error::Dimension {
                expected: self.labels.len(),
                got: groups.len(),
            });
        }
        if let Some(&bad) = groups.iter().find(|&&g| g >= num_groups) {
            return Err(Error::param(format!(
                "group {bad} out of range for {num_groups} groups"
            )));
        }
        self.groups = Some(groups);
        self.num_groups = num_groups;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_groups];
        for &g in self.groups.iter().flatten() {
            counts[g] += 1;
        }
        counts
    }

    /// Rows at `indices`, in the given order; metadata carried over.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            groups: self
                .groups
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i]).collect()),
            num_classes: self.num_classes,
            num_groups: self.num_groups,
        }
    }

    /// Random split into `(train, test)` with `test_fraction` of rows held out.
    pub fn split(&self, test_fraction: f64, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::param(format!(
                "test fraction must lie in [0, 1), got {test_fraction}"
            )));
        }
        let n_test = (test_fraction * self.len() as f64).round() as usize;
        let test_idx = rng.sample_without_replacement(self.len(), n_test);
        let mut is_test = vec![false; self.len()];
        test_idx.iter().for_each(|&i| is_test[i] = true);
        let train_idx: Vec<usize> = (0..self.len()).filter(|&i| !is_test[i]).collect();
        Ok((self.subset(&train_idx), self.subset(&test_idx)))
    }
}

/// One-dimensional two-mode data: `⌊p_major·n⌋` points at `mode_lo`, the rest
/// at `mode_hi`, each with `N(0, jitter²)` added. Labels mark the mode.
pub fn gen_bimodal(
    n: usize,
    p_major: f64,
    mode_lo: f64,
    mode_hi: f64,
    jitter_std: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::param("bimodal dataset needs n > 0"));
    }
    if !(p_major > 0.0 && p_major < 1.0) {
        return Err(Error::param(format!("p_major must lie in (0, 1), got {p_major}")));
    }
    if !(jitter_std >= 0.0) {
        return Err(Error::param("jitter std must be non-negative"));
    }
    let n_major = (p_major * n as f64).floor() as usize;
    let mut values = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (center, label) = if i < n_major { (mode_lo, 0) } else { (mode_hi, 1) };
        let noise = if jitter_std > 0.0 { jitter_std * rng.standard_normal() } else { 0.0 };
        values.push(center + noise);
        labels.push(label);
    }
    Dataset::new(Matrix::from_vec(n, 1, values)?, labels, 2)
}

/// Subsample `class_id` without replacement down to `⌊keep_fraction·count⌋`.
/// All other rows and the relative order are kept.
pub fn skew_class(ds: &Dataset, class_id: usize, keep_fraction: f64, rng: &mut Rng) -> Result<Dataset> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::param(format!(
            "keep fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    if class_id >= ds.num_classes() {
        return Err(Error::param(format!(
            "class {class_id} out of range for {} classes",
            ds.num_classes()
        )));
    }
    let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class_id).collect();
    if members.is_empty() {
        log::warn!("skew_class: class {class_id} has no samples; dataset left unchanged");
        return Ok(ds.clone());
    }
    let keep = (keep_fraction * members.len() as f64).floor() as usize;
    let mut kept = vec![true; ds.len()];
    members.iter().for_each(|&i| kept[i] = false);
    for j in rng.sample_without_replacement(members.len(), keep) {
        kept[members[j]] = true;
    }
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| kept[i]).collect();
    Ok(ds.subset(&idx))
}

/// Subsample every protected group to the size of the smallest one.
pub fn balance_by_attribute(ds: &Dataset, rng: &mut Rng) -> Result<Dataset> {
    let groups = ds
        .groups()
        .ok_or_else(|| Error::Precondition("balancing requires protected-group labels".into()))?;
    if ds.num_groups() < 2 {
        return Err(Error::Precondition(format!(
            "balancing requires at least 2 groups, got {}",
            ds.num_groups()
        )));
    }
    let target = ds.group_counts().into_iter().min().unwrap_or(0);
    let mut kept = vec![false; ds.len()];
    for g in 0..ds.num_groups() {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| groups[i] == g).collect();
        for j in rng.sample_without_replacement(members.len(), target) {
            kept[members[j]] = true;
        }
    }
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| kept[i]).collect();
    Ok(ds.subset(&idx))
}

/// Parameters of the synthetic skewed classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewedBlobs {
    pub n_per_class: usize,
    pub num_classes: usize,
    pub minority_class: usize,
    pub keep_fraction: f64,
    pub cluster_separation: f64,
    pub dim: usize,
}

/// Gaussian blobs, one per class, with unit within-class variance and class
/// means pairwise `cluster_separation` apart (exactly when `K <= d`). The
/// minority class is then subsampled to `keep_fraction`.
///
/// Class means are drawn from `rng.fork("means")`, so two calls with the same
/// base seed share geometry; sample noise comes from the caller's stream.
pub fn gen_skewed_classification(cfg: &SkewedBlobs, rng: &mut Rng) -> Result<Dataset> {
    if cfg.num_classes < 2 {
        return Err(Error::param("need at least 2 classes"));
    }
    if cfg.dim == 0 {
        return Err(Error::param("need dim >= 1"));
    }
    if !(cfg.keep_fraction > 0.0 && cfg.keep_fraction <= 1.0) {
        return Err(Error::param(format!(
            "keep fraction must lie in (0, 1], got {}",
            cfg.keep_fraction
        )));
    }
    let means = class_means(cfg, &mut rng.fork("means"));
    let (k, d) = (cfg.num_classes, cfg.dim);
    let n = cfg.n_per_class * k;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        labels.push(class);
        data.extend(means[class].iter().map(|m| m + rng.standard_normal()));
    }
    let full = Dataset::new(Matrix::from_vec(n, d, data)?, labels, k)?;
    if cfg.keep_fraction < 1.0 {
        skew_class(&full, cfg.minority_class, cfg.keep_fraction, rng)
    } else {
        Ok(full)
    }
}

fn class_means(cfg: &SkewedBlobs, rng: &mut Rng) -> Vec<Vec<f64>> {
    let radius = cfg.cluster_separation / std::f64::consts::SQRT_2;
    (0..cfg.num_classes)
        .map(|c| {
            let mut m = vec![0.0; cfg.dim];
            if cfg.num_classes <= cfg.dim {
                m[c] = radius;
            } else {
                m.iter_mut().for_each(|x| *x = rng.standard_normal());
                let norm = crate::numkit::l2_norm(&m).max(f64::MIN_POSITIVE);
                m.iter_mut().for_each(|x| *x *= radius / norm);
            }
            m
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(counts: &[usize]) -> Dataset {
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        let feats: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
        Dataset::new(Matrix::from_vec(labels.len(), 1, feats).unwrap(), labels, counts.len()).unwrap()
    }

    #[test]
    fn bimodal_point_masses() {
        let ds = gen_bimodal(10, 0.6, 0.0, 1.0, 0.0, &mut Rng::new(1)).unwrap();
        let xs = ds.features().as_slice();
        assert_eq!(xs.iter().filter(|&&x| x == 0.0).count(), 6);
        assert_eq!(xs.iter().filter(|&&x| x == 1.0).count(), 4);
        let mean = xs.iter().sum::<f64>() / 10.0;
        assert!((mean - 0.4).abs() < 1e-15);
        assert_eq!(ds.class_counts(), vec![6, 4]);
    }

    #[test]
    fn bimodal_jittered_mean() {
        let ds = gen_bimodal(10_000, 0.6, 0.0, 1.0, 0.05, &mut Rng::new(2)).unwrap();
        let mean = ds.features().as_slice().iter().sum::<f64>() / 1e4;
        assert!((mean - 0.4).abs() < 0.02);
    }

    #[test]
    fn bimodal_rejects_bad_params() {
        let mut rng = Rng::new(0);
        assert!(gen_bimodal(0, 0.6, 0.0, 1.0, 0.0, &mut rng).is_err());
        assert!(gen_bimodal(10, 1.0, 0.0, 1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn skew_to_ten_percent() {
        let ds = labelled(&[6000; 10]);
        let skewed = skew_class(&ds, 8, 0.1, &mut Rng::new(3)).unwrap();
        let counts = skewed.class_counts();
        assert_eq!(counts[8], 600);
        assert!(counts.iter().enumerate().all(|(c, &n)| c == 8 || n == 6000));
    }

    #[test]
    fn skew_identity_and_single_class() {
        let ds = labelled(&[30, 20]);
        assert_eq!(skew_class(&ds, 0, 1.0, &mut Rng::new(4)).unwrap(), ds);

        let one = labelled(&[100]);
        let s = skew_class(&one, 0, 0.25, &mut Rng::new(5)).unwrap();
        assert_eq!(s.len(), 25);
        assert!(s.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn skew_absent_class_is_noop() {
        let ds = labelled(&[10, 0, 5]);
        assert_eq!(skew_class(&ds, 1, 0.5, &mut Rng::new(6)).unwrap(), ds);
    }

    #[test]
    fn skew_preserves_rows() {
        let ds = labelled(&[50, 50]);
        let s = skew_class(&ds, 1, 0.3, &mut Rng::new(7)).unwrap();
        // features encode the original index, so every surviving row must match
        for (row, &label) in s.features().iter_rows().zip(s.labels()) {
            let orig = row[0] as usize;
            assert_eq!(ds.labels()[orig], label);
        }
        let order: Vec<f64> = s.features().as_slice().to_vec();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
    }

    fn grouped(sizes: &[usize]) -> Dataset {
        let groups: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &n)| std::iter::repeat_n(g, n))
            .collect();
        let n = groups.len();
        let feats: Vec<f64> = (0..n).map(|i| i as f64).collect();
        Dataset::new(Matrix::from_vec(n, 1, feats).unwrap(), vec![0; n], 1)
            .unwrap()
            .with_groups(groups, sizes.len())
            .unwrap()
    }

    #[test]
    fn balance_examples() {
        let mut rng = Rng::new(8);
        assert_eq!(balance_by_attribute(&grouped(&[100, 60]), &mut rng).unwrap().group_counts(), vec![60, 60]);
        assert_eq!(balance_by_attribute(&grouped(&[50, 50]), &mut rng).unwrap().group_counts(), vec![50, 50]);
        assert_eq!(
            balance_by_attribute(&grouped(&[90, 60, 30]), &mut rng).unwrap().group_counts(),
            vec![30, 30, 30]
        );
    }

    #[test]
    fn balance_requires_groups() {
        let ds = labelled(&[5, 5]);
        assert!(matches!(
            balance_by_attribute(&ds, &mut Rng::new(0)),
            Err(Error::Precondition(_))
        ));
        assert!(balance_by_attribute(&grouped(&[5]), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn skewed_blobs_counts() {
        let cfg = SkewedBlobs {
            n_per_class: 1000,
            num_classes: 2,
            minority_class: 1,
            keep_fraction: 0.1,
            cluster_separation: 4.0,
            dim: 2,
        };
        let ds = gen_skewed_classification(&cfg, &mut Rng::new(9)).unwrap();
        assert_eq!(ds.class_counts(), vec![1000, 100]);

        let balanced = SkewedBlobs { keep_fraction: 1.0, ..cfg.clone() };
        assert_eq!(gen_skewed_classification(&balanced, &mut Rng::new(9)).unwrap().class_counts(), vec![1000, 1000]);

        let bad = SkewedBlobs { keep_fraction: 0.0, ..cfg };
        assert!(gen_skewed_classification(&bad, &mut Rng::new(9)).is_err());
    }

    #[test]
    fn blob_means_are_separated() {
        let cfg = SkewedBlobs {
            n_per_class: 4000,
            num_classes: 3,
            minority_class: 0,
            keep_fraction: 1.0,
            cluster_separation: 4.0,
            dim: 5,
        };
        let ds = gen_skewed_classification(&cfg, &mut Rng::new(10)).unwrap();
        let mut sums = vec![vec![0.0; 5]; 3];
        for (row, &l) in ds.features().iter_rows().zip(ds.labels()) {
            crate::numkit::axpy(1.0 / 4000.0, row, &mut sums[l]);
        }
        let diff: Vec<f64> = sums[0].iter().zip(&sums[1]).map(|(a, b)| a - b).collect();
        assert!((crate::numkit::l2_norm(&diff) - 4.0).abs() < 0.1);
    }

    #[test]
    fn split_partitions_rows() {
        let ds = labelled(&[40, 60]);
        let (train, test) = ds.split(0.25, &mut Rng::new(11)).unwrap();
        assert_eq!(train.len() + test.len(), 100);
        assert_eq!(test.len(), 25);
    }
}
