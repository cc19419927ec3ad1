use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `floor(sqrt(n))`, at least 1.
pub fn default_k(n: usize) -> usize {
    let mut k = (n as f64).sqrt() as usize;
    while k * k > n {
        k -= 1;
    }
    while (k + 1) * (k + 1) <= n {
        k += 1;
    }
    k.max(1)
}

/// Brute-force Euclidean k-nearest-neighbour majority vote.
///
/// Neighbours are ranked by `(distance, label)`, and vote ties go to the
/// lowest class index, so predictions do not depend on the order of the
/// stored points.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnClassifier {
    points: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    k: usize,
}

impl KnnClassifier {
    pub fn new(points: Tensor, labels: Vec<usize>, num_classes: usize, k: usize) -> Result<Self> {
        let (n, _) = points.dims2()?;
        if n == 0 {
            return Err(Error::contract("kNN needs a non-empty training set"));
        }
        if labels.len() != n {
            return Err(Error::dim("KnnClassifier", points.shape(), &[labels.len()]));
        }
        if k == 0 || k > n {
            return Err(Error::contract(format!("k = {k} must lie in 1..={n}")));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            points,
            labels,
            num_classes,
            k,
        })
    }

    /// Uses `k = floor(sqrt(N))`.
    pub fn with_default_k(points: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let n = points.shape().first().copied().unwrap_or(0);
        Self::new(points, labels, num_classes, default_k(n))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.points.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classify(&self, query: &[f32]) -> Result<usize> {
        if query.len() != self.dim() {
            return Err(Error::dim("knn_classify", &[self.dim()], &[query.len()]));
        }
        let mut scratch = Vec::with_capacity(self.len());
        Ok(self.vote(query, &mut scratch))
    }

    pub fn classify_batch(&self, queries: &Tensor) -> Result<Vec<usize>> {
        let (n, d) = queries.dims2()?;
        if d != self.dim() {
            return Err(Error::dim("knn_classify", self.points.shape(), queries.shape()));
        }
        let mut scratch = Vec::with_capacity(self.len());
        Ok((0..n).map(|i| self.vote(queries.row(i), &mut scratch)).collect())
    }

    fn vote(&self, query: &[f32], scratch: &mut Vec<(f32, usize)>) -> usize {
        scratch.clear();
        let d = self.dim();
        for (i, p) in self.points.data().chunks_exact(d).enumerate() {
            let dist: f32 = p.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            scratch.push((dist, self.labels[i]));
        }
        let order = |a: &(f32, usize), b: &(f32, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < scratch.len() {
            scratch.select_nth_unstable_by(self.k - 1, order);
        }
        let mut counts = vec![0usize; self.num_classes];
        for &(_, y) in &scratch[..self.k] {
            counts[y] += 1;
        }
        counts
            .iter()
            .enumerate()
            .fold((0, 0), |(bi, bc), (i, &c)| match c.cmp(&bc) {
                Ordering::Greater => (i, c),
                _ => (bi, bc),
            })
            .0
    }
}
