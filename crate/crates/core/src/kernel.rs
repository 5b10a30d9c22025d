//! Similarity kernels `K(x, x') >= 0` and kernel-matrix evaluation.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::neural::EmbeddingNet;

/// An externally computed kernel over a fixed set of (training) points.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedKernel {
    values: Vec<Vec<f64>>,
    index: HashMap<Vec<u64>, usize>,
}

fn point_key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

impl PrecomputedKernel {
    /// Validates a square matrix with entries in `[0, 1]`, symmetric to 1e-9.
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::KernelMatrix("empty matrix".into()));
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != n {
                return Err(Error::KernelMatrix(format!(
                    "row {} has {} entries, expected {n} (matrix must be square)",
                    i + 1,
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::KernelMatrix(format!(
                    "entry {v} in row {} outside [0, 1]",
                    i + 1
                )));
            }
        }
        for i in 0..n {
            for j in 0..i {
                if (values[i][j] - values[j][i]).abs() > 1e-9 {
                    return Err(Error::KernelMatrix(format!(
                        "asymmetric entries ({}, {}) and ({}, {})",
                        i + 1,
                        j + 1,
                        j + 1,
                        i + 1
                    )));
                }
            }
        }
        Ok(Self {
            values,
            index: HashMap::new(),
        })
    }

    /// Associates row `i` of the matrix with subject `i` of `points`.
    pub fn with_points(mut self, points: &SurvivalDataset) -> Result<Self> {
        if points.len() != self.values.len() {
            return Err(Error::KernelMatrix(format!(
                "matrix has {} rows but dataset has {} subjects",
                self.values.len(),
                points.len()
            )));
        }
        self.index = points
            .subjects()
            .iter()
            .enumerate()
            .rev()
            .map(|(i, s)| (point_key(&s.features), i))
            .collect();
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.values.len();
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        Ok(self.values[i][j])
    }

    pub fn index_of(&self, x: &[f64]) -> Option<usize> {
        self.index.get(&point_key(x)).copied()
    }
}

/// Similarity function used by the conditional Kaplan-Meier estimator and by
/// the locally weighted conformal procedure.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// `K = 1`; reduces every weighted procedure to its unweighted form.
    Constant,
    /// `K = 1{|x - x'| <= sigma}`
    Box { sigma: f64 },
    /// `K = exp(-|psi(x) - psi(x')|^2)` with `psi` in evaluation mode.
    GaussianEmbedding(EmbeddingNet),
    Precomputed(PrecomputedKernel),
}

/// A point in the representation a kernel compares: the raw features, the
/// embedding, or a matrix index.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelPoint {
    Raw(Vec<f64>),
    Indexed(usize),
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

impl Kernel {
    /// Feature dimension the kernel expects, when it has one.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            Kernel::GaussianEmbedding(net) => Some(net.input_dim()),
            _ => None,
        }
    }

    /// Maps a feature vector into the kernel's comparison space.
    pub fn represent(&self, x: &[f64]) -> Result<KernelPoint> {
        match self {
            Kernel::Constant | Kernel::Box { .. } => Ok(KernelPoint::Raw(x.to_vec())),
            Kernel::GaussianEmbedding(net) => Ok(KernelPoint::Raw(net.embed(x)?)),
            Kernel::Precomputed(k) => k.index_of(x).map(KernelPoint::Indexed).ok_or(Error::UnindexedPoint),
        }
    }

    pub fn represent_all(&self, xs: &[&[f64]]) -> Result<Vec<KernelPoint>> {
        match self {
            Kernel::GaussianEmbedding(net) if !xs.is_empty() => {
                let z = net.forward_batch(&crate::neural::batch_matrix(xs), crate::neural::Mode::Eval)?;
                Ok((0..z.nrows())
                    .map(|i| KernelPoint::Raw(z.row(i).iter().copied().collect()))
                    .collect())
            }
            _ => xs.iter().map(|x| self.represent(x)).collect(),
        }
    }

    /// Kernel value between two represented points.
    pub fn between(&self, a: &KernelPoint, b: &KernelPoint) -> Result<f64> {
        match (self, a, b) {
            (Kernel::Constant, KernelPoint::Raw(u), KernelPoint::Raw(v)) => {
                if u.len() != v.len() {
                    return Err(Error::DimensionMismatch {
                        expected: u.len(),
                        actual: v.len(),
                    });
                }
                Ok(1.0)
            }
            (Kernel::Box { sigma }, KernelPoint::Raw(u), KernelPoint::Raw(v)) => {
                if u.len() != v.len() {
                    return Err(Error::DimensionMismatch {
                        expected: u.len(),
                        actual: v.len(),
                    });
                }
                Ok(if squared_distance(u, v).sqrt() <= *sigma { 1.0 } else { 0.0 })
            }
            (Kernel::GaussianEmbedding(_), KernelPoint::Raw(u), KernelPoint::Raw(v)) => {
                Ok((-squared_distance(u, v)).exp())
            }
            (Kernel::Precomputed(k), KernelPoint::Indexed(i), KernelPoint::Indexed(j)) => k.get(*i, *j),
            (Kernel::Precomputed(_), _, _) => Err(Error::UnindexedPoint),
            _ => Err(Error::InvalidArgument("kernel point representation mismatch".into())),
        }
    }

    /// `K(x, x')`.
    pub fn evaluate(&self, x: &[f64], x_prime: &[f64]) -> Result<f64> {
        if x.len() != x_prime.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                actual: x_prime.len(),
            });
        }
        self.between(&self.represent(x)?, &self.represent(x_prime)?)
    }

    /// Kernel values of `x` against every represented point.
    pub fn weights(&self, x: &[f64], points: &[KernelPoint]) -> Result<Vec<f64>> {
        let q = self.represent(x)?;
        points.iter().map(|p| self.between(&q, p)).collect()
    }
}

/// Dense kernel matrix with the subject indices its rows and columns came from.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: Vec<Vec<f64>>,
    pub row_indices: Vec<usize>,
    pub col_indices: Vec<usize>,
}

impl KernelMatrix {
    pub fn from_values(values: Vec<Vec<f64>>) -> Self {
        let n = values.len();
        let m = values.first().map_or(0, |r| r.len());
        Self {
            values,
            row_indices: (0..n).collect(),
            col_indices: (0..m).collect(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.values.len()
    }

    pub fn ncols(&self) -> usize {
        self.col_indices.len()
    }
}

impl From<&PrecomputedKernel> for KernelMatrix {
    fn from(k: &PrecomputedKernel) -> Self {
        Self::from_values(k.values.clone())
    }
}

/// Entry `(i, j)` is `K(rows[i], cols[j])`. Rows are evaluated in parallel;
/// entries are independent so the result does not depend on scheduling.
pub fn matrix(kernel: &Kernel, rows: &SurvivalDataset, cols: &SurvivalDataset) -> Result<KernelMatrix> {
    if rows.feature_dim() != cols.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: rows.feature_dim(),
            actual: cols.feature_dim(),
        });
    }
    let row_points = kernel.represent_all(&rows.features())?;
    let col_points = kernel.represent_all(&cols.features())?;
    let values = row_points
        .par_iter()
        .map(|r| col_points.iter().map(|c| kernel.between(r, c)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(KernelMatrix {
        values,
        row_indices: (0..rows.len()).collect(),
        col_indices: (0..cols.len()).collect(),
    })
}

/// Reads a headerless square CSV of kernel values. When `points` is given,
/// row `i` is bound to subject `i` so the kernel can be evaluated on features.
pub fn load_kernel_matrix(path: impl AsRef<Path>, points: Option<&SurvivalDataset>) -> Result<Kernel> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut values = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::UnparseableCell {
                    row: r + 1,
                    column: format!("{}", c + 1),
                    value: cell.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        values.push(row);
    }
    let kernel = PrecomputedKernel::new(values)?;
    let kernel = match points {
        Some(p) => kernel.with_points(p)?,
        None => kernel,
    };
    Ok(Kernel::Precomputed(kernel))
}

/// Target embedding distance implied by a kernel value: `sqrt(log(1 / k))`.
pub fn implied_distance(k: f64) -> f64 {
    (1.0 / k).ln().max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn gaussian_self_similarity_and_unit_distance() {
        let k = Kernel::GaussianEmbedding(EmbeddingNet::basic(1));
        assert_eq!(k.evaluate(&[0.7], &[0.7]).unwrap(), 1.0);
        let v = k.evaluate(&[0.0], &[1.0]).unwrap();
        assert!((v - 0.367_879_441_171_442_3).abs() < 1e-15);
    }

    #[test]
    fn box_kernel() {
        let k = Kernel::Box { sigma: 2.0 };
        assert_eq!(k.evaluate(&[0.0, 0.0], &[3.0, 0.0]).unwrap(), 0.0);
        assert_eq!(k.evaluate(&[0.0, 0.0], &[2.0, 0.0]).unwrap(), 1.0);
        assert!(k.evaluate(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn constant_matrix() {
        let rows = SurvivalDataset::from_parts(vec![vec![1.0], vec![2.0], vec![3.0]], &[1.0; 3], &[true; 3]).unwrap();
        let cols = rows.subset(&[0, 2]);
        let m = matrix(&Kernel::Constant, &rows, &cols).unwrap();
        assert_eq!(m.values, vec![vec![1.0; 2]; 3]);
    }

    #[test]
    fn gaussian_matrix_agrees_pointwise() {
        let rows = SurvivalDataset::from_parts(
            (0..6).map(|i| vec![i as f64 * 0.3, -(i as f64) * 0.1]).collect(),
            &[1.0; 6],
            &[true; 6],
        )
        .unwrap();
        let k = Kernel::GaussianEmbedding(EmbeddingNet::mlp(2, 1, 8, 3));
        let m = matrix(&k, &rows, &rows).unwrap();
        for i in 0..6 {
            assert_eq!(m.values[i][i], 1.0);
            for j in 0..6 {
                assert_eq!(m.values[i][j], m.values[j][i]);
                let direct = k.evaluate(&rows.get(i).features, &rows.get(j).features).unwrap();
                assert!((m.values[i][j] - direct).abs() < 1e-14);
                assert!(m.values[i][j] > 0.0 && m.values[i][j] <= 1.0);
            }
        }
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn precomputed_from_file() {
        let pts = SurvivalDataset::from_parts(vec![vec![0.0], vec![5.0]], &[1.0, 2.0], &[true, true]).unwrap();
        let f = write_tmp("1,0\n0,1\n");
        let k = load_kernel_matrix(f.path(), Some(&pts)).unwrap();
        assert_eq!(k.evaluate(&[0.0], &[5.0]).unwrap(), 0.0);
        assert_eq!(k.evaluate(&[0.0], &[0.0]).unwrap(), 1.0);
        assert!(matches!(k.evaluate(&[0.0], &[1.0]), Err(Error::UnindexedPoint)));
    }

    #[test]
    fn precomputed_validation() {
        let f = write_tmp("1,1.5\n1.5,1\n");
        assert!(matches!(load_kernel_matrix(f.path(), None), Err(Error::KernelMatrix(_))));
        let f = write_tmp("1,0,0\n0,1,0\n");
        assert!(matches!(load_kernel_matrix(f.path(), None), Err(Error::KernelMatrix(_))));
        let f = write_tmp("1,0.5\n0.4,1\n");
        assert!(matches!(load_kernel_matrix(f.path(), None), Err(Error::KernelMatrix(_))));
    }

    #[test]
    fn implied_distance_inverts_gaussian() {
        assert!((implied_distance((-1.0f64).exp()) - 1.0).abs() < 1e-12);
        assert_eq!(implied_distance(1.0), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn symmetric_kernels(
                pairs in proptest::collection::vec((proptest::collection::vec(-5.0f64..5.0, 3), proptest::collection::vec(-5.0f64..5.0, 3)), 1..40),
                sigma in 0.1f64..5.0,
                w in -2.0f64..2.0,
            ) {
                let kernels = [
                    Kernel::Constant,
                    Kernel::Box { sigma },
                    Kernel::GaussianEmbedding(EmbeddingNet::Basic { dim: 3, w }),
                    Kernel::GaussianEmbedding(EmbeddingNet::Diag { w: vec![w, 1.0, 0.5] }),
                ];
                for k in &kernels {
                    for (a, b) in &pairs {
                        let ab = k.evaluate(a, b).unwrap();
                        prop_assert_eq!(ab, k.evaluate(b, a).unwrap());
                        prop_assert!(ab >= 0.0);
                    }
                }
            }

            #[test]
            fn box_beyond_diameter_is_constant(points in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 2), 2..10)) {
                let k = Kernel::Box { sigma: 100.0 };
                for a in &points {
                    for b in &points {
                        prop_assert_eq!(k.evaluate(a, b).unwrap(), 1.0);
                    }
                }
            }
        }
    }
}
