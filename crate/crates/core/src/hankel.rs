//! Block-Hankel matrices, persistence of excitation, and data-based
//! trajectory validation.
//!
//! A single persistently exciting input-output trajectory of an LTI system
//! spans every trajectory of that system through linear combinations of the
//! columns of its stacked Hankel matrices. This module builds those matrices
//! and provides the rank checks the controllers rely on.

use nalgebra::{DMatrix, DVector, DVectorView};
use thiserror::Error;

use crate::linalg;

/// Default relative threshold used to decide numerical rank.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-9;

/// Default relative residual below which a test signal counts as a trajectory.
pub const DEFAULT_TRAJECTORY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HankelError {
    #[error("sequence must contain at least one sample of dimension >= 1")]
    Empty,
    #[error("samples have inconsistent dimensions: expected {expected}, found {found}")]
    RaggedSamples { expected: usize, found: usize },
    #[error("Hankel depth {depth} exceeds sequence length {length}")]
    DepthExceedsLength { depth: usize, length: usize },
    #[error("Hankel depth must be positive")]
    ZeroDepth,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// An ordered list of equally sized real vectors, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    values: DMatrix<f64>,
}

impl Sequence {
    /// Wraps a `dim x length` matrix whose columns are the samples.
    pub fn new(values: DMatrix<f64>) -> Result<Self, HankelError> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(HankelError::Empty);
        }
        Ok(Self { values })
    }

    pub fn from_samples<S: AsRef<[f64]>>(samples: &[S]) -> Result<Self, HankelError> {
        let first = samples.first().ok_or(HankelError::Empty)?;
        let dim = first.as_ref().len();
        if dim == 0 {
            return Err(HankelError::Empty);
        }
        let mut values = DMatrix::zeros(dim, samples.len());
        for (k, s) in samples.iter().enumerate() {
            let s = s.as_ref();
            if s.len() != dim {
                return Err(HankelError::RaggedSamples {
                    expected: dim,
                    found: s.len(),
                });
            }
            values.column_mut(k).copy_from_slice(s);
        }
        Ok(Self { values })
    }

    pub fn from_vectors(samples: &[DVector<f64>]) -> Result<Self, HankelError> {
        let slices: Vec<&[f64]> = samples.iter().map(|v| v.as_slice()).collect();
        Self::from_samples(&slices)
    }

    /// One-dimensional sequence.
    pub fn scalar(values: &[f64]) -> Result<Self, HankelError> {
        if values.is_empty() {
            return Err(HankelError::Empty);
        }
        Ok(Self {
            values: DMatrix::from_row_slice(1, values.len(), values),
        })
    }

    /// Rebuilds a sequence from its stacked form `[s_0; s_1; ...]`.
    pub fn from_stacked(stacked: &DVector<f64>, dim: usize) -> Result<Self, HankelError> {
        if dim == 0 || stacked.is_empty() || stacked.len() % dim != 0 {
            return Err(HankelError::DimensionMismatch(format!(
                "stacked length {} is not a multiple of dimension {dim}",
                stacked.len()
            )));
        }
        Ok(Self {
            values: DMatrix::from_column_slice(dim, stacked.len() / dim, stacked.as_slice()),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample(&self, k: usize) -> DVectorView<'_, f64> {
        self.values.column(k)
    }

    pub fn samples(&self) -> impl Iterator<Item = DVector<f64>> + '_ {
        self.values.column_iter().map(|c| c.into_owned())
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Contiguous sub-sequence `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self, HankelError> {
        if len == 0 || start + len > self.len() {
            return Err(HankelError::DimensionMismatch(format!(
                "window [{start}, {}) outside sequence of length {}",
                start + len,
                self.len()
            )));
        }
        Ok(Self {
            values: self.values.columns(start, len).into_owned(),
        })
    }

    /// All samples stacked into one column vector.
    pub fn stacked(&self) -> DVector<f64> {
        linalg::stack_columns(&self.values)
    }
}

/// Depth-`L` block-Hankel matrix of a sequence: block `(i, j)` holds sample
/// `i + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix {
    depth: usize,
    dim: usize,
    entries: DMatrix<f64>,
}

impl HankelMatrix {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn block(&self, i: usize, j: usize) -> DVectorView<'_, f64> {
        self.entries.generic_view((i * self.dim, j), (nalgebra::Dyn(self.dim), nalgebra::Const::<1>))
    }

    /// Rows belonging to block rows `[first, first + count)`.
    pub fn block_rows(&self, first: usize, count: usize) -> DMatrix<f64> {
        self.entries
            .rows(first * self.dim, count * self.dim)
            .into_owned()
    }
}

pub fn build_hankel(s: &Sequence, depth: usize) -> Result<HankelMatrix, HankelError> {
    if depth == 0 {
        return Err(HankelError::ZeroDepth);
    }
    if depth > s.len() {
        return Err(HankelError::DepthExceedsLength {
            depth,
            length: s.len(),
        });
    }
    let dim = s.dim();
    let cols = s.len() - depth + 1;
    let mut entries = DMatrix::zeros(dim * depth, cols);
    for j in 0..cols {
        for i in 0..depth {
            entries
                .view_mut((i * dim, j), (dim, 1))
                .copy_from(&s.sample(i + j));
        }
    }
    Ok(HankelMatrix {
        depth,
        dim,
        entries,
    })
}

/// Outcome of a persistence-of-excitation check.
#[derive(Debug, Clone, PartialEq)]
pub struct PeReport {
    pub order: usize,
    pub required_rank: usize,
    pub computed_rank: usize,
    /// Smallest singular value counted towards the rank (0 if rank is 0).
    pub smallest_retained_singular_value: f64,
    pub largest_singular_value: f64,
    pub is_pe: bool,
    /// Set when the check could not be carried out meaningfully.
    pub reason: Option<String>,
}

impl PeReport {
    /// Ratio of the smallest retained to the largest singular value.
    pub fn spread(&self) -> f64 {
        if self.largest_singular_value > 0.0 {
            self.smallest_retained_singular_value / self.largest_singular_value
        } else {
            0.0
        }
    }
}

/// Checks whether `s` is persistently exciting of the given order, i.e.
/// whether its depth-`order` Hankel matrix has full row rank.
pub fn persistence_order_check(
    s: &Sequence,
    order: usize,
    rank_tolerance: f64,
) -> Result<PeReport, HankelError> {
    if order == 0 {
        return Err(HankelError::ZeroDepth);
    }
    let dim = s.dim();
    let required_rank = dim * order;
    let min_len = (dim + 1) * order - 1;
    if s.len() < min_len {
        return Ok(PeReport {
            order,
            required_rank,
            computed_rank: 0,
            smallest_retained_singular_value: 0.0,
            largest_singular_value: 0.0,
            is_pe: false,
            reason: Some(format!(
                "sequence length {} below the minimum {min_len} for order {order}",
                s.len()
            )),
        });
    }
    let h = build_hankel(s, order)?;
    let sv = linalg::singular_values(h.matrix());
    let largest = sv.first().copied().unwrap_or(0.0);
    let retained: Vec<f64> = if largest > 0.0 {
        sv.iter().copied().filter(|&v| v > rank_tolerance * largest).collect()
    } else {
        Vec::new()
    };
    let computed_rank = retained.len();
    Ok(PeReport {
        order,
        required_rank,
        computed_rank,
        smallest_retained_singular_value: retained.last().copied().unwrap_or(0.0),
        largest_singular_value: largest,
        is_pe: computed_rank == required_rank,
        reason: None,
    })
}

/// Result of checking a candidate trajectory against measured data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCheck {
    pub is_trajectory: bool,
    /// `||H alpha - w|| / ||w||` for the stacked test vector `w`
    /// (absolute when `w = 0`).
    pub residual: f64,
    pub alpha: DVector<f64>,
}

/// Stacked input/output Hankel matrix `[H_L(u); H_L(y)]`.
pub fn stacked_hankel(
    u: &Sequence,
    y: &Sequence,
    depth: usize,
) -> Result<DMatrix<f64>, HankelError> {
    if u.len() != y.len() {
        return Err(HankelError::DimensionMismatch(format!(
            "input length {} != output length {}",
            u.len(),
            y.len()
        )));
    }
    let hu = build_hankel(u, depth)?;
    let hy = build_hankel(y, depth)?;
    let mut m = DMatrix::zeros(hu.nrows() + hy.nrows(), hu.ncols());
    m.rows_mut(0, hu.nrows()).copy_from(hu.matrix());
    m.rows_mut(hu.nrows(), hy.nrows()).copy_from(hy.matrix());
    Ok(m)
}

/// Decides whether `(u_test, y_test)` lies in the column span of the data
/// Hankel matrices of matching depth.
pub fn validate_trajectory(
    u_data: &Sequence,
    y_data: &Sequence,
    u_test: &Sequence,
    y_test: &Sequence,
) -> Result<TrajectoryCheck, HankelError> {
    validate_trajectory_with_tolerance(u_data, y_data, u_test, y_test, DEFAULT_TRAJECTORY_TOLERANCE)
}

pub fn validate_trajectory_with_tolerance(
    u_data: &Sequence,
    y_data: &Sequence,
    u_test: &Sequence,
    y_test: &Sequence,
    tolerance: f64,
) -> Result<TrajectoryCheck, HankelError> {
    if u_data.dim() != u_test.dim() || y_data.dim() != y_test.dim() {
        return Err(HankelError::DimensionMismatch(format!(
            "data dims ({}, {}) vs test dims ({}, {})",
            u_data.dim(),
            y_data.dim(),
            u_test.dim(),
            y_test.dim()
        )));
    }
    if u_test.len() != y_test.len() {
        return Err(HankelError::DimensionMismatch(format!(
            "test input length {} != test output length {}",
            u_test.len(),
            y_test.len()
        )));
    }
    let depth = u_test.len();
    let m = stacked_hankel(u_data, y_data, depth)?;
    let mut w = DVector::zeros(m.nrows());
    let nu = u_test.dim() * depth;
    w.rows_mut(0, nu).copy_from(&u_test.stacked());
    w.rows_mut(nu, m.nrows() - nu).copy_from(&y_test.stacked());

    let alpha = linalg::lstsq(&m, &w, 1e-12);
    let abs_res = (&m * &alpha - &w).norm();
    let wn = w.norm();
    let residual = if wn > 0.0 { abs_res / wn } else { abs_res };
    Ok(TrajectoryCheck {
        is_trajectory: residual <= tolerance,
        residual,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_hankel_depth_two() {
        let s = Sequence::scalar(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let h = build_hankel(&s, 2).unwrap();
        let expected = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]);
        assert_eq!(h.matrix(), &expected);
    }

    #[test]
    fn full_depth_is_single_stacked_column() {
        let s = Sequence::from_samples(&[[1.0, -1.0], [2.0, -2.0], [3.0, -3.0]]).unwrap();
        let h = build_hankel(&s, 3).unwrap();
        assert_eq!(h.ncols(), 1);
        assert_eq!(h.matrix().column(0).into_owned(), s.stacked());
    }

    #[test]
    fn two_dimensional_blocks() {
        let s = Sequence::from_samples(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let h = build_hankel(&s, 2).unwrap();
        // columns: (s0; s1) and (s1; s2)
        let expected =
            DMatrix::from_column_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(h.matrix(), &expected);
        assert_eq!(h.block(1, 1).into_owned(), DVector::from_vec(vec![1.0, 1.0]));
    }

    #[test]
    fn depth_errors() {
        let s = Sequence::scalar(&[1.0, 2.0]).unwrap();
        assert_eq!(
            build_hankel(&s, 3),
            Err(HankelError::DepthExceedsLength { depth: 3, length: 2 })
        );
        assert_eq!(build_hankel(&s, 0), Err(HankelError::ZeroDepth));
    }

    #[test]
    fn sequence_rejects_ragged_and_empty() {
        assert_eq!(Sequence::scalar(&[]), Err(HankelError::Empty));
        let ragged: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(matches!(
            Sequence::from_samples(&ragged),
            Err(HankelError::RaggedSamples { .. })
        ));
    }

    #[test]
    fn constant_sequence_is_not_pe_of_order_two() {
        let s = Sequence::scalar(&[3.0; 10]).unwrap();
        let r = persistence_order_check(&s, 2, DEFAULT_RANK_TOLERANCE).unwrap();
        assert_eq!(r.computed_rank, 1);
        assert!(!r.is_pe);
    }

    #[test]
    fn periodic_pulse_is_pe_of_order_two() {
        let v: Vec<f64> = (0..9).map(|k| if k % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let s = Sequence::scalar(&v).unwrap();
        let r = persistence_order_check(&s, 2, DEFAULT_RANK_TOLERANCE).unwrap();
        assert!(r.is_pe);
        assert_eq!(r.required_rank, 2);
    }

    #[test]
    fn short_sequence_reports_reason() {
        let s = Sequence::scalar(&[1.0, 0.0, 2.0]).unwrap();
        let r = persistence_order_check(&s, 3, DEFAULT_RANK_TOLERANCE).unwrap();
        assert!(!r.is_pe);
        assert!(r.reason.is_some());
    }

    #[test]
    fn data_window_validates_itself() {
        let u = Sequence::scalar(&[0.3, -1.0, 2.0, 0.5, 0.1, -0.7, 1.2]).unwrap();
        let y = Sequence::scalar(&[0.0, 0.3, -0.85, 1.575, 1.2875, 0.74375, -0.328]).unwrap();
        let check = validate_trajectory(&u, &y, &u.window(2, 3).unwrap(), &y.window(2, 3).unwrap())
            .unwrap();
        assert!(check.is_trajectory);
        assert!(check.residual < 1e-12);
    }

    #[test]
    fn validate_rejects_mismatched_dims() {
        let u = Sequence::scalar(&[1.0, 2.0, 3.0]).unwrap();
        let y2 = Sequence::from_samples(&[[1.0, 2.0]]).unwrap();
        assert!(validate_trajectory(&u, &u, &y2, &u.window(0, 1).unwrap()).is_err());
    }
}
