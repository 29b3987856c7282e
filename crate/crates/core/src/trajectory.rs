use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::Matrix;
use crate::FEATURE_RATE_HZ;

/// Multi-DOF position series at a fixed frame rate, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dof: usize,
    rate_hz: u32,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(dof: usize) -> Self {
        Self {
            dof,
            rate_hz: FEATURE_RATE_HZ,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(dof: usize, frames: usize) -> Self {
        Self {
            dof,
            rate_hz: FEATURE_RATE_HZ,
            data: Vec::with_capacity(dof * frames),
        }
    }

    pub fn from_data(dof: usize, data: Vec<f64>) -> Result<Self> {
        if dof == 0 || data.len() % dof != 0 {
            bail!(
                InvalidArgument,
                "{} values do not split into frames of {dof} DOFs",
                data.len()
            );
        }
        Ok(Self {
            dof,
            rate_hz: FEATURE_RATE_HZ,
            data,
        })
    }

    /// Zero trajectory of `frames` frames.
    pub fn zeros(dof: usize, frames: usize) -> Self {
        Self {
            dof,
            rate_hz: FEATURE_RATE_HZ,
            data: alloc::vec![0.0; dof * frames],
        }
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn rate_hz(&self) -> u32 {
        self.rate_hz
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dof).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / f64::from(self.rate_hz)
    }

    pub fn push(&mut self, frame: &[f64]) {
        assert_eq!(frame.len(), self.dof, "frame width mismatch");
        self.data.extend_from_slice(frame);
    }

    pub fn extend(&mut self, other: &Trajectory) {
        assert_eq!(other.dof, self.dof);
        self.data.extend_from_slice(&other.data);
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.dof..(i + 1) * self.dof]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dof..(i + 1) * self.dof]
    }

    pub fn frames(&self) -> core::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dof.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Frames `range` as a new trajectory.
    pub fn slice(&self, range: core::ops::Range<usize>) -> Trajectory {
        Trajectory {
            dof: self.dof,
            rate_hz: self.rate_hz,
            data: self.data[range.start * self.dof..range.end * self.dof].to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_row_slice(self.len(), self.dof, &self.data)
    }
}
