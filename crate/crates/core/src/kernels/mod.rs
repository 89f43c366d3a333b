//! Exact kernels, Gram matrices and positive-definite solves.
//!
//! Two kernel families are supported: the ARD squared-exponential kernel on
//! fixed-length vectors and the (k, m)-spectrum kernel on symbol sequences of
//! any length. Both can be evaluated on plain values or recorded on a tape
//! with their trainable parameters as leaves.

mod ard;
mod spectrum;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use ard::{ard_cross, ard_eval, ard_matrix, ArdParams};
pub use spectrum::{
    base_diagonal, base_matrix, base_value, profile, profiles, spectrum_eval, spectrum_matrix, spectrum_scaled, spectrum_scaled_diagonal,
    KmerProfile, SpectrumParams,
};

use crate::error::{Error, Result};
use crate::linalg;

/// A homogeneous list of model inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    /// One row per input.
    Dense(DMatrix<f64>),
    Sequences(Vec<Vec<u8>>),
}

impl Inputs {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Dense(x) => x.nrows(),
            Inputs::Sequences(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Inputs {
        match self {
            Inputs::Dense(x) => Inputs::Dense(x.select_rows(idx)),
            Inputs::Sequences(s) => Inputs::Sequences(idx.iter().map(|&i| s[i].clone()).collect()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Inputs::Dense(_) => "vectors",
            Inputs::Sequences(_) => "sequences",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    Ard(ArdParams),
    Spectrum(SpectrumParams),
}

impl KernelSpec {
    pub fn alpha(&self) -> f64 {
        match self {
            KernelSpec::Ard(p) => p.alpha(),
            KernelSpec::Spectrum(p) => p.alpha(),
        }
    }

    /// Check that `x` is the kind of input this kernel understands.
    pub fn check_inputs(&self, x: &Inputs) -> Result<()> {
        match (self, x) {
            (KernelSpec::Ard(p), Inputs::Dense(m)) if m.ncols() == p.dim() => Ok(()),
            (KernelSpec::Ard(p), Inputs::Dense(m)) => Err(Error::shape(
                "ARD kernel inputs",
                format!("{} columns", p.dim()),
                format!("{} columns", m.ncols()),
            )),
            (KernelSpec::Spectrum(_), Inputs::Sequences(_)) => Ok(()),
            (k, x) => Err(Error::Compatibility(format!(
                "{} kernel cannot be applied to {}",
                k.family(),
                x.kind()
            ))),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            KernelSpec::Ard(_) => "ard",
            KernelSpec::Spectrum(_) => "spectrum",
        }
    }
}

/// Kernel-ready view of inputs: raw rows for ARD, k-mer profiles for sequences.
#[derive(Debug, Clone)]
pub enum Features {
    Dense(DMatrix<f64>),
    Profiles(Vec<KmerProfile>),
}

impl Features {
    pub fn new(x: &Inputs, kernel: &KernelSpec) -> Result<Self> {
        kernel.check_inputs(x)?;
        Ok(match (x, kernel) {
            (Inputs::Dense(m), _) => Features::Dense(m.clone()),
            (Inputs::Sequences(s), KernelSpec::Spectrum(p)) => Features::Profiles(profiles(s, p)?),
            _ => unreachable!("checked above"),
        })
    }

    pub fn len(&self) -> usize {
        match self {
            Features::Dense(x) => x.nrows(),
            Features::Profiles(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Features {
        match self {
            Features::Dense(x) => Features::Dense(x.select_rows(idx)),
            Features::Profiles(p) => Features::Profiles(idx.iter().map(|&i| p[i].clone()).collect()),
        }
    }
}

/// A kernel matrix together with the jitter already added to its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    pub jitter: f64,
}

/// Kernel matrix between two input lists; `jitter` is added to the diagonal
/// only when both lists are the same.
pub fn gram(x: &Inputs, x2: &Inputs, kernel: &KernelSpec, jitter: f64) -> Result<GramMatrix> {
    if !(jitter >= 0.0) {
        return Err(Error::Config(format!("jitter must be non-negative, got {jitter}")));
    }
    kernel.check_inputs(x)?;
    kernel.check_inputs(x2)?;
    let same = std::ptr::eq(x, x2) || x == x2;
    let mut entries = match (kernel, x, x2) {
        (KernelSpec::Ard(p), Inputs::Dense(a), Inputs::Dense(b)) => ard_matrix(a, b, p)?,
        (KernelSpec::Spectrum(p), Inputs::Sequences(a), Inputs::Sequences(b)) => {
            let pa = profiles(a, p)?;
            let pb = if same { pa.clone() } else { profiles(b, p)? };
            spectrum_matrix(&pa, &pb, p)
        }
        _ => unreachable!("checked above"),
    };
    let jitter = if same { jitter } else { 0.0 };
    if same {
        for i in 0..entries.nrows() {
            entries[(i, i)] += jitter;
        }
    }
    Ok(GramMatrix { entries, jitter })
}

/// Lower-triangular factor of a square Gram matrix.
pub fn psd_factor(g: &GramMatrix) -> Result<DMatrix<f64>> {
    linalg::cholesky(&g.entries)
}

/// Solve `G X = B` from the factor returned by [`psd_factor`].
pub fn psd_solve(factor: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::cholesky_solve(factor, b)
}
