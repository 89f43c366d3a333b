//! Random Fourier features for the ARD kernel.
//!
//! With frequencies `ω_(m) ~ N(0, Λ)` the map
//! `φ(h) = √(α/M)·[cos(ω_(1)ᵀh), sin(ω_(1)ᵀh), …, cos(ω_(M)ᵀh), sin(ω_(M)ᵀh)]`
//! satisfies `E[φ(h)ᵀφ(h')] = α·exp(−½(h−h')ᵀΛ(h−h'))`, which is the ARD
//! kernel when `Λ = Γ⁻¹`. Cosine and sine of each frequency sit next to each
//! other, in that order.

use nalgebra::DMatrix;

use crate::diffcore::Var;
use crate::error::{Error, Result};
use crate::rng::{normal_matrix, tag};

/// Frequencies of one layer, one column per frequency (`d_l × M_l`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectraMatrix {
    pub omega: DMatrix<f64>,
    pub layer: usize,
}

impl SpectraMatrix {
    pub fn input_dim(&self) -> usize {
        self.omega.nrows()
    }

    pub fn num_frequencies(&self) -> usize {
        self.omega.ncols()
    }
}

/// Draw `m` frequencies with independent zero-mean coordinates of variance `scales[i]`.
pub fn sample_spectra(scales: &[f64], m: usize, seed: u64, layer: usize) -> Result<SpectraMatrix> {
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::Config(format!("spectral scales must be positive, got {s}")));
    }
    if m == 0 {
        return Err(Error::Config("number of random features must be positive".into()));
    }
    let mut omega = normal_matrix(scales.len(), m, &[seed, tag::SPECTRA_PRIOR, layer as u64]);
    for (i, s) in scales.iter().enumerate() {
        let sd = s.sqrt();
        omega.row_mut(i).scale_mut(sd);
    }
    Ok(SpectraMatrix { omega, layer })
}

/// Feature vector `φ(h)` of length `2M`.
pub fn rff_map(h: &[f64], spectra: &SpectraMatrix, alpha: f64) -> Result<Vec<f64>> {
    if h.len() != spectra.input_dim() {
        return Err(Error::shape(
            "rff_map",
            format!("{}-dimensional input", spectra.input_dim()),
            h.len(),
        ));
    }
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("feature scale alpha must be positive, got {alpha}")));
    }
    let m = spectra.num_frequencies();
    let scale = (alpha / m as f64).sqrt();
    let mut out = Vec::with_capacity(2 * m);
    for col in spectra.omega.column_iter() {
        let p: f64 = col.iter().zip(h).map(|(w, x)| w * x).sum();
        out.push(scale * p.cos());
        out.push(scale * p.sin());
    }
    Ok(out)
}

/// Features of every row of `h` (`B×d`) under `omega` (`d×M`); returns `B×2M`.
pub fn rff_features<'t>(h: Var<'t>, omega: Var<'t>, log_alpha: Var<'t>) -> Var<'t> {
    let m = omega.shape().1 as f64;
    let proj = h.matmul(omega);
    let scale = (log_alpha.scale(0.5) - 0.5 * m.ln()).exp();
    proj.cos().interleave(proj.sin()) * scale
}
