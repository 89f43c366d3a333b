//! The exact GP input layer.
//!
//! Each of the `d_0` latent functions has a Gaussian variational posterior
//! `N(μ_j, Σ_j)` over its values at `M` pseudo-inputs. Integrating the GP
//! conditional against it gives a Gaussian marginal for every input:
//!
//! ```text
//! a_j  = k̄ᵀ K̄⁻¹ μ_j
//! b_jj = k(x, x) − k̄ᵀ K̄⁻¹ k̄ + k̄ᵀ K̄⁻¹ Σ_j K̄⁻¹ k̄
//! ```
//!
//! `Σ_j = L_j L_jᵀ` is stored as an unconstrained lower triangle whose
//! diagonal holds `log L_ii`. The parameterization is unwhitened.

use nalgebra::DMatrix;

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{
    ard_cross, spectrum_scaled, spectrum_scaled_diagonal, ArdParams, Features, GramMatrix, Inputs, KernelSpec,
    SpectrumParams,
};
use crate::linalg;
use crate::params::{Bound, ParamId, ParamStore};

/// Round-off below this fraction of `k(x, x)` is clamped to zero variance.
const VARIANCE_FLOOR_REL: f64 = 1e-10;

/// Store handles of one kernel's trainable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelParams {
    pub log_alpha: ParamId,
    /// `log γ` (1×d) for ARD, `log σ` (1×1) for the spectrum kernel.
    pub log_shape: ParamId,
}

#[derive(Debug, Clone)]
pub struct InducingState {
    pub pseudo_inputs: Inputs,
    /// Family and fixed settings of the kernel. Trainable values live in the store.
    pub kernel: KernelSpec,
    /// One entry when kernel parameters are shared across latent dimensions, else `d_0`.
    pub kernel_params: Vec<KernelParams>,
    /// `M × d_0` means, column `j` is `μ_j`.
    pub mu: ParamId,
    pub sigma_factors: Vec<ParamId>,
    /// Diagonal jitter of `K̄`, relative to `k(x, x)`.
    pub jitter: f64,
    pseudo_features: Features,
}

/// Mean and per-dimension variance of `q(F_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMoments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Tape nodes for a batch: means and variances, both `B × d_0`.
#[derive(Debug, Clone, Copy)]
pub struct BatchMoments<'t> {
    pub mean: Var<'t>,
    pub variance: Var<'t>,
}

struct Grams<'t> {
    zz: Var<'t>,
    xz: Var<'t>,
    diag: Var<'t>,
}

impl InducingState {
    /// Register the layer's parameters: `μ_j = 0`, `Σ_j = I`.
    pub fn new(
        store: &mut ParamStore,
        pseudo_inputs: Inputs,
        kernel: KernelSpec,
        latent_dim: usize,
        per_dim_kernel: bool,
        jitter: f64,
    ) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::Config("GP layer needs at least one latent dimension".into()));
        }
        if pseudo_inputs.is_empty() {
            return Err(Error::Config("GP layer needs at least one pseudo-input".into()));
        }
        if !(jitter >= 0.0) {
            return Err(Error::Config(format!("jitter must be non-negative, got {jitter}")));
        }
        let pseudo_features = Features::new(&pseudo_inputs, &kernel)?;
        let m = pseudo_inputs.len();
        let groups = if per_dim_kernel { latent_dim } else { 1 };
        let kernel_params = (0..groups)
            .map(|g| {
                let prefix = if per_dim_kernel { format!("gp.kernel.{g}") } else { "gp.kernel".to_string() };
                let (log_alpha, shape) = match &kernel {
                    KernelSpec::Ard(p) => (p.log_alpha, DMatrix::from_row_slice(1, p.dim(), &p.log_gamma)),
                    KernelSpec::Spectrum(p) => (p.log_alpha, DMatrix::from_element(1, 1, p.log_temperature)),
                };
                let shape_name = match &kernel {
                    KernelSpec::Ard(_) => "log_gamma",
                    KernelSpec::Spectrum(_) => "log_temperature",
                };
                KernelParams {
                    log_alpha: store.add(format!("{prefix}.log_alpha"), DMatrix::from_element(1, 1, log_alpha)),
                    log_shape: store.add(format!("{prefix}.{shape_name}"), shape),
                }
            })
            .collect();
        let mu = store.add("gp.mu", DMatrix::zeros(m, latent_dim));
        let sigma_factors = (0..latent_dim)
            .map(|j| store.add(format!("gp.sigma_factor.{j}"), DMatrix::zeros(m, m)))
            .collect();
        Ok(Self {
            pseudo_inputs,
            kernel,
            kernel_params,
            mu,
            sigma_factors,
            jitter,
            pseudo_features,
        })
    }

    /// Rebuild from a checkpoint where the store already holds every block.
    pub fn restore(
        store: &ParamStore,
        pseudo_inputs: Inputs,
        kernel: KernelSpec,
        latent_dim: usize,
        per_dim_kernel: bool,
        jitter: f64,
    ) -> Result<Self> {
        let mut scratch = ParamStore::new();
        let mut state = Self::new(&mut scratch, pseudo_inputs, kernel, latent_dim, per_dim_kernel, jitter)?;
        let lookup = |scratch_id: ParamId| -> Result<ParamId> {
            let name = scratch.name(scratch_id);
            let id = store
                .id_of(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter block {name}")))?;
            if store.get(id).shape() != scratch.get(scratch_id).shape() {
                return Err(Error::Checkpoint(format!("parameter block {name} has the wrong shape")));
            }
            Ok(id)
        };
        for kp in &mut state.kernel_params {
            kp.log_alpha = lookup(kp.log_alpha)?;
            kp.log_shape = lookup(kp.log_shape)?;
        }
        state.mu = lookup(state.mu)?;
        for f in &mut state.sigma_factors {
            *f = lookup(*f)?;
        }
        Ok(state)
    }

    pub fn num_inducing(&self) -> usize {
        self.pseudo_inputs.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.sigma_factors.len()
    }

    pub fn per_dim_kernel(&self) -> bool {
        self.kernel_params.len() > 1
    }

    fn group(&self, j: usize) -> usize {
        if self.per_dim_kernel() {
            j
        } else {
            0
        }
    }

    /// Kernel of latent dimension `j` at the store's current parameter values.
    pub fn kernel_at(&self, store: &ParamStore, j: usize) -> KernelSpec {
        let kp = self.kernel_params[self.group(j)];
        let log_alpha = store.scalar(kp.log_alpha);
        match &self.kernel {
            KernelSpec::Ard(_) => KernelSpec::Ard(ArdParams {
                log_alpha,
                log_gamma: store.get(kp.log_shape).iter().copied().collect(),
            }),
            KernelSpec::Spectrum(p) => KernelSpec::Spectrum(SpectrumParams {
                log_alpha,
                log_temperature: store.scalar(kp.log_shape),
                ..p.clone()
            }),
        }
    }

    pub fn features(&self, x: &Inputs) -> Result<Features> {
        Features::new(x, &self.kernel)
    }

    /// Names of the blocks this layer owns.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.kernel_params.iter().flat_map(|k| [k.log_alpha, k.log_shape]).collect();
        ids.push(self.mu);
        ids.extend(&self.sigma_factors);
        ids
    }

    fn jitter_mask<'t>(&self, tape: &'t Tape) -> Var<'t> {
        let m = self.num_inducing();
        tape.constant(DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 + self.jitter } else { 1.0 }))
    }

    fn grams<'t>(&self, b: &Bound<'t>, group: usize, x: Option<&Features>) -> Result<Grams<'t>> {
        let kp = self.kernel_params[group];
        let log_alpha = b.get(kp.log_alpha);
        let tape = log_alpha.tape();
        let mask = self.jitter_mask(tape);
        Ok(match (&self.kernel, &self.pseudo_features) {
            (KernelSpec::Ard(_), Features::Dense(z)) => {
                let log_gamma = b.get(kp.log_shape);
                let zv = tape.constant(z.clone());
                let zz = ard_cross(zv, zv, log_alpha, log_gamma) * mask;
                let (xz, diag) = match x {
                    Some(Features::Dense(xm)) => {
                        let xv = tape.constant(xm.clone());
                        (ard_cross(xv, zv, log_alpha, log_gamma), log_alpha.exp().broadcast_to((xm.nrows(), 1)))
                    }
                    Some(_) => return Err(Error::Compatibility("ARD kernel needs vector inputs".into())),
                    None => (zz, zz),
                };
                Grams { zz, xz, diag }
            }
            (KernelSpec::Spectrum(p), Features::Profiles(z)) => {
                let log_temp = b.get(kp.log_shape);
                let zz = spectrum_scaled(z, z, log_alpha, log_temp, p.normalize) * mask;
                let (xz, diag) = match x {
                    Some(Features::Profiles(xp)) => (
                        spectrum_scaled(xp, z, log_alpha, log_temp, p.normalize),
                        spectrum_scaled_diagonal(xp, log_alpha, log_temp, p.normalize),
                    ),
                    Some(_) => return Err(Error::Compatibility("spectrum kernel needs sequence inputs".into())),
                    None => (zz, zz),
                };
                Grams { zz, xz, diag }
            }
            _ => unreachable!("pseudo-input features always match the kernel family"),
        })
    }

    fn factor<'t>(&self, b: &Bound<'t>, j: usize) -> Var<'t> {
        b.get(self.sigma_factors[j]).tril_exp_diag()
    }

    /// Marginal moments of `q(F_n)` for every row of `x` on the tape.
    pub fn moments<'t>(&self, b: &Bound<'t>, x: &Features) -> Result<BatchMoments<'t>> {
        let d0 = self.latent_dim();
        let n = x.len();
        let mu = b.get(self.mu);
        let tape = mu.tape();
        let onehot = |j: usize| tape.constant(DMatrix::from_fn(1, d0, |_, c| if c == j { 1.0 } else { 0.0 }));

        let mut mean: Option<Var<'t>> = None;
        let mut variance: Option<Var<'t>> = None;
        let groups = self.kernel_params.len();
        for g in 0..groups {
            let grams = self.grams(b, g, Some(x))?;
            let dims: Vec<usize> = if groups == 1 { (0..d0).collect() } else { vec![g] };
            let proj = grams.zz.solve(grams.xz.t()).map_err(|e| e.in_dimension(dims[0]))?;
            let explained = (grams.xz.t() * proj).col_sums().t();
            let base = grams.diag - explained;

            let group_mean = if groups == 1 {
                proj.t().matmul(mu)
            } else {
                proj.t().matmul(mu.matmul(onehot(g).t())).matmul(onehot(g))
            };
            mean = Some(match mean {
                Some(m) => m + group_mean,
                None => group_mean,
            });

            for &j in &dims {
                let spread = self.factor(b, j).t().matmul(proj).square().col_sums().t();
                let v = (base + spread).matmul(onehot(j));
                variance = Some(match variance {
                    Some(acc) => acc + v,
                    None => v,
                });
            }
        }
        let (mean, variance) = (mean.expect("at least one group"), variance.expect("at least one dimension"));

        // Round-off can push a variance slightly below zero; anything larger is an error.
        let vals = variance.value();
        for (i, v) in vals.iter().enumerate() {
            // Column-major storage: index i is (i % n, i / n).
            let (row, j) = (i % n.max(1), i / n.max(1));
            if *v < 0.0 && -v > VARIANCE_FLOOR_REL * self.prior_variance_hint(b, j) {
                return Err(Error::Numerical(format!(
                    "negative marginal variance {v:e} at row {row}, latent dimension {j}"
                )));
            }
        }
        Ok(BatchMoments {
            mean,
            variance: variance.clamp_min(0.0),
        })
    }

    fn prior_variance_hint(&self, b: &Bound<'_>, j: usize) -> f64 {
        b.get(self.kernel_params[self.group(j)].log_alpha).scalar().exp()
    }

    /// KL(q(F̄) ‖ p(F̄)) summed over latent dimensions, on the tape.
    pub fn kl<'t>(&self, b: &Bound<'t>) -> Result<Var<'t>> {
        let d0 = self.latent_dim();
        let m = self.num_inducing() as f64;
        let mu = b.get(self.mu);
        let tape = mu.tape();
        let eye = tape.constant(DMatrix::identity(self.num_inducing(), self.num_inducing()));
        let groups = self.kernel_params.len();
        let mut total = tape.scalar(0.0);
        for g in 0..groups {
            let grams = self.grams(b, g, None)?;
            let dims: Vec<usize> = if groups == 1 { (0..d0).collect() } else { vec![g] };
            let logdet = grams.zz.logdet().map_err(|e| e.in_dimension(dims[0]))?;
            let mu_g = if groups == 1 {
                mu
            } else {
                mu.matmul(tape.constant(DMatrix::from_fn(d0, 1, |r, _| if r == g { 1.0 } else { 0.0 })))
            };
            let quad = (mu_g * grams.zz.solve(mu_g)?).sum();
            total = total + quad + logdet.scale(dims.len() as f64) - m * dims.len() as f64;
            for &j in &dims {
                let raw = b.get(self.sigma_factors[j]);
                let l = raw.tril_exp_diag();
                let trace = (l * grams.zz.solve(l)?).sum();
                let logdet_sigma = (raw * eye).sum().scale(2.0);
                total = total + trace - logdet_sigma;
            }
        }
        Ok(total.scale(0.5))
    }

    /// Marginal moments at each input, evaluated at the store's values.
    pub fn marginal_moments(&self, store: &ParamStore, x: &Inputs) -> Result<Vec<MarginalMoments>> {
        let feats = self.features(x)?;
        let tape = Tape::new();
        let b = store.bind_constant(&tape);
        let mm = self.moments(&b, &feats)?;
        let (mean, var) = (mm.mean.value(), mm.variance.value());
        Ok((0..x.len())
            .map(|i| MarginalMoments {
                mean: mean.row(i).iter().copied().collect(),
                variance: var.row(i).iter().copied().collect(),
            })
            .collect())
    }

    pub fn kl_inducing(&self, store: &ParamStore) -> Result<f64> {
        let tape = Tape::new();
        let b = store.bind_constant(&tape);
        Ok(self.kl(&b)?.scalar())
    }

    /// `K̄_j` (with jitter) at the store's values.
    pub fn inducing_gram(&self, store: &ParamStore, j: usize) -> Result<GramMatrix> {
        let tape = Tape::new();
        let b = store.bind_constant(&tape);
        let grams = self.grams(&b, self.group(j), None)?;
        Ok(GramMatrix {
            entries: grams.zz.value(),
            jitter: self.jitter * self.kernel_at(store, j).alpha(),
        })
    }

    /// `Σ_j` at the store's values.
    pub fn covariance(&self, store: &ParamStore, j: usize) -> DMatrix<f64> {
        let raw = store.get(self.sigma_factors[j]);
        let n = raw.nrows();
        let l = DMatrix::from_fn(n, n, |r, c| match r.cmp(&c) {
            std::cmp::Ordering::Greater => raw[(r, c)],
            std::cmp::Ordering::Equal => raw[(r, r)].exp(),
            std::cmp::Ordering::Less => 0.0,
        });
        &l * l.transpose()
    }

    /// Set `Σ_j` from a positive-definite matrix (used to place q at a chosen point).
    pub fn set_covariance(&self, store: &mut ParamStore, j: usize, sigma: &DMatrix<f64>) -> Result<()> {
        let l = linalg::cholesky(sigma)?;
        let raw = DMatrix::from_fn(l.nrows(), l.ncols(), |r, c| match r.cmp(&c) {
            std::cmp::Ordering::Greater => l[(r, c)],
            std::cmp::Ordering::Equal => l[(r, r)].ln(),
            std::cmp::Ordering::Less => 0.0,
        });
        *store.get_mut(self.sigma_factors[j]) = raw;
        Ok(())
    }
}

/// `F_n = a_n + √b_n ⊙ ε`.
pub fn sample_latent(moments: &MarginalMoments, epsilon: &[f64]) -> Result<Vec<f64>> {
    if epsilon.len() != moments.mean.len() {
        return Err(Error::shape("sample_latent", moments.mean.len(), epsilon.len()));
    }
    if let Some(v) = moments.variance.iter().find(|v| **v < 0.0) {
        return Err(Error::Numerical(format!("negative variance {v}")));
    }
    Ok(moments
        .mean
        .iter()
        .zip(&moments.variance)
        .zip(epsilon)
        .map(|((a, b), e)| a + b.sqrt() * e)
        .collect())
}

/// Batch version of [`sample_latent`] on the tape.
pub fn sample_latent_var<'t>(moments: &BatchMoments<'t>, epsilon: &DMatrix<f64>) -> Var<'t> {
    let tape = moments.mean.tape();
    moments.mean + moments.variance.sqrt() * tape.constant(epsilon.clone())
}

/// `Σ_j log N(F_{·j}; 0, K_j)`; each column of `f` is one latent dimension.
pub fn gp_prior_logdensity(f: &DMatrix<f64>, grams: &[GramMatrix]) -> Result<f64> {
    if grams.len() != f.ncols() {
        return Err(Error::shape("gp_prior_logdensity", format!("{} Gram matrices", f.ncols()), grams.len()));
    }
    let n = f.nrows() as f64;
    let mut total = 0.0;
    for (j, g) in grams.iter().enumerate() {
        if g.entries.nrows() != f.nrows() {
            return Err(Error::shape("gp_prior_logdensity", f.nrows(), g.entries.nrows()));
        }
        let l = linalg::cholesky(&g.entries).map_err(|e| e.in_dimension(j))?;
        let col = DMatrix::from_column_slice(f.nrows(), 1, f.column(j).as_slice());
        let alpha = linalg::cholesky_solve(&l, &col)?;
        total += -0.5 * (col.dot(&alpha) + linalg::cholesky_logdet(&l) + n * (2.0 * std::f64::consts::PI).ln());
    }
    Ok(total)
}
