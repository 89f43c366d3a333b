use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{ard_matrix, spectrum_matrix, Features, Inputs, KernelSpec};
use crate::rng::{open_uniform, stream, tag};

const SWEEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InducingStrategy {
    Random,
    #[default]
    KernelMedoids,
}

impl std::str::FromStr for InducingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "random" => Ok(InducingStrategy::Random),
            "kernel-medoids" | "medoids" => Ok(InducingStrategy::KernelMedoids),
            other => Err(Error::Config(format!(
                "unknown inducing strategy '{other}' (expected random or kernel-medoids)"
            ))),
        }
    }
}

/// Choose `m` of the rows of `x` as pseudo-inputs.
pub fn select_inducing(x: &Inputs, m: usize, strategy: InducingStrategy, kernel: &KernelSpec, seed: u64) -> Result<Inputs> {
    let n = x.len();
    if m == 0 {
        return Err(Error::Config("inducing count must be positive".into()));
    }
    if m > n {
        return Err(Error::Config(format!("inducing count {m} exceeds the {n} training inputs")));
    }
    if m == n {
        return Ok(x.clone());
    }
    let idx = match strategy {
        InducingStrategy::Random => {
            let mut idx = index::sample(&mut stream(&[seed, tag::INDUCING]), n, m).into_vec();
            idx.sort_unstable();
            idx
        }
        InducingStrategy::KernelMedoids => medoids(&Features::new(x, kernel)?, m, kernel, seed),
    };
    Ok(x.select(&idx))
}

fn cross(a: &Features, b: &Features, kernel: &KernelSpec) -> DMatrix<f64> {
    match (a, b, kernel) {
        (Features::Dense(x), Features::Dense(z), KernelSpec::Ard(p)) => {
            ard_matrix(x, z, p).expect("dimensions checked when the features were built")
        }
        (Features::Profiles(x), Features::Profiles(z), KernelSpec::Spectrum(p)) => spectrum_matrix(x, z, p),
        _ => unreachable!("features are built from the same kernel"),
    }
}

fn self_similarity(a: &Features, kernel: &KernelSpec) -> Vec<f64> {
    (0..a.len())
        .map(|i| {
            let one = a.select(&[i]);
            cross(&one, &one, kernel)[(0, 0)]
        })
        .collect()
}

/// Squared kernel distance between every row of `a` (diagonal `da`) and every row of `b`.
fn sq_distances(a: &Features, da: &[f64], b: &Features, db: &[f64], kernel: &KernelSpec) -> DMatrix<f64> {
    let k = cross(a, b, kernel);
    DMatrix::from_fn(a.len(), b.len(), |i, j| (da[i] + db[j] - 2.0 * k[(i, j)]).max(0.0))
}

/// Alternating k-medoids under `d(x, x') = √(k(x,x) + k(x',x') − 2k(x,x'))`,
/// seeded by distance-weighted sampling.
fn medoids(feats: &Features, m: usize, kernel: &KernelSpec, seed: u64) -> Vec<usize> {
    let n = feats.len();
    let diag = self_similarity(feats, kernel);
    let mut rng = stream(&[seed, tag::INDUCING]);

    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest = vec![f64::INFINITY; n];
    while chosen.len() < m {
        let last = *chosen.last().expect("non-empty");
        let d = sq_distances(feats, &diag, &feats.select(&[last]), &[diag[last]], kernel);
        for i in 0..n {
            nearest[i] = nearest[i].min(d[(i, 0)]);
        }
        for &c in &chosen {
            nearest[c] = 0.0;
        }
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = open_uniform(&mut rng) * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in nearest.iter().enumerate() {
                acc += w;
                if *w > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| nearest.iter().rposition(|w| *w > 0.0).expect("positive total"))
        } else {
            // Every remaining point duplicates a medoid: take unused indices in order.
            (0..n).find(|i| !chosen.contains(i)).expect("m < n")
        };
        chosen.push(next);
    }

    for _ in 0..SWEEPS {
        let med_diag: Vec<f64> = chosen.iter().map(|&c| diag[c]).collect();
        let d = sq_distances(feats, &diag, &feats.select(&chosen), &med_diag, kernel);
        let mut clusters = vec![Vec::new(); m];
        for i in 0..n {
            let best = (0..m)
                .min_by(|&a, &b| d[(i, a)].total_cmp(&d[(i, b)]))
                .expect("m > 0");
            clusters[best].push(i);
        }
        let mut changed = false;
        for (c, members) in clusters.iter().enumerate() {
            if members.len() < 2 {
                continue;
            }
            let sub = feats.select(members);
            let sub_diag: Vec<f64> = members.iter().map(|&i| diag[i]).collect();
            let dd = sq_distances(&sub, &sub_diag, &sub, &sub_diag, kernel);
            let cost = |r: usize| (0..members.len()).map(|q| dd[(r, q)].sqrt()).sum::<f64>();
            let best = (0..members.len())
                .min_by(|&a, &b| cost(a).total_cmp(&cost(b)))
                .expect("non-empty cluster");
            if members[best] != chosen[c] && !chosen.contains(&members[best]) {
                chosen[c] = members[best];
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    chosen.sort_unstable();
    chosen
}
