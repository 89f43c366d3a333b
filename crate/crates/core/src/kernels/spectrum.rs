//! (k, m)-spectrum string kernel.
//!
//! A sequence is mapped to the vector of counts `c_β(s)` over every k-mer
//! `β` of the alphabet, where a position of `s` contributes to `β` when its
//! k-mer differs from `β` in at most `m` symbols. The kernel is the inner
//! product of these count vectors, optionally cosine-normalized.
//!
//! Counts are kept as a sorted list of `(code, count)` pairs; the inner
//! product is a merge join over two such lists.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diffcore::Var;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumParams {
    pub k: usize,
    pub m: usize,
    pub alphabet: Vec<u8>,
    pub log_alpha: f64,
    /// Log of the temperature σ of the normalized kernel, `α·exp((c − 1)/σ)`
    /// for cosine similarity `c`.
    pub log_temperature: f64,
    pub normalize: bool,
}

impl SpectrumParams {
    pub fn new(k: usize, m: usize, alphabet: Vec<u8>, alpha: f64, normalize: bool) -> Result<Self> {
        let p = Self {
            k,
            m,
            alphabet,
            log_alpha: alpha.ln(),
            log_temperature: 0.0,
            normalize,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("spectrum k must be at least 1".into()));
        }
        if self.m >= self.k {
            return Err(Error::Config(format!(
                "mismatch budget m={} must be smaller than k={}",
                self.m, self.k
            )));
        }
        if self.alphabet.is_empty() {
            return Err(Error::Config("spectrum alphabet is empty".into()));
        }
        let mut sorted = self.alphabet.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.alphabet.len() {
            return Err(Error::Config("spectrum alphabet has repeated symbols".into()));
        }
        let bits = (self.alphabet.len() as f64).log2() * self.k as f64;
        if bits > 63.0 {
            return Err(Error::Config(format!(
                "k={} over an alphabet of {} symbols does not fit a 64-bit k-mer code",
                self.k,
                self.alphabet.len()
            )));
        }
        if !self.log_alpha.is_finite() {
            return Err(Error::Config("spectrum alpha must be positive".into()));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    /// Apply the output scale and (for the normalized kernel) the temperature to a base value.
    fn finish(&self, base: f64, support: f64) -> f64 {
        if self.normalize {
            self.alpha() * ((base - 1.0) / self.temperature()).exp() * support
        } else {
            self.alpha() * base
        }
    }
}

/// Sparse k-mer count vector of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct KmerProfile {
    entries: Vec<(u64, f64)>,
    self_similarity: f64,
}

impl KmerProfile {
    pub fn entries(&self) -> &[(u64, f64)] {
        &self.entries
    }

    pub fn self_similarity(&self) -> f64 {
        self.self_similarity
    }

    pub fn dot(&self, other: &KmerProfile) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j, mut s) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }
}

#[derive(Debug)]
struct SymbolOutOfAlphabet {
    symbol: u8,
    position: usize,
}

impl fmt::Display for SymbolOutOfAlphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "symbol {:?} at position {} is not in the alphabet",
            self.symbol as char, self.position
        )
    }
}

fn encode(seq: &[u8], alphabet: &[u8]) -> std::result::Result<Vec<u64>, SymbolOutOfAlphabet> {
    let mut table = [u8::MAX; 256];
    for (i, &s) in alphabet.iter().enumerate() {
        table[s as usize] = i as u8;
    }
    seq.iter()
        .enumerate()
        .map(|(position, &symbol)| match table[symbol as usize] {
            u8::MAX => Err(SymbolOutOfAlphabet { symbol, position }),
            v => Ok(v as u64),
        })
        .collect()
}

/// Push every k-mer within Hamming distance `budget` of `kmer` (positions ≥ `from` only).
fn neighbourhood(kmer: &mut [u64], from: usize, budget: usize, sigma: u64, out: &mut Vec<u64>) {
    out.push(kmer.iter().fold(0u64, |c, &s| c * sigma + s));
    if budget == 0 {
        return;
    }
    for pos in from..kmer.len() {
        let original = kmer[pos];
        for sym in 0..sigma {
            if sym == original {
                continue;
            }
            kmer[pos] = sym;
            neighbourhood(kmer, pos + 1, budget - 1, sigma, out);
        }
        kmer[pos] = original;
    }
}

/// Count vector of `seq`. Sequences shorter than `k` get an empty profile.
pub fn profile(seq: &[u8], p: &SpectrumParams) -> Result<KmerProfile> {
    let codes = encode(seq, &p.alphabet).map_err(|e| Error::Input(e.to_string()))?;
    let sigma = p.alphabet.len() as u64;
    let mut hits = Vec::new();
    if codes.len() >= p.k {
        let mut window = vec![0u64; p.k];
        for start in 0..=codes.len() - p.k {
            window.copy_from_slice(&codes[start..start + p.k]);
            neighbourhood(&mut window, 0, p.m, sigma, &mut hits);
        }
    }
    hits.sort_unstable();
    let mut entries: Vec<(u64, f64)> = Vec::new();
    for code in hits {
        match entries.last_mut() {
            Some((c, n)) if *c == code => *n += 1.0,
            _ => entries.push((code, 1.0)),
        }
    }
    let self_similarity = entries.iter().map(|(_, n)| n * n).sum();
    Ok(KmerProfile {
        entries,
        self_similarity,
    })
}

/// Base kernel value between two profiles: the raw inner product, or the
/// cosine-normalized one when `normalize` is set. Scale and temperature are
/// not applied.
pub fn base_value(a: &KmerProfile, b: &KmerProfile, normalize: bool) -> f64 {
    let raw = a.dot(b);
    if !normalize {
        return raw;
    }
    let denom = (a.self_similarity * b.self_similarity).sqrt();
    if denom > 0.0 {
        (raw / denom).min(1.0)
    } else {
        0.0
    }
}

pub fn spectrum_eval(s: &[u8], s2: &[u8], p: &SpectrumParams) -> Result<f64> {
    p.validate()?;
    let a = profile(s, p).map_err(|e| Error::Input(format!("first sequence: {e}")))?;
    let b = profile(s2, p).map_err(|e| Error::Input(format!("second sequence: {e}")))?;
    Ok(p.finish(base_value(&a, &b, p.normalize), support(&a, &b)))
}

pub fn profiles(seqs: &[Vec<u8>], p: &SpectrumParams) -> Result<Vec<KmerProfile>> {
    seqs.iter()
        .enumerate()
        .map(|(i, s)| profile(s, p).map_err(|e| Error::Input(format!("sequence {i}: {e}"))))
        .collect()
}

pub fn base_matrix(a: &[KmerProfile], b: &[KmerProfile], normalize: bool) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| base_value(&a[i], &b[j], normalize))
}

pub fn base_diagonal(a: &[KmerProfile], normalize: bool) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), 1, |i, _| base_value(&a[i], &a[i], normalize))
}

/// 1 where both profiles are non-empty. Sequences shorter than k score 0
/// against everything under the normalized kernel.
fn support(a: &KmerProfile, b: &KmerProfile) -> f64 {
    if a.self_similarity > 0.0 && b.self_similarity > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn scaled<'t>(base: DMatrix<f64>, support: DMatrix<f64>, log_alpha: Var<'t>, log_temperature: Var<'t>, normalize: bool) -> Var<'t> {
    let tape = log_alpha.tape();
    let shaped = if normalize {
        (tape.constant(base.add_scalar(-1.0)) * (-log_temperature).exp()).exp() * tape.constant(support)
    } else {
        tape.constant(base)
    };
    shaped * log_alpha.exp()
}

/// Scaled (and tempered) spectrum kernel between two profile sets, on the tape.
pub fn spectrum_scaled<'t>(a: &[KmerProfile], b: &[KmerProfile], log_alpha: Var<'t>, log_temperature: Var<'t>, normalize: bool) -> Var<'t> {
    let sup = DMatrix::from_fn(a.len(), b.len(), |i, j| support(&a[i], &b[j]));
    scaled(base_matrix(a, b, normalize), sup, log_alpha, log_temperature, normalize)
}

/// Diagonal of [`spectrum_scaled`] for one profile set, as a column.
pub fn spectrum_scaled_diagonal<'t>(a: &[KmerProfile], log_alpha: Var<'t>, log_temperature: Var<'t>, normalize: bool) -> Var<'t> {
    let sup = DMatrix::from_fn(a.len(), 1, |i, _| support(&a[i], &a[i]));
    scaled(base_diagonal(a, normalize), sup, log_alpha, log_temperature, normalize)
}

pub fn spectrum_matrix(a: &[KmerProfile], b: &[KmerProfile], p: &SpectrumParams) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| p.finish(base_value(&a[i], &b[j], p.normalize), support(&a[i], &b[j])))
}
