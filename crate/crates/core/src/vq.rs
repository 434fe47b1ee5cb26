//! Vector-quantization codebook over motion features, with the
//! residual error-code mechanism that flags unseen motion: the residual
//! between a feature and its nearest codeword is quantized with the
//! same vocabulary, producing a (word, error-word) token pair.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TrinityError};

/// Quantized word and residual error word for one feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TokenPair {
    pub q_index: usize,
    pub err_index: usize,
}

#[derive(Clone, Debug)]
pub struct Codebook {
    pub dim: usize,
    entries: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Codebook> {
        if entries.len() < 2 {
            return Err(TrinityError::Config(format!(
                "codebook needs at least 2 entries, got {}",
                entries.len()
            )));
        }
        let dim = entries[0].len();
        for (i, e) in entries.iter().enumerate() {
            if e.len() != dim {
                return Err(TrinityError::ShapeMismatch {
                    op: "codebook entry",
                    lhs: vec![dim],
                    rhs: vec![e.len()],
                });
            }
            if e.iter().any(|v| !v.is_finite()) {
                return Err(TrinityError::Contract(format!(
                    "codebook entry {i} contains non-finite values"
                )));
            }
        }
        Ok(Codebook { dim, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, index: usize) -> &[f64] {
        &self.entries[index]
    }

    /// Index of the nearest entry by Euclidean distance, ties broken by
    /// the lowest index, plus that distance.
    pub fn quantize(&self, feature: &[f64]) -> Result<(usize, f64)> {
        if feature.len() != self.dim {
            return Err(TrinityError::ShapeMismatch {
                op: "quantize",
                lhs: vec![feature.len()],
                rhs: vec![self.dim],
            });
        }
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(TrinityError::Contract(
                "quantize input contains non-finite values".into(),
            ));
        }
        let mut best = 0usize;
        let mut best_sq = f64::INFINITY;
        for (i, e) in self.entries.iter().enumerate() {
            let sq: f64 = feature
                .iter()
                .zip(e)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if sq < best_sq {
                best_sq = sq;
                best = i;
            }
        }
        Ok((best, best_sq.sqrt()))
    }

    /// Quantize a feature, then quantize its residual with the same
    /// vocabulary.
    pub fn error_code(&self, feature: &[f64]) -> Result<TokenPair> {
        let (q_index, _) = self.quantize(feature)?;
        let residual: Vec<f64> = feature
            .iter()
            .zip(self.entry(q_index))
            .map(|(a, b)| a - b)
            .collect();
        let (err_index, _) = self.quantize(&residual)?;
        Ok(TokenPair { q_index, err_index })
    }
}

#[derive(Clone, Debug)]
pub struct PretrainConfig {
    pub codebook_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            codebook_size: 512,
            epochs: 30,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Per-epoch mean squared quantization error of a pretraining run.
pub struct PretrainReport {
    pub epoch_mse: Vec<f64>,
}

/// Fit a codebook by SGD on the squared quantization error with
/// straight-through assignment. Entries unused for a full epoch are
/// re-seeded to a random training feature.
pub fn pretrain_codebook(
    features: &[Vec<f64>],
    cfg: &PretrainConfig,
) -> Result<(Codebook, PretrainReport)> {
    let m = cfg.codebook_size;
    if m < 1 {
        return Err(TrinityError::Config("codebook size must be at least 1".into()));
    }
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    'outer: for f in features {
        for d in &distinct {
            if d.as_slice() == f.as_slice() {
                continue 'outer;
            }
        }
        distinct.push(f);
        if distinct.len() >= m {
            break;
        }
    }
    if distinct.len() < m {
        return Err(TrinityError::Degenerate(format!(
            "pretraining needs at least {m} distinct features, found {}",
            distinct.len()
        )));
    }
    let dim = features[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Initialize from a random sample of the training features.
    let mut pool: Vec<usize> = (0..features.len()).collect();
    pool.shuffle(&mut rng);
    let mut entries: Vec<Vec<f64>> = Vec::with_capacity(m);
    for &i in &pool {
        if entries.iter().all(|e| e.as_slice() != features[i].as_slice()) {
            entries.push(features[i].clone());
            if entries.len() == m {
                break;
            }
        }
    }

    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut epoch_mse = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut used = vec![false; m];
        let mut sq_sum = 0.0;
        for &fi in &order {
            let f = &features[fi];
            let mut best = 0usize;
            let mut best_sq = f64::INFINITY;
            for (i, e) in entries.iter().enumerate() {
                let sq: f64 = f.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
                if sq < best_sq {
                    best_sq = sq;
                    best = i;
                }
            }
            used[best] = true;
            sq_sum += best_sq;
            // d/dz_q ||f - z_q||^2 = 2 (z_q - f)
            let e = &mut entries[best];
            for j in 0..dim {
                e[j] -= cfg.lr * 2.0 * (e[j] - f[j]);
            }
        }
        // Re-seed dead entries so MSE training cannot collapse.
        for i in 0..m {
            if !used[i] {
                let pick = rng.gen_range(0..features.len());
                entries[i] = features[pick].clone();
            }
        }
        epoch_mse.push(sq_sum / features.len() as f64);
    }
    let codebook = if m == 1 {
        // Bypass the two-entry floor for the single-centroid case.
        Codebook {
            dim,
            entries,
        }
    } else {
        Codebook::new(entries)?
    };
    Ok((codebook, PretrainReport { epoch_mse }))
}

use rand::SeedableRng;

const CODEBOOK_MAGIC: &[u8; 8] = b"TRNCDBK1";

/// Codebook file: magic, M, dim, float64 little-endian entries.
pub fn write_codebook(path: &Path, cb: &Codebook) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CODEBOOK_MAGIC)?;
    w.write_all(&(cb.len() as u32).to_le_bytes())?;
    w.write_all(&(cb.dim as u32).to_le_bytes())?;
    for e in &cb.entries {
        for v in e {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_codebook(path: &Path) -> Result<Codebook> {
    let mut r = BufReader::new(File::open(path)?);
    let mut offset: u64 = 0;
    let mut take = |n: usize, what: &str, off: &mut u64| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(|_| TrinityError::Format {
            path: path.to_path_buf(),
            detail: format!("truncated while reading {what}"),
            offset: *off,
        })?;
        *off += n as u64;
        Ok(buf)
    };
    let magic = take(8, "magic", &mut offset)?;
    if magic != CODEBOOK_MAGIC {
        return Err(TrinityError::Format {
            path: path.to_path_buf(),
            detail: "bad magic, not a codebook".into(),
            offset: 0,
        });
    }
    let m = u32::from_le_bytes(take(4, "entry count", &mut offset)?.try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(take(4, "dimension", &mut offset)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(m);
    for _ in 0..m {
        let raw = take(dim * 8, "entry", &mut offset)?;
        entries.push(
            raw.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        );
    }
    Codebook::new(entries)
}
