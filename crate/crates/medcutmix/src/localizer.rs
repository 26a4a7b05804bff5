//! Diagnostic-sentence → image cross-attention map.
//!
//! scores = E_img · E_sentᵀ / τ₁, softmax over the patch dimension per
//! token, summed over tokens. The raw map sums to the token count; the
//! normalized form divides by the max entry so it can serve as a convex
//! mixing weight in [0,1].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::write_pgm;
use crate::error::{Error, Result};
use crate::nn::tensor::{softmax_inplace, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Divide by the max entry (default): preserves argmax, maps into [0,1].
    Max,
    /// Divide by the token count: convex weights that sum patch-wise to 1/N_patch scale.
    TokenCount,
}

impl Default for NormMode {
    fn default() -> Self {
        NormMode::Max
    }
}

#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub token_count: usize,
    pub tau1: f64,
}

pub fn attention_map(
    e_img: &Tensor,
    e_sent: &Tensor,
    tau1: f64,
    mode: NormMode,
) -> Result<AttentionMap> {
    if e_sent.rows() == 0 {
        return Err(Error::Invariant("zero diagnostic tokens".into()));
    }
    if tau1 <= 0.0 {
        return Err(Error::Config("temperature must be positive".into()));
    }
    if e_img.cols() != e_sent.cols() {
        return Err(Error::Shape {
            expected: format!("embedding dim {}", e_img.cols()),
            got: format!("{}", e_sent.cols()),
        });
    }
    let n_patch = e_img.rows();
    let m = e_sent.rows();
    let mut raw = vec![0.0; n_patch];
    // one softmax column per token, over patches
    let mut column = vec![0.0; n_patch];
    for t in 0..m {
        let tok = e_sent.row(t);
        for (p, slot) in column.iter_mut().enumerate() {
            *slot = e_img.row(p).iter().zip(tok).map(|(a, b)| a * b).sum::<f64>() / tau1;
        }
        softmax_inplace(&mut column);
        for (r, c) in raw.iter_mut().zip(&column) {
            *r += c;
        }
    }
    let normalized = match mode {
        NormMode::Max => {
            let max = raw.iter().cloned().fold(0.0_f64, f64::max).max(1e-300);
            raw.iter().map(|v| v / max).collect()
        }
        NormMode::TokenCount => raw.iter().map(|v| v / m as f64).collect(),
    };
    Ok(AttentionMap { raw, normalized, token_count: m, tau1 })
}

impl AttentionMap {
    pub fn argmax(&self) -> usize {
        self.raw
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Write the normalized map as a PGM upsampled to pixel resolution
    /// (nearest neighbour per patch).
    pub fn write_heatmap(
        &self,
        path: &Path,
        patches_w: usize,
        patches_h: usize,
        patch: usize,
    ) -> Result<()> {
        if patches_w * patches_h != self.normalized.len() {
            return Err(Error::Shape {
                expected: format!("{} patches", self.normalized.len()),
                got: format!("{patches_w}x{patches_h}"),
            });
        }
        let (w, h) = (patches_w * patch, patches_h * patch);
        let mut gray = vec![0.0; w * h];
        for py in 0..patches_h {
            for px in 0..patches_w {
                let v = self.normalized[py * patches_w + px];
                for dy in 0..patch {
                    for dx in 0..patch {
                        gray[(py * patch + dy) * w + (px * patch + dx)] = v;
                    }
                }
            }
        }
        write_pgm(path, w, h, &gray)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Tensor {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Tensor::from_vec(&[rows, cols], data).unwrap()
    }

    #[test]
    fn identical_patches_give_uniform_map() {
        let e_img = tensor(8, 4, |_, c| 0.3 * c as f64 + 0.1);
        let e_sent = tensor(3, 4, |r, c| (r + c) as f64 * 0.2);
        let am = attention_map(&e_img, &e_sent, 0.005, NormMode::Max).unwrap();
        for v in &am.raw {
            assert!((v - 3.0 / 8.0).abs() < 1e-9, "{v}");
        }
        assert!((am.raw.iter().sum::<f64>() - 3.0).abs() < 1e-6);
    }

    #[test]
    fn single_token_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e_img = tensor(16, 8, |_, _| rng.gen_range(-1.0..1.0));
        let e_sent = tensor(1, 8, |_, c| c as f64 * 0.1 - 0.3);
        let am = attention_map(&e_img, &e_sent, 0.07, NormMode::Max).unwrap();
        assert!((am.raw.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((am.normalized.iter().cloned().fold(0.0_f64, f64::max) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matching_patch_dominates_at_small_tau() {
        // one patch equals the token embedding, others orthogonal, d=4
        let mut e_img = Tensor::zeros(&[4, 4]);
        e_img.row_mut(2).copy_from_slice(&[0.5, 0.5, 0.5, 0.5]);
        e_img.row_mut(0)[0] = 0.0;
        let e_sent = Tensor::from_vec(&[1, 4], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let am = attention_map(&e_img, &e_sent, 0.005, NormMode::Max).unwrap();
        // softmax([0,0,‖e‖²/τ₁,0]) with ‖e‖² = 1, τ₁ = 0.005 → logit 200
        assert!(am.normalized[2] > 0.999999);
        assert!(am.normalized[0] < 1e-6 && am.normalized[1] < 1e-6 && am.normalized[3] < 1e-6);
        assert_eq!(am.argmax(), 2);
    }

    #[test]
    fn argmax_invariant_under_joint_rescale() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let e_img = tensor(12, 6, |_, _| rng.gen_range(-1.0..1.0));
            let e_sent = tensor(3, 6, |_, _| rng.gen_range(-1.0..1.0));
            let tau = 0.05;
            let alpha = rng.gen_range(0.2..5.0);
            let a = attention_map(&e_img, &e_sent, tau, NormMode::Max).unwrap();
            let e_img2 = Tensor::from_vec(&e_img.shape, e_img.data.iter().map(|v| v * alpha).collect()).unwrap();
            let e_sent2 = Tensor::from_vec(&e_sent.shape, e_sent.data.iter().map(|v| v * alpha).collect()).unwrap();
            let b = attention_map(&e_img2, &e_sent2, tau * alpha * alpha, NormMode::Max).unwrap();
            assert_eq!(a.argmax(), b.argmax());
        }
    }

    #[test]
    fn smaller_tau_never_increases_column_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let entropy = |col: &[f64]| -> f64 {
            col.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
        };
        for _ in 0..20 {
            let e_img = tensor(10, 5, |_, _| rng.gen_range(-1.0..1.0));
            let e_sent = tensor(1, 5, |_, _| rng.gen_range(-1.0..1.0));
            let hot = attention_map(&e_img, &e_sent, 1.0, NormMode::Max).unwrap();
            let cold = attention_map(&e_img, &e_sent, 0.1, NormMode::Max).unwrap();
            // single token: raw is exactly the per-token softmax column
            assert!(entropy(&cold.raw) <= entropy(&hot.raw) + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let e_img = tensor(4, 4, |_, _| 0.0);
        let empty = Tensor::zeros(&[0, 4]);
        assert!(attention_map(&e_img, &empty, 0.005, NormMode::Max).is_err());
        let e_sent = tensor(1, 4, |_, _| 0.0);
        assert!(attention_map(&e_img, &e_sent, 0.0, NormMode::Max).is_err());
    }
}
