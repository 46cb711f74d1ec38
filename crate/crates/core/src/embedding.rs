//! Dense per-sample embeddings of kernel columns.
//!
//! Column `j` of a training Gram matrix is the similarity profile of sample
//! `j` against the whole training set; PCA over these columns produces the
//! dense low-dimensional embedding fed to the per-kernel towers. Test
//! samples are embedded by projecting their similarity vector to the
//! training samples through the same fitted PCA basis.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::kernels::GramMatrix;
use crate::linalg::{self, PcaModel};

/// Dense embedding rows for one kernel.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    /// N×d embedding rows, aligned with the kernel's frame order.
    pub z: Array2<f64>,
    /// Subset mask of the kernel these embeddings came from.
    pub kernel_mask: u32,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.z.ncols()
    }
}

/// Fit PCA on the columns of a training Gram matrix and return the projected
/// training embeddings together with the fitted model.
///
/// `d` is clipped to `N_train` (with a warning) since the column space has at
/// most that many directions.
pub fn embed_train(
    gram: &GramMatrix,
    d: usize,
    kernel_mask: u32,
) -> Result<(EmbeddingMatrix, PcaModel)> {
    let n = gram.n();
    if n < 2 {
        return Err(Error::Dimension(format!(
            "embed_train needs at least 2 training frames, got {n}"
        )));
    }
    if d == 0 {
        return Err(Error::Parameter("embedding dim must be positive".into()));
    }
    let dim = if d > n {
        log::warn!("embedding dim {d} exceeds N_train={n}; clipping to {n}");
        n
    } else {
        d
    };
    // K is symmetric, so its rows are its columns; rows are the samples.
    let pca = linalg::pca_fit(&gram.k.view(), dim)?;
    let z = linalg::pca_transform(&pca, &gram.k.view())?;
    Ok((
        EmbeddingMatrix {
            z,
            kernel_mask,
        },
        pca,
    ))
}

/// Embed test samples: each row of `cross` holds one test sample's
/// similarities to all training samples, in training order, and is projected
/// through the training-fitted PCA model.
pub fn embed_test(
    cross: &ArrayView2<f64>,
    pca: &PcaModel,
    kernel_mask: u32,
) -> Result<EmbeddingMatrix> {
    if cross.ncols() != pca.input_dim() {
        return Err(Error::Dimension(format!(
            "cross block width {} does not match PCA input dim {}",
            cross.ncols(),
            pca.input_dim()
        )));
    }
    let z = linalg::pca_transform(pca, cross)?;
    Ok(EmbeddingMatrix {
        z,
        kernel_mask,
    })
}

const EMBEDDING_MAGIC: &[u8; 4] = b"KFEM";
const EMBEDDING_VERSION: u32 = 1;

/// Debug dump of an embedding matrix: magic, version, rows, cols, kernel
/// mask, then row-major little-endian f64.
pub fn save_embedding(path: &std::path::Path, emb: &EmbeddingMatrix) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    w.write_all(&(emb.z.nrows() as u64).to_le_bytes())?;
    w.write_all(&(emb.z.ncols() as u64).to_le_bytes())?;
    w.write_all(&emb.kernel_mask.to_le_bytes())?;
    for v in emb.z.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read an embedding dump written by [`save_embedding`].
pub fn load_embedding(path: &std::path::Path) -> Result<EmbeddingMatrix> {
    use std::io::Read;
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != EMBEDDING_MAGIC {
        return Err(Error::Schema(format!(
            "{}: not an embedding file",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != EMBEDDING_VERSION {
        return Err(Error::Schema("unsupported embedding file version".into()));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let rows = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf)?;
    let cols = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u32buf)?;
    let kernel_mask = u32::from_le_bytes(u32buf);
    let mut data = vec![0.0f64; rows * cols];
    let mut f64buf = [0u8; 8];
    for v in data.iter_mut() {
        r.read_exact(&mut f64buf)?;
        *v = f64::from_le_bytes(f64buf);
    }
    Ok(EmbeddingMatrix {
        z: Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Schema(e.to_string()))?,
        kernel_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelKind;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gram_from(k: Array2<f64>) -> GramMatrix {
        let n = k.nrows();
        GramMatrix {
            k,
            kind: KernelKind::Statistics,
            psd_checked: true,
            source_ids: (0..n as u64).collect(),
        }
    }

    fn random_psd(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Array2::zeros((n, n));
        for v in b.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        b.t().dot(&b) / n as f64
    }

    #[test]
    fn dim_is_clipped_to_n_train() {
        let g = gram_from(random_psd(10, 1));
        let (z, pca) = embed_train(&g, 500, 1).unwrap();
        assert_eq!(z.z.shape(), &[10, 10]);
        assert_eq!(pca.output_dim(), 10);
    }

    #[test]
    fn ideal_two_class_kernel_separates_linearly() {
        // Block-diagonal ideal kernel: 1 within class, 0 across.
        let n = 40;
        let mut k = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if (i < n / 2) == (j < n / 2) {
                    k[[i, j]] = 1.0;
                }
            }
        }
        let (emb, _) = embed_train(&gram_from(k), 2, 1).unwrap();
        // Linear separability oracle: a centroid classifier must be perfect.
        let (mut c0, mut c1) = (vec![0.0; 2], vec![0.0; 2]);
        for i in 0..n {
            let target = if i < n / 2 { &mut c0 } else { &mut c1 };
            for d in 0..2 {
                target[d] += emb.z[[i, d]] / (n / 2) as f64;
            }
        }
        for i in 0..n {
            let d0: f64 = (0..2).map(|d| (emb.z[[i, d]] - c0[d]).powi(2)).sum();
            let d1: f64 = (0..2).map(|d| (emb.z[[i, d]] - c1[d]).powi(2)).sum();
            assert_eq!(d0 < d1, i < n / 2, "sample {i} on wrong side");
        }
    }

    #[test]
    fn test_row_matches_training_row_for_duplicate_sample() {
        let k = random_psd(12, 3);
        let g = gram_from(k.clone());
        let (ztrain, pca) = embed_train(&g, 5, 1).unwrap();
        // A test sample identical to training sample 4 has the same
        // similarity column.
        let cross = k.slice(ndarray::s![4..5, ..]);
        let ztest = embed_test(&cross, &pca, 1).unwrap();
        for d in 0..5 {
            assert!((ztest.z[[0, d]] - ztrain.z[[4, d]]).abs() < 1e-8);
        }
    }

    #[test]
    fn empty_test_side_gives_empty_matrix() {
        let g = gram_from(random_psd(8, 5));
        let (_, pca) = embed_train(&g, 4, 1).unwrap();
        let cross = Array2::<f64>::zeros((0, 8));
        let z = embed_test(&cross.view(), &pca, 1).unwrap();
        assert_eq!(z.z.shape(), &[0, 4]);
    }

    #[test]
    fn zero_similarity_row_maps_to_projected_negative_mean() {
        let g = gram_from(random_psd(9, 7));
        let (_, pca) = embed_train(&g, 3, 1).unwrap();
        let zero = Array2::<f64>::zeros((1, 9));
        let z = embed_test(&zero.view(), &pca, 1).unwrap();
        // (0 − mean)·components
        for d in 0..3 {
            let expected: f64 = (0..9)
                .map(|j| -pca.mean[j] * pca.components[[j, d]])
                .sum();
            assert!((z.z[[0, d]] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn embeddings_are_deterministic() {
        let g = gram_from(random_psd(15, 11));
        let (a, _) = embed_train(&g, 6, 1).unwrap();
        let (b, _) = embed_train(&g, 6, 1).unwrap();
        assert_eq!(a.z, b.z);
    }

    #[test]
    fn embedding_dump_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.emb");
        let g = gram_from(random_psd(9, 21));
        let (emb, _) = embed_train(&g, 4, 0b101).unwrap();
        save_embedding(&path, &emb).unwrap();
        let loaded = load_embedding(&path).unwrap();
        assert_eq!(loaded.z, emb.z);
        assert_eq!(loaded.kernel_mask, 0b101);
    }

    #[test]
    fn permutation_preserves_pairwise_distances() {
        let n = 30;
        let k = random_psd(n, 13);
        let perm: Vec<usize> = (0..n).rev().collect();
        let kp = {
            let mut out = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    out[[i, j]] = k[[perm[i], perm[j]]];
                }
            }
            out
        };
        let (za, _) = embed_train(&gram_from(k), 5, 1).unwrap();
        let (zb, _) = embed_train(&gram_from(kp), 5, 1).unwrap();
        for i in 0..n {
            for j in (i + 1)..n {
                let da: f64 = (0..5)
                    .map(|d| (za.z[[perm[i], d]] - za.z[[perm[j], d]]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let db: f64 = (0..5)
                    .map(|d| (zb.z[[i, d]] - zb.z[[j, d]]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((da - db).abs() < 1e-8, "distance mismatch {da} vs {db}");
            }
        }
    }
}
