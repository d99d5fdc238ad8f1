use serde::{Deserialize, Serialize};

use super::db::{dot, rank_hits, FingerprintDB, Hit};
use super::kmeans::{kmeans, nearest, squared_l2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IvfPqConfig {
    /// Coarse clusters; `ceil(sqrt(rows))` when unset.
    pub n_list: Option<usize>,
    /// Product-quantizer sub-spaces; must divide the dimension.
    pub m: usize,
    pub iters: usize,
    pub seed: u64,
    /// Clusters visited per query; `max(8, n_list / 8)` when unset.
    pub n_probe: Option<usize>,
}

impl Default for IvfPqConfig {
    fn default() -> Self {
        Self {
            n_list: None,
            m: 16,
            iters: 25,
            seed: 0,
            n_probe: None,
        }
    }
}

/// Inverted file over k-means cells with product-quantized residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfPqIndex {
    pub dim: usize,
    pub n_list: usize,
    pub m: usize,
    /// Centroids per sub-space, `min(256, rows)`.
    pub ksub: usize,
    pub n_probe: usize,
    /// `n_list x dim`.
    pub coarse: Vec<f32>,
    /// `m x ksub x dsub`.
    pub codebooks: Vec<f32>,
    /// Coarse cell of every row.
    pub assign: Vec<u32>,
    /// `rows x m` sub-space codes.
    pub codes: Vec<u8>,
    lists: Vec<Vec<u32>>,
}

impl IvfPqIndex {
    pub fn dsub(&self) -> usize {
        self.dim / self.m
    }

    pub fn build(db: &FingerprintDB, cfg: &IvfPqConfig) -> Result<Self> {
        let n = db.len();
        let dim = db.dim;
        if n == 0 {
            return Err(Error::Data("cannot index an empty database".into()));
        }
        let n_list = cfg
            .n_list
            .unwrap_or_else(|| (n as f64).sqrt().ceil() as usize);
        if n_list == 0 || n_list > n {
            return Err(Error::Config(format!("n_list {n_list} must be in 1..={n}")));
        }
        if cfg.m == 0 || !dim.is_multiple_of(cfg.m) {
            return Err(Error::Config(format!(
                "{} sub-spaces do not divide dimension {dim}",
                cfg.m
            )));
        }
        let (m, dsub, ksub) = (cfg.m, dim / cfg.m, n.min(256));
        let coarse = kmeans(db.data(), dim, n_list, cfg.iters, cfg.seed)?;
        let assign: Vec<u32> = (0..n)
            .map(|r| nearest(db.row(r), &coarse, dim).0 as u32)
            .collect();

        let mut residuals = Vec::with_capacity(n * dim);
        for r in 0..n {
            let c = &coarse[assign[r] as usize * dim..][..dim];
            residuals.extend(db.row(r).iter().zip(c).map(|(x, y)| x - y));
        }
        let mut codebooks = Vec::with_capacity(m * ksub * dsub);
        let mut codes = vec![0u8; n * m];
        for s in 0..m {
            let sub: Vec<f32> = residuals
                .chunks_exact(dim)
                .flat_map(|r| r[s * dsub..(s + 1) * dsub].iter().copied())
                .collect();
            let book = kmeans(
                &sub,
                dsub,
                ksub,
                cfg.iters,
                cfg.seed.wrapping_add(1 + s as u64),
            )?;
            for (r, x) in sub.chunks_exact(dsub).enumerate() {
                codes[r * m + s] = nearest(x, &book, dsub).0 as u8;
            }
            codebooks.extend_from_slice(&book);
        }
        let n_probe = cfg.n_probe.unwrap_or((n_list / 8).max(8)).clamp(1, n_list);
        Ok(Self::assemble(
            dim, n_list, m, ksub, n_probe, coarse, codebooks, assign, codes,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        dim: usize,
        n_list: usize,
        m: usize,
        ksub: usize,
        n_probe: usize,
        coarse: Vec<f32>,
        codebooks: Vec<f32>,
        assign: Vec<u32>,
        codes: Vec<u8>,
    ) -> Self {
        let mut lists = vec![Vec::new(); n_list];
        for (r, &c) in assign.iter().enumerate() {
            lists[c as usize].push(r as u32);
        }
        Self {
            dim,
            n_list,
            m,
            ksub,
            n_probe,
            coarse,
            codebooks,
            assign,
            codes,
            lists,
        }
    }

    pub fn list(&self, c: usize) -> &[u32] {
        &self.lists[c]
    }

    pub fn len(&self) -> usize {
        self.assign.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assign.is_empty()
    }

    /// Decoded approximation of row `r`.
    pub fn reconstruct(&self, r: usize) -> Vec<f32> {
        let (dim, dsub) = (self.dim, self.dsub());
        let mut out = self.coarse[self.assign[r] as usize * dim..][..dim].to_vec();
        for s in 0..self.m {
            let code = self.codes[r * self.m + s] as usize;
            let cw = &self.codebooks[(s * self.ksub + code) * dsub..][..dsub];
            for (o, &v) in out[s * dsub..(s + 1) * dsub].iter_mut().zip(cw) {
                *o += v;
            }
        }
        out
    }

    /// Top-`k` rows by approximate inner product over the `n_probe` nearest cells.
    pub fn search(&self, q: &[f32], k: usize, n_probe: Option<usize>) -> Result<Vec<Hit>> {
        if self.is_empty() {
            return Err(Error::Search("index is empty".into()));
        }
        if q.len() != self.dim {
            return Err(Error::Shape(format!(
                "query dim {} vs {}",
                q.len(),
                self.dim
            )));
        }
        let (dim, dsub, ksub) = (self.dim, self.dsub(), self.ksub);
        let probe = n_probe.unwrap_or(self.n_probe).clamp(1, self.n_list);
        let mut cells: Vec<(f32, usize)> = self
            .coarse
            .chunks_exact(dim)
            .enumerate()
            .map(|(c, cent)| (squared_l2(q, cent), c))
            .collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut lut = vec![0.0f32; self.m * ksub];
        for s in 0..self.m {
            let qs = &q[s * dsub..(s + 1) * dsub];
            for j in 0..ksub {
                lut[s * ksub + j] = dot(qs, &self.codebooks[(s * ksub + j) * dsub..][..dsub]);
            }
        }
        let mut hits = Vec::new();
        for &(_, c) in &cells[..probe] {
            let base = dot(q, &self.coarse[c * dim..(c + 1) * dim]);
            for &r in &self.lists[c] {
                let code = &self.codes[r as usize * self.m..][..self.m];
                let approx: f32 = code
                    .iter()
                    .enumerate()
                    .map(|(s, &j)| lut[s * ksub + j as usize])
                    .sum();
                hits.push(Hit {
                    row: r as usize,
                    score: base + approx,
                });
            }
        }
        rank_hits(&mut hits, k);
        Ok(hits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Fingerprint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_db(n: usize, dim: usize, seed: u64) -> FingerprintDB {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Fingerprint> = (0..n)
            .map(|_| {
                let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                Fingerprint {
                    values: v.iter().map(|x| x / norm).collect(),
                }
            })
            .collect();
        FingerprintDB::from_tracks(&[("t".into(), rows)]).unwrap()
    }

    #[test]
    fn single_list_holds_everything() {
        let db = random_db(50, 16, 1);
        let idx = IvfPqIndex::build(
            &db,
            &IvfPqConfig {
                n_list: Some(1),
                m: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(idx.list(0).len(), 50);
        assert_eq!(idx.ksub, 50);
    }

    #[test]
    fn bad_settings_are_config_errors() {
        let db = random_db(10, 16, 2);
        let too_many = IvfPqConfig {
            n_list: Some(11),
            m: 4,
            ..Default::default()
        };
        assert!(matches!(
            IvfPqIndex::build(&db, &too_many),
            Err(Error::Config(_))
        ));
        let uneven = IvfPqConfig {
            n_list: Some(2),
            m: 5,
            ..Default::default()
        };
        assert!(matches!(
            IvfPqIndex::build(&db, &uneven),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn oversized_k_returns_every_probed_row() {
        let db = random_db(30, 8, 3);
        let cfg = IvfPqConfig {
            n_list: Some(3),
            m: 2,
            n_probe: Some(3),
            ..Default::default()
        };
        let idx = IvfPqIndex::build(&db, &cfg).unwrap();
        assert_eq!(idx.search(db.row(0), 100, None).unwrap().len(), 30);
    }

    #[test]
    fn reconstruction_is_close_with_fine_codes() {
        let db = random_db(200, 8, 4);
        let cfg = IvfPqConfig {
            n_list: Some(4),
            m: 8,
            ..Default::default()
        };
        let idx = IvfPqIndex::build(&db, &cfg).unwrap();
        for r in 0..200 {
            assert!(squared_l2(&idx.reconstruct(r), db.row(r)) < 1e-8);
        }
    }
}
