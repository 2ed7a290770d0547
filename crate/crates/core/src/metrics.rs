//! Inception Score, Fréchet Audio Distance and Density & Coverage, computed
//! in f64 on fixed embedding spaces.

use loopgan_tensor::{ParamSet, Tape, Var};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurenets::{chunk_batch, FrozenAdapter};
use crate::melpipe::MelClip;
use crate::nn::{Conv2d, Linear};
use crate::real::{rng_for, Real};

pub const DC_K: usize = 5;
pub const IS_SPLITS: usize = 10;
pub const DC_DIM: usize = 64;
const NEG_EIG_TOL: f64 = -1e-8;
const COV_RIDGE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Real,
    Generated,
}

/// `N × d` embeddings tagged with the embedder that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    rows: Vec<Vec<f64>>,
    pub source: Source,
    pub embedder_id: String,
    pub embedder_digest: String,
}

impl EmbeddingSet {
    pub fn new(rows: Vec<Vec<f64>>, source: Source, embedder_id: impl Into<String>, embedder_digest: impl Into<String>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("embedding rows differ in length".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite embedding".into()));
        }
        Ok(Self { rows, source, embedder_id: embedder_id.into(), embedder_digest: embedder_digest.into() })
    }

    /// Anonymous set; handy for tests and raw vectors.
    pub fn from_rows(rows: Vec<Vec<f64>>, source: Source) -> Result<Self> {
        Self::new(rows, source, "raw", "raw")
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self { rows: idx.iter().map(|&i| self.rows[i].clone()).collect(), ..self.clone() }
    }

    fn same_space(&self, other: &Self) -> Result<()> {
        if self.embedder_digest != other.embedder_digest {
            return Err(Error::Config(format!(
                "embeddings come from different embedders ({} vs {})",
                self.embedder_digest, other.embedder_digest
            )));
        }
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!("embedding dims differ: {} vs {}", self.dim(), other.dim())));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    /// Sample mean and unbiased covariance; a ridge of `1e-6 I` is added when
    /// `N <= d`.
    pub fn fit(set: &EmbeddingSet) -> Result<Self> {
        let (n, d) = (set.len(), set.dim());
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 embeddings, got {n}")));
        }
        let x = DMatrix::from_fn(n, d, |i, j| set.rows[i][j]);
        let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        if n <= d {
            cov += DMatrix::identity(d, d) * COV_RIDGE;
        }
        Ok(Self { mean, cov })
    }
}

fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new((m + m.transpose()) * 0.5)
}

/// `Tr sqrt(A^{1/2} B A^{1/2})`, which equals `Tr (A B)^{1/2}` for PSD `A`, `B`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let ea = sym_eigen(a);
    if let Some(&worst) = ea.eigenvalues.iter().find(|&&l| l < NEG_EIG_TOL) {
        return Err(Error::Numerical(format!("covariance has eigenvalue {worst:e}")));
    }
    let roots = ea.eigenvalues.map(|l| l.max(0.0).sqrt());
    let sqrt_a = &ea.eigenvectors * DMatrix::from_diagonal(&roots) * ea.eigenvectors.transpose();
    let m = &sqrt_a * b * &sqrt_a;
    let em = sym_eigen(&m);
    let mut tr = 0.0;
    for &l in em.eigenvalues.iter() {
        if l < NEG_EIG_TOL {
            return Err(Error::Numerical(format!("covariance product has eigenvalue {l:e}")));
        }
        tr += l.max(0.0).sqrt();
    }
    Ok(tr)
}

pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::Shape("Gaussian dimensions differ".into()));
    }
    let dm = (&a.mean - &b.mean).norm_squared();
    let tr = a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt_product(&a.cov, &b.cov)?;
    Ok((dm + tr).max(0.0))
}

pub fn fad(real: &EmbeddingSet, fake: &EmbeddingSet) -> Result<f64> {
    real.same_space(fake)?;
    frechet_distance(&GaussianStats::fit(real)?, &GaussianStats::fit(fake)?)
}

/// FAD between two disjoint random halves of `real`.
pub fn split_half_fad(real: &EmbeddingSet, seed: u64) -> Result<f64> {
    let mut idx: Vec<usize> = (0..real.len()).collect();
    idx.shuffle(&mut rng_for(seed, &[0x5917]));
    let h = real.len() / 2;
    fad(&real.subset(&idx[..h]), &real.subset(&idx[h..2 * h]))
}

/// Mean over contiguous splits of `exp(mean_i KL(p_i || p̄))`.
pub fn inception_score(probs: &[Vec<f64>], n_splits: usize) -> Result<f64> {
    if n_splits == 0 || probs.len() < n_splits {
        return Err(Error::Config(format!("{} clips cannot fill {n_splits} splits", probs.len())));
    }
    let c = probs[0].len();
    if c < 2 || probs.iter().any(|p| p.len() != c) {
        return Err(Error::Config("class posteriors need a common width of at least 2".into()));
    }
    if probs.iter().any(|p| p.iter().any(|&v| !(0.0..=1.0 + 1e-9).contains(&v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6) {
        return Err(Error::Input("class posteriors must be probability vectors".into()));
    }
    let n = probs.len();
    let mut total = 0.0;
    for s in 0..n_splits {
        let part = &probs[s * n / n_splits..(s + 1) * n / n_splits];
        let mut marginal = vec![0.0; c];
        for p in part {
            for (m, &v) in marginal.iter_mut().zip(p) {
                *m += v / part.len() as f64;
            }
        }
        let kl: f64 = part
            .iter()
            .map(|p| p.iter().zip(&marginal).filter(|(&v, _)| v > 0.0).map(|(&v, &m)| v * (v / m).ln()).sum::<f64>())
            .sum::<f64>()
            / part.len() as f64;
        total += kl.exp();
    }
    Ok(total / n_splits as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityCoverage {
    pub density: f64,
    pub coverage: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Real embeddings with their k-NN radii, computed once and reused across
/// fake sets.
#[derive(Clone, Debug)]
pub struct RealNeighborhoods {
    real: EmbeddingSet,
    radii: Vec<f64>,
    k: usize,
}

impl RealNeighborhoods {
    /// `r_k(x_i)` is the distance to the k-th nearest other real point.
    pub fn new(real: EmbeddingSet, k: usize) -> Result<Self> {
        if k == 0 || real.len() <= k {
            return Err(Error::Config(format!("density/coverage with k = {k} needs more than {k} real points, got {}", real.len())));
        }
        let radii = (0..real.len())
            .map(|i| {
                let mut d: Vec<f64> = (0..real.len()).filter(|&j| j != i).map(|j| dist(&real.rows[i], &real.rows[j])).collect();
                d.select_nth_unstable_by(k - 1, f64::total_cmp);
                d[k - 1]
            })
            .collect();
        Ok(Self { real, radii, k })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn real(&self) -> &EmbeddingSet {
        &self.real
    }

    pub fn score(&self, fake: &EmbeddingSet) -> Result<DensityCoverage> {
        self.real.same_space(fake)?;
        if fake.is_empty() {
            return Err(Error::Config("density/coverage needs at least one fake point".into()));
        }
        let mut inside = 0usize;
        let mut covered = vec![false; self.real.len()];
        for f in &fake.rows {
            for (i, r) in self.real.rows.iter().enumerate() {
                if dist(f, r) <= self.radii[i] {
                    inside += 1;
                    covered[i] = true;
                }
            }
        }
        Ok(DensityCoverage {
            density: inside as f64 / (self.k * fake.len()) as f64,
            coverage: covered.iter().filter(|&&c| c).count() as f64 / self.real.len() as f64,
        })
    }
}

pub fn density_coverage(real: &EmbeddingSet, fake: &EmbeddingSet, k: usize) -> Result<DensityCoverage> {
    RealNeighborhoods::new(real.clone(), k)?.score(fake)
}

/// VGG16 layer plan; `0` marks a 2×2 max-pool.
const VGG16: [usize; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];
pub const VGG_WIDTH_DIVISOR: usize = 8;
const VGG_FC1: usize = 4096;

/// An untrained VGG16-shaped network mapping each chunk to a 64-dim vector.
/// Widths are divided by [`VGG_WIDTH_DIVISOR`]; weights never change.
#[derive(Clone, Debug)]
pub struct RandomEmbedder<T> {
    seed: u64,
    params: ParamSet<T>,
    convs: Vec<Option<Conv2d>>,
    fc1: Linear,
    fc2: Linear,
    digest: String,
}

impl<T: Real> RandomEmbedder<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng_for(seed, &[0x7667]);
        let mut params = ParamSet::new();
        let mut convs = Vec::new();
        let (mut cin, mut h, mut w) = (1, crate::melpipe::N_MELS, crate::melpipe::CHUNK_FRAMES);
        for (i, &c) in VGG16.iter().enumerate() {
            if c == 0 {
                convs.push(None);
                (h, w) = (h.div_ceil(2), w.div_ceil(2));
            } else {
                let c = c / VGG_WIDTH_DIVISOR;
                convs.push(Some(Conv2d::new(&mut params, &format!("conv{i}"), cin, c, 3, 1, true, None, &mut rng)));
                cin = c;
            }
        }
        let fc1 = Linear::new(&mut params, "fc1", cin * h * w, VGG_FC1 / VGG_WIDTH_DIVISOR, None, &mut rng);
        let fc2 = Linear::new(&mut params, "fc2", VGG_FC1 / VGG_WIDTH_DIVISOR, DC_DIM, None, &mut rng);
        let digest = params.digest();
        Self { seed, params, convs, fc1, fc2, digest }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn id(&self) -> String {
        format!("random-vgg16-div{VGG_WIDTH_DIVISOR}-seed{}", self.seed)
    }

    fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Var<'t, T> {
        let p = self.params.bind(tape, false);
        let mut h = x;
        for c in &self.convs {
            h = match c {
                Some(c) => c.forward(&p, h).relu(),
                None => h.max_pool2x2(),
            };
        }
        let n = h.dim(0);
        let flat = h.reshape(&[n, h.shape()[1..].iter().product()]);
        self.fc2.forward(&p, self.fc1.forward(&p, flat).relu())
    }

    /// Mean of the two chunk embeddings of each clip.
    pub fn embed(&self, clips: &[&MelClip<T>]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(clips.len());
        for group in clips.chunks(32) {
            let n = group.len();
            let tape = Tape::new();
            let e = self.forward(&tape, tape.constant(chunk_batch(group))).value();
            for i in 0..n {
                out.push((0..DC_DIM).map(|j| 0.5 * (e.data()[i * DC_DIM + j].as_f64() + e.data()[(n + i) * DC_DIM + j].as_f64())).collect());
            }
        }
        out
    }
}

pub fn embed_for_dc<T: Real>(embedder: &RandomEmbedder<T>, clips: &[&MelClip<T>], source: Source) -> Result<EmbeddingSet> {
    EmbeddingSet::new(embedder.embed(clips), source, embedder.id(), embedder.digest())
}

/// Per-clip embeddings of a frozen feature network (mean over both chunks).
pub fn embed_for_fad<T: Real>(net: &FrozenAdapter<T>, clips: &[&MelClip<T>], source: Source) -> Result<EmbeddingSet> {
    let (emb, _) = net.clip_outputs(clips, 32);
    EmbeddingSet::new(emb, source, format!("{:?}-net", net.kind()).to_lowercase(), net.digest())
}

/// Class posteriors of a frozen classifier, averaged over both chunks.
pub fn class_posteriors<T: Real>(classifier: &FrozenAdapter<T>, clips: &[&MelClip<T>]) -> Vec<Vec<f64>> {
    classifier.clip_outputs(clips, 32).1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n_real: Option<usize>,
    pub n_fake: usize,
    pub embedder_digest: Option<String>,
    pub k: Option<usize>,
    pub splits: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, shift: f64, seed: u64) -> EmbeddingSet {
        let mut rng = rng_for(seed, &[]);
        let rows = (0..n)
            .map(|_| (0..d).map(|j| rng.sample::<f64, _>(StandardNormal) + if j == 0 { shift } else { 0.0 }).collect())
            .collect();
        EmbeddingSet::from_rows(rows, Source::Real).unwrap()
    }

    #[test]
    fn fad_of_a_set_with_itself_is_zero() {
        let a = gaussian(300, 8, 0.0, 1);
        assert!(fad(&a, &a).unwrap().abs() < 1e-8);
    }

    #[test]
    fn fad_closed_form_on_exact_stats() {
        let a = GaussianStats { mean: DVector::zeros(3), cov: DMatrix::identity(3, 3) };
        let b = GaussianStats { mean: DVector::zeros(3), cov: DMatrix::identity(3, 3) * 4.0 };
        assert!((frechet_distance(&a, &b).unwrap() - 3.0).abs() < 1e-10);
        // non-commuting covariances: compare with an independent 2x2 closed form
        let ca = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let cb = DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 3.0]);
        let prod: DMatrix<f64> = &ca * &cb;
        // for 2x2: Tr sqrt(M) = sqrt(Tr M + 2 sqrt(det M))
        let tr_sqrt: f64 = (prod.trace() + 2.0 * prod.determinant().sqrt()).sqrt();
        let want = ca.trace() + cb.trace() - 2.0 * tr_sqrt + 1.0;
        let ga = GaussianStats { mean: DVector::from_vec(vec![1.0, 0.0]), cov: ca };
        let gb = GaussianStats { mean: DVector::zeros(2), cov: cb };
        assert!((frechet_distance(&ga, &gb).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn fad_rejects_mismatch_and_tiny_sets() {
        let a = gaussian(10, 2, 0.0, 0);
        let mut b = a.clone();
        b.embedder_digest = "other".into();
        assert!(matches!(fad(&a, &b), Err(Error::Config(_))));
        assert!(matches!(fad(&a.subset(&[0]), &a), Err(Error::Config(_))));
        let bad = GaussianStats { mean: DVector::zeros(2), cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]) };
        assert!(matches!(frechet_distance(&bad, &bad), Err(Error::Numerical(_))));
    }

    #[test]
    fn underdetermined_sets_are_regularized() {
        let a = gaussian(4, 10, 0.0, 2);
        let b = gaussian(4, 10, 0.5, 3);
        let v = fad(&a, &b).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn inception_score_oracles() {
        let uniform = vec![vec![0.25; 4]; 40];
        assert!((inception_score(&uniform, 10).unwrap() - 1.0).abs() < 1e-9);
        let one_hot: Vec<Vec<f64>> = (0..50).map(|i| (0..10).map(|c| (i % 10 == c) as u8 as f64).collect()).collect();
        assert!((inception_score(&one_hot, 1).unwrap() - 10.0).abs() < 1e-6);
        assert!(matches!(inception_score(&uniform[..5], 10), Err(Error::Config(_))));
        assert!(matches!(inception_score(&[vec![0.7, 0.7]], 1), Err(Error::Input(_))));
    }

    fn brute_force(real: &[Vec<f64>], fake: &[Vec<f64>], k: usize) -> (f64, f64) {
        let mut radii = Vec::new();
        for (i, a) in real.iter().enumerate() {
            let mut d = Vec::new();
            for (j, b) in real.iter().enumerate() {
                if i != j {
                    d.push(dist(a, b));
                }
            }
            d.sort_by(|x, y| x.partial_cmp(y).unwrap());
            radii.push(d[k - 1]);
        }
        let mut count = 0;
        let mut hit = vec![0; real.len()];
        for f in fake {
            for i in 0..real.len() {
                if dist(f, &real[i]) <= radii[i] {
                    count += 1;
                    hit[i] = 1;
                }
            }
        }
        (count as f64 / (k * fake.len()) as f64, hit.iter().sum::<i32>() as f64 / real.len() as f64)
    }

    #[test]
    fn density_coverage_edge_cases() {
        let real = gaussian(50, 3, 0.0, 5);
        let same = density_coverage(&real, &real, 5).unwrap();
        assert_eq!(same.coverage, 1.0);
        assert!(same.density >= 1.0);
        let far = gaussian(20, 3, 1e6, 6);
        let none = density_coverage(&real, &far, 5).unwrap();
        assert_eq!((none.density, none.coverage), (0.0, 0.0));
        assert!(matches!(density_coverage(&real.subset(&[0, 1, 2, 3, 4]), &real, 5), Err(Error::Config(_))));
    }

    #[test]
    fn random_embedder_contract() {
        let corpus = crate::melpipe::make_synthetic_corpus::<f32>(0, 6, 3).unwrap();
        let clips: Vec<_> = corpus.clips.iter().collect();
        let a = RandomEmbedder::<f32>::new(1);
        let e1 = embed_for_dc(&a, &clips, Source::Real).unwrap();
        let e2 = embed_for_dc(&RandomEmbedder::<f32>::new(1), &clips, Source::Real).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.dim(), DC_DIM);
        assert_ne!(RandomEmbedder::<f32>::new(2).digest(), a.digest());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn density_coverage_matches_brute_force(seed in 0u64..1000, n in 6usize..60, m in 1usize..60, d in 1usize..6) {
            let mut rng = rng_for(seed, &[]);
            let real: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let fake: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.gen_range(-1.2..1.2)).collect()).collect();
            let got = density_coverage(
                &EmbeddingSet::from_rows(real.clone(), Source::Real).unwrap(),
                &EmbeddingSet::from_rows(fake.clone(), Source::Generated).unwrap(),
                5,
            ).unwrap();
            prop_assert_eq!((got.density, got.coverage), brute_force(&real, &fake, 5));
        }

        #[test]
        fn fad_is_symmetric_and_nonnegative(s1 in 0u64..500, s2 in 0u64..500, shift in -2.0f64..2.0) {
            let a = gaussian(40, 4, 0.0, s1);
            let b = gaussian(30, 4, shift, s2 + 1000);
            let ab = fad(&a, &b).unwrap();
            let ba = fad(&b, &a).unwrap();
            prop_assert!(ab >= -1e-8);
            prop_assert!((ab - ba).abs() <= 1e-8 * ab.abs().max(1.0));
        }

        #[test]
        fn single_split_is_is_permutation_invariant(seed in 0u64..500) {
            let mut rng = rng_for(seed, &[]);
            let probs: Vec<Vec<f64>> = (0..30).map(|_| {
                let raw: Vec<f64> = (0..5).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            }).collect();
            let mut shuffled = probs.clone();
            shuffled.shuffle(&mut rng);
            let a = inception_score(&probs, 1).unwrap();
            let b = inception_score(&shuffled, 1).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
