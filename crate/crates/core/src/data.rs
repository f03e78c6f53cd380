//! Domain-partitioned datasets, the synthetic benchmarks, and seeded
//! minibatch streams.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: u8,
}

impl Example {
    pub fn new(features: Vec<f64>, label: u8) -> Self {
        Self { features, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub id: u32,
    pub examples: Vec<Example>,
}

/// Labeled examples grouped by domain, all sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    feature_dim: usize,
    split: Split,
    domains: Vec<Domain>,
}

impl DomainDataset {
    /// Validates unique domain ids, feature lengths and binary labels.
    pub fn new(feature_dim: usize, split: Split, domains: Vec<Domain>) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be at least 1"));
        }
        let mut seen = BTreeSet::new();
        for d in &domains {
            if !seen.insert(d.id) {
                return Err(Error::invalid(format!("duplicate domain id {}", d.id)));
            }
            for ex in &d.examples {
                if ex.features.len() != feature_dim {
                    return Err(Error::DimensionMismatch { expected: feature_dim, got: ex.features.len() });
                }
                if ex.label > 1 {
                    return Err(Error::invalid(format!("label {} is not in {{0, 1}}", ex.label)));
                }
            }
        }
        Ok(Self { feature_dim, split, domains })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn domain_ids(&self) -> Vec<u32> {
        self.domains.iter().map(|d| d.id).collect()
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    /// Total number of examples over all domains.
    pub fn len(&self) -> usize {
        self.domains.iter().map(|d| d.examples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One domain as a batch.
    pub fn domain_batch(&self, index: usize) -> Batch {
        let d = &self.domains[index];
        Batch::from_examples(self.feature_dim, Some(d.id), d.examples.iter())
    }

    /// All examples of all domains in one batch.
    pub fn pooled(&self) -> Batch {
        Batch::from_examples(self.feature_dim, None, self.domains.iter().flat_map(|d| d.examples.iter()))
    }
}

/// A minibatch in row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    domain: Option<u32>,
}

impl Batch {
    pub fn from_examples<'a>(dim: usize, domain: Option<u32>, examples: impl IntoIterator<Item = &'a Example>) -> Self {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for ex in examples {
            debug_assert_eq!(ex.features.len(), dim);
            x.extend_from_slice(&ex.features);
            y.push(f64::from(ex.label));
        }
        Self { dim, x, y, domain }
    }

    /// Builds a batch from raw rows; `x.len()` must equal `dim * y.len()`.
    pub fn from_rows(dim: usize, x: Vec<f64>, y: Vec<f64>, domain: Option<u32>) -> Result<Self> {
        if dim == 0 || x.len() != dim * y.len() {
            return Err(Error::DimensionMismatch { expected: dim * y.len(), got: x.len() });
        }
        Ok(Self { dim, x, y, domain })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Domain id when every row comes from a single domain.
    pub fn domain(&self) -> Option<u32> {
        self.domain
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    /// Concatenates batches; the result carries a domain id only if all parts agree.
    pub fn concat(parts: &[Batch]) -> Batch {
        let dim = parts[0].dim;
        let first = parts[0].domain;
        let domain = if parts.iter().all(|b| b.domain == first) { first } else { None };
        let mut x = Vec::new();
        let mut y = Vec::new();
        for b in parts {
            x.extend_from_slice(&b.x);
            y.extend_from_slice(&b.y);
        }
        Batch { dim, x, y, domain }
    }

    /// Rows reordered by `order` (a permutation of `0..len`).
    pub fn permuted(&self, order: &[usize]) -> Batch {
        let mut x = Vec::with_capacity(self.x.len());
        let mut y = Vec::with_capacity(self.y.len());
        for &i in order {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Batch { dim: self.dim, x, y, domain: self.domain }
    }

    /// Splits into `parts` contiguous batches whose sizes differ by at most one.
    pub fn split(&self, parts: usize) -> Vec<Batch> {
        let n = self.len();
        let mut out = Vec::with_capacity(parts);
        let mut start = 0;
        for k in 0..parts {
            let size = n / parts + usize::from(k < n % parts);
            let end = start + size;
            out.push(Batch {
                dim: self.dim,
                x: self.x[start * self.dim..end * self.dim].to_vec(),
                y: self.y[start..end].to_vec(),
                domain: self.domain,
            });
            start = end;
        }
        out
    }

    /// Order-independent fingerprint of the rows (wrapping sum of per-row FNV-1a hashes).
    pub fn checksum(&self) -> u64 {
        (0..self.len()).fold(0u64, |acc, i| {
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for v in self.row(i).iter().chain(core::iter::once(&self.y[i])) {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= u64::from(byte);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
            acc.wrapping_add(h)
        })
    }
}

/// One domain of the four-feature linear example.
///
/// Half the examples are `[0,0,0,0]` with label 0, 40% have `f1 = 1` and
/// `f_{domain_id+1} = 1` with label 1, and 10% are `[1,0,0,0]` of which 30%
/// are labeled 1. `n` must be a positive multiple of 100 so the proportions
/// are exact.
pub fn make_linear_dataset(domain_id: u32, n: usize) -> Result<DomainDataset> {
    if !(1..=3).contains(&domain_id) {
        return Err(Error::invalid(format!("linear domain id must be 1, 2 or 3 (got {domain_id})")));
    }
    if n == 0 || !n.is_multiple_of(100) {
        return Err(Error::invalid(format!("n must be a positive multiple of 100 (got {n})")));
    }
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n / 2 {
        examples.push(Example::new(vec![0.0; 4], 0));
    }
    let mut spurious = vec![1.0, 0.0, 0.0, 0.0];
    spurious[domain_id as usize] = 1.0;
    for _ in 0..n * 2 / 5 {
        examples.push(Example::new(spurious.clone(), 1));
    }
    let block = n / 10;
    let positives = n * 3 / 100;
    for i in 0..block {
        examples.push(Example::new(vec![1.0, 0.0, 0.0, 0.0], u8::from(i < positives)));
    }
    let split = if domain_id == 3 { Split::Test } else { Split::Train };
    DomainDataset::new(4, split, vec![Domain { id: domain_id, examples }])
}

/// Train split with domains 1 and 2, test split with domain 3.
pub fn make_linear_benchmark(n: usize) -> Result<(DomainDataset, DomainDataset)> {
    let mut train = Vec::new();
    for id in [1, 2] {
        let mut d = make_linear_dataset(id, n)?;
        train.push(d.domains.remove(0));
    }
    let test = make_linear_dataset(3, n)?;
    Ok((DomainDataset::new(4, Split::Train, train)?, test))
}

/// Parameters of the vector shape/color benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct VecSpritesConfig {
    pub n_domains: usize,
    pub per_domain: usize,
    pub noise_dim: usize,
    /// Value written into the hot color coordinate (1.0 is a plain one-hot).
    pub color_gain: f64,
    /// Test examples; `None` means `n_domains * per_domain`.
    pub test_size: Option<usize>,
    pub seed: u64,
}

impl VecSpritesConfig {
    pub fn new(n_domains: usize, per_domain: usize, seed: u64) -> Self {
        Self { n_domains, per_domain, noise_dim: 4, color_gain: 1.0, test_size: None, seed }
    }

    pub fn feature_dim(&self) -> usize {
        2 + 2 * self.n_domains + self.noise_dim
    }
}

/// Vector analog of a shape/color domain-generalization benchmark.
///
/// Features are `[shape (2) | color (2N) | noise (noise_dim)]`. The shape
/// block is a one-hot of the label. In train domain `s` (1-based) label 0
/// always carries color `2(s-1)` and label 1 color `2(s-1)+1` (0-based
/// indices). The single test domain (id `N+1`) draws each color uniformly
/// from all `2N`, independent of the label. Labels alternate so every domain
/// is exactly balanced; noise is uniform on `[-1, 1)`.
pub fn make_vecsprites(cfg: &VecSpritesConfig) -> Result<(DomainDataset, DomainDataset)> {
    let n = cfg.n_domains;
    if n < 2 {
        return Err(Error::invalid(format!("n_domains must be at least 2 (got {n})")));
    }
    if cfg.per_domain < 2 || !cfg.per_domain.is_multiple_of(2) {
        return Err(Error::invalid(format!("per_domain must be even and at least 2 (got {})", cfg.per_domain)));
    }
    let test_size = cfg.test_size.unwrap_or(n * cfg.per_domain);
    if test_size < 2 || !test_size.is_multiple_of(2) {
        return Err(Error::invalid(format!("test_size must be even and at least 2 (got {test_size})")));
    }
    if !cfg.color_gain.is_finite() || cfg.color_gain <= 0.0 {
        return Err(Error::invalid("color_gain must be positive and finite"));
    }
    let dim = cfg.feature_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let example = |label: u8, color: usize, rng: &mut ChaCha8Rng| {
        let mut f = vec![0.0; dim];
        f[usize::from(label)] = 1.0;
        f[2 + color] = cfg.color_gain;
        for v in &mut f[2 + 2 * n..] {
            *v = rng.random_range(-1.0..1.0);
        }
        Example::new(f, label)
    };

    let mut train = Vec::with_capacity(n);
    for s in 0..n {
        let examples = (0..cfg.per_domain)
            .map(|i| {
                let label = (i % 2) as u8;
                example(label, 2 * s + usize::from(label), &mut rng)
            })
            .collect();
        train.push(Domain { id: s as u32 + 1, examples });
    }
    let test_examples = (0..test_size)
        .map(|i| {
            let label = (i % 2) as u8;
            let color = rng.random_range(0..2 * n);
            example(label, color, &mut rng)
        })
        .collect();
    let test = vec![Domain { id: n as u32 + 1, examples: test_examples }];
    Ok((DomainDataset::new(dim, Split::Train, train)?, DomainDataset::new(dim, Split::Test, test)?))
}

/// How one inner loop's worth of minibatches is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderPolicy {
    /// One batch per domain, domains in a fresh random order.
    PermuteDomains,
    /// One batch from each of `n` distinct domains sampled without replacement.
    SubsampleN(usize),
    /// `groups` batches drawn from the pooled examples, domains ignored.
    RandomGroup { groups: usize },
}

/// Epoch-style sampler over `0..len`: without replacement, reshuffled on exhaustion.
#[derive(Debug, Clone)]
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    fn new(len: usize, rng: ChaCha8Rng) -> Self {
        Self { order: (0..len).collect(), pos: len, rng }
    }

    fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        i
    }
}

/// Deterministic minibatch stream over a dataset.
///
/// Every domain owns an independent ChaCha stream, so the batches a domain
/// yields do not depend on how often other domains or the domain-order
/// generator were consulted.
#[derive(Debug, Clone)]
pub struct BatchStream<'a> {
    source: &'a DomainDataset,
    batch_size: usize,
    policy: OrderPolicy,
    order_rng: ChaCha8Rng,
    per_domain: Vec<EpochSampler>,
    pooled_index: Vec<(usize, usize)>,
    pooled: EpochSampler,
}

impl<'a> BatchStream<'a> {
    pub fn new(source: &'a DomainDataset, batch_size: usize, seed: u64, policy: OrderPolicy) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        let s = source.num_domains();
        if s == 0 {
            return Err(Error::Empty("dataset has no domains"));
        }
        if let Some(d) = source.domains().iter().find(|d| d.examples.is_empty()) {
            return Err(Error::invalid(format!("domain {} has no examples", d.id)));
        }
        match policy {
            OrderPolicy::SubsampleN(k) if k == 0 || k > s => {
                return Err(Error::invalid(format!("cannot subsample {k} of {s} domains")));
            }
            OrderPolicy::RandomGroup { groups: 0 } => {
                return Err(Error::invalid("random grouping needs at least one group"));
            }
            _ => {}
        }
        let stream_rng = |stream: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(stream);
            r
        };
        let per_domain = source
            .domains()
            .iter()
            .enumerate()
            .map(|(k, d)| EpochSampler::new(d.examples.len(), stream_rng(k as u64 + 1)))
            .collect();
        let pooled_index: Vec<(usize, usize)> =
            source.domains().iter().enumerate().flat_map(|(k, d)| (0..d.examples.len()).map(move |i| (k, i))).collect();
        let pooled = EpochSampler::new(pooled_index.len(), stream_rng(u64::MAX));
        Ok(Self { source, batch_size, policy, order_rng: stream_rng(0), per_domain, pooled_index, pooled })
    }

    pub fn source(&self) -> &'a DomainDataset {
        self.source
    }

    pub fn policy(&self) -> OrderPolicy {
        self.policy
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Number of batches `next_batches` returns.
    pub fn batches_per_loop(&self) -> usize {
        match self.policy {
            OrderPolicy::PermuteDomains => self.source.num_domains(),
            OrderPolicy::SubsampleN(k) => k,
            OrderPolicy::RandomGroup { groups } => groups,
        }
    }

    fn domain_batch(&mut self, k: usize) -> Batch {
        let d = &self.source.domains()[k];
        let sampler = &mut self.per_domain[k];
        let rows: Vec<&Example> = (0..self.batch_size).map(|_| &d.examples[sampler.next_index()]).collect();
        Batch::from_examples(self.source.feature_dim(), Some(d.id), rows)
    }

    fn pooled_batch(&mut self) -> Batch {
        let domains = self.source.domains();
        let rows: Vec<&Example> = (0..self.batch_size)
            .map(|_| {
                let (k, i) = self.pooled_index[self.pooled.next_index()];
                &domains[k].examples[i]
            })
            .collect();
        Batch::from_examples(self.source.feature_dim(), None, rows)
    }

    /// One inner loop's worth of minibatches.
    pub fn next_batches(&mut self) -> Vec<Batch> {
        let s = self.source.num_domains();
        match self.policy {
            OrderPolicy::PermuteDomains => {
                let mut order: Vec<usize> = (0..s).collect();
                order.shuffle(&mut self.order_rng);
                order.into_iter().map(|k| self.domain_batch(k)).collect()
            }
            OrderPolicy::SubsampleN(n) => {
                let mut order: Vec<usize> = (0..s).collect();
                order.partial_shuffle(&mut self.order_rng, n);
                order.truncate(n);
                order.into_iter().map(|k| self.domain_batch(k)).collect()
            }
            OrderPolicy::RandomGroup { groups } => (0..groups).map(|_| self.pooled_batch()).collect(),
        }
    }

    /// `steps` batches from one uniformly chosen domain (a Reptile task).
    pub fn next_task(&mut self, steps: usize) -> Vec<Batch> {
        let k = self.order_rng.random_range(0..self.source.num_domains());
        (0..steps).map(|_| self.domain_batch(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accuracy_of(d: &DomainDataset, predict: impl Fn(&[f64]) -> u8) -> f64 {
        let (mut ok, mut n) = (0usize, 0usize);
        for dom in d.domains() {
            for ex in &dom.examples {
                ok += usize::from(predict(&ex.features) == ex.label);
                n += 1;
            }
        }
        ok as f64 / n as f64
    }

    #[test]
    fn linear_composition_n100() {
        let d = make_linear_dataset(1, 100).unwrap();
        let ex = &d.domains()[0].examples;
        assert_eq!(ex.len(), 100);
        let zeros = ex.iter().filter(|e| e.features == [0.0; 4]).count();
        let x2 = ex.iter().filter(|e| e.features == [1.0, 1.0, 0.0, 0.0]).count();
        let x3: Vec<_> = ex.iter().filter(|e| e.features == [1.0, 0.0, 0.0, 0.0]).collect();
        assert_eq!((zeros, x2, x3.len()), (50, 40, 10));
        assert_eq!(x3.iter().filter(|e| e.label == 1).count(), 3);
        assert!(ex.iter().filter(|e| e.features == [0.0; 4]).all(|e| e.label == 0));
    }

    #[test]
    fn linear_feature_oracles_are_exact() {
        for n in [100, 300, 1000] {
            for id in 1..=3 {
                let d = make_linear_dataset(id, n).unwrap();
                assert_eq!(accuracy_of(&d, |f| u8::from(f[0] == 1.0)), 0.93);
                let f2 = accuracy_of(&d, |f| u8::from(f[1] == 1.0));
                assert_eq!(f2, if id == 1 { 0.97 } else { 0.57 });
            }
        }
    }

    #[test]
    fn linear_rejects_bad_arguments() {
        assert!(make_linear_dataset(0, 100).is_err());
        assert!(make_linear_dataset(4, 100).is_err());
        assert!(make_linear_dataset(1, 150).is_err());
        assert!(make_linear_dataset(1, 0).is_err());
    }

    #[test]
    fn linear_benchmark_splits_are_disjoint() {
        let (tr, te) = make_linear_benchmark(100).unwrap();
        assert_eq!(tr.domain_ids(), [1, 2]);
        assert_eq!(te.domain_ids(), [3]);
        assert_eq!((tr.split(), te.split()), (Split::Train, Split::Test));
    }

    #[test]
    fn vecsprites_small_layout() {
        let mut cfg = VecSpritesConfig::new(2, 4, 11);
        cfg.noise_dim = 3;
        let (tr, te) = make_vecsprites(&cfg).unwrap();
        assert_eq!(tr.num_domains(), 2);
        assert_eq!(tr.len(), 8);
        assert_eq!(tr.feature_dim(), 2 + 4 + 3);
        for ex in &tr.domains()[0].examples {
            if ex.label == 0 {
                assert_eq!(ex.features[2], 1.0);
            }
        }
        let train_ids: BTreeSet<u32> = tr.domain_ids().into_iter().collect();
        assert!(te.domain_ids().iter().all(|id| !train_ids.contains(id)));
    }

    #[test]
    fn vecsprites_shape_reader_is_perfect_and_balanced() {
        let (tr, te) = make_vecsprites(&VecSpritesConfig::new(5, 10, 3)).unwrap();
        let shape = |f: &[f64]| u8::from(f[1] > f[0]);
        assert_eq!(accuracy_of(&tr, shape), 1.0);
        assert_eq!(accuracy_of(&te, shape), 1.0);
        for d in tr.domains().iter().chain(te.domains()) {
            let ones = d.examples.iter().filter(|e| e.label == 1).count();
            assert_eq!(2 * ones, d.examples.len());
        }
    }

    #[test]
    fn vecsprites_color_lookup_generalizes_at_chance() {
        // The color->label table learned from train is exact on train; on test,
        // colors are independent of labels so accuracy is Binomial(n, 1/2)/n.
        let n = 10;
        let mut cfg = VecSpritesConfig::new(n, 20, 5);
        cfg.test_size = Some(4000);
        let (tr, te) = make_vecsprites(&cfg).unwrap();
        let lookup = |f: &[f64]| {
            let c = (0..2 * n).find(|&c| f[2 + c] != 0.0).unwrap();
            (c % 2) as u8
        };
        assert_eq!(accuracy_of(&tr, lookup), 1.0);
        let acc = accuracy_of(&te, lookup);
        let se = (0.25f64 / 4000.0).sqrt();
        assert!((acc - 0.5).abs() < 3.0 * se, "test accuracy {acc}");
    }

    #[test]
    fn vecsprites_rejects_bad_arguments() {
        assert!(make_vecsprites(&VecSpritesConfig::new(1, 4, 0)).is_err());
        assert!(make_vecsprites(&VecSpritesConfig::new(3, 5, 0)).is_err());
        assert!(make_vecsprites(&VecSpritesConfig::new(3, 0, 0)).is_err());
    }

    #[test]
    fn vecsprites_is_seed_deterministic() {
        let a = make_vecsprites(&VecSpritesConfig::new(3, 6, 9)).unwrap();
        let b = make_vecsprites(&VecSpritesConfig::new(3, 6, 9)).unwrap();
        let c = make_vecsprites(&VecSpritesConfig::new(3, 6, 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    fn three_domains() -> DomainDataset {
        let (tr, _) = make_vecsprites(&VecSpritesConfig::new(3, 6, 1)).unwrap();
        tr
    }

    #[test]
    fn permute_visits_every_domain_once() {
        let d = three_domains();
        let mut s = BatchStream::new(&d, 2, 42, OrderPolicy::PermuteDomains).unwrap();
        for _ in 0..20 {
            let bs = s.next_batches();
            let mut ids: Vec<u32> = bs.iter().map(|b| b.domain().unwrap()).collect();
            ids.sort_unstable();
            assert_eq!(ids, [1, 2, 3]);
        }
    }

    #[test]
    fn streams_are_reproducible() {
        let d = three_domains();
        for policy in [OrderPolicy::PermuteDomains, OrderPolicy::SubsampleN(2), OrderPolicy::RandomGroup { groups: 3 }]
        {
            let mut a = BatchStream::new(&d, 4, 7, policy).unwrap();
            let mut b = BatchStream::new(&d, 4, 7, policy).unwrap();
            for _ in 0..10 {
                assert_eq!(a.next_batches(), b.next_batches());
            }
        }
    }

    #[test]
    fn subsample_draws_distinct_domains() {
        let domains = (1..=23)
            .map(|id| Domain { id, examples: vec![Example::new(vec![f64::from(id)], (id % 2) as u8); 4] })
            .collect();
        let d = DomainDataset::new(1, Split::Train, domains).unwrap();
        let mut s = BatchStream::new(&d, 2, 3, OrderPolicy::SubsampleN(5)).unwrap();
        for _ in 0..10 {
            let ids: BTreeSet<u32> = s.next_batches().iter().map(|b| b.domain().unwrap()).collect();
            assert_eq!(ids.len(), 5);
        }
        assert!(BatchStream::new(&d, 2, 3, OrderPolicy::SubsampleN(24)).is_err());
    }

    #[test]
    fn within_domain_sampling_covers_epoch_before_repeating() {
        let d = three_domains();
        let mut s = BatchStream::new(&d, 3, 5, OrderPolicy::PermuteDomains).unwrap();
        // 6 examples per domain, batch of 3: two loops exhaust one epoch per domain.
        let mut per_domain: Vec<Vec<u64>> = vec![Vec::new(); 3];
        for _ in 0..2 {
            for b in s.next_batches() {
                let k = b.domain().unwrap() as usize - 1;
                for i in 0..b.len() {
                    let one = Batch::from_rows(b.dim(), b.row(i).to_vec(), vec![b.label(i)], None).unwrap();
                    per_domain[k].push(one.checksum());
                }
            }
        }
        for (k, seen) in per_domain.iter().enumerate() {
            let mut all: Vec<u64> = d.domains()[k]
                .examples
                .iter()
                .map(|e| Batch::from_examples(d.feature_dim(), None, [e]).checksum())
                .collect();
            let mut seen = seen.clone();
            all.sort_unstable();
            seen.sort_unstable();
            assert_eq!(seen, all);
        }
    }

    #[test]
    fn random_group_mixes_domains() {
        let d = three_domains();
        let mut s = BatchStream::new(&d, 18, 1, OrderPolicy::RandomGroup { groups: 3 }).unwrap();
        let bs = s.next_batches();
        assert_eq!(bs.len(), 3);
        assert!(bs.iter().all(|b| b.domain().is_none() && b.len() == 18));
    }

    #[test]
    fn empty_domain_is_rejected() {
        let d = DomainDataset::new(
            1,
            Split::Train,
            vec![Domain { id: 1, examples: vec![Example::new(vec![0.0], 0)] }, Domain { id: 2, examples: vec![] }],
        )
        .unwrap();
        assert!(BatchStream::new(&d, 1, 0, OrderPolicy::PermuteDomains).is_err());
    }

    #[test]
    fn dataset_validation() {
        let bad_dim =
            DomainDataset::new(2, Split::Train, vec![Domain { id: 1, examples: vec![Example::new(vec![0.0], 0)] }]);
        assert!(matches!(bad_dim, Err(Error::DimensionMismatch { .. })));
        let dup = DomainDataset::new(
            1,
            Split::Train,
            vec![Domain { id: 1, examples: vec![] }, Domain { id: 1, examples: vec![] }],
        );
        assert!(dup.is_err());
        let label =
            DomainDataset::new(1, Split::Train, vec![Domain { id: 1, examples: vec![Example::new(vec![0.0], 2)] }]);
        assert!(label.is_err());
    }

    #[test]
    fn batch_split_and_checksum() {
        let d = three_domains();
        let pooled = d.pooled();
        let parts = pooled.split(4);
        assert_eq!(parts.iter().map(Batch::len).sum::<usize>(), pooled.len());
        assert_eq!(Batch::concat(&parts), pooled);
        let order: Vec<usize> = (0..pooled.len()).rev().collect();
        assert_eq!(pooled.permuted(&order).checksum(), pooled.checksum());
    }
}
