//! Embedding backends, cosine similarity, near-duplicate detection, top-k
//! retrieval for few-shot prompts, seeded k-means over query embeddings, and
//! representative selection.
//!
//! Every operation is deterministic given (inputs, seed, backend); the mock
//! backend is a pure function of the text. Corpora at this scale are scanned
//! exhaustively; no ANN index.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Buffer, Sample};
use crate::gateway::{self, HttpEndpoint};

#[derive(Debug, thiserror::Error)]
pub enum SemanticsError {
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("sample {0} has no embedding")]
    MissingEmbeddings(String),
    #[error("cannot form {k} clusters from {points} points")]
    TooFewPoints { points: usize, k: usize },
    #[error("cluster {0} is empty or out of range")]
    EmptyCluster(usize),
    #[error("no texts to embed")]
    EmptyInput,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cache line {line}: {reason}")]
    MalformedCache { line: usize, reason: String },
}

/// A fixed-dimension query embedding with nonzero norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
}

impl Embedding {
    pub fn new(vector: Vec<f64>) -> Self {
        Self { vector }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Embedding, SemanticsError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(SemanticsError::ZeroVector);
        }
        Ok(Embedding::new(self.vector.iter().map(|x| x / n).collect()))
    }
}

/// Standard cosine similarity in [-1, 1].
pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64, SemanticsError> {
    if u.dim() != v.dim() {
        return Err(SemanticsError::DimensionMismatch { expected: u.dim(), got: v.dim() });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(SemanticsError::ZeroVector);
    }
    let dot: f64 = u.vector.iter().zip(&v.vector).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nv))
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

/// Produces one embedding per input text, order-preserving.
pub trait EmbeddingBackend: Send + Sync {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, SemanticsError>;
}

/// Deterministic mock: a seeded hash of the text expanded to a pseudo-random
/// unit vector. An optional synonym table maps configured texts to a shared
/// canonical text, which makes planted near-duplicates exact.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
    synonyms: BTreeMap<String, String>,
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed, synonyms: BTreeMap::new() }
    }

    pub fn with_synonyms(mut self, synonyms: BTreeMap<String, String>) -> Self {
        self.synonyms = synonyms;
        self
    }

    fn embed_one(&self, text: &str) -> Embedding {
        let canonical = self.synonyms.get(text).map(String::as_str).unwrap_or(text);
        let mut state = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        for byte in canonical.as_bytes() {
            state = splitmix64(state ^ u64::from(*byte));
        }
        let mut vector = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            state = splitmix64(state);
            // Map to (-1, 1); strictly nonzero norm is restored below.
            vector.push((state as f64 / u64::MAX as f64) * 2.0 - 1.0);
        }
        let e = Embedding::new(vector);
        match e.normalized() {
            Ok(unit) => unit,
            Err(_) => {
                let mut v = vec![0.0; self.dim];
                v[0] = 1.0;
                Embedding::new(v)
            }
        }
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl EmbeddingBackend for MockEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, SemanticsError> {
        if texts.is_empty() {
            return Err(SemanticsError::EmptyInput);
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// OpenAI-compatible embeddings endpoint: POST {model, input} returning
/// {data: [{embedding: [...]}]}.
pub struct HttpEmbedder {
    endpoint: HttpEndpoint,
}

impl HttpEmbedder {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        Self { endpoint }
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl EmbeddingBackend for HttpEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, SemanticsError> {
        if texts.is_empty() {
            return Err(SemanticsError::EmptyInput);
        }
        let body = serde_json::json!({ "model": self.endpoint.model, "input": texts });
        let parsed: EmbeddingResponse = gateway::post_json(&self.endpoint, &body)
            .map_err(|e| SemanticsError::BackendUnavailable(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(SemanticsError::BackendUnavailable(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut out = Vec::with_capacity(parsed.data.len());
        let mut dim = None;
        for datum in parsed.data {
            let e = Embedding::new(datum.embedding);
            if let Some(d) = dim {
                if e.dim() != d {
                    return Err(SemanticsError::DimensionMismatch { expected: d, got: e.dim() });
                }
            } else {
                dim = Some(e.dim());
            }
            out.push(e);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Buffer embedding plumbing
// ---------------------------------------------------------------------------

/// Return a copy of the buffer with every sample embedded (existing
/// embeddings are kept; missing ones are fetched in one batch).
pub fn embed_buffer(
    buffer: &Buffer,
    backend: &dyn EmbeddingBackend,
) -> Result<Buffer, SemanticsError> {
    let missing: Vec<&Sample> = buffer.iter().filter(|s| s.embedding.is_none()).collect();
    let mut fetched = BTreeMap::new();
    if !missing.is_empty() {
        let texts: Vec<&str> = missing.iter().map(|s| s.query.as_str()).collect();
        let embeddings = backend.embed_batch(&texts)?;
        for (sample, e) in missing.iter().zip(embeddings) {
            fetched.insert(sample.id.clone(), e.vector);
        }
    }
    Ok(Buffer::from_samples(buffer.iter().map(|s| {
        let mut s = s.clone();
        if s.embedding.is_none() {
            s.embedding = fetched.get(&s.id).cloned();
        }
        s
    })))
}

fn sample_embedding(sample: &Sample) -> Result<Embedding, SemanticsError> {
    sample
        .embedding
        .as_ref()
        .map(|v| Embedding::new(v.clone()))
        .ok_or_else(|| SemanticsError::MissingEmbeddings(sample.id.clone()))
}

/// All buffered samples with cosine similarity >= threshold against the
/// query, descending by similarity (ties broken by id).
pub fn find_near_duplicates(
    query: &str,
    buffer: &Buffer,
    threshold: f64,
    backend: &dyn EmbeddingBackend,
) -> Result<Vec<(String, f64)>, SemanticsError> {
    let q = backend.embed_batch(&[query])?.remove(0);
    near_duplicates_of(&q, buffer, threshold)
}

/// Same scan against a pre-computed query embedding.
pub fn near_duplicates_of(
    query: &Embedding,
    buffer: &Buffer,
    threshold: f64,
) -> Result<Vec<(String, f64)>, SemanticsError> {
    let mut hits = Vec::new();
    for sample in buffer.iter() {
        let e = sample_embedding(sample)?;
        let sim = cosine(query, &e)?;
        if sim >= threshold {
            hits.push((sample.id.clone(), sim));
        }
    }
    hits.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(hits)
}

/// The k most similar samples to the query (fewer if the buffer is smaller),
/// descending by similarity, ties broken by sample id ascending.
pub fn top_k_similar<'a>(
    query: &str,
    buffer: &'a Buffer,
    k: usize,
    backend: &dyn EmbeddingBackend,
) -> Result<Vec<&'a Sample>, SemanticsError> {
    let q = backend.embed_batch(&[query])?.remove(0);
    let mut scored = Vec::with_capacity(buffer.len());
    for sample in buffer.iter() {
        let e = sample_embedding(sample)?;
        scored.push((cosine(&q, &e)?, sample));
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.id.cmp(&b.1.id))
    });
    Ok(scored.into_iter().take(k).map(|(_, s)| s).collect())
}

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

/// A k-means partition of buffered queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub seed: u64,
    /// sample id -> cluster index in [0, k)
    pub assignment: BTreeMap<String, usize>,
    pub centroids: Vec<Embedding>,
}

impl Clustering {
    pub fn members<'a>(&self, cluster: usize, buffer: &'a Buffer) -> Vec<&'a Sample> {
        buffer
            .iter()
            .filter(|s| self.assignment.get(&s.id).copied() == Some(cluster))
            .collect()
    }

    pub fn cluster_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }
}

/// Default cluster count for a corpus of n queries: clamp(ceil(sqrt(n/2)), 2, 50),
/// and never more than n.
pub fn auto_cluster_count(n: usize) -> usize {
    let heuristic = ((n as f64 / 2.0).sqrt().ceil() as usize).clamp(2, 50);
    heuristic.min(n.max(1))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm on cosine-normalized vectors with k-means++ seeding.
/// Runs at most 100 iterations or until centroid shift < 1e-6; empty
/// clusters are re-seeded from the farthest point. Deterministic given seed.
pub fn kmeans(
    points: &[Embedding],
    k: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<Embedding>), SemanticsError> {
    if k == 0 || k > points.len() {
        return Err(SemanticsError::TooFewPoints { points: points.len(), k });
    }
    let unit: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.normalized().map(|e| e.vector))
        .collect::<Result<_, _>>()?;
    let dim = unit[0].len();
    for (i, p) in unit.iter().enumerate() {
        if p.len() != dim {
            return Err(SemanticsError::DimensionMismatch { expected: dim, got: unit[i].len() });
        }
    }

    // k-means++ init
    let mut rng = seed ^ 0x51_7c_c1_b7_27_22_0a_95;
    let mut next = || {
        rng = splitmix64(rng);
        rng as f64 / u64::MAX as f64
    };
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(unit[(splitmix64(seed) % unit.len() as u64) as usize].clone());
    let mut dist2: Vec<f64> = unit.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist2.iter().sum();
        let chosen = if total <= f64::EPSILON {
            // All remaining mass at existing centroids; take the farthest point.
            dist2
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(i, _)| i)
                .unwrap_or(0)
        } else {
            let mut target = next() * total;
            let mut idx = unit.len() - 1;
            for (i, d) in dist2.iter().enumerate() {
                if target <= *d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        };
        centroids.push(unit[chosen].clone());
        for (i, p) in unit.iter().enumerate() {
            let d = squared_distance(p, centroids.last().unwrap());
            if d < dist2[i] {
                dist2[i] = d;
            }
        }
    }

    let mut assignment = vec![0usize; unit.len()];
    for _ in 0..100 {
        for (i, p) in unit.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = squared_distance(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignment[i] = best;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in unit.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }

        let mut shift: f64 = 0.0;
        for c in 0..k {
            let new = if counts[c] == 0 {
                // Re-seed an empty cluster from the point farthest from its centroid.
                let far = unit
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| {
                        squared_distance(a, &centroids[c])
                            .partial_cmp(&squared_distance(b, &centroids[c]))
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                unit[far].clone()
            } else {
                let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                match Embedding::new(mean.clone()).normalized() {
                    Ok(e) => e.vector,
                    Err(_) => mean,
                }
            };
            shift += squared_distance(&new, &centroids[c]).sqrt();
            centroids[c] = new;
        }
        if shift < 1e-6 {
            break;
        }
    }

    // Final assignment against converged centroids.
    for (i, p) in unit.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.iter().enumerate() {
            let d = squared_distance(p, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        assignment[i] = best;
    }

    // No cluster may end up empty, even when the input has fewer distinct
    // locations than k (duplicate points): steal the worst-fitting point
    // from a cluster that can spare one.
    let mut counts = vec![0usize; k];
    for &a in &assignment {
        counts[a] += 1;
    }
    for c in 0..k {
        while counts[c] == 0 {
            let donor = unit
                .iter()
                .enumerate()
                .filter(|(i, _)| counts[assignment[*i]] > 1)
                .max_by(|(i, a), (j, b)| {
                    squared_distance(a, &centroids[assignment[*i]])
                        .partial_cmp(&squared_distance(b, &centroids[assignment[*j]]))
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .map(|(i, _)| i)
                .expect("k <= points guarantees a donor");
            counts[assignment[donor]] -= 1;
            assignment[donor] = c;
            counts[c] += 1;
            centroids[c] = unit[donor].clone();
        }
    }

    Ok((assignment, centroids.into_iter().map(Embedding::new).collect()))
}

/// Cluster the buffer's query embeddings into k groups.
pub fn cluster_buffer(buffer: &Buffer, k: usize, seed: u64) -> Result<Clustering, SemanticsError> {
    let mut ids = Vec::with_capacity(buffer.len());
    let mut points = Vec::with_capacity(buffer.len());
    for sample in buffer.iter() {
        ids.push(sample.id.clone());
        points.push(sample_embedding(sample)?);
    }
    let (raw_assignment, centroids) = kmeans(&points, k, seed)?;
    let assignment = ids.into_iter().zip(raw_assignment).collect();
    Ok(Clustering { k, seed, assignment, centroids })
}

/// The m cluster members closest to the centroid (cosine), ties by id.
pub fn representatives<'a>(
    cluster: usize,
    clustering: &Clustering,
    buffer: &'a Buffer,
    m: usize,
) -> Result<Vec<&'a Sample>, SemanticsError> {
    if cluster >= clustering.k {
        return Err(SemanticsError::EmptyCluster(cluster));
    }
    let centroid = &clustering.centroids[cluster];
    let mut members = Vec::new();
    for sample in clustering.members(cluster, buffer) {
        let e = sample_embedding(sample)?;
        members.push((cosine(centroid, &e)?, sample));
    }
    if members.is_empty() {
        return Err(SemanticsError::EmptyCluster(cluster));
    }
    members.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.id.cmp(&b.1.id))
    });
    Ok(members.into_iter().take(m).map(|(_, s)| s).collect())
}

// ---------------------------------------------------------------------------
// Embedding cache file (JSONL id -> vector)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CacheRow {
    id: String,
    embedding: Vec<f64>,
}

pub fn read_embedding_cache(
    path: impl AsRef<Path>,
) -> Result<BTreeMap<String, Vec<f64>>, SemanticsError> {
    let file = std::fs::File::open(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: CacheRow = serde_json::from_str(&line)
            .map_err(|e| SemanticsError::MalformedCache { line: i + 1, reason: e.to_string() })?;
        out.insert(row.id, row.embedding);
    }
    Ok(out)
}

pub fn write_embedding_cache(
    path: impl AsRef<Path>,
    entries: &BTreeMap<String, Vec<f64>>,
) -> Result<(), SemanticsError> {
    let mut file = std::fs::File::create(path)?;
    for (id, embedding) in entries {
        let row = CacheRow { id: id.clone(), embedding: embedding.clone() };
        writeln!(file, "{}", serde_json::to_string(&row).expect("cache row serializes"))?;
    }
    Ok(())
}

/// Fill embeddings from a cache map, leaving unknown ids untouched.
pub fn apply_embedding_cache(buffer: &Buffer, cache: &BTreeMap<String, Vec<f64>>) -> Buffer {
    Buffer::from_samples(buffer.iter().map(|s| {
        let mut s = s.clone();
        if s.embedding.is_none() {
            s.embedding = cache.get(&s.id).cloned();
        }
        s
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Origin;

    fn sample(query: &str) -> Sample {
        Sample::new(query, vec![], vec![], Origin::Seed).unwrap()
    }

    fn embedded_buffer(queries: &[&str], backend: &dyn EmbeddingBackend) -> Buffer {
        let buffer = Buffer::from_samples(queries.iter().map(|q| sample(q)));
        embed_buffer(&buffer, backend).unwrap()
    }

    #[test]
    fn mock_is_deterministic_and_unit_norm() {
        let backend = MockEmbedder::new(64, 7);
        let a = backend.embed_batch(&["a", "b", "a"]).unwrap();
        assert_eq!(a[0], a[2]);
        assert_ne!(a[0], a[1]);
        for e in &a {
            assert!((e.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mock_rejects_empty_input() {
        let backend = MockEmbedder::new(8, 0);
        assert!(matches!(backend.embed_batch(&[]), Err(SemanticsError::EmptyInput)));
    }

    #[test]
    fn cosine_basics() {
        let u = Embedding::new(vec![1.0, 0.0]);
        let v = Embedding::new(vec![0.0, 1.0]);
        let w = Embedding::new(vec![1.0, 1.0]);
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine(&u, &v).unwrap().abs() < 1e-12);
        assert!((cosine(&u, &w).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
        assert!(matches!(
            cosine(&u, &Embedding::new(vec![1.0, 0.0, 0.0])),
            Err(SemanticsError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine(&u, &Embedding::new(vec![0.0, 0.0])),
            Err(SemanticsError::ZeroVector)
        ));
    }

    #[test]
    fn near_duplicates_finds_identical_query() {
        let backend = MockEmbedder::new(64, 1);
        let buffer = embedded_buffer(&["alpha", "beta", "gamma"], &backend);
        let hits = find_near_duplicates("alpha", &buffer, 0.95, &backend).unwrap();
        assert_eq!(hits.len(), 1);
        assert!((hits[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unattainable_threshold_yields_nothing() {
        let backend = MockEmbedder::new(64, 1);
        let buffer = embedded_buffer(&["alpha", "beta"], &backend);
        assert!(find_near_duplicates("alpha", &buffer, 1.01, &backend).unwrap().is_empty());
    }

    #[test]
    fn planted_synonym_pair_is_the_only_hit() {
        let mut synonyms = BTreeMap::new();
        synonyms.insert("how is goose factory stock".to_string(), "tencent quote".to_string());
        let backend = MockEmbedder::new(64, 3).with_synonyms(synonyms);
        let queries: Vec<String> = (0..9)
            .map(|i| format!("query number {i}"))
            .chain(["tencent quote".to_string()])
            .collect();
        let refs: Vec<&str> = queries.iter().map(String::as_str).collect();
        let buffer = embedded_buffer(&refs, &backend);

        let hits = find_near_duplicates("how is goose factory stock", &buffer, 0.95, &backend).unwrap();
        assert_eq!(hits.len(), 1);

        // Oracle: exhaustive cosine scan agrees.
        let q = backend.embed_batch(&["how is goose factory stock"]).unwrap().remove(0);
        let brute: Vec<_> = buffer
            .iter()
            .filter(|s| {
                cosine(&q, &Embedding::new(s.embedding.clone().unwrap())).unwrap() >= 0.95
            })
            .collect();
        assert_eq!(brute.len(), 1);
        assert_eq!(brute[0].id, hits[0].0);
    }

    #[test]
    fn top_k_matches_exhaustive_scan() {
        let backend = MockEmbedder::new(32, 11);
        let queries: Vec<String> = (0..10).map(|i| format!("q{i}")).collect();
        let refs: Vec<&str> = queries.iter().map(String::as_str).collect();
        let buffer = embedded_buffer(&refs, &backend);

        let got = top_k_similar("probe text", &buffer, 3, &backend).unwrap();
        assert_eq!(got.len(), 3);

        let q = backend.embed_batch(&["probe text"]).unwrap().remove(0);
        let mut brute: Vec<(f64, &Sample)> = buffer
            .iter()
            .map(|s| (cosine(&q, &Embedding::new(s.embedding.clone().unwrap())).unwrap(), s))
            .collect();
        brute.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.id.cmp(&b.1.id)));
        let expect: Vec<&str> = brute.iter().take(3).map(|(_, s)| s.id.as_str()).collect();
        let got_ids: Vec<&str> = got.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(got_ids, expect);
    }

    #[test]
    fn top_k_larger_than_buffer_returns_whole_buffer_sorted() {
        let backend = MockEmbedder::new(32, 11);
        let buffer = embedded_buffer(&["a", "b"], &backend);
        let got = top_k_similar("a", &buffer, 10, &backend).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].query, "a");
    }

    #[test]
    fn kmeans_k1_centroid_is_normalized_mean() {
        let points = vec![
            Embedding::new(vec![2.0, 0.0]),
            Embedding::new(vec![0.0, 2.0]),
        ];
        let (assignment, centroids) = kmeans(&points, 1, 9).unwrap();
        assert_eq!(assignment, vec![0, 0]);
        let c = &centroids[0].vector;
        let expected = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c[0] - expected).abs() < 1e-9 && (c[1] - expected).abs() < 1e-9);
    }

    #[test]
    fn kmeans_separates_planted_blobs() {
        // Two tight blobs on orthogonal axes, noise far smaller than separation.
        let mut points = Vec::new();
        for i in 0..12 {
            let eps = 0.01 * (i % 3) as f64;
            if i % 2 == 0 {
                points.push(Embedding::new(vec![1.0, eps, 0.0]));
            } else {
                points.push(Embedding::new(vec![eps, 1.0, 0.0]));
            }
        }
        let (assignment, _) = kmeans(&points, 2, 5).unwrap();
        for i in (0..12).step_by(2) {
            assert_eq!(assignment[i], assignment[0]);
            assert_eq!(assignment[i + 1], assignment[1]);
        }
        assert_ne!(assignment[0], assignment[1]);
    }

    #[test]
    fn kmeans_is_deterministic_and_covers_all_clusters() {
        let backend = MockEmbedder::new(16, 2);
        let queries: Vec<String> = (0..40).map(|i| format!("text {i}")).collect();
        let refs: Vec<&str> = queries.iter().map(String::as_str).collect();
        let points = backend.embed_batch(&refs).unwrap();
        let (a1, c1) = kmeans(&points, 5, 77).unwrap();
        let (a2, c2) = kmeans(&points, 5, 77).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(c1, c2);
        for c in 0..5 {
            assert!(a1.contains(&c), "cluster {c} is empty");
        }
    }

    #[test]
    fn kmeans_rejects_too_few_points() {
        let points = vec![Embedding::new(vec![1.0, 0.0])];
        assert!(matches!(kmeans(&points, 2, 0), Err(SemanticsError::TooFewPoints { .. })));
    }

    #[test]
    fn kmeans_fills_every_cluster_even_with_duplicate_points() {
        // Five copies of one location, k = 3: fewer distinct positions than
        // clusters, yet no cluster may come back empty.
        let points: Vec<Embedding> = (0..5).map(|_| Embedding::new(vec![1.0, 0.0, 0.0])).collect();
        let (assignment, _) = kmeans(&points, 3, 17).unwrap();
        for c in 0..3 {
            assert!(assignment.contains(&c), "cluster {c} is empty");
        }
    }

    #[test]
    fn representatives_orders_by_centroid_similarity() {
        let backend = MockEmbedder::new(16, 4);
        let queries: Vec<String> = (0..9).map(|i| format!("rep {i}")).collect();
        let refs: Vec<&str> = queries.iter().map(String::as_str).collect();
        let buffer = embedded_buffer(&refs, &backend);
        let clustering = cluster_buffer(&buffer, 3, 123).unwrap();

        for cluster in 0..3 {
            let members = clustering.members(cluster, &buffer);
            if members.is_empty() {
                continue;
            }
            let all = representatives(cluster, &clustering, &buffer, members.len() + 5).unwrap();
            assert_eq!(all.len(), members.len());
            let top = representatives(cluster, &clustering, &buffer, 1).unwrap();
            // Exhaustive oracle for m = 1.
            let centroid = &clustering.centroids[cluster];
            let best = members
                .iter()
                .map(|s| {
                    (
                        cosine(centroid, &Embedding::new(s.embedding.clone().unwrap())).unwrap(),
                        s.id.clone(),
                    )
                })
                .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.cmp(&a.1)))
                .unwrap();
            assert_eq!(top[0].id, best.1);
        }
    }

    #[test]
    fn representatives_singleton_cluster() {
        let backend = MockEmbedder::new(16, 4);
        let buffer = embedded_buffer(&["only one"], &backend);
        let clustering = cluster_buffer(&buffer, 1, 0).unwrap();
        let reps = representatives(0, &clustering, &buffer, 5).unwrap();
        assert_eq!(reps.len(), 1);
        assert!(matches!(
            representatives(3, &clustering, &buffer, 1),
            Err(SemanticsError::EmptyCluster(3))
        ));
    }

    #[test]
    fn every_sample_clusters_exactly_once() {
        let backend = MockEmbedder::new(16, 8);
        let queries: Vec<String> = (0..25).map(|i| format!("item {i}")).collect();
        let refs: Vec<&str> = queries.iter().map(String::as_str).collect();
        let buffer = embedded_buffer(&refs, &backend);
        let clustering = cluster_buffer(&buffer, 4, 9).unwrap();
        assert_eq!(clustering.assignment.len(), buffer.len());
        for sample in buffer.iter() {
            let c = clustering.cluster_of(&sample.id).unwrap();
            assert!(c < 4);
        }
    }

    #[test]
    fn auto_cluster_count_scales_and_clamps() {
        assert_eq!(auto_cluster_count(1), 1);
        assert_eq!(auto_cluster_count(4), 2);
        assert_eq!(auto_cluster_count(200), 10);
        assert_eq!(auto_cluster_count(1_000_000), 50);
    }

    #[test]
    fn embedding_cache_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let mut entries = BTreeMap::new();
        entries.insert("id1".to_string(), vec![0.1, 0.2]);
        entries.insert("id2".to_string(), vec![0.3, 0.4]);
        write_embedding_cache(&path, &entries).unwrap();
        let back = read_embedding_cache(&path).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn missing_embeddings_are_an_error() {
        let buffer = Buffer::from_samples([sample("no embedding")]);
        let backend = MockEmbedder::new(8, 0);
        assert!(matches!(
            find_near_duplicates("x", &buffer, 0.9, &backend),
            Err(SemanticsError::MissingEmbeddings(_))
        ));
    }
}
