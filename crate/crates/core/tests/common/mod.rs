//! Shared fixture builders for the integration suites: a deterministic rng,
//! a group-anchored embedding backend, and planted corpora with known
//! blind-spot loci.

#![allow(dead_code)]

use std::collections::BTreeMap;

use fcdata_core::corpus::{Buffer, Origin, ParamKind, ParamSpec, Sample, ScalarValue, ToolCall, ToolSpec};
use fcdata_core::semantics::{Clustering, Embedding, EmbeddingBackend, SemanticsError};

/// splitmix64: tiny, seedable, good enough for fixtures.
pub struct Rng(pub u64);

impl Rng {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn f64(&mut self) -> f64 {
        self.next_u64() as f64 / u64::MAX as f64
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }
}

fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_unit(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut state = seed ^ 0xace1_2345_6789_abcd;
    for b in text.as_bytes() {
        state = mix(state ^ u64::from(*b));
    }
    let mut rng = Rng(state);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.f64() * 2.0 - 1.0).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Blends a per-group anchor with per-text noise: queries sharing the prefix
/// before ':' sit at cosine ~= weight^2 of each other, distinct groups near
/// zero, and identical texts at exactly 1. Keeps k-means separable while
/// near-duplicate pairs stay exact.
pub struct AnchoredEmbedder {
    pub dim: usize,
    pub seed: u64,
    /// Anchor amplitude squared (within-group cosine).
    pub tightness: f64,
}

impl AnchoredEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        // 0.8 keeps within-group cosine comfortably under the 0.95 dedup
        // threshold even at the noise tails, while groups stay separable.
        Self { dim, seed, tightness: 0.8 }
    }
}

impl EmbeddingBackend for AnchoredEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, SemanticsError> {
        if texts.is_empty() {
            return Err(SemanticsError::EmptyInput);
        }
        Ok(texts
            .iter()
            .map(|text| {
                let group = text.split(':').next().unwrap_or(text);
                let anchor = hash_unit(group, self.dim, self.seed);
                let noise = hash_unit(text, self.dim, self.seed.wrapping_add(1));
                let a = self.tightness.sqrt();
                let b = (1.0 - self.tightness).sqrt();
                let mut v: Vec<f64> =
                    anchor.iter().zip(&noise).map(|(g, r)| a * g + b * r).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                for x in &mut v {
                    *x /= norm;
                }
                Embedding::new(v)
            })
            .collect())
    }
}

pub fn string_param(required: bool) -> ParamSpec {
    ParamSpec { kind: ParamKind::String, required, allowed: None }
}

pub fn two_param_tool(name: &str, target: &str, stable: &str) -> ToolSpec {
    let mut parameters = BTreeMap::new();
    parameters.insert(target.to_string(), string_param(true));
    parameters.insert(stable.to_string(), string_param(false));
    ToolSpec {
        name: name.to_string(),
        description: format!("{name} lookup"),
        parameters,
    }
}

pub fn call2(tool: &str, target: &str, value: &str, stable: &str, stable_value: &str) -> ToolCall {
    ToolCall::new(tool)
        .with_arg(target, ScalarValue::String(value.to_string()))
        .with_arg(stable, ScalarValue::String(stable_value.to_string()))
}

/// The criterion-3 planted corpus: 10 tools x 2 parameters = 20 declared
/// parameters over 4 hand-assigned clusters. Tools t0..t4 are planted blind
/// spots (globally 8-value diverse, constant inside cluster i % 4); t5..t9
/// have 2-value global distributions and never fire. The second parameter of
/// every tool is constant. Exactly 5 loci at tau_g = 1.5, tau_b = 0.1.
pub fn planted_fixture() -> (Buffer, Clustering, Vec<(String, String, usize)>) {
    let tools: Vec<ToolSpec> =
        (0..10).map(|i| two_param_tool(&format!("t{i}"), "p", "mode")).collect();
    let toolset = tools.clone();
    let mut samples: Vec<(Sample, usize)> = Vec::new();
    let mut expected = Vec::new();

    let push = |query: String, call: ToolCall, cluster: usize, samples: &mut Vec<(Sample, usize)>| {
        let sample = Sample::new(query, vec![call], toolset.clone(), Origin::Seed).unwrap();
        samples.push((sample, cluster));
    };

    for i in 0..5 {
        let tool = format!("t{i}");
        let victim = i % 4;
        expected.push((tool.clone(), "p".to_string(), victim));
        // Collapsed cluster: six identical values.
        for j in 0..6 {
            push(
                format!("{tool} victim {j}"),
                call2(&tool, "p", &format!("{tool}-v0"), "mode", "std"),
                victim,
                &mut samples,
            );
        }
        // Seven diverse values, two samples each, over the other clusters.
        let others: Vec<usize> = (0..4).filter(|c| *c != victim).collect();
        for v in 1..8 {
            let cluster = others[(v - 1) % 3];
            for j in 0..2 {
                push(
                    format!("{tool} diverse {v} {j}"),
                    call2(&tool, "p", &format!("{tool}-v{v}"), "mode", "std"),
                    cluster,
                    &mut samples,
                );
            }
        }
    }
    for i in 5..10 {
        let tool = format!("t{i}");
        for j in 0..16 {
            let value = if j % 2 == 0 { "x" } else { "y" };
            push(
                format!("{tool} low {j}"),
                call2(&tool, "p", value, "mode", "std"),
                j % 4,
                &mut samples,
            );
        }
    }

    let assignment: BTreeMap<String, usize> =
        samples.iter().map(|(s, c)| (s.id.clone(), *c)).collect();
    let buffer = Buffer::from_samples(samples.into_iter().map(|(s, _)| s));
    let clustering = Clustering {
        k: 4,
        seed: 0,
        assignment,
        centroids: (0..4)
            .map(|i| {
                let mut v = vec![0.0; 16];
                v[i] = 1.0;
                Embedding::new(v)
            })
            .collect(),
    };
    (buffer, clustering, expected)
}
