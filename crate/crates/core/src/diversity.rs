//! Parameter-value distribution analysis: global and per-cluster value
//! histograms, Shannon entropy, and blind-spot detection.
//!
//! A blind spot is a (tool, parameter, cluster) locus whose values are
//! globally diverse (H_G > tau_g) but collapsed inside one semantic cluster
//! (H_k / H_G < tau_b). Each failing cluster is a separately repairable
//! locus. Everything here is pure computation over an immutable buffer and
//! clustering.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Buffer;
use crate::semantics::Clustering;

#[derive(Debug, thiserror::Error)]
pub enum DiversityError {
    #[error("unknown tool: {0}")]
    UnknownTool(String),
    #[error("unknown parameter {parameter} on tool {tool}")]
    UnknownParameter { tool: String, parameter: String },
    #[error("cluster scope requires a clustering")]
    MissingClustering,
}

/// Counts of normalized parameter values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValueHistogram {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl ValueHistogram {
    pub fn add(&mut self, value: String) {
        *self.counts.entry(value).or_default() += 1;
        self.total += 1;
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn contains(&self, value: &str) -> bool {
        self.counts.contains_key(value)
    }

    /// Entropy after hypothetically adding one occurrence of `value`.
    pub fn entropy_with(&self, value: &str) -> f64 {
        let mut h = self.clone();
        h.add(value.to_string());
        entropy(&h)
    }
}

/// Which samples feed the histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    Cluster(usize),
}

/// Histogram of one parameter's normalized values across all calls of one
/// tool, over the whole buffer or one cluster. Samples lacking the parameter
/// contribute nothing.
pub fn value_histogram(
    buffer: &Buffer,
    tool: &str,
    parameter: &str,
    scope: Scope,
    clustering: Option<&Clustering>,
) -> Result<ValueHistogram, DiversityError> {
    let mut tool_known = false;
    let mut param_known = false;
    for sample in buffer.iter() {
        if let Some(spec) = sample.tools.iter().find(|t| t.name == tool) {
            tool_known = true;
            if spec.parameters.contains_key(parameter) {
                param_known = true;
                break;
            }
        }
    }
    if !tool_known {
        return Err(DiversityError::UnknownTool(tool.to_string()));
    }
    if !param_known {
        return Err(DiversityError::UnknownParameter {
            tool: tool.to_string(),
            parameter: parameter.to_string(),
        });
    }
    let clustering = match scope {
        Scope::All => None,
        Scope::Cluster(_) => Some(clustering.ok_or(DiversityError::MissingClustering)?),
    };

    let mut histogram = ValueHistogram::default();
    for sample in buffer.iter() {
        if let (Scope::Cluster(k), Some(clustering)) = (scope, clustering) {
            if clustering.cluster_of(&sample.id) != Some(k) {
                continue;
            }
        }
        for call in &sample.answers {
            if call.name != tool {
                continue;
            }
            if let Some(value) = call.arguments.get(parameter) {
                histogram.add(value.normalized());
            }
        }
    }
    Ok(histogram)
}

/// Shannon entropy in bits: -sum (n/N) log2 (n/N). An empty histogram has
/// entropy 0 by convention.
pub fn entropy(histogram: &ValueHistogram) -> f64 {
    if histogram.total == 0 {
        return 0.0;
    }
    let n = histogram.total as f64;
    let mut h = 0.0;
    for count in histogram.counts.values() {
        if *count == 0 {
            continue;
        }
        let p = *count as f64 / n;
        h -= p * p.log2();
    }
    h
}

/// A (tool, parameter, cluster) locus failing the blind-spot condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindSpot {
    pub tool: String,
    pub parameter: String,
    pub cluster: usize,
    /// Global entropy of the parameter's values, in bits.
    pub h_global: f64,
    /// Entropy within the failing cluster, in bits.
    pub h_cluster: f64,
    /// h_cluster / h_global.
    pub ratio: f64,
    /// Samples in the cluster carrying this parameter.
    pub support: u64,
}

impl BlindSpot {
    /// Dotted path used in prompts and reports.
    pub fn param_path(&self) -> String {
        format!("{}.{}", self.tool, self.parameter)
    }
}

/// Detection thresholds. Defaults sit at the centers of the usual sweep
/// ranges for tau_g and tau_b; min_support filters clusters too small to
/// say anything about collapse.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DetectParams {
    pub tau_g: f64,
    pub tau_b: f64,
    pub min_support: u64,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self { tau_g: 2.0, tau_b: 0.15, min_support: 3 }
    }
}

/// All (tool, parameter) pairs declared by any toolset in the buffer.
pub fn declared_parameters(buffer: &Buffer) -> BTreeSet<(String, String)> {
    let mut pairs = BTreeSet::new();
    for sample in buffer.iter() {
        for tool in &sample.tools {
            for parameter in tool.parameters.keys() {
                pairs.insert((tool.name.clone(), parameter.clone()));
            }
        }
    }
    pairs
}

/// Count, per cluster, the samples whose answers carry (tool, parameter).
fn cluster_support(buffer: &Buffer, clustering: &Clustering, tool: &str, parameter: &str) -> BTreeMap<usize, u64> {
    let mut support: BTreeMap<usize, u64> = BTreeMap::new();
    for sample in buffer.iter() {
        let Some(cluster) = clustering.cluster_of(&sample.id) else { continue };
        let carries = sample
            .answers
            .iter()
            .any(|c| c.name == tool && c.arguments.contains_key(parameter));
        if carries {
            *support.entry(cluster).or_default() += 1;
        }
    }
    support
}

/// Detect every blind-spot locus: for each declared (tool, parameter) with
/// H_G > tau_g, emit one [`BlindSpot`] per cluster whose entropy ratio is
/// strictly below tau_b and whose support meets min_support. Sorted by ratio
/// ascending (worst first).
///
/// Preconditions: tau_g > 0 and 0 < tau_b < 1 (enforced at config load).
pub fn detect_blind_spots(
    buffer: &Buffer,
    clustering: &Clustering,
    params: &DetectParams,
) -> Vec<BlindSpot> {
    assert!(params.tau_g > 0.0, "tau_g must be positive");
    assert!(params.tau_b > 0.0 && params.tau_b < 1.0, "tau_b must be in (0, 1)");

    let mut spots = Vec::new();
    for (tool, parameter) in declared_parameters(buffer) {
        let global = value_histogram(buffer, &tool, &parameter, Scope::All, None)
            .expect("declared pair exists");
        let h_global = entropy(&global);
        // Condition 1 first: H_G = 0 parameters can never divide by zero below.
        if h_global <= params.tau_g {
            continue;
        }
        let support = cluster_support(buffer, clustering, &tool, &parameter);
        for cluster in 0..clustering.k {
            let support_k = support.get(&cluster).copied().unwrap_or(0);
            if support_k < params.min_support {
                continue;
            }
            let local =
                value_histogram(buffer, &tool, &parameter, Scope::Cluster(cluster), Some(clustering))
                    .expect("declared pair exists");
            let h_cluster = entropy(&local);
            let ratio = h_cluster / h_global;
            if ratio < params.tau_b {
                spots.push(BlindSpot {
                    tool: tool.clone(),
                    parameter: parameter.clone(),
                    cluster,
                    h_global,
                    h_cluster,
                    ratio,
                    support: support_k,
                });
            }
        }
    }
    spots.sort_by(|a, b| {
        a.ratio
            .partial_cmp(&b.ratio)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.tool.cmp(&b.tool))
            .then_with(|| a.parameter.cmp(&b.parameter))
            .then_with(|| a.cluster.cmp(&b.cluster))
    });
    spots
}

/// The blind-spot count tracked per augmentation round.
pub fn blind_spot_count(buffer: &Buffer, clustering: &Clustering, params: &DetectParams) -> usize {
    detect_blind_spots(buffer, clustering, params).len()
}
