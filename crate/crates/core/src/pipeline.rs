//! Probe orchestration over captured MoE layer data.
//!
//! A [`LayerCapture`] holds what a source (live model or ingested dump)
//! provides for one MoE layer: the hidden states entering the layer, the
//! routing weights the router produced for them, and per-expert weighted-mean
//! Jacobians. [`collect`] splits the capture into per-expert routed datasets,
//! and the report builders turn those into alignment matrices, Grassmann
//! matrices and variance spectra.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::GeomError;
use crate::geometry::{
    grassmann_distance, offdiag_stats, pairwise_metric_matrix, vectorized_cosine, weighted_pca, OffDiagStats, PcaMode,
    PcaResult,
};
use crate::matrix::Matrix;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("layer {0} not present in source")]
    LayerNotFound(usize),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("incompatible inputs: {0}")]
    Incompatible(String),
    #[error("malformed capture: {0}")]
    Malformed(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// How per-token Jacobians are folded into the expert mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianWeighting {
    /// `Σ g_e(x_i)·J_e(x_i) / Σ g_e(x_i)` over routed tokens.
    #[default]
    Routing,
    /// Plain mean over routed tokens.
    Uniform,
}

/// Running weighted mean of one expert's Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertJacobianStat {
    pub expert_id: usize,
    mean: Matrix<f64>,
    total_weight: f64,
    sample_count: usize,
}

impl ExpertJacobianStat {
    pub fn new(expert_id: usize, d_out: usize, d_in: usize) -> Self {
        Self {
            expert_id,
            mean: Matrix::zeros(d_out, d_in),
            total_weight: 0.0,
            sample_count: 0,
        }
    }

    /// Rebuilds a statistic whose mean was accumulated elsewhere (dumps, factored paths).
    pub fn from_parts(expert_id: usize, mean: Matrix<f64>, total_weight: f64, sample_count: usize) -> Result<Self> {
        if sample_count > 0 && total_weight.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(PipelineError::Malformed(format!(
                "expert {expert_id}: {sample_count} samples but total weight {total_weight}"
            )));
        }
        if !mean.is_finite() {
            return Err(PipelineError::Malformed(format!(
                "expert {expert_id}: non-finite Jacobian mean"
            )));
        }
        Ok(Self {
            expert_id,
            mean,
            total_weight,
            sample_count,
        })
    }

    /// Folds in one token's Jacobian with weight `w > 0`; non-positive weights are ignored.
    pub fn accumulate(&mut self, jacobian: &Matrix<f64>, w: f64) {
        assert_eq!(jacobian.shape(), self.mean.shape(), "Jacobian shape");
        if w <= 0.0 {
            return;
        }
        self.total_weight += w;
        self.sample_count += 1;
        let step = w / self.total_weight;
        for (m, &j) in self.mean.as_mut_slice().iter_mut().zip(jacobian.as_slice()) {
            *m += step * (j - *m);
        }
    }

    pub fn mean_jacobian(&self) -> &Matrix<f64> {
        &self.mean
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }
}

/// Everything a source provides for one MoE layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCapture {
    pub layer_id: usize,
    /// MoE-layer inputs, one row per token.
    pub hidden: Matrix<f64>,
    /// Routing weights, one row per token, one column per expert.
    pub routing: Matrix<f64>,
    /// Weighted-mean Jacobian per expert, when the source provides them.
    pub jacobians: Option<Vec<ExpertJacobianStat>>,
    /// Dense-layer baseline rows for spectrum comparison.
    pub dense: Option<Matrix<f64>>,
}

impl LayerCapture {
    pub fn n_experts(&self) -> usize {
        self.routing.cols()
    }

    pub fn n_tokens(&self) -> usize {
        self.hidden.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.rows() != self.routing.rows() {
            return Err(PipelineError::Malformed(format!(
                "layer {}: {} hidden rows vs {} routing rows",
                self.layer_id,
                self.hidden.rows(),
                self.routing.rows()
            )));
        }
        if let Some(stats) = &self.jacobians {
            if stats.len() != self.n_experts() {
                return Err(PipelineError::Malformed(format!(
                    "layer {}: {} Jacobian means for {} experts",
                    self.layer_id,
                    stats.len(),
                    self.n_experts()
                )));
            }
        }
        if let Some(dense) = &self.dense {
            if dense.cols() != self.hidden.cols() {
                return Err(PipelineError::Malformed(format!(
                    "layer {}: dense baseline width {} vs hidden width {}",
                    self.layer_id,
                    dense.cols(),
                    self.hidden.cols()
                )));
            }
        }
        Ok(())
    }
}

/// Hidden-state rows routed to one expert with their (positive) routing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutedActivations {
    pub expert_id: usize,
    pub rows: Matrix<f64>,
    pub weights: Vec<f64>,
}

impl RoutedActivations {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Collected {
    pub layer_id: usize,
    pub routed: Vec<RoutedActivations>,
    pub jacobians: Option<Vec<ExpertJacobianStat>>,
    pub annotations: Vec<String>,
}

pub fn find_layer(captures: &[LayerCapture], layer_id: usize) -> Result<&LayerCapture> {
    captures
        .iter()
        .find(|c| c.layer_id == layer_id)
        .ok_or(PipelineError::LayerNotFound(layer_id))
}

/// Splits a capture into per-expert routed datasets in one pass over the tokens.
pub fn collect(capture: &LayerCapture) -> Result<Collected> {
    capture.validate()?;
    let e = capture.n_experts();
    let mut idx: Vec<Vec<usize>> = vec![Vec::new(); e];
    let mut wts: Vec<Vec<f64>> = vec![Vec::new(); e];
    for t in 0..capture.n_tokens() {
        for (k, &g) in capture.routing.row(t).iter().enumerate() {
            if g > 0.0 {
                idx[k].push(t);
                wts[k].push(g);
            }
        }
    }
    let mut annotations = Vec::new();
    let routed = idx
        .into_iter()
        .zip(wts)
        .enumerate()
        .map(|(expert_id, (rows, weights))| {
            if rows.is_empty() {
                annotations.push(format!("expert {expert_id}: no routed tokens"));
            }
            RoutedActivations {
                expert_id,
                rows: capture.hidden.select_rows(&rows),
                weights,
            }
        })
        .collect();
    Ok(Collected {
        layer_id: capture.layer_id,
        routed,
        jacobians: capture.jacobians.clone(),
        annotations,
    })
}

/// Streams per-token Jacobians into per-expert means. `jacobian_at(t, e)` is
/// only called for pairs with positive routing weight.
pub fn stream_jacobians(
    routing: &Matrix<f64>,
    d_out: usize,
    d_in: usize,
    weighting: JacobianWeighting,
    mut jacobian_at: impl FnMut(usize, usize) -> Matrix<f64>,
) -> Vec<ExpertJacobianStat> {
    let mut stats: Vec<_> = (0..routing.cols())
        .map(|e| ExpertJacobianStat::new(e, d_out, d_in))
        .collect();
    for t in 0..routing.rows() {
        for (e, &g) in routing.row(t).iter().enumerate() {
            if g > 0.0 {
                let w = match weighting {
                    JacobianWeighting::Routing => g,
                    JacobianWeighting::Uniform => 1.0,
                };
                stats[e].accumulate(&jacobian_at(t, e), w);
            }
        }
    }
    stats
}

/// Pairwise metric over a subset of experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSection {
    pub expert_ids: Vec<usize>,
    pub matrix: Vec<Vec<f64>>,
    pub stats: OffDiagStats<f64>,
}

impl MetricSection {
    fn from_matrix(expert_ids: Vec<usize>, m: &Matrix<f64>) -> Result<Self> {
        Ok(Self {
            expert_ids,
            matrix: (0..m.rows()).map(|r| m.row(r).to_vec()).collect(),
            stats: offdiag_stats(m)?,
        })
    }

    pub fn to_matrix(&self) -> Result<Matrix<f64>> {
        Ok(Matrix::from_rows(&self.matrix)?)
    }

    /// Entries strictly above the diagonal, row by row.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.matrix.len();
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| self.matrix[i][j])
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Alignment {
    pub section: MetricSection,
    pub excluded: Vec<(usize, String)>,
}

/// Cosine alignment of the experts' mean Jacobians. Experts without routed
/// tokens or with an all-zero mean are excluded and reported.
pub fn jacobian_alignment(stats: &[ExpertJacobianStat]) -> Result<Alignment> {
    let mut excluded = Vec::new();
    let mut kept = Vec::new();
    for s in stats {
        if s.sample_count() == 0 {
            excluded.push((s.expert_id, "no routed tokens".to_string()));
        } else if s.mean_jacobian().frobenius_norm() == 0.0 {
            excluded.push((s.expert_id, "zero mean Jacobian (dead expert)".to_string()));
        } else {
            kept.push(s);
        }
    }
    if kept.len() < 2 {
        return Err(PipelineError::InsufficientData(format!(
            "Jacobian alignment needs 2 live experts, found {}",
            kept.len()
        )));
    }
    let m = pairwise_metric_matrix(&kept, |a, b| vectorized_cosine(a.mean_jacobian(), b.mean_jacobian()))?;
    Ok(Alignment {
        section: MetricSection::from_matrix(kept.iter().map(|s| s.expert_id).collect(), &m)?,
        excluded,
    })
}

#[derive(Debug, Clone)]
pub struct SubspaceReport {
    pub pcas: Vec<(usize, PcaResult<f64>)>,
    pub section: MetricSection,
    pub excluded: Vec<(usize, String)>,
}

/// Routed PCA per expert and pairwise Grassmann distances between the top-`n` subspaces.
pub fn subspace_report(routed: &[RoutedActivations], n: usize, mode: PcaMode) -> Result<SubspaceReport> {
    let mut pcas = Vec::new();
    let mut excluded = Vec::new();
    for r in routed {
        if r.len() < n {
            excluded.push((
                r.expert_id,
                format!("{} routed tokens, {n} components requested", r.len()),
            ));
            continue;
        }
        match weighted_pca(&r.rows, &r.weights, n, mode) {
            Ok(p) => pcas.push((r.expert_id, p)),
            Err(e @ (GeomError::InsufficientData(_) | GeomError::DegenerateWeights(_))) => {
                excluded.push((r.expert_id, e.to_string()))
            }
            Err(e) => return Err(e.into()),
        }
    }
    if pcas.len() < 2 {
        let detail: Vec<String> = excluded.iter().map(|(e, why)| format!("expert {e}: {why}")).collect();
        return Err(PipelineError::InsufficientData(format!(
            "fewer than 2 experts eligible for {n}-component PCA ({})",
            detail.join("; ")
        )));
    }
    let m = pairwise_metric_matrix(&pcas, |a, b| grassmann_distance(&a.1.subspace, &b.1.subspace))?;
    Ok(SubspaceReport {
        section: MetricSection::from_matrix(pcas.iter().map(|p| p.0).collect(), &m)?,
        pcas,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// `None` for the dense baseline.
    pub expert_id: Option<usize>,
    pub explained: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl Spectrum {
    fn from_pca(expert_id: Option<usize>, p: &PcaResult<f64>) -> Self {
        Self {
            expert_id,
            explained: p.explained_variance.clone(),
            cumulative: p.cumulative_variance.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectraSection {
    pub dense: Option<Spectrum>,
    pub experts: Vec<Spectrum>,
}

/// Variance spectra of the dense baseline (unit weights) and of each routed expert.
/// Experts with fewer than one positively weighted row are skipped.
pub fn spectra_report(dense_rows: &Matrix<f64>, routed: &[RoutedActivations], mode: PcaMode) -> Result<SpectraSection> {
    if dense_rows.rows() == 0 {
        return Err(PipelineError::InsufficientData("dense baseline has no rows".into()));
    }
    let dense = weighted_pca(dense_rows, &vec![1.0; dense_rows.rows()], 1, PcaMode::SampleWeighted)?;
    let mut experts = Vec::new();
    for r in routed.iter().filter(|r| !r.is_empty()) {
        let p = weighted_pca(&r.rows, &r.weights, 1, mode)?;
        experts.push(Spectrum::from_pca(Some(r.expert_id), &p));
    }
    Ok(SpectraSection {
        dense: Some(Spectrum::from_pca(None, &dense)),
        experts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingSummary {
    pub n_tokens: usize,
    /// Mean per-token routing entropy (nats).
    pub mean_entropy: f64,
    /// `ln E`, the entropy of uniform routing.
    pub max_entropy: f64,
    /// Tokens with positive weight, per expert.
    pub expert_tokens: Vec<usize>,
    /// Mean routing weight per expert over all tokens.
    pub expert_load: Vec<f64>,
}

pub fn routing_summary(routing: &Matrix<f64>) -> RoutingSummary {
    let (n, e) = routing.shape();
    let mut tokens = vec![0usize; e];
    let mut load = vec![0.0; e];
    let mut entropy = 0.0;
    for t in 0..n {
        for (k, &g) in routing.row(t).iter().enumerate() {
            if g > 0.0 {
                tokens[k] += 1;
                load[k] += g;
                entropy -= g * g.ln();
            }
        }
    }
    let denom = n.max(1) as f64;
    RoutingSummary {
        n_tokens: n,
        mean_entropy: entropy / denom,
        max_entropy: (e as f64).ln(),
        expert_tokens: tokens,
        expert_load: load.into_iter().map(|l| l / denom).collect(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Dump path, checkpoint path or other description of the data source.
    pub source: String,
    pub toolkit_version: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub schema: u32,
    pub layer_id: usize,
    pub n_experts: usize,
    pub n_components: usize,
    pub mode: PcaMode,
    pub jacobian: Option<MetricSection>,
    pub grassmann: MetricSection,
    pub spectra: SpectraSection,
    pub routing: RoutingSummary,
    pub annotations: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy)]
pub struct AnalysisOptions {
    pub n_components: usize,
    pub mode: PcaMode,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            n_components: crate::geometry::DEFAULT_COMPONENTS,
            mode: PcaMode::RowScaled,
        }
    }
}

/// Runs every probe on one layer and assembles the report.
pub fn analyze_layer(capture: &LayerCapture, opts: AnalysisOptions, provenance: Provenance) -> Result<GeometryReport> {
    let collected = collect(capture)?;
    let mut annotations = collected.annotations.clone();

    let subspaces = subspace_report(&collected.routed, opts.n_components, opts.mode)?;
    for (e, why) in &subspaces.excluded {
        annotations.push(format!("expert {e} excluded from subspace analysis: {why}"));
    }

    let jacobian = match &collected.jacobians {
        Some(stats) => {
            let a = jacobian_alignment(stats)?;
            for (e, why) in &a.excluded {
                annotations.push(format!("expert {e} excluded from Jacobian alignment: {why}"));
            }
            Some(a.section)
        }
        None => None,
    };

    // pre-MoE hidden states stand in for the dense baseline when none is supplied
    let dense_rows = capture.dense.as_ref().unwrap_or(&capture.hidden);
    let dense = if dense_rows.rows() > 0 {
        let p = weighted_pca(dense_rows, &vec![1.0; dense_rows.rows()], 1, PcaMode::SampleWeighted)?;
        Some(Spectrum::from_pca(None, &p))
    } else {
        None
    };
    let experts = subspaces
        .pcas
        .iter()
        .map(|(e, p)| Spectrum::from_pca(Some(*e), p))
        .collect();

    Ok(GeometryReport {
        schema: SCHEMA_VERSION,
        layer_id: capture.layer_id,
        n_experts: capture.n_experts(),
        n_components: opts.n_components,
        mode: opts.mode,
        jacobian,
        grassmann: subspaces.section,
        spectra: SpectraSection { dense, experts },
        routing: routing_summary(&capture.routing),
        annotations,
        provenance,
    })
}

/// Paired comparison of two routing regimes on the same layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingComparison {
    pub layer_id: usize,
    /// Grassmann mean of `a` minus that of `b`.
    pub grassmann_delta: f64,
    /// Grassmann mean of `a` over that of `b` (`None` when `b` is zero).
    pub grassmann_ratio: Option<f64>,
    /// Jacobian-similarity mean of `a` minus that of `b`.
    pub jacobian_delta: Option<f64>,
    /// |Jacobian mean| of `a` minus that of `b`.
    pub jacobian_abs_delta: Option<f64>,
    /// `a` has larger subspace separation than `b`.
    pub subspace_separation: bool,
    /// `a` has weaker cross-expert functional alignment than `b`.
    pub functional_decorrelation: bool,
    /// Both of the above.
    pub sharper_separation: bool,
}

pub fn compare_routing(a: &GeometryReport, b: &GeometryReport) -> Result<RoutingComparison> {
    if a.n_experts != b.n_experts || a.n_components != b.n_components {
        return Err(PipelineError::Incompatible(format!(
            "E={} n={} vs E={} n={}",
            a.n_experts, a.n_components, b.n_experts, b.n_components
        )));
    }
    let ga = a.grassmann.stats.mean;
    let gb = b.grassmann.stats.mean;
    let (jacobian_delta, jacobian_abs_delta) = match (&a.jacobian, &b.jacobian) {
        (Some(ja), Some(jb)) => (
            Some(ja.stats.mean - jb.stats.mean),
            Some(ja.stats.mean.abs() - jb.stats.mean.abs()),
        ),
        _ => (None, None),
    };
    let subspace_separation = ga > gb;
    let functional_decorrelation = jacobian_abs_delta.is_some_and(|d| d < 0.0);
    Ok(RoutingComparison {
        layer_id: a.layer_id,
        grassmann_delta: ga - gb,
        grassmann_ratio: (gb != 0.0).then(|| ga / gb),
        jacobian_delta,
        jacobian_abs_delta,
        subspace_separation,
        functional_decorrelation,
        sharper_separation: subspace_separation && functional_decorrelation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn capture(routing: Vec<Vec<f64>>, d: usize) -> LayerCapture {
        let n = routing.len();
        LayerCapture {
            layer_id: 0,
            hidden: Matrix::from_fn(n, d, |r, c| ((r * d + c) as f64 * 0.37).sin()),
            routing: Matrix::from_rows(&routing).unwrap(),
            jacobians: None,
            dense: None,
        }
    }

    #[test]
    fn top2_routing_counts_two_per_token() {
        let routing: Vec<Vec<f64>> = (0..10)
            .map(|t| {
                let mut r = vec![0.0; 4];
                r[t % 4] = 0.6;
                r[(t + 1) % 4] = 0.4;
                r
            })
            .collect();
        let c = collect(&capture(routing, 3)).unwrap();
        assert_eq!(c.routed.iter().map(|r| r.len()).sum::<usize>(), 20);
        assert!(c.routed.iter().all(|r| r.weights.iter().all(|&w| w > 0.0)));
    }

    #[test]
    fn soft_routing_gives_every_expert_every_token() {
        let c = collect(&capture(vec![vec![0.25; 4]; 7], 3)).unwrap();
        assert!(c.routed.iter().all(|r| r.len() == 7));
        assert!(c.annotations.is_empty());
    }

    #[test]
    fn unrouted_expert_is_flagged() {
        let c = collect(&capture(vec![vec![1.0, 0.0]; 3], 2)).unwrap();
        assert_eq!(c.routed[1].len(), 0);
        assert_eq!(c.annotations, vec!["expert 1: no routed tokens".to_string()]);
    }

    #[test]
    fn layer_lookup() {
        let caps = vec![capture(vec![vec![1.0]], 1)];
        assert!(find_layer(&caps, 0).is_ok());
        assert!(matches!(find_layer(&caps, 3), Err(PipelineError::LayerNotFound(3))));
    }

    #[test]
    fn single_token_mean_is_that_jacobian() {
        let j = Matrix::from_fn(2, 3, |r, c| (r + 2 * c) as f64 - 1.5);
        let routing = Matrix::from_rows(&[vec![0.3]]).unwrap();
        let stats = stream_jacobians(&routing, 2, 3, JacobianWeighting::Routing, |_, _| j.clone());
        assert_eq!(stats[0].mean_jacobian(), &j);
        assert_eq!(stats[0].sample_count(), 1);
        assert_eq!(stats[0].total_weight(), 0.3);
    }

    #[test]
    fn malformed_stats_rejected() {
        assert!(ExpertJacobianStat::from_parts(0, Matrix::zeros(1, 1), 0.0, 3).is_err());
        assert!(ExpertJacobianStat::from_parts(0, Matrix::zeros(1, 1), 0.0, 0).is_ok());
    }

    #[test]
    fn alignment_excludes_dead_and_unrouted() {
        let live = |id, v: f64| {
            ExpertJacobianStat::from_parts(id, Matrix::from_fn(2, 2, |r, c| v + (r * c) as f64), 1.0, 1).unwrap()
        };
        let stats = vec![
            live(0, 1.0),
            ExpertJacobianStat::new(1, 2, 2),
            ExpertJacobianStat::from_parts(2, Matrix::zeros(2, 2), 1.0, 4).unwrap(),
            live(3, -2.0),
        ];
        let a = jacobian_alignment(&stats).unwrap();
        assert_eq!(a.section.expert_ids, vec![0, 3]);
        assert_eq!(a.excluded.len(), 2);
        assert!(jacobian_alignment(&stats[..3]).is_err());
    }

    #[test]
    fn subspace_report_requires_two_experts() {
        let r = |id, n| RoutedActivations {
            expert_id: id,
            rows: Matrix::from_fn(n, 6, |a, b| ((a * 7 + b * 3) as f64).cos()),
            weights: vec![1.0; n],
        };
        let err = subspace_report(&[r(0, 10), r(1, 3)], 5, PcaMode::RowScaled).unwrap_err();
        assert!(err.to_string().contains("expert 1"), "{err}");
        let ok = subspace_report(&[r(0, 10), r(1, 3), r(2, 12)], 5, PcaMode::RowScaled).unwrap();
        assert_eq!(ok.section.expert_ids, vec![0, 2]);
        assert_eq!(ok.excluded[0].0, 1);
    }

    #[test]
    fn entropy_summary() {
        let s = routing_summary(&Matrix::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap());
        assert!((s.mean_entropy - 2f64.ln() / 2.0).abs() < 1e-15);
        assert_eq!(s.expert_tokens, vec![2, 1]);
        assert_eq!(s.expert_load, vec![0.75, 0.25]);
    }
}
