//! Master-coefficient construction: summation, normalization, dimension
//! reduction.
//!
//! Every training example is dynamic-routed and its last-iteration
//! coefficient matrix lands, whole, in its class's container (never only
//! the ground-truth column; the column-only variant exists solely as a
//! contrast baseline, see [`build_gt_only_master`]). Containers are
//! averaged by class frequency, row-normalized, and reduced to one master
//! matrix by transferring each container's own class column.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::pearson;
use crate::error::{Error, Result};
use crate::routing::{
    dynamic_route, normalize_rows_kernel, CoefficientMatrix, NormKind, RoutingConfig,
};
use crate::synth::{dataset_digest, LabeledDataset};

/// Which training examples feed the containers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FilterStrategy {
    None,
    /// Per class, k-means on GT-column vectors; the `drop_fraction` of
    /// examples farthest from their assigned centroid are dropped.
    Clustering { clusters: usize, drop_fraction: f64 },
    /// Per class, rank examples by mean Pearson correlation of their GT
    /// column against all other same-class GT columns; keep the top
    /// `keep_fraction`.
    Similarity { keep_fraction: f64 },
}

impl FilterStrategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            FilterStrategy::None => Ok(()),
            FilterStrategy::Clustering {
                clusters,
                drop_fraction,
            } => {
                if *clusters == 0 {
                    return Err(Error::Validation("clustering needs at least one cluster".into()));
                }
                if !(*drop_fraction > 0.0 && *drop_fraction <= 1.0) {
                    return Err(Error::Validation(format!(
                        "drop_fraction {drop_fraction} outside (0, 1]"
                    )));
                }
                Ok(())
            }
            FilterStrategy::Similarity { keep_fraction } => {
                if !(*keep_fraction > 0.0 && *keep_fraction <= 1.0) {
                    return Err(Error::Validation(format!(
                        "keep_fraction {keep_fraction} outside (0, 1]"
                    )));
                }
                Ok(())
            }
        }
    }
}

impl std::str::FromStr for FilterStrategy {
    type Err = Error;

    /// CLI grammar: `none`, `kmeans:<drop>`, `sim:<keep>`.
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("none") {
            return Ok(FilterStrategy::None);
        }
        if let Some(rest) = s.strip_prefix("kmeans:") {
            let drop_fraction: f64 = rest
                .parse()
                .map_err(|_| Error::Validation(format!("bad drop fraction '{rest}'")))?;
            let f = FilterStrategy::Clustering {
                clusters: 1,
                drop_fraction,
            };
            f.validate()?;
            return Ok(f);
        }
        if let Some(rest) = s.strip_prefix("sim:") {
            let keep_fraction: f64 = rest
                .parse()
                .map_err(|_| Error::Validation(format!("bad keep fraction '{rest}'")))?;
            let f = FilterStrategy::Similarity { keep_fraction };
            f.validate()?;
            return Ok(f);
        }
        Err(Error::Validation(format!(
            "unknown filter '{s}' (expected none, kmeans:<drop>, or sim:<keep>)"
        )))
    }
}

/// How containers are normalized and reduced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuilderConfig {
    pub norm_kind: NormKind,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub filter: FilterStrategy,
    /// Which iteration's coefficients to extract; `None` means the last.
    /// Earlier iterations exist for ablation only.
    pub extract_iteration: Option<usize>,
    /// Degenerate-row guard for container normalization.
    pub epsilon: f64,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        BuilderConfig {
            norm_kind: NormKind::MaxMin,
            lower_bound: 0.0,
            upper_bound: 1.0,
            filter: FilterStrategy::None,
            extract_iteration: None,
            epsilon: 1e-12,
        }
    }
}

impl BuilderConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lower_bound.is_finite() || !self.upper_bound.is_finite() {
            return Err(Error::Validation("interval bounds must be finite".into()));
        }
        if self.lower_bound >= self.upper_bound {
            return Err(Error::Validation(format!(
                "lower bound {} must be below upper bound {}",
                self.lower_bound, self.upper_bound
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Validation("epsilon must be finite and positive".into()));
        }
        self.filter.validate()
    }

    fn as_norm_config(&self) -> RoutingConfig {
        RoutingConfig {
            iterations: 1,
            norm_kind: self.norm_kind,
            lower_bound: self.lower_bound,
            upper_bound: self.upper_bound,
            init_coefficient: 1.0,
            epsilon: self.epsilon,
        }
    }
}

/// Per-class accumulation state: one full N_i x N_j matrix per class plus
/// the number of examples summed into it.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassContainers {
    matrices: Vec<Array2<f64>>,
    class_counts: Vec<u64>,
    finalized: bool,
}

impl ClassContainers {
    pub fn classes(&self) -> usize {
        self.matrices.len()
    }

    pub fn n_lower(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn n_upper(&self) -> usize {
        self.matrices[0].ncols()
    }

    pub fn matrix(&self, class: usize) -> &Array2<f64> {
        &self.matrices[class]
    }

    pub fn class_counts(&self) -> &[u64] {
        &self.class_counts
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }
}

/// Distinguishes the real master from the appendix's rejected baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MasterVariant {
    Full,
    GtColumnsOnly,
}

/// The accumulated master routing coefficients with build provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct MasterMatrix {
    values: Array2<f64>,
    build_config: BuilderConfig,
    routing_config: RoutingConfig,
    class_counts: Vec<u64>,
    source_digest: String,
    variant: MasterVariant,
}

impl MasterMatrix {
    pub fn new(
        values: Array2<f64>,
        build_config: BuilderConfig,
        routing_config: RoutingConfig,
        class_counts: Vec<u64>,
        source_digest: String,
        variant: MasterVariant,
    ) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Dimension("master matrix has a zero dimension".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("master matrix contains a non-finite entry".into()));
        }
        if class_counts.len() > values.ncols() {
            return Err(Error::Dimension(format!(
                "{} class counts exceed {} upper capsules",
                class_counts.len(),
                values.ncols()
            )));
        }
        build_config.validate()?;
        routing_config.validate()?;
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().into_owned()
        };
        Ok(MasterMatrix {
            values,
            build_config,
            routing_config,
            class_counts,
            source_digest,
            variant,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_lower(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_upper(&self) -> usize {
        self.values.ncols()
    }

    pub fn build_config(&self) -> &BuilderConfig {
        &self.build_config
    }

    pub fn routing_config(&self) -> &RoutingConfig {
        &self.routing_config
    }

    pub fn class_counts(&self) -> &[u64] {
        &self.class_counts
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn variant(&self) -> MasterVariant {
        self.variant
    }

    /// Squash guard used by the fast path.
    pub fn epsilon(&self) -> f64 {
        self.build_config.epsilon
    }

    #[cfg(test)]
    pub(crate) fn for_tests(values: Array2<f64>) -> Self {
        MasterMatrix::new(
            values,
            BuilderConfig::default(),
            RoutingConfig::default(),
            Vec::new(),
            String::new(),
            MasterVariant::Full,
        )
        .unwrap()
    }
}

/// Sum each example's full coefficient matrix into its class container.
/// Accumulation order is ascending example index, which makes rebuilds
/// bitwise reproducible. Empty classes are permitted here; they fail at
/// finalization.
pub fn accumulate_containers(
    coefficients: &[CoefficientMatrix],
    labels: &[usize],
    classes: usize,
) -> Result<ClassContainers> {
    if classes == 0 {
        return Err(Error::Validation("need at least one class".into()));
    }
    if coefficients.is_empty() {
        return Err(Error::Validation("no coefficient matrices to accumulate".into()));
    }
    if coefficients.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} matrices but {} labels",
            coefficients.len(),
            labels.len()
        )));
    }
    let (n_lower, n_upper) = (coefficients[0].n_lower(), coefficients[0].n_upper());
    let mut matrices = vec![Array2::<f64>::zeros((n_lower, n_upper)); classes];
    let mut class_counts = vec![0u64; classes];
    for (idx, (c, &label)) in coefficients.iter().zip(labels).enumerate() {
        if c.n_lower() != n_lower || c.n_upper() != n_upper {
            return Err(Error::Dimension(format!(
                "matrix {idx} has shape ({}, {}), expected ({n_lower}, {n_upper})",
                c.n_lower(),
                c.n_upper()
            )));
        }
        if label >= classes {
            return Err(Error::Validation(format!(
                "label {label} of example {idx} outside [0, {classes})"
            )));
        }
        matrices[label] += c.values();
        class_counts[label] += 1;
    }
    Ok(ClassContainers {
        matrices,
        class_counts,
        finalized: false,
    })
}

/// Divide each container by its class frequency, then row-normalize with
/// the builder's norm kind. Errors if any class is empty.
pub fn finalize_containers(
    mut containers: ClassContainers,
    config: &BuilderConfig,
) -> Result<ClassContainers> {
    config.validate()?;
    if containers.finalized {
        return Err(Error::Validation("containers already finalized".into()));
    }
    if let Some(k) = containers.class_counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(k));
    }
    let norm_config = config.as_norm_config();
    for (matrix, &count) in containers
        .matrices
        .iter_mut()
        .zip(&containers.class_counts)
    {
        matrix.mapv_inplace(|v| v / count as f64);
        let (rows, cols) = matrix.dim();
        let averaged = matrix.as_slice().unwrap().to_vec();
        normalize_rows_kernel(
            &averaged,
            rows,
            cols,
            &norm_config,
            matrix.as_slice_mut().unwrap(),
        );
    }
    containers.finalized = true;
    Ok(containers)
}

/// Dimension reduction: master column k is container k's own class column;
/// columns beyond the class count are filled with the neutral midpoint.
pub fn reduce_to_master(
    containers: &ClassContainers,
    builder: &BuilderConfig,
    routing: &RoutingConfig,
    source_digest: &str,
) -> Result<MasterMatrix> {
    if !containers.finalized {
        return Err(Error::Validation("containers must be finalized before reduction".into()));
    }
    let (classes, n_lower, n_upper) = (
        containers.classes(),
        containers.n_lower(),
        containers.n_upper(),
    );
    if classes > n_upper {
        return Err(Error::Dimension(format!(
            "{classes} classes exceed {n_upper} upper capsules"
        )));
    }
    let neutral = 0.5 * (builder.lower_bound + builder.upper_bound);
    let mut values = Array2::from_elem((n_lower, n_upper), neutral);
    for k in 0..classes {
        let source = containers.matrix(k);
        for i in 0..n_lower {
            values[[i, k]] = source[[i, k]];
        }
    }
    MasterMatrix::new(
        values,
        builder.clone(),
        routing.clone(),
        containers.class_counts.clone(),
        source_digest.to_string(),
        MasterVariant::Full,
    )
}

// Arbitrary fixed constant; the clustering filter has no seed input, so
// determinism comes from pinning this and using the class index as the
// stream id.
const KMEANS_SEED: u64 = 0x6361_7073_5f6b_6d31;
const KMEANS_MAX_ITERS: usize = 50;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Lloyd's algorithm on one class's GT columns. Returns each point's
/// Euclidean distance to its assigned centroid. Assignment ties go to the
/// lowest centroid index; empty clusters keep their previous centroid.
fn kmeans_distances(points: &[Vec<f64>], clusters: usize, stream: u64) -> Vec<f64> {
    let n = points.len();
    let k = clusters.min(n);
    if k == 1 {
        let dim = points[0].len();
        let mut centroid = vec![0.0; dim];
        for p in points {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v;
            }
        }
        for c in centroid.iter_mut() {
            *c /= n as f64;
        }
        return points
            .iter()
            .map(|p| squared_distance(p, &centroid).sqrt())
            .collect();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(KMEANS_SEED);
    rng.set_stream(stream);
    let mut pool: Vec<usize> = (0..n).collect();
    for t in 0..k {
        let j = rng.gen_range(t..n);
        pool.swap(t, j);
    }
    let mut centroids: Vec<Vec<f64>> = pool[..k].iter().map(|&i| points[i].clone()).collect();

    let mut assignment = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (idx, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = squared_distance(p, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = squared_distance(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[idx] != best {
                assignment[idx] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            for v in centroid.iter_mut() {
                *v = 0.0;
            }
            for m in &members {
                for (cv, mv) in centroid.iter_mut().zip(m.iter()) {
                    *cv += mv;
                }
            }
            for v in centroid.iter_mut() {
                *v /= members.len() as f64;
            }
        }
    }
    points
        .iter()
        .zip(&assignment)
        .map(|(p, &a)| squared_distance(p, &centroids[a]).sqrt())
        .collect()
}

/// Select which examples survive into accumulation. Input is each
/// example's GT-column vector (the column of its own label). Returns kept
/// example indices in ascending order.
pub fn filter_examples(
    gt_columns: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    filter: &FilterStrategy,
) -> Result<Vec<usize>> {
    filter.validate()?;
    if gt_columns.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} columns but {} labels",
            gt_columns.len(),
            labels.len()
        )));
    }
    if matches!(filter, FilterStrategy::None) {
        return Ok((0..gt_columns.len()).collect());
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (idx, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Validation(format!(
                "label {label} of example {idx} outside [0, {classes})"
            )));
        }
        members[label].push(idx);
    }
    if let Some(k) = members.iter().position(|m| m.is_empty()) {
        return Err(Error::MissingClass(k));
    }

    let mut kept = Vec::new();
    for (class, class_members) in members.iter().enumerate() {
        let n = class_members.len();
        match filter {
            FilterStrategy::None => unreachable!(),
            FilterStrategy::Similarity { keep_fraction } => {
                // Leave-one-out mean pairwise Pearson within the class.
                let scores: Vec<f64> = class_members
                    .iter()
                    .map(|&e| {
                        if n == 1 {
                            return 0.0;
                        }
                        let sum: f64 = class_members
                            .iter()
                            .filter(|&&o| o != e)
                            .map(|&o| pearson(&gt_columns[e], &gt_columns[o]).unwrap())
                            .sum();
                        sum / (n - 1) as f64
                    })
                    .collect();
                let keep_count = ((keep_fraction * n as f64).round() as usize).clamp(1, n);
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| {
                    scores[b]
                        .partial_cmp(&scores[a])
                        .unwrap()
                        .then(class_members[a].cmp(&class_members[b]))
                });
                kept.extend(order[..keep_count].iter().map(|&i| class_members[i]));
            }
            FilterStrategy::Clustering {
                clusters,
                drop_fraction,
            } => {
                let points: Vec<Vec<f64>> = class_members
                    .iter()
                    .map(|&e| gt_columns[e].clone())
                    .collect();
                let distances = kmeans_distances(&points, *clusters, class as u64);
                let drop_count = (drop_fraction * n as f64).round() as usize;
                if drop_count >= n {
                    return Err(Error::Validation(format!(
                        "clustering filter would empty class {class}"
                    )));
                }
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| {
                    distances[b]
                        .partial_cmp(&distances[a])
                        .unwrap()
                        .then(class_members[a].cmp(&class_members[b]))
                });
                kept.extend(order[drop_count..].iter().map(|&i| class_members[i]));
            }
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

struct RoutedExample {
    coefficients: CoefficientMatrix,
    gt_column: Vec<f64>,
}

/// Route every example and extract the configured iteration's coefficients
/// plus the GT column. Parallel over examples; order preserved.
fn route_and_extract(
    dataset: &LabeledDataset,
    routing: &RoutingConfig,
    builder: &BuilderConfig,
) -> Result<Vec<RoutedExample>> {
    let extract_at = match builder.extract_iteration {
        Some(t) if t >= routing.iterations => {
            return Err(Error::Validation(format!(
                "extract_iteration {t} out of range for {} iterations",
                routing.iterations
            )));
        }
        Some(t) => t,
        None => routing.iterations - 1,
    };
    (0..dataset.len())
        .into_par_iter()
        .map(|idx| {
            let trace = dynamic_route(dataset.example(idx), routing)?;
            let coefficients = trace.coefficients_at(extract_at)?;
            let gt_column = coefficients
                .values()
                .column(dataset.label(idx))
                .to_vec();
            Ok(RoutedExample {
                coefficients,
                gt_column,
            })
        })
        .collect()
}

/// Full pipeline: route, extract last-iteration coefficients, filter,
/// accumulate, finalize, reduce. The result carries the dataset digest and
/// both configs as provenance.
pub fn build_master(
    dataset: &LabeledDataset,
    routing: &RoutingConfig,
    builder: &BuilderConfig,
) -> Result<MasterMatrix> {
    routing.validate()?;
    builder.validate()?;
    if dataset.is_empty() {
        return Err(Error::Validation("cannot build a master from an empty dataset".into()));
    }
    let classes = dataset.n_upper();
    let routed = route_and_extract(dataset, routing, builder)?;

    let gt_columns: Vec<Vec<f64>> = routed.iter().map(|r| r.gt_column.clone()).collect();
    let kept = filter_examples(&gt_columns, dataset.labels(), classes, &builder.filter)?;

    let mut keep_mask = vec![false; dataset.len()];
    for &idx in &kept {
        keep_mask[idx] = true;
    }
    let mut coefficients = Vec::with_capacity(kept.len());
    let mut labels = Vec::with_capacity(kept.len());
    for (idx, routed_example) in routed.into_iter().enumerate() {
        if keep_mask[idx] {
            coefficients.push(routed_example.coefficients);
            labels.push(dataset.label(idx));
        }
    }

    let containers = accumulate_containers(&coefficients, &labels, classes)?;
    let containers = finalize_containers(containers, builder)?;
    reduce_to_master(&containers, builder, routing, &dataset_digest(dataset))
}

/// The appendix's rejected baseline: accumulate only GT columns into a
/// single container, frequency-normalize per column, then row-normalize.
/// Exists to demonstrate that it generalizes worse than the full-matrix
/// pipeline, not for production use.
pub fn build_gt_only_master(
    dataset: &LabeledDataset,
    routing: &RoutingConfig,
    builder: &BuilderConfig,
) -> Result<MasterMatrix> {
    routing.validate()?;
    builder.validate()?;
    if dataset.is_empty() {
        return Err(Error::Validation("cannot build a master from an empty dataset".into()));
    }
    let classes = dataset.n_upper();
    let n_lower = dataset.n_lower();
    let routed = route_and_extract(dataset, routing, builder)?;

    let gt_columns: Vec<Vec<f64>> = routed.iter().map(|r| r.gt_column.clone()).collect();
    let kept = filter_examples(&gt_columns, dataset.labels(), classes, &builder.filter)?;

    let mut sums = Array2::<f64>::zeros((n_lower, classes));
    let mut class_counts = vec![0u64; classes];
    for &idx in &kept {
        let label = dataset.label(idx);
        for (i, &v) in gt_columns[idx].iter().enumerate() {
            sums[[i, label]] += v;
        }
        class_counts[label] += 1;
    }
    if let Some(k) = class_counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(k));
    }
    for (k, &count) in class_counts.iter().enumerate() {
        for i in 0..n_lower {
            sums[[i, k]] /= count as f64;
        }
    }
    let averaged = sums.as_slice().unwrap().to_vec();
    normalize_rows_kernel(
        &averaged,
        n_lower,
        classes,
        &builder.as_norm_config(),
        sums.as_slice_mut().unwrap(),
    );

    let neutral = 0.5 * (builder.lower_bound + builder.upper_bound);
    let n_upper = dataset.n_upper();
    let mut values = Array2::from_elem((n_lower, n_upper), neutral);
    for k in 0..classes {
        for i in 0..n_lower {
            values[[i, k]] = sums[[i, k]];
        }
    }
    MasterMatrix::new(
        values,
        builder.clone(),
        routing.clone(),
        class_counts,
        dataset_digest(dataset),
        MasterVariant::GtColumnsOnly,
    )
}

/// Batch replication for batched inference front-ends: `batch` bitwise
/// copies of the master values.
pub fn replicate_master(master: &MasterMatrix, batch: usize) -> Result<Array3<f64>> {
    if batch == 0 {
        return Err(Error::Validation("batch must be at least 1".into()));
    }
    let (n_lower, n_upper) = (master.n_lower(), master.n_upper());
    let mut out = Array3::zeros((batch, n_lower, n_upper));
    for mut slice in out.outer_iter_mut() {
        slice.assign(master.values());
    }
    Ok(out)
}
