//! Planted-model synthetic datasets.
//!
//! Each class plants a unit target direction into the ground-truth column of
//! a fixed subset of lower capsules; everything else is isotropic noise. The
//! construction makes the class signature of the routing coefficients true
//! by design, with the difficulty tunable through the overlap and noise
//! knobs.
//!
//! Randomness discipline: one ChaCha8 generator per purpose, all seeded from
//! `spec.seed` and separated by fixed stream ids (targets, profiles, and one
//! stream per (split, class, example) triple). Adding examples or classes
//! never perturbs draws that an earlier configuration already made, and the
//! train/test splits are disjoint by stream construction.

use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::routing::PredictionTensor;

const STREAM_TARGETS: u64 = 0;
const STREAM_PROFILES: u64 = 1;
// Example streams: (2 + split) << 56 | class << 28 | index.
const STREAM_EXAMPLE_BASE: u64 = 2;

/// Split tag used only for stream separation.
#[derive(Clone, Copy)]
enum Split {
    Train = 0,
    Test = 1,
}

fn example_stream(split: Split, class: usize, index: usize) -> u64 {
    (STREAM_EXAMPLE_BASE + split as u64) << 56 | (class as u64) << 28 | index as u64
}

/// Parameters of the planted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    /// Number of classes K; the dataset's upper-layer width equals K.
    pub classes: usize,
    pub n_lower: usize,
    pub dim: usize,
    /// Fraction of lower capsules active per class; round(f * n_lower) >= 1.
    pub active_fraction: f64,
    /// Fraction of each class's active set inherited from the previous
    /// class, planting shared parts between adjacent classes.
    pub overlap: f64,
    /// Signal gain applied to the planted target contribution.
    pub signal: f64,
    /// Noise scale; per-coordinate noise is `noise * g / sqrt(dim)`.
    pub noise: f64,
    /// Half-width of the per-example magnitude jitter on active capsules.
    pub profile_jitter: f64,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub seed: u64,
}

impl PlantedSpec {
    /// Active lower capsules per class, round(f * n_lower).
    pub fn active_count(&self) -> usize {
        (self.active_fraction * self.n_lower as f64).round() as usize
    }

    /// Shared capsules between adjacent classes, round(overlap * m).
    pub fn overlap_count(&self) -> usize {
        (self.overlap * self.active_count() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::Validation("classes must be at least 1".into()));
        }
        if self.n_lower == 0 || self.dim == 0 {
            return Err(Error::Validation("n_lower and dim must be at least 1".into()));
        }
        if !(self.active_fraction > 0.0 && self.active_fraction <= 1.0) {
            return Err(Error::Validation(format!(
                "active_fraction {} outside (0, 1]",
                self.active_fraction
            )));
        }
        if self.active_count() < 1 {
            return Err(Error::Validation(format!(
                "active_fraction {} of {} lower capsules rounds to zero active parts",
                self.active_fraction, self.n_lower
            )));
        }
        if self.active_count() > self.n_lower {
            return Err(Error::Validation("active set exceeds n_lower".into()));
        }
        if !(self.overlap >= 0.0 && self.overlap < 1.0) {
            return Err(Error::Validation(format!("overlap {} outside [0, 1)", self.overlap)));
        }
        if !(self.signal.is_finite() && self.signal > 0.0) {
            return Err(Error::Validation("signal must be positive".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Validation("noise must be non-negative".into()));
        }
        if !(self.profile_jitter >= 0.0 && self.profile_jitter < 1.0) {
            return Err(Error::Validation(format!(
                "profile_jitter {} outside [0, 1)",
                self.profile_jitter
            )));
        }
        if self.per_class_train == 0 {
            return Err(Error::Validation("per_class_train must be at least 1".into()));
        }
        Ok(())
    }

    /// Non-fatal diagnostics for configurations that are valid but likely
    /// not what the caller wants.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.classes > self.dim {
            out.push(format!(
                "classes ({}) exceed dim ({}); {} random unit targets cannot stay near-orthogonal",
                self.classes, self.dim, self.classes
            ));
        }
        if self.overlap > 0.0 && self.overlap_count() == 0 {
            out.push(format!(
                "overlap {} rounds to zero shared parts at {} active capsules",
                self.overlap,
                self.active_count()
            ));
        }
        if self.noise == 0.0 {
            out.push("noise is zero; all examples of a class are identical up to jitter".into());
        }
        if self.classes == 1 {
            out.push("single class; classification is trivial".into());
        }
        out
    }
}

/// Where a dataset came from; serialized into the file metadata block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Planted(PlantedSpec),
    External { description: String },
}

/// A collection of labeled prediction tensors with uniform dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    examples: Vec<PredictionTensor>,
    labels: Vec<usize>,
    n_lower: usize,
    n_upper: usize,
    dim: usize,
    provenance: Provenance,
}

impl LabeledDataset {
    /// Dims inferred from the first example; the dataset must be non-empty.
    pub fn new(
        examples: Vec<PredictionTensor>,
        labels: Vec<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Validation(
                "dataset needs at least one example (use with_dims for an empty set)".into(),
            ));
        }
        let dims = (
            examples[0].n_lower(),
            examples[0].n_upper(),
            examples[0].dim(),
        );
        LabeledDataset::with_dims(dims, examples, labels, provenance)
    }

    /// Explicit dims; permits an empty example list (e.g. a zero-size test
    /// split).
    pub fn with_dims(
        dims: (usize, usize, usize),
        examples: Vec<PredictionTensor>,
        labels: Vec<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        let (n_lower, n_upper, dim) = dims;
        if n_lower == 0 || n_upper == 0 || dim == 0 {
            return Err(Error::Dimension("dataset dims must all be at least 1".into()));
        }
        if examples.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} examples but {} labels",
                examples.len(),
                labels.len()
            )));
        }
        for (idx, ex) in examples.iter().enumerate() {
            if ex.n_lower() != n_lower || ex.n_upper() != n_upper || ex.dim() != dim {
                return Err(Error::Dimension(format!(
                    "example {idx} has shape ({}, {}, {}), expected ({n_lower}, {n_upper}, {dim})",
                    ex.n_lower(),
                    ex.n_upper(),
                    ex.dim()
                )));
            }
        }
        for (idx, &label) in labels.iter().enumerate() {
            if label >= n_upper {
                return Err(Error::Validation(format!(
                    "label {label} of example {idx} outside [0, {n_upper})"
                )));
            }
        }
        Ok(LabeledDataset {
            examples,
            labels,
            n_lower,
            n_upper,
            dim,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn n_lower(&self) -> usize {
        self.n_lower
    }

    /// Upper-layer width; for planted data this equals the class count.
    pub fn n_upper(&self) -> usize {
        self.n_upper
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn examples(&self) -> &[PredictionTensor] {
        &self.examples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn example(&self, idx: usize) -> &PredictionTensor {
        &self.examples[idx]
    }

    pub fn label(&self, idx: usize) -> usize {
        self.labels[idx]
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Examples per class over [0, n_upper).
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_upper];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

struct ClassProfile {
    /// Active lower-capsule indices, inherited block first.
    support: Vec<usize>,
    /// Indices not inherited from the previous class; the donor pool for
    /// the next class.
    own: Vec<usize>,
    /// Full-length magnitude vector, zero off the support.
    magnitudes: Vec<f64>,
}

/// Unit class targets, drawn isotropically then normalized.
fn draw_targets(spec: &PlantedSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(STREAM_TARGETS);
    let mut targets = Vec::with_capacity(spec.classes);
    for _ in 0..spec.classes {
        loop {
            let v: Vec<f64> = (0..spec.dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                targets.push(v.into_iter().map(|x| x / norm).collect());
                break;
            }
        }
    }
    targets
}

/// Class supports and magnitudes. Raw supports are sampled first for every
/// class, then the overlap chain is applied, then magnitudes are drawn, so
/// the draw order is independent of the overlap parameter.
fn draw_profiles(spec: &PlantedSpec) -> Vec<ClassProfile> {
    let m = spec.active_count();
    let n_ov = spec.overlap_count();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(STREAM_PROFILES);

    // Partial Fisher-Yates: m distinct indices per class.
    let mut raw: Vec<Vec<usize>> = Vec::with_capacity(spec.classes);
    for _ in 0..spec.classes {
        let mut pool: Vec<usize> = (0..spec.n_lower).collect();
        for t in 0..m {
            let j = rng.gen_range(t..spec.n_lower);
            pool.swap(t, j);
        }
        raw.push(pool[..m].to_vec());
    }

    // Overlap chain: class k inherits from the previous class's own (not
    // itself inherited) parts, cycling through that donor list if the
    // requested share exceeds it. Inheriting from the donors rather than
    // from the full support keeps the sharing pairwise: adjacent classes
    // share round(overlap * m) parts, non-adjacent only by sampling chance.
    let mut profiles: Vec<ClassProfile> = Vec::with_capacity(spec.classes);
    for (k, raw_support) in raw.iter().enumerate() {
        let (inherited, own) = if k == 0 || n_ov == 0 {
            (Vec::new(), raw_support.clone())
        } else {
            let donors = &profiles[k - 1].own;
            let mut inherited: Vec<usize> = Vec::with_capacity(n_ov);
            for t in 0..n_ov {
                let cand = donors[t % donors.len()];
                if !inherited.contains(&cand) {
                    inherited.push(cand);
                }
            }
            let own: Vec<usize> = raw_support
                .iter()
                .copied()
                .filter(|i| !inherited.contains(i))
                .take(m - inherited.len())
                .collect();
            (inherited, own)
        };
        let mut support = inherited;
        support.extend_from_slice(&own);
        profiles.push(ClassProfile {
            support,
            own,
            magnitudes: Vec::new(),
        });
    }

    // Magnitudes last, in ascending capsule order within each class.
    let mag = Uniform::new_inclusive(0.5, 1.0);
    for profile in profiles.iter_mut() {
        let mut sorted = profile.support.clone();
        sorted.sort_unstable();
        let mut a = vec![0.0; spec.n_lower];
        for &i in &sorted {
            a[i] = mag.sample(&mut rng);
        }
        profile.magnitudes = a;
    }
    profiles
}

fn one_example(
    spec: &PlantedSpec,
    targets: &[Vec<f64>],
    profiles: &[ClassProfile],
    split: Split,
    class: usize,
    index: usize,
) -> PredictionTensor {
    let (n_i, n_j, d_h) = (spec.n_lower, spec.classes, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(example_stream(split, class, index));

    let profile = &profiles[class];
    let mut active_sorted = profile.support.clone();
    active_sorted.sort_unstable();

    // Draw order per example: jitter for each active capsule (ascending
    // index), then noise for every coordinate in row-major order.
    let mut jitter = vec![0.0; n_i];
    if spec.profile_jitter > 0.0 {
        let dist = Uniform::new_inclusive(-spec.profile_jitter, spec.profile_jitter);
        for &i in &active_sorted {
            jitter[i] = dist.sample(&mut rng);
        }
    }

    let mut values = vec![0.0; n_i * n_j * d_h];
    if spec.noise > 0.0 {
        let scale = spec.noise / (d_h as f64).sqrt();
        for v in values.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v = scale * g;
        }
    }

    let target = &targets[class];
    for &i in &active_sorted {
        let gain = spec.signal * profile.magnitudes[i] * (1.0 + jitter[i]);
        let base = (i * n_j + class) * d_h;
        for d in 0..d_h {
            values[base + d] += gain * target[d];
        }
    }

    PredictionTensor::new(Array3::from_shape_vec((n_i, n_j, d_h), values).unwrap()).unwrap()
}

/// Generate the train and test splits. Pure function of the spec; repeated
/// calls are bitwise identical.
pub fn generate_planted(spec: &PlantedSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let targets = draw_targets(spec);
    let profiles = draw_profiles(spec);

    let build = |split: Split, per_class: usize| -> Result<Vec<(PredictionTensor, usize)>> {
        let mut out = Vec::with_capacity(per_class * spec.classes);
        for class in 0..spec.classes {
            for index in 0..per_class {
                out.push((
                    one_example(spec, &targets, &profiles, split, class, index),
                    class,
                ));
            }
        }
        Ok(out)
    };

    let train_pairs = build(Split::Train, spec.per_class_train)?;
    let (examples, labels): (Vec<_>, Vec<_>) = train_pairs.into_iter().unzip();
    let train = LabeledDataset::new(examples, labels, Provenance::Planted(spec.clone()))?;

    let test_pairs = build(Split::Test, spec.per_class_test)?;
    let (examples, labels): (Vec<_>, Vec<_>) = test_pairs.into_iter().unzip();
    let test = LabeledDataset::with_dims(
        (spec.n_lower, spec.classes, spec.dim),
        examples,
        labels,
        Provenance::Planted(spec.clone()),
    )?;
    Ok((train, test))
}

/// SHA-256 over dims, labels, and tensor bytes in index order. Independent
/// of in-memory layout; depends only on the canonical serialization order.
pub fn dataset_digest(d: &LabeledDataset) -> String {
    let mut hasher = Sha256::new();
    hasher.update((d.n_lower() as u32).to_le_bytes());
    hasher.update((d.n_upper() as u32).to_le_bytes());
    hasher.update((d.dim() as u32).to_le_bytes());
    hasher.update((d.len() as u64).to_le_bytes());
    for idx in 0..d.len() {
        hasher.update((d.label(idx) as u32).to_le_bytes());
        for &v in d.example(idx).values().as_slice().unwrap() {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}
