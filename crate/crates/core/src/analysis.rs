//! Correlation-signature and tuning-curve analyses over routed
//! coefficients.
//!
//! The GT column of an example is the column of its own label in its
//! last-iteration coefficient matrix; all correlation analyses operate on
//! those columns. Zero-variance vectors correlate to 0 by convention ("no
//! signature"), since near-uniform coefficient columns legitimately occur
//! for Softmax-built masters.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::master::MasterMatrix;
use crate::routing::{CapsuleOutputs, CoefficientMatrix};

/// A labeled correlation matrix. `symmetric` records whether the producing
/// analysis guarantees symmetry (example-pair and class-pair analyses do;
/// master-vs-class does not).
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    values: Array2<f64>,
    symmetric: bool,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
}

impl CorrelationMatrix {
    fn new(
        values: Array2<f64>,
        symmetric: bool,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
    ) -> Self {
        debug_assert_eq!(values.nrows(), row_labels.len());
        debug_assert_eq!(values.ncols(), col_labels.len());
        CorrelationMatrix {
            values,
            symmetric,
            row_labels,
            col_labels,
        }
    }

    #[cfg(test)]
    pub(crate) fn for_tests(
        values: Array2<f64>,
        symmetric: bool,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
    ) -> Self {
        CorrelationMatrix::new(values, symmetric, row_labels, col_labels)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    /// Mean of the diagonal; square matrices only.
    pub fn diagonal_mean(&self) -> Result<f64> {
        self.require_square()?;
        let n = self.values.nrows();
        Ok((0..n).map(|i| self.values[[i, i]]).sum::<f64>() / n as f64)
    }

    /// Mean over all off-diagonal entries; square matrices only.
    pub fn off_diagonal_mean(&self) -> Result<f64> {
        self.require_square()?;
        let n = self.values.nrows();
        if n < 2 {
            return Err(Error::Validation(
                "off-diagonal mean needs at least a 2x2 matrix".into(),
            ));
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sum += self.values[[i, j]];
                }
            }
        }
        Ok(sum / (n * (n - 1)) as f64)
    }

    fn require_square(&self) -> Result<()> {
        if self.values.nrows() != self.values.ncols() {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}, not square",
                self.values.nrows(),
                self.values.ncols()
            )));
        }
        Ok(())
    }
}

/// Class-averaged output norms, one row per class over the upper capsules.
#[derive(Clone, Debug, PartialEq)]
pub struct TuningCurves {
    values: Array2<f64>,
    class_counts: Vec<usize>,
}

impl TuningCurves {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn classes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_upper(&self) -> usize {
        self.values.ncols()
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }
}

/// Overall accuracy plus per-class recall.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    pub overall: f64,
    pub per_class_recall: Vec<f64>,
    pub class_counts: Vec<usize>,
}

/// Standard Pearson coefficient. Either argument having zero variance
/// yields 0 rather than an error. The variance guard is relative to the
/// vector's own scale so exactly-constant vectors (including all-zero) are
/// caught without misclassifying genuinely small signals.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "pearson inputs have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Validation("pearson needs vectors of length >= 2".into()));
    }
    let nf = n as f64;
    let mean_x = x.iter().sum::<f64>() / nf;
    let mean_y = y.iter().sum::<f64>() / nf;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    let scale_x: f64 = x.iter().map(|v| v * v).sum();
    let scale_y: f64 = y.iter().map(|v| v * v).sum();
    let guard = f64::EPSILON * f64::EPSILON * nf;
    if var_x <= guard * scale_x.max(f64::MIN_POSITIVE) || var_y <= guard * scale_y.max(f64::MIN_POSITIVE) {
        return Ok(0.0);
    }
    Ok((cov / (var_x.sqrt() * var_y.sqrt())).clamp(-1.0, 1.0))
}

fn gt_column(coefficients: &CoefficientMatrix, label: usize) -> Result<Vec<f64>> {
    if label >= coefficients.n_upper() {
        return Err(Error::Validation(format!(
            "label {label} outside [0, {})",
            coefficients.n_upper()
        )));
    }
    Ok(coefficients.values().column(label).to_vec())
}

fn collect_gt_columns(
    coefficients: &[CoefficientMatrix],
    labels: &[usize],
) -> Result<Vec<Vec<f64>>> {
    if coefficients.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} coefficient matrices but {} labels",
            coefficients.len(),
            labels.len()
        )));
    }
    coefficients
        .iter()
        .zip(labels)
        .map(|(c, &l)| gt_column(c, l))
        .collect()
}

/// Example-by-example GT-column correlations over the first `first_m`
/// examples.
pub fn gt_correlation_matrix(
    coefficients: &[CoefficientMatrix],
    labels: &[usize],
    first_m: usize,
) -> Result<CorrelationMatrix> {
    if first_m < 2 {
        return Err(Error::Validation("need at least 2 examples to correlate".into()));
    }
    if first_m > coefficients.len() {
        return Err(Error::Validation(format!(
            "first_m {} exceeds {} examples",
            first_m,
            coefficients.len()
        )));
    }
    let columns = collect_gt_columns(&coefficients[..first_m], &labels[..first_m])?;
    let mut values = Array2::zeros((first_m, first_m));
    for a in 0..first_m {
        for b in a..first_m {
            let r = pearson(&columns[a], &columns[b])?;
            values[[a, b]] = r;
            values[[b, a]] = r;
        }
    }
    let labels_text: Vec<String> = (0..first_m)
        .map(|e| format!("ex{e}:class{}", labels[e]))
        .collect();
    Ok(CorrelationMatrix::new(
        values,
        true,
        labels_text.clone(),
        labels_text,
    ))
}

/// Class-pair mean GT-column correlations. Diagonal entries average over
/// distinct same-class pairs only, so every class needs at least two
/// examples.
pub fn class_mean_correlations(
    coefficients: &[CoefficientMatrix],
    labels: &[usize],
    classes: usize,
) -> Result<CorrelationMatrix> {
    let columns = collect_gt_columns(coefficients, labels)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (idx, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Validation(format!(
                "label {label} of example {idx} outside [0, {classes})"
            )));
        }
        members[label].push(idx);
    }
    for (k, m) in members.iter().enumerate() {
        if m.len() < 2 {
            return Err(Error::Validation(format!(
                "class {k} has {} examples; the diagonal needs at least 2",
                m.len()
            )));
        }
    }

    let mut values = Array2::zeros((classes, classes));
    for a in 0..classes {
        for b in a..classes {
            let mut sum = 0.0;
            let mut count = 0u64;
            if a == b {
                let m = &members[a];
                for (pos, &e) in m.iter().enumerate() {
                    for &o in &m[pos + 1..] {
                        sum += pearson(&columns[e], &columns[o])?;
                        count += 1;
                    }
                }
            } else {
                for &e in &members[a] {
                    for &o in &members[b] {
                        sum += pearson(&columns[e], &columns[o])?;
                        count += 1;
                    }
                }
            }
            let mean = sum / count as f64;
            values[[a, b]] = mean;
            values[[b, a]] = mean;
        }
    }
    let labels_text: Vec<String> = (0..classes).map(|k| format!("class{k}")).collect();
    Ok(CorrelationMatrix::new(
        values,
        true,
        labels_text.clone(),
        labels_text,
    ))
}

/// Master-column-vs-class correlations: entry (a, b) is the mean Pearson
/// between master column a and the GT columns of class-b examples. Not
/// symmetric.
pub fn master_class_correlations(
    master: &MasterMatrix,
    coefficients: &[CoefficientMatrix],
    labels: &[usize],
    classes: usize,
) -> Result<CorrelationMatrix> {
    if classes > master.n_upper() {
        return Err(Error::Dimension(format!(
            "{classes} classes exceed master width {}",
            master.n_upper()
        )));
    }
    let columns = collect_gt_columns(coefficients, labels)?;
    for (idx, c) in coefficients.iter().enumerate() {
        if c.n_lower() != master.n_lower() {
            return Err(Error::Dimension(format!(
                "example {idx} has {} lower capsules, master has {}",
                c.n_lower(),
                master.n_lower()
            )));
        }
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

    let mut values = Array2::zeros((classes, classes));
    for a in 0..classes {
        let master_col = master.values().column(a).to_vec();
        for (b, class_members) in members.iter().enumerate() {
            let mut sum = 0.0;
            for &e in class_members {
                sum += pearson(&master_col, &columns[e])?;
            }
            values[[a, b]] = sum / class_members.len() as f64;
        }
    }
    let row_labels: Vec<String> = (0..classes).map(|k| format!("master{k}")).collect();
    let col_labels: Vec<String> = (0..classes).map(|k| format!("class{k}")).collect();
    Ok(CorrelationMatrix::new(values, false, row_labels, col_labels))
}

/// Class-averaged output norms: entry (k, j) is the mean of ||v_j|| over
/// class-k examples.
pub fn tuning_curves(
    outputs: &[CapsuleOutputs],
    labels: &[usize],
    classes: usize,
) -> Result<TuningCurves> {
    if outputs.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} outputs but {} labels",
            outputs.len(),
            labels.len()
        )));
    }
    if outputs.is_empty() {
        return Err(Error::Validation("tuning curves need at least one example".into()));
    }
    let n_upper = outputs[0].n_upper();
    let mut values = Array2::zeros((classes, n_upper));
    let mut class_counts = vec![0usize; classes];
    for (idx, (v, &label)) in outputs.iter().zip(labels).enumerate() {
        if v.n_upper() != n_upper {
            return Err(Error::Dimension(format!(
                "output {idx} has {} rows, expected {n_upper}",
                v.n_upper()
            )));
        }
        if label >= classes {
            return Err(Error::Validation(format!(
                "label {label} of example {idx} outside [0, {classes})"
            )));
        }
        for (j, norm) in v.norms().into_iter().enumerate() {
            values[[label, j]] += norm;
        }
        class_counts[label] += 1;
    }
    if let Some(k) = class_counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(k));
    }
    for (k, &count) in class_counts.iter().enumerate() {
        for j in 0..n_upper {
            values[[k, j]] /= count as f64;
        }
    }
    Ok(TuningCurves {
        values,
        class_counts,
    })
}

/// Overall accuracy and per-class recall. Classes with no examples report
/// zero recall.
pub fn accuracy_report(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<AccuracyReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Validation("accuracy needs at least one example".into()));
    }
    let mut class_counts = vec![0usize; classes];
    let mut class_correct = vec![0usize; classes];
    let mut correct = 0usize;
    for (idx, (&p, &l)) in predictions.iter().zip(labels).enumerate() {
        if l >= classes {
            return Err(Error::Validation(format!(
                "label {l} of example {idx} outside [0, {classes})"
            )));
        }
        class_counts[l] += 1;
        if p == l {
            class_correct[l] += 1;
            correct += 1;
        }
    }
    let per_class_recall = class_counts
        .iter()
        .zip(&class_correct)
        .map(|(&n, &c)| if n == 0 { 0.0 } else { c as f64 / n as f64 })
        .collect();
    Ok(AccuracyReport {
        overall: correct as f64 / predictions.len() as f64,
        per_class_recall,
        class_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::master::{build_master, BuilderConfig};
    use crate::routing::{dynamic_route, CoefficientKind, RoutingConfig};
    use crate::synth::{generate_planted, PlantedSpec};
    use approx::assert_abs_diff_eq;

    #[test]
    fn pearson_reference_values() {
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0,
            epsilon = 1e-15
        );
        // cov = 3, sx = sqrt(2), sy = sqrt(14/3); r = 3/sqrt(28/3).
        let expect = 3.0 / (28.0f64 / 3.0).sqrt();
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap(),
            expect,
            epsilon = 1e-15
        );
        assert!((expect - 0.981_980_506).abs() < 1e-9);
    }

    #[test]
    fn pearson_zero_variance_returns_zero() {
        assert_eq!(pearson(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(pearson(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn pearson_affine_invariance() {
        let x = [0.3, -1.2, 4.5, 2.2, 0.0];
        let y = [1.0, 0.4, -0.2, 3.3, 2.1];
        let base = pearson(&x, &y).unwrap();
        let x2: Vec<f64> = x.iter().map(|v| 2.5 * v - 7.0).collect();
        assert_abs_diff_eq!(pearson(&x2, &y).unwrap(), base, epsilon = 1e-12);
    }

    #[test]
    fn pearson_rejects_mismatched_or_short_inputs() {
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    fn coeff(rows: usize, cols: usize, data: Vec<f64>) -> CoefficientMatrix {
        CoefficientMatrix::new(
            Array2::from_shape_vec((rows, cols), data).unwrap(),
            CoefficientKind::MaxMinNormalized,
        )
        .unwrap()
    }

    #[test]
    fn gt_matrix_diagonal_and_identical_pairs() {
        let a = coeff(3, 2, vec![0.1, 0.9, 0.5, 0.5, 0.8, 0.2]);
        let b = a.clone();
        let c = coeff(3, 2, vec![0.9, 0.1, 0.5, 0.5, 0.3, 0.7]);
        let m = gt_correlation_matrix(&[a, b, c], &[0, 0, 1], 3).unwrap();
        assert_abs_diff_eq!(m.values()[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.values()[[0, 1]], 1.0, epsilon = 1e-12);
        assert_eq!(m.values()[[1, 0]], m.values()[[0, 1]]);
        assert!(m.is_symmetric());
        assert_eq!(m.row_labels()[0], "ex0:class0");
        assert!(gt_correlation_matrix(&[], &[], 2).is_err());
    }

    #[test]
    fn class_means_exclude_self_pairs() {
        // Two identical examples per class: diagonal must be 1 from the
        // cross pair alone.
        let x = coeff(3, 2, vec![0.0, 1.0, 0.5, 0.5, 1.0, 0.0]);
        let y = coeff(3, 2, vec![1.0, 0.0, 0.4, 0.6, 0.0, 1.0]);
        let coeffs = vec![x.clone(), x, y.clone(), y];
        let labels = vec![0, 0, 1, 1];
        let m = class_mean_correlations(&coeffs, &labels, 2).unwrap();
        assert_abs_diff_eq!(m.values()[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.values()[[1, 1]], 1.0, epsilon = 1e-12);
        assert!(m.is_symmetric());

        let single = vec![coeff(3, 2, vec![0.0, 1.0, 0.5, 0.5, 1.0, 0.0])];
        assert!(class_mean_correlations(&single, &[0], 1).is_err());
    }

    fn routed_planted() -> (Vec<CoefficientMatrix>, Vec<usize>, MasterMatrix, usize) {
        let spec = PlantedSpec {
            classes: 3,
            n_lower: 12,
            dim: 6,
            active_fraction: 0.25,
            overlap: 0.0,
            signal: 1.0,
            noise: 0.1,
            profile_jitter: 0.2,
            per_class_train: 6,
            per_class_test: 2,
            seed: 5,
        };
        let (train, _) = generate_planted(&spec).unwrap();
        let routing = RoutingConfig::default();
        let coeffs: Vec<CoefficientMatrix> = train
            .examples()
            .iter()
            .map(|e| dynamic_route(e, &routing).unwrap().last_coefficients())
            .collect();
        let master = build_master(&train, &routing, &BuilderConfig::default()).unwrap();
        (coeffs, train.labels().to_vec(), master, spec.classes)
    }

    #[test]
    fn planted_signature_shows_up_in_class_means() {
        let (coeffs, labels, _, classes) = routed_planted();
        let m = class_mean_correlations(&coeffs, &labels, classes).unwrap();
        let diag = m.diagonal_mean().unwrap();
        let off = m.off_diagonal_mean().unwrap();
        assert!(
            diag > off,
            "diagonal {diag} should exceed off-diagonal {off}"
        );
        assert!(m.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn master_correlations_are_row_dominant_on_planted_data() {
        let (coeffs, labels, master, classes) = routed_planted();
        let m = master_class_correlations(&master, &coeffs, &labels, classes).unwrap();
        assert!(!m.is_symmetric());
        for a in 0..classes {
            for b in 0..classes {
                if a != b {
                    assert!(
                        m.values()[[a, a]] > m.values()[[a, b]],
                        "row {a}: diagonal {} <= entry ({a},{b}) {}",
                        m.values()[[a, a]],
                        m.values()[[a, b]]
                    );
                }
            }
        }
    }

    #[test]
    fn constant_master_column_gives_zero_row() {
        let (coeffs, labels, _, classes) = routed_planted();
        let n_lower = coeffs[0].n_lower();
        let values = Array2::from_elem((n_lower, classes), 0.5);
        let master = MasterMatrix::for_tests(values);
        let m = master_class_correlations(&master, &coeffs, &labels, classes).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tuning_single_example_row_equals_norms() {
        let v = CapsuleOutputs::new(
            Array2::from_shape_vec((2, 2), vec![0.3, 0.4, 0.0, 0.9]).unwrap(),
        )
        .unwrap();
        let t = tuning_curves(&[v.clone()], &[0], 1).unwrap();
        assert_abs_diff_eq!(t.values()[[0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(t.values()[[0, 1]], 0.9, epsilon = 1e-15);
        assert_eq!(t.class_counts(), &[1]);

        let zero = CapsuleOutputs::new(Array2::zeros((2, 2))).unwrap();
        let t0 = tuning_curves(&[zero], &[0], 1).unwrap();
        assert!(t0.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tuning_requires_every_class() {
        let v = CapsuleOutputs::new(Array2::zeros((2, 2))).unwrap();
        match tuning_curves(&[v], &[0], 2) {
            Err(Error::MissingClass(1)) => {}
            other => panic!("expected MissingClass(1), got {other:?}"),
        }
    }

    #[test]
    fn accuracy_reference_cases() {
        let r = accuracy_report(&[0, 1, 1, 0], &[0, 1, 0, 0], 2).unwrap();
        assert_abs_diff_eq!(r.overall, 0.75, epsilon = 1e-15);
        assert_eq!(r.class_counts, vec![3, 1]);
        assert_abs_diff_eq!(r.per_class_recall[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.per_class_recall[1], 1.0, epsilon = 1e-15);

        let perfect = accuracy_report(&[0, 1], &[0, 1], 2).unwrap();
        assert_eq!(perfect.overall, 1.0);
        let disjoint = accuracy_report(&[1, 1], &[0, 0], 2).unwrap();
        assert_eq!(disjoint.overall, 0.0);
        assert!(accuracy_report(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn gt_matrix_on_one_class_matches_class_mean_diagonal() {
        let (coeffs, labels, _, _) = routed_planted();
        let class0: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 0)
            .map(|(i, _)| i)
            .collect();
        let sub_coeffs: Vec<CoefficientMatrix> =
            class0.iter().map(|&i| coeffs[i].clone()).collect();
        let sub_labels = vec![0usize; sub_coeffs.len()];
        let m = gt_correlation_matrix(&sub_coeffs, &sub_labels, sub_coeffs.len()).unwrap();
        let cm = class_mean_correlations(&sub_coeffs, &sub_labels, 1).unwrap();
        // Mean of the off-diagonal entries of the example-level matrix is
        // the class-level diagonal entry.
        let n = sub_coeffs.len();
        let mut sum = 0.0;
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    sum += m.values()[[a, b]];
                }
            }
        }
        let mean = sum / (n * (n - 1)) as f64;
        assert_abs_diff_eq!(cm.values()[[0, 0]], mean, epsilon = 1e-12);
    }
}
