//! Timing harness for the dynamic-vs-fast comparison.
//!
//! Latency is measured single-threaded: one warm-up pass (excluded, also
//! used to fix the reference classifications), then `repeats` timed
//! passes whose statistics are medianed. Timing never alters outputs;
//! both paths are pure. A separate parallel pass reports throughput,
//! which is informational only since scheduler noise makes it unfit for
//! gating.
//!
//! The analytic multiply-add model counts the weighted sum and the
//! agreement update, each N_i * N_j * d_h multiply-adds per iteration;
//! squash and normalization are O(N_j * d_h) and O(N_i * N_j) and fall
//! out of the leading term. Dynamic routing therefore costs
//! 2 r N_i N_j d_h multiply-adds per example against the fast path's
//! single weighted sum, a machine-independent ratio of 2r.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::master::MasterMatrix;
use crate::routing::{classify, dynamic_route, fast_route, RoutingConfig};
use crate::synth::LabeledDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoutingMode {
    Dynamic,
    Fast,
}

impl std::fmt::Display for RoutingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RoutingMode::Dynamic => write!(f, "dynamic"),
            RoutingMode::Fast => write!(f, "fast"),
        }
    }
}

impl std::str::FromStr for RoutingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dynamic" => Ok(RoutingMode::Dynamic),
            "fast" => Ok(RoutingMode::Fast),
            other => Err(Error::Validation(format!(
                "unknown mode '{other}' (expected dynamic or fast)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub mode: RoutingMode,
    pub examples: usize,
    pub iterations: usize,
    pub wall_time_total_s: f64,
    pub per_example_mean_us: f64,
    pub per_example_p50_us: f64,
    pub per_example_p95_us: f64,
    pub accuracy: f64,
    /// Fraction of examples where fast and dynamic argmax classes match;
    /// identical in both reports of a pair.
    pub agreement_rate: f64,
    /// Only on Fast reports: median dynamic wall time over median fast
    /// wall time.
    pub speedup_vs_dynamic: Option<f64>,
    pub multiply_adds_per_example: u64,
    /// Examples per second under the parallel mapping; informational.
    pub parallel_throughput_eps: f64,
}

pub fn dynamic_multiply_adds(r: usize, n_lower: usize, n_upper: usize, dim: usize) -> u64 {
    2 * r as u64 * n_lower as u64 * n_upper as u64 * dim as u64
}

pub fn fast_multiply_adds(n_lower: usize, n_upper: usize, dim: usize) -> u64 {
    n_lower as u64 * n_upper as u64 * dim as u64
}

/// Machine-independent multiply-add ratio of dynamic over fast routing.
pub fn analytic_flop_ratio(r: usize) -> u64 {
    2 * r as u64
}

/// Nearest-rank percentile on a sorted slice.
fn percentile(sorted: &[f64], pct: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = (pct / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

struct TimedPass {
    wall_s: f64,
    mean_us: f64,
    p50_us: f64,
    p95_us: f64,
}

/// Times `op` once per example, single-threaded.
fn timed_pass(dataset: &LabeledDataset, mut op: impl FnMut(usize) -> usize) -> (TimedPass, Vec<usize>) {
    let n = dataset.len();
    let mut durations_us = Vec::with_capacity(n);
    let mut predictions = Vec::with_capacity(n);
    let pass_start = Instant::now();
    for idx in 0..n {
        let start = Instant::now();
        let predicted = op(idx);
        durations_us.push(start.elapsed().as_secs_f64() * 1e6);
        predictions.push(predicted);
    }
    let wall_s = pass_start.elapsed().as_secs_f64();
    let mean_us = durations_us.iter().sum::<f64>() / n as f64;
    durations_us.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        TimedPass {
            wall_s,
            mean_us,
            p50_us: percentile(&durations_us, 50.0),
            p95_us: percentile(&durations_us, 95.0),
        },
        predictions,
    )
}

fn median_stats(passes: &[TimedPass]) -> TimedPass {
    let mut walls: Vec<f64> = passes.iter().map(|p| p.wall_s).collect();
    let mut means: Vec<f64> = passes.iter().map(|p| p.mean_us).collect();
    let mut p50s: Vec<f64> = passes.iter().map(|p| p.p50_us).collect();
    let mut p95s: Vec<f64> = passes.iter().map(|p| p.p95_us).collect();
    TimedPass {
        wall_s: median(&mut walls),
        mean_us: median(&mut means),
        p50_us: median(&mut p50s),
        p95_us: median(&mut p95s),
    }
}

/// Times both modes over the same dataset and returns the (dynamic, fast)
/// report pair.
pub fn run_benchmark(
    dataset: &LabeledDataset,
    master: &MasterMatrix,
    routing: &RoutingConfig,
    repeats: usize,
) -> Result<(BenchReport, BenchReport)> {
    routing.validate()?;
    if repeats < 3 {
        return Err(Error::Validation(format!(
            "benchmark needs at least 3 repeats, got {repeats}"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Validation("benchmark dataset is empty".into()));
    }
    if master.n_lower() != dataset.n_lower() || master.n_upper() != dataset.n_upper() {
        return Err(Error::Dimension(format!(
            "master is {}x{} but dataset examples are {}x{}",
            master.n_lower(),
            master.n_upper(),
            dataset.n_lower(),
            dataset.n_upper()
        )));
    }

    // Warm-up pass; its classifications are the reference for agreement
    // and accuracy.
    let dynamic_predictions: Vec<usize> = dataset
        .examples()
        .iter()
        .map(|e| Ok(classify(dynamic_route(e, routing)?.outputs())))
        .collect::<Result<_>>()?;
    let fast_predictions: Vec<usize> = dataset
        .examples()
        .iter()
        .map(|e| Ok(classify(&fast_route(e, master)?)))
        .collect::<Result<_>>()?;

    let n = dataset.len();
    let matches = dynamic_predictions
        .iter()
        .zip(&fast_predictions)
        .filter(|(a, b)| a == b)
        .count();
    let agreement_rate = matches as f64 / n as f64;
    let correct = |predictions: &[usize]| {
        predictions
            .iter()
            .zip(dataset.labels())
            .filter(|(p, l)| p == l)
            .count() as f64
            / n as f64
    };
    let dynamic_accuracy = correct(&dynamic_predictions);
    let fast_accuracy = correct(&fast_predictions);

    let mut dynamic_passes = Vec::with_capacity(repeats);
    let mut fast_passes = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let (pass, predictions) = timed_pass(dataset, |idx| {
            classify(dynamic_route(dataset.example(idx), routing).unwrap().outputs())
        });
        debug_assert_eq!(predictions, dynamic_predictions);
        dynamic_passes.push(pass);
        let (pass, predictions) = timed_pass(dataset, |idx| {
            classify(&fast_route(dataset.example(idx), master).unwrap())
        });
        debug_assert_eq!(predictions, fast_predictions);
        fast_passes.push(pass);
    }
    let dynamic_stats = median_stats(&dynamic_passes);
    let fast_stats = median_stats(&fast_passes);

    let throughput = |fast: bool| {
        let start = Instant::now();
        let predictions: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|idx| {
                let example = dataset.example(idx);
                if fast {
                    classify(&fast_route(example, master).unwrap())
                } else {
                    classify(dynamic_route(example, routing).unwrap().outputs())
                }
            })
            .collect();
        let elapsed = start.elapsed().as_secs_f64();
        debug_assert_eq!(
            predictions,
            if fast { fast_predictions.clone() } else { dynamic_predictions.clone() }
        );
        n as f64 / elapsed.max(f64::MIN_POSITIVE)
    };
    let dynamic_throughput = throughput(false);
    let fast_throughput = throughput(true);

    let r = routing.iterations;
    let (n_lower, n_upper, dim) = (dataset.n_lower(), dataset.n_upper(), dataset.dim());
    let dynamic_report = BenchReport {
        mode: RoutingMode::Dynamic,
        examples: n,
        iterations: r,
        wall_time_total_s: dynamic_stats.wall_s,
        per_example_mean_us: dynamic_stats.mean_us,
        per_example_p50_us: dynamic_stats.p50_us,
        per_example_p95_us: dynamic_stats.p95_us,
        accuracy: dynamic_accuracy,
        agreement_rate,
        speedup_vs_dynamic: None,
        multiply_adds_per_example: dynamic_multiply_adds(r, n_lower, n_upper, dim),
        parallel_throughput_eps: dynamic_throughput,
    };
    let fast_report = BenchReport {
        mode: RoutingMode::Fast,
        examples: n,
        iterations: r,
        wall_time_total_s: fast_stats.wall_s,
        per_example_mean_us: fast_stats.mean_us,
        per_example_p50_us: fast_stats.p50_us,
        per_example_p95_us: fast_stats.p95_us,
        accuracy: fast_accuracy,
        agreement_rate,
        speedup_vs_dynamic: Some(
            dynamic_stats.wall_s / fast_stats.wall_s.max(f64::MIN_POSITIVE),
        ),
        multiply_adds_per_example: fast_multiply_adds(n_lower, n_upper, dim),
        parallel_throughput_eps: fast_throughput,
    };
    Ok((dynamic_report, fast_report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::master::{build_master, BuilderConfig};
    use crate::synth::{generate_planted, PlantedSpec};

    fn noise_free() -> (LabeledDataset, MasterMatrix) {
        let spec = PlantedSpec {
            classes: 3,
            n_lower: 16,
            dim: 8,
            active_fraction: 0.25,
            overlap: 0.0,
            signal: 1.0,
            noise: 0.0,
            profile_jitter: 0.0,
            per_class_train: 10,
            per_class_test: 0,
            seed: 3,
        };
        let (train, _) = generate_planted(&spec).unwrap();
        let master =
            build_master(&train, &RoutingConfig::default(), &BuilderConfig::default()).unwrap();
        (train, master)
    }

    #[test]
    fn flop_model_reference_numbers() {
        assert_eq!(dynamic_multiply_adds(3, 1152, 10, 16), 1_105_920);
        assert_eq!(fast_multiply_adds(1152, 10, 16), 184_320);
        assert_eq!(analytic_flop_ratio(3), 6);
        assert_eq!(analytic_flop_ratio(1), 2);
        assert_eq!(
            dynamic_multiply_adds(3, 1152, 10, 16) / fast_multiply_adds(1152, 10, 16),
            6
        );
    }

    #[test]
    fn percentile_and_median_are_nearest_rank() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&sorted, 50.0), 2.0);
        assert_eq!(percentile(&sorted, 95.0), 4.0);
        assert_eq!(percentile(&[7.0], 50.0), 7.0);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn noise_free_agreement_is_total() {
        let (train, master) = noise_free();
        let (dynamic, fast) =
            run_benchmark(&train, &master, &RoutingConfig::default(), 3).unwrap();
        assert_eq!(dynamic.agreement_rate, 1.0);
        assert_eq!(fast.agreement_rate, 1.0);
        assert_eq!(dynamic.accuracy, 1.0);
        assert_eq!(fast.accuracy, 1.0);
        assert!(fast.speedup_vs_dynamic.unwrap() > 0.0);
        assert!(dynamic.wall_time_total_s > 0.0);
        assert_eq!(dynamic.multiply_adds_per_example, 6 * 16 * 3 * 8);
        assert_eq!(fast.multiply_adds_per_example, 16 * 3 * 8);
    }

    #[test]
    fn single_iteration_fast_is_no_slower() {
        let (train, master) = noise_free();
        let config = RoutingConfig {
            iterations: 1,
            ..RoutingConfig::default()
        };
        let (dynamic, fast) = run_benchmark(&train, &master, &config, 5).unwrap();
        // Fast does a strict subset of dynamic's r=1 work.
        assert!(
            fast.wall_time_total_s <= dynamic.wall_time_total_s,
            "fast {} vs dynamic {}",
            fast.wall_time_total_s,
            dynamic.wall_time_total_s
        );
    }

    #[test]
    fn preconditions_are_enforced() {
        let (train, master) = noise_free();
        let config = RoutingConfig::default();
        assert!(run_benchmark(&train, &master, &config, 2).is_err());

        let narrow = PlantedSpec {
            classes: 2,
            n_lower: 4,
            dim: 3,
            active_fraction: 0.5,
            overlap: 0.0,
            signal: 1.0,
            noise: 0.0,
            profile_jitter: 0.0,
            per_class_train: 2,
            per_class_test: 0,
            seed: 1,
        };
        let (other, _) = generate_planted(&narrow).unwrap();
        match run_benchmark(&other, &master, &config, 3) {
            Err(Error::Dimension(_)) => {}
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("dynamic".parse::<RoutingMode>().unwrap(), RoutingMode::Dynamic);
        assert_eq!("FAST".parse::<RoutingMode>().unwrap(), RoutingMode::Fast);
        assert!("both".parse::<RoutingMode>().is_err());
        assert_eq!(RoutingMode::Fast.to_string(), "fast");
    }
}
