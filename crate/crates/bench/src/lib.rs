//! Shared fixtures for the routing benchmarks: a planted dataset and a
//! master built from its training split, at a given scale.

use capsroute::{
    build_master, generate_planted, BuilderConfig, LabeledDataset, MasterMatrix, PlantedSpec,
    RoutingConfig,
};

pub struct Fixture {
    pub test: LabeledDataset,
    pub master: MasterMatrix,
    pub routing: RoutingConfig,
}

/// Planted data plus a master at the requested scale. `per_class_train`
/// examples feed the builder; `per_class_test` end up in `test`.
pub fn fixture(
    classes: usize,
    n_lower: usize,
    dim: usize,
    per_class_train: usize,
    per_class_test: usize,
) -> Fixture {
    let spec = PlantedSpec {
        classes,
        n_lower,
        dim,
        active_fraction: 0.25,
        overlap: 0.25,
        signal: 1.0,
        noise: 0.15,
        profile_jitter: 0.2,
        per_class_train,
        per_class_test,
        seed: 1729,
    };
    let (train, test) = generate_planted(&spec).expect("spec is valid");
    let routing = RoutingConfig::default();
    let master =
        build_master(&train, &routing, &BuilderConfig::default()).expect("builder succeeds");
    Fixture {
        test,
        master,
        routing,
    }
}
