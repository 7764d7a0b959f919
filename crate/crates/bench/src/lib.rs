//! Shared fixtures for the criterion benches.

use momfit_core::{
    generate_clusters, make_separable, normalize_to_unit_ball, ClusterSpec, Dataset,
    SeparationInstance,
};

/// Two normalized Gaussian clusters of `count_each` points each.
pub fn clusters(count_each: usize, seed: u64) -> (Dataset, Dataset) {
    let s = generate_clusters(&ClusterSpec::two_clusters(count_each, seed)).expect("valid spec");
    let (s, _) = normalize_to_unit_ball(&s).expect("nonempty");
    let a = s.subset(&(0..count_each).collect::<Vec<_>>());
    let b = s.subset(&(count_each..2 * count_each).collect::<Vec<_>>());
    (a, b)
}

/// Covering instance over both clusters.
pub fn covering(count_each: usize, degree: usize) -> SeparationInstance {
    let (a, b) = clusters(count_each, 1);
    SeparationInstance::covering(a.concat(&b).expect("same dimension"), degree, degree)
        .expect("valid instance")
}

/// Separable instance: the second cluster with points inside the covering of the
/// first removed.
pub fn separation(count_each: usize) -> SeparationInstance {
    let (a, b) = clusters(count_each, 2);
    let b = make_separable(&a, &b, 2).expect("covering fit");
    SeparationInstance::new(a, b, 2, 2).expect("valid instance")
}
