use momfit_core::fitting::{class_margins, fit_direct};
use momfit_core::{
    generate_clusters, make_separable, normalize_to_unit_ball, run_main_algorithm, Cluster,
    ClusterSpec, Dataset, FitReport, FitSettings, FitStatus, SeparationInstance, Settings,
};
use proptest::prelude::*;

fn clusters(count_each: usize, seed: u64) -> (Dataset, Dataset) {
    let s = generate_clusters(&ClusterSpec::two_clusters(count_each, seed)).unwrap();
    let (s, _) = normalize_to_unit_ball(&s).unwrap();
    (
        s.subset(&(0..count_each).collect::<Vec<_>>()),
        s.subset(&(count_each..2 * count_each).collect::<Vec<_>>()),
    )
}

fn bits(r: &FitReport) -> Vec<u64> {
    r.theta.coeffs().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn results_do_not_depend_on_the_thread_count() {
    let (a, b) = clusters(2000, 4);
    let b = make_separable(&a, &b, 2).unwrap();
    let inst = SeparationInstance::new(a, b, 2, 2).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_main_algorithm(&inst, &FitSettings::default()).unwrap())
    };
    let one = run(1);
    assert_eq!(one.status, FitStatus::Separated);
    for threads in [2, 5] {
        let other = run(threads);
        assert_eq!(bits(&one), bits(&other));
        assert_eq!(one.support_sizes, other.support_sizes);
    }
}

#[test]
fn accumulated_supports_reach_the_same_optimum() {
    let (a, b) = clusters(3000, 5);
    let inst = SeparationInstance::covering(a.concat(&b).unwrap(), 2, 2).unwrap();
    let plain = run_main_algorithm(&inst, &FitSettings::default()).unwrap();
    let acc = run_main_algorithm(
        &inst,
        &FitSettings {
            accumulate: true,
            ..FitSettings::default()
        },
    )
    .unwrap();
    assert_eq!(plain.status, FitStatus::Separated);
    assert_eq!(acc.status, FitStatus::Separated);
    let rel = (plain.objective - acc.objective).abs() / plain.objective.abs();
    assert!(rel < 1e-6, "{} vs {}", plain.objective, acc.objective);
}

#[test]
fn quartic_separates_a_cluster_between_two_others() {
    let c = |x: f64| Cluster {
        mean: vec![x, 0.0],
        covariance: vec![vec![0.0025, 0.0], vec![0.0, 0.0025]],
        count: 100,
    };
    let s = generate_clusters(&ClusterSpec {
        n: 2,
        clusters: vec![c(-0.6), c(0.6), c(0.0)],
        seed: 3,
    })
    .unwrap();
    let s1 = s.subset(&(0..200).collect::<Vec<_>>());
    let s2 = s.subset(&(200..300).collect::<Vec<_>>());

    let quad = SeparationInstance::new(s1.clone(), s2.clone(), 2, 2).unwrap();
    let rep = run_main_algorithm(&quad, &FitSettings::default()).unwrap();
    assert_eq!(rep.status, FitStatus::Infeasible);
    assert!(rep.feasibility_slack.unwrap().abs() < 1e-6);

    let quartic = SeparationInstance::new(s1, s2, 4, 4).unwrap();
    let rep = run_main_algorithm(&quartic, &FitSettings::default()).unwrap();
    assert_eq!(rep.status, FitStatus::Separated);
    let (m1, m2) = class_margins(&quartic.s1, &quartic.s2, &rep.theta).unwrap();
    assert!(m1.unwrap() >= -1e-9 && m2.unwrap() <= 1e-9);
    let direct = fit_direct(&quartic, &Settings::default()).unwrap();
    assert!((rep.objective - direct.objective).abs() <= 1e-5 * direct.objective.abs());
}

#[test]
fn fitted_model_survives_json() {
    let (a, _) = clusters(500, 6);
    let inst = SeparationInstance::covering(a, 4, 4).unwrap();
    let rep = run_main_algorithm(&inst, &FitSettings::default()).unwrap();
    let back = FitReport::from_json(&rep.to_json().unwrap()).unwrap();
    assert_eq!(back, rep);
    for x in inst.s1.iter().take(50) {
        assert_eq!(back.theta.eval(x).unwrap(), rep.theta.eval(x).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn covering_matches_the_per_point_fit(seed in 0u64..1000, len in 50usize..400) {
        let (a, b) = clusters(len, seed);
        let inst = SeparationInstance::covering(a.concat(&b).unwrap(), 2, 2).unwrap();
        let rep = run_main_algorithm(&inst, &FitSettings::default()).unwrap();
        prop_assert_eq!(rep.status, FitStatus::Separated);
        let (m1, _) = class_margins(&inst.s1, &inst.s2, &rep.theta).unwrap();
        prop_assert!(m1.unwrap() >= -1e-9);
        let direct = fit_direct(&inst, &Settings::default()).unwrap();
        let rel = (rep.objective - direct.objective).abs() / direct.objective.abs().max(1.0);
        prop_assert!(rel <= 1e-5, "{} vs {}", rep.objective, direct.objective);
    }
}
