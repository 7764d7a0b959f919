use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use momfit_core::{
    generate_clusters, load_model_json, make_separable, normalize_to_unit_ball, save_csv, Cluster,
    ClusterSpec, Dataset, FitStatus,
};
use tempfile::TempDir;

fn momfit(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_momfit"));
    cmd.args(args)
        .env_remove("MOMFIT_THREADS")
        .env_remove("RUST_LOG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("momfit runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn cloud(count_each: usize, seed: u64) -> Dataset {
    let s = generate_clusters(&ClusterSpec::two_clusters(count_each, seed)).unwrap();
    normalize_to_unit_ball(&s).unwrap().0
}

fn write(dir: &TempDir, name: &str, s: &Dataset, labels: Option<&[u8]>) -> PathBuf {
    let path = dir.path().join(name);
    save_csv(&path, s, labels).unwrap();
    path
}

fn labelled(s1: &Dataset, s2: &Dataset) -> (Dataset, Vec<u8>) {
    let all = s1.concat(s2).unwrap();
    let mut labels = vec![1u8; s1.len()];
    labels.resize(s1.len() + s2.len(), 2);
    (all, labels)
}

/// Value printed after `prefix` on its own line.
fn field(out: &str, prefix: &str) -> f64 {
    let line = out
        .lines()
        .find(|l| l.starts_with(prefix))
        .unwrap_or_else(|| panic!("no {prefix:?} in {out}"));
    line[prefix.len()..].trim().parse().unwrap()
}

#[test]
fn cover_writes_model() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "pts.csv", &cloud(200, 1), None);
    let model = dir.path().join("model.json");
    let o = momfit(
        &[
            "cover",
            "--input",
            p(&input),
            "--degree",
            "2",
            "--order",
            "2",
            "--out",
            p(&model),
        ],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    for key in [
        "status: separated",
        "objective:",
        "outer iterations:",
        "support sizes:",
    ] {
        assert!(out.contains(key), "{out}");
    }
    let report = load_model_json(&model).unwrap();
    assert_eq!(report.status, FitStatus::Separated);
    assert_eq!(report.theta.degree(), 2);
    // printed with ten significant digits
    assert!((field(&out, "objective:") - report.objective).abs() <= 1e-9 * report.objective.abs());
}

#[test]
fn cover_rejects_odd_degree() {
    let o = momfit(&["cover", "--input", "pts.csv", "--degree", "3"], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("odd degree"), "{}", stderr(&o));
    let o = momfit(&["cover", "--input", "pts.csv", "--degree", "6"], &[]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(code(&momfit(&["cover"], &[])), 1);
    assert_eq!(code(&momfit(&["frobnicate"], &[])), 1);
    assert_eq!(code(&momfit(&["separate", "--input", "a.csv"], &[])), 1);
    let o = momfit(&["cover", "--input", "a.csv", "--mode", "simplex"], &[]);
    assert_eq!(code(&o), 1);
    let o = momfit(&["--help"], &[]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("cover"));
}

#[test]
fn per_point_mode_matches_moment_mode() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "pts.csv", &cloud(5000, 4), None);
    let run = |mode: &str| {
        let model = dir.path().join(format!("{mode}.json"));
        let o = momfit(
            &[
                "cover",
                "--input",
                p(&input),
                "--mode",
                mode,
                "--out",
                p(&model),
            ],
            &[],
        );
        assert_eq!(code(&o), 0, "{mode}: {}", stderr(&o));
        load_model_json(&model).unwrap()
    };
    let moment = run("moment");
    let direct = run("per-point");
    assert_eq!(direct.support_sizes, vec![10_000]);
    let rel = (moment.objective - direct.objective).abs() / direct.objective.abs().max(1.0);
    assert!(rel <= 1e-5, "{} vs {}", moment.objective, direct.objective);
}

#[test]
fn iteration_limit_exits_three() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "pts.csv", &cloud(500, 2), None);
    // an order-1 relaxation is not exact for ellipsoids
    let o = momfit(
        &[
            "cover",
            "--input",
            p(&input),
            "--order",
            "1",
            "--max-outer",
            "1",
        ],
        &[],
    );
    assert_eq!(code(&o), 3, "{}", stdout(&o));
    assert!(stdout(&o).contains("iteration limit"));
}

#[test]
fn separate_separable_pair_reports_margins() {
    let dir = TempDir::new().unwrap();
    let s = cloud(400, 6);
    let s1 = s.subset(&(0..400).collect::<Vec<_>>());
    let s2 = make_separable(&s1, &s.subset(&(400..800).collect::<Vec<_>>()), 2).unwrap();
    let (all, labels) = labelled(&s1, &s2);
    let input = write(&dir, "pair.csv", &all, Some(&labels));
    let o = momfit(&["separate", "--input", p(&input), "--labels"], &[]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert!(field(&out, "margin class 1 (min θ):") >= -1e-9, "{out}");
    assert!(field(&out, "margin class 2 (max θ):") <= 1e-9, "{out}");

    let f1 = write(&dir, "one.csv", &s1, None);
    let f2 = write(&dir, "two.csv", &s2, None);
    let o2 = momfit(&["separate", "--input", p(&f1), "--input2", p(&f2)], &[]);
    assert_eq!(code(&o2), 0);
    assert_eq!(field(&stdout(&o2), "objective:"), field(&out, "objective:"));
    let lp = momfit(
        &[
            "separate",
            "--input",
            p(&f1),
            "--input2",
            p(&f2),
            "--mode",
            "lp",
        ],
        &[],
    );
    assert_eq!(code(&lp), 0, "{}{}", stdout(&lp), stderr(&lp));
}

#[test]
fn collinear_triple_is_infeasible() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("tri.csv");
    std::fs::write(&input, "x,y,class\n0,0,1\n2,0,1\n1,0,2\n").unwrap();
    let o = momfit(&["separate", "--input", p(&input), "--labels"], &[]);
    assert_eq!(code(&o), 2, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("infeasible"));
}

/// Two class-1 clusters with a class-2 cluster on the segment between them.
fn three_clusters() -> (Dataset, Vec<u8>) {
    let c = |x: f64, count| Cluster {
        mean: vec![x, 0.0],
        covariance: vec![vec![0.0025, 0.0], vec![0.0, 0.0025]],
        count,
    };
    let spec = ClusterSpec {
        n: 2,
        clusters: vec![c(-0.6, 100), c(0.6, 100), c(0.0, 100)],
        seed: 3,
    };
    let s = generate_clusters(&spec).unwrap();
    let mut labels = vec![1u8; 200];
    labels.resize(300, 2);
    (s, labels)
}

#[test]
fn quartic_separates_what_ellipses_cannot() {
    let dir = TempDir::new().unwrap();
    let (s, labels) = three_clusters();
    let input = write(&dir, "three.csv", &s, Some(&labels));
    let o2 = momfit(
        &[
            "separate",
            "--input",
            p(&input),
            "--labels",
            "--degree",
            "2",
        ],
        &[],
    );
    assert_eq!(code(&o2), 2, "{}", stdout(&o2));
    let o4 = momfit(
        &[
            "separate",
            "--input",
            p(&input),
            "--labels",
            "--degree",
            "4",
        ],
        &[],
    );
    assert_eq!(code(&o4), 0, "{}{}", stdout(&o4), stderr(&o4));
}

#[test]
fn perturbation_flags() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "pts.csv", &cloud(100, 3), None);
    let run = |seed: &str| {
        let model = dir.path().join(format!("m{seed}.json"));
        let o = momfit(
            &[
                "cover",
                "--input",
                p(&input),
                "--epsilon",
                "1e-4",
                "--seed",
                seed,
                "--out",
                p(&model),
            ],
            &[],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(&model).unwrap()
    };
    assert_eq!(run("5"), run("5"));
    assert_ne!(run("5"), run("6"));
    let o = momfit(&["cover", "--input", p(&input), "--epsilon", "-1"], &[]);
    assert_eq!(code(&o), 1);
}

const SPEC: &str = r#"
n = 2
seed = 7

[[clusters]]
mean = [-0.4, -0.4]
covariance = [[0.0225, 0.0], [0.0, 0.0225]]
count = 300

[[clusters]]
mean = [0.4, 0.4]
covariance = [[0.0225, 0.0], [0.0, 0.0225]]
count = 200
"#;

#[test]
fn gen_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, SPEC).unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["gen", "--spec", p(&spec), "--out", p(&out)];
        args.extend_from_slice(extra);
        let o = momfit(&args, &[]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv", &[]);
    assert_eq!(a, run("b.csv", &[]));
    assert_eq!(a, run("c.csv", &["--seed", "7"]));
    assert_ne!(a, run("d.csv", &["--seed", "8"]));
    let text = String::from_utf8(run("e.csv", &["--labels", "--normalize"])).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 500);
    assert!(rows[299].ends_with(",1") && rows[300].ends_with(",2"));
}

#[test]
fn gen_rejects_bad_specs() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.toml");
    let out = dir.path().join("out.csv");
    std::fs::write(&spec, SPEC.replace("0.0225, 0.0]", "0.0225, 1.0]")).unwrap();
    let o = momfit(&["gen", "--spec", p(&spec), "--out", p(&out)], &[]);
    assert_eq!(code(&o), 1);
    std::fs::write(&spec, SPEC.replace("seed = 7", "seed = 7\ncolour = 1")).unwrap();
    let o = momfit(&["gen", "--spec", p(&spec), "--out", p(&out)], &[]);
    assert_eq!(code(&o), 1);
}

#[test]
fn cover_then_plot() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "pts.csv", &cloud(150, 8), None);
    let model = dir.path().join("m.json");
    let svg = dir.path().join("fit.svg");
    let o = momfit(
        &[
            "cover",
            "--input",
            p(&input),
            "--out",
            p(&model),
            "--svg",
            p(&svg),
        ],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first = std::fs::read_to_string(&svg).unwrap();
    assert!(first.starts_with("<svg"));
    assert!(first.contains(r#"class="level-set""#));
    assert_eq!(first.matches("<circle").count(), 300);

    let again = dir.path().join("again.svg");
    let o = momfit(
        &[
            "plot",
            "--model",
            p(&model),
            "--input",
            p(&input),
            "--svg",
            p(&again),
        ],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&again).unwrap(), first);
}

#[test]
fn plot_rejects_three_dimensions() {
    let dir = TempDir::new().unwrap();
    let three = Dataset::from_points(&[
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
    ])
    .unwrap();
    let input = write(&dir, "three.csv", &three, None);
    let model = dir.path().join("m.json");
    let o = momfit(&["cover", "--input", p(&input), "--out", p(&model)], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = dir.path().join("x.svg");
    let o = momfit(
        &[
            "plot",
            "--model",
            p(&model),
            "--input",
            p(&input),
            "--svg",
            p(&svg),
        ],
        &[],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("2-D only"), "{}", stderr(&o));
    assert!(!svg.exists());
    let o = momfit(&["cover", "--input", p(&input), "--svg", p(&svg)], &[]);
    assert_eq!(code(&o), 1);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "pts.csv", &cloud(3000, 5), None);
    let run = |threads: &str| {
        let model = dir.path().join(format!("t{threads}.json"));
        let o = momfit(
            &["cover", "--input", p(&input), "--out", p(&model)],
            &[("MOMFIT_THREADS", threads)],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(model).unwrap()
    };
    assert_eq!(run("1"), run("4"));
    let o = momfit(
        &["cover", "--input", p(&input)],
        &[("MOMFIT_THREADS", "many")],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("MOMFIT_THREADS"));
}

#[test]
fn solver_config_file() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "pts.csv", &cloud(200, 9), None);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "max_outer = 20\n\n[solver]\ngap_tol = 1e-9\n").unwrap();
    let o = momfit(
        &["cover", "--input", p(&input), "--solver-config", p(&cfg)],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    std::fs::write(&cfg, "[solver]\nstep_size = 2\n").unwrap();
    let o = momfit(
        &["cover", "--input", p(&input), "--solver-config", p(&cfg)],
        &[],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("step_size"), "{}", stderr(&o));
}

#[test]
fn input_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.csv");
    let o = momfit(&["cover", "--input", p(&missing)], &[]);
    assert_eq!(code(&o), 1);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2\n3,4\n5,x\n").unwrap();
    let o = momfit(&["cover", "--input", p(&bad)], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    let one_class = write(&dir, "one.csv", &cloud(10, 1), Some(&[1; 20]));
    let o = momfit(&["separate", "--input", p(&one_class), "--labels"], &[]);
    assert_eq!(code(&o), 1);
}

#[test]
fn closed_stdout_is_not_a_crash() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "pts.csv", &cloud(5000, 2), None);
    let mut child = Command::new(env!("CARGO_BIN_EXE_momfit"))
        .args(["cover", "--input", p(&input)])
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    // close the read end before the fit prints anything
    drop(child.stdout.take());
    let o = child.wait_with_output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!stderr(&o).contains("panicked"), "{}", stderr(&o));
}
