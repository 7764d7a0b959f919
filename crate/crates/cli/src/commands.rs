use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use momfit_core::fitting::{class_margins, fit_direct};
use momfit_core::{
    generate_clusters, load_csv, load_model_json, normalize_to_unit_ball, perturb_dataset,
    run_main_algorithm, save_csv, save_model_json, ClusterSpec, Dataset, FitReport, FitSettings,
    FitStatus, ObjectiveKind, SeparationInstance,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::plot::{render_svg, PlotInput};
use crate::{Command, CoverArgs, FitArgs, FitMode, GenArgs, PlotArgs, SeparateArgs};

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($t:tt)*) => {
        writeln!(std::io::stdout().lock(), $($t)*)?
    };
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_ITERATION_LIMIT: i32 = 3;

pub fn exit_code(status: FitStatus) -> i32 {
    match status {
        FitStatus::Separated => EXIT_OK,
        FitStatus::Infeasible => EXIT_INFEASIBLE,
        FitStatus::IterationLimit => EXIT_ITERATION_LIMIT,
    }
}

pub(crate) fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Cover(a) => cover(a),
        Command::Separate(a) => separate(a),
        Command::Gen(a) => generate(a),
        Command::Plot(a) => plot(a),
    }
}

fn read_points(path: &Path, labels: bool) -> Result<(Dataset, Dataset)> {
    let data = load_csv(path, labels)?;
    Ok(match data.labels {
        Some(_) => data.split(),
        None => {
            let n = data.points.dim();
            (data.points, Dataset::empty(n))
        }
    })
}

fn cover(a: CoverArgs) -> Result<i32> {
    let (s1, _) = read_points(&a.input, a.labels)?;
    let n = s1.dim();
    fit_and_report(s1, Dataset::empty(n), &a.fit, false)
}

fn separate(a: SeparateArgs) -> Result<i32> {
    let (s1, s2) = match &a.input2 {
        Some(p2) => (read_points(&a.input, false)?.0, read_points(p2, false)?.0),
        None => read_points(&a.input, true)?,
    };
    if s2.is_empty() {
        bail!("the second class is empty; use `cover` for a covering fit");
    }
    if s1.dim() != s2.dim() {
        bail!(
            "class 1 has dimension {} but class 2 has {}",
            s1.dim(),
            s2.dim()
        );
    }
    fit_and_report(s1, s2, &a.fit, true)
}

fn settings(fit: &FitArgs) -> Result<FitSettings> {
    let mut s = match &fit.solver_config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => FitSettings::default(),
    };
    if let Some(k) = fit.max_outer {
        s.max_outer = k;
    }
    s.accumulate |= fit.accumulate_support;
    Ok(s)
}

fn jitter(s: &Dataset, epsilon: f64, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    if s.is_empty() {
        return Ok(s.clone());
    }
    Ok(perturb_dataset(s, s.len(), epsilon, rng)?)
}

fn fit_and_report(s1: Dataset, s2: Dataset, fit: &FitArgs, margins: bool) -> Result<i32> {
    if fit.svg.is_some() && s1.dim() != 2 {
        bail!(
            "plotting is 2-D only, but the data has dimension {}",
            s1.dim()
        );
    }
    let settings = settings(fit)?;
    let (s1, s2) = match fit.epsilon {
        Some(eps) => {
            let mut rng = ChaCha8Rng::seed_from_u64(fit.seed);
            (jitter(&s1, eps, &mut rng)?, jitter(&s2, eps, &mut rng)?)
        }
        None => (s1, s2),
    };
    let order = fit.order.unwrap_or(fit.degree);
    let mut inst = SeparationInstance::new(s1, s2, fit.degree, order)?;
    let report = match fit.mode {
        FitMode::Moment => run_main_algorithm(&inst, &settings)?,
        FitMode::PerPoint => fit_direct(&inst, &settings.solver)?,
        FitMode::Lp => {
            inst.objective = ObjectiveKind::L1;
            inst.validate()?;
            fit_direct(&inst, &settings.solver)?
        }
    };
    print_report(&report)?;
    if margins {
        print_margins(&inst, &report)?;
    }
    if let Some(out) = &fit.out {
        save_model_json(&report, out)?;
        out!("model: {}", out.display());
    }
    if let Some(svg) = &fit.svg {
        write_svg(svg, &inst.s1, &inst.s2, &report)?;
    }
    Ok(exit_code(report.status))
}

fn print_report(r: &FitReport) -> Result<()> {
    match r.status {
        FitStatus::Separated => out!("status: separated"),
        FitStatus::Infeasible => {
            let margin = r
                .feasibility_slack
                .map_or(String::new(), |s| format!(" (best margin {s:.3e})"));
            out!(
                "status: infeasible, no polynomial of degree {} separates the classes{margin}",
                r.theta.degree()
            )
        }
        FitStatus::IterationLimit => {
            out!("status: iteration limit, the support selection stopped before separating")
        }
    }
    out!("objective: {:.10e}", r.objective);
    out!("outer iterations: {}", r.outer_iterations);
    let sizes: Vec<String> = r.support_sizes.iter().map(|k| k.to_string()).collect();
    out!("support sizes: {}", sizes.join(" "));
    Ok(())
}

fn print_margins(inst: &SeparationInstance, r: &FitReport) -> Result<()> {
    let (m1, m2) = class_margins(&inst.s1, &inst.s2, &r.theta)?;
    let show = |m: Option<f64>| m.map_or("n/a".to_string(), |v| format!("{v:.6e}"));
    out!("margin class 1 (min θ): {}", show(m1));
    out!("margin class 2 (max θ): {}", show(m2));
    Ok(())
}

fn write_svg(path: &Path, s1: &Dataset, s2: &Dataset, r: &FitReport) -> Result<()> {
    let svg = render_svg(&PlotInput {
        s1,
        s2,
        theta: &r.theta,
    })?;
    std::fs::write(path, svg).with_context(|| format!("writing {}", path.display()))?;
    out!("plot: {}", path.display());
    Ok(())
}

fn generate(a: GenArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&a.spec)
        .with_context(|| format!("reading {}", a.spec.display()))?;
    let mut spec = ClusterSpec::from_toml_str(&text)
        .with_context(|| format!("parsing {}", a.spec.display()))?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let mut s = generate_clusters(&spec)?;
    if a.normalize {
        s = normalize_to_unit_ball(&s)?.0;
    }
    let labels = if a.labels {
        if spec.clusters.len() > 2 {
            bail!(
                "--labels needs at most two clusters, the cluster file has {}",
                spec.clusters.len()
            );
        }
        let mut v = Vec::with_capacity(s.len());
        for (k, c) in spec.clusters.iter().enumerate() {
            v.extend(std::iter::repeat_n(k as u8 + 1, c.count));
        }
        Some(v)
    } else {
        None
    };
    save_csv(&a.out, &s, labels.as_deref())?;
    out!("wrote {} points to {}", s.len(), a.out.display());
    Ok(EXIT_OK)
}

fn plot(a: PlotArgs) -> Result<i32> {
    let report = load_model_json(&a.model)?;
    let (s1, s2) = match &a.input2 {
        Some(p2) => (read_points(&a.input, false)?.0, read_points(p2, false)?.0),
        None => read_points(&a.input, a.labels)?,
    };
    if s1.dim() != 2 || report.theta.nvars() != 2 {
        bail!(
            "plotting is 2-D only, but the data has dimension {} and the model {}",
            s1.dim(),
            report.theta.nvars()
        );
    }
    write_svg(&a.svg, &s1, &s2, &report)?;
    Ok(EXIT_OK)
}
