use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use cpsel::{
    fpr_experiment, multi_cp_report, power_estimate, pvalue_histogram, run_selective_test,
    AggregationSpec, Error, ExperimentGrid, GridCell, MultiCpReport, PvalueKind,
    TruncationInterval, WindowConfig,
};

use crate::args::{
    Command, DetectArgs, Format, KindChoice, PowerCurveArgs, PvalueHistArgs, SimulateFprArgs,
};
use crate::covariance;

pub fn run(cmd: Command) -> cpsel::Result<()> {
    match cmd {
        Command::Detect(a) => detect(a),
        Command::SimulateFpr(a) => simulate_fpr(a),
        Command::PvalueHist(a) => pvalue_hist(a),
        Command::PowerCurve(a) => power_curve(a),
    }
}

const DEGENERATE_WARNING: &str =
    "detected statistic is numerically zero; the selective p-value is uninformative";

/// Single-change report: detection, truncation interval, and both p-values.
#[derive(Serialize)]
struct SingleReport<'a> {
    input: String,
    n_dims: usize,
    t_len: usize,
    aggregation: &'a AggregationSpec,
    t_hat: usize,
    k_hat: usize,
    theta: f64,
    degenerate: bool,
    selected_dimensions: Vec<usize>,
    interval: &'a TruncationInterval,
    p_selective: f64,
    p_naive: f64,
    low_precision: bool,
    warning: Option<&'static str>,
}

/// Windowed report: every window-local estimate with its own test.
#[derive(Serialize)]
struct WindowedReport<'a> {
    input: String,
    n_dims: usize,
    t_len: usize,
    aggregation: &'a AggregationSpec,
    #[serde(flatten)]
    report: &'a MultiCpReport,
}

fn detect(a: DetectArgs) -> cpsel::Result<()> {
    require_format(a.format, Format::Json, "detect")?;
    let y = cpsel::io::read_sequence_file(&a.input)?;
    let spec = a.agg.to_spec()?;
    spec.validate(y.n_dims())?;
    let cov = covariance::resolve(&a.cov, y.n_dims(), y.t_len())?;
    let text = match a.window_h {
        Some(h) => {
            let cfg = WindowConfig::new(h, a.bonferroni)?;
            let report = multi_cp_report(&y, &spec, &cov, &cfg)?;
            to_json(&WindowedReport {
                input: a.input.display().to_string(),
                n_dims: y.n_dims(),
                t_len: y.t_len(),
                aggregation: &spec,
                report: &report,
            })?
        }
        None => {
            let test = run_selective_test(&y, &spec, &cov)?;
            let d = test.detection();
            if d.degenerate() {
                eprintln!("warning: {DEGENERATE_WARNING}");
            }
            to_json(&SingleReport {
                input: a.input.display().to_string(),
                n_dims: y.n_dims(),
                t_len: y.t_len(),
                aggregation: &spec,
                t_hat: test.t_hat(),
                k_hat: test.k_hat(),
                theta: d.theta(),
                degenerate: d.degenerate(),
                selected_dimensions: d.selected_dimensions(),
                interval: test.interval(),
                p_selective: test.p_selective(),
                p_naive: test.p_naive(),
                low_precision: test.low_precision(),
                warning: d.degenerate().then_some(DEGENERATE_WARNING),
            })?
        }
    };
    write_output(a.out.as_deref(), &text)
}

fn simulate_fpr(a: SimulateFprArgs) -> cpsel::Result<()> {
    require_format(a.format, Format::Csv, "simulate-fpr")?;
    let raw = fs::read_to_string(&a.grid)?;
    let mut grid: ExperimentGrid = serde_json::from_str(&raw)
        .map_err(|e| Error::Parse(format!("{}: {e}", a.grid.display())))?;
    if let Some(seed) = a.seed {
        grid.seed = seed;
    }
    grid.validate()?;
    let table = fpr_experiment(&grid)?;
    for r in table.rows() {
        let k = r.k.map_or_else(String::new, |k| format!("({k})"));
        eprintln!(
            "xi={} sigma={} {}{}: selective {:.4} (se {:.4}), naive {:.4}, {} reps",
            r.xi, r.sigma, r.spec, k, r.fpr_selective, r.stderr, r.fpr_naive, r.replicates
        );
    }
    match &a.out {
        Some(p) => table.write_csv(fs::File::create(p)?)?,
        None => table.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn pvalue_hist(a: PvalueHistArgs) -> cpsel::Result<()> {
    let spec = a.agg.to_spec()?;
    spec.validate(a.n_dims)?;
    let cell = GridCell {
        n_dims: a.n_dims,
        t_len: a.t_len,
        xi: a.xi,
        sigma: a.sigma,
        spec,
        replicates: a.replicates,
        seed: a.seed,
    };
    let kind = match a.kind {
        KindChoice::Selective => PvalueKind::Selective,
        KindChoice::Naive => PvalueKind::Naive,
    };
    let hist = pvalue_histogram(&cell, a.bins, kind)?;
    eprintln!(
        "KS statistic {:.6}, p-value {:.6} ({} replicates)",
        hist.ks_statistic(),
        hist.ks_p_value(),
        hist.replicates()
    );
    let text = match a.format {
        Format::Csv => {
            let mut s = String::from("bin_left,bin_right,count\n");
            for ((left, right), count) in hist.edges().into_iter().zip(hist.counts()) {
                s.push_str(&format!("{left},{right},{count}\n"));
            }
            s
        }
        Format::Json => to_json(&hist)?,
    };
    write_output(a.out.as_deref(), &text)
}

fn power_curve(a: PowerCurveArgs) -> cpsel::Result<()> {
    require_format(a.format, Format::Csv, "power-curve")?;
    if a.mu_steps == 0 {
        return Err(Error::InvalidArgument("--mu-steps must be positive".into()));
    }
    let y = cpsel::io::read_sequence_file(&a.input)?;
    let spec = a.agg.to_spec()?;
    spec.validate(y.n_dims())?;
    let cov = covariance::resolve(&a.cov, y.n_dims(), y.t_len())?;
    let test = run_selective_test(&y, &spec, &cov)?;
    let iv = test.interval();
    let mu_max = match a.mu_max {
        Some(m) if m.is_finite() && m >= 0.0 => m,
        Some(m) => {
            return Err(Error::InvalidArgument(format!(
                "--mu-max must be a finite non-negative number, got {m}"
            )))
        }
        // A degenerate detection still gets a curve, on the scale of v.
        None if iv.theta() > 0.0 => iv.theta(),
        None => iv.v(),
    };
    eprintln!(
        "t_hat={}, theta={}, v={}, interval [{}, {}]",
        test.t_hat(),
        iv.theta(),
        iv.v(),
        iv.lower(),
        iv.upper()
    );
    let mut s = String::from("mu,power_quadratic,power_lower_bound\n");
    for i in 0..=a.mu_steps {
        let mu = mu_max * i as f64 / a.mu_steps as f64;
        let pe = power_estimate(iv, a.alpha, mu)?;
        s.push_str(&format!(
            "{},{},{}\n",
            pe.mu(),
            pe.power_quadratic(),
            pe.power_lower_bound()
        ));
    }
    write_output(a.out.as_deref(), &s)
}

fn require_format(got: Format, want: Format, what: &str) -> cpsel::Result<()> {
    if got == want {
        return Ok(());
    }
    let name = match want {
        Format::Json => "json",
        Format::Csv => "csv",
    };
    Err(Error::InvalidArgument(format!(
        "{what} supports only --format {name}"
    )))
}

fn to_json<T: Serialize>(value: &T) -> cpsel::Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn write_output(path: Option<&Path>, text: &str) -> cpsel::Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}
