//! `trialkit` command line: assign treatments, analyze experiments, run
//! randomization tests and Monte Carlo studies.
//!
//! Exit codes: 0 success, 2 usage error, 3 request incompatible with the
//! data or design, 4 data error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use trialkit::analysis::{
    analyze, AnalysisRequest, Data, EstimatorKind, ModelKind, VarianceMethod,
};
use trialkit::design::{assign_clusters, assign_sample};
use trialkit::io::{self, ReadOptions, Table};
use trialkit::model::{DesignKind, DesignSpec, Sample};
use trialkit::oracle::montecarlo::{monte_carlo, Scenario, ScenarioReport};
use trialkit::permute::{exhaustive_test, permutation_test, Statistic};
use trialkit::{rng, Error};

#[derive(Parser)]
#[command(
    name = "trialkit",
    version,
    about = "Design and analysis of randomized experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a treatment assignment and append it to a CSV file as column `d`.
    Assign(AssignArgs),
    /// Estimate a treatment effect and write a JSON report.
    Analyze(AnalyzeArgs),
    /// Randomization test of the sharp null of no effect for any unit.
    Test(TestArgs),
    /// Run the Monte Carlo scenarios listed in a JSON config.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DesignName {
    Complete,
    Sbr,
    Pairs,
    Cluster,
}

#[derive(Args)]
struct DesignArgs {
    /// Assignment probability.
    #[arg(long)]
    pi: Option<f64>,
    /// Per-stratum assignment probabilities, as label=value pairs.
    #[arg(long, value_name = "K=V,...")]
    pi_by_stratum: Option<String>,
}

#[derive(Args)]
struct AssignArgs {
    #[arg(long, value_enum)]
    design: DesignName,
    #[command(flatten)]
    probs: DesignArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    #[arg(long = "out", value_name = "CSV")]
    output: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// dim, sat, pooled, lin, aipw, cluster-eq or cluster-size.
    #[arg(long)]
    estimator: EstimatorKind,
    /// auto, robust, sbr, strat-fp, pairs, cluster-eq, cluster-size or
    /// finite-pop[:N][,improved].
    #[arg(long, default_value = "auto")]
    variance: VarianceMethod,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Declared design; selects the design-matched variance under `auto`.
    #[arg(long, value_enum)]
    design: Option<DesignName>,
    #[command(flatten)]
    probs: DesignArgs,
    /// Working model for aipw: zero, arm-mean or demeaned-linear.
    #[arg(long, default_value = "demeaned-linear")]
    model: ModelKind,
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    /// Report path; standard output when absent.
    #[arg(long = "out", value_name = "JSON")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long, value_enum)]
    design: DesignName,
    #[command(flatten)]
    probs: DesignArgs,
    /// dim or dim-studentized.
    #[arg(long, default_value = "dim")]
    stat: Statistic,
    /// Number of resampled assignments.
    #[arg(long = "B", alias = "b", default_value_t = 999)]
    draws: usize,
    #[arg(long, required_unless_present = "exhaustive")]
    seed: Option<u64>,
    /// Use every assignment of the design instead of B random draws.
    #[arg(long)]
    exhaustive: bool,
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    #[arg(long = "out", value_name = "JSON")]
    output: Option<PathBuf>,
    /// Also write the sorted reference distribution as CSV.
    #[arg(long, value_name = "CSV")]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_name = "JSON")]
    config: PathBuf,
    /// Summary table path; standard output when absent.
    #[arg(long = "out", value_name = "CSV")]
    output: Option<PathBuf>,
    /// Full reports (including closed-form values) as JSON.
    #[arg(long, value_name = "JSON")]
    json: Option<PathBuf>,
}

#[derive(Deserialize)]
struct SimulateConfig {
    /// Scenario whose variances are the denominators of the ratio columns.
    #[serde(default)]
    baseline: Option<String>,
    scenarios: Vec<Scenario>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) => 2,
        Error::Incompatible(_) | Error::EnumerationTooLarge { .. } => 3,
        _ => 4,
    }
}

fn parse_pi_map(text: &str) -> trialkit::Result<BTreeMap<String, f64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (k, v) = pair.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!("`{pair}` is not of the form label=value"))
            })?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("`{v}` is not a probability")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn require_pi(probs: &DesignArgs, design: &str) -> trialkit::Result<f64> {
    probs
        .pi
        .ok_or_else(|| Error::InvalidInput(format!("design `{design}` needs --pi")))
}

fn unit_labels(sample: &Sample) -> trialkit::Result<Vec<String>> {
    Ok(sample.strata()?.into_keys().collect())
}

fn cluster_labels(data: &Data) -> Vec<String> {
    let mut labels: Vec<String> = match data {
        Data::Clusters(c) => c
            .clusters()
            .iter()
            .filter_map(|c| c.stratum.clone())
            .collect(),
        Data::Units(s) => s.units().iter().filter_map(|u| u.stratum.clone()).collect(),
    };
    labels.sort();
    labels.dedup();
    labels
}

/// Builds the design from flags, reading strata labels from the data when
/// a constant π must be spread over them.
fn build_design(name: DesignName, probs: &DesignArgs, data: &Data) -> trialkit::Result<DesignKind> {
    let map = probs
        .pi_by_stratum
        .as_deref()
        .map(parse_pi_map)
        .transpose()?;
    let kind = match (name, data) {
        (DesignName::Complete, Data::Units(_)) => DesignKind::Complete {
            pi: require_pi(probs, "complete")?,
        },
        (DesignName::Sbr, Data::Units(sample)) => match map {
            Some(pi_by_stratum) => DesignKind::StratifiedBlock { pi_by_stratum },
            None => {
                DesignKind::stratified_constant(require_pi(probs, "sbr")?, unit_labels(sample)?)
            }
        },
        (DesignName::Pairs, Data::Units(_)) => DesignKind::MatchedPairs,
        (DesignName::Cluster, Data::Clusters(_)) => match map {
            Some(pi_by_stratum) => DesignKind::ClusterStratifiedBlock { pi_by_stratum },
            None => DesignKind::ClusterComplete {
                pi: require_pi(probs, "cluster")?,
            },
        },
        (DesignName::Sbr, Data::Clusters(_)) => match map {
            Some(pi_by_stratum) => DesignKind::ClusterStratifiedBlock { pi_by_stratum },
            None => DesignKind::ClusterStratifiedBlock {
                pi_by_stratum: cluster_labels(data)
                    .into_iter()
                    .map(|l| Ok((l, require_pi(probs, "sbr")?)))
                    .collect::<trialkit::Result<_>>()?,
            },
        },
        (DesignName::Cluster, Data::Units(_)) => {
            return Err(Error::Incompatible(
                "design `cluster` needs a `cluster` column in the data".into(),
            ))
        }
        (_, Data::Clusters(_)) => {
            return Err(Error::Incompatible(
                "clustered data supports the `cluster` and `sbr` designs".into(),
            ))
        }
    };
    kind.check()?;
    Ok(kind)
}

fn emit(text: &str, path: Option<&Path>) -> trialkit::Result<()> {
    match path {
        Some(p) => io::write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_assign(args: &AssignArgs) -> trialkit::Result<()> {
    let mut table = Table::read(&args.input)?;
    let data = io::parse_table(&table, ReadOptions::assignment())?;
    let kind = build_design(args.design, &args.probs, &data)?;
    let mut r = rng::from_seed(args.seed);
    match &data {
        Data::Units(sample) => {
            let a = assign_sample(sample, &kind, &mut r)?;
            table.set_column("d", a.d.iter().map(u8::to_string).collect());
            if let Some(pairing) = &a.pairing {
                let mut ids = vec![String::new(); sample.len()];
                for (j, &(i, k)) in pairing.iter().enumerate() {
                    ids[i] = j.to_string();
                    ids[k] = j.to_string();
                }
                table.set_column("pair", ids);
            }
        }
        Data::Clusters(clusters) => {
            let a = assign_clusters(clusters, &kind, &mut r)?;
            let by_id: BTreeMap<i64, u8> =
                clusters.clusters().iter().map(|c| c.id).zip(a.d).collect();
            let col = table
                .column("cluster")
                .expect("cluster mode implies the column");
            let d = table
                .rows
                .iter()
                .map(|row| {
                    by_id[&row[col].parse::<i64>().expect("validated while parsing")].to_string()
                })
                .collect();
            table.set_column("d", d);
        }
    }
    table.write(&args.output)
}

fn run_analyze(args: &AnalyzeArgs) -> trialkit::Result<()> {
    let data = io::read_sample(&args.input, ReadOptions::analysis())?;
    let design = args
        .design
        .map(|name| build_design(name, &args.probs, &data))
        .transpose()?;
    let req = AnalysisRequest {
        estimator: args.estimator,
        variance: args.variance,
        level: args.level,
        design,
        pi: args.probs.pi,
        model: args.model,
    };
    let report = analyze(&data, &req)?;
    emit(&io::to_json(&report)?, args.output.as_deref())
}

fn run_test(args: &TestArgs) -> trialkit::Result<()> {
    let data = io::read_sample(&args.input, ReadOptions::analysis())?;
    let Data::Units(sample) = &data else {
        return Err(Error::Incompatible(
            "randomization tests support unit-level designs (complete, sbr, pairs)".into(),
        ));
    };
    let kind = build_design(args.design, &args.probs, &data)?;
    let result = if args.exhaustive {
        exhaustive_test(sample, &kind, args.stat)?
    } else {
        let spec = DesignSpec {
            kind,
            seed: args
                .seed
                .expect("clap requires --seed without --exhaustive"),
        };
        permutation_test(sample, &spec, args.stat, args.draws)?
    };
    if let Some(path) = &args.reference {
        let rows: Vec<Vec<String>> = result
            .reference
            .iter()
            .map(|v| vec![v.to_string()])
            .collect();
        io::write_csv(path, &["statistic"], &rows)?;
    }
    let summary = json!({
        "statistic": result.statistic,
        "observed": result.observed,
        "p_value": result.p_value,
        "draws": result.reference.len(),
        "exhaustive": result.exhaustive,
        "seed": if result.exhaustive { None } else { args.seed },
    });
    emit(&io::to_json(&summary)?, args.output.as_deref())
}

const TABLE_HEADERS: [&str; 17] = [
    "scenario",
    "design",
    "estimator",
    "variance",
    "n",
    "replications",
    "target",
    "bias",
    "bias_mcse",
    "emp_var",
    "emp_var_mcse",
    "mean_var_est",
    "coverage",
    "coverage_mcse",
    "theory_var",
    "emp_var_ratio",
    "theory_ratio",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn summary_rows(
    config: &SimulateConfig,
    reports: &[ScenarioReport],
) -> trialkit::Result<Vec<Vec<String>>> {
    let baseline = match &config.baseline {
        Some(name) => Some(reports.iter().find(|r| &r.name == name).ok_or_else(|| {
            Error::InvalidInput(format!("baseline scenario `{name}` is not defined"))
        })?),
        None => None,
    };
    let mut rows = Vec::new();
    for (scenario, report) in config.scenarios.iter().zip(reports) {
        for (k, m) in report.methods.iter().enumerate() {
            // Ratios compare n-scaled variances with the baseline scenario's
            // method in the same position.
            let base = baseline.and_then(|b| b.methods.get(k).map(|bm| (b, bm)));
            let emp_ratio =
                base.map(|(b, bm)| (m.emp_var * report.n as f64) / (bm.emp_var * b.n as f64));
            let theory_ratio = base.and_then(|(b, bm)| {
                Some((m.theory_var? * report.n as f64) / (bm.theory_var? * b.n as f64))
            });
            rows.push(vec![
                report.name.clone(),
                report.design.clone(),
                scenario.methods[k].estimator.to_string(),
                m.variance.clone(),
                report.n.to_string(),
                report.replications.to_string(),
                m.target.to_string(),
                m.bias.to_string(),
                m.bias_mcse.to_string(),
                m.emp_var.to_string(),
                m.emp_var_mcse.to_string(),
                m.mean_var_est.to_string(),
                m.coverage.to_string(),
                m.coverage_mcse.to_string(),
                opt(m.theory_var),
                opt(emp_ratio),
                opt(theory_ratio),
            ]);
        }
    }
    Ok(rows)
}

fn run_simulate(args: &SimulateArgs) -> trialkit::Result<()> {
    let config: SimulateConfig = io::read_json(&args.config)?;
    let reports = config
        .scenarios
        .iter()
        .map(monte_carlo)
        .collect::<trialkit::Result<Vec<_>>>()?;
    if let Some(path) = &args.json {
        io::write_text(path, &io::to_json(&reports)?)?;
    }
    let rows = summary_rows(&config, &reports)?;
    match &args.output {
        Some(path) => io::write_csv(path, &TABLE_HEADERS, &rows),
        None => {
            println!("{}", TABLE_HEADERS.join(","));
            for row in rows {
                println!("{}", row.join(","));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Assign(a) => run_assign(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Test(a) => run_test(a),
        Command::Simulate(a) => run_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
