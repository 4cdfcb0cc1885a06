//! `gramdep`: dependence measures, independence tests, and the dependence
//! pipelines, exposed with reproducible seeds and machine-readable output.
//!
//! Every run prints one JSON object to stdout: the subcommand name, the
//! fully resolved configuration (defaults and seed included), the result,
//! and the wall-clock time. `--output csv-rows` swaps the result for CSV
//! rows (the config is echoed on a `#` comment line). Identical invocations
//! produce byte-identical primary fields at any `--threads` setting; only
//! `timing_ms` varies.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flag or
//! value, bad group layout).

use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use gramdep::dataset::{self, generators};
use gramdep::entropy::Alpha;
use gramdep::error::Error;
use gramdep::gradients::gradient_check_report;
use gramdep::grn;
use gramdep::inference::{self, PowerScenario};
use gramdep::kernel::{BandwidthRule, KernelKind, KernelSpec};
use gramdep::learning::{self, LossKind, ModelKind, NoiseKind, TrainConfig};
use gramdep::measures::{self, MeasureKind};
use gramdep::outliers::{self, SearchParams};

#[derive(Parser)]
#[command(name = "gramdep", version, about = "Kernel-spectrum dependence measures and pipelines")]
struct Cli {
    /// Cap on internal parallelism (0 = all cores). Results are identical
    /// at every setting.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output format for the result section.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    output: OutputFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum OutputFormat {
    Json,
    CsvRows,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate one dependence measure on a CSV sample table.
    Measure(MeasureArgs),
    /// Permutation independence test on a CSV sample table.
    Test(TestArgs),
    /// Monte-Carlo power study on the synthetic benchmark generators.
    Power(PowerArgs),
    /// Pairwise dependence network from an expression matrix, scored
    /// against a reference edge list.
    Grn(GrnArgs),
    /// Subspace outlier detection.
    Outlier(OutlierArgs),
    /// Train a regressor under an MSE / MAE / entropy / dependence loss.
    Train(TrainArgs),
    /// Noise-robustness comparison of the training losses.
    NoiseExp(NoiseArgs),
    /// Generate a synthetic benchmark dataset as CSV.
    Synth(SynthArgs),
    /// Verify every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CliKind {
    Ntc,
    Ndtc,
    Nmi,
    Tc,
    Dtc,
    Mi,
    Hsic,
}

impl From<CliKind> for MeasureKind {
    fn from(k: CliKind) -> MeasureKind {
        match k {
            CliKind::Ntc => MeasureKind::NormalizedTotalCorrelation,
            CliKind::Ndtc => MeasureKind::NormalizedDualTotalCorrelation,
            CliKind::Nmi => MeasureKind::NormalizedMiMax,
            CliKind::Tc => MeasureKind::TotalCorrelation,
            CliKind::Dtc => MeasureKind::DualTotalCorrelation,
            CliKind::Mi => MeasureKind::MutualInformation,
            CliKind::Hsic => MeasureKind::Hsic,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CliKernel {
    Rbf,
    Delta,
}

fn parse_bandwidth(s: &str) -> Result<BandwidthRule, String> {
    match s {
        "median" => Ok(BandwidthRule::MedianHeuristic),
        "silverman" => Ok(BandwidthRule::Silverman),
        other => {
            let v: f64 = other
                .parse()
                .map_err(|_| format!("bandwidth must be 'median', 'silverman', or a number, got '{other}'"))?;
            if v > 0.0 {
                Ok(BandwidthRule::Fixed(v))
            } else {
                Err(format!("fixed bandwidth must be positive, got {v}"))
            }
        }
    }
}

fn bandwidth_json(rule: BandwidthRule) -> Value {
    match rule {
        BandwidthRule::MedianHeuristic => json!("median"),
        BandwidthRule::Silverman => json!("silverman"),
        BandwidthRule::Fixed(v) => json!(v),
    }
}

#[derive(Args, Serialize)]
struct KernelArgs {
    /// Kernel family.
    #[arg(long, value_enum, default_value_t = CliKernel::Rbf)]
    kernel: CliKernel,
    /// RBF bandwidth rule: 'median', 'silverman', or a positive number.
    #[arg(long, value_parser = parse_bandwidth, default_value = "median")]
    #[serde(serialize_with = "serialize_bandwidth")]
    bandwidth: BandwidthRule,
}

fn serialize_bandwidth<S: serde::Serializer>(rule: &BandwidthRule, s: S) -> Result<S::Ok, S::Error> {
    bandwidth_json(*rule).serialize(s)
}

impl KernelArgs {
    fn spec(&self) -> KernelSpec {
        match self.kernel {
            CliKernel::Rbf => KernelSpec { kind: KernelKind::GaussianRbf, bandwidth: self.bandwidth },
            CliKernel::Delta => KernelSpec::delta(),
        }
    }
}

#[derive(Args, Serialize)]
struct MeasureArgs {
    /// CSV sample table.
    #[arg(long)]
    input: String,
    /// Column grouping, e.g. "0-2;3-5;6".
    #[arg(long)]
    groups: String,
    /// First row of the input is a header.
    #[arg(long, default_value_t = false)]
    has_header: bool,
    #[arg(long, value_enum)]
    kind: CliKind,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[command(flatten)]
    #[serde(flatten)]
    kernel_args: KernelArgs,
    /// Average over random row subsamples of this size.
    #[arg(long)]
    subsample: Option<usize>,
    /// Number of subsample replicas.
    #[arg(long, default_value_t = 10)]
    groups_count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct TestArgs {
    #[arg(long)]
    input: String,
    #[arg(long)]
    groups: String,
    #[arg(long, default_value_t = false)]
    has_header: bool,
    #[arg(long, value_enum)]
    kind: CliKind,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[command(flatten)]
    #[serde(flatten)]
    kernel_args: KernelArgs,
    #[arg(long, default_value_t = 100)]
    permutations: usize,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CliScenario {
    Rotation,
    Product,
}

#[derive(Args, Serialize)]
struct PowerArgs {
    #[arg(long, value_enum)]
    scenario: CliScenario,
    #[arg(long, value_enum, default_value_t = CliKind::Nmi)]
    kind: CliKind,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 100)]
    permutations: usize,
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CliPairKind {
    Nmi,
    Hsic,
    Pearson,
}

#[derive(Args, Serialize)]
struct GrnArgs {
    /// Expression CSV: rows = measurements, columns = genes, header = names.
    #[arg(long)]
    expressions: String,
    /// Reference edges CSV: gene_i,gene_j,label rows with 0/1 labels.
    #[arg(long)]
    truth: String,
    /// Expression file has no header row.
    #[arg(long, default_value_t = false)]
    no_header: bool,
    #[arg(long, value_enum, default_value_t = CliPairKind::Nmi)]
    kind: CliPairKind,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[command(flatten)]
    #[serde(flatten)]
    kernel_args: KernelArgs,
}

#[derive(Args, Serialize)]
struct OutlierArgs {
    #[arg(long)]
    input: String,
    #[arg(long, default_value_t = false)]
    has_header: bool,
    /// Optional 0/1 labels CSV aligned with the data rows.
    #[arg(long)]
    labels: Option<String>,
    #[arg(long, value_enum, default_value_t = CliKind::Ntc)]
    kind: CliKind,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[command(flatten)]
    #[serde(flatten)]
    kernel_args: KernelArgs,
    #[arg(long, default_value_t = 50)]
    beam: usize,
    #[arg(long, default_value_t = 5)]
    max_dim: usize,
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long, default_value_t = 20)]
    lof_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CliLoss {
    Mse,
    Mae,
    Mee,
    Nmi,
}

impl From<CliLoss> for LossKind {
    fn from(l: CliLoss) -> LossKind {
        match l {
            CliLoss::Mse => LossKind::Mse,
            CliLoss::Mae => LossKind::Mae,
            CliLoss::Mee => LossKind::Mee,
            CliLoss::Nmi => LossKind::Nmi,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CliModel {
    Linear,
    Mlp,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Feature CSV (rows = samples).
    #[arg(long)]
    x: String,
    /// Target CSV (single numeric column aligned with the features).
    #[arg(long)]
    y: String,
    #[arg(long, default_value_t = false)]
    has_header: bool,
    #[arg(long, value_enum)]
    loss: CliLoss,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, value_enum, default_value_t = CliModel::Linear)]
    model: CliModel,
    /// Hidden width for the mlp model.
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[command(flatten)]
    #[serde(flatten)]
    kernel_args: KernelArgs,
    /// Where the trained model checkpoint is written.
    #[arg(long, default_value = "model.json")]
    checkpoint_out: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CliNoise {
    Laplace,
    ShiftedExp,
    Gaussian,
}

#[derive(Args, Serialize)]
struct NoiseArgs {
    #[arg(long, value_enum)]
    noise: CliNoise,
    #[arg(long, default_value_t = 4.0)]
    rho: f64,
    /// Losses compared against the MSE baseline.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [CliLoss::Mae, CliLoss::Mee, CliLoss::Nmi])]
    losses: Vec<CliLoss>,
    /// Independent dataset seeds to average over.
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
enum CliDataset {
    #[value(name = "rotation")]
    #[serde(rename = "rotation")]
    Rotation,
    #[value(name = "product")]
    #[serde(rename = "product")]
    Product,
    #[value(name = "dataA")]
    #[serde(rename = "dataA")]
    DataA,
    #[value(name = "dataB")]
    #[serde(rename = "dataB")]
    DataB,
    #[value(name = "xor")]
    #[serde(rename = "xor")]
    Xor,
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long, value_enum)]
    dataset: CliDataset,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Dimension for dataA / dataB.
    #[arg(long, default_value_t = 5)]
    d: usize,
    /// Rotation angle for the rotation pair, in [0, pi/4].
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Extra noise dimensions per group for the rotation pair.
    #[arg(long, default_value_t = 0)]
    extra_dims: usize,
    /// Output CSV path.
    #[arg(long)]
    out: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct GradcheckArgs {
    /// Fixture matrix size.
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Fixtures per operation.
    #[arg(long, default_value_t = 20)]
    fixtures: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Result section plus the rows used for `--output csv-rows`.
struct CommandOutput {
    result: Value,
    csv_header: Vec<String>,
    csv_rows: Vec<Vec<String>>,
    /// Non-zero when the command ran but its verdict is a failure
    /// (gradcheck out of tolerance).
    exit: u8,
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn alpha_of(v: f64) -> Result<Alpha, Error> {
    Alpha::new(v)
}

fn run_measure(args: &MeasureArgs) -> Result<CommandOutput, Error> {
    let table = dataset::load_csv(&args.input, Some(&args.groups), args.has_header)?;
    let alpha = alpha_of(args.alpha)?;
    let spec = args.kernel_args.spec();
    let kind: MeasureKind = args.kind.into();
    let report = match args.subsample {
        Some(k) => measures::subsampled_measure(&table, kind, alpha, &spec, k, args.groups_count, args.seed)?,
        None => measures::measure_from_table(&table, kind, alpha, &spec)?,
    };
    let result = serde_json::to_value(&report).unwrap();
    let kind_name = serde_json::to_value(report.kind).unwrap().as_str().unwrap().to_string();
    Ok(CommandOutput {
        csv_header: vec!["kind".into(), "alpha".into(), "value".into(), "degenerate".into(), "n".into()],
        csv_rows: vec![vec![
            kind_name,
            fmt(args.alpha),
            fmt(report.value),
            report.degenerate.to_string(),
            report.n.to_string(),
        ]],
        result,
        exit: 0,
    })
}

fn run_test(args: &TestArgs) -> Result<CommandOutput, Error> {
    let table = dataset::load_csv(&args.input, Some(&args.groups), args.has_header)?;
    let alpha = alpha_of(args.alpha)?;
    let spec = args.kernel_args.spec();
    let kind: MeasureKind = args.kind.into();
    let res = if table.num_groups() == 2 {
        inference::permutation_test(&table, kind, alpha, &spec, args.permutations, args.tau, args.seed)?
    } else {
        inference::permutation_test_multi(&table, kind, alpha, &spec, args.permutations, args.tau, args.seed)?
    };
    let result = serde_json::to_value(&res).unwrap();
    Ok(CommandOutput {
        csv_header: vec!["statistic".into(), "threshold".into(), "p_value".into(), "reject_h0".into()],
        csv_rows: vec![vec![
            fmt(res.statistic),
            fmt(res.threshold),
            fmt(res.p_value),
            res.reject_h0.to_string(),
        ]],
        result,
        exit: 0,
    })
}

fn run_power(args: &PowerArgs) -> Result<CommandOutput, Error> {
    let scenario = match args.scenario {
        CliScenario::Rotation => PowerScenario::RotationSweep,
        CliScenario::Product => PowerScenario::ProductNSweep,
    };
    let curve = inference::power_experiment(
        scenario,
        args.kind.into(),
        alpha_of(args.alpha)?,
        args.trials,
        args.permutations,
        args.tau,
        args.seed,
    )?;
    let rows = curve
        .x_values
        .iter()
        .zip(&curve.rates)
        .map(|(x, r)| vec![fmt(*x), fmt(*r)])
        .collect();
    let result = serde_json::to_value(&curve).unwrap();
    Ok(CommandOutput { csv_header: vec!["x".into(), "rate".into()], csv_rows: rows, result, exit: 0 })
}

fn run_grn(args: &GrnArgs) -> Result<CommandOutput, Error> {
    let table = dataset::load_csv(&args.expressions, None, !args.no_header)?;
    let names: Option<Vec<String>> = table.column_names().map(|n| n.to_vec());
    let kind = match args.kind {
        CliPairKind::Nmi => grn::PairScoreKind::NmiMax,
        CliPairKind::Hsic => grn::PairScoreKind::Hsic,
        CliPairKind::Pearson => grn::PairScoreKind::PearsonAbs,
    };
    let scores = grn::score_pairs(
        table.values(),
        names.clone(),
        kind,
        alpha_of(args.alpha)?,
        &args.kernel_args.spec(),
    )?;
    let truth = grn::load_truth_edges(&args.truth, names.as_deref())?;
    let auc = grn::evaluate_network(&scores, &truth)?;
    let name_of = |i: usize| -> String {
        names.as_ref().map_or_else(|| i.to_string(), |n| n[i].clone())
    };
    let mut rows = Vec::new();
    let mut edges_json = Vec::new();
    for (i, j, score) in scores.edges() {
        let is_edge = truth.contains(&(i, j));
        edges_json.push(json!({
            "gene_i": name_of(i),
            "gene_j": name_of(j),
            "score": score,
            "truth": is_edge,
        }));
        rows.push(vec![name_of(i), name_of(j), fmt(score), (is_edge as u8).to_string()]);
    }
    let result = json!({"auc": auc, "num_genes": scores.genes(), "edges": edges_json});
    Ok(CommandOutput {
        csv_header: vec!["gene_i".into(), "gene_j".into(), "score".into(), "truth".into()],
        csv_rows: rows,
        result,
        exit: 0,
    })
}

fn run_outlier(args: &OutlierArgs) -> Result<CommandOutput, Error> {
    let table = dataset::load_csv(&args.input, None, args.has_header)?;
    let labels = match &args.labels {
        Some(path) => Some(dataset::load_labels(path)?),
        None => None,
    };
    let kind: MeasureKind = args.kind.into();
    if !matches!(
        kind,
        MeasureKind::NormalizedTotalCorrelation | MeasureKind::NormalizedDualTotalCorrelation
    ) {
        return Err(Error::Argument("outlier detection scores subspaces with ntc or ndtc".into()));
    }
    let params = SearchParams {
        beam_width: args.beam,
        max_dim: args.max_dim,
        top_k: args.top,
        lof_k: args.lof_k,
        ..Default::default()
    };
    let res = outliers::detect(
        &table,
        labels.as_deref(),
        kind,
        alpha_of(args.alpha)?,
        &args.kernel_args.spec(),
        &params,
        args.seed,
    )?;
    let rows = res.scores.iter().enumerate().map(|(i, s)| vec![i.to_string(), fmt(*s)]).collect();
    let result = serde_json::to_value(&res).unwrap();
    Ok(CommandOutput {
        csv_header: vec!["row".into(), "score".into()],
        csv_rows: rows,
        result,
        exit: 0,
    })
}

fn load_targets(path: &str, has_header: bool) -> Result<Vec<f64>, Error> {
    let t = dataset::load_csv(path, None, has_header)?;
    if t.dim() != 1 {
        return Err(Error::Argument(format!("target file must have one column, got {}", t.dim())));
    }
    Ok(t.values().column(0).iter().copied().collect())
}

fn run_train(args: &TrainArgs) -> Result<CommandOutput, Error> {
    let x = dataset::load_csv(&args.x, None, args.has_header)?;
    let y = load_targets(&args.y, args.has_header)?;
    let config = TrainConfig {
        loss: args.loss.into(),
        alpha: alpha_of(args.alpha)?,
        batch_size: args.batch,
        epochs: args.epochs,
        learning_rate: args.lr,
        optimizer: learning::Optimizer::Adam,
        model: match args.model {
            CliModel::Linear => ModelKind::Linear,
            CliModel::Mlp => ModelKind::Mlp { hidden: args.hidden },
        },
        kernel: args.kernel_args.spec(),
        track_losses: false,
        seed: args.seed,
    };
    let (model, stats) = learning::train(x.values(), &y, &config)?;
    model.save(&args.checkpoint_out)?;
    let pred = model.predict(x.values())?;
    let train_rmse = (y
        .iter()
        .zip(pred.iter())
        .map(|(t, p)| (t - p) * (t - p))
        .sum::<f64>()
        / y.len() as f64)
        .sqrt();
    let final_loss = stats.epoch_loss.last().copied().unwrap_or(f64::NAN);
    let result = json!({
        "final_loss": final_loss,
        "train_rmse": train_rmse,
        "bias_correction": model.bias_correction(),
        "checkpoint": args.checkpoint_out,
        "epochs_run": stats.epoch_loss.len(),
    });
    Ok(CommandOutput {
        csv_header: vec!["final_loss".into(), "train_rmse".into(), "bias_correction".into()],
        csv_rows: vec![vec![fmt(final_loss), fmt(train_rmse), fmt(model.bias_correction())]],
        result,
        exit: 0,
    })
}

fn run_noise(args: &NoiseArgs) -> Result<CommandOutput, Error> {
    let noise = match args.noise {
        CliNoise::Laplace => NoiseKind::Laplace,
        CliNoise::ShiftedExp => NoiseKind::ShiftedExponential,
        CliNoise::Gaussian => NoiseKind::Gaussian,
    };
    let losses: Vec<LossKind> = args.losses.iter().map(|&l| l.into()).collect();
    let report = learning::noise_robustness_experiment(noise, args.rho, &losses, args.seeds, args.seed)?;
    let rows = report
        .rows
        .iter()
        .map(|r| vec![format!("{:?}", r.loss).to_lowercase(), fmt(r.mean_rmse), fmt(r.relative_rmse)])
        .collect();
    let result = serde_json::to_value(&report).unwrap();
    Ok(CommandOutput {
        csv_header: vec!["loss".into(), "mean_rmse".into(), "relative_rmse".into()],
        csv_rows: rows,
        result,
        exit: 0,
    })
}

fn run_synth(args: &SynthArgs) -> Result<CommandOutput, Error> {
    let table = match args.dataset {
        CliDataset::Rotation => generators::gen_rotation_pair(args.n, args.theta, args.extra_dims, args.seed)?,
        CliDataset::Product => generators::gen_product_pair(args.n, args.seed)?,
        CliDataset::DataA => generators::gen_data_a(args.n, args.d, args.seed)?,
        CliDataset::DataB => generators::gen_data_b(args.n, args.d, args.seed)?,
        CliDataset::Xor => generators::gen_xor(args.n, args.seed)?,
    };
    table.write_csv(&args.out)?;
    let group_spec: Vec<String> = table
        .groups()
        .iter()
        .map(|g| g.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","))
        .collect();
    let result = json!({
        "path": args.out,
        "n": table.n(),
        "d": table.dim(),
        "groups": group_spec.join(";"),
    });
    Ok(CommandOutput {
        csv_header: vec!["path".into(), "n".into(), "d".into(), "groups".into()],
        csv_rows: vec![vec![args.out.clone(), table.n().to_string(), table.dim().to_string(), group_spec.join(";")]],
        result,
        exit: 0,
    })
}

fn run_gradcheck(args: &GradcheckArgs) -> Result<CommandOutput, Error> {
    if args.n < 3 || args.n > 64 {
        return Err(Error::Argument(format!("fixture size {} outside 3..=64", args.n)));
    }
    if args.fixtures == 0 {
        return Err(Error::Argument("need at least one fixture".into()));
    }
    let report = gradient_check_report(args.n, alpha_of(args.alpha)?, args.fixtures, args.seed)?;
    let mut pass = true;
    let mut rows = Vec::new();
    let mut ops = Vec::new();
    for r in &report {
        let bound = if r.operation == "backprop_to_samples" { 1e-4 } else { 1e-5 };
        let ok = r.max_rel_error < bound;
        pass &= ok;
        rows.push(vec![r.operation.clone(), fmt(r.max_rel_error), fmt(bound), ok.to_string()]);
        ops.push(json!({
            "operation": r.operation,
            "fixtures": r.fixtures,
            "max_rel_error": r.max_rel_error,
            "bound": bound,
            "pass": ok,
        }));
    }
    Ok(CommandOutput {
        csv_header: vec!["operation".into(), "max_rel_error".into(), "bound".into(), "pass".into()],
        csv_rows: rows,
        result: json!({"operations": ops, "pass": pass}),
        exit: if pass { 0 } else { 1 },
    })
}

fn dispatch(command: &Command) -> (&'static str, Value, Result<CommandOutput, Error>) {
    match command {
        Command::Measure(a) => ("measure", serde_json::to_value(a).unwrap(), run_measure(a)),
        Command::Test(a) => ("test", serde_json::to_value(a).unwrap(), run_test(a)),
        Command::Power(a) => ("power", serde_json::to_value(a).unwrap(), run_power(a)),
        Command::Grn(a) => ("grn", serde_json::to_value(a).unwrap(), run_grn(a)),
        Command::Outlier(a) => ("outlier", serde_json::to_value(a).unwrap(), run_outlier(a)),
        Command::Train(a) => ("train", serde_json::to_value(a).unwrap(), run_train(a)),
        Command::NoiseExp(a) => ("noise-exp", serde_json::to_value(a).unwrap(), run_noise(a)),
        Command::Synth(a) => ("synth", serde_json::to_value(a).unwrap(), run_synth(a)),
        Command::Gradcheck(a) => ("gradcheck", serde_json::to_value(a).unwrap(), run_gradcheck(a)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        // identical numeric output is guaranteed at any thread count
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: failed to configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let start = Instant::now();
    let (name, mut config, outcome) = dispatch(&cli.command);
    config["threads"] = json!(cli.threads);
    config["output"] = serde_json::to_value(cli.output).unwrap();
    match outcome {
        Ok(output) => {
            let timing_ms = start.elapsed().as_secs_f64() * 1e3;
            match cli.output {
                OutputFormat::Json => {
                    let envelope = json!({
                        "command": name,
                        "config": config,
                        "result": output.result,
                        "timing_ms": timing_ms,
                    });
                    println!("{}", serde_json::to_string_pretty(&envelope).unwrap());
                }
                OutputFormat::CsvRows => {
                    println!("# command: {name}");
                    println!("# config: {}", serde_json::to_string(&config).unwrap());
                    println!("{}", output.csv_header.join(","));
                    for row in &output.csv_rows {
                        println!("{}", row.join(","));
                    }
                    println!("# timing_ms: {timing_ms}");
                }
            }
            ExitCode::from(output.exit)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
