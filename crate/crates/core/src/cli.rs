//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for invalid flags, 3 for data errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::dataset::{self, LoadOptions, MixedDataset, RawTable, Schema, WeightScheme};
use crate::error::{CpfError, Result};
use crate::format_float;
use crate::neighbors::{build_mutual_graph, components, knn_search, write_edges_csv, KnnBackend};
use crate::pipeline::{self, ClusteringResult, CpfParams};
use crate::validation::{external_indices, OutlierPolicy};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "cpf", version, about = "Component-based peak finding clustering for mixed data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster a table and write one label per input row.
    Cluster(ClusterArgs),
    /// Cluster over a (k, K) grid and score every run against the truth column.
    Sweep(SweepArgs),
    /// Score predicted labels against ground truth.
    Evaluate(EvaluateArgs),
    /// Export (index, phi, omega, gamma) for the points of each component.
    DecisionGraph(DecisionGraphArgs),
    /// Export the component id of every point (-1 for isolated points).
    Components(ComponentsArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WeightsArg {
    W1,
    W2,
}

impl From<WeightsArg> for WeightScheme {
    fn from(w: WeightsArg) -> Self {
        match w {
            WeightsArg::W1 => WeightScheme::W1,
            WeightsArg::W2 => WeightScheme::W2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Exact,
    Brute,
    Kdtree,
    Approx,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Delimited text file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// JSON schema: {"columns":[{"name":..,"kind":"numeric"|"categorical"}],"label":..}
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Ground-truth column, excluded from the features.
    #[arg(long = "truth-col")]
    pub truth_col: Option<String>,
    /// Columns to treat as categorical during type inference (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<String>,
    #[arg(long, default_value = ",")]
    pub delimiter: char,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Neighbors per point in the mutual k-NN graph.
    #[arg(long)]
    pub k: usize,
    /// Density neighbors (default: ceil(sqrt(n))).
    #[arg(long = "K")]
    pub density_k: Option<usize>,
    #[arg(long = "k-cap", default_value_t = crate::peaks::DEFAULT_K_CAP)]
    pub k_cap: usize,
    #[arg(long, default_value_t = pipeline::DEFAULT_BETA)]
    pub beta: usize,
    #[arg(long = "omega-quantile")]
    pub omega_quantile: Option<f64>,
    #[arg(long = "phi-quantile")]
    pub phi_quantile: Option<f64>,
    #[arg(long, env = "CPF_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, value_enum, default_value = "exact")]
    pub knn: BackendArg,
    /// Seed for the approximate k-NN backend.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    fn params(&self) -> CpfParams {
        let backend = match self.knn {
            BackendArg::Exact => KnnBackend::Exact,
            BackendArg::Brute => KnnBackend::BruteForce,
            BackendArg::Kdtree => KnnBackend::KdTree,
            BackendArg::Approx => KnnBackend::Approximate { seed: self.seed },
        };
        CpfParams {
            k: self.k,
            density_k: self.density_k,
            k_cap: self.k_cap,
            beta: self.beta,
            omega_quantile: self.omega_quantile,
            phi_quantile: self.phi_quantile,
            backend,
            threads: self.threads,
        }
    }
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "w1")]
    pub weights: WeightsArg,
    /// Labels file; a row map is written next to it as `<out>.rows.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Drop outliers instead of counting them as a cluster when scoring.
    #[arg(long = "exclude-outliers")]
    pub exclude_outliers: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Graph neighbor range `start:end[:step]` (inclusive).
    #[arg(long, value_parser = parse_grid)]
    pub k: Grid,
    /// Density neighbor range `start:end[:step]` (inclusive).
    #[arg(long = "K", value_parser = parse_grid)]
    pub density_k: Grid,
    #[arg(long = "k-cap", default_value_t = crate::peaks::DEFAULT_K_CAP)]
    pub k_cap: usize,
    #[arg(long, default_value_t = pipeline::DEFAULT_BETA)]
    pub beta: usize,
    /// Weighting schemes to try (comma separated).
    #[arg(long, value_enum, value_delimiter = ',', default_value = "w1")]
    pub weights: Vec<WeightsArg>,
    #[arg(long = "exclude-outliers")]
    pub exclude_outliers: bool,
    #[arg(long, env = "CPF_THREADS")]
    pub threads: Option<usize>,
    /// Results CSV (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON summary with the best row per index.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted labels, one integer per line.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth, one label per line.
    #[arg(long, conflicts_with_all = ["input", "truth_col"])]
    pub truth: Option<PathBuf>,
    /// Table holding the truth column.
    #[arg(long, requires = "truth_col")]
    pub input: Option<PathBuf>,
    #[arg(long = "truth-col", requires = "input")]
    pub truth_col: Option<String>,
    #[arg(long, default_value = ",")]
    pub delimiter: char,
    #[arg(long = "exclude-outliers")]
    pub exclude_outliers: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecisionGraphArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "w1")]
    pub weights: WeightsArg,
    /// Only this component (otherwise all, with a component column).
    #[arg(long)]
    pub component: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ComponentsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "w1")]
    pub weights: WeightsArg,
    #[arg(long, env = "CPF_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Edge list `i,j,distance` of the mutual graph.
    #[arg(long = "graph-out")]
    pub graph_out: Option<PathBuf>,
}

/// Parses `start:end[:step]` (inclusive) or a single value.
/// Values of one sweep axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid(pub Vec<usize>);

fn parse_grid(s: &str) -> std::result::Result<Grid, String> {
    parse_range(s).map(Grid)
}

pub fn parse_range(s: &str) -> std::result::Result<Vec<usize>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| {
        p.trim()
            .parse::<usize>()
            .map_err(|_| format!("`{p}` is not a non-negative integer"))
    };
    let (start, end, step) = match parts.as_slice() {
        [v] => (num(v)?, num(v)?, 1),
        [a, b] => (num(a)?, num(b)?, 1),
        [a, b, c] => (num(a)?, num(b)?, num(c)?),
        _ => return Err(format!("expected start:end[:step], got `{s}`")),
    };
    if step == 0 {
        return Err("step must be positive".into());
    }
    if end < start {
        return Err(format!("empty range `{s}`"));
    }
    Ok((start..=end).step_by(step).collect())
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Cluster(a) => cmd_cluster(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::DecisionGraph(a) => cmd_decision_graph(&a),
        Command::Components(a) => cmd_components(&a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            3
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CpfError + '_ {
    move |source| CpfError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn delimiter_byte(c: char) -> Result<u8> {
    u8::try_from(c)
        .map_err(|_| CpfError::InvalidParam(format!("delimiter `{c}` is not a single byte")))
}

fn load(args: &DataArgs) -> Result<RawTable> {
    let schema = args.schema.as_ref().map(Schema::from_json_file).transpose()?;
    let opts = LoadOptions {
        delimiter: delimiter_byte(args.delimiter)?,
        schema,
        categorical: args.categorical.clone(),
        label_column: args.truth_col.clone(),
    };
    dataset::load_table(&args.input, &opts)
}

fn encode(table: &RawTable, weights: WeightsArg) -> Result<MixedDataset> {
    let model = dataset::fit_encoding(table, weights.into())?;
    dataset::encode(table, &model)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Path of the row-map sidecar for a labels file.
pub fn row_map_path(labels: &Path) -> PathBuf {
    let mut s = labels.as_os_str().to_owned();
    s.push(".rows.csv");
    PathBuf::from(s)
}

/// Labels spread back onto input rows; rows dropped during cleaning get -1.
pub fn labels_per_input_row(table: &RawTable, labels: &[i64]) -> Vec<i64> {
    let mut out = vec![-1; table.input_rows];
    for (&row, &l) in table.row_ids.iter().zip(labels) {
        out[row] = l;
    }
    out
}

pub fn write_labels(path: &Path, table: &RawTable, labels: &[i64]) -> Result<()> {
    let mut w = create(path)?;
    for l in labels_per_input_row(table, labels) {
        writeln!(w, "{l}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    let map_path = row_map_path(path);
    let mut m = create(&map_path)?;
    writeln!(m, "row,index").map_err(io_err(&map_path))?;
    let mut index = vec![-1i64; table.input_rows];
    for (i, &row) in table.row_ids.iter().enumerate() {
        index[row] = i as i64;
    }
    for (row, i) in index.iter().enumerate() {
        writeln!(m, "{row},{i}").map_err(io_err(&map_path))?;
    }
    m.flush().map_err(io_err(&map_path))
}

fn report_json(
    args: &ClusterArgs,
    table: &RawTable,
    data: &MixedDataset,
    params: &CpfParams,
    result: &ClusteringResult,
) -> Result<serde_json::Value> {
    let indices = match data.truth() {
        Some(truth) => Some(external_indices(&result.labels, truth, policy(args.exclude_outliers))?),
        None => None,
    };
    Ok(json!({
        "schema": REPORT_SCHEMA,
        "input": args.data.input,
        "rows": {
            "input": table.input_rows,
            "clustered": table.n_rows(),
            "dropped": table.dropped_rows,
        },
        "dropped_columns": table.dropped_columns,
        "features": {
            "numeric": table.numeric_names,
            "categorical": table.categorical_names,
        },
        "weights": WeightScheme::from(args.weights),
        "params": params,
        "density_k": params.resolved_density_k(data.len()),
        "clusters": result.cluster_count,
        "outliers": result.outlier_count,
        "graph_outliers": result.partition.outliers.len(),
        "cluster_sizes": result.cluster_sizes(),
        "components": result.components,
        "timings": result.timings,
        "indices": indices,
    }))
}

fn policy(exclude: bool) -> OutlierPolicy {
    if exclude {
        OutlierPolicy::Exclude
    } else {
        OutlierPolicy::OwnCluster
    }
}

pub fn cmd_cluster(args: &ClusterArgs) -> Result<()> {
    let table = load(&args.data)?;
    let data = encode(&table, args.weights)?;
    let params = args.model.params();
    let result = pipeline::cluster(&data, &params)?;
    write_labels(&args.out, &table, &result.labels)?;
    if let Some(path) = &args.report {
        write_json(path, &report_json(args, &table, &data, &params, &result)?)?;
    }
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    if args.k.0.is_empty() || args.density_k.0.is_empty() {
        return Err(CpfError::InvalidParam("--k and --K ranges are required".into()));
    }
    let table = load(&args.data)?;
    let base = CpfParams {
        k_cap: args.k_cap,
        beta: args.beta,
        threads: args.threads,
        ..CpfParams::new(args.k.0[0])
    };
    let mut out = output(args.out.as_ref())?;
    let write_err = |e: std::io::Error| CpfError::Io {
        path: args.out.clone().unwrap_or_else(|| "<stdout>".into()),
        source: e,
    };
    writeln!(out, "weights,k,K,clusters,outliers,ari,nmi,purity,f1,ca").map_err(write_err)?;
    let mut all = Vec::new();
    for &weights in &args.weights {
        let data = encode(&table, weights)?;
        let truth = data
            .truth()
            .ok_or_else(|| CpfError::InvalidParam("sweep needs --truth-col".into()))?
            .to_vec();
        let result = pipeline::sweep(
            &data,
            &args.k.0,
            &args.density_k.0,
            &base,
            &truth,
            policy(args.exclude_outliers),
        )?;
        let scheme = WeightScheme::from(weights);
        let name = serde_json::to_value(scheme)?;
        for row in &result.rows {
            let i = &row.indices;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                name.as_str().unwrap_or("w1"),
                row.k,
                row.density_k,
                row.clusters,
                row.outliers,
                format_float(i.ari),
                format_float(i.nmi),
                format_float(i.purity),
                format_float(i.f1),
                format_float(i.ca)
            )
            .map_err(write_err)?;
        }
        all.push((scheme, result));
    }
    out.flush().map_err(write_err)?;

    let best = |key: fn(&crate::validation::ExternalIndices) -> f64| {
        let mut top: Option<serde_json::Value> = None;
        let mut top_val = f64::NEG_INFINITY;
        for (scheme, res) in &all {
            for row in &res.rows {
                let v = key(&row.indices);
                if v > top_val {
                    top_val = v;
                    top = Some(json!({"weights": scheme, "row": row}));
                }
            }
        }
        top
    };
    let summary = json!({
        "schema": REPORT_SCHEMA,
        "grid": {"k": args.k.0, "K": args.density_k.0, "beta": args.beta},
        "best": {
            "ari": best(|i| i.ari),
            "nmi": best(|i| i.nmi),
            "purity": best(|i| i.purity),
            "f1": best(|i| i.f1),
            "ca": best(|i| i.ca),
        }
    });
    match &args.report {
        Some(path) => write_json(path, &summary)?,
        None if args.out.is_some() => println!("{}", serde_json::to_string_pretty(&summary)?),
        None => {}
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(io_err(path))?;
    BufReader::new(file)
        .lines()
        .map(|l| l.map(|s| s.trim().to_string()).map_err(io_err(path)))
        .filter(|l| l.as_ref().map_or(true, |s| !s.is_empty()))
        .collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<i64>> {
    read_lines(path)?
        .iter()
        .map(|l| {
            l.parse::<i64>()
                .map_err(|_| CpfError::Schema(format!("{}: `{l}` is not an integer label", path.display())))
        })
        .collect()
}

/// Input rows that were clustered, from the row-map sidecar.
fn clustered_rows(labels: &Path) -> Result<Option<Vec<usize>>> {
    let map = row_map_path(labels);
    if !map.exists() {
        return Ok(None);
    }
    let mut rdr = csv::Reader::from_path(&map)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<i64> {
            rec.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| CpfError::Schema(format!("malformed row map {}", map.display())))
        };
        if parse(1)? >= 0 {
            rows.push(parse(0)? as usize);
        }
    }
    Ok(Some(rows))
}

fn read_column(path: &Path, column: &str, delimiter: u8) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .from_path(path)?;
    let pos = rdr
        .headers()?
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| CpfError::Schema(format!("no column named `{column}`")))?;
    rdr.records()
        .map(|r| Ok(r?.get(pos).unwrap_or("").trim().to_string()))
        .collect()
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let pred_all = read_labels(&args.pred)?;
    let truth_all = match (&args.truth, &args.input, &args.truth_col) {
        (Some(t), _, _) => read_lines(t)?,
        (None, Some(input), Some(col)) => read_column(input, col, delimiter_byte(args.delimiter)?)?,
        _ => {
            return Err(CpfError::InvalidParam(
                "give either --truth or --input with --truth-col".into(),
            ))
        }
    };
    if pred_all.len() != truth_all.len() {
        return Err(CpfError::LengthMismatch {
            left: pred_all.len(),
            right: truth_all.len(),
        });
    }
    let rows = clustered_rows(&args.pred)?.unwrap_or_else(|| (0..pred_all.len()).collect());
    if rows.iter().any(|&r| r >= pred_all.len()) {
        return Err(CpfError::Schema("row map does not match the labels file".into()));
    }
    let pred: Vec<i64> = rows.iter().map(|&r| pred_all[r]).collect();
    let truth: Vec<&str> = rows.iter().map(|&r| truth_all[r].as_str()).collect();
    let scores = external_indices(&pred, &truth, policy(args.exclude_outliers))?;
    let text = serde_json::to_string_pretty(&scores)?;
    match &args.out {
        Some(path) => write_json(path, &scores)?,
        None => println!("{text}"),
    }
    Ok(())
}

pub fn cmd_decision_graph(args: &DecisionGraphArgs) -> Result<()> {
    let table = load(&args.data)?;
    let data = encode(&table, args.weights)?;
    let result = pipeline::cluster(&data, &args.model.params())?;
    if let Some(c) = args.component {
        if c >= result.peaks.len() {
            return Err(CpfError::InvalidParam(format!(
                "component {c} does not exist ({} components)",
                result.peaks.len()
            )));
        }
    }
    let path = args.out.clone().unwrap_or_else(|| "<stdout>".into());
    let mut out = output(args.out.as_ref())?;
    let mut emit = || -> std::io::Result<()> {
        match args.component {
            Some(_) => writeln!(out, "index,phi,omega,gamma")?,
            None => writeln!(out, "component,index,phi,omega,gamma")?,
        }
        for (id, cp) in result.peaks.iter().enumerate() {
            if args.component.is_some_and(|c| c != id) {
                continue;
            }
            for (pos, &p) in cp.members.iter().enumerate() {
                let s = &cp.stats;
                let row = format!(
                    "{p},{},{},{}",
                    format_float(s.phi[pos]),
                    format_float(s.omega[pos]),
                    format_float(s.gamma[pos])
                );
                match args.component {
                    Some(_) => writeln!(out, "{row}")?,
                    None => writeln!(out, "{id},{row}")?,
                }
            }
        }
        out.flush()
    };
    emit().map_err(io_err(&path))
}

pub fn cmd_components(args: &ComponentsArgs) -> Result<()> {
    let table = load(&args.data)?;
    let data = encode(&table, args.weights)?;
    if args.k == 0 {
        return Err(CpfError::InvalidParam("k must be at least 1".into()));
    }
    if args.k >= data.len() {
        return Err(CpfError::KTooLarge {
            k: args.k,
            n: data.len(),
        });
    }
    let threads = args.threads;
    let job = || -> Result<_> {
        let knn = knn_search(&data, args.k, KnnBackend::Exact)?;
        let graph = build_mutual_graph(knn);
        let partition = components(&graph);
        Ok((graph, partition))
    };
    let (graph, partition) = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CpfError::InvalidParam(format!("thread pool: {e}")))?
            .install(job)?,
        None => job()?,
    };
    let path = args.out.clone().unwrap_or_else(|| "<stdout>".into());
    let mut out = output(args.out.as_ref())?;
    let mut emit = || -> std::io::Result<()> {
        writeln!(out, "index,component")?;
        for (i, c) in partition.component_of.iter().enumerate() {
            match c {
                Some(c) => writeln!(out, "{i},{c}")?,
                None => writeln!(out, "{i},-1")?,
            }
        }
        out.flush()
    };
    emit().map_err(io_err(&path))?;
    if let Some(g) = &args.graph_out {
        let mut w = create(g)?;
        write_edges_csv(&graph, &mut w).map_err(io_err(g))?;
        w.flush().map_err(io_err(g))?;
    }
    Ok(())
}
