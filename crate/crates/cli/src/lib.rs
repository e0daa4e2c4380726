//! Experiment runner behind the `en2as` binary: config loading, seeded
//! execution, the controller-by-selector comparison grid, and results
//! emission (JSON documents, JSONL traces, CSV summaries).

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use en2as_core::arch::{CellSpec, Op};
use en2as_core::novelty::Archive;
use en2as_core::oracle::{OracleConfig, TabularOracle};
use en2as_core::search::{
    run_oracle_pipeline_full, run_pipeline_full, RunResult, SearchConfig, TrainTraces,
};
use en2as_core::stats;
use en2as_core::supernet::{make_dataset, MicroDataset, SplitSizes};

/// Errors split by exit code: configuration problems exit 1, runtime
/// failures exit 2.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// `[spec]` section of config and plan files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub num_input_nodes: usize,
    pub num_op_nodes: usize,
    pub inputs_per_node: usize,
    pub ops: Vec<Op>,
    pub num_cell_types: usize,
}

impl SpecConfig {
    pub fn build(&self) -> CliResult<CellSpec> {
        CellSpec::new(
            self.num_input_nodes,
            self.num_op_nodes,
            self.inputs_per_node,
            self.ops.clone(),
            self.num_cell_types,
        )
        .map_err(config_err)
    }
}

/// `[backend.dataset]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub noise: f64,
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl DatasetConfig {
    pub fn build(&self) -> CliResult<MicroDataset> {
        make_dataset(
            &self.name,
            SplitSizes::new(self.train, self.val, self.test),
            self.noise,
            self.seed,
        )
        .map_err(config_err)
    }
}

/// `[backend]` section: exactly one of the dataset or oracle tables,
/// matching `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
}

impl BackendConfig {
    fn validate(&self) -> CliResult<()> {
        match (self.kind.as_str(), &self.dataset, &self.oracle) {
            ("dataset", Some(_), None) => Ok(()),
            ("oracle", None, Some(_)) => Ok(()),
            ("dataset", _, _) => Err(CliError::Config(
                "backend kind `dataset` needs exactly a [backend.dataset] table".into(),
            )),
            ("oracle", _, _) => Err(CliError::Config(
                "backend kind `oracle` needs exactly a [backend.oracle] table".into(),
            )),
            (other, _, _) => Err(CliError::Config(format!(
                "unknown backend kind `{other}` (expected dataset or oracle)"
            ))),
        }
    }
}

/// A whole `en2as search` configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: SpecConfig,
    pub search: SearchConfig,
    pub backend: BackendConfig,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("in {}: {e}", path.display())))?;
        cfg.backend.validate()?;
        cfg.search.validate().map_err(config_err)?;
        Ok(cfg)
    }
}

/// One cell of a comparison grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub label: String,
    pub search: SearchConfig,
}

/// A whole `en2as compare` plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub repeats: usize,
    pub master_seed: u64,
    pub spec: SpecConfig,
    pub backend: BackendConfig,
    pub cells: Vec<CellConfig>,
}

impl PlanConfig {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read plan {}: {e}", path.display())))?;
        let plan: PlanConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("in {}: {e}", path.display())))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.repeats < 1 {
            return Err(CliError::Config("repeats must be >= 1".into()));
        }
        if self.cells.is_empty() {
            return Err(CliError::Config("plan needs at least one cell".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for cell in &self.cells {
            if cell.label.is_empty()
                || !cell
                    .label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || "+-_.".contains(c))
            {
                return Err(CliError::Config(format!(
                    "label `{}` must be non-empty and use only [A-Za-z0-9+-_.]",
                    cell.label
                )));
            }
            if !seen.insert(cell.label.clone()) {
                return Err(CliError::Config(format!(
                    "duplicate cell label `{}`",
                    cell.label
                )));
            }
            cell.search.validate().map_err(config_err)?;
        }
        self.backend.validate()
    }
}

/// Write-temp-then-rename so partial files never appear under the final
/// name.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let parent = path
        .parent()
        .ok_or_else(|| CliError::Runtime(format!("no parent dir for {}", path.display())))?;
    fs::create_dir_all(parent).map_err(runtime_err)?;
    let tmp = parent.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into())
    ));
    fs::write(&tmp, contents).map_err(runtime_err)?;
    fs::rename(&tmp, path).map_err(runtime_err)?;
    Ok(())
}

fn traces_jsonl(traces: &TrainTraces) -> CliResult<String> {
    let mut out = String::new();
    for record in &traces.records {
        let line = serde_json::to_string(record).map_err(runtime_err)?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

fn archive_snapshot_text(archive: &Archive) -> CliResult<String> {
    let mut buf = Vec::new();
    archive.write_snapshot(&mut buf).map_err(runtime_err)?;
    String::from_utf8(buf).map_err(runtime_err)
}

type BackendOutput = (RunResult, Archive, TrainTraces);

fn run_backend(
    cfg: &SearchConfig,
    spec: &CellSpec,
    backend: &BackendConfig,
) -> CliResult<BackendOutput> {
    match backend.kind.as_str() {
        "dataset" => {
            let dataset = backend
                .dataset
                .as_ref()
                .expect("validated backend")
                .build()?;
            run_pipeline_full(cfg, &dataset, spec).map_err(runtime_err)
        }
        "oracle" => {
            let oracle_cfg = backend.oracle.as_ref().expect("validated backend");
            let oracle = TabularOracle::from_config(spec, oracle_cfg).map_err(config_err)?;
            run_oracle_pipeline_full(cfg, &oracle, spec).map_err(runtime_err)
        }
        _ => unreachable!("backend validated earlier"),
    }
}

/// Runs one seeded search and writes `result.json`, `trace.jsonl`, and
/// `archive.txt` into `out_dir`. Returns a one-line summary.
///
/// Seed priority: explicit `seed` argument, then the `EN2AS_SEED`
/// environment variable, then the config's `master_seed`.
pub fn cmd_search(config_path: &Path, seed: Option<u64>, out_dir: &Path) -> CliResult<String> {
    let experiment = ExperimentConfig::from_path(config_path)?;
    let env_seed = std::env::var("EN2AS_SEED")
        .ok()
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| CliError::Config(format!("EN2AS_SEED is not a u64: `{s}`")))
        })
        .transpose()?;
    let mut cfg = experiment.search.clone();
    if let Some(s) = seed.or(env_seed) {
        cfg.master_seed = s;
    }
    let spec = experiment.spec.build()?;
    let (result, archive, traces) = run_backend(&cfg, &spec, &experiment.backend)?;

    let result_json = serde_json::to_string_pretty(&result).map_err(runtime_err)?;
    write_atomic(&out_dir.join("result.json"), result_json.as_bytes())?;
    write_atomic(
        &out_dir.join("trace.jsonl"),
        traces_jsonl(&traces)?.as_bytes(),
    )?;
    write_atomic(
        &out_dir.join("archive.txt"),
        archive_snapshot_text(&archive)?.as_bytes(),
    )?;

    Ok(format!(
        "search seed={} controller={} selector={} selected_acc={:.4} test_acc={:.4} out={}",
        cfg.master_seed,
        cfg.controller.name(),
        cfg.selector.name(),
        result.selected_accuracy,
        result.retrained_test_accuracy,
        out_dir.display()
    ))
}

/// One row of the long-format output: a single (cell, repeat) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LongRecord {
    pub label: String,
    pub controller: String,
    pub selector: String,
    pub repeat: usize,
    pub seed: u64,
    pub acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub diversity: Option<f64>,
    pub runtime_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Aggregate of one grid cell over its successful repeats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub label: String,
    pub controller: String,
    pub selector: String,
    pub runs: usize,
    pub failed_runs: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_diversity: f64,
    pub runtime_s: f64,
}

pub const SUMMARY_CSV_HEADER: &str =
    "label,controller,selector,mean_acc,std_acc,mean_diversity,runtime_s";

/// Runs every grid cell `repeats` times with seeds `master_seed + r`,
/// writes per-run JSON documents, a consolidated `summary.csv`, and
/// long-format `long.jsonl`. Cells run in parallel when `jobs > 1`.
/// Errors (exit 2) if any cell fails on every repeat.
pub fn cmd_compare(plan_path: &Path, out_dir: &Path, jobs: usize) -> CliResult<String> {
    let plan = PlanConfig::from_path(plan_path)?;
    let spec = plan.spec.build()?;
    if jobs < 1 {
        return Err(CliError::Config("--jobs must be >= 1".into()));
    }

    let mut tasks = Vec::new();
    for cell_idx in 0..plan.cells.len() {
        for repeat in 0..plan.repeats {
            tasks.push((cell_idx, repeat));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(runtime_err)?;
    let outcomes: Vec<(usize, usize, Result<BackendOutput, CliError>)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(cell_idx, repeat)| {
                let cell = &plan.cells[cell_idx];
                let mut cfg = cell.search.clone();
                cfg.master_seed = plan.master_seed + repeat as u64;
                let run = run_backend(&cfg, &spec, &plan.backend);
                (cell_idx, repeat, run)
            })
            .collect()
    });

    let mut long_records: Vec<LongRecord> = Vec::with_capacity(tasks.len());
    let mut per_cell: Vec<Vec<&RunResult>> = vec![Vec::new(); plan.cells.len()];
    let mut results: Vec<Option<RunResult>> = Vec::with_capacity(tasks.len());
    for (cell_idx, repeat, outcome) in &outcomes {
        let cell = &plan.cells[*cell_idx];
        match outcome {
            Ok((result, _, traces)) => {
                let run_dir = out_dir.join(&cell.label);
                let json = serde_json::to_string_pretty(result).map_err(runtime_err)?;
                write_atomic(&run_dir.join(format!("run_{repeat}.json")), json.as_bytes())?;
                write_atomic(
                    &run_dir.join(format!("run_{repeat}.trace.jsonl")),
                    traces_jsonl(traces)?.as_bytes(),
                )?;
                long_records.push(LongRecord {
                    label: cell.label.clone(),
                    controller: cell.search.controller.name().into(),
                    selector: cell.search.selector.name().into(),
                    repeat: *repeat,
                    seed: result.seed,
                    acc: Some(result.selected_accuracy),
                    test_acc: Some(result.retrained_test_accuracy),
                    diversity: result.diversity_trace.last().copied(),
                    runtime_s: result.timing.total_s,
                    error: None,
                });
                results.push(Some(result.clone()));
            }
            Err(e) => {
                long_records.push(LongRecord {
                    label: cell.label.clone(),
                    controller: cell.search.controller.name().into(),
                    selector: cell.search.selector.name().into(),
                    repeat: *repeat,
                    seed: plan.master_seed + *repeat as u64,
                    acc: None,
                    test_acc: None,
                    diversity: None,
                    runtime_s: 0.0,
                    error: Some(e.to_string()),
                });
                results.push(None);
            }
        }
    }
    for (i, (cell_idx, _, _)) in outcomes.iter().enumerate() {
        if let Some(r) = &results[i] {
            per_cell[*cell_idx].push(r);
        }
    }

    let mut summaries = Vec::with_capacity(plan.cells.len());
    let mut fully_failed = Vec::new();
    for (cell_idx, cell) in plan.cells.iter().enumerate() {
        let runs = &per_cell[cell_idx];
        if runs.is_empty() {
            fully_failed.push(cell.label.clone());
        }
        let accs: Vec<f64> = runs.iter().map(|r| r.selected_accuracy).collect();
        let divs: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.diversity_trace.last().copied())
            .collect();
        let times: Vec<f64> = runs.iter().map(|r| r.timing.total_s).collect();
        summaries.push(CellSummary {
            label: cell.label.clone(),
            controller: cell.search.controller.name().into(),
            selector: cell.search.selector.name().into(),
            runs: runs.len(),
            failed_runs: plan.repeats - runs.len(),
            mean_acc: stats::mean(&accs),
            std_acc: stats::std_dev(&accs),
            mean_diversity: stats::mean(&divs),
            runtime_s: stats::mean(&times),
        });
    }

    let mut csv = String::from(SUMMARY_CSV_HEADER);
    csv.push('\n');
    for s in &summaries {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            s.label, s.controller, s.selector, s.mean_acc, s.std_acc, s.mean_diversity, s.runtime_s
        )
        .expect("writing to String cannot fail");
    }
    write_atomic(&out_dir.join("summary.csv"), csv.as_bytes())?;

    let mut long = String::new();
    for record in &long_records {
        long.push_str(&serde_json::to_string(record).map_err(runtime_err)?);
        long.push('\n');
    }
    write_atomic(&out_dir.join("long.jsonl"), long.as_bytes())?;

    let summary_json = serde_json::to_string_pretty(&summaries).map_err(runtime_err)?;
    write_atomic(&out_dir.join("summary.json"), summary_json.as_bytes())?;

    if !fully_failed.is_empty() {
        return Err(CliError::Runtime(format!(
            "cells failed on every repeat: {}",
            fully_failed.join(", ")
        )));
    }
    Ok(format!(
        "compare cells={} repeats={} out={}",
        plan.cells.len(),
        plan.repeats,
        out_dir.display()
    ))
}

/// (cell, node, slot, source, op) rows of a genotype text file.
type GenotypeRows = Vec<(usize, usize, usize, usize, usize)>;

fn pretty_genotype_lines(
    header: &[usize],
    edges: &[(usize, usize, usize, usize, usize)],
    ops: Option<&[Op]>,
) -> Vec<String> {
    let num_inputs = header[0];
    let mut out = Vec::new();
    let mut current_cell = usize::MAX;
    for &(cell, node, slot, source, op) in edges {
        if cell != current_cell {
            out.push(format!("cell {cell}:"));
            current_cell = cell;
        }
        let src = if source < num_inputs {
            format!("input {source}")
        } else {
            format!("node {}", source - num_inputs)
        };
        let op_str = match ops {
            Some(ops) if op < ops.len() => ops[op].name().to_string(),
            _ => format!("op {op}"),
        };
        out.push(format!("  node {node} slot {slot} <- {src} [{op_str}]"));
    }
    out
}

fn parse_genotype_text(text: &str) -> CliResult<(Vec<usize>, GenotypeRows)> {
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| CliError::Config("empty genotype file".into()))?;
    let toks: Vec<&str> = header_line.split_whitespace().collect();
    if toks.len() != 6 || toks[0] != "cellspec" {
        return Err(CliError::Config("bad genotype header".into()));
    }
    let header: Vec<usize> = toks[1..]
        .iter()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| CliError::Config(format!("bad header field `{t}`")))
        })
        .collect::<CliResult<_>>()?;
    let mut edges = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<usize> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| CliError::Config(format!("line {}: bad field `{t}`", i + 2)))
            })
            .collect::<CliResult<_>>()?;
        if f.len() != 5 {
            return Err(CliError::Config(format!(
                "line {}: expected 5 fields",
                i + 2
            )));
        }
        edges.push((f[0], f[1], f[2], f[3], f[4]));
    }
    let expected = header[4] * header[1] * header[2];
    if edges.len() != expected {
        return Err(CliError::Config(format!(
            "expected {expected} edge lines, got {}",
            edges.len()
        )));
    }
    Ok((header, edges))
}

fn inspect_archive(archive: &Archive, w: &mut impl Write) -> CliResult<()> {
    let spec = archive.spec();
    writeln!(
        w,
        "archive: {} / {} entries",
        archive.len(),
        archive.capacity()
    )
    .map_err(runtime_err)?;
    let rounded = archive.rounded_entries();
    let mut min_d = f64::INFINITY;
    let mut max_d: f64 = 0.0;
    for i in 0..rounded.len() {
        for j in (i + 1)..rounded.len() {
            let d =
                en2as_core::arch::distance(&rounded[i], &rounded[j], spec).map_err(runtime_err)?;
            min_d = min_d.min(d);
            max_d = max_d.max(d);
        }
    }
    if rounded.len() < 2 {
        min_d = 0.0;
    }
    writeln!(
        w,
        "pairwise distance: mean {:.6} min {:.6} max {:.6}",
        archive.mean_pairwise_distance(),
        min_d,
        max_d
    )
    .map_err(runtime_err)?;

    writeln!(w, "per-slot histograms (source:op -> count):").map_err(runtime_err)?;
    for (cell, node, slot) in spec.edge_slots() {
        let mut counts: std::collections::BTreeMap<(usize, usize), usize> =
            std::collections::BTreeMap::new();
        for g in rounded {
            let e = g.edge(cell, node, slot);
            *counts.entry((e.source, e.op)).or_insert(0) += 1;
        }
        let total: usize = counts.values().sum();
        let parts: Vec<String> = counts
            .iter()
            .map(|((s, o), c)| format!("{s}:{o}={c}"))
            .collect();
        writeln!(
            w,
            "  cell {cell} node {node} slot {slot} (n={total}): {}",
            parts.join(" ")
        )
        .map_err(runtime_err)?;
    }
    Ok(())
}

fn inspect_result(text: &str, w: &mut impl Write) -> CliResult<()> {
    let result: RunResult = serde_json::from_str(text)
        .map_err(|e| CliError::Config(format!("bad result document: {e}")))?;
    writeln!(
        w,
        "run: seed={} controller={} selector={}",
        result.seed,
        result.config.controller.name(),
        result.config.selector.name()
    )
    .map_err(runtime_err)?;
    writeln!(
        w,
        "selected_acc={:.6} test_acc={:.6}",
        result.selected_accuracy, result.retrained_test_accuracy
    )
    .map_err(runtime_err)?;
    if let Some(d) = result.diversity_trace.last() {
        writeln!(w, "final archive diversity: {d:.6}").map_err(runtime_err)?;
    }
    writeln!(w, "selected genotype:").map_err(runtime_err)?;
    let (header, edges) = parse_genotype_text(&result.selected_genotype)?;
    for line in pretty_genotype_lines(&header, &edges, Some(result.spec.ops())) {
        writeln!(w, "{line}").map_err(runtime_err)?;
    }
    Ok(())
}

/// Pretty-prints an archive snapshot, a run result document, or a
/// serialized genotype, detected by content.
pub fn cmd_inspect(path: &Path, w: &mut impl Write) -> CliResult<()> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        inspect_result(&text, w)
    } else if text.starts_with("archive ") {
        let archive = Archive::read_snapshot(&mut text.as_bytes()).map_err(config_err)?;
        inspect_archive(&archive, w)
    } else if text.starts_with("cellspec ") {
        let (header, edges) = parse_genotype_text(&text)?;
        for line in pretty_genotype_lines(&header, &edges, None) {
            writeln!(w, "{line}").map_err(runtime_err)?;
        }
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{}: unrecognized file (expected result JSON, archive snapshot, or genotype text)",
            path.display()
        )))
    }
}

/// Re-exported for integration tests.
pub use en2as_core as core;
