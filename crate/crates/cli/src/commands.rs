//! Subcommand implementations. Each takes a validated [`RunConfig`] and a
//! run directory, writes its artifacts, and records them in `run.json`.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use uditqc_core::codec::{EmbeddingTable, ErrorCircuit, TokenMatrix};
use uditqc_core::dataset::{
    generate_dataset, read_dataset, read_manifest, stream_rng, write_dataset, write_manifest, CircuitRecord,
    DatasetManifest, GenerationOutcome, Task,
};
use uditqc_core::{circuit_unitary, enumerate_srvs, frobenius_distance, Circuit, GateKind, Srv, UnitaryMatrix};
use uditqc_model::checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, MANIFEST_VERSION};
use uditqc_model::conditioning::{unitary_tensor, Condition};
use uditqc_model::eval::{
    background_mask, circuit_srv, edit_matrix, eval_compile, eval_mask, eval_srv, generate, row_padding_mask,
    write_json, BaselineSpec, CompilationReport, CompileTarget, EditMatrix, EvalContext, MaskReport, PrefixPlan,
    SrvEvaluation,
};
use uditqc_model::train::{StepLog, TrainReport};
use uditqc_model::{train, CircuitDenoiser, NoiseSchedule, SamplerConfig, TrainObserver, TrainingSet};

use crate::config::RunConfig;
use crate::error::{config, CliError, Result};
use crate::run::RunDir;

/// RNG stream that picks the held-out compile unitaries.
const HOLDOUT_STREAM: u64 = 0x4f1d;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub manifest: DatasetManifest,
    pub held_out: usize,
}

/// Generates the task's dataset. For the compile task, `eval.test_unitaries`
/// records are held out (and every training record sharing a canonical key
/// with them dropped).
pub fn gen_dataset(cfg: &RunConfig, run: &RunDir, task: Task) -> Result<DatasetSummary> {
    if cfg.task != task {
        return Err(config(format!("config.task is {:?}, which does not match this subcommand", cfg.task)));
    }
    fs::create_dir_all(run.root())?;
    let outcome = generate_dataset(&cfg.dataset)?;
    let (train_records, test_records) = match task {
        Task::Srv => (outcome.records.clone(), Vec::new()),
        Task::Compile => hold_out(&outcome.records, cfg.eval.test_unitaries, cfg.dataset.seed)?,
    };
    let mut per_class_counts = vec![0; outcome.class_names.len()];
    for r in &train_records {
        per_class_counts[r.label] += 1;
    }
    let kept = GenerationOutcome { records: train_records, per_class_counts, ..outcome };
    let hash = write_dataset(run.dataset(), &kept.records)?;
    let manifest = DatasetManifest::new(&cfg.dataset, &kept, hash)?;
    write_manifest(run.dataset_manifest(), &manifest)?;
    let cmd = match task {
        Task::Srv => "dataset gen-srv",
        Task::Compile => "dataset gen-compile",
    };
    run.record("dataset", &run.dataset(), cmd)?;
    run.record("dataset_manifest", &run.dataset_manifest(), cmd)?;
    if task == Task::Compile {
        write_dataset(run.test_set(), &test_records)?;
        run.record("test_unitaries", &run.test_set(), cmd)?;
    }
    info!("wrote {} records in {} classes to {}", manifest.records, manifest.classes.len(), run.dataset().display());
    Ok(DatasetSummary { manifest, held_out: test_records.len() })
}

fn hold_out(records: &[CircuitRecord], k: usize, seed: u64) -> Result<(Vec<CircuitRecord>, Vec<CircuitRecord>)> {
    if k >= records.len() {
        return Err(config(format!(
            "config.eval.test_unitaries: cannot hold out {k} of {} generated records",
            records.len()
        )));
    }
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut stream_rng(seed, HOLDOUT_STREAM));
    let mut test_idx = idx[..k].to_vec();
    test_idx.sort_unstable();
    let test: Vec<CircuitRecord> = test_idx.iter().map(|&i| records[i].clone()).collect();
    let keys: HashSet<String> = test.iter().map(CircuitRecord::canonical_key).collect();
    let chosen: HashSet<usize> = test_idx.into_iter().collect();
    let train = records
        .iter()
        .enumerate()
        .filter(|(i, r)| !chosen.contains(i) && !keys.contains(&r.canonical_key()))
        .map(|(_, r)| r.clone())
        .collect();
    Ok((train, test))
}

fn embedding_table(cfg: &RunConfig) -> Result<EmbeddingTable> {
    Ok(EmbeddingTable::build(&cfg.vocabulary()?, cfg.embedding_seed))
}

fn load_records(path: &Path) -> Result<Vec<CircuitRecord>> {
    if !path.exists() {
        return Err(CliError::Io(format!("{} not found; generate the dataset first", path.display())));
    }
    Ok(read_dataset(path)?)
}

struct CheckpointWriter<'a> {
    run: &'a RunDir,
    template: CheckpointManifest,
    log: csv::Writer<fs::File>,
    last: Option<PathBuf>,
}

impl TrainObserver for CheckpointWriter<'_> {
    fn on_step(&mut self, log: &StepLog) -> uditqc_model::Result<()> {
        self.log.serialize(log)?;
        Ok(())
    }

    fn on_checkpoint(&mut self, epoch: usize, step: usize, model: &CircuitDenoiser) -> uditqc_model::Result<()> {
        let m = CheckpointManifest { epoch, step, ..self.template.clone() };
        let path = save_checkpoint(&self.run.checkpoints(), &format!("epoch-{:04}", epoch + 1), model, &m)?;
        self.log.flush()?;
        info!("checkpoint {}", path.display());
        self.last = Some(path);
        Ok(())
    }

    fn last_checkpoint(&self) -> Option<String> {
        self.last.as_ref().map(|p| p.display().to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub report: TrainReport,
    pub checkpoint: PathBuf,
    pub parameters: usize,
}

pub fn train_cmd(cfg: &RunConfig, run: &RunDir) -> Result<TrainSummary> {
    let records = load_records(&run.dataset())?;
    let data_manifest = read_manifest(run.dataset_manifest())?;
    // Size and seed overrides at generation time are fine; the token layout is not.
    let spec = &data_manifest.spec;
    if spec.task != cfg.task || spec.gate_pool != cfg.dataset.gate_pool || spec.qubits != cfg.dataset.qubits {
        return Err(config("config.dataset task, gate pool or qubits differ from the run's dataset; regenerate it"));
    }
    let table = embedding_table(cfg)?;
    let data = TrainingSet::from_records(&records, &table, cfg.canvas(), cfg.dtype())?;
    let model = CircuitDenoiser::new(&cfg.model, cfg.seed, cfg.dtype())?;
    let parameters = model.store().num_parameters();
    info!("training {parameters} parameters on {} records", records.len());
    fs::create_dir_all(run.checkpoints())?;
    let log_path = run.root().join("train_log.csv");
    let template = CheckpointManifest {
        version: MANIFEST_VERSION,
        task: cfg.task,
        model: cfg.model.clone(),
        vocab: cfg.vocabulary()?,
        embedding_seed: cfg.embedding_seed,
        timesteps: cfg.train.timesteps,
        param_seed: cfg.seed,
        epoch: 0,
        step: 0,
        class_names: data_manifest.classes.clone(),
        weights: String::new(),
        weights_sha256: String::new(),
    };
    let mut writer = CheckpointWriter { run, template, log: csv::Writer::from_path(&log_path)?, last: None };
    let report = train(&model, &data, &cfg.train, &mut writer)?;
    writer.log.flush()?;
    let checkpoint = writer.last.clone().expect("the final epoch always checkpoints");
    let report_path = run.root().join("train_report.json");
    write_json(&report_path, &report)?;
    run.record("train_log", &log_path, "train")?;
    run.record("train_report", &report_path, "train")?;
    run.record("checkpoint", &checkpoint, "train")?;
    Ok(TrainSummary { report, checkpoint, parameters })
}

/// Loads a checkpoint and checks it against the configuration.
pub fn load_model(cfg: &RunConfig, run: &RunDir, checkpoint: Option<&Path>) -> Result<(CircuitDenoiser, CheckpointManifest)> {
    let path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => run.latest_checkpoint()?,
    };
    if !path.exists() {
        return Err(CliError::Io(format!("checkpoint {} not found", path.display())));
    }
    let (model, m) = load_checkpoint(&path, cfg.dtype())?;
    if m.model != cfg.model || m.task != cfg.task {
        return Err(config(format!("checkpoint {} was trained with a different model or task", path.display())));
    }
    if m.vocab != cfg.vocabulary()? || m.embedding_seed != cfg.embedding_seed {
        return Err(config(format!("checkpoint {} uses a different token embedding", path.display())));
    }
    Ok((model, m))
}

/// Per-invocation overrides shared by `sample` and `eval`.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub checkpoint: Option<PathBuf>,
    pub n: Option<usize>,
    pub steps: Option<usize>,
    pub cfg_scale: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    fn sampler(&self, cfg: &RunConfig) -> SamplerConfig {
        let mut s = cfg.sampler;
        if let Some(steps) = self.steps {
            s.steps = steps;
        }
        if let Some(scale) = self.cfg_scale {
            s.cfg_scale = scale;
        }
        s
    }
}

fn context<'a>(cfg: &RunConfig, table: &'a EmbeddingTable, schedule: &'a NoiseSchedule, o: &Overrides) -> Result<EvalContext<'a>> {
    let sampler = o.sampler(cfg);
    sampler.validate(schedule).map_err(|e| config(format!("sampler: {e}")))?;
    Ok(EvalContext {
        table,
        schedule,
        sampler,
        canvas: cfg.canvas(),
        qubits: cfg.dataset.qubits,
        batch_size: cfg.eval.batch_size,
        seed: cfg.seed,
        dtype: cfg.dtype(),
    })
}

/// What `sample` conditions on.
#[derive(Debug, Clone)]
pub enum Prompt {
    Srv(Srv),
    Label(usize),
    /// Compile task: the target is the unitary of `circuit`; the label
    /// defaults to the set of gate kinds the circuit uses.
    Unitary { circuit: Circuit, label: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub label: usize,
    pub prompt: String,
    pub tokens: Vec<Vec<i32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub circuit: Option<Circuit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorCircuit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub srv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

/// Index of the gate-subset class holding exactly the kinds `c` uses.
fn subset_label(pool: &[GateKind], c: &Circuit) -> Result<usize> {
    let mut mask = 0usize;
    for g in c.gates() {
        let i = pool
            .iter()
            .position(|&k| k == g.kind())
            .ok_or_else(|| config(format!("target uses {}, which is outside the gate pool", g.kind().name())))?;
        mask |= 1 << i;
    }
    if mask == 0 {
        return Err(config("target circuit is empty; pass --label"));
    }
    Ok(mask - 1)
}

fn token_rows(t: &TokenMatrix) -> Vec<Vec<i32>> {
    (0..t.rows()).map(|q| (0..t.cols()).map(|c| t.get(q, c)).collect()).collect()
}

pub fn sample_cmd(cfg: &RunConfig, run: &RunDir, prompt: &Prompt, o: &Overrides) -> Result<(PathBuf, Vec<SampleRecord>)> {
    let (model, manifest) = load_model(cfg, run, o.checkpoint.as_deref())?;
    let table = embedding_table(cfg)?;
    let schedule = NoiseSchedule::cosine(cfg.model.conditioning.timesteps)?;
    let ctx = context(cfg, &table, &schedule, o)?;
    let n = o.n.unwrap_or(8);
    let classes = cfg.num_classes();
    let q = cfg.dataset.qubits;
    let (label, target): (usize, Option<UnitaryMatrix>) = match (prompt, cfg.task) {
        (Prompt::Srv(s), Task::Srv) => {
            let label = enumerate_srvs(q)
                .iter()
                .position(|c| c == s)
                .ok_or_else(|| config(format!("--srv {s} is not a valid {q}-qubit SRV")))?;
            (label, None)
        }
        (Prompt::Label(l), Task::Srv) => (*l, None),
        (Prompt::Unitary { circuit, label }, Task::Compile) => {
            let label = match label {
                Some(l) => *l,
                None => subset_label(&cfg.dataset.gate_pool, circuit)?,
            };
            (label, Some(circuit_unitary(&circuit.with_num_qubits(q)?)?))
        }
        _ => return Err(config("prompt kind does not match config.task")),
    };
    if label >= classes {
        return Err(config(format!("label {label} outside 0..{classes}")));
    }
    let u = target.as_ref().map(|u| unitary_tensor(std::slice::from_ref(u), cfg.dtype())).transpose()?;
    let cond_for = |b: usize| -> uditqc_model::Result<Condition> {
        Ok(match &u {
            Some(u) => Condition::with_unitaries(vec![label; b], u.repeat((b, 1, 1, 1))?),
            None => Condition::labels(vec![label; b]),
        })
    };
    let generated = generate(&model, &ctx, 0, n, &cond_for, None)?;
    let prompt_name = manifest.class_names[label].clone();
    let mut out = Vec::with_capacity(n);
    for (index, g) in generated.into_iter().enumerate() {
        let mut rec = SampleRecord {
            index,
            label,
            prompt: prompt_name.clone(),
            tokens: token_rows(&g.tokens),
            circuit: None,
            error: None,
            srv: None,
            distance: None,
        };
        match g.circuit {
            Ok(c) => {
                let c = c.with_num_qubits(q)?;
                match &target {
                    Some(t) => rec.distance = Some(frobenius_distance(&circuit_unitary(&c)?, t)?),
                    None => rec.srv = Some(circuit_srv(&c)?.to_string()),
                }
                rec.circuit = Some(c);
            }
            Err(e) => rec.error = Some(e),
        }
        out.push(rec);
    }
    let path = o.out.clone().unwrap_or_else(|| run.samples().join(format!("label-{label}.jsonl")));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
    for r in &out {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    if path.starts_with(run.root()) {
        run.record(&format!("samples.label-{label}"), &path, "sample")?;
    }
    Ok((path, out))
}

fn training_keys(run: &RunDir, qubits: usize) -> Result<HashSet<String>> {
    let records = load_records(&run.dataset())?;
    records
        .iter()
        .map(|r| Ok(r.circuit.with_num_qubits(qubits)?.canonical_key()))
        .collect()
}

fn report_dir(run: &RunDir, o: &Overrides, name: &str) -> PathBuf {
    o.out.clone().unwrap_or_else(|| run.reports().join(name))
}

fn require_task(cfg: &RunConfig, task: Task) -> Result<()> {
    if cfg.task != task {
        return Err(config(format!("this evaluation needs config.task = {task:?}, found {:?}", cfg.task)));
    }
    Ok(())
}

pub fn eval_srv_cmd(cfg: &RunConfig, run: &RunDir, o: &Overrides) -> Result<SrvEvaluation> {
    require_task(cfg, Task::Srv)?;
    let (model, _) = load_model(cfg, run, o.checkpoint.as_deref())?;
    let table = embedding_table(cfg)?;
    let schedule = NoiseSchedule::cosine(cfg.model.conditioning.timesteps)?;
    let ctx = context(cfg, &table, &schedule, o)?;
    let keys = training_keys(run, cfg.dataset.qubits)?;
    let ev = eval_srv(&model, &ctx, o.n.unwrap_or(cfg.eval.samples), &keys)?;
    let dir = report_dir(run, o, "srv");
    ev.write(&dir)?;
    if dir.starts_with(run.root()) {
        run.record("report.srv", &dir.join("srv_report.json"), "eval srv")?;
    }
    Ok(ev)
}

/// Mask for `eval mask`: padded qubit rows and cells forced to "no gate".
#[derive(Debug, Clone, Default)]
pub struct MaskOptions {
    pub srv: Option<Srv>,
    pub pad_rows: Vec<usize>,
    pub blank_cells: Vec<(usize, usize)>,
}

pub fn eval_mask_cmd(cfg: &RunConfig, run: &RunDir, mask: &MaskOptions, o: &Overrides) -> Result<MaskReport> {
    require_task(cfg, Task::Srv)?;
    let prompt = mask.srv.clone().ok_or_else(|| config("eval mask needs --srv"))?;
    let label = enumerate_srvs(cfg.dataset.qubits)
        .iter()
        .position(|c| *c == prompt)
        .ok_or_else(|| config(format!("--srv {prompt} is not a valid SRV for config.dataset.qubits")))?;
    let (model, _) = load_model(cfg, run, o.checkpoint.as_deref())?;
    let table = embedding_table(cfg)?;
    let schedule = NoiseSchedule::cosine(cfg.model.conditioning.timesteps)?;
    let ctx = context(cfg, &table, &schedule, o)?;
    let canvas = cfg.canvas();
    let mut spec = background_mask(canvas, &mask.blank_cells)?;
    if !mask.pad_rows.is_empty() {
        let pad = row_padding_mask(canvas, &mask.pad_rows, table.vocab().padding())?;
        let mut known = spec.known().clone();
        let mut cells = spec.mask().to_vec();
        for r in 0..canvas.0 {
            for c in 0..canvas.1 {
                if pad.is_masked(r, c) {
                    known.set(r, c, pad.known().get(r, c));
                    cells[r * canvas.1 + c] = true;
                }
            }
        }
        spec = uditqc_model::InpaintSpec::new(known, cells)?;
    }
    let keys = training_keys(run, cfg.dataset.qubits)?;
    let report = eval_mask(&model, &ctx, &spec, label, o.n.unwrap_or(cfg.eval.samples), &keys)?;
    let dir = report_dir(run, o, "mask");
    write_json(&dir.join("mask_report.json"), &report)?;
    uditqc_model::eval::write_reports_csv(&dir.join("mask_report.csv"), std::slice::from_ref(&report.report))?;
    if dir.starts_with(run.root()) {
        run.record("report.mask", &dir.join("mask_report.json"), "eval mask")?;
    }
    Ok(report)
}

pub fn eval_edit_cmd(cfg: &RunConfig, run: &RunDir, o: &Overrides) -> Result<EditMatrix> {
    require_task(cfg, Task::Srv)?;
    let edit = cfg.eval.edit.clone().ok_or_else(|| config("config.eval.edit is required for eval edit"))?;
    let (model, _) = load_model(cfg, run, o.checkpoint.as_deref())?;
    let table = embedding_table(cfg)?;
    let schedule = NoiseSchedule::cosine(cfg.model.conditioning.timesteps)?;
    let ctx = context(cfg, &table, &schedule, o)?;
    let plan = PrefixPlan {
        pool: cfg.dataset.gate_pool.clone(),
        min_gates: edit.min_gates,
        max_gates: edit.max_gates,
        per_cell: edit.prefixes_per_cell,
        max_attempts: edit.max_attempts,
    };
    let m = edit_matrix(&model, &ctx, &plan, o.n.unwrap_or(cfg.eval.samples))?;
    let dir = report_dir(run, o, "edit");
    m.write(&dir)?;
    if dir.starts_with(run.root()) {
        run.record("report.edit", &dir.join("edit_report.json"), "eval edit")?;
    }
    Ok(m)
}

pub fn eval_compile_cmd(cfg: &RunConfig, run: &RunDir, o: &Overrides) -> Result<CompilationReport> {
    require_task(cfg, Task::Compile)?;
    let (model, _) = load_model(cfg, run, o.checkpoint.as_deref())?;
    let table = embedding_table(cfg)?;
    let schedule = NoiseSchedule::cosine(cfg.model.conditioning.timesteps)?;
    let ctx = context(cfg, &table, &schedule, o)?;
    let test = load_records(&run.test_set())?;
    let targets: Vec<CompileTarget> = test
        .iter()
        .map(|r| {
            let unitary = r.unitary.clone().map_or_else(|| circuit_unitary(&r.circuit), Ok)?;
            Ok(CompileTarget { unitary, label: r.label, key: Some(r.canonical_key()) })
        })
        .collect::<Result<_>>()?;
    let keys: HashSet<String> = load_records(&run.dataset())?.iter().map(CircuitRecord::canonical_key).collect();
    let baseline = BaselineSpec {
        pool: cfg.dataset.gate_pool.clone(),
        min_gates: cfg.dataset.min_gates,
        max_gates: cfg.dataset.max_gates,
    };
    let report =
        eval_compile(&model, &ctx, &targets, o.n.unwrap_or(cfg.eval.samples), cfg.eval.tolerance, &keys, &baseline)?;
    let dir = report_dir(run, o, "compile");
    report.write(&dir)?;
    if dir.starts_with(run.root()) {
        run.record("report.compile", &dir.join("compile_report.json"), "eval compile")?;
    }
    Ok(report)
}

/// ASCII diagrams for every circuit found in a JSON or JSON-lines file:
/// bare circuits, dataset records, or `sample` output.
pub fn inspect(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let values: Vec<serde_json::Value> = match serde_json::from_str::<serde_json::Value>(&text) {
        Ok(serde_json::Value::Array(items)) => items,
        Ok(v) => vec![v],
        Err(_) => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CliError::Io(format!("{}: not JSON or JSON lines: {e}", path.display())))?,
    };
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        let circuit = v.get("circuit").unwrap_or(v);
        let mut header = format!("# {i}");
        for key in ["prompt", "srv", "label", "distance"] {
            if let Some(x) = v.get(key) {
                header.push_str(&format!("  {key}={x}"));
            }
        }
        out.push_str(&header);
        out.push('\n');
        if let Some(err) = v.get("error").filter(|e| !e.is_null()) {
            let e: ErrorCircuit = serde_json::from_value(err.clone())?;
            out.push_str(&format!("error circuit: {e}\n"));
            continue;
        }
        let c: Circuit = serde_json::from_value(circuit.clone())
            .map_err(|e| CliError::Io(format!("{}: entry {i} is not a circuit: {e}", path.display())))?;
        out.push_str(&c.diagram());
    }
    Ok(out)
}
