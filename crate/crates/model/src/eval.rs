//! Evaluation protocols: prompted SRV generation, masked and prefix-edited
//! generation, and unitary compilation against a random-circuit baseline.
//!
//! Accuracies always divide by the number of samples drawn, so decoding
//! failures count against the model.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use candle_core::{DType, Tensor};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use uditqc_core::codec::{decode, detokenize, tokenize, EmbeddingTable, ErrorCircuit, TokenMatrix};
use uditqc_core::dataset::{sample_random_circuit, stream_rng};
use uditqc_core::{
    circuit_unitary, compute_srv, enumerate_srvs, frobenius_distance, phase_insensitive_distance, simulate, Circuit,
    GateKind, Srv, UnitaryMatrix,
};

use crate::conditioning::{unitary_tensor, Condition};
use crate::diffusion::{inpaint_sample, sample, to_circuit_tensors, Denoiser, InpaintSpec, NoiseSchedule, SamplerConfig};
use crate::error::{invalid, Result};

/// Default exact-match tolerance on the Frobenius distance.
pub const EXACT_TOL: f64 = 1e-6;

/// Sampling settings shared by every protocol.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    pub table: &'a EmbeddingTable,
    pub schedule: &'a NoiseSchedule,
    pub sampler: SamplerConfig,
    /// Canvas rows and columns of the model.
    pub canvas: (usize, usize),
    /// Register size circuits are evaluated on.
    pub qubits: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dtype: DType,
}

impl EvalContext<'_> {
    fn validate(&self) -> Result<()> {
        self.sampler.validate(self.schedule)?;
        if self.batch_size == 0 {
            return Err(invalid("evaluation batch size must be positive"));
        }
        if self.qubits == 0 || self.qubits > self.canvas.0 {
            return Err(invalid(format!("{} qubits do not fit a canvas of {} rows", self.qubits, self.canvas.0)));
        }
        Ok(())
    }
}

/// One generated canvas after decoding.
#[derive(Debug, Clone)]
pub struct Generated {
    pub tokens: TokenMatrix,
    pub circuit: std::result::Result<Circuit, ErrorCircuit>,
}

/// Draws `n` samples in batches. Batch `i` of job `job` uses its own RNG
/// stream, so results do not depend on how jobs are scheduled.
pub fn generate<M: Denoiser + Sync + ?Sized>(
    model: &M,
    ctx: &EvalContext,
    job: u64,
    n: usize,
    cond_for: &(dyn Fn(usize) -> Result<Condition> + Sync),
    inpaint: Option<&InpaintSpec>,
) -> Result<Vec<Generated>> {
    ctx.validate()?;
    let (q, t) = ctx.canvas;
    let mut out = Vec::with_capacity(n);
    for (batch, start) in (0..n).step_by(ctx.batch_size).enumerate() {
        let b = ctx.batch_size.min(n - start);
        let mut rng = stream_rng(ctx.seed, (job << 24) | batch as u64);
        let cond = cond_for(b)?;
        let x = match inpaint {
            Some(spec) => inpaint_sample(model, &cond, spec, &ctx.sampler, ctx.schedule, ctx.table, ctx.dtype, &mut rng)?,
            None => sample(model, &cond, (q, t, ctx.table.dim()), &ctx.sampler, ctx.schedule, ctx.dtype, &mut rng)?,
        };
        for tensor in to_circuit_tensors(&x)? {
            let tokens = decode(&tensor, ctx.table)?;
            let circuit = detokenize(&tokens, ctx.table.vocab());
            out.push(Generated { tokens, circuit });
        }
    }
    Ok(out)
}

/// Outcome of sampling under one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub prompt: String,
    pub label: usize,
    pub n_samples: usize,
    pub n_valid: usize,
    pub n_error: usize,
    /// Valid samples that also meet the prompted property.
    pub n_match: usize,
    pub accuracy: f64,
    pub distinct_count: usize,
    /// Distinct valid circuits absent from the training set.
    pub novel_count: usize,
    pub error_reasons: BTreeMap<String, usize>,
}

impl GenerationReport {
    fn tally(
        prompt: String,
        label: usize,
        samples: &[Generated],
        qubits: usize,
        training: &HashSet<String>,
        mut is_match: impl FnMut(&Circuit) -> Result<bool>,
    ) -> Result<Self> {
        let mut n_valid = 0;
        let mut n_match = 0;
        let mut keys = HashSet::new();
        let mut error_reasons = BTreeMap::new();
        for s in samples {
            match &s.circuit {
                Ok(c) => {
                    n_valid += 1;
                    let c = c.with_num_qubits(qubits)?;
                    if is_match(&c)? {
                        n_match += 1;
                    }
                    keys.insert(c.canonical_key());
                }
                Err(e) => *error_reasons.entry(e.reason.to_string()).or_insert(0) += 1,
            }
        }
        let n_samples = samples.len();
        Ok(Self {
            prompt,
            label,
            n_samples,
            n_valid,
            n_error: n_samples - n_valid,
            n_match,
            accuracy: if n_samples == 0 { 0.0 } else { n_match as f64 / n_samples as f64 },
            distinct_count: keys.len(),
            novel_count: keys.iter().filter(|k| !training.contains(*k)).count(),
            error_reasons,
        })
    }
}

/// SRV of a circuit's output state.
pub fn circuit_srv(circuit: &Circuit) -> Result<Srv> {
    Ok(compute_srv(&simulate(circuit)?)?)
}

/// Prompted class (rows) against produced class (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<usize>>,
    /// Entangled-qubit counts labelling the grouped view.
    pub group_labels: Vec<usize>,
    pub grouped: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    fn new(classes: &[Srv]) -> Self {
        let mut group_labels: Vec<usize> = classes.iter().map(Srv::entangled_count).collect();
        group_labels.sort_unstable();
        group_labels.dedup();
        let g = group_labels.len();
        Self {
            classes: classes.iter().map(|s| s.to_string()).collect(),
            counts: vec![vec![0; classes.len()]; classes.len()],
            group_labels,
            grouped: vec![vec![0; g]; g],
        }
    }

    fn record(&mut self, prompt: &Srv, produced: &Srv, classes: &[Srv]) {
        let (Some(i), Some(j)) = (classes.iter().position(|c| c == prompt), classes.iter().position(|c| c == produced))
        else {
            return;
        };
        self.counts[i][j] += 1;
        let group = |s: &Srv| self.group_labels.iter().position(|&g| g == s.entangled_count()).expect("grouped");
        let (gi, gj) = (group(prompt), group(produced));
        self.grouped[gi][gj] += 1;
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_grid(path, &self.classes, &self.classes, &self.counts)
    }

    pub fn write_grouped_csv(&self, path: &Path) -> Result<()> {
        let labels: Vec<String> = self.group_labels.iter().map(|g| format!("{g} entangled")).collect();
        write_grid(path, &labels, &labels, &self.grouped)
    }
}

fn write_grid<T: ToString>(path: &Path, rows: &[String], cols: &[String], cells: &[Vec<T>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["prompt \\ produced".to_string()];
    header.extend(cols.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in rows.iter().zip(cells) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(ToString::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrvEvaluation {
    pub qubits: usize,
    pub reports: Vec<GenerationReport>,
    pub confusion: ConfusionMatrix,
    /// Mean of per-prompt accuracies.
    pub macro_accuracy: f64,
    /// Matches over all samples of all prompts.
    pub micro_accuracy: f64,
}

impl SrvEvaluation {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("srv_report.json"), self)?;
        write_reports_csv(&dir.join("srv_prompts.csv"), &self.reports)?;
        self.confusion.write_csv(&dir.join("confusion.csv"))?;
        self.confusion.write_grouped_csv(&dir.join("confusion_grouped.csv"))
    }
}

fn macro_micro(reports: &[GenerationReport]) -> (f64, f64) {
    if reports.is_empty() {
        return (0.0, 0.0);
    }
    let macro_acc = reports.iter().map(|r| r.accuracy).sum::<f64>() / reports.len() as f64;
    let samples: usize = reports.iter().map(|r| r.n_samples).sum();
    let matches: usize = reports.iter().map(|r| r.n_match).sum();
    (macro_acc, if samples == 0 { 0.0 } else { matches as f64 / samples as f64 })
}

fn srv_labels(ctx: &EvalContext) -> Vec<Srv> {
    enumerate_srvs(ctx.qubits)
}

/// Samples `n` circuits for every SRV class of `ctx.qubits` and compares the
/// produced SRV to the prompt. Label `i` is the `i`-th enumerated SRV.
pub fn eval_srv<M: Denoiser + Sync + ?Sized>(
    model: &M,
    ctx: &EvalContext,
    n: usize,
    training: &HashSet<String>,
) -> Result<SrvEvaluation> {
    ctx.validate()?;
    let classes = srv_labels(ctx);
    let per_prompt: Vec<Result<(GenerationReport, Vec<Srv>)>> = classes
        .par_iter()
        .enumerate()
        .map(|(label, prompt)| {
            let samples = generate(model, ctx, label as u64, n, &|b| Ok(Condition::labels(vec![label; b])), None)?;
            let mut produced = Vec::new();
            let report = GenerationReport::tally(prompt.to_string(), label, &samples, ctx.qubits, training, |c| {
                let srv = circuit_srv(c)?;
                let hit = &srv == prompt;
                produced.push(srv);
                Ok(hit)
            })?;
            Ok((report, produced))
        })
        .collect();
    let mut confusion = ConfusionMatrix::new(&classes);
    let mut reports = Vec::with_capacity(classes.len());
    for (prompt, result) in classes.iter().zip(per_prompt) {
        let (report, produced) = result?;
        for srv in &produced {
            confusion.record(prompt, srv, &classes);
        }
        reports.push(report);
    }
    let (macro_accuracy, micro_accuracy) = macro_micro(&reports);
    Ok(SrvEvaluation { qubits: ctx.qubits, reports, confusion, macro_accuracy, micro_accuracy })
}

/// Masked generation result; `mask_violations` counts samples whose decoded
/// tokens differ from the specification in any enforced cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub report: GenerationReport,
    pub masked_cells: usize,
    pub mask_violations: usize,
    pub error_fraction: f64,
}

fn violates(tokens: &TokenMatrix, spec: &InpaintSpec) -> bool {
    let known = spec.known();
    (0..known.rows()).any(|q| (0..known.cols()).any(|t| spec.is_masked(q, t) && tokens.get(q, t) != known.get(q, t)))
}

/// Inpainting-constrained generation under an SRV prompt.
pub fn eval_mask<M: Denoiser + Sync + ?Sized>(
    model: &M,
    ctx: &EvalContext,
    spec: &InpaintSpec,
    label: usize,
    n: usize,
    training: &HashSet<String>,
) -> Result<MaskReport> {
    ctx.validate()?;
    let classes = srv_labels(ctx);
    let prompt = classes.get(label).ok_or_else(|| invalid(format!("SRV label {label} out of range")))?.clone();
    if (spec.known().rows(), spec.known().cols()) != ctx.canvas {
        return Err(invalid("mask does not match the model canvas"));
    }
    // An empty mask is plain prompted sampling.
    let constraint = (spec.masked_count() > 0).then_some(spec);
    let samples = generate(model, ctx, label as u64, n, &|b| Ok(Condition::labels(vec![label; b])), constraint)?;
    let mask_violations = samples.iter().filter(|s| violates(&s.tokens, spec)).count();
    let report = GenerationReport::tally(prompt.to_string(), label, &samples, ctx.qubits, training, |c| {
        Ok(circuit_srv(c)? == prompt)
    })?;
    let error_fraction = if n == 0 { 0.0 } else { report.n_error as f64 / n as f64 };
    Ok(MaskReport { report, masked_cells: spec.masked_count(), mask_violations, error_fraction })
}

/// Mask that pins whole qubit rows to padding.
pub fn row_padding_mask(canvas: (usize, usize), rows: &[usize], padding: i32) -> Result<InpaintSpec> {
    let (q, t) = canvas;
    let mut known = TokenMatrix::filled(q, t, 0);
    let mut mask = vec![false; q * t];
    for &r in rows {
        if r >= q {
            return Err(invalid(format!("row {r} outside a canvas of {q} rows")));
        }
        for c in 0..t {
            known.set(r, c, padding);
            mask[r * t + c] = true;
        }
    }
    InpaintSpec::new(known, mask)
}

/// Mask that pins the listed cells to the background token (no gate).
pub fn background_mask(canvas: (usize, usize), cells: &[(usize, usize)]) -> Result<InpaintSpec> {
    let (q, t) = canvas;
    let mut mask = vec![false; q * t];
    for &(r, c) in cells {
        if r >= q || c >= t {
            return Err(invalid(format!("cell ({r}, {c}) outside a {q} x {t} canvas")));
        }
        mask[r * t + c] = true;
    }
    InpaintSpec::new(TokenMatrix::filled(q, t, 0), mask)
}

/// Prefix-constrained generation toward a target SRV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    pub prefix: Circuit,
    pub target: String,
    /// At least one valid sample kept the prefix and reached the target.
    pub success: bool,
    pub rate: f64,
    pub prefix_violations: usize,
    pub report: GenerationReport,
}

/// Pins the prefix gates in the leading columns.
pub fn prefix_spec(prefix: &Circuit, ctx: &EvalContext) -> Result<InpaintSpec> {
    let (q, t) = ctx.canvas;
    if prefix.len() >= t {
        return Err(invalid(format!("prefix of {} gates leaves no free column in {t}", prefix.len())));
    }
    let prefix = prefix.with_num_qubits(ctx.qubits)?;
    let known = tokenize(&prefix, ctx.table.vocab(), q, t)?;
    let mask = (0..q * t).map(|i| i % t < prefix.len()).collect();
    InpaintSpec::new(known, mask)
}

fn keeps_prefix(c: &Circuit, prefix: &Circuit) -> bool {
    c.gates().len() >= prefix.len() && c.gates()[..prefix.len()] == *prefix.gates()
}

pub fn eval_edit<M: Denoiser + Sync + ?Sized>(
    model: &M,
    ctx: &EvalContext,
    prefix: &Circuit,
    target: usize,
    n: usize,
    job: u64,
) -> Result<EditReport> {
    ctx.validate()?;
    let classes = srv_labels(ctx);
    let goal = classes.get(target).ok_or_else(|| invalid(format!("SRV label {target} out of range")))?.clone();
    let spec = prefix_spec(prefix, ctx)?;
    let samples = generate(model, ctx, job, n, &|b| Ok(Condition::labels(vec![target; b])), Some(&spec))?;
    let prefix_violations = samples.iter().filter(|s| violates(&s.tokens, &spec)).count();
    let report = GenerationReport::tally(goal.to_string(), target, &samples, ctx.qubits, &HashSet::new(), |c| {
        Ok(keeps_prefix(c, prefix) && circuit_srv(c)? == goal)
    })?;
    Ok(EditReport {
        prefix: prefix.clone(),
        target: goal.to_string(),
        success: report.n_match > 0,
        rate: report.accuracy,
        prefix_violations,
        report,
    })
}

/// Success rates of prefix editing, input SRV (rows) by target SRV (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditMatrix {
    pub classes: Vec<String>,
    /// Prefixes found per input class.
    pub prefixes: Vec<usize>,
    /// Fraction of prefixes with at least one successful completion.
    pub success: Vec<Vec<f64>>,
    pub prefix_violations: usize,
}

impl EditMatrix {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("edit_report.json"), self)?;
        write_grid(&dir.join("edit_matrix.csv"), &self.classes, &self.classes, &self.success)
    }
}

/// Prefix sampling for [`edit_matrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixPlan {
    pub pool: Vec<GateKind>,
    pub min_gates: usize,
    pub max_gates: usize,
    pub per_cell: usize,
    /// Random prefixes drawn before giving up on rare input classes.
    pub max_attempts: usize,
}

/// Random prefixes grouped by their SRV class, `per_cell` at most per class.
pub fn sample_prefixes(ctx: &EvalContext, plan: &PrefixPlan) -> Result<Vec<Vec<Circuit>>> {
    let classes = srv_labels(ctx);
    let mut by_class = vec![Vec::new(); classes.len()];
    let mut rng = stream_rng(ctx.seed, u64::MAX);
    for _ in 0..plan.max_attempts {
        if by_class.iter().all(|v: &Vec<Circuit>| v.len() >= plan.per_cell) {
            break;
        }
        let c = sample_random_circuit(&plan.pool, ctx.qubits, plan.min_gates, plan.max_gates, &mut rng)?;
        let label = classes.binary_search(&circuit_srv(&c)?).expect("pure-state SRVs are enumerated");
        if by_class[label].len() < plan.per_cell {
            by_class[label].push(c);
        }
    }
    Ok(by_class)
}

pub fn edit_matrix<M: Denoiser + Sync + ?Sized>(
    model: &M,
    ctx: &EvalContext,
    plan: &PrefixPlan,
    n: usize,
) -> Result<EditMatrix> {
    let classes = srv_labels(ctx);
    let prefixes = sample_prefixes(ctx, plan)?;
    let k = classes.len();
    let jobs: Vec<(usize, usize, usize)> = (0..k)
        .flat_map(|i| (0..k).flat_map(move |j| (0..plan.per_cell).map(move |p| (i, j, p))))
        .filter(|&(i, _, p)| p < prefixes[i].len())
        .collect();
    let results: Vec<Result<EditReport>> = jobs
        .par_iter()
        .enumerate()
        .map(|(job, &(i, j, p))| eval_edit(model, ctx, &prefixes[i][p], j, n, job as u64))
        .collect();
    let mut hits = vec![vec![0usize; k]; k];
    let mut prefix_violations = 0;
    for (&(i, j, _), r) in jobs.iter().zip(results) {
        let r = r?;
        hits[i][j] += r.success as usize;
        prefix_violations += r.prefix_violations;
    }
    let success = (0..k)
        .map(|i| {
            let total = prefixes[i].len();
            hits[i].iter().map(|&h| if total == 0 { 0.0 } else { h as f64 / total as f64 }).collect()
        })
        .collect();
    Ok(EditMatrix {
        classes: classes.iter().map(|s| s.to_string()).collect(),
        prefixes: prefixes.iter().map(Vec::len).collect(),
        success,
        prefix_violations,
    })
}

/// A held-out unitary with its gate-subset prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileTarget {
    pub unitary: UnitaryMatrix,
    pub label: usize,
    /// Canonical key of the circuit the unitary came from, if known.
    pub key: Option<String>,
}

/// Random circuits the baseline distances are measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub pool: Vec<GateKind>,
    pub min_gates: usize,
    pub max_gates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitaryResult {
    pub index: usize,
    pub label: usize,
    pub n_samples: usize,
    pub n_valid: usize,
    pub n_exact: usize,
    /// `None` when no sample decoded.
    pub best_distance: Option<f64>,
    pub best_phase_insensitive: Option<f64>,
    pub distinct_solutions: usize,
    pub baseline_best_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin `i` covers `[edges[i], edges[i + 1])`; the last bin is closed.
    pub edges: Vec<f64>,
    pub model: Vec<usize>,
    pub baseline: Vec<usize>,
    /// Targets without any decodable sample.
    pub model_missing: usize,
}

impl Histogram {
    /// First bin isolates exact matches, the rest split `[tol, max]` evenly.
    pub fn build(model: &[Option<f64>], baseline: &[f64], tol: f64, max: f64, bins: usize) -> Self {
        let mut edges = vec![0.0, tol];
        edges.extend((1..=bins).map(|i| tol + (max - tol) * i as f64 / bins as f64));
        let bin = |d: f64| edges.windows(2).position(|w| d < w[1]).unwrap_or(edges.len() - 2);
        let mut h = vec![0; edges.len() - 1];
        let mut b = vec![0; edges.len() - 1];
        for d in model.iter().flatten() {
            h[bin(*d)] += 1;
        }
        for &d in baseline {
            b[bin(d)] += 1;
        }
        Self { model: h, baseline: b, model_missing: model.iter().filter(|d| d.is_none()).count(), edges }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lower", "upper", "model", "baseline"])?;
        for (i, e) in self.edges.windows(2).enumerate() {
            w.write_record([e[0].to_string(), e[1].to_string(), self.model[i].to_string(), self.baseline[i].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// First-order stochastic dominance toward small distances: the empirical
/// CDF of `a` is at least that of `b` everywhere and above it somewhere.
/// Missing values count as infinitely far.
pub fn stochastically_dominates(a: &[Option<f64>], b: &[f64]) -> bool {
    if a.is_empty() || b.is_empty() {
        return false;
    }
    let cdf_a = |x: f64| a.iter().filter(|d| d.is_some_and(|d| d <= x)).count() as f64 / a.len() as f64;
    let cdf_b = |x: f64| b.iter().filter(|&&d| d <= x).count() as f64 / b.len() as f64;
    let mut points: Vec<f64> = a.iter().flatten().copied().chain(b.iter().copied()).collect();
    points.sort_by(f64::total_cmp);
    let mut strict = false;
    for &x in &points {
        let (fa, fb) = (cdf_a(x), cdf_b(x));
        if fa < fb - 1e-12 {
            return false;
        }
        strict |= fa > fb + 1e-12;
    }
    strict
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompilationReport {
    pub tolerance: f64,
    pub per_unitary: Vec<UnitaryResult>,
    /// Fraction of targets with at least one exact circuit.
    pub accuracy: f64,
    pub histogram: Histogram,
    pub dominates_baseline: bool,
}

impl CompilationReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("compile_report.json"), self)?;
        self.histogram.write_csv(&dir.join("distance_histogram.csv"))?;
        let mut w = csv::Writer::from_path(dir.join("compile_unitaries.csv"))?;
        for r in &self.per_unitary {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Samples `n` circuits per target under its unitary and subset prompt and
/// scores them by Frobenius distance.
pub fn eval_compile<M: Denoiser + Sync + ?Sized>(
    model: &M,
    ctx: &EvalContext,
    targets: &[CompileTarget],
    n: usize,
    tol: f64,
    training: &HashSet<String>,
    baseline: &BaselineSpec,
) -> Result<CompilationReport> {
    ctx.validate()?;
    let dim = 1usize << ctx.qubits;
    for (i, t) in targets.iter().enumerate() {
        if t.unitary.dim() != dim {
            return Err(invalid(format!("target {i} has dimension {}, expected {dim}", t.unitary.dim())));
        }
        if t.key.as_ref().is_some_and(|k| training.contains(k)) {
            return Err(invalid(format!("target {i} appears in the training set")));
        }
    }
    let results: Vec<Result<UnitaryResult>> = targets
        .par_iter()
        .enumerate()
        .map(|(index, target)| {
            let u = unitary_tensor(std::slice::from_ref(&target.unitary), ctx.dtype)?;
            let cond_for = |b: usize| -> Result<Condition> {
                let us = if b == 1 { u.clone() } else { Tensor::cat(&vec![&u; b], 0)? };
                Ok(Condition::with_unitaries(vec![target.label; b], us))
            };
            let samples = generate(model, ctx, index as u64, n, &cond_for, None)?;
            score_compile(index, target, &samples, ctx, tol, baseline)
        })
        .collect();
    let per_unitary = results.into_iter().collect::<Result<Vec<_>>>()?;
    let hit = per_unitary.iter().filter(|r| r.n_exact > 0).count();
    let model_best: Vec<Option<f64>> = per_unitary.iter().map(|r| r.best_distance).collect();
    let base_best: Vec<f64> = per_unitary.iter().map(|r| r.baseline_best_distance).collect();
    Ok(CompilationReport {
        tolerance: tol,
        accuracy: if targets.is_empty() { 0.0 } else { hit as f64 / targets.len() as f64 },
        histogram: Histogram::build(&model_best, &base_best, tol, 2.0 * dim as f64, 20),
        dominates_baseline: stochastically_dominates(&model_best, &base_best),
        per_unitary,
    })
}

fn score_compile(
    index: usize,
    target: &CompileTarget,
    samples: &[Generated],
    ctx: &EvalContext,
    tol: f64,
    baseline: &BaselineSpec,
) -> Result<UnitaryResult> {
    let mut best: Option<f64> = None;
    let mut best_phase: Option<f64> = None;
    let mut n_valid = 0;
    let mut n_exact = 0;
    let mut solutions = HashSet::new();
    for s in samples {
        let Ok(c) = &s.circuit else { continue };
        n_valid += 1;
        let c = c.with_num_qubits(ctx.qubits)?;
        let u = circuit_unitary(&c)?;
        let d = frobenius_distance(&u, &target.unitary)?;
        let p = phase_insensitive_distance(&u, &target.unitary)?;
        best = Some(best.map_or(d, |b| b.min(d)));
        best_phase = Some(best_phase.map_or(p, |b| b.min(p)));
        if d < tol {
            n_exact += 1;
            solutions.insert(c.canonical_key());
        }
    }
    Ok(UnitaryResult {
        index,
        label: target.label,
        n_samples: samples.len(),
        n_valid,
        n_exact,
        best_distance: best,
        best_phase_insensitive: best_phase,
        distinct_solutions: solutions.len(),
        baseline_best_distance: baseline_best(&target.unitary, ctx, baseline, samples.len().max(1), index)?,
    })
}

/// Best distance among `n` random circuits drawn from the dataset spec.
pub fn baseline_best(target: &UnitaryMatrix, ctx: &EvalContext, spec: &BaselineSpec, n: usize, index: usize) -> Result<f64> {
    let mut rng = stream_rng(ctx.seed ^ 0x5eed_ba5e, index as u64);
    let mut best = f64::INFINITY;
    for _ in 0..n {
        let len = rng.random_range(spec.min_gates..=spec.max_gates);
        let c = sample_random_circuit(&spec.pool, ctx.qubits, len, len, &mut rng)?;
        best = best.min(frobenius_distance(&circuit_unitary(&c)?, target)?);
    }
    Ok(best)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn write_reports_csv(path: &Path, reports: &[GenerationReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["prompt", "label", "n_samples", "n_valid", "n_error", "n_match", "accuracy", "distinct", "novel"])?;
    for r in reports {
        w.write_record([
            r.prompt.clone(),
            r.label.to_string(),
            r.n_samples.to_string(),
            r.n_valid.to_string(),
            r.n_error.to_string(),
            r.n_match.to_string(),
            r.accuracy.to_string(),
            r.distinct_count.to_string(),
            r.novel_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins_and_dominance() {
        let h = Histogram::build(&[Some(0.0), Some(1.5), None], &[0.5, 3.9, 4.0], 1e-6, 4.0, 4);
        assert_eq!(h.edges.len(), 6);
        assert_eq!(h.model, vec![1, 0, 1, 0, 0]);
        assert_eq!(h.baseline, vec![0, 1, 0, 0, 2]);
        assert_eq!(h.model_missing, 1);
        assert!(stochastically_dominates(&[Some(0.0), Some(0.1)], &[0.5, 1.0]));
        assert!(!stochastically_dominates(&[Some(0.5), Some(1.0)], &[0.0, 0.1]));
        assert!(!stochastically_dominates(&[Some(0.5)], &[0.5]));
        assert!(!stochastically_dominates(&[None], &[3.0]));
    }

    #[test]
    fn macro_and_micro_differ_with_uneven_samples() {
        let r = |n_samples, n_match| GenerationReport {
            prompt: String::new(),
            label: 0,
            n_samples,
            n_valid: n_samples,
            n_error: 0,
            n_match,
            accuracy: n_match as f64 / n_samples as f64,
            distinct_count: 0,
            novel_count: 0,
            error_reasons: BTreeMap::new(),
        };
        let (ma, mi) = macro_micro(&[r(10, 10), r(30, 0)]);
        assert!((ma - 0.5).abs() < 1e-15);
        assert!((mi - 0.25).abs() < 1e-15);
    }

    #[test]
    fn masks_are_built_in_row_major_order() {
        let m = row_padding_mask((3, 4), &[2], 7).unwrap();
        assert_eq!(m.masked_count(), 4);
        assert!((0..4).all(|t| m.is_masked(2, t) && m.known().get(2, t) == 7));
        assert!(row_padding_mask((3, 4), &[3], 7).is_err());
        let b = background_mask((3, 4), &[(0, 1), (1, 3)]).unwrap();
        assert!(b.is_masked(0, 1) && b.is_masked(1, 3) && !b.is_masked(0, 0));
    }
}
