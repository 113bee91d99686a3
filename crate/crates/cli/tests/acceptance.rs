//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 13 and 14 train desk-scale models (many CPU hours); they run only
//! with `UDITQC_ACCEPTANCE_FULL=1` and otherwise report NOT RUN together
//! with a runtime estimate measured on this machine.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use uditqc_cli::commands::{eval_compile_cmd, eval_srv_cmd, gen_dataset, train_cmd, Overrides};
use uditqc_cli::{RunConfig, RunDir};
use uditqc_core::codec::{decode, detokenize, embed, tokenize, EmbeddingTable, GateVocabulary, TokenMatrix};
use uditqc_core::dataset::{enumerate_gate_subsets, generate_dataset, sample_random_circuit, stream_rng, DatasetSpec, Task};
use uditqc_core::sim::Statevector;
use uditqc_core::{
    circuit_unitary, compute_srv, enumerate_srvs, frobenius_distance, optimize_circuit, simulate, Circuit, Gate,
    GateKind,
};
use uditqc_model::conditioning::Condition;
use uditqc_model::diffusion::{gaussian, to_circuit_tensors};
use uditqc_model::udit::DitBlock;
use uditqc_model::{
    cfg_epsilon, inpaint_sample, q_sample, sample, train, training_loss, CircuitDenoiser, ConditioningConfig,
    Denoiser, InpaintSpec, ModelConfig, NoiseSchedule, ParamStore, SamplerConfig, TargetOracle, TrainConfig,
    TrainingSet, UDiTConfig,
};

const SEED: u64 = 2024;

type Check = fn(&mut Sha256) -> (bool, String);

fn hash_f64s(h: &mut Sha256, xs: &[f64]) {
    for x in xs {
        h.update(x.to_le_bytes());
    }
}

fn hash_tokens(h: &mut Sha256, t: &TokenMatrix) {
    for v in t.as_slice() {
        h.update(v.to_le_bytes());
    }
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    flat(a).iter().zip(flat(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_circuit(rng: &mut ChaCha8Rng, qubits: usize, min: usize, max: usize) -> Circuit {
    let kinds: Vec<GateKind> = GateKind::COMPILE_POOL.iter().copied().filter(|k| k.arity() <= qubits).collect();
    sample_random_circuit(&kinds, qubits, min, max, rng).unwrap()
}

/// A circuit on 3..=8 qubits with a length inside that width's dataset bounds.
fn bounded_circuit(rng: &mut ChaCha8Rng) -> Circuit {
    let q = rng.random_range(3..=8);
    let spec = DatasetSpec::srv_reference(q, 0).unwrap();
    random_circuit(rng, q, spec.min_gates, spec.max_gates)
}

fn codec_exactness(h: &mut Sha256) -> (bool, String) {
    let start = Instant::now();
    let vocab = GateVocabulary::compile();
    let table = EmbeddingTable::build(&vocab, SEED);
    let mut rng = stream_rng(SEED, 1);
    let mut exact = 0;
    for _ in 0..10_000 {
        let c = bounded_circuit(&mut rng);
        let tokens = tokenize(&c, &vocab, 8, 52).unwrap();
        let back = decode(&embed(&tokens, &table).unwrap(), &table).unwrap();
        if back == tokens && detokenize(&back, &vocab).ok().as_ref() == Some(&c) {
            exact += 1;
        }
        hash_tokens(h, &back);
    }
    let secs = start.elapsed().as_secs_f64();
    (exact == 10_000 && secs < 60.0, format!("{exact}/10000 exact roundtrips in {secs:.1}s"))
}

fn codec_noise_margin(h: &mut Sha256) -> (bool, String) {
    let vocab = GateVocabulary::compile();
    let table = EmbeddingTable::build(&vocab, SEED);
    let amp = 0.3 / (vocab.dim() as f64).sqrt();
    let mut rng = stream_rng(SEED, 2);
    let mut exact = 0;
    for _ in 0..1_000 {
        let c = bounded_circuit(&mut rng);
        let tokens = tokenize(&c, &vocab, 8, 52).unwrap();
        let mut x = embed(&tokens, &table).unwrap();
        for v in x.values_mut() {
            *v += rng.random_range(-amp..=amp);
        }
        let back = decode(&x, &table).unwrap();
        exact += usize::from(back == tokens);
        hash_tokens(h, &back);
    }
    (exact == 1_000, format!("{exact}/1000 decoded exactly under noise of sup-norm {amp:.4}"))
}

// Per-qubit rank of rho_k, with rho = |psi><psi| built explicitly and the
// other qubits traced out, eigenvalues from nalgebra.
fn srv_oracle(state: &Statevector) -> Vec<u8> {
    let q = state.num_qubits();
    let n = 1usize << q;
    let a = state.amplitudes();
    let rho = DMatrix::from_fn(n, n, |i, j| a[i] * a[j].conj());
    (0..q)
        .map(|k| {
            let mut red = DMatrix::<Complex64>::zeros(2, 2);
            for i in 0..n {
                for j in 0..n {
                    if (i ^ j) & !(1 << k) == 0 {
                        red[((i >> k) & 1, (j >> k) & 1)] += rho[(i, j)];
                    }
                }
            }
            red.symmetric_eigen().eigenvalues.iter().filter(|&&e| e > 1e-9).count() as u8
        })
        .collect()
}

fn srv_oracle_agreement(h: &mut Sha256) -> (bool, String) {
    let mut rng = stream_rng(SEED, 3);
    let mut agree = 0;
    for _ in 0..1_000 {
        let q = rng.random_range(3..=5);
        let c = random_circuit(&mut rng, q, 2, 16);
        let s = simulate(&c).unwrap();
        let srv = compute_srv(&s).unwrap();
        agree += usize::from(srv.ranks() == &srv_oracle(&s)[..]);
        h.update(srv.ranks());
    }
    (agree == 1_000, format!("{agree}/1000 SRVs match the partial-trace oracle"))
}

fn label_counts(h: &mut Sha256) -> (bool, String) {
    let counts: Vec<usize> = (3..=8).map(|q| enumerate_srvs(q).len()).collect();
    let subsets = enumerate_gate_subsets(&GateKind::COMPILE_POOL).len();
    for c in counts.iter().chain([&subsets]) {
        h.update(c.to_le_bytes());
    }
    (counts == [5, 12, 27, 58, 121, 248] && subsets == 63, format!("SRV classes {counts:?}, gate subsets {subsets}"))
}

fn optimizer_soundness(h: &mut Sha256) -> (bool, String) {
    let mut rng = stream_rng(SEED, 5);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000 {
        let q = rng.random_range(3..=5);
        let c = random_circuit(&mut rng, q, 2, 16);
        let o = optimize_circuit(&c);
        let d = frobenius_distance(&circuit_unitary(&c).unwrap(), &circuit_unitary(&o).unwrap()).unwrap();
        worst = worst.max(d);
        h.update(o.canonical_key());
    }
    let hh = optimize_circuit(&Circuit::new(1, vec![Gate::h(0), Gate::h(0)]).unwrap());
    (worst < 1e-9 && hh.is_empty(), format!("max distance {worst:.2e} over 1000 circuits; [H,H] -> {} gates", hh.len()))
}

fn schedule_properties(h: &mut Sha256) -> (bool, String) {
    let s = NoiseSchedule::cosine(1000).unwrap();
    let ab = s.alpha_bar();
    hash_f64s(h, ab);
    let decreasing = ab.windows(2).all(|w| w[1] < w[0]);
    let max_beta = s.beta().iter().copied().fold(0.0, f64::max);
    let ok = decreasing && ab[0] > 0.999 && ab[999] < 1e-3 && max_beta <= 0.999;
    (ok, format!("strictly decreasing: {decreasing}, abar_0 {:.6}, abar_999 {:.2e}, max beta {max_beta}", ab[0], ab[999]))
}

fn forward_statistics(h: &mut Sha256) -> (bool, String) {
    let s = NoiseSchedule::cosine(1000).unwrap();
    let n = 20_000;
    let x0_value = 0.7;
    let x0 = Tensor::full(x0_value, (n, 1), &Device::Cpu).unwrap();
    let mut rng = stream_rng(SEED, 7);
    let mut worst: f64 = 0.0;
    for t in [1, 500, 999] {
        let eps = gaussian(&[n, 1], DType::F64, &mut rng).unwrap();
        let xs = flat(&q_sample(&x0, &vec![t; n], &eps, &s).unwrap());
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let ab = s.alpha_bar()[t];
        let mean_se = ((1.0 - ab) / n as f64).sqrt();
        let var_se = (1.0 - ab) * (2.0 / (n as f64 - 1.0)).sqrt();
        worst = worst.max((mean - ab.sqrt() * x0_value).abs() / mean_se);
        worst = worst.max((var - (1.0 - ab)).abs() / var_se);
        hash_f64s(h, &[mean, var]);
    }
    (worst < 3.0, format!("largest deviation {worst:.2} standard errors"))
}

fn desk_udit(token_dim: usize) -> UDiTConfig {
    UDiTConfig { depths: [2, 2, 4, 3, 3], heads: [8, 8, 4, 8, 8], ..UDiTConfig::new(3, 16, token_dim, 128) }
}

fn adaln_zero_identity(h: &mut Sha256) -> (bool, String) {
    let mut store = ParamStore::new(SEED, DType::F32);
    let block = DitBlock::new(&mut store, "block", 128, 128, 8, 512).unwrap();
    let mut rng = stream_rng(SEED, 8);
    let x = gaussian(&[2, 48, 128], DType::F32, &mut rng).unwrap();
    let c = gaussian(&[2, 128], DType::F32, &mut rng).unwrap();
    let y = block.forward(&x, &c).unwrap();
    let (xs, ys) = (x.flatten_all().unwrap().to_vec1::<f32>().unwrap(), y.flatten_all().unwrap().to_vec1::<f32>().unwrap());
    let block_identity = xs.iter().zip(&ys).all(|(a, b)| a.to_bits() == b.to_bits());

    let cfg = ModelConfig {
        udit: desk_udit(4),
        conditioning: ConditioningConfig { num_classes: 5, label_dropout: 0.1, timesteps: 1000, unitary: None },
    };
    let m = CircuitDenoiser::new(&cfg, SEED, DType::F32).unwrap();
    let x = gaussian(&[3, 3, 16, 4], DType::F32, &mut rng).unwrap();
    let out = flat(&m.predict(&x, &[0, 500, 999], &Condition::labels(vec![0, 2, 5])).unwrap());
    let zero = out.iter().all(|&v| v == 0.0);
    hash_f64s(h, &out);
    h.update([u8::from(block_identity)]);
    (block_identity && zero, format!("block output bit-identical: {block_identity}; model output all zero: {zero}"))
}

fn gradient_check(h: &mut Sha256) -> (bool, String) {
    let start = Instant::now();
    let cfg = ModelConfig {
        udit: UDiTConfig { depths: [1, 1, 1, 1, 1], heads: [2, 2, 2, 2, 2], ..UDiTConfig::new(2, 4, 4, 16) },
        conditioning: ConditioningConfig { num_classes: 3, label_dropout: 0.0, timesteps: 1000, unitary: None },
    };
    let m = CircuitDenoiser::new(&cfg, SEED, DType::F64).unwrap();
    // Fresh zero-initialized gates would make most gradients trivially zero.
    m.store().randomize(SEED + 1, 0.3, |_| true).unwrap();
    let schedule = NoiseSchedule::cosine(1000).unwrap();
    let mut rng = stream_rng(SEED, 9);
    let x0 = gaussian(&[3, 2, 4, 4], DType::F64, &mut rng).unwrap();
    let cond = Condition::labels(vec![0, 1, 2]);
    let loss_at = || training_loss(&m, &x0, &cond, &schedule, &mut stream_rng(SEED, 10)).unwrap();
    let grads = loss_at().backward().unwrap();
    let names = m.store().names();
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let name = &names[rng.random_range(0..names.len())];
        let var = m.store().var(name).unwrap();
        let original = flat(var.as_tensor());
        let i = rng.random_range(0..original.len());
        let analytic = grads.get(var.as_tensor()).map(|g| flat(g)[i]).unwrap_or(0.0);
        let eval = |delta: f64| {
            let mut v = original.clone();
            v[i] += delta;
            m.store().set(name, &Tensor::from_vec(v, var.dims(), &Device::Cpu).unwrap()).unwrap();
            loss_at().to_scalar::<f64>().unwrap()
        };
        let numeric = (eval(step) - eval(-step)) / (2.0 * step);
        m.store().set(name, &Tensor::from_vec(original, var.dims(), &Device::Cpu).unwrap()).unwrap();
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
        hash_f64s(h, &[analytic]);
    }
    let secs = start.elapsed().as_secs_f64();
    (worst < 1e-3 && secs < 300.0, format!("worst relative error {worst:.2e} over 50 parameters in {secs:.1}s"))
}

fn small_model(q: usize, t: usize, d: usize, seed: u64) -> CircuitDenoiser {
    let cfg = ModelConfig {
        udit: UDiTConfig { depths: [1, 1, 1, 1, 1], heads: [2, 2, 2, 2, 2], ..UDiTConfig::new(q, t, d, 16) },
        conditioning: ConditioningConfig { num_classes: 5, label_dropout: 0.1, timesteps: 1000, unitary: None },
    };
    let m = CircuitDenoiser::new(&cfg, seed, DType::F64).unwrap();
    m.store().randomize(seed + 1, 0.2, |_| true).unwrap();
    m
}

fn cfg_identities(h: &mut Sha256) -> (bool, String) {
    let m = small_model(3, 8, 4, SEED);
    let mut rng = stream_rng(SEED, 11);
    let x = gaussian(&[3, 3, 8, 4], DType::F64, &mut rng).unwrap();
    let ts = [10, 400, 999];
    let cond = Condition::labels(vec![0, 2, 4]);
    let direct = m.predict(&x, &ts, &cond).unwrap();
    let reduce = max_abs_diff(&cfg_epsilon(&m, &x, &ts, &cond, 1.0).unwrap(), &direct);
    let null = cond.null(m.null_label());
    let e_null = m.predict(&x, &ts, &null).unwrap();
    let fix = [2.0, 7.5]
        .iter()
        .map(|&s| max_abs_diff(&cfg_epsilon(&m, &x, &ts, &null, s).unwrap(), &e_null))
        .fold(0.0, f64::max);
    hash_f64s(h, &flat(&cfg_epsilon(&m, &x, &ts, &cond, 7.5).unwrap()));
    (reduce <= 1e-12 && fix <= 1e-12, format!("scale 1 deviation {reduce:.1e}; null fixpoint deviation {fix:.1e}"))
}

fn ghz_target(table: &EmbeddingTable, q: usize, t: usize) -> Tensor {
    let c = Circuit::new(3, vec![Gate::h(0), Gate::cx(0, 1), Gate::cx(1, 2)]).unwrap();
    let x = embed(&tokenize(&c, table.vocab(), q, t).unwrap(), table).unwrap();
    Tensor::from_vec(x.into_values(), (1, q, t, table.dim()), &Device::Cpu).unwrap()
}

fn sampler_convergence(h: &mut Sha256) -> (bool, String) {
    let table = EmbeddingTable::build(&GateVocabulary::entanglement(), SEED);
    let target = ghz_target(&table, 3, 8);
    let s = NoiseSchedule::cosine(1000).unwrap();
    let oracle = TargetOracle::new(target.clone(), s.clone(), 5);
    let cond = Condition::labels(vec![0; 4]);
    let mut rng = stream_rng(SEED, 12);
    let shape = (3, 8, table.dim());
    let inf = |x: &Tensor| max_abs_diff(x, &target.broadcast_as(x.shape()).unwrap().contiguous().unwrap());
    let strided = sample(&oracle, &cond, shape, &SamplerConfig::strided(50, 1.0), &s, DType::F64, &mut rng).unwrap();
    let anc = sample(&oracle, &cond, shape, &SamplerConfig::ancestral(1000, 1.0), &s, DType::F64, &mut rng).unwrap();
    let (a, b) = (inf(&strided), inf(&anc));
    hash_f64s(h, &flat(&strided));
    hash_f64s(h, &flat(&anc));
    (a < 1e-3 && b < 1e-2, format!("50-step strided error {a:.2e}; 1000-step ancestral error {b:.2e}"))
}

fn inpainting_exactness(h: &mut Sha256) -> (bool, String) {
    let (q, t) = (3, 8);
    let table = EmbeddingTable::build(&GateVocabulary::entanglement(), SEED);
    let m = small_model(q, t, table.dim(), SEED + 10);
    let s = NoiseSchedule::cosine(1000).unwrap();
    let mut rng = stream_rng(SEED, 13);
    let sampler = SamplerConfig::strided(8, 1.5);
    let (mut total, mut exact) = (0, 0);
    for _ in 0..64 {
        let c = sample_random_circuit(&GateKind::ENTANGLEMENT_POOL, q, 1, t, &mut rng).unwrap();
        let tokens = tokenize(&c, table.vocab(), q, t).unwrap();
        let mask: Vec<bool> = (0..q * t).map(|_| rng.random_bool(0.4)).collect();
        let spec = InpaintSpec::new(tokens, mask).unwrap();
        let cond = Condition::labels(vec![rng.random_range(0..5); 16]);
        let x = inpaint_sample(&m, &cond, &spec, &sampler, &s, &table, DType::F64, &mut rng).unwrap();
        for ct in to_circuit_tensors(&x).unwrap() {
            let got = decode(&ct, &table).unwrap();
            let ok = (0..q).all(|r| (0..t).all(|c| !spec.is_masked(r, c) || got.get(r, c) == spec.known().get(r, c)));
            exact += usize::from(ok);
            total += 1;
            hash_tokens(h, &got);
        }
    }

    // Padding the last qubit row; the oracle pulls toward a 3-qubit circuit.
    let pad = table.vocab().padding();
    let mut known = TokenMatrix::filled(q, t, 0);
    (0..t).for_each(|c| known.set(2, c, pad));
    let spec = InpaintSpec::new(known, (0..q * t).map(|i| i / t == 2).collect()).unwrap();
    let oracle = TargetOracle::new(ghz_target(&table, q, t), s.clone(), 5);
    let models: [&dyn Denoiser; 2] = [&oracle, &m];
    let mut padded_ok = true;
    for model in models {
        let cond = Condition::labels(vec![1; 32]);
        let x = inpaint_sample(model, &cond, &spec, &SamplerConfig::strided(10, 1.0), &s, &table, DType::F64, &mut rng)
            .unwrap();
        for ct in to_circuit_tensors(&x).unwrap() {
            let got = decode(&ct, &table).unwrap();
            padded_ok &= (0..t).all(|c| got.get(2, c) == pad);
            if let Ok(circuit) = detokenize(&got, table.vocab()) {
                padded_ok &= circuit.gates().iter().all(|g| g.qubits().iter().all(|&k| k < 2));
            }
            hash_tokens(h, &got);
        }
    }
    (
        exact == total && total == 1_024 && padded_ok,
        format!("{exact}/{total} samples honour every masked cell; padded row gate-free: {padded_ok}"),
    )
}

const CHECKS: [(&str, Check); 12] = [
    ("codec exactness", codec_exactness),
    ("codec noise margin", codec_noise_margin),
    ("SRV oracle agreement", srv_oracle_agreement),
    ("label-count identity", label_counts),
    ("optimizer soundness", optimizer_soundness),
    ("schedule properties", schedule_properties),
    ("forward-process statistics", forward_statistics),
    ("adaLN-Zero identity", adaln_zero_identity),
    ("gradient check", gradient_check),
    ("CFG identities", cfg_identities),
    ("sampler-oracle convergence", sampler_convergence),
    ("inpainting exactness", inpainting_exactness),
];

struct Outcome {
    pass: bool,
    detail: String,
    digest: Vec<u8>,
}

fn run_check(check: Check) -> Outcome {
    let mut h = Sha256::new();
    match catch_unwind(AssertUnwindSafe(|| check(&mut h))) {
        Ok((pass, detail)) => {
            // Details may carry runtimes, so only the hashed results and the verdict count.
            h.update([u8::from(pass)]);
            Outcome { pass, detail, digest: h.finalize().to_vec() }
        }
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome { pass: false, detail: format!("panicked: {msg}"), digest: Vec::new() }
        }
    }
}

fn config(name: &str) -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)).unwrap()
}

fn acceptance_dir(name: &str) -> PathBuf {
    std::env::var_os("UDITQC_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance"))
        .join(name)
}

/// Measured seconds per optimizer step (at the training batch size) and per
/// guided denoising step (at the evaluation batch size).
fn step_costs(cfg: &RunConfig) -> (f64, f64) {
    let batch = cfg.train.batch_size;
    let per_class = batch.div_ceil(cfg.num_classes()) + 1;
    let spec = DatasetSpec { balanced_size: per_class, stall_limit: 500, ..cfg.dataset.clone() };
    let records = generate_dataset(&spec).unwrap().records;
    let records = &records[..records.len().min(2 * batch)];
    let table = EmbeddingTable::build(&cfg.vocabulary().unwrap(), cfg.embedding_seed);
    let data = TrainingSet::from_records(records, &table, cfg.canvas(), cfg.dtype()).unwrap();
    let model = CircuitDenoiser::new(&cfg.model, cfg.seed, cfg.dtype()).unwrap();
    let train_cfg = TrainConfig { epochs: 1, checkpoint_every: 1, ..cfg.train.clone() };
    let start = Instant::now();
    let report = train(&model, &data, &train_cfg, &mut ()).unwrap();
    let train_step = start.elapsed().as_secs_f64() / report.steps as f64;

    let frozen = CircuitDenoiser::for_inference(&cfg.model, cfg.seed, cfg.dtype()).unwrap();
    let b = cfg.eval.batch_size;
    let (q, t) = cfg.canvas();
    let x = gaussian(&[b, q, t, table.dim()], cfg.dtype(), &mut stream_rng(SEED, 99)).unwrap();
    let labels = vec![0; b];
    let cond = match &data.cond.unitaries {
        Some(u) => Condition::with_unitaries(labels, u.narrow(0, 0, 1).unwrap().repeat((b, 1, 1, 1)).unwrap()),
        None => Condition::labels(labels),
    };
    let start = Instant::now();
    cfg_epsilon(&frozen, &x, &vec![500; b], &cond, cfg.sampler.cfg_scale).unwrap();
    (train_step, start.elapsed().as_secs_f64())
}

fn estimate_hours(cfg: &RunConfig, records: usize, eval_batches: usize) -> f64 {
    let (train_step, sample_step) = step_costs(cfg);
    let train_steps = records.div_ceil(cfg.train.batch_size) * cfg.train.epochs;
    (train_steps as f64 * train_step + (eval_batches * cfg.sampler.steps) as f64 * sample_step) / 3600.0
}

fn full_mode() -> bool {
    std::env::var("UDITQC_ACCEPTANCE_FULL").is_ok_and(|v| v == "1")
}

/// Generates, trains and evaluates unless the run directory already holds
/// the respective artifact, so an interrupted run resumes.
fn prepare(cfg: &RunConfig, run: &RunDir, task: Task) {
    if !run.dataset_manifest().exists() {
        gen_dataset(cfg, run, task).unwrap();
    }
    if run.latest_checkpoint().is_err() {
        train_cmd(cfg, run).unwrap();
    }
}

fn desk_training() -> (Option<bool>, String) {
    let cfg = config("q3-small.json");
    if !full_mode() {
        let samples = cfg.num_classes() * cfg.eval.samples;
        let hours = estimate_hours(&cfg, cfg.num_classes() * cfg.dataset.balanced_size, samples.div_ceil(cfg.eval.batch_size));
        return (None, format!("needs UDITQC_ACCEPTANCE_FULL=1; estimated {hours:.1} CPU hours on this machine"));
    }
    let run = RunDir::new(acceptance_dir("q3-small"));
    prepare(&cfg, &run, Task::Srv);
    let ev = eval_srv_cmd(&cfg, &run, &Overrides::default()).unwrap();
    let (n, errors) = ev.reports.iter().fold((0, 0), |(n, e), r| (n + r.n_samples, e + r.n_error));
    let error_rate = errors as f64 / n as f64;
    (
        Some(ev.macro_accuracy >= 0.70 && error_rate < 0.05),
        format!("macro accuracy {:.4}, error-circuit rate {error_rate:.4}", ev.macro_accuracy),
    )
}

fn desk_compilation() -> (Option<bool>, String) {
    let cfg = config("compile3-small.json");
    if !full_mode() {
        let batches = cfg.eval.test_unitaries * cfg.eval.samples.div_ceil(cfg.eval.batch_size);
        let hours = estimate_hours(&cfg, 50_000, batches);
        return (None, format!("needs UDITQC_ACCEPTANCE_FULL=1; estimated {hours:.1} CPU hours on this machine"));
    }
    let run = RunDir::new(acceptance_dir("compile3-small"));
    prepare(&cfg, &run, Task::Compile);
    let r = eval_compile_cmd(&cfg, &run, &Overrides::default()).unwrap();
    (
        Some(r.accuracy >= 0.5 && r.dominates_baseline),
        format!("{:.4} of unitaries compiled exactly; dominates baseline: {}", r.accuracy, r.dominates_baseline),
    )
}

fn main() {
    // Cargo passes libtest flags (e.g. `--nocapture`, filters); none apply here.
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut failed = 0;
    let mut first = Vec::new();
    for (i, (name, check)) in CHECKS.iter().enumerate() {
        let o = single.install(|| run_check(*check));
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += usize::from(!o.pass);
        first.push(o.digest);
    }

    for (i, run) in [desk_training as fn() -> (Option<bool>, String), desk_compilation].into_iter().enumerate() {
        let name = ["desk-scale training", "desk-scale compilation"][i];
        let (status, detail) = match catch_unwind(run) {
            Ok(r) => r,
            Err(_) => (Some(false), "panicked".to_string()),
        };
        let label = match status {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "NOT RUN",
        };
        failed += usize::from(status == Some(false));
        println!("{label} {:>2} {name}: {detail}", 13 + i);
    }

    let repeat: Vec<Vec<u8>> = CHECKS.iter().map(|(_, c)| single.install(|| run_check(*c)).digest).collect();
    let differing: Vec<usize> =
        (0..CHECKS.len()).filter(|&i| first[i].is_empty() || first[i] != repeat[i]).map(|i| i + 1).collect();
    let pass = differing.is_empty();
    failed += usize::from(!pass);
    let detail = if pass {
        format!("criteria 1-12 repeated with identical digests ({})", hex_prefix(&first))
    } else {
        format!("digests differ or missing for criteria {differing:?}")
    };
    println!("{} 15 determinism: {detail}", if pass { "PASS" } else { "FAIL" });

    if failed > 0 {
        std::process::exit(1);
    }
}

fn hex_prefix(digests: &[Vec<u8>]) -> String {
    let mut h = Sha256::new();
    digests.iter().for_each(|d| h.update(d));
    h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect()
}
