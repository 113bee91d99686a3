use candle_core::{DType, Device, Tensor};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uditqc_core::sim::UnitaryMatrix;
use uditqc_core::{circuit_unitary, Circuit, Gate};
use uditqc_model::conditioning::{unitary_tensor, Condition, ConditioningConfig, UEncConfig};
use uditqc_model::diffusion::{gaussian, NoiseSchedule};
use uditqc_model::{training_loss, CircuitDenoiser, ModelConfig, UDiTConfig};

fn flat(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

fn compile_config(q: usize, uenc: UEncConfig) -> ModelConfig {
    ModelConfig {
        udit: UDiTConfig { depths: [1, 1, 1, 1, 1], heads: [2, 2, 2, 2, 2], cond_dim: 16, ..UDiTConfig::new(q, 4, 8, 16) },
        conditioning: ConditioningConfig { num_classes: 4, label_dropout: 0.1, timesteps: 1000, unitary: Some(uenc) },
    }
}

/// Haar-ish random unitary from Gram-Schmidt on a complex Gaussian matrix.
fn random_unitary(dim: usize, rng: &mut ChaCha8Rng) -> UnitaryMatrix {
    let mut cols: Vec<Vec<Complex64>> = (0..dim)
        .map(|_| (0..dim).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect())
        .collect();
    for i in 0..dim {
        for j in 0..i {
            let proj: Complex64 = cols[j].iter().zip(&cols[i]).map(|(a, b)| a.conj() * b).sum();
            let cj = cols[j].clone();
            for (x, y) in cols[i].iter_mut().zip(cj) {
                *x -= proj * y;
            }
        }
        let n = cols[i].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        cols[i].iter_mut().for_each(|z| *z /= n);
    }
    let rows: Vec<Complex64> = (0..dim * dim).map(|k| cols[k % dim][k / dim]).collect();
    UnitaryMatrix::from_row_major(dim, rows).unwrap()
}

#[test]
fn unitary_encoder_shape_determinism_and_sensitivity() {
    let cfg = compile_config(3, UEncConfig::for_qubits(3));
    let m = CircuitDenoiser::new(&cfg, 3, DType::F64).unwrap();
    let enc = m.conditioner().unitary_encoder().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = random_unitary(8, &mut rng);
    assert!(u.is_unitary());
    let x = unitary_tensor(&[u.clone()], DType::F64).unwrap();
    let a = enc.forward(&x, None).unwrap();
    assert_eq!(a.dims(), &[1, 16]);
    assert_eq!(flat(&a), flat(&enc.forward(&x, None).unwrap()));
    let dag = unitary_tensor(&[u.adjoint()], DType::F64).unwrap();
    let b = enc.forward(&dag, None).unwrap();
    assert!(flat(&a).iter().zip(flat(&b)).any(|(p, q)| (p - q).abs() > 1e-6));
    // Shuffling matrix entries changes the embedding.
    let mut entries = u.entries().to_vec();
    entries.rotate_left(3);
    let shuffled = unitary_tensor(&[UnitaryMatrix::from_row_major(8, entries).unwrap()], DType::F64).unwrap();
    let c = enc.forward(&shuffled, None).unwrap();
    assert!(flat(&a).iter().zip(flat(&c)).any(|(p, q)| (p - q).abs() > 1e-6));
    // Training mode (dropout) perturbs the output; evaluation mode does not.
    let mut drng = ChaCha8Rng::seed_from_u64(2);
    let d = enc.forward(&x, Some(&mut drng)).unwrap();
    assert_ne!(flat(&a), flat(&d));
    let wrong = Tensor::zeros((1, 2, 4, 4), DType::F64, &Device::Cpu).unwrap();
    assert!(enc.forward(&wrong, None).is_err());
}

#[test]
fn null_label_uses_the_same_path() {
    let cfg = ModelConfig {
        udit: UDiTConfig { depths: [1, 1, 1, 1, 1], heads: [2, 2, 2, 2, 2], cond_dim: 16, ..UDiTConfig::new(2, 4, 4, 16) },
        conditioning: ConditioningConfig { num_classes: 3, label_dropout: 0.1, timesteps: 1000, unitary: None },
    };
    let m = CircuitDenoiser::new(&cfg, 4, DType::F64).unwrap();
    let real = m.condition_vectors(&[5], &Condition::labels(vec![1]), None).unwrap();
    let null = m.condition_vectors(&[5], &Condition::labels(vec![1]).null(3), None).unwrap();
    let table = m.conditioner().label_table().embed(&[1, 3]).unwrap();
    let rows = table.to_vec2::<f64>().unwrap();
    let diff: Vec<f64> = flat(&null).iter().zip(flat(&real)).map(|(a, b)| a - b).collect();
    for (d, (n, r)) in diff.iter().zip(rows[1].iter().zip(&rows[0])) {
        assert!((d - (n - r)).abs() < 1e-12);
    }
    assert!(m.condition_vectors(&[5], &Condition::labels(vec![4]), None).is_err());
}

#[test]
fn unitary_condition_requires_matching_model() {
    let m = CircuitDenoiser::new(&compile_config(2, UEncConfig::for_qubits(2)), 1, DType::F32).unwrap();
    assert!(m.condition_vectors(&[0], &Condition::labels(vec![0]), None).is_err());
    let id = circuit_unitary(&Circuit::empty(2)).unwrap();
    let u = unitary_tensor(&[id], DType::F32).unwrap();
    let with = Condition::with_unitaries(vec![0], u);
    assert_eq!(m.condition_vectors(&[0], &with, None).unwrap().dims(), &[1, 16]);
    // Null condition zeroes the unitary embedding: only the fuse bias path remains.
    let n1 = m.condition_vectors(&[0], &with.null(4), None).unwrap();
    let other = unitary_tensor(&[circuit_unitary(&Circuit::new(2, vec![Gate::cx(0, 1)]).unwrap()).unwrap()], DType::F32).unwrap();
    let n2 = m.condition_vectors(&[0], &Condition::with_unitaries(vec![0], other).null(4), None).unwrap();
    assert_eq!(flat(&n1), flat(&n2));
}

#[test]
fn unitary_conditioned_gradients_match_finite_differences() {
    let uenc = UEncConfig { qubits: 2, channels: vec![8], heads: 2, out_channels: 4, dropout: 0.1 };
    let m = CircuitDenoiser::new(&compile_config(2, uenc), 31, DType::F64).unwrap();
    m.store().randomize(32, 0.3, |_| true).unwrap();
    let schedule = NoiseSchedule::cosine(1000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let x0 = gaussian(&[3, 2, 4, 8], DType::F64, &mut rng).unwrap();
    let us: Vec<UnitaryMatrix> = (0..3).map(|_| random_unitary(4, &mut rng)).collect();
    let cond = Condition::with_unitaries(vec![0, 1, 2], unitary_tensor(&us, DType::F64).unwrap());
    let loss_at = || {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        training_loss(&m, &x0, &cond, &schedule, &mut rng).unwrap()
    };
    let grads = loss_at().backward().unwrap();
    // Probe the unitary-encoder and fusion weights specifically.
    let names: Vec<String> = m.store().names().into_iter().filter(|n| n.starts_with("cond.")).collect();
    let h = 1e-5;
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
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        m.store().set(name, &Tensor::from_vec(original, var.dims(), &Device::Cpu).unwrap()).unwrap();
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        assert!(rel < 1e-3, "{name}[{i}]: analytic {analytic} numeric {numeric}");
    }
}
