use crate::baselines::centralized_train;
use crate::data::{generate_task, shard_epoch, ClientDataset, EvalSplitSpec, SyntheticSpec};
use crate::error::Result;
use crate::federation::{fedavg_update, run_training, Mode, TrainingConfig};
use crate::model::{init_params, loss, loss_and_grad, LabeledBatch, ModelSpec, ParamVector};
use crate::numkit::{finite_diff_grad, relative_error, Matrix, Rng, Vector};
use crate::transform::{transform_loss_and_grad, AffineTransform};
use crate::transport::{deserialize, serialize, RoundMessage};

/// Outcome of one built-in check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, r: Result<(bool, String)>) -> Check {
    match r {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Quick versions of the invariants: small instance counts, small tasks.
pub fn run_checks(seed: u64) -> Vec<Check> {
    vec![
        check("averaging identity", averaging(seed)),
        check("single-client degeneracy", single_client(seed)),
        check("caft reduction", caft_reduction(seed)),
        check("model gradient", model_gradient(seed)),
        check("transform gradient", transform_gradient(seed)),
        check("sharding partition", sharding(seed)),
        check("wire round trip", wire(seed)),
    ]
}

fn random_params(rng: &mut Rng, spec: &ModelSpec, scale: f64) -> ParamVector {
    let data = (0..spec.num_params()).map(|_| scale * rng.normal()).collect();
    ParamVector::new(spec.manifest(), data).expect("finite params")
}

fn random_batch(rng: &mut Rng, n: usize, d: usize, c: usize) -> LabeledBatch {
    let x = (0..n * d).map(|_| rng.normal()).collect();
    let y = (0..n).map(|_| rng.below(c)).collect();
    LabeledBatch::new(Matrix::from_vec(n, d, x).expect("shape"), y).expect("batch")
}

fn averaging(seed: u64) -> Result<(bool, String)> {
    let mut rng = Rng::keyed(seed, "verify-avg", &[]);
    let spec = ModelSpec::new(vec![3, 4, 2])?;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let l = 1 + rng.below(6);
        let w_t = random_params(&mut rng, &spec, 1.0);
        let locals: Vec<_> = (0..l).map(|_| random_params(&mut rng, &spec, 1.0)).collect();
        let raw: Vec<f64> = (0..l).map(|_| 0.05 + rng.uniform()).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let got = fedavg_update(&w_t, &locals, &p, 1.0)?;
        for (k, g) in got.as_slice().iter().enumerate() {
            let want: f64 = locals.iter().zip(&p).map(|(w, pi)| pi * w.as_slice()[k]).sum();
            worst = worst.max((g - want).abs());
        }
    }
    Ok((worst <= 1e-12, format!("max deviation {worst:.2e}")))
}

fn tiny_task(seed: u64, sizes: Vec<usize>) -> Result<(Vec<ClientDataset>, Vec<crate::data::EvalSplit>)> {
    let spec = SyntheticSpec {
        dim: 4,
        classes: 3,
        eval_splits: vec![EvalSplitSpec {
            name: "e0".into(),
            client: 0,
            variant: None,
        }],
        domain_tags: Vec::new(),
        client_sizes: sizes,
        eval_size: 40,
        ..SyntheticSpec::default()
    };
    let t = generate_task(&spec, seed)?;
    Ok((t.clients, t.eval))
}

fn tiny_cfg(clients: usize, seed: u64) -> TrainingConfig {
    TrainingConfig {
        clients,
        epochs: 2,
        rounds: 5,
        batch_size: 8,
        hidden: vec![6],
        seed,
        ..TrainingConfig::default()
    }
}

fn single_client(seed: u64) -> Result<(bool, String)> {
    let (clients, eval) = tiny_task(seed, vec![90])?;
    let cfg = tiny_cfg(1, seed);
    let fed = run_training(&cfg, &clients, &eval)?;
    let cen = centralized_train(&clients, &cfg, &eval)?;
    let same = fed.params.bit_eq(&cen.params);
    Ok((same, format!("bit-identical: {same}")))
}

fn caft_reduction(seed: u64) -> Result<(bool, String)> {
    let (clients, eval) = tiny_task(seed, vec![60, 45, 30])?;
    let cfg = tiny_cfg(3, seed);
    let plain = run_training(&cfg, &clients, &eval)?;
    let mut caft_cfg = cfg.clone();
    caft_cfg.mode = Mode::Caft;
    caft_cfg.transform.steps_per_round = Some(0);
    let caft = run_training(&caft_cfg, &clients, &eval)?;
    let same = plain.params.bit_eq(&caft.params);
    Ok((same, format!("bit-identical: {same}")))
}

fn model_gradient(seed: u64) -> Result<(bool, String)> {
    let mut rng = Rng::keyed(seed, "verify-grad", &[]);
    let spec = ModelSpec::new(vec![3, 5, 3])?;
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let w = init_params(&spec, &mut rng.derive("w", &[trial]));
        let batch = random_batch(&mut rng, 4, 3, 3);
        let (_, grad) = loss_and_grad(&w, &batch, &spec)?;
        let manifest = w.manifest().to_vec();
        let fd = finite_diff_grad(
            |x: &Vector| {
                ParamVector::new(manifest.clone(), x.as_slice().to_vec())
                    .and_then(|p| loss(&p, &batch, &spec))
                    .unwrap_or(f64::NAN)
            },
            &Vector::from(w.flatten()),
            1e-5,
        )?;
        for (a, b) in grad.as_slice().iter().zip(fd.iter()) {
            worst = worst.max(relative_error(*a, *b, 1e-6));
        }
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.2e}")))
}

fn transform_gradient(seed: u64) -> Result<(bool, String)> {
    let mut rng = Rng::keyed(seed, "verify-tgrad", &[]);
    let spec = ModelSpec::new(vec![3, 5, 3])?;
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let w = init_params(&spec, &mut rng.derive("w", &[trial]));
        let batch = random_batch(&mut rng, 4, 3, 3);
        let a = Matrix::from_vec(3, 3, (0..9).map(|i| f64::from(u8::from(i % 4 == 0)) + 0.2 * rng.normal()).collect())?;
        let b = Vector::from((0..3).map(|_| 0.2 * rng.normal()).collect::<Vec<_>>());
        let f = AffineTransform::new(a, b)?;
        let (_, grad) = transform_loss_and_grad(&f, &w, &batch, &spec)?;
        let fd = finite_diff_grad(
            |x: &Vector| {
                let p = ParamVector::new(AffineTransform::manifest(3), x.as_slice().to_vec());
                p.and_then(|p| AffineTransform::from_params(&p))
                    .and_then(|g| loss(&w, &g.apply_batch(&batch)?, &spec))
                    .unwrap_or(f64::NAN)
            },
            &Vector::from(f.to_params().flatten()),
            1e-5,
        )?;
        for (a, b) in grad.as_slice().iter().zip(fd.iter()) {
            worst = worst.max(relative_error(*a, *b, 1e-6));
        }
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.2e}")))
}

fn sharding(seed: u64) -> Result<(bool, String)> {
    let mut rng = Rng::keyed(seed, "verify-shard", &[]);
    for _ in 0..100 {
        let t = 1 + rng.below(40);
        let n = t + rng.below(300);
        let ds = ClientDataset::new(0, Matrix::zeros(n, 1), vec![0; n], 2, "v")?;
        let shards = shard_epoch(&ds, t, 1, seed)?;
        let mut seen = vec![false; n];
        for s in &shards {
            for &i in &s.indices {
                if std::mem::replace(&mut seen[i], true) {
                    return Ok((false, format!("index {i} repeated (n={n}, T={t})")));
                }
            }
        }
        let (lo, hi) = shards.iter().fold((usize::MAX, 0), |(lo, hi), s| (lo.min(s.len()), hi.max(s.len())));
        if !seen.iter().all(|&s| s) || hi - lo > 1 || (n.is_multiple_of(t) && hi != n / t) {
            return Ok((false, format!("bad partition for n={n}, T={t}")));
        }
    }
    Ok((true, "100 random (n, T) pairs".into()))
}

fn wire(seed: u64) -> Result<(bool, String)> {
    let mut rng = Rng::keyed(seed, "verify-wire", &[]);
    let spec = ModelSpec::new(vec![4, 3, 2])?;
    let msg = RoundMessage::local(2, 3, 7, random_params(&mut rng, &spec, 1.0));
    let bytes = serialize(&msg);
    let back = deserialize(&bytes)?;
    let mut corrupt = bytes.clone();
    let at = 30 + rng.below(bytes.len() - 34);
    corrupt[at] ^= 0x10;
    let detected = deserialize(&corrupt).is_err();
    let ok = back == msg && detected;
    Ok((ok, format!("{} bytes, corruption detected: {detected}", bytes.len())))
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_checks(1) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
