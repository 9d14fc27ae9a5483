//! Browser bindings for the fedsilo demo page. Every entry point takes and
//! returns JSON strings so the page needs no generated glue beyond
//! wasm-bindgen's.

use fedsilo::baselines::centralized_train;
use fedsilo::data::{apply_skew, generate_task, BaseDistribution, ClientDataset, SkewSpec, SyntheticSpec};
use fedsilo::federation::{derive_weights, Mode, TrainingConfig, WeightStrategy};
use fedsilo::harness::{run_mode, LoadedData};
use fedsilo::model::{LabeledBatch, ModelSpec, OptimizerState};
use fedsilo::numkit::{Matrix, Rng};
use fedsilo::transform::{compose_check, estimate_step, AffineTransform};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn to_js(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

fn field<T: serde::de::DeserializeOwned>(v: &Value, key: &str, default: T) -> Result<T, String> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(x) => serde_json::from_value(x.clone()).map_err(|e| format!("{key}: {e}")),
    }
}

/// Five clients at a tenth of the default sizes, so a run takes seconds.
pub fn demo_spec() -> SyntheticSpec {
    SyntheticSpec {
        client_sizes: vec![420, 450, 100, 140, 40],
        eval_size: 200,
        ..SyntheticSpec::default()
    }
}

/// Runs one training job on the demo task. `request` fields (all optional):
/// `mode`, `eta`, `rounds`, `epochs`, `seed`, `local_lr`, `weighting`.
/// Returns the mean evaluation loss at the end of every epoch.
pub fn training_curve_json(request: &str) -> Result<Value, String> {
    let req: Value = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let defaults = TrainingConfig::default();
    let mode: Mode = field::<String>(&req, "mode", "fedavg".into())?.parse().map_err(|e: fedsilo::Error| e.to_string())?;
    let cfg = TrainingConfig {
        mode,
        global_lr: field(&req, "eta", defaults.global_lr)?,
        rounds: field(&req, "rounds", 10)?,
        epochs: field(&req, "epochs", 10)?,
        pt_epochs: field(&req, "pt_epochs", 5)?,
        seed: field(&req, "seed", 0)?,
        local_lr: field(&req, "local_lr", defaults.local_lr)?,
        weighting: field(&req, "weighting", WeightStrategy::Equal)?,
        anneal: fedsilo::model::AnnealSchedule::after(field(&req, "anneal_after", 5)?),
        parallel_clients: false,
        ..defaults
    };
    let task = generate_task(&demo_spec(), cfg.seed).map_err(|e| e.to_string())?;
    let data = LoadedData {
        clients: task.clients,
        eval: task.eval,
        task: None,
    };
    let out = run_mode(&cfg, &data).map_err(|e| e.to_string())?;
    let mut epochs = Vec::new();
    let mut mean_eval = Vec::new();
    let mut per_split: Vec<Vec<f64>> = vec![Vec::new(); out.eval_names.len()];
    for (i, r) in out.reports.iter().enumerate() {
        let last_of_epoch = out.reports.get(i + 1).is_none_or(|n| n.epoch != r.epoch);
        if last_of_epoch {
            epochs.push(r.epoch);
            mean_eval.push(r.eval_loss.iter().sum::<f64>() / r.eval_loss.len() as f64);
            for (s, l) in per_split.iter_mut().zip(&r.eval_loss) {
                s.push(*l);
            }
        }
    }
    Ok(json!({
        "mode": cfg.mode.as_str(),
        "epochs": epochs,
        "mean_eval": mean_eval,
        "splits": out.eval_names,
        "per_split": per_split,
        "total_bytes": out.traffic.bytes_up + out.traffic.bytes_down,
        "rounds_run": out.reports.len(),
    }))
}

/// Fits an affine transform that maps skewed 2-D data back onto a model
/// trained on the unskewed data. `request` fields: `strength`, `offset`,
/// `steps`, `lr`, `seed`.
pub fn skew_recovery_json(request: &str) -> Result<Value, String> {
    let req: Value = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let strength: f64 = field(&req, "strength", 0.8)?;
    let offset: f64 = field(&req, "offset", 1.0)?;
    let steps: usize = field(&req, "steps", 300)?;
    let lr: f64 = field(&req, "lr", 0.05)?;
    let seed: u64 = field(&req, "seed", 0)?;
    let err = |e: fedsilo::Error| e.to_string();

    let (dim, classes) = (2, 4);
    let base = BaseDistribution::new(seed, dim, classes, 2.5, 0.6).map_err(err)?;
    let (x, y) = base.sample(&mut Rng::keyed(seed, "demo-base", &[]), 400);
    let model_cfg = TrainingConfig {
        clients: 1,
        epochs: 15,
        rounds: 1,
        batch_size: 16,
        local_lr: 0.05,
        hidden: vec![16],
        seed,
        ..TrainingConfig::default()
    };
    let ds = ClientDataset::new(0, x.clone(), y.clone(), classes, "base").map_err(err)?;
    let trained = centralized_train(&[ds], &model_cfg, &[]).map_err(err)?;
    let spec = ModelSpec::new(vec![dim, 16, classes]).map_err(err)?;

    let skew = SkewSpec::random(
        &mut Rng::keyed(seed, "demo-skew", &[]),
        dim,
        (strength, strength),
        offset,
        0.0,
        50.0,
    )
    .map_err(err)?;
    let (sx, sy) = apply_skew(&x, &y, classes, &skew, 0).map_err(err)?;
    let batch = LabeledBatch::new(sx.clone(), sy).map_err(err)?;

    let mut f = AffineTransform::identity(dim);
    let mut opt = OptimizerState::new(&f.to_params(), lr, 0.9);
    let identity_residual = compose_check(&f, &skew).map_err(err)?;
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        losses.push(estimate_step(&mut f, &trained.params, &batch, &spec, &mut opt).map_err(err)?);
    }
    losses.push(fedsilo::model::loss(&trained.params, &f.apply_batch(&batch).map_err(err)?, &spec).map_err(err)?);
    let recovered = f.apply(&sx).map_err(err)?;
    let points = |m: &Matrix| -> Vec<[f64; 2]> { (0..m.rows()).map(|r| [m.get(r, 0), m.get(r, 1)]).collect() };
    Ok(json!({
        "labels": y,
        "base": points(&x),
        "skewed": points(&sx),
        "recovered": points(&recovered),
        "losses": losses,
        "residual": compose_check(&f, &skew).map_err(err)?,
        "identity_residual": identity_residual,
        "a": [f.a.row(0), f.a.row(1)],
        "b": f.b.as_slice(),
        "g": [skew.g.row(0), skew.g.row(1)],
        "c": skew.c.as_slice(),
    }))
}

/// Client weights for a strategy over the demo task's client sizes.
pub fn client_weights_json(strategy: &str) -> Result<Value, String> {
    let s: WeightStrategy = serde_json::from_str(strategy).map_err(|e| e.to_string())?;
    let spec = demo_spec();
    let w = derive_weights(&s, &spec.client_sizes).map_err(|e| e.to_string())?;
    Ok(json!({ "sizes": spec.client_sizes, "tags": spec.domain_tags, "weights": w }))
}

#[wasm_bindgen]
pub fn training_curve(request: &str) -> Result<String, JsValue> {
    to_js(training_curve_json(request))
}

#[wasm_bindgen]
pub fn skew_recovery(request: &str) -> Result<String, JsValue> {
    to_js(skew_recovery_json(request))
}

#[wasm_bindgen]
pub fn client_weights(strategy: &str) -> Result<String, JsValue> {
    to_js(client_weights_json(strategy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_has_one_point_per_epoch() {
        let v = training_curve_json(r#"{"mode": "fedavg", "epochs": 2, "rounds": 4}"#).unwrap();
        assert_eq!(v["epochs"], json!([1, 2]));
        assert_eq!(v["mean_eval"].as_array().unwrap().len(), 2);
        assert_eq!(v["per_split"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn caft_pt_curve_includes_pretraining() {
        let v = training_curve_json(r#"{"mode": "caft_pt", "epochs": 2, "pt_epochs": 1, "rounds": 2}"#).unwrap();
        assert_eq!(v["epochs"], json!([1, 2, 3]));
    }

    #[test]
    fn skew_recovery_beats_identity() {
        let v = skew_recovery_json(r#"{"steps": 200}"#).unwrap();
        let losses = v["losses"].as_array().unwrap();
        assert!(losses.last().unwrap().as_f64() < losses[0].as_f64());
        assert!(v["residual"].as_f64().unwrap() < v["identity_residual"].as_f64().unwrap());
        assert_eq!(v["recovered"].as_array().unwrap().len(), 400);
    }

    #[test]
    fn weights_sum_to_one() {
        let v = client_weights_json(r#"{"kind": "preference", "client": 4, "weight": 0.4}"#).unwrap();
        let w: Vec<f64> = serde_json::from_value(v["weights"].clone()).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w[4], 0.4);
    }

    #[test]
    fn bad_requests_are_errors() {
        assert!(training_curve_json(r#"{"mode": "nope"}"#).is_err());
        assert!(training_curve_json("not json").is_err());
        assert!(client_weights_json(r#"{"kind": "preference", "client": 9, "weight": 0.4}"#).is_err());
    }
}
