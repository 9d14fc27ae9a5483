//! Per-client affine canonicalizing transform `x ↦ A·x + b`, estimated
//! against a frozen global model.

use serde::{Deserialize, Serialize};

use crate::data::SkewSpec;
use crate::error::{Error, Result};
use crate::model::{loss_and_input_grad, sgd_step, BlockShape, LabeledBatch, ModelSpec, OptimizerState, ParamVector};
use crate::numkit::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub a: Matrix,
    pub b: Vector,
}

impl AffineTransform {
    pub fn identity(dim: usize) -> Self {
        Self {
            a: Matrix::identity(dim),
            b: Vector::zeros(dim),
        }
    }

    pub fn new(a: Matrix, b: Vector) -> Result<Self> {
        if a.rows() != a.cols() || a.rows() != b.len() {
            return Err(Error::DimensionMismatch {
                context: "affine transform",
                expected: a.rows(),
                found: b.len(),
            });
        }
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::Numeric("affine transform entries".into()));
        }
        Ok(Self { a, b })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Row-wise `A·x + b`.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let d = self.dim();
        if x.cols() != d {
            return Err(Error::DimensionMismatch {
                context: "transform input",
                expected: d,
                found: x.cols(),
            });
        }
        let mut out = Matrix::zeros(x.rows(), d);
        for r in 0..x.rows() {
            let src = x.row(r);
            for (i, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = self
                    .a
                    .row(i)
                    .iter()
                    .zip(src)
                    .fold(0.0, |acc, (a, v)| acc + a * v)
                    + self.b[i];
            }
        }
        Ok(out)
    }

    pub fn apply_batch(&self, batch: &LabeledBatch) -> Result<LabeledBatch> {
        Ok(LabeledBatch {
            features: self.apply(&batch.features)?,
            labels: batch.labels.clone(),
        })
    }

    /// Block layout used for optimizer state and checkpoints: `A` then `b`.
    pub fn manifest(dim: usize) -> Vec<BlockShape> {
        vec![BlockShape::new("A", dim, dim), BlockShape::new("b", dim, 1)]
    }

    pub fn to_params(&self) -> ParamVector {
        let mut data = self.a.as_slice().to_vec();
        data.extend_from_slice(self.b.as_slice());
        ParamVector::new(Self::manifest(self.dim()), data).expect("finite by construction")
    }

    pub fn from_params(p: &ParamVector) -> Result<Self> {
        let a = p.block("A").ok_or_else(|| Error::ManifestMismatch("missing block A".into()))?;
        let b = p.block("b").ok_or_else(|| Error::ManifestMismatch("missing block b".into()))?;
        Self::new(Matrix::from_vec(b.len(), b.len(), a.to_vec())?, Vector::from(b.to_vec()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformOptConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Steps per round; `None` means one pass over the round shard. `Some(0)`
    /// freezes the transform.
    pub steps_per_round: Option<usize>,
}

impl Default for TransformOptConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            momentum: 0.9,
            batch_size: 1024,
            steps_per_round: None,
        }
    }
}

impl TransformOptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("transform learning_rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("transform momentum must be in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("transform batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean cross-entropy of the model on transformed features, and its gradient
/// with respect to `(A, b)` laid out as [`AffineTransform::manifest`].
pub fn transform_loss_and_grad(
    f: &AffineTransform,
    w: &ParamVector,
    batch: &LabeledBatch,
    spec: &ModelSpec,
) -> Result<(f64, ParamVector)> {
    let transformed = f.apply_batch(batch)?;
    let (loss, dz) = loss_and_input_grad(w, &transformed, spec)?;
    let d = f.dim();
    let mut grad = ParamVector::zeros(AffineTransform::manifest(d));
    let g = grad.as_mut_slice();
    for r in 0..batch.len() {
        let x = batch.features.row(r);
        let gz = dz.row(r);
        for i in 0..d {
            let row = &mut g[i * d..(i + 1) * d];
            for (gij, xj) in row.iter_mut().zip(x) {
                *gij += gz[i] * xj;
            }
        }
        for (gb, v) in g[d * d..].iter_mut().zip(gz) {
            *gb += v;
        }
    }
    if !grad.is_finite() {
        return Err(Error::Numeric("transform gradient".into()));
    }
    Ok((loss, grad))
}

/// One momentum-SGD step on `(A, b)` with `w` held fixed. Returns the loss
/// before the step.
pub fn estimate_step(
    f: &mut AffineTransform,
    w: &ParamVector,
    batch: &LabeledBatch,
    spec: &ModelSpec,
    state: &mut OptimizerState,
) -> Result<f64> {
    let (loss, grad) = transform_loss_and_grad(f, w, batch, spec)?;
    let mut p = f.to_params();
    sgd_step(&mut p, &grad, state)?;
    *f = AffineTransform::from_params(&p)?;
    Ok(loss)
}

/// Runs one round's transform budget over `data`: consecutive batches of
/// `min(batch_size, len)` rows, wrapping around. Returns the mean pre-step
/// loss, or `None` when the budget is zero.
pub fn estimate(
    f: &mut AffineTransform,
    w: &ParamVector,
    data: &LabeledBatch,
    spec: &ModelSpec,
    cfg: &TransformOptConfig,
    state: &mut OptimizerState,
) -> Result<Option<f64>> {
    let n = data.len();
    let bs = cfg.batch_size.min(n).max(1);
    let steps = cfg.steps_per_round.unwrap_or_else(|| n.div_ceil(bs));
    if steps == 0 {
        return Ok(None);
    }
    let mut total = 0.0;
    let mut at = 0;
    for _ in 0..steps {
        if at >= n {
            at = 0;
        }
        let end = (at + bs).min(n);
        let batch = data.slice(at, end);
        at = end;
        total += estimate_step(f, w, &batch, spec, state)?;
    }
    Ok(Some(total / steps as f64))
}

/// `‖A·G − I‖_F / √d + ‖A·c + b‖₂ / √d`: zero when `F` exactly undoes the
/// skew `x ↦ G·x + c`.
pub fn compose_check(f: &AffineTransform, skew: &SkewSpec) -> Result<f64> {
    let d = f.dim();
    if skew.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "compose_check",
            expected: d,
            found: skew.dim(),
        });
    }
    let ag = f.a.matmul(&skew.g)?;
    let lin = ag.sub(&Matrix::identity(d))?.frobenius_norm();
    let mut shift = f.a.matvec(&skew.c)?;
    for (s, b) in shift.as_mut_slice().iter_mut().zip(f.b.iter()) {
        *s += b;
    }
    let root_d = (d as f64).sqrt();
    Ok(lin / root_d + shift.norm() / root_d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_skew, BaseDistribution};
    use crate::model::{init_params, loss, loss_and_grad};
    use crate::numkit::{finite_diff_grad, relative_error, Rng};

    fn batch_from(x: Matrix, y: Vec<usize>) -> LabeledBatch {
        LabeledBatch::new(x, y).unwrap()
    }

    #[test]
    fn apply_examples() {
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![-3.0, 0.5]]).unwrap();
        assert_eq!(AffineTransform::identity(2).apply(&x).unwrap(), x);

        let v = Vector::from(vec![4.0, -1.0]);
        let flat = AffineTransform::new(Matrix::zeros(2, 2), v.clone()).unwrap();
        let out = flat.apply(&x).unwrap();
        assert_eq!(out.row(0), v.as_slice());
        assert_eq!(out.row(1), v.as_slice());

        let f = AffineTransform::new(Matrix::diag(&[2.0, 3.0]), Vector::from(vec![1.0, 0.0])).unwrap();
        let one = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(f.apply(&one).unwrap().row(0), &[3.0, 3.0]);

        assert!(f.apply(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn identity_is_bit_exact() {
        let mut rng = Rng::new(1);
        let x = Matrix::from_vec(50, 5, (0..250).map(|_| 1e3 * rng.normal()).collect()).unwrap();
        let y = AffineTransform::identity(5).apply(&x).unwrap();
        assert!(x.as_slice().iter().zip(y.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn params_round_trip() {
        let f = AffineTransform::new(Matrix::diag(&[2.0, 3.0]), Vector::from(vec![1.0, -1.0])).unwrap();
        assert_eq!(AffineTransform::from_params(&f.to_params()).unwrap(), f);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(31);
        let spec = ModelSpec::new(vec![3, 5, 3]).unwrap();
        for trial in 0..10 {
            let w = init_params(&spec, &mut rng.derive("w", &[trial]));
            let x = Matrix::from_vec(4, 3, (0..12).map(|_| rng.normal()).collect()).unwrap();
            let batch = batch_from(x, (0..4).map(|_| rng.below(3)).collect());
            let mut f = AffineTransform::identity(3);
            for v in f.a.as_mut_slice() {
                *v += 0.3 * rng.normal();
            }
            for v in f.b.as_mut_slice() {
                *v = 0.3 * rng.normal();
            }
            let (_, grad) = transform_loss_and_grad(&f, &w, &batch, &spec).unwrap();
            let fd = finite_diff_grad(
                |p: &Vector| {
                    let pv = ParamVector::new(AffineTransform::manifest(3), p.as_slice().to_vec()).unwrap();
                    let g = AffineTransform::from_params(&pv).unwrap();
                    loss(&w, &g.apply_batch(&batch).unwrap(), &spec).unwrap()
                },
                &Vector::from(f.to_params().flatten()),
                1e-5,
            )
            .unwrap();
            for (a, b) in grad.as_slice().iter().zip(fd.iter()) {
                assert!(relative_error(*a, *b, 1e-6) <= 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn estimate_step_leaves_model_untouched() {
        let mut rng = Rng::new(3);
        let spec = ModelSpec::new(vec![2, 4, 2]).unwrap();
        let w = init_params(&spec, &mut rng);
        let before = w.clone();
        let batch = batch_from(Matrix::from_vec(3, 2, (0..6).map(|_| rng.normal()).collect()).unwrap(), vec![0, 1, 1]);
        let mut f = AffineTransform::identity(2);
        let mut st = OptimizerState::new(&f.to_params(), 0.1, 0.9);
        for _ in 0..5 {
            estimate_step(&mut f, &w, &batch, &spec, &mut st).unwrap();
        }
        assert!(w.bit_eq(&before));
        assert_ne!(f, AffineTransform::identity(2));
    }

    #[test]
    fn zero_gradient_keeps_transform() {
        // all-zero weights: logits constant, loss flat in (A, b)
        let spec = ModelSpec::new(vec![2, 3, 2]).unwrap();
        let w = ParamVector::zeros(spec.manifest());
        let batch = batch_from(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap(), vec![1]);
        let mut f = AffineTransform::new(Matrix::diag(&[1.5, 0.5]), Vector::from(vec![0.1, 0.2])).unwrap();
        let orig = f.clone();
        let mut st = OptimizerState::new(&f.to_params(), 0.5, 0.9);
        estimate_step(&mut f, &w, &batch, &spec, &mut st).unwrap();
        assert_eq!(f, orig);
    }

    #[test]
    fn compose_check_examples() {
        let mut rng = Rng::new(4);
        let skew = SkewSpec::random(&mut rng, 4, (0.3, 1.0), 1.0, 0.0, 50.0).unwrap();
        let a = skew.g.inverse().unwrap();
        let b = a.matvec(&skew.c).unwrap();
        let inv = AffineTransform::new(a, Vector::from(b.iter().map(|v| -v).collect::<Vec<_>>())).unwrap();
        assert!(compose_check(&inv, &skew).unwrap() < 1e-10);

        assert_eq!(compose_check(&AffineTransform::identity(3), &SkewSpec::identity(3)).unwrap(), 0.0);

        let doubled = SkewSpec {
            g: Matrix::diag(&[2.0; 3]),
            ..SkewSpec::identity(3)
        };
        assert!((compose_check(&AffineTransform::identity(3), &doubled).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn small_lr_estimation_mostly_monotone() {
        let mut rng = Rng::new(6);
        let spec = ModelSpec::new(vec![3, 6, 3]).unwrap();
        let w = init_params(&spec, &mut rng);
        let x = Matrix::from_vec(32, 3, (0..96).map(|_| 2.0 * rng.normal()).collect()).unwrap();
        let batch = batch_from(x, (0..32).map(|_| rng.below(3)).collect());
        let mut f = AffineTransform::identity(3);
        let mut st = OptimizerState::new(&f.to_params(), 1e-3, 0.9);
        let mut losses = Vec::new();
        for _ in 0..51 {
            losses.push(estimate_step(&mut f, &w, &batch, &spec, &mut st).unwrap());
        }
        let non_increasing = losses.windows(2).filter(|p| p[1] <= p[0]).count();
        assert!(non_increasing >= 45, "{non_increasing}/50");
    }

    #[test]
    fn canonicalization_beats_identity_on_skewed_data() {
        let spec = ModelSpec::new(vec![4, 16, 4]).unwrap();
        let base = BaseDistribution::new(2, 4, 4, 1.5, 0.5).unwrap();
        let (x, y) = base.sample(&mut Rng::new(10), 800);
        let train = batch_from(x, y);

        // pre-train on base data
        let mut w = init_params(&spec, &mut Rng::new(11));
        let mut opt = OptimizerState::new(&w, 0.1, 0.9);
        for _ in 0..30 {
            for k in 0..8 {
                let b = train.slice(k * 100, (k + 1) * 100);
                let (_, g) = loss_and_grad(&w, &b, &spec).unwrap();
                sgd_step(&mut w, &g, &mut opt).unwrap();
            }
        }

        let skew = SkewSpec::random(&mut Rng::new(12), 4, (0.5, 0.8), 0.8, 0.0, 50.0).unwrap();
        let (sx, sy) = apply_skew(&train.features, &train.labels, 4, &skew, 0).unwrap();
        let skewed = batch_from(sx, sy);

        let frozen = w.clone();
        let mut f = AffineTransform::identity(4);
        let mut st = OptimizerState::new(&f.to_params(), 0.05, 0.9);
        for k in 0..200 {
            let at = (k % 4) * 200;
            estimate_step(&mut f, &w, &skewed.slice(at, at + 200), &spec, &mut st).unwrap();
        }
        assert!(w.bit_eq(&frozen));
        let before = loss(&w, &skewed, &spec).unwrap();
        let after = loss(&w, &f.apply_batch(&skewed).unwrap(), &spec).unwrap();
        assert!(after < before, "{after} !< {before}");
    }
}
