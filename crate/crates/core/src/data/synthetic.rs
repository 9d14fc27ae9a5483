use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng, Vector};

use super::ClientDataset;

/// Spherical Gaussian mixture with one component per class, shared by all
/// clients before skewing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseDistribution {
    /// `C × d` class means.
    pub means: Matrix,
    pub noise_std: f64,
}

impl BaseDistribution {
    pub fn new(seed: u64, dim: usize, classes: usize, mean_spread: f64, noise_std: f64) -> Result<Self> {
        if dim < 2 || classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need dim >= 2 and classes >= 2, got dim={dim}, classes={classes}"
            )));
        }
        let mut rng = Rng::keyed(seed, "class-means", &[]);
        let means = (0..classes * dim).map(|_| mean_spread * rng.normal()).collect();
        Ok(Self {
            means: Matrix::from_vec(classes, dim, means)?,
            noise_std,
        })
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn classes(&self) -> usize {
        self.means.rows()
    }

    /// Draws `n` samples with uniform class priors.
    pub fn sample(&self, rng: &mut Rng, n: usize) -> (Matrix, Vec<usize>) {
        let d = self.dim();
        let mut feats = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = rng.below(self.classes());
            for &m in self.means.row(y) {
                feats.push(m + self.noise_std * rng.normal());
            }
            labels.push(y);
        }
        (Matrix::from_vec(n, d, feats).expect("sized above"), labels)
    }
}

/// Base mixture with unit spread and unit noise, sampled from `seed`.
pub fn generate_base(seed: u64, n: usize, dim: usize, classes: usize) -> Result<(Matrix, Vec<usize>)> {
    let base = BaseDistribution::new(seed, dim, classes, 1.0, 1.0)?;
    Ok(base.sample(&mut Rng::keyed(seed, "base-samples", &[]), n))
}

/// Ground-truth client skew `x ↦ G·x + c`, plus label noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewSpec {
    pub g: Matrix,
    pub c: Vector,
    pub label_noise: f64,
}

impl SkewSpec {
    pub fn identity(dim: usize) -> Self {
        Self {
            g: Matrix::identity(dim),
            c: Vector::zeros(dim),
            label_noise: 0.0,
        }
    }

    /// `G = I + ε·R` with `R_ij ~ N(0, 1/d)` and `ε` uniform in `strength`,
    /// rejected until `|det G| > 1e-6` and `cond(G) ≤ max_condition`.
    pub fn random(
        rng: &mut Rng,
        dim: usize,
        strength: (f64, f64),
        offset_scale: f64,
        label_noise: f64,
        max_condition: f64,
    ) -> Result<Self> {
        let scale = 1.0 / (dim as f64).sqrt();
        for _ in 0..1000 {
            let eps = rng.range(strength.0, strength.1);
            let mut g = Matrix::identity(dim);
            for v in g.as_mut_slice() {
                *v += eps * scale * rng.normal();
            }
            let det = g.determinant()?;
            if det.abs() <= 1e-6 {
                continue;
            }
            if g.condition_number()? > max_condition {
                continue;
            }
            let c = Vector::from((0..dim).map(|_| offset_scale * rng.normal()).collect::<Vec<_>>());
            return Ok(Self { g, c, label_noise });
        }
        Err(Error::Numeric("no well-conditioned skew after 1000 draws".into()))
    }

    /// A nearby skew: `G·(I + δ·R)` and `c + δ·offset_scale·z`.
    pub fn perturbed(&self, rng: &mut Rng, delta: f64, offset_scale: f64) -> Result<Self> {
        let d = self.g.rows();
        let scale = 1.0 / (d as f64).sqrt();
        let mut p = Matrix::identity(d);
        for v in p.as_mut_slice() {
            *v += delta * scale * rng.normal();
        }
        let mut c = self.c.clone();
        for v in c.as_mut_slice() {
            *v += delta * offset_scale * rng.normal();
        }
        Ok(Self {
            g: self.g.matmul(&p)?,
            c,
            label_noise: self.label_noise,
        })
    }

    pub fn dim(&self) -> usize {
        self.g.rows()
    }
}

/// Applies `x ↦ G·x + c` to every row and resamples a `label_noise` fraction
/// of labels uniformly.
pub fn apply_skew(
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
    spec: &SkewSpec,
    seed: u64,
) -> Result<(Matrix, Vec<usize>)> {
    let d = features.cols();
    if spec.g.rows() != d || spec.g.cols() != d || spec.c.len() != d {
        return Err(Error::DimensionMismatch {
            context: "skew",
            expected: d,
            found: spec.g.rows(),
        });
    }
    if spec.g.determinant()?.abs() <= 1e-6 {
        return Err(Error::InvalidInput("skew matrix is singular".into()));
    }
    let mut out = Matrix::zeros(features.rows(), d);
    for r in 0..features.rows() {
        let x = features.row(r);
        let dst = out.row_mut(r);
        for (i, o) in dst.iter_mut().enumerate() {
            *o = spec
                .g
                .row(i)
                .iter()
                .zip(x)
                .fold(0.0, |acc, (a, b)| acc + a * b)
                + spec.c[i];
        }
    }
    let mut labels = labels.to_vec();
    if spec.label_noise > 0.0 {
        let mut rng = Rng::keyed(seed, "label-noise", &[]);
        for y in &mut labels {
            if rng.uniform() < spec.label_noise {
                *y = rng.below(num_classes);
            }
        }
    }
    Ok((out, labels))
}

/// Which client domain an evaluation split comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSplitSpec {
    pub name: String,
    /// Client whose skew generates the split (and whose transform is applied
    /// at evaluation time).
    pub client: usize,
    /// When set, the split uses a perturbation of the client's skew of this
    /// strength, modelling a related but unseen domain.
    #[serde(default)]
    pub variant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub classes: usize,
    pub client_sizes: Vec<usize>,
    pub domain_tags: Vec<String>,
    pub mean_spread: f64,
    pub noise_std: f64,
    /// Range of `ε` in `G = I + ε·R`.
    pub skew_strength: (f64, f64),
    pub offset_scale: f64,
    pub max_condition: f64,
    pub label_noise: f64,
    pub eval_size: usize,
    pub eval_splits: Vec<EvalSplitSpec>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            classes: 8,
            client_sizes: vec![4200, 4500, 1000, 1400, 400],
            domain_tags: ["broadcast", "dictation", "meeting", "hospitality", "accented"]
                .map(String::from)
                .to_vec(),
            mean_spread: 1.0,
            noise_std: 1.0,
            skew_strength: (0.3, 1.0),
            offset_scale: 1.0,
            max_condition: 50.0,
            label_noise: 0.0,
            eval_size: 600,
            eval_splits: vec![
                EvalSplitSpec { name: "S1".into(), client: 0, variant: None },
                EvalSplitSpec { name: "S2".into(), client: 3, variant: None },
                EvalSplitSpec { name: "S3".into(), client: 4, variant: None },
                EvalSplitSpec { name: "S4".into(), client: 4, variant: Some(0.3) },
            ],
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.classes < 2 {
            return Err(Error::Config("synthetic dim and classes must be >= 2".into()));
        }
        if self.client_sizes.is_empty() {
            return Err(Error::Config("synthetic task needs at least one client".into()));
        }
        if !self.domain_tags.is_empty() && self.domain_tags.len() != self.client_sizes.len() {
            return Err(Error::Config("domain_tags must match client_sizes".into()));
        }
        if let Some(s) = self.eval_splits.iter().find(|s| s.client >= self.client_sizes.len()) {
            return Err(Error::Config(format!("eval split {} refers to unknown client {}", s.name, s.client)));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::Config("label_noise must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSplit {
    pub name: String,
    pub client: Option<usize>,
    pub features: Matrix,
    pub labels: Vec<usize>,
}

/// Synthetic clients together with the ground truth that produced them.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub seed: u64,
    pub base: BaseDistribution,
    pub skews: Vec<SkewSpec>,
    pub clients: Vec<ClientDataset>,
    pub eval: Vec<EvalSplit>,
}

pub fn generate_task(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticTask> {
    spec.validate()?;
    let base = BaseDistribution::new(seed, spec.dim, spec.classes, spec.mean_spread, spec.noise_std)?;
    let mut skews = Vec::with_capacity(spec.client_sizes.len());
    let mut clients = Vec::with_capacity(spec.client_sizes.len());
    for (i, &n) in spec.client_sizes.iter().enumerate() {
        let id = i as u64;
        let skew = SkewSpec::random(
            &mut Rng::keyed(seed, "skew", &[id]),
            spec.dim,
            spec.skew_strength,
            spec.offset_scale,
            spec.label_noise,
            spec.max_condition,
        )?;
        let (x, y) = base.sample(&mut Rng::keyed(seed, "client-samples", &[id]), n);
        let (x, y) = apply_skew(&x, &y, spec.classes, &skew, Rng::keyed(seed, "client-noise", &[id]).seed())?;
        let tag = spec.domain_tags.get(i).cloned().unwrap_or_else(|| format!("client{i}"));
        clients.push(ClientDataset::new(i, x, y, spec.classes, tag)?);
        skews.push(skew);
    }
    let mut eval = Vec::with_capacity(spec.eval_splits.len());
    for (k, split) in spec.eval_splits.iter().enumerate() {
        let key = k as u64;
        let skew = match split.variant {
            Some(delta) => skews[split.client].perturbed(
                &mut Rng::keyed(seed, "eval-variant", &[key]),
                delta,
                spec.offset_scale,
            )?,
            None => skews[split.client].clone(),
        };
        // evaluation labels stay clean
        let clean = SkewSpec {
            label_noise: 0.0,
            ..skew
        };
        let (x, y) = base.sample(&mut Rng::keyed(seed, "eval-samples", &[key]), spec.eval_size);
        let (x, y) = apply_skew(&x, &y, spec.classes, &clean, 0)?;
        eval.push(EvalSplit {
            name: split.name.clone(),
            client: Some(split.client),
            features: x,
            labels: y,
        });
    }
    Ok(SyntheticTask {
        seed,
        base,
        skews,
        clients,
        eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_base(4, 50, 3, 2).unwrap();
        let b = generate_base(4, 50, 3, 2).unwrap();
        assert_eq!(a, b);
        let (x, y) = generate_base(4, 0, 3, 2).unwrap();
        assert_eq!((x.rows(), y.len()), (0, 0));
        assert!(generate_base(4, 10, 1, 2).is_err());
    }

    #[test]
    fn class_priors_are_uniform() {
        // binomial(n, 1/C): sd = sqrt(n p (1-p)) = sqrt(10000 * 1/8 * 7/8) ≈ 33.07
        let (n, c) = (10_000usize, 8usize);
        let (_, y) = generate_base(21, n, 4, c).unwrap();
        let sd = (n as f64 * (1.0 / c as f64) * (1.0 - 1.0 / c as f64)).sqrt();
        for k in 0..c {
            let count = y.iter().filter(|&&l| l == k).count() as f64;
            assert!((count - n as f64 / c as f64).abs() < 5.0 * sd, "class {k}: {count}");
        }
    }

    #[test]
    fn identity_skew_is_identity() {
        let (x, y) = generate_base(1, 20, 3, 3).unwrap();
        let (sx, sy) = apply_skew(&x, &y, 3, &SkewSpec::identity(3), 0).unwrap();
        assert_eq!(sx, x);
        assert_eq!(sy, y);
    }

    #[test]
    fn doubling_skew() {
        let (x, y) = generate_base(1, 20, 3, 3).unwrap();
        let spec = SkewSpec {
            g: Matrix::diag(&[2.0; 3]),
            c: Vector::zeros(3),
            label_noise: 0.0,
        };
        let (sx, _) = apply_skew(&x, &y, 3, &spec, 0).unwrap();
        for (a, b) in sx.as_slice().iter().zip(x.as_slice()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn inverse_skew_round_trip() {
        let mut rng = Rng::new(8);
        let (x, y) = generate_base(2, 40, 4, 3).unwrap();
        let spec = SkewSpec::random(&mut rng, 4, (0.3, 1.0), 1.0, 0.0, 50.0).unwrap();
        let (sx, sy) = apply_skew(&x, &y, 3, &spec, 0).unwrap();
        assert_eq!(sy, y);
        let g_inv = spec.g.inverse().unwrap();
        let c_inv = g_inv.matvec(&spec.c).unwrap();
        let inv = SkewSpec {
            g: g_inv,
            c: Vector::from(c_inv.iter().map(|v| -v).collect::<Vec<_>>()),
            label_noise: 0.0,
        };
        let (back, _) = apply_skew(&sx, &sy, 3, &inv, 0).unwrap();
        let err = back.sub(&x).unwrap().as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn singular_skew_rejected() {
        let spec = SkewSpec {
            g: Matrix::zeros(2, 2),
            c: Vector::zeros(2),
            label_noise: 0.0,
        };
        let (x, y) = generate_base(1, 5, 2, 2).unwrap();
        assert!(matches!(apply_skew(&x, &y, 2, &spec, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn random_skews_respect_conditioning() {
        let mut rng = Rng::new(77);
        for _ in 0..20 {
            let s = SkewSpec::random(&mut rng, 16, (0.3, 1.0), 1.0, 0.0, 50.0).unwrap();
            assert!(s.g.condition_number().unwrap() <= 50.0);
            assert!(s.g.determinant().unwrap().abs() > 1e-6);
        }
    }

    #[test]
    fn label_noise_resamples_some_labels() {
        let (x, y) = generate_base(3, 2000, 2, 4).unwrap();
        let spec = SkewSpec {
            label_noise: 0.5,
            ..SkewSpec::identity(2)
        };
        let (_, noisy) = apply_skew(&x, &y, 4, &spec, 9).unwrap();
        let changed = noisy.iter().zip(&y).filter(|(a, b)| a != b).count();
        // expected fraction changed = 0.5 * 3/4
        assert!((changed as f64 / 2000.0 - 0.375).abs() < 0.05, "{changed}");
    }

    #[test]
    fn default_task_shape() {
        let task = generate_task(&SyntheticSpec::default(), 1).unwrap();
        let sizes: Vec<_> = task.clients.iter().map(ClientDataset::len).collect();
        assert_eq!(sizes, vec![4200, 4500, 1000, 1400, 400]);
        assert_eq!(task.eval.len(), 4);
        assert_eq!(task.eval[3].client, Some(4));
        assert_ne!(task.skews[0], task.skews[1]);
    }
}
