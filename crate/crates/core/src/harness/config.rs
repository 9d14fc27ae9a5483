use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_task, load_csv, ClientDataset, EvalSplit, SyntheticSpec, SyntheticTask};
use crate::error::{Error, Result};
use crate::federation::{TrainingConfig, WeightStrategy};

/// Where client and evaluation data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated on the fly from the run seed.
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
    },
    /// One CSV per client, plus evaluation CSVs.
    Csv {
        clients: Vec<PathBuf>,
        #[serde(default)]
        eval: Vec<CsvEvalSplit>,
        /// Class count; inferred from the largest label when absent.
        #[serde(default)]
        num_classes: Option<usize>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            spec: SyntheticSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvEvalSplit {
    pub name: String,
    pub path: PathBuf,
    /// Client whose transform is applied before scoring this split.
    #[serde(default)]
    pub client: Option<usize>,
}

/// Grid for the `sweep` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub global_lr: Vec<f64>,
    pub rounds: Vec<usize>,
    pub weighting: Vec<WeightStrategy>,
    pub seeds: Vec<u64>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            global_lr: vec![0.8, 0.9, 0.95, 0.98, 1.0],
            rounds: vec![20],
            weighting: vec![WeightStrategy::Equal],
            seeds: vec![0],
        }
    }
}

impl SweepAxes {
    pub fn cells(&self) -> usize {
        self.global_lr.len() * self.rounds.len() * self.weighting.len() * self.seeds.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub training: TrainingConfig,
    pub data: DataSource,
    pub out_dir: PathBuf,
    pub sweep: SweepAxes,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            training: TrainingConfig::default(),
            data: DataSource::default(),
            out_dir: PathBuf::from("out"),
            sweep: SweepAxes::default(),
        }
    }
}

/// Client datasets and evaluation splits for one run.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub clients: Vec<ClientDataset>,
    pub eval: Vec<EvalSplit>,
    /// Ground truth, for synthetic data only.
    pub task: Option<SyntheticTask>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        let s = &self.sweep;
        if s.global_lr.is_empty() || s.rounds.is_empty() || s.weighting.is_empty() || s.seeds.is_empty() {
            return Err(Error::Config("sweep axes must be non-empty".into()));
        }
        if let Some(eta) = s.global_lr.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::Config(format!("sweep global_lr {eta} must be positive")));
        }
        if s.rounds.contains(&0) {
            return Err(Error::Config("sweep rounds must be >= 1".into()));
        }
        match &self.data {
            DataSource::Synthetic { spec } => {
                spec.validate()?;
                if spec.client_sizes.len() != self.training.clients {
                    return Err(Error::Config(format!(
                        "training.clients is {} but the synthetic spec has {} clients",
                        self.training.clients,
                        spec.client_sizes.len()
                    )));
                }
            }
            DataSource::Csv { clients, eval, .. } => {
                if clients.len() != self.training.clients {
                    return Err(Error::Config(format!(
                        "training.clients is {} but {} client files are listed",
                        self.training.clients,
                        clients.len()
                    )));
                }
                let paths = clients.iter().chain(eval.iter().map(|e| &e.path));
                if let Some(p) = paths.into_iter().find(|p| !p.exists()) {
                    return Err(Error::Config(format!("{} does not exist", p.display())));
                }
                if let Some(e) = eval.iter().find(|e| e.client.is_some_and(|c| c >= clients.len())) {
                    return Err(Error::Config(format!("eval split {} refers to an unknown client", e.name)));
                }
            }
        }
        if let Some(p) = &self.training.init_checkpoint {
            if !p.exists() {
                return Err(Error::Config(format!("init_checkpoint {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Loads or generates the data for `seed`.
    pub fn load_data(&self, seed: u64) -> Result<LoadedData> {
        match &self.data {
            DataSource::Synthetic { spec } => {
                let task = generate_task(spec, seed)?;
                Ok(LoadedData {
                    clients: task.clients.clone(),
                    eval: task.eval.clone(),
                    task: Some(task),
                })
            }
            DataSource::Csv {
                clients,
                eval,
                num_classes,
            } => {
                let mut loaded = Vec::with_capacity(clients.len());
                for (i, p) in clients.iter().enumerate() {
                    loaded.push(load_csv(p, i, *num_classes)?);
                }
                let classes = loaded.iter().map(|c| c.num_classes).max().unwrap_or(2);
                let mut splits = Vec::with_capacity(eval.len());
                for e in eval {
                    let ds = load_csv(&e.path, e.client.unwrap_or(0), Some(num_classes.unwrap_or(classes)))?;
                    splits.push(EvalSplit {
                        name: e.name.clone(),
                        client: e.client,
                        features: ds.features,
                        labels: ds.labels,
                    });
                }
                Ok(LoadedData {
                    clients: loaded,
                    eval: splits,
                    task: None,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::Mode;

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.training.mode = Mode::Caft;
        cfg.training.transform.steps_per_round = Some(3);
        cfg.sweep.weighting.push(WeightStrategy::Preference { client: 4, weight: 0.4 });
        let text = cfg.to_json().unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn csv_source_round_trip() {
        let cfg = ExperimentConfig {
            data: DataSource::Csv {
                clients: vec!["a.csv".into()],
                eval: vec![CsvEvalSplit {
                    name: "e".into(),
                    path: "e.csv".into(),
                    client: Some(0),
                }],
                num_classes: Some(3),
            },
            ..ExperimentConfig::default()
        };
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"training": {"rounds": 10}}"#).unwrap();
        assert_eq!(cfg.training.rounds, 10);
        assert_eq!(cfg.training.epochs, 20);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_json(r#"{"trainig": {}}"#).is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.sweep.rounds.clear();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::default();
        cfg.training.clients = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ExperimentConfig {
            training: TrainingConfig {
                clients: 1,
                ..TrainingConfig::default()
            },
            data: DataSource::Csv {
                clients: vec!["/nonexistent/a.csv".into()],
                eval: vec![],
                num_classes: None,
            },
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
