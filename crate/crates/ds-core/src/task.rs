//! Task descriptions: a directory with `task.md` (the task text), `train.py`
//! (the starter scaffold), optional `data/` files, and an optional
//! `task.toml` carrying the metric configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::case_bank::Modality;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricDirection {
    LowerBetter,
    HigherBetter,
}

impl MetricDirection {
    /// Strict improvement over the best seen so far; the first metric always
    /// improves.
    pub fn improved(self, new: f64, best: Option<f64>) -> bool {
        match best {
            None => true,
            Some(best) => match self {
                MetricDirection::LowerBetter => new < best,
                MetricDirection::HigherBetter => new > best,
            },
        }
    }
}

impl fmt::Display for MetricDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricDirection::LowerBetter => write!(f, "lower_better"),
            MetricDirection::HigherBetter => write!(f, "higher_better"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: String,
    pub direction: MetricDirection,
    pub pattern: String,
}

impl Default for MetricSpec {
    fn default() -> Self {
        MetricSpec {
            name: "metric".to_string(),
            direction: MetricDirection::LowerBetter,
            pattern: crate::executor::DEFAULT_METRIC_PATTERN.to_string(),
        }
    }
}

/// One data science task: description, scaffold script, metric, workdir.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub id: String,
    pub description: String,
    pub scaffold: String,
    pub dir: PathBuf,
    pub metric: MetricSpec,
    pub modality: Modality,
}

#[derive(Debug, Default, Deserialize)]
struct TaskToml {
    #[serde(default)]
    metric: TaskMetricToml,
    modality: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct TaskMetricToml {
    name: Option<String>,
    direction: Option<String>,
    pattern: Option<String>,
}

impl TaskSpec {
    pub fn load(dir: &Path) -> Result<TaskSpec> {
        if !dir.is_dir() {
            return Err(Error::TaskLayout(format!("task directory missing: {}", dir.display())));
        }
        let desc_path = dir.join("task.md");
        let scaffold_path = dir.join("train.py");
        let description = std::fs::read_to_string(&desc_path).map_err(|_| {
            Error::TaskLayout(format!("missing task description: {}", desc_path.display()))
        })?;
        let scaffold = std::fs::read_to_string(&scaffold_path).map_err(|_| {
            Error::TaskLayout(format!("missing scaffold: {}", scaffold_path.display()))
        })?;
        if description.trim().is_empty() {
            return Err(Error::TaskLayout(format!("{} is empty", desc_path.display())));
        }
        if scaffold.trim().is_empty() {
            return Err(Error::TaskLayout(format!("{} is empty", scaffold_path.display())));
        }

        let mut metric = MetricSpec::default();
        let mut modality = Modality::Other;
        let toml_path = dir.join("task.toml");
        if toml_path.exists() {
            let raw = std::fs::read_to_string(&toml_path)?;
            let parsed: TaskToml = toml::from_str(&raw)
                .map_err(|e| Error::TaskLayout(format!("{}: {e}", toml_path.display())))?;
            if let Some(m) = parsed.modality {
                modality = m.parse()?;
            }
            if let Some(name) = parsed.metric.name {
                metric.name = name;
            }
            if let Some(direction) = parsed.metric.direction {
                metric.direction = match direction.as_str() {
                    "lower_better" => MetricDirection::LowerBetter,
                    "higher_better" => MetricDirection::HigherBetter,
                    other => {
                        return Err(Error::TaskLayout(format!(
                            "{}: unknown metric direction `{other}`",
                            toml_path.display()
                        )))
                    }
                };
            }
            if let Some(pattern) = parsed.metric.pattern {
                metric.pattern = pattern;
            }
        }

        let id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "task".to_string());
        Ok(TaskSpec { id, description, scaffold, dir: dir.to_path_buf(), metric, modality })
    }
}
