//! TOML run configuration shared by the CLI subcommands.
//!
//! All sections are optional at parse time; each subcommand validates the
//! keys it needs and reports the offending key path on failure, so a missing
//! `alpha` under `[control]` surfaces as `control.alpha`.

use crate::study::{Axis, ProblemId, StudySpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {0}: {1}")]
    Read(String, std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("missing required key {0}")]
    Missing(&'static str),
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub domain: Option<DomainSection>,
    pub time: Option<TimeSection>,
    pub control: Option<ControlSection>,
    pub problem: Option<ProblemSection>,
    pub study: Option<StudySection>,
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(rename = "M")]
    pub m: Option<usize>,
    #[serde(rename = "T")]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub alpha: Option<f64>,
    /// [lower, upper]; omit for an unconstrained control
    pub bounds: Option<[f64; 2]>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub id: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub axis: Option<String>,
    pub levels: Option<Vec<usize>>,
    pub reference: Option<usize>,
    /// resolution of the frozen axis (M for space studies, n for time)
    pub fixed: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
}

impl Config {
    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read(path.display().to_string(), e))?;
        Ok(toml::from_str(&text)?)
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }

    pub fn domain_n(&self) -> Result<usize, ConfigError> {
        let n = self
            .domain
            .as_ref()
            .and_then(|d| d.n)
            .ok_or(ConfigError::Missing("domain.n"))?;
        if n == 0 {
            return Err(ConfigError::Invalid {
                key: "domain.n",
                reason: "must be >= 1".into(),
            });
        }
        Ok(n)
    }

    pub fn time_m(&self) -> Result<usize, ConfigError> {
        let m = self
            .time
            .as_ref()
            .and_then(|t| t.m)
            .ok_or(ConfigError::Missing("time.M"))?;
        if m == 0 {
            return Err(ConfigError::Invalid {
                key: "time.M",
                reason: "must be >= 1".into(),
            });
        }
        Ok(m)
    }

    pub fn time_horizon(&self) -> Result<f64, ConfigError> {
        let t = self
            .time
            .as_ref()
            .and_then(|t| t.t)
            .ok_or(ConfigError::Missing("time.T"))?;
        if !t.is_finite() || t <= 0.0 {
            return Err(ConfigError::Invalid {
                key: "time.T",
                reason: "must be > 0".into(),
            });
        }
        Ok(t)
    }

    pub fn control_alpha(&self) -> Result<f64, ConfigError> {
        let a = self
            .control
            .as_ref()
            .and_then(|c| c.alpha)
            .ok_or(ConfigError::Missing("control.alpha"))?;
        if !a.is_finite() || a <= 0.0 {
            return Err(ConfigError::Invalid {
                key: "control.alpha",
                reason: "must be > 0".into(),
            });
        }
        Ok(a)
    }

    pub fn control_bounds(&self) -> Result<Option<(f64, f64)>, ConfigError> {
        match self.control.as_ref().and_then(|c| c.bounds) {
            None => Ok(None),
            Some([lo, hi]) => {
                if lo >= hi {
                    return Err(ConfigError::Invalid {
                        key: "control.bounds",
                        reason: format!("lower {lo} must be below upper {hi}"),
                    });
                }
                Ok(Some((lo, hi)))
            }
        }
    }

    pub fn problem_id(&self) -> Result<ProblemId, ConfigError> {
        let id = self
            .problem
            .as_ref()
            .and_then(|p| p.id.clone())
            .ok_or(ConfigError::Missing("problem.id"))?;
        id.parse().map_err(|_| ConfigError::Invalid {
            key: "problem.id",
            reason: format!("unknown id {id:?}"),
        })
    }

    pub fn output_dir(&self) -> Result<std::path::PathBuf, ConfigError> {
        self.output
            .as_ref()
            .and_then(|o| o.dir.clone())
            .map(std::path::PathBuf::from)
            .ok_or(ConfigError::Missing("output.dir"))
    }

    /// Assemble the study description, with an optional axis override from
    /// the command line.
    pub fn study_spec(&self, axis_override: Option<Axis>) -> Result<StudySpec, ConfigError> {
        let study = self
            .study
            .as_ref()
            .ok_or(ConfigError::Missing("study.axis"))?;
        let axis = match axis_override {
            Some(a) => a,
            None => study
                .axis
                .as_deref()
                .ok_or(ConfigError::Missing("study.axis"))?
                .parse()
                .map_err(|reason| ConfigError::Invalid {
                    key: "study.axis",
                    reason,
                })?,
        };
        let levels = study
            .levels
            .clone()
            .ok_or(ConfigError::Missing("study.levels"))?;
        let reference = study
            .reference
            .ok_or(ConfigError::Missing("study.reference"))?;
        let problem = self.problem_id()?;
        let fixed = match study.fixed {
            Some(f) => f,
            None => match axis {
                // Frozen-axis defaults sized for desk-scale runs.
                Axis::Space => self.time.as_ref().and_then(|t| t.m).unwrap_or(512),
                Axis::Time => self.domain.as_ref().and_then(|d| d.n).unwrap_or(32),
                Axis::Coupled => 0,
            },
        };
        let alpha = if problem == ProblemId::BoundaryControl {
            self.control_alpha()?
        } else {
            self.control.as_ref().and_then(|c| c.alpha).unwrap_or(0.1)
        };
        Ok(StudySpec {
            problem,
            axis,
            levels,
            reference,
            fixed,
            t_final: self.time_horizon()?,
            alpha,
            bounds: self.control_bounds()?,
            control_tol: self.control.as_ref().and_then(|c| c.tol),
            max_iters: self
                .control
                .as_ref()
                .and_then(|c| c.max_iters)
                .unwrap_or(2000),
        })
    }
}
