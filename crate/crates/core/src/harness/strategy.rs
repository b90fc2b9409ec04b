use std::fmt;

use serde::{Deserialize, Serialize};

use crate::active::{Criterion, DEFAULT_EPSILON};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    GaussianPmf,
    OrderedLogit,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GaussianPmf => "gaussian",
            Self::OrderedLogit => "ordlogit",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "gaussian_pmf" | "pmf" => Ok(Self::GaussianPmf),
            "ordlogit" | "ordered_logit" => Ok(Self::OrderedLogit),
            other => Err(Error::InvalidArgument(format!("unknown model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StrategyKind {
    Active {
        criterion: Criterion,
    },
    Random {
        seed: u64,
    },
    /// Question indices in asking order; must be a permutation.
    FixedOrder {
        order: Vec<usize>,
    },
    EpsilonGreedy {
        criterion: Criterion,
        epsilon: f64,
        seed: u64,
    },
    AdaptiveOrdlogit,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "covariates")]
pub enum SideInfo {
    #[default]
    None,
    /// Question ids whose joint values partition the respondents.
    SubgroupPriors(Vec<String>),
    /// Question ids revealed for every respondent before the survey starts.
    FreeCovariates(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    #[serde(default)]
    pub side_info: SideInfo,
}

impl Strategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self { kind, side_info: SideInfo::None }
    }

    pub fn active(criterion: Criterion) -> Self {
        Self::new(StrategyKind::Active { criterion })
    }

    pub fn random(seed: u64) -> Self {
        Self::new(StrategyKind::Random { seed })
    }

    pub fn with_side_info(mut self, side_info: SideInfo) -> Self {
        self.side_info = side_info;
        self
    }

    /// Short label used in reports, e.g. `active_A` or `epsilon_greedy_A_0.05`.
    pub fn name(&self) -> String {
        let base = match &self.kind {
            StrategyKind::Active { criterion } => format!("active_{criterion}"),
            StrategyKind::Random { .. } => "random".to_string(),
            StrategyKind::FixedOrder { .. } => "fixed_order".to_string(),
            StrategyKind::EpsilonGreedy { criterion, epsilon, .. } => {
                format!("epsilon_greedy_{criterion}_{epsilon}")
            }
            StrategyKind::AdaptiveOrdlogit => "adaptive_ordlogit".to_string(),
        };
        match &self.side_info {
            SideInfo::None => base,
            SideInfo::SubgroupPriors(_) => format!("{base}+subgroups"),
            SideInfo::FreeCovariates(_) => format!("{base}+covariates"),
        }
    }

    pub fn criterion(&self) -> Option<Criterion> {
        match self.kind {
            StrategyKind::Active { criterion } | StrategyKind::EpsilonGreedy { criterion, .. } => Some(criterion),
            _ => None,
        }
    }

    pub fn validate(&self, num_questions: usize) -> Result<()> {
        match &self.kind {
            StrategyKind::FixedOrder { order } => {
                let mut sorted = order.clone();
                sorted.sort_unstable();
                if sorted != (0..num_questions).collect::<Vec<_>>() {
                    return Err(Error::InvalidArgument(format!(
                        "fixed order is not a permutation of {num_questions} questions"
                    )));
                }
                Ok(())
            }
            StrategyKind::EpsilonGreedy { epsilon, .. } if !(0.0..=1.0).contains(epsilon) => {
                Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    /// Whether the strategy can drive `model`.
    pub fn check_model(&self, model: ModelKind) -> Result<()> {
        let ok = match (&self.kind, model) {
            (StrategyKind::Random { .. } | StrategyKind::FixedOrder { .. }, _) => true,
            (StrategyKind::Active { .. } | StrategyKind::EpsilonGreedy { .. }, m) => m == ModelKind::GaussianPmf,
            (StrategyKind::AdaptiveOrdlogit, m) => m == ModelKind::OrderedLogit,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::StrategyModelMismatch { strategy: self.name(), model: model.to_string() })
        }
    }

    /// Parses a CLI strategy name: `active`, `random`, `fixed`, `epsilon_greedy`
    /// or `adaptive`. `fixed` means the data's column order.
    pub fn parse(
        name: &str,
        criterion: Criterion,
        epsilon: Option<f64>,
        seed: u64,
        num_questions: usize,
    ) -> Result<Self> {
        let kind = match name.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "active" => StrategyKind::Active { criterion },
            "random" => StrategyKind::Random { seed },
            "fixed" | "fixed_order" => StrategyKind::FixedOrder { order: (0..num_questions).collect() },
            "epsilon_greedy" | "egreedy" => {
                StrategyKind::EpsilonGreedy { criterion, epsilon: epsilon.unwrap_or(DEFAULT_EPSILON), seed }
            }
            "adaptive" | "adaptive_ordlogit" => StrategyKind::AdaptiveOrdlogit,
            other => return Err(Error::InvalidArgument(format!("unknown strategy {other:?}"))),
        };
        let s = Self::new(kind);
        s.validate(num_questions)?;
        Ok(s)
    }
}
