//! Versioned JSON model file: question metadata plus the fitted factors,
//! priors and cutpoints needed to run live surveys.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::completion::FactorModel;
use crate::data::{rescale_responses, QuestionMeta, ResponseMatrix, ValueScale};
use crate::error::{Error, Result};
use crate::harness::side_info::{group_key_of, subgroup_beliefs};
use crate::harness::simulate::{fit_gaussian, fit_ordinal, Fitted, SimulationConfig};
use crate::harness::strategy::ModelKind;
use crate::ordlogit::Cutpoints;
use crate::pmf::{GaussianBelief, NoiseModel};

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupPrior {
    /// Covariate values in the order of [`SubgroupPriors::covariates`].
    pub values: Vec<Option<f64>>,
    pub prior: GaussianBelief,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupPriors {
    pub covariates: Vec<String>,
    pub groups: Vec<SubgroupPrior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPart {
    pub factors: FactorModel,
    pub prior: GaussianBelief,
    pub noise: NoiseModel,
    /// Responses live on this scale; `Scaled` maps categories into `[-1, 1]`.
    pub scale: ValueScale,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subgroups: Option<SubgroupPriors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdlogitPart {
    /// Variational question means, `k x r`.
    pub question_factors: DMatrix<f64>,
    pub cutpoints: Vec<Cutpoints>,
    /// Empirical-Bayes prior over user factors.
    pub prior: GaussianBelief,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub questions: Vec<QuestionMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<GaussianPart>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordlogit: Option<OrdlogitPart>,
}

impl ModelFile {
    /// Fits `model` on every row of `data`. `subgroups` names covariate
    /// columns whose joint values define subgroup priors; they are removed
    /// from the question set.
    pub fn fit(
        data: &ResponseMatrix,
        model: ModelKind,
        config: &SimulationConfig,
        seed: u64,
        subgroups: &[String],
    ) -> Result<Self> {
        if model == ModelKind::OrderedLogit && !subgroups.is_empty() {
            return Err(Error::InvalidArgument("subgroup priors need the gaussian model".into()));
        }
        let mut label_cols = subgroups
            .iter()
            .map(|id| data.question_index(id).ok_or_else(|| Error::UnknownCovariate(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        label_cols.sort_unstable_by(|a, b| b.cmp(a));
        let questions_only = label_cols.iter().fold(data.clone(), |acc, &j| acc.remove_column(j));
        let questions = questions_only.questions().to_vec();
        match model {
            ModelKind::GaussianPmf => {
                let working = if questions_only.scale() == ValueScale::Ordinal {
                    rescale_responses(&questions_only)?
                } else {
                    questions_only
                };
                let Fitted::Gaussian { factors, prior, noise, .. } = fit_gaussian(&working, seed, config)? else {
                    unreachable!("gaussian fit");
                };
                let subgroups = if subgroups.is_empty() {
                    None
                } else {
                    let beliefs = subgroup_beliefs(data, subgroups, &factors, config.jitter)?;
                    let groups = beliefs
                        .into_iter()
                        .map(|(key, prior)| SubgroupPrior {
                            values: key.iter().map(|v| v.map(|x| x as f64 / 1e6)).collect(),
                            prior,
                        })
                        .collect();
                    Some(SubgroupPriors { covariates: subgroups.to_vec(), groups })
                };
                let file = Self {
                    version: MODEL_FILE_VERSION,
                    questions,
                    gaussian: Some(GaussianPart { factors, prior, noise, scale: working.scale(), subgroups }),
                    ordlogit: None,
                };
                file.validate()?;
                Ok(file)
            }
            ModelKind::OrderedLogit => {
                if questions_only.scale() != ValueScale::Ordinal {
                    return Err(Error::InvalidArgument("the ordered logit model needs raw categories".into()));
                }
                let Fitted::Ordinal { cutpoints, train_params, selection_prior, .. } =
                    fit_ordinal(&questions_only, seed, config)?
                else {
                    unreachable!("ordinal fit");
                };
                let file = Self {
                    version: MODEL_FILE_VERSION,
                    questions,
                    gaussian: None,
                    ordlogit: Some(OrdlogitPart {
                        question_factors: train_params.question_means,
                        cutpoints,
                        prior: selection_prior,
                    }),
                };
                file.validate()?;
                Ok(file)
            }
        }
    }

    pub fn num_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn question_index(&self, id: &str) -> Option<usize> {
        self.questions.iter().position(|q| q.id == id)
    }

    pub fn supports(&self, model: ModelKind) -> bool {
        match model {
            ModelKind::GaussianPmf => self.gaussian.is_some(),
            ModelKind::OrderedLogit => self.ordlogit.is_some(),
        }
    }

    /// Subgroup prior matching `values`, if the file has one.
    pub fn subgroup_prior(&self, values: &[Option<f64>]) -> Option<&GaussianBelief> {
        let groups = self.gaussian.as_ref()?.subgroups.as_ref()?;
        let key = group_key_of(values);
        groups.groups.iter().find(|g| group_key_of(&g.values) == key).map(|g| &g.prior)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_FILE_VERSION {
            return Err(Error::ModelVersion(self.version));
        }
        let k = self.questions.len();
        if k == 0 {
            return Err(Error::InvalidModel("no questions".into()));
        }
        if self.gaussian.is_none() && self.ordlogit.is_none() {
            return Err(Error::InvalidModel("neither a gaussian nor an ordered logit part".into()));
        }
        let mut ids: Vec<&str> = self.questions.iter().map(|q| q.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != k {
            return Err(Error::InvalidModel("duplicate question ids".into()));
        }
        if let Some(g) = &self.gaussian {
            g.factors.validate()?;
            g.prior.validate()?;
            if g.factors.num_questions() != k {
                return Err(Error::InvalidModel(format!(
                    "{} question factors for {k} questions",
                    g.factors.num_questions()
                )));
            }
            if g.prior.rank() != g.factors.rank() {
                return Err(Error::InvalidModel("prior rank differs from the factor rank".into()));
            }
            NoiseModel::new(g.noise.alpha).map_err(|e| Error::InvalidModel(e.to_string()))?;
            if let Some(s) = &g.subgroups {
                for group in &s.groups {
                    group.prior.validate()?;
                    if group.values.len() != s.covariates.len() || group.prior.rank() != g.factors.rank() {
                        return Err(Error::InvalidModel("malformed subgroup prior".into()));
                    }
                }
            }
        }
        if let Some(o) = &self.ordlogit {
            o.prior.validate()?;
            if o.question_factors.nrows() != k || o.cutpoints.len() != k {
                return Err(Error::InvalidModel("ordered logit part does not cover every question".into()));
            }
            if o.question_factors.ncols() != o.prior.rank() {
                return Err(Error::InvalidModel("prior rank differs from the factor rank".into()));
            }
            if o.question_factors.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidModel("non-finite question factors".into()));
            }
            for (q, c) in self.questions.iter().zip(&o.cutpoints) {
                if c.num_categories() != q.num_categories {
                    return Err(Error::InvalidModel(format!(
                        "question {} has {} categories but {} cutpoints",
                        q.id,
                        q.num_categories,
                        c.beta().len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text).map_err(|e| Error::InvalidModel(e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.to_json()?.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{generate_grouped_synthetic, generate_synthetic, SynthModel};
    use crate::ordlogit::VariationalConfig;

    fn config() -> SimulationConfig {
        SimulationConfig {
            rank: 2,
            lambda_grid_size: 5,
            variational: VariationalConfig { max_epochs: 60, ..VariationalConfig::default() },
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn gaussian_round_trip() {
        let data = generate_synthetic(60, 8, 2, 0.3, 1, SynthModel::Gaussian).unwrap().data;
        let file = ModelFile::fit(&data, ModelKind::GaussianPmf, &config(), 1, &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        file.save(&path).unwrap();
        let back = ModelFile::load(&path).unwrap();
        assert_eq!(back, file);
        assert!(back.supports(ModelKind::GaussianPmf) && !back.supports(ModelKind::OrderedLogit));
    }

    #[test]
    fn ordlogit_round_trip() {
        let data = generate_synthetic(60, 6, 2, 0.0, 2, SynthModel::OrderedLogit { categories: 3 }).unwrap().data;
        let file = ModelFile::fit(&data, ModelKind::OrderedLogit, &config(), 1, &[]).unwrap();
        let back = ModelFile::from_json(&file.to_json().unwrap()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.ordlogit.unwrap().cutpoints.len(), 6);
    }

    #[test]
    fn subgroups_are_stored_and_matched() {
        let s = generate_grouped_synthetic(120, 8, 2, 0.3, 3, 2, 2.0).unwrap();
        let file = ModelFile::fit(&s.data, ModelKind::GaussianPmf, &config(), 1, &["group".to_string()]).unwrap();
        assert_eq!(file.num_questions(), 8);
        assert!(file.question_index("group").is_none());
        assert!(file.subgroup_prior(&[Some(1.0)]).is_some());
        assert!(file.subgroup_prior(&[Some(7.0)]).is_none());
        let back = ModelFile::from_json(&file.to_json().unwrap()).unwrap();
        assert_eq!(back.subgroup_prior(&[Some(2.0)]), file.subgroup_prior(&[Some(2.0)]));
    }

    #[test]
    fn invalid_files_are_rejected() {
        let data = generate_synthetic(40, 5, 2, 0.3, 4, SynthModel::Gaussian).unwrap().data;
        let file = ModelFile::fit(&data, ModelKind::GaussianPmf, &config(), 1, &[]).unwrap();
        let mut wrong_version = file.clone();
        wrong_version.version = 99;
        assert!(matches!(ModelFile::from_json(&wrong_version.to_json().unwrap()), Err(Error::ModelVersion(99))));
        let mut missing_question = file.clone();
        missing_question.questions.pop();
        assert!(matches!(missing_question.validate(), Err(Error::InvalidModel(_))));
        assert!(matches!(ModelFile::from_json("{\"version\": 1}"), Err(Error::InvalidModel(_))));
        assert!(matches!(ModelFile::load(Path::new("/nonexistent/model.json")), Err(Error::MissingFile(_))));
    }
}
