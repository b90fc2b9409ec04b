#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use survey_core::completion::FactorModel;
use survey_core::data::{QuestionKind, QuestionMeta, ValueScale};
use survey_core::harness::{generate_synthetic, ModelKind, SimulationConfig, SynthModel};
use survey_core::model_file::{GaussianPart, ModelFile, OrdlogitPart, MODEL_FILE_VERSION};
use survey_core::ordlogit::{Cutpoints, VariationalConfig};
use survey_core::pmf::{GaussianBelief, NoiseModel};

pub fn fitted_gaussian() -> ModelFile {
    let data = generate_synthetic(150, 10, 3, 0.0, 11, SynthModel::OrderedLogit { categories: 5 }).unwrap().data;
    let config = SimulationConfig { rank: 3, lambda_grid_size: 6, ..SimulationConfig::default() };
    ModelFile::fit(&data, ModelKind::GaussianPmf, &config, 1, &[]).unwrap()
}

pub fn fitted_ordlogit() -> ModelFile {
    let data = generate_synthetic(150, 8, 2, 0.0, 12, SynthModel::OrderedLogit { categories: 4 }).unwrap().data;
    let config = SimulationConfig {
        rank: 2,
        variational: VariationalConfig { max_epochs: 100, ..VariationalConfig::default() },
        ..SimulationConfig::default()
    };
    ModelFile::fit(&data, ModelKind::OrderedLogit, &config, 1, &[]).unwrap()
}

fn witness_factors() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 2, &[3.0, 0.0, 2.0, 0.0, 0.0, 0.5])
}

fn witness_questions() -> Vec<QuestionMeta> {
    (1..=3).map(|j| QuestionMeta::new(format!("w{j}"), 3, QuestionKind::Ordinal)).collect()
}

/// Three 3-category questions where the ordered-logit choice after `w1`
/// depends on its answer.
pub fn witness_ordlogit() -> ModelFile {
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        questions: witness_questions(),
        gaussian: None,
        ordlogit: Some(OrdlogitPart {
            question_factors: witness_factors(),
            cutpoints: vec![Cutpoints::new(vec![-1.0, 1.0]).unwrap(); 3],
            prior: GaussianBelief::isotropic(2, 1.0).unwrap(),
        }),
    };
    file.validate().unwrap();
    file
}

pub fn witness_gaussian() -> ModelFile {
    let factors = FactorModel {
        u: DMatrix::zeros(1, 2),
        d: DVector::from_vec(vec![1.0, 1.0]),
        v: witness_factors(),
        lambda: 0.0,
        converged: true,
        iterations: 0,
    };
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        questions: witness_questions(),
        gaussian: Some(GaussianPart {
            factors,
            prior: GaussianBelief::isotropic(2, 1.0).unwrap(),
            noise: NoiseModel::new(1.0).unwrap(),
            scale: ValueScale::Scaled,
            subgroups: None,
        }),
        ordlogit: None,
    };
    file.validate().unwrap();
    file
}
