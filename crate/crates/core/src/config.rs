//! TOML loading for estimator and experiment configurations.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::bench::ExperimentConfig;
use crate::error::{Error, Result};
use crate::estimators::EstimatorConfig;

pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn parse_estimator_config(text: &str) -> Result<EstimatorConfig> {
    let cfg: EstimatorConfig = parse_toml(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = parse_toml(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_estimator_config(path: impl AsRef<Path>) -> Result<EstimatorConfig> {
    parse_estimator_config(&read(path.as_ref())?)
}

pub fn load_experiment_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    parse_experiment_config(&read(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Method;
    use crate::nuisance::LearnerKind;
    use crate::synth::Mu0Form;
    use crate::weightfit::WeightMethod;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(parse_estimator_config("").unwrap(), EstimatorConfig::default());
        assert_eq!(parse_experiment_config("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn estimator_keys() {
        let cfg = parse_estimator_config(
            r#"
folds = 3
seed = 11
[propensity]
max_iter = 50
clip_eps = 0.01
[outcome]
learner = "ffnn"
[outcome.ffnn]
widths = [16]
epochs = 10
[weights]
method = "nadaraya-watson"
lambda_grid = [0.1]
gamma_multipliers = [1.0, 2.0]
cv_folds = 3
seed = 4
"#,
        )
        .unwrap();
        assert_eq!(cfg.folds, 3);
        assert_eq!(cfg.propensity.max_iter, 50);
        assert_eq!(cfg.outcome.learner, LearnerKind::Ffnn);
        assert_eq!(cfg.outcome.ffnn.widths, vec![16]);
        assert_eq!(cfg.weights.method, WeightMethod::NadarayaWatson);
        assert_eq!(cfg.weights.gamma_multipliers, vec![1.0, 2.0]);
    }

    #[test]
    fn experiment_keys() {
        let cfg = parse_experiment_config(
            r#"
reps = 10
alpha = 0.4
estimators = ["AMR", "AIPW"]
master_seed = 99
[grid]
n = [400, 600]
p_i = [1, 5]
[simulation]
mu0 = "linear"
[outcome]
learner = "zero"
"#,
        )
        .unwrap();
        assert_eq!(cfg.grid.n, vec![400, 600]);
        assert_eq!(cfg.estimators, vec![Method::Amr, Method::Aipw]);
        assert_eq!(cfg.simulation.mu0, Mu0Form::Linear);
        assert_eq!(cfg.cells().len(), 4);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(parse_estimator_config("fold = 3"), Err(Error::Config(_))));
        assert!(parse_estimator_config("[weights]\ncv_folds = 1").is_err());
        assert!(parse_experiment_config("alpha = 2.0").is_err());
        assert!(parse_experiment_config("estimators = [\"TMLE\"]").is_err());
        assert!(load_estimator_config("/nonexistent/cfg.toml").is_err());
    }
}
