use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use volterra_ident::fit::{DataConfig, FitConfig};
use volterra_ident::prediction::PredictionConfig;
use volterra_ident::{CaseDefinition, CaseName};

use crate::CliError;

const PRESETS: [(CaseName, &str); 3] = [
    (CaseName::Case1, include_str!("../presets/case1.toml")),
    (CaseName::Case2, include_str!("../presets/case2.toml")),
    (CaseName::Case3, include_str!("../presets/case3.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: CaseName,
    /// Noise levels; each gets its own `lambda_<value>` directory.
    pub lambdas: Vec<f64>,
    /// Master seed. Seeds the measurement ensemble and network initialization;
    /// band and truth ensembles use derived sub-streams.
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub fit: FitConfig,
    pub prediction: PredictionSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSettings {
    /// Noise levels to forecast; every configured level when absent.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    pub horizon: [f64; 2],
    /// Pass only if every truth node falls inside the band.
    #[serde(default)]
    pub strict: bool,
    #[serde(flatten)]
    pub band: PredictionConfig,
}

/// Command-line overrides, applied on top of the file or preset.
#[derive(Debug, Default)]
pub struct Overrides {
    pub case: Option<CaseName>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub lambdas: Option<Vec<f64>>,
}

fn preset_table(case: CaseName) -> Result<toml::Table> {
    let text = PRESETS
        .iter()
        .find(|(c, _)| *c == case)
        .map(|(_, t)| *t)
        .ok_or_else(|| CliError::Config(format!("no preset for case '{case}'; only case1, case2 and case3 are built in")))?;
    Ok(toml::from_str(text).expect("bundled preset parses"))
}

/// Recursively overlay `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentConfig {
    #[cfg(test)]
    pub fn preset(case: CaseName) -> Result<Self> {
        Self::from_table(preset_table(case)?)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string().replace('\n', " ")).into())
    }

    /// Load `path` (if any) over the preset of its case, then apply overrides.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let user: toml::Table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).map_err(|e| {
                    CliError::Config(format!("{}: {}", p.display(), e.to_string().replace('\n', " ")))
                })?
            }
            None => toml::Table::new(),
        };
        let case = match (ov.case, user.get("case")) {
            (Some(c), _) => c,
            (None, Some(toml::Value::String(s))) => s.parse().map_err(|e| CliError::Config(format!("{e}")))?,
            (None, Some(_)) => return Err(CliError::Config("'case' must be a string".into()).into()),
            (None, None) => {
                return Err(CliError::Config("no case given; pass --case or set 'case' in the config".into()).into())
            }
        };
        let mut table = preset_table(case)?;
        merge(&mut table, user);
        table.insert("case".into(), toml::Value::String(case.to_string()));
        let mut cfg = Self::from_table(table)?;
        if let Some(s) = ov.seed {
            cfg.seed = s;
        }
        if let Some(o) = &ov.out {
            cfg.out = o.clone();
        }
        if let Some(l) = &ov.lambdas {
            cfg.lambdas = l.clone();
            // Keep forecasting the preset's levels that are still fitted, else all of them.
            if let Some(p) = &mut cfg.prediction.lambdas {
                p.retain(|x| l.contains(x));
                if p.is_empty() {
                    cfg.prediction.lambdas = None;
                }
            }
        }
        cfg.fit.network.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn case_definition(&self) -> Result<CaseDefinition> {
        Ok(CaseDefinition::builtin(self.case)?)
    }

    /// Noise levels that get a forecast.
    pub fn prediction_lambdas(&self) -> Vec<f64> {
        self.prediction.lambdas.clone().unwrap_or_else(|| self.lambdas.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| -> Result<()> { Err(CliError::Config(m).into()) };
        if self.lambdas.is_empty() {
            return fail("'lambdas' is empty".into());
        }
        for &l in &self.lambdas {
            if !(l.is_finite() && l >= 0.0) {
                return fail(format!("noise level {l} must be finite and non-negative"));
            }
        }
        let mut sorted = self.lambdas.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return fail("'lambdas' contains duplicates".into());
        }
        let d = &self.data;
        if d.n_steps == 0 || d.n_paths == 0 || d.n_points < 2 {
            return fail(format!("data counts must be positive (need at least 2 points): {d:?}"));
        }
        if d.n_points > d.n_steps + 1 {
            return fail(format!("n_points {} exceeds the {} grid nodes", d.n_points, d.n_steps + 1));
        }
        let p = &self.prediction;
        let b = &p.band;
        if b.n_paths == 0 || b.n_steps == 0 || b.truth_paths == 0 || b.truth_steps == 0 {
            return fail(format!("prediction counts must be positive: {b:?}"));
        }
        if !(b.level > 0.0 && b.level < 1.0) {
            return fail(format!("prediction level {} must lie in (0, 1)", b.level));
        }
        let case = self.case_definition()?;
        let [h0, h1] = p.horizon;
        if !(h0 >= case.t0 && h1 > h0) {
            return fail(format!("horizon [{h0}, {h1}] must be non-empty and start at or after {}", case.t0));
        }
        for l in self.prediction_lambdas() {
            if !self.lambdas.contains(&l) {
                return fail(format!("prediction noise level {l} is not among the fitted levels"));
            }
        }
        self.fit.optimizer.validate()?;
        self.fit.network.validate()?;
        if self.fit.schedule.warmup_iterations > self.fit.optimizer.max_iterations {
            return fail("warm-up iterations exceed max_iterations".into());
        }
        Ok(())
    }

    pub fn lambda_dir(&self, lambda: f64) -> PathBuf {
        self.out.join(format!("lambda_{lambda}"))
    }
}

/// Parse `0,1,5` into noise levels.
pub fn parse_lambdas(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad noise level '{p}'")))
        .collect()
}

pub fn check_exists(path: &Path, producer: &str) -> Result<()> {
    if !path.is_file() {
        bail!(CliError::MissingInput {
            path: path.to_path_buf(),
            hint: format!("run `volterra-ident {producer}` with the same config first"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for (case, _) in PRESETS {
            let c = ExperimentConfig::preset(case).unwrap();
            c.validate().unwrap();
            assert_eq!(c.data.n_points, 50);
            assert_eq!(c.prediction.band.n_paths, 1000);
            assert_eq!(c.prediction.band.truth_paths, 20);
        }
        let c1 = ExperimentConfig::preset(CaseName::Case1).unwrap();
        assert_eq!(c1.lambdas, vec![0.0, 1.0, 5.0, 20.0]);
        assert_eq!(c1.prediction.horizon, [3.0, 4.0]);
        let c2 = ExperimentConfig::preset(CaseName::Case2).unwrap();
        assert_eq!(c2.lambdas, vec![0.0, 0.1, 1.0, 2.0]);
    }

    #[test]
    fn file_overlays_preset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "case = \"case2\"\nlambdas = [1]\n[data]\nn_paths = 7\n[fit.optimizer]\nmax_iterations = 60\n").unwrap();
        let c = ExperimentConfig::load(Some(&p), &Overrides { seed: Some(9), ..Default::default() }).unwrap();
        assert_eq!(c.case, CaseName::Case2);
        assert_eq!(c.data.n_paths, 7);
        assert_eq!(c.data.n_steps, 1000);
        assert_eq!(c.fit.optimizer.max_iterations, 60);
        assert_eq!(c.fit.optimizer.history, 100);
        assert_eq!((c.seed, c.fit.network.seed), (9, 9));
        assert_eq!(c.prediction.horizon, [0.5, 1.0]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            "lambdas = [-1]",
            "[data]\nn_points = 2000",
            "[data]\nn_paths = 0",
            "bogus = 1",
            "[prediction]\nhorizon = [-3, 1]",
            "[prediction]\nlambdas = [7]",
            "[prediction]\nlevel = 1.5",
        ];
        let dir = tempfile::tempdir().unwrap();
        for text in bad {
            let p = dir.path().join("c.toml");
            fs::write(&p, format!("case = \"case1\"\n{text}\n")).unwrap();
            let err = ExperimentConfig::load(Some(&p), &Overrides::default()).unwrap_err();
            assert!(matches!(err.downcast_ref::<CliError>(), Some(CliError::Config(_))), "{text}: {err}");
        }
    }

    #[test]
    fn lambda_list_parsing() {
        assert_eq!(parse_lambdas("0, 1,5").unwrap(), vec![0.0, 1.0, 5.0]);
        assert!(parse_lambdas("1,x").is_err());
    }
}
