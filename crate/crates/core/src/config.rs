//! Run configuration: one JSON document per CLI invocation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorSpec, ModeSpec};
use crate::outcome::AdjusterSpec;
use crate::simulation::{DgpSpec, ForestDiagSpec};
use crate::smoothers::SmootherSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Estimate,
    Simulate,
    Weights,
    Bound,
    ForestDiag,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Simulate => "simulate",
            Command::Weights => "weights",
            Command::Bound => "bound",
            Command::ForestDiag => "forest-diag",
        }
    }
}

/// A built-in process by id, or an inline definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DgpChoice {
    Named(String),
    Inline(DgpSpec),
}

impl DgpChoice {
    pub fn resolve(&self) -> Result<DgpSpec> {
        match self {
            DgpChoice::Named(id) => DgpSpec::named(id).ok_or_else(|| Error::Config {
                pointer: "/dgp".into(),
                message: format!("unknown dgp '{id}' (known: benchmark, quadratic-propensity)"),
            }),
            DgpChoice::Inline(d) => Ok(d.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoother: Option<SmootherSpec>,
    #[serde(default)]
    pub adjuster: AdjusterSpec,
    #[serde(default)]
    pub mode: ModeSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dgp: Option<DgpChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
    #[serde(default, rename = "R", skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forest_diag: Option<ForestDiagSpec>,
}

impl RunConfig {
    /// The estimator section; `smoother` is required.
    pub fn estimator(&self) -> Result<EstimatorSpec> {
        let smoother = self.smoother.clone().ok_or_else(|| missing("/smoother", "a smoother is required"))?;
        Ok(EstimatorSpec {
            smoother,
            adjuster: self.adjuster.clone(),
            mode: self.mode,
        })
    }

    pub fn dgp(&self) -> Result<DgpSpec> {
        self.dgp.as_ref().ok_or_else(|| missing("/dgp", "a dgp is required"))?.resolve()
    }

    /// Checks the sections the given command needs.
    pub fn validate_for(&self, cmd: Command) -> Result<()> {
        if let Some(s) = &self.smoother {
            s.validate("/smoother")?;
        }
        self.estimator_mode_check()?;
        if let Some(d) = &self.dgp {
            d.resolve()?.validate().map_err(|e| Error::Config {
                pointer: "/dgp".into(),
                message: e.to_string(),
            })?;
        }
        if let Some(f) = &self.forest_diag {
            f.validate("/forest_diag")?;
        }
        match cmd {
            Command::Estimate | Command::Weights => {
                self.estimator()?;
            }
            Command::Simulate => {
                self.estimator()?;
                self.dgp()?;
                let grid = self.n_grid.as_ref().ok_or_else(|| missing("/n_grid", "n_grid is required"))?;
                if grid.is_empty() || grid.iter().any(|&n| n < 2) {
                    return Err(missing("/n_grid", "n_grid must be nonempty with every n >= 2"));
                }
                match self.replications {
                    None => return Err(missing("/R", "R is required")),
                    Some(r) if r < 2 => return Err(missing("/R", "R must be at least 2")),
                    _ => {}
                }
            }
            Command::Bound => {
                self.dgp()?;
            }
            Command::ForestDiag => {}
        }
        Ok(())
    }

    fn estimator_mode_check(&self) -> Result<()> {
        if let ModeSpec::Crossfit { folds, .. } = self.mode {
            if folds < 2 {
                return Err(missing("/mode/folds", "cross-fitting needs at least 2 folds"));
            }
        }
        Ok(())
    }

    /// Fills defaults that do not depend on the data: `M` alone becomes a
    /// uniform weight vector of that length.
    fn fill_defaults(&mut self) {
        if let Some(SmootherSpec::Wnn { m: Some(m), gamma, .. }) = &mut self.smoother {
            if gamma.is_none() && *m > 0 {
                *gamma = Some(vec![1.0 / *m as f64; *m]);
            }
        }
    }
}

fn missing(pointer: &str, message: &str) -> Error {
    Error::Config {
        pointer: pointer.into(),
        message: message.into(),
    }
}

/// Parses and validates a configuration. Schema errors carry the JSON
/// pointer of the offending value.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg = parse_config_lenient(text)?;
    cfg.validate_for(cfg.command.unwrap_or(Command::Estimate))?;
    Ok(cfg)
}

/// Like [`parse_config`], with the command supplied by the caller when the
/// document omits it. A document naming a different command is an error.
pub fn parse_config_for(text: &str, cmd: Command) -> Result<RunConfig> {
    let mut cfg = parse_config_lenient(text)?;
    match cfg.command {
        Some(c) if c != cmd => {
            return Err(missing(
                "/command",
                &format!("config is for '{}', not '{}'", c.name(), cmd.name()),
            ))
        }
        _ => cfg.command = Some(cmd),
    }
    cfg.validate_for(cmd)?;
    Ok(cfg)
}

fn parse_config_lenient(text: &str) -> Result<RunConfig> {
    let mut cfg: RunConfig = match deserialize(text) {
        Ok(c) => c,
        Err((pointer, message)) => {
            let pointer = serde_json::from_str::<serde_json::Value>(text)
                .map(|doc| refine_pointer(doc, pointer.clone(), &message))
                .unwrap_or(pointer);
            return Err(Error::Config { pointer, message });
        }
    };
    cfg.fill_defaults();
    Ok(cfg)
}

fn deserialize(text: &str) -> std::result::Result<RunConfig, (String, String)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let pointer = if path == "." {
            String::new()
        } else {
            format!("/{}", path.replace('.', "/"))
        };
        (pointer, e.into_inner().to_string())
    })
}

/// Tagged sections are buffered before they are decoded, so errors inside
/// them stop at the section. Narrow the pointer to the member whose removal
/// makes the error go away.
fn refine_pointer(doc: serde_json::Value, pointer: String, message: &str) -> String {
    let Some(serde_json::Value::Object(section)) = doc.pointer(&pointer).cloned() else {
        return pointer;
    };
    for key in section.keys().filter(|k| k.as_str() != "type") {
        let mut trial = doc.clone();
        if let Some(serde_json::Value::Object(m)) = trial.pointer_mut(&pointer) {
            m.remove(key);
        }
        let same = match deserialize(&trial.to_string()) {
            Ok(_) => false,
            Err((p, m)) => p == pointer && m == message,
        };
        if !same {
            return format!("{pointer}/{key}");
        }
    }
    pointer
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothers::SmootherParams;

    #[test]
    fn wnn_m_fills_uniform_gamma() {
        let cfg = parse_config(
            r#"{"command":"estimate","smoother":{"type":"wnn","M":5},"adjuster":{"type":"polynomial","degree":1}}"#,
        )
        .unwrap();
        let SmootherParams::Wnn(w) = cfg.smoother.as_ref().unwrap().params() else {
            panic!()
        };
        assert_eq!(w.gamma.as_ref().unwrap(), &vec![0.2; 5]);
        assert_eq!(cfg.adjuster, AdjusterSpec::Polynomial { degree: 1 });
    }

    #[test]
    fn gamma_sum_error() {
        let e = parse_config(r#"{"smoother":{"type":"wnn","gamma":[0.5,0.6]}}"#).unwrap_err();
        assert!(e.to_string().contains("gamma must sum to 1"), "{e}");
        assert!(matches!(e, Error::Config { ref pointer, .. } if pointer == "/smoother/gamma"));
    }

    #[test]
    fn unknown_key_has_pointer() {
        let e = parse_config(r#"{"smoother":{"type":"kernel","h":0.1},"mode":{"type":"full"},"sed":1}"#).unwrap_err();
        assert!(e.to_string().contains("sed"), "{e}");
        let e = parse_config(r#"{"smoother":{"type":"forest","B":"many"}}"#).unwrap_err();
        match e {
            Error::Config { pointer, .. } => assert_eq!(pointer, "/smoother/B"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn named_and_inline_dgp() {
        let cfg = parse_config_for(
            r#"{"dgp":"quadratic-propensity","smoother":{"type":"wnn"},"n_grid":[100],"R":10}"#,
            Command::Simulate,
        )
        .unwrap();
        assert_eq!(cfg.dgp().unwrap(), DgpSpec::quadratic_propensity());
        let inline = serde_json::to_string(&DgpSpec::benchmark()).unwrap();
        let cfg = parse_config_for(&format!(r#"{{"dgp":{inline}}}"#), Command::Bound).unwrap();
        assert_eq!(cfg.dgp().unwrap(), DgpSpec::benchmark());
        assert!(parse_config_for(r#"{"dgp":"nope"}"#, Command::Bound).is_err());
    }

    #[test]
    fn command_mismatch_and_missing_sections() {
        assert!(parse_config_for(r#"{"command":"bound","dgp":"benchmark"}"#, Command::Estimate).is_err());
        let e = parse_config_for(r#"{"smoother":{"type":"wnn"},"dgp":"benchmark","R":5}"#, Command::Simulate)
            .unwrap_err();
        assert!(e.to_string().contains("/n_grid"));
        let e = parse_config(r#"{"smoother":{"type":"wnn"},"mode":{"type":"crossfit","folds":1}}"#).unwrap_err();
        assert!(e.to_string().contains("/mode/folds"));
    }

    #[test]
    fn simulate_config_round_trips() {
        let text = r#"{
            "command": "simulate",
            "dgp": "benchmark",
            "smoother": {"type": "wnn", "m_exponent": 0.6666666666666666},
            "adjuster": {"type": "polynomial", "degree": 1},
            "mode": {"type": "crossfit", "folds": 5, "variance": "fold-wise"},
            "n_grid": [250, 500, 1000, 2000],
            "R": 1000,
            "seed": 20240601
        }"#;
        let cfg = parse_config(text).unwrap();
        let again = parse_config(&serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }
}
