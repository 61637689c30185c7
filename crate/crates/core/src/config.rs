//! JSON model files.
//!
//! ```json
//! {
//!   "schema": "plii-model/1",
//!   "dimension": 1,
//!   "switching": { "states": ["calm", "busy"], "q": [1, 2], "P": [[0, 1], [1, 0]] },
//!   "jumps": [
//!     [{ "family": "point", "params": { "value": 0.5 }, "rate": 1, "kappa": 0.5, "ucap": 2 }],
//!     [{ "family": "gauss", "params": { "mean": -0.5, "sd": 0.8 }, "rate": 2 }]
//!   ],
//!   "drift": {
//!     "rho": [1, 2],
//!     "d": [{ "offset": -1.5, "ramps": [{ "slope": -0.5, "cap": 3 }] }, { "offset": 2 }]
//!   },
//!   "growth_bound": 4,
//!   "envelope": { "center": 0, "width": 2 },
//!   "initial": { "xi": 0, "state": "calm" }
//! }
//! ```
//!
//! Vectors may be written as plain numbers when `dimension` is 1. Family
//! parameters: `point {value}`, `gauss {mean, sd}`, `uniform {low, high}`.
//! `kappa` and `ucap` default to 0, `ramps` to none, `initial` to the origin
//! in the first state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::averaging::LimitModel;
use crate::error::{Error, Result};
use crate::jump_model::{Displacement, Envelope, JumpComponent, JumpFamily, JumpModel, Ramp, StateDynamics};
use crate::switching::SwitchSpec;

pub const SCHEMA: &str = "plii-model/1";

/// A vector, or a bare number standing for a vector of length one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Vector {
    Scalar(f64),
    List(Vec<f64>),
}

impl Vector {
    pub fn into_vec(self) -> Vec<f64> {
        match self {
            Vector::Scalar(v) => vec![v],
            Vector::List(v) => v,
        }
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        if v.len() == 1 {
            Vector::Scalar(v[0])
        } else {
            Vector::List(v.to_vec())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingConfig {
    pub states: Vec<String>,
    pub q: Vec<f64>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Point,
    Gauss,
    Uniform,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Vector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<Vector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low: Option<Vector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high: Option<Vector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub family: FamilyKind,
    pub params: FamilyParams,
    pub rate: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub ucap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampConfig {
    pub slope: Vector,
    pub cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisplacementConfig {
    pub offset: Vector,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ramps: Vec<RampConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    pub rho: Vec<f64>,
    pub d: Vec<DisplacementConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub center: Vector,
    pub width: f64,
}

/// A switch state given by index or by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateRef {
    Index(usize),
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub xi: Vector,
    pub state: StateRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema: String,
    pub dimension: usize,
    pub switching: SwitchingConfig,
    pub jumps: Vec<Vec<ComponentConfig>>,
    pub drift: DriftConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
}

/// A model ready for simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedModel {
    pub spec: SwitchSpec,
    pub model: JumpModel,
    pub xi0: Vec<f64>,
    pub x0: usize,
}

fn family_of(c: &ComponentConfig, at: &str) -> Result<JumpFamily> {
    let p = &c.params;
    let take = |v: &Option<Vector>, name: &str| -> Result<Vec<f64>> {
        v.clone()
            .map(Vector::into_vec)
            .ok_or_else(|| Error::Config(format!("{at}.params: missing `{name}`")))
    };
    let extra = |allowed: &[&str]| -> Result<()> {
        let given = [
            ("value", p.value.is_some()),
            ("mean", p.mean.is_some()),
            ("sd", p.sd.is_some()),
            ("low", p.low.is_some()),
            ("high", p.high.is_some()),
        ];
        for (name, present) in given {
            if present && !allowed.contains(&name) {
                return Err(Error::Config(format!("{at}.params: `{name}` does not apply to this family")));
            }
        }
        Ok(())
    };
    Ok(match c.family {
        FamilyKind::Point => {
            extra(&["value"])?;
            JumpFamily::Point { value: take(&p.value, "value")? }
        }
        FamilyKind::Gauss => {
            extra(&["mean", "sd"])?;
            JumpFamily::Gauss { mean: take(&p.mean, "mean")?, sd: take(&p.sd, "sd")? }
        }
        FamilyKind::Uniform => {
            extra(&["low", "high"])?;
            JumpFamily::Uniform { low: take(&p.low, "low")?, high: take(&p.high, "high")? }
        }
    })
}

fn config_of_family(f: &JumpFamily) -> (FamilyKind, FamilyParams) {
    match f {
        JumpFamily::Point { value } => {
            (FamilyKind::Point, FamilyParams { value: Some(value.as_slice().into()), ..Default::default() })
        }
        JumpFamily::Gauss { mean, sd } => (
            FamilyKind::Gauss,
            FamilyParams { mean: Some(mean.as_slice().into()), sd: Some(sd.as_slice().into()), ..Default::default() },
        ),
        JumpFamily::Uniform { low, high } => (
            FamilyKind::Uniform,
            FamilyParams { low: Some(low.as_slice().into()), high: Some(high.as_slice().into()), ..Default::default() },
        ),
    }
}

fn model_error(e: Error) -> Error {
    match e {
        Error::Invalid(m) => Error::Config(m),
        other => other,
    }
}

impl ModelConfig {
    /// Parses JSON text. Syntax and type errors report the key path and the
    /// line and column.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ModelConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config(format!("at `{path}` (line {}, column {}): {inner}", inner.line(), inner.column()))
        })?;
        if cfg.schema != SCHEMA {
            return Err(Error::Config(format!("unsupported schema `{}` (expected `{SCHEMA}`)", cfg.schema)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model config serialises")
    }

    /// Converts to simulation types. Structural problems (negative rates,
    /// mismatched lengths, unknown labels) are rejected here; whether the
    /// transition matrix is stochastic and irreducible is left to validation.
    pub fn build(&self) -> Result<LoadedModel> {
        let n = self.switching.states.len();
        for (name, len) in [
            ("switching.q", self.switching.q.len()),
            ("jumps", self.jumps.len()),
            ("drift.rho", self.drift.rho.len()),
            ("drift.d", self.drift.d.len()),
        ] {
            if len != n {
                return Err(Error::Config(format!("{name} has {len} entries for {n} states")));
            }
        }
        let spec =
            SwitchSpec::new(self.switching.states.clone(), self.switching.q.clone(), self.switching.p.clone())
                .map_err(model_error)?;
        let mut states = Vec::with_capacity(n);
        for x in 0..n {
            let components = self.jumps[x]
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let at = format!("jumps[{x}][{k}]");
                    Ok(JumpComponent::new(family_of(c, &at)?, c.rate).with_growth(c.kappa, c.ucap))
                })
                .collect::<Result<Vec<_>>>()?;
            let d = &self.drift.d[x];
            let displacement = Displacement {
                offset: d.offset.clone().into_vec(),
                ramps: d.ramps.iter().map(|r| Ramp { slope: r.slope.clone().into_vec(), cap: r.cap }).collect(),
            };
            states.push(StateDynamics { components, rho: self.drift.rho[x], displacement });
        }
        let mut model = JumpModel::new(self.dimension, states).map_err(model_error)?;
        if let Some(l) = self.growth_bound {
            model = model.with_growth_bound(l).map_err(model_error)?;
        }
        if let Some(e) = &self.envelope {
            model = model
                .with_envelope(Envelope { center: e.center.clone().into_vec(), width: e.width })
                .map_err(model_error)?;
        }
        let (xi0, x0) = match &self.initial {
            None => (vec![0.0; self.dimension], 0),
            Some(init) => {
                let xi = init.xi.clone().into_vec();
                if xi.len() != self.dimension {
                    return Err(Error::Config(format!(
                        "initial.xi has length {} for dimension {}",
                        xi.len(),
                        self.dimension
                    )));
                }
                let x = match &init.state {
                    StateRef::Index(i) if *i < n => *i,
                    StateRef::Index(i) => return Err(Error::Config(format!("initial.state {i} out of range"))),
                    StateRef::Label(l) => spec
                        .index_of(l)
                        .ok_or_else(|| Error::Config(format!("initial.state `{l}` is not a state label")))?,
                };
                (xi, x)
            }
        };
        Ok(LoadedModel { spec, model, xi0, x0 })
    }

    pub fn from_parts(spec: &SwitchSpec, model: &JumpModel, xi0: &[f64], x0: usize) -> Self {
        let jumps = model
            .states()
            .iter()
            .map(|s| {
                s.components
                    .iter()
                    .map(|c| {
                        let (family, params) = config_of_family(&c.family);
                        ComponentConfig { family, params, rate: c.rate, kappa: c.kappa, ucap: c.ucap }
                    })
                    .collect()
            })
            .collect();
        let drift = DriftConfig {
            rho: model.states().iter().map(|s| s.rho).collect(),
            d: model
                .states()
                .iter()
                .map(|s| DisplacementConfig {
                    offset: s.displacement.offset.as_slice().into(),
                    ramps: s
                        .displacement
                        .ramps
                        .iter()
                        .map(|r| RampConfig { slope: r.slope.as_slice().into(), cap: r.cap })
                        .collect(),
                })
                .collect(),
        };
        ModelConfig {
            schema: SCHEMA.to_string(),
            dimension: model.dim(),
            switching: SwitchingConfig { states: spec.states().to_vec(), q: spec.q().to_vec(), p: spec.p_rows() },
            jumps,
            drift,
            growth_bound: model.growth_bound(),
            envelope: model
                .envelope()
                .map(|e| EnvelopeConfig { center: e.center.as_slice().into(), width: e.width }),
            initial: Some(InitialConfig { xi: xi0.into(), state: StateRef::Index(x0) }),
        }
    }

    /// The averaged model as a single-state file, so limit runs reuse the
    /// ordinary pipeline.
    pub fn from_limit(limit: &LimitModel, xi0: &[f64]) -> Self {
        let mut cfg = Self::from_parts(&SwitchSpec::trivial(), limit.model(), xi0, 0);
        cfg.switching.states = vec!["averaged".to_string()];
        cfg
    }
}
