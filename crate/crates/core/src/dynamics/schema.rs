//! JSON documents for models and networks. Field-by-field reference lives in
//! `docs/schemas.md`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::builtin::{builtin_model, Builtin};
use super::model::ModelSpec;
use super::network::{Graph, NetworkSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub dim: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub drift: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub sigma: f64,
}

impl ModelFile {
    pub fn to_spec(&self) -> Result<ModelSpec> {
        ModelSpec::parse(
            self.dim,
            &self.drift,
            self.diffusion.as_deref(),
            self.params.clone(),
            self.sigma,
        )
    }

    pub fn from_spec(spec: &ModelSpec) -> ModelFile {
        ModelFile {
            dim: spec.dim,
            params: spec.params.clone(),
            drift: spec.drift_text(),
            diffusion: Some(spec.diffusion_text()),
            sigma: spec.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuiltinRef {
    pub builtin: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ModelRef {
    Builtin(BuiltinRef),
    Inline(ModelFile),
}

impl<'de> Deserialize<'de> for ModelRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = serde_json::Value::deserialize(d)?;
        if v.get("builtin").is_some() {
            serde_json::from_value(v).map(ModelRef::Builtin).map_err(D::Error::custom)
        } else {
            serde_json::from_value(v).map(ModelRef::Inline).map_err(D::Error::custom)
        }
    }
}

impl ModelRef {
    pub fn to_spec(&self) -> Result<ModelSpec> {
        match self {
            ModelRef::Inline(f) => f.to_spec(),
            ModelRef::Builtin(b) => match builtin_model(&b.builtin, &b.params, None)? {
                Builtin::Model(m) => Ok(m),
                Builtin::Network(_) => Err(Error::InvalidSpec(format!(
                    "`{}` is a network, not a node model",
                    b.builtin
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    #[serde(default = "unit")]
    pub w: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub model: ModelRef,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<Edge>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<String>,
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
    pub coupling_drift: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_diffusion: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<Vec<f64>>>,
}

impl NetworkFile {
    fn weight_matrix(&self) -> Result<Vec<f64>> {
        let n = self.n;
        let given = [self.weights.is_some(), self.edges.is_some(), self.graph.is_some()];
        match given.iter().filter(|g| **g).count() {
            0 => return Err(Error::InvalidSpec("one of weights, edges or graph is required".into())),
            1 => {}
            _ => {
                return Err(Error::InvalidSpec(
                    "weights, edges and graph are mutually exclusive".into(),
                ))
            }
        }
        if let Some(rows) = &self.weights {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidSpec(format!("weights must be {n}x{n}")));
            }
            return Ok(rows.concat());
        }
        if let Some(edges) = &self.edges {
            let mut w = vec![0.0; n * n];
            for e in edges {
                if e.i >= n || e.j >= n || e.i == e.j {
                    return Err(Error::InvalidSpec(format!("bad edge ({}, {})", e.i, e.j)));
                }
                w[e.i * n + e.j] = e.w;
                w[e.j * n + e.i] = e.w;
            }
            return Ok(w);
        }
        let name = self.graph.as_deref().unwrap();
        Graph::from_name(name)
            .map(|g| g.weights(n))
            .ok_or_else(|| Error::InvalidSpec(format!("unknown graph `{name}`")))
    }

    pub fn to_spec(&self) -> Result<NetworkSpec> {
        let model = self.model.to_spec()?;
        let mut spec = NetworkSpec::parse(
            model,
            self.weight_matrix()?,
            &self.coupling_drift,
            self.coupling_diffusion.as_deref(),
            self.epsilon,
            self.delta,
        )?;
        if spec.n != self.n {
            return Err(Error::InvalidSpec("N disagrees with the weight matrix".into()));
        }
        spec.x0 = self.x0.clone();
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_spec(spec: &NetworkSpec) -> NetworkFile {
        let n = spec.n;
        NetworkFile {
            model: ModelRef::Inline(ModelFile::from_spec(&spec.model)),
            n,
            weights: Some(spec.weights.chunks(n).map(<[f64]>::to_vec).collect()),
            edges: None,
            graph: None,
            epsilon: spec.epsilon,
            delta: spec.delta,
            coupling_drift: spec.coupling_drift_text(),
            coupling_diffusion: Some(spec.coupling_diffusion_text()),
            x0: spec.x0.clone(),
        }
    }
}

/// Stable digest of a network's resolved content, used to tie ensembles to
/// certificates.
pub fn fingerprint(spec: &NetworkSpec) -> String {
    let canonical = serde_json::to_string(&NetworkFile::from_spec(spec)).expect("serializable");
    let digest = Sha256::digest(canonical.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidSpec(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<ModelSpec> {
    read_json::<ModelRef>(path)?.to_spec()
}

pub fn load_network(path: &Path) -> Result<NetworkSpec> {
    read_json::<NetworkFile>(path)?.to_spec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_file_defaults_and_unknown_fields() {
        let f: ModelFile = serde_json::from_str(r#"{"dim":1,"drift":["-x1"]}"#).unwrap();
        let spec = f.to_spec().unwrap();
        assert_eq!(spec.sigma, 0.0);
        let e = serde_json::from_str::<ModelFile>(r#"{"dim":1,"drift":["-x1"],"nois":1}"#);
        assert!(e.unwrap_err().to_string().contains("nois"));
    }

    #[test]
    fn network_file_with_builtin_node() {
        let text = r#"{
            "model": {"builtin": "hopf", "params": {"mu": 1, "omega": 1}},
            "N": 3, "edges": [{"i":0,"j":1},{"i":1,"j":2}],
            "epsilon": 0.1, "coupling_drift": ["xj1 - xi1", "0"]
        }"#;
        let spec: NetworkFile = serde_json::from_str(text).unwrap();
        let spec = spec.to_spec().unwrap();
        assert_eq!(spec.weight(0, 1), 1.0);
        assert_eq!(spec.weight(0, 2), 0.0);
        let again = NetworkFile::from_spec(&spec).to_spec().unwrap();
        assert_eq!(fingerprint(&spec), fingerprint(&again));
    }

    #[test]
    fn fingerprint_changes_with_content() {
        let mk = |eps: f64| {
            serde_json::from_str::<NetworkFile>(&format!(
                r#"{{"model": {{"dim":1,"drift":["1"]}}, "N": 2, "graph": "line",
                    "epsilon": {eps}, "coupling_drift": ["sin(phij - phii)"]}}"#
            ))
            .unwrap()
            .to_spec()
            .unwrap()
        };
        assert_ne!(fingerprint(&mk(0.1)), fingerprint(&mk(0.2)));
    }
}
