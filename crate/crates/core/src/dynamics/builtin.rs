//! Ready-made oscillators: Hopf normal form, Van der Pol, and the
//! leader-follower phase network.

use std::collections::BTreeMap;

use super::model::ModelSpec;
use super::network::{Graph, NetworkSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum Builtin {
    Model(ModelSpec),
    Network(NetworkSpec),
}

pub const BUILTIN_NAMES: &[&str] = &["hopf", "vanderpol", "leader_follower"];

fn require(params: &BTreeMap<String, f64>, name: &str) -> Result<f64> {
    params
        .get(name)
        .copied()
        .ok_or_else(|| Error::MissingParameter(name.to_string()))
}

fn reject_unknown(params: &BTreeMap<String, f64>, allowed: &[&str], model: &str) -> Result<()> {
    match params.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(Error::InvalidSpec(format!(
            "`{k}` is not a parameter of {model} (expected one of: {})",
            allowed.join(", ")
        ))),
        None => Ok(()),
    }
}

/// `dx = (mu x1 - omega x2 - r^2 x1) dt + sigma dW1`,
/// `dy = (omega x1 + mu x2 - r^2 x2) dt + sigma dW2`.
pub fn hopf(mu: f64, omega: f64, sigma: f64) -> Result<ModelSpec> {
    let params = BTreeMap::from([("mu".to_string(), mu), ("omega".to_string(), omega)]);
    ModelSpec::parse(
        2,
        &[
            "mu*x1 - omega*x2 - (x1^2 + x2^2)*x1",
            "omega*x1 + mu*x2 - (x1^2 + x2^2)*x2",
        ],
        None,
        params,
        sigma,
    )
}

pub fn vanderpol(sigma: f64) -> Result<ModelSpec> {
    ModelSpec::parse(2, &["x1 - x1^3/3 - x2", "x1"], None, BTreeMap::new(), sigma)
}

/// `dphi_i = sin(r phi_i - phi_i^3) dt + sigma sin(phi_i) dW
///   + sum_j c_ij (eps sin(phi_j - phi_i) dt + delta sin(phi_j - phi_i) dW_ij)`.
pub fn leader_follower(
    r: f64,
    epsilon: f64,
    delta: f64,
    sigma: f64,
    graph: &Graph,
    n: usize,
) -> Result<NetworkSpec> {
    let params = BTreeMap::from([("r".to_string(), r)]);
    let diffusion = vec![vec!["sin(x1)".to_string()]];
    let model = ModelSpec::parse(1, &["sin(r*x1 - x1^3)"], Some(&diffusion), params, sigma)?;
    let coupling = vec![vec!["sin(xj1 - xi1)".to_string()]];
    NetworkSpec::parse(
        model,
        graph.weights(n),
        &["sin(xj1 - xi1)"],
        Some(&coupling),
        epsilon,
        delta,
    )
}

/// Look up a built-in by name. `sigma` defaults to 0; the leader-follower
/// network also reads `N` (default 3) and uses a line graph unless `graph`
/// is given.
pub fn builtin_model(
    name: &str,
    params: &BTreeMap<String, f64>,
    graph: Option<&Graph>,
) -> Result<Builtin> {
    let sigma = params.get("sigma").copied().unwrap_or(0.0);
    match name {
        "hopf" => {
            reject_unknown(params, &["mu", "omega", "sigma"], name)?;
            Ok(Builtin::Model(hopf(
                require(params, "mu")?,
                require(params, "omega")?,
                sigma,
            )?))
        }
        "vanderpol" | "van_der_pol" => {
            reject_unknown(params, &["sigma"], name)?;
            Ok(Builtin::Model(vanderpol(sigma)?))
        }
        "leader_follower" => {
            reject_unknown(params, &["r", "epsilon", "delta", "sigma", "N"], name)?;
            let n = params.get("N").copied().unwrap_or(3.0);
            if n < 1.0 || n.fract() != 0.0 {
                return Err(Error::InvalidSpec("N must be a positive integer".into()));
            }
            Ok(Builtin::Network(leader_follower(
                require(params, "r")?,
                require(params, "epsilon")?,
                require(params, "delta")?,
                sigma,
                graph.unwrap_or(&Graph::Line),
                n as usize,
            )?))
        }
        _ => Err(Error::InvalidSpec(format!(
            "unknown built-in model `{name}` (expected one of: {})",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}
