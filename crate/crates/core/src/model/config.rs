//! Model definitions read from structured text.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Builtin, ModelSpec};
use crate::error::{Error, Result};

/// Either a builtin with parameters or a tabulated periodic model.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ModelConfig {
    Builtin(Builtin),
    Tabulated(TabulatedModel),
}

/// Nodal coefficient tables on a uniform periodic grid of the unit cell,
/// multilinearly interpolated. The reaction is
/// `f_i = sum_j H_ij(x) u_j - saturation * u_i^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedModel {
    pub builtin: String,
    pub dim: usize,
    pub components: usize,
    /// Nodes per axis; node `j` on axis `l` sits at `x_l = j / nodes[l]`.
    pub nodes: Vec<usize>,
    /// Per component: isotropic diffusion coefficient at each node
    /// (node-major, axis 0 fastest), or a single constant.
    pub diffusion: Vec<Vec<f64>>,
    /// Per component: drift vectors at each node, `dim` entries per node.
    #[serde(default)]
    pub advection: Vec<Vec<f64>>,
    /// Row-major `d x d` linear part at each node, or a single matrix.
    pub linear: Vec<f64>,
    #[serde(default = "default_saturation")]
    pub saturation: f64,
    #[serde(default)]
    pub eta_hat: Option<f64>,
}

fn default_saturation() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn from_toml(value: &toml::Value, path: &str) -> Result<ModelConfig> {
        let name = value
            .get("builtin")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::config(format!("{path}.builtin"), "missing model name"))?;
        if name == "tabulated" {
            TabulatedModel::deserialize(value.clone())
                .map(ModelConfig::Tabulated)
                .map_err(|e| Error::config(path, e.to_string()))
        } else {
            Builtin::deserialize(value.clone())
                .map(ModelConfig::Builtin)
                .map_err(|e| Error::config(path, e.to_string()))
        }
    }

    pub fn parse_str(text: &str) -> Result<ModelConfig> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::config("model", e.to_string()))?;
        ModelConfig::from_toml(&value, "model")
    }

    pub fn build(&self) -> Result<ModelSpec> {
        match self {
            ModelConfig::Builtin(b) => b.build(),
            ModelConfig::Tabulated(t) => t.build(),
        }
    }
}

/// Periodic multilinear interpolation of a node-major table with `stride`
/// values per node; writes `stride` values into `out`.
fn interpolate(nodes: &[usize], table: &[f64], stride: usize, x: &[f64], out: &mut [f64]) {
    let n = nodes.len();
    let mut base = [0usize; super::MAX_DIM];
    let mut frac = [0.0f64; super::MAX_DIM];
    for l in 0..n {
        let s = x[l] * nodes[l] as f64;
        let i = s.floor();
        base[l] = (i as usize) % nodes[l];
        frac[l] = s - i;
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    for corner in 0..(1usize << n) {
        let mut weight = 1.0;
        let mut idx = 0;
        let mut mult = 1;
        for l in 0..n {
            let up = (corner >> l) & 1;
            weight *= if up == 1 { frac[l] } else { 1.0 - frac[l] };
            idx += ((base[l] + up) % nodes[l]) * mult;
            mult *= nodes[l];
        }
        if weight == 0.0 {
            continue;
        }
        for (k, o) in out.iter_mut().enumerate() {
            *o += weight * table[idx * stride + k];
        }
    }
}

impl TabulatedModel {
    fn field_len(&self, name: &str, got: usize, per_node: usize) -> Result<bool> {
        let m: usize = self.nodes.iter().product();
        if got == per_node {
            Ok(false)
        } else if got == per_node * m {
            Ok(true)
        } else {
            Err(Error::config(
                format!("model.{name}"),
                format!("expected {per_node} or {} values, got {got}", per_node * m),
            ))
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        let (n, d) = (self.dim, self.components);
        if self.nodes.len() != n {
            return Err(Error::config("model.nodes", format!("expected {n} entries")));
        }
        if self.nodes.iter().any(|&k| k == 0) {
            return Err(Error::config("model.nodes", "node counts must be positive"));
        }
        if self.diffusion.len() != d {
            return Err(Error::config("model.diffusion", format!("expected {d} component tables")));
        }
        let mut diffusion = Vec::with_capacity(d);
        for (i, table) in self.diffusion.iter().enumerate() {
            let nodal = self.field_len(&format!("diffusion[{i}]"), table.len(), 1)?;
            if table.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::config(format!("model.diffusion[{i}]"), "values must be positive"));
            }
            diffusion.push((nodal, table.clone()));
        }
        let mut advection = Vec::with_capacity(d);
        if !self.advection.is_empty() {
            if self.advection.len() != d {
                return Err(Error::config("model.advection", format!("expected {d} component tables")));
            }
            for (i, table) in self.advection.iter().enumerate() {
                let nodal = self.field_len(&format!("advection[{i}]"), table.len(), n)?;
                advection.push((nodal, table.clone()));
            }
        }
        let linear_nodal = self.field_len("linear", self.linear.len(), d * d)?;
        if !(self.saturation >= 0.0) {
            return Err(Error::config("model.saturation", "must be nonnegative"));
        }

        let nodes = self.nodes.clone();
        let nodes_a = nodes.clone();
        let nodes_f = nodes.clone();
        let nodes_j = nodes.clone();
        let linear = Arc::new(self.linear.clone());
        let linear_j = linear.clone();
        let kappa = self.saturation;
        let homogeneous = diffusion.iter().all(|(nodal, _)| !nodal)
            && advection.iter().all(|(nodal, _)| !nodal)
            && !linear_nodal;

        let sample_linear = move |nodes: &[usize], table: &[f64], x: &[f64], out: &mut [f64]| {
            if linear_nodal {
                interpolate(nodes, table, d * d, x, out);
            } else {
                out.copy_from_slice(table);
            }
        };

        let mut b = ModelSpec::builder("tabulated", n, d)
            .diffusion(Arc::new(move |comp, x, out| {
                let (nodal, table) = &diffusion[comp];
                let mut a = [0.0];
                if *nodal {
                    interpolate(&nodes, table, 1, x, &mut a);
                } else {
                    a[0] = table[0];
                }
                out.iter_mut().for_each(|v| *v = 0.0);
                for l in 0..x.len() {
                    out[l * x.len() + l] = a[0];
                }
            }))
            .reaction(Arc::new(move |x, u, out| {
                let mut h = [0.0; 64];
                sample_linear(&nodes_f, &linear, x, &mut h[..d * d]);
                for i in 0..d {
                    out[i] = (0..d).map(|j| h[i * d + j] * u[j]).sum::<f64>() - kappa * u[i] * u[i];
                }
            }))
            .jacobian(Arc::new(move |x, u, out| {
                sample_linear(&nodes_j, &linear_j, x, out);
                for i in 0..d {
                    out[i * d + i] -= 2.0 * kappa * u[i];
                }
            }))
            .homogeneous(homogeneous);
        if d * d > 64 {
            return Err(Error::config("model.components", "at most 8 components"));
        }
        if !advection.is_empty() {
            b = b.advection(Arc::new(move |comp, x, out| {
                let (nodal, table) = &advection[comp];
                if *nodal {
                    interpolate(&nodes_a, table, x.len(), x, out);
                } else {
                    out.copy_from_slice(table);
                }
            }));
        }
        if let Some(eta) = self.eta_hat {
            b = b.eta_hat(eta);
        }
        b.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_builtin_with_defaults() {
        let cfg = ModelConfig::parse_str("builtin = \"scalar_kpp\"\nr = 4.0\n").unwrap();
        match &cfg {
            ModelConfig::Builtin(Builtin::ScalarKpp { r, dim, .. }) => {
                assert_eq!(*r, 4.0);
                assert_eq!(*dim, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(cfg.build().unwrap().name(), "scalar_kpp");
    }

    #[test]
    fn unknown_builtin_field_names_the_path() {
        let err = ModelConfig::parse_str("builtin = \"scalar_kpp\"\nrr = 4.0\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "model"));
    }

    #[test]
    fn tabulated_interpolates_periodically() {
        let text = r#"
builtin = "tabulated"
dim = 1
components = 1
nodes = [4]
diffusion = [[1.0, 2.0, 3.0, 2.0]]
linear = [1.0]
"#;
        let m = ModelConfig::parse_str(text).unwrap().build().unwrap();
        assert_eq!(m.diffusion(0, &[0.125])[0], 1.5);
        assert_eq!(m.diffusion(0, &[0.875])[0], 1.5);
        assert_eq!(m.diffusion(0, &[1.25])[0], 2.0);
        assert!((m.eta_hat() - 1.0).abs() < 1e-9);
        assert!(!m.is_homogeneous());
    }

    #[test]
    fn tabulated_rejects_wrong_table_size() {
        let text = r#"
builtin = "tabulated"
dim = 1
components = 1
nodes = [4]
diffusion = [[1.0, 2.0]]
linear = [1.0]
"#;
        let err = ModelConfig::parse_str(text).unwrap().build().unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "model.diffusion[0]"));
    }
}
