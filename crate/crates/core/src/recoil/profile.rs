//! Finite energy spread: `P_j = ∫ dq |α_q⁰|² P_{q,j}`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Incident wave-vector distribution sampled at quadrature nodes. Only the
/// moduli of the amplitudes enter any observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    pub nodes: Vec<f64>,
    /// Quadrature weight times `|α_q⁰|²` at each node.
    pub weights: Vec<f64>,
}

impl SpectralProfile {
    /// Monochromatic beam at `q0`.
    pub fn delta(q0: f64) -> Self {
        SpectralProfile {
            nodes: vec![q0],
            weights: vec![1.0],
        }
    }

    /// From complex amplitudes `α` at `nodes` with quadrature weights `dq`.
    pub fn from_amplitudes(nodes: Vec<f64>, amplitudes: &[Complex64], dq: &[f64]) -> Result<Self> {
        if nodes.len() != amplitudes.len() || nodes.len() != dq.len() {
            return Err(Error::invalid("profile", "nodes, amplitudes and weights differ in length"));
        }
        let weights = amplitudes.iter().zip(dq).map(|(a, w)| a.norm_sqr() * w).collect();
        SpectralProfile::new(nodes, weights)
    }

    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.is_empty() {
            return Err(Error::invalid("profile", "need equally many nodes and weights, at least one"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("profile", "weights must be nonnegative"));
        }
        Ok(SpectralProfile { nodes, weights })
    }

    pub fn normalization(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// `Σ_k w_k P_j(q_k)` given the monochromatic probabilities at each node.
pub fn weighted_probability(per_node: &[Vec<f64>], profile: &SpectralProfile) -> Result<Vec<f64>> {
    let norm = profile.normalization();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("profile", format!("not normalized: ∫|α|² dq = {norm}")));
    }
    if per_node.len() != profile.nodes.len() {
        return Err(Error::invalid(
            "profile",
            format!("{} results for {} nodes", per_node.len(), profile.nodes.len()),
        ));
    }
    let levels = per_node.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = vec![0.0; levels];
    for (p, w) in per_node.iter().zip(&profile.weights) {
        for (o, v) in out.iter_mut().zip(p) {
            *o += w * v;
        }
    }
    Ok(out)
}
