//! Energy-loss lines for an electron crossing a sample prepared in a
//! superposition `Σ a_i |j_i⟩`: each basis state is propagated on its own
//! and contributes lines at `ω_j − ω_{j_i}` with weight `|F_{j,j_i}(∞) a_i|²`.

use serde::{Deserialize, Serialize};

use super::{integrate, InitialState, IntegrateOptions, LevelSystem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EelsLine {
    /// Energy lost by the electron (negative for gain).
    pub frequency: f64,
    pub weight: f64,
}

/// Discrete loss spectrum, sorted by frequency, with coincident lines merged.
pub fn eels_spectrum(system: &LevelSystem, initial: &InitialState, opts: &IntegrateOptions) -> Result<Vec<EelsLine>> {
    let n = system.levels();
    if initial.amplitudes().len() != n {
        return Err(Error::invalid(
            "initial_state",
            format!("{} amplitudes for {} levels", initial.amplitudes().len(), n),
        ));
    }
    let freqs = system.frequencies();
    let mut lines = Vec::new();
    let opts = IntegrateOptions { samples: 0, ..*opts };
    for (i, a) in initial.amplitudes().iter().enumerate() {
        if a.norm_sqr() == 0.0 {
            continue;
        }
        let run = integrate(system, &InitialState::basis(n, i)?, &opts)?;
        for (j, f) in run.final_amplitudes.iter().enumerate() {
            lines.push(EelsLine {
                frequency: freqs[j] - freqs[i],
                weight: (f * a).norm_sqr(),
            });
        }
    }
    lines.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    let scale = freqs.iter().fold(0.0f64, |m, w| m.max(w.abs())).max(f64::MIN_POSITIVE);
    let mut merged: Vec<EelsLine> = Vec::with_capacity(lines.len());
    for line in lines {
        match merged.last_mut() {
            Some(last) if (line.frequency - last.frequency).abs() <= 1e-9 * scale => last.weight += line.weight,
            _ => merged.push(line),
        }
    }
    Ok(merged)
}
