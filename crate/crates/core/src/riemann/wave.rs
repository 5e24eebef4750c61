//! Kinematic waves between an initial and a stationary state on one link.

use serde::Serialize;

use crate::diagram::FundamentalDiagram;
use crate::error::{Error, Result};

/// Densities closer than this fraction of the jam density carry no wave.
pub const WAVE_DENSITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WaveKind {
    None,
    Shock {
        speed: f64,
    },
    /// Characteristic speeds at the left and right edge of the fan.
    Rarefaction {
        speed_lo: f64,
        speed_hi: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaveFan {
    #[serde(flatten)]
    pub kind: WaveKind,
    pub rho_left: f64,
    pub rho_right: f64,
}

impl WaveFan {
    pub fn label(&self) -> &'static str {
        match self.kind {
            WaveKind::None => "None",
            WaveKind::Shock { .. } => "Shock",
            WaveKind::Rarefaction { .. } => "Rarefaction",
        }
    }

    /// `(slowest, fastest)` speed in the fan, `None` for no wave.
    pub fn speed_range(&self) -> Option<(f64, f64)> {
        match self.kind {
            WaveKind::None => None,
            WaveKind::Shock { speed } => Some((speed, speed)),
            WaveKind::Rarefaction { speed_lo, speed_hi } => Some((speed_lo, speed_hi)),
        }
    }
}

/// Entropy solution of the LWR Riemann problem with constant densities
/// `rho_left` and `rho_right` on a concave diagram.
pub fn classify_wave(fd: &FundamentalDiagram, rho_left: f64, rho_right: f64) -> Result<WaveFan> {
    if !fd.is_concave() {
        return Err(Error::UnsupportedDiagram);
    }
    let ql = fd.flow(rho_left)?;
    let qr = fd.flow(rho_right)?;
    let kind = if (rho_left - rho_right).abs() <= WAVE_DENSITY_TOL * fd.jam_density() {
        WaveKind::None
    } else if rho_left < rho_right {
        WaveKind::Shock {
            speed: (qr - ql) / (rho_right - rho_left),
        }
    } else {
        WaveKind::Rarefaction {
            speed_lo: fd.char_speed(rho_left)?,
            speed_hi: fd.char_speed(rho_right)?,
        }
    };
    Ok(WaveFan {
        kind,
        rho_left,
        rho_right,
    })
}
