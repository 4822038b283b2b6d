//! Triangular fundamental diagram.
//!
//! Per lane, flow is `min(v·rho, w·(rho_jam − rho))`: a free-flow branch
//! with slope `v` up to the critical density, then a congested branch that
//! drops to zero at jam density with backward wave speed `w`. All arc-level
//! quantities in the solver work with lane-aggregated values, so
//! [`ArcFd`] folds lane count (and any incident-induced capacity factor)
//! into jam density and capacity while leaving the two speeds untouched.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

/// Per-lane triangular flux relation, with optional parameter spread for
/// stochastic runs. Units: speeds in m/s, densities in veh/m/lane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FundamentalDiagram {
    /// Free-flow speed (m/s).
    pub v_free: f64,
    /// Backward (congestion) wave speed, as a positive magnitude (m/s).
    pub wave_speed: f64,
    /// Jam density per lane (veh/m/lane).
    pub jam_density: f64,
    /// Coefficient of variation of `v_free` across parameter draws.
    #[serde(default)]
    pub cv_v_free: f64,
    /// Coefficient of variation of `wave_speed` across parameter draws.
    #[serde(default)]
    pub cv_wave_speed: f64,
    /// Coefficient of variation of `jam_density` across parameter draws.
    #[serde(default)]
    pub cv_jam_density: f64,
}

impl FundamentalDiagram {
    pub fn new(v_free: f64, wave_speed: f64, jam_density: f64) -> Self {
        FundamentalDiagram {
            v_free,
            wave_speed,
            jam_density,
            cv_v_free: 0.0,
            cv_wave_speed: 0.0,
            cv_jam_density: 0.0,
        }
    }

    /// Density at which the two branches meet (veh/m/lane).
    pub fn critical_density(&self) -> f64 {
        self.wave_speed * self.jam_density / (self.v_free + self.wave_speed)
    }

    /// Capacity flow per lane (veh/s/lane): `v · rho_crit`.
    pub fn q_max(&self) -> f64 {
        self.v_free * self.critical_density()
    }

    /// Whether any parameter has nonzero spread.
    pub fn is_stochastic(&self) -> bool {
        self.cv_v_free > 0.0 || self.cv_wave_speed > 0.0 || self.cv_jam_density > 0.0
    }

    /// Arc-level parameters for `lanes` lanes at full capacity.
    pub fn for_lanes(&self, lanes: f64) -> ArcFd {
        ArcFd {
            v_free: self.v_free,
            wave_speed: self.wave_speed,
            jam_density: self.jam_density * lanes,
            q_max: self.q_max() * lanes,
        }
    }

    /// Draw one parameter set. Each parameter is lognormal with the
    /// configured mean and coefficient of variation (degenerate at the mean
    /// when the CV is zero), so draws stay positive.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> FundamentalDiagram {
        FundamentalDiagram {
            v_free: lognormal_draw(self.v_free, self.cv_v_free, rng),
            wave_speed: lognormal_draw(self.wave_speed, self.cv_wave_speed, rng),
            jam_density: lognormal_draw(self.jam_density, self.cv_jam_density, rng),
            cv_v_free: 0.0,
            cv_wave_speed: 0.0,
            cv_jam_density: 0.0,
        }
    }
}

fn lognormal_draw<R: Rng>(mean: f64, cv: f64, rng: &mut R) -> f64 {
    if cv <= 0.0 {
        return mean;
    }
    // Moment-matched lognormal: E = mean, sd = cv * mean.
    let sigma2 = (1.0 + cv * cv).ln();
    let mu = mean.ln() - sigma2 / 2.0;
    LogNormal::new(mu, sigma2.sqrt()).expect("lognormal params").sample(rng)
}

/// Lane-aggregated flux relation for one arc (or one cell of an arc while
/// an incident caps it). Densities here are veh/m summed over lanes.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct ArcFd {
    pub v_free: f64,
    pub wave_speed: f64,
    /// Total jam density (veh/m).
    pub jam_density: f64,
    /// Total capacity flow (veh/s).
    pub q_max: f64,
}

impl ArcFd {
    /// Equilibrium flux at total density `rho` (veh/s). Negative values that
    /// could arise from densities above jam (possible mid-incident, when the
    /// effective jam density drops below what is already stored) clamp to 0.
    pub fn flux(&self, rho: f64) -> f64 {
        let free = self.v_free * rho;
        let congested = self.wave_speed * (self.jam_density - rho);
        free.min(congested).max(0.0)
    }

    /// Speed at total density `rho` (m/s); free-flow speed in vacuum.
    pub fn speed(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            self.v_free
        } else {
            self.flux(rho) / rho
        }
    }

    /// Sending capability of a cell at density `rho`: `min(v·rho, q_max)`.
    pub fn demand(&self, rho: f64) -> f64 {
        (self.v_free * rho).min(self.q_max)
    }

    /// Receiving capability of a cell at density `rho`:
    /// `min(q_max, w·(rho_jam − rho))`, floored at zero.
    pub fn supply(&self, rho: f64) -> f64 {
        self.q_max.min(self.wave_speed * (self.jam_density - rho)).max(0.0)
    }

    /// Scale capacity and jam density by `factor` (lane-blocking incidents).
    /// `factor == 1` returns parameters bitwise identical to `self`.
    pub fn capped(&self, factor: f64) -> ArcFd {
        if factor == 1.0 {
            *self
        } else {
            ArcFd {
                v_free: self.v_free,
                wave_speed: self.wave_speed,
                jam_density: self.jam_density * factor,
                q_max: self.q_max * factor,
            }
        }
    }
}

/// Equilibrium flux with domain checking; rejects densities outside
/// `[0, jam]`. The solver's inner loops use [`ArcFd::flux`] directly since
/// cell densities already maintain that invariant.
pub fn fundamental_flux(fd: &ArcFd, rho: f64) -> Result<f64, String> {
    if !rho.is_finite() || rho < 0.0 || rho > fd.jam_density {
        return Err(format!(
            "density {rho} outside [0, {jam}]",
            jam = fd.jam_density
        ));
    }
    Ok(fd.flux(rho))
}

/// Saturation ramp after a signal turns green: `min(1, t/tau)`. Models
/// start-up lost time; `tau <= 0` disables the ramp.
pub fn startup_ramp(time_since_green: f64, tau_startup: f64) -> f64 {
    if tau_startup <= 0.0 {
        1.0
    } else {
        (time_since_green / tau_startup).clamp(0.0, 1.0)
    }
}
