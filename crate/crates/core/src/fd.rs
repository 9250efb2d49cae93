//! Triangular fundamental diagram (flow-density relation).
//!
//! All densities are vehicles per kilometre, flows vehicles per hour. Speeds
//! derived from the diagram are returned in metres per second; the helpers
//! here are the single place where unit conversion happens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KMH_TO_MS: f64 = 1.0 / 3.6;
pub const MS_TO_KMH: f64 = 3.6;

/// Triangular flow-density relation: flow rises linearly at free-flow speed up
/// to the critical density, then falls linearly to zero at jam density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalDiagram {
    /// Jam density k_j (veh/km): density of a standing queue.
    pub jam_density_veh_km: f64,
    /// Critical density k_m (veh/km): density at which flow peaks.
    pub critical_density_veh_km: f64,
    /// Saturation flow q_m (veh/h): peak flow, reached at the critical density.
    pub saturation_flow_veh_h: f64,
}

impl FundamentalDiagram {
    pub fn new(
        jam_density_veh_km: f64,
        critical_density_veh_km: f64,
        saturation_flow_veh_h: f64,
    ) -> Result<Self> {
        let fd = FundamentalDiagram {
            jam_density_veh_km,
            critical_density_veh_km,
            saturation_flow_veh_h,
        };
        fd.validate()?;
        Ok(fd)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jam_density_veh_km.is_finite()
            && self.critical_density_veh_km.is_finite()
            && self.saturation_flow_veh_h.is_finite())
        {
            return Err(Error::config("fundamental diagram values must be finite"));
        }
        if self.saturation_flow_veh_h <= 0.0 {
            return Err(Error::config("saturation flow must be positive"));
        }
        if self.critical_density_veh_km <= 0.0 {
            return Err(Error::config("critical density must be positive"));
        }
        if self.jam_density_veh_km <= self.critical_density_veh_km {
            return Err(Error::config(
                "jam density must exceed critical density for a triangular diagram",
            ));
        }
        Ok(())
    }

    /// Free-flow speed v_f = q_m / k_m, in m/s.
    pub fn free_flow_speed_ms(&self) -> f64 {
        self.saturation_flow_veh_h / self.critical_density_veh_km * KMH_TO_MS
    }

    /// Speed of the backward (discharge) wave w = q_m / (k_j - k_m), in m/s.
    ///
    /// This is the speed at which the "start moving" signal propagates
    /// upstream through a standing queue once its head is released.
    pub fn backward_wave_speed_ms(&self) -> f64 {
        self.saturation_flow_veh_h / (self.jam_density_veh_km - self.critical_density_veh_km)
            * KMH_TO_MS
    }

    /// Spacing between stopped vehicles, 1 / k_j, in metres.
    pub fn jam_spacing_m(&self) -> f64 {
        1000.0 / self.jam_density_veh_km
    }

    /// Newell reaction lag tau = jam spacing / backward wave speed, in seconds.
    ///
    /// A follower reproduces its leader's trajectory shifted by (tau,
    /// jam spacing); that shift is what makes the discharge wave travel at
    /// exactly `backward_wave_speed_ms` in the car-following model.
    pub fn newell_lag_s(&self) -> f64 {
        self.jam_spacing_m() / self.backward_wave_speed_ms()
    }
}
