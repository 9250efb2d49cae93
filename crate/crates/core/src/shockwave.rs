//! Kinematic-wave queue forecasting and the phase re-service decision rule.
//!
//! At a fixed checkpoint in each signal cycle (the boundary before the
//! configured re-service slot) the planner measures the protected movement's
//! standing queue and recent arrivals, forecasts how long the queue would grow
//! if the movement had to wait for its next regular green, and decides whether
//! to insert a temporary extra green ("re-service") right now, and for how
//! long.
//!
//! All speeds in this module are metres per second, lengths metres, times
//! seconds. Flow and density inputs use the survey units (veh/h, veh/km).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::{FundamentalDiagram, KMH_TO_MS};

/// Interface speeds between traffic states around a signal-controlled queue,
/// derived from the triangular fundamental diagram and a measured arrival
/// state `(q_a, k_a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveSpeeds {
    /// Speed at which the rear of a stopped queue advances upstream while
    /// arrivals at `(q_a, k_a)` join it: q_a / (k_j - k_a).
    pub growth_ms: f64,
    /// Speed at which the "start moving" front travels upstream through a
    /// standing queue once the light turns green: q_m / (k_j - k_m).
    pub discharge_ms: f64,
    /// Speed of the boundary between saturated discharge flow and the arrival
    /// state, i.e. how fast the released queue thins out from the rear:
    /// |(q_m - q_a) / (k_m - k_a)|.
    pub dissipation_ms: f64,
    /// Speed at which a discharging queue re-compresses when its green ends.
    /// On a triangular diagram this equals `discharge_ms`.
    pub compression_ms: f64,
}

/// Why a max-queue forecast could not be produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecastError {
    /// Arrivals join the queue at least as fast as the discharge wave can eat
    /// it; the queue grows without bound until the arrival state changes.
    SaturatedArrivals,
}

/// Tolerance (veh/km) under which a measured arrival density is treated as
/// exactly critical, where the dissipation-wave expression degenerates.
const DENSITY_EPS_VEH_KM: f64 = 1e-9;

/// Compute all four interface speeds for an arrival state on the free-flow
/// branch (or measured off-branch; any density strictly below jam works).
pub fn wave_speeds(
    arrival_flow_veh_h: f64,
    arrival_density_veh_km: f64,
    fd: &FundamentalDiagram,
) -> Result<WaveSpeeds> {
    if !(arrival_flow_veh_h.is_finite() && arrival_density_veh_km.is_finite()) {
        return Err(Error::domain("arrival measurements must be finite"));
    }
    if arrival_flow_veh_h < 0.0 {
        return Err(Error::domain("arrival flow must be non-negative"));
    }
    if arrival_density_veh_km < 0.0 || arrival_density_veh_km >= fd.jam_density_veh_km {
        return Err(Error::domain(format!(
            "arrival density {arrival_density_veh_km} veh/km outside [0, jam density)"
        )));
    }

    let k_j = fd.jam_density_veh_km;
    let k_m = fd.critical_density_veh_km;
    let q_m = fd.saturation_flow_veh_h;

    let growth = arrival_flow_veh_h / (k_j - arrival_density_veh_km) * KMH_TO_MS;
    let discharge = fd.backward_wave_speed_ms();
    let dissipation = if (arrival_density_veh_km - k_m).abs() < DENSITY_EPS_VEH_KM {
        // Arrival state sits at the capacity point; the boundary between
        // discharge flow and arrivals moves with the vehicles themselves.
        fd.free_flow_speed_ms()
    } else {
        ((q_m - arrival_flow_veh_h) / (k_m - arrival_density_veh_km)).abs() * KMH_TO_MS
    };

    Ok(WaveSpeeds {
        growth_ms: growth,
        discharge_ms: discharge,
        dissipation_ms: dissipation,
        compression_ms: discharge,
    })
}

/// Forecast the largest extent the standing queue will reach if the protected
/// movement is *not* re-served now and instead waits `delta_t_s` for its next
/// green.
///
/// The queue rear keeps advancing at the growth speed; the discharge wave
/// launched at the future green chases it; the forecast is the queue length at
/// the moment the two waves meet.
pub fn forecast_max_queue(
    growth_ms: f64,
    discharge_ms: f64,
    delta_t_s: f64,
    queue_m: f64,
) -> std::result::Result<f64, ForecastError> {
    debug_assert!(growth_ms >= 0.0 && delta_t_s >= 0.0 && queue_m >= 0.0);
    if growth_ms >= discharge_ms {
        return Err(ForecastError::SaturatedArrivals);
    }
    Ok(growth_ms * (discharge_ms * delta_t_s + queue_m) / (discharge_ms - growth_ms) + queue_m)
}

/// Configuration of the re-service trigger and duration rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReServiceConfig {
    /// Forecast/backlog threshold (m) above which re-service is considered.
    pub queue_threshold_m: f64,
    /// Fraction of the released queue's maximum extent that the inserted
    /// green should be able to clear.
    pub clearance_fraction: f64,
    /// Bounds (s) on the inserted green duration.
    pub min_green_s: f64,
    pub max_green_s: f64,
}

impl ReServiceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.queue_threshold_m > 0.0) {
            return Err(Error::config("re-service queue threshold must be positive"));
        }
        if !(self.clearance_fraction > 0.0 && self.clearance_fraction <= 1.0) {
            return Err(Error::config(
                "re-service clearance fraction must lie in (0, 1]",
            ));
        }
        if !(self.min_green_s > 0.0 && self.min_green_s <= self.max_green_s) {
            return Err(Error::config("re-service green bounds must satisfy 0 < min <= max"));
        }
        Ok(())
    }
}

/// Decide the inserted green duration from a max-queue forecast.
///
/// Returns 0 when no re-service is warranted, otherwise a duration within the
/// configured bounds. A saturated-arrival forecast and a backlog already at
/// the threshold both fall back to the maximum duration: in those regimes any
/// estimate of "enough green" is unreliable, so serve as much as allowed.
pub fn reservice_decision(
    forecast: std::result::Result<f64, ForecastError>,
    queue_m: f64,
    speeds: &WaveSpeeds,
    cfg: &ReServiceConfig,
) -> f64 {
    let triggered = match forecast {
        Ok(l_max) => l_max > cfg.queue_threshold_m,
        Err(ForecastError::SaturatedArrivals) => true,
    };
    if !triggered {
        return 0.0;
    }
    if queue_m >= cfg.queue_threshold_m {
        return cfg.max_green_s;
    }
    if speeds.growth_ms >= speeds.discharge_ms {
        return cfg.max_green_s;
    }
    // Largest extent the backlog reaches while the inserted green discharges
    // it, assuming arrivals keep joining until the discharge wave catches the
    // rear.
    let released_max_m =
        speeds.discharge_ms * queue_m / (speeds.discharge_ms - speeds.growth_ms);
    let wanted_s = cfg.clearance_fraction * released_max_m / speeds.dissipation_ms;
    if !wanted_s.is_finite() {
        return cfg.max_green_s;
    }
    wanted_s.clamp(cfg.min_green_s, cfg.max_green_s)
}

/// One checkpoint evaluation, as written to the shockwave event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockEvent {
    /// Simulation time of the checkpoint (s).
    pub t_s: f64,
    /// Cycle index the checkpoint belongs to.
    pub cycle: u64,
    /// Measured standing queue of the protected movement (m).
    pub queue_m: f64,
    /// Arrival flow measured over the last cycle (veh/h).
    pub arrival_flow_veh_h: f64,
    /// Arrival density measured over the last cycle (veh/km).
    pub arrival_density_veh_km: f64,
    /// Forecast max queue if not re-served (m); infinite when arrivals are
    /// saturated.
    pub forecast_m: f64,
    /// Chosen re-service green (s); 0 means no insertion.
    pub decision_s: f64,
}

/// Per-episode state of the re-service rule: arrival windows, the running
/// estimate of the checkpoint-to-green gap, and the event log.
#[derive(Debug, Clone)]
pub struct ReServicePlanner {
    cfg: ReServiceConfig,
    fd: FundamentalDiagram,
    /// Estimate of the gap used before any cycle has completed: the minimum
    /// time the signal plan needs to get from the checkpoint back to the
    /// protected movement's regular green.
    fallback_gap_s: f64,
    /// True measured gaps from the most recent cycles (at most two kept).
    gap_history_s: VecDeque<f64>,
    last_checkpoint_s: Option<f64>,
    pending_checkpoint_s: Option<f64>,
    events: Vec<ShockEvent>,
}

impl ReServicePlanner {
    pub fn new(cfg: ReServiceConfig, fd: FundamentalDiagram, fallback_gap_s: f64) -> Result<Self> {
        cfg.validate()?;
        if !(fallback_gap_s > 0.0) {
            return Err(Error::config("fallback checkpoint-to-green gap must be positive"));
        }
        Ok(ReServicePlanner {
            cfg,
            fd,
            fallback_gap_s,
            gap_history_s: VecDeque::with_capacity(2),
            last_checkpoint_s: None,
            pending_checkpoint_s: None,
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &ReServiceConfig {
        &self.cfg
    }

    /// Window over which arrivals should be measured at a checkpoint: the
    /// elapsed time since the previous checkpoint (one full cycle), or since
    /// the episode start for the first one.
    pub fn arrival_window_s(&self, t_re_s: f64) -> f64 {
        match self.last_checkpoint_s {
            Some(prev) => (t_re_s - prev).max(1.0),
            None => t_re_s.max(1.0),
        }
    }

    /// Current estimate of the checkpoint-to-next-regular-green gap: the mean
    /// of the last two measured gaps, or the plan-derived lower bound before
    /// any measurement exists.
    pub fn gap_estimate_s(&self) -> f64 {
        if self.gap_history_s.is_empty() {
            self.fallback_gap_s
        } else {
            self.gap_history_s.iter().sum::<f64>() / self.gap_history_s.len() as f64
        }
    }

    /// Evaluate the rule at a checkpoint. Returns the inserted green duration
    /// (0 for none) and records the event.
    pub fn decide(
        &mut self,
        t_re_s: f64,
        cycle: u64,
        queue_m: f64,
        arrival_flow_veh_h: f64,
        arrival_density_veh_km: f64,
    ) -> f64 {
        // Clamp raw measurements into the diagram's domain; a detector buried
        // in a deep queue can report arbitrarily dense, slow traffic.
        let k_a = arrival_density_veh_km
            .max(0.0)
            .min(self.fd.jam_density_veh_km * (1.0 - 1e-9));
        let q_a = arrival_flow_veh_h
            .max(0.0)
            .min(self.fd.saturation_flow_veh_h);
        let speeds = wave_speeds(q_a, k_a, &self.fd)
            .expect("clamped arrival state is always inside the diagram domain");

        let gap_s = self.gap_estimate_s();
        let forecast = forecast_max_queue(speeds.growth_ms, speeds.discharge_ms, gap_s, queue_m);
        let decision_s = reservice_decision(forecast, queue_m, &speeds, &self.cfg);

        self.events.push(ShockEvent {
            t_s: t_re_s,
            cycle,
            queue_m,
            arrival_flow_veh_h: q_a,
            arrival_density_veh_km: k_a,
            forecast_m: forecast.unwrap_or(f64::INFINITY),
            decision_s,
        });
        self.last_checkpoint_s = Some(t_re_s);
        self.pending_checkpoint_s = Some(t_re_s);
        decision_s
    }

    /// Report that the protected movement's regular green started at `t_s`.
    /// Completes the pending gap measurement, if any.
    pub fn record_protected_green_start(&mut self, t_s: f64) {
        if let Some(t_re) = self.pending_checkpoint_s.take() {
            let gap = t_s - t_re;
            if gap > 0.0 {
                if self.gap_history_s.len() == 2 {
                    self.gap_history_s.pop_front();
                }
                self.gap_history_s.push_back(gap);
            }
        }
    }

    pub fn events(&self) -> &[ShockEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<ShockEvent> {
        std::mem::take(&mut self.events)
    }
}
