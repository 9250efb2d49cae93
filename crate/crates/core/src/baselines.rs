//! Non-learning reference controllers: a self-organizing threshold rule
//! (SOTL) and fixed phase durations.

use serde::{Deserialize, Serialize};

use crate::env::{lane_colors_for, unmap_action, EnvSetup, SmdpEnv};
use crate::error::{Error, Result};
use crate::signal::{ControllerStep, PhasePlan, SignalColor, SignalController};
use crate::sim::TrafficSim;

/// Parameters of the platoon SOTL rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SotlConfig {
    /// Accumulator threshold (vehicle-seconds of waiting on red approaches).
    pub theta_veh_s: f64,
    /// Minimum green before a demand-driven switch (s).
    pub min_green_s: f64,
    /// Detection distance upstream of the stop line for red approaches (m).
    pub detect_m: f64,
    /// Distance defining "close to the line" on the green approach (m).
    pub platoon_m: f64,
    /// Platoons smaller than this must not be cut in half.
    pub platoon_max_veh: u32,
}

impl Default for SotlConfig {
    fn default() -> Self {
        SotlConfig {
            theta_veh_s: 50.0,
            min_green_s: 5.0,
            detect_m: 80.0,
            platoon_m: 25.0,
            platoon_max_veh: 3,
        }
    }
}

impl SotlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_veh_s > 0.0) {
            return Err(Error::config("SOTL threshold must be positive"));
        }
        if !(self.min_green_s > 0.0 && self.detect_m > 0.0 && self.platoon_m > 0.0) {
            return Err(Error::config("SOTL distances and min green must be positive"));
        }
        if self.platoon_m >= self.detect_m {
            return Err(Error::config(
                "platoon distance must be smaller than the detection distance",
            ));
        }
        if self.platoon_max_veh == 0 {
            return Err(Error::config("platoon size threshold must be positive"));
        }
        Ok(())
    }
}

/// One per-second switching decision. `kappa_veh_s` is the running
/// accumulator (incremented beforehand by the number of vehicles within the
/// detection distance on red approaches), `green_near_veh` the vehicles
/// within the platoon distance on green approaches, and the effective
/// minimum green is the larger of the rule's own minimum and the phase's.
pub fn sotl_decide(
    kappa_veh_s: f64,
    green_near_veh: u32,
    elapsed_green_s: f64,
    phase_min_green_s: f64,
    cfg: &SotlConfig,
) -> bool {
    let min_green = cfg.min_green_s.max(phase_min_green_s);
    let small_platoon_near = green_near_veh > 0 && green_near_veh < cfg.platoon_max_veh;
    kappa_veh_s >= cfg.theta_veh_s && elapsed_green_s >= min_green && !small_platoon_near
}

/// Closed-loop SOTL run over one episode. Each phase opens at its maximum
/// green (the hard cutoff); once per second of green the rule may cut the
/// green short. Phase order stays cyclic and re-service insertion is off.
pub struct SotlController {
    cfg: SotlConfig,
    sim: TrafficSim,
    controller: SignalController,
    lane_movements: Vec<Vec<usize>>,
    episode_steps: u64,
    steps: u64,
    steps_per_second: u64,
    kappa: f64,
    green_elapsed_steps: u64,
    done: bool,
    /// `(phase, green seconds)` for every completed regular green.
    green_log: Vec<(usize, f64)>,
}

impl SotlController {
    pub fn new(setup: &EnvSetup, cfg: SotlConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        setup.plan.validate()?;
        let dt = setup.sim.dt_s;
        let steps_per_second = (1.0 / dt).round() as u64;
        if steps_per_second == 0 || (steps_per_second as f64 * dt - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "per-second switching requires a step size dividing one second",
            ));
        }
        let episode_steps = (setup.episode_s / dt).round() as u64;
        if episode_steps == 0 {
            return Err(Error::config("episode shorter than one simulation step"));
        }
        let sim = TrafficSim::new(setup.sim.clone(), seed)?;
        let controller = SignalController::new(setup.plan.clone(), dt, false)?;
        let lane_movements = setup.sim.lanes.iter().map(|l| l.movements.clone()).collect();
        Ok(SotlController {
            cfg,
            sim,
            controller,
            lane_movements,
            episode_steps,
            steps: 0,
            steps_per_second,
            kappa: 0.0,
            green_elapsed_steps: 0,
            done: false,
            green_log: Vec::new(),
        })
    }

    fn count_red_within_detect(&self) -> u32 {
        self.count_by_color(SignalColor::Red, self.cfg.detect_m)
    }

    fn count_green_near(&self) -> u32 {
        self.count_by_color(SignalColor::Green, self.cfg.platoon_m)
    }

    fn count_by_color(&self, color: SignalColor, within_m: f64) -> u32 {
        let movements = self.sim.movements();
        let mut n = 0;
        for lane in 0..self.sim.lane_count() {
            for v in self.sim.vehicles(lane) {
                if v.position_m >= 0.0
                    && v.position_m <= within_m
                    && self.controller.movement_color(&movements[v.movement_idx]) == color
                {
                    n += 1;
                }
            }
        }
        n
    }

    /// Run the whole episode.
    pub fn run(&mut self) -> Result<()> {
        while !self.done {
            self.step()?;
        }
        Ok(())
    }

    fn step(&mut self) -> Result<()> {
        if self.done {
            return Err(Error::domain("episode is over"));
        }
        if let Some(idx) = self.controller.awaiting_decision() {
            let max = self.controller.plan().phases[idx].max_green_s;
            self.controller.apply_duration(max)?;
            self.kappa = 0.0;
            self.green_elapsed_steps = 0;
        }

        let active = self.controller.active().expect("controller is running");
        let was_green = active.color == SignalColor::Green;
        let phase_idx = match active.phase {
            crate::signal::PhaseRef::Regular(i) => Some(i),
            crate::signal::PhaseRef::ReService => None,
        };

        let colors = lane_colors_for(&self.controller, &self.lane_movements, self.sim.movements());
        self.sim.step(&colors);
        self.steps += 1;
        if was_green {
            self.green_elapsed_steps += 1;
        }
        if self.steps >= self.episode_steps {
            if was_green {
                if let Some(i) = phase_idx {
                    self.green_log
                        .push((i, self.green_elapsed_steps as f64 * self.sim.dt_s()));
                }
            }
            self.done = true;
            return Ok(());
        }

        match self.controller.advance() {
            ControllerStep::Running => {
                let still_green = self
                    .controller
                    .active()
                    .map(|a| a.color == SignalColor::Green)
                    .unwrap_or(false);
                if was_green && !still_green {
                    // Green expired at its hard cutoff this step.
                    if let Some(i) = phase_idx {
                        self.green_log
                            .push((i, self.green_elapsed_steps as f64 * self.sim.dt_s()));
                    }
                } else if still_green && self.green_elapsed_steps % self.steps_per_second == 0 {
                    self.kappa += f64::from(self.count_red_within_detect());
                    let near = self.count_green_near();
                    let elapsed_s = self.green_elapsed_steps as f64 * self.sim.dt_s();
                    let phase_min = phase_idx
                        .map(|i| self.controller.plan().phases[i].min_green_s)
                        .unwrap_or(0.0);
                    if sotl_decide(self.kappa, near, elapsed_s, phase_min, &self.cfg) {
                        self.controller.cut_green()?;
                        self.kappa = 0.0;
                        if let Some(i) = phase_idx {
                            self.green_log.push((i, elapsed_s));
                        }
                    }
                }
            }
            ControllerStep::DecisionPoint => {}
            ControllerStep::ReServiceCheckpoint => {
                unreachable!("re-service insertion is disabled for baselines")
            }
        }
        Ok(())
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn sim(&self) -> &TrafficSim {
        &self.sim
    }

    pub fn controller(&self) -> &SignalController {
        &self.controller
    }

    pub fn green_log(&self) -> &[(usize, f64)] {
        &self.green_log
    }
}

/// Constant per-phase green durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedTimePlan {
    pub durations_s: Vec<f64>,
}

impl FixedTimePlan {
    /// Every phase at its midpoint duration.
    pub fn midpoint(plan: &PhasePlan) -> Self {
        FixedTimePlan {
            durations_s: plan
                .phases
                .iter()
                .map(|p| 0.5 * (p.min_green_s + p.max_green_s))
                .collect(),
        }
    }

    pub fn validate(&self, plan: &PhasePlan) -> Result<()> {
        if self.durations_s.len() != plan.phases.len() {
            return Err(Error::config(format!(
                "fixed plan has {} durations for {} phases",
                self.durations_s.len(),
                plan.phases.len()
            )));
        }
        for (i, (&d, p)) in self.durations_s.iter().zip(&plan.phases).enumerate() {
            if !d.is_finite() || d < p.min_green_s || d > p.max_green_s {
                return Err(Error::config(format!(
                    "fixed duration {d} s for phase {i} outside [{}, {}]",
                    p.min_green_s, p.max_green_s
                )));
            }
        }
        Ok(())
    }
}

/// Drive an environment episode with constant durations.
pub fn run_fixed_time(env: &mut SmdpEnv, fixed: &FixedTimePlan) -> Result<()> {
    fixed.validate(env.plan())?;
    while let Some(idx) = env.pending_phase() {
        let phase = &env.plan().phases[idx];
        let a = unmap_action(fixed.durations_s[idx], phase.min_green_s, phase.max_green_s);
        env.step(a)?;
    }
    Ok(())
}
