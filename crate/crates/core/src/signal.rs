//! Signal phase sequencing with support for a mid-cycle re-service insertion.
//!
//! The controller walks a fixed sequence of regular phases. Every green is
//! followed by a fixed-length yellow. Between the yellow that precedes the
//! configured re-service slot and that slot's green, the controller pauses at
//! a *checkpoint* where the caller may insert one extra green for the
//! protected movement (with its own yellow) before the sequence resumes.
//!
//! Time is discretised to the simulation step: requested durations are
//! quantised to the nearest step, and the controller advances one step at a
//! time in lockstep with the simulator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque label of a traffic movement (one origin-destination stream).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Movement(pub String);

impl Movement {
    pub fn new(s: impl Into<String>) -> Self {
        Movement(s.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Movement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// One regular phase: the movements it serves and its green-time bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub movements: Vec<Movement>,
    pub min_green_s: f64,
    pub max_green_s: f64,
}

/// Where and how the temporary extra green may be inserted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReServiceSlot {
    /// The movement whose queue forecast drives the insertion.
    pub protected: Movement,
    /// Movements shown green during the inserted phase (must include the
    /// protected movement; bundled scenarios serve only it).
    pub movements: Vec<Movement>,
    /// Index of the regular phase before which the insertion happens.
    pub slot: usize,
    pub min_green_s: f64,
    pub max_green_s: f64,
}

/// Full signal plan for an intersection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub phases: Vec<Phase>,
    pub yellow_s: f64,
    pub reservice: Option<ReServiceSlot>,
}

impl PhasePlan {
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::config("phase plan needs at least one phase"));
        }
        if !(self.yellow_s > 0.0) {
            return Err(Error::config("yellow duration must be positive"));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if p.movements.is_empty() {
                return Err(Error::config(format!("phase {i} serves no movements")));
            }
            let mut seen = std::collections::HashSet::new();
            for m in &p.movements {
                if !seen.insert(m) {
                    return Err(Error::config(format!(
                        "phase {i} lists movement {m} twice"
                    )));
                }
            }
            if !(p.min_green_s > 0.0 && p.min_green_s <= p.max_green_s) {
                return Err(Error::config(format!(
                    "phase {i} green bounds must satisfy 0 < min <= max"
                )));
            }
        }
        if let Some(rs) = &self.reservice {
            if rs.slot >= self.phases.len() {
                return Err(Error::config(format!(
                    "re-service slot {} out of range (plan has {} phases)",
                    rs.slot,
                    self.phases.len()
                )));
            }
            if !rs.movements.contains(&rs.protected) {
                return Err(Error::config(
                    "re-service phase must serve the protected movement",
                ));
            }
            if !(rs.min_green_s > 0.0 && rs.min_green_s <= rs.max_green_s) {
                return Err(Error::config(
                    "re-service green bounds must satisfy 0 < min <= max",
                ));
            }
            let served: Vec<usize> = self
                .phases
                .iter()
                .enumerate()
                .filter(|(_, p)| p.movements.contains(&rs.protected))
                .map(|(i, _)| i)
                .collect();
            if served.len() != 1 {
                return Err(Error::config(format!(
                    "protected movement {} must appear in exactly one regular phase, found {}",
                    rs.protected,
                    served.len()
                )));
            }
            if served[0] == rs.slot {
                return Err(Error::config(
                    "re-service slot must differ from the protected movement's regular phase",
                ));
            }
        }
        Ok(())
    }

    /// Index of the regular phase serving the protected movement.
    pub fn protected_phase_index(&self) -> Option<usize> {
        let rs = self.reservice.as_ref()?;
        self.phases
            .iter()
            .position(|p| p.movements.contains(&rs.protected))
    }

    /// Lower bound on the time from the re-service checkpoint to the start of
    /// the protected movement's next regular green: minimum green plus yellow
    /// of the slot phase and every phase between it and the protected one.
    pub fn min_gap_slot_to_protected_s(&self) -> Option<f64> {
        let rs = self.reservice.as_ref()?;
        let protected = self.protected_phase_index()?;
        let n = self.phases.len();
        let mut gap = 0.0;
        let mut i = rs.slot;
        while i != protected {
            gap += self.phases[i].min_green_s + self.yellow_s;
            i = (i + 1) % n;
        }
        Some(gap)
    }
}

/// Signal head colour shown to a movement or lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalColor {
    Green,
    Yellow,
    Red,
}

/// Identifies which green/yellow interval is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseRef {
    Regular(usize),
    ReService,
}

/// What the controller is currently showing: `phase` movements get `color`
/// (green or yellow), everything else is red.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveSignal {
    pub phase: PhaseRef,
    pub color: SignalColor,
}

/// Result of advancing the controller by one simulation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerStep {
    /// Mid-interval; keep stepping the simulator.
    Running,
    /// A regular phase is about to start and needs a duration.
    DecisionPoint,
    /// The yellow before the re-service slot just ended; the caller must
    /// insert or skip the extra green before the sequence resumes.
    ReServiceCheckpoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    AwaitingDecision,
    AtReServiceCheckpoint,
    Running {
        phase: PhaseRef,
        color: SignalColor,
        steps_left: u32,
    },
}

/// Step-driven phase sequencer. See the module docs for the protocol.
#[derive(Debug, Clone)]
pub struct SignalController {
    plan: PhasePlan,
    dt_s: f64,
    yellow_steps: u32,
    reservice_enabled: bool,
    mode: Mode,
    /// Regular phase that runs next (the one a pending decision applies to).
    next_phase: usize,
    /// Cycle index, starting at 0; increments when the sequence wraps.
    cycle: u64,
    reserviced_cycles: u64,
    clipped_requests: u64,
}

impl SignalController {
    pub fn new(plan: PhasePlan, dt_s: f64, reservice_enabled: bool) -> Result<Self> {
        plan.validate()?;
        if !(dt_s > 0.0) {
            return Err(Error::config("simulation step must be positive"));
        }
        let yellow_steps = (plan.yellow_s / dt_s).round() as u32;
        if yellow_steps == 0 {
            return Err(Error::config("yellow shorter than one simulation step"));
        }
        if reservice_enabled && plan.reservice.is_none() {
            return Err(Error::config(
                "re-service requested but the plan has no re-service slot",
            ));
        }
        Ok(SignalController {
            plan,
            dt_s,
            yellow_steps,
            reservice_enabled,
            mode: Mode::AwaitingDecision,
            next_phase: 0,
            cycle: 0,
            reserviced_cycles: 0,
            clipped_requests: 0,
        })
    }

    pub fn plan(&self) -> &PhasePlan {
        &self.plan
    }

    /// Phase index awaiting a duration, if the controller sits at a decision
    /// point.
    pub fn awaiting_decision(&self) -> Option<usize> {
        match self.mode {
            Mode::AwaitingDecision => Some(self.next_phase),
            _ => None,
        }
    }

    pub fn at_reservice_checkpoint(&self) -> bool {
        self.mode == Mode::AtReServiceCheckpoint
    }

    /// The regular phase that will run next (defined in every mode).
    pub fn next_phase(&self) -> usize {
        self.next_phase
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Number of cycles begun so far (the current one included).
    pub fn cycles_started(&self) -> u64 {
        self.cycle + 1
    }

    pub fn reserviced_cycles(&self) -> u64 {
        self.reserviced_cycles
    }

    pub fn clipped_requests(&self) -> u64 {
        self.clipped_requests
    }

    /// What is currently showing. Only meaningful while running; at the
    /// instantaneous decision/checkpoint boundaries nothing is displayed and
    /// the simulator must not be stepped.
    pub fn active(&self) -> Option<ActiveSignal> {
        match self.mode {
            Mode::Running { phase, color, .. } => Some(ActiveSignal { phase, color }),
            _ => None,
        }
    }

    /// Colour currently shown to a movement (red at boundaries).
    pub fn movement_color(&self, m: &Movement) -> SignalColor {
        match self.active() {
            Some(ActiveSignal { phase, color }) => {
                let served = match phase {
                    PhaseRef::Regular(i) => self.plan.phases[i].movements.contains(m),
                    PhaseRef::ReService => self
                        .plan
                        .reservice
                        .as_ref()
                        .map(|rs| rs.movements.contains(m))
                        .unwrap_or(false),
                };
                if served {
                    color
                } else {
                    SignalColor::Red
                }
            }
            None => SignalColor::Red,
        }
    }

    fn quantize(&self, seconds: f64) -> u32 {
        ((seconds / self.dt_s).round() as u32).max(1)
    }

    /// Start the pending regular phase with the given green duration.
    /// Out-of-bounds requests are clipped to the phase limits (and counted);
    /// the executed, step-quantised duration is returned.
    pub fn apply_duration(&mut self, duration_s: f64) -> Result<f64> {
        let phase_idx = self.awaiting_decision().ok_or_else(|| {
            Error::Signal("apply_duration called outside a decision point".into())
        })?;
        let phase = &self.plan.phases[phase_idx];
        let clipped = duration_s.clamp(phase.min_green_s, phase.max_green_s);
        if (clipped - duration_s).abs() > 1e-9 {
            log::warn!(
                "requested green {duration_s:.2}s for phase {phase_idx} clipped to {clipped:.2}s"
            );
            self.clipped_requests += 1;
        }
        let steps = self.quantize(clipped);
        self.mode = Mode::Running {
            phase: PhaseRef::Regular(phase_idx),
            color: SignalColor::Green,
            steps_left: steps,
        };
        Ok(steps as f64 * self.dt_s)
    }

    /// Insert the temporary protected green at the checkpoint.
    pub fn insert_reservice(&mut self, duration_s: f64) -> Result<f64> {
        if !self.at_reservice_checkpoint() {
            return Err(Error::Signal(
                "insert_reservice called away from the re-service checkpoint".into(),
            ));
        }
        let rs = self
            .plan
            .reservice
            .as_ref()
            .expect("checkpoint implies a re-service slot");
        let clipped = duration_s.clamp(rs.min_green_s, rs.max_green_s);
        if (clipped - duration_s).abs() > 1e-9 {
            log::warn!("requested re-service green {duration_s:.2}s clipped to {clipped:.2}s");
            self.clipped_requests += 1;
        }
        let steps = self.quantize(clipped);
        self.reserviced_cycles += 1;
        self.mode = Mode::Running {
            phase: PhaseRef::ReService,
            color: SignalColor::Green,
            steps_left: steps,
        };
        Ok(steps as f64 * self.dt_s)
    }

    /// Decline the insertion; the slot phase's decision point follows at the
    /// same instant.
    pub fn skip_reservice(&mut self) -> Result<()> {
        if !self.at_reservice_checkpoint() {
            return Err(Error::Signal(
                "skip_reservice called away from the re-service checkpoint".into(),
            ));
        }
        self.mode = Mode::AwaitingDecision;
        Ok(())
    }

    /// End the running green now; yellow starts at the next step. Used by
    /// rule-based controllers that decide second by second.
    pub fn cut_green(&mut self) -> Result<()> {
        match self.mode {
            Mode::Running {
                phase,
                color: SignalColor::Green,
                ..
            } => {
                self.mode = Mode::Running {
                    phase,
                    color: SignalColor::Yellow,
                    steps_left: self.yellow_steps,
                };
                Ok(())
            }
            _ => Err(Error::Signal("cut_green called outside a running green".into())),
        }
    }

    /// Advance one simulation step. Must only be called while running (i.e.
    /// after the pending decision/checkpoint has been resolved).
    pub fn advance(&mut self) -> ControllerStep {
        let (phase, color, steps_left) = match self.mode {
            Mode::Running {
                phase,
                color,
                steps_left,
            } => (phase, color, steps_left),
            _ => panic!("SignalController::advance called at an unresolved boundary"),
        };
        let steps_left = steps_left - 1;
        if steps_left > 0 {
            self.mode = Mode::Running {
                phase,
                color,
                steps_left,
            };
            return ControllerStep::Running;
        }
        match color {
            SignalColor::Green => {
                self.mode = Mode::Running {
                    phase,
                    color: SignalColor::Yellow,
                    steps_left: self.yellow_steps,
                };
                ControllerStep::Running
            }
            SignalColor::Yellow => match phase {
                PhaseRef::Regular(p) => {
                    let mut next = p + 1;
                    if next == self.plan.phases.len() {
                        next = 0;
                        self.cycle += 1;
                    }
                    self.next_phase = next;
                    let at_slot = self
                        .plan
                        .reservice
                        .as_ref()
                        .map(|rs| rs.slot == next)
                        .unwrap_or(false);
                    if self.reservice_enabled && at_slot {
                        self.mode = Mode::AtReServiceCheckpoint;
                        ControllerStep::ReServiceCheckpoint
                    } else {
                        self.mode = Mode::AwaitingDecision;
                        ControllerStep::DecisionPoint
                    }
                }
                PhaseRef::ReService => {
                    self.mode = Mode::AwaitingDecision;
                    ControllerStep::DecisionPoint
                }
            },
            SignalColor::Red => unreachable!("red is never an active interval"),
        }
    }
}
