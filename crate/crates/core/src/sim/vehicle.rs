//! Vehicle state for the car-following model.

/// Number of past positions kept per vehicle. The follower rule looks up the
/// leader's position one reaction lag in the past; the capacity bounds how
/// large that lag may be relative to the simulation step.
pub(crate) const HIST_CAP: usize = 16;

/// Ring buffer of a vehicle's positions at step boundaries, used to evaluate
/// the leader's trajectory a fixed time lag in the past. Positions between
/// stored samples are linearly interpolated, which is exact because each
/// vehicle moves at constant speed within a step.
#[derive(Debug, Clone)]
pub(crate) struct PositionHistory {
    ring: [f64; HIST_CAP],
    newest_step: u64,
    len: usize,
}

impl PositionHistory {
    pub fn new(step: u64, position_m: f64) -> Self {
        let mut ring = [0.0; HIST_CAP];
        ring[(step % HIST_CAP as u64) as usize] = position_m;
        PositionHistory {
            ring,
            newest_step: step,
            len: 1,
        }
    }

    pub fn push(&mut self, step: u64, position_m: f64) {
        debug_assert_eq!(step, self.newest_step + 1, "history pushed out of order");
        self.ring[(step % HIST_CAP as u64) as usize] = position_m;
        self.newest_step = step;
        self.len = (self.len + 1).min(HIST_CAP);
    }

    fn at_step(&self, step: u64) -> f64 {
        self.ring[(step % HIST_CAP as u64) as usize]
    }

    /// Position at a fractional step index. Queries outside the stored window
    /// clamp to the oldest/newest sample; before a vehicle existed it is
    /// treated as standing at its first recorded position.
    pub fn position_at(&self, step_query: f64) -> f64 {
        let oldest = self.newest_step + 1 - self.len as u64;
        if step_query <= oldest as f64 {
            return self.at_step(oldest);
        }
        if step_query >= self.newest_step as f64 {
            return self.at_step(self.newest_step);
        }
        let lo = step_query.floor() as u64;
        let frac = step_query - lo as f64;
        let a = self.at_step(lo);
        let b = self.at_step(lo + 1);
        a + (b - a) * frac
    }
}

/// One simulated vehicle. Positions are metres upstream of the stop line and
/// decrease as the vehicle advances; a negative position means it has crossed.
#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: u64,
    pub movement_idx: usize,
    pub position_m: f64,
    pub speed_ms: f64,
    /// Time the vehicle was generated by demand (it may have waited in the
    /// entry buffer before physically appearing on the lane).
    pub entry_s: f64,
    /// Time the front crossed the stop line, once it has.
    pub exit_s: Option<f64>,
    pub stops: u32,
    pub stopped: bool,
    pub(crate) hist: PositionHistory,
}

/// A vehicle generated by demand but not yet admitted to its lane because the
/// entry is blocked by queue spillback. Waiting time here counts as delay.
#[derive(Debug, Clone)]
pub(crate) struct BufferedVehicle {
    pub id: u64,
    pub movement_idx: usize,
    pub entry_s: f64,
}

/// Trip bookkeeping handed to the metrics layer. `exit_s` is `None` for
/// vehicles still in the network when the episode ended.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrip {
    pub vehicle_id: u64,
    pub movement_idx: usize,
    pub entry_s: f64,
    pub exit_s: Option<f64>,
    /// Length of the route from lane entry to the stop line.
    pub route_m: f64,
    /// Distance actually covered towards the stop line (equals `route_m` for
    /// completed trips, 0 for vehicles still in the entry buffer).
    pub traveled_m: f64,
    pub stops: u32,
}
