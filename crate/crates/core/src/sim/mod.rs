//! Mesoscopic single-intersection traffic simulator.
//!
//! Each lane carries point vehicles following a Newell-style rule on the
//! triangular fundamental diagram: a vehicle advances at free-flow speed
//! unless held back by its leader's trajectory shifted by the reaction lag
//! and the jam spacing, or by the stop line when its lane shows red or
//! yellow. This reproduces saturation discharge flow and the upstream
//! queueing/discharge waves of the diagram by construction.
//!
//! Demand enters as Poisson arrivals per movement. When queue spillback
//! blocks a lane entry, generated vehicles wait in a virtual buffer and the
//! wait counts towards their delay.

mod vehicle;

pub use vehicle::{RawTrip, Vehicle};

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::fd::FundamentalDiagram;
use crate::signal::{Movement, SignalColor};
use vehicle::{BufferedVehicle, PositionHistory, HIST_CAP};

/// Position past the stop line (in metres downstream) beyond which a crossed
/// vehicle can no longer constrain followers and is finalised.
const OUTBOUND_DROP_M: f64 = -60.0;

/// Detector events older than this are discarded.
const DETECTOR_RETENTION_S: f64 = 900.0;

/// Speed below which a vehicle is considered to have stopped, and above which
/// a stopped vehicle is considered moving again. The gap between the two
/// avoids double-counting stops while a queue creeps forward.
const STOP_ENTER_MS: f64 = 0.1;
const STOP_LEAVE_MS: f64 = 1.0;

/// One piecewise-constant demand interval for a movement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub flow_veh_h: f64,
}

/// Static description of one lane.
#[derive(Debug, Clone)]
pub struct SimLaneConfig {
    pub length_m: f64,
    /// Indices (into the movement list) of the movements this lane serves.
    pub movements: Vec<usize>,
    /// Distance of the arrival detector upstream of the stop line.
    pub detector_m: f64,
}

/// Everything the simulator needs to run one intersection.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub fd: FundamentalDiagram,
    pub dt_s: f64,
    /// Measurement window for queues and per-lane vehicle counts.
    pub queue_window_m: f64,
    pub lanes: Vec<SimLaneConfig>,
    pub movements: Vec<Movement>,
    /// Demand per movement index; segments must be sorted and non-negative.
    pub demand: Vec<Vec<FlowSegment>>,
}

#[derive(Debug, Clone)]
struct Lane {
    length_m: f64,
    detector_m: f64,
    vehicles: VecDeque<Vehicle>,
    buffer: VecDeque<BufferedVehicle>,
    /// (time, speed) of vehicles crossing the detector, oldest first.
    detector_events: VecDeque<(f64, f64)>,
}

/// Aggregate vehicle accounting for conservation checks and throughput.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimCounts {
    pub injected: u64,
    pub completed: u64,
    pub on_lane: u64,
    pub buffered: u64,
}

pub struct TrafficSim {
    fd: FundamentalDiagram,
    dt_s: f64,
    queue_window_m: f64,
    vf_ms: f64,
    jam_m: f64,
    /// Reaction lag expressed in (fractional) simulation steps.
    lag_steps: f64,
    lanes: Vec<Lane>,
    lane_cfg: Vec<SimLaneConfig>,
    movements: Vec<Movement>,
    lane_of_movement: Vec<usize>,
    demand: Vec<Vec<FlowSegment>>,
    rng: ChaCha8Rng,
    step: u64,
    next_id: u64,
    injected: u64,
    finished: Vec<RawTrip>,
}

impl TrafficSim {
    pub fn new(cfg: SimConfig, seed: u64) -> Result<Self> {
        cfg.fd.validate()?;
        if !(cfg.dt_s > 0.0) {
            return Err(Error::config("simulation step must be positive"));
        }
        let tau = cfg.fd.newell_lag_s();
        if tau < cfg.dt_s {
            return Err(Error::config(format!(
                "reaction lag {tau:.3}s shorter than the simulation step {}s",
                cfg.dt_s
            )));
        }
        if tau > (HIST_CAP - 2) as f64 * cfg.dt_s {
            return Err(Error::config(format!(
                "reaction lag {tau:.3}s exceeds the trajectory history window"
            )));
        }
        if cfg.lanes.is_empty() {
            return Err(Error::config("at least one lane required"));
        }
        if !(cfg.queue_window_m > 0.0) {
            return Err(Error::config("queue measurement window must be positive"));
        }
        let mut lane_of_movement = vec![usize::MAX; cfg.movements.len()];
        for (li, lane) in cfg.lanes.iter().enumerate() {
            if !(lane.length_m > 0.0) {
                return Err(Error::config(format!("lane {li} length must be positive")));
            }
            if !(lane.detector_m > 0.0 && lane.detector_m < lane.length_m) {
                return Err(Error::config(format!(
                    "lane {li} detector must sit strictly inside the lane"
                )));
            }
            for &mi in &lane.movements {
                if mi >= cfg.movements.len() {
                    return Err(Error::config(format!("lane {li} references unknown movement")));
                }
                if lane_of_movement[mi] != usize::MAX {
                    return Err(Error::config(format!(
                        "movement {} assigned to more than one lane",
                        cfg.movements[mi]
                    )));
                }
                lane_of_movement[mi] = li;
            }
        }
        for (mi, &li) in lane_of_movement.iter().enumerate() {
            if li == usize::MAX {
                return Err(Error::config(format!(
                    "movement {} not assigned to any lane",
                    cfg.movements[mi]
                )));
            }
        }
        if cfg.demand.len() != cfg.movements.len() {
            return Err(Error::config("demand table must cover every movement"));
        }
        for (mi, segs) in cfg.demand.iter().enumerate() {
            for s in segs {
                if !(s.flow_veh_h >= 0.0) || !(s.end_s > s.start_s) {
                    return Err(Error::config(format!(
                        "invalid demand segment for movement {}",
                        cfg.movements[mi]
                    )));
                }
            }
        }

        let lanes = cfg
            .lanes
            .iter()
            .map(|lc| Lane {
                length_m: lc.length_m,
                detector_m: lc.detector_m,
                vehicles: VecDeque::new(),
                buffer: VecDeque::new(),
                detector_events: VecDeque::new(),
            })
            .collect();

        Ok(TrafficSim {
            vf_ms: cfg.fd.free_flow_speed_ms(),
            jam_m: cfg.fd.jam_spacing_m(),
            lag_steps: cfg.fd.newell_lag_s() / cfg.dt_s,
            fd: cfg.fd,
            dt_s: cfg.dt_s,
            queue_window_m: cfg.queue_window_m,
            lanes,
            lane_cfg: cfg.lanes,
            movements: cfg.movements,
            lane_of_movement,
            demand: cfg.demand,
            rng: ChaCha8Rng::seed_from_u64(seed),
            step: 0,
            next_id: 0,
            injected: 0,
            finished: Vec::new(),
        })
    }

    pub fn now_s(&self) -> f64 {
        self.step as f64 * self.dt_s
    }

    pub fn dt_s(&self) -> f64 {
        self.dt_s
    }

    pub fn fd(&self) -> &FundamentalDiagram {
        &self.fd
    }

    pub fn free_flow_speed_ms(&self) -> f64 {
        self.vf_ms
    }

    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    pub fn lane_length_m(&self, lane: usize) -> f64 {
        self.lanes[lane].length_m
    }

    pub fn movements(&self) -> &[Movement] {
        &self.movements
    }

    pub fn lane_of_movement(&self, movement_idx: usize) -> usize {
        self.lane_of_movement[movement_idx]
    }

    pub fn vehicles(&self, lane: usize) -> impl Iterator<Item = &Vehicle> {
        self.lanes[lane].vehicles.iter()
    }

    /// Advance the whole intersection by one step under the given per-lane
    /// signal colours.
    pub fn step(&mut self, colors: &[SignalColor]) {
        debug_assert_eq!(colors.len(), self.lanes.len());
        let t = self.now_s();
        let t_next = (self.step + 1) as f64 * self.dt_s;
        // The follower rule needs the leader's position at t_next - lag,
        // expressed in fractional step units.
        let lag_query = (self.step + 1) as f64 - self.lag_steps;

        for (lane, &color) in self.lanes.iter_mut().zip(colors.iter()) {
            let green = color == SignalColor::Green;
            Self::update_lane(
                lane,
                green,
                t,
                t_next,
                lag_query,
                self.step + 1,
                self.dt_s,
                self.vf_ms,
                self.jam_m,
                &mut self.finished,
            );
        }

        self.generate_demand(t, t_next);
        self.admit_buffered();
        self.step += 1;
    }

    #[allow(clippy::too_many_arguments)]
    fn update_lane(
        lane: &mut Lane,
        green: bool,
        t: f64,
        t_next: f64,
        lag_query: f64,
        new_step: u64,
        dt: f64,
        vf: f64,
        jam: f64,
        finished: &mut Vec<RawTrip>,
    ) {
        let mut stop_line_pending = !green;
        for i in 0..lane.vehicles.len() {
            let leader_bound = if i == 0 {
                f64::NEG_INFINITY
            } else {
                lane.vehicles[i - 1].hist.position_at(lag_query) + jam
            };
            let old_pos = lane.vehicles[i].position_m;
            let mut bound = leader_bound;
            if stop_line_pending && old_pos >= 0.0 {
                // First vehicle still upstream of the line holds at it.
                bound = bound.max(0.0);
                stop_line_pending = false;
            }
            let free = old_pos - vf * dt;
            let new_pos = free.max(bound).min(old_pos);
            let speed = (old_pos - new_pos) / dt;

            let v = &mut lane.vehicles[i];
            if old_pos >= 0.0 && new_pos < 0.0 {
                let frac = old_pos / (old_pos - new_pos);
                v.exit_s = Some(t + frac * dt);
            }
            if old_pos > lane.detector_m && new_pos <= lane.detector_m {
                let frac = (old_pos - lane.detector_m) / (old_pos - new_pos).max(1e-12);
                lane.detector_events.push_back((t + frac * dt, speed));
            }
            if v.stopped {
                if speed > STOP_LEAVE_MS {
                    v.stopped = false;
                }
            } else if speed < STOP_ENTER_MS {
                v.stopped = true;
                v.stops += 1;
            }
            v.position_m = new_pos;
            v.speed_ms = speed;
            v.hist.push(new_step, new_pos);
        }

        while let Some(front) = lane.vehicles.front() {
            if front.position_m < OUTBOUND_DROP_M {
                let v = lane.vehicles.pop_front().expect("front exists");
                finished.push(RawTrip {
                    vehicle_id: v.id,
                    movement_idx: v.movement_idx,
                    entry_s: v.entry_s,
                    exit_s: v.exit_s,
                    route_m: lane.length_m,
                    traveled_m: lane.length_m,
                    stops: v.stops,
                });
            } else {
                break;
            }
        }

        while let Some(&(et, _)) = lane.detector_events.front() {
            if et < t_next - DETECTOR_RETENTION_S {
                lane.detector_events.pop_front();
            } else {
                break;
            }
        }
    }

    fn flow_at(&self, movement_idx: usize, t: f64) -> f64 {
        for seg in &self.demand[movement_idx] {
            if t >= seg.start_s && t < seg.end_s {
                return seg.flow_veh_h;
            }
        }
        0.0
    }

    fn generate_demand(&mut self, t: f64, t_next: f64) {
        for mi in 0..self.movements.len() {
            let flow = self.flow_at(mi, t);
            if flow <= 0.0 {
                continue;
            }
            let lambda = flow * self.dt_s / 3600.0;
            let n = Poisson::new(lambda)
                .expect("positive rate")
                .sample(&mut self.rng) as u64;
            for _ in 0..n {
                let id = self.next_id;
                self.next_id += 1;
                self.injected += 1;
                self.lanes[self.lane_of_movement[mi]]
                    .buffer
                    .push_back(BufferedVehicle {
                        id,
                        movement_idx: mi,
                        entry_s: t_next,
                    });
            }
        }
    }

    fn admit_buffered(&mut self) {
        let new_step = self.step + 1;
        for lane in &mut self.lanes {
            while !lane.buffer.is_empty() {
                let entry_clear = lane
                    .vehicles
                    .back()
                    .map(|v| v.position_m <= lane.length_m - self.jam_m + 1e-9)
                    .unwrap_or(true);
                if !entry_clear {
                    break;
                }
                let b = lane.buffer.pop_front().expect("front exists");
                lane.vehicles.push_back(Vehicle {
                    id: b.id,
                    movement_idx: b.movement_idx,
                    position_m: lane.length_m,
                    speed_ms: self.vf_ms,
                    entry_s: b.entry_s,
                    exit_s: None,
                    stops: 0,
                    stopped: false,
                    hist: PositionHistory::new(new_step, lane.length_m),
                });
            }
        }
    }

    /// Place a vehicle directly on a lane (scripted experiments and tests).
    /// The position must be upstream of every vehicle already present.
    pub fn spawn_vehicle(&mut self, lane: usize, position_m: f64) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.injected += 1;
        let mi = self.lane_cfg[lane].movements.first().copied().unwrap_or(0);
        let entry_s = self.now_s();
        let step = self.step;
        let vf = self.vf_ms;
        let jam = self.jam_m;
        let l = &mut self.lanes[lane];
        if let Some(back) = l.vehicles.back() {
            assert!(
                position_m >= back.position_m + jam - 1e-9,
                "spawned vehicle would overlap the lane tail"
            );
        }
        l.vehicles.push_back(Vehicle {
            id,
            movement_idx: mi,
            position_m,
            speed_ms: vf,
            entry_s,
            exit_s: None,
            stops: 0,
            stopped: false,
            hist: PositionHistory::new(step, position_m),
        });
        id
    }

    /// Standing-queue extent: distance from the stop line to the upstream
    /// edge of the connected block of stopped vehicles (each stopped vehicle
    /// occupying one jam spacing), clipped to the measurement window.
    ///
    /// The chain starts at the stopped vehicle nearest the stop line and
    /// extends while consecutive stopped vehicles are within twice the jam
    /// spacing, so a discharging front does not disconnect the still-standing
    /// rear.
    pub fn measure_queue_m(&self, lane: usize) -> f64 {
        let mut extent: f64 = 0.0;
        let mut prev: Option<f64> = None;
        for v in &self.lanes[lane].vehicles {
            if v.position_m < 0.0 || !v.stopped {
                continue;
            }
            match prev {
                None => {
                    extent = v.position_m + self.jam_m;
                    prev = Some(v.position_m);
                }
                Some(p) => {
                    if v.position_m - p <= 2.0 * self.jam_m {
                        extent = v.position_m + self.jam_m;
                        prev = Some(v.position_m);
                    } else {
                        break;
                    }
                }
            }
        }
        extent.clamp(0.0, self.queue_window_m)
    }

    /// Arrival flow (veh/h) and density (veh/km) from detector crossings over
    /// the trailing window. Returns (0, 0) when nothing crossed.
    pub fn measure_arrivals(&self, lane: usize, window_s: f64) -> (f64, f64) {
        debug_assert!(window_s > 0.0 && window_s <= DETECTOR_RETENTION_S);
        let cutoff = self.now_s() - window_s;
        let mut n = 0u64;
        let mut speed_sum = 0.0;
        for &(et, sp) in self.lanes[lane].detector_events.iter().rev() {
            if et <= cutoff {
                break;
            }
            n += 1;
            speed_sum += sp;
        }
        if n == 0 {
            return (0.0, 0.0);
        }
        let flow = n as f64 / window_s * 3600.0;
        let mean_speed = speed_sum / n as f64;
        if mean_speed <= 1e-6 {
            // Crawling traffic at the detector: report jam-like density and
            // let the caller clamp into the diagram domain.
            return (flow, self.fd.jam_density_veh_km);
        }
        let density = flow / (mean_speed * 3.6);
        (flow, density)
    }

    /// Stopped and moving vehicle counts within `window_m` of the stop line.
    pub fn counts_within(&self, lane: usize, window_m: f64) -> (u32, u32) {
        let mut stopped = 0;
        let mut moving = 0;
        for v in &self.lanes[lane].vehicles {
            if v.position_m >= 0.0 && v.position_m <= window_m {
                if v.stopped {
                    stopped += 1;
                } else {
                    moving += 1;
                }
            }
        }
        (stopped, moving)
    }

    /// Disjoint vehicle classes: `completed` crossed the stop line (whether
    /// or not the outbound stub has been dropped yet), `on_lane` is still
    /// upstream of it, `buffered` waits for entry room. Always sums to
    /// `injected`.
    pub fn counts(&self) -> SimCounts {
        let mut on_lane = 0u64;
        let mut buffered = 0u64;
        let mut completed = self.finished.len() as u64;
        for lane in &self.lanes {
            buffered += lane.buffer.len() as u64;
            for v in &lane.vehicles {
                if v.exit_s.is_some() {
                    completed += 1;
                } else {
                    on_lane += 1;
                }
            }
        }
        SimCounts {
            injected: self.injected,
            completed,
            on_lane,
            buffered,
        }
    }

    /// Every trip seen so far: finalised ones plus snapshots of vehicles
    /// still on a lane or waiting in an entry buffer.
    pub fn raw_trips(&self) -> Vec<RawTrip> {
        let mut trips = self.finished.clone();
        for (lane, lc) in self.lanes.iter().zip(self.lane_cfg.iter()) {
            for v in &lane.vehicles {
                trips.push(RawTrip {
                    vehicle_id: v.id,
                    movement_idx: v.movement_idx,
                    entry_s: v.entry_s,
                    exit_s: v.exit_s,
                    route_m: lc.length_m,
                    traveled_m: (lc.length_m - v.position_m.max(0.0)).clamp(0.0, lc.length_m),
                    stops: v.stops,
                });
            }
            for b in &lane.buffer {
                trips.push(RawTrip {
                    vehicle_id: b.id,
                    movement_idx: b.movement_idx,
                    entry_s: b.entry_s,
                    exit_s: None,
                    route_m: lc.length_m,
                    traveled_m: 0.0,
                    stops: 0,
                });
            }
        }
        trips.sort_by_key(|t| t.vehicle_id);
        trips
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 0.5;

    fn paper_fd() -> FundamentalDiagram {
        FundamentalDiagram::new(133.3, 50.0, 1550.0).unwrap()
    }

    fn one_lane_sim(flow_veh_h: f64, queue_window_m: f64) -> TrafficSim {
        let fd = paper_fd();
        TrafficSim::new(
            SimConfig {
                fd,
                dt_s: DT,
                queue_window_m,
                lanes: vec![SimLaneConfig {
                    length_m: 600.0,
                    movements: vec![0],
                    detector_m: 300.0,
                }],
                movements: vec![Movement::new("M")],
                demand: vec![vec![FlowSegment {
                    start_s: 0.0,
                    end_s: 1e9,
                    flow_veh_h,
                }]],
            },
            7,
        )
        .unwrap()
    }

    fn run(sim: &mut TrafficSim, color: SignalColor, steps: usize) {
        for _ in 0..steps {
            sim.step(&[color]);
        }
    }

    /// Least-squares slope of y against x.
    fn slope(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, y) in xs.iter().zip(ys.iter()) {
            num += (x - mx) * (y - my);
            den += (x - mx) * (x - mx);
        }
        num / den
    }

    #[test]
    fn free_vehicle_advances_at_free_flow_speed() {
        let mut sim = one_lane_sim(0.0, 250.0);
        sim.spawn_vehicle(0, 100.0);
        run(&mut sim, SignalColor::Green, 2); // 1 s
        let v = sim.vehicles(0).next().unwrap();
        assert!((v.position_m - 91.389).abs() < 1e-3, "pos {}", v.position_m);
        assert!((v.speed_ms - sim.free_flow_speed_ms()).abs() < 1e-12);
    }

    #[test]
    fn vehicle_halts_exactly_at_stop_line_on_red() {
        let mut sim = one_lane_sim(0.0, 250.0);
        sim.spawn_vehicle(0, 50.0);
        run(&mut sim, SignalColor::Red, 40); // 20 s, ample
        let v = sim.vehicles(0).next().unwrap();
        assert_eq!(v.position_m, 0.0);
        assert_eq!(v.speed_ms, 0.0);
        assert!(v.stopped);
        assert_eq!(v.stops, 1);
        assert!(v.exit_s.is_none());
    }

    #[test]
    fn yellow_also_holds_vehicles_at_the_line() {
        let mut sim = one_lane_sim(0.0, 250.0);
        sim.spawn_vehicle(0, 30.0);
        run(&mut sim, SignalColor::Yellow, 30);
        let v = sim.vehicles(0).next().unwrap();
        assert_eq!(v.position_m, 0.0);
    }

    #[test]
    fn standing_queue_spaces_at_jam_spacing() {
        let mut sim = one_lane_sim(0.0, 1000.0);
        let jam = paper_fd().jam_spacing_m();
        for i in 0..10 {
            sim.spawn_vehicle(0, 20.0 + i as f64 * 60.0);
        }
        run(&mut sim, SignalColor::Red, 240); // 2 min: all queue up
        let positions: Vec<f64> = sim.vehicles(0).map(|v| v.position_m).collect();
        for (i, p) in positions.iter().enumerate() {
            assert!(
                (p - i as f64 * jam).abs() < 1e-6,
                "vehicle {i} at {p}, expected {}",
                i as f64 * jam
            );
        }
        let x = sim.measure_queue_m(0);
        assert!((x - 10.0 * jam).abs() < 1e-6, "queue {x}");
        assert!((x - 75.019).abs() < 0.05);
    }

    #[test]
    fn discharge_wave_travels_upstream_at_backward_wave_speed() {
        let fd = paper_fd();
        let jam = fd.jam_spacing_m();
        let mut sim = one_lane_sim(0.0, 1000.0);
        let n = 40;
        for i in 0..n {
            sim.spawn_vehicle(0, i as f64 * jam);
        }
        run(&mut sim, SignalColor::Red, 20); // settle: everyone flagged stopped
        let start_positions: Vec<f64> = sim.vehicles(0).map(|v| v.position_m).collect();

        // Track when each vehicle first moves after the light turns green.
        let mut first_move: Vec<Option<f64>> = vec![None; n];
        let t0 = sim.now_s();
        for _ in 0..2000 {
            sim.step(&[SignalColor::Green]);
            let t = sim.now_s() - t0;
            for v in sim.vehicles(0) {
                let idx = v.id as usize;
                if first_move[idx].is_none() && v.speed_ms > 0.5 {
                    first_move[idx] = Some(t);
                }
            }
            if first_move.iter().all(|m| m.is_some()) {
                break;
            }
        }
        let times: Vec<f64> = first_move.iter().map(|m| m.unwrap()).collect();
        // Skip the head vehicle (it starts instantly) and regress position on
        // start time: the slope is the discharge wave speed.
        let wave = slope(&times[1..], &start_positions[1..]);
        let expect = fd.backward_wave_speed_ms();
        assert!(
            (wave - expect).abs() / expect < 0.05,
            "wave {wave} m/s vs expected {expect} m/s"
        );
    }

    #[test]
    fn queue_discharges_at_saturation_flow() {
        let fd = paper_fd();
        let jam = fd.jam_spacing_m();
        let mut sim = one_lane_sim(0.0, 1000.0);
        let n = 30;
        for i in 0..n {
            sim.spawn_vehicle(0, i as f64 * jam);
        }
        run(&mut sim, SignalColor::Red, 20);
        run(&mut sim, SignalColor::Green, 400); // 200 s of green
        let mut exits: Vec<f64> = sim
            .raw_trips()
            .iter()
            .filter_map(|t| t.exit_s)
            .collect();
        exits.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(exits.len(), n);
        let headways: Vec<f64> = exits.windows(2).map(|w| w[1] - w[0]).collect();
        // Ignore the first few (head starts from the line itself).
        let mean = headways[3..].iter().sum::<f64>() / (headways.len() - 3) as f64;
        let expect = 3600.0 / fd.saturation_flow_veh_h;
        assert!(
            (mean - expect).abs() / expect < 0.02,
            "mean headway {mean}s vs {expect}s"
        );
    }

    #[test]
    fn queue_rear_grows_at_arrival_shock_speed() {
        // Deterministic 600 veh/h arrivals: one vehicle every 6 s at free
        // flow. The rear of the standing queue must advance upstream at
        // q_a / (k_j - k_a).
        let mut sim = one_lane_sim(0.0, 2000.0);
        let mut ts = Vec::new();
        let mut xs = Vec::new();
        let spawn_every = (6.0 / DT) as u64;
        for step in 0..700u64 {
            if step % spawn_every == 0 {
                sim.spawn_vehicle(0, 600.0 - 1e-6);
            }
            sim.step(&[SignalColor::Red]);
            let t = sim.now_s();
            if t > 100.0 {
                let x = sim.measure_queue_m(0);
                if x > 0.0 && x < 380.0 {
                    ts.push(t);
                    xs.push(x);
                }
            }
        }
        let growth = slope(&ts, &xs);
        let k_a = 600.0 / 31.0;
        let expect = 600.0 / (133.3 - k_a) / 3.6;
        assert!(
            (growth - expect).abs() / expect < 0.08,
            "growth {growth} m/s vs {expect} m/s"
        );
    }

    #[test]
    fn poisson_demand_matches_requested_rate() {
        let fd = paper_fd();
        let mut sim = TrafficSim::new(
            SimConfig {
                fd,
                dt_s: 1.0,
                queue_window_m: 250.0,
                lanes: vec![SimLaneConfig {
                    length_m: 600.0,
                    movements: vec![0],
                    detector_m: 300.0,
                }],
                movements: vec![Movement::new("M")],
                demand: vec![vec![FlowSegment {
                    start_s: 0.0,
                    end_s: 1e9,
                    flow_veh_h: 3600.0,
                }]],
            },
            123,
        )
        .unwrap();
        for _ in 0..10_000 {
            sim.step(&[SignalColor::Green]);
        }
        let mean = sim.counts().injected as f64 / 10_000.0;
        assert!((mean - 1.0).abs() < 0.03, "mean arrivals/step {mean}");
    }

    #[test]
    fn zero_demand_produces_no_vehicles() {
        let mut sim = one_lane_sim(0.0, 250.0);
        run(&mut sim, SignalColor::Green, 2000);
        let c = sim.counts();
        assert_eq!(c.injected, 0);
        assert_eq!(c.on_lane, 0);
    }

    #[test]
    fn blocked_entry_buffers_vehicles_and_preserves_entry_times() {
        let fd = paper_fd();
        let mut sim = TrafficSim::new(
            SimConfig {
                fd,
                dt_s: DT,
                queue_window_m: 250.0,
                lanes: vec![SimLaneConfig {
                    length_m: 30.0, // room for about four stopped vehicles
                    movements: vec![0],
                    detector_m: 15.0,
                }],
                movements: vec![Movement::new("M")],
                demand: vec![vec![FlowSegment {
                    start_s: 0.0,
                    end_s: 300.0,
                    flow_veh_h: 1200.0,
                }]],
            },
            5,
        )
        .unwrap();
        run(&mut sim, SignalColor::Red, 600); // 300 s of heavy demand into red
        let c = sim.counts();
        assert!(c.buffered > 0, "expected spillback into the entry buffer");
        assert_eq!(c.injected, c.on_lane + c.buffered);
        // Buffered trips keep their generation time and show zero progress.
        let trips = sim.raw_trips();
        let buffered: Vec<_> = trips.iter().filter(|t| t.traveled_m == 0.0).collect();
        assert!(!buffered.is_empty());
        assert!(buffered.iter().all(|t| t.exit_s.is_none() && t.entry_s < 300.0));
    }

    #[test]
    fn conservation_and_kinematic_bounds_hold_under_random_signals() {
        let mut sim = one_lane_sim(900.0, 250.0);
        let jam = paper_fd().jam_spacing_m();
        let vf = sim.free_flow_speed_ms();
        let mut color = SignalColor::Green;
        for step in 0..4000u64 {
            if step % 80 == 0 {
                color = if color == SignalColor::Green {
                    SignalColor::Red
                } else {
                    SignalColor::Green
                };
            }
            sim.step(&[color]);

            let positions: Vec<(f64, f64)> =
                sim.vehicles(0).map(|v| (v.position_m, v.speed_ms)).collect();
            for w in positions.windows(2) {
                assert!(
                    w[1].0 - w[0].0 >= jam - 1e-9,
                    "spacing violated: {} then {}",
                    w[0].0,
                    w[1].0
                );
            }
            for (_, sp) in &positions {
                assert!(*sp >= 0.0 && *sp <= vf + 1e-9, "speed {sp} out of range");
            }
            if step % 100 == 0 {
                let c = sim.counts();
                let t = sim.raw_trips();
                assert_eq!(t.len() as u64, c.injected);
            }
        }
        let c = sim.counts();
        assert!(c.completed > 0);
        assert_eq!(c.injected, c.completed + c.on_lane + c.buffered);
    }

    #[test]
    fn detector_measures_flow_and_density_of_uniform_arrivals() {
        let mut sim = one_lane_sim(0.0, 250.0);
        // 10 vehicles, one every 6 s, crossing the detector at free flow.
        let spawn_every = (6.0 / DT) as u64;
        for step in 0..1200u64 {
            if step % spawn_every == 0 && step < 10 * spawn_every {
                sim.spawn_vehicle(0, 599.9);
            }
            sim.step(&[SignalColor::Green]);
        }
        // All ten crossed the detector at 300 m long ago; measure over a
        // window that covers exactly their 60 s crossing span (with margin).
        let (flow, density) = sim.measure_arrivals(0, 600.0);
        assert!((flow - 10.0 / 600.0 * 3600.0).abs() < 1e-9);
        let (flow60, density60) = {
            // Fresh run stopped at 94.5 s so a 60 s window covers exactly the
            // ten crossings (the first happens around 34.8 s).
            let mut s2 = one_lane_sim(0.0, 250.0);
            for step in 0..((94.5 / DT) as u64) {
                if step % spawn_every == 0 && step < 10 * spawn_every {
                    s2.spawn_vehicle(0, 599.9);
                }
                s2.step(&[SignalColor::Green]);
            }
            s2.measure_arrivals(0, 60.0)
        };
        assert!((flow60 - 600.0).abs() < 1e-9, "flow {flow60}");
        assert!((density60 - 600.0 / 31.0).abs() < 0.01, "density {density60}");
        assert!((density - density60 / 10.0).abs() < 0.01);
    }

    #[test]
    fn measure_arrivals_with_no_crossings_is_zero() {
        let sim = one_lane_sim(0.0, 250.0);
        assert_eq!(sim.measure_arrivals(0, 60.0), (0.0, 0.0));
    }

    #[test]
    fn stops_are_counted_once_per_standstill() {
        let mut sim = one_lane_sim(0.0, 250.0);
        sim.spawn_vehicle(0, 100.0);
        run(&mut sim, SignalColor::Red, 80); // stop at the line
        run(&mut sim, SignalColor::Green, 10); // released, well over 1 m/s
        run(&mut sim, SignalColor::Green, 10);
        let trips = sim.raw_trips();
        assert_eq!(trips[0].stops, 1);

        // A short green releases the head of a four-vehicle queue but the red
        // returns before the last vehicle reaches the line, so it stops again.
        let jam = paper_fd().jam_spacing_m();
        let mut sim = one_lane_sim(0.0, 250.0);
        for i in 0..4 {
            sim.spawn_vehicle(0, i as f64 * jam);
        }
        run(&mut sim, SignalColor::Red, 20);
        run(&mut sim, SignalColor::Green, 12); // 6 s of green
        run(&mut sim, SignalColor::Red, 40);
        let last = sim
            .vehicles(0)
            .find(|v| v.id == 3)
            .expect("last vehicle still on the lane");
        assert_eq!(last.position_m, 0.0);
        assert_eq!(last.stops, 2, "expected a second counted stop");
    }

    #[test]
    fn identical_seeds_reproduce_identical_runs() {
        let run_once = |seed: u64| -> Vec<(u64, f64)> {
            let mut sim = TrafficSim::new(
                SimConfig {
                    fd: paper_fd(),
                    dt_s: DT,
                    queue_window_m: 250.0,
                    lanes: vec![SimLaneConfig {
                        length_m: 600.0,
                        movements: vec![0],
                        detector_m: 300.0,
                    }],
                    movements: vec![Movement::new("M")],
                    demand: vec![vec![FlowSegment {
                        start_s: 0.0,
                        end_s: 1e9,
                        flow_veh_h: 700.0,
                    }]],
                },
                seed,
            )
            .unwrap();
            for step in 0..2000u64 {
                let color = if (step / 60) % 2 == 0 {
                    SignalColor::Green
                } else {
                    SignalColor::Red
                };
                sim.step(&[color]);
            }
            sim.vehicles(0).map(|v| (v.id, v.position_m)).collect()
        };
        assert_eq!(run_once(9), run_once(9));
        assert_ne!(run_once(9), run_once(10));
    }

    #[test]
    fn rejects_inconsistent_configuration() {
        let fd = paper_fd();
        let base = SimConfig {
            fd,
            dt_s: DT,
            queue_window_m: 250.0,
            lanes: vec![SimLaneConfig {
                length_m: 600.0,
                movements: vec![0],
                detector_m: 300.0,
            }],
            movements: vec![Movement::new("M")],
            demand: vec![vec![]],
        };
        let mut unknown = base.clone();
        unknown.lanes[0].movements = vec![3];
        assert!(TrafficSim::new(unknown, 1).is_err());

        let mut unassigned = base.clone();
        unassigned.movements.push(Movement::new("N"));
        unassigned.demand.push(vec![]);
        assert!(TrafficSim::new(unassigned, 1).is_err());

        let mut detector = base.clone();
        detector.lanes[0].detector_m = 700.0;
        assert!(TrafficSim::new(detector, 1).is_err());

        let mut twice = base;
        twice.lanes.push(SimLaneConfig {
            length_m: 600.0,
            movements: vec![0],
            detector_m: 300.0,
        });
        assert!(TrafficSim::new(twice, 1).is_err());
    }
}
