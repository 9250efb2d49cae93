//! Trip-level evaluation: delay, stops, throughput, re-service share, and
//! the comparison table between two controllers.
//!
//! The per-vehicle trip log is the single source of truth: every summary in
//! a report can be recomputed from it exactly.

use std::io::Write;

use serde::Serialize;

use crate::env::TransitionRow;
use crate::error::Result;
use crate::shockwave::ShockEvent;
use crate::signal::Movement;
use crate::sim::RawTrip;

/// Delay of one trip: time in the network beyond the free-flow traversal of
/// the distance covered, floored at zero. Vehicles still in the network when
/// the episode ends contribute the delay accrued so far.
pub fn compute_delay(trip: &RawTrip, episode_s: f64, free_flow_ms: f64) -> f64 {
    let (elapsed, reference_m) = match trip.exit_s {
        Some(exit_s) => (exit_s - trip.entry_s, trip.route_m),
        None => (episode_s - trip.entry_s, trip.traveled_m),
    };
    (elapsed - reference_m / free_flow_ms).max(0.0)
}

/// One row of the trip log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripRecord {
    pub vehicle_id: u64,
    pub movement: String,
    pub entry_s: f64,
    /// Stop-line crossing time; `None` when the episode ended first.
    pub exit_s: Option<f64>,
    pub delay_s: f64,
    pub stops: u32,
}

pub fn trip_records(
    raw: &[RawTrip],
    movements: &[Movement],
    episode_s: f64,
    free_flow_ms: f64,
) -> Vec<TripRecord> {
    raw.iter()
        .map(|t| TripRecord {
            vehicle_id: t.vehicle_id,
            movement: movements[t.movement_idx].name().to_string(),
            entry_s: t.entry_s,
            exit_s: t.exit_s,
            delay_s: compute_delay(t, episode_s, free_flow_ms),
            stops: t.stops,
        })
        .collect()
}

/// Raw material from one evaluated episode.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub seed: u64,
    pub trips: Vec<TripRecord>,
    pub episode_s: f64,
    pub cycles: u64,
    pub reserviced_cycles: u64,
    pub injected: u64,
    pub in_network: u64,
}

/// Vehicle-level statistics over a set of completed trips plus signal-cycle
/// bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryStats {
    /// Completed trips (stop line crossed).
    pub trips: u64,
    pub injected: u64,
    pub mean_delay_s: f64,
    pub std_delay_s: f64,
    pub mean_stops: f64,
    pub std_stops: f64,
    pub throughput_veh_h: f64,
    pub cycles: u64,
    pub reserviced_cycles: u64,
    pub reservice_percent: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summarize(
    trips: &[&TripRecord],
    hours: f64,
    injected: u64,
    cycles: u64,
    reserviced: u64,
) -> SummaryStats {
    let completed: Vec<&&TripRecord> = trips.iter().filter(|t| t.exit_s.is_some()).collect();
    let delays: Vec<f64> = completed.iter().map(|t| t.delay_s).collect();
    let stops: Vec<f64> = completed.iter().map(|t| f64::from(t.stops)).collect();
    let (mean_delay_s, std_delay_s) = mean_std(&delays);
    let (mean_stops, std_stops) = mean_std(&stops);
    SummaryStats {
        trips: completed.len() as u64,
        injected,
        mean_delay_s,
        std_delay_s,
        mean_stops,
        std_stops,
        throughput_veh_h: if hours > 0.0 {
            completed.len() as f64 / hours
        } else {
            0.0
        },
        cycles,
        reserviced_cycles: reserviced,
        reservice_percent: if cycles > 0 {
            reserviced as f64 / cycles as f64 * 100.0
        } else {
            0.0
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MovementStats {
    pub movement: String,
    pub trips: u64,
    pub mean_delay_s: f64,
    pub std_delay_s: f64,
    pub mean_stops: f64,
    pub std_stops: f64,
    pub throughput_veh_h: f64,
}

/// Aggregate over a seed set: per-seed summaries plus vehicle-level pooling
/// across all seeds, overall and by movement.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub controller: String,
    pub demand: String,
    pub seeds: Vec<u64>,
    pub pooled: SummaryStats,
    pub per_seed: Vec<SummaryStats>,
    pub per_movement: Vec<MovementStats>,
}

pub fn build_report(
    scenario: &str,
    controller: &str,
    demand: &str,
    movements: &[Movement],
    runs: &[RunRecord],
) -> MetricsReport {
    let per_seed: Vec<SummaryStats> = runs
        .iter()
        .map(|r| {
            summarize(
                &r.trips.iter().collect::<Vec<_>>(),
                r.episode_s / 3600.0,
                r.injected,
                r.cycles,
                r.reserviced_cycles,
            )
        })
        .collect();

    let all: Vec<&TripRecord> = runs.iter().flat_map(|r| r.trips.iter()).collect();
    let hours: f64 = runs.iter().map(|r| r.episode_s).sum::<f64>() / 3600.0;
    let injected: u64 = runs.iter().map(|r| r.injected).sum();
    let cycles: u64 = runs.iter().map(|r| r.cycles).sum();
    let reserviced: u64 = runs.iter().map(|r| r.reserviced_cycles).sum();
    let pooled = summarize(&all, hours, injected, cycles, reserviced);

    let per_movement = movements
        .iter()
        .map(|m| {
            let of_movement: Vec<&TripRecord> = all
                .iter()
                .copied()
                .filter(|t| t.movement == m.name())
                .collect();
            let s = summarize(&of_movement, hours, 0, 0, 0);
            MovementStats {
                movement: m.name().to_string(),
                trips: s.trips,
                mean_delay_s: s.mean_delay_s,
                std_delay_s: s.std_delay_s,
                mean_stops: s.mean_stops,
                std_stops: s.std_stops,
                throughput_veh_h: s.throughput_veh_h,
            }
        })
        .collect();

    MetricsReport {
        scenario: scenario.to_string(),
        controller: controller.to_string(),
        demand: demand.to_string(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        pooled,
        per_seed,
        per_movement,
    }
}

/// One row of the improvement table. Positive percentages always mean the
/// candidate is better: costs shrink, throughput grows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricImprovement {
    pub metric: String,
    pub candidate: f64,
    pub reference: f64,
    pub improvement_percent: f64,
}

fn improvement(metric: &str, candidate: f64, reference: f64, higher_is_better: bool) -> MetricImprovement {
    let improvement_percent = if reference.abs() < 1e-12 {
        0.0
    } else if higher_is_better {
        (candidate - reference) / reference * 100.0
    } else {
        (reference - candidate) / reference * 100.0
    };
    MetricImprovement {
        metric: metric.to_string(),
        candidate,
        reference,
        improvement_percent,
    }
}

/// Percentage change of each pooled metric, candidate against reference.
pub fn compare(candidate: &MetricsReport, reference: &MetricsReport) -> Vec<MetricImprovement> {
    let a = &candidate.pooled;
    let b = &reference.pooled;
    vec![
        improvement("mean_delay_s", a.mean_delay_s, b.mean_delay_s, false),
        improvement("std_delay_s", a.std_delay_s, b.std_delay_s, false),
        improvement("mean_stops", a.mean_stops, b.mean_stops, false),
        improvement("std_stops", a.std_stops, b.std_stops, false),
        improvement(
            "throughput_veh_h",
            a.throughput_veh_h,
            b.throughput_veh_h,
            true,
        ),
    ]
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `vehicle_id, movement, entry_s, exit_s, delay_s, stops`; full float
/// precision so every summary is recomputable from the file.
pub fn write_trips_csv<W: Write>(mut w: W, trips: &[TripRecord]) -> Result<()> {
    writeln!(w, "vehicle_id,movement,entry_s,exit_s,delay_s,stops")?;
    for t in trips {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            t.vehicle_id,
            t.movement,
            t.entry_s,
            fmt_opt(t.exit_s),
            t.delay_s,
            t.stops
        )?;
    }
    Ok(())
}

/// Parse a trip log written by [`write_trips_csv`].
pub fn read_trips_csv(text: &str) -> Result<Vec<TripRecord>> {
    let mut out = Vec::new();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    for row in reader.records() {
        let row = row?;
        let parse = |i: usize| -> f64 { row.get(i).unwrap_or("").parse().unwrap_or(f64::NAN) };
        out.push(TripRecord {
            vehicle_id: parse(0) as u64,
            movement: row.get(1).unwrap_or("").to_string(),
            entry_s: parse(2),
            exit_s: match row.get(3) {
                Some("") | None => None,
                Some(s) => Some(s.parse().unwrap_or(f64::NAN)),
            },
            delay_s: parse(4),
            stops: parse(5) as u32,
        });
    }
    Ok(out)
}

pub fn write_report_csv<W: Write>(mut w: W, report: &MetricsReport) -> Result<()> {
    writeln!(
        w,
        "scope,label,trips,mean_delay_s,std_delay_s,mean_stops,std_stops,throughput_veh_h,reservice_percent"
    )?;
    let row = |w: &mut W, scope: &str, label: &str, s: &SummaryStats| -> Result<()> {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            scope,
            label,
            s.trips,
            s.mean_delay_s,
            s.std_delay_s,
            s.mean_stops,
            s.std_stops,
            s.throughput_veh_h,
            s.reservice_percent
        )?;
        Ok(())
    };
    row(&mut w, "pooled", &report.controller, &report.pooled)?;
    for (seed, s) in report.seeds.iter().zip(&report.per_seed) {
        row(&mut w, "seed", &seed.to_string(), s)?;
    }
    for m in &report.per_movement {
        writeln!(
            w,
            "movement,{},{},{},{},{},{},{},",
            m.movement,
            m.trips,
            m.mean_delay_s,
            m.std_delay_s,
            m.mean_stops,
            m.std_stops,
            m.throughput_veh_h
        )?;
    }
    Ok(())
}

pub fn write_comparison_csv<W: Write>(mut w: W, rows: &[MetricImprovement]) -> Result<()> {
    writeln!(w, "metric,candidate,reference,improvement_percent")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.metric, r.candidate, r.reference, r.improvement_percent
        )?;
    }
    Ok(())
}

pub fn write_reward_curve_csv<W: Write>(mut w: W, curve: &[(u32, f64)]) -> Result<()> {
    writeln!(w, "episode,step_avg_reward")?;
    for (ep, r) in curve {
        writeln!(w, "{ep},{r}")?;
    }
    Ok(())
}

/// `t, cycle, X, q_a, k_a, L_max, decision_s`; a saturated forecast is
/// written as `inf`.
pub fn write_shock_events_csv<W: Write>(mut w: W, events: &[ShockEvent]) -> Result<()> {
    writeln!(w, "t,cycle,X,q_a,k_a,L_max,decision_s")?;
    for e in events {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            e.t_s,
            e.cycle,
            e.queue_m,
            e.arrival_flow_veh_h,
            e.arrival_density_veh_km,
            e.forecast_m,
            e.decision_s
        )?;
    }
    Ok(())
}

pub fn write_transitions_csv<W: Write>(mut w: W, rows: &[TransitionRow]) -> Result<()> {
    writeln!(w, "t,T,a,a_mapped,r,j,reservice_s")?;
    for x in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            x.t, x.clock_s, x.a, x.a_mapped, x.r, x.j, x.reservice_s
        )?;
    }
    Ok(())
}
