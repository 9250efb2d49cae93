//! Scenario and demand-profile files.
//!
//! A scenario is a TOML document describing one intersection: geometry,
//! the triangular flow-density relation, the signal plan, a movement
//! conflict table, and the optional re-service stanza. Demand profiles are
//! CSV tables of piecewise-constant flows per movement. Two intersections
//! and five demand profiles each ship inside the library.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::env::EnvSetup;
use crate::error::{Error, Result};
use crate::fd::FundamentalDiagram;
use crate::shockwave::ReServiceConfig;
use crate::signal::{Movement, Phase, PhasePlan, ReServiceSlot};
use crate::sim::{FlowSegment, SimConfig, SimLaneConfig};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    default_demand: Option<String>,
    movements: Vec<String>,
    fd: FundamentalDiagram,
    sim: SimSection,
    lanes: Vec<LaneSection>,
    phases: Vec<PhaseSection>,
    #[serde(default)]
    conflicts: Vec<ConflictSection>,
    #[serde(default)]
    reservice: Option<ReServiceSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSection {
    dt_s: f64,
    queue_window_m: f64,
    episode_s: f64,
    yellow_s: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LaneSection {
    length_m: f64,
    detector_m: f64,
    movements: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseSection {
    movements: Vec<String>,
    min_green_s: f64,
    max_green_s: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConflictSection {
    a: String,
    b: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReServiceSection {
    protected: String,
    slot: usize,
    min_green_s: f64,
    max_green_s: f64,
    queue_threshold_m: f64,
    clearance_fraction: f64,
}

/// A fully validated intersection description.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub default_demand: Option<String>,
    pub movements: Vec<Movement>,
    pub fd: FundamentalDiagram,
    pub dt_s: f64,
    pub queue_window_m: f64,
    pub episode_s: f64,
    pub lanes: Vec<SimLaneConfig>,
    pub plan: PhasePlan,
    pub reservice: Option<ReServiceConfig>,
    /// Pairs of movement indices that must never share a green.
    pub conflicts: Vec<(usize, usize)>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| Error::config(format!("scenario file: {e}")))?;
        Scenario::from_raw(file)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Scenario::parse(&text)
    }

    fn from_raw(file: ScenarioFile) -> Result<Self> {
        file.fd.validate()?;
        if !(file.sim.dt_s > 0.0 && file.sim.queue_window_m > 0.0 && file.sim.episode_s > 0.0) {
            return Err(Error::config("step, queue window and episode must be positive"));
        }
        if !(file.sim.yellow_s > 0.0) {
            return Err(Error::config("yellow must be positive"));
        }
        if file.movements.is_empty() {
            return Err(Error::config("scenario declares no movements"));
        }
        for (i, m) in file.movements.iter().enumerate() {
            if file.movements[..i].contains(m) {
                return Err(Error::config(format!("movement {m} declared twice")));
            }
        }
        let index_of = |name: &str| -> Result<usize> {
            file.movements
                .iter()
                .position(|m| m == name)
                .ok_or_else(|| Error::config(format!("unknown movement {name}")))
        };

        let mut lanes = Vec::with_capacity(file.lanes.len());
        for (li, lane) in file.lanes.iter().enumerate() {
            if lane.movements.is_empty() {
                return Err(Error::config(format!("lane {li} serves no movement")));
            }
            let movements = lane
                .movements
                .iter()
                .map(|m| index_of(m))
                .collect::<Result<Vec<_>>>()?;
            lanes.push(SimLaneConfig {
                length_m: lane.length_m,
                detector_m: lane.detector_m,
                movements,
            });
        }
        for (mi, m) in file.movements.iter().enumerate() {
            let served: Vec<usize> = (0..lanes.len())
                .filter(|&li| lanes[li].movements.contains(&mi))
                .collect();
            if served.len() != 1 {
                return Err(Error::config(format!(
                    "movement {m} must belong to exactly one lane, found {}",
                    served.len()
                )));
            }
        }

        let phases = file
            .phases
            .iter()
            .map(|p| {
                for m in &p.movements {
                    index_of(m)?;
                }
                Ok(Phase {
                    movements: p.movements.iter().map(|m| Movement::new(m)).collect(),
                    min_green_s: p.min_green_s,
                    max_green_s: p.max_green_s,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for m in &file.movements {
            if !phases.iter().any(|p| p.movements.iter().any(|pm| pm.name() == m)) {
                return Err(Error::config(format!("movement {m} appears in no phase")));
            }
        }

        let mut conflicts = Vec::with_capacity(file.conflicts.len());
        for c in &file.conflicts {
            let a = index_of(&c.a)?;
            let b = index_of(&c.b)?;
            if a == b {
                return Err(Error::config(format!("movement {} conflicts with itself", c.a)));
            }
            conflicts.push((a.min(b), a.max(b)));
        }
        for p in &phases {
            for &(a, b) in &conflicts {
                let ma = &file.movements[a];
                let mb = &file.movements[b];
                if p.movements.iter().any(|m| m.name() == ma)
                    && p.movements.iter().any(|m| m.name() == mb)
                {
                    return Err(Error::config(format!(
                        "phase serves conflicting movements {ma} and {mb}"
                    )));
                }
            }
        }

        let (slot, reservice) = match &file.reservice {
            Some(rs) => {
                index_of(&rs.protected)?;
                if rs.queue_threshold_m > file.sim.queue_window_m {
                    return Err(Error::config(
                        "re-service queue threshold exceeds the measurable window",
                    ));
                }
                let cfg = ReServiceConfig {
                    queue_threshold_m: rs.queue_threshold_m,
                    clearance_fraction: rs.clearance_fraction,
                    min_green_s: rs.min_green_s,
                    max_green_s: rs.max_green_s,
                };
                cfg.validate()?;
                let slot = ReServiceSlot {
                    protected: Movement::new(&rs.protected),
                    movements: vec![Movement::new(&rs.protected)],
                    slot: rs.slot,
                    min_green_s: rs.min_green_s,
                    max_green_s: rs.max_green_s,
                };
                (Some(slot), Some(cfg))
            }
            None => (None, None),
        };

        let plan = PhasePlan {
            phases,
            yellow_s: file.sim.yellow_s,
            reservice: slot,
        };
        plan.validate()?;

        Ok(Scenario {
            name: file.name,
            description: file.description,
            default_demand: file.default_demand,
            movements: file.movements.iter().map(|m| Movement::new(m)).collect(),
            fd: file.fd,
            dt_s: file.sim.dt_s,
            queue_window_m: file.sim.queue_window_m,
            episode_s: file.sim.episode_s,
            lanes,
            plan,
            reservice,
            conflicts,
        })
    }

    pub fn movement_index(&self, name: &str) -> Option<usize> {
        self.movements.iter().position(|m| m.name() == name)
    }

    /// Assemble the runnable environment description for a demand profile.
    /// `with_reservice = false` drops the insertion hook (the scheduling slot
    /// stays in the plan but is never exercised).
    pub fn to_env_setup(&self, demand: &DemandProfile, with_reservice: bool) -> Result<EnvSetup> {
        let flows = demand.bind(self)?;
        Ok(EnvSetup {
            sim: SimConfig {
                fd: self.fd,
                dt_s: self.dt_s,
                queue_window_m: self.queue_window_m,
                lanes: self.lanes.clone(),
                movements: self.movements.clone(),
                demand: flows,
            },
            plan: self.plan.clone(),
            reservice: if with_reservice { self.reservice } else { None },
            episode_s: self.episode_s,
        })
    }
}

/// Piecewise-constant arrival flows per movement, keyed by movement name so
/// one profile file stays independent of movement ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    pub name: String,
    pub flows: Vec<(String, Vec<FlowSegment>)>,
}

#[derive(Debug, Deserialize)]
struct DemandRow {
    movement: String,
    start_s: f64,
    end_s: f64,
    flow_veh_h: f64,
}

impl DemandProfile {
    pub fn parse_csv(name: &str, text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut flows: Vec<(String, Vec<FlowSegment>)> = Vec::new();
        for row in reader.deserialize() {
            let row: DemandRow = row?;
            if !(row.flow_veh_h.is_finite() && row.flow_veh_h >= 0.0) {
                return Err(Error::config(format!(
                    "demand {name}: movement {} has invalid flow {}",
                    row.movement, row.flow_veh_h
                )));
            }
            if !(row.end_s > row.start_s) {
                return Err(Error::config(format!(
                    "demand {name}: movement {} has an empty interval [{}, {}]",
                    row.movement, row.start_s, row.end_s
                )));
            }
            let segment = FlowSegment {
                start_s: row.start_s,
                end_s: row.end_s,
                flow_veh_h: row.flow_veh_h,
            };
            match flows.iter_mut().find(|(m, _)| *m == row.movement) {
                Some((_, segs)) => segs.push(segment),
                None => flows.push((row.movement, vec![segment])),
            }
        }
        if flows.is_empty() {
            return Err(Error::config(format!("demand {name}: no rows")));
        }
        for (m, segs) in &mut flows {
            segs.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
            for pair in segs.windows(2) {
                if (pair[0].end_s - pair[1].start_s).abs() > 1e-9 {
                    return Err(Error::config(format!(
                        "demand {name}: movement {m} has a gap or overlap at {} s",
                        pair[0].end_s
                    )));
                }
            }
        }
        Ok(DemandProfile {
            name: name.to_string(),
            flows,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("demand")
            .to_string();
        DemandProfile::parse_csv(&name, &text)
    }

    /// Same profile with one movement's flows multiplied by `factor`.
    pub fn scaled(&self, movement: &str, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor >= 0.0) {
            return Err(Error::config(format!("invalid demand scale {factor}")));
        }
        let mut out = self.clone();
        let entry = out
            .flows
            .iter_mut()
            .find(|(m, _)| m == movement)
            .ok_or_else(|| Error::config(format!("profile has no movement {movement}")))?;
        for seg in &mut entry.1 {
            seg.flow_veh_h *= factor;
        }
        out.name = format!("{}@{}x{:.2}", self.name, movement, factor);
        Ok(out)
    }

    /// Order the flows by the scenario's movement indices, checking that the
    /// profile covers every movement for the whole episode.
    pub fn bind(&self, scenario: &Scenario) -> Result<Vec<Vec<FlowSegment>>> {
        for (m, _) in &self.flows {
            if scenario.movement_index(m).is_none() {
                return Err(Error::config(format!(
                    "demand {}: movement {m} unknown to scenario {}",
                    self.name, scenario.name
                )));
            }
        }
        let mut out = Vec::with_capacity(scenario.movements.len());
        for m in &scenario.movements {
            let segs = self
                .flows
                .iter()
                .find(|(name, _)| name == m.name())
                .map(|(_, s)| s.clone())
                .ok_or_else(|| {
                    Error::config(format!(
                        "demand {} covers no flows for movement {}",
                        self.name,
                        m.name()
                    ))
                })?;
            let first = segs.first().expect("parse guarantees non-empty");
            let last = segs.last().expect("parse guarantees non-empty");
            if first.start_s > 1e-9 || last.end_s + 1e-9 < scenario.episode_s {
                return Err(Error::config(format!(
                    "demand {}: movement {} covers [{}, {}] but the episode is [0, {}]",
                    self.name,
                    m.name(),
                    first.start_s,
                    last.end_s,
                    scenario.episode_s
                )));
            }
            out.push(segs);
        }
        Ok(out)
    }
}

/// Bundled intersections: `(name, file text)`.
pub fn bundled_scenarios() -> &'static [(&'static str, &'static str)] {
    &[
        ("ramp", include_str!("../scenarios/ramp.toml")),
        ("fourleg", include_str!("../scenarios/fourleg.toml")),
    ]
}

/// Bundled demand profiles: `(name, file text)`.
pub fn bundled_demands() -> &'static [(&'static str, &'static str)] {
    &[
        ("ramp_1", include_str!("../scenarios/demand/ramp_1.csv")),
        ("ramp_2", include_str!("../scenarios/demand/ramp_2.csv")),
        ("ramp_3", include_str!("../scenarios/demand/ramp_3.csv")),
        ("ramp_4", include_str!("../scenarios/demand/ramp_4.csv")),
        ("ramp_5", include_str!("../scenarios/demand/ramp_5.csv")),
        ("fourleg_1", include_str!("../scenarios/demand/fourleg_1.csv")),
        ("fourleg_2", include_str!("../scenarios/demand/fourleg_2.csv")),
        ("fourleg_3", include_str!("../scenarios/demand/fourleg_3.csv")),
        ("fourleg_4", include_str!("../scenarios/demand/fourleg_4.csv")),
        ("fourleg_5", include_str!("../scenarios/demand/fourleg_5.csv")),
    ]
}

/// Resolve a bundled scenario name, or fall back to a file path.
pub fn find_scenario(name_or_path: &str) -> Result<Scenario> {
    if let Some((_, text)) = bundled_scenarios().iter().find(|(n, _)| *n == name_or_path) {
        return Scenario::parse(text);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        return Scenario::from_file(path);
    }
    Err(Error::config(format!(
        "no bundled scenario or file named {name_or_path} (bundled: {})",
        bundled_scenarios()
            .iter()
            .map(|(n, _)| *n)
            .collect::<Vec<_>>()
            .join(", ")
    )))
}

/// Resolve a bundled demand profile name, or fall back to a file path.
pub fn find_demand(name_or_path: &str) -> Result<DemandProfile> {
    if let Some((n, text)) = bundled_demands().iter().find(|(n, _)| *n == name_or_path) {
        return DemandProfile::parse_csv(n, text);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        return DemandProfile::from_file(path);
    }
    Err(Error::config(format!(
        "no bundled demand profile or file named {name_or_path} (bundled: {})",
        bundled_demands()
            .iter()
            .map(|(n, _)| *n)
            .collect::<Vec<_>>()
            .join(", ")
    )))
}
