//! End-to-end pipeline and the machine-readable restoration report.
//!
//! One call runs fault application, reachability, supply-range search,
//! region correction, the partition solve and the flow check, and collects
//! everything into a `PartitionReport` mirroring the island table and the
//! per-level restoration table.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::feasibility::{check_constraints, solve_flow, Violation};
use crate::grid_model::{Network, Priority};
use crate::oracle::brute_force_partition;
use crate::partition_solver::{
    objective_value, region_correction, solve_partition, CorrectedRegion, Island,
};
use crate::power_circle::{independent_circles, max_supply_regions, SupplyRegion};
use crate::reachability::islanding_candidates;

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub granularity: f64,
    /// Skip the critical-load region correction (ablation).
    pub correction: bool,
    /// Cross-check small regions against the brute-force oracle.
    pub oracle_check: bool,
    pub case_name: String,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            granularity: 1.0,
            correction: true,
            oracle_check: false,
            case_name: String::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Case(#[from] crate::grid_model::CaseError),
    #[error(transparent)]
    Circle(#[from] crate::power_circle::CircleError),
    #[error(transparent)]
    Solve(#[from] crate::partition_solver::SolveError),
    #[error(transparent)]
    Flow(#[from] crate::feasibility::FlowError),
    #[error(transparent)]
    Oracle(#[from] crate::oracle::OracleError),
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowSummary {
    pub converged: bool,
    pub iterations: usize,
    pub min_voltage_pu: f64,
    pub max_voltage_pu: f64,
    pub losses_kw: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IslandSummary {
    pub id: usize,
    pub dgs: Vec<String>,
    pub buses: Vec<usize>,
    pub capacity_kw: f64,
    pub restored_kw: f64,
    pub shed_kw: f64,
    pub objective: f64,
    pub restored_by_level: BTreeMap<String, f64>,
    pub flow: FlowSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelRow {
    pub total_kw: f64,
    pub restored_kw: f64,
    pub ratio_percent: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViolationRecord {
    pub island: usize,
    #[serde(flatten)]
    pub violation: Violation,
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionReport {
    pub schema_version: u32,
    pub case: String,
    pub faults: Vec<(usize, usize)>,
    pub granularity_kw: f64,
    pub islands: Vec<IslandSummary>,
    pub per_level: BTreeMap<String, LevelRow>,
    pub grid_connected_dgs: Vec<String>,
    pub islanded_unserved_buses: Vec<usize>,
    pub violations: Vec<ViolationRecord>,
    pub skipped_current_checks: usize,
    pub notes: Vec<String>,
}

/// Intermediate artifacts, kept around for rendering and tests.
pub struct PipelineOutcome {
    pub net: Network,
    pub circles: Vec<SupplyRegion>,
    pub regions: Vec<SupplyRegion>,
    pub corrected: Vec<CorrectedRegion>,
    pub islands: Vec<Island>,
    pub report: PartitionReport,
}

fn level_name(p: Priority) -> String {
    p.to_string()
}

/// Runs the whole pipeline on an already-faulted network.
pub fn run_pipeline(net: &Network, opts: &PipelineOptions) -> Result<PipelineOutcome, PipelineError> {
    let g = opts.granularity;
    let candidates = islanding_candidates(net);
    let mut notes = Vec::new();
    if candidates.is_empty() {
        notes.push("no islanding required: every de-energized region lacks generation or none exists".to_string());
    }

    let mut circles = Vec::new();
    let mut regions = Vec::new();
    for cand in &candidates {
        circles.extend(independent_circles(net, cand, g)?);
        regions.extend(max_supply_regions(net, cand, g)?);
    }

    let mut corrected = Vec::new();
    for region in &regions {
        if opts.correction {
            corrected.push(region_correction(net, region, g)?);
        } else {
            corrected.push(CorrectedRegion {
                region: region.clone(),
                committed: region.root_buses.clone(),
            });
        }
    }

    let mut islands = Vec::new();
    for c in &corrected {
        let island = solve_partition(net, c, g)?;
        if opts.oracle_check && c.region.members.len() <= 20 {
            let oracle = brute_force_partition(net, c, g)?;
            let dp_milli = (island.objective * 1000.0).round() as i64;
            if dp_milli != oracle.best_objective_milli {
                notes.push(format!(
                    "oracle mismatch on {:?}: dp {} vs brute force {}",
                    island.dgs, dp_milli, oracle.best_objective_milli
                ));
            } else {
                notes.push(format!(
                    "oracle check ok for {:?} ({} states)",
                    island.dgs, oracle.states_explored
                ));
            }
        }
        islands.push(island);
    }
    islands.sort_by(|a, b| a.dgs.cmp(&b.dgs));

    // per-level totals and restoration
    let totals = net.totals_by_level();
    let mut restored: BTreeMap<Priority, f64> = BTreeMap::new();
    for island in &islands {
        for (&b, &kw) in &island.restored_kw {
            *restored.entry(net.bus(b).priority).or_insert(0.0) += kw;
        }
    }
    let mut per_level = BTreeMap::new();
    for (p, &total) in &totals {
        let r = restored.get(p).copied().unwrap_or(0.0);
        let ratio = if total > 0.0 {
            (r / total * 100.0).round() as u32
        } else {
            0
        };
        per_level.insert(
            level_name(*p),
            LevelRow {
                total_kw: round3(total),
                restored_kw: round3(r),
                ratio_percent: ratio,
            },
        );
    }

    // flow checks
    let mut violations = Vec::new();
    let mut skipped = 0;
    let mut summaries = Vec::new();
    for (i, island) in islands.iter().enumerate() {
        let sol = solve_flow(net, island)?;
        let constraint = check_constraints(net, &sol);
        skipped += constraint.unrated_branches;
        for v in constraint.violations {
            violations.push(ViolationRecord {
                island: i + 1,
                violation: v,
            });
        }
        let mut by_level: BTreeMap<String, f64> = BTreeMap::new();
        for (&b, &kw) in &island.restored_kw {
            *by_level.entry(level_name(net.bus(b).priority)).or_insert(0.0) += kw;
        }
        for v in by_level.values_mut() {
            *v = round3(*v);
        }
        summaries.push(IslandSummary {
            id: i + 1,
            dgs: island.dgs.iter().cloned().collect(),
            buses: island.energized.iter().copied().collect(),
            capacity_kw: island.capacity,
            restored_kw: round3(island.restored_kw.values().sum()),
            shed_kw: round3(island.shed_kw.values().sum()),
            objective: round3(objective_value(island, net)),
            restored_by_level: by_level,
            flow: FlowSummary {
                converged: sol.converged,
                iterations: sol.iterations,
                min_voltage_pu: sol.voltages.values().copied().fold(f64::INFINITY, f64::min),
                max_voltage_pu: sol.voltages.values().copied().fold(0.0, f64::max),
                losses_kw: round3(sol.losses_kw),
            },
        });
    }

    let energized_union: BTreeSet<usize> = islands
        .iter()
        .flat_map(|i| i.energized.iter().copied())
        .collect();
    let mut unserved: Vec<usize> = candidates
        .iter()
        .flat_map(|c| c.members.iter().copied())
        .filter(|b| !energized_union.contains(b))
        .collect();
    unserved.sort_unstable();

    let grid_connected_dgs: Vec<String> = crate::reachability::regions(net)
        .into_iter()
        .filter(|r| r.contains_slack)
        .flat_map(|r| r.dgs)
        .collect();

    let faults: Vec<(usize, usize)> = net
        .branches
        .iter()
        .filter(|b| !b.is_closed())
        .map(|b| (b.from, b.to))
        .collect();

    let report = PartitionReport {
        schema_version: 1,
        case: opts.case_name.clone(),
        faults,
        granularity_kw: g,
        islands: summaries,
        per_level,
        grid_connected_dgs,
        islanded_unserved_buses: unserved,
        violations,
        skipped_current_checks: skipped,
        notes,
    };

    Ok(PipelineOutcome {
        net: net.clone(),
        circles,
        regions,
        corrected,
        islands,
        report,
    })
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}
