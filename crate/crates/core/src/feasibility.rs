//! Voltage and current verification of solved islands via a backward/forward
//! power-flow sweep on the radial island tree.
//!
//! The sweep is rooted at the bus of the island's largest generator, held at
//! 1.0 pu. Any further generators in a pooled island inject active power in
//! proportion to their stable capacity, modelled as negative load. Reactive
//! demand scales with the served share of each bus (constant power factor).

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::grid_model::Network;
use crate::partition_solver::Island;
use crate::power_circle::stable_output;

const TOLERANCE_PU: f64 = 1e-6;
const MAX_ITERATIONS: usize = 100;
/// System base for per-unit conversion, MVA.
const S_BASE_MVA: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct FlowSolution {
    /// Voltage magnitude per bus, per-unit.
    pub voltages: BTreeMap<usize, f64>,
    /// Branch current magnitudes, ampere, keyed (from, to) as in the case.
    pub currents: BTreeMap<(usize, usize), f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Active power entering at the root, kW.
    pub root_injection_kw: f64,
    /// Active power injected by non-root generators, kW.
    pub other_injection_kw: f64,
    /// Total series losses, kW.
    pub losses_kw: f64,
    /// Total served load, kW.
    pub served_kw: f64,
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("sweep did not converge in {iterations} iterations; |dV| trace: {trace:?}")]
    NonConverged { iterations: usize, trace: Vec<f64> },
    #[error("island has no generator to root the sweep at")]
    NoRoot,
    #[error("island is not a connected tree: bus {0} unreachable from the root")]
    Disconnected(usize),
}

/// Backward/forward sweep over an island using its served loads.
pub fn solve_flow(net: &Network, island: &Island) -> Result<FlowSolution, FlowError> {
    let dgs: Vec<_> = net
        .dgs
        .iter()
        .filter(|d| island.dgs.contains(&d.name))
        .collect();
    let root = dgs
        .iter()
        .max_by(|a, b| {
            a.rated_capacity
                .total_cmp(&b.rated_capacity)
                .then(b.bus.cmp(&a.bus))
        })
        .map(|d| d.bus)
        .ok_or(FlowError::NoRoot)?;

    // tree order within the energized set
    let adj = net.closed_adjacency();
    let mut parent: BTreeMap<usize, Option<usize>> = BTreeMap::new();
    parent.insert(root, None);
    let mut order = vec![root];
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[&u] {
            if island.energized.contains(&v) && !parent.contains_key(&v) {
                parent.insert(v, Some(u));
                order.push(v);
                queue.push_back(v);
            }
        }
    }
    if let Some(&orphan) = island.energized.iter().find(|b| !parent.contains_key(b)) {
        return Err(FlowError::Disconnected(orphan));
    }

    // proportional dispatch of the pooled generators
    let served_total: f64 = island.restored_kw.values().sum();
    let stable_total: f64 = dgs.iter().map(|d| stable_output(d, 1e-9)).sum();
    let mut injection_kw: BTreeMap<usize, f64> = BTreeMap::new();
    let mut other_injection = 0.0;
    for d in &dgs {
        if d.bus == root || stable_total <= 0.0 {
            continue;
        }
        let share = served_total * stable_output(d, 1e-9) / stable_total;
        *injection_kw.entry(d.bus).or_insert(0.0) += share;
        other_injection += share;
    }

    // complex per-bus demand, per-unit on S_BASE
    let z_base = net.base_kv * net.base_kv / S_BASE_MVA; // ohm
    let mut s_pu: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for &b in &island.energized {
        let bus = net.bus(b);
        let p = island.restored_kw.get(&b).copied().unwrap_or(0.0);
        let ratio = if bus.load_active > 0.0 {
            p / bus.load_active
        } else {
            1.0
        };
        let q = bus.load_reactive * ratio;
        let inj = injection_kw.get(&b).copied().unwrap_or(0.0);
        s_pu.insert(b, ((p - inj) / 1000.0 / S_BASE_MVA, q / 1000.0 / S_BASE_MVA));
    }

    let impedance = |a: usize, b: usize| -> (f64, f64) {
        let br = net
            .branches
            .iter()
            .find(|br| br.is_closed() && br.joins(a, b))
            .unwrap();
        (br.resistance / z_base, br.reactance / z_base)
    };

    let mut v: BTreeMap<usize, (f64, f64)> = island
        .energized
        .iter()
        .map(|&b| (b, (1.0, 0.0)))
        .collect();
    let mut iterations = 0;
    let mut converged = false;
    let mut trace = Vec::new();
    let mut branch_current: BTreeMap<usize, (f64, f64)> = BTreeMap::new(); // keyed by child bus

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        // backward: accumulate currents toward the root
        let mut current: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for &b in &order {
            let (p, q) = s_pu[&b];
            let (vr, vi) = v[&b];
            let denom = vr * vr + vi * vi;
            // I = conj(S / V)
            let ir = (p * vr + q * vi) / denom;
            let ii = (p * vi - q * vr) / denom;
            current.insert(b, (ir, ii));
        }
        for &b in order.iter().rev() {
            if let Some(Some(p)) = parent.get(&b).copied().map(Some) {
                if let Some(pp) = p {
                    let (ir, ii) = current[&b];
                    let e = current.get_mut(&pp).unwrap();
                    e.0 += ir;
                    e.1 += ii;
                }
            }
        }
        // forward: update voltages from the root
        let mut next = v.clone();
        next.insert(root, (1.0, 0.0));
        let mut max_dv: f64 = 0.0;
        for &b in &order {
            if b == root {
                continue;
            }
            let p = parent[&b].unwrap();
            let (r, x) = impedance(p, b);
            let (ir, ii) = current[&b];
            let (vr, vi) = next[&p];
            let nb = (vr - (r * ir - x * ii), vi - (r * ii + x * ir));
            let (or_, oi) = v[&b];
            let dv = ((nb.0 - or_).powi(2) + (nb.1 - oi).powi(2)).sqrt();
            max_dv = max_dv.max(dv);
            next.insert(b, nb);
        }
        branch_current = order
            .iter()
            .filter(|&&b| b != root)
            .map(|&b| (b, current[&b]))
            .collect();
        v = next;
        trace.push(max_dv);
        if max_dv < TOLERANCE_PU {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(FlowError::NonConverged { iterations, trace });
    }

    let i_base_amp = S_BASE_MVA * 1e6 / (3f64.sqrt() * net.base_kv * 1e3);
    let mut currents = BTreeMap::new();
    let mut losses_pu = 0.0;
    for (&b, &(ir, ii)) in &branch_current {
        let p = parent[&b].unwrap();
        let (r, _) = impedance(p, b);
        let mag = (ir * ir + ii * ii).sqrt();
        losses_pu += mag * mag * r;
        let br = net
            .branches
            .iter()
            .find(|br| br.is_closed() && br.joins(p, b))
            .unwrap();
        currents.insert((br.from, br.to), mag * i_base_amp);
    }
    let losses_kw = losses_pu * S_BASE_MVA * 1000.0;
    let served_kw: f64 = island.restored_kw.values().sum();

    Ok(FlowSolution {
        voltages: v
            .iter()
            .map(|(&b, &(vr, vi))| (b, (vr * vr + vi * vi).sqrt()))
            .collect(),
        currents,
        converged,
        iterations,
        root_injection_kw: served_kw + losses_kw - other_injection,
        other_injection_kw: other_injection,
        losses_kw,
        served_kw,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Voltage { bus: usize, pu: f64 },
    Current { from: usize, to: usize, amps: f64, rated: f64 },
}

#[derive(Debug, Clone, Default)]
pub struct ConstraintReport {
    pub violations: Vec<Violation>,
    /// Branches without a current rating, skipped with a warning count.
    pub unrated_branches: usize,
}

/// Checks the voltage band on every bus and the current rating on every
/// rated branch of a converged solution.
pub fn check_constraints(net: &Network, sol: &FlowSolution) -> ConstraintReport {
    let (umin, umax) = net.voltage_limits;
    let mut report = ConstraintReport::default();
    for (&bus, &pu) in &sol.voltages {
        if pu < umin - 1e-12 || pu > umax + 1e-12 {
            report.violations.push(Violation::Voltage { bus, pu });
        }
    }
    for (&(from, to), &amps) in &sol.currents {
        let br = net.branches.iter().find(|b| b.joins(from, to)).unwrap();
        match br.rated_current {
            Some(rated) => {
                if amps >= rated {
                    report.violations.push(Violation::Current { from, to, amps, rated });
                }
            }
            None => report.unrated_branches += 1,
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_model::parse_case;
    use std::collections::BTreeSet;

    fn island_from(_net: &Network, dg: &str, served: &[(usize, f64)]) -> Island {
        Island {
            dgs: BTreeSet::from([dg.to_string()]),
            energized: served.iter().map(|&(b, _)| b).collect(),
            restored_kw: served.iter().copied().collect(),
            shed_kw: BTreeMap::new(),
            objective: 0.0,
            capacity: 0.0,
        }
    }

    #[test]
    fn zero_load_island_is_flat() {
        let net = parse_case(
            "[meta] base_kv=12.66 slack=1\n[bus]\n1 0 0 2 0\n2 0 0 2 0\n3 0 0 2 0\n[branch]\n1 2 0.5 0.3\n2 3 0.5 0.3\n[dg]\nG 1 100 100 0\n",
        )
        .unwrap();
        let island = island_from(&net, "G", &[(1, 0.0), (2, 0.0), (3, 0.0)]);
        let sol = solve_flow(&net, &island).unwrap();
        assert!(sol.converged);
        for v in sol.voltages.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        for i in sol.currents.values() {
            assert!(i.abs() < 1e-12);
        }
        assert!(check_constraints(&net, &sol).violations.is_empty());
    }

    #[test]
    fn two_bus_drop_matches_closed_form() {
        // P=500 kW, Q=300 kvar at the far end of r=0.5, x=0.3 ohm, 12.66 kV.
        let net = parse_case(
            "[meta] base_kv=12.66 slack=1\n[bus]\n1 0 0 2 0\n2 500 300 2 0\n[branch]\n1 2 0.5 0.3\n[dg]\nG 1 1000 1000 0\n",
        )
        .unwrap();
        let island = island_from(&net, "G", &[(1, 0.0), (2, 500.0)]);
        let sol = solve_flow(&net, &island).unwrap();
        let v = sol.voltages[&2];
        // closed-form two-bus solution (DistFlow):
        // v^2 = v0^2/2 - (pr+qx) + sqrt((v0^2/2 - (pr+qx))^2 - (p^2+q^2)(r^2+x^2))
        let z_base = 12.66 * 12.66;
        let (r, x) = (0.5 / z_base, 0.3 / z_base);
        let (p, q) = (0.5f64, 0.3f64);
        let a: f64 = 0.5 - (p * r + q * x);
        let vref = (a + (a * a - (p * p + q * q) * (r * r + x * x)).sqrt()).sqrt();
        assert!((v - vref).abs() < 1e-6, "sweep {v} vs closed-form {vref}");
        // energy balance
        let balance = sol.root_injection_kw + sol.other_injection_kw
            - sol.served_kw
            - sol.losses_kw;
        assert!(balance.abs() < 1e-3);
    }

    #[test]
    fn voltage_violation_is_reported() {
        let net = parse_case(
            "[meta] base_kv=12.66 slack=1 umin=0.95 umax=1.05\n[bus]\n1 0 0 2 0\n2 0 0 2 0\n[branch]\n1 2 0.5 0.3\n[dg]\nG 1 10 10 0\n",
        )
        .unwrap();
        let island = island_from(&net, "G", &[(1, 0.0), (2, 0.0)]);
        let mut sol = solve_flow(&net, &island).unwrap();
        sol.voltages.insert(2, 0.9);
        let rep = check_constraints(&net, &sol);
        assert_eq!(rep.violations, vec![Violation::Voltage { bus: 2, pu: 0.9 }]);
    }

    #[test]
    fn current_violation_is_reported() {
        let net = parse_case(
            "[meta] base_kv=12.66 slack=1\n[bus]\n1 0 0 2 0\n2 0 0 2 0\n[branch]\n1 2 0.5 0.3 100\n[dg]\nG 1 10 10 0\n",
        )
        .unwrap();
        let island = island_from(&net, "G", &[(1, 0.0), (2, 0.0)]);
        let mut sol = solve_flow(&net, &island).unwrap();
        sol.currents.insert((1, 2), 101.0);
        let rep = check_constraints(&net, &sol);
        assert_eq!(
            rep.violations,
            vec![Violation::Current { from: 1, to: 2, amps: 101.0, rated: 100.0 }]
        );
        assert_eq!(rep.unrated_branches, 0);
    }

    #[test]
    fn monotone_drop_along_a_uniform_feeder() {
        let net = parse_case(
            "[meta] base_kv=12.66 slack=1\n[bus]\n1 0 0 2 0\n2 100 50 2 0\n3 100 50 2 0\n4 100 50 2 0\n[branch]\n1 2 0.4 0.2\n2 3 0.4 0.2\n3 4 0.4 0.2\n[dg]\nG 1 1000 1000 0\n",
        )
        .unwrap();
        let island = island_from(&net, "G", &[(1, 0.0), (2, 100.0), (3, 100.0), (4, 100.0)]);
        let sol = solve_flow(&net, &island).unwrap();
        assert!(sol.voltages[&1] >= sol.voltages[&2]);
        assert!(sol.voltages[&2] >= sol.voltages[&3]);
        assert!(sol.voltages[&3] >= sol.voltages[&4]);
    }
}
