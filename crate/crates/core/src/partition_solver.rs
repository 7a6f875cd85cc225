//! Island formation for one supply region: power rounding, controllable-load
//! decomposition, critical-load region correction, BFS layering and the
//! bottom-up tree knapsack that maximizes weighted restoration.
//!
//! Rounding is conservative throughout: source capacity is floored to the
//! granularity and loads are ceiled, so a solution that fits in rounded
//! units always fits the true capacity. Each bus is served either at its
//! firm (non-reducible) level or in full — shedding is binary per bus.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::grid_model::{Bus, Network};
use crate::power_circle::SupplyRegion;

/// Rounds `x` up to a multiple of `g`.
pub fn ceil_to(g: f64, x: f64) -> f64 {
    (x / g - 1e-9).ceil() * g
}

/// Rounds `x` down to a multiple of `g`.
pub fn floor_to(g: f64, x: f64) -> f64 {
    (x / g + 1e-9).floor() * g
}

/// Rounded-up firm (non-reducible) part of a bus load, kW.
pub fn firm_load(bus: &Bus, g: f64) -> f64 {
    ceil_to(g, (1.0 - bus.controllable_fraction) * bus.load_active)
}

/// Source power floored, load powers ceiled.
pub fn round_powers(
    capacity: f64,
    loads: &BTreeMap<usize, f64>,
    g: f64,
) -> (f64, BTreeMap<usize, f64>) {
    (
        floor_to(g, capacity),
        loads.iter().map(|(&b, &l)| (b, ceil_to(g, l))).collect(),
    )
}

/// Reducible/firm split of one bus load, in rounded kW.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSplit {
    pub bus: usize,
    pub reducible: f64,
    pub fixed: f64,
}

/// Splits each bus load by its controllable fraction. The ceiling goes to
/// the fixed part, the remainder of the rounded load to the reducible part.
pub fn decompose_loads(net: &Network, buses: &BTreeSet<usize>, g: f64) -> Vec<LoadSplit> {
    buses
        .iter()
        .map(|&b| {
            let bus = net.bus(b);
            let rounded = ceil_to(g, bus.load_active);
            let fixed = firm_load(bus, g);
            LoadSplit {
                bus: b,
                reducible: rounded - fixed,
                fixed,
            }
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("bus {0} is disconnected from the region roots")]
    Disconnected(usize),
    #[error("committed loads need {needed} kW but only {capacity} kW is available")]
    InfeasibleCommitment { needed: f64, capacity: f64 },
}

/// Hop layering of a region from its root buses.
#[derive(Debug, Clone)]
pub struct LayeredRegion {
    pub root_buses: BTreeSet<usize>,
    /// layers[d] = buses at hop distance d from the nearest root.
    pub layers: Vec<BTreeSet<usize>>,
    /// Parent towards the nearest root; roots are absent.
    pub parent: BTreeMap<usize, usize>,
}

/// Multi-source BFS layering over the region members. Every non-root member
/// gets the smallest-id neighbour one layer up as its parent.
pub fn bfs_layers(net: &Network, region: &SupplyRegion) -> Result<LayeredRegion, SolveError> {
    let adj = net.closed_adjacency();
    let mut dist: BTreeMap<usize, usize> = region.root_buses.iter().map(|&r| (r, 0)).collect();
    let mut queue: VecDeque<usize> = region.root_buses.iter().copied().collect();
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        for &v in &adj[&u] {
            if region.members.contains(&v) && !dist.contains_key(&v) {
                dist.insert(v, du + 1);
                queue.push_back(v);
            }
        }
    }
    if let Some(&orphan) = region.members.iter().find(|b| !dist.contains_key(b)) {
        return Err(SolveError::Disconnected(orphan));
    }
    let depth = dist.values().copied().max().unwrap_or(0);
    let mut layers = vec![BTreeSet::new(); depth + 1];
    for (&b, &d) in &dist {
        layers[d].insert(b);
    }
    let mut parent = BTreeMap::new();
    for (&b, &d) in &dist {
        if d == 0 {
            continue;
        }
        let p = adj[&b]
            .iter()
            .copied()
            .filter(|n| dist.get(n) == Some(&(d - 1)))
            .min()
            .unwrap();
        parent.insert(b, p);
    }
    Ok(LayeredRegion {
        root_buses: region.root_buses.clone(),
        layers,
        parent,
    })
}

/// A supply region narrowed by the critical-load verification, with the
/// buses whose service the partition step must keep.
#[derive(Debug, Clone)]
pub struct CorrectedRegion {
    pub region: SupplyRegion,
    pub committed: BTreeSet<usize>,
}

/// Staged critical-load verification.
///
/// Stage 1 walks the region's primary-load buses outward from the roots and
/// commits each one together with its path, at full path load, while the
/// running total fits the capacity; primaries that no longer fit are left
/// out. Stage 2 admits every secondary load (plus paths) in one step when
/// they all fit, keeping the region as is. Otherwise stage 3 re-examines the
/// remaining buses ring by ring and keeps a ring only while it still fits
/// and adds restorable load; the first ring that fails ends the expansion
/// and everything beyond it leaves the region.
pub fn region_correction(
    net: &Network,
    region: &SupplyRegion,
    g: f64,
) -> Result<CorrectedRegion, SolveError> {
    let layered = bfs_layers(net, region)?;
    let dist: BTreeMap<usize, usize> = layered
        .layers
        .iter()
        .enumerate()
        .flat_map(|(d, set)| set.iter().map(move |&b| (b, d)))
        .collect();
    let path_to_root = |mut b: usize| -> Vec<usize> {
        let mut path = Vec::new();
        while !region.root_buses.contains(&b) {
            path.push(b);
            b = layered.parent[&b];
        }
        path
    };
    let whole = |b: usize| ceil_to(g, net.bus(b).load_active);

    let mut committed: BTreeSet<usize> = region.root_buses.clone();
    let mut cost: f64 = committed.iter().map(|&b| whole(b)).sum();

    // stage 1: primaries by (hop, id)
    let mut primaries: Vec<usize> = region
        .members
        .iter()
        .copied()
        .filter(|&b| net.bus(b).priority == crate::grid_model::Priority::Primary)
        .collect();
    primaries.sort_by_key(|&b| (dist[&b], b));
    for p in primaries {
        let new: Vec<usize> = path_to_root(p)
            .into_iter()
            .filter(|b| !committed.contains(b))
            .collect();
        let add: f64 = new.iter().map(|&b| whole(b)).sum();
        if cost + add <= region.capacity + 1e-9 {
            committed.extend(new);
            cost += add;
        }
    }

    // stage 2: all secondaries plus their connecting paths
    let mut stage2: BTreeSet<usize> = BTreeSet::new();
    for &s in region.members.iter() {
        if net.bus(s).priority == crate::grid_model::Priority::Secondary
            && !committed.contains(&s)
        {
            stage2.extend(path_to_root(s).into_iter().filter(|b| !committed.contains(b)));
        }
    }
    let add: f64 = stage2.iter().map(|&b| whole(b)).sum();
    if cost + add <= region.capacity + 1e-9 {
        committed.extend(stage2);
        // secondaries all fit: the region keeps its full member set and the
        // partition step decides the rest (tertiary loads, shedding).
        return Ok(CorrectedRegion {
            region: region.clone(),
            committed,
        });
    }

    // stage 3: ring-by-ring comparison beyond the verified core
    let mut kept = committed.clone();
    let max_hop = layered.layers.len() - 1;
    for hop in 1..=max_hop {
        let ring: Vec<usize> = layered.layers[hop]
            .iter()
            .copied()
            .filter(|b| !kept.contains(b) && kept.contains(&layered.parent[b]))
            .collect();
        if ring.is_empty() {
            continue;
        }
        let add: f64 = ring.iter().map(|&b| whole(b)).sum();
        let gain: f64 = ring
            .iter()
            .map(|&b| net.bus(b).weight() * net.bus(b).load_active)
            .sum();
        if cost + add <= region.capacity + 1e-9 && gain > 0.0 {
            kept.extend(ring.iter().copied());
            cost += add;
        } else {
            break;
        }
    }
    let mut narrowed = region.clone();
    narrowed.members = kept;
    narrowed.committed_load = narrowed
        .members
        .iter()
        .map(|&b| firm_load(net.bus(b), g))
        .sum::<f64>()
        .min(narrowed.capacity);
    Ok(CorrectedRegion {
        region: narrowed,
        committed,
    })
}

/// A final partition element: generators, energized buses and served load.
#[derive(Debug, Clone)]
pub struct Island {
    pub dgs: BTreeSet<String>,
    pub energized: BTreeSet<usize>,
    /// Actually served load per energized bus, true (unrounded) kW.
    pub restored_kw: BTreeMap<usize, f64>,
    /// Reducible load cut on energized buses, true kW.
    pub shed_kw: BTreeMap<usize, f64>,
    /// Weighted restored sum.
    pub objective: f64,
    pub capacity: f64,
}

/// Weighted restored power: shed load earns no credit.
pub fn objective_value(island: &Island, net: &Network) -> f64 {
    island
        .restored_kw
        .iter()
        .map(|(&b, &kw)| net.bus(b).weight() * kw)
        .sum()
}

// Integer milli-units keep the knapsack scores exact, so the solver and the
// brute-force oracle can be compared with `==`.
pub(crate) fn score_milli(weight: f64, kw: f64) -> i64 {
    (weight * kw * 1000.0).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct Value {
    pub score: i64,
    pub neg_shed: i32,
    pub neg_on: i32,
}

impl Value {
    pub const ZERO: Value = Value {
        score: 0,
        neg_shed: 0,
        neg_on: 0,
    };
    pub const NEG: Value = Value {
        score: i64::MIN / 4,
        neg_shed: 0,
        neg_on: 0,
    };
    fn add(self, o: Value) -> Value {
        if self == Value::NEG || o == Value::NEG {
            return Value::NEG;
        }
        Value {
            score: self.score + o.score,
            neg_shed: self.neg_shed + o.neg_shed,
            neg_on: self.neg_on + o.neg_on,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Choice {
    Off,
    Firm,
    Full,
}

struct Node {
    bus: usize,
    firm_units: usize,
    full_units: usize,
    value_firm: Value,
    value_full: Value,
    true_firm: f64,
    true_full: f64,
    children: Vec<usize>,
    subtree_committed: bool,
}

/// Exact maximization of weighted restoration over connected, root-containing
/// subtrees of the corrected region, with binary shedding per bus.
///
/// Bottom-up tree knapsack over capacity units: each node's table merges its
/// children by convolution, then adds the node's own serve choice; committed
/// buses cannot be dropped. Ties break toward fewer shed buses, then fewer
/// energized buses (dark zero-gain leaves), then the reconstruction order.
pub fn solve_partition(
    net: &Network,
    corrected: &CorrectedRegion,
    g: f64,
) -> Result<Island, SolveError> {
    let region = &corrected.region;
    let layered = bfs_layers(net, region)?;
    let units = |x: f64| -> usize { (x / g).round() as usize };
    let cap_units = units(region.capacity);

    // order members so parents precede children
    let mut order: Vec<usize> = Vec::new();
    for layer in &layered.layers {
        order.extend(layer.iter().copied());
    }
    let index: BTreeMap<usize, usize> = order.iter().enumerate().map(|(i, &b)| (b, i)).collect();

    let mut nodes: Vec<Node> = order
        .iter()
        .map(|&b| {
            let bus = net.bus(b);
            let rounded = ceil_to(g, bus.load_active);
            let firm = firm_load(bus, g);
            let true_firm = (1.0 - bus.controllable_fraction) * bus.load_active;
            let committed = corrected.committed.contains(&b);
            let sheddable = rounded - firm > 1e-12;
            Node {
                bus: b,
                firm_units: units(firm),
                full_units: units(rounded),
                value_firm: Value {
                    score: score_milli(bus.weight(), true_firm),
                    neg_shed: if sheddable { -1 } else { 0 },
                    neg_on: -1,
                },
                value_full: Value {
                    score: score_milli(bus.weight(), bus.load_active),
                    neg_shed: 0,
                    neg_on: -1,
                },
                true_firm,
                true_full: bus.load_active,
                children: Vec::new(),
                subtree_committed: committed,
            }
        })
        .collect();
    for (&child, &parent) in &layered.parent {
        let ci = index[&child];
        let pi = index[&parent];
        nodes[pi].children.push(ci);
    }
    for v in nodes.iter_mut() {
        v.children.sort_unstable();
    }
    for i in (0..nodes.len()).rev() {
        for c in nodes[i].children.clone() {
            if nodes[c].subtree_committed {
                nodes[i].subtree_committed = true;
            }
        }
    }

    let firm_need: f64 = corrected
        .committed
        .iter()
        .map(|&b| firm_load(net.bus(b), g))
        .sum();
    if firm_need > region.capacity + 1e-9 {
        return Err(SolveError::InfeasibleCommitment {
            needed: firm_need,
            capacity: region.capacity,
        });
    }

    // tables[i][c] = best value of subtree(i) within c units (monotone in c);
    // prefixes[i][k] = children 0..k of i combined, kept for reconstruction.
    let n = nodes.len();
    let mut tables: Vec<Vec<Value>> = vec![Vec::new(); n];
    let mut prefixes: Vec<Vec<Vec<Value>>> = Vec::with_capacity(n);
    for _ in 0..n {
        prefixes.push(Vec::new());
    }

    let conv = |a: &[Value], b: &[Value]| -> Vec<Value> {
        let mut out = vec![Value::NEG; cap_units + 1];
        for (ca, &va) in a.iter().enumerate() {
            if va == Value::NEG {
                continue;
            }
            for (cb, &vb) in b.iter().enumerate() {
                if ca + cb > cap_units {
                    break;
                }
                if vb == Value::NEG {
                    continue;
                }
                let v = va.add(vb);
                if v > out[ca + cb] {
                    out[ca + cb] = v;
                }
            }
        }
        // monotone closure: more budget never hurts
        for c in 1..=cap_units {
            if out[c - 1] > out[c] {
                out[c] = out[c - 1];
            }
        }
        out
    };

    // children of the virtual super-root are the region roots
    let root_children: Vec<usize> = layered
        .root_buses
        .iter()
        .map(|b| index[b])
        .collect();

    for i in (0..n).rev() {
        // combine children first (children have larger indices than i is not
        // guaranteed across layers, but parents always precede children in
        // BFS order, so reverse order visits children before parents)
        let mut prefix: Vec<Vec<Value>> = Vec::with_capacity(nodes[i].children.len() + 1);
        let mut acc = vec![Value::ZERO; cap_units + 1];
        prefix.push(acc.clone());
        for &c in &nodes[i].children {
            acc = conv(&acc, &tables[c]);
            prefix.push(acc.clone());
        }
        let combined = prefix.last().unwrap().clone();
        let mut table = vec![Value::NEG; cap_units + 1];
        let node = &nodes[i];
        // OFF: allowed only when nothing below is committed
        if !node.subtree_committed {
            for v in table.iter_mut() {
                *v = Value::ZERO;
            }
        }
        let apply = |cost: usize, gain: Value, table: &mut Vec<Value>| {
            for c in cost..=cap_units {
                let v = combined[c - cost].add(gain);
                if v > table[c] {
                    table[c] = v;
                }
            }
        };
        apply(node.firm_units, node.value_firm, &mut table);
        if node.full_units != node.firm_units || node.value_full != node.value_firm {
            apply(node.full_units, node.value_full, &mut table);
        }
        tables[i] = table;
        prefixes[i] = prefix;
    }

    // super-root combine
    let mut root_prefix: Vec<Vec<Value>> = Vec::with_capacity(root_children.len() + 1);
    let mut acc = vec![Value::ZERO; cap_units + 1];
    root_prefix.push(acc.clone());
    for &c in &root_children {
        acc = conv(&acc, &tables[c]);
        root_prefix.push(acc.clone());
    }
    let best = acc[cap_units];
    if best == Value::NEG {
        return Err(SolveError::InfeasibleCommitment {
            needed: firm_need,
            capacity: region.capacity,
        });
    }

    // reconstruction
    let mut choice: Vec<Choice> = vec![Choice::Off; n];
    let mut budget_of: Vec<usize> = vec![0; n];
    // split the root budget across the super-root children
    let split_children =
        |prefix: &[Vec<Value>], children: &[usize], mut budget: usize, target: Value,
         budgets: &mut Vec<usize>| {
            let mut want = target;
            for (k, &child) in children.iter().enumerate().rev() {
                // find cb with prefix[k][budget-cb] + tables[child][cb] == want
                let mut found = false;
                for cb in 0..=budget {
                    let head = prefix[k][budget - cb];
                    let tail = tables[child][cb];
                    if head != Value::NEG && tail != Value::NEG && head.add(tail) == want {
                        budgets[child] = cb;
                        budget -= cb;
                        want = head;
                        found = true;
                        break;
                    }
                }
                assert!(found, "knapsack reconstruction failed");
            }
        };
    split_children(&root_prefix, &root_children, cap_units, best, &mut budget_of);

    let mut stack: Vec<usize> = root_children.clone();
    while let Some(i) = stack.pop() {
        let budget = budget_of[i];
        let target = tables[i][budget];
        let node = &nodes[i];
        let combined = prefixes[i].last().unwrap();
        let mut resolved = false;
        // prefer ON-full, then ON-firm, then OFF, matching the tie-breaks
        for (ch, cost, gain) in [
            (Choice::Full, node.full_units, node.value_full),
            (Choice::Firm, node.firm_units, node.value_firm),
        ] {
            if resolved || budget < cost {
                continue;
            }
            let v = combined[budget - cost].add(gain);
            if v == target {
                choice[i] = ch;
                let inner = budget - cost;
                split_children(
                    &prefixes[i],
                    &nodes[i].children,
                    inner,
                    combined[inner],
                    &mut budget_of,
                );
                stack.extend(nodes[i].children.iter().copied());
                resolved = true;
            }
        }
        if !resolved {
            assert!(
                !node.subtree_committed && target == Value::ZERO,
                "bus {} unresolved in reconstruction",
                node.bus
            );
            choice[i] = Choice::Off; // subtree stays dark
        }
    }

    let mut energized = BTreeSet::new();
    let mut restored = BTreeMap::new();
    let mut shed = BTreeMap::new();
    for (i, node) in nodes.iter().enumerate() {
        match choice[i] {
            Choice::Off => {}
            Choice::Firm => {
                energized.insert(node.bus);
                restored.insert(node.bus, node.true_firm);
                if node.true_full - node.true_firm > 1e-12 {
                    shed.insert(node.bus, node.true_full - node.true_firm);
                }
            }
            Choice::Full => {
                energized.insert(node.bus);
                restored.insert(node.bus, node.true_full);
            }
        }
    }
    // ON choices below an OFF ancestor cannot appear: OFF nodes never push
    // children on the stack, and unvisited nodes keep Choice::Off.
    let objective = restored
        .iter()
        .map(|(&b, &kw)| net.bus(b).weight() * kw)
        .sum();
    Ok(Island {
        dgs: region.dgs.clone(),
        energized,
        restored_kw: restored,
        shed_kw: shed,
        objective,
        capacity: region.capacity,
    })
}
