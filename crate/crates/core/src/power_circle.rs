//! Capacity-bounded supply-range search ("power circles").
//!
//! Each generator's stable output seeds a breadth-first expansion over the
//! post-fault network: a frontier bus joins the circle only if its whole
//! rounded load would currently fit, while only the firm (non-reducible)
//! part of admitted loads stays committed against the capacity — reducible
//! load can later be shed by the partition step to make room for critical
//! loads. Overlapping circles either pool (when one circle swallows another
//! generator's own bus) or split the contested buses between them, so the
//! final supply regions are pairwise disjoint.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::grid_model::{DistributedGenerator, Network};
use crate::partition_solver::{ceil_to, firm_load, floor_to};
use crate::reachability::ReachableRegion;

/// A generator group, its pooled stable capacity and the buses it can feed.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplyRegion {
    pub dgs: BTreeSet<String>,
    pub root_buses: BTreeSet<usize>,
    /// Pooled stable output, floored to the granularity, kW.
    pub capacity: f64,
    pub members: BTreeSet<usize>,
    /// Rounded-up firm load of the members, kW.
    pub committed_load: f64,
    /// Firm root load beyond the capacity; nonzero only in the degenerate
    /// case of a root bus whose own load exceeds its generator.
    pub shortfall: f64,
}

impl SupplyRegion {
    pub fn surplus(&self) -> f64 {
        self.capacity - self.committed_load
    }
}

#[derive(Debug, Error)]
pub enum CircleError {
    #[error("origin buses {0:?} span more than one post-fault region")]
    SplitOrigin(Vec<usize>),
    #[error("origin bus {0} does not exist in the network")]
    UnknownOrigin(usize),
}

/// Stable output of a generator: the predicted output minus one standard
/// deviation, clamped at zero and floored to the granularity.
pub fn stable_output(dg: &DistributedGenerator, granularity: f64) -> f64 {
    floor_to(granularity, (dg.predicted_output - dg.sigma).max(0.0))
}

fn component_of(adj: &BTreeMap<usize, Vec<usize>>, start: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    seen.insert(start);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[&u] {
            if seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Ring-wise growth from `origins` over closed branches, restricted to
/// `scope` and skipping `claimed`. Returns (members, committed, shortfall).
fn grow(
    net: &Network,
    adj: &BTreeMap<usize, Vec<usize>>,
    scope: &BTreeSet<usize>,
    origins: &BTreeSet<usize>,
    seed_members: &BTreeSet<usize>,
    capacity: f64,
    granularity: f64,
    claimed: &BTreeSet<usize>,
) -> (BTreeSet<usize>, f64, f64) {
    let mut members = seed_members.clone();
    members.extend(origins.iter().copied());
    let mut committed = 0.0;
    for &b in &members {
        committed += ceil_to(granularity, firm_load(net.bus(b), granularity));
    }
    // A root whose own firm load exceeds the capacity is still admitted (an
    // island must contain its source); the overhang is recorded instead of
    // driving the surplus negative.
    let mut shortfall = 0.0;
    if committed > capacity {
        shortfall = committed - capacity;
        committed = capacity;
    }

    let mut frontier: Vec<usize> = members.iter().copied().collect();
    let mut blocked: BTreeSet<usize> = BTreeSet::new();
    while !frontier.is_empty() {
        let mut ring: BTreeSet<usize> = BTreeSet::new();
        for &u in &frontier {
            for &v in &adj[&u] {
                if scope.contains(&v)
                    && !members.contains(&v)
                    && !blocked.contains(&v)
                    && !claimed.contains(&v)
                {
                    ring.insert(v);
                }
            }
        }
        let mut order: Vec<usize> = ring.into_iter().collect();
        order.sort_by(|&a, &b| {
            let (ba, bb) = (net.bus(a), net.bus(b));
            bb.weight()
                .total_cmp(&ba.weight())
                .then(bb.load_active.total_cmp(&ba.load_active))
                .then(a.cmp(&b))
        });
        let mut admitted = Vec::new();
        for b in order {
            let whole = ceil_to(granularity, net.bus(b).load_active);
            if whole <= capacity - committed + 1e-9 {
                committed += ceil_to(granularity, firm_load(net.bus(b), granularity));
                members.insert(b);
                admitted.push(b);
            } else {
                blocked.insert(b);
            }
        }
        frontier = admitted;
    }
    (members, committed, shortfall)
}

/// Grows one circle outward from `origin` with the given capacity.
pub fn expand_circle(
    net: &Network,
    origin: &BTreeSet<usize>,
    capacity: f64,
    granularity: f64,
) -> Result<SupplyRegion, CircleError> {
    let adj = net.closed_adjacency();
    let mut origin_it = origin.iter();
    let first = *origin_it.next().ok_or(CircleError::SplitOrigin(vec![]))?;
    if first == 0 || first > net.n_buses() {
        return Err(CircleError::UnknownOrigin(first));
    }
    let scope = component_of(&adj, first);
    for &o in origin.iter() {
        if o == 0 || o > net.n_buses() {
            return Err(CircleError::UnknownOrigin(o));
        }
        if !scope.contains(&o) {
            return Err(CircleError::SplitOrigin(origin.iter().copied().collect()));
        }
    }
    let capacity = floor_to(granularity, capacity);
    let (members, committed, shortfall) = grow(
        net,
        &adj,
        &scope,
        origin,
        &BTreeSet::new(),
        capacity,
        granularity,
        &BTreeSet::new(),
    );
    Ok(SupplyRegion {
        dgs: BTreeSet::new(),
        root_buses: origin.clone(),
        capacity,
        members,
        committed_load: committed,
        shortfall,
    })
}

fn hop_distances(
    adj: &BTreeMap<usize, Vec<usize>>,
    within: &BTreeSet<usize>,
    sources: &BTreeSet<usize>,
) -> BTreeMap<usize, usize> {
    let mut dist: BTreeMap<usize, usize> = sources.iter().map(|&s| (s, 0)).collect();
    let mut queue: VecDeque<usize> = sources.iter().copied().collect();
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        for &v in &adj[&u] {
            if within.contains(&v) && !dist.contains_key(&v) {
                dist.insert(v, du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

fn recommit(net: &Network, members: &BTreeSet<usize>, granularity: f64) -> f64 {
    members
        .iter()
        .map(|&b| ceil_to(granularity, firm_load(net.bus(b), granularity)))
        .sum()
}

/// Resolves overlaps between circles.
///
/// Two circles pool when one of them covers the other's generator bus: the
/// pair cannot supply independently, so generators, roots, members and
/// capacities merge, and the pooled surplus re-expands the union. Circles
/// that merely brush against each other keep their identity; each contested
/// bus goes to the region whose root is fewer hops away (ties to the larger
/// capacity), and members cut off from their root by the split are dropped.
pub fn merge_overlapping(
    net: &Network,
    regions: Vec<SupplyRegion>,
    granularity: f64,
) -> Vec<SupplyRegion> {
    let adj = net.closed_adjacency();
    let mut regs = regions;

    // pooling pass
    loop {
        let mut merged = None;
        'outer: for i in 0..regs.len() {
            for j in i + 1..regs.len() {
                let i_holds_j = regs[j].root_buses.iter().any(|b| regs[i].members.contains(b));
                let j_holds_i = regs[i].root_buses.iter().any(|b| regs[j].members.contains(b));
                if i_holds_j || j_holds_i {
                    merged = Some((i, j));
                    break 'outer;
                }
            }
        }
        let Some((i, j)) = merged else { break };
        let other = regs.remove(j);
        let r = &mut regs[i];
        r.dgs.extend(other.dgs);
        r.root_buses.extend(other.root_buses);
        r.capacity += other.capacity;
        r.members.extend(other.members);
        r.shortfall += other.shortfall;
        r.committed_load = recommit(net, &r.members, granularity).min(r.capacity);
    }

    // Contested buses between surviving regions: the nearer root wins each
    // bus, and any member a region can no longer reach moves over to the
    // winning side together with the contested bus it hangs from, so the
    // resolution never loses buses.
    let mut guard = 0;
    loop {
        let mut touched = false;
        for i in 0..regs.len() {
            for j in i + 1..regs.len() {
                let shared: Vec<usize> = regs[i]
                    .members
                    .intersection(&regs[j].members)
                    .copied()
                    .collect();
                if shared.is_empty() {
                    continue;
                }
                touched = true;
                let di = hop_distances(&adj, &regs[i].members, &regs[i].root_buses);
                let dj = hop_distances(&adj, &regs[j].members, &regs[j].root_buses);
                for b in shared {
                    let key_i = (di.get(&b).copied().unwrap_or(usize::MAX), -regs[i].capacity);
                    let key_j = (dj.get(&b).copied().unwrap_or(usize::MAX), -regs[j].capacity);
                    let keep_i = key_i.0 < key_j.0 || (key_i.0 == key_j.0 && key_i.1 <= key_j.1);
                    if keep_i {
                        regs[j].members.remove(&b);
                    } else {
                        regs[i].members.remove(&b);
                    }
                }
                for (k, other) in [(i, j), (j, i)] {
                    let reach = hop_distances(&adj, &regs[k].members, &regs[k].root_buses);
                    let orphans: Vec<usize> = regs[k]
                        .members
                        .iter()
                        .copied()
                        .filter(|b| !reach.contains_key(b))
                        .collect();
                    for b in orphans {
                        regs[k].members.remove(&b);
                        regs[other].members.insert(b);
                    }
                }
                for k in [i, j] {
                    let firm = recommit(net, &regs[k].members, granularity);
                    regs[k].shortfall = regs[k].shortfall.max(firm - regs[k].capacity).max(0.0);
                    regs[k].committed_load = firm.min(regs[k].capacity);
                }
            }
        }
        guard += 1;
        if !touched || guard > 64 {
            break;
        }
    }

    // re-expansion with pooled surplus over unclaimed buses
    for i in 0..regs.len() {
        let claimed: BTreeSet<usize> = regs
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != i)
            .flat_map(|(_, r)| r.members.iter().copied())
            .collect();
        let scope = component_of(&adj, *regs[i].root_buses.iter().next().unwrap());
        let (members, committed, extra_short) = grow(
            net,
            &adj,
            &scope,
            &regs[i].root_buses,
            &regs[i].members,
            regs[i].capacity,
            granularity,
            &claimed,
        );
        regs[i].members = members;
        regs[i].committed_load = committed;
        regs[i].shortfall = regs[i].shortfall.max(extra_short);
    }
    regs
}

/// Full supply-range computation for one islanding candidate: stable output
/// per generator, one independent circle each, then overlap resolution.
pub fn max_supply_regions(
    net: &Network,
    region: &ReachableRegion,
    granularity: f64,
) -> Result<Vec<SupplyRegion>, CircleError> {
    let circles = independent_circles(net, region, granularity)?;
    Ok(merge_overlapping(net, circles, granularity))
}

/// One circle per generator of the region, each computed in isolation.
pub fn independent_circles(
    net: &Network,
    region: &ReachableRegion,
    granularity: f64,
) -> Result<Vec<SupplyRegion>, CircleError> {
    let mut out = Vec::new();
    for name in &region.dgs {
        let dg = net.dgs.iter().find(|d| &d.name == name).unwrap();
        let cap = stable_output(dg, granularity);
        let mut circle = expand_circle(net, &BTreeSet::from([dg.bus]), cap, granularity)?;
        circle.dgs.insert(dg.name.clone());
        out.push(circle);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_model::parse_case;
    use crate::reachability::islanding_candidates;

    const CASE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../cases/ieee69.case");

    fn ieee69_faulted() -> Network {
        crate::grid_model::load_case(CASE)
            .unwrap()
            .apply_faults(&[(3, 4)])
            .unwrap()
    }

    #[test]
    fn stable_output_examples() {
        let mk = |pred: f64, sigma: f64| DistributedGenerator {
            name: "G".into(),
            bus: 1,
            rated_capacity: 2000.0,
            predicted_output: pred,
            sigma,
        };
        assert_eq!(stable_output(&mk(1300.0, 0.0), 1.0), 1300.0);
        assert_eq!(stable_output(&mk(100.0, 100.0), 1.0), 0.0);
        assert_eq!(stable_output(&mk(50.7, 10.2), 1.0), 40.0); // 40.5 floored
    }

    #[test]
    fn unknown_origin_is_an_error() {
        let net = parse_case("[bus]\n1 0 0 2 0\n2 1 0 2 0\n[branch]\n1 2 0.1 0.1\n").unwrap();
        assert!(matches!(
            expand_circle(&net, &BTreeSet::from([99]), 10.0, 1.0),
            Err(CircleError::UnknownOrigin(99))
        ));
    }

    #[test]
    fn zero_capacity_keeps_only_the_origin() {
        let net = parse_case("[bus]\n1 0 0 2 0\n2 1 0 2 0\n[branch]\n1 2 0.1 0.1\n").unwrap();
        let r = expand_circle(&net, &BTreeSet::from([1]), 0.0, 1.0).unwrap();
        assert_eq!(r.members, BTreeSet::from([1]));
        assert_eq!(r.surplus(), 0.0);
    }

    #[test]
    fn huge_capacity_covers_the_whole_region() {
        let net = ieee69_faulted();
        let r = expand_circle(&net, &BTreeSet::from([52]), 1e9, 1.0).unwrap();
        // entire slack-free component (47 buses)
        assert_eq!(r.members.len(), 47);
    }

    #[test]
    fn root_heavier_than_capacity_is_admitted_with_shortfall() {
        let net = parse_case("[bus]\n1 500 0 2 0\n2 1 0 2 0\n[branch]\n1 2 0.1 0.1\n").unwrap();
        let r = expand_circle(&net, &BTreeSet::from([1]), 100.0, 1.0).unwrap();
        assert_eq!(r.members, BTreeSet::from([1]));
        assert_eq!(r.shortfall, 400.0);
        assert_eq!(r.surplus(), 0.0); // never negative
    }

    #[test]
    fn dg2_circle_matches_listed_area() {
        let net = ieee69_faulted();
        let r = expand_circle(&net, &BTreeSet::from([19]), 400.0, 1.0).unwrap();
        let want: BTreeSet<usize> = (9..=27).chain(55..=58).collect();
        assert_eq!(r.members, want);
        assert!(r.committed_load <= 400.0);
    }

    #[test]
    fn star_expansion_is_maximum_cardinality() {
        // centre 1, four leaves with 10 kW each; capacity fits exactly two.
        let net = parse_case(
            "[bus]\n1 0 0 2 0\n2 10 0 2 0\n3 10 0 2 0\n4 10 0 2 0\n5 10 0 2 0\n[branch]\n1 2 0.1 0.1\n1 3 0.1 0.1\n1 4 0.1 0.1\n1 5 0.1 0.1\n",
        )
        .unwrap();
        let r = expand_circle(&net, &BTreeSet::from([1]), 20.0, 1.0).unwrap();
        // brute force over all admissible member sets: capacity admits at
        // most two leaves, so best cardinality is 3 buses.
        let mut best = 0;
        for mask in 0u32..16 {
            let picked: Vec<usize> = (0..4).filter(|i| mask >> i & 1 == 1).map(|i| i + 2).collect();
            let load: f64 = picked.iter().map(|&b| net.bus(b).load_active).sum();
            if load <= 20.0 {
                best = best.max(picked.len() + 1);
            }
        }
        assert_eq!(best, 3);
        assert_eq!(r.members.len(), best);
        assert!(r.members.contains(&1));
    }

    #[test]
    fn disjoint_regions_pass_through_merge() {
        let net = ieee69_faulted();
        let a = expand_circle(&net, &BTreeSet::from([19]), 50.0, 1.0).unwrap();
        let b = expand_circle(&net, &BTreeSet::from([52]), 50.0, 1.0).unwrap();
        let merged = merge_overlapping(&net, vec![a.clone(), b.clone()], 1.0);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].members, a.members);
        assert_eq!(merged[1].members, b.members);
    }

    #[test]
    fn crossed_circles_pool_and_reexpand() {
        // 1(DG-A) - 2(0.4) - 3(DG-B) - 4(0.4); both capacities 0.4. Circle A
        // reaches bus 3 through the shared 0.4 bus, so the circles pool; the
        // union commits 0.4, the pooled surplus is 0.4 and the re-expansion
        // captures bus 4, leaving no surplus.
        let net = parse_case(
            "[bus]\n1 0 0 2 0\n2 0.4 0 2 0\n3 0 0 2 0\n4 0.4 0 2 0\n[branch]\n1 2 0.1 0.1\n2 3 0.1 0.1\n3 4 0.1 0.1\n[dg]\nA 1 0.4 0.4 0\nB 3 0.4 0.4 0\n",
        )
        .unwrap();
        let g = 0.1;
        let mut a = expand_circle(&net, &BTreeSet::from([1]), 0.4, g).unwrap();
        a.dgs.insert("A".into());
        let mut b = expand_circle(&net, &BTreeSet::from([3]), 0.4, g).unwrap();
        b.dgs.insert("B".into());
        assert!(a.members.contains(&3)); // swallows the other root
        let merged = merge_overlapping(&net, vec![a, b], g);
        assert_eq!(merged.len(), 1);
        let m = &merged[0];
        assert_eq!(m.members, BTreeSet::from([1, 2, 3, 4]));
        assert!((m.capacity - 0.8).abs() < 1e-9);
        assert!(m.surplus().abs() < 1e-9);
    }

    #[test]
    fn ieee69_dg1_dg4_pool_and_the_rest_stay_separate() {
        let net = ieee69_faulted();
        let cands = islanding_candidates(&net);
        assert_eq!(cands.len(), 1);
        let regions = max_supply_regions(&net, &cands[0], 1.0).unwrap();
        assert_eq!(regions.len(), 3);
        let merged = regions
            .iter()
            .find(|r| r.dgs.len() == 2)
            .expect("one pooled region");
        assert_eq!(merged.dgs, BTreeSet::from(["DG1".to_string(), "DG4".to_string()]));
        assert!((merged.capacity - 300.0).abs() < 1e-9);
        // final regions are pairwise disjoint
        for i in 0..regions.len() {
            for j in i + 1..regions.len() {
                assert!(regions[i].members.is_disjoint(&regions[j].members));
            }
        }
        // merging never loses buses: union of finals covers union of circles
        let circles = independent_circles(&net, &cands[0], 1.0).unwrap();
        let circle_union: BTreeSet<usize> =
            circles.iter().flat_map(|c| c.members.iter().copied()).collect();
        let final_union: BTreeSet<usize> =
            regions.iter().flat_map(|r| r.members.iter().copied()).collect();
        assert!(final_union.is_superset(&circle_union));
    }

    #[test]
    fn committed_never_exceeds_capacity() {
        let net = ieee69_faulted();
        let cands = islanding_candidates(&net);
        for r in max_supply_regions(&net, &cands[0], 1.0).unwrap() {
            assert!(
                r.committed_load <= r.capacity + 1e-9,
                "{:?} committed {} cap {}",
                r.dgs,
                r.committed_load,
                r.capacity
            );
        }
    }
}
