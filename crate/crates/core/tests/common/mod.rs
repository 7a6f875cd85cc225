//! Shared helpers: seeded random radial networks for solver certification.

use std::collections::BTreeSet;

use rand::Rng;

use islander_core::grid_model::{Branch, BranchStatus, Bus, Network, Priority};
use islander_core::partition_solver::CorrectedRegion;
use islander_core::power_circle::SupplyRegion;

/// Random radial network with at most `max_buses` buses. Bus 1 carries no
/// load so it can always root a region; at most six buses are controllable
/// to keep the brute-force oracle fast.
pub fn random_radial(rng: &mut impl Rng, max_buses: usize) -> Network {
    let n = rng.gen_range(2..=max_buses);
    let mut buses = Vec::with_capacity(n);
    let mut controllables = 0;
    for id in 1..=n {
        let load = if id == 1 || rng.gen_bool(0.3) {
            0.0
        } else {
            (rng.gen_range(1.0..120.0) * 100.0f64).round() / 100.0
        };
        let priority = match rng.gen_range(0..3) {
            0 => Priority::Primary,
            1 => Priority::Secondary,
            _ => Priority::Tertiary,
        };
        let controllable_fraction = if controllables < 6 && rng.gen_bool(0.4) {
            controllables += 1;
            *[1.0, 1.0, 0.5, 0.3].get(rng.gen_range(0..4)).unwrap()
        } else {
            0.0
        };
        buses.push(Bus {
            id,
            load_active: load,
            load_reactive: load * 0.6,
            priority,
            controllable_fraction,
        });
    }
    let mut branches = Vec::with_capacity(n - 1);
    for id in 2..=n {
        let parent = rng.gen_range(1..id);
        branches.push(Branch {
            from: parent,
            to: id,
            resistance: rng.gen_range(0.01..0.5),
            reactance: rng.gen_range(0.01..0.3),
            rated_current: None,
            status: BranchStatus::Closed,
        });
    }
    Network {
        buses,
        branches,
        dgs: Vec::new(),
        slack_bus: 1,
        base_kv: 12.66,
        voltage_limits: (0.95, 1.05),
    }
}

/// Wraps the whole network as one supply region rooted at bus 1.
pub fn whole_network_region(net: &Network, rng: &mut impl Rng) -> CorrectedRegion {
    let total: f64 = net.buses.iter().map(|b| b.load_active).sum();
    let capacity = (rng.gen_range(0.0..=total.max(1.0) * 0.9)).floor();
    CorrectedRegion {
        region: SupplyRegion {
            dgs: BTreeSet::new(),
            root_buses: BTreeSet::from([1]),
            capacity,
            members: net.buses.iter().map(|b| b.id).collect(),
            committed_load: 0.0,
            shortfall: 0.0,
        },
        committed: BTreeSet::from([1]),
    }
}
