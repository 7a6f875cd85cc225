//! Network data model and case-file handling.
//!
//! A case describes a radial distribution feeder: buses with loads and
//! priorities, branches with impedances, and distributed generators. The
//! closed-branch topology must form a tree rooted at the slack bus; faults
//! are applied afterwards by marking branches as faulted.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Load priority class. Primary loads dominate the restoration objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Priority {
    Primary,
    Secondary,
    Tertiary,
}

impl Priority {
    /// Objective weight: 100 / 10 / 1.
    pub fn weight(self) -> f64 {
        match self {
            Priority::Primary => 100.0,
            Priority::Secondary => 10.0,
            Priority::Tertiary => 1.0,
        }
    }

    fn from_level(level: u32) -> Option<Self> {
        match level {
            1 => Some(Priority::Primary),
            2 => Some(Priority::Secondary),
            3 => Some(Priority::Tertiary),
            _ => None,
        }
    }

    fn level(self) -> u32 {
        match self {
            Priority::Primary => 1,
            Priority::Secondary => 2,
            Priority::Tertiary => 3,
        }
    }
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Priority::Primary => write!(f, "primary"),
            Priority::Secondary => write!(f, "secondary"),
            Priority::Tertiary => write!(f, "tertiary"),
        }
    }
}

/// A load bus. Ids are 1-based and contiguous within a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    /// Active load, kW.
    pub load_active: f64,
    /// Reactive load, kvar.
    pub load_reactive: f64,
    pub priority: Priority,
    /// Fraction of the active load that can be shed, in [0, 1].
    pub controllable_fraction: f64,
}

impl Bus {
    pub fn weight(&self) -> f64 {
        self.priority.weight()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchStatus {
    Closed,
    Faulted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Series resistance, ohm.
    pub resistance: f64,
    /// Series reactance, ohm.
    pub reactance: f64,
    /// Rated current, A. Current checks are skipped when absent.
    pub rated_current: Option<f64>,
    pub status: BranchStatus,
}

impl Branch {
    pub fn is_closed(&self) -> bool {
        self.status == BranchStatus::Closed
    }

    /// True if this branch connects `a` and `b` in either direction.
    pub fn joins(&self, a: usize, b: usize) -> bool {
        (self.from == a && self.to == b) || (self.from == b && self.to == a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedGenerator {
    pub name: String,
    pub bus: usize,
    /// Rated capacity, kW.
    pub rated_capacity: f64,
    /// Predicted output, kW.
    pub predicted_output: f64,
    /// Standard deviation of the output, kW.
    pub sigma: f64,
}

/// Immutable network; all mutating operations return new values.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub dgs: Vec<DistributedGenerator>,
    pub slack_bus: usize,
    /// Nominal voltage, kV.
    pub base_kv: f64,
    /// Per-unit voltage band (min, max).
    pub voltage_limits: (f64, f64),
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("I/O error reading case: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
}

impl Network {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Bus lookup by 1-based id. Ids are contiguous, so this is an index.
    pub fn bus(&self, id: usize) -> &Bus {
        &self.buses[id - 1]
    }

    /// Closed-branch neighbour lists, indexed by bus id.
    pub fn closed_adjacency(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for bus in &self.buses {
            adj.insert(bus.id, Vec::new());
        }
        for br in self.branches.iter().filter(|b| b.is_closed()) {
            adj.get_mut(&br.from).unwrap().push(br.to);
            adj.get_mut(&br.to).unwrap().push(br.from);
        }
        for v in adj.values_mut() {
            v.sort_unstable();
        }
        adj
    }

    /// Marks the given branches as faulted; the original network is unchanged.
    pub fn apply_faults(&self, faulted: &[(usize, usize)]) -> Result<Network, CaseError> {
        let mut net = self.clone();
        for &(a, b) in faulted {
            let hit = net.branches.iter_mut().find(|br| br.joins(a, b));
            match hit {
                Some(br) => br.status = BranchStatus::Faulted,
                None => {
                    return Err(CaseError::Validation(format!(
                        "unknown branch {a}-{b}: no such line in the case"
                    )))
                }
            }
        }
        Ok(net)
    }

    /// Sums active load per priority level.
    pub fn totals_by_level(&self) -> BTreeMap<Priority, f64> {
        let mut totals = BTreeMap::new();
        totals.insert(Priority::Primary, 0.0);
        totals.insert(Priority::Secondary, 0.0);
        totals.insert(Priority::Tertiary, 0.0);
        for bus in &self.buses {
            *totals.get_mut(&bus.priority).unwrap() += bus.load_active;
        }
        totals
    }

    pub fn total_active(&self) -> f64 {
        self.buses.iter().map(|b| b.load_active).sum()
    }

    pub fn total_reactive(&self) -> f64 {
        self.buses.iter().map(|b| b.load_reactive).sum()
    }

    /// Structural validation; every error names the offending entity.
    pub fn validate(&self) -> Result<(), CaseError> {
        let n = self.buses.len();
        if n == 0 {
            return Err(CaseError::Validation("case has no buses".into()));
        }
        let mut seen = HashSet::new();
        for bus in &self.buses {
            if bus.id == 0 || bus.id > n {
                return Err(CaseError::Validation(format!(
                    "bus id {} out of range 1..{}",
                    bus.id, n
                )));
            }
            if !seen.insert(bus.id) {
                return Err(CaseError::Validation(format!("duplicate bus id {}", bus.id)));
            }
            if bus.load_active < 0.0 {
                return Err(CaseError::Validation(format!(
                    "bus {} has negative active load",
                    bus.id
                )));
            }
            if !(0.0..=1.0).contains(&bus.controllable_fraction) {
                return Err(CaseError::Validation(format!(
                    "bus {} controllable fraction {} outside [0,1]",
                    bus.id, bus.controllable_fraction
                )));
            }
        }
        if self.slack_bus == 0 || self.slack_bus > n {
            return Err(CaseError::Validation(format!(
                "slack bus {} does not exist",
                self.slack_bus
            )));
        }
        for br in &self.branches {
            if br.from == br.to {
                return Err(CaseError::Validation(format!(
                    "branch {}-{} is a self loop",
                    br.from, br.to
                )));
            }
            for end in [br.from, br.to] {
                if end == 0 || end > n {
                    return Err(CaseError::Validation(format!(
                        "branch {}-{} references missing bus {}",
                        br.from, br.to, end
                    )));
                }
            }
        }
        for dg in &self.dgs {
            if dg.bus == 0 || dg.bus > n {
                return Err(CaseError::Validation(format!(
                    "generator {} sits on missing bus {}",
                    dg.name, dg.bus
                )));
            }
            if dg.sigma < 0.0 {
                return Err(CaseError::Validation(format!(
                    "generator {} has negative sigma",
                    dg.name
                )));
            }
            if dg.predicted_output < 0.0 || dg.predicted_output > dg.rated_capacity {
                return Err(CaseError::Validation(format!(
                    "generator {} predicted output {} outside [0, rated {}]",
                    dg.name, dg.predicted_output, dg.rated_capacity
                )));
            }
        }
        // The closed subgraph must be a tree spanning all buses: n-1 closed
        // branches and no cycle reachable from the slack.
        let closed: Vec<&Branch> = self.branches.iter().filter(|b| b.is_closed()).collect();
        if closed.len() != n - 1 {
            return Err(CaseError::Validation(format!(
                "closed topology has {} branches for {} buses; a radial case needs {}",
                closed.len(),
                n,
                n - 1
            )));
        }
        let adj = self.closed_adjacency();
        let mut visited = vec![false; n + 1];
        let mut stack = vec![self.slack_bus];
        visited[self.slack_bus] = true;
        let mut count = 0;
        while let Some(u) = stack.pop() {
            count += 1;
            for &v in &adj[&u] {
                if !visited[v] {
                    visited[v] = true;
                    stack.push(v);
                }
            }
        }
        if count != n {
            let orphan = (1..=n).find(|&b| !visited[b]).unwrap();
            return Err(CaseError::Validation(format!(
                "bus {orphan} is not connected to the slack bus {}",
                self.slack_bus
            )));
        }
        Ok(())
    }

    /// Serializes back to the case-file text format.
    pub fn to_case_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "[meta] base_kv={} slack={} umin={} umax={}\n\n[bus]\n",
            fmt_num(self.base_kv),
            self.slack_bus,
            fmt_num(self.voltage_limits.0),
            fmt_num(self.voltage_limits.1)
        ));
        for bus in &self.buses {
            out.push_str(&format!(
                "{}  {}  {}  {}  {}\n",
                bus.id,
                fmt_num(bus.load_active),
                fmt_num(bus.load_reactive),
                bus.priority.level(),
                fmt_num(bus.controllable_fraction)
            ));
        }
        out.push_str("\n[branch]\n");
        for br in &self.branches {
            match br.rated_current {
                Some(i) => out.push_str(&format!(
                    "{}  {}  {}  {}  {}\n",
                    br.from,
                    br.to,
                    fmt_num(br.resistance),
                    fmt_num(br.reactance),
                    fmt_num(i)
                )),
                None => out.push_str(&format!(
                    "{}  {}  {}  {}\n",
                    br.from,
                    br.to,
                    fmt_num(br.resistance),
                    fmt_num(br.reactance)
                )),
            }
        }
        out.push_str("\n[dg]\n");
        for dg in &self.dgs {
            out.push_str(&format!(
                "{}  {}  {}  {}  {}\n",
                dg.name,
                dg.bus,
                fmt_num(dg.rated_capacity),
                fmt_num(dg.predicted_output),
                fmt_num(dg.sigma)
            ));
        }
        out
    }
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Loads and validates a case file.
pub fn load_case(path: impl AsRef<Path>) -> Result<Network, CaseError> {
    let text = std::fs::read_to_string(path)?;
    parse_case(&text)
}

/// Parses the line-oriented case format; `#` starts a comment.
pub fn parse_case(text: &str) -> Result<Network, CaseError> {
    #[derive(PartialEq, Clone, Copy)]
    enum Section {
        None,
        Bus,
        Branch,
        Dg,
    }

    let mut base_kv = 12.66;
    let mut slack = 1usize;
    let mut umin = 0.95;
    let mut umax = 1.05;
    let mut buses: Vec<Bus> = Vec::new();
    let mut branches: Vec<Branch> = Vec::new();
    let mut dgs: Vec<DistributedGenerator> = Vec::new();
    let mut section = Section::None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let (name, tail) = rest.split_once(']').ok_or(CaseError::Parse {
                line,
                msg: "unterminated section header".into(),
            })?;
            section = match name.trim() {
                "meta" => Section::None,
                "bus" => Section::Bus,
                "branch" => Section::Branch,
                "dg" => Section::Dg,
                other => {
                    return Err(CaseError::Parse {
                        line,
                        msg: format!("unknown section [{other}]"),
                    })
                }
            };
            if name.trim() == "meta" {
                for kv in tail.split_whitespace() {
                    let (k, v) = kv.split_once('=').ok_or(CaseError::Parse {
                        line,
                        msg: format!("meta entry `{kv}` is not key=value"),
                    })?;
                    let parse = |v: &str| -> Result<f64, CaseError> {
                        v.parse().map_err(|_| CaseError::Parse {
                            line,
                            msg: format!("bad number `{v}` for meta key {k}"),
                        })
                    };
                    match k {
                        "base_kv" => base_kv = parse(v)?,
                        "slack" => {
                            slack = v.parse().map_err(|_| CaseError::Parse {
                                line,
                                msg: format!("bad slack bus `{v}`"),
                            })?
                        }
                        "umin" => umin = parse(v)?,
                        "umax" => umax = parse(v)?,
                        other => {
                            return Err(CaseError::Parse {
                                line,
                                msg: format!("unknown meta key `{other}`"),
                            })
                        }
                    }
                }
            }
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let numf = |i: usize| -> Result<f64, CaseError> {
            fields[i].parse().map_err(|_| CaseError::Parse {
                line,
                msg: format!("bad number `{}`", fields[i]),
            })
        };
        match section {
            Section::Bus => {
                if fields.len() != 5 {
                    return Err(CaseError::Parse {
                        line,
                        msg: format!("bus row needs 5 fields, got {}", fields.len()),
                    });
                }
                let id: usize = fields[0].parse().map_err(|_| CaseError::Parse {
                    line,
                    msg: format!("bad bus id `{}`", fields[0]),
                })?;
                let level: u32 = fields[3].parse().map_err(|_| CaseError::Parse {
                    line,
                    msg: format!("bad priority `{}`", fields[3]),
                })?;
                let priority = Priority::from_level(level).ok_or(CaseError::Parse {
                    line,
                    msg: format!("priority must be 1, 2 or 3, got {level}"),
                })?;
                buses.push(Bus {
                    id,
                    load_active: numf(1)?,
                    load_reactive: numf(2)?,
                    priority,
                    controllable_fraction: numf(4)?,
                });
            }
            Section::Branch => {
                if fields.len() != 4 && fields.len() != 5 {
                    return Err(CaseError::Parse {
                        line,
                        msg: format!("branch row needs 4 or 5 fields, got {}", fields.len()),
                    });
                }
                let ends: Vec<usize> = fields[..2]
                    .iter()
                    .map(|f| {
                        f.parse().map_err(|_| CaseError::Parse {
                            line,
                            msg: format!("bad bus id `{f}`"),
                        })
                    })
                    .collect::<Result<_, _>>()?;
                branches.push(Branch {
                    from: ends[0],
                    to: ends[1],
                    resistance: numf(2)?,
                    reactance: numf(3)?,
                    rated_current: if fields.len() == 5 { Some(numf(4)?) } else { None },
                    status: BranchStatus::Closed,
                });
            }
            Section::Dg => {
                if fields.len() != 5 {
                    return Err(CaseError::Parse {
                        line,
                        msg: format!("dg row needs 5 fields, got {}", fields.len()),
                    });
                }
                let bus: usize = fields[1].parse().map_err(|_| CaseError::Parse {
                    line,
                    msg: format!("bad dg bus `{}`", fields[1]),
                })?;
                dgs.push(DistributedGenerator {
                    name: fields[0].to_string(),
                    bus,
                    rated_capacity: numf(2)?,
                    predicted_output: numf(3)?,
                    sigma: numf(4)?,
                });
            }
            Section::None => {
                return Err(CaseError::Parse {
                    line,
                    msg: "data before any section header".into(),
                });
            }
        }
    }

    buses.sort_by_key(|b| b.id);
    let net = Network {
        buses,
        branches,
        dgs,
        slack_bus: slack,
        base_kv,
        voltage_limits: (umin, umax),
    };
    net.validate()?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus_case() -> &'static str {
        "[meta] base_kv=10 slack=1\n[bus]\n1 0 0 2 0\n2 10 5 1 0\n[branch]\n1 2 0.1 0.05\n"
    }

    #[test]
    fn parses_minimal_two_bus_case() {
        let net = parse_case(two_bus_case()).unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.branches.len(), 1);
        assert!(net.dgs.is_empty());
        assert_eq!(net.voltage_limits, (0.95, 1.05)); // defaults kept
        let totals = net.totals_by_level();
        assert_eq!(totals[&Priority::Primary], 10.0);
        assert_eq!(totals[&Priority::Secondary], 0.0);
    }

    #[test]
    fn rejects_self_loop() {
        let text = "[bus]\n1 0 0 2 0\n2 0 0 2 0\n3 1 0 2 0\n[branch]\n1 2 0.1 0.1\n3 3 0.1 0.1\n";
        let err = parse_case(text).unwrap_err();
        assert!(err.to_string().contains("3-3"), "{err}");
    }

    #[test]
    fn rejects_non_tree_topology() {
        let text = "[bus]\n1 0 0 2 0\n2 0 0 2 0\n3 0 0 2 0\n[branch]\n1 2 0.1 0.1\n2 3 0.1 0.1\n1 3 0.1 0.1\n";
        assert!(parse_case(text).is_err());
    }

    #[test]
    fn rejects_dangling_branch() {
        let text = "[bus]\n1 0 0 2 0\n2 0 0 2 0\n[branch]\n1 9 0.1 0.1\n";
        let err = parse_case(text).unwrap_err();
        assert!(err.to_string().contains("missing bus 9"), "{err}");
    }

    #[test]
    fn unknown_fault_is_an_error() {
        let net = parse_case(two_bus_case()).unwrap();
        let err = net.apply_faults(&[(1, 99)]).unwrap_err();
        assert!(err.to_string().contains("1-99"));
    }

    #[test]
    fn apply_faults_is_idempotent_and_pure() {
        let net = parse_case(two_bus_case()).unwrap();
        let f1 = net.apply_faults(&[(1, 2)]).unwrap();
        let f2 = f1.apply_faults(&[(1, 2)]).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(net.branches[0].status, BranchStatus::Closed); // original untouched
    }

    #[test]
    fn empty_fault_list_is_identity() {
        let net = parse_case(two_bus_case()).unwrap();
        assert_eq!(net, net.apply_faults(&[]).unwrap());
    }

    #[test]
    fn case_round_trips() {
        let net = parse_case(two_bus_case()).unwrap();
        let again = parse_case(&net.to_case_string()).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn totals_sum_to_network_total() {
        let net = parse_case(two_bus_case()).unwrap();
        let totals = net.totals_by_level();
        let sum: f64 = totals.values().sum();
        assert!((sum - net.total_active()).abs() < 1e-9);
    }

    const SHIPPED: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../cases/ieee69.case");

    #[test]
    fn shipped_case_loads_with_expected_size_and_totals() {
        let net = load_case(SHIPPED).unwrap();
        assert_eq!(net.n_buses(), 69);
        assert_eq!(net.branches.len(), 68);
        assert_eq!(net.dgs.len(), 6);
        assert_eq!(net.slack_bus, 1);
        assert!((net.base_kv - 12.66).abs() < 1e-9);
        assert!((net.total_active() - 3802.19).abs() < 1e-6);
        assert!((net.total_reactive() - 2694.69).abs() < 1e-6);
        let totals = net.totals_by_level();
        assert!((totals[&Priority::Primary] - 424.95).abs() < 1e-6);
        assert!((totals[&Priority::Secondary] - 2876.64).abs() < 1e-6);
        assert!((totals[&Priority::Tertiary] - 500.6).abs() < 1e-6);
    }

    #[test]
    fn shipped_case_single_fault_leaves_67_closed_branches() {
        let net = load_case(SHIPPED).unwrap().apply_faults(&[(3, 4)]).unwrap();
        let closed = net.branches.iter().filter(|b| b.is_closed()).count();
        assert_eq!(closed, 67);
        assert!(net
            .branches
            .iter()
            .any(|b| b.joins(3, 4) && b.status == BranchStatus::Faulted));
    }

    #[test]
    fn shipped_case_round_trips() {
        let net = load_case(SHIPPED).unwrap();
        let again = parse_case(&net.to_case_string()).unwrap();
        assert_eq!(net, again);
    }
}
