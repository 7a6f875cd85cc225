//! `islander` — islanding partition planner for radial feeders.
//!
//! Loads a case, applies line faults, runs the restoration pipeline and
//! prints the island and restoration tables (or JSON / DOT).
//!
//! Exit codes: 0 success, 1 error, 2 constraint violations.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use islander_core::grid_model::{load_case, Network};
use islander_core::report::{run_pipeline, PartitionReport, PipelineOptions, PipelineOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Dot,
}

#[derive(Parser, Debug)]
#[command(
    name = "islander",
    about = "Islanding partition planner for radial distribution feeders",
    version
)]
struct Args {
    /// Case file describing the feeder.
    case: String,

    /// Faulted line as FROM-TO, e.g. --fault 3-4. Repeatable.
    #[arg(long = "fault", value_name = "A-B")]
    faults: Vec<String>,

    /// Power granularity in kW for rounding and the solver tables.
    #[arg(long, default_value_t = 1.0)]
    granularity: f64,

    /// Skip the critical-load region correction (ablation).
    #[arg(long)]
    no_correction: bool,

    /// Cross-check small regions against the brute-force oracle.
    #[arg(long)]
    oracle: bool,

    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,

    /// Override the lower per-unit voltage limit.
    #[arg(long)]
    umin: Option<f64>,

    /// Override the upper per-unit voltage limit.
    #[arg(long)]
    umax: Option<f64>,

    /// Dump the post-fault adjacency and reachability matrices as 0/1 grids
    /// and exit.
    #[arg(long)]
    dump_reachability: bool,
}

/// Writes to stdout, ignoring a closed pipe (e.g. piping into `head`).
fn emit(text: &str) {
    use std::io::Write as _;
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn parse_fault(text: &str) -> Result<(usize, usize), String> {
    let (a, b) = text
        .split_once('-')
        .ok_or_else(|| format!("fault `{text}` is not of the form A-B"))?;
    let a = a.trim().parse().map_err(|_| format!("bad bus id `{a}`"))?;
    let b = b.trim().parse().map_err(|_| format!("bad bus id `{b}`"))?;
    Ok((a, b))
}

/// Compresses a sorted bus list into range notation: 4-9,36-37,40-41.
fn bus_ranges(buses: &[usize]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < buses.len() {
        let start = buses[i];
        let mut end = start;
        while i + 1 < buses.len() && buses[i + 1] == end + 1 {
            i += 1;
            end = buses[i];
        }
        if !out.is_empty() {
            out.push(',');
        }
        if start == end {
            let _ = write!(out, "{start}");
        } else {
            let _ = write!(out, "{start}-{end}");
        }
        i += 1;
    }
    out
}

fn render_table(report: &PartitionReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "case: {}", report.case);
    let faults: Vec<String> = report
        .faults
        .iter()
        .map(|(a, b)| format!("{a}-{b}"))
        .collect();
    let _ = writeln!(
        out,
        "faults: {}",
        if faults.is_empty() { "none".into() } else { faults.join(", ") }
    );
    if !report.grid_connected_dgs.is_empty() {
        let _ = writeln!(
            out,
            "grid-connected generators: {}",
            report.grid_connected_dgs.join(", ")
        );
    }
    for note in &report.notes {
        let _ = writeln!(out, "note: {note}");
    }
    if !report.islands.is_empty() {
        let _ = writeln!(out, "\nisland division results");
        let _ = writeln!(out, "{:<8}{:<12}{:<14}{}", "island", "generators", "restored kW", "buses");
        for isl in &report.islands {
            let _ = writeln!(
                out,
                "{:<8}{:<12}{:<14}{}",
                isl.id,
                isl.dgs.join(","),
                format!("{:.2}", isl.restored_kw),
                bus_ranges(&isl.buses)
            );
        }
        let _ = writeln!(out, "\nload restoration by level");
        let _ = writeln!(
            out,
            "{:<12}{:>12}{:>14}{:>9}",
            "level", "total kW", "restored kW", "ratio %"
        );
        for (level, row) in &report.per_level {
            let _ = writeln!(
                out,
                "{:<12}{:>12.2}{:>14.2}{:>9}",
                level, row.total_kw, row.restored_kw, row.ratio_percent
            );
        }
    }
    if !report.violations.is_empty() {
        let _ = writeln!(out, "\nconstraint violations");
        for v in &report.violations {
            let _ = writeln!(out, "island {}: {:?}", v.island, v.violation);
        }
    } else if !report.islands.is_empty() {
        let _ = writeln!(
            out,
            "\nall island flows within limits ({} unrated branches skipped)",
            report.skipped_current_checks
        );
    }
    out
}

fn render_dot(net: &Network, outcome: &PipelineOutcome) -> String {
    let mut out = String::from("graph islands {\n  node [shape=circle];\n");
    let mut clustered: BTreeSet<usize> = BTreeSet::new();
    for (i, isl) in outcome.islands.iter().enumerate() {
        let _ = writeln!(out, "  subgraph cluster_{} {{", i + 1);
        let _ = writeln!(
            out,
            "    label=\"island {} ({})\";",
            i + 1,
            isl.dgs.iter().cloned().collect::<Vec<_>>().join(",")
        );
        for &b in &isl.energized {
            let _ = writeln!(out, "    {b};");
            clustered.insert(b);
        }
        let _ = writeln!(out, "  }}");
    }
    for br in &net.branches {
        if br.is_closed() {
            let _ = writeln!(out, "  {} -- {};", br.from, br.to);
        } else {
            let _ = writeln!(
                out,
                "  {} -- {} [style=dashed, color=red, label=\"fault\"];",
                br.from, br.to
            );
        }
    }
    out.push_str("}\n");
    out
}

fn run(args: &Args) -> Result<ExitCode, String> {
    let mut faults = Vec::new();
    for f in &args.faults {
        faults.push(parse_fault(f)?);
    }
    if args.granularity <= 0.0 {
        return Err("granularity must be positive".into());
    }
    let mut net = load_case(&args.case).map_err(|e| e.to_string())?;
    if let Some(umin) = args.umin {
        net.voltage_limits.0 = umin;
    }
    if let Some(umax) = args.umax {
        net.voltage_limits.1 = umax;
    }
    let net = net.apply_faults(&faults).map_err(|e| e.to_string())?;
    if args.dump_reachability {
        use islander_core::reachability::{adjacency_matrix, reachability_matrix};
        let a = adjacency_matrix(&net);
        emit(&format!(
            "# adjacency\n{}\n# reachability\n{}",
            a.to_grid_string(),
            reachability_matrix(&a).to_grid_string()
        ));
        return Ok(ExitCode::SUCCESS);
    }
    let opts = PipelineOptions {
        granularity: args.granularity,
        correction: !args.no_correction,
        oracle_check: args.oracle,
        case_name: args.case.clone(),
    };
    let outcome = run_pipeline(&net, &opts).map_err(|e| e.to_string())?;
    let text = match args.format {
        Format::Table => render_table(&outcome.report),
        Format::Json => {
            let mut json =
                serde_json::to_string_pretty(&outcome.report).map_err(|e| e.to_string())?;
            json.push('\n');
            json
        }
        Format::Dot => render_dot(&net, &outcome),
    };
    emit(&text);
    if outcome.report.violations.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            // clap prints its own help/version through the error
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&args) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
