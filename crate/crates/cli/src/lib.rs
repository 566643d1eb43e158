//! Command implementations behind the `encsched` binary.
//!
//! Every command writes CSV through [`encsched::table::Table`] and returns the
//! text meant for standard output, so the commands can be driven in-process.
//! Grids are cropped to indices `0..=N` (reachable indices never exceed the
//! horizon from the origin).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use encsched::config::{load_config, Problem, RunConfig, MAX_LADDER_DEPTH};
use encsched::evaluation::{
    compare_strategies, evaluate_policy_exact, simulate, solve_optimal_strategies, SimReport, Strategy,
};
use encsched::mdp::{backward_induction, certify_thresholds, prefix_threshold, suffix_threshold, PolicyTable, ValueTable};
use encsched::pomdp::{
    belief_tree_for, certify_belief_thresholds, pomdp_backward_induction, BeliefTree, BeliefValueTable,
    MAX_BELIEF_HORIZON,
};
use encsched::table::{format_number, Table};
use encsched::{Action, BeliefPolicy, Error, LadderState, Result};

/// Trials used by `compare`/`simulate` when neither flag nor config set them.
pub const DEFAULT_TRIALS: usize = 1000;
/// Seed used when neither flag nor config set one.
pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Parser)]
#[command(name = "encsched", version, about = "Optimal encryption schedules for remote state estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Eavesdropper covariance observed by the sensor.
    Known,
    /// Eavesdropper covariance tracked through a belief.
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Never,
    Always,
    OptimalKnown,
    OptimalUnknown,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve and write value, policy and threshold tables.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print one policy grid as ASCII and CSV.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Belief-tree node id (unknown mode); all nodes at depth k-1 if omitted.
        #[arg(long)]
        node: Option<usize>,
    },
    /// Compare the four strategies and write compare.csv.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo report for one strategy.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Certify the threshold structure of a policy CSV written by `solve`.
    Check {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Print the covariance ladder.
    Ladder {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        depth: usize,
    },
}

/// Runs one command and returns its standard output.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Solve { config, mode, out } => cmd_solve(&load_config(config)?, *mode, out),
        Command::Grid { config, k, mode, node } => cmd_grid(&load_config(config)?, *k, *mode, *node),
        Command::Compare { config, trials, seed, out } => {
            let cfg = load_config(config)?;
            let trials = trials.or(cfg.trials).unwrap_or(DEFAULT_TRIALS);
            let seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
            cmd_compare(&cfg, trials, seed, out)
        }
        Command::Simulate {
            config,
            strategy,
            trials,
            seed,
        } => {
            let cfg = load_config(config)?;
            let trials = trials.or(cfg.trials).unwrap_or(DEFAULT_TRIALS);
            let seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
            cmd_simulate(&cfg, *strategy, trials, seed)
        }
        Command::Ladder { config, depth } => cmd_ladder(&load_config(config)?, *depth),
        Command::Check { policy, mode } => cmd_check(&fs::read_to_string(policy)?, *mode),
    }
}

/// Largest index shown on the grids at time `k`.
fn shown_extent(problem: &Problem, solved_extent: usize) -> usize {
    solved_extent.min(problem.params.horizon())
}

fn write_table(dir: &Path, name: &str, table: &Table) -> Result<PathBuf> {
    let path = dir.join(name);
    table.write_to(fs::File::create(&path)?)?;
    Ok(path)
}

fn opt_index(m: Option<usize>) -> String {
    m.map_or_else(|| "none".to_owned(), |m| m.to_string())
}

fn path_string(path: &[Action]) -> String {
    path.iter().map(|a| char::from(b'0' + a.bit())).collect()
}

struct KnownSolution {
    values: ValueTable,
    policy: PolicyTable,
}

fn solve_known(problem: &Problem) -> Result<KnownSolution> {
    let (values, policy) = backward_induction(&problem.params, &problem.ladder)?;
    Ok(KnownSolution { values, policy })
}

struct UnknownSolution {
    tree: BeliefTree,
    values: BeliefValueTable,
    policy: BeliefPolicy,
}

fn solve_unknown(problem: &Problem) -> Result<UnknownSolution> {
    if problem.params.horizon() > MAX_BELIEF_HORIZON {
        return Err(Error::Config {
            field: "horizon".into(),
            reason: format!("belief mode supports horizons up to {MAX_BELIEF_HORIZON}"),
        });
    }
    let tree = belief_tree_for(&problem.params, &problem.ladder)?;
    let (values, policy) = pomdp_backward_induction(&problem.params, &problem.ladder, &tree)?;
    Ok(UnknownSolution { tree, values, policy })
}

/// Wide table over `(n, n_e)`: one row per remote index.
fn known_grid_table<T: Copy>(extent: usize, cell: impl Fn(LadderState) -> T, fmt: impl Fn(T) -> String) -> Result<Table> {
    let mut t = Table::new(std::iter::once("n".to_owned()).chain((0..=extent).map(|ne| format!("ne_{ne}"))));
    for n in 0..=extent {
        let row = std::iter::once(n.to_string()).chain((0..=extent).map(|ne| fmt(cell(LadderState::new(n, ne)))));
        t.push_row(row)?;
    }
    Ok(t)
}

/// Wide table over `(node, n)`: one row per belief node.
fn belief_grid_table<T: Copy>(
    nodes: impl Iterator<Item = usize>,
    extent: usize,
    cell: impl Fn(usize, usize) -> T,
    fmt: impl Fn(T) -> String,
) -> Result<Table> {
    let mut t = Table::new(std::iter::once("node".to_owned()).chain((0..=extent).map(|n| format!("n_{n}"))));
    for node in nodes {
        let row = std::iter::once(node.to_string()).chain((0..=extent).map(|n| fmt(cell(node, n))));
        t.push_row(row)?;
    }
    Ok(t)
}

fn bit(a: Action) -> String {
    a.bit().to_string()
}

/// Writes `value_k{K}.csv`, `policy_k{K}.csv` and `thresholds.csv` (plus
/// `beliefs.csv` in unknown mode). Threshold structure is certified on the
/// full solved tables before anything is written.
pub fn cmd_solve(cfg: &RunConfig, mode: Mode, out: &Path) -> Result<String> {
    let problem = cfg.problem()?;
    let horizon = problem.params.horizon();
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    match mode {
        Mode::Known => {
            let sol = solve_known(&problem)?;
            let thresholds = certify_thresholds(&sol.policy)?;
            let mut th = Table::new(["k", "n_e", "m"]);
            for k in 1..=horizon {
                let e = shown_extent(&problem, sol.policy.extent(k));
                let v = known_grid_table(e, |s| sol.values.get(k, s).expect("inside grid"), format_number)?;
                let p = known_grid_table(e, |s| sol.policy.action(k, s).expect("inside grid"), bit)?;
                written.push(write_table(out, &format!("value_k{k}.csv"), &v)?);
                written.push(write_table(out, &format!("policy_k{k}.csv"), &p)?);
                for ne in 0..=e {
                    th.push_row([k.to_string(), ne.to_string(), opt_index(thresholds.remote[k - 1][ne])])?;
                }
            }
            written.push(write_table(out, "thresholds.csv", &th)?);
        }
        Mode::Unknown => {
            let sol = solve_unknown(&problem)?;
            let thresholds = certify_belief_thresholds(&sol.policy)?;
            let mut th = Table::new(["k", "node", "m"]);
            for k in 1..=horizon {
                let e = shown_extent(&problem, sol.policy.extent(k));
                let nodes = BeliefTree::depth_range(k - 1);
                let v = belief_grid_table(nodes.clone(), e, |node, n| sol.values.get(k, node, n).expect("inside grid"), format_number)?;
                let p = belief_grid_table(nodes.clone(), e, |node, n| sol.policy.action(k, node, n).expect("inside grid"), bit)?;
                written.push(write_table(out, &format!("value_k{k}.csv"), &v)?);
                written.push(write_table(out, &format!("policy_k{k}.csv"), &p)?);
                for (local, node) in nodes.enumerate() {
                    th.push_row([k.to_string(), node.to_string(), opt_index(thresholds[k - 1][local])])?;
                }
            }
            written.push(write_table(out, "thresholds.csv", &th)?);
            let width = sol.tree.belief_len();
            let mut beliefs =
                Table::new(["node", "depth", "path"].into_iter().map(str::to_owned).chain((0..width).map(|i| format!("p_{i}"))));
            for (id, node) in sol.tree.nodes().iter().enumerate() {
                let row = [id.to_string(), node.depth.to_string(), path_string(&node.path)]
                    .into_iter()
                    .chain(node.belief.probs().iter().map(|&x| format_number(x)));
                beliefs.push_row(row)?;
            }
            written.push(write_table(out, "beliefs.csv", &beliefs)?);
        }
    }
    let mut msg = String::new();
    for path in written {
        writeln!(msg, "wrote {}", path.display()).expect("writing to a String");
    }
    Ok(msg)
}

/// ASCII rendering of a policy grid (`#` encrypt, `.` plain).
pub fn ascii_grid(row_label: &str, col_label: &str, rows: &[(String, Vec<Action>)], cols: &[String]) -> String {
    let row_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(1);
    let col_w = cols.iter().map(String::len).max().unwrap_or(1);
    let mut s = String::new();
    writeln!(s, "rows: {row_label} (ascending downward), columns: {col_label} (ascending rightward)").unwrap();
    writeln!(s, "# = encrypt, . = plain").unwrap();
    write!(s, "{:>row_w$} ", "").unwrap();
    for c in cols {
        write!(s, " {c:>col_w$}").unwrap();
    }
    s.push('\n');
    for (label, cells) in rows {
        write!(s, "{label:>row_w$} ").unwrap();
        for a in cells {
            let ch = if a.is_encrypt() { '#' } else { '.' };
            write!(s, " {ch:>col_w$}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// ASCII grid for time `k`, followed by the same grid as CSV.
pub fn cmd_grid(cfg: &RunConfig, k: usize, mode: Mode, node: Option<usize>) -> Result<String> {
    let horizon = cfg.horizon;
    if k == 0 || k > horizon {
        return Err(Error::Config {
            field: "k".into(),
            reason: format!("must lie in 1..={horizon}, got {k}"),
        });
    }
    let problem = cfg.problem()?;
    let mut out = String::new();
    match mode {
        Mode::Known => {
            if node.is_some() {
                return Err(Error::Config {
                    field: "node".into(),
                    reason: "only meaningful in unknown mode".into(),
                });
            }
            let sol = solve_known(&problem)?;
            let e = shown_extent(&problem, sol.policy.extent(k));
            let rows: Vec<(String, Vec<Action>)> = (0..=e)
                .map(|n| (n.to_string(), (0..=e).map(|ne| sol.policy.action(k, LadderState::new(n, ne)).expect("inside grid")).collect()))
                .collect();
            let cols: Vec<String> = (0..=e).map(|ne| ne.to_string()).collect();
            writeln!(out, "k={k}, eavesdropper covariance known").unwrap();
            out.push_str(&ascii_grid("n of h^n(P*)", "n_e of h^{n_e}(P*)", &rows, &cols));
            out.push('\n');
            let t = known_grid_table(e, |s| sol.policy.action(k, s).expect("inside grid"), bit)?;
            out.push_str(&t.to_csv_string());
        }
        Mode::Unknown => {
            let sol = solve_unknown(&problem)?;
            let range = BeliefTree::depth_range(k - 1);
            let nodes: Vec<usize> = match node {
                Some(id) if range.contains(&id) => vec![id],
                Some(id) => {
                    return Err(Error::Config {
                        field: "node".into(),
                        reason: format!("node {id} is not at depth {} (ids {}..={})", k - 1, range.start, range.end - 1),
                    })
                }
                None => range.collect(),
            };
            let e = shown_extent(&problem, sol.policy.extent(k));
            // Transposed relative to the CSV so that n runs downward.
            let rows: Vec<(String, Vec<Action>)> = (0..=e)
                .map(|n| (n.to_string(), nodes.iter().map(|&id| sol.policy.action(k, id, n).expect("inside grid")).collect()))
                .collect();
            let cols: Vec<String> = nodes.iter().map(|id| id.to_string()).collect();
            writeln!(out, "k={k}, eavesdropper covariance unknown (columns are belief nodes)").unwrap();
            for &id in &nodes {
                writeln!(out, "node {id}: path [{}]", path_string(&sol.tree.node(id).path)).unwrap();
            }
            out.push_str(&ascii_grid("n of h^n(P*)", "belief node id", &rows, &cols));
            out.push('\n');
            let t = belief_grid_table(nodes.iter().copied(), e, |id, n| sol.policy.action(k, id, n).expect("inside grid"), bit)?;
            out.push_str(&t.to_csv_string());
        }
    }
    Ok(out)
}

const REPORT_HEADER: [&str; 16] = [
    "strategy",
    "sum_tr_P",
    "sum_tr_Pe",
    "sum_a",
    "J_mc",
    "J_exact",
    "se_sum_tr_P",
    "se_sum_tr_Pe",
    "se_sum_a",
    "se_J",
    "exact_sum_tr_P",
    "exact_sum_tr_Pe",
    "exact_sum_a",
    "trials",
    "seed",
    "policy",
];

fn report_row(label: &str, policy: &str, mc: &SimReport, exact: &SimReport) -> Vec<String> {
    let f = format_number;
    vec![
        label.to_owned(),
        f(mc.sum_remote_trace),
        f(mc.sum_eve_trace),
        f(mc.sum_actions),
        f(mc.total_cost),
        f(exact.total_cost),
        f(mc.se_remote),
        f(mc.se_eve),
        f(mc.se_actions),
        f(mc.se_cost),
        f(exact.sum_remote_trace),
        f(exact.sum_eve_trace),
        f(exact.sum_actions),
        mc.trials.to_string(),
        mc.seed.map_or_else(String::new, |s| s.to_string()),
        policy.to_owned(),
    ]
}

/// The four-strategy comparison as a table.
pub fn compare_table(cfg: &RunConfig, trials: usize, seed: u64) -> Result<Table> {
    let problem = cfg.problem()?;
    let rows = compare_strategies(&problem.params, &problem.ladder, trials, seed)?;
    let mut t = Table::new(REPORT_HEADER);
    for row in &rows {
        t.push_row(report_row(row.label, row.strategy.name(), &row.monte_carlo, &row.exact))?;
    }
    Ok(t)
}

/// Writes `compare.csv` into `out` and echoes it.
pub fn cmd_compare(cfg: &RunConfig, trials: usize, seed: u64, out: &Path) -> Result<String> {
    if trials == 0 {
        return Err(Error::Config {
            field: "trials".into(),
            reason: "must be at least 1".into(),
        });
    }
    let t = compare_table(cfg, trials, seed)?;
    fs::create_dir_all(out)?;
    write_table(out, "compare.csv", &t)?;
    Ok(t.to_csv_string())
}

pub fn cmd_simulate(cfg: &RunConfig, which: StrategyArg, trials: usize, seed: u64) -> Result<String> {
    let problem = cfg.problem()?;
    let (p, ladder) = (&problem.params, &problem.ladder);
    let strategy = match which {
        StrategyArg::Never => Strategy::Never,
        StrategyArg::Always => Strategy::Always,
        StrategyArg::OptimalKnown => solve_optimal_strategies(p, ladder)?.0,
        StrategyArg::OptimalUnknown => {
            if p.horizon() > MAX_BELIEF_HORIZON {
                return Err(Error::Config {
                    field: "horizon".into(),
                    reason: format!("belief mode supports horizons up to {MAX_BELIEF_HORIZON}"),
                });
            }
            solve_optimal_strategies(p, ladder)?.1
        }
    };
    let mc = simulate(&strategy, p, ladder, trials, seed)?;
    let exact = evaluate_policy_exact(&strategy, p, ladder)?;
    let mut t = Table::new(REPORT_HEADER);
    t.push_row(report_row(strategy.name(), strategy.name(), &mc, &exact))?;
    Ok(t.to_csv_string())
}

/// `index, trace, P_ij…` for rungs `0..=depth`.
pub fn cmd_ladder(cfg: &RunConfig, depth: usize) -> Result<String> {
    if depth > MAX_LADDER_DEPTH {
        return Err(Error::Config {
            field: "depth".into(),
            reason: format!("must not exceed {MAX_LADDER_DEPTH}"),
        });
    }
    let problem = cfg.problem_with_depth(depth)?;
    let dim = problem.params.model.state_dim();
    let header = ["index".to_owned(), "trace".to_owned()]
        .into_iter()
        .chain((0..dim).flat_map(|i| (0..dim).map(move |j| format!("P_{i}{j}"))));
    let mut t = Table::new(header);
    for (idx, rung) in problem.ladder.rungs().iter().enumerate() {
        let row = [idx.to_string(), format_number(problem.ladder.trace(idx))]
            .into_iter()
            .chain((0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|ij| format_number(rung[ij])));
        t.push_row(row)?;
    }
    Ok(t.to_csv_string())
}

fn policy_bits(table: &Table) -> Result<Vec<Vec<u8>>> {
    if table.header().len() < 2 {
        return Err(Error::Config {
            field: "policy".into(),
            reason: "expected a label column and at least one policy column".into(),
        });
    }
    table
        .rows()
        .iter()
        .enumerate()
        .map(|(r, row)| {
            row[1..]
                .iter()
                .enumerate()
                .map(|(c, cell)| match cell.as_str() {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => Err(Error::Config {
                        field: format!("policy.row{}.{}", r + 1, table.header()[c + 1]),
                        reason: format!("expected 0 or 1, got {other:?}"),
                    }),
                })
                .collect()
        })
        .collect()
}

/// Verifies a `policy_k{K}.csv` grid: in known mode every column must encrypt
/// on a prefix of `n` and every row on a suffix of `n_e`; in unknown mode
/// every belief-node row must encrypt on a prefix of `n`.
pub fn cmd_check(csv_text: &str, mode: Mode) -> Result<String> {
    let table = Table::from_csv_str(csv_text)?;
    let bits = policy_bits(&table)?;
    let violation = |context: String, slice: Vec<u8>| Error::StructureViolation { context, slice };
    let mut out = Table::new(["slice", "threshold"]);
    for (row, label) in bits.iter().zip(table.rows().iter().map(|r| &r[0])) {
        let m = match mode {
            Mode::Known => suffix_threshold(row).map_err(|_| violation(format!("row {label} (expected a suffix in n_e)"), row.clone()))?,
            Mode::Unknown => prefix_threshold(row).map_err(|_| violation(format!("node {label} (expected a prefix in n)"), row.clone()))?,
        };
        let name = if mode == Mode::Known { format!("n={label}") } else { format!("node={label}") };
        out.push_row([name, opt_index(m)])?;
    }
    if mode == Mode::Known {
        let width = table.header().len() - 1;
        for col in 0..width {
            let slice: Vec<u8> = bits.iter().map(|r| r[col]).collect();
            let header = &table.header()[col + 1];
            let m = prefix_threshold(&slice).map_err(|_| violation(format!("column {header} (expected a prefix in n)"), slice))?;
            out.push_row([header.clone(), opt_index(m)])?;
        }
    }
    Ok(out.to_csv_string())
}

/// Message printed on failure. Structure violations carry the offending slice.
pub fn describe_error(err: &Error) -> String {
    match err {
        Error::StructureViolation { context, slice } => {
            let bits: String = slice.iter().map(|b| char::from(b'0' + b)).collect();
            format!("threshold structure violated\n  at: {context}\n  counterexample slice: {bits}")
        }
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_grid_marks_encrypt_cells() {
        let rows = vec![
            ("0".to_owned(), vec![Action::Encrypt, Action::Encrypt]),
            ("1".to_owned(), vec![Action::Plain, Action::Encrypt]),
        ];
        let text = ascii_grid("n", "n_e", &rows, &["0".into(), "1".into()]);
        let body: Vec<&str> = text.lines().skip(3).collect();
        assert_eq!(body, ["0  # #", "1  . #"]);
    }

    #[test]
    fn check_accepts_staircase_and_reports_thresholds() {
        let out = cmd_check("n,ne_0,ne_1,ne_2\n0,1,1,1\n1,0,1,1\n2,0,0,1\n", Mode::Known).unwrap();
        let t = Table::from_csv_str(&out).unwrap();
        assert_eq!(t.rows()[0], ["n=0", "0"]);
        assert_eq!(t.rows()[3], ["ne_0", "0"]);
        assert_eq!(t.rows()[5], ["ne_2", "2"]);
    }

    #[test]
    fn check_rejects_non_thresholds() {
        let err = cmd_check("node,n_0,n_1,n_2\n0,0,1,0\n", Mode::Unknown).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(describe_error(&err).contains("counterexample slice: 010"));
        // A column that is not a prefix in n, with every row a valid suffix.
        let err = cmd_check("n,ne_0,ne_1\n0,0,1\n1,1,1\n", Mode::Known).unwrap_err();
        assert!(describe_error(&err).contains("column ne_0"));
    }

    #[test]
    fn check_rejects_bad_cells() {
        let err = cmd_check("n,ne_0\n0,2\n", Mode::Known).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("policy.row1.ne_0"));
        assert_eq!(cmd_check("n\n0\n", Mode::Known).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn cli_parses_spec_commands() {
        let cli = Cli::try_parse_from(["encsched", "grid", "--config", "c.json", "--k", "5", "--mode", "unknown", "--node", "3"]).unwrap();
        assert!(matches!(cli.command, Command::Grid { k: 5, mode: Mode::Unknown, node: Some(3), .. }));
        let cli = Cli::try_parse_from(["encsched", "simulate", "--config", "c.json", "--strategy", "optimal-known", "--trials", "10", "--seed", "1"]).unwrap();
        assert!(matches!(cli.command, Command::Simulate { strategy: StrategyArg::OptimalKnown, trials: Some(10), .. }));
        assert!(Cli::try_parse_from(["encsched", "solve", "--config", "c.json", "--mode", "maybe", "--out", "o"]).is_err());
    }
}
