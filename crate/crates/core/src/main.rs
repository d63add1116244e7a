use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use visagent::bench::{
    aggregate, predict_avg_cost, run_saam, sweep_drift, write_sweep, AmortizedCostModel, BenchError, RunOptions,
    SweepSummary, SUMMARY_SCHEMA, SWEEP_TOLERANCE,
};
use visagent::ledger::Charges;
use visagent::runtime::{DumpFlags, PolicyKind, RunConfig};
use visagent::scenario::Scenario;

/// Resilient visual-agent runtime and GUI-drift simulator.
#[derive(Parser)]
#[command(name = "visagent", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Rpa,
    Vla,
    Hybrid,
    All,
}

impl PolicyArg {
    fn policies(self) -> Vec<PolicyKind> {
        match self {
            PolicyArg::Rpa => vec![PolicyKind::Rpa],
            PolicyArg::Vla => vec![PolicyKind::Vla],
            PolicyArg::Hybrid => vec![PolicyKind::Hybrid],
            PolicyArg::All => PolicyKind::ALL.to_vec(),
        }
    }
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Seed; defaults to the scenario's.
    #[arg(long)]
    seed: Option<u64>,
    /// Anchor match threshold; defaults to the scenario's.
    #[arg(long)]
    tau: Option<f64>,
    /// Output directory.
    #[arg(long, env = "VISAGENT_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run policies over the scenario's drift schedule.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        policy: PolicyArg,
        /// Records per policy; defaults to the scenario's.
        #[arg(long)]
        records: Option<u64>,
        /// Write raw detector and OCR output per frame.
        #[arg(long)]
        dump_perception: bool,
        /// Write fused affordances per frame.
        #[arg(long)]
        dump_affordances: bool,
        /// Write parsed layout trees.
        #[arg(long)]
        dump_tree: bool,
        /// Write scene graphs.
        #[arg(long)]
        dump_graph: bool,
        /// Start from this anchor cache instead of the scenario's warm start.
        #[arg(long)]
        cache_in: Option<PathBuf>,
        /// Save the hybrid policy's final anchor cache here.
        #[arg(long)]
        cache_out: Option<PathBuf>,
    },
    /// Measure mean latency and cost at several drift probabilities.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,0.001,0.01,0.1")]
        p_list: Vec<f64>,
        #[arg(long, default_value_t = 10_000)]
        episodes: u64,
        #[arg(long, value_enum, default_value = "hybrid")]
        policy: PolicyArg,
    },
    /// Print the amortized model's mean latency and cost per record.
    Predict {
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        /// Take charges and plan length from this scenario instead of the defaults.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Rebuild summary.json from the traces of an earlier run.
    Aggregate {
        #[arg(long)]
        scenario: PathBuf,
        /// Directory holding `<policy>.jsonl` traces.
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, env = "VISAGENT_OUT_DIR", default_value = "out")]
        out: PathBuf,
    },
}

enum Failure {
    Acceptance,
    Input(String),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        Failure::Input(e.to_string())
    }
}

fn load(path: &Path, tau: Option<f64>) -> Result<Scenario, Failure> {
    let mut s = Scenario::load(path).map_err(|e| Failure::Input(e.to_string()))?;
    if let Some(t) = tau {
        if !(0.0..=1.0).contains(&t) {
            return Err(Failure::Input(format!("--tau {t} is outside [0, 1]")));
        }
        s.policy_defaults.tau = t;
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            common,
            policy,
            records,
            dump_perception,
            dump_affordances,
            dump_tree,
            dump_graph,
            cache_in,
            cache_out,
        } => {
            let scenario = load(&common.scenario, common.tau)?;
            let records = records.unwrap_or(scenario.policy_defaults.records);
            if records == 0 {
                return Err(Failure::Input("--records must be at least 1".into()));
            }
            let cfg = RunConfig {
                seed: common.seed.unwrap_or(scenario.seed),
                dumps: DumpFlags { perception: dump_perception, affordances: dump_affordances, tree: dump_tree, graph: dump_graph },
                ..RunConfig::for_scenario(&scenario)
            };
            let opts = RunOptions { cache_in, cache_out };
            let summary = run_saam(&scenario, &policy.policies(), &cfg, records, &common.out, &opts)?;
            print!("{}", summary.table());
            println!("outputs in {}", common.out.display());
            summary.passed.then_some(()).ok_or(Failure::Acceptance)
        }
        Command::Sweep { common, p_list, episodes, policy } => {
            let scenario = load(&common.scenario, common.tau)?;
            let [policy] = policy.policies()[..] else {
                return Err(Failure::Input("sweep takes a single policy".into()));
            };
            if episodes == 0 {
                return Err(Failure::Input("--episodes must be at least 1".into()));
            }
            let seed = common.seed.unwrap_or(scenario.seed);
            let rows = sweep_drift(&scenario, policy, &p_list, episodes, seed)?;
            let passed = rows.iter().all(|r| r.within_tolerance);
            let summary = SweepSummary {
                schema: SUMMARY_SCHEMA,
                scenario: scenario.name.clone(),
                policy,
                seed,
                episodes_per_point: episodes,
                tolerance: SWEEP_TOLERANCE,
                rows,
                passed,
            };
            write_sweep(&common.out, &summary)?;
            print!("{}", summary.table());
            println!("outputs in {}", common.out.display());
            passed.then_some(()).ok_or(Failure::Acceptance)
        }
        Command::Predict { p, scenario } => {
            let (charges, steps) = match scenario {
                Some(path) => {
                    let s = load(&path, None)?;
                    (s.policy_defaults.charges, s.plan.len())
                }
                None => (Charges::default(), 1),
            };
            for p in p {
                let model = AmortizedCostModel::from_charges(&charges, steps, p)?;
                let (ms, cost) = predict_avg_cost(&model);
                println!("{}", serde_json::json!({"p": p, "predicted_ms": ms, "predicted_cost_units": cost}));
            }
            Ok(())
        }
        Command::Aggregate { scenario, traces, out } => {
            let scenario = load(&scenario, None)?;
            let summary = aggregate(&scenario, &traces)?;
            std::fs::create_dir_all(&out).map_err(|e| Failure::Input(format!("{}: {e}", out.display())))?;
            let path = out.join("summary.json");
            std::fs::write(&path, summary.to_json()).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            print!("{}", summary.table());
            summary.passed.then_some(()).ok_or(Failure::Acceptance)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Acceptance) => {
            eprintln!("acceptance checks failed");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
