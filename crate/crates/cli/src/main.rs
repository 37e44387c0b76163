mod args;
mod config;
mod output;

use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use prefrank_core::anomaly::{self, DetectorConfig};
use prefrank_core::bt::IntervalMethod;
use prefrank_core::leaderboard::{self, build_leaderboard, RankOptions, ScoreMethod};
use prefrank_core::model::{BattleLog, BothBadPolicy, ModelRegistry, ParseOptions};
use prefrank_core::np_bt::NpBtReading;
use prefrank_core::sampler::{self, SamplerConfig, SamplerState};
use prefrank_core::seeds::derive_seed;
use prefrank_core::sim::{self, EfficiencyConfig, PlotRow, SamplingPolicy, SimConfig};
use prefrank_core::win_matrix::estimate_win_matrix;

use args::*;
use output::{json_bytes, read_input, InputDigest, Manifest, Table};

struct Run {
    files: Vec<(String, Vec<u8>)>,
    inputs: Vec<InputDigest>,
}

fn load_log(input: &LogInput, inputs: &mut Vec<InputDigest>) -> Result<BattleLog> {
    let registry = match &input.registry {
        Some(path) => {
            let (bytes, d) = read_input(path)?;
            inputs.push(d);
            Some(
                ModelRegistry::from_json_reader(bytes.as_slice())
                    .with_context(|| format!("reading {}", path.display()))?,
            )
        }
        None => None,
    };
    let (bytes, d) = read_input(&input.log)?;
    inputs.push(d);
    let both_bad = match input.both_bad {
        BothBad::Tie => BothBadPolicy::Tie,
        BothBad::Exclude => BothBadPolicy::Exclude,
    };
    BattleLog::parse(bytes.as_slice(), &ParseOptions { registry, both_bad })
        .with_context(|| format!("parsing {}", input.log.display()))
}

fn rank_options(s: &RankSettings, seed: u64) -> RankOptions {
    RankOptions {
        alpha: s.alpha,
        method: match s.method {
            Method::Bt => ScoreMethod::Bt,
            Method::Npbt => ScoreMethod::Npbt,
        },
        interval: match s.interval {
            Interval::Sandwich => IntervalMethod::Sandwich,
            Interval::Bootstrap => IntervalMethod::Bootstrap,
            Interval::Delta => IntervalMethod::Delta,
        },
        multiplicity: match s.multiplicity {
            Multiplicity::None => leaderboard::Multiplicity::None,
            Multiplicity::Chi2 => leaderboard::Multiplicity::Chi2,
        },
        ridge: s.ridge,
        boot_reps: s.boot_reps,
        seed: derive_seed(seed, "rank", 0),
        np_reading: match s.np_reading {
            NpReading::PathAverage => NpBtReading::PathAverage,
            NpReading::LiteralOdds => NpBtReading::LiteralOdds,
        },
        full_covariance: s.full_covariance,
    }
}

fn sampler_config(s: &SamplerSettings) -> SamplerConfig {
    SamplerConfig {
        floor: s.floor,
        warmup_rounds: s.warmup_rounds,
        variance: match s.variance {
            VarianceSource::Ipw => sampler::VarianceSource::Ipw,
            VarianceSource::PerVote => sampler::VarianceSource::PerVote,
        },
    }
}

fn plot_table(rows: &[PlotRow]) -> Table {
    let mut t = Table::new(vec!["x", "series", "y", "y_lo", "y_hi"]);
    for r in rows {
        t.push(vec![r.x.into(), r.series.clone().into(), r.y.into(), r.y_lo.into(), r.y_hi.into()]);
    }
    t
}

fn rank(a: &RankArgs, seed: u64, format: Format) -> Result<Run> {
    let mut inputs = Vec::new();
    let log = load_log(&a.input, &mut inputs)?;
    let board = build_leaderboard(&log, &rank_options(&a.settings, seed))?;
    let mut files = Vec::new();
    match format {
        Format::Json => files.push(("leaderboard.json".to_string(), json_bytes(&board))),
        Format::Csv => {
            let mut t =
                Table::new(vec!["model", "xi", "score_centered", "lo", "hi", "rank_lower", "rank_upper", "n_battles"]);
            for e in &board.entries {
                t.push(vec![
                    e.model.clone().into(),
                    e.xi.into(),
                    e.score_centered.into(),
                    e.lo.into(),
                    e.hi.into(),
                    e.rank_lower.into(),
                    e.rank_upper.into(),
                    e.n_battles.into(),
                ]);
            }
            files.push(t.render("leaderboard", format));
        }
    }
    let mut chart = Table::new(vec!["model", "series", "y", "y_lo", "y_hi"]);
    for r in &board.chart {
        chart.push(vec![r.model.clone().into(), r.series.into(), r.y.into(), r.y_lo.into(), r.y_hi.into()]);
    }
    files.push(chart.render("intervals", format));
    Ok(Run { files, inputs })
}

fn winmatrix(a: &WinMatrixArgs, format: Format) -> Result<Run> {
    let mut inputs = Vec::new();
    let log = load_log(&a.input, &mut inputs)?;
    let est = estimate_win_matrix(&log, a.alpha)?;
    let reg = log.registry();
    let mut t = Table::new(vec!["pair_first", "pair_second", "theta_hat", "sigma_hat", "n_obs", "lo", "hi"]);
    for (i, pair) in est.pairs.iter().enumerate() {
        let iv = est.intervals[i];
        t.push(vec![
            reg.name(pair.first()).into(),
            reg.name(pair.second()).into(),
            est.theta_hat[i].into(),
            est.sigma_hat[i].into(),
            est.n_obs[i].into(),
            iv.lo.into(),
            iv.hi.into(),
        ]);
    }
    Ok(Run { files: vec![t.render("winmatrix", format)], inputs })
}

fn sample_plan(a: &SamplePlanArgs, seed: u64, format: Format) -> Result<Run> {
    let mut inputs = Vec::new();
    let log = load_log(&a.input, &mut inputs)?;
    let state = SamplerState::from_log(&log, sampler_config(&a.sampler), derive_seed(seed, "sample-plan", 0))?;
    let reg = log.registry();
    let mut t = Table::new(vec!["rank", "pair", "probability"]);
    for (i, (pair, p)) in state.plan(a.k).into_iter().enumerate() {
        let name = format!("{} vs {}", reg.name(pair.first()), reg.name(pair.second()));
        t.push(vec![(i + 1).into(), name.into(), p.into()]);
    }
    Ok(Run { files: vec![t.render("plan", format)], inputs })
}

fn detect(a: &DetectArgs, format: Format) -> Result<Run> {
    let secret = match (&a.secret, &a.secret_file) {
        (Some(s), None) => s.clone().into_bytes(),
        (None, Some(path)) => std::fs::read(path).with_context(|| format!("reading {}", path.display()))?,
        _ => bail!("detect needs --secret or --secret-file"),
    };
    let mut inputs = Vec::new();
    let log = load_log(&a.input, &mut inputs)?;
    let cfg = DetectorConfig {
        alpha: a.alpha,
        secret,
        sidedness: match a.sidedness {
            Sidedness::Upper => anomaly::Sidedness::Upper,
            Sidedness::Lower => anomaly::Sidedness::Lower,
            Sidedness::Both => anomaly::Sidedness::Both,
        },
        exclude_own_votes: !a.include_own_votes,
    };
    let reports = anomaly::detect(&log, &cfg)?;
    let mut t =
        Table::new(vec!["voter_key", "votes_seen", "checkpoints", "max_M", "first_firing_checkpoint", "verdict"]);
    for r in &reports {
        let l = &r.ledger;
        let checkpoints = l.checkpoints.as_slice().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
        t.push(vec![
            l.voter_key.clone().into(),
            l.votes_seen.into(),
            checkpoints.into(),
            l.max_statistic().into(),
            l.first_firing().into(),
            r.verdict.to_string().into(),
        ]);
    }
    Ok(Run { files: vec![t.render("detect", format)], inputs })
}

fn coverage(a: &CoverageArgs, seed: u64, format: Format) -> Result<Run> {
    let base = SimConfig {
        m: a.m.first().copied().unwrap_or(10),
        gamma: a.gamma,
        scale: a.scale,
        t: a.t,
        trials: a.trials,
        alpha: a.alpha,
        seed,
        sampling: match a.sampling {
            Sampling::Uniform => SamplingPolicy::Uniform,
            Sampling::Adaptive => SamplingPolicy::Adaptive(sampler_config(&a.sampler)),
        },
        ridge: a.ridge,
        bootstrap_reps: a.bootstrap_reps,
    };
    let summaries = sim::coverage_sweep(&base, &a.m)?;
    let mut rows = Vec::new();
    for s in &summaries {
        let x = s.m as f64;
        let mut push = |series: &str, y: f64, se: f64| {
            rows.push(PlotRow { x, series: series.to_string(), y, y_lo: y - 1.96 * se, y_hi: y + 1.96 * se })
        };
        push("coverage", s.coverage, s.coverage_se);
        push("mean_width", s.mean_width, s.mean_width_se);
        push("simultaneous_coverage", s.simultaneous_coverage, 0.0);
        push("rank_violation_rate", s.rank_violation_rate, 0.0);
        if let (Some(c), Some(se), Some(w)) = (s.bootstrap_coverage, s.bootstrap_coverage_se, s.bootstrap_mean_width) {
            push("bootstrap_coverage", c, se);
            push("bootstrap_mean_width", w, 0.0);
        }
    }
    Ok(Run {
        files: vec![
            ("coverage.json".to_string(), json_bytes(&summaries)),
            plot_table(&rows).render("coverage_plot", format),
        ],
        inputs: Vec::new(),
    })
}

fn efficiency(a: &EfficiencyArgs, seed: u64, format: Format) -> Result<Run> {
    let cfg = EfficiencyConfig {
        m: a.m,
        gamma: a.gamma,
        scale: a.scale,
        seeds: a.seeds,
        alpha: a.alpha,
        seed,
        sampler: sampler_config(&a.sampler),
        horizon: a.horizon,
        grid_step: a.grid_step,
        checkpoints: a.checkpoints.clone(),
        target_width: a.target_width,
        ridge: a.ridge,
    };
    let summary = sim::run_efficiency_experiment(&cfg)?;
    Ok(Run {
        files: vec![
            ("efficiency.json".to_string(), json_bytes(&summary)),
            plot_table(&summary.plot_rows()).render("efficiency_plot", format),
        ],
        inputs: Vec::new(),
    })
}

fn replay(a: &ReplayArgs, seed: u64, format: Format) -> Result<Run> {
    let mut inputs = Vec::new();
    let log = load_log(&a.input, &mut inputs)?;
    let summary = sim::replay(&log, &a.checkpoints, &rank_options(&a.settings, seed))?;
    Ok(Run {
        files: vec![
            ("replay.json".to_string(), json_bytes(&summary)),
            plot_table(&summary.plot_rows()).render("replay_plot", format),
        ],
        inputs,
    })
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let seed = cli.seed.unwrap_or_else(rand::random);
    let format = cli.format.unwrap_or(match cli.command {
        Command::Rank(_) => Format::Json,
        _ => Format::Csv,
    });
    let run = match &cli.command {
        Command::Rank(a) => rank(a, seed, format)?,
        Command::Winmatrix(a) => winmatrix(a, format)?,
        Command::SamplePlan(a) => sample_plan(a, seed, format)?,
        Command::Detect(a) => detect(a, format)?,
        Command::Simulate(SimulateCommand::Coverage(a)) => coverage(a, seed, format)?,
        Command::Simulate(SimulateCommand::Efficiency(a)) => efficiency(a, seed, format)?,
        Command::Replay(a) => replay(a, seed, format)?,
    };

    let config = serde_json::json!({ "format": format, "command": &cli.command });
    let manifest = Manifest {
        subcommand: cli.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config: &config,
        inputs: &run.inputs,
        outputs: run.files.iter().map(|(name, _)| name.clone()).collect(),
    };
    let mut files = run.files;
    files.push(("manifest.json".to_string(), json_bytes(&manifest)));
    for path in output::write_atomic(&cli.out_dir, &files)? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<prefrank_core::Error>() {
        Some(e) if e.is_statistical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let argv = match config::merge_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
