use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mppt_lab::ann::{
    evaluate_model_pqi, generate_training_data, random_patterns, train_gmpp_model, FeatureSpec,
    GmppModel, InputArity, Optimizer, TrainOptions,
};
use mppt_lab::detect::{calibrate_threshold, default_drift, run_length_histogram};
use mppt_lab::harness::{calibrate, run_experiment, ScenarioConfig};
use mppt_lab::pv::sweep_pv_curve;
use mppt_lab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mppt-lab",
    version,
    about = "Partially shaded PV array MPPT experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario JSON; the bundled small SP1/SP2 scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed; overrides the scenario's base seed where one applies.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// P-V sweep and oracle GMPP of every schedule entry.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2001)]
        points: usize,
    },
    /// GLLR threshold for a target false-alarm period on white noise, or the
    /// scenario's closed-loop calibration when --config is given.
    CalibrateGllr {
        #[command(flatten)]
        common: Common,
        /// Drift parameter; the default grows with the window order.
        #[arg(long)]
        b: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        sigma_nu: f64,
        #[arg(long, default_value_t = 20.0)]
        gamma: f64,
        #[arg(long, default_value_t = 20.0)]
        fs: f64,
        #[arg(long, default_value_t = 500)]
        runs: usize,
        #[arg(long, default_value_t = 5)]
        p: usize,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Train a GMPP-voltage network on the scenario's array.
    TrainAnn {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = ModeArg::Irr)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = InputsArg::Multi)]
        inputs: InputsArg,
        /// Layer sizes including input and output, e.g. 8,20,10,1.
        #[arg(long, value_delimiter = ',')]
        arch: Option<Vec<usize>>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, value_enum)]
        optimizer: Option<OptimizerArg>,
    },
    /// Prediction quality index of a saved network on random patterns.
    EvalPqi {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1000)]
        tests: usize,
    },
    /// Monte-Carlo comparison of the scenario's controllers.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Time the stages of an experiment; prints to stdout only.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replications: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Irr,
    Vi,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputsArg {
    Multi,
    Single,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Momentum,
}

fn scenario(common: &Common) -> Result<ScenarioConfig> {
    let mut s = match &common.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::small_sp1_sp2(),
    };
    if let Some(seed) = common.seed {
        s.experiment.base_seed = seed;
    }
    Ok(s)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn sweep(common: &Common, points: usize) -> Result<()> {
    let s = scenario(common)?;
    let v_max = s.topology.v_oc_nameplate(&s.module);
    let oracle = mppt_lab::harness::scenario_oracle(&s)?;
    for (k, entry) in s.environment.schedule.iter().enumerate() {
        let curve = sweep_pv_curve(&entry.conditions, &s.topology, &s.module, v_max, points)?;
        let mut text = String::from("v,i,p\n");
        for c in &curve {
            let _ = writeln!(text, "{},{},{}", c.v, c.i, c.p);
        }
        write(&common.out, &format!("sweep_{k}.csv"), &text)?;
    }
    let mut text = String::from("event,t_start_s,v_gmpp_v,p_gmpp_w\n");
    for o in &oracle {
        let _ = writeln!(text, "{},{},{},{}", o.index, o.t_start, o.v_gmpp, o.p_gmpp);
        println!(
            "entry {}: V_gmpp {:.3} V, P_gmpp {:.3} W",
            o.index, o.v_gmpp, o.p_gmpp
        );
    }
    write(&common.out, "oracle.csv", &text)
}

#[allow(clippy::too_many_arguments)]
fn calibrate_gllr(
    common: &Common,
    b: Option<f64>,
    sigma_nu: f64,
    gamma: f64,
    fs: f64,
    runs: usize,
    p: usize,
    bins: usize,
) -> Result<()> {
    if common.config.is_some() {
        let s = scenario(common)?;
        let cal = calibrate(&s)?;
        println!(
            "sigma_nu {:.6} W, h {:.4}, h1 {:.6} W",
            cal.sigma_nu_w, cal.h, cal.h1_w
        );
        return write(
            &common.out,
            "calibration.json",
            &(serde_json::to_string_pretty(&cal)? + "\n"),
        );
    }
    let b = b.unwrap_or_else(|| default_drift(p));
    let cal = calibrate_threshold(b, sigma_nu, p, gamma, fs, runs, common.seed.unwrap_or(1))?;
    println!(
        "h {:.6} (mean run length {:.1}, target {:.1})",
        cal.h, cal.mean_run_length, cal.target_run_length
    );
    let mut text =
        String::from("b,sigma_nu,p,gamma_s,f_s_hz,h,mean_run_length,target_run_length\n");
    let _ = writeln!(
        text,
        "{b},{sigma_nu},{p},{gamma},{fs},{},{},{}",
        cal.h, cal.mean_run_length, cal.target_run_length
    );
    write(&common.out, "calibration.csv", &text)?;
    let mut hist = String::from("bin_start,bin_end,count\n");
    for (lo, hi, n) in run_length_histogram(&cal.run_lengths, bins) {
        let _ = writeln!(hist, "{lo},{hi},{n}");
    }
    write(&common.out, "run_length_histogram.csv", &hist)
}

#[allow(clippy::too_many_arguments)]
fn train_ann(
    common: &Common,
    mode: ModeArg,
    inputs: InputsArg,
    arch: Option<Vec<usize>>,
    epochs: Option<usize>,
    lr: Option<f64>,
    optimizer: Option<OptimizerArg>,
) -> Result<()> {
    let s = scenario(common)?;
    let arity = match inputs {
        InputsArg::Multi => InputArity::Multi,
        InputsArg::Single => InputArity::Single,
    };
    let groups = s.topology.group_count();
    let mut spec = match mode {
        ModeArg::Irr => FeatureSpec::irradiance(groups, arity),
        ModeArg::Vi => FeatureSpec::vi_probes(groups, 4, arity),
    };
    let a = &s.experiment.ann;
    let mut hidden = a.hidden.clone();
    if let Some(arch) = arch {
        if arch.len() < 3 || arch.last() != Some(&1) {
            return Err(Error::InvalidInput(
                "--arch needs input, hidden layers and a final 1".into(),
            ));
        }
        if let (ModeArg::Vi, InputArity::Multi) = (mode, arity) {
            if arch[0] % 2 != 0 || arch[0] == 0 {
                return Err(Error::InvalidInput("VI inputs come in (v, i) pairs".into()));
            }
            spec.m_probes = arch[0] / 2;
        }
        if arch[0] != spec.input_len() {
            return Err(Error::ShapeMismatch {
                expected: spec.input_len(),
                got: arch[0],
            });
        }
        hidden = arch[1..arch.len() - 1].to_vec();
    }
    let mut opts = match optimizer {
        Some(OptimizerArg::Momentum) => TrainOptions::momentum_gd(),
        Some(OptimizerArg::Adam) => TrainOptions::default(),
        None => a.train,
    };
    if let Some(e) = epochs {
        opts.epochs = e;
    }
    if let Some(lr) = lr {
        opts.learning_rate = lr;
    }
    let seed = common.seed.unwrap_or(a.seed);
    let data = generate_training_data(
        &spec,
        &s.topology,
        &s.module,
        &a.levels,
        a.probes_per_pattern,
        seed,
    )?;
    let v_max = s.topology.v_oc_nameplate(&s.module);
    let (model, report) = train_gmpp_model(&data, &hidden, v_max, &opts, seed)?;
    let optimizer_name = match opts.optimizer {
        Optimizer::Adam => "adam",
        Optimizer::Momentum => "momentum",
    };
    println!(
        "trained {:?} on {} rows with {optimizer_name}: final mse {:.6}",
        model.net.layer_sizes,
        data.inputs.len(),
        report.mse_history.last().copied().unwrap_or(f64::NAN)
    );
    let mut hist = String::from("epoch,mse\n");
    for (k, m) in report.mse_history.iter().enumerate() {
        let _ = writeln!(hist, "{k},{m}");
    }
    write(&common.out, "train_history.csv", &hist)?;
    write(&common.out, "model.json", &(model.to_json()? + "\n"))
}

fn eval_pqi(common: &Common, model_path: &Path, tests: usize) -> Result<()> {
    let s = scenario(common)?;
    let model = GmppModel::load(model_path)?;
    let seed = common.seed.unwrap_or(s.experiment.base_seed);
    let groups = s.topology.group_count();
    let patterns = random_patterns(tests, groups, 0.2, 1.0, seed);
    let report = evaluate_model_pqi(&model, &patterns, &s.topology, &s.module, seed)?;
    println!(
        "PQI {:.3}% (MAPE {:.3}%) over {} patterns",
        report.pqi, report.mape, report.g_tests
    );
    let mut text = String::from("test,ratio\n");
    for (k, r) in report.ratios.iter().enumerate() {
        let _ = writeln!(text, "{k},{r}");
    }
    write(&common.out, "pqi.csv", &text)?;
    write(
        &common.out,
        "pqi_summary.csv",
        &format!(
            "g_tests,pqi_pct,mape_pct\n{},{},{}\n",
            report.g_tests, report.pqi, report.mape
        ),
    )
}

fn simulate(common: &Common, replications: Option<usize>) -> Result<()> {
    let mut s = scenario(common)?;
    if let Some(n) = replications {
        s.experiment.n_replications = n;
    }
    let out = run_experiment(&s, Some(&common.out))?;
    for c in &out.report.controllers {
        let d95: Vec<String> = c
            .events
            .iter()
            .map(|e| {
                e.delays
                    .last()
                    .and_then(|d| d.1)
                    .map_or("not-reached".into(), |d| format!("{d:.3} s"))
            })
            .collect();
        println!(
            "{}: {} runs, {} failed, 95% delays [{}]",
            c.name,
            c.replications,
            c.failures,
            d95.join(", ")
        );
    }
    for sv in &out.report.savings {
        println!(
            "resource saving at entry {}: {:.1}%",
            sv.event, sv.saving_percent
        );
    }
    for (name, k, msg) in &out.failures {
        eprintln!("episode {name}/{k} failed: {msg}");
    }
    Ok(())
}

fn bench(common: &Common, replications: Option<usize>) -> Result<()> {
    let mut s = scenario(common)?;
    if let Some(n) = replications {
        s.experiment.n_replications = n;
    }
    s.experiment.write_traces = false;
    let t0 = Instant::now();
    let models = mppt_lab::harness::train_models(&s)?;
    let t_train = t0.elapsed();
    let prepared = mppt_lab::harness::prepare(&s, &models)?;
    let t_prep = t0.elapsed() - t_train;
    let t1 = Instant::now();
    mppt_lab::harness::run_prepared(&s, prepared, None)?;
    let t_run = t1.elapsed();
    println!("train {:.3} s", t_train.as_secs_f64());
    println!("calibrate {:.3} s", t_prep.as_secs_f64());
    println!(
        "replications {} x {} controllers {:.3} s",
        s.experiment.n_replications,
        s.controllers.len(),
        t_run.as_secs_f64()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sweep { common, points } => sweep(&common, points),
        Command::CalibrateGllr {
            common,
            b,
            sigma_nu,
            gamma,
            fs,
            runs,
            p,
            bins,
        } => calibrate_gllr(&common, b, sigma_nu, gamma, fs, runs, p, bins),
        Command::TrainAnn {
            common,
            mode,
            inputs,
            arch,
            epochs,
            lr,
            optimizer,
        } => train_ann(&common, mode, inputs, arch, epochs, lr, optimizer),
        Command::EvalPqi {
            common,
            model,
            tests,
        } => eval_pqi(&common, &model, tests),
        Command::Simulate {
            common,
            replications,
        } => simulate(&common, replications),
        Command::Bench {
            common,
            replications,
        } => bench(&common, replications),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
