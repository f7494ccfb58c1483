use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;

use converse_core::eval::{evaluate, heatmap_csv, strength_sweep, HeatmapMetric, Protocol, CSV_HEADER};
use converse_core::families::Family;
use converse_core::generator::{
    generate_dataset, import_fixture, revalidate, DatasetConfig, DatasetEntry, FamilyRanges, Fixture, InstanceSource,
};
use converse_core::linalg::matrix_from_rows;
use converse_core::par::Execution;
use converse_core::sim::{
    serve_policy, write_noise_dump, write_trajectory, InitialStateSchedule, NoiseStream, PolicySpec, Simulator,
    TrajectoryHeader, DUMP_VERSION,
};
use converse_core::Error;

use crate::args::{
    Cli, Command, EvalArgs, GenerateArgs, HeatmapArgs, NoiseDumpArgs, ProtocolArgs, RolloutArgs, ServeArgs,
    ValidateArgs,
};

pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(error: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: 2,
        error: error.into(),
    }
}

fn domain(error: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: 1,
        error: error.into(),
    }
}

/// Failures of the thing being measured are domain failures; everything
/// else (files, formats, parameters) is the caller's to fix.
fn classify(e: Error) -> CliError {
    match e {
        Error::PolicyFailure(_)
        | Error::RetryBudgetExhausted { .. }
        | Error::NonFinite(_)
        | Error::NoConvergence(_)
        | Error::ZeroDirectionField => domain(e),
        other => usage(other),
    }
}

trait OrUsage<T> {
    fn or_usage(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> OrUsage<T> for std::result::Result<T, Error> {
    fn or_usage(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| {
            let mut c = classify(e);
            c.error = c.error.context(what());
            c
        })
    }
}

#[derive(Serialize)]
struct Effective<'a, T: Serialize> {
    command: &'a str,
    execution: Execution,
    jobs: Option<usize>,
    #[serde(flatten)]
    settings: T,
}

fn echo<T: Serialize>(ctx: &Context_, command: &str, settings: T) {
    let e = Effective {
        command,
        execution: ctx.exec,
        jobs: ctx.jobs,
        settings,
    };
    match serde_yaml::to_string(&e) {
        Ok(text) => eprint!("# effective configuration\n{text}# ---\n"),
        Err(err) => eprintln!("# effective configuration unavailable: {err}"),
    }
}

struct Context_ {
    exec: Execution,
    jobs: Option<usize>,
}

pub fn run(cli: Cli) -> CliResult {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(usage(anyhow!("--jobs must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(usage)?;
    }
    let ctx = Context_ {
        exec: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        jobs: cli.jobs,
    };
    match cli.command {
        Command::Generate(a) => generate(&ctx, a),
        Command::Validate(a) => validate(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Rollout(a) => rollout(&ctx, a),
        Command::Heatmap(a) => heatmap(&ctx, a),
        Command::NoiseDump(a) => noise_dump(&ctx, a),
        Command::Serve(a) => serve(a),
    }
}

fn read_yaml<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(usage)?;
    serde_yaml::from_str(&text)
        .with_context(|| format!("cannot parse {}", path.display()))
        .map_err(usage)
}

fn load_fixture(path: &Path) -> CliResult<Fixture> {
    import_fixture(path).map_err(|e| usage(anyhow!(e).context(format!("cannot load {}", path.display()))))
}

fn policy_spec(s: &str) -> CliResult<PolicySpec> {
    if let Some(file) = s.strip_prefix("linear:") {
        let rows: Vec<Vec<f64>> = read_yaml(Path::new(file))?;
        let gain = matrix_from_rows(&rows).map_err(usage)?;
        return Ok(PolicySpec::Linear { gain });
    }
    PolicySpec::parse(s).map_err(usage)
}

fn generate(ctx: &Context_, a: GenerateArgs) -> CliResult {
    let mut config = match &a.config {
        Some(path) => read_yaml::<DatasetConfig>(path)?,
        None => DatasetConfig::default(),
    };
    if let Some(name) = &a.family {
        let family: Family = name.parse().map_err(usage)?;
        config.entries = vec![DatasetEntry {
            count: a.n,
            source: InstanceSource::Sampled {
                ranges: FamilyRanges::default_for(family),
            },
        }];
    }
    if let Some(seed) = a.seed {
        config.master_seed = seed;
    }
    if config.entries.is_empty() {
        return Err(usage(anyhow!(
            "nothing to generate: pass --family or a config with entries"
        )));
    }
    config.check().or_usage(|| "invalid dataset configuration".into())?;

    #[derive(Serialize)]
    struct Settings<'a> {
        out: &'a Path,
        dataset: &'a DatasetConfig,
    }
    echo(
        ctx,
        "generate",
        Settings {
            out: &a.out,
            dataset: &config,
        },
    );

    let summary = generate_dataset(&config, &a.out, ctx.exec).or_usage(|| "generation failed".into())?;
    println!(
        "generated {} of {} fixtures in {} attempts into {}",
        summary.generated,
        summary.requested,
        summary.attempts,
        a.out.display()
    );
    for (family, count) in &summary.per_family {
        println!("  {family}: {count}");
    }
    for (reason, count) in &summary.rejections {
        println!("  rejected ({reason}): {count}");
    }
    Ok(())
}

fn validate(ctx: &Context_, a: ValidateArgs) -> CliResult {
    #[derive(Serialize)]
    struct Settings<'a> {
        fixtures: &'a [PathBuf],
    }
    echo(ctx, "validate", Settings { fixtures: &a.fixtures });
    let mut all_passed = true;
    for path in &a.fixtures {
        let fixture = load_fixture(path)?;
        let inst = fixture
            .build_instance()
            .or_usage(|| format!("cannot rebuild {}", path.display()))?;
        let trace = revalidate(&inst, &fixture.validation, ctx.exec)
            .or_usage(|| format!("validation of {} failed to run", path.display()))?;
        let verdict = if trace.passed() { "pass" } else { "FAIL" };
        println!(
            "{verdict} {}: spd {:.3e} (margin {:.3e}), bellman {:.3e} (margin {:.3e}), bounded {:.3e} (margin {:.3e})",
            path.display(),
            trace.spd.value,
            trace.spd.margin,
            trace.bellman.value,
            trace.bellman.margin,
            trace.bounded.value,
            trace.bounded.margin,
        );
        all_passed &= trace.passed();
    }
    if all_passed {
        Ok(())
    } else {
        Err(domain(anyhow!("validation failed")))
    }
}

fn protocol(args: &ProtocolArgs) -> CliResult<Protocol> {
    let mut p = match &args.protocol_file {
        Some(path) => read_yaml::<Protocol>(path)?,
        None => Protocol::default(),
    };
    if let Some(x) = args.trials {
        p.n_trials = x;
    }
    if args.horizon.is_some() {
        p.horizon = args.horizon;
    }
    if let Some(x) = args.epsilon {
        p.epsilon = x;
    }
    if let Some(x) = args.first_trial {
        p.first_trial = x;
    }
    if args.noise_seed.is_some() {
        p.noise_seed = args.noise_seed;
    }
    if args.schedule_seed.is_some() {
        p.schedule_seed = args.schedule_seed;
    }
    if args.action_bound.is_some() {
        p.action_bound = args.action_bound;
    }
    if let Some(x) = args.resamples {
        p.bootstrap.resamples = x;
    }
    if let Some(x) = args.level {
        p.bootstrap.level = x;
    }
    if let Some(x) = args.bootstrap_seed {
        p.bootstrap.seed = x;
    }
    if let Some(x) = args.timeout {
        p.query_timeout_secs = x;
    }
    Ok(p)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "fixture".into())
}

fn slug(policy: &PolicySpec) -> String {
    match policy {
        PolicySpec::External { .. } => "exec".into(),
        other => other
            .to_string()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
            .collect(),
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))
            .map_err(usage)?;
    }
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(usage)
}

fn eval(ctx: &Context_, a: EvalArgs) -> CliResult {
    let fixture = load_fixture(&a.fixture)?;
    let policy = policy_spec(&a.policy)?;
    let resolved = protocol(&a.protocol)?
        .resolve(&fixture)
        .or_usage(|| "invalid protocol".into())?;
    let experiment = a.experiment.clone().unwrap_or_else(|| stem(&a.fixture));

    #[derive(Serialize)]
    struct Settings<'a> {
        fixture: &'a Path,
        policy: String,
        experiment: &'a str,
        out: &'a Path,
        protocol: converse_core::eval::ResolvedProtocol,
    }
    echo(
        ctx,
        "eval",
        Settings {
            fixture: &a.fixture,
            policy: policy.to_string(),
            experiment: &experiment,
            out: &a.out,
            protocol: resolved,
        },
    );

    // pin every field so the report is reproducible from the echo alone
    let pinned = Protocol {
        n_trials: resolved.n_trials,
        horizon: Some(resolved.horizon),
        epsilon: resolved.epsilon,
        first_trial: resolved.first_trial,
        noise_seed: Some(resolved.noise_seed),
        schedule_seed: Some(resolved.schedule_seed),
        action_bound: resolved.action_bound,
        bootstrap: resolved.bootstrap,
        query_timeout_secs: resolved.query_timeout_secs,
    };
    let report = evaluate(&fixture, &policy, &pinned, ctx.exec).or_usage(|| "evaluation failed".into())?;

    let base = format!("{}.{}", stem(&a.fixture), slug(&policy));
    let json_path = a.out.join(format!("{base}.report.json"));
    let csv_path = a.out.join(format!("{base}.report.csv"));
    write_file(&json_path, &report.to_json().map_err(usage)?)?;
    write_file(&csv_path, &format!("{CSV_HEADER}\n{}\n", report.csv_row(&experiment)))?;

    println!(
        "policy {} on {} ({} trials, T = {})",
        report.policy, experiment, report.protocol.n_trials, report.protocol.horizon
    );
    for (name, e) in [
        ("OptGap", report.opt_gap),
        ("Regret", report.regret),
        ("Regret (return difference)", report.regret_return_diff),
    ] {
        println!("  {name}: {:.6e}  95% CI [{:.6e}, {:.6e}]", e.mean, e.ci_low, e.ci_high);
    }
    println!("  report: {}", json_path.display());
    Ok(())
}

fn output(path: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent() {
                fs::create_dir_all(dir)
                    .with_context(|| format!("cannot create {}", dir.display()))
                    .map_err(usage)?;
            }
            let f = fs::File::create(p)
                .with_context(|| format!("cannot create {}", p.display()))
                .map_err(usage)?;
            Box::new(BufWriter::new(f))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn rollout(ctx: &Context_, a: RolloutArgs) -> CliResult {
    let fixture = load_fixture(&a.fixture)?;
    let policy = policy_spec(&a.policy)?;
    let horizon = a.horizon.unwrap_or(fixture.horizon);
    if horizon == 0 {
        return Err(usage(anyhow!("horizon must be at least 1")));
    }
    let noise_seed = a.noise_seed.unwrap_or(fixture.seeds.noise);
    let schedule = InitialStateSchedule {
        seed: a.schedule_seed.unwrap_or(fixture.schedule.seed),
        ..fixture.schedule.clone()
    };
    let action_bound = a.action_bound.or(fixture.action_bound);

    #[derive(Serialize)]
    struct Settings<'a> {
        fixture: &'a Path,
        policy: String,
        horizon: usize,
        trial: u64,
        noise_seed: u64,
        schedule_seed: u64,
        action_bound: Option<f64>,
        out: &'a Option<PathBuf>,
    }
    echo(
        ctx,
        "rollout",
        Settings {
            fixture: &a.fixture,
            policy: policy.to_string(),
            horizon,
            trial: a.trial,
            noise_seed,
            schedule_seed: schedule.seed,
            action_bound,
            out: &a.out,
        },
    );

    let inst = fixture.build_instance().or_usage(|| "cannot rebuild instance".into())?;
    let noise = NoiseStream::new(noise_seed, &inst.params().noise_cov).or_usage(|| "bad noise".into())?;
    let sim = Simulator::new(&inst, &schedule, &noise).with_action_bound(action_bound);
    let mut p = policy.instantiate(&inst).or_usage(|| "cannot start policy".into())?;
    let paired = sim
        .paired_rollout(p.as_mut(), a.trial, horizon)
        .or_usage(|| "rollout failed".into())?;
    let header = TrajectoryHeader {
        v: DUMP_VERSION,
        fixture_checksum: Some(fixture.checksum().map_err(usage)?),
        policy: policy.to_string(),
        trial: a.trial,
        horizon,
        gamma: inst.gamma(),
        noise_seed,
        schedule_seed: schedule.seed,
        action_bound,
    };
    let mut out = output(&a.out)?;
    write_trajectory(&mut out, &header, &paired).map_err(usage)?;
    out.flush().context("flush failed").map_err(usage)?;
    eprintln!(
        "discounted return {:.12e} (tail bound {:.3e})",
        paired.trajectory.discounted_return, paired.trajectory.tail_bound
    );
    Ok(())
}

fn heatmap(ctx: &Context_, a: HeatmapArgs) -> CliResult {
    let fixtures = a
        .fixtures
        .iter()
        .map(|p| load_fixture(p))
        .collect::<CliResult<Vec<_>>>()?;
    let policy = policy_spec(&a.policy)?;
    let proto = protocol(&a.protocol)?;

    #[derive(Serialize)]
    struct Settings<'a> {
        fixtures: &'a [PathBuf],
        strengths: &'a [f64],
        policy: String,
        protocol: &'a Protocol,
        out: &'a Path,
    }
    echo(
        ctx,
        "heatmap",
        Settings {
            fixtures: &a.fixtures,
            strengths: &a.strengths,
            policy: policy.to_string(),
            protocol: &proto,
            out: &a.out,
        },
    );

    let cells =
        strength_sweep(&fixtures, &a.strengths, &policy, &proto, ctx.exec).or_usage(|| "sweep failed".into())?;
    let gap = a.out.join("heatmap_optgap.csv");
    let reg = a.out.join("heatmap_regret.csv");
    write_file(&gap, &heatmap_csv(&cells, HeatmapMetric::OptGap))?;
    write_file(&reg, &heatmap_csv(&cells, HeatmapMetric::Regret))?;
    println!("wrote {} and {}", gap.display(), reg.display());
    Ok(())
}

fn noise_dump(ctx: &Context_, a: NoiseDumpArgs) -> CliResult {
    let fixture = load_fixture(&a.fixture)?;
    let horizon = a.horizon.unwrap_or(fixture.horizon);
    let seed = a.noise_seed.unwrap_or(fixture.seeds.noise);

    #[derive(Serialize)]
    struct Settings<'a> {
        fixture: &'a Path,
        trials: u64,
        horizon: usize,
        noise_seed: u64,
    }
    echo(
        ctx,
        "noise-dump",
        Settings {
            fixture: &a.fixture,
            trials: a.trials,
            horizon,
            noise_seed: seed,
        },
    );
    let noise = NoiseStream::new(seed, &fixture.instance.noise_cov).or_usage(|| "bad noise".into())?;
    let mut out = output(&a.out)?;
    write_noise_dump(&mut out, &noise, fixture.instance.noise_cov.dim(), a.trials, horizon).map_err(usage)?;
    out.flush().context("flush failed").map_err(usage)
}

fn serve(a: ServeArgs) -> CliResult {
    // no effective-config echo on purpose: stdout carries the protocol and
    // stderr noise confuses some agent harnesses
    let fixture = load_fixture(&a.fixture)?;
    let policy = policy_spec(&a.policy)?;
    if !policy.is_builtin() {
        return Err(usage(anyhow!("serve only hosts built-in policies")));
    }
    let inst = fixture.build_instance().or_usage(|| "cannot rebuild instance".into())?;
    let mut p = policy.instantiate(&inst).map_err(usage)?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve_policy(&inst, p.as_mut(), stdin.lock(), stdout.lock()).map_err(classify)?;
    Ok(())
}
