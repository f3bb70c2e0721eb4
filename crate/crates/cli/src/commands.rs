//! Setting resolution and dispatch. Every subcommand resolves and validates
//! all of its inputs (including loading the dataset) before it creates the
//! output directory.

use std::path::{Path, PathBuf};

use anyhow::Context;
use poisonbench::attack::{self, AttackConfig};
use poisonbench::data::{self, Dataset, NormalizationSpec, SyntheticSpec, TargetColumn};
use poisonbench::defend::{self, ProdaConfig, TrimConfig};
use poisonbench::exec::Execution;
use poisonbench::harness::{self, AttackKind, DatasetSource, DefenseKind, ExperimentSpec, LambdaPolicy, RecordWriter};
use poisonbench::regress::{self, Family, SolverOpts};
use poisonbench::seed;

use crate::config::{resolve, ConfigFile, FloatList, LambdaArg, List, SyntheticArg};
use crate::{Cli, Command, CommonArgs, DataArgs, Failure, ModelArgs, UsageError};

pub const OUT_ENV: &str = "POISONBENCH_OUT";
pub const DEFAULT_OUT: &str = "poisonbench-out";

struct Ctx {
    cfg: ConfigFile,
    seed: u64,
    out: PathBuf,
    execution: Execution,
    quiet: bool,
    verbose: u8,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn create_out(&self) -> Result<&Path, Failure> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| UsageError::new("--out", format!("cannot create {}: {e}", self.out.display())))?;
        Ok(&self.out)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, Failure> {
        let path = self.out.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.note(format!("wrote {}", path.display()));
        Ok(path)
    }
}

fn common(c: &CommonArgs) -> Result<Ctx, UsageError> {
    let cfg = match &c.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let seed = resolve(c.seed, &cfg, "seed", "--seed")?.unwrap_or(seed::DEFAULT_SEED);
    let jobs: Option<usize> = resolve(c.jobs, &cfg, "jobs", "--jobs")?;
    let out = resolve(c.out.clone(), &cfg, "out", "--out")?
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let execution = match jobs {
        Some(0) => return Err(UsageError::new("--jobs", "must be at least 1")),
        Some(1) => Execution::Sequential,
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| UsageError::new("--jobs", e.to_string()))?;
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    Ok(Ctx {
        cfg,
        seed,
        out,
        execution,
        quiet: c.quiet,
        verbose: c.verbose,
    })
}

enum DataSel {
    Csv {
        path: PathBuf,
        target: String,
        categorical: Vec<String>,
    },
    Synthetic(SyntheticArg),
}

struct Loaded {
    ds: Dataset,
    norm: Option<NormalizationSpec>,
    response_name: String,
}

fn select_data(a: &DataArgs, cfg: &ConfigFile) -> Result<(DataSel, Option<usize>), UsageError> {
    let (path, synthetic) = if a.data.is_some() || a.synthetic.is_some() {
        (a.data.clone(), a.synthetic)
    } else {
        (
            resolve(None, cfg, "data.path", "--data")?,
            resolve(None, cfg, "data.synthetic", "--synthetic")?,
        )
    };
    let max_features = resolve(a.max_features, cfg, "data.max_features", "--max-features")?;
    if max_features == Some(0) {
        return Err(UsageError::new("--max-features", "must be at least 1"));
    }
    let sel = match (path, synthetic) {
        (Some(_), Some(_)) => return Err(UsageError::new("--data", "cannot be combined with --synthetic")),
        (None, None) => return Err(UsageError::new("--data", "one of --data or --synthetic is required")),
        (None, Some(s)) => DataSel::Synthetic(s),
        (Some(path), None) => {
            let target: String = resolve(a.target.clone(), cfg, "data.target", "--target")?
                .ok_or_else(|| UsageError::new("--target", "is required with --data"))?;
            let categorical: Option<List<String>> =
                resolve(a.categorical.clone(), cfg, "data.categorical", "--categorical")?;
            DataSel::Csv {
                path,
                target,
                categorical: categorical.map(|l| l.0).unwrap_or_default(),
            }
        }
    };
    Ok((sel, max_features))
}

fn load(sel: &DataSel, max_features: Option<usize>, seed: u64) -> Result<Loaded, UsageError> {
    let (ds, norm, response_name) = match sel {
        DataSel::Csv {
            path,
            target,
            categorical,
        } => {
            let (ds, norm) = data::load_csv(path, &TargetColumn::from(target.as_str()), categorical)
                .map_err(|e| UsageError::new("--data", e.to_string()))?;
            let name = match TargetColumn::from(target.as_str()) {
                TargetColumn::Name(n) => n,
                TargetColumn::Index(_) => "y".to_string(),
            };
            (ds, Some(norm), name)
        }
        DataSel::Synthetic(s) => {
            let spec = SyntheticSpec::random(s.d, s.n, s.noise, s.seed.unwrap_or_else(|| seed::derive(seed, "synthetic")));
            let (ds, _) = data::generate_synthetic(&spec).map_err(|e| UsageError::new("--synthetic", e.to_string()))?;
            (ds, None, "y".to_string())
        }
    };
    let ds = match max_features {
        Some(k) => ds.truncate_features(k.min(ds.dim())),
        None => ds,
    };
    Ok(Loaded { ds, norm, response_name })
}

fn apply_rho(family: Family, rho: Option<f64>) -> Family {
    match (family, rho) {
        (Family::ElasticNet { .. }, Some(rho)) => Family::ElasticNet { rho },
        _ => family,
    }
}

fn check_rho(rho: Option<f64>) -> Result<(), UsageError> {
    match rho {
        Some(r) if !(0.0..=1.0).contains(&r) => Err(UsageError::new("--rho", "must lie in [0, 1]")),
        _ => Ok(()),
    }
}

fn select_model(m: &ModelArgs, cfg: &ConfigFile) -> Result<(Family, LambdaArg), UsageError> {
    let family = resolve(m.family, cfg, "model.family", "--family")?.unwrap_or(Family::Ols);
    let rho = resolve(m.rho, cfg, "model.rho", "--rho")?;
    check_rho(rho)?;
    let lambda = resolve(m.lambda, cfg, "model.lambda", "--lambda")?.unwrap_or(LambdaArg::Auto);
    Ok((apply_rho(family, rho), lambda))
}

fn choose_lambda(ds: &Dataset, family: Family, lambda: LambdaArg, seed: u64) -> Result<f64, Failure> {
    if family == Family::Ols {
        return Ok(0.0);
    }
    match lambda {
        LambdaArg::Fixed(l) => Ok(l),
        LambdaArg::Auto => {
            let split = data::split_three(ds, seed::derive(seed, "split")).context("splitting for lambda selection")?;
            Ok(regress::select_lambda(&split.train, &split.validation, family).context("selecting lambda")?)
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<(), Failure> {
    let ctx = common(&cli.common)?;
    match cli.command {
        Command::Fit { data, model } => fit(&ctx, &data, &model),
        Command::Attack {
            data,
            model,
            method,
            alpha,
            epsilon_conv,
            max_iters,
        } => run_attack(&ctx, &data, &model, method, alpha, epsilon_conv, max_iters),
        Command::Defend {
            data,
            model,
            method,
            gamma,
            epsilon,
            alpha,
            max_iters,
        } => run_defend(&ctx, &data, &model, method, gamma, epsilon, alpha, max_iters),
        Command::Sweep { .. } => sweep(&ctx, cli.command),
        Command::Report { records } => report(&ctx, &records),
    }
}

fn fit(ctx: &Ctx, data: &DataArgs, model: &ModelArgs) -> Result<(), Failure> {
    let (sel, k) = select_data(data, &ctx.cfg)?;
    let (family, lambda) = select_model(model, &ctx.cfg)?;
    let loaded = load(&sel, k, ctx.seed)?;
    let lambda = choose_lambda(&loaded.ds, family, lambda, ctx.seed)?;
    let report = regress::fit(&loaded.ds, family, lambda, &SolverOpts::default()).context("fitting model")?;

    ctx.create_out()?;
    ctx.write("model.json", &report.model.to_json()?)?;
    if let Some(norm) = &loaded.norm {
        ctx.write("normalization.json", &norm.to_json()?)?;
        let (w, b) = norm.denormalize_model(&report.model.weights, report.model.bias);
        let raw = regress::RegressionModel::new(w, b, family, lambda);
        ctx.write("model_original_units.json", &raw.to_json()?)?;
    }
    println!("family {family}");
    println!("lambda {lambda}");
    println!("mse {:.6}", report.train_mse);
    if report.min_norm_fallback {
        ctx.note("warning: ill-conditioned design, used minimum-norm solution");
    }
    Ok(())
}

fn run_attack(
    ctx: &Ctx,
    data: &DataArgs,
    model: &ModelArgs,
    method: Option<AttackKind>,
    alpha: Option<f64>,
    epsilon_conv: Option<f64>,
    max_iters: Option<usize>,
) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let (sel, k) = select_data(data, cfg)?;
    let (family, lambda) = select_model(model, cfg)?;
    let method = resolve(method, cfg, "attack.method", "--method")?.unwrap_or(AttackKind::Nopt);
    if method == AttackKind::None {
        return Err(UsageError::new("--method", "must be nopt or opt").into());
    }
    let alpha = resolve(alpha, cfg, "attack.alpha", "--alpha")?.unwrap_or(0.2);
    if !(alpha > 0.0 && alpha <= 0.2) {
        return Err(UsageError::new("--alpha", format!("must lie in (0, 0.2], got {alpha}")).into());
    }
    let epsilon_conv = resolve(epsilon_conv, cfg, "attack.epsilon_conv", "--epsilon-conv")?.unwrap_or(1e-6);
    if !(epsilon_conv > 0.0) {
        return Err(UsageError::new("--epsilon-conv", "must be > 0").into());
    }
    let max_iters = resolve(max_iters, cfg, "attack.max_iters", "--max-iters")?.unwrap_or(100);
    if max_iters == 0 {
        return Err(UsageError::new("--max-iters", "must be at least 1").into());
    }
    let loaded = load(&sel, k, ctx.seed)?;
    let ds = &loaded.ds;
    if attack::poison_count(alpha, ds.len()) == 0 {
        return Err(UsageError::new("--alpha", format!("yields no poison rows for {} clean rows", ds.len())).into());
    }

    let lambda = choose_lambda(ds, family, lambda, ctx.seed)?;
    let acfg = AttackConfig {
        alpha,
        epsilon_conv,
        max_outer_iters: max_iters,
        seed: seed::derive(ctx.seed, "attack"),
        ..AttackConfig::default()
    };
    let clean = regress::fit_model(ds, family, lambda).context("fitting clean model")?;
    let state = match method {
        AttackKind::Nopt => attack::nopt_attack(ds, &acfg, family, lambda),
        _ => attack::opt_attack(ds, &acfg, family, lambda),
    }
    .context("running attack")?;
    let (poisoned, realized_alpha) = data::merge(ds, &state.poison)?;
    let poisoned_model = regress::fit_model(&poisoned, family, lambda).context("fitting poisoned model")?;
    let mse_clean = regress::mse(ds, &clean)?;
    let mse_poisoned = regress::mse(&poisoned, &poisoned_model)?;

    let out = ctx.create_out()?;
    state.poison.write_csv(out.join("poison.csv"), &loaded.response_name)?;
    poisoned.write_csv(out.join("poisoned.csv"), &loaded.response_name)?;
    state.write_trace_jsonl(out.join("trace.jsonl"))?;
    ctx.note(format!("wrote poison.csv, poisoned.csv and trace.jsonl under {}", out.display()));
    ctx.write("model_clean.json", &clean.to_json()?)?;
    ctx.write("model_poisoned.json", &poisoned_model.to_json()?)?;
    let summary = serde_json::json!({
        "method": method,
        "family": family.name(),
        "lambda": lambda,
        "alpha": alpha,
        "realized_alpha": realized_alpha,
        "n_clean": ds.len(),
        "n_poison": state.poison.len(),
        "iterations": state.iterations,
        "refits": state.refits,
        "converged": state.converged,
        "mse_clean": mse_clean,
        "mse_poisoned": mse_poisoned,
        "mse_poisoned_on_clean": regress::mse(ds, &poisoned_model)?,
    });
    ctx.write("attack.json", &serde_json::to_string_pretty(&summary).context("serializing summary")?)?;
    println!("n_poison {}", state.poison.len());
    println!("mse_clean {mse_clean:.6}");
    println!("mse_poisoned {mse_poisoned:.6}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_defend(
    ctx: &Ctx,
    data: &DataArgs,
    model: &ModelArgs,
    method: Option<DefenseKind>,
    gamma: Option<usize>,
    epsilon: Option<f64>,
    alpha: Option<f64>,
    max_iters: Option<usize>,
) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let (sel, k) = select_data(data, cfg)?;
    let (family, lambda) = select_model(model, cfg)?;
    let method = resolve(method, cfg, "defense.method", "--method")?.unwrap_or(DefenseKind::Proda);
    if method == DefenseKind::None {
        return Err(UsageError::new("--method", "must be proda or trim").into());
    }
    let alpha_assumed = resolve(alpha, cfg, "defense.alpha_assumed", "--alpha")?.unwrap_or(defend::DEFAULT_ALPHA_ASSUMED);
    if !(0.0..1.0).contains(&alpha_assumed) {
        return Err(UsageError::new("--alpha", "must lie in [0, 1)").into());
    }
    let epsilon = resolve(epsilon, cfg, "defense.epsilon", "--epsilon")?.unwrap_or(defend::DEFAULT_EPSILON);
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(UsageError::new("--epsilon", "must lie in (0, 1)").into());
    }
    let max_iters = resolve(max_iters, cfg, "defense.max_iters", "--max-iters")?.unwrap_or(TrimConfig::default().max_iters);
    if max_iters == 0 {
        return Err(UsageError::new("--max-iters", "must be at least 1").into());
    }
    let gamma = resolve(gamma, cfg, "defense.gamma", "--gamma")?;
    let loaded = load(&sel, k, ctx.seed)?;
    let ds = &loaded.ds;
    let gamma = gamma.unwrap_or(ds.dim() + 1);
    if method == DefenseKind::Proda && (gamma < ds.dim() + 1 || gamma > ds.len()) {
        return Err(UsageError::new(
            "--gamma",
            format!("must lie in [d+1, N] = [{}, {}], got {gamma}", ds.dim() + 1, ds.len()),
        )
        .into());
    }

    let lambda = choose_lambda(ds, family, lambda, ctx.seed)?;
    let dseed = seed::derive(ctx.seed, "defense");
    let n = defend::subset_size(alpha_assumed, ds.len());
    let (result, worst_case) = match method {
        DefenseKind::Proda => {
            let pcfg = ProdaConfig {
                gamma,
                epsilon,
                alpha_assumed,
                seed: dseed,
                execution: ctx.execution,
            };
            (defend::proda_defend(ds, &pcfg, family, lambda).context("running proda")?, None)
        }
        _ => {
            let tcfg = TrimConfig {
                alpha_assumed,
                max_iters,
                seed: dseed,
            };
            let outcome = defend::trim_defend(ds, &tcfg, family, lambda).context("running trim")?;
            if !outcome.converged {
                ctx.note(format!("warning: trim stopped at the {max_iters}-iteration cap"));
            }
            (outcome.result, Some(defend::trim_worst_case_iterations(ds.len(), n)))
        }
    };

    ctx.create_out()?;
    ctx.write("defense.json", &result.to_json()?)?;
    println!("method {method}");
    println!("beta_used {}", result.beta_used);
    println!("subset_size {}", result.subset_indices.len());
    println!("subset_mse {:.6}", result.subset_mse);
    if let Some(w) = worst_case {
        println!("trim_worst_case_iterations {w:.6e}");
    }
    Ok(())
}

fn sweep(ctx: &Ctx, command: Command) -> Result<(), Failure> {
    let Command::Sweep {
        data,
        name,
        family,
        lambda,
        rho,
        attack,
        defense,
        alphas,
        gammas,
        alpha_assumed,
        epsilon,
        epsilon_conv,
        max_iters,
        trim_max_iters,
        repeats,
        surrogate_fraction,
        train_subsample,
        iterations_per_second,
    } = command
    else {
        unreachable!()
    };
    let cfg = &ctx.cfg;
    let (sel, k) = select_data(&data, cfg)?;
    let rho = resolve(rho, cfg, "model.rho", "--rho")?;
    check_rho(rho)?;
    let families: Vec<Family> = resolve(family, cfg, "model.families", "--family")?
        .map(|l: List<Family>| l.0)
        .unwrap_or_else(|| vec![Family::Ols])
        .into_iter()
        .map(|f| apply_rho(f, rho))
        .collect();
    let lambda = resolve(lambda, cfg, "model.lambda", "--lambda")?.unwrap_or(LambdaArg::Auto);
    let attacks = resolve(attack, cfg, "attack.methods", "--attack")?
        .map(|l: List<AttackKind>| l.0)
        .unwrap_or_else(|| vec![AttackKind::Nopt]);
    let defenses = resolve(defense, cfg, "defense.methods", "--defense")?
        .map(|l: List<DefenseKind>| l.0)
        .unwrap_or_else(|| vec![DefenseKind::None]);
    let alphas = resolve(alphas, cfg, "attack.alphas", "--alphas")?
        .map(|l: FloatList| l.0)
        .unwrap_or_else(|| harness::DEFAULT_ALPHAS.to_vec());
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 0.2)) {
        return Err(UsageError::new("--alphas", format!("every alpha must lie in (0, 0.2], got {a}")).into());
    }
    let gammas = resolve(gammas, cfg, "defense.gammas", "--gammas")?
        .map(|l: List<usize>| l.0)
        .unwrap_or_default();
    let alpha_assumed = resolve(alpha_assumed, cfg, "defense.alpha_assumed", "--alpha-assumed")?;
    if alpha_assumed.is_some_and(|a| !(0.0..1.0).contains(&a)) {
        return Err(UsageError::new("--alpha-assumed", "must lie in [0, 1)").into());
    }
    let epsilon = resolve(epsilon, cfg, "defense.epsilon", "--epsilon")?.unwrap_or(defend::DEFAULT_EPSILON);
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(UsageError::new("--epsilon", "must lie in (0, 1)").into());
    }
    let epsilon_conv = resolve(epsilon_conv, cfg, "attack.epsilon_conv", "--epsilon-conv")?.unwrap_or(1e-6);
    if !(epsilon_conv > 0.0) {
        return Err(UsageError::new("--epsilon-conv", "must be > 0").into());
    }
    let max_iters = resolve(max_iters, cfg, "attack.max_iters", "--max-iters")?.unwrap_or(100);
    let trim_max_iters =
        resolve(trim_max_iters, cfg, "defense.max_iters", "--trim-max-iters")?.unwrap_or(TrimConfig::default().max_iters);
    if max_iters == 0 || trim_max_iters == 0 {
        return Err(UsageError::new("--max-iters", "iteration caps must be at least 1").into());
    }
    let repeats = resolve(repeats, cfg, "sweep.repeats", "--repeats")?.unwrap_or(5);
    if repeats == 0 {
        return Err(UsageError::new("--repeats", "must be at least 1").into());
    }
    let surrogate_fraction = resolve(surrogate_fraction, cfg, "sweep.surrogate_fraction", "--surrogate-fraction")?;
    if surrogate_fraction.is_some_and(|f| !(f > 0.0 && f <= 1.0)) {
        return Err(UsageError::new("--surrogate-fraction", "must lie in (0, 1]").into());
    }
    let train_subsample = resolve(train_subsample, cfg, "sweep.train_subsample", "--train-subsample")?;
    let iterations_per_second =
        resolve(iterations_per_second, cfg, "sweep.iterations_per_second", "--iterations-per-second")?
            .unwrap_or(harness::DEFAULT_ITERATIONS_PER_SECOND);
    if !(iterations_per_second > 0.0) {
        return Err(UsageError::new("--iterations-per-second", "must be > 0").into());
    }

    // Load once up front so bad input is reported before anything is written.
    let probe = load(&sel, k, ctx.seed)?;
    let d = probe.ds.dim();
    if let Some(g) = gammas.iter().find(|g| **g < d + 1) {
        return Err(UsageError::new("--gammas", format!("gamma {g} is below d+1 = {}", d + 1)).into());
    }
    let source = match sel {
        DataSel::Csv {
            path,
            target,
            categorical,
        } => DatasetSource::Csv {
            path,
            target,
            categorical,
        },
        DataSel::Synthetic(s) => DatasetSource::Synthetic {
            d: s.d,
            n: s.n,
            noise: s.noise,
            seed: s.seed,
        },
    };
    let mut spec = ExperimentSpec::new(source);
    spec.dataset = name;
    spec.families = families;
    spec.lambda = match lambda {
        LambdaArg::Auto => LambdaPolicy::Validation,
        LambdaArg::Fixed(l) => LambdaPolicy::Fixed(l),
    };
    spec.attacks = attacks;
    spec.defenses = defenses;
    spec.alphas = alphas;
    spec.gammas = gammas;
    spec.alpha_assumed = alpha_assumed;
    spec.epsilon = epsilon;
    spec.repeats = repeats;
    spec.master_seed = ctx.seed;
    spec.max_features = k;
    spec.surrogate_fraction = surrogate_fraction;
    spec.train_subsample = train_subsample;
    spec.attack.epsilon_conv = epsilon_conv;
    spec.attack.max_outer_iters = max_iters;
    spec.trim_max_iters = trim_max_iters;
    spec.iterations_per_second = iterations_per_second;
    spec.execution = ctx.execution;
    spec.validate().map_err(|e| UsageError::new("sweep", e.to_string()))?;

    let out = ctx.create_out()?.to_path_buf();
    let records_path = out.join("records.jsonl");
    let mut writer = RecordWriter::create(&records_path, Some(&spec))?;
    let mut done = 0usize;
    let records = harness::run_sweep(&spec, |rec| {
        done += 1;
        if ctx.verbose > 0 && !ctx.quiet {
            eprintln!(
                "[{done}] {} {} {} alpha={} gamma={:?} repeat={}{}",
                rec.family,
                rec.attack,
                rec.defense,
                rec.alpha,
                rec.gamma,
                rec.repeat,
                rec.error.as_deref().map(|e| format!(" FAILED: {e}")).unwrap_or_default()
            );
        }
        writer.append(rec)
    })?;
    ctx.note(format!("wrote {}", records_path.display()));
    write_report(ctx, &records)?;
    if records.iter().all(|r| r.error.is_some()) {
        return Err(anyhow::anyhow!("every cell failed; see {}", records_path.display()).into());
    }
    Ok(())
}

fn write_report(ctx: &Ctx, records: &[harness::ExperimentRecord]) -> Result<(), Failure> {
    let summary = harness::aggregate(records)?;
    ctx.write("summary.csv", &summary.to_csv())?;
    ctx.write("summary_stats.csv", &summary.to_stats_csv())?;
    let plots = ctx.out.join("plots");
    std::fs::create_dir_all(&plots).with_context(|| format!("creating {}", plots.display()))?;
    let written = harness::emit_report_plots(&summary, &plots)?;
    ctx.note(format!("wrote {} plot files under {}", written.len(), plots.display()));
    let text = harness::report_text(records, &summary);
    ctx.write("report.txt", &text)?;
    if !ctx.quiet {
        eprint!("{text}");
    }
    Ok(())
}

fn report(ctx: &Ctx, paths: &[PathBuf]) -> Result<(), Failure> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(
            harness::read_records(p).map_err(|e| UsageError::new("--records", format!("{}: {e}", p.display())))?,
        );
    }
    if records.is_empty() {
        return Err(UsageError::new("--records", "no records found").into());
    }
    ctx.create_out()?;
    write_report(ctx, &records)
}
