use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use mfbd::analysis::{
    chaos_sweep, fit_decay_rate, lyapunov_audit, stationary_comparison, ExperimentResult, StationaryOptions,
};
use mfbd::coupling::{coupled_distance_curve, drift_audit, marginality_audit};
use mfbd::exec::{with_threads, Execution};
use mfbd::io::{self, Provenance};
use mfbd::meanfield::{exp_moment_certificate, fixed_point, integrate_flow, FlowOptions};
use mfbd::measure::{w1_dist, w1_oracle, DistN};
use mfbd::rates::{check_assumption_a, check_assumption_b, constants, default_mean_grid, Interaction, RateModel};
use mfbd::rng;
use mfbd::ssa::{simulate_replicas, SimOptions};
use rand::Rng;
use serde::Serialize;

use crate::config::{self, Format, RunConfig};
use crate::{CliError, Command, Common};

fn merged(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => config::load(p)?,
        None => RunConfig::default(),
    };
    let e = &mut cfg.experiment;
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.n {
        e.n = v;
    }
    if let Some(v) = common.k {
        e.k_max = v;
    }
    if let Some(v) = &common.n_list {
        e.n_list = v.clone();
    }
    if let Some(v) = common.n_replicas {
        e.n_replicas = v;
    }
    if let Some(v) = common.t_max {
        e.t_max = v;
    }
    if let Some(v) = common.grid_steps {
        e.grid_steps = v;
    }
    if let Some(v) = &common.out {
        cfg.io.out_dir = v.clone();
    }
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate => "simulate",
        Command::Couple => "couple",
        Command::Ode => "ode",
        Command::FixedPoint => "fixed-point",
        Command::Chaos => "chaos",
        Command::Empirical => "empirical",
        Command::Stationary => "stationary",
        Command::Lyapunov => "lyapunov",
        Command::Audit => "audit",
        Command::CheckAssumptions => "check-assumptions",
        Command::W1 { .. } => "w1",
        Command::Verify => "verify",
    }
}

pub fn run(command: &Command, common: &Common) -> Result<(), CliError> {
    if let Command::W1 { a, b } = command {
        return w1(a, b);
    }
    let cfg = merged(common)?;
    cfg.validate()?;
    let name = command_name(command);
    if common.dry_run {
        println!("{name}: config ok hash={}", cfg.hash());
        return Ok(());
    }
    let ctx = Ctx { model: cfg.model()?, prov: Provenance::new(cfg.hash(), cfg.seed, name), name, cfg };
    with_threads(common.threads, || match command {
        Command::Simulate => simulate(&ctx),
        Command::Couple => couple(&ctx),
        Command::Ode => ode(&ctx),
        Command::FixedPoint => fixed(&ctx),
        Command::Chaos => chaos(&ctx),
        Command::Empirical => empirical(&ctx),
        Command::Stationary => stationary(&ctx),
        Command::Lyapunov => lyapunov(&ctx),
        Command::Audit => audit(&ctx),
        Command::CheckAssumptions => check(&ctx),
        Command::Verify => verify(&ctx),
        Command::W1 { .. } => unreachable!("handled above"),
    })
}

struct Ctx {
    cfg: RunConfig,
    model: RateModel,
    prov: Provenance,
    name: &'static str,
}

impl Ctx {
    fn path(&self, suffix: &str, ext: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.cfg.io.out_dir)?;
        let stem = if suffix.is_empty() { self.name.to_owned() } else { format!("{}_{suffix}", self.name) };
        Ok(self.cfg.io.out_dir.join(format!("{stem}.{ext}")))
    }

    fn wants(&self, f: Format) -> bool {
        self.cfg.io.formats.contains(&f)
    }

    fn csv(
        &self,
        suffix: &str,
        write: impl FnOnce(BufWriter<File>, &Provenance) -> mfbd::Result<()>,
        paths: &mut Vec<PathBuf>,
    ) -> Result<(), CliError> {
        if self.wants(Format::Csv) {
            let p = self.path(suffix, "csv")?;
            write(BufWriter::new(File::create(&p)?), &self.prov)?;
            paths.push(p);
        }
        Ok(())
    }

    fn json<T: Serialize>(&self, suffix: &str, value: &T, paths: &mut Vec<PathBuf>) -> Result<(), CliError> {
        if self.wants(Format::Json) {
            let p = self.path(suffix, "json")?;
            io::write_json(BufWriter::new(File::create(&p)?), &self.prov, value)?;
            paths.push(p);
        }
        Ok(())
    }

    fn experiment(&self, r: &ExperimentResult, paths: &mut Vec<PathBuf>) -> Result<(), CliError> {
        self.csv("", |w, p| io::write_experiment_csv(w, p, r), paths)?;
        self.json("", r, paths)
    }

    fn done(&self, metric: String, paths: &[PathBuf]) -> Result<(), CliError> {
        let files: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
        println!("{}: {metric} files={}", self.name, files.join(","));
        Ok(())
    }

    fn e(&self) -> &config::ExperimentConfig {
        &self.cfg.experiment
    }

    fn init(&self) -> Result<DistN, CliError> {
        self.cfg.law(&self.cfg.init)
    }

    fn sim_options(&self) -> SimOptions {
        SimOptions { max_events: self.e().max_events, ..SimOptions::default() }
    }
}

fn scan_constants(model: &RateModel, scan_max: u64) -> Result<mfbd::rates::Constants, CliError> {
    Ok(constants(model, scan_max, &default_mean_grid(scan_max as f64))?)
}

fn simulate(ctx: &Ctx) -> Result<(), CliError> {
    let e = ctx.e();
    let s = simulate_replicas(
        &ctx.model,
        &ctx.init()?,
        e.n,
        e.n_replicas,
        e.t_max,
        &e.grid(),
        ctx.cfg.seed,
        ctx.sim_options(),
        Execution::Parallel,
    )?;
    let mut paths = vec![];
    ctx.csv("", |w, p| io::write_marginals(w, p, &s), &mut paths)?;
    ctx.json("", &s, &mut paths)?;
    let last = s.mean.last().expect("grid is nonempty");
    ctx.done(format!("mean(t_max)={:.6}±{:.6} events={}", last.mean, last.half_width, s.events), &paths)
}

fn couple(ctx: &Ctx) -> Result<(), CliError> {
    let e = ctx.e();
    let grid = e.grid();
    let r = coupled_distance_curve(
        &ctx.model,
        &ctx.init()?,
        &ctx.cfg.law(&ctx.cfg.init_y)?,
        e.n,
        e.n_replicas,
        &grid,
        ctx.cfg.seed,
        Execution::Parallel,
    )?;
    // fit over the prefix before the curve first hits zero
    let positive = r.values.iter().take_while(|v| **v > 0.0).count();
    let end = if positive > 0 { grid[positive - 1] } else { 0.0 };
    let (rate, r2) = fit_decay_rate(&r, (0.0, end)).unwrap_or((f64::NAN, f64::NAN));
    let r = r.with_meta("decay_rate", rate).with_meta("decay_r2", r2);
    let mut paths = vec![];
    ctx.experiment(&r, &mut paths)?;
    ctx.done(format!("E_d0={:.6} decay_rate={rate:.6} r2={r2:.6}", r.values[0]), &paths)
}

fn ode(ctx: &Ctx) -> Result<(), CliError> {
    let e = ctx.e();
    let u0 = ctx.init()?;
    let flow = integrate_flow(&ctx.model, &u0, &e.grid(), FlowOptions { dt: e.dt, ..FlowOptions::default() })?;
    let cert = exp_moment_certificate(&ctx.model, &u0, e.delta, e.scan_max).ok();
    let mut paths = vec![];
    ctx.csv("", |w, p| io::write_flow_long(w, p, &flow), &mut paths)?;
    ctx.csv("summary", |w, p| io::write_flow_summary(w, p, &flow, e.delta), &mut paths)?;
    #[derive(Serialize)]
    struct OdeSummary<'a> {
        times: &'a [f64],
        means: &'a [f64],
        cap: usize,
        leaked: f64,
        certificate: Option<mfbd::meanfield::MomentCertificate>,
        certificate_margins: Option<Vec<f64>>,
    }
    let margins = cert.as_ref().filter(|c| c.applicable).map(|c| c.margins(&flow));
    ctx.json(
        "",
        &OdeSummary {
            times: &flow.times,
            means: &flow.means,
            cap: flow.cap,
            leaked: flow.leaked,
            certificate: cert,
            certificate_margins: margins,
        },
        &mut paths,
    )?;
    ctx.done(format!("mean(t_max)={:.9} cap={}", flow.means.last().expect("nonempty"), flow.cap), &paths)
}

#[derive(Serialize)]
struct MassRow {
    k: usize,
    mass: f64,
}

fn fixed(ctx: &Ctx) -> Result<(), CliError> {
    let u = fixed_point(&ctx.model, &ctx.init()?, ctx.e().tol)?;
    let rows: Vec<MassRow> = u.mass().iter().enumerate().map(|(k, &mass)| MassRow { k, mass }).collect();
    let mut paths = vec![];
    ctx.csv("", |w, p| io::write_rows(w, p, &rows), &mut paths)?;
    ctx.json("", &u, &mut paths)?;
    ctx.done(format!("mean={:.9} support={}", u.first_moment(), u.k()), &paths)
}

fn sweep(ctx: &Ctx, epsilons: &[f64]) -> Result<mfbd::analysis::ChaosSweep, CliError> {
    let e = ctx.e();
    Ok(chaos_sweep(
        &ctx.model,
        &ctx.init()?,
        &e.n_list,
        &e.grid(),
        e.n_replicas,
        epsilons,
        ctx.cfg.seed,
        Execution::Parallel,
    )?)
}

fn fit_text(r: &ExperimentResult) -> String {
    match r.fit {
        Some(f) => format!("slope={:.4} r2={:.4}", f.slope, f.r2),
        None => "slope=nan".into(),
    }
}

fn chaos(ctx: &Ctx) -> Result<(), CliError> {
    let r = sweep(ctx, &[])?.chaos_result();
    let mut paths = vec![];
    ctx.experiment(&r, &mut paths)?;
    ctx.done(fit_text(&r), &paths)
}

fn empirical(ctx: &Ctx) -> Result<(), CliError> {
    let s = sweep(ctx, &ctx.e().epsilons)?;
    let r = s.empirical_result();
    let rows = s.deviations();
    let bad = rows.iter().filter(|r| !r.consistent).count();
    let mut paths = vec![];
    ctx.experiment(&r, &mut paths)?;
    ctx.csv("deviation", |w, p| io::write_rows(w, p, &rows), &mut paths)?;
    ctx.done(format!("{} markov_inconsistent={bad}", fit_text(&r)), &paths)
}

fn stationary(ctx: &Ctx) -> Result<(), CliError> {
    let e = ctx.e();
    let reference = fixed_point(&ctx.model, &ctx.init()?, e.tol)?;
    let opts = StationaryOptions {
        burn_in: e.burn_in,
        n_samples: e.n_samples,
        spacing: e.spacing,
        n_chains: e.n_chains,
        init: None,
    };
    let (mut grid, mut values, mut hws, mut flags) = (vec![], vec![], vec![], vec![]);
    for &n in &e.n_list {
        let r = stationary_comparison(&ctx.model, n, &reference, &opts, ctx.cfg.seed, Execution::Parallel)?;
        grid.push(n as f64);
        values.push(r.values[0]);
        hws.push(r.half_widths[0]);
        flags.push(r.meta["burn_in_suspect"].clone());
    }
    let fit = mfbd::analysis::log_log_fit(&grid, &values);
    let r = ExperimentResult::new("stationary_w1", grid, values, hws)
        .with_fit(fit)
        .with_meta("burn_in_suspect", flags)
        .with_meta("options", &opts)
        .with_meta("seed", ctx.cfg.seed);
    let mut paths = vec![];
    ctx.experiment(&r, &mut paths)?;
    ctx.done(fit_text(&r), &paths)
}

fn lyapunov(ctx: &Ctx) -> Result<(), CliError> {
    let e = ctx.e();
    let a = lyapunov_audit(&ctx.model, e.n, e.n_states, e.max_coord, ctx.cfg.seed)?;
    let mut paths = vec![];
    ctx.json("", &a, &mut paths)?;
    ctx.done(
        format!(
            "kappa={} violations={} worst_margin={:.3e} states={}",
            a.kappa, a.violations, a.worst_margin, a.states_checked
        ),
        &paths,
    )
}

/// Contraction rate to audit: `λ` for pairwise interaction, `λ − 2α` otherwise.
fn audit_rate(model: &RateModel, scan_max: u64) -> Result<f64, CliError> {
    Ok(scan_constants(model, scan_max)?.kappa)
}

fn audit(ctx: &Ctx) -> Result<(), CliError> {
    let e = ctx.e();
    let m = marginality_audit(&ctx.model, e.n, e.k_max)?;
    let rate = audit_rate(&ctx.model, e.scan_max)?;
    let d = drift_audit(&ctx.model, e.n, e.k_max, rate)?;
    let mut paths = vec![];
    ctx.json("", &serde_json::json!({ "marginality": m, "drift": d }), &mut paths)?;
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    ctx.done(
        format!(
            "marginality {} max_err={:.1e} drift {} rate={rate} violations={} states={}",
            verdict(m.passed),
            m.max_abs_error,
            verdict(d.violations == 0),
            d.violations,
            m.states_checked
        ),
        &paths,
    )?;
    if m.passed && d.violations == 0 {
        Ok(())
    } else {
        Err(CliError::Check("coupling audit failed".into()))
    }
}

fn check(ctx: &Ctx) -> Result<(), CliError> {
    let e = ctx.e();
    let lambda_scan = check_assumption_a(&ctx.model, e.scan_max)?;
    let c = scan_constants(&ctx.model, e.scan_max)?;
    let report = match ctx.model.interaction() {
        Interaction::MeanField { .. } => {
            Some(check_assumption_b(&ctx.model, e.scan_max, &default_mean_grid(e.scan_max as f64))?)
        }
        _ => None,
    };
    let mut paths = vec![];
    ctx.json(
        "",
        &serde_json::json!({ "lambda_scan": lambda_scan, "constants": c, "assumption_b": report }),
        &mut paths,
    )?;
    let warnings = report.as_ref().map(|r| r.warnings.join("; ")).unwrap_or_default();
    let alpha_scan = report.as_ref().map(|r| r.alpha_min);
    ctx.done(
        format!(
            "lambda={} alpha={} kappa={} (scan: lambda={lambda_scan} alpha={}){}",
            c.lambda,
            c.alpha,
            c.kappa,
            alpha_scan.map_or("n/a".into(), |a| a.to_string()),
            if warnings.is_empty() { String::new() } else { format!(" warnings: {warnings}") }
        ),
        &paths,
    )
}

fn w1(a: &PathBuf, b: &PathBuf) -> Result<(), CliError> {
    let read = |p: &PathBuf| -> Result<DistN, CliError> {
        let f = File::open(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        DistN::from_csv(f, 1e-9).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
    };
    println!("{}", w1_dist(&read(a)?, &read(b)?));
    Ok(())
}

fn verify(ctx: &Ctx) -> Result<(), CliError> {
    let e = ctx.e();
    let mut failures = vec![];
    let mut line = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures.push(name.to_owned());
        }
    };
    let (n, k) = (e.n.min(2), e.k_max.min(4));
    let m = marginality_audit(&ctx.model, n, k)?;
    line("marginality", m.passed, format!("N={n} K={k} max_err={:.1e}", m.max_abs_error));
    let rate = audit_rate(&ctx.model, e.scan_max)?;
    if rate > 0.0 {
        let d = drift_audit(&ctx.model, n, k, rate)?;
        line("drift", d.violations == 0, format!("rate={rate} violations={}", d.violations));
    } else {
        line("drift", true, format!("skipped: rate {rate} is not positive"));
    }
    let mut r = rng::stream(ctx.cfg.seed, rng::tag("verify-w1"), 0);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let mut draw = || {
            let len = r.random_range(1..=12usize);
            let raw: Vec<f64> = (0..len).map(|_| r.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            DistN::new(raw.into_iter().map(|x| x / s).collect(), 1e-9)
        };
        let (u, v) = (draw()?, draw()?);
        worst = worst.max((w1_dist(&u, &v) - w1_oracle(&u, &v)?).abs());
    }
    line("w1", worst <= 1e-9, format!("max_err={worst:.1e}"));
    if !matches!(ctx.model.interaction(), Interaction::QuadraticPairwise { .. }) {
        let u0 = ctx.init()?;
        let c = scan_constants(&ctx.model, e.scan_max)?;
        if c.kappa > 0.0 {
            let f = integrate_flow(&ctx.model, &u0, &e.grid(), FlowOptions { dt: e.dt, ..FlowOptions::default() })?;
            let bound = u0.first_moment() + ctx.model.b0() / c.kappa;
            let worst = f.means.iter().map(|m| m - bound).fold(f64::NEG_INFINITY, f64::max);
            line("mean_bound", worst <= 1e-6, format!("max(‖u_t‖ − bound)={worst:.3e}"));
        }
    }
    if failures.is_empty() {
        println!("verify: all checks passed");
        Ok(())
    } else {
        Err(CliError::Check(format!("failed checks: {}", failures.join(", "))))
    }
}
