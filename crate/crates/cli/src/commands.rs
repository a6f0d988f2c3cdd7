//! Subcommand drivers. Each one writes its files, then the manifest.

use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use dynqueue::output::format_f64;
use dynqueue::stability::{check_overload_bound, Classification, THRESHOLD_MATCH_TOL};
use dynqueue::static_oracle::verify_bound;
use dynqueue::{
    classify, compute_constants, critical_rate, return_time, run, CriticalPoint, Error, PolicySpec,
    SearchGrid, ServiceProfile, SimConfig, StabilityConstants, StaticProblem, Trajectory,
};
use rayon::prelude::*;

use crate::config::{usage, RateSpec, RunConfig};
use crate::output::{write_file, Derived, Manifest, OutputDir, Report, RunRecord};

/// Profile, critical point and certificate constants shared by every command.
pub struct Setup {
    pub cfg: RunConfig,
    pub profile: ServiceProfile,
    pub critical: CriticalPoint,
    pub constants: Option<StabilityConstants>,
    pub workers: usize,
}

impl Setup {
    pub fn new(cfg: RunConfig, workers: usize) -> Result<Self> {
        let profile = ServiceProfile::new(cfg.profile.clone())?;
        let critical = critical_rate(&profile, cfg.server.tau)?;
        let constants = if critical.degenerate {
            None
        } else {
            Some(compute_constants(&profile, cfg.server.tau, &critical)?)
        };
        Ok(Setup {
            cfg,
            profile,
            critical,
            constants,
            workers,
        })
    }

    fn tau(&self) -> f64 {
        self.cfg.server.tau
    }

    fn out_dir(&self) -> Result<OutputDir> {
        OutputDir::create(&self.cfg.output.dir)
    }

    fn manifest(&self, command: &str, resolved: &RunConfig) -> Manifest {
        Manifest::new(
            command,
            resolved.to_toml(),
            Derived::new(&self.critical, self.constants.as_ref()),
        )
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()?)
    }

    fn resolve_policy(&self, resolved: &mut RunConfig) -> Result<PolicySpec> {
        let policy = self.cfg.policy_spec(&self.critical)?;
        resolved.policy.threshold = policy.threshold_value();
        Ok(policy)
    }

    fn sim_config(&self, lambda: f64) -> SimConfig {
        let sim = &self.cfg.sim;
        SimConfig {
            lambda,
            tau: self.tau(),
            x0: sim.x0,
            n0: sim.n0,
            horizon_tasks: sim.horizon_tasks,
            record: sim.record,
        }
    }

    fn simulate(&self, lambda: f64, policy: &PolicySpec) -> Result<(Trajectory, Classification)> {
        let tr = run(&self.sim_config(lambda), &self.profile, policy)?;
        let class = classify(&tr, &self.profile, &self.critical)?;
        Ok((tr, class))
    }
}

fn critical_report(report: &mut Report, s: &Setup) {
    report
        .text("profile", s.cfg.profile.family)
        .text(
            "params",
            s.cfg
                .profile
                .params
                .iter()
                .map(|p| format_f64(*p))
                .collect::<Vec<_>>()
                .join(";"),
        )
        .num("tau", s.tau())
        .num("lambda_eq_max", s.critical.lambda_eq_max)
        .num("x_th", s.critical.x_th)
        .text("degenerate", s.critical.degenerate)
        .num("gap_at_min", s.critical.gap_at_min);
}

fn constants_report(report: &mut Report, k: &StabilityConstants) {
    report
        .num("x_min", k.x_min)
        .num("x_tilde", k.x_tilde)
        .num("x_l1", k.x_l1)
        .num("x_l2", k.x_l2)
        .num("x_u1", k.x_u1)
        .num("x_u2", k.x_u2)
        .num("x_lower", k.x_lower)
        .num("x_upper", k.x_upper)
        .num("c1", k.c1)
        .num("c2", k.c2)
        .num("c", k.c);
}

fn growth_text(class: &Classification) -> String {
    class
        .evidence
        .growth
        .map_or_else(|| "nan".to_string(), |g| format_f64(g.slope))
}

fn run_report(report: &mut Report, tr: &Trajectory, class: &Classification) {
    let s = &tr.summary;
    report
        .num("lambda", tr.config.lambda)
        .text("policy", tr.policy)
        .num("x0", tr.config.x0)
        .text("n0", tr.config.n0)
        .text("horizon_tasks", tr.config.horizon_tasks)
        .text("arrivals", s.arrivals)
        .text("completions", s.completions)
        .num("end_time", s.end_time)
        .text("max_queue", s.max_queue)
        .text("final_queue", s.final_queue)
        .text("growth_rate", growth_text(class))
        .num("slope_eps", class.evidence.slope_eps);
    if let Some(b) = class.evidence.queue_bound {
        report.text("queue_bound", b.bound);
    }
    report.text("verdict", class.verdict);
}

fn write_run(
    root: &std::path::Path,
    prefix: &str,
    tr: &Trajectory,
    report: &Report,
) -> Result<Vec<String>> {
    let csv = format!("{prefix}trajectory.csv");
    let summary = format!("{prefix}summary.txt");
    write_file(root, &csv, |w| tr.write_csv(w))?;
    write_file(root, &summary, |w| w.write_all(report.render().as_bytes()))?;
    Ok(vec![csv, summary])
}

pub fn equilibrium(s: &Setup) -> Result<PathBuf> {
    let mut resolved = s.cfg.clone();
    let rates: Vec<f64> = if s.cfg.equilibrium.curve_lambdas.is_empty() {
        vec![s.critical.lambda_eq_max]
    } else {
        s.cfg
            .equilibrium
            .curve_lambdas
            .iter()
            .map(|r| r.resolve(&s.critical))
            .collect::<Result<_>>()?
    };
    resolved.equilibrium.curve_lambdas = rates.iter().map(|&l| RateSpec::Absolute(l)).collect();
    let points = s.cfg.equilibrium.curve_points.max(2);

    let mut report = Report::default();
    critical_report(&mut report, s);
    if let Some(k) = &s.constants {
        constants_report(&mut report, k);
    }
    if s.critical.degenerate {
        eprintln!(
            "warning: degenerate critical point (x_th = {}); certificates are unavailable",
            format_f64(s.critical.x_th)
        );
    }

    let mut out = s.out_dir()?;
    out.write_str("equilibrium.txt", &report.render())?;
    let mut rows = String::from("lambda,x,S,R\n");
    for &lambda in &rates {
        for i in 0..points {
            let x = i as f64 / (points - 1) as f64;
            let r = if lambda > 0.0 {
                return_time(x, s.tau(), lambda)?
            } else {
                f64::INFINITY
            };
            rows.push_str(&format!(
                "{},{},{},{}\n",
                format_f64(lambda),
                format_f64(x),
                format_f64(s.profile.eval(x)),
                format_f64(r)
            ));
        }
    }
    out.write_str("curves.csv", &rows)?;
    print!("{}", report.render());
    out.finish(s.manifest("equilibrium", &resolved))
}

pub fn simulate(s: &Setup) -> Result<PathBuf> {
    let mut resolved = s.cfg.clone();
    let lambda = s.cfg.sim.lambda.resolve(&s.critical)?;
    resolved.sim.lambda = RateSpec::Absolute(lambda);
    let policy = s.resolve_policy(&mut resolved)?;

    let (tr, class) = s.simulate(lambda, &policy)?;
    let mut report = Report::default();
    run_report(&mut report, &tr, &class);

    let mut out = s.out_dir()?;
    for f in write_run(out.root(), "", &tr, &report)? {
        out.record(&f);
    }
    print!("{}", report.render());
    let mut manifest = s.manifest("simulate", &resolved);
    manifest.runs.push(record(&tr, &class, "."));
    out.finish(manifest)
}

fn record(tr: &Trajectory, class: &Classification, dir: &str) -> RunRecord {
    RunRecord {
        lambda: tr.config.lambda,
        policy: tr.policy.to_string(),
        verdict: class.verdict.to_string(),
        max_queue: tr.summary.max_queue,
        growth_rate: class.evidence.growth.map(|g| g.slope),
        dir: dir.to_string(),
    }
}

pub fn sweep(s: &Setup) -> Result<PathBuf> {
    let mut resolved = s.cfg.clone();
    if s.cfg.sweep.lambdas.is_empty() {
        return Err(usage("sweep.lambdas is empty"));
    }
    let mut rates: Vec<f64> = s
        .cfg
        .sweep
        .lambdas
        .iter()
        .map(|r| r.resolve(&s.critical))
        .collect::<Result<_>>()?;
    rates.sort_by(f64::total_cmp);
    resolved.sweep.lambdas = rates.iter().map(|&l| RateSpec::Absolute(l)).collect();
    let policy = s.resolve_policy(&mut resolved)?;

    let mut out = s.out_dir()?;
    let root = out.root().to_path_buf();
    let results: Vec<(String, Vec<String>, Trajectory, Classification)> =
        s.pool()?.install(|| {
            rates
                .par_iter()
                .enumerate()
                .map(|(i, &lambda)| {
                    let (tr, class) = s.simulate(lambda, &policy)?;
                    let mut report = Report::default();
                    run_report(&mut report, &tr, &class);
                    let dir = format!("runs/lambda_{i:03}");
                    let files = write_run(&root, &format!("{dir}/"), &tr, &report)?;
                    Ok((dir, files, tr, class))
                })
                .collect::<Result<_>>()
        })?;

    let mut table = String::from("lambda,verdict,max_queue,growth_rate\n");
    let mut manifest = s.manifest("sweep", &resolved);
    for (dir, files, tr, class) in &results {
        for f in files {
            out.record(f);
        }
        table.push_str(&format!(
            "{},{},{},{}\n",
            format_f64(tr.config.lambda),
            class.verdict,
            tr.summary.max_queue,
            growth_text(class)
        ));
        manifest.runs.push(record(tr, class, dir));
    }
    out.write_str("summary.csv", &table)?;
    print!("{table}");
    out.finish(manifest)
}

pub fn static_oracle(s: &Setup) -> Result<PathBuf> {
    let mut resolved = s.cfg.clone();
    let st = &s.cfg.static_;
    let tau = s.tau();
    let x = st.x.unwrap_or(s.critical.x_th);
    let defaults = SearchGrid::default_for(tau);
    let grid = SearchGrid::new(
        st.grid_step.unwrap_or(defaults.step),
        st.idle_cap.unwrap_or(defaults.cap),
    )?;
    resolved.static_.x = Some(x);
    resolved.static_.grid_step = Some(grid.step);
    resolved.static_.idle_cap = Some(grid.cap);

    let problem = StaticProblem::new(x, tau, st.n)?;
    let check = s
        .pool()?
        .install(|| verify_bound(&problem, &s.profile, &s.critical, &grid))?;

    let mut report = Report::default();
    report
        .text("n", problem.n)
        .num("x", x)
        .num("tau", tau)
        .num("grid_step", grid.step)
        .num("idle_cap", grid.cap)
        .num("lambda_eq_max", s.critical.lambda_eq_max)
        .text(
            "best_schedule",
            check
                .best_schedule
                .idle_before()
                .iter()
                .map(|d| format_f64(*d))
                .collect::<Vec<_>>()
                .join(";"),
        )
        .num("best_time", check.best_time)
        .num("bound", check.bound)
        .num("margin", check.margin)
        .num("tolerance", check.tolerance)
        .text("evaluated", check.evaluated)
        .text("result", if check.pass { "pass" } else { "fail" });

    let mut out = s.out_dir()?;
    out.write_str("static_oracle.txt", &report.render())?;
    print!("{}", report.render());
    out.finish(s.manifest("static-oracle", &resolved))
}

pub fn certify(s: &Setup) -> Result<PathBuf> {
    let Some(constants) = s.constants else {
        return Err(anyhow::Error::new(Error::Degenerate {
            x_th: s.critical.x_th,
        })
        .context("certificates need x_th < 1; this profile has no finite critical threshold"));
    };
    let mut resolved = s.cfg.clone();
    let lambda = s.cfg.sim.lambda.resolve(&s.critical)?;
    resolved.sim.lambda = RateSpec::Absolute(lambda);
    let policy = s.resolve_policy(&mut resolved)?;
    let (tr, class) = s.simulate(lambda, &policy)?;

    let mut report = Report::default();
    critical_report(&mut report, s);
    constants_report(&mut report, &constants);
    run_report(&mut report, &tr, &class);

    let at_threshold = policy
        .threshold_value()
        .is_some_and(|t| (t - s.critical.x_th).abs() <= THRESHOLD_MATCH_TOL);
    let mut bound_cell = String::new();
    let mut slack_cell = String::new();
    let mut holds = true;
    if let Some(b) = class.evidence.queue_bound {
        let ok = tr.summary.max_queue <= b.bound;
        holds &= ok;
        report
            .text("n_t1", b.n_t1)
            .text("busy_increment", b.busy_increment)
            .text("idle_increment", b.idle_increment)
            .text("queue_bound_holds", ok);
        bound_cell = b.bound.to_string();
    } else if lambda > s.critical.lambda_eq_max {
        let in_band = constants.in_band(s.critical.x_th);
        report.text("x_th_in_band", in_band);
        if at_threshold && in_band {
            match check_overload_bound(&tr, &constants, s.critical.lambda_eq_max)? {
                Some(c) => {
                    holds &= c.holds();
                    report
                        .text("band_visits", c.visits)
                        .num("overload_min_slack", c.min_slack)
                        .text("overload_bound_holds", c.holds());
                    slack_cell = format_f64(c.min_slack);
                }
                None => {
                    report.text("overload_bound", "no_band_visits");
                }
            }
        } else {
            report.text("overload_bound", "not_applicable");
        }
    } else {
        report.text("queue_bound", "not_applicable");
    }
    report.text("certificate_holds", holds);

    let mut out = s.out_dir()?;
    out.write_with("trajectory.csv", |w| tr.write_csv(w))?;
    out.write_str("certificate.txt", &report.render())?;
    out.write_str(
        "certificate.csv",
        &format!(
            "lambda,verdict,max_queue,growth_rate,queue_bound,overload_min_slack\n{},{},{},{},{},{}\n",
            format_f64(lambda),
            class.verdict,
            tr.summary.max_queue,
            growth_text(&class),
            bound_cell,
            slack_cell
        ),
    )?;
    print!("{}", report.render());
    let mut manifest = s.manifest("certify", &resolved);
    manifest.runs.push(record(&tr, &class, "."));
    out.finish(manifest)
}
