use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{CheckConfig, RunConfig, ThetaChoice};
use super::report::{
    CheckOutcome, ErgodicReport, RunReport, SolveSummary, StageTiming, SublinearityReport,
    TimeChangeReport,
};
use crate::corrector::{
    harmonic_coordinates, io::write_correctors, solve_correctors, sublinearity_scan, CorrectorField,
};
use crate::energy::{assemble, DiscreteDirichletForm};
use crate::environment::{
    generate_field, io::write_field, moment_refinement, validate_moments, CoefficientField,
    DIVERGENCE_SLOPE,
};
use crate::error::{Error, Result};
use crate::homogenize::{
    check_bounds, effective_matrix, moser_audit, random_directions, unit_directions,
    EffectiveMatrix,
};
use crate::montecarlo::{
    clt_statistics, environment_averages, io::write_endpoints_csv, io::write_path,
    martingale_decomposition, relative_matrix_error, simulate_walk, time_change, TimeChangeSpec,
    WalkConfig, WalkEnsemble, DEFAULT_MIXING_FACTOR,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Gen,
    Validate,
    Solve,
    Effective,
    Sublinearity,
    Audit,
    Simulate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Gen => "gen",
            Stage::Validate => "validate",
            Stage::Solve => "solve",
            Stage::Effective => "effective",
            Stage::Sublinearity => "sublinearity",
            Stage::Audit => "audit",
            Stage::Simulate => "simulate",
            Stage::Report => "report",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Error,
    },
    #[error("acceptance checks failed: {}", .0.join(", "))]
    Check(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 4,
            CliError::Stage { source, .. } => match source {
                Error::Config(_)
                | Error::Shape { .. }
                | Error::Range(_)
                | Error::Degenerate(_)
                | Error::ZeroRate { .. } => 2,
                Error::NonConvergence { .. } => 3,
                _ => 1,
            },
        }
    }
}

pub(crate) fn at<T>(stage: Stage, r: Result<T>) -> std::result::Result<T, CliError> {
    r.map_err(|source| CliError::Stage { stage, source })
}

/// Every stage a full run executes for this config, in dependency order.
pub fn all_stages(cfg: &RunConfig) -> Vec<Stage> {
    let mut s = vec![Stage::Gen, Stage::Validate, Stage::Solve, Stage::Effective];
    if cfg.sublinearity.is_some() {
        s.push(Stage::Sublinearity);
    }
    if cfg.audit.is_some() {
        s.push(Stage::Audit);
    }
    if cfg.montecarlo.is_some() {
        s.push(Stage::Simulate);
    }
    s
}

/// Adds the prerequisites of every requested stage.
pub fn with_dependencies(requested: &[Stage]) -> Vec<Stage> {
    let mut s: Vec<Stage> = Vec::new();
    for &r in requested {
        let deps: &[Stage] = match r {
            Stage::Solve => &[Stage::Gen],
            Stage::Effective => &[Stage::Gen, Stage::Solve],
            Stage::Simulate => &[Stage::Gen, Stage::Solve, Stage::Effective],
            _ => &[],
        };
        s.extend_from_slice(deps);
        s.push(r);
    }
    s.sort();
    s.dedup();
    s
}

#[derive(Default)]
struct State {
    field: Option<CoefficientField>,
    form: Option<DiscreteDirichletForm>,
    correctors: Option<CorrectorField>,
    effective: Option<EffectiveMatrix>,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    report: RunReport,
    state: State,
}

/// Runs `stages` (prerequisites included) and writes the report and artifacts to `out`.
pub fn run_stages(
    cfg: &RunConfig,
    stages: &[Stage],
    out: &Path,
    check: bool,
) -> std::result::Result<RunReport, CliError> {
    at(Stage::Config, cfg.validate())?;
    at(
        Stage::Config,
        std::fs::create_dir_all(out).map_err(Error::from),
    )?;
    let stages = with_dependencies(stages);
    let mut runner = Runner {
        cfg,
        out,
        report: RunReport::new(cfg.clone()),
        state: State::default(),
    };
    for &stage in &stages {
        let start = Instant::now();
        at(stage, runner.stage(stage))?;
        runner.report.stages.push(stage.to_string());
        runner.report.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    if check {
        runner.report.checks = evaluate_checks(&runner.report, cfg.check.as_ref());
    }
    let mut report = runner.report;
    let csvs = at(Stage::Report, report.write_csvs(out))?;
    report
        .artifacts
        .extend(csvs.iter().map(|p| relative(out, p)));
    report.artifacts.push(PathBuf::from("report.json"));
    report.artifacts.push(PathBuf::from("report.md"));
    let json = at(Stage::Report, report.to_json())?;
    at(Stage::Report, write_text(&out.join("report.json"), &json))?;
    at(
        Stage::Report,
        write_text(&out.join("report.md"), &report.to_markdown()),
    )?;
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| c.name.clone())
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Check(failed));
    }
    Ok(report)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn relative(base: &Path, p: &Path) -> PathBuf {
    p.strip_prefix(base)
        .map(Path::to_path_buf)
        .unwrap_or_else(|_| p.to_path_buf())
}

impl Runner<'_> {
    fn stage(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Gen => self.gen(),
            Stage::Validate => self.validate(),
            Stage::Solve => self.solve(),
            Stage::Effective => self.effective(),
            Stage::Sublinearity => self.sublinearity(),
            Stage::Audit => self.audit(),
            Stage::Simulate => self.simulate(),
            Stage::Config | Stage::Report => Ok(()),
        }
    }

    fn artifact(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.report.artifacts.push(PathBuf::from(name));
        Ok(BufWriter::new(File::create(path)?))
    }

    fn field(&mut self) -> Result<&CoefficientField> {
        if self.state.field.is_none() {
            let g = self.cfg.grid;
            let field =
                generate_field(&self.cfg.environment_spec(), g.cells_per_side, g.spacing())?;
            self.report.field_hash = Some(field.descriptor_hash());
            self.state.field = Some(field);
        }
        Ok(self.state.field.as_ref().expect("generated above"))
    }

    fn gen(&mut self) -> Result<()> {
        self.field()?;
        let mut w = self.artifact("field.ehf")?;
        write_field(&mut w, self.state.field.as_ref().expect("generated above"))?;
        Ok(())
    }

    fn validate(&mut self) -> Result<()> {
        let (p, q) = (self.cfg.moments.p, self.cfg.moments.q);
        let report = validate_moments(self.field()?, p, q)?;
        self.report.moments = Some(report);
        let m = &self.cfg.moments;
        if !m.refinement_sizes.is_empty() {
            let seeds = if m.refinement_seeds.is_empty() {
                vec![self.cfg.seed]
            } else {
                m.refinement_seeds.clone()
            };
            let r = moment_refinement(
                &self.cfg.environment_spec(),
                self.cfg.grid.box_side,
                &m.refinement_sizes,
                &seeds,
                p,
                q,
                DIVERGENCE_SLOPE,
            )?;
            let admissible = r.admissible;
            let (inv, big) = (r.divergent_lambda_inv_q, r.divergent_lambda_max_p);
            self.report.refinement = Some(r);
            if !admissible {
                let which = match (inv, big) {
                    (true, true) => "lambda^-q and Lambda^p",
                    (true, false) => "lambda^-q",
                    _ => "Lambda^p",
                };
                return Err(Error::Config(format!(
                    "moments: the empirical moment of {which} diverges under refinement"
                )));
            }
        }
        Ok(())
    }

    fn solve(&mut self) -> Result<()> {
        let form = assemble(self.field()?);
        let chi = solve_correctors(&form, &self.cfg.solver)?;
        let harmonicity_residual = harmonic_coordinates(&chi).harmonicity_residual(&form)?;
        self.report.solve = Some(SolveSummary {
            iterations: chi.iterations().to_vec(),
            residuals: chi.residuals().to_vec(),
            chi_means: chi.means().to_vec(),
            harmonicity_residual,
        });
        let mut w = self.artifact("correctors.chi")?;
        write_correctors(&mut w, &chi)?;
        self.state.form = Some(form);
        self.state.correctors = Some(chi);
        Ok(())
    }

    fn effective(&mut self) -> Result<()> {
        let form = self.state.form.as_ref().expect("solve precedes effective");
        let chi = self
            .state
            .correctors
            .as_ref()
            .expect("solve precedes effective");
        let dm = effective_matrix(form, chi)?;
        let field = self.state.field.as_ref().expect("gen precedes effective");
        let dirs = random_directions(
            field.dim(),
            self.cfg.bounds.directions,
            self.cfg.direction_seed(),
        );
        self.report.bounds = Some(check_bounds(
            &dm,
            field,
            &dirs,
            self.cfg.bounds.tight_tolerance,
        )?);
        self.report.effective = Some(dm.clone());
        self.state.effective = Some(dm);
        Ok(())
    }

    fn sublinearity(&mut self) -> Result<()> {
        let s = self
            .cfg
            .sublinearity
            .as_ref()
            .expect("stage requested with config");
        let seeds = if s.seeds.is_empty() {
            vec![self.cfg.seed]
        } else {
            s.seeds.clone()
        };
        let mut per_seed = Vec::with_capacity(seeds.len());
        for seed in seeds {
            let mut spec = self.cfg.environment_spec();
            spec.seed = seed;
            per_seed.push(sublinearity_scan(
                &spec,
                s.radius,
                &s.sizes,
                &self.cfg.solver,
            )?);
        }
        let mean = crate::corrector::SublinearityCurve::average(&per_seed)?;
        self.report.sublinearity = Some(SublinearityReport { per_seed, mean });
        Ok(())
    }

    fn audit(&mut self) -> Result<()> {
        let a = self
            .cfg
            .audit
            .as_ref()
            .expect("stage requested with config");
        let schedule = self.cfg.schedule()?.ok_or_else(|| {
            Error::Config("audit: the Moser schedule needs dimension >= 2".into())
        })?;
        let report = moser_audit(
            &self.cfg.environment_spec(),
            &schedule,
            a.radius,
            a.sigma_prime,
            a.sigma,
            &a.sizes,
            &self.cfg.solver,
        )?;
        self.report.schedule = Some(schedule);
        self.report.audit = Some(report);
        Ok(())
    }

    fn simulate(&mut self) -> Result<()> {
        let m = self
            .cfg
            .montecarlo
            .as_ref()
            .expect("stage requested with config");
        let field = self.state.field.as_ref().expect("gen precedes simulate");
        let d = field.dim();
        let target = self
            .state
            .effective
            .clone()
            .expect("effective precedes simulate");
        let walk = WalkConfig {
            start: m.start,
            t_max: m.t_max,
            paths: m.paths,
            seed: self.cfg.walk_seed(),
            record_stride: m.record_stride,
        };
        let ensemble = simulate_walk(field, &walk)?;
        let mut dirs: Vec<Vec<f64>> = unit_directions(d)
            .into_iter()
            .take(m.ks_directions)
            .collect();
        if dirs.len() < m.ks_directions {
            dirs.extend(random_directions(
                d,
                m.ks_directions - dirs.len(),
                self.cfg.direction_seed(),
            ));
        }
        let times = m.eval_times();
        let mut clt = clt_statistics(&ensemble, &target, &times, &dirs, &m.thresholds)?;
        if m.martingale {
            let chi = self
                .state
                .correctors
                .as_ref()
                .expect("solve precedes simulate");
            let (_, qv) = martingale_decomposition(&ensemble, chi, &target)?;
            clt.qv = Some(qv);
        }
        self.report.clt = Some(clt);

        let theta = match m.theta {
            ThetaChoice::None => None,
            ThetaChoice::LambdaMax => Some(TimeChangeSpec::lambda_max(field)),
            ThetaChoice::Constant(c) => Some(TimeChangeSpec::constant(field.grid().len(), c)),
        };
        if let Some(spec) = theta {
            let tc = time_change(&ensemble, &spec)?;
            let scaled = scale_matrix(&target, tc.covariance_scale);
            let clt = clt_statistics(&tc.ensemble, &scaled, &times, &dirs, &m.thresholds)?;
            self.report.time_change = Some(TimeChangeReport {
                label: spec.label,
                covariance_scale: tc.covariance_scale,
                conservativeness: tc.conservativeness,
                clt,
            });
        }

        let inv: Vec<f64> = field.lambda().iter().map(|l| 1.0 / l).collect();
        let big = field.lambda_max().to_vec();
        let mut averages = environment_averages(&ensemble, &[&inv, &big], DEFAULT_MIXING_FACTOR)?;
        let lambda_max = averages.pop().expect("two functions");
        let lambda_inv = averages.pop().expect("two functions");
        self.report.ergodic = Some(ErgodicReport {
            lambda_inv,
            lambda_max,
        });
        self.write_walk(&ensemble, m.trace_paths)
    }

    fn write_walk(&mut self, ensemble: &WalkEnsemble, traces: usize) -> Result<()> {
        for i in 0..traces.min(ensemble.len()) {
            let mut w = self.artifact(&format!("walk/path_{i:06}.wlk"))?;
            write_path(&mut w, ensemble, i)?;
        }
        let mut w = self.artifact("endpoints.csv")?;
        write_endpoints_csv(&mut w, ensemble, ensemble.times.len() - 1)
    }
}

fn scale_matrix(m: &EffectiveMatrix, c: f64) -> EffectiveMatrix {
    EffectiveMatrix {
        entries: m.entries.iter().map(|v| v * c).collect(),
        error_bars: m.error_bars.iter().map(|v| v * c).collect(),
        eigenvalues: m.eigenvalues.iter().map(|v| v * c).collect(),
        asymmetry: m.asymmetry * c,
        ..m.clone()
    }
}

fn outcome(name: &str, value: f64, limit: f64, pass: bool) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        value,
        limit,
        pass,
    }
}

/// Compares the computed quantities against the oracle section of the config.
pub fn evaluate_checks(report: &RunReport, check: Option<&CheckConfig>) -> Vec<CheckOutcome> {
    let default = CheckConfig::default();
    let c = check.unwrap_or(&default);
    let mut out = Vec::new();
    if let (Some(expected), Some(dm)) = (&c.effective, &report.effective) {
        let err = relative_matrix_error(&dm.entries, expected, dm.d);
        out.push(outcome(
            "effective",
            err,
            c.effective_tolerance,
            err <= c.effective_tolerance,
        ));
    }
    if let (true, Some(b)) = (c.bounds, &report.bounds) {
        let violations = b
            .rows
            .iter()
            .filter(|r| !(r.lower_ok && r.upper_ok))
            .count() as f64;
        out.push(outcome("bounds", violations, 0.0, b.all_ok));
    }
    if c.clt {
        if let Some(clt) = &report.clt {
            let cov = clt
                .covariance
                .iter()
                .map(|r| r.relative_error)
                .fold(0.0, f64::max);
            let tol = clt.thresholds.covariance_tolerance;
            out.push(outcome("clt_covariance", cov, tol, clt.covariance_pass));
            let p = clt.ks.iter().map(|r| r.p_value).fold(1.0, f64::min);
            out.push(outcome("clt_ks", p, clt.thresholds.ks_p_min, clt.ks_pass));
        }
    }
    if let (Some(max), Some(s)) = (c.sublinearity_slope_max, &report.sublinearity) {
        let slope = s.mean.slope.unwrap_or(f64::INFINITY);
        out.push(outcome("sublinearity_slope", slope, max, slope <= max));
    }
    if let (Some(max), Some(a)) = (c.audit_stability_max, &report.audit) {
        out.push(outcome(
            "audit_stability",
            a.stability,
            max,
            a.stability <= max,
        ));
    }
    out
}
