use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::corrector::SublinearityCurve;
use crate::energy::MoserSchedule;
use crate::environment::{MomentReport, RefinementReport};
use crate::error::{Error, Result};
use crate::homogenize::{BoundsReport, EffectiveMatrix, MoserAuditReport};
use crate::montecarlo::{CltReport, Conservativeness, EnvironmentAverage};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub iterations: Vec<usize>,
    pub residuals: Vec<f64>,
    pub chi_means: Vec<f64>,
    pub harmonicity_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SublinearityReport {
    pub per_seed: Vec<SublinearityCurve>,
    pub mean: SublinearityCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeChangeReport {
    pub label: String,
    pub covariance_scale: f64,
    pub conservativeness: Conservativeness,
    pub clt: CltReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicReport {
    pub lambda_inv: EnvironmentAverage,
    pub lambda_max: EnvironmentAverage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub value: f64,
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub limit: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Everything one run computed. Only `timings` varies between identical runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: RunConfig,
    pub stages: Vec<String>,
    pub field_hash: Option<String>,
    pub moments: Option<MomentReport>,
    pub refinement: Option<RefinementReport>,
    pub solve: Option<SolveSummary>,
    pub effective: Option<EffectiveMatrix>,
    pub bounds: Option<BoundsReport>,
    pub schedule: Option<MoserSchedule>,
    pub sublinearity: Option<SublinearityReport>,
    pub audit: Option<MoserAuditReport>,
    pub clt: Option<CltReport>,
    pub time_change: Option<TimeChangeReport>,
    pub ergodic: Option<ErgodicReport>,
    pub checks: Vec<CheckOutcome>,
    pub artifacts: Vec<PathBuf>,
    pub timings: Vec<StageTiming>,
}

impl RunReport {
    pub fn new(config: RunConfig) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            stages: Vec::new(),
            field_hash: None,
            moments: None,
            refinement: None,
            solve: None,
            effective: None,
            bounds: None,
            schedule: None,
            sublinearity: None,
            audit: None,
            clt: None,
            time_change: None,
            ergodic: None,
            checks: Vec::new(),
            artifacts: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a stored report, refusing any other schema version.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Format("report has no schema_version".into()))?;
        if found != SCHEMA_VERSION as u64 {
            return Err(Error::Version {
                found: found as u32,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Copy with wall-clock fields cleared, for determinism comparisons.
    pub fn without_timings(&self) -> Self {
        RunReport {
            timings: Vec::new(),
            ..self.clone()
        }
    }

    /// One CSV per curve; returns the written paths.
    pub fn write_csvs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut emit = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> Result<()>| -> Result<()> {
            let mut buf = Vec::new();
            f(&mut buf)?;
            let path = dir.join(name);
            std::fs::write(&path, buf)?;
            written.push(path);
            Ok(())
        };
        if let Some(s) = &self.sublinearity {
            emit("sublinearity.csv", &|w| s.mean.write_csv(w))?;
        }
        if let Some(a) = &self.audit {
            emit("audit.csv", &|w| a.write_csv(w))?;
        }
        if let Some(c) = &self.clt {
            emit("clt.csv", &|w| write_clt_csv(w, c))?;
        }
        if let Some(t) = &self.time_change {
            emit("time_change.csv", &|w| write_clt_csv(w, &t.clt))?;
        }
        Ok(written)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let cfg = &self.config;
        let _ = writeln!(s, "# Run report\n");
        let _ = writeln!(
            s,
            "ehom {} (schema {}), d = {}, N = {}, h = {}, seed {}\n",
            self.tool_version,
            self.schema_version,
            cfg.environment.dimension,
            cfg.grid.cells_per_side,
            cfg.grid.spacing(),
            cfg.seed
        );
        if let Some(hash) = &self.field_hash {
            let _ = writeln!(s, "field `{hash}`\n");
        }
        if let Some(m) = &self.moments {
            let _ = writeln!(
                s,
                "## Moments\n\np = {}, q = {}: avg lambda^-q = {:.6e}, avg Lambda^p = {:.6e}, 1/p + 1/q = {:.6} against 2/d = {:.6} ({})\n",
                m.p,
                m.q,
                m.emp_lambda_inv_q,
                m.emp_lambda_max_p,
                m.condition_value,
                m.threshold,
                if m.admissible { "admissible" } else { "not admissible" }
            );
        }
        if let Some(d) = &self.effective {
            let _ = writeln!(s, "## Effective matrix\n\n| entry | error bar |\n|---|---|");
            for i in 0..d.d {
                for j in 0..d.d {
                    let _ = writeln!(
                        s,
                        "| D{}{} = {:.6} | {:.1e} |",
                        subscript(i + 1),
                        subscript(j + 1),
                        d.get(i, j),
                        d.error_bars[i * d.d + j]
                    );
                }
            }
            let _ = writeln!(s, "\neigenvalues {:?}\n", d.eigenvalues);
        }
        if let Some(b) = &self.bounds {
            let _ = writeln!(
                s,
                "## Variational bounds\n\n| xi | lower | xi^T D xi | upper | ok |\n|---|---|---|---|---|"
            );
            for r in &b.rows {
                let xi: Vec<String> = r.xi.iter().map(|v| format!("{v:.3}")).collect();
                let _ = writeln!(
                    s,
                    "| ({}) | {:.6} | {:.6} | {:.6} | {} |",
                    xi.join(", "),
                    r.lower,
                    r.value,
                    r.upper,
                    r.lower_ok && r.upper_ok
                );
            }
            s.push('\n');
        }
        if let Some(sub) = &self.sublinearity {
            let slope = sub
                .mean
                .slope
                .map_or("undefined".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                s,
                "## Sublinearity\n\nslope {slope}, decreasing pairs {}/{}, seeds {}\n",
                sub.mean.decreasing_pairs(),
                sub.mean.rows.len().saturating_sub(1),
                sub.per_seed.len()
            );
        }
        if let Some(a) = &self.audit {
            let _ = writeln!(
                s,
                "## Maximal-inequality audit\n\nR = {}, sigma' = {}, sigma = {}, alpha = {}, kappa' = {:.6}\n\n| epsilon | lhs | rhs core | ratio |\n|---|---|---|---|",
                a.radius, a.sigma_prime, a.sigma, a.alpha, a.kappa_prime
            );
            for r in &a.rows {
                let _ = writeln!(
                    s,
                    "| {} | {:.6e} | {:.6e} | {:.6e} |",
                    r.epsilon, r.lhs, r.rhs_core, r.ratio
                );
            }
            let _ = writeln!(
                s,
                "\nenvelope [{:.6e}, {:.6e}], stability {:.3}\n",
                a.min_ratio, a.max_ratio, a.stability
            );
        }
        if let Some(c) = &self.clt {
            render_clt(&mut s, "Invariance principle", c);
        }
        if let Some(t) = &self.time_change {
            let _ = writeln!(
                s,
                "## Time change ({})\n\ncovariance scale {:.6}, mean tau_t/t = {:.6} ± {:.1e} (target {:.6})\n",
                t.label,
                t.covariance_scale,
                t.conservativeness.mean,
                t.conservativeness.std_error,
                t.conservativeness.target
            );
            render_clt(&mut s, "Time-changed walk", &t.clt);
        }
        if let Some(e) = &self.ergodic {
            let _ = writeln!(
                s,
                "## Ergodic averages\n\n| function | time average | spatial average | relative error |\n|---|---|---|---|"
            );
            for (name, a) in [("1/lambda", &e.lambda_inv), ("Lambda", &e.lambda_max)] {
                let _ = writeln!(
                    s,
                    "| {name} | {:.6} | {:.6} | {:.2e} |",
                    a.mean, a.spatial_mean, a.relative_error
                );
            }
            s.push('\n');
        }
        if !self.checks.is_empty() {
            let _ = writeln!(
                s,
                "## Checks\n\n| check | value | limit | result |\n|---|---|---|---|"
            );
            for c in &self.checks {
                let _ = writeln!(
                    s,
                    "| {} | {:.6e} | {:.6e} | {} |",
                    c.name,
                    c.value,
                    c.limit,
                    if c.pass { "PASS" } else { "FAIL" }
                );
            }
        }
        s
    }
}

fn render_clt(s: &mut String, title: &str, c: &CltReport) {
    let _ = writeln!(
        s,
        "## {title}\n\n{} paths\n\n| t | covariance error |\n|---|---|",
        c.paths
    );
    for r in &c.covariance {
        let _ = writeln!(s, "| {} | {:.4} |", r.t, r.relative_error);
    }
    let _ = writeln!(
        s,
        "\n| t | xi | KS statistic | p-value |\n|---|---|---|---|"
    );
    for r in &c.ks {
        let xi: Vec<String> = r.xi.iter().map(|v| format!("{v:.3}")).collect();
        let _ = writeln!(
            s,
            "| {} | ({}) | {:.4} | {:.4} |",
            r.t,
            xi.join(", "),
            r.statistic,
            r.p_value
        );
    }
    let _ = writeln!(s, "\n{}\n", c.note);
}

fn subscript(i: usize) -> String {
    const DIGITS: [char; 10] = ['₀', '₁', '₂', '₃', '₄', '₅', '₆', '₇', '₈', '₉'];
    i.to_string()
        .chars()
        .map(|c| DIGITS[c.to_digit(10).unwrap_or(0) as usize])
        .collect()
}

fn write_clt_csv<W: Write>(w: &mut W, c: &CltReport) -> Result<()> {
    writeln!(w, "kind,t,direction,value,p_value")?;
    for r in &c.covariance {
        writeln!(w, "covariance_error,{},,{},", r.t, r.relative_error)?;
    }
    for r in &c.ks {
        let xi: Vec<String> = r.xi.iter().map(|v| v.to_string()).collect();
        writeln!(
            w,
            "ks,{},{},{},{}",
            r.t,
            xi.join(" "),
            r.statistic,
            r.p_value
        )?;
    }
    Ok(())
}
