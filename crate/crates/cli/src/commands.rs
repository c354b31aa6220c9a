use std::path::{Path, PathBuf};
use std::time::Instant;

use adace_core::inference::BootstrapResult;
use adace_core::{
    analyze, impute_many, make_null, oracle_truth, run_study, write_long_csv,
    BootstrapOptions, DegeneratePolicy, EmptyStratumPolicy, ImputationPlan, Parameter,
    ParameterDraw, PlanMode, SettingConfig, StratumLabel, StudyOptions, Subset, Treatment,
    TrialDataset,
};
use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::Command;

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variance {
    Bootstrap,
    Rubin,
    Both,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogisticDraw {
    Proper,
    PlugIn,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Degenerate {
    Reduce,
    Strict,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmptyStratum {
    Error,
    Skip,
}

/// Accepts plain integers and integral floats such as `1e7`.
fn parse_count(s: &str) -> Result<usize, String> {
    if let Ok(n) = s.parse::<usize>() {
        return Ok(n);
    }
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a count"))?;
    if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= 1e15) {
        return Err(format!("`{s}` is not a whole number"));
    }
    Ok(v as usize)
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EstimateArgs {
    /// Trial CSV: subject_id,arm,x1..xp,z1..,i1..,y
    pub data: PathBuf,
    /// Strata to estimate (s*+, s+*, s++); repeat or comma-separate [default: all].
    #[arg(long = "stratum", value_delimiter = ',')]
    pub strata: Vec<StratumLabel>,
    /// Randomized arms averaged over: all, e0 or e1.
    #[arg(long, default_value = "all")]
    pub subset: Subset,
    /// Imputations.
    #[arg(long = "M", default_value_t = 100)]
    pub m: usize,
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 50)]
    pub b: usize,
    /// Imputations per bootstrap replicate [default: M].
    #[arg(long = "Mb")]
    pub mb: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// full or baseline-only.
    #[arg(long, default_value = "full")]
    pub mode: PlanMode,
    #[arg(long, value_enum, default_value_t = Variance::Both)]
    pub variance: Variance,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = LogisticDraw::Proper)]
    pub logistic_draw: LogisticDraw,
    #[arg(long, value_enum, default_value_t = Degenerate::Reduce)]
    pub degenerate: Degenerate,
    #[arg(long, value_enum, default_value_t = EmptyStratum::Error)]
    pub empty_stratum: EmptyStratum,
    /// Also write every completed dataset to imputations.csv.
    #[arg(long)]
    pub write_imputations: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SettingArgs {
    /// Built-in setting: setting1, setting2, setting1-null, setting2-null.
    #[arg(long, conflicts_with = "config")]
    pub setting: Option<String>,
    /// Key-value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Zero the treatment effects on intermediates and outcome.
    #[arg(long)]
    pub null: bool,
}

impl SettingArgs {
    fn resolve(&self, snapshot: Option<SettingConfig>) -> anyhow::Result<SettingConfig> {
        if let Some(cfg) = snapshot {
            return Ok(cfg);
        }
        let cfg = match (&self.setting, &self.config) {
            (_, Some(path)) => SettingConfig::load(path)?,
            (Some(name), None) => SettingConfig::preset(name)?,
            (None, None) => SettingConfig::setting1(),
        };
        Ok(if self.null { make_null(&cfg) } else { cfg })
    }

    fn inputs(&self) -> Vec<PathBuf> {
        self.config.iter().map(|p| absolute(p)).collect()
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub setting: SettingArgs,
    /// Simulated trials.
    #[arg(long = "R", default_value_t = 500)]
    pub r: usize,
    #[arg(long = "M", default_value_t = 100)]
    pub m: usize,
    /// Bootstrap replicates per trial; 0 skips the bootstrap.
    #[arg(long = "B", default_value_t = 50)]
    pub b: usize,
    #[arg(long = "Mb")]
    pub mb: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "full")]
    pub mode: PlanMode,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Subjects simulated for the truth.
    #[arg(long, value_parser = parse_count, default_value = "2e6")]
    pub oracle_n: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct OracleArgs {
    #[command(flatten)]
    pub setting: SettingArgs,
    /// Simulated subjects.
    #[arg(long, value_parser = parse_count, default_value = "1e7")]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn fmt(v: f64) -> String {
    v.to_string()
}

/// Writes `bytes` to `dir/name` and records the path.
fn emit(dir: &Path, name: &str, bytes: &[u8], manifest: &mut RunManifest) -> anyhow::Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).with_context(|| format!("{}", path.display()))?;
    eprintln!("wrote {}", path.display());
    manifest.outputs.push(path);
    Ok(())
}

fn prepare_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))
}

fn finish(mut manifest: RunManifest, dir: &Path, started: Instant) -> anyhow::Result<()> {
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

struct InferenceRow {
    parameter: String,
    method: &'static str,
    estimate: f64,
    se: Option<f64>,
    ci: Option<(f64, f64)>,
    b_or_m: usize,
}

pub fn estimate(args: EstimateArgs, out: &Path) -> anyhow::Result<()> {
    let started = Instant::now();
    anyhow::ensure!(args.m >= 1, "--M must be at least 1");
    anyhow::ensure!(args.alpha > 0.0 && args.alpha < 1.0, "--alpha must lie in (0, 1)");
    let want_boot = matches!(args.variance, Variance::Bootstrap | Variance::Both);
    let want_rubin = matches!(args.variance, Variance::Rubin | Variance::Both);
    anyhow::ensure!(!want_boot || args.b >= 2, "the bootstrap needs --B of at least 2");
    let dataset = TrialDataset::load_csv(&args.data)?;
    let plan = ImputationPlan::for_dataset(args.mode, &dataset)
        .with_logistic_draw(match args.logistic_draw {
            LogisticDraw::Proper => ParameterDraw::Proper,
            LogisticDraw::PlugIn => ParameterDraw::PlugIn,
        })
        .with_degenerate_policy(match args.degenerate {
            Degenerate::Reduce => DegeneratePolicy::Reduce,
            Degenerate::Strict => DegeneratePolicy::Strict,
        });
    let policy = match args.empty_stratum {
        EmptyStratum::Error => EmptyStratumPolicy::Error,
        EmptyStratum::Skip => EmptyStratumPolicy::Skip,
    };
    let strata = if args.strata.is_empty() {
        vec![StratumLabel::SStarPlus, StratumLabel::SPlusStar, StratumLabel::SPlusPlus]
    } else {
        args.strata.clone()
    };
    let parameters: Vec<Parameter> = strata
        .iter()
        .flat_map(|&s| {
            [Treatment::Control, Treatment::Experimental, Treatment::Difference]
                .map(|t| Parameter::new(s, t, args.subset))
        })
        .collect();
    let analyses = analyze(&dataset, &plan, args.m, args.seed, &parameters, policy)?;

    let mut estimates = csv::Writer::from_writer(Vec::new());
    estimates.write_record(["stratum", "subset", "treatment", "estimate", "n_effective", "M"])?;
    for a in &analyses {
        let e = &a.estimate;
        estimates.write_record([
            e.stratum.to_string(),
            e.subset.to_string(),
            e.treatment.to_string(),
            fmt(e.pooled),
            fmt(e.n_effective),
            e.imputations().to_string(),
        ])?;
        if e.skipped > 0 {
            eprintln!("warning: {}: {} imputation(s) with an empty stratum were skipped", e.parameter(), e.skipped);
        }
    }

    let boot: Option<Vec<Result<BootstrapResult, String>>> = if want_boot {
        let mut opts = BootstrapOptions::new(args.b, args.mb.unwrap_or(args.m), args.seed);
        opts.alpha = args.alpha;
        let reps = adace_core::inference::bootstrap_replicates(&dataset, &plan, &opts, &parameters)?;
        Some(
            parameters
                .iter()
                .zip(reps)
                .zip(&analyses)
                .map(|((p, values), a)| {
                    BootstrapResult::from_replicates(
                        *p,
                        args.b,
                        values.into_iter().flatten().collect(),
                        a.estimate.pooled,
                        args.alpha,
                    )
                    .map_err(|e| e.to_string())
                })
                .collect(),
        )
    } else {
        None
    };

    let mut rows = Vec::new();
    for (i, a) in analyses.iter().enumerate() {
        let name = a.estimate.parameter().name();
        if let Some(boot) = &boot {
            match &boot[i] {
                Ok(r) => {
                    if r.unreliable {
                        eprintln!("warning: {name}: {} of {} bootstrap replicates were skipped", r.skipped, r.replicates);
                    }
                    rows.push(InferenceRow {
                        parameter: name.clone(),
                        method: "bootstrap",
                        estimate: a.estimate.pooled,
                        se: Some(r.se),
                        ci: Some(r.ci),
                        b_or_m: args.b,
                    });
                }
                Err(e) => {
                    eprintln!("warning: {name}: bootstrap unavailable: {e}");
                    rows.push(InferenceRow {
                        parameter: name.clone(),
                        method: "bootstrap",
                        estimate: a.estimate.pooled,
                        se: None,
                        ci: None,
                        b_or_m: args.b,
                    });
                }
            }
        }
        if want_rubin {
            let rubin = a.rubin();
            if let Err(e) = &rubin {
                eprintln!("warning: {name}: Rubin's rules unavailable: {e}");
            }
            let rubin = rubin.ok();
            rows.push(InferenceRow {
                parameter: name,
                method: "rubin",
                estimate: a.estimate.pooled,
                se: rubin.as_ref().map(|r| r.se()),
                ci: rubin.as_ref().map(|r| r.interval(args.alpha)),
                b_or_m: a.estimate.imputations(),
            });
        }
    }
    let mut inference = csv::Writer::from_writer(Vec::new());
    inference.write_record(["parameter", "method", "estimate", "se", "ci_lo", "ci_hi", "B_or_M"])?;
    for r in &rows {
        inference.write_record([
            r.parameter.clone(),
            r.method.to_string(),
            fmt(r.estimate),
            r.se.map(fmt).unwrap_or_default(),
            r.ci.map(|c| fmt(c.0)).unwrap_or_default(),
            r.ci.map(|c| fmt(c.1)).unwrap_or_default(),
            r.b_or_m.to_string(),
        ])?;
    }

    prepare_out(out)?;
    let mut recorded = args.clone();
    recorded.data = absolute(&args.data);
    let mut manifest = RunManifest::new(Command::Estimate(recorded.clone()), args.seed, out);
    manifest.m = Some(args.m);
    manifest.b = want_boot.then_some(args.b);
    manifest.inputs.push(recorded.data);
    emit(out, "estimates.csv", &estimates.into_inner()?, &mut manifest)?;
    emit(out, "inference.csv", &inference.into_inner()?, &mut manifest)?;
    if args.write_imputations {
        let imputations = impute_many(&dataset, &plan, args.m, args.seed)?;
        let mut buf = Vec::new();
        write_long_csv(&dataset, &imputations, &mut buf)?;
        emit(out, "imputations.csv", &buf, &mut manifest)?;
    }
    finish(manifest, out, started)
}

pub fn simulate(args: SimulateArgs, snapshot: Option<SettingConfig>, out: &Path) -> anyhow::Result<()> {
    let started = Instant::now();
    let cfg = args.setting.resolve(snapshot)?;
    let mut options = StudyOptions::new(args.r, args.m, args.b, args.seed);
    options.bootstrap_imputations = args.mb;
    options.mode = args.mode;
    options.alpha = args.alpha;
    options.oracle_n = args.oracle_n;
    let report = run_study(&cfg, &options)?;
    for (r, msg) in &report.failures {
        eprintln!("warning: replication {r} excluded: {msg}");
    }
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;

    prepare_out(out)?;
    let mut manifest = RunManifest::new(Command::Simulate(args.clone()), args.seed, out);
    manifest.config = Some(cfg);
    manifest.m = Some(args.m);
    manifest.b = Some(args.b);
    manifest.r = Some(args.r);
    manifest.failures = Some(report.failures.len());
    manifest.inputs = args.setting.inputs();
    emit(out, "report.csv", &buf, &mut manifest)?;
    finish(manifest, out, started)
}

pub fn oracle(args: OracleArgs, snapshot: Option<SettingConfig>, out: &Path) -> anyhow::Result<()> {
    let started = Instant::now();
    let cfg = args.setting.resolve(snapshot)?;
    let truth = oracle_truth(&cfg, args.n, args.seed)?;
    let mut buf = Vec::new();
    truth.write_csv(&mut buf)?;

    prepare_out(out)?;
    let mut manifest = RunManifest::new(Command::Oracle(args.clone()), args.seed, out);
    manifest.config = Some(cfg);
    manifest.inputs = args.setting.inputs();
    emit(out, "oracle.csv", &buf, &mut manifest)?;
    finish(manifest, out, started)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_accept_scientific_notation() {
        assert_eq!(parse_count("1e7"), Ok(10_000_000));
        assert_eq!(parse_count("2500"), Ok(2500));
        assert_eq!(parse_count("1.5e6"), Ok(1_500_000));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
        assert!(parse_count("lots").is_err());
    }
}
