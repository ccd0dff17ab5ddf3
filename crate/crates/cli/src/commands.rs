use std::fmt;
use std::time::Instant;

use cramkit::{
    cram_run, diagnose_stability, read_dataset_csv, run_monte_carlo, sample_split_run, CramError,
    CramReport, Dataset, Estimand, McConfig, McReport, SplitResult, StabilityDiagnostics,
    StabilityParams,
};
use serde::{Deserialize, Serialize};

use crate::args::{CramArgs, DiagnoseArgs, SimulateArgs, SplitArgs};
use crate::config::{parse_dgp, parse_methods, Format, RunConfig};
use crate::output::{g6, to_csv, to_json, write_output, Envelope, Metadata};

/// A failed command: which pipeline stage broke, and why.
#[derive(Debug)]
pub struct Failure {
    pub stage: &'static str,
    pub error: CramError,
}

impl Failure {
    pub fn kind(&self) -> &'static str {
        let mut e = &self.error;
        while let CramError::LearnerStep { source, .. } | CramError::Replicate { source, .. } = e {
            e = source;
        }
        match e {
            CramError::InvalidBatching(_) => "invalid-batching",
            CramError::Config(_) => "config",
            CramError::OverlapViolation { .. } => "overlap-violation",
            CramError::Ingestion { .. } => "ingestion",
            CramError::InvalidData(_) => "invalid-data",
            CramError::Shape { .. } => "shape",
            CramError::Domain(_) => "domain",
            CramError::Numerical { .. } => "numerical",
            CramError::NotFitted => "not-fitted",
            CramError::Index { .. } => "index",
            CramError::Io(_) => "io",
            CramError::LearnerStep { .. } | CramError::Replicate { .. } => unreachable!(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stage={} kind={}: {}",
            self.stage,
            self.kind(),
            self.error
        )
    }
}

type Outcome = std::result::Result<(), Failure>;

fn at<T>(stage: &'static str, r: cramkit::Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|error| Failure { stage, error })
}

fn load(cfg: &RunConfig) -> std::result::Result<Dataset, Failure> {
    let data = at("config", cfg.data())?;
    at(
        "ingest",
        read_dataset_csv(
            &data.input,
            &data.schema,
            data.constant_propensity,
            data.overlap,
        ),
    )
}

fn emit<T: Serialize>(
    cfg: &RunConfig,
    command: &str,
    report: T,
    started: Instant,
    csv: impl FnOnce(&T) -> cramkit::Result<Vec<u8>>,
) -> Outcome {
    let bytes = match cfg.format {
        Format::Json => {
            let metadata = (!cfg.golden).then(|| Metadata::now(started.elapsed().as_millis()));
            at(
                "write",
                to_json(&Envelope {
                    command: command.into(),
                    report,
                    metadata,
                }),
            )?
        }
        Format::Csv => at("write", csv(&report))?,
    };
    at("write", write_output(cfg.output.as_deref(), &bytes))
}

fn field_rows(fields: &[(&str, String)]) -> cramkit::Result<Vec<u8>> {
    let rows: Vec<Vec<String>> = fields
        .iter()
        .map(|(k, v)| vec![k.to_string(), v.clone()])
        .collect();
    to_csv(&["field", "value"], &rows)
}

fn estimand_name(e: Estimand) -> &'static str {
    match e {
        Estimand::ValueDifference => "value_difference",
        Estimand::PolicyValue => "policy_value",
    }
}

fn stability_of(cfg: &RunConfig) -> StabilityParams {
    cfg.stability
        .unwrap_or_else(|| StabilityParams::for_batches(cfg.options.num_batches))
}

pub fn cmd_cram(args: &CramArgs) -> Outcome {
    let started = Instant::now();
    let cfg = at("config", RunConfig::resolve(&args.common))?;
    let ds = load(&cfg)?;
    let mut learner = at("config", cfg.learner.build(ds.p(), &cfg.baseline))?;
    let result = at(
        "run",
        cram_run(&ds, &mut learner, &cfg.baseline, &cfg.options),
    )?;
    let mut report = result.report();
    if let Some(params) = cfg.stability {
        report.stability = Some(at(
            "run",
            diagnose_stability(
                &result.policy_sequence,
                &ds.covariates(),
                params.delta(),
                1,
                params.c(),
            ),
        )?);
    }
    emit(&cfg, "cram", report, started, |r: &CramReport| {
        field_rows(&[
            ("estimand", estimand_name(r.estimand).into()),
            ("estimate", g6(r.estimate)),
            ("variance", g6(r.variance)),
            ("se", g6(r.se)),
            ("ci_lower", g6(r.ci_lower)),
            ("ci_upper", g6(r.ci_upper)),
            ("alpha", g6(r.alpha)),
            ("T", r.batches.to_string()),
            ("n", r.n.to_string()),
            ("seed", r.seed.to_string()),
            (
                "treated_fraction",
                g6(r.treated_fraction_under_final_policy),
            ),
        ])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub alpha: f64,
    pub train_fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub final_policy: cramkit::Policy,
}

impl From<SplitResult> for SplitReport {
    fn from(r: SplitResult) -> Self {
        Self {
            estimate: r.delta_hat,
            se: r.se,
            ci_lower: r.ci.0,
            ci_upper: r.ci.1,
            alpha: r.alpha,
            train_fraction: r.train_fraction,
            n_train: r.n_train,
            n_test: r.n_test,
            seed: r.seed,
            final_policy: r.final_policy,
        }
    }
}

pub fn cmd_split(args: &SplitArgs) -> Outcome {
    let started = Instant::now();
    let cfg = at("config", RunConfig::resolve(&args.common))?;
    let fraction = cfg.train_fraction(args.train_fraction);
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Failure {
            stage: "config",
            error: CramError::Config(format!(
                "train_fraction must lie in (0, 1) so both sides are nonempty, got {fraction}"
            )),
        });
    }
    let ds = load(&cfg)?;
    let mut learner = at("config", cfg.learner.build(ds.p(), &cfg.baseline))?;
    let result = at(
        "run",
        sample_split_run(
            &ds,
            &mut learner,
            &cfg.baseline,
            fraction,
            cfg.options.seed,
            cfg.options.alpha,
        ),
    )?;
    emit(
        &cfg,
        "split",
        SplitReport::from(result),
        started,
        |r: &SplitReport| {
            field_rows(&[
                ("estimate", g6(r.estimate)),
                ("se", g6(r.se)),
                ("ci_lower", g6(r.ci_lower)),
                ("ci_upper", g6(r.ci_upper)),
                ("alpha", g6(r.alpha)),
                ("train_fraction", g6(r.train_fraction)),
                ("n_train", r.n_train.to_string()),
                ("n_test", r.n_test.to_string()),
                ("seed", r.seed.to_string()),
            ])
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub config: McConfig,
    #[serde(flatten)]
    pub result: McReport,
}

pub const MC_COLUMNS: [&str; 8] = [
    "method",
    "value",
    "bias",
    "abs_bias",
    "mc_se",
    "mean_est_se",
    "coverage",
    "replicates",
];

pub fn cmd_simulate(args: &SimulateArgs) -> Outcome {
    let started = Instant::now();
    let cfg = at("config", RunConfig::resolve(&args.common))?;
    let sim = cfg.simulate();
    let p = args.p.or(sim.p).unwrap_or(5);
    let dgp = at(
        "config",
        parse_dgp(
            args.dgp
                .as_deref()
                .or(sim.dgp.as_deref())
                .unwrap_or("linear"),
            p,
        ),
    )?;
    let mut mc = McConfig::new(dgp, args.n.or(sim.n).unwrap_or(500), cfg.learner.clone());
    mc.num_batches = cfg.options.num_batches;
    mc.baseline = cfg.baseline.clone();
    mc.base_seed = cfg.options.seed;
    mc.alpha = cfg.options.alpha;
    mc.threads = cfg.threads;
    if let Some(r) = args.replicates.or(sim.replicates) {
        mc.replicates = r;
    }
    if let Some(n) = args.n_oracle.or(sim.n_oracle) {
        mc.n_oracle = n;
    }
    if let Some(names) = args.methods.as_ref().or(sim.methods.as_ref()) {
        mc.methods = at("config", parse_methods(names))?;
    }
    at("config", mc.validate())?;
    let mut result = at("run", run_monte_carlo(&mc))?;
    if !(args.records || sim.records.unwrap_or(false)) {
        result.records.clear();
    }
    let report = SimulateReport { config: mc, result };
    emit(&cfg, "simulate", report, started, |r: &SimulateReport| {
        let rows: Vec<Vec<String>> = r
            .result
            .rows
            .iter()
            .map(|s| {
                vec![
                    s.method.name().to_string(),
                    g6(s.value),
                    g6(s.bias),
                    g6(s.abs_bias),
                    g6(s.mc_se),
                    g6(s.mean_est_se),
                    g6(s.coverage),
                    s.replicates.to_string(),
                ]
            })
            .collect();
        to_csv(&MC_COLUMNS, &rows)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub learner: String,
    pub stable: bool,
    #[serde(rename = "T")]
    pub batches: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub diagnostics: StabilityDiagnostics,
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Outcome {
    let started = Instant::now();
    let cfg = at("config", RunConfig::resolve(&args.common))?;
    let section = cfg.diagnose();
    let params = stability_of(&cfg);
    let t_min = args.t_min.or(section.t_min).unwrap_or(1);
    let bound = args.bound.or(section.bound).unwrap_or(params.c());
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Failure {
            stage: "config",
            error: CramError::Config(format!("bound must be positive and finite, got {bound}")),
        });
    }
    let ds = load(&cfg)?;
    let mut learner = at("config", cfg.learner.build(ds.p(), &cfg.baseline))?;
    let result = at(
        "run",
        cram_run(&ds, &mut learner, &cfg.baseline, &cfg.options),
    )?;
    let diagnostics = at(
        "run",
        diagnose_stability(
            &result.policy_sequence,
            &ds.covariates(),
            params.delta(),
            t_min,
            bound,
        ),
    )?;
    let report = DiagnoseReport {
        learner: cfg.learner_name.clone(),
        stable: cfg.stability.is_some(),
        batches: cfg.options.num_batches,
        seed: cfg.options.seed,
        diagnostics,
    };
    emit(&cfg, "diagnose", report, started, |r: &DiagnoseReport| {
        let d = &r.diagnostics;
        let rows: Vec<Vec<String>> = d
            .q_t
            .iter()
            .zip(&d.t_power_q)
            .enumerate()
            .map(|(i, (q, s))| {
                let t = i + 1;
                let exceeds = t >= d.t_min && *s > d.bound;
                vec![t.to_string(), g6(*q), g6(*s), exceeds.to_string()]
            })
            .collect();
        to_csv(&["t", "q_t", "t_power_q", "exceeds_bound"], &rows)
    })
}
