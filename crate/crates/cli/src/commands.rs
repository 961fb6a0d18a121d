use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use isslstm::data::{fit_metric, load_dir, median, save_dir, write_atomic, Dataset, Split};
use isslstm::iss::{envelope, layer_input_bound, IssReport};
use isslstm::lstm::{init_params_scaled, predict};
use isslstm::thermal::{make_benchmark_with, BenchmarkOptions, SignalKind, ThermalTemplate};
use isslstm::training::gradcheck::{standard_audit, AuditCase, DEFAULT_TOLERANCE};
use isslstm::training::{history_csv, mse, train, HistoryRecord, TrainError, TrainOutcome};
use log::info;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{build_timestamp, Checkpoint, Provenance};
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub out: PathBuf,
    pub seed: u64,
    /// Plant template TOML; the built-in template when absent.
    pub params: Option<PathBuf>,
    /// Restrict output to one experiment kind.
    pub signals: Option<SignalKind>,
    pub duration_h: Option<f64>,
    pub noise_sigma: f64,
}

pub fn load_template(path: &Path) -> Result<ThermalTemplate, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    toml::from_str(&text).map_err(|e| CliError::Parse { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn simulate(args: &SimulateArgs) -> Result<Dataset, CliError> {
    let template = match &args.params {
        Some(p) => load_template(p)?,
        None => ThermalTemplate::default(),
    };
    let opts = BenchmarkOptions {
        noise_sigma: args.noise_sigma,
        params: template.to_params()?,
        duration_s: args.duration_h.map(|h| h * 3600.0),
        kinds: args.signals.map_or_else(|| SignalKind::ALL.to_vec(), |k| vec![k]),
        ..Default::default()
    };
    let ds = make_benchmark_with(args.seed, &opts)?;
    save_dir(&ds, &args.out)?;
    info!("wrote {} sequences to {}", ds.sequences.len(), args.out.display());
    Ok(ds)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub config: PathBuf,
    pub out: PathBuf,
    /// Defaults to the checkpoint path with extension `history.csv`.
    pub history: Option<PathBuf>,
}

pub fn default_history_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("history.csv")
}

fn check_dims(cfg: &RunConfig, ds: &Dataset) -> Result<(), CliError> {
    let a = &cfg.architecture;
    if ds.norm.n_u() != a.n_u || ds.norm.n_y() != a.n_y {
        return Err(CliError::Invalid(format!(
            "config expects {} inputs and {} outputs, data has {} and {}",
            a.n_u,
            a.n_y,
            ds.norm.n_u(),
            ds.norm.n_y()
        )));
    }
    Ok(())
}

/// Trains on the train/val splits of `ds` from the configured initialisation.
pub fn fit_dataset(ds: &Dataset, cfg: &RunConfig) -> Result<TrainOutcome, TrainError> {
    let np0 = init_params_scaled(&cfg.architecture(), cfg.training.seed, cfg.init.scale)?;
    let u_max = vec![1.0; cfg.architecture.n_u];
    train(&np0, &ds.normalized(Split::Train), &ds.normalized(Split::Val), &cfg.training, &u_max)
}

pub fn checkpoint_from(outcome: &TrainOutcome, ds: &Dataset, cfg: &RunConfig) -> Result<Checkpoint, CliError> {
    Checkpoint::new(
        outcome.best_params.clone(),
        ds.norm.clone(),
        cfg.training.clone(),
        cfg.init.clone(),
        Provenance {
            seed: cfg.training.seed,
            timestamp: build_timestamp(),
            iterations_run: outcome.iterations_run,
            stop_reason: Some(outcome.stop_reason),
            best_val_mse: Some(outcome.best_val_mse),
        },
    )
}

pub fn train_command(args: &TrainArgs) -> Result<Checkpoint, CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let ds = load_dir(&args.data)?;
    check_dims(&cfg, &ds)?;
    let history_path = args.history.clone().unwrap_or_else(|| default_history_path(&args.out));
    let write_history = |h: &[HistoryRecord]| write_atomic(&history_path, history_csv(h).as_bytes());
    match fit_dataset(&ds, &cfg) {
        Ok(outcome) => {
            write_history(&outcome.history)?;
            let ckpt = checkpoint_from(&outcome, &ds, &cfg)?;
            ckpt.save(&args.out)?;
            info!(
                "stored checkpoint {} (val MSE {:.6e}, {} iterations, {:?})",
                args.out.display(),
                outcome.best_val_mse,
                outcome.iterations_run,
                outcome.stop_reason
            );
            Ok(ckpt)
        }
        Err(TrainError::NoStableCheckpoint { history, .. }) => {
            write_history(&history)?;
            Err(CliError::NoStableCheckpoint { checks: history.len(), history: history_path })
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub sequence: String,
    /// 1-based output channel.
    pub output: usize,
    pub fit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub fits: Vec<FitRow>,
    pub median_fit: f64,
    /// Free-run MSE on normalised data, the quantity minimised in training.
    pub mse: f64,
    pub iss_verdict: bool,
    pub conditions: Vec<f64>,
}

/// Free-run predictions in physical units, scored per sequence and output.
pub fn evaluate(ckpt: &Checkpoint, ds: &Dataset, split: Split) -> Result<EvalReport, CliError> {
    let seqs = ds.of_split(split);
    if seqs.is_empty() {
        return Err(CliError::Invalid(format!("dataset has no {} sequences", split.as_str())));
    }
    let mut fits = Vec::new();
    let mut normalized = Vec::new();
    for s in seqs {
        let n = ckpt.norm.apply(s)?;
        let pred: Vec<_> =
            predict(&ckpt.params, &n.inputs)?.iter().map(|y| ckpt.norm.denormalize_output(y)).collect();
        for j in 0..s.n_y() {
            let yp: Vec<f64> = pred.iter().map(|y| y[j]).collect();
            fits.push(FitRow { sequence: s.id.clone(), output: j + 1, fit: fit_metric(&s.output_channel(j), &yp)? });
        }
        normalized.push(n);
    }
    let values: Vec<f64> = fits.iter().map(|r| r.fit).collect();
    Ok(EvalReport {
        split: split.as_str().to_string(),
        median_fit: median(&values).expect("nonempty"),
        mse: mse(&ckpt.params, &normalized)?,
        iss_verdict: ckpt.iss.verdict,
        conditions: ckpt.iss.layers.iter().map(|l| l.condition_value).collect(),
        fits,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sequence            output  fit")?;
        for r in &self.fits {
            writeln!(f, "{:<18}  {:>6}  {:.4}", r.sequence, format!("y{}", r.output), r.fit)?;
        }
        writeln!(f, "median fit: {:.4}", self.median_fit)?;
        writeln!(f, "mse (normalised): {:.6e}", self.mse)?;
        write!(f, "iss verdict: {}", if self.iss_verdict { "PASS" } else { "FAIL" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCertificate {
    pub layer: usize,
    pub sigma_f: f64,
    pub sigma_i: f64,
    pub sigma_o: f64,
    pub rg_inf_norm: f64,
    pub condition_value: f64,
    pub margin: f64,
    pub iss2_value: f64,
    /// Envelope coefficients; present only for layers meeting the condition.
    pub rho_bar: Option<f64>,
    pub bu_inf: Option<f64>,
    pub bb_inf: Option<f64>,
    pub bg_inf: Option<f64>,
    /// `γ_u` at the layer's input bound.
    pub gamma_u: Option<f64>,
    pub gamma_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub verdict: bool,
    pub layers: Vec<LayerCertificate>,
}

pub fn certify(ckpt: &Checkpoint) -> Result<Certificate, CliError> {
    let report: &IssReport = &ckpt.iss;
    let mut layers = Vec::new();
    for (l, r) in report.layers.iter().enumerate() {
        let ub = layer_input_bound(&ckpt.params, l, &ckpt.u_max);
        let env = envelope(&ckpt.params.layers[l], &ub).ok();
        let u_sup = ub.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        layers.push(LayerCertificate {
            layer: l + 1,
            sigma_f: r.bounds.sigma_f,
            sigma_i: r.bounds.sigma_i,
            sigma_o: r.bounds.sigma_o,
            rg_inf_norm: r.rg_inf_norm,
            condition_value: r.condition_value,
            margin: r.margin,
            iss2_value: r.iss2_value,
            rho_bar: env.map(|e| e.rho_bar),
            bu_inf: env.map(|e| e.bu_inf),
            bb_inf: env.map(|e| e.bb_inf),
            bg_inf: env.map(|e| e.bg_inf),
            gamma_u: env.and_then(|e| e.gamma_u(u_sup).ok()),
            gamma_b: env.and_then(|e| e.gamma_b(e.bg_inf).ok()),
        });
    }
    Ok(Certificate { verdict: report.verdict, layers })
}

impl Certificate {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("certificate serialises")
    }
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        writeln!(f, "layer  sigma_f   sigma_i   sigma_o   |R_g|inf   cond      margin     rho_bar   |B_u|     |B_b|     gamma_u   gamma_b")?;
        for l in &self.layers {
            writeln!(
                f,
                "{:>5}  {:.6}  {:.6}  {:.6}  {:>9.6}  {:.6}  {:>+9.6}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}",
                l.layer,
                l.sigma_f,
                l.sigma_i,
                l.sigma_o,
                l.rg_inf_norm,
                l.condition_value,
                l.margin,
                opt(l.rho_bar),
                opt(l.bu_inf),
                opt(l.bb_inf),
                opt(l.gamma_u),
                opt(l.gamma_b),
            )?;
        }
        write!(f, "verdict: {}", if self.verdict { "PASS" } else { "FAIL" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSummary {
    pub cases: Vec<AuditCase>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

pub fn gradcheck(seed: u64, trials: usize) -> Result<GradcheckSummary, CliError> {
    let cases = standard_audit(seed, trials)?;
    let max_rel_error = cases.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckSummary { cases, max_rel_error, tolerance: DEFAULT_TOLERANCE })
}

impl fmt::Display for GradcheckSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rho    trial  entries  max_rel_error  worst")?;
        for c in &self.cases {
            let r = &c.report;
            writeln!(
                f,
                "{:<5}  {:>5}  {:>7}  {:>13.3e}  #{} analytic {:.6e} numeric {:.6e}",
                c.rho, c.trial, r.checked, r.max_rel_error, r.worst_index, r.worst_analytic, r.worst_numeric
            )?;
        }
        write!(
            f,
            "max relative error {:.3e} (tolerance {:.0e}): {}",
            self.max_rel_error,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}
