//! Seeded Monte Carlo replications of the simulation protocol: generate a
//! training and test sample, fit the listed estimators, score each against
//! the true function on the shared test set, and aggregate.
//!
//! Every replication derives its own seed from `(seed, rep)`, so results do
//! not depend on how many worker threads run them or in which order.

use std::panic::{self, AssertUnwindSafe};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{fit_dqr, fit_es, stage_configs, QuantileFn};
use crate::eval::{aggregate, mspe, MspeSummary};
use crate::losses::validate_alpha;
use crate::noncrossing::fit_nc_two_step;
use crate::nn::FitConfig;
use crate::rng;
use crate::simgen::{generate, DgpSpec, ErrorDist, Model, SimData, TrueFns};
use crate::tuning::{tau_hat, nu2_from_residuals, TauRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "DQR")]
    Dqr,
    #[serde(rename = "DES")]
    Des,
    #[serde(rename = "DRES")]
    Dres,
    #[serde(rename = "NC-DRES")]
    NcDres,
    #[serde(rename = "oracle-DES")]
    OracleDes,
    #[serde(rename = "oracle-DRES")]
    OracleDres,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::Dqr,
        Estimator::Des,
        Estimator::Dres,
        Estimator::NcDres,
        Estimator::OracleDes,
        Estimator::OracleDres,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Estimator::Dqr => "DQR",
            Estimator::Des => "DES",
            Estimator::Dres => "DRES",
            Estimator::NcDres => "NC-DRES",
            Estimator::OracleDes => "oracle-DES",
            Estimator::OracleDres => "oracle-DRES",
        }
    }

    pub fn is_oracle(self) -> bool {
        matches!(self, Estimator::OracleDes | Estimator::OracleDres)
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let known: Vec<&str> = Estimator::ALL.iter().map(|e| e.label()).collect();
                invalid("estimator", format!("unknown {s:?}; expected one of {}", known.join(", ")))
            })
    }
}

/// Label used for a τ-sweep entry.
pub fn sweep_label(tau_const: f64) -> String {
    format!("DRES[tau_const={tau_const}]")
}

/// Settings of a simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: Model,
    pub error: ErrorDist,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default)]
    pub noise_columns: usize,
    pub alphas: Vec<f64>,
    pub estimators: Vec<Estimator>,
    pub tau_rule: TauRule,
    /// Extra DRES fits at these rule multipliers, sharing each replication's DQR fit.
    #[serde(default)]
    pub tau_sweep: Vec<f64>,
    pub fit: FitConfig,
    pub reps: usize,
    pub parallelism: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Defaults: α = 0.1, DES and DRES, T = 10⁵ test points, one replication.
    pub fn new(model: Model, error: ErrorDist, n_train: usize, seed: u64) -> Self {
        Self {
            model,
            error,
            n_train,
            n_test: 100_000,
            noise_columns: 0,
            alphas: vec![0.1],
            estimators: vec![Estimator::Des, Estimator::Dres],
            tau_rule: TauRule::default(),
            tau_sweep: Vec::new(),
            fit: FitConfig::default(),
            reps: 1,
            parallelism: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.estimators.is_empty() && self.tau_sweep.is_empty() {
            return Err(invalid("estimators", "list is empty"));
        }
        if self.alphas.is_empty() {
            return Err(invalid("alphas", "need at least one level"));
        }
        for &a in &self.alphas {
            validate_alpha(a)?;
        }
        for &c in &self.tau_sweep {
            TauRule::rule(c)?;
        }
        if self.estimators.contains(&Estimator::NcDres) {
            let mut sorted = self.alphas.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            if sorted.len() != self.alphas.len() {
                return Err(invalid("alphas", "levels must be distinct for NC-DRES"));
            }
        }
        if self.reps == 0 {
            return Err(invalid("reps", "must be at least 1"));
        }
        if self.parallelism == 0 {
            return Err(invalid("parallelism", "must be at least 1"));
        }
        self.tau_rule.validate()?;
        self.fit.validate()?;
        self.dgp(0).validate()
    }

    /// Seed of replication `rep`; data and fit seeds are labelled children of it.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        rng::sub_seed(self.seed, rep as u64)
    }

    pub fn dgp(&self, rep: usize) -> DgpSpec {
        DgpSpec {
            model: self.model.clone(),
            error: self.error,
            n_train: self.n_train,
            n_test: self.n_test,
            noise_columns: self.noise_columns,
            seed: rng::labelled_seed(self.rep_seed(rep), "data"),
        }
    }

    pub fn fit_config(&self, rep: usize) -> FitConfig {
        self.fit.with_seed(rng::labelled_seed(self.rep_seed(rep), "fit"))
    }

    /// FNV-1a digest of the canonical JSON form of every result-affecting
    /// setting (parallelism is excluded).
    pub fn digest(&self) -> String {
        let canonical = ExperimentConfig {
            parallelism: 0,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// One scored fit within a replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MspeEntry {
    pub estimator: String,
    pub alpha: f64,
    pub mspe: f64,
    /// τ used by the ES stage; `None` for quantile-only fits.
    #[serde(with = "crate::estimators::tau_format::option")]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub entries: Vec<MspeEntry>,
    /// Error message when the replication failed.
    pub error: Option<String>,
    /// Wall-clock seconds (not part of the deterministic output).
    #[serde(skip)]
    pub seconds: f64,
}

/// Equality ignores timing.
impl PartialEq for RepRecord {
    fn eq(&self, other: &Self) -> bool {
        self.rep == other.rep && self.seed == other.seed && self.entries == other.entries && self.error == other.error
    }
}

impl RepRecord {
    pub fn mspe_of(&self, estimator: &str, alpha: f64) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.estimator == estimator && e.alpha == alpha)
            .map(|e| e.mspe)
    }
}

/// Runs one replication and scores every requested fit.
pub fn run_rep(cfg: &ExperimentConfig, rep: usize) -> Result<Vec<MspeEntry>> {
    let SimData { train, test } = generate(&cfg.dgp(rep))?;
    let fit_cfg = cfg.fit_config(rep);
    let (q_cfg, e_cfg) = stage_configs(&fit_cfg);
    let wants = |e: Estimator| cfg.estimators.contains(&e);
    let needs_dqr = wants(Estimator::Dqr) || wants(Estimator::Des) || wants(Estimator::Dres) || !cfg.tau_sweep.is_empty();
    let mut entries = Vec::new();
    let mut push = |estimator: &str, alpha: f64, mspe: f64, tau: Option<f64>| {
        entries.push(MspeEntry {
            estimator: estimator.to_string(),
            alpha,
            mspe,
            tau,
        })
    };

    for &alpha in &cfg.alphas {
        let truth = TrueFns::for_spec(&cfg.dgp(rep), alpha)?;
        let g0 = truth.g0_on(&test);
        if needs_dqr {
            let (qnet, _) = fit_dqr(&train, alpha, &q_cfg)?;
            if wants(Estimator::Dqr) {
                push("DQR", alpha, mspe(&qnet.predict_dataset(&test)?, &truth.f0_on(&test))?, None);
            }
            let fx = qnet.predict_dataset(&train)?;
            let f = QuantileFn::Net(qnet);
            if wants(Estimator::Des) {
                let (m, _) = fit_es(&train, &f, alpha, f64::INFINITY, &e_cfg)?;
                push("DES", alpha, mspe(&m.predict_es_batch(&test)?, &g0)?, Some(m.tau_used));
            }
            if wants(Estimator::Dres) {
                let tau = cfg.tau_rule.resolve_with(train.y(), &fx)?;
                let (m, _) = fit_es(&train, &f, alpha, tau, &e_cfg)?;
                push("DRES", alpha, mspe(&m.predict_es_batch(&test)?, &g0)?, Some(tau));
            }
            if !cfg.tau_sweep.is_empty() {
                let nu2 = nu2_from_residuals(train.y(), &fx)?;
                for &c in &cfg.tau_sweep {
                    let tau = tau_hat(nu2, train.len(), c)?;
                    let (m, _) = fit_es(&train, &f, alpha, tau, &e_cfg)?;
                    push(&sweep_label(c), alpha, mspe(&m.predict_es_batch(&test)?, &g0)?, Some(tau));
                }
            }
        }
        if wants(Estimator::OracleDes) || wants(Estimator::OracleDres) {
            let f = QuantileFn::Oracle(truth.quantile_fn());
            if wants(Estimator::OracleDes) {
                let (m, _) = fit_es(&train, &f, alpha, f64::INFINITY, &e_cfg)?;
                push("oracle-DES", alpha, mspe(&m.predict_es_batch(&test)?, &g0)?, Some(m.tau_used));
            }
            if wants(Estimator::OracleDres) {
                let tau = cfg.tau_rule.resolve(&train, &f)?;
                let (m, _) = fit_es(&train, &f, alpha, tau, &e_cfg)?;
                push("oracle-DRES", alpha, mspe(&m.predict_es_batch(&test)?, &g0)?, Some(tau));
            }
        }
    }

    if wants(Estimator::NcDres) {
        let mut levels = cfg.alphas.clone();
        levels.sort_by(f64::total_cmp);
        let fit = fit_nc_two_step(&train, &levels, cfg.tau_rule, &fit_cfg)?;
        let (_, g) = fit.model.predict_batch(&test)?;
        for (k, &alpha) in levels.iter().enumerate() {
            let truth = TrueFns::for_spec(&cfg.dgp(rep), alpha)?;
            push("NC-DRES", alpha, mspe(&g[k], &truth.g0_on(&test))?, Some(fit.model.taus[k]));
        }
    }
    Ok(entries)
}

fn run_isolated(cfg: &ExperimentConfig, rep: usize) -> RepRecord {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| run_rep(cfg, rep)));
    let (entries, error) = match outcome {
        Ok(Ok(entries)) => (entries, None),
        Ok(Err(e)) => (Vec::new(), Some(e.to_string())),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (Vec::new(), Some(format!("panic: {msg}")))
        }
    };
    RepRecord {
        rep,
        seed: cfg.rep_seed(rep),
        entries,
        error,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs the given replications on up to `cfg.parallelism` threads; records are
/// returned in the order of `reps`. A failing replication yields a record with
/// `error` set and does not stop the others.
pub fn run_reps(cfg: &ExperimentConfig, reps: &[usize]) -> Vec<RepRecord> {
    let workers = cfg.parallelism.min(reps.len()).max(1);
    if workers == 1 {
        return reps.iter().map(|&r| run_isolated(cfg, r)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RepRecord>>> = Mutex::new(vec![None; reps.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= reps.len() {
                    break;
                }
                let rec = run_isolated(cfg, reps[i]);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(rec);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Per-(estimator, α) summaries over the successful replications, ordered by
/// α, then estimator as listed in the config, then sweep entries.
pub fn summarize(cfg: &ExperimentConfig, records: &[RepRecord]) -> Result<Vec<MspeSummary>> {
    let mut labels: Vec<String> = cfg.estimators.iter().map(|e| e.label().to_string()).collect();
    labels.extend(cfg.tau_sweep.iter().map(|&c| sweep_label(c)));
    let mut out = Vec::new();
    for &alpha in &cfg.alphas {
        for label in &labels {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| r.error.is_none())
                .filter_map(|r| r.mspe_of(label, alpha))
                .collect();
            if !values.is_empty() {
                out.push(aggregate(label, alpha, cfg.n_train, &values)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub sub_seeds: Vec<u64>,
    pub rep_seconds: Vec<f64>,
    pub total_seconds: f64,
    pub failed_reps: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub summaries: Vec<MspeSummary>,
    pub records: Vec<RepRecord>,
    pub manifest: RunManifest,
}

impl SimulationResult {
    pub fn failures(&self) -> Vec<&RepRecord> {
        self.records.iter().filter(|r| r.error.is_some()).collect()
    }

    pub fn summary(&self, estimator: &str, alpha: f64) -> Option<&MspeSummary> {
        self.summaries.iter().find(|s| s.estimator == estimator && s.alpha == alpha)
    }

    /// Long-format per-replication CSV: `rep,seed,estimator,alpha,mspe,tau,error`.
    pub fn reps_csv(&self) -> String {
        let mut out = String::from("rep,seed,estimator,alpha,mspe,tau,error\n");
        for r in &self.records {
            if let Some(e) = &r.error {
                out.push_str(&format!("{},{},,,,,\"{}\"\n", r.rep, r.seed, e.replace('"', "'")));
            }
            for e in &r.entries {
                let tau = match e.tau {
                    Some(t) if t.is_infinite() => "inf".to_string(),
                    Some(t) => t.to_string(),
                    None => String::new(),
                };
                out.push_str(&format!("{},{},{},{},{},{},\n", r.rep, r.seed, e.estimator, e.alpha, e.mspe, tau));
            }
        }
        out
    }
}

/// Runs all `cfg.reps` replications and aggregates them.
pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulationResult> {
    cfg.validate()?;
    let start = Instant::now();
    let reps: Vec<usize> = (0..cfg.reps).collect();
    let records = run_reps(cfg, &reps);
    let summaries = summarize(cfg, &records)?;
    let manifest = RunManifest {
        config_hash: cfg.digest(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        sub_seeds: records.iter().map(|r| r.seed).collect(),
        rep_seconds: records.iter().map(|r| r.seconds).collect(),
        total_seconds: start.elapsed().as_secs_f64(),
        failed_reps: records.iter().filter(|r| r.error.is_some()).map(|r| r.rep).collect(),
    };
    Ok(SimulationResult {
        summaries,
        records,
        manifest,
    })
}

/// One row of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n: usize,
    pub estimator: String,
    pub alpha: f64,
    pub mean_mspe: f64,
    pub sd_mspe: f64,
    pub n_reps: usize,
}

/// Simulations at each training size in an increasing grid.
pub fn curve(cfg: &ExperimentConfig, n_grid: &[usize]) -> Result<(Vec<CurveRow>, Vec<SimulationResult>)> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("n_grid", "must be nonempty and strictly increasing"));
    }
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &n in n_grid {
        let run = simulate(&ExperimentConfig {
            n_train: n,
            ..cfg.clone()
        })?;
        rows.extend(run.summaries.iter().map(|s| CurveRow {
            n,
            estimator: s.estimator.clone(),
            alpha: s.alpha,
            mean_mspe: s.mean_mspe,
            sd_mspe: s.sd_mspe,
            n_reps: s.n_reps,
        }));
        runs.push(run);
    }
    Ok((rows, runs))
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("n,estimator,alpha,mean_mspe,sd_mspe,n_reps\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n, r.estimator, r.alpha, r.mean_mspe, r.sd_mspe, r.n_reps
        ));
    }
    out
}

/// τ-sweep summary rows `(tau_const, mean_mspe, sd_mspe, n_reps)` from a
/// simulation run with `tau_sweep` set, at level `alpha`.
pub fn sweep_rows(result: &SimulationResult, grid: &[f64], alpha: f64) -> Vec<(f64, f64, f64, usize)> {
    grid.iter()
        .filter_map(|&c| {
            result
                .summary(&sweep_label(c), alpha)
                .map(|s| (c, s.mean_mspe, s.sd_mspe, s.n_reps))
        })
        .collect()
}

pub fn sweep_csv(rows: &[(f64, f64, f64, usize)]) -> String {
    let mut out = String::from("tau_const,mean_mspe,sd_mspe,n_reps\n");
    for (c, m, s, n) in rows {
        out.push_str(&format!("{c},{m},{s},{n}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            n_test: 500,
            alphas: vec![0.1, 0.2],
            estimators: Estimator::ALL.to_vec(),
            tau_sweep: vec![0.5, 1.0],
            fit: FitConfig {
                hidden: vec![8, 8],
                max_epochs: 2,
                batch_size: 32,
                ..FitConfig::default()
            },
            reps: 3,
            ..ExperimentConfig::new(Model::C1, ErrorDist::scaled_t(), 128, seed)
        }
    }

    #[test]
    fn estimator_labels_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.label().parse::<Estimator>().unwrap(), e);
            let json = serde_json::to_string(&e).unwrap();
            assert_eq!(json, format!("\"{}\"", e.label()));
        }
        assert!("LLES".parse::<Estimator>().is_err());
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let cfg = tiny(5);
        let a = simulate(&cfg).unwrap();
        let b = simulate(&ExperimentConfig { parallelism: 3, ..cfg.clone() }).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.summaries, b.summaries);
        assert_eq!(a.reps_csv(), b.reps_csv());
        assert!(a.failures().is_empty());
        // 2 α × (6 estimators + 2 sweep entries)
        assert_eq!(a.summaries.len(), 16);
        assert_eq!(a.manifest.sub_seeds, (0..3).map(|r| cfg.rep_seed(r)).collect::<Vec<_>>());
    }

    #[test]
    fn sweep_at_unit_constant_matches_rule_fit() {
        let cfg = tiny(6);
        let rec = run_rep(&cfg, 0).unwrap();
        let find = |name: &str| rec.iter().find(|e| e.estimator == name && e.alpha == 0.1).unwrap();
        assert_eq!(find("DRES").mspe.to_bits(), find(&sweep_label(1.0)).mspe.to_bits());
        assert_eq!(find("DES").tau, Some(f64::INFINITY));
        assert_eq!(find("DQR").tau, None);
    }

    #[test]
    fn failures_are_isolated() {
        let mut cfg = tiny(7);
        cfg.estimators = vec![Estimator::Dres];
        cfg.tau_sweep.clear();
        // a batch larger than the training split fails every fit
        cfg.fit.batch_size = 4096;
        let run = simulate(&cfg).unwrap();
        assert_eq!(run.failures().len(), 3);
        assert!(run.summaries.is_empty());
        assert_eq!(run.manifest.failed_reps, vec![0, 1, 2]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny(1);
        cfg.estimators.clear();
        cfg.tau_sweep.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(1);
        cfg.alphas = vec![0.1, 0.1];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(1);
        cfg.n_train = 10;
        assert!(cfg.validate().is_err());
        assert_eq!(tiny(1).digest(), tiny(1).digest());
        assert_ne!(tiny(1).digest(), tiny(2).digest());
        let wide = ExperimentConfig { parallelism: 4, ..tiny(1) };
        assert_eq!(wide.digest(), tiny(1).digest());
    }

    #[test]
    fn curve_rows() {
        let mut cfg = tiny(3);
        cfg.reps = 1;
        cfg.estimators = vec![Estimator::Dres, Estimator::OracleDres];
        cfg.tau_sweep.clear();
        cfg.alphas = vec![0.1];
        let (rows, _) = curve(&cfg, &[128, 256]).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(curve(&cfg, &[256, 128]).is_err());
        assert_eq!(curve_csv(&rows).lines().count(), 5);
    }
}
