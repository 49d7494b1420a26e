//! Monte Carlo risk sweeps over `(K, σ, N)` grids.
//!
//! Each replicate is one [`TrialRecord`]: draw a true signal, sample a
//! batch, estimate, score the orbit loss. Records come back in a fixed order
//! whatever the thread count, and aggregates are folds over sorted records,
//! so a sweep is reproducible bit for bit apart from its wall-clock column.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bispectrum::{mom_estimate, PilotMode};
use crate::error::{invalid, MraError, Result};
use crate::mle::{mle_from_mom, MleWarning, OptimizerConfig};
use crate::model::{assouad_phi, generic_signal, hypercube_signal, loss, HypercubeLabel, SignalSpec};
use crate::rng::mix64;
use crate::sampling::{sample, sample_noiseless, SampleBatch};
use crate::stats;

/// Fraction of the largest losses dropped by the trimmed mean.
pub const TRIM_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MomFm,
    MomLinf,
    MomOracle,
    Mle,
    MleFromMom,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::MomFm, Method::MomLinf, Method::MomOracle, Method::Mle, Method::MleFromMom];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::MomFm => "mom-fm",
            Method::MomLinf => "mom-linf",
            Method::MomOracle => "mom-oracle",
            Method::Mle => "mle",
            Method::MleFromMom => "mle-from-mom",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = MraError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown method {s:?}")))
    }
}

/// Runs `method` on a batch. The oracle method needs the true signal.
///
/// Returns the estimate and a warning flag for estimates that are usable
/// but did not finish cleanly.
pub fn run_estimator(batch: &SampleBatch, method: Method, truth: Option<&SignalSpec>) -> Result<(SignalSpec, Option<String>)> {
    let mode = match method {
        Method::MomFm => PilotMode::FrequencyMarching,
        Method::MomLinf => PilotMode::LinfRefined,
        Method::MomOracle => {
            let truth = truth.ok_or_else(|| invalid("mom-oracle needs the true signal"))?;
            PilotMode::Oracle(truth.phases().to_vec())
        }
        Method::Mle | Method::MleFromMom => {
            let out = mle_from_mom(batch, &OptimizerConfig::default())?;
            let flag = out.warning.map(|w| match w {
                MleWarning::NotConverged => "mle-not-converged".to_string(),
                MleWarning::LineSearchFailed => "mle-line-search-failed".to_string(),
            });
            return Ok((out.signal, flag));
        }
    };
    Ok((mom_estimate(batch, &mode)?.signal, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Generic,
    Hypercube,
}

/// Prior the true signal is drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// Magnitudes uniform on `[c_lo·r, c_hi·r]`, phases uniform.
    Generic { r: f64, c_lo: f64, c_hi: f64 },
    /// Random hypercube vertex with the offset tuned to `(K, σ, N)`.
    Hypercube { r: f64 },
}

impl Family {
    pub fn draw(&self, k: usize, sigma: f64, n: usize, seed: u64) -> Result<SignalSpec> {
        match *self {
            Family::Generic { r, c_lo, c_hi } => generic_signal(k, r, c_lo, c_hi, seed),
            Family::Hypercube { r } => {
                let phi = assouad_phi(k, r, sigma, n)?;
                hypercube_signal(k, r, &HypercubeLabel::random(k, phi, seed)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub k: usize,
    pub sigma: f64,
    pub n: usize,
    pub method: Method,
    pub replicate: usize,
    pub seed: u64,
    /// `NaN` when the estimator failed.
    pub loss: f64,
    pub runtime_ms: f64,
    /// Empty on a clean run.
    pub flag: String,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        !self.loss.is_finite()
    }
}

/// One replicate against a known true signal. `σ = 0` samples exact
/// rotations.
pub fn run_trial_with_signal(truth: &SignalSpec, sigma: f64, n: usize, method: Method, seed: u64) -> TrialRecord {
    let start = Instant::now();
    let outcome = (|| {
        let batch = if sigma == 0.0 {
            sample_noiseless(truth, n, seed)?
        } else {
            sample(truth, sigma, n, seed)?
        };
        let (est, flag) = run_estimator(&batch, method, Some(truth))?;
        Ok::<_, MraError>((loss(&est, truth)?, flag))
    })();
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let (loss, flag) = match outcome {
        Ok((l, f)) => (l, f.unwrap_or_default()),
        Err(e) => (f64::NAN, format!("error: {e}")),
    };
    TrialRecord {
        k: truth.k_max(),
        sigma,
        n,
        method,
        replicate: 0,
        seed,
        loss,
        runtime_ms,
        flag,
    }
}

/// One replicate with a fresh true signal drawn from `family` under `seed`.
pub fn run_trial(family: &Family, k: usize, sigma: f64, n: usize, method: Method, seed: u64) -> TrialRecord {
    match family.draw(k, sigma, n, seed) {
        Ok(truth) => run_trial_with_signal(&truth, sigma, n, method, seed),
        Err(e) => TrialRecord {
            k,
            sigma,
            n,
            method,
            replicate: 0,
            seed,
            loss: f64::NAN,
            runtime_ms: 0.0,
            flag: format!("error: {e}"),
        },
    }
}

/// `N = round(coef · σ^power)` per σ, in place of an explicit `N` grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NRule {
    pub coef: f64,
    pub sigma_power: f64,
}

fn default_c_lo() -> f64 {
    0.5
}

fn default_c_hi() -> f64 {
    2.0
}

fn default_r() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub family: FamilyKind,
    pub k_grid: Vec<usize>,
    pub sigma_grid: Vec<f64>,
    #[serde(default)]
    pub n_grid: Vec<usize>,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub base_seed: u64,
    #[serde(default = "default_c_lo")]
    pub c_lo: f64,
    #[serde(default = "default_c_hi")]
    pub c_hi: f64,
    #[serde(default = "default_r")]
    pub r: f64,
    /// One true signal per `K` shared by every cell and replicate.
    #[serde(default)]
    pub fixed_signal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_rule: Option<NRule>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_grid.is_empty() || self.sigma_grid.is_empty() || self.methods.is_empty() {
            return Err(invalid("k_grid, sigma_grid and methods must be nonempty"));
        }
        match (self.n_grid.is_empty(), self.n_rule) {
            (true, None) => return Err(invalid("n_grid is empty and no n_rule is given")),
            (false, Some(_)) => return Err(invalid("give either n_grid or n_rule, not both")),
            (_, Some(rule)) if !(rule.coef > 0.0 && rule.coef.is_finite() && rule.sigma_power.is_finite()) => {
                return Err(invalid("n_rule needs a positive coefficient and a finite power"))
            }
            _ => {}
        }
        if self.replicates == 0 {
            return Err(invalid("replicates must be at least 1"));
        }
        if self.k_grid.contains(&0) || self.n_grid.contains(&0) {
            return Err(invalid("grid values of K and N must be positive"));
        }
        if self.sigma_grid.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(invalid("sigma values must be finite and nonnegative"));
        }
        if !(self.r > 0.0 && self.c_lo > 0.0 && self.c_lo <= self.c_hi && self.c_hi.is_finite()) {
            return Err(invalid("need r > 0 and 0 < c_lo <= c_hi"));
        }
        Ok(())
    }

    pub fn family(&self) -> Family {
        match self.family {
            FamilyKind::Generic => Family::Generic { r: self.r, c_lo: self.c_lo, c_hi: self.c_hi },
            FamilyKind::Hypercube => Family::Hypercube { r: self.r },
        }
    }

    /// Sample sizes used with the `i`-th σ.
    pub fn n_values(&self, sigma: f64) -> Result<Vec<usize>> {
        match self.n_rule {
            Some(rule) => {
                let n = (rule.coef * sigma.powf(rule.sigma_power)).round();
                if !(1.0..1e15).contains(&n) {
                    return Err(invalid(format!("n_rule gives N = {n} at sigma = {sigma}")));
                }
                Ok(vec![n as usize])
            }
            None => Ok(self.n_grid.clone()),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_reader(std::fs::File::open(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Seed of one replicate. The grid position is packed into a counter that
/// is unique within the sweep and passed through a bijective mixer, so
/// distinct `(cell, replicate)` pairs always get distinct seeds.
pub fn replicate_seed(cfg: &SweepConfig, k_idx: usize, sigma_idx: usize, n_idx: usize, method: Method, replicate: usize) -> u64 {
    let n_len = cfg.n_grid.len().max(1) as u64;
    let methods = Method::ALL.len() as u64;
    let cell = ((k_idx as u64 * cfg.sigma_grid.len() as u64 + sigma_idx as u64) * n_len + n_idx as u64) * methods
        + method as u64;
    cfg.base_seed ^ mix64(cell * cfg.replicates as u64 + replicate as u64)
}

fn fixed_signal_seed(cfg: &SweepConfig, k_idx: usize) -> u64 {
    cfg.base_seed ^ mix64(!(k_idx as u64))
}

struct Task {
    k: usize,
    sigma: f64,
    n: usize,
    method: Method,
    replicate: usize,
    seed: u64,
    truth: Option<SignalSpec>,
}

pub fn risk_sweep(cfg: &SweepConfig) -> Result<RiskReport> {
    cfg.validate()?;
    let family = cfg.family();
    let mut tasks = Vec::new();
    for (ki, &k) in cfg.k_grid.iter().enumerate() {
        for (si, &sigma) in cfg.sigma_grid.iter().enumerate() {
            for (ni, n) in cfg.n_values(sigma)?.into_iter().enumerate() {
                let truth = if cfg.fixed_signal {
                    Some(family.draw(k, sigma, n, fixed_signal_seed(cfg, ki))?)
                } else {
                    None
                };
                for &method in &cfg.methods {
                    for replicate in 0..cfg.replicates {
                        tasks.push(Task {
                            k,
                            sigma,
                            n,
                            method,
                            replicate,
                            seed: replicate_seed(cfg, ki, si, ni, method, replicate),
                            truth: truth.clone(),
                        });
                    }
                }
            }
        }
    }
    let records = tasks
        .par_iter()
        .map(|t| {
            let mut rec = match &t.truth {
                Some(truth) => run_trial_with_signal(truth, t.sigma, t.n, t.method, t.seed),
                None => run_trial(&family, t.k, t.sigma, t.n, t.method, t.seed),
            };
            rec.replicate = t.replicate;
            rec
        })
        .collect();
    Ok(RiskReport::from_records(records))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub k: usize,
    pub sigma: f64,
    pub n: usize,
    pub method: Method,
}

impl CellKey {
    fn of(r: &TrialRecord) -> Self {
        CellKey { k: r.k, sigma: r.sigma, n: r.n, method: r.method }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        self.k
            .cmp(&other.k)
            .then(self.sigma.total_cmp(&other.sigma))
            .then(self.n.cmp(&other.n))
            .then(self.method.cmp(&other.method))
    }
}

/// Aggregates over the successful replicates of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    #[serde(flatten)]
    pub key: CellKey,
    pub replicates: usize,
    pub failed: usize,
    pub mean_loss: f64,
    pub stderr: Option<f64>,
    pub median: f64,
    pub trimmed_mean: f64,
}

fn summarize(key: CellKey, recs: &[TrialRecord]) -> CellSummary {
    let losses: Vec<f64> = recs.iter().filter(|r| !r.failed()).map(|r| r.loss).collect();
    let (mean_loss, median, trimmed_mean) = if losses.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (
            stats::mean(&losses),
            stats::median(&losses),
            stats::upper_trimmed_mean(&losses, TRIM_FRACTION),
        )
    };
    CellSummary {
        key,
        replicates: losses.len(),
        failed: recs.len() - losses.len(),
        mean_loss,
        stderr: stats::stderr(&losses),
        median,
        trimmed_mean,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    records: Vec<TrialRecord>,
    cells: Vec<CellSummary>,
}

/// JSON summary written next to the records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    pub cells: Vec<CellSummary>,
    pub worst_cell: Option<CellSummary>,
    pub digest: String,
}

impl RiskReport {
    /// Sorts records by cell then replicate and aggregates each cell.
    pub fn from_records(mut records: Vec<TrialRecord>) -> Self {
        records.sort_by(|a, b| CellKey::of(a).cmp(&CellKey::of(b)).then(a.replicate.cmp(&b.replicate)));
        let mut cells = Vec::new();
        let mut start = 0;
        while start < records.len() {
            let key = CellKey::of(&records[start]);
            let end = start + records[start..].iter().take_while(|r| CellKey::of(r).cmp(&key).is_eq()).count();
            cells.push(summarize(key, &records[start..end]));
            start = end;
        }
        RiskReport { records, cells }
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn cells(&self) -> &[CellSummary] {
        &self.cells
    }

    /// Cell with the largest mean loss, the empirical stand-in for the sup
    /// over the parameter class.
    pub fn worst_cell(&self) -> Option<&CellSummary> {
        self.cells
            .iter()
            .filter(|c| c.mean_loss.is_finite())
            .max_by(|a, b| a.mean_loss.total_cmp(&b.mean_loss))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.records {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let records = rd.deserialize().collect::<std::result::Result<Vec<TrialRecord>, _>>()?;
        Ok(RiskReport::from_records(records))
    }

    /// SHA-256 of the records as CSV with the wall-clock column left out.
    pub fn digest(&self) -> String {
        let mut wr = csv::Writer::from_writer(Vec::new());
        let header = ["k", "sigma", "n", "method", "replicate", "seed", "loss", "flag"];
        wr.write_record(header).expect("in-memory write");
        for r in &self.records {
            wr.write_record([
                r.k.to_string(),
                r.sigma.to_string(),
                r.n.to_string(),
                r.method.to_string(),
                r.replicate.to_string(),
                r.seed.to_string(),
                format!("{:e}", r.loss),
                r.flag.clone(),
            ])
            .expect("in-memory write");
        }
        let bytes = wr.into_inner().expect("in-memory write");
        format!("{:x}", Sha256::digest(&bytes))
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            cells: self.cells.clone(),
            worst_cell: self.worst_cell().cloned(),
            digest: self.digest(),
        }
    }

    /// Writes `records.csv` and `report.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("records.csv"))?))?;
        let f = std::fs::File::create(dir.join("report.json"))?;
        serde_json::to_writer_pretty(f, &self.summary())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Sigma,
    N,
    K,
}

impl FromStr for Axis {
    type Err = MraError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(Axis::Sigma),
            "n" => Ok(Axis::N),
            "k" => Ok(Axis::K),
            _ => Err(invalid(format!("unknown axis {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Response {
    #[default]
    MeanLoss,
    /// Mean loss times `N`, for sweeps where `N` moves with the axis.
    MeanLossTimesN,
    TrimmedMean,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FitOptions {
    pub response: Response,
    /// Restrict to one method; required when the report holds several.
    pub method: Option<Method>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub points: usize,
}

/// Least-squares slope of log response on log axis value, one point per
/// cell.
pub fn fit_scaling_exponent(cells: &[CellSummary], axis: Axis, opts: FitOptions) -> Result<ScalingFit> {
    let chosen: Vec<&CellSummary> = cells
        .iter()
        .filter(|c| opts.method.is_none_or(|m| c.key.method == m))
        .collect();
    if let Some(first) = chosen.first() {
        if chosen.iter().any(|c| c.key.method != first.key.method) {
            return Err(invalid("report holds several methods; choose one"));
        }
    }
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(chosen.len());
    for c in &chosen {
        let x = match axis {
            Axis::Sigma => c.key.sigma,
            Axis::N => c.key.n as f64,
            Axis::K => c.key.k as f64,
        };
        let y = match opts.response {
            Response::MeanLoss => c.mean_loss,
            Response::MeanLossTimesN => c.mean_loss * c.key.n as f64,
            Response::TrimmedMean => c.trimmed_mean,
        };
        if !(y > 0.0 && y.is_finite()) {
            return Err(invalid(format!("nonpositive response {y} at {:?}", c.key)));
        }
        if !(x > 0.0) {
            return Err(invalid(format!("nonpositive axis value {x}")));
        }
        pts.push((x.ln(), y.ln()));
    }
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    if xs.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("several cells share an axis value; other axes must be fixed"));
    }
    if pts.len() < 3 {
        return Err(invalid(format!("need at least 3 points along the axis, have {}", pts.len())));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let f = stats::ols(&x, &y)?;
    Ok(ScalingFit { slope: f.slope, intercept: f.intercept, stderr: f.stderr, points: x.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> SweepConfig {
        SweepConfig {
            family: FamilyKind::Generic,
            k_grid: vec![3],
            sigma_grid: vec![0.5, 1.0],
            n_grid: vec![200],
            methods: vec![Method::MomFm],
            replicates: 4,
            base_seed: 11,
            c_lo: 0.5,
            c_hi: 2.0,
            r: 1.0,
            fixed_signal: false,
            n_rule: None,
        }
    }

    fn cell(sigma: f64, n: usize, mean_loss: f64) -> CellSummary {
        CellSummary {
            key: CellKey { k: 4, sigma, n, method: Method::MomFm },
            replicates: 1,
            failed: 0,
            mean_loss,
            stderr: None,
            median: mean_loss,
            trimmed_mean: mean_loss,
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("mle2".parse::<Method>().is_err());
    }

    #[test]
    fn noiseless_trial_is_exact() {
        let fam = Family::Generic { r: 1.0, c_lo: 0.5, c_hi: 2.0 };
        let rec = run_trial(&fam, 5, 0.0, 3, Method::MomFm, 9);
        assert!(rec.loss <= 1e-8, "{rec:?}");
        assert_eq!(rec.flag, "");
    }

    #[test]
    fn trials_are_deterministic_per_seed() {
        let fam = Family::Generic { r: 1.0, c_lo: 0.5, c_hi: 2.0 };
        let a = run_trial(&fam, 4, 1.0, 100, Method::MomFm, 3);
        let b = run_trial(&fam, 4, 1.0, 100, Method::MomFm, 3);
        let c = run_trial(&fam, 4, 1.0, 100, Method::MomFm, 4);
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_ne!(a.loss, c.loss);
    }

    #[test]
    fn estimator_failure_is_a_flagged_row() {
        let fam = Family::Generic { r: 1.0, c_lo: 0.5, c_hi: 2.0 };
        let rec = run_trial(&fam, 1, 1.0, 10, Method::MomFm, 0);
        assert!(rec.failed());
        assert!(rec.flag.starts_with("error:"));
        let rec = run_trial(&fam, 3, 0.0, 10, Method::Mle, 0);
        assert!(rec.failed());
    }

    #[test]
    fn config_validation() {
        assert!(config().validate().is_ok());
        let mut c = config();
        c.replicates = 0;
        assert!(c.validate().is_err());
        let mut c = config();
        c.n_rule = Some(NRule { coef: 2.0, sigma_power: 6.0 });
        assert!(c.validate().is_err());
        c.n_grid.clear();
        assert!(c.validate().is_ok());
        assert_eq!(c.n_values(2.0).unwrap(), vec![128]);
        let json = r#"{"family":"generic","k_grid":[3],"sigma_grid":[1.0],"n_grid":[10],
            "methods":["mom-fm","mle-from-mom"],"replicates":2,"base_seed":5}"#;
        let c: SweepConfig = serde_json::from_str(json).unwrap();
        assert_eq!((c.c_lo, c.c_hi, c.r), (0.5, 2.0, 1.0));
        assert!(serde_json::from_str::<SweepConfig>(&json.replace("\"base_seed\"", "\"seed\"")).is_err());
    }

    #[test]
    fn seeds_are_distinct_across_cells_and_replicates() {
        let mut c = config();
        c.k_grid = vec![2, 3, 4];
        c.n_grid = vec![10, 20];
        let mut seen = std::collections::HashSet::new();
        for ki in 0..3 {
            for si in 0..2 {
                for ni in 0..2 {
                    for m in Method::ALL {
                        for rep in 0..c.replicates {
                            assert!(seen.insert(replicate_seed(&c, ki, si, ni, m, rep)));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn single_replicate_report_wraps_the_trial() {
        let mut c = config();
        c.sigma_grid = vec![0.5];
        c.replicates = 1;
        let report = risk_sweep(&c).unwrap();
        let seed = replicate_seed(&c, 0, 0, 0, Method::MomFm, 0);
        let trial = run_trial(&c.family(), 3, 0.5, 200, Method::MomFm, seed);
        assert_eq!(report.records().len(), 1);
        assert_eq!(report.records()[0].loss.to_bits(), trial.loss.to_bits());
        assert_eq!(report.cells()[0].mean_loss, trial.loss);
    }

    #[test]
    fn aggregates_match_records() {
        let report = risk_sweep(&config()).unwrap();
        assert_eq!(report.cells().len(), 2);
        for cell in report.cells() {
            let losses: Vec<f64> = report
                .records()
                .iter()
                .filter(|r| r.sigma == cell.key.sigma)
                .map(|r| r.loss)
                .collect();
            assert!(losses.iter().all(|l| *l >= 0.0 && l.is_finite()));
            assert!((cell.mean_loss - stats::mean(&losses)).abs() <= 1e-12);
        }
        let worst = report.worst_cell().unwrap();
        assert!(report.cells().iter().all(|c| c.mean_loss <= worst.mean_loss));
    }

    #[test]
    fn csv_round_trip_keeps_digest() {
        let report = risk_sweep(&config()).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let header = String::from_utf8(buf.clone()).unwrap();
        assert!(header.starts_with("k,sigma,n,method,replicate,seed,loss,runtime_ms,flag\n"));
        let back = RiskReport::read_csv(&buf[..]).unwrap();
        assert_eq!(back.digest(), report.digest());
    }

    #[test]
    fn digest_ignores_runtime() {
        let report = risk_sweep(&config()).unwrap();
        let mut recs = report.records().to_vec();
        for r in &mut recs {
            r.runtime_ms += 1000.0;
        }
        assert_eq!(RiskReport::from_records(recs.clone()).digest(), report.digest());
        recs[0].loss += 1.0;
        assert_ne!(RiskReport::from_records(recs).digest(), report.digest());
    }

    #[test]
    fn exact_power_laws() {
        let cells: Vec<CellSummary> = [1.0, 2.0, 4.0, 8.0].iter().map(|&s| cell(s, 100, 0.3 * s.powi(6))).collect();
        let f = fit_scaling_exponent(&cells, Axis::Sigma, FitOptions::default()).unwrap();
        assert!((f.slope - 6.0).abs() < 1e-9);
        let cells: Vec<CellSummary> = [100, 200, 400].iter().map(|&n| cell(1.0, n, 5.0 / n as f64)).collect();
        let f = fit_scaling_exponent(&cells, Axis::N, FitOptions::default()).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-9);
        let opts = FitOptions { response: Response::MeanLossTimesN, method: None };
        let f = fit_scaling_exponent(&cells, Axis::N, opts).unwrap();
        assert!(f.slope.abs() < 1e-9);
    }

    #[test]
    fn fit_preconditions() {
        let two: Vec<CellSummary> = [1.0, 2.0].iter().map(|&s| cell(s, 10, s)).collect();
        assert!(fit_scaling_exponent(&two, Axis::Sigma, FitOptions::default()).is_err());
        let dup: Vec<CellSummary> = [1.0, 1.0, 2.0].iter().map(|&s| cell(s, 10, s)).collect();
        assert!(fit_scaling_exponent(&dup, Axis::Sigma, FitOptions::default()).is_err());
        let zero: Vec<CellSummary> = [1.0, 2.0, 3.0].iter().map(|&s| cell(s, 10, s - 1.0)).collect();
        assert!(fit_scaling_exponent(&zero, Axis::Sigma, FitOptions::default()).is_err());
    }
}
