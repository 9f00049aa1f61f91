//! End-to-end runs driven by a TOML configuration file.
//!
//! The stage functions here are shared with the command-line tool, and
//! every stage hands its successor the same bytes the standalone command
//! would read from disk. Running the stages one by one therefore
//! reproduces a pipeline run exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::{
    read_graph_archive, table_features, tda_table, write_graph_archive, write_table, ArchiveMeta,
    GraphArchive,
};
use crate::corrnet::{graph_series, CcmParams, CorrKind, NetworkParams, DEFAULT_WINDOW};
use crate::detectors::{lof_scores, mahalanobis_scores, AnomalySeries};
use crate::error::{Error, Result};
use crate::eval::{evaluate_series, monthly_counts, EventList, ReportJson, DEFAULT_LOOKBACK, DEFAULT_PERCENTILE};
use crate::features::{features_to_table, pca_features, PcaDim};
use crate::gnn::{
    attribute_graphs, glocalkd_score, glocalkd_train, ocgin_score, ocgin_train, EarlyStop, GlocalConfig,
    OcginConfig,
};
use crate::ingest::{align_and_filter, log_returns, read_price_csv, PriceTable, ReturnMatrix};
use crate::ph::{tda_features, EssentialPolicy, Norm, TdaFeature};
use crate::svg::monthly_bar_chart;
use crate::table::{DatedTable, FloatFormat};

// ---------------------------------------------------------------------------
// Stages

/// Aligned log returns, written and re-read through their CSV form so the
/// result carries exactly the 12 significant digits stored on disk.
pub fn stage_ingest(
    prices: &PriceTable,
    start: Option<NaiveDate>,
    end: Option<NaiveDate>,
    min_coverage: f64,
) -> Result<ReturnMatrix> {
    let dates = prices.dates();
    let (first, last) = match (dates.first(), dates.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::Empty("price table has no rows".into())),
    };
    let aligned = align_and_filter(prices, start.unwrap_or(first), end.unwrap_or(last), min_coverage)?;
    let returns = log_returns(&aligned)?;
    let text = returns.to_table().to_csv_string(FloatFormat::Sig12);
    ReturnMatrix::from_table(DatedTable::parse_csv(&text)?)
}

pub fn stage_graphs(returns: &ReturnMatrix, params: NetworkParams) -> Result<GraphArchive> {
    let graphs = graph_series(returns, &params)?;
    Ok(GraphArchive {
        meta: ArchiveMeta {
            params,
            tickers: returns.tickers.clone(),
            n_graphs: graphs.len(),
        },
        graphs,
    })
}

pub fn stage_tda(archive: &GraphArchive, policy: EssentialPolicy) -> DatedTable {
    tda_table(&tda_features(&archive.graphs, policy))
}

pub fn stage_pca(archive: &GraphArchive, dim: PcaDim) -> Result<DatedTable> {
    features_to_table(&pca_features(&archive.matrices(), dim)?, "c")
}

/// Columns of the TDA table fed to the detectors for one norm.
pub fn tda_columns(norm: Norm) -> Vec<String> {
    let names = match norm {
        Norm::L1 => ["l1_h0", "l1_h1"],
        Norm::L2 => ["l2_h0", "l2_h1"],
    };
    debug_assert!(names.iter().all(|n| TdaFeature::COLUMNS.contains(n)));
    names.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Detector {
    Mahalanobis,
    Lof(usize),
}

impl Detector {
    pub fn name(&self) -> String {
        match self {
            Detector::Mahalanobis => "mahalanobis".into(),
            Detector::Lof(k) => format!("lof-{k}"),
        }
    }
}

pub fn stage_score(
    table: &DatedTable,
    columns: Option<&[String]>,
    detector: Detector,
    method: &str,
) -> Result<AnomalySeries> {
    let vectors = table_features(table, columns)?;
    let mut series = match detector {
        Detector::Mahalanobis => mahalanobis_scores(&vectors)?,
        Detector::Lof(k) => lof_scores(&vectors, k)?,
    };
    series.method = method.to_string();
    Ok(series)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GnnRun {
    Ocgin(OcginConfig),
    Glocal(GlocalConfig),
}

impl GnnRun {
    pub fn name(&self) -> String {
        match self {
            GnnRun::Ocgin(c) => format!(
                "ocgin-lr{}-wd{}-b{}-L{}-h{}",
                c.lr, c.weight_decay, c.batch_size, c.layers, c.hidden
            ),
            GnnRun::Glocal(c) => format!(
                "glocalkd-lr{}-lam{}-b{}-L{}-h{}",
                c.lr, c.lambda, c.batch_size, c.layers, c.hidden
            ),
        }
    }
}

/// Trains on every graph in the archive and scores the same graphs.
pub fn stage_gnn(archive: &GraphArchive, run: &GnnRun) -> Result<(AnomalySeries, crate::gnn::Checkpoint)> {
    let graphs = attribute_graphs(&archive.graphs);
    let dates = archive.graphs.iter().map(|g| g.as_of).collect();
    let (scores, checkpoint) = match run {
        GnnRun::Ocgin(config) => {
            let state = ocgin_train(&graphs, config)?;
            let scores = graphs
                .iter()
                .map(|g| ocgin_score(&state, g))
                .collect::<Result<Vec<_>>>()?;
            (scores, crate::gnn::Checkpoint::Ocgin(state))
        }
        GnnRun::Glocal(config) => {
            let state = glocalkd_train(&graphs, config)?;
            let scores = graphs
                .iter()
                .map(|g| glocalkd_score(&state, g))
                .collect::<Result<Vec<_>>>()?;
            (scores, crate::gnn::Checkpoint::Glocal(state))
        }
    };
    Ok((AnomalySeries::new(dates, scores, run.name())?, checkpoint))
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub prices: PathBuf,
    pub events: PathBuf,
    #[serde(default)]
    pub start: Option<NaiveDate>,
    #[serde(default)]
    pub end: Option<NaiveDate>,
    #[serde(default = "one")]
    pub min_coverage: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub window: usize,
    pub kind: CorrKind,
    pub ccm_e: usize,
    pub ccm_tau: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let ccm = CcmParams::default();
        Self {
            window: DEFAULT_WINDOW,
            kind: CorrKind::Ccm,
            ccm_e: ccm.embedding_dim,
            ccm_tau: ccm.lag,
        }
    }
}

impl NetworkSection {
    pub fn params(&self) -> NetworkParams {
        NetworkParams {
            window: self.window,
            kind: self.kind,
            ccm: CcmParams {
                embedding_dim: self.ccm_e,
                lag: self.ccm_tau,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdaSection {
    pub enabled: bool,
    pub norms: Vec<String>,
    pub essential: String,
}

impl Default for TdaSection {
    fn default() -> Self {
        Self {
            enabled: true,
            norms: vec!["l1".into(), "l2".into()],
            essential: "drop".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaSection {
    pub enabled: bool,
    pub dims: Vec<String>,
}

impl Default for PcaSection {
    fn default() -> Self {
        Self {
            enabled: true,
            dims: vec!["raw".into(), "10".into(), "100".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub mahalanobis: bool,
    pub lof_k: Vec<usize>,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            mahalanobis: true,
            lof_k: vec![20],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcginGrid {
    pub enabled: bool,
    pub lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub layers: Vec<usize>,
    pub hidden: Vec<usize>,
}

impl Default for OcginGrid {
    fn default() -> Self {
        Self {
            enabled: false,
            lr: vec![0.01, 0.001, 0.0001, 0.00001],
            weight_decay: vec![0.001, 0.0001, 0.00001, 0.000001],
            batch_size: vec![25, 50, 100],
            layers: vec![2, 3],
            hidden: vec![10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlocalGrid {
    pub enabled: bool,
    pub lr: Vec<f64>,
    pub lambda: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub layers: Vec<usize>,
    pub hidden: Vec<usize>,
}

impl Default for GlocalGrid {
    fn default() -> Self {
        Self {
            enabled: false,
            lr: vec![0.01, 0.001, 0.0001, 0.00001],
            lambda: vec![0.1, 0.5, 0.9],
            batch_size: vec![25, 50, 100],
            layers: vec![2, 3],
            hidden: vec![10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnnSection {
    pub epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub ocgin: OcginGrid,
    pub glocalkd: GlocalGrid,
}

impl Default for GnnSection {
    fn default() -> Self {
        let stop = EarlyStop::default();
        Self {
            epochs: 150,
            patience: stop.patience,
            min_delta: stop.min_delta,
            ocgin: OcginGrid::default(),
            glocalkd: GlocalGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub percentile: f64,
    pub lookback: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            percentile: DEFAULT_PERCENTILE,
            lookback: DEFAULT_LOOKBACK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub seed: u64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub tda: TdaSection,
    #[serde(default)]
    pub pca: PcaSection,
    #[serde(default)]
    pub detectors: DetectorSection,
    #[serde(default)]
    pub gnn: GnnSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// A single scoring route of the run, with the name it reports under.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodPlan {
    Tda { norm: Norm, detector: Detector },
    Pca { dim: PcaDim, detector: Detector },
    Gnn(GnnRun),
}

impl MethodPlan {
    pub fn family(&self) -> &'static str {
        match self {
            MethodPlan::Tda { .. } => "tda",
            MethodPlan::Pca { .. } => "pca",
            MethodPlan::Gnn(GnnRun::Ocgin(_)) => "ocgin",
            MethodPlan::Gnn(GnnRun::Glocal(_)) => "glocalkd",
        }
    }

    pub fn name(&self) -> String {
        match self {
            MethodPlan::Tda { norm, detector } => format!("tda-{norm}-{}", detector.name()),
            MethodPlan::Pca { dim, detector } => format!("pca-{dim}-{}", detector.name()),
            MethodPlan::Gnn(run) => run.name(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.data.prices, &mut config.data.events, &mut config.output.dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn detectors(&self) -> Vec<Detector> {
        let mut out = Vec::new();
        if self.detectors.mahalanobis {
            out.push(Detector::Mahalanobis);
        }
        out.extend(self.detectors.lof_k.iter().map(|&k| Detector::Lof(k)));
        out
    }

    pub fn essential_policy(&self) -> Result<EssentialPolicy> {
        self.tda.essential.parse().map_err(config_error)
    }

    pub fn early_stop(&self) -> Option<EarlyStop> {
        (self.gnn.patience > 0).then_some(EarlyStop {
            patience: self.gnn.patience,
            min_delta: self.gnn.min_delta,
        })
    }

    /// Every scoring route, in reporting order.
    pub fn plans(&self) -> Result<Vec<MethodPlan>> {
        let detectors = self.detectors();
        let mut plans = Vec::new();
        if self.tda.enabled {
            for norm in &self.tda.norms {
                let norm: Norm = norm.parse().map_err(config_error)?;
                plans.extend(detectors.iter().map(|&detector| MethodPlan::Tda { norm, detector }));
            }
        }
        if self.pca.enabled {
            for dim in &self.pca.dims {
                let dim: PcaDim = dim.parse().map_err(config_error)?;
                plans.extend(detectors.iter().map(|&detector| MethodPlan::Pca { dim, detector }));
            }
        }
        let g = &self.gnn;
        let seed = self.output.seed;
        if g.ocgin.enabled {
            for &lr in &g.ocgin.lr {
                for &weight_decay in &g.ocgin.weight_decay {
                    for &batch_size in &g.ocgin.batch_size {
                        for &layers in &g.ocgin.layers {
                            for &hidden in &g.ocgin.hidden {
                                plans.push(MethodPlan::Gnn(GnnRun::Ocgin(OcginConfig {
                                    lr,
                                    weight_decay,
                                    batch_size,
                                    layers,
                                    hidden,
                                    epochs: g.epochs,
                                    seed,
                                    early_stop: self.early_stop(),
                                })));
                            }
                        }
                    }
                }
            }
        }
        if g.glocalkd.enabled {
            for &lr in &g.glocalkd.lr {
                for &lambda in &g.glocalkd.lambda {
                    for &batch_size in &g.glocalkd.batch_size {
                        for &layers in &g.glocalkd.layers {
                            for &hidden in &g.glocalkd.hidden {
                                plans.push(MethodPlan::Gnn(GnnRun::Glocal(GlocalConfig {
                                    lr,
                                    batch_size,
                                    layers,
                                    hidden,
                                    lambda,
                                    epochs: g.epochs,
                                    seed,
                                    early_stop: self.early_stop(),
                                })));
                            }
                        }
                    }
                }
            }
        }
        Ok(plans)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, p) in [("prices", &self.data.prices), ("events", &self.data.events)] {
            if !p.is_file() {
                return Err(Error::Config(format!("{what} file {} does not exist", p.display())));
            }
        }
        if let (Some(s), Some(e)) = (self.data.start, self.data.end) {
            if s >= e {
                return Err(Error::Config(format!("start {s} must precede end {e}")));
            }
        }
        if !(self.data.min_coverage > 0.0 && self.data.min_coverage <= 1.0) {
            return Err(Error::Config(format!(
                "min_coverage {} outside (0, 1]",
                self.data.min_coverage
            )));
        }
        if self.network.window < 3 {
            return Err(Error::Config(format!("window {} is too short", self.network.window)));
        }
        if !(self.eval.percentile > 0.0 && self.eval.percentile < 100.0) {
            return Err(Error::Config(format!(
                "percentile {} outside (0, 100)",
                self.eval.percentile
            )));
        }
        self.essential_policy()?;
        let plans = self.plans()?;
        let feature_branch = self.tda.enabled || self.pca.enabled;
        if feature_branch && self.detectors().is_empty() {
            return Err(Error::Config("feature branches selected but no detector".into()));
        }
        if plans.is_empty() {
            return Err(Error::Config("no feature/detector or GNN branch selected".into()));
        }
        if self.detectors.lof_k.contains(&0) {
            return Err(Error::Config("LOF neighbour count must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("configuration serialises");
        hex::encode(Sha256::digest(json))
    }
}

fn config_error(e: Error) -> Error {
    Error::Config(e.to_string())
}

// ---------------------------------------------------------------------------
// Run directory

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILED_FILE: &str = "FAILED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub family: String,
    pub method: String,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("method,family,precision,recall,f_score\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method, r.family, r.precision, r.recall, r.f_score
        ));
    }
    out
}

/// Highest f-score per family; ties keep the earliest row.
pub fn best_per_family(rows: &[ResultRow]) -> Vec<ResultRow> {
    let mut best: Vec<ResultRow> = Vec::new();
    for r in rows {
        match best.iter_mut().find(|b| b.family == r.family) {
            Some(b) if r.f_score > b.f_score => *b = r.clone(),
            Some(_) => {}
            None => best.push(r.clone()),
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    /// SHA-256 of every output file, keyed by path relative to the run
    /// directory.
    pub outputs: BTreeMap<String, String>,
    /// SHA-256 over the sorted CSV entries of `outputs`.
    pub csv_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub results: Vec<ResultRow>,
    pub reports: Vec<ReportJson>,
}

fn unique_run_dir(root: &Path, hash: &str) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S");
    let base = format!("{stamp}-{}", &hash[..12]);
    for k in 0.. {
        let name = if k == 0 { base.clone() } else { format!("{base}-{k}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!("unbounded search for a free directory name")
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Runs every configured branch in a fresh directory under
/// `config.output.dir`. On failure the directory keeps its partial outputs
/// plus a `FAILED` file naming the stage and cause.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutcome> {
    config.validate()?;
    let hash = config.hash();
    let dir = unique_run_dir(&config.output.dir, &hash)?;
    match execute(config, &dir, &hash) {
        Ok(outcome) => Ok(outcome),
        Err(e) => {
            let _ = fs::write(dir.join(FAILED_FILE), format!("{e}\n"));
            Err(e)
        }
    }
}

fn execute(config: &PipelineConfig, dir: &Path, hash: &str) -> Result<RunOutcome> {
    write(&dir.join("config.toml"), config.to_toml())?;

    let (returns, events) = (|| {
        let prices = read_price_csv(&config.data.prices)?;
        let events = EventList::read_csv(&config.data.events)?;
        let returns = stage_ingest(&prices, config.data.start, config.data.end, config.data.min_coverage)?;
        returns.write_csv(&dir.join("returns.csv"))?;
        Ok((returns, events))
    })()
    .map_err(|e: Error| e.in_stage("ingest"))?;

    let graphs = (|| {
        let archive = stage_graphs(&returns, config.network.params())?;
        let path = dir.join("graphs.bin");
        write_graph_archive(&path, &archive)?;
        read_graph_archive(&path)
    })()
    .map_err(|e| e.in_stage("graphs"))?;

    let plans = config.plans()?;
    let mut tables: BTreeMap<String, DatedTable> = BTreeMap::new();
    if config.tda.enabled {
        let table = stage_tda(&graphs, config.essential_policy()?);
        write_table(&dir.join("tda.csv"), &table).map_err(|e| e.in_stage("tda"))?;
        tables.insert("tda".into(), table);
    }
    if config.pca.enabled {
        for dim in &config.pca.dims {
            let dim: PcaDim = dim.parse().map_err(config_error)?;
            let table = stage_pca(&graphs, dim).map_err(|e| e.in_stage("pca"))?;
            write_table(&dir.join(format!("pca-{dim}.csv")), &table).map_err(|e| e.in_stage("pca"))?;
            tables.insert(format!("pca-{dim}"), table);
        }
    }

    let scored: Vec<(MethodPlan, AnomalySeries, Option<crate::gnn::Checkpoint>)> = plans
        .par_iter()
        .map(|plan| {
            let method = plan.name();
            let (series, checkpoint) = match plan {
                MethodPlan::Tda { norm, detector } => (
                    stage_score(&tables["tda"], Some(&tda_columns(*norm)), *detector, &method)
                        .map_err(|e| e.in_stage("score"))?,
                    None,
                ),
                MethodPlan::Pca { dim, detector } => (
                    stage_score(&tables[&format!("pca-{dim}")], None, *detector, &method)
                        .map_err(|e| e.in_stage("score"))?,
                    None,
                ),
                MethodPlan::Gnn(run) => {
                    let (s, c) = stage_gnn(&graphs, run).map_err(|e| e.in_stage("gnn"))?;
                    (s, Some(c))
                }
            };
            Ok((plan.clone(), series, checkpoint))
        })
        .collect::<Result<_>>()?;

    let methods_dir = dir.join("methods");
    fs::create_dir_all(&methods_dir).map_err(|e| Error::io(&methods_dir, e))?;
    let first = returns.dates.first().copied();
    let last = returns.dates.last().copied();
    let mut results = Vec::new();
    let mut reports = Vec::new();
    for (plan, series, checkpoint) in scored {
        let method = plan.name();
        let mdir = methods_dir.join(&method);
        fs::create_dir_all(&mdir).map_err(|e| Error::io(&mdir, e))?;
        let scores_path = mdir.join("scores.csv");
        write_table(&scores_path, &series.to_table())?;
        if let Some(c) = checkpoint {
            crate::gnn::save_checkpoint(&mdir.join("model.bin"), &c)?;
        }
        let scores = AnomalySeries::from_table(&DatedTable::read_csv(&scores_path)?, method.clone())?;
        let report = evaluate_series(&scores, &events, config.eval.percentile, config.eval.lookback)
            .map_err(|e| e.in_stage("evaluate"))?;
        write(
            &mdir.join("report.json"),
            serde_json::to_string_pretty(&report).expect("report serialises"),
        )?;
        if let (Some(first), Some(last)) = (first, last) {
            let svg = monthly_bar_chart(
                &format!("Anomalous graphs per month: {method}"),
                first,
                last,
                &monthly_counts(&report.anomalous_dates),
                &events,
            );
            write(&mdir.join("monthly.svg"), svg)?;
        }
        results.push(ResultRow {
            family: plan.family().into(),
            method,
            precision: report.precision,
            recall: report.recall,
            f_score: report.f_score,
        });
        reports.push(report);
    }
    write(&dir.join(RESULTS_FILE), results_csv(&results))?;
    write(&dir.join(SUMMARY_FILE), results_csv(&best_per_family(&results)))?;

    let mut outputs = BTreeMap::new();
    collect_hashes(dir, dir, &mut outputs)?;
    let mut digest = Sha256::new();
    for (path, h) in outputs.iter().filter(|(p, _)| p.ends_with(".csv")) {
        digest.update(path.as_bytes());
        digest.update(h.as_bytes());
    }
    let manifest = Manifest {
        config_hash: hash.to_string(),
        seed: config.output.seed,
        versions: BTreeMap::from([
            ("flagcrash-core".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("graph-archive".to_string(), "1".to_string()),
        ]),
        outputs,
        csv_digest: hex::encode(digest.finalize()),
    };
    write(
        &dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest).expect("manifest serialises"),
    )?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        results,
        reports,
    })
}

fn collect_hashes(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            collect_hashes(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("inside the run directory")
                .to_string_lossy()
                .replace('\\', "/");
            out.insert(rel, file_hash(&path)?);
        }
    }
    Ok(())
}
