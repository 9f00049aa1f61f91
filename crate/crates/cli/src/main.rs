//! `flagcrash`: stage-by-stage and end-to-end command-line interface.
//!
//! Each stage command reads the previous stage's file and writes its own,
//! using the same code paths as `flagcrash run`, so chaining the commands
//! reproduces a pipeline run exactly.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 stage failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use flagcrash_core::archive::{read_graph_archive, write_graph_archive, write_table};
use flagcrash_core::corrnet::{CcmParams, CorrKind, NetworkParams};
use flagcrash_core::detectors::AnomalySeries;
use flagcrash_core::eval::{evaluate_series, monthly_counts, EventList};
use flagcrash_core::features::PcaDim;
use flagcrash_core::gnn::{save_checkpoint, EarlyStop, GlocalConfig, OcginConfig};
use flagcrash_core::ingest::{read_price_csv, ReturnMatrix};
use flagcrash_core::ph::EssentialPolicy;
use flagcrash_core::pipeline::{
    results_csv, run_pipeline, stage_gnn, stage_graphs, stage_ingest, stage_pca, stage_score, stage_tda,
    Detector, GnnRun, PipelineConfig,
};
use flagcrash_core::svg::monthly_bar_chart;
use flagcrash_core::synth::{make_synthetic, SyntheticConfig};
use flagcrash_core::table::DatedTable;
use flagcrash_core::{Error, ErrorClass, Result};

#[derive(Debug, Parser)]
#[command(name = "flagcrash", version, about = "Market stress detection from correlation networks")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Align prices and write daily log returns.
    Ingest {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        start: Option<NaiveDate>,
        #[arg(long)]
        end: Option<NaiveDate>,
        #[arg(long, default_value_t = 1.0)]
        min_coverage: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build one correlation digraph per rolling window.
    Graphs {
        #[arg(long)]
        returns: PathBuf,
        #[arg(long, default_value_t = 25)]
        window: usize,
        #[arg(long, value_enum, default_value_t = Corr::Ccm)]
        corr: Corr,
        #[arg(long, default_value_t = 2)]
        ccm_e: usize,
        #[arg(long, default_value_t = 1)]
        ccm_tau: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Persistence-diagram norms per graph.
    Tda {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long, default_value = "drop")]
        essential: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Flattened correlation matrices, optionally reduced by PCA.
    Pca {
        #[arg(long)]
        graphs: PathBuf,
        /// `raw` or a component count.
        #[arg(long, default_value = "raw")]
        dim: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a graph model on every graph and score the same graphs.
    Gnn {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long, value_enum)]
        model: Model,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        #[arg(long, default_value_t = 1e-4)]
        weight_decay: f64,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 10)]
        hidden: usize,
        #[arg(long, default_value_t = 50)]
        batch: usize,
        #[arg(long, default_value_t = 150)]
        epochs: usize,
        /// Epochs without improvement before stopping; 0 disables.
        #[arg(long, default_value_t = 20)]
        patience: usize,
        #[arg(long, default_value_t = 1e-7)]
        min_delta: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Where to save the trained model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Anomaly scores for every row of a feature table.
    Score {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, default_value_t = 20)]
        lof_k: usize,
        /// Comma-separated subset of feature columns (default: all).
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold scores and measure them against labelled events.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long, default_value_t = 97.5)]
        percentile: f64,
        #[arg(long, default_value_t = 50)]
        lookback: usize,
        /// Method name recorded in the report.
        #[arg(long, default_value = "scores")]
        name: String,
        /// Also write the monthly bar chart here.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every configured branch end to end.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic price panel with planted stress episodes.
    Synth {
        #[arg(long, default_value_t = 20)]
        stocks: usize,
        #[arg(long, default_value_t = 1500)]
        days: usize,
        #[arg(long, default_value_t = 3)]
        episodes: usize,
        #[arg(long, default_value_t = 20)]
        length: usize,
        #[arg(long, default_value_t = 0.8)]
        coupling: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        events: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Corr {
    Ccm,
    Pearson,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Model {
    Ocgin,
    Glocalkd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Mahalanobis,
    Lof,
}

fn config_error(e: Error) -> Error {
    Error::Config(e.to_string())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            prices,
            start,
            end,
            min_coverage,
            out,
        } => {
            let table = read_price_csv(&prices)?;
            let returns = stage_ingest(&table, start, end, min_coverage).map_err(|e| e.in_stage("ingest"))?;
            returns.write_csv(&out)?;
            eprintln!("{} returns × {} tickers → {}", returns.n_rows(), returns.n_series(), out.display());
        }
        Command::Graphs {
            returns,
            window,
            corr,
            ccm_e,
            ccm_tau,
            out,
        } => {
            let returns = ReturnMatrix::read_csv(&returns)?;
            let params = NetworkParams {
                window,
                kind: match corr {
                    Corr::Ccm => CorrKind::Ccm,
                    Corr::Pearson => CorrKind::Pearson,
                },
                ccm: CcmParams {
                    embedding_dim: ccm_e,
                    lag: ccm_tau,
                },
            };
            let archive = stage_graphs(&returns, params).map_err(|e| e.in_stage("graphs"))?;
            write_graph_archive(&out, &archive)?;
            eprintln!("{} graphs → {}", archive.graphs.len(), out.display());
        }
        Command::Tda { graphs, essential, out } => {
            let policy: EssentialPolicy = essential.parse().map_err(config_error)?;
            let archive = read_graph_archive(&graphs)?;
            write_table(&out, &stage_tda(&archive, policy))?;
        }
        Command::Pca { graphs, dim, out } => {
            let dim: PcaDim = dim.parse().map_err(config_error)?;
            let archive = read_graph_archive(&graphs)?;
            write_table(&out, &stage_pca(&archive, dim).map_err(|e| e.in_stage("pca"))?)?;
        }
        Command::Gnn {
            graphs,
            model,
            lr,
            weight_decay,
            lambda,
            layers,
            hidden,
            batch,
            epochs,
            patience,
            min_delta,
            seed,
            checkpoint,
            out,
        } => {
            let early_stop = (patience > 0).then_some(EarlyStop { patience, min_delta });
            let run = match model {
                Model::Ocgin => GnnRun::Ocgin(OcginConfig {
                    lr,
                    weight_decay,
                    batch_size: batch,
                    layers,
                    hidden,
                    epochs,
                    seed,
                    early_stop,
                }),
                Model::Glocalkd => GnnRun::Glocal(GlocalConfig {
                    lr,
                    batch_size: batch,
                    layers,
                    hidden,
                    lambda,
                    epochs,
                    seed,
                    early_stop,
                }),
            };
            let archive = read_graph_archive(&graphs)?;
            let (series, state) = stage_gnn(&archive, &run).map_err(|e| e.in_stage("gnn"))?;
            write_table(&out, &series.to_table())?;
            if let Some(path) = checkpoint {
                save_checkpoint(&path, &state)?;
            }
        }
        Command::Score {
            features,
            method,
            lof_k,
            columns,
            out,
        } => {
            let detector = match method {
                Method::Mahalanobis => Detector::Mahalanobis,
                Method::Lof => Detector::Lof(lof_k),
            };
            let table = DatedTable::read_csv(&features)?;
            let series = stage_score(&table, columns.as_deref(), detector, &detector.name())
                .map_err(|e| e.in_stage("score"))?;
            write_table(&out, &series.to_table())?;
        }
        Command::Evaluate {
            scores,
            events,
            percentile,
            lookback,
            name,
            svg,
            out,
        } => {
            let series = AnomalySeries::from_table(&DatedTable::read_csv(&scores)?, name.clone())?;
            let events = EventList::read_csv(&events)?;
            let report = evaluate_series(&series, &events, percentile, lookback)?;
            write_file(&out, serde_json::to_string_pretty(&report).expect("report serialises"))?;
            if let (Some(path), Some(&first), Some(&last)) = (svg, series.dates.first(), series.dates.last()) {
                let chart = monthly_bar_chart(
                    &format!("Anomalous graphs per month: {name}"),
                    first,
                    last,
                    &monthly_counts(&report.anomalous_dates),
                    &events,
                );
                write_file(&path, chart)?;
            }
            println!(
                "precision {:.4}  recall {:.4}  f-score {:.4}",
                report.precision, report.recall, report.f_score
            );
        }
        Command::Run { config } => {
            let config = PipelineConfig::load(&config)?;
            let outcome = run_pipeline(&config)?;
            print!("{}", results_csv(&outcome.results));
            eprintln!("run directory: {}", outcome.dir.display());
        }
        Command::Synth {
            stocks,
            days,
            episodes,
            length,
            coupling,
            seed,
            prices,
            events,
        } => {
            let config = SyntheticConfig::evenly_spaced(stocks, days, episodes, length, coupling);
            let (table, list) = make_synthetic(&config, seed)?;
            table.write_csv(&prices)?;
            write_file(&events, list.to_csv_string())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot size worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Stage => 4,
            })
        }
    }
}
