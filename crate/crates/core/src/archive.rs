//! On-disk formats that connect pipeline stages.
//!
//! A graph archive is a binary file, little-endian throughout:
//!
//! ```text
//! header:  b"FCGR"  u32 version (=1)  u8 kind (0 pearson, 1 ccm)  3 pad bytes
//! record:  i32 as_of (days since 1970-01-01)  u32 N  u32 edge_count
//!          edge_count × (u32 src, u32 tgt, f64 weight)
//! ```
//!
//! Records repeat until end of file. A JSON sidecar at `<path>.json`
//! holds the construction parameters and ticker names.
//!
//! Feature and score tables are `date,<column...>` CSV files written with
//! round-trip float formatting so a downstream stage reads exactly the
//! values the upstream stage produced.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::corrnet::{CorrKind, CorrelationMatrix, DatedGraph, Edge, NetworkParams, WeightedDigraph, WindowSpec};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::ph::TdaFeature;
use crate::table::{DatedTable, FloatFormat};

const MAGIC: &[u8; 4] = b"FCGR";
const VERSION: u32 = 1;

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date")
}

/// Sidecar contents for a graph archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub params: NetworkParams,
    pub tickers: Vec<String>,
    pub n_graphs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphArchive {
    pub meta: ArchiveMeta,
    pub graphs: Vec<DatedGraph>,
}

impl GraphArchive {
    /// Thresholded correlation matrices rebuilt from the stored graphs.
    /// Window `k` is indexed by its position in the archive.
    pub fn matrices(&self) -> Vec<CorrelationMatrix> {
        self.graphs
            .iter()
            .enumerate()
            .map(|(k, g)| {
                CorrelationMatrix::from_digraph(
                    &g.graph,
                    self.meta.params.kind,
                    WindowSpec::new(k, self.meta.params.window),
                    g.as_of,
                )
            })
            .collect()
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode_graphs(kind: CorrKind, graphs: &[DatedGraph]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(match kind {
        CorrKind::Pearson => 0,
        CorrKind::Ccm => 1,
    });
    buf.extend_from_slice(&[0, 0, 0]);
    for g in graphs {
        let days = g.as_of.signed_duration_since(epoch()).num_days();
        let days = i32::try_from(days)
            .map_err(|_| Error::Archive(format!("date {} out of range", g.as_of)))?;
        buf.extend_from_slice(&days.to_le_bytes());
        buf.extend_from_slice(&(g.graph.n_vertices() as u32).to_le_bytes());
        buf.extend_from_slice(&(g.graph.edges().len() as u32).to_le_bytes());
        for e in g.graph.edges() {
            buf.extend_from_slice(&(e.source as u32).to_le_bytes());
            buf.extend_from_slice(&(e.target as u32).to_le_bytes());
            buf.extend_from_slice(&e.weight.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let out = self
            .bytes
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::Archive(format!("truncated record at byte {}", self.pos)))?;
        self.pos += N;
        Ok(out.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode_graphs(bytes: &[u8]) -> Result<(CorrKind, Vec<DatedGraph>)> {
    let mut c = Cursor { bytes, pos: 0 };
    if &c.take::<4>()? != MAGIC {
        return Err(Error::Archive("not a graph archive".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Archive(format!("unsupported archive version {version}")));
    }
    let kind = match c.take::<4>()?[0] {
        0 => CorrKind::Pearson,
        1 => CorrKind::Ccm,
        k => return Err(Error::Archive(format!("unknown correlation kind byte {k}"))),
    };
    let mut graphs = Vec::new();
    while !c.done() {
        let days = i32::from_le_bytes(c.take()?);
        let as_of = if days >= 0 {
            epoch().checked_add_days(Days::new(days as u64))
        } else {
            epoch().checked_sub_days(Days::new(days.unsigned_abs() as u64))
        }
        .ok_or_else(|| Error::Archive(format!("day offset {days} out of range")))?;
        let n = c.u32()? as usize;
        let count = c.u32()? as usize;
        let mut edges = Vec::with_capacity(count.min(bytes.len() / 16));
        for _ in 0..count {
            edges.push(Edge {
                source: c.u32()? as usize,
                target: c.u32()? as usize,
                weight: f64::from_le_bytes(c.take()?),
            });
        }
        let graph = WeightedDigraph::new(n, edges)
            .map_err(|e| Error::Archive(format!("record for {as_of}: {e}")))?;
        graphs.push(DatedGraph { as_of, graph });
    }
    Ok((kind, graphs))
}

pub fn write_graph_archive(path: &Path, archive: &GraphArchive) -> Result<()> {
    let bytes = encode_graphs(archive.meta.params.kind, &archive.graphs)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&archive.meta).expect("metadata serialises");
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn read_graph_archive(path: &Path) -> Result<GraphArchive> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (kind, graphs) = decode_graphs(&bytes)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: ArchiveMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Archive(format!("{}: {e}", side.display())))?;
    if meta.params.kind != kind {
        return Err(Error::Archive(format!(
            "archive kind {kind} disagrees with sidecar kind {}",
            meta.params.kind
        )));
    }
    if meta.n_graphs != graphs.len() {
        return Err(Error::Archive(format!(
            "sidecar lists {} graphs, archive holds {}",
            meta.n_graphs,
            graphs.len()
        )));
    }
    Ok(GraphArchive { meta, graphs })
}

pub fn tda_table(features: &[TdaFeature]) -> DatedTable {
    DatedTable {
        dates: features.iter().map(|f| f.as_of).collect(),
        columns: TdaFeature::COLUMNS.iter().map(|c| c.to_string()).collect(),
        rows: features.iter().map(|f| f.values().to_vec()).collect(),
    }
}

/// Rows of `table` as feature vectors, optionally restricted to `columns`
/// in the given order.
pub fn table_features(table: &DatedTable, columns: Option<&[String]>) -> Result<Vec<FeatureVector>> {
    let picks: Vec<usize> = match columns {
        None => (0..table.columns.len()).collect(),
        Some(names) => names
            .iter()
            .map(|name| {
                table.columns.iter().position(|c| c == name).ok_or_else(|| {
                    Error::InvalidArgument(format!("feature table has no column `{name}`"))
                })
            })
            .collect::<Result<_>>()?,
    };
    Ok(table
        .dates
        .iter()
        .zip(&table.rows)
        .map(|(&as_of, row)| FeatureVector {
            as_of,
            values: picks.iter().map(|&k| row[k]).collect(),
        })
        .collect())
}

pub fn write_table(path: &Path, table: &DatedTable) -> Result<()> {
    table.write_csv(path, FloatFormat::RoundTrip)
}
