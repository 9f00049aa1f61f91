//! Price panel ingestion: CSV parsing, date-range alignment, gap filling and
//! log returns.
//!
//! The price file layout is `date,<ticker1>,<ticker2>,...` with ISO dates and
//! adjusted closes. Empty or unparseable cells are treated as missing.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::table::{format_float, parse_date, DatedTable, FloatFormat};

/// Dates × tickers matrix of adjusted closing prices.
#[derive(Debug, Clone)]
pub struct PriceTable {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    /// Row-major `T × N`; the value under a missing cell is `NaN`.
    prices: Vec<f64>,
    missing: Vec<bool>,
}

impl PriceTable {
    /// Builds a table from row-major prices; `None` marks a missing cell.
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        rows: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        if rows.len() != dates.len() {
            return Err(Error::shape(
                "PriceTable::new",
                format!("{} dates vs {} rows", dates.len(), rows.len()),
            ));
        }
        let mut seen = HashSet::new();
        for t in &tickers {
            if !seen.insert(t.as_str()) {
                return Err(Error::DuplicateTicker(t.clone()));
            }
        }
        for w in dates.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateDate(w[0]));
            }
            if w[0] > w[1] {
                return Err(Error::InvalidArgument(format!(
                    "dates not increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let n = tickers.len();
        let mut prices = Vec::with_capacity(rows.len() * n);
        let mut missing = Vec::with_capacity(rows.len() * n);
        for (date, row) in dates.iter().zip(&rows) {
            if row.len() != n {
                return Err(Error::shape(
                    "PriceTable::new",
                    format!("row {date} has {} cells, expected {n}", row.len()),
                ));
            }
            for (i, cell) in row.iter().enumerate() {
                match *cell {
                    Some(p) if p <= 0.0 => {
                        return Err(Error::NonPositivePrice {
                            date: *date,
                            ticker: tickers[i].clone(),
                            price: p,
                        })
                    }
                    Some(p) => {
                        prices.push(p);
                        missing.push(false);
                    }
                    None => {
                        prices.push(f64::NAN);
                        missing.push(true);
                    }
                }
            }
        }
        Ok(Self {
            dates,
            tickers,
            prices,
            missing,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    /// Price at row `t`, ticker `i`; `None` when missing.
    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        let k = t * self.tickers.len() + i;
        (!self.missing[k]).then_some(self.prices[k])
    }

    pub fn is_missing(&self, t: usize, i: usize) -> bool {
        self.missing[t * self.tickers.len() + i]
    }

    pub fn is_complete(&self) -> bool {
        !self.missing.iter().any(|&m| m)
    }

    /// Price column of ticker `i` (missing cells are `NaN`).
    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.n_rows())
            .map(|t| self.prices[t * self.n_tickers() + i])
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("date");
        for t in &self.tickers {
            out.push(',');
            out.push_str(t);
        }
        out.push('\n');
        for (t, date) in self.dates.iter().enumerate() {
            out.push_str(&date.format("%Y-%m-%d").to_string());
            for i in 0..self.n_tickers() {
                out.push(',');
                if let Some(p) = self.get(t, i) {
                    out.push_str(&format_float(p, FloatFormat::RoundTrip));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

impl PartialEq for PriceTable {
    fn eq(&self, other: &Self) -> bool {
        self.dates == other.dates
            && self.tickers == other.tickers
            && self.missing == other.missing
            && self
                .prices
                .iter()
                .zip(&other.prices)
                .zip(&self.missing)
                .all(|((a, b), &m)| m || a == b)
    }
}

/// Log returns; row `t` is the return realised from price row `t` to `t+1`,
/// labelled with the later date.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// Row-major `(T-1) × N`.
    pub values: Vec<f64>,
}

impl ReturnMatrix {
    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn n_series(&self) -> usize {
        self.tickers.len()
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.values[t * self.tickers.len() + i]
    }

    /// Returns of series `i` over rows `[start, start + len)`.
    pub fn slice(&self, i: usize, start: usize, len: usize) -> Vec<f64> {
        (start..start + len).map(|t| self.get(t, i)).collect()
    }

    pub fn to_table(&self) -> DatedTable {
        let n = self.n_series();
        let rows = self.values.chunks(n.max(1)).map(<[f64]>::to_vec).collect();
        DatedTable {
            dates: self.dates.clone(),
            columns: self.tickers.clone(),
            rows: if n == 0 { vec![Vec::new(); self.dates.len()] } else { rows },
        }
    }

    pub fn from_table(table: DatedTable) -> Result<Self> {
        if let Some(v) = table.rows.iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: 0,
                reason: format!("non-finite return {v}"),
            });
        }
        check_increasing(&table.dates)?;
        Ok(Self {
            dates: table.dates,
            tickers: table.columns,
            values: table.rows.into_iter().flatten().collect(),
        })
    }

    /// Writes the returns with twelve significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.to_table().write_csv(path, FloatFormat::Sig12)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_table(DatedTable::read_csv(path)?)
    }
}

fn check_increasing(dates: &[NaiveDate]) -> Result<()> {
    for w in dates.windows(2) {
        if w[0] == w[1] {
            return Err(Error::DuplicateDate(w[0]));
        }
        if w[0] > w[1] {
            return Err(Error::InvalidArgument(format!(
                "dates not increasing: {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Parses a price CSV. Rows are sorted by date; empty, unparseable or
/// non-finite cells become missing.
pub fn parse_price_csv(text: &str) -> Result<PriceTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        reason: e.to_string(),
    })?;
    if !header
        .get(0)
        .is_some_and(|h| h.eq_ignore_ascii_case("date"))
    {
        return Err(Error::Header {
            column: 0,
            reason: format!("expected `date`, found `{}`", header.get(0).unwrap_or("")),
        });
    }
    let mut tickers = Vec::new();
    let mut seen = HashSet::new();
    for (col, name) in header.iter().enumerate().skip(1) {
        if name.is_empty() {
            return Err(Error::Header {
                column: col,
                reason: "empty ticker name".into(),
            });
        }
        if !seen.insert(name.to_string()) {
            return Err(Error::Header {
                column: col,
                reason: format!("duplicate ticker `{name}`"),
            });
        }
        tickers.push(name.to_string());
    }
    if tickers.is_empty() {
        return Err(Error::Header {
            column: 1,
            reason: "no ticker columns".into(),
        });
    }

    let mut rows: Vec<(NaiveDate, Vec<Option<f64>>)> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            reason: e.to_string(),
        })?;
        let date = parse_date(&record[0]).ok_or_else(|| Error::Parse {
            line,
            reason: format!("bad date `{}`", &record[0]),
        })?;
        let cells = record
            .iter()
            .skip(1)
            .map(|cell| cell.parse::<f64>().ok().filter(|p| p.is_finite()))
            .collect();
        rows.push((date, cells));
    }
    rows.sort_by_key(|(d, _)| *d);
    let (dates, cells): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    PriceTable::new(dates, tickers, cells)
}

pub fn read_price_csv(path: &Path) -> Result<PriceTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_price_csv(&text)
}

/// Restricts `table` to `[start, end]`, drops tickers whose coverage is below
/// `min_coverage` or whose series starts with a gap, and forward-fills the
/// remaining interior gaps.
pub fn align_and_filter(
    table: &PriceTable,
    start: NaiveDate,
    end: NaiveDate,
    min_coverage: f64,
) -> Result<PriceTable> {
    if start >= end {
        return Err(Error::InvalidArgument(format!(
            "start {start} must precede end {end}"
        )));
    }
    if !(min_coverage > 0.0 && min_coverage <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "min_coverage {min_coverage} outside (0, 1]"
        )));
    }
    let rows: Vec<usize> = (0..table.n_rows())
        .filter(|&t| (start..=end).contains(&table.dates[t]))
        .collect();
    if rows.is_empty() {
        return Err(Error::Empty(format!("no rows between {start} and {end}")));
    }

    let mut kept = Vec::new();
    for i in 0..table.n_tickers() {
        let present = rows.iter().filter(|&&t| !table.is_missing(t, i)).count();
        let coverage = present as f64 / rows.len() as f64;
        if coverage < min_coverage || table.is_missing(rows[0], i) {
            continue;
        }
        let mut filled = Vec::with_capacity(rows.len());
        let mut last = f64::NAN;
        for &t in &rows {
            if let Some(p) = table.get(t, i) {
                last = p;
            }
            filled.push(last);
        }
        kept.push((i, filled));
    }
    if kept.is_empty() {
        return Err(Error::Empty("no ticker survives coverage filter".into()));
    }

    let dates = rows.iter().map(|&t| table.dates[t]).collect();
    let tickers = kept.iter().map(|(i, _)| table.tickers[*i].clone()).collect();
    let cells = (0..rows.len())
        .map(|r| kept.iter().map(|(_, col)| Some(col[r])).collect())
        .collect();
    PriceTable::new(dates, tickers, cells)
}

/// `returns[t][i] = ln(p[t+1][i]) - ln(p[t][i])`.
pub fn log_returns(table: &PriceTable) -> Result<ReturnMatrix> {
    if table.n_rows() == 0 {
        return Err(Error::Empty("price table has no rows".into()));
    }
    let n = table.n_tickers();
    let mut values = Vec::with_capacity((table.n_rows() - 1) * n);
    for t in 1..table.n_rows() {
        for i in 0..n {
            let (prev, cur) = match (table.get(t - 1, i), table.get(t, i)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "missing price for {} near {}",
                        table.tickers[i], table.dates[t]
                    )))
                }
            };
            if prev <= 0.0 || cur <= 0.0 {
                let (date, price) = if prev <= 0.0 {
                    (table.dates[t - 1], prev)
                } else {
                    (table.dates[t], cur)
                };
                return Err(Error::NonPositivePrice {
                    date,
                    ticker: table.tickers[i].clone(),
                    price,
                });
            }
            values.push(cur.ln() - prev.ln());
        }
    }
    Ok(ReturnMatrix {
        dates: table.dates[1..].to_vec(),
        tickers: table.tickers.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    #[test]
    fn parses_complete_file() {
        let t = parse_price_csv("date,AAA,BBB\n2020-01-02,1,2\n2020-01-03,1.5,2.5\n2020-01-06,2,3\n")
            .unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.n_tickers(), 2);
        assert!(t.is_complete());
        assert_eq!(t.get(1, 1), Some(2.5));
    }

    #[test]
    fn empty_cell_is_missing() {
        let t = parse_price_csv("date,AAA,BBB\n2020-01-02,1,\n2020-01-03,1.5,2.5\n").unwrap();
        assert_eq!((t.n_rows(), t.n_tickers()), (2, 2));
        assert!(t.is_missing(0, 1));
        assert!(!t.is_missing(0, 0));
        assert!(!t.is_complete());
    }

    #[test]
    fn rows_are_sorted_by_date() {
        let t = parse_price_csv("date,A\n2020-01-03,2\n2020-01-02,1\n").unwrap();
        assert_eq!(t.dates(), &[d("2020-01-02"), d("2020-01-03")]);
        assert_eq!(t.get(0, 0), Some(1.0));
    }

    #[test]
    fn negative_price_names_date_and_ticker() {
        let err = parse_price_csv("date,AAA,BBB\n2020-01-02,1,2\n2020-01-03,-1.0,2\n").unwrap_err();
        match err {
            Error::NonPositivePrice { date, ticker, .. } => {
                assert_eq!(date, d("2020-01-03"));
                assert_eq!(ticker, "AAA");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_header_names_column() {
        let err = parse_price_csv("date,AAA,,CCC\n2020-01-02,1,2,3\n").unwrap_err();
        assert!(matches!(err, Error::Header { column: 2, .. }), "{err:?}");
        let err = parse_price_csv("day,AAA\n2020-01-02,1\n").unwrap_err();
        assert!(matches!(err, Error::Header { column: 0, .. }));
        let err = parse_price_csv("date,AAA,AAA\n2020-01-02,1,1\n").unwrap_err();
        assert!(matches!(err, Error::Header { column: 2, .. }));
    }

    #[test]
    fn duplicate_date_is_reported() {
        let err = parse_price_csv("date,A\n2020-01-02,1\n2020-01-02,2\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateDate(x) if x == d("2020-01-02")));
    }

    #[test]
    fn align_identity_on_complete_table() {
        let t = parse_price_csv("date,A,B\n2020-01-02,1,2\n2020-01-03,1.5,2.5\n").unwrap();
        let out = align_and_filter(&t, d("2020-01-01"), d("2020-12-31"), 1.0).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn align_forward_fills_and_drops() {
        let csv = "date,A,B,C\n\
                   2019-12-31,9,9,9\n\
                   2020-01-02,1,,3\n\
                   2020-01-03,,2,3\n\
                   2020-01-06,2,2,\n\
                   2020-01-07,3,3,4\n";
        let t = parse_price_csv(csv).unwrap();
        let out = align_and_filter(&t, d("2020-01-01"), d("2020-12-31"), 0.7).unwrap();
        // B has a leading gap inside the range; A and C are forward-filled.
        assert_eq!(out.tickers(), &["A".to_string(), "C".to_string()]);
        assert_eq!(out.n_rows(), 4);
        assert!(out.is_complete());
        assert_eq!(out.column(0), vec![1.0, 1.0, 2.0, 3.0]);
        assert_eq!(out.column(1), vec![3.0, 3.0, 3.0, 4.0]);

        let strict = align_and_filter(&t, d("2020-01-01"), d("2020-12-31"), 1.0);
        assert!(matches!(strict, Err(Error::Empty(_))));
    }

    #[test]
    fn align_rejects_bad_range() {
        let t = parse_price_csv("date,A\n2020-01-02,1\n").unwrap();
        assert!(align_and_filter(&t, d("2020-02-01"), d("2020-01-01"), 1.0).is_err());
        assert!(align_and_filter(&t, d("2020-01-01"), d("2020-02-01"), 0.0).is_err());
    }

    #[test]
    fn log_returns_examples() {
        let e = std::f64::consts::E;
        let rows = vec![vec![Some(1.0)], vec![Some(e)], vec![Some(e * e)]];
        let dates = vec![d("2020-01-01"), d("2020-01-02"), d("2020-01-03")];
        let t = PriceTable::new(dates.clone(), vec!["X".into()], rows).unwrap();
        let r = log_returns(&t).unwrap();
        assert!((r.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((r.get(1, 0) - 1.0).abs() < 1e-15);
        assert_eq!(r.dates, dates[1..].to_vec());

        let flat = PriceTable::new(dates.clone(), vec!["X".into()], vec![vec![Some(5.0)]; 3]).unwrap();
        assert_eq!(log_returns(&flat).unwrap().values, vec![0.0, 0.0]);

        let two = PriceTable::new(
            dates[..2].to_vec(),
            vec!["X".into()],
            vec![vec![Some(100.0)], vec![Some(110.0)]],
        )
        .unwrap();
        // ln(1.1) = 0.09531017980432486...
        assert!((log_returns(&two).unwrap().values[0] - 0.095_310_179_804_324_86).abs() < 1e-15);
    }

    #[test]
    fn log_returns_rejects_missing() {
        let t = parse_price_csv("date,A\n2020-01-02,1\n2020-01-03,\n").unwrap();
        assert!(log_returns(&t).is_err());
    }

    fn price_table_strategy() -> impl Strategy<Value = PriceTable> {
        (1usize..4, 1usize..30).prop_flat_map(|(n, t)| {
            proptest::collection::vec(
                proptest::collection::vec(proptest::option::weighted(0.9, 0.01f64..1e4), n),
                t,
            )
            .prop_map(move |rows| {
                let start = d("2010-01-01");
                let dates = (0..rows.len())
                    .map(|k| start + chrono::Days::new(k as u64))
                    .collect();
                let tickers = (0..n).map(|i| format!("T{i}")).collect();
                PriceTable::new(dates, tickers, rows).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_idempotent(table in price_table_strategy()) {
            let once = parse_price_csv(&table.to_csv_string()).unwrap();
            prop_assert_eq!(&once, &table);
            let twice = parse_price_csv(&once.to_csv_string()).unwrap();
            prop_assert_eq!(twice, once);
        }

        #[test]
        fn cumulative_returns_reconstruct_prices(
            prices in proptest::collection::vec(0.5f64..500.0, 1..60)
        ) {
            let start = d("2010-01-01");
            let dates: Vec<_> = (0..prices.len()).map(|k| start + chrono::Days::new(k as u64)).collect();
            let rows = prices.iter().map(|&p| vec![Some(p)]).collect();
            let table = PriceTable::new(dates, vec!["X".into()], rows).unwrap();
            let r = log_returns(&table).unwrap();
            prop_assert_eq!(r.n_rows(), prices.len() - 1);
            let mut acc = 0.0;
            for (t, &p) in prices.iter().enumerate().skip(1) {
                acc += r.get(t - 1, 0);
                let rebuilt = prices[0] * acc.exp();
                prop_assert!(((rebuilt - p) / p).abs() < 1e-12);
            }
        }
    }
}
