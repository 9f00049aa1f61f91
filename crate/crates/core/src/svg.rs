//! Self-contained SVG bar charts of anomalies per month.

use std::collections::BTreeMap;
use std::fmt::Write;

use chrono::NaiveDate;

use crate::eval::{EventList, YearMonth};

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 320.0;
const MARGIN_LEFT: f64 = 48.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 40.0;

impl YearMonth {
    fn next(self) -> Self {
        if self.month == 12 {
            Self { year: self.year + 1, month: 1 }
        } else {
            Self { year: self.year, month: self.month + 1 }
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Bar per calendar month from `first` to `last` (inclusive) with the count
/// of flagged dates, plus a numbered dashed marker at each event's month.
pub fn monthly_bar_chart(
    title: &str,
    first: NaiveDate,
    last: NaiveDate,
    counts: &[(YearMonth, usize)],
    events: &EventList,
) -> String {
    let lookup: BTreeMap<YearMonth, usize> = counts.iter().copied().collect();
    let mut months = Vec::new();
    let mut m = YearMonth::from(first);
    let end = YearMonth::from(last);
    while m <= end {
        months.push(m);
        m = m.next();
    }
    if months.is_empty() {
        months.push(YearMonth::from(first));
    }
    let max = lookup.values().copied().max().unwrap_or(0).max(1);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let slot = plot_w / months.len() as f64;
    let base = MARGIN_TOP + plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        WIDTH - MARGIN_RIGHT
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{base}" stroke="black"/>"#
    );
    for tick in [0, max] {
        let y = base - plot_h * tick as f64 / max as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end" dominant-baseline="middle">{tick}</text>"#,
            MARGIN_LEFT - 6.0,
            y
        );
    }

    for (k, month) in months.iter().enumerate() {
        let x = MARGIN_LEFT + k as f64 * slot;
        if let Some(&count) = lookup.get(month) {
            let h = plot_h * count as f64 / max as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="steelblue"><title>{month}: {count}</title></rect>"#,
                x + 0.1 * slot,
                base - h,
                (0.8 * slot).max(0.5),
                h
            );
        }
        if month.month == 1 || k == 0 {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                x + slot / 2.0,
                base + 16.0,
                month.year
            );
        }
    }

    for (k, e) in events.events().iter().enumerate() {
        let month = YearMonth::from(e.date);
        let Some(pos) = months.iter().position(|m| *m == month) else {
            continue;
        };
        let x = MARGIN_LEFT + (pos as f64 + 0.5) * slot;
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{MARGIN_TOP}" x2="{x:.2}" y2="{base}" stroke="firebrick" stroke-dasharray="4 3"><title>{}</title></line>"#,
            escape(&e.label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle" fill="firebrick">{}</text>"#,
            MARGIN_TOP - 4.0,
            k + 1
        );
    }
    s.push_str("</svg>\n");
    s
}
