//! Synthetic price panels with planted stress episodes.
//!
//! Outside an episode every stock's daily log return is independent
//! `N(0, 0.01²)`. Inside one, returns are `c·f_t + (1 − c)·ε_it` with a
//! shared factor `f_t`, so the panel becomes strongly cross-correlated.
//! Each episode produces one event dated on its last stressed day.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Event, EventList};
use crate::ingest::PriceTable;

pub const RETURN_SIGMA: f64 = 0.01;
pub const INITIAL_PRICE: f64 = 100.0;

/// Days `start .. start + length` have stressed returns; day indices
/// refer to rows of the price panel, and day 0 has no return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressEpisode {
    pub start: usize,
    pub length: usize,
    pub coupling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_stocks: usize,
    pub n_days: usize,
    #[serde(default)]
    pub episodes: Vec<StressEpisode>,
}

impl SyntheticConfig {
    /// `count` episodes of `length` days placed at `k · n_days / (count + 1)`.
    pub fn evenly_spaced(n_stocks: usize, n_days: usize, count: usize, length: usize, coupling: f64) -> Self {
        let episodes = (1..=count)
            .map(|k| StressEpisode {
                start: k * n_days / (count + 1),
                length,
                coupling,
            })
            .collect();
        Self {
            n_stocks,
            n_days,
            episodes,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_stocks == 0 || self.n_days < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least one stock and two days, got {} × {}",
                self.n_stocks, self.n_days
            )));
        }
        let mut sorted = self.episodes.clone();
        sorted.sort_by_key(|e| e.start);
        for e in &sorted {
            if e.length == 0 || e.start == 0 || e.start + e.length > self.n_days {
                return Err(Error::InvalidArgument(format!(
                    "episode at day {} of length {} outside days 1..{}",
                    e.start, e.length, self.n_days
                )));
            }
            if !(e.coupling > 0.0 && e.coupling <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "coupling {} outside (0, 1]",
                    e.coupling
                )));
            }
        }
        for w in sorted.windows(2) {
            if w[0].start + w[0].length > w[1].start {
                return Err(Error::InvalidArgument(format!(
                    "episodes starting at days {} and {} overlap",
                    w[0].start, w[1].start
                )));
            }
        }
        Ok(())
    }
}

/// `n` consecutive weekdays starting 2005-01-03.
pub fn business_days(n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = NaiveDate::from_ymd_opt(2005, 1, 3).expect("valid date");
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

pub fn make_synthetic(config: &SyntheticConfig, seed: u64) -> Result<(PriceTable, EventList)> {
    config.validate()?;
    let (n, t) = (config.n_stocks, config.n_days);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, RETURN_SIGMA).expect("positive sigma");

    let mut coupling = vec![None; t];
    for e in &config.episodes {
        for c in &mut coupling[e.start..e.start + e.length] {
            *c = Some(e.coupling);
        }
    }

    let mut log_price = vec![0.0f64; n];
    let mut rows = Vec::with_capacity(t);
    rows.push(log_price.iter().map(|l| Some(INITIAL_PRICE * l.exp())).collect());
    for c in &coupling[1..] {
        let common = normal.sample(&mut rng);
        for lp in log_price.iter_mut() {
            let idio = normal.sample(&mut rng);
            *lp += match c {
                Some(c) => c * common + (1.0 - c) * idio,
                None => idio,
            };
        }
        rows.push(log_price.iter().map(|l| Some(INITIAL_PRICE * l.exp())).collect());
    }

    let dates = business_days(t);
    let tickers = (1..=n).map(|k| format!("S{k:03}")).collect();
    let prices = PriceTable::new(dates.clone(), tickers, rows)?;

    let mut episodes = config.episodes.clone();
    episodes.sort_by_key(|e| e.start);
    let events = EventList::new(
        episodes
            .iter()
            .enumerate()
            .map(|(k, e)| Event {
                date: dates[e.start + e.length - 1],
                label: format!("episode-{}", k + 1),
            })
            .collect(),
    )?;
    Ok((prices, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrnet::pearson;
    use crate::ingest::log_returns;

    #[test]
    fn no_episodes_gives_noise_and_no_events() {
        let (p, e) = make_synthetic(&SyntheticConfig { n_stocks: 3, n_days: 50, episodes: vec![] }, 1).unwrap();
        assert!(e.is_empty());
        assert_eq!(p.n_rows(), 50);
        assert!(p.is_complete());
        assert_eq!(p.get(0, 0), Some(INITIAL_PRICE));
    }

    #[test]
    fn full_coupling_is_fully_correlated() {
        let config = SyntheticConfig {
            n_stocks: 5,
            n_days: 200,
            episodes: vec![StressEpisode { start: 80, length: 30, coupling: 1.0 }],
        };
        let (p, e) = make_synthetic(&config, 3).unwrap();
        assert_eq!(e.events()[0].date, p.dates()[109]);
        let r = log_returns(&p).unwrap();
        // Return row k is dated on price day k + 1.
        for i in 0..5 {
            for j in 0..i {
                let c = pearson(&r.slice(i, 79, 30), &r.slice(j, 79, 30));
                assert!(c > 0.95, "{c}");
            }
        }
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let config = SyntheticConfig::evenly_spaced(4, 120, 2, 10, 0.8);
        let a = make_synthetic(&config, 9).unwrap();
        let b = make_synthetic(&config, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.to_csv_string(), b.0.to_csv_string());
        assert_ne!(a.0, make_synthetic(&config, 10).unwrap().0);
    }

    #[test]
    fn invalid_configs() {
        let ep = |start, length, coupling| StressEpisode { start, length, coupling };
        let bad = [
            vec![ep(10, 10, 0.5), ep(15, 10, 0.5)],
            vec![ep(0, 5, 0.5)],
            vec![ep(95, 10, 0.5)],
            vec![ep(10, 5, 0.0)],
            vec![ep(10, 5, 1.5)],
        ];
        for episodes in bad {
            let c = SyntheticConfig { n_stocks: 3, n_days: 100, episodes };
            assert!(make_synthetic(&c, 0).is_err());
        }
        let adjacent = SyntheticConfig { n_stocks: 3, n_days: 100, episodes: vec![ep(10, 10, 0.5), ep(20, 5, 0.5)] };
        assert!(make_synthetic(&adjacent, 0).is_ok());
    }

    #[test]
    fn business_days_skip_weekends() {
        let d = business_days(6);
        assert_eq!(d[0].weekday(), Weekday::Mon);
        assert_eq!(d[5], NaiveDate::from_ymd_opt(2005, 1, 10).unwrap());
    }
}
