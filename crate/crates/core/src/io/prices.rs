//! Electricity price series.
//!
//! Input files hold `datetime,price` rows: ISO-8601 timestamps, comma
//! separated, dot decimals, with an optional header row. Timestamps must be
//! strictly increasing and prices positive.

use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    timestamps: Vec<NaiveDateTime>,
    prices: Vec<f64>,
}

fn origin() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2020, 4, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid literal date")
}

impl PriceSeries {
    pub fn new(timestamps: Vec<NaiveDateTime>, prices: Vec<f64>) -> Result<Self> {
        if prices.is_empty() {
            return Err(Error::EmptyPrices);
        }
        if timestamps.len() != prices.len() {
            return Err(Error::invalid("timestamps and prices differ in length"));
        }
        for (k, p) in prices.iter().enumerate() {
            if !(*p > 0.0 && p.is_finite()) {
                return Err(Error::PriceParse {
                    line: k as u64 + 1,
                    message: format!("price {p} must be positive"),
                });
            }
        }
        for k in 1..timestamps.len() {
            if timestamps[k] <= timestamps[k - 1] {
                return Err(Error::PriceOrder { line: k as u64 + 1 });
            }
        }
        Ok(Self { timestamps, prices })
    }

    /// Hourly series holding one price, starting 2020-04-01.
    pub fn constant(price: f64, len: usize) -> Self {
        let timestamps = (0..len).map(|h| origin() + Duration::hours(h as i64)).collect();
        Self::new(timestamps, vec![price; len]).expect("constant series is valid")
    }

    /// Seeded hourly lognormal series with a daily cycle, for offline runs.
    ///
    /// Log-prices follow `ln(30) + 0.25 sin(2 pi h / 24) + N(0, 0.15^2)`.
    pub fn synthetic(seed: u64, len: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.15).expect("valid normal");
        let mut timestamps = Vec::with_capacity(len);
        let mut prices = Vec::with_capacity(len);
        for h in 0..len.max(1) {
            let phase = 2.0 * std::f64::consts::PI * (h % 24) as f64 / 24.0;
            let log_price = 30f64.ln() + 0.25 * phase.sin() + noise.sample(&mut rng);
            timestamps.push(origin() + Duration::hours(h as i64));
            prices.push(log_price.exp());
        }
        Self { timestamps, prices }
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn mean(&self) -> f64 {
        self.prices.iter().sum::<f64>() / self.prices.len() as f64
    }

    /// Raw price for period `t`, cycling through the series.
    pub fn price_at(&self, period: usize) -> f64 {
        self.prices[period % self.prices.len()]
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Reads a price file. See the module docs for the format.
pub fn load_price_csv(path: impl AsRef<Path>) -> Result<PriceSeries> {
    let file = std::fs::File::open(path)?;
    read_price_csv(file)
}

pub fn read_price_csv(reader: impl std::io::Read) -> Result<PriceSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut timestamps: Vec<NaiveDateTime> = Vec::new();
    let mut prices = Vec::new();
    let mut first = true;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != 2 {
            return Err(Error::PriceParse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let ts = parse_timestamp(&record[0]);
        let price = record[1].parse::<f64>();
        if first {
            first = false;
            // A first row that parses as neither timestamp nor price is a header.
            if ts.is_none() && price.is_err() {
                continue;
            }
        }
        let ts = ts.ok_or_else(|| Error::PriceParse {
            line,
            message: format!("invalid ISO-8601 timestamp {:?}", &record[0]),
        })?;
        let price = price.map_err(|_| Error::PriceParse {
            line,
            message: format!("invalid price {:?}", &record[1]),
        })?;
        if !(price > 0.0 && price.is_finite()) {
            return Err(Error::PriceParse {
                line,
                message: format!("price {price} must be positive"),
            });
        }
        if timestamps.last().is_some_and(|prev| ts <= *prev) {
            return Err(Error::PriceOrder { line });
        }
        timestamps.push(ts);
        prices.push(price);
    }
    if prices.is_empty() {
        return Err(Error::EmptyPrices);
    }
    Ok(PriceSeries { timestamps, prices })
}
