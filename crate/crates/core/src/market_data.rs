//! Daily OHLC series: loading, synthesis, ground-truth classes and window
//! selection by predictor accuracy.

use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::ProbabilitySource;
use crate::types::Class;

/// Return threshold separating NEUTRAL from BULL / BEAR. Boundaries are NEUTRAL.
pub const CLASS_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBar {
    pub date_index: u32,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl PriceBar {
    pub fn validate(&self) -> Result<()> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::Validation(format!(
                "bar {}: prices must be positive and finite",
                self.date_index
            )));
        }
        if self.low > self.open.min(self.close) {
            return Err(Error::Validation(format!(
                "bar {}: low {} above min(open, close)",
                self.date_index, self.low
            )));
        }
        if self.high < self.open.max(self.close) {
            return Err(Error::Validation(format!(
                "bar {}: high {} below max(open, close)",
                self.date_index, self.high
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    bars: Vec<PriceBar>,
    source_id: String,
}

impl PriceSeries {
    pub fn new(bars: Vec<PriceBar>, source_id: impl Into<String>) -> Result<Self> {
        if bars.len() < 2 {
            return Err(Error::Validation(format!(
                "series needs at least 2 bars, got {}",
                bars.len()
            )));
        }
        for (i, bar) in bars.iter().enumerate() {
            bar.validate()?;
            if i > 0 && bar.date_index != bars[i - 1].date_index + 1 {
                return Err(Error::Validation(format!(
                    "date_index {} does not follow {}",
                    bar.date_index,
                    bars[i - 1].date_index
                )));
            }
        }
        Ok(Self {
            bars,
            source_id: source_id.into(),
        })
    }

    /// Builds a series from closes alone; open = previous close, high/low envelope both.
    pub fn from_closes(closes: &[f64], source_id: impl Into<String>) -> Result<Self> {
        let bars = closes
            .iter()
            .enumerate()
            .map(|(i, &close)| {
                let open = if i == 0 { close } else { closes[i - 1] };
                PriceBar {
                    date_index: i as u32,
                    open,
                    high: open.max(close),
                    low: open.min(close),
                    close,
                }
            })
            .collect();
        Self::new(bars, source_id)
    }

    pub fn bars(&self) -> &[PriceBar] {
        &self.bars
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn close(&self, t: usize) -> Result<f64> {
        self.bars
            .get(t)
            .map(|b| b.close)
            .ok_or_else(|| Error::OutOfRange(format!("day {t} beyond series length {}", self.len())))
    }

    pub fn closes(&self) -> impl Iterator<Item = f64> + '_ {
        self.bars.iter().map(|b| b.close)
    }

    /// Simple close-to-close return from `t` to `t + 1`.
    pub fn next_return(&self, t: usize) -> Result<f64> {
        if t + 1 >= self.len() {
            return Err(Error::OutOfRange(format!(
                "day {t} has no next-day close (series length {})",
                self.len()
            )));
        }
        let now = self.bars[t].close;
        Ok((self.bars[t + 1].close - now) / now)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let bars = self
            .bars
            .iter()
            .map(|b| PriceBar {
                date_index: b.date_index,
                open: b.open * factor,
                high: b.high * factor,
                low: b.low * factor,
                close: b.close * factor,
            })
            .collect();
        Self::new(bars, format!("{}*{factor}", self.source_id))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        for bar in &self.bars {
            writer
                .serialize(bar)
                .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn load_series(path: &Path) -> Result<PriceSeries> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_series_csv(file, &path.display().to_string())
}

/// Parses `date_index,open,high,low,close` CSV with a header row.
pub fn parse_series_csv<R: Read>(reader: R, source_id: &str) -> Result<PriceSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected = ["date_index", "open", "high", "low", "close"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", expected.join(",")),
        });
    }
    let mut bars = Vec::new();
    for record in rdr.deserialize::<PriceBar>() {
        let bar = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        bars.push(bar);
    }
    PriceSeries::new(bars, source_id)
}

pub fn true_class(series: &PriceSeries, t: usize) -> Result<Class> {
    Ok(classify_return(series.next_return(t)?))
}

pub fn classify_return(r: f64) -> Class {
    if r > CLASS_THRESHOLD {
        Class::Bull
    } else if r < -CLASS_THRESHOLD {
        Class::Bear
    } else {
        Class::Neutral
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    RandomWalk,
    Momentum,
    MeanRevert,
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_walk" => Ok(Regime::RandomWalk),
            "momentum" => Ok(Regime::Momentum),
            "mean_revert" => Ok(Regime::MeanRevert),
            other => Err(Error::Parameter(format!("unknown regime {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    /// Daily log-return standard deviation.
    pub volatility: f64,
    /// Daily log-return drift.
    pub drift: f64,
    pub initial_price: f64,
    /// Lag-1 feedback coefficient of the momentum regime.
    pub momentum: f64,
    /// Pull strength toward the initial price in the mean-revert regime.
    pub reversion: f64,
    /// Price tick; closes are rounded to a multiple of it (0 disables rounding).
    pub tick: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            volatility: 0.02,
            drift: 0.0,
            initial_price: 2000.0,
            momentum: 0.3,
            reversion: 0.05,
            tick: 1.0,
        }
    }
}

/// Full description of a synthetic series; parses `seed=..,days=..,regime=..[,volatility=..]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub days: usize,
    pub regime: Regime,
    #[serde(default)]
    pub params: SynthParams,
}

impl SynthSpec {
    pub fn generate(&self) -> Result<PriceSeries> {
        synthesize_series(self.seed, self.days, self.regime, self.params)
    }
}

impl FromStr for SynthSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = SynthSpec {
            seed: 0,
            days: 500,
            regime: Regime::RandomWalk,
            params: SynthParams::default(),
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Parameter(format!("expected key=value, got {part:?}")))?;
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::Parameter(format!("{key}: not a number: {v:?}")))
            };
            match key {
                "seed" => {
                    spec.seed = value
                        .parse()
                        .map_err(|_| Error::Parameter(format!("seed: {value:?}")))?
                }
                "days" => {
                    spec.days = value
                        .parse()
                        .map_err(|_| Error::Parameter(format!("days: {value:?}")))?
                }
                "regime" => spec.regime = value.parse()?,
                "volatility" | "vol" => spec.params.volatility = num(value)?,
                "drift" => spec.params.drift = num(value)?,
                "initial_price" | "price" => spec.params.initial_price = num(value)?,
                "momentum" => spec.params.momentum = num(value)?,
                "reversion" => spec.params.reversion = num(value)?,
                "tick" => spec.params.tick = num(value)?,
                other => return Err(Error::Parameter(format!("unknown synth key {other:?}"))),
            }
        }
        Ok(spec)
    }
}

fn round_to_tick(price: f64, tick: f64) -> f64 {
    if tick > 0.0 {
        ((price / tick).round() * tick).max(tick)
    } else {
        price
    }
}

/// Generates a geometric price path; identical arguments give identical output.
pub fn synthesize_series(
    seed: u64,
    days: usize,
    regime: Regime,
    params: SynthParams,
) -> Result<PriceSeries> {
    if days < 2 {
        return Err(Error::Parameter(format!("days must be >= 2, got {days}")));
    }
    if !params.volatility.is_finite() || params.volatility < 0.0 {
        return Err(Error::Parameter(format!(
            "volatility must be a non-negative finite number, got {}",
            params.volatility
        )));
    }
    if !params.initial_price.is_finite() || params.initial_price <= 0.0 {
        return Err(Error::Parameter("initial_price must be positive".into()));
    }
    if !params.drift.is_finite() || !params.momentum.is_finite() || !params.reversion.is_finite()
    {
        return Err(Error::Parameter("drift/momentum/reversion must be finite".into()));
    }
    if params.tick < 0.0 || !params.tick.is_finite() {
        return Err(Error::Parameter("tick must be >= 0".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchor = params.initial_price.ln();
    let mut log_price = anchor;
    let mut prev_return = 0.0;
    let mut prev_close = round_to_tick(params.initial_price, params.tick);
    let mut bars = Vec::with_capacity(days);

    for i in 0..days {
        // Four draws per day regardless of regime keep streams aligned.
        let z: f64 = StandardNormal.sample(&mut rng);
        let gap: f64 = StandardNormal.sample(&mut rng);
        let up: f64 = StandardNormal.sample(&mut rng);
        let down: f64 = StandardNormal.sample(&mut rng);

        if i > 0 {
            let noise = params.volatility * z;
            let r = match regime {
                Regime::RandomWalk => params.drift + noise,
                Regime::Momentum => params.drift + params.momentum * prev_return + noise,
                Regime::MeanRevert => params.drift + params.reversion * (anchor - log_price) + noise,
            };
            log_price += r;
            prev_return = r;
        }
        let close = round_to_tick(log_price.exp(), params.tick);
        let open = if i == 0 {
            close
        } else {
            round_to_tick(prev_close * (0.2 * params.volatility * gap).exp(), params.tick)
        };
        let hi_base = open.max(close);
        let lo_base = open.min(close);
        let mut high = hi_base * (1.0 + (0.5 * params.volatility * up).abs());
        let mut low = lo_base * (1.0 - (0.5 * params.volatility * down).abs().min(0.5));
        if params.tick > 0.0 {
            high = ((high / params.tick).ceil() * params.tick).max(hi_base);
            low = ((low / params.tick).floor() * params.tick).clamp(params.tick.min(lo_base), lo_base);
        }
        bars.push(PriceBar {
            date_index: i as u32,
            open,
            high,
            low,
            close,
        });
        prev_close = close;
    }
    PriceSeries::new(bars, format!("synth:{regime:?}:seed={seed}"))
}

/// Per-day correctness of a predictor's argmax against the true class;
/// `None` where either is unavailable.
pub fn daily_correctness<P: ProbabilitySource + ?Sized>(
    series: &PriceSeries,
    predictor: &P,
) -> Vec<Option<bool>> {
    (0..series.len().saturating_sub(1))
        .map(|t| {
            let truth = true_class(series, t).ok()?;
            let p = predictor.probabilities(series, t).ok()?;
            Some(p.argmax() == truth)
        })
        .collect()
}

/// Accuracy of the window of `window` days starting at `start`, if every day
/// in it is scoreable.
pub fn window_accuracy<P: ProbabilitySource + ?Sized>(
    series: &PriceSeries,
    predictor: &P,
    start: usize,
    window: usize,
) -> Option<f64> {
    let flags = daily_correctness(series, predictor);
    let slice = flags.get(start..start + window)?;
    let mut correct = 0usize;
    for f in slice {
        correct += usize::from((*f)?);
    }
    Some(correct as f64 / window as f64)
}

/// First start index whose windowed 3-class accuracy lies within `tolerance`
/// of `target`.
pub fn select_window<P: ProbabilitySource + ?Sized>(
    series: &PriceSeries,
    predictor: &P,
    window: usize,
    target_accuracy: f64,
    tolerance: f64,
) -> Result<usize> {
    if window == 0 || window > series.len().saturating_sub(1) {
        return Err(Error::Parameter(format!(
            "window {window} must be in [1, {}]",
            series.len().saturating_sub(1)
        )));
    }
    if !(0.0..=1.0).contains(&target_accuracy) || !(tolerance >= 0.0) {
        return Err(Error::Parameter(
            "target accuracy must be in [0, 1] and tolerance >= 0".into(),
        ));
    }
    let flags = daily_correctness(series, predictor);
    // Running counts of scoreable and correct days over the sliding window.
    let mut correct = 0usize;
    let mut scored = 0usize;
    let mut best = f64::NAN;
    let mut best_gap = f64::INFINITY;
    for end in 0..flags.len() {
        if let Some(ok) = flags[end] {
            scored += 1;
            correct += usize::from(ok);
        }
        if end >= window {
            if let Some(ok) = flags[end - window] {
                scored -= 1;
                correct -= usize::from(ok);
            }
        }
        if end + 1 >= window && scored == window {
            let acc = correct as f64 / window as f64;
            let gap = (acc - target_accuracy).abs();
            if gap <= tolerance {
                return Ok(end + 1 - window);
            }
            if gap < best_gap {
                best_gap = gap;
                best = acc;
            }
        }
    }
    Err(Error::WindowNotFound {
        target: target_accuracy,
        tolerance,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ClassProbabilities;

    struct Fixed(Vec<ClassProbabilities>);

    impl ProbabilitySource for Fixed {
        fn probabilities(&self, _series: &PriceSeries, t: usize) -> Result<ClassProbabilities> {
            self.0
                .get(t)
                .copied()
                .ok_or_else(|| Error::OutOfRange(format!("{t}")))
        }
    }

    fn one_hot(c: Class) -> ClassProbabilities {
        let mut a = [0.0; 3];
        a[c.index()] = 1.0;
        ClassProbabilities::from_array(a).unwrap()
    }

    #[test]
    fn parses_a_csv_row() {
        let csv = "date_index,open,high,low,close\n0,2000,2100,1950,2050\n1,2050,2060,2000,2010\n";
        let s = parse_series_csv(csv.as_bytes(), "t").unwrap();
        assert_eq!(
            s.bars()[0],
            PriceBar {
                date_index: 0,
                open: 2000.0,
                high: 2100.0,
                low: 1950.0,
                close: 2050.0
            }
        );
    }

    #[test]
    fn rejects_high_below_close() {
        let csv = "date_index,open,high,low,close\n0,2000,2040,1950,2050\n1,2050,2060,2000,2010\n";
        assert!(matches!(
            parse_series_csv(csv.as_bytes(), "t"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn malformed_row_names_line() {
        let csv = "date_index,open,high,low,close\n0,2000,2100,1950,2050\n1,abc,2060,2000,2010\n";
        match parse_series_csv(csv.as_bytes(), "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn sixty_row_file_round_trips_length() {
        let s = synthesize_series(3, 60, Regime::RandomWalk, SynthParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        s.write_csv(&path).unwrap();
        let loaded = load_series(&path).unwrap();
        assert_eq!(loaded.len(), 60);
        assert_eq!(loaded.bars(), s.bars());
    }

    #[test]
    fn zero_volatility_gives_constant_closes() {
        let params = SynthParams {
            volatility: 0.0,
            ..SynthParams::default()
        };
        let s = synthesize_series(1, 50, Regime::RandomWalk, params).unwrap();
        assert!(s.closes().all(|c| c == 2000.0));
    }

    #[test]
    fn negative_volatility_is_rejected() {
        let params = SynthParams {
            volatility: -0.01,
            ..SynthParams::default()
        };
        assert!(matches!(
            synthesize_series(1, 50, Regime::RandomWalk, params),
            Err(Error::Parameter(_))
        ));
        assert!(synthesize_series(1, 1, Regime::RandomWalk, SynthParams::default()).is_err());
    }

    #[test]
    fn class_thresholds() {
        let s = PriceSeries::from_closes(&[2000.0, 2050.0], "a").unwrap();
        assert_eq!(true_class(&s, 0).unwrap(), Class::Bull);
        let s = PriceSeries::from_closes(&[2000.0, 2040.0], "a").unwrap();
        assert_eq!(true_class(&s, 0).unwrap(), Class::Neutral);
        let s = PriceSeries::from_closes(&[2000.0, 1960.0], "a").unwrap();
        assert_eq!(true_class(&s, 0).unwrap(), Class::Neutral);
        let s = PriceSeries::from_closes(&[2000.0, 1950.0], "a").unwrap();
        assert_eq!(true_class(&s, 0).unwrap(), Class::Bear);
        assert!(matches!(true_class(&s, 1), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn perfect_predictor_selects_first_window() {
        let s = synthesize_series(9, 120, Regime::RandomWalk, SynthParams::default()).unwrap();
        let probs = (0..s.len())
            .map(|t| true_class(&s, t).map_or(ClassProbabilities::uniform(), one_hot))
            .collect();
        assert_eq!(select_window(&s, &Fixed(probs), 45, 1.0, 0.0).unwrap(), 0);
    }

    #[test]
    fn always_wrong_predictor_reports_best_accuracy() {
        let s = synthesize_series(9, 120, Regime::RandomWalk, SynthParams::default()).unwrap();
        let probs = (0..s.len())
            .map(|t| {
                true_class(&s, t).map_or(ClassProbabilities::uniform(), |c| {
                    one_hot(Class::from_index((c.index() + 1) % 3).unwrap())
                })
            })
            .collect();
        match select_window(&s, &Fixed(probs), 45, 0.6, 0.03) {
            Err(Error::WindowNotFound { best, .. }) => assert_eq!(best, 0.0),
            other => panic!("expected not-found, got {other:?}"),
        }
    }
}
