//! Per-class explanation texts and their vector embeddings.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::PriceSeries;
use crate::types::{derive_seed, fnv1a, Class, ClassProbabilities};

pub const DEFAULT_EMBEDDING_DIM: usize = 32;

/// Lookback (days) used when phrasing chart facts.
pub const PHRASE_LOOKBACK: usize = 5;

/// One explanation per class for a single day. Serializes as
/// `{"day": .., "bull": .., "neutral": .., "bear": ..}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawExplanationSet", into = "RawExplanationSet")]
pub struct ExplanationSet {
    pub day: usize,
    texts: [String; 3],
}

#[derive(Serialize, Deserialize)]
struct RawExplanationSet {
    day: usize,
    bull: Option<String>,
    neutral: Option<String>,
    bear: Option<String>,
}

impl TryFrom<RawExplanationSet> for ExplanationSet {
    type Error = Error;

    fn try_from(raw: RawExplanationSet) -> Result<Self> {
        let day = raw.day;
        let take = |text: Option<String>, class: Class| {
            text.ok_or_else(|| {
                Error::Validation(format!("day {day}: missing {} explanation", class.name()))
            })
        };
        ExplanationSet::new(
            day,
            [
                take(raw.bull, Class::Bull)?,
                take(raw.neutral, Class::Neutral)?,
                take(raw.bear, Class::Bear)?,
            ],
        )
    }
}

impl From<ExplanationSet> for RawExplanationSet {
    fn from(set: ExplanationSet) -> Self {
        let [bull, neutral, bear] = set.texts;
        RawExplanationSet {
            day: set.day,
            bull: Some(bull),
            neutral: Some(neutral),
            bear: Some(bear),
        }
    }
}

impl ExplanationSet {
    /// `texts` are ordered BULL, NEUTRAL, BEAR.
    pub fn new(day: usize, texts: [String; 3]) -> Result<Self> {
        for (class, text) in Class::ALL.iter().zip(&texts) {
            if text.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "day {day}: empty {} explanation",
                    class.name()
                )));
            }
        }
        Ok(Self { day, texts })
    }

    pub fn text(&self, class: Class) -> &str {
        &self.texts[class.index()]
    }

    pub fn texts(&self) -> &[String; 3] {
        &self.texts
    }
}

pub type Corpus = BTreeMap<usize, ExplanationSet>;

/// Reads a JSONL corpus. Duplicate days keep the last entry and log a warning.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file))
}

pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut corpus = Corpus::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let set: ExplanationSet = serde_json::from_str(&line).map_err(|e| {
            // Surface our own validation messages (they name the day).
            let msg = e.to_string();
            if msg.contains("explanation") {
                Error::Validation(msg)
            } else {
                Error::Parse {
                    line: i + 1,
                    message: msg,
                }
            }
        })?;
        if corpus.contains_key(&set.day) {
            log::warn!("corpus: duplicate entry for day {}, keeping the last one", set.day);
        }
        corpus.insert(set.day, set);
    }
    Ok(corpus)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for set in corpus.values() {
        let line = serde_json::to_string(set)?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Source of explanation texts for a given day.
pub trait ExplanationSource: Send + Sync {
    fn explanations(
        &self,
        series: &PriceSeries,
        t: usize,
        p: &ClassProbabilities,
    ) -> Result<ExplanationSet>;
}

impl ExplanationSource for Corpus {
    fn explanations(
        &self,
        _series: &PriceSeries,
        t: usize,
        _p: &ClassProbabilities,
    ) -> Result<ExplanationSet> {
        self.get(&t)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("no corpus entry for day {t}")))
    }
}

/// Template-based explanation generator seeded per day.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TemplateExplainer {
    pub seed: u64,
}

impl ExplanationSource for TemplateExplainer {
    fn explanations(
        &self,
        series: &PriceSeries,
        t: usize,
        p: &ClassProbabilities,
    ) -> Result<ExplanationSet> {
        generate_template_explanations(series, t, p, self.seed)
    }
}

const BULL_OPENERS: [&str; 3] = [
    "Buyers look in control",
    "The chart leans bullish",
    "Momentum favours the upside",
];
const NEUTRAL_OPENERS: [&str; 3] = [
    "A sideways session looks likely",
    "The chart points to consolidation",
    "Price may stay within its recent range",
];
const BEAR_OPENERS: [&str; 3] = [
    "Sellers could take over",
    "The chart carries downside risk",
    "A pullback looks plausible",
];

fn pct(x: f64) -> String {
    format!("{:+.1}%", 100.0 * x)
}

/// Three sentences phrased from recent trend and volatility, one arguing for
/// each class. Deterministic in all arguments.
pub fn generate_template_explanations(
    series: &PriceSeries,
    t: usize,
    p: &ClassProbabilities,
    seed: u64,
) -> Result<ExplanationSet> {
    if t < PHRASE_LOOKBACK || t >= series.len() {
        return Err(Error::OutOfRange(format!(
            "day {t} needs {PHRASE_LOOKBACK} days of history"
        )));
    }
    let bars = series.bars();
    let close = bars[t].close;
    let base = bars[t - PHRASE_LOOKBACK].close;
    let trend = close / base - 1.0;
    let returns: Vec<f64> = (t + 1 - PHRASE_LOOKBACK..=t)
        .map(|s| bars[s].close / bars[s - 1].close - 1.0)
        .collect();
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let vol = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / returns.len() as f64).sqrt();
    let last = returns[returns.len() - 1];
    let hi = bars[t + 1 - PHRASE_LOOKBACK..=t]
        .iter()
        .map(|b| b.high)
        .fold(f64::MIN, f64::max);
    let lo = bars[t + 1 - PHRASE_LOOKBACK..=t]
        .iter()
        .map(|b| b.low)
        .fold(f64::MAX, f64::min);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[t as u64]));
    let mut pick = |opts: &[&'static str; 3]| opts[rng.random_range(0..opts.len())];
    let direction = if trend > 0.0 {
        "upward"
    } else if trend < 0.0 {
        "downward"
    } else {
        "flat"
    };
    let vol_word = if vol > 0.02 { "elevated" } else { "calm" };

    let bull = if trend > 0.0 {
        format!(
            "{}: the {PHRASE_LOOKBACK}-day upward move of {} to {close:.0} JPY may extend, and the AI gives BULL {:.0}%.",
            pick(&BULL_OPENERS),
            pct(trend),
            100.0 * p.get(Class::Bull)
        )
    } else {
        format!(
            "{}: after a {direction} {PHRASE_LOOKBACK}-day move of {} to {close:.0} JPY a rebound above {hi:.0} JPY is possible; the AI gives BULL {:.0}%.",
            pick(&BULL_OPENERS),
            pct(trend),
            100.0 * p.get(Class::Bull)
        )
    };
    let neutral = format!(
        "{}: volatility is {vol_word} at {:.1}% per day and price at {close:.0} JPY sits between {lo:.0} and {hi:.0} JPY; the AI gives NEUTRAL {:.0}%.",
        pick(&NEUTRAL_OPENERS),
        100.0 * vol,
        100.0 * p.get(Class::Neutral)
    );
    let bear = if trend > 0.0 {
        format!(
            "{}: the {} gain to {close:.0} JPY risks a reversal below {lo:.0} JPY after the last day's {}; the AI gives BEAR {:.0}%.",
            pick(&BEAR_OPENERS),
            pct(trend),
            pct(last),
            100.0 * p.get(Class::Bear)
        )
    } else {
        format!(
            "{}: the {direction} {PHRASE_LOOKBACK}-day move of {} to {close:.0} JPY may continue below {lo:.0} JPY; the AI gives BEAR {:.0}%.",
            pick(&BEAR_OPENERS),
            pct(trend),
            100.0 * p.get(Class::Bear)
        )
    };
    ExplanationSet::new(t, [bull, neutral, bear])
}

/// Unit-norm text embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding(Vec<f64>);

impl TextEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &TextEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// Pluggable text embedder.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<TextEmbedding>;
}

/// Signed feature hashing of character 3-grams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_EMBEDDING_DIM,
        }
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<TextEmbedding> {
        embed_text(text, self.dim)
    }
}

pub fn embed_text(text: &str, dim: usize) -> Result<TextEmbedding> {
    if text.is_empty() {
        return Err(Error::Validation("cannot embed an empty string".into()));
    }
    if dim == 0 {
        return Err(Error::Parameter("embedding dimension must be >= 1".into()));
    }
    let lowered = text.to_lowercase();
    let chars: Vec<char> = lowered.chars().collect();
    let mut v = vec![0.0; dim];
    let mut add = |gram: &[char]| {
        let s: String = gram.iter().collect();
        let h = fnv1a(s.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    };
    if chars.len() < 3 {
        add(&chars);
    } else {
        chars.windows(3).for_each(&mut add);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(TextEmbedding(v))
}

/// Embeddings of the three class texts of one day, ordered BULL, NEUTRAL, BEAR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationEmbeddings(pub [Vec<f64>; 3]);

impl ExplanationEmbeddings {
    pub fn embed(set: &ExplanationSet, provider: &dyn EmbeddingProvider) -> Result<Self> {
        let [a, b, c] = set.texts();
        Ok(Self([
            provider.embed(a)?.into_vec(),
            provider.embed(b)?.into_vec(),
            provider.embed(c)?.into_vec(),
        ]))
    }

    pub fn get(&self, class: Class) -> &[f64] {
        &self.0[class.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{synthesize_series, Regime, SynthParams};
    use std::collections::HashSet;

    #[test]
    fn corpus_line_round_trip() {
        let line = r#"{"day": 3, "bull": "up", "neutral": "flat", "bear": "down"}"#;
        let corpus = parse_corpus(line.as_bytes()).unwrap();
        assert_eq!(corpus[&3].text(Class::Bear), "down");
    }

    #[test]
    fn missing_class_names_day() {
        let line = r#"{"day": 7, "bull": "up", "neutral": "flat"}"#;
        match parse_corpus(line.as_bytes()) {
            Err(Error::Validation(msg)) => {
                assert!(msg.contains("day 7"), "{msg}");
                assert!(msg.contains("BEAR"), "{msg}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_day_last_wins() {
        let text = concat!(
            r#"{"day": 1, "bull": "a", "neutral": "b", "bear": "c"}"#,
            "\n",
            r#"{"day": 1, "bull": "x", "neutral": "y", "bear": "z"}"#,
            "\n"
        );
        let corpus = parse_corpus(text.as_bytes()).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus[&1].text(Class::Bull), "x");
    }

    #[test]
    fn uptrend_template_content() {
        let closes: Vec<f64> = (0..12).map(|i| 2000.0 + 20.0 * i as f64).collect();
        let s = PriceSeries::from_closes(&closes, "up").unwrap();
        let p = ClassProbabilities::new(0.5, 0.3, 0.2).unwrap();
        let set = generate_template_explanations(&s, 10, &p, 1).unwrap();
        assert!(set.text(Class::Bull).contains("upward"));
        assert!(set.text(Class::Bear).contains("reversal"));
        assert_eq!(set, generate_template_explanations(&s, 10, &p, 1).unwrap());
    }

    #[test]
    fn forty_five_days_of_distinct_texts() {
        let s = synthesize_series(11, 80, Regime::RandomWalk, SynthParams::default()).unwrap();
        let p = ClassProbabilities::new(0.3, 0.45, 0.25).unwrap();
        let mut seen = HashSet::new();
        for t in 10..55 {
            let set = generate_template_explanations(&s, t, &p, 4).unwrap();
            for text in set.texts() {
                assert!(!text.is_empty());
                seen.insert(text.clone());
            }
        }
        assert_eq!(seen.len(), 45 * 3);
    }

    #[test]
    fn embedding_is_unit_norm_and_deterministic() {
        for text in ["a", "ab", "hello world", "Momentum favours the upside"] {
            let a = embed_text(text, 32).unwrap();
            let b = embed_text(text, 32).unwrap();
            assert_eq!(a, b);
            let norm: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
        assert!(matches!(embed_text("", 32), Err(Error::Validation(_))));
    }
}
