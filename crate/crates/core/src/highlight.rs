//! Agreement between attributions and reader highlights: polished word
//! scores, per-sentence highlight records and binned slope-through-origin
//! fits.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{attribute, AttributionConfig, AttributionError};
use crate::corpus::{sentence_spans, CorpusRecord, Span};
use crate::model::Target;
use crate::oracle::{GradientOracle, OracleError};
use crate::parallel::map_ordered;
use crate::render::{merge_tokens_to_words, RenderError, WordAttribution};
use crate::stats::exact_sum;

#[derive(Debug, Error)]
pub enum HighlightError {
    #[error("F(x) = 0; nothing to rescale to")]
    ZeroAgency,
    #[error("no sign-coherent word scores remain")]
    AllZeroAfterPolish,
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Word scores with incoherent signs zeroed, rescaled so that they sum to
/// `F(x)`. The correctly rounded sum is made exact by pushing the rounding
/// residual onto the smallest score that keeps its sign.
pub fn polish_attributions(wa: &WordAttribution) -> Result<Vec<f64>, HighlightError> {
    polish_scores(&wa.words.iter().map(|w| w.own).collect::<Vec<_>>(), wa.f_x)
}

pub fn polish_scores(scores: &[f64], f_x: f64) -> Result<Vec<f64>, HighlightError> {
    if f_x == 0.0 {
        return Err(HighlightError::ZeroAgency);
    }
    let mut p: Vec<f64> = scores.iter().map(|&s| if s * f_x > 0.0 { s } else { 0.0 }).collect();
    let total = exact_sum(&p);
    if total == 0.0 {
        return Err(HighlightError::AllZeroAfterPolish);
    }
    let factor = f_x / total;
    p.iter_mut().for_each(|v| *v *= factor);
    // smallest scores first: they absorb a tiny residual with the least rounding
    let mut order: Vec<usize> = (0..p.len()).filter(|&i| p[i] != 0.0).collect();
    order.sort_by(|&a, &b| p[a].abs().total_cmp(&p[b].abs()));
    for _ in 0..8 {
        if exact_sum(&p) == f_x {
            break;
        }
        let mut terms: Vec<f64> = p.iter().map(|v| -v).collect();
        terms.push(f_x);
        let r = exact_sum(&terms);
        let Some(&j) = order.iter().find(|&&j| p[j].abs() > 2.0 * r.abs()) else {
            break;
        };
        p[j] += r;
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum NoiseMode {
    /// `f_h * a`, the expectation over uniformly random word subsets.
    #[default]
    Analytic,
    /// Mean over random subsets of the highlight's size.
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighlightRecord {
    /// Overall sentence score `F(x)`.
    pub a: f64,
    pub f_h: f64,
    pub a_h: f64,
    pub a_max: f64,
    pub noise: f64,
}

impl HighlightRecord {
    /// `0 <= a_h <= a_max <= a` for positive `a`, reversed for negative.
    pub fn ordering_holds(&self) -> bool {
        if self.a >= 0.0 {
            0.0 <= self.a_h && self.a_h <= self.a_max && self.a_max <= self.a
        } else {
            0.0 >= self.a_h && self.a_h >= self.a_max && self.a_max >= self.a
        }
    }
}

fn sum_at(p: &[f64], idx: &[usize]) -> f64 {
    exact_sum(&idx.iter().map(|&i| p[i]).collect::<Vec<_>>())
}

/// Metrics of one highlighted sentence. `polished` must come from
/// [`polish_scores`] with `F(x) = a`; `highlighted` has one flag per word.
pub fn highlight_metrics(highlighted: &[bool], polished: &[f64], a: f64, noise: NoiseMode) -> HighlightRecord {
    assert_eq!(highlighted.len(), polished.len(), "one flag per word");
    let m = polished.len();
    let hl: Vec<usize> = (0..m).filter(|&i| highlighted[i]).collect();
    let h = hl.len();
    let a_h = sum_at(polished, &hl);
    let mut order: Vec<usize> = (0..m).collect();
    // stable: equal magnitudes keep position order
    order.sort_by(|&x, &y| polished[y].abs().total_cmp(&polished[x].abs()));
    let a_max = sum_at(polished, &order[..h]);
    let f_h = h as f64 / m as f64;
    let noise = match noise {
        NoiseMode::Analytic => f_h * a,
        NoiseMode::MonteCarlo { draws, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut total = 0.0;
            for _ in 0..draws {
                total += sum_at(polished, &sample(&mut rng, m, h).into_vec());
            }
            total / draws.max(1) as f64
        }
    };
    HighlightRecord {
        a,
        f_h,
        a_h,
        a_max,
        noise,
    }
}

/// Words of `[start, end)` in `text` as char spans; a word is highlighted
/// when at least half of its characters are covered by `spans`.
pub fn highlight_mask(words: &[Span], spans: &[Span]) -> Vec<bool> {
    words
        .iter()
        .map(|w| {
            let len = w[1] - w[0];
            let covered = (w[0]..w[1])
                .filter(|&c| spans.iter().any(|s| s[0] <= c && c < s[1]))
                .count();
            len > 0 && 2 * covered >= len
        })
        .collect()
}

/// One processed (document, sentence, reader) triple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentenceRow {
    pub document_id: String,
    pub sentence: usize,
    pub reader: String,
    pub words: usize,
    pub highlighted: usize,
    pub a: f64,
    pub f_h: f64,
    pub a_h: f64,
    pub a_max: f64,
    pub noise: f64,
}

impl SentenceRow {
    pub fn record(&self) -> HighlightRecord {
        HighlightRecord {
            a: self.a,
            f_h: self.f_h,
            a_h: self.a_h,
            a_max: self.a_max,
            noise: self.noise,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SkipCounts {
    pub zero_agency: usize,
    pub all_zero_after_polish: usize,
    pub not_highlighted: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Default)]
pub struct HighlightRun {
    pub rows: Vec<SentenceRow>,
    pub skipped: SkipCounts,
    /// `(document id, message)` for sentences whose attribution failed.
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HighlightConfig {
    pub attribution: AttributionConfig,
    pub target: Target,
    pub noise: NoiseMode,
    pub threads: usize,
}

impl Default for HighlightConfig {
    fn default() -> Self {
        Self {
            attribution: AttributionConfig::default(),
            target: Target::Scalar,
            noise: NoiseMode::Analytic,
            threads: 1,
        }
    }
}

enum SentenceOutcome {
    Rows(Vec<SentenceRow>),
    Skip(HighlightError),
    NotHighlighted,
}

fn chars_of(text: &str, s: Span) -> String {
    text.chars().skip(s[0]).take(s[1] - s[0]).collect()
}

fn process_sentence(
    oracle: &mut dyn GradientOracle,
    rec: &CorpusRecord,
    k: usize,
    span: Span,
    cfg: &HighlightConfig,
) -> SentenceOutcome {
    let readers: Vec<(&String, Vec<Span>)> = rec
        .highlights
        .iter()
        .flatten()
        .map(|(r, spans)| {
            // clip to the sentence and shift to sentence-local offsets
            let local = spans
                .iter()
                .filter_map(|s| {
                    let a = s[0].max(span[0]);
                    let b = s[1].min(span[1]);
                    (a < b).then(|| [a - span[0], b - span[0]])
                })
                .collect();
            (r, local)
        })
        .filter(|(_, v): &(_, Vec<Span>)| !v.is_empty())
        .collect();
    if readers.is_empty() {
        return SentenceOutcome::NotHighlighted;
    }
    let text = chars_of(&rec.text, span);
    let mut run = || -> Result<(Vec<Span>, Vec<f64>, f64), HighlightError> {
        let e = oracle.embed(&text)?;
        let a = attribute(oracle, &e, cfg.target, &cfg.attribution)?;
        let wa = merge_tokens_to_words(&e.tokens, &a)?;
        let words = wa.words.iter().map(|w| [w.char_start, w.char_end]).collect();
        Ok((words, polish_attributions(&wa)?, wa.f_x))
    };
    let (words, polished, a) = match run() {
        Ok(v) => v,
        Err(e) => return SentenceOutcome::Skip(e),
    };
    let mut rows = Vec::new();
    for (reader, spans) in readers {
        let mask = highlight_mask(&words, &spans);
        let h = mask.iter().filter(|&&b| b).count();
        if h == 0 {
            continue;
        }
        let r = highlight_metrics(&mask, &polished, a, cfg.noise);
        rows.push(SentenceRow {
            document_id: rec.id.clone(),
            sentence: k,
            reader: reader.clone(),
            words: words.len(),
            highlighted: h,
            a: r.a,
            f_h: r.f_h,
            a_h: r.a_h,
            a_max: r.a_max,
            noise: r.noise,
        });
    }
    if rows.is_empty() {
        SentenceOutcome::NotHighlighted
    } else {
        SentenceOutcome::Rows(rows)
    }
}

/// Splits every record into sentences, attributes each highlighted
/// sentence and computes one row per reader who highlighted it.
pub fn evaluate_highlights<F>(records: &[CorpusRecord], cfg: &HighlightConfig, make_oracle: F) -> HighlightRun
where
    F: Fn() -> Result<Box<dyn GradientOracle>, OracleError> + Sync,
{
    let jobs: Vec<(usize, usize, Span)> = records
        .iter()
        .enumerate()
        .flat_map(|(d, r)| sentence_spans(r).into_iter().enumerate().map(move |(k, s)| (d, k, s)))
        .collect();
    let outcomes = map_ordered(
        &jobs,
        cfg.threads,
        || make_oracle().map_err(|e| e.to_string()),
        |oracle, _, &(d, k, span)| Ok::<_, String>(process_sentence(oracle.as_mut(), &records[d], k, span, cfg)),
    );
    let mut run = HighlightRun::default();
    for (&(d, _, _), out) in jobs.iter().zip(outcomes) {
        match out {
            Ok(SentenceOutcome::Rows(r)) => run.rows.extend(r),
            Ok(SentenceOutcome::NotHighlighted) => run.skipped.not_highlighted += 1,
            Ok(SentenceOutcome::Skip(HighlightError::ZeroAgency)) => run.skipped.zero_agency += 1,
            Ok(SentenceOutcome::Skip(HighlightError::AllZeroAfterPolish)) => run.skipped.all_zero_after_polish += 1,
            Ok(SentenceOutcome::Skip(e)) => {
                run.skipped.failed += 1;
                run.failures.push((records[d].id.clone(), e.to_string()));
            }
            Err(e) => {
                run.skipped.failed += 1;
                run.failures.push((records[d].id.clone(), e));
            }
        }
    }
    run
}

/// Fit of one bin `(lo, hi]` of `f_h`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinSlope {
    pub group: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub slope_a_h: Option<f64>,
    pub slope_a_max: Option<f64>,
    pub slope_noise: Option<f64>,
    /// `slope_a_h / slope_a_max`.
    pub ratio: Option<f64>,
    /// Standard error of `slope_a_h`.
    pub se_a_h: Option<f64>,
}

pub const BINS: usize = 10;

/// Bin `k` holds `f_h` in `(k/10, (k+1)/10]`.
pub fn bin_index(f_h: f64) -> usize {
    (((f_h * BINS as f64 - 1e-9).ceil() as isize) - 1).clamp(0, BINS as isize - 1) as usize
}

/// `sum(a y) / sum(a^2)`.
pub fn slope_through_origin(a: &[f64], y: &[f64]) -> f64 {
    let sxy: f64 = a.iter().zip(y).map(|(x, y)| x * y).sum();
    let sxx: f64 = a.iter().map(|x| x * x).sum();
    sxy / sxx
}

/// Heteroscedasticity-robust (HC1 sandwich) standard error of the
/// through-origin slope. The spread of `y` around `b a` grows with `|a|`,
/// which the constant-variance formula would understate.
pub fn slope_standard_error(a: &[f64], y: &[f64]) -> f64 {
    let b = slope_through_origin(a, y);
    let n = a.len() as f64;
    let meat: f64 = a.iter().zip(y).map(|(x, y)| (x * (y - b * x)).powi(2)).sum();
    let sxx: f64 = a.iter().map(|x| x * x).sum();
    (meat * n / (n - 1.0)).sqrt() / sxx
}

/// Through-origin fits per `f_h` bin for each group (pooled records use a
/// single group). Bins with fewer than two records are reported with
/// their count and no slopes.
pub fn fit_slopes(records: &[(String, HighlightRecord)]) -> Vec<BinSlope> {
    let mut groups: BTreeMap<&str, Vec<Vec<&HighlightRecord>>> = BTreeMap::new();
    for (g, r) in records {
        groups.entry(g.as_str()).or_insert_with(|| vec![Vec::new(); BINS])[bin_index(r.f_h)].push(r);
    }
    let mut out = Vec::new();
    for (g, bins) in groups {
        for (k, rs) in bins.into_iter().enumerate() {
            let mut row = BinSlope {
                group: g.to_string(),
                lo: k as f64 / BINS as f64,
                hi: (k + 1) as f64 / BINS as f64,
                count: rs.len(),
                slope_a_h: None,
                slope_a_max: None,
                slope_noise: None,
                ratio: None,
                se_a_h: None,
            };
            let a: Vec<f64> = rs.iter().map(|r| r.a).collect();
            if rs.len() >= 2 && a.iter().any(|&v| v != 0.0) {
                let col = |f: fn(&HighlightRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
                let ah = slope_through_origin(&a, &col(|r| r.a_h));
                let am = slope_through_origin(&a, &col(|r| r.a_max));
                row.slope_a_h = Some(ah);
                row.slope_a_max = Some(am);
                row.slope_noise = Some(slope_through_origin(&a, &col(|r| r.noise)));
                row.ratio = (am != 0.0).then(|| ah / am);
                row.se_a_h = Some(slope_standard_error(&a, &col(|r| r.a_h)));
            }
            out.push(row);
        }
    }
    out
}

/// Grouping key for slope fits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    #[default]
    Pooled,
    PerReader,
}

pub fn grouped(rows: &[SentenceRow], grouping: Grouping) -> Vec<(String, HighlightRecord)> {
    rows.iter()
        .map(|r| {
            let g = match grouping {
                Grouping::Pooled => "all".to_string(),
                Grouping::PerReader => r.reader.clone(),
            };
            (g, r.record())
        })
        .collect()
}

/// Counts of `f_h` per bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramRow {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

pub fn f_h_histogram(rows: &[SentenceRow]) -> Vec<HistogramRow> {
    let mut counts = [0usize; BINS];
    for r in rows {
        counts[bin_index(r.f_h)] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(k, &count)| HistogramRow {
            lo: k as f64 / BINS as f64,
            hi: (k + 1) as f64 / BINS as f64,
            count,
        })
        .collect()
}

pub fn write_csv<T: Serialize, W: Write>(items: &[T], w: W) -> Result<(), HighlightError> {
    let mut csv = csv::Writer::from_writer(w);
    for it in items {
        csv.serialize(it)?;
    }
    csv.flush()?;
    Ok(())
}
