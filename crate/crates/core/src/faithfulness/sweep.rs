//! Sweep campaigns: every (document, method, baseline, N, f) cell, with
//! per-cell CSV rows and box-plot summaries per (method, baseline, N, f).

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    approximation_error, comprehensiveness_of, select_top_fraction, sufficiency_of, FaithfulnessError, FractionGrid,
    Level, Removal,
};
use crate::attribution::{
    attribute, AttributionConfig, BaselineStrategy, GradShapConfig, Method, QuadratureKind, QuadratureRule,
};
use crate::model::Target;
use crate::oracle::{GradientOracle, OracleError};
use crate::parallel::map_ordered;
use crate::stats::Quartiles;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDocument {
    pub id: String,
    pub text: String,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    pub baselines: Vec<BaselineStrategy>,
    /// Step counts; ignored by methods without a path quadrature.
    pub steps: Vec<usize>,
    pub quadrature: QuadratureKind,
    pub grid: FractionGrid,
    pub level: Level,
    pub removal: Removal,
    pub gradshap: GradShapConfig,
    pub threads: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Ig],
            baselines: vec![BaselineStrategy::Zero],
            steps: vec![300],
            quadrature: QuadratureKind::Trapezoid,
            grid: FractionGrid::default(),
            level: Level::Token,
            removal: Removal::Delete,
            gradshap: GradShapConfig::default(),
            threads: 1,
        }
    }
}

fn uses_steps(m: Method) -> bool {
    matches!(m, Method::Ig | Method::Sig)
}

impl SweepConfig {
    /// Every attribution setting of the cross product, in output order.
    pub fn combinations(&self) -> Vec<(AttributionConfig, Option<usize>)> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &baseline in &self.baselines {
                let steps: Vec<Option<usize>> = if uses_steps(method) {
                    self.steps.iter().map(|&n| Some(n)).collect()
                } else {
                    vec![None]
                };
                for n in steps {
                    let cfg = AttributionConfig {
                        method,
                        baseline,
                        quadrature: QuadratureRule::new(self.quadrature, n.unwrap_or(1)),
                        gradshap: self.gradshap,
                    };
                    out.push((cfg, n));
                }
            }
        }
        out
    }

    /// Rejects combinations the oracle cannot serve, before any evaluation.
    pub fn validate(&self, oracle: &dyn GradientOracle) -> Result<(), FaithfulnessError> {
        let bad = |m: String| Err(FaithfulnessError::InvalidSweep(m));
        if self.methods.is_empty() || self.baselines.is_empty() {
            return bad("at least one method and one baseline are required".into());
        }
        if self.methods.iter().any(|&m| uses_steps(m)) && (self.steps.is_empty() || self.steps.contains(&0)) {
            return bad("step counts must be non-empty and positive".into());
        }
        if self.methods.contains(&Method::DeepLift) && oracle.builtin().is_none() {
            return bad("deeplift needs the built-in model".into());
        }
        let d = oracle.descriptor();
        for &b in &self.baselines {
            b.reference_row(&d.references, d.dim)?;
        }
        if self.removal == Removal::Mask {
            BaselineStrategy::Mask.reference_row(&d.references, d.dim)?;
        }
        Ok(())
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub document_id: String,
    pub method: Method,
    pub baseline: BaselineStrategy,
    pub n: Option<usize>,
    pub f: f64,
    pub c_f: f64,
    pub s_f: f64,
    /// Empty when `F(x) = F(x0)`.
    pub ae: Option<f64>,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepFailure {
    pub document_id: String,
    pub method: Method,
    pub baseline: BaselineStrategy,
    pub n: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
    /// Cells whose AE is undefined because `F(x) = F(x0)`.
    pub degenerate_ae: usize,
}

type DocOutcome = (Vec<SweepRow>, Vec<SweepFailure>, usize);

fn run_document(
    oracle: &mut dyn GradientOracle,
    doc: &SweepDocument,
    cfg: &SweepConfig,
    combos: &[(AttributionConfig, Option<usize>)],
) -> DocOutcome {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut degenerate = 0;
    let embedded = match oracle.embed(&doc.text) {
        Ok(e) => e,
        Err(e) => {
            for (c, n) in combos {
                failures.push(SweepFailure {
                    document_id: doc.id.clone(),
                    method: c.method,
                    baseline: c.baseline,
                    n: *n,
                    message: e.to_string(),
                });
            }
            return (rows, failures, 0);
        }
    };
    for (c, n) in combos {
        let cell = (|| -> Result<(Vec<SweepRow>, bool), FaithfulnessError> {
            let a = attribute(oracle, &embedded, doc.target, c)?;
            let (ae, degen) = match approximation_error(&a) {
                Ok(v) => (Some(v), false),
                Err(FaithfulnessError::DegenerateEndpoints) => (None, true),
                Err(e) => return Err(e),
            };
            let mut out = Vec::new();
            for &f in cfg.grid.values() {
                let sel = select_top_fraction(&a.scores, &embedded.tokens, f, cfg.level);
                let x = &embedded.x;
                let t = &embedded.tokens;
                let c_f = comprehensiveness_of(oracle, x, t, a.f_x, &sel, doc.target, cfg.removal)?;
                let s_f = sufficiency_of(oracle, x, t, a.f_x, &sel, doc.target, cfg.removal)?;
                if f == 0.0 {
                    assert_eq!(c_f, 0.0, "C_0 must vanish");
                }
                if f == 1.0 {
                    assert_eq!(s_f, 0.0, "S_1 must vanish");
                }
                out.push(SweepRow {
                    document_id: doc.id.clone(),
                    method: c.method,
                    baseline: c.baseline,
                    n: *n,
                    f,
                    c_f,
                    s_f,
                    ae,
                    token_count: t.len(),
                });
            }
            Ok((out, degen))
        })();
        match cell {
            Ok((r, degen)) => {
                rows.extend(r);
                degenerate += degen as usize;
            }
            Err(e) => failures.push(SweepFailure {
                document_id: doc.id.clone(),
                method: c.method,
                baseline: c.baseline,
                n: *n,
                message: e.to_string(),
            }),
        }
    }
    (rows, failures, degenerate)
}

/// Runs the full cross product. Documents are spread over `cfg.threads`
/// workers, each with its own oracle from `make_oracle`; the result order
/// does not depend on scheduling. Per-cell failures are recorded and
/// skipped.
pub fn sweep<F>(docs: &[SweepDocument], cfg: &SweepConfig, make_oracle: F) -> Result<SweepResult, FaithfulnessError>
where
    F: Fn() -> Result<Box<dyn GradientOracle>, OracleError> + Sync,
{
    if docs.is_empty() {
        return Err(FaithfulnessError::InvalidSweep("corpus is empty".into()));
    }
    cfg.validate(make_oracle()?.as_ref())?;
    let combos = cfg.combinations();
    let outcomes = map_ordered(
        docs,
        cfg.threads,
        || make_oracle().map_err(|e| e.to_string()),
        |oracle, _, doc| Ok::<_, String>(run_document(oracle.as_mut(), doc, cfg, &combos)),
    );
    let mut result = SweepResult::default();
    for (doc, out) in docs.iter().zip(outcomes) {
        match out {
            Ok((rows, failures, degen)) => {
                result.rows.extend(rows);
                result.failures.extend(failures);
                result.degenerate_ae += degen;
            }
            Err(message) => {
                for (c, n) in &combos {
                    result.failures.push(SweepFailure {
                        document_id: doc.id.clone(),
                        method: c.method,
                        baseline: c.baseline,
                        n: *n,
                        message: message.clone(),
                    });
                }
            }
        }
    }
    Ok(result)
}

/// Samples of `C_f` and `S_f` across the corpus for one setting.
#[derive(Debug, Clone, PartialEq)]
pub struct FaithfulnessCurve {
    pub method: Method,
    pub baseline: BaselineStrategy,
    pub n: Option<usize>,
    pub fractions: Vec<f64>,
    pub comprehensiveness: Vec<Vec<f64>>,
    pub sufficiency: Vec<Vec<f64>>,
    pub ae: Vec<f64>,
}

impl FaithfulnessCurve {
    pub fn mean_comprehensiveness(&self) -> Vec<f64> {
        self.comprehensiveness.iter().map(|v| crate::stats::mean(v)).collect()
    }

    pub fn mean_sufficiency(&self) -> Vec<f64> {
        self.sufficiency.iter().map(|v| crate::stats::mean(v)).collect()
    }
}

/// Groups rows into one curve per (method, baseline, N).
pub fn curves(rows: &[SweepRow]) -> Vec<FaithfulnessCurve> {
    let key = |r: &SweepRow| (r.method.name(), r.baseline.name(), r.n);
    let mut groups: BTreeMap<(&str, &str, Option<usize>), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(key(r)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let mut fractions: Vec<f64> = rs.iter().map(|r| r.f).collect();
            fractions.sort_by(f64::total_cmp);
            fractions.dedup();
            let at = |f: f64, pick: fn(&SweepRow) -> f64| {
                rs.iter().filter(|r| r.f == f).map(|r| pick(r)).collect::<Vec<_>>()
            };
            let mut ae: BTreeMap<&str, f64> = BTreeMap::new();
            for r in &rs {
                if let Some(v) = r.ae {
                    ae.insert(&r.document_id, v);
                }
            }
            FaithfulnessCurve {
                method: rs[0].method,
                baseline: rs[0].baseline,
                n: rs[0].n,
                comprehensiveness: fractions.iter().map(|&f| at(f, |r| r.c_f)).collect(),
                sufficiency: fractions.iter().map(|&f| at(f, |r| r.s_f)).collect(),
                fractions,
                ae: ae.into_values().collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub baseline: BaselineStrategy,
    pub n: Option<usize>,
    /// Empty for the AE rows.
    pub f: Option<f64>,
    pub metric: &'static str,
    pub count: usize,
    pub mean: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    pub outliers: usize,
}

impl SummaryRow {
    fn new(c: &FaithfulnessCurve, f: Option<f64>, metric: &'static str, samples: &[f64]) -> Self {
        let q = Quartiles::of(samples);
        Self {
            method: c.method,
            baseline: c.baseline,
            n: c.n,
            f,
            metric,
            count: q.count,
            mean: q.mean,
            q25: q.q25,
            median: q.median,
            q75: q.q75,
            lower_fence: q.lower_fence,
            upper_fence: q.upper_fence,
            outliers: q.outliers,
        }
    }
}

/// Quartile rows for `c_f` and `s_f` at every f and for `ae`. The trivial
/// `C_0` and `S_1` samples are left out.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for c in curves(rows) {
        for (k, &f) in c.fractions.iter().enumerate() {
            if f != 0.0 {
                out.push(SummaryRow::new(&c, Some(f), "c_f", &c.comprehensiveness[k]));
            }
            if f != 1.0 {
                out.push(SummaryRow::new(&c, Some(f), "s_f", &c.sufficiency[k]));
            }
        }
        out.push(SummaryRow::new(&c, None, "ae", &c.ae));
    }
    out
}

fn write_all<T: Serialize, W: Write>(items: &[T], w: W) -> Result<(), FaithfulnessError> {
    let mut csv = csv::Writer::from_writer(w);
    for it in items {
        csv.serialize(it)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_rows_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<(), FaithfulnessError> {
    write_all(rows, w)
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], w: W) -> Result<(), FaithfulnessError> {
    write_all(rows, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchConfig, ModelParams};
    use crate::oracle::BuiltinOracle;
    use crate::tokenize::{Tokenizer, Vocab};
    use std::sync::Arc;

    fn setup() -> (Arc<ModelParams>, Vec<SweepDocument>) {
        let texts = ["a good day", "not a bad film at all", "fine"];
        let vocab = Vocab::build(&Tokenizer::default(), texts);
        let p = Arc::new(ModelParams::init(ArchConfig::default(), vocab, 11).unwrap());
        let docs = texts
            .iter()
            .enumerate()
            .map(|(i, t)| SweepDocument {
                id: format!("d{i}"),
                text: t.to_string(),
                target: Target::Scalar,
            })
            .collect();
        (p, docs)
    }

    fn csv_of(r: &SweepResult) -> String {
        let mut buf = Vec::new();
        write_rows_csv(&r.rows, &mut buf).unwrap();
        write_summary_csv(&summarize(&r.rows), &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn identity_grid_single_document() {
        let (p, docs) = setup();
        let cfg = SweepConfig {
            grid: FractionGrid::new(vec![0.0, 1.0]).unwrap(),
            steps: vec![20],
            ..SweepConfig::default()
        };
        let r = sweep(&docs[..1], &cfg, || {
            Ok(Box::new(BuiltinOracle::from_arc(p.clone())) as Box<dyn GradientOracle>)
        })
        .unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.rows[0].c_f, 0.0);
        assert_eq!(r.rows[1].s_f, 0.0);
        assert_eq!(r.rows[0].s_f, r.rows[1].c_f);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let (p, docs) = setup();
        let base = SweepConfig {
            methods: vec![Method::Ig, Method::GradShap, Method::DeepLift],
            baselines: vec![BaselineStrategy::Zero, BaselineStrategy::Mask],
            steps: vec![10, 30],
            gradshap: GradShapConfig {
                n_samples: 5,
                ..GradShapConfig::default()
            },
            ..SweepConfig::default()
        };
        let run = |threads| {
            let cfg = SweepConfig {
                threads,
                ..base.clone()
            };
            sweep(&docs, &cfg, || {
                Ok(Box::new(BuiltinOracle::from_arc(p.clone())) as Box<dyn GradientOracle>)
            })
            .unwrap()
        };
        let a = run(1);
        let b = run(3);
        assert!(a.failures.is_empty());
        // ig x 2 baselines x 2 N + gradshap x 2 + deeplift x 2 = 8 settings, 12 fractions, 3 docs
        assert_eq!(a.rows.len(), 8 * 12 * 3);
        assert_eq!(csv_of(&a), csv_of(&b));
        assert!(csv_of(&a).starts_with("document_id,method,baseline,n,f,c_f,s_f,ae,token_count\n"));
    }

    #[test]
    fn invalid_combination_rejected_up_front() {
        let (_, docs) = setup();
        let cfg = SweepConfig {
            methods: vec![Method::DeepLift],
            ..SweepConfig::default()
        };
        let err = sweep(&docs, &cfg, || {
            Ok(Box::new(crate::oracle::fixtures::SumOracle::new(2)) as Box<dyn GradientOracle>)
        });
        assert!(matches!(err, Err(FaithfulnessError::InvalidSweep(_))));
    }

    #[test]
    fn per_document_failures_are_recorded() {
        let (p, mut docs) = setup();
        docs.push(SweepDocument {
            id: "empty".into(),
            text: "   ".into(),
            target: Target::Scalar,
        });
        docs.push(SweepDocument {
            id: "badtarget".into(),
            text: "fine".into(),
            target: Target::Class(3),
        });
        let cfg = SweepConfig {
            steps: vec![5],
            ..SweepConfig::default()
        };
        let r = sweep(&docs, &cfg, || {
            Ok(Box::new(BuiltinOracle::from_arc(p.clone())) as Box<dyn GradientOracle>)
        })
        .unwrap();
        assert_eq!(r.failures.len(), 2);
        assert_eq!(r.rows.len(), 3 * 12);
        let s = summarize(&r.rows);
        let c = s.iter().find(|r| r.metric == "c_f").unwrap();
        assert_eq!(c.count, 3);
    }
}
