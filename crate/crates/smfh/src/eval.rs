//! Cross-modal retrieval evaluation: mAP, Precision@K, Recall@K, and curve
//! emission.
//!
//! Relevance is the shared-label rule: a database item is relevant to a query
//! iff their label vectors have positive inner product. Queries with no
//! relevant database item are excluded from the averages and counted in the
//! report.

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Dataset, LabelMatrix};
use crate::error::{Error, Result};
use crate::hashing::{encode, rank, BinaryCodes};
use crate::trainer::TrainedModel;

/// Which modality encodes the queries and which the database.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Direction {
    pub query_modality: usize,
    pub db_modality: usize,
}

impl Direction {
    /// Accepts `t2i` / `text2image` (modality 1 queries modality 0),
    /// `i2t` / `image2text` (0 queries 1), or the generic numeric form
    /// `QtoD`, e.g. `2to0`.
    pub fn parse(s: &str) -> Result<Direction> {
        match s {
            "t2i" | "text2image" | "text-to-image" => Ok(Direction {
                query_modality: 1,
                db_modality: 0,
            }),
            "i2t" | "image2text" | "image-to-text" => Ok(Direction {
                query_modality: 0,
                db_modality: 1,
            }),
            other => {
                let parts: Vec<&str> = other.split("to").collect();
                if parts.len() == 2 {
                    if let (Ok(q), Ok(d)) = (parts[0].parse(), parts[1].parse()) {
                        return Ok(Direction {
                            query_modality: q,
                            db_modality: d,
                        });
                    }
                }
                Err(Error::Invalid(format!(
                    "unrecognized direction {other:?}; use t2i, i2t, or QtoD (e.g. 1to0)"
                )))
            }
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}to{}", self.query_modality, self.db_modality)
    }
}

/// Where database codes come from: re-encoded through the database modality's
/// projection, or the binarized training codes stored in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DbCodeSource {
    #[default]
    Projected,
    Factorized,
}

/// Shared-label relevance judge between a query label set and a database
/// label set.
pub struct RelevanceJudge<'a> {
    query_labels: &'a LabelMatrix,
    db_labels: &'a LabelMatrix,
}

impl<'a> RelevanceJudge<'a> {
    pub fn new(query_labels: &'a LabelMatrix, db_labels: &'a LabelMatrix) -> Result<Self> {
        if query_labels.vocab_size() != db_labels.vocab_size() {
            return Err(Error::DimMismatch {
                context: "relevance judge".into(),
                expected: format!("label vocabulary {}", query_labels.vocab_size()),
                found: format!("{}", db_labels.vocab_size()),
            });
        }
        Ok(Self {
            query_labels,
            db_labels,
        })
    }

    pub fn relevant(&self, query: usize, db_item: usize) -> bool {
        self.query_labels.shared_labels(query, self.db_labels, db_item) > 0
    }

    /// Number of database items relevant to the query.
    pub fn total_relevant(&self, query: usize) -> usize {
        (0..self.db_labels.n_samples())
            .filter(|&j| self.relevant(query, j))
            .count()
    }
}

/// Fraction of the first k ranked items that are relevant.
pub fn precision_at_k(ranked_relevance: &[bool], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Invalid("precision@k requires k >= 1".into()));
    }
    if k > ranked_relevance.len() {
        return Err(Error::KTooLarge {
            k,
            n: ranked_relevance.len(),
        });
    }
    let hits = ranked_relevance[..k].iter().filter(|&&r| r).count();
    Ok(hits as f64 / k as f64)
}

/// Fraction of all relevant items found in the first k ranked items.
pub fn recall_at_k(ranked_relevance: &[bool], total_relevant: usize, k: usize) -> Result<f64> {
    if total_relevant == 0 {
        return Err(Error::NoRelevantItems);
    }
    if k > ranked_relevance.len() {
        return Err(Error::KTooLarge {
            k,
            n: ranked_relevance.len(),
        });
    }
    let hits = ranked_relevance[..k].iter().filter(|&&r| r).count();
    Ok(hits as f64 / total_relevant as f64)
}

/// Average precision over the top `cutoff` positions:
/// `sum of precision@k over relevant positions k <= cutoff, divided by
/// min(total relevant, cutoff)`. The denominator uses the relevant count of
/// the whole list, so a perfect prefix scores 1 even when more relevant items
/// exist past the cutoff.
pub fn average_precision(ranked_relevance: &[bool], cutoff: usize) -> Result<f64> {
    if ranked_relevance.is_empty() {
        return Err(Error::Invalid(
            "average precision of an empty ranking".into(),
        ));
    }
    if cutoff == 0 {
        return Err(Error::Invalid("average precision requires cutoff >= 1".into()));
    }
    let total_relevant = ranked_relevance.iter().filter(|&&r| r).count();
    if total_relevant == 0 {
        return Ok(0.0);
    }
    let top = cutoff.min(ranked_relevance.len());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, &rel) in ranked_relevance[..top].iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Ok(sum / total_relevant.min(cutoff) as f64)
}

/// Mean AP over queries that have at least one relevant item anywhere in
/// their ranking; queries without any are skipped, not scored zero.
pub fn mean_ap(queries: &[Vec<bool>], cutoff: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for q in queries {
        if q.iter().any(|&r| r) {
            sum += average_precision(q, cutoff)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoValidQueries);
    }
    Ok(sum / count as f64)
}

/// Precision/recall at one ranking depth.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CurvePoint {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Evaluation report for one retrieval direction.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Report {
    pub direction: String,
    pub map_cutoff: usize,
    pub mean_ap: f64,
    pub precision_at_100: f64,
    pub curves: Vec<CurvePoint>,
    pub n_queries: usize,
    /// Queries excluded because no database item shares a label with them.
    pub n_skipped: usize,
}

impl Report {
    /// CSV emission: `metric,direction,k,value` rows, then a summary block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,direction,k,value\n");
        out.push_str(&format!(
            "map,{},{},{}\n",
            self.direction, self.map_cutoff, self.mean_ap
        ));
        out.push_str(&format!(
            "precision,{},100,{}\n",
            self.direction, self.precision_at_100
        ));
        for c in &self.curves {
            out.push_str(&format!(
                "precision,{},{},{}\n",
                self.direction, c.k, c.precision
            ));
            out.push_str(&format!("recall,{},{},{}\n", self.direction, c.k, c.recall));
        }
        out.push_str(&format!("queries,{},,{}\n", self.direction, self.n_queries));
        out.push_str(&format!(
            "skipped_queries,{},,{}\n",
            self.direction, self.n_skipped
        ));
        out
    }
}

/// Evaluation settings: the mAP cutoff (100 by default), the curve depths,
/// and the database code source.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub map_cutoff: usize,
    pub ks: Vec<usize>,
    pub db_codes: DbCodeSource,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            map_cutoff: 100,
            ks: vec![1, 5, 10, 25, 50, 100],
            db_codes: DbCodeSource::Projected,
        }
    }
}

/// Runs one retrieval direction end to end: encode queries through the query
/// modality's projection, take database codes per `db_codes`, rank by Hamming
/// distance, judge relevance by shared labels, and aggregate the metrics.
pub fn evaluate_cross_modal(
    model: &TrainedModel,
    query_set: &Dataset,
    db_set: &Dataset,
    direction: Direction,
    opts: &EvalOptions,
) -> Result<Report> {
    let n_t = model.n_modalities();
    if direction.query_modality >= n_t || direction.db_modality >= n_t {
        return Err(Error::Invalid(format!(
            "direction {direction} out of range for {n_t} modalities"
        )));
    }
    let query_features = query_set.modality(direction.query_modality);
    let query_codes = encode(
        &model.modalities[direction.query_modality].projection,
        query_features,
    )?;
    let db_codes: BinaryCodes = match opts.db_codes {
        DbCodeSource::Projected => encode(
            &model.modalities[direction.db_modality].projection,
            db_set.modality(direction.db_modality),
        )?,
        DbCodeSource::Factorized => {
            if model.binary_codes.n_items() != db_set.n_samples() {
                return Err(Error::DimMismatch {
                    context: "factorized database codes".into(),
                    expected: format!("{} database items", db_set.n_samples()),
                    found: format!("{} training codes", model.binary_codes.n_items()),
                });
            }
            model.binary_codes.clone()
        }
    };

    let n_db = db_set.n_samples();
    let depth = opts
        .ks
        .iter()
        .copied()
        .chain([opts.map_cutoff])
        .max()
        .unwrap_or(opts.map_cutoff)
        .min(n_db);
    let judge = RelevanceJudge::new(query_set.labels(), db_set.labels())?;

    let rankings = rank_all(&query_codes, &db_codes, depth)?;

    let mut per_query: Vec<Option<(f64, f64, Vec<CurvePoint>)>> =
        Vec::with_capacity(query_set.n_samples());
    for (q, ranking) in rankings.iter().enumerate() {
        let total_relevant = judge.total_relevant(q);
        if total_relevant == 0 {
            per_query.push(None);
            continue;
        }
        let ranked_rel: Vec<bool> = ranking.iter().map(|&(idx, _)| judge.relevant(q, idx)).collect();
        // The ranking is truncated at `depth`, so pad the relevance list
        // conceptually: AP's denominator needs the corpus-wide count.
        let top = opts.map_cutoff.min(ranked_rel.len());
        let mut hits = 0usize;
        let mut ap_sum = 0.0;
        for (pos, &rel) in ranked_rel[..top].iter().enumerate() {
            if rel {
                hits += 1;
                ap_sum += hits as f64 / (pos + 1) as f64;
            }
        }
        let ap = ap_sum / total_relevant.min(opts.map_cutoff) as f64;
        let p100 = precision_at_k(&ranked_rel, 100.min(ranked_rel.len()))?;
        let curves = opts
            .ks
            .iter()
            .map(|&k| {
                let kk = k.min(ranked_rel.len());
                Ok(CurvePoint {
                    k,
                    precision: precision_at_k(&ranked_rel, kk)?,
                    recall: recall_at_k(&ranked_rel, total_relevant, kk)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        per_query.push(Some((ap, p100, curves)));
    }

    let scored: Vec<&(f64, f64, Vec<CurvePoint>)> = per_query.iter().flatten().collect();
    let n_skipped = per_query.len() - scored.len();
    if scored.is_empty() {
        return Err(Error::NoValidQueries);
    }
    let n = scored.len() as f64;
    let mean_ap = scored.iter().map(|s| s.0).sum::<f64>() / n;
    let precision_at_100 = scored.iter().map(|s| s.1).sum::<f64>() / n;
    let curves = opts
        .ks
        .iter()
        .enumerate()
        .map(|(ki, &k)| CurvePoint {
            k,
            precision: scored.iter().map(|s| s.2[ki].precision).sum::<f64>() / n,
            recall: scored.iter().map(|s| s.2[ki].recall).sum::<f64>() / n,
        })
        .collect();
    Ok(Report {
        direction: direction.to_string(),
        map_cutoff: opts.map_cutoff,
        mean_ap,
        precision_at_100,
        curves,
        n_queries: scored.len(),
        n_skipped,
    })
}

/// Ranks every query against the database, in parallel. Output order follows
/// query order, so results are deterministic regardless of thread count.
pub fn rank_all(
    queries: &BinaryCodes,
    database: &BinaryCodes,
    k: usize,
) -> Result<Vec<Vec<(usize, u32)>>> {
    if queries.bits() != database.bits() {
        return Err(Error::BitWidthMismatch {
            a: queries.bits(),
            b: database.bits(),
        });
    }
    (0..queries.n_items())
        .into_par_iter()
        .map(|q| rank(queries.code(q), queries.bits(), database, k))
        .collect()
}

/// Label matrix of randomly assigned single-label items, plus matching
/// random codes; the chance-level baseline for calibration tests.
pub fn random_codes<R: rand::Rng>(n_items: usize, bits: usize, rng: &mut R) -> BinaryCodes {
    let raw: Array2<u8> =
        Array2::from_shape_fn((bits, n_items), |_| if rng.random::<bool>() { 1 } else { 0 });
    BinaryCodes::from_fn(n_items, bits, |item, bit| raw[(bit, item)] == 1)
        .expect("bits >= 1")
}
