//! Retrieval and classification metrics, and the store × query benchmark.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SegmentedSequence;
use crate::querying::{filter_query_embeddings, full_multimodal_query, QueryEmbedding};
use crate::search::{search_one_stage, search_two_stage, SearchParams, SearchResult};
use crate::store::Index;

pub const NDCG_K: usize = 5;
pub const RECALL_K: usize = 1;

/// One relevant fragment per query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    map: BTreeMap<String, String>,
}

impl Qrels {
    /// Parses `query_id TAB fragment_id` lines. Blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::ParseError {
                line: line_no,
                message,
            };
            let mut parts = line.split('\t');
            let (Some(q), Some(f), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(parse_err("expected `query_id<TAB>fragment_id`".into()));
            };
            let (q, f) = (q.trim(), f.trim());
            if q.is_empty() || f.is_empty() {
                return Err(parse_err("empty field".into()));
            }
            if map.insert(q.to_string(), f.to_string()).is_some() {
                return Err(parse_err(format!("second judgment for query {q}")));
            }
        }
        Ok(Self { map })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, query_id: impl Into<String>, fragment_id: impl Into<String>) {
        self.map.insert(query_id.into(), fragment_id.into());
    }

    pub fn relevant(&self, query_id: &str) -> Option<&str> {
        self.map.get(query_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(q, f)| (q.as_str(), f.as_str()))
    }

    pub fn to_tsv(&self) -> String {
        self.iter().map(|(q, f)| format!("{q}\t{f}\n")).collect()
    }
}

/// 1-based rank of `relevant` in the result list.
pub fn rank_of(result: &SearchResult, relevant: &str) -> Option<usize> {
    result.fragment_ids().position(|f| f == relevant).map(|i| i + 1)
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidK(k));
    }
    Ok(())
}

/// Binary-gain NDCG with a single relevant item: `1/log2(r+1)` for `r <= k`.
pub fn ndcg_from_rank(rank: Option<usize>, k: usize) -> Result<f64> {
    check_k(k)?;
    Ok(match rank {
        Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    })
}

pub fn recall_from_rank(rank: Option<usize>, k: usize) -> Result<f64> {
    check_k(k)?;
    Ok(match rank {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    })
}

pub fn ndcg_at_k(result: &SearchResult, relevant: &str, k: usize) -> Result<f64> {
    ndcg_from_rank(rank_of(result, relevant), k)
}

pub fn recall_at_k(result: &SearchResult, relevant: &str, k: usize) -> Result<f64> {
    recall_from_rank(rank_of(result, relevant), k)
}

/// Fraction of rows whose true class is among the `k` highest scores.
/// Ties rank the lower index first.
pub fn top_k_accuracy(scores: &[Vec<f64>], truth: &[usize], k: usize) -> Result<f64> {
    check_k(k)?;
    if scores.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            actual: scores.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut hits = 0usize;
    for (row, &t) in scores.iter().zip(truth) {
        if t >= row.len() {
            return Err(Error::InvalidParameter(format!("class {t} out of range")));
        }
        let better = row
            .iter()
            .enumerate()
            .filter(|&(j, &s)| s > row[t] || (s == row[t] && j < t))
            .count();
        if better < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub micro: f64,
    pub macro_: f64,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Micro and macro F1 over per-item label sets. Macro averages over labels
/// that occur in either predictions or truth.
pub fn multilabel_f1(pred: &[Vec<usize>], truth: &[Vec<usize>], n_labels: usize) -> Result<F1Scores> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    let mut counts = vec![(0usize, 0usize, 0usize); n_labels];
    for (p, t) in pred.iter().zip(truth) {
        for l in p.iter().chain(t) {
            if *l >= n_labels {
                return Err(Error::InvalidParameter(format!("label {l} out of range")));
            }
        }
        for (l, c) in counts.iter_mut().enumerate() {
            match (p.contains(&l), t.contains(&l)) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                (false, true) => c.2 += 1,
                (false, false) => {}
            }
        }
    }
    let (tp, fp, fn_) = counts
        .iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let active: Vec<f64> = counts
        .iter()
        .filter(|c| c.0 + c.1 + c.2 > 0)
        .map(|&(tp, fp, fn_)| f1(tp, fp, fn_))
        .collect();
    let macro_ = if active.is_empty() {
        0.0
    } else {
        active.iter().sum::<f64>() / active.len() as f64
    };
    Ok(F1Scores {
        micro: f1(tp, fp, fn_),
        macro_,
    })
}

/// Multiclass F1: each item contributes one predicted and one true label.
pub fn multiclass_f1(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<F1Scores> {
    let p: Vec<Vec<usize>> = pred.iter().map(|&c| vec![c]).collect();
    let t: Vec<Vec<usize>> = truth.iter().map(|&c| vec![c]).collect();
    multilabel_f1(&p, &t, n_classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoreMode {
    FullOneStage,
    PooledTwoStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    Full,
    Filtered,
}

impl StoreMode {
    pub fn name(self) -> &'static str {
        match self {
            StoreMode::FullOneStage => "full-one-stage",
            StoreMode::PooledTwoStage => "pooled-two-stage",
        }
    }
}

impl QueryMode {
    pub fn name(self) -> &'static str {
        match self {
            QueryMode::Full => "full",
            QueryMode::Filtered => "filtered",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub store: StoreMode,
    pub query: QueryMode,
    pub params: SearchParams,
}

impl BenchConfig {
    /// The four store × query combinations.
    pub fn all(params: SearchParams) -> Vec<BenchConfig> {
        let mut v = Vec::with_capacity(4);
        for store in [StoreMode::FullOneStage, StoreMode::PooledTwoStage] {
            for query in [QueryMode::Full, QueryMode::Filtered] {
                v.push(BenchConfig { store, query, params });
            }
        }
        v
    }

    /// `all`, or a comma list of `store/query` pairs such as
    /// `pooled-two-stage/filtered`.
    pub fn parse_list(spec: &str, params: SearchParams) -> Result<Vec<BenchConfig>> {
        if spec.trim() == "all" {
            return Ok(Self::all(params));
        }
        let mut out = Vec::new();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (s, q) = item
                .split_once('/')
                .ok_or_else(|| Error::InvalidParameter(format!("config `{item}`: expected store/query")))?;
            let store = match s {
                "full-one-stage" => StoreMode::FullOneStage,
                "pooled-two-stage" => StoreMode::PooledTwoStage,
                _ => return Err(Error::InvalidParameter(format!("unknown store `{s}`"))),
            };
            let query = match q {
                "full" => QueryMode::Full,
                "filtered" => QueryMode::Filtered,
                _ => return Err(Error::InvalidParameter(format!("unknown query mode `{q}`"))),
            };
            out.push(BenchConfig { store, query, params });
        }
        if out.is_empty() {
            return Err(Error::InvalidParameter("no configs given".into()));
        }
        Ok(out)
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.store.name(), self.query.name())
    }

    fn query_embedding(&self, seq: &SegmentedSequence) -> Result<QueryEmbedding> {
        match self.query {
            QueryMode::Full => full_multimodal_query(seq),
            QueryMode::Filtered => filter_query_embeddings(seq),
        }
    }

    /// Runs one query. At least [`NDCG_K`] results are requested.
    pub fn search(&self, index: &Index, seq: &SegmentedSequence) -> Result<SearchResult> {
        let q = self.query_embedding(seq)?;
        let n2 = self.params.n2.max(NDCG_K);
        match self.store {
            StoreMode::FullOneStage => search_one_stage(index, &q, n2),
            StoreMode::PooledTwoStage => {
                let params = SearchParams {
                    n2,
                    n1: self.params.n1.max(n2),
                    ..self.params
                };
                search_two_stage(index, &q, &params)
            }
        }
    }
}

/// An embedded benchmark query, labeled so both query modes can be derived.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchQuery {
    pub id: String,
    pub embedded: SegmentedSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigReport {
    pub config: BenchConfig,
    pub label: String,
    pub query_ids: Vec<String>,
    pub ndcg_at_5: Vec<f64>,
    pub recall_at_1: Vec<f64>,
    pub latency_us: Vec<u64>,
    pub stage1_us: Vec<u64>,
    pub stage2_us: Vec<u64>,
    pub mean_ndcg_at_5: f64,
    pub mean_recall_at_1: f64,
    pub mean_latency_cs: f64,
    pub median_latency_cs: f64,
}

/// Externally obtained numbers shown next to measured rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub store: String,
    pub query: String,
    pub ndcg_at_5: f64,
    pub recall_at_1: f64,
    pub avg_time_cs: f64,
}

impl ReferenceRow {
    fn new(store: &str, query: &str, ndcg_at_5: f64, recall_at_1: f64, avg_time_cs: f64) -> Self {
        Self {
            store: store.into(),
            query: query.into(),
            ndcg_at_5,
            recall_at_1,
            avg_time_cs,
        }
    }
}

/// Published full-scale results, in percent and centiseconds. The last row
/// is a single-vector baseline computed outside this engine.
pub fn reference_rows() -> Vec<ReferenceRow> {
    vec![
        ReferenceRow::new("Full", "Full", 33.92, 26.90, 67.92),
        ReferenceRow::new("Full", "Filtered", 44.88, 38.41, 32.26),
        ReferenceRow::new("Pooled", "Full", 21.50, 17.39, 11.14),
        ReferenceRow::new("Pooled", "Filtered", 27.61, 23.87, 4.66),
        ReferenceRow::new("CLIP", "CLIP", 2.66, 1.49, 0.39),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub doc_count: usize,
    pub query_count: usize,
    pub rows: Vec<ConfigReport>,
    pub reference: Vec<ReferenceRow>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Median of integer samples; the mean of the middle pair for even counts.
pub fn median_u64(v: &[u64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        (s[n / 2 - 1] as f64 + s[n / 2] as f64) / 2.0
    }
}

const US_PER_CS: f64 = 10_000.0;

/// Evaluates every judged query under every config.
///
/// Each judged query must have an embedding and its relevant fragment must
/// be in the index; otherwise `MissingEmbedding` names the missing id.
/// Queries without a judgment are ignored.
pub fn run_benchmark(
    index: &Index,
    queries: &[BenchQuery],
    qrels: &Qrels,
    configs: &[BenchConfig],
) -> Result<BenchReport> {
    let by_id: BTreeMap<&str, &BenchQuery> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut judged = Vec::with_capacity(qrels.len());
    for (qid, frag) in qrels.iter() {
        let q = by_id
            .get(qid)
            .ok_or_else(|| Error::MissingEmbedding(format!("query {qid}")))?;
        if index.doc_id(frag).is_none() {
            return Err(Error::MissingEmbedding(format!("fragment {frag}")));
        }
        judged.push((*q, frag));
    }

    let mut rows = Vec::with_capacity(configs.len());
    for cfg in configs {
        let mut r = ConfigReport {
            config: *cfg,
            label: cfg.label(),
            query_ids: Vec::with_capacity(judged.len()),
            ndcg_at_5: Vec::with_capacity(judged.len()),
            recall_at_1: Vec::with_capacity(judged.len()),
            latency_us: Vec::with_capacity(judged.len()),
            stage1_us: Vec::with_capacity(judged.len()),
            stage2_us: Vec::with_capacity(judged.len()),
            mean_ndcg_at_5: 0.0,
            mean_recall_at_1: 0.0,
            mean_latency_cs: 0.0,
            median_latency_cs: 0.0,
        };
        for (q, frag) in &judged {
            let res = cfg.search(index, &q.embedded)?;
            let rank = rank_of(&res, frag);
            r.query_ids.push(q.id.clone());
            r.ndcg_at_5.push(ndcg_from_rank(rank, NDCG_K)?);
            r.recall_at_1.push(recall_from_rank(rank, RECALL_K)?);
            r.latency_us.push(res.timings.total_us);
            r.stage1_us.push(res.timings.stage1_us);
            r.stage2_us.push(res.timings.stage2_us);
        }
        r.mean_ndcg_at_5 = mean(&r.ndcg_at_5);
        r.mean_recall_at_1 = mean(&r.recall_at_1);
        let lat: Vec<f64> = r.latency_us.iter().map(|&u| u as f64).collect();
        r.mean_latency_cs = mean(&lat) / US_PER_CS;
        r.median_latency_cs = median_u64(&r.latency_us) / US_PER_CS;
        rows.push(r);
    }
    Ok(BenchReport {
        doc_count: index.doc_count(),
        query_count: judged.len(),
        rows,
        reference: reference_rows(),
    })
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table; metrics in percent, times in centiseconds.
    pub fn render_table(&self) -> String {
        let header = ["Store", "Query", "NDCG@5", "R@1", "Avg time (cs)", "Median (cs)"];
        let mut lines: Vec<[String; 6]> = Vec::new();
        for r in &self.rows {
            lines.push([
                r.config.store.name().to_string(),
                r.config.query.name().to_string(),
                format!("{:.2}", 100.0 * r.mean_ndcg_at_5),
                format!("{:.2}", 100.0 * r.mean_recall_at_1),
                format!("{:.2}", r.mean_latency_cs),
                format!("{:.2}", r.median_latency_cs),
            ]);
        }
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for l in &lines {
            for (w, c) in widths.iter_mut().zip(l) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let row = |out: &mut String, cells: &[&str]| {
            let mut parts = Vec::with_capacity(cells.len());
            for (i, c) in cells.iter().enumerate() {
                if i < 2 {
                    parts.push(format!("{c:<w$}", w = widths[i]));
                } else {
                    parts.push(format!("{c:>w$}", w = widths[i]));
                }
            }
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        let _ = writeln!(out, "{} docs, {} queries", self.doc_count, self.query_count);
        row(&mut out, &header);
        for l in &lines {
            let cells: Vec<&str> = l.iter().map(String::as_str).collect();
            row(&mut out, &cells);
        }
        if !self.reference.is_empty() {
            let _ = writeln!(out, "\nreference (full scale):");
            for r in &self.reference {
                let _ = writeln!(
                    out,
                    "  {:<8} {:<9} {:>6.2} {:>6.2} {:>6.2}",
                    r.store, r.query, r.ndcg_at_5, r.recall_at_1, r.avg_time_cs
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ndcg_hand_values() {
        assert_eq!(ndcg_from_rank(Some(1), 5).unwrap(), 1.0);
        assert!((ndcg_from_rank(Some(4), 5).unwrap() - 0.43068).abs() < 1e-5);
        assert_eq!(ndcg_from_rank(Some(6), 5).unwrap(), 0.0);
        assert_eq!(ndcg_from_rank(None, 5).unwrap(), 0.0);
        assert!(matches!(ndcg_from_rank(Some(1), 0), Err(Error::InvalidK(0))));
    }

    #[test]
    fn recall_hand_values() {
        assert_eq!(recall_from_rank(Some(1), 1).unwrap(), 1.0);
        assert_eq!(recall_from_rank(Some(2), 1).unwrap(), 0.0);
        assert!(matches!(recall_from_rank(None, 0), Err(Error::InvalidK(0))));
    }

    #[test]
    fn qrels_parse() {
        let q = Qrels::parse("q1\tPage#0\n\nq2\tPage#3\n").unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q.relevant("q2"), Some("Page#3"));
        assert_eq!(Qrels::parse(&q.to_tsv()).unwrap(), q);
    }

    #[test]
    fn qrels_errors_carry_line() {
        assert!(matches!(Qrels::parse("q1\tA\nbroken\n"), Err(Error::ParseError { line: 2, .. })));
        assert!(matches!(Qrels::parse("q1\tA\tB\n"), Err(Error::ParseError { line: 1, .. })));
        assert!(matches!(Qrels::parse("q\tA\nq\tB\n"), Err(Error::ParseError { line: 2, .. })));
    }

    #[test]
    fn top_k_accuracy_counts() {
        let scores = vec![vec![0.1, 0.9, 0.3], vec![0.5, 0.2, 0.4], vec![0.3, 0.3, 0.1]];
        let truth = [1, 2, 1];
        assert!((top_k_accuracy(&scores, &truth, 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((top_k_accuracy(&scores, &truth, 2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn f1_counts() {
        let s = multiclass_f1(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
        assert!((s.micro - 2.0 / 3.0).abs() < 1e-12);
        // class 0: tp 1, fn 1 -> 2/3; class 1: tp 1, fp 1 -> 2/3
        assert!((s.macro_ - 2.0 / 3.0).abs() < 1e-12);
        let s = multilabel_f1(&[vec![0, 1], vec![]], &[vec![0], vec![1]], 3).unwrap();
        // tp 1, fp 1, fn 1
        assert!((s.micro - 0.5).abs() < 1e-12);
    }

    #[test]
    fn config_list() {
        let p = SearchParams::default();
        let all = BenchConfig::parse_list("all", p).unwrap();
        assert_eq!(all.len(), 4);
        let labels: Vec<String> = all.iter().map(|c| c.label()).collect();
        assert_eq!(
            labels,
            [
                "full-one-stage/full",
                "full-one-stage/filtered",
                "pooled-two-stage/full",
                "pooled-two-stage/filtered"
            ]
        );
        let one = BenchConfig::parse_list("pooled-two-stage/filtered", p).unwrap();
        assert_eq!(one[0].store, StoreMode::PooledTwoStage);
        assert!(BenchConfig::parse_list("pooled/x", p).is_err());
    }

    #[test]
    fn median() {
        assert_eq!(median_u64(&[3, 1, 2]), 2.0);
        assert_eq!(median_u64(&[4, 1, 2, 3]), 2.5);
        assert_eq!(median_u64(&[]), 0.0);
    }
}
