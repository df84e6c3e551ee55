//! Place database with exact nearest-neighbour retrieval and the retrieval
//! metrics (recall@N, maxF1).

use std::collections::HashMap;

use crate::encoder::Descriptor;
use crate::error::{Error, Result};

/// Distance in metres under which a retrieved place counts as correct.
pub const TRUE_POSITIVE_RADIUS_M: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PlaceRecord {
    pub id: u64,
    pub descriptor: Descriptor,
    pub position: [f64; 2],
    pub heading_deg: Option<f64>,
    /// Free-form origin tag (frame index, sequence name). Not persisted.
    pub source: String,
}

impl PlaceRecord {
    pub fn new(id: u64, descriptor: Descriptor, position: [f64; 2]) -> Self {
        Self {
            id,
            descriptor,
            position,
            heading_deg: None,
            source: String::new(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct PlaceDb {
    records: Vec<PlaceRecord>,
    by_id: HashMap<u64, usize>,
    dim: Option<usize>,
}

impl PlaceDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn records(&self) -> &[PlaceRecord] {
        &self.records
    }

    pub fn get(&self, id: u64) -> Option<&PlaceRecord> {
        self.by_id.get(&id).map(|i| &self.records[*i])
    }

    /// Smallest id not yet in use.
    pub fn next_id(&self) -> u64 {
        self.records.iter().map(|r| r.id + 1).max().unwrap_or(0)
    }

    /// Inserts a record. The database is left untouched on error.
    pub fn add(&mut self, record: PlaceRecord) -> Result<u64> {
        let dim = record.descriptor.dim();
        if let Some(expected) = self.dim {
            if dim != expected {
                return Err(Error::dims(expected, dim));
            }
        }
        if self.by_id.contains_key(&record.id) {
            return Err(Error::DuplicateId(record.id));
        }
        if record.descriptor.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        self.dim = Some(dim);
        let id = record.id;
        self.by_id.insert(id, self.records.len());
        self.records.push(record);
        Ok(id)
    }

    /// Exact top-`k` by Euclidean distance, ties to the smaller id.
    pub fn query(&self, d: &Descriptor, k: usize) -> Result<QueryResult> {
        if self.records.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        if k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        let dim = self.dim.unwrap_or(0);
        if d.dim() != dim {
            return Err(Error::dims(dim, d.dim()));
        }
        let mut scored: Vec<(f64, u64)> = self
            .records
            .iter()
            .map(|r| (d.distance(&r.descriptor), r.id))
            .collect();
        let cmp = |a: &(f64, u64), b: &(f64, u64)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(QueryResult {
            ids: scored.iter().map(|s| s.1).collect(),
            distances: scored.iter().map(|s| s.0).collect(),
            correct: None,
            has_match: None,
        })
    }

    /// Queries and labels the candidates against the query's true position.
    pub fn query_with_truth(&self, d: &Descriptor, k: usize, position: [f64; 2]) -> Result<QueryResult> {
        let mut res = self.query(d, k)?;
        res.label(self, position);
        Ok(res)
    }
}

fn planar_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub ids: Vec<u64>,
    pub distances: Vec<f64>,
    /// Per candidate: within the true-positive radius of the query.
    pub correct: Option<Vec<bool>>,
    /// Whether any database record lies within the radius, retrieved or not.
    pub has_match: Option<bool>,
}

impl QueryResult {
    pub fn label(&mut self, db: &PlaceDb, position: [f64; 2]) {
        let within = |p: [f64; 2]| planar_distance(p, position) <= TRUE_POSITIVE_RADIUS_M;
        self.correct = Some(
            self.ids
                .iter()
                .map(|id| db.get(*id).is_some_and(|r| within(r.position)))
                .collect(),
        );
        self.has_match = Some(db.records.iter().any(|r| within(r.position)));
    }

    pub fn top1_distance(&self) -> Option<f64> {
        self.distances.first().copied()
    }

    fn flags(&self) -> Result<&[bool]> {
        self.correct.as_deref().ok_or(Error::MissingGroundTruth)
    }

    fn matchable(&self) -> Result<bool> {
        let flags = self.flags()?;
        Ok(self.has_match.unwrap_or_else(|| flags.iter().any(|f| *f)))
    }
}

/// Fraction of matchable queries whose top-`n` holds a correct candidate.
/// Queries with no correct place anywhere in the database are excluded.
pub fn recall_at_n(results: &[QueryResult], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be >= 1".into()));
    }
    let mut total = 0usize;
    let mut hits = 0usize;
    for r in results {
        let flags = r.flags()?;
        if !r.matchable()? {
            continue;
        }
        total += 1;
        if flags.iter().take(n).any(|f| *f) {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::UndefinedRecall("no query has a correct match in the database".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Number of queries excluded from recall for lacking any correct match.
pub fn unmatched_queries(results: &[QueryResult]) -> Result<usize> {
    let mut n = 0;
    for r in results {
        if !r.matchable()? {
            n += 1;
        }
    }
    Ok(n)
}

/// Maximum F1 over top-1 distance thresholds, with the maximising threshold
/// (the smallest one on ties).
pub fn max_f1(results: &[QueryResult]) -> Result<(f64, f64)> {
    let mut top: Vec<(f64, bool)> = Vec::with_capacity(results.len());
    let mut positives = 0usize;
    for r in results {
        let flags = r.flags()?;
        if r.matchable()? {
            positives += 1;
        }
        if let (Some(d), Some(c)) = (r.top1_distance(), flags.first()) {
            top.push((d, *c));
        }
    }
    if positives == 0 || !top.iter().any(|t| t.1) {
        return Err(Error::UndefinedRecall("no query has a correct top-1 match".into()));
    }
    top.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = (0.0f64, top[0].0);
    let (mut recognized, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < top.len() {
        let tau = top[i].0;
        while i < top.len() && top[i].0 == tau {
            recognized += 1;
            tp += top[i].1 as usize;
            i += 1;
        }
        if tp == 0 {
            continue;
        }
        let precision = tp as f64 / recognized as f64;
        let recall = tp as f64 / positives as f64;
        let f1 = 2.0 * precision * recall / (precision + recall);
        if f1 > best.0 {
            best = (f1, tau);
        }
    }
    Ok(best)
}
