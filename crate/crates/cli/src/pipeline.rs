use std::collections::HashSet;

use docpipe_core::dedup::{sidecar_path, DedupDecision, DedupError, DedupIndex};
use docpipe_core::embedding::EmbeddingProvider;
use docpipe_core::ingest::{extract_main_content, load_sources, make_raw_document, Fetcher, RawDocument, SourceError};
use docpipe_core::store::{Collection, DocumentStore, NormalizedRecord, ReviewItem, ReviewStatus, StoreError};
use docpipe_core::structurer::{CandidateRecord, Structurer};
use docpipe_core::validator::{aggregate_run_stats, validate, ValidationReport, Verdict};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, PipelineConfig};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sources(#[from] SourceError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("dedup index: {0}")]
    Dedup(#[from] DedupError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Counters of one run. Contains no wall-clock values, so two runs over the
/// same inputs with a fixed clock serialize identically.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub sources: u64,
    pub fetched: u64,
    pub fetch_skips: u64,
    pub fetch_errors: u64,
    pub extraction_failures: u64,
    pub duplicates_discarded: u64,
    pub requeued: u64,
    pub processed: u64,
    pub accepted: u64,
    pub manual_review: u64,
    pub reprocess: u64,
    pub llm_calls: u64,
    pub reasks: u64,
    pub total_tokens: u64,
    pub total_latency_ms: u64,
    pub accepted_rate: f64,
    pub flagged_rate: f64,
    pub mean_tokens_per_object: f64,
    pub mean_latency_ms: f64,
    /// Per-document problems, in processing order.
    pub errors: Vec<String>,
}

impl RunStats {
    pub fn has_failures(&self) -> bool {
        !self.errors.is_empty()
    }
}

/// Raw documents that still need a verdict: no report yet, or a reprocess one.
fn pending_documents(store: &DocumentStore) -> Result<Vec<RawDocument>, StoreError> {
    let finished: HashSet<String> = store
        .scan::<ValidationReport>(Collection::Reports)?
        .into_iter()
        .filter(|r| r.verdict != Verdict::Reprocess)
        .map(|r| r.doc_id)
        .collect();
    let mut pending = Vec::new();
    for id in store.ids(Collection::Raw) {
        if !finished.contains(&id) {
            if let Some(doc) = store.get::<RawDocument>(Collection::Raw, &id)? {
                pending.push(doc);
            }
        }
    }
    Ok(pending)
}

/// Adds raw documents missing from the dedup index (a crash between the two writes).
fn reconcile_dedup(
    store: &DocumentStore,
    dedup: &mut DedupIndex,
    embedder: &dyn EmbeddingProvider,
    stats: &mut RunStats,
) -> Result<(), PipelineError> {
    for id in store.ids(Collection::Raw) {
        if dedup.contains(&id) {
            continue;
        }
        let Some(doc) = store.get::<RawDocument>(Collection::Raw, &id)? else { continue };
        match embedder.embed(&doc.raw_text) {
            Ok(v) => dedup.insert(&id, v)?,
            Err(e) => stats.errors.push(format!("{id}: embedding for dedup index: {e}")),
        }
    }
    Ok(())
}

/// Fetches every source and returns the documents that survive extraction and dedup.
fn collect(
    config: &PipelineConfig,
    store: &DocumentStore,
    dedup: &mut DedupIndex,
    embedder: &dyn EmbeddingProvider,
    clock: &dyn docpipe_core::clock::Clock,
    stats: &mut RunStats,
) -> Result<Vec<RawDocument>, PipelineError> {
    let sources = load_sources(&config.sources)?;
    stats.sources = sources.len() as u64;
    let fetcher = Fetcher::new(config.http.clone());
    let mut fresh = Vec::new();
    for source in &sources {
        let outcome = match fetcher.fetch(source) {
            Ok(outcome) => outcome,
            Err(e) => {
                stats.fetch_errors += 1;
                stats.errors.push(format!("source {}: {e}", source.source_id));
                continue;
            }
        };
        stats.fetch_skips += outcome.skips.len() as u64;
        for body in outcome.bodies {
            stats.fetched += 1;
            let extracted = match extract_main_content(&body.body, &body.media_type) {
                Ok(x) => x,
                Err(e) => {
                    stats.extraction_failures += 1;
                    stats.errors.push(format!("{}: extraction: {e}", body.locator));
                    continue;
                }
            };
            let doc = make_raw_document(source, &body.locator, extracted.title, extracted.text, clock);
            if store.contains(Collection::Raw, &doc.doc_id) {
                stats.duplicates_discarded += 1;
                continue;
            }
            let vector = match embedder.embed(&doc.raw_text) {
                Ok(v) => v,
                Err(e) => {
                    stats.errors.push(format!("{}: embedding: {e}", body.locator));
                    continue;
                }
            };
            if let DedupDecision::DuplicateOf { doc_id, similarity } = dedup.check_duplicate(&vector)? {
                log::info!("{} duplicates {doc_id} (cosine {similarity:.4})", body.locator);
                stats.duplicates_discarded += 1;
                continue;
            }
            store.put_raw(&doc)?;
            dedup.insert(&doc.doc_id, vector)?;
            fresh.push(doc);
        }
    }
    Ok(fresh)
}

/// One pass over every source: fetch, extract, dedup, validate and store.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunStats, PipelineError> {
    config.check()?;
    let schema = config.load_schema()?;
    let clock = config.clock();
    let embedder = config.embedder();
    let provider = config.provider(&schema)?;
    let store = DocumentStore::open(&config.store_root)?;
    let mut dedup = DedupIndex::open(
        &sidecar_path(&config.store_root),
        embedder.provider_id(),
        embedder.dim(),
        config.dedup_threshold,
    )?;

    let mut stats = RunStats::default();
    let mut queue = pending_documents(&store)?;
    stats.requeued = queue.len() as u64;
    reconcile_dedup(&store, &mut dedup, embedder.as_ref(), &mut stats)?;
    queue.extend(collect(config, &store, &mut dedup, embedder.as_ref(), clock.as_ref(), &mut stats)?);

    let mut structurer = Structurer::new(provider.as_ref(), &schema);
    structurer.prompt = config.prompt.clone();
    structurer.retry = config.retry.clone();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let results: Vec<(Option<CandidateRecord>, ValidationReport)> = pool.install(|| {
        queue
            .par_iter()
            .map(|doc| validate(doc, &structurer, embedder.as_ref(), &config.validation))
            .collect()
    });

    let mut reports = Vec::with_capacity(results.len());
    for (candidate, report) in results {
        store.upsert_report(&report)?;
        stats.llm_calls += report.cost.calls;
        stats.reasks += report.reasks as u64;
        match (report.verdict, candidate) {
            (Verdict::Accepted, Some(candidate)) => {
                let record = NormalizedRecord::from_candidate(
                    &candidate,
                    &report,
                    Some(config.validation.replica_temperature),
                    clock.now(),
                );
                if !store.contains(Collection::Normalized, &record.id()) {
                    store.put_normalized(&record, &schema)?;
                }
                stats.accepted += 1;
            }
            (Verdict::ManualReview, Some(candidate)) => {
                if !store.contains(Collection::Review, &report.doc_id) {
                    store.put_review(&ReviewItem {
                        doc_id: report.doc_id.clone(),
                        candidate,
                        report: report.clone(),
                        status: ReviewStatus::Pending,
                        resolution_note: None,
                        gate_violations: Vec::new(),
                    })?;
                }
                stats.manual_review += 1;
            }
            (Verdict::ManualReview, None) | (Verdict::Accepted, None) => {
                stats.manual_review += 1;
                stats.errors.push(format!("{}: no candidate: {}", report.doc_id, report.errors.join("; ")));
            }
            (Verdict::Reprocess, _) => {
                stats.reprocess += 1;
                stats.errors.push(format!("{}: reprocess: {}", report.doc_id, report.errors.join("; ")));
            }
        }
        reports.push(report);
    }
    stats.processed = reports.len() as u64;
    if let Ok(agg) = aggregate_run_stats(&reports) {
        stats.accepted_rate = agg.accepted_rate;
        stats.flagged_rate = agg.flagged_rate;
        stats.mean_tokens_per_object = agg.mean_tokens_per_object;
        stats.mean_latency_ms = agg.mean_latency_ms;
        stats.total_tokens = agg.total_tokens;
        stats.total_latency_ms = reports.iter().map(|r| r.cost.total_latency_ms).sum();
    }
    Ok(stats)
}
