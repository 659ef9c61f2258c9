//! The library stages chained by hand on the demo corpus, the way an embedding
//! application would use them without the command-line driver.

use std::fs;

use topictrend::analysis::{
    document_mixtures, monthly_trends, rank_terms_by_relevance, topic_term_distribution, StackedSeries,
};
use topictrend::features::{featurize, term_probabilities, DocTermMatrix, VocabularyParams};
use topictrend::ingest::{filter_articles, load_corpus, partition_by_month, FilterConfig};
use topictrend::nmf::{self, FactorSidecar, SolverConfig};
use topictrend::preprocess::{run_pipeline, NgramAcceptList, PipelineConfig, StopwordList};
use topictrend::synth::demo_corpus;

#[test]
fn demo_corpus_through_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let demo = demo_corpus(11);
    let (meta, bodies) = (dir.path().join("metadata.csv"), dir.path().join("bodies.jsonl"));
    fs::write(&meta, &demo.metadata_csv).unwrap();
    fs::write(&bodies, &demo.bodies_jsonl).unwrap();

    let loaded = load_corpus(&meta, &bodies).unwrap();
    assert_eq!(loaded.missing_body, 1);
    let kept = filter_articles(&loaded.articles, &FilterConfig::default());
    assert_eq!(kept.records.len(), 182);
    assert_eq!(kept.drops.values().sum::<usize>(), loaded.articles.len() - 182);

    let config = PipelineConfig {
        stopwords: StopwordList::builtin(),
        accept: NgramAcceptList::parse(&demo.accept_list).unwrap(),
    };
    let streams: Vec<_> = kept.records.iter().map(|r| run_pipeline(r, &config)).collect();
    assert!(streams.iter().any(|s| s.tokens.iter().any(|t| t == "intensive_care_unit")));

    let dtm = featurize(&streams, &VocabularyParams::default()).unwrap();
    assert_eq!(dtm.matrix.nrows(), 182);
    let (mp, vp) = (dir.path().join("x.bin"), dir.path().join("x.json"));
    dtm.save(&mp, &vp).unwrap();
    assert_eq!(DocTermMatrix::load(&mp, &vp).unwrap(), dtm);

    let solver = SolverConfig::new(5, 3);
    let (factors, report) = nmf::solve(&dtm.matrix, &solver).unwrap();
    assert!(report.converged);
    let (fb, fj) = (dir.path().join("f.bin"), dir.path().join("f.json"));
    nmf::save_factors(&factors, &FactorSidecar::new(&solver, &report), &fb, &fj).unwrap();
    let (back, sidecar) = nmf::load_factors(&fb, &fj).unwrap();
    assert_eq!(back, factors);
    assert_eq!(sidecar.config.k, 5);

    let dist = topic_term_distribution(&factors.h).unwrap();
    let p = term_probabilities(&dtm.vocabulary).unwrap();
    let table = rank_terms_by_relevance(&dist, &p, &dtm.vocabulary.terms(), 0.5, 10).unwrap();
    assert_eq!(table.topics.len(), 5);
    assert!(table.topics.iter().all(|t| t.len() == 10));

    let series = monthly_trends(&document_mixtures(&factors.w), &partition_by_month(&kept.records)).unwrap();
    // the demo leaves December 2020 empty
    let empty: Vec<String> =
        series.months.iter().zip(&series.shares).filter(|(_, s)| s.is_none()).map(|(m, _)| m.to_string()).collect();
    assert_eq!(empty, ["2020-12"]);
    for shares in series.shares.iter().flatten() {
        assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let labels: Vec<String> = (1..=5).map(|i| format!("t{i}")).collect();
    assert_eq!(StackedSeries::from_trends(&series, &labels).to_trends(), series);
}
