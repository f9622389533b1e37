use std::path::PathBuf;

use carts_core::io::{load_jobs, read_results, result_line, write_results};
use carts_core::{
    AgentContext, ArbiterMode, IterationBudget, PipelineConfig, RelevanceScorer, ScriptedBackend, TemplateSet,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/demo")
        .join(name)
}

fn demo_config(arbiter: ArbiterMode) -> PipelineConfig {
    PipelineConfig {
        chains: 2,
        budget: IterationBudget::Fixed(2),
        arbiter,
        seed: 7,
        ..Default::default()
    }
}

fn run_demo(arbiter: ArbiterMode) -> carts_core::PipelineResult {
    let jobs = load_jobs(fixture("dataset.jsonl")).unwrap();
    let backend = ScriptedBackend::from_path(fixture("script.json")).unwrap();
    let templates = TemplateSet::default();
    let config = demo_config(arbiter);
    let ctx = AgentContext::new(&backend, &templates, config.parse_retries, config.seed);
    carts_core::run_carts(&jobs[0], &config, &ctx, &RelevanceScorer::KeywordOverlap).unwrap()
}

#[test]
fn demo_fixture_hand_values() {
    let r = run_demo(ArbiterMode::Llm);
    assert_eq!(r.final_title.text(), "Portable Speakers for Outdoor and Party Music");
    assert_eq!(r.final_title.char_len(), 45);
    assert_eq!(r.final_coverage.coverage(), 3);
    assert_eq!(r.pool_opt, Some(3));
    assert_eq!(r.pool_size, 6);
    assert_eq!(r.traces[0].best_coverage, vec![1, 2, 3]);
    // round 1 of chain 1 overshoots the length limit and is rejected
    assert_eq!(r.traces[1].best_coverage, vec![1, 1, 2]);
    assert!(!r.traces[1].steps[0].accepted);
    assert_eq!(r.traces[1].best.title.text(), "Waterproof Party Speakers");
}

#[test]
fn rule_arbiter_agrees_on_demo() {
    assert_eq!(
        run_demo(ArbiterMode::Rule).final_title.text(),
        "Portable Speakers for Outdoor and Party Music"
    );
}

#[test]
fn library_run_matches_golden() {
    let golden = std::fs::read_to_string(fixture("golden_carts.jsonl")).unwrap();
    assert_eq!(format!("{}\n", result_line(&run_demo(ArbiterMode::Llm))), golden);
}

#[test]
fn results_round_trip() {
    let r = run_demo(ArbiterMode::Llm);
    let dir = std::env::temp_dir().join(format!("carts-rt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("out.jsonl");
    write_results(&[r.clone(), r.clone()], &path).unwrap();
    let back = read_results(&path).unwrap();
    assert_eq!(back, vec![r.clone(), r]);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn golden_files_parse() {
    for name in ["golden_carts.jsonl", "golden_vanilla.jsonl"] {
        let results = read_results(fixture(name)).unwrap();
        assert_eq!(results.len(), 1);
    }
    let vanilla = &read_results(fixture("golden_vanilla.jsonl")).unwrap()[0];
    assert_eq!(vanilla.final_title.text(), "Great Speaker Picks");
    assert_eq!(vanilla.final_coverage.coverage(), 0);
}
