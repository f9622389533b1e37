//! Inputs shared by the benchmarks.

use carts_core::domain::{CandidateTitle, Item, KeywordSet, ModuleJob, Provenance};
use carts_core::ScriptedBackend;

pub fn job(n: usize) -> ModuleJob {
    ModuleJob::new(
        "bench",
        (0..n)
            .map(|i| Item::new(format!("i{i}"), "cat", format!("product {i}")))
            .collect(),
    )
}

pub fn keywords(n: usize) -> Vec<KeywordSet> {
    (0..n)
        .map(|i| KeywordSet::new(format!("i{i}"), vec![format!("k{i}"), format!("alt{i}")], 5).unwrap())
        .collect()
}

/// `size` titles where title `c` mentions keywords `0..=c % n`.
pub fn pool(size: usize, n: usize) -> Vec<CandidateTitle> {
    (0..size)
        .map(|c| {
            let words: Vec<String> = (0..=c % n).map(|i| format!("k{i}")).collect();
            CandidateTitle::new(
                format!("{} picks {c}", words.join(" ")),
                0,
                c as u32,
                Provenance::Initial,
            )
            .unwrap()
        })
        .collect()
}

/// Script for `chains` chains that each climb one item per round.
pub fn climbing_script(n: usize, chains: usize) -> ScriptedBackend {
    let mut b = ScriptedBackend::new();
    for i in 0..n {
        b = b.with(&format!("keywords/i{i}"), [format!("k{i}, alt{i}")]);
    }
    for c in 0..chains {
        b = b.with(&format!("gag/{c}"), ["title: k0 picks".to_string()]);
        let regen: Vec<String> = (1..n)
            .map(|r| {
                let words: Vec<String> = (0..=r).map(|i| format!("k{i}")).collect();
                format!("title: {} picks", words.join(" "))
            })
            .collect();
        b = b.with(&format!("regeneration/{c}"), regen);
        b = b.with(&format!("feedback/{c}"), vec!["cover more".to_string(); n]);
    }
    b
}
