// SPDX-License-Identifier: MIT OR Apache-2.0

use polvec_core::activation_store::{load_actv, plant_synthetic, save_actv, ActivationSet, PlantSpec};
use polvec_core::concept_vectors::{learn_all, LearnConfig, Method, VectorRegistry};
use polvec_core::corpus::{
    read_statements, synth_statements, write_statements, Dimension, Leaning, Split, Statement, StatementSet, Taxonomy,
};
use polvec_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn planted() -> ActivationSet {
    plant_synthetic(&PlantSpec::new(12, 2, 10, 3.0, 1.0, 17)).unwrap().0
}

#[test]
fn actv_round_trip_is_bit_exact() {
    let set = planted();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.actv");
    save_actv(&set, &path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let loaded = load_actv(&path).unwrap();
    assert_eq!(loaded, set.quantized());
    assert_eq!(loaded.to_bytes(), first);
    assert_eq!(ActivationSet::from_bytes(&first).unwrap().to_bytes(), first);
}

#[test]
fn truncation_fuzz_always_yields_typed_errors() {
    let bytes = planted().to_bytes();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let cut = rng.random_range(0..bytes.len());
        let err = ActivationSet::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::TruncatedFile { .. }), "cut {cut}: {err}");
    }
}

#[test]
fn corruption_never_panics() {
    let bytes = planted().to_bytes();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let mut b = bytes.clone();
        let at = rng.random_range(0..b.len());
        b[at] ^= 1 << rng.random_range(0..8);
        assert!(ActivationSet::from_bytes(&b).is_err(), "flip at {at} went unnoticed");
    }
}

#[test]
fn fifty_row_csv_round_trip() {
    let tax = Taxonomy::default();
    let mut rows = Vec::new();
    for i in 0..50 {
        let dim = Dimension::ALL[i % 4];
        let spec = tax.dimension(dim);
        rows.push(Statement {
            text: format!("Statement {i}, with \"quotes\" and commas; item {}", i * 3),
            dimension: dim,
            leaning: if i % 3 == 0 { Leaning::Left } else { Leaning::Right },
            topic: spec.topics[i % spec.topics.len()].clone(),
            split: [Split::Train, Split::Test, Split::Ood][i % 3],
        });
    }
    let set = StatementSet::new(rows, &tax).unwrap();
    let mut buf = Vec::new();
    write_statements(&set, &mut buf).unwrap();
    let back = read_statements(buf.as_slice(), &tax).unwrap();
    assert_eq!(back, set);
    let mut again = Vec::new();
    write_statements(&back, &mut again).unwrap();
    assert_eq!(again, buf);
}

#[test]
fn synthetic_corpus_round_trips() {
    let tax = Taxonomy::default();
    let set = synth_statements(9, 1, &tax).unwrap();
    let mut buf = Vec::new();
    write_statements(&set, &mut buf).unwrap();
    assert_eq!(read_statements(buf.as_slice(), &tax).unwrap(), set);
}

#[test]
fn registry_round_trip() {
    let set = planted();
    let reg = learn_all(&set, &Method::ALL, &LearnConfig::default()).registry;
    assert_eq!(reg.len(), 3 * 4 * 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reg.actv");
    reg.save(&path).unwrap();
    let back = VectorRegistry::load(&path).unwrap();
    assert_eq!(back, reg);
    assert!(matches!(load_actv(&path), Err(Error::Format(_))));
}

#[test]
fn wrapper_strings_match_published_templates() {
    let tax = Taxonomy::default();
    let cases = [
        ("mistral", "[INST] S [/INST]"),
        ("llama3", "<|begin_of_text|><|start_header_id|>user<|end_header_id|>\n\nS<|eot_id|><|start_header_id|>assistant<|end_header_id|>\n\n"),
        ("gemma", "<start_of_turn>user\nS<end_of_turn>\n<start_of_turn>model\n"),
        ("qwen", "<|im_start|>user\nS<|im_end|>\n<|im_start|>assistant\n"),
    ];
    for (id, want) in cases {
        assert_eq!(tax.wrapper(id).unwrap().wrap("S"), want, "{id}");
    }
    assert!(matches!(tax.wrapper("gpt"), Err(Error::UnknownWrapper(_))));
}
