// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use std::sync::OnceLock;

use polvec_core::activation_store::{corpus_vocab, extract, ActivationSet};
use polvec_core::corpus::{compose_prompt, split, synth_statements, PromptTemplate, StatementSet, Taxonomy};
use polvec_core::toy_lm::{TokenId, ToyLm, ToyLmConfig};

pub struct ToyFixture {
    pub model: ToyLm,
    pub statements: StatementSet,
    pub taxonomy: Taxonomy,
    pub template: PromptTemplate,
    pub set: ActivationSet,
}

impl ToyFixture {
    pub fn prompt_ids(&self, i: usize) -> Vec<TokenId> {
        let stmt = self.statements.get(i).unwrap();
        self.model.tokenize(&compose_prompt(stmt, &self.template, &self.taxonomy).unwrap())
    }
}

/// Seeded toy model plus synthetic statements and their extracted activations.
pub fn toy_fixture(seed: u64) -> ToyFixture {
    let taxonomy = Taxonomy::default();
    let statements = split(&synth_statements(seed, 2, &taxonomy).unwrap(), 0.2, seed).unwrap();
    let template = PromptTemplate::base();
    let vocab = corpus_vocab(&statements, &[&template, &PromptTemplate::full()], &taxonomy).unwrap();
    let model = ToyLm::build(ToyLmConfig::new(&vocab, seed)).unwrap();
    let set = extract(&model, &statements, &template, &taxonomy).unwrap();
    ToyFixture {
        model,
        statements,
        taxonomy,
        template,
        set,
    }
}

/// Shared fixtures for seeds `0..8`, built once per test binary.
pub fn cached_fixture(seed: u64) -> &'static ToyFixture {
    static CACHE: [OnceLock<ToyFixture>; 8] = [const { OnceLock::new() }; 8];
    CACHE[seed as usize].get_or_init(|| toy_fixture(seed))
}
