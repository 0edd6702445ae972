#![allow(dead_code)]

use docrel::config::{AttentionScale, Config, ModelConfig};
use docrel::model::{Model, ModelDims};

pub const VOCAB: usize = 20;

pub fn tiny_config(d: usize, blocks: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        d,
        blocks,
        heads,
        max_positions: 16,
        conv_multiplier: 2,
        attention_scale: AttentionScale::Model,
        ..Config::default().model()
    }
}

pub fn tiny_model(config: ModelConfig, classes: usize, tags: usize, seed: u64) -> Model {
    let dims = ModelDims {
        vocab_size: VOCAB,
        num_classes: classes,
        num_tags: tags,
    };
    Model::init(config, dims, seed).unwrap()
}

pub struct SmallCorpus {
    pub train: Vec<docrel::example::Example>,
    pub dev: Vec<docrel::example::Example>,
    pub schema: docrel::schema::RelationSchema,
    pub vocab: docrel::bpe::Vocab,
}

/// A handful of synthetic documents tokenized with a small vocabulary.
pub fn small_corpus(docs: usize, config: &Config) -> SmallCorpus {
    use docrel::document::Split;
    use docrel::synthetic::{generate, SyntheticConfig};
    let c = generate(&SyntheticConfig {
        docs,
        train_docs: docs - 2,
        dev_docs: 2,
        ..SyntheticConfig::default()
    });
    let train = c.split(Split::Train);
    let dev = c.split(Split::Dev);
    let vocab = docrel::bpe::train_bpe(train.iter().map(|d| d.text.as_str()), 150, 1).unwrap();
    let mc = config.model();
    SmallCorpus {
        train: docrel::example::build_examples(&train, &vocab, &c.schema, &mc).unwrap(),
        dev: docrel::example::build_examples(&dev, &vocab, &c.schema, &mc).unwrap(),
        schema: c.schema,
        vocab,
    }
}

/// A configuration small enough to train in well under a second.
pub fn fast_config() -> Config {
    Config {
        d: 8,
        blocks: 1,
        heads: 2,
        max_positions: 64,
        conv_multiplier: 2,
        batch_size: 8,
        eval_every: 3,
        max_steps: 12,
        patience: 100,
        ..Config::default()
    }
}
