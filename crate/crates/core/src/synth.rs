//! Synthetic corpora with known author-style and topic structure.
//!
//! Every author has a unit style vector and a few topics; every topic has a
//! unit topic vector. A document embedding is
//! `normalize(style_weight * style + (1 - style_weight) * topic + noise)`,
//! and its genre is its topic.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, DEFAULT_MIN_WORDS};
use crate::error::{Error, Result};
use crate::geometry::l2_normalize;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_authors: usize,
    pub docs_per_author: usize,
    pub num_topics: usize,
    pub dim: usize,
    pub style_weight: f64,
    pub noise_sigma: f64,
    pub topics_per_author: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_authors: 200,
            docs_per_author: 6,
            num_topics: 4,
            dim: 32,
            style_weight: 0.6,
            noise_sigma: 0.05,
            topics_per_author: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.docs_per_author < 2 {
            return fail("docs_per_author must be >= 2");
        }
        if self.dim < 2 {
            return fail("dim must be >= 2");
        }
        if self.num_topics == 0 || self.topics_per_author == 0 || self.topics_per_author > self.num_topics {
            return fail("need 1 <= topics_per_author <= num_topics");
        }
        if !(0.0..=1.0).contains(&self.style_weight) {
            return fail("style_weight must lie in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return fail("noise_sigma must be a non-negative number");
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(u) = l2_normalize(&v) {
            return u;
        }
    }
}

pub fn topic_vectors(config: &SynthConfig) -> Vec<Vec<f64>> {
    let mut rng = rng::rng_for(config.seed, "synth/topics");
    (0..config.num_topics).map(|_| unit_vector(&mut rng, config.dim)).collect()
}

pub fn author_id(i: usize) -> String {
    format!("author-{i:06}")
}

pub fn topic_genre(t: usize) -> String {
    format!("topic-{t:02}")
}

/// Generate the corpus. Documents of an author cycle through its topics, so
/// every topic of an author gets at least one document whenever
/// `docs_per_author >= topics_per_author`.
pub fn generate(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let topics = topic_vectors(config);
    let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
    let a = config.style_weight;
    let mut docs = Vec::with_capacity(config.num_authors * config.docs_per_author);
    for i in 0..config.num_authors {
        let author = author_id(i);
        let mut rng = rng::rng_for(config.seed, &format!("synth/{author}"));
        let style = unit_vector(&mut rng, config.dim);
        let mine = index::sample(&mut rng, config.num_topics, config.topics_per_author).into_vec();
        for d in 0..config.docs_per_author {
            let t = mine[d % mine.len()];
            let mixed: Vec<f64> = style
                .iter()
                .zip(&topics[t])
                .map(|(s, u)| a * s + (1.0 - a) * u + noise.sample(&mut rng))
                .collect();
            let embedding = match l2_normalize(&mixed) {
                Ok(v) => v,
                // measure-zero cancellation; fall back to the topic direction
                Err(_) => topics[t].clone(),
            };
            let word_count = DEFAULT_MIN_WORDS + 1 + rng.random_range(0..650);
            docs.push(Document::new(
                format!("{author}-doc-{d:03}"),
                author.clone(),
                topic_genre(t),
                word_count,
                embedding,
            ));
        }
    }
    Corpus::from_documents(docs)
}
