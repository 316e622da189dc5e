use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position of a ChaCha8 generator, enough to rebuild it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// Word position as a decimal string; JSON numbers cannot hold a u128.
    pub word_pos: String,
}

pub(crate) fn rng_at(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Endless stream of class-balanced index batches.
///
/// Each batch picks `batch_size / samples_per_class` distinct classes, then
/// `samples_per_class` indices of each: distinct when the class is large
/// enough, drawn with replacement otherwise.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    by_class: Vec<Vec<usize>>,
    classes_per_batch: usize,
    samples_per_class: usize,
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

pub fn class_balanced_batches(
    labels: &[usize],
    batch_size: usize,
    samples_per_class: usize,
    seed: u64,
) -> Result<BatchSampler> {
    BatchSampler::new(labels, batch_size, samples_per_class, seed, 0)
}

impl BatchSampler {
    pub fn new(
        labels: &[usize],
        batch_size: usize,
        samples_per_class: usize,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        if samples_per_class == 0 || batch_size == 0 || !batch_size.is_multiple_of(samples_per_class) {
            return Err(Error::param(
                "batch_size",
                format!("{batch_size} is not a positive multiple of samples_per_class = {samples_per_class}"),
            ));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut by_class = vec![Vec::new(); classes];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l].push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::param("labels", format!("class {c} has no samples")));
        }
        let classes_per_batch = batch_size / samples_per_class;
        if classes_per_batch > classes {
            return Err(Error::param(
                "batch_size",
                format!("needs {classes_per_batch} distinct classes, data has {classes}"),
            ));
        }
        Ok(BatchSampler {
            by_class,
            classes_per_batch,
            samples_per_class,
            seed,
            stream,
            rng: rng_at(seed, stream),
        })
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.stream,
            word_pos: self.rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&mut self, state: &RngState) -> Result<()> {
        let pos: u128 = state
            .word_pos
            .parse()
            .map_err(|_| Error::param("word_pos", format!("not an integer: {}", state.word_pos)))?;
        self.seed = state.seed;
        self.stream = state.stream;
        self.rng = rng_at(state.seed, state.stream);
        self.rng.set_word_pos(pos);
        Ok(())
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let classes = index::sample(&mut self.rng, self.by_class.len(), self.classes_per_batch);
        let mut batch = Vec::with_capacity(self.classes_per_batch * self.samples_per_class);
        for c in classes.iter() {
            let members = &self.by_class[c];
            if members.len() >= self.samples_per_class {
                batch.extend(members.choose_multiple(&mut self.rng, self.samples_per_class).copied());
            } else {
                for _ in 0..self.samples_per_class {
                    batch.push(members[self.rng.random_range(0..members.len())]);
                }
            }
        }
        batch
    }
}

impl Iterator for BatchSampler {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}
