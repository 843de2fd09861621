//! Seeded synthetic corpora and queries.
//!
//! Every document draws from its own ChaCha stream, so a corpus can be
//! generated lazily and any single document regenerated on its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::eval::{BenchQuery, Qrels};
use crate::model::{Fragment, SegmentLabel, SegmentedSequence, TokenMatrix};

/// Uniform random unit vector.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

pub fn random_unit_rows<R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize) -> Vec<f32> {
    (0..rows).flat_map(|_| random_unit(rng, dim)).collect()
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// Labeled sequence from runs of `(label, rows)` over `values`.
pub fn labeled(dim: usize, values: Vec<f32>, runs: &[(SegmentLabel, usize)]) -> SegmentedSequence {
    let labels: Vec<SegmentLabel> = runs
        .iter()
        .flat_map(|&(l, n)| std::iter::repeat_n(l, n))
        .collect();
    let matrix = TokenMatrix::new(dim, values)
        .and_then(TokenMatrix::assume_normalized)
        .expect("unit rows");
    SegmentedSequence::new(matrix, labels).expect("valid layout")
}

/// Document with one prefix row, `content` content rows and one suffix row.
pub fn random_doc<R: Rng + ?Sized>(rng: &mut R, dim: usize, content: usize) -> SegmentedSequence {
    let values = random_unit_rows(rng, content + 2, dim);
    labeled(
        dim,
        values,
        &[
            (SegmentLabel::DocPrefix, 1),
            (SegmentLabel::DocContent, content),
            (SegmentLabel::DocSuffix, 1),
        ],
    )
}

/// Text query whose rows are all query content.
pub fn random_query<R: Rng + ?Sized>(rng: &mut R, dim: usize, rows: usize) -> SegmentedSequence {
    labeled(dim, random_unit_rows(rng, rows, dim), &[(SegmentLabel::QueryContent, rows)])
}

pub fn doc_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn fixture_fragment_id(i: usize) -> String {
    format!("Doc {i}#0")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomCorpus {
    pub docs: usize,
    pub dim: usize,
    pub min_content: usize,
    pub max_content: usize,
    pub seed: u64,
}

impl RandomCorpus {
    /// Lazily generated `(fragment_id, sequence)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (String, SegmentedSequence)> + '_ {
        (0..self.docs).map(move |i| (fixture_fragment_id(i), self.doc(i)))
    }

    pub fn doc(&self, i: usize) -> SegmentedSequence {
        let mut rng = doc_rng(self.seed, i as u64);
        let content = rng.random_range(self.min_content..=self.max_content);
        random_doc(&mut rng, self.dim, content)
    }

    pub fn queries(&self, count: usize, rows: usize) -> Vec<SegmentedSequence> {
        let mut rng = doc_rng(self.seed ^ 0x0005_eed0_f9e7, u64::MAX);
        (0..count).map(|_| random_query(&mut rng, self.dim, rows)).collect()
    }
}

/// Corpus where each query's relevant document contains the query's rows
/// verbatim plus noise rows of bounded cosine to every query row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedNeedle {
    pub docs: usize,
    pub queries: usize,
    pub dim: usize,
    pub content_rows: usize,
    pub query_rows: usize,
    /// Image rows placed ahead of the query text in each benchmark query.
    pub image_rows: usize,
    pub max_noise_cos: f64,
    pub seed: u64,
}

impl Default for PlantedNeedle {
    fn default() -> Self {
        Self {
            docs: 10_000,
            queries: 200,
            dim: 128,
            content_rows: 24,
            query_rows: 16,
            image_rows: 32,
            max_noise_cos: 0.3,
            seed: 7,
        }
    }
}

pub struct PlantedCorpus {
    pub docs: Vec<(String, SegmentedSequence)>,
    pub queries: Vec<BenchQuery>,
    pub qrels: Qrels,
}

impl PlantedNeedle {
    /// Index of the relevant document for query `q`.
    pub fn relevant_doc(&self, q: usize) -> usize {
        q * (self.docs / self.queries.max(1)).max(1)
    }

    fn query_rows(&self, q: usize) -> Vec<f32> {
        let mut rng = doc_rng(self.seed ^ 0x9e37_79b9, q as u64);
        random_unit_rows(&mut rng, self.query_rows, self.dim)
    }

    /// Multimodal query sequence: image prefix, image rows, then the text rows.
    pub fn query(&self, q: usize) -> SegmentedSequence {
        let mut rng = doc_rng(self.seed ^ 0x001a_e6e5, q as u64);
        let mut values = random_unit_rows(&mut rng, self.image_rows + 1, self.dim);
        values.extend(self.query_rows(q));
        labeled(
            self.dim,
            values,
            &[
                (SegmentLabel::ImagePrefix, 1),
                (SegmentLabel::ImageContent, self.image_rows),
                (SegmentLabel::QueryContent, self.query_rows),
            ],
        )
    }

    fn planted_doc(&self, i: usize, q: usize) -> SegmentedSequence {
        let mut rng = doc_rng(self.seed, i as u64);
        let qrows = self.query_rows(q);
        let mut values = random_unit(&mut rng, self.dim);
        values.extend_from_slice(&qrows);
        let mut noise = 0;
        while noise + self.query_rows < self.content_rows {
            let v = random_unit(&mut rng, self.dim);
            if qrows
                .chunks_exact(self.dim)
                .all(|r| cosine(r, &v) <= self.max_noise_cos)
            {
                values.extend(v);
                noise += 1;
            }
        }
        values.extend(random_unit(&mut rng, self.dim));
        labeled(
            self.dim,
            values,
            &[
                (SegmentLabel::DocPrefix, 1),
                (SegmentLabel::DocContent, self.content_rows.max(self.query_rows)),
                (SegmentLabel::DocSuffix, 1),
            ],
        )
    }

    pub fn doc(&self, i: usize) -> SegmentedSequence {
        let stride = (self.docs / self.queries.max(1)).max(1);
        if i.is_multiple_of(stride) && i / stride < self.queries {
            self.planted_doc(i, i / stride)
        } else {
            let mut rng = doc_rng(self.seed, i as u64);
            random_doc(&mut rng, self.dim, self.content_rows)
        }
    }

    pub fn generate(&self) -> PlantedCorpus {
        let docs = (0..self.docs).map(|i| (fixture_fragment_id(i), self.doc(i))).collect();
        let mut qrels = Qrels::default();
        let queries = (0..self.queries)
            .map(|q| {
                let id = format!("q{q}");
                qrels.insert(id.clone(), fixture_fragment_id(self.relevant_doc(q)));
                BenchQuery {
                    id,
                    embedded: self.query(q),
                }
            })
            .collect();
        PlantedCorpus { docs, queries, qrels }
    }
}

/// Text-only fragment records matching [`fixture_fragment_id`].
pub fn fixture_fragments(n: usize) -> Vec<Fragment> {
    (0..n)
        .map(|i| Fragment {
            fragment_id: fixture_fragment_id(i),
            page_title: format!("Doc {i}"),
            paragraph_index: 0,
            paragraph_text: format!("Synthetic paragraph {i}."),
            hyperlinks: Vec::new(),
            images: Vec::new(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn docs_are_reproducible() {
        let c = RandomCorpus {
            docs: 5,
            dim: 16,
            min_content: 1,
            max_content: 9,
            seed: 3,
        };
        let a: Vec<_> = c.iter().collect();
        let b: Vec<_> = c.iter().collect();
        assert_eq!(a, b);
        assert_eq!(a[3].1, c.doc(3));
        assert!(a.iter().all(|(_, d)| (3..=11).contains(&d.rows())));
    }

    #[test]
    fn planted_doc_contains_query_rows() {
        let p = PlantedNeedle {
            docs: 20,
            queries: 4,
            dim: 32,
            content_rows: 10,
            query_rows: 4,
            image_rows: 3,
            max_noise_cos: 0.3,
            seed: 1,
        };
        let corpus = p.generate();
        for q in 0..4 {
            let doc = &corpus.docs[p.relevant_doc(q)].1;
            let query = p.query(q);
            let qtext = query.segment(SegmentLabel::QueryContent);
            let content = doc.segment(SegmentLabel::DocContent);
            assert_eq!(content.rows(), 10);
            for r in 0..4 {
                assert_eq!(content.row(r), qtext.row(r));
            }
            for r in 4..10 {
                for qr in qtext.iter_rows() {
                    assert!(cosine(content.row(r), qr) <= 0.3);
                }
            }
        }
        assert_eq!(corpus.qrels.relevant("q1"), Some("Doc 5#0"));
    }
}
