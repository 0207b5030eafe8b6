//! Sentence-level caption metrics over tokenized text.

use std::collections::{BTreeMap, HashMap};

pub type Ngram = Vec<String>;

pub fn tokenize(sentence: &str) -> Vec<String> {
    densecap_data::vocab::normalize(sentence)
}

pub fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}

/// Clipped `n`-gram matches and candidate `n`-gram total.
fn clipped_matches(candidate: &[String], references: &[Vec<String>], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let total = candidate.len().saturating_sub(n - 1);
    let mut matched = 0;
    for (gram, count) in &cand {
        let best = references
            .iter()
            .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
            .max()
            .unwrap_or(0);
        matched += (*count).min(best);
    }
    (matched, total)
}

/// Geometric mean of clipped 1..4-gram precisions times the brevity
/// penalty. Orders above one whose match count is zero use add-one
/// smoothing; a zero unigram precision gives zero. Against several
/// references, counts clip to the per-reference maximum and the closest
/// reference length sets the brevity penalty.
pub fn bleu4_multi(candidate: &[String], references: &[Vec<String>]) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (m, t) = clipped_matches(candidate, references, n);
        let p = if n == 1 {
            if m == 0 {
                return 0.0;
            }
            m as f64 / t as f64
        } else if m == 0 {
            1.0 / (t as f64 + 1.0)
        } else {
            m as f64 / t as f64
        };
        log_sum += p.ln();
    }
    let c = candidate.len();
    // Ties in distance go to the shorter reference.
    let r = references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0);
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / 4.0).exp()
}

pub fn bleu4(candidate: &[String], reference: &[String]) -> f64 {
    bleu4_multi(candidate, std::slice::from_ref(&reference.to_vec()))
}

/// Consensus metric: for n = 1..4 the cosine similarity of TF-IDF
/// weighted n-gram vectors, averaged over references, then averaged over
/// n and multiplied by 10. Document frequencies come from the reference
/// corpus given at construction, one document per reference set.
#[derive(Debug, Clone)]
pub struct Cider {
    doc_freq: [HashMap<Ngram, f64>; 4],
    log_docs: f64,
}

// Ordered so sums are reproducible across runs.
type Weighted = (BTreeMap<Ngram, f64>, f64);

impl Cider {
    pub fn new<'a, I>(reference_sets: I) -> Self
    where
        I: IntoIterator<Item = &'a [Vec<String>]>,
    {
        let mut doc_freq: [HashMap<Ngram, f64>; 4] = Default::default();
        let mut docs = 0usize;
        for refs in reference_sets {
            docs += 1;
            for (n, df) in doc_freq.iter_mut().enumerate() {
                let mut seen: Vec<&[String]> = refs.iter().flat_map(|r| ngram_counts(r, n + 1).into_keys()).collect();
                seen.sort();
                seen.dedup();
                for g in seen {
                    *df.entry(g.to_vec()).or_insert(0.0) += 1.0;
                }
            }
        }
        Self {
            doc_freq,
            log_docs: (docs.max(1) as f64).ln(),
        }
    }

    fn weighted(&self, tokens: &[String], n: usize) -> Weighted {
        let counts: BTreeMap<&[String], usize> = ngram_counts(tokens, n).into_iter().collect();
        let total: usize = counts.values().sum();
        let mut vec = BTreeMap::new();
        let mut norm = 0.0;
        for (g, c) in counts {
            let df = self.doc_freq[n - 1].get(g).copied().unwrap_or(0.0);
            let idf = self.log_docs - df.max(1.0).ln();
            let w = c as f64 / total as f64 * idf;
            norm += w * w;
            vec.insert(g.to_vec(), w);
        }
        (vec, norm.sqrt())
    }

    fn cosine(a: &Weighted, b: &Weighted) -> f64 {
        if a.1 == 0.0 || b.1 == 0.0 {
            return 0.0;
        }
        let dot: f64 = a.0.iter().map(|(g, w)| w * b.0.get(g).copied().unwrap_or(0.0)).sum();
        dot / (a.1 * b.1)
    }

    pub fn score(&self, candidate: &[String], references: &[Vec<String>]) -> f64 {
        if candidate.is_empty() || references.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for n in 1..=4 {
            let c = self.weighted(candidate, n);
            let s: f64 = references.iter().map(|r| Self::cosine(&c, &self.weighted(r, n))).sum();
            total += s / references.len() as f64;
        }
        10.0 * total / 4.0
    }
}

/// Which caption metric a scorer applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionMetric {
    Bleu4,
    Cider,
}

/// A caption metric ready to score pairs; CIDEr carries its statistics.
#[derive(Debug, Clone)]
pub enum PairScorer {
    Bleu4,
    Cider(Cider),
}

impl PairScorer {
    /// `references` are the reference documents used for CIDEr statistics.
    pub fn new(metric: CaptionMetric, references: &[Vec<String>]) -> Self {
        match metric {
            CaptionMetric::Bleu4 => PairScorer::Bleu4,
            CaptionMetric::Cider => PairScorer::Cider(Cider::new(references.iter().map(std::slice::from_ref))),
        }
    }

    pub fn score(&self, candidate: &[String], reference: &[String]) -> f64 {
        match self {
            PairScorer::Bleu4 => bleu4(candidate, reference),
            PairScorer::Cider(c) => c.score(candidate, std::slice::from_ref(&reference.to_vec())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn bleu_self_score_is_one() {
        let a = toks("a man runs along the track quickly");
        assert!((bleu4(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smoothed_bleu_without_four_gram_overlap() {
        let c = toks("the man runs fast on a long road");
        let r = toks("a man runs slowly on the long track");
        let b = bleu4(&c, &r);
        let (m1, t1) = clipped_matches(&c, std::slice::from_ref(&r), 1);
        assert!(b > 0.0 && b < m1 as f64 / t1 as f64, "{b}");
        assert_eq!(bleu4(&[], &r), 0.0);
    }

    #[test]
    fn cider_self_score_is_ten() {
        let refs = [toks("a dog jumps"), toks("a cat climbs a tree"), toks("the chef cuts")];
        let cider = Cider::new(refs.iter().map(std::slice::from_ref));
        let s = cider.score(&refs[1], std::slice::from_ref(&refs[1]));
        assert!((s - 10.0).abs() < 1e-9, "{s}");
        assert_eq!(cider.score(&toks("zebra"), std::slice::from_ref(&refs[0])), 0.0);
    }
}
