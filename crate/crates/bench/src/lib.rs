//! Deterministic fixtures shared by the benchmarks.

use docmt_core::corpus::Document;
use docmt_core::strategy::DocumentTranslation;

const WORDS: &[&str] = &[
    "the",
    "council",
    "said",
    "however",
    "prices",
    "rose",
    "she",
    "they",
    "because",
    "river",
    "will",
    "was",
    "city",
    "new",
    "bridge",
    "therefore",
    "announced",
    "plans",
    "walked",
    "is",
];

/// `segments` sentences of `words` tokens each, drawn by a fixed stride.
pub fn sentences(seed: usize, segments: usize, words: usize) -> Vec<String> {
    (0..segments)
        .map(|s| {
            let toks: Vec<&str> = (0..words)
                .map(|w| WORDS[(seed * 31 + s * 7 + w * 3 + w * w) % WORDS.len()])
                .collect();
            format!("{}.", toks.join(" "))
        })
        .collect()
}

/// A document and a translation that drops every fifth word.
pub fn pair(id: usize, segments: usize, words: usize) -> (Document, DocumentTranslation) {
    let reference = sentences(id, segments, words);
    let hypothesis = reference
        .iter()
        .map(|s| {
            s.split_whitespace()
                .enumerate()
                .filter(|(i, _)| i % 5 != 4)
                .map(|(_, w)| w)
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let doc = Document {
        id: format!("d{id}"),
        src_lang: "de".into(),
        tgt_lang: "en".into(),
        domain: "news".into(),
        source_segments: reference.clone(),
        reference_segments: Some(reference),
    };
    let hyp = DocumentTranslation {
        doc_id: doc.id.clone(),
        hypothesis_segments: hypothesis,
        alignment_ok: true,
        raw_output: None,
        warnings: Vec::new(),
    };
    (doc, hyp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_aligned() {
        let (doc, hyp) = pair(3, 12, 20);
        assert_eq!(doc.source_segments.len(), hyp.hypothesis_segments.len());
        assert_eq!(hyp.hypothesis_segments[0].split_whitespace().count(), 16);
        assert_eq!(pair(3, 12, 20).1, hyp);
    }
}
