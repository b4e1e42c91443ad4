//! From a raw event log to labeled, encoded activity sequences.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};
use crate::event_log::{annotate, clean, parse_log, relabel_events, segment, stats, CleaningReport, DatasetStats, SensorEvent};
use crate::synthgen::GeneratedDataset;
use crate::tokenizer::{encode, tokenize_event, EncodedSequence, RelabelMap, Token, Vocabulary};

pub const DEFAULT_MAX_LEN: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub vocab: Vocabulary,
    /// Class names, sorted; `label_id` indexes into this list.
    pub classes: Vec<String>,
    pub tokens: Vec<Vec<Token>>,
    pub sequences: Vec<EncodedSequence>,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub cleaning: CleaningReport,
    pub annotation_warnings: usize,
    pub stats: DatasetStats,
}

impl Dataset {
    /// Cleans, annotates, optionally relabels, segments, tokenizes and encodes.
    pub fn from_events(
        name: &str,
        events: &[SensorEvent],
        relabel: Option<&RelabelMap>,
        max_len: usize,
    ) -> Result<(Self, PipelineReport)> {
        let (cleaned, cleaning) = clean(events);
        let (mut labeled, warnings) = annotate(&cleaned);
        if let Some(map) = relabel {
            relabel_events(&mut labeled, |raw| map.relabel(raw));
        }
        let segments = segment(&labeled);
        if segments.is_empty() {
            return Err(HarError::invalid("log contains no events"));
        }
        let tokens: Vec<Vec<Token>> = segments
            .iter()
            .map(|s| s.events.iter().map(|e| tokenize_event(&e.event.sensor_id, &e.event.value)).collect())
            .collect::<Result<_>>()?;
        let labels: Vec<String> = segments.iter().map(|s| s.label.clone()).collect();
        let report = PipelineReport {
            cleaning,
            annotation_warnings: warnings.len(),
            stats: stats(&segments, &cleaned),
        };
        Ok((Self::from_tokens(name, tokens, &labels, max_len)?, report))
    }

    pub fn from_tokens(name: &str, tokens: Vec<Vec<Token>>, labels: &[String], max_len: usize) -> Result<Self> {
        if tokens.len() != labels.len() {
            return Err(HarError::invalid("one label per sequence required"));
        }
        let vocab = Vocabulary::build(&tokens)?;
        let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let sequences = tokens
            .iter()
            .zip(labels)
            .map(|(t, l)| {
                let mut e = encode(t, &vocab, max_len)?;
                e.label_id = classes.binary_search(l).expect("label collected above");
                Ok(e)
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { name: name.to_string(), vocab, classes, tokens, sequences, max_len })
    }

    pub fn from_log_file(path: &Path, relabel: Option<&RelabelMap>, max_len: usize) -> Result<(Self, PipelineReport)> {
        let text = std::fs::read_to_string(path)?;
        let events = parse_log(&text)?;
        let name = path.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
        Self::from_events(&name, &events, relabel, max_len)
    }

    /// Uses the generator's built-in relabel map when it names one.
    pub fn from_generated(g: &GeneratedDataset, max_len: usize) -> Result<(Self, PipelineReport)> {
        let map = g.relabel.as_deref().and_then(RelabelMap::builtin);
        Self::from_events(&g.name, &g.events, map.as_ref(), max_len)
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s.label_id).collect()
    }

    /// Real (unpadded) index sequences, for unsupervised training.
    pub fn corpus(&self) -> Vec<Vec<u32>> {
        self.sequences.iter().map(|s| s.real_indexes()).collect()
    }

    /// Re-indexes into a source vocabulary of `source_size` rows by frequency rank:
    /// an index is kept when the source has that rank, otherwise it becomes the source UNK.
    pub fn remap_to_source(&self, source_size: usize) -> Result<Vec<EncodedSequence>> {
        if source_size < 2 {
            return Err(HarError::invalid("source vocabulary too small"));
        }
        let source_unk = (source_size - 1) as u32;
        Ok(self
            .sequences
            .iter()
            .map(|s| {
                let mut e = s.clone();
                for (ix, m) in e.indexes.iter_mut().zip(&s.mask) {
                    if *m && *ix >= source_unk {
                        *ix = source_unk;
                    }
                }
                e
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::OTHER_LABEL;
    use crate::synthgen::{aruba_like, cairo_like, generate};

    #[test]
    fn generated_home_becomes_dataset() {
        let mut spec = aruba_like();
        spec.days = 3;
        let g = generate(&spec).unwrap();
        let (d, report) = Dataset::from_generated(&g, 50).unwrap();
        assert_eq!(d.len(), g.truth.len());
        assert_eq!(report.cleaning.input_events, g.events.len());
        assert!(d.classes.contains(&OTHER_LABEL.to_string()));
        let total: usize = d.sequences.iter().map(|s| s.real_len()).sum();
        assert_eq!(total, g.events.len());
    }

    #[test]
    fn relabel_runs_before_segmentation() {
        let mut spec = cairo_like();
        spec.days = 3;
        let g = generate(&spec).unwrap();
        let (d, _) = Dataset::from_generated(&g, 50).unwrap();
        assert!(d.classes.iter().all(|c| ["Bed to toilet", "Cook", "Leave home", "Sleep", "Take medicine", "Work", "Other"].contains(&c.as_str())));
        for w in d.sequences.windows(2) {
            assert_ne!(w[0].label_id, w[1].label_id);
        }
    }

    #[test]
    fn remap_clamps_overflow_to_source_unk() {
        let toks = |s: &str| s.split_whitespace().map(Token::from).collect::<Vec<_>>();
        let d = Dataset::from_tokens("t", vec![toks("A A A B B C D")], &["x".into()], 8).unwrap();
        let remapped = d.remap_to_source(4).unwrap();
        assert_eq!(remapped[0].indexes, vec![0, 1, 1, 1, 2, 2, 3, 3]);
    }
}
