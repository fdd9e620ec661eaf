//! Duration extraction from Transformer attention and code-switched data
//! augmentation.

use rayon::prelude::*;
use serde::Serialize;

use super::duration::{durations_from_alignment, select_head, zero_duration_fraction, DurationSequence};
use super::model::{synthesize, SynthesisOptions, TtsArch, TtsExample, TtsModel};
use crate::error::{Error, Result};
use crate::text::{tokenize_mixed, BilingualLexicon, SymbolTable};

/// Share of zero-length phonemes above which an utterance is flagged.
pub const DEGENERATE_ZERO_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, Serialize)]
pub struct DurationReport {
    pub sequences: Vec<DurationSequence>,
    pub layer: usize,
    pub head: usize,
    /// Mean diagonality of the chosen head on the selection subset.
    pub score: f64,
    /// Utterances where too many phonemes got no frames.
    pub degenerate: Vec<String>,
}

/// Durations for every utterance from the (layer, head) whose teacher-forced
/// alignments are most diagonal over the first `selection` utterances
/// (all of them when `selection` is 0).
pub fn extract_durations(model: &TtsModel, dataset: &[TtsExample], selection: usize) -> Result<DurationReport> {
    if model.arch != TtsArch::Transformer {
        return Err(Error::Argument(format!("durations come from Transformer attention, not {}", model.arch)));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyInput("no utterances to align".into()));
    }
    let flat: Vec<Vec<_>> = dataset
        .par_iter()
        .map(|ex| Ok(model.teacher_forced_alignments(ex)?.into_iter().flatten().collect()))
        .collect::<Result<_>>()?;
    let heads = model.config.heads;
    let n = if selection == 0 { dataset.len() } else { selection.min(dataset.len()) };
    let (best, score) = select_head(&flat[..n])?;
    let mut sequences = Vec::with_capacity(dataset.len());
    let mut degenerate = Vec::new();
    for (ex, mats) in dataset.iter().zip(&flat) {
        let d = durations_from_alignment(&mats[best])?;
        let frames = ex.target.num_frames();
        if d.iter().sum::<usize>() != frames {
            return Err(Error::Numeric(format!("utterance {}: durations do not cover its {frames} frames", ex.utterance_id)));
        }
        if zero_duration_fraction(&d) > DEGENERATE_ZERO_FRACTION {
            log::warn!("utterance {}: degenerate alignment, {:.0}% of phonemes have no frames", ex.utterance_id, 100.0 * zero_duration_fraction(&d));
            degenerate.push(ex.utterance_id.clone());
        }
        sequences.push(DurationSequence { utterance_id: ex.utterance_id.clone(), durations: d });
    }
    Ok(DurationReport { sequences, layer: best / heads, head: best % heads, score, degenerate })
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AugmentReport {
    pub added: Vec<String>,
    /// `(sentence index, reason)` for sentences that were left out.
    pub skipped: Vec<(usize, String)>,
    /// Added utterances whose decoding hit the frame cap.
    pub truncated: Vec<String>,
}

/// Synthesizes each code-switched sentence with `model` and appends the
/// results to `dataset` as new examples `{prefix}{index:05}`.
pub fn augment_with_code_switch(
    model: &TtsModel,
    sentences: &[String],
    lexicon: &BilingualLexicon,
    table: &SymbolTable,
    dataset: &[TtsExample],
    prefix: &str,
) -> Result<(Vec<TtsExample>, AugmentReport)> {
    let results: Vec<Result<(TtsExample, bool)>> = sentences
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let phonemes = tokenize_mixed(s, lexicon, table)?;
            let out = synthesize(model, &phonemes, &SynthesisOptions::default())?;
            let ex = TtsExample { utterance_id: format!("{prefix}{i:05}"), phonemes, target: out.features, durations: None };
            Ok((ex, out.truncated))
        })
        .collect();
    let mut out = dataset.to_vec();
    let mut report = AugmentReport::default();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((ex, truncated)) => {
                if truncated {
                    report.truncated.push(ex.utterance_id.clone());
                }
                report.added.push(ex.utterance_id.clone());
                out.push(ex);
            }
            Err(e) => {
                log::info!("skipping code-switched sentence {i}: {e}");
                report.skipped.push((i, e.to_string()));
            }
        }
    }
    Ok((out, report))
}
