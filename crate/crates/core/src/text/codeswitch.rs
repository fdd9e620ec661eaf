use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{BilingualLexicon, Translation};
use super::tokenize::{scan, Piece};
use crate::error::{Error, Result};

/// Bookkeeping from one code-switch generation run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSwitchReport {
    pub sentences_in: usize,
    pub sentences_out: usize,
    /// Translatable word spans seen across all input sentences.
    pub candidates: usize,
    /// Spans that were replaced.
    pub replaced: usize,
    pub dropped_untranslatable: usize,
    pub dropped_unselected: usize,
}

enum Item<'a> {
    Word(&'a str),
    Punct(&'a str),
}

fn longest_match<'a>(words: &[&str], translations: &'a [Translation]) -> Option<&'a Translation> {
    translations
        .iter()
        .filter(|t| {
            t.source.len() <= words.len()
                && t.source.iter().zip(words).all(|(s, w)| s == &w.to_lowercase())
        })
        .max_by_key(|t| t.source.len())
}

/// Replaces a random subset of translatable words in each monolingual
/// sentence by their translations.
///
/// Every maximal-length translatable span is selected independently with
/// probability `rate`. Sentences with no translatable span, and sentences
/// where no span was selected, are dropped, so every output mixes languages.
pub fn generate_code_switched(
    sentences: &[String],
    lexicon: &BilingualLexicon,
    rate: f64,
    seed: u64,
) -> Result<(Vec<String>, CodeSwitchReport)> {
    if lexicon.translations.is_empty() {
        return Err(Error::Config("lexicon has no translations".into()));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Config(format!("replacement rate {rate} must be in (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CodeSwitchReport {
        sentences_in: sentences.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for sentence in sentences {
        let items: Vec<Item> = scan(sentence)
            .into_iter()
            .map(|p| match p {
                Piece::Word(w) => Item::Word(w),
                Piece::Pause(s) | Piece::Stop(s) => Item::Punct(s),
            })
            .collect();
        let mut parts: Vec<String> = Vec::new();
        let mut seen = 0;
        let mut replaced = 0;
        let mut i = 0;
        while i < items.len() {
            match &items[i] {
                Item::Punct(p) => {
                    match parts.last_mut() {
                        Some(last) => last.push_str(p),
                        None => parts.push(p.to_string()),
                    }
                    i += 1;
                }
                Item::Word(w) => {
                    let run: Vec<&str> = items[i..]
                        .iter()
                        .map_while(|it| match it {
                            Item::Word(w) => Some(*w),
                            Item::Punct(_) => None,
                        })
                        .collect();
                    match longest_match(&run, &lexicon.translations) {
                        Some(t) => {
                            seen += 1;
                            if rng.gen_bool(rate) {
                                replaced += 1;
                                parts.push(t.target.clone());
                            } else {
                                parts.extend(run[..t.source.len()].iter().map(|s| s.to_string()));
                            }
                            i += t.source.len();
                        }
                        None => {
                            parts.push(w.to_string());
                            i += 1;
                        }
                    }
                }
            }
        }
        report.candidates += seen;
        report.replaced += replaced;
        if seen == 0 {
            report.dropped_untranslatable += 1;
        } else if replaced == 0 {
            report.dropped_unselected += 1;
        } else {
            out.push(parts.join(" "));
        }
    }
    report.sentences_out = out.len();
    Ok((out, report))
}
