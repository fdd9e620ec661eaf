use std::collections::HashMap;
use std::path::Path;

use super::symbols::{en_symbol, zh_symbol, Inventory, SymbolTable, EN_STRESSES};
use crate::error::{Error, Result};

const PINYIN_TABLE: &str = include_str!("../../data/pinyin_syllables.tsv");
pub const DEMO_LEXICON: &str = include_str!("../../data/demo_lexicon.tsv");
pub const DEMO_TRANSLATIONS: &str = include_str!("../../data/demo_translations.tsv");

/// Initial/final split of a toneless pinyin syllable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyllableSplit {
    pub initial: Option<String>,
    pub final_: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Translation {
    pub source: Vec<String>,
    pub target: String,
}

#[derive(Clone, Debug, Default)]
pub struct BilingualLexicon {
    /// Lower-cased word to its phoneme list (stress digits attached).
    pub en_entries: HashMap<String, Vec<String>>,
    /// Toneless syllable (`ü` written `v`) to its split.
    pub zh_syllables: HashMap<String, SyllableSplit>,
    pub translations: Vec<Translation>,
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

fn tab_pair<'a>(what: &str, n: usize, line: &'a str) -> Result<(&'a str, &'a str)> {
    line.split_once('\t')
        .map(|(a, b)| (a.trim(), b.trim()))
        .ok_or_else(|| Error::Format(format!("{what} line {}: expected two tab-separated fields", n + 1)))
}

pub fn parse_pinyin_table(text: &str) -> Result<HashMap<String, SyllableSplit>> {
    let mut out = HashMap::new();
    for (n, line) in data_lines(text) {
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if f.len() != 3 {
            return Err(Error::Format(format!("pinyin table line {}: expected 3 fields", n + 1)));
        }
        let initial = (f[1] != "-").then(|| f[1].to_string());
        out.insert(
            f[0].to_string(),
            SyllableSplit {
                initial,
                final_: f[2].to_string(),
            },
        );
    }
    Ok(out)
}

/// The shipped segmentation table, which defines the accepted syllables.
pub fn shipped_pinyin_table() -> HashMap<String, SyllableSplit> {
    parse_pinyin_table(PINYIN_TABLE).expect("shipped pinyin table parses")
}

impl BilingualLexicon {
    /// Parses `word<TAB>phonemes` and `source<TAB>target` text; the Mandarin
    /// side uses the shipped pinyin table.
    pub fn parse(en_lexicon: &str, translations: &str) -> Result<Self> {
        let mut en_entries = HashMap::new();
        for (n, line) in data_lines(en_lexicon) {
            let (word, phones) = tab_pair("lexicon", n, line)?;
            let phones: Vec<String> = phones.split_whitespace().map(str::to_string).collect();
            if phones.is_empty() {
                return Err(Error::Format(format!("lexicon line {}: empty pronunciation", n + 1)));
            }
            en_entries.insert(word.to_lowercase(), phones);
        }
        let mut trans = Vec::new();
        for (n, line) in data_lines(translations) {
            let (src, tgt) = tab_pair("translation", n, line)?;
            trans.push(Translation {
                source: src.split_whitespace().map(str::to_lowercase).collect(),
                target: tgt.to_string(),
            });
        }
        Ok(Self {
            en_entries,
            zh_syllables: shipped_pinyin_table(),
            translations: trans,
        })
    }

    pub fn load(en_lexicon: &Path, translations: Option<&Path>) -> Result<Self> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let lex = read(en_lexicon)?;
        let tr = match translations {
            Some(p) => read(p)?,
            None => String::new(),
        };
        Self::parse(&lex, &tr)
    }

    pub fn demo() -> Self {
        Self::parse(DEMO_LEXICON, DEMO_TRANSLATIONS).expect("demo lexicon parses")
    }

    /// Checks that every referenced phone, initial and final is in the
    /// table's base sets with a legal stress or tone.
    pub fn validate(&self, table: &SymbolTable) -> Result<()> {
        let inv = Inventory::shipped();
        for (word, phones) in &self.en_entries {
            for p in phones {
                let (base, stress) = split_digit(p);
                let ok = if inv.en_vowels.contains(base) {
                    stress.is_none_or(|s| EN_STRESSES.contains(&s))
                } else {
                    stress.is_none() && inv.en_consonants.contains(base)
                };
                if !ok || table.id(&en_symbol(p)).is_none() {
                    return Err(Error::Validation(format!("word {word:?}: phoneme {p:?} is not in the symbol table")));
                }
            }
        }
        for (syl, split) in &self.zh_syllables {
            if let Some(i) = &split.initial {
                if table.id(&zh_symbol(i)).is_none() {
                    return Err(Error::Validation(format!("syllable {syl:?}: initial {i:?} unknown")));
                }
            }
            if table.id(&zh_symbol(&format!("{}1", split.final_))).is_none() {
                return Err(Error::Validation(format!("syllable {syl:?}: final {:?} unknown", split.final_)));
            }
        }
        Ok(())
    }
}

/// Splits a trailing stress/tone digit off a symbol.
pub fn split_digit(s: &str) -> (&str, Option<&str>) {
    match s.char_indices().last() {
        Some((i, c)) if c.is_ascii_digit() && i > 0 => (&s[..i], Some(&s[i..])),
        _ => (s, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_lexicon_validates() {
        let lex = BilingualLexicon::demo();
        lex.validate(&SymbolTable::canonical()).unwrap();
        assert_eq!(lex.en_entries["hello"], vec!["h", "@", "l", "ou1"]);
        assert_eq!(lex.zh_syllables.len(), 423);
    }

    #[test]
    fn bad_phone_is_reported() {
        let lex = BilingualLexicon::parse("bad\tq1 x\n", "").unwrap();
        let err = lex.validate(&SymbolTable::canonical()).unwrap_err().to_string();
        assert!(err.contains("bad"), "{err}");
    }

    #[test]
    fn digit_split() {
        assert_eq!(split_digit("ou1"), ("ou", Some("1")));
        assert_eq!(split_digit("@"), ("@", None));
        assert_eq!(split_digit("@@1"), ("@@", Some("1")));
    }
}
