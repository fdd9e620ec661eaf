use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::lexicon::BilingualLexicon;
use super::symbols::{en_symbol, zh_symbol, SymbolTable, TokenTag, EOS, PAUSE};
use crate::error::{Error, Result};

/// Symbol ids for one utterance, always ending in a single end-of-utterance id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeSequence {
    pub ids: Vec<usize>,
    pub text_ref: String,
    pub tags: Vec<TokenTag>,
}

impl PhonemeSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn symbols<'a>(&self, table: &'a SymbolTable) -> Vec<&'a str> {
        self.ids.iter().filter_map(|&i| table.symbol(i)).collect()
    }
}

/// Maps symbol strings back to ids.
pub fn symbols_to_ids(symbols: &[&str], table: &SymbolTable) -> Result<Vec<usize>> {
    symbols
        .iter()
        .map(|s| table.id(s).ok_or_else(|| Error::Lookup(format!("symbol {s:?} not in table"))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Piece<'a> {
    Word(&'a str),
    Pause(&'a str),
    Stop(&'a str),
}

fn scanner() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}'@]+|[,;:，；：、]|[.!?。！？]").expect("regex"))
}

pub(crate) fn scan(text: &str) -> Vec<Piece<'_>> {
    scanner()
        .find_iter(text)
        .map(|m| match m.as_str() {
            p @ ("," | ";" | ":" | "，" | "；" | "：" | "、") => Piece::Pause(p),
            p @ ("." | "!" | "?" | "。" | "！" | "？") => Piece::Stop(p),
            w => Piece::Word(w),
        })
        .collect()
}

fn pinyin_token() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([a-zü]+)([1-5])$").expect("regex"))
}

/// True for tone-numbered pinyin such as `hao3`.
pub fn is_pinyin_token(word: &str) -> bool {
    pinyin_token().is_match(&word.to_lowercase())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    English,
    Mandarin,
    Mixed,
}

struct Builder<'t> {
    table: &'t SymbolTable,
    ids: Vec<usize>,
    tags: Vec<TokenTag>,
    pending_pause: bool,
}

impl<'t> Builder<'t> {
    fn push(&mut self, symbol: &str, tag: TokenTag) -> Result<()> {
        if self.pending_pause {
            self.pending_pause = false;
            self.ids.push(self.table.pause_id());
            self.tags.push(TokenTag::Pause);
        }
        let id = self
            .table
            .id(symbol)
            .ok_or_else(|| Error::Lookup(format!("symbol {symbol:?} not in table")))?;
        self.ids.push(id);
        self.tags.push(tag);
        Ok(())
    }
}

fn mandarin_word(word: &str, lexicon: &BilingualLexicon, b: &mut Builder) -> Result<()> {
    let lower = word.to_lowercase();
    let caps = pinyin_token()
        .captures(&lower)
        .ok_or_else(|| Error::Lookup(format!("unknown pinyin syllable {word:?}")))?;
    let base = caps[1].replace('ü', "v");
    let tone = &caps[2];
    let split = lexicon
        .zh_syllables
        .get(&base)
        .ok_or_else(|| Error::Lookup(format!("unknown pinyin syllable {word:?}")))?;
    if let Some(i) = &split.initial {
        b.push(&zh_symbol(i), TokenTag::Zh)?;
    }
    b.push(&zh_symbol(&format!("{}{tone}", split.final_)), TokenTag::Zh)
}

fn english_word(word: &str, lexicon: &BilingualLexicon, b: &mut Builder) -> Result<()> {
    let phones = lexicon
        .en_entries
        .get(&word.to_lowercase())
        .ok_or_else(|| Error::Lookup(format!("word {word:?} is not in the lexicon")))?;
    for p in phones {
        b.push(&en_symbol(p), TokenTag::En)?;
    }
    Ok(())
}

fn tokenize(text: &str, lexicon: &BilingualLexicon, table: &SymbolTable, mode: Mode) -> Result<PhonemeSequence> {
    let mut b = Builder {
        table,
        ids: Vec::new(),
        tags: Vec::new(),
        pending_pause: false,
    };
    for piece in scan(text) {
        match piece {
            // pauses between words only; leading and trailing ones are dropped
            Piece::Pause(_) => b.pending_pause = !b.ids.is_empty(),
            Piece::Stop(_) => b.pending_pause = false,
            Piece::Word(w) => match mode {
                Mode::English => english_word(w, lexicon, &mut b)?,
                Mode::Mandarin => mandarin_word(w, lexicon, &mut b)?,
                Mode::Mixed if is_pinyin_token(w) => mandarin_word(w, lexicon, &mut b)?,
                Mode::Mixed => english_word(w, lexicon, &mut b)?,
            },
        }
    }
    b.ids.push(table.id(EOS).expect("table has EOS"));
    b.tags.push(TokenTag::Eos);
    debug_assert!(table.id(PAUSE).is_some());
    Ok(PhonemeSequence {
        ids: b.ids,
        text_ref: text.to_string(),
        tags: b.tags,
    })
}

/// Whitespace-separated tone-numbered pinyin (tone 5 = neutral).
pub fn tokenize_mandarin(text: &str, lexicon: &BilingualLexicon, table: &SymbolTable) -> Result<PhonemeSequence> {
    tokenize(text, lexicon, table, Mode::Mandarin)
}

/// Lexicon-driven English; out-of-vocabulary words are errors.
pub fn tokenize_english(text: &str, lexicon: &BilingualLexicon, table: &SymbolTable) -> Result<PhonemeSequence> {
    tokenize(text, lexicon, table, Mode::English)
}

/// Dispatches each word by script: tone-numbered pinyin goes to the Mandarin
/// tokenizer, everything else to the English one.
pub fn tokenize_mixed(text: &str, lexicon: &BilingualLexicon, table: &SymbolTable) -> Result<PhonemeSequence> {
    tokenize(text, lexicon, table, Mode::Mixed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (BilingualLexicon, SymbolTable) {
        (BilingualLexicon::demo(), SymbolTable::canonical())
    }

    fn syms(seq: &PhonemeSequence, t: &SymbolTable) -> Vec<String> {
        seq.symbols(t).into_iter().map(str::to_string).collect()
    }

    #[test]
    fn mandarin_examples() {
        let (lex, t) = setup();
        assert_eq!(syms(&tokenize_mandarin("hao3", &lex, &t).unwrap(), &t), ["zh:h", "zh:ao3", EOS]);
        assert_eq!(syms(&tokenize_mandarin("an1", &lex, &t).unwrap(), &t), ["zh:an1", EOS]);
        assert_eq!(syms(&tokenize_mandarin("", &lex, &t).unwrap(), &t), [EOS]);
        assert_eq!(syms(&tokenize_mandarin("lü4", &lex, &t).unwrap(), &t), ["zh:l", "zh:v4"]
            .into_iter().chain([EOS]).collect::<Vec<_>>());
        let err = tokenize_mandarin("hax3", &lex, &t).unwrap_err().to_string();
        assert!(err.contains("hax3"), "{err}");
        assert!(tokenize_mandarin("hao", &lex, &t).is_err());
    }

    #[test]
    fn english_examples() {
        let (lex, t) = setup();
        let s = tokenize_english("Hello", &lex, &t).unwrap();
        assert_eq!(syms(&s, &t), ["en:h", "en:@", "en:l", "en:ou1", EOS]);
        let s = tokenize_english("hello, world.", &lex, &t).unwrap();
        assert_eq!(s.tags.iter().filter(|&&g| g == TokenTag::Pause).count(), 1);
        assert_eq!(s.ids[4], t.pause_id());
        let err = tokenize_english("hello zebra", &lex, &t).unwrap_err().to_string();
        assert!(err.contains("zebra"), "{err}");
    }

    #[test]
    fn mixed_is_concatenation() {
        let (lex, t) = setup();
        let mixed = tokenize_mixed("wo3 like apple", &lex, &t).unwrap();
        let zh = tokenize_mandarin("wo3", &lex, &t).unwrap();
        let en = tokenize_english("like apple", &lex, &t).unwrap();
        let mut want = zh.ids[..zh.len() - 1].to_vec();
        want.extend(&en.ids);
        assert_eq!(mixed.ids, want);
        assert_eq!(mixed.ids.iter().filter(|&&i| i == t.eos_id()).count(), 1);
    }

    #[test]
    fn monolingual_mixed_equals_monolingual() {
        let (lex, t) = setup();
        for s in ["i like green tea, and music", "hello world!"] {
            assert_eq!(tokenize_mixed(s, &lex, &t).unwrap(), tokenize_english(s, &lex, &t).unwrap());
        }
        for s in ["wo3 xi3 huan1, pin2 guo3", "ni3 hao3"] {
            assert_eq!(tokenize_mixed(s, &lex, &t).unwrap(), tokenize_mandarin(s, &lex, &t).unwrap());
        }
    }

    #[test]
    fn detokenize_round_trip_over_lexicon() {
        let (lex, t) = setup();
        for word in lex.en_entries.keys() {
            let s = tokenize_english(word, &lex, &t).unwrap();
            assert_eq!(symbols_to_ids(&s.symbols(&t), &t).unwrap(), s.ids);
        }
        for syl in lex.zh_syllables.keys() {
            for tone in 1..=5 {
                let s = tokenize_mandarin(&format!("{syl}{tone}"), &lex, &t).unwrap();
                assert_eq!(symbols_to_ids(&s.symbols(&t), &t).unwrap(), s.ids);
            }
        }
    }
}
