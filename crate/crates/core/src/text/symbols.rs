use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAUSE: &str = "<pau>";
pub const EOS: &str = "<eos>";

const EN_PHONES: &str = include_str!("../../data/en_phones.txt");
const ZH_UNITS: &str = include_str!("../../data/zh_units.txt");

pub const EN_PHONE_COUNT: usize = 44;
pub const ZH_UNIT_COUNT: usize = 62;
pub const EN_STRESSES: [&str; 3] = ["0", "1", "2"];
pub const ZH_TONES: [&str; 5] = ["1", "2", "3", "4", "5"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lang {
    En,
    Zh,
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Lang::En => "en",
            Lang::Zh => "zh",
        })
    }
}

/// Role of one entry of a phoneme sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenTag {
    En,
    Zh,
    Pause,
    Eos,
}

/// The shipped phone inventories with their classes.
#[derive(Clone, Debug)]
pub struct Inventory {
    pub en_consonants: BTreeSet<String>,
    pub en_vowels: BTreeSet<String>,
    pub zh_initials: BTreeSet<String>,
    pub zh_finals: BTreeSet<String>,
}

fn parse_classes(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('\t'))
        .map(|(s, c)| (s.trim().to_string(), c.trim().to_string()))
        .collect()
}

impl Inventory {
    pub fn shipped() -> Self {
        let mut inv = Inventory {
            en_consonants: BTreeSet::new(),
            en_vowels: BTreeSet::new(),
            zh_initials: BTreeSet::new(),
            zh_finals: BTreeSet::new(),
        };
        for (s, class) in parse_classes(EN_PHONES) {
            match class.as_str() {
                "vowel" => inv.en_vowels.insert(s),
                _ => inv.en_consonants.insert(s),
            };
        }
        for (s, class) in parse_classes(ZH_UNITS) {
            match class.as_str() {
                "final" => inv.zh_finals.insert(s),
                _ => inv.zh_initials.insert(s),
            };
        }
        inv
    }

    pub fn en_phones(&self) -> Vec<String> {
        self.en_consonants.iter().chain(&self.en_vowels).cloned().collect()
    }

    pub fn zh_units(&self) -> Vec<String> {
        self.zh_initials.iter().chain(&self.zh_finals).cloned().collect()
    }
}

/// Combined English + Mandarin symbol set with dense ids.
///
/// Symbols are namespaced by language (`en:ou1`, `zh:ao3`) because the two
/// inventories share spellings. Ids: pause, end-of-utterance, English
/// consonants and vowel/stress variants, Mandarin initials and final/tone
/// variants, each group in sorted order.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolTable {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

pub fn en_symbol(phone: &str) -> String {
    format!("en:{phone}")
}

pub fn zh_symbol(unit: &str) -> String {
    format!("zh:{unit}")
}

fn check_set(what: &str, given: &[String], expected: &BTreeSet<String>, count: usize) -> Result<BTreeSet<String>> {
    let set: BTreeSet<String> = given.iter().cloned().collect();
    let missing: Vec<_> = expected.difference(&set).cloned().collect();
    let extra: Vec<_> = set.difference(expected).cloned().collect();
    let dupes = given.len() - set.len();
    if given.len() != count || !missing.is_empty() || !extra.is_empty() || dupes > 0 {
        return Err(Error::Validation(format!(
            "{what}: {} symbols supplied, expected {count}; missing {missing:?}; extra {extra:?}; duplicates {dupes}",
            given.len()
        )));
    }
    Ok(set)
}

impl SymbolTable {
    pub fn build(en_phones: &[String], zh_units: &[String]) -> Result<Self> {
        let inv = Inventory::shipped();
        let expected_en: BTreeSet<String> = inv.en_phones().into_iter().collect();
        let expected_zh: BTreeSet<String> = inv.zh_units().into_iter().collect();
        let en = check_set("English phonemes", en_phones, &expected_en, EN_PHONE_COUNT)?;
        let zh = check_set("pinyin initials/finals", zh_units, &expected_zh, ZH_UNIT_COUNT)?;

        let mut symbols = vec![PAUSE.to_string(), EOS.to_string()];
        for p in en.iter().filter(|p| inv.en_consonants.contains(*p)) {
            symbols.push(en_symbol(p));
        }
        for v in en.iter().filter(|p| inv.en_vowels.contains(*p)) {
            symbols.push(en_symbol(v));
            symbols.extend(EN_STRESSES.iter().map(|s| en_symbol(&format!("{v}{s}"))));
        }
        for i in zh.iter().filter(|p| inv.zh_initials.contains(*p)) {
            symbols.push(zh_symbol(i));
        }
        for f in zh.iter().filter(|p| inv.zh_finals.contains(*p)) {
            symbols.extend(ZH_TONES.iter().map(|t| zh_symbol(&format!("{f}{t}"))));
        }
        Ok(Self::from_symbols(symbols))
    }

    /// The table built from the shipped inventories.
    pub fn canonical() -> Self {
        let inv = Inventory::shipped();
        Self::build(&inv.en_phones(), &inv.zh_units()).expect("shipped inventories are valid")
    }

    fn from_symbols(symbols: Vec<String>) -> Self {
        let index = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { symbols, index }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn pause_id(&self) -> usize {
        self.index[PAUSE]
    }

    pub fn eos_id(&self) -> usize {
        self.index[EOS]
    }

    /// One JSON object per line: `{"id":N,"symbol":"..."}`.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            id: usize,
            symbol: &'a str,
        }
        let mut out = String::new();
        for (id, symbol) in self.symbols.iter().enumerate() {
            out.push_str(&serde_json::to_string(&Row { id, symbol }).expect("plain row"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            id: usize,
            symbol: String,
        }
        let mut symbols = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let row: Row = serde_json::from_str(line)?;
            if row.id != symbols.len() {
                return Err(Error::Validation(format!("symbol ids must be dense from 0; got {} at position {}", row.id, symbols.len())));
            }
            symbols.push(row.symbol);
        }
        let table = Self::from_symbols(symbols);
        if table.index.len() != table.symbols.len() {
            return Err(Error::Validation("duplicate symbols in table".into()));
        }
        if table.id(PAUSE).is_none() || table.id(EOS).is_none() {
            return Err(Error::Validation("table lacks pause or end-of-utterance symbol".into()));
        }
        Ok(table)
    }

    /// SHA-256 of the JSON-lines export; checkpoints record it.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    #[test]
    fn shipped_inventory_sizes() {
        let inv = Inventory::shipped();
        assert_eq!(inv.en_consonants.len() + inv.en_vowels.len(), 44);
        assert_eq!(inv.zh_initials.len(), 21);
        assert_eq!(inv.zh_finals.len(), 41);
    }

    #[test]
    fn canonical_table_layout() {
        let t = SymbolTable::canonical();
        assert_eq!(t.id(PAUSE), Some(0));
        assert_eq!(t.id(EOS), Some(1));
        // 2 specials + 24 consonants + 20 vowels x 4 + 21 initials + 41 finals x 5
        assert_eq!(t.len(), 2 + 24 + 80 + 21 + 205);
        assert!(t.id("en:ou1").is_some() && t.id("en:ou").is_some());
        assert!(t.id("en:p1").is_none());
        assert!(t.id("zh:ao3").is_some() && t.id("zh:ao").is_none());
    }

    #[test]
    fn permutation_does_not_change_ids() {
        let inv = Inventory::shipped();
        let mut en = inv.en_phones();
        let mut zh = inv.zh_units();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        en.shuffle(&mut rng);
        zh.shuffle(&mut rng);
        assert_eq!(SymbolTable::build(&en, &zh).unwrap(), SymbolTable::canonical());
    }

    #[test]
    fn wrong_counts_name_the_problem() {
        let inv = Inventory::shipped();
        let mut en = inv.en_phones();
        let dropped = en.remove(5);
        let err = SymbolTable::build(&en, &inv.zh_units()).unwrap_err().to_string();
        assert!(err.contains("43 symbols"), "{err}");
        assert!(err.contains(&dropped), "{err}");

        let mut zh = inv.zh_units();
        zh.push("zz".into());
        let err = SymbolTable::build(&inv.en_phones(), &zh).unwrap_err().to_string();
        assert!(err.contains("zz"), "{err}");
    }

    #[test]
    fn jsonl_round_trip() {
        let t = SymbolTable::canonical();
        let back = SymbolTable::from_jsonl(&t.to_jsonl()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.hash(), t.hash());
    }
}
