//! Bilingual phoneme frontend: the combined English/Mandarin symbol table,
//! lexicon-driven tokenizers and code-switched text generation.

pub mod codeswitch;
pub mod lexicon;
pub mod symbols;
pub mod tokenize;

pub use codeswitch::{generate_code_switched, CodeSwitchReport};
pub use lexicon::BilingualLexicon;
pub use symbols::{Lang, SymbolTable, TokenTag};
pub use tokenize::{tokenize_english, tokenize_mandarin, tokenize_mixed, PhonemeSequence};
