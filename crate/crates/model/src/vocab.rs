//! Toy vocabulary. Ids 0..=4 are reserved for the point-cloud special tokens and
//! padding; words follow.

use ptk_core::Token;

pub const PC_START: u32 = 0;
pub const PC_END: u32 = 1;
pub const LAYER_SEP: u32 = 2;
pub const ROW_SEP: u32 = 3;
pub const PAD: u32 = 4;
pub const RESERVED: usize = 5;

pub const WORDS: &[&str] = &[
    "<eos>", "what", "shape", "describe", "where", "a", "is", // prompt words
    "sphere", "cube", "cylinder", "cone", "torus", "plane", "line", "bracket", // classes
    "red", "green", "blue", "yellow", // colors
    "horizontal", "vertical", "depth", "distance", // relation families
    "left", "right", "above", "below", "front", "behind", "nearer", "farther", // relations
];

/// Vocabulary id of a word, panicking on unknown words (the word list is fixed).
pub fn id(word: &str) -> u32 {
    let pos = WORDS
        .iter()
        .position(|w| *w == word)
        .unwrap_or_else(|| panic!("'{word}' is not in the toy vocabulary"));
    (RESERVED + pos) as u32
}

pub fn word(id: u32) -> Option<&'static str> {
    match id {
        PC_START => Some("<pointcloud>"),
        PC_END => Some("</pointcloud>"),
        LAYER_SEP => Some("<layer_sep>"),
        ROW_SEP => Some("<row_sep>"),
        PAD => Some("<pad>"),
        _ => WORDS.get(id as usize - RESERVED).copied(),
    }
}

pub fn text(word: &str) -> Token {
    Token::Text(id(word))
}

/// Embedding-table row for a non-patch token.
pub fn token_id(token: &Token) -> Option<u32> {
    match token {
        Token::PcStart => Some(PC_START),
        Token::PcEnd => Some(PC_END),
        Token::LayerSep => Some(LAYER_SEP),
        Token::RowSep => Some(ROW_SEP),
        Token::Text(id) => Some(*id),
        Token::Patch(_) => None,
    }
}

/// Smallest vocabulary that holds every word.
pub fn min_vocab() -> usize {
    RESERVED + WORDS.len()
}
