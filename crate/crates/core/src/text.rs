//! Text normalization, tokenization and stable hashing.

use alloc::string::String;
use alloc::vec::Vec;
use core::hash::Hasher;

use siphasher::sip::SipHasher13;
use unicode_normalization::UnicodeNormalization;

fn normalize_once(s: &str) -> String {
    if s.is_ascii() {
        // NFKC is the identity on ASCII
        return collapse(&s.to_ascii_lowercase());
    }
    let folded: String = s.nfkc().collect::<String>().to_lowercase().nfkc().collect();
    collapse(&folded)
}

fn collapse(folded: &str) -> String {
    let mut out = String::with_capacity(folded.len());
    let mut pending_space = false;
    for ch in folded.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        } else if ch.is_whitespace() {
            pending_space = true;
        } else if !is_joiner(ch) {
            // other punctuation separates words
            pending_space = true;
        }
    }
    out
}

fn is_joiner(ch: char) -> bool {
    matches!(ch, '\'' | '\u{2019}' | '\u{00B7}')
}

/// Case-folded, NFKC-normalized text with punctuation removed and
/// whitespace collapsed to single spaces. Idempotent.
pub fn normalize_text(s: &str) -> String {
    let mut cur = normalize_once(s);
    if cur.is_ascii() {
        return cur;
    }
    // Case mapping can produce sequences NFKC rewrites again; iterate to a
    // fixed point (converges in one or two rounds on real input).
    for _ in 0..8 {
        let next = normalize_once(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

/// Normalized tokens of `s`.
pub fn tokens(s: &str) -> Vec<String> {
    normalize_text(s).split(' ').filter(|t| !t.is_empty()).map(String::from).collect()
}

/// Whitespace-separated word count of the raw text.
pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Keyed 64-bit hash that is stable across platforms and releases.
pub fn stable_hash(seed: u64, parts: &[&str]) -> u64 {
    let mut h = SipHasher13::new_with_keys(seed, 0x7761_7966_6172_6572);
    for p in parts {
        h.write(p.as_bytes());
        h.write_u8(0xff);
    }
    h.finish()
}

/// `true` when `needle` occurs in `haystack` on token boundaries. Both are
/// expected to be normalized already.
pub fn contains_phrase(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let left_ok = start == 0 || haystack.as_bytes()[start - 1] == b' ';
        let right_ok = end == haystack.len() || haystack.as_bytes()[end] == b' ';
        if left_ok && right_ok {
            return true;
        }
        from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}
