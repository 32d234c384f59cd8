//! Rule-based sentence splitting.
//!
//! A sentence ends at `.`, `?` or `!` when the terminator is followed by
//! whitespace and an uppercase letter, or by end of text. A short
//! abbreviation stoplist suppresses false boundaries after titles and
//! common Latin abbreviations.

const ABBREVIATIONS: [&str; 5] = ["mr.", "dr.", "u.s.", "e.g.", "i.e."];

/// Split `text` into trimmed sentence strings, in order. Text with no
/// terminal punctuation comes back as a single sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    for (ci, &(bi, ch)) in chars.iter().enumerate() {
        if ch != '.' && ch != '?' && ch != '!' {
            continue;
        }
        let end = bi + ch.len_utf8();
        if ch == '.' && ends_with_abbreviation(&text[start..end]) {
            continue;
        }
        if boundary_follows(&chars[ci + 1..]) {
            let s = text[start..end].trim();
            if !s.is_empty() {
                sentences.push(s.to_string());
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

/// True at end of text, or when whitespace then an uppercase letter follows.
fn boundary_follows(rest: &[(usize, char)]) -> bool {
    let mut seen_ws = false;
    for &(_, ch) in rest {
        if ch.is_whitespace() {
            seen_ws = true;
        } else {
            return seen_ws && ch.is_uppercase();
        }
    }
    true
}

fn ends_with_abbreviation(prefix: &str) -> bool {
    let last_word = prefix
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or(prefix)
        .to_lowercase();
    ABBREVIATIONS.iter().any(|a| last_word == *a)
}
