//! Small text helpers shared by the parser, the trigger detector and the
//! answer extractor.

/// Articles dropped when normalizing story lines and answers.
const ARTICLES: [&str; 3] = ["the", "a", "an"];

/// Word characters for trigger matching and name lookup. Hyphens join words
/// so that hyphenated forms never match a bare lexicon entry.
pub fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

/// Lowercases, trims, collapses inner whitespace and drops articles.
pub fn normalize_phrase(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .filter(|w| !ARTICLES.contains(&w.as_str()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Agent names are title-cased ("alice" -> "Alice").
pub fn title_case(s: &str) -> String {
    let lower = s.to_lowercase();
    let mut chars = lower.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Token estimate used when a provider exposes no tokenizer: one token per
/// four UTF-8 bytes, rounded up. Matches the usual BPE average for English.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

/// Returns the last `n` characters of `s` (all of it if shorter).
pub fn tail_chars(s: &str, n: usize) -> &str {
    match s.char_indices().rev().nth(n.saturating_sub(1)) {
        Some((idx, _)) if n > 0 => &s[idx..],
        _ if n == 0 => "",
        _ => s,
    }
}

/// Byte offsets of every whole-word, case-insensitive occurrence of `phrase`
/// in `haystack`. Multi-word phrases match with single spaces between words.
pub fn find_whole_word(haystack: &str, phrase: &str) -> Vec<(usize, usize)> {
    let needle = phrase.to_lowercase();
    if needle.is_empty() {
        return Vec::new();
    }
    let lower = haystack.to_lowercase();
    // Lowercasing can change byte lengths for some scripts; fall back to a
    // char-by-char comparison in that case.
    if lower.len() != haystack.len() {
        return find_whole_word_slow(haystack, &needle);
    }
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = lower[from..].find(&needle) {
        let start = from + pos;
        let end = start + needle.len();
        let left_ok = haystack[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !is_word_char(c));
        let right_ok = haystack[end..]
            .chars()
            .next()
            .is_none_or(|c| !is_word_char(c));
        if left_ok && right_ok {
            out.push((start, end));
        }
        from = start + lower[start..].chars().next().map_or(1, char::len_utf8);
    }
    out
}

fn find_whole_word_slow(haystack: &str, needle: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let n_chars = needle.chars().count();
    let idx: Vec<(usize, char)> = haystack.char_indices().collect();
    for i in 0..idx.len() {
        if i + n_chars > idx.len() {
            break;
        }
        let end = idx.get(i + n_chars).map_or(haystack.len(), |(b, _)| *b);
        let cand = &haystack[idx[i].0..end];
        if cand.to_lowercase() != needle {
            continue;
        }
        let left_ok = i == 0 || !is_word_char(idx[i - 1].1);
        let right_ok = idx.get(i + n_chars).is_none_or(|(_, c)| !is_word_char(*c));
        if left_ok && right_ok {
            out.push((idx[i].0, end));
        }
    }
    out
}
