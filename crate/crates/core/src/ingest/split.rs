//! Passage splitting with overlap and sentence-boundary snapping.
//!
//! Offsets are in characters (Unicode scalar values), not bytes.

use super::Passage;

/// Positions where a new sentence (or paragraph) starts.
fn sentence_starts(chars: &[char]) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut i = 1;
    while i < chars.len() {
        if !chars[i].is_whitespace() && chars[i - 1].is_whitespace() {
            let mut j = i - 1;
            let mut newlines = 0;
            while j > 0 && chars[j].is_whitespace() {
                if chars[j] == '\n' {
                    newlines += 1;
                }
                j -= 1;
            }
            if chars[j] == '\n' {
                newlines += 1;
            }
            let closes = matches!(chars[j], '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}');
            let terminal = |c: char| matches!(c, '.' | '!' | '?');
            let ends_sentence = terminal(chars[j]) || (closes && j > 0 && terminal(chars[j - 1]));
            if ends_sentence || newlines >= 2 {
                starts.push(i);
            }
        }
        i += 1;
    }
    starts
}

fn word_starts(chars: &[char]) -> Vec<usize> {
    (1..chars.len())
        .filter(|&i| !chars[i].is_whitespace() && chars[i - 1].is_whitespace())
        .collect()
}

fn first_in(sorted: &[usize], lo: usize, hi: usize) -> Option<usize> {
    let at = sorted.partition_point(|&b| b < lo);
    sorted.get(at).copied().filter(|&b| b <= hi)
}

fn last_in(sorted: &[usize], lo_exclusive: usize, hi: usize) -> Option<usize> {
    let at = sorted.partition_point(|&b| b <= hi);
    at.checked_sub(1).map(|i| sorted[i]).filter(|&b| b > lo_exclusive)
}

/// Splits `text` into overlapping body passages.
///
/// Each cut is pushed forward from `target_len` to the next sentence start
/// (at most `target_len / 2` characters later; then a word start; then a hard
/// cut). The next passage begins at the last sentence start at or before
/// `end - overlap`, so neighbours share at least `overlap` characters.
///
/// # Panics
///
/// If `target_len <= overlap`.
pub fn split_passages(text: &str, target_len: usize, overlap: usize) -> Vec<Passage> {
    assert!(target_len > overlap, "target_len ({target_len}) must exceed overlap ({overlap})");
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    if n == 0 {
        return Vec::new();
    }
    let sentences = sentence_starts(&chars);
    let words = word_starts(&chars);
    let slack = target_len / 2;

    let mut spans = Vec::new();
    let mut start = 0;
    loop {
        if n - start <= target_len {
            spans.push((start, n));
            break;
        }
        let lo = start + target_len;
        let hi = (lo + slack).min(n);
        let end = first_in(&sentences, lo, hi)
            .or_else(|| first_in(&words, lo, hi))
            .or((hi == n).then_some(n))
            .unwrap_or(lo);
        spans.push((start, end));
        if end == n {
            break;
        }
        let limit = end - overlap;
        start = last_in(&sentences, start, limit)
            .or_else(|| last_in(&words, start, limit))
            .unwrap_or(limit);
    }

    spans
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| Passage::body(i, chars[s..e].iter().collect(), s, e))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Span;
    use proptest::prelude::*;

    fn spans(ps: &[Passage]) -> Vec<(usize, usize)> {
        ps.iter()
            .map(|p| match p.span {
                Span::Range(s, e) => (s, e),
                Span::Synthetic => panic!("body passage without span"),
            })
            .collect()
    }

    #[test]
    fn empty_text_gives_no_passages() {
        assert!(split_passages("", 1000, 100).is_empty());
    }

    #[test]
    fn short_text_is_one_passage() {
        let text = "x".repeat(600);
        let ps = split_passages(&text, 1000, 100);
        assert_eq!(spans(&ps), [(0, 600)]);
        assert_eq!(ps[0].text, text);
    }

    /// Sentences of exactly 50 characters: 48 letters, a period, a space.
    #[test]
    fn fifty_char_sentences_split_on_boundaries() {
        let sentence = format!("{}. ", "s".repeat(48));
        assert_eq!(sentence.chars().count(), 50);
        let text = sentence.repeat(50);
        assert_eq!(text.chars().count(), 2500);
        let ps = split_passages(&text, 1000, 100);
        // cut at 1000 (a sentence start), restart at 900, cut at 1900,
        // restart at 1800, remainder fits.
        assert_eq!(spans(&ps), [(0, 1000), (900, 1900), (1800, 2500)]);
    }

    #[test]
    fn long_run_without_whitespace_is_hard_cut() {
        let text = "y".repeat(2500);
        let s = spans(&split_passages(&text, 1000, 100));
        assert_eq!(s, [(0, 1000), (900, 1900), (1800, 2500)]);
    }

    #[test]
    fn multibyte_text_uses_char_offsets() {
        let text = "é".repeat(40);
        let ps = split_passages(&text, 20, 5);
        assert_eq!(spans(&ps), [(0, 20), (15, 40)]);
        assert_eq!(ps[1].text.chars().count(), 25);
        assert_eq!(ps[1].text.len(), 50);
    }

    #[test]
    fn paragraph_breaks_count_as_boundaries() {
        let chars: Vec<char> = "heading\n\nbody text".chars().collect();
        assert_eq!(sentence_starts(&chars), [9]);
        let chars: Vec<char> = "wrapped\nline".chars().collect();
        assert!(sentence_starts(&chars).is_empty());
    }

    proptest! {
        #[test]
        fn spans_cover_overlap_and_stay_bounded(
            words in prop::collection::vec("[a-z]{1,12}[.!?]?", 0..400),
            target in 20usize..300,
            overlap_frac in 0.0f64..0.9,
        ) {
            let text = words.join(" ");
            let overlap = ((target as f64) * overlap_frac) as usize;
            let ps = split_passages(&text, target, overlap);
            let n = text.chars().count();
            if n == 0 {
                prop_assert!(ps.is_empty());
                return Ok(());
            }
            let s = spans(&ps);
            prop_assert_eq!(s[0].0, 0);
            prop_assert_eq!(s[s.len() - 1].1, n);
            for (i, &(a, b)) in s.iter().enumerate() {
                prop_assert!(a < b && b <= n);
                prop_assert!(b - a <= target + target / 2);
                prop_assert_eq!(ps[i].index, i);
                if i + 1 < s.len() {
                    let (c, _) = s[i + 1];
                    prop_assert!(c > a, "progress");
                    prop_assert!(b - c >= overlap, "overlap {} < {}", b - c, overlap);
                }
            }
        }
    }
}
