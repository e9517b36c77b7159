/// Number of maximal runs of non-whitespace characters.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn is_sentence_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '\n')
}

/// Number of sentences, where `.`, `!`, `?` and newlines end a sentence.
///
/// A run of terminators closes one sentence, and a segment without any word
/// (only whitespace between terminators) does not count.
pub fn count_sentences(text: &str) -> usize {
    text.split(is_sentence_terminator)
        .filter(|segment| segment.chars().any(|c| !c.is_whitespace()))
        .count()
}
