//! Tokenization shared by the n-gram metrics and the heuristic scorers.
//!
//! Text is lowercased and split on whitespace; every character that is neither
//! alphanumeric nor whitespace becomes a token of its own. The scheme is fixed so
//! that metric values are reproducible across runs and machines.

/// Lowercase, punctuation-split, whitespace-delimited tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            flush(&mut current, &mut tokens);
            tokens.push(ch.to_lowercase().collect());
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(std::mem::take(current));
    }
}

/// Collapse whitespace runs to a single space and trim both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Number of whitespace-delimited tokens.
pub fn whitespace_len(text: &str) -> usize {
    text.split_whitespace().count()
}

/// All contiguous n-grams of `tokens`, in order, as owned vectors joined by a space.
pub fn ngrams(tokens: &[String], n: usize) -> Vec<String> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).map(|w| w.join(" ")).collect()
}

/// True if the token is made of alphanumeric characters only.
pub fn is_word(token: &str) -> bool {
    !token.is_empty() && token.chars().all(char::is_alphanumeric)
}
