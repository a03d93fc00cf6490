use alloc::string::String;
use alloc::vec::Vec;

/// Lowercase, strip punctuation, split on whitespace.
///
/// Characters that are neither alphanumeric nor whitespace are dropped, so
/// `"Good-morning!"` becomes `["goodmorning"]` while `"good morning"` gives
/// two tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|word| {
            let mut t = String::with_capacity(word.len());
            for ch in word.chars().filter(|c| c.is_alphanumeric()) {
                t.extend(ch.to_lowercase());
            }
            (!t.is_empty()).then_some(t)
        })
        .collect()
}

/// Tokens joined by single spaces; the key form used by intent tables.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_punctuation_and_case() {
        assert_eq!(tokenize("  Good Morning!! "), ["good", "morning"]);
        assert_eq!(tokenize("\"Bye-bye\""), ["byebye"]);
        assert!(tokenize("?!").is_empty());
    }
}
