/// Splits text into lowercase alphabetic tokens.
///
/// Every character that is not alphabetic (digits, punctuation, symbols,
/// underscores) acts as whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphabetic() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_punctuation_and_digits() {
        assert_eq!(tokenize("Hello, world! 42"), vec!["hello", "world"]);
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  123 ,.; ").is_empty());
    }

    #[test]
    fn separators_inside_words() {
        assert_eq!(tokenize("a-b_c"), vec!["a", "b", "c"]);
        assert_eq!(tokenize("don't"), vec!["don", "t"]);
    }

    #[test]
    fn unicode_letters_survive() {
        assert_eq!(tokenize("Café Über"), vec!["café", "über"]);
    }
}
