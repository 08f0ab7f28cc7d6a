//! Answer normalization shared by the lexical entailment backend and the
//! token-level F1 scorer.

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercases, strips punctuation, drops the articles `a`, `an`, `the`, and
/// collapses whitespace.
pub fn normalize_answer(s: &str) -> String {
    normalized_tokens(s).join(" ")
}

pub fn normalized_tokens(s: &str) -> Vec<String> {
    let lowered: String = s
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| !c.is_ascii_punctuation() && !is_unicode_punct(*c))
        .collect();
    lowered
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
        .map(str::to_owned)
        .collect()
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2013}' | '\u{2014}' | '\u{2026}'
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_articles_and_punctuation() {
        assert_eq!(normalize_answer("The  Eiffel Tower!"), "eiffel tower");
        assert_eq!(normalize_answer("Paris."), "paris");
        assert_eq!(normalize_answer("It's Paris"), "its paris");
        assert_eq!(normalize_answer("a an the"), "");
        assert_eq!(normalize_answer("theater"), "theater");
    }
}
