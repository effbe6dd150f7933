//! Yes/No verification prompt for the refinement judge.

use crate::model::{Document, Mention};

pub const DEFAULT_CONTEXT_WORDS: usize = 400;

pub const INSTRUCTION: &str = "I will give you an excerpt from a book with a highlighted mention of a character with []. You will need to answer if the assigned character is correct (Yes), or not (No).";

/// Fill the template for one mention. The excerpt holds up to
/// `context_words / 2` tokens on each side of the mention (the extra token
/// of an odd budget goes after it), clamped to the document, with the
/// mention itself wrapped in brackets.
pub fn build_prompt(doc: &Document, mention: Mention, character: &str, context_words: usize) -> String {
    let before = context_words / 2;
    let after = context_words - before;
    let lo = mention.start.saturating_sub(before);
    let hi = (mention.end + 1 + after).min(doc.len());
    let surface = doc.tokens[mention.start..=mention.end].join(" ");

    let mut excerpt: Vec<&str> = Vec::with_capacity(hi - lo + 1);
    excerpt.extend(doc.tokens[lo..mention.start].iter().map(String::as_str));
    let highlighted = format!("[{surface}]");
    excerpt.push(&highlighted);
    excerpt.extend(doc.tokens[mention.end + 1..hi].iter().map(String::as_str));

    format!(
        "{INSTRUCTION}\n\nBook excerpt: {}\n\nDoes the mention [{surface}] correspond to the character {character}? (Yes/No)",
        excerpt.join(" ")
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(n: usize) -> Document {
        Document::new("d", (0..n).map(|i| format!("w{i}")).collect(), vec!["Darcy".into()])
    }

    #[test]
    fn template_text() {
        let p = build_prompt(&doc(10), Mention::new(3, 4), "Darcy", 400);
        assert!(p.contains("You will need to answer if the assigned character is correct (Yes), or not (No)."));
        assert!(p.ends_with("Does the mention [w3 w4] correspond to the character Darcy? (Yes/No)"));
        assert!(p.contains("Book excerpt: w0 w1 w2 [w3 w4] w5 w6 w7 w8 w9\n"));
    }

    #[test]
    fn context_is_clamped_and_windowed() {
        let d = doc(1000);
        let p = build_prompt(&d, Mention::new(0, 0), "Darcy", 400);
        assert!(p.contains("Book excerpt: [w0] w1 "));
        assert!(p.contains(" w200\n"));
        assert!(!p.contains("w201"));

        let p = build_prompt(&d, Mention::new(500, 501), "Darcy", 400);
        assert!(p.contains("Book excerpt: w300 w301"));
        assert!(!p.contains("w299 "));
        assert!(p.contains("w701\n"));
        assert!(!p.contains("w702"));
    }

    #[test]
    fn identical_surroundings_give_identical_prompts() {
        let d = Document::new(
            "d",
            "a b X c d a b X c d".split(' ').map(String::from).collect(),
            vec![],
        );
        assert_eq!(
            build_prompt(&d, Mention::new(2, 2), "X", 4),
            build_prompt(&d, Mention::new(7, 7), "X", 4)
        );
    }
}
