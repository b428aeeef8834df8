use std::sync::OnceLock;

use regex::Regex;

use crate::corpus::Ideology;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParsedLabel {
    Label(Ideology),
    /// No label word found.
    Empty,
    /// Two or more distinct labels mentioned.
    Ambiguous,
}

fn label_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(liberal|neutral|conservative)\b").unwrap())
}

/// Extracts a single ideology from a model response.
///
/// Matching is case-insensitive on whole words. If the response contains an
/// `Answer:` marker, only the text after the last marker is searched.
pub fn parse_label(text: &str) -> ParsedLabel {
    let lower = text.to_ascii_lowercase();
    let tail = match lower.rfind("answer:") {
        Some(pos) => &text[pos + "answer:".len()..],
        None => text,
    };
    let mut found: Option<Ideology> = None;
    for m in label_regex().find_iter(tail) {
        let label: Ideology = m.as_str().parse().expect("regex only matches label words");
        match found {
            None => found = Some(label),
            Some(prev) if prev != label => return ParsedLabel::Ambiguous,
            Some(_) => {}
        }
    }
    found.map_or(ParsedLabel::Empty, ParsedLabel::Label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(parse_label("Conservative"), ParsedLabel::Label(Ideology::Conservative));
        assert_eq!(parse_label("NEUTRAL"), ParsedLabel::Label(Ideology::Neutral));
        assert_eq!(parse_label("I think this is liberal."), ParsedLabel::Label(Ideology::Liberal));
        assert_eq!(parse_label("Could be liberal or conservative"), ParsedLabel::Ambiguous);
        assert_eq!(parse_label("liberal... no wait, conservative"), ParsedLabel::Ambiguous);
        assert_eq!(parse_label(""), ParsedLabel::Empty);
        assert_eq!(parse_label("I cannot tell."), ParsedLabel::Empty);
        assert_eq!(parse_label("neoliberalism"), ParsedLabel::Empty);
        assert_eq!(parse_label("Liberal. Definitely liberal."), ParsedLabel::Label(Ideology::Liberal));
    }

    #[test]
    fn answer_marker_scopes_search() {
        assert_eq!(parse_label("Answer: conservative"), ParsedLabel::Label(Ideology::Conservative));
        let cot = "The title mentions liberal policies but the outlet is neutral.\nAnswer: Conservative";
        assert_eq!(parse_label(cot), ParsedLabel::Label(Ideology::Conservative));
        assert_eq!(parse_label("answer: liberal\nANSWER: neutral"), ParsedLabel::Label(Ideology::Neutral));
    }

    proptest! {
        #[test]
        fn canonical_responses_always_parse(i in 0usize..3, upper in any::<bool>(), pad in "[ \\n]{0,3}") {
            let label = Ideology::from_index(i).unwrap();
            let word = if upper { label.to_string().to_uppercase() } else { label.as_word().to_string() };
            let resp = format!("{pad}{word}{pad}");
            prop_assert_eq!(parse_label(&resp), ParsedLabel::Label(label));
            prop_assert_eq!(parse_label(&format!("Answer: {word}")), ParsedLabel::Label(label));
        }
    }
}
