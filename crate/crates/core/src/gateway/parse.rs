use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no allowed label found in response")]
    NoMatch,
    #[error("response names several labels: {0:?}")]
    Ambiguous(Vec<String>),
    #[error("no labels to choose from")]
    NoLabels,
}

/// Extracts one of `allowed` from free model text.
///
/// An `ANSWER: <label>` line wins. Otherwise the text must contain standalone
/// occurrences of exactly one distinct label. Single uppercase-letter labels
/// ("A", "B") match case-sensitively so the article "a" is not read as a vote;
/// every other label matches case-insensitively.
pub fn parse_choice(raw: &str, allowed: &[impl AsRef<str>]) -> Result<String, ParseError> {
    if allowed.is_empty() {
        return Err(ParseError::NoLabels);
    }
    if let Some(label) = marker_choice(raw, allowed) {
        return Ok(label);
    }
    let found: BTreeSet<usize> = allowed
        .iter()
        .enumerate()
        .filter(|(_, l)| find_standalone(raw, l.as_ref()).is_some())
        .map(|(i, _)| i)
        .collect();
    match found.len() {
        0 => Err(ParseError::NoMatch),
        1 => Ok(allowed[*found.iter().next().unwrap()].as_ref().to_string()),
        _ => Err(ParseError::Ambiguous(
            found.into_iter().map(|i| allowed[i].as_ref().to_string()).collect(),
        )),
    }
}

fn marker_choice(raw: &str, allowed: &[impl AsRef<str>]) -> Option<String> {
    for line in raw.lines() {
        let Some(rest) = strip_marker(line, "ANSWER") else {
            continue;
        };
        let rest = rest.trim_start_matches(|c: char| c == '*' || c == '`' || c.is_whitespace());
        let hit = allowed
            .iter()
            .map(AsRef::as_ref)
            .filter(|l| starts_with_label(rest, l))
            .max_by_key(|l| l.len());
        if let Some(label) = hit {
            return Some(label.to_string());
        }
    }
    None
}

/// Returns the text after `KEY:` when `line` is a marker line (case-insensitive key,
/// tolerating markdown emphasis around it).
pub(crate) fn strip_marker<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let trimmed = line.trim_start_matches(|c: char| c == '*' || c == '`' || c == '#' || c.is_whitespace());
    if trimmed.len() < key.len() || !trimmed.is_char_boundary(key.len()) {
        return None;
    }
    let (head, tail) = trimmed.split_at(key.len());
    if !head.eq_ignore_ascii_case(key) {
        return None;
    }
    let tail = tail.trim_start_matches(['*', '`']).trim_start();
    tail.strip_prefix(':')
}

fn case_sensitive(label: &str) -> bool {
    let mut chars = label.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if c.is_ascii_uppercase())
}

fn starts_with_label(text: &str, label: &str) -> bool {
    let Some(head) = text.get(..label.len()) else {
        return false;
    };
    let same = if case_sensitive(label) { head == label } else { head.eq_ignore_ascii_case(label) };
    same && !text[label.len()..].chars().next().is_some_and(char::is_alphanumeric)
}

/// Byte offset of the first occurrence of `label` bounded by non-alphanumerics.
pub(crate) fn find_standalone(text: &str, label: &str) -> Option<usize> {
    if label.is_empty() {
        return None;
    }
    let (hay, needle) = if case_sensitive(label) {
        (text.to_string(), label.to_string())
    } else {
        (text.to_lowercase(), label.to_lowercase())
    };
    // Lowercasing can change byte lengths for non-ASCII text; fall back to the
    // raw text in that case so offsets stay meaningful.
    let (hay, needle) = if hay.len() == text.len() { (hay, needle) } else { (text.to_string(), label.to_string()) };
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before_ok = !hay[..start].chars().next_back().is_some_and(char::is_alphanumeric);
        let after_ok = !hay[end..].chars().next().is_some_and(char::is_alphanumeric);
        if before_ok && after_ok {
            return Some(start);
        }
        from = start + needle.chars().next().map_or(1, char::len_utf8);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const AB: [&str; 2] = ["A", "B"];

    #[test]
    fn marker_line_wins() {
        assert_eq!(parse_choice("ANSWER: B - because respect matters", &AB).unwrap(), "B");
        assert_eq!(parse_choice("I like A.\nANSWER: B", &AB).unwrap(), "B");
        assert_eq!(parse_choice("**Answer:** A", &AB).unwrap(), "A");
    }

    #[test]
    fn standalone_token() {
        assert_eq!(parse_choice("I would pick A", &AB).unwrap(), "A");
        assert_eq!(parse_choice("Option (B) fits me.", &AB).unwrap(), "B");
    }

    #[test]
    fn tie_is_failure() {
        assert_eq!(
            parse_choice("A or B, hard to say", &AB),
            Err(ParseError::Ambiguous(vec!["A".into(), "B".into()]))
        );
        assert_eq!(parse_choice("nothing useful", &AB), Err(ParseError::NoMatch));
    }

    #[test]
    fn letter_labels_ignore_articles() {
        assert_eq!(parse_choice("That is a tough one, but B.", &AB).unwrap(), "B");
        assert_eq!(parse_choice("About A-type people", &AB).unwrap(), "A");
    }

    #[test]
    fn word_labels_are_case_insensitive_and_bounded() {
        let labels = ["end", "continue"];
        assert_eq!(parse_choice("Let's END here.", &labels).unwrap(), "end");
        assert_eq!(parse_choice("I'd like to continue talking", &labels).unwrap(), "continue");
        assert_eq!(parse_choice("We are ending? no, I will continue", &labels).unwrap(), "continue");
        let yn = ["yes", "no"];
        assert_eq!(parse_choice("I know nothing", &yn), Err(ParseError::NoMatch));
        assert_eq!(parse_choice("Yes, definitely.", &yn).unwrap(), "yes");
    }

    #[test]
    fn numeric_labels() {
        let labels = ["1", "2", "3", "4", "5"];
        assert_eq!(parse_choice("ANSWER: 4 I mostly agree", &labels).unwrap(), "4");
        assert_eq!(parse_choice("I'd say 2.", &labels).unwrap(), "2");
        assert_eq!(parse_choice("ANSWER: 12", &labels), Err(ParseError::NoMatch));
    }

    #[test]
    fn empty_labels() {
        let none: [&str; 0] = [];
        assert_eq!(parse_choice("A", &none), Err(ParseError::NoLabels));
    }
}
