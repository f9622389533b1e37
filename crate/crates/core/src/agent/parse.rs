//! Strict parsers for agent responses. Each returns `None` when the
//! response is unusable, which the caller turns into a retry.

const QUOTES: &[char] = &['"', '\'', '`', '“', '”', '‘', '’'];

/// Comma-separated keywords, trimmed, empties dropped, first `limit` kept.
pub fn parse_keywords(text: &str, limit: usize) -> Option<Vec<String>> {
    let keywords: Vec<String> = text
        .split([',', '\n'])
        .map(|k| {
            k.trim()
                .trim_start_matches(['-', '*', '•'])
                .trim()
                .trim_matches(QUOTES)
                .trim_end_matches('.')
                .trim()
                .to_string()
        })
        .filter(|k| !k.is_empty())
        .take(limit)
        .collect();
    (!keywords.is_empty()).then_some(keywords)
}

/// First line of the form `title: <text>` (prefix matched case-insensitively).
pub fn parse_title(text: &str) -> Option<String> {
    text.lines().find_map(|line| {
        let line = line.trim().trim_start_matches(QUOTES).trim_start_matches("**");
        let head = line.get(..6)?;
        if !head.eq_ignore_ascii_case("title:") {
            return None;
        }
        let title = line[6..].trim().trim_end_matches(QUOTES).trim_end_matches("**").trim();
        (!title.is_empty()).then(|| title.to_string())
    })
}

/// Index of the option the arbiter echoed back, if it matches one verbatim
/// after trimming.
pub fn parse_choice(text: &str, options: &[&str]) -> Option<usize> {
    let answer = text.trim();
    let titled = parse_title(answer);
    let candidates = [
        answer,
        answer.trim_matches(QUOTES).trim(),
        titled.as_deref().unwrap_or(""),
    ];
    candidates
        .iter()
        .filter(|c| !c.is_empty())
        .find_map(|c| options.iter().position(|o| o.trim() == *c))
}
