//! Token normalization shared by questions, answers, index keys and KB literals.
//!
//! Everything that is compared token-by-token goes through [`tokenize`], so a
//! literal such as `390K` and the answer fragment `390K.` meet as `390k`.

/// Placeholder token used in decomposed question patterns.
pub const ENTITY_PLACEHOLDER: &str = "$e";

/// Possessive clitic, split off into its own token.
pub const POSSESSIVE: &str = "'s";

/// Lowercases, splits on whitespace, strips leading/trailing ASCII punctuation
/// and splits a trailing possessive `'s` into a separate token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let lowered = raw.to_lowercase();
        let trimmed = lowered.trim_matches(|c: char| c.is_ascii_punctuation() && c != '$');
        let trimmed = trimmed.trim_end_matches(|c: char| c.is_ascii_punctuation());
        if trimmed.is_empty() {
            continue;
        }
        match trimmed.strip_suffix(POSSESSIVE) {
            Some(stem) if !stem.is_empty() => {
                out.push(stem.to_string());
                out.push(POSSESSIVE.to_string());
            }
            _ => out.push(trimmed.to_string()),
        }
    }
    out
}

/// Normalized key form of a surface string: tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Inverse of [`tokenize`] up to case and punctuation: joins tokens with
/// spaces, re-attaching possessive clitics to the preceding token.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, tok) in tokens.iter().enumerate() {
        let tok = tok.as_ref();
        if i > 0 && tok != POSSESSIVE {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}
