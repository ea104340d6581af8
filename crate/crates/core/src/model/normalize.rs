//! Token normalization shared by ingestion, rewriting and claim grouping.

/// Lowercase, trim, collapse internal whitespace to `_`, and drop every
/// character outside `[a-z0-9_|.%-]`.
pub fn normalize(raw: &str) -> String {
    let lowered = raw.trim().to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_ws = false;
    for ch in lowered.chars() {
        if ch.is_whitespace() {
            pending_ws = true;
            continue;
        }
        if pending_ws {
            out.push('_');
            pending_ws = false;
        }
        if ch.is_ascii_lowercase()
            || ch.is_ascii_digit()
            || matches!(ch, '_' | '|' | '.' | '%' | '-')
        {
            out.push(ch);
        }
    }
    out
}

/// Normalizes a single triple slot. The pipe is reserved as the slot
/// separator, so it is folded into `_` here.
pub fn normalize_token(raw: &str) -> String {
    normalize(raw).replace('|', "_")
}

/// Joins three already-normalized slots into the `a|b|c` key form.
pub fn triple_key(actor: &str, relation: &str, observation: &str) -> String {
    format!("{actor}|{relation}|{observation}")
}

/// Splits a triple key back into its slots. Returns `None` when the key
/// does not have exactly three slots.
pub fn split_triple(key: &str) -> Option<(&str, &str, &str)> {
    let mut parts = key.splitn(3, '|');
    let a = parts.next()?;
    let b = parts.next()?;
    let c = parts.next()?;
    if c.contains('|') {
        return None;
    }
    Some((a, b, c))
}
