//! Canonical tokenizer and prompt identity hash.

use std::hash::Hasher;

use fnv::FnvHasher;
use unicode_normalization::UnicodeNormalization;

/// Lowercases, NFC-normalizes and splits on runs of non-alphanumeric
/// characters. Numerals are kept as tokens.
pub fn canonicalize_text(raw: &str) -> Vec<String> {
    let normalized: String = raw.nfc().collect::<String>().to_lowercase();
    normalized
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Lowercased, whitespace-collapsed form used for prompt identity.
pub fn canonical_prompt(text: &str) -> String {
    text.nfc()
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// 64-bit FNV-1a of the canonical prompt text, as 16 lowercase hex digits.
pub fn prompt_hash(text: &str) -> String {
    let mut hasher = FnvHasher::default();
    hasher.write(canonical_prompt(text).as_bytes());
    format!("{:016x}", hasher.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_has_no_tokens() {
        assert!(canonicalize_text("").is_empty());
        assert!(canonicalize_text("  — !! ").is_empty());
    }

    #[test]
    fn urgency_phrase_tokens() {
        assert_eq!(
            canonicalize_text("Only 1 left — Act NOW!"),
            vec!["only", "1", "left", "act", "now"]
        );
    }

    #[test]
    fn confirmshaming_phrase_has_seven_tokens() {
        let tokens = canonicalize_text("No thanks, I prefer to remain uninformed");
        assert_eq!(tokens, ["no", "thanks", "i", "prefer", "to", "remain", "uninformed"]);
    }

    #[test]
    fn nfc_composes_accents() {
        // "e" + combining acute vs precomposed "é"
        assert_eq!(canonicalize_text("Cafe\u{301}"), canonicalize_text("Café"));
    }

    #[test]
    fn fnv_reference_vectors() {
        // Published FNV-1a 64 test vectors.
        let mut h = FnvHasher::default();
        h.write(b"");
        assert_eq!(h.finish(), 0xcbf29ce484222325);
        let mut h = FnvHasher::default();
        h.write(b"a");
        assert_eq!(h.finish(), 0xaf63dc4c8601ec8c);
        assert_eq!(prompt_hash("A"), "af63dc4c8601ec8c");
    }

    #[test]
    fn prompt_hash_ignores_case_and_spacing() {
        assert_eq!(prompt_hash("Upgrade  to\nPremium"), prompt_hash("upgrade to premium"));
        assert_ne!(prompt_hash("upgrade to premium"), prompt_hash("upgrade to pro"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn canonical_join_is_a_fixed_point(s in "\\PC{0,60}") {
            let tokens = canonicalize_text(&s);
            prop_assert_eq!(canonicalize_text(&tokens.join(" ")), tokens);
        }
    }
}
