/// Lowercases, turns every non-alphanumeric character into a separator and
/// collapses separators into single spaces. Digits are kept.
///
/// Abbreviations such as `frm` or `in2` pass through untouched; no stemming
/// or spelling correction happens here.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for ch in lowered.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        } else {
            pending_space = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sample_question() {
        assert_eq!(
            normalize("Where does HIV come frm?"),
            "where does hiv come frm"
        );
    }

    #[test]
    fn empty_and_padding() {
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("  A!!B  "), "a b");
        assert_eq!(normalize("?!  ..."), "");
    }

    #[test]
    fn digits_and_abbreviations_survive() {
        assert_eq!(
            normalize("Can an STI result in2 HIV if not treatd on time?"),
            "can an sti result in2 hiv if not treatd on time"
        );
        assert_eq!(normalize("call 0977-123"), "call 0977 123");
    }

    #[test]
    fn underscores_are_separators() {
        assert_eq!(normalize("hiv_test"), "hiv test");
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC{0,60}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once);
        }

        #[test]
        fn no_edge_or_double_spaces(s in "[ a-zA-Z0-9!?.,\t\n]{0,80}") {
            let n = normalize(&s);
            prop_assert!(!n.starts_with(' ') && !n.ends_with(' '));
            prop_assert!(!n.contains("  "));
        }
    }
}
